"""Terminal embeddings of finite point sets and compressive nearest-neighbor benchmarks."""

from .embedder import FittedEmbedder, Strategy, embed, embed_point, fit, nearest_index
from .jl import (
    EmbeddingMap,
    apply,
    convex_hull_distortion,
    embedding_distortion,
    gen_gaussian_map,
    load_map,
    map_distortion,
    save_map,
    unit_secants,
)
from .solver import (
    ConstraintSystem,
    InfeasibleError,
    Objective,
    ObjectiveKind,
    SolverOptions,
    SolverResult,
    build_constraints,
    lift,
    solve,
)

__version__ = "0.1.0"

__all__ = [
    "ConstraintSystem",
    "EmbeddingMap",
    "FittedEmbedder",
    "InfeasibleError",
    "Objective",
    "ObjectiveKind",
    "SolverOptions",
    "SolverResult",
    "Strategy",
    "apply",
    "build_constraints",
    "convex_hull_distortion",
    "embed",
    "embed_point",
    "embedding_distortion",
    "fit",
    "gen_gaussian_map",
    "lift",
    "load_map",
    "map_distortion",
    "nearest_index",
    "save_map",
    "solve",
    "unit_secants",
]
