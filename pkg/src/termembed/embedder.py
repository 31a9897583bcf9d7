"""Identity, linear and terminal embeddings behind one interface."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .jl import EmbeddingMap, apply
from .solver import (
    InfeasibleError,
    Objective,
    ObjectiveKind,
    SolverOptions,
    SolverResult,
    build_constraints,
    lift,
    nearest_index,
    solve,
)

__all__ = [
    "Strategy",
    "FittedEmbedder",
    "EmbedOutcome",
    "fit",
    "embed",
    "embed_point",
    "nearest_index",
    "write_embedded_csv",
]


class Strategy(str, enum.Enum):
    IDENTITY = "identity"
    LINEAR = "linear"
    TERMINAL_INNER_PROD = "terminal_inner_prod"
    TERMINAL_NONLINEAR = "terminal_nonlinear"

    @property
    def is_terminal(self) -> bool:
        return self in (Strategy.TERMINAL_INNER_PROD, Strategy.TERMINAL_NONLINEAR)

    @property
    def objective_kind(self) -> ObjectiveKind:
        if self is Strategy.TERMINAL_INNER_PROD:
            return ObjectiveKind.INNER_PROD
        if self is Strategy.TERMINAL_NONLINEAR:
            return ObjectiveKind.NONLINEAR
        raise ValueError(f"{self.value} has no solver objective")


@dataclass(frozen=True, eq=False)
class FittedEmbedder:
    """A strategy bound to a map and a training set.

    ``mapped_train[i]`` is ``apply(map, train_points[i])``; both arrays are
    read-only. ``map`` is ``None`` for the identity strategy.
    """

    strategy: Strategy
    map: EmbeddingMap | None
    train_points: np.ndarray
    train_labels: np.ndarray
    mapped_train: np.ndarray
    epsilon: float
    solver_opts: SolverOptions
    _lookup: dict = field(repr=False, default_factory=dict)

    @property
    def dim(self) -> int:
        """Dimension of embedded vectors."""
        if self.strategy is Strategy.IDENTITY:
            return self.train_points.shape[1]
        return self.map.rows + 1

    def train_image(self, i: int) -> np.ndarray:
        if self.strategy is Strategy.IDENTITY:
            return self.train_points[i].copy()
        return np.append(self.mapped_train[i], 0.0)

    def train_images(self) -> np.ndarray:
        if self.strategy is Strategy.IDENTITY:
            return self.train_points.copy()
        return np.hstack([self.mapped_train, np.zeros((len(self.mapped_train), 1))])


@dataclass(frozen=True, eq=False)
class EmbedOutcome:
    """An embedded point plus solver diagnostics.

    ``result`` is ``None`` unless the solver ran. ``infeasible`` marks points
    whose constraint set stayed empty; their vector lifts the best iterate.
    """

    vector: np.ndarray
    result: SolverResult | None = None
    infeasible: bool = False


def _points_and_labels(train):
    if hasattr(train, "points"):
        return np.asarray(train.points, dtype=np.float64), np.asarray(train.labels)
    P = np.asarray(train, dtype=np.float64)
    return P, np.zeros(len(P), dtype=np.int64)


def fit(strategy, emap: EmbeddingMap | None, train, epsilon: float = 0.1,
        solver_opts: SolverOptions | None = None) -> FittedEmbedder:
    """Bind ``strategy`` to a training set (a ``LabeledSet`` or an ``(n, N)`` array)."""
    strategy = Strategy(strategy)
    X, labels = _points_and_labels(train)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training set is empty")
    if strategy is Strategy.IDENTITY:
        mapped = np.empty((X.shape[0], 0))
    else:
        if emap is None:
            raise ValueError(f"strategy {strategy.value} needs an embedding map")
        if emap.cols != X.shape[1]:
            raise ValueError(f"map expects {emap.cols} coordinates, training points have {X.shape[1]}")
        mapped = apply(emap, X)
    if strategy.is_terminal and not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    X = X.copy()
    labels = labels.copy()
    for a in (X, labels, mapped):
        a.setflags(write=False)
    lookup = {}
    for i, row in enumerate(X):
        lookup.setdefault(row.tobytes(), i)
    return FittedEmbedder(strategy, emap, X, labels, mapped, float(epsilon),
                          solver_opts or SolverOptions(), lookup)


def embed_point(e: FittedEmbedder, u, on_infeasible: str = "raise") -> EmbedOutcome:
    """Embed ``u`` and keep the solver diagnostics.

    ``on_infeasible="best"`` lifts the solver's best iterate instead of
    raising when the constraint set stays empty.
    """
    if on_infeasible not in ("raise", "best"):
        raise ValueError(f"on_infeasible must be 'raise' or 'best', got {on_infeasible!r}")
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (e.train_points.shape[1],):
        raise ValueError(f"expected a vector of length {e.train_points.shape[1]}, got shape {u.shape}")
    if e.strategy is Strategy.IDENTITY:
        return EmbedOutcome(u.copy())
    hit = e._lookup.get(u.tobytes())
    if hit is not None and np.array_equal(e.train_points[hit], u):
        return EmbedOutcome(e.train_image(hit))
    if e.strategy is Strategy.LINEAR:
        return EmbedOutcome(np.append(apply(e.map, u), 0.0))
    cs = build_constraints(u, e.train_points, e.mapped_train, e.map, e.epsilon)
    obj = Objective.for_system(e.strategy.objective_kind, cs)
    try:
        res = solve(cs, obj, e.solver_opts)
        infeasible = False
    except InfeasibleError as err:
        if on_infeasible == "raise":
            raise
        res, infeasible = err.best, True
    vec = lift(res.z, e.mapped_train[cs.nn_index], cs.radius)
    return EmbedOutcome(vec, res, infeasible)


def embed(e: FittedEmbedder, u) -> np.ndarray:
    """Image of ``u``: ``u`` itself for IDENTITY, a vector in ``R^{m+1}`` otherwise."""
    return embed_point(e, u).vector


def write_embedded_csv(path, vectors, labels) -> None:
    """One row per point: the label, then its coordinates at full precision."""
    V = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    labels = np.asarray(labels)
    if len(labels) != len(V):
        raise ValueError(f"{len(labels)} labels for {len(V)} vectors")
    with open(path, "w", newline="") as fh:
        for lab, row in zip(labels, V):
            fh.write(",".join([str(int(lab))] + [f"{x:.17g}" for x in row]) + "\n")
