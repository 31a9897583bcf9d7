"""Compressive nearest-neighbor benchmarks, embedding metrics and reports.

Every random choice in a run descends from one master seed: the split uses
``derive_seed(master, "split", 0)`` and the map for dimension ``m`` uses
``derive_seed(master, "map", m)``, so all strategies at a given ``m`` share
a map and results do not depend on thread scheduling.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._rng import check_seed, derive_seed
from .data import (
    LabeledSet,
    ManifoldKind,
    ManifoldSpec,
    concat,
    distance_to_manifold,
    gen_manifold,
    read_csv_matrix,
    read_idx,
    stratified_split,
)
from .embedder import FittedEmbedder, Strategy, embed_point, fit
from .jl import EmbeddingMap, apply, gen_gaussian_map, unit_secants
from .solver import SolverOptions
from .theory import embed_dim_width, mc_gaussian_width

CURVE_COLUMNS = ("strategy", "m", "accuracy", "mean_nonlinearity", "maxdist", "mindist",
                 "mean_embed_seconds")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """Everything a classification run needs.

    ``dataset`` is one of ``{"kind": "idx", "images": ..., "labels": ...}``,
    ``{"kind": "csv", "path": ..., "has_labels": true}`` or
    ``{"kind": "manifolds", "specs": [...], "n_points": [...]}``.
    ``split`` holds ``per_class_train`` and ``per_class_test``.
    """

    dataset: dict
    split: dict = field(default_factory=lambda: {"per_class_train": 100, "per_class_test": 20})
    strategies: list = field(default_factory=lambda: [s.value for s in Strategy])
    m_values: list = field(default_factory=lambda: [8, 16, 24, 32])
    epsilon: float = 0.1
    solver: SolverOptions = field(default_factory=SolverOptions)
    seed: int = 0
    out_dir: str | None = None
    threads: int = 1
    record_timing: bool = True
    metrics: dict = field(default_factory=lambda: {"nonlinearity": True, "distortion": True})

    def __post_init__(self):
        if isinstance(self.solver, dict):
            try:
                self.solver = SolverOptions.from_dict(self.solver)
            except (TypeError, ValueError) as err:
                raise ConfigError(str(err)) from None
        try:
            self.strategies = [Strategy(s).value for s in self.strategies]
        except ValueError as err:
            raise ConfigError(str(err)) from None
        try:
            self.seed = check_seed(self.seed)
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from None
        if not isinstance(self.dataset, dict) or "kind" not in self.dataset:
            raise ConfigError("dataset must be a mapping with a 'kind' entry")
        if not 0.0 < float(self.epsilon) < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        self.epsilon = float(self.epsilon)
        if not self.m_values or any(int(m) != m or m < 1 for m in self.m_values):
            raise ConfigError(f"m values must be positive integers, got {self.m_values}")
        self.m_values = [int(m) for m in self.m_values]
        if int(self.threads) < 1:
            raise ConfigError(f"threads must be at least 1, got {self.threads}")
        for key in ("per_class_train", "per_class_test"):
            if int(self.split.get(key, -1)) < 0:
                raise ConfigError(f"split.{key} must be a non-negative integer")
        unknown = set(self.metrics) - {"nonlinearity", "distortion"}
        if unknown:
            raise ConfigError(f"unknown metrics: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "dataset" not in d:
            raise ConfigError("config needs a 'dataset' entry")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"{path}: {err}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["solver"] = asdict(self.solver)
        return d


@dataclass
class RunReport:
    config: dict
    seeds: dict
    records: list
    dataset: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "seeds": self.seeds, "dataset": self.dataset,
                "records": self.records}


# -- data plumbing ------------------------------------------------------------

def load_dataset(spec: dict) -> LabeledSet:
    kind = spec.get("kind")
    try:
        if kind == "idx":
            return read_idx(spec["images"], spec["labels"])
        if kind == "csv":
            return read_csv_matrix(spec["path"], bool(spec.get("has_labels", True)))
        if kind == "manifolds":
            specs = [ManifoldSpec(**s) for s in spec["specs"]]
            counts = spec["n_points"]
            if isinstance(counts, int):
                counts = [counts] * len(specs)
            return concat(gen_manifold(s, int(n)) for s, n in zip(specs, counts))
    except KeyError as err:
        raise ConfigError(f"dataset of kind {kind!r} is missing {err}") from None
    except TypeError as err:
        raise ConfigError(f"bad dataset entry: {err}") from None
    raise ConfigError(f"unknown dataset kind {kind!r}")


def map_for(master_seed: int, m: int, N: int) -> EmbeddingMap:
    return gen_gaussian_map(m, N, derive_seed(master_seed, "map", m))


def embed_all(e: FittedEmbedder, points, threads: int = 1, timing: bool = True):
    """Embed each row of ``points``; returns ``(vectors, outcomes, seconds)``.

    Outcomes are collected by index, so the result is independent of
    ``threads``. ``seconds`` holds per-point wall-clock times (NaN when
    ``timing`` is off).
    """
    P = np.asarray(points, dtype=np.float64)

    def one(i):
        t0 = time.perf_counter() if timing else 0.0
        out = embed_point(e, P[i], on_infeasible="best")
        return out, (time.perf_counter() - t0) if timing else math.nan

    if threads > 1 and len(P) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(P))))
    else:
        results = [one(i) for i in range(len(P))]
    outcomes = [r[0] for r in results]
    vectors = np.array([o.vector for o in outcomes]).reshape(len(P), e.dim)
    return vectors, outcomes, np.array([r[1] for r in results])


def _nn_labels(train_images, labels, queries):
    # brute force, ties to the lowest index
    out = np.empty(len(queries), dtype=labels.dtype)
    for i, q in enumerate(queries):
        diff = train_images - q
        out[i] = labels[int(np.argmin(np.einsum("ij,ij->i", diff, diff)))]
    return out


# -- metrics --------------------------------------------------------------------

def nonlinearity_stats(e: FittedEmbedder, test, embedded=None) -> dict:
    """Per-point ``100 ‖f(u) - (Πu, 0)‖ / ‖Πu‖`` and its mean and max.

    Points with ``Πu = 0`` are undefined; they are excluded from the summary
    and counted in ``undefined``.
    """
    if e.strategy is Strategy.IDENTITY:
        raise ValueError("nonlinearity is not defined for the identity strategy")
    U = np.asarray(getattr(test, "points", test), dtype=np.float64)
    F = embedded if embedded is not None else embed_all(e, U, timing=False)[0]
    lin = _linear_images(e, U)
    base = np.linalg.norm(lin, axis=1)
    dev = np.linalg.norm(F - lin, axis=1)
    ok = base > 0
    per = np.full(len(U), math.nan)
    per[ok] = 100.0 * dev[ok] / base[ok]
    valid = per[ok]
    return {
        "mean": float(valid.mean()) if valid.size else math.nan,
        "max": float(valid.max()) if valid.size else math.nan,
        "per_point": per,
        "undefined": int((~ok).sum()),
    }


def _linear_images(e: FittedEmbedder, U) -> np.ndarray:
    return np.hstack([apply(e.map, U), np.zeros((len(U), 1))])


def distortion_extremes(e: FittedEmbedder, train, test, embedded_test=None) -> dict:
    """Extremes of ``‖f(u) - f(x)‖ / ‖u - x‖`` for ``x`` in train, ``u`` in train ∪ test.

    Coincident pairs are skipped. Train images are ``f(x)`` as fitted, test
    images are embedded unless supplied.
    """
    X = np.asarray(getattr(train, "points", train), dtype=np.float64)
    S = np.asarray(getattr(test, "points", test), dtype=np.float64)
    FX = _train_images_for(e, X)
    FS = embedded_test if embedded_test is not None else embed_all(e, S, timing=False)[0]
    U = np.vstack([X, S])
    FU = np.vstack([FX, FS])
    hi, lo = -math.inf, math.inf
    for i in range(len(X)):
        d = np.linalg.norm(U - X[i], axis=1)
        keep = d > 0
        if not keep.any():
            continue
        ratio = np.linalg.norm(FU[keep] - FX[i], axis=1) / d[keep]
        hi = max(hi, float(ratio.max()))
        lo = min(lo, float(ratio.min()))
    if not math.isfinite(hi):
        raise ValueError("no distinct pairs to compare")
    return {"MaxDist": hi, "MinDist": lo}


def _train_images_for(e: FittedEmbedder, X) -> np.ndarray:
    if X.shape == e.train_points.shape and np.array_equal(X, e.train_points):
        return e.train_images()
    return np.array([embed_point(e, x).vector for x in X])


# -- classification -------------------------------------------------------------

def run_classification(cfg: ExperimentConfig, strategy, m: int, train: LabeledSet,
                       test: LabeledSet, emap: EmbeddingMap | None = None) -> dict:
    """Nearest-neighbor accuracy of one strategy at dimension ``m``, plus metrics."""
    strategy = Strategy(strategy)
    N = train.dim
    if strategy is not Strategy.IDENTITY:
        if m >= N:
            raise ConfigError(f"m = {m} is not compressive for N = {N}")
        emap = emap or map_for(cfg.seed, m, N)
    e = fit(strategy, emap if strategy is not Strategy.IDENTITY else None, train,
            cfg.epsilon, cfg.solver)
    F, outcomes, secs = embed_all(e, test.points, cfg.threads, cfg.record_timing)
    pred = _nn_labels(e.train_images(), train.labels, F)
    correct = int((pred == test.labels).sum())
    results = [o.result for o in outcomes if o.result is not None]
    rec = {
        "strategy": strategy.value,
        "m": int(m),
        "accuracy_percent": 100.0 * correct / len(test) if len(test) else math.nan,
        "correct": correct,
        "n_train": len(train),
        "n_test": len(test),
        "mean_embed_seconds": float(secs.mean()) if cfg.record_timing and len(secs) else None,
        "escalated_points": int(sum(r.escalations > 0 for r in results)),
        "total_escalations": int(sum(r.escalations for r in results)),
        "infeasible_points": int(sum(o.infeasible for o in outcomes)),
        "max_feas_residual": float(max((r.feas_residual for r in results), default=0.0)),
        "mean_nonlinearity_percent": None,
        "max_nonlinearity_percent": None,
        "nonlinearity_undefined": None,
        "MaxDist": None,
        "MinDist": None,
    }
    if strategy is not Strategy.IDENTITY and cfg.metrics.get("nonlinearity", True):
        nl = nonlinearity_stats(e, test, F)
        rec.update(mean_nonlinearity_percent=nl["mean"], max_nonlinearity_percent=nl["max"],
                   nonlinearity_undefined=nl["undefined"])
    if cfg.metrics.get("distortion", True):
        rec.update(distortion_extremes(e, train, test, F))
    return rec


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    data = load_dataset(cfg.dataset)
    split_seed = derive_seed(cfg.seed, "split", 0)
    try:
        train, test = stratified_split(data, int(cfg.split["per_class_train"]),
                                       int(cfg.split["per_class_test"]), split_seed)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    N = data.dim
    compressive = [s for s in cfg.strategies if s != Strategy.IDENTITY.value]
    if compressive and max(cfg.m_values) >= N:
        raise ConfigError(f"m values {cfg.m_values} must stay below N = {N}")
    records = []
    identity_rec = None
    for m in cfg.m_values:
        emap = map_for(cfg.seed, m, N) if compressive else None
        for s in cfg.strategies:
            if s == Strategy.IDENTITY.value:
                # the identity ignores m; compute once and repeat per m
                if identity_rec is None:
                    identity_rec = run_classification(cfg, s, m, train, test)
                records.append(dict(identity_rec, m=int(m)))
            else:
                records.append(run_classification(cfg, s, m, train, test, emap))
    seeds = {"master": cfg.seed, "split": split_seed,
             "maps": {str(m): derive_seed(cfg.seed, "map", m) for m in cfg.m_values}}
    info = {"name": data.name, "n": len(data), "N": N, "n_train": len(train),
            "n_test": len(test), "pixel_scaling": data.provenance.get("scaling")}
    return RunReport(cfg.to_dict(), seeds, records, info)


# -- tube experiment --------------------------------------------------------------

@dataclass
class TubeConfig:
    """Two synthetic manifolds, their noisy samples and the query budget.

    ``X`` (the set the terminal map is fitted on) is ``n_anchor`` noiseless
    samples per manifold; ``T`` is ``n_train`` tube samples per manifold and
    the queries are ``n_query`` fresh tube samples per manifold. When ``m``
    is ``None`` it comes from the width rule with constant ``c``.
    """

    manifolds: list = field(default_factory=lambda: [
        {"kind": "circle", "ambient": 200, "radius": 1.0, "noise_delta": 0.1},
        {"kind": "circle", "ambient": 200, "radius": 1.0, "noise_delta": 0.1,
         "center": [10.0] + [0.0] * 199, "label": 1},
    ])
    n_anchor: int = 400
    n_train: int = 100
    n_query: int = 50
    epsilon: float = 0.2
    solver_epsilon: float = 0.02
    m: int | None = None
    c: float = 1.0
    width_trials: int = 2000
    seed: int = 0
    threads: int = 1
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if isinstance(self.solver, dict):
            self.solver = SolverOptions.from_dict(self.solver)
        if len(self.manifolds) != 2:
            raise ConfigError("the tube experiment needs exactly two manifolds")
        if not 0 < self.epsilon < 1 or not 0 < self.solver_epsilon < 1:
            raise ConfigError("epsilon and solver_epsilon must lie in (0, 1)")
        self.seed = check_seed(self.seed)


def _specs(cfg: TubeConfig, role: str, noisy: bool):
    out = []
    for i, raw in enumerate(cfg.manifolds):
        d = dict(raw)
        d.setdefault("label", i)
        d["seed"] = derive_seed(cfg.seed, role, i)
        if not noisy:
            d["noise_delta"] = 0.0
        out.append(ManifoldSpec(**d))
    return out


def tube_estimator_experiment(cfg: TubeConfig) -> dict:
    """Classify tube samples by the compressed distance to each noisy training set.

    Also checks, for every query ``z`` and training sample ``t``,
    ``(1-ε)‖z-t‖ - 2(1-ε)δ <= ‖f(z)-f(t)‖ <= (1+ε)‖z-t‖ + 2(1+ε)δ``.
    """
    try:
        clean = _specs(cfg, "anchor", noisy=False)
        noisy = _specs(cfg, "tube", noisy=True)
        query = _specs(cfg, "query", noisy=True)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None
    for s in clean:
        if s.kind not in (ManifoldKind.CIRCLE, ManifoldKind.SPHERE):
            raise ConfigError(f"no closed-form distance for {s.kind.value}")
    delta = max(s.noise_delta for s in noisy)
    X = concat(gen_manifold(s, cfg.n_anchor) for s in clean)
    T = [gen_manifold(s, cfg.n_train) for s in noisy]
    Z = concat(gen_manifold(s, cfg.n_query) for s in query)
    gap = min(np.min(np.linalg.norm(T[0].points[:, None, :] - b[None, :, :], axis=2))
              for b in [T[1].points])
    if gap <= 2 * delta:
        raise ConfigError(f"tubes overlap: sampled gap {gap:.4g} <= 2δ = {2 * delta:.4g}")

    width = None
    m = cfg.m
    if m is None:
        sec = unit_secants(X.points)
        width = mc_gaussian_width(sec, cfg.width_trials, derive_seed(cfg.seed, "width", 0))
        m = embed_dim_width(width.mean, cfg.epsilon, cfg.c)
    emap = map_for(cfg.seed, m, X.dim)
    e = fit(Strategy.TERMINAL_NONLINEAR, emap, X, cfg.solver_epsilon, cfg.solver)
    FT, out_t, _ = embed_all(e, np.vstack([t.points for t in T]), cfg.threads, timing=False)
    FZ, out_z, _ = embed_all(e, Z.points, cfg.threads, timing=False)
    n1 = len(T[0])
    FT_parts = [FT[:n1], FT[n1:]]

    est = np.column_stack([
        np.min(np.linalg.norm(FZ[:, None, :] - F[None, :, :], axis=2), axis=1) for F in FT_parts
    ])
    true = np.column_stack([distance_to_manifold(s, Z.points) for s in clean])
    pred = np.array([clean[k].label for k in np.argmin(est, axis=1)])
    acc = 100.0 * float(np.mean(pred == Z.labels))

    TP = np.vstack([t.points for t in T])
    orig = np.linalg.norm(Z.points[:, None, :] - TP[None, :, :], axis=2)
    emb = np.linalg.norm(FZ[:, None, :] - FT[None, :, :], axis=2)
    eps = cfg.epsilon
    lower = (1 - eps) * orig - 2 * (1 - eps) * delta
    upper = (1 + eps) * orig + 2 * (1 + eps) * delta
    viol = int(np.sum(emb < lower) + np.sum(emb > upper))
    pos = orig > 0
    ratio = emb[pos] / orig[pos]
    outcomes = out_t + out_z
    return {
        "m": int(m),
        "width_estimate": None if width is None else {"mean": width.mean, "stderr": width.stderr,
                                                     "trials": width.trials},
        "c": cfg.c,
        "epsilon": eps,
        "solver_epsilon": cfg.solver_epsilon,
        "delta": delta,
        "n_anchor": len(X),
        "n_train": int(TP.shape[0]),
        "n_query": len(Z),
        "accuracy_percent": acc,
        "max_abs_distance_error": float(np.max(np.abs(est - true))),
        "pairs_checked": int(orig.size),
        "violations": viol,
        "min_lower_margin": float(np.min(emb - lower)),
        "min_upper_margin": float(np.min(upper - emb)),
        "pair_ratio_max": float(ratio.max()),
        "pair_ratio_min": float(ratio.min()),
        "escalated_points": int(sum(o.result is not None and o.result.escalations > 0
                                    for o in outcomes)),
        "infeasible_points": int(sum(o.infeasible for o in outcomes)),
        "sampled_tube_gap": float(gap),
        "query_labels": Z.labels.tolist(),
        "estimated_distances": est.tolist(),
        "true_distances": true.tolist(),
    }


# -- reports ----------------------------------------------------------------------

def _cell(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def curves_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in report.records:
        w.writerow([_cell(r["strategy"]), _cell(r["m"]), _cell(r["accuracy_percent"]),
                    _cell(r["mean_nonlinearity_percent"]), _cell(r["MaxDist"]),
                    _cell(r["MinDist"]), _cell(r["mean_embed_seconds"])])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def emit_report(report: RunReport, out_dir) -> tuple:
    """Write ``report.json`` and ``curves.csv`` into ``out_dir``; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath = out / "report.json"
    cpath = out / "curves.csv"
    jpath.write_text(json.dumps(_jsonable(report.to_dict()), indent=2, sort_keys=True) + "\n")
    cpath.write_text(curves_csv(report))
    return jpath, cpath
