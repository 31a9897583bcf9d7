"""Gaussian Johnson-Lindenstrauss maps and distortion audits."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import check_seed, generator, standard_normal

MAGIC = b"TEMB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQII")


@dataclass(frozen=True, eq=False)
class EmbeddingMap:
    """An ``m x N`` Gaussian matrix ``entries`` together with its JL scaling.

    The map acts as ``x -> scale * (entries @ x)`` with ``scale = 1/sqrt(m)``.
    ``entries`` is stored read-only so the map can be shared freely.
    """

    entries: np.ndarray
    seed: int = 0
    scale: float = field(default=None)

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64, order="C", copy=True)
        if entries.ndim != 2 or min(entries.shape) < 1:
            raise ValueError(f"entries must be a non-empty 2-D array, got shape {entries.shape}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "seed", check_seed(self.seed))
        if self.scale is None:
            object.__setattr__(self, "scale", 1.0 / np.sqrt(entries.shape[0]))

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        """The scaled matrix ``scale * entries``."""
        return self.scale * self.entries

    def __call__(self, x):
        return apply(self, x)


@dataclass(frozen=True)
class DistortionReport:
    max_ratio: float
    min_ratio: float
    max_sq_distortion: float
    witness: tuple
    count: int


def gen_gaussian_map(m: int, N: int, seed: int) -> EmbeddingMap:
    """Draw an ``m x N`` matrix of i.i.d. standard normals.

    Entries come from the package's fixed Philox/Box-Muller stream (see
    :mod:`termembed._rng`) in row-major order, so ``(m, N, seed)`` determines
    every bit of the result.
    """
    if int(m) < 1 or int(N) < 1:
        raise ValueError(f"map dimensions must be positive, got m={m}, N={N}")
    entries = standard_normal(seed, (int(m), int(N)))
    return EmbeddingMap(entries, seed=seed)


def apply(emap: EmbeddingMap, x) -> np.ndarray:
    """Apply the scaled map to one vector or to each row of a 2-D array.

    Rows of a batch are mapped one at a time with the same kernel as a single
    vector, so ``apply(emap, X)[i]`` is bitwise equal to ``apply(emap, X[i])``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (emap.cols,) or x.ndim > 2:
        raise ValueError(f"expected vectors of length {emap.cols}, got shape {x.shape}")
    if x.ndim == 1:
        return emap.scale * (emap.entries @ x)
    out = np.empty((x.shape[0], emap.rows))
    for i, row in enumerate(x):
        out[i] = emap.scale * (emap.entries @ row)
    return out


def _apply_fast(emap: EmbeddingMap, X: np.ndarray) -> np.ndarray:
    # audits only: batched product, not bitwise tied to apply()
    return emap.scale * (X @ emap.entries.T)


def _mapped_norms(emap: EmbeddingMap, X: np.ndarray, budget: int = 1 << 22) -> np.ndarray:
    # ‖ΠX_i‖ in row blocks so a tall X never materializes a full image
    step = max(1, budget // max(emap.rows, 1))
    return np.concatenate([np.linalg.norm(_apply_fast(emap, X[i:i + step]), axis=1)
                           for i in range(0, X.shape[0], step)] or [np.zeros(0)])


def save_map(emap: EmbeddingMap, path) -> None:
    """Write ``emap`` in the flat little-endian TEMB layout."""
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, emap.seed, emap.rows, emap.cols)
    body = np.ascontiguousarray(emap.entries, dtype="<f8").tobytes()
    Path(path).write_bytes(header + body)


def load_map(path) -> EmbeddingMap:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, seed, m, N = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r} at offset 0")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version} at offset 4")
    expected = _HEADER.size + 8 * m * N
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for a {m}x{N} map, got {len(data)}")
    entries = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(m, N)
    return EmbeddingMap(entries, seed=seed)


def unit_secants(points, dedup_tol: float = 1e-12) -> np.ndarray:
    """Normalized differences ``(x - y)/||x - y||`` over distinct pairs.

    Each unordered pair contributes one secant, sign-normalized so that its
    first coordinate larger than ``dedup_tol`` is positive; secants that agree
    within ``dedup_tol`` per coordinate are merged. The result stacks the
    surviving secants followed by their exact negatives, so it is closed under
    negation. Returns an empty ``(0, N)`` array when all points coincide.
    """
    P = np.asarray(points, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] < 2:
        raise ValueError("unit_secants needs at least two points")
    n, N = P.shape
    i, j = np.triu_indices(n, k=1)
    D = P[j] - P[i]
    norms = np.linalg.norm(D, axis=1)
    keep = norms > 0
    if not keep.any():
        return np.empty((0, N))
    U = D[keep] / norms[keep, None]
    big = np.abs(U) > dedup_tol
    first = np.argmax(big, axis=1)
    signs = np.sign(U[np.arange(len(U)), first])
    U = U * signs[:, None]
    keys = np.round(U / dedup_tol).astype(np.int64)
    _, idx = np.unique(keys, axis=0, return_index=True)
    H = U[np.sort(idx)]
    return np.vstack([H, -H])


def map_distortion(emap: EmbeddingMap, vectors) -> DistortionReport:
    """Norm distortion of ``emap`` on a set of nonzero vectors.

    ``max_sq_distortion`` is ``max |‖Πx‖² - ‖x‖²| / ‖x‖²``; the ratios are the
    extremes of ``‖Πx‖ / ‖x‖``. The witness is the index of the vector that
    attains ``max_sq_distortion``.
    """
    V = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if V.shape[1] != emap.cols:
        raise ValueError(f"expected vectors of length {emap.cols}, got {V.shape[1]}")
    if V.shape[0] == 0:
        raise ValueError("no vectors to audit")
    return _norm_report(np.linalg.norm(V, axis=1), _mapped_norms(emap, V),
                        lambda k: (int(k),))


def _norm_report(norms, mapped_norms, witness_of) -> DistortionReport:
    if np.any(norms == 0):
        raise ValueError(f"zero vector at index {int(np.argmin(norms))}")
    ratios = mapped_norms / norms
    sq = np.abs(ratios**2 - 1.0)
    k = int(np.argmax(sq))
    return DistortionReport(
        max_ratio=float(ratios.max()),
        min_ratio=float(ratios.min()),
        max_sq_distortion=float(sq[k]),
        witness=witness_of(k),
        count=int(len(norms)),
    )


def embedding_distortion(emap: EmbeddingMap, points) -> DistortionReport:
    """Distortion of ``emap`` over all pairwise differences of ``points``.

    Pairs of coincident points are skipped; the witness is the index pair
    ``(i, j)``, ``i < j``. Mapped differences use linearity,
    ``Π(x - y) = Πx - Πy``, so the audit costs one pass over ``n²/2`` pairs
    in the embedded dimension only.
    """
    P = np.asarray(points, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != emap.cols:
        raise ValueError(f"expected an (n, {emap.cols}) point array, got shape {P.shape}")
    Q = _apply_fast(emap, P)
    norms, mapped, pairs = [], [], []
    for i in range(P.shape[0] - 1):
        d = np.linalg.norm(P[i + 1:] - P[i], axis=1)
        e = np.linalg.norm(Q[i + 1:] - Q[i], axis=1)
        nz = np.flatnonzero(d > 0)
        norms.append(d[nz])
        mapped.append(e[nz])
        pairs.append(np.column_stack([np.full(len(nz), i), nz + i + 1]))
    if not norms or sum(len(a) for a in norms) == 0:
        raise ValueError("embedding_distortion needs at least two distinct points")
    pairs = np.vstack(pairs)
    return _norm_report(np.concatenate(norms), np.concatenate(mapped),
                        lambda k: (int(pairs[k, 0]), int(pairs[k, 1])))


def convex_hull_distortion(emap: EmbeddingMap, secants, n_samples: int = 10_000,
                           seed: int = 0) -> float:
    """Sampled estimate of ``sup |‖Πx‖ - ‖x‖|`` over ``conv(S ∪ -S)``.

    The estimate is the larger of the vertex maximum and the maximum over
    ``n_samples`` random convex combinations. Each combination picks a subset
    of ``k`` vertices, ``k`` uniform in ``[2, min(|S ∪ -S|, N + 1)]``, and
    flat Dirichlet weights on it. The result lower-bounds the true supremum.
    """
    S = np.atleast_2d(np.asarray(secants, dtype=np.float64))
    if S.shape[0] == 0:
        raise ValueError("secant set is empty")
    if S.shape[1] != emap.cols:
        raise ValueError(f"expected secants of length {emap.cols}, got {S.shape[1]}")
    norms = np.linalg.norm(S, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-9)
    if bad.size:
        raise ValueError(f"secant {int(bad[0])} has norm {norms[bad[0]]!r}, expected 1")
    V = np.vstack([S, -S])
    best = float(np.max(np.abs(_mapped_norms(emap, V) - 1.0)))
    kmax = min(V.shape[0], emap.cols + 1)
    if n_samples <= 0 or kmax < 2:
        return best
    rng = generator(seed)
    sizes = rng.integers(2, kmax + 1, size=int(n_samples))
    X = np.empty((int(n_samples), emap.cols))
    for t, k in enumerate(sizes):
        subset = rng.choice(V.shape[0], size=int(k), replace=False)
        X[t] = rng.dirichlet(np.ones(k)) @ V[subset]
    gaps = np.abs(_mapped_norms(emap, X) - np.linalg.norm(X, axis=1))
    return max(best, float(gaps.max()))


def inner_product_distortion(emap: EmbeddingMap, points) -> float:
    """``max |<Πx, Πy> - <x, y>| / (‖x‖‖y‖)`` over all pairs, self-pairs included."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if P.shape[1] != emap.cols:
        raise ValueError(f"expected points of length {emap.cols}, got {P.shape[1]}")
    norms = np.linalg.norm(P, axis=1)
    if np.any(norms == 0):
        raise ValueError(f"zero vector at index {int(np.argmin(norms))}")
    Q = _apply_fast(emap, P)
    gap = np.abs(Q @ Q.T - P @ P.T) / np.outer(norms, norms)
    return float(gap.max())


def polarization_set(points) -> np.ndarray:
    """Nonzero members of ``{x/‖x‖ + y/‖y‖, x/‖x‖ - y/‖y‖}`` over pairs of points."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    U = P / np.linalg.norm(P, axis=1)[:, None]
    i, j = np.triu_indices(len(U))
    out = np.vstack([U[i] + U[j], U[i] - U[j]])
    return out[np.linalg.norm(out, axis=1) > 0]


def secant_sums(secants) -> np.ndarray:
    """Nonzero members of ``S + S``."""
    S = np.atleast_2d(np.asarray(secants, dtype=np.float64))
    i, j = np.triu_indices(len(S))
    out = S[i] + S[j]
    return out[np.linalg.norm(out, axis=1) > 1e-12]
