"""Complexity calculators for manifold embeddings and Gaussian width estimation.

The absolute constants ``c`` in the dimension rules are not known; they are
explicit arguments (default 1) and every report carries them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import NormalStream, check_seed


@dataclass(frozen=True)
class TheoryParams:
    """Geometry of a compact ``d``-dimensional submanifold.

    ``tau`` is the reach (the minimum over components), ``vol`` the
    ``d``-dimensional volume and ``vol_boundary`` the volume of the boundary.
    """

    d: int
    tau: float
    vol: float
    vol_boundary: float = 0.0
    epsilon: float = 0.1

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d!r}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau!r}")
        if not self.vol > 0:
            raise ValueError(f"vol must be positive, got {self.vol!r}")
        if not self.vol_boundary >= 0:
            raise ValueError(f"vol_boundary must be non-negative, got {self.vol_boundary!r}")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")


@dataclass(frozen=True)
class WidthEstimate:
    mean: float
    stderr: float
    trials: int
    seed: int


def unit_ball_volume(k: int) -> float:
    """Volume ``π^{k/2} / Γ(k/2 + 1)`` of the unit ball in ``R^k``.

    ``math.gamma`` (a Lanczos approximation in CPython) is accurate to a few
    ulps for these arguments.
    """
    if k < 0:
        raise ValueError(f"dimension must be non-negative, got {k}")
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


def alpha(p: TheoryParams) -> float:
    if p.d == 1:
        return 20.0 * p.vol / p.tau + p.vol_boundary
    d = p.d
    return (p.vol / unit_ball_volume(d)) * (41.0 / p.tau) ** d \
        + (p.vol_boundary / unit_ball_volume(d - 1)) * (81.0 / p.tau) ** (d - 1)


def beta(alpha_value: float, d: int) -> float:
    if alpha_value < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha_value!r}")
    if d < 1:
        raise ValueError(f"d must be positive, got {d!r}")
    return alpha_value * alpha_value + 3.0 ** d * alpha_value


def width_bound(beta_value: float, d: int) -> float:
    """Upper bound ``8√2 √(ln β + 4d)`` on the width of a manifold's unit secants."""
    if not beta_value > 0:
        raise ValueError(f"beta must be positive, got {beta_value!r}")
    inner = math.log(beta_value) + 4 * d
    if inner < 0:
        raise ValueError(f"ln(beta) + 4d = {inner!r} is negative")
    return 8.0 * math.sqrt(2.0) * math.sqrt(inner)


def embed_dim_manifold(p: TheoryParams, c: float = 1.0) -> int:
    """``⌈c (ln β + 4d) / ε²⌉`` for the manifold described by ``p``."""
    if not c > 0:
        raise ValueError(f"c must be positive, got {c!r}")
    b = beta(alpha(p), p.d)
    return math.ceil(c * (math.log(b) + 4 * p.d) / p.epsilon ** 2)


def embed_dim_width(w: float, epsilon: float, c: float = 1.0, p: float = 0.5) -> int:
    """``⌈c ((w + √ln(2/p)) / ε)²⌉``: dimension for a width-``w`` set, failure prob ``p``."""
    if not w >= 0:
        raise ValueError(f"w must be non-negative, got {w!r}")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if not c > 0:
        raise ValueError(f"c must be positive, got {c!r}")
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p!r}")
    return math.ceil(c * ((w + math.sqrt(math.log(2.0 / p))) / epsilon) ** 2)


def mc_gaussian_width(points, trials: int = 10_000, seed: int = 0,
                      batch: int = 4096) -> WidthEstimate:
    """Monte-Carlo estimate of ``E max_x <g, x>`` over the rows of ``points``.

    Gaussian vectors come from the package stream for ``seed``, consumed in
    order, so the estimate does not depend on ``batch``. Points are visited
    in blocks so that no block of inner products exceeds ``2**24`` entries.
    """
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if P.shape[0] == 0 or P.size == 0:
        raise ValueError("mc_gaussian_width needs a nonempty point set")
    if trials < 2:
        raise ValueError(f"need at least 2 trials, got {trials}")
    seed = check_seed(seed)
    stream = NormalStream(seed)
    N = P.shape[1]
    sups = np.empty(trials)
    done = 0
    while done < trials:
        k = min(batch, trials - done)
        G = stream.normals(k * N).reshape(k, N)
        rows = max(1, (1 << 24) // k)
        sups[done:done + k] = np.max([(G @ P[i:i + rows].T).max(axis=1)
                                      for i in range(0, P.shape[0], rows)], axis=0)
        done += k
    return WidthEstimate(
        mean=float(sups.mean()),
        stderr=float(sups.std(ddof=1) / math.sqrt(trials)),
        trials=int(trials),
        seed=seed,
    )
