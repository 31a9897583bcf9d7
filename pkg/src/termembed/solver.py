"""Ball-and-slab constrained programs behind the terminal extension.

For a query ``u`` with nearest training point ``x_NN`` and ``r = ‖u - x_NN‖``
the feasible set is

    C = { z : ‖z‖ <= r,  |<z, Π(x - x_NN)> - <u - x_NN, x - x_NN>|
                              <= eps * r * ‖x - x_NN‖  for every training x }.

Both objectives are solved through the same primitive. Writing ``P`` for the
Euclidean projection onto the polytope of slabs, the KKT conditions of the
ball show that the minimizer is ``P(t q)`` on the path ``t -> P(t q)``, at the
``t`` where that path leaves the ball: ``q = -Π(u - x_NN)`` with ``t <= 1``
for the quadratic objective, ``q = Π(u - x_NN)`` with ``t`` unbounded for the
linear one.
``P`` itself is computed exactly by a dual active-set method, and the exit
point is located by a safeguarded search that finishes in closed form once
the active set is known.

Dykstra's alternating projections remain available (``method="dykstra"``)
as an independent, slower route to the same projections.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, replace

import numpy as np


class InfeasibleError(RuntimeError):
    """Raised when the constraint set stays empty after every escalation.

    ``best`` is the :class:`SolverResult` with the smallest residual seen;
    its ``z`` lies in the ball and can still be lifted.
    """

    def __init__(self, message: str, best: "SolverResult"):
        super().__init__(message)
        self.best = best


class StructuralInfeasibility(ValueError):
    """A slab with a zero normal whose offset exceeds its half-width."""


class ObjectiveKind(str, enum.Enum):
    NONLINEAR = "nonlinear"
    INNER_PROD = "inner_prod"


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-7
    rel_obj_tol: float = 1e-8
    max_iters: int = 10_000
    dykstra_sweeps: int = 200
    max_escalations: int = 3
    escalation_factor: float = 1.5
    method: str = "active_set"

    def __post_init__(self):
        if self.method not in ("active_set", "dykstra"):
            raise ValueError(f"unknown projection method {self.method!r}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SolverOptions":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    radius: float
    rows: np.ndarray
    targets: np.ndarray
    slacks: np.ndarray
    epsilon: float
    nn_index: int
    row_index: np.ndarray
    row_norms: np.ndarray
    drift: np.ndarray

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    def with_epsilon(self, epsilon: float) -> "ConstraintSystem":
        return replace(self, epsilon=float(epsilon),
                       slacks=float(epsilon) * self.radius * self.row_norms)

    def violations(self, z) -> np.ndarray:
        """Slab violations ``max(|<a, z> - b| - s, 0)`` followed by the ball's."""
        z = np.asarray(z, dtype=np.float64)
        slab = np.maximum(np.abs(self.rows @ z - self.targets) - self.slacks, 0.0)
        ball = max(float(np.linalg.norm(z)) - self.radius, 0.0)
        return np.append(slab, ball)

    def residual(self, z) -> float:
        return float(self.violations(z).max())


@dataclass(frozen=True, eq=False)
class Objective:
    """``NONLINEAR``: ``‖z‖² + 2<drift, z>``;  ``INNER_PROD``: ``<drift, z>``."""

    kind: ObjectiveKind
    drift: np.ndarray

    @classmethod
    def for_system(cls, kind, cs: ConstraintSystem) -> "Objective":
        kind = ObjectiveKind(kind)
        if kind is ObjectiveKind.NONLINEAR:
            return cls(kind, cs.drift)
        return cls(kind, -cs.drift)

    def value(self, z) -> float:
        z = np.asarray(z, dtype=np.float64)
        if self.kind is ObjectiveKind.NONLINEAR:
            return float(z @ z + 2.0 * (self.drift @ z))
        return float(self.drift @ z)


@dataclass(frozen=True, eq=False)
class SolverResult:
    z: np.ndarray
    feas_residual: float
    objective_value: float
    iterations: int
    effective_epsilon: float
    escalations: int
    history: tuple = field(default=())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["z"] = self.z.tolist()
        d["history"] = list(self.history)
        return d


def nearest_index(points, q) -> int:
    """Index of the row of ``points`` closest to ``q``; ties go to the lowest index."""
    P = np.asarray(points, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] == 0:
        raise ValueError("nearest_index needs a non-empty 2-D point array")
    if P.shape[1] != q.shape[-1]:
        raise ValueError(f"dimension mismatch: points have {P.shape[1]} coordinates, query has {q.shape[-1]}")
    d2 = np.einsum("ij,ij->i", P - q, P - q)
    return int(np.argmin(d2))


def build_constraints(u, train, mapped_train, emap, epsilon: float) -> ConstraintSystem:
    """Assemble the feasible set for query ``u`` against a training set."""
    from .jl import apply

    u = np.asarray(u, dtype=np.float64)
    X = np.asarray(train, dtype=np.float64)
    Y = np.asarray(mapped_train, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training set is empty")
    if u.shape != (X.shape[1],):
        raise ValueError(f"query has shape {u.shape}, training points have {X.shape[1]} coordinates")
    if Y.shape != (X.shape[0], emap.rows):
        raise ValueError(f"mapped_train has shape {Y.shape}, expected {(X.shape[0], emap.rows)}")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")

    nn = nearest_index(X, u)
    y = u - X[nn]
    r = float(np.linalg.norm(y))
    V = X - X[nn]
    row_norms = np.linalg.norm(V, axis=1)
    keep = np.flatnonzero(row_norms > 0)
    return ConstraintSystem(
        radius=r,
        rows=Y[keep] - Y[nn],
        targets=V[keep] @ y,
        slacks=epsilon * r * row_norms[keep],
        epsilon=float(epsilon),
        nn_index=nn,
        row_index=keep,
        row_norms=row_norms[keep],
        drift=apply(emap, y),
    )


def project_ball(z, r: float) -> np.ndarray:
    if r < 0:
        raise ValueError(f"radius must be non-negative, got {r}")
    z = np.asarray(z, dtype=np.float64)
    nrm = float(np.linalg.norm(z))
    if nrm <= r:
        return z.copy()
    return z * (r / nrm)


def project_slab(z, a, b: float, s: float) -> np.ndarray:
    """Projection onto ``{z : |<a, z> - b| <= s}``."""
    if s < 0:
        raise ValueError(f"slab half-width must be non-negative, got {s}")
    z = np.asarray(z, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    v = float(a @ z) - b
    if abs(v) <= s:
        return z.copy()
    sq = float(a @ a)
    if sq == 0.0:
        raise StructuralInfeasibility(f"zero slab normal with |b| = {abs(b)} > s = {s}")
    shift = v - s if v > s else v + s
    return z - (shift / sq) * a


def lift(z, mapped_nn, r: float) -> np.ndarray:
    """Terminal point ``(mapped_nn + z, sqrt(r² - ‖z‖²))``."""
    z = np.asarray(z, dtype=np.float64)
    nz = float(np.linalg.norm(z))
    if nz > r * (1.0 + 1e-9):
        raise ValueError(f"‖z‖ = {nz} exceeds the radius {r}")
    tail = np.sqrt(max(r * r - nz * nz, 0.0))
    return np.append(np.asarray(mapped_nn, dtype=np.float64) + z, tail)


# -- projection onto ball ∩ slabs -------------------------------------------

class _EmptyPolytope(Exception):
    pass


def _dual_active_set(q, C, d, tol, max_steps):
    """Goldfarb-Idnani dual active-set method for ``min ½‖z - q‖²`` s.t. ``Cz >= d``.

    Returns ``(z, active, multipliers)``; raises ``_EmptyPolytope`` when the
    constraints are inconsistent.
    """
    z = q.copy()
    active: list = []
    lam = np.zeros(0)
    for _ in range(max_steps):
        s = C @ z - d
        j = int(np.argmin(s))
        if s[j] >= -tol:
            return z, np.array(active, dtype=int), lam
        nj = C[j]
        lam_j = 0.0
        while True:
            if active:
                N = C[active].T
                coef, *_ = np.linalg.lstsq(N, nj, rcond=None)
                # a full-rank active set leaves no primal direction
                dz = nj - N @ coef if len(active) < q.shape[0] else np.zeros_like(nj)
            else:
                coef = np.zeros(0)
                dz = nj
            t1, drop = np.inf, -1
            pos = np.flatnonzero(coef > 1e-12 * max(1.0, float(np.abs(coef).max(initial=0.0))))
            if pos.size:
                ratios = lam[pos] / coef[pos]
                k = int(np.argmin(ratios))
                t1, drop = float(ratios[k]), int(pos[k])
            dzn = float(dz @ dz)
            slack = float(nj @ z - d[j])
            t2 = max(-slack, 0.0) / dzn if dzn > 1e-16 * float(nj @ nj) else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                raise _EmptyPolytope
            lam = lam - t * coef
            lam_j += t
            if np.isfinite(t2):
                z = z + t * dz
            if t2 <= t1:
                active.append(j)
                lam = np.append(lam, lam_j)
                break
            del active[drop]
            lam = np.delete(lam, drop)
    raise RuntimeError("dual active-set method did not terminate")


def _split(cs):
    lo = cs.targets - cs.slacks
    hi = cs.targets + cs.slacks
    C = np.vstack([cs.rows, -cs.rows])
    d = np.concatenate([lo, -hi])
    return C, d, lo, hi


def _on_path(q, t, C, d, r, active, ball_mult_ok, tol):
    """Closed-form point ``z`` with ``‖z‖ = r`` on the path ``t -> P_poly(t q)``.

    Uses the active set of a previous polytope projection; returns
    ``(t, z)`` if the point passes the KKT checks, else ``(t, None)``.
    """
    m = q.shape[0]
    if active.size:
        Na = C[active]
        U, sv, Vt = np.linalg.svd(Na, full_matrices=False)
        keep = sv > sv[0] * 1e-12
        U, sv, Vt = U[:, keep], sv[keep], Vt[keep]
        z_row = Vt.T @ ((U.T @ d[active]) / sv)
        if np.linalg.norm(Na @ z_row - d[active]) > tol:
            return None, None
        q_null = q - Vt.T @ (Vt @ q)
    else:
        z_row = np.zeros(m)
        q_null = q
    rem = r * r - float(z_row @ z_row)
    qn = float(np.linalg.norm(q_null))
    if rem < 0 or qn == 0.0:
        return None, None
    t_star = np.sqrt(rem) / qn
    if not ball_mult_ok(t_star):
        return t_star, None
    z = z_row + t_star * q_null
    if active.size:
        g = z - t_star * q
        lam, *_ = np.linalg.lstsq(Na.T, g, rcond=None)
        if np.linalg.norm(Na.T @ lam - g) > 1e-9 * max(float(np.linalg.norm(t_star * q)), r, 1e-300):
            return t_star, None
        if lam.min() < -1e-9 * max(float(np.abs(lam).max()), 1e-300):
            return t_star, None
    if np.min(C @ z - d) < -tol:
        return t_star, None
    return t_star, z


def _in_cone(q, Na):
    # -q = Na.T @ lam with lam >= 0, up to rounding
    if Na.shape[0] == 0:
        return False
    lam, *_ = np.linalg.lstsq(Na.T, -q, rcond=None)
    scale = float(np.linalg.norm(q))
    return (np.linalg.norm(Na.T @ lam + q) <= 1e-10 * scale
            and lam.min() >= -1e-10 * max(float(np.abs(lam).max()), 1e-300))


def _ball_path(cs, q, t_max, tol, max_steps):
    """Point ``P_poly(t q)`` with the largest ``t <= t_max`` inside the ball.

    Solves ``min ½‖z - q‖²`` (``t_max = 1``) or ``min <-q, z>`` (``t_max``
    infinite) over the ball intersected with the polytope of slabs: by the
    ball's KKT conditions the minimizer is ``P_poly(t* q)`` for the ``t*``
    where the path leaves the ball. Returns ``(z, evaluations)``.
    """
    C, d, _, _ = _split(cs)
    r = cs.radius

    def poly(t):
        return _dual_active_set(t * q, C, d, 0.1 * tol, max_steps)

    if np.isfinite(t_max):
        z, act, _ = poly(t_max)
        evals = 1
        if np.linalg.norm(z) <= r:
            return z, evals
        t_hi = t_max
    else:
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            # every feasible point is optimal; the least-norm one is P_poly(0)
            z = poly(0.0)[0]
            if np.linalg.norm(z) > r * (1.0 + 1e-12):
                raise _EmptyPolytope
            return z, 1
        t_hi = r / qn
        evals = 0
        while True:
            z, act, _ = poly(t_hi)
            evals += 1
            if np.linalg.norm(z) > r:
                break
            if _in_cone(q, C[act]) or t_hi * qn > 1e12 * max(r, 1e-300):
                # the path has reached the LP optimum inside the ball
                return z, evals
            t_hi *= 4.0
    z_lo, act_lo, _ = poly(0.0)
    evals += 1
    if np.linalg.norm(z_lo) > r * (1.0 + 1e-12):
        raise _EmptyPolytope
    t_lo = 0.0
    ball_ok = (lambda t: t <= 1.0 + 1e-12) if np.isfinite(t_max) else (lambda t: t > 0)
    for _ in range(200):
        for active in (act, act_lo):
            t_c, z_c = _on_path(q, t_hi, C, d, r, active, ball_ok, tol)
            if z_c is not None:
                return z_c, evals
        t_next = t_c if t_c is not None and t_lo < t_c < t_hi else 0.5 * (t_lo + t_hi)
        z_n, act_n, _ = poly(t_next)
        evals += 1
        if np.linalg.norm(z_n) > r:
            t_hi, act = t_next, act_n
        else:
            t_lo, act_lo, z_lo = t_next, act_n, z_n
        if t_hi - t_lo <= 1e-15 * t_hi:
            break
    return z_lo, evals


def _polish(p, A, lo, hi, side, ball_active, r, tol):
    """Exact projection of ``p`` when the active set is known, or ``None``.

    ``side[i]`` is +1 / -1 for slabs active at their upper / lower face and 0
    for inactive ones. The candidate is accepted only if it satisfies every
    slab of ``A``, the ball, and has non-negative multipliers.
    """
    act = np.flatnonzero(side)
    m = p.shape[0]
    if act.size:
        Aa = A[act]
        t = np.where(side[act] > 0, hi[act], lo[act])
        U, sv, Vt = np.linalg.svd(Aa, full_matrices=False)
        keep = sv > sv[0] * 1e-12
        U, sv, Vt = U[:, keep], sv[keep], Vt[keep]
        z_row = Vt.T @ ((U.T @ t) / sv)
        if np.linalg.norm(Aa @ z_row - t) > tol:
            return None
        p_null = p - Vt.T @ (Vt @ p)
    else:
        Aa = np.empty((0, m))
        z_row = np.zeros(m)
        p_null = p
    if ball_active:
        rem = r * r - float(z_row @ z_row)
        pn = float(np.linalg.norm(p_null))
        if rem < 0 or pn == 0.0:
            return None
        s = np.sqrt(rem) / pn
        if s > 1.0 + 1e-12:
            return None
        z = z_row + s * p_null
        g = p - z / s
    else:
        z = z_row + p_null
        g = p - z
    if act.size:
        nu, *_ = np.linalg.lstsq(Aa.T, g, rcond=None)
        lam = side[act] * nu * np.linalg.norm(Aa, axis=1)
        if lam.min() < -1e-9 * max(float(np.linalg.norm(g)), 1e-300):
            return None
    v = A @ z
    if np.any(v > hi + tol) or np.any(v < lo - tol):
        return None
    if np.linalg.norm(z) > r + tol:
        return None
    return z


def _dykstra(p, A, lo, hi, r, sweeps, tol, polish_every=4):
    """Dykstra's algorithm over the slabs of ``A`` and then the ball."""
    k, m = A.shape
    sq = np.einsum("ij,ij->i", A, A)
    x = p.copy()
    inc = np.zeros((k + 1, m))
    for sweep in range(1, sweeps + 1):
        x_start = x
        for i in range(k):
            y = x + inc[i]
            if sq[i] == 0.0:
                x = y
            else:
                v = A[i] @ y
                if v > hi[i]:
                    x = y - ((v - hi[i]) / sq[i]) * A[i]
                elif v < lo[i]:
                    x = y - ((v - lo[i]) / sq[i]) * A[i]
                else:
                    x = y
            inc[i] = y - x
        y = x + inc[k]
        nrm = np.linalg.norm(y)
        x = y * (r / nrm) if nrm > r else y
        inc[k] = y - x
        if sweep % polish_every == 0 or sweep == sweeps:
            side = np.sign(np.einsum("ij,ij->i", A, inc[:k]))
            z = _polish(p, A, lo, hi, side, bool(np.any(inc[k])), r, tol)
            if z is not None:
                return z, sweep
            v = A @ x
            viol = max(float(np.max(v - hi, initial=0.0)), float(np.max(lo - v, initial=0.0)))
            if viol <= tol and np.linalg.norm(x - x_start) <= tol:
                return x, sweep
    return x, sweeps


def _project_dykstra(cs, p, opts, tol):
    # Dykstra over a working set grown from the most violated slabs
    r = cs.radius
    lo = cs.targets - cs.slacks
    hi = cs.targets + cs.slacks
    batch = max(2 * cs.dim, 16)

    def slab_viol(z):
        v = cs.rows @ z
        return np.maximum(v - hi, lo - v)

    z = project_ball(p, r)
    viol = slab_viol(z)
    working = np.zeros(len(lo), dtype=bool)
    total = 0
    while viol.size and viol.max() > tol:
        fresh = np.flatnonzero((viol > tol) & ~working)
        if fresh.size == 0:
            break
        fresh = fresh[np.argsort(-viol[fresh], kind="stable")[:batch]]
        working[fresh] = True
        W = np.flatnonzero(working)
        z, used = _dykstra(p, cs.rows[W], lo[W], hi[W], r, opts.dykstra_sweeps, tol)
        total += used
        viol = slab_viol(z)
    return z, total


def _fallback_point(cs, p):
    # least-violating point in the ball when the set is (numerically) empty
    z = project_ball(p, cs.radius)
    try:
        C, d, _, _ = _split(cs)
        w = project_ball(_dual_active_set(np.zeros(cs.dim), C, d, 0.0, 20 * (cs.dim + len(d)))[0],
                         cs.radius)
        if cs.residual(w) < cs.residual(z):
            z = w
    except (_EmptyPolytope, RuntimeError):
        pass
    return z


def project_feasible(cs: ConstraintSystem, p, opts: SolverOptions = SolverOptions()):
    """Euclidean projection of ``p`` onto ``C``.

    Returns ``(z, residual, work)``: ``z`` always lies in the ball, ``residual``
    is its largest constraint violation (above tolerance only when ``C`` is
    empty or, for ``method="dykstra"``, the sweep budget ran out), and
    ``work`` counts polytope solves or Dykstra sweeps.
    """
    p = np.asarray(p, dtype=np.float64)
    tol = opts.feas_tol * max(cs.radius, 1.0)
    if opts.method == "dykstra":
        z, work = _project_dykstra(cs, p, opts, tol)
        return z, cs.residual(z), work
    try:
        z, work = _ball_path(cs, p, 1.0, tol, _max_steps(cs))
    except _EmptyPolytope:
        z, work = _fallback_point(cs, p), 0
    return z, cs.residual(z), work


def _max_steps(cs):
    return 20 * (cs.dim + 2 * len(cs.targets)) + 100


# -- objectives ---------------------------------------------------------------

def _minimize_nonlinear(cs, obj, opts, history):
    # proximal gradient with step 1/L, L = 2; the prox point is -drift for
    # every iterate, so the projection is cached
    z = project_ball(cs.drift, cs.radius)
    cache = {}
    f_prev = None
    resid = np.inf
    for it in range(1, opts.max_iters + 1):
        point = z - 0.5 * (2.0 * z + 2.0 * obj.drift)
        key = point.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = project_feasible(cs, point, opts)
        z, resid, _ = cache[key]
        f = obj.value(z)
        history.append(f)
        if resid > opts.feas_tol * max(cs.radius, 1.0):
            return z, resid, it
        if f_prev is not None and abs(f_prev - f) <= opts.rel_obj_tol * max(abs(f), 1.0):
            return z, resid, it
        f_prev = f
    return z, resid, opts.max_iters


def _minimize_inner_prod(cs, obj, opts, history):
    r = cs.radius
    tol = opts.feas_tol * max(r, 1.0)
    if opts.method != "dykstra":
        try:
            z, evals = _ball_path(cs, -obj.drift, np.inf, tol, _max_steps(cs))
        except _EmptyPolytope:
            z, evals = _fallback_point(cs, cs.drift), 0
        history.append(obj.value(z))
        return z, cs.residual(z), max(evals, 1)
    # projected gradient on the linear objective with doubling steps; each
    # step is an exact proximal-point update, so objective values never rise
    z, resid, _ = project_feasible(cs, project_ball(cs.drift, r), opts)
    if resid > tol:
        return z, resid, 1
    dn = float(np.linalg.norm(obj.drift))
    f = obj.value(z)
    history.append(f)
    if dn == 0.0:
        return z, resid, 1
    step = r / dn
    scale = dn * r
    for it in range(2, opts.max_iters + 1):
        z_new, resid_new, _ = project_feasible(cs, z - step * obj.drift, opts)
        if resid_new > tol:
            return z, resid, it
        f_new = obj.value(z_new)
        if f_new > f:
            return z, resid, it
        done = (f - f_new <= opts.rel_obj_tol * max(abs(f_new), 1e-3 * scale)
                and np.linalg.norm(z_new - z) <= 1e-6 * r)
        z, resid, f = z_new, resid_new, f_new
        history.append(f)
        if done or step * dn > 1e12 * r:
            return z, resid, it
        step *= 2.0
    return z, resid, opts.max_iters


def solve(cs: ConstraintSystem, obj: Objective, opts: SolverOptions = SolverOptions()) -> SolverResult:
    """Minimize ``obj`` over the constraint set, widening the slabs if it looks empty.

    When the residual stays above ``feas_tol * max(r, 1)``, ``epsilon`` is
    multiplied by ``escalation_factor`` and the slabs rebuilt, at most
    ``max_escalations`` times; the result records the epsilon that succeeded.
    """
    m = cs.dim
    if cs.radius == 0.0:
        zero = np.zeros(m)
        return SolverResult(zero, 0.0, obj.value(zero), 0, cs.epsilon, 0, ())
    tol = opts.feas_tol * max(cs.radius, 1.0)
    runner = _minimize_nonlinear if obj.kind is ObjectiveKind.NONLINEAR else _minimize_inner_prod
    eps = cs.epsilon
    best = None
    system = cs
    for esc in range(opts.max_escalations + 1):
        if esc:
            eps *= opts.escalation_factor
            system = cs.with_epsilon(eps)
        history: list = []
        z, resid, iters = runner(system, obj, opts, history)
        result = SolverResult(z, float(resid), obj.value(z), int(iters), float(eps), esc, tuple(history))
        if resid <= tol:
            return result
        if best is None or resid < best.feas_residual:
            best = result
    raise InfeasibleError(
        f"constraint set still empty (residual {best.feas_residual:.3g} > {tol:.3g}) "
        f"after {opts.max_escalations} escalations up to epsilon {eps:.4g}",
        best,
    )
