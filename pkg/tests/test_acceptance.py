"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line with the measured
quantities, then asserts. Criteria 5, 6 and 10 share the MNIST runs.
"""

import math

import mpmath
import numpy as np
import pytest
from oracles import grid_minimum

from termembed import bench
from termembed._rng import derive_seed, standard_normal
from termembed.data import ManifoldKind, ManifoldSpec, gen_manifold, stratified_split
from termembed.embedder import Strategy, embed, embed_point, fit
from termembed.jl import apply, convex_hull_distortion, gen_gaussian_map, unit_secants
from termembed.solver import InfeasibleError, Objective, build_constraints, solve
from termembed.theory import (
    TheoryParams,
    alpha,
    beta,
    embed_dim_width,
    mc_gaussian_width,
    width_bound,
)

pytestmark = pytest.mark.slow

SEEDS = (1, 2, 3)
M_VALUES = [8, 16, 24, 32]
COMPARED = ["identity", "linear", "terminal_inner_prod", "terminal_nonlinear"]
TERMINAL = [Strategy.TERMINAL_INNER_PROD, Strategy.TERMINAL_NONLINEAR]


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
        return ok
    return emit


def mnist_config(mnist_idx, seed, per_class_train=100, m_values=M_VALUES, strategies=COMPARED):
    img, lab = mnist_idx
    return bench.ExperimentConfig(
        dataset={"kind": "idx", "images": str(img), "labels": str(lab)},
        split={"per_class_train": per_class_train, "per_class_test": 20},
        strategies=strategies, m_values=m_values, seed=seed, record_timing=False,
        metrics={"nonlinearity": True, "distortion": False})


@pytest.fixture(scope="module")
def mnist_runs(mnist_idx):
    return {s: bench.run_experiment(mnist_config(mnist_idx, s)) for s in SEEDS}


def accuracy(rep, strategy, m):
    (rec,) = [r for r in rep.records if r["strategy"] == strategy and r["m"] == m]
    return rec


# -- 1, 2: exact identities ------------------------------------------------------------

def test_criterion_1_anchor_isometry(report):
    worst, count = 0.0, 0
    for i in range(1000):
        N = (10, 100)[i % 2]
        m = (5, 20)[(i // 2) % 2]
        s = derive_seed(11, "isometry", i)
        X = standard_normal(s, (30, N))
        u = standard_normal(s + 1, N)
        strategy = TERMINAL[i % 2]
        e = fit(strategy, gen_gaussian_map(m, N, s + 2), X, epsilon=0.1)
        out = embed_point(e, u, on_infeasible="best")
        nn = int(np.argmin(np.linalg.norm(X - u, axis=1)))
        r = np.linalg.norm(u - X[nn])
        worst = max(worst, abs(np.linalg.norm(out.vector - e.train_image(nn)) - r) / r)
        count += 1
    ok = count == 1000 and worst <= 1e-9
    assert report(1, ok, f"instances={count} max_rel_err={worst:.3e} (<= 1e-9)")


def test_criterion_2_train_fixpoint(report, mnist_idx):
    cfg = mnist_config(mnist_idx, SEEDS[0])
    data = bench.load_dataset(cfg.dataset)
    train, _ = stratified_split(data, 100, 20, derive_seed(cfg.seed, "split", 0))
    checked = mismatches = 0
    for m in (8, 32):
        emap = bench.map_for(cfg.seed, m, train.dim)
        e_all = [fit(s, emap, train, 0.1) for s in
                 (Strategy.LINEAR, Strategy.TERMINAL_INNER_PROD, Strategy.TERMINAL_NONLINEAR)]
        for x in train.points:
            want = np.append(apply(emap, x), 0.0).tobytes()
            for e in e_all:
                checked += 1
                mismatches += embed(e, x).tobytes() != want
    ok = mismatches == 0
    assert report(2, ok, f"images_checked={checked} bitwise_mismatches={mismatches}")


# -- 3: solver against the grid ----------------------------------------------------------

def test_criterion_3_grid_oracle(report):
    # query a distance ~0.3 from a train point, so |∇h| stays near 1 at the optimum
    worst_gap = worst_res = 0.0
    compared = infeasible = 0
    failures = []
    for i in range(200):
        s = derive_seed(0, "grid", i)
        m, n, N = 1 + i % 3, 2 + (i // 3) % 5, 4
        X = standard_normal(s, (n, N))
        u = X[0] + 0.15 * standard_normal(s + 1, N)
        emap = gen_gaussian_map(m, N, s + 2)
        cs = build_constraints(u, X, apply(emap, X), emap, 0.3)
        f = lambda Z, d=cs.drift: np.einsum("ij,ij->i", Z, Z) + 2 * Z @ d  # noqa: E731
        try:
            res = solve(cs, Objective.for_system("nonlinear", cs))
        except InfeasibleError as err:
            infeasible += 1
            c2 = cs.with_epsilon(err.best.effective_epsilon)
            g, _ = grid_minimum(f, c2.rows, c2.targets, c2.slacks, c2.radius)
            if g != math.inf:
                failures.append((i, "solver infeasible, grid found a node"))
            continue
        c2 = cs.with_epsilon(res.effective_epsilon)
        g, _ = grid_minimum(f, c2.rows, c2.targets, c2.slacks, c2.radius,
                            probes=[res.z], min_step=1e-3 / 64)
        gap = abs(res.objective_value - g)
        tol_res = 1e-7 * max(cs.radius, 1.0)
        worst_gap, worst_res = max(worst_gap, gap), max(worst_res, res.feas_residual / tol_res)
        compared += 1
        if gap > 5e-3 or res.feas_residual > tol_res:
            failures.append((i, gap, res.feas_residual))
    ok = not failures
    assert report(3, ok, f"compared={compared} infeasible={infeasible} max_gap={worst_gap:.2e} "
                         f"(<= 5e-3) max_residual/tol={worst_res:.2e} failures={failures[:5]}")


# -- 4: distortion on a certified circle ----------------------------------------------------

def test_criterion_4_terminal_distortion(report):
    eps = 0.6
    X = gen_manifold(ManifoldSpec(ManifoldKind.CIRCLE, ambient=50, seed=11), 200).points
    S = unit_secants(X)
    w = mc_gaussian_width(S, 2000, seed=12)
    m = embed_dim_width(w.mean, eps / 24)
    while True:
        emap = gen_gaussian_map(m, 50, derive_seed(13, "map", m))
        hull = convex_hull_distortion(emap, S, 10_000, seed=14)
        if hull <= eps / 24:
            break
        m *= 2
    # 10 angles x 10 radii in the circle's plane x 5 heights off it
    normal = np.zeros(50)
    normal[2] = 1.0
    U = np.array([np.r_[r * np.cos(a), r * np.sin(a), np.zeros(48)] + h * normal
                  for a in np.linspace(0, 2 * np.pi, 10, endpoint=False)
                  for r in np.linspace(0.1, 2.0, 10) for h in np.linspace(0, 1, 5)])
    e = fit(Strategy.TERMINAL_NONLINEAR, emap, X, eps / 24)
    Y = e.train_images()
    worst, escalations = 0.0, 0
    for u in U:
        out = embed_point(e, u)
        escalations += out.result.escalations if out.result else 0
        d_emb = np.sum((out.vector - Y) ** 2, axis=1)
        d_true = np.sum((u - X) ** 2, axis=1)
        worst = max(worst, float(np.max(np.abs(d_emb - d_true) / d_true)))
    ok = worst <= eps
    assert report(4, ok, f"m={m} width={w.mean:.4f} hull={hull:.4f} (<= {eps / 24:.4f}) "
                         f"escalations={escalations} max_sq_distortion={worst:.4f} (<= {eps})")


# -- 5, 6, 10: MNIST --------------------------------------------------------------------------

def test_criterion_5_terminal_beats_linear(report, mnist_runs):
    rows, worst = [], math.inf
    for m in M_VALUES:
        lin = np.mean([accuracy(r, "linear", m)["accuracy_percent"] for r in mnist_runs.values()])
        ter = np.mean([accuracy(r, "terminal_nonlinear", m)["accuracy_percent"]
                       for r in mnist_runs.values()])
        worst = min(worst, ter - lin)
        rows.append(f"m={m}: linear={lin:.2f} terminal={ter:.2f}")
    ident = accuracy(mnist_runs[SEEDS[0]], "identity", 8)["accuracy_percent"]
    ok = worst >= -1.0
    assert report(5, ok, f"{'; '.join(rows)}; identity={ident:.2f} min(terminal-linear)={worst:.2f}"
                         " (>= -1)")


def test_criterion_6_nonlinearity_ordering(report, mnist_runs):
    weak_ok, strict_seeds, rows = True, 0, []
    for seed, rep in mnist_runs.items():
        strict = True
        for m in M_VALUES:
            nl = accuracy(rep, "terminal_nonlinear", m)["mean_nonlinearity_percent"]
            ip = accuracy(rep, "terminal_inner_prod", m)["mean_nonlinearity_percent"]
            lin = accuracy(rep, "linear", m)["mean_nonlinearity_percent"]
            weak_ok &= nl >= ip >= lin == 0.0
            strict &= nl > ip > lin
            rows.append(f"s{seed}/m{m}: {nl:.2f}>={ip:.3f}>={lin:.0f}")
        strict_seeds += strict
    ok = weak_ok and strict_seeds >= 2
    assert report(6, ok, f"strict_seeds={strict_seeds}/3 " + " ".join(rows))


def test_criterion_10_determinism(report, mnist_idx, mnist_runs, tmp_path):
    same = []
    for seed in SEEDS:
        again = bench.run_experiment(mnist_config(mnist_idx, seed))
        _, csv_a = bench.emit_report(mnist_runs[seed], tmp_path / f"a{seed}")
        _, csv_b = bench.emit_report(again, tmp_path / f"b{seed}")
        same.append(csv_a.read_bytes() == csv_b.read_bytes())
    ok = all(same)
    assert report(10, ok, f"byte_identical_curves={same}")


@pytest.mark.full
def test_full_scale_within_one_point_of_uncompressed(report, mnist_idx):
    cfg = mnist_config(mnist_idx, SEEDS[0], per_class_train=400, m_values=[24],
                       strategies=["identity", "terminal_nonlinear"])
    rep = bench.run_experiment(cfg)
    ident = accuracy(rep, "identity", 24)["accuracy_percent"]
    ter = accuracy(rep, "terminal_nonlinear", 24)["accuracy_percent"]
    ok = ident - ter <= 1.0 + 3.0
    assert report("5-full", ok, f"n_train={rep.dataset['n_train']} identity={ident:.2f} "
                                f"terminal(m=24)={ter:.2f} deficit={ident - ter:.2f} (<= 1 + 3)")


# -- 7, 8: width and calculators -----------------------------------------------------------------

def test_criterion_7_gaussian_width(report):
    pair = mc_gaussian_width(np.array([[1.0, 0.0], [-1.0, 0.0]]), 1_000_000, seed=7)
    t = np.linspace(0, 2 * np.pi, 10_000, endpoint=False)
    circ = mc_gaussian_width(np.column_stack([np.cos(t), np.sin(t)]), 50_000, seed=8)
    e_pair = abs(pair.mean - math.sqrt(2 / math.pi))
    e_circ = abs(circ.mean - math.sqrt(math.pi / 2))
    ok = e_pair <= 0.005 and e_circ <= 0.02
    assert report(7, ok, f"pair={pair.mean:.5f} err={e_pair:.2e} (<= 0.005) "
                         f"circle={circ.mean:.5f} err={e_circ:.2e} (<= 0.02)")


def test_criterion_8_theory_calculators(report):
    mpmath.mp.dps = 40
    p = TheoryParams(d=1, tau=1.0, vol=2 * math.pi, epsilon=0.1)
    a, b = alpha(p), beta(alpha(p), 1)
    wb = width_bound(b, 1)
    a_ref = 40 * mpmath.pi
    b_ref = 1600 * mpmath.pi ** 2 + 120 * mpmath.pi
    wb_ref = 8 * mpmath.sqrt(2) * mpmath.sqrt(mpmath.log(b_ref) + 4)
    rel = [abs(a / a_ref - 1), abs(b / b_ref - 1), abs(wb / wb_ref - 1)]
    rel = [float(x) for x in rel]
    ok = rel[0] <= 1e-10 and rel[1] <= 1e-10 and rel[2] <= 1e-6
    assert report(8, ok, f"alpha={a:.10f} beta={b:.6f} width_bound={wb:.6f} "
                         f"rel_err={[f'{x:.1e}' for x in rel]}")


# -- 9: tubes ---------------------------------------------------------------------------------------

def test_criterion_9_tube_estimator(report):
    rec = bench.tube_estimator_experiment(bench.TubeConfig())
    ok = rec["accuracy_percent"] == 100.0 and rec["violations"] == 0
    assert report(9, ok, f"m={rec['m']} accuracy={rec['accuracy_percent']:.1f} "
                         f"violations={rec['violations']}/{rec['pairs_checked']} "
                         f"margins=({rec['min_lower_margin']:.3f}, {rec['min_upper_margin']:.3f})")
