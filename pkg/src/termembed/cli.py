"""Command-line entry point: ``termembed <subcommand> ...``.

Exit codes: 0 on success, 2 on configuration errors, 3 when a solve stays
infeasible after escalation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path


from . import bench, data, theory
from ._rng import derive_seed
from .embedder import Strategy, embed_point, fit, write_embedded_csv
from .jl import convex_hull_distortion, embedding_distortion, save_map, unit_secants
from .solver import InfeasibleError, SolverOptions

log = logging.getLogger("termembed")

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _strategy_list(text: str) -> list:
    try:
        return [Strategy(v.strip()).value for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed (uint64)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--m", type=_int_list, help="embedding dimensions, e.g. 8,16,24")
    p.add_argument("--epsilon", type=float, help="slab parameter of the terminal solver")
    p.add_argument("--strategy", type=_strategy_list,
                   help="comma-separated subset of " + ",".join(s.value for s in Strategy))
    p.add_argument("--threads", type=int, help="worker threads for per-point solves")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _load_json(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise bench.ConfigError(f"{path}: {err}") from None


def _dump(obj, out: Path | None, name: str):
    text = json.dumps(bench._jsonable(obj), indent=2, sort_keys=True)
    print(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")


# -- subcommands ------------------------------------------------------------------

def cmd_classify(args) -> int:
    raw = _load_json(args.config)
    if args.images or args.labels:
        raw["dataset"] = {"kind": "idx", "images": str(args.images), "labels": str(args.labels)}
    if args.data:
        raw["dataset"] = {"kind": "csv", "path": str(args.data), "has_labels": True}
    for key, val in (("seed", args.seed), ("m_values", args.m), ("epsilon", args.epsilon),
                     ("strategies", args.strategy), ("threads", args.threads)):
        if val is not None:
            raw[key] = val
    if args.per_class_train is not None or args.per_class_test is not None:
        split = dict(raw.get("split", {"per_class_train": 100, "per_class_test": 20}))
        if args.per_class_train is not None:
            split["per_class_train"] = args.per_class_train
        if args.per_class_test is not None:
            split["per_class_test"] = args.per_class_test
        raw["split"] = split
    if args.no_timing:
        raw["record_timing"] = False
    if args.out is not None:
        raw["out_dir"] = str(args.out)
    cfg = bench.ExperimentConfig.from_dict(raw)
    report = bench.run_experiment(cfg)
    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out is not None:
        bench.emit_report(report, out)
    sys.stdout.write(bench.curves_csv(report))
    return 0


def cmd_embed(args) -> int:
    train = data.read_csv_matrix(args.train, has_labels=True)
    queries = data.read_csv_matrix(args.points, has_labels=not args.unlabeled)
    ms = args.m or [16]
    if len(ms) != 1:
        raise bench.ConfigError("embed takes a single --m value")
    m = ms[0]
    seed = args.seed or 0
    eps = args.epsilon if args.epsilon is not None else 0.1
    strategies = args.strategy or [Strategy.TERMINAL_NONLINEAR.value]
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    emap = bench.map_for(seed, m, train.dim)
    save_map(emap, out / "map.temb")
    for s in strategies:
        e = fit(s, emap, train, eps, SolverOptions())
        rows = [embed_point(e, u).vector for u in queries.points]
        write_embedded_csv(out / f"embedded_{s}.csv", rows, queries.labels)
        log.info("wrote %s", out / f"embedded_{s}.csv")
    return 0


def cmd_distort(args) -> int:
    ds = data.read_csv_matrix(args.data, has_labels=not args.unlabeled)
    seed = args.seed or 0
    records = []
    secants = unit_secants(ds.points)
    for m in args.m or [16]:
        emap = bench.map_for(seed, m, ds.dim)
        pair = embedding_distortion(emap, ds.points)
        records.append({
            "m": m,
            "map_seed": derive_seed(seed, "map", m),
            "pairwise": asdict(pair),
            "hull_distortion": convex_hull_distortion(emap, secants, args.samples,
                                                      derive_seed(seed, "hull", m)),
            "n_secants": int(len(secants)),
        })
    _dump({"data": str(args.data), "records": records}, args.out, "distortion.json")
    return 0


def cmd_tube(args) -> int:
    raw = _load_json(args.config)
    for key, val in (("seed", args.seed), ("epsilon", args.epsilon), ("threads", args.threads),
                     ("solver_epsilon", args.solver_epsilon), ("c", args.c)):
        if val is not None:
            raw[key] = val
    if args.m:
        raw["m"] = args.m[0]
    unknown = set(raw) - set(bench.TubeConfig.__dataclass_fields__)
    if unknown:
        raise bench.ConfigError(f"unknown tube config keys: {sorted(unknown)}")
    rec = bench.tube_estimator_experiment(bench.TubeConfig(**raw))
    _dump(rec, args.out, "tube.json")
    return 0


def cmd_theory(args) -> int:
    eps = args.epsilon if args.epsilon is not None else 0.1
    p = theory.TheoryParams(args.d, args.tau, args.vol, args.vol_boundary, eps)
    a = theory.alpha(p)
    b = theory.beta(a, p.d)
    wb = theory.width_bound(b, p.d)
    w = args.width if args.width is not None else wb
    _dump({
        "alpha": a,
        "beta": b,
        "width_bound": wb,
        "m_manifold": theory.embed_dim_manifold(p, args.c),
        "m_width": theory.embed_dim_width(w, eps, args.c, args.p),
        "width_used": w,
        "c": args.c,
        "p": args.p,
        "params": asdict(p),
    }, args.out, "theory.json")
    return 0


def cmd_gen_data(args) -> int:
    center = None
    if args.shift:
        center = [args.shift] + [0.0] * (args.ambient - 1)
    spec = data.ManifoldSpec(kind=args.kind, ambient=args.ambient, radius=args.radius,
                             dim=args.dim, sparsity=args.sparsity, n_subspaces=args.subspaces,
                             noise_delta=args.delta, seed=args.seed or 0, center=center,
                             label=args.label)
    ds = data.gen_manifold(spec, args.n)
    out = args.out_file
    data.write_csv_matrix(out, ds.points, ds.labels)
    log.info("wrote %d points to %s", len(ds), out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="termembed", description="Terminal embeddings for compressive nearest-neighbor work.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", parents=[common], help="compressive NN classification")
    p.add_argument("--images", type=Path, help="IDX image file")
    p.add_argument("--labels", type=Path, help="IDX label file")
    p.add_argument("--data", type=Path, help="labeled CSV dataset")
    p.add_argument("--per-class-train", type=int)
    p.add_argument("--per-class-test", type=int)
    p.add_argument("--no-timing", action="store_true",
                   help="leave mean_embed_seconds blank so curves.csv is reproducible")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("embed", parents=[common], help="embed points against a training set")
    p.add_argument("--train", type=Path, required=True, help="labeled CSV training set")
    p.add_argument("--points", type=Path, required=True, help="CSV of points to embed")
    p.add_argument("--unlabeled", action="store_true", help="--points has no label column")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("distort", parents=[common], help="distortion audit of Gaussian maps")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--unlabeled", action="store_true")
    p.add_argument("--samples", type=int, default=10_000, help="hull samples")
    p.set_defaults(func=cmd_distort)

    p = sub.add_parser("tube", parents=[common], help="two-manifold tube distance experiment")
    p.add_argument("--solver-epsilon", type=float)
    p.add_argument("--c", type=float, help="constant of the width rule")
    p.set_defaults(func=cmd_tube)

    p = sub.add_parser("theory", parents=[common], help="manifold complexity calculators")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--vol", type=float, required=True)
    p.add_argument("--vol-boundary", type=float, default=0.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--p", type=float, default=0.5, help="failure probability of the width rule")
    p.add_argument("--width", type=float, help="Gaussian width (default: the width bound)")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("gen-data", parents=[common], help="sample a synthetic manifold to CSV")
    p.add_argument("--kind", choices=[k.value for k in data.ManifoldKind], required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--ambient", type=int, required=True)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--sparsity", type=int, default=1)
    p.add_argument("--subspaces", type=int, default=0)
    p.add_argument("--shift", type=float, default=0.0, help="translate along the first axis")
    p.add_argument("--label", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "gen-data":
        if args.out is None:
            parser.error("gen-data needs --out <file>")
        args.out_file = args.out
    try:
        return args.func(args)
    except InfeasibleError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (bench.ConfigError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
