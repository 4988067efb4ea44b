"""Command line entry point: ``coqubo <verb> [options]``.

Exit codes: 0 success, 2 configuration error, 3 infeasible LP, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from collateral_qubo.anneal import Schedule, anneal
from collateral_qubo.encode import QuboModel
from collateral_qubo.harness.experiment import (
    ENCODINGS,
    PROFILES,
    ConfigError,
    ExperimentConfig,
    InfeasibleLpError,
    allocation_csv,
    build_qubo,
    exposure_csv,
    kp_summary_csv,
    run_experiment,
    run_kp,
)
from collateral_qubo.harness.generator import GeneratorSpec, SpecError, generate_instance
from collateral_qubo.lpref import solve_lp, write_mps
from collateral_qubo.model import CollateralInstance, evaluate_allocation

log = logging.getLogger("coqubo")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4


def _read_json(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _instance(args) -> CollateralInstance:
    if args.instance:
        return CollateralInstance.load(args.instance)
    spec = GeneratorSpec.from_dict(_read_json(args.config).get("generator", {}))
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    return generate_instance(spec)


def cmd_generate(args) -> int:
    doc = _read_json(args.config)
    spec = GeneratorSpec.from_dict(doc.get("generator", doc))
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    text = generate_instance(spec).to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_solve_lp(args) -> int:
    instance = _instance(args)
    sol = solve_lp(instance)
    print(f"status={sol.status} objective={sol.objective!r} iterations={sol.iterations}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "allocation_lp.csv").write_text(allocation_csv(sol.Q, instance))
        (out / "exposure_lp.csv").write_text(exposure_csv(evaluate_allocation(sol.Q, instance), instance))
        if args.mps:
            write_mps(instance, out / "problem.mps")
    return EXIT_INFEASIBLE if sol.status == "infeasible" else EXIT_OK


def cmd_encode(args) -> int:
    instance = _instance(args)
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    q = build_qubo(instance, args.encoding, args.bits or cfg.bits,
                   cfg.weights_for(args.encoding, args.profile), not args.raw)
    for w in q.warnings:
        log.warning(w)
    text = q.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_anneal(args) -> int:
    q = QuboModel.from_json(Path(args.qubo).read_text())
    doc = _read_json(args.config).get("schedule", {})
    sched = Schedule(**doc)
    overrides = {k: v for k, v in (("sweeps", args.sweeps), ("reads", args.reads), ("seed", args.seed))
                 if v is not None}
    ss = anneal(q, replace(sched, **overrides), workers=args.workers)
    if args.out:
        out = Path(args.out)
        out.write_text(ss.to_csv())
        out.with_suffix(".json").write_text(ss.metadata_json())
    print(f"best_energy={ss.best.energy!r} bitstring={ss.best.bitstring}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.out:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.workers:
        overrides["workers"] = args.workers
    if args.timing:
        overrides["record_timing"] = True
    cfg = replace(cfg, **overrides)
    try:
        bundle = run_experiment(cfg)
    except InfeasibleLpError as exc:
        log.error(str(exc))
        return EXIT_INFEASIBLE
    print((bundle.out_dir / "summary.csv").read_text(), end="")
    return EXIT_OK


def cmd_kp(args) -> int:
    doc = _read_json(args.config).get("schedule", {})
    sched = Schedule(**doc)
    seeds = range(args.seed, args.seed + args.repeats) if args.seed is not None else range(args.repeats)
    text = kp_summary_csv(run_kp(seeds=seeds, schedule=sched))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "kp_summary.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coqubo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--config")
        return p

    common(sub.add_parser("generate", help="write a synthetic instance")).set_defaults(func=cmd_generate)

    p = common(sub.add_parser("solve-lp", help="solve the continuous relaxation"))
    p.add_argument("--instance")
    p.add_argument("--mps", action="store_true", help="also export problem.mps")
    p.set_defaults(func=cmd_solve_lp)

    p = common(sub.add_parser("encode", help="export a collateral QUBO as JSON"))
    p.add_argument("--instance")
    p.add_argument("--encoding", choices=ENCODINGS, default="balanced")
    p.add_argument("--profile", choices=PROFILES, default="sampler")
    p.add_argument("--bits", type=int)
    p.add_argument("--raw", action="store_true", help="skip per-term normalization")
    p.set_defaults(func=cmd_encode)

    p = common(sub.add_parser("anneal", help="sample a QUBO JSON file"))
    p.add_argument("--qubo", required=True)
    p.add_argument("--sweeps", type=int)
    p.add_argument("--reads", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_anneal)

    p = common(sub.add_parser("run", help="full experiment with reports"))
    p.add_argument("--workers", type=int)
    p.add_argument("--timing", action="store_true", help="fill runtime_ms (breaks byte reproducibility)")
    p.set_defaults(func=cmd_run)

    p = common(sub.add_parser("kp", help="knapsack demo on the ten-item instance"))
    p.add_argument("--repeats", type=int, default=1)
    p.set_defaults(func=cmd_kp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpecError, TypeError, KeyError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except ValueError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
