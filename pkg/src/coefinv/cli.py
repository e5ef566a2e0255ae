"""Command-line entry points: run benchmarks, the estimator case study,
and reconstruction comparison.

Configuration comes from an optional YAML file with keys matching RunConfig
fields; command-line flags override file values.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import report as report_mod
from . import runs
from .param_space import export_basis

logger = logging.getLogger(__name__)


def _load_config_file(path):
    with open(path) as fh:
        payload = yaml.safe_load(fh) or {}
    if not isinstance(payload, dict):
        raise SystemExit(f"config file {path} must hold a mapping")
    return payload


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="coefinv",
        description="Coefficient reconstruction benchmarks for elliptic problems.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log per-iteration progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one algorithm on one benchmark")
    run_p.add_argument("--config", help="YAML file with RunConfig fields")
    run_p.add_argument("--run", type=int, help="benchmark id, 1-4")
    run_p.add_argument("--problem", choices=["reaction", "diffusion"],
                       help="override the problem kind")
    run_p.add_argument("--algorithm", help="fom | qr | qr-vr")
    run_p.add_argument("--n", type=int, help="grid cells per side")
    run_p.add_argument("--delta", type=float, help="noise level")
    run_p.add_argument("--seed", type=int, help="noise seed")
    run_p.add_argument("--estimator", choices=["offline", "online", "mixed"],
                       help="error estimator evaluation route")
    run_p.add_argument("--out", help="report directory")
    run_p.add_argument("--export-basis", action="store_true",
                       help="also write the parameter basis vectors")

    cs_p = sub.add_parser("case-study",
                          help="estimator comparison on run 2 with a wide region")
    cs_p.add_argument("--n", type=int, default=100)
    cs_p.add_argument("--delta", type=float, default=1e-5)
    cs_p.add_argument("--seed", type=int, default=1)
    cs_p.add_argument("--eta0", type=float, default=10.0)
    cs_p.add_argument("--out", help="parent directory for the three reports")

    cmp_p = sub.add_parser("compare",
                           help="distances between two emitted reconstructions")
    cmp_p.add_argument("dir_a", help="report directory (compared)")
    cmp_p.add_argument("dir_b", help="report directory (reference)")
    cmp_p.add_argument("--out", help="write the comparison as JSON here")
    return parser


def _cmd_run(args):
    overrides = {}
    if args.config:
        overrides.update(_load_config_file(args.config))
    for key in ("algorithm", "n", "delta", "seed", "out"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.estimator is not None:
        overrides["estimator"] = args.estimator
    if args.problem is not None:
        overrides["kind"] = args.problem
    run_id = args.run if args.run is not None else overrides.pop("run", 1)
    overrides.pop("run", None)
    config = runs.build_run(run_id, **overrides)

    result = runs.run_benchmark(config)
    summary_line = {
        "algorithm": result.algorithm,
        **{k: result.summary[k] for k in
           ("converged", "outer_iterations", "discrepancy", "time_s",
            "fom_solves", "bu_apps", "riesz_solves")},
    }
    if config.out:
        outdir = report_mod.emit_report(result, config.out)
        print(f"report written to {outdir}")
    else:
        print(json.dumps(summary_line, indent=2, sort_keys=True))
    if config.out and args.export_basis:
        if result.algorithm == "fom":
            logger.warning("no reduced basis to export for the fom algorithm")
        else:
            basis_dir = Path(config.out) / "basis"
            export_basis(result.result.space, basis_dir)
            print(f"basis written to {basis_dir}")
    return 0 if result.summary["converged"] else 3


def _cmd_case_study(args):
    reports = runs.estimator_case_study(
        n=args.n, delta=args.delta, seed=args.seed, eta0=args.eta0
    )
    table = {}
    for mode, rep in reports.items():
        table[mode] = {k: rep.summary[k] for k in
                       ("converged", "outer_iterations", "fom_solves",
                        "riesz_solves", "time_s")}
        if args.out:
            report_mod.emit_report(rep, Path(args.out) / mode)
    print(json.dumps(table, indent=2, sort_keys=True))
    if args.out:
        with open(Path(args.out) / "case_study.json", "w") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0 if all(r.summary["converged"] for r in reports.values()) else 3


def _cmd_compare(args):
    rep_a = report_mod.parse_report(args.dir_a)
    rep_b = report_mod.parse_report(args.dir_b)
    if rep_a.q is None or rep_b.q is None:
        raise SystemExit("both report directories need q_reconstructed.csv")
    kind = rep_b.config.get("kind", "reaction")
    result = report_mod.compare_reconstructions(rep_a.q, rep_b.q, kind)
    payload = {
        "rel_l2": result["rel_l2"],
        "rel_q": result["rel_q"],
        "pointwise_max": float(np.max(result["pointwise"])),
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "case-study":
        return _cmd_case_study(args)
    return _cmd_compare(args)


if __name__ == "__main__":
    sys.exit(main())
