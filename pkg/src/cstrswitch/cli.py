"""Command-line interface: ``run``, ``montecarlo``, ``observability``, ``bench``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .export import export_results
from .observability import DEFAULT_TOL, nonlinear_observability
from .runner import PerturbationSpec, monte_carlo, run_case
from .scenario import OBSERVER_ORDER, ScenarioError, load_scenario, scenario_from_dict

log = logging.getLogger("cstrswitch")


def _scenario(args, **extra):
    overrides = {"case": args.case, "seed": args.seed, **extra}
    if args.config:
        return load_scenario(args.config, **overrides)
    return scenario_from_dict({}, **overrides)


def _mask(text: str | None):
    if not text:
        return None
    return [m.strip().upper() for m in text.split(",") if m.strip()]


def cmd_run(args) -> int:
    sc = _scenario(args, dt=args.dt, horizon=args.horizon, mode=args.mode, mask=_mask(args.mask),
                   workers=args.workers, out_dir=str(args.out))
    result = run_case(sc)
    files = export_results(result, args.out)
    counts = result.selection_counts()
    print(f"case {sc.case.value}: {result.n_steps} samples, seed {sc.seed}")
    for kind, why in result.unavailable.items():
        print(f"  {kind} unavailable: {why}")
    total = sum(counts.values()) or 1
    for kind in OBSERVER_ORDER:
        if kind in counts:
            print(f"  {kind} selected {100 * counts[kind] / total:.2f}% of samples")
    print(f"  SWO l2 (stacked) {result.metrics.l2_stacked.get('SWO', float('nan')):.3e}")
    for f in files:
        print(f"  wrote {f}")
    return 1 if result.partial else 0


def cmd_montecarlo(args) -> int:
    sc = _scenario(args, workers=args.workers, out_dir=str(args.out))
    spec = PerturbationSpec(trials=args.trials, shared=args.shared_draw)

    def progress(o):
        state = "ok" if o.ok else f"failed ({o.error})"
        log.info("trial %d %s", o.trial, state)

    mc = monte_carlo(sc, spec, progress=progress, mask_default=tuple(_mask(args.mask) or ()))
    files = export_results(mc, args.out)
    print(f"case {sc.case.value}: {mc.n_success}/{spec.trials} trials succeeded")
    for trial, err in mc.failures:
        print(f"  trial {trial}: {err}")
    for f in files:
        print(f"  wrote {f}")
    return 0 if mc.n_success else 1


def cmd_observability(args) -> int:
    report = nonlinear_observability(args.case, order=args.order, tol=args.tol)
    print(report.summary())
    print("  rank per evaluation point: " + " ".join(map(str, report.point_ranks)))
    return 0


def cmd_bench(args) -> int:
    sc = _scenario(args, workers=1)
    result = run_case(sc)
    cells = []
    for k in OBSERVER_ORDER + ("SWO",):
        cells.append(f"{result.times[k]:.3f}" if k in result.times else "-")
    print("case  " + "  ".join(f"{k:>9}" for k in OBSERVER_ORDER + ("SWO",)))
    print(f"{sc.case.value:<4}  " + "  ".join(f"{c:>9}" for c in cells))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cstrswitch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, cases):
        p.add_argument("--case", required=True, choices=cases)
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("run", help="simulate one scenario and export trajectories")
    common(p, ["sc", "1", "2", "3"])
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--mode", choices=["measurement", "truestate"])
    p.add_argument("--mask", help="comma-separated observers to exclude, e.g. QKF,PF")
    p.add_argument("--workers", type=int, help="threads for stepping the bank")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--config", type=Path)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("montecarlo", help="parameter-perturbation robustness study")
    common(p, ["1", "2", "3"])
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--workers", type=int, help="processes for independent trials")
    p.add_argument("--mask", default="QKF",
                   help="observers excluded from every trial (default QKF; pass '' to keep all)")
    p.add_argument("--shared-draw", action="store_true",
                   help="apply one draw to both perturbed reactors")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("observability", help="rank of the observability matrix")
    p.add_argument("--case", required=True, choices=["sc", "1", "2", "3"])
    p.add_argument("--order", type=int)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(func=cmd_observability)

    p = sub.add_parser("bench", help="wall time per observer for one run")
    common(p, ["1", "2", "3"])
    p.add_argument("--config", type=Path)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
