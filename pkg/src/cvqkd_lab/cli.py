"""Command-line entry point: ``cvqkd-lab run | keyrate | selftest | defaults``."""

from __future__ import annotations

import argparse
import json
import math
import subprocess
import sys
from pathlib import Path

from . import scenarios
from . import security as sec


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvqkd-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its artifacts")
    run.add_argument("scenario", choices=scenarios.SCENARIOS)
    run.add_argument("--config", type=Path, help="INI-style scenario configuration")
    run.add_argument("--seed", type=_u64, help=f"overrides ${scenarios.SEED_ENV} and the config seed")
    run.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    run.add_argument("--jobs", type=int, default=1, help="worker processes for independent sweep points")

    kr = sub.add_parser("keyrate", help="asymptotic and optional finite-size key rate")
    kr.add_argument("--distance-km", type=float, required=True)
    kr.add_argument("--va", type=float, required=True, help="modulation variance V_A (SNU)")
    kr.add_argument("--finite-n", type=float, help="key symbols n")
    kr.add_argument("--finite-m", type=float, help="estimation symbols m")
    kr.add_argument("--delta-phi", type=float, default=0.034, help="phase noise; xi = V_A * delta_phi")
    kr.add_argument("--eta", type=float, default=0.42)
    kr.add_argument("--nu-el", type=float, default=0.175)
    kr.add_argument("--beta", type=float, default=0.95)
    kr.add_argument("--atten-db-per-km", type=float, default=sec.DEFAULT_ATTEN_DB_PER_KM)

    sub.add_parser("selftest", help="run the acceptance suite")
    sub.add_parser("defaults", help="print the configuration reference")
    return parser


def _cmd_run(args) -> int:
    try:
        cfg = scenarios.load_config(args.scenario, args.config, seed=args.seed, output_dir=str(args.out))
    except scenarios.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        report = scenarios.run(cfg, jobs=args.jobs)
    except scenarios.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    out = report.write(args.out)
    for e in report.expectations:
        print(f"{'PASS' if e.passed else 'FAIL'}  {e.name} = {e.value:.6g}  (target {e.target})")
    print(f"artifacts written to {out}")
    return 0 if report.passed else 1


def _cmd_keyrate(args) -> int:
    if (args.finite_n is None) != (args.finite_m is None):
        print("--finite-n and --finite-m must be given together", file=sys.stderr)
        return 2
    inp = sec.SecurityInput(v_a=args.va, t=sec.fiber_transmission(args.distance_km, args.atten_db_per_km),
                            xi=args.va * args.delta_phi, eta=args.eta, nu_el=args.nu_el, beta_rec=args.beta)
    fs = None
    if args.finite_n is not None:
        fs = sec.FiniteSizeInput(n_key=int(args.finite_n), m_est=int(args.finite_m))
    res = sec.key_rate(inp, fs)
    # fields that only exist for finite-size runs become null rather than NaN
    out = {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
           for k, v in res.to_dict().items() if k not in ("holevo", "holevo_max")}
    out["lambdas"] = list(res.holevo.lambdas)
    out["distance_km"] = args.distance_km
    print(json.dumps(out, sort_keys=True, indent=2, default=float, allow_nan=False))
    return 0


def _cmd_selftest(_args) -> int:
    here = Path(__file__).resolve()
    candidates = [p / "tests" / "test_acceptance.py" for p in here.parents]
    target = next((c for c in candidates if c.exists()), None)
    if target is None:
        print("acceptance suite not found next to the installed package", file=sys.stderr)
        return 2
    return subprocess.call([sys.executable, "-m", "pytest", "-v", "-s", str(target)])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "keyrate": _cmd_keyrate, "selftest": _cmd_selftest,
                "defaults": lambda a: print(scenarios.defaults_reference(), end="") or 0}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
