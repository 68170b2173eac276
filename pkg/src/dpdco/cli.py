"""Command-line entry point (``dpdco``).

Exit codes: 0 on success, 1 on a property violation or engine error,
2 on a configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .errors import ConfigError, DPDCOError
from .evcharging import generate_specs, write_spec_dump
from .model import AdjacencyParams, build_scenario
from .sensitivity import adjacency_probe, local_battery

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig().validate()
    return harness.with_seed(cfg, args.seed)


def _out_path(args, cfg) -> Path:
    return Path(args.out or cfg.out)


def _trace_path(args, out: Path) -> Path | None:
    if args.json_trace is None:
        return None
    if args.json_trace == "auto":
        return out.with_suffix(".trace.json")
    return Path(args.json_trace)


def _single(args, private: bool | None) -> int:
    cfg = _load(args)
    private = cfg.private if private is None else private
    exp = harness.Experiment(cfg)
    rec = exp.run(private=private, threads=args.threads, wall_time=not args.no_wall_time)
    out = _out_path(args, cfg)
    harness.write_csv([rec], out)
    trace = _trace_path(args, out)
    if trace is not None:
        harness.write_trace(rec, trace)
    label = f"eps={rec.epsilon:g}" if private else "non-private"
    print(f"{label} K={rec.K} c={rec.c:g} seed={rec.seed}: U={rec.U_value:.10g} U*={rec.U_star:.10g} "
          f"rel_subopt={rec.rel_subopt:.4e} budget={rec.budget:g} -> {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    return _single(args, private=None)


def cmd_baseline(args) -> int:
    return _single(args, private=False)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    exp = harness.Experiment(cfg)
    res = harness.sweep(exp, workers=args.workers, threads=args.threads,
                        wall_time=not args.no_wall_time, progress=print)
    out = _out_path(args, cfg)
    harness.write_csv(res.records, out)
    summary = out.with_suffix(".summary.json")
    summary.write_text(json.dumps(res.summary(), indent=1))
    if res.axis == "K":
        ok, best = harness.interior_minimizer(res.means)
        print(f"best K={best} ({'interior' if ok else 'at a grid endpoint'})")
    if res.slope is not None:
        print(f"log-log slope of mean rel_subopt vs epsilon: {res.slope:.4f}")
    print(f"{len(res.records)} rows -> {out}; summary -> {summary}")
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = harness.verify(args.which, seed=args.seed or 0)
    for name, passed, detail in checks:
        print(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
    return EXIT_OK if all(c[1] for c in checks) else EXIT_VIOLATION


def cmd_verify_sensitivity(args) -> int:
    seed = args.seed or 0
    spec = generate_specs(1, args.horizon, seed)[0]
    report = adjacency_probe(spec, AdjacencyParams(args.delta_r, args.delta_E), args.trials, seed)
    battery = local_battery(args.local, seed)
    if not battery.passed:
        report.violations.append(
            f"local battery: summed cap sensitivity {battery.worst:.6g} > {battery.threshold}, "
            f"worst |db| defect {battery.notes['worst_db']:.3g}, skip rate {battery.skip_rate:.3%}"
        )
    payload = {**report.to_dict(), "local_battery": {**battery.notes, "skipped": battery.skipped,
                                                     "checked": battery.checked, "passed": battery.passed}}
    print(json.dumps(payload, indent=1))
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_dump_specs(args) -> int:
    cfg = _load(args)
    scenario = build_scenario(cfg.scenario)
    out = Path(args.out or "specs.csv")
    write_spec_dump(scenario, out)
    print(f"{scenario.n_groups} group specs -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpdco", description="Private distributed EV-charging optimization")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seed", type=int, help="override the config seeds with this one")
        sp.add_argument("--threads", type=int, default=1, help="projection threads per run")
        if out:
            sp.add_argument("--out", help="output CSV path (default: config 'out')")
            sp.add_argument("--no-wall-time", action="store_true", help="write wall_ms as 0 for byte-stable CSVs")

    for name, fn, text in (("run", cmd_run, "one run as configured"),
                           ("baseline", cmd_baseline, "one non-private run")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--json-trace", nargs="?", const="auto", help="also write the per-iteration trace")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("sweep", help="run the configured sweep")
    common(sp)
    sp.add_argument("--workers", type=int, default=1, help="worker processes for sweep points")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify", help="run a verification battery")
    sp.add_argument("which", choices=[*harness.BATTERIES, "all"])
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("verify-sensitivity", help="adjacent-spec probe and local battery as JSON")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials", type=int, default=10_000)
    sp.add_argument("--local", type=int, default=2000, help="instances in the local battery")
    sp.add_argument("--horizon", type=int, default=52)
    sp.add_argument("--delta-r", type=float, default=13.2)
    sp.add_argument("--delta-E", type=float, default=12.0)
    sp.set_defaults(func=cmd_verify_sensitivity)

    sp = sub.add_parser("dump-specs", help="write the scenario's group specs as CSV")
    common(sp)
    sp.set_defaults(func=cmd_dump_specs)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DPDCOError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
