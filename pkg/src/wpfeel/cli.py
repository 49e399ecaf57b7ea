"""Command-line front end: ``wpfeel --mode analyze|simulate|validate``."""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence

from . import experiments as ex
from . import validation
from .analysis import PreconditionError
from .config import ConfigError, load_config
from .mathkit import DomainError

log = logging.getLogger("wpfeel")


def parse_seeds(text: str) -> List[int]:
    """``1,2,5`` or ``1-4`` or a mix such as ``1-3,9``."""
    seeds: List[int] = []
    try:
        for part in filter(None, (t.strip() for t in text.split(","))):
            if "-" in part:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return sorted(set(seeds))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wpfeel", description=__doc__)
    p.add_argument("--mode", required=True, choices=("analyze", "simulate", "validate"))
    p.add_argument("--config", type=Path, help="INI experiment config (analyze and simulate)")
    p.add_argument("--sweep", type=ex.parse_sweep, metavar="VAR:LO:HI:N:log|lin",
                   help=f"sweep one of {', '.join(ex.SWEEP_VARIABLES)}")
    p.add_argument("--seeds", type=parse_seeds, default=None,
                   help="comma list or ranges, e.g. 1,2 or 1-5 (default: the config seed)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--checks", default=None, help="comma list of validation checks (default: all)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _pool_map(fn: Callable, jobs: Sequence, workers: int) -> List:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def run_analyze(args) -> int:
    exp = load_config(args.config)
    ex.check_sweep(args.sweep, exp)
    points = ex.grid(exp, args.sweep)
    reports = _pool_map(ex.analytic_bound, [e for _, _, e in points], args.workers)
    rows = [(i, "" if v is None else v, r.mode) + r.csv_row() for (i, v, _), r in zip(points, reports)]
    ex.write_csv(args.out / "bounds.csv", "bounds", ex.BOUNDS_COLUMNS, rows)
    artifacts = ["bounds.csv"]
    if args.sweep is not None:
        fit = ex.fit_scaling(args.sweep.variable, [v for _, v, _ in points], reports)
        ex.write_csv(args.out / "scaling.csv", "scaling", ex.SCALING_COLUMNS, [fit])
        artifacts.append("scaling.csv")
        print(f"scaling exponent ({fit[0]}): {fit[1]} [{fit[3]}, {fit[2]} points]")
    ex.write_index(args.out, artifacts)
    print(f"wrote {len(rows)} bound rows to {args.out}")
    return 0


def run_simulate(args) -> int:
    exp = load_config(args.config)
    ex.check_sweep(args.sweep, exp)
    seeds = args.seeds or [exp.seed]
    variable = args.sweep.variable if args.sweep else None
    jobs = [(e, variable, i, v, s) for i, v, e in ex.grid(exp, args.sweep) for s in seeds]
    results = _pool_map(ex.simulate_job, jobs, args.workers)
    results.sort(key=lambda r: (r.point, r.seed))
    artifacts = []
    for r in results:
        name = ex.run_name(variable, r.point, r.seed)
        ex.write_csv(args.out / f"{name}.csv", "rounds", ex.ROUND_COLUMNS, r.rows)
        ex.write_json(args.out / f"{name}.json", r.summary)
        artifacts += [f"{name}.csv", f"{name}.json"]
    ex.write_csv(args.out / "runs.csv", "runs", ex.RUNS_COLUMNS, [r.runs_row for r in results])
    artifacts.append("runs.csv")
    ex.write_index(args.out, artifacts)
    failed = [(r, v) for r in results for v in r.violations]
    for r, v in failed:
        print(f"FAIL point {r.point} seed {r.seed}: {v}", file=sys.stderr)
    print(f"wrote {len(results)} runs to {args.out}")
    return 1 if failed else 0


def _validation_job(args):
    name, seed = args
    return validation.run_check(name, seed)


def run_validate(args) -> int:
    names = list(validation.CHECKS) if args.checks is None else [c.strip() for c in args.checks.split(",")]
    unknown = [n for n in names if n not in validation.CHECKS]
    if unknown:
        raise ConfigError(f"unknown validation check(s): {', '.join(unknown)}")
    seed = (args.seeds or [0])[0]
    results = _pool_map(_validation_job, [(n, seed) for n in names], args.workers)
    ex.write_csv(args.out / "validation.csv", "validation", validation.VALIDATION_COLUMNS,
                 [r.csv_row() for r in results])
    ex.write_index(args.out, ["validation.csv"])
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.statistic:.4g} <= {r.threshold:g} {r.detail}")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"first failed check: {failed[0].name}", file=sys.stderr)
    return 1 if failed else 0


def main(argv: Optional[Iterable[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(None if argv is None else list(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        parser.error("--workers must be at least 1")
    if args.mode != "validate" and args.config is None:
        parser.error(f"--mode {args.mode} needs --config")
    args.out.mkdir(parents=True, exist_ok=True)
    runner = {"analyze": run_analyze, "simulate": run_simulate, "validate": run_validate}[args.mode]
    try:
        return runner(args)
    except (ConfigError, ex.SweepError, PreconditionError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
