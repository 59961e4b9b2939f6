"""``oldrm`` command-line interface.

Subcommands::

    oldrm run CONFIG [--out DIR] [--seed N] [--threads K] [--set KEY=VALUE ...]
    oldrm compare CONFIG [--policies oldrm,etc] [--t-grid 100,300,...] [--out DIR]
    oldrm fit CURVE_CSV [--out FILE] [--t-min 50]

Exit codes: 0 success, 1 invalid input, 2 singular price design.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .agents import POLICY_NAMES
from .analysis import InsufficientDataError, compare_policies, fit_growth, fitted_curve
from .config import config_to_dict, load_config
from .engine import daily_csv, ir_check, regret, run, run_ensemble
from .estimator import SingularDesignError
from .model import InvalidConfigError

EXIT_OK, EXIT_INPUT, EXIT_SINGULAR = 0, 1, 2
DEFAULT_T_GRID = "100,300,1000,3000,10000"


class InputError(Exception):
    """Bad user input outside the config schema (CSV files, flag values)."""


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _metadata() -> dict:
    # the only non-deterministic content of any output
    return {
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
    }


def _load(args):
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"simulation.seed={args.seed}")
    return load_config(args.config, overrides)


def cmd_run(args) -> int:
    config = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ensemble = run_ensemble(config, threads=args.threads)
    report = regret(ensemble, config)
    ir = ir_check(ensemble, config)
    trajectory = run(config, replication=0)
    (out / "trajectory.csv").write_text(daily_csv(trajectory, report))
    doc = {
        "config": config_to_dict(config),
        "regret": report.to_dict(),
        "ir_check": ir.to_dict(),
        "trajectory": {
            "replication": 0,
            "p_o": trajectory.p_o.tolist(),
            "final_estimates": trajectory.to_dict()["final_estimates"],
        },
        "metadata": _metadata(),
    }
    (out / "report.json").write_text(_dump(doc))
    if args.trajectory_json:
        (out / "trajectory.json").write_text(_dump(trajectory.to_dict()))
    print(f"R_T = {report.total:.6g}; IR margins {['%.4g' % x for x in ir.margins]}")
    print(f"wrote {out / 'trajectory.csv'} and {out / 'report.json'}")
    return EXIT_OK


def _int_list(text: str, flag: str) -> list[int]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    try:
        return [int(s) for s in items]
    except ValueError:
        raise InvalidConfigError(flag, f"expected comma-separated integers, got {text!r}") from None


def cmd_compare(args) -> int:
    policies = [s.strip() for s in args.policies.split(",") if s.strip()]
    unknown = [p for p in policies if p not in POLICY_NAMES]
    if unknown or not policies:
        raise InvalidConfigError(
            "policies", f"unknown policy {unknown or policies!r}; valid names: {', '.join(POLICY_NAMES)}"
        )
    t_grid = _int_list(args.t_grid, "t_grid")
    if not t_grid:
        raise InvalidConfigError("t_grid", "must contain at least one horizon")
    config = _load(args)
    # validate each policy against the largest horizon before running anything
    for p in policies:
        replace(config, so_policy=p, market=replace(config.market, T=max(t_grid)))
    comp = compare_policies(config, policies, t_grid, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.csv").write_text(comp.to_csv())
    summary = comp.summary()
    summary["metadata"] = _metadata()
    (out / "summary.json").write_text(_dump(summary))
    for name, entry in summary["policies"].items():
        alpha = entry["alpha"]
        print(f"{name}: alpha = {'unavailable' if alpha is None else f'{alpha:.4f}'}")
    print(f"wrote {out / 'comparison.csv'} and {out / 'summary.json'}")
    return EXIT_OK


def read_curve(path: str | Path, t_col: str = "t", r_col: str | None = None):
    """Read ``(t, R_t)`` from a CSV with a header row.

    The regret column defaults to ``cumulative_regret`` and falls back to
    ``R``.  Raises :class:`InputError` naming the line of any bad row.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if r_col is None:
            r_col = "cumulative_regret" if "cumulative_regret" in header else "R"
        for col in (t_col, r_col):
            if col not in header:
                raise InputError(f"{path}: line 1: missing column {col!r}")
        i_t, i_r = header.index(t_col), header.index(r_col)
        t, R = [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
            try:
                t.append(float(row[i_t]))
                R.append(float(row[i_r]))
            except ValueError:
                raise InputError(f"{path}: line {line}: non-numeric value") from None
    return t, R


def cmd_fit(args) -> int:
    t, R = read_curve(args.curve, r_col=args.column)
    fit = fit_growth(t, R, t_min=args.t_min)
    header, rows = fitted_curve(t, R, fit)
    doc = {
        "fit": fit.to_dict(),
        "log2_preferred": fit.log2_preferred,
        "curve": {"columns": header, "rows": rows},
        "source": str(args.curve),
        "column": args.column or "cumulative_regret",
    }
    text = _dump(doc)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"c2 = {fit.c2:.6g}, alpha = {fit.alpha:.4f}; wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oldrm", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="JSON config file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="override simulation.seed")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads (default: all cores); results do not depend on it")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-path override, e.g. market.delta_p=0.3 (repeatable)")

    p_run = sub.add_parser("run", help="simulate one config; write trajectory.csv and report.json")
    common(p_run)
    p_run.add_argument("--trajectory-json", action="store_true",
                       help="also write the full replication-0 trajectory as JSON")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare SO policies over a grid of horizons")
    common(p_cmp)
    p_cmp.add_argument("--policies", default="oldrm,etc",
                       help=f"comma-separated, from: {', '.join(POLICY_NAMES)}")
    p_cmp.add_argument("--t-grid", default=DEFAULT_T_GRID, help="comma-separated horizons")
    p_cmp.set_defaults(func=cmd_compare)

    p_fit = sub.add_parser("fit", help="fit growth models to a regret curve CSV")
    p_fit.add_argument("curve", help="CSV with t and cumulative_regret (or R) columns")
    p_fit.add_argument("--out", help="output JSON (default: stdout)")
    p_fit.add_argument("--t-min", type=float, default=50.0)
    p_fit.add_argument("--column", help="regret column (default: cumulative_regret, else R)")
    p_fit.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except SingularDesignError:
        print("error: price perturbation delta_p must be > 0", file=sys.stderr)
        return EXIT_SINGULAR
    except InvalidConfigError as exc:
        print(f"error: invalid config field {exc.field!r}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InsufficientDataError as exc:
        print(f"error: insufficient data: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
