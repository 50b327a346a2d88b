"""Command-line front end: ``price``, ``sweep``, ``compare`` and ``validate``.

Exit codes: 0 success, 1 validation failure, 2 bad config or arguments,
3 too many failed estimator runs (a partial record is still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import subprocess
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, Experiment, load_experiment
from .stats import (MAX_FAILURE_RATE, ReplicationSummary, cv_ratio_table, fit_complexity,
                    fit_inverse_probability_exponent, fixed_cv_cost, fixed_cv_mse, replicate)

SWEEP_COLUMNS = ["sigma", "lower", "upper", "method", "runs", "p_hat_mean", "p_hat_cv",
                 "price_mean", "price_cv", "mean_total_samples", "failures"]
COMPARE_COLUMNS = ["sigma", "lower", "upper", "method_a", "method_b", "p_hat_cv_ratio",
                   "price_cv_ratio"]


class ExperimentFailed(RuntimeError):
    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


def build_id() -> str:
    """``git describe`` of the source tree, or the package version outside git."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"artifact-{__version__}"


def fmt(x) -> str:
    """CSV field: integers as-is, floats with 17 significant digits."""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_csv(rows: list[dict], columns: list[str], path: str | None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row[c]) for c in columns])
    text = buf.getvalue()
    if path:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def write_json(record: dict, path: str | None) -> None:
    if path:
        text = json.dumps(_json_safe(record), indent=2, sort_keys=True, allow_nan=False)
        Path(path).write_text(text + "\n", encoding="utf-8")


def summary_record(label: str, s: ReplicationSummary) -> dict:
    return {
        "method": label,
        "runs": s.n_runs,
        "failures": s.n_failures,
        "p_hat_mean": s.mean_p,
        "p_hat_cv": s.cv_p,
        "price_mean": s.mean_price,
        "price_cv": s.cv_price,
        "mean_total_samples": s.mean_total_samples,
        "mse_price": s.mse_price,
        "bias_price": s.bias_price,
        "flagged": s.any_flagged,
        "errors": sorted({r.error for r in s.records if r.error}),
    }


def run_point(exp: Experiment, point) -> dict[str, ReplicationSummary]:
    """Replicate every method at one grid point (SubSim first when MCS matches it)."""
    order = sorted(range(len(exp.methods)), key=lambda i: not exp.methods[i].name == "subsim")
    out: dict[str, ReplicationSummary] = {}
    matched = None
    for i in order:
        spec = exp.methods[i]
        cfg = spec.build(matched_m=matched)
        summary = replicate(spec.name, cfg, point.params, point.contract, exp.runs, exp.seed,
                            workers=exp.workers, reference=exp.reference)
        if spec.name == "subsim" and matched is None and math.isfinite(summary.mean_total_samples):
            matched = int(round(summary.mean_total_samples))
        out[spec.label] = summary
    return {spec.label: out[spec.label] for spec in exp.methods}


def _base_record(exp: Experiment) -> dict:
    return {"build": build_id(), "seed": exp.seed, "config": exp.resolved(), "status": "ok"}


def _run_grid(exp: Experiment):
    record = _base_record(exp)
    record["points"] = []
    results = []
    for point in exp.points:
        sums = run_point(exp, point)
        results.append(sums)
        record["points"].append({**point.key,
                                 "results": [summary_record(k, v) for k, v in sums.items()]})
        bad = [k for k, v in sums.items() if v.failure_rate > MAX_FAILURE_RATE]
        if bad:
            record["status"] = "failed"
            record["error"] = (f"failure rate above {MAX_FAILURE_RATE:.0%} for {', '.join(bad)} "
                               f"at sigma={point.params.sigma:g}")
            raise ExperimentFailed(record["error"], record)
    return record, results


def cmd_price(exp: Experiment, args) -> int:
    if len(exp.points) != 1:
        raise ConfigError("price expects a single grid point; use sweep for grids", "sweep")
    try:
        record, results = _run_grid(exp)
    except ExperimentFailed as exc:
        write_json(exc.record, args.out)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    for label, s in results[0].items():
        flag = " (flagged)" if s.any_flagged else ""
        print(f"{label}: p_hat={s.mean_p:.4e} cv={s.cv_p:.4f} price={s.mean_price:.4e} "
              f"cv={s.cv_price:.4f} samples={s.mean_total_samples:.6g} "
              f"runs={s.n_runs} failures={s.n_failures}{flag}")
    write_json(record, args.out)
    return 0


def sweep_rows(exp: Experiment, results) -> list[dict]:
    rows = []
    for point, sums in zip(exp.points, results):
        for label, s in sums.items():
            rows.append({**point.key, "method": label, "runs": s.n_runs, "p_hat_mean": s.mean_p,
                         "p_hat_cv": s.cv_p, "price_mean": s.mean_price, "price_cv": s.cv_price,
                         "mean_total_samples": s.mean_total_samples, "failures": s.n_failures})
    return rows


def complexity_fits(exp: Experiment, results, target_cv: float) -> dict:
    """Scaling fits over the grid: SubSim MSE and cost, MCS fixed-CV cost."""
    out = {"target_cv": target_cv}
    for spec in exp.methods:
        sums = [r[spec.label] for r in results]
        p = [s.mean_p for s in sums]
        cost = [fixed_cv_cost(s, target_cv) for s in sums]
        if spec.name == "subsim":
            m = spec.build().m
            mse_scale = [fixed_cv_mse(s, target_cv, m) for s in sums]
            out[spec.label] = {"k_exp": fit_complexity(p, mse_scale, "mse").k_exp,
                               "r_exp": fit_complexity(p, cost, "cost").r_exp}
        elif spec.name == "mcs":
            out[spec.label] = {"inverse_p_exponent": fit_inverse_probability_exponent(p, cost)}
    return out


def cmd_sweep(exp: Experiment, args) -> int:
    try:
        record, results = _run_grid(exp)
    except ExperimentFailed as exc:
        write_json(exc.record, _sidecar(args.out, ".json"))
        print(f"error: {exc}", file=sys.stderr)
        return 3
    text = write_csv(sweep_rows(exp, results), SWEEP_COLUMNS, args.out)
    if not args.out:
        sys.stdout.write(text)
    block = exp.raw.get("complexity")
    if block:
        record["complexity"] = complexity_fits(exp, results, float(block.get("target_cv", 0.1)))
    write_json(record, _sidecar(args.out, ".json"))
    return 0


def cmd_compare(exp: Experiment, args) -> int:
    if len(exp.methods) < 2:
        raise ConfigError("compare needs at least two methods", "methods")
    try:
        record, results = _run_grid(exp)
    except ExperimentFailed as exc:
        write_json(exc.record, _sidecar(args.out, ".json"))
        print(f"error: {exc}", file=sys.stderr)
        return 3
    labels = [m.label for m in exp.methods]
    by_method = {lab: [r[lab] for r in results] for lab in labels}
    rows = cv_ratio_table([p.key for p in exp.points], by_method)
    text = write_csv(rows, COMPARE_COLUMNS, args.out)
    if not args.out:
        sys.stdout.write(text)
    write_json(record, _sidecar(args.out, ".json"))
    return 0


def _sidecar(path: str | None, suffix: str) -> str | None:
    return str(Path(path).with_suffix(suffix)) if path else None


def cmd_validate(args) -> int:
    from . import validation

    try:
        outcomes = validation.run_suites(args.suite)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    for name, ok, detail in outcomes:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if all(ok for _, ok, _ in outcomes) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="barrier-subsim",
        description="Double knock-out call pricing with Monte Carlo, Subset Simulation and MLMC.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [("price", "replicate every configured method at one point"),
                            ("sweep", "replicate over the sweep grid and write CSV"),
                            ("compare", "CV ratios between configured methods")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--out", help="output path (JSON for price, CSV otherwise)")
        p.add_argument("--seed", type=int, help="master seed (default: config, then $RB_SEED)")
        p.add_argument("--runs", type=int, help="replications per method")
        p.add_argument("--workers", type=int, help="concurrent replications")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config leaf by dotted path (repeatable)")
    v = sub.add_parser("validate", help="run the built-in oracle and invariant suites")
    v.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    return parser


def _overrides(args) -> list[str]:
    items = list(args.set)
    if args.seed is not None:
        items.append(f"seed={args.seed}")
    if args.runs is not None:
        items.append(f"runs={args.runs}")
    if args.workers is not None:
        items.append(f"workers={args.workers}")
    return items


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "validate":
        return cmd_validate(args)
    try:
        overrides = _overrides(args)
        if args.seed is None and os.environ.get("RB_SEED"):
            from .config import load_text
            cfg, _ = load_text(args.config)
            if "seed" not in cfg:
                try:
                    overrides.insert(0, f"seed={int(os.environ['RB_SEED'])}")
                except ValueError:
                    raise ConfigError("RB_SEED must be an integer", "seed") from None
        exp = load_experiment(args.config, overrides)
        handler = {"price": cmd_price, "sweep": cmd_sweep, "compare": cmd_compare}[args.command]
        return handler(exp, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
