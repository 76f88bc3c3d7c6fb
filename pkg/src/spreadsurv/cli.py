"""Command line entry point.

Exit codes: 0 success, 2 validation findings, 1 hard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .covariates import DesignParams
from .deviations import Threshold, extract_episodes, write_episodes
from .ingest import parse_event_log, serialize_event_log, validate_log
from .pipeline import (
    RunConfig, aggregate_days, fit_full_model, load_day, load_day_reports, prepare_design,
    run_all, select_model, threshold_from_reference, write_tables,
)
from .synthetic import SyntheticConfig, generate_synthetic_day

log = logging.getLogger("spreadsurv")


def _add_threshold(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--threshold", type=int, help="explicit threshold c in ticks")
    g.add_argument("--reference-day", type=Path, help="event CSV whose median spread sets c")


def _add_window(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t0-offset-s", type=float, default=60.0, help="window start after session open")
    p.add_argument("--td-offset-s", type=float, default=60.0, help="window end before session close")


def _add_design(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ewl-weight", type=float, default=0.75)
    p.add_argument("--ewl-lags", type=int, default=5)
    p.add_argument("--ewl-interval-s", type=float, default=1.0)
    p.add_argument("--prevexceed-window-s", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.05)


def _add_synth(p: argparse.ArgumentParser) -> None:
    p.add_argument("--event-count", type=int, default=200_000)
    p.add_argument("--exec-fraction", type=float, default=SyntheticConfig.exec_fraction)
    p.add_argument("--shock-rate", type=float, default=SyntheticConfig.shock_rate,
                   help="shocks per second")


def _threshold(args) -> Threshold:
    if args.threshold is not None:
        return Threshold(args.threshold)
    return threshold_from_reference(args.reference_day)


def _run_config(args, **extra) -> RunConfig:
    return RunConfig(
        t0_offset_us=round(args.t0_offset_s * 1e6),
        td_offset_us=round(args.td_offset_s * 1e6),
        design=DesignParams(
            ewl_weight=args.ewl_weight,
            ewl_lags=args.ewl_lags,
            ewl_interval_us=round(args.ewl_interval_s * 1e6),
            prevexceed_window_us=round(args.prevexceed_window_s * 1e6),
        ),
        alpha=args.alpha,
        **extra,
    )


def cmd_ingest_validate(args) -> int:
    findings = False
    for path in args.files:
        day, parse_report = parse_event_log(path, path.stem)
        report = validate_log(day)
        report.malformed_lines = parse_report.malformed_lines
        report.problems = parse_report.problems + report.problems
        findings |= report.has_findings
        print(json.dumps({"file": str(path), **report.to_dict()}, indent=2))
        for line in report.problems[: args.show]:
            log.warning("%s: %s", path, line)
    return 2 if findings else 0


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(seed=args.seed, event_count=args.event_count,
                          exec_fraction=args.exec_fraction, shock_rate=args.shock_rate)
    day = generate_synthetic_day(cfg, date=args.out.stem)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    serialize_event_log(day, args.out)
    log.info("wrote %d events to %s", len(day.events), args.out)
    return 0


def cmd_extract(args) -> int:
    day = load_day(args.file)
    c = _threshold(args)
    t0 = day.session_start + round(args.t0_offset_s * 1e6)
    td = day.session_end - round(args.td_offset_s * 1e6)
    episodes = extract_episodes(day, c, t0, td)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_episodes(episodes, args.out_dir / "episodes.csv")
    (args.out_dir / "threshold.json").write_text(
        json.dumps({"c": c.c, "source": c.source}, indent=2) + "\n", encoding="utf-8")
    log.info("%d episodes (%d censored) at c=%d", len(episodes), sum(e.censored for e in episodes), c.c)
    return 0


def _design_for(args):
    day = load_day(args.file)
    c = _threshold(args)
    cfg = _run_config(args)
    t0 = day.session_start + cfg.t0_offset_us
    td = day.session_end - cfg.td_offset_us
    episodes = extract_episodes(day, c, t0, td)
    return cfg, prepare_design(day, episodes, cfg.design)


def cmd_fit(args) -> int:
    cfg, (raw, std, usable) = _design_for(args)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    raw.to_csv(args.out_dir / "design.csv")
    fit = fit_full_model(std, usable, cfg.alpha)
    (args.out_dir / "fit.json").write_text(fit.to_json() + "\n", encoding="utf-8")
    print(fit.to_json())
    return 0 if fit.converged else 1


def cmd_select(args) -> int:
    cfg, (raw, std, usable) = _design_for(args)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    report = select_model(std, usable, cfg.alpha)
    (args.out_dir / "selection.json").write_text(report.to_json() + "\n", encoding="utf-8")
    report.write_presence_csv(args.out_dir / "presence.csv")
    best = report.best
    if best is not None:
        log.info("best size %d, adjusted R2 %.4f", best.size, best.adj_r2)
    return 0


def cmd_report(args) -> int:
    reports = load_day_reports(args.day_dirs)
    write_tables(aggregate_days(reports), args.out_dir)
    return 0


def cmd_run_all(args) -> int:
    extra = dict(out_dir=args.out_dir, seed=args.seed, jobs=args.jobs,
                 threshold=args.threshold, reference_day=args.reference_day)
    if args.files:
        extra["inputs"] = list(args.files)
    else:
        extra["synthetic"] = SyntheticConfig(event_count=args.event_count,
                                             exec_fraction=args.exec_fraction,
                                             shock_rate=args.shock_rate)
        extra["synthetic_days"] = args.synthetic_days
    reports = run_all(_run_config(args, **extra))
    for r in reports:
        adj = r.full_fit.adj_r2 if r.full_fit is not None else None
        log.info("%s: %d episodes, full-model adjusted R2 %s", r.date, r.n_episodes, adj)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spreadsurv", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-validate", help="parse and replay event CSVs")
    p.add_argument("files", nargs="+", type=Path)
    p.add_argument("--show", type=int, default=10, help="problems to print per file")
    p.set_defaults(func=cmd_ingest_validate)

    p = sub.add_parser("synth", help="write a synthetic day")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_synth(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="spread-deviation episodes for one day")
    p.add_argument("file", type=Path)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_threshold(p)
    _add_window(p)
    p.set_defaults(func=cmd_extract)

    for name, func, help_ in (("fit", cmd_fit, "full-model censored AFT fit for one day"),
                              ("select", cmd_select, "best-subset selection for one day")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("file", type=Path)
        p.add_argument("--out-dir", type=Path, required=True)
        _add_threshold(p)
        _add_window(p)
        _add_design(p)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="aggregate per-day outputs into multi-day tables")
    p.add_argument("day_dirs", nargs="+", type=Path)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run-all", help="full pipeline over event files or synthetic days")
    p.add_argument("files", nargs="*", type=Path)
    p.add_argument("--synthetic-days", type=int, default=0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_threshold(p, required=False)
    _add_window(p)
    _add_design(p)
    _add_synth(p)
    p.set_defaults(func=cmd_run_all)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("%s: %s", type(exc).__name__, exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
