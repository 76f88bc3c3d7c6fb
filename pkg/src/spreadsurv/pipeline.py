"""Per-day pipeline and multi-day aggregation into plot-ready tables."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .aft import FitResult, InvalidSurvivalData, SurvivalData, fit_mle
from .covariates import (
    COVARIATE_NAMES, DesignMatrix, DesignParams, NoEpisodes, TooFewRows, build_design_matrix,
    pairwise_correlations, standardize,
)
from .deviations import (
    WINDOW_MARGIN_US, Threshold, compute_threshold, extract_episodes, spread_samples,
    write_episodes,
)
from .ingest import DayLog, parse_event_log, serialize_event_log
from .selection import InsufficientData, SelectionReport, best_subset_per_size, finalize_selection
from .synthetic import SyntheticConfig, generate_synthetic_day

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    inputs: list[Path] = field(default_factory=list)
    synthetic: Optional[SyntheticConfig] = None
    synthetic_days: int = 0
    threshold: Optional[int] = None
    reference_day: Optional[Path] = None
    t0_offset_us: int = WINDOW_MARGIN_US
    td_offset_us: int = WINDOW_MARGIN_US
    design: DesignParams = DesignParams()
    alpha: float = 0.05
    out_dir: Path = Path("out")
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        if bool(self.inputs) == (self.synthetic is not None and self.synthetic_days > 0):
            raise ValueError("give either input files or a synthetic configuration, not both")
        if self.threshold is not None and self.reference_day is not None:
            raise ValueError("give either an explicit threshold or a reference day")
        if self.threshold is not None and self.threshold < 1:
            raise ValueError("threshold must be >= 1 tick")
        if self.t0_offset_us < 0 or self.td_offset_us < 0 or self.jobs < 1:
            raise ValueError("offsets must be non-negative and jobs >= 1")
        d = self.design
        if not (0 <= d.ewl_weight and d.ewl_lags >= 0 and d.ewl_interval_us > 0
                and d.prevexceed_window_us >= 0 and d.levels >= 1):
            raise ValueError("bad covariate parameters")


@dataclass
class DayReport:
    date: str
    threshold: int
    n_episodes: int
    n_censored: int
    dropped: int = 0
    covariates: list[str] = field(default_factory=list)
    full_fit: Optional[FitResult] = None
    selection: Optional[SelectionReport] = None
    correlations: Optional[np.ndarray] = None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "date": self.date,
            "threshold": self.threshold,
            "n_episodes": self.n_episodes,
            "n_censored": self.n_censored,
            "dropped": self.dropped,
            "covariates": self.covariates,
            "full_fit": None if self.full_fit is None else self.full_fit.to_dict(),
            "selection": None if self.selection is None else self.selection.to_dict(),
            "correlations": None if self.correlations is None else self.correlations.tolist(),
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DayReport":
        """Rebuild enough of a report for aggregation (selection is kept as a dict)."""
        rep = cls(d["date"], d["threshold"], d["n_episodes"], d["n_censored"], d["dropped"],
                  d["covariates"], note=d.get("note", ""))
        if d["full_fit"] is not None:
            rep.full_fit = FitResult.from_dict(d["full_fit"])
        if d["correlations"] is not None:
            rep.correlations = np.array(d["correlations"], dtype=float)
        rep._selection_dict = d["selection"]
        return rep

    def selection_dict(self) -> Optional[dict]:
        if self.selection is not None:
            return self.selection.to_dict()
        return getattr(self, "_selection_dict", None)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _cell(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def threshold_from_reference(path: Union[str, Path, DayLog]) -> Threshold:
    day = path if isinstance(path, DayLog) else parse_event_log(path, Path(path).stem)[0]
    return compute_threshold(spread_samples(day))


def load_day(source: Union[str, Path, DayLog]) -> DayLog:
    if isinstance(source, DayLog):
        return source
    day, report = parse_event_log(source, Path(source).stem)
    if report.has_findings:
        logger.warning("%s: %d malformed lines, %d unknown ids", source,
                       report.malformed_lines, report.unknown_ids)
    return day


def prepare_design(day: DayLog, episodes, params: DesignParams):
    """Raw design, its standardized form, and the indices of usable columns."""
    raw = build_design_matrix(day, episodes, params)
    std = standardize(raw)
    usable = [j for j in range(len(raw.names)) if not std.degenerate[j]]
    return raw, std, usable


def fit_full_model(std: DesignMatrix, usable: Sequence[int], alpha: float = 0.05) -> FitResult:
    names = [std.names[j] for j in usable]
    data = SurvivalData.from_covariates(std.X[:, usable], std.y, std.censored, names)
    return fit_mle(data, alpha=alpha)


def select_model(std: DesignMatrix, usable: Sequence[int], alpha: float = 0.05) -> SelectionReport:
    names = [std.names[j] for j in usable]
    Xs = std.X[:, usable]
    unc = ~std.censored
    search = best_subset_per_size(Xs[unc], std.y[unc])
    data = SurvivalData.from_covariates(Xs, std.y, std.censored, names)
    return finalize_selection(search, data, names, alpha)


def run_daily_pipeline(
    source: Union[str, Path, DayLog],
    cfg: RunConfig,
    threshold: Threshold,
    out_dir: Optional[Path] = None,
) -> DayReport:
    """Episodes, design, full fit, subset selection and correlations for one day.

    Artifacts go to ``out_dir`` when given. A day without enough episodes
    yields a report with empty statistics.
    """
    day = load_day(source)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    t0 = day.session_start + cfg.t0_offset_us
    td = day.session_end - cfg.td_offset_us
    episodes = extract_episodes(day, threshold, t0, td) if t0 < td else []
    report = DayReport(day.date, threshold.c, len(episodes), sum(e.censored for e in episodes),
                       covariates=list(COVARIATE_NAMES))
    if out_dir is not None:
        write_episodes(episodes, out_dir / "episodes.csv")

    try:
        raw, std, usable = prepare_design(day, episodes, cfg.design)
        report.dropped = raw.dropped
        if out_dir is not None:
            raw.to_csv(out_dir / "design.csv")
        report.correlations = pairwise_correlations(std)
        report.full_fit = fit_full_model(std, usable, cfg.alpha)
        report.selection = select_model(std, usable, cfg.alpha)
    except (NoEpisodes, TooFewRows, InvalidSurvivalData, InsufficientData) as exc:
        report.note = f"{type(exc).__name__}: {exc}"
        logger.info("%s: statistics skipped (%s)", day.date, report.note)

    if out_dir is not None:
        if report.full_fit is not None:
            (out_dir / "fit.json").write_text(report.full_fit.to_json() + "\n", encoding="utf-8")
        if report.selection is not None:
            (out_dir / "selection.json").write_text(report.selection.to_json() + "\n", encoding="utf-8")
            report.selection.write_presence_csv(out_dir / "presence.csv")
        if report.correlations is not None:
            _write_csv(out_dir / "correlations.csv", ["covariate"] + COVARIATE_NAMES,
                       [[n] + [_cell(v) for v in row] for n, row in zip(COVARIATE_NAMES, report.correlations)])
        _write_json(out_dir / "day_report.json", report.to_dict())
    return report


# -- aggregation ----------------------------------------------------------------


def _coef_by_name(fit: FitResult) -> dict[str, float]:
    return {n: float(b) for n, b in zip(fit.names[1:], fit.beta[1:])}


def aggregate_days(reports: Sequence[DayReport]) -> dict[str, tuple[list[str], list[list[str]]]]:
    """Multi-day tables keyed by file stem: (header, rows)."""
    names = list(COVARIATE_NAMES)
    adj_rows, coef_rows, best_rows = [], [], []
    counts = {n: 0 for n in names}
    sig_counts = {n: 0 for n in names}
    corr_sum = np.zeros((len(names), len(names)))
    corr_days = 0

    for rep in reports:
        sel = rep.selection_dict()
        best = None
        if sel is not None and sel["overall_best"] is not None:
            best = sel["per_size"][sel["overall_best"] - 1]
        fit = rep.full_fit
        adj_rows.append([
            rep.date, rep.n_episodes, rep.n_censored,
            _cell(fit.r2 if fit else None), _cell(fit.adj_r2 if fit else None),
            _cell(best["size"] if best else None), _cell(best["adj_r2"] if best else None),
        ])
        coefs = _coef_by_name(fit) if fit else {}
        coef_rows.append([rep.date] + [_cell(coefs.get(n)) for n in names])
        if best is not None:
            for name, b, sig in zip(best["mask"], best["beta"][1:], best["significant"]):
                counts[name] += 1
                sig_counts[name] += int(sig)
                best_rows.append([rep.date, name, _cell(b), int(sig)])
        if rep.correlations is not None:
            corr_sum += rep.correlations
            corr_days += 1

    tables = {
        "adj_r2_series": (
            ["date", "n_episodes", "n_censored", "full_r2", "full_adj_r2", "best_size", "best_adj_r2"],
            [[_cell(v) for v in row] for row in adj_rows],
        ),
        "coefficient_series": (["date"] + names, coef_rows),
        "best_model_coefficients": (["date", "covariate", "coefficient", "significant"],
                                    [[_cell(v) for v in row] for row in best_rows]),
        "selection_counts": (["covariate", "selected", "significant"],
                             [[n, counts[n], sig_counts[n]] for n in names]),
    }
    if corr_days:
        mean = corr_sum / corr_days
        tables["mean_correlations"] = (
            ["covariate"] + names, [[n] + [_cell(v) for v in row] for n, row in zip(names, mean)])
    else:
        tables["mean_correlations"] = (["covariate"] + names, [])
    return tables


def write_tables(tables, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for stem, (header, rows) in tables.items():
        _write_csv(out_dir / f"{stem}.csv", header, [[_cell(v) for v in row] for row in rows])


def load_day_reports(dirs: Sequence[Union[str, Path]]) -> list[DayReport]:
    out = []
    for d in dirs:
        path = Path(d)
        if path.is_dir():
            path = path / "day_report.json"
        out.append(DayReport.from_dict(json.loads(path.read_text(encoding="utf-8"))))
    return out


# -- run-all --------------------------------------------------------------------


def _day_job(args) -> DayReport:
    source, cfg, threshold, out_dir = args
    return run_daily_pipeline(source, cfg, threshold, out_dir)


def run_all(cfg: RunConfig) -> list[DayReport]:
    """Every day through the pipeline, then the aggregate tables; days run in date order."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    sources: list[Union[Path, DayLog]]
    if cfg.inputs:
        sources = sorted(Path(p) for p in cfg.inputs)
    else:
        sources = []
        days_dir = out / "days"
        days_dir.mkdir(exist_ok=True)
        for i in range(cfg.synthetic_days):
            scfg = SyntheticConfig(**{**cfg.synthetic.__dict__, "seed": cfg.seed + i})
            day = generate_synthetic_day(scfg, date=f"synth-{i:03d}")
            path = days_dir / f"{day.date}.csv"
            serialize_event_log(day, path)
            sources.append(path)

    if cfg.threshold is not None:
        threshold = Threshold(cfg.threshold)
    else:
        ref = cfg.reference_day if cfg.reference_day is not None else sources[0]
        threshold = threshold_from_reference(ref)
    _write_json(out / "threshold.json", {"c": threshold.c, "source": threshold.source})

    jobs = [(src, cfg, threshold, out / "per_day" / Path(src).stem) for src in sources]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            reports = list(pool.map(_day_job, jobs))
    else:
        reports = [_day_job(j) for j in jobs]

    write_tables(aggregate_days(reports), out / "aggregate")
    return reports
