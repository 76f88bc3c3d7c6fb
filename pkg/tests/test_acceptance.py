"""Acceptance criteria, one test and one PASS/FAIL summary line each."""

import io
import math
import time
from pathlib import Path

import numpy as np
import pytest

from spreadsurv.aft import SurvivalData, fit_mle, gradient
from spreadsurv.book import ASK, BID, sweep
from spreadsurv.covariates import DesignParams
from spreadsurv.cli import main
from spreadsurv import deviations
from spreadsurv.deviations import MIN_DURATION_US, extract_episodes
from spreadsurv.ingest import parse_event_log, serialize_event_log
from spreadsurv.pipeline import fit_full_model, prepare_design
from spreadsurv.selection import best_subset_per_size, exhaustive_subsets
from spreadsurv.synthetic import SyntheticConfig, generate_synthetic_day

from conftest import ACCEPTANCE_LINES, submit
from test_aft import fd_gradient, simulate
from test_deviations import brute_force_episodes


def record(number, title, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})")
    assert ok, detail


def test_1_gradient_matches_finite_differences():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        data, beta = simulate(seed, n=200, k=5, cens=0.2)
        rng = np.random.default_rng(1000 + seed)
        b = beta + rng.normal(scale=0.3, size=beta.size)
        sigma = float(rng.uniform(0.5, 2.0))
        gb, gs = gradient(b, sigma, data)
        g = np.append(gb, gs)
        fd = fd_gradient(b, sigma, data)
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(g)))))
    elapsed = time.perf_counter() - start
    record(1, "gradient vs central differences", worst < 1e-6 and elapsed < 10,
           f"max relative error {worst:.2e}, {elapsed:.2f} s")


def test_2_closed_form_agreement():
    worst_beta = worst_s2 = 0.0
    for seed in range(10):
        data, _ = simulate(seed, n=500, k=5, cens=0.0)
        fit = fit_mle(data)
        ols, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
        resid = data.y - data.X @ ols
        worst_beta = max(worst_beta, float(np.max(np.abs(fit.beta - ols))))
        worst_s2 = max(worst_s2, abs(fit.sigma ** 2 - float(resid @ resid) / resid.size))
    rng = np.random.default_rng(42)
    y = rng.normal(-0.5, 1.3, size=1000)
    fit = fit_mle(SurvivalData(np.ones((1000, 1)), y, np.zeros(1000, bool)))
    icpt = max(abs(fit.beta[0] - y.mean()), abs(fit.sigma - y.std()))
    ok = worst_beta <= 1e-6 and worst_s2 <= 1e-6 and icpt <= 1e-9
    record(2, "zero censoring equals OLS; intercept-only closed form", ok,
           f"beta {worst_beta:.1e}, sigma^2 {worst_s2:.1e}, intercept-only {icpt:.1e}")


def _recovery_run(seed, cens_share):
    rng = np.random.default_rng(seed)
    n, k, sigma = 5000, 8, 0.8
    X = rng.normal(size=(n, k))
    beta = np.append(1.0, rng.uniform(-0.5, 0.5, size=k))
    log_t = beta[0] + X @ beta[1:] + sigma * rng.normal(size=n)
    if cens_share == 0:
        y, cens = log_t, np.zeros(n, bool)
    else:
        # independent censoring times; the offset gives P(C < T) = cens_share
        spread = math.sqrt(sigma ** 2 + 1.0)
        offset = -spread * float(np.quantile(rng.normal(size=200_000), cens_share))
        log_c = beta[0] + X @ beta[1:] + offset + rng.normal(size=n)
        cens = log_c < log_t
        y = np.where(cens, log_c, log_t)
    fit = fit_mle(SurvivalData.from_covariates(X, y, cens))
    inside = np.abs(fit.beta - beta) <= 3 * fit.std_errors
    return fit.converged and bool(inside.all()), float(cens.mean()), inside


def test_3_parameter_recovery():
    start = time.perf_counter()
    hits = {}
    shares = {}
    worst_coef = {}
    for level in (0.0, 0.3):
        results = [_recovery_run(500 + seed, level) for seed in range(40)]
        hits[level] = sum(ok for ok, _, _ in results)
        shares[level] = np.mean([s for _, s, _ in results])
        # coverage of the least-covered single coefficient, for the record
        worst_coef[level] = int(np.min(np.sum([inside for _, _, inside in results], axis=0)))
    elapsed = time.perf_counter() - start
    # every coefficient of a run inside 3 SE at once, in >= 38 of 40 runs
    ok = all(h >= 38 for h in hits.values()) and elapsed < 60
    record(3, "coefficients within 3 SE of truth", ok,
           f"all 9 at once: 0% censored {hits[0.0]}/40, {shares[0.3]:.0%} censored {hits[0.3]}/40; "
           f"worst single coefficient {worst_coef[0.0]}/40 and {worst_coef[0.3]}/40; {elapsed:.1f} s")


def test_4_branch_and_bound_is_exact():
    start = time.perf_counter()
    mismatches = 0
    nodes = full = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        p = 4 + seed % 9
        n = int(rng.integers(p + 10, 200))
        X = rng.normal(size=(n, p))
        X[:, 1:] += rng.uniform(0, 0.8) * X[:, :-1]
        y = X @ (rng.normal(size=p) * (rng.random(p) < 0.6)) + rng.normal(size=n)
        bb, ex = best_subset_per_size(X, y), exhaustive_subsets(X, y)
        same = ([b.columns for b in bb.best] == [b.columns for b in ex.best]
                and [b.r2 for b in bb.best] == [b.r2 for b in ex.best])
        mismatches += not same
        nodes += bb.evaluated
        full += ex.evaluated
    elapsed = time.perf_counter() - start
    record(4, "branch and bound equals exhaustive search", mismatches == 0 and elapsed < 60,
           f"{50 - mismatches}/50 identical, {nodes}/{full} nodes, {elapsed:.1f} s")


def _nest_failures(day, c, t0, td):
    lo, hi = extract_episodes(day, c, t0, td), extract_episodes(day, c + 1, t0, td)
    return sum(not any(o.start_time <= e.start_time and e.end_time <= o.end_time for o in lo) for e in hi)


def test_5_extraction_oracle(monkeypatch):
    mismatches = 0
    nest_fail = 0
    floor_overhang = 0
    episodes = floored = censored = 0
    for seed in range(20):
        day = generate_synthetic_day(SyntheticConfig(seed=300 + seed, event_count=8000, shock_rate=0.3))
        c = 1 + seed % 2
        t0 = day.events[0].timestamp
        full = extract_episodes(day, c, t0, day.events[-1].timestamp)
        # end the window inside an episode so censoring is exercised
        long_eps = [e for e in full if e.observed_time > 2]
        mid = long_eps[len(long_eps) // 2]
        td = mid.start_time + mid.observed_time // 2
        got = extract_episodes(day, c, t0, td)
        ref = brute_force_episodes(day, c, t0, td)
        mismatches += [(e.start_time, e.observed_time, e.censored) for e in got] != ref
        episodes += len(got)
        floored += sum(e.observed_time == MIN_DURATION_US and not e.censored for e in got)
        censored += sum(e.censored for e in got)
        floor_overhang += _nest_failures(day, c, t0, td)
        # nesting is a statement about event-time intervals, so the floor is switched off
        with monkeypatch.context() as m:
            m.setattr(deviations, "MIN_DURATION_US", 0)
            nest_fail += _nest_failures(day, c, t0, td)
    ok = mismatches == 0 and nest_fail == 0 and floored > 0 and censored == 20
    record(5, "episodes equal brute-force scan; threshold nesting", ok,
           f"{20 - mismatches}/20 days equal, {episodes} episodes, {floored} floored, "
           f"{censored} censored, {nest_fail} nesting failures, "
           f"{floor_overhang} floored episodes overhang by the 100 us floor")


def test_6_book_mechanics(fig1_book):
    trades = [(e.size, e.price) for e in sweep(fig1_book, BID, 200, 10_000, 7)]
    fig1_book.apply(submit(10_000, "s300", ASK, 2705, 300, seq=7))
    queue = [o.order_id for o in fig1_book.level_orders(ASK, 2705)]
    ok = trades == [(70, 2702), (100, 2702), (30, 2704)] and queue.index("s300") == 1
    record(6, "market buy 200 and queue priority", ok, f"trades {trades}, 300@2705 at queue position {queue.index('s300') + 1}")


def test_7_sign_structure():
    start = time.perf_counter()
    agree = 0
    converged = 0
    for seed in range(20):
        day = generate_synthetic_day(SyntheticConfig(seed=900 + seed, event_count=60_000, shock_rate=0.1))
        eps = extract_episodes(day, 2)
        raw, std, usable = prepare_design(day, eps, DesignParams())
        fit = fit_full_model(std, usable)
        coef = dict(zip(fit.names, fit.beta))
        converged += fit.converged
        agree += fit.converged and coef.get("spreads", 0) > 0 and coef.get("prevexceed", 0) < 0
    elapsed = time.perf_counter() - start
    record(7, "spreads positive, prevexceed negative", agree >= 18,
           f"{agree}/20 days, {converged} converged, {elapsed:.1f} s")


def test_8_throughput():
    day = generate_synthetic_day(SyntheticConfig(seed=8, event_count=250_000))
    buf = io.StringIO()
    serialize_event_log(day, buf)
    raw = buf.getvalue().encode()
    start = time.perf_counter()
    parsed, report = parse_event_log(raw)
    eps = extract_episodes(parsed, 2)
    elapsed = time.perf_counter() - start
    ok = elapsed < 5 and len(parsed.events) == 250_000 and report.malformed_lines == 0
    record(8, "250k-event ingest, replay and extraction", ok, f"{elapsed:.2f} s, {len(eps)} episodes")


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_9_run_all_is_deterministic(tmp_path):
    trees = []
    for name in ("a", "b"):
        args = ["run-all", "--synthetic-days", "2", "--seed", "1", "--event-count", "20000",
                "--shock-rate", "0.1", "--out-dir", str(tmp_path / name)]
        assert main(args) == 0
        trees.append(_tree(tmp_path / name))
    differing = [k for k in trees[0] if trees[0].get(k) != trees[1].get(k)]
    ok = trees[0].keys() == trees[1].keys() and not differing and len(trees[0]) > 10
    record(9, "run-all output trees byte-identical", ok, f"{len(trees[0])} files, {len(differing)} differ")
