import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spreadsurv.aft import (
    DegenerateDof, FitResult, InvalidSurvivalData, MissingStdErrors, NonPositiveSigma, NonPositiveT,
    SurvivalData, adjusted_r_squared, censored_r_squared, fit_mle, gradient, log_likelihood,
    survival_function, wald_significance,
)

mpmath.mp.dps = 50


def simulate(seed, n=200, k=5, cens=0.2, sigma=0.8):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, k))
    beta = np.append(0.5, rng.normal(scale=0.5, size=k))
    y = beta[0] + X @ beta[1:] + sigma * rng.normal(size=n)
    c = rng.random(n) < cens
    # censored rows are observed somewhere below their event time
    y = np.where(c, y - rng.exponential(0.5, size=n), y)
    c[0] = False
    return SurvivalData.from_covariates(X, y, c), beta


def fd_gradient(beta, sigma, data, h=1e-6):
    theta = np.append(beta, sigma)
    out = np.empty_like(theta)
    for j in range(theta.size):
        step = h * max(1.0, abs(theta[j]))
        up, dn = theta.copy(), theta.copy()
        up[j] += step
        dn[j] -= step
        out[j] = (log_likelihood(up[:-1], up[-1], data) - log_likelihood(dn[:-1], dn[-1], data)) / (2 * step)
    return out


def _mp_loglik_grad(X, y, cens, beta, sigma):
    """Gradient of the censored log-likelihood in 50-digit arithmetic."""
    sigma = mpmath.mpf(sigma)
    gb = [mpmath.mpf(0)] * len(beta)
    gs = mpmath.mpf(0)
    for row, yi, ci in zip(X.tolist(), y.tolist(), cens.tolist()):
        z = (mpmath.mpf(yi) - mpmath.fsum(mpmath.mpf(a) * b for a, b in zip(row, beta))) / sigma
        if ci:
            lam = mpmath.npdf(z) / (mpmath.erfc(z / mpmath.sqrt(2)) / 2)
            coef, s_term = lam, lam * z
        else:
            coef, s_term = z, z * z - 1
        gb = [g + coef * a / sigma for g, a in zip(gb, row)]
        gs += s_term / sigma
    return np.array([float(g) for g in gb]), float(gs)


def test_single_density_value():
    data = SurvivalData(np.ones((2, 1)), np.zeros(2), np.zeros(2, bool))
    assert log_likelihood([0.0], 1.0, data) / 2 == pytest.approx(-0.9189385, abs=1e-7)
    assert log_likelihood([0.0], 1.0, data) / 2 == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)


def test_censored_at_the_median_contributes_log_half():
    base = SurvivalData(np.ones((2, 1)), np.zeros(2), np.zeros(2, bool))
    more = SurvivalData(np.ones((3, 1)), np.zeros(3), np.array([False, False, True]))
    assert log_likelihood([0.0], 1.0, more) - log_likelihood([0.0], 1.0, base) == pytest.approx(math.log(0.5))


def test_gradient_at_zero_residual():
    data = SurvivalData(np.ones((2, 1)), np.zeros(2), np.zeros(2, bool))
    gb, gs = gradient([0.0], 1.7, data)
    assert gb[0] == 0.0
    assert gs / 2 == pytest.approx(-1 / 1.7)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.3, 3.0))
def test_gradient_matches_finite_differences(seed, sigma):
    data, beta = simulate(seed)
    rng = np.random.default_rng(seed + 1)
    b = beta + rng.normal(scale=0.3, size=beta.size)
    gb, gs = gradient(b, sigma, data)
    g = np.append(gb, gs)
    fd = fd_gradient(b, sigma, data)
    assert np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(g))) < 1e-6


@pytest.mark.parametrize("shift", [-40.0, -8.0, 8.0, 40.0])
def test_gradient_in_the_tails(shift):
    rng = np.random.default_rng(3)
    n = 30
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    beta = np.array([0.2, -0.4])
    y = X @ beta + shift
    cens = np.ones(n, bool)
    cens[0] = False
    y[0] = X[0] @ beta
    data = SurvivalData(X, y, cens)
    gb, gs = gradient(beta, 1.0, data)
    assert np.all(np.isfinite(gb)) and math.isfinite(gs)
    assert math.isfinite(log_likelihood(beta, 1.0, data))
    ref_b, ref_s = _mp_loglik_grad(X, y, cens, beta, 1.0)
    assert np.allclose(gb, ref_b, rtol=1e-10, atol=1e-12)
    assert gs == pytest.approx(ref_s, rel=1e-10, abs=1e-12)


def test_survival_function_example():
    beta = np.array([0.3, -0.2])
    x = np.array([1.0, 0.5])
    sigma = 0.7
    t = math.exp(x @ beta + sigma * math.sqrt(2))
    s = survival_function(t, x, beta, sigma)
    assert s == pytest.approx(0.0786496, abs=1e-7)
    assert s == pytest.approx(float(0.5 - 0.5 * mpmath.erf(1)), rel=1e-12)
    assert survival_function(math.exp(x @ beta), x, beta, sigma) == pytest.approx(0.5)
    with pytest.raises(NonPositiveT):
        survival_function(0.0, x, beta, sigma)
    with pytest.raises(NonPositiveSigma):
        survival_function(1.0, x, beta, 0.0)


def test_adjusted_r_squared_example():
    assert adjusted_r_squared(0.2, 100, 10) == pytest.approx(0.11011236, abs=1e-8)
    assert adjusted_r_squared(0.2, 100, 10) == pytest.approx(1 - 0.8 * 99 / 89, abs=1e-15)
    with pytest.raises(DegenerateDof):
        adjusted_r_squared(0.5, 11, 10)


def test_wald_flags():
    fit = FitResult(np.array([9.0, 4.0, 0.5, -2.5]), 1.0, 0.0, np.array([1.0, 1.0, 1.0, 1.0]),
                    None, 0.0, None, 0, True)
    assert wald_significance(fit) == [True, False, True]
    assert wald_significance(fit, alpha=0.001) == [True, False, False]
    fit.std_errors = None
    with pytest.raises(MissingStdErrors):
        wald_significance(fit)


def test_bad_inputs():
    with pytest.raises(NonPositiveSigma):
        log_likelihood([0.0], -1.0, SurvivalData(np.ones((2, 1)), np.zeros(2), np.zeros(2, bool)))
    with pytest.raises(InvalidSurvivalData):
        SurvivalData(np.ones((2, 1)), np.zeros(2), np.ones(2, bool))
    with pytest.raises(InvalidSurvivalData):
        SurvivalData(np.ones((2, 1)), np.array([0.0, np.nan]), np.zeros(2, bool))
    with pytest.raises(InvalidSurvivalData):
        SurvivalData(np.ones((2, 3)), np.zeros(2), np.zeros(2, bool))


def test_uncensored_fit_is_ols():
    data, _ = simulate(4, n=300, cens=0.0)
    fit = fit_mle(data)
    ols, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    resid = data.y - data.X @ ols
    assert fit.converged is True
    assert np.allclose(fit.beta, ols, atol=1e-6)
    assert fit.sigma ** 2 == pytest.approx(float(resid @ resid) / resid.size, abs=1e-6)
    assert fit.adj_r2 <= fit.r2
    r = np.corrcoef(data.y, data.X @ ols)[0, 1]
    assert fit.r2 == pytest.approx(r * r, abs=1e-9)


def test_intercept_only_closed_form():
    rng = np.random.default_rng(0)
    y = rng.normal(1.0, 2.0, size=500)
    fit = fit_mle(SurvivalData(np.ones((500, 1)), y, np.zeros(500, bool)))
    assert fit.beta[0] == pytest.approx(y.mean(), abs=1e-9)
    assert fit.sigma == pytest.approx(y.std(), abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fit_is_a_local_maximum(seed):
    data, _ = simulate(seed, cens=0.3)
    fit = fit_mle(data)
    assert fit.converged and fit.sigma > 0
    assert fit.grad_norm <= 1e-8
    rng = np.random.default_rng(seed)
    for _ in range(5):
        db = rng.normal(scale=1e-3, size=fit.beta.size)
        assert log_likelihood(fit.beta + db, fit.sigma * (1 + rng.normal(scale=1e-3)), data) <= fit.loglik + 1e-9
    start = np.append(np.zeros(data.X.shape[1]), 0.0)
    assert fit.loglik >= log_likelihood(start[:-1], 1.0, data)


def test_rescaling_a_covariate_rescales_its_coefficient():
    data, _ = simulate(9, cens=0.3)
    X2 = data.X.copy()
    X2[:, 2] *= 10.0
    a = fit_mle(data)
    b = fit_mle(SurvivalData(X2, data.y, data.censored))
    assert b.loglik == pytest.approx(a.loglik, abs=1e-7)
    assert b.beta[2] * 10 == pytest.approx(a.beta[2], abs=1e-6)
    assert b.sigma == pytest.approx(a.sigma, abs=1e-7)
    assert b.std_errors[2] * 10 == pytest.approx(a.std_errors[2], rel=1e-4)


def test_r2_uses_uncensored_rows_only():
    data, beta = simulate(2, cens=0.3)
    keep = ~data.censored
    fitted = data.X[keep] @ beta
    r = np.corrcoef(data.y[keep], fitted)[0, 1]
    assert censored_r_squared(beta, data) == pytest.approx(r * r)


def test_fit_result_round_trip():
    data, _ = simulate(5)
    fit = fit_mle(data)
    back = FitResult.from_dict(json.loads(fit.to_json()))
    assert np.array_equal(back.beta, fit.beta) and back.sigma == fit.sigma
    assert back.significant == fit.significant and back.to_json() == fit.to_json()
