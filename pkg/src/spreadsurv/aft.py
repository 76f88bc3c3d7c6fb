"""Censored log-normal accelerated failure time regression.

Model: ``log(tau) = x'beta + sigma * eps`` with standard normal ``eps``.
Uncensored rows contribute the log-normal log density of ``tau``; censored rows
contribute ``log S(t) = log(1/2 - erf(u)/2)`` with ``u = (log t - x'beta) / (sigma*sqrt(2))``,
evaluated as ``log_ndtr(-z)`` so the far tail does not cancel.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_ndtr

logger = logging.getLogger(__name__)

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class NonPositiveSigma(ValueError):
    pass


class NonPositiveT(ValueError):
    pass


class DegenerateDof(ValueError):
    pass


class MissingStdErrors(ValueError):
    pass


class InvalidSurvivalData(ValueError):
    pass


@dataclass
class SurvivalData:
    """Design with a leading intercept column, log durations and censor flags."""

    X: np.ndarray
    y: np.ndarray
    censored: np.ndarray
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.censored = np.asarray(self.censored, dtype=bool)
        n, p = self.X.shape
        if self.y.shape != (n,) or self.censored.shape != (n,):
            raise InvalidSurvivalData("X, y and censored disagree in length")
        if n < p + 1:
            raise InvalidSurvivalData(f"need at least {p + 1} rows for {p - 1} covariates, got {n}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise InvalidSurvivalData("non-finite values in design or response")
        if self.censored.all():
            raise InvalidSurvivalData("at least one uncensored row is required")
        if not self.names:
            self.names = ["(intercept)"] + [f"x{j}" for j in range(1, p)]
        self._unc = ~self.censored
        self._Xu, self._yu = self.X[self._unc], self.y[self._unc]
        self._Xc, self._yc = self.X[self.censored], self.y[self.censored]

    @classmethod
    def from_covariates(cls, covariates, y, censored, names: Sequence[str] = ()) -> "SurvivalData":
        covariates = np.asarray(covariates, dtype=float)
        n = covariates.shape[0]
        X = np.column_stack([np.ones(n), covariates.reshape(n, -1)])
        full_names = ["(intercept)"] + list(names) if names else []
        return cls(X, y, censored, full_names)

    @property
    def k(self) -> int:
        """Number of covariates, intercept excluded."""
        return self.X.shape[1] - 1

    def subset(self, columns: Sequence[int]) -> "SurvivalData":
        """Intercept plus the given covariate columns (0-based covariate indices)."""
        cols = [0] + [j + 1 for j in columns]
        return SurvivalData(self.X[:, cols], self.y, self.censored, [self.names[c] for c in cols])


@dataclass
class FitResult:
    beta: np.ndarray
    sigma: float
    loglik: float
    std_errors: Optional[np.ndarray]
    significant: Optional[list[bool]]
    r2: float
    adj_r2: Optional[float]
    iterations: int
    converged: bool
    names: list[str] = field(default_factory=list)
    grad_norm: float = math.nan

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "beta": [float(b) for b in self.beta],
            "sigma": float(self.sigma),
            "loglik": float(self.loglik),
            "se": None if self.std_errors is None else [float(s) for s in self.std_errors],
            "significant": self.significant,
            "r2": float(self.r2),
            "adj_r2": None if self.adj_r2 is None else float(self.adj_r2),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            beta=np.array(d["beta"], dtype=float),
            sigma=d["sigma"],
            loglik=d["loglik"],
            std_errors=None if d["se"] is None else np.array(d["se"], dtype=float),
            significant=d["significant"],
            r2=d["r2"],
            adj_r2=d["adj_r2"],
            iterations=d["iterations"],
            converged=d["converged"],
            names=d.get("names", []),
        )


def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")


def log_likelihood(beta, sigma: float, data: SurvivalData) -> float:
    _check_sigma(sigma)
    beta = np.asarray(beta, dtype=float)
    zu = (data._yu - data._Xu @ beta) / sigma
    zc = (data._yc - data._Xc @ beta) / sigma
    uncensored = -data._yu - math.log(sigma) - _HALF_LOG_2PI - 0.5 * zu * zu
    return float(uncensored.sum() + log_ndtr(-zc).sum())


def _inverse_mills(z: np.ndarray) -> np.ndarray:
    """phi(z) / (1 - Phi(z)), stable in both tails."""
    return np.exp(-0.5 * z * z - _HALF_LOG_2PI - log_ndtr(-z))


def gradient(beta, sigma: float, data: SurvivalData) -> tuple[np.ndarray, float]:
    """Analytic (d l / d beta, d l / d sigma).

    For a censored row the sigma term is ``+lambda(z) * z / sigma`` with
    ``lambda`` the inverse Mills ratio; this sign is what differentiating
    ``log S`` gives and what finite differences confirm.
    """
    _check_sigma(sigma)
    beta = np.asarray(beta, dtype=float)
    zu = (data._yu - data._Xu @ beta) / sigma
    zc = (data._yc - data._Xc @ beta) / sigma
    lam = _inverse_mills(zc)
    g_beta = (data._Xu.T @ zu + data._Xc.T @ lam) / sigma
    g_sigma = float(((zu * zu - 1.0).sum() + (lam * zc).sum()) / sigma)
    return g_beta, g_sigma


def survival_function(t: float, x, beta, sigma: float) -> float:
    """P(duration > t | x) for the fitted log-normal AFT model."""
    if not t > 0:
        raise NonPositiveT(f"t must be positive, got {t}")
    _check_sigma(sigma)
    u = (math.log(t) - float(np.dot(x, beta))) / (sigma * math.sqrt(2.0))
    return 0.5 * math.erfc(u)


def adjusted_r_squared(r2: float, n: int, k: int) -> float:
    if n <= k + 1:
        raise DegenerateDof(f"need n > k + 1, got n={n}, k={k}")
    return 1.0 - (1.0 - r2) * (n - 1) / (n - k - 1)


def censored_r_squared(beta, data: SurvivalData) -> float:
    """Squared correlation of log duration with x'beta over uncensored rows."""
    y = data._yu
    fitted = data._Xu @ np.asarray(beta, dtype=float)
    if y.size < 2:
        return 0.0
    yc = y - y.mean()
    fc = fitted - fitted.mean()
    denom = math.sqrt(float(yc @ yc) * float(fc @ fc))
    if denom <= 1e-300 or float(fc @ fc) <= 1e-24 * max(1.0, float(fitted @ fitted)):
        return 0.0
    r = float(yc @ fc) / denom
    return min(1.0, r * r)


def wald_significance(fit: FitResult, alpha: float = 0.05) -> list[bool]:
    """Two-sided Wald test per covariate; the intercept is not reported."""
    if fit.std_errors is None:
        raise MissingStdErrors("fit has no standard errors")
    crit = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    flags = []
    for b, se in zip(fit.beta[1:], fit.std_errors[1:]):
        flags.append(bool(se > 0 and abs(b / se) > crit))
    return flags


# -- optimisation ---------------------------------------------------------------


def _grad_theta(theta: np.ndarray, data: SurvivalData) -> np.ndarray:
    """Gradient in (beta, log sigma)."""
    sigma = math.exp(theta[-1])
    gb, gs = gradient(theta[:-1], sigma, data)
    return np.append(gb, gs * sigma)


def _fd_jacobian(fun, x: np.ndarray) -> np.ndarray:
    m = x.size
    H = np.empty((m, m))
    for j in range(m):
        h = 1e-5 * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        H[:, j] = (fun(xp) - fun(xm)) / (2.0 * h)
    return 0.5 * (H + H.T)


def _initial_theta(data: SurvivalData) -> np.ndarray:
    Xu, yu = data._Xu, data._yu
    if Xu.shape[0] < Xu.shape[1]:
        Xu, yu = data.X, data.y
    beta, *_ = np.linalg.lstsq(Xu, yu, rcond=None)
    resid = yu - Xu @ beta
    sigma = max(math.sqrt(float(resid @ resid) / resid.size), 1e-3)
    return np.append(beta, math.log(sigma))


def fit_mle(
    data: SurvivalData,
    init: Optional[Sequence[float]] = None,
    tol: float = 1e-8,
    max_iter: int = 200,
    alpha: float = 0.05,
) -> FitResult:
    """Maximise the censored log-likelihood over (beta, log sigma).

    Newton steps use a symmetric finite-difference Hessian of the analytic
    gradient with backtracking; a non-ascent Newton direction falls back to
    steepest ascent. Converged means the max-norm of the (beta, sigma)
    gradient is at most ``tol``. Standard errors come from the inverse of the
    negative Hessian in (beta, sigma) at the optimum.
    """
    theta = _initial_theta(data) if init is None else np.array(init, dtype=float)

    def ll(th):
        return log_likelihood(th[:-1], math.exp(th[-1]), data)

    def grad_norm(th, g):
        # report on the (beta, sigma) scale
        return max(float(np.max(np.abs(g[:-1]))), abs(g[-1]) / math.exp(th[-1]))

    f = ll(theta)
    f_init, theta_init = f, theta.copy()
    g = _grad_theta(theta, data)
    gnorm = grad_norm(theta, g)
    converged = bool(gnorm <= tol)
    iterations = 0
    while not converged and iterations < max_iter:
        iterations += 1
        H = _fd_jacobian(lambda th: _grad_theta(th, data), theta)
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)) or float(g @ step) <= 0:
            step = g / max(1.0, float(np.max(np.abs(g))))
        slope = float(g @ step)
        # ties within rounding are accepted so that the last Newton steps,
        # whose gain is below the resolution of the summed likelihood, go through
        noise = 1e-13 * (1.0 + abs(f))
        t = 1.0
        while True:
            cand = theta + t * step
            fc = ll(cand)
            if np.isfinite(fc) and fc >= f + 1e-4 * t * slope - noise:
                break
            t *= 0.5
            if t < 1e-12:
                cand = None
                break
        if cand is None:
            logger.debug("line search underflow at iteration %d, grad %.3g", iterations, gnorm)
            break
        theta, f = cand, fc
        g = _grad_theta(theta, data)
        gnorm = grad_norm(theta, g)
        converged = bool(gnorm <= tol)

    if f < f_init:
        theta, f = theta_init, f_init
        g = _grad_theta(theta, data)
        gnorm = grad_norm(theta, g)
        converged = bool(gnorm <= tol)

    beta, sigma = theta[:-1], math.exp(theta[-1])
    std_errors = _standard_errors(beta, sigma, data)
    r2 = censored_r_squared(beta, data)
    n_unc = int(data._unc.sum())
    adj = adjusted_r_squared(r2, n_unc, data.k) if n_unc > data.k + 1 else None
    fit = FitResult(
        beta=beta, sigma=sigma, loglik=f, std_errors=std_errors, significant=None,
        r2=r2, adj_r2=adj, iterations=iterations, converged=converged,
        names=list(data.names), grad_norm=gnorm,
    )
    if std_errors is not None:
        fit.significant = wald_significance(fit, alpha)
    if not converged:
        logger.warning("AFT fit did not converge after %d iterations (grad %.3g)", iterations, gnorm)
    return fit


def _standard_errors(beta: np.ndarray, sigma: float, data: SurvivalData) -> Optional[np.ndarray]:
    def grad_beta_sigma(th):
        if th[-1] <= 0:
            return np.full(th.size, np.nan)
        gb, gs = gradient(th[:-1], th[-1], data)
        return np.append(gb, gs)

    H = _fd_jacobian(grad_beta_sigma, np.append(beta, sigma))
    if not np.all(np.isfinite(H)):
        return None
    try:
        L = np.linalg.cholesky(-H)
    except np.linalg.LinAlgError:
        logger.warning("negative Hessian is not positive definite; no standard errors")
        return None
    Linv = np.linalg.solve(L, np.eye(L.shape[0]))
    cov = Linv.T @ Linv
    return np.sqrt(np.diag(cov)[:-1])
