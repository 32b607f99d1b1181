"""Univariate peaks over threshold.

Excesses ``x = y - u > 0`` follow the generalized Pareto law

    H(x) = 1 - (1 + gamma x / sigma)^(-1/gamma),

with the exponential law ``1 - exp(-x / sigma)`` at ``gamma = 0``. Above the
threshold the distribution of ``Y`` is estimated by
``F(y) = 1 - p_u (1 - H(y - u))`` where ``p_u`` is the empirical exceedance
frequency.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize, stats

from .errors import DomainError, FittingError, OptimizationError

_Z95 = stats.norm.ppf(0.975)
_GAMMA_BOUNDS = (-0.9, 2.0)
_MIN_FREE = 5


@dataclass(frozen=True)
class UnivariateGpFit:
    threshold: float
    exceed_freq: float
    sigma: float
    gamma: float
    log_lik: float
    sigma_ci: tuple
    n_excess: int
    gamma_fixed: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if not 0.0 <= self.exceed_freq <= 1.0:
            raise DomainError("exceed_freq must lie in [0, 1]")
        if self.n_excess < 1:
            raise DomainError("n_excess must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma_ci"] = list(self.sigma_ci)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UnivariateGpFit":
        try:
            return cls(float(d["threshold"]), float(d["exceed_freq"]), float(d["sigma"]),
                       float(d["gamma"]), float(d["log_lik"]), tuple(d["sigma_ci"]),
                       int(d["n_excess"]), bool(d.get("gamma_fixed", False)))
        except (KeyError, TypeError) as exc:
            raise DomainError(f"invalid fit description: {exc}") from exc


@dataclass(frozen=True)
class ReturnLevelQuery:
    alpha: float
    n: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError("n must be a positive integer")


def gp_cdf(x, sigma: float, gamma: float):
    """Generalized Pareto CDF of excesses, continuous in ``gamma`` at 0."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    x = np.asarray(x, dtype=float)
    z = np.maximum(x, 0.0) / sigma
    if gamma == 0.0:
        out = -np.expm1(-z)
    else:
        arg = gamma * z
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(1.0 + arg > 0, -np.expm1(-np.log1p(np.maximum(arg, -1.0)) / gamma), 1.0)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def gp_quantile(q, sigma: float, gamma: float):
    q = np.asarray(q, dtype=float)
    if gamma == 0.0:
        out = -sigma * np.log1p(-q)
    else:
        out = sigma * np.expm1(-gamma * np.log1p(-q)) / gamma
    return float(out) if out.ndim == 0 else out


def gp_loglik(excesses, sigma: float, gamma: float) -> float:
    x = np.asarray(excesses, dtype=float)
    if sigma <= 0:
        return -math.inf
    if abs(gamma) < 1e-12:
        return float(-x.size * math.log(sigma) - x.sum() / sigma)
    arg = 1.0 + gamma * x / sigma
    if np.any(arg <= 0):
        return -math.inf
    return float(-x.size * math.log(sigma) - (1.0 + 1.0 / gamma) * np.log(arg).sum())


def _check_excesses(excesses, minimum: int) -> np.ndarray:
    x = np.asarray(excesses, dtype=float).ravel()
    if x.size < minimum:
        raise FittingError(f"need at least {minimum} excesses, got {x.size}")
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise DomainError("excesses must be positive and finite")
    return x


def fit_exponential(excesses, threshold: float = 0.0, exceed_freq: float = 1.0) -> UnivariateGpFit:
    """Exponential (``gamma = 0``) fit; the MLE of sigma is the mean excess."""
    x = _check_excesses(excesses, 1)
    sigma = float(x.mean())
    se = sigma / math.sqrt(x.size)
    return UnivariateGpFit(float(threshold), float(exceed_freq), sigma, 0.0,
                           gp_loglik(x, sigma, 0.0), (float(sigma - _Z95 * se), float(sigma + _Z95 * se)),
                           int(x.size), gamma_fixed=True)


def _profile_sigma(x: np.ndarray, gamma: float) -> tuple[float, float]:
    # log-likelihood maximized over sigma for fixed gamma
    # for gamma < 0 the support needs sigma > -gamma * max(x)
    lo = math.log(-gamma * x.max()) + 1e-9 if gamma < 0 else math.log(x.mean()) - 12
    hi = math.log(x.mean()) + 12
    res = optimize.minimize_scalar(lambda ls: -gp_loglik(x, math.exp(ls), gamma),
                                   bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-10})
    return math.exp(res.x), -float(res.fun)


def fit_gp_excesses(excesses, threshold: float = 0.0, exceed_freq: float = 1.0) -> UnivariateGpFit:
    """Free-gamma GP fit by profiling the likelihood over gamma in [-0.9, 2].

    The 95% interval for sigma uses the observed information of the joint
    likelihood, evaluated by finite differences.
    """
    x = _check_excesses(excesses, _MIN_FREE)
    res = optimize.minimize_scalar(lambda g: -_profile_sigma(x, g)[1], bounds=_GAMMA_BOUNDS,
                                   method="bounded", options={"xatol": 1e-9})
    if not res.success:
        raise OptimizationError(f"profile search over gamma failed: {res.message}",
                                [{"gamma": float(res.x), "nll": float(res.fun)}])
    gamma = float(res.x)
    sigma, ll = _profile_sigma(x, gamma)
    se = _sigma_se(x, sigma, gamma)
    return UnivariateGpFit(float(threshold), float(exceed_freq), sigma, gamma, ll,
                           (float(sigma - _Z95 * se), float(sigma + _Z95 * se)), int(x.size))


def _sigma_se(x, sigma, gamma) -> float:
    def f(p):
        return gp_loglik(x, p[0], p[1])
    p0 = np.array([sigma, gamma])
    h = np.array([1e-4 * sigma, 1e-4])
    hess = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            ei = np.eye(2)[i] * h[i]
            ej = np.eye(2)[j] * h[j]
            hess[i, j] = (f(p0 + ei + ej) - f(p0 + ei - ej) - f(p0 - ei + ej) + f(p0 - ei - ej)) / (4 * h[i] * h[j])
    try:
        cov = np.linalg.inv(-hess)
    except np.linalg.LinAlgError:
        return math.nan
    return math.sqrt(cov[0, 0]) if cov[0, 0] > 0 else math.nan


def lr_test_gamma_zero(fit_free: UnivariateGpFit, fit_exp: UnivariateGpFit) -> float:
    """Likelihood-ratio p-value for ``gamma = 0`` (chi-square, one degree of freedom)."""
    if fit_free.n_excess != fit_exp.n_excess:
        raise DomainError("fits use different numbers of excesses")
    dev = max(0.0, 2.0 * (fit_free.log_lik - fit_exp.log_lik))
    return float(stats.chi2.sf(dev, 1))


def tail_cdf(y, fit: UnivariateGpFit):
    """``1 - p_u (1 - H(y - u))`` for ``y`` at or above the threshold."""
    y = np.asarray(y, dtype=float)
    if np.any(y < fit.threshold):
        raise DomainError("tail estimate needs y above the threshold")
    out = 1.0 - fit.exceed_freq * (1.0 - np.asarray(gp_cdf(y - fit.threshold, fit.sigma, fit.gamma)))
    return float(out) if out.ndim == 0 else out


def return_level(fit: UnivariateGpFit, q: ReturnLevelQuery) -> float:
    """Level exceeded with probability ``1 - alpha`` over ``n`` independent episodes.

    Solves ``F(y)^n = alpha``. For an exponential fit this is
    ``u + sigma (log p_u - log(1 - alpha^(1/n)))``.
    """
    tail = -math.expm1(math.log(q.alpha) / q.n)
    if fit.exceed_freq < tail:
        raise DomainError("level below threshold not estimable: exceedance frequency is smaller than "
                          "1 - alpha^(1/n)")
    if fit.gamma == 0.0:
        return fit.threshold + fit.sigma * (math.log(fit.exceed_freq) - math.log(tail))
    return fit.threshold + gp_quantile(1.0 - tail / fit.exceed_freq, fit.sigma, fit.gamma)


def qq_plot_data(excesses, fit: UnivariateGpFit) -> list[tuple[float, float]]:
    """(theoretical, observed) quantile pairs at plotting positions i/(n+1)."""
    x = np.sort(np.asarray(excesses, dtype=float).ravel())
    n = x.size
    if n == 0:
        return []
    pp = np.arange(1, n + 1) / (n + 1)
    theo = np.atleast_1d(gp_quantile(pp, fit.sigma, fit.gamma))
    return [(float(a), float(b)) for a, b in zip(theo, x)]


def qq_to_csv(pairs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theoretical", "observed"])
    w.writerows(pairs)
    return buf.getvalue()


def threshold_fit(values, threshold: float, free_gamma: bool = False) -> UnivariateGpFit:
    """Fit to the strictly positive excesses of ``values`` over ``threshold``."""
    v = np.asarray(values, dtype=float).ravel()
    exc = v[v > threshold] - threshold
    p = exc.size / v.size if v.size else 0.0
    if free_gamma:
        return fit_gp_excesses(exc, threshold, p)
    return fit_exponential(exc, threshold, p)
