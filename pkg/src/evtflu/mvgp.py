"""Three-dimensional generalized Pareto models in the U-representation.

A standard-form GP vector with generator ``U`` has density

    h(x) = 1{x not <= 0} / E[exp(max U)] * ∫_0^∞ f_U(x + log t) dt

on the positive excess region. Generators have independent components from
one of three families (Gumbel, reverse exponential, reverse Gumbel), each
component parameterised by a rate ``alpha_i`` and a location ``beta_i``.
The first location is pinned to zero for identifiability.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, stats

from . import _kernels as K
from .errors import DomainError, FittingError, OptimizationError

log = logging.getLogger(__name__)

FAMILIES = ("gumbel", "reverse_exponential", "reverse_gumbel")
_KIND = {"gumbel": K.GUMBEL, "reverse_exponential": K.REVERSE_EXPONENTIAL,
         "reverse_gumbel": K.REVERSE_GUMBEL}

# parameters within this distance of alpha = 1 count as boundary solutions
_BOUNDARY_TOL = 1e-3
_PENALTY = 1e12


class Submodel(str, enum.Enum):
    """Nested simplifications of the full three-component model."""

    M1 = "M1"  # free alpha, free beta
    M2 = "M2"  # free alpha, beta = 0
    M3 = "M3"  # common alpha, free beta
    M4 = "M4"  # common alpha, beta = 0

    @property
    def n_params(self) -> int:
        return {"M1": 5, "M2": 3, "M3": 3, "M4": 1}[self.value]

    @property
    def common_alpha(self) -> bool:
        return self in (Submodel.M3, Submodel.M4)

    @property
    def free_beta(self) -> bool:
        return self in (Submodel.M1, Submodel.M3)


@dataclass(frozen=True)
class GeneratorFamily:
    """Independent-component generator.

    Attributes:
        kind: One of ``FAMILIES``.
        alpha: Positive rates, one per component.
        beta: Locations with ``beta[0] == 0``.
    """

    kind: str
    alpha: tuple
    beta: tuple

    def __post_init__(self):
        if self.kind not in _KIND:
            raise DomainError(f"unknown generator family {self.kind!r}")
        alpha = tuple(float(a) for a in self.alpha)
        beta = tuple(float(b) for b in self.beta)
        if len(alpha) != len(beta) or not alpha:
            raise DomainError("alpha and beta must have the same nonzero length")
        if beta[0] != 0.0:
            raise DomainError("beta[0] must be 0")
        if not all(np.isfinite(alpha)) or not all(np.isfinite(beta)):
            raise DomainError("generator parameters must be finite")
        if self.kind == "gumbel":
            if min(alpha) <= 1.0:
                raise DomainError("gumbel generators need every alpha > 1 for E[exp(max U)] to be finite")
        elif min(alpha) <= 0.0:
            raise DomainError("alpha must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def dim(self) -> int:
        return len(self.alpha)

    @property
    def code(self) -> int:
        return _KIND[self.kind]

    def arrays(self):
        return np.asarray(self.alpha, dtype=float), np.asarray(self.beta, dtype=float)


@dataclass(frozen=True)
class MvGpModel:
    """Fitted three-dimensional GP model.

    ``scales`` and ``thresholds`` map original units to standard form via
    ``x = (y - thresholds) / scales``.
    """

    family: GeneratorFamily
    scales: tuple = (1.0, 1.0, 1.0)
    thresholds: tuple = (0.0, 0.0, 0.0)
    log_lik: float = math.nan
    n_vectors: int = 0
    submodel: Submodel = Submodel.M1
    converged: bool = True
    at_boundary: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.family.dim != 3:
            raise DomainError("models are three-dimensional")
        scales = tuple(float(s) for s in self.scales)
        if len(scales) != 3 or min(scales) <= 0:
            raise DomainError("marginal scales must be three positive numbers")
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "thresholds", tuple(float(u) for u in self.thresholds))
        object.__setattr__(self, "submodel", Submodel(self.submodel))

    @property
    def n_params(self) -> int:
        return self.submodel.n_params

    @property
    def aic(self) -> float:
        return 2 * self.n_params - 2 * self.log_lik

    @property
    def bic(self) -> float:
        return self.n_params * math.log(self.n_vectors) - 2 * self.log_lik

    def to_dict(self) -> dict:
        return {
            "family": self.family.kind,
            "alpha": list(self.family.alpha),
            "beta": list(self.family.beta),
            "scales": list(self.scales),
            "thresholds": list(self.thresholds),
            "loglik": self.log_lik,
            "n": self.n_vectors,
            "submodel": self.submodel.value,
            **self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MvGpModel":
        try:
            family = GeneratorFamily(d["family"], tuple(d["alpha"]), tuple(d["beta"]))
            known = {"family", "alpha", "beta", "scales", "thresholds", "loglik", "n", "submodel"}
            return cls(family, tuple(d["scales"]), tuple(d["thresholds"]),
                       float(d.get("loglik", math.nan)), int(d.get("n", 0)),
                       Submodel(d.get("submodel", "M1")),
                       meta={k: v for k, v in d.items() if k not in known})
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DomainError):
                raise
            raise DomainError(f"invalid model description: {exc}") from exc


def _as_family(obj) -> GeneratorFamily:
    return obj.family if isinstance(obj, MvGpModel) else obj


def _as_points(x, dim=3) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != dim:
        raise DomainError(f"expected vectors of length {dim}, got shape {arr.shape}")
    return arr, single


# --- generator densities --------------------------------------------------

def generator_log_density(family: GeneratorFamily, u) -> np.ndarray | float:
    """Sum of the independent component log densities.

    Points outside the support give ``-inf``.
    """
    family = _as_family(family)
    u, single = _as_points(u, family.dim)
    a, b = family.arrays()
    w = a * (u - b)
    with np.errstate(over="ignore", invalid="ignore"):
        if family.kind == "gumbel":
            out = np.log(a) - w - np.exp(-w)
        elif family.kind == "reverse_gumbel":
            out = np.log(a) + w - np.exp(w)
        else:
            y = (u + b) / a
            out = np.where(y < 0, y - np.log(a), -np.inf)
    out = np.where(np.isnan(out), -np.inf, out).sum(axis=1)
    return float(out[0]) if single else out


def component_log_cdf(family: GeneratorFamily, z) -> np.ndarray:
    """Component-wise log CDFs ``log F_i(z_i)``; used by the reference quadrature."""
    a, b = family.arrays()
    z = np.asarray(z, dtype=float)
    with np.errstate(over="ignore", divide="ignore"):
        if family.kind == "gumbel":
            return -np.exp(-a * (z - b))
        if family.kind == "reverse_gumbel":
            return np.log(-np.expm1(-np.exp(a * (z - b))))
        return np.minimum((z + b) / a, 0.0)


# --- normalizer ------------------------------------------------------------

def log_normalizer(family: GeneratorFamily) -> float:
    """``log E[exp(max U)]``."""
    family = _as_family(family)
    a, b = family.arrays()
    return float(K.log_normalizer(family.code, a, b))


def normalizer(family: GeneratorFamily, method: str = "fast") -> float:
    """``E[exp(max U)] = ∫_0^∞ (1 - Π_i F_i(log t)) dt``.

    Args:
        family: Generator family, any number of components.
        method: ``"fast"`` uses the compiled kernels, ``"quadpack"`` integrates
            the defining expression with :func:`scipy.integrate.quad` and serves
            as an independent reference.
    """
    family = _as_family(family)
    if method == "fast":
        return math.exp(log_normalizer(family))
    if method != "quadpack":
        raise DomainError(f"unknown method {method!r}")

    def integrand(s):
        # t = e^s, dt = e^s ds
        lf = float(np.sum(component_log_cdf(family, np.full(family.dim, s))))
        return -math.expm1(lf) * math.exp(s)

    lo, hi = -60.0, 60.0
    a, b = family.arrays()
    if family.kind == "reverse_exponential":
        knot = float(np.max(-b))
        hi = knot
        parts = [(lo, hi)]
    else:
        mid = float(np.median(b))
        parts = [(lo, mid), (mid, hi)]
    total = 0.0
    for p, q in parts:
        val, _ = integrate.quad(integrand, p, q, epsabs=0.0, epsrel=1e-11, limit=500)
        total += val
    return total


# --- GP density -------------------------------------------------------------

def _check_positive(x: np.ndarray) -> None:
    if np.any(np.max(x, axis=1) <= 0):
        raise DomainError("not a positive excess vector (some row has no positive component)")


def _log_inner_quadpack(family: GeneratorFamily, x: np.ndarray) -> float:
    def logf(s):
        return generator_log_density(family, x + s) + s

    if family.kind == "reverse_exponential":
        # increasing up to the support edge, where the mode sits
        a, b = family.arrays()
        edge = float(np.min(-b - x))
        peak = logf(np.nextafter(edge, -np.inf))
        val, _ = integrate.quad(lambda s: math.exp(logf(s) - peak), -np.inf, edge,
                                epsabs=0.0, epsrel=1e-11, limit=500)
        return peak + math.log(val)
    # center the integrand at its mode for numerical stability
    res = optimize.minimize_scalar(lambda s: -logf(s), bracket=(-1.0, 1.0))
    mode, peak = float(res.x), -float(res.fun)
    total = 0.0
    for p, q in ((-np.inf, mode), (mode, np.inf)):
        val, _ = integrate.quad(lambda s: math.exp(logf(s) - peak), p, q,
                                epsabs=0.0, epsrel=1e-11, limit=500)
        total += val
    return peak + math.log(total)


def gp_log_density(model, x, method: str = "fast"):
    """Standard-form GP log density.

    Args:
        model: ``MvGpModel`` or ``GeneratorFamily``.
        x: One vector of shape (3,) or an array of shape (n, 3), standardized.
        method: ``"fast"`` (compiled kernels) or ``"quadpack"`` (reference).

    Returns:
        Float for a single vector, otherwise an array of length n.

    Raises:
        DomainError: If some vector has no positive component.
    """
    family = _as_family(model)
    pts, single = _as_points(x, family.dim)
    _check_positive(pts)
    a, b = family.arrays()
    if method == "fast":
        inner = K.log_inner_batch(family.code, a, b, np.ascontiguousarray(pts))
        lognorm = log_normalizer(family)
    elif method == "quadpack":
        inner = np.array([_log_inner_quadpack(family, p) for p in pts])
        lognorm = math.log(normalizer(family, method="quadpack"))
    else:
        raise DomainError(f"unknown method {method!r}")
    out = inner - lognorm
    return float(out[0]) if single else out


def gp_log_density_general(x, sigma, gamma, family) -> float | np.ndarray:
    """GP log density with generalized Pareto margins.

    Each component is mapped to standard form through
    ``z_j = log(1 + gamma_j x_j / sigma_j) / gamma_j`` (``x_j / sigma_j`` when
    ``gamma_j = 0``) and the Jacobian ``Π_j 1 / (sigma_j + gamma_j x_j)`` is
    applied.
    """
    family = _as_family(family)
    pts, single = _as_points(x, family.dim)
    sigma = np.asarray(sigma, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    arg = sigma + gamma * pts
    if np.any(arg <= 0):
        raise DomainError("margin constraint 1 + gamma x / sigma > 0 violated")
    ratio = gamma * pts / sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(gamma == 0, pts / sigma, np.log1p(ratio) / np.where(gamma == 0, 1.0, gamma))
    out = np.atleast_1d(gp_log_density(family, z)) - np.log(arg).sum(axis=1)
    return float(out[0]) if single else out


# --- fitting ----------------------------------------------------------------

def _unpack(theta: np.ndarray, kind: str, sub: Submodel):
    theta = np.asarray(theta, dtype=float)
    if sub.common_alpha:
        a = np.full(3, theta[0])
        rest = theta[1:]
    else:
        a = theta[:3]
        rest = theta[3:]
    beta = np.zeros(3)
    if sub.free_beta:
        beta[1:] = rest
    with np.errstate(over="ignore"):
        alpha = 1.0 + np.exp(a) if kind == "gumbel" else np.exp(a)
    return alpha, beta


def _pack(alpha, beta, kind: str, sub: Submodel) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    a = np.log(alpha - 1.0) if kind == "gumbel" else np.log(alpha)
    head = [float(np.mean(a))] if sub.common_alpha else list(a)
    tail = list(np.asarray(beta, dtype=float)[1:]) if sub.free_beta else []
    return np.array(head + tail)


def log_likelihood(family: GeneratorFamily, vectors: np.ndarray) -> float:
    """Sum of standard-form log densities."""
    return float(np.sum(gp_log_density(family, vectors)))


def _negloglik(theta, kind, sub, x):
    alpha, beta = _unpack(theta, kind, sub)
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
        return _PENALTY
    if kind == "gumbel" and np.any(alpha <= 1.0):
        return _PENALTY
    if np.any(alpha <= 0) or np.max(alpha) > 1e6 or np.max(np.abs(beta)) > 1e3:
        return _PENALTY
    code = _KIND[kind]
    ln = K.log_normalizer(code, alpha, beta)
    inner = K.log_inner_batch(code, alpha, beta, x)
    val = -(float(np.sum(inner)) - x.shape[0] * ln)
    return val if math.isfinite(val) else _PENALTY


def moment_start(vectors: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Crude starting values from pairwise differences.

    Differences ``x_i - x_k`` behave roughly like ``U_i - U_k``, whose mean
    and variance are known for each family when the rates are equal.
    """
    x = np.asarray(vectors, dtype=float)
    d = x[:, 1:] - x[:, :1]
    v = np.var(x[:, :, None] - x[:, None, :], axis=0)[np.triu_indices(3, 1)].mean()
    v = max(v, 1e-3)
    if kind == "reverse_exponential":
        a0 = max(math.sqrt(v / 2.0), 0.05)
        beta = np.concatenate([[0.0], -d.mean(axis=0)])
    else:
        a0 = math.pi / math.sqrt(3.0 * v)
        if kind == "gumbel":
            a0 = max(a0, 1.2)
        beta = np.concatenate([[0.0], d.mean(axis=0)])
    return np.full(3, a0), beta


@dataclass
class _Run:
    fun: float
    x: np.ndarray
    nit: int
    success: bool
    message: str


def fit_mvgp(vectors, family_kind: str = "gumbel", submodel: Submodel | str = Submodel.M1,
             n_starts: int = 10, seed: int = 0, start: GeneratorFamily | None = None,
             thresholds=(0.0, 0.0, 0.0), scales=(1.0, 1.0, 1.0),
             start_spread: float = 0.5, min_vectors: int = 10) -> MvGpModel:
    """Maximum-likelihood fit of a three-dimensional GP model.

    Parameters
    ----------
    vectors : array_like, shape (n, 3)
        Standardized positive excess vectors.
    family_kind : str
        Generator family.
    submodel : Submodel or str
        Parameter restriction, see :class:`Submodel`.
    n_starts : int
        Number of Nelder-Mead runs. The first starts at ``start`` (or at
        moment-based values), the others at random perturbations of it.
    seed : int
        Seed for the perturbations.
    start : GeneratorFamily, optional
        Explicit starting point, e.g. the generating model in simulation
        studies.
    thresholds, scales : sequence of float
        Stored on the returned model.
    start_spread : float
        Standard deviation of the perturbations on the transformed scale.

    Returns
    -------
    MvGpModel

    Raises
    ------
    FittingError
        Fewer than ``min_vectors`` vectors.
    OptimizationError
        No run reached a finite likelihood.
    """
    if family_kind not in _KIND:
        raise DomainError(f"unknown generator family {family_kind!r}")
    sub = Submodel(submodel)
    x = np.ascontiguousarray(np.asarray(vectors, dtype=float))
    if x.ndim != 2 or x.shape[1] != 3:
        raise DomainError("vectors must have shape (n, 3)")
    if x.shape[0] < min_vectors:
        raise FittingError(f"need at least {min_vectors} positive excess vectors, got {x.shape[0]}")
    _check_positive(x)
    if start is not None:
        a0, b0 = start.arrays()
        if start.kind != family_kind:
            a0, b0 = moment_start(x, family_kind)
    else:
        a0, b0 = moment_start(x, family_kind)
    theta0 = _pack(a0, b0, family_kind, sub)
    rng = np.random.default_rng(seed)
    starts = [theta0] + [theta0 + rng.normal(0.0, start_spread, theta0.size)
                         for _ in range(max(n_starts, 1) - 1)]
    trace = []
    best = None
    opts = {"xatol": 1e-7, "fatol": 1e-9, "maxiter": 4000 * theta0.size, "maxfev": 8000 * theta0.size}
    for i, th in enumerate(starts):
        run = _minimize(th, family_kind, sub, x, opts)
        trace.append({"start": i, "nll": run.fun, "nit": run.nit, "message": run.message})
        if run.fun < _PENALTY and (best is None or run.fun < best.fun):
            best = run
    if best is None:
        raise OptimizationError("no optimizer run reached a finite likelihood", trace)
    alpha, beta = _unpack(best.x, family_kind, sub)
    family = GeneratorFamily(family_kind, tuple(alpha), tuple(beta))
    at_boundary = family_kind == "gumbel" and bool(np.min(alpha) - 1.0 < _BOUNDARY_TOL)
    if at_boundary:
        log.warning("fit converged near the alpha > 1 boundary: alpha=%s", alpha)
    return MvGpModel(family, tuple(scales), tuple(thresholds), -best.fun, x.shape[0], sub,
                     converged=best.success, at_boundary=at_boundary)


def _minimize(theta0, kind, sub, x, opts) -> _Run:
    f = lambda th: _negloglik(th, kind, sub, x)  # noqa: E731
    res = optimize.minimize(f, theta0, method="Nelder-Mead", options=opts)
    nit = int(res.nit)
    # restart from the optimum until the value stops moving; simplex methods
    # can stall on a degenerate simplex
    for _ in range(5):
        again = optimize.minimize(f, res.x, method="Nelder-Mead", options=opts)
        nit += int(again.nit)
        improved = res.fun - again.fun
        if again.fun <= res.fun:
            res = again
        if improved <= 1e-9 * max(1.0, abs(res.fun)):
            break
    return _Run(float(res.fun), np.asarray(res.x), nit, bool(res.success), str(res.message))


def refit(model: MvGpModel, vectors, n_starts: int = 1, seed: int = 0, **kw) -> MvGpModel:
    """Fit the same family and submodel as ``model``, starting from its parameters."""
    return fit_mvgp(vectors, model.family.kind, model.submodel, n_starts=n_starts, seed=seed,
                    start=model.family, thresholds=model.thresholds, scales=model.scales, **kw)


def model_selection(vectors, families: Sequence[str] = FAMILIES, n_starts: int = 10,
                    seed: int = 0) -> list[dict]:
    """Fit every family (submodel M1) and rank by AIC.

    A family whose fit fails is reported with its error and ranked last.
    """
    rows = []
    n = len(vectors)
    for kind in families:
        try:
            m = fit_mvgp(vectors, kind, Submodel.M1, n_starts=n_starts, seed=seed)
            rows.append({"family": kind, "aic": m.aic, "bic": m.bic, "loglik": m.log_lik,
                         "k": m.n_params, "n": n, "model": m, "error": None})
        except (DomainError, OptimizationError) as exc:
            rows.append({"family": kind, "aic": math.inf, "bic": math.inf, "loglik": math.nan,
                         "k": Submodel.M1.n_params, "n": n, "model": None, "error": str(exc)})
    rows.sort(key=lambda r: r["aic"])
    return rows


def simplify_ladder(vectors, family: str = "gumbel", n_starts: int = 10, seed: int = 0) -> list[dict]:
    """Fit M1 to M4 and test each restriction against M1 by likelihood ratio."""
    full = fit_mvgp(vectors, family, Submodel.M1, n_starts=n_starts, seed=seed)
    rows = []
    for sub in Submodel:
        m = full if sub is Submodel.M1 else fit_mvgp(vectors, family, sub, n_starts=n_starts, seed=seed)
        df = Submodel.M1.n_params - sub.n_params
        if df:
            dev = max(0.0, 2.0 * (full.log_lik - m.log_lik))
            p = float(stats.chi2.sf(dev, df))
        else:
            dev, p = 0.0, 1.0
        rows.append({"submodel": sub.value, "k": sub.n_params, "loglik": m.log_lik, "aic": m.aic,
                     "bic": m.bic, "deviance": dev, "df": df, "p_value": p, "model": m})
    return rows


# --- standardization --------------------------------------------------------

def standardize(features, thresholds, scales, keep_all: bool = False) -> np.ndarray:
    """Map original-unit rows to standard form ``(y - u) / sigma``.

    Only rows with a strictly positive component are kept unless ``keep_all``.
    """
    y = np.atleast_2d(np.asarray(features, dtype=float))
    u = np.asarray(thresholds, dtype=float)
    s = np.asarray(scales, dtype=float)
    if np.any(s <= 0):
        raise DomainError("scales must be positive")
    x = (y - u) / s
    if keep_all:
        return x
    return x[np.max(x, axis=1) > 0]


def with_margins(model: MvGpModel, thresholds=None, scales=None, **meta) -> MvGpModel:
    """Copy of ``model`` with new margins or extra metadata."""
    return replace(model,
                   thresholds=model.thresholds if thresholds is None else tuple(thresholds),
                   scales=model.scales if scales is None else tuple(scales),
                   meta={**model.meta, **meta})
