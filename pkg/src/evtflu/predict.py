"""Conditional exceedance of the third component given the first two.

With ``φ(x) = ∫ f_U(x + s) e^s ds`` and Fubini, every integral over ``x3``
collapses to a single integral over ``s``:

    ∫_{x3 > v} φ(x1, x2, x3) dx3 = ∫ f_1(x1 + s) f_2(x2 + s) S_3(v + s) e^s ds
    ∫_{ℝ} φ(x1, x2, x3) dx3      = ∫ f_1(x1 + s) f_2(x2 + s) e^s ds

so the conditional probability is a ratio of one-dimensional integrals with
log-concave integrands. Three cases arise. If one of ``x1, x2`` is positive,
the denominator is the full integral over ``x3``. If both are nonpositive and
``v > 0``, the vector is only a positive excess vector when ``x3 > 0``, so the
denominator becomes the integral over ``x3 > 0``. Otherwise the probability
is one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .errors import DomainError, EstimationError, NumericError
from .mvgp import GeneratorFamily, MvGpModel, _as_family

log = logging.getLogger(__name__)

DEFAULT_KAPPAS = (0.5, 0.75, 0.95, 1.0)
_OVERSHOOT_TOL = 1e-6


@dataclass(frozen=True)
class PredictionQuery:
    """Observed first two values and a level, all in original units."""

    y1: float
    y2: float
    level: float
    below_threshold_prob: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.below_threshold_prob <= 1.0:
            raise DomainError("below_threshold_prob must lie in [0, 1]")
        if not all(map(math.isfinite, (self.y1, self.y2, self.level))):
            raise DomainError("query values must be finite")


def _log_joint_tail(family: GeneratorFamily, x1: float, x2: float, v: float | None) -> float:
    """log ∫ f_1(x1+s) f_2(x2+s) e^s S_3(v+s) ds; ``v=None`` drops the S_3 factor."""
    a, b = family.arrays()
    if family.kind == "reverse_exponential":
        # integrand ∝ e^{B s} on s < m12, times (1 - e^{(v+s+b3)/a3}) when present
        big = 1.0 + 1.0 / a[0] + 1.0 / a[1]
        const = (x1 + b[0]) / a[0] + (x2 + b[1]) / a[1] - math.log(a[0] * a[1])
        m12 = min(-b[0] - x1, -b[1] - x2)
        if v is None:
            return const + big * m12 - math.log(big)
        c = 1.0 / a[2]
        m = min(m12, -b[2] - v)
        frac = big / (big + c) * math.exp(c * (v + b[2] + m))
        return const + big * m - math.log(big) + math.log1p(-frac)
    kinds = np.full(3 if v is not None else 2, family.code, dtype=np.int64)
    if v is None:
        types = np.array([K.PDF, K.PDF], dtype=np.int64)
        return K.log_integral(1.0, kinds, types, a[:2].copy(), b[:2].copy(), np.array([x1, x2]))
    types = np.array([K.PDF, K.PDF, K.SF], dtype=np.int64)
    return K.log_integral(1.0, kinds, types, a, b, np.array([x1, x2, v]))


def conditional_exceedance(model, x1: float, x2: float, v3: float) -> float:
    """``P(X3 > v3 | X1 = x1, X2 = x2)`` for a standard-form GP vector.

    Parameters
    ----------
    model : MvGpModel or GeneratorFamily
    x1, x2 : float
        Standardized first two components.
    v3 : float
        Standardized level for the third component. ``±inf`` are allowed.

    Returns
    -------
    float
        Probability in [0, 1].
    """
    family = _as_family(model)
    if family.dim != 3:
        raise DomainError("conditional exceedance needs a three-dimensional model")
    if not (math.isfinite(x1) and math.isfinite(x2)) or math.isnan(v3):
        raise DomainError("x1, x2 must be finite and v3 not NaN")
    observed_positive = max(x1, x2) > 0
    if not observed_positive and v3 <= 0:
        return 1.0
    if v3 == math.inf:
        return 0.0
    if v3 == -math.inf:
        return 1.0
    num = _log_joint_tail(family, x1, x2, v3)
    den = _log_joint_tail(family, x1, x2, None if observed_positive else 0.0)
    if not (math.isfinite(den) and not math.isnan(num)):
        raise NumericError(f"conditional integral failed: log numerator {num}, log denominator {den} "
                           f"at x=({x1}, {x2}), v={v3}")
    p = math.exp(num - den) if num > -math.inf else 0.0
    if p > 1.0:
        if p - 1.0 > _OVERSHOOT_TOL:
            log.warning("conditional probability %.3g exceeds 1; clamped", p)
        p = 1.0
    return p


def predict_level(model: MvGpModel, query: PredictionQuery) -> float:
    """Probability that the third component exceeds ``query.level``.

    When one of the first two observations is above its threshold the GP
    conditional probability is returned as is. Otherwise it is multiplied by
    ``query.below_threshold_prob``, the chance that the third component
    exceeds its threshold at all.
    """
    u = np.asarray(model.thresholds)
    s = np.asarray(model.scales)
    x1 = (query.y1 - u[0]) / s[0]
    x2 = (query.y2 - u[1]) / s[1]
    v = (query.level - u[2]) / s[2]
    if max(x1, x2) > 0:
        return conditional_exceedance(model, x1, x2, v)
    if query.level <= u[2]:
        raise DomainError("level at or below the third threshold is not estimable when the first "
                          "two observations are below their thresholds")
    return query.below_threshold_prob * conditional_exceedance(model, x1, x2, v)


def below_threshold_prob(features, thresholds) -> float:
    """Share of historical rows with the first two components at or below their
    thresholds whose third component exceeds its threshold."""
    y = np.atleast_2d(np.asarray(features, dtype=float))
    u = np.asarray(thresholds, dtype=float)
    if y.shape[1] != 3:
        raise DomainError("features must have three columns")
    quiet = (y[:, 0] <= u[0]) & (y[:, 1] <= u[1])
    if not quiet.any():
        raise EstimationError("no historical epidemic has both first components below threshold")
    return float(np.mean(y[quiet, 2] > u[2]))


def levels_from_kappas(base_max: float, kappas: Sequence[float] = DEFAULT_KAPPAS) -> list[float]:
    for k in kappas:
        if not 0.0 < k <= 1.0:
            raise DomainError("kappas must lie in (0, 1]")
    return [float(k) * float(base_max) for k in kappas]


def prediction_report(model: MvGpModel, y1: float, y2: float, base_max: float,
                      kappas: Sequence[float] = DEFAULT_KAPPAS,
                      below_prob: float = 1.0) -> list[dict]:
    """One ``{kappa, level, probability}`` row per kappa."""
    rows = []
    for k, level in zip(kappas, levels_from_kappas(base_max, kappas)):
        p = predict_level(model, PredictionQuery(y1, y2, level, below_prob))
        rows.append({"kappa": float(k), "level": level, "probability": p})
    return rows
