"""Scoring probability forecasts of threshold exceedances.

Includes the standardized Brier score, precision-recall curves, average
precision, a logistic-regression baseline, and two harnesses: leave-one-out
on observed epidemics and fit-then-predict on simulated datasets.
"""

from __future__ import annotations

import csv
import functools
import io
import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from ._parallel import pmap
from .errors import (DomainError, EstimationError, EvtFluError, SeparationError,
                     UndefinedScoreError)
from .mvgp import MvGpModel, fit_mvgp, refit, standardize
from .predict import (PredictionQuery, below_threshold_prob, conditional_exceedance,
                      levels_from_kappas, predict_level)
from .simulate import SimulationConfig, dataset_rng, sample_gp, unstandardize
from .unigp import fit_exponential

log = logging.getLogger(__name__)

SOURCES = ("gp", "logistic", "true_model")
# a logistic level is scored only if this share of simulated datasets gave a fit
LOGISTIC_MIN_SHARE = 0.5


@dataclass(frozen=True)
class PredictionRecord:
    p_hat: float
    outcome: int
    level: float
    source: str
    fold: int = -1

    def __post_init__(self):
        if not 0.0 <= self.p_hat <= 1.0:
            raise DomainError(f"p_hat must lie in [0, 1], got {self.p_hat}")
        if self.outcome not in (0, 1):
            raise DomainError("outcome must be 0 or 1")
        if self.source not in SOURCES:
            raise DomainError(f"unknown source {self.source!r}")


@dataclass(frozen=True)
class PrPoint:
    cutoff: float
    precision: float
    recall: float


def _arrays(records=None, p_hat=None, outcomes=None):
    if records is not None:
        p = np.array([r.p_hat for r in records], dtype=float)
        o = np.array([r.outcome for r in records], dtype=float)
    else:
        p = np.asarray(p_hat, dtype=float).ravel()
        o = np.asarray(outcomes, dtype=float).ravel()
    if p.shape != o.shape:
        raise DomainError("predictions and outcomes differ in length")
    return p, o


def brier_standardized(records=None, *, p_hat=None, outcomes=None) -> float:
    """``1 - mean((p - o)^2) / (q (1 - q))`` with ``q`` the mean outcome."""
    p, o = _arrays(records, p_hat, outcomes)
    q = o.mean() if o.size else math.nan
    if not 0.0 < q < 1.0:
        raise UndefinedScoreError("standardized Brier score needs both outcome classes")
    return float(1.0 - np.mean((p - o) ** 2) / (q * (1.0 - q)))


def pr_curve(records=None, *, p_hat=None, outcomes=None) -> list[PrPoint]:
    """Precision and recall when predicting positive for ``p_hat >= cutoff``,
    one point per distinct cutoff, from the highest cutoff down."""
    p, o = _arrays(records, p_hat, outcomes)
    pos = o.sum()
    if pos == 0:
        raise UndefinedScoreError("precision-recall needs at least one positive outcome")
    order = np.argsort(-p, kind="mergesort")
    p, o = p[order], o[order]
    tp = np.cumsum(o)
    fp = np.cumsum(1.0 - o)
    # last index of each block of tied scores
    ends = np.r_[np.nonzero(np.diff(p))[0], p.size - 1]
    return [PrPoint(float(p[k]), float(tp[k] / (tp[k] + fp[k])), float(tp[k] / pos)) for k in ends]


def average_precision(records=None, *, p_hat=None, outcomes=None) -> float:
    """``Σ_n (R_n - R_{n-1}) P_n`` over the precision-recall sweep."""
    pts = pr_curve(records, p_hat=p_hat, outcomes=outcomes)
    ap, prev = 0.0, 0.0
    for pt in pts:
        ap += (pt.recall - prev) * pt.precision
        prev = pt.recall
    return float(ap)


# --- logistic baseline ---------------------------------------------------------

@dataclass(frozen=True)
class LogisticFit:
    coef: tuple  # intercept, slope y1, slope y2
    n_iter: int


def fit_logistic(features, outcomes, max_iter: int = 100, tol: float = 1e-10) -> LogisticFit:
    """Logistic regression of ``outcomes`` on an intercept and ``(y1, y2)`` by IRLS.

    Covariates are centred and scaled internally for conditioning; the
    returned coefficients are on the original scale.

    Raises:
        DomainError: Only one outcome class, or a rank-deficient design.
        SeparationError: The classes are (quasi-)separated, so no finite
            maximum exists.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(outcomes, dtype=float).ravel()
    if X.shape[0] != y.size or X.shape[1] != 2:
        raise DomainError("features must have shape (n, 2) matching outcomes")
    if y.min() == y.max():
        raise DomainError("logistic regression needs both outcome classes")
    mu, sd = X.mean(axis=0), X.std(axis=0)
    if np.any(sd == 0):
        raise DomainError("constant covariate")
    Z = np.column_stack([np.ones(y.size), (X - mu) / sd])
    if np.linalg.matrix_rank(Z) < 3:
        raise DomainError("design matrix is rank deficient")
    beta = np.zeros(3)
    beta[0] = math.log(y.mean() / (1.0 - y.mean()))
    dev_prev = math.inf
    for it in range(1, max_iter + 1):
        eta = Z @ beta
        p = expit(eta)
        w = p * (1.0 - p)
        if np.max(np.abs(eta)) > 30 or (np.min(w) < 1e-12 and _separated(Z, y, eta)):
            raise SeparationError("logistic fit diverges: outcomes are separated by the covariates")
        step = np.linalg.solve(Z.T @ (w[:, None] * Z), Z.T @ (y - p))
        beta = beta + step
        eta = Z @ beta
        dev = -2.0 * float(np.sum(y * eta - np.logaddexp(0.0, eta)))
        if abs(dev_prev - dev) < tol * (abs(dev) + 0.1):
            break
        dev_prev = dev
    else:
        raise SeparationError("logistic fit did not converge")
    if np.max(np.abs(Z @ beta)) > 30:
        raise SeparationError("logistic fit diverges: outcomes are separated by the covariates")
    slopes = beta[1:] / sd
    intercept = beta[0] - float(slopes @ mu)
    return LogisticFit((float(intercept), float(slopes[0]), float(slopes[1])), it)


def _separated(Z, y, eta) -> bool:
    return bool(np.all((eta > 0) == (y > 0.5)))


def predict_logistic(fit: LogisticFit | Sequence[float], y1, y2):
    c = fit.coef if isinstance(fit, LogisticFit) else tuple(fit)
    out = expit(c[0] + c[1] * np.asarray(y1, dtype=float) + c[2] * np.asarray(y2, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


# --- scoring helpers --------------------------------------------------------------

def _score(p: np.ndarray, o: np.ndarray) -> dict:
    out = {"n": int(p.size), "positives": int(o.sum())}
    try:
        out["brier"] = brier_standardized(p_hat=p, outcomes=o)
    except UndefinedScoreError as exc:
        out["brier"], out["brier_error"] = None, str(exc)
    try:
        out["ap"] = average_precision(p_hat=p, outcomes=o)
    except UndefinedScoreError as exc:
        out["ap"], out["ap_error"] = None, str(exc)
    return out


def _quartiles(p: np.ndarray, o: np.ndarray) -> dict:
    out = {}
    for cls in (0, 1):
        sel = p[o == cls]
        out[str(cls)] = [float(v) for v in np.quantile(sel, [0.0, 0.25, 0.5, 0.75, 1.0])] if sel.size else None
    return out


def records_to_csv(records: Sequence[PredictionRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fold", "level", "p_hat", "outcome", "source"])
    for r in records:
        w.writerow([r.fold, r.level, repr(r.p_hat), r.outcome, r.source])
    return buf.getvalue()


def pr_curve_csv(points: Sequence[PrPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cutoff", "precision", "recall"])
    for pt in points:
        w.writerow([pt.cutoff, pt.precision, pt.recall])
    return buf.getvalue()


# --- leave-one-out on observed epidemics -----------------------------------------------

def _fold_scales(train: np.ndarray, thresholds) -> tuple:
    scales = []
    for j in range(3):
        v = train[:, j]
        exc = v[v > thresholds[j]] - thresholds[j]
        scales.append(fit_exponential(exc).sigma)
    return tuple(scales)


def _gp_probability(model: MvGpModel, y1: float, y2: float, level: float, below: float,
                    train: np.ndarray) -> float:
    u = model.thresholds
    if y1 <= u[0] and y2 <= u[1] and level <= u[2]:
        # below the third threshold the GP says nothing; use the empirical
        # share of quiet training epidemics that exceeded the level
        quiet = (train[:, 0] <= u[0]) & (train[:, 1] <= u[1])
        if not quiet.any():
            raise EstimationError("no quiet training epidemics")
        return float(np.mean(train[quiet, 2] > level))
    return predict_level(model, PredictionQuery(y1, y2, level, below))


def loo_assess(features, thresholds, levels: Sequence[float], family: str = "gumbel",
               n_starts: int = 10, seed: int = 0, min_exceedances: int = 2) -> dict:
    """Leave-one-out assessment on observed epidemics.

    Parameters
    ----------
    features : array_like, shape (n, 3)
        ``(y1, y2, target)`` in original units for every epidemic.
    thresholds : sequence of float
        Fixed thresholds ``(u1, u2, u3)``.
    levels : sequence of float
        Levels for the target, original units.
    family : str
        Generator family refitted per fold.
    n_starts, seed : int
        Optimizer settings per fold.
    min_exceedances : int
        Levels exceeded fewer times in ``features`` are skipped.

    Returns
    -------
    dict
        ``records`` (list of PredictionRecord), ``scores`` per level and
        source, ``skipped`` levels with reasons and ``failures`` per fold.
    """
    y = np.atleast_2d(np.asarray(features, dtype=float))
    u = tuple(float(v) for v in thresholds)
    active, skipped = [], {}
    for lv in levels:
        k = int(np.sum(y[:, 2] > lv))
        if k < min_exceedances:
            skipped[float(lv)] = "no exceedance" if k == 0 else f"only {k} exceedance"
        else:
            active.append(float(lv))
    records, failures = [], []
    start = None
    for i in range(y.shape[0]):
        train = np.delete(y, i, axis=0)
        y1, y2, y3 = y[i]
        try:
            scales = _fold_scales(train, u)
            x = standardize(train, u, scales)
            model = fit_mvgp(x, family, n_starts=n_starts, seed=seed, start=start,
                             thresholds=u, scales=scales)
            start = model.family
            try:
                below = below_threshold_prob(train, u)
            except EstimationError:
                below = math.nan
        except EvtFluError as exc:
            failures.append({"fold": i, "source": "gp", "error": str(exc)})
            model = None
        for lv in active:
            outcome = int(y3 > lv)
            if model is not None:
                try:
                    p = _gp_probability(model, y1, y2, lv, below, train)
                    if math.isnan(p):
                        raise EstimationError("below-threshold probability unavailable")
                    records.append(PredictionRecord(min(max(p, 0.0), 1.0), outcome, lv, "gp", i))
                except EvtFluError as exc:
                    failures.append({"fold": i, "level": lv, "source": "gp", "error": str(exc)})
            try:
                lf = fit_logistic(train[:, :2], train[:, 2] > lv)
                records.append(PredictionRecord(predict_logistic(lf, y1, y2), outcome, lv, "logistic", i))
            except EvtFluError as exc:
                failures.append({"fold": i, "level": lv, "source": "logistic", "error": str(exc)})
    return {"records": records, "scores": _scores_by_level(records, active),
            "skipped": skipped, "failures": failures}


def _scores_by_level(records, levels, sources=("gp", "logistic", "true_model")) -> dict:
    out = {}
    for lv in levels:
        out[lv] = {}
        for src in sources:
            sel = [r for r in records if r.level == lv and r.source == src]
            if sel:
                p, o = _arrays(sel)
                out[lv][src] = _score(p, o)
    return out


# --- simulated datasets -------------------------------------------------------------

def _sim_task(i: int, true_model: MvGpModel, seed: int, n_vectors: int, levels: tuple,
              n_starts: int, logistic: bool):
    data = sample_gp(true_model, n_vectors, dataset_rng(seed, i))
    train, test = data[:-1], data[-1]
    u3, s3 = true_model.thresholds[2], true_model.scales[2]
    vs = [(lv - u3) / s3 for lv in levels]
    out = {"gp": None, "true_model": [], "logistic": [None] * len(levels), "error": None,
           "outcome": [int(test[2] > v) for v in vs]}
    out["true_model"] = [conditional_exceedance(true_model, test[0], test[1], v) for v in vs]
    try:
        fit = refit(true_model, train, n_starts=n_starts, seed=i)
        out["gp"] = [conditional_exceedance(fit, test[0], test[1], v) for v in vs]
    except EvtFluError as exc:
        out["error"] = str(exc)
    if logistic:
        y_train = unstandardize(train, true_model)
        y_test = unstandardize(test, true_model)
        for k, lv in enumerate(levels):
            try:
                lf = fit_logistic(y_train[:, :2], y_train[:, 2] > lv)
                out["logistic"][k] = predict_logistic(lf, y_test[0], y_test[1])
            except EvtFluError:
                pass
    return out


def sim_assess(true_model: MvGpModel, config: SimulationConfig = SimulationConfig(),
               levels: Sequence[float] | None = None, base_max: float | None = None,
               kappas: Sequence[float] = (0.5, 0.75, 0.95, 1.0), n_starts: int = 1,
               n_jobs: int | None = 1, logistic: bool = True) -> dict:
    """Fit-on-(n-1), predict-the-last assessment on datasets simulated from ``true_model``.

    Levels are given in original units, either directly or as
    ``kappa * base_max``. For every dataset the third component of the last
    vector is predicted from its first two components by the refitted model,
    by the true model, and by a logistic regression fitted to the training
    vectors in original units.

    Returns a dict with ``records``, ``scores`` (Brier and AP per level and
    source), ``quartiles`` of predictions split by outcome, ``n_failed`` and,
    per level, the number of datasets where the logistic fit was possible.
    A logistic level counts as evaluable when at least half of the datasets
    gave a fit.
    """
    if levels is None:
        if base_max is None:
            raise DomainError("give levels or base_max")
        levels = levels_from_kappas(base_max, kappas)
    levels = tuple(float(v) for v in levels)
    task = functools.partial(_sim_task, true_model=true_model, seed=config.seed,
                             n_vectors=config.n_vectors, levels=levels, n_starts=n_starts,
                             logistic=logistic)
    results = pmap(task, range(config.n_datasets), n_jobs)
    records = []
    n_failed = 0
    logistic_counts = {lv: 0 for lv in levels}
    for i, res in enumerate(results):
        if res["gp"] is None:
            n_failed += 1
        for k, lv in enumerate(levels):
            o = res["outcome"][k]
            records.append(PredictionRecord(res["true_model"][k], o, lv, "true_model", i))
            if res["gp"] is not None:
                records.append(PredictionRecord(res["gp"][k], o, lv, "gp", i))
            if res["logistic"][k] is not None:
                logistic_counts[lv] += 1
                records.append(PredictionRecord(res["logistic"][k], o, lv, "logistic", i))
    scores = _scores_by_level(records, levels)
    quartiles = {}
    for lv in levels:
        quartiles[lv] = {}
        for src in SOURCES:
            sel = [r for r in records if r.level == lv and r.source == src]
            if sel:
                p, o = _arrays(sel)
                quartiles[lv][src] = _quartiles(p, o)
        evaluable = logistic_counts[lv] >= LOGISTIC_MIN_SHARE * config.n_datasets
        if "logistic" in scores[lv]:
            scores[lv]["logistic"]["evaluable"] = evaluable
    return {"levels": list(levels), "records": records, "scores": scores, "quartiles": quartiles,
            "n_failed": n_failed, "logistic_fits": logistic_counts}


def scores_to_json_ready(scores: dict) -> dict:
    return {str(lv): v for lv, v in scores.items()}


def record_dicts(records) -> list[dict]:
    return [asdict(r) for r in records]
