"""Anomaly detection from the negative log-likelihood of a fitted GP model.

Cutoffs come from simulation: draw datasets of ``n`` vectors from the model,
fit the same model class to the first ``n - 1`` vectors and record the
negative log-likelihood of the last one. The upper quantiles of these values
are the cutoffs; a new vector whose NLL exceeds the cutoff at level ``s`` is
flagged at that level.
"""

from __future__ import annotations

import csv
import functools
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import pmap
from .errors import CalibrationError, DomainError, EvtFluError, FittingError
from .ingest import empirical_quantile
from .mvgp import MvGpModel, fit_mvgp, gp_log_density, refit
from .simulate import SimulationConfig, dataset_rng, make_rng, sample_gp

log = logging.getLogger(__name__)

LEVELS = (0.10, 0.05, 0.01, 0.001)
MAX_FAILED_FRACTION = 0.05


@dataclass(frozen=True)
class AnomalyCalibration:
    quantiles: dict
    n_datasets: int
    seed: int
    n_failed: int = 0
    nlls: tuple = field(default=(), repr=False, compare=False)

    def to_dict(self, include_samples: bool = False) -> dict:
        d = {"quantiles": {str(k): v for k, v in sorted(self.quantiles.items(), reverse=True)},
             "n_datasets": self.n_datasets, "seed": self.seed, "n_failed": self.n_failed}
        if include_samples:
            d["nlls"] = list(self.nlls)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnomalyCalibration":
        return cls({float(k): float(v) for k, v in d["quantiles"].items()}, int(d["n_datasets"]),
                   int(d["seed"]), int(d.get("n_failed", 0)), tuple(d.get("nlls", ())))


def nll_at(model, x) -> float:
    """Negative log-likelihood of one standardized vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (3,):
        raise DomainError("expected a single three-dimensional vector")
    return -float(gp_log_density(model, x))


def _calibration_task(i: int, model: MvGpModel, seed: int, n_vectors: int, n_starts: int) -> float:
    data = sample_gp(model, n_vectors, dataset_rng(seed, i))
    try:
        fit = refit(model, data[:-1], n_starts=n_starts, seed=i)
        return nll_at(fit, data[-1])
    except EvtFluError as exc:
        log.debug("calibration dataset %d failed: %s", i, exc)
        return math.nan


def calibration_nlls(model: MvGpModel, config: SimulationConfig, n_starts: int = 1,
                     n_jobs: int | None = 1) -> np.ndarray:
    """NLL of the last vector of each simulated dataset under a refit on the others.

    Failed refits appear as NaN.
    """
    if config.n_vectors < 11:
        raise DomainError("calibration datasets need at least 11 vectors")
    task = functools.partial(_calibration_task, model=model, seed=config.seed,
                             n_vectors=config.n_vectors, n_starts=n_starts)
    return np.array(pmap(task, range(config.n_datasets), n_jobs))


def calibrate(model: MvGpModel, config: SimulationConfig = SimulationConfig(),
              levels=LEVELS, n_starts: int = 1, n_jobs: int | None = 1) -> AnomalyCalibration:
    """Simulation-calibrated NLL cutoffs.

    Parameters
    ----------
    model : MvGpModel
        Model used both to simulate and as the class refitted per dataset.
    config : SimulationConfig
        ``n_vectors`` is the training size plus one.
    levels : sequence of float
        Significance levels; the cutoff at ``s`` is the ``1 - s`` quantile.
    n_starts : int
        Optimizer starts per refit, the first at the parameters of ``model``.
    n_jobs : int
        Worker processes; -1 uses every CPU.

    Raises
    ------
    CalibrationError
        More than 5% of the refits failed.
    """
    nlls = calibration_nlls(model, config, n_starts, n_jobs)
    ok = nlls[np.isfinite(nlls)]
    failed = int(nlls.size - ok.size)
    if failed > MAX_FAILED_FRACTION * nlls.size:
        raise CalibrationError(f"{failed} of {nlls.size} calibration fits failed")
    if failed:
        log.warning("%d calibration fits failed and were dropped", failed)
    q = {float(s): empirical_quantile(ok, 1.0 - s) for s in levels}
    return AnomalyCalibration(q, config.n_datasets, config.seed, failed, tuple(float(v) for v in nlls))


def test_anomaly(model, calibration: AnomalyCalibration, x) -> dict:
    """NLL at ``x`` and the significance levels whose cutoff it exceeds."""
    nll = nll_at(model, x)
    flagged = sorted((s for s, c in calibration.quantiles.items() if nll > c), reverse=True)
    return {"nll": nll, "flagged_levels": flagged}


test_anomaly.__test__ = False  # not a pytest test despite the name


def leave_one_out_nll(vectors, family_kind: str = "gumbel", n_starts: int = 10, seed: int = 0,
                      start=None) -> list[dict]:
    """Fit on all vectors but one and evaluate the NLL at the held-out vector.

    A fold whose fit fails is reported with ``nll = nan`` and its error.
    """
    x = np.asarray(vectors, dtype=float)
    if x.ndim != 2 or x.shape[0] < 11:
        raise FittingError("leave-one-out needs at least 11 vectors")
    out = []
    for i in range(x.shape[0]):
        rest = np.delete(x, i, axis=0)
        try:
            fit = fit_mvgp(rest, family_kind, n_starts=n_starts, seed=seed, start=start)
            out.append({"index": i, "nll": nll_at(fit, x[i]), "error": None})
        except EvtFluError as exc:
            out.append({"index": i, "nll": math.nan, "error": str(exc)})
    return out


def demo_points(model, seed: int = 0, n: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Two illustration points in standard form.

    (i) the simulated vector whose third component is closest to the 0.99
    quantile of simulated third components, with that component set to the
    quantile; (ii) point (i) with components scaled by (1.5, 0.5, 1.5).
    """
    sims = sample_gp(model, n, make_rng(seed, 0xA11))
    q = empirical_quantile(sims[:, 2], 0.99)
    base = sims[np.argmin(np.abs(sims[:, 2] - q))].copy()
    base[2] = q
    return base, base * np.array([1.5, 0.5, 1.5])


def nll_plot_csv(rows, calibration: AnomalyCalibration | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "nll", "label"])
    for r in rows:
        w.writerow([r["index"], r["nll"], r.get("label", "")])
    if calibration is not None:
        for s, c in sorted(calibration.quantiles.items(), reverse=True):
            w.writerow(["cutoff", c, f"level={s}"])
    return buf.getvalue()
