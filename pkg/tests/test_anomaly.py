import math

import numpy as np
import pytest
from scipy import optimize

from evtflu import anomaly
from evtflu.anomaly import AnomalyCalibration
from evtflu.errors import DomainError, FittingError
from evtflu.mvgp import MvGpModel, gp_log_density
from evtflu.simulate import SimulationConfig, sample_gp

from conftest import WEEK3

STD = MvGpModel(WEEK3.family, (1, 1, 1), (0, 0, 0))
TABLE = AnomalyCalibration({0.1: 4.72, 0.05: 5.60, 0.01: 7.79, 0.001: 14.50}, 1500, 0)


def test_mode_minimizes_nll():
    def nll(x):
        return anomaly.nll_at(STD, x) if max(x) > 0 else math.inf
    res = optimize.minimize(nll, [0.3, 0.3, 0.3], method="Nelder-Mead",
                            options={"xatol": 1e-9, "fatol": 1e-12})
    g = np.linspace(-0.5, 0.5, 5)
    grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3) + res.x
    grid = grid[grid.max(axis=1) > 0]
    assert np.all(-gp_log_density(STD, grid) >= res.fun - 1e-9)


def test_flags_follow_cutoffs():
    low = anomaly.test_anomaly(STD, TABLE, [0.3, 0.6, 0.4])
    assert low["nll"] < 4.72 and low["flagged_levels"] == []
    high = anomaly.test_anomaly(STD, TABLE, [6.0, -6.0, 9.0])
    assert high["nll"] > 14.5
    assert high["flagged_levels"] == [0.1, 0.05, 0.01, 0.001]


def test_nll_needs_one_vector():
    with pytest.raises(DomainError):
        anomaly.nll_at(STD, [1.0, 2.0])


def test_small_calibration_structure():
    cal = anomaly.calibrate(STD, SimulationConfig(seed=2, n_vectors=33, n_datasets=24))
    q = [cal.quantiles[s] for s in (0.1, 0.05, 0.01, 0.001)]
    assert q == sorted(q)
    assert len(cal.nlls) == 24 and cal.n_failed == 0
    again = anomaly.calibrate(STD, SimulationConfig(seed=2, n_vectors=33, n_datasets=24))
    assert again.quantiles == cal.quantiles
    assert AnomalyCalibration.from_dict(cal.to_dict()).quantiles == cal.quantiles


def test_flag_rate_with_known_model():
    """Cutoffs from the true model's NLL distribution flag fresh draws at rate s."""
    ref = -gp_log_density(STD, sample_gp(STD, 200_000, 1))
    cal = AnomalyCalibration({s: float(np.quantile(ref, 1 - s)) for s in (0.1, 0.05, 0.01)}, 0, 1)
    fresh = sample_gp(STD, 20_000, 2)
    nll = -gp_log_density(STD, fresh)
    for s, c in cal.quantiles.items():
        rate = np.mean(nll > c)
        assert abs(rate - s) < 2 * math.sqrt(s * (1 - s) / nll.size) + 1e-3


def test_demo_points():
    p1, p2 = anomaly.demo_points(STD, seed=3, n=50_000)
    sims = sample_gp(STD, 50_000, 3)
    assert p1[2] > np.quantile(sims[:, 2], 0.9)
    np.testing.assert_allclose(p2, p1 * [1.5, 0.5, 1.5])


def test_loo_duplicates_pairwise_equal():
    x = sample_gp(STD, 12, 5)
    dup = np.repeat(x, 2, axis=0)
    rows = anomaly.leave_one_out_nll(dup, n_starts=1)
    nll = np.array([r["nll"] for r in rows])
    np.testing.assert_allclose(nll[0::2], nll[1::2], rtol=1e-6)


def test_loo_needs_vectors():
    with pytest.raises(FittingError):
        anomaly.leave_one_out_nll(np.ones((5, 3)))


def test_plot_csv_includes_cutoffs():
    text = anomaly.nll_plot_csv([{"index": 0, "nll": 3.2, "label": "1990"}], TABLE)
    assert text.count("cutoff") == 4
