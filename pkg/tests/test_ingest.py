import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evtflu import ingest
from evtflu.errors import CalibrationError, DomainError, OrderingError, ParseError

from conftest import synthetic_csv, weekly_csv


def test_parse_two_rows():
    s = ingest.parse_series("198501,123\n198502,456")
    assert len(s) == 2
    np.testing.assert_array_equal(s.rates, [123, 456])
    assert s.labels == ["1985-W01", "1985-W02"]


def test_parse_rejects_descending_weeks():
    with pytest.raises(OrderingError):
        ingest.parse_series("198502,10\n198501,20")


def test_parse_sorts_when_asked():
    s = ingest.parse_series("198502,10\n198501,20", sort=True)
    np.testing.assert_array_equal(s.rates, [20, 10])


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as err:
        ingest.parse_series("198501,1\n198502,abc\n")
    assert err.value.line == 2


def test_parse_header_variants_and_comments():
    text = "# source file\nweek,indicator,inc,inc100\n198502,3,1,20\n198501,3,1,10\n"
    s = ingest.parse_series(text, sort=True)
    np.testing.assert_array_equal(s.rates, [10, 20])


def test_negative_rate_rejected():
    with pytest.raises(DomainError):
        ingest.parse_series("198501,-1\n")


def test_gap_rejected_or_interpolated():
    with pytest.raises(DomainError):
        ingest.parse_series("198501,10\n198503,30\n")
    s = ingest.parse_series("198501,10\n198503,30\n", interpolate_missing=True)
    np.testing.assert_allclose(s.rates, [10, 20, 30])


def test_week_53_years():
    s = ingest.parse_series("200453,1\n200501,2\n")
    assert s.labels == ["2004-W53", "2005-W01"]
    with pytest.raises(DomainError):
        ingest.parse_series("200553,1\n")


def test_season_boundary():
    assert ingest.WeeklyRecord(2009, 40, 1.0).season == 2009
    assert ingest.WeeklyRecord(2010, 5, 1.0).season == 2009


def test_empirical_quantile_midpoint():
    assert ingest.empirical_quantile(np.arange(1, 11), 0.5) == 5.5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e4), min_size=1, max_size=50), st.floats(0, 1))
def test_empirical_quantile_bounded(values, p):
    q = ingest.empirical_quantile(values, p)
    assert min(values) <= q <= max(values)


def test_flat_series_baseline():
    upper = ingest.serfling_baseline(np.full(200, 100.0))
    assert np.all(upper > 100.0)
    np.testing.assert_allclose(upper, upper[0], rtol=1e-9)
    series = ingest.parse_series(weekly_csv([100] * 200))
    assert ingest.segment_epidemics(series, 150.0, "serfling", upper) == []


def test_short_series_baseline_fails():
    with pytest.raises(CalibrationError):
        ingest.serfling_baseline(np.full(80, 10.0))


def test_all_zero_series_no_epidemics():
    s = ingest.parse_series("\n".join(f"2000{w:02d},0" for w in range(1, 53)))
    assert ingest.segment_epidemics(s, 1.0, "threshold") == []


def test_threshold_segmentation_exact():
    rates = [10, 50, 60, 70, 20, 10, 55, 10, 80, 90, 10]
    s = ingest.parse_series("\n".join(f"2000{w + 1:02d},{r}" for w, r in enumerate(rates)))
    eps = ingest.segment_epidemics(s, 40.0, "threshold")
    # the isolated week 7 is not two consecutive weeks; weeks 9-10 are in the same season
    assert [(e.start_index, e.end_index) for e in eps] == [(1, 3)]
    assert eps[0].size == 180


def test_serfling_end_extends_past_threshold_run():
    rates = [10, 50, 60, 35, 30, 10]
    base = np.array([20, 20, 20, 20, 20, 20], dtype=float)
    s = ingest.parse_series("\n".join(f"2000{w + 1:02d},{r}" for w, r in enumerate(rates)))
    (e,) = ingest.segment_epidemics(s, 40.0, "serfling", base)
    assert (e.start_index, e.end_index) == (1, 4)


def test_features_from_rates():
    e = ingest.Epidemic(0, 3, (300.0, 400.0, 500.0, 100.0), 1300.0, 2000)
    f = ingest.epidemic_features(e)
    assert (f.y1, f.y2, f.y3, f.size) == (300, 400, 500, 1300)
    assert f.row("size") == (300, 400, 1300)


def test_short_epidemic_incomplete():
    f = ingest.epidemic_features(ingest.Epidemic(0, 1, (300.0, 400.0), 700.0, 2000))
    assert not f.complete
    assert ingest.feature_matrix([f], "week3").shape == (0, 3)
    assert ingest.feature_matrix([f], "size").shape == (1, 3)


def test_synthetic_series_segments_one_per_season():
    s = ingest.parse_series(synthetic_csv())
    base = ingest.serfling_baseline(s)
    eps = ingest.segment_epidemics(s, ingest.empirical_quantile(s.rates, 0.88), "serfling", base)
    starts = [s.records[e.start_index].season for e in eps]
    assert len(starts) == len(set(starts)) >= 30
    assert all(e.duration >= 2 for e in eps)
    assert all(math.isclose(e.size, sum(e.weekly_rates)) for e in eps)


def test_epidemics_json_round_trip():
    s = ingest.parse_series(synthetic_csv())
    eps = ingest.segment_epidemics(s, 350.0, "threshold")
    assert ingest.epidemics_from_json(ingest.epidemics_to_json(eps)) == eps
