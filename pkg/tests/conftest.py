import datetime as dt

import numpy as np
import pytest

from evtflu.mvgp import GeneratorFamily, MvGpModel

WEEK3 = MvGpModel(GeneratorFamily("gumbel", (2.22, 10.37, 3.21), (0.0, 0.84, 0.59)),
                  (72.0, 256.0, 392.0), (339.0, 339.0, 339.0))
SIZES = MvGpModel(GeneratorFamily("gumbel", (2.22, 38.77, 1.76), (0.0, 0.89, -0.70)),
                  (72.0, 256.0, 1428.0), (339.0, 339.0, 4144.0))


def synthetic_csv(seed: int = 3, first=(1985, 1), last=(2019, 8), header=True) -> str:
    """Seasonal weekly series with one winter epidemic per season."""
    rng = np.random.default_rng(seed)
    day = dt.date.fromisocalendar(*first, 1)
    end = dt.date.fromisocalendar(*last, 1)
    keys = []
    while day <= end:
        y, w, _ = day.isocalendar()
        keys.append((y, w))
        day += dt.timedelta(weeks=1)
    t = np.arange(len(keys))
    rates = 120 + 60 * np.cos(2 * np.pi * t / 52.18) + rng.normal(0, 8, t.size)
    for i, (y, w) in enumerate(keys):
        if w == 48 or (i == 0 and w < 5):
            peak = rng.lognormal(np.log(450), 0.45)
            length = int(rng.integers(9, 14))
            shape = np.sin(np.pi * np.arange(1, length + 1) / (length + 1)) ** 2
            lag = int(rng.integers(0, 6))
            j = i + lag
            rates[j:j + length] += peak * shape[: max(0, min(length, len(keys) - j))]
    rates = np.maximum(rates, 0.0)
    lines = ["week,inc100"] if header else []
    lines += [f"{y}{w:02d},{r:.1f}" for (y, w), r in zip(keys, rates)]
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="session")
def week3_model():
    return WEEK3


@pytest.fixture(scope="session")
def sizes_model():
    return SIZES


@pytest.fixture(scope="session")
def synthetic_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "ili.csv"
    path.write_text(synthetic_csv())
    return path


def weekly_csv(rates, first=(1990, 1)) -> str:
    """Consecutive ISO weeks starting at ``first`` with the given rates."""
    day = dt.date.fromisocalendar(*first, 1)
    lines = []
    for r in rates:
        y, w, _ = day.isocalendar()
        lines.append(f"{y}{w:02d},{r}")
        day += dt.timedelta(weeks=1)
    return "\n".join(lines) + "\n"


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
