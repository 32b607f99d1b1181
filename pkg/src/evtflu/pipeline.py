"""End-to-end data preparation shared by the command line and the test suites."""

from __future__ import annotations

import math
import os
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import ingest, unigp
from .errors import ConfigurationError, DomainError, EstimationError
from .mvgp import MvGpModel, Submodel, fit_mvgp, standardize, with_margins
from .predict import DEFAULT_KAPPAS, below_threshold_prob

DATA_ENV = "EVT_DATA"
SEED_ENV = "EVT_SEED"
DEFAULT_DATA = Path("data") / "sentinelles_ili_weekly.csv"
TARGETS = ("week3", "size")


@dataclass
class PipelineConfig:
    input_path: str | None = None
    start_quantile: float = 0.88
    rate_threshold_quantile: float = 0.9
    size_threshold_quantile: float = 0.6
    kappas: list = field(default_factory=lambda: list(DEFAULT_KAPPAS))
    family: str = "gumbel"
    seed: int | None = None
    n_datasets: int = 1500
    n_vectors: int = 33
    n_starts: int = 10
    refit_starts: int = 1
    n_jobs: int = 1
    train_end: str = "2018-W52"
    end_rule: str = "serfling"
    sort: bool = True
    interpolate: bool = False

    def __post_init__(self):
        for name in ("start_quantile", "rate_threshold_quantile", "size_threshold_quantile"):
            q = getattr(self, name)
            if not 0.0 < q < 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1)")
        self.kappas = [float(k) for k in self.kappas]
        if any(not 0.0 < k <= 1.0 for k in self.kappas):
            raise ConfigurationError("kappas must lie in (0, 1]")
        if self.end_rule not in ("serfling", "threshold"):
            raise ConfigurationError("end_rule must be 'serfling' or 'threshold'")
        if self.n_datasets < 1 or self.n_vectors < 2:
            raise ConfigurationError("n_datasets must be >= 1 and n_vectors >= 2")

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**values)

    def resolved_seed(self) -> int:
        if self.seed is not None:
            return int(self.seed)
        env = os.environ.get(SEED_ENV)
        if env:
            try:
                return int(env)
            except ValueError:
                raise ConfigurationError(f"{SEED_ENV} must be an integer") from None
        return 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seed"] = self.resolved_seed()
        return d


def substream_seed(seed: int, name: str) -> int:
    """Deterministic 63-bit seed for a named sub-stream of ``seed``."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def data_path(config: PipelineConfig | None = None) -> Path:
    if config is not None and config.input_path:
        return Path(config.input_path)
    env = os.environ.get(DATA_ENV)
    return Path(env) if env else DEFAULT_DATA


def _parse_label(label: str) -> tuple[int, int]:
    m = ingest._WEEK_RE.match(label)
    if not m:
        raise ConfigurationError(f"cannot read ISO week {label!r}")
    return int(m.group(1)), int(m.group(2))


@dataclass
class Prepared:
    """Everything derived deterministically from the weekly series."""

    series: ingest.IncidenceSeries
    baseline: np.ndarray
    start_threshold: float
    rate_threshold: float
    size_threshold: float
    epidemics: list
    features: list
    train_mask: np.ndarray

    def matrix(self, target: str, train_only: bool = True) -> np.ndarray:
        feats = [f for f, keep in zip(self.features, self.train_mask) if keep or not train_only]
        return ingest.feature_matrix(feats, target)

    def thresholds(self, target: str) -> tuple[float, float, float]:
        third = self.rate_threshold if target == "week3" else self.size_threshold
        return self.rate_threshold, self.rate_threshold, third


def prepare(config: PipelineConfig, data: bytes | None = None) -> Prepared:
    """Parse, compute thresholds, segment and extract features.

    Weekly-rate quantiles use the weeks up to ``config.train_end``; the size
    quantile uses the epidemics starting up to then.
    """
    if data is None:
        path = data_path(config)
        if not path.exists():
            raise DomainError(f"input file {path} not found; set {DATA_ENV} or --input")
        data = path.read_bytes()
    series = ingest.parse_series(data, sort=config.sort, interpolate_missing=config.interpolate)
    last = _parse_label(config.train_end)
    train_rates = series.window(last=last).rates
    start_thr = ingest.empirical_quantile(train_rates, config.start_quantile)
    rate_thr = ingest.empirical_quantile(train_rates, config.rate_threshold_quantile)
    baseline = ingest.serfling_baseline(series) if config.end_rule == "serfling" else None
    epidemics = ingest.segment_epidemics(series, start_thr, config.end_rule, baseline)
    features = [ingest.epidemic_features(e) for e in epidemics]
    mask = np.array([series.records[e.start_index].key <= last for e in epidemics], dtype=bool)
    sizes = np.array([e.size for e, keep in zip(epidemics, mask) if keep])
    if sizes.size == 0:
        raise DomainError("no epidemics in the training window")
    size_thr = ingest.empirical_quantile(sizes, config.size_threshold_quantile)
    return Prepared(series, baseline if baseline is not None else np.full(len(series), math.nan),
                    start_thr, rate_thr, size_thr, epidemics, features, mask)


def univariate_fits(prep: Prepared) -> dict:
    """Exponential and free-shape fits per component, with the LR test for shape zero."""
    out = {}
    wk = prep.matrix("week3")
    sz = prep.matrix("size")
    columns = {"week1": (wk[:, 0], prep.rate_threshold), "week2": (wk[:, 1], prep.rate_threshold),
               "week3": (wk[:, 2], prep.rate_threshold), "size": (sz[:, 2], prep.size_threshold)}
    for name, (values, u) in columns.items():
        exp_fit = unigp.threshold_fit(values, u)
        entry = {"exponential": exp_fit}
        try:
            free = unigp.threshold_fit(values, u, free_gamma=True)
            entry["free"] = free
            entry["lr_p_value"] = unigp.lr_test_gamma_zero(free, exp_fit)
        except DomainError as exc:
            entry["free_error"] = str(exc)
        out[name] = entry
    return out


def fit_target(prep: Prepared, target: str, family: str = "gumbel", submodel=Submodel.M1,
               n_starts: int = 10, seed: int = 0, fits: dict | None = None) -> tuple[MvGpModel, np.ndarray]:
    """Fit the three-dimensional model for ``target`` on the training epidemics.

    Returns the model (with the historical maximum and the below-threshold
    probability stored as metadata) and the standardized vectors.
    """
    if target not in TARGETS:
        raise ConfigurationError(f"target must be one of {TARGETS}")
    fits = fits or univariate_fits(prep)
    third = "week3" if target == "week3" else "size"
    scales = (fits["week1"]["exponential"].sigma, fits["week2"]["exponential"].sigma,
              fits[third]["exponential"].sigma)
    u = prep.thresholds(target)
    rows = prep.matrix(target)
    x = standardize(rows, u, scales)
    model = fit_mvgp(x, family, submodel, n_starts=n_starts, seed=seed, thresholds=u, scales=scales)
    try:
        below = below_threshold_prob(rows, u)
    except EstimationError:
        below = None
    model = with_margins(model, target=target, history_max=float(rows[:, 2].max()),
                         below_threshold_prob=below)
    return model, x
