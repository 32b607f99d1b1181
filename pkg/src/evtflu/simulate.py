"""Sampling standard-form GP vectors from a generator model.

A draw is ``X = E + T - max(T)`` with ``E`` unit exponential and ``T`` from
the tilted generator law ``f_U(t) exp(max t) / E[exp(max U)]``. Tilted draws
come from an exact mixture-rejection scheme: pick component ``j`` with
probability proportional to ``E[exp(U_j)]``, draw ``U_j`` from its
exponentially tilted marginal and the other components untilted, then accept
with probability ``exp(max U) / Σ_k exp(U_k)`` (at least 1/3).

Random numbers come from numpy's Philox4x64-10 counter-based generator seeded
through ``SeedSequence``. Dataset ``i`` under seed ``s`` always uses the stream
``SeedSequence(s, spawn_key=(i,))``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DomainError
from .mvgp import GeneratorFamily, MvGpModel, _as_family

_BATCH_FLOOR = 64


@dataclass(frozen=True)
class SimulationConfig:
    seed: int = 0
    n_vectors: int = 33
    n_datasets: int = 1500

    def __post_init__(self):
        if self.n_vectors < 1 or self.n_datasets < 1:
            raise DomainError("n_vectors and n_datasets must be at least 1")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``seed`` and an optional sub-stream key."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in stream))
    return np.random.Generator(np.random.Philox(ss))


def dataset_rng(seed: int, index: int) -> np.random.Generator:
    return make_rng(seed, index)


def _as_rng(rng_or_seed) -> np.random.Generator:
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return make_rng(0 if rng_or_seed is None else rng_or_seed)


def sample_generator(family: GeneratorFamily, n: int, rng) -> np.ndarray:
    """Untilted generator draws, shape (n, d)."""
    family = _as_family(family)
    rng = _as_rng(rng)
    a, b = family.arrays()
    e = rng.standard_exponential((n, family.dim))
    if family.kind == "gumbel":
        return b - np.log(e) / a
    if family.kind == "reverse_gumbel":
        return b + np.log(e) / a
    return -b - a * e


def _tilted_component(kind: str, a: float, b: float, n: int, rng) -> np.ndarray:
    # marginal density proportional to e^u f(u)
    if kind == "gumbel":
        return b - np.log(rng.standard_gamma(1.0 - 1.0 / a, n)) / a
    if kind == "reverse_gumbel":
        return b + np.log(rng.standard_gamma(1.0 + 1.0 / a, n)) / a
    return -b - a * rng.standard_exponential(n) / (1.0 + a)


def _log_tilt_mass(kind: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # log E[exp(U_j)] per component
    if kind == "gumbel":
        return b + gammaln(1.0 - 1.0 / a)
    if kind == "reverse_gumbel":
        return b + gammaln(1.0 + 1.0 / a)
    return -b - np.log1p(a)


def sample_tilted_generator(family: GeneratorFamily, n: int, rng) -> np.ndarray:
    """Draws from ``f_U(t) exp(max t) / E[exp(max U)]``, shape (n, d)."""
    family = _as_family(family)
    rng = _as_rng(rng)
    a, b = family.arrays()
    d = family.dim
    lw = _log_tilt_mass(family.kind, a, b)
    w = np.exp(lw - lw.max())
    w /= w.sum()
    out = np.empty((n, d))
    filled = 0
    while filled < n:
        m = max(int(1.6 * (n - filled)), _BATCH_FLOOR)
        j = rng.choice(d, size=m, p=w)
        u = sample_generator(family, m, rng)
        for k in range(d):
            sel = j == k
            u[sel, k] = _tilted_component(family.kind, a[k], b[k], int(sel.sum()), rng)
        top = u.max(axis=1)
        accept_log = top - (top + np.log(np.exp(u - top[:, None]).sum(axis=1)))
        keep = np.log(rng.random(m)) < accept_log
        take = u[keep][: n - filled]
        out[filled:filled + take.shape[0]] = take
        filled += take.shape[0]
    return out


def sample_gp(model, n: int, seed=None) -> np.ndarray:
    """Standard-form GP draws.

    Args:
        model: ``MvGpModel`` or ``GeneratorFamily``.
        n: Number of vectors.
        seed: Integer seed or a ``numpy.random.Generator``.

    Returns:
        Array of shape (n, d); every row has its maximum strictly positive.
    """
    family = _as_family(model)
    if n < 0:
        raise DomainError("n must be nonnegative")
    rng = _as_rng(seed)
    if n == 0:
        return np.empty((0, family.dim))
    t = sample_tilted_generator(family, n, rng)
    e = rng.standard_exponential(n)
    return e[:, None] + t - t.max(axis=1, keepdims=True)


def sample_datasets(model, config: SimulationConfig) -> np.ndarray:
    """Array of shape (n_datasets, n_vectors, d); dataset i uses ``dataset_rng(seed, i)``."""
    family = _as_family(model)
    out = np.empty((config.n_datasets, config.n_vectors, family.dim))
    for i in range(config.n_datasets):
        out[i] = sample_gp(family, config.n_vectors, dataset_rng(config.seed, i))
    return out


def unstandardize(vectors, model: MvGpModel) -> np.ndarray:
    """``y = u + sigma * x`` component-wise."""
    x = np.asarray(vectors, dtype=float)
    return np.asarray(model.thresholds) + np.asarray(model.scales) * x


def datasets_to_csv(datasets: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset_id", "vector_id", "x1", "x2", "x3"])
    for i, ds in enumerate(datasets):
        for k, row in enumerate(ds):
            w.writerow([i, k, *(repr(float(v)) for v in row)])
    return buf.getvalue()
