"""Deterministic synthetic fixtures with planted hierarchical correlation.

Stocks get log-normal volatilities and a block equicorrelation structure
matching a generated classification tree: pairs sharing a finer cluster are
more correlated. Everything is driven by one seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import ClassificationTree, ReturnsPanel, tree_from_labels
from .errors import InputError
from .stats_core import CovarianceMatrix


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape and strength of the planted structure.

    ``clusters`` and ``rho`` run from the most granular level up;
    ``market_rho`` applies to pairs sharing no cluster. The correlation
    ladder must decrease toward coarser levels (and stay nonnegative) for
    the planted matrix to be positive-definite.
    """

    n: int
    t: int
    clusters: tuple[int, ...]
    rho: tuple[float, ...]
    market_rho: float = 0.0
    vol_log_mean: float = -3.9
    vol_log_sd: float = 0.35
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(int(k) for k in self.clusters))
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        if len(self.clusters) < 1:
            raise InputError("need at least one classification level")
        if len(self.rho) != len(self.clusters):
            raise InputError("need one correlation per level")
        if any(k < 1 for k in self.clusters):
            raise InputError("cluster counts must be positive")
        if any(self.clusters[i] < self.clusters[i + 1] for i in range(len(self.clusters) - 1)):
            raise InputError(f"cluster counts must not increase with level: {self.clusters}")
        if self.n < 2 * self.clusters[0]:
            raise InputError(f"need n >= 2 * K1 = {2 * self.clusters[0]}, got {self.n}")
        if self.t < 2:
            raise InputError("need at least 2 periods")
        ladder = list(self.rho) + [self.market_rho]
        if not all(-1.0 < r < 1.0 for r in ladder):
            raise InputError("correlations must lie in (-1, 1)")
        if any(ladder[i] < ladder[i + 1] for i in range(len(ladder) - 1)) or ladder[-1] < 0.0:
            raise InputError(f"correlation ladder must be nonincreasing and nonnegative: {ladder}")
        if self.vol_log_sd < 0.0:
            raise InputError("vol_log_sd must be nonnegative")


@dataclass(frozen=True)
class SyntheticInstance:
    panel: ReturnsPanel
    tree: ClassificationTree
    population_cov: CovarianceMatrix
    sigma: np.ndarray


def generate(spec: SyntheticSpec) -> SyntheticInstance:
    """Sample one instance; identical specs produce identical instances."""
    rng = np.random.default_rng(spec.seed)
    tickers = tuple(f"S{i:04d}" for i in range(1, spec.n + 1))
    p = len(spec.clusters)

    assignments = [_balanced_assignment(spec.n, spec.clusters[0], rng)]
    for lvl in range(1, p):
        assignments.append(_balanced_assignment(spec.clusters[lvl - 1], spec.clusters[lvl], rng))

    labels = []
    for i in range(spec.n):
        row = []
        a = assignments[0][i]
        row.append(f"L1C{a + 1:03d}")
        for lvl in range(1, p):
            a = assignments[lvl][a]
            row.append(f"L{lvl + 1}C{a + 1:03d}")
        labels.append(tuple(row))
    tree = tree_from_labels(tickers, labels)

    corr = np.full((spec.n, spec.n), spec.market_rho)
    for lvl in range(p, 0, -1):
        composed = tree.stock_clusters(lvl)
        for a in range(tree.cluster_counts[lvl - 1]):
            idx = np.flatnonzero(composed == a)
            corr[np.ix_(idx, idx)] = spec.rho[lvl - 1]
    np.fill_diagonal(corr, 1.0)

    sigma = rng.lognormal(spec.vol_log_mean, spec.vol_log_sd, spec.n)
    cov = corr * np.outer(sigma, sigma)
    chol = np.linalg.cholesky(cov)
    values = chol @ rng.standard_normal((spec.n, spec.t))
    dates = tuple(f"d{s:04d}" for s in range(1, spec.t + 1))
    panel = ReturnsPanel(tickers, dates, values)
    return SyntheticInstance(panel, tree, CovarianceMatrix(tickers, cov), sigma)


def _balanced_assignment(n_units: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Random assignment of units to k groups with sizes as even as possible."""
    counts = np.full(k, n_units // k)
    counts[: n_units % k] += 1
    ids = np.repeat(np.arange(k), counts)
    return rng.permutation(ids)
