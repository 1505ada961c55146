"""Nested multilevel factor-model construction.

Fits one factor variance per cluster by least squares on off-diagonal
correlations (bounded by specific-risk fractions), aggregates level by level,
and assembles the implied dense covariance on demand. Stock loadings are the
betas; cluster loadings above level 0 are uniform, stored as exactly 1 (any
positive rescale is absorbed by the parent covariance and changes nothing).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .data_model import BetaVector, ClassificationTree
from .errors import (
    EmptyBlock,
    InputError,
    InvalidVariance,
    NegativeSpecificVariance,
)
from .stats_core import CovarianceMatrix


@dataclass(frozen=True)
class ThetaFitConfig:
    """Allowed band [z_min, z_max] for the specific fraction of total risk."""

    z_min: float = 0.1
    z_max: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.z_min < self.z_max <= 1.0:
            raise InputError(f"need 0 <= z_min < z_max <= 1, got ({self.z_min}, {self.z_max})")

    @property
    def max_loading_dispersion(self) -> float:
        """Largest admissible max/min ratio of standardized loadings."""
        return float(np.sqrt((1.0 - self.z_min**2) / (1.0 - self.z_max**2)))


def fit_theta(block: np.ndarray, loadings: np.ndarray, cfg: ThetaFitConfig = ThetaFitConfig()) -> float:
    """Single factor variance for one covariance block.

    Least-squares fit of the off-diagonal correlations by an outer product of
    standardized loadings, clamped into the band implied by ``cfg``. The
    clamp is applied as min(max(. , lower), upper) so that when the bounds
    conflict the upper bound wins and specific variances stay positive. A
    1x1 block has no off-diagonal information and gets the minimal factor
    share consistent with z_max.
    """
    x = np.atleast_2d(np.asarray(block, dtype=float))
    b = np.atleast_1d(np.asarray(loadings, dtype=float))
    m = len(b)
    if m == 0 or x.size == 0:
        raise EmptyBlock("cannot fit a factor variance on an empty block")
    if x.shape != (m, m):
        raise InputError(f"block shape {x.shape} does not match {m} loadings")
    if not np.all(np.isfinite(b)) or np.any(b == 0.0):
        raise InvalidVariance("loadings must be finite and nonzero")
    diag = np.diag(x)
    if np.any(diag <= 0.0) or not np.all(np.isfinite(x)):
        raise InvalidVariance("block diagonal must be strictly positive and finite")
    if m == 1:
        return (1.0 - cfg.z_max**2) * float(diag[0]) / float(b[0]) ** 2
    scale = np.sqrt(diag)
    b_hat = b / scale
    t_min, t_max = _theta_bounds(b_hat, cfg)
    x_hat = x / np.outer(scale, scale)
    weighted = x_hat * np.outer(b_hat, b_hat)
    numer = weighted.sum() - np.trace(weighted)
    b2 = b_hat**2
    denom = b2.sum() ** 2 - (b2**2).sum()
    t_star = numer / denom
    return min(max(t_star, t_min), t_max)


def _theta_bounds(b_hat: np.ndarray, cfg: ThetaFitConfig) -> tuple[float, float]:
    b2 = b_hat**2
    return (1.0 - cfg.z_max**2) / b2.min(), (1.0 - cfg.z_min**2) / b2.max()


@dataclass(frozen=True)
class RussianDollModel:
    """Fully fitted nested factor model.

    ``zeta2[l-1]`` holds the specific variances of the level-l clusters,
    ``fitted_cluster_var[l-1]`` the fitted total variances the level-l fit
    produced, and ``top_var`` the single top-level variance (zero when the
    market factor is disabled).
    """

    tree: ClassificationTree
    beta: BetaVector
    xi2: np.ndarray
    zeta2: tuple[np.ndarray, ...]
    top_var: float
    chi: tuple[float, ...]
    fitted_cluster_var: tuple[np.ndarray, ...]
    mkt_fac: bool
    configs: tuple[ThetaFitConfig, ...] = field(repr=False)

    def __post_init__(self):
        xi2 = np.array(self.xi2, dtype=float)
        object.__setattr__(self, "xi2", xi2)
        zeta2 = tuple(np.array(z, dtype=float) for z in self.zeta2)
        object.__setattr__(self, "zeta2", zeta2)
        fitted = tuple(np.array(g, dtype=float) for g in self.fitted_cluster_var)
        object.__setattr__(self, "fitted_cluster_var", fitted)
        p = self.tree.n_levels
        counts = self.tree.cluster_counts
        n = len(self.tree.tickers)
        if self.beta.tickers != self.tree.tickers:
            raise InputError("beta and tree tickers differ")
        if xi2.shape != (n,) or np.any(xi2 <= 0.0) or not np.all(np.isfinite(xi2)):
            raise InvalidVariance("stock specific variances must be strictly positive")
        if len(zeta2) != p or len(fitted) != p or len(self.chi) != p:
            raise InputError(f"expected {p} levels of cluster data")
        for lvl in range(p):
            if zeta2[lvl].shape != (counts[lvl],) or np.any(zeta2[lvl] < 0.0):
                raise InvalidVariance(f"level-{lvl + 1} specific variances invalid")
            if fitted[lvl].shape != (counts[lvl],):
                raise InputError(f"level-{lvl + 1} fitted variances have wrong length")
        if self.top_var < 0.0:
            raise InvalidVariance("top-level variance must be nonnegative")
        if any(c <= 0.0 for c in self.chi):
            raise InputError("cluster loadings must be positive")
        for z in zeta2:
            z.setflags(write=False)
        for g in fitted:
            g.setflags(write=False)
        xi2.setflags(write=False)


def build_russian_doll(
    cov: CovarianceMatrix,
    tree: ClassificationTree,
    beta: BetaVector,
    mkt_fac: bool = True,
    cfg: ThetaFitConfig | tuple[ThetaFitConfig, ...] = ThetaFitConfig(),
) -> RussianDollModel:
    """Fit the nested model level by level from a sample covariance.

    At each level every cluster's variance is fitted on the corresponding
    block of the current covariance; members' specific variances are what the
    fit leaves over. The covariance is then contracted onto the clusters
    (plain double sums over members) and its diagonal rescaled to the fitted
    values before the next level. The final level fits one market variance
    when ``mkt_fac`` is set, otherwise it is pinned to zero.

    ``cfg`` may be a single config or one per level (P+1 of them, the last
    for the market fit).
    """
    if cov.tickers != tree.tickers or beta.tickers != tree.tickers:
        raise InputError("covariance, tree and beta tickers must match")
    p = tree.n_levels
    if isinstance(cfg, ThetaFitConfig):
        configs = (cfg,) * (p + 1)
    else:
        configs = tuple(cfg)
        if len(configs) != p + 1:
            raise InputError(f"expected {p + 1} per-level configs, got {len(configs)}")

    x = np.array(cov.values, dtype=float)
    b = np.array(beta.values, dtype=float)
    xi2 = np.empty(0)
    zeta2: list[np.ndarray] = []
    fitted: list[np.ndarray] = []
    top_var = 0.0

    for lvl in range(1, p + 2):
        level_cfg = configs[lvl - 1]
        if lvl <= p:
            groups = tree.children(lvl)
        else:
            groups = [np.arange(x.shape[0])]
        k = len(groups)
        diag = np.diag(x).copy()
        g_fit = np.empty(k)
        spec = np.empty(x.shape[0])
        for a, idx in enumerate(groups):
            if lvl == p + 1 and not mkt_fac:
                g_fit[a] = 0.0
            else:
                if lvl == 1 and len(idx) > 1:
                    _check_admissible(level_cfg, tree, beta, diag, idx, a)
                g_fit[a] = fit_theta(x[np.ix_(idx, idx)], b[idx], level_cfg)
            spec[idx] = diag[idx] - b[idx] ** 2 * g_fit[a]
        _check_positive_specific(spec, lvl - 1, tree, groups)
        if lvl == 1:
            xi2 = spec
        else:
            zeta2.append(spec)
        if lvl <= p:
            fitted.append(g_fit)
        else:
            top_var = float(g_fit[0])
            break
        # contract onto the clusters, then rescale diagonals to the fits
        member = np.zeros((x.shape[0], k))
        for a, idx in enumerate(groups):
            member[idx, a] = 1.0
        agg = member.T @ x @ member
        agg_diag = np.diag(agg)
        if np.any(agg_diag <= 0.0):
            bad = tree.level_names[lvl - 1][int(np.argmax(agg_diag <= 0.0))]
            raise InvalidVariance(f"aggregated variance of cluster {bad!r} is not positive")
        u = np.sqrt(g_fit / agg_diag)
        x = agg * np.outer(u, u)
        b = np.ones(k)

    return RussianDollModel(
        tree=tree,
        beta=beta,
        xi2=xi2,
        zeta2=tuple(zeta2),
        top_var=top_var,
        chi=(1.0,) * p,
        fitted_cluster_var=tuple(fitted),
        mkt_fac=mkt_fac,
        configs=configs,
    )


def _check_admissible(cfg, tree, beta, diag, idx, cluster):
    """Abort when a level-1 block's standardized betas are so dispersed that
    the fit bounds conflict; clamping would silently mask the modeling error."""
    b_hat2 = beta.values[idx] ** 2 / diag[idx]
    t_min, t_max = _theta_bounds(np.sqrt(b_hat2), cfg)
    if t_min <= t_max:
        return
    b_hat = np.sqrt(b_hat2)
    limit = cfg.max_loading_dispersion
    cutoff_hi = b_hat.min() * limit
    offenders = [
        f"{tree.tickers[i]}(beta/sigma={b_hat[j]:.4g})"
        for j, i in enumerate(idx)
        if b_hat[j] > cutoff_hi or b_hat[j] * limit < b_hat.max()
    ]
    name = tree.level_names[0][cluster]
    raise NegativeSpecificVariance(
        0,
        name,
        f"beta/sigma dispersion {b_hat.max() / b_hat.min():.4g} exceeds the "
        f"admissible ratio {limit:.4g}; offending stocks: {', '.join(offenders)}",
    )


def _check_positive_specific(spec, level, tree, groups):
    if not np.any(spec <= 0.0):
        return
    bad = int(np.argmax(spec <= 0.0))
    if level == 0:
        name = tree.tickers[bad]
    else:
        name = tree.level_names[level - 1][bad]
    raise NegativeSpecificVariance(level, name, f"specific variance {spec[bad]:.6g} is not positive")


def assemble_dense(model: RussianDollModel) -> CovarianceMatrix:
    """Expand the nested recursion into a dense N x N covariance."""
    tree = model.tree
    p = tree.n_levels
    current = np.array([[model.top_var]])
    for lvl in range(p, 0, -1):
        if lvl < p:
            parent = tree.parent_maps[lvl]
        else:
            parent = np.zeros(tree.cluster_counts[p - 1], dtype=np.int64)
        block = current[np.ix_(parent, parent)]
        current = np.diag(model.zeta2[lvl - 1]) + model.chi[lvl - 1] ** 2 * block
    g0 = tree.parent_maps[0]
    beta = model.beta.values
    dense = np.diag(model.xi2) + np.outer(beta, beta) * current[np.ix_(g0, g0)]
    return CovarianceMatrix(tree.tickers, 0.5 * (dense + dense.T))


def model_to_dict(model: RussianDollModel) -> dict:
    """JSON-serializable snapshot of a fitted model."""
    tree = model.tree
    return {
        "tickers": list(tree.tickers),
        "level_names": [list(names) for names in tree.level_names],
        "parent_maps": [m.tolist() for m in tree.parent_maps],
        "beta": model.beta.values.tolist(),
        "xi2": model.xi2.tolist(),
        "zeta2": [z.tolist() for z in model.zeta2],
        "top_var": model.top_var,
        "chi": list(model.chi),
        "fitted_cluster_var": [g.tolist() for g in model.fitted_cluster_var],
        "mkt_fac": model.mkt_fac,
        "configs": [{"z_min": c.z_min, "z_max": c.z_max} for c in model.configs],
    }


def model_from_dict(data: dict) -> RussianDollModel:
    tickers = tuple(data["tickers"])
    tree = ClassificationTree(
        tickers,
        tuple(tuple(names) for names in data["level_names"]),
        tuple(np.asarray(m, dtype=np.int64) for m in data["parent_maps"]),
    )
    return RussianDollModel(
        tree=tree,
        beta=BetaVector(tickers, np.asarray(data["beta"], dtype=float)),
        xi2=np.asarray(data["xi2"], dtype=float),
        zeta2=tuple(np.asarray(z, dtype=float) for z in data["zeta2"]),
        top_var=float(data["top_var"]),
        chi=tuple(float(c) for c in data["chi"]),
        fitted_cluster_var=tuple(np.asarray(g, dtype=float) for g in data["fitted_cluster_var"]),
        mkt_fac=bool(data["mkt_fac"]),
        configs=tuple(ThetaFitConfig(c["z_min"], c["z_max"]) for c in data["configs"]),
    )


def save_model(model: RussianDollModel, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(model_to_dict(model), handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_model(path: str | os.PathLike) -> RussianDollModel:
    with open(path, encoding="utf-8") as handle:
        return model_from_dict(json.load(handle))
