"""Sample moments and the serial-regression beta machinery."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_model import ReturnsPanel
from .errors import (
    DegenerateBenchmark,
    DegeneratePortfolioVariance,
    InputError,
    InsufficientObservations,
)

SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric N x N covariance with ticker labels."""

    tickers: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        n = len(self.tickers)
        if values.shape != (n, n):
            raise InputError(f"covariance shape {values.shape} does not match {n} tickers")
        if not np.all(np.isfinite(values)):
            raise InputError("non-finite covariance entries")
        scale = np.abs(values).max() or 1.0
        if np.abs(values - values.T).max() > SYMMETRY_RTOL * scale:
            raise InputError("covariance is not symmetric")
        if np.any(np.diag(values) < 0.0):
            raise InputError("negative variance on the diagonal")
        values.setflags(write=False)

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.values)


@dataclass(frozen=True)
class RegressionBetas:
    """Per-stock intercepts, slopes and residuals of a serial regression."""

    alpha: np.ndarray
    beta: np.ndarray
    residuals: np.ndarray = field(repr=False)


def sample_covariance(panel: ReturnsPanel) -> CovarianceMatrix:
    """Sample covariance of the panel rows, T-1 denominator."""
    t = panel.n_periods
    if t < 2:
        raise InsufficientObservations(t)
    centered = panel.values - panel.values.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / (t - 1)
    cov = 0.5 * (cov + cov.T)
    return CovarianceMatrix(panel.tickers, cov)


def serial_betas(panel: ReturnsPanel, bench_returns: np.ndarray) -> RegressionBetas:
    """Regress each stock's return series on ``bench_returns`` with intercept."""
    f = np.asarray(bench_returns, dtype=float)
    if f.shape != (panel.n_periods,):
        raise InputError(f"benchmark series has length {f.shape}, expected {panel.n_periods}")
    f_centered = f - f.mean()
    var_f = float(f_centered @ f_centered)
    if var_f <= 0.0:
        raise DegenerateBenchmark("benchmark returns have zero sample variance")
    centered = panel.values - panel.values.mean(axis=1, keepdims=True)
    beta = centered @ f_centered / var_f
    alpha = panel.values.mean(axis=1) - beta * f.mean()
    residuals = panel.values - alpha[:, None] - np.outer(beta, f)
    return RegressionBetas(alpha, beta, residuals)


def betas_from_weights(cov: CovarianceMatrix, weights: np.ndarray) -> tuple[np.ndarray, float]:
    """Betas of every stock against the portfolio ``weights`` holds.

    Returns ``(beta, sigma_f2)`` with ``beta = C w / (w' C w)`` and the
    portfolio variance ``sigma_f2 = w' C w``.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(cov.tickers),):
        raise InputError(f"weights have length {w.shape}, expected {len(cov.tickers)}")
    cw = cov.values @ w
    sigma_f2 = float(w @ cw)
    if sigma_f2 <= 0.0:
        raise DegeneratePortfolioVariance(f"portfolio variance {sigma_f2} is not positive")
    return cw / sigma_f2, sigma_f2
