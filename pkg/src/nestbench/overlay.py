"""Market-outperformance overlay.

A dollar-neutral sleeve is optimized against a model covariance under box
bounds and homogeneous linear constraints, its risk-aversion scale tuned by
golden-section search on the combined portfolio's expected Sharpe ratio, and
the sleeve added to the benchmark so the total stays long-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateConstraints,
    DegenerateRegression,
    InputError,
    LongOnlyViolation,
    NoConvergence,
    SingularCovariance,
)
from .stats_core import CovarianceMatrix

CONSTRAINT_MODES = ("dollar-neutral", "zero-expected-correlation", "orthogonal-to-benchmark")

INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

_BOUND_TOL = 1e-12


@dataclass(frozen=True)
class OverlayProblem:
    """One optimization instance: signal, risk model, benchmark, box, constraints."""

    expected_returns: np.ndarray
    cov: np.ndarray = field(repr=False)
    w_star: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    constraints: np.ndarray = field(repr=False)  # N x p, first column all ones

    def __post_init__(self):
        e = np.array(self.expected_returns, dtype=float)
        cov = np.array(self.cov, dtype=float)
        w_star = np.array(self.w_star, dtype=float)
        lower = np.array(self.lower, dtype=float)
        upper = np.array(self.upper, dtype=float)
        q = np.array(self.constraints, dtype=float)
        n = len(e)
        for name, arr, shape in (
            ("cov", cov, (n, n)),
            ("w_star", w_star, (n,)),
            ("lower", lower, (n,)),
            ("upper", upper, (n,)),
        ):
            if arr.shape != shape:
                raise InputError(f"{name} has shape {arr.shape}, expected {shape}")
        if q.ndim != 2 or q.shape[0] != n or q.shape[1] < 1:
            raise InputError(f"constraint matrix has shape {q.shape}, expected ({n}, p)")
        if np.any(w_star <= 0.0):
            raise InputError("benchmark weights must be strictly positive")
        if abs(w_star.sum() - 1.0) > 1e-8:
            raise InputError("benchmark weights must sum to 1 (renormalize first)")
        if np.any(upper < lower):
            raise InputError("upper bound below lower bound")
        if np.any(lower > 0.0) or np.any(upper < 0.0):
            raise InputError("bounds must satisfy lower <= 0 <= upper")
        if np.any(lower < -w_star - 1e-12):
            raise InputError("lower bounds must not allow short of more than the benchmark holding")
        if not np.allclose(q[:, 0], 1.0):
            raise InputError("first constraint column must be the unit vector (dollar neutrality)")
        svals = np.linalg.svd(q, compute_uv=False)
        if svals[-1] <= 1e-10 * svals[0]:
            raise DegenerateConstraints("constraint columns are linearly dependent")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise SingularCovariance("overlay covariance is not positive-definite") from None
        for name, arr in (("expected_returns", e), ("cov", cov), ("w_star", w_star),
                          ("lower", lower), ("upper", upper), ("constraints", q)):
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)

    @property
    def n_stocks(self) -> int:
        return len(self.expected_returns)


@dataclass(frozen=True)
class KKTReport:
    """Post-hoc optimality certificate for one solve."""

    ok: bool
    stationarity: float
    multiplier_violation: float
    eq_residual: float
    bound_violation: float
    active_lower: tuple[int, ...]
    active_upper: tuple[int, ...]


@dataclass(frozen=True)
class CombinedPortfolio:
    weights: np.ndarray
    rho: float | None
    sigma_star: float
    sigma_prime: float


@dataclass(frozen=True)
class OverlayResult:
    """Tuned overlay: sleeve, combined weights and tuning diagnostics."""

    w_prime: np.ndarray
    gamma_prime: float
    combined: np.ndarray
    sharpe_curve: tuple[tuple[float, float], ...]
    sharpe_zero: float
    sharpe_opt: float
    rho: float | None
    bracket_saturated: bool
    active_lower: tuple[int, ...]
    active_upper: tuple[int, ...]
    eq_residual: float


def build_constraints(modes, cov: np.ndarray | CovarianceMatrix, w_star: np.ndarray) -> np.ndarray:
    """Assemble the constraint matrix for the requested neutrality modes.

    The dollar-neutrality unit column always comes first; zero expected
    correlation adds cov @ w_star, benchmark orthogonality adds w_star.
    """
    modes = set(modes)
    unknown = modes - set(CONSTRAINT_MODES)
    if unknown:
        raise InputError(f"unknown constraint modes: {sorted(unknown)}")
    c = cov.values if isinstance(cov, CovarianceMatrix) else np.asarray(cov, dtype=float)
    w = np.asarray(w_star, dtype=float)
    columns = [np.ones(len(w))]
    if "zero-expected-correlation" in modes:
        columns.append(c @ w)
    if "orthogonal-to-benchmark" in modes:
        columns.append(w)
    q = np.column_stack(columns)
    svals = np.linalg.svd(q, compute_uv=False)
    if svals[-1] <= 1e-10 * svals[0]:
        raise DegenerateConstraints("requested constraint columns are linearly dependent")
    return q


def make_overlay_problem(
    expected_returns: np.ndarray,
    cov: np.ndarray | CovarianceMatrix,
    w_star: np.ndarray,
    band: float = 0.5,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    modes=("dollar-neutral",),
) -> OverlayProblem:
    """Normalize the benchmark, default the bounds to a percentage band of
    it, assemble constraints, and validate the lot."""
    w = np.asarray(w_star, dtype=float)
    if np.any(w <= 0.0):
        raise InputError("benchmark weights must be strictly positive")
    w = w / w.sum()
    c = cov.values if isinstance(cov, CovarianceMatrix) else np.asarray(cov, dtype=float)
    if lower is None:
        if not 0.0 < band:
            raise InputError("band must be positive")
        lower = -band * w if band < 1.0 else -w
    if upper is None:
        upper = band * w
    q = build_constraints(modes, c, w)
    return OverlayProblem(np.asarray(expected_returns, dtype=float), c, w, lower, upper, q)


def residualize(expected_returns: np.ndarray, w_star: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Residuals of a no-intercept weighted regression of the signal on the
    benchmark weights; kills the component that would correlate the sleeve
    with the benchmark."""
    e = np.asarray(expected_returns, dtype=float)
    w = np.asarray(w_star, dtype=float)
    v = np.ones_like(w) if weights is None else np.asarray(weights, dtype=float)
    denom = float(v @ (w * w))
    if denom <= 0.0:
        raise DegenerateRegression("sum of weighted squared benchmark weights is not positive")
    coef = float(v @ (e * w)) / denom
    return v * (e - coef * w)


def optimize_mvo(problem: OverlayProblem, gamma_prime: float, max_iter: int | None = None) -> np.ndarray:
    """Maximize E'w - (1/gamma') w'Cov w over the box, subject to Q'w = 0.

    Iterative active-set clamping: solve the equality-constrained quadratic
    on the free set; while its solution breaks bounds, step toward it from
    the current feasible point, clamp every coordinate that hits its bound,
    and re-solve; once feasible, release the active bound with the worst
    wrong-signed multiplier and repeat until the active set is stable. The
    stepping keeps the objective monotone, which rules out cycling.
    """
    if gamma_prime <= 0.0:
        raise InputError("gamma_prime must be positive")
    n = problem.n_stocks
    hess = (2.0 / gamma_prime) * problem.cov
    e = problem.expected_returns
    q = problem.constraints
    lower, upper = problem.lower, problem.upper
    pinned = upper - lower <= _BOUND_TOL  # zero-width boxes can never move
    if max_iter is None:
        max_iter = 100 * (n + 1)

    at_lower = pinned.copy()
    at_upper = np.zeros(n, dtype=bool)
    w = np.zeros(n)  # always feasible: bounds straddle zero and Q'0 = 0
    iterations = 0
    while True:
        while True:
            iterations += 1
            if iterations > max_iter:
                raise NoConvergence(max_iter, w)
            free = ~(at_lower | at_upper)
            w_fixed = np.where(at_lower, lower, 0.0) + np.where(at_upper, upper, 0.0)
            target, mu = _solve_equality_qp(hess, e, q, free, w_fixed)
            viol_lo = free & (target < lower - _BOUND_TOL)
            viol_hi = free & (target > upper + _BOUND_TOL)
            if not viol_lo.any() and not viol_hi.any():
                w = target
                break
            step = target - w
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio_lo = np.where(viol_lo, (lower - w) / step, np.inf)
                ratio_hi = np.where(viol_hi, (upper - w) / step, np.inf)
            alpha = max(0.0, min(1.0, float(np.minimum(ratio_lo, ratio_hi).min())))
            w = w + alpha * step
            hit_lo = free & (step < 0.0) & (w - lower <= _BOUND_TOL)
            hit_hi = free & (step > 0.0) & (upper - w <= _BOUND_TOL)
            if not hit_lo.any() and not hit_hi.any():
                # roundoff left the blocking coordinate marginally inside;
                # clamp the worst violator outright
                excess = np.where(viol_lo, lower - target, 0.0) + np.where(viol_hi, target - upper, 0.0)
                worst = int(np.argmax(excess))
                hit_lo[worst] = viol_lo[worst]
                hit_hi[worst] = viol_hi[worst]
            at_lower |= hit_lo
            at_upper |= hit_hi
            w = np.where(hit_lo, lower, w)
            w = np.where(hit_hi, upper, w)

        reduced = e - hess @ w - q @ mu
        scale = max(1.0, float(np.abs(e).max()), float(np.abs(hess @ w).max()))
        releasable_lo = at_lower & ~pinned & (reduced > 1e-11 * scale)
        releasable_hi = at_upper & ~pinned & (reduced < -1e-11 * scale)
        if not releasable_lo.any() and not releasable_hi.any():
            return w
        wrong = np.where(releasable_lo | releasable_hi, np.abs(reduced), 0.0)
        worst = int(np.argmax(wrong))
        at_lower[worst] = False
        at_upper[worst] = False


def _solve_equality_qp(hess, e, q, free, w_fixed):
    """Minimize the quadratic over the free coordinates with the active ones
    fixed, subject to the full set of linear constraints."""
    n, p = q.shape
    nf = int(free.sum())
    active = ~free
    if nf == 0:
        w = w_fixed.copy()
        mu, *_ = np.linalg.lstsq(q, e - hess @ w, rcond=None)
        return w, mu
    hff = hess[np.ix_(free, free)]
    qf = q[free, :]
    rhs_top = e[free] - hess[np.ix_(free, active)] @ w_fixed[active]
    rhs_bottom = -q[active, :].T @ w_fixed[active]
    kkt = np.zeros((nf + p, nf + p))
    kkt[:nf, :nf] = hff
    kkt[:nf, nf:] = qf
    kkt[nf:, :nf] = qf.T
    try:
        sol = np.linalg.solve(kkt, np.concatenate([rhs_top, rhs_bottom]))
    except np.linalg.LinAlgError:
        raise NoConvergence(0, None) from None
    w = w_fixed.copy()
    w[free] = sol[:nf]
    return w, sol[nf:]


def kkt_check(
    problem: OverlayProblem,
    gamma_prime: float,
    w_prime: np.ndarray,
    tol: float = 1e-8,
    feas_tol: float = 1e-10,
    active_tol: float = 1e-9,
) -> KKTReport:
    """Verify the optimality certificate of a candidate solution.

    On the free set the objective gradient must lie in the constraint span;
    at an upper-active coordinate the reduced gradient must be >= 0, at a
    lower-active one <= 0.
    """
    w = np.asarray(w_prime, dtype=float)
    grad = problem.expected_returns - (2.0 / gamma_prime) * problem.cov @ w
    q = problem.constraints
    scale = max(1.0, float(np.abs(grad).max()))
    at_lower = w - problem.lower <= active_tol
    at_upper = problem.upper - w <= active_tol
    free = ~(at_lower | at_upper)
    if free.any():
        mu, *_ = np.linalg.lstsq(q[free, :], grad[free], rcond=None)
    else:
        mu, *_ = np.linalg.lstsq(q, grad, rcond=None)
    reduced = grad - q @ mu
    stationarity = float(np.abs(reduced[free]).max()) if free.any() else 0.0
    pinned = at_lower & at_upper
    lo_viol = np.where(at_lower & ~pinned, np.maximum(reduced, 0.0), 0.0)
    hi_viol = np.where(at_upper & ~pinned, np.maximum(-reduced, 0.0), 0.0)
    multiplier_violation = float(np.maximum(lo_viol, hi_viol).max())
    eq_residual = float(np.abs(q.T @ w).max())
    bound_violation = float(
        np.maximum(np.maximum(problem.lower - w, w - problem.upper), 0.0).max()
    )
    ok = (
        stationarity <= tol * scale
        and multiplier_violation <= tol * scale
        and eq_residual <= feas_tol
        and bound_violation <= feas_tol
    )
    return KKTReport(
        ok,
        stationarity,
        multiplier_violation,
        eq_residual,
        bound_violation,
        tuple(np.flatnonzero(at_lower & ~pinned)),
        tuple(np.flatnonzero(at_upper & ~pinned)),
    )


def sharpe_ratio(problem: OverlayProblem, w_prime: np.ndarray) -> float:
    """Expected Sharpe ratio of benchmark plus sleeve under the overlay model."""
    w = problem.w_star + w_prime
    variance = float(w @ problem.cov @ w)
    if variance <= 0.0:
        raise SingularCovariance("combined portfolio variance is not positive")
    return float(problem.expected_returns @ w) / math.sqrt(variance)


def default_gamma_max(problem: OverlayProblem, multiple: float = 100.0) -> float:
    """Bracket upper end: the bound-free sleeve grows linearly with the
    risk-aversion scale, so take ``multiple`` times the scale at which the
    first bound binds."""
    free = np.ones(problem.n_stocks, dtype=bool)
    direction, _ = _solve_equality_qp(2.0 * problem.cov, problem.expected_returns,
                                      problem.constraints, free, np.zeros(problem.n_stocks))
    tiny = 1e-14 * max(1.0, float(np.abs(direction).max()))
    ratios = []
    for i, d in enumerate(direction):
        if d > tiny and problem.upper[i] > 0.0:
            ratios.append(problem.upper[i] / d)
        elif d < -tiny and problem.lower[i] < 0.0:
            ratios.append(problem.lower[i] / d)
    if not ratios:
        return 1.0
    return multiple * min(ratios)


def tune_gamma(
    problem: OverlayProblem,
    gamma_max: float | None = None,
    tol: float = 1e-4,
) -> OverlayResult:
    """Golden-section search of the combined Sharpe ratio over (0, gamma_max].

    Ties keep the left interval, so a flat curve walks toward small scales
    and the final bracket midpoint is returned. If the right edge never
    moves the curve is still rising at gamma_max: the result is gamma_max
    with the saturation flag set.
    """
    if gamma_max is None:
        gamma_max = default_gamma_max(problem)
    if gamma_max <= 0.0:
        raise InputError("gamma_max must be positive")
    if tol <= 0.0:
        raise InputError("tol must be positive")

    cache: dict[float, tuple[np.ndarray, float]] = {}

    def probe(gamma: float) -> float:
        if gamma not in cache:
            w = optimize_mvo(problem, gamma)
            cache[gamma] = (w, sharpe_ratio(problem, w))
        return cache[gamma][1]

    a, b = 0.0, float(gamma_max)
    x1 = b - INV_GOLDEN * (b - a)
    x2 = a + INV_GOLDEN * (b - a)
    f1, f2 = probe(x1), probe(x2)
    right_edge_moved = False
    while b - a > tol * max(b, 1e-300):
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + INV_GOLDEN * (b - a)
            f2 = probe(x2)
        else:
            right_edge_moved = True
            b, x2, f2 = x2, x1, f1
            x1 = b - INV_GOLDEN * (b - a)
            f1 = probe(x1)

    saturated = not right_edge_moved
    gamma_opt = float(gamma_max) if saturated else 0.5 * (a + b)
    sharpe_opt = probe(gamma_opt)
    w_opt = cache[gamma_opt][0]

    sharpe_zero = sharpe_ratio(problem, np.zeros(problem.n_stocks))
    if sharpe_zero > sharpe_opt + 1e-12 * max(1.0, abs(sharpe_zero)):
        gamma_opt, w_opt, sharpe_opt, saturated = 0.0, np.zeros(problem.n_stocks), sharpe_zero, False

    combined = combine(problem.w_star, w_opt, problem.cov)
    report = (
        kkt_check(problem, gamma_opt, w_opt)
        if gamma_opt > 0.0
        else KKTReport(True, 0.0, 0.0, 0.0, 0.0, (), ())
    )
    curve = tuple(sorted([(0.0, sharpe_zero)] + [(g, s) for g, (_, s) in cache.items()]))
    return OverlayResult(
        w_prime=w_opt,
        gamma_prime=gamma_opt,
        combined=combined.weights,
        sharpe_curve=curve,
        sharpe_zero=sharpe_zero,
        sharpe_opt=sharpe_opt,
        rho=combined.rho,
        bracket_saturated=saturated,
        active_lower=report.active_lower,
        active_upper=report.active_upper,
        eq_residual=report.eq_residual,
    )


def combine(w_star: np.ndarray, w_prime: np.ndarray, cov: np.ndarray | CovarianceMatrix) -> CombinedPortfolio:
    """Add the sleeve to the benchmark; fail loudly if long-only is broken.

    Reports the expected correlation between benchmark and sleeve under the
    overlay model, absent when the sleeve carries no risk.
    """
    w_star = np.asarray(w_star, dtype=float)
    w_prime = np.asarray(w_prime, dtype=float)
    c = cov.values if isinstance(cov, CovarianceMatrix) else np.asarray(cov, dtype=float)
    total = w_star + w_prime
    if np.any(total < -1e-12):
        bad = int(np.argmin(total))
        raise LongOnlyViolation(bad, float(total[bad]))
    if abs(total.sum() - w_star.sum()) > 1e-10 * max(1.0, abs(w_star.sum())):
        raise InputError("sleeve is not dollar-neutral: combined scale drifted")
    total = np.maximum(total, 0.0)
    sigma_star = math.sqrt(float(w_star @ c @ w_star))
    sigma_prime2 = float(w_prime @ c @ w_prime)
    sigma_prime = math.sqrt(max(sigma_prime2, 0.0))
    if sigma_prime == 0.0:
        rho = None
    else:
        rho = float(w_star @ c @ w_prime) / (sigma_star * sigma_prime)
    return CombinedPortfolio(total, rho, sigma_star, sigma_prime)
