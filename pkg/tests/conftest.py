"""Shared generators for seeded random test instances."""

from dataclasses import dataclass

import numpy as np

from nestbench import (
    BetaVector,
    ClassificationTree,
    CovarianceMatrix,
    OverlayProblem,
    ReturnsPanel,
    RussianDollModel,
    SyntheticSpec,
    benchmark_weights,
    build_russian_doll,
    generate,
    make_overlay_problem,
    sample_covariance,
)


@dataclass
class Instance:
    panel: ReturnsPanel
    tree: ClassificationTree
    cov: CovarianceMatrix
    beta: BetaVector
    model: RussianDollModel
    mkt_fac: bool


def random_instance(
    seed: int,
    n_range=(4, 50),
    t_range=(60, 260),
    p_range=(1, 3),
    mkt_fac: bool | None = None,
    beta_hat_range=(0.75, 1.45),
) -> Instance:
    """One fitted model on a synthetic panel with admissible beta dispersion."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    t = int(rng.integers(t_range[0], t_range[1] + 1))
    p = int(rng.integers(p_range[0], p_range[1] + 1))

    clusters = []
    k = max(1, n // int(rng.integers(2, 5)))
    for _ in range(p):
        clusters.append(k)
        k = max(1, k // int(rng.integers(2, 4)))
    clusters[0] = min(clusters[0], n // 2)
    for i in range(1, p):
        clusters[i] = min(clusters[i], clusters[i - 1])

    rho = []
    level_rho = float(rng.uniform(0.3, 0.6))
    for _ in range(p):
        rho.append(level_rho)
        level_rho *= float(rng.uniform(0.4, 0.9))
    market_rho = level_rho * float(rng.uniform(0.0, 0.8))

    spec = SyntheticSpec(
        n=n,
        t=t,
        clusters=tuple(clusters),
        rho=tuple(rho),
        market_rho=market_rho,
        seed=int(rng.integers(0, 2**31)),
    )
    instance = generate(spec)
    cov = sample_covariance(instance.panel)
    sigma = np.sqrt(cov.variances)
    beta_hat = rng.uniform(beta_hat_range[0], beta_hat_range[1], n)
    beta = BetaVector(instance.panel.tickers, beta_hat * sigma)
    if mkt_fac is None:
        mkt_fac = bool(rng.integers(0, 2))
    model = build_russian_doll(cov, instance.tree, beta, mkt_fac=mkt_fac)
    return Instance(instance.panel, instance.tree, cov, beta, model, mkt_fac)


def random_overlay_problem(
    seed: int,
    n_range=(4, 30),
    modes=("dollar-neutral",),
    band: float = 0.5,
) -> tuple[OverlayProblem, float]:
    """An overlay instance on a fitted model, plus a gamma' in the region
    where bounds start to matter."""
    from nestbench import assemble_dense, default_gamma_max

    rng = np.random.default_rng(seed + 900_000)
    inst = random_instance(seed + 900_000, n_range=n_range, t_range=(80, 160), p_range=(1, 2))
    cov = assemble_dense(inst.model)
    w_star = benchmark_weights(inst.model).weights
    signal = rng.normal(0.0, 1.0, inst.panel.n_stocks) * np.sqrt(cov.variances)
    problem = make_overlay_problem(signal, cov, w_star, band=band, modes=modes)
    first_bind = default_gamma_max(problem) / 100.0
    gamma = first_bind * float(10.0 ** rng.uniform(-0.5, 1.0))
    return problem, gamma


def memberships(tree: ClassificationTree) -> list[np.ndarray]:
    """Stock-level binary membership matrices, most granular first."""
    return [tree.membership_matrix(level) for level in range(1, tree.n_levels + 1)]
