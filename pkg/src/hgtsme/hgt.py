"""Hierarchical generalized transformation layer.

Each response block is replaced by a continuous transformed response ``h``
drawn from its conjugate conditional given the data and the transformation
hyperparameters (Normal, log-Gamma, logit-Beta). The draws do not depend on
the downstream Gaussian model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .areal import Dataset, ResponseBlock
from .errors import DomainError
from .stochastics import RngStream, draw_log_gamma, draw_logit_beta, draw_normal


@dataclass(frozen=True)
class TransformConfig:
    """Fixed transformation hyperparameters ``gamma``.

    The Binomial conditional additionally needs ``kappa3 - alpha3 + b - Z > 0``,
    checked when the draw is made.
    """

    alpha1: float = 0.0
    kappa1: float = 0.001
    alpha2: float = 0.001
    kappa2: float = 0.001
    alpha3: float = 0.5
    kappa3: float = 1.0

    def __post_init__(self):
        checks = {
            "kappa1 > 0": self.kappa1 > 0,
            "kappa3 > 0": self.kappa3 > 0,
            "alpha2 > 0": self.alpha2 > 0,
            "alpha3 > 0": self.alpha3 > 0,
            # non-strict so the default kappa2 = alpha2 is admissible
            "kappa2 >= alpha2": self.kappa2 >= self.alpha2,
        }
        failed = [k for k, ok in checks.items() if not ok]
        if failed:
            raise DomainError(f"transformation hyperparameters violate {', '.join(failed)}")


def gaussian_conditional(Z, nu: float, gamma: TransformConfig):
    """Mean and variance of the Normal conditional of ``h`` for Gaussian data."""
    if not nu > 0:
        raise DomainError(f"Gaussian data variance must be > 0, got {nu}")
    var = 1.0 / (2.0 * gamma.kappa1 + 1.0 / nu)
    return var * (np.asarray(Z, dtype=float) / nu + gamma.alpha1), var


def draw_h_gaussian(Z, nu: float, gamma: TransformConfig, rng: RngStream):
    mean, var = gaussian_conditional(Z, nu, gamma)
    return np.asarray(draw_normal(rng, mean, np.full(np.shape(mean), var)), dtype=float)


def draw_h_poisson(Z, gamma: TransformConfig, rng: RngStream):
    """``h = log(w)`` with ``w ~ Gamma(alpha2 + Z, kappa2 + 1)``."""
    Z = np.asarray(Z, dtype=float)
    if np.any(Z < 0):
        raise DomainError("Poisson counts must be non-negative")
    return np.asarray(draw_log_gamma(rng, gamma.alpha2 + Z, gamma.kappa2 + 1.0, size=Z.shape), dtype=float)


def draw_h_binomial(Z, trials, gamma: TransformConfig, rng: RngStream):
    """``h = logit(w)`` with ``w ~ Beta(alpha3 + Z, kappa3 - alpha3 + b - Z)``."""
    Z = np.asarray(Z, dtype=float)
    b = np.asarray(trials, dtype=float)
    if np.any(Z < 0) or np.any(Z > b):
        raise DomainError("binomial counts must satisfy 0 <= Z <= trials")
    a1 = gamma.alpha3 + Z
    a2 = gamma.kappa3 - gamma.alpha3 + b - Z
    if np.any(a2 <= 0):
        raise DomainError("Beta parameter kappa3 - alpha3 + b - Z must be > 0 (requires kappa3 > alpha3)")
    return np.asarray(draw_logit_beta(rng, a1, a2, size=Z.shape), dtype=float)


def draw_h_block(block: ResponseBlock, gamma: TransformConfig, rng: RngStream):
    if block.kind == "gaussian":
        return draw_h_gaussian(block.values, block.gaussian_variance, gamma, rng)
    if block.kind == "poisson":
        return draw_h_poisson(block.values, gamma, rng)
    return draw_h_binomial(block.values, block.trials, gamma, rng)


@dataclass(frozen=True)
class StackedTransform:
    """Response-type-major stack: block ``j`` fills ``h[j*N:(j+1)*N]``."""

    h: np.ndarray
    n_areas: int
    n_blocks: int
    layout: dict = field(repr=False, default_factory=dict)

    def position(self, block: int, area: int) -> int:
        return block * self.n_areas + area


def stack(blocks) -> StackedTransform:
    blocks = [np.asarray(b, dtype=float) for b in blocks]
    if not blocks:
        raise DomainError("nothing to stack")
    n = blocks[0].size
    if any(b.size != n for b in blocks):
        raise DomainError(f"block lengths differ: {[b.size for b in blocks]}")
    layout = {(j, i): j * n + i for j in range(len(blocks)) for i in range(n)}
    return StackedTransform(np.concatenate(blocks), n, len(blocks), layout)


def unstack(stacked: StackedTransform) -> list[np.ndarray]:
    return [stacked.h[j * stacked.n_areas:(j + 1) * stacked.n_areas].copy() for j in range(stacked.n_blocks)]


def draw_h(dataset: Dataset, gamma: TransformConfig, rng: RngStream) -> np.ndarray:
    """One draw of the full stacked ``h`` (length ``N*``)."""
    return np.concatenate([draw_h_block(b, gamma, rng) for b in dataset.responses])


def to_data_scale(latent, kind: str, trials=None):
    """Map latent values to the mean of the data model."""
    latent = np.asarray(latent, dtype=float)
    if kind == "gaussian":
        return latent
    if kind == "poisson":
        return np.exp(latent)
    if kind == "binomial":
        return np.asarray(trials, dtype=float) / (1.0 + np.exp(-latent))
    raise DomainError(f"unknown response kind {kind!r}")


def data_scale_estimate(draws, kinds, trials=None):
    """Per-position posterior mean and sd on the data scale.

    ``draws`` is ``(n_draws, N*)`` on the latent scale; ``kinds`` lists the
    kind of each of the ``J`` blocks and ``trials`` the per-block trials
    (``None`` for non-binomial blocks).
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] == 0:
        raise DomainError("no retained draws")
    J = len(kinds)
    if draws.shape[1] % J:
        raise DomainError(f"{draws.shape[1]} columns cannot be split into {J} blocks")
    n = draws.shape[1] // J
    trials = trials or [None] * J
    means, sds = [], []
    for j, kind in enumerate(kinds):
        scaled = to_data_scale(draws[:, j * n:(j + 1) * n], kind, trials[j])
        means.append(scaled.mean(axis=0))
        sds.append(scaled.std(axis=0, ddof=1) if scaled.shape[0] > 1 else np.zeros(n))
    return np.concatenate(means), np.concatenate(sds)
