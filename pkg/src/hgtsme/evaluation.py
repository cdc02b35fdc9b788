"""Posterior summaries, prediction metrics, DIC/WAIC and SE-reduction reports.

The information criteria evaluate the data-model likelihood at one of three
levels (``LEVELS``):

``marginal`` (default)
    ``p(z | y, tau2) = int p(z | h) N(h; y, tau2) dh`` with ``y`` the latent
    mean ``W beta + S delta + M eta + xi``; Gaussian blocks are exact, the
    others use Gauss-Hermite quadrature.
``latent``
    ``p(z | h = y)``, the data model evaluated at the latent mean.
``h``
    ``p(z | h)`` at the stored transformed-response draws. These draws do not
    depend on the process model, so this level cannot separate two models.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .areal import Dataset
from .errors import DomainError
from .hgt import data_scale_estimate
from .sampler import ChainOutput


@dataclass(frozen=True)
class PosteriorSummary:
    mean: np.ndarray
    sd: np.ndarray
    q025: np.ndarray
    q50: np.ndarray
    q975: np.ndarray


def summarize_draws(draws) -> PosteriorSummary:
    """Column-wise summaries with equal-tailed 95% intervals."""
    d = np.asarray(draws, dtype=float)
    if d.shape[0] == 0:
        raise DomainError("no draws to summarise")
    q = np.quantile(d, [0.025, 0.5, 0.975], axis=0)
    sd = d.std(axis=0, ddof=1) if d.shape[0] > 1 else np.zeros(d.shape[1:])
    return PosteriorSummary(d.mean(axis=0), sd, q[0], q[1], q[2])


def block_info(dataset: Dataset):
    return [b.kind for b in dataset.responses], [b.trials for b in dataset.responses]


def posterior_estimates(chain: ChainOutput, dataset: Dataset):
    """Posterior mean and sd of the data-model mean for every stacked position."""
    kinds, trials = block_info(dataset)
    return data_scale_estimate(chain["latent"], kinds, trials)


def metrics(actual, predicted) -> dict:
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape:
        raise DomainError(f"length mismatch: {a.shape} vs {p.shape}")
    err = a - p
    mse = float(np.mean(err**2))
    return {"rmse": float(np.sqrt(mse)), "mse": mse, "mae": float(np.mean(np.abs(err)))}


LEVELS = ("marginal", "latent", "h")
N_QUADRATURE = 32


def pointwise_loglik(latent, dataset: Dataset) -> np.ndarray:
    """``log p(z_i | latent_i)`` for each draw (rows) and stacked position."""
    latent = np.atleast_2d(np.asarray(latent, dtype=float))
    if latent.shape[1] != dataset.n_star:
        raise DomainError(f"expected {dataset.n_star} columns, got {latent.shape[1]}")
    n = dataset.n_areas
    out = np.empty_like(latent)
    for j, blk in enumerate(dataset.responses):
        sl = slice(j * n, (j + 1) * n)
        y = latent[:, sl]
        z = blk.values
        if blk.kind == "gaussian":
            out[:, sl] = stats.norm.logpdf(z, loc=y, scale=np.sqrt(blk.gaussian_variance))
        elif blk.kind == "poisson":
            out[:, sl] = z * y - np.exp(y) - special.gammaln(z + 1)
        else:
            b = blk.trials
            # log p = z*y - b*log(1+e^y) + log C(b, z)
            log_choose = special.gammaln(b + 1) - special.gammaln(z + 1) - special.gammaln(b - z + 1)
            out[:, sl] = z * y - b * np.logaddexp(0.0, y) + log_choose
    return out


def marginal_loglik(latent, tau2, dataset: Dataset, n_nodes: int = N_QUADRATURE) -> np.ndarray:
    """``log p(z_i | y_i, tau2)`` with the transformed response integrated out.

    ``tau2`` is one value per draw, or ``(n_draws, J)`` for per-block
    variances.
    """
    latent = np.atleast_2d(np.asarray(latent, dtype=float))
    n_draws, n = latent.shape[0], dataset.n_areas
    tau2 = np.asarray(tau2, dtype=float).reshape(n_draws, -1)
    if np.any(~(tau2 > 0)):
        raise DomainError("tau2 draws must be > 0")
    sd = np.repeat(np.broadcast_to(np.sqrt(tau2), (n_draws, dataset.n_blocks)), n, axis=1)
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    log_w = np.log(weights / weights.sum())
    out = np.empty_like(latent)
    for j, blk in enumerate(dataset.responses):
        sl = slice(j * n, (j + 1) * n)
        if blk.kind == "gaussian":
            out[:, sl] = stats.norm.logpdf(blk.values, loc=latent[:, sl],
                                           scale=np.sqrt(sd[:, sl] ** 2 + blk.gaussian_variance))
            continue
        single = dataset.with_responses([blk]) if dataset.n_blocks > 1 else dataset
        terms = np.stack([pointwise_loglik(latent[:, sl] + x * sd[:, sl], single) for x in nodes])
        out[:, sl] = special.logsumexp(terms + log_w[:, None, None], axis=0)
    return out


def loglik_draws(chain: ChainOutput, dataset: Dataset, level: str = "marginal") -> np.ndarray:
    """Pointwise log-likelihood matrix (draws x ``N*``) at the requested level."""
    if level == "marginal":
        return marginal_loglik(chain["latent"], chain["tau2"], dataset)
    if level == "latent":
        return pointwise_loglik(chain["latent"], dataset)
    if level == "h":
        return pointwise_loglik(chain["h"], dataset)
    raise DomainError(f"unknown likelihood level {level!r}; expected one of {LEVELS}")


def _plug_in(chain: ChainOutput, dataset: Dataset, level: str) -> float:
    """Log-likelihood at the posterior mean of the parameters entering ``level``."""
    if level == "marginal":
        tau2 = np.atleast_1d(chain["tau2"].mean(axis=0))[None, :]
        return float(marginal_loglik(chain["latent"].mean(axis=0), tau2, dataset).sum())
    key = "latent" if level == "latent" else "h"
    return float(pointwise_loglik(chain[key].mean(axis=0), dataset).sum())


def log_mean_exp(a, axis=0):
    """``log(mean(exp(a)))`` with a max shift."""
    a = np.asarray(a, dtype=float)
    return special.logsumexp(a, axis=axis) - np.log(a.shape[axis])


def _check_chain(chain: ChainOutput):
    if chain["latent"].shape[0] < 2:
        raise DomainError("information criteria need at least two retained draws")


def dic_parts(chain: ChainOutput, dataset: Dataset, variant: str = "mean_deviance",
              level: str = "marginal"):
    """``(dic, p_d)``; ``variant`` picks ``Dbar - D(theta_bar)`` or ``var(D)/2``."""
    _check_chain(chain)
    dev = -2.0 * loglik_draws(chain, dataset, level).sum(axis=1)
    dbar = dev.mean()
    if variant == "mean_deviance":
        p_d = dbar + 2.0 * _plug_in(chain, dataset, level)
    elif variant == "half_variance":
        p_d = 0.5 * dev.var(ddof=1)
    else:
        raise DomainError(f"unknown DIC variant {variant!r}")
    return float(dbar + p_d), float(p_d)


def dic(chain: ChainOutput, dataset: Dataset, variant: str = "mean_deviance", level: str = "marginal") -> float:
    return dic_parts(chain, dataset, variant, level)[0]


def waic_parts(chain: ChainOutput, dataset: Dataset, level: str = "marginal"):
    """``(waic, p_waic)`` with ``waic = -2 (lppd - p_waic)``."""
    _check_chain(chain)
    ll = loglik_draws(chain, dataset, level)
    lppd = log_mean_exp(ll, axis=0).sum()
    p_waic = ll.var(axis=0, ddof=1).sum()
    return float(-2.0 * (lppd - p_waic)), float(p_waic)


def waic(chain: ChainOutput, dataset: Dataset, level: str = "marginal") -> float:
    return waic_parts(chain, dataset, level)[0]


def compare(chain: ChainOutput, dataset: Dataset, dic_variant: str = "mean_deviance",
            level: str = "marginal") -> dict:
    d, pd = dic_parts(chain, dataset, dic_variant, level)
    w, pw = waic_parts(chain, dataset, level)
    return {"dic": d, "waic": w, "p_dic": pd, "p_waic": pw, "level": level}


def se_reduction(direct_se, model_se) -> np.ndarray:
    """Percent reduction ``100 (direct - model) / direct``; negative means worse."""
    d = np.asarray(direct_se, dtype=float)
    m = np.asarray(model_se, dtype=float)
    if np.any(~(d > 0)):
        raise DomainError("direct standard errors must be > 0")
    return 100.0 * (d - m) / d


def batch_means_se(draws, n_batches: int = 25) -> np.ndarray:
    """Monte Carlo standard error of the posterior mean by non-overlapping batch means."""
    d = np.asarray(draws, dtype=float)
    n = d.shape[0] // n_batches * n_batches
    if n < n_batches or n_batches < 2:
        raise DomainError("too few draws for batch means")
    means = d[:n].reshape(n_batches, n // n_batches, *d.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def area_summary(chain: ChainOutput, dataset: Dataset) -> dict:
    """Per stacked position: ids, block, data-scale estimate, sd and latent-scale quantiles."""
    est, sd = posterior_estimates(chain, dataset)
    lat = summarize_draws(chain["latent"])
    blocks = [b.name for b in dataset.responses for _ in range(dataset.n_areas)]
    ids = list(dataset.area_ids) * dataset.n_blocks
    observed = np.concatenate([b.values for b in dataset.responses])
    return {
        "area_id": ids,
        "block": blocks,
        "observed": observed,
        "estimate": est,
        "sd": sd,
        "latent_mean": lat.mean,
        "latent_q025": lat.q025,
        "latent_q50": lat.q50,
        "latent_q975": lat.q975,
    }
