"""Independent reference computations for the sampler tests.

The log joint below is written from the generative model directly and never
calls package kernels; grid integration of it gives the exact full
conditionals the Gibbs kernels must reproduce.
"""
import numpy as np
from scipy import integrate, special

from hgtsme.areal import ArealGraph
from hgtsme.sampler import ChainState, ModelContext, Priors

from conftest import ks_distance

# 2-area, 1-covariate, single Gaussian response; S = intercept, one basis vector
GRAPH2 = ArealGraph(np.array([[0, 1], [1, 0]]))
RHO = 0.6
X_OBS = np.array([0.8, -0.3])
ME_VAR = np.array([0.3, 0.5])
S2 = np.ones((2, 1))
M2 = np.array([[1.0], [-1.0]]) / np.sqrt(2.0)
PRIORS = Priors()


def car2():
    D = np.diag(GRAPH2.degrees.astype(float))
    return D - RHO * GRAPH2.dense()


def context2() -> ModelContext:
    return ModelContext(X_OBS[:, None].copy(), S2.copy(), M2.copy(), [car2()], (1.0 / ME_VAR)[:, None],
                        n_blocks=1, priors=PRIORS)


def state2() -> ChainState:
    return ChainState(h=np.array([1.3, -0.4]), W=np.array([[0.6], [-0.1]]), beta=np.array([0.9]),
                      delta=np.array([0.2]), eta=np.array([0.35]), xi=np.array([0.15, -0.25]),
                      sigma2_w=np.array([0.7]), sigma2_eta=0.4, sigma2_xi=0.3, tau2=0.5)


def _norm_logpdf(x, mean, var):
    return -0.5 * np.log(2 * np.pi * var) - 0.5 * (x - mean) ** 2 / var


def _ig_logpdf(x, a, b):
    return a * np.log(b) - special.gammaln(a) - (a + 1) * np.log(x) - b / x


def log_joint(s: ChainState) -> float:
    """``log p(h, X, W, beta, delta, eta, xi, variances)`` written out term by term."""
    W = s.W[:, 0]
    mean = W * s.beta[0] + S2 @ s.delta + M2 @ s.eta + s.xi
    lp = _norm_logpdf(s.h, mean, s.tau2).sum()
    lp += _norm_logpdf(X_OBS, W, ME_VAR).sum()
    Q = car2() / s.sigma2_w[0]
    lp += 0.5 * np.linalg.slogdet(Q)[1] - 0.5 * W @ Q @ W - np.log(2 * np.pi)
    lp += _norm_logpdf(s.beta, 0.0, PRIORS.sigma2_beta).sum()
    lp += _norm_logpdf(s.delta, 0.0, PRIORS.sigma2_delta).sum()
    lp += _norm_logpdf(s.eta, 0.0, s.sigma2_eta).sum()
    lp += _norm_logpdf(s.xi, 0.0, s.sigma2_xi).sum()
    lp += _ig_logpdf(s.sigma2_w[0], *PRIORS.sigma2_w)
    lp += _ig_logpdf(s.sigma2_eta, *PRIORS.sigma2_eta)
    lp += _ig_logpdf(s.sigma2_xi, *PRIORS.sigma2_xi)
    lp += _ig_logpdf(s.tau2, *PRIORS.tau2)
    return float(lp)


def _set(state: ChainState, name: str, value) -> ChainState:
    s = state.copy()
    if name in ("W", "xi"):
        v = np.asarray(value, dtype=float)
        setattr(s, name, v.reshape(-1, 1) if name == "W" else v)
    elif name in ("beta", "delta", "eta", "sigma2_w"):
        setattr(s, name, np.array([float(value)]))
    else:
        setattr(s, name, float(value))
    return s


def grid_cdf_1d(state, name, lo, hi, n=4001, log_scale=False):
    """Normalised CDF of a scalar full conditional on a dense grid."""
    if log_scale:
        u = np.linspace(np.log(lo), np.log(hi), n)
        x = np.exp(u)
        lp = np.array([log_joint(_set(state, name, v)) for v in x]) + u  # Jacobian of x = e^u
        grid = u
    else:
        x = np.linspace(lo, hi, n)
        lp = np.array([log_joint(_set(state, name, v)) for v in x])
        grid = x
    dens = np.exp(lp - lp.max())
    cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    cdf /= cdf[-1]

    def F(v):
        v = np.log(v) if log_scale else v
        return np.interp(v, grid, cdf)

    return F


def grid_marginal_cdfs_2d(state, name, box, n=301):
    """Marginal CDFs of both coordinates of a 2-vector full conditional."""
    (lo0, hi0), (lo1, hi1) = box
    g0, g1 = np.linspace(lo0, hi0, n), np.linspace(lo1, hi1, n)
    lp = np.array([[log_joint(_set(state, name, (a, b))) for b in g1] for a in g0])
    dens = np.exp(lp - lp.max())
    out = []
    for axis, grid in ((1, g0), (0, g1)):
        marg = integrate.trapezoid(dens, g1 if axis == 1 else g0, axis=axis)
        cdf = integrate.cumulative_trapezoid(marg, grid, initial=0.0)
        cdf /= cdf[-1]
        out.append(lambda v, grid=grid, cdf=cdf: np.interp(v, grid, cdf))
    return out


def kernel_ks(draws, state, name, log_scale=False):
    """KS distance(s) of kernel draws against the grid conditional.

    The grid box spans the draws with a generous margin; the density itself
    comes only from :func:`log_joint`.
    """
    d = np.asarray(draws, dtype=float)
    if d.ndim == 1:
        if log_scale:
            lo, hi = d.min() / 3, d.max() * 3
        else:
            span = d.max() - d.min()
            lo, hi = d.min() - span, d.max() + span
        return [ks_distance(d, grid_cdf_1d(state, name, lo, hi, log_scale=log_scale))]
    box = []
    for k in range(2):
        span = d[:, k].max() - d[:, k].min()
        box.append((d[:, k].min() - 0.5 * span, d[:, k].max() + 0.5 * span))
    cdfs = grid_marginal_cdfs_2d(state, name, box)
    return [ks_distance(d[:, k], cdfs[k]) for k in range(2)]
