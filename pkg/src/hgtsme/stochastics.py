"""Seedable random streams and the sampling kernels used by the Gibbs sampler.

Parameterisation conventions (used everywhere in the package):

* ``Gamma(shape, rate)``: density proportional to ``x**(shape-1) * exp(-rate*x)``.
* ``IG(shape, scale)``: the law of ``1/g`` with ``g ~ Gamma(shape, rate=scale)``,
  density proportional to ``x**(-shape-1) * exp(-scale/x)``.

All ``draw_*`` functions broadcast over array arguments and return a float
(or int) when every argument is scalar.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as sla

from .errors import DomainError, NumericalError

log = logging.getLogger(__name__)

JITTER = 1e-10


class RngStream:
    """A single-owner random stream derived from ``(seed, stream_id)``.

    Backed by the counter-based Philox bit generator; streams with distinct
    ``stream_id`` tuples draw from independent sequences.
    """

    def __init__(self, seed: int, stream_id: tuple[int, ...] | int = ()):
        if isinstance(stream_id, int):
            stream_id = (stream_id,)
        self.seed = int(seed)
        self.stream_id = tuple(int(s) for s in stream_id)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        self.generator = np.random.Generator(np.random.Philox(seq))

    def spawn(self, stream_id: int) -> "RngStream":
        """Independent child stream, e.g. one per replicate or chain."""
        return RngStream(self.seed, self.stream_id + (int(stream_id),))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def _scalarize(x):
    return x.item() if isinstance(x, np.ndarray) and x.ndim == 0 else x


def _check_positive(name, value, *, allow_zero=False):
    arr = np.asarray(value, dtype=float)
    bad = ~np.isfinite(arr) | ((arr < 0) if allow_zero else (arr <= 0))
    if np.any(bad):
        bound = ">= 0" if allow_zero else "> 0"
        raise DomainError(f"{name} must be finite and {bound}, got {value!r}")
    return arr


def draw_normal(rng: RngStream, mean, variance, size=None):
    variance = _check_positive("variance", variance, allow_zero=True)
    mean = np.asarray(mean, dtype=float)
    if size is None:
        size = np.broadcast(mean, variance).shape
    z = rng.generator.standard_normal(size)
    return _scalarize(mean + np.sqrt(variance) * z)


def draw_gamma(rng: RngStream, shape, rate, size=None):
    shape = _check_positive("shape", shape)
    rate = _check_positive("rate", rate)
    return _scalarize(rng.generator.gamma(shape, 1.0 / rate, size=size))


def draw_log_gamma(rng: RngStream, shape, rate, size=None):
    """log of a ``Gamma(shape, rate)`` draw, finite even for tiny shapes.

    For ``shape < 1`` uses ``log G(shape+1) + log(U)/shape``, which is exact
    and avoids the underflow of ``G(shape)`` to zero.
    """
    shape = _check_positive("shape", shape)
    rate = _check_positive("rate", rate)
    if size is None:
        size = np.broadcast(shape, rate).shape
    shape_b = np.broadcast_to(shape, size)
    small = shape_b < 1.0
    g = rng.generator.gamma(np.where(small, shape_b + 1.0, shape_b), 1.0, size=size)
    out = np.log(g)
    if np.any(small):
        u = rng.generator.random(size)
        # log1p(-u) keeps u == 0 away from log(0)
        out = np.where(small, out + np.log1p(-u) / shape_b, out)
    return _scalarize(out - np.log(rate))


def draw_beta(rng: RngStream, a, b, size=None):
    a = _check_positive("a", a)
    b = _check_positive("b", b)
    return _scalarize(rng.generator.beta(a, b, size=size))


def draw_logit_beta(rng: RngStream, a, b, size=None):
    """logit of a ``Beta(a, b)`` draw, computed as a difference of log-gammas."""
    a = _check_positive("a", a)
    b = _check_positive("b", b)
    if size is None:
        size = np.broadcast(a, b).shape
    la = draw_log_gamma(rng, a, 1.0, size=size)
    lb = draw_log_gamma(rng, b, 1.0, size=size)
    return _scalarize(np.asarray(la) - np.asarray(lb))


def draw_inverse_gamma(rng: RngStream, shape, scale, size=None):
    shape = _check_positive("shape", shape)
    scale = _check_positive("scale", scale)
    g = rng.generator.gamma(shape, 1.0 / scale, size=size)
    return _scalarize(1.0 / g)


def draw_poisson(rng: RngStream, mean, size=None):
    mean = _check_positive("mean", mean, allow_zero=True)
    return _scalarize(rng.generator.poisson(mean, size=size))


def cholesky_precision(precision, name="precision"):
    """Lower Cholesky factor of a symmetrised SPD matrix.

    Retries once with a ``1e-10`` diagonal jitter before giving up.
    """
    q = np.asarray(precision, dtype=float)
    q = 0.5 * (q + q.T)
    try:
        return sla.cholesky(q, lower=True, check_finite=False)
    except sla.LinAlgError:
        pass
    log.warning("%s not numerically SPD; retrying with %.0e diagonal jitter", name, JITTER)
    try:
        return sla.cholesky(q + JITTER * np.eye(q.shape[0]), lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NumericalError(f"Cholesky factorisation of {name} failed: {exc}") from exc


def draw_mvn_precision(rng: RngStream, linear_term, precision, name="precision"):
    """Draw ``x ~ N(Q^{-1} b, Q^{-1})`` given ``Q`` and ``b``.

    Uses one Cholesky factorisation ``Q = L L'`` and triangular solves:
    the mean solves ``L L' mu = b`` and the noise is ``L'^{-1} z``.
    """
    b = np.asarray(linear_term, dtype=float)
    q = np.atleast_2d(np.asarray(precision, dtype=float))
    if q.shape != (b.size, b.size):
        raise DomainError(f"{name} has shape {q.shape}, expected {(b.size, b.size)}")
    if not np.all(np.isfinite(q)) or not np.all(np.isfinite(b)):
        raise NumericalError(f"{name} or its linear term contains non-finite values")
    chol = cholesky_precision(q, name)
    half = sla.solve_triangular(chol, b, lower=True, check_finite=False)
    z = rng.generator.standard_normal(b.size)
    return sla.solve_triangular(chol.T, half + z, lower=False, check_finite=False)
