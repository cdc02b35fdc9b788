"""CAR precisions, Moran's I and the Moran's I basis functions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .areal import ArealGraph, Dataset
from .errors import DomainError, NumericalError

ZERO_EIGEN_TOL = 1e-10


def rho_bounds(graph: ArealGraph) -> tuple[float, float]:
    """Interval ``(1/lambda_min, 1/lambda_max)`` of ``D^-1/2 A D^-1/2``.

    ``lambda_max`` is 1 for this normalisation, so the upper bound is 1.
    """
    d = 1.0 / np.sqrt(graph.degrees.astype(float))
    norm_adj = graph.dense() * d[:, None] * d[None, :]
    try:
        lam = np.linalg.eigvalsh(norm_adj)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition of normalised adjacency failed: {exc}") from exc
    return 1.0 / lam[0], 1.0 / lam[-1]


@dataclass(frozen=True)
class CarStructure:
    base_precision: sp.csr_matrix
    rho: float
    valid_rho_interval: tuple[float, float]

    def dense(self) -> np.ndarray:
        return self.base_precision.toarray()


def car_precision(graph: ArealGraph, rho: float, bounds: tuple[float, float] | None = None) -> CarStructure:
    """``D - rho A`` for a proper CAR prior; SPD is verified by factorisation."""
    lo, hi = bounds if bounds is not None else rho_bounds(graph)
    if not (lo < rho < hi) or not abs(rho) < 1:
        raise DomainError(f"rho={rho} outside the valid interval ({lo:.6g}, {hi:.6g}) or |rho| >= 1")
    q = (sp.diags(graph.degrees.astype(float)) - rho * graph.adjacency).tocsr()
    try:
        np.linalg.cholesky(q.toarray())
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"D - rho A is not positive definite at rho={rho}") from exc
    return CarStructure(q, float(rho), (float(lo), float(hi)))


def morans_i(values, graph: ArealGraph, row_standardize: bool = False) -> float:
    """Global Moran's I with binary (or row-standardised) weights."""
    x = np.asarray(values, dtype=float)
    if x.size != graph.n_areas or x.size < 2:
        raise DomainError("values must have one entry per area and at least two areas")
    w = graph.adjacency
    if row_standardize:
        w = sp.diags(1.0 / graph.degrees) @ w
    dev = x - x.mean()
    denom = dev @ dev
    if denom <= 0:
        raise DomainError("Moran's I undefined for constant values")
    return float(x.size / w.sum() * (dev @ (w @ dev)) / denom)


def _projector(L: np.ndarray) -> np.ndarray:
    """``I - L (L'L)^-1 L'`` computed through a QR factorisation of ``L``."""
    n, k = L.shape
    if k == 0:
        return np.eye(n)
    if k > n:
        raise NumericalError(f"design has {k} columns but only {n} rows")
    qmat, rmat, perm = sla.qr(L, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rmat))
    tol = max(n, k) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < k:
        collinear = sorted(int(c) for c in perm[rank:])
        raise NumericalError(f"design matrix is rank deficient; collinear column(s) {collinear}")
    return np.eye(n) - qmat @ qmat.T


def mi_operator(L, A_expanded) -> np.ndarray:
    """Moran's I operator ``P A P`` with ``P`` the projector orthogonal to ``L``."""
    L = np.asarray(L, dtype=float)
    if L.ndim == 1:
        L = L[:, None]
    A = A_expanded.toarray() if sp.issparse(A_expanded) else np.asarray(A_expanded, dtype=float)
    if A.shape != (L.shape[0], L.shape[0]):
        raise DomainError(f"adjacency shape {A.shape} does not match design rows {L.shape[0]}")
    if not np.allclose(A, A.T):
        raise DomainError("adjacency must be symmetric")
    P = _projector(L)
    G = P @ A @ P
    return 0.5 * (G + G.T)


@dataclass(frozen=True)
class MoranBasis:
    M: np.ndarray
    eigenvalues: np.ndarray
    positive_eigen_count: int
    spectrum: np.ndarray

    @property
    def r(self) -> int:
        return self.M.shape[1]


def resolve_r(r_spec, positive_count: int) -> int:
    """Turn a fraction of positive eigenvalues (float) or a count (int) into ``r``."""
    if isinstance(r_spec, (bool, np.bool_)):
        raise DomainError(f"invalid r specification {r_spec!r}")
    if isinstance(r_spec, (int, np.integer)):
        r = int(r_spec)
    else:
        frac = float(r_spec)
        if not 0 < frac <= 1:
            raise DomainError(f"basis fraction must lie in (0, 1], got {frac}")
        # guard against 0.95*60 = 57.000000000000007 rounding up
        r = math.ceil(round(frac * positive_count, 9))
    if r < 1:
        raise DomainError(f"resolved r={r}; need at least one basis function")
    if r > positive_count:
        raise DomainError(f"r={r} exceeds the {positive_count} positive eigenvalues")
    return r


def _eigh_descending(G):
    try:
        lam, phi = np.linalg.eigh(np.asarray(G, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition of the MI operator failed: {exc}") from exc
    order = np.argsort(lam)[::-1]
    return lam[order], phi[:, order]


def mi_spectrum(G) -> tuple[np.ndarray, int]:
    """Eigenvalues of ``G`` in decreasing order and the count above the zero tolerance."""
    lam, _ = _eigh_descending(G)
    return lam, int(np.sum(lam > ZERO_EIGEN_TOL))


def moran_basis(G, r_spec=0.95) -> MoranBasis:
    lam, phi = _eigh_descending(G)
    positive = int(np.sum(lam > ZERO_EIGEN_TOL))
    r = resolve_r(r_spec, positive)
    return MoranBasis(phi[:, :r].copy(), lam[:r].copy(), positive, lam)


def expand_adjacency(graph: ArealGraph, n_blocks: int) -> sp.csr_matrix:
    """Block-diagonal replication of ``A`` over the stacked response index."""
    return sp.block_diag([graph.adjacency] * n_blocks, format="csr")


def basis_design(dataset: Dataset) -> np.ndarray:
    """``[X S]`` stacked over response blocks; observed X stands in for W."""
    L = np.column_stack([dataset.X(), dataset.fixed.S])
    return np.tile(L, (dataset.n_blocks, 1))


def build_basis(dataset: Dataset, r_spec=0.95) -> MoranBasis:
    G = mi_operator(basis_design(dataset), expand_adjacency(dataset.graph, dataset.n_blocks))
    return moran_basis(G, r_spec)
