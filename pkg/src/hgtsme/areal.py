"""Areal graphs, survey-table ingestion and covariate preparation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, IngestionError

KINDS = ("gaussian", "poisson", "binomial")
TRANSFORMS = ("identity", "log", "logit")
DEFAULT_MOE_Z = 1.645


@dataclass(frozen=True)
class ArealGraph:
    """Binary, symmetric adjacency over ``n_areas`` units, no isolated units."""

    adjacency: sp.csr_matrix
    degrees: np.ndarray = field(init=False)

    def __post_init__(self):
        a = sp.csr_matrix(self.adjacency, dtype=float)
        if a.shape[0] != a.shape[1]:
            raise DomainError(f"adjacency must be square, got {a.shape}")
        if a.diagonal().any():
            raise DomainError("adjacency must have a zero diagonal")
        if abs(a - a.T).sum() > 0:
            raise DomainError("adjacency must be symmetric")
        if np.any((a.data != 0) & (a.data != 1)):
            raise DomainError("adjacency must be binary")
        a.eliminate_zeros()
        deg = np.asarray(a.sum(axis=1)).ravel().astype(int)
        isolated = np.flatnonzero(deg == 0)
        if isolated.size:
            raise DomainError(
                f"isolated areas (no neighbours) are not allowed: indices {isolated.tolist()}"
            )
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "degrees", deg)

    @property
    def n_areas(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz // 2)

    def dense(self) -> np.ndarray:
        return self.adjacency.toarray()

    @classmethod
    def from_edges(cls, n_areas: int, edges) -> "ArealGraph":
        edges = np.asarray(list(edges), dtype=int).reshape(-1, 2)
        edges = edges[edges[:, 0] != edges[:, 1]]
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        a = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n_areas, n_areas)).tocsr()
        a.data[:] = 1.0  # collapse duplicate edges
        return cls(a)


def lattice_graph(nrow: int, ncol: int) -> ArealGraph:
    """Rook-contiguity graph on an ``nrow x ncol`` grid (row-major numbering)."""
    idx = np.arange(nrow * ncol).reshape(nrow, ncol)
    edges = np.concatenate(
        [
            np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()]),
            np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()]),
        ]
    )
    return ArealGraph.from_edges(nrow * ncol, edges)


@dataclass(frozen=True)
class ResponseBlock:
    name: str
    kind: str
    values: np.ndarray
    gaussian_variance: float = 1.0
    trials: np.ndarray | None = None

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in KINDS:
            raise DomainError(f"response {self.name!r}: unknown kind {self.kind!r}")
        z = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(z)):
            raise DomainError(f"response {self.name!r}: non-finite values")
        trials = None
        if kind == "gaussian":
            if not self.gaussian_variance > 0:
                raise DomainError(f"response {self.name!r}: gaussian variance must be > 0")
        else:
            if np.any(z < 0) or np.any(z != np.round(z)):
                raise DomainError(f"response {self.name!r}: {kind} values must be non-negative integers")
        if kind == "binomial":
            if self.trials is None:
                raise DomainError(f"response {self.name!r}: binomial block needs trials")
            trials = np.asarray(self.trials, dtype=float)
            if trials.shape != z.shape or np.any(trials < 1) or np.any(trials != np.round(trials)):
                raise DomainError(f"response {self.name!r}: trials must be positive integers, one per area")
            if np.any(z > trials):
                i = int(np.flatnonzero(z > trials)[0])
                raise DomainError(f"response {self.name!r}: value {z[i]:g} exceeds trials {trials[i]:g} at area {i}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "values", z)
        object.__setattr__(self, "trials", trials)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class ErrorProneCovariate:
    """Covariate observed with known, spatially varying error variance.

    ``observed`` and ``me_variances`` are on the model (transformed) scale.
    ``rho`` and ``sigma2_prior`` override the model-level CAR settings when set.
    """

    name: str
    observed: np.ndarray
    me_variances: np.ndarray
    transform: str = "identity"
    rho: float | None = None
    sigma2_prior: tuple[float, float] | None = None
    raw: np.ndarray | None = None
    raw_se: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.observed, dtype=float)
        v = np.asarray(self.me_variances, dtype=float)
        if x.shape != v.shape or x.ndim != 1:
            raise DomainError(f"covariate {self.name!r}: observed and me_variances must be equal-length vectors")
        if not np.all(np.isfinite(x)):
            raise DomainError(f"covariate {self.name!r}: non-finite observed values")
        if np.any(~(v > 0)) or not np.all(np.isfinite(v)):
            raise DomainError(f"covariate {self.name!r}: measurement-error variances must be > 0")
        if self.transform not in TRANSFORMS:
            raise DomainError(f"covariate {self.name!r}: unknown transform {self.transform!r}")
        if self.rho is not None and not abs(self.rho) < 1:
            raise DomainError(f"covariate {self.name!r}: |rho| must be < 1, got {self.rho}")
        object.__setattr__(self, "observed", x)
        object.__setattr__(self, "me_variances", v)


@dataclass(frozen=True)
class FixedDesign:
    S: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.S, dtype=float))
        if s.shape[0] == 1 and s.shape[1] > 1 and not self.names:
            s = s.T
        if not np.all(np.isfinite(s)):
            raise DomainError("fixed design contains non-finite entries")
        if s.shape[1] and np.linalg.matrix_rank(s) < s.shape[1]:
            raise DomainError(f"fixed design of shape {s.shape} is not full column rank")
        names = tuple(self.names) or tuple(f"s{k}" for k in range(s.shape[1]))
        if len(names) != s.shape[1]:
            raise DomainError("fixed design names do not match its columns")
        object.__setattr__(self, "S", s)
        object.__setattr__(self, "names", names)

    @property
    def q(self) -> int:
        return self.S.shape[1]


@dataclass(frozen=True)
class Dataset:
    graph: ArealGraph
    responses: tuple[ResponseBlock, ...]
    error_prone: tuple[ErrorProneCovariate, ...]
    fixed: FixedDesign
    area_ids: tuple[str, ...] = ()

    def __post_init__(self):
        n = self.graph.n_areas
        object.__setattr__(self, "responses", tuple(self.responses))
        object.__setattr__(self, "error_prone", tuple(self.error_prone))
        if not self.responses:
            raise DomainError("dataset needs at least one response block")
        for blk in self.responses:
            if len(blk) != n:
                raise DomainError(f"response {blk.name!r} has {len(blk)} values, graph has {n} areas")
        for cov in self.error_prone:
            if cov.observed.size != n:
                raise DomainError(f"covariate {cov.name!r} has {cov.observed.size} values, graph has {n} areas")
        if self.fixed.S.shape[0] != n:
            raise DomainError(f"fixed design has {self.fixed.S.shape[0]} rows, graph has {n} areas")
        ids = tuple(self.area_ids) or tuple(str(i) for i in range(n))
        if len(ids) != n:
            raise DomainError("area_ids length does not match the graph")
        object.__setattr__(self, "area_ids", ids)

    @property
    def n_areas(self) -> int:
        return self.graph.n_areas

    @property
    def n_blocks(self) -> int:
        return len(self.responses)

    @property
    def n_star(self) -> int:
        return self.n_areas * self.n_blocks

    @property
    def p(self) -> int:
        return len(self.error_prone)

    @property
    def q(self) -> int:
        return self.fixed.q

    def X(self) -> np.ndarray:
        """Observed error-prone covariates as an ``N x p`` matrix."""
        if not self.error_prone:
            return np.zeros((self.n_areas, 0))
        return np.column_stack([c.observed for c in self.error_prone])

    def me_variances(self) -> np.ndarray:
        if not self.error_prone:
            return np.zeros((self.n_areas, 0))
        return np.column_stack([c.me_variances for c in self.error_prone])

    def with_responses(self, responses) -> "Dataset":
        return Dataset(self.graph, tuple(responses), self.error_prone, self.fixed, self.area_ids)

    def with_error_prone(self, error_prone) -> "Dataset":
        return Dataset(self.graph, self.responses, tuple(error_prone), self.fixed, self.area_ids)


# ---------------------------------------------------------------------------
# covariate preparation


def moe_to_se(moe, z: float = DEFAULT_MOE_Z):
    """Convert a published margin of error to a standard error."""
    moe = np.asarray(moe, dtype=float)
    if np.any(~(moe > 0)):
        raise DomainError(f"margin of error must be > 0, got {moe}")
    if not z > 0:
        raise DomainError(f"z must be > 0, got {z}")
    out = moe / z
    return out.item() if out.ndim == 0 else out


def delta_transform(estimate, se, transform: str):
    """Transform an estimate and propagate its standard error by the delta method.

    Returns ``(g(x), se * |g'(x)|)`` for ``g`` in {identity, log, logit}.
    """
    x = np.asarray(estimate, dtype=float)
    s = np.asarray(se, dtype=float)
    if np.any(~(s > 0)):
        raise DomainError(f"standard error must be > 0, got {se}")
    if transform == "identity":
        value, deriv = x, np.ones_like(x)
    elif transform == "log":
        if np.any(~(x > 0)):
            raise DomainError(f"log transform needs estimate > 0, got {estimate}")
        value, deriv = np.log(x), 1.0 / x
    elif transform == "logit":
        if np.any(~((x > 0) & (x < 1))):
            raise DomainError(f"logit transform needs estimate in (0, 1), got {estimate}")
        value, deriv = np.log(x / (1.0 - x)), 1.0 / (x * (1.0 - x))
    else:
        raise DomainError(f"unknown transform {transform!r}")
    out_se = s * np.abs(deriv)
    if value.ndim == 0:
        return float(value), float(out_se)
    return value, out_se


def inverse_transform(value, transform: str):
    v = np.asarray(value, dtype=float)
    if transform == "identity":
        out = v
    elif transform == "log":
        out = np.exp(v)
    elif transform == "logit":
        out = 1.0 / (1.0 + np.exp(-v))
    else:
        raise DomainError(f"unknown transform {transform!r}")
    return out.item() if out.ndim == 0 else out


def assemble_sigma_u(covariate: ErrorProneCovariate, J: int = 1) -> np.ndarray:
    """Diagonal measurement-error covariance of one covariate (``N x N``).

    The latent covariate has one value per area regardless of ``J``; the
    sampler reuses this matrix for every response block.
    """
    if J < 1:
        raise DomainError(f"J must be a positive integer, got {J}")
    v = np.asarray(covariate.me_variances, dtype=float)
    if np.any(~(v > 0)):
        raise DomainError(f"covariate {covariate.name!r}: measurement-error variances must be > 0")
    return np.diag(v)


# ---------------------------------------------------------------------------
# file ingestion


@dataclass
class Schema:
    """How to interpret the prefixed columns of a data table.

    ``responses`` maps each ``resp:<name>`` column to its kind; ``transforms``
    maps ``cov:<name>`` columns to the transform applied before modelling.
    Columns named in ``ignore`` (without prefix) are skipped.
    """

    responses: dict[str, str] = field(default_factory=dict)
    gaussian_variance: dict[str, float] = field(default_factory=dict)
    transforms: dict[str, str] = field(default_factory=dict)
    intercept: bool = True
    moe_z: float = DEFAULT_MOE_Z
    ignore: tuple = ()

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        from .errors import ConfigError

        unknown = set(d) - {"responses", "gaussian_variance", "transforms", "intercept", "moe_z", "ignore"}
        if unknown:
            raise ConfigError(f"unknown schema key(s): {sorted(unknown)}")
        d = dict(d)
        d["ignore"] = tuple(d.get("ignore", ()))
        return cls(**d)


def _parse_float(text, row, col):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise IngestionError(f"row {row}, column {col!r}: non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise IngestionError(f"row {row}, column {col!r}: non-finite value {text!r}")
    return value


def read_adjacency(path, area_ids: Sequence[str]) -> ArealGraph:
    """Read an ``id1,id2`` edge list and resolve ids against ``area_ids``."""
    index = {a: i for i, a in enumerate(area_ids)}
    edges = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            rec = [r.strip() for r in rec]
            if not rec or not any(rec) or rec[0].startswith("#"):
                continue
            if len(rec) != 2:
                raise IngestionError(f"{path}:{lineno}: expected 'area_id_1,area_id_2', got {rec}")
            for a in rec:
                if a not in index:
                    raise IngestionError(f"{path}:{lineno}: unknown area id {a!r}")
            if rec[0] == rec[1]:
                raise IngestionError(f"{path}:{lineno}: self-loop on area {rec[0]!r}")
            edges.append((index[rec[0]], index[rec[1]]))
    try:
        return ArealGraph.from_edges(len(area_ids), edges)
    except DomainError as exc:
        raise IngestionError(str(exc)) from exc


def load_dataset(table_path, adjacency_path, schema: Schema | None = None) -> Dataset:
    schema = schema or Schema()
    table_path, adjacency_path = Path(table_path), Path(adjacency_path)
    for p in (table_path, adjacency_path):
        if not p.is_file():
            raise FileNotFoundError(f"no such file: {p}")
    with open(table_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    if "area_id" not in header:
        raise IngestionError(f"{table_path}: missing required column 'area_id'")
    if not rows:
        raise IngestionError(f"{table_path}: no data rows")

    ids = [r["area_id"].strip() for r in rows]
    seen = set()
    for a in ids:
        if a in seen:
            raise IngestionError(f"duplicate area id {a!r}")
        seen.add(a)

    def column(col):
        return np.array([_parse_float(r[col], i + 2, col) for i, r in enumerate(rows)])

    def names(prefix):
        return [h[len(prefix):] for h in header if h.startswith(prefix) and h[len(prefix):] not in schema.ignore]

    responses = []
    for name in names("resp:"):
        kind = schema.responses.get(name)
        if kind is None:
            kind = "binomial" if f"trials:{name}" in header else None
        if kind is None:
            raise IngestionError(f"schema does not give a kind for response column 'resp:{name}'")
        trials = column(f"trials:{name}") if f"trials:{name}" in header else None
        try:
            responses.append(
                ResponseBlock(name, kind, column(f"resp:{name}"),
                              gaussian_variance=schema.gaussian_variance.get(name, 1.0), trials=trials)
            )
        except DomainError as exc:
            raise IngestionError(str(exc)) from exc
    if not responses:
        raise IngestionError(f"{table_path}: no 'resp:<name>' columns")

    covariates = []
    for name in names("cov:"):
        raw = column(f"cov:{name}")
        if f"se:{name}" in header:
            se = column(f"se:{name}")
        elif f"moe:{name}" in header:
            try:
                se = moe_to_se(column(f"moe:{name}"), schema.moe_z)
            except DomainError as exc:
                raise IngestionError(f"covariate {name!r}: {exc}") from exc
        else:
            raise IngestionError(f"covariate {name!r} has neither 'moe:{name}' nor 'se:{name}'")
        transform = schema.transforms.get(name, "identity")
        try:
            value, tse = delta_transform(raw, se, transform)
        except DomainError as exc:
            raise IngestionError(f"covariate {name!r}: {exc}") from exc
        covariates.append(ErrorProneCovariate(name, value, tse**2, transform, raw=raw, raw_se=se))

    fixed_cols, fixed_names = [], []
    if schema.intercept:
        fixed_cols.append(np.ones(len(rows)))
        fixed_names.append("intercept")
    for name in names("fixed:"):
        fixed_cols.append(column(f"fixed:{name}"))
        fixed_names.append(name)
    S = np.column_stack(fixed_cols) if fixed_cols else np.zeros((len(rows), 0))

    graph = read_adjacency(adjacency_path, ids)
    try:
        return Dataset(graph, tuple(responses), tuple(covariates), FixedDesign(S, tuple(fixed_names)), tuple(ids))
    except DomainError as exc:
        raise IngestionError(str(exc)) from exc


def write_dataset(dataset: Dataset, table_path, adjacency_path):
    """Write a dataset in the CSV + edge-list layout read by :func:`load_dataset`.

    Error-prone covariates are written on their raw scale with ``se:`` columns
    when raw values are available, else on the model scale.
    """
    cols: dict[str, np.ndarray] = {}
    for blk in dataset.responses:
        cols[f"resp:{blk.name}"] = blk.values
        if blk.trials is not None:
            cols[f"trials:{blk.name}"] = blk.trials
    for cov in dataset.error_prone:
        if cov.raw is not None and cov.raw_se is not None:
            cols[f"cov:{cov.name}"], cols[f"se:{cov.name}"] = cov.raw, cov.raw_se
        else:
            cols[f"cov:{cov.name}"], cols[f"se:{cov.name}"] = cov.observed, np.sqrt(cov.me_variances)
    for name, col in zip(dataset.fixed.names, dataset.fixed.S.T):
        if name != "intercept":
            cols[f"fixed:{name}"] = col
    with open(table_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["area_id", *cols])
        for i, a in enumerate(dataset.area_ids):
            w.writerow([a, *(repr(float(c[i])) for c in cols.values())])
    a = sp.triu(dataset.graph.adjacency, k=1).tocoo()
    with open(adjacency_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for i, j in zip(a.row, a.col):
            w.writerow([dataset.area_ids[i], dataset.area_ids[j]])
