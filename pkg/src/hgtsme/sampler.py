"""Collapsed Gibbs sampler for the spatial mixed-effect measurement-error model.

Transformed data model, stacked over ``J`` response blocks (``N* = J N``)::

    h ~ N(W_s beta + S delta + M eta + xi, tau2 I)
    X_k ~ N(W_k, Sigma_Uk)                      (known diagonal Sigma_Uk)
    W_k ~ N(0, sigma2_wk (D - rho_k A)^-1)
    eta ~ N(0, sigma2_eta I_r),  xi ~ N(0, sigma2_xi I_N*)
    beta ~ N(0, sigma2_beta I),  delta ~ N(0, sigma2_delta I)
    tau2, sigma2_xi, sigma2_eta, sigma2_wk ~ IG(alpha, beta)

``W_s`` repeats the ``N x p`` latent covariates once per response block, so a
single latent field (and a single ``beta``) is shared by every block. The
naive model drops the measurement-error layer and uses ``[X S]`` as a fixed
design.
"""
from __future__ import annotations

import collections
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .areal import Dataset
from .errors import ConfigError, DomainError, HgtsmeError, SamplerError
from .hgt import TransformConfig, draw_h
from .spatial import MoranBasis, build_basis, car_precision, rho_bounds
from .stochastics import RngStream, draw_inverse_gamma, draw_mvn_precision

log = logging.getLogger(__name__)

SCALAR_PARAMS = ("sigma2_eta", "sigma2_xi", "tau2")


@dataclass(frozen=True)
class Priors:
    sigma2_beta: float = 100.0
    sigma2_delta: float = 100.0
    tau2: tuple[float, float] = (2.0, 1.0)
    sigma2_xi: tuple[float, float] = (2.0, 1.0)
    sigma2_eta: tuple[float, float] = (2.0, 1.0)
    sigma2_w: tuple[float, float] = (2.0, 1.0)

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            vals = v if isinstance(v, tuple) else (v,)
            if len(vals) not in (1, 2) or not all(x > 0 for x in vals):
                raise ConfigError(f"prior {f.name} must be positive, got {v!r}")


@dataclass(frozen=True)
class ModelConfig:
    iterations: int = 10000
    burn_in: int = 5000
    thin: int = 1
    rho: float = 0.99
    r_spec: float | int = 0.95
    priors: Priors = field(default_factory=Priors)
    seed: int = 0
    measurement_error: bool = True
    gamma: TransformConfig = field(default_factory=TransformConfig)
    center_covariates: bool = True
    per_block_tau2: bool = False

    def __post_init__(self):
        if self.iterations < 1 or self.thin < 1 or self.burn_in < 0:
            raise ConfigError("iterations and thin must be >= 1 and burn_in >= 0")
        if self.burn_in >= self.iterations:
            raise ConfigError(f"burn_in ({self.burn_in}) must be < iterations ({self.iterations})")
        if not abs(self.rho) < 1:
            raise ConfigError(f"|rho| must be < 1, got {self.rho}")

    @property
    def n_retained(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        try:
            if isinstance(d.get("priors"), dict):
                pri = {k: tuple(v) if isinstance(v, list) else v for k, v in d["priors"].items()}
                bad = set(pri) - {f.name for f in dataclasses.fields(Priors)}
                if bad:
                    raise ConfigError(f"unknown config key(s): {sorted('priors.' + b for b in bad)}")
                d["priors"] = Priors(**pri)
            if isinstance(d.get("gamma"), dict):
                bad = set(d["gamma"]) - {f.name for f in dataclasses.fields(TransformConfig)}
                if bad:
                    raise ConfigError(f"unknown config key(s): {sorted('gamma.' + b for b in bad)}")
                d["gamma"] = TransformConfig(**d["gamma"])
            return cls(**d)
        except (TypeError, DomainError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


@dataclass
class ChainState:
    h: np.ndarray
    W: np.ndarray  # N x p
    beta: np.ndarray
    delta: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    sigma2_w: np.ndarray
    sigma2_eta: float
    sigma2_xi: float
    tau2: float | np.ndarray  # one value per response block when per_block_tau2

    def copy(self) -> "ChainState":
        return ChainState(**{k: np.copy(v) if isinstance(v, np.ndarray) else v
                             for k, v in dataclasses.asdict(self).items()})


@dataclass
class ModelContext:
    """Fixed design quantities the kernels condition on.

    ``S`` and ``M`` are already stacked to ``N*`` rows; ``car`` holds the dense
    ``D - rho_k A`` per error-prone covariate and ``me_precision`` the
    diagonals of ``Sigma_Uk^-1`` as columns.
    """

    X: np.ndarray
    S: np.ndarray
    M: np.ndarray
    car: list
    me_precision: np.ndarray
    n_blocks: int
    priors: Priors = field(default_factory=Priors)
    w_priors: list = field(default_factory=list)
    x_center: np.ndarray | None = None
    intercept: tuple | None = None  # (column of S, its constant value)
    per_block_tau2: bool = False

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(self.X.shape[0], -1)
        self.me_precision = np.asarray(self.me_precision, dtype=float).reshape(self.X.shape)
        if not self.w_priors:
            self.w_priors = [self.priors.sigma2_w] * self.p
        n_star = self.X.shape[0] * self.n_blocks
        if self.S.shape[0] != n_star or self.M.shape[0] != n_star:
            raise ConfigError(f"S {self.S.shape} and M {self.M.shape} must have {n_star} rows")
        if self.M.shape[1] and not np.allclose(self.M.T @ self.M, np.eye(self.M.shape[1]), atol=1e-8):
            raise ConfigError("basis M must have orthonormal columns")

    @property
    def n_areas(self) -> int:
        return self.X.shape[0]

    @property
    def n_star(self) -> int:
        return self.X.shape[0] * self.n_blocks

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def stack_w(self, W) -> np.ndarray:
        return np.tile(W, (self.n_blocks, 1))

    def linear_parts(self, state: ChainState):
        wb = np.tile(state.W @ state.beta, self.n_blocks) if self.p else np.zeros(self.n_star)
        return wb, self.S @ state.delta, self.M @ state.eta

    def tau2_positions(self, state: ChainState):
        """``tau2`` as a scalar, or expanded to every stacked position."""
        if self.per_block_tau2:
            return np.repeat(np.asarray(state.tau2, dtype=float), self.n_areas)
        return state.tau2

    def latent_mean(self, state: ChainState) -> np.ndarray:
        wb, sd, me = self.linear_parts(state)
        return wb + sd + me + state.xi


def _intercept_column(S):
    for k in range(S.shape[1]):
        if S[0, k] != 0 and np.all(S[:, k] == S[0, k]):
            return k, float(S[0, k])
    return None


def build_context(dataset: Dataset, config: ModelConfig, basis: MoranBasis, naive: bool = False) -> ModelContext:
    """Assemble the kernels' design.

    With ``center_covariates`` and a constant column in ``S``, X is centred
    so the zero-mean CAR prior on W is sensible and ``beta`` does not fight
    the intercept; :func:`_run` maps draws back to the uncentred scale.
    """
    J = dataset.n_blocks
    if basis.M.shape[0] != dataset.n_star:
        raise ConfigError(f"basis has {basis.M.shape[0]} rows, dataset has N*={dataset.n_star}")
    X = dataset.X()
    intercept = _intercept_column(dataset.fixed.S)
    center = X.mean(axis=0) if config.center_covariates and intercept is not None else np.zeros(X.shape[1])
    Xc = X - center
    if naive or not dataset.error_prone:
        S = np.tile(np.column_stack([Xc, dataset.fixed.S]), (J, 1))
        shifted = (intercept[0] + X.shape[1], intercept[1]) if intercept is not None else None
        return ModelContext(np.zeros((dataset.n_areas, 0)), S, basis.M, [], np.zeros((dataset.n_areas, 0)),
                            J, config.priors, x_center=center, intercept=shifted,
                            per_block_tau2=config.per_block_tau2)
    bounds = rho_bounds(dataset.graph)
    car, w_priors = [], []
    for cov in dataset.error_prone:
        rho = config.rho if cov.rho is None else cov.rho
        car.append(car_precision(dataset.graph, rho, bounds).dense())
        w_priors.append(cov.sigma2_prior or config.priors.sigma2_w)
    return ModelContext(Xc, np.tile(dataset.fixed.S, (J, 1)), basis.M, car,
                        1.0 / dataset.me_variances(), J, config.priors, w_priors,
                        x_center=center, intercept=intercept, per_block_tau2=config.per_block_tau2)


# ---------------------------------------------------------------------------
# full conditionals


def update_W(state: ChainState, ctx: ModelContext, rng: RngStream) -> np.ndarray:
    """Latent covariates, one CAR-Gaussian block per error-prone covariate.

    Each response block contributes ``beta_k^2 / tau2`` to the precision and
    its residual to the linear term, hence the factor ``J`` and block sum
    (weighted by ``1/tau2_j`` when each block has its own ``tau2``).
    """
    W = state.W.copy()
    _, sd, me = ctx.linear_parts(state)
    base = state.h - sd - me - state.xi
    n, J = ctx.n_areas, ctx.n_blocks
    inv_tau2 = np.broadcast_to(1.0 / np.asarray(state.tau2, dtype=float), (J,))
    for k in range(ctx.p):
        others = np.delete(np.arange(ctx.p), k)
        resid = base - np.tile(W[:, others] @ state.beta[others], J)
        block_sum = inv_tau2 @ resid.reshape(J, n)
        bk = state.beta[k]
        Q = ctx.car[k] / state.sigma2_w[k]
        Q[np.diag_indices(n)] += bk * bk * inv_tau2.sum() + ctx.me_precision[:, k]
        b = ctx.me_precision[:, k] * ctx.X[:, k] + bk * block_sum
        W[:, k] = draw_mvn_precision(rng, b, Q, name=f"W[{k}] precision")
    return W


def _coefficient_draw(design, resid, prior_var, tau2, rng, name):
    k = design.shape[1]
    if k == 0:
        return np.zeros(0)
    weighted = design.T / tau2
    Q = weighted @ design
    Q[np.diag_indices(k)] += 1.0 / prior_var
    return draw_mvn_precision(rng, weighted @ resid, Q, name=name)


def update_beta(state: ChainState, ctx: ModelContext, rng: RngStream) -> np.ndarray:
    _, sd, me = ctx.linear_parts(state)
    return _coefficient_draw(ctx.stack_w(state.W), state.h - sd - me - state.xi,
                             ctx.priors.sigma2_beta, ctx.tau2_positions(state), rng, "beta precision")


def update_delta(state: ChainState, ctx: ModelContext, rng: RngStream) -> np.ndarray:
    wb, _, me = ctx.linear_parts(state)
    return _coefficient_draw(ctx.S, state.h - wb - me - state.xi,
                             ctx.priors.sigma2_delta, ctx.tau2_positions(state), rng, "delta precision")


def update_eta(state: ChainState, ctx: ModelContext, rng: RngStream) -> np.ndarray:
    """With orthonormal ``M`` the precision is ``(1/sigma2_eta + 1/tau2) I``."""
    r = ctx.M.shape[1]
    if r == 0:
        return np.zeros(0)
    wb, sd, _ = ctx.linear_parts(state)
    resid = state.h - wb - sd - state.xi
    if ctx.per_block_tau2:
        weighted = ctx.M.T / ctx.tau2_positions(state)
        Q = weighted @ ctx.M
        Q[np.diag_indices(r)] += 1.0 / state.sigma2_eta
        return draw_mvn_precision(rng, weighted @ resid, Q, name="eta precision")
    var = 1.0 / (1.0 / state.sigma2_eta + 1.0 / state.tau2)
    mean = var * (ctx.M.T @ resid) / state.tau2
    return mean + np.sqrt(var) * rng.generator.standard_normal(r)


def update_xi(state: ChainState, ctx: ModelContext, rng: RngStream) -> np.ndarray:
    wb, sd, me = ctx.linear_parts(state)
    tau2 = ctx.tau2_positions(state)
    var = 1.0 / (1.0 / state.sigma2_xi + 1.0 / tau2)
    mean = var * (state.h - wb - sd - me) / tau2
    return mean + np.sqrt(var) * rng.generator.standard_normal(mean.size)


def update_variances(state: ChainState, ctx: ModelContext, rng: RngStream, counter=None):
    """Inverse-gamma draws for ``sigma2_w`` (per covariate), ``sigma2_eta``, ``sigma2_xi`` and ``tau2``.

    Returns them in that order. Negative quadratic forms (round-off) are
    clamped at zero and tallied in ``counter['clamped_quadratic_form']``.
    """
    pri = ctx.priors

    def quad(value):
        if value < 0:
            if counter is not None:
                counter["clamped_quadratic_form"] += 1
            return 0.0
        return value

    sigma2_w = np.empty(ctx.p)
    for k in range(ctx.p):
        a, b = ctx.w_priors[k]
        w = state.W[:, k]
        sigma2_w[k] = draw_inverse_gamma(rng, a + ctx.n_areas / 2, b + 0.5 * quad(w @ ctx.car[k] @ w))
    r = ctx.M.shape[1]
    a, b = pri.sigma2_eta
    sigma2_eta = draw_inverse_gamma(rng, a + r / 2, b + 0.5 * quad(state.eta @ state.eta))
    a, b = pri.sigma2_xi
    sigma2_xi = draw_inverse_gamma(rng, a + ctx.n_star / 2, b + 0.5 * quad(state.xi @ state.xi))
    resid = state.h - ctx.latent_mean(state)
    a, b = pri.tau2
    if ctx.per_block_tau2:
        ss = (resid.reshape(ctx.n_blocks, ctx.n_areas) ** 2).sum(axis=1)
        tau2 = np.array([draw_inverse_gamma(rng, a + ctx.n_areas / 2, b + 0.5 * quad(v)) for v in ss])
    else:
        tau2 = draw_inverse_gamma(rng, a + ctx.n_star / 2, b + 0.5 * quad(resid @ resid))
    return sigma2_w, sigma2_eta, sigma2_xi, tau2


# ---------------------------------------------------------------------------
# chains


@dataclass
class ChainOutput:
    """Retained draws of a chain, keyed by parameter.

    ``latent`` holds ``W_s beta + S delta + M eta + xi`` per retained sweep.
    For the naive model ``beta`` holds the coefficients of ``X`` and
    ``delta`` those of ``S``; ``W`` is absent.
    """

    draws: dict
    model: str
    seed: int
    config: dict
    iterations: int
    burn_in: int
    thin: int
    warnings: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def n_retained(self) -> int:
        return self.draws["tau2"].shape[0]

    def __getitem__(self, key):
        return self.draws[key]

    def scalar_table(self) -> tuple[list[str], np.ndarray]:
        cols, names = [], []
        for key in ("beta", "delta", "sigma2_w", *SCALAR_PARAMS):
            arr = self.draws.get(key)
            if arr is None:
                continue
            if arr.ndim == 1:
                names.append(key)
                cols.append(arr)
            else:
                for k in range(arr.shape[1]):
                    names.append(f"{key}[{k}]")
                    cols.append(arr[:, k])
        return names, np.column_stack(cols)

    def vector_tables(self) -> dict[str, np.ndarray]:
        out = {k: self.draws[k] for k in ("latent", "h", "xi", "eta")}
        if "W" in self.draws:
            for k in range(self.draws["W"].shape[2]):
                out[f"W{k}"] = self.draws["W"][:, :, k]
        return out

    def save(self, directory, prefix: str = "chain") -> list[Path]:
        """Write ``<prefix>_scalars.csv`` and one CSV per vector parameter."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        names, table = self.scalar_table()
        iters = np.arange(self.burn_in, self.iterations, self.thin)[: table.shape[0]]
        path = directory / f"{prefix}_scalars.csv"
        _write_csv(path, ["iteration", *names], np.column_stack([iters, table]))
        paths.append(path)
        for key, arr in self.vector_tables().items():
            path = directory / f"{prefix}_{key}.csv"
            _write_csv(path, ["iteration", *[f"{key}[{i}]" for i in range(arr.shape[1])]],
                       np.column_stack([iters, arr]))
            paths.append(path)
        meta = {k: getattr(self, k) for k in ("model", "seed", "iterations", "burn_in", "thin", "config")}
        path = directory / f"{prefix}_meta.json"
        path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable))
        paths.append(path)
        return paths

    @classmethod
    def load(cls, directory, prefix: str = "chain") -> "ChainOutput":
        directory = Path(directory)
        meta = json.loads((directory / f"{prefix}_meta.json").read_text())
        header, table = _read_csv(directory / f"{prefix}_scalars.csv")
        draws: dict = {}
        for key in ("beta", "delta", "sigma2_w", *SCALAR_PARAMS):
            if key in header:
                draws[key] = table[:, header.index(key)]
                continue
            idx = [i for i, h in enumerate(header) if h.startswith(key + "[")]
            if idx or key in ("beta", "delta"):
                draws[key] = table[:, idx]
        ws = []
        for path in sorted(directory.glob(f"{prefix}_*.csv")):
            key = path.stem[len(prefix) + 1:]
            if key == "scalars":
                continue
            arr = _read_csv(path)[1][:, 1:]
            if key.startswith("W") and key[1:].isdigit():
                ws.append((int(key[1:]), arr))
            else:
                draws[key] = arr
        if ws:
            draws["W"] = np.stack([a for _, a in sorted(ws)], axis=2)
        return cls(draws, meta["model"], meta["seed"], meta["config"], meta["iterations"],
                   meta["burn_in"], meta["thin"])


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _write_csv(path, header, table):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, table, delimiter=",", fmt="%.17g")


def _read_csv(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, table


def init_state(config: ModelConfig, ctx: ModelContext, dataset: Dataset, rng: RngStream) -> ChainState:
    if ctx.n_star != dataset.n_star:
        raise ConfigError(f"context N*={ctx.n_star} does not match dataset N*={dataset.n_star}")
    return ChainState(
        h=draw_h(dataset, config.gamma, rng),
        W=ctx.X.copy(),
        beta=np.zeros(ctx.p),
        delta=np.zeros(ctx.S.shape[1]),
        eta=np.zeros(ctx.M.shape[1]),
        xi=np.zeros(ctx.n_star),
        sigma2_w=np.ones(ctx.p),
        sigma2_eta=1.0,
        sigma2_xi=1.0,
        tau2=np.ones(ctx.n_blocks) if ctx.per_block_tau2 else 1.0,
    )


def gibbs_sweep(state: ChainState, ctx: ModelContext, dataset: Dataset, config: ModelConfig,
                rng: RngStream, counter=None, iteration: int = 0) -> ChainState:
    """One full cycle, in place: h, W, beta, delta, eta, xi, variances."""
    kernel = "h"
    try:
        state.h = draw_h(dataset, config.gamma, rng)
        if ctx.p:
            kernel = "W"
            state.W = update_W(state, ctx, rng)
            kernel = "beta"
            state.beta = update_beta(state, ctx, rng)
        kernel = "delta"
        state.delta = update_delta(state, ctx, rng)
        kernel = "eta"
        state.eta = update_eta(state, ctx, rng)
        kernel = "xi"
        state.xi = update_xi(state, ctx, rng)
        kernel = "variances"
        state.sigma2_w, state.sigma2_eta, state.sigma2_xi, state.tau2 = update_variances(state, ctx, rng, counter)
    except HgtsmeError as exc:
        raise SamplerError(iteration, kernel, exc) from exc
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise SamplerError(iteration, kernel, exc) from exc
    return state


def _run(config: ModelConfig, dataset: Dataset, basis: MoranBasis | None, naive: bool,
         chain_id=0) -> ChainOutput:
    t0 = time.perf_counter()
    if basis is None:
        basis = build_basis(dataset, config.r_spec)
    ctx = build_context(dataset, config, basis, naive=naive)
    rng = RngStream(config.seed, chain_id)
    counter: collections.Counter = collections.Counter()
    state = init_state(config, ctx, dataset, rng)

    n_keep = config.n_retained
    n, p, J = dataset.n_areas, ctx.p, dataset.n_blocks
    n_star, r, q = ctx.n_star, ctx.M.shape[1], ctx.S.shape[1]
    store = {
        "h": np.empty((n_keep, n_star)),
        "latent": np.empty((n_keep, n_star)),
        "xi": np.empty((n_keep, n_star)),
        "eta": np.empty((n_keep, r)),
        "delta": np.empty((n_keep, q)),
        "sigma2_eta": np.empty(n_keep),
        "sigma2_xi": np.empty(n_keep),
        "tau2": np.empty((n_keep, J)) if ctx.per_block_tau2 else np.empty(n_keep),
    }
    if p:
        store.update(W=np.empty((n_keep, n, p)), beta=np.empty((n_keep, p)), sigma2_w=np.empty((n_keep, p)))

    slot = 0
    for it in range(config.iterations):
        gibbs_sweep(state, ctx, dataset, config, rng, counter, it)
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            store["h"][slot] = state.h
            store["latent"][slot] = ctx.latent_mean(state)
            store["xi"][slot] = state.xi
            store["eta"][slot] = state.eta
            store["delta"][slot] = state.delta
            store["sigma2_eta"][slot] = state.sigma2_eta
            store["sigma2_xi"][slot] = state.sigma2_xi
            store["tau2"][slot] = state.tau2
            if p:
                store["W"][slot] = state.W
                store["beta"][slot] = state.beta
                store["sigma2_w"][slot] = state.sigma2_w
            slot += 1

    p_x = dataset.p
    if naive:
        coef = store.pop("delta")
        store["beta"], store["delta"] = coef[:, :p_x], coef[:, p_x:].copy()
        icol = ctx.intercept[0] - p_x if ctx.intercept is not None else None
    else:
        icol = ctx.intercept[0] if ctx.intercept is not None else None
        if p_x:
            store["W"] += ctx.x_center
    if icol is not None and p_x:
        store["delta"][:, icol] -= store["beta"] @ ctx.x_center / ctx.intercept[1]

    cfg = config.to_dict()
    cfg["r"] = basis.r
    return ChainOutput(
        draws=store,
        model="naive" if naive else "hgt-sme",
        seed=config.seed,
        config=cfg,
        iterations=config.iterations,
        burn_in=config.burn_in,
        thin=config.thin,
        warnings=dict(counter),
        elapsed=time.perf_counter() - t0,
    )


def run_gibbs(config: ModelConfig, dataset: Dataset, basis: MoranBasis | None = None,
              chain_id=0) -> ChainOutput:
    """Fit the measurement-error model (or the naive one if ``config.measurement_error`` is off)."""
    return _run(config, dataset, basis, naive=not config.measurement_error or dataset.p == 0,
                chain_id=chain_id)


def run_naive(config: ModelConfig, dataset: Dataset, basis: MoranBasis | None = None,
              chain_id=0) -> ChainOutput:
    """Fit the naive model: observed X enters the design as if error free."""
    return _run(config, dataset, basis, naive=True, chain_id=chain_id)
