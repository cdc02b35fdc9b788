"""Pseudo-data generators, forward simulation and replicate studies."""
from __future__ import annotations

import concurrent.futures
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .areal import (ArealGraph, Dataset, ErrorProneCovariate, FixedDesign, ResponseBlock, Schema,
                    load_dataset)
from .errors import DomainError, HgtsmeError
from .evaluation import metrics, posterior_estimates
from .spatial import build_basis, car_precision
from .sampler import ModelConfig, run_gibbs, run_naive
from .stochastics import RngStream, draw_mvn_precision, draw_normal, draw_poisson

log = logging.getLogger(__name__)

DESIGNS = ("poisson", "gaussian+poisson")
METRICS = ("rmse", "mse", "mae")
MODELS = ("naive", "hgt-sme")


class StudyError(HgtsmeError):
    category = "study"


def gen_poisson_pseudo(base_counts, rng: RngStream) -> np.ndarray:
    """Counts ``Z* ~ Poisson(Z + 1)``."""
    base = np.asarray(base_counts, dtype=float)
    if np.any(base < 0) or not np.all(np.isfinite(base)):
        raise DomainError("base counts must be finite and non-negative")
    return np.asarray(draw_poisson(rng, base + 1.0, size=base.shape), dtype=float)


def gen_gaussian_pseudo(base_values, rng: RngStream) -> np.ndarray:
    """Continuous pseudo data ``Z* ~ Normal(log Z, 1)``."""
    base = np.asarray(base_values, dtype=float)
    if np.any(~(base > 0)):
        raise DomainError("base values must be > 0")
    return np.asarray(draw_normal(rng, np.log(base), np.ones_like(base)), dtype=float)


# ---------------------------------------------------------------------------
# forward simulation from the model


@dataclass(frozen=True)
class TruthSpec:
    """Parameters of a forward simulation.

    ``delta`` includes the intercept; the fixed design is an intercept plus
    ``len(delta) - 1`` standard-normal columns. ``me_variance`` may be a
    scalar or one value per area.
    """

    beta: tuple = (1.0,)
    delta: tuple = (1.0, 0.5)
    rho: float = 0.99
    sigma2_w: float = 1.0
    me_variance: float | tuple = 0.25
    sigma2_eta: float = 0.25
    sigma2_xi: float = 0.05
    tau2: float = 0.05
    r_spec: float | int = 0.95
    kinds: tuple = ("gaussian",)
    gaussian_variance: float = 0.1
    trials: int = 50


def draw_car_field(graph: ArealGraph, rho: float, sigma2: float, rng: RngStream) -> np.ndarray:
    car = car_precision(graph, rho)
    return draw_mvn_precision(rng, np.zeros(graph.n_areas), car.dense() / sigma2, name="CAR precision")


def gen_synthetic_truth(graph: ArealGraph, spec: TruthSpec, rng: RngStream):
    """Simulate a dataset from the full generative model.

    Returns ``(dataset, truth)`` where ``truth`` records W, the coefficients,
    the basis and every latent draw.
    """
    n, p, J = graph.n_areas, len(spec.beta), len(spec.kinds)
    W = np.column_stack([draw_car_field(graph, spec.rho, spec.sigma2_w, rng) for _ in range(p)]) \
        if p else np.zeros((n, 0))
    me_var = np.broadcast_to(np.asarray(spec.me_variance, dtype=float), (n,)).copy()
    X = W + np.sqrt(me_var)[:, None] * rng.generator.standard_normal((n, p))
    q = len(spec.delta)
    S = np.column_stack([np.ones(n), rng.generator.standard_normal((n, q - 1))]) if q else np.zeros((n, 0))
    names = ("intercept", *(f"s{k}" for k in range(1, q)))[:q]
    covs = tuple(ErrorProneCovariate(f"x{k}", X[:, k], me_var) for k in range(p))
    fixed = FixedDesign(S, names)
    placeholder = tuple(
        ResponseBlock(f"z{j}", kind, np.ones(n), spec.gaussian_variance,
                      np.full(n, spec.trials) if kind == "binomial" else None)
        for j, kind in enumerate(spec.kinds)
    )
    dataset = Dataset(graph, placeholder, covs, fixed)
    basis = build_basis(dataset, spec.r_spec)

    beta, delta = np.asarray(spec.beta, float), np.asarray(spec.delta, float)
    eta = np.sqrt(spec.sigma2_eta) * rng.generator.standard_normal(basis.r)
    xi = np.sqrt(spec.sigma2_xi) * rng.generator.standard_normal(n * J)
    mean = np.tile(W @ beta, J) + np.tile(S @ delta, J) + basis.M @ eta + xi
    h = mean + np.sqrt(spec.tau2) * rng.generator.standard_normal(n * J)

    blocks = []
    for j, kind in enumerate(spec.kinds):
        hj = h[j * n:(j + 1) * n]
        if kind == "gaussian":
            z = hj + np.sqrt(spec.gaussian_variance) * rng.generator.standard_normal(n)
            blocks.append(ResponseBlock(f"z{j}", kind, z, spec.gaussian_variance))
        elif kind == "poisson":
            blocks.append(ResponseBlock(f"z{j}", kind, rng.generator.poisson(np.exp(hj)).astype(float)))
        else:
            trials = np.full(n, spec.trials)
            z = rng.generator.binomial(trials, 1.0 / (1.0 + np.exp(-hj))).astype(float)
            blocks.append(ResponseBlock(f"z{j}", kind, z, trials=trials))
    truth = {"W": W, "X": X, "S": S, "beta": beta, "delta": delta, "eta": eta, "xi": xi,
             "mean": mean, "h": h, "M": basis.M, "me_variances": me_var}
    return dataset.with_responses(blocks), truth


# ---------------------------------------------------------------------------
# bundled synthetic base table

BASE_SCHEMA = Schema(
    responses={"housing_cost": "gaussian", "poverty": "poisson"},
    transforms={"income": "log"},
)


# single-response view of the same table used by ``fit`` when no data is given
FIT_SCHEMA = Schema(
    responses={"poverty": "poisson"},
    transforms={"income": "log"},
    ignore=("housing_cost",),
)


def bundled_paths() -> tuple[Path, Path]:
    root = resources.files("hgtsme") / "data"
    return Path(str(root / "nw175_table.csv")), Path(str(root / "nw175_adjacency.csv"))


def load_base_table() -> Dataset:
    """175-area synthetic stand-in for the county-level survey estimates."""
    table, adj = bundled_paths()
    return load_dataset(table, adj, BASE_SCHEMA)


# ---------------------------------------------------------------------------
# replicate studies


@dataclass(frozen=True)
class StudySpec:
    base: Dataset
    design: str = "poisson"
    replicates: int = 50
    config: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 2024
    min_success: float = 0.8
    n_jobs: int = 1

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise DomainError(f"unknown design {self.design!r}; expected one of {DESIGNS}")
        if self.replicates < 1:
            raise DomainError("replicates must be >= 1")

    def block_names(self) -> list[str]:
        return ["poverty"] if self.design == "poisson" else ["housing_cost", "poverty"]


@dataclass
class StudyResult:
    rows: list  # one dict per (replicate, model, block)
    medians: dict  # medians[model][block][metric]
    reductions: dict  # reductions[block][metric], percent
    failures: list
    design: str
    r: int

    def table(self) -> list[dict]:
        """Summary rows: estimator, block, RMSE, MSE, Abs. Bias and reductions."""
        out = []
        for model in MODELS:
            for block, vals in self.medians[model].items():
                row = {"estimator": model, "block": block, "r": self.r,
                       "rmse": vals["rmse"], "mse": vals["mse"], "abs_bias": vals["mae"]}
                if model == "hgt-sme":
                    red = self.reductions[block]
                    row.update(rmse_reduction=red["rmse"], mse_reduction=red["mse"], abs_bias_reduction=red["mae"])
                out.append(row)
        return out


def pseudo_dataset(spec: StudySpec, rng: RngStream) -> Dataset:
    base = {b.name: b for b in spec.base.responses}
    blocks = []
    if spec.design == "gaussian+poisson":
        blocks.append(ResponseBlock("housing_cost", "gaussian", gen_gaussian_pseudo(base["housing_cost"].values, rng), 1.0))
    blocks.append(ResponseBlock("poverty", "poisson", gen_poisson_pseudo(base["poverty"].values, rng)))
    return spec.base.with_responses(blocks)


def _replicate(spec: StudySpec, rep: int, basis) -> list[dict]:
    data = pseudo_dataset(spec, RngStream(spec.seed, (0, rep)))
    cfg = spec.config.replace(seed=spec.seed)
    fits = {
        "hgt-sme": run_gibbs(cfg.replace(measurement_error=True), data, basis, chain_id=(1, rep)),
        "naive": run_naive(cfg, data, basis, chain_id=(2, rep)),
    }
    n = data.n_areas
    rows = []
    for model, chain in fits.items():
        est, _ = posterior_estimates(chain, data)
        for j, blk in enumerate(data.responses):
            m = metrics(blk.values, est[j * n:(j + 1) * n])
            rows.append({"replicate": rep, "model": model, "block": blk.name, **m})
    return rows


def _aggregate(rows: list[dict]):
    medians: dict = {m: {} for m in MODELS}
    blocks = sorted({r["block"] for r in rows}, key=[r["block"] for r in rows].index)
    for model in MODELS:
        for block in blocks:
            sel = [r for r in rows if r["model"] == model and r["block"] == block]
            medians[model][block] = {k: float(np.median([r[k] for r in sel])) for k in METRICS}
    reductions = {
        b: {k: 100.0 * (medians["naive"][b][k] - medians["hgt-sme"][b][k]) / medians["naive"][b][k]
            for k in METRICS}
        for b in blocks
    }
    return medians, reductions


def run_study(spec: StudySpec, progress=None) -> StudyResult:
    """Fit both models to every pseudo-data replicate and aggregate medians.

    Replicates that raise are logged and dropped; fewer than
    ``min_success * replicates`` successes is an error.
    """
    # the basis depends on X and S only, so it is shared by every replicate
    probe = pseudo_dataset(spec, RngStream(spec.seed, (0, 0)))
    basis = build_basis(probe, spec.config.r_spec)

    rows, failures = [], []

    def collect(rep, fut_or_rows):
        try:
            out = fut_or_rows.result() if hasattr(fut_or_rows, "result") else fut_or_rows()
        except HgtsmeError as exc:
            log.warning("replicate %d failed: %s", rep, exc)
            failures.append({"replicate": rep, "error": str(exc)})
            return
        rows.extend(out)
        if progress:
            progress(rep)

    if spec.n_jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(spec.n_jobs) as pool:
            futs = {rep: pool.submit(_replicate, spec, rep, basis) for rep in range(spec.replicates)}
            for rep in range(spec.replicates):
                collect(rep, futs[rep])
    else:
        for rep in range(spec.replicates):
            collect(rep, lambda rep=rep: _replicate(spec, rep, basis))

    ok = spec.replicates - len(failures)
    if ok < spec.min_success * spec.replicates or ok == 0:
        raise StudyError(f"only {ok}/{spec.replicates} replicates succeeded")
    rows.sort(key=lambda r: (r["replicate"], MODELS.index(r["model"])))
    medians, reductions = _aggregate(rows)
    return StudyResult(rows, medians, reductions, failures, spec.design, basis.r)
