"""Command-line interface: ``fit``, ``study``, ``basis``, ``simulate``, ``summarize``.

Every invocation writes into one run directory (``--out``) holding a
``manifest.json`` with the resolved configuration, seed, input digests,
timings, library versions and warnings. Configuration precedence is
flags > JSON config file > defaults.

Failures exit with status 1 and print a single line to stderr::

    error category=<io|config|ingestion|domain|numerical|sampler|study> message=<text>
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .areal import Schema, load_dataset, write_dataset
from .errors import ConfigError, HgtsmeError
from .evaluation import LEVELS, area_summary, batch_means_se, compare, summarize_draws
from .sampler import ChainOutput, ModelConfig, run_gibbs, run_naive
from .simharness import BASE_SCHEMA, DESIGNS, FIT_SCHEMA, StudySpec, bundled_paths, pseudo_dataset, run_study
from .spatial import basis_design, expand_adjacency, mi_operator, mi_spectrum, resolve_r
from .stochastics import RngStream

log = logging.getLogger("hgtsme")

BASIS_FRACTIONS = (0.95, 0.50, 0.25)
STUDY_KEYS = {"design", "replicates", "seed", "min_success", "n_jobs", "model", "data", "adj", "schema"}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(o):
    if isinstance(o, (np.generic,)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def write_rows(path, rows: list[dict]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        fields = list(dict.fromkeys(k for row in rows for k in row))
        wr = csv.DictWriter(fh, fieldnames=fields)
        wr.writeheader()
        for row in rows:
            wr.writerow({k: f"{v:.10g}" if isinstance(v, float) else v for k, v in row.items()})


def versions() -> dict:
    return {"hgtsme": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def model_overrides(args) -> dict:
    """Model-config fields set on the command line."""
    out = {}
    for flag, key in (("seed", "seed"), ("iterations", "iterations"), ("burn_in", "burn_in"),
                      ("thin", "thin"), ("rho", "rho")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    r_frac = getattr(args, "r_frac", None)
    if r_frac is not None:
        if not 0 < r_frac <= 1:
            raise ConfigError(f"--r-frac must lie in (0, 1], got {r_frac}")
        out["r_spec"] = r_frac
    if getattr(args, "r_count", None) is not None:
        out["r_spec"] = int(args.r_count)
    if getattr(args, "iterations", None) is not None and getattr(args, "burn_in", None) is None:
        out.setdefault("burn_in", args.iterations // 2)
    return out


def resolve_model_config(file_cfg: dict, overrides: dict) -> ModelConfig:
    merged = {**file_cfg, **overrides}
    r_spec = merged.get("r_spec")
    if isinstance(r_spec, float) and not 0 < r_spec <= 1:
        raise ConfigError(f"r_spec fraction must lie in (0, 1], got {r_spec}")
    return ModelConfig.from_dict(merged)


def load_inputs(data, adj, schema_dict, default_schema=BASE_SCHEMA):
    """Dataset plus ``{path: sha256}``; no paths means the bundled base table."""
    if (data is None) != (adj is None):
        raise ConfigError("--data and --adj must be given together")
    if data is None:
        data, adj = bundled_paths()
        schema = default_schema if schema_dict is None else Schema.from_dict(schema_dict)
    else:
        schema = Schema.from_dict(schema_dict or {})
    data, adj = Path(data), Path(adj)
    for p in (data, adj):
        if not p.is_file():
            raise FileNotFoundError(f"no such file: {p}")
    dataset = load_dataset(data, adj, schema)
    return dataset, {str(data): sha256(data), str(adj): sha256(adj)}, schema


def _schema_dict(schema: Schema) -> dict:
    return {"responses": dict(schema.responses), "gaussian_variance": dict(schema.gaussian_variance),
            "transforms": dict(schema.transforms), "intercept": schema.intercept, "moe_z": schema.moe_z,
            "ignore": list(schema.ignore)}


def run_dir(args, command: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# summaries


def parameter_rows(chains: list[ChainOutput]) -> list[dict]:
    """Pooled parameter summaries with batch-means MC standard errors."""
    names, tables = None, []
    for ch in chains:
        names, table = ch.scalar_table()
        tables.append(table)
    pooled = np.vstack(tables)
    summ = summarize_draws(pooled)
    n_batches = min(25, pooled.shape[0] // 2) if pooled.shape[0] >= 4 else 0
    mcse = batch_means_se(np.vstack(tables), n_batches) if n_batches >= 2 else np.full(len(names), np.nan)
    return [{"parameter": nm, "mean": float(summ.mean[i]), "sd": float(summ.sd[i]),
             "q025": float(summ.q025[i]), "q50": float(summ.q50[i]), "q975": float(summ.q975[i]),
             "mcse": float(mcse[i])} for i, nm in enumerate(names)]


def pooled_chain(chains: list[ChainOutput]) -> ChainOutput:
    if len(chains) == 1:
        return chains[0]
    keys = set.intersection(*(set(c.draws) for c in chains))
    draws = {k: np.concatenate([c.draws[k] for c in chains], axis=0) for k in keys}
    c0 = chains[0]
    return ChainOutput(draws, c0.model, c0.seed, c0.config, c0.iterations, c0.burn_in, c0.thin)


def write_summaries(out: Path, chains, dataset, level: str) -> dict:
    write_rows(out / "summary.csv", parameter_rows(chains))
    pooled = pooled_chain(chains)
    areas = area_summary(pooled, dataset)
    rows = [{k: (v[i].item() if isinstance(v[i], np.generic) else v[i]) for k, v in areas.items()}
            for i in range(len(areas["area_id"]))]
    write_rows(out / "areas.csv", rows)
    comparison = compare(pooled, dataset, level=level)
    write_json(out / "comparison.json", comparison)
    return comparison


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> dict:
    t0 = time.perf_counter()
    file_cfg = read_json(args.config) if args.config else {}
    schema_dict = file_cfg.pop("schema", None)
    config = resolve_model_config(file_cfg, model_overrides(args))
    if args.naive:
        config = config.replace(measurement_error=False)
    dataset, digests, schema = load_inputs(args.data, args.adj, schema_dict, FIT_SCHEMA)
    if args.chains < 1:
        raise ConfigError("--chains must be >= 1")
    out = run_dir(args, "fit")
    t_load = time.perf_counter()

    runner = run_naive if args.naive else run_gibbs
    chains, outputs, warn = [], {}, {}
    for c in range(args.chains):
        chain = runner(config, dataset, chain_id=c)
        chains.append(chain)
        for path in chain.save(out, prefix=f"chain_{c}"):
            outputs[path.name] = sha256(path)
        for k, v in chain.warnings.items():
            warn[k] = warn.get(k, 0) + v
    t_fit = time.perf_counter()
    comparison = write_summaries(out, chains, dataset, args.level)
    manifest = {
        "command": "fit",
        "model": chains[0].model,
        "seed": config.seed,
        "chains": args.chains,
        "config": {**config.to_dict(), "r": chains[0].config["r"]},
        "schema": _schema_dict(schema),
        "inputs": digests,
        "data": {"table": list(digests)[0], "adjacency": list(digests)[1]},
        "outputs": outputs,
        "timings": {"load": t_load - t0, "fit": t_fit - t_load, "total": time.perf_counter() - t0},
        "versions": versions(),
        "warnings": [f"{k}: {v}" for k, v in sorted(warn.items())],
        "comparison": comparison,
    }
    write_json(out / "manifest.json", manifest)
    print(f"fit complete: model={manifest['model']} chains={args.chains} r={manifest['config']['r']} "
          f"waic={comparison['waic']:.4f} out={out}")
    return manifest


def load_study_spec(args) -> tuple[StudySpec, dict, dict]:
    spec_file = read_json(args.spec) if args.spec else {}
    unknown = set(spec_file) - STUDY_KEYS
    if unknown:
        raise ConfigError(f"unknown study spec key(s): {sorted(unknown)}")
    model_cfg = dict(spec_file.get("model", {}))
    bad = set(model_cfg) - set(ModelConfig.__dataclass_fields__)
    if bad:
        raise ConfigError(f"unknown study spec key(s): {sorted('model.' + b for b in bad)}")
    overrides = model_overrides(args)
    seed = overrides.pop("seed", spec_file.get("seed", 2024))
    config = resolve_model_config(model_cfg, overrides)
    base_dir = Path(args.spec).parent if args.spec else Path(".")

    def rel(p):
        return None if p is None else str(p if Path(p).is_absolute() else base_dir / p)

    data = args.data or rel(spec_file.get("data"))
    adj = args.adj or rel(spec_file.get("adj"))
    dataset, digests, schema = load_inputs(data, adj, spec_file.get("schema"))
    resolved = {
        "design": args.design or spec_file.get("design", "poisson"),
        "replicates": args.replicates if args.replicates is not None else spec_file.get("replicates", 50),
        "seed": seed,
        "min_success": spec_file.get("min_success", 0.8),
        "n_jobs": args.jobs if args.jobs is not None else spec_file.get("n_jobs", 1),
    }
    if resolved["design"] not in DESIGNS:
        raise ConfigError(f"unknown design {resolved['design']!r}; expected one of {DESIGNS}")
    spec = StudySpec(base=dataset, config=config, **resolved)
    return spec, {**resolved, "model": config.to_dict(), "schema": _schema_dict(schema)}, digests


def cmd_study(args) -> dict:
    t0 = time.perf_counter()
    spec, resolved, digests = load_study_spec(args)
    out = run_dir(args, "study")
    result = run_study(spec, progress=lambda rep: log.info("replicate %d done", rep))
    write_rows(out / "replicates.csv", result.rows)
    write_rows(out / "table.csv", result.table())
    aggregate = {"design": result.design, "r": result.r, "medians": result.medians,
                 "reductions_percent": result.reductions, "failures": result.failures,
                 "successful_replicates": spec.replicates - len(result.failures)}
    write_json(out / "aggregate.json", aggregate)
    manifest = {
        "command": "study",
        "seed": spec.seed,
        "config": resolved,
        "inputs": digests,
        "outputs": {p: sha256(out / p) for p in ("replicates.csv", "table.csv", "aggregate.json")},
        "timings": {"total": time.perf_counter() - t0},
        "versions": versions(),
        "warnings": [f"replicate {f['replicate']}: {f['error']}" for f in result.failures],
    }
    write_json(out / "manifest.json", manifest)
    for row in result.table():
        red = f" mse_reduction={row['mse_reduction']:.1f}%" if "mse_reduction" in row else ""
        print(f"{row['estimator']:8s} {row['block']:13s} r={row['r']} rmse={row['rmse']:.4g} "
              f"mse={row['mse']:.4g} abs_bias={row['abs_bias']:.4g}{red}")
    return manifest


def cmd_basis(args) -> dict:
    t0 = time.perf_counter()
    file_cfg = read_json(args.config) if args.config else {}
    schema_dict = file_cfg.get("schema")
    dataset, digests, _ = load_inputs(args.data, args.adj, schema_dict, FIT_SCHEMA)
    fractions = list(BASIS_FRACTIONS)
    if args.r_frac is not None:
        if not 0 < args.r_frac <= 1:
            raise ConfigError(f"--r-frac must lie in (0, 1], got {args.r_frac}")
        if args.r_frac not in fractions:
            fractions.append(args.r_frac)
    out = run_dir(args, "basis")
    G = mi_operator(basis_design(dataset), expand_adjacency(dataset.graph, dataset.n_blocks))
    spectrum, count = mi_spectrum(G)
    with open(out / "spectrum.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["index", "eigenvalue", "positive"])
        for i, lam in enumerate(spectrum):
            wr.writerow([i, f"{lam:.17g}", int(i < count)])
    # a spectrum without positive eigenvalues is reported, not rejected
    resolved = {f"{f:g}": resolve_r(f, count) if count else 0 for f in fractions}
    report = {"n_star": dataset.n_star, "positive_eigen_count": count, "r": resolved}
    write_json(out / "basis.json", report)
    write_json(out / "manifest.json", {
        "command": "basis", "seed": None, "config": {"fractions": fractions}, "inputs": digests,
        "outputs": {p: sha256(out / p) for p in ("spectrum.csv", "basis.json")},
        "timings": {"total": time.perf_counter() - t0}, "versions": versions(), "warnings": []})
    print(f"eigenvalues={spectrum.size} positive_eigen_count={count}")
    for f, r in resolved.items():
        print(f"fraction={f} r={r}")
    return report


def cmd_simulate(args) -> dict:
    t0 = time.perf_counter()
    schema_dict = read_json(args.config).get("schema") if args.config else None
    dataset, digests, _ = load_inputs(args.data, args.adj, schema_dict)
    seed = 2024 if args.seed is None else args.seed
    reps = 1 if args.replicates is None else args.replicates
    design = args.design or "poisson"
    spec = StudySpec(base=dataset, design=design, replicates=reps, seed=seed)
    out = run_dir(args, "simulate")
    outputs = {}
    for rep in range(reps):
        pseudo = pseudo_dataset(spec, RngStream(seed, (0, rep)))
        table, adj = out / f"pseudo_{rep}.csv", out / "adjacency.csv"
        write_dataset(pseudo, table, adj)
        outputs[table.name] = sha256(table)
    outputs["adjacency.csv"] = sha256(out / "adjacency.csv")
    write_json(out / "manifest.json", {
        "command": "simulate", "seed": seed, "config": {"design": design, "replicates": reps},
        "inputs": digests, "outputs": outputs, "timings": {"total": time.perf_counter() - t0},
        "versions": versions(), "warnings": []})
    print(f"wrote {reps} pseudo-data replicate(s) ({design}) to {out}")
    return outputs


def cmd_summarize(args) -> dict:
    run = Path(args.run)
    manifest = read_json(run / "manifest.json")
    if manifest.get("command") != "fit":
        raise ConfigError(f"{run} is not a fit run directory")
    data, adj = ((args.data, args.adj) if args.data
                 else (manifest["data"]["table"], manifest["data"]["adjacency"]))
    dataset, _, _ = load_inputs(data, adj, manifest.get("schema"))
    chains = [ChainOutput.load(run, f"chain_{c}") for c in range(manifest["chains"])]
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    comparison = write_summaries(out, chains, dataset, args.level)
    print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in comparison.items()))
    return comparison


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hgtsme", description="Spatial measurement-error small area models.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, model=True):
        p.add_argument("--data", help="area table CSV (default: bundled base table)")
        p.add_argument("--adj", help="adjacency edge list CSV")
        p.add_argument("--out", help="run directory")
        p.add_argument("--seed", type=int)
        if model:
            p.add_argument("--iterations", type=int)
            p.add_argument("--burn-in", type=int)
            p.add_argument("--thin", type=int)
            p.add_argument("--rho", type=float)
            p.add_argument("--r-frac", type=float, help="fraction of positive MI eigenvalues kept")
            p.add_argument("--r-count", type=int, help="number of basis vectors (overrides --r-frac)")

    p = sub.add_parser("fit", help="fit one dataset")
    common(p)
    p.add_argument("--config", help="JSON model config (optional 'schema' section)")
    p.add_argument("--naive", action="store_true", help="ignore covariate measurement error")
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--level", choices=LEVELS, default="marginal", help="likelihood level for DIC/WAIC")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("study", help="replicate pseudo-data study, HGT-SME vs naive")
    common(p)
    p.add_argument("--spec", help="JSON study spec")
    p.add_argument("--design", choices=DESIGNS)
    p.add_argument("--replicates", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("basis", help="MI operator spectrum and resolved r")
    common(p, model=False)
    p.add_argument("--config", help="JSON file with an optional 'schema' section")
    p.add_argument("--r-frac", type=float)
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("simulate", help="emit pseudo-data replicates")
    common(p, model=False)
    p.add_argument("--config", help="JSON file with an optional 'schema' section")
    p.add_argument("--design", choices=DESIGNS)
    p.add_argument("--replicates", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("summarize", help="re-summarise saved chains of a fit run")
    p.add_argument("--run", required=True, help="fit run directory")
    p.add_argument("--data")
    p.add_argument("--adj")
    p.add_argument("--out", help="output directory (default: the run directory)")
    p.add_argument("--level", choices=LEVELS, default="marginal")
    p.set_defaults(func=cmd_summarize)
    return ap


def error_category(exc: BaseException) -> str:
    if isinstance(exc, HgtsmeError):
        return exc.category
    if isinstance(exc, OSError):
        return "io"
    return "internal"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
        message = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error category={error_category(exc)} message={message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
