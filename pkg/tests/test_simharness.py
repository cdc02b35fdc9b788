import dataclasses

import numpy as np
import pytest

from hgtsme import simharness
from hgtsme.areal import lattice_graph
from hgtsme.errors import DomainError, NumericalError
from hgtsme.sampler import ModelConfig
from hgtsme.simharness import (StudyError, StudySpec, TruthSpec, _aggregate, gen_gaussian_pseudo, gen_poisson_pseudo,
                               gen_synthetic_truth, load_base_table, run_study)
from hgtsme.spatial import morans_i
from hgtsme.stochastics import RngStream

N5 = 10**5


def test_poisson_pseudo(rng):
    assert gen_poisson_pseudo(np.zeros(N5), rng).mean() == pytest.approx(1.0, abs=0.01)
    assert gen_poisson_pseudo(np.full(N5, 99.0), rng).mean() == pytest.approx(100.0, abs=0.1)
    a = gen_poisson_pseudo(np.arange(10.0), RngStream(3))
    assert np.array_equal(a, gen_poisson_pseudo(np.arange(10.0), RngStream(3)))
    with pytest.raises(DomainError):
        gen_poisson_pseudo(np.array([-1.0]), rng)


def test_gaussian_pseudo(rng):
    z = gen_gaussian_pseudo(np.full(N5, np.e), rng)
    assert z.mean() == pytest.approx(1.0, abs=0.01)
    assert z.var() == pytest.approx(1.0, abs=0.02)
    assert np.array_equal(gen_gaussian_pseudo(np.ones(4), RngStream(3)), gen_gaussian_pseudo(np.ones(4), RngStream(3)))
    with pytest.raises(DomainError):
        gen_gaussian_pseudo(np.array([0.0]), rng)


def test_truth_noise_free_limit():
    spec = TruthSpec(tau2=0.0, sigma2_xi=0.0, delta=(1.0, 0.5))
    ds, t = gen_synthetic_truth(lattice_graph(5, 5), spec, RngStream(1))
    assert np.allclose(t["h"], t["W"] @ t["beta"] + t["S"] @ t["delta"] + t["M"] @ t["eta"], atol=1e-12)
    assert ds.n_areas == 25 and ds.p == 1 and ds.q == 2


def test_truth_measurement_error_variance():
    g = lattice_graph(10, 10)
    diffs = []
    for k in range(40):
        _, t = gen_synthetic_truth(g, TruthSpec(me_variance=0.25), RngStream(2, (k,)))
        diffs.append(t["X"][:, 0] - t["W"][:, 0])
    d = np.concatenate(diffs)
    assert d.var() == pytest.approx(0.25, abs=4 * 0.25 * np.sqrt(2 / d.size))


def test_truth_w_is_spatially_correlated():
    g = lattice_graph(10, 10)
    positive = sum(morans_i(gen_synthetic_truth(g, TruthSpec(), RngStream(9, (k,)))[1]["W"][:, 0], g) > 0
                   for k in range(100))
    assert positive >= 95


def test_truth_response_kinds():
    ds, _ = gen_synthetic_truth(lattice_graph(4, 4), TruthSpec(kinds=("gaussian", "poisson", "binomial"),
                                                               delta=(0.5, 0.2)), RngStream(4))
    assert [b.kind for b in ds.responses] == ["gaussian", "poisson", "binomial"]
    assert ds.n_star == 48


def test_base_table():
    base = load_base_table()
    assert base.n_areas == 175
    pov = base.responses[1].values
    assert pov.min() >= 1e2 and pov.max() <= 1e5
    assert morans_i(base.X()[:, 0], base.graph) > 0


SMALL = ModelConfig(iterations=300, burn_in=150)


def test_single_replicate_median_is_the_replicate():
    res = run_study(StudySpec(load_base_table(), "poisson", replicates=1, config=SMALL))
    rows = {r["model"]: r for r in res.rows}
    for model in ("naive", "hgt-sme"):
        for k in ("rmse", "mse", "mae"):
            assert res.medians[model]["poverty"][k] == rows[model][k]
    assert res.r == 67
    table = res.table()
    assert {r["estimator"] for r in table} == {"naive", "hgt-sme"}
    assert "mse_reduction" in [r for r in table if r["estimator"] == "hgt-sme"][0]


def test_study_deterministic_and_order_invariant():
    spec = StudySpec(load_base_table(), "gaussian+poisson", replicates=2, config=SMALL.replace(iterations=200, burn_in=100))
    a, b = run_study(spec), run_study(spec)
    assert a.rows == b.rows
    assert _aggregate(list(reversed(a.rows))) == _aggregate(a.rows)
    assert {r["block"] for r in a.rows} == {"housing_cost", "poverty"}


def test_failed_replicates(monkeypatch):
    real = simharness._replicate

    def flaky(spec, rep, basis):
        if rep in bad:
            raise NumericalError("forced failure")
        return real(spec, rep, basis)

    monkeypatch.setattr(simharness, "_replicate", flaky)
    spec = StudySpec(load_base_table(), "poisson", replicates=5, config=SMALL.replace(iterations=100, burn_in=50))
    bad = {3}
    res = run_study(spec)
    assert [f["replicate"] for f in res.failures] == [3]
    assert len(res.rows) == 8
    bad = {1, 3}
    with pytest.raises(StudyError):
        run_study(spec)


def test_no_error_generation_makes_models_agree():
    base = load_base_table()
    exact = base.with_error_prone([dataclasses.replace(c, me_variances=np.full(base.n_areas, 1e-12))
                                   for c in base.error_prone])
    res = run_study(StudySpec(exact, "poisson", replicates=3, config=ModelConfig(iterations=1500, burn_in=500)))
    spread = np.std([r["mse"] for r in res.rows if r["model"] == "naive"])
    diff = abs(res.medians["naive"]["poverty"]["mse"] - res.medians["hgt-sme"]["poverty"]["mse"])
    assert diff < max(spread, 0.05 * res.medians["naive"]["poverty"]["mse"])


def test_study_spec_validation():
    with pytest.raises(DomainError):
        StudySpec(load_base_table(), "binomial")
    with pytest.raises(DomainError):
        StudySpec(load_base_table(), replicates=0)
