"""End-to-end smoke tests for the Python bindings."""

import math

import pytest

import semirep


def small_fit(n=40, seed=3):
    data = semirep.generate_dataset(n=n, m=2, R=2, beta=[1.0, 1.0], rho=0.3, seed=seed)
    fit = semirep.fit(data, h=0.25, max_outer=300)
    return data, fit


def test_dataset_generation_and_roundtrip(tmp_path):
    data = semirep.generate_dataset(n=30, m=2, R=3, seed=11)
    assert (data.n(), data.m, data.R, data.p, data.q()) == (30, 2, 3, 2, 6)
    assert data.n_observed() == 30

    path = tmp_path / "data.csv"
    semirep.write_dataset(str(path), data)
    loaded = semirep.load_dataset(str(path))
    assert (loaded.n(), loaded.m, loaded.R, loaded.p) == (30, 2, 3, 2)

    # Full-precision CSV: writing the reloaded dataset reproduces the bytes.
    path2 = tmp_path / "data2.csv"
    semirep.write_dataset(str(path2), loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_generation_is_deterministic(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    semirep.write_dataset(str(a), semirep.generate_dataset(n=20, seed=7))
    semirep.write_dataset(str(b), semirep.generate_dataset(n=20, seed=7))
    assert a.read_bytes() == b.read_bytes()
    semirep.write_dataset(str(b), semirep.generate_dataset(n=20, seed=8))
    assert a.read_bytes() != b.read_bytes()


def test_fit_and_plug_in_summary():
    data, fit = small_fit()
    assert fit.converged
    assert fit.h == 0.25
    assert not fit.bandwidth_selected
    assert len(fit.params.beta) == 2
    assert all(abs(b - 1.0) < 1.0 for b in fit.params.beta)
    assert 0.0 < fit.params.sigma2 < 5.0
    assert -0.2 < fit.params.rho < 0.9
    assert math.isfinite(fit.theta(0.5))

    est = semirep.kappa_semi(data, fit, "survival", threshold=1.0, fixed=[(0, 0.5)])
    assert 0.0 < est.kappa < 1.0
    assert est.n_used == data.n()
    assert est.method == "semi"

    report = semirep.plug_in_variance(data, fit, "survival", threshold=1.0, fixed=[(0, 0.5)])
    assert report["variance"] > 0.0
    assert report["variance_of_estimate"] == pytest.approx(report["variance"] / data.n())
    assert report["g_residual"] < 1e-6


def test_missing_data_estimators_agree_loosely():
    data = semirep.generate_dataset(
        n=150, m=2, R=2, missingness="mcar", keep_prob=0.7, seed=5
    )
    assert data.n_observed() < data.n()
    fit = semirep.fit(data, h=0.2, max_outer=300)
    k1 = semirep.kappa_imputed(data, fit, "survival", threshold=1.0)
    k2 = semirep.kappa_ipw(data, fit, "survival", threshold=1.0)
    assert 0.0 < k1.kappa < 1.0
    assert 0.0 < k2.kappa < 1.0
    assert abs(k1.kappa - k2.kappa) < 0.15
    assert k2.variance > 0.0 and k2.ci_lo < k2.kappa < k2.ci_hi


def test_bootstrap_smoke():
    data, fit = small_fit(n=25, seed=9)
    boot = semirep.bootstrap_kappa(
        data, fit, "survival", threshold=1.0, replicates=50, seed=2, threads=2
    )
    assert boot.attempted == 50
    assert len(boot.replicates) + boot.failures == 50
    assert boot.variance > 0.0
    assert boot.ci_lo <= boot.ci_hi


def test_true_kappa_matches_frozen_value():
    value = semirep.true_kappa("survival", threshold=1.0, fixed=[(0, 0.5)])
    assert value == pytest.approx(0.49061191888238104, abs=1e-9)


def test_family_survey_generator():
    data = semirep.generate_family_survey(seed=4)
    assert (data.n(), data.m, data.R, data.p) == (68, 2, 4, 4)


def test_errors_map_to_python_exceptions(tmp_path):
    with pytest.raises(ValueError):
        semirep.load_dataset(str(tmp_path / "missing.csv"))
    data, fit = small_fit(n=20, seed=1)
    with pytest.raises(ValueError):
        semirep.bootstrap_kappa(data, fit, replicates=10)  # below the minimum
    with pytest.raises(ValueError):
        semirep.generate_dataset(n=10, missingness="sometimes")
