import numpy as np
import pandas as pd
import pytest
from conftest import assert_focs, max_relative_gap

from migopen import estimator, simlab
from migopen.errors import (CollinearRegressorWarning, EmptyAfterSeparation,
                            NonConvergence, SingularBread, UnknownFELevel)
from migopen.estimator import ModelSpec, clustered_covariance, detect_separation, fit_ppml


def constant_panel(c=5.0, n=9):
    return pd.DataFrame({
        "origin": [f"O{i % 3}" for i in range(n)],
        "destination": ["DDD"] * n,
        "year": [2000] * n,
        "skill": ["all"] * n,
        "stock": [c] * n,
        "pop_d": [1e6] * n,
        "contig": [0] * n,
    })


def noisy_panel(seed=0, n=120, beta=(0.8, -0.5), intercept=1.0):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n)
    x2 = rng.normal(size=n)
    mu = np.exp(intercept + beta[0] * x1 + beta[1] * x2)
    return pd.DataFrame({
        "origin": [f"O{i % 8}" for i in range(n)],
        "destination": [f"D{i % 5}" for i in range(n)],
        "year": [2000] * n,
        "skill": ["all"] * n,
        "x1": x1,
        "x2": x2,
        "stock": rng.poisson(mu).astype(float),
        "pop_d": 1e6,
        "contig": 0,
    })


NOFE_SPEC = ModelSpec(outcome="stock", regressors=("x1", "x2"), fe_dims=(),
                      cluster="origin")


class TestFitPpml:
    def test_constant_outcome_intercept_only(self):
        fit = fit_ppml(constant_panel(5.0), ModelSpec(regressors=(), fe_dims=(),
                                                      cluster="origin"))
        assert fit.coef["intercept"] == pytest.approx(np.log(5.0), abs=1e-12)
        assert np.allclose(fit.fitted, 5.0)
        assert fit.deviance == pytest.approx(0.0, abs=1e-9)
        assert fit.pseudo_r2 == pytest.approx(0.0, abs=1e-12)

    def test_seed42_world_matches_dense_oracle(self):
        params = simlab.WorldParams(n_countries=20, years=(2000, 2010, 2020), seed=42)
        panel, _ = simlab.generate_world(params)
        fit = fit_ppml(panel)
        oracle = simlab.dense_ppml_oracle(panel)
        assert list(fit.coef.index) == list(oracle.coef.index)
        assert max_relative_gap(fit.coef, oracle.coef) < 1e-6
        assert max_relative_gap(fit.se, oracle.se) < 1e-6
        assert max_relative_gap(fit.fitted, oracle.fitted) < 1e-6

    def test_outcome_scaling_shifts_intercept_only(self):
        frame = noisy_panel(seed=1)
        fit1 = fit_ppml(frame, NOFE_SPEC)
        scaled = frame.assign(stock=frame["stock"] * 7.0)
        fit2 = fit_ppml(scaled, NOFE_SPEC)
        assert fit2.coef["x1"] == pytest.approx(fit1.coef["x1"], rel=1e-8)
        assert fit2.coef["x2"] == pytest.approx(fit1.coef["x2"], rel=1e-8)
        assert fit2.coef["intercept"] - fit1.coef["intercept"] == pytest.approx(
            np.log(7.0), abs=1e-8)

    def test_regressor_translation_adjusts_intercept_only(self):
        frame = noisy_panel(seed=2)
        fit1 = fit_ppml(frame, NOFE_SPEC)
        fit2 = fit_ppml(frame.assign(x1=frame["x1"] + 3.0), NOFE_SPEC)
        assert fit2.coef["x1"] == pytest.approx(fit1.coef["x1"], rel=1e-8)
        assert fit2.coef["intercept"] == pytest.approx(
            fit1.coef["intercept"] - 3.0 * fit1.coef["x1"], abs=1e-7)

    def test_outcome_scaling_with_absorbed_fes(self, world_10x2):
        panel, _ = world_10x2
        fit1 = fit_ppml(panel)
        scaled = panel.frame.assign(stock=panel.frame["stock"] * 3.0)
        fit2 = fit_ppml(scaled)
        assert max_relative_gap(fit2.coef, fit1.coef) < 1e-7
        assert fit2.recovered_intercept - fit1.recovered_intercept == pytest.approx(
            np.log(3.0), abs=1e-7)

    def test_foc_invariants(self, fit_10x2, world_10x2):
        assert_focs(fit_10x2, world_10x2[0])

    def test_covariance_psd(self, fit_10x2):
        eig = np.linalg.eigvalsh(fit_10x2.cov.to_numpy())
        assert eig.min() >= -1e-10 * max(eig.max(), 1.0)

    def test_collinear_regressor_dropped_with_warning(self):
        frame = noisy_panel(seed=3)
        frame["x1_copy"] = frame["x1"]
        spec = ModelSpec(outcome="stock", regressors=("x1", "x1_copy", "x2"),
                         fe_dims=(), cluster="origin")
        with pytest.warns(CollinearRegressorWarning, match="x1_copy"):
            fit = fit_ppml(frame, spec)
        assert "x1_copy" not in fit.coef.index
        assert fit.collinear_dropped == ["x1_copy"]

    def test_variant_toggles(self, world_10x2):
        panel, _ = world_10x2
        fit = fit_ppml(panel, ModelSpec(drop_colonial=True, drop_land=True))
        assert "comcol" not in fit.coef.index
        assert "coldepever" not in fit.coef.index
        assert "log_land_d" not in fit.coef.index

    def test_empty_after_separation(self):
        frame = constant_panel(0.0)
        spec = ModelSpec(outcome="stock", regressors=(), fe_dims=("origin",),
                         cluster="origin")
        with pytest.raises(EmptyAfterSeparation):
            fit_ppml(frame, spec)

    def test_nonconvergence_carries_trace(self, monkeypatch):
        monkeypatch.setattr(estimator, "MAX_ITERATIONS", 1)
        with pytest.raises(NonConvergence) as err:
            fit_ppml(noisy_panel(seed=4), NOFE_SPEC)
        assert len(err.value.iteration_log) == 1

    def test_validation_errors(self):
        frame = noisy_panel(seed=5)
        with pytest.raises(ValueError, match="missing_col"):
            fit_ppml(frame, ModelSpec(outcome="stock", regressors=("missing_col",),
                                      fe_dims=(), cluster="origin"))
        bad = frame.assign(stock=frame["stock"] - 1e9)
        with pytest.raises(ValueError, match="nonnegative"):
            fit_ppml(bad, NOFE_SPEC)


class TestSeparation:
    def test_no_separating_configuration(self):
        frame = noisy_panel(seed=6)
        frame["stock"] = frame["stock"] + 1  # all positive
        mask = detect_separation(frame, NOFE_SPEC)
        assert mask.all()

    def test_dummy_on_zero_rows_masked_and_dropped(self):
        rng = np.random.default_rng(7)
        frame = noisy_panel(seed=7, n=80)
        frame["sepdum"] = 0.0
        idx = [3, 17, 33, 61]
        frame.loc[idx, "sepdum"] = 1.0
        frame.loc[idx, "stock"] = 0.0
        spec = ModelSpec(outcome="stock", regressors=("x1", "x2", "sepdum"),
                         fe_dims=(), cluster="origin")
        mask = detect_separation(frame, spec)
        assert sorted(np.flatnonzero(~mask)) == idx
        fit = fit_ppml(frame, spec)
        assert sorted(fit.separation_rows) == idx
        assert "sepdum" in fit.collinear_dropped
        assert np.all(np.isfinite(fit.coef.to_numpy()))
        # estimate on the kept rows matches dropping them up front
        direct = fit_ppml(frame.drop(index=idx).reset_index(drop=True),
                          ModelSpec(outcome="stock", regressors=("x1", "x2"),
                                    fe_dims=(), cluster="origin"))
        assert max_relative_gap(fit.coef[["x1", "x2", "intercept"]],
                                direct.coef[["x1", "x2", "intercept"]]) < 1e-8

    def test_all_zero_origin_group_masked(self):
        frame = noisy_panel(seed=8)
        frame.loc[frame["origin"] == "O2", "stock"] = 0.0
        spec = ModelSpec(outcome="stock", regressors=("x1",), fe_dims=("origin",),
                         cluster="origin")
        mask = detect_separation(frame, spec)
        assert set(frame.loc[~mask, "origin"]) == {"O2"}
        assert mask.sum() == (frame["origin"] != "O2").sum()


class TestSingletons:
    def test_singleton_group_dropped_and_reported(self):
        frame = noisy_panel(seed=9, n=60)
        extra = frame.iloc[[0]].copy()
        extra["origin"] = "OZZ"  # one-row origin group
        extra["stock"] = 4.0
        frame = pd.concat([frame, extra], ignore_index=True)
        spec = ModelSpec(outcome="stock", regressors=("x1",), fe_dims=("origin",),
                         cluster="origin")
        fit = fit_ppml(frame, spec)
        assert list(fit.singleton_rows) == [60]
        assert any(label == "OZZ" for _, label in fit.singleton_groups)
        assert fit.n_obs == 60


class TestClusteredCovariance:
    def test_own_cluster_equals_hc_with_small_sample_factor(self):
        rng = np.random.default_rng(10)
        n, k = 50, 3
        X = rng.normal(size=(n, k))
        w = rng.uniform(0.5, 2.0, size=n)
        e = rng.normal(size=n)
        clusters = np.arange(n)
        cov, bread, scores = clustered_covariance(X, w, e, clusters)
        bread_inv = np.linalg.inv(X.T @ (X * w[:, None]))
        meat = (X * e[:, None]).T @ (X * e[:, None])
        expected = bread_inv @ meat @ bread_inv * (n / (n - 1.0))
        assert np.allclose(cov, expected, rtol=1e-12, atol=1e-15)

    def test_matches_literal_formula_from_stored_scores(self, fit_10x2):
        scores = fit_10x2.cluster_scores
        bread_inv = np.linalg.inv(fit_10x2.bread)
        G = scores.shape[0]
        meat = sum(np.outer(s, s) for s in scores)
        expected = bread_inv @ meat @ bread_inv * (G / (G - 1.0))
        assert max_relative_gap(np.diag(fit_10x2.cov.to_numpy()),
                                np.diag(expected)) < 1e-10

    def test_requires_two_clusters(self):
        X = np.ones((4, 1))
        with pytest.raises(ValueError, match="2 clusters"):
            clustered_covariance(X, np.ones(4), np.ones(4), np.zeros(4, dtype=int))

    def test_singular_bread(self):
        X = np.column_stack([np.ones(6), np.ones(6)])
        with pytest.raises(SingularBread, match="condition"):
            clustered_covariance(X, np.ones(6), np.ones(6), np.arange(6))


class TestPredict:
    def test_in_sample_reproduces_fitted_exactly(self, fit_10x2, world_10x2):
        panel, _ = world_10x2
        kept = panel.frame.loc[fit_10x2.kept_mask].reset_index(drop=True)
        mu = estimator.predict(fit_10x2, kept)
        assert np.array_equal(mu, fit_10x2.fitted)

    def test_intercept_only_predicts_constant(self):
        fit = fit_ppml(constant_panel(3.0), ModelSpec(regressors=(), fe_dims=(),
                                                      cluster="origin"))
        mu = estimator.predict(fit, constant_panel(3.0))
        assert np.allclose(mu, 3.0)

    def test_unknown_fe_level(self, fit_10x2, world_10x2):
        panel, _ = world_10x2
        frame = panel.frame.head(4).copy()
        frame["origin_fe_key"] = "ZZZ"
        frame["origin_year_fe_key"] = "ZZZ:2000"
        with pytest.raises(UnknownFELevel):
            estimator.predict(fit_10x2, frame)


class TestFitStatistics:
    def test_null_model_pseudo_r2_zero(self):
        frame = noisy_panel(seed=11)
        fit = fit_ppml(frame, ModelSpec(regressors=(), fe_dims=(), cluster="origin"))
        pseudo, wald, dev, n = estimator.fit_statistics(fit)
        assert pseudo == pytest.approx(0.0, abs=1e-12)
        assert np.isnan(wald)
        assert n == len(frame)

    def test_perfect_fit_pseudo_r2_near_one(self):
        rng = np.random.default_rng(12)
        n = 150
        x = rng.normal(size=n)
        frame = pd.DataFrame({
            "origin": [f"O{i % 6}" for i in range(n)],
            "destination": ["DDD"] * n,
            "year": 2000, "skill": "all",
            "x1": x,
            "stock": np.exp(10.0 + 2.0 * x),  # exact, zero noise, large counts
            "pop_d": 1e6, "contig": 0,
        })
        fit = fit_ppml(frame, ModelSpec(outcome="stock", regressors=("x1",),
                                        fe_dims=(), cluster="origin"))
        assert fit.pseudo_r2 > 0.999
        assert fit.deviance == pytest.approx(0.0, abs=1e-5)

    def test_wald_uses_clustered_covariance(self, fit_10x2):
        slopes = [nm for nm in fit_10x2.coef.index if nm != "intercept"]
        b = fit_10x2.coef[slopes].to_numpy()
        V = fit_10x2.cov.loc[slopes, slopes].to_numpy()
        expected = float(b @ np.linalg.solve(V, b))
        assert fit_10x2.wald_chi2 == pytest.approx(expected, rel=1e-10)
        assert fit_10x2.wald_df == len(slopes)


def test_fit_to_dict_shape(fit_10x2):
    d = estimator.fit_to_dict(fit_10x2)
    assert d["schema_version"] == 1
    assert {row["name"] for row in d["coefficients"]} >= {"log_dist", "contig"}
    assert d["statistics"]["n_obs"] == fit_10x2.n_obs
    assert d["statistics"]["converged"] is True
    assert len(d["iteration_log"]) == fit_10x2.n_iterations
    constant = [r for r in d["coefficients"] if r["name"] == "constant_recovered"]
    assert constant and constant[0]["se"] is None
