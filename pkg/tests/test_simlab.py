import json

import numpy as np
import pandas as pd
import pytest
from conftest import assert_focs, max_relative_gap

from migopen import estimator, ingest, openness, simlab
from migopen.errors import TooLargeForDense
from migopen.estimator import ModelSpec, fit_ppml
from migopen.simlab import OpennessShock, WorldParams


class TestGenerateWorld:
    def test_determinism_byte_identical(self):
        params = WorldParams(n_countries=7, years=(2000, 2010), seed=7)
        panel_a, truth_a = simlab.generate_world(params)
        panel_b, truth_b = simlab.generate_world(params)
        assert panel_a.frame.to_csv(index=False) == panel_b.frame.to_csv(index=False)
        assert truth_a.mu.equals(truth_b.mu)
        assert truth_a.fe_origin == truth_b.fe_origin

    def test_combinatorics(self):
        panel, _ = simlab.generate_world(WorldParams(n_countries=3, years=(2000,), seed=1))
        assert len(panel.frame) == 6

    def test_zero_inflation_knob(self):
        params = WorldParams(n_countries=15, years=(2000, 2010), seed=2,
                             target_zero_share=0.78)
        panel, _ = simlab.generate_world(params)
        share = (panel.frame["stock"] == 0).mean()
        assert share >= 0.70

    def test_truth_mu_recomputable(self):
        params = WorldParams(n_countries=5, years=(2000,), seed=3, shocks=())
        panel, truth = simlab.generate_world(params)
        frame = panel.frame
        mu = truth.mu.set_index(["origin", "destination", "year"])["mu"]
        beta = truth.beta
        for i in [0, 5, 11]:
            row = frame.iloc[i]
            eta = (truth.intercept + truth.zero_shift
                   + beta["log_pop_d"] * row["log_pop_d"]
                   + beta["log_gdppc_d"] * row["log_gdppc_d"]
                   + beta["log_dist"] * row["log_dist"]
                   + beta["contig"] * row["contig"]
                   + beta["comlang"] * row["comlang"]
                   + beta["comcol"] * row["comcol"]
                   + beta["coldepever"] * row["coldepever"]
                   + beta["log_land_d"] * row["log_land_d"]
                   + truth.fe_origin[row["origin"]]
                   + truth.fe_year[row["year"]]
                   + truth.fe_origin_year[f"{row['origin']}:{row['year']}"])
            assert mu[(row["origin"], row["destination"], row["year"])] == \
                pytest.approx(np.exp(eta), rel=1e-10)

    def test_shock_leaves_base_draws_unchanged(self):
        base = dict(n_countries=10, years=(2000,), seed=5)
        p0, _ = simlab.generate_world(WorldParams(**base))
        shock = OpennessShock("AAB", ("AAC", "AAD"), 200.0)
        p1, _ = simlab.generate_world(WorldParams(**base, shocks=(shock,)))
        hit = (p1.frame["destination"] == "AAB") & p1.frame["origin"].isin(["AAC", "AAD"])
        assert p0.frame.loc[~hit, "stock"].equals(p1.frame.loc[~hit, "stock"])
        assert (p1.frame.loc[hit, "stock"] >= p0.frame.loc[hit, "stock"]).all()

    def test_unknown_shock_country_rejected(self):
        with pytest.raises(ValueError, match="unknown country"):
            simlab.generate_world(WorldParams(
                n_countries=5, years=(2000,), seed=0,
                shocks=(OpennessShock("ZZZ", ("AAB",), 100.0),)))

    def test_params_validation(self):
        with pytest.raises(ValueError):
            WorldParams(n_countries=2)
        with pytest.raises(ValueError):
            WorldParams(target_zero_share=1.5)

    def test_skill_split_tables_sum(self):
        params = WorldParams(n_countries=6, years=(2000,), seed=11)
        stocks, _, _ = simlab.world_tables(params, skill_split=True)
        frame = stocks.frame
        wide = frame.pivot_table(index=["origin", "destination", "year"],
                                 columns="skill", values="stock")
        assert np.allclose(wide["tertiary"] + wide["nontertiary"], wide["all"])
        assert (wide["tertiary"] >= 0).all() and (wide["nontertiary"] >= 0).all()

    def test_input_tables_round_trip(self, tmp_path):
        params = WorldParams(n_countries=6, years=(2000, 2010), seed=12)
        paths = simlab.write_world_inputs(params, tmp_path, include_external=True)
        stocks = ingest.load_stock_table(paths["stocks"])
        dyads = ingest.load_dyad_table(paths["dyads"])
        countries = ingest.load_indicator_table(paths["countries"])
        rebuilt = ingest.build_panel(stocks, dyads, countries,
                                     ingest.PanelFilter(min_population=0.0))
        direct, _ = simlab.generate_world(params)
        pd.testing.assert_frame_equal(rebuilt.frame, direct.frame)


class TestDenseOracle:
    def test_intercept_only_constant(self):
        frame = pd.DataFrame({
            "origin": ["O0", "O1", "O2"] * 3, "destination": ["DDD"] * 9,
            "year": 2000, "skill": "all", "stock": 4.0, "pop_d": 1e6, "contig": 0,
        })
        spec = ModelSpec(regressors=(), fe_dims=(), cluster="origin")
        oracle = simlab.dense_ppml_oracle(frame, spec)
        assert oracle.coef["intercept"] == pytest.approx(np.log(4.0), abs=1e-10)

    def test_statistical_recovery_seed42(self):
        params = WorldParams(n_countries=20, years=(2000, 2010, 2020), seed=42)
        panel, truth = simlab.generate_world(params)
        oracle = simlab.dense_ppml_oracle(panel)
        for name, true_val in truth.beta.items():
            if name not in oracle.coef.index:
                continue
            est_val = float(oracle.coef[name])
            se = float(oracle.se[name])
            assert abs(est_val - true_val) < 3.0 * se, (name, est_val, true_val, se)

    def test_agreement_with_fit_ppml(self):
        params = WorldParams(n_countries=12, years=(2000, 2010), seed=8)
        panel, _ = simlab.generate_world(params)
        fit = fit_ppml(panel)
        oracle = simlab.dense_ppml_oracle(panel)
        assert max_relative_gap(fit.coef, oracle.coef) < 1e-6
        assert max_relative_gap(fit.fitted, oracle.fitted) < 1e-6

    def test_dense_guard(self):
        rng = np.random.default_rng(0)
        n = 1200
        frame = pd.DataFrame({
            "origin": [f"O{i % 600:03d}" for i in range(n)],
            "destination": [f"D{i % 2}" for i in range(n)],
            "year": 2000, "skill": "all",
            "x1": rng.normal(size=n),
            "stock": rng.poisson(3.0, size=n).astype(float),
            "pop_d": 1e6, "contig": 0,
        })
        spec = ModelSpec(outcome="stock", regressors=("x1",), fe_dims=("origin",),
                         cluster="origin")
        with pytest.raises(TooLargeForDense):
            simlab.dense_ppml_oracle(frame, spec)


class TestRecountOracle:
    def test_empty_matrix(self):
        rm = openness.ResidualMatrix(frame=pd.DataFrame(
            columns=["origin", "destination", "year", "skill", "actual", "fitted",
                     "residual", "pop_d", "contig"]))
        assert simlab.recount_diversity_oracle(rm, 10.0) == {}

    def test_single_positive_above_threshold(self):
        frame = pd.DataFrame([{"origin": "AAA", "destination": "DDD", "year": 2000,
                               "skill": "all", "actual": 100.0, "fitted": 1.0,
                               "residual": 99.0, "pop_d": 1e6, "contig": 0}])
        counts = simlab.recount_diversity_oracle(openness.ResidualMatrix(frame=frame), 10.0)
        assert counts == {("DDD", 2000, "all"): 1}


class TestShockVisibility:
    def test_shock_raises_diversity_by_k(self):
        base = dict(n_countries=40, years=(2000, 2010, 2020), target_zero_share=0.35)
        k = 4
        deltas = []
        for seed in range(3):
            tables = simlab.world_tables(WorldParams(**base, seed=seed))
            pops = tables[2].frame.groupby("country")["pop"].mean().sort_values()
            dest = pops.index[len(pops) // 4]
            origins = tuple(c for c in pops.index[-8:] if c != dest)[:k]
            shock = OpennessShock(dest, origins, 60.0)

            def diversity(params):
                panel, _ = simlab.generate_world(params)
                fit = fit_ppml(panel)
                rm = openness.residual_matrix(fit, panel)
                out = openness.diversity_openness(rm, 10.0)
                return out.set_index(["destination", "year"])["diversity"], fit, panel

            d0, _, _ = diversity(WorldParams(**base, seed=seed))
            d1, fit1, panel1 = diversity(WorldParams(**base, seed=seed, shocks=(shock,)))
            assert_focs(fit1, panel1)
            deltas.extend(int(d1[(dest, y)] - d0[(dest, y)])
                          for y in (2000, 2010, 2020))
        assert np.mean(deltas) == pytest.approx(k, abs=0.5)
        assert all(d >= k - 1 for d in deltas)


def test_truth_to_dict_round_trip():
    params = WorldParams(n_countries=5, years=(2000,), seed=13,
                         shocks=(OpennessShock("AAB", ("AAC",), 50.0),))
    _, truth = simlab.generate_world(params)
    blob = json.dumps(simlab.truth_to_dict(truth))
    back = json.loads(blob)
    assert back["beta"]["log_dist"] == truth.beta["log_dist"]
    assert back["shocks"][0]["destination"] == "AAB"
    assert len(back["mu"]["value"]) == len(truth.mu)
