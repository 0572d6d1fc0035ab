import numpy as np
import pandas as pd
import pytest

from migopen import analysis
from migopen.errors import InsufficientData, MissingColumn, RankDeficient
from migopen.ingest import IndicatorTable


def ols_normal_equations(X, y):
    return np.linalg.solve(X.T @ X, X.T @ y)


def hc1_literal(X, y, beta):
    n, k = X.shape
    e = y - X @ beta
    xtx_inv = np.linalg.inv(X.T @ X)
    meat = np.zeros((k, k))
    for i in range(n):
        meat += e[i] ** 2 * np.outer(X[i], X[i])
    return xtx_inv @ meat @ xtx_inv * (n / (n - k))


class TestPearsonCorrelations:
    def test_perfect_linearity(self):
        panel = pd.DataFrame({"a": [1.0, 2.0, 3.0], "b": [2.0, 4.0, 6.0]})
        res = analysis.pearson_correlations(panel, ["a", "b"])
        assert res.r.loc["a", "b"] == pytest.approx(1.0)
        assert res.r.loc["a", "a"] == 1.0
        assert res.n.loc["a", "b"] == 3

    def test_pairwise_complete_counts(self):
        panel = pd.DataFrame({
            "a": [1.0, 2.0, 3.0, 4.0, np.nan],
            "b": [2.0, 1.0, 4.0, np.nan, 5.0],
            "c": [1.0, 5.0, 2.0, 3.0, 4.0],
        })
        res = analysis.pearson_correlations(panel, ["a", "b", "c"])
        assert res.n.loc["a", "b"] == 3
        assert res.n.loc["a", "c"] == 4
        assert np.allclose(res.r.to_numpy(), res.r.to_numpy().T)
        assert (np.abs(res.r.to_numpy()) <= 1.0 + 1e-12).all()

    def test_insufficient_data(self):
        panel = pd.DataFrame({"a": [1.0, np.nan, 3.0], "b": [np.nan, 2.0, np.nan]})
        with pytest.raises(InsufficientData):
            analysis.pearson_correlations(panel, ["a", "b"])

    def test_long_form(self):
        rng = np.random.default_rng(0)
        panel = pd.DataFrame(rng.normal(size=(30, 3)), columns=["a", "b", "c"])
        res = analysis.pearson_correlations(panel, ["a", "b", "c"])
        long = res.long_form()
        assert list(long.columns) == ["var_a", "var_b", "r", "n", "significant_5pct"]
        assert len(long) == 3


class TestBuildFdDataset:
    def indicators(self, rows):
        frame = pd.DataFrame(rows, columns=["country", "year", "pop", "gdp_pc_ppp",
                                            "land_km2", "old_dep_ratio", "wage_proxy",
                                            "region"])
        return IndicatorTable(frame=frame, digest="x")

    def records(self, rows):
        return pd.DataFrame(rows, columns=["destination", "year", "diversity"])

    def test_single_year_country_contributes_nothing(self):
        ind = self.indicators([("AAA", 2010, 1e6, 2e4, 1e5, 20.0, 5e4, "R1")])
        rec = self.records([("AAA", 2010, 5)])
        fd = analysis.build_fd_dataset(ind, rec)
        assert fd.frame.empty

    def test_hand_computed_differences(self):
        ind = self.indicators([
            ("AAA", 2000, 1e6, 20000.0, 1e5, 20.0, 50000.0, "R1"),
            ("AAA", 2010, 1e6, 25000.0, 1e5, 24.5, 60000.0, "R1"),
            ("AAA", 2020, 1e6, 30000.0, 1e5, 30.0, 66000.0, "R1"),
        ])
        rec = self.records([("AAA", 2000, 3), ("AAA", 2010, 7), ("AAA", 2020, 6)])
        fd = analysis.build_fd_dataset(ind, rec)
        assert len(fd.frame) == 2
        first = fd.frame[fd.frame["period"] == "2000-2010"].iloc[0]
        assert first["delta_old"] == pytest.approx(4.5)
        assert first["delta_open"] == pytest.approx(4.0)
        assert first["open_lag"] == 3.0
        assert first["delta_lnw"] == pytest.approx(np.log(60000.0) - np.log(50000.0))
        assert first["lngdppc_lag"] == pytest.approx(np.log(20000.0))
        assert first["dummy_2020"] == 0.0
        second = fd.frame[fd.frame["period"] == "2010-2020"].iloc[0]
        assert second["dummy_2020"] == 1.0
        assert fd.counts["aging_complete"] == 2

    def test_openness_gap_blocks_row(self):
        ind = self.indicators([
            ("AAA", 2000, 1e6, 2e4, 1e5, 20.0, 5e4, "R1"),
            ("AAA", 2010, 1e6, 2e4, 1e5, 22.0, 5e4, "R1"),
        ])
        rec = self.records([("AAA", 2010, 5)])  # nothing in 2000
        fd = analysis.build_fd_dataset(ind, rec)
        assert fd.frame.empty


class TestOlsHcRobust:
    def test_exact_linear_fit(self):
        x = np.arange(10, dtype=float)
        frame = pd.DataFrame({"y": 2.0 * x + 1.0, "x": x})
        res = analysis.ols_hc_robust(frame, "y", ["x"])
        assert res.r2 == pytest.approx(1.0)
        table = res.table.set_index("name")
        assert table.loc["x", "estimate"] == pytest.approx(2.0)
        assert table.loc["const", "estimate"] == pytest.approx(1.0)
        assert table.loc["x", "se"] == pytest.approx(0.0, abs=1e-10)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_normal_equations_and_hc1(self, seed):
        rng = np.random.default_rng(seed)
        n = 60
        frame = pd.DataFrame({
            "x1": rng.normal(size=n),
            "x2": rng.normal(size=n),
        })
        frame["y"] = 1.0 + 0.5 * frame["x1"] - 1.5 * frame["x2"] \
            + rng.normal(size=n) * (1 + frame["x1"].abs())
        res = analysis.ols_hc_robust(frame, "y", ["x1", "x2"])
        X = np.column_stack([frame["x1"], frame["x2"], np.ones(n)])
        beta = ols_normal_equations(X, frame["y"].to_numpy())
        assert np.allclose(res.table["estimate"].to_numpy(), beta, rtol=1e-10)
        cov = hc1_literal(X, frame["y"].to_numpy(), beta)
        assert np.allclose(res.table["se"].to_numpy(), np.sqrt(np.diag(cov)),
                           rtol=1e-10)
        assert res.adj_r2 <= res.r2

    def test_rank_deficient_names_column(self):
        frame = pd.DataFrame({"y": [1.0, 2.0, 3.0, 4.0], "x1": [1.0, 2.0, 3.0, 4.0]})
        frame["x1_dup"] = frame["x1"]
        with pytest.raises(RankDeficient, match="x1_dup"):
            analysis.ols_hc_robust(frame, "y", ["x1", "x1_dup"])

    def test_listwise_deletion(self):
        frame = pd.DataFrame({"y": [1.0, 2.0, np.nan, 4.0, 2.0, 0.5],
                              "x": [1.0, np.nan, 3.0, 4.0, 1.0, 2.0]})
        res = analysis.ols_hc_robust(frame, "y", ["x"])
        assert res.n_obs == 4


class TestNestedRegressions:
    def synthetic_fd(self, seed=0, n=120):
        rng = np.random.default_rng(seed)
        half = n // 2
        frame = pd.DataFrame({
            "destination": [f"C{i:03d}" for i in range(n)],
            "period": ["2000-2010"] * half + ["2010-2020"] * (n - half),
            "delta_open": rng.normal(size=n),
            "open_lag": rng.integers(0, 30, size=n).astype(float),
            "old_lag": rng.uniform(5, 35, size=n),
            "lnw_lag": rng.normal(10, 0.5, size=n),
            "lngdppc_lag": rng.normal(9.5, 1.0, size=n),
        })
        frame["dummy_2020"] = (frame["period"] == "2010-2020").astype(float)
        frame["delta_old"] = (0.2 * frame["old_lag"] - 0.1 * frame["delta_open"]
                              + rng.normal(size=n))
        frame["delta_lnw"] = (-0.1 * frame["lnw_lag"] - 0.01 * frame["delta_open"]
                              + rng.normal(size=n) * 0.1)
        return analysis.FDDataset(frame=frame, counts={"dummy_columns": ["dummy_2020"]})

    def test_three_columns_common_sample_monotone_r2(self):
        fd = self.synthetic_fd()
        runs = analysis.nested_fd_regressions(fd, "delta_old")
        assert len(runs) == 3
        assert len({r.n_obs for r in runs}) == 1
        assert runs[0].r2 <= runs[1].r2 + 1e-12 <= runs[2].r2 + 1e-12
        names = runs[2].table["name"].tolist()
        assert names[:2] == ["delta_open", "open_lag"]

    def test_wage_outcome_regressors(self):
        fd = self.synthetic_fd(seed=1)
        runs = analysis.nested_fd_regressions(fd, "delta_lnw")
        assert "lnw_lag" in runs[0].table["name"].tolist()
        assert "lngdppc_lag" not in runs[0].table["name"].tolist()

    def test_null_effect_size_calibration(self):
        # Outcome unrelated to openness: the delta_open t-test should reject
        # at close to the nominal 5% rate.
        rejections = 0
        trials = 200
        for seed in range(trials):
            rng = np.random.default_rng(seed + 10_000)
            n = 100
            frame = pd.DataFrame({
                "delta_open": rng.normal(size=n),
                "open_lag": rng.normal(size=n),
                "z": rng.normal(size=n),
            })
            frame["y"] = 0.5 * frame["z"] + rng.normal(size=n)
            res = analysis.ols_hc_robust(frame, "y", ["delta_open", "open_lag", "z"])
            p = res.table.set_index("name").loc["delta_open", "p"]
            rejections += p < 0.05
        assert rejections / trials < 0.12

    def test_regressions_to_dict(self):
        fd = self.synthetic_fd(seed=2)
        out = analysis.regressions_to_dict({
            "aging": analysis.nested_fd_regressions(fd, "delta_old")})
        assert out["schema_version"] == 1
        assert set(out["aging"]) == {"column_1", "column_2", "column_3"}
        col3 = out["aging"]["column_3"]
        assert {c["name"] for c in col3["coefficients"]} >= {"delta_open", "const"}


class TestExternalMeasures:
    def test_loader_and_measure_panel(self, tmp_path):
        path = tmp_path / "external.csv"
        path.write_text("country,year,visa_do,visa_od,mai,mai_rank,mipex\n"
                        "AAA,2010,12,30,5.2,17,61.5\n"
                        "BBB,2010,,,,,\n")
        ext = analysis.load_external_measures(path)
        assert len(ext) == 2
        assert np.isnan(ext.loc[1, "mipex"])
        records = pd.DataFrame({
            "destination": ["AAA", "BBB"], "year": [2010, 2010],
            "diversity": [4, 0], "scale_all": [0.1, -0.2],
            "scale_excl_contig": [0.05, -0.1],
        })
        panel = analysis.measure_panel(records, ext)
        assert panel.loc[panel["destination"] == "AAA", "visa_od"].iloc[0] == 30
        assert np.isnan(panel.loc[panel["destination"] == "BBB", "mai"].iloc[0])

    def test_missing_column(self, tmp_path):
        path = tmp_path / "external.csv"
        path.write_text("country,year,visa_do\nAAA,2010,3\n")
        with pytest.raises(MissingColumn):
            analysis.load_external_measures(path)
