"""Validation layer: correlations with external indices and first-difference
regressions of aging and wage outcomes on openness changes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from ._io import SCHEMA_VERSION
from .errors import InsufficientData, RankDeficient
from .ingest import _numeric, _int_year, _iso3, _no_duplicates, _read_raw

EXTERNAL_COLUMNS = ["country", "year", "visa_do", "visa_od", "mai", "mai_rank", "mipex"]
MEASURE_COLUMNS = ["diversity", "scale_all", "scale_excl_contig",
                   "visa_do", "visa_od", "mai", "mai_rank", "mipex"]


def load_external_measures(path) -> pd.DataFrame:
    """Pre-built external openness/integration indices, consumed as-is."""
    raw, _ = _read_raw(path, EXTERNAL_COLUMNS, "external_measures")
    frame = pd.DataFrame({
        "country": _iso3(raw["country"], "external_measures", "country"),
        "year": _int_year(raw["year"], "external_measures"),
    })
    for col in EXTERNAL_COLUMNS[2:]:
        frame[col] = _numeric(raw[col], "external_measures", col, nullable=True)
    _no_duplicates(frame, ["country", "year"], "external_measures")
    return frame


def measure_panel(records: pd.DataFrame, external: pd.DataFrame | None = None) -> pd.DataFrame:
    """One row per destination-year: own measures plus external index columns."""
    panel = records[["destination", "year", "diversity", "scale_all",
                     "scale_excl_contig"]].copy()
    if external is not None:
        panel = panel.merge(external.rename(columns={"country": "destination"}),
                            on=["destination", "year"], how="left")
    else:
        for col in EXTERNAL_COLUMNS[2:]:
            panel[col] = np.nan
    return panel.sort_values(["destination", "year"], kind="mergesort").reset_index(drop=True)


@dataclass
class CorrelationResult:
    r: pd.DataFrame
    n: pd.DataFrame
    p: pd.DataFrame

    def long_form(self) -> pd.DataFrame:
        cols = list(self.r.columns)
        rows = []
        for i, a in enumerate(cols):
            for b in cols[i + 1:]:
                rows.append({"var_a": a, "var_b": b,
                             "r": self.r.loc[a, b], "n": int(self.n.loc[a, b]),
                             "significant_5pct": bool(self.p.loc[a, b] < 0.05)})
        return pd.DataFrame(rows, columns=["var_a", "var_b", "r", "n", "significant_5pct"])


def pearson_correlations(panel: pd.DataFrame, columns: list) -> CorrelationResult:
    """Pairwise-complete Pearson correlations with per-pair n and p-values."""
    if len(columns) < 2:
        raise ValueError("need at least two columns")
    k = len(columns)
    r = np.eye(k)
    n = np.zeros((k, k), dtype=int)
    p = np.zeros((k, k))
    for i in range(k):
        n[i, i] = int(panel[columns[i]].notna().sum())
    for i in range(k):
        for j in range(i + 1, k):
            sub = panel[[columns[i], columns[j]]].dropna()
            m = len(sub)
            if m < 3:
                raise InsufficientData(
                    f"only {m} pairwise-complete rows for ({columns[i]}, {columns[j]})")
            rho = float(np.corrcoef(sub[columns[i]], sub[columns[j]])[0, 1])
            if abs(rho) >= 1.0:
                pval = 0.0
            else:
                t = rho * np.sqrt((m - 2) / (1.0 - rho * rho))
                pval = float(2.0 * stats.t.sf(abs(t), m - 2))
            r[i, j] = r[j, i] = rho
            n[i, j] = n[j, i] = m
            p[i, j] = p[j, i] = pval
    idx = list(columns)
    return CorrelationResult(r=pd.DataFrame(r, index=idx, columns=idx),
                             n=pd.DataFrame(n, index=idx, columns=idx),
                             p=pd.DataFrame(p, index=idx, columns=idx))


@dataclass
class FDDataset:
    frame: pd.DataFrame
    counts: dict


def build_fd_dataset(indicators, records: pd.DataFrame) -> FDDataset:
    """Decadal first differences with lagged levels.

    A destination contributes a period row only when its openness is observed
    at both endpoints; indicator gaps stay as nulls for listwise handling in
    the regressions.
    """
    ind = indicators.frame if hasattr(indicators, "frame") else indicators
    rec = records.dropna(subset=["diversity"])[["destination", "year", "diversity"]]
    years = sorted(rec["year"].unique())
    periods = [(y0, y1) for y0, y1 in zip(years, years[1:]) if y1 - y0 == 10]

    ind_keyed = ind.set_index(["country", "year"])

    def level(dest, year, col):
        try:
            v = ind_keyed.loc[(dest, year), col]
        except KeyError:
            return np.nan
        return float(v) if pd.notna(v) else np.nan

    rows = []
    for y0, y1 in periods:
        r0 = rec[rec["year"] == y0].set_index("destination")["diversity"]
        r1 = rec[rec["year"] == y1].set_index("destination")["diversity"]
        for dest in sorted(set(r0.index) & set(r1.index)):
            old0 = level(dest, y0, "old_dep_ratio")
            old1 = level(dest, y1, "old_dep_ratio")
            w0 = level(dest, y0, "wage_proxy")
            w1 = level(dest, y1, "wage_proxy")
            gdp0 = level(dest, y0, "gdp_pc_ppp")
            lnw0 = np.log(w0) if w0 and w0 > 0 else np.nan
            lnw1 = np.log(w1) if w1 and w1 > 0 else np.nan
            rows.append({
                "destination": dest,
                "period": f"{y0}-{y1}",
                "delta_old": old1 - old0,
                "delta_lnw": lnw1 - lnw0,
                "delta_open": float(r1[dest] - r0[dest]),
                "open_lag": float(r0[dest]),
                "old_lag": old0,
                "lnw_lag": lnw0,
                "lngdppc_lag": np.log(gdp0) if gdp0 and gdp0 > 0 else np.nan,
            })
    frame = pd.DataFrame(rows, columns=["destination", "period", "delta_old", "delta_lnw",
                                        "delta_open", "open_lag", "old_lag", "lnw_lag",
                                        "lngdppc_lag"])
    dummy_cols = []
    for y0, y1 in periods[1:]:
        col = f"dummy_{y1}"
        frame[col] = (frame["period"] == f"{y0}-{y1}").astype(float)
        dummy_cols.append(col)

    counts = {
        "rows": len(frame),
        "aging_complete": int(frame.dropna(
            subset=["delta_old", "delta_open", "open_lag", "old_lag", "lngdppc_lag"]).shape[0]),
        "wages_complete": int(frame.dropna(
            subset=["delta_lnw", "delta_open", "open_lag", "lnw_lag", "old_lag"]).shape[0]),
        "dummy_columns": dummy_cols,
    }
    return FDDataset(frame=frame, counts=counts)


@dataclass
class RegressionResult:
    table: pd.DataFrame
    n_obs: int
    r2: float
    adj_r2: float
    outcome: str


def _stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def ols_hc_robust(frame: pd.DataFrame, outcome: str, regressors: list) -> RegressionResult:
    """OLS with HC1 heteroskedasticity-robust standard errors (intercept included)."""
    cols = [outcome, *regressors]
    data = frame[cols].dropna()
    y = data[outcome].to_numpy(dtype=float)
    X = np.column_stack([data[r].to_numpy(dtype=float) for r in regressors]
                        + [np.ones(len(data))])
    names = [*regressors, "const"]
    n, k = X.shape
    if n <= k:
        raise InsufficientData(f"{n} rows for {k} parameters in {outcome} regression")

    G = X.T @ X
    keep: list[int] = []
    for j in range(k):
        if keep:
            sub = G[np.ix_(keep, keep)]
            g = G[keep, j]
            resid = G[j, j] - g @ np.linalg.solve(sub, g)
        else:
            resid = G[j, j]
        if resid <= 1e-10 * max(G[j, j], 1e-300):
            raise RankDeficient(f"regressor {names[j]!r} is collinear with earlier columns")
        keep.append(j)

    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    XtX_inv = np.linalg.inv(G)
    meat = (X * resid[:, None] ** 2).T @ X
    cov = XtX_inv @ meat @ XtX_inv * (n / (n - k))
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        tvals = beta / se
    pvals = 2.0 * stats.t.sf(np.abs(tvals), n - k)

    sst = float(np.sum((y - y.mean()) ** 2))
    ssr = float(resid @ resid)
    r2 = 1.0 - ssr / sst if sst > 0 else float("nan")
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / (n - k) if sst > 0 else float("nan")

    table = pd.DataFrame({
        "name": names,
        "estimate": beta,
        "se": se,
        "t": tvals,
        "p": pvals,
        "stars": [_stars(p) for p in pvals],
    })
    return RegressionResult(table=table, n_obs=n, r2=r2, adj_r2=adj_r2, outcome=outcome)


def nested_fd_regressions(fd: FDDataset, outcome: str) -> list[RegressionResult]:
    """Three nested specifications per outcome, on a common listwise sample."""
    dummies = fd.counts["dummy_columns"]
    if outcome == "delta_old":
        base = ["old_lag", "lngdppc_lag", *dummies]
    elif outcome == "delta_lnw":
        base = ["lnw_lag", "old_lag", *dummies]
    else:
        raise ValueError(f"unknown first-difference outcome {outcome!r}")
    specs = [base, ["open_lag", *base], ["delta_open", "open_lag", *base]]
    full_cols = [outcome, *specs[-1]]
    common = fd.frame.dropna(subset=full_cols)
    return [ols_hc_robust(common, outcome, regs) for regs in specs]


def regressions_to_dict(results: dict) -> dict:
    """JSON-ready nested regression tables keyed by outcome."""
    out = {"schema_version": SCHEMA_VERSION}
    for outcome, runs in results.items():
        cols = {}
        for idx, res in enumerate(runs, start=1):
            cols[f"column_{idx}"] = {
                "outcome": res.outcome,
                "n_obs": int(res.n_obs),
                "r2": res.r2,
                "adj_r2": res.adj_r2,
                "coefficients": [
                    {"name": row["name"], "estimate": float(row["estimate"]),
                     "se": float(row["se"]), "t": float(row["t"]),
                     "p": float(row["p"]), "stars": row["stars"]}
                    for _, row in res.table.iterrows()
                ],
            }
        out[outcome] = cols
    return out
