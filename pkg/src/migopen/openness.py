"""Residual-based openness measures.

The building block is the bilateral residual (actual minus fitted stock) per
origin-destination-year on the estimation sample. Two families of measures
follow: scale scores (summed residuals per destination, per capita, with an
optional variant excluding contiguous origins) and diversity counts (number of
origins whose per-capita residual exceeds a cutoff, default 10 per million).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from . import estimator as est
from .errors import CoverageMismatchWarning, MissingPopulation, PanelMismatch

DEFAULT_CUTOFF_PER_MILLION = 10.0

RECORD_COLUMNS = ["destination", "year", "skill", "cutoff_per_million",
                  "diversity", "scale_all", "scale_excl_contig", "region"]


@dataclass
class ResidualMatrix:
    """Per kept panel row: actual, fitted, residual, destination population."""
    frame: pd.DataFrame  # origin,destination,year,skill,actual,fitted,residual,pop_d,contig


@dataclass
class SweepResult:
    table: pd.DataFrame          # destination,year,skill,cutoff_per_million,diversity
    rank_correlations: pd.DataFrame  # cutoff_a,cutoff_b,spearman


@dataclass
class SkillSplitResult:
    paired: pd.DataFrame         # destination,year,diversity_tertiary,diversity_nontertiary
    correlation: float
    means: pd.DataFrame          # year,mean_tertiary,mean_nontertiary
    unmatched: list


@dataclass
class ChangeResult:
    deltas: pd.DataFrame         # destination,period,delta_diversity,region
    global_mean: float
    region_means: pd.DataFrame   # region,period,mean_delta


def residual_matrix(fit: est.FitResult, panel) -> ResidualMatrix:
    """Response-scale residuals on the estimation (kept) sample."""
    frame = est._frame_of(panel)
    if est.panel_fingerprint(frame, fit.spec.outcome) != fit.panel_fingerprint:
        raise PanelMismatch("fit was not produced from this panel")
    kept = frame.loc[fit.kept_mask, ["origin", "destination", "year", "skill",
                                     "pop_d", "contig"]].reset_index(drop=True)
    actual = frame.loc[fit.kept_mask, fit.spec.outcome].to_numpy(dtype=float)
    out = kept.copy()
    out["actual"] = actual
    out["fitted"] = fit.fitted
    out["residual"] = actual - fit.fitted
    out = out[["origin", "destination", "year", "skill", "actual", "fitted",
               "residual", "pop_d", "contig"]]
    return ResidualMatrix(frame=out)


def _require_population(frame: pd.DataFrame) -> None:
    missing = frame["pop_d"].isna() | (frame["pop_d"] <= 0)
    if missing.any():
        bad = frame.loc[missing, ["destination", "year"]].drop_duplicates()
        raise MissingPopulation(
            f"missing destination population for {bad.to_records(index=False).tolist()}")


def scale_openness(rm: ResidualMatrix, exclude_contiguous: bool = False) -> pd.DataFrame:
    """Summed residuals per destination-year-skill divided by population."""
    frame = rm.frame
    _require_population(frame)
    used = frame[frame["contig"] == 0] if exclude_contiguous else frame
    keys = ["destination", "year", "skill"]
    sums = used.groupby(keys, sort=True)["residual"].sum()
    pops = frame.groupby(keys, sort=True)["pop_d"].first()
    # Destinations whose every origin is contiguous drop out of `sums`: sum of
    # an empty set is zero.
    scale = (sums.reindex(pops.index, fill_value=0.0) / pops).rename("scale")
    out = scale.reset_index()
    out["residual_sum"] = sums.reindex(pops.index, fill_value=0.0).to_numpy()
    out["pop_d"] = pops.to_numpy()
    return out


def diversity_openness(rm: ResidualMatrix,
                       cutoff_per_million: float = DEFAULT_CUTOFF_PER_MILLION) -> pd.DataFrame:
    """Count of origins whose per-capita residual strictly exceeds the cutoff."""
    if cutoff_per_million <= 0:
        raise ValueError("cutoff_per_million must be positive")
    frame = rm.frame
    _require_population(frame)
    keys = ["destination", "year", "skill"]
    above = (frame["residual"] / frame["pop_d"]) > cutoff_per_million * 1e-6
    out = (frame.assign(above=above)
           .groupby(keys, sort=True)["above"].sum().astype(int)
           .rename("diversity").reset_index())
    out["cutoff_per_million"] = float(cutoff_per_million)
    return out


def cutoff_sweep(rm: ResidualMatrix, cutoffs) -> SweepResult:
    """Diversity counts per cutoff plus Spearman correlations between cutoffs."""
    cutoffs = [float(c) for c in cutoffs]
    if cutoffs != sorted(cutoffs):
        raise ValueError("cutoffs must be sorted ascending")
    tables = []
    for c in cutoffs:
        t = diversity_openness(rm, c)
        tables.append(t)
    table = pd.concat(tables, ignore_index=True)
    table = table[["destination", "year", "skill", "cutoff_per_million", "diversity"]]

    wide = table.pivot_table(index=["destination", "year", "skill"],
                             columns="cutoff_per_million", values="diversity")
    rows = []
    for i, a in enumerate(cutoffs):
        for b in cutoffs[i + 1:]:
            if len(wide) > 1 and wide[a].nunique() > 1 and wide[b].nunique() > 1:
                rho = stats.spearmanr(wide[a], wide[b]).statistic
            else:
                rho = np.nan  # a constant ranking has no defined correlation
            rows.append({"cutoff_a": a, "cutoff_b": b, "spearman": float(rho)})
    rank_corr = pd.DataFrame(rows, columns=["cutoff_a", "cutoff_b", "spearman"])
    return SweepResult(table=table, rank_correlations=rank_corr)


def skill_split_openness(rm_tertiary: ResidualMatrix, rm_nontertiary: ResidualMatrix,
                         cutoff_per_million: float = DEFAULT_CUTOFF_PER_MILLION
                         ) -> SkillSplitResult:
    """Paired diversity counts by skill with their correlation and yearly means."""
    t = diversity_openness(rm_tertiary, cutoff_per_million)
    nt = diversity_openness(rm_nontertiary, cutoff_per_million)
    t = t.rename(columns={"diversity": "diversity_tertiary"}).drop(columns="skill")
    nt = nt.rename(columns={"diversity": "diversity_nontertiary"}).drop(columns="skill")
    merged = t.merge(nt, on=["destination", "year", "cutoff_per_million"], how="outer",
                     indicator=True)
    unmatched = [(r.destination, int(r.year)) for r in
                 merged[merged["_merge"] != "both"].itertuples()]
    if unmatched:
        warnings.warn(
            f"{len(unmatched)} destination-year(s) covered by one skill matrix only; "
            "excluded from the pairing", CoverageMismatchWarning, stacklevel=2)
    paired = (merged[merged["_merge"] == "both"]
              .drop(columns="_merge")
              .sort_values(["destination", "year"], kind="mergesort")
              .reset_index(drop=True))
    if len(paired) >= 2 and paired["diversity_tertiary"].std() > 0 \
            and paired["diversity_nontertiary"].std() > 0:
        correlation = float(np.corrcoef(paired["diversity_tertiary"],
                                        paired["diversity_nontertiary"])[0, 1])
    else:
        correlation = float("nan")
    means = (paired.groupby("year", sort=True)
             .agg(mean_tertiary=("diversity_tertiary", "mean"),
                  mean_nontertiary=("diversity_nontertiary", "mean"))
             .reset_index())
    return SkillSplitResult(paired=paired, correlation=correlation, means=means,
                            unmatched=unmatched)


def openness_change(records_t: pd.DataFrame, records_t_minus_10: pd.DataFrame,
                    region_map: dict | None = None) -> ChangeResult:
    """Per-destination diversity change between two years plus global/region means."""
    region_map = region_map or {}
    a = records_t[["destination", "year", "diversity"]].dropna(subset=["diversity"])
    b = records_t_minus_10[["destination", "year", "diversity"]].dropna(subset=["diversity"])
    year_t = int(a["year"].iloc[0]) if len(a) else None
    year_lag = int(b["year"].iloc[0]) if len(b) else None
    merged = a.merge(b, on="destination", suffixes=("_t", "_lag"))
    period = f"{year_lag}-{year_t}" if year_t is not None and year_lag is not None else ""
    deltas = pd.DataFrame({
        "destination": merged["destination"],
        "period": period,
        "delta_diversity": (merged["diversity_t"] - merged["diversity_lag"]).astype(float),
    })
    deltas["region"] = deltas["destination"].map(region_map).astype(object)
    deltas = deltas.sort_values("destination", kind="mergesort").reset_index(drop=True)
    global_mean = float(deltas["delta_diversity"].mean()) if len(deltas) else float("nan")
    with_region = deltas.dropna(subset=["region"])
    region_means = (with_region.groupby(["region", "period"], sort=True)["delta_diversity"]
                    .mean().rename("mean_delta").reset_index())
    return ChangeResult(deltas=deltas, global_mean=global_mean, region_means=region_means)


def openness_records(rm: ResidualMatrix,
                     cutoff_per_million: float = DEFAULT_CUTOFF_PER_MILLION,
                     region_map: dict | None = None) -> pd.DataFrame:
    """One record per destination-year: scale scores, diversity, region.

    Destinations absent from a year's estimation sample get a null record —
    absence of data is not closedness.
    """
    region_map = region_map or {}
    if rm.frame.empty:
        return pd.DataFrame(columns=RECORD_COLUMNS)
    scale_all = scale_openness(rm, exclude_contiguous=False)
    scale_ex = scale_openness(rm, exclude_contiguous=True)
    diversity = diversity_openness(rm, cutoff_per_million)

    rec = (scale_all.rename(columns={"scale": "scale_all"})
           [["destination", "year", "skill", "scale_all"]]
           .merge(scale_ex.rename(columns={"scale": "scale_excl_contig"})
                  [["destination", "year", "skill", "scale_excl_contig"]],
                  on=["destination", "year", "skill"])
           .merge(diversity[["destination", "year", "skill", "diversity"]],
                  on=["destination", "year", "skill"]))

    # Null records: destination x year grid over the union of observed values.
    dests = sorted(rec["destination"].unique())
    years = sorted(rec["year"].unique())
    skill = rec["skill"].iloc[0]
    full = pd.MultiIndex.from_product([dests, years],
                                      names=["destination", "year"]).to_frame(index=False)
    full["skill"] = skill
    rec = full.merge(rec, on=["destination", "year", "skill"], how="left")
    rec["cutoff_per_million"] = float(cutoff_per_million)
    rec["region"] = rec["destination"].map(region_map).astype(object)
    rec = rec[RECORD_COLUMNS].sort_values(["destination", "year"],
                                          kind="mergesort").reset_index(drop=True)
    return rec


def skill_plotdata(split: SkillSplitResult, population: pd.DataFrame | None = None,
                   region_map: dict | None = None) -> pd.DataFrame:
    """Log-transformed skill-split series for external plotting.

    Zero counts are replaced with 0.5 before the log — emitted plot data only,
    never the stored measures.
    """
    region_map = region_map or {}
    df = split.paired.copy()
    df["log_open_tertiary"] = np.log(df["diversity_tertiary"].replace(0, 0.5))
    df["log_open_nontertiary"] = np.log(df["diversity_nontertiary"].replace(0, 0.5))
    if population is not None:
        df = df.merge(population.rename(columns={"country": "destination"})
                      [["destination", "year", "pop"]],
                      on=["destination", "year"], how="left")
    else:
        df["pop"] = np.nan
    df["region"] = df["destination"].map(region_map).astype(object)
    cols = ["destination", "year", "diversity_tertiary", "diversity_nontertiary",
            "log_open_tertiary", "log_open_nontertiary", "pop", "region"]
    return df[cols].sort_values(["destination", "year"],
                                kind="mergesort").reset_index(drop=True)
