"""Input-table loading, validation, and construction of the estimation panel.

Three CSV inputs feed the pipeline: bilateral migrant stocks, dyad covariates,
and country-year indicators. `build_panel` joins them into a directed
dyad-year panel, densifying absent pairs to explicit zero stocks (the outcome
matrix is mostly zeros and the estimator needs them) and logging every
excluded input row.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ._io import sha256_file
from .errors import (
    BadISO3,
    BadYear,
    DuplicateKey,
    EmptyPanel,
    MissingColumn,
    NegativeStock,
    NonBinaryDummy,
    NonpositiveDistance,
    NonpositivePopulation,
    SchemaError,
)

STOCK_COLUMNS = ["origin", "destination", "year", "skill", "stock"]
DYAD_COLUMNS = ["origin", "destination", "dist_km", "contig", "comlang", "comcol", "coldepever"]
INDICATOR_COLUMNS = ["country", "year", "pop", "gdp_pc_ppp", "land_km2",
                     "old_dep_ratio", "wage_proxy", "region"]

VALID_SKILLS = ("all", "tertiary", "nontertiary")
VALID_STOCK_YEARS = (2000, 2010, 2020)

PANEL_COLUMNS = ["origin", "destination", "year", "skill", "stock", "pop_d",
                 "log_pop_d", "log_gdppc_d", "log_dist", "contig", "comlang",
                 "comcol", "coldepever", "log_land_d",
                 "origin_fe_key", "origin_year_fe_key", "year_fe_key"]

_ISO3 = re.compile(r"^[A-Z]{3}$")


@dataclass
class StockTable:
    frame: pd.DataFrame
    digest: str


@dataclass
class DyadTable:
    frame: pd.DataFrame
    digest: str
    asymmetric_pairs: list = field(default_factory=list)


@dataclass
class IndicatorTable:
    frame: pd.DataFrame
    digest: str

    def region_map(self) -> dict:
        """country -> first non-null region label (by ascending year)."""
        out = {}
        f = self.frame.sort_values(["country", "year"])
        for country, region in zip(f["country"], f["region"]):
            if country not in out and isinstance(region, str) and region:
                out[country] = region
        return out


@dataclass
class PanelFilter:
    min_population: float = 1.2e6
    years: tuple | None = None
    skill: str = "all"


@dataclass
class EstimationPanel:
    frame: pd.DataFrame
    filter_log: dict
    input_digests: dict
    panel_filter: PanelFilter


def _rows(mask) -> str:
    idx = list(np.flatnonzero(np.asarray(mask)))
    shown = ", ".join(str(i) for i in idx[:10])
    more = "" if len(idx) <= 10 else f" (+{len(idx) - 10} more)"
    return f"row index {shown}{more}"


def _read_raw(path, required: list, table: str) -> tuple[pd.DataFrame, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{table}: input file not found: {path}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in required if c not in raw.columns]
    if missing:
        raise MissingColumn(f"{table}: missing column(s) {missing} in {path}")
    return raw[required].reset_index(drop=True), sha256_file(path)


def _numeric(raw: pd.Series, table: str, name: str, nullable: bool = False) -> pd.Series:
    s = raw.str.strip()
    null = s == ""
    if null.any() and not nullable:
        raise SchemaError(f"{table}: empty {name} at {_rows(null)}")
    vals = pd.to_numeric(s.where(~null, other=np.nan), errors="coerce")
    bad = ~null & vals.isna()
    if bad.any():
        raise SchemaError(f"{table}: non-numeric {name} at {_rows(bad)}")
    return vals.astype(float)


def _int_year(raw: pd.Series, table: str) -> pd.Series:
    vals = _numeric(raw, table, "year")
    frac = vals % 1 != 0
    if frac.any():
        raise BadYear(f"{table}: non-integer year at {_rows(frac)}")
    return vals.astype(int)


def _iso3(raw: pd.Series, table: str, name: str) -> pd.Series:
    s = raw.str.strip()
    bad = ~s.str.fullmatch(_ISO3.pattern).fillna(False)
    if bad.any():
        raise BadISO3(f"{table}: malformed {name} code at {_rows(bad)}")
    return s


def _no_duplicates(frame: pd.DataFrame, keys: list, table: str) -> None:
    dup = frame.duplicated(subset=keys, keep=False)
    if dup.any():
        first = frame.loc[dup, keys].iloc[0].tolist()
        raise DuplicateKey(f"{table}: duplicate key {tuple(first)} at {_rows(dup)}")


def load_stock_table(path) -> StockTable:
    """Parse and validate the bilateral stock table."""
    raw, digest = _read_raw(path, STOCK_COLUMNS, "stocks")
    frame = pd.DataFrame({
        "origin": _iso3(raw["origin"], "stocks", "origin"),
        "destination": _iso3(raw["destination"], "stocks", "destination"),
        "year": _int_year(raw["year"], "stocks"),
        "skill": raw["skill"].str.strip(),
        "stock": _numeric(raw["stock"], "stocks", "stock"),
    })
    bad_year = ~frame["year"].isin(VALID_STOCK_YEARS)
    if bad_year.any():
        raise BadYear(f"stocks: year outside {VALID_STOCK_YEARS} at {_rows(bad_year)}")
    bad_skill = ~frame["skill"].isin(VALID_SKILLS)
    if bad_skill.any():
        raise SchemaError(f"stocks: skill outside {VALID_SKILLS} at {_rows(bad_skill)}")
    self_pair = frame["origin"] == frame["destination"]
    if self_pair.any():
        raise SchemaError(f"stocks: origin equals destination at {_rows(self_pair)}")
    bad_stock = ~np.isfinite(frame["stock"]) | (frame["stock"] < 0)
    if bad_stock.any():
        raise NegativeStock(f"stocks: negative or non-finite stock at {_rows(bad_stock)}")
    _no_duplicates(frame, ["origin", "destination", "year", "skill"], "stocks")
    return StockTable(frame=frame, digest=digest)


def load_dyad_table(path) -> DyadTable:
    """Parse and validate the dyad covariate table; report asymmetric coverage."""
    raw, digest = _read_raw(path, DYAD_COLUMNS, "dyads")
    frame = pd.DataFrame({
        "origin": _iso3(raw["origin"], "dyads", "origin"),
        "destination": _iso3(raw["destination"], "dyads", "destination"),
        "dist_km": _numeric(raw["dist_km"], "dyads", "dist_km"),
    })
    bad_dist = ~np.isfinite(frame["dist_km"]) | (frame["dist_km"] <= 0)
    if bad_dist.any():
        raise NonpositiveDistance(f"dyads: nonpositive dist_km at {_rows(bad_dist)}")
    for dummy in ["contig", "comlang", "comcol", "coldepever"]:
        vals = _numeric(raw[dummy], "dyads", dummy)
        bad = ~vals.isin([0.0, 1.0])
        if bad.any():
            raise NonBinaryDummy(f"dyads: non-binary {dummy} at {_rows(bad)}")
        frame[dummy] = vals.astype(np.int8)
    _no_duplicates(frame, ["origin", "destination"], "dyads")

    pairs = set(zip(frame["origin"], frame["destination"]))
    asymmetric = sorted(p for p in pairs if p[0] != p[1] and (p[1], p[0]) not in pairs)
    if asymmetric:
        warnings.warn(
            f"dyads: {len(asymmetric)} pair(s) present without the reverse direction",
            stacklevel=2,
        )
    return DyadTable(frame=frame, digest=digest, asymmetric_pairs=asymmetric)


def load_indicator_table(path) -> IndicatorTable:
    """Parse and validate the country-year indicator table."""
    raw, digest = _read_raw(path, INDICATOR_COLUMNS, "countries")
    frame = pd.DataFrame({
        "country": _iso3(raw["country"], "countries", "country"),
        "year": _int_year(raw["year"], "countries"),
        "pop": _numeric(raw["pop"], "countries", "pop"),
        "gdp_pc_ppp": _numeric(raw["gdp_pc_ppp"], "countries", "gdp_pc_ppp"),
        "land_km2": _numeric(raw["land_km2"], "countries", "land_km2"),
        "old_dep_ratio": _numeric(raw["old_dep_ratio"], "countries", "old_dep_ratio",
                                  nullable=True),
        "wage_proxy": _numeric(raw["wage_proxy"], "countries", "wage_proxy", nullable=True),
        "region": raw["region"].str.strip().where(raw["region"].str.strip() != "", np.nan),
    })
    bad_pop = ~np.isfinite(frame["pop"]) | (frame["pop"] <= 0)
    if bad_pop.any():
        raise NonpositivePopulation(f"countries: nonpositive pop at {_rows(bad_pop)}")
    bad_old = frame["old_dep_ratio"].notna() & (frame["old_dep_ratio"] < 0)
    if bad_old.any():
        raise SchemaError(f"countries: negative old_dep_ratio at {_rows(bad_old)}")
    bad_wage = frame["wage_proxy"].notna() & (frame["wage_proxy"] <= 0)
    if bad_wage.any():
        raise SchemaError(f"countries: nonpositive wage_proxy at {_rows(bad_wage)}")
    nonpos = (frame["gdp_pc_ppp"] <= 0) | (frame["land_km2"] <= 0)
    if nonpos.any():
        # Not fatal here: affected destination-years are dropped and logged in build_panel.
        warnings.warn(
            f"countries: nonpositive gdp_pc_ppp/land_km2 at {_rows(nonpos)}; "
            "those destination-years will be excluded from the panel",
            stacklevel=2,
        )
    _no_duplicates(frame, ["country", "year"], "countries")
    return IndicatorTable(frame=frame, digest=digest)


def build_panel(stocks: StockTable, dyads: DyadTable, indicators: IndicatorTable,
                panel_filter: PanelFilter | None = None) -> EstimationPanel:
    """Join the three tables into a dyad-year estimation panel.

    Densifies to the full origin x destination grid per year (imputing zero
    stocks), applies the destination population floor per destination-year,
    and records every excluded input row in the filter log.
    """
    filt = panel_filter or PanelFilter()
    if filt.skill not in VALID_SKILLS:
        raise ValueError(f"unknown skill selector: {filt.skill!r}")

    s = stocks.frame[stocks.frame["skill"] == filt.skill]
    years = tuple(filt.years) if filt.years else tuple(sorted(s["year"].unique()))
    missing_years = [y for y in years if y not in set(indicators.frame["year"])]
    if missing_years:
        raise ValueError(f"indicator table lacks requested year(s) {missing_years}")
    s = s[s["year"].isin(years)].reset_index(drop=True)
    rows_in = len(s)
    if rows_in == 0:
        raise EmptyPanel(f"no stock rows for skill={filt.skill!r}, years={years}")

    ind = indicators.frame.set_index(["country", "year"])

    # Destination-year eligibility and the per-year country universe.
    excluded: list[dict] = []
    dest_reason: dict[tuple, str] = {}
    grids = []
    for year in years:
        sy = s[s["year"] == year]
        universe = sorted(set(sy["origin"]) | set(sy["destination"]))
        origins = universe
        dests = []
        for dest in universe:
            key = (dest, year)
            if key not in ind.index:
                dest_reason[key] = "destination_missing_indicator"
            elif ind.loc[key, "pop"] < filt.min_population:
                dest_reason[key] = "destination_below_min_population"
            elif ind.loc[key, "gdp_pc_ppp"] <= 0 or ind.loc[key, "land_km2"] <= 0:
                dest_reason[key] = "destination_nonpositive_indicator"
            else:
                dests.append(dest)
        if origins and dests:
            grid = pd.MultiIndex.from_product(
                [origins, dests], names=["origin", "destination"]
            ).to_frame(index=False)
            grid = grid[grid["origin"] != grid["destination"]]
            grid["year"] = year
            grids.append(grid)

    for row in s.itertuples():
        reason = dest_reason.get((row.destination, row.year))
        if reason is not None:
            excluded.append({"origin": row.origin, "destination": row.destination,
                             "year": int(row.year), "skill": filt.skill, "reason": reason})

    if not grids:
        raise EmptyPanel("no destination passed the panel filters")
    panel = pd.concat(grids, ignore_index=True)

    panel = panel.merge(
        s.rename(columns={"stock": "stock_obs"})[["origin", "destination", "year", "stock_obs"]],
        on=["origin", "destination", "year"], how="left",
    )
    imputed_mask = panel["stock_obs"].isna()
    panel["stock"] = panel["stock_obs"].fillna(0.0)

    panel = panel.merge(dyads.frame, on=["origin", "destination"], how="left")
    no_dyad = panel["dist_km"].isna()
    if no_dyad.any():
        for row in panel[no_dyad & ~imputed_mask].itertuples():
            excluded.append({"origin": row.origin, "destination": row.destination,
                             "year": int(row.year), "skill": filt.skill,
                             "reason": "missing_dyad"})
    imputed_skipped = int((no_dyad & imputed_mask).sum())
    panel = panel[~no_dyad].reset_index(drop=True)
    imputed_mask = imputed_mask[~no_dyad.values].reset_index(drop=True)

    ind_cols = indicators.frame[["country", "year", "pop", "gdp_pc_ppp", "land_km2"]]
    panel = panel.merge(
        ind_cols.rename(columns={"country": "destination", "pop": "pop_d"}),
        on=["destination", "year"], how="left",
    )

    panel["skill"] = filt.skill
    panel["log_pop_d"] = np.log(panel["pop_d"].to_numpy())
    panel["log_gdppc_d"] = np.log(panel["gdp_pc_ppp"].to_numpy())
    panel["log_dist"] = np.log(panel["dist_km"].to_numpy())
    panel["log_land_d"] = np.log(panel["land_km2"].to_numpy())
    panel["origin_fe_key"] = panel["origin"]
    panel["year_fe_key"] = panel["year"].astype(str)
    panel["origin_year_fe_key"] = panel["origin"] + ":" + panel["year"].astype(str)

    panel = panel[PANEL_COLUMNS].sort_values(
        ["origin", "destination", "year", "skill"], kind="mergesort"
    ).reset_index(drop=True)

    if panel.empty:
        raise EmptyPanel("no rows survive the panel filters")

    rows_excluded = len(excluded)
    rows_kept_from_input = rows_in - rows_excluded
    n_imputed = int(imputed_mask.sum())
    assert rows_kept_from_input + n_imputed == len(panel)

    dest_by_year = {int(y): int(panel.loc[panel["year"] == y, "destination"].nunique())
                    for y in years}
    filter_log = {
        "skill": filt.skill,
        "years": [int(y) for y in years],
        "min_population": filt.min_population,
        "rows_in": rows_in,
        "rows_kept_from_input": rows_kept_from_input,
        "rows_excluded": rows_excluded,
        "rows_imputed_zero": n_imputed,
        "imputed_cells_skipped_missing_dyad": imputed_skipped,
        "destinations_by_year": dest_by_year,
        "excluded_destination_years": [
            {"destination": d, "year": int(y), "reason": r}
            for (d, y), r in sorted(dest_reason.items())
        ],
        "excluded_rows": excluded,
    }
    digests = {"stocks": stocks.digest, "dyads": dyads.digest,
               "countries": indicators.digest}
    return EstimationPanel(frame=panel, filter_log=filter_log,
                           input_digests=digests, panel_filter=filt)
