"""Synthetic gravity worlds with known ground truth, plus brute-force oracles.

The generator draws a small world of countries, builds the three input tables,
and produces an estimation panel whose outcome is Poisson around a known
exponential mean. `dense_ppml_oracle` refits any small panel with explicit
fixed-effect dummy columns and a least-squares Newton loop — an independent
route used to certify the production estimator. `recount_diversity_oracle`
recounts the diversity measure with plain loops.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from . import estimator as est
from . import hdfe
from ._io import sha256_bytes
from .errors import EmptyAfterSeparation, NonConvergence, TooLargeForDense
from .ingest import (DyadTable, EstimationPanel, IndicatorTable, PanelFilter,
                     StockTable, build_panel)

DEFAULT_TRUE_BETA = {
    "log_pop_d": 0.5,
    "log_gdppc_d": 1.3,
    "log_dist": -1.0,
    "contig": 1.2,
    "comlang": 1.0,
    "comcol": 1.2,
    "coldepever": 0.8,
    "log_land_d": 0.3,
}

DENSE_COLUMN_GUARD = 500


@dataclass(frozen=True)
class OpennessShock:
    """Extra expected migrant mass for (destination, origins): per-million of
    destination population. Applies to every year unless `years` is given."""
    destination: str
    origins: tuple
    per_million: float
    years: tuple | None = None


@dataclass(frozen=True)
class WorldParams:
    n_countries: int = 20
    years: tuple = (2000, 2010, 2020)
    beta: dict = field(default_factory=lambda: dict(DEFAULT_TRUE_BETA))
    intercept: float = -8.0
    sigma_origin: float = 0.6
    sigma_year: float = 0.15
    sigma_origin_year: float = 0.25
    pop_range: tuple = (2e6, 2e8)
    gdp_range: tuple = (1e3, 6e4)
    land_range: tuple = (1e4, 2e6)
    coord_box_km: float = 12000.0
    p_contig: float = 0.05
    p_comlang: float = 0.12
    p_comcol: float = 0.07
    p_coldepever: float = 0.03
    target_zero_share: float | None = 0.75
    shocks: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.n_countries < 3:
            raise ValueError("n_countries must be at least 3")
        if not self.years:
            raise ValueError("years must be nonempty")
        if self.target_zero_share is not None and not 0 <= self.target_zero_share < 1:
            raise ValueError("target_zero_share must be in [0, 1)")


@dataclass
class TruthRecord:
    beta: dict
    intercept: float
    zero_shift: float
    fe_origin: dict
    fe_year: dict
    fe_origin_year: dict
    mu: pd.DataFrame  # origin, destination, year, mu
    shocks: tuple
    seed: int


def country_codes(n: int) -> list[str]:
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    out = []
    for i in range(n):
        a, rem = divmod(i, 26 * 26)
        b, c = divmod(rem, 26)
        out.append(letters[a] + letters[b] + letters[c])
    return out


def _calibrate_zero_shift(mu0: np.ndarray, target: float) -> float:
    """Intercept shift c such that mean(exp(-mu0*e^c)) matches the target."""
    lo, hi = -60.0, 60.0
    for _ in range(200):
        mid = (lo + hi) / 2.0
        share = float(np.mean(np.exp(-mu0 * np.exp(mid))))
        if share > target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


class _World:
    """Fully drawn synthetic world; seed-deterministic."""

    def __init__(self, params: WorldParams):
        self.params = params
        rng = np.random.default_rng(params.seed)
        n = params.n_countries
        years = [int(y) for y in params.years]
        codes = country_codes(n)
        self.codes = codes

        coords = rng.uniform(0.0, params.coord_box_km, size=(n, 2))
        base_pop = np.exp(rng.uniform(*np.log(params.pop_range), size=n))
        pop_jitter = rng.normal(0.0, 0.05, size=(n, len(years)))
        base_gdp = np.exp(rng.uniform(*np.log(params.gdp_range), size=n))
        gdp_jitter = rng.normal(0.0, 0.10, size=(n, len(years)))
        land = np.exp(rng.uniform(*np.log(params.land_range), size=n))

        n_pairs = n * (n - 1) // 2
        contig = rng.random(n_pairs) < params.p_contig
        comlang = rng.random(n_pairs) < params.p_comlang
        comcol = rng.random(n_pairs) < params.p_comcol
        coldepever = rng.random(n_pairs) < params.p_coldepever

        fe_o = rng.normal(0.0, params.sigma_origin, size=n)
        fe_t = rng.normal(0.0, params.sigma_year, size=len(years))
        fe_ot = rng.normal(0.0, params.sigma_origin_year, size=(n, len(years)))

        old_dep = rng.uniform(5.0, 35.0, size=(n, len(years)))
        wage = np.exp(rng.normal(10.0, 0.5, size=(n, len(years))))
        regions = [f"R{i % 5}" for i in range(n)]

        pair_attr = {}
        k = 0
        for i in range(n):
            for j in range(i + 1, n):
                d = float(np.hypot(*(coords[i] - coords[j])))
                pair_attr[(i, j)] = (d, int(contig[k]), int(comlang[k]),
                                     int(comcol[k]), int(coldepever[k]))
                k += 1

        pop = {(codes[i], y): float(base_pop[i] * np.exp(pop_jitter[i, t]))
               for i in range(n) for t, y in enumerate(years)}
        gdp = {(codes[i], y): float(base_gdp[i] * np.exp(gdp_jitter[i, t]))
               for i in range(n) for t, y in enumerate(years)}

        # Dyad-year grid in the ingest sort order (origin, destination, year).
        rows = []
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                dist, cg, cl, cc, cd = pair_attr[(min(i, j), max(i, j))]
                for t, y in enumerate(years):
                    rows.append((codes[i], codes[j], y, dist, cg, cl, cc, cd, t, i, j))
        grid = pd.DataFrame(rows, columns=["origin", "destination", "year", "dist_km",
                                           "contig", "comlang", "comcol", "coldepever",
                                           "t_idx", "o_idx", "d_idx"])

        beta = params.beta
        pop_d = np.array([pop[(d, y)] for d, y in zip(grid["destination"], grid["year"])])
        gdp_d = np.array([gdp[(d, y)] for d, y in zip(grid["destination"], grid["year"])])
        land_d = land[grid["d_idx"].to_numpy()]
        eta = (params.intercept
               + beta["log_pop_d"] * np.log(pop_d)
               + beta["log_gdppc_d"] * np.log(gdp_d)
               + beta["log_dist"] * np.log(grid["dist_km"].to_numpy())
               + beta["contig"] * grid["contig"].to_numpy()
               + beta["comlang"] * grid["comlang"].to_numpy()
               + beta["comcol"] * grid["comcol"].to_numpy()
               + beta["coldepever"] * grid["coldepever"].to_numpy()
               + beta["log_land_d"] * np.log(land_d)
               + fe_o[grid["o_idx"].to_numpy()]
               + fe_t[grid["t_idx"].to_numpy()]
               + fe_ot[grid["o_idx"].to_numpy(), grid["t_idx"].to_numpy()])
        mu0 = np.exp(eta)
        shift = 0.0
        if params.target_zero_share is not None:
            shift = _calibrate_zero_shift(mu0, params.target_zero_share)
        mu = mu0 * np.exp(shift)

        stock = rng.poisson(mu).astype(float)

        shock_mass = np.zeros(len(grid))
        if params.shocks:
            shock_rng = np.random.default_rng([params.seed, 7919])
            known = set(codes)
            for shock in params.shocks:
                if shock.destination not in known or not set(shock.origins) <= known:
                    raise ValueError(f"shock references unknown country: {shock}")
                hit = (grid["destination"] == shock.destination) \
                    & grid["origin"].isin(shock.origins)
                if shock.years is not None:
                    hit &= grid["year"].isin([int(y) for y in shock.years])
                mass = shock.per_million * 1e-6 * pop_d
                shock_mass = np.where(hit.to_numpy(), shock_mass + mass, shock_mass)
            stock = stock + shock_rng.poisson(shock_mass).astype(float)

        grid["stock"] = stock
        grid["pop_d"] = pop_d
        grid["gdp_d"] = gdp_d
        grid["land_d"] = land_d
        self.grid = grid
        self.mu_truth = mu + shock_mass
        self.fe_o = dict(zip(codes, fe_o.tolist()))
        self.fe_t = {y: float(v) for y, v in zip(years, fe_t)}
        self.fe_ot = {f"{codes[i]}:{y}": float(fe_ot[i, t])
                      for i in range(n) for t, y in enumerate(years)}
        self.zero_shift = shift
        self.pop = pop
        self.gdp = gdp
        self.land = dict(zip(codes, land.tolist()))
        self.old_dep = old_dep
        self.wage = wage
        self.regions = regions
        self.years = years

    def tables(self, skill_split: bool = False) -> tuple[StockTable, DyadTable, IndicatorTable]:
        g = self.grid
        stocks = g[["origin", "destination", "year", "stock"]].copy()
        stocks.insert(3, "skill", "all")
        stocks = stocks.reset_index(drop=True)
        if skill_split:
            # Thin each stock into a tertiary share drawn per origin country.
            split_rng = np.random.default_rng([self.params.seed, 31337])
            share = dict(zip(self.codes,
                             split_rng.uniform(0.2, 0.6, size=len(self.codes))))
            p = stocks["origin"].map(share).to_numpy()
            tert = split_rng.binomial(stocks["stock"].to_numpy().astype(np.int64), p)
            t_rows = stocks.copy()
            t_rows["skill"] = "tertiary"
            t_rows["stock"] = tert.astype(float)
            nt_rows = stocks.copy()
            nt_rows["skill"] = "nontertiary"
            nt_rows["stock"] = stocks["stock"].to_numpy() - tert
            stocks = pd.concat([stocks, t_rows, nt_rows], ignore_index=True)

        dyads = g[g["year"] == self.years[0]][
            ["origin", "destination", "dist_km", "contig", "comlang", "comcol",
             "coldepever"]].reset_index(drop=True)
        for c in ["contig", "comlang", "comcol", "coldepever"]:
            dyads[c] = dyads[c].astype(np.int8)

        rows = []
        for i, code in enumerate(self.codes):
            for t, y in enumerate(self.years):
                rows.append({"country": code, "year": y, "pop": self.pop[(code, y)],
                             "gdp_pc_ppp": self.gdp[(code, y)],
                             "land_km2": self.land[code],
                             "old_dep_ratio": float(self.old_dep[i, t]),
                             "wage_proxy": float(self.wage[i, t]),
                             "region": self.regions[i]})
        countries = pd.DataFrame(rows)

        def digest(frame):
            return sha256_bytes(frame.to_csv(index=False).encode())

        return (StockTable(frame=stocks, digest=digest(stocks)),
                DyadTable(frame=dyads, digest=digest(dyads)),
                IndicatorTable(frame=countries, digest=digest(countries)))


def generate_world(params: WorldParams) -> tuple[EstimationPanel, TruthRecord]:
    """Draw a world and return its estimation panel plus the ground truth."""
    world = _World(params)
    stocks, dyads, countries = world.tables()
    panel = build_panel(stocks, dyads, countries,
                        PanelFilter(min_population=0.0, years=tuple(world.years)))
    truth_mu = world.grid[["origin", "destination", "year"]].copy()
    truth_mu["mu"] = world.mu_truth
    truth_mu = truth_mu.sort_values(["origin", "destination", "year"],
                                    kind="mergesort").reset_index(drop=True)
    assert len(panel.frame) == len(truth_mu)
    truth = TruthRecord(
        beta=dict(params.beta),
        intercept=params.intercept,
        zero_shift=world.zero_shift,
        fe_origin=world.fe_o,
        fe_year=world.fe_t,
        fe_origin_year=world.fe_ot,
        mu=truth_mu,
        shocks=tuple(params.shocks),
        seed=params.seed,
    )
    return panel, truth


def world_tables(params: WorldParams,
                 skill_split: bool = False) -> tuple[StockTable, DyadTable, IndicatorTable]:
    """The three ingest-compatible input tables for a world."""
    return _World(params).tables(skill_split=skill_split)


def write_world_inputs(params: WorldParams, out_dir, include_external: bool = False,
                       skill_split: bool = False) -> dict:
    """Write stocks/dyads/countries CSVs (optionally synthetic external measures)."""
    from pathlib import Path

    from ._io import write_frame_csv

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stocks, dyads, countries = world_tables(params, skill_split=skill_split)
    paths = {"stocks": out_dir / "stocks.csv", "dyads": out_dir / "dyads.csv",
             "countries": out_dir / "countries.csv"}
    write_frame_csv(paths["stocks"], stocks.frame)
    write_frame_csv(paths["dyads"], dyads.frame)
    write_frame_csv(paths["countries"], countries.frame)
    if include_external:
        rng = np.random.default_rng([params.seed, 104729])
        rows = []
        for code in country_codes(params.n_countries):
            for y in params.years:
                rows.append({
                    "country": code, "year": int(y),
                    "visa_do": int(rng.integers(0, 150)),
                    "visa_od": int(rng.integers(0, 150)),
                    "mai": float(np.round(rng.uniform(1.0, 9.0), 4)),
                    "mai_rank": int(rng.integers(1, 140)),
                    "mipex": float(np.round(rng.uniform(20.0, 90.0), 2)),
                })
        paths["external"] = out_dir / "external_measures.csv"
        write_frame_csv(paths["external"], pd.DataFrame(rows))
    return {k: str(v) for k, v in paths.items()}


def truth_to_dict(truth: TruthRecord) -> dict:
    from ._io import SCHEMA_VERSION

    return {
        "schema_version": SCHEMA_VERSION,
        "seed": truth.seed,
        "beta": truth.beta,
        "intercept": truth.intercept,
        "zero_shift": truth.zero_shift,
        "fe_origin": truth.fe_origin,
        "fe_year": {str(k): v for k, v in truth.fe_year.items()},
        "fe_origin_year": truth.fe_origin_year,
        "shocks": [{"destination": s.destination, "origins": list(s.origins),
                    "per_million": s.per_million,
                    "years": None if s.years is None else [int(y) for y in s.years]}
                   for s in truth.shocks],
        "mu": {
            "origin": truth.mu["origin"].tolist(),
            "destination": truth.mu["destination"].tolist(),
            "year": [int(y) for y in truth.mu["year"]],
            "value": [float(v) for v in truth.mu["mu"]],
        },
    }


# --- dense-dummy reference estimator ------------------------------------------

def dense_ppml_oracle(panel, spec: est.ModelSpec | None = None) -> est.FitResult:
    """Full PPML on an explicit dummy design; reference for fit_ppml.

    Shares only sample preparation (separation/singleton masks, collinearity
    rule) with the production estimator; estimation is a least-squares Newton
    loop on the dense design and the covariance comes from dense projection
    partialling.
    """
    spec = spec or est.ModelSpec()
    frame = est._frame_of(panel)
    est._validate_spec(frame, spec)

    y_all = frame[spec.outcome].to_numpy(dtype=float)
    X_all, names = est._design(frame, spec)
    fe_all = est._fe_labels(frame, spec)
    cluster_all = frame[spec.cluster].to_numpy()

    kept, sep_rows, single_rows, single_groups = est._prepare_sample(
        y_all, X_all, fe_all, with_singletons=True)
    if not kept.any():
        raise EmptyAfterSeparation("all rows dropped by separation/singleton handling")

    y = y_all[kept]
    X = X_all[kept]
    fe_labels_kept = [labels[kept] for labels in fe_all]
    n = len(y)

    dummy_blocks = []
    n_dummy = 0
    for j, labels in enumerate(fe_labels_kept):
        codes, n_levels = hdfe.encode_groups(labels)
        start = 0 if j == 0 else 1  # later dims drop a reference level
        n_dummy += n_levels - start
        dummy_blocks.append((codes, n_levels, start))
    if n_dummy > DENSE_COLUMN_GUARD:
        raise TooLargeForDense(
            f"{n_dummy} dummy columns exceed the dense guard of {DENSE_COLUMN_GUARD}")

    D = np.zeros((n, n_dummy))
    col = 0
    for codes, n_levels, start in dummy_blocks:
        for lev in range(start, n_levels):
            D[:, col] = codes == lev
            col += 1

    ybar = y.mean()
    if ybar <= 0:
        raise EmptyAfterSeparation("outcome is identically zero on the kept sample")

    def dense_partial(cols, w):
        """Residualize columns on D by dense weighted least squares."""
        if n_dummy == 0 or cols.shape[1] == 0:
            return cols.copy()
        sw = np.sqrt(w)
        gamma, *_ = np.linalg.lstsq(sw[:, None] * D, sw[:, None] * cols, rcond=None)
        return cols - D @ gamma

    w0 = (y + ybar) / 2.0
    dropped_collinear: list[str] = []
    keep_cols = list(range(X.shape[1]))
    if X.shape[1]:
        Xt0 = dense_partial(X, w0)
        orig_sq = np.einsum("ij,ij->j", X * w0[:, None], X)
        local, dropped_collinear = est._sequential_collinear(Xt0, w0, orig_sq, names)
        keep_cols = local
    Xk = X[:, keep_cols]
    kept_names = [names[j] for j in keep_cols]

    A = np.hstack([Xk, D]) if n_dummy else Xk
    if A.shape[1] == 0:
        raise ValueError("empty design: no regressors, intercept, or fixed effects")

    mu = w0.copy()
    eta = np.log(mu)
    dev = est.poisson_deviance(y, mu)
    coef = None
    converged = False
    iteration_log = []
    rel = np.inf
    for iteration in range(1, 301):
        # Same damped-IRLS safeguards as the production estimator: weight
        # floor plus working-residual cap far from the optimum, both relaxed
        # to inert levels for the endgame.
        endgame = rel < 1e-6
        floor = ybar * (1e-14 if endgame else 1e-4)
        cap = est.WORK_RESID_CAP_NEAR if endgame else est.WORK_RESID_CAP_FAR
        w = np.maximum(mu, floor)
        z = eta + np.clip((y - mu) / w, -cap, cap)
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(sw[:, None] * A, sw * z, rcond=None)
        eta_new = np.clip(A @ coef, -est.ETA_BOUND, est.ETA_BOUND)
        mu_new = np.exp(eta_new)
        dev_new = est.poisson_deviance(y, mu_new)
        halvings = 0
        # First step accepted unconditionally: the starting eta is off-span.
        if iteration > 1:
            while dev_new > dev + 1e-13 * (dev + 1.0) and halvings < 60:
                eta_new = (eta_new + eta) / 2.0
                mu_new = np.exp(eta_new)
                dev_new = est.poisson_deviance(y, mu_new)
                halvings += 1
        rel = abs(dev - dev_new) / (dev_new + 1.0)
        eta, mu, dev = eta_new, mu_new, dev_new
        err = y - mu
        score = A.T @ err
        col_rms = np.sqrt(np.einsum("ij,ij->j", A * w[:, None], A) / w.sum())
        ok = bool(np.all(np.abs(score) <= 1e-11 * np.maximum(col_rms, 1e-12)
                         * max(mu.sum(), 1.0)))
        iteration_log.append({"iteration": iteration, "deviance": dev,
                              "step_halvings": halvings, "rel_deviance_change": rel})
        if rel < 1e-12 and ok and iteration > 1:
            converged = True
            break
    if not converged:
        raise NonConvergence("dense oracle Newton did not converge", iteration_log)

    k = Xk.shape[1]
    beta = coef[:k]

    recovered_intercept = None
    fe_effects: dict = {}
    if spec.fe_dims:
        slope_part = Xk @ beta if k else np.zeros(n)
        a = eta - slope_part
        combo, combo_levels = est._combo_codes(fe_labels_kept)
        a_bar = (np.bincount(combo, weights=a, minlength=len(combo_levels))
                 / np.bincount(combo, minlength=len(combo_levels)))
        eta = slope_part + a_bar[combo]
        mu = np.exp(eta)
        dev = est.poisson_deviance(y, mu)
        fe_effects = {tuple(np.atleast_1d(lv)): float(v)
                      for lv, v in zip(combo_levels, a_bar)}
        if spec.include_intercept:
            recovered_intercept = float(a.mean())

    # Literal sandwich on densely partialled regressors.
    w = mu
    err = y - mu
    codes_c, n_clusters = hdfe.encode_groups(cluster_all[kept])
    if k:
        Xt = dense_partial(Xk, w)
        bread = Xt.T @ (Xt * w[:, None])
        scores = np.zeros((n_clusters, k))
        contrib = Xt * err[:, None]
        for jcol in range(k):
            scores[:, jcol] = np.bincount(codes_c, weights=contrib[:, jcol],
                                          minlength=n_clusters)
        meat = scores.T @ scores
        bread_inv = np.linalg.inv(bread)
        cov_mat = bread_inv @ meat @ bread_inv * (n_clusters / (n_clusters - 1.0))
        cov_mat = (cov_mat + cov_mat.T) / 2.0
        se = np.sqrt(np.diag(cov_mat))
    else:
        bread = np.empty((0, 0))
        scores = np.empty((n_clusters, 0))
        cov_mat = np.empty((0, 0))
        se = np.zeros(0)

    loglik = est.poisson_loglik(y, mu)
    mu0 = np.full(n, ybar)
    null_loglik = est.poisson_loglik(y, mu0)
    null_deviance = est.poisson_deviance(y, mu0)
    pseudo_r2 = float(1.0 - loglik / null_loglik) if null_loglik != 0 else float("nan")

    slope_idx = [i for i, nm in enumerate(kept_names) if nm != "intercept"]
    if slope_idx and cov_mat.size:
        b = beta[slope_idx]
        V = cov_mat[np.ix_(slope_idx, slope_idx)]
        try:
            wald = float(b @ np.linalg.solve(V, b))
            wald_df = len(slope_idx)
            wald_p = float(stats.chi2.sf(wald, wald_df))
        except np.linalg.LinAlgError:
            wald, wald_df, wald_p = float("nan"), len(slope_idx), float("nan")
    else:
        wald, wald_df, wald_p = float("nan"), 0, float("nan")

    return est.FitResult(
        spec=spec,
        coef=pd.Series(beta, index=kept_names, dtype=float),
        se=pd.Series(se, index=kept_names, dtype=float),
        cov=pd.DataFrame(cov_mat, index=kept_names, columns=kept_names),
        fitted=mu,
        kept_mask=kept,
        fe_effects=fe_effects,
        recovered_intercept=recovered_intercept,
        intercept_estimated="intercept" in kept_names,
        deviance=dev,
        null_deviance=null_deviance,
        loglik=loglik,
        null_loglik=null_loglik,
        pseudo_r2=pseudo_r2,
        wald_chi2=wald,
        wald_df=wald_df,
        wald_p=wald_p,
        n_obs=n,
        n_clusters=n_clusters,
        n_iterations=len(iteration_log),
        converged=True,
        iteration_log=iteration_log,
        separation_rows=sep_rows,
        singleton_rows=single_rows,
        singleton_groups=single_groups,
        collinear_dropped=dropped_collinear,
        cluster_scores=scores,
        bread=bread,
        panel_fingerprint=est.panel_fingerprint(frame, spec.outcome),
    )


def recount_diversity_oracle(rm, cutoff_per_million: float = 10.0) -> dict:
    """Naive double-loop recount of the diversity measure (independent route)."""
    counts: dict = {}
    frame = rm.frame if hasattr(rm, "frame") else rm
    dests = frame["destination"].tolist()
    years = frame["year"].tolist()
    skills = frame["skill"].tolist()
    resids = frame["residual"].tolist()
    pops = frame["pop_d"].tolist()
    for dest, year, skill, resid, pop in zip(dests, years, skills, resids, pops):
        key = (dest, int(year), skill)
        if key not in counts:
            counts[key] = 0
        if pop == pop and pop is not None and resid / pop > cutoff_per_million * 1e-6:
            counts[key] += 1
    return counts
