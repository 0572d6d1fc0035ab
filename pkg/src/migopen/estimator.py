"""Poisson pseudo-maximum-likelihood with absorbed fixed effects.

The solver is iteratively reweighted least squares on fixed-effect-demeaned
working variables: each iteration demeans the regressors and the working
response under the current mean weights (alternating projections), solves the
weighted least-squares step, and recovers the full linear predictor from the
working residual. Observations that make the likelihood unbounded (zero
outcomes on a separating configuration, fixed-effect groups with no positive
outcome) are detected and dropped, as are singleton fixed-effect groups.
Inference uses a cluster-robust sandwich covariance.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import special, stats

from . import hdfe
from .errors import (
    CollinearRegressorWarning,
    EmptyAfterSeparation,
    NonConvergence,
    SingularBread,
    UnknownFELevel,
)

DEFAULT_REGRESSORS = ("log_pop_d", "log_gdppc_d", "log_dist", "contig",
                      "comlang", "comcol", "coldepever", "log_land_d")
COLONIAL_REGRESSORS = ("comcol", "coldepever")

FE_COLUMN_MAP = {"origin": "origin_fe_key", "year": "year_fe_key",
                 "origin_year": "origin_year_fe_key"}

MAX_ITERATIONS = 200
DEVIANCE_TOL = 1e-9
ETA_BOUND = 300.0
WORK_RESID_CAP_FAR = 1e3
WORK_RESID_CAP_NEAR = 1e8


@dataclass(frozen=True)
class ModelSpec:
    """Estimation recipe: outcome, regressors, absorbed FE dimensions, cluster key."""

    outcome: str = "stock"
    regressors: tuple = DEFAULT_REGRESSORS
    fe_dims: tuple = ("origin", "year", "origin_year")
    cluster: str = "origin"
    include_intercept: bool = True
    drop_colonial: bool = False
    drop_land: bool = False

    def resolved_regressors(self) -> tuple:
        regs = list(self.regressors)
        if self.drop_colonial:
            regs = [r for r in regs if r not in COLONIAL_REGRESSORS]
        if self.drop_land:
            regs = [r for r in regs if r != "log_land_d"]
        return tuple(regs)

    def fe_columns(self) -> tuple:
        return tuple(FE_COLUMN_MAP.get(d, d) for d in self.fe_dims)


@dataclass
class FitResult:
    spec: ModelSpec
    coef: pd.Series
    se: pd.Series
    cov: pd.DataFrame
    fitted: np.ndarray
    kept_mask: np.ndarray
    fe_effects: dict
    recovered_intercept: float | None
    intercept_estimated: bool
    deviance: float
    null_deviance: float
    loglik: float
    null_loglik: float
    pseudo_r2: float
    wald_chi2: float
    wald_df: int
    wald_p: float
    n_obs: int
    n_clusters: int
    n_iterations: int
    converged: bool
    iteration_log: list
    separation_rows: np.ndarray
    singleton_rows: np.ndarray
    singleton_groups: list
    collinear_dropped: list
    cluster_scores: np.ndarray
    bread: np.ndarray
    panel_fingerprint: tuple = field(default=None)


# --- panel access helpers ----------------------------------------------------

def _frame_of(panel) -> pd.DataFrame:
    return panel.frame if hasattr(panel, "frame") else panel


def panel_fingerprint(frame: pd.DataFrame, outcome: str = "stock") -> tuple:
    key = (frame["origin"].astype(str) + "|" + frame["destination"].astype(str)
           + "|" + frame["year"].astype(str) + "|" + frame["skill"].astype(str))
    h = hashlib.sha256("\n".join(key.tolist()).encode())
    if outcome in frame.columns:
        h.update(np.ascontiguousarray(frame[outcome].to_numpy(dtype=float)).tobytes())
    return (len(frame), h.hexdigest())


def _resolve_fe_columns(frame: pd.DataFrame, spec: ModelSpec) -> list[str]:
    """Map FE dimension names to frame columns (canonical key column preferred)."""
    cols = []
    for dim in spec.fe_dims:
        mapped = FE_COLUMN_MAP.get(dim, dim)
        cols.append(mapped if mapped in frame.columns else dim)
    return cols


def _validate_spec(frame: pd.DataFrame, spec: ModelSpec) -> None:
    if frame.empty:
        raise ValueError("panel is empty")
    missing = [c for c in (spec.outcome, *spec.resolved_regressors(), spec.cluster,
                           *_resolve_fe_columns(frame, spec)) if c not in frame.columns]
    if missing:
        raise ValueError(f"panel lacks column(s) {missing}")
    y = frame[spec.outcome].to_numpy(dtype=float)
    if not np.all(np.isfinite(y)) or (y < 0).any():
        raise ValueError(f"outcome {spec.outcome!r} must be nonnegative and finite")


def _design(frame: pd.DataFrame, spec: ModelSpec) -> tuple[np.ndarray, list]:
    """Regressor matrix and names; a constant enters only when no FE dim spans it."""
    names = list(spec.resolved_regressors())
    cols = [frame[c].to_numpy(dtype=float) for c in names]
    if spec.include_intercept and not spec.fe_dims:
        cols.append(np.ones(len(frame)))
        names.append("intercept")
    X = np.column_stack(cols) if cols else np.empty((len(frame), 0))
    return X, names


def _fe_labels(frame: pd.DataFrame, spec: ModelSpec) -> list[np.ndarray]:
    return [frame[c].to_numpy() for c in _resolve_fe_columns(frame, spec)]


# --- sample preparation: separation and singletons ---------------------------

def _drop_zero_groups(y, fe_labels, kept) -> np.ndarray:
    """Rows of FE groups whose kept outcome total is zero (FE would diverge)."""
    drop = np.zeros(len(y), dtype=bool)
    for labels in fe_labels:
        codes, n_levels = hdfe.encode_groups(labels)
        totals = np.bincount(codes[kept], weights=y[kept], minlength=n_levels)
        counts = np.bincount(codes[kept], minlength=n_levels)
        bad = (counts > 0) & (totals <= 0)
        if bad.any():
            drop |= kept & bad[codes]
    return drop


def _drop_singletons(fe_labels, kept) -> tuple[np.ndarray, list]:
    """Rows that are the single member of some FE group."""
    drop = np.zeros(kept.shape, dtype=bool)
    groups = []
    for dim, labels in enumerate(fe_labels):
        codes, n_levels = hdfe.encode_groups(labels)
        counts = np.bincount(codes[kept], minlength=n_levels)
        single = counts == 1
        if single.any():
            hit = kept & single[codes]
            drop |= hit
            groups.extend((dim, labels[i]) for i in np.flatnonzero(hit))
    return drop, groups


def _rectifier(y, X, fe_labels, kept, max_iter: int = 100) -> np.ndarray:
    """Certify zero-outcome rows lying on a separating hyperplane.

    Iterates a rectified weighted regression of a candidate certificate on the
    design: positive-outcome rows carry a large weight (forcing the fitted
    certificate toward zero there), the fitted values are clipped at zero on
    the zero-outcome rows, and the procedure repeats until the direction is
    stationary. A valid certificate must be nonnegative, (near) zero on
    positive rows, and stationary under the map; its support is dropped.
    """
    rows = np.flatnonzero(kept)
    yk = y[rows]
    zero = yk == 0
    if not zero.any() or X.shape[1] + len(fe_labels) == 0:
        return np.array([], dtype=int)
    Xk = X[rows]
    dims = [hdfe.encode_groups(labels[rows]) for labels in fe_labels]
    w = np.where(zero, 1.0, 1e7)
    sw = np.sqrt(w)

    def fitted(u):
        if dims:
            stacked = np.column_stack([Xk, u])
            demeaned = hdfe.absorb(stacked, w, dims, tol=1e-11)
            Xt, ut = demeaned[:, :-1], demeaned[:, -1]
        else:
            Xt, ut = Xk, u
        if Xt.shape[1]:
            gamma, *_ = np.linalg.lstsq(sw[:, None] * Xt, sw * ut, rcond=None)
            resid = ut - Xt @ gamma
        else:
            resid = ut
        return u - resid

    u = zero.astype(float)
    z = None
    for _ in range(max_iter):
        z = fitted(u)
        u_new = np.where(zero, np.maximum(z, 0.0), 0.0)
        peak = u_new.max()
        if peak <= 1e-12:
            return np.array([], dtype=int)
        u_new /= peak
        delta = np.abs(u_new - u).max()
        u = u_new
        if delta < 1e-9:
            break
    z = fitted(u)
    stationary = np.abs(np.where(zero, z, 0.0) - u).max() < 1e-6
    nonnegative = z[zero].min() > -1e-6
    no_leak = np.abs(z[~zero]).max() < 1e-6 if (~zero).any() else True
    if not (stationary and nonnegative and no_leak):
        return np.array([], dtype=int)
    return rows[zero & (z > 1e-6)]


def _prepare_sample(y, X, fe_labels, with_singletons: bool):
    """Iterate zero-group, singleton, and rectifier drops to a joint fixpoint."""
    n = len(y)
    kept = np.ones(n, dtype=bool)
    sep = np.zeros(n, dtype=bool)
    single = np.zeros(n, dtype=bool)
    singleton_groups: list = []
    for _ in range(20):
        changed = False
        while True:
            zdrop = _drop_zero_groups(y, fe_labels, kept)
            sdrop = np.zeros(n, dtype=bool)
            if with_singletons:
                sdrop, groups = _drop_singletons(fe_labels, kept & ~zdrop)
                singleton_groups.extend(groups)
            if not (zdrop.any() or sdrop.any()):
                break
            sep |= zdrop
            single |= sdrop
            kept &= ~(zdrop | sdrop)
            changed = True
        rect = _rectifier(y, X, fe_labels, kept)
        if rect.size:
            sep[rect] = True
            kept[rect] = False
            changed = True
        if not changed:
            break
    return kept, np.flatnonzero(sep), np.flatnonzero(single), singleton_groups


def detect_separation(panel, spec: ModelSpec | None = None) -> np.ndarray:
    """Kept-row mask after removing observations with no finite PPML estimate."""
    spec = spec or ModelSpec()
    frame = _frame_of(panel)
    _validate_spec(frame, spec)
    y = frame[spec.outcome].to_numpy(dtype=float)
    X, _ = _design(frame, spec)
    kept, _, _, _ = _prepare_sample(y, X, _fe_labels(frame, spec), with_singletons=False)
    return kept


# --- numerics ----------------------------------------------------------------

def poisson_deviance(y, mu) -> float:
    return float(2.0 * np.sum(special.xlogy(y, y) - special.xlogy(y, mu) - (y - mu)))


def poisson_loglik(y, mu) -> float:
    return float(np.sum(special.xlogy(y, mu) - mu - special.gammaln(y + 1.0)))


def _sequential_collinear(Xt, w, orig_sq, names, tol: float = 1e-8):
    """Keep columns in given order while they add weighted rank; drop the rest."""
    k = Xt.shape[1]
    G = Xt.T @ (Xt * w[:, None])
    keep: list[int] = []
    dropped: list[str] = []
    for j in range(k):
        scale = max(orig_sq[j], G[j, j])
        if scale <= 0:
            dropped.append(names[j])
            continue
        if keep:
            sub = G[np.ix_(keep, keep)]
            g = G[keep, j]
            try:
                resid = G[j, j] - g @ np.linalg.solve(sub, g)
            except np.linalg.LinAlgError:
                resid = 0.0
        else:
            resid = G[j, j]
        if resid <= tol * scale:
            dropped.append(names[j])
        else:
            keep.append(j)
    return keep, dropped


def clustered_covariance(demeaned_X: np.ndarray, weights: np.ndarray,
                         response_residuals: np.ndarray, clusters) -> tuple:
    """Cluster-robust sandwich: bread^-1 (sum of cluster score outer products) bread^-1.

    Returns (covariance, bread, cluster_scores); the small-sample factor is
    G/(G-1). With one row per cluster this reduces to a heteroskedasticity-
    robust sandwich scaled by n/(n-1).
    """
    codes, n_clusters = hdfe.encode_groups(clusters)
    if n_clusters < 2:
        raise ValueError("clustered covariance requires at least 2 clusters")
    k = demeaned_X.shape[1]
    bread = demeaned_X.T @ (demeaned_X * weights[:, None])
    scores = hdfe.group_sums(demeaned_X * response_residuals[:, None], codes, n_clusters)
    if k == 0:
        return np.empty((0, 0)), bread, scores
    cond = np.linalg.cond(bread)
    if not np.isfinite(cond) or cond > 1e15:
        raise SingularBread(f"bread matrix singular (condition number {cond:.3e})")
    bread_inv = np.linalg.inv(bread)
    meat = scores.T @ scores
    cov = bread_inv @ meat @ bread_inv * (n_clusters / (n_clusters - 1.0))
    cov = (cov + cov.T) / 2.0
    return cov, bread, scores


def _combo_codes(fe_labels_kept) -> tuple[np.ndarray, list]:
    """Dense codes for the tuple of FE levels per row, plus the level tuples."""
    if not fe_labels_kept:
        return np.zeros(0, dtype=int), []
    key = pd.MultiIndex.from_arrays([pd.Series(a) for a in fe_labels_kept])
    codes, uniques = pd.factorize(key, sort=True)
    return codes.astype(np.int64), list(uniques)


def fit_ppml(panel, spec: ModelSpec | None = None) -> FitResult:
    """Fit the exponential-mean model by IRLS with absorbed fixed effects."""
    spec = spec or ModelSpec()
    frame = _frame_of(panel)
    _validate_spec(frame, spec)

    y_all = frame[spec.outcome].to_numpy(dtype=float)
    X_all, names = _design(frame, spec)
    fe_all = _fe_labels(frame, spec)
    cluster_all = frame[spec.cluster].to_numpy()

    kept, sep_rows, single_rows, single_groups = _prepare_sample(
        y_all, X_all, fe_all, with_singletons=True)
    if not kept.any():
        raise EmptyAfterSeparation(
            f"all {len(y_all)} rows dropped by separation/singleton handling")

    y = y_all[kept]
    X = X_all[kept]
    fe_dims = [hdfe.encode_groups(labels[kept]) for labels in fe_all]
    fe_labels_kept = [labels[kept] for labels in fe_all]
    n = len(y)

    ybar = y.mean()
    if ybar <= 0:
        raise EmptyAfterSeparation("outcome is identically zero on the kept sample")

    mu = (y + ybar) / 2.0
    eta = np.log(mu)
    dev = poisson_deviance(y, mu)
    keep_cols = list(range(X.shape[1]))
    dropped_collinear: list[str] = []
    iteration_log: list[dict] = []
    converged = False

    rel_change = np.inf
    for iteration in range(1, MAX_ITERATIONS + 1):
        # Damped IRLS. Far from the optimum, floor the working weights (rows
        # whose mu transiently dives keep curvature) and cap the working
        # residual (an uncapped near-zero-mu row proposes an astronomical,
        # precision-destroying move; capping it before the solve keeps the
        # direction coherent for the line search). Near the optimum both
        # safeguards are relaxed to inert levels so the fixpoint is the exact
        # MLE; the convergence test below uses the true scores either way.
        endgame = rel_change < 1e-6
        floor = ybar * (1e-14 if endgame else 1e-4)
        cap = WORK_RESID_CAP_NEAR if endgame else WORK_RESID_CAP_FAR
        w = np.maximum(mu, floor)
        z = eta + np.clip((y - mu) / w, -cap, cap)
        Xk = X[:, keep_cols]
        stacked = np.column_stack([Xk, z])
        demeaned = hdfe.absorb(stacked, w, fe_dims) if fe_dims else stacked
        Xt, zt = demeaned[:, :-1], demeaned[:, -1]

        if iteration == 1 and Xk.shape[1]:
            orig_sq = np.einsum("ij,ij->j", Xk * w[:, None], Xk)
            local, dropped = _sequential_collinear(
                Xt, w, orig_sq, [names[j] for j in keep_cols])
            if dropped:
                warnings.warn(
                    f"dropping collinear regressor(s): {dropped}",
                    CollinearRegressorWarning, stacklevel=2)
                dropped_collinear = dropped
                keep_cols = [keep_cols[j] for j in local]
                Xt = Xt[:, local]
                Xk = X[:, keep_cols]

        if Xt.shape[1]:
            gram = Xt.T @ (Xt * w[:, None])
            rhs = Xt.T @ (w * zt)
            try:
                beta = np.linalg.solve(gram, rhs)
            except np.linalg.LinAlgError:
                beta, *_ = np.linalg.lstsq(np.sqrt(w)[:, None] * Xt,
                                           np.sqrt(w) * zt, rcond=None)
            resid = zt - Xt @ beta
        else:
            beta = np.zeros(0)
            resid = zt

        eta_new = np.clip(z - resid, -ETA_BOUND, ETA_BOUND)
        mu_new = np.exp(eta_new)
        dev_new = poisson_deviance(y, mu_new)
        halvings = 0
        # The first full step is accepted unconditionally: the starting eta lies
        # outside the model span, and halving toward it would trap that
        # component. From iteration 2 every iterate is in-span and halving is a
        # guaranteed descent safeguard.
        if iteration > 1:
            while dev_new > dev + 1e-11 * (dev + 1.0) and halvings < 60:
                eta_new = (eta_new + eta) / 2.0
                mu_new = np.exp(eta_new)
                dev_new = poisson_deviance(y, mu_new)
                halvings += 1

        rel_change = abs(dev - dev_new) / (dev_new + 1.0)
        eta, mu, dev = eta_new, mu_new, dev_new

        # Convergence needs more than a flat deviance: slope scores and FE group
        # scores must vanish so that downstream FOC identities hold tightly.
        err = y - mu
        mu_total = mu.sum()
        if Xt.shape[1]:
            score = Xt.T @ err
            col_rms = np.sqrt(np.einsum("ij,ij->j", Xt * w[:, None], Xt) / w.sum())
            slope_ok = bool(np.all(np.abs(score) <= 1e-10 * np.maximum(col_rms, 1e-12)
                                   * max(mu_total, 1.0)))
            worst_score = float(np.max(np.abs(score) / (np.maximum(col_rms, 1e-12)
                                                        * max(mu_total, 1.0))))
        else:
            slope_ok = True
            worst_score = 0.0
        group_ok = True
        for codes, n_levels in fe_dims:
            gsum = np.abs(np.bincount(codes, weights=err, minlength=n_levels))
            gmu = np.maximum(np.bincount(codes, weights=mu, minlength=n_levels), 1.0)
            if np.any(gsum > 1e-9 * gmu):
                group_ok = False
                break
        iteration_log.append({"iteration": iteration, "deviance": dev,
                              "step_halvings": halvings,
                              "rel_deviance_change": rel_change,
                              "max_normalized_score": worst_score})
        if rel_change < DEVIANCE_TOL and slope_ok and group_ok and iteration > 1:
            converged = True
            break

    if not converged:
        raise NonConvergence(
            f"IRLS did not converge in {MAX_ITERATIONS} iterations "
            f"(last relative deviance change {iteration_log[-1]['rel_deviance_change']:.3e})",
            iteration_log)

    kept_names = [names[j] for j in keep_cols]
    Xk = X[:, keep_cols]

    # Canonical fitted values: exp(slope part + per-FE-combination effect), so
    # that in-sample prediction reproduces them bit for bit.
    recovered_intercept = None
    fe_effects: dict = {}
    if fe_dims:
        slope_part = Xk @ beta if Xk.shape[1] else np.zeros(n)
        a = eta - slope_part
        combo, combo_levels = _combo_codes(fe_labels_kept)
        a_bar = (np.bincount(combo, weights=a, minlength=len(combo_levels))
                 / np.bincount(combo, minlength=len(combo_levels)))
        eta = slope_part + a_bar[combo]
        mu = np.exp(eta)
        dev = poisson_deviance(y, mu)
        fe_effects = {tuple(np.atleast_1d(lv)): float(v)
                      for lv, v in zip(combo_levels, a_bar)}
        if spec.include_intercept:
            recovered_intercept = float(a.mean())

    # Final covariance at the converged weights.
    w = mu
    Xt = hdfe.absorb(Xk, w, fe_dims) if (fe_dims and Xk.shape[1]) else Xk
    err = y - mu
    if Xt.shape[1]:
        cov_mat, bread, scores = clustered_covariance(Xt, w, err, cluster_all[kept])
    else:
        codes, n_clusters_only = hdfe.encode_groups(cluster_all[kept])
        cov_mat = np.empty((0, 0))
        bread = np.empty((0, 0))
        scores = np.empty((n_clusters_only, 0))
    n_clusters = scores.shape[0]
    se = np.sqrt(np.diag(cov_mat)) if cov_mat.size else np.zeros(0)

    loglik = poisson_loglik(y, mu)
    mu0 = np.full(n, ybar)
    null_loglik = poisson_loglik(y, mu0)
    null_deviance = poisson_deviance(y, mu0)
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

    return FitResult(
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
        panel_fingerprint=panel_fingerprint(frame, spec.outcome),
    )


def predict(fit: FitResult, panel) -> np.ndarray:
    """Fitted means for the rows of `panel` under the estimated model."""
    frame = _frame_of(panel)
    X_all, names = _design(frame, fit.spec)
    name_to_col = {nm: j for j, nm in enumerate(names)}
    missing = [nm for nm in fit.coef.index if nm not in name_to_col]
    if missing:
        raise ValueError(f"panel lacks regressor column(s) {missing}")
    X = X_all[:, [name_to_col[nm] for nm in fit.coef.index]]
    beta = fit.coef.to_numpy()
    slope_part = X @ beta if X.shape[1] else np.zeros(len(frame))
    if fit.spec.fe_dims:
        labels = _fe_labels(frame, fit.spec)
        effects = np.empty(len(frame))
        for i in range(len(frame)):
            combo = tuple(lab[i] for lab in labels)
            if combo not in fit.fe_effects:
                raise UnknownFELevel(f"fixed-effect combination {combo} unseen at fit time")
            effects[i] = fit.fe_effects[combo]
        eta = slope_part + effects
    else:
        eta = slope_part
    return np.exp(eta)


def fit_statistics(fit: FitResult) -> tuple[float, float, float, int]:
    """(pseudo R2, Wald chi2 of all slopes, deviance, observation count)."""
    return fit.pseudo_r2, fit.wald_chi2, fit.deviance, fit.n_obs


def first_order_conditions(fit: FitResult, panel) -> dict:
    """Score sums of the converged fit, normalized by the fitted-mean total."""
    frame = _frame_of(panel)
    kept = fit.kept_mask
    y = frame[fit.spec.outcome].to_numpy(dtype=float)[kept]
    err = y - fit.fitted
    mu_total = float(fit.fitted.sum())
    X_all, names = _design(frame, fit.spec)
    name_to_col = {nm: j for j, nm in enumerate(names)}
    out = {"mu_total": mu_total, "regressor": {}, "fe_groups": {}}
    for nm in fit.coef.index:
        x = X_all[kept, name_to_col[nm]]
        out["regressor"][nm] = float(np.abs(np.sum(x * err)))
    for dim, col in zip(fit.spec.fe_dims, _resolve_fe_columns(frame, fit.spec)):
        codes, n_levels = hdfe.encode_groups(frame[col].to_numpy()[kept])
        sums = np.bincount(codes, weights=err, minlength=n_levels)
        out["fe_groups"][dim] = float(np.abs(sums).max())
    return out


def fit_to_dict(fit: FitResult) -> dict:
    """JSON-ready summary with deterministic field order."""
    from ._io import SCHEMA_VERSION

    coef_rows = []
    for nm in fit.coef.index:
        est = float(fit.coef[nm])
        se = float(fit.se[nm])
        z = est / se if se > 0 else float("nan")
        p = float(2.0 * stats.norm.sf(abs(z))) if np.isfinite(z) else float("nan")
        coef_rows.append({"name": nm, "estimate": est, "se": se, "z": z, "p": p})
    if fit.recovered_intercept is not None:
        coef_rows.append({"name": "constant_recovered",
                          "estimate": fit.recovered_intercept,
                          "se": None, "z": None, "p": None})

    def _row_list(idx):
        idx = [int(i) for i in np.asarray(idx)]
        return {"count": len(idx), "rows": idx[:1000], "truncated": len(idx) > 1000}

    return {
        "schema_version": SCHEMA_VERSION,
        "spec": {
            "outcome": fit.spec.outcome,
            "regressors": list(fit.spec.resolved_regressors()),
            "fe_dims": list(fit.spec.fe_dims),
            "cluster": fit.spec.cluster,
            "include_intercept": fit.spec.include_intercept,
            "drop_colonial": fit.spec.drop_colonial,
            "drop_land": fit.spec.drop_land,
        },
        "coefficients": coef_rows,
        "statistics": {
            "n_obs": int(fit.n_obs),
            "n_clusters": int(fit.n_clusters),
            "deviance": fit.deviance,
            "null_deviance": fit.null_deviance,
            "loglik": fit.loglik,
            "null_loglik": fit.null_loglik,
            "pseudo_r2": fit.pseudo_r2,
            "wald_chi2": fit.wald_chi2,
            "wald_df": int(fit.wald_df),
            "wald_p": fit.wald_p,
            "iterations": int(fit.n_iterations),
            "converged": bool(fit.converged),
        },
        "dropped": {
            "separation": _row_list(fit.separation_rows),
            "singletons": _row_list(fit.singleton_rows),
            "collinear_regressors": list(fit.collinear_dropped),
        },
        "iteration_log": fit.iteration_log,
    }
