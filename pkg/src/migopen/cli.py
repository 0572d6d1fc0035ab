"""Command-line pipeline: ingest -> fit -> measures -> validation.

Commands hand off through file artifacts in the output directory. Data go to
files, summaries to stdout, logging to stderr. Exit codes: 0 success, 2 input
validation, 3 non-convergence, 4 missing prerequisites, 5 dense-oracle guard.
"""
from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import analysis, estimator, ingest, openness, report, simlab
from ._io import SCHEMA_VERSION, sha256_file, write_frame_csv, write_json
from .errors import MigopenError, NonConvergence, SchemaError, TooLargeForDense

log = logging.getLogger("migopen")

OUT_ENV_VAR = "MIGOPEN_OUT"

RESIDUAL_COLUMNS = ["origin", "destination", "year", "skill", "actual", "fitted",
                    "residual", "pop_d", "contig"]


class MissingPrerequisite(MigopenError):
    """A command lacks the artifacts or inputs it needs."""


@dataclass
class RunConfig:
    stocks: str | None = None
    dyads: str | None = None
    countries: str | None = None
    external: str | None = None
    years: tuple | None = None
    skill: str = "all"
    min_pop: float = 1.2e6
    cutoff: float = 10.0
    cutoff_sweep: tuple = ()
    exclude_contiguous: bool = False
    drop_colonial: bool = False
    drop_land: bool = False
    out: str = ""
    seed: int | None = None
    n_countries: int = 20
    zero_share: float = 0.75
    oracle: bool = True
    verbose: int = 0

    def __post_init__(self):
        if not self.out:
            self.out = os.environ.get(OUT_ENV_VAR, "out")

    def out_dir(self) -> Path:
        return Path(self.out)


_CONFIG_PARSERS = {
    "stocks": str, "dyads": str, "countries": str, "external": str,
    "years": lambda v: tuple(int(x) for x in str(v).split(",") if x.strip()),
    "skill": str,
    "min_pop": float,
    "cutoff": float,
    "cutoff_sweep": lambda v: tuple(float(x) for x in str(v).split(",") if x.strip()),
    "exclude_contiguous": lambda v: str(v).lower() in ("1", "true", "yes", "on"),
    "drop_colonial": lambda v: str(v).lower() in ("1", "true", "yes", "on"),
    "drop_land": lambda v: str(v).lower() in ("1", "true", "yes", "on"),
    "out": str,
    "seed": int,
    "n_countries": int,
    "zero_share": float,
    "oracle": lambda v: str(v).lower() in ("1", "true", "yes", "on"),
    "verbose": int,
}


def load_config_file(path) -> dict:
    """Flat key = value text format; unknown keys are rejected."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SchemaError(f"config {path}: line {lineno} is not 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_PARSERS:
            raise SchemaError(f"config {path}: unknown key {key!r} at line {lineno}")
        values[key] = _CONFIG_PARSERS[key](value.strip())
    return values


def _merge_config(args: argparse.Namespace) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        base.update(load_config_file(args.config))
    valid = {f.name for f in fields(RunConfig)}
    for key in valid:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            base[key] = cli_val
    return RunConfig(**base)


def _update_run_meta(out_dir: Path, command: str, inputs: dict, artifacts: list,
                     extra: dict | None = None) -> None:
    meta_path = out_dir / "run_meta.json"
    meta = {"schema_version": SCHEMA_VERSION, "created_at": None, "commands": {}}
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError:
            pass
    meta["schema_version"] = SCHEMA_VERSION
    meta["created_at"] = dt.datetime.now(dt.timezone.utc).isoformat()

    def rel(a):
        try:
            return str(Path(a).relative_to(out_dir))
        except ValueError:
            return str(a)

    entry = {"inputs": inputs, "artifacts": sorted(rel(a) for a in artifacts)}
    if extra:
        entry.update(extra)
    meta.setdefault("commands", {})[command] = entry
    write_json(meta_path, meta)


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise MissingPrerequisite(
            f"missing required input path(s): {', '.join('--' + m for m in missing)}")


def _load_tables(cfg: RunConfig):
    _require(cfg, "stocks", "dyads", "countries")
    stocks = ingest.load_stock_table(cfg.stocks)
    dyads = ingest.load_dyad_table(cfg.dyads)
    countries = ingest.load_indicator_table(cfg.countries)
    return stocks, dyads, countries


def _model_spec(cfg: RunConfig) -> estimator.ModelSpec:
    return estimator.ModelSpec(drop_colonial=cfg.drop_colonial, drop_land=cfg.drop_land)


def _fit_skill(stocks, dyads, countries, cfg: RunConfig, skill: str):
    panel = ingest.build_panel(stocks, dyads, countries,
                               ingest.PanelFilter(min_population=cfg.min_pop,
                                                  years=cfg.years, skill=skill))
    fit = estimator.fit_ppml(panel, _model_spec(cfg))
    return panel, fit


def _write_panel_artifacts(out_dir: Path, panel, fit=None) -> list:
    artifacts = []
    panel_csv = out_dir / "panel.csv"
    write_frame_csv(panel_csv, panel.frame)
    artifacts.append(panel_csv)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "input_digests": panel.input_digests,
        "filter_log": panel.filter_log,
        "n_rows": int(len(panel.frame)),
    }
    meta_path = out_dir / "panel_meta.json"
    write_json(meta_path, meta)
    artifacts.append(meta_path)
    return artifacts


def cmd_fit(cfg: RunConfig) -> int:
    if cfg.skill == "split":
        raise SchemaError("fit takes a single skill (all, tertiary, or nontertiary)")
    stocks, dyads, countries = _load_tables(cfg)
    out_dir = cfg.out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    panel, fit = _fit_skill(stocks, dyads, countries, cfg, cfg.skill)
    log.info("fit converged in %d iterations on %d rows", fit.n_iterations, fit.n_obs)

    artifacts = _write_panel_artifacts(out_dir, panel)
    fit_path = out_dir / "fit.json"
    fit_dict = estimator.fit_to_dict(fit)
    write_json(fit_path, fit_dict)
    artifacts.append(fit_path)

    rm = openness.residual_matrix(fit, panel)
    resid_path = out_dir / "residuals.csv"
    write_frame_csv(resid_path, rm.frame[RESIDUAL_COLUMNS])
    artifacts.append(resid_path)

    print(f"PPML fit: n={fit.n_obs}, clusters={fit.n_clusters}, "
          f"pseudo_r2={fit.pseudo_r2:.4f}, wald_chi2={fit.wald_chi2:.1f}")
    print(f"{'coefficient':<16}{'estimate':>12}{'se':>12}")
    for row in fit_dict["coefficients"]:
        se_txt = f"{row['se']:>12.4f}" if row["se"] is not None else f"{'-':>12}"
        print(f"{row['name']:<16}{row['estimate']:>12.4f}{se_txt}")

    _update_run_meta(out_dir, "fit", panel.input_digests, artifacts,
                     {"skill": cfg.skill, "years": panel.filter_log["years"]})
    return 0


def _residual_matrices(cfg: RunConfig, skills: list) -> tuple[dict, dict, object]:
    """Residual matrices per skill, a region map, and the indicator table.

    Prefers fresh inputs; falls back to a residuals.csv artifact from a
    previous fit run.
    """
    out_dir = cfg.out_dir()
    have_inputs = all(getattr(cfg, n) is not None for n in ("stocks", "dyads", "countries"))
    matrices = {}
    region_map: dict = {}
    indicators = None
    if have_inputs:
        stocks, dyads, countries = _load_tables(cfg)
        indicators = countries
        region_map = countries.region_map()
        for skill in skills:
            panel, fit = _fit_skill(stocks, dyads, countries, cfg, skill)
            matrices[skill] = openness.residual_matrix(fit, panel)
        return matrices, region_map, indicators

    resid_path = out_dir / "residuals.csv"
    if not resid_path.exists():
        raise MissingPrerequisite(
            f"no input tables given and no fit artifact at {resid_path}")
    frame = pd.read_csv(resid_path)
    missing = [c for c in RESIDUAL_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(f"residuals.csv lacks column(s) {missing}")
    if cfg.countries is not None:
        indicators = ingest.load_indicator_table(cfg.countries)
        region_map = indicators.region_map()
    for skill in skills:
        sub = frame[frame["skill"] == skill].reset_index(drop=True)
        if sub.empty and not frame.empty:
            raise MissingPrerequisite(
                f"residuals.csv has no rows for skill {skill!r}; rerun fit or pass inputs")
        matrices[skill] = openness.ResidualMatrix(frame=sub)
    return matrices, region_map, indicators


def cmd_openness(cfg: RunConfig) -> int:
    out_dir = cfg.out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    skills = ["tertiary", "nontertiary"] if cfg.skill == "split" else [cfg.skill]
    matrices, region_map, indicators = _residual_matrices(cfg, skills)

    artifacts = []
    all_records = []
    for skill in skills:
        rec = openness.openness_records(matrices[skill], cfg.cutoff, region_map)
        all_records.append(rec)
    records = pd.concat(all_records, ignore_index=True)

    if records.empty or records["diversity"].dropna().empty:
        print("no destinations passed filters; empty measure set")
        empty = records if len(records.columns) else pd.DataFrame(
            columns=openness.RECORD_COLUMNS)
        write_frame_csv(out_dir / "openness.csv", empty)
        _update_run_meta(out_dir, "openness", {}, [out_dir / "openness.csv"])
        return 0

    openness_path = out_dir / "openness.csv"
    write_frame_csv(openness_path, records)
    artifacts.append(openness_path)

    # Decadal changes: the all-skill (or single-skill) path only; the skill
    # split is a levels comparison.
    change_frames = []
    region_mean_frames = []
    global_means = {}
    if cfg.skill != "split":
        rec = all_records[0]
        years = sorted(rec["year"].unique())
        for y0, y1 in zip(years, years[1:]):
            if y1 - y0 != 10:
                continue
            chg = openness.openness_change(rec[rec["year"] == y1],
                                           rec[rec["year"] == y0], region_map)
            change_frames.append(chg.deltas)
            region_mean_frames.append(chg.region_means)
            global_means[f"{y0}-{y1}"] = chg.global_mean
        changes = (pd.concat(change_frames, ignore_index=True) if change_frames
                   else pd.DataFrame(columns=["destination", "period",
                                              "delta_diversity", "region"]))
        changes_path = out_dir / "changes.csv"
        write_frame_csv(changes_path,
                        changes[["destination", "period", "delta_diversity", "region"]]
                        if len(changes) else changes)
        artifacts.append(changes_path)

    sweep_info = {}
    if cfg.cutoff_sweep:
        sweep = openness.cutoff_sweep(matrices[skills[0]], sorted(cfg.cutoff_sweep))
        sweep_path = out_dir / "cutoff_sweep.csv"
        write_frame_csv(sweep_path, sweep.table)
        artifacts.append(sweep_path)
        sweep_info = {
            "rank_correlations": sweep.rank_correlations.to_dict(orient="records")}
        for row in sweep.rank_correlations.itertuples():
            print(f"rank correlation cutoff {row.cutoff_a:g} vs {row.cutoff_b:g}: "
                  f"{row.spearman:.4f}")

    split_info = {}
    if cfg.skill == "split":
        split = openness.skill_split_openness(matrices["tertiary"],
                                              matrices["nontertiary"], cfg.cutoff)
        population = indicators.frame if indicators is not None else None
        plotdata = openness.skill_plotdata(split, population, region_map)
        plot_path = out_dir / "plotdata_skill_openness.csv"
        write_frame_csv(plot_path, plotdata)
        artifacts.append(plot_path)
        fig_path = out_dir / "skill_openness_scatter.png"
        report.render_skill_scatter(plotdata, fig_path)
        artifacts.append(fig_path)
        split_info = {"cross_skill_correlation": split.correlation,
                      "means": split.means.to_dict(orient="records")}
        print(f"cross-skill correlation of diversity: {split.correlation:.4f}")
        for row in split.means.itertuples():
            print(f"mean openness {int(row.year)}: tertiary {row.mean_tertiary:.2f}, "
                  f"non-tertiary {row.mean_nontertiary:.2f}")

    if region_mean_frames:
        region_means = pd.concat(region_mean_frames, ignore_index=True)
        if len(region_means):
            fig_path = out_dir / "openness_change_by_region.png"
            report.render_region_change(region_means, fig_path)
            artifacts.append(fig_path)

    # Printed summary: most open destinations in the latest year.
    main_skill = skills[0]
    rec = all_records[0]
    latest = int(rec["year"].max())
    scale_col = "scale_excl_contig" if cfg.exclude_contiguous else "scale_all"
    top = (rec[(rec["year"] == latest)]
           .dropna(subset=["diversity"])
           .sort_values(["diversity", scale_col], ascending=False, kind="mergesort")
           .head(10))
    print(f"top destinations by diversity ({main_skill}, {latest}):")
    for row in top.itertuples():
        print(f"  {row.destination}: {int(row.diversity)}")
    for key, gm in global_means.items():
        print(f"global mean change in diversity ({key}): {gm:.4f}")

    _update_run_meta(out_dir, "openness", {}, artifacts,
                     {"skills": skills, "cutoff": cfg.cutoff,
                      "global_mean_changes": global_means, **sweep_info, **split_info})
    return 0


def cmd_validate(cfg: RunConfig) -> int:
    out_dir = cfg.out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.external is None:
        raise MissingPrerequisite("validate needs --external external_measures.csv")
    external = analysis.load_external_measures(cfg.external)

    have_inputs = all(getattr(cfg, n) is not None for n in ("stocks", "dyads", "countries"))
    openness_path = out_dir / "openness.csv"
    if have_inputs:
        stocks, dyads, countries = _load_tables(cfg)
        indicators = countries
        region_map = countries.region_map()
        panel, fit = _fit_skill(stocks, dyads, countries, cfg, "all")
        rm = openness.residual_matrix(fit, panel)
        records = openness.openness_records(rm, cfg.cutoff, region_map)
    elif openness_path.exists() and cfg.countries is not None:
        records = pd.read_csv(openness_path)
        records = records[(records["skill"] == "all")
                          & (records["cutoff_per_million"] == cfg.cutoff)]
        if records.empty:
            raise MissingPrerequisite(
                "openness.csv has no skill=all rows at the requested cutoff")
        indicators = ingest.load_indicator_table(cfg.countries)
    else:
        raise MissingPrerequisite(
            "validate needs either the three input tables or a prior openness.csv "
            "plus --countries")

    panel = analysis.measure_panel(records, external)
    usable = [c for c in analysis.MEASURE_COLUMNS if panel[c].notna().sum() >= 3]
    skipped = [c for c in analysis.MEASURE_COLUMNS if c not in usable]
    if skipped:
        log.warning("skipping all-null measure column(s): %s", skipped)
    corr = analysis.pearson_correlations(panel, usable)
    corr_path = out_dir / "correlations.csv"
    write_frame_csv(corr_path, corr.long_form())

    fd = analysis.build_fd_dataset(indicators, records)
    results = {"aging": analysis.nested_fd_regressions(fd, "delta_old"),
               "wages": analysis.nested_fd_regressions(fd, "delta_lnw")}
    reg_path = out_dir / "regression.json"
    reg_dict = analysis.regressions_to_dict(
        {"aging": results["aging"], "wages": results["wages"]})
    write_json(reg_path, reg_dict)

    for outcome, runs in results.items():
        full = runs[-1]
        row = full.table[full.table["name"] == "delta_open"]
        if len(row):
            est = float(row["estimate"].iloc[0])
            se = float(row["se"].iloc[0])
            print(f"{outcome}: delta_open coefficient {est:.4f} (se {se:.4f}), "
                  f"n={full.n_obs}, adj_r2={full.adj_r2:.3f}")
    print(f"correlations over {len(usable)} measure columns written to {corr_path.name}")

    _update_run_meta(out_dir, "validate", {"external": sha256_file(cfg.external)},
                     [corr_path, reg_path],
                     {"fd_counts": fd.counts, "skipped_columns": skipped})
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise SchemaError("simulate requires --seed")
    out_dir = cfg.out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    params = simlab.WorldParams(
        n_countries=cfg.n_countries,
        years=cfg.years or (2000, 2010, 2020),
        target_zero_share=cfg.zero_share,
        seed=cfg.seed,
    )
    panel, truth = simlab.generate_world(params)
    artifacts = _write_panel_artifacts(out_dir, panel)
    truth_path = out_dir / "world_truth.json"
    write_json(truth_path, simlab.truth_to_dict(truth))
    artifacts.append(truth_path)

    spec = _model_spec(cfg)
    fit = estimator.fit_ppml(panel, spec)
    report_dict = {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "n_countries": cfg.n_countries,
        "zero_share_target": cfg.zero_share,
        "zero_share_observed": float((panel.frame["stock"] == 0).mean()),
        "true_beta": truth.beta,
        "fit_beta": {k: float(v) for k, v in fit.coef.items()},
        "fit_se": {k: float(v) for k, v in fit.se.items()},
    }
    if cfg.oracle:
        oracle = simlab.dense_ppml_oracle(panel, spec)
        common = [k for k in fit.coef.index if k in oracle.coef.index]
        gaps = {k: abs(float(fit.coef[k]) - float(oracle.coef[k])) /
                max(abs(float(oracle.coef[k])), 1e-12) for k in common}
        report_dict["oracle_beta"] = {k: float(v) for k, v in oracle.coef.items()}
        report_dict["max_relative_coefficient_gap"] = max(gaps.values()) if gaps else 0.0
        fitted_gap = float(np.max(np.abs(fit.fitted - oracle.fitted)
                                  / np.maximum(np.abs(oracle.fitted), 1e-300)))
        report_dict["max_relative_fitted_gap"] = fitted_gap
    recovery_path = out_dir / "recovery.json"
    write_json(recovery_path, report_dict)
    artifacts.append(recovery_path)

    print(f"simulated world: seed={cfg.seed}, countries={cfg.n_countries}, "
          f"rows={len(panel.frame)}, zero share={report_dict['zero_share_observed']:.3f}")
    for name, true_val in truth.beta.items():
        est_val = report_dict["fit_beta"].get(name, float("nan"))
        print(f"  {name}: true {true_val:+.4f}, estimated {est_val:+.4f}")
    if cfg.oracle:
        print(f"max |fit - oracle| relative coefficient gap: "
              f"{report_dict['max_relative_coefficient_gap']:.2e}")

    _update_run_meta(out_dir, "simulate", {"seed": cfg.seed}, artifacts)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="migopen",
        description="Gravity-model residual measures of de facto openness to immigration")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--stocks", help="bilateral stocks CSV")
        p.add_argument("--dyads", help="dyad covariates CSV")
        p.add_argument("--countries", help="country-year indicators CSV")
        p.add_argument("--external", help="external measures CSV")
        p.add_argument("--years", type=lambda v: tuple(int(x) for x in v.split(",")),
                       help="comma-separated years, e.g. 2000,2010,2020")
        p.add_argument("--skill", choices=["all", "tertiary", "nontertiary", "split"])
        p.add_argument("--min-pop", dest="min_pop", type=float,
                       help="destination population floor (default 1.2e6)")
        p.add_argument("--cutoff", type=float,
                       help="diversity cutoff per million (default 10)")
        p.add_argument("--cutoff-sweep", dest="cutoff_sweep",
                       type=lambda v: tuple(float(x) for x in v.split(",")),
                       help="comma-separated cutoffs for the sensitivity sweep")
        p.add_argument("--exclude-contiguous", dest="exclude_contiguous",
                       action="store_const", const=True,
                       help="rank summaries by the contiguity-excluded scale")
        p.add_argument("--drop-colonial", dest="drop_colonial",
                       action="store_const", const=True,
                       help="model variant without colonial controls")
        p.add_argument("--drop-land", dest="drop_land", action="store_const", const=True,
                       help="model variant without land area control")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV_VAR} or ./out)")
        p.add_argument("--seed", type=int, help="seed for simulate mode")
        p.add_argument("--verbose", "-v", action="count",
                       help="increase stderr logging")

    p_fit = sub.add_parser("fit", help="build the panel and fit the gravity model")
    add_common(p_fit)
    p_open = sub.add_parser("openness", help="compute openness measures and figures")
    add_common(p_open)
    p_val = sub.add_parser("validate", help="correlations and first-difference regressions")
    add_common(p_val)
    p_sim = sub.add_parser("simulate", help="generate a synthetic world and recovery report")
    add_common(p_sim)
    p_sim.add_argument("--n-countries", dest="n_countries", type=int,
                       help="number of synthetic countries (default 20)")
    p_sim.add_argument("--zero-share", dest="zero_share", type=float,
                       help="target share of zero cells (default 0.75)")
    p_sim.add_argument("--no-oracle", dest="oracle", action="store_const", const=False,
                       help="skip the dense-oracle comparison")
    return parser


_HANDLERS = {"fit": cmd_fit, "openness": cmd_openness, "validate": cmd_validate,
             "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _merge_config(args)
    except (SchemaError, ValueError, TypeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    level = logging.WARNING - 10 * min(cfg.verbose or 0, 2)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _HANDLERS[args.command](cfg)
    except NonConvergence as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except MissingPrerequisite as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    except TooLargeForDense as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 5
    except (MigopenError, FileNotFoundError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
