"""Gravity-model residual measures of de facto openness to immigration."""

from .analysis import (build_fd_dataset, load_external_measures, measure_panel,
                       nested_fd_regressions, ols_hc_robust, pearson_correlations)
from .estimator import (FitResult, ModelSpec, clustered_covariance, detect_separation,
                        fit_ppml, fit_statistics, predict)
from .hdfe import absorb
from .ingest import (DyadTable, EstimationPanel, IndicatorTable, PanelFilter, StockTable,
                     build_panel, load_dyad_table, load_indicator_table, load_stock_table)
from .openness import (ResidualMatrix, cutoff_sweep, diversity_openness, openness_change,
                       openness_records, residual_matrix, scale_openness,
                       skill_split_openness)
from .simlab import (OpennessShock, TruthRecord, WorldParams, dense_ppml_oracle,
                     generate_world, recount_diversity_oracle, world_tables)

__version__ = "0.1.0"

__all__ = [
    "FitResult", "ModelSpec", "PanelFilter", "EstimationPanel", "ResidualMatrix",
    "StockTable", "DyadTable", "IndicatorTable", "WorldParams", "OpennessShock",
    "TruthRecord",
    "absorb", "build_fd_dataset", "build_panel", "clustered_covariance", "cutoff_sweep",
    "dense_ppml_oracle", "detect_separation", "diversity_openness", "fit_ppml",
    "fit_statistics", "generate_world", "load_dyad_table", "load_external_measures",
    "load_indicator_table", "load_stock_table", "measure_panel", "nested_fd_regressions",
    "ols_hc_robust", "openness_change", "openness_records", "pearson_correlations",
    "predict", "recount_diversity_oracle", "residual_matrix", "scale_openness",
    "skill_split_openness", "world_tables",
]
