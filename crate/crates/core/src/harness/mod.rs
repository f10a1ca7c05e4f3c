//! Experiment configs, grid runs with validation-based selection, run
//! records, the speed benchmark and the density figure data.

mod audit;
mod config;
mod density;
mod gradcheck;
mod record;
mod speed;
mod train;

pub use audit::{
    constant_testbed, run_audit_case, run_audit_suite, standard_audit_cases, variance_comparison, AuditCase,
    AuditOutcome, Expectation, VarianceComparison, TABLE_BITS, TABLE_SEED,
};
pub use config::{
    canonical_hash, AuditSettings, DensitySettings, ExperimentConfig, SpeedSettings, SsvaeSettings, Task,
    DEFAULT_ALPHAS, DEFAULT_ANNEAL_INTERVALS, DEFAULT_ANNEAL_RATES, DEFAULT_LEARNING_RATES,
};
pub use density::{emit_density_figure_data, simplex_grid, DensityFigure, DensityPoint, SampleMean};
pub use gradcheck::{run_gradient_checks, GradCheck, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
pub use record::{
    parse_metrics_csv, select, CellSpec, CellStatus, Goal, MetricRow, RunRecord, Selection, TimingRow,
    METRICS_HEADER, TIMINGS_HEADER,
};
pub use speed::{run_speed_benchmark, SpeedReport, SpeedRow, SpeedupRow, REFERENCE_SPEEDUPS};
pub use train::{
    build_estimator_model, cell_hash, default_workers, grid_cells, prepare_data, run_cell, run_grid, run_grid_with, selection_metric,
    ssvae_dims, train_estimator_cell, train_ssvae_cell, GridReport, TaskData,
};

#[cfg(test)]
mod tests;
