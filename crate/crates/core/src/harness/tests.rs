use std::collections::HashSet;

use super::*;
use crate::data::{Binarization, DataSource};
use crate::estimators::EstimatorKind;
use crate::models::InferenceMode;

const GOLDEN_METRICS: &str = include_str!("../../fixtures/golden-metrics.csv");

fn tiny(task: Task) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(task);
    c.data = DataSource::Fixture;
    c.estimators = vec![EstimatorKind::Gs, EstimatorKind::St];
    c.learning_rates = vec![1e-2, 1e-3];
    c.anneal_rates = vec![1e-3];
    c.anneal_intervals = vec![5];
    c.alphas = vec![0.5];
    c.seeds = vec![0, 1];
    c.steps = 20;
    c.batch_size = 10;
    c.eval_every = 10;
    c.eval_m = 4;
    c.eval_examples = 6;
    c.ssvae.labeled = 20;
    c.ssvae.modes = vec![InferenceMode::Gumbel];
    c
}

#[test]
fn minimal_config_gets_desk_defaults() {
    let c = ExperimentConfig::from_json_str(r#"{"task": "vae"}"#).unwrap();
    assert_eq!(c.learning_rates, DEFAULT_LEARNING_RATES.to_vec());
    assert_eq!(c.anneal_rates, DEFAULT_ANNEAL_RATES.to_vec());
    assert_eq!(c.anneal_intervals, DEFAULT_ANNEAL_INTERVALS.to_vec());
    assert_eq!(c.alphas, DEFAULT_ALPHAS.to_vec());
    assert_eq!((c.steps, c.batch_size, c.eval_every, c.eval_m), (5000, 100, 1000, 1000));
    assert_eq!(c.momentum, 0.9);
    assert_eq!(c.anneal_floor, 0.5);
    assert_eq!(c.estimators.len(), 8);
    assert_eq!(c.ssvae.anneal.rate, 3e-5);
    assert_eq!(c.ssvae.anneal.update_every, 2000);
    assert_eq!(c, ExperimentConfig::new(Task::Vae));
}

#[test]
fn invalid_configs_are_rejected() {
    for bad in [
        r#"{"task": "sbn", "learning_rates": []}"#,
        r#"{"task": "sbn", "steps": 0}"#,
        r#"{"task": "sbn", "seeds": []}"#,
        r#"{"task": "sbn", "scale": 0}"#,
        r#"{"task": "sbn", "alphas": [-1]}"#,
        r#"{"task": "sbn", "lr": [0.1]}"#,
        r#"{"task": "bogus"}"#,
        r#"{"task": "density", "density": {"probs": [0.2, 0.2, 0.3, 0.3]}}"#,
    ] {
        let e = ExperimentConfig::from_json_str(bad).unwrap_err();
        assert_eq!(e.kind(), "config", "{bad}");
    }
}

#[test]
fn config_hash_survives_reserialization() {
    let c = tiny(Task::Sbn);
    let again = ExperimentConfig::from_json_str(&c.to_json_pretty().unwrap()).unwrap();
    assert_eq!(canonical_hash(&c).unwrap(), canonical_hash(&again).unwrap());
    let mut d = c.clone();
    d.learning_rates[0] = 2e-2;
    assert_ne!(canonical_hash(&c).unwrap(), canonical_hash(&d).unwrap());
}

#[test]
fn cell_hash_ignores_seed_but_not_hyperparameters() {
    let c = tiny(Task::Sbn);
    let cells = grid_cells(&c).unwrap();
    let mut more_seeds = c.clone();
    more_seeds.seeds = vec![5, 6, 7];
    assert_eq!(cell_hash(&c, &cells[0]).unwrap(), cell_hash(&more_seeds, &cells[0]).unwrap());
    assert_ne!(cell_hash(&c, &cells[0]).unwrap(), cell_hash(&c, &cells[1]).unwrap());
}

#[test]
fn default_grids_have_the_expected_size() {
    let sbn = grid_cells(&ExperimentConfig::new(Task::Sbn)).unwrap();
    assert_eq!(sbn.len(), 8 * 6);
    // gs and st_gs also sweep 2 rates x 2 intervals
    let vae = grid_cells(&ExperimentConfig::new(Task::Vae)).unwrap();
    assert_eq!(vae.len(), 6 * 6 + 2 * 6 * 4);
    let ssvae = grid_cells(&ExperimentConfig::new(Task::Ssvae)).unwrap();
    assert_eq!(ssvae.len(), 3 * 6 * 5);
    let ids: HashSet<String> = vae.iter().map(|c| c.id(0)).collect();
    assert_eq!(ids.len(), vae.len());
    assert!(grid_cells(&ExperimentConfig::new(Task::Audit)).is_err());
}

fn record(method: EstimatorKind, lr: f64, seed: u64, valid: f64, test: f64) -> RunRecord {
    let cell = CellSpec {
        estimator: Some(method),
        mode: None,
        lr,
        anneal: None,
        alpha: None,
    };
    let mut r = RunRecord {
        task: "sbn".into(),
        cell_id: cell.id(seed),
        cell,
        config_hash: String::new(),
        master_seed: 0,
        seed,
        binarization: String::new(),
        status: CellStatus::Completed,
        metrics: Vec::new(),
        timings: Vec::new(),
    };
    r.push_metric(10, "valid", "nll", valid + 1.0).unwrap();
    r.push_metric(20, "valid", "nll", valid).unwrap();
    r.push_metric(20, "test", "nll", test).unwrap();
    r
}

#[test]
fn selection_never_looks_at_test_scores() {
    // the cell with the best test score has the worst validation score
    let records = vec![
        record(EstimatorKind::Gs, 1e-3, 0, 5.0, 9.0),
        record(EstimatorKind::Gs, 1e-2, 0, 7.0, 1.0),
        record(EstimatorKind::St, 1e-3, 0, 6.0, 6.5),
    ];
    let sel = select(&records, "nll", Goal::Minimize);
    assert_eq!(sel.len(), 2);
    let gs = sel.iter().find(|s| s.method == "gs").unwrap();
    assert_eq!((gs.cell.lr, gs.valid, gs.test), (1e-3, 5.0, 9.0));
    let sel = select(&records, "nll", Goal::Maximize);
    let gs = sel.iter().find(|s| s.method == "gs").unwrap();
    assert_eq!((gs.cell.lr, gs.test), (1e-2, 1.0));
}

#[test]
fn failed_cells_are_skipped_and_counted() {
    let mut bad = record(EstimatorKind::Gs, 1e-1, 0, 0.0, 0.0);
    bad.status = CellStatus::Failed {
        step: 3,
        error: "non-finite cost".into(),
    };
    let records = vec![bad, record(EstimatorKind::Gs, 1e-3, 0, 5.0, 9.0)];
    let sel = select(&records, "nll", Goal::Minimize);
    assert_eq!(sel[0].failed_cells, 1);
    assert_eq!(sel[0].cell.lr, 1e-3);
}

#[test]
fn metric_steps_must_increase_per_series() {
    let mut r = record(EstimatorKind::Gs, 1e-3, 0, 5.0, 9.0);
    assert!(r.push_metric(20, "valid", "nll", 1.0).is_err());
    assert!(r.push_metric(15, "valid", "nll", 1.0).is_err());
    r.push_metric(20, "train", "loss", 1.0).unwrap();
    r.push_metric(30, "valid", "nll", 1.0).unwrap();
}

#[test]
fn metrics_csv_round_trips_exactly() {
    let mut r = record(EstimatorKind::Gs, 1e-3, 0, 5.0, 9.0);
    r.push_metric(30, "valid", "nll", 0.1 + 0.2).unwrap();
    r.push_metric(30, "train", "loss", -1.0 / 3.0).unwrap();
    let csv = r.metrics_csv();
    assert!(csv.starts_with("step,split,metric,value\n"));
    assert_eq!(parse_metrics_csv(&csv).unwrap(), r.metrics);
    assert!(parse_metrics_csv("a,b\n").is_err());
    assert!(parse_metrics_csv("step,split,metric,value\n1,x,y\n").is_err());
}

fn assert_series_increase(r: &RunRecord) {
    let mut keys: Vec<(String, String)> = r.metrics.iter().map(|m| (m.split.clone(), m.metric.clone())).collect();
    keys.dedup();
    for (split, metric) in keys {
        let s = r.series(&split, &metric);
        assert!(s.windows(2).all(|w| w[0].0 < w[1].0), "{split}/{metric}");
    }
}

#[test]
fn grid_runs_are_reproducible_bit_for_bit() {
    let c = tiny(Task::Sbn);
    let a = run_grid(&c, 11).unwrap();
    let b = run_grid(&c, 11).unwrap();
    assert_eq!(a.records.len(), 2 * 2 * 2);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert!(x.completed(), "{:?}", x.status);
        assert_eq!(x.metrics_csv(), y.metrics_csv());
        assert_series_increase(x);
    }
    assert_eq!(a.selections, b.selections);
    assert_eq!(a.selections.len(), 2 * 2);
    let c2 = run_grid(&c, 12).unwrap();
    assert_ne!(a.records[0].metrics_csv(), c2.records[0].metrics_csv());
}

#[test]
fn worker_count_does_not_change_results() {
    let c = tiny(Task::Sbn);
    let one = run_grid_with(&c, 11, 1, |_| {}).unwrap();
    let three = run_grid_with(&c, 11, 3, |_| {}).unwrap();
    assert_eq!(one.records.len(), three.records.len());
    for (a, b) in one.records.iter().zip(&three.records) {
        assert_eq!(a.cell_id, b.cell_id);
        assert_eq!(a.metrics, b.metrics);
    }
}

#[test]
fn single_cell_grid_is_a_plain_training_run() {
    let mut c = tiny(Task::Vae);
    c.estimators = vec![EstimatorKind::St];
    c.learning_rates = vec![1e-2];
    c.seeds = vec![9];
    let report = run_grid(&c, 8).unwrap();
    assert_eq!(report.records.len(), 1);
    let data = prepare_data(&c, 8).unwrap();
    let direct = run_cell(&c, &data, &grid_cells(&c).unwrap()[0], 8, 9).unwrap();
    assert_eq!(report.records[0].metrics, direct.metrics);
    let s = &report.selections[0];
    assert_eq!(s.test, direct.final_metric("test", "nll").unwrap());
}

fn golden_run() -> String {
    let mut c = tiny(Task::Vae);
    c.estimators = vec![EstimatorKind::Gs];
    c.learning_rates = vec![1e-2];
    c.seeds = vec![3];
    let data = prepare_data(&c, 2016).unwrap();
    let cell = &grid_cells(&c).unwrap()[0];
    run_cell(&c, &data, cell, 2016, 3).unwrap().metrics_csv()
}

#[test]
#[ignore = "rewrites the golden metrics file"]
fn regenerate_golden_metrics() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/golden-metrics.csv");
    std::fs::write(path, golden_run()).unwrap();
}

#[test]
fn metrics_match_the_golden_file() {
    assert_eq!(golden_run(), GOLDEN_METRICS);
}

#[test]
fn eval_schedule_and_final_test_score() {
    let mut c = tiny(Task::Vae);
    c.steps = 25;
    let data = prepare_data(&c, 1).unwrap();
    let cell = &grid_cells(&c).unwrap()[0];
    let r = run_cell(&c, &data, cell, 1, 0).unwrap();
    let steps: Vec<u64> = r.series("valid", "nll").iter().map(|s| s.0).collect();
    assert_eq!(steps, vec![10, 20, 25]);
    assert_eq!(r.series("test", "nll").len(), 1);
    assert_eq!(r.timings.len(), 3);
    // the annealed temperature starts at one and only falls
    let taus: Vec<f64> = r.series("train", "tau").iter().map(|s| s.1).collect();
    assert!(taus.windows(2).all(|w| w[1] <= w[0]) && taus[0] < 1.0 && taus[0] >= 0.5);
}

#[test]
fn divergent_cells_record_failure() {
    let mut c = tiny(Task::Sbn);
    c.learning_rates = vec![1e308];
    c.seeds = vec![0];
    let report = run_grid(&c, 3).unwrap();
    for r in &report.records {
        assert!(matches!(r.status, CellStatus::Failed { .. }), "{:?}", r.status);
    }
    assert!(report.selections.is_empty());
}

#[test]
fn dynamic_binarization_trains() {
    let mut c = tiny(Task::Sbn);
    c.binarization = Binarization::Dynamic;
    c.estimators = vec![EstimatorKind::Nvil];
    let data = prepare_data(&c, 1).unwrap();
    assert!(data.valid.is_binary() && !data.train.is_binary());
    let cell = &grid_cells(&c).unwrap()[0];
    let r = run_cell(&c, &data, cell, 1, 0).unwrap();
    assert!(r.completed());
    assert!(r.binarization.contains("Dynamic"));
}

#[test]
fn ssvae_cells_report_error_rates() {
    let c = tiny(Task::Ssvae);
    let report = run_grid(&c, 4).unwrap();
    for r in &report.records {
        assert!(r.completed(), "{:?}", r.status);
        let e = r.final_metric("test", "error").unwrap();
        assert!((0.0..=1.0).contains(&e));
        assert!(r.final_metric("valid", "neg_bound").unwrap() > 0.0);
        assert!(r.cell.anneal.is_some());
    }
    assert_eq!(report.selections[0].metric, "error");
}

#[test]
fn ssvae_needs_enough_labels_per_class() {
    let mut c = tiny(Task::Ssvae);
    c.ssvae.labeled = 1000;
    let data = prepare_data(&c, 4).unwrap();
    let cell = &grid_cells(&c).unwrap()[0];
    assert_eq!(run_cell(&c, &data, cell, 4, 0).unwrap_err().kind(), "config");
}

#[test]
fn grid_report_writes_one_directory_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(Task::Sbn);
    c.seeds = vec![0];
    c.estimators = vec![EstimatorKind::St];
    let report = run_grid(&c, 5).unwrap();
    report.write(&c, dir.path()).unwrap();
    for r in &report.records {
        let cell = dir.path().join("cells").join(&r.cell_id);
        let text = std::fs::read_to_string(cell.join("metrics.csv")).unwrap();
        assert_eq!(parse_metrics_csv(&text).unwrap(), r.metrics);
        assert!(std::fs::read_to_string(cell.join("timings.csv")).unwrap().starts_with(TIMINGS_HEADER));
    }
    let back = ExperimentConfig::from_file(dir.path().join("config.json")).unwrap();
    assert_eq!(back, c);
    assert!(dir.path().join("selection.csv").exists());
}

#[test]
fn simplex_grid_sizes() {
    assert_eq!(simplex_grid(2, 10).unwrap().len(), 9);
    assert_eq!(simplex_grid(3, 10).unwrap().len(), 9 * 8 / 2);
    for p in simplex_grid(3, 7).unwrap() {
        assert!(p.iter().all(|v| *v > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(simplex_grid(4, 10).is_err());
}

#[test]
fn density_figure_rows_and_limits() {
    let s = DensitySettings {
        probs: vec![0.2, 0.3, 0.5],
        taus: vec![0.1, 1.0, 10.0],
        resolution: 12,
        samples: 20_000,
    };
    let f = emit_density_figure_data(&s, 1).unwrap();
    assert_eq!(f.grid.len(), 11 * 10 / 2 * 3);
    assert_eq!(f.density_csv().lines().count(), f.grid.len() + 1);
    assert_eq!(f.means_csv().lines().count(), 4);
    let cold = &f.means[0].mean;
    let hot = &f.means[2].mean;
    for i in 0..3 {
        assert!((cold[i] - s.probs[i]).abs() < 0.02, "{cold:?}");
        assert!((hot[i] - 1.0 / 3.0).abs() < 0.02, "{hot:?}");
    }
    assert!(f.grid.iter().all(|p| p.density.is_finite() && p.density >= 0.0));
}

#[test]
fn speed_benchmark_times_every_cell() {
    let mut c = tiny(Task::Speed);
    c.speed.classes = vec![1, 4];
    c.speed.min_steps = 2;
    c.speed.min_seconds = 0.0;
    c.speed.warmup_steps = 1;
    let r = run_speed_benchmark(&c, 1).unwrap();
    assert_eq!(r.rows.len(), 4);
    assert!(r.rows.iter().all(|row| row.steps >= 2 && row.steps_per_sec > 0.0));
    assert_eq!(r.speedups.len(), 2);
    // one class: both modes do the same work
    assert!((r.speedups[0].predicted - 1.0).abs() < 1e-12);
    assert!(r.speedups[1].predicted > 1.0);
    assert!(r.speedups.iter().all(|s| s.measured > 0.0));
    assert_eq!(r.speedups_csv().lines().count(), 3);
}

#[test]
fn gradient_checks_pass() {
    let checks = run_gradient_checks(7).unwrap();
    assert_eq!(checks.len(), 7);
    for c in checks {
        assert!(c.passed, "{}: {:e}", c.name, c.max_relative_error);
    }
}

#[test]
fn audit_suite_covers_the_estimator_family() {
    let cases = standard_audit_cases().unwrap();
    let labels: Vec<&str> = cases.iter().map(|c| c.label.as_str()).collect();
    for l in ["sf@cat3_linear", "sf_baseline@cat4_quadratic", "nvil@bern8_table", "muprop@bern8_table", "darn@bern1_cubic"] {
        assert!(labels.contains(&l), "{l}");
    }
    let constant = cases.iter().find(|c| c.label == "sf@cat3_constant").unwrap();
    let out = run_audit_case(constant, 2000, 1).unwrap();
    assert!(out.passed);
    assert!(out.audit.exact.iter().all(|v| *v == 0.0));
}

#[test]
fn unbiasedness_audits_run_without_variance_normalization() {
    for c in standard_audit_cases().unwrap() {
        if c.expect == Expectation::Unbiased {
            assert!(!c.settings.variance_normalization, "{}", c.label);
        }
    }
    // with normalization on, a signal deviation above one shrinks the mean
    let tb = crate::oracle::EnumerationTestbed::categorical_linear();
    let s = crate::estimators::EstimatorSettings::new(crate::estimators::EstimatorKind::Muprop);
    let a = crate::oracle::audit_estimator(&s, &tb, &crate::oracle::AuditOptions::new(20_000, 5)).unwrap();
    let shrunk = a.mean.iter().zip(&a.exact).map(|(m, e)| m.abs() - e.abs()).sum::<f64>();
    assert!(shrunk < 0.0 && !a.unbiased(), "{a:?}");
}
