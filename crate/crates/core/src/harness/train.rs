use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{canonical_hash, ExperimentConfig, Task};
use super::record::{select, CellSpec, CellStatus, Goal, RunRecord, Selection, TimingRow};
use crate::data::{binarize_dynamic, binarize_fixed, downsample, load_splits, Binarization, ImageBatch, Splits};
use crate::distributions::AnnealSchedule;
use crate::error::{Error, Result};
use crate::estimators::{BaselineNet, BaselineState, EstimatorKind, EstimatorSettings};
use crate::graph::{sgd_momentum_step, MomentumState, Tensor};
use crate::models::{one_hot_labels, EstimatorModel, InferenceMode, Sbn, SbnArch, Ssvae, SsvaeDims, SsvaeNoise, Vae, VaeArch};
use crate::rng::{stream_rng, streams, StreamRng};

/// Splits after downsampling and, for fixed binarization, thresholding.
/// Under dynamic binarization the training split keeps its intensities
/// and is resampled per minibatch; evaluation splits are binarized once.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: ImageBatch,
    pub valid: ImageBatch,
    pub test: ImageBatch,
    pub binarization: Binarization,
    pub side: usize,
}

impl TaskData {
    pub fn pixels(&self) -> usize {
        self.side * self.side
    }
}

pub fn prepare_data(config: &ExperimentConfig, master_seed: u64) -> Result<TaskData> {
    let raw = load_splits(&config.data, master_seed)?;
    let splits = match &config.downsample {
        Some(rule) => raw.map(|b| downsample(b, rule))?,
        None => raw,
    };
    binarize_splits(splits, config.binarization, master_seed)
}

fn binarize_splits(splits: Splits, binarization: Binarization, master_seed: u64) -> Result<TaskData> {
    let (h, w) = (splits.train.dims().1, splits.train.dims().2);
    if h != w {
        return Err(Error::Config(format!("expected square images, got {h}x{w}")));
    }
    let (train, valid, test) = match binarization {
        Binarization::Fixed { threshold } => (
            binarize_fixed(&splits.train, threshold),
            binarize_fixed(&splits.valid, threshold),
            binarize_fixed(&splits.test, threshold),
        ),
        Binarization::Dynamic => {
            let mut rng = stream_rng(master_seed, 0, streams::EVAL);
            let valid = binarize_dynamic(&splits.valid, &mut rng);
            let test = binarize_dynamic(&splits.test, &mut rng);
            (splits.train, valid, test)
        }
    };
    Ok(TaskData {
        train,
        valid,
        test,
        binarization,
        side: h,
    })
}

/// Cycles through a shuffled index set, reshuffling at each epoch.
struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
}

impl BatchCursor {
    fn new(indices: Vec<usize>, rng: &mut StreamRng) -> Self {
        let mut order = indices;
        order.shuffle(rng);
        BatchCursor { order, pos: 0 }
    }

    fn next(&mut self, size: usize, rng: &mut StreamRng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn training_batch(data: &TaskData, idx: &[usize], rng: &mut StreamRng) -> ImageBatch {
    let b = data.train.select(idx);
    match data.binarization {
        Binarization::Dynamic => binarize_dynamic(&b, rng),
        Binarization::Fixed { .. } => b,
    }
}

/// Every hyperparameter cell of the config's grid, seeds excluded.
pub fn grid_cells(config: &ExperimentConfig) -> Result<Vec<CellSpec>> {
    let mut cells = Vec::new();
    match config.task {
        Task::Sbn | Task::Vae => {
            for &kind in &config.estimators {
                let anneals: Vec<Option<AnnealSchedule>> = if config.task == Task::Vae && kind.uses_temperature() {
                    let mut v = Vec::new();
                    for &rate in &config.anneal_rates {
                        for &every in &config.anneal_intervals {
                            v.push(Some(AnnealSchedule::new(rate, config.anneal_floor, every)?));
                        }
                    }
                    v
                } else {
                    vec![None]
                };
                for &lr in &config.learning_rates {
                    for anneal in &anneals {
                        cells.push(CellSpec {
                            estimator: Some(kind),
                            mode: None,
                            lr,
                            anneal: *anneal,
                            alpha: None,
                        });
                    }
                }
            }
        }
        Task::Ssvae => {
            for &mode in &config.ssvae.modes {
                for &lr in &config.learning_rates {
                    for &alpha in &config.alphas {
                        cells.push(CellSpec {
                            estimator: None,
                            mode: Some(mode),
                            lr,
                            anneal: (mode != InferenceMode::Marginalize).then_some(config.ssvae.anneal),
                            alpha: Some(alpha),
                        });
                    }
                }
            }
        }
        other => return Err(Error::Config(format!("task `{other}` has no training grid"))),
    }
    Ok(cells)
}

#[derive(Serialize)]
struct HashedCell<'a> {
    config: ExperimentConfig,
    cell: &'a CellSpec,
}

/// Hash of the shared config with this cell's hyperparameters; equal for
/// runs that differ only in seed.
pub fn cell_hash(config: &ExperimentConfig, cell: &CellSpec) -> Result<String> {
    let mut c = config.clone();
    c.seeds.clear();
    canonical_hash(&HashedCell { config: c, cell })
}

fn new_record(config: &ExperimentConfig, cell: &CellSpec, master_seed: u64, seed: u64) -> Result<RunRecord> {
    Ok(RunRecord {
        task: config.task.name().to_string(),
        cell: cell.clone(),
        cell_id: cell.id(seed),
        config_hash: cell_hash(config, cell)?,
        master_seed,
        seed,
        binarization: format!("{:?}", config.binarization),
        status: CellStatus::Completed,
        metrics: Vec::new(),
        timings: Vec::new(),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_grads(tensors: &[Tensor]) -> Result<()> {
    if tensors.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(())
}

fn is_eval_step(config: &ExperimentConfig, done: u64) -> bool {
    done.is_multiple_of(config.eval_every) || done == config.steps
}

/// Build the SBN or VAE a cell trains, sized from the data.
pub fn build_estimator_model(
    config: &ExperimentConfig,
    pixels: usize,
    rng: &mut StreamRng,
) -> Result<Box<dyn EstimatorModel>> {
    let latent = config.scaled_latent();
    match config.task {
        Task::Sbn => {
            if !pixels.is_multiple_of(2) {
                return Err(Error::Config(format!("{pixels} pixels do not split into halves")));
            }
            let arch = SbnArch {
                input: pixels / 2,
                hidden: vec![latent; config.sbn_layers],
                output: pixels / 2,
            };
            Ok(Box::new(Sbn::new(arch, rng)?))
        }
        Task::Vae => Ok(Box::new(Vae::new(VaeArch { input: pixels, latent }, rng)?)),
        other => Err(Error::Config(format!("task `{other}` does not train an estimator model"))),
    }
}

/// Train one SBN or VAE cell for `config.steps` steps. The validation
/// subset is scored every `eval_every` steps, the test subset once at the
/// end.
pub fn train_estimator_cell(
    config: &ExperimentConfig,
    data: &TaskData,
    cell: &CellSpec,
    master_seed: u64,
    seed: u64,
) -> Result<RunRecord> {
    let kind = cell
        .estimator
        .ok_or_else(|| Error::Config("estimator cell without an estimator".into()))?;
    let mut record = new_record(config, cell, master_seed, seed)?;
    let mut init = stream_rng(master_seed, seed, streams::INIT);
    let mut model = build_estimator_model(config, data.pixels(), &mut init)?;
    let base = EstimatorSettings::new(kind);
    let mut state = BaselineState::new(config.baseline_decay);
    if kind == EstimatorKind::Nvil {
        let mut brng = stream_rng(master_seed, seed, streams::BASELINE);
        state = state.with_net(BaselineNet::new(
            model.conditioning_dim(),
            config.nvil_hidden,
            base.baseline_lr,
            &mut brng,
        ));
    }
    let mut noise = stream_rng(master_seed, seed, streams::NOISE);
    let mut batch_rng = stream_rng(master_seed, seed, streams::BATCH);
    let mut cursor = BatchCursor::new((0..data.train.len()).collect(), &mut batch_rng);
    let mut momentum = MomentumState::zeros_like(&model.params().tensors);
    let n_eval = config.eval_examples;
    let valid = data.valid.range(0, n_eval.min(data.valid.len())).flatten();
    let test = data.test.range(0, n_eval.min(data.test.len())).flatten();

    let start = Instant::now();
    let mut interval = Instant::now();
    let mut last_eval = 0u64;
    let mut costs = Vec::new();
    for step in 0..config.steps {
        let tau = match &cell.anneal {
            Some(a) => a.temperature(step),
            None => config.tau,
        };
        let settings = base.with_tau(tau).with_slope(config.slope.slope(step));
        let idx = cursor.next(config.batch_size, &mut batch_rng);
        let x = training_batch(data, &idx, &mut batch_rng).flatten();
        let outcome = model
            .train_gradient(&x, &settings, &state, &mut noise)
            .and_then(|g| check_grads(&g.grads).map(|_| g));
        let grad = match outcome {
            Ok(g) => g,
            Err(Error::NonFinite(what)) => {
                record.status = CellStatus::Failed {
                    step,
                    error: format!("non-finite {what}"),
                };
                return Ok(record);
            }
            Err(e) => return Err(e),
        };
        costs.push(grad.mean_cost());
        state = grad.state;
        sgd_momentum_step(&mut model.params_mut().tensors, &grad.grads, cell.lr, &mut momentum, config.momentum)?;
        if check_grads(&model.params().tensors).is_err() {
            record.status = CellStatus::Failed {
                step,
                error: "non-finite parameters".into(),
            };
            return Ok(record);
        }

        let done = step + 1;
        if is_eval_step(config, done) {
            let elapsed = interval.elapsed().as_secs_f64();
            let mut eval_rng = stream_rng(master_seed, seed, streams::EVAL);
            let last = done == config.steps;
            let scores = model
                .eval_loss(&valid, config.eval_m, &mut eval_rng)
                .and_then(|v| check_finite(mean(&v), "validation bound"))
                .and_then(|v| {
                    if !last {
                        return Ok((v, None));
                    }
                    let t = model.eval_loss(&test, config.eval_m, &mut eval_rng)?;
                    Ok((v, Some(check_finite(mean(&t), "test bound")?)))
                });
            let (v, t) = match scores {
                Ok(s) => s,
                Err(Error::NonFinite(what)) => {
                    record.status = CellStatus::Failed {
                        step: done,
                        error: format!("non-finite {what}"),
                    };
                    return Ok(record);
                }
                Err(e) => return Err(e),
            };
            record.push_metric(done, "train", "loss", mean(&costs))?;
            record.push_metric(done, "train", "tau", tau)?;
            record.push_metric(done, "valid", "nll", v)?;
            if let Some(t) = t {
                record.push_metric(done, "test", "nll", t)?;
            }
            costs.clear();
            record.timings.push(TimingRow {
                step: done,
                wall_clock_s: start.elapsed().as_secs_f64(),
                steps_per_sec: (done - last_eval) as f64 / elapsed.max(1e-12),
            });
            last_eval = done;
            interval = Instant::now();
        }
    }
    Ok(record)
}

/// Labeled subset: the first `per_class` training examples of each class.
fn labeled_indices(labels: &[usize], classes: usize, per_class: usize) -> Result<Vec<usize>> {
    let mut taken = vec![0usize; classes];
    let mut out = Vec::with_capacity(classes * per_class);
    for (i, &y) in labels.iter().enumerate() {
        if y < classes && taken[y] < per_class {
            taken[y] += 1;
            out.push(i);
        }
    }
    if taken.iter().any(|&t| t < per_class) {
        return Err(Error::Config(format!(
            "training split lacks {per_class} examples for every one of {classes} classes"
        )));
    }
    Ok(out)
}

pub fn ssvae_dims(config: &ExperimentConfig, pixels: usize) -> SsvaeDims {
    SsvaeDims {
        input: pixels,
        classes: config.ssvae.classes,
        style: config.scaled(config.ssvae.style),
        hidden: config.scaled(config.ssvae.hidden),
    }
}

/// Train one semi-supervised cell.
pub fn train_ssvae_cell(
    config: &ExperimentConfig,
    data: &TaskData,
    cell: &CellSpec,
    master_seed: u64,
    seed: u64,
) -> Result<RunRecord> {
    let (mode, alpha) = match (cell.mode, cell.alpha) {
        (Some(m), Some(a)) => (m, a),
        _ => return Err(Error::Config("ssvae cell needs a mode and an alpha".into())),
    };
    let k = config.ssvae.classes;
    let missing = || Error::Config("ssvae needs labeled data".into());
    let train_labels = data.train.labels.as_ref().ok_or_else(missing)?;
    let valid_labels = data.valid.labels.as_ref().ok_or_else(missing)?;
    let test_labels = data.test.labels.as_ref().ok_or_else(missing)?;
    let labeled = labeled_indices(train_labels, k, config.ssvae.labeled / k)?;
    let unlabeled: Vec<usize> = (0..data.train.len()).filter(|i| !labeled.contains(i)).collect();
    if unlabeled.is_empty() {
        return Err(Error::Config("no unlabeled training examples left".into()));
    }

    let mut record = new_record(config, cell, master_seed, seed)?;
    let dims = ssvae_dims(config, data.pixels());
    let mut init = stream_rng(master_seed, seed, streams::INIT);
    let mut model = Ssvae::new(dims, &mut init)?;
    let mut noise_rng = stream_rng(master_seed, seed, streams::NOISE);
    let mut batch_rng = stream_rng(master_seed, seed, streams::BATCH);
    let mut lab_cursor = BatchCursor::new(labeled.clone(), &mut batch_rng);
    let mut unl_cursor = BatchCursor::new(unlabeled, &mut batch_rng);
    let mut momentum = MomentumState::zeros_like(&model.params.tensors);
    let nl = config.batch_size.min(labeled.len());
    let n_eval = config.eval_examples;
    let valid_sub = data.valid.range(0, n_eval.min(data.valid.len())).flatten();
    let test_sub = data.test.range(0, n_eval.min(data.test.len())).flatten();
    let valid_all = data.valid.flatten();
    let test_all = data.test.flatten();

    let start = Instant::now();
    let mut interval = Instant::now();
    let mut last_eval = 0u64;
    let mut objective = Vec::new();
    for step in 0..config.steps {
        let tau = cell.anneal.map_or(1.0, |a| a.temperature(step));
        let li = lab_cursor.next(nl, &mut batch_rng);
        let xl = training_batch(data, &li, &mut batch_rng);
        let yl = one_hot_labels(&li.iter().map(|&i| train_labels[i]).collect::<Vec<_>>(), k)?;
        let ui = unl_cursor.next(config.batch_size, &mut batch_rng);
        let xu = training_batch(data, &ui, &mut batch_rng).flatten();
        let noise = SsvaeNoise::draw(&dims, nl, config.batch_size, &mut noise_rng);
        let outcome = model
            .objective_gradient(&xl.flatten(), &yl, &xu, alpha, mode, tau, &noise)
            .and_then(|(t, g)| check_grads(&g).map(|_| (t, g)));
        let (terms, grads) = match outcome {
            Ok(r) => r,
            Err(Error::NonFinite(what)) => {
                record.status = CellStatus::Failed {
                    step,
                    error: format!("non-finite {what}"),
                };
                return Ok(record);
            }
            Err(e) => return Err(e),
        };
        objective.push(-terms.total);
        sgd_momentum_step(&mut model.params.tensors, &grads, cell.lr, &mut momentum, config.momentum)?;
        if check_grads(&model.params.tensors).is_err() {
            record.status = CellStatus::Failed {
                step,
                error: "non-finite parameters".into(),
            };
            return Ok(record);
        }

        let done = step + 1;
        if is_eval_step(config, done) {
            let elapsed = interval.elapsed().as_secs_f64();
            let mut eval_rng = stream_rng(master_seed, seed, streams::EVAL);
            let mut bound = |x: &Tensor| -> Result<f64> {
                let n = x.shape()[0];
                let eps = SsvaeNoise::draw(&dims, 0, n, &mut eval_rng);
                let b = model.unlabeled_bound(x, InferenceMode::Marginalize, 1.0, &eps.unlabeled, &eps.gumbel)?;
                check_finite(-mean(&b), "unlabeled bound")
            };
            let last = done == config.steps;
            let scores = bound(&valid_sub).and_then(|v| Ok((v, if last { Some(bound(&test_sub)?) } else { None })));
            let (vb, tb) = match scores {
                Ok(s) => s,
                Err(Error::NonFinite(what)) => {
                    record.status = CellStatus::Failed {
                        step: done,
                        error: format!("non-finite {what}"),
                    };
                    return Ok(record);
                }
                Err(e) => return Err(e),
            };
            record.push_metric(done, "train", "loss", mean(&objective))?;
            record.push_metric(done, "train", "tau", tau)?;
            record.push_metric(done, "valid", "error", 1.0 - model.accuracy(&valid_all, valid_labels)?)?;
            record.push_metric(done, "valid", "neg_bound", vb)?;
            record.push_metric(done, "test", "error", 1.0 - model.accuracy(&test_all, test_labels)?)?;
            if let Some(tb) = tb {
                record.push_metric(done, "test", "neg_bound", tb)?;
            }
            objective.clear();
            record.timings.push(TimingRow {
                step: done,
                wall_clock_s: start.elapsed().as_secs_f64(),
                steps_per_sec: (done - last_eval) as f64 / elapsed.max(1e-12),
            });
            last_eval = done;
            interval = Instant::now();
        }
    }
    Ok(record)
}

/// Metric used to pick a cell for `task`, and which way is better.
pub fn selection_metric(task: Task) -> (&'static str, Goal) {
    match task {
        Task::Ssvae => ("error", Goal::Minimize),
        _ => ("nll", Goal::Minimize),
    }
}

/// All cells of a grid run plus the validation-based selections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    pub task: Task,
    pub master_seed: u64,
    pub config_hash: String,
    pub records: Vec<RunRecord>,
    pub selections: Vec<Selection>,
}

impl GridReport {
    pub fn selection(&self, method: &str, seed: u64) -> Option<&Selection> {
        self.selections.iter().find(|s| s.method == method && s.seed == seed)
    }

    /// One directory per cell plus `config.json`, `selection.json` and
    /// `selection.csv` at the top.
    pub fn write(&self, config: &ExperimentConfig, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), config.to_json_pretty()?)?;
        for r in &self.records {
            r.write(&dir.join("cells").join(&r.cell_id))?;
        }
        fs::write(dir.join("selection.json"), serde_json::to_string_pretty(&self.selections)?)?;
        let mut csv = String::from("method,seed,cell_id,metric,valid,test,failed_cells\n");
        for s in &self.selections {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.method, s.seed, s.cell_id, s.metric, s.valid, s.test, s.failed_cells
            ));
        }
        fs::write(dir.join("selection.csv"), csv)?;
        Ok(())
    }
}

/// Train one cell of the grid.
pub fn run_cell(config: &ExperimentConfig, data: &TaskData, cell: &CellSpec, master_seed: u64, seed: u64) -> Result<RunRecord> {
    match config.task {
        Task::Sbn | Task::Vae => train_estimator_cell(config, data, cell, master_seed, seed),
        Task::Ssvae => train_ssvae_cell(config, data, cell, master_seed, seed),
        other => Err(Error::Config(format!("task `{other}` has no training grid"))),
    }
}

/// Run every `(cell, seed)` pair on `workers` threads, calling
/// `on_record` as cells finish, and select per method and seed on
/// validation. Records come back in grid order whatever the worker count.
pub fn run_grid_with(
    config: &ExperimentConfig,
    master_seed: u64,
    workers: usize,
    mut on_record: impl FnMut(&RunRecord),
) -> Result<GridReport> {
    config.validate()?;
    let data = prepare_data(config, master_seed)?;
    let cells = grid_cells(config)?;
    let jobs: Vec<(&CellSpec, u64)> = config
        .seeds
        .iter()
        .flat_map(|&seed| cells.iter().map(move |c| (c, seed)))
        .collect();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<RunRecord>)>();
    let mut slots: Vec<Option<RunRecord>> = vec![None; jobs.len()];
    let mut first_error = None;
    thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            let tx = tx.clone();
            let (jobs, next, data) = (&jobs, &next, &data);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(cell, seed)) = jobs.get(i) else { break };
                let r = run_cell(config, data, cell, master_seed, seed);
                let failed = r.is_err();
                if tx.send((i, r)).is_err() || failed {
                    // stop handing out work after a hard error
                    next.store(jobs.len(), Ordering::Relaxed);
                    break;
                }
            });
        }
        drop(tx);
        for (i, r) in rx {
            match r {
                Ok(rec) => {
                    on_record(&rec);
                    slots[i] = Some(rec);
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }
    let records: Vec<RunRecord> = slots.into_iter().flatten().collect();
    let (metric, goal) = selection_metric(config.task);
    let selections = select(&records, metric, goal);
    Ok(GridReport {
        task: config.task,
        master_seed,
        config_hash: canonical_hash(config)?,
        records,
        selections,
    })
}

/// Worker threads to use by default: the available parallelism.
pub fn default_workers() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn run_grid(config: &ExperimentConfig, master_seed: u64) -> Result<GridReport> {
    run_grid_with(config, master_seed, default_workers(), |_| {})
}
