//! Experiment harness: grid search on validation adjusted Qini and repeated
//! train / validation / test benchmarks.
//!
//! Work is spread over a rayon pool; results are always collected in
//! (run, method, cell) order, so output does not depend on scheduling.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::{split, Dataset, SplitFractions};
use crate::dgp::{generate_dataset, Scenario};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::model::{Arch, TwinParams};
use crate::optim::{train_monitored, Control, RegKind, TrainConfig};
use crate::qini::{evaluate, EvalConfig, QiniReport};

/// Environment variable capping the worker count (0 = rayon default).
pub const THREADS_ENV: &str = "UPLIFTLAB_THREADS";

/// SplitMix64 finalizer, used to derive independent seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchKind {
    Interaction,
    Hidden1,
    Hidden2,
}

impl ArchKind {
    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Interaction => "interaction",
            ArchKind::Hidden1 => "hidden1",
            ArchKind::Hidden2 => "hidden2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "interaction" => Ok(ArchKind::Interaction),
            "hidden1" | "hidden" => Ok(ArchKind::Hidden1),
            "hidden2" => Ok(ArchKind::Hidden2),
            other => Err(Error::InvalidArgument(format!(
                "unknown arch {other:?} (expected interaction, hidden1 or hidden2)"
            ))),
        }
    }

    /// Concrete architecture. `Hidden2` uses widths `(m, max(m - 1, 1))`.
    pub fn build(self, p: usize, m: usize) -> Arch {
        match self {
            ArchKind::Interaction => Arch::Interaction { p },
            ArchKind::Hidden1 => Arch::hidden1(p, m),
            ArchKind::Hidden2 => Arch::hidden2(p, m, m.saturating_sub(1).max(1)),
        }
    }

    fn has_hidden(self) -> bool {
        self != ArchKind::Interaction
    }
}

/// One model family compared in a benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub label: String,
    pub arch: ArchKind,
    pub loss: LossKind,
    pub reg: RegKind,
}

impl MethodSpec {
    pub fn new(arch: ArchKind, loss: LossKind, reg: RegKind) -> Self {
        Self {
            label: format!("{}-{}", arch.name(), loss.name()),
            arch,
            loss,
            reg,
        }
    }
}

/// One hyperparameter combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub eta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Hidden width (0 for the interaction model).
    pub hidden: usize,
}

impl Cell {
    fn seed(&self, base: u64) -> u64 {
        derive_seed(
            base,
            &[
                self.eta.to_bits(),
                self.lambda1.to_bits(),
                self.lambda2.to_bits(),
                self.hidden as u64,
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub eta: Vec<f64>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub hidden: Vec<usize>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        let lambdas = vec![0.0, 0.0001, 0.0005, 0.001, 0.005, 0.01];
        Self {
            eta: vec![0.005, 0.01, 0.05, 0.1, 0.2, 0.3],
            lambda1: lambdas.clone(),
            lambda2: lambdas,
            hidden: vec![512],
        }
    }
}

impl HyperGrid {
    /// Cells in listed order. Structured constants and widths are collapsed
    /// for the interaction model, which has neither.
    pub fn cells(&self, arch: ArchKind) -> Vec<Cell> {
        let (lambda1, hidden) = if arch.has_hidden() {
            (self.lambda1.clone(), self.hidden.clone())
        } else {
            (vec![0.0], vec![0])
        };
        let mut cells = Vec::new();
        for &eta in &self.eta {
            for &l1 in &lambda1 {
                for &l2 in &self.lambda2 {
                    for &m in &hidden {
                        cells.push(Cell {
                            eta,
                            lambda1: l1,
                            lambda2: l2,
                            hidden: m,
                        });
                    }
                }
            }
        }
        cells
    }
}

/// Epoch budget, batching, early stopping and scoring settings shared by every cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without a validation improvement (0 disables).
    pub patience: usize,
    pub eval: EvalConfig,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            patience: 10,
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Scenario(Scenario),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub source: DataSource,
    pub fractions: SplitFractions,
    pub runs: usize,
    pub methods: Vec<MethodSpec>,
    pub grid: HyperGrid,
    pub schedule: Schedule,
    pub base_seed: u64,
}

impl ExperimentSpec {
    pub fn new(source: DataSource) -> Self {
        Self {
            source,
            fractions: SplitFractions::default(),
            runs: 20,
            methods: vec![
                MethodSpec::new(ArchKind::Interaction, LossKind::Uplift, RegKind::L1),
                MethodSpec::new(ArchKind::Interaction, LossKind::BceOnly, RegKind::L1),
            ],
            grid: HyperGrid::default(),
            schedule: Schedule::default(),
            base_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fractions.validate()?;
        if self.runs == 0 {
            return Err(Error::InvalidArgument("runs must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods to benchmark".into()));
        }
        for m in &self.methods {
            if self.grid.cells(m.arch).is_empty() {
                return Err(Error::EmptyGrid);
            }
        }
        if self.schedule.epochs == 0 || self.schedule.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Applies a grid file: one `key = v1, v2, ...` per line, `#` comments.
    ///
    /// Keys: `eta`, `lambda1`, `lambda2`, `hidden`, `arch`, `loss`, `reg`,
    /// `epochs`, `batch_size`, `patience`, `bins`, `grid`.
    pub fn apply_grid_text(&mut self, text: &str) -> Result<()> {
        let mut archs: Option<Vec<ArchKind>> = None;
        let mut losses: Option<Vec<LossKind>> = None;
        let mut reg: Option<RegKind> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::InvalidArgument(format!("grid line {}: {msg}", lineno + 1));
            let (key, values) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = values, got {line:?}")))?;
            let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(bad(format!("no values for {}", key.trim())));
            }
            let floats = || -> Result<Vec<f64>> {
                values
                    .iter()
                    .map(|v| v.parse::<f64>().map_err(|_| bad(format!("not a number: {v:?}"))))
                    .collect()
            };
            let counts = || -> Result<Vec<usize>> {
                values
                    .iter()
                    .map(|v| v.parse::<usize>().map_err(|_| bad(format!("not a count: {v:?}"))))
                    .collect()
            };
            let single = || -> Result<usize> {
                let c = counts()?;
                if c.len() != 1 {
                    return Err(bad("expected a single value".into()));
                }
                Ok(c[0])
            };
            match key.trim() {
                "eta" => self.grid.eta = floats()?,
                "lambda1" => self.grid.lambda1 = floats()?,
                "lambda2" => self.grid.lambda2 = floats()?,
                "hidden" => self.grid.hidden = counts()?,
                "arch" => archs = Some(values.iter().map(|v| ArchKind::parse(v)).collect::<Result<_>>()?),
                "loss" => losses = Some(values.iter().map(|v| LossKind::parse(v)).collect::<Result<_>>()?),
                "reg" => {
                    if values.len() != 1 {
                        return Err(bad("reg takes a single value".into()));
                    }
                    reg = Some(RegKind::parse(values[0])?);
                }
                "epochs" => self.schedule.epochs = single()?,
                "batch_size" => self.schedule.batch_size = single()?,
                "patience" => self.schedule.patience = single()?,
                "bins" => self.schedule.eval.bins = single()?,
                "grid" => self.schedule.eval.grid = single()?,
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        if archs.is_some() || losses.is_some() || reg.is_some() {
            let archs = archs.unwrap_or_else(|| {
                let mut a: Vec<ArchKind> = self.methods.iter().map(|m| m.arch).collect();
                a.dedup();
                a
            });
            let losses = losses.unwrap_or_else(|| {
                let mut l: Vec<LossKind> = self.methods.iter().map(|m| m.loss).collect();
                l.dedup();
                l
            });
            let reg = reg.unwrap_or(self.methods.first().map_or(RegKind::L1, |m| m.reg));
            self.methods = archs
                .iter()
                .flat_map(|&a| losses.iter().map(move |&l| MethodSpec::new(a, l, reg)))
                .collect();
        }
        Ok(())
    }

    pub fn apply_grid_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_grid_text(&text)
    }
}

/// Training settings of one cell.
pub fn cell_config(method: &MethodSpec, cell: &Cell, schedule: &Schedule, seed: u64) -> TrainConfig {
    TrainConfig {
        eta: cell.eta,
        lambda1: cell.lambda1,
        lambda2: cell.lambda2,
        reg: method.reg,
        batch_size: schedule.batch_size,
        epochs: schedule.epochs,
        seed,
        loss: method.loss,
        ..TrainConfig::default()
    }
}

/// A trained cell, scored on validation data.
#[derive(Debug, Clone)]
pub struct FittedCell {
    pub index: usize,
    pub cell: Cell,
    pub config: TrainConfig,
    pub params: TwinParams,
    /// Best validation adjusted Qini over the epochs run.
    pub valid_q_adj: f64,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Trains one cell with early stopping on validation adjusted Qini and keeps
/// the best epoch's parameters.
pub fn fit_cell(
    method: &MethodSpec,
    cell: &Cell,
    index: usize,
    schedule: &Schedule,
    train: &Dataset,
    valid: &Dataset,
    seed: u64,
) -> Result<FittedCell> {
    let cell_seed = cell.seed(seed);
    let config = cell_config(method, cell, schedule, cell_seed);
    let arch = method.arch.build(train.p(), cell.hidden);
    let init = TwinParams::init(arch, derive_seed(cell_seed, &[1]))?;

    let mut best: Option<(f64, usize, TwinParams)> = None;
    let mut failure: Option<Error> = None;
    let mut epochs_run = 0;
    let result = train_monitored(init, train, &config, |stats, params| {
        epochs_run = stats.epoch;
        let score = match score(params, valid, schedule.eval) {
            Ok(r) => r.q_adj,
            Err(e) => {
                failure = Some(e);
                return Control::Stop;
            }
        };
        let improved = best.as_ref().is_none_or(|(b, _, _)| score > *b);
        if improved {
            best = Some((score, stats.epoch, params.clone()));
        }
        let since = stats.epoch - best.as_ref().map_or(0, |b| b.1);
        if schedule.patience > 0 && since >= schedule.patience {
            Control::Stop
        } else {
            Control::Continue
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    result?;
    let (valid_q_adj, best_epoch, params) = best.expect("at least one epoch");
    Ok(FittedCell {
        index,
        cell: *cell,
        config,
        params,
        valid_q_adj,
        best_epoch,
        epochs_run,
    })
}

/// Qini report of a model's predictions on `data`.
pub fn score(params: &TwinParams, data: &Dataset, eval: EvalConfig) -> Result<QiniReport> {
    let pred = params.predict_uplift(data)?;
    evaluate(&pred, data.t(), data.y(), eval)
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: FittedCell,
    /// Validation score per cell in listed order; `None` for diverged cells.
    pub scores: Vec<Option<f64>>,
}

/// Fits every cell on `train`, scores on `valid` and returns the winner.
///
/// Ties go to smaller `lambda2`, then smaller `lambda1`, smaller `eta`, then
/// the first-listed cell. Diverged cells are skipped.
pub fn grid_search(
    method: &MethodSpec,
    cells: &[Cell],
    schedule: &Schedule,
    train: &Dataset,
    valid: &Dataset,
    seed: u64,
) -> Result<GridOutcome> {
    if cells.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let fitted: Vec<Result<FittedCell>> = cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| fit_cell(method, cell, i, schedule, train, valid, seed))
        .collect();

    let mut diagnostics = Vec::new();
    let mut ok = Vec::new();
    let mut scores = Vec::with_capacity(cells.len());
    for (i, r) in fitted.into_iter().enumerate() {
        match r {
            Ok(f) => {
                scores.push(Some(f.valid_q_adj));
                ok.push(f);
            }
            Err(e @ Error::Diverged { .. }) => {
                scores.push(None);
                diagnostics.push(format!("cell {i} {:?}: {e}", cells[i]));
            }
            Err(e) => return Err(e),
        }
    }
    let best = ok
        .into_iter()
        .min_by(|a, b| {
            b.valid_q_adj
                .total_cmp(&a.valid_q_adj)
                .then(a.cell.lambda2.total_cmp(&b.cell.lambda2))
                .then(a.cell.lambda1.total_cmp(&b.cell.lambda1))
                .then(a.cell.eta.total_cmp(&b.cell.eta))
                .then(a.index.cmp(&b.index))
        })
        .ok_or(Error::AllCellsDiverged(diagnostics))?;
    Ok(GridOutcome { best, scores })
}

/// Test-set result of one method in one repetition.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run: usize,
    pub method: String,
    pub seed: u64,
    pub cell: Cell,
    pub best_epoch: usize,
    pub valid_q_adj: f64,
    pub test: QiniReport,
    pub active_nodes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub method: String,
    pub selected: Vec<Cell>,
    pub q_adj: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over sqrt(R); NaN when R = 1.
    pub se: f64,
    pub mean_q_hat: f64,
    pub mean_active_nodes: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub rows: Vec<BenchmarkRow>,
    pub runs: Vec<RunRecord>,
}

/// Mean and standard error (sample sd / sqrt(n)).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Pool honoring [`THREADS_ENV`].
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV} must be a count, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Data of repetition `run` (1-based): regenerated for scenarios, resplit for CSV input.
pub fn run_data(
    spec: &ExperimentSpec,
    base: Option<&Dataset>,
    run: usize,
) -> Result<(Dataset, Dataset, Dataset)> {
    let run_seed = spec.base_seed.wrapping_add(run as u64);
    let owned;
    let data = match (&spec.source, base) {
        (DataSource::Scenario(s), _) => {
            owned = generate_dataset(s, run_seed)?;
            &owned
        }
        (DataSource::Csv(_), Some(d)) => d,
        (DataSource::Csv(path), None) => {
            owned = Dataset::load_csv(path)?;
            &owned
        }
    };
    split(data, spec.fractions, derive_seed(run_seed, &[0x5EED]))
}

fn run_one(spec: &ExperimentSpec, base: Option<&Dataset>, run: usize) -> Result<Vec<RunRecord>> {
    let run_seed = spec.base_seed.wrapping_add(run as u64);
    let (train, valid, test) = run_data(spec, base, run)?;
    spec.methods
        .par_iter()
        .map(|method| {
            let cells = spec.grid.cells(method.arch);
            let outcome = grid_search(method, &cells, &spec.schedule, &train, &valid, run_seed)?;
            let best = outcome.best;
            let test_report = score(&best.params, &test, spec.schedule.eval)?;
            Ok(RunRecord {
                run,
                method: method.label.clone(),
                seed: run_seed,
                cell: best.cell,
                best_epoch: best.best_epoch,
                valid_q_adj: best.valid_q_adj,
                test: test_report,
                active_nodes: method.arch.has_hidden().then(|| best.params.active_nodes()),
            })
        })
        .collect()
}

/// Runs `spec.runs` repetitions of split, grid search and test scoring.
pub fn run_benchmark(spec: &ExperimentSpec) -> Result<BenchmarkResult> {
    spec.validate()?;
    let base = match &spec.source {
        DataSource::Csv(path) => Some(Dataset::load_csv(path)?),
        DataSource::Scenario(s) => {
            s.validate()?;
            None
        }
    };
    let pool = thread_pool()?;
    let per_run: Vec<Result<Vec<RunRecord>>> = pool.install(|| {
        (1..=spec.runs)
            .into_par_iter()
            .map(|run| {
                run_one(spec, base.as_ref(), run).map_err(|e| Error::Run {
                    run,
                    source: Box::new(e),
                })
            })
            .collect()
    });
    let mut runs = Vec::new();
    for r in per_run {
        runs.extend(r?);
    }
    let rows = spec
        .methods
        .iter()
        .map(|m| {
            let recs: Vec<&RunRecord> = runs.iter().filter(|r| r.method == m.label).collect();
            let q_adj: Vec<f64> = recs.iter().map(|r| r.test.q_adj).collect();
            let (mean, se) = mean_se(&q_adj);
            let mean_q_hat = recs.iter().map(|r| r.test.q_hat).sum::<f64>() / recs.len() as f64;
            let mean_active_nodes = m.arch.has_hidden().then(|| {
                recs.iter().map(|r| r.active_nodes.unwrap_or(0) as f64).sum::<f64>() / recs.len() as f64
            });
            BenchmarkRow {
                method: m.label.clone(),
                selected: recs.iter().map(|r| r.cell).collect(),
                q_adj,
                mean,
                se,
                mean_q_hat,
                mean_active_nodes,
            }
        })
        .collect();
    Ok(BenchmarkResult { rows, runs })
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:?}"))
}

impl BenchmarkResult {
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,runs,mean_q_adj,se_q_adj,mean_q_hat,mean_active_nodes\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:?},{:?},{:?},{}",
                r.method,
                r.q_adj.len(),
                r.mean,
                r.se,
                r.mean_q_hat,
                opt_f64(r.mean_active_nodes)
            );
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from(
            "run,method,seed,eta,lambda1,lambda2,hidden,best_epoch,valid_q_adj,test_q_hat,test_rho_hat,test_q_adj,active_nodes\n",
        );
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{},{},{},{:?},{:?},{:?},{},{},{:?},{:?},{:?},{:?},{}",
                r.run,
                r.method,
                r.seed,
                r.cell.eta,
                r.cell.lambda1,
                r.cell.lambda2,
                r.cell.hidden,
                r.best_epoch,
                r.valid_q_adj,
                r.test.q_hat,
                r.test.rho_hat,
                r.test.q_adj,
                r.active_nodes.map_or_else(String::new, |m| m.to_string())
            );
        }
        s
    }

    /// Writes `summary.csv`, `runs.csv` and, per method, the test Qini curve of
    /// the final repetition's selected model (`curve_<method>.csv`).
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<()> {
        let dir = out_dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: String, body: String| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        put("summary.csv".into(), self.summary_csv())?;
        put("runs.csv".into(), self.runs_csv())?;
        let last_run = self.runs.iter().map(|r| r.run).max().unwrap_or(0);
        for r in self.runs.iter().filter(|r| r.run == last_run) {
            let mut buf = Vec::new();
            r.test
                .write_curve_csv(&mut buf)
                .expect("writing to memory cannot fail");
            put(
                format!("curve_{}.csv", r.method),
                String::from_utf8(buf).expect("ascii"),
            )?;
        }
        Ok(())
    }
}
