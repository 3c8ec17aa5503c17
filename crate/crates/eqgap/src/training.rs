//! Model identification: dataset splitting, Adam optimization of the
//! equilibrium-gap loss, architecture sweeps with validation-based
//! selection, test-set evaluation, and continuity scans of the identified
//! response.
//!
//! Training never sees stress labels. The only supervision is the
//! requirement that internal forces balance in the interior and sum to the
//! measured reactions at the grips, evaluated on the training steps;
//! validation steps steer early stopping and architecture choice; test
//! steps are held out entirely, which an access audit on the corpus can
//! verify.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{forward_solve_with, LoadProgram};
use crate::equilibrium::{equilibrium_loss, loss_gradient, DofPartition, EquilibriumReport};
use crate::error::{Error, Result};
use crate::icnn::{IcnnArch, IcnnParams};
use crate::kinematics::{precompute_quadrature, validate_dataset, Dataset, Mesh, QuadPoint};
use crate::material::Model;

/// One physical experiment: a specimen, its measured load steps, and the
/// roles of its grip node sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Experiment {
    pub name: String,
    pub mesh: Mesh,
    pub dataset: Dataset,
    /// Node sets with measured reactions (typically the moving grip).
    pub reaction_sets: Vec<String>,
    /// Node sets clamped without force measurement.
    pub fixed_sets: Vec<String>,
}

/// Address of one load step inside a corpus of experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepRef {
    pub dataset: usize,
    pub step: usize,
}

/// A corpus of experiments with precomputed quadrature and dof partitions,
/// plus an access audit: every step handed out is counted, so a test can
/// assert that held-out steps were never touched during training.
pub struct Corpus {
    experiments: Vec<Experiment>,
    quads: Vec<Vec<QuadPoint>>,
    partitions: Vec<DofPartition>,
    access: Vec<Vec<AtomicU64>>,
}

impl Corpus {
    pub fn new(mut experiments: Vec<Experiment>) -> Result<Self> {
        if experiments.is_empty() {
            return Err(Error::Config("corpus has no experiments".to_string()));
        }
        let mut quads = Vec::with_capacity(experiments.len());
        let mut partitions = Vec::with_capacity(experiments.len());
        let mut access = Vec::with_capacity(experiments.len());
        for exp in &mut experiments {
            exp.mesh.validate()?;
            validate_dataset(&exp.dataset, &exp.mesh)?;
            quads.push(precompute_quadrature(&exp.mesh));
            partitions.push(DofPartition::build(
                &exp.mesh,
                &exp.reaction_sets,
                &exp.fixed_sets,
            )?);
            access.push(
                (0..exp.dataset.steps.len())
                    .map(|_| AtomicU64::new(0))
                    .collect(),
            );
        }
        Ok(Corpus {
            experiments,
            quads,
            partitions,
            access,
        })
    }

    pub fn n_experiments(&self) -> usize {
        self.experiments.len()
    }

    pub fn experiment(&self, i: usize) -> &Experiment {
        &self.experiments[i]
    }

    pub fn quad(&self, i: usize) -> &[QuadPoint] {
        &self.quads[i]
    }

    pub fn partition(&self, i: usize) -> &DofPartition {
        &self.partitions[i]
    }

    /// Number of steps in each experiment, the input to [`split_dataset`].
    pub fn step_counts(&self) -> Vec<usize> {
        self.experiments
            .iter()
            .map(|e| e.dataset.steps.len())
            .collect()
    }

    /// Fetch a step and record the access.
    pub fn step(&self, r: StepRef) -> &crate::kinematics::LoadStep {
        self.access[r.dataset][r.step].fetch_add(1, Ordering::Relaxed);
        &self.experiments[r.dataset].dataset.steps[r.step]
    }

    /// How many times a step has been fetched.
    pub fn access_count(&self, r: StepRef) -> u64 {
        self.access[r.dataset][r.step].load(Ordering::Relaxed)
    }
}

/// How to carve training and validation steps out of one source experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub n_train: usize,
    pub n_val: usize,
    /// Index of the experiment supplying train and validation steps.
    pub source: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            n_train: 20,
            n_val: 6,
            source: 0,
        }
    }
}

/// Disjoint step assignments. Everything not selected for training or
/// validation, including every step of the other experiments, is test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<StepRef>,
    pub val: Vec<StepRef>,
    pub test: Vec<StepRef>,
}

/// Deterministic uniform-in-index split.
///
/// `n_train + n_val` steps are selected from the source experiment at
/// indices `floor(m * n / n_sel)`, spreading them evenly over the loading
/// history; validation steps are in turn spread evenly within the
/// selection. The remainder of the source plus all other experiments form
/// the test set.
pub fn split_dataset(step_counts: &[usize], cfg: &SplitConfig) -> Result<Split> {
    if cfg.source >= step_counts.len() {
        return Err(Error::Config(format!(
            "source experiment {} out of range ({} experiments)",
            cfg.source,
            step_counts.len()
        )));
    }
    if cfg.n_train == 0 {
        return Err(Error::Config(
            "insufficient training steps: n_train must be at least 1".to_string(),
        ));
    }
    if cfg.n_val == 0 {
        return Err(Error::Config(
            "early stopping and selection need n_val of at least 1".to_string(),
        ));
    }
    let n = step_counts[cfg.source];
    let n_sel = cfg.n_train + cfg.n_val;
    if n_sel > n {
        return Err(Error::InsufficientSteps {
            requested: n_sel,
            available: n,
        });
    }

    let selected: Vec<usize> = (0..n_sel).map(|m| m * n / n_sel).collect();
    let val_positions: Vec<usize> = (0..cfg.n_val).map(|k| k * n_sel / cfg.n_val).collect();

    let mut train = Vec::with_capacity(cfg.n_train);
    let mut val = Vec::with_capacity(cfg.n_val);
    for (pos, &step) in selected.iter().enumerate() {
        let r = StepRef {
            dataset: cfg.source,
            step,
        };
        if val_positions.contains(&pos) {
            val.push(r);
        } else {
            train.push(r);
        }
    }

    let mut test = Vec::new();
    for (dataset, &count) in step_counts.iter().enumerate() {
        for step in 0..count {
            let r = StepRef { dataset, step };
            if dataset != cfg.source || !selected.contains(&step) {
                test.push(r);
            }
        }
    }
    Ok(Split { train, val, test })
}

/// Adam with the usual defaults; the learning rate may be zero, which
/// freezes the parameters while still recording loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-3,
            max_epochs: 5000,
            patience: 200,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "max_epochs and patience must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Textbook Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, n_params: usize) -> Self {
        Adam {
            learning_rate,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        assert_eq!(theta.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
}

/// Loss history entry: losses evaluated at the parameters of this epoch,
/// before the epoch's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Outcome of a training run. `model` carries the parameters of the best
/// validation epoch, not the last one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResult {
    pub model: Model,
    pub history: Vec<TrainRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Mean equilibrium-gap loss of a model over a set of steps, no gradients.
pub fn mean_loss(model: &Model, corpus: &Corpus, refs: &[StepRef], lambda_r: f64) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let prepared = model.prepare();
    let mut total = 0.0;
    for &r in refs {
        let report = equilibrium_loss(
            &corpus.experiment(r.dataset).mesh,
            corpus.quad(r.dataset),
            corpus.partition(r.dataset),
            &prepared,
            corpus.step(r),
            lambda_r,
        )?;
        total += report.loss;
    }
    Ok(total / refs.len() as f64)
}

/// Mean training loss and its gradient with respect to the model's raw
/// parameters.
fn train_loss_and_grad(
    model: &Model,
    corpus: &Corpus,
    train: &[StepRef],
    lambda_r: f64,
) -> Result<(f64, Vec<f64>)> {
    let prepared = model.prepare();
    let mut grad = vec![0.0; model.count_parameters()];
    let mut total = 0.0;
    for dataset in 0..corpus.n_experiments() {
        let steps: Vec<&crate::kinematics::LoadStep> = train
            .iter()
            .filter(|r| r.dataset == dataset)
            .map(|&r| corpus.step(r))
            .collect();
        if steps.is_empty() {
            continue;
        }
        let reports = loss_gradient(
            &corpus.experiment(dataset).mesh,
            corpus.quad(dataset),
            corpus.partition(dataset),
            &prepared,
            &steps,
            lambda_r,
            &mut grad,
        )?;
        total += reports.iter().map(|rep| rep.loss).sum::<f64>();
    }
    let inv_n = 1.0 / train.len() as f64;
    for g in &mut grad {
        *g *= inv_n;
    }
    Ok((total * inv_n, grad))
}

/// Minimize the mean equilibrium-gap loss over the training steps.
///
/// Full-batch Adam on the raw parameters, with per-epoch validation and
/// early stopping: training stops when the validation loss has not improved
/// for `patience` epochs. Deterministic: the same inputs give the same
/// history and parameters bit for bit.
pub fn train(
    init: &Model,
    corpus: &Corpus,
    split: &Split,
    opt: &OptimConfig,
    lambda_r: f64,
) -> Result<TrainResult> {
    opt.validate()?;
    init.validate()?;
    if split.train.is_empty() {
        return Err(Error::Config("training split is empty".to_string()));
    }
    if split.val.is_empty() {
        return Err(Error::Config("validation split is empty".to_string()));
    }

    let mut model = init.clone();
    let mut adam = Adam::new(opt.learning_rate, model.count_parameters());
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_theta: Vec<f64> = model.theta().to_vec();

    for epoch in 0..opt.max_epochs {
        let (train_loss, grad) = train_loss_and_grad(&model, corpus, &split.train, lambda_r)?;
        let val_loss = mean_loss(&model, corpus, &split.val, lambda_r)?;
        history.push(TrainRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_theta = model.theta().to_vec();
        }
        if epoch - best_epoch >= opt.patience {
            break;
        }
        adam.step(model.theta_mut(), &grad);
    }

    model.theta_mut().copy_from_slice(&best_theta);
    Ok(TrainResult {
        model,
        history,
        best_epoch,
        best_val,
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Initialization seed for one sweep candidate, derived from the base seed
/// and the architecture itself. Identical candidates therefore train
/// identically, making the tie-break rules observable.
pub fn derive_seed(base: u64, arch: &IcnnArch) -> u64 {
    let mut h = splitmix64(base);
    h = splitmix64(h ^ arch.n_in as u64);
    h = splitmix64(h ^ arch.passthrough as u64);
    for &w in &arch.widths {
        h = splitmix64(h ^ w as u64);
    }
    h
}

/// Per-candidate sweep outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchResult {
    pub arch: IcnnArch,
    pub params: usize,
    /// Training loss at the final recorded epoch.
    pub train_loss: f64,
    pub best_val: f64,
    pub wall_time_s: f64,
}

/// Sweep outcome: one row per candidate plus the selected model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub per_arch: Vec<ArchResult>,
    /// Index into `per_arch` of the winner: lowest best validation loss,
    /// ties broken by fewer parameters, then list order.
    pub selected: usize,
    pub model: Model,
}

/// Train every candidate architecture on the same split and select by
/// validation loss.
pub fn sweep(
    archs: &[IcnnArch],
    mode: crate::kinematics::KinematicMode,
    corpus: &Corpus,
    split: &Split,
    opt: &OptimConfig,
    lambda_r: f64,
) -> Result<SweepResult> {
    if archs.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one architecture".to_string(),
        ));
    }
    let mut per_arch = Vec::with_capacity(archs.len());
    let mut selected = 0usize;
    let mut best: Option<(f64, usize, Model)> = None;
    for arch in archs {
        let seed = derive_seed(opt.seed, arch);
        let params = IcnnParams::init(arch.clone(), seed)?;
        let init = Model::pann(params, mode);
        let start = Instant::now();
        let result = train(&init, corpus, split, opt, lambda_r)?;
        let wall_time_s = start.elapsed().as_secs_f64();
        let n_params = init.count_parameters();
        let record = ArchResult {
            arch: arch.clone(),
            params: n_params,
            train_loss: result
                .history
                .last()
                .expect("at least one epoch")
                .train_loss,
            best_val: result.best_val,
            wall_time_s,
        };
        let better = match &best {
            None => true,
            Some((val, count, _)) => {
                result.best_val < *val || (result.best_val == *val && n_params < *count)
            }
        };
        if better {
            selected = per_arch.len();
            best = Some((result.best_val, n_params, result.model));
        }
        per_arch.push(record);
    }
    let (_, _, model) = best.expect("at least one architecture");
    Ok(SweepResult {
        per_arch,
        selected,
        model,
    })
}

/// One point of a load-direction force-displacement curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step_id: u64,
    /// Mean vertical displacement of the reaction set (mm).
    pub applied: f64,
    /// Measured vertical reaction (N).
    pub measured: f64,
    /// Vertical reaction predicted by the model (N).
    pub predicted: f64,
}

/// Predicted-vs-measured curve for one reaction set of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForceCurve {
    pub experiment: String,
    pub set: String,
    pub points: Vec<CurvePoint>,
}

/// Test-set evaluation: per-step equilibrium reports plus aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub reports: Vec<(StepRef, EquilibriumReport)>,
    pub mean_loss: f64,
    pub mean_inner: f64,
    pub median_inner: f64,
    pub mean_boundary: f64,
    pub median_boundary: f64,
    pub curves: Vec<ForceCurve>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Evaluate a model on held-out steps. Pure evaluation: no parameter
/// updates, loss and residual statistics only, plus force-displacement
/// curves per experiment and reaction set.
pub fn evaluate(
    model: &Model,
    corpus: &Corpus,
    refs: &[StepRef],
    lambda_r: f64,
) -> Result<EvalResult> {
    if refs.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let prepared = model.prepare();
    let mut reports = Vec::with_capacity(refs.len());
    let mut curves: Vec<ForceCurve> = Vec::new();
    for &r in refs {
        let exp = corpus.experiment(r.dataset);
        let part = corpus.partition(r.dataset);
        let step = corpus.step(r);
        let report = equilibrium_loss(
            &exp.mesh,
            corpus.quad(r.dataset),
            part,
            &prepared,
            step,
            lambda_r,
        )?;
        for (beta, set) in part.reaction_sets.iter().enumerate() {
            let nodes = &part.reaction_nodes[beta];
            let applied =
                nodes.iter().map(|&n| step.displacements[n][1]).sum::<f64>() / nodes.len() as f64;
            let predicted = nodes.iter().map(|&n| report.node_forces[n][1]).sum::<f64>();
            let measured = step.reactions[set].force[1];
            let point = CurvePoint {
                step_id: step.step_id,
                applied,
                measured,
                predicted,
            };
            match curves
                .iter_mut()
                .find(|c| c.experiment == exp.name && c.set == *set)
            {
                Some(curve) => curve.points.push(point),
                None => curves.push(ForceCurve {
                    experiment: exp.name.clone(),
                    set: set.clone(),
                    points: vec![point],
                }),
            }
        }
        reports.push((r, report));
    }
    let n = reports.len() as f64;
    let mean_loss = reports.iter().map(|(_, rep)| rep.loss).sum::<f64>() / n;
    let mut inner: Vec<f64> = reports.iter().map(|(_, rep)| rep.inner_residual).collect();
    let mut boundary: Vec<f64> = reports
        .iter()
        .map(|(_, rep)| rep.boundary_residual)
        .collect();
    let mean_inner = inner.iter().sum::<f64>() / n;
    let mean_boundary = boundary.iter().sum::<f64>() / n;
    Ok(EvalResult {
        mean_loss,
        mean_inner,
        median_inner: median(&mut inner),
        mean_boundary,
        median_boundary: median(&mut boundary),
        reports,
        curves,
    })
}

/// Fine-increment scan of the identified model's reaction curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub stretches: Vec<f64>,
    /// Vertical reaction at the moving grip per substep (N).
    pub reactions: Vec<f64>,
    pub max_jump: Option<f64>,
    pub mean_jump: Option<f64>,
    /// max_jump / mean_jump; 0 for a flat curve; absent with < 2 jumps.
    pub jump_ratio: Option<f64>,
}

/// Drive the identified model through a fine version of the loading
/// program, sampling the predicted reaction between the trained steps. A
/// discontinuous identified response would show up as an outlier jump
/// between adjacent samples.
pub fn continuity_scan(
    model: &Model,
    mesh: &Mesh,
    program: &LoadProgram,
    n_substeps: usize,
    tol: f64,
    max_iter: usize,
) -> Result<ScanResult> {
    if n_substeps == 0 {
        return Err(Error::Config(
            "continuity scan needs at least one substep".to_string(),
        ));
    }
    if program.mode != model.mode() {
        return Err(Error::Config(format!(
            "program mode {:?} does not match model mode {:?}",
            program.mode,
            model.mode()
        )));
    }
    program.validate()?;
    let max = *program.stretches.last().expect("validated non-empty");
    let stretches = if max > 1.0 {
        crate::datagen::stretch_ramp(max, n_substeps)
    } else {
        vec![1.0]
    };
    let scan_program = LoadProgram {
        grip_style: program.grip_style,
        mode: program.mode,
        stretches: stretches.clone(),
    };
    let prepared = model.prepare();
    let data = forward_solve_with(mesh, &prepared, &scan_program, tol, max_iter)?;
    let reactions: Vec<f64> = data
        .steps
        .iter()
        .map(|s| s.reactions["top"].force[1])
        .collect();

    let jumps: Vec<f64> = reactions.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let (max_jump, mean_jump, jump_ratio) = if jumps.len() < 2 {
        (None, None, None)
    } else {
        let max_j = jumps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean_j = jumps.iter().sum::<f64>() / jumps.len() as f64;
        let ratio = if mean_j == 0.0 { 0.0 } else { max_j / mean_j };
        (Some(max_j), Some(mean_j), Some(ratio))
    };
    Ok(ScanResult {
        stretches,
        reactions,
        max_jump,
        mean_jump,
        jump_ratio,
    })
}
