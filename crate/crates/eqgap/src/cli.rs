//! Command-line surface: generate -> split -> train/sweep -> evaluate ->
//! predict/continuity-scan.
//!
//! Every command reads one optional JSON run configuration plus flag
//! overrides, writes models as JSON and tables as CSV with header rows, and
//! is idempotent: repeating a command with the same inputs and seeds
//! produces byte-identical outputs. Exit codes: 0 success, 2 configuration
//! or input error, 3 forward-solver failure, 4 numerical abort.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Matrix2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    default_mooney_rivlin, default_notched_config, default_strip_config, GenerateConfig, GripStyle,
    LoadProgram,
};
use crate::error::{Error, Result};
use crate::icnn::{default_sweep, IcnnArch, IcnnParams};
use crate::kinematics::{
    load_dataset, load_mesh, smooth_dataset, smooth_dataset_spacetime, KinematicMode, Mesh,
};
use crate::material::Model;
use crate::training::{
    continuity_scan, evaluate, split_dataset, sweep, train, Corpus, EvalResult, Experiment,
    OptimConfig, Split, SplitConfig, SweepResult, TrainResult,
};

/// Identify hyperelastic constitutive models from full-field displacement
/// data and reaction forces by minimizing the equilibrium gap.
#[derive(Debug, Parser)]
#[command(name = "eqgap", version, max_term_width = 100)]
struct Cli {
    /// Worker cap for internal parallelism. This build always reduces
    /// sequentially, so any value acts like 1; must still be at least 1.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Force sequential reductions for bit-reproducible outputs. Always on
    /// in this build; the flag is accepted for forward compatibility.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Manufacture synthetic experiments with a known ground-truth material.
    Generate(GenerateArgs),
    /// Carve train/validation/test step assignments out of a corpus.
    Split(SplitArgs),
    /// Fit one model to the training steps by equilibrium-gap descent.
    Train(TrainArgs),
    /// Train every candidate architecture and select by validation loss.
    Sweep(SweepArgs),
    /// Score a model on held-out test steps.
    Evaluate(EvaluateArgs),
    /// Tabulate energy and stress for a list of deformation gradients.
    Predict(PredictArgs),
    /// Sample the identified reaction curve at fine stretch increments.
    ContinuityScan(ScanArgs),
}

/// One experiment's file locations and grip roles inside a run config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub mesh: String,
    pub dataset: String,
    #[serde(default = "default_reaction_sets")]
    pub reaction_sets: Vec<String>,
    #[serde(default = "default_fixed_sets")]
    pub fixed_sets: Vec<String>,
    /// Optional displacement denoising applied right after loading.
    #[serde(default)]
    pub smooth: Option<SmoothSpec>,
}

/// Polynomial denoising of a measured displacement field: least-squares
/// projection of total spatial degree `degree`, optionally followed by a
/// `step_degree` fit of every coefficient trajectory across load steps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SmoothSpec {
    pub degree: usize,
    #[serde(default)]
    pub step_degree: Option<usize>,
}

fn default_reaction_sets() -> Vec<String> {
    vec!["top".to_string()]
}

fn default_fixed_sets() -> Vec<String> {
    vec!["bottom".to_string()]
}

/// A named synthetic experiment recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedGenerate {
    pub name: String,
    #[serde(flatten)]
    pub config: GenerateConfig,
}

/// Static description of a run; every command reads the sections it needs.
/// Flags override individual fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Experiments to load (mesh + dataset paths, grip roles).
    pub experiments: Vec<ExperimentSpec>,
    /// Directory receiving all written artifacts.
    pub out_dir: Option<String>,
    /// Model JSON to evaluate or scan.
    pub model: Option<String>,
    pub mode: KinematicMode,
    /// Reaction-term weight in the equilibrium-gap loss.
    pub lambda_r: f64,
    pub split: SplitConfig,
    /// Existing split file; when absent, commands derive the split from
    /// `split` on the fly.
    pub split_file: Option<String>,
    pub optim: OptimConfig,
    /// Sweep candidates; defaults to the built-in ten architectures.
    pub archs: Option<Vec<IcnnArch>>,
    /// Synthetic experiments for `generate`.
    pub generate: Vec<NamedGenerate>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiments: Vec::new(),
            out_dir: None,
            model: None,
            mode: KinematicMode::PlaneStrain,
            lambda_r: 100.0,
            split: SplitConfig::default(),
            split_file: None,
            optim: OptimConfig::default(),
            archs: None,
            generate: Vec::new(),
        }
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Run configuration; without it, two default Mooney-Rivlin
    /// experiments (plain and notched strip) are generated.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (must exist).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Run configuration listing the experiments.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    /// Index of the experiment supplying train and validation steps.
    #[arg(long)]
    source: Option<usize>,
    /// Split file to write (default: <out_dir>/split.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Family {
    NeoHookean,
    Pann,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run configuration listing the experiments.
    #[arg(long)]
    config: PathBuf,
    /// Split file (overrides the config's split_file).
    #[arg(long)]
    split: Option<PathBuf>,
    /// Model JSON to start from, overriding --family.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Model family to initialize when --init is absent.
    #[arg(long, value_enum, default_value_t = Family::NeoHookean)]
    family: Family,
    /// Hidden-layer widths for --family pann, comma-separated.
    #[arg(long, default_value = "16,16")]
    widths: String,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Run configuration listing the experiments.
    #[arg(long)]
    config: PathBuf,
    /// Split file (overrides the config's split_file).
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Run configuration listing the experiments.
    #[arg(long)]
    config: PathBuf,
    /// Model JSON to evaluate (overrides the config's model path).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Split file (overrides the config's split_file).
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Input CSV with header f11,f12,f21,f22.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ScanArgs {
    /// Model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Mesh JSON to drive the scan on.
    #[arg(long)]
    mesh: PathBuf,
    /// Final nominal stretch of the scan.
    #[arg(long)]
    max_stretch: f64,
    #[arg(long, default_value_t = 100)]
    substeps: usize,
    #[arg(long, value_enum, default_value_t = Grips::Clamped)]
    grips: Grips,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 25)]
    max_iter: usize,
    /// Curve CSV to write.
    #[arg(long, default_value = "scan.csv")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Grips {
    Clamped,
    Frictionless,
}

impl From<Grips> for GripStyle {
    fn from(g: Grips) -> GripStyle {
        match g {
            Grips::Clamped => GripStyle::Clamped,
            Grips::Frictionless => GripStyle::Frictionless,
        }
    }
}

/// Parse arguments, run the selected command, and translate errors into
/// exit codes.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Split(args) => cmd_split(args),
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::ContinuityScan(args) => cmd_continuity_scan(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_)
        | Error::Parse(_)
        | Error::MeshInvalid(_)
        | Error::DanglingNodeSet { .. }
        | Error::DatasetInvalid(_)
        | Error::Config(_)
        | Error::InsufficientSteps { .. }
        | Error::EmptyFreeSet
        | Error::EmptyTestSet => 2,
        Error::InvertedElement { .. }
        | Error::InvertedDeformation { .. }
        | Error::SolverDiverged { .. } => 3,
        Error::NonPositiveDet { .. }
        | Error::NonFiniteForce { .. }
        | Error::NonFiniteLoss { .. } => 4,
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn load_config(path: &Path) -> Result<RunConfig> {
    read_json(path)
}

fn load_mesh_file(path: &Path) -> Result<Mesh> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    load_mesh(std::io::BufReader::new(file))
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    if cfg.experiments.is_empty() {
        return Err(Error::Config(
            "run configuration lists no experiments".to_string(),
        ));
    }
    let mut experiments = Vec::with_capacity(cfg.experiments.len());
    for spec in &cfg.experiments {
        let mesh = load_mesh_file(Path::new(&spec.mesh))?;
        let file = fs::File::open(&spec.dataset)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", spec.dataset)))?;
        let mut dataset = load_dataset(std::io::BufReader::new(file), &mesh)?;
        if let Some(smooth) = &spec.smooth {
            dataset = match smooth.step_degree {
                Some(q) => smooth_dataset_spacetime(&dataset, &mesh, smooth.degree, q)?,
                None => smooth_dataset(&dataset, &mesh, smooth.degree)?,
            };
        }
        experiments.push(Experiment {
            name: spec.name.clone(),
            mesh,
            dataset,
            reaction_sets: spec.reaction_sets.clone(),
            fixed_sets: spec.fixed_sets.clone(),
        });
    }
    Corpus::new(experiments)
}

fn resolve_out_dir(flag: &Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Load the split from a file when one is named, otherwise derive it from
/// the split section.
fn resolve_split(cfg: &RunConfig, flag: &Option<PathBuf>, corpus: &Corpus) -> Result<Split> {
    let path = flag
        .clone()
        .or_else(|| cfg.split_file.as_ref().map(PathBuf::from));
    match path {
        Some(p) => read_json(&p),
        None => split_dataset(&corpus.step_counts(), &cfg.split),
    }
}

fn apply_optim_overrides(
    optim: &mut OptimConfig,
    learning_rate: Option<f64>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    seed: Option<u64>,
) {
    if let Some(v) = learning_rate {
        optim.learning_rate = v;
    }
    if let Some(v) = max_epochs {
        optim.max_epochs = v;
    }
    if let Some(v) = patience {
        optim.patience = v;
    }
    if let Some(v) = seed {
        optim.seed = v;
    }
}

/// Shortest-roundtrip decimal text for CSV cells.
fn csv_num(v: f64) -> String {
    format!("{v}")
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    let jobs = if cfg.generate.is_empty() {
        vec![
            NamedGenerate {
                name: "strip".to_string(),
                config: default_strip_config(default_mooney_rivlin()),
            },
            NamedGenerate {
                name: "notched".to_string(),
                config: default_notched_config(default_mooney_rivlin()),
            },
        ]
    } else {
        cfg.generate.clone()
    };
    let out_dir = resolve_out_dir(&args.out_dir, &cfg);
    if !out_dir.is_dir() {
        return Err(Error::Config(format!(
            "output directory {} does not exist",
            out_dir.display()
        )));
    }
    for job in &jobs {
        let generated = job.config.run()?;
        write_json(
            &out_dir.join(format!("{}.mesh.json", job.name)),
            &generated.mesh,
        )?;
        write_json(
            &out_dir.join(format!("{}.dataset.json", job.name)),
            &generated.dataset,
        )?;
        println!(
            "{}: {} nodes, {} elements, {} steps, max local stretch {:.4}",
            job.name,
            generated.mesh.node_count(),
            generated.mesh.elements.connectivity.len(),
            generated.dataset.steps.len(),
            generated.max_stretch
        );
    }
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let mut split_cfg = cfg.split;
    if let Some(v) = args.n_train {
        split_cfg.n_train = v;
    }
    if let Some(v) = args.n_val {
        split_cfg.n_val = v;
    }
    if let Some(v) = args.source {
        split_cfg.source = v;
    }
    let corpus = load_corpus(&cfg)?;
    let split = split_dataset(&corpus.step_counts(), &split_cfg)?;
    let out = args
        .out
        .unwrap_or_else(|| resolve_out_dir(&None, &cfg).join("split.json"));
    write_json(&out, &split)?;
    println!(
        "split: {} train, {} val, {} test -> {}",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        out.display()
    );
    Ok(())
}

fn parse_widths(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("invalid width list \"{text}\"")))
        })
        .collect()
}

fn initial_model(args: &TrainArgs, cfg: &RunConfig) -> Result<Model> {
    if let Some(path) = &args.init {
        return read_json(path);
    }
    match args.family {
        Family::NeoHookean => Model::neo_hookean(cfg.mode, 1.0, 1.0),
        Family::Pann => {
            let arch = IcnnArch::new(
                crate::invariants::N_INVARIANTS,
                parse_widths(&args.widths)?,
                true,
            )?;
            let params = IcnnParams::init(arch, cfg.optim.seed)?;
            Ok(Model::pann(params, cfg.mode))
        }
    }
}

fn write_history_csv(path: &Path, result: &TrainResult) -> Result<()> {
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for rec in &result.history {
        text.push_str(&format!(
            "{},{},{}\n",
            rec.epoch,
            csv_num(rec.train_loss),
            csv_num(rec.val_loss)
        ));
    }
    write_text(path, &text)
}

fn write_train_metrics_csv(path: &Path, result: &TrainResult) -> Result<()> {
    let final_rec = result.history.last().expect("non-empty history");
    let mut text = String::from("metric,value\n");
    text.push_str(&format!("epochs_run,{}\n", result.history.len()));
    text.push_str(&format!("best_epoch,{}\n", result.best_epoch));
    text.push_str(&format!("best_val_loss,{}\n", csv_num(result.best_val)));
    text.push_str(&format!(
        "final_train_loss,{}\n",
        csv_num(final_rec.train_loss)
    ));
    write_text(path, &text)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    apply_optim_overrides(
        &mut cfg.optim,
        args.learning_rate,
        args.max_epochs,
        args.patience,
        args.seed,
    );
    if let Some(v) = args.lambda_r {
        cfg.lambda_r = v;
    }
    let corpus = load_corpus(&cfg)?;
    let split = resolve_split(&cfg, &args.split, &corpus)?;
    let init = initial_model(&args, &cfg)?;
    let result = train(&init, &corpus, &split, &cfg.optim, cfg.lambda_r)?;

    let out_dir = resolve_out_dir(&args.out_dir, &cfg);
    write_json(&out_dir.join("model.json"), &result.model)?;
    write_history_csv(&out_dir.join("history.csv"), &result)?;
    write_train_metrics_csv(&out_dir.join("metrics.csv"), &result)?;
    println!(
        "trained {} epochs, best validation loss {} at epoch {}",
        result.history.len(),
        result.best_val,
        result.best_epoch
    );
    Ok(())
}

fn write_sweep_csv(path: &Path, result: &SweepResult) -> Result<()> {
    let mut text = String::from("arch_id,params,train_loss,val_loss,selected\n");
    for (i, arch) in result.per_arch.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            i,
            arch.params,
            csv_num(arch.train_loss),
            csv_num(arch.best_val),
            u8::from(i == result.selected)
        ));
    }
    write_text(path, &text)
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    apply_optim_overrides(
        &mut cfg.optim,
        args.learning_rate,
        args.max_epochs,
        args.patience,
        args.seed,
    );
    if let Some(v) = args.lambda_r {
        cfg.lambda_r = v;
    }
    let corpus = load_corpus(&cfg)?;
    let split = resolve_split(&cfg, &args.split, &corpus)?;
    let archs = cfg.archs.clone().unwrap_or_else(default_sweep);
    let result = sweep(&archs, cfg.mode, &corpus, &split, &cfg.optim, cfg.lambda_r)?;

    let out_dir = resolve_out_dir(&args.out_dir, &cfg);
    write_sweep_csv(&out_dir.join("sweep.csv"), &result)?;
    write_json(&out_dir.join("model.json"), &result.model)?;
    let winner = &result.per_arch[result.selected];
    println!(
        "swept {} architectures; selected #{} ({} parameters, validation loss {})",
        result.per_arch.len(),
        result.selected,
        winner.params,
        winner.best_val
    );
    Ok(())
}

fn write_eval_outputs(out_dir: &Path, corpus: &Corpus, eval: &EvalResult) -> Result<()> {
    let mut text = String::from("metric,value\n");
    text.push_str(&format!("n_steps,{}\n", eval.reports.len()));
    text.push_str(&format!("mean_loss,{}\n", csv_num(eval.mean_loss)));
    text.push_str(&format!("mean_inner,{}\n", csv_num(eval.mean_inner)));
    text.push_str(&format!("median_inner,{}\n", csv_num(eval.median_inner)));
    text.push_str(&format!("mean_boundary,{}\n", csv_num(eval.mean_boundary)));
    text.push_str(&format!(
        "median_boundary,{}\n",
        csv_num(eval.median_boundary)
    ));
    write_text(&out_dir.join("metrics.csv"), &text)?;

    let mut text =
        String::from("dataset,step,step_id,loss,inner_residual,boundary_residual,force_scale\n");
    for (r, report) in &eval.reports {
        let step_id = corpus.experiment(r.dataset).dataset.steps[r.step].step_id;
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.dataset,
            r.step,
            step_id,
            csv_num(report.loss),
            csv_num(report.inner_residual),
            csv_num(report.boundary_residual),
            csv_num(report.force_scale)
        ));
    }
    write_text(&out_dir.join("steps.csv"), &text)?;

    let mut text = String::from("experiment,set,step_id,applied,measured,predicted\n");
    for curve in &eval.curves {
        for p in &curve.points {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                curve.experiment,
                curve.set,
                p.step_id,
                csv_num(p.applied),
                csv_num(p.measured),
                csv_num(p.predicted)
            ));
        }
    }
    write_text(&out_dir.join("curves.csv"), &text)?;

    // Residual map of the worst test step by loss.
    let (worst_ref, worst) = eval
        .reports
        .iter()
        .max_by(|a, b| a.1.loss.partial_cmp(&b.1.loss).expect("finite losses"))
        .expect("non-empty evaluation");
    let mesh = &corpus.experiment(worst_ref.dataset).mesh;
    let mut text = String::from("node,x,y,fx,fy\n");
    for (n, coords) in mesh.nodes.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            n,
            csv_num(coords[0]),
            csv_num(coords[1]),
            csv_num(worst.node_forces[n][0]),
            csv_num(worst.node_forces[n][1])
        ));
    }
    write_text(&out_dir.join("residual_map.csv"), &text)?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(v) = args.lambda_r {
        cfg.lambda_r = v;
    }
    let model_path = args
        .model
        .clone()
        .or_else(|| cfg.model.as_ref().map(PathBuf::from))
        .ok_or_else(|| {
            Error::Config("no model given: pass --model or set it in the config".to_string())
        })?;
    let model: Model = read_json(&model_path)?;
    model.validate()?;
    let corpus = load_corpus(&cfg)?;
    let split = resolve_split(&cfg, &args.split, &corpus)?;
    let eval = evaluate(&model, &corpus, &split.test, cfg.lambda_r)?;

    let out_dir = resolve_out_dir(&args.out_dir, &cfg);
    write_eval_outputs(&out_dir, &corpus, &eval)?;
    println!(
        "evaluated {} test steps: mean loss {}, median inner {} N^2, median boundary {} N^2",
        eval.reports.len(),
        eval.mean_loss,
        eval.median_inner,
        eval.median_boundary
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let model: Model = read_json(&args.model)?;
    model.validate()?;
    let prepared = model.prepare();
    let text = fs::read_to_string(&args.input)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.input.display())))?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty deformation-gradient CSV".to_string()))?
        .1;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if names != ["f11", "f12", "f21", "f22"] {
        return Err(Error::Config(format!(
            "expected CSV header f11,f12,f21,f22, got \"{header}\""
        )));
    }

    let mut out = String::from("f11,f12,f21,f22,w,p11,p12,p21,p22\n");
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("line {}: bad number \"{v}\"", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if fields.len() != 4 {
            return Err(Error::Config(format!(
                "line {}: expected 4 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let f2 = Matrix2::new(fields[0], fields[1], fields[2], fields[3]);
        let det = f2.determinant();
        if det <= 0.0 {
            return Err(Error::NonPositiveDet { det });
        }
        let w = prepared.energy(&f2);
        let p = prepared.stress(&f2);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            csv_num(fields[0]),
            csv_num(fields[1]),
            csv_num(fields[2]),
            csv_num(fields[3]),
            csv_num(w),
            csv_num(p[(0, 0)]),
            csv_num(p[(0, 1)]),
            csv_num(p[(1, 0)]),
            csv_num(p[(1, 1)])
        ));
    }
    write_text(&args.output, &out)?;
    println!(
        "predicted {} states -> {}",
        out.lines().count() - 1,
        args.output.display()
    );
    Ok(())
}

fn cmd_continuity_scan(args: ScanArgs) -> Result<()> {
    let model: Model = read_json(&args.model)?;
    model.validate()?;
    let mesh = load_mesh_file(&args.mesh)?;
    let program = LoadProgram {
        grip_style: args.grips.into(),
        mode: model.mode(),
        stretches: vec![args.max_stretch],
    };
    let scan = continuity_scan(
        &model,
        &mesh,
        &program,
        args.substeps,
        args.tol,
        args.max_iter,
    )?;

    let mut text = String::from("stretch,reaction\n");
    for (s, r) in scan.stretches.iter().zip(&scan.reactions) {
        text.push_str(&format!("{},{}\n", csv_num(*s), csv_num(*r)));
    }
    write_text(&args.out, &text)?;
    match (scan.max_jump, scan.mean_jump, scan.jump_ratio) {
        (Some(max), Some(mean), Some(ratio)) => println!(
            "scanned {} substeps to stretch {}: max jump {max} N, mean jump {mean} N, ratio {ratio:.3}",
            scan.stretches.len(),
            args.max_stretch
        ),
        _ => println!(
            "scanned {} substeps to stretch {}: too few samples for a jump metric",
            scan.stretches.len(),
            args.max_stretch
        ),
    }
    Ok(())
}
