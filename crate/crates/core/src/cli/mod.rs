//! Command-line interface: run configuration, checkpoints and the
//! `gen-data`, `train-init`, `train-refine`, `eval` and `infer` commands.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{RunConfig, SEED_ENV};

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{self, generate, load_dataset, resolve_manifest, write_dataset, DatasetSpec};
use crate::metrics::{write_pr_csv, FAggregation};
use crate::nn::ParamStore;
use crate::racdnn::{
    evaluate_stage, fit_image, initial_saliency, run_refinement, train_initial, train_refinement, EpochLog, InitialNet,
    Preset, Refiner, Stage,
};
use crate::{Error, Result};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "racdnn", version, about = "Recurrent attentional saliency refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic saliency dataset.
    GenData(GenDataArgs),
    /// Train the initial encoder-decoder network.
    TrainInit(TrainInitArgs),
    /// Train the refinement network on top of a trained initial network.
    TrainRefine(TrainRefineArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Predict the saliency map of one image.
    Infer(InferArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub min_scale: f64,
    #[arg(long, default_value_t = 0.7)]
    pub max_scale: f64,
}

/// Flags shared by the training commands; each overrides the config file.
#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Args, Debug)]
pub struct TrainInitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Args, Debug)]
pub struct TrainRefineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub init_ckpt: PathBuf,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    /// Iterations including the full-image one.
    #[arg(long)]
    pub iters: Option<usize>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report_dir: PathBuf,
    /// Defaults to every stage the checkpoint contains.
    #[arg(long)]
    pub stage: Option<Stage>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Average per-image maximum F-measures instead of the mean PR curve.
    #[arg(long)]
    pub mean_of_max: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    #[arg(long)]
    pub stage: Option<Stage>,
    #[arg(long)]
    pub iters: Option<usize>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn env_seed(seed: u64) -> Result<u64> {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.apply_env()?;
    Ok(cfg.seed)
}

fn merge(
    mut cfg: RunConfig,
    flags: &TrainFlags,
    epochs: impl FnOnce(&mut RunConfig) -> &mut usize,
) -> Result<RunConfig> {
    if let Some(p) = &flags.preset {
        cfg.preset = p.clone();
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(b) = flags.batch_size {
        cfg.batch_size = b;
    }
    if flags.no_augment {
        cfg.augment = false;
    }
    if let Some(e) = flags.epochs {
        *epochs(&mut cfg) = e;
    }
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn base_config(flags: &TrainFlags) -> Result<RunConfig> {
    match &flags.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn initial_template(preset: &Preset) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    InitialNet::new(preset.clone())?.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok(store)
}

fn full_template(preset: &Preset) -> Result<ParamStore> {
    let mut store = initial_template(preset)?;
    Refiner::new(preset.clone())?.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok(store)
}

fn has_refinement(store: &ParamStore) -> bool {
    store.contains_prefix("rec.")
}

/// Loads a checkpoint and checks it against its preset's architecture.
pub fn load_checked(path: &Path) -> Result<(Checkpoint, Preset)> {
    let ckpt = Checkpoint::load(path)?;
    let preset = ckpt.config.preset()?;
    let template = if has_refinement(&ckpt.store) {
        full_template(&preset)?
    } else {
        initial_template(&preset)?
    };
    ckpt.check_against(&template)?;
    Ok((ckpt, preset))
}

fn load_split(path: &Path) -> Result<(Vec<data::Sample>, Vec<data::Sample>)> {
    let samples = load_dataset(&resolve_manifest(path))?;
    Ok(data::split(samples))
}

fn log_epochs(out: &mut dyn Write) -> impl FnMut(&EpochLog) + '_ {
    move |l: &EpochLog| {
        let _ = writeln!(out, "{},{:.6},{:.6}", l.epoch, l.train_loss, l.val_loss);
    }
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<usize> {
    let mut spec = DatasetSpec::new(env_seed(args.seed)?, args.count, args.size);
    spec.scale_range = (args.min_scale, args.max_scale);
    let samples = generate(&spec)?;
    write_dataset(&args.out, &samples)?;
    Ok(samples.len())
}

pub fn cmd_train_init(args: &TrainInitArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = merge(base_config(&args.flags)?, &args.flags, |c| &mut c.init_epochs)?;
    if let Some(lr) = args.flags.lr {
        cfg.init_lr = lr;
    }
    cfg.validate()?;
    let preset = cfg.preset()?;
    let (train, val) = load_split(&args.data)?;
    let net = InitialNet::new(preset)?;
    let mut store = ParamStore::new();
    net.init(&mut store, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    writeln!(out, "epoch,train_bce,val_bce").map_err(write_err(Path::new("<stdout>")))?;
    let outcome = train_initial(
        &net,
        &mut store,
        &train,
        &val,
        &cfg.initial_stage(),
        &mut log_epochs(out),
    )?;
    cfg.data = None;
    Checkpoint {
        store,
        optimizer: Some(outcome.optimizer),
        config: cfg,
    }
    .save(&args.out_ckpt)
}

pub fn cmd_train_refine(args: &TrainRefineArgs, out: &mut dyn Write) -> Result<()> {
    let (init, preset) = load_checked(&args.init_ckpt)?;
    let base = match &args.flags.config {
        Some(p) => RunConfig::load(p)?,
        None => init.config.clone(),
    };
    let mut cfg = merge(base, &args.flags, |c| &mut c.refine_epochs)?;
    if let Some(lr) = args.flags.lr {
        cfg.refine_lr = lr;
    }
    if let Some(n) = args.iters {
        cfg.iterations = n;
    }
    cfg.validate()?;
    if cfg.preset != preset.name {
        return Err(Error::InvalidArgument(format!(
            "preset {} does not match the initial checkpoint's preset {}",
            cfg.preset, preset.name
        )));
    }
    let (train, val) = load_split(&args.data)?;
    let mut store = ParamStore::new();
    for (name, t) in init.store.params().filter(|(n, _)| n.starts_with("init.")) {
        store.insert_param(name.clone(), t.clone());
    }
    for (name, t) in init.store.buffers().filter(|(n, _)| n.starts_with("init.")) {
        store.insert_buffer(name.clone(), t.clone());
    }
    let refiner = Refiner::new(preset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    refiner.init(&mut store, &mut rng)?;
    refiner.adopt_initial(&mut store)?;
    writeln!(out, "epoch,train_bce,val_bce").map_err(write_err(Path::new("<stdout>")))?;
    let outcome = train_refinement(
        &refiner,
        &mut store,
        &train,
        &val,
        &cfg.refine_stage(),
        cfg.iterations,
        &mut log_epochs(out),
    )?;
    Checkpoint {
        store,
        optimizer: Some(outcome.optimizer),
        config: cfg,
    }
    .save(&args.out_ckpt)
}

/// Returns the `(stage, max_f, mae)` rows written to `summary.csv`.
pub fn cmd_eval(args: &EvalArgs) -> Result<Vec<(Stage, f64, f64)>> {
    let (ckpt, preset) = load_checked(&args.ckpt)?;
    let refined = has_refinement(&ckpt.store);
    let stages = match args.stage {
        Some(Stage::Refined) if !refined => {
            return Err(Error::InvalidArgument("checkpoint has no refinement network".into()))
        }
        Some(s) => vec![s],
        None if refined => vec![Stage::Initial, Stage::Refined],
        None => vec![Stage::Initial],
    };
    let iterations = args.iters.unwrap_or(ckpt.config.iterations);
    let samples = load_dataset(&resolve_manifest(&args.data))?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let mode = if args.mean_of_max {
        FAggregation::MeanOfMax
    } else {
        FAggregation::MeanCurve
    };
    fs::create_dir_all(&args.report_dir).map_err(write_err(&args.report_dir))?;
    let mut rows = Vec::new();
    let mut summary = String::from("stage,max_f,mae\n");
    for stage in stages {
        let report = evaluate_stage(&ckpt.store, &preset, stage, iterations, &samples, mode)?;
        let pr_path = args.report_dir.join(format!("pr_{stage}.csv"));
        let mut buf = Vec::new();
        write_pr_csv(&mut buf, &report.pr).map_err(write_err(&pr_path))?;
        fs::write(&pr_path, buf).map_err(write_err(&pr_path))?;
        summary.push_str(&format!("{stage},{:.6},{:.6}\n", report.max_f, report.mae));
        rows.push((stage, report.max_f, report.mae));
    }
    let path = args.report_dir.join("summary.csv");
    fs::write(&path, summary).map_err(write_err(&path))?;
    Ok(rows)
}

/// Writes the map at the input image's size; returns the number of
/// iterations traced.
pub fn cmd_infer(args: &InferArgs) -> Result<usize> {
    let (ckpt, preset) = load_checked(&args.ckpt)?;
    let image = data::read_image(&args.image)?;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let fitted = fit_image(&preset, &image)?;
    let (r0, s0) = initial_saliency(&ckpt.store, &preset, &fitted)?;
    let stage = args.stage.unwrap_or(if has_refinement(&ckpt.store) {
        Stage::Refined
    } else {
        Stage::Initial
    });
    let n = match stage {
        Stage::Refined if !has_refinement(&ckpt.store) => {
            return Err(Error::InvalidArgument("checkpoint has no refinement network".into()))
        }
        Stage::Refined => args.iters.unwrap_or(ckpt.config.iterations),
        Stage::Initial => 1,
    };
    if n == 0 {
        return Err(Error::InvalidArgument("iterations must be >= 1".into()));
    }
    let (map, trace) = if stage == Stage::Refined {
        let (map, trace) = run_refinement(&ckpt.store, &preset, &fitted, &r0, n)?;
        (map, Some(trace))
    } else {
        (s0, None)
    };
    data::write_map(&args.out, &data::resize_bilinear(&map, h, w)?)?;
    let Some(dir) = &args.trace_dir else {
        return Ok(n);
    };
    fs::create_dir_all(dir).map_err(write_err(dir))?;
    let mut csv = String::from("iter,a_s,a_tx,a_ty\n");
    match trace {
        Some(trace) => {
            for (i, e) in trace.entries.iter().enumerate() {
                let a = e.attention;
                csv.push_str(&format!("{i},{:.6},{:.6},{:.6}\n", a.scale, a.tx, a.ty));
                let running = e.map.map(crate::tensor::sigmoid_value);
                data::write_map(&dir.join(format!("iter_{i:02}.pgm")), &running)?;
            }
        }
        None => {
            csv.push_str("0,1.000000,0.000000,0.000000\n");
            data::write_map(&dir.join("iter_00.pgm"), &r0.map(crate::tensor::sigmoid_value))?;
        }
    }
    let path = dir.join("trace.csv");
    fs::write(&path, csv).map_err(write_err(&path))?;
    Ok(n)
}

/// Condenses a clap error to one line.
fn one_line(rendered: &str) -> String {
    rendered
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("Usage:") && !l.starts_with("For more information"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr as a single line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", one_line(&e.render().to_string()));
            return EXIT_USAGE;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a).map(|_| ()),
        Command::TrainInit(a) => cmd_train_init(a, &mut out),
        Command::TrainRefine(a) => cmd_train_refine(a, &mut out),
        Command::Eval(a) => cmd_eval(a).map(|rows| {
            let _ = writeln!(out, "stage,max_f,mae");
            for (s, f, m) in rows {
                let _ = writeln!(out, "{s},{f:.6},{m:.6}");
            }
        }),
        Command::Infer(a) => cmd_infer(a).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn error_classes() {
        assert_eq!(exit_code(&Error::Numeric("nan".into())), 3);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 1);
        assert_eq!(exit_code(&Error::Checkpoint("x".into())), 2);
    }

    #[test]
    fn clap_errors_fit_on_one_line() {
        let e = Cli::try_parse_from(["racdnn", "train-refine", "--data", "d"]).unwrap_err();
        let line = one_line(&e.render().to_string());
        assert!(!line.contains('\n'));
        assert!(line.contains("--init-ckpt"));
    }
}
