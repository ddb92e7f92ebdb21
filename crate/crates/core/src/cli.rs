//! `carspeed` command line: synth, preprocess, train, eval, sweep, compare,
//! infer, trace.
//!
//! Precedence for every setting: built-in default, then `--config` JSON,
//! then flags. The resolved configuration is logged to stderr as JSON.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::eval::{self, EvalConfig, MetricsReport, DEFAULT_COMPARE_WINDOW, DEFAULT_SIZES};
use crate::scalar::Scalar;
use crate::signal::{self, split_sessions, PipelineConfig, ProcessedSession};
use crate::synth::{self, SynthConfig};
use crate::train::{fit_with, EpochRecord, TrainConfig};
use crate::zoo::{self, load_weights, save_weights, Model, ZooName};

#[derive(Parser, Debug)]
#[command(name = "carspeed", version, about = "Car speed estimation from smartphone accelerometer windows")]
pub struct Cli {
    /// Run in double precision (f64) instead of f32.
    #[arg(long, global = true)]
    pub wide: bool,

    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus of IMU/GPS session pairs.
    Synth(SynthArgs),
    /// Gate, filter, decimate and window a corpus; write the windows as CSV.
    Preprocess(DataArgs),
    /// Train a model and write a weights file plus its history CSV.
    Train(DataArgs),
    /// Evaluate a weights file on the held-out sessions.
    Eval(DataArgs),
    /// Train and evaluate CarSpeedNet at several window sizes.
    Sweep(DataArgs),
    /// Train and evaluate several zoo models at one window size.
    Compare(DataArgs),
    /// Run a weights file over one session; print the trace CSV to stdout.
    Infer(DataArgs),
    /// Like `infer`, but write the trace CSV to --out.
    Trace(DataArgs),
}

#[derive(Args, Debug, Default)]
pub struct SynthArgs {
    /// Output directory for the session files.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Corpus length in hours [default: 1]; at least three sessions are written.
    #[arg(long)]
    pub hours: Option<f64>,
    /// Length of one session in seconds [default: 300].
    #[arg(long, value_name = "SECONDS")]
    pub session_seconds: Option<f64>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Accelerometer noise std in m/s² [default: 0.05].
    #[arg(long, value_name = "M/S2")]
    pub imu_noise: Option<f64>,
    /// GPS speed noise std in m/s [default: 0.2].
    #[arg(long, value_name = "M/S")]
    pub gps_noise: Option<f64>,
    /// Per-axis accelerometer bias bound in m/s² [default: 0.1].
    #[arg(long, value_name = "M/S2")]
    pub bias_max: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Session directory (repeat for several).
    #[arg(long, value_name = "DIR")]
    pub data: Vec<PathBuf>,
    /// Output file (weights for train, CSV otherwise; stdout when omitted for CSVs).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Weights file to evaluate or run.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Zoo model name [default: carspeednet]; comma-separated list for compare [default: all six].
    #[arg(long)]
    pub model: Option<String>,
    /// Window size in 20 Hz samples [default: 80; 20 for compare].
    #[arg(long, value_name = "SAMPLES")]
    pub window: Option<usize>,
    /// Seed for the split, initialisation, shuffling and dropout [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum training epochs [default: 200].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size in windows [default: 32].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Optimizer steps per decay factor [default: 30000].
    #[arg(long, value_name = "STEPS")]
    pub decay_steps: Option<u64>,
    /// Learning-rate decay factor per decay-steps, in (0, 1) [default: 0.2].
    #[arg(long)]
    pub decay_rate: Option<f64>,
    /// Early-stopping patience in epochs [default: 1000].
    #[arg(long, value_name = "EPOCHS")]
    pub patience: Option<usize>,
    /// Low-pass cutoff in Hz [default: 8].
    #[arg(long, value_name = "HZ")]
    pub cutoff_hz: Option<f64>,
    /// GDOP gate threshold [default: 5].
    #[arg(long)]
    pub gdop_max: Option<f64>,
    /// Window sizes for sweep, comma-separated samples [default: 5,10,20,40,60,80].
    #[arg(long, value_delimiter = ',', value_name = "SAMPLES")]
    pub sizes: Option<Vec<usize>>,
    /// Session id for infer/trace (needed when the directory holds several).
    #[arg(long)]
    pub session: Option<String>,
    /// Number of whole sessions held out for testing [default: 1].
    #[arg(long)]
    pub test_sessions: Option<usize>,
    /// Stop once an epoch's mean training loss falls below this, (m/s)².
    #[arg(long, value_name = "LOSS")]
    pub target_loss: Option<f64>,
    /// Disable global gradient-norm clipping (default bound: 5).
    #[arg(long)]
    pub no_clip: bool,
    /// History CSV path for train [default: <out>.history.csv].
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
}

/// Everything a run can be configured with; the `--config` file schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub model: Option<String>,
    pub window: Option<usize>,
    pub seed: u64,
    pub sizes: Vec<usize>,
    pub session: Option<String>,
    pub history: Option<PathBuf>,
    pub wide: bool,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: Vec::new(),
            out: None,
            weights: None,
            model: None,
            window: None,
            seed: 0,
            sizes: DEFAULT_SIZES.to_vec(),
            session: None,
            history: None,
            wide: false,
            train: TrainConfig::default(),
            pipeline: PipelineConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    fn apply_synth(&mut self, a: &SynthArgs) {
        set(&mut self.out, a.out.clone());
        let s = &mut self.synth;
        set_v(&mut s.hours, a.hours);
        set_v(&mut s.session_seconds, a.session_seconds);
        set_v(&mut s.seed, a.seed);
        set_v(&mut s.imu_noise_std, a.imu_noise);
        set_v(&mut s.gps_noise_std, a.gps_noise);
        set_v(&mut s.bias_max, a.bias_max);
    }

    fn apply_data(&mut self, a: &DataArgs) {
        if !a.data.is_empty() {
            self.data = a.data.clone();
        }
        set(&mut self.out, a.out.clone());
        set(&mut self.weights, a.weights.clone());
        set(&mut self.model, a.model.clone());
        set(&mut self.window, a.window);
        set(&mut self.session, a.session.clone());
        set(&mut self.history, a.history.clone());
        set_v(&mut self.seed, a.seed);
        if let Some(s) = &a.sizes {
            self.sizes = s.clone();
        }
        let t = &mut self.train;
        set_v(&mut t.max_epochs, a.epochs);
        set_v(&mut t.batch_size, a.batch_size);
        set_v(&mut t.initial_lr, a.lr);
        set_v(&mut t.decay_steps, a.decay_steps);
        set_v(&mut t.decay_rate, a.decay_rate);
        set_v(&mut t.patience, a.patience);
        set(&mut t.target_train_loss, a.target_loss);
        if a.no_clip {
            t.clip_norm = None;
        }
        set_v(&mut self.pipeline.cutoff_hz, a.cutoff_hz);
        set_v(&mut self.pipeline.gdop_max, a.gdop_max);
        set_v(&mut self.eval.test_sessions, a.test_sessions);
    }

    /// One seed drives the split, initialisation and training order.
    fn seeded(&self) -> (TrainConfig, EvalConfig) {
        let train = TrainConfig { seed: self.seed, ..self.train.clone() };
        let eval = EvalConfig { split_seed: self.seed, model_seed: self.seed, ..self.eval.clone() };
        (train, eval)
    }
}

fn set<T>(dst: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *dst = v;
    }
}

fn set_v<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

/// Parses `argv` (program name first) and runs it. Returns the exit code:
/// 0 on success, 2 on usage errors, 1 on operational failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.wide |= cli.wide;
    match &cli.command {
        Command::Synth(a) => cfg.apply_synth(a),
        Command::Preprocess(a)
        | Command::Train(a)
        | Command::Eval(a)
        | Command::Sweep(a)
        | Command::Compare(a)
        | Command::Infer(a)
        | Command::Trace(a) => cfg.apply_data(a),
    }
    eprintln!("resolved config: {}", serde_json::to_string(&cfg)?);
    if cfg.wide {
        dispatch::<f64>(&cli.command, &cfg)
    } else {
        dispatch::<f32>(&cli.command, &cfg)
    }
}

fn dispatch<F: Scalar>(cmd: &Command, cfg: &RunConfig) -> anyhow::Result<()> {
    match cmd {
        Command::Synth(_) => cmd_synth(cfg),
        Command::Preprocess(_) => cmd_preprocess(cfg),
        Command::Train(_) => cmd_train::<F>(cfg),
        Command::Eval(_) => cmd_eval::<F>(cfg),
        Command::Sweep(_) => cmd_sweep::<F>(cfg),
        Command::Compare(_) => cmd_compare::<F>(cfg),
        Command::Infer(_) => cmd_trace::<F>(cfg, true),
        Command::Trace(_) => cmd_trace::<F>(cfg, false),
    }
}

fn log_epoch(label: &str, e: &EpochRecord) {
    eprintln!(
        "{label} epoch {:>4}  train {:.5}  val {:.5}  lr {:.3e}  {:.2}s",
        e.epoch, e.train_loss, e.val_loss, e.lr, e.seconds
    );
}

/// `--out` file, or stdout.
fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn corpus(cfg: &RunConfig) -> anyhow::Result<Vec<ProcessedSession>> {
    if cfg.data.is_empty() {
        bail!("--data is required");
    }
    let c = eval::load_corpus(&cfg.data, &cfg.pipeline)?;
    for (id, e) in &c.rejected {
        eprintln!("skipping session {id}: {e}");
    }
    eprintln!("loaded {} sessions", c.sessions.len());
    Ok(c.sessions)
}

fn model_name(cfg: &RunConfig) -> anyhow::Result<ZooName> {
    Ok(cfg.model.as_deref().unwrap_or("carspeednet").parse()?)
}

fn cmd_synth(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = cfg.out.as_ref().ok_or_else(|| anyhow!("--out is required"))?;
    let ids = synth::generate_corpus(out, &cfg.synth)?;
    eprintln!("wrote {} sessions to {}", ids.len(), out.display());
    Ok(())
}

fn cmd_preprocess(cfg: &RunConfig) -> anyhow::Result<()> {
    let sessions = corpus(cfg)?;
    let w = cfg.window.unwrap_or(80);
    let (_, ev) = cfg.seeded();
    let split = split_sessions(&sessions, ev.test_sessions, ev.val_fraction, ev.split_seed, w)?;
    eprintln!(
        "{} train, {} validation, {} test windows (test sessions {:?}); {} labels skipped",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        split.test_sessions,
        split.skipped
    );
    let mut out = output(cfg.out.as_deref())?;
    write!(out, "split,session_id,t_label,label")?;
    for i in 0..w {
        write!(out, ",ax{i},ay{i},az{i}")?;
    }
    writeln!(out)?;
    for (name, d) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for e in &d.entries {
            write!(out, "{name},{},{},{}", e.session_id, e.t_label, e.label)?;
            for v in &e.window {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_train<F: Scalar>(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = cfg.out.as_ref().ok_or_else(|| anyhow!("--out is required"))?;
    let sessions = corpus(cfg)?;
    let name = model_name(cfg)?;
    let w = cfg.window.unwrap_or(80);
    let (tc, ev) = cfg.seeded();
    let split = split_sessions(&sessions, ev.test_sessions, ev.val_fraction, ev.split_seed, w)?;
    eprintln!("{} train, {} validation windows; test sessions {:?}", split.train.len(), split.val.len(), split.test_sessions);
    let mut model = zoo::build_model::<F>(name.as_str(), w, ev.model_seed)?;
    let history = fit_with(&mut model, &split.train, &split.val, &tc, |e| log_epoch(name.as_str(), e))?;
    save_weights(&model, out)?;
    let hist_path = cfg.history.clone().unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".history.csv");
        PathBuf::from(s)
    });
    history.write_csv(&hist_path)?;
    eprintln!(
        "stopped ({:?}) after {} epochs; best validation loss {} at epoch {}; wrote {} and {}",
        history.stop,
        history.epochs.len(),
        history.best_val_loss,
        history.best_epoch,
        out.display(),
        hist_path.display()
    );
    Ok(())
}

fn load_model<F: Scalar>(cfg: &RunConfig) -> anyhow::Result<Model<F>> {
    let p = cfg.weights.as_ref().ok_or_else(|| anyhow!("--weights is required"))?;
    let m = load_weights::<F>(p).with_context(|| format!("loading {}", p.display()))?;
    if let Some(w) = cfg.window {
        if w != m.window_size {
            return Err(crate::Error::WindowSize { expected: m.window_size, found: w }.into());
        }
    }
    Ok(m)
}

fn cmd_eval<F: Scalar>(cfg: &RunConfig) -> anyhow::Result<()> {
    let model = load_model::<F>(cfg)?;
    let sessions = corpus(cfg)?;
    let (_, ev) = cfg.seeded();
    let split = split_sessions(&sessions, ev.test_sessions, ev.val_fraction, ev.split_seed, model.window_size)?;
    if split.test.is_empty() {
        bail!("held-out sessions {:?} yield no windows", split.test_sessions);
    }
    let mut rows = Vec::new();
    for id in &split.test_sessions {
        let s = sessions.iter().find(|s| &s.session_id == id).expect("split picks existing sessions");
        let entries: Vec<_> = split.test.entries.iter().filter(|e| &e.session_id == id).cloned().collect();
        rows.extend(eval::trace_windows(&model, &entries, s.gate_time)?);
    }
    let (rmse, mae) = eval::trace_metrics(&rows)?;
    let latency = eval::measure_latency(&model, &split.test.entries[0].window, ev.latency_reps)?;
    let (name, target) = match model.name.parse::<ZooName>() {
        Ok(z) => (z.as_str().to_string(), z.target_param_count()),
        Err(_) => (model.name.clone(), 0),
    };
    let report = MetricsReport::new(&name, model.window_size, rmse, mae, latency, model.param_count(), target, &ev.dataset)?;
    let mut out = output(cfg.out.as_deref())?;
    eval::write_compare_csv(&mut out, &[report])?;
    out.flush()?;
    Ok(())
}

fn cmd_sweep<F: Scalar>(cfg: &RunConfig) -> anyhow::Result<()> {
    let sessions = corpus(cfg)?;
    let (tc, ev) = cfg.seeded();
    let rows = eval::sweep_windows::<F>(&sessions, &cfg.sizes, &tc, &ev, &mut |w, e| log_epoch(&format!("w={w}"), e))?;
    let mut out = output(cfg.out.as_deref())?;
    eval::write_sweep_csv(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}

fn cmd_compare<F: Scalar>(cfg: &RunConfig) -> anyhow::Result<()> {
    let names: Vec<String> = match &cfg.model {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => ZooName::ALL.iter().map(|z| z.as_str().to_string()).collect(),
    };
    for n in &names {
        n.parse::<ZooName>()?;
    }
    let sessions = corpus(cfg)?;
    let (tc, ev) = cfg.seeded();
    let w = cfg.window.unwrap_or(DEFAULT_COMPARE_WINDOW);
    let rows = eval::compare_models::<F>(&sessions, &names, w, &tc, &ev, &mut |n, e| log_epoch(n, e))?;
    let mut out = output(cfg.out.as_deref())?;
    eval::write_compare_csv(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}

fn cmd_trace<F: Scalar>(cfg: &RunConfig, to_stdout: bool) -> anyhow::Result<()> {
    let model = load_model::<F>(cfg)?;
    let dir = match cfg.data.as_slice() {
        [d] => d,
        [] => bail!("--data is required"),
        _ => bail!("infer/trace read one session directory"),
    };
    let id = match &cfg.session {
        Some(id) => id.clone(),
        None => {
            let ids = signal::list_sessions(dir)?;
            match ids.as_slice() {
                [one] => one.clone(),
                _ => bail!("{} holds {} sessions; pick one with --session", dir.display(), ids.len()),
            }
        }
    };
    let (imu, gps) = signal::load_session(dir, &id)?;
    let session = signal::preprocess(&imu, &gps, &cfg.pipeline)?;
    let rows = eval::emit_trace(&model, &session)?;
    let mut out = if to_stdout { output(None)? } else { output(Some(cfg.out.as_deref().ok_or_else(|| anyhow!("--out is required"))?))? };
    eval::write_trace_csv(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}
