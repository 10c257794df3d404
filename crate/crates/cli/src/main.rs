//! mstn: train, evaluate and benchmark multi-scale temporal networks.
//!
//! stdout carries JSON-lines data, stderr carries human diagnostics (one
//! line per failure). Exit codes: 0 success, 1 config error, 2 data error,
//! 3 numeric abort, 4 weight/config mismatch.
//!
//! Settings resolve as CLI flags over config-file keys over built-in
//! defaults; the MSTN_SEED environment variable overrides the seed from
//! every other source. Synthetic datasets are regenerated from the resolved
//! seed and flags, so an eval run reproduces its training data exactly.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mstn_core::data::{load_csv_path, make_windows, synth_classes, synth_sine};
use mstn_core::error::{Error, Result};
use mstn_core::eval::{
    ablation_grid, eval_classify, eval_forecast, eval_impute, prepare_classify, prepare_forecast,
    prepare_impute, run_ablation, run_classify, run_forecast, run_impute, MetricsRecord,
    RunOutcome, TaskProtocol,
};
use mstn_core::model::{
    param_count, serialized_size_bytes, AblationVariant, CoreKind, Mstn, MstnConfig, Precision,
    TaskKind,
};
use mstn_core::tensor::{Element, Rng, Tape, Tensor};
use mstn_core::train::TrainConfig;

#[derive(Parser)]
#[command(name = "mstn", version, about = "Multi-scale temporal networks for time series")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write weights, config, history and metrics
    Train(TrainCmd),
    /// Evaluate saved weights on a dataset, emitting metrics JSONL
    Eval(EvalCmd),
    /// Measure forward latency and serialized size
    Bench(BenchCmd),
    /// Train every ablation variant and print the comparison grid
    Ablate(AblateCmd),
}

#[derive(Args)]
struct DataFlags {
    /// dataset: a CSV path, "synth:sine" or "synth:classes"
    #[arg(long)]
    data: String,
    /// steps to generate for synth:sine
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// feature count for synthetic data
    #[arg(long, default_value_t = 2)]
    features: usize,
    /// sine components per feature for synth:sine
    #[arg(long, default_value_t = 3)]
    components: usize,
    /// windows per class for synth:classes
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// uniform noise amplitude for synthetic data
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

#[derive(Args)]
struct ModelFlags {
    /// config file of key=value lines (model keys plus train.* keys)
    #[arg(long)]
    config: Option<PathBuf>,
    /// task: forecast, impute or classify
    #[arg(long)]
    task: Option<String>,
    /// sequence core: transformer or bilstm
    #[arg(long)]
    core: Option<String>,
    /// ablation variant: full, no_cnn, no_core, no_se, no_mhta, no_gated_fusion
    #[arg(long)]
    variant: Option<String>,
    /// input window length
    #[arg(long)]
    lookback: Option<usize>,
    /// forecast horizon
    #[arg(long)]
    horizon: Option<usize>,
    /// class count for classification
    #[arg(long)]
    classes: Option<usize>,
    /// dropout probability
    #[arg(long)]
    dropout: Option<f64>,
    /// numeric precision: f32 or f64
    #[arg(long)]
    precision: Option<String>,
    /// rng seed (the MSTN_SEED env var wins over this and the config file)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainFlags {
    /// learning rate
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// epoch budget
    #[arg(long)]
    epochs: Option<usize>,
    /// early-stopping patience in epochs
    #[arg(long)]
    patience: Option<usize>,
    /// fraction of cells hidden for imputation
    #[arg(long)]
    mask_ratio: Option<f64>,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// output directory for weights.bin, config.txt, history.jsonl, metrics.jsonl
    #[arg(long)]
    out: PathBuf,
    /// report metrics in original units instead of normalized space
    #[arg(long)]
    inverse_metrics: bool,
}

#[derive(Args)]
struct EvalCmd {
    /// weight file written by `mstn train`
    #[arg(long)]
    weights: PathBuf,
    /// config snapshot written next to the weights
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    data: DataFlags,
    /// report metrics in original units instead of normalized space
    #[arg(long)]
    inverse_metrics: bool,
}

#[derive(Args)]
struct BenchCmd {
    #[command(flatten)]
    model: ModelFlags,
    /// input feature count (bench needs no dataset)
    #[arg(long, default_value_t = 8)]
    features: usize,
    /// measure all six ablation variants instead of just the configured one
    #[arg(long)]
    components: bool,
    /// forward passes measured
    #[arg(long, default_value_t = 500)]
    iters: usize,
    /// unmeasured warmup passes
    #[arg(long, default_value_t = 50)]
    warmup: usize,
    /// batch size of the timed forward
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// run the measured passes on this many threads sharing one model
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct AblateCmd {
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// "all" or a comma-separated variant list
    #[arg(long, default_value = "all")]
    variants: String,
    /// optional directory for a metrics.jsonl copy of the grid
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let line = e.to_string();
            let line = line.lines().find(|l| !l.trim().is_empty()).unwrap_or("bad arguments");
            eprintln!("config error: {}", line.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    let run = match cli.cmd {
        Cmd::Train(c) => cmd_train(c),
        Cmd::Eval(c) => cmd_eval(c),
        Cmd::Bench(c) => cmd_bench(c),
        Cmd::Ablate(c) => cmd_ablate(c),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

// ── config resolution ───────────────────────────────────────────────────

/// Model config and train settings read from a config file, if any.
struct Stack {
    file_model: Option<MstnConfig>,
    tc: TrainConfig,
}

fn read_config_file(path: Option<&Path>) -> Result<Stack> {
    let Some(path) = path else {
        return Ok(Stack { file_model: None, tc: TrainConfig::default() });
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let (mut model_lines, mut train_lines) = (String::new(), String::new());
    for line in text.lines() {
        let dst = if line.trim_start().starts_with("train.") {
            &mut train_lines
        } else {
            &mut model_lines
        };
        dst.push_str(line);
        dst.push('\n');
    }
    let file_model = Some(MstnConfig::parse_str(&model_lines)?);
    let mut tc = TrainConfig::default();
    tc.apply_kv_lines(&train_lines)?;
    Ok(Stack { file_model, tc })
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("MSTN_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("MSTN_SEED '{s}' is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("MSTN_SEED: {e}"))),
    }
}

fn resolve_seed(flags: &ModelFlags, stack: &Stack) -> Result<u64> {
    Ok(env_seed()?.or(flags.seed).or(stack.file_model.as_ref().map(|c| c.seed)).unwrap_or(42))
}

fn resolve_lookback(flags: &ModelFlags, stack: &Stack) -> usize {
    flags.lookback.or(stack.file_model.as_ref().map(|c| c.seq_len)).unwrap_or(96)
}

fn resolve_task(flags: &ModelFlags, stack: &Stack) -> Result<TaskKind> {
    let from_file = stack.file_model.as_ref().map(|c| c.task);
    let name = flags
        .task
        .clone()
        .or(from_file.map(|t| t.as_str().to_string()))
        .ok_or_else(|| Error::Config("no task given: pass --task or a config file".into()))?;
    match name.as_str() {
        "forecast" => {
            let file_h = match from_file {
                Some(TaskKind::Forecast(h)) => Some(h),
                _ => None,
            };
            Ok(TaskKind::Forecast(flags.horizon.or(file_h).unwrap_or(24)))
        }
        "impute" => Ok(TaskKind::Impute),
        "classify" => {
            let file_c = match from_file {
                Some(TaskKind::Classify(c)) => Some(c),
                _ => None,
            };
            Ok(TaskKind::Classify(flags.classes.or(file_c).unwrap_or(2)))
        }
        other => Err(Error::Config(format!("unknown task '{other}'"))),
    }
}

fn parse_core(s: &str) -> Result<CoreKind> {
    match s {
        "transformer" => Ok(CoreKind::Transformer),
        "bilstm" => Ok(CoreKind::Bilstm),
        other => Err(Error::Config(format!("unknown core '{other}' (valid: transformer, bilstm)"))),
    }
}

fn parse_variant(s: &str) -> Result<AblationVariant> {
    AblationVariant::parse(s).map_err(|_| {
        let valid: Vec<&str> = AblationVariant::ALL.iter().map(|v| v.as_str()).collect();
        Error::Config(format!("unknown variant '{s}' (valid: {})", valid.join(", ")))
    })
}

fn parse_precision(s: &str) -> Result<Precision> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(Error::Config(format!("unknown precision '{other}' (valid: f32, f64)"))),
    }
}

/// Final model config: config-file base (or defaults), flag overrides on
/// top, input width checked against what the dataset actually holds.
fn resolve_model(
    stack: &Stack,
    flags: &ModelFlags,
    task: TaskKind,
    input_dim: usize,
    seed: u64,
) -> Result<MstnConfig> {
    let mut cfg = match &stack.file_model {
        Some(c) => {
            if c.input_dim != input_dim {
                return Err(Error::Config(format!(
                    "config says input_dim {} but the data has {} features",
                    c.input_dim, input_dim
                )));
            }
            c.clone()
        }
        None => MstnConfig::new(input_dim, resolve_lookback(flags, stack), task),
    };
    cfg.task = task;
    cfg.seed = seed;
    if let Some(l) = flags.lookback {
        cfg.seq_len = l;
    }
    if let Some(s) = &flags.core {
        cfg.core = parse_core(s)?;
    }
    if let Some(s) = &flags.variant {
        cfg.variant = parse_variant(s)?;
    }
    if let Some(d) = flags.dropout {
        cfg.dropout = d;
    }
    if let Some(s) = &flags.precision {
        cfg.precision = parse_precision(s)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_train(stack: &Stack, flags: &TrainFlags) -> Result<TrainConfig> {
    let mut tc = stack.tc.clone();
    if let Some(v) = flags.lr {
        tc.lr = v;
    }
    if let Some(v) = flags.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = flags.epochs {
        tc.max_epochs = v;
    }
    if let Some(v) = flags.patience {
        tc.patience = v;
    }
    if let Some(v) = flags.mask_ratio {
        tc.mask_ratio = v;
    }
    tc.validate()?;
    Ok(tc)
}

// ── data loading ────────────────────────────────────────────────────────

enum Loaded<E: Element> {
    /// [n, d] series for forecasting and imputation
    Series { values: Tensor<E>, name: String },
    /// labeled [N, T, D] windows for classification
    Windows { x: Tensor<E>, labels: Vec<usize>, name: String },
}

impl<E: Element> Loaded<E> {
    fn input_dim(&self) -> usize {
        match self {
            Loaded::Series { values, .. } => values.shape()[1],
            Loaded::Windows { x, .. } => x.shape()[2],
        }
    }

    fn name(&self) -> &str {
        match self {
            Loaded::Series { name, .. } | Loaded::Windows { name, .. } => name,
        }
    }
}

/// Load `--data`. Classification CSVs need a `label` column; each window
/// takes the label of its final row.
fn load_data<E: Element>(
    flags: &DataFlags,
    task: TaskKind,
    lookback: usize,
    seed: u64,
) -> Result<Loaded<E>> {
    match flags.data.as_str() {
        "synth:sine" => {
            if matches!(task, TaskKind::Classify(_)) {
                return Err(Error::Config("synth:sine has no labels; use synth:classes".into()));
            }
            let ds = synth_sine(flags.steps, flags.features, flags.components, flags.noise, seed)?;
            Ok(Loaded::Series { values: ds.values, name: flags.data.clone() })
        }
        "synth:classes" => {
            let TaskKind::Classify(classes) = task else {
                return Err(Error::Config("synth:classes is classification data".into()));
            };
            let (x, labels) = synth_classes(
                flags.per_class,
                classes,
                lookback,
                flags.features,
                flags.noise,
                seed,
            )?;
            Ok(Loaded::Windows { x, labels, name: flags.data.clone() })
        }
        other if other.starts_with("synth:") => {
            Err(Error::Config(format!("unknown synthetic dataset '{other}'")))
        }
        path => {
            let path = Path::new(path);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| flags.data.clone());
            let ds = load_csv_path::<E>(path)?;
            if matches!(task, TaskKind::Classify(_)) {
                let (feats, labels) = ds.take_labels()?;
                let x = make_windows(&feats.values, lookback)?;
                let labels: Vec<usize> =
                    (0..x.shape()[0]).map(|w| labels[w + lookback - 1]).collect();
                Ok(Loaded::Windows { x, labels, name })
            } else {
                Ok(Loaded::Series { values: ds.values, name })
            }
        }
    }
}

fn build_protocol<E: Element>(
    loaded: &Loaded<E>,
    cfg: &MstnConfig,
    tc: &TrainConfig,
) -> Result<TaskProtocol<E>> {
    match (cfg.task, loaded) {
        (TaskKind::Forecast(h), Loaded::Series { values, .. }) => {
            Ok(TaskProtocol::Forecast(prepare_forecast(values, cfg.seq_len, h)?))
        }
        (TaskKind::Impute, Loaded::Series { values, .. }) => {
            Ok(TaskProtocol::Impute(prepare_impute(values, cfg.seq_len, tc.mask_ratio, cfg.seed)?))
        }
        (TaskKind::Classify(c), Loaded::Windows { x, labels, .. }) => {
            if x.shape()[1] != cfg.seq_len {
                return Err(Error::Config(format!(
                    "windows are {} steps long but seq_len is {}",
                    x.shape()[1],
                    cfg.seq_len
                )));
            }
            Ok(TaskProtocol::Classify(prepare_classify(x, labels, c)?))
        }
        (task, _) => Err(Error::Config(format!("dataset does not fit task {}", task.as_str()))),
    }
}

// ── output helpers ──────────────────────────────────────────────────────

fn emit_records(records: &[MetricsRecord]) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    for r in records {
        r.validate()?;
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(stdout, "{line}")?;
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item).expect("record serializes"));
        buf.push('\n');
    }
    std::fs::write(path, buf)?;
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────────

fn cmd_train(cmd: TrainCmd) -> Result<()> {
    let stack = read_config_file(cmd.model.config.as_deref())?;
    let task = resolve_task(&cmd.model, &stack)?;
    let seed = resolve_seed(&cmd.model, &stack)?;
    let lookback = resolve_lookback(&cmd.model, &stack);
    let precision = match &cmd.model.precision {
        Some(s) => parse_precision(s)?,
        None => stack.file_model.as_ref().map(|c| c.precision).unwrap_or(Precision::F32),
    };
    match precision {
        Precision::F32 => train_typed::<f32>(&cmd, stack, task, seed, lookback),
        Precision::F64 => train_typed::<f64>(&cmd, stack, task, seed, lookback),
    }
}

fn train_typed<E: Element>(
    cmd: &TrainCmd,
    stack: Stack,
    task: TaskKind,
    seed: u64,
    lookback: usize,
) -> Result<()> {
    let loaded = load_data::<E>(&cmd.data, task, lookback, seed)?;
    let cfg = resolve_model(&stack, &cmd.model, task, loaded.input_dim(), seed)?;
    let tc = resolve_train(&stack, &cmd.train)?;
    let proto = build_protocol(&loaded, &cfg, &tc)?;

    let outcome = match &proto {
        TaskProtocol::Forecast(p) => {
            run_forecast(p, &cfg, &tc, loaded.name(), cmd.inverse_metrics)?
        }
        TaskProtocol::Impute(p) => run_impute(p, &cfg, &tc, loaded.name(), cmd.inverse_metrics)?,
        TaskProtocol::Classify(p) => run_classify(p, &cfg, &tc, loaded.name())?,
    };

    std::fs::create_dir_all(&cmd.out)?;
    let mut weights = std::io::BufWriter::new(std::fs::File::create(cmd.out.join("weights.bin"))?);
    outcome.model.save(&mut weights)?;
    weights.flush()?;
    std::fs::write(
        cmd.out.join("config.txt"),
        format!("{}{}", cfg.to_config_string(), tc.to_config_string()),
    )?;
    write_jsonl(&cmd.out.join("history.jsonl"), &outcome.fit.history)?;
    for r in &outcome.records {
        r.validate()?;
    }
    write_jsonl(&cmd.out.join("metrics.jsonl"), &outcome.records)?;
    emit_records(&outcome.records)
}

// ── eval ────────────────────────────────────────────────────────────────

fn cmd_eval(cmd: EvalCmd) -> Result<()> {
    let stack = read_config_file(Some(&cmd.config))?;
    let Some(file_cfg) = &stack.file_model else {
        return Err(Error::Config("eval needs a config file with model keys".into()));
    };
    let mut cfg = file_cfg.clone();
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    match cfg.precision {
        Precision::F32 => eval_typed::<f32>(&cmd, &stack, cfg),
        Precision::F64 => eval_typed::<f64>(&cmd, &stack, cfg),
    }
}

fn eval_typed<E: Element>(cmd: &EvalCmd, stack: &Stack, cfg: MstnConfig) -> Result<()> {
    let loaded = load_data::<E>(&cmd.data, cfg.task, cfg.seq_len, cfg.seed)?;
    if loaded.input_dim() != cfg.input_dim {
        return Err(Error::Config(format!(
            "config says input_dim {} but the data has {} features",
            cfg.input_dim,
            loaded.input_dim()
        )));
    }
    let mut reader = std::io::BufReader::new(std::fs::File::open(&cmd.weights)?);
    let model = Mstn::<E>::load(cfg.clone(), &mut reader)?;

    let proto = build_protocol(&loaded, &cfg, &stack.tc)?;
    let records = match &proto {
        TaskProtocol::Forecast(p) => {
            eval_forecast(&model, p, stack.tc.batch_size, loaded.name(), cmd.inverse_metrics)?
        }
        TaskProtocol::Impute(p) => {
            eval_impute(&model, p, stack.tc.batch_size, loaded.name(), cmd.inverse_metrics)?
        }
        TaskProtocol::Classify(p) => eval_classify(&model, p, stack.tc.batch_size, loaded.name())?,
    };
    emit_records(&records)
}

// ── bench ───────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct BenchReport {
    variant: String,
    param_count: usize,
    serialized_mb: f64,
    latency_p50_ms: f64,
    latency_p95_ms: f64,
    batch: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "D")]
    d: usize,
    warmup_iters: usize,
    measure_iters: usize,
    host: String,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Measured region is the forward pass alone: inputs, masks and the model
/// itself are built beforehand and reused across iterations.
fn bench_variant<E: Element>(cfg: &MstnConfig, cmd: &BenchCmd) -> Result<Vec<f64>> {
    if cmd.iters == 0 || cmd.batch == 0 || cmd.threads == 0 {
        return Err(Error::Config("iters, batch and threads must be >= 1".into()));
    }
    let model = Mstn::<E>::new(cfg.clone())?;
    let mut rng = Rng::seed_from_label(cfg.seed, "bench.input");
    let mut x = Tensor::<E>::zeros(vec![cmd.batch, cfg.seq_len, cfg.input_dim]);
    for v in x.data_mut() {
        *v = rng.uniform(0.0, 1.0);
    }
    let mask = match cfg.task {
        TaskKind::Impute => {
            let (corrupt, mask) = mstn_core::data::apply_mask(&x, 0.2, &mut rng)?;
            x = corrupt;
            Some(mask)
        }
        _ => None,
    };

    let one = |model: &Mstn<E>, x: &Tensor<E>| -> Result<()> {
        let mut tape = Tape::new();
        let (out, _) = model.forward_eval(&mut tape, x, mask.as_ref())?;
        std::hint::black_box(tape.value(out.var()).data().first().copied());
        Ok(())
    };

    for _ in 0..cmd.warmup {
        one(&model, &x)?;
    }
    let mut lat = Vec::with_capacity(cmd.iters);
    if cmd.threads == 1 {
        for _ in 0..cmd.iters {
            let t0 = Instant::now();
            one(&model, &x)?;
            lat.push(t0.elapsed().as_secs_f64() * 1e3);
        }
    } else {
        // frozen model shared across threads; each thread times its share
        let per = cmd.iters.div_ceil(cmd.threads);
        let results = std::thread::scope(|s| {
            let handles: Vec<_> = (0..cmd.threads)
                .map(|_| {
                    s.spawn(|| -> Result<Vec<f64>> {
                        let mut v = Vec::with_capacity(per);
                        for _ in 0..per {
                            let t0 = Instant::now();
                            one(&model, &x)?;
                            v.push(t0.elapsed().as_secs_f64() * 1e3);
                        }
                        Ok(v)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("bench thread panicked"))
                .collect::<Vec<_>>()
        });
        for r in results {
            lat.extend(r?);
        }
    }
    lat.sort_by(f64::total_cmp);
    Ok(lat)
}

fn cmd_bench(cmd: BenchCmd) -> Result<()> {
    let stack = read_config_file(cmd.model.config.as_deref())?;
    // benchmarking needs no dataset; the head defaults to forecasting
    let task = if cmd.model.task.is_none() && stack.file_model.is_none() {
        TaskKind::Forecast(cmd.model.horizon.unwrap_or(24))
    } else {
        resolve_task(&cmd.model, &stack)?
    };
    let seed = resolve_seed(&cmd.model, &stack)?;
    let input_dim = stack.file_model.as_ref().map(|c| c.input_dim).unwrap_or(cmd.features);
    let cfg = resolve_model(&stack, &cmd.model, task, input_dim, seed)?;

    let variants: Vec<AblationVariant> =
        if cmd.components { AblationVariant::ALL.to_vec() } else { vec![cfg.variant] };

    let host = format!("{} {}", std::env::consts::ARCH, std::env::consts::OS);
    let mut stdout = std::io::stdout().lock();
    for v in variants {
        let vc = cfg.make_ablated(v)?;
        let lat = match cfg.precision {
            Precision::F32 => bench_variant::<f32>(&vc, &cmd)?,
            Precision::F64 => bench_variant::<f64>(&vc, &cmd)?,
        };
        let report = BenchReport {
            variant: v.as_str().into(),
            param_count: param_count(&vc),
            serialized_mb: serialized_size_bytes(&vc) as f64 / (1u64 << 20) as f64,
            latency_p50_ms: percentile(&lat, 0.50),
            latency_p95_ms: percentile(&lat, 0.95),
            batch: cmd.batch,
            t: vc.seq_len,
            d: vc.input_dim,
            warmup_iters: cmd.warmup,
            measure_iters: cmd.iters,
            host: host.clone(),
        };
        writeln!(stdout, "{}", serde_json::to_string(&report).expect("report serializes"))?;
    }
    Ok(())
}

// ── ablate ──────────────────────────────────────────────────────────────

fn parse_variants(s: &str) -> Result<Vec<AblationVariant>> {
    if s == "all" {
        return Ok(AblationVariant::ALL.to_vec());
    }
    s.split(',').map(|p| parse_variant(p.trim())).collect()
}

fn cmd_ablate(cmd: AblateCmd) -> Result<()> {
    let stack = read_config_file(cmd.model.config.as_deref())?;
    let task = resolve_task(&cmd.model, &stack)?;
    let seed = resolve_seed(&cmd.model, &stack)?;
    let lookback = resolve_lookback(&cmd.model, &stack);
    let variants = parse_variants(&cmd.variants)?;
    let precision = match &cmd.model.precision {
        Some(s) => parse_precision(s)?,
        None => stack.file_model.as_ref().map(|c| c.precision).unwrap_or(Precision::F32),
    };
    match precision {
        Precision::F32 => ablate_typed::<f32>(&cmd, stack, task, seed, lookback, &variants),
        Precision::F64 => ablate_typed::<f64>(&cmd, stack, task, seed, lookback, &variants),
    }
}

fn ablate_typed<E: Element>(
    cmd: &AblateCmd,
    stack: Stack,
    task: TaskKind,
    seed: u64,
    lookback: usize,
    variants: &[AblationVariant],
) -> Result<()> {
    let loaded = load_data::<E>(&cmd.data, task, lookback, seed)?;
    let cfg = resolve_model(&stack, &cmd.model, task, loaded.input_dim(), seed)?;
    let tc = resolve_train(&stack, &cmd.train)?;
    let proto = build_protocol(&loaded, &cfg, &tc)?;

    let outcomes: Vec<RunOutcome<E>> = run_ablation(&proto, &cfg, &tc, loaded.name(), variants)?;
    let records: Vec<MetricsRecord> = outcomes.iter().map(|o| o.records[0].clone()).collect();

    eprint!("{}", ablation_grid(&records));
    if let Some(out) = &cmd.out {
        std::fs::create_dir_all(out)?;
        write_jsonl(&out.join("metrics.jsonl"), &records)?;
    }
    emit_records(&records)
}
