//! Command-line front end.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::data::{
    load_frames, save_frames, split_train_val, synth_generate, Dataset, FileFormat, Standardizer, SynthConfig,
};
use crate::error::{Error, Result};
use crate::kf::{kf_decode, kf_fit};
use crate::lif::ResetMode;
use crate::metrics::{mse, MetricReport};
use crate::network::{forward_batch, reset_state, Mode, NetworkParams, NetworkSpec};
use crate::profiler::{ann_report, compare_report, count_spikes, snn_cost, CostModel, NamedReport, SpikeStats};
use crate::train::{append_line, fit_with, make_windows, LogHeader, TrainConfig, ValidationSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// MAC count of the reference dense decoder used for cost comparisons.
pub const REFERENCE_ANN_MACS: u64 = 529_000;

#[derive(Parser, Debug)]
#[command(
    name = "snn-decoder",
    version,
    about = "Spiking velocity decoder: train, evaluate, stream and profile"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cosine-tuned dataset.
    Synth(SynthArgs),
    /// Train a spiking decoder; writes a checkpoint and a JSON-lines log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation split.
    Eval(EvalArgs),
    /// Decode frame by frame with persistent state and compare with `eval`.
    Stream(EvalArgs),
    /// Spike statistics and operation counts of a trained decoder.
    Profile(ProfileArgs),
    /// Fit and evaluate the Kalman-filter baseline.
    Kf(KfArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output file; `.csv` selects CSV, anything else the binary format.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 12000)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 96)]
    channels: usize,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    smoothness: Option<f64>,
    #[arg(long, default_value_t = 50.0)]
    frame_ms: f32,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset file (`.csv` or binary).
    #[arg(long, short)]
    data: PathBuf,
    /// Fraction of frames, from the start, used for training.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ResetArg {
    Subtract,
    Zero,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint to write.
    #[arg(long, short)]
    out: PathBuf,
    /// Training log (JSON lines); defaults to the checkpoint path with `.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// TOML file with training settings; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    window_len: Option<usize>,
    #[arg(long)]
    warmup_discard: Option<usize>,
    #[arg(long)]
    dropout: Option<f32>,
    #[arg(long)]
    v_th: Option<f32>,
    #[arg(long, value_enum)]
    reset_mode: Option<ResetArg>,
    /// Freeze every decay factor at this value instead of training them.
    #[arg(long)]
    fixed_tau: Option<f32>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Worker threads for batch evaluation (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, short)]
    model: PathBuf,
    /// Write `time_s,true_v1,pred_v1,true_v2,pred_v2` in original units.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the metric report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, short)]
    model: PathBuf,
    /// MAC count of the dense reference network.
    #[arg(long, default_value_t = REFERENCE_ANN_MACS)]
    ann_macs: u64,
    /// Use these per-layer spike rates instead of measured ones.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    /// Write spike statistics and the cost comparison as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct KfArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Save the fitted filter as a checkpoint.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else if matches!(e, Error::Config(_)) {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Stream(a) => stream(a),
        Command::Profile(a) => profile(a),
        Command::Kf(a) => kf(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        n_frames: a.frames,
        channels: a.channels,
        seed: a.seed,
        noise_std: a.noise_std.unwrap_or(defaults.noise_std),
        smoothness: a.smoothness.unwrap_or(defaults.smoothness),
        frame_ms: a.frame_ms,
        ..defaults
    };
    let (data, meta) = synth_generate(&cfg)?;
    save_frames(&a.out, &data, FileFormat::from_path(&a.out))?;
    println!(
        "wrote {} frames x {} channels ({:.1} s) to {}",
        meta.sample_count,
        meta.channel_count,
        meta.sample_count as f64 * meta.frame_ms as f64 / 1000.0,
        a.out.display()
    );
    Ok(())
}

/// A dataset split chronologically and standardized with training statistics.
struct Prepared {
    standardizer: Standardizer,
    train_x: Array2<f32>,
    train_y: Array2<f32>,
    val_x: Array2<f32>,
    val_y: Array2<f32>,
    val_raw: Dataset,
    /// Index of the first validation frame in the full file.
    val_offset: usize,
}

fn load(args: &DataArgs) -> Result<Dataset> {
    Ok(load_frames(&args.data, FileFormat::from_path(&args.data))?.0)
}

fn prepare(args: &DataArgs, standardizer: Option<&Standardizer>) -> Result<Prepared> {
    let data = load(args)?;
    let (train, val) = split_train_val(&data, args.split)?;
    let standardizer = match standardizer {
        Some(s) => s.clone(),
        None => Standardizer::fit(train.features.view(), train.velocities.view())?,
    };
    Ok(Prepared {
        train_x: standardizer.apply_features(train.features.view())?,
        train_y: standardizer.apply_velocities(train.velocities.view())?,
        val_x: standardizer.apply_features(val.features.view())?,
        val_y: standardizer.apply_velocities(val.velocities.view())?,
        val_offset: train.len(),
        val_raw: val,
        standardizer,
    })
}

fn load_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = args.$flag { cfg.$($field).+ = v; })*
        };
    }
    set!(
        seed => seed,
        epochs => epochs,
        learning_rate => learning_rate,
        weight_decay => weight_decay,
        batch_size => batch_size,
        warmup_discard => warmup_discard,
        window_len => network.window_len,
        dropout => network.dropout_p,
        v_th => network.v_th,
    );
    if let Some(r) = args.reset_mode {
        cfg.network.reset_mode = match r {
            ResetArg::Subtract => ResetMode::SubtractThreshold,
            ResetArg::Zero => ResetMode::ResetToZero,
        };
    }
    if let Some(t) = args.fixed_tau {
        cfg.trainable_tau = false;
        cfg.fixed_tau = t;
    }
    if args.grad_clip.is_some() {
        cfg.grad_clip = args.grad_clip;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a)?;
    let prep = prepare(&a.data, None)?;
    let widths = &cfg.network.layer_widths;
    let (first, last) = (widths[0], *widths.last().expect("validated"));
    if first != prep.train_x.ncols() || last != prep.train_y.ncols() {
        return Err(Error::shape(
            "network input/output width vs dataset",
            format!("{} -> {}", prep.train_x.ncols(), prep.train_y.ncols()),
            format!("{first} -> {last}"),
        ));
    }
    let t = cfg.window_len();
    let windows = make_windows(prep.train_x.clone(), prep.train_y.clone(), t, t - 1)?;
    let val = ValidationSet {
        features: prep.val_x.clone(),
        targets: prep.val_y.clone(),
    };

    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.jsonl"));
    let mut log_file = create(&log_path)?;
    let header = LogHeader::new(&cfg, &windows).to_line();
    append_line(&mut log_file, &header).map_err(|e| Error::io(&log_path, e))?;

    let mut run = || {
        fit_with(&windows, Some(&val), &cfg, |rec| {
            println!(
                "epoch {:>3}  train {:.5}  val {:.5}  r {}  ({:.1} s)",
                rec.epoch,
                rec.train_loss,
                rec.val_loss.unwrap_or(f64::NAN),
                rec.val_r_mean.map_or("n/a".into(), |r| format!("{r:.4}")),
                rec.wall_time_s
            );
            append_line(&mut log_file, &rec.to_line()).map_err(|e| Error::io(&log_path, e))
        })
    };
    let outcome = match a.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    Checkpoint::Snn {
        spec: cfg.network.clone(),
        params: outcome.params,
        standardizer: prep.standardizer,
    }
    .save(&a.out)?;
    println!("wrote {} and {}", a.out.display(), log_path.display());
    Ok(())
}

fn load_snn(path: &Path) -> Result<(NetworkSpec, NetworkParams<f32>, Standardizer)> {
    match Checkpoint::load(path)? {
        Checkpoint::Snn {
            spec,
            params,
            standardizer,
        } => Ok((spec, params, standardizer)),
        Checkpoint::Kf { .. } => Err(Error::Format {
            path: path.into(),
            message: "expected a spiking-network checkpoint, found a Kalman filter".into(),
        }),
    }
}

/// Predictions over the whole sequence from one unfolded evaluation pass.
fn unfolded_predictions(
    params: &NetworkParams<f32>,
    spec: &NetworkSpec,
    x: ArrayView2<'_, f32>,
) -> Result<Array2<f32>> {
    Ok(forward_batch(params, spec, x, 1, Mode::Eval, 0)?
        .predictions()
        .to_owned())
}

/// Frame-by-frame predictions with one persistent state.
fn streamed_predictions(
    params: &NetworkParams<f32>,
    spec: &NetworkSpec,
    x: ArrayView2<'_, f32>,
) -> Result<Array2<f32>> {
    let mut state = reset_state(spec);
    let mut out = Array2::zeros((x.nrows(), spec.output_width()));
    for (frame, mut row) in x.rows().into_iter().zip(out.rows_mut()) {
        let p = state.step(params, spec, &frame.to_vec())?;
        row.iter_mut().zip(p).for_each(|(dst, v)| *dst = v);
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    model: &'a str,
    /// Metrics in original velocity units.
    report: &'a MetricReport,
    /// Mean squared error in standardized units, comparable to the training log.
    standardized_mse: f64,
}

fn report(
    name: &str,
    prep: &Prepared,
    pred_std: &Array2<f32>,
    trace: Option<&Path>,
    json: Option<&Path>,
) -> Result<MetricReport> {
    let pred = prep.standardizer.invert_velocities(pred_std.view())?;
    let m = MetricReport::compute(pred.view(), prep.val_raw.velocities.view())?;
    let standardized_mse = mse(pred_std.view(), prep.val_y.view());
    let per: Vec<String> = m.r.iter().map(|r| format!("{r:.4}")).collect();
    println!(
        "{name}: frames {}  r [{}]  mean r {:.4}  mse {:.6} (standardized {:.6})",
        m.frames,
        per.join(", "),
        m.mean_r,
        m.mse,
        standardized_mse
    );
    if let Some(path) = trace {
        write_trace(path, prep, &pred)?;
    }
    if let Some(path) = json {
        let text = serde_json::to_string_pretty(&EvalSummary {
            model: name,
            report: &m,
            standardized_mse,
        })
        .expect("serializable");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(m)
}

fn write_trace(path: &Path, prep: &Prepared, pred: &Array2<f32>) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut w = csv::Writer::from_writer(create(path)?);
    let truth = &prep.val_raw.velocities;
    let mut header = vec!["time_s".to_string()];
    for k in 1..=truth.ncols() {
        header.push(format!("true_v{k}"));
        header.push(format!("pred_v{k}"));
    }
    w.write_record(&header).map_err(|e| io(e.into()))?;
    let dt = prep.val_raw.frame_ms as f64 / 1000.0;
    for (i, (t, p)) in truth.rows().into_iter().zip(pred.rows()).enumerate() {
        let mut rec = vec![format!("{}", (prep.val_offset + i) as f64 * dt)];
        for (a, b) in t.iter().zip(p) {
            rec.push(a.to_string());
            rec.push(b.to_string());
        }
        w.write_record(&rec).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

fn eval(a: EvalArgs) -> Result<()> {
    match Checkpoint::load(&a.model)? {
        Checkpoint::Snn {
            spec,
            params,
            standardizer,
        } => {
            let prep = prepare(&a.data, Some(&standardizer))?;
            let pred = unfolded_predictions(&params, &spec, prep.val_x.view())?;
            report("snn", &prep, &pred, a.trace.as_deref(), a.json.as_deref())?;
        }
        Checkpoint::Kf { model, standardizer } => {
            let prep = prepare(&a.data, Some(&standardizer))?;
            let pred = kf_decode(&model, prep.val_x.view())?;
            report("kf", &prep, &pred, a.trace.as_deref(), a.json.as_deref())?;
        }
    }
    Ok(())
}

/// Largest tolerated gap between streamed and unfolded mean correlation.
pub const STREAM_EQUIVALENCE_TOL: f64 = 1e-6;

fn stream(a: EvalArgs) -> Result<()> {
    let (spec, params, standardizer) = load_snn(&a.model)?;
    let prep = prepare(&a.data, Some(&standardizer))?;
    let streamed = streamed_predictions(&params, &spec, prep.val_x.view())?;
    let m = report("stream", &prep, &streamed, a.trace.as_deref(), a.json.as_deref())?;
    let unfolded = unfolded_predictions(&params, &spec, prep.val_x.view())?;
    let reference = MetricReport::compute(
        prep.standardizer.invert_velocities(unfolded.view())?.view(),
        prep.val_raw.velocities.view(),
    )?;
    let gap = (m.mean_r - reference.mean_r).abs();
    let max_abs = streamed
        .iter()
        .zip(&unfolded)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("stream vs eval: mean r difference {gap:.3e}, max prediction difference {max_abs:.3e}");
    if gap >= STREAM_EQUIVALENCE_TOL {
        return Err(Error::Mismatch(format!(
            "streamed mean r differs from unfolded evaluation by {gap:e}"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ProfileOutput<'a> {
    spike_stats: &'a SpikeStats,
    rates_used: &'a [f64],
    cost_model: CostModel,
    comparison: crate::profiler::Comparison,
}

fn profile(a: ProfileArgs) -> Result<()> {
    let (spec, params, standardizer) = load_snn(&a.model)?;
    let prep = prepare(&a.data, Some(&standardizer))?;
    let stats = count_spikes(&params, &spec, prep.val_x.view())?;
    println!("frames profiled: {}", stats.frames);
    for (l, r) in stats.layer_rates.iter().enumerate() {
        println!("layer {} spike rate: {:.2}%", l + 1, 100.0 * r);
    }
    println!(
        "spikes per inference: {:.1} of {} hidden neurons",
        stats.mean_spikes_per_inference,
        (0..spec.spiking_layer_count()).map(|l| spec.width(l)).sum::<usize>()
    );
    let rates = a.rates.clone().unwrap_or_else(|| stats.layer_rates.clone());
    let cost = CostModel::default();
    let comparison = compare_report(&[
        NamedReport {
            name: "ANN".into(),
            report: ann_report(a.ann_macs, &cost),
        },
        NamedReport {
            name: "SNN".into(),
            report: snn_cost(&spec, &rates, &cost)?,
        },
    ])?;
    print!("{}", comparison.render());
    if let Some(path) = &a.json {
        let out = ProfileOutput {
            spike_stats: &stats,
            rates_used: &rates,
            cost_model: cost,
            comparison,
        };
        let text = serde_json::to_string_pretty(&out).expect("serializable");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn kf(a: KfArgs) -> Result<()> {
    let prep = prepare(&a.data, None)?;
    let model = kf_fit(prep.train_x.view(), prep.train_y.view())?;
    if model.regularizer > 0.0 {
        println!("least squares regularized with ridge {:.3e}", model.regularizer);
    }
    let pred = kf_decode(&model, prep.val_x.view())?;
    report("kf", &prep, &pred, a.trace.as_deref(), a.json.as_deref())?;
    if let Some(out) = &a.out {
        Checkpoint::Kf {
            model,
            standardizer: prep.standardizer,
        }
        .save(out)?;
    }
    Ok(())
}
