use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use declip_cli::{evaluate, exit_code, region_report, write_csv, write_dump, write_pretty, EvalSpec, HarnessError, Method};
use declip_core::aspade::{declip_aspade, SpadeParams};
use declip_core::io::{read_mask, read_wav, write_mask, write_wav, WavEncoding};
use declip_core::signal::sdr_at_threshold;
use declip_core::{clip, find_threshold, mask_from_clipped, SAMPLE_RATE};
use declip_model::{load_checkpoint, save_checkpoint, train, Corpus, CorpusSpec, DeclipModel, ModelConfig, Split, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "declip", version, about = "Clip, declip, train and evaluate speech declippers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Hard-clip a WAV file and write its clip mask.
    Clip(ClipArgs),
    /// Restore a clipped WAV file.
    Declip(DeclipArgs),
    /// Write a synthetic speech-like corpus as WAV files.
    Corpus(CorpusArgs),
    /// Train the declipping network on a corpus.
    Train(TrainArgs),
    /// Score methods on the test split at several clipping levels.
    Eval(EvalArgs),
    /// Split the error of an estimate between clipped and reliable samples.
    RegionReport(RegionArgs),
}

#[derive(Args, Debug)]
struct ClipArgs {
    input: PathBuf,
    output: PathBuf,
    /// Sidecar mask file.
    #[arg(long)]
    mask: PathBuf,
    /// Clip so that the output has this SDR in dB.
    #[arg(long, conflicts_with = "theta", required_unless_present = "theta", allow_hyphen_values = true)]
    target_sdr: Option<f64>,
    /// Clip at this absolute level.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Write 16-bit PCM instead of 32-bit float.
    #[arg(long)]
    pcm16: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum DeclipMethod {
    Aspade,
    Model,
}

#[derive(Args, Debug)]
struct DeclipArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = DeclipMethod::Aspade)]
    method: DeclipMethod,
    /// Clip mask; inferred from the signal peak when absent.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, required_if_eq("method", "model"))]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = SpadeParams::default().frame_len)]
    frame_len: usize,
    #[arg(long, default_value_t = SpadeParams::default().hop)]
    hop: usize,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Output directory; receives train/, val/ and test/.
    out: PathBuf,
    #[arg(long, default_value_t = CorpusSpec::default().n_train)]
    n_train: usize,
    #[arg(long, default_value_t = CorpusSpec::default().n_val)]
    n_val: usize,
    #[arg(long, default_value_t = CorpusSpec::default().n_test)]
    n_test: usize,
    #[arg(long, default_value_t = CorpusSpec::default().seconds_per_clip)]
    seconds: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus directory as written by `declip corpus`.
    corpus: PathBuf,
    /// Where to store the best checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch report; always echoed to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch)]
    batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().crop_len)]
    crop_len: usize,
    #[arg(long, default_value_t = TrainConfig::default().patience)]
    patience: usize,
    /// Seeds both the initial weights and the data order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Zero the waveform-feature channel (ablation).
    #[arg(long)]
    no_tgram: bool,
    /// Use the full-size network instead of the CPU-sized one.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Corpus directory; only test/ is read.
    corpus: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Clipped, Method::Aspade])]
    methods: Vec<Method>,
    /// Input SDR levels in dB; `inf` leaves the signal unclipped.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 3.0, 7.0, 15.0, f64::INFINITY])]
    levels: Vec<f64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Only the first N test files.
    #[arg(long)]
    limit: Option<usize>,
    /// Also print a table with methods down and levels across.
    #[arg(long)]
    pretty: bool,
}

#[derive(Args, Debug)]
struct RegionArgs {
    reference: PathBuf,
    estimate: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Clipping level for the threshold columns; defaults to the largest
    /// reference magnitude among reliable samples.
    #[arg(long)]
    theta: Option<f64>,
    /// Per-sample CSV for plotting.
    #[arg(long)]
    dump: Option<PathBuf>,
}

fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "INF".into()
    } else {
        format!("{v:.2}")
    }
}

fn cmd_clip(a: ClipArgs) -> Result<()> {
    let x = read_wav(&a.input, Some(SAMPLE_RATE)).with_context(|| format!("reading {}", a.input.display()))?;
    let theta = match (a.theta, a.target_sdr) {
        (Some(t), _) => t,
        (None, Some(db)) => find_threshold(&x, db)?,
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let (y, mask) = clip(&x, theta)?;
    let encoding = if a.pcm16 { WavEncoding::Pcm16 } else { WavEncoding::Float32 };
    write_wav(&a.output, &y, encoding)?;
    write_mask(&a.mask, &mask)?;
    println!("theta {theta:.9}");
    println!("clipped {} of {} samples", mask.clipped_count(), mask.len());
    println!("achieved SDR {} dB", format_db(sdr_at_threshold(&x, theta)?));
    Ok(())
}

fn cmd_declip(a: DeclipArgs) -> Result<()> {
    let y = read_wav(&a.input, Some(SAMPLE_RATE)).with_context(|| format!("reading {}", a.input.display()))?;
    let x = match a.method {
        DeclipMethod::Aspade => {
            // A clipped signal peaks exactly at its threshold.
            let mask = match &a.mask {
                Some(p) => read_mask(p, y.peak())?,
                None => mask_from_clipped(&y, y.peak(), 0.0)?,
            };
            let params = SpadeParams {
                frame_len: a.frame_len,
                hop: a.hop,
                ..SpadeParams::default()
            };
            let (x, report) = declip_aspade(&y, &mask, &params)?;
            if !report.all_converged() {
                eprintln!("warning: some frames stopped at the iteration limit");
            }
            x
        }
        DeclipMethod::Model => {
            let path = a.checkpoint.as_ref().expect("clap enforces --checkpoint");
            let model = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            model.declip(&y)?
        }
    };
    write_wav(&a.output, &x, WavEncoding::Float32)?;
    Ok(())
}

fn cmd_corpus(a: CorpusArgs) -> Result<()> {
    let spec = CorpusSpec {
        n_train: a.n_train,
        n_val: a.n_val,
        n_test: a.n_test,
        seconds_per_clip: a.seconds,
        seed: a.seed,
        ..CorpusSpec::default()
    };
    Corpus::synthesize(&spec)?.materialize(&a.out)?;
    println!("wrote {} clips to {}", a.n_train + a.n_val + a.n_test, a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let corpus = Corpus::load(&a.corpus, SAMPLE_RATE).with_context(|| format!("loading {}", a.corpus.display()))?;
    let mut config = if a.full_scale { ModelConfig::full_scale() } else { ModelConfig::toy() };
    config.use_tgram = !a.no_tgram;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        crop_len: a.crop_len,
        patience: a.patience,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let mut model = DeclipModel::new(config, a.seed)?;
    let mut report: Option<Box<dyn Write>> = match &a.report {
        Some(p) => Some(Box::new(BufWriter::new(File::create(p)?))),
        None => None,
    };
    let fft: Vec<usize> = cfg.mrstft.resolutions.iter().map(|r| r.fft_size).collect();
    let mut write_err = None;
    let outcome = train(&mut model, &corpus, &cfg, |record| {
        let line = record.to_line(&fft);
        println!("{line}");
        if let Some(w) = report.as_mut() {
            if let Err(e) = writeln!(w, "{line}") {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing the training report");
    }
    if let Some(mut w) = report {
        w.flush()?;
    }
    save_checkpoint(&outcome.best, &a.out)?;
    println!(
        "best epoch {} of {}{}; {} parameters",
        outcome.best_epoch,
        outcome.epochs.len(),
        if outcome.stopped_early { " (stopped early)" } else { "" },
        outcome.best.parameter_count()
    );
    if let Some(why) = outcome.diverged {
        return Err(HarnessError::Model(declip_model::ModelError::Numerical(format!(
            "training diverged ({why}); kept the checkpoint from epoch {}",
            outcome.best_epoch
        )))
        .into());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let spec = EvalSpec {
        levels: a.levels,
        methods: a.methods,
        ..EvalSpec::default()
    };
    let model = match &a.checkpoint {
        Some(p) => Some(load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let mut clips = Corpus::load_split(&a.corpus, Split::Test, SAMPLE_RATE)
        .with_context(|| format!("loading {}", a.corpus.display()))?;
    if let Some(n) = a.limit {
        clips.truncate(n);
    }
    let rows = evaluate(&spec, &clips, model.as_ref())?;
    match &a.out {
        Some(p) => write_csv(BufWriter::new(File::create(p)?), &rows)?,
        None => write_csv(io::stdout().lock(), &rows)?,
    }
    if a.pretty {
        write_pretty(io::stdout().lock(), &rows)?;
    }
    Ok(())
}

fn cmd_region_report(a: RegionArgs) -> Result<()> {
    let reference = read_wav(&a.reference, None)?;
    let estimate = read_wav(&a.estimate, None)?;
    let labels = read_mask(&a.mask, 1.0)?;
    let theta = match a.theta {
        Some(t) => t,
        None => reliable_peak(&reference, &labels)?,
    };
    let mask = declip_core::ClipMask::new(labels.labels().to_vec(), theta)?;
    let r = region_report(&reference, &estimate, &mask)?;
    println!("samples {}", r.n_samples);
    println!("clipped samples {}", r.n_clipped);
    println!("clipped region error {:.9e}", r.clipped_error);
    println!("unclipped region error {:.9e}", r.unclipped_error);
    if let Some(p) = &a.dump {
        write_dump(BufWriter::new(File::create(p)?), &reference, &estimate, &mask)?;
    }
    Ok(())
}

fn reliable_peak(reference: &declip_core::Waveform, mask: &declip_core::ClipMask) -> Result<f64> {
    if reference.len() != mask.len() {
        bail!(HarnessError::Data(format!(
            "length mismatch: reference {}, mask {}",
            reference.len(),
            mask.len()
        )));
    }
    let peak = reference
        .samples()
        .iter()
        .zip(mask.labels())
        .filter(|(_, l)| !l.is_clipped())
        .fold(0.0f64, |m, (v, _)| m.max(v.abs()));
    if peak > 0.0 {
        Ok(peak)
    } else {
        Ok(reference.peak())
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DECLIP_NUM_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| HarnessError::Usage(format!("DECLIP_NUM_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            bail!(HarnessError::Usage("DECLIP_NUM_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Clip(a) => cmd_clip(a),
        Command::Declip(a) => cmd_declip(a),
        Command::Corpus(a) => cmd_corpus(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::RegionReport(a) => cmd_region_report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(declip_cli::EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

