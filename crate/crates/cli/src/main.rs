use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use memg_core::classify::{self, ForestConfig};
use memg_core::features::{records_from_fit, standardize, Feature, FeatureMatrix, FeatureRecord};
use memg_core::io::{self, FrameFile, FrameMeta, ParamsDocument};
use memg_core::lm::LmConfig;
use memg_core::preprocess::{GainFit, GainMode, PreprocessConfig};
use memg_core::staged::{reconstruct, GradientScale, DEFAULT_MAX_COMPONENTS};
use memg_core::synth::{self, SynthSpec};
use memg_core::{FitResult, InitConfig, MemgError, Param, StagePlan};
use rayon::prelude::*;
use serde::Serialize;

/// Operating frequency assumed when neither a flag nor the frame metadata
/// gives one.
const DEFAULT_FE_KHZ: f64 = 175.0;

#[derive(Parser, Debug)]
#[command(name = "memg", version, about = "Fit skewed oscillating echo models to A-scan frames")]
struct Cli {
    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (directory for `synth`); stdout when absent
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Suppress warnings on stderr
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a ground-truth and a noisy frame
    Synth(SynthArgs),
    /// Fit every frame of a file or directory
    Fit {
        input: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        /// Label components with mu in LO,HI (ms) as objects in CSV output
        #[arg(long, value_parser = parse_pair)]
        gate: Option<(f64, f64)>,
    },
    /// Reconstruct a frame from its fit, scored against a ground truth
    Denoise {
        input: PathBuf,
        /// Ground-truth frame for PSNR scoring
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Reuse parameters written by `fit` instead of fitting
        #[arg(long)]
        from_params: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Train and evaluate the echo-vs-clutter forest
    Classify(ClassifyArgs),
    /// Write the labelled synthetic feature corpus
    Corpus {
        #[arg(long, default_value_t = 21)]
        frames: usize,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of echoes, taken in order from the default spec
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Sampling rate in kHz
    #[arg(long, default_value_t = 300.0)]
    fs: f64,
    /// Standard deviation of the added noise
    #[arg(long, default_value_t = 10.0)]
    noise: f64,
    /// Frame length; defaults to 200 ms of samples
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    no_quantize: bool,
    /// Full spec as JSON, replacing the other spec flags
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PlanArg {
    /// Envelope, carrier, then joint stages
    Memg,
    /// Envelope stage only
    Envelope,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    Peak,
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum GainArg {
    Off,
    Fit,
    Fixed(f64, f64),
}

#[derive(Args, Clone, Debug)]
struct FitArgs {
    /// Gradient threshold [default: 0.1 for memg, 100 for envelope]
    #[arg(long)]
    tau: Option<f64>,
    /// Gradient stride in samples [default: 20 for memg, 1 for envelope]
    #[arg(long)]
    grad_sep: Option<usize>,
    /// Units of tau [default: peak for memg, raw for envelope]
    #[arg(long, value_enum)]
    grad_scale: Option<ScaleArg>,
    /// Operating frequency in kHz [default: frame metadata, else 175]
    #[arg(long)]
    fe: Option<f64>,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = PlanArg::Memg)]
    plan: PlanArg,
    /// Keep a parameter at its initial value in every stage
    #[arg(long, value_parser = parse_param)]
    freeze: Vec<Param>,
    /// Initial spread in ms [default: one carrier period]
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_COMPONENTS)]
    max_components: usize,
    /// Pass-band width relative to its center
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
    /// Pass-band center in kHz [default: operating frequency when known,
    /// else the dominant frequency]
    #[arg(long)]
    center: Option<f64>,
    #[arg(long)]
    no_bandpass: bool,
    /// Distance gain: off, fit, or A,B for a fixed a / x^b
    #[arg(long, value_parser = parse_gain, default_value = "off")]
    gain: GainArg,
    /// Leading samples to ignore [default: frame metadata]
    #[arg(long)]
    blind_zone: Option<usize>,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    /// Feature CSV with labels
    input: Option<PathBuf>,
    /// Parameter document from `fit`, labelled with --gate
    #[arg(long, conflicts_with = "input", requires = "gate")]
    params: Option<PathBuf>,
    /// Components with mu in LO,HI (ms) are objects
    #[arg(long, value_parser = parse_pair)]
    gate: Option<(f64, f64)>,
    #[arg(long, default_value_t = 10)]
    trees: usize,
    #[arg(long, default_value_t = 6)]
    depth: usize,
    #[arg(long, default_value_t = 1)]
    min_leaf: usize,
    #[arg(long, default_value_t = 2)]
    min_split: usize,
    /// Candidate features per split [default: ceil(sqrt(D))]
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long, default_value_t = 0.7)]
    train_frac: f64,
    /// Comma-separated feature columns
    #[arg(long = "features", value_delimiter = ',', value_parser = parse_feature, default_value = "sigma,eta,conf,alpha")]
    columns: Vec<Feature>,
    /// Columns to drop from the feature set
    #[arg(long, value_delimiter = ',', value_parser = parse_feature)]
    exclude: Vec<Feature>,
    /// Also write the trained forest as JSON
    #[arg(long)]
    save_forest: Option<PathBuf>,
}

#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((a, b))
}

fn parse_param(s: &str) -> std::result::Result<Param, String> {
    Param::ALL
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| format!("unknown parameter '{s}'"))
}

fn parse_feature(s: &str) -> std::result::Result<Feature, String> {
    Feature::parse(s.trim()).ok_or_else(|| format!("unknown feature '{s}'"))
}

fn parse_gain(s: &str) -> std::result::Result<GainArg, String> {
    match s {
        "off" => Ok(GainArg::Off),
        "fit" => Ok(GainArg::Fit),
        _ => parse_pair(s).map(|(a, b)| GainArg::Fixed(a, b)),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<MemgError>() {
            return match e {
                MemgError::InvalidInput(_) | MemgError::Aliasing { .. } | MemgError::InvalidBand(_) => 2,
                MemgError::Io { .. }
                | MemgError::Format { .. }
                | MemgError::Version { .. }
                | MemgError::Json(_)
                | MemgError::Shape { .. } => 3,
                _ => 4,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() || cause.is::<serde_json::Error>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    use std::io::ErrorKind::BrokenPipe;
    err.chain().any(|c| {
        c.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == BrokenPipe)
            || c.downcast_ref::<serde_json::Error>().and_then(|e| e.io_error_kind()) == Some(BrokenPipe)
            || c.downcast_ref::<csv::Error>().is_some_and(|e| {
                matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == BrokenPipe)
            })
    })
}

fn run(cli: &Cli) -> Result<()> {
    if let Ok(v) = std::env::var("MEMG_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| usage(format!("MEMG_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Synth(args) => cmd_synth(cli, args),
        Command::Fit { input, fit, gate } => cmd_fit(cli, input, fit, *gate),
        Command::Denoise {
            input,
            gt,
            from_params,
            fit,
        } => cmd_denoise(cli, input, gt.as_deref(), from_params.as_deref(), fit),
        Command::Classify(args) => cmd_classify(cli, args),
        Command::Corpus { frames } => {
            let records = synth::feature_corpus(cli.seed, *frames);
            emit(cli, |w| Ok(io::write_features_to(&records, w)?))
        }
    }
}

/// Writes to `--output` when given, stdout otherwise.
fn emit(cli: &Cli, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match &cli.output {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = std::io::BufWriter::new(file);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn json_line<T: Serialize>(value: &T, w: &mut dyn Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    writeln!(w)?;
    Ok(())
}

fn warn(cli: &Cli, msg: impl fmt::Display) {
    if !cli.quiet {
        eprintln!("warning: {msg}");
    }
}

#[derive(Serialize)]
struct SynthSummary {
    gt: PathBuf,
    noisy: PathBuf,
    spec: PathBuf,
    params: PathBuf,
    #[serde(with = "synth::db_serde")]
    psnr_raw_db: f64,
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SynthSpec>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let base = SynthSpec::default();
            if args.k == 0 || args.k > base.components.len() {
                return Err(usage(format!(
                    "--k must be between 1 and {}, got {} (use --spec for other layouts)",
                    base.components.len(),
                    args.k
                )));
            }
            SynthSpec {
                components: base.components[..args.k].to_vec(),
                fs_khz: args.fs,
                n_samples: args.n_samples.unwrap_or((200.0 * args.fs).round() as usize),
                noise_sigma: args.noise,
                quantize: !args.no_quantize,
                seed: 0,
            }
        }
    };
    spec.seed = cli.seed;
    let syn = synth::generate(&spec)?;
    let dir = cli.output.clone().unwrap_or_else(|| PathBuf::from("."));
    let meta = FrameMeta {
        f_e_khz: Some(spec.carrier_khz()).filter(|f| *f > 0.0),
        ..FrameMeta::for_frame(&syn.gt)
    };
    let summary = SynthSummary {
        gt: dir.join("gt.csv"),
        noisy: dir.join("noisy.csv"),
        spec: dir.join("spec.json"),
        params: dir.join("gt_params.json"),
        psnr_raw_db: synth::psnr(&syn.gt.samples, &syn.noisy.samples)?,
    };
    io::write_frame(&syn.gt, &meta, &summary.gt)?;
    io::write_frame(&syn.noisy, &meta, &summary.noisy)?;
    std::fs::write(&summary.spec, serde_json::to_string_pretty(&spec)? + "\n")
        .with_context(|| format!("writing {}", summary.spec.display()))?;
    let truth = FitResult {
        params: syn.params.clone(),
        component_confidences: vec![None; syn.params.len()],
        ..FitResult::empty(0)
    };
    io::write_params(&[truth], &summary.params)?;
    let stdout = std::io::stdout();
    json_line(&summary, &mut stdout.lock())
}

struct Pipeline {
    pre: PreprocessConfig,
    init: InitConfig,
    plan: StagePlan,
    lm: LmConfig,
}

impl FitArgs {
    fn pipeline(&self, meta: &FrameMeta) -> Result<Pipeline> {
        let known_fe = self.fe.or(meta.f_e_khz);
        let f_e = known_fe.unwrap_or(DEFAULT_FE_KHZ);
        let mut init = match self.plan {
            PlanArg::Memg => InitConfig::simulation(f_e),
            PlanArg::Envelope => InitConfig {
                f_e,
                ..InitConfig::transducer()
            },
        };
        if let Some(t) = self.tau {
            init.tau = t;
        }
        if let Some(s) = self.grad_sep {
            init.grad_separation = s;
        }
        if let Some(s) = self.grad_scale {
            init.scale = match s {
                ScaleArg::Peak => GradientScale::Peak,
                ScaleArg::Raw => GradientScale::Raw,
            };
        }
        init.sigma_init = self.sigma0;
        init.max_components = Some(self.max_components);
        init.blind_zone = self.blind_zone.unwrap_or(meta.blind_zone_samples);
        init.validate().map_err(|e| usage(e.to_string()))?;

        let mut plan = match self.plan {
            PlanArg::Memg => StagePlan::memg(),
            PlanArg::Envelope => StagePlan::envelope_only(),
        };
        for p in &self.freeze {
            plan = plan.freezing(*p);
        }
        let lm = LmConfig::default().with_max_iterations(self.max_iter);
        lm.validate().map_err(|e| usage(e.to_string()))?;
        let pre = PreprocessConfig {
            rel_bandwidth: (!self.no_bandpass).then_some(self.bandwidth),
            center_khz: self.center.or(known_fe),
            gain: match self.gain {
                GainArg::Off => GainMode::Off,
                GainArg::Fit => GainMode::Fit,
                GainArg::Fixed(a, b) => GainMode::Fixed(GainFit { a, b }),
            },
            blind_zone: init.blind_zone,
        };
        Ok(Pipeline { pre, init, plan, lm })
    }

    fn fit(&self, file: &FrameFile) -> Result<FitResult> {
        let p = self.pipeline(&file.meta)?;
        synth::fit_noisy(&file.frame, &p.pre, &p.init, &p.plan, &p.lm)
            .with_context(|| format!("fitting {}", file.path.display()))
    }
}

fn read_input(path: &Path) -> Result<Vec<FrameFile>> {
    std::fs::metadata(path).map_err(|source| MemgError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(io::read_frames(path)?)
}

fn fit_all(cli: &Cli, frames: &[FrameFile], args: &FitArgs) -> Result<Vec<FitResult>> {
    let fits = frames
        .par_iter()
        .map(|f| args.fit(f))
        .collect::<Result<Vec<_>>>()?;
    for (f, fit) in frames.iter().zip(&fits) {
        if fit.params.is_empty() {
            warn(cli, format_args!("{}: no components detected", f.path.display()));
        } else if fit.degraded {
            warn(cli, format_args!("{}: a fit stage made no progress", f.path.display()));
        }
    }
    Ok(fits)
}

fn gate_label(gate: Option<(f64, f64)>) -> impl Fn(&memg_core::EchoParams) -> usize {
    move |p| gate.is_some_and(|(lo, hi)| p.mu >= lo && p.mu <= hi) as usize
}

fn cmd_fit(cli: &Cli, input: &Path, args: &FitArgs, gate: Option<(f64, f64)>) -> Result<()> {
    let frames = read_input(input)?;
    let fits = fit_all(cli, &frames, args)?;
    match cli.format {
        Format::Json => emit(cli, |w| json_line(&ParamsDocument::new(&fits), w)),
        Format::Csv => {
            let records: Vec<FeatureRecord> = frames
                .iter()
                .zip(&fits)
                .flat_map(|(f, fit)| records_from_fit(fit, Some(f.frame.duration()), gate_label(gate)))
                .collect();
            emit(cli, |w| Ok(io::write_features_to(&records, w)?))
        }
    }
}

#[derive(Serialize)]
struct Scores {
    #[serde(with = "synth::db_serde")]
    psnr_raw_db: f64,
    #[serde(with = "synth::db_serde")]
    psnr_fit_db: f64,
    #[serde(with = "synth::db_serde")]
    gain_db: f64,
}

#[derive(Serialize)]
struct DenoiseReport {
    frame_index: usize,
    components: usize,
    degraded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    reconstruction: Option<PathBuf>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    scores: Option<Scores>,
}

fn cmd_denoise(
    cli: &Cli,
    input: &Path,
    gt: Option<&Path>,
    from_params: Option<&Path>,
    args: &FitArgs,
) -> Result<()> {
    let mut frames = read_input(input)?;
    if frames.len() != 1 {
        return Err(usage(format!("denoise expects one frame, found {}", frames.len())));
    }
    let file = frames.remove(0);
    let fit = match from_params {
        Some(path) => {
            let doc = io::read_params(path)?;
            doc.frames
                .iter()
                .find(|f| f.frame_index == file.meta.frame_index)
                .map(|f| f.to_fit())
                .with_context(|| format!("{} has no frame {}", path.display(), file.meta.frame_index))?
        }
        None => fit_all(cli, std::slice::from_ref(&file), args)?.remove(0),
    };
    let recon = file.frame.with_samples(reconstruct(&fit, &file.frame.time_axis())?);
    let scores = match gt {
        Some(path) => {
            let truth = io::read_frame(path)?;
            let raw = synth::psnr(&truth.frame.samples, &file.frame.samples)?;
            let fitted = synth::psnr(&truth.frame.samples, &recon.samples)?;
            Some(Scores {
                psnr_raw_db: raw,
                psnr_fit_db: fitted,
                gain_db: synth::gain_db(fitted, raw),
            })
        }
        None => None,
    };
    let mut report = DenoiseReport {
        frame_index: file.meta.frame_index,
        components: fit.params.len(),
        degraded: fit.degraded,
        reconstruction: None,
        scores,
    };
    match (&cli.output, cli.format) {
        (Some(path), _) => {
            let meta = FrameMeta {
                f_e_khz: args.fe.or(file.meta.f_e_khz),
                ..file.meta.clone()
            };
            io::write_frame(&recon, &meta, path)?;
            report.reconstruction = Some(path.clone());
            json_line(&report, &mut std::io::stdout().lock())
        }
        (None, Format::Csv) => emit(cli, |w| Ok(io::write_samples_to(&recon, w)?)),
        (None, Format::Json) => emit(cli, |w| json_line(&report, w)),
    }
}

#[derive(Serialize)]
struct ClassifyReport {
    features: Vec<&'static str>,
    train_frames: usize,
    test_frames: usize,
    train_rows: usize,
    test_rows: usize,
    #[serde(flatten)]
    evaluation: classify::Evaluation,
    importances: serde_json::Map<String, serde_json::Value>,
    oob_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct PredictionRow {
    frame: usize,
    label: usize,
    predicted: usize,
    object_vote: f64,
}

fn distinct(frames: &[usize]) -> usize {
    let mut f = frames.to_vec();
    f.sort_unstable();
    f.dedup();
    f.len()
}

fn cmd_classify(cli: &Cli, args: &ClassifyArgs) -> Result<()> {
    let records: Vec<FeatureRecord> = match (&args.input, &args.params) {
        (Some(path), None) => io::read_features(path)?,
        (None, Some(path)) => {
            let label = gate_label(args.gate);
            io::read_params(path)?
                .frames
                .iter()
                .flat_map(|f| {
                    f.components.iter().enumerate().filter_map(|(k, c)| {
                        let p = c.params();
                        c.confidence.map(|conf| FeatureRecord::new(f.frame_index, k, &p, conf, label(&p)))
                    })
                })
                .collect()
        }
        _ => return Err(usage("give a feature CSV or --params with --gate")),
    };
    let columns: Vec<Feature> = args
        .columns
        .iter()
        .copied()
        .filter(|f| !args.exclude.contains(f))
        .collect();
    if columns.is_empty() {
        return Err(usage("no feature columns left"));
    }
    if columns.contains(&Feature::Mu) {
        return Err(usage("mu is positional and cannot be a classification feature"));
    }
    let cfg = ForestConfig {
        n_trees: args.trees,
        max_depth: args.depth,
        min_samples_leaf: args.min_leaf,
        min_samples_split: args.min_split,
        features_per_split: args.mtry,
        seed: cli.seed,
        bootstrap: !args.no_bootstrap,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let all = FeatureMatrix::from_records(&records, &columns);
    let (train, test) = classify::split_frames(&all, args.train_frac, cli.seed)?;
    let train = standardize(&train)?;
    let test = test.scaled_with(train.scaling.as_ref().expect("standardized"))?;
    let forest = classify::train(&train, &cfg)?;
    let predictions = classify::predict(&forest, &test.rows)?;
    let predicted: Vec<usize> = predictions.iter().map(|p| p.label).collect();
    let evaluation = classify::evaluate(&predicted, &test.labels)?;
    if let Some(w) = &evaluation.warning {
        warn(cli, w);
    }
    if let Some(path) = &args.save_forest {
        std::fs::write(path, forest.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    }
    match cli.format {
        Format::Json => {
            let report = ClassifyReport {
                features: columns.iter().map(|c| c.name()).collect(),
                train_frames: distinct(&train.frames),
                test_frames: distinct(&test.frames),
                train_rows: train.len(),
                test_rows: test.len(),
                evaluation,
                importances: columns
                    .iter()
                    .zip(&forest.feature_importances)
                    .map(|(c, v)| (c.name().to_string(), (*v).into()))
                    .collect(),
                oob_accuracy: forest.oob_accuracy,
            };
            emit(cli, |w| json_line(&report, w))
        }
        Format::Csv => emit(cli, |w| {
            let mut out = csv::Writer::from_writer(w);
            for ((frame, label), p) in test.frames.iter().zip(&test.labels).zip(&predictions) {
                out.serialize(PredictionRow {
                    frame: *frame,
                    label: *label,
                    predicted: p.label,
                    object_vote: p.votes.get(classify::OBJECT).copied().unwrap_or(0.0),
                })?;
            }
            out.flush()?;
            Ok(())
        }),
    }
}
