//! Command-line front end: `simulate`, `train`, `eval`, `recognize`,
//! `select` and `bench`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error, 3
//! real-time contract failure.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::eval::{
    ablate_completion, bench_latency, build_instances, kfold_cv, leave_one_subject_out, sweep_window,
    write_ablation_csv, write_sweep_csv, ConfusionCounts, InstanceSet, LosoReport, SubjectStats,
};
use crate::features::FeatureExtractor;
use crate::model::{ActivitySet, BodyLayout, PipelineConfig, TagReading};
use crate::select::{select_min, Granularity};
use crate::sim::{generate_dataset, load_dataset, write_dataset, Dataset, Scenario};
use crate::stream::{Completer, InputSource, RecordReader, Segmenter};
use crate::svm::{load_model, save_model, SvmModel, TrainParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_REALTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "rfid-har",
    version,
    about = "Activity recognition from wearable RFID reading streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled trace dataset from a scenario file.
    Simulate(SimulateArgs),
    /// Train a model on a trace dataset.
    Train(TrainArgs),
    /// Cross-validate, sweep or ablate on a trace dataset.
    Eval(EvalArgs),
    /// Classify a live or recorded reading stream window by window.
    Recognize(RecognizeArgs),
    /// Search for the smallest antenna and body-part sets reaching an accuracy.
    Select(SelectArgs),
    /// Measure per-window processing time against the window length.
    Bench(BenchArgs),
}

/// Pipeline settings; flags override the config file.
#[derive(Debug, Args, Default)]
struct PipelineArgs {
    /// TOML file with pipeline settings.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Window length L in seconds.
    #[arg(long, value_name = "L")]
    window: Option<f64>,
    /// History kept for completion, seconds.
    #[arg(long, value_name = "S")]
    history_span: Option<f64>,
    /// Overlap below which history is appended.
    #[arg(long, value_name = "T")]
    overlap_threshold: Option<f64>,
    /// Resampling length for frequency features.
    #[arg(long, value_name = "K")]
    resample_len: Option<usize>,
    /// Sentinel RSS for series without readings, dBm.
    #[arg(long, value_name = "DBM", allow_hyphen_values = true)]
    rss_floor: Option<f64>,
    /// Z-score RSS per subject before segmentation.
    #[arg(long)]
    normalize: bool,
    /// Skip data completion.
    #[arg(long)]
    no_completion: bool,
}

impl PipelineArgs {
    fn resolve(&self, base: Option<&PipelineConfig>) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
                toml::from_str(&text).map_err(|e| Error::config("config", e.to_string()))?
            }
            None => base.cloned().unwrap_or_default(),
        };
        if let Some(l) = self.window {
            cfg.window_len_s = l;
            if self.history_span.is_none() && cfg.history_span_s < l {
                cfg.history_span_s = l;
            }
        }
        if let Some(s) = self.history_span {
            cfg.history_span_s = s;
        }
        if let Some(t) = self.overlap_threshold {
            cfg.overlap_threshold = t;
        }
        if let Some(k) = self.resample_len {
            cfg.resample_len = k;
        }
        if let Some(f) = self.rss_floor {
            cfg.rss_floor_dbm = f;
        }
        if self.normalize {
            cfg.normalize_per_subject = true;
        }
        if self.no_completion {
            cfg.completion = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct SvmArgs {
    /// Soft-margin penalty.
    #[arg(long = "c", value_name = "C")]
    c: Option<f64>,
    /// RBF width; defaults to 1/(d · mean variance) of the scaled features.
    #[arg(long, value_name = "G")]
    gamma: Option<f64>,
    /// KKT tolerance of the solver.
    #[arg(long, value_name = "TOL")]
    tol: Option<f64>,
}

impl SvmArgs {
    fn params(&self, model: Option<&SvmModel>) -> TrainParams {
        let mut p = TrainParams::default();
        if let Some(m) = model {
            p.c = m.c;
            p.gamma = Some(m.gamma);
        }
        if let Some(c) = self.c {
            p.c = c;
        }
        if self.gamma.is_some() {
            p.gamma = self.gamma;
        }
        if let Some(t) = self.tol {
            p.tol = t;
        }
        p
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario TOML; the built-in default scenario when absent.
    #[arg(long, value_name = "FILE")]
    scenario: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "MODEL")]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    svm: SvmArgs,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("protocol").args(["kfold", "loso", "sweep_window", "ablate_completion"]))]
struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Model supplying pipeline and SVM settings; evaluated directly on the
    /// data when no protocol is given.
    #[arg(long, value_name = "MODEL")]
    model: Option<PathBuf>,
    /// Stratified k-fold cross-validation.
    #[arg(long, value_name = "K")]
    kfold: Option<usize>,
    /// Leave-one-subject-out; with --normalize, reports both variants.
    #[arg(long)]
    loso: bool,
    /// Comma-separated window lengths to cross-validate.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    sweep_window: Option<Vec<f64>>,
    /// Accuracy with and without completion at each of --windows.
    #[arg(long)]
    ablate_completion: bool,
    /// Window lengths for --ablate-completion; the pipeline window by default.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    windows: Option<Vec<f64>>,
    /// Folds for sweeps and ablation.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write the CSV report here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    svm: SvmArgs,
}

#[derive(Debug, Args)]
struct RecognizeArgs {
    #[arg(long, value_name = "MODEL")]
    model: PathBuf,
    /// FILE, `-` for standard input, or `tcp:PORT`.
    #[arg(long, value_name = "SRC")]
    input: InputSource,
    /// Layout manifest; the default layout when absent.
    #[arg(long, value_name = "FILE")]
    layout: Option<PathBuf>,
    /// Subject RSS mean for models trained on normalized data.
    #[arg(long, value_name = "DBM", allow_hyphen_values = true)]
    rss_mean: Option<f64>,
    /// Subject RSS standard deviation for models trained on normalized data.
    #[arg(long, value_name = "DB")]
    rss_std: Option<f64>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "R")]
    rho: f64,
    #[arg(long, default_value = "part", value_parser = ["part", "tag"])]
    granularity: String,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    svm: SvmArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_name = "MODEL")]
    model: PathBuf,
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Number of windows to time.
    #[arg(long, default_value_t = 200)]
    windows: usize,
    /// Per-window timings as CSV.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Extra delay per window, for testing the failure path.
    #[arg(long, value_name = "MS", default_value_t = 0, hide = true)]
    slowdown_ms: u64,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let out = io::stdout();
    let mut out = out.lock();
    match dispatch(cli.command, &mut out) {
        Ok(code) => code,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Simulate(a) => simulate(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Recognize(a) => recognize(a, out),
        Command::Select(a) => select_cmd(a, out),
        Command::Bench(a) => bench(a, out),
    }
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<i32> {
    let scenario = match &a.scenario {
        Some(p) => Scenario::load(p)?,
        None => Scenario::default_scenario(),
    };
    let dataset = generate_dataset(&scenario, a.seed)?;
    write_dataset(&dataset, &a.out)?;
    let readings: usize = dataset.traces.iter().map(|t| t.readings.len()).sum();
    writeln!(
        out,
        "traces={} readings={} dir={}",
        dataset.traces.len(),
        readings,
        a.out.display()
    )?;
    Ok(EXIT_OK)
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let config = a.pipeline.resolve(None)?;
    let dataset = load_dataset(&a.data)?;
    let set = build_instances(&dataset, &config)?;
    let mut model = set.train_all(&a.svm.params(None))?;
    model.pipeline = Some(config);
    save_model(&model, &a.out)?;
    let svs = model.support_vectors.len();
    writeln!(
        out,
        "instances={} classes={} support_vectors={} gamma={:.6e} model={}",
        set.len(),
        model.classes.len(),
        svs,
        model.gamma,
        a.out.display()
    )?;
    Ok(EXIT_OK)
}

fn report_sink(path: &Option<PathBuf>, out: &mut dyn Write, body: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, body).map_err(|e| Error::file(p, e)),
        None => Ok(out.write_all(body)?),
    }
}

fn write_class_report(w: &mut Vec<u8>, conf: &ConfusionCounts, classes: &ActivitySet) -> Result<()> {
    writeln!(w, "activity,precision,recall,per_activity_accuracy")?;
    for (c, name) in classes.names().iter().enumerate() {
        let (p, r) = conf.precision_recall(c);
        writeln!(w, "{name},{p:.6},{r:.6},{:.6}", conf.per_activity_accuracy(c))?;
    }
    writeln!(w, "overall,,,{:.6}", conf.accuracy())?;
    Ok(())
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let model = a.model.as_deref().map(load_model).transpose()?;
    let config = a.pipeline.resolve(model.as_ref().and_then(|m| m.pipeline.as_ref()))?;
    let params = a.svm.params(model.as_ref());
    let dataset = load_dataset(&a.data)?;
    let mut body = Vec::new();
    if let Some(k) = a.kfold {
        let set = build_instances(&dataset, &config)?;
        let r = kfold_cv(&set, k, a.seed, &params)?;
        write_class_report(&mut body, &r.confusion, &set.activities)?;
    } else if a.loso {
        let plain = PipelineConfig {
            normalize_per_subject: false,
            ..config.clone()
        };
        let base = leave_one_subject_out(&build_instances(&dataset, &plain)?, &params)?;
        let norm = if config.normalize_per_subject {
            Some(leave_one_subject_out(&build_instances(&dataset, &config)?, &params)?)
        } else {
            None
        };
        write_loso(&mut body, &base, norm.as_ref())?;
    } else if let Some(ls) = &a.sweep_window {
        let rows = sweep_window(&dataset, ls, &config, a.folds, a.seed, &params)?;
        write_sweep_csv(&mut body, &rows)?;
    } else if a.ablate_completion {
        let ls = a.windows.clone().unwrap_or_else(|| vec![config.window_len_s]);
        let rows = ablate_completion(&dataset, &ls, &config, a.folds, a.seed, &params)?;
        write_ablation_csv(&mut body, &rows)?;
    } else {
        let model = model.ok_or_else(|| {
            Error::config(
                "eval",
                "give --model or one of --kfold, --loso, --sweep-window, --ablate-completion",
            )
        })?;
        let set = build_instances(&dataset, &config)?;
        let conf = holdout(&model, &set)?;
        write_class_report(&mut body, &conf, &set.activities)?;
    }
    report_sink(&a.out, out, &body)?;
    Ok(EXIT_OK)
}

fn holdout(model: &SvmModel, set: &InstanceSet) -> Result<ConfusionCounts> {
    if model.classes != set.activities {
        return Err(Error::config(
            "model",
            "model classes differ from the dataset's activities",
        ));
    }
    let mut conf = ConfusionCounts::new(set.activities.len());
    for inst in &set.instances {
        conf.record(inst.label, model.predict(&inst.values, set.fingerprint)?.label.id);
    }
    Ok(conf)
}

fn write_loso(w: &mut Vec<u8>, base: &LosoReport, norm: Option<&LosoReport>) -> Result<()> {
    match norm {
        None => {
            writeln!(w, "subject,accuracy")?;
            for (s, acc) in &base.per_subject {
                writeln!(w, "{s},{acc:.6}")?;
            }
            writeln!(w, "mean,{:.6}", base.mean)?;
        }
        Some(n) => {
            writeln!(w, "subject,accuracy,normalized_accuracy")?;
            for ((s, acc), (_, nacc)) in base.per_subject.iter().zip(&n.per_subject) {
                writeln!(w, "{s},{acc:.6},{nacc:.6}")?;
            }
            writeln!(w, "mean,{:.6},{:.6}", base.mean, n.mean)?;
        }
    }
    Ok(())
}

fn load_layout(path: &Option<PathBuf>) -> Result<BodyLayout> {
    match path {
        Some(p) => BodyLayout::load(p),
        None => Ok(BodyLayout::default_layout()),
    }
}

fn recognize(a: RecognizeArgs, out: &mut dyn Write) -> Result<i32> {
    let model = load_model(&a.model)?;
    let config = a.pipeline.resolve(model.pipeline.as_ref())?;
    let layout = load_layout(&a.layout)?;
    let mut extractor = FeatureExtractor::new(&layout, &config);
    let stats = if config.normalize_per_subject {
        match (a.rss_mean, a.rss_std) {
            (Some(mean), Some(std)) if std > 0.0 => Some(SubjectStats { mean, std }),
            _ => {
                return Err(Error::config(
                    "normalize_per_subject",
                    "model expects normalized RSS; pass --rss-mean and a positive --rss-std",
                ))
            }
        }
    } else {
        None
    };
    if let Some(s) = &stats {
        extractor = extractor.with_floor(s.apply(config.rss_floor_dbm));
    }
    let reader = a.input.open()?;
    let mut segmenter = Segmenter::new(config.window_len_ms());
    let mut completer = Completer::new(&config);
    let mut emit = |seg, out: &mut dyn Write| -> Result<()> {
        let seg = completer.process(seg, &layout);
        let fv = extractor.extract(&seg)?;
        let p = model.predict(&fv.values, fv.layout_fingerprint)?;
        writeln!(out, "{},{},{}", seg.window_end_ms(), p.label.name, p.top_votes())?;
        out.flush()?;
        Ok(())
    };
    for rec in RecordReader::new(reader, &layout) {
        let mut r: TagReading = rec?.reading;
        if let Some(s) = &stats {
            r.rss_dbm = s.apply(r.rss_dbm);
        }
        for seg in segmenter.push(r)? {
            emit(seg, out)?;
        }
    }
    if let Some(seg) = segmenter.finish() {
        emit(seg, out)?;
    }
    Ok(EXIT_OK)
}

fn select_cmd(a: SelectArgs, out: &mut dyn Write) -> Result<i32> {
    let config = a.pipeline.resolve(None)?;
    let granularity: Granularity = a.granularity.parse()?;
    let dataset = load_dataset(&a.data)?;
    let set = build_instances(&dataset, &config)?;
    let result = select_min(
        &set,
        a.rho,
        granularity,
        a.folds,
        a.seed,
        &a.svm.params(None),
        |n_ant, n_parts, evals| {
            eprintln!("level n_ant={n_ant} n_parts={n_parts} evaluations={evals}");
        },
    )?;
    eprintln!("protocol: {}; evaluations={}", result.protocol, result.evaluations);
    if result.level.is_none() {
        if let Some((spec, acc)) = &result.best {
            eprintln!(
                "no subset reached rho={}; best {}",
                a.rho,
                spec.report_line(&set.layout, *acc)
            );
        }
    }
    out.write_all(result.report(&set.layout).as_bytes())?;
    Ok(EXIT_OK)
}

/// Traces from the front of the dataset covering at least `windows` windows.
fn bench_traces(dataset: &Dataset, config: &PipelineConfig, windows: usize) -> Dataset {
    let l = config.window_len_ms();
    let mut taken = Vec::new();
    let mut count = 0;
    for t in &dataset.traces {
        if count >= windows {
            break;
        }
        if let (Some(first), Some(last)) = (t.readings.first(), t.readings.last()) {
            count += (last.timestamp_ms.div_euclid(l) - first.timestamp_ms.div_euclid(l) + 1) as usize;
        }
        taken.push(t.clone());
    }
    Dataset {
        traces: taken,
        manifest: Vec::new(),
        ..dataset.clone()
    }
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let model = load_model(&a.model)?;
    let config = a.pipeline.resolve(model.pipeline.as_ref())?;
    if config.normalize_per_subject {
        return Err(Error::config(
            "normalize_per_subject",
            "bench runs on raw RSS; use a model trained without --normalize",
        ));
    }
    let dataset = load_dataset(&a.data)?;
    let subset = bench_traces(&dataset, &config, a.windows);
    let report = bench_latency(
        &model,
        &dataset.layout,
        &subset.traces,
        &config,
        Duration::from_millis(a.slowdown_ms),
    )?;
    if let Some(p) = &a.out {
        let f = fs::File::create(p).map_err(|e| Error::file(p, e))?;
        report.write_csv(BufWriter::new(f))?;
    }
    writeln!(out, "{}", report.summary())?;
    Ok(if report.pass { EXIT_OK } else { EXIT_REALTIME })
}
