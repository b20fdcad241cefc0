//! Metrics, cross-validation protocols, RSS normalization, sweeps and the
//! real-time latency benchmark.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::model::{ActivitySet, BodyLayout, DataSegment, PipelineConfig, TagReading};
use crate::sim::{Dataset, Trace};
use crate::stream::{segment_stream, Completer};
use crate::svm::{train, LabeledVector, SvmModel, TrainParams};

/// Fraction of correct predictions.
pub fn overall_accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Dimension {
            expected: truths.len(),
            actual: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::Training("accuracy of an empty prediction set".into()));
    }
    let correct = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truths.len() as f64)
}

/// K×K confusion matrix, rows are true classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    k: usize,
    matrix: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            matrix: vec![0; k * k],
        }
    }

    pub fn from_predictions(k: usize, predictions: &[usize], truths: &[usize]) -> Result<Self> {
        if predictions.len() != truths.len() {
            return Err(Error::Dimension {
                expected: truths.len(),
                actual: predictions.len(),
            });
        }
        let mut c = Self::new(k);
        for (&p, &t) in predictions.iter().zip(truths) {
            c.record(t, p);
        }
        Ok(c)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.matrix[truth * self.k + predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (a, b) in self.matrix.iter_mut().zip(&other.matrix) {
            *a += b;
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.matrix[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().sum()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        (0..self.k).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_total(&self, predicted: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, predicted)).sum()
    }

    pub fn tp(&self, class: usize) -> u64 {
        self.get(class, class)
    }

    pub fn fp(&self, class: usize) -> u64 {
        self.col_total(class) - self.tp(class)
    }

    pub fn fn_(&self, class: usize) -> u64 {
        self.row_total(class) - self.tp(class)
    }

    pub fn tn(&self, class: usize) -> u64 {
        self.total() - self.tp(class) - self.fp(class) - self.fn_(class)
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.k).map(|c| self.tp(c)).sum::<u64>() as f64 / total as f64
    }

    /// `(TP/(TP+FP), TP/(TP+FN))`, each 0 when its denominator is 0.
    pub fn precision_recall(&self, class: usize) -> (f64, f64) {
        let tp = self.tp(class) as f64;
        let ratio = |d: u64| if d == 0 { 0.0 } else { tp / d as f64 };
        (
            ratio(self.tp(class) + self.fp(class)),
            ratio(self.tp(class) + self.fn_(class)),
        )
    }

    /// `(TP+TN)/(TP+TN+FP+FN)`.
    pub fn per_activity_accuracy(&self, class: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (self.tp(class) + self.tn(class)) as f64 / total as f64
    }

    /// `truth,predicted...` CSV with a header row.
    pub fn write_csv<W: Write>(&self, mut w: W, classes: &ActivitySet) -> Result<()> {
        writeln!(w, "truth,{}", classes.names().join(","))?;
        for t in 0..self.k {
            let row: Vec<String> = (0..self.k).map(|p| self.get(t, p).to_string()).collect();
            writeln!(w, "{},{}", classes.names()[t], row.join(","))?;
        }
        Ok(())
    }
}

pub fn precision_recall(conf: &ConfusionCounts, class: usize) -> (f64, f64) {
    conf.precision_recall(class)
}

pub fn per_activity_accuracy(conf: &ConfusionCounts, class: usize) -> f64 {
    conf.per_activity_accuracy(class)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    None,
    PerSubjectZScore,
}

/// Global RSS mean and standard deviation of one subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectStats {
    pub mean: f64,
    pub std: f64,
}

impl SubjectStats {
    pub fn fit<'a>(traces: impl IntoIterator<Item = &'a [TagReading]>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for t in traces {
            for r in t {
                n += 1;
                sum += r.rss_dbm;
                sq += r.rss_dbm * r.rss_dbm;
            }
        }
        if n == 0 {
            return Err(Error::Training("subject has no readings to normalize".into()));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        if var <= 0.0 {
            return Err(Error::Training("subject RSS has zero variance".into()));
        }
        Ok(Self { mean, std: var.sqrt() })
    }

    pub fn apply(&self, rss: f64) -> f64 {
        (rss - self.mean) / self.std
    }
}

/// Normalizes one trace with its subject's statistics.
pub fn normalize_rss(
    trace: &[TagReading],
    mode: Normalization,
    stats: Option<&SubjectStats>,
) -> Result<Vec<TagReading>> {
    match mode {
        Normalization::None => Ok(trace.to_vec()),
        Normalization::PerSubjectZScore => {
            let stats = stats.ok_or_else(|| Error::config("normalize_per_subject", "subject statistics required"))?;
            Ok(trace
                .iter()
                .map(|r| TagReading {
                    rss_dbm: stats.apply(r.rss_dbm),
                    ..*r
                })
                .collect())
        }
    }
}

/// Per-subject statistics for every subject of a dataset.
pub fn subject_stats(dataset: &Dataset) -> Result<Vec<SubjectStats>> {
    (0..dataset.num_subjects())
        .map(|s| {
            SubjectStats::fit(
                dataset
                    .traces
                    .iter()
                    .filter(|t| t.subject == s)
                    .map(|t| t.readings.as_slice()),
            )
        })
        .collect()
}

/// One featurized window.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub values: Vec<f64>,
    pub label: usize,
    pub subject: usize,
    pub trace: usize,
    pub window_start_ms: i64,
    /// Sentinel the extractor used for absent series.
    pub floor: f64,
}

/// Featurized windows of a dataset under one pipeline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet {
    pub activities: ActivitySet,
    pub layout: BodyLayout,
    pub fingerprint: u64,
    pub instances: Vec<Instance>,
}

impl InstanceSet {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.label).collect()
    }

    pub fn num_subjects(&self) -> usize {
        self.instances.iter().map(|i| i.subject + 1).max().unwrap_or(0)
    }

    fn labeled(&self, idx: &[usize]) -> Vec<LabeledVector> {
        idx.iter()
            .map(|&i| LabeledVector {
                values: self.instances[i].values.clone(),
                label: self.instances[i].label,
                fingerprint: self.fingerprint,
            })
            .collect()
    }

    /// Trains on the given instances.
    pub fn train_on(&self, idx: &[usize], params: &TrainParams) -> Result<SvmModel> {
        train(&self.labeled(idx), &self.activities, params)
    }

    /// Trains on every instance.
    pub fn train_all(&self, params: &TrainParams) -> Result<SvmModel> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.train_on(&all, params)
    }

    fn predict_on(&self, model: &SvmModel, idx: &[usize]) -> Result<Vec<usize>> {
        idx.iter()
            .map(|&i| Ok(model.predict(&self.instances[i].values, self.fingerprint)?.label.id))
            .collect()
    }
}

/// Raw windows of one trace.
pub fn trace_segments(readings: &[TagReading], config: &PipelineConfig) -> Result<Vec<DataSegment>> {
    segment_stream(readings, config.window_len_ms())
}

/// Completed feature vectors for every window of one (possibly
/// normalized) trace.
pub fn featurize_trace(
    readings: &[TagReading],
    layout: &BodyLayout,
    config: &PipelineConfig,
    extractor: &FeatureExtractor,
) -> Result<Vec<(i64, Vec<f64>)>> {
    let mut completer = Completer::new(config);
    trace_segments(readings, config)?
        .into_iter()
        .map(|raw| {
            let start = raw.window_start_ms;
            let seg = completer.process(raw, layout);
            Ok((start, extractor.extract(&seg)?.values))
        })
        .collect()
}

/// Normalizes (when configured), segments, completes and featurizes every
/// trace. Each window becomes one instance.
pub fn build_instances(dataset: &Dataset, config: &PipelineConfig) -> Result<InstanceSet> {
    config.validate()?;
    let extractor = FeatureExtractor::new(&dataset.layout, config);
    let stats = if config.normalize_per_subject {
        Some(subject_stats(dataset)?)
    } else {
        None
    };
    let mut instances = Vec::new();
    for (ti, trace) in dataset.traces.iter().enumerate() {
        let label = dataset.activities.lookup(&trace.activity)?.id;
        let (readings, ex) = match &stats {
            Some(stats) => {
                let s = &stats[trace.subject];
                let r = normalize_rss(&trace.readings, Normalization::PerSubjectZScore, Some(s))?;
                (r, extractor.with_floor(s.apply(config.rss_floor_dbm)))
            }
            None => (trace.readings.clone(), extractor.clone()),
        };
        for (start, values) in featurize_trace(&readings, &dataset.layout, config, &ex)? {
            instances.push(Instance {
                values,
                label,
                subject: trace.subject,
                trace: ti,
                window_start_ms: start,
                floor: ex.floor(),
            });
        }
    }
    Ok(InstanceSet {
        activities: dataset.activities.clone(),
        layout: dataset.layout.clone(),
        fingerprint: extractor.fingerprint(),
        instances,
    })
}

/// Stratified fold assignment: each class is shuffled with `seed` and
/// dealt round-robin over `k` folds.
pub fn stratified_folds(labels: &[usize], classes: &ActivitySet, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::config("k", "need at least 2 folds"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    for c in 0..classes.len() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.len() < k {
            return Err(Error::Stratification {
                class: classes.names()[c].clone(),
                count: members.len(),
                folds: k,
            });
        }
        members.shuffle(&mut rng);
        for (pos, i) in members.into_iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub accuracy: f64,
    pub confusion: ConfusionCounts,
    pub fold_accuracies: Vec<f64>,
    /// Fold index of every instance.
    pub folds: Vec<usize>,
}

/// What the fold observer sees after each fold's model is trained.
pub struct FoldInfo<'a> {
    pub fold: usize,
    pub train: &'a [usize],
    pub test: &'a [usize],
    pub model: &'a SvmModel,
}

pub fn kfold_cv(set: &InstanceSet, k: usize, seed: u64, params: &TrainParams) -> Result<CvReport> {
    kfold_cv_observed(set, k, seed, params, |_| {})
}

/// Stratified k-fold cross-validation. The scaler and model of each fold
/// see only that fold's training split.
pub fn kfold_cv_observed(
    set: &InstanceSet,
    k: usize,
    seed: u64,
    params: &TrainParams,
    mut observe: impl FnMut(&FoldInfo<'_>),
) -> Result<CvReport> {
    let labels = set.labels();
    let folds = stratified_folds(&labels, &set.activities, k, seed)?;
    let mut confusion = ConfusionCounts::new(set.activities.len());
    let mut fold_accuracies = Vec::with_capacity(k);
    for f in 0..k {
        let (test, train_idx): (Vec<usize>, Vec<usize>) = (0..set.len()).partition(|&i| folds[i] == f);
        let model = set.train_on(&train_idx, params)?;
        observe(&FoldInfo {
            fold: f,
            train: &train_idx,
            test: &test,
            model: &model,
        });
        let pred = set.predict_on(&model, &test)?;
        let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        fold_accuracies.push(overall_accuracy(&pred, &truth)?);
        for (p, t) in pred.into_iter().zip(truth) {
            confusion.record(t, p);
        }
    }
    Ok(CvReport {
        accuracy: confusion.accuracy(),
        confusion,
        fold_accuracies,
        folds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LosoReport {
    /// `(subject, accuracy)` per held-out subject.
    pub per_subject: Vec<(usize, f64)>,
    pub mean: f64,
    pub confusion: ConfusionCounts,
}

/// One train/test split per held-out subject.
pub fn leave_one_subject_out(set: &InstanceSet, params: &TrainParams) -> Result<LosoReport> {
    let subjects: Vec<usize> = {
        let mut s: Vec<usize> = set.instances.iter().map(|i| i.subject).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    if subjects.len() < 2 {
        return Err(Error::Training(
            "leave-one-subject-out needs at least two subjects".into(),
        ));
    }
    let labels = set.labels();
    let mut per_subject = Vec::with_capacity(subjects.len());
    let mut confusion = ConfusionCounts::new(set.activities.len());
    for &s in &subjects {
        let (test, train_idx): (Vec<usize>, Vec<usize>) = (0..set.len()).partition(|&i| set.instances[i].subject == s);
        let model = set.train_on(&train_idx, params)?;
        let pred = set.predict_on(&model, &test)?;
        let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        per_subject.push((s, overall_accuracy(&pred, &truth)?));
        for (p, t) in pred.into_iter().zip(truth) {
            confusion.record(t, p);
        }
    }
    let mean = per_subject.iter().map(|(_, a)| a).sum::<f64>() / per_subject.len() as f64;
    Ok(LosoReport {
        per_subject,
        mean,
        confusion,
    })
}

/// LOSO with and without per-subject normalization, as `(plain, normalized)`.
pub fn loso_normalization(
    dataset: &Dataset,
    config: &PipelineConfig,
    params: &TrainParams,
) -> Result<(LosoReport, LosoReport)> {
    let plain = PipelineConfig {
        normalize_per_subject: false,
        ..config.clone()
    };
    let norm = PipelineConfig {
        normalize_per_subject: true,
        ..config.clone()
    };
    Ok((
        leave_one_subject_out(&build_instances(dataset, &plain)?, params)?,
        leave_one_subject_out(&build_instances(dataset, &norm)?, params)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub window_len_s: f64,
    pub instances: usize,
    pub accuracy: f64,
}

/// Re-segments, re-featurizes and cross-validates for every window length.
pub fn sweep_window(
    dataset: &Dataset,
    window_lens_s: &[f64],
    config: &PipelineConfig,
    k: usize,
    seed: u64,
    params: &TrainParams,
) -> Result<Vec<SweepRow>> {
    window_lens_s
        .iter()
        .map(|&l| {
            let cfg = windowed(config, l);
            let set = build_instances(dataset, &cfg)?;
            Ok(SweepRow {
                window_len_s: l,
                instances: set.len(),
                accuracy: kfold_cv(&set, k, seed, params)?.accuracy,
            })
        })
        .collect()
}

/// Window length `l` with the history span widened when it would
/// otherwise be shorter than one window.
fn windowed(config: &PipelineConfig, l: f64) -> PipelineConfig {
    let mut cfg = config.clone().with_window(l);
    cfg.history_span_s = cfg.history_span_s.max(l);
    cfg
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "window_len_s,instances,accuracy")?;
    for r in rows {
        writeln!(w, "{},{},{:.6}", r.window_len_s, r.instances, r.accuracy)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub window_len_s: f64,
    pub with_completion: f64,
    pub without_completion: f64,
}

impl AblationRow {
    pub fn delta(&self) -> f64 {
        self.with_completion - self.without_completion
    }
}

/// Runs the same pipeline with completion on and off for every window
/// length.
pub fn ablate_completion(
    dataset: &Dataset,
    window_lens_s: &[f64],
    config: &PipelineConfig,
    k: usize,
    seed: u64,
    params: &TrainParams,
) -> Result<Vec<AblationRow>> {
    window_lens_s
        .iter()
        .map(|&l| {
            let acc = |completion: bool| -> Result<f64> {
                let cfg = PipelineConfig {
                    completion,
                    ..windowed(config, l)
                };
                Ok(kfold_cv(&build_instances(dataset, &cfg)?, k, seed, params)?.accuracy)
            };
            Ok(AblationRow {
                window_len_s: l,
                with_completion: acc(true)?,
                without_completion: acc(false)?,
            })
        })
        .collect()
}

pub fn write_ablation_csv<W: Write>(mut w: W, rows: &[AblationRow]) -> Result<()> {
    writeln!(w, "window_len_s,with_completion,without_completion,delta")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6}",
            r.window_len_s,
            r.with_completion,
            r.without_completion,
            r.delta()
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingAmountRow {
    pub fraction: f64,
    pub train_instances: usize,
    pub accuracy: f64,
}

/// Trains on a stratified fraction of the instances and tests on the rest.
pub fn sweep_training_amount(
    set: &InstanceSet,
    fractions: &[f64],
    seed: u64,
    params: &TrainParams,
) -> Result<Vec<TrainingAmountRow>> {
    let labels = set.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); set.activities.len()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::config("fraction", "must lie in (0, 1)"));
            }
            let (mut train_idx, mut test) = (Vec::new(), Vec::new());
            for members in &by_class {
                let n = ((members.len() as f64 * f).round() as usize).clamp(1, members.len().saturating_sub(1).max(1));
                train_idx.extend_from_slice(&members[..n]);
                test.extend_from_slice(&members[n..]);
            }
            train_idx.sort_unstable();
            test.sort_unstable();
            let model = set.train_on(&train_idx, params)?;
            let pred = set.predict_on(&model, &test)?;
            let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            Ok(TrainingAmountRow {
                fraction: f,
                train_instances: train_idx.len(),
                accuracy: overall_accuracy(&pred, &truth)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub c: f64,
    pub gamma: f64,
    pub accuracy: f64,
}

/// Cross-validated accuracy over a C × gamma grid. The best point comes
/// first; ties keep grid order.
pub fn grid_search(set: &InstanceSet, cs: &[f64], gammas: &[f64], k: usize, seed: u64) -> Result<Vec<GridPoint>> {
    let mut out = Vec::with_capacity(cs.len() * gammas.len());
    for &c in cs {
        for &gamma in gammas {
            let params = TrainParams {
                c,
                gamma: Some(gamma),
                ..TrainParams::default()
            };
            out.push(GridPoint {
                c,
                gamma,
                accuracy: kfold_cv(set, k, seed, &params)?.accuracy,
            });
        }
    }
    out.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    Ok(out)
}

/// Per-window processing times of the live path.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub durations_ms: Vec<f64>,
    pub max_ms: f64,
    pub mean_ms: f64,
    pub window_len_ms: i64,
    pub pass: bool,
}

impl LatencyReport {
    pub fn from_durations(durations_ms: Vec<f64>, window_len_ms: i64) -> Self {
        let max_ms = durations_ms.iter().copied().fold(0.0, f64::max);
        let mean_ms = if durations_ms.is_empty() {
            0.0
        } else {
            durations_ms.iter().sum::<f64>() / durations_ms.len() as f64
        };
        Self {
            pass: max_ms < window_len_ms as f64,
            durations_ms,
            max_ms,
            mean_ms,
            window_len_ms,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "windows={} window_ms={} mean_ms={:.3} max_ms={:.3} real_time={}",
            self.durations_ms.len(),
            self.window_len_ms,
            self.mean_ms,
            self.max_ms,
            if self.pass { "pass" } else { "fail" }
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "window,processing_ms")?;
        for (i, d) in self.durations_ms.iter().enumerate() {
            writeln!(w, "{i},{d:.6}")?;
        }
        Ok(())
    }
}

/// Times completion, extraction and prediction for every raw window of
/// every trace. `slowdown` is added to each window's processing, for
/// exercising the failure path.
pub fn bench_latency(
    model: &SvmModel,
    layout: &BodyLayout,
    traces: &[Trace],
    config: &PipelineConfig,
    slowdown: Duration,
) -> Result<LatencyReport> {
    config.validate()?;
    let extractor = FeatureExtractor::new(layout, config);
    let mut durations = Vec::new();
    for trace in traces {
        let mut completer = Completer::new(config);
        for raw in trace_segments(&trace.readings, config)? {
            let t0 = Instant::now();
            let seg = completer.process(raw, layout);
            let fv = extractor.extract(&seg)?;
            std::hint::black_box(model.predict(&fv.values, fv.layout_fingerprint)?);
            if !slowdown.is_zero() {
                std::thread::sleep(slowdown);
            }
            durations.push(t0.elapsed().as_secs_f64() * 1000.0);
        }
    }
    Ok(LatencyReport::from_durations(durations, config.window_len_ms()))
}
