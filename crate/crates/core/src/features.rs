//! Temporal and spatial features of a (completed) data segment.
//!
//! Vector layout, for `N_a` antennas and `N_t` tags:
//!
//! ```text
//! [ 7 temporal features × (antenna, tag) series, lexicographic order ]
//! [ Pearson correlation of every tag pair i < j                      ]
//! [ Pearson correlation of every antenna pair a < b                  ]
//! ```
//!
//! The temporal block per series is
//! `[mean, variance, max, min, mean crossing rate, spectral energy, spectral entropy]`.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{AntennaId, BodyLayout, DataSegment, PipelineConfig, TagId};

pub const TEMPORAL_PER_SERIES: usize = 7;
/// Bumped whenever the feature ordering or definitions change.
pub const FEATURE_ORDERING_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReadingSeries {
    pub key: (AntennaId, TagId),
    /// `(timestamp_ms, rss)` in time order.
    pub samples: Vec<(i64, f64)>,
}

impl ReadingSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout_fingerprint: u64,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Index arithmetic for the canonical vector of one layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureIndex {
    pub num_antennas: usize,
    pub num_tags: usize,
}

impl FeatureIndex {
    pub fn new(layout: &BodyLayout) -> Self {
        Self {
            num_antennas: layout.num_antennas(),
            num_tags: layout.num_tags(),
        }
    }

    pub fn temporal_len(&self) -> usize {
        TEMPORAL_PER_SERIES * self.num_antennas * self.num_tags
    }

    pub fn tag_pairs(&self) -> usize {
        pairs(self.num_tags)
    }

    pub fn antenna_pairs(&self) -> usize {
        pairs(self.num_antennas)
    }

    pub fn dim(&self) -> usize {
        self.temporal_len() + self.tag_pairs() + self.antenna_pairs()
    }

    pub fn temporal_offset(&self, antenna: AntennaId, tag: TagId) -> usize {
        TEMPORAL_PER_SERIES * (antenna * self.num_tags + tag)
    }

    /// Position of pair `(i, j)`, `i < j < n`, in lexicographic pair order.
    fn pair_offset(n: usize, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < n);
        i * (2 * n - i - 1) / 2 + (j - i - 1)
    }

    pub fn tag_pair_index(&self, i: TagId, j: TagId) -> usize {
        self.temporal_len() + Self::pair_offset(self.num_tags, i.min(j), i.max(j))
    }

    pub fn antenna_pair_index(&self, a: AntennaId, b: AntennaId) -> usize {
        self.temporal_len() + self.tag_pairs() + Self::pair_offset(self.num_antennas, a.min(b), a.max(b))
    }
}

/// Identifies the vector layout: body layout, resampling length and
/// feature ordering version.
pub fn layout_fingerprint(layout: &BodyLayout, resample_len: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(b"rfid-activity/features\0");
    h.update(FEATURE_ORDERING_VERSION.to_le_bytes());
    h.update((resample_len as u64).to_le_bytes());
    h.update(layout.to_manifest().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Splits a segment into one series per `(antenna, tag)` pair, indexed by
/// [`BodyLayout::series_index`].
pub fn split_series(seg: &DataSegment, layout: &BodyLayout) -> Vec<ReadingSeries> {
    let mut out: Vec<ReadingSeries> = crate::model::series_key_order(layout)
        .into_iter()
        .map(|key| ReadingSeries {
            key,
            samples: Vec::new(),
        })
        .collect();
    for r in &seg.readings {
        out[layout.series_index(r.antenna_id, r.tag_id)]
            .samples
            .push((r.timestamp_ms, r.rss_dbm));
    }
    for s in &mut out {
        // completed segments are already time ordered; this is a no-op then
        s.samples.sort_by_key(|&(t, _)| t);
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Fraction of consecutive pairs whose deviations from the mean have
/// strictly opposite signs. Samples equal to the mean never cross.
pub fn mean_crossing_rate(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sign = |x: f64| {
        let d = x - m;
        if d > 0.0 {
            1
        } else if d < 0.0 {
            -1
        } else {
            0
        }
    };
    let crossings = xs.windows(2).filter(|w| sign(w[0]) * sign(w[1]) < 0).count();
    crossings as f64 / (xs.len() - 1) as f64
}

/// Samples the series at `k` evenly spaced instants spanning the window
/// and the series itself (both ends inclusive), interpolating linearly and
/// holding the end values outside the sampled range. An empty series
/// yields `floor` everywhere.
pub fn resample(series: &ReadingSeries, start_ms: i64, end_ms: i64, k: usize, floor: f64) -> Vec<f64> {
    let s = &series.samples;
    match s.len() {
        0 => return vec![floor; k],
        1 => return vec![s[0].1; k],
        _ => {}
    }
    let lo = s[0].0.min(start_ms) as f64;
    let hi = s[s.len() - 1].0.max(end_ms) as f64;
    let step = if k > 1 { (hi - lo) / (k - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(k);
    let mut i = 0;
    for n in 0..k {
        let t = lo + step * n as f64;
        while i + 1 < s.len() && (s[i + 1].0 as f64) <= t {
            i += 1;
        }
        let (t0, v0) = (s[i].0 as f64, s[i].1);
        let v = if t <= t0 || i + 1 == s.len() {
            v0
        } else {
            let (t1, v1) = (s[i + 1].0 as f64, s[i + 1].1);
            v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        };
        out.push(v);
    }
    out
}

/// Power of every DFT bin of a real signal, computed with a cached plan.
#[derive(Clone)]
pub struct Spectrum {
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectrum").field("len", &self.fft.len()).finish()
    }
}

impl Spectrum {
    pub fn new(k: usize) -> Self {
        Self {
            fft: FftPlanner::new().plan_fft_forward(k),
        }
    }

    pub fn len(&self) -> usize {
        self.fft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fft.len() == 0
    }

    pub fn power(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.fft.len(), "signal length must match the plan");
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        buf.iter().map(|c| c.norm_sqr()).collect()
    }

    /// `(1/K) Σ_{k≥1} |X_k|²`, the non-DC energy.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let p = self.power(x);
        p[1..].iter().sum::<f64>() / x.len() as f64
    }

    /// Shannon entropy (nats) of the normalized non-DC power spectrum.
    pub fn entropy(&self, x: &[f64]) -> f64 {
        entropy_of(&self.power(x)[1..])
    }
}

fn entropy_of(power: &[f64]) -> f64 {
    let total: f64 = power.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    -power
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            q * q.ln()
        })
        .sum::<f64>()
}

pub fn spectral_energy(x: &[f64]) -> f64 {
    Spectrum::new(x.len()).energy(x)
}

pub fn spectral_entropy(x: &[f64]) -> f64 {
    Spectrum::new(x.len()).entropy(x)
}

/// Temporal features of a series with no readings.
pub fn empty_temporal(floor: f64) -> [f64; TEMPORAL_PER_SERIES] {
    [floor, 0.0, floor, floor, 0.0, 0.0, 0.0]
}

fn temporal_with(series: &ReadingSeries, start_ms: i64, end_ms: i64, floor: f64, spectrum: &Spectrum) -> [f64; 7] {
    if series.is_empty() {
        return empty_temporal(floor);
    }
    let raw: Vec<f64> = series.values().collect();
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let grid = resample(series, start_ms, end_ms, spectrum.len(), floor);
    let power = spectrum.power(&grid);
    let energy = power[1..].iter().sum::<f64>() / grid.len() as f64;
    [
        mean(&raw),
        population_variance(&raw),
        max,
        min,
        mean_crossing_rate(&raw),
        energy,
        entropy_of(&power[1..]),
    ]
}

pub fn temporal_features(series: &ReadingSeries, start_ms: i64, end_ms: i64, k: usize, floor: f64) -> [f64; 7] {
    temporal_with(series, start_ms, end_ms, floor, &Spectrum::new(k))
}

/// Pearson correlation; 0 when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Series of `tag` with the most samples over all antennas; lowest antenna
/// wins ties.
pub fn representative_series<'a>(series: &'a [ReadingSeries], layout: &BodyLayout, tag: TagId) -> &'a ReadingSeries {
    let mut best = &series[layout.series_index(0, tag)];
    for a in 1..layout.num_antennas() {
        let s = &series[layout.series_index(a, tag)];
        if s.len() > best.len() {
            best = s;
        }
    }
    best
}

/// Series of `antenna` with the most samples over all tags; lowest tag wins
/// ties.
pub fn representative_series_for_antenna<'a>(
    series: &'a [ReadingSeries],
    layout: &BodyLayout,
    antenna: AntennaId,
) -> &'a ReadingSeries {
    let row = &series[layout.series_index(antenna, 0)..layout.series_index(antenna, 0) + layout.num_tags()];
    let mut best = &row[0];
    for s in &row[1..] {
        if s.len() > best.len() {
            best = s;
        }
    }
    best
}

/// Time span shared by all series of a segment: its own window widened to
/// cover every reading it holds (completed readings predate the window).
pub fn segment_span(seg: &DataSegment) -> (i64, i64) {
    let start = seg
        .readings
        .first()
        .map_or(seg.window_start_ms, |r| r.timestamp_ms.min(seg.window_start_ms));
    let end = seg
        .readings
        .last()
        .map_or(seg.window_end_ms(), |r| r.timestamp_ms.max(seg.window_end_ms()));
    (start, end)
}

fn spatial_with(series: &[ReadingSeries], layout: &BodyLayout, span: (i64, i64), k: usize, floor: f64) -> Vec<f64> {
    let grid = |s: &ReadingSeries| resample(s, span.0, span.1, k, floor);
    let tags: Vec<Vec<f64>> = (0..layout.num_tags())
        .map(|t| grid(representative_series(series, layout, t)))
        .collect();
    let antennas: Vec<Vec<f64>> = (0..layout.num_antennas())
        .map(|a| grid(representative_series_for_antenna(series, layout, a)))
        .collect();
    let mut out = Vec::with_capacity(pairs(tags.len()) + pairs(antennas.len()));
    for block in [&tags, &antennas] {
        for i in 0..block.len() {
            for j in i + 1..block.len() {
                out.push(pearson(&block[i], &block[j]).expect("equal grid lengths"));
            }
        }
    }
    out
}

/// Tag-pair then antenna-pair correlations of representative series.
pub fn spatial_features(seg: &DataSegment, layout: &BodyLayout, k: usize, floor: f64) -> Vec<f64> {
    spatial_with(&split_series(seg, layout), layout, segment_span(seg), k, floor)
}

/// Turns completed segments into canonical feature vectors for one layout.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    layout: BodyLayout,
    index: FeatureIndex,
    floor: f64,
    spectrum: Spectrum,
    fingerprint: u64,
}

impl FeatureExtractor {
    pub fn new(layout: &BodyLayout, config: &PipelineConfig) -> Self {
        Self {
            layout: layout.clone(),
            index: FeatureIndex::new(layout),
            floor: config.rss_floor_dbm,
            spectrum: Spectrum::new(config.resample_len),
            fingerprint: layout_fingerprint(layout, config.resample_len),
        }
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn index(&self) -> FeatureIndex {
        self.index
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Same extractor with another empty-series sentinel, for RSS values
    /// expressed in normalized units.
    pub fn with_floor(&self, floor: f64) -> Self {
        Self { floor, ..self.clone() }
    }

    pub fn extract(&self, seg: &DataSegment) -> Result<FeatureVector> {
        for r in &seg.readings {
            if r.antenna_id >= self.layout.num_antennas() || r.tag_id >= self.layout.num_tags() {
                return Err(Error::Layout(format!(
                    "reading ({}, {}) does not fit a {}×{} layout",
                    r.antenna_id,
                    r.tag_id,
                    self.layout.num_antennas(),
                    self.layout.num_tags()
                )));
            }
        }
        let series = split_series(seg, &self.layout);
        let span = segment_span(seg);
        let mut values = Vec::with_capacity(self.dim());
        for s in &series {
            values.extend(temporal_with(s, span.0, span.1, self.floor, &self.spectrum));
        }
        values.extend(spatial_with(
            &series,
            &self.layout,
            span,
            self.spectrum.len(),
            self.floor,
        ));
        debug_assert_eq!(values.len(), self.dim());
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(FeatureVector {
            values,
            layout_fingerprint: self.fingerprint,
        })
    }
}

pub fn extract(seg: &DataSegment, config: &PipelineConfig, layout: &BodyLayout) -> Result<FeatureVector> {
    FeatureExtractor::new(layout, config).extract(seg)
}

/// One row of a feature dump.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub label: String,
    pub subject: usize,
    pub features: FeatureVector,
}

/// Writes `label,subject_id,f0,f1,…` rows after a `#fingerprint=…,dim=…`
/// line and a column header.
pub fn write_feature_csv<W: Write>(mut w: W, rows: &[FeatureRow]) -> Result<()> {
    let (fp, dim) = rows
        .first()
        .map_or((0, 0), |r| (r.features.layout_fingerprint, r.features.dim()));
    writeln!(w, "#fingerprint={fp:016x},dim={dim}")?;
    let mut header = String::from("label,subject_id");
    for i in 0..dim {
        header.push_str(&format!(",f{i}"));
    }
    writeln!(w, "{header}")?;
    for row in rows {
        if row.features.layout_fingerprint != fp || row.features.dim() != dim {
            return Err(Error::Fingerprint {
                model: fp,
                input: row.features.layout_fingerprint,
            });
        }
        let mut line = format!("{},{}", row.label, row.subject);
        for v in &row.features.values {
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_feature_csv<R: BufRead>(r: R) -> Result<Vec<FeatureRow>> {
    let mut lines = r.lines().enumerate();
    let bad = |line: usize, field: &'static str, message: &str| Error::Parse {
        line,
        field,
        message: message.to_string(),
    };
    let (_, first) = lines.next().ok_or_else(|| bad(1, "fingerprint", "empty file"))?;
    let first = first?;
    let meta = first
        .strip_prefix("#fingerprint=")
        .ok_or_else(|| bad(1, "fingerprint", "missing fingerprint line"))?;
    let (fp_hex, dim) = meta
        .split_once(",dim=")
        .ok_or_else(|| bad(1, "dim", "missing dimension"))?;
    let fingerprint = u64::from_str_radix(fp_hex, 16).map_err(|_| bad(1, "fingerprint", "not hex"))?;
    let dim: usize = dim.parse().map_err(|_| bad(1, "dim", "not an integer"))?;
    lines.next();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default().to_string();
        let subject = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(i + 1, "subject_id", "not an integer"))?;
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(i + 1, "feature", "not a number"))?;
        if values.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: values.len(),
            });
        }
        rows.push(FeatureRow {
            label,
            subject,
            features: FeatureVector {
                values,
                layout_fingerprint: fingerprint,
            },
        });
    }
    Ok(rows)
}
