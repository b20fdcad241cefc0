//! Multi-class RBF support vector machine: z-score scaling, an SMO solver
//! for the binary soft-margin dual, one-vs-one voting and a binary model
//! file format.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ActivityLabel, ActivitySet, PipelineConfig};

/// Per-dimension z-score statistics of a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalerStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn fit_scaler<V: AsRef<[f64]>>(rows: &[V]) -> Result<ScalerStats> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Training("cannot fit a scaler on an empty set".into()))?;
    let dim = first.as_ref().len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        let r = r.as_ref();
        if r.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: r.len(),
            });
        }
        for (m, &x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    let n = rows.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((v, &x), &m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
    Ok(ScalerStats { mean, std })
}

/// Z-scores one vector; zero-variance dimensions map to 0.
pub fn apply_scaler(stats: &ScalerStats, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != stats.dim() {
        return Err(Error::Dimension {
            expected: stats.dim(),
            actual: x.len(),
        });
    }
    Ok(x.iter()
        .zip(&stats.mean)
        .zip(&stats.std)
        .map(|((&v, &m), &s)| if s > 0.0 { (v - m) / s } else { 0.0 })
        .collect())
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(-gamma · ‖x − y‖²)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok((-gamma * squared_distance(x, y)).exp())
}

/// RBF Gram matrix of the rows of `x`, via `‖a‖² + ‖b‖² − 2a·b`.
pub fn rbf_gram(x: &Array2<f64>, gamma: f64) -> Array2<f64> {
    let norms: Vec<f64> = x.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let mut g = x.dot(&x.t());
    let n = g.nrows();
    for i in 0..n {
        for j in 0..n {
            let d = if i == j {
                0.0
            } else {
                (norms[i] + norms[j] - 2.0 * g[[i, j]]).max(0.0)
            };
            g[[i, j]] = (-gamma * d).exp();
        }
    }
    g
}

/// Largest problem size for which the full Gram matrix is cached.
pub const FULL_GRAM_LIMIT: usize = 2000;

enum KernelCache<'a> {
    Full(Array2<f64>),
    /// Rows computed on demand from the points.
    Rows {
        points: &'a [&'a [f64]],
        gamma: f64,
        cached: Vec<(usize, Vec<f64>)>,
    },
}

impl<'a> KernelCache<'a> {
    fn new(points: &'a [&'a [f64]], gamma: f64) -> Self {
        if points.len() <= FULL_GRAM_LIMIT {
            let dim = points.first().map_or(0, |p| p.len());
            let mut x = Array2::zeros((points.len(), dim));
            for (mut row, p) in x.axis_iter_mut(Axis(0)).zip(points) {
                row.assign(&ArrayView1::from(*p));
            }
            KernelCache::Full(rbf_gram(&x, gamma))
        } else {
            KernelCache::Rows {
                points,
                gamma,
                cached: Vec::with_capacity(2),
            }
        }
    }

    /// Row `i` of the kernel matrix. Only the two most recent rows are
    /// kept in on-demand mode (the current working pair).
    fn row(&mut self, i: usize) -> &[f64] {
        match self {
            KernelCache::Full(g) => g.row(i).to_slice().expect("standard layout"),
            KernelCache::Rows { points, gamma, cached } => {
                if let Some(pos) = cached.iter().position(|(k, _)| *k == i) {
                    return &cached[pos].1;
                }
                let row: Vec<f64> = points
                    .iter()
                    .map(|p| (-*gamma * squared_distance(points[i], p)).exp())
                    .collect();
                if cached.len() == 2 {
                    cached.remove(0);
                }
                cached.push((i, row));
                &cached.last().expect("just pushed").1
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoParams {
    pub c: f64,
    pub gamma: f64,
    /// Stop once the maximal KKT violation `m(α) − M(α)` is at most this.
    pub tol: f64,
    /// Hard cap on iterations; `None` means `max(10_000_000, 100·n)`.
    pub max_iter: Option<usize>,
}

/// Raw output of the dual solver.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision function offset: `f(x) = Σ α_i y_i K(x_i, x) + bias`.
    pub bias: f64,
    /// `Σ α − ½ αᵀQα`, the maximized dual objective.
    pub objective: f64,
    /// Maximal KKT violation at exit.
    pub kkt_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `max Σα − ½ Σ α_i α_j y_i y_j K(x_i, x_j)` subject to
/// `0 ≤ α ≤ C`, `Σ α_i y_i = 0` by sequential minimal optimization with
/// second-order working set selection. `y` holds ±1.
pub fn smo_solve(points: &[&[f64]], y: &[f64], params: &SmoParams) -> Result<DualSolution> {
    let n = points.len();
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: y.len(),
        });
    }
    if !(params.c > 0.0 && params.gamma > 0.0 && params.tol > 0.0) {
        return Err(Error::Training("C, gamma and tol must be positive".into()));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) || y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Training("binary problem needs both +1 and -1 labels".into()));
    }
    for p in points {
        if let Some(i) = p.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
    }
    let c = params.c;
    let max_iter = params.max_iter.unwrap_or_else(|| (100 * n).max(10_000_000));
    let mut kernel = KernelCache::new(points, params.gamma);
    let mut alpha = vec![0.0; n];
    // gradient of ½αᵀQα − eᵀα
    let mut grad = vec![-1.0; n];
    let tau = 1e-12;
    let mut iterations = 0;
    let mut stall = 0;
    let mut converged = false;
    let mut gap;

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    loop {
        // i: maximal violator among I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            if in_low(alpha[t], y[t]) {
                gmin = gmin.min(-y[t] * grad[t]);
            }
        }
        gap = gmax - gmin;
        if i_sel == usize::MAX || gap <= params.tol {
            converged = true;
            break;
        }
        if iterations >= max_iter || stall > 10 * n {
            break;
        }
        let i = i_sel;
        let ki: Vec<f64> = kernel.row(i).to_vec();
        // j: second-order choice among I_low
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b > 0.0 {
                let a = (2.0 - 2.0 * ki[t]).max(tau);
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j_sel = t;
                }
            }
        }
        if j_sel == usize::MAX {
            converged = true;
            break;
        }
        let j = j_sel;
        let kj: Vec<f64> = kernel.row(j).to_vec();
        iterations += 1;

        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let quad = (2.0 - 2.0 * ki[j]).max(tau);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        if dai.abs() < 1e-14 && daj.abs() < 1e-14 {
            stall += 1;
        } else {
            stall = 0;
        }
        // Q_it = y_i y_t K_it
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * dai + y[j] * kj[t] * daj);
        }
    }

    // offset from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    // Σα − ½αᵀQα with Qα = grad + 1
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (1.0 - g)).sum::<f64>();
    Ok(DualSolution {
        alpha,
        bias: -rho,
        objective,
        kkt_gap: gap,
        iterations,
        converged,
    })
}

/// Evaluates `Σα − ½ αᵀQα` directly.
pub fn dual_objective(points: &[&[f64]], y: &[f64], alpha: &[f64], gamma: f64) -> f64 {
    let n = points.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if alpha[j] == 0.0 {
                continue;
            }
            let k = (-gamma * squared_distance(points[i], points[j])).exp();
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k;
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// One-vs-one classifier for classes `(positive, negative)`. Support
/// vectors live in the owning model's pool.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryClassifier {
    pub positive: usize,
    pub negative: usize,
    /// Indices into the model's support vector pool.
    pub support: Vec<usize>,
    /// `α_i · y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl BinaryClassifier {
    fn decision(&self, kernel_values: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(&s, &c)| c * kernel_values[s])
            .sum::<f64>()
            + self.bias
    }
}

/// A standalone binary classifier with its own support vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub solution: DualSolution,
}

impl BinaryModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coef)
            .map(|(sv, &c)| c * (-self.gamma * squared_distance(sv, x)).exp())
            .sum::<f64>()
            + self.bias
    }

    /// `true` for the positive class.
    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }
}

/// Trains a binary RBF SVM on unscaled points, positives against negatives.
pub fn smo_train_binary(positive: &[&[f64]], negative: &[&[f64]], params: &SmoParams) -> Result<BinaryModel> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::Training("both classes need at least one instance".into()));
    }
    let points: Vec<&[f64]> = positive.iter().chain(negative).copied().collect();
    let y: Vec<f64> = std::iter::repeat_n(1.0, positive.len())
        .chain(std::iter::repeat_n(-1.0, negative.len()))
        .collect();
    let sol = smo_solve(&points, &y, params)?;
    let mut support_vectors = Vec::new();
    let mut coef = Vec::new();
    for (t, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(points[t].to_vec());
            coef.push(a * y[t]);
        }
    }
    Ok(BinaryModel {
        support_vectors,
        coef,
        bias: sol.bias,
        gamma: params.gamma,
        solution: sol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub c: f64,
    /// `None` picks `1 / (d · mean per-dimension variance)` of the scaled
    /// training features.
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_iter: Option<usize>,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            c: 10.0,
            gamma: None,
            tol: 1e-3,
            max_iter: None,
        }
    }
}

/// A labelled training vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub values: Vec<f64>,
    pub label: usize,
    pub fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub classes: ActivitySet,
    pub classifiers: Vec<BinaryClassifier>,
    /// Scaled support vectors shared by all classifiers.
    pub support_vectors: Vec<Vec<f64>>,
    pub gamma: f64,
    pub c: f64,
    pub scaler: ScalerStats,
    pub fingerprint: u64,
    /// Pipeline the training vectors were produced with, when known.
    pub pipeline: Option<PipelineConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: ActivityLabel,
    pub votes: Vec<u32>,
}

impl Prediction {
    pub fn top_votes(&self) -> u32 {
        self.votes[self.label.id]
    }
}

/// Default gamma: `1 / (d · mean variance)` over scaled dimensions.
pub fn default_gamma(scaled: &[Vec<f64>]) -> f64 {
    let stats = fit_scaler(scaled).expect("non-empty");
    let d = stats.dim().max(1) as f64;
    let mean_var = stats.std.iter().map(|s| s * s).sum::<f64>() / d;
    if mean_var > 0.0 {
        1.0 / (d * mean_var)
    } else {
        1.0 / d
    }
}

/// Fits the scaler on all instances and one binary SVM per class pair.
pub fn train(instances: &[LabeledVector], classes: &ActivitySet, params: &TrainParams) -> Result<SvmModel> {
    let k = classes.len();
    if k < 2 {
        return Err(Error::Training("need at least two classes".into()));
    }
    let first = instances
        .first()
        .ok_or_else(|| Error::Training("no training instances".into()))?;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, inst) in instances.iter().enumerate() {
        if inst.fingerprint != first.fingerprint {
            return Err(Error::Fingerprint {
                model: first.fingerprint,
                input: inst.fingerprint,
            });
        }
        if inst.values.len() != first.values.len() {
            return Err(Error::Dimension {
                expected: first.values.len(),
                actual: inst.values.len(),
            });
        }
        if let Some(j) = inst.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(j));
        }
        if inst.label >= k {
            return Err(Error::Training(format!("label {} outside the {k} classes", inst.label)));
        }
        per_class[inst.label].push(i);
    }
    if let Some(empty) = per_class.iter().position(Vec::is_empty) {
        return Err(Error::Training(format!(
            "class `{}` has no training instances",
            classes.names()[empty]
        )));
    }
    let rows: Vec<&[f64]> = instances.iter().map(|i| i.values.as_slice()).collect();
    let scaler = fit_scaler(&rows)?;
    let scaled: Vec<Vec<f64>> = rows.iter().map(|r| apply_scaler(&scaler, r)).collect::<Result<_>>()?;
    let gamma = params.gamma.unwrap_or_else(|| default_gamma(&scaled));
    let smo = SmoParams {
        c: params.c,
        gamma,
        tol: params.tol,
        max_iter: params.max_iter,
    };

    let mut pool_index: Vec<Option<usize>> = vec![None; instances.len()];
    let mut support_vectors = Vec::new();
    let mut classifiers = Vec::with_capacity(k * (k - 1) / 2);
    for p in 0..k {
        for q in p + 1..k {
            let members: Vec<usize> = per_class[p].iter().chain(&per_class[q]).copied().collect();
            let points: Vec<&[f64]> = members.iter().map(|&i| scaled[i].as_slice()).collect();
            let y: Vec<f64> = members
                .iter()
                .map(|&i| if instances[i].label == p { 1.0 } else { -1.0 })
                .collect();
            let sol = smo_solve(&points, &y, &smo)?;
            let mut support = Vec::new();
            let mut coef = Vec::new();
            for (t, &a) in sol.alpha.iter().enumerate() {
                if a > 0.0 {
                    let src = members[t];
                    let slot = *pool_index[src].get_or_insert_with(|| {
                        support_vectors.push(scaled[src].clone());
                        support_vectors.len() - 1
                    });
                    support.push(slot);
                    coef.push(a * y[t]);
                }
            }
            classifiers.push(BinaryClassifier {
                positive: p,
                negative: q,
                support,
                coef,
                bias: sol.bias,
            });
        }
    }
    Ok(SvmModel {
        classes: classes.clone(),
        classifiers,
        support_vectors,
        gamma,
        c: params.c,
        scaler,
        fingerprint: first.fingerprint,
        pipeline: None,
    })
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    /// Pairwise decision values, one per classifier, for a raw vector.
    pub fn decision_values(&self, values: &[f64], fingerprint: u64) -> Result<Vec<f64>> {
        if fingerprint != self.fingerprint {
            return Err(Error::Fingerprint {
                model: self.fingerprint,
                input: fingerprint,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let x = apply_scaler(&self.scaler, values)?;
        let kv: Vec<f64> = self
            .support_vectors
            .iter()
            .map(|sv| (-self.gamma * squared_distance(sv, &x)).exp())
            .collect();
        Ok(self.classifiers.iter().map(|c| c.decision(&kv)).collect())
    }

    /// Majority vote over all class pairs. Ties go to the class with the
    /// largest summed |decision| over the contests it won, then to the
    /// lowest class id.
    pub fn predict(&self, values: &[f64], fingerprint: u64) -> Result<Prediction> {
        let dec = self.decision_values(values, fingerprint)?;
        let k = self.classes.len();
        let mut votes = vec![0u32; k];
        let mut strength = vec![0.0f64; k];
        for (c, &d) in self.classifiers.iter().zip(&dec) {
            let winner = if d > 0.0 { c.positive } else { c.negative };
            votes[winner] += 1;
            strength[winner] += d.abs();
        }
        let mut best = 0;
        for cls in 1..k {
            if votes[cls] > votes[best] || (votes[cls] == votes[best] && strength[cls] > strength[best]) {
                best = cls;
            }
        }
        Ok(Prediction {
            label: self.classes.label(best),
            votes,
        })
    }
}

const MAGIC: &[u8; 8] = b"RFIDSVM\0";
pub const FORMAT_VERSION: u32 = 1;
const VERSION_OFFSET: usize = 8;
const CHECKSUM_LEN: usize = 32;

struct Encoder(Vec<u8>);

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("length fits in u32"));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corrupt("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("invalid UTF-8".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

impl SvmModel {
    /// Serializes to the versioned little-endian container:
    /// magic, version, fingerprint, classes, hyperparameters, pipeline,
    /// scaler, support vector pool, per-pair classifiers, SHA-256 trailer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder(Vec::new());
        e.0.extend_from_slice(MAGIC);
        e.u32(FORMAT_VERSION);
        e.u64(self.fingerprint);
        e.len(self.classes.len());
        self.classes.names().iter().for_each(|n| e.str(n));
        e.f64(self.gamma);
        e.f64(self.c);
        match &self.pipeline {
            None => e.u8(0),
            Some(p) => {
                e.u8(1);
                e.f64(p.window_len_s);
                e.f64(p.history_span_s);
                e.f64(p.overlap_threshold);
                e.len(p.resample_len);
                e.f64(p.rss_floor_dbm);
                e.u8(p.normalize_per_subject as u8);
                e.u8(p.completion as u8);
            }
        }
        e.len(self.dim());
        e.f64s(&self.scaler.mean);
        e.f64s(&self.scaler.std);
        e.len(self.support_vectors.len());
        self.support_vectors.iter().for_each(|sv| e.f64s(sv));
        e.len(self.classifiers.len());
        for c in &self.classifiers {
            e.len(c.positive);
            e.len(c.negative);
            e.f64(c.bias);
            e.len(c.support.len());
            for (&s, &a) in c.support.iter().zip(&c.coef) {
                e.len(s);
                e.f64(a);
            }
        }
        let digest = Sha256::digest(&e.0);
        e.0.extend_from_slice(&digest);
        e.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < VERSION_OFFSET + 4 || &buf[..VERSION_OFFSET] != MAGIC {
            return Err(Error::Corrupt("not a model file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(buf[VERSION_OFFSET..VERSION_OFFSET + 4].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if buf.len() < VERSION_OFFSET + 4 + CHECKSUM_LEN {
            return Err(Error::Corrupt("checksum missing".into()));
        }
        let (body, trailer) = buf.split_at(buf.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let mut d = Decoder {
            buf: body,
            pos: VERSION_OFFSET + 4,
        };
        let fingerprint = d.u64()?;
        let n_classes = d.len()?;
        let names = (0..n_classes).map(|_| d.str()).collect::<Result<Vec<_>>>()?;
        let classes = ActivitySet::new(names).map_err(|e| Error::Corrupt(e.to_string()))?;
        let gamma = d.f64()?;
        let c = d.f64()?;
        let pipeline = match d.u8()? {
            0 => None,
            1 => Some(PipelineConfig {
                window_len_s: d.f64()?,
                history_span_s: d.f64()?,
                overlap_threshold: d.f64()?,
                resample_len: d.len()?,
                rss_floor_dbm: d.f64()?,
                normalize_per_subject: d.u8()? != 0,
                completion: d.u8()? != 0,
            }),
            _ => return Err(Error::Corrupt("bad pipeline flag".into())),
        };
        let dim = d.len()?;
        let scaler = ScalerStats {
            mean: d.f64s(dim)?,
            std: d.f64s(dim)?,
        };
        let n_sv = d.len()?;
        let support_vectors = (0..n_sv).map(|_| d.f64s(dim)).collect::<Result<Vec<_>>>()?;
        let n_clf = d.len()?;
        let mut classifiers = Vec::with_capacity(n_clf);
        for _ in 0..n_clf {
            let positive = d.len()?;
            let negative = d.len()?;
            let bias = d.f64()?;
            let m = d.len()?;
            let mut support = Vec::with_capacity(m);
            let mut coef = Vec::with_capacity(m);
            for _ in 0..m {
                let s = d.len()?;
                if s >= n_sv {
                    return Err(Error::Corrupt("support index out of range".into()));
                }
                support.push(s);
                coef.push(d.f64()?);
            }
            if positive >= n_classes || negative >= n_classes {
                return Err(Error::Corrupt("class index out of range".into()));
            }
            classifiers.push(BinaryClassifier {
                positive,
                negative,
                support,
                coef,
                bias,
            });
        }
        if d.pos != body.len() {
            return Err(Error::Corrupt("trailing bytes".into()));
        }
        if classifiers.len() != n_classes * (n_classes.saturating_sub(1)) / 2 {
            return Err(Error::Corrupt("classifier count does not match class count".into()));
        }
        Ok(SvmModel {
            classes,
            classifiers,
            support_vectors,
            gamma,
            c,
            scaler,
            fingerprint,
            pipeline,
        })
    }
}

pub fn save_model(model: &SvmModel, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(&model.to_bytes()).map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SvmModel> {
    let buf = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    SvmModel::from_bytes(&buf)
}
