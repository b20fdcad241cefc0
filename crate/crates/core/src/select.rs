//! Wrapper search for the smallest antenna and tagged-part sets that keep
//! cross-validated accuracy above a threshold.

use std::fmt;

use crate::error::{Error, Result};
use crate::eval::{kfold_cv, InstanceSet};
use crate::features::{empty_temporal, FeatureIndex, TEMPORAL_PER_SERIES};
use crate::model::{AntennaId, BodyLayout};
use crate::svm::TrainParams;

/// What the second search dimension counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    /// Whole body parts; every tag of a kept part is kept.
    #[default]
    Part,
    /// Individual tags.
    Tag,
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "part" => Ok(Granularity::Part),
            "tag" => Ok(Granularity::Tag),
            _ => Err(Error::config(
                "granularity",
                format!("expected `part` or `tag`, got `{s}`"),
            )),
        }
    }
}

/// Kept antennas and kept parts (or tags, under [`Granularity::Tag`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetSpec {
    pub antennas: Vec<AntennaId>,
    pub parts: Vec<usize>,
    pub granularity: Granularity,
}

impl SubsetSpec {
    pub fn new(antennas: Vec<AntennaId>, parts: Vec<usize>) -> Self {
        Self {
            antennas,
            parts,
            granularity: Granularity::Part,
        }
    }

    pub fn full(layout: &BodyLayout, granularity: Granularity) -> Self {
        Self {
            antennas: (0..layout.num_antennas()).collect(),
            parts: (0..units(layout, granularity)).collect(),
            granularity,
        }
    }

    pub fn validate(&self, layout: &BodyLayout) -> Result<()> {
        if self.antennas.is_empty() || self.parts.is_empty() {
            return Err(Error::config("subset", "antenna and part sets must be non-empty"));
        }
        if let Some(a) = self.antennas.iter().find(|&&a| a >= layout.num_antennas()) {
            return Err(Error::config("subset.antennas", format!("antenna {a} out of range")));
        }
        let n = units(layout, self.granularity);
        if let Some(p) = self.parts.iter().find(|&&p| p >= n) {
            return Err(Error::config("subset.parts", format!("id {p} out of range 0..{n}")));
        }
        Ok(())
    }

    /// Mask of kept tags.
    pub fn kept_tags(&self, layout: &BodyLayout) -> Vec<bool> {
        let mut keep = vec![false; layout.num_tags()];
        match self.granularity {
            Granularity::Part => {
                for &p in &self.parts {
                    for t in layout.tags_of_part(p) {
                        keep[t] = true;
                    }
                }
            }
            Granularity::Tag => {
                for &t in &self.parts {
                    keep[t] = true;
                }
            }
        }
        keep
    }

    pub fn kept_antennas(&self, layout: &BodyLayout) -> Vec<bool> {
        let mut keep = vec![false; layout.num_antennas()];
        for &a in &self.antennas {
            keep[a] = true;
        }
        keep
    }

    /// `n_ant,n_parts,antennas,parts,accuracy` report line.
    pub fn report_line(&self, layout: &BodyLayout, accuracy: f64) -> String {
        let antennas: Vec<&str> = self.antennas.iter().map(|&a| layout.antennas()[a].as_str()).collect();
        let parts: Vec<String> = match self.granularity {
            Granularity::Part => self.parts.iter().map(|&p| layout.body_parts()[p].clone()).collect(),
            Granularity::Tag => self.parts.iter().map(|t| format!("tag{t}")).collect(),
        };
        format!(
            "{},{},{},{},{accuracy:.4}",
            self.antennas.len(),
            self.parts.len(),
            antennas.join("+"),
            parts.join("+")
        )
    }
}

impl fmt::Display for SubsetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "antennas {:?} parts {:?}", self.antennas, self.parts)
    }
}

fn units(layout: &BodyLayout, granularity: Granularity) -> usize {
    match granularity {
        Granularity::Part => layout.num_parts(),
        Granularity::Tag => layout.num_tags(),
    }
}

/// Replaces everything outside `spec` in one full-layout vector: absent
/// series get the empty-series sentinel, correlations touching a dropped
/// tag or antenna become 0.
pub fn mask_vector(values: &mut [f64], floor: f64, keep_antenna: &[bool], keep_tag: &[bool]) {
    let idx = FeatureIndex {
        num_antennas: keep_antenna.len(),
        num_tags: keep_tag.len(),
    };
    let sentinel = empty_temporal(floor);
    for (a, &ka) in keep_antenna.iter().enumerate() {
        for (t, &kt) in keep_tag.iter().enumerate() {
            if !(ka && kt) {
                let o = idx.temporal_offset(a, t);
                values[o..o + TEMPORAL_PER_SERIES].copy_from_slice(&sentinel);
            }
        }
    }
    for i in 0..keep_tag.len() {
        for j in i + 1..keep_tag.len() {
            if !(keep_tag[i] && keep_tag[j]) {
                values[idx.tag_pair_index(i, j)] = 0.0;
            }
        }
    }
    for a in 0..keep_antenna.len() {
        for b in a + 1..keep_antenna.len() {
            if !(keep_antenna[a] && keep_antenna[b]) {
                values[idx.antenna_pair_index(a, b)] = 0.0;
            }
        }
    }
}

/// Masks every instance to `spec`; the dimension is unchanged.
pub fn mask_dataset(set: &InstanceSet, spec: &SubsetSpec) -> Result<InstanceSet> {
    spec.validate(&set.layout)?;
    let keep_a = spec.kept_antennas(&set.layout);
    let keep_t = spec.kept_tags(&set.layout);
    let mut out = set.clone();
    for inst in &mut out.instances {
        mask_vector(&mut inst.values, inst.floor, &keep_a, &keep_t);
    }
    Ok(out)
}

/// Stratified k-fold accuracy of the SVM on the masked instances.
pub fn subset_accuracy(set: &InstanceSet, spec: &SubsetSpec, k: usize, seed: u64, params: &TrainParams) -> Result<f64> {
    Ok(kfold_cv(&mask_dataset(set, spec)?, k, seed, params)?.accuracy)
}

/// All `r`-element subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if r > n {
        return out;
    }
    let mut c: Vec<usize> = (0..r).collect();
    loop {
        out.push(c.clone());
        let Some(i) = (0..r).rev().find(|&i| c[i] != i + n - r) else {
            return out;
        };
        c[i] += 1;
        for j in i + 1..r {
            c[j] = c[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub rho: f64,
    /// `(n_ant, n_parts)` of the returned subsets, `None` when no subset
    /// reached `rho`.
    pub level: Option<(usize, usize)>,
    pub subsets: Vec<(SubsetSpec, f64)>,
    /// Best subset seen, reported whether or not it qualified.
    pub best: Option<(SubsetSpec, f64)>,
    pub evaluations: usize,
    pub protocol: String,
}

impl SelectionResult {
    pub fn report(&self, layout: &BodyLayout) -> String {
        let mut s = String::from("n_ant,n_parts,antennas,parts,accuracy\n");
        for (spec, acc) in &self.subsets {
            s.push_str(&spec.report_line(layout, *acc));
            s.push('\n');
        }
        s
    }
}

/// Searches antenna counts in the outer loop and part counts in the inner
/// loop; the first level with any subset reaching `rho` is returned with
/// all of its qualifying subsets. `on_level` sees `(n_ant, n_parts,
/// evaluations so far)` after each level.
pub fn select_min(
    set: &InstanceSet,
    rho: f64,
    granularity: Granularity,
    k: usize,
    seed: u64,
    params: &TrainParams,
    mut on_level: impl FnMut(usize, usize, usize),
) -> Result<SelectionResult> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::config("rho", "must lie in [0, 1]"));
    }
    let layout = &set.layout;
    let n_units = units(layout, granularity);
    let mut evaluations = 0;
    let mut best: Option<(SubsetSpec, f64)> = None;
    for n_ant in 1..=layout.num_antennas() {
        for n_parts in 1..=n_units {
            let mut qualifying = Vec::new();
            for antennas in combinations(layout.num_antennas(), n_ant) {
                for parts in combinations(n_units, n_parts) {
                    let spec = SubsetSpec {
                        antennas: antennas.clone(),
                        parts,
                        granularity,
                    };
                    let acc = subset_accuracy(set, &spec, k, seed, params)?;
                    evaluations += 1;
                    if best.as_ref().is_none_or(|(_, b)| acc > *b) {
                        best = Some((spec.clone(), acc));
                    }
                    if acc >= rho {
                        qualifying.push((spec, acc));
                    }
                }
            }
            on_level(n_ant, n_parts, evaluations);
            if !qualifying.is_empty() {
                return Ok(SelectionResult {
                    rho,
                    level: Some((n_ant, n_parts)),
                    subsets: qualifying,
                    best,
                    evaluations,
                    protocol: protocol(k, seed, granularity),
                });
            }
        }
    }
    Ok(SelectionResult {
        rho,
        level: None,
        subsets: Vec::new(),
        best,
        evaluations,
        protocol: protocol(k, seed, granularity),
    })
}

fn protocol(k: usize, seed: u64, granularity: Granularity) -> String {
    format!("stratified {k}-fold cv, seed {seed}, {granularity:?} granularity, masked features")
}
