//! Domain types shared by every stage of the pipeline: readings, the body
//! layout, activity labels, data segments and the pipeline configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weakest signal the reader reports, in dBm. Anything below is not a reading.
pub const RSS_FLOOR_DBM: f64 = -95.0;
/// Strongest admissible reading, in dBm.
pub const RSS_CEILING_DBM: f64 = 0.0;

pub type AntennaId = usize;
pub type TagId = usize;
pub type PartId = usize;

/// One `(timestamp, antenna, tag, RSS)` observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagReading {
    pub timestamp_ms: i64,
    pub antenna_id: AntennaId,
    pub tag_id: TagId,
    pub rss_dbm: f64,
}

impl TagReading {
    pub fn new(timestamp_ms: i64, antenna_id: AntennaId, tag_id: TagId, rss_dbm: f64) -> Self {
        Self {
            timestamp_ms,
            antenna_id,
            tag_id,
            rss_dbm,
        }
    }

    /// Ordering used inside segments: time first, then antenna, then tag.
    pub fn sort_key(&self) -> (i64, AntennaId, TagId) {
        (self.timestamp_ms, self.antenna_id, self.tag_id)
    }

    pub fn rss_in_range(rss_dbm: f64) -> bool {
        (RSS_FLOOR_DBM..=RSS_CEILING_DBM).contains(&rss_dbm)
    }
}

/// Antenna placements, tagged body parts and the tag-to-part assignment.
///
/// Tags are dense indices. Each part carries the same number of tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyLayout {
    antennas: Vec<String>,
    body_parts: Vec<String>,
    tags_per_part: usize,
    tag_to_part: Vec<PartId>,
}

impl BodyLayout {
    pub fn new(antennas: Vec<String>, body_parts: Vec<String>, tag_to_part: Vec<PartId>) -> Result<Self> {
        if antennas.is_empty() {
            return Err(Error::Layout("no antennas".into()));
        }
        if body_parts.is_empty() {
            return Err(Error::Layout("no body parts".into()));
        }
        let mut per_part = vec![0usize; body_parts.len()];
        for (tag, &part) in tag_to_part.iter().enumerate() {
            if part >= body_parts.len() {
                return Err(Error::Layout(format!("tag {tag} maps to unknown part {part}")));
            }
            per_part[part] += 1;
        }
        let tags_per_part = per_part[0];
        if tags_per_part == 0 || per_part.iter().any(|&n| n != tags_per_part) {
            return Err(Error::Layout(format!(
                "every part must carry the same non-zero number of tags, got {per_part:?}"
            )));
        }
        Ok(Self {
            antennas,
            body_parts,
            tags_per_part,
            tag_to_part,
        })
    }

    /// Parts get `tags_per_part` consecutive tag ids each, in part order.
    pub fn uniform(antennas: &[&str], body_parts: &[&str], tags_per_part: usize) -> Result<Self> {
        let tag_to_part = (0..body_parts.len())
            .flat_map(|p| std::iter::repeat_n(p, tags_per_part))
            .collect();
        Self::new(
            antennas.iter().map(|s| s.to_string()).collect(),
            body_parts.iter().map(|s| s.to_string()).collect(),
            tag_to_part,
        )
    }

    /// Four antennas, nine tagged body parts with four tags each.
    pub fn default_layout() -> Self {
        Self::uniform(
            &["back", "chest", "left_foot", "right_foot"],
            &[
                "left_wrist",
                "right_wrist",
                "left_arm",
                "right_arm",
                "body",
                "left_leg",
                "right_leg",
                "left_ankle",
                "right_ankle",
            ],
            4,
        )
        .expect("default layout is valid")
    }

    pub fn num_antennas(&self) -> usize {
        self.antennas.len()
    }

    pub fn num_tags(&self) -> usize {
        self.tag_to_part.len()
    }

    pub fn num_parts(&self) -> usize {
        self.body_parts.len()
    }

    pub fn num_series(&self) -> usize {
        self.num_antennas() * self.num_tags()
    }

    pub fn tags_per_part(&self) -> usize {
        self.tags_per_part
    }

    pub fn antennas(&self) -> &[String] {
        &self.antennas
    }

    pub fn body_parts(&self) -> &[String] {
        &self.body_parts
    }

    pub fn part_of(&self, tag: TagId) -> PartId {
        self.tag_to_part[tag]
    }

    pub fn tags_of_part(&self, part: PartId) -> impl Iterator<Item = TagId> + '_ {
        self.tag_to_part
            .iter()
            .enumerate()
            .filter(move |(_, &p)| p == part)
            .map(|(t, _)| t)
    }

    pub fn antenna_index(&self, name: &str) -> Option<AntennaId> {
        self.antennas.iter().position(|a| a == name)
    }

    pub fn part_index(&self, name: &str) -> Option<PartId> {
        self.body_parts.iter().position(|p| p == name)
    }

    /// Flat index of the `(antenna, tag)` series in [`series_key_order`].
    pub fn series_index(&self, antenna: AntennaId, tag: TagId) -> usize {
        antenna * self.num_tags() + tag
    }

    pub fn validate_reading(&self, r: &TagReading) -> Result<(), &'static str> {
        if r.antenna_id >= self.num_antennas() {
            return Err("antenna_id");
        }
        if r.tag_id >= self.num_tags() {
            return Err("tag_id");
        }
        if !TagReading::rss_in_range(r.rss_dbm) {
            return Err("rss_dbm");
        }
        Ok(())
    }

    /// Parses a layout manifest: `antenna,<index>,<name>` and
    /// `tag,<index>,<part_name>` lines. Parts are numbered in order of first
    /// appearance. Blank lines and `#` comments are skipped.
    pub fn parse_manifest(text: &str) -> Result<Self> {
        let mut antennas: BTreeMap<usize, String> = BTreeMap::new();
        let mut tags: BTreeMap<usize, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse_err = |field: &'static str, message: String| Error::Parse {
                line: i + 1,
                field,
                message,
            };
            if fields.len() != 3 {
                return Err(parse_err(
                    "record",
                    format!("expected 3 fields, found {}", fields.len()),
                ));
            }
            let index: usize = fields[1]
                .parse()
                .map_err(|_| parse_err("index", format!("`{}` is not an index", fields[1])))?;
            let name = fields[2].to_string();
            if name.is_empty() {
                return Err(parse_err("name", "empty name".into()));
            }
            let target = match fields[0] {
                "antenna" => &mut antennas,
                "tag" => &mut tags,
                other => return Err(parse_err("kind", format!("unknown record kind `{other}`"))),
            };
            if target.insert(index, name).is_some() {
                return Err(parse_err("index", format!("duplicate index {index}")));
            }
        }
        let dense = |m: &BTreeMap<usize, String>, what: &str| -> Result<Vec<String>> {
            if m.keys().copied().ne(0..m.len()) {
                return Err(Error::Layout(format!("{what} indices are not dense from 0")));
            }
            Ok(m.values().cloned().collect())
        };
        let antennas = dense(&antennas, "antenna")?;
        let tag_parts = dense(&tags, "tag")?;
        let mut parts: Vec<String> = Vec::new();
        let mut tag_to_part = Vec::with_capacity(tag_parts.len());
        for name in tag_parts {
            let idx = match parts.iter().position(|p| *p == name) {
                Some(idx) => idx,
                None => {
                    parts.push(name);
                    parts.len() - 1
                }
            };
            tag_to_part.push(idx);
        }
        Self::new(antennas, parts, tag_to_part)
    }

    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        for (i, a) in self.antennas.iter().enumerate() {
            out.push_str(&format!("antenna,{i},{a}\n"));
        }
        for (t, &p) in self.tag_to_part.iter().enumerate() {
            out.push_str(&format!("tag,{t},{}\n", self.body_parts[p]));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse_manifest(&text)
    }
}

/// All `(antenna, tag)` pairs in lexicographic order. This fixes the layout
/// of the temporal block of every feature vector.
pub fn series_key_order(layout: &BodyLayout) -> Vec<(AntennaId, TagId)> {
    (0..layout.num_antennas())
        .flat_map(|a| (0..layout.num_tags()).map(move |t| (a, t)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivityLabel {
    pub id: usize,
    pub name: String,
}

impl fmt::Display for ActivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Ordered, duplicate-free set of activity names. Ids are positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivitySet(Vec<String>);

impl ActivitySet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains(',') {
                return Err(Error::config("activities", format!("invalid activity name `{n}`")));
            }
            if names[..i].contains(n) {
                return Err(Error::config("activities", format!("duplicate activity `{n}`")));
            }
        }
        Ok(Self(names))
    }

    /// The eight studied activities.
    pub fn default_set() -> Self {
        Self::new([
            "sitting",
            "standing",
            "walking",
            "cleaning_window",
            "cleaning_table",
            "vacuuming",
            "riding_bike",
            "stairs",
        ])
        .expect("default activity names are valid")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    pub fn label(&self, id: usize) -> ActivityLabel {
        ActivityLabel {
            id,
            name: self.0[id].clone(),
        }
    }

    pub fn lookup(&self, name: &str) -> Result<ActivityLabel> {
        self.id_of(name)
            .map(|id| self.label(id))
            .ok_or_else(|| Error::UnknownActivity(name.to_string()))
    }
}

/// Readings of one tumbling window, possibly extended with historical
/// readings by data completion.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataSegment {
    pub window_start_ms: i64,
    pub window_len_ms: i64,
    /// Time-ordered; completed readings (older) come first.
    pub readings: Vec<TagReading>,
    /// `(source window start, readings appended)` for every history window
    /// merged in, in the order they were merged.
    pub completed_from: Vec<(i64, usize)>,
}

impl DataSegment {
    pub fn empty(window_start_ms: i64, window_len_ms: i64) -> Self {
        Self {
            window_start_ms,
            window_len_ms,
            readings: Vec::new(),
            completed_from: Vec::new(),
        }
    }

    pub fn window_end_ms(&self) -> i64 {
        self.window_start_ms + self.window_len_ms
    }

    pub fn is_completed(&self) -> bool {
        !self.completed_from.is_empty()
    }

    /// Readings that fall inside the segment's own window.
    pub fn native_readings(&self) -> impl Iterator<Item = &TagReading> {
        let (lo, hi) = (self.window_start_ms, self.window_end_ms());
        self.readings
            .iter()
            .filter(move |r| r.timestamp_ms >= lo && r.timestamp_ms < hi)
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }
}

/// Per `(antenna, tag)` reading counts of a segment, row-major by antenna.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    num_antennas: usize,
    num_tags: usize,
    counts: Vec<u32>,
}

impl CountMatrix {
    pub fn zeros(num_antennas: usize, num_tags: usize) -> Self {
        Self {
            num_antennas,
            num_tags,
            counts: vec![0; num_antennas * num_tags],
        }
    }

    pub fn get(&self, antenna: AntennaId, tag: TagId) -> u32 {
        self.counts[antenna * self.num_tags + tag]
    }

    pub fn increment(&mut self, antenna: AntennaId, tag: TagId) {
        self.counts[antenna * self.num_tags + tag] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.num_antennas, self.num_tags)
    }
}

/// Segmentation, completion and featurization parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Window length L in seconds.
    pub window_len_s: f64,
    pub history_span_s: f64,
    pub overlap_threshold: f64,
    /// Resampling grid length for the frequency-domain features.
    pub resample_len: usize,
    pub rss_floor_dbm: f64,
    pub normalize_per_subject: bool,
    /// Run data completion before feature extraction.
    pub completion: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_len_s: 5.0,
            history_span_s: 20.0,
            overlap_threshold: 0.7,
            resample_len: 32,
            rss_floor_dbm: RSS_FLOOR_DBM,
            normalize_per_subject: false,
            completion: true,
        }
    }
}

impl PipelineConfig {
    pub fn with_window(mut self, window_len_s: f64) -> Self {
        self.window_len_s = window_len_s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_len_s.is_finite() && self.window_len_s > 0.0) || self.window_len_ms() < 1 {
            return Err(Error::config("window_len_s", "must be positive"));
        }
        if !(self.history_span_s.is_finite() && self.history_span_s >= self.window_len_s) {
            return Err(Error::config("history_span_s", "must be at least window_len_s"));
        }
        if !(0.0..=1.0).contains(&self.overlap_threshold) {
            return Err(Error::config("overlap_threshold", "must lie in [0, 1]"));
        }
        if self.resample_len < 2 {
            return Err(Error::config("resample_len", "must be at least 2"));
        }
        if !self.rss_floor_dbm.is_finite() {
            return Err(Error::config("rss_floor_dbm", "must be finite"));
        }
        Ok(())
    }

    pub fn window_len_ms(&self) -> i64 {
        (self.window_len_s * 1000.0).round() as i64
    }

    pub fn history_span_ms(&self) -> i64 {
        (self.history_span_s * 1000.0).round() as i64
    }

    /// Number of past windows kept for completion: floor(span / L).
    pub fn history_capacity(&self) -> usize {
        (self.history_span_ms() / self.window_len_ms().max(1)) as usize
    }
}
