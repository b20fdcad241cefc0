//! Synthetic wearable-RFID traces.
//!
//! Each activity is described per `(antenna, body part)` by a geometric
//! pose (tag-antenna distance and angle), a sinusoidal motion term, an
//! optional blockage process and a miss probability. The reader cycles
//! through the antennas with a fixed dwell and issues inventory attempts as
//! a Poisson process; each attempt reads one in-range tag of the active
//! antenna.

use std::f64::consts::TAU;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActivitySet, AntennaId, BodyLayout, PartId, TagId, TagReading, RSS_CEILING_DBM, RSS_FLOOR_DBM};
use crate::stream::{format_reading, read_records};

/// The shipped default scenario.
pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockageKind {
    Body,
    Arm,
    Leg,
}

impl BlockageKind {
    /// Attenuation when the line of sight crosses this body part.
    pub fn delta_db(self) -> f64 {
        match self {
            BlockageKind::Body => 20.0,
            BlockageKind::Arm | BlockageKind::Leg => 10.0,
        }
    }

    /// Below this transmit power the part absorbs the signal completely.
    pub fn full_block_below_dbm(self) -> f64 {
        match self {
            BlockageKind::Body => 20.0,
            BlockageKind::Arm => 12.5,
            BlockageKind::Leg => 15.0,
        }
    }
}

/// Received-signal model shared by all activities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RssModel {
    pub power_dbm: f64,
    /// Loss at 1 m with the tag facing the antenna.
    pub reference_loss_db: f64,
    pub path_loss_exponent: f64,
    /// Extra loss at a 90° tag-antenna angle, scaled by sin²θ.
    pub angle_loss_db: f64,
    /// Extra loss for a tag facing directly away from the antenna.
    pub facing_loss_db: f64,
    pub noise_sigma_db: f64,
    pub detect_floor_dbm: f64,
}

impl Default for RssModel {
    fn default() -> Self {
        Self {
            power_dbm: 30.0,
            reference_loss_db: 75.0,
            path_loss_exponent: 2.2,
            angle_loss_db: 12.0,
            facing_loss_db: 8.0,
            noise_sigma_db: 1.5,
            detect_floor_dbm: RSS_FLOOR_DBM,
        }
    }
}

impl RssModel {
    /// Mean received strength for a tag at `distance_m` and `angle_deg`,
    /// before motion, facing, blockage and noise.
    pub fn base_rss(&self, distance_m: f64, angle_deg: f64) -> f64 {
        let d = distance_m.max(0.05);
        let s = angle_deg.to_radians().sin();
        self.power_dbm
            - self.reference_loss_db
            - 10.0 * self.path_loss_exponent * d.log10()
            - self.angle_loss_db * s * s
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=30.0).contains(&self.power_dbm) {
            return Err(Error::config("rss.power_dbm", "must lie in [0, 30]"));
        }
        if self.noise_sigma_db < 0.0 || !self.noise_sigma_db.is_finite() {
            return Err(Error::config("rss.noise_sigma_db", "must be non-negative"));
        }
        if self.path_loss_exponent <= 0.0 {
            return Err(Error::config("rss.path_loss_exponent", "must be positive"));
        }
        Ok(())
    }
}

/// RSS process of one body part as seen by one antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct PartSignal {
    pub base_rss_dbm: f64,
    pub amplitude_db: f64,
    pub frequency_hz: f64,
    /// Motion phase in cycles.
    pub phase: f64,
    pub blockage: Option<BlockageKind>,
    /// Fraction of time the line of sight is blocked. Periodic motions
    /// block during a fixed slice of each cycle, static ones at random.
    pub blockage_rate: f64,
    pub miss_probability: f64,
}

impl PartSignal {
    pub fn steady(base_rss_dbm: f64) -> Self {
        Self {
            base_rss_dbm,
            amplitude_db: 0.0,
            frequency_hz: 0.0,
            phase: 0.0,
            blockage: None,
            blockage_rate: 0.0,
            miss_probability: 0.0,
        }
    }

    fn blocked<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> bool {
        if self.blockage.is_none() || self.blockage_rate <= 0.0 {
            return false;
        }
        if self.blockage_rate >= 1.0 {
            return true;
        }
        if self.frequency_hz > 0.0 {
            // blocked for the slice of each cycle around the motion peak
            let cyc = (self.frequency_hz * t + self.phase).rem_euclid(1.0);
            let dist = (cyc - 0.25).rem_euclid(1.0).min((0.25 - cyc).rem_euclid(1.0));
            dist < self.blockage_rate / 2.0
        } else {
            rng.random::<f64>() < self.blockage_rate
        }
    }
}

/// Per `(antenna, part)` signals plus per `(antenna, tag)` facing offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityProfile {
    pub name: String,
    num_parts: usize,
    num_tags: usize,
    signals: Vec<PartSignal>,
    tag_offset_db: Vec<f64>,
    tag_to_part: Vec<PartId>,
    /// Maximum random phase shift per part and trace, in cycles.
    pub phase_jitter: f64,
}

impl ActivityProfile {
    /// Profile where every `(antenna, part)` carries `signal` and no tag
    /// has a facing offset.
    pub fn uniform(name: &str, layout: &BodyLayout, signal: PartSignal) -> Self {
        Self {
            name: name.to_string(),
            num_parts: layout.num_parts(),
            num_tags: layout.num_tags(),
            signals: vec![signal; layout.num_antennas() * layout.num_parts()],
            tag_offset_db: vec![0.0; layout.num_antennas() * layout.num_tags()],
            tag_to_part: (0..layout.num_tags()).map(|t| layout.part_of(t)).collect(),
            phase_jitter: 0.0,
        }
    }

    pub fn signal(&self, antenna: AntennaId, part: PartId) -> &PartSignal {
        &self.signals[antenna * self.num_parts + part]
    }

    pub fn signal_mut(&mut self, antenna: AntennaId, part: PartId) -> &mut PartSignal {
        &mut self.signals[antenna * self.num_parts + part]
    }

    pub fn tag_offset_db(&self, antenna: AntennaId, tag: TagId) -> f64 {
        self.tag_offset_db[antenna * self.num_tags + tag]
    }

    pub fn num_antennas(&self) -> usize {
        self.signals.len() / self.num_parts
    }

    /// Applies a subject's body differences. Absorption scales every loss
    /// relative to the transmit power `power_dbm`; the offset shifts all
    /// levels; the motion scale stretches the modulation.
    pub fn for_subject(&self, subject: &SubjectParams, power_dbm: f64) -> Self {
        let mut p = self.clone();
        let k = subject.absorption;
        for s in &mut p.signals {
            s.base_rss_dbm = power_dbm - k * (power_dbm - s.base_rss_dbm) + subject.offset_db;
            s.amplitude_db *= subject.motion_scale * k;
        }
        for o in &mut p.tag_offset_db {
            *o *= k;
        }
        p
    }

    /// Fixes random per-part phase shifts for one trace.
    fn realize<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let mut p = self.clone();
        if self.phase_jitter > 0.0 {
            let shifts: Vec<f64> = (0..self.num_parts)
                .map(|_| rng.random_range(-self.phase_jitter..=self.phase_jitter))
                .collect();
            for (i, s) in p.signals.iter_mut().enumerate() {
                s.phase += shifts[i % self.num_parts];
            }
        }
        p
    }

    /// Strongest mean level this tag can reach at this antenna, ignoring
    /// noise and blockage.
    fn peak_level(&self, antenna: AntennaId, tag: TagId) -> f64 {
        let s = self.signal(antenna, self.tag_to_part[tag]);
        s.base_rss_dbm + self.tag_offset_db(antenna, tag) + s.amplitude_db.abs()
    }
}

/// One RSS draw for `tag` read by `antenna` at time `t` seconds, or `None`
/// when the tag is not detected.
pub fn rss_sample<R: Rng + ?Sized>(
    model: &RssModel,
    profile: &ActivityProfile,
    antenna: AntennaId,
    tag: TagId,
    t: f64,
    rng: &mut R,
) -> Option<f64> {
    let sig = profile.signal(antenna, profile.tag_to_part[tag]);
    let blocked = sig.blocked(t, rng);
    let mut mu = sig.base_rss_dbm + profile.tag_offset_db(antenna, tag);
    if sig.amplitude_db != 0.0 {
        mu += sig.amplitude_db * (TAU * (sig.frequency_hz * t + sig.phase)).sin();
    }
    if blocked {
        let kind = sig.blockage.expect("blocked implies a kind");
        if model.power_dbm < kind.full_block_below_dbm() {
            return None;
        }
        mu -= kind.delta_db();
    }
    if model.noise_sigma_db > 0.0 {
        mu += Normal::new(0.0, model.noise_sigma_db).expect("valid sigma").sample(rng);
    }
    if mu < model.detect_floor_dbm {
        return None;
    }
    if sig.miss_probability > 0.0 && rng.random::<f64>() < sig.miss_probability {
        return None;
    }
    Some(mu.clamp(RSS_FLOOR_DBM, RSS_CEILING_DBM))
}

/// Single-antenna inventory: antennas take turns for their dwell time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DwellSchedule {
    /// Dwell per slot of `order`, seconds. A single value applies to all.
    pub dwell_s: Vec<f64>,
    pub order: Vec<AntennaId>,
    /// Inventory attempts per second over all tags.
    pub readings_per_second: f64,
    /// Where in the cycle the trace starts, seconds.
    pub start_offset_s: f64,
}

impl Default for DwellSchedule {
    fn default() -> Self {
        Self {
            dwell_s: vec![2.0],
            order: vec![0, 1, 2, 3],
            readings_per_second: 50.0,
            start_offset_s: 0.0,
        }
    }
}

impl DwellSchedule {
    fn dwell(&self, slot: usize) -> f64 {
        if self.dwell_s.len() == 1 {
            self.dwell_s[0]
        } else {
            self.dwell_s[slot]
        }
    }

    pub fn cycle_s(&self) -> f64 {
        (0..self.order.len()).map(|i| self.dwell(i)).sum()
    }

    /// Antenna active at trace time `t`.
    pub fn active_antenna(&self, t: f64) -> AntennaId {
        let mut x = (t + self.start_offset_s).rem_euclid(self.cycle_s());
        for (slot, &a) in self.order.iter().enumerate() {
            let d = self.dwell(slot);
            if x < d {
                return a;
            }
            x -= d;
        }
        *self.order.last().expect("non-empty order")
    }

    pub fn validate(&self, num_antennas: usize) -> Result<()> {
        if self.order.is_empty() || self.order.iter().any(|&a| a >= num_antennas) {
            return Err(Error::config("dwell.order", "must list valid antenna ids"));
        }
        if self.dwell_s.len() != 1 && self.dwell_s.len() != self.order.len() {
            return Err(Error::config("dwell.dwell_s", "needs one value or one per slot"));
        }
        if self.dwell_s.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::config("dwell.dwell_s", "must be positive"));
        }
        if !(self.readings_per_second > 0.0 && self.readings_per_second.is_finite()) {
            return Err(Error::config("dwell.readings_per_second", "must be positive"));
        }
        Ok(())
    }
}

/// Per-subject body differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectParams {
    pub offset_db: f64,
    pub motion_scale: f64,
    /// Multiplier of all propagation and body losses.
    pub absorption: f64,
}

impl SubjectParams {
    pub const NEUTRAL: SubjectParams = SubjectParams {
        offset_db: 0.0,
        motion_scale: 1.0,
        absorption: 1.0,
    };
}

/// A labelled reading trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub activity: String,
    pub subject: usize,
    pub readings: Vec<TagReading>,
}

/// Reading resolution reported by the reader, dB.
pub const RSS_RESOLUTION_DB: f64 = 0.1;

// exact decimal tenths print without float residue
fn quantize(rss: f64) -> f64 {
    (rss * 10.0).round() / 10.0
}

/// Simulates `duration_s` seconds of one activity. Only the dwelling
/// antenna reads; each inventory attempt targets a uniformly chosen tag
/// within that antenna's range.
pub fn simulate_activity(
    model: &RssModel,
    profile: &ActivityProfile,
    duration_s: f64,
    schedule: &DwellSchedule,
    seed: u64,
) -> Result<Vec<TagReading>> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::config("duration_s", "must be positive"));
    }
    schedule.validate(profile.num_antennas())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profile = profile.realize(&mut rng);
    let floor_margin = 3.0 * model.noise_sigma_db;
    let in_range: Vec<Vec<TagId>> = (0..profile.num_antennas())
        .map(|a| {
            (0..profile.num_tags)
                .filter(|&t| profile.peak_level(a, t) + floor_margin >= model.detect_floor_dbm)
                .collect()
        })
        .collect();
    let gaps = Exp::new(schedule.readings_per_second).expect("positive rate");
    let mut out = Vec::with_capacity((duration_s * schedule.readings_per_second * 1.1) as usize);
    let mut t = gaps.sample(&mut rng);
    while t < duration_s {
        let a = schedule.active_antenna(t);
        let tags = &in_range[a];
        if !tags.is_empty() {
            let tag = tags[rng.random_range(0..tags.len())];
            if let Some(rss) = rss_sample(model, &profile, a, tag, t, &mut rng) {
                out.push(TagReading::new((t * 1000.0).floor() as i64, a, tag, quantize(rss)));
            }
        }
        t += gaps.sample(&mut rng);
    }
    out.sort_by_key(TagReading::sort_key);
    Ok(out)
}

/// One group of body parts sharing pose and motion in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartGroup {
    pub parts: Vec<String>,
    /// Tag-antenna distance per antenna, metres.
    pub distance_m: Vec<f64>,
    /// Tag-antenna angle per antenna, degrees. Defaults to 0.
    #[serde(default)]
    pub angle_deg: Option<Vec<f64>>,
    #[serde(default)]
    pub amplitude_db: f64,
    /// Per-antenna multiplier of `amplitude_db`. Defaults to 1.
    #[serde(default)]
    pub motion_gain: Option<Vec<f64>>,
    #[serde(default)]
    pub frequency_hz: f64,
    /// Motion phase in cycles: one value, or one per part.
    #[serde(default)]
    pub phase: Vec<f64>,
    #[serde(default)]
    pub blockage: Option<BlockageSpec>,
    #[serde(default)]
    pub miss_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockageSpec {
    pub kind: BlockageKind,
    pub rate: f64,
    /// Antennas whose line of sight is affected; all when absent.
    #[serde(default)]
    pub antennas: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivitySpec {
    pub name: String,
    pub groups: Vec<PartGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubjectSpec {
    pub count: usize,
    /// Offsets are drawn uniformly from ±this many dB.
    pub max_offset_db: f64,
    pub motion_scale_range: [f64; 2],
    pub absorption_range: [f64; 2],
}

impl Default for SubjectSpec {
    fn default() -> Self {
        Self {
            count: 4,
            max_offset_db: 5.0,
            motion_scale_range: [0.8, 1.2],
            absorption_range: [1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSpec {
    pub antennas: Vec<String>,
    pub parts: Vec<String>,
    pub tags_per_part: usize,
    /// Direction each antenna looks at the body from, degrees
    /// (0 = front, 90 = left).
    pub antenna_azimuth_deg: Vec<f64>,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        let l = BodyLayout::default_layout();
        Self {
            antennas: l.antennas().to_vec(),
            parts: l.body_parts().to_vec(),
            tags_per_part: l.tags_per_part(),
            antenna_azimuth_deg: vec![180.0, 0.0, 90.0, 270.0],
        }
    }
}

/// Everything needed to generate a labelled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub duration_s: f64,
    pub instances_per_class: usize,
    pub miss_probability: f64,
    pub phase_jitter: f64,
    /// Start each trace at a random point of the antenna cycle.
    pub random_cycle_phase: bool,
    pub layout: LayoutSpec,
    pub rss: RssModel,
    pub dwell: DwellSchedule,
    pub subjects: SubjectSpec,
    pub activities: Vec<ActivitySpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            instances_per_class: 8,
            miss_probability: 0.0,
            phase_jitter: 0.0,
            random_cycle_phase: true,
            layout: LayoutSpec::default(),
            rss: RssModel::default(),
            dwell: DwellSchedule::default(),
            subjects: SubjectSpec::default(),
            activities: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::config("scenario", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }

    pub fn default_scenario() -> Self {
        Self::parse(DEFAULT_SCENARIO).expect("shipped scenario is valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn body_layout(&self) -> Result<BodyLayout> {
        let antennas: Vec<&str> = self.layout.antennas.iter().map(String::as_str).collect();
        let parts: Vec<&str> = self.layout.parts.iter().map(String::as_str).collect();
        BodyLayout::uniform(&antennas, &parts, self.layout.tags_per_part)
    }

    pub fn activity_set(&self) -> Result<ActivitySet> {
        ActivitySet::new(self.activities.iter().map(|a| a.name.clone()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::config("duration_s", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.miss_probability) {
            return Err(Error::config("miss_probability", "must lie in [0, 1]"));
        }
        if self.phase_jitter < 0.0 {
            return Err(Error::config("phase_jitter", "must be non-negative"));
        }
        let layout = self.body_layout()?;
        if self.layout.antenna_azimuth_deg.len() != layout.num_antennas() {
            return Err(Error::config(
                "layout.antenna_azimuth_deg",
                "needs one value per antenna",
            ));
        }
        self.rss.validate()?;
        self.dwell.validate(layout.num_antennas())?;
        if self.subjects.count == 0 {
            return Err(Error::config("subjects.count", "must be at least 1"));
        }
        let [lo, hi] = self.subjects.motion_scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config("subjects.motion_scale_range", "needs 0 < low <= high"));
        }
        let [lo, hi] = self.subjects.absorption_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config("subjects.absorption_range", "needs 0 < low <= high"));
        }
        if self.subjects.max_offset_db < 0.0 {
            return Err(Error::config("subjects.max_offset_db", "must be non-negative"));
        }
        if self.activities.is_empty() {
            return Err(Error::config("activities", "at least one activity is required"));
        }
        self.activity_set()?;
        for a in &self.activities {
            self.profile(&a.name)?;
        }
        Ok(())
    }

    /// Builds the RSS profile of one activity for this scenario's layout
    /// and transmit power.
    pub fn profile(&self, activity: &str) -> Result<ActivityProfile> {
        let spec = self
            .activities
            .iter()
            .find(|a| a.name == activity)
            .ok_or_else(|| Error::UnknownActivity(activity.to_string()))?;
        let layout = self.body_layout()?;
        let na = layout.num_antennas();
        let field = |g: usize, f: &str| format!("activities.{}.groups[{g}].{f}", spec.name);
        let mut assigned: Vec<Option<PartSignal>> = vec![None; na * layout.num_parts()];
        for (gi, g) in spec.groups.iter().enumerate() {
            if g.distance_m.len() != na || g.distance_m.iter().any(|&d| d.is_nan() || d <= 0.0) {
                return Err(Error::config(
                    field(gi, "distance_m"),
                    "needs one positive distance per antenna",
                ));
            }
            let angles = g.angle_deg.clone().unwrap_or_else(|| vec![0.0; na]);
            if angles.len() != na {
                return Err(Error::config(field(gi, "angle_deg"), "needs one angle per antenna"));
            }
            let gains = g.motion_gain.clone().unwrap_or_else(|| vec![1.0; na]);
            if gains.len() != na || gains.iter().any(|&x| x.is_nan() || x < 0.0) {
                return Err(Error::config(
                    field(gi, "motion_gain"),
                    "needs one non-negative gain per antenna",
                ));
            }
            if g.frequency_hz.is_nan() || g.frequency_hz < 0.0 {
                return Err(Error::config(field(gi, "frequency_hz"), "must be non-negative"));
            }
            if !g.phase.is_empty() && g.phase.len() != 1 && g.phase.len() != g.parts.len() {
                return Err(Error::config(field(gi, "phase"), "needs one value or one per part"));
            }
            let miss = g.miss_probability.unwrap_or(self.miss_probability);
            if !(0.0..=1.0).contains(&miss) {
                return Err(Error::config(field(gi, "miss_probability"), "must lie in [0, 1]"));
            }
            let blocked_antennas: Vec<bool> = match &g.blockage {
                None => vec![false; na],
                Some(b) => {
                    if !(0.0..=1.0).contains(&b.rate) {
                        return Err(Error::config(field(gi, "blockage.rate"), "must lie in [0, 1]"));
                    }
                    match &b.antennas {
                        None => vec![true; na],
                        Some(names) => {
                            let mut mask = vec![false; na];
                            for n in names {
                                let a = layout.antenna_index(n).ok_or_else(|| {
                                    Error::config(field(gi, "blockage.antennas"), format!("unknown antenna `{n}`"))
                                })?;
                                mask[a] = true;
                            }
                            mask
                        }
                    }
                }
            };
            for (pi, part_name) in g.parts.iter().enumerate() {
                let part = layout
                    .part_index(part_name)
                    .ok_or_else(|| Error::config(field(gi, "parts"), format!("unknown part `{part_name}`")))?;
                let phase = match g.phase.len() {
                    0 => 0.0,
                    1 => g.phase[0],
                    _ => g.phase[pi],
                };
                for a in 0..na {
                    let slot = &mut assigned[a * layout.num_parts() + part];
                    if slot.is_some() {
                        return Err(Error::config(
                            field(gi, "parts"),
                            format!("part `{part_name}` listed twice"),
                        ));
                    }
                    let blockage = g.blockage.as_ref().filter(|_| blocked_antennas[a]);
                    *slot = Some(PartSignal {
                        base_rss_dbm: self.rss.base_rss(g.distance_m[a], angles[a]),
                        amplitude_db: g.amplitude_db * gains[a],
                        frequency_hz: g.frequency_hz,
                        phase,
                        blockage: blockage.map(|b| b.kind),
                        blockage_rate: blockage.map_or(0.0, |b| b.rate),
                        miss_probability: miss,
                    });
                }
            }
        }
        let mut signals = Vec::with_capacity(assigned.len());
        for (i, s) in assigned.into_iter().enumerate() {
            let part = &layout.body_parts()[i % layout.num_parts()];
            signals.push(s.ok_or_else(|| {
                Error::config(
                    format!("activities.{}", spec.name),
                    format!("part `{part}` has no group"),
                )
            })?);
        }
        // tags around a part face evenly spaced directions, front first
        let tpp = layout.tags_per_part();
        let mut tag_offset_db = Vec::with_capacity(na * layout.num_tags());
        for a in 0..na {
            let azimuth = self.layout.antenna_azimuth_deg[a];
            for t in 0..layout.num_tags() {
                let k = layout
                    .tags_of_part(layout.part_of(t))
                    .position(|x| x == t)
                    .expect("tag in part");
                let facing = 360.0 * k as f64 / tpp as f64;
                let off = (facing - azimuth).to_radians().cos();
                tag_offset_db.push(-self.rss.facing_loss_db * (1.0 - off) / 2.0);
            }
        }
        Ok(ActivityProfile {
            name: spec.name.clone(),
            num_parts: layout.num_parts(),
            num_tags: layout.num_tags(),
            signals,
            tag_offset_db,
            tag_to_part: (0..layout.num_tags()).map(|t| layout.part_of(t)).collect(),
            phase_jitter: self.phase_jitter,
        })
    }

    /// Subject parameters, drawn once per subject from the master seed.
    pub fn subject_params(&self, subject: usize, master_seed: u64) -> SubjectParams {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, u64::MAX - subject as u64));
        let m = self.subjects.max_offset_db;
        let mut draw = |[lo, hi]: [f64; 2]| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let offset_db = draw([-m, m]);
        let motion_scale = draw(self.subjects.motion_scale_range);
        let absorption = draw(self.subjects.absorption_range);
        SubjectParams {
            offset_db,
            motion_scale,
            absorption,
        }
    }
}

/// SplitMix64 mix of a master seed and a stream index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub activity: String,
    pub subject: usize,
    pub seed: u64,
}

/// A labelled set of traces with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub layout: BodyLayout,
    pub activities: ActivitySet,
    pub traces: Vec<Trace>,
    pub manifest: Vec<ManifestEntry>,
}

impl Dataset {
    pub fn num_subjects(&self) -> usize {
        self.traces.iter().map(|t| t.subject + 1).max().unwrap_or(0)
    }
}

/// Simulates every `(activity, subject, instance)` of the scenario.
/// Instance seeds derive from `(seed, instance index)`, so the result does
/// not depend on generation order.
pub fn generate_dataset(scenario: &Scenario, seed: u64) -> Result<Dataset> {
    scenario.validate()?;
    let layout = scenario.body_layout()?;
    let activities = scenario.activity_set()?;
    let subjects: Vec<SubjectParams> = (0..scenario.subjects.count)
        .map(|s| scenario.subject_params(s, seed))
        .collect();
    let mut traces = Vec::new();
    let mut manifest = Vec::new();
    let mut index = 0u64;
    for name in activities.names() {
        let profile = scenario.profile(name)?;
        for (subject, params) in subjects.iter().enumerate() {
            let subject_profile = profile.for_subject(params, scenario.rss.power_dbm);
            for _ in 0..scenario.instances_per_class {
                let instance_seed = derive_seed(seed, index);
                let mut schedule = scenario.dwell.clone();
                if scenario.random_cycle_phase {
                    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed ^ 0x5A5A_5A5A);
                    schedule.start_offset_s = rng.random_range(0.0..schedule.cycle_s());
                }
                let readings = simulate_activity(
                    &scenario.rss,
                    &subject_profile,
                    scenario.duration_s,
                    &schedule,
                    instance_seed,
                )?;
                manifest.push(ManifestEntry {
                    file: format!("traces/{index:04}_{name}_s{subject}.csv"),
                    activity: name.clone(),
                    subject,
                    seed: instance_seed,
                });
                traces.push(Trace {
                    activity: name.clone(),
                    subject,
                    readings,
                });
                index += 1;
            }
        }
    }
    Ok(Dataset {
        layout,
        activities,
        traces,
        manifest,
    })
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const LAYOUT_FILE: &str = "layout.txt";
pub const ACTIVITIES_FILE: &str = "activities.txt";

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(contents).map_err(|e| Error::file(path, e))
}

/// Writes trace files, `manifest.csv`, the layout manifest and the
/// activity list under `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let traces_dir = dir.join("traces");
    fs::create_dir_all(&traces_dir).map_err(|e| Error::file(&traces_dir, e))?;
    let mut manifest = String::from("file,activity,subject,seed\n");
    for (entry, trace) in dataset.manifest.iter().zip(&dataset.traces) {
        let mut body = String::with_capacity(trace.readings.len() * 24);
        for r in &trace.readings {
            body.push_str(&format_reading(r, Some(&trace.activity)));
            body.push('\n');
        }
        write_file(&dir.join(&entry.file), body.as_bytes())?;
        manifest.push_str(&format!(
            "{},{},{},{}\n",
            entry.file, entry.activity, entry.subject, entry.seed
        ));
    }
    write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    write_file(&dir.join(LAYOUT_FILE), dataset.layout.to_manifest().as_bytes())?;
    let mut acts = dataset.activities.names().join("\n");
    acts.push('\n');
    write_file(&dir.join(ACTIVITIES_FILE), acts.as_bytes())
}

/// Loads a dataset written by [`write_dataset`]. The activity list is
/// optional; without it activities are ordered by first appearance.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let layout = BodyLayout::load(&dir.join(LAYOUT_FILE))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let f = fs::File::open(&manifest_path).map_err(|e| Error::file(&manifest_path, e))?;
    let mut manifest = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let err = |field: &'static str| Error::Parse {
            line: i + 1,
            field,
            message: format!("bad manifest row `{line}`"),
        };
        if fields.len() != 4 {
            return Err(err("record"));
        }
        manifest.push(ManifestEntry {
            file: fields[0].to_string(),
            activity: fields[1].to_string(),
            subject: fields[2].parse().map_err(|_| err("subject"))?,
            seed: fields[3].parse().map_err(|_| err("seed"))?,
        });
    }
    let acts_path = dir.join(ACTIVITIES_FILE);
    let activities = if acts_path.exists() {
        let text = fs::read_to_string(&acts_path).map_err(|e| Error::file(&acts_path, e))?;
        ActivitySet::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))?
    } else {
        let mut names: Vec<String> = Vec::new();
        for e in &manifest {
            if !names.contains(&e.activity) {
                names.push(e.activity.clone());
            }
        }
        ActivitySet::new(names)?
    };
    let mut traces = Vec::with_capacity(manifest.len());
    for e in &manifest {
        activities.lookup(&e.activity)?;
        let path: PathBuf = dir.join(&e.file);
        let f = fs::File::open(&path).map_err(|err| Error::file(&path, err))?;
        let readings = read_records(BufReader::new(f), &layout)?
            .into_iter()
            .map(|r| r.reading)
            .collect();
        traces.push(Trace {
            activity: e.activity.clone(),
            subject: e.subject,
            readings,
        });
    }
    Ok(Dataset {
        layout,
        activities,
        traces,
        manifest,
    })
}
