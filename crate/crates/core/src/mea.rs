//! Multi-electrode array model.
//!
//! Electrodes are plain indices. They are organised into labelled groups:
//! `A*`/`B*` groups record motor output, `C*`/`D*` groups deliver sensory and
//! feedback stimulation. A [`StimulusCommand`] is a fully parameterised
//! waveform aimed at a set of electrodes; [`render_waveform`] turns it into a
//! sampled current trace and [`shannon_entropy`] scores how predictable that
//! trace is.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of one physical electrode on the array.
pub type ElectrodeId = u32;

/// Rendering resolution used for stimulus waveforms (ms).
pub const RENDER_DT_MS: f64 = 0.1;

/// Histogram resolution used when comparing stimulus entropies.
pub const ENTROPY_BINS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeaError {
    #[error("electrode group {0} has no electrodes")]
    EmptyGroup(String),
    #[error("electrode {electrode} listed twice in group {group}")]
    DuplicateElectrode { group: String, electrode: ElectrodeId },
    #[error("group {group} must have role {expected:?}")]
    RoleMismatch { group: String, expected: GroupRole },
    #[error("electrode {electrode} belongs to both {first} and {second}")]
    OverlappingGroups {
        electrode: ElectrodeId,
        first: String,
        second: String,
    },
    #[error("unknown electrode group {0}")]
    UnknownGroup(String),
    #[error("invalid stimulus: {0}")]
    InvalidStimulus(String),
    #[error("render step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("render step {dt_ms} ms does not divide duration {duration_ms} ms")]
    DtDoesNotDivide { dt_ms: f64, duration_ms: f64 },
    #[error("render step {dt_ms} ms is coarser than the pulse width {pulse_width_ms} ms")]
    DtCoarserThanPulse { dt_ms: f64, pulse_width_ms: f64 },
    #[error("entropy needs at least 2 samples and 2 bins (got {samples} samples, {bins} bins)")]
    EntropyInput { samples: usize, bins: usize },
    #[error("group {0} is a stimulation group and cannot be recorded from")]
    NotRecording(String),
    #[error("electrode {0} is not a stimulation electrode")]
    NotStimulating(ElectrodeId),
    #[error("recording window must be positive, got {0}")]
    NonPositiveWindow(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupRole {
    Record,
    Stimulate,
}

impl GroupRole {
    /// Role implied by a group label, if the label uses the A–D convention.
    pub fn implied_by(label: &str) -> Option<GroupRole> {
        match label.chars().next() {
            Some('A') | Some('B') => Some(GroupRole::Record),
            Some('C') | Some('D') => Some(GroupRole::Stimulate),
            _ => None,
        }
    }
}

/// A labelled, ordered set of electrodes with a fixed role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGroup")]
pub struct ElectrodeGroup {
    id: String,
    role: GroupRole,
    electrodes: Vec<ElectrodeId>,
}

#[derive(Deserialize)]
struct RawGroup {
    id: String,
    role: GroupRole,
    electrodes: Vec<ElectrodeId>,
}

impl TryFrom<RawGroup> for ElectrodeGroup {
    type Error = MeaError;
    fn try_from(raw: RawGroup) -> Result<Self, MeaError> {
        ElectrodeGroup::new(raw.id, raw.role, raw.electrodes)
    }
}

impl ElectrodeGroup {
    pub fn new(
        id: impl Into<String>,
        role: GroupRole,
        electrodes: Vec<ElectrodeId>,
    ) -> Result<Self, MeaError> {
        let id = id.into();
        if electrodes.is_empty() {
            return Err(MeaError::EmptyGroup(id));
        }
        let mut seen = BTreeSet::new();
        for &e in &electrodes {
            if !seen.insert(e) {
                return Err(MeaError::DuplicateElectrode { group: id, electrode: e });
            }
        }
        if let Some(expected) = GroupRole::implied_by(&id) {
            if expected != role {
                return Err(MeaError::RoleMismatch { group: id, expected });
            }
        }
        Ok(Self { id, role, electrodes })
    }

    /// Group whose role follows from an A–D label.
    pub fn labelled(id: &str, electrodes: Vec<ElectrodeId>) -> Result<Self, MeaError> {
        let role = GroupRole::implied_by(id).ok_or_else(|| MeaError::UnknownGroup(id.into()))?;
        Self::new(id, role, electrodes)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn role(&self) -> GroupRole {
        self.role
    }

    pub fn electrodes(&self) -> &[ElectrodeId] {
        &self.electrodes
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }

    pub fn contains(&self, electrode: ElectrodeId) -> bool {
        self.electrodes.contains(&electrode)
    }
}

/// The full set of electrode groups wired to one substrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ElectrodeGroup>", into = "Vec<ElectrodeGroup>")]
pub struct MeaLayout {
    groups: Vec<ElectrodeGroup>,
}

impl TryFrom<Vec<ElectrodeGroup>> for MeaLayout {
    type Error = MeaError;
    fn try_from(groups: Vec<ElectrodeGroup>) -> Result<Self, MeaError> {
        MeaLayout::new(groups)
    }
}

impl From<MeaLayout> for Vec<ElectrodeGroup> {
    fn from(layout: MeaLayout) -> Self {
        layout.groups
    }
}

impl MeaLayout {
    pub fn new(groups: Vec<ElectrodeGroup>) -> Result<Self, MeaError> {
        let mut owner: std::collections::BTreeMap<ElectrodeId, &str> = Default::default();
        for g in &groups {
            for &e in g.electrodes() {
                if let Some(first) = owner.insert(e, g.id()) {
                    return Err(MeaError::OverlappingGroups {
                        electrode: e,
                        first: first.to_string(),
                        second: g.id().to_string(),
                    });
                }
            }
        }
        Ok(Self { groups })
    }

    /// Layout for tasks with `positions` discrete locations per sensory group.
    ///
    /// D occupies electrodes `1..=positions`, C the next `positions`, then A
    /// and B take two recording electrodes each. Electrode 0 is left unused
    /// as the reference. With 8 positions this puts prey position 6 on
    /// electrode 14 and predator position 2 on electrode 2.
    pub fn standard(positions: u32) -> Self {
        let n = positions.max(1);
        let d: Vec<_> = (1..=n).collect();
        let c: Vec<_> = (n + 1..=2 * n).collect();
        let a = vec![2 * n + 1, 2 * n + 2];
        let b = vec![2 * n + 3, 2 * n + 4];
        Self::new(vec![
            ElectrodeGroup::labelled("A", a).expect("non-empty"),
            ElectrodeGroup::labelled("B", b).expect("non-empty"),
            ElectrodeGroup::labelled("C", c).expect("non-empty"),
            ElectrodeGroup::labelled("D", d).expect("non-empty"),
        ])
        .expect("disjoint by construction")
    }

    /// Layout with four motor groups (`A_up`, `A_down`, `B_left`, `B_right`)
    /// for 4-way movement tasks.
    pub fn four_way(positions: u32) -> Self {
        let n = positions.max(1);
        let d: Vec<_> = (1..=n).collect();
        let c: Vec<_> = (n + 1..=2 * n).collect();
        let base = 2 * n + 1;
        Self::new(vec![
            ElectrodeGroup::labelled("A_up", vec![base, base + 1]).expect("non-empty"),
            ElectrodeGroup::labelled("A_down", vec![base + 2, base + 3]).expect("non-empty"),
            ElectrodeGroup::labelled("B_left", vec![base + 4, base + 5]).expect("non-empty"),
            ElectrodeGroup::labelled("B_right", vec![base + 6, base + 7]).expect("non-empty"),
            ElectrodeGroup::labelled("C", c).expect("non-empty"),
            ElectrodeGroup::labelled("D", d).expect("non-empty"),
        ])
        .expect("disjoint by construction")
    }

    pub fn groups(&self) -> &[ElectrodeGroup] {
        &self.groups
    }

    pub fn group(&self, id: &str) -> Result<&ElectrodeGroup, MeaError> {
        self.groups
            .iter()
            .find(|g| g.id() == id)
            .ok_or_else(|| MeaError::UnknownGroup(id.to_string()))
    }

    pub fn with_role(&self, role: GroupRole) -> impl Iterator<Item = &ElectrodeGroup> {
        self.groups.iter().filter(move |g| g.role() == role)
    }

    /// All stimulation groups in D, C order merged into one group named `CD`.
    /// Sensory codes that span "C and D" address this combined group.
    pub fn sensory_union(&self) -> Result<ElectrodeGroup, MeaError> {
        let d = self.group("D")?;
        let c = self.group("C")?;
        let electrodes = d.electrodes().iter().chain(c.electrodes()).copied().collect();
        ElectrodeGroup::new("CD", GroupRole::Stimulate, electrodes)
    }

    pub fn stimulation_electrodes(&self) -> Vec<ElectrodeId> {
        self.with_role(GroupRole::Stimulate)
            .flat_map(|g| g.electrodes().iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Waveform {
    Sinusoid,
    WhiteNoise,
    PulseTrain,
    SinglePulse,
}

/// Charge-balanced pulse shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PulseShape {
    #[serde(rename = "bi-phasic")]
    BiPhasic,
    #[serde(rename = "tri-phasic")]
    TriPhasic,
}

impl PulseShape {
    /// Relative amplitude of each phase; every phase lasts one pulse width.
    pub fn phases(self) -> &'static [f64] {
        match self {
            PulseShape::BiPhasic => &[1.0, -1.0],
            PulseShape::TriPhasic => &[0.5, -1.0, 0.5],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PulseShape::BiPhasic => "bi-phasic",
            PulseShape::TriPhasic => "tri-phasic",
        }
    }
}

/// A validated stimulus aimed at a set of electrodes.
///
/// Field names in the JSON form follow the protocol document schema
/// (`amplitude_uA`, `pulse_duration_us`, `frequency_hz`, `shape`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCommand", into = "RawCommand")]
pub struct StimulusCommand {
    targets: Vec<ElectrodeId>,
    waveform: Waveform,
    shape: Option<PulseShape>,
    amplitude_ua: f64,
    frequency_hz: f64,
    pulse_width_us: f64,
    duration_ms: f64,
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCommand {
    targets: Vec<ElectrodeId>,
    waveform: Waveform,
    #[serde(default)]
    shape: Option<PulseShape>,
    #[serde(rename = "amplitude_uA")]
    amplitude_ua: f64,
    #[serde(default)]
    frequency_hz: f64,
    #[serde(default)]
    pulse_duration_us: f64,
    duration_ms: f64,
    #[serde(default)]
    seed: Option<u64>,
}

impl TryFrom<RawCommand> for StimulusCommand {
    type Error = MeaError;
    fn try_from(r: RawCommand) -> Result<Self, MeaError> {
        let cmd = StimulusCommand {
            targets: r.targets,
            waveform: r.waveform,
            shape: r.shape,
            amplitude_ua: r.amplitude_ua,
            frequency_hz: r.frequency_hz,
            pulse_width_us: r.pulse_duration_us,
            duration_ms: r.duration_ms,
            seed: r.seed,
        };
        cmd.validated()
    }
}

impl From<StimulusCommand> for RawCommand {
    fn from(c: StimulusCommand) -> Self {
        RawCommand {
            targets: c.targets,
            waveform: c.waveform,
            shape: c.shape,
            amplitude_ua: c.amplitude_ua,
            frequency_hz: c.frequency_hz,
            pulse_duration_us: c.pulse_width_us,
            duration_ms: c.duration_ms,
            seed: c.seed,
        }
    }
}

fn target_set(targets: impl IntoIterator<Item = ElectrodeId>) -> Vec<ElectrodeId> {
    targets.into_iter().collect::<BTreeSet<_>>().into_iter().collect()
}

impl StimulusCommand {
    pub fn sinusoid(
        targets: impl IntoIterator<Item = ElectrodeId>,
        amplitude_ua: f64,
        frequency_hz: f64,
        duration_ms: f64,
    ) -> Result<Self, MeaError> {
        StimulusCommand {
            targets: target_set(targets),
            waveform: Waveform::Sinusoid,
            shape: None,
            amplitude_ua,
            frequency_hz,
            pulse_width_us: 0.0,
            duration_ms,
            seed: None,
        }
        .validated()
    }

    pub fn white_noise(
        targets: impl IntoIterator<Item = ElectrodeId>,
        amplitude_ua: f64,
        duration_ms: f64,
        seed: u64,
    ) -> Result<Self, MeaError> {
        StimulusCommand {
            targets: target_set(targets),
            waveform: Waveform::WhiteNoise,
            shape: None,
            amplitude_ua,
            frequency_hz: 0.0,
            pulse_width_us: 0.0,
            duration_ms,
            seed: Some(seed),
        }
        .validated()
    }

    pub fn pulse_train(
        targets: impl IntoIterator<Item = ElectrodeId>,
        shape: PulseShape,
        amplitude_ua: f64,
        pulse_width_us: f64,
        frequency_hz: f64,
        duration_ms: f64,
    ) -> Result<Self, MeaError> {
        StimulusCommand {
            targets: target_set(targets),
            waveform: Waveform::PulseTrain,
            shape: Some(shape),
            amplitude_ua,
            frequency_hz,
            pulse_width_us,
            duration_ms,
            seed: None,
        }
        .validated()
    }

    pub fn single_pulse(
        targets: impl IntoIterator<Item = ElectrodeId>,
        shape: PulseShape,
        amplitude_ua: f64,
        pulse_width_us: f64,
        duration_ms: f64,
    ) -> Result<Self, MeaError> {
        StimulusCommand {
            targets: target_set(targets),
            waveform: Waveform::SinglePulse,
            shape: Some(shape),
            amplitude_ua,
            frequency_hz: 0.0,
            pulse_width_us,
            duration_ms,
            seed: None,
        }
        .validated()
    }

    fn validated(self) -> Result<Self, MeaError> {
        let bad = |msg: &str| Err(MeaError::InvalidStimulus(msg.to_string()));
        if self.targets.is_empty() {
            return bad("no target electrodes");
        }
        if !(self.amplitude_ua > 0.0 && self.amplitude_ua.is_finite()) {
            return bad("amplitude must be positive");
        }
        if !(self.duration_ms > 0.0 && self.duration_ms.is_finite()) {
            return bad("duration must be positive");
        }
        match self.waveform {
            Waveform::Sinusoid | Waveform::PulseTrain if !(self.frequency_hz > 0.0) => {
                return bad("frequency must be positive");
            }
            Waveform::WhiteNoise if self.seed.is_none() => return bad("white noise needs a seed"),
            _ => {}
        }
        if matches!(self.waveform, Waveform::PulseTrain | Waveform::SinglePulse) {
            if self.shape.is_none() {
                return bad("pulse waveforms need a shape");
            }
            if !(self.pulse_width_us > 0.0) {
                return bad("pulse width must be positive");
            }
        }
        Ok(self)
    }

    pub fn targets(&self) -> &[ElectrodeId] {
        &self.targets
    }
    pub fn waveform(&self) -> Waveform {
        self.waveform
    }
    pub fn shape(&self) -> Option<PulseShape> {
        self.shape
    }
    pub fn amplitude_ua(&self) -> f64 {
        self.amplitude_ua
    }
    pub fn frequency_hz(&self) -> f64 {
        self.frequency_hz
    }
    pub fn pulse_width_us(&self) -> f64 {
        self.pulse_width_us
    }
    pub fn duration_ms(&self) -> f64 {
        self.duration_ms
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

/// Number of whole `dt` steps in `span`, if `dt` divides it.
pub(crate) fn whole_steps(span: f64, dt: f64) -> Option<usize> {
    let n = (span / dt).round();
    if n < 1.0 || ((n * dt) - span).abs() > 1e-9 * span.max(1.0) {
        None
    } else {
        Some(n as usize)
    }
}

/// Sample the command's current (µA) every `dt_ms`, starting at t = 0.
pub fn render_waveform(cmd: &StimulusCommand, dt_ms: f64) -> Result<Vec<f64>, MeaError> {
    if !(dt_ms > 0.0) {
        return Err(MeaError::NonPositiveDt(dt_ms));
    }
    let n = whole_steps(cmd.duration_ms, dt_ms).ok_or(MeaError::DtDoesNotDivide {
        dt_ms,
        duration_ms: cmd.duration_ms,
    })?;
    let amp = cmd.amplitude_ua;
    match cmd.waveform {
        Waveform::Sinusoid => {
            let w = 2.0 * std::f64::consts::PI * cmd.frequency_hz;
            Ok((0..n)
                .map(|i| amp * (w * (i as f64 * dt_ms / 1000.0)).sin())
                .collect())
        }
        Waveform::WhiteNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(cmd.seed.unwrap_or_default());
            Ok((0..n).map(|_| rng.random_range(-amp..=amp)).collect())
        }
        Waveform::PulseTrain | Waveform::SinglePulse => {
            let pw_ms = cmd.pulse_width_us / 1000.0;
            if dt_ms > pw_ms + 1e-12 {
                return Err(MeaError::DtCoarserThanPulse {
                    dt_ms,
                    pulse_width_ms: pw_ms,
                });
            }
            let phases = cmd.shape.unwrap_or(PulseShape::BiPhasic).phases();
            let per_phase = ((pw_ms / dt_ms).round() as usize).max(1);
            let pulse_len = per_phase * phases.len();
            let mut out = vec![0.0; n];
            let mut write_pulse = |onset: usize| {
                for (k, slot) in out.iter_mut().skip(onset).take(pulse_len).enumerate() {
                    *slot = amp * phases[k / per_phase];
                }
            };
            if cmd.waveform == Waveform::SinglePulse {
                write_pulse(0);
            } else {
                let period_ms = 1000.0 / cmd.frequency_hz;
                let mut k = 0usize;
                loop {
                    let onset = ((k as f64 * period_ms) / dt_ms).round() as usize;
                    if onset >= n {
                        break;
                    }
                    write_pulse(onset);
                    k += 1;
                }
            }
            Ok(out)
        }
    }
}

/// Shannon entropy (bits) of the amplitude histogram with `bins` equal-width
/// bins spanning the observed range. A constant series has entropy 0.
pub fn shannon_entropy(samples: &[f64], bins: usize) -> Result<f64, MeaError> {
    if samples.len() < 2 || bins < 2 {
        return Err(MeaError::EntropyInput {
            samples: samples.len(),
            bins,
        });
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return Ok(0.0);
    }
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let idx = (((x - lo) / range) * bins as f64).floor() as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    let total = samples.len() as f64;
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// Spike counts recorded from one electrode group over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeWindow {
    group_id: String,
    window_ms: f64,
    timestamps: Vec<f64>,
}

impl SpikeWindow {
    /// Timestamps are offsets from the window start; they are sorted here and
    /// must lie in `[0, window)`.
    pub fn new(
        group_id: impl Into<String>,
        window_ms: f64,
        mut timestamps: Vec<f64>,
    ) -> Result<Self, MeaError> {
        if !(window_ms > 0.0) {
            return Err(MeaError::NonPositiveWindow(window_ms));
        }
        timestamps.sort_by(f64::total_cmp);
        if timestamps.iter().any(|&t| !(0.0..window_ms).contains(&t)) {
            return Err(MeaError::InvalidStimulus(
                "spike timestamp outside its window".into(),
            ));
        }
        Ok(Self {
            group_id: group_id.into(),
            window_ms,
            timestamps,
        })
    }

    /// Window carrying only a count; timestamps are spread evenly.
    pub fn from_count(group_id: impl Into<String>, window_ms: f64, count: usize) -> Self {
        let ts = (0..count)
            .map(|i| i as f64 * window_ms / count.max(1) as f64)
            .collect();
        Self::new(group_id, window_ms, ts).expect("evenly spaced stamps are in range")
    }

    pub fn group_id(&self) -> &str {
        &self.group_id
    }
    pub fn window_ms(&self) -> f64 {
        self.window_ms
    }
    pub fn count(&self) -> usize {
        self.timestamps.len()
    }
    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }
}

/// Something electrodes can be wired into: it accepts current on stimulation
/// electrodes and reports spikes seen on recording electrodes.
pub trait Substrate {
    /// Queue `samples` (µA, spaced `dt_ms`) on the given stimulation
    /// electrodes, starting at the substrate's current clock.
    fn inject(
        &mut self,
        electrodes: &[ElectrodeId],
        samples: &[f64],
        dt_ms: f64,
    ) -> Result<(), MeaError>;

    /// Advance the clock by `window_ms` and return, for each electrode set,
    /// the spike times (offsets into the window) of every neuron it records.
    fn advance_recording(
        &mut self,
        window_ms: f64,
        electrode_sets: &[&[ElectrodeId]],
    ) -> Result<Vec<Vec<f64>>, MeaError>;

    fn clock_ms(&self) -> f64;
}

/// Record one group over `window_ms`, advancing the substrate clock.
pub fn record_spikes<S: Substrate + ?Sized>(
    substrate: &mut S,
    group: &ElectrodeGroup,
    window_ms: f64,
) -> Result<SpikeWindow, MeaError> {
    Ok(record_groups(substrate, &[group], window_ms)?.remove(0))
}

/// Record several groups over the same window (one clock advance).
pub fn record_groups<S: Substrate + ?Sized>(
    substrate: &mut S,
    groups: &[&ElectrodeGroup],
    window_ms: f64,
) -> Result<Vec<SpikeWindow>, MeaError> {
    if !(window_ms > 0.0) {
        return Err(MeaError::NonPositiveWindow(window_ms));
    }
    for g in groups {
        if g.role() != GroupRole::Record {
            return Err(MeaError::NotRecording(g.id().to_string()));
        }
    }
    let sets: Vec<&[ElectrodeId]> = groups.iter().map(|g| g.electrodes()).collect();
    let spikes = substrate.advance_recording(window_ms, &sets)?;
    groups
        .iter()
        .zip(spikes)
        .map(|(g, ts)| SpikeWindow::new(g.id(), window_ms, ts))
        .collect()
}

/// Render `cmd` at [`RENDER_DT_MS`] and queue it on the substrate.
pub fn apply_stimulus<S: Substrate + ?Sized>(
    substrate: &mut S,
    cmd: &StimulusCommand,
) -> Result<(), MeaError> {
    let samples = render_waveform(cmd, RENDER_DT_MS)?;
    substrate.inject(cmd.targets(), &samples, RENDER_DT_MS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_layout_electrode_assignment() {
        let layout = MeaLayout::standard(8);
        let c = layout.group("C").unwrap();
        let d = layout.group("D").unwrap();
        assert_eq!(c.electrodes()[5], 14);
        assert_eq!(d.electrodes()[1], 2);
        assert_eq!(layout.group("A").unwrap().role(), GroupRole::Record);
        assert_eq!(layout.stimulation_electrodes().len(), 16);
    }

    #[test]
    fn group_invariants_are_enforced() {
        assert!(matches!(
            ElectrodeGroup::new("A", GroupRole::Stimulate, vec![1]),
            Err(MeaError::RoleMismatch { .. })
        ));
        assert!(matches!(
            ElectrodeGroup::labelled("C", vec![]),
            Err(MeaError::EmptyGroup(_))
        ));
        assert!(matches!(
            ElectrodeGroup::labelled("C", vec![1, 1]),
            Err(MeaError::DuplicateElectrode { .. })
        ));
        let a = ElectrodeGroup::labelled("A", vec![1, 2]).unwrap();
        let c = ElectrodeGroup::labelled("C", vec![2, 3]).unwrap();
        assert!(matches!(
            MeaLayout::new(vec![a, c]),
            Err(MeaError::OverlappingGroups { electrode: 2, .. })
        ));
    }

    #[test]
    fn command_invariants() {
        assert!(StimulusCommand::sinusoid([1], 1.0, 4.0, 0.0).is_err());
        assert!(StimulusCommand::sinusoid([1], 0.0, 4.0, 10.0).is_err());
        assert!(StimulusCommand::sinusoid([1], 1.0, 0.0, 10.0).is_err());
        assert!(StimulusCommand::sinusoid(Vec::<u32>::new(), 1.0, 4.0, 10.0).is_err());
        let json = r#"{"targets":[1],"waveform":"WhiteNoise","amplitude_uA":1.0,"duration_ms":5.0}"#;
        assert!(serde_json::from_str::<StimulusCommand>(json).is_err());
    }

    #[test]
    fn command_json_uses_protocol_field_names() {
        let cmd = StimulusCommand::pulse_train([3, 1], PulseShape::TriPhasic, 8.5, 150.0, 30.0, 100.0)
            .unwrap();
        let v = serde_json::to_value(&cmd).unwrap();
        assert_eq!(v["amplitude_uA"], 8.5);
        assert_eq!(v["pulse_duration_us"], 150.0);
        assert_eq!(v["frequency_hz"], 30.0);
        assert_eq!(v["shape"], "tri-phasic");
        assert_eq!(v["targets"], serde_json::json!([1, 3]));
        let back: StimulusCommand = serde_json::from_value(v).unwrap();
        assert_eq!(back, cmd);
    }

    #[test]
    fn sinusoid_starts_at_zero_and_peaks_at_quarter_period() {
        let cmd = StimulusCommand::sinusoid([1], 1.0, 2.0, 1000.0).unwrap();
        let s = render_waveform(&cmd, 0.1).unwrap();
        assert_eq!(s.len(), 10_000);
        assert_eq!(s[0], 0.0);
        // sin(2*pi*2*0.125) = 1
        let (idx, peak) = s
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert!((peak - 1.0).abs() < 1e-12);
        assert!((idx as f64 * 0.1 - 125.0).abs() < 1e-9);
    }

    #[test]
    fn white_noise_is_seeded_and_bounded() {
        let cmd = StimulusCommand::white_noise([1], 2.0, 100.0, 7).unwrap();
        let a = render_waveform(&cmd, 0.1).unwrap();
        let b = render_waveform(&cmd, 0.1).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|x| x.abs() <= 2.0));
        let other = StimulusCommand::white_noise([1], 2.0, 100.0, 8).unwrap();
        assert_ne!(a, render_waveform(&other, 0.1).unwrap());
    }

    #[test]
    fn pulse_train_places_shaped_pulses_at_frequency() {
        let cmd =
            StimulusCommand::pulse_train([1], PulseShape::BiPhasic, 5.0, 200.0, 100.0, 30.0).unwrap();
        let s = render_waveform(&cmd, 0.1).unwrap();
        // 100 Hz over 30 ms: onsets at 0, 10, 20 ms; 2 samples per phase.
        for onset in [0usize, 100, 200] {
            assert_eq!(&s[onset..onset + 4], &[5.0, 5.0, -5.0, -5.0]);
            assert_eq!(s[onset + 4], 0.0);
        }
        assert_eq!(s.iter().filter(|&&x| x != 0.0).count(), 12);

        let tri = StimulusCommand::single_pulse([1], PulseShape::TriPhasic, 4.0, 100.0, 5.0).unwrap();
        let s = render_waveform(&tri, 0.1).unwrap();
        assert_eq!(&s[..4], &[2.0, -4.0, 2.0, 0.0]);
        assert_eq!(s.iter().filter(|&&x| x != 0.0).count(), 3);
    }

    #[test]
    fn render_errors() {
        let cmd = StimulusCommand::sinusoid([1], 1.0, 2.0, 10.0).unwrap();
        assert!(matches!(render_waveform(&cmd, 0.0), Err(MeaError::NonPositiveDt(_))));
        assert!(matches!(
            render_waveform(&cmd, 3.0),
            Err(MeaError::DtDoesNotDivide { .. })
        ));
        let p = StimulusCommand::single_pulse([1], PulseShape::BiPhasic, 1.0, 50.0, 10.0).unwrap();
        assert!(matches!(
            render_waveform(&p, 0.1),
            Err(MeaError::DtCoarserThanPulse { .. })
        ));
    }

    #[test]
    fn entropy_edge_cases() {
        assert_eq!(shannon_entropy(&[3.0; 10], 32).unwrap(), 0.0);
        let uniform: Vec<f64> = (0..32 * 4).map(|i| (i / 4) as f64).collect();
        assert!((shannon_entropy(&uniform, 32).unwrap() - 5.0).abs() < 1e-12);
        assert!(shannon_entropy(&[1.0], 32).is_err());
        assert!(shannon_entropy(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn noise_is_more_entropic_than_sinusoid() {
        let sin = StimulusCommand::sinusoid([1], 5.0, 4.0, 1000.0).unwrap();
        let noise = StimulusCommand::white_noise([1], 5.0, 1000.0, 7).unwrap();
        let hs = shannon_entropy(&render_waveform(&sin, 0.1).unwrap(), 32).unwrap();
        let hn = shannon_entropy(&render_waveform(&noise, 0.1).unwrap(), 32).unwrap();
        assert!(hn > hs, "noise {hn} sinusoid {hs}");
        assert!(hn <= 5.0 + 1e-12);
    }

    #[test]
    fn spike_window_invariants() {
        let w = SpikeWindow::new("A", 10.0, vec![5.0, 1.0]).unwrap();
        assert_eq!(w.count(), 2);
        assert_eq!(w.timestamps(), &[1.0, 5.0]);
        assert!(SpikeWindow::new("A", 10.0, vec![10.0]).is_err());
        assert!(SpikeWindow::new("A", 0.0, vec![]).is_err());
    }
}
