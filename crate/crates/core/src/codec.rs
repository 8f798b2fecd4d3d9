//! Sensory encoders (world state to stimulus commands) and motor decoders
//! (spike windows to actions).
//!
//! Every decoder compares spike counts with strict inequalities; ties fall
//! through to [`Action::Stay`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mea::{ElectrodeGroup, MeaError, PulseShape, SpikeWindow, StimulusCommand};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("position {pos} outside 1..={max}")]
    PositionOutOfRange { pos: u32, max: usize },
    #[error("coordinate ({x}, {y}) outside a {width}x{height} grid")]
    OutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("spike windows have different durations ({0} ms vs {1} ms)")]
    WindowMismatch(f64, f64),
    #[error("invalid rate code: {0}")]
    InvalidRateCode(String),
    #[error("invalid codec parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Mea(#[from] MeaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
    Stay,
}

impl Action {
    pub const BINARY: [Action; 3] = [Action::Left, Action::Right, Action::Stay];
    pub const FOUR_WAY: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];
}

/// Linear distance-to-frequency map: `f_max` at distance 0 falling to `f_min`
/// at `d_max` and beyond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateCodeSpec {
    pub f_min: f64,
    pub f_max: f64,
    pub d_max: f64,
}

impl RateCodeSpec {
    pub fn new(f_min: f64, f_max: f64, d_max: f64) -> Result<Self, CodecError> {
        let spec = Self { f_min, f_max, d_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(self.f_min > 0.0 && self.f_max > self.f_min) {
            return Err(CodecError::InvalidRateCode("need f_max > f_min > 0".into()));
        }
        if !(self.d_max > 0.0) {
            return Err(CodecError::InvalidRateCode("need d_max > 0".into()));
        }
        Ok(())
    }

    pub fn frequency(&self, distance: f64) -> f64 {
        let d = distance.max(0.0).min(self.d_max);
        self.f_max - (self.f_max - self.f_min) * d / self.d_max
    }
}

/// How the second coordinate of a 2D position is conveyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum XyMode {
    /// y modulates the pulse frequency on the x electrode.
    FreqMod,
    /// y is spatially encoded on a second electrode group.
    SplitGroups,
}

/// Stimulus parameters shared by all encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecParams {
    pub amplitude_ua: f64,
    pub pulse_width_us: f64,
    pub shape: PulseShape,
    /// Pulse rate for spatial codes (Hz).
    pub spatial_frequency_hz: f64,
    /// Pulse rate used for a distinct "adversary" pattern.
    pub adversary_frequency_hz: f64,
    pub rate: RateCodeSpec,
    pub xy_mode: XyMode,
    /// Decode window (ms); each sensory command lasts one window.
    pub window_ms: f64,
    /// Decode window used by the paddle games.
    pub paddle_window_ms: f64,
}

impl Default for CodecParams {
    fn default() -> Self {
        Self {
            amplitude_ua: 10.0,
            pulse_width_us: 200.0,
            shape: PulseShape::BiPhasic,
            spatial_frequency_hz: 40.0,
            adversary_frequency_hz: 80.0,
            rate: RateCodeSpec {
                f_min: 5.0,
                f_max: 45.0,
                d_max: 12.0,
            },
            xy_mode: XyMode::SplitGroups,
            window_ms: 100.0,
            paddle_window_ms: 10.0,
        }
    }
}

impl CodecParams {
    pub fn validate(&self) -> Result<(), CodecError> {
        self.rate.validate()?;
        let positive = [
            ("amplitude_ua", self.amplitude_ua),
            ("pulse_width_us", self.pulse_width_us),
            ("spatial_frequency_hz", self.spatial_frequency_hz),
            ("adversary_frequency_hz", self.adversary_frequency_hz),
            ("window_ms", self.window_ms),
            ("paddle_window_ms", self.paddle_window_ms),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CodecError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn train(&self, targets: Vec<u32>, freq: f64, duration: f64) -> Result<StimulusCommand, CodecError> {
        Ok(StimulusCommand::pulse_train(
            targets,
            self.shape,
            self.amplitude_ua,
            self.pulse_width_us,
            freq,
            duration,
        )?)
    }
}

/// Pulse train on the `pos`-th (1-based) electrode of `group`.
pub fn encode_position_spatial(
    pos: u32,
    group: &ElectrodeGroup,
    params: &CodecParams,
) -> Result<StimulusCommand, CodecError> {
    encode_position_at(pos, group, params, params.spatial_frequency_hz, params.window_ms)
}

/// Spatial code with an explicit pulse rate and duration.
pub fn encode_position_at(
    pos: u32,
    group: &ElectrodeGroup,
    params: &CodecParams,
    frequency_hz: f64,
    duration_ms: f64,
) -> Result<StimulusCommand, CodecError> {
    if pos == 0 || pos as usize > group.len() {
        return Err(CodecError::PositionOutOfRange {
            pos,
            max: group.len(),
        });
    }
    params.train(vec![group.electrodes()[pos as usize - 1]], frequency_hz, duration_ms)
}

/// Pulse train on every electrode of `group` whose rate falls linearly with
/// distance.
pub fn encode_rate(
    distance: f64,
    spec: &RateCodeSpec,
    group: &ElectrodeGroup,
    params: &CodecParams,
    duration_ms: f64,
) -> Result<StimulusCommand, CodecError> {
    spec.validate()?;
    params.train(group.electrodes().to_vec(), spec.frequency(distance), duration_ms)
}

/// Encode a 0-based grid cell. x is spatial on `spatial_group`; y is either
/// a frequency on the same electrode or spatial on `second_group`.
pub fn encode_xy(
    (x, y): (u32, u32),
    (width, height): (u32, u32),
    spatial_group: &ElectrodeGroup,
    second_group: &ElectrodeGroup,
    mode: XyMode,
    params: &CodecParams,
) -> Result<Vec<StimulusCommand>, CodecError> {
    if x >= width || y >= height {
        return Err(CodecError::OutOfBounds {
            x,
            y,
            width,
            height,
        });
    }
    match mode {
        XyMode::FreqMod => {
            let span = params.rate.f_max - params.rate.f_min;
            let f = params.rate.f_min + span * y as f64 / (height.max(2) - 1) as f64;
            Ok(vec![encode_position_at(
                x + 1,
                spatial_group,
                params,
                f,
                params.window_ms,
            )?])
        }
        XyMode::SplitGroups => Ok(vec![
            encode_position_spatial(x + 1, spatial_group, params)?,
            encode_position_spatial(y + 1, second_group, params)?,
        ]),
    }
}

fn same_window(a: &SpikeWindow, b: &SpikeWindow) -> Result<(), CodecError> {
    if a.window_ms() != b.window_ms() {
        return Err(CodecError::WindowMismatch(a.window_ms(), b.window_ms()));
    }
    Ok(())
}

/// A dominant → Left, B dominant → Right, tie → Stay.
pub fn decode_binary(a: &SpikeWindow, b: &SpikeWindow) -> Result<Action, CodecError> {
    same_window(a, b)?;
    Ok(binary_from_counts(a.count(), b.count()))
}

pub fn binary_from_counts(a: usize, b: usize) -> Action {
    match a.cmp(&b) {
        std::cmp::Ordering::Greater => Action::Left,
        std::cmp::Ordering::Less => Action::Right,
        std::cmp::Ordering::Equal => Action::Stay,
    }
}

/// The unique maximum among (up, down, left, right) wins; any tie at the
/// maximum means Stay.
pub fn decode_4way(
    up: &SpikeWindow,
    down: &SpikeWindow,
    left: &SpikeWindow,
    right: &SpikeWindow,
) -> Result<Action, CodecError> {
    for w in [down, left, right] {
        same_window(up, w)?;
    }
    Ok(four_way_from_counts([
        up.count(),
        down.count(),
        left.count(),
        right.count(),
    ]))
}

pub fn four_way_from_counts(counts: [usize; 4]) -> Action {
    let max = *counts.iter().max().expect("four entries");
    let mut winners = counts.iter().enumerate().filter(|(_, &c)| c == max);
    let (first, _) = winners.next().expect("max exists");
    if winners.next().is_some() {
        return Action::Stay;
    }
    [Action::Up, Action::Down, Action::Left, Action::Right][first]
}

/// Axis along which a paddle moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PaddleAxis {
    /// Pong: A → Up, B → Down.
    Vertical,
    /// Breakout: A → Left, B → Right.
    Horizontal,
}

pub fn decode_paddle(
    a: &SpikeWindow,
    b: &SpikeWindow,
    axis: PaddleAxis,
) -> Result<Action, CodecError> {
    let binary = decode_binary(a, b)?;
    Ok(match (axis, binary) {
        (PaddleAxis::Vertical, Action::Left) => Action::Up,
        (PaddleAxis::Vertical, Action::Right) => Action::Down,
        (_, other) => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mea::{MeaLayout, Waveform};
    use proptest::prelude::*;

    fn w(n: usize) -> SpikeWindow {
        SpikeWindow::from_count("A", 100.0, n)
    }

    #[test]
    fn spatial_code_addresses_one_electrode() {
        let layout = MeaLayout::standard(8);
        let c = layout.group("C").unwrap();
        let p = CodecParams::default();
        let cmd = encode_position_spatial(1, c, &p).unwrap();
        assert_eq!(cmd.targets(), &[c.electrodes()[0]]);
        assert_eq!(cmd.waveform(), Waveform::PulseTrain);
        assert_eq!(encode_position_spatial(6, c, &p).unwrap().targets(), &[14]);
        assert!(matches!(
            encode_position_spatial(9, c, &p),
            Err(CodecError::PositionOutOfRange { pos: 9, max: 8 })
        ));
        assert!(encode_position_spatial(0, c, &p).is_err());
        let all: std::collections::BTreeSet<_> = (1..=8)
            .map(|pos| encode_position_spatial(pos, c, &p).unwrap().targets().to_vec())
            .collect();
        assert_eq!(all.len(), 8);
    }

    #[test]
    fn spatial_code_is_injective_up_to_100() {
        let p = CodecParams::default();
        for n in 1..=100u32 {
            let g = ElectrodeGroup::labelled("C", (1000..1000 + n).collect()).unwrap();
            let set: std::collections::BTreeSet<_> = (1..=n)
                .map(|pos| encode_position_spatial(pos, &g, &p).unwrap().targets().to_vec())
                .collect();
            assert_eq!(set.len(), n as usize);
        }
    }

    #[test]
    fn rate_code_boundaries_and_midpoint() {
        let spec = RateCodeSpec::new(5.0, 45.0, 10.0).unwrap();
        let layout = MeaLayout::standard(8);
        let g = layout.group("C").unwrap();
        let p = CodecParams::default();
        let f = |d: f64| encode_rate(d, &spec, g, &p, 100.0).unwrap().frequency_hz();
        assert_eq!(f(0.0), 45.0);
        assert_eq!(f(10.0), 5.0);
        assert_eq!(f(5.0), 25.0);
        assert_eq!(f(1e9), 5.0);
        assert_eq!(encode_rate(3.0, &spec, g, &p, 100.0).unwrap().targets().len(), 8);
        assert!(RateCodeSpec::new(5.0, 5.0, 1.0).is_err());
    }

    #[test]
    fn xy_codes() {
        let layout = MeaLayout::four_way(10);
        let c = layout.group("C").unwrap();
        let d = layout.group("D").unwrap();
        let p = CodecParams::default();
        let origin = encode_xy((0, 0), (10, 10), c, d, XyMode::FreqMod, &p).unwrap();
        assert_eq!(origin.len(), 1);
        assert_eq!(origin[0].targets(), &[c.electrodes()[0]]);
        assert_eq!(origin[0].frequency_hz(), p.rate.f_min);

        let mut seen = std::collections::BTreeSet::new();
        for x in 0..10 {
            for y in 0..10 {
                let cmds = encode_xy((x, y), (10, 10), c, d, XyMode::FreqMod, &p).unwrap();
                seen.insert((cmds[0].targets().to_vec(), cmds[0].frequency_hz().to_bits()));
                let split = encode_xy((x, y), (10, 10), c, d, XyMode::SplitGroups, &p).unwrap();
                assert_eq!(split[0].targets(), cmds[0].targets());
            }
        }
        assert_eq!(seen.len(), 100);
        assert!(matches!(
            encode_xy((10, 0), (10, 10), c, d, XyMode::FreqMod, &p),
            Err(CodecError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn binary_decoder() {
        assert_eq!(decode_binary(&w(10), &w(5)).unwrap(), Action::Left);
        assert_eq!(decode_binary(&w(3), &w(3)).unwrap(), Action::Stay);
        assert_eq!(decode_binary(&w(0), &w(1)).unwrap(), Action::Right);
        let short = SpikeWindow::from_count("B", 10.0, 1);
        assert!(matches!(
            decode_binary(&w(1), &short),
            Err(CodecError::WindowMismatch(..))
        ));
    }

    /// Reference: pick the strictly largest count by scanning all pairs.
    fn four_way_oracle(c: [usize; 4]) -> Action {
        let labels = [Action::Up, Action::Down, Action::Left, Action::Right];
        for i in 0..4 {
            if (0..4).all(|j| j == i || c[i] > c[j]) {
                return labels[i];
            }
        }
        Action::Stay
    }

    #[test]
    fn four_way_decoder_matches_exhaustive_oracle() {
        assert_eq!(decode_4way(&w(9), &w(1), &w(1), &w(1)).unwrap(), Action::Up);
        assert_eq!(decode_4way(&w(4), &w(4), &w(1), &w(1)).unwrap(), Action::Stay);
        assert_eq!(decode_4way(&w(0), &w(0), &w(0), &w(0)).unwrap(), Action::Stay);
        for a in 0..=5 {
            for b in 0..=5 {
                for c in 0..=5 {
                    for d in 0..=5 {
                        let counts = [a, b, c, d];
                        let got = decode_4way(&w(a), &w(b), &w(c), &w(d)).unwrap();
                        assert_eq!(got, four_way_oracle(counts), "{counts:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn paddle_decoder_relabels() {
        assert_eq!(decode_paddle(&w(2), &w(1), PaddleAxis::Vertical).unwrap(), Action::Up);
        assert_eq!(decode_paddle(&w(1), &w(2), PaddleAxis::Vertical).unwrap(), Action::Down);
        assert_eq!(decode_paddle(&w(1), &w(2), PaddleAxis::Horizontal).unwrap(), Action::Right);
        assert_eq!(decode_paddle(&w(5), &w(5), PaddleAxis::Horizontal).unwrap(), Action::Stay);
    }

    proptest! {
        #[test]
        fn rate_code_is_monotone_and_clamped(d1 in 0.0f64..50.0, d2 in 0.0f64..50.0) {
            let spec = RateCodeSpec::new(5.0, 45.0, 12.0).unwrap();
            let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(spec.frequency(near) >= spec.frequency(far));
            prop_assert!((5.0..=45.0).contains(&spec.frequency(d1)));
        }

        #[test]
        fn decoders_ignore_spike_timing(a in 0usize..30, b in 0usize..30, shift in 0.0f64..0.9) {
            let jitter = |n: usize| SpikeWindow::new(
                "A", 100.0, (0..n).map(|i| (i as f64 + shift) * 99.0 / 30.0).collect()).unwrap();
            prop_assert_eq!(decode_binary(&jitter(a), &jitter(b)).unwrap(),
                            decode_binary(&w(a), &w(b)).unwrap());
        }

        #[test]
        fn four_way_with_two_inputs_reduces_to_binary(a in 0usize..20, b in 0usize..20) {
            // Left/right only: a plays the role of A (left), b of B (right).
            let four = decode_4way(&w(0), &w(0), &w(a), &w(b)).unwrap();
            let bin = decode_binary(&w(a), &w(b)).unwrap();
            if a == 0 && b == 0 {
                prop_assert_eq!(four, Action::Stay);
            } else {
                prop_assert_eq!(four, bin);
            }
        }
    }
}
