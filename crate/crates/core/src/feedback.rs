//! Reward and punishment stimuli, and their delivery to the surrogate.
//!
//! A reward is a predictable sinusoid on every stimulation electrode; a
//! punishment is seeded white noise on a random half of them. Delivery also
//! issues the matching neuromodulatory signal (+1 / −1) at stimulus onset.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentError};
use crate::mea::{apply_stimulus, ElectrodeGroup, MeaError, PulseShape, StimulusCommand};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedbackError {
    #[error("no stimulation groups given")]
    NoGroups,
    #[error("magnitude {magnitude} outside [0, {ceiling}]")]
    MagnitudeOutOfRange { magnitude: f64, ceiling: f64 },
    #[error("punishment cannot be delivered by dopamine uncaging")]
    UnsupportedChannel,
    #[error(transparent)]
    Mea(#[from] MeaError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeedbackKind {
    Reward,
    Punishment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Electrical,
    DopamineUncaging,
}

/// Feedback requested by an environment: what kind and how strong.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSignal {
    pub kind: FeedbackKind,
    pub magnitude: f64,
}

impl FeedbackSignal {
    pub fn reward() -> Self {
        Self {
            kind: FeedbackKind::Reward,
            magnitude: 1.0,
        }
    }

    pub fn punishment(magnitude: f64) -> Self {
        Self {
            kind: FeedbackKind::Punishment,
            magnitude,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    kind: FeedbackKind,
    magnitude: f64,
    channel: Channel,
}

impl FeedbackEvent {
    pub fn new(
        kind: FeedbackKind,
        magnitude: f64,
        channel: Channel,
        ceiling: f64,
    ) -> Result<Self, FeedbackError> {
        if !(0.0..=ceiling).contains(&magnitude) {
            return Err(FeedbackError::MagnitudeOutOfRange { magnitude, ceiling });
        }
        Ok(Self {
            kind,
            magnitude,
            channel,
        })
    }

    pub fn kind(&self) -> FeedbackKind {
        self.kind
    }
    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }
    pub fn channel(&self) -> Channel {
        self.channel
    }
}

/// Reward delivered as a continuous sinusoid or as a pulse train (the form
/// protocol documents describe).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardStyle {
    Sinusoid,
    PulseTrain {
        shape: PulseShape,
        pulse_width_us: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackParams {
    pub reward_style: RewardStyle,
    pub reward_amplitude_ua: f64,
    pub reward_frequency_hz: f64,
    pub reward_duration_ms: f64,
    pub punishment_base_ua: f64,
    pub punishment_duration_ms: f64,
    /// Share of stimulation electrodes hit by a punishment (at least one).
    pub punishment_fraction: f64,
    /// Upper bound on any feedback magnitude multiplier.
    pub magnitude_ceiling: f64,
    pub reward_channel: Channel,
    pub uncaging_duration_ms: f64,
}

impl Default for FeedbackParams {
    fn default() -> Self {
        Self {
            reward_style: RewardStyle::Sinusoid,
            reward_amplitude_ua: 2.0,
            reward_frequency_hz: 4.0,
            reward_duration_ms: 500.0,
            punishment_base_ua: 10.0,
            punishment_duration_ms: 100.0,
            punishment_fraction: 0.5,
            magnitude_ceiling: 5.0,
            reward_channel: Channel::Electrical,
            uncaging_duration_ms: 500.0,
        }
    }
}

fn all_electrodes(groups: &[&ElectrodeGroup]) -> Result<Vec<u32>, FeedbackError> {
    let targets: Vec<u32> = groups
        .iter()
        .flat_map(|g| g.electrodes().iter().copied())
        .collect();
    if targets.is_empty() {
        return Err(FeedbackError::NoGroups);
    }
    Ok(targets)
}

/// Predictable reward on every electrode of `groups`. Deterministic.
pub fn make_reward(
    groups: &[&ElectrodeGroup],
    params: &FeedbackParams,
) -> Result<StimulusCommand, FeedbackError> {
    let targets = all_electrodes(groups)?;
    let cmd = match &params.reward_style {
        RewardStyle::Sinusoid => StimulusCommand::sinusoid(
            targets,
            params.reward_amplitude_ua,
            params.reward_frequency_hz,
            params.reward_duration_ms,
        )?,
        RewardStyle::PulseTrain {
            shape,
            pulse_width_us,
        } => StimulusCommand::pulse_train(
            targets,
            *shape,
            params.reward_amplitude_ua,
            *pulse_width_us,
            params.reward_frequency_hz,
            params.reward_duration_ms,
        )?,
    };
    Ok(cmd)
}

/// White noise on a uniformly drawn subset of the stimulation electrodes,
/// scaled by `magnitude`. The noise seed is drawn from `rng` and kept in the
/// command so the exact trace can be re-rendered.
pub fn make_punishment<R: Rng + ?Sized>(
    groups: &[&ElectrodeGroup],
    magnitude: f64,
    params: &FeedbackParams,
    rng: &mut R,
) -> Result<StimulusCommand, FeedbackError> {
    let targets = all_electrodes(groups)?;
    if !(magnitude > 0.0 && magnitude <= params.magnitude_ceiling) {
        return Err(FeedbackError::MagnitudeOutOfRange {
            magnitude,
            ceiling: params.magnitude_ceiling,
        });
    }
    let k = ((targets.len() as f64 * params.punishment_fraction).round() as usize)
        .clamp(1, targets.len());
    let chosen: Vec<u32> = sample(rng, targets.len(), k)
        .into_iter()
        .map(|i| targets[i])
        .collect();
    let seed: u64 = rng.random();
    Ok(StimulusCommand::white_noise(
        chosen,
        params.punishment_base_ua * magnitude,
        params.punishment_duration_ms,
        seed,
    )?)
}

/// What [`deliver`] did, for logging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub signal: f64,
    pub stimulus: Option<StimulusCommand>,
    pub duration_ms: f64,
}

/// Deliver one feedback event: neuromodulatory signal first, then the
/// stimulus (if any) is played out by advancing the agent through it.
pub fn deliver<R: Rng + ?Sized>(
    event: &FeedbackEvent,
    agent: &mut Agent,
    groups: &[&ElectrodeGroup],
    params: &FeedbackParams,
    rng: &mut R,
) -> Result<Delivery, FeedbackError> {
    deliver_with(event, agent, groups, params, rng, |s| s)
}

/// As [`deliver`], but the nominal signal is passed through `shape` before
/// it reaches the agent (e.g. to subtract an expected reward). The result
/// is clamped to [−1, 1].
pub fn deliver_with<R: Rng + ?Sized>(
    event: &FeedbackEvent,
    agent: &mut Agent,
    groups: &[&ElectrodeGroup],
    params: &FeedbackParams,
    rng: &mut R,
    shape: impl FnOnce(f64) -> f64,
) -> Result<Delivery, FeedbackError> {
    match (event.kind, event.channel) {
        (FeedbackKind::Punishment, Channel::DopamineUncaging) => {
            Err(FeedbackError::UnsupportedChannel)
        }
        (FeedbackKind::Reward, Channel::DopamineUncaging) => {
            // Longer uncaging releases more transmitter; 1 s saturates.
            let signal = shape((params.uncaging_duration_ms / 1000.0).clamp(0.0, 1.0)).clamp(-1.0, 1.0);
            agent.apply_neuromodulation(signal)?;
            agent.run(params.uncaging_duration_ms)?;
            Ok(Delivery {
                signal,
                stimulus: None,
                duration_ms: params.uncaging_duration_ms,
            })
        }
        (kind, Channel::Electrical) => {
            let (signal, cmd) = match kind {
                FeedbackKind::Reward => (1.0, make_reward(groups, params)?),
                FeedbackKind::Punishment => (
                    -1.0,
                    make_punishment(groups, event.magnitude, params, rng)?,
                ),
            };
            let signal = shape(signal).clamp(-1.0, 1.0);
            agent.apply_neuromodulation(signal)?;
            apply_stimulus(agent, &cmd)?;
            agent.run(cmd.duration_ms())?;
            Ok(Delivery {
                signal,
                duration_ms: cmd.duration_ms(),
                stimulus: Some(cmd),
            })
        }
    }
}
