//! Virtual worlds behind one stepped interface.
//!
//! Every single-agent world implements [`Environment`]: it reports the
//! stimuli describing its state, accepts one decoded action per step and
//! answers with optional feedback. Two-player variants ([`Versus`],
//! [`MultiOrganoid`]) are advanced by their own schedulers.

mod avoidance;
mod pong;
mod predator;

pub use avoidance::{
    Avoidance1D, Avoidance1DConfig, Avoidance1DState, Avoidance2D, Avoidance2DConfig,
    Grid2DState, Maze, MazeConfig, RewardMode, MAZE_LAYOUT,
};
pub use pong::{
    Ball, Breakout, BreakoutConfig, BreakoutState, Pong, PongConfig, PongState, Versus,
    VersusState, VersusStep,
};
pub use predator::{
    AdversaryConfig, MultiOrganoid, MultiOrganoidState, PredatorPrey1D, PredatorPrey1DConfig,
    Policy, PredatorPrey2D, PredatorPrey2DConfig, PredatorPrey2DState, PredatorPreyState,
    PreyPolicy, RoundResult,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Action, CodecError, CodecParams, PaddleAxis};
use crate::feedback::FeedbackSignal;
use crate::mea::{MeaError, MeaLayout, StimulusCommand};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("need at least two agents, got {0}")]
    NotEnoughAgents(usize),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Mea(#[from] MeaError),
}

/// How spikes map onto actions for a world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSpace {
    /// A vs B: Left / Right / Stay.
    Binary,
    /// A_up, A_down, B_left, B_right.
    FourWay,
    Paddle(PaddleAxis),
}

impl ActionSpace {
    /// Every action a decoder can emit for this space.
    pub fn actions(self) -> &'static [Action] {
        match self {
            ActionSpace::Binary | ActionSpace::Paddle(PaddleAxis::Horizontal) => &Action::BINARY,
            ActionSpace::FourWay => &Action::FOUR_WAY,
            ActionSpace::Paddle(PaddleAxis::Vertical) => &[Action::Up, Action::Down, Action::Stay],
        }
    }
}

/// Notable things that happened during a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Capture,
    Timeout,
    Danger,
    SafeReward,
    Aversive,
    Goal,
    Wall,
    Hit,
    Miss,
    Brick,
}

impl Outcome {
    /// Whether the outcome closes a trial, and if so whether it was a success.
    pub fn trial_result(self) -> Option<bool> {
        match self {
            Outcome::Capture | Outcome::SafeReward | Outcome::Goal | Outcome::Hit => Some(true),
            Outcome::Timeout | Outcome::Danger | Outcome::Aversive | Outcome::Miss => Some(false),
            Outcome::Wall | Outcome::Brick => None,
        }
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Step {
    pub feedback: Option<FeedbackSignal>,
    pub outcome: Option<Outcome>,
    /// Agent ended the step in the safe zone (avoidance tasks only).
    pub safe: Option<bool>,
    /// The episode is over (all bricks cleared).
    pub terminal: bool,
}

impl Step {
    fn with(feedback: Option<FeedbackSignal>, outcome: Option<Outcome>) -> Self {
        Self {
            feedback,
            outcome,
            ..Self::default()
        }
    }

    pub fn trial_end(&self) -> bool {
        self.outcome.and_then(Outcome::trial_result).is_some()
    }
}

/// A world driven by one agent.
pub trait Environment {
    fn action_space(&self) -> ActionSpace;

    /// Electrode layout the world's codes are written against.
    fn layout(&self) -> MeaLayout;

    /// Stimuli describing the current state.
    fn sense(&self, layout: &MeaLayout, codec: &CodecParams)
        -> Result<Vec<StimulusCommand>, EnvError>;

    fn step(&mut self, action: Action) -> Step;

    /// Variant payload for logging (no RNG state).
    fn snapshot(&self) -> serde_json::Value;

    /// Simulated time per decode window.
    fn window_ms(&self, codec: &CodecParams) -> f64 {
        codec.window_ms
    }

    fn timestep(&self) -> u64;
}

fn move_1d(pos: u32, action: Action, n: u32) -> u32 {
    match action {
        Action::Left => pos.saturating_sub(1).max(1),
        Action::Right => (pos + 1).min(n),
        _ => pos,
    }
}

fn move_2d((x, y): (u32, u32), action: Action, (w, h): (u32, u32)) -> (u32, u32) {
    match action {
        Action::Up => (x, (y + 1).min(h - 1)),
        Action::Down => (x, y.saturating_sub(1)),
        Action::Left => (x.saturating_sub(1), y),
        Action::Right => ((x + 1).min(w - 1), y),
        Action::Stay => (x, y),
    }
}

/// Serializable choice of single-agent world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Avoidance1d(Avoidance1DConfig),
    DynamicAvoidance(Avoidance1DConfig),
    Avoidance2d(Avoidance2DConfig),
    Maze(MazeConfig),
    PredatorPrey1d(PredatorPrey1DConfig),
    PredatorPrey2d(PredatorPrey2DConfig),
    Pong(PongConfig),
    Breakout(BreakoutConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::PredatorPrey1d(PredatorPrey1DConfig::default())
    }
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Avoidance1d(_) => "avoidance1d",
            EnvConfig::DynamicAvoidance(_) => "dynamic_avoidance",
            EnvConfig::Avoidance2d(_) => "avoidance2d",
            EnvConfig::Maze(_) => "maze",
            EnvConfig::PredatorPrey1d(_) => "predator_prey1d",
            EnvConfig::PredatorPrey2d(_) => "predator_prey2d",
            EnvConfig::Pong(_) => "pong",
            EnvConfig::Breakout(_) => "breakout",
        }
    }

    pub fn build(&self, seed: u64) -> Result<Env, EnvError> {
        Ok(match self {
            EnvConfig::Avoidance1d(c) => Env::Avoidance1D(Avoidance1D::new(c.clone(), seed)?),
            EnvConfig::DynamicAvoidance(c) => {
                Env::Avoidance1D(Avoidance1D::new(c.clone().into_dynamic(), seed)?)
            }
            EnvConfig::Avoidance2d(c) => Env::Avoidance2D(Avoidance2D::new(c.clone(), seed)?),
            EnvConfig::Maze(c) => Env::Maze(Maze::new(c.clone())?),
            EnvConfig::PredatorPrey1d(c) => {
                Env::PredatorPrey1D(PredatorPrey1D::new(c.clone(), seed)?)
            }
            EnvConfig::PredatorPrey2d(c) => {
                Env::PredatorPrey2D(PredatorPrey2D::new(c.clone(), seed)?)
            }
            EnvConfig::Pong(c) => Env::Pong(Pong::new(c.clone(), seed)?),
            EnvConfig::Breakout(c) => Env::Breakout(Breakout::new(c.clone(), seed)?),
        })
    }
}

/// Any single-agent world, including its RNG state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Env {
    Avoidance1D(Avoidance1D),
    Avoidance2D(Avoidance2D),
    Maze(Maze),
    PredatorPrey1D(PredatorPrey1D),
    PredatorPrey2D(PredatorPrey2D),
    Pong(Pong),
    Breakout(Breakout),
}

macro_rules! dispatch {
    ($self:expr, $e:ident => $body:expr) => {
        match $self {
            Env::Avoidance1D($e) => $body,
            Env::Avoidance2D($e) => $body,
            Env::Maze($e) => $body,
            Env::PredatorPrey1D($e) => $body,
            Env::PredatorPrey2D($e) => $body,
            Env::Pong($e) => $body,
            Env::Breakout($e) => $body,
        }
    };
}

impl Environment for Env {
    fn action_space(&self) -> ActionSpace {
        dispatch!(self, e => e.action_space())
    }
    fn layout(&self) -> MeaLayout {
        dispatch!(self, e => e.layout())
    }
    fn sense(
        &self,
        layout: &MeaLayout,
        codec: &CodecParams,
    ) -> Result<Vec<StimulusCommand>, EnvError> {
        dispatch!(self, e => e.sense(layout, codec))
    }
    fn step(&mut self, action: Action) -> Step {
        dispatch!(self, e => e.step(action))
    }
    fn snapshot(&self) -> serde_json::Value {
        dispatch!(self, e => e.snapshot())
    }
    fn window_ms(&self, codec: &CodecParams) -> f64 {
        dispatch!(self, e => e.window_ms(codec))
    }
    fn timestep(&self) -> u64 {
        dispatch!(self, e => e.timestep())
    }
}
