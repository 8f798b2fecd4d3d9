use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{move_1d, move_2d, ActionSpace, EnvError, Environment, Outcome, Step};
use crate::codec::{encode_position_spatial, encode_xy, Action, CodecParams, XyMode};
use crate::feedback::FeedbackSignal;
use crate::mea::{MeaLayout, StimulusCommand};

/// When the safe zone pays out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Reward after `z` consecutive safe steps.
    Sustained,
    /// Reward on every safe step.
    EveryStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Avoidance1DConfig {
    pub positions: u32,
    /// Last safe position; positions above it are aversive.
    pub boundary: u32,
    /// Safe steps needed for a reward in sustained mode.
    pub z: u32,
    /// Defaults to sustained, or every-step for the dynamic variant.
    pub reward_mode: Option<RewardMode>,
    /// Steps between boundary shifts; `None` keeps the boundary fixed.
    pub shift_interval: Option<u64>,
    /// Starting position; drawn from the safe zone when absent.
    pub start: Option<u32>,
}

impl Default for Avoidance1DConfig {
    fn default() -> Self {
        Self {
            positions: 8,
            boundary: 5,
            z: 10,
            reward_mode: None,
            shift_interval: None,
            start: None,
        }
    }
}

impl Avoidance1DConfig {
    /// Fill in the non-stationary defaults: every-step reward, a shift every
    /// 100 steps, start at position 4.
    pub fn into_dynamic(mut self) -> Self {
        self.reward_mode.get_or_insert(RewardMode::EveryStep);
        self.shift_interval.get_or_insert(100);
        self.start.get_or_insert(4);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Avoidance1DState {
    pub agent_position: u32,
    pub safe_zone_timer: u32,
    pub boundary: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Avoidance1D {
    cfg: Avoidance1DConfig,
    mode: RewardMode,
    state: Avoidance1DState,
    t: u64,
    rng: ChaCha8Rng,
}

impl Avoidance1D {
    pub fn new(cfg: Avoidance1DConfig, seed: u64) -> Result<Self, EnvError> {
        if cfg.positions < 2 || cfg.boundary < 1 || cfg.boundary > cfg.positions {
            return Err(EnvError::InvalidConfig(format!(
                "boundary {} must lie in 1..={}",
                cfg.boundary, cfg.positions
            )));
        }
        if cfg.z == 0 || cfg.shift_interval == Some(0) {
            return Err(EnvError::InvalidConfig("z and shift interval must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = match cfg.start {
            Some(s) if (1..=cfg.positions).contains(&s) => s,
            Some(s) => return Err(EnvError::InvalidConfig(format!("start {s} off the track"))),
            None => rng.random_range(1..=cfg.boundary),
        };
        Ok(Self {
            mode: cfg.reward_mode.unwrap_or(RewardMode::Sustained),
            state: Avoidance1DState {
                agent_position: start,
                safe_zone_timer: 0,
                boundary: cfg.boundary,
            },
            cfg,
            t: 0,
            rng,
        })
    }

    pub fn state(&self) -> &Avoidance1DState {
        &self.state
    }

    pub fn set_state(&mut self, state: Avoidance1DState) {
        self.state = state;
    }

    /// Advance the step counter and, on each interval, move the boundary one
    /// position left or right with equal probability (clamped to the track).
    pub fn update_boundary(&mut self) {
        self.t += 1;
        if let Some(iv) = self.cfg.shift_interval {
            if self.t % iv == 0 {
                let b = self.state.boundary;
                self.state.boundary = if self.rng.random_bool(0.5) {
                    b.saturating_sub(1).max(1)
                } else {
                    (b + 1).min(self.cfg.positions)
                };
            }
        }
    }
}

impl Environment for Avoidance1D {
    fn action_space(&self) -> ActionSpace {
        ActionSpace::Binary
    }

    fn layout(&self) -> MeaLayout {
        MeaLayout::standard(self.cfg.positions)
    }

    fn sense(
        &self,
        layout: &MeaLayout,
        codec: &CodecParams,
    ) -> Result<Vec<StimulusCommand>, EnvError> {
        let p = self.state.agent_position;
        Ok(vec![
            encode_position_spatial(p, layout.group("D")?, codec)?,
            encode_position_spatial(p, layout.group("C")?, codec)?,
        ])
    }

    fn step(&mut self, action: Action) -> Step {
        let s = &mut self.state;
        s.agent_position = move_1d(s.agent_position, action, self.cfg.positions);
        let safe = s.agent_position <= s.boundary;
        let mut step = if safe {
            s.safe_zone_timer += 1;
            match self.mode {
                RewardMode::EveryStep => {
                    Step::with(Some(FeedbackSignal::reward()), Some(Outcome::SafeReward))
                }
                RewardMode::Sustained if s.safe_zone_timer >= self.cfg.z => {
                    s.safe_zone_timer = 0;
                    Step::with(Some(FeedbackSignal::reward()), Some(Outcome::SafeReward))
                }
                RewardMode::Sustained => Step::default(),
            }
        } else {
            s.safe_zone_timer = 0;
            let depth = (s.agent_position - s.boundary) as f64;
            Step::with(Some(FeedbackSignal::punishment(depth)), Some(Outcome::Aversive))
        };
        step.safe = Some(safe);
        self.update_boundary();
        step
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&self.state).expect("plain data")
    }

    fn timestep(&self) -> u64 {
        self.t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Avoidance2DConfig {
    pub grid_size: u32,
    /// Defaults to every-step reward.
    pub reward_mode: Option<RewardMode>,
    pub z: u32,
}

impl Default for Avoidance2DConfig {
    fn default() -> Self {
        Self {
            grid_size: 10,
            reward_mode: None,
            z: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid2DState {
    pub agent_position: (u32, u32),
    pub safe_zone_timer: u32,
}

/// Square grid whose right half (x ≥ size/2) is aversive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Avoidance2D {
    cfg: Avoidance2DConfig,
    mode: RewardMode,
    state: Grid2DState,
    t: u64,
}

impl Avoidance2D {
    pub fn new(cfg: Avoidance2DConfig, seed: u64) -> Result<Self, EnvError> {
        if cfg.grid_size < 2 || cfg.z == 0 {
            return Err(EnvError::InvalidConfig("grid needs 2+ cells and z > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = cfg.grid_size / 2;
        let start = (rng.random_range(0..half), rng.random_range(0..cfg.grid_size));
        Ok(Self {
            mode: cfg.reward_mode.unwrap_or(RewardMode::EveryStep),
            state: Grid2DState {
                agent_position: start,
                safe_zone_timer: 0,
            },
            cfg,
            t: 0,
        })
    }

    pub fn state(&self) -> &Grid2DState {
        &self.state
    }

    pub fn set_position(&mut self, pos: (u32, u32)) {
        self.state.agent_position = pos;
    }
}

impl Environment for Avoidance2D {
    fn action_space(&self) -> ActionSpace {
        ActionSpace::FourWay
    }

    fn layout(&self) -> MeaLayout {
        MeaLayout::four_way(self.cfg.grid_size)
    }

    fn sense(
        &self,
        layout: &MeaLayout,
        codec: &CodecParams,
    ) -> Result<Vec<StimulusCommand>, EnvError> {
        let n = self.cfg.grid_size;
        Ok(encode_xy(
            self.state.agent_position,
            (n, n),
            layout.group("C")?,
            layout.group("D")?,
            XyMode::SplitGroups,
            codec,
        )?)
    }

    fn step(&mut self, action: Action) -> Step {
        let n = self.cfg.grid_size;
        let s = &mut self.state;
        s.agent_position = move_2d(s.agent_position, action, (n, n));
        let x = s.agent_position.0;
        let safe = x < n / 2;
        let mut step = if safe {
            s.safe_zone_timer += 1;
            match self.mode {
                RewardMode::EveryStep => {
                    Step::with(Some(FeedbackSignal::reward()), Some(Outcome::SafeReward))
                }
                RewardMode::Sustained if s.safe_zone_timer >= self.cfg.z => {
                    s.safe_zone_timer = 0;
                    Step::with(Some(FeedbackSignal::reward()), Some(Outcome::SafeReward))
                }
                RewardMode::Sustained => Step::default(),
            }
        } else {
            s.safe_zone_timer = 0;
            let depth = (x - n / 2 + 1) as f64;
            Step::with(Some(FeedbackSignal::punishment(depth)), Some(Outcome::Aversive))
        };
        step.safe = Some(safe);
        self.t += 1;
        step
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&self.state).expect("plain data")
    }

    fn timestep(&self) -> u64 {
        self.t
    }
}

/// 1 = path, 0 = wall, indexed `[y][x]`.
pub const MAZE_LAYOUT: [[u8; 5]; 5] = [
    [1, 1, 1, 0, 1],
    [0, 1, 0, 0, 1],
    [1, 1, 1, 1, 1],
    [1, 0, 1, 0, 1],
    [1, 1, 1, 0, 1],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazeConfig {
    pub layout: Vec<Vec<u8>>,
    pub start: (u32, u32),
    pub goal: (u32, u32),
}

impl Default for MazeConfig {
    fn default() -> Self {
        Self {
            layout: MAZE_LAYOUT.iter().map(|r| r.to_vec()).collect(),
            start: (0, 0),
            goal: (4, 4),
        }
    }
}

impl MazeConfig {
    fn dims(&self) -> (u32, u32) {
        (self.layout[0].len() as u32, self.layout.len() as u32)
    }

    pub fn is_path(&self, (x, y): (u32, u32)) -> bool {
        self.layout
            .get(y as usize)
            .and_then(|row| row.get(x as usize))
            .is_some_and(|&c| c == 1)
    }
}

/// Grid maze: walls punish and block, the goal rewards and sends the agent
/// back to the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maze {
    cfg: MazeConfig,
    agent_position: (u32, u32),
    t: u64,
}

impl Maze {
    pub fn new(cfg: MazeConfig) -> Result<Self, EnvError> {
        let width = cfg.layout.first().map_or(0, Vec::len);
        if width == 0 || cfg.layout.iter().any(|r| r.len() != width) {
            return Err(EnvError::InvalidConfig("maze must be a non-empty rectangle".into()));
        }
        if !cfg.is_path(cfg.start) || !cfg.is_path(cfg.goal) || cfg.start == cfg.goal {
            return Err(EnvError::InvalidConfig("start and goal must be distinct path cells".into()));
        }
        Ok(Self {
            agent_position: cfg.start,
            cfg,
            t: 0,
        })
    }

    pub fn position(&self) -> (u32, u32) {
        self.agent_position
    }

    pub fn config(&self) -> &MazeConfig {
        &self.cfg
    }

    /// Cell the action points at, or `None` when it leaves the grid.
    pub fn next_pos(&self, action: Action) -> Option<(u32, u32)> {
        let (x, y) = self.agent_position;
        let (w, h) = self.cfg.dims();
        let (nx, ny) = match action {
            Action::Up => (x as i64, y as i64 + 1),
            Action::Down => (x as i64, y as i64 - 1),
            Action::Left => (x as i64 - 1, y as i64),
            Action::Right => (x as i64 + 1, y as i64),
            Action::Stay => (x as i64, y as i64),
        };
        ((0..w as i64).contains(&nx) && (0..h as i64).contains(&ny)).then_some((nx as u32, ny as u32))
    }
}

impl Environment for Maze {
    fn action_space(&self) -> ActionSpace {
        ActionSpace::FourWay
    }

    fn layout(&self) -> MeaLayout {
        let (w, h) = self.cfg.dims();
        MeaLayout::four_way(w.max(h))
    }

    fn sense(
        &self,
        layout: &MeaLayout,
        codec: &CodecParams,
    ) -> Result<Vec<StimulusCommand>, EnvError> {
        Ok(encode_xy(
            self.agent_position,
            self.cfg.dims(),
            layout.group("C")?,
            layout.group("D")?,
            XyMode::SplitGroups,
            codec,
        )?)
    }

    fn step(&mut self, action: Action) -> Step {
        self.t += 1;
        if action == Action::Stay {
            return Step::default();
        }
        match self.next_pos(action).filter(|&p| self.cfg.is_path(p)) {
            None => Step::with(Some(FeedbackSignal::punishment(1.0)), Some(Outcome::Wall)),
            Some(p) if p == self.cfg.goal => {
                self.agent_position = self.cfg.start;
                Step::with(Some(FeedbackSignal::reward()), Some(Outcome::Goal))
            }
            Some(p) => {
                self.agent_position = p;
                Step::default()
            }
        }
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({ "agent_position": self.agent_position })
    }

    fn timestep(&self) -> u64 {
        self.t
    }
}
