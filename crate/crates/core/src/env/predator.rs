use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{move_1d, move_2d, ActionSpace, EnvError, Environment, Outcome, Step};
use crate::codec::{encode_position_at, encode_position_spatial, encode_xy, Action, CodecParams, XyMode};
use crate::feedback::FeedbackSignal;
use crate::mea::{MeaLayout, StimulusCommand};

/// How the prey moves between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreyPolicy {
    #[default]
    Stationary,
    /// Uniform −1 / 0 / +1 each step.
    Random,
    /// One step per timestep, turning round at the ends of the track.
    Predictable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryConfig {
    pub start: u32,
    pub danger_radius: u32,
    /// Punishment multiplier for getting caught ("high" amplitude).
    pub magnitude: f64,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            start: 8,
            danger_radius: 2,
            magnitude: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredatorPrey1DConfig {
    pub positions: u32,
    /// Steps allowed per capture; `None` disables the timeout.
    pub z: Option<u32>,
    pub prey_policy: PreyPolicy,
    pub adversary: Option<AdversaryConfig>,
    pub predator_start: Option<u32>,
    pub prey_start: Option<u32>,
}

impl Default for PredatorPrey1DConfig {
    fn default() -> Self {
        Self {
            positions: 8,
            z: Some(15),
            prey_policy: PreyPolicy::Stationary,
            adversary: None,
            predator_start: None,
            prey_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredatorPreyState {
    pub predator_pos: u32,
    pub prey_pos: u32,
    pub time_since_reward: u32,
    pub adversary_pos: Option<u32>,
    /// Heading of a predictable prey (+1 or −1).
    pub prey_heading: i32,
}

/// Uniform position in `1..=n` other than `excluded`.
fn respawn(rng: &mut ChaCha8Rng, n: u32, excluded: u32) -> u32 {
    let k = rng.random_range(1..n);
    if k >= excluded {
        k + 1
    } else {
        k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredatorPrey1D {
    cfg: PredatorPrey1DConfig,
    state: PredatorPreyState,
    t: u64,
    rng: ChaCha8Rng,
}

impl PredatorPrey1D {
    pub fn new(cfg: PredatorPrey1DConfig, seed: u64) -> Result<Self, EnvError> {
        let n = cfg.positions;
        if n < 2 {
            return Err(EnvError::InvalidConfig("need at least two positions".into()));
        }
        if cfg.z == Some(0) {
            return Err(EnvError::InvalidConfig("z must be positive".into()));
        }
        let on_track = |p: Option<u32>| p.is_none_or(|p| (1..=n).contains(&p));
        let adv_start = cfg.adversary.as_ref().map(|a| a.start);
        if !on_track(cfg.predator_start) || !on_track(cfg.prey_start) || !on_track(adv_start) {
            return Err(EnvError::InvalidConfig(format!("start positions must lie in 1..={n}")));
        }
        if cfg.adversary.as_ref().is_some_and(|a| a.danger_radius == 0) {
            return Err(EnvError::InvalidConfig("danger radius must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let predator = cfg.predator_start.unwrap_or_else(|| rng.random_range(1..=n));
        let prey = match cfg.prey_start {
            Some(p) if p != predator => p,
            _ => respawn(&mut rng, n, predator),
        };
        Ok(Self {
            state: PredatorPreyState {
                predator_pos: predator,
                prey_pos: prey,
                time_since_reward: 0,
                adversary_pos: adv_start,
                prey_heading: 1,
            },
            cfg,
            t: 0,
            rng,
        })
    }

    pub fn state(&self) -> &PredatorPreyState {
        &self.state
    }

    pub fn set_state(&mut self, state: PredatorPreyState) {
        self.state = state;
    }

    pub fn config(&self) -> &PredatorPrey1DConfig {
        &self.cfg
    }

    fn move_prey(&mut self) {
        let n = self.cfg.positions;
        let s = &mut self.state;
        match self.cfg.prey_policy {
            PreyPolicy::Stationary => {}
            PreyPolicy::Random => {
                let d = self.rng.random_range(-1i32..=1);
                s.prey_pos = (s.prey_pos as i32 + d).clamp(1, n as i32) as u32;
            }
            PreyPolicy::Predictable => {
                let next = s.prey_pos as i32 + s.prey_heading;
                if next < 1 || next > n as i32 {
                    s.prey_heading = -s.prey_heading;
                }
                s.prey_pos = (s.prey_pos as i32 + s.prey_heading).clamp(1, n as i32) as u32;
            }
        }
    }
}

impl Environment for PredatorPrey1D {
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
        let c = layout.group("C")?;
        let mut cmds = vec![
            encode_position_spatial(self.state.prey_pos, c, codec)?,
            encode_position_spatial(self.state.predator_pos, layout.group("D")?, codec)?,
        ];
        if let Some(adv) = self.state.adversary_pos {
            cmds.push(encode_position_at(
                adv,
                c,
                codec,
                codec.adversary_frequency_hz,
                codec.window_ms,
            )?);
        }
        Ok(cmds)
    }

    fn step(&mut self, action: Action) -> Step {
        let n = self.cfg.positions;
        self.t += 1;
        if let Some(adv) = self.state.adversary_pos {
            let p = self.state.predator_pos;
            self.state.adversary_pos = Some(match adv.cmp(&p) {
                std::cmp::Ordering::Less => adv + 1,
                std::cmp::Ordering::Greater => adv - 1,
                std::cmp::Ordering::Equal => adv,
            });
        }
        self.state.predator_pos = move_1d(self.state.predator_pos, action, n);
        let s = &mut self.state;

        if let (Some(adv), Some(ac)) = (s.adversary_pos, self.cfg.adversary.as_ref()) {
            if s.predator_pos.abs_diff(adv) < ac.danger_radius {
                let safe: Vec<u32> = (1..=n).filter(|p| p.abs_diff(adv) >= ac.danger_radius).collect();
                s.predator_pos = if safe.is_empty() {
                    self.rng.random_range(1..=n)
                } else {
                    safe[self.rng.random_range(0..safe.len())]
                };
                s.time_since_reward = 0;
                return Step::with(Some(FeedbackSignal::punishment(ac.magnitude)), Some(Outcome::Danger));
            }
        }
        if s.predator_pos == s.prey_pos {
            s.prey_pos = respawn(&mut self.rng, n, s.predator_pos);
            s.time_since_reward = 0;
            return Step::with(Some(FeedbackSignal::reward()), Some(Outcome::Capture));
        }
        s.time_since_reward += 1;
        if self.cfg.z.is_some_and(|z| s.time_since_reward >= z) {
            s.prey_pos = respawn(&mut self.rng, n, s.predator_pos);
            s.time_since_reward = 0;
            return Step::with(Some(FeedbackSignal::punishment(1.0)), Some(Outcome::Timeout));
        }
        self.move_prey();
        Step::default()
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
pub struct PredatorPrey2DConfig {
    pub grid_size: u32,
    /// Steps allowed per capture; `None` disables the timeout.
    pub z: Option<u32>,
}

impl Default for PredatorPrey2DConfig {
    fn default() -> Self {
        Self {
            grid_size: 10,
            z: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredatorPrey2DState {
    pub predator_pos: (u32, u32),
    pub prey_pos: (u32, u32),
    pub time_since_reward: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredatorPrey2D {
    cfg: PredatorPrey2DConfig,
    state: PredatorPrey2DState,
    t: u64,
    rng: ChaCha8Rng,
}

impl PredatorPrey2D {
    pub fn new(cfg: PredatorPrey2DConfig, seed: u64) -> Result<Self, EnvError> {
        if cfg.grid_size < 2 || cfg.z == Some(0) {
            return Err(EnvError::InvalidConfig("grid needs 2+ cells and z > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.grid_size;
        let predator = (rng.random_range(0..n), rng.random_range(0..n));
        let prey = Self::spawn(&mut rng, n, predator);
        Ok(Self {
            cfg,
            state: PredatorPrey2DState {
                predator_pos: predator,
                prey_pos: prey,
                time_since_reward: 0,
            },
            t: 0,
            rng,
        })
    }

    fn spawn(rng: &mut ChaCha8Rng, n: u32, avoid: (u32, u32)) -> (u32, u32) {
        loop {
            let p = (rng.random_range(0..n), rng.random_range(0..n));
            if p != avoid {
                return p;
            }
        }
    }

    pub fn state(&self) -> &PredatorPrey2DState {
        &self.state
    }

    pub fn set_state(&mut self, state: PredatorPrey2DState) {
        self.state = state;
    }
}

impl Environment for PredatorPrey2D {
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
        let (c, d) = (layout.group("C")?, layout.group("D")?);
        let mut cmds = encode_xy(self.state.prey_pos, (n, n), c, d, XyMode::FreqMod, codec)?;
        cmds.extend(encode_xy(self.state.predator_pos, (n, n), d, c, XyMode::FreqMod, codec)?);
        Ok(cmds)
    }

    fn step(&mut self, action: Action) -> Step {
        let n = self.cfg.grid_size;
        self.t += 1;
        let s = &mut self.state;
        s.predator_pos = move_2d(s.predator_pos, action, (n, n));
        if s.predator_pos == s.prey_pos {
            s.prey_pos = Self::spawn(&mut self.rng, n, s.predator_pos);
            s.time_since_reward = 0;
            return Step::with(Some(FeedbackSignal::reward()), Some(Outcome::Capture));
        }
        s.time_since_reward += 1;
        if self.cfg.z.is_some_and(|z| s.time_since_reward >= z) {
            s.prey_pos = Self::spawn(&mut self.rng, n, s.predator_pos);
            s.time_since_reward = 0;
            return Step::with(Some(FeedbackSignal::punishment(1.0)), Some(Outcome::Timeout));
        }
        Step::default()
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&self.state).expect("plain data")
    }

    fn timestep(&self) -> u64 {
        self.t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiOrganoidState {
    pub predator_pos: u32,
    pub prey_pos: u32,
    pub round: u64,
}

/// Feedback for both players after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub predator: Option<FeedbackSignal>,
    pub prey: Option<FeedbackSignal>,
    pub capture: bool,
}

/// Shared 1D track with one agent controlling the predator and another
/// controlling the prey. Each round the predator acts first, then the prey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiOrganoid {
    positions: u32,
    reset: (u32, u32),
    state: MultiOrganoidState,
}

impl Default for MultiOrganoid {
    fn default() -> Self {
        Self::new(8, (5, 3))
    }
}

/// Chooses an action from (own position, other position).
pub type Policy<'a, E> = dyn FnMut(u32, u32) -> Result<Action, E> + 'a;

impl MultiOrganoid {
    pub fn new(positions: u32, reset: (u32, u32)) -> Self {
        Self {
            positions,
            reset,
            state: MultiOrganoidState {
                predator_pos: reset.0,
                prey_pos: reset.1,
                round: 0,
            },
        }
    }

    pub fn state(&self) -> &MultiOrganoidState {
        &self.state
    }

    pub fn layout(&self) -> MeaLayout {
        MeaLayout::standard(self.positions)
    }

    /// Own position on D, the other player on C.
    pub fn sense(
        own: u32,
        other: u32,
        layout: &MeaLayout,
        codec: &CodecParams,
    ) -> Result<Vec<StimulusCommand>, EnvError> {
        Ok(vec![
            encode_position_spatial(own, layout.group("D")?, codec)?,
            encode_position_spatial(other, layout.group("C")?, codec)?,
        ])
    }

    /// Run one round. `agents[0]` plays the predator and `agents[1]` the prey.
    pub fn round<E: From<EnvError>>(
        &mut self,
        agents: &mut [&mut Policy<'_, E>],
    ) -> Result<RoundResult, E> {
        if agents.len() < 2 {
            return Err(EnvError::NotEnoughAgents(agents.len()).into());
        }
        let n = self.positions;
        let s = &mut self.state;
        s.round += 1;
        let a = (agents[0])(s.predator_pos, s.prey_pos)?;
        s.predator_pos = move_1d(s.predator_pos, a, n);
        let a = (agents[1])(s.prey_pos, s.predator_pos)?;
        s.prey_pos = move_1d(s.prey_pos, a, n);
        if s.predator_pos == s.prey_pos {
            (s.predator_pos, s.prey_pos) = self.reset;
            return Ok(RoundResult {
                predator: Some(FeedbackSignal::reward()),
                prey: Some(FeedbackSignal::punishment(1.0)),
                capture: true,
            });
        }
        Ok(RoundResult {
            predator: None,
            prey: None,
            capture: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::FeedbackKind;

    fn env() -> PredatorPrey1D {
        PredatorPrey1D::new(PredatorPrey1DConfig::default(), 0).unwrap()
    }

    fn at(pred: u32, prey: u32, timer: u32) -> PredatorPreyState {
        PredatorPreyState {
            predator_pos: pred,
            prey_pos: prey,
            time_since_reward: timer,
            adversary_pos: None,
            prey_heading: 1,
        }
    }

    #[test]
    fn capture_and_timeout() {
        let mut e = env();
        e.set_state(at(3, 4, 0));
        let s = e.step(Action::Right);
        assert_eq!(s.outcome, Some(Outcome::Capture));
        assert_eq!(s.feedback, Some(FeedbackSignal::reward()));
        assert_ne!(e.state().prey_pos, 3);
        assert_eq!(e.state().time_since_reward, 0);

        e.set_state(at(1, 8, 14));
        let s = e.step(Action::Stay);
        assert_eq!(s.outcome, Some(Outcome::Timeout));
        assert_eq!(s.feedback.unwrap().kind, FeedbackKind::Punishment);
        assert_ne!(e.state().prey_pos, 1);
        assert_eq!(e.state().time_since_reward, 0);
    }

    #[test]
    fn respawn_is_uniform_over_other_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 9];
        for _ in 0..70_000 {
            counts[respawn(&mut rng, 8, 3) as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        assert_eq!(counts[3], 0);
        for (p, &c) in counts.iter().enumerate().filter(|&(p, _)| p != 0 && p != 3) {
            assert!((c as f64 / 10_000.0 - 1.0).abs() < 0.05, "position {p}: {c}");
        }
    }

    #[test]
    fn timer_stays_below_z() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20_000 {
            e.step(Action::BINARY[rng.random_range(0..3)]);
            let s = e.state();
            assert!(s.time_since_reward < 15);
            assert_ne!(s.predator_pos, s.prey_pos);
            assert!((1..=8).contains(&s.predator_pos) && (1..=8).contains(&s.prey_pos));
        }
    }

    #[test]
    fn prey_policies_stay_on_track() {
        for policy in [PreyPolicy::Random, PreyPolicy::Predictable] {
            let cfg = PredatorPrey1DConfig {
                prey_policy: policy,
                z: None,
                predator_start: Some(1),
                prey_start: Some(7),
                ..Default::default()
            };
            let mut e = PredatorPrey1D::new(cfg, 1).unwrap();
            let mut visited = std::collections::BTreeSet::new();
            for _ in 0..200 {
                e.step(Action::Stay);
                visited.insert(e.state().prey_pos);
                assert!((1..=8).contains(&e.state().prey_pos));
            }
            assert!(visited.len() > 2, "{policy:?}");
        }
    }

    fn adversary_env(pred: u32, adv: u32, prey: u32) -> PredatorPrey1D {
        let cfg = PredatorPrey1DConfig {
            adversary: Some(AdversaryConfig::default()),
            ..Default::default()
        };
        let mut e = PredatorPrey1D::new(cfg, 0).unwrap();
        e.set_state(PredatorPreyState {
            adversary_pos: Some(adv),
            ..at(pred, prey, 0)
        });
        e
    }

    #[test]
    fn adversary_moves_toward_predator_first() {
        let mut e = adversary_env(5, 8, 2);
        let s = e.step(Action::Stay);
        assert_eq!(e.state().adversary_pos, Some(7));
        assert!(s.feedback.is_none());

        let mut e = adversary_env(4, 6, 2);
        let s = e.step(Action::Stay);
        assert_eq!(e.state().adversary_pos, Some(5));
        assert_eq!(s.outcome, Some(Outcome::Danger));
        assert_eq!(s.feedback, Some(FeedbackSignal::punishment(1.5)));
        assert!(e.state().predator_pos.abs_diff(5) >= 2);
    }

    #[test]
    fn danger_precedes_capture() {
        // Prey and adversary both adjacent: moving onto the prey also lands
        // inside the danger radius.
        for (pred, adv, prey, a) in [(4, 6, 5, Action::Right), (5, 3, 4, Action::Left)] {
            let mut e = adversary_env(pred, adv, prey);
            let s = e.step(a);
            assert_eq!(s.outcome, Some(Outcome::Danger), "{pred} {adv} {prey}");
        }
    }

    #[test]
    fn adversary_pattern_differs_from_prey() {
        let e = adversary_env(1, 6, 6);
        let layout = e.layout();
        let cmds = e.sense(&layout, &CodecParams::default()).unwrap();
        assert_eq!(cmds.len(), 3);
        assert_eq!(cmds[0].targets(), cmds[2].targets());
        assert_ne!(cmds[0], cmds[2]);
        assert_ne!(cmds[0].frequency_hz(), cmds[2].frequency_hz());
    }

    #[test]
    fn sense_places_prey_on_c_and_self_on_d() {
        let mut e = env();
        e.set_state(at(2, 6, 0));
        let layout = e.layout();
        let cmds = e.sense(&layout, &CodecParams::default()).unwrap();
        assert_eq!(cmds[0].targets(), &[14]);
        assert_eq!(cmds[1].targets(), &[2]);
    }

    #[test]
    fn two_d_capture_and_bounds() {
        let mut e = PredatorPrey2D::new(PredatorPrey2DConfig::default(), 1).unwrap();
        e.set_state(PredatorPrey2DState {
            predator_pos: (3, 3),
            prey_pos: (3, 4),
            time_since_reward: 0,
        });
        assert_eq!(e.step(Action::Up).outcome, Some(Outcome::Capture));
        assert_ne!(e.state().prey_pos, (3, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100_000 {
            e.step(Action::FOUR_WAY[rng.random_range(0..5)]);
            let (x, y) = e.state().predator_pos;
            assert!(x < 10 && y < 10);
        }
        let layout = e.layout();
        let cmds = e.sense(&layout, &CodecParams::default()).unwrap();
        assert_eq!(cmds.len(), 2);
    }

    #[test]
    fn multi_organoid_turn_order_and_feedback() {
        let mut game = MultiOrganoid::default();
        let mut seen = Vec::new();
        let mut pred = |own: u32, other: u32| -> Result<Action, EnvError> {
            seen.push(("pred", own, other));
            Ok(Action::Left)
        };
        let mut prey_log = Vec::new();
        let mut prey = |own: u32, other: u32| -> Result<Action, EnvError> {
            prey_log.push((own, other));
            Ok(Action::Right)
        };
        let r = game.round(&mut [&mut pred, &mut prey]).unwrap();
        // Predator moved 5 -> 4 before the prey saw it.
        assert_eq!(prey_log, vec![(3, 4)]);
        assert!(r.capture);
        assert_eq!(r.predator, Some(FeedbackSignal::reward()));
        assert_eq!(r.prey.unwrap().kind, FeedbackKind::Punishment);
        assert_eq!((game.state().predator_pos, game.state().prey_pos), (5, 3));
        assert_eq!(seen, vec![("pred", 5, 3)]);

        let mut stay = |_: u32, _: u32| -> Result<Action, EnvError> { Ok(Action::Stay) };
        let mut stay2 = |_: u32, _: u32| -> Result<Action, EnvError> { Ok(Action::Stay) };
        let r = game.round(&mut [&mut stay, &mut stay2]).unwrap();
        assert!(!r.capture && r.predator.is_none() && r.prey.is_none());
        assert_eq!(
            game.round::<EnvError>(&mut [&mut stay]),
            Err(EnvError::NotEnoughAgents(1))
        );
    }
}
