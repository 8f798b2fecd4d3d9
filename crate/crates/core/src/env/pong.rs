//! Paddle games on a continuous court with constant-speed reflection
//! physics. Every bounce only negates a velocity component, so the ball's
//! speed is preserved bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActionSpace, EnvError, Environment, Outcome, Step};
use crate::codec::{encode_position_at, encode_rate, Action, CodecParams, PaddleAxis};
use crate::feedback::FeedbackSignal;
use crate::mea::{MeaLayout, StimulusCommand};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PongConfig {
    pub width: u32,
    pub height: u32,
    /// Paddle covers `center ± half_length` cells.
    pub half_length: u32,
    /// Cells per step.
    pub ball_speed: f64,
    /// Serves leave within ± this angle of the horizontal.
    pub max_serve_angle_deg: f64,
}

impl Default for PongConfig {
    fn default() -> Self {
        Self {
            width: 16,
            height: 12,
            half_length: 2,
            ball_speed: 1.0,
            max_serve_angle_deg: 45.0,
        }
    }
}

impl PongConfig {
    fn validate(&self) -> Result<(), EnvError> {
        if self.width < 4 || self.height < 2 * self.half_length + 1 {
            return Err(EnvError::InvalidConfig("court too small for the paddle".into()));
        }
        if !(self.ball_speed > 0.0 && self.ball_speed < 1.0 + f64::EPSILON) {
            return Err(EnvError::InvalidConfig("ball speed must be in (0, 1] cells/step".into()));
        }
        if !(0.0..90.0).contains(&self.max_serve_angle_deg) {
            return Err(EnvError::InvalidConfig("serve angle must be in [0, 90)".into()));
        }
        Ok(())
    }

    fn serve_velocity(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let max = self.max_serve_angle_deg.to_radians();
        let theta = if max > 0.0 {
            rng.random_range(-max..=max)
        } else {
            0.0
        };
        (self.ball_speed * theta.cos(), self.ball_speed * theta.sin())
    }

    fn layout(&self) -> MeaLayout {
        MeaLayout::standard(self.width.div_ceil(2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Ball {
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

fn reflect(pos: &mut f64, vel: &mut f64, lo: f64, hi: f64) {
    if *pos < lo {
        *pos = 2.0 * lo - *pos;
        *vel = -*vel;
    } else if *pos > hi {
        *pos = 2.0 * hi - *pos;
        *vel = -*vel;
    }
}

fn shift_paddle(center: u32, up: bool, half: u32, span: u32) -> u32 {
    let c = if up { center + 1 } else { center.saturating_sub(1) };
    c.clamp(half, span - 1 - half)
}

fn covers(center: u32, half: u32, pos: f64) -> bool {
    (pos - center as f64).abs() <= half as f64 + 0.5
}

/// Step toward `target`, the scripted reference policy used for checks.
fn track(center: u32, target: f64, toward: Action, away: Action) -> Action {
    let diff = target - center as f64;
    if diff > 0.5 {
        toward
    } else if diff < -0.5 {
        away
    } else {
        Action::Stay
    }
}

/// x on the C∪D electrodes (spatial), distance to the paddle on all of them
/// (rate).
fn ball_code(
    x: f64,
    distance: f64,
    layout: &MeaLayout,
    codec: &CodecParams,
) -> Result<Vec<StimulusCommand>, EnvError> {
    let union = layout.sensory_union()?;
    let idx = (x.round().max(0.0) as u32).min(union.len() as u32 - 1) + 1;
    let window = codec.paddle_window_ms;
    Ok(vec![
        encode_position_at(idx, &union, codec, codec.spatial_frequency_hz, window)?,
        encode_rate(distance, &codec.rate, &union, codec, window)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PongState {
    pub ball: Ball,
    pub paddle_center: u32,
    pub rally: u32,
}

/// Single paddle on the left wall; the other three walls reflect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pong {
    cfg: PongConfig,
    state: PongState,
    t: u64,
    rng: ChaCha8Rng,
}

impl Pong {
    pub fn new(cfg: PongConfig, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        let mut env = Self {
            state: PongState {
                ball: Ball {
                    x: 0.0,
                    y: 0.0,
                    vx: 0.0,
                    vy: 0.0,
                },
                paddle_center: cfg.height / 2,
                rally: 0,
            },
            cfg,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.serve();
        Ok(env)
    }

    /// Put the ball at the court centre heading for the paddle at a random
    /// angle.
    pub fn serve(&mut self) {
        let (vx, vy) = self.cfg.serve_velocity(&mut self.rng);
        self.state.ball = Ball {
            x: (self.cfg.width - 1) as f64 / 2.0,
            y: (self.cfg.height - 1) as f64 / 2.0,
            vx: -vx,
            vy,
        };
    }

    pub fn state(&self) -> &PongState {
        &self.state
    }

    pub fn set_ball(&mut self, ball: Ball) {
        self.state.ball = ball;
    }

    pub fn set_paddle(&mut self, center: u32) {
        let h = self.cfg.half_length;
        self.state.paddle_center = center.clamp(h, self.cfg.height - 1 - h);
    }

    /// Move the paddle toward the ball's row.
    pub fn tracking_action(&self) -> Action {
        track(self.state.paddle_center, self.state.ball.y, Action::Up, Action::Down)
    }
}

impl Environment for Pong {
    fn action_space(&self) -> ActionSpace {
        ActionSpace::Paddle(PaddleAxis::Vertical)
    }

    fn layout(&self) -> MeaLayout {
        self.cfg.layout()
    }

    fn sense(
        &self,
        layout: &MeaLayout,
        codec: &CodecParams,
    ) -> Result<Vec<StimulusCommand>, EnvError> {
        let b = &self.state.ball;
        ball_code(b.x, (b.y - self.state.paddle_center as f64).abs(), layout, codec)
    }

    fn step(&mut self, action: Action) -> Step {
        self.t += 1;
        let (w, h) = ((self.cfg.width - 1) as f64, (self.cfg.height - 1) as f64);
        let half = self.cfg.half_length;
        let s = &mut self.state;
        if matches!(action, Action::Up | Action::Down) {
            s.paddle_center = shift_paddle(s.paddle_center, action == Action::Up, half, self.cfg.height);
        }
        let b = &mut s.ball;
        b.x += b.vx;
        b.y += b.vy;
        reflect(&mut b.y, &mut b.vy, 0.0, h);
        if b.x > w {
            reflect(&mut b.x, &mut b.vx, 0.0, w);
        }
        if b.x <= 0.0 {
            if covers(s.paddle_center, half, b.y) {
                b.x = -b.x;
                b.vx = -b.vx;
                s.rally += 1;
                return Step::with(Some(FeedbackSignal::reward()), Some(Outcome::Hit));
            }
            s.rally = 0;
            self.serve();
            return Step::with(Some(FeedbackSignal::punishment(1.0)), Some(Outcome::Miss));
        }
        Step::default()
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&self.state).expect("plain data")
    }

    fn window_ms(&self, codec: &CodecParams) -> f64 {
        codec.paddle_window_ms
    }

    fn timestep(&self) -> u64 {
        self.t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BreakoutConfig {
    pub court: PongConfig,
    pub brick_rows: u32,
    pub brick_cols: u32,
}

impl Default for BreakoutConfig {
    fn default() -> Self {
        Self {
            court: PongConfig::default(),
            brick_rows: 3,
            brick_cols: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakoutState {
    pub ball: Ball,
    pub paddle_center: u32,
    /// `bricks[row][col]`, row 0 against the top wall.
    pub bricks: Vec<Vec<bool>>,
    pub remaining: u32,
}

/// Paddle along the bottom edge, bricks packed against the top wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakout {
    cfg: BreakoutConfig,
    state: BreakoutState,
    t: u64,
    rng: ChaCha8Rng,
}

impl Breakout {
    pub fn new(cfg: BreakoutConfig, seed: u64) -> Result<Self, EnvError> {
        let c = &cfg.court;
        if c.width < 4 || c.width < 2 * c.half_length + 1 {
            return Err(EnvError::InvalidConfig("court too narrow for the paddle".into()));
        }
        PongConfig {
            height: c.width,
            ..c.clone()
        }
        .validate()?;
        if cfg.brick_cols == 0 || c.width % cfg.brick_cols != 0 {
            return Err(EnvError::InvalidConfig("brick columns must divide the width".into()));
        }
        if cfg.brick_rows == 0 || cfg.brick_rows + 3 > c.height {
            return Err(EnvError::InvalidConfig("brick rows leave no room to play".into()));
        }
        let bricks = vec![vec![true; cfg.brick_cols as usize]; cfg.brick_rows as usize];
        let mut env = Self {
            state: BreakoutState {
                ball: Ball {
                    x: 0.0,
                    y: 0.0,
                    vx: 0.0,
                    vy: 0.0,
                },
                paddle_center: c.width / 2,
                remaining: cfg.brick_rows * cfg.brick_cols,
                bricks,
            },
            cfg,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.serve();
        Ok(env)
    }

    /// Ball at the centre heading down toward the paddle.
    pub fn serve(&mut self) {
        let c = &self.cfg.court;
        let (along, across) = c.serve_velocity(&mut self.rng);
        self.state.ball = Ball {
            x: (c.width - 1) as f64 / 2.0,
            y: (c.height - 1) as f64 / 2.0,
            vx: across,
            vy: -along,
        };
    }

    pub fn state(&self) -> &BreakoutState {
        &self.state
    }

    pub fn is_cleared(&self) -> bool {
        self.state.remaining == 0
    }

    pub fn tracking_action(&self) -> Action {
        track(self.state.paddle_center, self.state.ball.x, Action::Right, Action::Left)
    }

    fn brick_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = &self.cfg.court;
        let row = (c.height - 1) as i64 - y.round() as i64;
        if row < 0 || row >= self.cfg.brick_rows as i64 {
            return None;
        }
        let width = (c.width / self.cfg.brick_cols) as i64;
        let col = ((x.round() as i64) / width).clamp(0, self.cfg.brick_cols as i64 - 1);
        let (row, col) = (row as usize, col as usize);
        self.state.bricks[row][col].then_some((row, col))
    }
}

impl Environment for Breakout {
    fn action_space(&self) -> ActionSpace {
        ActionSpace::Paddle(PaddleAxis::Horizontal)
    }

    fn layout(&self) -> MeaLayout {
        self.cfg.court.layout()
    }

    fn sense(
        &self,
        layout: &MeaLayout,
        codec: &CodecParams,
    ) -> Result<Vec<StimulusCommand>, EnvError> {
        let b = &self.state.ball;
        ball_code(b.x, b.y, layout, codec)
    }

    fn step(&mut self, action: Action) -> Step {
        self.t += 1;
        let c = &self.cfg.court;
        let (w, h, half) = ((c.width - 1) as f64, (c.height - 1) as f64, c.half_length);
        if matches!(action, Action::Left | Action::Right) {
            self.state.paddle_center =
                shift_paddle(self.state.paddle_center, action == Action::Right, half, c.width);
        }
        let mut b = self.state.ball;
        b.x += b.vx;
        b.y += b.vy;
        reflect(&mut b.x, &mut b.vx, 0.0, w);
        if b.y > h {
            reflect(&mut b.y, &mut b.vy, 0.0, h);
        }
        if let Some((row, col)) = self.brick_at(b.x, b.y) {
            let s = &mut self.state;
            s.bricks[row][col] = false;
            s.remaining -= 1;
            s.ball.vx = b.vx;
            s.ball.vy = -b.vy;
            let mut step = Step::with(Some(FeedbackSignal::reward()), Some(Outcome::Brick));
            step.terminal = s.remaining == 0;
            return step;
        }
        if b.y <= 0.0 {
            if covers(self.state.paddle_center, half, b.x) {
                b.y = -b.y;
                b.vy = -b.vy;
                self.state.ball = b;
                return Step::with(None, Some(Outcome::Hit));
            }
            self.serve();
            return Step::with(Some(FeedbackSignal::punishment(1.0)), Some(Outcome::Miss));
        }
        self.state.ball = b;
        Step::default()
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&self.state).expect("plain data")
    }

    fn window_ms(&self, codec: &CodecParams) -> f64 {
        codec.paddle_window_ms
    }

    fn timestep(&self) -> u64 {
        self.t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersusState {
    pub ball: Ball,
    /// Player 0 on the left wall, player 1 on the right.
    pub paddles: [u32; 2],
    pub rally: u32,
    pub wins: [u64; 2],
}

/// Per-player result of a versus step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VersusStep {
    pub feedback: [Option<FeedbackSignal>; 2],
    pub hit_by: Option<usize>,
    pub missed_by: Option<usize>,
    /// Length of the rally that just ended.
    pub rally_ended: Option<u32>,
}

/// Two paddles, one per wall; a miss rewards the opponent, who serves next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versus {
    cfg: PongConfig,
    state: VersusState,
    t: u64,
    rng: ChaCha8Rng,
}

impl Versus {
    pub fn new(cfg: PongConfig, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        let mid = cfg.height / 2;
        let mut env = Self {
            state: VersusState {
                ball: Ball {
                    x: 0.0,
                    y: 0.0,
                    vx: 0.0,
                    vy: 0.0,
                },
                paddles: [mid, mid],
                rally: 0,
                wins: [0, 0],
            },
            cfg,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.serve(1);
        Ok(env)
    }

    /// Serve from the centre away from `server`.
    pub fn serve(&mut self, server: usize) {
        let (vx, vy) = self.cfg.serve_velocity(&mut self.rng);
        self.state.ball = Ball {
            x: (self.cfg.width - 1) as f64 / 2.0,
            y: (self.cfg.height - 1) as f64 / 2.0,
            vx: if server == 1 { -vx } else { vx },
            vy,
        };
    }

    pub fn state(&self) -> &VersusState {
        &self.state
    }

    pub fn layout(&self) -> MeaLayout {
        self.cfg.layout()
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn tracking_action(&self, player: usize) -> Action {
        track(self.state.paddles[player], self.state.ball.y, Action::Up, Action::Down)
    }

    /// Both players see the ball; the rate code carries distance to their
    /// own paddle.
    pub fn sense(
        &self,
        player: usize,
        layout: &MeaLayout,
        codec: &CodecParams,
    ) -> Result<Vec<StimulusCommand>, EnvError> {
        let b = &self.state.ball;
        ball_code(b.x, (b.y - self.state.paddles[player] as f64).abs(), layout, codec)
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&self.state).expect("plain data")
    }

    pub fn step(&mut self, actions: [Action; 2]) -> VersusStep {
        self.t += 1;
        let (w, h, half) = (
            (self.cfg.width - 1) as f64,
            (self.cfg.height - 1) as f64,
            self.cfg.half_length,
        );
        let s = &mut self.state;
        for (p, a) in actions.into_iter().enumerate() {
            if matches!(a, Action::Up | Action::Down) {
                s.paddles[p] = shift_paddle(s.paddles[p], a == Action::Up, half, self.cfg.height);
            }
        }
        let b = &mut s.ball;
        b.x += b.vx;
        b.y += b.vy;
        reflect(&mut b.y, &mut b.vy, 0.0, h);
        let player = if b.x <= 0.0 {
            0
        } else if b.x >= w {
            1
        } else {
            return VersusStep::default();
        };
        if covers(s.paddles[player], half, b.y) {
            reflect(&mut b.x, &mut b.vx, 0.0, w);
            if b.x == 0.0 || b.x == w {
                b.vx = if player == 0 { b.vx.abs() } else { -b.vx.abs() };
            }
            s.rally += 1;
            return VersusStep {
                hit_by: Some(player),
                ..VersusStep::default()
            };
        }
        let other = 1 - player;
        let rally = std::mem::take(&mut s.rally);
        s.wins[other] += 1;
        let mut feedback = [None, None];
        feedback[player] = Some(FeedbackSignal::punishment(1.0));
        feedback[other] = Some(FeedbackSignal::reward());
        self.serve(other);
        VersusStep {
            feedback,
            hit_by: None,
            missed_by: Some(player),
            rally_ended: Some(rally),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::FeedbackKind;

    #[test]
    fn aligned_paddle_intercepts() {
        let mut p = Pong::new(PongConfig::default(), 0).unwrap();
        p.set_paddle(6);
        p.set_ball(Ball {
            x: 1.0,
            y: 6.0,
            vx: -1.0,
            vy: 0.0,
        });
        let s = p.step(Action::Stay);
        assert_eq!(s.outcome, Some(Outcome::Hit));
        assert_eq!(s.feedback, Some(FeedbackSignal::reward()));
        assert_eq!(p.state().ball.vx, 1.0);
    }

    #[test]
    fn misaligned_paddle_misses_and_reserves() {
        let mut p = Pong::new(PongConfig::default(), 0).unwrap();
        p.set_paddle(2);
        p.set_ball(Ball {
            x: 1.0,
            y: 10.0,
            vx: -1.0,
            vy: 0.0,
        });
        let s = p.step(Action::Stay);
        assert_eq!(s.outcome, Some(Outcome::Miss));
        assert_eq!(s.feedback.unwrap().kind, FeedbackKind::Punishment);
        let b = p.state().ball;
        assert_eq!((b.x, b.y), (7.5, 5.5));
        assert!(b.vx < 0.0 && b.vx.abs() >= b.vy.abs() - 1e-12);
    }

    #[test]
    fn top_wall_reflection_preserves_speed() {
        let mut p = Pong::new(PongConfig::default(), 0).unwrap();
        p.set_ball(Ball {
            x: 8.0,
            y: 10.5,
            vx: -0.6,
            vy: 0.8,
        });
        p.step(Action::Stay);
        let b = p.state().ball;
        assert_eq!((b.vx, b.vy), (-0.6, -0.8));
        assert_eq!(b.speed(), 0.6f64.hypot(0.8));
    }

    #[test]
    fn tracker_intercepts_every_serve() {
        let mut p = Pong::new(PongConfig::default(), 11).unwrap();
        for _ in 0..100 {
            p.serve();
            loop {
                let s = p.step(p.tracking_action());
                match s.outcome {
                    Some(Outcome::Hit) => break,
                    Some(o) => panic!("{o:?}"),
                    None => {}
                }
            }
        }
    }

    #[test]
    fn ball_and_paddle_stay_in_court() {
        let mut p = Pong::new(PongConfig::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut v0 = p.state().ball.speed();
        for _ in 0..200_000 {
            let s = p.step([Action::Up, Action::Down, Action::Stay][rng.random_range(0..3)]);
            let st = p.state();
            assert!((0.0..=15.0).contains(&st.ball.x) && (0.0..=11.0).contains(&st.ball.y));
            assert!((2..=9).contains(&st.paddle_center));
            if s.outcome == Some(Outcome::Miss) {
                v0 = st.ball.speed();
            }
            assert_eq!(st.ball.speed().to_bits(), v0.to_bits());
        }
    }

    #[test]
    fn integer_velocity_speed_is_exact() {
        let mut p = Pong::new(PongConfig::default(), 0).unwrap();
        p.set_ball(Ball {
            x: 7.0,
            y: 3.0,
            vx: -1.0,
            vy: 1.0,
        });
        let mut bounces = 0;
        let mut prev = (p.state().ball.vx, p.state().ball.vy);
        while bounces < 10_000 {
            let s = p.step(p.tracking_action());
            assert_ne!(s.outcome, Some(Outcome::Miss));
            let b = p.state().ball;
            if (b.vx, b.vy) != prev {
                bounces += 1;
                prev = (b.vx, b.vy);
            }
            assert_eq!(b.vx * b.vx + b.vy * b.vy, 2.0);
        }
    }

    #[test]
    fn sense_at_paddle_row_is_max_rate() {
        let mut p = Pong::new(PongConfig::default(), 0).unwrap();
        p.set_paddle(6);
        p.set_ball(Ball {
            x: 4.0,
            y: 6.0,
            vx: -1.0,
            vy: 0.0,
        });
        let codec = CodecParams::default();
        let cmds = p.sense(&p.layout(), &codec).unwrap();
        assert_eq!(cmds[0].targets(), &[5]);
        assert_eq!(cmds[1].frequency_hz(), codec.rate.f_max);
        assert_eq!(cmds[1].targets().len(), 16);
    }

    #[test]
    fn breakout_bricks_and_paddle() {
        let mut b = Breakout::new(BreakoutConfig::default(), 5).unwrap();
        assert_eq!(b.state().remaining, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v0 = b.state().ball.speed();
        let mut brick_hits = 0;
        let mut paddle_hits = 0;
        for i in 0..20_000 {
            let before = b.state().remaining;
            let a = if i % 5 == 0 {
                [Action::Left, Action::Right][rng.random_range(0..2)]
            } else {
                b.tracking_action()
            };
            let s = b.step(a);
            let st = b.state();
            assert!((0.0..=15.0).contains(&st.ball.x) && (0.0..=11.0).contains(&st.ball.y));
            match s.outcome {
                Some(Outcome::Brick) => {
                    brick_hits += 1;
                    assert_eq!(st.remaining, before - 1);
                    assert_eq!(s.feedback, Some(FeedbackSignal::reward()));
                }
                Some(Outcome::Hit) => {
                    paddle_hits += 1;
                    assert!(s.feedback.is_none());
                    assert_eq!(st.remaining, before);
                }
                _ => assert_eq!(st.remaining, before),
            }
            if s.outcome == Some(Outcome::Miss) {
                v0 = st.ball.speed();
            }
            assert_eq!(st.ball.speed().to_bits(), v0.to_bits());
            assert_eq!(
                st.remaining as usize,
                st.bricks.iter().flatten().filter(|&&x| x).count()
            );
            if s.terminal {
                assert!(b.is_cleared());
                break;
            }
        }
        assert!(brick_hits > 0 && paddle_hits > 0);
    }

    #[test]
    fn last_brick_sets_terminal() {
        let cfg = BreakoutConfig {
            brick_rows: 1,
            brick_cols: 1,
            ..Default::default()
        };
        let mut b = Breakout::new(cfg, 0).unwrap();
        let mut done = false;
        for _ in 0..10_000 {
            if b.step(b.tracking_action()).terminal {
                done = true;
                break;
            }
        }
        assert!(done && b.is_cleared());
    }

    #[test]
    fn versus_miss_rewards_opponent() {
        let mut v = Versus::new(PongConfig::default(), 0).unwrap();
        v.state.paddles = [2, 6];
        v.state.ball = Ball {
            x: 1.0,
            y: 10.0,
            vx: -1.0,
            vy: 0.0,
        };
        let s = v.step([Action::Stay, Action::Stay]);
        assert_eq!(s.missed_by, Some(0));
        assert_eq!(s.feedback[0].unwrap().kind, FeedbackKind::Punishment);
        assert_eq!(s.feedback[1], Some(FeedbackSignal::reward()));
        assert_eq!(v.state().wins, [0, 1]);
        // Player 1 serves toward player 0.
        assert!(v.state().ball.vx < 0.0);
    }

    #[test]
    fn versus_rally_counter() {
        let mut v = Versus::new(PongConfig::default(), 2).unwrap();
        let k = 3;
        let mut hits = 0;
        let ended = loop {
            let acts = if hits < k {
                [v.tracking_action(0), v.tracking_action(1)]
            } else {
                // Player 0 stops tracking and walks off the ball.
                let away = if v.state().ball.y > v.state().paddles[0] as f64 {
                    Action::Down
                } else {
                    Action::Up
                };
                [away, v.tracking_action(1)]
            };
            let s = v.step(acts);
            hits += usize::from(s.hit_by.is_some());
            if let Some(r) = s.rally_ended {
                break r;
            }
        };
        assert!(ended as usize >= k);
        assert_eq!(ended as usize, hits);
    }

    #[test]
    fn perfect_trackers_never_miss() {
        let mut v = Versus::new(PongConfig::default(), 9).unwrap();
        let mut hits = 0;
        for _ in 0..10_000 {
            let s = v.step([v.tracking_action(0), v.tracking_action(1)]);
            assert!(s.missed_by.is_none());
            hits += usize::from(s.hit_by.is_some());
        }
        assert!(hits > 500);
    }
}
