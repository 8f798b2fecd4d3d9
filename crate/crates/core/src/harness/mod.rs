//! Experiment runner: configuration, seeding, the closed loop itself, the
//! event log and the files written for each run.
//!
//! One environment step is one decode window of simulated time; nothing
//! sleeps. Every random stream is derived from the master seed by
//! [`sub_seed`], so a config and seed fully determine the event log.

mod log;
mod report;

pub use log::{
    compute_metrics, read_events, BlockMetrics, Event, EventKind, FeedbackLog, LogError,
    MetricTable, Metrics, MetricsAccumulator, ProbeEvent, StepEvent,
};
pub use report::{metrics_csv, plasticity_csv, read_metrics_csv, report, write_outputs, MetricsRow};

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{Agent, AgentError, ElectrodeMap, NetworkConfig};
use crate::codec::{
    binary_from_counts, four_way_from_counts, Action, CodecError, CodecParams, PaddleAxis,
};
use crate::env::{
    ActionSpace, Env, EnvConfig, EnvError, Environment, MultiOrganoid, Outcome, PredatorPrey1DConfig,
    Versus,
};
use crate::feedback::{
    deliver_with, Channel, FeedbackError, FeedbackEvent, FeedbackKind, FeedbackParams,
    FeedbackSignal,
};
use crate::mea::{
    apply_stimulus, record_groups, ElectrodeGroup, ElectrodeId, GroupRole, MeaError, MeaLayout,
};
use crate::probe::{
    classify, measure_fepsp, pairing_session, PairingOrder, PairingParams, PlasticityMeasurement,
    PlasticityReport, ProbeError, ProbeParams,
};
use crate::protocol::{parse_protocol, validate, ProtocolSpec, ValidationError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("protocol rejected: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Protocol(Vec<ValidationError>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("event log write failed: {0}")]
    Log(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Mea(#[from] MeaError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Events(#[from] LogError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `SHA-256(master as 8 little-endian bytes ‖ label)`, first 8 bytes read
/// little-endian.
pub fn sub_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

/// Seeds handed to each component. Player 1 in two-player modes uses the
/// labels `agent/1` and `noise/1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSeeds {
    pub agent: u64,
    pub noise: u64,
    pub env: u64,
    pub feedback: u64,
    pub baseline: u64,
}

impl SubSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            agent: sub_seed(master, "agent"),
            noise: sub_seed(master, "noise"),
            env: sub_seed(master, "env"),
            feedback: sub_seed(master, "feedback"),
            baseline: sub_seed(master, "baseline"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Single,
    /// Two agents play Pong against each other (`env` must be `pong`).
    Versus,
    /// One agent hunts, another flees (`env` must be `predator_prey1d`).
    MultiOrganoid,
}

/// How feedback turns into a neuromodulatory signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRule {
    /// Subtract a running estimate of the feedback signal, so only better
    /// or worse than expected outcomes change weights:
    /// `signal = (s − s̄) / (1 + |s̄|)`, then `s̄ += rate · (s − s̄)`.
    pub expected_reward: bool,
    pub expectation_rate: f64,
    /// Zero eligibility after each delivery so credit does not leak into the
    /// next decision.
    pub clear_after_feedback: bool,
}

impl Default for LearningRule {
    fn default() -> Self {
        Self {
            expected_reward: true,
            expectation_rate: 0.1,
            clear_after_feedback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSchedule {
    pub enabled: bool,
    /// Probe after every `every_blocks` blocks (and once before training).
    pub every_blocks: u64,
    /// Stimulation electrode; first electrode of group C when absent.
    pub electrode: Option<ElectrodeId>,
    /// Recording group; the first recording group when absent.
    pub group: Option<String>,
    pub params: ProbeParams,
}

impl Default for ProbeSchedule {
    fn default() -> Self {
        Self {
            enabled: true,
            every_blocks: 1,
            electrode: None,
            group: None,
            params: ProbeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub mode: Mode,
    /// Its `seed` fields are replaced by sub-seeds of `seed`.
    pub network: NetworkConfig,
    pub codec: CodecParams,
    pub feedback: FeedbackParams,
    /// Protocol document overriding `feedback` (and curriculum fields).
    pub protocol: Option<PathBuf>,
    pub learning: LearningRule,
    pub trials: u64,
    pub trials_per_block: u64,
    /// A trial that runs this long without an outcome is closed as a failure.
    pub max_steps_per_trial: u32,
    pub probe: ProbeSchedule,
    pub seed: u64,
    /// Skip the agent and pick actions uniformly at random.
    pub baseline_random: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            mode: Mode::Single,
            network: NetworkConfig::default(),
            codec: CodecParams::default(),
            feedback: FeedbackParams::default(),
            protocol: None,
            learning: LearningRule::default(),
            trials: 200,
            trials_per_block: 50,
            max_steps_per_trial: 1000,
            probe: ProbeSchedule::default(),
            seed: 0,
            baseline_random: false,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials_per_block == 0 {
            return Err(HarnessError::Config("trials_per_block must be positive".into()));
        }
        if self.max_steps_per_trial == 0 {
            return Err(HarnessError::Config("max_steps_per_trial must be positive".into()));
        }
        if self.probe.every_blocks == 0 {
            return Err(HarnessError::Config("probe.every_blocks must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.learning.expectation_rate) {
            return Err(HarnessError::Config("learning.expectation_rate must be in [0, 1]".into()));
        }
        match (self.mode, &self.env) {
            (Mode::Versus, EnvConfig::Pong(_))
            | (Mode::MultiOrganoid, EnvConfig::PredatorPrey1d(_))
            | (Mode::Single, _) => {}
            (m, e) => {
                return Err(HarnessError::Config(format!(
                    "mode {m:?} cannot run environment {}",
                    e.name()
                )))
            }
        }
        self.network.validate()?;
        self.codec.validate()?;
        Ok(())
    }

    /// Fingerprint of everything except the output directory.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let text = serde_json::to_string(&c).expect("plain data");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }

    /// Apply a validated protocol: feedback parameters and curriculum.
    pub fn with_protocol(&self, spec: &ProtocolSpec) -> Result<Self, HarnessError> {
        validate(spec).map_err(HarnessError::Protocol)?;
        let mut cfg = self.clone();
        cfg.feedback = spec.feedback_params(&self.feedback);
        if let Some(c) = &spec.curriculum {
            if let Some(name) = &c.environment {
                if name != cfg.env.name() {
                    cfg.env = EnvConfig::from_name(name).ok_or_else(|| {
                        HarnessError::Config(format!("unknown environment {name}"))
                    })?;
                }
            }
            if let Some(n) = c.trials_per_block {
                cfg.trials_per_block = n as u64;
            }
            if let Some(z) = c.z {
                match &mut cfg.env {
                    EnvConfig::PredatorPrey1d(p) => p.z = Some(z),
                    EnvConfig::PredatorPrey2d(p) => p.z = Some(z),
                    EnvConfig::Avoidance1d(a) | EnvConfig::DynamicAvoidance(a) => a.z = z,
                    _ => {}
                }
            }
            if let (Some(policy), EnvConfig::PredatorPrey1d(p)) = (c.prey_policy, &mut cfg.env) {
                p.prey_policy = policy;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolve the `protocol` path, if any.
    pub fn resolved(&self) -> Result<(Self, Option<ProtocolSpec>), HarnessError> {
        self.validate()?;
        let Some(path) = &self.protocol else {
            return Ok((self.clone(), None));
        };
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let spec = parse_protocol(&text).map_err(|e| HarnessError::Protocol(vec![e]))?;
        Ok((self.with_protocol(&spec)?, Some(spec)))
    }
}

/// A probe measurement and the block it followed (`None` before training).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub block: Option<u64>,
    pub measurement: PlasticityMeasurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config_digest: String,
    pub environment: String,
    pub mode: Mode,
    pub seed: u64,
    pub sub_seeds: SubSeeds,
    pub baseline_random: bool,
    pub protocol: Option<ProtocolSpec>,
    pub metrics: MetricTable,
    pub probes: Vec<ProbePoint>,
    /// First probe against the last one.
    pub plasticity: Option<PlasticityReport>,
    pub suggestion: Option<String>,
    pub events_path: Option<PathBuf>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

impl ExperimentRecord {
    /// Task metric of the final block, falling back to the whole run.
    pub fn final_metric(&self) -> Option<f64> {
        self.metrics
            .blocks
            .last()
            .and_then(|b| b.metrics.success_rate)
            .or(self.metrics.overall.success_rate)
    }
}

pub const ADVANCE_PREY: &str = "advance: make prey move predictably";
pub const ADVANCE: &str = "advance: raise task difficulty";
pub const REPEAT: &str = "repeat with increased reward saliency";

/// Next curriculum step: advance above 0.7, otherwise repeat.
pub fn suggestion(env: &EnvConfig, rate: f64) -> &'static str {
    if rate > 0.7 {
        match env {
            EnvConfig::PredatorPrey1d(_) | EnvConfig::PredatorPrey2d(_) => ADVANCE_PREY,
            _ => ADVANCE,
        }
    } else {
        REPEAT
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Names of the motor groups read for an action space.
pub fn motor_group_ids(space: ActionSpace) -> &'static [&'static str] {
    match space {
        ActionSpace::FourWay => &["A_up", "A_down", "B_left", "B_right"],
        _ => &["A", "B"],
    }
}

fn decode(space: ActionSpace, counts: &[usize]) -> Action {
    match space {
        ActionSpace::FourWay => four_way_from_counts([counts[0], counts[1], counts[2], counts[3]]),
        ActionSpace::Binary | ActionSpace::Paddle(PaddleAxis::Horizontal) => {
            binary_from_counts(counts[0], counts[1])
        }
        ActionSpace::Paddle(PaddleAxis::Vertical) => match binary_from_counts(counts[0], counts[1]) {
            Action::Left => Action::Up,
            Action::Right => Action::Down,
            a => a,
        },
    }
}

/// Build the surrogate for `layout` with the given seeds.
pub fn build_agent(
    network: &NetworkConfig,
    layout: &MeaLayout,
    seed: u64,
    noise_seed: u64,
) -> Result<Agent, HarnessError> {
    let mut nc = network.clone();
    nc.seed = seed;
    nc.noise.seed = noise_seed;
    let map = ElectrodeMap::from_layout(layout, nc.neurons_per_electrode);
    Ok(Agent::new(nc, map)?)
}

/// Everything one player needs to turn stimuli into an action.
struct Player {
    agent: Option<Agent>,
    rng: ChaCha8Rng,
    expectation: f64,
}

impl Player {
    fn act(
        &mut self,
        stimuli: &[crate::mea::StimulusCommand],
        motor: &[ElectrodeGroup],
        space: ActionSpace,
        window_ms: f64,
    ) -> Result<(Action, Vec<usize>), HarnessError> {
        let Some(agent) = self.agent.as_mut() else {
            let acts = space.actions();
            return Ok((acts[self.rng.random_range(0..acts.len())], Vec::new()));
        };
        for c in stimuli {
            apply_stimulus(agent, c)?;
        }
        let refs: Vec<&ElectrodeGroup> = motor.iter().collect();
        let counts: Vec<usize> = record_groups(agent, &refs, window_ms)?
            .iter()
            .map(|w| w.count())
            .collect();
        Ok((decode(space, &counts), counts))
    }
}

struct Session<'a> {
    cfg: &'a ExperimentConfig,
    log: &'a mut dyn Write,
    seq: u64,
    acc: MetricsAccumulator,
    probes: Vec<ProbePoint>,
    feedback_rng: ChaCha8Rng,
    stim: Vec<ElectrodeGroup>,
    motor: Vec<ElectrodeGroup>,
    probe_path: Option<(ElectrodeId, ElectrodeGroup)>,
}

impl Session<'_> {
    fn emit(&mut self, kind: EventKind) -> Result<(), HarnessError> {
        let ev = Event { seq: self.seq, kind };
        self.seq += 1;
        self.acc.push(&ev);
        serde_json::to_writer(&mut *self.log, &ev)?;
        self.log.write_all(b"\n")?;
        Ok(())
    }

    fn deliver(
        &mut self,
        index: usize,
        player: &mut Player,
        signal: FeedbackSignal,
    ) -> Result<Option<FeedbackLog>, HarnessError> {
        let Some(agent) = player.agent.as_mut() else {
            return Ok(None);
        };
        let params = &self.cfg.feedback;
        let magnitude = signal.magnitude.min(params.magnitude_ceiling);
        if magnitude <= 0.0 {
            return Ok(None);
        }
        let channel = match signal.kind {
            FeedbackKind::Reward => params.reward_channel,
            FeedbackKind::Punishment => Channel::Electrical,
        };
        let event = FeedbackEvent::new(signal.kind, magnitude, channel, params.magnitude_ceiling)?;
        let rule = &self.cfg.learning;
        let expected = player.expectation;
        let mut nominal = 0.0;
        let refs: Vec<&ElectrodeGroup> = self.stim.iter().collect();
        let d = deliver_with(&event, agent, &refs, params, &mut self.feedback_rng, |s| {
            nominal = s;
            if rule.expected_reward {
                (s - expected) / (1.0 + expected.abs())
            } else {
                s
            }
        })?;
        if rule.expected_reward {
            player.expectation += rule.expectation_rate * (nominal - expected);
        }
        if rule.clear_after_feedback {
            agent.clear_eligibility();
        }
        Ok(Some(FeedbackLog {
            player: index,
            kind: event.kind(),
            magnitude,
            signal: d.signal,
            noise_seed: d.stimulus.and_then(|c| c.seed()),
        }))
    }

    fn probe(&mut self, player: &mut Player, block: Option<u64>) -> Result<(), HarnessError> {
        let (Some((electrode, group)), Some(agent)) = (&self.probe_path, player.agent.as_mut()) else {
            return Ok(());
        };
        let m = measure_fepsp(agent, *electrode, group, &self.cfg.probe.params)?;
        if let Some(b) = block {
            self.emit(EventKind::Probe(ProbeEvent {
                block: b,
                electrode: m.probe_electrode,
                group: m.record_group.clone(),
                slope: m.slope,
            }))?;
        }
        self.probes.push(ProbePoint { block, measurement: m });
        Ok(())
    }

    fn end_of_trial(&mut self, trial: u64, player: &mut Player) -> Result<(), HarnessError> {
        let tpb = self.cfg.trials_per_block;
        if trial % tpb == 0 || trial == self.cfg.trials {
            let block = (trial - 1) / tpb;
            if (block + 1) % self.cfg.probe.every_blocks == 0 || trial == self.cfg.trials {
                self.probe(player, Some(block))?;
            }
        }
        Ok(())
    }
}

fn probe_path(
    cfg: &ExperimentConfig,
    layout: &MeaLayout,
) -> Result<Option<(ElectrodeId, ElectrodeGroup)>, HarnessError> {
    if !cfg.probe.enabled || cfg.baseline_random {
        return Ok(None);
    }
    let electrode = match cfg.probe.electrode {
        Some(e) => e,
        None => layout.group("C")?.electrodes()[0],
    };
    let group = match &cfg.probe.group {
        Some(g) => layout.group(g)?.clone(),
        None => layout
            .with_role(GroupRole::Record)
            .next()
            .cloned()
            .ok_or_else(|| HarnessError::Config("layout has no recording group".into()))?,
    };
    Ok(Some((electrode, group)))
}

fn player(
    cfg: &ExperimentConfig,
    layout: &MeaLayout,
    index: usize,
    seeds: &SubSeeds,
    agent: Option<Agent>,
) -> Result<Player, HarnessError> {
    let label = |s: &str| if index == 0 { s.to_string() } else { format!("{s}/{index}") };
    let agent = if cfg.baseline_random {
        None
    } else if let Some(a) = agent {
        Some(a)
    } else {
        Some(build_agent(
            &cfg.network,
            layout,
            sub_seed(cfg.seed, &label("agent")),
            sub_seed(cfg.seed, &label("noise")),
        )?)
    };
    let rng_seed = if index == 0 {
        seeds.baseline
    } else {
        sub_seed(cfg.seed, &label("baseline"))
    };
    Ok(Player {
        agent,
        rng: ChaCha8Rng::seed_from_u64(rng_seed),
        expectation: 0.0,
    })
}

/// Run an experiment, streaming the event log to `log`. `agents` carries
/// trained networks in (and out) across runs; missing ones are built fresh.
pub fn run_session(
    cfg: &ExperimentConfig,
    agents: Vec<Agent>,
    log: &mut dyn Write,
) -> Result<(ExperimentRecord, Vec<Agent>), HarnessError> {
    let started = now_ms();
    let (cfg, protocol) = cfg.resolved()?;
    let seeds = SubSeeds::from_master(cfg.seed);
    let layout = match (&cfg.mode, &cfg.env) {
        (Mode::Versus, EnvConfig::Pong(p)) => Versus::new(p.clone(), seeds.env)?.layout(),
        (Mode::MultiOrganoid, EnvConfig::PredatorPrey1d(p)) => MeaLayout::standard(p.positions),
        _ => cfg.env.build(seeds.env)?.layout(),
    };
    let space = match cfg.mode {
        Mode::Single => cfg.env.build(seeds.env)?.action_space(),
        Mode::Versus => ActionSpace::Paddle(PaddleAxis::Vertical),
        Mode::MultiOrganoid => ActionSpace::Binary,
    };
    let motor = motor_group_ids(space)
        .iter()
        .map(|id| layout.group(id).cloned())
        .collect::<Result<Vec<_>, _>>()?;
    let n_players = if cfg.mode == Mode::Single { 1 } else { 2 };
    let mut carried = agents.into_iter();
    let mut players = (0..n_players)
        .map(|i| player(&cfg, &layout, i, &seeds, carried.next()))
        .collect::<Result<Vec<_>, _>>()?;

    let mut s = Session {
        cfg: &cfg,
        log,
        seq: 0,
        acc: MetricsAccumulator::default(),
        probes: Vec::new(),
        feedback_rng: ChaCha8Rng::seed_from_u64(seeds.feedback),
        stim: layout.with_role(GroupRole::Stimulate).cloned().collect(),
        motor,
        probe_path: probe_path(&cfg, &layout)?,
    };
    s.probe(&mut players[0], None)?;
    match cfg.mode {
        Mode::Single => run_single(&mut s, &mut players[0], &layout, space, &seeds)?,
        Mode::Versus => run_versus(&mut s, &mut players, &layout, &seeds)?,
        Mode::MultiOrganoid => run_multi(&mut s, &mut players, &layout)?,
    }
    s.log.flush()?;

    let metrics = s.acc.table();
    let plasticity = match (s.probes.first(), s.probes.last()) {
        (Some(a), Some(b)) if s.probes.len() > 1 => Some(classify(
            &a.measurement,
            &b.measurement,
            cfg.probe.params.threshold_pct,
        )?),
        _ => None,
    };
    let mut record = ExperimentRecord {
        config_digest: cfg.digest(),
        environment: cfg.env.name().to_string(),
        mode: cfg.mode,
        seed: cfg.seed,
        sub_seeds: seeds,
        baseline_random: cfg.baseline_random,
        protocol,
        metrics,
        probes: std::mem::take(&mut s.probes),
        plasticity,
        suggestion: None,
        events_path: None,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    };
    record.suggestion = record.final_metric().map(|r| suggestion(&cfg.env, r).to_string());
    Ok((record, players.into_iter().filter_map(|p| p.agent).collect()))
}

fn run_single(
    s: &mut Session<'_>,
    p: &mut Player,
    layout: &MeaLayout,
    space: ActionSpace,
    seeds: &SubSeeds,
) -> Result<(), HarnessError> {
    let cfg = s.cfg;
    let mut env: Env = cfg.env.build(seeds.env)?;
    let window = env.window_ms(&cfg.codec);
    let mut episode = 0u64;
    let (mut trial, mut step_in_trial) = (0u64, 0u32);
    while trial < cfg.trials {
        let stimuli = env.sense(layout, &cfg.codec)?;
        let (action, counts) = p.act(&stimuli, &s.motor, space, window)?;
        let st = env.step(action);
        let mut feedback = Vec::new();
        if let Some(f) = st.feedback {
            feedback.extend(s.deliver(0, p, f)?);
        }
        let result = st.outcome.and_then(Outcome::trial_result);
        let cutoff = result.is_none() && step_in_trial + 1 >= cfg.max_steps_per_trial;
        let trial_end = result.or(cutoff.then_some(false));
        s.emit(EventKind::Step(StepEvent {
            trial,
            block: trial / cfg.trials_per_block,
            step_in_trial,
            counts: if counts.is_empty() { vec![] } else { vec![counts] },
            actions: vec![action],
            outcome: st.outcome,
            feedback,
            safe: st.safe,
            trial_end,
            winner: None,
            cutoff,
            state: env.snapshot(),
        }))?;
        if trial_end.is_some() {
            trial += 1;
            step_in_trial = 0;
            s.end_of_trial(trial, p)?;
        } else {
            step_in_trial += 1;
        }
        if st.terminal {
            episode += 1;
            env = cfg.env.build(sub_seed(seeds.env, &format!("episode/{episode}")))?;
        }
    }
    Ok(())
}

fn run_versus(
    s: &mut Session<'_>,
    players: &mut [Player],
    layout: &MeaLayout,
    seeds: &SubSeeds,
) -> Result<(), HarnessError> {
    let cfg = s.cfg;
    let EnvConfig::Pong(pong) = &cfg.env else {
        unreachable!("checked by validate")
    };
    let mut env = Versus::new(pong.clone(), seeds.env)?;
    let space = ActionSpace::Paddle(PaddleAxis::Vertical);
    let window = cfg.codec.paddle_window_ms;
    let (mut trial, mut step_in_trial) = (0u64, 0u32);
    while trial < cfg.trials {
        let mut actions = [Action::Stay; 2];
        let mut counts = Vec::new();
        for (i, p) in players.iter_mut().enumerate() {
            let stimuli = env.sense(i, layout, &cfg.codec)?;
            let (a, c) = p.act(&stimuli, &s.motor, space, window)?;
            actions[i] = a;
            if !c.is_empty() {
                counts.push(c);
            }
        }
        let st = env.step(actions);
        let mut feedback = Vec::new();
        for (i, f) in st.feedback.iter().enumerate() {
            if let Some(f) = f {
                feedback.extend(s.deliver(i, &mut players[i], *f)?);
            }
        }
        let outcome = match (st.hit_by, st.missed_by) {
            (Some(_), _) => Some(Outcome::Hit),
            (_, Some(_)) => Some(Outcome::Miss),
            _ => None,
        };
        let mut trial_end = st.missed_by.map(|m| m == 1);
        let mut winner = st.missed_by.map(|m| 1 - m);
        let cutoff = trial_end.is_none() && step_in_trial + 1 >= cfg.max_steps_per_trial;
        if cutoff {
            trial_end = Some(false);
            winner = None;
        }
        s.emit(EventKind::Step(StepEvent {
            trial,
            block: trial / cfg.trials_per_block,
            step_in_trial,
            counts,
            actions: actions.to_vec(),
            outcome,
            feedback,
            safe: None,
            trial_end,
            winner,
            cutoff,
            state: env.snapshot(),
        }))?;
        if trial_end.is_some() {
            trial += 1;
            step_in_trial = 0;
            s.end_of_trial(trial, &mut players[0])?;
        } else {
            step_in_trial += 1;
        }
    }
    Ok(())
}

fn run_multi(
    s: &mut Session<'_>,
    players: &mut [Player],
    layout: &MeaLayout,
) -> Result<(), HarnessError> {
    let cfg = s.cfg;
    let EnvConfig::PredatorPrey1d(pp) = &cfg.env else {
        unreachable!("checked by validate")
    };
    let PredatorPrey1DConfig {
        positions,
        predator_start,
        prey_start,
        z,
        ..
    } = pp;
    let mut env = MultiOrganoid::new(
        *positions,
        (predator_start.unwrap_or(5), prey_start.unwrap_or(3)),
    );
    let limit = z.unwrap_or(cfg.max_steps_per_trial).min(cfg.max_steps_per_trial);
    let space = ActionSpace::Binary;
    let window = cfg.codec.window_ms;
    let codec = &cfg.codec;
    let motor = s.motor.clone();
    let (mut trial, mut step_in_trial) = (0u64, 0u32);
    while trial < cfg.trials {
        let mut counts: [Vec<usize>; 2] = Default::default();
        let mut actions = [Action::Stay; 2];
        let result = {
            let [p0, p1] = players else {
                unreachable!("two players")
            };
            let [c0, c1] = &mut counts;
            let [a0, a1] = &mut actions;
            let mut f0 = |own: u32, other: u32| -> Result<Action, HarnessError> {
                let stimuli = MultiOrganoid::sense(own, other, layout, codec)?;
                let (a, c) = p0.act(&stimuli, &motor, space, window)?;
                (*a0, *c0) = (a, c);
                Ok(a)
            };
            let mut f1 = |own: u32, other: u32| -> Result<Action, HarnessError> {
                let stimuli = MultiOrganoid::sense(own, other, layout, codec)?;
                let (a, c) = p1.act(&stimuli, &motor, space, window)?;
                (*a1, *c1) = (a, c);
                Ok(a)
            };
            env.round(&mut [&mut f0, &mut f1])?
        };
        let mut feedback = Vec::new();
        for (i, f) in [result.predator, result.prey].into_iter().enumerate() {
            if let Some(f) = f {
                feedback.extend(s.deliver(i, &mut players[i], f)?);
            }
        }
        let cutoff = !result.capture && step_in_trial + 1 >= limit;
        let trial_end = if result.capture {
            Some(true)
        } else {
            cutoff.then_some(false)
        };
        s.emit(EventKind::Step(StepEvent {
            trial,
            block: trial / cfg.trials_per_block,
            step_in_trial,
            counts: counts.into_iter().filter(|c| !c.is_empty()).collect(),
            actions: actions.to_vec(),
            outcome: result.capture.then_some(Outcome::Capture),
            feedback,
            safe: None,
            trial_end,
            winner: trial_end.map(|caught| if caught { 0 } else { 1 }),
            cutoff,
            state: serde_json::to_value(env.state())?,
        }))?;
        if trial_end.is_some() {
            trial += 1;
            step_in_trial = 0;
            s.end_of_trial(trial, &mut players[0])?;
        } else {
            step_in_trial += 1;
        }
    }
    Ok(())
}

/// Run with the log kept in memory; returns the record and the log text.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<(ExperimentRecord, String), HarnessError> {
    let mut buf = Vec::new();
    let (record, _) = run_session(cfg, Vec::new(), &mut buf)?;
    Ok((record, String::from_utf8(buf).expect("JSON is UTF-8")))
}

/// Run an experiment. With an output directory the event log is streamed to
/// `events.jsonl` there and the record, metric and plasticity files follow.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRecord, HarnessError> {
    let Some(dir) = &cfg.out_dir else {
        return Ok(run_in_memory(cfg)?.0);
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("events.jsonl");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    let (mut record, _) = run_session(cfg, Vec::new(), &mut w)?;
    w.flush().map_err(io_err(&path))?;
    record.events_path = Some(path);
    write_outputs(dir, &record)?;
    Ok(record)
}

/// A paired-stimulation session on the probe path, bracketed by probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingExperiment {
    pub pairings: usize,
    pub pairing: PairingParams,
    /// Feedback delivered after every pairing.
    pub feedback: FeedbackKind,
    /// Magnitude of punishment feedback.
    pub magnitude: f64,
}

impl Default for PairingExperiment {
    fn default() -> Self {
        Self {
            pairings: 100,
            pairing: PairingParams::default(),
            feedback: FeedbackKind::Reward,
            magnitude: 1.0,
        }
    }
}

impl PairingExperiment {
    /// Post-before-pre pairings, each followed by punishment.
    pub fn punishing() -> Self {
        Self {
            pairing: PairingParams {
                order: PairingOrder::PostBeforePre,
                ..PairingParams::default()
            },
            feedback: FeedbackKind::Punishment,
            ..Self::default()
        }
    }
}

/// Build the agent `cfg` describes, probe its path, run the pairing session
/// and probe again.
pub fn run_pairing_experiment(
    cfg: &ExperimentConfig,
    exp: &PairingExperiment,
) -> Result<PlasticityReport, HarnessError> {
    cfg.validate()?;
    let seeds = SubSeeds::from_master(cfg.seed);
    let layout = cfg.env.build(seeds.env)?.layout();
    let mut agent = build_agent(&cfg.network, &layout, seeds.agent, seeds.noise)?;
    let mut probe_cfg = cfg.clone();
    probe_cfg.probe.enabled = true;
    probe_cfg.baseline_random = false;
    let (electrode, group) = probe_path(&probe_cfg, &layout)?.expect("probing enabled");
    let params = &cfg.probe.params;
    let before = measure_fepsp(&mut agent, electrode, &group, params)?;
    let stim: Vec<ElectrodeGroup> = layout.with_role(GroupRole::Stimulate).cloned().collect();
    let stim_refs: Vec<&ElectrodeGroup> = stim.iter().collect();
    let magnitude = match exp.feedback {
        FeedbackKind::Reward => 0.0,
        FeedbackKind::Punishment => exp.magnitude,
    };
    let event = FeedbackEvent::new(
        exp.feedback,
        magnitude,
        cfg.feedback.reward_channel,
        cfg.feedback.magnitude_ceiling,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.feedback);
    pairing_session(
        &mut agent,
        electrode,
        &group,
        &stim_refs,
        exp.pairings,
        &exp.pairing,
        &cfg.feedback,
        |_| Some(event),
        &mut rng,
    )?;
    let after = measure_fepsp(&mut agent, electrode, &group, params)?;
    Ok(classify(&before, &after, params.threshold_pct)?)
}

impl EnvConfig {
    /// Default config for an environment id.
    pub fn from_name(name: &str) -> Option<Self> {
        use crate::env::*;
        Some(match name {
            "avoidance1d" => EnvConfig::Avoidance1d(Avoidance1DConfig::default()),
            "dynamic_avoidance" => EnvConfig::DynamicAvoidance(Avoidance1DConfig::default()),
            "avoidance2d" => EnvConfig::Avoidance2d(Avoidance2DConfig::default()),
            "maze" => EnvConfig::Maze(MazeConfig::default()),
            "predator_prey1d" => EnvConfig::PredatorPrey1d(PredatorPrey1DConfig::default()),
            "predator_prey2d" => EnvConfig::PredatorPrey2d(PredatorPrey2DConfig::default()),
            "pong" => EnvConfig::Pong(PongConfig::default()),
            "breakout" => EnvConfig::Breakout(BreakoutConfig::default()),
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::Classification;

    fn quick(trials: u64) -> ExperimentConfig {
        ExperimentConfig {
            trials,
            trials_per_block: 5,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn sub_seeds_distinct_and_stable() {
        let s = SubSeeds::from_master(7);
        let all = [s.agent, s.noise, s.env, s.feedback, s.baseline];
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(s, SubSeeds::from_master(7));
        assert_ne!(s.agent, SubSeeds::from_master(8).agent);
    }

    #[test]
    fn random_baseline_runs_without_agent() {
        let cfg = ExperimentConfig {
            baseline_random: true,
            ..quick(20)
        };
        let (rec, log) = run_in_memory(&cfg).unwrap();
        assert_eq!(rec.metrics.overall.trials, 20);
        assert!(rec.metrics.overall.success_rate.is_some());
        assert!(rec.probes.is_empty());
        assert!(!log.contains("\"counts\":[["));
    }

    #[test]
    fn deterministic_and_replayable() {
        let cfg = quick(6);
        let (r1, l1) = run_in_memory(&cfg).unwrap();
        let (r2, l2) = run_in_memory(&cfg).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(r1.metrics, r2.metrics);
        assert_eq!(compute_metrics(l1.as_bytes()).unwrap(), r1.metrics);
        assert_eq!(r1.metrics.blocks.len(), 2);
        // Baseline plus one probe per block.
        assert_eq!(r1.probes.len(), 3);
        assert!(r1.plasticity.is_some());
        assert!(r1.suggestion.is_some());
    }

    #[test]
    fn env_seed_does_not_touch_agent() {
        let layout = MeaLayout::standard(8);
        let s1 = SubSeeds::from_master(1);
        let a = build_agent(&NetworkConfig::default(), &layout, s1.agent, s1.noise).unwrap();
        let b = build_agent(&NetworkConfig::default(), &layout, s1.agent, s1.noise).unwrap();
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn other_worlds_and_modes_run() {
        for (env, mode) in [
            (EnvConfig::from_name("avoidance1d").unwrap(), Mode::Single),
            (EnvConfig::from_name("avoidance2d").unwrap(), Mode::Single),
            (EnvConfig::from_name("maze").unwrap(), Mode::Single),
            (EnvConfig::from_name("pong").unwrap(), Mode::Single),
            (EnvConfig::from_name("breakout").unwrap(), Mode::Single),
            (EnvConfig::from_name("predator_prey2d").unwrap(), Mode::Single),
            (EnvConfig::from_name("pong").unwrap(), Mode::Versus),
            (EnvConfig::from_name("predator_prey1d").unwrap(), Mode::MultiOrganoid),
        ] {
            let cfg = ExperimentConfig {
                env,
                mode,
                max_steps_per_trial: 30,
                ..quick(3)
            };
            let (rec, log) = run_in_memory(&cfg).unwrap();
            assert_eq!(rec.metrics.overall.trials, 3, "{mode:?} {}", rec.environment);
            assert_eq!(compute_metrics(log.as_bytes()).unwrap(), rec.metrics);
            if mode != Mode::Single {
                assert!(rec.metrics.overall.wins.is_some());
            }
        }
    }

    #[test]
    fn mode_mismatch_rejected() {
        let cfg = ExperimentConfig {
            mode: Mode::Versus,
            ..quick(1)
        };
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn protocol_applies_curriculum() {
        let mut spec = parse_protocol(crate::protocol::EXAMPLE_PROTOCOL).unwrap();
        spec.curriculum = Some(crate::protocol::Curriculum {
            trials_per_block: Some(4),
            z: Some(9),
            prey_policy: Some(crate::env::PreyPolicy::Predictable),
            ..Default::default()
        });
        let cfg = quick(1).with_protocol(&spec).unwrap();
        assert_eq!(cfg.trials_per_block, 4);
        let EnvConfig::PredatorPrey1d(p) = &cfg.env else { panic!() };
        assert_eq!(p.z, Some(9));
        assert_eq!(cfg.feedback.reward_amplitude_ua, 8.5);
        spec.punishment_params.amplitude_ua = 30.0;
        assert!(matches!(quick(1).with_protocol(&spec), Err(HarnessError::Protocol(e)) if e.len() == 1));
    }

    #[test]
    fn pairing_signatures() {
        let cfg = ExperimentConfig::default();
        let ltp = run_pairing_experiment(&cfg, &PairingExperiment::default()).unwrap();
        assert_eq!(ltp.classification, Classification::Ltp, "{ltp:?}");
        assert!(ltp.percent_change.unwrap() >= 5.0);
        let ltd = run_pairing_experiment(&cfg, &PairingExperiment::punishing()).unwrap();
        assert!(ltd.after.slope <= ltd.before.slope, "{ltd:?}");
    }

    #[test]
    fn suggestion_rule() {
        let env = EnvConfig::default();
        assert_eq!(suggestion(&env, 0.8), ADVANCE_PREY);
        assert_eq!(suggestion(&env, 0.3), REPEAT);
        assert_eq!(suggestion(&env, 0.7), REPEAT);
    }
}
