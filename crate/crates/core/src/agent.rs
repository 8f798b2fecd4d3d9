//! Seeded spiking surrogate for the biological culture.
//!
//! A sparse recurrent network of leaky integrate-and-fire neurons with
//! double-exponential synaptic currents. Plasticity is reward-modulated STDP:
//! spike pairings accumulate into per-synapse eligibility traces, and only a
//! neuromodulatory signal ([`Agent::apply_neuromodulation`]) turns
//! eligibility into weight change.
//!
//! Eligibility is stored lazily as `(value, time)` pairs and decayed on read,
//! so a step costs O(neurons + spikes · fan-out) rather than O(synapses).

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mea::{whole_steps, ElectrodeId, GroupRole, MeaError, MeaLayout, Substrate};

pub type NeuronId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("electrode {electrode} maps to neuron {neuron} but the network has {n} neurons")]
    NeuronOutOfRange {
        electrode: ElectrodeId,
        neuron: NeuronId,
        n: usize,
    },
    #[error("invalid electrode map: {0}")]
    InvalidMap(String),
    #[error("neuromodulation signal {0} outside [-1, 1]")]
    SignalOutOfRange(f64),
    #[error("step size must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("injected current has {got} entries, network has {expected} neurons")]
    InjectionLength { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StdpParams {
    pub a_plus: f64,
    pub a_minus: f64,
    pub tau_plus_ms: f64,
    pub tau_minus_ms: f64,
}

impl Default for StdpParams {
    fn default() -> Self {
        Self {
            a_plus: 1.0,
            a_minus: 0.0,
            tau_plus_ms: 20.0,
            tau_minus_ms: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightInit {
    pub mean: f64,
    pub std: f64,
}

impl Default for WeightInit {
    fn default() -> Self {
        Self { mean: 0.5, std: 0.5 / 3.0 }
    }
}

/// Spontaneous background drive, Gaussian per neuron and step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub mean_ua: f64,
    pub std_ua: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            mean_ua: 0.06,
            std_ua: 0.35,
            seed: 1,
        }
    }
}

/// Homeostatic control of each neuron's summed excitatory input, applied
/// after every neuromodulated weight update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynapticScaling {
    #[default]
    Off,
    /// Scale down when the sum exceeds its initial value.
    Cap,
    /// Rescale to the initial value in both directions.
    Conserve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_neurons: usize,
    pub excitatory_fraction: f64,
    pub connection_probability: f64,
    pub weight_init: WeightInit,
    /// Magnitude bound for every weight (mV of PSP, roughly).
    pub w_max: f64,
    pub tau_membrane_ms: f64,
    pub v_rest_mv: f64,
    pub threshold_mv: f64,
    pub reset_mv: f64,
    pub refractory_ms: f64,
    pub tau_syn_rise_ms: f64,
    pub tau_syn_decay_ms: f64,
    /// Steady-state depolarisation (mV) produced by 1 µA of external current.
    pub input_gain_mv_per_ua: f64,
    pub stdp: StdpParams,
    pub eligibility_tau_ms: f64,
    pub learning_rate: f64,
    /// Negative signals weaken every eligible synapse (`Δ|w| = η·signal·|e|`)
    /// instead of following the sign of its eligibility, so punishment never
    /// potentiates.
    pub punishment_depresses: bool,
    /// Scale each update by the room left before the bound it moves toward
    /// (`w_max − |w|` up, `|w|` down, both over `w_max`).
    pub soft_bounds: bool,
    /// Fixed inhibition (mV of PSP) a spike in one motor pool sends to every
    /// neuron of the other pools. Not plastic.
    pub lateral_inhibition: f64,
    pub synaptic_scaling: SynapticScaling,
    /// Integration step used when the agent is advanced through time.
    pub dt_ms: f64,
    /// Neurons driven by each stimulation electrode / read by each recording
    /// electrode when the electrode map is derived from a layout.
    pub neurons_per_electrode: usize,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_neurons: 256,
            excitatory_fraction: 0.8,
            connection_probability: 0.1,
            weight_init: WeightInit::default(),
            w_max: 4.0,
            tau_membrane_ms: 20.0,
            v_rest_mv: -65.0,
            threshold_mv: -50.0,
            reset_mv: -65.0,
            refractory_ms: 2.0,
            tau_syn_rise_ms: 2.0,
            tau_syn_decay_ms: 8.0,
            input_gain_mv_per_ua: 75.0,
            stdp: StdpParams::default(),
            eligibility_tau_ms: 1000.0,
            learning_rate: 1.0,
            punishment_depresses: true,
            soft_bounds: false,
            lateral_inhibition: 20.0,
            synaptic_scaling: SynapticScaling::Conserve,
            dt_ms: 1.0,
            neurons_per_electrode: 8,
            noise: NoiseConfig::default(),
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        let ratio = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_neurons == 0 {
            return bad("n_neurons must be positive");
        }
        if !(self.excitatory_fraction > 0.0 && self.excitatory_fraction <= 1.0) {
            return bad("excitatory_fraction must be in (0, 1]");
        }
        if !ratio(self.connection_probability) {
            return bad("connection_probability must be in [0, 1]");
        }
        for (name, tau) in [
            ("tau_membrane_ms", self.tau_membrane_ms),
            ("tau_syn_rise_ms", self.tau_syn_rise_ms),
            ("tau_syn_decay_ms", self.tau_syn_decay_ms),
            ("stdp.tau_plus_ms", self.stdp.tau_plus_ms),
            ("stdp.tau_minus_ms", self.stdp.tau_minus_ms),
            ("eligibility_tau_ms", self.eligibility_tau_ms),
            ("dt_ms", self.dt_ms),
        ] {
            if !(tau > 0.0) {
                return Err(AgentError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.tau_syn_decay_ms <= self.tau_syn_rise_ms {
            return bad("tau_syn_decay_ms must exceed tau_syn_rise_ms");
        }
        if !(self.threshold_mv > self.reset_mv) {
            return bad("threshold must lie above reset");
        }
        if !(self.lateral_inhibition >= 0.0 && self.lateral_inhibition.is_finite()) {
            return bad("lateral inhibition must be finite and non-negative");
        }
        if !(self.w_max >= 0.0) || self.refractory_ms < 0.0 || self.weight_init.std < 0.0 {
            return bad("w_max, refractory and weight std must be non-negative");
        }
        if self.noise.std_ua < 0.0 {
            return bad("noise std must be non-negative");
        }
        if self.neurons_per_electrode == 0 {
            return bad("neurons_per_electrode must be positive");
        }
        Ok(())
    }

    pub fn excitatory_count(&self) -> usize {
        ((self.n_neurons as f64) * self.excitatory_fraction).round() as usize
    }
}

/// Which neurons each electrode drives (stimulation) or reads (recording).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeMap {
    inputs: BTreeMap<ElectrodeId, Vec<NeuronId>>,
    outputs: BTreeMap<ElectrodeId, Vec<NeuronId>>,
    /// Recording electrode sets whose neurons compete (see
    /// `NetworkConfig::lateral_inhibition`).
    #[serde(default)]
    pools: Vec<Vec<ElectrodeId>>,
}

impl ElectrodeMap {
    pub fn new(
        inputs: BTreeMap<ElectrodeId, Vec<NeuronId>>,
        outputs: BTreeMap<ElectrodeId, Vec<NeuronId>>,
    ) -> Result<Self, AgentError> {
        for (e, ns) in inputs.iter().chain(outputs.iter()) {
            if ns.is_empty() {
                return Err(AgentError::InvalidMap(format!("electrode {e} maps to no neurons")));
            }
        }
        if let Some(e) = inputs.keys().find(|e| outputs.contains_key(e)) {
            return Err(AgentError::InvalidMap(format!(
                "electrode {e} is both input and output"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for ns in outputs.values() {
            for &n in ns {
                if !seen.insert(n) {
                    return Err(AgentError::InvalidMap(format!(
                        "neuron {n} is read by two recording electrodes"
                    )));
                }
            }
        }
        Ok(Self {
            inputs,
            outputs,
            pools: Vec::new(),
        })
    }

    /// Declare competing pools of recording electrodes. Pools must be
    /// disjoint and use only recording electrodes.
    pub fn with_pools(mut self, pools: Vec<Vec<ElectrodeId>>) -> Result<Self, AgentError> {
        let mut seen = std::collections::BTreeSet::new();
        for &e in pools.iter().flatten() {
            if !self.outputs.contains_key(&e) {
                return Err(AgentError::InvalidMap(format!(
                    "pool electrode {e} is not a recording electrode"
                )));
            }
            if !seen.insert(e) {
                return Err(AgentError::InvalidMap(format!("electrode {e} is in two pools")));
            }
        }
        self.pools = pools;
        Ok(self)
    }

    pub fn pools(&self) -> &[Vec<ElectrodeId>] {
        &self.pools
    }

    /// Assign `per_electrode` consecutive neurons to every electrode of the
    /// layout, stimulation electrodes first (ascending id), then recording
    /// electrodes. Low neuron ids are excitatory, so mapped neurons are too
    /// whenever they fit inside the excitatory pool. Each recording group
    /// becomes one competing pool.
    pub fn from_layout(layout: &MeaLayout, per_electrode: usize) -> Self {
        let mut next: NeuronId = 0;
        let mut take = || {
            let v: Vec<NeuronId> = (next..next + per_electrode as NeuronId).collect();
            next += per_electrode as NeuronId;
            v
        };
        let mut stim: Vec<_> = layout
            .with_role(GroupRole::Stimulate)
            .flat_map(|g| g.electrodes().iter().copied())
            .collect();
        stim.sort_unstable();
        let mut rec: Vec<_> = layout
            .with_role(GroupRole::Record)
            .flat_map(|g| g.electrodes().iter().copied())
            .collect();
        rec.sort_unstable();
        let inputs = stim.into_iter().map(|e| (e, take())).collect();
        let outputs = rec.into_iter().map(|e| (e, take())).collect();
        let pools = layout
            .with_role(GroupRole::Record)
            .map(|g| g.electrodes().to_vec())
            .collect();
        Self::new(inputs, outputs)
            .and_then(|m| m.with_pools(pools))
            .expect("disjoint by construction")
    }

    pub fn inputs(&self) -> &BTreeMap<ElectrodeId, Vec<NeuronId>> {
        &self.inputs
    }

    pub fn outputs(&self) -> &BTreeMap<ElectrodeId, Vec<NeuronId>> {
        &self.outputs
    }

    pub fn neurons_for(&self, electrode: ElectrodeId) -> Option<&[NeuronId]> {
        self.inputs
            .get(&electrode)
            .or_else(|| self.outputs.get(&electrode))
            .map(Vec::as_slice)
    }

    fn max_neuron(&self) -> Option<(ElectrodeId, NeuronId)> {
        self.inputs
            .iter()
            .chain(self.outputs.iter())
            .flat_map(|(&e, ns)| ns.iter().map(move |&n| (e, n)))
            .max_by_key(|&(_, n)| n)
    }
}

/// Mutable dynamical state of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub v_mv: Vec<f64>,
    pub weights: Vec<f64>,
    /// Eligibility scaled by `exp((t_ref − clock)/τ_e)`, so decay is shared
    /// by every synapse and costs nothing per synapse.
    eligibility: Vec<f64>,
    eligibility_ref_ms: f64,
    pub pre_trace: Vec<f64>,
    pub post_trace: Vec<f64>,
    syn_rise: Vec<f64>,
    syn_decay: Vec<f64>,
    refractory_ms: Vec<f64>,
    pub clock_ms: f64,
}

#[derive(Debug, Clone, Copy)]
struct Decay {
    dt: f64,
    rise: f64,
    decay: f64,
    plus: f64,
    minus: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    cfg: NetworkConfig,
    map: ElectrodeMap,
    n_exc: usize,
    out_start: Vec<usize>,
    syn_pre: Vec<NeuronId>,
    syn_post: Vec<NeuronId>,
    in_start: Vec<usize>,
    in_syn: Vec<usize>,
    /// Initial summed excitatory input per neuron.
    in_budget: Vec<f64>,
    state: NetworkState,
    frozen: bool,
    noise_enabled: bool,
    noise_rng: ChaCha8Rng,
    input_slots: Vec<(ElectrodeId, Vec<NeuronId>)>,
    /// Pool index per neuron and the neurons of each pool.
    pool_of: Vec<Option<usize>>,
    pool_neurons: Vec<Vec<NeuronId>>,
    schedule: VecDeque<Vec<f64>>,
    electrode_charge: Vec<f64>,
    decay: Decay,
    syn_norm: f64,
    spike_count: u64,
}

impl Agent {
    /// Build a network. Topology and initial weights are a pure function of
    /// `cfg.seed`; background noise draws from `cfg.noise.seed`.
    pub fn new(cfg: NetworkConfig, map: ElectrodeMap) -> Result<Self, AgentError> {
        cfg.validate()?;
        if let Some((electrode, neuron)) = map.max_neuron() {
            if neuron as usize >= cfg.n_neurons {
                return Err(AgentError::NeuronOutOfRange {
                    electrode,
                    neuron,
                    n: cfg.n_neurons,
                });
            }
        }
        let n = cfg.n_neurons;
        let n_exc = cfg.excitatory_count();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = Normal::new(cfg.weight_init.mean, cfg.weight_init.std)
            .map_err(|e| AgentError::InvalidConfig(e.to_string()))?;
        let mut out_start = Vec::with_capacity(n + 1);
        let mut syn_pre = Vec::new();
        let mut syn_post = Vec::new();
        let mut weights = Vec::new();
        for pre in 0..n {
            out_start.push(syn_post.len());
            for post in 0..n {
                if post == pre {
                    continue;
                }
                let connect: f64 = rng.random();
                if connect < cfg.connection_probability {
                    let w: f64 = init.sample(&mut rng).abs().min(cfg.w_max);
                    syn_pre.push(pre as NeuronId);
                    syn_post.push(post as NeuronId);
                    weights.push(if pre < n_exc { w } else { -w });
                }
            }
        }
        out_start.push(syn_post.len());

        let mut in_count = vec![0usize; n];
        for &p in &syn_post {
            in_count[p as usize] += 1;
        }
        let mut in_start = vec![0usize; n + 1];
        for i in 0..n {
            in_start[i + 1] = in_start[i] + in_count[i];
        }
        let mut fill = in_start.clone();
        let mut in_syn = vec![0usize; syn_post.len()];
        for (s, &p) in syn_post.iter().enumerate() {
            in_syn[fill[p as usize]] = s;
            fill[p as usize] += 1;
        }

        let in_budget = (0..n)
            .map(|j| {
                in_syn[in_start[j]..in_start[j + 1]]
                    .iter()
                    .map(|&s| weights[s].max(0.0))
                    .sum()
            })
            .collect();
        let m = weights.len();
        let state = NetworkState {
            v_mv: vec![cfg.v_rest_mv; n],
            weights,
            eligibility: vec![0.0; m],
            eligibility_ref_ms: 0.0,
            pre_trace: vec![0.0; n],
            post_trace: vec![0.0; n],
            syn_rise: vec![0.0; n],
            syn_decay: vec![0.0; n],
            refractory_ms: vec![0.0; n],
            clock_ms: 0.0,
        };
        let input_slots = map
            .inputs()
            .iter()
            .map(|(&e, ns)| (e, ns.clone()))
            .collect();
        let pool_neurons: Vec<Vec<NeuronId>> = map
            .pools
            .iter()
            .map(|es| es.iter().flat_map(|e| map.outputs[e].iter().copied()).collect())
            .collect();
        let mut pool_of = vec![None; n];
        for (p, ns) in pool_neurons.iter().enumerate() {
            for &i in ns {
                pool_of[i as usize] = Some(p);
            }
        }
        let syn_norm = cfg.tau_membrane_ms / (cfg.tau_syn_decay_ms - cfg.tau_syn_rise_ms);
        let decay = Self::decay_for(&cfg, cfg.dt_ms);
        Ok(Self {
            noise_rng: ChaCha8Rng::seed_from_u64(cfg.noise.seed),
            noise_enabled: cfg.noise.enabled,
            cfg,
            map,
            n_exc,
            out_start,
            syn_pre,
            syn_post,
            in_start,
            in_syn,
            in_budget,
            state,
            frozen: false,
            input_slots,
            pool_of,
            pool_neurons,
            schedule: VecDeque::new(),
            electrode_charge: vec![0.0; n],
            decay,
            syn_norm,
            spike_count: 0,
        })
    }

    fn decay_for(cfg: &NetworkConfig, dt: f64) -> Decay {
        Decay {
            dt,
            rise: (-dt / cfg.tau_syn_rise_ms).exp(),
            decay: (-dt / cfg.tau_syn_decay_ms).exp(),
            plus: (-dt / cfg.stdp.tau_plus_ms).exp(),
            minus: (-dt / cfg.stdp.tau_minus_ms).exp(),
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }
    pub fn electrode_map(&self) -> &ElectrodeMap {
        &self.map
    }
    pub fn state(&self) -> &NetworkState {
        &self.state
    }
    pub fn n_neurons(&self) -> usize {
        self.cfg.n_neurons
    }
    pub fn is_excitatory(&self, neuron: NeuronId) -> bool {
        (neuron as usize) < self.n_exc
    }
    pub fn synapse_count(&self) -> usize {
        self.syn_post.len()
    }
    pub fn weights(&self) -> &[f64] {
        &self.state.weights
    }
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }
    /// Total spikes emitted since construction.
    pub fn spike_count(&self) -> u64 {
        self.spike_count
    }

    /// `(pre, post, weight)` for every synapse.
    pub fn synapses(&self) -> impl Iterator<Item = (NeuronId, NeuronId, f64)> + '_ {
        (0..self.syn_post.len()).map(|s| (self.syn_pre[s], self.syn_post[s], self.state.weights[s]))
    }

    pub fn find_synapse(&self, pre: NeuronId, post: NeuronId) -> Option<usize> {
        let p = pre as usize;
        (self.out_start[p]..self.out_start[p + 1]).find(|&s| self.syn_post[s] == post)
    }

    /// Indices of synapses running from any neuron in `pre` to any in `post`.
    pub fn synapses_between(&self, pre: &[NeuronId], post: &[NeuronId]) -> Vec<usize> {
        let mut out = Vec::new();
        for &p in pre {
            let p = p as usize;
            for s in self.out_start[p]..self.out_start[p + 1] {
                if post.contains(&self.syn_post[s]) {
                    out.push(s);
                }
            }
        }
        out
    }

    fn bounds(&self, syn: usize) -> (f64, f64) {
        if (self.syn_pre[syn] as usize) < self.n_exc {
            (0.0, self.cfg.w_max)
        } else {
            (-self.cfg.w_max, 0.0)
        }
    }

    /// Set one weight (clamped to its bounds). The postsynaptic neuron's
    /// scaling budget follows the new total.
    pub fn set_weight(&mut self, syn: usize, w: f64) {
        let (lo, hi) = self.bounds(syn);
        let old = self.state.weights[syn].max(0.0);
        self.state.weights[syn] = w.clamp(lo, hi);
        self.in_budget[self.syn_post[syn] as usize] += self.state.weights[syn].max(0.0) - old;
    }

    fn scale_inputs(&mut self) {
        let mode = self.cfg.synaptic_scaling;
        if mode == SynapticScaling::Off {
            return;
        }
        for j in 0..self.in_budget.len() {
            let incoming = &self.in_syn[self.in_start[j]..self.in_start[j + 1]];
            let total: f64 = incoming.iter().map(|&s| self.state.weights[s].max(0.0)).sum();
            let budget = self.in_budget[j];
            let rescale = match mode {
                SynapticScaling::Cap => total > budget,
                _ => total > 0.0 && total != budget,
            };
            if rescale {
                let f = budget / total;
                for &s in incoming {
                    if self.state.weights[s] > 0.0 {
                        self.state.weights[s] = (self.state.weights[s] * f).min(self.cfg.w_max);
                    }
                }
            }
        }
    }

    /// Eligibility of each synapse decayed to the current clock.
    pub fn eligibility(&self) -> Vec<f64> {
        (0..self.syn_post.len()).map(|s| self.eligibility_of(s)).collect()
    }

    pub fn eligibility_of(&self, syn: usize) -> f64 {
        self.state.eligibility[syn] * self.eligibility_decay()
    }

    fn eligibility_decay(&self) -> f64 {
        let age = self.state.clock_ms - self.state.eligibility_ref_ms;
        (-age / self.cfg.eligibility_tau_ms).exp()
    }

    /// Fold the shared decay into the stored values once it gets large.
    fn rebase_eligibility(&mut self) {
        let age = self.state.clock_ms - self.state.eligibility_ref_ms;
        if age < 16.0 * self.cfg.eligibility_tau_ms {
            return;
        }
        let f = self.eligibility_decay();
        for e in self.state.eligibility.iter_mut() {
            *e = flush(*e * f);
        }
        self.state.eligibility_ref_ms = self.state.clock_ms;
    }

    /// Zero every eligibility trace and the STDP spike traces, e.g. once
    /// feedback has been delivered so the next trial's credit starts clean.
    pub fn clear_eligibility(&mut self) {
        if self.frozen {
            return;
        }
        self.state.pre_trace.iter_mut().for_each(|x| *x = 0.0);
        self.state.post_trace.iter_mut().for_each(|x| *x = 0.0);
        self.state.eligibility.iter_mut().for_each(|e| *e = 0.0);
        self.state.eligibility_ref_ms = self.state.clock_ms;
    }

    /// Suspend (or resume) all plasticity. While frozen, stepping still
    /// updates membranes and synaptic currents, but weights, STDP traces and
    /// eligibility are left alone and neuromodulation is ignored.
    pub fn freeze_plasticity(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn set_noise(&mut self, enabled: bool) {
        self.noise_enabled = enabled;
    }

    /// Convert eligibility into weight change: `Δ|w| = η · signal · e`
    /// (with `|e|` for negative signals when `punishment_depresses` is set).
    /// Inhibitory synapses change in magnitude, so the sign of every weight
    /// is preserved. Eligibility itself is not consumed.
    pub fn apply_neuromodulation(&mut self, signal: f64) -> Result<(), AgentError> {
        if !(-1.0..=1.0).contains(&signal) {
            return Err(AgentError::SignalOutOfRange(signal));
        }
        if self.frozen || signal == 0.0 {
            return Ok(());
        }
        let scale = self.cfg.learning_rate * signal;
        let rectify = signal < 0.0 && self.cfg.punishment_depresses;
        let decay = self.eligibility_decay();
        for s in 0..self.syn_post.len() {
            let mut e = self.state.eligibility[s] * decay;
            if e == 0.0 {
                continue;
            }
            if rectify {
                e = e.abs();
            }
            let (lo, hi) = self.bounds(s);
            let sign = if hi > 0.0 { 1.0 } else { -1.0 };
            let mut delta = scale * e;
            if self.cfg.soft_bounds {
                let mag = self.state.weights[s].abs();
                let room = if delta > 0.0 { self.cfg.w_max - mag } else { mag };
                delta *= room / self.cfg.w_max;
            }
            self.state.weights[s] = (self.state.weights[s] + sign * delta).clamp(lo, hi);
        }
        self.scale_inputs();
        Ok(())
    }

    /// Summed synaptic current (mV-equivalent drive) currently entering each
    /// neuron.
    pub fn synaptic_current(&self, neuron: NeuronId) -> f64 {
        let i = neuron as usize;
        self.syn_norm * (self.state.syn_decay[i] - self.state.syn_rise[i])
    }

    /// One integration step with explicit per-neuron external current (µA).
    /// Returns the neurons that spiked.
    ///
    /// Membrane: `V += dt/τ · (V_rest − V + g·I_ext + I_syn)`. Non-finite or
    /// extreme currents are clamped rather than rejected.
    pub fn step(&mut self, dt_ms: f64, injected: &[f64]) -> Result<Vec<NeuronId>, AgentError> {
        if !(dt_ms > 0.0) {
            return Err(AgentError::NonPositiveDt(dt_ms));
        }
        let n = self.cfg.n_neurons;
        if injected.len() != n {
            return Err(AgentError::InjectionLength {
                got: injected.len(),
                expected: n,
            });
        }
        if self.decay.dt != dt_ms {
            self.decay = Self::decay_for(&self.cfg, dt_ms);
        }
        let d = self.decay;
        let cfg = &self.cfg;
        let st = &mut self.state;
        let k = dt_ms / cfg.tau_membrane_ms;
        let v_floor = cfg.v_rest_mv - 100.0;
        let mut spikes = Vec::new();
        for (r, x) in st.syn_rise.iter_mut().zip(st.syn_decay.iter_mut()) {
            *r = flush(*r * d.rise);
            *x = flush(*x * d.decay);
        }
        if !self.frozen {
            for (x, y) in st.pre_trace.iter_mut().zip(st.post_trace.iter_mut()) {
                *x = flush(*x * d.plus);
                *y = flush(*y * d.minus);
            }
        }
        let neurons = st
            .v_mv
            .iter_mut()
            .zip(st.refractory_ms.iter_mut())
            .zip(st.syn_rise.iter().zip(&st.syn_decay))
            .zip(injected);
        for (i, (((v_mv, refr), (rise, decay)), &inj)) in neurons.enumerate() {
            if *refr > 0.0 {
                *refr = (*refr - dt_ms).max(0.0);
                if *refr < 1e-9 {
                    *refr = 0.0;
                }
                continue;
            }
            let i_ext = if inj.is_nan() { 0.0 } else { inj.clamp(-1e6, 1e6) };
            let i_syn = self.syn_norm * (decay - rise);
            let v = *v_mv + k * (cfg.v_rest_mv - *v_mv + cfg.input_gain_mv_per_ua * i_ext + i_syn);
            if v >= cfg.threshold_mv {
                *v_mv = cfg.reset_mv;
                *refr = cfg.refractory_ms;
                spikes.push(i as NeuronId);
            } else {
                *v_mv = v.max(v_floor);
            }
        }
        st.clock_ms += dt_ms;
        for &p in &spikes {
            let p = p as usize;
            for s in self.out_start[p]..self.out_start[p + 1] {
                let post = self.syn_post[s] as usize;
                let w = st.weights[s];
                st.syn_rise[post] += w;
                st.syn_decay[post] += w;
            }
        }
        let g = self.cfg.lateral_inhibition;
        if g != 0.0 && self.pool_neurons.len() > 1 {
            for &p in &spikes {
                if let Some(own) = self.pool_of[p as usize] {
                    for (q, ns) in self.pool_neurons.iter().enumerate() {
                        if q != own {
                            for &j in ns {
                                st.syn_rise[j as usize] -= g;
                                st.syn_decay[j as usize] -= g;
                            }
                        }
                    }
                }
            }
        }
        self.spike_count += spikes.len() as u64;
        if !self.frozen {
            self.rebase_eligibility();
            if !spikes.is_empty() {
                self.stdp(&spikes);
            }
        }
        Ok(spikes)
    }

    fn stdp(&mut self, spikes: &[NeuronId]) {
        let gain = 1.0 / self.eligibility_decay();
        let a_plus = self.cfg.stdp.a_plus * gain;
        let a_minus = self.cfg.stdp.a_minus * gain;
        // Potentiation: post spikes read presynaptic traces.
        for &j in spikes {
            let j = j as usize;
            for k in self.in_start[j]..self.in_start[j + 1] {
                let s = self.in_syn[k];
                let x = self.state.pre_trace[self.syn_pre[s] as usize];
                if x > 0.0 {
                    self.state.eligibility[s] += a_plus * x;
                }
            }
        }
        // Depression: pre spikes read postsynaptic traces.
        for &i in spikes {
            let i = i as usize;
            for s in self.out_start[i]..self.out_start[i + 1] {
                let y = self.state.post_trace[self.syn_post[s] as usize];
                if y > 0.0 && a_minus != 0.0 {
                    self.state.eligibility[s] -= a_minus * y;
                }
            }
        }
        for &i in spikes {
            self.state.pre_trace[i as usize] += 1.0;
            self.state.post_trace[i as usize] += 1.0;
        }
    }

    /// Advance by `duration_ms` at the configured step, draining queued
    /// stimulation and adding background noise. Returns `(step index, neuron)`
    /// for every spike.
    pub fn run(&mut self, duration_ms: f64) -> Result<Vec<(usize, NeuronId)>, AgentError> {
        let dt = self.cfg.dt_ms;
        let steps = whole_steps(duration_ms, dt).ok_or_else(|| {
            AgentError::InvalidConfig(format!("{duration_ms} ms is not a multiple of dt {dt} ms"))
        })?;
        let n = self.cfg.n_neurons;
        let noise = Normal::new(self.cfg.noise.mean_ua, self.cfg.noise.std_ua.max(0.0))
            .unwrap_or_else(|_| Normal::new(0.0, 0.0).expect("zero std is valid"));
        let mut current = vec![0.0; n];
        let mut out = Vec::new();
        for k in 0..steps {
            current.iter_mut().for_each(|c| *c = 0.0);
            if let Some(slot_currents) = self.schedule.pop_front() {
                for ((_, neurons), &c) in self.input_slots.iter().zip(&slot_currents) {
                    if c != 0.0 {
                        for &nid in neurons {
                            current[nid as usize] += c;
                            self.electrode_charge[nid as usize] += c * dt;
                        }
                    }
                }
            }
            if self.noise_enabled {
                if self.cfg.noise.std_ua > 0.0 {
                    for c in current.iter_mut() {
                        *c += noise.sample(&mut self.noise_rng);
                    }
                } else {
                    for c in current.iter_mut() {
                        *c += self.cfg.noise.mean_ua;
                    }
                }
            }
            for nid in self.step(dt, &current)? {
                out.push((k, nid));
            }
        }
        Ok(out)
    }

    /// Charge (µA·ms) delivered through electrodes to each neuron so far.
    pub fn electrode_charge(&self) -> &[f64] {
        &self.electrode_charge
    }

    /// Copy at rest: membranes at V_rest, no synaptic or queued current, no
    /// noise, plasticity frozen, integrating at `dt_ms`. Weights are shared
    /// by value, so probing the copy cannot touch the original.
    pub fn quiescent_copy(&self, dt_ms: f64) -> Agent {
        let mut c = self.clone();
        let n = c.cfg.n_neurons;
        c.state.v_mv = vec![c.cfg.v_rest_mv; n];
        c.state.syn_rise = vec![0.0; n];
        c.state.syn_decay = vec![0.0; n];
        c.state.refractory_ms = vec![0.0; n];
        c.schedule.clear();
        c.noise_enabled = false;
        c.frozen = true;
        c.cfg.dt_ms = dt_ms;
        c
    }

    /// Write `neuron_pre,neuron_post,weight` rows.
    pub fn write_weights_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["neuron_pre", "neuron_post", "weight"])?;
        for (pre, post, weight) in self.synapses() {
            wr.serialize((pre, post, weight))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Mean firing rate (Hz) of all neurons over `duration_ms` of spontaneous
    /// activity, measured on a frozen copy so the agent itself is unchanged.
    pub fn baseline_rate_hz(&self, duration_ms: f64) -> Result<f64, AgentError> {
        let mut probe = self.clone();
        probe.freeze_plasticity(true);
        probe.schedule.clear();
        let spikes = probe.run(duration_ms)?;
        Ok(spikes.len() as f64 / self.cfg.n_neurons as f64 / (duration_ms / 1000.0))
    }

    /// Standard-normal draw from the noise stream; lets callers that share
    /// the agent's randomness stay reproducible.
    pub fn noise_sample(&mut self) -> f64 {
        StandardNormal.sample(&mut self.noise_rng)
    }
}

/// Decayed state below this is dropped; keeps the loop out of subnormals.
fn flush(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        0.0
    } else {
        x
    }
}

impl Substrate for Agent {
    fn inject(
        &mut self,
        electrodes: &[ElectrodeId],
        samples: &[f64],
        dt_ms: f64,
    ) -> Result<(), MeaError> {
        let slots: Vec<usize> = electrodes
            .iter()
            .map(|e| {
                self.input_slots
                    .iter()
                    .position(|(id, _)| id == e)
                    .ok_or(MeaError::NotStimulating(*e))
            })
            .collect::<Result<_, _>>()?;
        if !(dt_ms > 0.0) {
            return Err(MeaError::NonPositiveDt(dt_ms));
        }
        // Bin the rendered trace onto the integration grid as mean rectified
        // current: charge-balanced pulses still depolarise.
        let net_dt = self.cfg.dt_ms;
        let mut bins: Vec<f64> = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            let k = ((i as f64 * dt_ms) / net_dt + 1e-9).floor() as usize;
            if bins.len() <= k {
                bins.resize(k + 1, 0.0);
            }
            bins[k] += s.abs() * dt_ms / net_dt;
        }
        let width = self.input_slots.len();
        while self.schedule.len() < bins.len() {
            self.schedule.push_back(vec![0.0; width]);
        }
        for (k, b) in bins.into_iter().enumerate() {
            for &slot in &slots {
                self.schedule[k][slot] += b;
            }
        }
        Ok(())
    }

    fn advance_recording(
        &mut self,
        window_ms: f64,
        electrode_sets: &[&[ElectrodeId]],
    ) -> Result<Vec<Vec<f64>>, MeaError> {
        let mut owner = vec![usize::MAX; self.cfg.n_neurons];
        for (set_idx, set) in electrode_sets.iter().enumerate() {
            for e in set.iter() {
                let neurons = self
                    .map
                    .outputs()
                    .get(e)
                    .ok_or_else(|| MeaError::UnknownGroup(format!("recording electrode {e}")))?;
                for &n in neurons {
                    owner[n as usize] = set_idx;
                }
            }
        }
        let dt = self.cfg.dt_ms;
        let spikes = self
            .run(window_ms)
            .map_err(|e| MeaError::InvalidStimulus(e.to_string()))?;
        let mut out = vec![Vec::new(); electrode_sets.len()];
        for (k, nid) in spikes {
            let set = owner[nid as usize];
            if set != usize::MAX {
                out[set].push(k as f64 * dt);
            }
        }
        Ok(out)
    }

    fn clock_ms(&self) -> f64 {
        self.state.clock_ms
    }
}
