//! Test-pulse probing of synaptic strength.
//!
//! The field-potential analog is the summed synaptic input current into a
//! recording group's neurons after a single pulse on one stimulation
//! electrode. It is linear in the weights, so its initial slope tracks
//! synaptic strength directly. Probes run on a quiescent, frozen copy of the
//! agent and never touch the original's weights.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentError, NeuronId};
use crate::feedback::{deliver, FeedbackError, FeedbackEvent, FeedbackParams};
use crate::mea::{
    apply_stimulus, ElectrodeGroup, ElectrodeId, GroupRole, MeaError, PulseShape, StimulusCommand,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("electrode {0} is a recording electrode and cannot carry a probe pulse")]
    ProbeOnRecording(ElectrodeId),
    #[error("electrode {0} is not wired to the agent")]
    UnknownElectrode(ElectrodeId),
    #[error("group {0} is not a recording group")]
    NotRecording(String),
    #[error("measurements come from different probe paths ({0} vs {1})")]
    MismatchedPaths(String, String),
    #[error("invalid probe parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Mea(#[from] MeaError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeParams {
    pub amplitude_ua: f64,
    pub pulse_width_us: f64,
    pub shape: PulseShape,
    /// Length of the recorded response.
    pub record_ms: f64,
    /// Integration step while probing.
    pub dt_ms: f64,
    /// Slope fit window, skipping the stimulus artifact.
    pub fit_start_ms: f64,
    pub fit_end_ms: f64,
    /// Percent change needed to call LTP or LTD.
    pub threshold_pct: f64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        Self {
            amplitude_ua: 20.0,
            pulse_width_us: 200.0,
            shape: PulseShape::BiPhasic,
            record_ms: 5.0,
            dt_ms: 0.1,
            fit_start_ms: 0.5,
            fit_end_ms: 2.5,
            threshold_pct: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlasticityMeasurement {
    pub probe_electrode: ElectrodeId,
    pub record_group: String,
    /// Response units per ms.
    pub slope: f64,
    /// Agent clock when the probe was taken.
    pub timestamp_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    #[serde(rename = "LTP")]
    Ltp,
    #[serde(rename = "LTD")]
    Ltd,
    NoChange,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::Ltp => "LTP",
            Classification::Ltd => "LTD",
            Classification::NoChange => "NoChange",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlasticityReport {
    pub before: PlasticityMeasurement,
    pub after: PlasticityMeasurement,
    /// `None` when the baseline slope is zero.
    pub percent_change: Option<f64>,
    pub classification: Classification,
}

fn check_path(
    agent: &Agent,
    electrode: ElectrodeId,
    group: &ElectrodeGroup,
) -> Result<Vec<NeuronId>, ProbeError> {
    let map = agent.electrode_map();
    if !map.inputs().contains_key(&electrode) {
        return Err(if map.outputs().contains_key(&electrode) {
            ProbeError::ProbeOnRecording(electrode)
        } else {
            ProbeError::UnknownElectrode(electrode)
        });
    }
    if group.role() != GroupRole::Record {
        return Err(ProbeError::NotRecording(group.id().to_string()));
    }
    let mut neurons = Vec::new();
    for &e in group.electrodes() {
        let ns = map
            .outputs()
            .get(&e)
            .ok_or(ProbeError::UnknownElectrode(e))?;
        neurons.extend_from_slice(ns);
    }
    Ok(neurons)
}

/// Summed synaptic input into `group` after a single test pulse, sampled
/// every `params.dt_ms` (sample k is taken at `(k + 1)·dt`).
pub fn response_trace(
    agent: &Agent,
    probe_electrode: ElectrodeId,
    group: &ElectrodeGroup,
    params: &ProbeParams,
) -> Result<Vec<f64>, ProbeError> {
    let neurons = check_path(agent, probe_electrode, group)?;
    if !(params.dt_ms > 0.0 && params.record_ms > params.dt_ms) {
        return Err(ProbeError::InvalidParams("need 0 < dt < record window".into()));
    }
    let mut copy = agent.quiescent_copy(params.dt_ms);
    let pulse = StimulusCommand::single_pulse(
        [probe_electrode],
        params.shape,
        params.amplitude_ua,
        params.pulse_width_us,
        params.record_ms,
    )?;
    apply_stimulus(&mut copy, &pulse)?;
    let steps = (params.record_ms / params.dt_ms).round() as usize;
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        copy.run(params.dt_ms)?;
        trace.push(neurons.iter().map(|&n| copy.synaptic_current(n)).sum());
    }
    Ok(trace)
}

/// Least-squares slope of `(t, y)` pairs.
fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Measure the evoked-response slope on the path `probe_electrode → group`.
/// Plasticity is frozen for the duration of the call and then restored.
pub fn measure_fepsp(
    agent: &mut Agent,
    probe_electrode: ElectrodeId,
    group: &ElectrodeGroup,
    params: &ProbeParams,
) -> Result<PlasticityMeasurement, ProbeError> {
    let was_frozen = agent.is_frozen();
    agent.freeze_plasticity(true);
    let trace = response_trace(agent, probe_electrode, group, params);
    agent.freeze_plasticity(was_frozen);
    let trace = trace?;
    let eps = 1e-9;
    let points: Vec<(f64, f64)> = trace
        .iter()
        .enumerate()
        .map(|(k, &y)| ((k + 1) as f64 * params.dt_ms, y))
        .filter(|&(t, _)| t >= params.fit_start_ms - eps && t <= params.fit_end_ms + eps)
        .collect();
    Ok(PlasticityMeasurement {
        probe_electrode,
        record_group: group.id().to_string(),
        slope: ls_slope(&points),
        timestamp_ms: agent.state().clock_ms,
    })
}

/// Compare two measurements of the same path. A zero baseline with a
/// non-zero follow-up counts as LTP.
pub fn classify(
    before: &PlasticityMeasurement,
    after: &PlasticityMeasurement,
    threshold_pct: f64,
) -> Result<PlasticityReport, ProbeError> {
    if before.probe_electrode != after.probe_electrode || before.record_group != after.record_group
    {
        return Err(ProbeError::MismatchedPaths(
            format!("{}->{}", before.probe_electrode, before.record_group),
            format!("{}->{}", after.probe_electrode, after.record_group),
        ));
    }
    let (percent_change, classification) = if before.slope == 0.0 {
        if after.slope == 0.0 {
            (Some(0.0), Classification::NoChange)
        } else {
            (None, Classification::Ltp)
        }
    } else {
        let pct = 100.0 * (after.slope - before.slope) / before.slope.abs();
        let class = if pct > threshold_pct {
            Classification::Ltp
        } else if pct < -threshold_pct {
            Classification::Ltd
        } else {
            Classification::NoChange
        };
        (Some(pct), class)
    };
    Ok(PlasticityReport {
        before: before.clone(),
        after: after.clone(),
        percent_change,
        classification,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairingOrder {
    PreBeforePost,
    PostBeforePre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingParams {
    pub order: PairingOrder,
    /// Gap between the two spikes of a pairing.
    pub lag_ms: f64,
    /// Current (µA) injected directly into a neuron to make it fire.
    pub drive_ua: f64,
    /// Quiet time between a pairing and its feedback.
    pub settle_ms: f64,
    /// Quiet time after feedback before the next pairing.
    pub rest_ms: f64,
}

impl Default for PairingParams {
    fn default() -> Self {
        Self {
            order: PairingOrder::PreBeforePost,
            lag_ms: 5.0,
            drive_ua: 10.0,
            settle_ms: 20.0,
            rest_ms: 200.0,
        }
    }
}

/// Pair spikes on the probe path by direct current injection: the probe
/// electrode's neurons fire, then `lag_ms` later the recording group's
/// neurons fire (or the reverse). Each pairing is followed by the feedback
/// produced by `next_event`.
pub fn pairing_session<R: Rng + ?Sized>(
    agent: &mut Agent,
    probe_electrode: ElectrodeId,
    group: &ElectrodeGroup,
    stim_groups: &[&ElectrodeGroup],
    pairings: usize,
    params: &PairingParams,
    feedback: &FeedbackParams,
    mut next_event: impl FnMut(usize) -> Option<FeedbackEvent>,
    rng: &mut R,
) -> Result<(), ProbeError> {
    let post = check_path(agent, probe_electrode, group)?;
    let pre = agent
        .electrode_map()
        .neurons_for(probe_electrode)
        .expect("checked above")
        .to_vec();
    let dt = agent.config().dt_ms;
    let lag = (params.lag_ms / dt).round().max(1.0) as usize;
    let n = agent.n_neurons();
    let drive = |ids: &[NeuronId]| {
        let mut v = vec![0.0; n];
        for &i in ids {
            v[i as usize] = params.drive_ua;
        }
        v
    };
    let (first, second) = match params.order {
        PairingOrder::PreBeforePost => (drive(&pre), drive(&post)),
        PairingOrder::PostBeforePre => (drive(&post), drive(&pre)),
    };
    let quiet = vec![0.0; n];
    for i in 0..pairings {
        agent.step(dt, &first)?;
        for _ in 1..lag {
            agent.step(dt, &quiet)?;
        }
        agent.step(dt, &second)?;
        agent.run(params.settle_ms)?;
        if let Some(event) = next_event(i) {
            deliver(&event, agent, stim_groups, feedback, rng)?;
        }
        agent.run(params.rest_ms)?;
    }
    Ok(())
}
