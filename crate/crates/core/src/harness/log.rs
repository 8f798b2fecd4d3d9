use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Action;
use crate::env::Outcome;
use crate::feedback::FeedbackKind;

#[derive(Debug, Error, PartialEq)]
pub enum LogError {
    #[error("line {line}: unreadable or truncated event ({reason})")]
    Truncated { line: usize, reason: String },
    #[error("line {line}: expected event {expected}, found {found}")]
    Gap { line: usize, expected: u64, found: u64 },
    #[error("read failure: {0}")]
    Io(String),
}

/// Feedback delivered to one player during a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLog {
    pub player: usize,
    pub kind: FeedbackKind,
    pub magnitude: f64,
    /// Neuromodulatory signal actually applied.
    pub signal: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
}

/// One closed-loop timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub trial: u64,
    pub block: u64,
    /// Steps already taken in this trial before this one.
    pub step_in_trial: u32,
    /// Spike counts per motor group, per player; empty under the random
    /// baseline.
    pub counts: Vec<Vec<usize>>,
    pub actions: Vec<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feedback: Vec<FeedbackLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safe: Option<bool>,
    /// Set on the step that closes a trial: success from player 0's view.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_end: Option<bool>,
    /// Player credited with the point (two-player modes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner: Option<usize>,
    /// The trial hit the step cap without an outcome.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cutoff: bool,
    pub state: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEvent {
    pub block: u64,
    pub electrode: u32,
    pub group: String,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Step(StepEvent),
    Probe(ProbeEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Task metrics; every field is `None` when there is no data for it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: u64,
    pub trials: u64,
    pub successes: u64,
    /// Successful trials over all trials (capture rate, interception rate).
    pub success_rate: Option<f64>,
    pub mean_steps_to_success: Option<f64>,
    /// Consecutive paddle hits before a miss.
    pub mean_rally: Option<f64>,
    pub max_rally: Option<u64>,
    pub interception_rate: Option<f64>,
    pub safe_occupancy: Option<f64>,
    /// Points per player in two-player modes.
    pub wins: Option<[u64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMetrics {
    pub block: u64,
    pub metrics: Metrics,
    /// Probe slope measured at the end of the block.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricTable {
    pub overall: Metrics,
    pub blocks: Vec<BlockMetrics>,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    steps: u64,
    trials: u64,
    successes: u64,
    success_steps: u64,
    hits: u64,
    misses: u64,
    rallies: Vec<u64>,
    rally: u64,
    safe_known: u64,
    safe: u64,
    wins: [u64; 2],
    two_player: bool,
}

fn ratio(n: u64, d: u64) -> Option<f64> {
    (d > 0).then(|| n as f64 / d as f64)
}

impl Tally {
    fn push(&mut self, e: &StepEvent) {
        self.steps += 1;
        if e.actions.len() > 1 {
            self.two_player = true;
        }
        match e.outcome {
            Some(Outcome::Hit) => {
                self.hits += 1;
                self.rally += 1;
            }
            Some(Outcome::Miss) => {
                self.misses += 1;
                self.rallies.push(std::mem::take(&mut self.rally));
            }
            _ => {}
        }
        if let Some(s) = e.safe {
            self.safe_known += 1;
            self.safe += s as u64;
        }
        if let Some(w) = e.winner {
            self.wins[w.min(1)] += 1;
        }
        if let Some(ok) = e.trial_end {
            self.trials += 1;
            if ok {
                self.successes += 1;
                self.success_steps += e.step_in_trial as u64 + 1;
            }
        }
    }

    fn metrics(&self) -> Metrics {
        let rally_n = self.rallies.len() as u64;
        Metrics {
            steps: self.steps,
            trials: self.trials,
            successes: self.successes,
            success_rate: ratio(self.successes, self.trials),
            mean_steps_to_success: ratio(self.success_steps, self.successes),
            mean_rally: ratio(self.rallies.iter().sum(), rally_n),
            max_rally: self.rallies.iter().copied().max(),
            interception_rate: ratio(self.hits, self.hits + self.misses),
            safe_occupancy: ratio(self.safe, self.safe_known),
            wins: self.two_player.then_some(self.wins),
        }
    }
}

/// Builds a [`MetricTable`] one event at a time; the runner feeds it online
/// and [`compute_metrics`] feeds it from a log.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    overall: Tally,
    blocks: Vec<(u64, Tally, Option<f64>)>,
}

impl MetricsAccumulator {
    pub fn push(&mut self, event: &Event) {
        match &event.kind {
            EventKind::Step(s) => {
                self.overall.push(s);
                if self.blocks.last().is_none_or(|b| b.0 != s.block) {
                    self.blocks.push((s.block, Tally::default(), None));
                }
                self.blocks.last_mut().expect("just pushed").1.push(s);
            }
            EventKind::Probe(p) => {
                if let Some(b) = self.blocks.iter_mut().rev().find(|b| b.0 == p.block) {
                    b.2 = Some(p.slope);
                }
            }
        }
    }

    pub fn table(&self) -> MetricTable {
        MetricTable {
            overall: self.overall.metrics(),
            blocks: self
                .blocks
                .iter()
                .map(|(block, t, slope)| BlockMetrics {
                    block: *block,
                    metrics: t.metrics(),
                    slope: *slope,
                })
                .collect(),
        }
    }
}

/// Parse an event log, rejecting truncated lines and gaps in the sequence.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<Event>, LogError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| LogError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: Event = serde_json::from_str(&line).map_err(|e| LogError::Truncated {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let expected = events.len() as u64;
        if ev.seq != expected {
            return Err(LogError::Gap {
                line: i + 1,
                expected,
                found: ev.seq,
            });
        }
        events.push(ev);
    }
    Ok(events)
}

/// Recompute every metric from an event log.
pub fn compute_metrics<R: BufRead>(reader: R) -> Result<MetricTable, LogError> {
    let mut acc = MetricsAccumulator::default();
    for e in read_events(reader)? {
        acc.push(&e);
    }
    Ok(acc.table())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn step(seq: u64, block: u64, trial_end: Option<bool>) -> Event {
        Event {
            seq,
            kind: EventKind::Step(StepEvent {
                trial: seq,
                block,
                step_in_trial: 2,
                counts: vec![vec![3, 1]],
                actions: vec![Action::Left],
                outcome: None,
                feedback: vec![],
                safe: None,
                trial_end,
                winner: None,
                cutoff: false,
                state: serde_json::json!({}),
            }),
        }
    }

    fn to_log(events: &[Event]) -> String {
        events
            .iter()
            .map(|e| serde_json::to_string(e).unwrap() + "\n")
            .collect()
    }

    #[test]
    fn capture_rate() {
        let events: Vec<_> = (0..10).map(|i| step(i, 0, Some(i < 7))).collect();
        let t = compute_metrics(to_log(&events).as_bytes()).unwrap();
        assert_eq!(t.overall.success_rate, Some(0.7));
        assert_eq!(t.overall.mean_steps_to_success, Some(3.0));
        assert_eq!(t.overall.trials, 10);
        assert_eq!(t.blocks.len(), 1);
    }

    #[test]
    fn empty_log_has_no_metrics() {
        let t = compute_metrics("".as_bytes()).unwrap();
        assert_eq!(t.overall.success_rate, None);
        assert_eq!(t.overall.mean_rally, None);
        assert_eq!(t.overall.safe_occupancy, None);
        assert_eq!(t.overall.wins, None);
        assert!(t.blocks.is_empty());
    }

    #[test]
    fn truncation_and_gaps_detected() {
        let events: Vec<_> = (0..3).map(|i| step(i, 0, None)).collect();
        let log = to_log(&events);
        let cut = &log[..log.len() - 10];
        assert!(matches!(
            compute_metrics(cut.as_bytes()),
            Err(LogError::Truncated { line: 3, .. })
        ));
        let gap = to_log(&[step(0, 0, None), step(2, 0, None)]);
        assert_eq!(
            compute_metrics(gap.as_bytes()),
            Err(LogError::Gap {
                line: 2,
                expected: 1,
                found: 2
            })
        );
    }

    #[test]
    fn rallies_occupancy_and_blocks() {
        let mut events = Vec::new();
        let outcomes = [Outcome::Hit, Outcome::Hit, Outcome::Miss, Outcome::Hit, Outcome::Miss];
        for (i, o) in outcomes.iter().enumerate() {
            let mut e = step(i as u64, i as u64 / 3, o.trial_result());
            if let EventKind::Step(s) = &mut e.kind {
                s.outcome = Some(*o);
                s.safe = Some(i % 2 == 0);
            }
            events.push(e);
        }
        events.push(Event {
            seq: 5,
            kind: EventKind::Probe(ProbeEvent {
                block: 1,
                electrode: 9,
                group: "A".into(),
                slope: 0.5,
            }),
        });
        let t = compute_metrics(to_log(&events).as_bytes()).unwrap();
        assert_eq!(t.overall.mean_rally, Some(1.5));
        assert_eq!(t.overall.max_rally, Some(2));
        assert_eq!(t.overall.interception_rate, Some(0.6));
        assert_eq!(t.overall.safe_occupancy, Some(0.6));
        assert_eq!(t.blocks.len(), 2);
        assert_eq!(t.blocks[0].metrics.trials, 3);
        assert_eq!(t.blocks[1].slope, Some(0.5));
        assert_eq!(t.blocks[0].slope, None);
    }
}
