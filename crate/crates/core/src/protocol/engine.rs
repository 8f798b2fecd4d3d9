use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::generator::Generator;
use super::prompt::{build_prompt, refine_template, HistoryEntry, NetworkState, PromptContext, DEFAULT_TEMPLATE};
use super::spec::{parse_protocol, validate, ProtocolSpec, ValidationError};
use crate::agent::Agent;
use crate::env::Environment;
use crate::harness::{
    build_agent, io_err, run_session, sub_seed, ExperimentConfig, ExperimentRecord, HarnessError,
    Metrics,
};
use crate::probe::PlasticityReport;

/// One meta-loop iteration: what was asked, what came back, and what
/// happened. Contains no wall-clock data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub iteration: u32,
    pub prompt_digest: String,
    /// Raw generator output, stored verbatim.
    pub candidate: String,
    pub valid: bool,
    pub validation_errors: Vec<ValidationError>,
    pub protocol_digest: Option<String>,
    pub summary: Option<String>,
    /// Task metric of the run's final block.
    pub metric: Option<f64>,
    pub metrics: Option<Metrics>,
    pub plasticity: Option<PlasticityReport>,
    pub suggestion: Option<String>,
    /// Set for failed iterations (generation, validation or execution).
    pub error: Option<String>,
}

impl DatasetRecord {
    pub fn metric(&self) -> Option<f64> {
        self.metric
    }

    pub fn is_failure(&self) -> bool {
        self.error.is_some()
    }

    pub fn history_entry(&self) -> HistoryEntry {
        let summary = match (&self.summary, self.validation_errors.first()) {
            (Some(s), _) => s.clone(),
            (None, Some(e)) => format!("invalid protocol ({} {})", e.path, e.kind),
            (None, None) => "no protocol".into(),
        };
        HistoryEntry {
            digest: self.protocol_digest.clone().unwrap_or_default(),
            summary,
            outcome: if self.is_failure() { None } else { self.metric },
        }
    }

    #[cfg(test)]
    pub(crate) fn test_run(metric: f64) -> Self {
        Self {
            valid: true,
            metric: Some(metric),
            ..Self::default()
        }
    }
}

/// Run `blocks` blocks of closed-loop training under `spec`. Invalid specs
/// are refused before anything runs.
pub fn execute_protocol(
    spec: &ProtocolSpec,
    base: &ExperimentConfig,
    blocks: u64,
) -> Result<ExperimentRecord, HarnessError> {
    let (record, _) = execute_protocol_with(spec, base, blocks, Vec::new(), &mut std::io::sink())?;
    Ok(record)
}

/// As [`execute_protocol`], continuing from `agents` and streaming events
/// to `log`; the trained agents are handed back.
pub fn execute_protocol_with(
    spec: &ProtocolSpec,
    base: &ExperimentConfig,
    blocks: u64,
    agents: Vec<Agent>,
    log: &mut dyn Write,
) -> Result<(ExperimentRecord, Vec<Agent>), HarnessError> {
    let mut cfg = base.with_protocol(spec)?;
    cfg.protocol = None;
    cfg.trials = blocks * cfg.trials_per_block;
    let (mut record, agents) = run_session(&cfg, agents, log)?;
    record.protocol = Some(spec.clone());
    Ok((record, agents))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaLoopConfig {
    pub experiment: ExperimentConfig,
    pub objective: String,
    /// Starting template; the built-in one when absent.
    pub template: Option<String>,
    pub blocks_per_run: u64,
    /// Refine the template after every `refine_every` iterations.
    pub refine_every: u32,
    pub max_history: usize,
    /// Keep training the same network across iterations.
    pub persist_agent: bool,
    /// Append-only JSON Lines dataset.
    pub dataset_path: Option<PathBuf>,
}

impl Default for MetaLoopConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig {
                trials_per_block: 10,
                ..ExperimentConfig::default()
            },
            objective: "Raise the prey capture rate of the agent.".into(),
            template: None,
            blocks_per_run: 1,
            refine_every: 5,
            max_history: 10,
            persist_agent: true,
            dataset_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaLoopOutput {
    pub dataset: Vec<DatasetRecord>,
    pub template: String,
    pub refinements: u32,
}

fn digest(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

/// Prompt, generate, validate, execute, store; refine the template every
/// `refine_every` iterations. Per-iteration failures become dataset records
/// and the loop carries on. Only setup problems (a template without the
/// required placeholders, an unwritable dataset file) are returned as errors.
pub fn meta_loop(
    cfg: &MetaLoopConfig,
    generator: &mut dyn Generator,
    iterations: u32,
) -> Result<MetaLoopOutput, HarnessError> {
    let exp = &cfg.experiment;
    exp.validate()?;
    let mut template = cfg.template.clone().unwrap_or_else(|| DEFAULT_TEMPLATE.to_string());
    build_prompt(&template, &PromptContext::new("", NetworkState::default()))
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut sink = match &cfg.dataset_path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            let f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(io_err(p))?;
            Some((p.clone(), BufWriter::new(f)))
        }
        None => None,
    };

    let mut agents: Vec<Agent> = Vec::new();
    if cfg.persist_agent && !exp.baseline_random {
        let layout = exp.env.build(0)?.layout();
        let seeds = crate::harness::SubSeeds::from_master(exp.seed);
        agents.push(build_agent(&exp.network, &layout, seeds.agent, seeds.noise)?);
    }
    let mut dataset: Vec<DatasetRecord> = Vec::new();
    let mut refinements = 0;
    let mut last_slope = None;
    for i in 0..iterations {
        let baseline_rate_hz = match agents.first() {
            Some(a) => a.baseline_rate_hz(500.0)?,
            None => 0.0,
        };
        let mut ctx = PromptContext::new(
            cfg.objective.clone(),
            NetworkState {
                baseline_rate_hz,
                last_slope,
            },
        )
        .with_dataset(&dataset);
        ctx.max_history = cfg.max_history;
        let prompt = build_prompt(&template, &ctx).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut rec = DatasetRecord {
            iteration: i,
            prompt_digest: digest(&prompt),
            ..DatasetRecord::default()
        };
        match generator.generate(&prompt) {
            Err(e) => rec.error = Some(format!("generation failed: {e}")),
            Ok(text) => {
                rec.candidate = text;
                match parse_protocol(&rec.candidate).map_err(|e| vec![e]).and_then(|s| {
                    validate(&s)?;
                    Ok(s)
                }) {
                    Err(errors) => {
                        rec.error = Some(format!("invalid protocol: {}", errors[0]));
                        rec.validation_errors = errors;
                    }
                    Ok(spec) => {
                        rec.valid = true;
                        rec.protocol_digest = Some(spec.digest());
                        rec.summary = Some(spec.describe());
                        let mut run_cfg = exp.clone();
                        run_cfg.seed = sub_seed(exp.seed, &format!("iteration/{i}"));
                        run_cfg.out_dir = None;
                        let carried = if cfg.persist_agent {
                            std::mem::take(&mut agents)
                        } else {
                            Vec::new()
                        };
                        match execute_protocol_with(
                            &spec,
                            &run_cfg,
                            cfg.blocks_per_run,
                            carried,
                            &mut std::io::sink(),
                        ) {
                            Ok((record, trained)) => {
                                if cfg.persist_agent {
                                    agents = trained;
                                }
                                last_slope = record.probes.last().map(|p| p.measurement.slope);
                                rec.metric = record.final_metric();
                                rec.metrics = Some(record.metrics.overall);
                                rec.plasticity = record.plasticity;
                                rec.suggestion = record.suggestion;
                            }
                            Err(e) => {
                                log::warn!("iteration {i}: run failed: {e}");
                                rec.error = Some(format!("execution failed: {e}"));
                            }
                        }
                    }
                }
            }
        }
        if let Some(e) = &rec.error {
            log::info!("iteration {i}: {e}");
        }
        if let Some((path, w)) = sink.as_mut() {
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n").map_err(io_err(path))?;
            w.flush().map_err(io_err(path))?;
        }
        dataset.push(rec);
        if cfg.refine_every > 0 && (i + 1) % cfg.refine_every == 0 {
            template = refine_template(&template, &dataset);
            refinements += 1;
        }
    }
    Ok(MetaLoopOutput {
        dataset,
        template,
        refinements,
    })
}
