use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::engine::DatasetRecord;
use super::spec::ErrorKind;

/// Parameter ranges quoted to the generator. The last two lines extend the
/// original list with the bounds [`super::validate`] also enforces.
pub const CONSTRAINT_BLOCK: &str = "Parameter constraints:
- reward_modality: one of [\"electrical\", \"dopamine_uncaging\"]
- electrical_params.shape: one of [\"bi-phasic\", \"tri-phasic\"]
- electrical_params.amplitude_uA: float, range [0.1, 20.0]
- electrical_params.pulse_duration_us: int, range [50, 500]
- dopamine_params.uncaging_duration_ms: int, range [100, 1000]
- electrical_params.frequency_hz: float, range [0.1, 200.0]
- punishment_params: {shape, amplitude_uA, pulse_duration_us} with the same ranges";

pub const DEFAULT_TEMPLATE: &str = "You tune a closed-loop stimulation experiment on a cultured neural network.
Goal: {{objective}}

Network state: {{state}}

Interface:
{{api}}

{{history}}

Reply with one JSON object holding the next protocol and nothing else.
{{constraints}}
";

pub const DEFAULT_API: &str = "- reward: sinusoid or pulse train on every sensory electrode, or dopamine uncaging
- punishment: white noise on a random half of the sensory electrodes
- optional \"curriculum\": {environment, trials_per_block, z, prey_policy}";

/// Placeholders a template must contain.
pub const REQUIRED: [&str; 3] = ["{{objective}}", "{{state}}", "{{history}}"];

const REFINEMENT_MARKER: &str = "\n\n## Refinement\n";
const TOP_K: usize = 3;
/// Length cap for a refined template; lower-ranked examples go first.
pub const MAX_TEMPLATE_CHARS: usize = 12_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("template lacks placeholder {0}")]
    MissingPlaceholder(&'static str),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NetworkState {
    pub baseline_rate_hz: f64,
    pub last_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub digest: String,
    /// E.g. "Electrical reward (20Hz, 2uA)".
    pub summary: String,
    /// Task metric in [0, 1]; `None` when the run failed.
    pub outcome: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub objective: String,
    pub api_spec: String,
    pub state: NetworkState,
    pub history: Vec<HistoryEntry>,
    /// Only the most recent entries are shown.
    pub max_history: usize,
}

impl PromptContext {
    pub fn new(objective: impl Into<String>, state: NetworkState) -> Self {
        Self {
            objective: objective.into(),
            api_spec: DEFAULT_API.into(),
            state,
            history: Vec::new(),
            max_history: 10,
        }
    }

    /// History entries for the records of a dataset, oldest first.
    pub fn with_dataset(mut self, dataset: &[DatasetRecord]) -> Self {
        self.history = dataset.iter().map(DatasetRecord::history_entry).collect();
        self
    }
}

fn format_outcome(o: Option<f64>) -> String {
    match o {
        Some(x) => format!("{:.0}%", x * 100.0),
        None => "failed".into(),
    }
}

fn history_section(ctx: &PromptContext) -> String {
    let skip = ctx.history.len().saturating_sub(ctx.max_history);
    let mut s = String::from("Historical Data:");
    for (i, h) in ctx.history.iter().enumerate().skip(skip) {
        s += &format!("\n- Run {}: {} -> {}", i + 1, h.summary, format_outcome(h.outcome));
    }
    s
}

/// Fill `template`. The constraint block is placed at `{{constraints}}` or
/// appended when the template has no such slot.
pub fn build_prompt(template: &str, ctx: &PromptContext) -> Result<String, PromptError> {
    for p in REQUIRED {
        if !template.contains(p) {
            return Err(PromptError::MissingPlaceholder(p));
        }
    }
    let state = format!(
        "baseline firing rate {:.2} Hz; last fEPSP slope {}",
        ctx.state.baseline_rate_hz,
        ctx.state
            .last_slope
            .map_or_else(|| "not measured".to_string(), |s| format!("{s:.6}"))
    );
    let mut out = template
        .replace("{{objective}}", &ctx.objective)
        .replace("{{state}}", &state)
        .replace("{{api}}", &ctx.api_spec)
        .replace("{{history}}", &history_section(ctx));
    if out.contains("{{constraints}}") {
        out = out.replace("{{constraints}}", CONSTRAINT_BLOCK);
    } else {
        out.push('\n');
        out.push_str(CONSTRAINT_BLOCK);
    }
    Ok(out)
}

/// Template without any refinement section.
pub fn base_template(template: &str) -> &str {
    template
        .find(REFINEMENT_MARKER)
        .map_or(template, |i| &template[..i])
}

/// Rebuild the refinement section from `dataset`: the best successful runs
/// as examples and a tally of the most common validation failures. Applying
/// it twice to the same dataset gives the same text.
pub fn refine_template(template: &str, dataset: &[DatasetRecord]) -> String {
    let base = base_template(template);
    let mut runs: Vec<&DatasetRecord> = dataset
        .iter()
        .filter(|r| r.error.is_none() && r.metric().is_some())
        .collect();
    runs.sort_by(|a, b| {
        b.metric()
            .partial_cmp(&a.metric())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.iteration.cmp(&b.iteration))
    });
    runs.truncate(TOP_K);

    let mut failures: BTreeMap<(String, ErrorKind), usize> = BTreeMap::new();
    for r in dataset {
        for e in &r.validation_errors {
            *failures.entry((e.path.clone(), e.kind)).or_default() += 1;
        }
    }
    let mut failures: Vec<_> = failures.into_iter().collect();
    failures.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let failure_text = if failures.is_empty() {
        "\n### Failure modes\nnone recorded\n".to_string()
    } else {
        let mut s = String::from("\n### Failure modes\n");
        for ((path, kind), n) in failures.iter().take(5) {
            let path = if path.is_empty() { "(document)" } else { path };
            s += &format!("- {path}: {kind} ({n}x)\n");
        }
        s
    };

    let example = |rank: usize, r: &DatasetRecord| {
        format!(
            "Example {} (iteration {}, prompt {}, metric {:.2}):\n{}\n",
            rank + 1,
            r.iteration,
            r.prompt_digest,
            r.metric().unwrap_or(f64::NAN),
            r.candidate.trim()
        )
    };
    // Drop the lowest ranked examples until the template fits.
    loop {
        let mut s = String::from(base);
        s += REFINEMENT_MARKER;
        s += "### Successful examples\n";
        if runs.is_empty() {
            s += "none yet\n";
        }
        for (i, r) in runs.iter().enumerate() {
            s += &example(i, r);
        }
        s += &failure_text;
        if s.chars().count() <= MAX_TEMPLATE_CHARS || runs.is_empty() {
            return s;
        }
        runs.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::spec::ValidationError;

    fn ctx() -> PromptContext {
        PromptContext::new(
            "Raise the capture rate",
            NetworkState {
                baseline_rate_hz: 11.0,
                last_slope: None,
            },
        )
    }

    fn run(iteration: u32, metric: f64) -> DatasetRecord {
        DatasetRecord {
            iteration,
            prompt_digest: format!("p{iteration}"),
            candidate: format!("{{\"run\": {iteration}}}"),
            summary: Some(format!("run {iteration}")),
            ..DatasetRecord::test_run(metric)
        }
    }

    fn failure(iteration: u32, path: &str) -> DatasetRecord {
        DatasetRecord {
            iteration,
            prompt_digest: "x".into(),
            candidate: "{}".into(),
            validation_errors: vec![ValidationError {
                path: path.into(),
                kind: ErrorKind::OutOfRange,
                constraint: "∉ [0.1, 20.0]".into(),
                value: "25.0".into(),
            }],
            error: Some("invalid".into()),
            ..DatasetRecord::default()
        }
    }

    #[test]
    fn empty_history_has_section() {
        let p = build_prompt(DEFAULT_TEMPLATE, &ctx()).unwrap();
        assert!(p.contains("Historical Data:"));
        assert!(!p.contains("- Run"));
        assert!(p.contains(CONSTRAINT_BLOCK));
        assert!(p.contains("Raise the capture rate"));
        assert!(p.contains("11.00 Hz"));
        assert_eq!(p, build_prompt(DEFAULT_TEMPLATE, &ctx()).unwrap());
    }

    #[test]
    fn history_lines() {
        let mut c = ctx();
        for (s, o) in [
            ("Electrical reward (20Hz, 2uA)", 0.22),
            ("Electrical reward (40Hz, 2uA)", 0.24),
            ("Dopamine uncaging reward (500ms duration)", 0.25),
        ] {
            c.history.push(HistoryEntry {
                digest: "d".into(),
                summary: s.into(),
                outcome: Some(o),
            });
        }
        let p = build_prompt(DEFAULT_TEMPLATE, &c).unwrap();
        let lines: Vec<_> = p.lines().filter(|l| l.starts_with("- Run")).collect();
        assert_eq!(
            lines,
            [
                "- Run 1: Electrical reward (20Hz, 2uA) -> 22%",
                "- Run 2: Electrical reward (40Hz, 2uA) -> 24%",
                "- Run 3: Dopamine uncaging reward (500ms duration) -> 25%"
            ]
        );
        c.max_history = 2;
        let p = build_prompt(DEFAULT_TEMPLATE, &c).unwrap();
        assert!(!p.contains("- Run 1:"));
        assert!(p.contains("- Run 3:"));
    }

    #[test]
    fn missing_placeholder() {
        assert_eq!(
            build_prompt("Goal: {{objective}} {{history}}", &ctx()),
            Err(PromptError::MissingPlaceholder("{{state}}"))
        );
        let p = build_prompt("{{objective}} {{state}} {{history}}", &ctx()).unwrap();
        assert!(p.ends_with(CONSTRAINT_BLOCK));
    }

    #[test]
    fn one_success_one_example() {
        let t = refine_template(DEFAULT_TEMPLATE, &[run(0, 0.4)]);
        assert_eq!(t.matches("Example ").count(), 1);
        assert!(t.contains("{\"run\": 0}"));
        assert!(t.starts_with(DEFAULT_TEMPLATE));
    }

    #[test]
    fn failure_section_names_frequent_field() {
        let mut ds: Vec<_> = (0..5).map(|i| failure(i, "electrical_params.amplitude_uA")).collect();
        ds.push(failure(5, "punishment_params.pulse_duration_us"));
        ds.push(run(6, 0.3));
        let t = refine_template(DEFAULT_TEMPLATE, &ds);
        let section = &t[t.find("### Failure modes").unwrap()..];
        let first = section.lines().nth(1).unwrap();
        assert_eq!(first, "- electrical_params.amplitude_uA: out of range (5x)");
    }

    #[test]
    fn top_k_ranked_and_idempotent() {
        let ds: Vec<_> = [0.2, 0.9, 0.5, 0.7, 0.1]
            .iter()
            .enumerate()
            .map(|(i, &m)| run(i as u32, m))
            .collect();
        let once = refine_template(DEFAULT_TEMPLATE, &ds);
        assert_eq!(refine_template(&once, &ds), once);
        assert_eq!(once.matches("Example ").count(), 3);
        let e1 = once.find("Example 1 (iteration 1,").unwrap();
        let e2 = once.find("Example 2 (iteration 3,").unwrap();
        let e3 = once.find("Example 3 (iteration 2,").unwrap();
        assert!(e1 < e2 && e2 < e3);
        assert!(build_prompt(&once, &ctx()).is_ok());
    }

    #[test]
    fn length_bounded() {
        let big: Vec<_> = (0..3)
            .map(|i| DatasetRecord {
                candidate: "x".repeat(5000),
                ..run(i, 0.5 + i as f64 / 10.0)
            })
            .collect();
        let t = refine_template(DEFAULT_TEMPLATE, &big);
        assert!(t.chars().count() <= MAX_TEMPLATE_CHARS);
        assert!(t.contains("Example 1 (iteration 2,"));
        assert!(!t.contains("Example 3"));
    }
}
