use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::error::Category;
use sha2::{Digest, Sha256};

use crate::env::PreyPolicy;
use crate::feedback::{Channel, FeedbackParams, RewardStyle};
use crate::mea::PulseShape;

pub const AMPLITUDE_UA: (f64, f64) = (0.1, 20.0);
pub const PULSE_DURATION_US: (u32, u32) = (50, 500);
pub const UNCAGING_DURATION_MS: (u32, u32) = (100, 1000);
/// Not part of the original constraint list; a conservative guard.
pub const FREQUENCY_HZ: (f64, f64) = (0.1, 200.0);

/// Environment ids a curriculum may name.
pub const ENVIRONMENTS: [&str; 8] = [
    "avoidance1d",
    "dynamic_avoidance",
    "avoidance2d",
    "maze",
    "predator_prey1d",
    "predator_prey2d",
    "pong",
    "breakout",
];

/// A complete, valid protocol document.
pub const EXAMPLE_PROTOCOL: &str = r#"{
  "reward_modality": "electrical",
  "electrical_params": {
    "shape": "tri-phasic",
    "amplitude_uA": 8.5,
    "pulse_duration_us": 150,
    "frequency_hz": 30
  },
  "dopamine_params": null,
  "punishment_params": {
    "shape": "bi-phasic",
    "amplitude_uA": 10.0,
    "pulse_duration_us": 200
  }
}"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardModality {
    Electrical,
    DopamineUncaging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectricalParams {
    pub shape: PulseShape,
    #[serde(rename = "amplitude_uA")]
    pub amplitude_ua: f64,
    pub pulse_duration_us: u32,
    pub frequency_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DopamineParams {
    pub uncaging_duration_ms: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PunishmentParams {
    pub shape: PulseShape,
    #[serde(rename = "amplitude_uA")]
    pub amplitude_ua: f64,
    pub pulse_duration_us: u32,
}

/// Declarative curriculum knobs a protocol may set for the next block.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Curriculum {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials_per_block: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prey_policy: Option<PreyPolicy>,
}

/// An experiment protocol document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub reward_modality: RewardModality,
    #[serde(default)]
    pub electrical_params: Option<ElectricalParams>,
    #[serde(default)]
    pub dopamine_params: Option<DopamineParams>,
    pub punishment_params: PunishmentParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curriculum: Option<Curriculum>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Syntax,
    UnknownField,
    MissingField,
    TypeMismatch,
    InvalidChoice,
    OutOfRange,
    /// Parameters present or absent against the reward modality.
    Modality,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorKind::Syntax => "syntax error",
            ErrorKind::UnknownField => "unknown field",
            ErrorKind::MissingField => "missing field",
            ErrorKind::TypeMismatch => "type mismatch",
            ErrorKind::InvalidChoice => "invalid choice",
            ErrorKind::OutOfRange => "out of range",
            ErrorKind::Modality => "modality mismatch",
        };
        f.write_str(s)
    }
}

/// One violated constraint: where, which rule, and the offending value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValidationError {
    pub path: String,
    pub kind: ErrorKind,
    pub constraint: String,
    pub value: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}: {}", self.kind, self.constraint)
        } else if self.value.is_empty() {
            write!(f, "{}: {} ({})", self.path, self.constraint, self.kind)
        } else {
            write!(f, "{} = {}: {} ({})", self.path, self.value, self.constraint, self.kind)
        }
    }
}

impl std::error::Error for ValidationError {}

fn join(parent: &str, field: &str) -> String {
    if parent.is_empty() || parent == "." {
        field.to_string()
    } else {
        format!("{parent}.{field}")
    }
}

fn backticked(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

fn classify(err: serde_path_to_error::Error<serde_json::Error>) -> ValidationError {
    let path = err.path().to_string();
    let path = if path == "." { String::new() } else { path };
    let inner = err.into_inner();
    let msg = inner.to_string();
    let kind = match inner.classify() {
        Category::Syntax | Category::Eof | Category::Io => ErrorKind::Syntax,
        Category::Data if msg.starts_with("unknown field") => ErrorKind::UnknownField,
        Category::Data if msg.starts_with("missing field") => ErrorKind::MissingField,
        Category::Data if msg.starts_with("unknown variant") => ErrorKind::InvalidChoice,
        Category::Data => ErrorKind::TypeMismatch,
    };
    let (path, value) = match kind {
        ErrorKind::MissingField => (join(&path, backticked(&msg).unwrap_or("")), String::new()),
        ErrorKind::UnknownField => {
            let field = backticked(&msg).unwrap_or("");
            // The path may or may not already end in the offending key.
            let p = if path.ends_with(field) { path } else { join(&path, field) };
            (p, String::new())
        }
        _ => (path, String::new()),
    };
    ValidationError {
        path,
        kind,
        constraint: msg,
        value,
    }
}

/// Strict parse of a protocol document. Unknown fields, wrong types and
/// missing required sections are each reported with their field path.
pub fn parse_protocol(text: &str) -> Result<ProtocolSpec, ValidationError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let spec: ProtocolSpec = serde_path_to_error::deserialize(&mut de).map_err(classify)?;
    de.end().map_err(|e| ValidationError {
        path: String::new(),
        kind: ErrorKind::Syntax,
        constraint: e.to_string(),
        value: String::new(),
    })?;
    Ok(spec)
}

fn range_check<T: PartialOrd + fmt::Debug + Copy>(
    errors: &mut Vec<ValidationError>,
    path: &str,
    value: T,
    (lo, hi): (T, T),
) {
    // Written so that NaN fails too.
    if !(value >= lo && value <= hi) {
        errors.push(ValidationError {
            path: path.into(),
            kind: ErrorKind::OutOfRange,
            constraint: format!("∉ [{lo:?}, {hi:?}]"),
            value: format!("{value:?}"),
        });
    }
}

fn modality_error(path: &str, constraint: &str) -> ValidationError {
    ValidationError {
        path: path.into(),
        kind: ErrorKind::Modality,
        constraint: constraint.into(),
        value: String::new(),
    }
}

/// Check every safety bound and the modality rule. All violations are
/// returned, one per broken constraint.
pub fn validate(spec: &ProtocolSpec) -> Result<(), Vec<ValidationError>> {
    let mut errors = Vec::new();
    match spec.reward_modality {
        RewardModality::Electrical => {
            if spec.electrical_params.is_none() {
                errors.push(modality_error("electrical_params", "required for electrical reward"));
            }
            if spec.dopamine_params.is_some() {
                errors.push(modality_error("dopamine_params", "must be null for electrical reward"));
            }
        }
        RewardModality::DopamineUncaging => {
            if spec.dopamine_params.is_none() {
                errors.push(modality_error("dopamine_params", "required for dopamine_uncaging reward"));
            }
            if spec.electrical_params.is_some() {
                errors.push(modality_error(
                    "electrical_params",
                    "must be null for dopamine_uncaging reward",
                ));
            }
        }
    }
    if let Some(e) = &spec.electrical_params {
        range_check(&mut errors, "electrical_params.amplitude_uA", e.amplitude_ua, AMPLITUDE_UA);
        range_check(
            &mut errors,
            "electrical_params.pulse_duration_us",
            e.pulse_duration_us,
            PULSE_DURATION_US,
        );
        range_check(&mut errors, "electrical_params.frequency_hz", e.frequency_hz, FREQUENCY_HZ);
    }
    if let Some(d) = &spec.dopamine_params {
        range_check(
            &mut errors,
            "dopamine_params.uncaging_duration_ms",
            d.uncaging_duration_ms,
            UNCAGING_DURATION_MS,
        );
    }
    let p = &spec.punishment_params;
    range_check(&mut errors, "punishment_params.amplitude_uA", p.amplitude_ua, AMPLITUDE_UA);
    range_check(
        &mut errors,
        "punishment_params.pulse_duration_us",
        p.pulse_duration_us,
        PULSE_DURATION_US,
    );
    if let Some(c) = &spec.curriculum {
        if let Some(env) = &c.environment {
            if !ENVIRONMENTS.contains(&env.as_str()) {
                errors.push(ValidationError {
                    path: "curriculum.environment".into(),
                    kind: ErrorKind::InvalidChoice,
                    constraint: format!("one of {ENVIRONMENTS:?}"),
                    value: format!("{env:?}"),
                });
            }
        }
        if let Some(n) = c.trials_per_block {
            range_check(&mut errors, "curriculum.trials_per_block", n, (1, 10_000));
        }
        if let Some(z) = c.z {
            range_check(&mut errors, "curriculum.z", z, (1, 10_000));
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

impl ProtocolSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    /// Short stable fingerprint of the canonical serialization.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("plain data");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }

    /// One-line description in the style of the history summary.
    pub fn describe(&self) -> String {
        match (self.reward_modality, &self.electrical_params, &self.dopamine_params) {
            (RewardModality::Electrical, Some(e), _) => {
                format!("Electrical reward ({}Hz, {}uA)", e.frequency_hz, e.amplitude_ua)
            }
            (RewardModality::DopamineUncaging, _, Some(d)) => {
                format!("Dopamine uncaging reward ({}ms duration)", d.uncaging_duration_ms)
            }
            (m, _, _) => format!("{m:?} reward (incomplete)"),
        }
    }

    /// Feedback parameters this protocol implies, starting from `base`.
    ///
    /// Punishment keeps its white-noise waveform; only the amplitude is taken
    /// from the document.
    pub fn feedback_params(&self, base: &FeedbackParams) -> FeedbackParams {
        let mut p = base.clone();
        match self.reward_modality {
            RewardModality::Electrical => {
                if let Some(e) = &self.electrical_params {
                    p.reward_channel = Channel::Electrical;
                    p.reward_style = RewardStyle::PulseTrain {
                        shape: e.shape,
                        pulse_width_us: e.pulse_duration_us as f64,
                    };
                    p.reward_amplitude_ua = e.amplitude_ua;
                    p.reward_frequency_hz = e.frequency_hz;
                }
            }
            RewardModality::DopamineUncaging => {
                if let Some(d) = &self.dopamine_params {
                    p.reward_channel = Channel::DopamineUncaging;
                    p.uncaging_duration_ms = d.uncaging_duration_ms as f64;
                }
            }
        }
        p.punishment_base_ua = self.punishment_params.amplitude_ua;
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;


    fn edit(f: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(EXAMPLE_PROTOCOL).unwrap();
        f(&mut v);
        v.to_string()
    }

    #[test]
    fn example_document_parses_and_validates() {
        let spec = parse_protocol(EXAMPLE_PROTOCOL).unwrap();
        assert_eq!(spec.reward_modality, RewardModality::Electrical);
        let e = spec.electrical_params.as_ref().unwrap();
        assert_eq!(e.shape, PulseShape::TriPhasic);
        assert_eq!(e.amplitude_ua, 8.5);
        assert_eq!(e.pulse_duration_us, 150);
        assert_eq!(e.frequency_hz, 30.0);
        assert!(spec.dopamine_params.is_none());
        assert_eq!(spec.punishment_params.shape, PulseShape::BiPhasic);
        assert_eq!(spec.punishment_params.amplitude_ua, 10.0);
        assert_eq!(spec.punishment_params.pulse_duration_us, 200);
        assert_eq!(validate(&spec), Ok(()));
        assert_eq!(spec.describe(), "Electrical reward (30Hz, 8.5uA)");
    }

    #[test]
    fn type_mismatch_names_path() {
        let text = edit(|v| v["electrical_params"]["amplitude_uA"] = "high".into());
        let err = parse_protocol(&text).unwrap_err();
        assert_eq!(err.kind, ErrorKind::TypeMismatch);
        assert_eq!(err.path, "electrical_params.amplitude_uA");
    }

    #[test]
    fn missing_and_unknown_fields() {
        let text = edit(|v| {
            v.as_object_mut().unwrap().remove("punishment_params");
        });
        let err = parse_protocol(&text).unwrap_err();
        assert_eq!(err.kind, ErrorKind::MissingField);
        assert_eq!(err.path, "punishment_params");

        let text = edit(|v| v["electrical_params"]["voltage"] = 3.into());
        let err = parse_protocol(&text).unwrap_err();
        assert_eq!(err.kind, ErrorKind::UnknownField);
        assert_eq!(err.path, "electrical_params.voltage");

        let text = edit(|v| v["punishment_params"]["shape"] = "square".into());
        let err = parse_protocol(&text).unwrap_err();
        assert_eq!(err.kind, ErrorKind::InvalidChoice);
        assert_eq!(err.path, "punishment_params.shape");

        let err = parse_protocol("{\"reward_modality\": ").unwrap_err();
        assert_eq!(err.kind, ErrorKind::Syntax);
        assert_eq!(parse_protocol(&format!("{EXAMPLE_PROTOCOL} x")).unwrap_err().kind, ErrorKind::Syntax);
    }

    #[test]
    fn all_violations_reported() {
        let text = edit(|v| {
            v["electrical_params"]["amplitude_uA"] = 25.0.into();
            v["punishment_params"]["pulse_duration_us"] = 10.into();
            v["dopamine_params"] = serde_json::json!({"uncaging_duration_ms": 50});
        });
        let errs = validate(&parse_protocol(&text).unwrap()).unwrap_err();
        let paths: Vec<_> = errs.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(
            paths,
            [
                "dopamine_params",
                "electrical_params.amplitude_uA",
                "dopamine_params.uncaging_duration_ms",
                "punishment_params.pulse_duration_us"
            ]
        );
        assert_eq!(
            errs[1].to_string(),
            "electrical_params.amplitude_uA = 25.0: ∉ [0.1, 20.0] (out of range)"
        );
    }

    #[test]
    fn dopamine_modality() {
        let text = edit(|v| {
            v["reward_modality"] = "dopamine_uncaging".into();
            v["electrical_params"] = serde_json::Value::Null;
            v["dopamine_params"] = serde_json::json!({"uncaging_duration_ms": 50});
        });
        let spec = parse_protocol(&text).unwrap();
        let errs = validate(&spec).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].path, "dopamine_params.uncaging_duration_ms");
        let mut ok = spec.clone();
        ok.dopamine_params = Some(DopamineParams {
            uncaging_duration_ms: 500,
        });
        assert_eq!(validate(&ok), Ok(()));
        assert_eq!(ok.describe(), "Dopamine uncaging reward (500ms duration)");
        let fb = ok.feedback_params(&FeedbackParams::default());
        assert_eq!(fb.reward_channel, Channel::DopamineUncaging);
        assert_eq!(fb.uncaging_duration_ms, 500.0);
    }

    #[test]
    fn curriculum_fields() {
        let text = edit(|v| {
            v["curriculum"] = serde_json::json!({
                "environment": "predator_prey1d", "trials_per_block": 10, "z": 15,
                "prey_policy": "predictable"
            })
        });
        let spec = parse_protocol(&text).unwrap();
        assert_eq!(validate(&spec), Ok(()));
        let c = spec.curriculum.unwrap();
        assert_eq!(c.prey_policy, Some(PreyPolicy::Predictable));
        let text = edit(|v| v["curriculum"] = serde_json::json!({"environment": "chess"}));
        let errs = validate(&parse_protocol(&text).unwrap()).unwrap_err();
        assert_eq!(errs[0].path, "curriculum.environment");
    }

    #[test]
    fn feedback_mapping() {
        let spec = parse_protocol(EXAMPLE_PROTOCOL).unwrap();
        let fb = spec.feedback_params(&FeedbackParams::default());
        assert_eq!(fb.reward_amplitude_ua, 8.5);
        assert_eq!(fb.reward_frequency_hz, 30.0);
        assert_eq!(
            fb.reward_style,
            RewardStyle::PulseTrain {
                shape: PulseShape::TriPhasic,
                pulse_width_us: 150.0
            }
        );
        assert_eq!(fb.punishment_base_ua, 10.0);
        assert_eq!(spec.digest().len(), 16);
        assert_ne!(spec.digest(), parse_protocol(&edit(|v| v["electrical_params"]["frequency_hz"] = 31.into())).unwrap().digest());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn shape() -> impl Strategy<Value = PulseShape> {
        prop_oneof![Just(PulseShape::BiPhasic), Just(PulseShape::TriPhasic)]
    }

    fn valid_spec() -> impl Strategy<Value = ProtocolSpec> {
        let electrical = (shape(), 0.1f64..=20.0, 50u32..=500, 0.1f64..=200.0).prop_map(
            |(shape, amplitude_ua, pulse_duration_us, frequency_hz)| ElectricalParams {
                shape,
                amplitude_ua,
                pulse_duration_us,
                frequency_hz,
            },
        );
        let punishment = (shape(), 0.1f64..=20.0, 50u32..=500).prop_map(
            |(shape, amplitude_ua, pulse_duration_us)| PunishmentParams {
                shape,
                amplitude_ua,
                pulse_duration_us,
            },
        );
        let curriculum = proptest::option::of((1u32..100, proptest::option::of(1u32..50)).prop_map(
            |(n, z)| Curriculum {
                environment: Some("predator_prey1d".into()),
                trials_per_block: Some(n),
                z,
                prey_policy: None,
            },
        ));
        (any::<bool>(), electrical, 100u32..=1000, punishment, curriculum).prop_map(
            |(elec, e, d, punishment_params, curriculum)| ProtocolSpec {
                reward_modality: if elec {
                    RewardModality::Electrical
                } else {
                    RewardModality::DopamineUncaging
                },
                electrical_params: elec.then_some(e),
                dopamine_params: (!elec).then_some(DopamineParams {
                    uncaging_duration_ms: d,
                }),
                punishment_params,
                curriculum,
            },
        )
    }

    proptest! {
        #[test]
        fn round_trip(spec in valid_spec()) {
            prop_assert_eq!(validate(&spec), Ok(()));
            let back = parse_protocol(&spec.to_json()).unwrap();
            prop_assert_eq!(&back, &spec);
            prop_assert_eq!(back.digest(), spec.digest());
        }

        #[test]
        fn single_mutation_single_error(spec in valid_spec(), which in 0usize..4, big in any::<bool>()) {
            let mut s = spec.clone();
            let path = match (which, s.electrical_params.as_mut(), s.dopamine_params.as_mut()) {
                (0, Some(e), _) => { e.amplitude_ua = if big { 20.5 } else { 0.05 }; "electrical_params.amplitude_uA" }
                (1, Some(e), _) => { e.frequency_hz = if big { 250.0 } else { 0.0 }; "electrical_params.frequency_hz" }
                (0 | 1, None, Some(d)) => { d.uncaging_duration_ms = if big { 1001 } else { 99 }; "dopamine_params.uncaging_duration_ms" }
                (2, _, _) => { s.punishment_params.amplitude_ua = if big { 25.0 } else { 0.0 }; "punishment_params.amplitude_uA" }
                _ => { s.punishment_params.pulse_duration_us = if big { 501 } else { 49 }; "punishment_params.pulse_duration_us" }
            };
            let errs = validate(&s).unwrap_err();
            prop_assert_eq!(errs.len(), 1);
            prop_assert_eq!(errs[0].path.as_str(), path);
            prop_assert_eq!(errs[0].kind, ErrorKind::OutOfRange);
        }
    }
}
