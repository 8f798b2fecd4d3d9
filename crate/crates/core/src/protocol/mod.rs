//! Protocol automation: prompt construction, candidate generation, strict
//! parsing and safety validation of protocol documents, execution, and
//! template refinement from past outcomes.

mod engine;
mod generator;
mod prompt;
mod spec;

pub use engine::{
    execute_protocol, execute_protocol_with, meta_loop, DatasetRecord, MetaLoopConfig,
    MetaLoopOutput,
};
pub use generator::{
    with_retries, GenerateError, Generator, RemoteConfig, RemoteGenerator, StubGenerator,
    StubResponse, API_KEY_ENV,
};
pub use prompt::{
    base_template, build_prompt, refine_template, HistoryEntry, NetworkState, PromptContext,
    PromptError, CONSTRAINT_BLOCK, DEFAULT_API, DEFAULT_TEMPLATE, MAX_TEMPLATE_CHARS,
};
pub use spec::{
    parse_protocol, validate, Curriculum, DopamineParams, ElectricalParams, ErrorKind,
    ProtocolSpec, PunishmentParams, RewardModality, ValidationError, AMPLITUDE_UA, ENVIRONMENTS,
    EXAMPLE_PROTOCOL, FREQUENCY_HZ, PULSE_DURATION_US, UNCAGING_DURATION_MS,
};
