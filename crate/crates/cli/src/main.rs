use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use neuroloop::env::EnvConfig;
use neuroloop::feedback::FeedbackKind;
use neuroloop::harness::{
    compute_metrics, report, run_experiment, run_pairing_experiment, ExperimentConfig,
    ExperimentRecord, PairingExperiment,
};
use neuroloop::probe::PairingOrder;
use neuroloop::protocol::{
    meta_loop, parse_protocol, validate, Generator, MetaLoopConfig, RemoteConfig, RemoteGenerator,
    StubGenerator,
};

#[derive(Parser)]
#[command(name = "neuroloop", version, about = "Closed-loop experiments on a spiking surrogate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop experiment.
    Run(RunArgs),
    /// Check a protocol document against the safety constraints.
    Validate {
        /// Protocol JSON file (`-` for stdin).
        file: PathBuf,
    },
    /// Measure the probe path, optionally around a paired-stimulation session.
    Probe(ProbeArgs),
    /// Automated protocol loop: prompt, generate, validate, run, refine.
    Autoloop(AutoloopArgs),
    /// Summarise a run directory or recompute metrics from an event log.
    Report {
        /// Run directory (with record.json) or an events.jsonl file.
        path: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (JSON). Defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment id, overriding the config.
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    /// Protocol document applied on top of the config.
    #[arg(long)]
    protocol: Option<PathBuf>,
    /// Pick actions uniformly at random instead of decoding the agent.
    #[arg(long)]
    baseline_random: bool,
    /// Output directory for events.jsonl, record.json and CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this many consecutive seeds, starting at the config's seed.
    #[arg(long, default_value_t = 1)]
    repeat: u64,
    /// Worker threads for repeated runs.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    PrePost,
    PostPre,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Reward,
    Punishment,
}

#[derive(clap::Args)]
struct ProbeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pre/post pairings between two measurements; 0 takes one measurement.
    #[arg(long, default_value_t = 0)]
    pairings: usize,
    #[arg(long, value_enum, default_value = "pre-post")]
    order: Order,
    #[arg(long, value_enum, default_value = "reward")]
    feedback: Kind,
}

#[derive(clap::Args)]
struct AutoloopArgs {
    /// Meta-loop config (JSON); `experiment` holds the experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    iterations: u32,
    /// JSON array of canned responses: strings, or {"fail": "..."}.
    #[arg(long, conflicts_with = "remote")]
    stub_responses: Option<PathBuf>,
    /// Remote generator settings (JSON).
    #[arg(long)]
    remote: Option<PathBuf>,
    /// Dataset file (JSON Lines, appended to).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the final prompt template here.
    #[arg(long)]
    template_out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    if path.as_os_str() == "-" {
        return std::io::read_to_string(std::io::stdin()).context("reading stdin");
    }
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_experiment(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::from_json(&read(p)?)
            .with_context(|| format!("config {}", p.display()))?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = load_experiment(args.config.as_deref())?;
    if let Some(name) = &args.env {
        cfg.env = EnvConfig::from_name(name).with_context(|| format!("unknown environment {name:?}"))?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if args.protocol.is_some() {
        cfg.protocol = args.protocol.clone();
    }
    cfg.baseline_random |= args.baseline_random;
    cfg.out_dir = args.out.clone();
    if args.repeat <= 1 {
        let record = run_experiment(&cfg)?;
        print!("{}", report(&record));
        return Ok(());
    }
    if args.parallel == 0 {
        bail!("--parallel must be at least 1");
    }
    let first = cfg.seed;
    let next = AtomicU64::new(0);
    let results: Mutex<Vec<(u64, Result<ExperimentRecord, String>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..args.parallel.min(args.repeat as usize) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= args.repeat {
                    break;
                }
                let mut c = cfg.clone();
                c.seed = first + i;
                c.out_dir = args.out.as_ref().map(|d| d.join(format!("seed-{}", c.seed)));
                let r = run_experiment(&c).map_err(|e| e.to_string());
                results.lock().expect("worker panicked").push((c.seed, r));
            });
        }
    });
    let mut results = results.into_inner().expect("worker panicked");
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (seed, r) in results {
        match r {
            Ok(rec) => {
                let rate = rec.final_metric().map_or("n/a".into(), |v| format!("{v:.3}"));
                let overall = rec.metrics.overall.success_rate.map_or("n/a".into(), |v| format!("{v:.3}"));
                println!("seed {seed}: overall {overall}, last block {rate}");
            }
            Err(e) => {
                failed += 1;
                println!("seed {seed}: failed: {e}");
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} runs failed", args.repeat);
    }
    Ok(())
}

fn validate_file(path: &Path) -> Result<bool> {
    let text = read(path)?;
    let errors = match parse_protocol(&text) {
        Err(e) => vec![e],
        Ok(spec) => match validate(&spec) {
            Ok(()) => {
                println!("ok: {} [{}]", spec.describe(), spec.digest());
                return Ok(true);
            }
            Err(errs) => errs,
        },
    };
    for e in &errors {
        println!("error: {e}");
    }
    Ok(false)
}

fn probe(args: ProbeArgs) -> Result<()> {
    let mut cfg = load_experiment(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let mut exp = PairingExperiment {
        pairings: args.pairings,
        ..PairingExperiment::default()
    };
    exp.pairing.order = match args.order {
        Order::PrePost => PairingOrder::PreBeforePost,
        Order::PostPre => PairingOrder::PostBeforePre,
    };
    exp.feedback = match args.feedback {
        Kind::Reward => FeedbackKind::Reward,
        Kind::Punishment => FeedbackKind::Punishment,
    };
    let r = run_pairing_experiment(&cfg, &exp)?;
    if args.pairings == 0 {
        let m = &r.before;
        println!("path {} -> {}: slope {:.6}", m.probe_electrode, m.record_group, m.slope);
        return Ok(());
    }
    println!(
        "path {} -> {}: slope {:.6} -> {:.6}",
        r.before.probe_electrode, r.before.record_group, r.before.slope, r.after.slope
    );
    let change = r.percent_change.map_or("from zero".into(), |v| format!("{v:+.2}%"));
    println!("{} ({change})", r.classification);
    Ok(())
}

fn autoloop(args: AutoloopArgs) -> Result<()> {
    let mut cfg: MetaLoopConfig = match &args.config {
        Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("config {}", p.display()))?,
        None => MetaLoopConfig::default(),
    };
    if let Some(d) = args.dataset {
        cfg.dataset_path = Some(d);
    }
    if let Some(s) = args.seed {
        cfg.experiment.seed = s;
    }
    let mut generator: Box<dyn Generator> = match (&args.stub_responses, &args.remote) {
        (Some(p), _) => Box::new(StubGenerator::from_json(&read(p)?).context("stub responses")?),
        (None, Some(p)) => {
            let rc: RemoteConfig = serde_json::from_str(&read(p)?).context("remote config")?;
            Box::new(RemoteGenerator::new(rc))
        }
        (None, None) => Box::new(RemoteGenerator::new(RemoteConfig::default())),
    };
    let out = meta_loop(&cfg, generator.as_mut(), args.iterations)?;
    for r in &out.dataset {
        let what = match (&r.error, r.metric) {
            (Some(e), _) => format!("failed: {e}"),
            (None, Some(m)) => format!("{} -> {m:.3}", r.summary.as_deref().unwrap_or("")),
            (None, None) => format!("{} -> no trials", r.summary.as_deref().unwrap_or("")),
        };
        println!("iteration {}: {what}", r.iteration);
    }
    let failures = out.dataset.iter().filter(|r| r.is_failure()).count();
    println!(
        "{} iterations, {} failed, {} template refinements",
        out.dataset.len(),
        failures,
        out.refinements
    );
    if let Some(p) = args.template_out {
        fs::write(&p, &out.template).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn report_path(path: &Path) -> Result<()> {
    if path.is_dir() {
        let rec: ExperimentRecord = serde_json::from_str(&read(&path.join("record.json"))?)
            .context("record.json")?;
        print!("{}", report(&rec));
        return Ok(());
    }
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let table = compute_metrics(std::io::BufReader::new(file))?;
    println!("{}", serde_json::to_string_pretty(&table)?);
    Ok(())
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => run(a)?,
        Command::Validate { file } => {
            if !validate_file(&file)? {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Probe(a) => probe(a)?,
        Command::Autoloop(a) => autoloop(a)?,
        Command::Report { path } => report_path(&path)?,
    }
    Ok(ExitCode::SUCCESS)
}
