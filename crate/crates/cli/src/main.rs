//! `twinsim` command-line front end.
//!
//! Exit status: 0 on success, 1 when a scenario fails validation, 2 on
//! any other error.

mod schedulers;
mod serve;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use twinsim::engine::{self, EngineError};
use twinsim::scenario::{self, parse_scenario, validate_scenario, ScenarioError, FIXTURE_NAMES};
use twinsim::training::{train_population, TrainingConfig, TrainingDocument};
use twinsim::twin::write_ndjson;
use twinsim::{EngineConfig, Millis, Scenario, ScenarioEvent, TwinState};

#[derive(Parser)]
#[command(name = "twinsim", version, about = "Digital twin simulator for compute continuums")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario document and summarise it.
    Validate { scenario: PathBuf },
    /// Run a scenario to completion and print its KPIs.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        sched: SchedulerArgs,
        /// Engine config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the full event log as NDJSON.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the KPI report to a file as well.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Tune weighted-scheduler parameters over a scenario batch.
    Train(TrainArgs),
    /// Project KPIs over a horizon from a scenario start or a snapshot.
    Forecast {
        /// Scenario document or twin snapshot.
        input: PathBuf,
        /// Hypothetical events: a JSON array or NDJSON.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Horizon in virtual milliseconds.
        #[arg(long)]
        horizon: Millis,
        #[command(flatten)]
        sched: SchedulerArgs,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a live twin against a streamed feed.
    Serve {
        /// Topology or scenario document.
        #[arg(long)]
        topology: PathBuf,
        #[command(flatten)]
        sched: SchedulerArgs,
        /// Address of the query API.
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// `stdin` or a TCP address to accept feeds on.
        #[arg(long, default_value = "stdin")]
        ingest: String,
        /// Persisted twin log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Replay `--log` and continue from it.
        #[arg(long)]
        resume: bool,
        /// Wall-clock scheduling cadence.
        #[arg(long, default_value_t = 1000)]
        cadence_ms: u64,
        /// Decision record sink: a file path or `stdout`.
        #[arg(long)]
        sink: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Embedded use-case scenarios.
    Fixtures {
        #[command(subcommand)]
        action: FixturesCommand,
    },
}

#[derive(Subcommand)]
enum FixturesCommand {
    List,
    /// Print a fixture document or write it to `--out`.
    Export {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SchedulerArgs {
    /// Builtin name, `agent:<cmd>`, `tcp:<addr>` or a weights file.
    #[arg(long, default_value = "best-fit")]
    scheduler: String,
    /// Reply deadline for agent schedulers.
    #[arg(long, default_value_t = 1000)]
    agent_deadline_ms: u64,
}

impl SchedulerArgs {
    fn resolve(&self) -> Result<Box<dyn twinsim::Scheduler>> {
        schedulers::resolve(&self.scheduler, Duration::from_millis(self.agent_deadline_ms))
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Train on the embedded fixtures.
    #[arg(long, conflicts_with = "scenarios", required_unless_present = "scenarios")]
    fixtures: bool,
    #[arg(long, num_args = 1..)]
    scenarios: Vec<PathBuf>,
    #[arg(long)]
    generations: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    elites: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weights or training result to seed the first generation.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Evaluate candidates on one thread.
    #[arg(long)]
    serial: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &anyhow::Error) -> u8 {
    let invalid = e.chain().any(|c| {
        c.downcast_ref::<ScenarioError>().is_some()
            || matches!(c.downcast_ref::<EngineError>(), Some(EngineError::InvalidScenario(_)))
    });
    if invalid {
        1
    } else {
        2
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&read(path)?).with_context(|| format!("scenario {}", path.display()))
}

fn load_engine_config(path: Option<&Path>) -> Result<EngineConfig> {
    let Some(path) = path else {
        return Ok(EngineConfig::default());
    };
    let cfg: EngineConfig =
        serde_json::from_str(&read(path)?).with_context(|| format!("engine config {}", path.display()))?;
    cfg.check()?;
    Ok(cfg)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Validate { scenario } => validate(&scenario),
        Command::Simulate {
            scenario,
            sched,
            config,
            log,
            report,
        } => {
            let scenario = load_scenario(&scenario)?;
            let config = load_engine_config(config.as_deref())?;
            let mut scheduler = sched.resolve()?;
            let out = engine::run(&scenario, scheduler.as_mut(), &config)?;
            if let Some(path) = log {
                let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_ndjson(std::io::BufWriter::new(file), out.decision_log())?;
            }
            let text = to_json(&out.report)?;
            if let Some(path) = report {
                write(&path, &text)?;
            }
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(args) => train(args),
        Command::Forecast {
            input,
            events,
            horizon,
            sched,
            config,
        } => {
            let config = load_engine_config(config.as_deref())?;
            let hypothetical = match events {
                Some(path) => read_events(&path)?,
                None => Vec::new(),
            };
            let (state, events) = forecast_start(&input, hypothetical, horizon)?;
            let mut scheduler = sched.resolve()?;
            let report = engine::forecast(&state, &events, horizon, scheduler.as_mut(), &config)?;
            print!("{}", to_json(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            topology,
            sched,
            listen,
            ingest,
            log,
            resume,
            cadence_ms,
            sink,
            config,
        } => {
            if cadence_ms == 0 {
                bail!("--cadence-ms must be positive");
            }
            serve::serve(serve::ServeOptions {
                topology,
                scheduler: sched.resolve()?,
                engine: load_engine_config(config.as_deref())?,
                listen,
                ingest,
                log,
                resume,
                cadence: Duration::from_millis(cadence_ms),
                sink,
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fixtures { action } => {
            match action {
                FixturesCommand::List => {
                    for name in FIXTURE_NAMES {
                        let s = scenario::load_fixture(name)?;
                        println!("{name}\t{} nodes\t{} events\t{}", s.topology.nodes.len(), s.events.len(), s.description);
                    }
                }
                FixturesCommand::Export { name, out } => {
                    let text = scenario::fixture_text(&name).with_context(|| {
                        format!("unknown fixture `{name}` (known: {})", FIXTURE_NAMES.join(", "))
                    })?;
                    match out {
                        Some(path) => write(&path, text)?,
                        None => print!("{text}"),
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn validate(path: &Path) -> Result<ExitCode> {
    let text = read(path)?;
    let scenario: Scenario = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(e) => {
            for issue in ScenarioError::from(e).issues() {
                println!("{issue}");
            }
            return Ok(ExitCode::from(1));
        }
    };
    let issues = validate_scenario(&scenario);
    if !issues.is_empty() {
        for issue in &issues {
            println!("{issue}");
        }
        return Ok(ExitCode::from(1));
    }
    let end = scenario.events.last().map_or(0, |e| e.t);
    println!(
        "ok: {} ({} nodes, {} links, {} events, last event at {end} ms)",
        scenario.name,
        scenario.topology.nodes.len(),
        scenario.topology.links.len(),
        scenario.events.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn read_events(path: &Path) -> Result<Vec<ScenarioEvent>> {
    let text = read(path)?;
    let context = || format!("events {}", path.display());
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).with_context(context);
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(context))
        .collect()
}

/// The starting state and the full event list for a forecast.
///
/// A scenario starts from its empty twin at t = 0 and keeps its own events
/// inside the horizon; a snapshot carries only the hypothetical events.
fn forecast_start(
    input: &Path,
    hypothetical: Vec<ScenarioEvent>,
    horizon: Millis,
) -> Result<(TwinState, Vec<ScenarioEvent>)> {
    let text = read(input)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", input.display()))?;
    if value.get("events").is_some() {
        let scenario = parse_scenario(&text).with_context(|| format!("scenario {}", input.display()))?;
        let state = scenario.twin()?;
        let mut events: Vec<ScenarioEvent> = scenario.events.into_iter().filter(|e| e.t <= horizon).collect();
        events.extend(hypothetical);
        events.sort_by_key(|e| e.t);
        Ok((state, events))
    } else {
        let state: TwinState =
            serde_json::from_value(value).with_context(|| format!("snapshot {}", input.display()))?;
        let mut events = hypothetical;
        events.sort_by_key(|e| e.t);
        Ok((state, events))
    }
}

fn train(args: TrainArgs) -> Result<ExitCode> {
    let batch = if args.fixtures {
        FIXTURE_NAMES
            .iter()
            .map(|n| scenario::load_fixture(n))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        args.scenarios.iter().map(|p| load_scenario(p)).collect::<Result<Vec<_>>>()?
    };
    let mut cfg = TrainingConfig::new(batch, args.generations, args.seed);
    cfg.engine = load_engine_config(args.config.as_deref())?;
    cfg.parallel = !args.serial;
    if let Some(p) = args.population {
        cfg.population_size = p;
    }
    if let Some(e) = args.elites {
        cfg.elite_count = e;
    }
    if let Some(s) = args.sigma {
        cfg.mutation_sigma = s;
    }
    if let Some(d) = args.decay {
        cfg.sigma_decay = d;
    }
    if let Some(path) = &args.warm_start {
        cfg.warm_start = Some(schedulers::load_weights(path)?);
    }
    let result = train_population(&cfg)?;
    let doc = TrainingDocument::new(result, cfg);
    write(&args.out, &to_json(&doc)?)?;
    let w = &doc.best;
    println!(
        "best fitness {:.6} after {} evaluations: fit {:.4} latency {:.4} energy {:.4} balance {:.4} migrate {:.4}",
        doc.best_fitness, doc.evaluations, w.w_fit, w.w_latency, w.w_energy, w.w_balance, w.migrate_threshold
    );
    Ok(ExitCode::SUCCESS)
}
