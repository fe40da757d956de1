//! The `serve` subcommand: a live twin fed from stdin or TCP.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver};
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use twinsim::manager::{run_live_loop, spawn_line_reader, LiveTwin, QueryServer, RecordSink, WriterSink};
use twinsim::scheduler::Scheduler;
use twinsim::{EngineConfig, Scenario, Topology};

static STOP: AtomicBool = AtomicBool::new(false);

pub struct ServeOptions {
    pub topology: PathBuf,
    pub scheduler: Box<dyn Scheduler>,
    pub engine: EngineConfig,
    pub listen: String,
    pub ingest: String,
    pub log: Option<PathBuf>,
    pub resume: bool,
    pub cadence: Duration,
    pub sink: Option<PathBuf>,
}

/// A topology document, or the topology of a scenario document.
fn read_topology(path: &Path) -> Result<Topology> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("nodes").is_some() {
        Ok(serde_json::from_value(value).with_context(|| format!("{} is not a topology", path.display()))?)
    } else {
        let s: Scenario = serde_json::from_value(value).with_context(|| format!("{} is not a scenario", path.display()))?;
        Ok(s.topology)
    }
}

fn ingest_lines(spec: &str) -> Result<Receiver<io::Result<String>>> {
    if spec == "stdin" || spec == "-" {
        return Ok(spawn_line_reader(BufReader::new(io::stdin())));
    }
    let listener = TcpListener::bind(spec).with_context(|| format!("binding ingest address {spec}"))?;
    log::info!("ingest listening on {}", listener.local_addr()?);
    let (tx, rx) = mpsc::channel();
    // Connections are served one after another; the feed stays open until stopped.
    thread::Builder::new().name("ingest-accept".into()).spawn(move || {
        for stream in listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("ingest accept failed: {e}");
                    continue;
                }
            };
            for line in BufReader::new(stream).lines() {
                let end = line.is_err();
                if tx.send(line).is_err() {
                    return;
                }
                if end {
                    break;
                }
            }
        }
    })?;
    Ok(rx)
}

pub fn serve(opts: ServeOptions) -> Result<()> {
    let sink: Box<dyn RecordSink> = match &opts.sink {
        None => Box::new(WriterSink(io::stdout())),
        Some(p) if p.as_os_str() == "stdout" => Box::new(WriterSink(io::stdout())),
        Some(p) => Box::new(WriterSink(BufWriter::new(
            File::create(p).with_context(|| format!("creating sink {}", p.display()))?,
        ))),
    };
    let mut twin = match (&opts.log, opts.resume) {
        (Some(log), true) => LiveTwin::resume(log, opts.scheduler, sink)
            .with_context(|| format!("resuming from {}", log.display()))?,
        (None, true) => bail!("--resume needs --log"),
        (log, false) => {
            let twin = LiveTwin::new(read_topology(&opts.topology)?, opts.scheduler, sink)?;
            match log {
                Some(log) => twin.persist_to(log).with_context(|| format!("creating log {}", log.display()))?,
                None => twin,
            }
        }
    }
    .with_engine_config(opts.engine);

    let server = QueryServer::start(&opts.listen, twin.shared()).context("starting query server")?;
    eprintln!("query API on http://{}", server.local_addr());
    if let Err(e) = ctrlc::set_handler(|| STOP.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install interrupt handler: {e}");
    }

    let lines = ingest_lines(&opts.ingest)?;
    let result = run_live_loop(&mut twin, &lines, opts.cadence, &STOP);
    server.stop();
    let stats = result?;
    twin.shutdown()?;
    eprintln!(
        "applied {} rejected {} ticks {} records {}",
        stats.applied, stats.rejected, stats.ticks, stats.records
    );
    Ok(())
}
