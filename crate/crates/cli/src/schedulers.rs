//! Resolution of `--scheduler` specs.
//!
//! A spec is one of:
//!
//! - a builtin name (`first-fit`, `best-fit`, `weighted`);
//! - `agent:<command>`, run through `sh -c` and spoken to over stdio;
//! - `tcp:<host:port>`, an agent that is already listening;
//! - a path to a JSON file holding weights or a saved training result.

use std::path::Path;
use std::process::Command;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use twinsim::scheduler::{AgentScheduler, Builtin, Scheduler, WeightVector};
use twinsim::training::TrainingDocument;

pub fn resolve(spec: &str, deadline: Duration) -> Result<Box<dyn Scheduler>> {
    if let Some(b) = Builtin::from_name(spec) {
        return Ok(Box::new(b));
    }
    if let Some(cmd) = spec.strip_prefix("agent:") {
        let agent = AgentScheduler::spawn(cmd, Command::new("sh").arg("-c").arg(cmd), deadline)
            .with_context(|| format!("starting agent `{cmd}`"))?;
        return Ok(Box::new(agent));
    }
    if let Some(addr) = spec.strip_prefix("tcp:") {
        let agent =
            AgentScheduler::connect(addr, addr, deadline).with_context(|| format!("connecting to agent at {addr}"))?;
        return Ok(Box::new(agent));
    }
    let path = Path::new(spec);
    if !path.is_file() {
        bail!(
            "unknown scheduler `{spec}`: expected one of {}, agent:<cmd>, tcp:<addr> or a weights file",
            Builtin::NAMES.join(", ")
        );
    }
    Ok(Box::new(Builtin::Weighted(load_weights(path)?)))
}

/// Weights from a bare weight vector or a training result (its best).
pub fn load_weights(path: &Path) -> Result<WeightVector> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let w = match serde_json::from_str::<WeightVector>(&text) {
        Ok(w) => w,
        Err(e) => match serde_json::from_str::<TrainingDocument>(&text) {
            Ok(doc) => doc.best,
            Err(_) => return Err(e).with_context(|| format!("{} holds neither weights nor a training result", path.display())),
        },
    };
    if !w.is_valid() {
        bail!("{}: weights must lie in [0, 1]", path.display());
    }
    Ok(w)
}
