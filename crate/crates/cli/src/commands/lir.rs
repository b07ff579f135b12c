use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

use lirlab_core::lir::{lir_run, make_refocus, resolution_percentage, tv_distortion, LirConfig, RefocusKind};
use lirlab_core::pdg::io;
use lirlab_core::seed::SeedTree;

use super::required;
use crate::config::{pick, usage};
use crate::output::{create, emit_json, write_meta};
use crate::{Globals, Outcome};

#[derive(clap::Args, Debug)]
pub struct Args {
    pdg: Option<PathBuf>,
    /// uniform | partial | hub | smooth
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON-lines trace, one step per line.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// CSV with columns (step, value, tv_from_init).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    pdg: PathBuf,
    strategy: String,
    steps: usize,
    seed: u64,
    trace: Option<PathBuf>,
    summary: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report {
    initial: f64,
    final_value: f64,
    resolution_pct: Option<f64>,
    tv: f64,
    steps_completed: usize,
    failures: usize,
    aborted: Option<String>,
}

pub fn run(a: Args, g: &Globals) -> anyhow::Result<Outcome> {
    let c = &g.config.lir;
    let r = Resolved {
        pdg: required(pick(a.pdg, &c.pdg), "pdg")?,
        strategy: pick(a.strategy, &c.strategy).unwrap_or_else(|| "uniform".into()),
        steps: pick(a.steps, &c.steps).unwrap_or(20),
        seed: g.config.seed(pick(a.seed, &c.seed)),
        trace: pick(a.trace, &c.trace),
        summary: pick(a.summary, &c.summary),
    };
    let kind = match RefocusKind::parse(&r.strategy) {
        Ok(k) => k,
        Err(e) => return usage(e.to_string()),
    };
    let (pdg, _) = io::load(&r.pdg)?;
    let cfg = LirConfig { steps: r.steps, ..LirConfig::default() };
    let mut stream = make_refocus(kind, &pdg, SeedTree::new(r.seed).child(&r.strategy).seed())?;
    let trace = lir_run(&pdg, &mut stream, &cfg)?;
    if let Some(p) = &r.trace {
        let mut w = create(p)?;
        trace.write_jsonl(&mut w, g.timings)?;
        w.flush()?;
    }
    if let Some(p) = &r.summary {
        let mut w = create(p)?;
        trace.write_summary_csv(&mut w)?;
        w.flush()?;
    }
    let report = Report {
        initial: trace.initial.value,
        final_value: trace.final_.value,
        resolution_pct: resolution_percentage(&trace).ok(),
        tv: tv_distortion(&trace.initial.mu_star, &trace.final_.mu_star)?,
        steps_completed: trace.steps.len(),
        failures: trace.failures.len(),
        aborted: trace.aborted.clone(),
    };
    emit_json(None, &report)?;
    write_meta(g, "lir", r.seed, &r, r.trace.as_deref().or(r.summary.as_deref()))?;
    Ok(if trace.aborted.is_some() { Outcome::ToleranceViolation } else { Outcome::Pass })
}
