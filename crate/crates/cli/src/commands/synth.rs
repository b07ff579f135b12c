use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

use lirlab_core::lir::{LirConfig, RefocusKind};
use lirlab_core::synth::{run_strategy_suite, GeneratorSpec, StrategySummary, REFERENCE_SPECS};

use crate::config::{pick, usage};
use crate::output::{create, emit_json, write_meta};
use crate::{Globals, Outcome};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Comma-separated `chain_<n>v_<m>e` names, or `all` for the four standard sizes.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    strategies: Option<String>,
    /// Number of seeds; seeds run 0..N.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// CSV: (pdg, strategy, seed, init, final, resolution_pct, tv, seconds).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    specs: Vec<String>,
    strategies: Vec<String>,
    seeds: u64,
    steps: usize,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report {
    cells: usize,
    failed: usize,
    strategies: Vec<StrategySummary>,
}

fn split(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

pub fn run(a: Args, g: &Globals) -> anyhow::Result<Outcome> {
    let c = &g.config.synth;
    let spec = pick(a.spec, &c.spec).unwrap_or_else(|| "all".into());
    let specs = if spec == "all" { REFERENCE_SPECS.iter().map(|s| s.to_string()).collect() } else { split(&spec) };
    let r = Resolved {
        specs,
        strategies: split(&pick(a.strategies, &c.strategies).unwrap_or_else(|| "uniform,partial,hub,smooth".into())),
        seeds: pick(a.seeds, &c.seeds).unwrap_or(5),
        steps: pick(a.steps, &c.steps).unwrap_or(20),
        out: pick(a.out, &c.out),
    };
    for s in &r.specs {
        if let Err(e) = GeneratorSpec::parse(s, 0) {
            return usage(e.to_string());
        }
    }
    let kinds = match r.strategies.iter().map(|s| RefocusKind::parse(s)).collect::<Result<Vec<_>, _>>() {
        Ok(k) => k,
        Err(e) => return usage(e.to_string()),
    };
    if r.seeds == 0 {
        return usage("--seeds must be at least 1");
    }
    let seeds: Vec<u64> = (0..r.seeds).collect();
    let cfg = LirConfig { steps: r.steps, ..LirConfig::default() };
    let report = run_strategy_suite(&r.specs, &kinds, &seeds, &cfg)?;
    if let Some(p) = &r.out {
        let mut w = create(p)?;
        report.write_csv(&mut w, g.timings)?;
        w.flush()?;
    }
    let summary = report.summary();
    let failed = summary.iter().map(|s| s.failed).sum();
    emit_json(None, &Report { cells: report.rows.len(), failed, strategies: summary })?;
    write_meta(g, "synth", 0, &r, r.out.as_deref())?;
    Ok(if failed > 0 { Outcome::ToleranceViolation } else { Outcome::Pass })
}
