use std::path::PathBuf;

use serde::Serialize;

use lirlab_core::pdg::io;
use lirlab_core::{solve_inconsistency, InnerSolverConfig, JointTable};

use super::required;
use crate::config::{pick, usage};
use crate::output::{emit_json, write_meta};
use crate::{Globals, Outcome};

#[derive(clap::Args, Debug)]
pub struct Args {
    pdg: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    /// `arc=value`; `inf` and `-inf` are accepted.
    #[arg(long = "beta-override", value_name = "ARC=VAL")]
    beta_override: Vec<String>,
    /// Adam followed by an L-BFGS refine, for verification-grade values.
    #[arg(long)]
    precise: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    pdg: PathBuf,
    gamma: Option<f64>,
    beta_override: Vec<String>,
    precise: bool,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report {
    value: f64,
    mu_star: JointTable,
    converged: bool,
    iterations_used: usize,
    grad_norm: f64,
}

fn parse_override(s: &str) -> anyhow::Result<(String, f64)> {
    let Some((arc, v)) = s.split_once('=') else {
        return usage(format!("beta override '{s}' is not of the form arc=value"));
    };
    match v.trim().parse::<f64>() {
        Ok(x) if !x.is_nan() => Ok((arc.trim().to_string(), x)),
        _ => usage(format!("beta override '{s}' has a non-numeric value")),
    }
}

pub fn run(a: Args, g: &Globals) -> anyhow::Result<Outcome> {
    let c = &g.config.inconsistency;
    let r = Resolved {
        pdg: required(pick(a.pdg, &c.pdg), "pdg")?,
        gamma: pick(a.gamma, &c.gamma),
        beta_override: if a.beta_override.is_empty() { c.beta_override.clone() } else { a.beta_override },
        precise: a.precise || c.precise.unwrap_or(false),
        out: pick(a.out, &c.out),
    };
    let overrides = r.beta_override.iter().map(|s| parse_override(s)).collect::<anyhow::Result<Vec<_>>>()?;
    let (pdg, mut focus) = io::load(&r.pdg)?;
    if let Some(gamma) = r.gamma {
        focus.gamma = gamma;
    }
    for (arc, beta) in overrides {
        focus.beta[pdg.arc_index(&arc)?] = beta;
    }
    focus.validate(&pdg)?;
    let cfg = if r.precise { InnerSolverConfig::precise() } else { InnerSolverConfig::default() };
    let res = solve_inconsistency(&pdg, &focus, &cfg)?;
    let report = Report {
        value: res.value,
        mu_star: res.mu_star,
        converged: res.converged,
        iterations_used: res.iterations_used,
        grad_norm: res.grad_norm,
    };
    emit_json(r.out.as_deref(), &report)?;
    write_meta(g, "inconsistency", 0, &r, r.out.as_deref())?;
    Ok(Outcome::Pass)
}
