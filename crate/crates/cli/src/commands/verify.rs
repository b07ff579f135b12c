use serde::Serialize;

use lirlab_core::reductions::verify::{run_verify, VerifyKind};

use super::{parse_flag, required};
use crate::config::pick;
use crate::output::write_meta;
use crate::{Globals, Outcome};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// em | bp | gan | transformer | decision | gfn-identity | triad
    kind: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Serialize)]
struct Resolved {
    kind: String,
    seed: u64,
    trials: usize,
}

/// One JSON report per trial on stdout; any required check failing is a tolerance violation.
pub fn run(a: Args, g: &Globals) -> anyhow::Result<Outcome> {
    let c = &g.config.verify;
    let r = Resolved {
        kind: required(pick(a.kind, &c.kind), "kind")?,
        seed: g.config.seed(pick(a.seed, &c.seed)),
        trials: pick(a.trials, &c.trials).unwrap_or(10),
    };
    let kind: VerifyKind = parse_flag(&r.kind)?;
    let reports = run_verify(kind, r.seed, r.trials);
    for rep in &reports {
        println!("{}", serde_json::to_string(rep)?);
    }
    write_meta(g, "verify", r.seed, &r, None)?;
    let failed = reports.iter().filter(|t| !t.pass).count();
    if failed > 0 {
        eprintln!("{failed} of {} {} trials violated a tolerance", reports.len(), kind.name());
        return Ok(Outcome::ToleranceViolation);
    }
    Ok(Outcome::Pass)
}
