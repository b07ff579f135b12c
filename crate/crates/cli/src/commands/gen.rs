use std::path::PathBuf;

use serde::Serialize;

use lirlab_core::pdg::io;
use lirlab_core::synth::{generate_chain_pdg, GeneratorSpec};
use lirlab_core::Focus;

use crate::config::{pick, usage};
use crate::output::{create, write_meta};
use crate::{Globals, Outcome};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    spec: String,
    seed: u64,
    out: Option<PathBuf>,
}

pub fn run(a: Args, g: &Globals) -> anyhow::Result<Outcome> {
    let c = &g.config.gen;
    let r = Resolved {
        spec: pick(a.spec, &c.spec).unwrap_or_else(|| "chain_4v_3e".into()),
        seed: g.config.seed(pick(a.seed, &c.seed)),
        out: pick(a.out, &c.out),
    };
    let spec = match GeneratorSpec::parse(&r.spec, r.seed) {
        Ok(s) => s,
        Err(e) => return usage(e.to_string()),
    };
    let pdg = generate_chain_pdg(&spec)?;
    let text = io::to_json_string(&pdg, &Focus::uniform(pdg.n_arcs()))?;
    match &r.out {
        Some(p) => {
            use std::io::Write;
            let mut w = create(p)?;
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => println!("{text}"),
    }
    write_meta(g, "gen", r.seed, &r, r.out.as_deref())?;
    Ok(Outcome::Pass)
}
