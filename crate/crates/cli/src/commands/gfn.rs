use std::io::Write;
use std::path::PathBuf;

use clap::Subcommand;
use serde::Serialize;

use lirlab_core::gflownet::{
    enumerate_modes, eval_metrics, train, HyperGrid, LossKind, RewardSpec, RewardVariant, SamplingPolicy, TabularGFN, TrainConfig,
};

use super::{parse_flag, required};
use crate::config::pick;
use crate::output::{create, emit_json, write_json, write_meta};
use crate::{Globals, Outcome};

#[derive(Subcommand, Debug)]
pub enum GfnCommand {
    /// Train a tabular policy; writes one JSON line per evaluation.
    Train(TrainArgs),
    /// Exact L1 and JSD of a saved policy.
    Eval(EvalArgs),
    /// Exact mode count by enumeration.
    Modes(ModesArgs),
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// original | cosine | xor | coprime
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// tb | modtb | lpv | modlpv
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    log_z_multiplier: Option<f64>,
    /// Mix a uniform policy into sampling with this weight.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV: (iter, loss, l1, jsd, mode_coverage).
    #[arg(long)]
    eval_csv: Option<PathBuf>,
    /// Save the trained policy as JSON.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct ModesArgs {
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Write the mode states as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrainResolved {
    env: String,
    d: usize,
    height: usize,
    backward_policy: &'static str,
    train: TrainConfig,
    out: Option<PathBuf>,
    eval_csv: Option<PathBuf>,
    save: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalReport {
    env: String,
    l1: f64,
    jsd: f64,
}

#[derive(Serialize)]
struct ModesReport {
    env: String,
    d: usize,
    height: usize,
    count: usize,
    states: Vec<Vec<usize>>,
}

pub fn run(cmd: GfnCommand, g: &Globals) -> anyhow::Result<Outcome> {
    match cmd {
        GfnCommand::Train(a) => run_train(a, g),
        GfnCommand::Eval(a) => run_eval(a, g),
        GfnCommand::Modes(a) => run_modes(a, g),
    }
}

fn run_train(a: TrainArgs, g: &Globals) -> anyhow::Result<Outcome> {
    let c = &g.config.gfn_train;
    let defaults = TrainConfig::default();
    let loss: LossKind = parse_flag(&pick(a.loss, &c.loss).unwrap_or_else(|| "modtb".into()))?;
    let sampling = match pick(a.epsilon, &c.epsilon) {
        Some(epsilon) if epsilon > 0.0 => SamplingPolicy::EpsilonUniform { epsilon },
        _ => SamplingPolicy::OnPolicy,
    };
    let r = TrainResolved {
        env: pick(a.env, &c.env).unwrap_or_else(|| "original".into()),
        d: pick(a.d, &c.d).unwrap_or(2),
        height: pick(a.height, &c.height).unwrap_or(8),
        backward_policy: "uniform_parents",
        train: TrainConfig {
            loss,
            iters: pick(a.iters, &c.iters).unwrap_or(defaults.iters),
            batch: pick(a.batch, &c.batch).unwrap_or(defaults.batch),
            rate: pick(a.rate, &c.rate).unwrap_or(defaults.rate),
            log_z_multiplier: pick(a.log_z_multiplier, &c.log_z_multiplier).unwrap_or(defaults.log_z_multiplier),
            clamp: defaults.clamp,
            sampling,
            eval_every: pick(a.eval_every, &c.eval_every).unwrap_or(defaults.eval_every),
            seed: g.config.seed(pick(a.seed, &c.seed)),
        },
        out: pick(a.out, &c.out),
        eval_csv: pick(a.eval_csv, &c.eval_csv),
        save: pick(a.save, &c.save),
    };
    let variant: RewardVariant = parse_flag(&r.env)?;
    let grid = HyperGrid::new(r.d, r.height)?;
    let spec = RewardSpec::new(variant);
    let trace = train(&TabularGFN::new(grid), &spec, &r.train)?;
    let mut lines = Vec::new();
    for rec in &trace.records {
        lines.push(serde_json::to_string(rec)?);
    }
    match &r.out {
        Some(p) => {
            let mut w = create(p)?;
            for l in &lines {
                writeln!(w, "{l}")?;
            }
            w.flush()?;
        }
        None => lines.iter().for_each(|l| println!("{l}")),
    }
    if let Some(p) = &r.eval_csv {
        let mut w = csv::Writer::from_writer(create(p)?);
        w.write_record(["iter", "loss", "l1", "jsd", "mode_coverage"])?;
        for rec in &trace.records {
            w.write_record([rec.iter.to_string(), rec.loss.to_string(), rec.l1.to_string(), rec.jsd.to_string(), rec.mode_coverage.to_string()])?;
        }
        w.flush()?;
    }
    if let Some(p) = &r.save {
        write_json(p, &trace.gfn)?;
    }
    write_meta(g, "gfn train", r.train.seed, &r, r.out.as_deref().or(r.eval_csv.as_deref()))?;
    Ok(Outcome::Pass)
}

fn run_eval(a: EvalArgs, g: &Globals) -> anyhow::Result<Outcome> {
    let c = &g.config.gfn_eval;
    let model = required(pick(a.model, &c.model), "model")?;
    let env = pick(a.env, &c.env).unwrap_or_else(|| "original".into());
    let out = pick(a.out, &c.out);
    let variant: RewardVariant = parse_flag(&env)?;
    let gfn: TabularGFN = serde_json::from_str(&std::fs::read_to_string(&model)?)?;
    HyperGrid::new(gfn.grid.d, gfn.grid.height)?;
    let m = eval_metrics(&gfn, &RewardSpec::new(variant))?;
    emit_json(out.as_deref(), &EvalReport { env: env.clone(), l1: m.l1, jsd: m.jsd })?;
    write_meta(g, "gfn eval", 0, &serde_json::json!({"model": model, "env": env, "out": out}), out.as_deref())?;
    Ok(Outcome::Pass)
}

fn run_modes(a: ModesArgs, g: &Globals) -> anyhow::Result<Outcome> {
    let c = &g.config.gfn_modes;
    let env = pick(a.env, &c.env).unwrap_or_else(|| "original".into());
    let d = pick(a.d, &c.d).unwrap_or(4);
    let height = pick(a.height, &c.height).unwrap_or(24);
    let out = pick(a.out, &c.out);
    let variant: RewardVariant = parse_flag(&env)?;
    let grid = HyperGrid::new(d, height)?;
    let modes = enumerate_modes(&RewardSpec::new(variant), &grid)?;
    println!("{}", modes.count);
    if let Some(p) = &out {
        let states = modes.states.iter().map(|&s| grid.coords(s)).collect();
        write_json(p, &ModesReport { env: env.clone(), d, height, count: modes.count, states })?;
    }
    write_meta(g, "gfn modes", 0, &serde_json::json!({"env": env, "d": d, "height": height, "out": out}), out.as_deref())?;
    Ok(Outcome::Pass)
}
