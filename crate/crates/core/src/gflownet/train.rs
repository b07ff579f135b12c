use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::env::{enumerate_modes, RewardSpec};
use super::loss::{loss_gradients, loss_value, LossKind, LOSS_CLAMP};
use super::policy::{enumerate_trajectories, exact_terminal_distribution, sample_trajectories, SamplingPolicy, TabularGFN, TrajectoryBatch};
use crate::error::{invalid, Result};
use crate::metrics;
use crate::optim::{lbfgs, Adam, LbfgsConfig};
use crate::seed::SeedTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub iters: usize,
    pub batch: usize,
    pub rate: f64,
    pub log_z_multiplier: f64,
    pub clamp: f64,
    pub sampling: SamplingPolicy,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::ModTb,
            iters: 3000,
            batch: 64,
            rate: 0.01,
            log_z_multiplier: 100.0,
            clamp: LOSS_CLAMP,
            sampling: SamplingPolicy::OnPolicy,
            eval_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || (!self.loss.uses_log_z() && self.batch < 2) {
            return invalid("batch too small for the chosen loss");
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) || !(self.log_z_multiplier > 0.0) || !(self.clamp > 0.0) {
            return invalid("rate, log-Z multiplier and clamp must be positive");
        }
        if self.eval_every == 0 {
            return invalid("eval_every must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub l1: f64,
    pub jsd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub loss: f64,
    pub l1: f64,
    pub jsd: f64,
    pub mode_coverage: f64,
    pub log_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
    /// Clamped batch loss at every iteration.
    pub losses: Vec<f64>,
    pub modes_total: usize,
    pub modes_found: usize,
    pub gfn: TabularGFN,
}

/// `p* ∝ R + ε` over all states.
pub fn target_distribution(gfn: &TabularGFN, spec: &RewardSpec) -> Vec<f64> {
    let g = gfn.grid;
    let r: Vec<f64> = (0..g.n_states()).map(|i| spec.floored(&g, &g.coords(i))).collect();
    let z: f64 = r.iter().sum();
    r.into_iter().map(|x| x / z).collect()
}

pub fn eval_metrics(gfn: &TabularGFN, spec: &RewardSpec) -> Result<EvalMetrics> {
    let p = exact_terminal_distribution(gfn)?;
    let target = target_distribution(gfn, spec);
    Ok(EvalMetrics { l1: metrics::l1(&p, &target)?, jsd: metrics::jsd(&p, &target)? })
}

/// Gradient of the batch loss with respect to the forward logits and log Z.
fn batch_gradient(gfn: &TabularGFN, batch: &TrajectoryBatch, kind: LossKind, clamp: f64) -> Result<(f64, Vec<f64>, f64)> {
    let (value, coef, dz) = loss_gradients(kind, batch, gfn.log_z, clamp)?;
    let k = gfn.grid.n_actions();
    let mut grad = vec![0.0; gfn.logits.len()];
    for (t, c) in batch.trajectories.iter().zip(coef) {
        if c == 0.0 {
            continue;
        }
        for (i, &a) in t.actions.iter().enumerate() {
            let s = t.states[i];
            let p = gfn.forward_probs(s);
            let row = &mut grad[s * k..(s + 1) * k];
            for (j, pj) in p.iter().enumerate() {
                row[j] -= c * pj;
            }
            row[a] += c;
        }
    }
    Ok((value, grad, if kind.uses_log_z() { dz } else { 0.0 }))
}

pub fn train(gfn: &TabularGFN, spec: &RewardSpec, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    spec.validate()?;
    let mut gfn = gfn.clone();
    let mut rng = SeedTree::new(cfg.seed).rng("gfn-train");
    let modes = enumerate_modes(spec, &gfn.grid)?;
    let mode_set: BTreeSet<usize> = modes.states.iter().copied().collect();
    let mut found = BTreeSet::new();
    let mut adam = Adam::new(gfn.logits.len(), cfg.rate);
    let mut adam_z = Adam::new(1, cfg.rate * cfg.log_z_multiplier);
    let mut records = Vec::new();
    let mut losses = Vec::with_capacity(cfg.iters);
    let coverage = |found: &BTreeSet<usize>| if modes.count == 0 { 1.0 } else { found.len() as f64 / modes.count as f64 };
    let mut record = |iter: usize, loss: f64, gfn: &TabularGFN, found: &BTreeSet<usize>| -> Result<()> {
        let m = eval_metrics(gfn, spec)?;
        records.push(TrainRecord { iter, loss, l1: m.l1, jsd: m.jsd, mode_coverage: coverage(found), log_z: gfn.log_z });
        Ok(())
    };
    for it in 0..cfg.iters {
        let batch = sample_trajectories(&gfn, spec, cfg.batch, &mut rng, cfg.sampling)?;
        found.extend(batch.trajectories.iter().map(|t| t.terminal()).filter(|x| mode_set.contains(x)));
        let (loss, grad, dz) = batch_gradient(&gfn, &batch, cfg.loss, cfg.clamp)?;
        losses.push(loss);
        if it % cfg.eval_every == 0 {
            record(it, loss, &gfn, &found)?;
        }
        adam.step(&mut gfn.logits, &grad);
        if cfg.loss.uses_log_z() {
            let mut z = [gfn.log_z];
            adam_z.step(&mut z, &[dz]);
            gfn.log_z = z[0];
        }
    }
    let last = losses.last().copied().unwrap_or(f64::NAN);
    record(cfg.iters, last, &gfn, &found)?;
    Ok(TrainTrace { records, losses, modes_total: modes.count, modes_found: found.len(), gfn })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullCoverageFit {
    pub loss: f64,
    pub l1: f64,
    pub iters: usize,
    pub gfn: TabularGFN,
}

/// Minimizes the unclamped loss over every trajectory of the grid at once.
pub fn train_full_coverage(gfn: &TabularGFN, spec: &RewardSpec, kind: LossKind, max_iters: usize) -> Result<FullCoverageFit> {
    let mut batch = enumerate_trajectories(gfn, spec, 100_000)?;
    let n = gfn.logits.len();
    let mut model = gfn.clone();
    let mut x0 = gfn.logits.clone();
    x0.push(gfn.log_z);
    let objective = |x: &[f64]| -> (f64, Vec<f64>) {
        let mut m = model.clone();
        m.logits.copy_from_slice(&x[..n]);
        m.log_z = x[n];
        let mut b = batch.clone();
        b.rescore(&m);
        match batch_gradient(&m, &b, kind, f64::INFINITY) {
            Ok((v, mut g, dz)) => {
                g.push(dz);
                (v, g)
            }
            Err(_) => (f64::NAN, vec![0.0; n + 1]),
        }
    };
    let r = lbfgs(objective, x0, LbfgsConfig { max_iters, memory: 20, grad_tol: 1e-12 });
    model.logits.copy_from_slice(&r.x[..n]);
    model.log_z = r.x[n];
    batch.rescore(&model);
    let loss = loss_value(kind, &batch, model.log_z)?;
    let l1 = eval_metrics(&model, spec)?.l1;
    Ok(FullCoverageFit { loss, l1, iters: r.iters, gfn: model })
}
