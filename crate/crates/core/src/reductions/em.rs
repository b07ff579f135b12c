//! EM as LIR on the PDG `x ->> X`, `q: X → Z` (β = ∞), `p(Z)`, `p(X|Z)`,
//! alternating full control of `q` and of `p`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::inconsistency::{envelope_grad, solve_inconsistency, InnerSolverConfig};
use crate::pdg::{Cpd, Focus, Hyperarc, ParametricPDG};

/// `p(z)` and row-stochastic `p(x|z)` stored `[z·v + x]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentVarModel {
    pub prior: Vec<f64>,
    pub emission: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    /// `θ^(t)` for `t = 0..=iters`, read after every second LIR step.
    pub models: Vec<LatentVarModel>,
    /// Inconsistency after every half-step, starting from the initial model.
    pub values: Vec<f64>,
    /// Largest envelope-gradient entry under each half-step's focus.
    pub stationarity: Vec<f64>,
    /// `q(z|x)` after the final E step, stored `[x·k + z]`.
    pub posterior: Vec<f64>,
}

const ARC_Q: usize = 1;
const ARC_PRIOR: usize = 2;
const ARC_EMISSION: usize = 3;

fn stochastic_rows(t: &[f64], width: usize) -> bool {
    t.chunks(width).all(|r| r.iter().all(|p| p.is_finite() && *p > 0.0) && (r.iter().sum::<f64>() - 1.0).abs() < 1e-9)
}

impl LatentVarModel {
    pub fn k(&self) -> usize {
        self.prior.len()
    }

    pub fn v(&self) -> usize {
        self.emission.len() / self.prior.len().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.emission.is_empty() || self.emission.len() % k != 0 {
            return invalid("emission table must have k rows");
        }
        if !stochastic_rows(&self.prior, k) || !stochastic_rows(&self.emission, self.v()) {
            return invalid("prior and emission rows must be strictly positive distributions");
        }
        Ok(())
    }

    pub fn random<R: Rng>(rng: &mut R, k: usize, v: usize) -> Self {
        let mut row = |n: usize| {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect::<Vec<f64>>()
        };
        let prior = row(k);
        let emission = (0..k).flat_map(|_| row(v)).collect();
        LatentVarModel { prior, emission }
    }

    /// `p(z|x)`, stored `[x·k + z]`.
    pub fn posterior(&self) -> Result<Vec<f64>> {
        let (k, v) = (self.k(), self.v());
        let mut out = vec![0.0; v * k];
        for x in 0..v {
            let joint: Vec<f64> = (0..k).map(|z| self.prior[z] * self.emission[z * v + x]).collect();
            let px: f64 = joint.iter().sum();
            if !(px > 0.0) {
                return Err(Error::Numerical(format!("observation {x} has zero marginal probability")));
            }
            for z in 0..k {
                out[x * k + z] = joint[z] / px;
            }
        }
        Ok(out)
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        let (k, v) = (self.k(), self.v());
        (0..v).map(|x| (0..k).map(|z| self.prior[z] * self.emission[z * v + x]).sum()).collect()
    }

    /// `Σ_x d(x) log p(x)`.
    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        self.marginal_x().iter().zip(data).filter(|(_, d)| **d > 0.0).map(|(p, d)| d * p.ln()).sum()
    }

    pub fn max_abs_diff(&self, other: &LatentVarModel) -> f64 {
        self.prior.iter().chain(&self.emission).zip(other.prior.iter().chain(&other.emission)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// The maximizer of `E_{d(x) q(z|x)} log p(x, z)`.
pub fn m_step(data: &[f64], q: &[f64], k: usize) -> Result<LatentVarModel> {
    let v = data.len();
    let mut prior = vec![0.0; k];
    let mut emission = vec![0.0; k * v];
    for x in 0..v {
        for z in 0..k {
            let w = data[x] * q[x * k + z];
            prior[z] += w;
            emission[z * v + x] += w;
        }
    }
    for z in 0..k {
        if !(prior[z] > 0.0) {
            return Err(Error::Numerical(format!("latent state {z} received no responsibility")));
        }
        emission[z * v..(z + 1) * v].iter_mut().for_each(|e| *e /= prior[z]);
    }
    let total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|p| *p /= total);
    Ok(LatentVarModel { prior, emission })
}

/// Arcs `x` (∅ → X, hard), `q` (X → Z, hard), `p(Z)` and `p(X|Z)`.
pub fn em_pdg(model: &LatentVarModel, q: &[f64], data: &[f64]) -> Result<ParametricPDG> {
    model.validate()?;
    let (k, v) = (model.k(), model.v());
    if data.len() != v || !data.iter().all(|d| d.is_finite() && *d >= 0.0) || (data.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return invalid("data must be a distribution over the observed values");
    }
    if q.len() != v * k || !stochastic_rows(q, k) {
        return invalid("q must be a strictly positive conditional table");
    }
    let mut pdg = ParametricPDG::new();
    let xv = pdg.add_variable("X", v)?;
    let zv = pdg.add_variable("Z", k)?;
    pdg.add_arc(Hyperarc::new("x", vec![], vec![xv], Cpd::constant(data.to_vec())))?;
    pdg.add_arc(Hyperarc::new("q", vec![xv], vec![zv], Cpd::learnable_probs(q)))?;
    pdg.add_arc(Hyperarc::new("p(Z)", vec![], vec![zv], Cpd::learnable_probs(&model.prior)))?;
    pdg.add_arc(Hyperarc::new("p(X|Z)", vec![zv], vec![xv], Cpd::learnable_probs(&model.emission)))?;
    Ok(pdg)
}

fn attention() -> Focus {
    Focus::from_beta(vec![f64::INFINITY, f64::INFINITY, 1.0, 1.0])
}

pub fn e_focus() -> Focus {
    attention().with_chi(vec![0.0, f64::INFINITY, 0.0, 0.0])
}

pub fn m_focus() -> Focus {
    attention().with_chi(vec![0.0, 0.0, f64::INFINITY, f64::INFINITY])
}

fn evaluate(pdg: &ParametricPDG, focus: &Focus) -> Result<(f64, f64)> {
    let r = solve_inconsistency(pdg, focus, &InnerSolverConfig::precise())?;
    let g = envelope_grad(pdg, focus, &r.mu_star)?;
    let worst = g.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
    Ok((r.value, worst))
}

/// Runs `iters` rounds of (E, M) focus pairs from `q ≡ uniform`. Each
/// half-step applies its closed-form full-control update, then checks that the
/// envelope gradient vanishes and the inconsistency did not increase.
pub fn em_via_lir(model: &LatentVarModel, data: &[f64], iters: usize) -> Result<EmTrace> {
    let (k, v) = (model.k(), model.v());
    let q0 = vec![1.0 / k as f64; v * k];
    let mut pdg = em_pdg(model, &q0, data)?;
    let mut current = model.clone();
    let mut models = vec![current.clone()];
    let (v0, _) = evaluate(&pdg, &e_focus())?;
    let mut values = vec![v0];
    let mut stationarity = Vec::new();
    let mut posterior = q0;
    let tol = |x: f64| 1e-9 * x.abs().max(1.0);
    for _ in 0..iters {
        posterior = current.posterior()?;
        pdg.set_params(ARC_Q, Cpd::learnable_probs(&posterior).params)?;
        let (ve, ge) = evaluate(&pdg, &e_focus())?;
        if ve > values.last().unwrap() + tol(ve) {
            return Err(Error::Numerical(format!("E step increased inconsistency to {ve}")));
        }
        values.push(ve);
        stationarity.push(ge);

        current = m_step(data, &posterior, k)?;
        pdg.set_params(ARC_PRIOR, Cpd::learnable_probs(&current.prior).params)?;
        pdg.set_params(ARC_EMISSION, Cpd::learnable_probs(&current.emission).params)?;
        let (vm, gm) = evaluate(&pdg, &m_focus())?;
        if vm > values.last().unwrap() + tol(vm) {
            return Err(Error::Numerical(format!("M step increased inconsistency to {vm}")));
        }
        values.push(vm);
        stationarity.push(gm);
        models.push(current.clone());
    }
    Ok(EmTrace { models, values, stationarity, posterior })
}

/// A point mass on observation `x`.
pub fn point_data(v: usize, x: usize) -> Vec<f64> {
    let mut d = vec![0.0; v];
    d[x] = 1.0;
    d
}
