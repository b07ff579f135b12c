//! Observational and structural incompatibility, γ-inconsistency, and its
//! gradient with respect to cpd parameters.

mod config;
pub(crate) mod problem;

pub use config::InnerSolverConfig;
pub use problem::MAX_CELLS;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{lbfgs, norm, Adam, LbfgsConfig};
use crate::pdg::{project_indices, Focus, JointTable, ParametricPDG};
use problem::{safe_ln, Problem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyResult {
    pub value: f64,
    pub mu_star: JointTable,
    pub converged: bool,
    pub iterations_used: usize,
    pub grad_norm: f64,
}

/// Joint marginal of μ over an arc's (sources, targets), `n_src × n_tgt`.
fn arc_marginal(pdg: &ParametricPDG, mu: &JointTable, a: usize) -> Result<Vec<f64>> {
    let arc = pdg.arc(a);
    let mut pos = Vec::new();
    for &v in arc.sources.iter().chain(&arc.targets) {
        pos.push(mu.position(v).ok_or_else(|| {
            Error::ScopeMismatch(format!(
                "arc {} mentions variable {} outside the joint's scope",
                arc.id,
                pdg.variables()[v].id
            ))
        })?);
    }
    let (ns, nt) = pdg.arc_dims(a);
    let mut marg = vec![0.0; ns * nt];
    for (cell, j) in project_indices(&mu.sizes, &pos).into_iter().enumerate() {
        marg[j] += mu.probs[cell];
    }
    Ok(marg)
}

/// `D(μ(T,S) ‖ p(T|S) μ(S))` split per source row.
fn row_divergences(marg: &[f64], p: &[f64], nt: usize) -> Vec<f64> {
    marg.chunks(nt)
        .zip(p.chunks(nt))
        .map(|(m, p)| {
            let ms: f64 = m.iter().sum();
            m.iter()
                .zip(p)
                .map(|(&m, &p)| {
                    if m < 1e-12 {
                        0.0
                    } else if p == 0.0 {
                        f64::INFINITY
                    } else {
                        m * (m.ln() - ms.ln() - p.ln())
                    }
                })
                .sum()
        })
        .collect()
}

fn weighted_oinc(pdg: &ParametricPDG, mu: &JointTable, betas: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for a in 0..pdg.n_arcs() {
        if betas[a].iter().all(|b| *b == 0.0) {
            continue;
        }
        let marg = arc_marginal(pdg, mu, a)?;
        let p = pdg.cpd_probs(a)?;
        let (_, nt) = pdg.arc_dims(a);
        for (d, &b) in row_divergences(&marg, &p, nt).into_iter().zip(&betas[a]) {
            if b == 0.0 {
                continue;
            }
            if b == f64::INFINITY {
                if d > 1e-9 {
                    return Ok(f64::INFINITY);
                }
            } else {
                total += b * d;
            }
        }
    }
    Ok(total)
}

/// `Σ_a β_a D(μ(T,S) ‖ p_a(T|S) μ(S))`; β = +∞ contributes 0 or +∞.
pub fn oinc(pdg: &ParametricPDG, mu: &JointTable, beta: &[f64]) -> Result<f64> {
    if beta.len() != pdg.n_arcs() {
        return Err(Error::InvalidArgument("beta needs one entry per arc".into()));
    }
    let betas: Vec<Vec<f64>> = (0..pdg.n_arcs()).map(|a| vec![beta[a]; pdg.arc_dims(a).0]).collect();
    weighted_oinc(pdg, mu, &betas)
}

/// OInc under a focus, honouring per-row attention.
pub fn oinc_focus(pdg: &ParametricPDG, mu: &JointTable, focus: &Focus) -> Result<f64> {
    let betas: Vec<Vec<f64>> = (0..pdg.n_arcs()).map(|a| focus.row_betas(a, pdg.arc_dims(a).0)).collect();
    weighted_oinc(pdg, mu, &betas)
}

/// `−H(μ) + Σ_a α_a H_μ(T_a | S_a)`.
pub fn sdef(pdg: &ParametricPDG, mu: &JointTable, alpha: &[f64]) -> Result<f64> {
    if alpha.len() != pdg.n_arcs() {
        return Err(Error::InvalidArgument("alpha needs one entry per arc".into()));
    }
    let mut total = -mu.entropy();
    for a in 0..pdg.n_arcs() {
        if alpha[a] == 0.0 {
            continue;
        }
        let marg = arc_marginal(pdg, mu, a)?;
        let (_, nt) = pdg.arc_dims(a);
        let mut h = 0.0;
        for row in marg.chunks(nt) {
            let ms: f64 = row.iter().sum();
            for &m in row {
                if m > 0.0 {
                    h -= m * (m.ln() - ms.ln());
                }
            }
        }
        total += alpha[a] * h;
    }
    Ok(total)
}

/// `oinc + γ·sdef` under a focus.
pub fn scoring_function(pdg: &ParametricPDG, mu: &JointTable, focus: &Focus) -> Result<f64> {
    let o = oinc_focus(pdg, mu, focus)?;
    if focus.gamma == 0.0 {
        return Ok(o);
    }
    let alpha: Vec<f64> = (0..pdg.n_arcs()).map(|a| if focus.is_active(a) { focus.alpha[a] } else { 0.0 }).collect();
    Ok(o + focus.gamma * sdef(pdg, mu, &alpha)?)
}

fn run_solver(p: &Problem, cfg: &InnerSolverConfig) -> Result<InconsistencyResult> {
    cfg.validate()?;
    let mut z = match &cfg.warm_start {
        Some(w) => p.logits_from(w)?,
        None => vec![0.0; p.n_free],
    };
    let mut iters = 0;
    let (mut value, mut grad) = p.eval(&z);
    let mut gn = norm(&grad);
    if p.n_free > 1 {
        let mut adam = Adam::new(p.n_free, cfg.step_size);
        while gn >= cfg.tolerance && iters < cfg.max_iters {
            adam.step(&mut z, &grad);
            iters += 1;
            (value, grad) = p.eval(&z);
            gn = norm(&grad);
        }
        if gn >= cfg.tolerance && cfg.refine_iters > 0 {
            let r = lbfgs(
                |x| p.eval(x),
                z,
                LbfgsConfig { max_iters: cfg.refine_iters, memory: 12, grad_tol: cfg.tolerance },
            );
            iters += r.iters;
            z = r.x;
            (value, grad) = p.eval(&z);
            gn = norm(&grad);
        }
    } else {
        gn = 0.0;
    }
    if !value.is_finite() {
        return Err(Error::Numerical(format!("inner objective evaluated to {value}")));
    }
    let mu = p.mu_from_logits(&z);
    Ok(InconsistencyResult {
        value,
        mu_star: p.to_joint(&mu),
        converged: gn < cfg.tolerance,
        iterations_used: iters,
        grad_norm: gn,
    })
}

/// `inf_μ OInc(μ) + γ·SDef(μ)` under the focus, with its minimizer over the
/// retained (unpruned) variables.
pub fn solve_inconsistency(pdg: &ParametricPDG, focus: &Focus, cfg: &InnerSolverConfig) -> Result<InconsistencyResult> {
    let p = Problem::compile(pdg, focus, &[])?;
    run_solver(&p, cfg)
}

/// As [`solve_inconsistency`], keeping the listed variables in scope even if pruning would drop them.
pub fn solve_inconsistency_keeping(
    pdg: &ParametricPDG,
    focus: &Focus,
    cfg: &InnerSolverConfig,
    keep: &[usize],
) -> Result<InconsistencyResult> {
    let p = Problem::compile(pdg, focus, keep)?;
    run_solver(&p, cfg)
}

/// Variables retained by the inner problem under a focus.
pub fn retained_scope(pdg: &ParametricPDG, focus: &Focus) -> Result<Vec<usize>> {
    Ok(Problem::compile(pdg, focus, &[])?.scope)
}

/// `∇_θ` of the scoring function with μ held at `mu_star`, one vector per arc
/// (empty for constant arcs, zero for arcs with χ = 0).
pub fn envelope_grad(pdg: &ParametricPDG, focus: &Focus, mu_star: &JointTable) -> Result<Vec<Vec<f64>>> {
    let p = Problem::compile(pdg, focus, &[])?;
    let mu = if mu_star.vars == p.scope {
        p.support_values(mu_star)?
    } else {
        let extra: Vec<usize> = mu_star.vars.iter().copied().filter(|v| !p.scope.contains(v)).collect();
        let missing = p.scope.iter().any(|v| !mu_star.vars.contains(v));
        if missing {
            return Err(Error::ScopeMismatch("mu_star does not cover the focused variables".into()));
        }
        let q = Problem::compile(pdg, focus, &extra)?;
        return grad_on(pdg, focus, &q, &q.support_values(&mu_star.project_to(&q.scope, &q.sizes)?)?);
    };
    grad_on(pdg, focus, &p, &mu)
}

fn grad_on(pdg: &ParametricPDG, focus: &Focus, p: &Problem, mu: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = pdg
        .arcs()
        .iter()
        .map(|a| if a.cpd.is_learnable() { vec![0.0; a.cpd.param_len()] } else { vec![] })
        .collect();
    let wants = |a: usize| pdg.arc(a).cpd.is_learnable() && focus.chi[a] > 0.0;
    for t in &p.soft {
        if !wants(t.arc) {
            continue;
        }
        let marg = p.soft_marginal(t, mu);
        let w: Vec<f64> = marg
            .iter()
            .enumerate()
            .map(|(st, m)| if *m > 0.0 { -t.beta[st / t.n_tgt] * m } else { 0.0 })
            .collect();
        pdg.arc(t.arc).cpd.add_log_grad(t.n_src, t.n_tgt, &w, &mut out[t.arc])?;
    }
    if p.hard.iter().any(|h| wants(h.arc)) {
        let (_, g) = p.value_and_cell_grad(mu);
        for h in p.hard.iter().filter(|h| wants(h.arc)) {
            let mut w = vec![0.0; h.n_src * h.n_tgt];
            for (i, &st) in h.cell_st.iter().enumerate() {
                if mu[i] > 0.0 {
                    w[st as usize] += mu[i] * g[i];
                }
            }
            pdg.arc(h.arc).cpd.add_log_grad(h.n_src, h.n_tgt, &w, &mut out[h.arc])?;
        }
    }
    Ok(out)
}

/// Entropy helper shared with reductions: `Σ p ln p` with the 0 ln 0 = 0 convention.
pub fn neg_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| x * safe_ln(x)).sum()
}

#[cfg(test)]
mod tests;
