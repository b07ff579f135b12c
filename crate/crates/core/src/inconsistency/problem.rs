//! The inner problem compiled to flat arrays over the support of μ.
//!
//! Arcs with β = +∞ restrict μ to `ν(free) · Π p_hard`, where the free
//! variables are the retained variables not targeted by any hard arc. The
//! remaining arcs contribute signed KL and conditional-entropy terms.

use crate::error::{Error, Result};
use crate::pdg::{product, project_indices, Focus, JointTable, ParametricPDG};

/// Dense joints beyond this many cells are refused.
pub const MAX_CELLS: usize = 1 << 24;

pub(crate) struct SoftTerm {
    pub arc: usize,
    pub n_src: usize,
    pub n_tgt: usize,
    pub cell_st: Vec<u32>,
    pub log_p: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha_gamma: f64,
}

pub(crate) struct HardTerm {
    pub arc: usize,
    pub n_src: usize,
    pub n_tgt: usize,
    pub cell_st: Vec<u32>,
}

pub(crate) struct Problem {
    pub scope: Vec<usize>,
    pub sizes: Vec<usize>,
    pub dense: Vec<u32>,
    pub base: Vec<f64>,
    pub free_of: Vec<u32>,
    pub n_free: usize,
    pub soft: Vec<SoftTerm>,
    pub hard: Vec<HardTerm>,
    pub gamma: f64,
}

pub(crate) fn safe_ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        -745.0
    }
}

fn positions(scope: &[usize], vars: &[usize]) -> Vec<usize> {
    vars.iter().map(|v| scope.iter().position(|u| u == v).unwrap()).collect()
}

impl Problem {
    pub fn compile(pdg: &ParametricPDG, focus: &Focus, keep: &[usize]) -> Result<Problem> {
        focus.validate(pdg)?;
        let active: Vec<usize> = (0..pdg.n_arcs()).filter(|&a| focus.is_active(a)).collect();
        let mut retained = vec![false; pdg.n_vars()];
        if focus.gamma > 0.0 {
            retained.iter_mut().for_each(|r| *r = true);
        }
        for &a in &active {
            let arc = pdg.arc(a);
            for &v in arc.sources.iter().chain(&arc.targets) {
                retained[v] = true;
            }
        }
        for &v in keep {
            retained[v] = true;
        }
        let scope: Vec<usize> = (0..pdg.n_vars()).filter(|&v| retained[v]).collect();
        let sizes = pdg.sizes(&scope);
        let n_dense = sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s)).unwrap_or(usize::MAX);
        if n_dense > MAX_CELLS {
            return Err(Error::Unsupported(format!("joint over {} variables has {n_dense} cells", scope.len())));
        }

        let hard_arcs: Vec<usize> = active.iter().copied().filter(|&a| focus.is_hard(a)).collect();
        let mut hard_target_of = vec![None; pdg.n_vars()];
        for &a in &hard_arcs {
            for &t in &pdg.arc(a).targets {
                if let Some(b) = hard_target_of[t] {
                    return Err(Error::Unsupported(format!(
                        "variable {} is the target of two hard arcs ({} and {})",
                        pdg.variables()[t].id,
                        pdg.arc(b).id,
                        pdg.arc(a).id
                    )));
                }
                hard_target_of[t] = Some(a);
            }
        }
        // hard arcs must be orderable: each source is free or produced earlier
        let mut produced: Vec<bool> = (0..pdg.n_vars()).map(|v| hard_target_of[v].is_none()).collect();
        let mut pending = hard_arcs.clone();
        while !pending.is_empty() {
            let before = pending.len();
            pending.retain(|&a| {
                let arc = pdg.arc(a);
                if arc.sources.iter().all(|&s| produced[s]) {
                    arc.targets.iter().for_each(|&t| produced[t] = true);
                    false
                } else {
                    true
                }
            });
            if pending.len() == before {
                return Err(Error::Unsupported("hard (infinite-attention) arcs form a cycle".into()));
            }
        }
        let free_vars: Vec<usize> = scope.iter().copied().filter(|&v| hard_target_of[v].is_none()).collect();

        let arc_cells = |a: usize| -> Vec<u32> {
            let arc = pdg.arc(a);
            let nt = pdg.n_states(&arc.targets);
            let s_idx = project_indices(&sizes, &positions(&scope, &arc.sources));
            let t_idx = project_indices(&sizes, &positions(&scope, &arc.targets));
            s_idx.iter().zip(&t_idx).map(|(s, t)| (s * nt + t) as u32).collect()
        };

        let mut base = vec![1.0f64; n_dense];
        let mut hard_cells = Vec::new();
        for &a in &hard_arcs {
            let p = pdg.cpd_probs(a)?;
            let cells = arc_cells(a);
            for (x, &st) in cells.iter().enumerate() {
                base[x] *= p[st as usize];
            }
            hard_cells.push((a, cells));
        }

        let free_pos = positions(&scope, &free_vars);
        let free_dense = project_indices(&sizes, &free_pos);
        let n_free_dense = product(&pdg.sizes(&free_vars));
        let mut bad_free = vec![false; n_free_dense];
        let mut unbounded = vec![false; n_dense];

        let mut soft = Vec::new();
        for &a in active.iter().filter(|&&a| !focus.is_hard(a)) {
            let (ns, nt) = pdg.arc_dims(a);
            let log_p = pdg.arc(a).cpd.log_probs(ns, nt)?;
            let beta = focus.row_betas(a, ns);
            let cells = arc_cells(a);
            for (x, &st) in cells.iter().enumerate() {
                if base[x] > 0.0 && log_p[st as usize] == f64::NEG_INFINITY {
                    let b = beta[st as usize / nt];
                    if b > 0.0 {
                        bad_free[free_dense[x]] = true;
                    } else if b < 0.0 {
                        unbounded[x] = true;
                    }
                }
            }
            soft.push(SoftTerm {
                arc: a,
                n_src: ns,
                n_tgt: nt,
                cell_st: cells,
                log_p,
                beta,
                alpha_gamma: focus.alpha[a] * focus.gamma,
            });
        }

        let support: Vec<usize> = (0..n_dense).filter(|&x| base[x] > 0.0 && !bad_free[free_dense[x]]).collect();
        if support.is_empty() {
            return Err(Error::Infeasible(
                "every joint assignment violates a hard or positively-weighted zero-probability constraint".into(),
            ));
        }
        if let Some(&x) = support.iter().find(|&&x| unbounded[x]) {
            let a = soft.iter().find(|t| t.log_p[t.cell_st[x] as usize] == f64::NEG_INFINITY).map(|t| t.arc).unwrap();
            return Err(Error::Unbounded(format!(
                "arc {} has negative attention and assigns zero probability to a feasible outcome",
                pdg.arc(a).id
            )));
        }
        let mut compact = vec![u32::MAX; n_free_dense];
        let mut n_free = 0u32;
        let mut free_of = Vec::with_capacity(support.len());
        for &x in &support {
            let f = free_dense[x];
            if compact[f] == u32::MAX {
                compact[f] = n_free;
                n_free += 1;
            }
            free_of.push(compact[f]);
        }
        let restrict = |cells: &[u32]| -> Vec<u32> { support.iter().map(|&x| cells[x]).collect() };
        for t in &mut soft {
            t.cell_st = restrict(&t.cell_st);
        }
        let hard = hard_cells
            .into_iter()
            .map(|(a, cells)| {
                let (ns, nt) = pdg.arc_dims(a);
                HardTerm { arc: a, n_src: ns, n_tgt: nt, cell_st: restrict(&cells) }
            })
            .collect();
        Ok(Problem {
            base: support.iter().map(|&x| base[x]).collect(),
            dense: support.iter().map(|&x| x as u32).collect(),
            scope,
            sizes,
            free_of,
            n_free: n_free as usize,
            soft,
            hard,
            gamma: focus.gamma,
        })
    }

    pub fn mu_from_logits(&self, z: &[f64]) -> Vec<f64> {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut nu: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = nu.iter().sum();
        nu.iter_mut().for_each(|v| *v /= s);
        self.free_of.iter().zip(&self.base).map(|(&f, &b)| nu[f as usize] * b).collect()
    }

    fn arc_marginal(cells: &[u32], mu: &[f64], n: usize) -> Vec<f64> {
        let mut marg = vec![0.0; n];
        for (i, &st) in cells.iter().enumerate() {
            marg[st as usize] += mu[i];
        }
        marg
    }

    /// Objective value and `∂/∂μ_x` at each support cell.
    pub fn value_and_cell_grad(&self, mu: &[f64]) -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut g = vec![0.0; mu.len()];
        for t in &self.soft {
            let marg = Self::arc_marginal(&t.cell_st, mu, t.n_src * t.n_tgt);
            let mut coef = vec![0.0; marg.len()];
            for s in 0..t.n_src {
                let row = &marg[s * t.n_tgt..(s + 1) * t.n_tgt];
                let msrc: f64 = row.iter().sum();
                let lsrc = safe_ln(msrc);
                for k in 0..t.n_tgt {
                    let st = s * t.n_tgt + k;
                    let lc = safe_ln(row[k]) - lsrc;
                    let lc = if row[k] > 0.0 { lc } else { lc.min(0.0) };
                    let lp = t.log_p[st];
                    let mut c = -t.alpha_gamma * lc;
                    if t.beta[s] != 0.0 && lp.is_finite() {
                        c += t.beta[s] * (lc - lp);
                    }
                    coef[st] = c;
                    if row[k] > 0.0 {
                        value += row[k] * c;
                    }
                }
            }
            for (i, &st) in t.cell_st.iter().enumerate() {
                g[i] += coef[st as usize];
            }
        }
        if self.gamma > 0.0 {
            for (i, &m) in mu.iter().enumerate() {
                if m > 0.0 {
                    value += self.gamma * m * m.ln();
                }
                g[i] += self.gamma * (safe_ln(m) + 1.0);
            }
        }
        (value, g)
    }

    /// Objective value and gradient with respect to the free-cell logits.
    pub fn eval(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let mu = self.mu_from_logits(z);
        let (value, g) = self.value_and_cell_grad(&mu);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut nu: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = nu.iter().sum();
        nu.iter_mut().for_each(|v| *v /= s);
        let mut gf = vec![0.0; self.n_free];
        for i in 0..mu.len() {
            gf[self.free_of[i] as usize] += self.base[i] * g[i];
        }
        let mean: f64 = nu.iter().zip(&gf).map(|(a, b)| a * b).sum();
        let grad = nu.iter().zip(&gf).map(|(n, g)| n * (g - mean)).collect();
        (value, grad)
    }

    /// Logits reproducing (as far as the family allows) a given joint.
    pub fn logits_from(&self, mu: &JointTable) -> Result<Vec<f64>> {
        let mu = if mu.vars == self.scope { mu.clone() } else { mu.project_to(&self.scope, &self.sizes)? };
        let mut nu = vec![0.0; self.n_free];
        for (i, &x) in self.dense.iter().enumerate() {
            nu[self.free_of[i] as usize] += mu.probs[x as usize];
        }
        let s: f64 = nu.iter().sum();
        if !(s > 0.0) {
            return Ok(vec![0.0; self.n_free]);
        }
        Ok(nu.iter().map(|v| (v / s).max(1e-12).ln()).collect())
    }

    pub fn to_joint(&self, mu: &[f64]) -> JointTable {
        let mut probs = vec![0.0; product(&self.sizes)];
        for (i, &x) in self.dense.iter().enumerate() {
            probs[x as usize] = mu[i];
        }
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s);
        JointTable { vars: self.scope.clone(), sizes: self.sizes.clone(), probs }
    }

    /// μ restricted to the support, from a joint over the same scope.
    pub fn support_values(&self, mu: &JointTable) -> Result<Vec<f64>> {
        if mu.vars != self.scope {
            return Err(Error::ScopeMismatch(format!(
                "joint is over variables {:?}, the focused problem over {:?}",
                mu.vars, self.scope
            )));
        }
        Ok(self.dense.iter().map(|&x| mu.probs[x as usize]).collect())
    }

    pub fn soft_marginal(&self, t: &SoftTerm, mu: &[f64]) -> Vec<f64> {
        Self::arc_marginal(&t.cell_st, mu, t.n_src * t.n_tgt)
    }
}
