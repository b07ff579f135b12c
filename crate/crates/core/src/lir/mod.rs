//! Local inconsistency resolution: refocus, solve the focused inner problem,
//! and move the controlled parameters down the envelope gradient.

mod metrics;
mod refocus;

pub use metrics::{resolution_from_values, resolution_percentage, tv_distortion};
pub use refocus::{custom_refocus, make_refocus, FocusStream, RefocusKind};

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inconsistency::{
    envelope_grad, solve_inconsistency, solve_inconsistency_keeping, InconsistencyResult, InnerSolverConfig, MAX_CELLS,
};
use crate::ode::{euler_step, rk4_step, Integrator};
use crate::optim::{lbfgs, Adam, LbfgsConfig};
use crate::pdg::{CpdKind, Focus, JointTable, ParametricPDG};
use crate::seed::hash_f64s;

/// How arcs with χ = ∞ are driven to a stationary point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullControl {
    /// Quasi-Newton descent on the masked objective with precise inner solves.
    Iterative,
    /// Exact KL projection `θ_a ← log μ*(T_a|S_a)` where the arc is a plain
    /// learnable table with 0 < β < ∞ and γα = 0; iterative otherwise.
    Projection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    pub integrator: Integrator,
    pub outer_iters_per_step: usize,
    pub step_scale: f64,
    pub full_control: FullControl,
    pub full_control_tol: f64,
    pub full_control_iters: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig {
            integrator: Integrator::AdaptiveFirstOrder,
            outer_iters_per_step: 10,
            step_scale: 0.05,
            full_control: FullControl::Iterative,
            full_control_tol: 1e-8,
            full_control_iters: 500,
        }
    }
}

impl OdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters_per_step == 0 {
            return Err(Error::Validation("outer_iters_per_step must be at least 1".into()));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::Validation("step_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub focus: Focus,
    pub value_before: f64,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_from_init: Option<f64>,
    pub param_hash: String,
    pub param_delta: f64,
    pub mu_star: JointTable,
    pub inner_iterations: usize,
    pub converged: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub mu_star: JointTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFailure {
    pub step: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LirTrace {
    pub initial: Measurement,
    pub final_: Measurement,
    pub steps: Vec<StepRecord>,
    pub failures: Vec<StepFailure>,
    pub aborted: Option<String>,
    #[serde(with = "crate::pdg::ext_real::vec")]
    pub final_params: Vec<f64>,
}

impl LirTrace {
    /// One JSON object per step; wall-times are zeroed unless requested.
    pub fn write_jsonl<W: Write>(&self, mut w: W, include_timing: bool) -> Result<()> {
        for s in &self.steps {
            let mut s = s.clone();
            if !include_timing {
                s.seconds = 0.0;
            }
            serde_json::to_writer(&mut w, &s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rows `(step, value, tv_from_init)` at full attention; step 0 is the initial state.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "value", "tv_from_init"])?;
        out.write_record(["0".to_string(), self.initial.value.to_string(), "0".to_string()])?;
        for s in &self.steps {
            out.write_record([
                (s.step + 1).to_string(),
                s.full_value.map_or(String::new(), |v| v.to_string()),
                s.tv_from_init.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn inner_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.inner_iterations).sum()
    }
}

/// A PDG under LIR together with optimizer state that persists across steps.
#[derive(Clone, Debug)]
pub struct LirState {
    pdg: ParametricPDG,
    adam: Option<Adam>,
    warm: Option<JointTable>,
    /// Joint over every variable; pruned solves start from its marginal and
    /// write their result back into it.
    reservoir: Option<JointTable>,
    inner_iterations: usize,
}

impl LirState {
    pub fn new(pdg: ParametricPDG) -> Self {
        LirState { pdg, adam: None, warm: None, reservoir: None, inner_iterations: 0 }
    }

    /// Seed the warm start (and the full-scope reservoir, when it fits in memory).
    pub fn with_joint(mut self, mu: JointTable) -> Self {
        if self.reservoir_fits() {
            self.reservoir = Some(self.full_scope().with_marginal(&mu).unwrap_or(mu.clone()));
        }
        self.warm = Some(mu);
        self
    }

    fn reservoir_fits(&self) -> bool {
        self.pdg.variables().iter().map(|v| v.size).try_fold(1usize, |acc, s| acc.checked_mul(s)).is_some_and(|n| n <= MAX_CELLS)
    }

    fn full_scope(&self) -> JointTable {
        let all: Vec<usize> = (0..self.pdg.n_vars()).collect();
        JointTable::uniform(all.clone(), self.pdg.sizes(&all))
    }

    fn warm_start(&self) -> Option<JointTable> {
        self.reservoir.clone().or_else(|| self.warm.clone())
    }

    pub fn pdg(&self) -> &ParametricPDG {
        &self.pdg
    }

    pub fn into_pdg(self) -> ParametricPDG {
        self.pdg
    }

    /// The most recent inner solution, if any.
    pub fn last_mu(&self) -> Option<&JointTable> {
        self.warm.as_ref()
    }

    fn solve(&mut self, focus: &Focus, inner: &InnerSolverConfig) -> Result<InconsistencyResult> {
        let cfg = inner.clone().with_warm_start(self.warm_start());
        let r = solve_inconsistency(&self.pdg, focus, &cfg)?;
        self.inner_iterations += r.iterations_used;
        self.absorb(&r.mu_star)?;
        Ok(r)
    }

    fn absorb(&mut self, mu: &JointTable) -> Result<()> {
        if self.reservoir_fits() {
            let base = self.reservoir.take().unwrap_or_else(|| self.full_scope());
            self.reservoir = Some(base.with_marginal(mu)?);
        }
        self.warm = Some(mu.clone());
        Ok(())
    }

    /// Value and `χ ⊙ ∇θ` at the current parameters, flattened.
    fn scaled_grad(&mut self, focus: &Focus, inner: &InnerSolverConfig, chi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = self.solve(focus, inner)?;
        let g = envelope_grad(&self.pdg, focus, &r.mu_star)?;
        let flat: Vec<f64> = g
            .iter()
            .enumerate()
            .flat_map(|(a, ga)| if ga.is_empty() { vec![0.0; self.pdg.params(a).len()] } else { ga.clone() })
            .collect();
        Ok((r.value, flat.iter().zip(chi).map(|(g, c)| if *c > 0.0 { g * c } else { 0.0 }).collect()))
    }

    fn set_flat(&mut self, theta: &[f64]) -> Result<()> {
        if theta.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numerical("parameter update produced a non-finite value".into()));
        }
        self.pdg.set_flat_params(theta)
    }
}

/// Flat χ per parameter: finite positive entries on attended arcs are flowed;
/// ∞ arcs are handled separately. Unattended arcs have zero gradient and stay
/// out of the mask so optimizer momentum cannot move them.
fn finite_chi(pdg: &ParametricPDG, focus: &Focus) -> Vec<f64> {
    let mut out = Vec::new();
    for a in 0..pdg.n_arcs() {
        let learnable = pdg.arc(a).cpd.is_learnable() && focus.is_active(a);
        for i in 0..pdg.params(a).len() {
            let c = focus.chi_param(a, i);
            out.push(if learnable && c.is_finite() && c > 0.0 { c } else { 0.0 });
        }
    }
    out
}

fn full_control_arcs(pdg: &ParametricPDG, focus: &Focus) -> Vec<usize> {
    (0..pdg.n_arcs())
        .filter(|&a| pdg.arc(a).cpd.is_learnable() && focus.chi[a] == f64::INFINITY && !focus.chi_params.contains_key(&a))
        .collect()
}

fn projection_eligible(pdg: &ParametricPDG, focus: &Focus, a: usize) -> bool {
    matches!(pdg.arc(a).cpd.kind, CpdKind::LearnableTable { row_map: None })
        && !focus.beta_rows.contains_key(&a)
        && focus.beta[a] > 0.0
        && focus.beta[a].is_finite()
        && focus.gamma * focus.alpha[a] == 0.0
}

fn project(state: &mut LirState, focus: &Focus, arcs: &[usize]) -> Result<()> {
    let mut reduced = focus.clone();
    let mut keep = Vec::new();
    for &a in arcs {
        reduced.beta[a] = 0.0;
        let arc = state.pdg.arc(a);
        keep.extend(arc.sources.iter().chain(&arc.targets).copied());
    }
    let cfg = InnerSolverConfig::precise().with_warm_start(state.warm_start());
    let r = solve_inconsistency_keeping(&state.pdg, &reduced, &cfg, &keep)?;
    state.inner_iterations += r.iterations_used;
    state.absorb(&r.mu_star)?;
    for &a in arcs {
        let arc = state.pdg.arc(a).clone();
        let cond = r.mu_star.conditional(&arc.targets, &arc.sources)?;
        let logits = cond.rows.iter().map(|p| p.max(1e-300).ln()).collect();
        state.pdg.set_params(a, logits)?;
    }
    Ok(())
}

fn drive_to_stationarity(state: &mut LirState, focus: &Focus, arcs: &[usize], ode: &OdeConfig) -> Result<()> {
    let offsets = state.pdg.param_offsets();
    let base = state.pdg.flat_params();
    let idx: Vec<usize> = arcs
        .iter()
        .flat_map(|&a| offsets[a]..offsets[a + 1])
        .filter(|&i| base[i].is_finite())
        .collect();
    let mut chi = vec![0.0; offsets[state.pdg.n_arcs()]];
    idx.iter().for_each(|&i| chi[i] = 1.0);
    let precise = InnerSolverConfig::precise();
    let x0: Vec<f64> = idx.iter().map(|&i| base[i]).collect();
    let mut failure = None;
    let result = lbfgs(
        |x| {
            let mut theta = base.clone();
            idx.iter().zip(x).for_each(|(&i, v)| theta[i] = *v);
            let eval = state.set_flat(&theta).and_then(|_| {
                let (v, g) = state.scaled_grad(focus, &precise, &chi)?;
                Ok((v, idx.iter().map(|&i| g[i]).collect::<Vec<f64>>()))
            });
            match eval {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e.to_string());
                    (f64::INFINITY, vec![0.0; idx.len()])
                }
            }
        },
        x0,
        LbfgsConfig { max_iters: ode.full_control_iters, memory: 10, grad_tol: ode.full_control_tol },
    );
    let mut theta = base;
    idx.iter().zip(&result.x).for_each(|(&i, v)| theta[i] = *v);
    state.set_flat(&theta)?;
    if !result.value.is_finite() {
        return Err(Error::Numerical(failure.unwrap_or_else(|| "full-control objective diverged".into())));
    }
    Ok(())
}

/// One LIR step under `focus`.
pub fn lir_step(state: &mut LirState, focus: &Focus, ode: &OdeConfig, inner: &InnerSolverConfig) -> Result<StepRecord> {
    focus.validate(&state.pdg)?;
    ode.validate()?;
    inner.validate()?;
    let started = Instant::now();
    let iters_before = state.inner_iterations;
    let theta0 = state.pdg.flat_params();
    let before = state.solve(focus, inner)?;
    let chi = finite_chi(&state.pdg, focus);
    let mask: Vec<bool> = chi.iter().map(|c| *c > 0.0).collect();

    if mask.iter().any(|m| *m) {
        let h = ode.step_scale;
        for _ in 0..ode.outer_iters_per_step {
            let theta = state.pdg.flat_params();
            let next = match ode.integrator {
                Integrator::Euler | Integrator::Rk4 => {
                    let mut field = |x: &[f64]| -> Result<Vec<f64>> {
                        state.set_flat(x)?;
                        Ok(state.scaled_grad(focus, inner, &chi)?.1.into_iter().map(|g| -g).collect())
                    };
                    if ode.integrator == Integrator::Euler {
                        euler_step(&theta, h, &mut field)?
                    } else {
                        rk4_step(&theta, h, &mut field)?
                    }
                }
                Integrator::AdaptiveFirstOrder => {
                    let (_, g) = state.scaled_grad(focus, inner, &chi)?;
                    let n = theta.len();
                    let adam = state.adam.get_or_insert_with(|| Adam::new(n, h));
                    adam.lr = h;
                    let mut x = theta;
                    adam.step_masked(&mut x, &g, Some(&mask));
                    x
                }
            };
            state.set_flat(&next)?;
        }
    }

    let full = full_control_arcs(&state.pdg, focus);
    if !full.is_empty() {
        let closed = ode.full_control == FullControl::Projection
            && full.iter().all(|&a| projection_eligible(&state.pdg, focus, a));
        if closed {
            project(state, focus, &full)?;
        } else {
            drive_to_stationarity(state, focus, &full, ode)?;
        }
    }

    let after = state.solve(focus, inner)?;
    let theta1 = state.pdg.flat_params();
    let delta = theta0
        .iter()
        .zip(&theta1)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(StepRecord {
        step: 0,
        focus: focus.clone(),
        value_before: before.value,
        value: after.value,
        full_value: None,
        tv_from_init: None,
        param_hash: hash_f64s(&theta1),
        param_delta: delta,
        mu_star: after.mu_star,
        inner_iterations: state.inner_iterations - iters_before,
        converged: after.converged,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LirConfig {
    pub steps: usize,
    pub ode: OdeConfig,
    pub inner: InnerSolverConfig,
    /// Solver for the initial and final full-attention measurements; the
    /// initial solve starts cold, the final one from the last joint of the run.
    pub measure: InnerSolverConfig,
    pub track_full: bool,
    pub max_failures: usize,
}

impl Default for LirConfig {
    fn default() -> Self {
        LirConfig {
            steps: 20,
            ode: OdeConfig::default(),
            inner: InnerSolverConfig::warm(),
            measure: InnerSolverConfig::cold(50),
            track_full: true,
            max_failures: 3,
        }
    }
}

/// LIR from default parameters: refocus, step, record.
pub fn lir_run(pdg: &ParametricPDG, strategy: &mut FocusStream, cfg: &LirConfig) -> Result<LirTrace> {
    let mut pdg = pdg.clone();
    pdg.reset_to_defaults();
    let full = Focus::uniform(pdg.n_arcs());
    let initial = solve_inconsistency(&pdg, &full, &cfg.measure)?;
    let mut state = LirState::new(pdg).with_joint(initial.mu_star.clone());
    let mut steps = Vec::new();
    let mut failures = Vec::new();
    let mut aborted = None;
    let mut consecutive = 0;
    let mut full_warm = Some(initial.mu_star.clone());
    for t in 0..cfg.steps {
        let focus = strategy.next_focus();
        match lir_step(&mut state, &focus, &cfg.ode, &cfg.inner) {
            Ok(mut rec) => {
                consecutive = 0;
                rec.step = t;
                if cfg.track_full {
                    let mcfg = cfg.inner.clone().with_warm_start(full_warm.take());
                    let r = solve_inconsistency(state.pdg(), &full, &mcfg)?;
                    rec.full_value = Some(r.value);
                    rec.tv_from_init = Some(tv_distortion(&initial.mu_star, &r.mu_star)?);
                    full_warm = Some(r.mu_star);
                }
                steps.push(rec);
            }
            Err(e) => {
                consecutive += 1;
                failures.push(StepFailure { step: t, error: e.to_string() });
                if consecutive >= cfg.max_failures {
                    aborted = Some(format!("{consecutive} consecutive step failures; last: {e}"));
                    break;
                }
            }
        }
    }
    let warm = full_warm.or_else(|| state.last_mu().cloned()).or(Some(initial.mu_star.clone()));
    let pdg = state.into_pdg();
    let fin = solve_inconsistency(&pdg, &full, &cfg.measure.clone().with_warm_start(warm))?;
    Ok(LirTrace {
        initial: Measurement { value: initial.value, mu_star: initial.mu_star },
        final_: Measurement { value: fin.value, mu_star: fin.mu_star },
        steps,
        failures,
        aborted,
        final_params: pdg.flat_params(),
    })
}

#[cfg(test)]
mod tests;
