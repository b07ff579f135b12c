//! Decisions as inconsistency minimization: a prior over states, an outcome
//! kernel, and a soft constraint `b(⊤ | u) = k·exp(u)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::inconsistency::{solve_inconsistency, InnerSolverConfig};
use crate::pdg::{Cpd, Focus, Hyperarc, ParametricPDG};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionProblem {
    pub prior: Vec<f64>,
    pub n_actions: usize,
    /// `τ(o | s, a)`, indexed `[(s · n_actions + a) · n_outcomes + o]`.
    pub kernel: Vec<f64>,
    pub utility: Vec<f64>,
    pub k: f64,
    pub beta_p: f64,
    pub beta_b: f64,
}

impl DecisionProblem {
    pub fn n_states(&self) -> usize {
        self.prior.len()
    }

    pub fn n_outcomes(&self) -> usize {
        self.utility.len()
    }

    /// `k = e^{−max u}`, the largest k keeping `b` a valid cpd.
    pub fn default_k(utility: &[f64]) -> f64 {
        (-utility.iter().copied().fold(f64::NEG_INFINITY, f64::max)).exp()
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na, no) = (self.n_states(), self.n_actions, self.n_outcomes());
        if ns == 0 || na == 0 || no == 0 {
            return invalid("decision problem needs states, actions and outcomes");
        }
        if (self.prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.prior.iter().any(|p| *p < 0.0) {
            return invalid("prior must be a distribution");
        }
        if self.kernel.len() != ns * na * no {
            return invalid("outcome kernel must have |S|·|A|·|O| entries");
        }
        for row in self.kernel.chunks(no) {
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 || row.iter().any(|p| *p < 0.0) {
                return invalid("outcome kernel rows must be distributions");
            }
        }
        if !(self.k > 0.0) || self.utility.iter().any(|u| !u.is_finite()) {
            return invalid("k must be positive and utilities finite");
        }
        if !(self.beta_p > 0.0 && self.beta_p.is_finite()) || !(self.beta_b >= 0.0 && self.beta_b.is_finite()) {
            return invalid("β_p must be finite and positive, β_b finite and non-negative");
        }
        Ok(())
    }

    /// `EU(s, a) = E_{τ(·|s,a)} u + ln k`.
    pub fn eu(&self, s: usize, a: usize) -> f64 {
        let no = self.n_outcomes();
        let row = &self.kernel[(s * self.n_actions + a) * no..][..no];
        row.iter().zip(&self.utility).map(|(p, u)| p * u).sum::<f64>() + self.k.ln()
    }

    pub fn expected_utility(&self, a: usize) -> f64 {
        (0..self.n_states()).map(|s| self.prior[s] * self.eu(s, a)).sum::<f64>() - self.k.ln()
    }

    /// `max_s E_{τ(·|s,a)} u` over states the prior allows.
    pub fn best_case_utility(&self, a: usize) -> f64 {
        (0..self.n_states())
            .filter(|&s| self.prior[s] > 0.0)
            .map(|s| self.eu(s, a) - self.k.ln())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn with_ratio(mut self, ratio: f64) -> Self {
        self.beta_p = 1.0;
        self.beta_b = ratio;
        self
    }

    pub fn random<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, n_outcomes: usize) -> Self {
        let mut simplex = |n: usize| {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect::<Vec<f64>>()
        };
        let prior = simplex(n_states);
        let kernel = (0..n_states * n_actions).flat_map(|_| simplex(n_outcomes)).collect();
        let utility: Vec<f64> = (0..n_outcomes).map(|_| rng.random_range(0.0..1.0)).collect();
        let k = Self::default_k(&utility);
        DecisionProblem { prior, n_actions, kernel, utility, k, beta_p: 1.0, beta_b: 1.0 }
    }
}

fn lse(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `−β_p · ln Σ_s p(s) exp((β_b/β_p)·EU(s, a))`, evaluated with a max shift.
pub fn decision_inconsistency(problem: &DecisionProblem, a: usize) -> Result<f64> {
    problem.validate()?;
    if a >= problem.n_actions {
        return invalid(format!("action {a} out of range"));
    }
    let t = problem.beta_b / problem.beta_p;
    let terms = (0..problem.n_states())
        .filter(|&s| problem.prior[s] > 0.0)
        .map(|s| problem.prior[s].ln() + t * problem.eu(s, a));
    Ok(-problem.beta_p * lse(terms))
}

/// Bounds on `value / β_b`: `M − ln|S| / t ≤ value/β_b ≤ M` with
/// `M = min_s [ln(1/p(s))/t − EU(s, a)]` and `t = β_b/β_p`.
pub fn decision_bounds(problem: &DecisionProblem, a: usize) -> Result<(f64, f64)> {
    problem.validate()?;
    let t = problem.beta_b / problem.beta_p;
    if t <= 0.0 {
        return invalid("bounds need β_b > 0");
    }
    let m = (0..problem.n_states())
        .filter(|&s| problem.prior[s] > 0.0)
        .map(|s| -problem.prior[s].ln() / t - problem.eu(s, a))
        .fold(f64::INFINITY, f64::min);
    Ok((m - (problem.n_states() as f64).ln() / t, m))
}

/// Variables S, A, O, U, T with the action and truth pinned by hard arcs.
pub fn decision_pdg(problem: &DecisionProblem, a: usize) -> Result<(ParametricPDG, Focus)> {
    problem.validate()?;
    let (ns, na, no) = (problem.n_states(), problem.n_actions, problem.n_outcomes());
    if a >= na {
        return invalid(format!("action {a} out of range"));
    }
    let mut pdg = ParametricPDG::new();
    let s = pdg.add_variable("S", ns)?;
    let av = pdg.add_variable("A", na)?;
    let o = pdg.add_variable("O", no)?;
    let u = pdg.add_variable("U", no)?;
    let t = pdg.add_variable("T", 2)?;
    pdg.add_arc(Hyperarc::new("p", vec![], vec![s], Cpd::constant(problem.prior.clone())))?;
    let mut act = vec![0.0; na];
    act[a] = 1.0;
    pdg.add_arc(Hyperarc::new("action", vec![], vec![av], Cpd::constant(act)))?;
    pdg.add_arc(Hyperarc::new("tau", vec![s, av], vec![o], Cpd::constant(problem.kernel.clone())))?;
    let identity: Vec<f64> = (0..no * no).map(|i| if i / no == i % no { 1.0 } else { 0.0 }).collect();
    pdg.add_arc(Hyperarc::new("utility", vec![o], vec![u], Cpd::constant(identity)))?;
    pdg.add_arc(Hyperarc::new("truth", vec![], vec![t], Cpd::constant(vec![0.0, 1.0])))?;
    let mut b = Vec::with_capacity(2 * no);
    for &util in &problem.utility {
        let top = problem.k * util.exp();
        if top > 1.0 + 1e-12 {
            return invalid(format!("k·exp(u) = {top} exceeds 1; lower k"));
        }
        b.extend([(1.0 - top).max(0.0), top.min(1.0)]);
    }
    pdg.add_arc(Hyperarc::new("b", vec![u], vec![t], Cpd::constant(b)))?;
    let inf = f64::INFINITY;
    let focus = Focus::from_beta(vec![problem.beta_p, inf, inf, inf, inf, problem.beta_b]);
    Ok((pdg, focus))
}

pub fn decision_numeric(problem: &DecisionProblem, a: usize) -> Result<f64> {
    let (pdg, focus) = decision_pdg(problem, a)?;
    Ok(solve_inconsistency(&pdg, &focus, &InnerSolverConfig::precise())?.value)
}

/// Actions minimizing the closed-form inconsistency (first index on ties).
pub fn best_action(problem: &DecisionProblem) -> Result<usize> {
    let mut best = (0, f64::INFINITY);
    for a in 0..problem.n_actions {
        let v = decision_inconsistency(problem, a)?;
        if v < best.1 {
            best = (a, v);
        }
    }
    Ok(best.0)
}

pub fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedTree;

    fn two_action(eu: [[f64; 2]; 2], prior: Vec<f64>) -> DecisionProblem {
        // outcomes carry the utilities directly: one deterministic outcome per (s, a)
        let utility = vec![eu[0][0], eu[0][1], eu[1][0], eu[1][1]];
        let mut kernel = vec![0.0; 2 * 2 * 4];
        for s in 0..2 {
            for a in 0..2 {
                kernel[(s * 2 + a) * 4 + s * 2 + a] = 1.0;
            }
        }
        let k = DecisionProblem::default_k(&utility);
        DecisionProblem { prior, n_actions: 2, kernel, utility, k, beta_p: 1.0, beta_b: 1.0 }
    }

    #[test]
    fn small_ratio_maximizes_expected_utility() {
        let p = two_action([[1.0, 2.0], [1.0, 2.0]], vec![0.5, 0.5]).with_ratio(1e-3);
        assert_eq!(best_action(&p).unwrap(), 1);
    }

    #[test]
    fn large_ratio_maximizes_best_case() {
        // action 0 can reach 5 but expects less; action 1 is reliably 3
        let p = two_action([[5.0, 3.0], [0.0, 3.0]], vec![0.3, 0.7]).with_ratio(1e3);
        assert!(p.expected_utility(1) > p.expected_utility(0));
        assert_eq!(best_action(&p).unwrap(), 0);
    }

    #[test]
    fn single_state_is_linear_in_eu() {
        let utility = vec![0.3, 1.1];
        let k = DecisionProblem::default_k(&utility);
        for ratio in [1e-3, 1.0, 1e3] {
            let p = DecisionProblem { prior: vec![1.0], n_actions: 1, kernel: vec![0.4, 0.6], utility: utility.clone(), k, beta_p: 1.0, beta_b: ratio };
            let eu = 0.4 * 0.3 + 0.6 * 1.1;
            assert!((decision_inconsistency(&p, 0).unwrap() - (-ratio * eu - ratio * k.ln())).abs() < 1e-9 * ratio.max(1.0));
        }
    }

    #[test]
    fn numeric_matches_closed_form_within_bounds() {
        let mut rng = SeedTree::new(2).rng("decision");
        for ratio in [1e-3, 1.0, 10.0] {
            let p = DecisionProblem::random(&mut rng, 3, 2, 4).with_ratio(ratio);
            for a in 0..2 {
                let c = decision_inconsistency(&p, a).unwrap();
                let n = decision_numeric(&p, a).unwrap();
                assert!((c - n).abs() < 1e-8, "{c} vs {n}");
                let (lo, hi) = decision_bounds(&p, a).unwrap();
                assert!(lo - 1e-12 <= c / p.beta_b && c / p.beta_b <= hi + 1e-12);
            }
        }
    }
}
