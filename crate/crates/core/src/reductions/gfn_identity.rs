//! The trajectory PDG over `(T, I, S, S')` whose inconsistency under centered
//! surprisal attention is the length-normalized trajectory-balance loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::inconsistency::{envelope_grad, solve_inconsistency, InnerSolverConfig};
use crate::pdg::{Cpd, Focus, Hyperarc, ParametricPDG};

pub const MAX_TRAJECTORIES: usize = 30;

/// A DAG with source state 0. `children[s]` lists forward moves; a terminal
/// state may additionally move to the sink.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyDag {
    pub children: Vec<Vec<usize>>,
    pub terminal: Vec<bool>,
    /// `R(x)`, read only at terminal states.
    pub reward: Vec<f64>,
}

/// Forward logits aligned with [`TinyDag::actions`], and the partition estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub forward_logits: Vec<Vec<f64>>,
    pub log_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Visited states ending at the terminal state `x`; the sink is implicit.
    pub states: Vec<usize>,
}

impl Trajectory {
    /// Number of transitions, counting the final move to the sink.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn terminal(&self) -> usize {
        *self.states.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GfnCheck {
    pub numeric: f64,
    pub mod_tb: f64,
    pub tb: f64,
    /// Cosine between the frozen-attention envelope gradient and `∇ModTB`.
    pub grad_cosine: f64,
    /// `‖∇ModTB‖ / ‖∇numeric‖`.
    pub grad_ratio: f64,
}

impl TinyDag {
    pub fn n_states(&self) -> usize {
        self.children.len()
    }

    pub fn sink(&self) -> usize {
        self.n_states()
    }

    /// Absorbs `1 − ΣR/Z` in the sink's backward row.
    pub fn slack(&self) -> usize {
        self.n_states() + 1
    }

    pub fn n_nodes(&self) -> usize {
        self.n_states() + 2
    }

    /// Successor nodes of `s`, the sink last when `s` is terminal.
    pub fn actions(&self, s: usize) -> Vec<usize> {
        let mut a = self.children[s].clone();
        if self.terminal[s] {
            a.push(self.sink());
        }
        a
    }

    pub fn parents(&self, s: usize) -> Vec<usize> {
        (0..self.n_states()).filter(|&u| self.children[u].contains(&s)).collect()
    }

    pub fn total_reward(&self) -> f64 {
        (0..self.n_states()).filter(|&s| self.terminal[s]).map(|s| self.reward[s]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        if n == 0 || self.terminal.len() != n || self.reward.len() != n {
            return invalid("children, terminal and reward must have one entry per state");
        }
        for (s, ch) in self.children.iter().enumerate() {
            if ch.iter().any(|&c| c >= n || c <= s) {
                return invalid(format!("state {s} has a child out of topological order"));
            }
            if ch.is_empty() && !self.terminal[s] {
                return invalid(format!("state {s} cannot reach the sink"));
            }
        }
        for s in 1..n {
            if self.parents(s).is_empty() {
                return invalid(format!("state {s} is unreachable"));
            }
        }
        if (0..n).any(|s| self.terminal[s] && !(self.reward[s] > 0.0 && self.reward[s].is_finite())) {
            return invalid("terminal rewards must be positive");
        }
        Ok(())
    }

    pub fn trajectories(&self) -> Vec<Trajectory> {
        fn walk(dag: &TinyDag, path: &mut Vec<usize>, out: &mut Vec<Trajectory>) {
            let s = *path.last().unwrap();
            if dag.terminal[s] {
                out.push(Trajectory { states: path.clone() });
            }
            for &c in &dag.children[s] {
                path.push(c);
                walk(dag, path, out);
                path.pop();
            }
        }
        let mut out = Vec::new();
        walk(self, &mut vec![0], &mut out);
        out
    }

    /// Three levels below the source: two or three states per level, every
    /// deepest state terminal, shallower ones terminal with probability ½.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        loop {
            let l1 = rng.random_range(2..=3);
            let l2 = rng.random_range(2..=3);
            let n = 1 + l1 + l2;
            let mut children = vec![Vec::new(); n];
            children[0] = (1..=l1).collect();
            let second: Vec<usize> = (1 + l1..n).collect();
            for s in 1..=l1 {
                children[s] = second.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
            }
            let mut terminal: Vec<bool> = (0..n).map(|s| s > l1 || rng.random_bool(0.5)).collect();
            terminal[0] = false;
            for s in 1..=l1 {
                if children[s].is_empty() {
                    terminal[s] = true;
                }
            }
            let reward = (0..n).map(|s| if terminal[s] { rng.random_range(0.2..2.0) } else { 0.0 }).collect();
            let dag = TinyDag { children, terminal, reward };
            if dag.validate().is_ok() && dag.trajectories().len() <= MAX_TRAJECTORIES {
                return dag;
            }
        }
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

impl FlowModel {
    pub fn validate(&self, dag: &TinyDag) -> Result<()> {
        if self.forward_logits.len() != dag.n_states() {
            return invalid("one forward logit row per state");
        }
        for s in 0..dag.n_states() {
            let row = &self.forward_logits[s];
            if row.len() != dag.actions(s).len() || row.iter().any(|l| !l.is_finite()) {
                return invalid(format!("forward logits of state {s} malformed"));
            }
        }
        if !self.log_z.is_finite() || self.log_z < dag.total_reward().ln() - 1e-12 {
            return invalid("log Z must be finite and at least log ΣR");
        }
        Ok(())
    }

    pub fn random<R: Rng>(rng: &mut R, dag: &TinyDag) -> Self {
        FlowModel {
            forward_logits: (0..dag.n_states()).map(|s| dag.actions(s).iter().map(|_| rng.random_range(-1.5..1.5)).collect()).collect(),
            log_z: dag.total_reward().ln() + rng.random_range(0.0..0.5),
        }
    }

    /// The forward policy that balances every trajectory under uniform `P_B`
    /// with `Z = ΣR`.
    pub fn balanced(dag: &TinyDag) -> Self {
        let n = dag.n_states();
        let mut flow = vec![0.0; n];
        for s in (0..n).rev() {
            let mut f = if dag.terminal[s] { dag.reward[s] } else { 0.0 };
            for &c in &dag.children[s] {
                f += flow[c] / dag.parents(c).len() as f64;
            }
            flow[s] = f;
        }
        let forward_logits = (0..n)
            .map(|s| {
                dag.actions(s)
                    .iter()
                    .map(|&c| if c == dag.sink() { dag.reward[s].ln() } else { (flow[c] / dag.parents(c).len() as f64).ln() })
                    .collect()
            })
            .collect();
        FlowModel { forward_logits, log_z: dag.total_reward().ln() }
    }

    pub fn log_pf(&self, dag: &TinyDag, s: usize, next: usize) -> f64 {
        let i = dag.actions(s).iter().position(|&c| c == next).expect("not a forward move");
        log_softmax(&self.forward_logits[s])[i]
    }
}

/// `(log P_F(τ), log P_B(τ|x) + log R(x) − log Z)` with `P_B` uniform over parents.
pub fn trajectory_logs(dag: &TinyDag, model: &FlowModel, tau: &Trajectory) -> (f64, f64) {
    let x = tau.terminal();
    let mut a = model.log_pf(dag, x, dag.sink());
    let mut b = dag.reward[x].ln() - model.log_z;
    for w in tau.states.windows(2) {
        a += model.log_pf(dag, w[0], w[1]);
        b -= (dag.parents(w[1]).len() as f64).ln();
    }
    (a, b)
}

/// `Σ_τ Q(τ) (a − b)² / |τ|` and the unnormalized `Σ_τ Q(τ) (a − b)²`.
pub fn mod_tb_loss(dag: &TinyDag, model: &FlowModel, q: &[f64]) -> (f64, f64) {
    let mut modtb = 0.0;
    let mut tb = 0.0;
    for (tau, w) in dag.trajectories().iter().zip(q) {
        let (a, b) = trajectory_logs(dag, model, tau);
        modtb += w * (a - b).powi(2) / tau.len() as f64;
        tb += w * (a - b).powi(2);
    }
    (modtb, tb)
}

/// `∇ModTB` with respect to the forward logits, flattened row by row.
pub fn mod_tb_gradient(dag: &TinyDag, model: &FlowModel, q: &[f64]) -> Vec<Vec<f64>> {
    let mut g: Vec<Vec<f64>> = model.forward_logits.iter().map(|r| vec![0.0; r.len()]).collect();
    for (tau, w) in dag.trajectories().iter().zip(q) {
        let (a, b) = trajectory_logs(dag, model, tau);
        let coef = 2.0 * w * (a - b) / tau.len() as f64;
        let mut moves: Vec<(usize, usize)> = tau.states.windows(2).map(|p| (p[0], p[1])).collect();
        moves.push((tau.terminal(), dag.sink()));
        for (s, next) in moves {
            let p: Vec<f64> = log_softmax(&model.forward_logits[s]).iter().map(|l| l.exp()).collect();
            let k = dag.actions(s).iter().position(|&c| c == next).unwrap();
            for (j, gj) in g[s].iter_mut().enumerate() {
                *gj += coef * (if j == k { 1.0 } else { 0.0 } - p[j]);
            }
        }
    }
    g
}

/// The PDG with arcs `Q`, `unif`, `select` (all hard), `P_F` and `P_B`, and
/// the centered surprisal focus `β_F(τ) = b − a`, `β_B(τ) = a − b` with
/// control of `P_F` only.
pub fn gfn_pdg(dag: &TinyDag, model: &FlowModel, q: &[f64]) -> Result<(ParametricPDG, Focus)> {
    dag.validate()?;
    model.validate(dag)?;
    let trajs = dag.trajectories();
    if trajs.len() > MAX_TRAJECTORIES {
        return invalid(format!("{} trajectories exceed the limit of {MAX_TRAJECTORIES}", trajs.len()));
    }
    if q.len() != trajs.len() || (q.iter().sum::<f64>() - 1.0).abs() > 1e-9 || q.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return invalid("Q must be a distribution over the enumerated trajectories");
    }
    if let Some(t) = q.iter().position(|w| *w == 0.0) {
        return invalid(format!("trajectory {t} has zero probability under Q"));
    }
    let nt = trajs.len();
    let max_len = trajs.iter().map(Trajectory::len).max().unwrap();
    let nn = dag.n_nodes();

    let mut pdg = ParametricPDG::new();
    let tv = pdg.add_variable("T", nt)?;
    let iv = pdg.add_variable("I", max_len)?;
    let sv = pdg.add_variable("S", nn)?;
    let spv = pdg.add_variable("S'", nn)?;

    pdg.add_arc(Hyperarc::new("Q", vec![], vec![tv], Cpd::constant(q.to_vec())))?;
    let mut unif = vec![0.0; nt * max_len];
    for (t, tau) in trajs.iter().enumerate() {
        unif[t * max_len..t * max_len + tau.len()].iter_mut().for_each(|p| *p = 1.0 / tau.len() as f64);
    }
    pdg.add_arc(Hyperarc::new("unif", vec![tv], vec![iv], Cpd::constant(unif)))?;
    let mut select = vec![0.0; nt * max_len * nn * nn];
    for (t, tau) in trajs.iter().enumerate() {
        for i in 0..max_len {
            let (s, next) = if i < tau.len() {
                (tau.states[i], tau.states.get(i + 1).copied().unwrap_or(dag.sink()))
            } else {
                (0, 0)
            };
            select[((t * max_len + i) * nn + s) * nn + next] = 1.0;
        }
    }
    pdg.add_arc(Hyperarc::new("select", vec![tv, iv], vec![sv, spv], Cpd::constant(select)))?;

    let mut logits = vec![f64::NEG_INFINITY; nn * nn];
    for s in 0..nn {
        if s < dag.n_states() {
            for (c, l) in dag.actions(s).iter().zip(&model.forward_logits[s]) {
                logits[s * nn + c] = *l;
            }
        } else {
            logits[s * nn + s] = 0.0;
        }
    }
    let row_map: Vec<usize> = (0..nt * nn).map(|ts| ts % nn).collect();
    pdg.add_arc(Hyperarc::new("P_F", vec![tv, sv], vec![spv], Cpd::learnable_tied_logits(logits, row_map.clone())))?;

    let mut backward = vec![0.0; nn * nn];
    for s in 1..dag.n_states() {
        let parents = dag.parents(s);
        parents.iter().for_each(|&p| backward[s * nn + p] = 1.0 / parents.len() as f64);
    }
    backward[0] = 1.0;
    let z = model.log_z.exp();
    let sink = dag.sink();
    let mut used = 0.0;
    for x in (0..dag.n_states()).filter(|&x| dag.terminal[x]) {
        backward[sink * nn + x] = dag.reward[x] / z;
        used += dag.reward[x] / z;
    }
    backward[sink * nn + dag.slack()] = (1.0 - used).max(0.0);
    backward[dag.slack() * nn + dag.slack()] = 1.0;
    pdg.add_arc(Hyperarc::new("P_B", vec![tv, spv], vec![sv], Cpd::constant_tied(backward, row_map)))?;

    let mut focus = Focus::from_beta(vec![f64::INFINITY, f64::INFINITY, f64::INFINITY, 1.0, 1.0])
        .with_chi(vec![0.0, 0.0, 0.0, 1.0, 0.0]);
    let mut beta_f = vec![0.0; nt * nn];
    let mut beta_b = vec![0.0; nt * nn];
    for (t, tau) in trajs.iter().enumerate() {
        let (a, b) = trajectory_logs(dag, model, tau);
        beta_f[t * nn..(t + 1) * nn].iter_mut().for_each(|v| *v = b - a);
        beta_b[t * nn..(t + 1) * nn].iter_mut().for_each(|v| *v = a - b);
    }
    focus.beta_rows.insert(3, beta_f);
    focus.beta_rows.insert(4, beta_b);
    Ok((pdg, focus))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else {
        dot / (na * nb)
    }
}

pub fn gfn_identity_check(dag: &TinyDag, model: &FlowModel, q: &[f64]) -> Result<GfnCheck> {
    let (pdg, focus) = gfn_pdg(dag, model, q)?;
    let r = solve_inconsistency(&pdg, &focus, &InnerSolverConfig::default())?;
    let (mod_tb, tb) = mod_tb_loss(dag, model, q);

    let nn = dag.n_nodes();
    let env = envelope_grad(&pdg, &focus, &r.mu_star)?.swap_remove(3);
    let mut numeric_grad = Vec::new();
    let mut analytic_grad = Vec::new();
    for (s, row) in mod_tb_gradient(dag, model, q).into_iter().enumerate() {
        for (c, g) in dag.actions(s).into_iter().zip(row) {
            numeric_grad.push(env[s * nn + c]);
            analytic_grad.push(g);
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let grad_ratio = if norm(&numeric_grad) > 0.0 { norm(&analytic_grad) / norm(&numeric_grad) } else { f64::NAN };
    Ok(GfnCheck { numeric: r.value, mod_tb, tb, grad_cosine: cosine(&numeric_grad, &analytic_grad), grad_ratio })
}

/// Trajectory weights bounded away from zero.
pub fn random_q<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedTree;

    #[test]
    fn single_step_trajectory() {
        let dag = TinyDag { children: vec![vec![]], terminal: vec![true], reward: vec![1.0] };
        let model = FlowModel { forward_logits: vec![vec![0.0]], log_z: 2f64.ln() };
        let c = gfn_identity_check(&dag, &model, &[1.0]).unwrap();
        let want = 2f64.ln().powi(2);
        assert!((c.mod_tb - want).abs() < 1e-15);
        assert!((c.numeric - want).abs() < 1e-10, "{c:?}");
    }

    #[test]
    fn balanced_flows_vanish() {
        let mut rng = SeedTree::new(4).rng("gfn");
        let dag = TinyDag::random(&mut rng);
        let model = FlowModel::balanced(&dag);
        let q = random_q(&mut rng, dag.trajectories().len());
        let c = gfn_identity_check(&dag, &model, &q).unwrap();
        assert!(c.mod_tb < 1e-24 && c.numeric.abs() < 1e-10, "{c:?}");
    }

    #[test]
    fn random_dags_match_mod_tb() {
        let mut rng = SeedTree::new(8).rng("gfn");
        for _ in 0..5 {
            let dag = TinyDag::random(&mut rng);
            let model = FlowModel::random(&mut rng, &dag);
            let q = random_q(&mut rng, dag.trajectories().len());
            let c = gfn_identity_check(&dag, &model, &q).unwrap();
            assert!((c.numeric - c.mod_tb).abs() < 1e-10, "{c:?}");
            assert!(c.grad_cosine > 1.0 - 1e-8 && (c.grad_ratio - 2.0).abs() < 1e-8, "{c:?}");
        }
    }

    #[test]
    fn zero_weight_trajectory_rejected() {
        let dag = TinyDag { children: vec![vec![1], vec![]], terminal: vec![true, true], reward: vec![1.0, 1.0] };
        let model = FlowModel::balanced(&dag);
        assert!(gfn_identity_check(&dag, &model, &[1.0, 0.0]).is_err());
    }
}
