use rand::Rng;
use serde::{Deserialize, Serialize};

use super::env::{HyperGrid, RewardSpec};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackwardPolicy {
    UniformParents,
}

/// Forward logits per state (`n_states × (d+1)`), fixed backward policy, log Z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularGFN {
    pub grid: HyperGrid,
    pub logits: Vec<f64>,
    pub log_z: f64,
    pub backward: BackwardPolicy,
}

impl TabularGFN {
    pub fn new(grid: HyperGrid) -> Self {
        TabularGFN { grid, logits: vec![0.0; grid.n_states() * grid.n_actions()], log_z: 0.0, backward: BackwardPolicy::UniformParents }
    }

    pub fn state_logits(&self, s: usize) -> &[f64] {
        let k = self.grid.n_actions();
        &self.logits[s * k..(s + 1) * k]
    }

    /// Masked softmax over the valid actions of `s`.
    pub fn forward_probs(&self, s: usize) -> Vec<f64> {
        let valid = self.grid.valid_actions(s);
        let l = self.state_logits(s);
        let m = l.iter().zip(&valid).filter(|(_, v)| **v).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = l.iter().zip(&valid).map(|(x, v)| if *v { (x - m).exp() } else { 0.0 }).collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        p
    }

    pub fn log_pb_step(&self, next: usize) -> f64 {
        match self.backward {
            BackwardPolicy::UniformParents => -(self.grid.n_parents(next) as f64).ln(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Visited states, starting at the origin and ending at the terminal state.
    pub states: Vec<usize>,
    /// One action per transition; the last is always terminate.
    pub actions: Vec<usize>,
    pub log_pf: f64,
    pub log_pb: f64,
    pub log_r: f64,
}

impl Trajectory {
    pub fn terminal(&self) -> usize {
        *self.states.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `log P_F(τ) − log R(x) − log P_B(τ|x)`, without log Z.
    pub fn score(&self) -> f64 {
        self.log_pf - self.log_r - self.log_pb
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBatch {
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.trajectories.iter().map(Trajectory::score).collect()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.len() as f64).collect()
    }

    /// Recomputes log P_F and log P_B under `gfn`.
    pub fn rescore(&mut self, gfn: &TabularGFN) {
        for t in &mut self.trajectories {
            let (pf, pb) = trajectory_log_prob(gfn, &t.states, &t.actions);
            t.log_pf = pf;
            t.log_pb = pb;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingPolicy {
    OnPolicy,
    EpsilonUniform { epsilon: f64 },
}

pub fn trajectory_log_prob(gfn: &TabularGFN, states: &[usize], actions: &[usize]) -> (f64, f64) {
    let mut pf = 0.0;
    let mut pb = 0.0;
    for (i, &a) in actions.iter().enumerate() {
        pf += gfn.forward_probs(states[i])[a].ln();
        if a != gfn.grid.terminate() {
            pb += gfn.log_pb_step(states[i + 1]);
        }
    }
    (pf, pb)
}

fn finish(gfn: &TabularGFN, spec: &RewardSpec, states: Vec<usize>, actions: Vec<usize>) -> Trajectory {
    let (log_pf, log_pb) = trajectory_log_prob(gfn, &states, &actions);
    let log_r = spec.log_reward(&gfn.grid, *states.last().unwrap());
    Trajectory { states, actions, log_pf, log_pb, log_r }
}

pub fn sample_trajectories<R: Rng>(
    gfn: &TabularGFN,
    spec: &RewardSpec,
    m: usize,
    rng: &mut R,
    policy: SamplingPolicy,
) -> Result<TrajectoryBatch> {
    if m == 0 {
        return invalid("batch size must be at least 1");
    }
    if let SamplingPolicy::EpsilonUniform { epsilon } = policy {
        if !(0.0..=1.0).contains(&epsilon) {
            return invalid("epsilon must lie in [0, 1]");
        }
    }
    let grid = gfn.grid;
    let mut trajectories = Vec::with_capacity(m);
    for _ in 0..m {
        let mut s = 0;
        let mut states = vec![0];
        let mut actions = Vec::new();
        loop {
            let valid = grid.valid_actions(s);
            let mut p = gfn.forward_probs(s);
            if let SamplingPolicy::EpsilonUniform { epsilon } = policy {
                let k = valid.iter().filter(|v| **v).count() as f64;
                for (x, v) in p.iter_mut().zip(&valid) {
                    *x = (1.0 - epsilon) * *x + if *v { epsilon / k } else { 0.0 };
                }
            }
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut a = grid.terminate();
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc && valid[i] {
                    a = i;
                    break;
                }
            }
            actions.push(a);
            if a == grid.terminate() {
                break;
            }
            s += grid.stride(a);
            states.push(s);
        }
        trajectories.push(finish(gfn, spec, states, actions));
    }
    Ok(TrajectoryBatch { trajectories })
}

/// Every complete trajectory of the grid, in depth-first order.
pub fn enumerate_trajectories(gfn: &TabularGFN, spec: &RewardSpec, limit: usize) -> Result<TrajectoryBatch> {
    let grid = gfn.grid;
    let mut out = Vec::new();
    let mut stack = vec![(vec![0usize], Vec::<usize>::new())];
    while let Some((states, actions)) = stack.pop() {
        let s = *states.last().unwrap();
        let valid = grid.valid_actions(s);
        for a in (0..grid.n_actions()).rev().filter(|&a| valid[a]) {
            let mut acts = actions.clone();
            acts.push(a);
            if a == grid.terminate() {
                if out.len() == limit {
                    return invalid(format!("grid has more than {limit} trajectories"));
                }
                out.push(finish(gfn, spec, states.clone(), acts));
            } else {
                let mut st = states.clone();
                st.push(s + grid.stride(a));
                stack.push((st, acts));
            }
        }
    }
    Ok(TrajectoryBatch { trajectories: out })
}

/// Terminal distribution by pushing reach probabilities through P_F in index order.
pub fn exact_terminal_distribution(gfn: &TabularGFN) -> Result<Vec<f64>> {
    let grid = gfn.grid;
    if grid.n_states() > 1_000_000 {
        return invalid("exact evaluation needs at most 10^6 states");
    }
    let mut reach = vec![0.0; grid.n_states()];
    reach[0] = 1.0;
    let mut terminal = vec![0.0; grid.n_states()];
    for s in 0..grid.n_states() {
        if reach[s] == 0.0 {
            continue;
        }
        let p = gfn.forward_probs(s);
        for a in 0..grid.d {
            if p[a] > 0.0 {
                reach[s + grid.stride(a)] += reach[s] * p[a];
            }
        }
        terminal[s] = reach[s] * p[grid.terminate()];
    }
    Ok(terminal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gflownet::env::RewardVariant;
    use crate::seed::SeedTree;

    #[test]
    fn line_grid_has_two_trajectories() {
        let g = HyperGrid::new(1, 2).unwrap();
        let gfn = TabularGFN::new(g);
        let spec = RewardSpec::new(RewardVariant::Original);
        let all = enumerate_trajectories(&gfn, &spec, 10).unwrap();
        assert_eq!(all.len(), 2);
        let p = exact_terminal_distribution(&gfn).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn deterministic_policy_gives_identical_batches() {
        let g = HyperGrid::new(2, 4).unwrap();
        let mut gfn = TabularGFN::new(g);
        for s in 0..g.n_states() {
            gfn.logits[s * 3 + 2] = if s == g.index(&[1, 2]) { 1e3 } else { -1e3 };
            gfn.logits[s * 3] = 1e2;
            gfn.logits[s * 3 + 1] = if g.coords(s)[0] == 1 { 2e2 } else { 0.0 };
        }
        let spec = RewardSpec::new(RewardVariant::Original);
        let mut rng = SeedTree::new(0).rng("s");
        let b = sample_trajectories(&gfn, &spec, 5, &mut rng, SamplingPolicy::OnPolicy).unwrap();
        assert!(b.trajectories.iter().all(|t| t.states == b.trajectories[0].states));
        assert_eq!(b.trajectories[0].terminal(), g.index(&[1, 2]));
        let p = exact_terminal_distribution(&gfn).unwrap();
        assert!((p[g.index(&[1, 2])] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trajectory_probabilities_sum_to_one() {
        let g = HyperGrid::new(2, 3).unwrap();
        let mut gfn = TabularGFN::new(g);
        let mut rng = SeedTree::new(4).rng("l");
        gfn.logits.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        let spec = RewardSpec::new(RewardVariant::Original);
        let all = enumerate_trajectories(&gfn, &spec, 1000).unwrap();
        let total: f64 = all.trajectories.iter().map(|t| t.log_pf.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let p = exact_terminal_distribution(&gfn).unwrap();
        for x in 0..g.n_states() {
            let via: f64 = all.trajectories.iter().filter(|t| t.terminal() == x).map(|t| t.log_pf.exp()).sum();
            assert!((via - p[x]).abs() < 1e-12);
        }
        // P_B is a distribution over the trajectories ending in each state
        for x in 0..g.n_states() {
            let pb: f64 = all.trajectories.iter().filter(|t| t.terminal() == x).map(|t| t.log_pb.exp()).sum();
            assert!((pb - 1.0).abs() < 1e-12);
        }
    }
}
