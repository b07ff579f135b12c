//! Sum-product message passing as LIR over a PDG holding the normalized
//! factors, every message, and every belief as unconditional arcs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::inconsistency::InnerSolverConfig;
use crate::lir::{lir_step, FullControl, LirState, OdeConfig};
use crate::pdg::{Cpd, Focus, Hyperarc, ParametricPDG};

/// Entries below this are raised to it.
pub const FACTOR_FLOOR: f64 = 1e-12;

/// A nonnegative table over `scope`, row-major with the first variable slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub scope: Vec<usize>,
    pub table: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorGraph {
    pub sizes: Vec<usize>,
    pub factors: Vec<Factor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BpUpdate {
    VarToFactor { var: usize, factor: usize },
    FactorToVar { factor: usize, var: usize },
    Belief { var: usize },
}

/// Normalized messages indexed like [`FactorGraph::edges`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageState {
    pub edges: Vec<(usize, usize)>,
    pub var_to_factor: Vec<Vec<f64>>,
    pub factor_to_var: Vec<Vec<f64>>,
    pub beliefs: Vec<Vec<f64>>,
}

impl FactorGraph {
    /// Validates shapes and applies [`FACTOR_FLOOR`].
    pub fn new(sizes: Vec<usize>, factors: Vec<Factor>) -> Result<Self> {
        let mut g = FactorGraph { sizes, factors };
        for f in &mut g.factors {
            f.table.iter_mut().for_each(|v| {
                if *v < FACTOR_FLOOR {
                    *v = FACTOR_FLOOR
                }
            });
        }
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.iter().any(|s| *s == 0) {
            return invalid("variables must have positive domain sizes");
        }
        for (a, f) in self.factors.iter().enumerate() {
            if f.scope.is_empty() || f.scope.iter().any(|&x| x >= self.sizes.len()) {
                return invalid(format!("factor {a} has an invalid scope"));
            }
            let mut s = f.scope.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != f.scope.len() {
                return invalid(format!("factor {a} repeats a variable"));
            }
            if f.table.len() != f.scope.iter().map(|&x| self.sizes[x]).product::<usize>() {
                return invalid(format!("factor {a} table does not match its scope"));
            }
            if f.table.iter().any(|v| !(v.is_finite() && *v >= FACTOR_FLOOR)) {
                return invalid(format!("factor {a} must be strictly positive and finite"));
            }
        }
        Ok(())
    }

    /// `(factor, var)` pairs, factors in order, scope order within a factor.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.factors.iter().enumerate().flat_map(|(a, f)| f.scope.iter().map(move |&x| (a, x))).collect()
    }

    pub fn edge(&self, factor: usize, var: usize) -> Option<usize> {
        self.edges().iter().position(|e| *e == (factor, var))
    }

    pub fn neighbors(&self, var: usize) -> Vec<usize> {
        (0..self.factors.len()).filter(|&a| self.factors[a].scope.contains(&var)).collect()
    }

    fn random_table<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(0.2..2.0)).collect()
    }

    /// Unary factors on every variable plus pairwise factors on `pairs`.
    pub fn random_pairwise<R: Rng>(rng: &mut R, sizes: Vec<usize>, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut factors: Vec<Factor> =
            sizes.iter().enumerate().map(|(x, &n)| Factor { scope: vec![x], table: Self::random_table(rng, n) }).collect();
        for &(i, j) in pairs {
            factors.push(Factor { scope: vec![i, j], table: Self::random_table(rng, sizes[i] * sizes[j]) });
        }
        FactorGraph::new(sizes, factors)
    }

    /// `X0 − X1 − X2` with domain sizes 2, 3, 2.
    pub fn random_chain<R: Rng>(rng: &mut R) -> Result<Self> {
        Self::random_pairwise(rng, vec![2, 3, 2], &[(0, 1), (1, 2)])
    }

    /// Four binary variables on a single cycle.
    pub fn random_cycle<R: Rng>(rng: &mut R) -> Result<Self> {
        Self::random_pairwise(rng, vec![2; 4], &[(0, 1), (1, 2), (2, 3), (3, 0)])
    }

    pub fn is_tree(&self) -> bool {
        let n = self.sizes.len() + self.factors.len();
        let e = self.edges().len();
        if e + 1 != n {
            return false;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        for (a, x) in self.edges() {
            let (ra, rx) = (find(&mut parent, self.sizes.len() + a), find(&mut parent, x));
            if ra == rx {
                return false;
            }
            parent[ra] = rx;
        }
        true
    }
}

impl MessageState {
    pub fn uniform(graph: &FactorGraph) -> Self {
        let edges = graph.edges();
        let unif = |n: usize| vec![1.0 / n as f64; n];
        MessageState {
            var_to_factor: edges.iter().map(|&(_, x)| unif(graph.sizes[x])).collect(),
            factor_to_var: edges.iter().map(|&(_, x)| unif(graph.sizes[x])).collect(),
            beliefs: graph.sizes.iter().map(|&n| unif(n)).collect(),
            edges,
        }
    }

    pub fn max_abs_diff(&self, other: &MessageState) -> f64 {
        let all = |s: &MessageState| {
            s.var_to_factor.iter().chain(&s.factor_to_var).chain(&s.beliefs).flatten().copied().collect::<Vec<f64>>()
        };
        all(self).iter().zip(all(other)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Every variable-to-factor message, then every factor-to-variable message,
/// `rounds` times, then every belief.
pub fn flooding_schedule(graph: &FactorGraph, rounds: usize) -> Vec<BpUpdate> {
    let edges = graph.edges();
    let mut s = Vec::new();
    for _ in 0..rounds {
        s.extend(edges.iter().map(|&(factor, var)| BpUpdate::VarToFactor { var, factor }));
        s.extend(edges.iter().map(|&(factor, var)| BpUpdate::FactorToVar { factor, var }));
    }
    s.extend((0..graph.sizes.len()).map(|var| BpUpdate::Belief { var }));
    s
}

/// `b_X ∝ Π_{a ∈ ∂X} m_{a→X}`.
pub fn beliefs_from_messages(graph: &FactorGraph, state: &MessageState) -> Vec<Vec<f64>> {
    (0..graph.sizes.len())
        .map(|x| {
            let mut b = vec![1.0; graph.sizes[x]];
            for (e, &(_, v)) in state.edges.iter().enumerate() {
                if v == x {
                    b.iter_mut().zip(&state.factor_to_var[e]).for_each(|(b, m)| *b *= m);
                }
            }
            let z: f64 = b.iter().sum();
            b.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Arc indices of the message PDG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageLayout {
    pub factor: Vec<usize>,
    pub var_to_factor: Vec<usize>,
    pub factor_to_var: Vec<usize>,
    pub belief: Vec<usize>,
}

/// Factors as `∅ → scope` arcs, messages and beliefs as learnable `∅ → X`
/// arcs. Copies `X^a` of a variable are identified with `X`.
pub fn message_pdg(graph: &FactorGraph) -> Result<(ParametricPDG, MessageLayout)> {
    graph.validate()?;
    let mut pdg = ParametricPDG::new();
    let vars: Vec<usize> =
        graph.sizes.iter().enumerate().map(|(x, &n)| pdg.add_variable(format!("X{x}"), n)).collect::<Result<_>>()?;
    let mut layout = MessageLayout { factor: vec![], var_to_factor: vec![], factor_to_var: vec![], belief: vec![] };
    for (a, f) in graph.factors.iter().enumerate() {
        let z: f64 = f.table.iter().sum();
        let cpd = Cpd::constant(f.table.iter().map(|v| v / z).collect());
        let scope = f.scope.iter().map(|&x| vars[x]).collect();
        layout.factor.push(pdg.add_arc(Hyperarc::new(format!("phi{a}"), vec![], scope, cpd))?);
    }
    for (a, x) in graph.edges() {
        let zeros = vec![0.0; graph.sizes[x]];
        layout.var_to_factor.push(pdg.add_arc(Hyperarc::new(format!("m_X{x}->f{a}"), vec![], vec![vars[x]], Cpd::learnable_logits(zeros.clone())))?);
        layout.factor_to_var.push(pdg.add_arc(Hyperarc::new(format!("m_f{a}->X{x}"), vec![], vec![vars[x]], Cpd::learnable_logits(zeros)))?);
    }
    for (x, &n) in graph.sizes.iter().enumerate() {
        layout.belief.push(pdg.add_arc(Hyperarc::new(format!("b_X{x}"), vec![], vec![vars[x]], Cpd::learnable_logits(vec![0.0; n])))?);
    }
    Ok((pdg, layout))
}

/// γ = 1; context arcs get α = β = 1, the controlled arc β = 1, α = 0, χ = ∞.
pub fn bp_focus(graph: &FactorGraph, layout: &MessageLayout, n_arcs: usize, update: BpUpdate) -> Result<Focus> {
    let edges = graph.edges();
    let edge = |a: usize, x: usize| graph.edge(a, x).ok_or_else(|| crate::Error::InvalidArgument(format!("factor {a} does not touch X{x}")));
    let (context, controlled): (Vec<usize>, usize) = match update {
        BpUpdate::VarToFactor { var, factor } => {
            let ctx = edges.iter().enumerate().filter(|(_, &(b, x))| x == var && b != factor).map(|(e, _)| layout.factor_to_var[e]).collect();
            (ctx, layout.var_to_factor[edge(factor, var)?])
        }
        BpUpdate::FactorToVar { factor, var } => {
            let mut ctx = vec![layout.factor[factor]];
            ctx.extend(edges.iter().enumerate().filter(|(_, &(b, y))| b == factor && y != var).map(|(e, _)| layout.var_to_factor[e]));
            (ctx, layout.factor_to_var[edge(factor, var)?])
        }
        BpUpdate::Belief { var } => {
            if var >= graph.sizes.len() {
                return invalid(format!("no variable X{var}"));
            }
            let ctx = edges.iter().enumerate().filter(|(_, &(_, x))| x == var).map(|(e, _)| layout.factor_to_var[e]).collect();
            (ctx, layout.belief[var])
        }
    };
    let mut focus = Focus::from_beta(vec![0.0; n_arcs]).with_alpha(vec![0.0; n_arcs]).with_chi(vec![0.0; n_arcs]).with_gamma(1.0);
    for a in context {
        focus.alpha[a] = 1.0;
        focus.beta[a] = 1.0;
    }
    focus.beta[controlled] = 1.0;
    focus.chi[controlled] = f64::INFINITY;
    Ok(focus)
}

fn read_state(graph: &FactorGraph, pdg: &ParametricPDG, layout: &MessageLayout) -> Result<MessageState> {
    Ok(MessageState {
        edges: graph.edges(),
        var_to_factor: layout.var_to_factor.iter().map(|&a| pdg.cpd_probs(a)).collect::<Result<_>>()?,
        factor_to_var: layout.factor_to_var.iter().map(|&a| pdg.cpd_probs(a)).collect::<Result<_>>()?,
        beliefs: layout.belief.iter().map(|&a| pdg.cpd_probs(a)).collect::<Result<_>>()?,
    })
}

/// Runs one LIR step per scheduled update from uniform messages and returns
/// the message state after each step.
pub fn bp_via_lir(graph: &FactorGraph, schedule: &[BpUpdate]) -> Result<Vec<MessageState>> {
    let (pdg, layout) = message_pdg(graph)?;
    let n_arcs = pdg.n_arcs();
    let mut state = LirState::new(pdg);
    let ode = OdeConfig { full_control: FullControl::Projection, full_control_tol: 1e-12, ..OdeConfig::default() };
    let inner = InnerSolverConfig::precise();
    let mut out = Vec::with_capacity(schedule.len());
    for &update in schedule {
        let focus = bp_focus(graph, &layout, n_arcs, update)?;
        lir_step(&mut state, &focus, &ode, &inner)?;
        out.push(read_state(graph, state.pdg(), &layout)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedTree;

    #[test]
    fn single_factor_message_is_the_factor() {
        let g = FactorGraph::new(vec![3], vec![Factor { scope: vec![0], table: vec![1.0, 2.0, 5.0] }]).unwrap();
        let sched = [BpUpdate::VarToFactor { var: 0, factor: 0 }, BpUpdate::FactorToVar { factor: 0, var: 0 }, BpUpdate::Belief { var: 0 }];
        let trace = bp_via_lir(&g, &sched).unwrap();
        let last = trace.last().unwrap();
        let want = [0.125, 0.25, 0.625];
        for ((m, b), w) in last.factor_to_var[0].iter().zip(&last.beliefs[0]).zip(want) {
            assert!((m - w).abs() < 1e-8 && (b - w).abs() < 1e-8);
        }
        assert!(last.var_to_factor[0].iter().all(|m| (m - 1.0 / 3.0).abs() < 1e-8));
    }

    #[test]
    fn uniform_messages_give_uniform_beliefs() {
        let g = FactorGraph::random_cycle(&mut SeedTree::new(1).rng("bp")).unwrap();
        let s = MessageState::uniform(&g);
        assert!(beliefs_from_messages(&g, &s).iter().flatten().all(|b| (b - 0.5).abs() < 1e-15));
    }

    #[test]
    fn floor_keeps_factors_positive() {
        let g = FactorGraph::new(vec![2], vec![Factor { scope: vec![0], table: vec![0.0, 1.0] }]).unwrap();
        assert_eq!(g.factors[0].table[0], FACTOR_FLOOR);
        assert!(g.is_tree());
        assert!(!FactorGraph::random_cycle(&mut SeedTree::new(2).rng("bp")).unwrap().is_tree());
    }
}
