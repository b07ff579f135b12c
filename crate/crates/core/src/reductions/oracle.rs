//! Reference computations written without the PDG machinery, used to check
//! the reductions and the inner solver.

use super::bp::{BpUpdate, FactorGraph, MessageState};

/// Mixed-radix digits of `idx`, first variable slowest.
fn digits(mut idx: usize, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    for (k, &n) in sizes.iter().enumerate().rev() {
        out[k] = idx % n;
        idx /= n;
    }
    out
}

fn flat(values: &[usize], sizes: &[usize]) -> usize {
    values.iter().zip(sizes).fold(0, |acc, (v, n)| acc * n + v)
}

fn normalize(v: &mut [f64]) {
    let z: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= z);
}

/// Textbook EM for a mixture with `k` components over `v` symbols, fed a
/// weighted list of observations. Returns `(prior, emission)` per iteration,
/// starting with the input.
pub fn textbook_em(observations: &[(usize, f64)], prior: &[f64], emission: &[f64], iters: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let k = prior.len();
    let v = emission.len() / k;
    let mut pi = prior.to_vec();
    let mut theta = emission.to_vec();
    let mut out = vec![(pi.clone(), theta.clone())];
    for _ in 0..iters {
        let mut n_z = vec![0.0; k];
        let mut n_zx = vec![0.0; k * v];
        for &(x, w) in observations {
            let logs: Vec<f64> = (0..k).map(|z| pi[z].ln() + theta[z * v + x].ln()).collect();
            let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            for z in 0..k {
                let r = (logs[z] - lse).exp();
                n_z[z] += w * r;
                n_zx[z * v + x] += w * r;
            }
        }
        let total: f64 = n_z.iter().sum();
        pi = n_z.iter().map(|n| n / total).collect();
        theta = (0..k * v).map(|i| n_zx[i] / n_z[i / v]).collect();
        out.push((pi.clone(), theta.clone()));
    }
    out
}

/// Exact variable marginals of `Pr ∝ Π φ_a` by enumeration.
pub fn brute_force_marginals(graph: &FactorGraph) -> Vec<Vec<f64>> {
    let n: usize = graph.sizes.iter().product();
    let mut marg: Vec<Vec<f64>> = graph.sizes.iter().map(|&s| vec![0.0; s]).collect();
    for idx in 0..n {
        let x = digits(idx, &graph.sizes);
        let w: f64 = graph
            .factors
            .iter()
            .map(|f| {
                let vals: Vec<usize> = f.scope.iter().map(|&v| x[v]).collect();
                let sizes: Vec<usize> = f.scope.iter().map(|&v| graph.sizes[v]).collect();
                f.table[flat(&vals, &sizes)]
            })
            .product();
        for (v, &xv) in x.iter().enumerate() {
            marg[v][xv] += w;
        }
    }
    marg.iter_mut().for_each(|m| normalize(m));
    marg
}

/// One sum-product update on normalized messages.
pub fn reference_update(graph: &FactorGraph, state: &MessageState, update: BpUpdate) -> MessageState {
    let mut next = state.clone();
    let edge_of = |a: usize, x: usize| state.edges.iter().position(|e| *e == (a, x)).expect("edge");
    match update {
        BpUpdate::VarToFactor { var, factor } => {
            let mut m = vec![1.0; graph.sizes[var]];
            for (e, &(b, x)) in state.edges.iter().enumerate() {
                if x == var && b != factor {
                    m.iter_mut().zip(&state.factor_to_var[e]).for_each(|(m, f)| *m *= f);
                }
            }
            normalize(&mut m);
            next.var_to_factor[edge_of(factor, var)] = m;
        }
        BpUpdate::FactorToVar { factor, var } => {
            let f = &graph.factors[factor];
            let sizes: Vec<usize> = f.scope.iter().map(|&v| graph.sizes[v]).collect();
            let pos = f.scope.iter().position(|&v| v == var).expect("var in scope");
            let mut m = vec![0.0; graph.sizes[var]];
            for (idx, phi) in f.table.iter().enumerate() {
                let vals = digits(idx, &sizes);
                let mut w = *phi;
                for (p, &y) in f.scope.iter().enumerate() {
                    if p != pos {
                        w *= state.var_to_factor[edge_of(factor, y)][vals[p]];
                    }
                }
                m[vals[pos]] += w;
            }
            normalize(&mut m);
            next.factor_to_var[edge_of(factor, var)] = m;
        }
        BpUpdate::Belief { var } => {
            let mut b = vec![1.0; graph.sizes[var]];
            for (e, &(_, x)) in state.edges.iter().enumerate() {
                if x == var {
                    b.iter_mut().zip(&state.factor_to_var[e]).for_each(|(b, f)| *b *= f);
                }
            }
            normalize(&mut b);
            next.beliefs[var] = b;
        }
    }
    next
}

/// `p(targets | sources)` over binary-or-larger variables, rows by source state.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleArc {
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub probs: Vec<f64>,
    pub beta: f64,
    pub alpha: f64,
}

/// `Σ_a [β_a D(μ(T,S) ‖ p μ(S)) + γ α_a H_μ(T|S)] − γ H(μ)` by direct summation.
pub fn scoring(sizes: &[usize], arcs: &[OracleArc], gamma: f64, mu: &[f64]) -> f64 {
    let mut total = 0.0;
    for a in arcs {
        let ss: Vec<usize> = a.sources.iter().map(|&v| sizes[v]).collect();
        let ts: Vec<usize> = a.targets.iter().map(|&v| sizes[v]).collect();
        let (ns, nt) = (ss.iter().product::<usize>(), ts.iter().product::<usize>());
        let mut m = vec![0.0; ns * nt];
        for (idx, p) in mu.iter().enumerate() {
            let x = digits(idx, sizes);
            let s = flat(&a.sources.iter().map(|&v| x[v]).collect::<Vec<_>>(), &ss);
            let t = flat(&a.targets.iter().map(|&v| x[v]).collect::<Vec<_>>(), &ts);
            m[s * nt + t] += p;
        }
        for s in 0..ns {
            let row = &m[s * nt..(s + 1) * nt];
            let ms: f64 = row.iter().sum();
            for t in 0..nt {
                if row[t] > 0.0 {
                    let cond = row[t] / ms;
                    total += a.beta * row[t] * (cond / a.probs[s * nt + t]).ln();
                    total -= gamma * a.alpha * row[t] * cond.ln();
                }
            }
        }
    }
    let h: f64 = mu.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
    total - gamma * h
}

/// Minimum of [`scoring`] over the lattice `{μ : μ ∈ (step·ℕ)^n, Σμ = 1}`.
/// A coarse lattice is enumerated first, then mass is moved between pairs of
/// cells in halving quanta down to `step`.
pub fn grid_inconsistency(sizes: &[usize], arcs: &[OracleArc], gamma: f64, step: f64) -> (f64, Vec<f64>) {
    let n: usize = sizes.iter().product();
    let total = (1.0 / step).round() as u64;
    let mut coarse = 8u64;
    while total % coarse != 0 && coarse > 1 {
        coarse -= 1;
    }
    let mut best = (f64::INFINITY, vec![1.0 / n as f64; n]);
    let mut counts = vec![0u64; n];
    fn compositions(k: usize, left: u64, counts: &mut Vec<u64>, f: &mut dyn FnMut(&[u64])) {
        if k + 1 == counts.len() {
            counts[k] = left;
            f(counts);
            return;
        }
        for c in 0..=left {
            counts[k] = c;
            compositions(k + 1, left - c, counts, f);
        }
    }
    compositions(0, coarse, &mut counts, &mut |c| {
        let mu: Vec<f64> = c.iter().map(|&x| x as f64 / coarse as f64).collect();
        let v = scoring(sizes, arcs, gamma, &mu);
        if v < best.0 {
            best = (v, mu);
        }
    });
    let mut units: Vec<u64> = best.1.iter().map(|p| (p * total as f64).round() as u64).collect();
    let mut value = best.0;
    let mut quantum = total / coarse;
    loop {
        let mut improved = false;
        for i in 0..n {
            for j in 0..n {
                if i == j || units[i] < quantum {
                    continue;
                }
                units[i] -= quantum;
                units[j] += quantum;
                let mu: Vec<f64> = units.iter().map(|&u| u as f64 / total as f64).collect();
                let v = scoring(sizes, arcs, gamma, &mu);
                if v < value - 1e-15 {
                    value = v;
                    improved = true;
                } else {
                    units[i] += quantum;
                    units[j] -= quantum;
                }
            }
        }
        if !improved {
            if quantum == 1 {
                break;
            }
            quantum = (quantum / 2).max(1);
        }
    }
    (value, units.iter().map(|&u| u as f64 / total as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_finds_two_belief_optimum() {
        let arcs = vec![
            OracleArc { sources: vec![], targets: vec![0], probs: vec![0.9, 0.1], beta: 1.0, alpha: 1.0 },
            OracleArc { sources: vec![], targets: vec![0], probs: vec![0.1, 0.9], beta: 1.0, alpha: 1.0 },
        ];
        let (v, mu) = grid_inconsistency(&[2], &arcs, 0.0, 0.01);
        assert!((v - 1.021651).abs() < 1e-5);
        assert!((mu[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn textbook_em_keeps_distributions() {
        let trace = textbook_em(&[(0, 0.5), (2, 0.5)], &[0.4, 0.6], &[0.2, 0.3, 0.5, 0.6, 0.3, 0.1], 3);
        for (pi, th) in trace {
            assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(th.chunks(3).all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        }
    }
}
