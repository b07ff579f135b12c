use super::*;
use crate::pdg::{Cpd, Hyperarc, Variable};

fn two_beliefs() -> ParametricPDG {
    let mut pdg = ParametricPDG::new();
    let x = pdg.add_variable("X", 2).unwrap();
    pdg.add_arc(Hyperarc::new("p1", vec![], vec![x], Cpd::constant(vec![0.9, 0.1]))).unwrap();
    pdg.add_arc(Hyperarc::new("p2", vec![], vec![x], Cpd::constant(vec![0.1, 0.9]))).unwrap();
    pdg
}

#[test]
fn oinc_hand_values() {
    let pdg = two_beliefs();
    let half = JointTable::new(vec![0], vec![2], vec![0.5, 0.5]).unwrap();
    assert!((oinc(&pdg, &half, &[1.0, 1.0]).unwrap() - 1.021651).abs() < 1e-6);
    let skew = JointTable::new(vec![0], vec![2], vec![0.9, 0.1]).unwrap();
    assert!((oinc(&pdg, &skew, &[1.0, 1.0]).unwrap() - 1.757780).abs() < 1e-6);
}

#[test]
fn sdef_hand_values() {
    let mut pdg = ParametricPDG::new();
    let x = pdg.add_variable("X", 2).unwrap();
    let y = pdg.add_variable("Y", 2).unwrap();
    pdg.add_arc(Hyperarc::new("x", vec![], vec![x], Cpd::constant(vec![0.5, 0.5]))).unwrap();
    pdg.add_arc(Hyperarc::new("y", vec![], vec![y], Cpd::constant(vec![0.5, 0.5]))).unwrap();
    let corr = JointTable::new(vec![0, 1], vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
    assert!((sdef(&pdg, &corr, &[1.0, 1.0]).unwrap() - 2f64.ln()).abs() < 1e-12);

    let empty = ParametricPDG::from_parts(vec![Variable { id: "X".into(), size: 2 }], vec![]).unwrap();
    let u = JointTable::uniform(vec![0], vec![2]);
    assert!((sdef(&empty, &u, &[]).unwrap() + 2f64.ln()).abs() < 1e-12);

    let mut bn = ParametricPDG::new();
    let x = bn.add_variable("X", 2).unwrap();
    let y = bn.add_variable("Y", 2).unwrap();
    bn.add_arc(Hyperarc::new("x", vec![], vec![x], Cpd::constant(vec![0.5, 0.5]))).unwrap();
    bn.add_arc(Hyperarc::new("xy", vec![x], vec![y], Cpd::constant(vec![0.5, 0.5, 0.5, 0.5]))).unwrap();
    let ind = JointTable::uniform(vec![0, 1], vec![2, 2]);
    assert!(sdef(&bn, &ind, &[1.0, 1.0]).unwrap().abs() < 1e-12);
}

#[test]
fn two_beliefs_meet_at_geometric_mean() {
    let pdg = two_beliefs();
    let r = solve_inconsistency(&pdg, &Focus::uniform(2), &InnerSolverConfig::precise()).unwrap();
    assert!(r.converged);
    assert!((r.value - 1.0216512475319814).abs() < 1e-9, "{}", r.value);
    assert!((r.mu_star.probs[0] - 0.5).abs() < 1e-9);
    let direct = scoring_function(&pdg, &r.mu_star, &Focus::uniform(2)).unwrap();
    assert!((direct - r.value).abs() < 1e-9);
}

#[test]
fn consistent_cpd_has_zero_inconsistency() {
    let mut pdg = ParametricPDG::new();
    let x = pdg.add_variable("X", 3).unwrap();
    let y = pdg.add_variable("Y", 2).unwrap();
    pdg.add_arc(Hyperarc::new("p", vec![], vec![x], Cpd::constant(vec![0.2, 0.3, 0.5]))).unwrap();
    pdg.add_arc(Hyperarc::new("q", vec![x], vec![y], Cpd::constant(vec![0.1, 0.9, 0.6, 0.4, 0.5, 0.5]))).unwrap();
    let r = solve_inconsistency(&pdg, &Focus::uniform(2), &InnerSolverConfig::precise()).unwrap();
    assert!(r.value.abs() < 1e-10);
    assert!((r.mu_star.probs[0] - 0.02).abs() < 1e-8);
}

#[test]
fn hard_arcs_restrict_the_family() {
    let mut pdg = two_beliefs();
    let mut f = Focus::uniform(2);
    f.beta[0] = f64::INFINITY;
    let r = solve_inconsistency(&pdg, &f, &InnerSolverConfig::default()).unwrap();
    let expected = 0.9 * (0.9f64 / 0.1).ln() + 0.1 * (0.1f64 / 0.9).ln();
    assert!((r.value - expected).abs() < 1e-12);
    f.beta[1] = f64::INFINITY;
    let x = pdg.var_index("X").unwrap();
    assert!(matches!(solve_inconsistency(&pdg, &f, &InnerSolverConfig::default()), Err(Error::Unsupported(_))));
    pdg.add_arc(Hyperarc::new("z", vec![], vec![x], Cpd::constant(vec![1.0, 0.0]))).unwrap();
    let mut g = Focus::uniform(3);
    g.beta = vec![0.0, 0.0, f64::INFINITY];
    g.beta[1] = 1.0;
    let r = solve_inconsistency(&pdg, &g, &InnerSolverConfig::default()).unwrap();
    assert!((r.value - 0.1f64.recip().ln()).abs() < 1e-12);
}

#[test]
fn zero_support_conflict_is_infeasible() {
    let mut pdg = ParametricPDG::new();
    let x = pdg.add_variable("X", 2).unwrap();
    pdg.add_arc(Hyperarc::new("a", vec![], vec![x], Cpd::constant(vec![1.0, 0.0]))).unwrap();
    pdg.add_arc(Hyperarc::new("b", vec![], vec![x], Cpd::constant(vec![0.0, 1.0]))).unwrap();
    let err = solve_inconsistency(&pdg, &Focus::uniform(2), &InnerSolverConfig::default());
    assert!(matches!(err, Err(Error::Infeasible(_))));
}

#[test]
fn nonconvex_weighting_is_rejected() {
    let pdg = two_beliefs();
    let f = Focus::from_beta(vec![0.5, 1.0]).with_gamma(1.0);
    assert!(matches!(solve_inconsistency(&pdg, &f, &InnerSolverConfig::default()), Err(Error::NonConvex { .. })));
}

#[test]
fn pruning_drops_unattended_variables() {
    let mut pdg = two_beliefs();
    let y = pdg.add_variable("Y", 3).unwrap();
    pdg.add_arc(Hyperarc::new("py", vec![], vec![y], Cpd::constant(vec![0.2, 0.3, 0.5]))).unwrap();
    let f = Focus::from_beta(vec![1.0, 1.0, 0.0]);
    let r = solve_inconsistency(&pdg, &f, &InnerSolverConfig::precise()).unwrap();
    assert_eq!(r.mu_star.vars, vec![0]);
    let g = f.clone().with_gamma(1.0).with_alpha(vec![1.0, 1.0, 0.0]);
    let r = solve_inconsistency(&pdg, &g, &InnerSolverConfig::precise()).unwrap();
    assert_eq!(r.mu_star.vars, vec![0, 1]);
    let direct = scoring_function(&pdg, &r.mu_star, &g).unwrap();
    assert!((direct - r.value).abs() < 1e-9);
}

#[test]
fn envelope_gradient_matches_finite_differences() {
    let mut pdg = ParametricPDG::new();
    let x = pdg.add_variable("X", 3).unwrap();
    pdg.add_arc(Hyperarc::new("p", vec![], vec![x], Cpd::constant(vec![0.2, 0.5, 0.3]))).unwrap();
    pdg.add_arc(Hyperarc::new("q", vec![], vec![x], Cpd::learnable_logits(vec![0.4, -0.1, 0.3]))).unwrap();
    let f = Focus::uniform(2);
    let cfg = InnerSolverConfig::precise();
    let r = solve_inconsistency(&pdg, &f, &cfg).unwrap();
    let g = envelope_grad(&pdg, &f, &r.mu_star).unwrap();
    assert!(g[0].is_empty());
    let h = 1e-5;
    for i in 0..3 {
        let mut up = pdg.clone();
        let mut th = up.params(1).to_vec();
        th[i] += h;
        up.set_params(1, th.clone()).unwrap();
        let vu = solve_inconsistency(&up, &f, &cfg).unwrap().value;
        th[i] -= 2.0 * h;
        up.set_params(1, th).unwrap();
        let vd = solve_inconsistency(&up, &f, &cfg).unwrap().value;
        let fd = (vu - vd) / (2.0 * h);
        assert!((fd - g[1][i]).abs() <= 1e-3 * fd.abs().max(1e-6), "{fd} vs {}", g[1][i]);
    }
}

#[test]
fn hard_learnable_arc_gradient_matches_finite_differences() {
    let mut pdg = ParametricPDG::new();
    let x = pdg.add_variable("X", 2).unwrap();
    let z = pdg.add_variable("Z", 3).unwrap();
    pdg.add_arc(Hyperarc::new("d", vec![], vec![x], Cpd::constant(vec![0.3, 0.7]))).unwrap();
    pdg.add_arc(Hyperarc::new("q", vec![x], vec![z], Cpd::learnable_logits(vec![0.1, 0.2, -0.3, 0.5, 0.0, -0.4]))).unwrap();
    pdg.add_arc(Hyperarc::new("pz", vec![], vec![z], Cpd::constant(vec![0.5, 0.3, 0.2]))).unwrap();
    pdg.add_arc(Hyperarc::new("px", vec![z], vec![x], Cpd::constant(vec![0.9, 0.1, 0.4, 0.6, 0.2, 0.8]))).unwrap();
    let f = Focus::from_beta(vec![f64::INFINITY, f64::INFINITY, 1.0, 1.0]);
    let cfg = InnerSolverConfig::precise();
    let r = solve_inconsistency(&pdg, &f, &cfg).unwrap();
    let g = envelope_grad(&pdg, &f, &r.mu_star).unwrap();
    let h = 1e-5;
    for i in 0..6 {
        let mut up = pdg.clone();
        let mut th = up.params(1).to_vec();
        th[i] += h;
        up.set_params(1, th.clone()).unwrap();
        let vu = solve_inconsistency(&up, &f, &cfg).unwrap().value;
        th[i] -= 2.0 * h;
        up.set_params(1, th).unwrap();
        let vd = solve_inconsistency(&up, &f, &cfg).unwrap().value;
        let fd = (vu - vd) / (2.0 * h);
        assert!((fd - g[1][i]).abs() <= 1e-6 + 1e-3 * fd.abs(), "param {i}: {fd} vs {}", g[1][i]);
    }
}

#[test]
fn negative_attention_with_zero_probability_is_unbounded() {
    let mut pdg = ParametricPDG::new();
    let x = pdg.add_variable("X", 2).unwrap();
    pdg.add_arc(Hyperarc::new("a", vec![], vec![x], Cpd::constant(vec![0.5, 0.5]))).unwrap();
    pdg.add_arc(Hyperarc::new("b", vec![], vec![x], Cpd::constant(vec![0.0, 1.0]))).unwrap();
    let f = Focus::from_beta(vec![1.0, -1.0]);
    assert!(matches!(solve_inconsistency(&pdg, &f, &InnerSolverConfig::default()), Err(Error::Unbounded(_))));
}
