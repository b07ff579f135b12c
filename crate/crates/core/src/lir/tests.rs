use super::*;
use crate::pdg::{Cpd, Hyperarc};

fn belief_pair(learn_p: bool) -> ParametricPDG {
    let mut pdg = ParametricPDG::new();
    let x = pdg.add_variable("X", 2).unwrap();
    let p = if learn_p { Cpd::learnable_probs(&[0.9, 0.1]) } else { Cpd::constant(vec![0.9, 0.1]) };
    pdg.add_arc(Hyperarc::new("p", vec![], vec![x], p)).unwrap();
    pdg.add_arc(Hyperarc::new("q", vec![], vec![x], Cpd::learnable_probs(&[0.1, 0.9]))).unwrap();
    pdg
}

#[test]
fn zero_control_changes_nothing() {
    let mut st = LirState::new(belief_pair(true));
    let f = Focus::uniform(2).with_chi(vec![0.0, 0.0]);
    let before = st.pdg().flat_params();
    let rec = lir_step(&mut st, &f, &OdeConfig::default(), &InnerSolverConfig::precise()).unwrap();
    assert_eq!(st.pdg().flat_params(), before);
    assert!((rec.value - rec.value_before).abs() < 1e-12);
}

#[test]
fn full_control_projects_onto_fixed_belief() {
    for method in [FullControl::Iterative, FullControl::Projection] {
        let mut st = LirState::new(belief_pair(false));
        let f = Focus::uniform(2).with_chi(vec![0.0, f64::INFINITY]);
        let ode = OdeConfig { full_control: method, ..OdeConfig::default() };
        let rec = lir_step(&mut st, &f, &ode, &InnerSolverConfig::precise()).unwrap();
        let q = st.pdg().cpd_probs(1).unwrap();
        assert!((q[0] - 0.9).abs() < 1e-6, "{method:?}: {q:?}");
        assert!(rec.value.abs() < 1e-10);
        let r = solve_inconsistency(st.pdg(), &f, &InnerSolverConfig::precise()).unwrap();
        let g = envelope_grad(st.pdg(), &f, &r.mu_star).unwrap();
        assert!(crate::optim::norm(&g[1]) < 1e-5);
    }
}

#[test]
fn mutual_beliefs_meet_in_the_middle() {
    let pdg = belief_pair(true);
    let mut s = make_refocus(RefocusKind::Uniform, &pdg, 0).unwrap();
    let cfg = LirConfig { steps: 40, measure: InnerSolverConfig::precise(), ..LirConfig::default() };
    let trace = lir_run(&pdg, &mut s, &cfg).unwrap();
    let last = trace.steps.last().unwrap();
    assert!(trace.final_.value < 1e-3, "{}", trace.final_.value);
    assert!((last.mu_star.probs[0] - 0.5).abs() < 1e-2);
}

#[test]
fn consistent_pdg_stays_consistent() {
    let mut pdg = ParametricPDG::new();
    let x = pdg.add_variable("X", 2).unwrap();
    let y = pdg.add_variable("Y", 3).unwrap();
    pdg.add_arc(Hyperarc::new("p", vec![], vec![x], Cpd::learnable_probs(&[0.3, 0.7]))).unwrap();
    pdg.add_arc(Hyperarc::new("q", vec![x], vec![y], Cpd::learnable_probs(&[0.2, 0.3, 0.5, 0.6, 0.2, 0.2]))).unwrap();
    for kind in [RefocusKind::Uniform, RefocusKind::Hub, RefocusKind::Partial(0.5)] {
        let mut s = make_refocus(kind, &pdg, 1).unwrap();
        let cfg = LirConfig { steps: 3, measure: InnerSolverConfig::precise(), inner: InnerSolverConfig::precise(), ..LirConfig::default() };
        let trace = lir_run(&pdg, &mut s, &cfg).unwrap();
        assert!(trace.final_.value.abs() < 1e-8);
    }
}

#[test]
fn fixed_focus_is_monotone() {
    let pdg = belief_pair(true);
    let f = Focus::uniform(2);
    let mut st = LirState::new(pdg);
    let ode = OdeConfig { integrator: crate::ode::Integrator::Euler, step_scale: 0.05, outer_iters_per_step: 2, ..OdeConfig::default() };
    let mut last = f64::INFINITY;
    for _ in 0..10 {
        let rec = lir_step(&mut st, &f, &ode, &InnerSolverConfig::precise()).unwrap();
        assert!(rec.value <= last + 1e-6);
        last = rec.value;
    }
}
