//! One pass/fail line per acceptance criterion. Tolerances are pinned below.
//!
//! Criteria listed in `KNOWN_UNATTAINABLE` are implemented as stated and
//! reported, but do not fail the run; see the README for why each cannot hold.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use lirlab_core::gflownet::{
    enumerate_modes, enumerate_trajectories, loss_lpv, loss_modlpv, loss_modtb, loss_tb, train, train_full_coverage, HyperGrid, LossKind,
    RewardSpec, RewardVariant, TabularGFN, TrainConfig, TrajectoryBatch,
};
use lirlab_core::lir::{LirConfig, RefocusKind};
use lirlab_core::reductions::gan::{gan_identity_check, GanInstance};
use lirlab_core::reductions::oracle::{grid_inconsistency, OracleArc};
use lirlab_core::reductions::verify::{run_verify, TrialReport, VerifyKind};
use lirlab_core::seed::SeedTree;
use lirlab_core::synth::{run_strategy_suite, REFERENCE_SPECS};
use lirlab_core::{envelope_grad, solve_inconsistency, Cpd, Focus, Hyperarc, InnerSolverConfig, ParametricPDG};

const SEED: u64 = 0;
const KNOWN_UNATTAINABLE: [u32; 3] = [4, 7, 13];
/// Absolute error allowed in a central difference with h = 1e-5 on values of order one.
const FD_FLOOR: f64 = 1e-8;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// Largest value of a named check across trial reports.
fn worst(reports: &[TrialReport], name: &str) -> f64 {
    reports
        .iter()
        .flat_map(|r| r.checks.iter().filter(|c| c.name == name).map(|c| c.value))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn errors(reports: &[TrialReport]) -> usize {
    reports.iter().filter(|r| r.error.is_some()).count()
}

fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Random PDG over at most three binary variables, together with its oracle description.
struct RandomPdg {
    pdg: ParametricPDG,
    focus: Focus,
    sizes: Vec<usize>,
    arcs: Vec<OracleArc>,
}

fn random_pdg(rng: &mut ChaCha8Rng, learnable: bool, unconditional_learnable: bool, gamma: f64) -> RandomPdg {
    let n_vars = rng.random_range(1..=3);
    let sizes = vec![2; n_vars];
    let mut pdg = ParametricPDG::new();
    for v in 0..n_vars {
        pdg.add_variable(format!("X{v}"), 2).unwrap();
    }
    let n_arcs = rng.random_range(2..=4);
    let mut arcs = Vec::new();
    let mut beta = Vec::new();
    for a in 0..n_arcs {
        let t = rng.random_range(0..n_vars);
        let conditional = n_vars > 1 && rng.random_bool(0.5) && !(unconditional_learnable && a % 2 == 0);
        let sources = if conditional {
            let mut s = rng.random_range(0..n_vars - 1);
            if s >= t {
                s += 1;
            }
            vec![s]
        } else {
            vec![]
        };
        let rows = if sources.is_empty() { 1 } else { 2 };
        let probs: Vec<f64> = (0..rows).flat_map(|_| simplex(rng, 2)).collect();
        let is_learnable = if unconditional_learnable { sources.is_empty() } else { learnable && a % 2 == 0 };
        let cpd = if is_learnable { Cpd::learnable_probs(&probs) } else { Cpd::constant(probs.clone()) };
        pdg.add_arc(Hyperarc::new(format!("a{a}"), sources.clone(), vec![t], cpd)).unwrap();
        let b = rng.random_range(0.5..2.0);
        beta.push(b);
        arcs.push(OracleArc { sources, targets: vec![t], probs, beta: b, alpha: 1.0 });
    }
    let focus = Focus::from_beta(beta).with_gamma(gamma);
    RandomPdg { pdg, focus, sizes, arcs }
}

fn c1() -> Verdict {
    let started = Instant::now();
    let mut pdg = ParametricPDG::new();
    let x = pdg.add_variable("X", 2).unwrap();
    pdg.add_arc(Hyperarc::new("p1", vec![], vec![x], Cpd::constant(vec![0.9, 0.1]))).unwrap();
    pdg.add_arc(Hyperarc::new("p2", vec![], vec![x], Cpd::constant(vec![0.1, 0.9]))).unwrap();
    let r = solve_inconsistency(&pdg, &Focus::uniform(2), &InnerSolverConfig::default()).unwrap();
    let elapsed = started.elapsed();
    let value_err = (r.value - 1.021651).abs();
    let mu_err = (r.mu_star.probs[0] - 0.5).abs().max((r.mu_star.probs[1] - 0.5).abs());
    verdict(
        value_err < 1e-4 && mu_err < 1e-4 && elapsed < Duration::from_secs(1),
        format!("value {:.6} (err {value_err:.1e}), mu* err {mu_err:.1e}, {elapsed:.2?}", r.value),
    )
}

fn c2() -> Verdict {
    let started = Instant::now();
    let mut rng = SeedTree::new(SEED).rng("acceptance/grid");
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let gamma = if i % 2 == 0 { 0.0 } else { 0.3 };
        let g = random_pdg(&mut rng, false, false, gamma);
        let solved = solve_inconsistency(&g.pdg, &g.focus, &InnerSolverConfig::precise()).unwrap().value;
        let (grid, _) = grid_inconsistency(&g.sizes, &g.arcs, gamma, 0.01);
        worst = worst.max((solved - grid).abs());
    }
    let elapsed = started.elapsed();
    verdict(worst < 2e-3 && elapsed < Duration::from_secs(120), format!("max |solver - grid| {worst:.2e} over 20 PDGs, {elapsed:.2?}"))
}

fn c3() -> Verdict {
    let mut rng = SeedTree::new(SEED).rng("acceptance/envelope");
    let cfg = InnerSolverConfig::precise();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let gamma = if i % 2 == 0 { 0.0 } else { 0.3 };
        let g = random_pdg(&mut rng, true, false, gamma);
        let r = solve_inconsistency(&g.pdg, &g.focus, &cfg).unwrap();
        let grad = envelope_grad(&g.pdg, &g.focus, &r.mu_star).unwrap();
        let mut diff = 0.0;
        let mut norm = 0.0;
        for a in g.pdg.learnable_arcs() {
            for k in 0..g.pdg.params(a).len() {
                let shifted = |delta: f64| {
                    let mut p = g.pdg.clone();
                    let mut th = p.params(a).to_vec();
                    th[k] += delta;
                    p.set_params(a, th).unwrap();
                    solve_inconsistency(&p, &g.focus, &cfg).unwrap().value
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                diff += (fd - grad[a][k]).powi(2);
                norm += fd * fd;
            }
        }
        // Consistent instances have a zero gradient, where the difference quotient is pure rounding.
        worst = worst.max(diff.sqrt() / (norm.sqrt() + FD_FLOOR / 1e-3));
    }
    verdict(worst < 1e-3, format!("max ‖fd - g‖ / (‖fd‖ + {:.0e}) = {worst:.2e} over 20 PDGs", FD_FLOOR / 1e-3))
}

fn c4() -> Verdict {
    let mut rng = SeedTree::new(SEED).rng("acceptance/convexity");
    let cfg = InnerSolverConfig::precise();
    let mut worst = [f64::NEG_INFINITY; 2];
    for i in 0..100 {
        let gamma = if i % 2 == 0 { 0.0 } else { 0.3 };
        let g = random_pdg(&mut rng, false, true, gamma);
        let learn = g.pdg.learnable_arcs();
        let ends: Vec<Vec<Vec<f64>>> = (0..2).map(|_| learn.iter().map(|_| simplex(&mut rng, 2)).collect()).collect();
        let value = |t: f64| {
            let mut p = g.pdg.clone();
            for (j, &a) in learn.iter().enumerate() {
                let probs: Vec<f64> = ends[0][j].iter().zip(&ends[1][j]).map(|(x, y)| (1.0 - t) * x + t * y).collect();
                p.set_params(a, probs.iter().map(|q| q.ln()).collect()).unwrap();
            }
            solve_inconsistency(&p, &g.focus, &cfg).unwrap().value
        };
        let gap = value(0.5) - 0.5 * (value(0.0) + value(1.0));
        worst[usize::from(gamma > 0.0)] = worst[usize::from(gamma > 0.0)].max(gap);
    }
    verdict(
        worst[0] <= 1e-6 && worst[1] <= 1e-6,
        format!("max midpoint excess over 100 segments (slack 1e-6): gamma=0 {:.2e}, gamma=0.3 {:.2e}", worst[0], worst[1]),
    )
}

fn c5() -> Verdict {
    let reports = run_verify(VerifyKind::Em, SEED, 5);
    let dev = worst(&reports, "max_param_deviation_vs_textbook_em");
    verdict(dev < 1e-10 && errors(&reports) == 0, format!("max parameter deviation {dev:.2e} over 10 iterations, 5 mixtures"))
}

fn c6() -> Verdict {
    let reports = run_verify(VerifyKind::Bp, SEED, 5);
    let tree = worst(&reports, "tree_lockstep_message_deviation");
    let cycle = worst(&reports, "cycle_lockstep_message_deviation");
    let beliefs = worst(&reports, "tree_belief_vs_brute_force");
    verdict(
        tree < 1e-8 && cycle < 1e-8 && beliefs < 1e-8 && errors(&reports) == 0,
        format!("message deviation tree {tree:.1e} cycle {cycle:.1e}; tree beliefs vs brute force {beliefs:.1e}"),
    )
}

fn c7() -> Verdict {
    let reports = run_verify(VerifyKind::Gan, SEED, 50);
    let literal = worst(&reports, "numeric_vs_literal_closed_form");
    let weighted = worst(&reports, "numeric_vs_coin_weighted_closed_form");
    let p = vec![0.2, 0.3, 0.5];
    let matched = GanInstance { p_data: p.clone(), generator: p, discriminator: vec![0.5; 3], beta_d: 1.0, beta_e: -1.0 };
    let d = gan_identity_check(&matched.clone().discriminator_focus()).unwrap().numeric;
    let g = gan_identity_check(&matched.generator_focus()).unwrap().numeric;
    let ln2 = 2f64.ln();
    let sanity = (d - ln2).abs() < 1e-4 && (g + ln2).abs() < 1e-4;
    verdict(
        literal < 1e-4 && sanity && errors(&reports) == 0,
        format!(
            "stated form max err {literal:.3} (coin-weighted form {weighted:.1e}); G=p_data, D=1/2 gives {d:.2e} / {g:.2e}, stated ±{ln2:.4}"
        ),
    )
}

fn c8() -> Verdict {
    let reports = run_verify(VerifyKind::Transformer, SEED, 20);
    let flow = worst(&reports, "flow_vs_closed_form");
    let single = worst(&reports, "single_token_exact");
    let sym = worst(&reports, "equal_scores_average_values");
    verdict(
        flow < 1e-4 && single <= 1e-14 && sym <= 1e-14 && errors(&reports) == 0,
        format!("flow vs closed form {flow:.1e}; n=1 err {single:.0e}; symmetric err {sym:.0e}"),
    )
}

fn c9() -> Verdict {
    let reports = run_verify(VerifyKind::Decision, SEED, 50);
    let small = reports.iter().filter(|r| r.checks.iter().any(|c| c.name == "small_ratio_picks_max_expected_utility" && !c.pass)).count();
    let large = reports.iter().filter(|r| r.checks.iter().any(|c| c.name == "large_ratio_picks_max_best_case" && !c.pass)).count();
    let closed = worst(&reports, "closed_form_vs_numeric_relative");
    verdict(
        small == 0 && large == 0 && closed < 1e-6 && errors(&reports) == 0,
        format!("argmin mismatches: ratio 1e-3 {small}/50, ratio 1e3 {large}/50; closed form vs numeric {closed:.1e}"),
    )
}

fn c10() -> Verdict {
    let reports = run_verify(VerifyKind::GfnIdentity, SEED, 20);
    let id = worst(&reports, "numeric_vs_mod_tb");
    let cos = worst(&reports, "one_minus_gradient_cosine");
    verdict(id < 1e-10 && cos < 1e-8 && errors(&reports) == 0, format!("|inconsistency - ModTB| {id:.1e}; 1 - cosine {cos:.1e}"))
}

fn c11() -> Verdict {
    let started = Instant::now();
    let grid = HyperGrid::new(4, 24).unwrap();
    let want = [(RewardVariant::Original, 256), (RewardVariant::Cosine, 1280), (RewardVariant::Xor, 10752), (RewardVariant::Coprime, 20736)];
    let got: Vec<usize> = want.iter().map(|(v, _)| enumerate_modes(&RewardSpec::new(*v), &grid).unwrap().count).collect();
    let elapsed = started.elapsed();
    let ok = want.iter().zip(&got).all(|((_, w), g)| w == g);
    verdict(ok && elapsed < Duration::from_secs(10), format!("counts {got:?}, {elapsed:.2?}"))
}

fn constant_length_batch() -> TrajectoryBatch {
    let grid = HyperGrid::new(2, 4).unwrap();
    let mut gfn = TabularGFN::new(grid);
    let mut rng = SeedTree::new(SEED).rng("acceptance/batch");
    gfn.logits.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    let spec = RewardSpec::new(RewardVariant::Original);
    let all = enumerate_trajectories(&gfn, &spec, 10_000).unwrap();
    TrajectoryBatch { trajectories: all.trajectories.into_iter().filter(|t| t.len() == 4).collect() }
}

fn c12() -> Verdict {
    let spec = RewardSpec::new(RewardVariant::Original);
    let grid = HyperGrid::new(2, 8).unwrap();
    let mut l1 = Vec::new();
    for loss in LossKind::ALL {
        let cfg = TrainConfig { loss, iters: 3000, batch: 64, seed: SEED, ..TrainConfig::default() };
        let trace = train(&TabularGFN::new(grid), &spec, &cfg).unwrap();
        l1.push(trace.records.iter().map(|r| r.l1).fold(f64::INFINITY, f64::min));
    }
    let trained = l1.iter().all(|x| *x < 0.05);

    let small = TabularGFN::new(HyperGrid::new(2, 4).unwrap());
    let mut fixed = Vec::new();
    for loss in LossKind::ALL {
        let fit = train_full_coverage(&small, &spec, loss, 2000).unwrap();
        fixed.push((fit.loss, fit.l1));
    }
    let shared = fixed.iter().all(|(loss, l1)| *loss < 1e-6 && *l1 < 1e-3);

    let batch = constant_length_batch();
    let log_z = 0.7;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    let tb_err = rel(loss_modtb(&batch, log_z).unwrap(), loss_tb(&batch, log_z).unwrap() / 4.0);
    let lpv_err = rel(loss_modlpv(&batch).unwrap(), loss_lpv(&batch).unwrap() / 4.0);
    let scaled = tb_err <= 1e-14 && lpv_err <= 1e-14;

    let fixed_str: Vec<String> = fixed.iter().map(|(l, d)| format!("{l:.0e}/{d:.0e}")).collect();
    verdict(
        trained && shared && scaled,
        format!(
            "best L1 tb/modtb/lpv/modlpv {:.4}/{:.4}/{:.4}/{:.4}; full-coverage loss/L1 {}; ModX vs X/n rel err {tb_err:.0e}, {lpv_err:.0e} on {} trajectories of length 4",
            l1[0],
            l1[1],
            l1[2],
            l1[3],
            fixed_str.join(" "),
            batch.len()
        ),
    )
}

fn c13() -> Verdict {
    let started = Instant::now();
    let specs: Vec<String> = REFERENCE_SPECS.iter().map(|s| s.to_string()).collect();
    let kinds = [RefocusKind::Uniform, RefocusKind::Partial(0.5), RefocusKind::Hub];
    let seeds: Vec<u64> = (0..5).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let report = pool.install(|| run_strategy_suite(&specs, &kinds, &seeds, &LirConfig::default())).unwrap();
    let elapsed = started.elapsed();
    let u = report.mean_resolution("uniform").unwrap();
    let p = report.mean_resolution("partial").unwrap();
    let h = report.mean_resolution("hub").unwrap();
    let ordered = u > p && h > p;
    let close = (u - 99.23).abs() <= 15.0 && (p - 72.19).abs() <= 15.0 && (h - 99.37).abs() <= 15.0;
    verdict(
        ordered && close && elapsed < Duration::from_secs(600),
        format!("uniform {u:.2}, partial {p:.2}, hub {h:.2} (reference 99.23 / 72.19 / 99.37 ±15); single thread {elapsed:.1?}"),
    )
}

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_lirlab")).args(args).output().unwrap();
    assert!(out.status.success(), "lirlab {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn c14() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| -> Vec<Vec<u8>> {
        let d = dir.path().join(tag);
        let p = |name: &str| d.join(name).to_string_lossy().into_owned();
        run_cli(&["gen", "--spec", "chain_4v_3e", "--seed", "3", "--out", &p("pdg.json")]);
        run_cli(&["lir", &p("pdg.json"), "--strategy", "partial", "--steps", "5", "--seed", "3", "--trace", &p("trace.jsonl"), "--summary", &p("summary.csv")]);
        run_cli(&["synth", "--spec", "chain_4v_3e", "--strategies", "uniform,hub", "--seeds", "2", "--steps", "5", "--out", &p("report.csv")]);
        run_cli(&["gfn", "train", "--iters", "300", "--loss", "lpv", "--seed", "3", "--out", &p("run.jsonl"), "--eval-csv", &p("eval.csv")]);
        ["pdg.json", "trace.jsonl", "summary.csv", "report.csv", "run.jsonl", "eval.csv"]
            .iter()
            .map(|f| std::fs::read(Path::new(&p(f))).unwrap())
            .collect()
    };
    let a = run("first");
    let b = run("second");
    let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    let bytes: usize = a.iter().map(Vec::len).sum();
    verdict(same == a.len() && a.iter().all(|x| !x.is_empty()), format!("{same}/{} outputs byte-identical ({bytes} bytes)", a.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 14] = [
        (1, "two-belief closed form", c1),
        (2, "grid-search equivalence", c2),
        (3, "envelope gradient vs finite differences", c3),
        (4, "midpoint convexity", c4),
        (5, "EM equivalence", c5),
        (6, "BP equivalence", c6),
        (7, "GAN identity", c7),
        (8, "transformer fixed point", c8),
        (9, "decision rules", c9),
        (10, "GFlowNet identity", c10),
        (11, "HyperGrid mode counts", c11),
        (12, "desk-scale GFlowNet training", c12),
        (13, "synthetic-suite ordering", c13),
        (14, "byte-identical reruns", c14),
    ];
    let filter: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut unexpected = Vec::new();
    for (id, name, check) in criteria {
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let started = Instant::now();
        let v = check();
        let tag = match (v.pass, KNOWN_UNATTAINABLE.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known, documented)",
            (false, false) => {
                unexpected.push(id);
                "FAIL"
            }
        };
        println!("criterion {id:>2} {tag}: {name}: {} [{:.1?}]", v.detail, started.elapsed());
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
