use lirlab_core::gflownet::{
    exact_terminal_distribution, loss_modtb, loss_tb, sample_trajectories, HyperGrid, RewardSpec, RewardVariant, SamplingPolicy,
    TabularGFN,
};
use lirlab_core::seed::SeedTree;
use rand::Rng;

fn random_policy(d: usize, height: usize, seed: u64) -> TabularGFN {
    let mut gfn = TabularGFN::new(HyperGrid::new(d, height).unwrap());
    let mut rng = SeedTree::new(seed).rng("policy");
    gfn.logits.iter_mut().for_each(|x| *x = rng.random_range(-1.5..1.5));
    gfn
}

#[test]
fn sampled_terminals_match_exact_distribution() {
    let gfn = random_policy(2, 4, 1);
    let spec = RewardSpec::new(RewardVariant::Original);
    let exact = exact_terminal_distribution(&gfn).unwrap();
    let m = 100_000;
    let batch = sample_trajectories(&gfn, &spec, m, &mut SeedTree::new(2).rng("sample"), SamplingPolicy::OnPolicy).unwrap();
    let mut counts = vec![0usize; exact.len()];
    batch.trajectories.iter().for_each(|t| counts[t.terminal()] += 1);
    for (c, p) in counts.iter().zip(&exact) {
        let sigma = (p * (1.0 - p) / m as f64).sqrt();
        assert!((*c as f64 / m as f64 - p).abs() <= 4.0 * sigma + 1e-12, "{c} vs {p}");
    }
}

#[test]
fn recorded_log_probabilities_match_the_policy() {
    let gfn = random_policy(3, 3, 4);
    let spec = RewardSpec::new(RewardVariant::Xor);
    let batch = sample_trajectories(&gfn, &spec, 200, &mut SeedTree::new(5).rng("sample"), SamplingPolicy::OnPolicy).unwrap();
    for t in &batch.trajectories {
        let mut log_pf = 0.0;
        for (s, a) in t.states.iter().zip(&t.actions) {
            log_pf += gfn.forward_probs(*s)[*a].ln();
        }
        assert!((log_pf - t.log_pf).abs() < 1e-12);
        assert!((t.log_r - spec.log_reward(&gfn.grid, t.terminal())).abs() < 1e-12);
    }
}

#[test]
fn mod_tb_is_length_normalized_tb_on_uniform_lengths() {
    let gfn = random_policy(1, 6, 7);
    let spec = RewardSpec::new(RewardVariant::Cosine);
    let mut batch = sample_trajectories(&gfn, &spec, 500, &mut SeedTree::new(8).rng("sample"), SamplingPolicy::OnPolicy).unwrap();
    let n = batch.trajectories[0].len();
    batch.trajectories.retain(|t| t.len() == n);
    let tb = loss_tb(&batch, 0.3).unwrap();
    let mod_tb = loss_modtb(&batch, 0.3).unwrap();
    assert!((mod_tb - tb / n as f64).abs() <= 1e-14 * tb.abs().max(1.0));
}
