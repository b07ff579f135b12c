//! The classifier PDG `x ->> X → Y <- y` resolved by controlling the
//! parameters, the label, or the input; and adversarial training as
//! alternation between an attack focus and a patch focus.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `p(y|x) = softmax(W x + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriadControl {
    Theta,
    Label,
    Input,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Flow { steps: usize, rate: f64 },
    /// χ = ∞; closed form for the label only.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriadState {
    pub classifier: LinearClassifier,
    pub x: Vec<f64>,
    /// A point of the label simplex.
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriadOutcome {
    pub state: TriadState,
    /// `D(y ‖ p_θ(·|x))` before each step and after the last.
    pub objective: Vec<f64>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

impl LinearClassifier {
    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.n_classes() < 2 || d == 0 || self.weights.len() != self.n_classes() || self.weights.iter().any(|r| r.len() != d) {
            return invalid("classifier needs one weight row of equal length per class, at least two classes");
        }
        if self.weights.iter().flatten().chain(&self.bias).any(|v| !v.is_finite()) {
            return invalid("classifier parameters must be finite");
        }
        Ok(())
    }

    pub fn random<R: Rng>(rng: &mut R, classes: usize, dim: usize, scale: f64) -> Self {
        LinearClassifier {
            weights: (0..classes).map(|_| (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).collect(),
            bias: (0..classes).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect(),
        }
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = self.weights.iter().zip(&self.bias).map(|(w, b)| b + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()).collect();
        softmax(&z)
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().flatten().chain(&self.bias).map(|v| v * v).sum()
    }

    /// `∂/∂z D(y ‖ softmax(z)) = p − y`, for `y` a distribution.
    fn logit_residual(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.probs(x).iter().zip(y).map(|(p, y)| p - y).collect()
    }

    fn step_theta(&mut self, x: &[f64], y: &[f64], rate: f64, decay: f64) {
        let r = self.logit_residual(x, y);
        for (c, rc) in r.iter().enumerate() {
            for (w, xi) in self.weights[c].iter_mut().zip(x) {
                *w -= rate * (rc * xi + decay * *w);
            }
            self.bias[c] -= rate * (rc + decay * self.bias[c]);
        }
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let r = self.logit_residual(x, y);
        (0..self.dim()).map(|i| r.iter().zip(&self.weights).map(|(rc, w)| rc * w[i]).sum()).collect()
    }
}

/// `D(y ‖ p_θ(·|x))`, which is `−log p_θ(y|x)` for a one-hot `y`.
pub fn label_divergence(clf: &LinearClassifier, x: &[f64], y: &[f64]) -> f64 {
    clf.probs(x).iter().zip(y).filter(|(_, y)| **y > 0.0).map(|(p, y)| y * (y / p).ln()).sum()
}

pub fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

impl TriadState {
    pub fn validate(&self) -> Result<()> {
        self.classifier.validate()?;
        if self.x.len() != self.classifier.dim() || self.x.iter().any(|v| !v.is_finite()) {
            return invalid("input must be a finite vector of the classifier's dimension");
        }
        if self.y.len() != self.classifier.n_classes()
            || self.y.iter().any(|v| !(*v >= 0.0))
            || (self.y.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return invalid("label must be a distribution over the classes");
        }
        Ok(())
    }

    pub fn objective(&self) -> f64 {
        label_divergence(&self.classifier, &self.x, &self.y)
    }
}

/// Gradient flow on `D(y ‖ p_θ(·|x))` in the controlled quantity only. The
/// label flows through its logits.
pub fn triad_resolve(start: &TriadState, control: TriadControl, resolution: Resolution) -> Result<TriadOutcome> {
    start.validate()?;
    let mut state = start.clone();
    let mut objective = vec![state.objective()];
    let (steps, rate) = match resolution {
        Resolution::Full if control == TriadControl::Label => {
            state.y = state.classifier.probs(&state.x);
            objective.push(state.objective());
            return Ok(TriadOutcome { state, objective });
        }
        Resolution::Full => return Err(Error::Unsupported("full control has a closed form only for the label".into())),
        Resolution::Flow { steps, rate } => (steps, rate),
    };
    if !(rate > 0.0 && rate.is_finite()) {
        return invalid("rate must be positive");
    }
    let mut eta: Vec<f64> = state.y.iter().map(|v| v.max(1e-12).ln()).collect();
    for _ in 0..steps {
        match control {
            TriadControl::Theta => {
                let (x, y) = (state.x.clone(), state.y.clone());
                state.classifier.step_theta(&x, &y, rate, 0.0);
            }
            TriadControl::Input => {
                let g = state.classifier.grad_x(&state.x, &state.y);
                state.x.iter_mut().zip(g).for_each(|(x, g)| *x -= rate * g);
            }
            TriadControl::Label => {
                let y = softmax(&eta);
                let p = state.classifier.probs(&state.x);
                let log_ratio: Vec<f64> = y.iter().zip(&p).map(|(y, p)| (y / p).ln()).collect();
                let kl: f64 = y.iter().zip(&log_ratio).map(|(y, l)| y * l).sum();
                eta.iter_mut().zip(y.iter().zip(&log_ratio)).for_each(|(e, (y, l))| *e -= rate * y * (l - kl));
                state.y = softmax(&eta);
            }
        }
        objective.push(state.objective());
    }
    Ok(TriadOutcome { state, objective })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    pub rounds: usize,
    pub attack_steps: usize,
    pub attack_rate: f64,
    pub patch_steps: usize,
    pub patch_rate: f64,
    /// Precision of the `N(0, 1/λ)` prior on the parameters in the patch focus.
    pub weight_prior: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig { rounds: 3, attack_steps: 50, attack_rate: 0.05, patch_steps: 50, patch_rate: 0.05, weight_prior: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialRound {
    /// `−log p(y'|x') + ½‖x' − x‖²` over the attack steps.
    pub attack_objective: Vec<f64>,
    /// `−log p(y|x') + (λ/2)‖θ‖²` over the patch steps.
    pub patch_objective: Vec<f64>,
    pub patch_nll_before: f64,
    pub patch_nll_after: f64,
    pub x_adv: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialTrace {
    pub rounds: Vec<AdversarialRound>,
    pub classifier: LinearClassifier,
}

/// Alternates the attack focus (`N(x,1)`, `y'`, `p`; control of `x'`) with the
/// patch focus (`N(0,1)` on θ, `x'`, `y`, `p`; control of θ). `x'` starts at `x`.
pub fn adversarial_cycle(sample: &TriadState, target: usize, cfg: &AdversarialConfig) -> Result<AdversarialTrace> {
    sample.validate()?;
    let n = sample.classifier.n_classes();
    if target >= n {
        return invalid(format!("target class {target} out of range"));
    }
    let y_adv = one_hot(n, target);
    let mut clf = sample.classifier.clone();
    let mut x_adv = sample.x.clone();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let attack = |clf: &LinearClassifier, xa: &[f64]| label_divergence(clf, xa, &y_adv) + 0.5 * sq_dist(xa, &sample.x);
    let patch = |clf: &LinearClassifier, xa: &[f64]| label_divergence(clf, xa, &sample.y) + 0.5 * cfg.weight_prior * clf.norm_sq();
    for _ in 0..cfg.rounds {
        let mut attack_objective = vec![attack(&clf, &x_adv)];
        for _ in 0..cfg.attack_steps {
            let g = clf.grad_x(&x_adv, &y_adv);
            for ((xa, g), x0) in x_adv.iter_mut().zip(g).zip(&sample.x) {
                *xa -= cfg.attack_rate * (g + (*xa - x0));
            }
            attack_objective.push(attack(&clf, &x_adv));
        }
        let patch_nll_before = label_divergence(&clf, &x_adv, &sample.y);
        let mut patch_objective = vec![patch(&clf, &x_adv)];
        for _ in 0..cfg.patch_steps {
            clf.step_theta(&x_adv, &sample.y, cfg.patch_rate, cfg.weight_prior);
            patch_objective.push(patch(&clf, &x_adv));
        }
        rounds.push(AdversarialRound {
            attack_objective,
            patch_objective,
            patch_nll_before,
            patch_nll_after: label_divergence(&clf, &x_adv, &sample.y),
            x_adv: x_adv.clone(),
        });
    }
    Ok(AdversarialTrace { rounds, classifier: clf })
}
