//! The coin/discriminator PDG and its closed-form inconsistency.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::inconsistency::{envelope_grad, solve_inconsistency, InnerSolverConfig};
use crate::metrics::jsd;
use crate::pdg::{Cpd, Focus, Hyperarc, ParametricPDG};

pub const MAX_OUTCOMES: usize = 16;

/// `d[x]` is the discriminator's probability that `x` is real.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanInstance {
    pub p_data: Vec<f64>,
    pub generator: Vec<f64>,
    pub discriminator: Vec<f64>,
    pub beta_d: f64,
    pub beta_e: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanCheck {
    pub numeric: f64,
    /// `−β_D·L + (β_D + β_e)·JS − β_D·ln 2` with the unweighted loss `L`.
    pub closed_form: f64,
    /// The same expression with `L` replaced by its coin-weighted form `L/2`.
    pub coin_weighted_closed_form: f64,
    pub gan_loss: f64,
    pub js: f64,
}

fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|v| *v >= 0.0 && v.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

impl GanInstance {
    pub fn validate(&self) -> Result<()> {
        let v = self.p_data.len();
        if v == 0 || v > MAX_OUTCOMES {
            return invalid(format!("outcome space must have 1..={MAX_OUTCOMES} values"));
        }
        if self.generator.len() != v || self.discriminator.len() != v {
            return invalid("p_data, generator and discriminator must share one outcome space");
        }
        if !is_distribution(&self.p_data) || !is_distribution(&self.generator) {
            return invalid("p_data and generator must be distributions");
        }
        if self.discriminator.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return invalid("discriminator must lie strictly inside (0, 1)");
        }
        if !self.beta_d.is_finite() || !self.beta_e.is_finite() {
            return invalid("GAN attention weights must be finite");
        }
        Ok(())
    }

    /// Discriminator focus: attend to D, disbelieve e.
    pub fn discriminator_focus(mut self) -> Self {
        self.beta_d = 1.0;
        self.beta_e = -1.0;
        self
    }

    /// Generator focus: disbelieve D, attend to e.
    pub fn generator_focus(mut self) -> Self {
        self.beta_d = -1.0;
        self.beta_e = 1.0;
        self
    }

    pub fn random<R: Rng>(rng: &mut R, v: usize, beta_d: f64, beta_e: f64) -> Self {
        let simplex = |rng: &mut R| {
            let w: Vec<f64> = (0..v).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect::<Vec<f64>>()
        };
        GanInstance {
            p_data: simplex(rng),
            generator: simplex(rng),
            discriminator: (0..v).map(|_| rng.random_range(0.02..0.98)).collect(),
            beta_d,
            beta_e,
        }
    }
}

/// `E_{p_data} log D + E_G log(1 − D)`.
pub fn gan_loss(inst: &GanInstance) -> f64 {
    let mut total = 0.0;
    for ((p, g), d) in inst.p_data.iter().zip(&inst.generator).zip(&inst.discriminator) {
        if *p > 0.0 {
            total += p * d.ln();
        }
        if *g > 0.0 {
            total += g * (1.0 - d).ln();
        }
    }
    total
}

/// `E_{(X,C)~μ*} log D(C|X)`, the loss under the fair coin.
pub fn coin_weighted_loss(inst: &GanInstance) -> f64 {
    gan_loss(inst) / 2.0
}

fn closed_form_with(inst: &GanInstance, loss: f64) -> Result<f64> {
    inst.validate()?;
    let js = jsd(&inst.p_data, &inst.generator)?;
    Ok(-inst.beta_d * loss + (inst.beta_d + inst.beta_e) * js - inst.beta_d * 2f64.ln())
}

/// `−β_D·L_GAN + (β_D + β_e)·JS(p_data, G) − β_D·ln 2`.
pub fn gan_closed_form(inst: &GanInstance) -> Result<f64> {
    closed_form_with(inst, gan_loss(inst))
}

/// The value the PDG actually takes: the closed form with the coin-weighted loss.
pub fn gan_coin_weighted_closed_form(inst: &GanInstance) -> Result<f64> {
    closed_form_with(inst, coin_weighted_loss(inst))
}

/// Variables `C` (0 = real, 1 = fake) and `X`; arcs `coin`, `image`, `D`, `e`.
pub fn gan_pdg(inst: &GanInstance) -> Result<(ParametricPDG, Focus)> {
    inst.validate()?;
    let v = inst.p_data.len();
    let mut pdg = ParametricPDG::new();
    let c = pdg.add_variable("C", 2)?;
    let x = pdg.add_variable("X", v)?;
    pdg.add_arc(Hyperarc::new("coin", vec![], vec![c], Cpd::constant(vec![0.5, 0.5])))?;
    let mut image = inst.p_data.clone();
    image.extend_from_slice(&inst.generator);
    pdg.add_arc(Hyperarc::new("image", vec![c], vec![x], Cpd::constant(image)))?;
    let d_rows: Vec<f64> = inst.discriminator.iter().flat_map(|d| [*d, 1.0 - d]).collect();
    pdg.add_arc(Hyperarc::new("D", vec![x], vec![c], Cpd::learnable_probs(&d_rows)))?;
    pdg.add_arc(Hyperarc::new("e", vec![x], vec![c], Cpd::constant(vec![0.5; 2 * v])))?;
    let focus = Focus::from_beta(vec![f64::INFINITY, f64::INFINITY, inst.beta_d, inst.beta_e])
        .with_chi(vec![0.0, 0.0, 1.0, 0.0]);
    Ok((pdg, focus))
}

pub fn gan_identity_check(inst: &GanInstance) -> Result<GanCheck> {
    let (pdg, focus) = gan_pdg(inst)?;
    let numeric = solve_inconsistency(&pdg, &focus, &InnerSolverConfig::precise())?.value;
    Ok(GanCheck {
        numeric,
        closed_form: gan_closed_form(inst)?,
        coin_weighted_closed_form: gan_coin_weighted_closed_form(inst)?,
        gan_loss: gan_loss(inst),
        js: jsd(&inst.p_data, &inst.generator)?,
    })
}

/// Envelope gradient of the inconsistency with respect to the discriminator logits.
pub fn discriminator_gradient(inst: &GanInstance) -> Result<Vec<f64>> {
    let (pdg, focus) = gan_pdg(inst)?;
    let r = solve_inconsistency(&pdg, &focus, &InnerSolverConfig::precise())?;
    Ok(envelope_grad(&pdg, &focus, &r.mu_star)?.swap_remove(2))
}

/// `D*(x) = p_data(x) / (p_data(x) + G(x))`.
pub fn optimal_discriminator(p_data: &[f64], generator: &[f64]) -> Vec<f64> {
    p_data.iter().zip(generator).map(|(p, g)| if p + g > 0.0 { p / (p + g) } else { 0.5 }).collect()
}
