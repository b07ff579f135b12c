use serde::{Deserialize, Serialize};
use std::str::FromStr;

use super::policy::TrajectoryBatch;
use crate::error::{invalid, Error, Result};

/// Per-trajectory clamp applied during training.
pub const LOSS_CLAMP: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Tb,
    ModTb,
    Lpv,
    ModLpv,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Tb, LossKind::ModTb, LossKind::Lpv, LossKind::ModLpv];

    pub fn uses_log_z(&self) -> bool {
        matches!(self, LossKind::Tb | LossKind::ModTb)
    }

    pub fn length_weighted(&self) -> bool {
        matches!(self, LossKind::ModTb | LossKind::ModLpv)
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Tb => "tb",
            LossKind::ModTb => "modtb",
            LossKind::Lpv => "lpv",
            LossKind::ModLpv => "modlpv",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::InvalidArgument(format!("unknown loss '{s}'")))
    }
}

/// Residuals and weights `1/n_i` (or 1) for the chosen loss.
fn residuals(kind: LossKind, batch: &TrajectoryBatch, log_z: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = batch.len();
    if m == 0 || (!kind.uses_log_z() && m < 2) {
        return invalid(format!("{} needs at least {} trajectories", kind.name(), if kind.uses_log_z() { 1 } else { 2 }));
    }
    let s = batch.scores();
    if s.iter().any(|x| !x.is_finite()) {
        return invalid("trajectory scores must be finite");
    }
    let r: Vec<f64> = if kind.uses_log_z() {
        s.iter().map(|x| x + log_z).collect()
    } else {
        let mean = s.iter().sum::<f64>() / m as f64;
        s.iter().map(|x| x - mean).collect()
    };
    let w = if kind.length_weighted() { batch.lengths().iter().map(|n| 1.0 / n).collect() } else { vec![1.0; m] };
    Ok((r, w))
}

pub fn loss_value(kind: LossKind, batch: &TrajectoryBatch, log_z: f64) -> Result<f64> {
    let (r, w) = residuals(kind, batch, log_z)?;
    Ok(r.iter().zip(&w).map(|(r, w)| r * r * w).sum::<f64>() / r.len() as f64)
}

pub fn loss_tb(batch: &TrajectoryBatch, log_z: f64) -> Result<f64> {
    loss_value(LossKind::Tb, batch, log_z)
}

pub fn loss_modtb(batch: &TrajectoryBatch, log_z: f64) -> Result<f64> {
    loss_value(LossKind::ModTb, batch, log_z)
}

pub fn loss_lpv(batch: &TrajectoryBatch) -> Result<f64> {
    loss_value(LossKind::Lpv, batch, 0.0)
}

pub fn loss_modlpv(batch: &TrajectoryBatch) -> Result<f64> {
    loss_value(LossKind::ModLpv, batch, 0.0)
}

/// Clamped loss, its derivative with respect to each trajectory score, and
/// with respect to log Z. Clamped terms contribute no gradient.
pub fn loss_gradients(kind: LossKind, batch: &TrajectoryBatch, log_z: f64, clamp: f64) -> Result<(f64, Vec<f64>, f64)> {
    let (r, w) = residuals(kind, batch, log_z)?;
    let m = r.len() as f64;
    let mut value = 0.0;
    let mut g = vec![0.0; r.len()];
    for i in 0..r.len() {
        let term = r[i] * r[i] * w[i];
        if term < clamp {
            value += term;
            g[i] = 2.0 * r[i] * w[i] / m;
        } else {
            value += clamp;
        }
    }
    value /= m;
    if kind.uses_log_z() {
        let dz = g.iter().sum();
        Ok((value, g, dz))
    } else {
        let mean = g.iter().sum::<f64>() / m;
        Ok((value, g.iter().map(|x| x - mean).collect(), 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gflownet::policy::Trajectory;

    fn batch(scores: &[f64], lens: &[usize]) -> TrajectoryBatch {
        let trajectories = scores
            .iter()
            .zip(lens)
            .map(|(&s, &n)| Trajectory { states: vec![0; n], actions: vec![0; n], log_pf: s, log_pb: 0.0, log_r: 0.0 })
            .collect();
        TrajectoryBatch { trajectories }
    }

    #[test]
    fn worked_examples() {
        let l2 = 2f64.ln();
        let b = batch(&[l2], &[1]);
        assert!((loss_tb(&b, 0.0).unwrap() - l2 * l2).abs() < 1e-15);
        assert!((loss_modtb(&b, 0.0).unwrap() - 0.4804530139182014).abs() < 1e-15);
        let b = batch(&[0.0, l2], &[1, 1]);
        assert!((loss_lpv(&b).unwrap() - l2 * l2 / 4.0).abs() < 1e-15);
        assert!((loss_modlpv(&b).unwrap() - 0.12011325347955035).abs() < 1e-15);
        assert!(loss_lpv(&batch(&[1.0], &[1])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let scores = [0.3, -1.2, 2.0, 0.7];
        let lens = [1, 3, 2, 5];
        for kind in LossKind::ALL {
            let (_, g, dz) = loss_gradients(kind, &batch(&scores, &lens), 0.4, f64::INFINITY).unwrap();
            let h = 1e-6;
            for i in 0..4 {
                let mut up = scores;
                up[i] += h;
                let mut dn = scores;
                dn[i] -= h;
                let fd = (loss_value(kind, &batch(&up, &lens), 0.4).unwrap() - loss_value(kind, &batch(&dn, &lens), 0.4).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-8, "{kind:?} {i}");
            }
            let fd = (loss_value(kind, &batch(&scores, &lens), 0.4 + h).unwrap() - loss_value(kind, &batch(&scores, &lens), 0.4 - h).unwrap()) / (2.0 * h);
            assert!((fd - dz).abs() < 1e-8);
        }
    }

    #[test]
    fn clamp_caps_large_terms() {
        let (v, g, _) = loss_gradients(LossKind::Tb, &batch(&[20.0, 1.0], &[1, 1]), 0.0, LOSS_CLAMP).unwrap();
        assert!((v - 50.5).abs() < 1e-12);
        assert_eq!(g[0], 0.0);
    }
}
