//! Self-attention as the resolution of Gaussian beliefs `X'_j ~ N(W_V x_i, Σ_ij)`
//! weighted by `φ_ij = exp⟨k_i, q_j⟩`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ode::rk4_step;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerInstance {
    /// Token representations, one row per token.
    pub x: Vec<Vec<f64>>,
    pub w_k: DMatrix<f64>,
    pub w_q: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    /// `Σ_ij` indexed `[i][j]`; identity when absent.
    pub covariances: Option<Vec<Vec<DMatrix<f64>>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub grad_tol: f64,
    pub max_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { grad_tol: 1e-11, max_steps: 200_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub closed_form: Vec<DVector<f64>>,
    pub flow: Vec<DVector<f64>>,
    pub max_abs_diff: f64,
    pub flow_steps: usize,
}

impl TransformerInstance {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn d(&self) -> usize {
        self.x.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.n(), self.d());
        if n == 0 || d == 0 || self.x.iter().any(|r| r.len() != d) {
            return invalid("tokens must be a non-empty n×d array");
        }
        for w in [&self.w_k, &self.w_q, &self.w_v] {
            if w.shape() != (d, d) {
                return invalid("weight matrices must be d×d");
            }
        }
        if let Some(c) = &self.covariances {
            if c.len() != n || c.iter().any(|r| r.len() != n || r.iter().any(|s| s.shape() != (d, d))) {
                return invalid("covariances must be n×n blocks of d×d matrices");
            }
        }
        Ok(())
    }

    fn token(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.x[i])
    }

    pub fn values(&self) -> Vec<DVector<f64>> {
        (0..self.n()).map(|i| &self.w_v * self.token(i)).collect()
    }

    /// `φ_ij = exp⟨W_K x_i, W_Q x_j⟩`.
    pub fn attention(&self) -> Result<DMatrix<f64>> {
        let n = self.n();
        let keys: Vec<DVector<f64>> = (0..n).map(|i| &self.w_k * self.token(i)).collect();
        let queries: Vec<DVector<f64>> = (0..n).map(|j| &self.w_q * self.token(j)).collect();
        let phi = DMatrix::from_fn(n, n, |i, j| keys[i].dot(&queries[j]).exp());
        if phi.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Numerical("attention weight overflowed".into()));
        }
        Ok(phi)
    }

    fn precisions(&self) -> Result<Vec<Vec<DMatrix<f64>>>> {
        let (n, d) = (self.n(), self.d());
        match &self.covariances {
            None => Ok(vec![vec![DMatrix::identity(d, d); n]; n]),
            Some(c) => c
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|s| s.clone().try_inverse().ok_or_else(|| Error::Numerical("singular covariance".into())))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn random<R: Rng>(rng: &mut R, n: usize, d: usize) -> Self {
        let scale = 1.0 / (d as f64).sqrt();
        let mat = |rng: &mut R| DMatrix::from_fn(d, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let w_k = mat(rng);
        let w_q = mat(rng);
        let w_v = mat(rng);
        let x = (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
        TransformerInstance { x, w_k, w_q, w_v, covariances: None }
    }
}

/// `Σ_{ij} φ_ij/2 · [ln((2π)^d det Σ_ij) + (x'_j − v_i)ᵀ Σ_ij⁻¹ (x'_j − v_i)]`.
pub fn transformer_inconsistency(inst: &TransformerInstance, out: &[DVector<f64>]) -> Result<f64> {
    inst.validate()?;
    let phi = inst.attention()?;
    let prec = inst.precisions()?;
    let v = inst.values();
    let d = inst.d() as f64;
    let mut total = 0.0;
    for i in 0..inst.n() {
        for j in 0..inst.n() {
            let det = match &inst.covariances {
                None => 1.0,
                Some(c) => c[i][j].determinant(),
            };
            let r = &out[j] - &v[i];
            total += phi[(i, j)] / 2.0 * ((2.0 * std::f64::consts::PI).ln() * d + det.ln() + (r.transpose() * &prec[i][j] * &r)[(0, 0)]);
        }
    }
    Ok(total)
}

/// Gradient with respect to each output token.
pub fn transformer_gradient(inst: &TransformerInstance, out: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let phi = inst.attention()?;
    let prec = inst.precisions()?;
    let v = inst.values();
    Ok((0..inst.n())
        .map(|j| (0..inst.n()).map(|i| phi[(i, j)] * (&prec[i][j] * (&out[j] - &v[i]))).fold(DVector::zeros(inst.d()), |a, b| a + b))
        .collect())
}

pub fn directional_derivative(inst: &TransformerInstance, out: &[DVector<f64>], dir: &[DVector<f64>]) -> Result<f64> {
    Ok(transformer_gradient(inst, out)?.iter().zip(dir).map(|(g, u)| g.dot(u)).sum())
}

/// `x'_j = (Σ_i φ_ij Σ_ij⁻¹)⁻¹ Σ_i φ_ij Σ_ij⁻¹ v_i`.
pub fn closed_form(inst: &TransformerInstance) -> Result<Vec<DVector<f64>>> {
    inst.validate()?;
    let phi = inst.attention()?;
    let prec = inst.precisions()?;
    let v = inst.values();
    let d = inst.d();
    (0..inst.n())
        .map(|j| {
            let mut lhs = DMatrix::zeros(d, d);
            let mut rhs = DVector::zeros(d);
            for i in 0..inst.n() {
                lhs += phi[(i, j)] * &prec[i][j];
                rhs += phi[(i, j)] * (&prec[i][j] * &v[i]);
            }
            lhs.try_inverse().map(|m| m * rhs).ok_or_else(|| Error::Numerical("singular normalizer matrix".into()))
        })
        .collect()
}

/// The usual layer output `Σ_i softmax_i⟨k_i, q_j⟩ v_i`.
pub fn softmax_attention(inst: &TransformerInstance) -> Result<Vec<DVector<f64>>> {
    inst.validate()?;
    let phi = inst.attention()?;
    let v = inst.values();
    Ok((0..inst.n())
        .map(|j| {
            let z: f64 = phi.column(j).sum();
            (0..inst.n()).fold(DVector::zeros(inst.d()), |acc, i| acc + &v[i] * (phi[(i, j)] / z))
        })
        .collect())
}

/// Gradient flow on the output tokens from `x' = x`, by RK4. Output tokens do
/// not interact, so each is integrated with step `1/λ_max` of its own Hessian.
pub fn transformer_fixed_point(inst: &TransformerInstance, cfg: &FlowConfig) -> Result<FixedPoint> {
    inst.validate()?;
    let phi = inst.attention()?;
    let prec = inst.precisions()?;
    let v = inst.values();
    let (n, d) = (inst.n(), inst.d());
    let mut flow = Vec::with_capacity(n);
    let mut steps = 0;
    for j in 0..n {
        let mut h_j = DMatrix::zeros(d, d);
        for i in 0..n {
            h_j += phi[(i, j)] * &prec[i][j];
        }
        let sym = (&h_j + h_j.transpose()) * 0.5;
        let lam = sym.symmetric_eigenvalues().iter().copied().fold(0.0, f64::max);
        if !(lam > 0.0) {
            return Err(Error::Numerical("normalizer matrix is not positive definite".into()));
        }
        let h = 1.0 / lam;
        let mut field = |y: &[f64]| -> Result<Vec<f64>> {
            let y = DVector::from_column_slice(y);
            let g = (0..n).fold(DVector::zeros(d), |acc, i| acc + phi[(i, j)] * (&prec[i][j] * (&y - &v[i])));
            Ok(g.iter().map(|g| -g).collect())
        };
        let mut y: Vec<f64> = inst.x[j].clone();
        let mut converged = false;
        for _ in 0..cfg.max_steps {
            let grad = field(&y)?;
            if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < cfg.grad_tol {
                converged = true;
                break;
            }
            y = rk4_step(&y, h, &mut field)?;
            steps += 1;
        }
        if !converged {
            return Err(Error::Numerical(format!("flow for token {j} did not reach stationarity")));
        }
        flow.push(DVector::from_vec(y));
    }
    let closed = closed_form(inst)?;
    let max_abs_diff = closed.iter().zip(&flow).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
    Ok(FixedPoint { closed_form: closed, flow, max_abs_diff, flow_steps: steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedTree;

    #[test]
    fn single_token_returns_its_value() {
        let mut rng = SeedTree::new(1).rng("transformer");
        let inst = TransformerInstance::random(&mut rng, 1, 3);
        let fp = transformer_fixed_point(&inst, &FlowConfig::default()).unwrap();
        assert!((&fp.closed_form[0] - &inst.values()[0]).amax() < 1e-14);
        assert!(fp.max_abs_diff < 1e-10);
    }

    #[test]
    fn equal_scores_average_values() {
        let inst = TransformerInstance {
            x: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            w_k: DMatrix::zeros(2, 2),
            w_q: DMatrix::zeros(2, 2),
            w_v: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            covariances: None,
        };
        let v = inst.values();
        let mean = (&v[0] + &v[1]) * 0.5;
        for out in closed_form(&inst).unwrap() {
            assert_eq!(out, mean);
        }
    }

    #[test]
    fn identity_covariance_gives_softmax_attention() {
        let mut rng = SeedTree::new(2).rng("transformer");
        let inst = TransformerInstance::random(&mut rng, 3, 2);
        let a = closed_form(&inst).unwrap();
        let b = softmax_attention(&inst).unwrap();
        a.iter().zip(&b).for_each(|(a, b)| assert!((a - b).amax() < 1e-12));
        let fp = transformer_fixed_point(&inst, &FlowConfig::default()).unwrap();
        assert!(fp.max_abs_diff < 1e-9);
    }

    #[test]
    fn general_covariance_is_stationary() {
        let mut rng = SeedTree::new(3).rng("transformer");
        let mut inst = TransformerInstance::random(&mut rng, 3, 2);
        let cov = |a: f64, b: f64| DMatrix::from_row_slice(2, 2, &[1.0 + a, b, b, 1.0 + a * a]);
        inst.covariances = Some((0..3).map(|i| (0..3).map(|j| cov(i as f64 * 0.3, 0.1 * j as f64)).collect()).collect());
        let fp = transformer_fixed_point(&inst, &FlowConfig::default()).unwrap();
        assert!(fp.max_abs_diff < 1e-9);
        let dir: Vec<DVector<f64>> = (0..3).map(|j| DVector::from_vec(vec![1.0, -0.5 * j as f64])).collect();
        assert!(directional_derivative(&inst, &fp.closed_form, &dir).unwrap().abs() < 1e-10);
        let base = transformer_inconsistency(&inst, &fp.closed_form).unwrap();
        let moved: Vec<DVector<f64>> = fp.closed_form.iter().zip(&dir).map(|(x, u)| x + u * 1e-3).collect();
        assert!(transformer_inconsistency(&inst, &moved).unwrap() > base);
    }
}
