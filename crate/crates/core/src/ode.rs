//! Fixed-step integrators for autonomous vector fields `dx/dt = F(x)`.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    Rk4,
    AdaptiveFirstOrder,
}

fn axpy(x: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| if a.is_finite() { a + h * b } else { *a }).collect()
}

pub fn euler_step<F>(x: &[f64], h: f64, field: &mut F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let k = field(x)?;
    Ok(axpy(x, h, &k))
}

pub fn rk4_step<F>(x: &[f64], h: f64, field: &mut F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let k1 = field(x)?;
    let k2 = field(&axpy(x, h / 2.0, &k1))?;
    let k3 = field(&axpy(x, h / 2.0, &k2))?;
    let k4 = field(&axpy(x, h, &k3))?;
    let k: Vec<f64> = (0..x.len())
        .map(|i| (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0)
        .collect();
    Ok(axpy(x, h, &k))
}
