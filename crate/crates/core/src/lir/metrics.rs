use super::LirTrace;
use crate::error::{Error, Result};
use crate::pdg::JointTable;

/// `100 · (init − final) / init` at full attention.
pub fn resolution_percentage(trace: &LirTrace) -> Result<f64> {
    resolution_from_values(trace.initial.value, trace.final_.value)
}

pub fn resolution_from_values(init: f64, fin: f64) -> Result<f64> {
    if init == 0.0 || !init.is_finite() {
        return Err(Error::InvalidArgument(format!("resolution undefined for initial inconsistency {init}")));
    }
    Ok(100.0 * (init - fin) / init)
}

/// `½ Σ |μ − ν|` over a shared scope.
pub fn tv_distortion(a: &JointTable, b: &JointTable) -> Result<f64> {
    if a.vars != b.vars || a.sizes != b.sizes {
        return Err(Error::ScopeMismatch("distributions are over different variables".into()));
    }
    Ok(0.5 * a.probs.iter().zip(&b.probs).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert!((resolution_from_values(0.2, 0.02).unwrap() - 90.0).abs() < 1e-12);
        assert_eq!(resolution_from_values(0.3, 0.3).unwrap(), 0.0);
        assert!(resolution_from_values(0.0, 0.0).is_err());
        let d0 = JointTable::new(vec![0], vec![2], vec![1.0, 0.0]).unwrap();
        let d1 = JointTable::new(vec![0], vec![2], vec![0.0, 1.0]).unwrap();
        let h = JointTable::uniform(vec![0], vec![2]);
        assert_eq!(tv_distortion(&d0, &d1).unwrap(), 1.0);
        assert_eq!(tv_distortion(&d0, &h).unwrap(), 0.5);
        assert_eq!(tv_distortion(&h, &h).unwrap(), 0.0);
    }
}
