use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Row-major flat index of an assignment; the last variable varies fastest.
pub fn joint_index(sizes: &[usize], assignment: &[usize]) -> Result<usize> {
    if sizes.len() != assignment.len() {
        return Err(Error::ScopeMismatch(format!(
            "assignment has {} entries for {} variables",
            assignment.len(),
            sizes.len()
        )));
    }
    let mut idx = 0usize;
    for (&v, &n) in assignment.iter().zip(sizes) {
        if v >= n {
            return Err(Error::OutOfRange { value: v, size: n });
        }
        idx = idx * n + v;
    }
    Ok(idx)
}

pub fn decode_index(sizes: &[usize], mut idx: usize) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    for k in (0..sizes.len()).rev() {
        out[k] = idx % sizes[k];
        idx /= sizes[k];
    }
    out
}

pub fn product(sizes: &[usize]) -> usize {
    sizes.iter().product()
}

/// For every cell of the product over `sizes`, the flat index of its
/// restriction to `positions` (taken in the given order).
pub fn project_indices(sizes: &[usize], positions: &[usize]) -> Vec<usize> {
    let n = product(sizes);
    let sub: Vec<usize> = positions.iter().map(|&p| sizes[p]).collect();
    let mut stride = vec![0usize; sizes.len()];
    let mut acc = 1usize;
    for (k, &p) in positions.iter().enumerate().rev() {
        stride[p] += acc;
        acc *= sub[k];
    }
    let mut out = Vec::with_capacity(n);
    let mut digits = vec![0usize; sizes.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        out.push(cur);
        for k in (0..sizes.len()).rev() {
            digits[k] += 1;
            cur += stride[k];
            if digits[k] < sizes[k] {
                break;
            }
            cur -= stride[k] * sizes[k];
            digits[k] = 0;
        }
    }
    out
}

/// A dense joint distribution over an ordered tuple of variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub vars: Vec<usize>,
    pub sizes: Vec<usize>,
    pub probs: Vec<f64>,
}

/// Conditional table `p(targets | sources)`, rows indexed by source state.
#[derive(Clone, Debug, PartialEq)]
pub struct CondTable {
    pub sources: Vec<usize>,
    pub source_sizes: Vec<usize>,
    pub targets: Vec<usize>,
    pub target_sizes: Vec<usize>,
    pub rows: Vec<f64>,
}

impl CondTable {
    pub fn n_src(&self) -> usize {
        product(&self.source_sizes)
    }

    pub fn n_tgt(&self) -> usize {
        product(&self.target_sizes)
    }

    pub fn row(&self, s: usize) -> &[f64] {
        let n = self.n_tgt();
        &self.rows[s * n..(s + 1) * n]
    }
}

impl JointTable {
    pub fn new(vars: Vec<usize>, sizes: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if vars.len() != sizes.len() {
            return invalid("vars and sizes differ in length");
        }
        if product(&sizes) != probs.len() {
            return invalid(format!(
                "table has {} entries, expected {}",
                probs.len(),
                product(&sizes)
            ));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return invalid("joint entries must be finite and non-negative");
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("joint sums to {total}, expected 1"));
        }
        Ok(Self { vars, sizes, probs })
    }

    pub fn uniform(vars: Vec<usize>, sizes: Vec<usize>) -> Self {
        let n = product(&sizes);
        Self { vars, sizes, probs: vec![1.0 / n as f64; n] }
    }

    pub fn point_mass(vars: Vec<usize>, sizes: Vec<usize>, assignment: &[usize]) -> Result<Self> {
        let idx = joint_index(&sizes, assignment)?;
        let mut probs = vec![0.0; product(&sizes)];
        probs[idx] = 1.0;
        Ok(Self { vars, sizes, probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn position(&self, var: usize) -> Option<usize> {
        self.vars.iter().position(|&v| v == var)
    }

    pub fn prob(&self, assignment: &[usize]) -> Result<f64> {
        Ok(self.probs[joint_index(&self.sizes, assignment)?])
    }

    fn positions(&self, subset: &[usize]) -> Result<Vec<usize>> {
        let mut seen = Vec::with_capacity(subset.len());
        for &v in subset {
            if seen.contains(&v) {
                return Err(Error::ScopeMismatch(format!("variable {v} repeated")));
            }
            seen.push(v);
        }
        subset
            .iter()
            .map(|&v| {
                self.position(v).ok_or_else(|| {
                    Error::ScopeMismatch(format!("variable {v} is not in the joint's scope"))
                })
            })
            .collect()
    }

    /// Marginal over `subset`, in the order given.
    pub fn marginal(&self, subset: &[usize]) -> Result<JointTable> {
        let pos = self.positions(subset)?;
        let sizes: Vec<usize> = pos.iter().map(|&p| self.sizes[p]).collect();
        let mut probs = vec![0.0; product(&sizes)];
        for (cell, j) in project_indices(&self.sizes, &pos).into_iter().enumerate() {
            probs[j] += self.probs[cell];
        }
        let total: f64 = probs.iter().sum();
        if total > 0.0 {
            probs.iter_mut().for_each(|p| *p /= total);
        }
        Ok(JointTable { vars: subset.to_vec(), sizes, probs })
    }

    /// `μ(targets | sources)`; rows with zero source mass are uniform.
    pub fn conditional(&self, targets: &[usize], sources: &[usize]) -> Result<CondTable> {
        if targets.iter().any(|t| sources.contains(t)) {
            return Err(Error::ScopeMismatch("targets and sources overlap".into()));
        }
        let mut both = sources.to_vec();
        both.extend_from_slice(targets);
        let joint = self.marginal(&both)?;
        let source_sizes: Vec<usize> = joint.sizes[..sources.len()].to_vec();
        let target_sizes: Vec<usize> = joint.sizes[sources.len()..].to_vec();
        let nt = product(&target_sizes);
        let mut rows = joint.probs;
        for row in rows.chunks_mut(nt) {
            let z: f64 = row.iter().sum();
            if z > 0.0 {
                row.iter_mut().for_each(|p| *p /= z);
            } else {
                row.iter_mut().for_each(|p| *p = 1.0 / nt as f64);
            }
        }
        Ok(CondTable {
            sources: sources.to_vec(),
            source_sizes,
            targets: targets.to_vec(),
            target_sizes,
            rows,
        })
    }

    /// Re-express over another scope: variables absent here become uniform and
    /// independent, variables absent there are summed out.
    pub fn project_to(&self, vars: &[usize], sizes: &[usize]) -> Result<JointTable> {
        let shared: Vec<usize> = vars.iter().copied().filter(|v| self.position(*v).is_some()).collect();
        let m = self.marginal(&shared)?;
        let pos_in_target: Vec<usize> = shared
            .iter()
            .map(|v| vars.iter().position(|u| u == v).unwrap())
            .collect();
        let n = product(sizes);
        let fresh: usize = vars
            .iter()
            .zip(sizes)
            .filter(|(v, _)| !shared.contains(v))
            .map(|(_, s)| *s)
            .product();
        let idx = project_indices(sizes, &pos_in_target);
        let mut probs = vec![0.0; n];
        for (cell, j) in idx.into_iter().enumerate() {
            probs[cell] = m.probs[j] / fresh as f64;
        }
        Ok(JointTable { vars: vars.to_vec(), sizes: sizes.to_vec(), probs })
    }

    /// Replace the marginal on `sub`'s scope, keeping this table's conditional
    /// of the remaining variables given it.
    pub fn with_marginal(&self, sub: &JointTable) -> Result<JointTable> {
        let pos = self.positions(&sub.vars)?;
        let idx = project_indices(&self.sizes, &pos);
        let mut mass = vec![0.0; sub.probs.len()];
        let mut count = vec![0usize; sub.probs.len()];
        for (cell, &j) in idx.iter().enumerate() {
            mass[j] += self.probs[cell];
            count[j] += 1;
        }
        let probs = idx
            .iter()
            .enumerate()
            .map(|(cell, &j)| {
                if mass[j] > 0.0 {
                    self.probs[cell] / mass[j] * sub.probs[j]
                } else {
                    sub.probs[j] / count[j] as f64
                }
            })
            .collect();
        Ok(JointTable { vars: self.vars.clone(), sizes: self.sizes.clone(), probs })
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn with_marginal_keeps_conditional() {
        let base = JointTable::new(vec![0, 1], vec![2, 2], vec![0.1, 0.3, 0.2, 0.4]).unwrap();
        let sub = JointTable::new(vec![0], vec![2], vec![0.5, 0.5]).unwrap();
        let m = base.with_marginal(&sub).unwrap();
        let expect = [0.125, 0.375, 0.5 / 3.0, 1.0 / 3.0];
        m.probs.iter().zip(expect).for_each(|(a, b)| assert!((a - b).abs() < 1e-15));
    }

    #[test]
    fn index_examples() {
        assert_eq!(joint_index(&[2, 3], &[1, 2]).unwrap(), 5);
        assert_eq!(joint_index(&[2, 3], &[0, 0]).unwrap(), 0);
        assert!(matches!(joint_index(&[2, 3], &[2, 0]), Err(Error::OutOfRange { .. })));
        assert_eq!(decode_index(&[2, 3], 5), vec![1, 2]);
    }

    #[test]
    fn marginal_and_conditional() {
        let mu = JointTable::new(vec![0, 1], vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let m = mu.marginal(&[0]).unwrap();
        assert!((m.probs[0] - 0.3).abs() < 1e-12 && (m.probs[1] - 0.7).abs() < 1e-12);
        let c = mu.conditional(&[1], &[0]).unwrap();
        assert!((c.row(0)[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((c.row(1)[1] - 4.0 / 7.0).abs() < 1e-12);
        let swapped = mu.marginal(&[1, 0]).unwrap();
        assert_eq!(swapped.probs, vec![0.1, 0.3, 0.2, 0.4]);
        assert!(mu.marginal(&[3]).is_err());
    }

    #[test]
    fn zero_mass_rows_are_uniform() {
        let mu = JointTable::new(vec![0, 1], vec![2, 3], vec![0.5, 0.25, 0.25, 0.0, 0.0, 0.0]).unwrap();
        let c = mu.conditional(&[1], &[0]).unwrap();
        assert!(c.row(1).iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn projection_extends_uniformly() {
        let mu = JointTable::new(vec![3], vec![2], vec![0.25, 0.75]).unwrap();
        let p = mu.project_to(&[5, 3], &[2, 2]).unwrap();
        assert_eq!(p.probs, vec![0.125, 0.375, 0.125, 0.375]);
    }
}
