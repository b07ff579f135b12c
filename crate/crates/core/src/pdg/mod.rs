//! Parametric probabilistic dependency graphs over finite variables.

mod focus;
pub mod io;
mod joint;

pub use focus::{ext_real, Focus};
pub use joint::{decode_index, joint_index, product, project_indices, CondTable, JointTable};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub id: String,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CpdKind {
    /// Fixed rows; `row_map` ties several source states to one stored row.
    ConstantTable {
        rows: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        row_map: Option<Vec<usize>>,
    },
    /// Softmax over stored logits; `-inf` logits are structural zeros.
    LearnableTable {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        row_map: Option<Vec<usize>>,
    },
    /// `softmax(W φ(s) + b)` with one feature vector per source state.
    LinearSoftmax { features: Vec<Vec<f64>> },
    /// Gaussian with learnable mean; only meaningful for continuous reductions.
    IsotropicGaussianMean { dim: usize, variance: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cpd {
    pub kind: CpdKind,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default)]
    pub default: Vec<f64>,
}

fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) -> Result<()> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Numerical("softmax row has no finite logit".into()));
    }
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
    Ok(())
}

impl Cpd {
    pub fn constant(rows: Vec<f64>) -> Self {
        Cpd { kind: CpdKind::ConstantTable { rows, row_map: None }, params: vec![], default: vec![] }
    }

    pub fn constant_tied(rows: Vec<f64>, row_map: Vec<usize>) -> Self {
        Cpd {
            kind: CpdKind::ConstantTable { rows, row_map: Some(row_map) },
            params: vec![],
            default: vec![],
        }
    }

    pub fn learnable_logits(logits: Vec<f64>) -> Self {
        Cpd {
            kind: CpdKind::LearnableTable { row_map: None },
            default: logits.clone(),
            params: logits,
        }
    }

    pub fn learnable_tied_logits(logits: Vec<f64>, row_map: Vec<usize>) -> Self {
        Cpd {
            kind: CpdKind::LearnableTable { row_map: Some(row_map) },
            default: logits.clone(),
            params: logits,
        }
    }

    /// Learnable table initialised at the given probabilities.
    pub fn learnable_probs(rows: &[f64]) -> Self {
        Self::learnable_logits(rows.iter().map(|&p| ln_or_neg_inf(p)).collect())
    }

    /// `weights` is row-major `n_tgt × n_features`.
    pub fn linear_softmax(features: Vec<Vec<f64>>, weights: &[f64], bias: &[f64]) -> Self {
        let mut params = weights.to_vec();
        params.extend_from_slice(bias);
        Cpd { kind: CpdKind::LinearSoftmax { features }, default: params.clone(), params }
    }

    pub fn gaussian_mean(mean: Vec<f64>, variance: f64) -> Self {
        Cpd {
            kind: CpdKind::IsotropicGaussianMean { dim: mean.len(), variance },
            default: mean.clone(),
            params: mean,
        }
    }

    pub fn is_learnable(&self) -> bool {
        !matches!(self.kind, CpdKind::ConstantTable { .. })
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    fn row_of(row_map: &Option<Vec<usize>>, s: usize) -> usize {
        row_map.as_ref().map_or(s, |m| m[s])
    }

    pub fn validate(&self, n_src: usize, n_tgt: usize) -> Result<()> {
        let check_map = |row_map: &Option<Vec<usize>>, n_rows: usize| -> Result<()> {
            if let Some(m) = row_map {
                if m.len() != n_src {
                    return invalid(format!("row_map has {} entries for {n_src} source states", m.len()));
                }
                if m.iter().any(|&r| r >= n_rows) {
                    return invalid("row_map points past the stored rows");
                }
            } else if n_rows != n_src {
                return invalid(format!("{n_rows} stored rows for {n_src} source states"));
            }
            Ok(())
        };
        match &self.kind {
            CpdKind::ConstantTable { rows, row_map } => {
                if rows.len() % n_tgt != 0 || rows.is_empty() {
                    return invalid(format!("table length {} not a multiple of {n_tgt}", rows.len()));
                }
                check_map(row_map, rows.len() / n_tgt)?;
                for row in rows.chunks(n_tgt) {
                    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                        return invalid("cpd entries must be finite and non-negative");
                    }
                    let z: f64 = row.iter().sum();
                    if (z - 1.0).abs() > 1e-9 {
                        return invalid(format!("cpd row sums to {z}"));
                    }
                }
            }
            CpdKind::LearnableTable { row_map } => {
                if self.params.len() % n_tgt != 0 || self.params.is_empty() {
                    return invalid(format!("logit length {} not a multiple of {n_tgt}", self.params.len()));
                }
                check_map(row_map, self.params.len() / n_tgt)?;
                for row in self.params.chunks(n_tgt) {
                    if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                        return invalid("logits must be finite or -inf");
                    }
                    if row.iter().all(|v| !v.is_finite()) {
                        return invalid("logit row has no finite entry");
                    }
                }
            }
            CpdKind::LinearSoftmax { features } => {
                if features.len() != n_src {
                    return invalid("linear softmax needs one feature vector per source state");
                }
                let nf = features.first().map_or(0, |f| f.len());
                if features.iter().any(|f| f.len() != nf) {
                    return invalid("feature vectors differ in length");
                }
                if self.params.len() != n_tgt * nf + n_tgt {
                    return invalid("linear softmax parameter length mismatch");
                }
                if self.params.iter().any(|v| !v.is_finite()) {
                    return invalid("linear softmax parameters must be finite");
                }
            }
            CpdKind::IsotropicGaussianMean { dim, variance } => {
                if self.params.len() != *dim || !(*variance > 0.0) {
                    return invalid("gaussian mean cpd is malformed");
                }
            }
        }
        if self.is_learnable() && !self.default.is_empty() && self.default.len() != self.params.len() {
            return invalid("default parameters differ in length from parameters");
        }
        Ok(())
    }

    /// Dense `p(t|s)`, `n_src × n_tgt`.
    pub fn probs(&self, n_src: usize, n_tgt: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; n_src * n_tgt];
        match &self.kind {
            CpdKind::ConstantTable { rows, row_map } => {
                for s in 0..n_src {
                    let r = Self::row_of(row_map, s);
                    out[s * n_tgt..(s + 1) * n_tgt].copy_from_slice(&rows[r * n_tgt..(r + 1) * n_tgt]);
                }
            }
            CpdKind::LearnableTable { row_map } => {
                let n_rows = self.params.len() / n_tgt;
                let mut stored = self.params.clone();
                for r in 0..n_rows {
                    softmax_in_place(&mut stored[r * n_tgt..(r + 1) * n_tgt])?;
                }
                for s in 0..n_src {
                    let r = Self::row_of(row_map, s);
                    out[s * n_tgt..(s + 1) * n_tgt].copy_from_slice(&stored[r * n_tgt..(r + 1) * n_tgt]);
                }
            }
            CpdKind::LinearSoftmax { features } => {
                let nf = features.first().map_or(0, |f| f.len());
                let (w, b) = self.params.split_at(n_tgt * nf);
                for s in 0..n_src {
                    let row = &mut out[s * n_tgt..(s + 1) * n_tgt];
                    for t in 0..n_tgt {
                        row[t] = b[t] + (0..nf).map(|k| w[t * nf + k] * features[s][k]).sum::<f64>();
                    }
                    softmax_in_place(row)?;
                }
            }
            CpdKind::IsotropicGaussianMean { .. } => {
                return Err(Error::Unsupported("gaussian cpd has no finite table".into()))
            }
        }
        Ok(out)
    }

    pub fn log_probs(&self, n_src: usize, n_tgt: usize) -> Result<Vec<f64>> {
        Ok(self.probs(n_src, n_tgt)?.into_iter().map(ln_or_neg_inf).collect())
    }

    /// `out += Σ_{s,t} w[s,t] ∇_params log p(t|s)`.
    pub fn add_log_grad(&self, n_src: usize, n_tgt: usize, w: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.kind {
            CpdKind::ConstantTable { .. } => {}
            CpdKind::LearnableTable { row_map } => {
                let p = self.probs(n_src, n_tgt)?;
                for s in 0..n_src {
                    let r = Self::row_of(row_map, s);
                    let ws = &w[s * n_tgt..(s + 1) * n_tgt];
                    let tot: f64 = ws.iter().sum();
                    if tot == 0.0 && ws.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    for t in 0..n_tgt {
                        if self.params[r * n_tgt + t].is_finite() {
                            out[r * n_tgt + t] += ws[t] - p[s * n_tgt + t] * tot;
                        }
                    }
                }
            }
            CpdKind::LinearSoftmax { features } => {
                let p = self.probs(n_src, n_tgt)?;
                let nf = features.first().map_or(0, |f| f.len());
                for s in 0..n_src {
                    let ws = &w[s * n_tgt..(s + 1) * n_tgt];
                    let tot: f64 = ws.iter().sum();
                    for t in 0..n_tgt {
                        let d = ws[t] - p[s * n_tgt + t] * tot;
                        for k in 0..nf {
                            out[t * nf + k] += d * features[s][k];
                        }
                        out[n_tgt * nf + t] += d;
                    }
                }
            }
            CpdKind::IsotropicGaussianMean { .. } => {
                return Err(Error::Unsupported("gaussian cpd has no finite table".into()))
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperarc {
    pub id: String,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub cpd: Cpd,
}

impl Hyperarc {
    pub fn new(id: impl Into<String>, sources: Vec<usize>, targets: Vec<usize>, cpd: Cpd) -> Self {
        Hyperarc { id: id.into(), sources, targets, cpd }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParametricPDG {
    variables: Vec<Variable>,
    arcs: Vec<Hyperarc>,
}

impl ParametricPDG {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(variables: Vec<Variable>, arcs: Vec<Hyperarc>) -> Result<Self> {
        let mut pdg = ParametricPDG::new();
        for v in variables {
            pdg.add_variable(v.id, v.size)?;
        }
        for a in arcs {
            pdg.add_arc(a)?;
        }
        Ok(pdg)
    }

    pub fn add_variable(&mut self, id: impl Into<String>, size: usize) -> Result<usize> {
        let id = id.into();
        if size == 0 {
            return invalid(format!("variable {id} has an empty domain"));
        }
        if self.variables.iter().any(|v| v.id == id) {
            return invalid(format!("duplicate variable id {id}"));
        }
        self.variables.push(Variable { id, size });
        Ok(self.variables.len() - 1)
    }

    pub fn add_arc(&mut self, mut arc: Hyperarc) -> Result<usize> {
        if self.arcs.iter().any(|a| a.id == arc.id) {
            return invalid(format!("duplicate arc id {}", arc.id));
        }
        if arc.targets.is_empty() {
            return invalid(format!("arc {} has no targets", arc.id));
        }
        let mut seen = Vec::new();
        for &v in arc.sources.iter().chain(&arc.targets) {
            if v >= self.variables.len() {
                return Err(Error::Unknown(format!("variable index {v} in arc {}", arc.id)));
            }
            if seen.contains(&v) {
                return invalid(format!("arc {} mentions variable {} twice", arc.id, self.variables[v].id));
            }
            seen.push(v);
        }
        let (ns, nt) = (self.n_states(&arc.sources), self.n_states(&arc.targets));
        arc.cpd.validate(ns, nt).map_err(|e| Error::Validation(format!("arc {}: {e}", arc.id)))?;
        if arc.cpd.is_learnable() && arc.cpd.default.is_empty() {
            arc.cpd.default = arc.cpd.params.clone();
        }
        self.arcs.push(arc);
        Ok(self.arcs.len() - 1)
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn arcs(&self) -> &[Hyperarc] {
        &self.arcs
    }

    pub fn arc(&self, a: usize) -> &Hyperarc {
        &self.arcs[a]
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn n_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn size(&self, v: usize) -> usize {
        self.variables[v].size
    }

    pub fn sizes(&self, vars: &[usize]) -> Vec<usize> {
        vars.iter().map(|&v| self.variables[v].size).collect()
    }

    pub fn n_states(&self, vars: &[usize]) -> usize {
        vars.iter().map(|&v| self.variables[v].size).product()
    }

    pub fn var_index(&self, id: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v.id == id)
            .ok_or_else(|| Error::Unknown(format!("variable {id}")))
    }

    pub fn arc_index(&self, id: &str) -> Result<usize> {
        self.arcs
            .iter()
            .position(|a| a.id == id)
            .ok_or_else(|| Error::Unknown(format!("arc {id}")))
    }

    pub fn arc_dims(&self, a: usize) -> (usize, usize) {
        let arc = &self.arcs[a];
        (self.n_states(&arc.sources), self.n_states(&arc.targets))
    }

    pub fn cpd_probs(&self, a: usize) -> Result<Vec<f64>> {
        let (ns, nt) = self.arc_dims(a);
        self.arcs[a].cpd.probs(ns, nt)
    }

    pub fn params(&self, a: usize) -> &[f64] {
        &self.arcs[a].cpd.params
    }

    pub fn set_params(&mut self, a: usize, params: Vec<f64>) -> Result<()> {
        let (ns, nt) = self.arc_dims(a);
        let arc = &mut self.arcs[a];
        if !arc.cpd.is_learnable() {
            return invalid(format!("arc {} is not learnable", arc.id));
        }
        if params.len() != arc.cpd.params.len() {
            return invalid(format!("arc {} expects {} parameters", arc.id, arc.cpd.params.len()));
        }
        let old = std::mem::replace(&mut arc.cpd.params, params);
        if let Err(e) = arc.cpd.validate(ns, nt) {
            arc.cpd.params = old;
            return Err(e);
        }
        Ok(())
    }

    pub fn reset_to_defaults(&mut self) {
        for arc in &mut self.arcs {
            if arc.cpd.is_learnable() && !arc.cpd.default.is_empty() {
                arc.cpd.params = arc.cpd.default.clone();
            }
        }
    }

    pub fn learnable_arcs(&self) -> Vec<usize> {
        (0..self.arcs.len()).filter(|&a| self.arcs[a].cpd.is_learnable()).collect()
    }

    /// Offsets of each arc's parameters in the concatenated parameter vector.
    pub fn param_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.arcs.len() + 1);
        let mut acc = 0;
        for a in &self.arcs {
            off.push(acc);
            acc += a.cpd.params.len();
        }
        off.push(acc);
        off
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.arcs.iter().flat_map(|a| a.cpd.params.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let off = self.param_offsets();
        if flat.len() != off[self.arcs.len()] {
            return invalid("flat parameter vector has the wrong length");
        }
        for a in 0..self.arcs.len() {
            if self.arcs[a].cpd.is_learnable() {
                self.set_params(a, flat[off[a]..off[a + 1]].to_vec())?;
            }
        }
        Ok(())
    }

    pub fn variable_ids(&self, vars: &[usize]) -> Vec<String> {
        vars.iter().map(|&v| self.variables[v].id.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tied_rows_expand() {
        let cpd = Cpd::constant_tied(vec![0.2, 0.8, 1.0, 0.0], vec![1, 0, 1]);
        cpd.validate(3, 2).unwrap();
        let p = cpd.probs(3, 2).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.2, 0.8, 1.0, 0.0]);
    }

    #[test]
    fn learnable_grad_matches_finite_difference() {
        let cpd = Cpd::learnable_logits(vec![0.3, -0.2, 1.0, 0.5, f64::NEG_INFINITY, 0.1]);
        let w = vec![0.2, -0.4, 0.7, 0.1, 0.0, 0.3];
        let mut g = vec![0.0; 6];
        cpd.add_log_grad(2, 3, &w, &mut g).unwrap();
        let f = |c: &Cpd| {
            let lp = c.log_probs(2, 3).unwrap();
            lp.iter().zip(&w).filter(|(l, _)| l.is_finite()).map(|(l, w)| l * w).sum::<f64>()
        };
        for i in [0, 1, 2, 3, 5] {
            let mut c = cpd.clone();
            c.params[i] += 1e-6;
            let up = f(&c);
            c.params[i] -= 2e-6;
            let dn = f(&c);
            assert!(((up - dn) / 2e-6 - g[i]).abs() < 1e-6, "param {i}");
        }
        assert_eq!(g[4], 0.0);
    }

    #[test]
    fn linear_softmax_grad_matches_finite_difference() {
        let feats = vec![vec![1.0, 0.5], vec![-0.3, 2.0]];
        let cpd = Cpd::linear_softmax(feats, &[0.1, 0.2, -0.3, 0.4, 0.0, 0.7], &[0.0, 0.1, -0.1]);
        cpd.validate(2, 3).unwrap();
        let w = vec![0.5, 0.1, -0.2, 0.3, 0.3, 0.4];
        let mut g = vec![0.0; 9];
        cpd.add_log_grad(2, 3, &w, &mut g).unwrap();
        for i in 0..9 {
            let mut c = cpd.clone();
            let f = |c: &Cpd| c.log_probs(2, 3).unwrap().iter().zip(&w).map(|(l, w)| l * w).sum::<f64>();
            c.params[i] += 1e-6;
            let up = f(&c);
            c.params[i] -= 2e-6;
            let dn = f(&c);
            assert!(((up - dn) / 2e-6 - g[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_rows_and_overlap() {
        let mut pdg = ParametricPDG::new();
        let x = pdg.add_variable("X", 2).unwrap();
        assert!(pdg.add_arc(Hyperarc::new("p", vec![], vec![x], Cpd::constant(vec![0.3, 0.3]))).is_err());
        assert!(pdg.add_arc(Hyperarc::new("q", vec![x], vec![x], Cpd::constant(vec![0.5; 4]))).is_err());
        assert!(pdg.add_variable("X", 3).is_err());
    }
}
