//! JSON document format for PDGs.
//!
//! ```json
//! {"variables": [{"id": "X", "size": 2}],
//!  "arcs": [{"id": "p", "src": [], "tgt": ["X"], "kind": "constant_table",
//!            "table": [0.9, 0.1], "alpha": 1, "beta": 1}]}
//! ```
//! Learnable tables accept either `table` (probabilities) or `params` (logits).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::focus::ext_real;
use super::{Cpd, CpdKind, Focus, Hyperarc, ParametricPDG, Variable};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    ConstantTable,
    LearnableTable,
    LinearSoftmax,
    IsotropicGaussianMean,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcDoc {
    pub id: String,
    #[serde(default)]
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub kind: KindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_ext_vec")]
    pub params: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_ext_vec")]
    pub default: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_map: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one", with = "ext_real")]
    pub beta: f64,
    #[serde(default = "one", with = "ext_real")]
    pub chi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdgDoc {
    pub variables: Vec<Variable>,
    pub arcs: Vec<ArcDoc>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub beta_rows: BTreeMap<String, Vec<f64>>,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

mod opt_ext_vec {
    use super::ext_real::ExtReal;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|v| v.iter().map(|x| ExtReal(*x)).collect::<Vec<_>>()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        Ok(Option::<Vec<ExtReal>>::deserialize(d)?.map(|v| v.into_iter().map(|x| x.0).collect()))
    }
}

fn resolve(pdg: &ParametricPDG, ids: &[String], arc: &str) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            pdg.var_index(id)
                .map_err(|_| Error::Validation(format!("arc {arc} refers to unknown variable {id}")))
        })
        .collect()
}

impl PdgDoc {
    pub fn into_pdg(self) -> Result<(ParametricPDG, Focus)> {
        let mut pdg = ParametricPDG::new();
        for v in &self.variables {
            pdg.add_variable(v.id.clone(), v.size)?;
        }
        let mut alpha = Vec::new();
        let mut beta = Vec::new();
        let mut chi = Vec::new();
        for a in self.arcs {
            let sources = resolve(&pdg, &a.src, &a.id)?;
            let targets = resolve(&pdg, &a.tgt, &a.id)?;
            let need = |what: &str, v: Option<Vec<f64>>| {
                v.ok_or_else(|| Error::Validation(format!("arc {} of kind {:?} needs `{what}`", a.id, a.kind)))
            };
            let mut cpd = match a.kind {
                KindName::ConstantTable => {
                    let rows = need("table", a.table.clone())?;
                    Cpd { kind: CpdKind::ConstantTable { rows, row_map: a.row_map.clone() }, params: vec![], default: vec![] }
                }
                KindName::LearnableTable => {
                    let logits = match (&a.params, &a.table) {
                        (Some(p), _) => p.clone(),
                        (None, Some(t)) => {
                            if t.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                                return invalid(format!("arc {}: table entries must be non-negative", a.id));
                            }
                            t.iter().map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY }).collect()
                        }
                        _ => return invalid(format!("arc {} needs `table` or `params`", a.id)),
                    };
                    Cpd { kind: CpdKind::LearnableTable { row_map: a.row_map.clone() }, params: logits, default: vec![] }
                }
                KindName::LinearSoftmax => Cpd {
                    kind: CpdKind::LinearSoftmax { features: a.features.clone().ok_or_else(|| Error::Validation(format!("arc {} needs `features`", a.id)))? },
                    params: need("params", a.params.clone())?,
                    default: vec![],
                },
                KindName::IsotropicGaussianMean => {
                    let params = need("params", a.params.clone())?;
                    Cpd {
                        kind: CpdKind::IsotropicGaussianMean { dim: params.len(), variance: a.variance.unwrap_or(1.0) },
                        params,
                        default: vec![],
                    }
                }
            };
            if let Some(d) = a.default.clone() {
                cpd.default = d;
            }
            if matches!(a.kind, KindName::LearnableTable) {
                if let Some(t) = &a.table {
                    let z_ok = t.chunks(pdg.n_states(&targets).max(1)).all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                    if !z_ok {
                        return invalid(format!("arc {}: cpd rows must sum to 1", a.id));
                    }
                }
            }
            pdg.add_arc(Hyperarc::new(a.id.clone(), sources, targets, cpd))?;
            alpha.push(a.alpha);
            beta.push(a.beta);
            chi.push(a.chi);
        }
        let mut focus = Focus { alpha, beta, gamma: self.gamma, chi, ..Focus::uniform(0) };
        for (id, rows) in self.beta_rows {
            focus.beta_rows.insert(pdg.arc_index(&id)?, rows);
        }
        focus.validate(&pdg)?;
        Ok((pdg, focus))
    }

    pub fn from_pdg(pdg: &ParametricPDG, focus: &Focus) -> PdgDoc {
        let ids = |vs: &[usize]| pdg.variable_ids(vs);
        let arcs = pdg
            .arcs()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut doc = ArcDoc {
                    id: a.id.clone(),
                    src: ids(&a.sources),
                    tgt: ids(&a.targets),
                    kind: KindName::ConstantTable,
                    table: None,
                    params: None,
                    default: None,
                    row_map: None,
                    features: None,
                    variance: None,
                    alpha: focus.alpha[i],
                    beta: focus.beta[i],
                    chi: focus.chi[i],
                };
                match &a.cpd.kind {
                    CpdKind::ConstantTable { rows, row_map } => {
                        doc.table = Some(rows.clone());
                        doc.row_map = row_map.clone();
                    }
                    CpdKind::LearnableTable { row_map } => {
                        doc.kind = KindName::LearnableTable;
                        doc.params = Some(a.cpd.params.clone());
                        doc.row_map = row_map.clone();
                    }
                    CpdKind::LinearSoftmax { features } => {
                        doc.kind = KindName::LinearSoftmax;
                        doc.params = Some(a.cpd.params.clone());
                        doc.features = Some(features.clone());
                    }
                    CpdKind::IsotropicGaussianMean { variance, .. } => {
                        doc.kind = KindName::IsotropicGaussianMean;
                        doc.params = Some(a.cpd.params.clone());
                        doc.variance = Some(*variance);
                    }
                }
                if a.cpd.is_learnable() && a.cpd.default != a.cpd.params {
                    doc.default = Some(a.cpd.default.clone());
                }
                doc
            })
            .collect();
        PdgDoc {
            variables: pdg.variables().to_vec(),
            arcs,
            gamma: focus.gamma,
            beta_rows: focus.beta_rows.iter().map(|(a, r)| (pdg.arc(*a).id.clone(), r.clone())).collect(),
        }
    }
}

pub fn from_json_str(s: &str) -> Result<(ParametricPDG, Focus)> {
    let doc: PdgDoc = serde_json::from_str(s)?;
    doc.into_pdg()
}

pub fn to_json_string(pdg: &ParametricPDG, focus: &Focus) -> Result<String> {
    Ok(serde_json::to_string_pretty(&PdgDoc::from_pdg(pdg, focus))?)
}

pub fn load(path: &Path) -> Result<(ParametricPDG, Focus)> {
    from_json_str(&std::fs::read_to_string(path)?)
}

pub fn save(path: &Path, pdg: &ParametricPDG, focus: &Focus) -> Result<()> {
    std::fs::write(path, to_json_string(pdg, focus)? + "\n")?;
    Ok(())
}
