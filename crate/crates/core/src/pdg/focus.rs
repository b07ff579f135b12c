use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ParametricPDG;
use crate::error::{invalid, Error, Result};

/// Attention (β), structural weights (α), qualitative weight (γ), and control
/// (χ) for every arc.
///
/// `beta_rows` overrides β per source state of an arc; `chi_params` overrides
/// χ per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Focus {
    pub alpha: Vec<f64>,
    #[serde(with = "ext_real::vec")]
    pub beta: Vec<f64>,
    pub gamma: f64,
    #[serde(with = "ext_real::vec")]
    pub chi: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub beta_rows: BTreeMap<usize, Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty", with = "ext_real::map")]
    pub chi_params: BTreeMap<usize, Vec<f64>>,
}

impl Focus {
    /// α = β = χ = 1 on every arc, γ = 0.
    pub fn uniform(n_arcs: usize) -> Self {
        Focus {
            alpha: vec![1.0; n_arcs],
            beta: vec![1.0; n_arcs],
            gamma: 0.0,
            chi: vec![1.0; n_arcs],
            beta_rows: BTreeMap::new(),
            chi_params: BTreeMap::new(),
        }
    }

    pub fn from_beta(beta: Vec<f64>) -> Self {
        let n = beta.len();
        Focus { beta, ..Focus::uniform(n) }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_alpha(mut self, alpha: Vec<f64>) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_chi(mut self, chi: Vec<f64>) -> Self {
        self.chi = chi;
        self
    }

    pub fn n_arcs(&self) -> usize {
        self.beta.len()
    }

    pub fn is_hard(&self, a: usize) -> bool {
        self.beta[a] == f64::INFINITY && !self.beta_rows.contains_key(&a)
    }

    /// β for each source state of arc `a`.
    pub fn row_betas(&self, a: usize, n_src: usize) -> Vec<f64> {
        match self.beta_rows.get(&a) {
            Some(rows) => rows.clone(),
            None => vec![self.beta[a]; n_src],
        }
    }

    /// Whether arc `a` contributes to the scoring function at all.
    pub fn is_active(&self, a: usize) -> bool {
        let beta_on = match self.beta_rows.get(&a) {
            Some(rows) => rows.iter().any(|b| *b != 0.0),
            None => self.beta[a] != 0.0,
        };
        beta_on || self.gamma * self.alpha[a] != 0.0
    }

    pub fn chi_param(&self, a: usize, i: usize) -> f64 {
        self.chi_params.get(&a).map_or(self.chi[a], |c| c[i])
    }

    pub fn validate(&self, pdg: &ParametricPDG) -> Result<()> {
        let n = pdg.n_arcs();
        if self.alpha.len() != n || self.beta.len() != n || self.chi.len() != n {
            return invalid(format!("focus vectors must have one entry per arc ({n})"));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return invalid("gamma must be finite and non-negative");
        }
        for a in 0..n {
            let id = &pdg.arc(a).id;
            if !self.alpha[a].is_finite() {
                return invalid(format!("alpha of arc {id} must be finite"));
            }
            if self.beta[a].is_nan() || self.beta[a] == f64::NEG_INFINITY {
                return invalid(format!("beta of arc {id} must be a real number or +inf"));
            }
            if self.chi[a].is_nan() || self.chi[a] < 0.0 {
                return invalid(format!("chi of arc {id} must be non-negative"));
            }
        }
        for (&a, rows) in &self.beta_rows {
            if a >= n {
                return Err(Error::Unknown(format!("beta_rows arc index {a}")));
            }
            let (ns, _) = pdg.arc_dims(a);
            if rows.len() != ns || rows.iter().any(|b| !b.is_finite()) {
                return invalid(format!("beta_rows for arc {} must be {ns} finite values", pdg.arc(a).id));
            }
        }
        for (&a, c) in &self.chi_params {
            if a >= n {
                return Err(Error::Unknown(format!("chi_params arc index {a}")));
            }
            if c.len() != pdg.arc(a).cpd.param_len() || c.iter().any(|x| x.is_nan() || *x < 0.0) {
                return invalid(format!("chi_params for arc {} malformed", pdg.arc(a).id));
            }
        }
        if self.gamma > 0.0 {
            for a in 0..n {
                let ga = self.gamma * self.alpha[a];
                let min_beta = match self.beta_rows.get(&a) {
                    Some(rows) => rows.iter().copied().fold(f64::INFINITY, f64::min),
                    None => self.beta[a],
                };
                if min_beta < ga - 1e-12 {
                    return Err(Error::NonConvex { arc: pdg.arc(a).id.clone(), beta: min_beta, ga });
                }
            }
        }
        Ok(())
    }
}

/// Serde support for extended reals: non-finite values are written as the
/// strings `"inf"`, `"-inf"`, `"nan"`.
pub mod ext_real {
    use serde::de::{self, Deserializer, Visitor};
    use serde::{Deserialize, Serialize, Serializer};
    use std::fmt;

    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct ExtReal(pub f64);

    impl Serialize for ExtReal {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            let v = self.0;
            if v.is_finite() {
                s.serialize_f64(v)
            } else if v.is_nan() {
                s.serialize_str("nan")
            } else if v > 0.0 {
                s.serialize_str("inf")
            } else {
                s.serialize_str("-inf")
            }
        }
    }

    struct ExtVisitor;

    impl Visitor<'_> for ExtVisitor {
        type Value = ExtReal;
        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }
        fn visit_f64<E: de::Error>(self, v: f64) -> Result<ExtReal, E> {
            Ok(ExtReal(v))
        }
        fn visit_i64<E: de::Error>(self, v: i64) -> Result<ExtReal, E> {
            Ok(ExtReal(v as f64))
        }
        fn visit_u64<E: de::Error>(self, v: u64) -> Result<ExtReal, E> {
            Ok(ExtReal(v as f64))
        }
        fn visit_str<E: de::Error>(self, v: &str) -> Result<ExtReal, E> {
            match v {
                "inf" | "+inf" | "Infinity" => Ok(ExtReal(f64::INFINITY)),
                "-inf" | "-Infinity" => Ok(ExtReal(f64::NEG_INFINITY)),
                "nan" | "NaN" => Ok(ExtReal(f64::NAN)),
                _ => Err(E::custom(format!("not an extended real: {v}"))),
            }
        }
    }

    impl<'de> Deserialize<'de> for ExtReal {
        fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            d.deserialize_any(ExtVisitor)
        }
    }

    pub mod vec {
        use super::ExtReal;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|x| ExtReal(*x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<ExtReal>::deserialize(d)?.into_iter().map(|x| x.0).collect())
        }
    }

    pub mod map {
        use super::ExtReal;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};
        use std::collections::BTreeMap;

        pub fn serialize<S: Serializer>(m: &BTreeMap<usize, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
            m.iter()
                .map(|(k, v)| (*k, v.iter().map(|x| ExtReal(*x)).collect::<Vec<_>>()))
                .collect::<BTreeMap<_, _>>()
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, Vec<f64>>, D::Error> {
            Ok(BTreeMap::<usize, Vec<ExtReal>>::deserialize(d)?
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().map(|x| x.0).collect()))
                .collect())
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        ExtReal(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(ExtReal::deserialize(d)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_attention_round_trips() {
        let mut f = Focus::uniform(2);
        f.beta[1] = f64::INFINITY;
        f.chi[0] = f64::INFINITY;
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("\"inf\""));
        let back: Focus = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
    }
}
