//! Random chain-plus-conflict PDGs and the refocus-strategy comparison suite.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lir::{lir_run, make_refocus, resolution_percentage, tv_distortion, LirConfig, RefocusKind};
use crate::metrics::mean_std;
use crate::pdg::{Cpd, Hyperarc, ParametricPDG};
use crate::seed::SeedTree;

pub const REFERENCE_SPECS: [&str; 4] = ["chain_4v_3e", "chain_5v_4e", "chain_6v_5e", "chain_7v_6e"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_vars: usize,
    pub m_edges: usize,
    pub domain_sizes: Vec<usize>,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Domain sizes are drawn i.i.d. uniformly from {2, 3}.
    pub fn new(n_vars: usize, m_edges: usize, seed: u64) -> Result<Self> {
        let mut rng = SeedTree::new(seed).rng("synth/domains");
        let domain_sizes = (0..n_vars).map(|_| rng.random_range(2..=3)).collect();
        let spec = GeneratorSpec { n_vars, m_edges, domain_sizes, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses names of the form `chain_<n>v_<m>e`.
    pub fn parse(name: &str, seed: u64) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("spec {name} is not of the form chain_<n>v_<m>e"));
        let rest = name.strip_prefix("chain_").ok_or_else(bad)?;
        let (n, m) = rest.split_once("v_").ok_or_else(bad)?;
        let m = m.strip_suffix('e').ok_or_else(bad)?;
        Self::new(n.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?, seed)
    }

    pub fn name(&self) -> String {
        format!("chain_{}v_{}e", self.n_vars, self.m_edges)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vars < 2 {
            return invalid("a chain needs at least two variables");
        }
        if self.m_edges < 1 {
            return invalid("a chain needs at least one edge");
        }
        if self.m_edges / 2 > self.n_vars - 1 {
            return invalid(format!("{} chain edges do not fit on {} variables", self.m_edges / 2, self.n_vars));
        }
        if self.domain_sizes.len() != self.n_vars || self.domain_sizes.iter().any(|&s| s < 1) {
            return invalid("one positive domain size per variable is required");
        }
        Ok(())
    }
}

fn dirichlet_row<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let z: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= z);
    row
}

/// `⌊m/2⌋` chain edges `X_i → X_{i+1}`, then conflict edges into nodes that
/// are already targets; every cpd row is uniform on the simplex and learnable.
pub fn generate_chain_pdg(spec: &GeneratorSpec) -> Result<ParametricPDG> {
    spec.validate()?;
    let mut rng = SeedTree::new(spec.seed).rng("synth/structure");
    let mut pdg = ParametricPDG::new();
    for (i, &s) in spec.domain_sizes.iter().enumerate() {
        pdg.add_variable(format!("X{}", i + 1), s)?;
    }
    let n_chain = spec.m_edges / 2;
    let mut edges: Vec<(usize, usize)> = (0..n_chain).map(|i| (i, i + 1)).collect();
    let mut targets: Vec<usize> = (1..=n_chain).collect();
    for _ in n_chain..spec.m_edges {
        let mut placed = false;
        for _ in 0..1000 {
            if targets.is_empty() {
                targets.push(rng.random_range(0..spec.n_vars));
            }
            let j = targets[rng.random_range(0..targets.len())];
            let i = rng.random_range(0..spec.n_vars);
            if i != j && !edges.contains(&(i, j)) {
                edges.push((i, j));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Infeasible(format!("could not place {} distinct conflict edges", spec.m_edges - n_chain)));
        }
    }
    for (i, j) in edges {
        let (ns, nt) = (spec.domain_sizes[i], spec.domain_sizes[j]);
        let rows: Vec<f64> = (0..ns).flat_map(|_| dirichlet_row(&mut rng, nt)).collect();
        pdg.add_arc(Hyperarc::new(format!("X{}->X{}", i + 1, j + 1), vec![i], vec![j], Cpd::learnable_probs(&rows)))?;
    }
    Ok(pdg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub pdg: String,
    pub strategy: String,
    pub seed: u64,
    pub init: f64,
    pub final_value: f64,
    pub resolution_pct: Option<f64>,
    pub tv: Option<f64>,
    pub seconds: f64,
    pub inner_iterations: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub runs: usize,
    pub failed: usize,
    pub mean_resolution: f64,
    pub std_resolution: f64,
    pub mean_tv: f64,
    pub std_tv: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentReport {
    pub fn summary(&self) -> Vec<StrategySummary> {
        let mut names: Vec<String> = self.rows.iter().map(|r| r.strategy.clone()).collect();
        names.sort();
        names.dedup();
        names
            .into_iter()
            .map(|s| {
                let rows: Vec<&ExperimentRow> = self.rows.iter().filter(|r| r.strategy == s).collect();
                let res: Vec<f64> = rows.iter().filter_map(|r| r.resolution_pct).collect();
                let tv: Vec<f64> = rows.iter().filter_map(|r| r.tv).collect();
                let (mean_resolution, std_resolution) = mean_std(&res);
                let (mean_tv, std_tv) = mean_std(&tv);
                StrategySummary {
                    strategy: s,
                    runs: rows.len(),
                    failed: rows.iter().filter(|r| r.error.is_some()).count(),
                    mean_resolution,
                    std_resolution,
                    mean_tv,
                    std_tv,
                }
            })
            .collect()
    }

    pub fn mean_resolution(&self, strategy: &str) -> Option<f64> {
        self.summary().into_iter().find(|s| s.strategy == strategy).map(|s| s.mean_resolution)
    }

    /// Columns `(pdg, strategy, seed, init, final, resolution_pct, tv, seconds)`;
    /// failed cells carry `failed` in the resolution column.
    pub fn write_csv<W: Write>(&self, w: W, include_timing: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["pdg", "strategy", "seed", "init", "final", "resolution_pct", "tv", "seconds"])?;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            out.write_record([
                r.pdg.clone(),
                r.strategy.clone(),
                r.seed.to_string(),
                r.init.to_string(),
                r.final_value.to_string(),
                if r.error.is_some() { "failed".to_string() } else { opt(r.resolution_pct) },
                opt(r.tv),
                if include_timing { r.seconds.to_string() } else { "0".to_string() },
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn run_cell(spec_name: &str, kind: &RefocusKind, seed: u64, cfg: &LirConfig) -> ExperimentRow {
    let started = std::time::Instant::now();
    let mut row = ExperimentRow {
        pdg: spec_name.to_string(),
        strategy: kind.name().to_string(),
        seed,
        init: f64::NAN,
        final_value: f64::NAN,
        resolution_pct: None,
        tv: None,
        seconds: 0.0,
        inner_iterations: 0,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let spec = GeneratorSpec::parse(spec_name, seed)?;
        let pdg = generate_chain_pdg(&spec)?;
        let refocus_seed = SeedTree::new(seed).child(kind.name()).seed();
        let mut stream = make_refocus(kind.clone(), &pdg, refocus_seed)?;
        let trace = lir_run(&pdg, &mut stream, cfg)?;
        row.init = trace.initial.value;
        row.final_value = trace.final_.value;
        row.inner_iterations = trace.inner_iterations();
        row.tv = Some(tv_distortion(&trace.initial.mu_star, &trace.final_.mu_star)?);
        row.resolution_pct = Some(resolution_percentage(&trace)?);
        if let Some(msg) = trace.aborted {
            row.error = Some(msg);
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        row.error = Some(e.to_string());
    }
    row.seconds = started.elapsed().as_secs_f64();
    row
}

/// Every (spec, strategy, seed) cell, in that nesting order; cells run in parallel.
pub fn run_strategy_suite(specs: &[String], strategies: &[RefocusKind], seeds: &[u64], cfg: &LirConfig) -> Result<ExperimentReport> {
    if specs.is_empty() || strategies.is_empty() || seeds.is_empty() {
        return invalid("suite needs at least one spec, strategy and seed");
    }
    let cells: Vec<(&String, &RefocusKind, u64)> = specs
        .iter()
        .flat_map(|s| strategies.iter().flat_map(move |k| seeds.iter().map(move |&seed| (s, k, seed))))
        .collect();
    let rows = cells.par_iter().map(|(s, k, seed)| run_cell(s, k, *seed, cfg)).collect();
    Ok(ExperimentReport { rows })
}
