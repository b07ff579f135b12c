use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::pdg::{Focus, ParametricPDG};
use crate::seed::SeedTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefocusKind {
    FixedCycle(Vec<Focus>),
    Uniform,
    Partial(f64),
    Hub,
    SmoothExponential(f64),
}

impl RefocusKind {
    pub fn name(&self) -> &'static str {
        match self {
            RefocusKind::FixedCycle(_) => "fixed_cycle",
            RefocusKind::Uniform => "uniform",
            RefocusKind::Partial(_) => "partial",
            RefocusKind::Hub => "hub",
            RefocusKind::SmoothExponential(_) => "smooth",
        }
    }

    /// Named strategies with the default parameters (half the arcs for
    /// `partial`, rate 1 for `smooth`).
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "uniform" => Ok(RefocusKind::Uniform),
            "partial" => Ok(RefocusKind::Partial(0.5)),
            "hub" => Ok(RefocusKind::Hub),
            "smooth" => Ok(RefocusKind::SmoothExponential(1.0)),
            _ => invalid(format!("unknown refocus strategy {name} (expected uniform|partial|hub|smooth)")),
        }
    }
}

type Callback = Box<dyn FnMut(usize) -> Focus + Send>;

enum Source {
    Kind(RefocusKind),
    Custom(Callback),
}

/// A reproducible stream of foci.
pub struct FocusStream {
    source: Source,
    rng: ChaCha8Rng,
    n_arcs: usize,
    incidence: Vec<Vec<usize>>,
    step: usize,
}

impl std::fmt::Debug for FocusStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match &self.source {
            Source::Kind(k) => k.name(),
            Source::Custom(_) => "custom",
        };
        f.debug_struct("FocusStream").field("kind", &name).field("step", &self.step).finish()
    }
}

pub fn make_refocus(kind: RefocusKind, pdg: &ParametricPDG, seed: u64) -> Result<FocusStream> {
    if pdg.n_arcs() == 0 {
        return invalid("refocusing needs at least one arc");
    }
    match &kind {
        RefocusKind::Partial(f) if !(*f > 0.0 && *f <= 1.0) => {
            return invalid(format!("partial fraction {f} must lie in (0, 1]"))
        }
        RefocusKind::SmoothExponential(r) if !(*r > 0.0 && r.is_finite()) => {
            return invalid("exponential rate must be positive")
        }
        RefocusKind::FixedCycle(c) if c.is_empty() => return invalid("fixed cycle needs at least one focus"),
        RefocusKind::FixedCycle(c) => {
            for f in c {
                f.validate(pdg)?;
            }
        }
        _ => {}
    }
    let mut incidence = vec![Vec::new(); pdg.n_vars()];
    for (a, arc) in pdg.arcs().iter().enumerate() {
        for &v in arc.sources.iter().chain(&arc.targets) {
            incidence[v].push(a);
        }
    }
    Ok(FocusStream {
        rng: SeedTree::new(seed).rng(&format!("refocus/{}", kind.name())),
        source: Source::Kind(kind),
        n_arcs: pdg.n_arcs(),
        incidence,
        step: 0,
    })
}

/// A stream driven by a caller-supplied function of the step index.
pub fn custom_refocus(n_arcs: usize, callback: impl FnMut(usize) -> Focus + Send + 'static) -> FocusStream {
    FocusStream {
        source: Source::Custom(Box::new(callback)),
        rng: SeedTree::new(0).rng("refocus/custom"),
        n_arcs,
        incidence: vec![],
        step: 0,
    }
}

impl FocusStream {
    pub fn next_focus(&mut self) -> Focus {
        let t = self.step;
        self.step += 1;
        let n = self.n_arcs;
        let mut beta = vec![0.0; n];
        match &mut self.source {
            Source::Custom(cb) => return cb(t),
            Source::Kind(RefocusKind::FixedCycle(c)) => return c[t % c.len()].clone(),
            Source::Kind(RefocusKind::Uniform) => beta.iter_mut().for_each(|b| *b = 1.0),
            Source::Kind(RefocusKind::Partial(f)) => {
                let k = ((*f * n as f64).floor() as usize).max(1);
                for a in sample(&mut self.rng, n, k).into_iter() {
                    beta[a] = 1.0;
                }
            }
            Source::Kind(RefocusKind::Hub) => {
                let nodes: Vec<usize> = (0..self.incidence.len()).filter(|&v| !self.incidence[v].is_empty()).collect();
                let v = nodes[self.rng.random_range(0..nodes.len())];
                for &a in &self.incidence[v] {
                    beta[a] = 1.0;
                }
            }
            Source::Kind(RefocusKind::SmoothExponential(rate)) => {
                let exp = Exp::new(*rate).expect("validated rate");
                beta.iter_mut().for_each(|b| *b = exp.sample(&mut self.rng));
            }
        }
        Focus::from_beta(beta)
    }
}
