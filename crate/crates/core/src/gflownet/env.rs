use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Added to every reward before logs are taken.
pub const REWARD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub d: usize,
    pub height: usize,
}

impl HyperGrid {
    pub fn new(d: usize, height: usize) -> Result<Self> {
        if d == 0 || height < 2 {
            return invalid("hypergrid needs d ≥ 1 and height ≥ 2");
        }
        match height.checked_pow(d as u32) {
            Some(n) if n <= 10_000_000 => Ok(HyperGrid { d, height }),
            _ => invalid(format!("hypergrid {height}^{d} exceeds 10^7 states")),
        }
    }

    pub fn n_states(&self) -> usize {
        self.height.pow(self.d as u32)
    }

    /// Actions `0..d` increment a coordinate; action `d` terminates.
    pub fn n_actions(&self) -> usize {
        self.d + 1
    }

    pub fn terminate(&self) -> usize {
        self.d
    }

    /// First coordinate varies slowest, so every increment raises the index.
    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.height + c)
    }

    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let mut c = vec![0; self.d];
        for slot in c.iter_mut().rev() {
            *slot = index % self.height;
            index /= self.height;
        }
        c
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.height.pow((self.d - 1 - axis) as u32)
    }

    pub fn valid_actions(&self, index: usize) -> Vec<bool> {
        let c = self.coords(index);
        let mut v: Vec<bool> = c.iter().map(|&x| x + 1 < self.height).collect();
        v.push(true);
        v
    }

    pub fn n_parents(&self, index: usize) -> usize {
        self.coords(index).iter().filter(|&&x| x > 0).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardVariant {
    Original,
    Cosine,
    Xor,
    Coprime,
}

impl FromStr for RewardVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(RewardVariant::Original),
            "cosine" => Ok(RewardVariant::Cosine),
            "xor" | "bitwise-xor" => Ok(RewardVariant::Xor),
            "coprime" | "multiplicative-coprime" => Ok(RewardVariant::Coprime),
            _ => Err(Error::InvalidArgument(format!("unknown reward environment '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    pub variant: RewardVariant,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    /// Closeness factor for cosine modes.
    pub gamma_close: f64,
    pub tier_weights: Vec<f64>,
    /// Inclusive bit-plane ranges, one per tier.
    pub bit_ranges: Vec<(u32, u32)>,
    pub primes: Vec<usize>,
    /// Exponent cap per tier.
    pub exponent_caps: Vec<u32>,
    pub floor: f64,
}

impl RewardSpec {
    pub fn new(variant: RewardVariant) -> Self {
        RewardSpec {
            variant,
            r0: 0.1,
            r1: 0.5,
            r2: 2.0,
            gamma_close: 0.8,
            tier_weights: vec![1.0, 10.0, 100.0],
            bit_ranges: vec![(0, 5), (0, 7), (0, 9)],
            primes: vec![2, 3, 5],
            exponent_caps: vec![2, 2, 2],
            floor: REWARD_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.floor > 0.0) {
            return invalid("reward floor must be positive");
        }
        let tiers = self.tier_weights.len();
        if self.variant == RewardVariant::Xor && self.bit_ranges.len() != tiers {
            return invalid("xor reward needs one bit range per tier");
        }
        if self.variant == RewardVariant::Coprime && (self.exponent_caps.len() != tiers || self.primes.is_empty()) {
            return invalid("coprime reward needs primes and one exponent cap per tier");
        }
        if [self.r0, self.r1, self.r2].iter().chain(&self.tier_weights).any(|w| *w < 0.0) {
            return invalid("reward constants must be non-negative");
        }
        Ok(())
    }

    fn tiered(&self, satisfied: impl Fn(usize) -> bool) -> f64 {
        let mut total = 0.0;
        for (t, w) in self.tier_weights.iter().enumerate() {
            if !satisfied(t) {
                break;
            }
            total += w;
        }
        total
    }

    /// Unfloored reward.
    pub fn reward(&self, grid: &HyperGrid, coords: &[usize]) -> f64 {
        let a = |x: usize| (x as f64 / (grid.height - 1) as f64 - 0.5).abs();
        match self.variant {
            RewardVariant::Original => {
                let outer = coords.iter().all(|&x| a(x) > 0.25);
                let inner = coords.iter().all(|&x| 0.3 < a(x) && a(x) < 0.4);
                self.r0 + self.r1 * f64::from(u8::from(outer)) + self.r2 * f64::from(u8::from(inner))
            }
            RewardVariant::Cosine => self.r0 + self.r1 * coords.iter().map(|&x| cosine_factor(a(x))).product::<f64>(),
            RewardVariant::Xor => self.tiered(|t| {
                let (lo, hi) = self.bit_ranges[t];
                let parity = coords.iter().fold(0usize, |acc, &x| acc ^ x);
                (lo..=hi).all(|b| b >= usize::BITS || (parity >> b) & 1 == 0)
            }),
            RewardVariant::Coprime => {
                self.tiered(|t| coords.iter().all(|&x| factors_within(x, &self.primes, self.exponent_caps[t])))
            }
        }
    }

    pub fn floored(&self, grid: &HyperGrid, coords: &[usize]) -> f64 {
        self.reward(grid, coords) + self.floor
    }

    pub fn log_reward(&self, grid: &HyperGrid, index: usize) -> f64 {
        self.floored(grid, &grid.coords(index)).ln()
    }

    /// Smallest reward a mode must reach on this grid.
    pub fn mode_threshold(&self, grid: &HyperGrid) -> f64 {
        match self.variant {
            RewardVariant::Original => self.r0 + self.r1 + self.r2,
            RewardVariant::Cosine => {
                let f_max = (0..grid.height)
                    .map(|x| cosine_factor((x as f64 / (grid.height - 1) as f64 - 0.5).abs()))
                    .fold(0.0, f64::max);
                self.r0 + (self.gamma_close * f_max).powi(grid.d as i32) * self.r1
            }
            RewardVariant::Xor | RewardVariant::Coprime => self.tier_weights.iter().sum(),
        }
    }

    pub fn is_mode(&self, grid: &HyperGrid, coords: &[usize]) -> bool {
        self.reward(grid, coords) >= self.mode_threshold(grid) - 1e-12
    }
}

/// `(cos 50a + 1)·φ(5a)` with φ the standard normal density.
pub fn cosine_factor(a: f64) -> f64 {
    let z = 5.0 * a;
    ((50.0 * a).cos() + 1.0) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn factors_within(mut x: usize, primes: &[usize], cap: u32) -> bool {
    if x == 0 {
        return false;
    }
    for &p in primes {
        let mut e = 0;
        while x % p == 0 {
            x /= p;
            e += 1;
        }
        if e > cap {
            return false;
        }
    }
    x == 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub count: usize,
    pub states: Vec<usize>,
}

pub fn enumerate_modes(spec: &RewardSpec, grid: &HyperGrid) -> Result<ModeSet> {
    spec.validate()?;
    let threshold = spec.mode_threshold(grid);
    let states: Vec<usize> =
        (0..grid.n_states()).filter(|&i| spec.reward(grid, &grid.coords(i)) >= threshold - 1e-12).collect();
    Ok(ModeSet { count: states.len(), states })
}
