//! Seeded synthetic regression data with a chosen outlier type.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LtsError, Result};
use crate::regress::{default_coverage, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Contamination {
    /// Response shifted, explicative variables untouched.
    Vertical,
    /// Explicative variables shifted, response kept on the hyperplane.
    GoodLeverage,
    /// Explicative variables shifted, response left as generated.
    HighLeverage,
    /// Independent Laplace draws added to each explicative variable.
    HeavyTail,
}

impl Contamination {
    pub const ALL: [Contamination; 4] =
        [Contamination::Vertical, Contamination::GoodLeverage, Contamination::HighLeverage, Contamination::HeavyTail];

    pub fn name(self) -> &'static str {
        match self {
            Contamination::Vertical => "vertical",
            Contamination::GoodLeverage => "good-leverage",
            Contamination::HighLeverage => "high-leverage",
            Contamination::HeavyTail => "heavy-tail",
        }
    }
}

impl std::str::FromStr for Contamination {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Contamination::ALL
            .into_iter()
            .find(|c| c.name() == s.to_ascii_lowercase().replace('_', "-"))
            .ok_or_else(|| format!("unknown contamination type '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n: usize,
    pub d: usize,
    pub n_outliers: usize,
    pub contamination: Contamination,
    pub beta_true: Vec<f64>,
    pub noise_sd: f64,
    /// Added to every coordinate of a leverage row, or to `y` of a vertical one.
    pub shift_magnitude: f64,
    pub laplace_scale: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(n: usize, d: usize, contamination: Contamination, seed: u64) -> Self {
        Self {
            n,
            d,
            n_outliers: 10.min(n),
            contamination,
            beta_true: vec![1.0; d],
            noise_sd: 1.0,
            shift_magnitude: 10.0,
            laplace_scale: 5.0,
            seed,
        }
    }

    pub fn with_outliers(mut self, k: usize) -> Self {
        self.n_outliers = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LtsError::InvalidSpec(msg));
        if self.n == 0 || self.d == 0 {
            return bad("n and d must be positive".into());
        }
        if self.n_outliers > self.n {
            return bad(format!("{} outliers requested for n = {}", self.n_outliers, self.n));
        }
        if self.beta_true.len() != self.d {
            return bad(format!("beta_true has length {}, expected {}", self.beta_true.len(), self.d));
        }
        if self.beta_true.iter().any(|b| !b.is_finite()) || !self.shift_magnitude.is_finite() {
            return bad("beta_true and shift must be finite".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd = {} must be finite and non-negative", self.noise_sd));
        }
        if !(self.laplace_scale > 0.0 && self.laplace_scale.is_finite()) {
            return bad(format!("laplace_scale = {} must be positive", self.laplace_scale));
        }
        Ok(())
    }
}

/// What the generator knows: coefficients and contaminated rows (0-based, ascending).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta_true: Vec<f64>,
    pub outliers: Vec<usize>,
}

/// Laplace(0, b) by inverse CDF.
fn laplace(rng: &mut impl Rng, b: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn generate(spec: &GenSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);
    if spec.n_outliers > 0 && n >= d && spec.n_outliers + default_coverage(n, d) > n {
        warn!("{} outliers exceed the breakdown point for n = {n}, d = {d}", spec.n_outliers);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let beta = DVector::from_column_slice(&spec.beta_true);

    // Row-major draws so the stream does not depend on storage order.
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            x[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let noise: Vec<f64> = (0..n).map(|_| spec.noise_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut y = DVector::from_fn(n, |i, _| x.row(i).transpose().dot(&beta) + noise[i]);

    let mut outliers = sample(&mut rng, n, spec.n_outliers).into_vec();
    outliers.sort_unstable();
    for &i in &outliers {
        match spec.contamination {
            Contamination::Vertical => y[i] += spec.shift_magnitude,
            Contamination::HighLeverage => x.row_mut(i).add_scalar_mut(spec.shift_magnitude),
            Contamination::GoodLeverage => {
                x.row_mut(i).add_scalar_mut(spec.shift_magnitude);
                y[i] = x.row(i).transpose().dot(&beta) + noise[i];
            }
            Contamination::HeavyTail => {
                for j in 0..d {
                    x[(i, j)] += laplace(&mut rng, spec.laplace_scale);
                }
            }
        }
    }
    let data = Dataset::new(x, y).map_err(|e| LtsError::InvalidSpec(e.to_string()))?;
    Ok((data, GroundTruth { beta_true: spec.beta_true.clone(), outliers }))
}

/// One generated benchmark instance.
#[derive(Debug, Clone)]
pub struct SuiteItem {
    pub spec: GenSpec,
    pub data: Dataset,
    pub truth: GroundTruth,
}

/// `reps` datasets per `(n, d, type)` cell, in that nesting order. Seeds are
/// drawn from a generator keyed by `seed`, so cells are decorrelated. The
/// outlier count is clipped to `n`.
pub fn benchmark_suite(
    n_list: &[usize],
    d_list: &[usize],
    types: &[Contamination],
    reps: usize,
    seed: u64,
    n_outliers: usize,
) -> Result<Vec<SuiteItem>> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_list.len() * d_list.len() * types.len() * reps);
    for &n in n_list {
        for &d in d_list {
            for &ty in types {
                for _ in 0..reps {
                    let spec = GenSpec::new(n, d, ty, master.next_u64()).with_outliers(n_outliers.min(n));
                    let (data, truth) = generate(&spec)?;
                    out.push(SuiteItem { spec, data, truth });
                }
            }
        }
    }
    Ok(out)
}
