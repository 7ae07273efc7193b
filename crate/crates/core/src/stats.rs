//! Binomial, chi-square and moment summaries used by reports and checks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{validation, Result};

/// Binomial check of an observed count against an expected probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinomialCheck {
    pub count: u64,
    pub trials: u64,
    pub expected: f64,
    pub frequency: f64,
    /// Standard deviation of the frequency under the expected probability.
    pub sigma: f64,
    pub z: f64,
}

impl BinomialCheck {
    pub fn new(count: u64, trials: u64, expected: f64) -> Result<Self> {
        if trials == 0 {
            return Err(validation("binomial check needs at least one trial"));
        }
        if !(0.0..=1.0).contains(&expected) {
            return Err(validation(format!("expected probability {expected} outside [0, 1]")));
        }
        let n = trials as f64;
        let frequency = count as f64 / n;
        let sigma = (expected * (1.0 - expected) / n).sqrt();
        let z = if sigma > 0.0 {
            (frequency - expected) / sigma
        } else if frequency == expected {
            0.0
        } else {
            f64::INFINITY
        };
        Ok(BinomialCheck { count, trials, expected, frequency, sigma, z })
    }

    pub fn within(&self, sigmas: f64) -> bool {
        self.z.abs() <= sigmas
    }
}

/// Chi-square statistic with its degrees of freedom and upper-tail p-value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: u64,
    pub p_value: f64,
}

fn upper_tail(statistic: f64, dof: u64) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    dist.sf(statistic)
}

/// Goodness of fit of `observed` counts against category probabilities.
/// Categories with zero expected probability must have zero counts and are
/// dropped from the degrees of freedom.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> Result<ChiSquareTest> {
    if observed.len() != probs.len() || observed.is_empty() {
        return Err(validation("one probability per category required"));
    }
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(validation("no observations"));
    }
    let n = total as f64;
    let mut statistic = 0.0;
    let mut used = 0u64;
    for (&o, &p) in observed.iter().zip(probs) {
        if p <= 0.0 {
            if o > 0 {
                return Ok(ChiSquareTest { statistic: f64::INFINITY, dof: 0, p_value: 0.0 });
            }
            continue;
        }
        let e = n * p;
        statistic += (o as f64 - e).powi(2) / e;
        used += 1;
    }
    let dof = used.saturating_sub(1);
    Ok(ChiSquareTest { statistic, dof, p_value: upper_tail(statistic, dof) })
}

/// Homogeneity of several count rows over the same categories. Columns that
/// are empty in every row are ignored; dof = (rows − 1)(used columns − 1).
pub fn chi_square_homogeneity(rows: &[Vec<u64>]) -> Result<ChiSquareTest> {
    if rows.is_empty() {
        return Err(validation("no rows"));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(validation("rows have different lengths"));
    }
    let row_totals: Vec<f64> = rows.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    if row_totals.contains(&0.0) {
        return Err(validation("empty row"));
    }
    let col_totals: Vec<f64> = (0..cols).map(|j| rows.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let grand: f64 = row_totals.iter().sum();
    let used: Vec<usize> = (0..cols).filter(|&j| col_totals[j] > 0.0).collect();
    let mut statistic = 0.0;
    for (i, r) in rows.iter().enumerate() {
        for &j in &used {
            let e = row_totals[i] * col_totals[j] / grand;
            statistic += (r[j] as f64 - e).powi(2) / e;
        }
    }
    let dof = (rows.len() as u64 - 1) * (used.len() as u64).saturating_sub(1);
    Ok(ChiSquareTest { statistic, dof, p_value: upper_tail(statistic, dof) })
}

/// Streaming mean and variance (Welford), mergeable across workers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(mut self, other: Moments) -> Moments {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.mean += delta * other.count as f64 / n;
        self.count += other.count;
        self
    }

    /// Sample variance (n − 1 denominator).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        iter.into_iter().for_each(|x| m.push(x));
        m
    }
}
