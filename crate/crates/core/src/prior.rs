//! Exogenous noise priors.

use serde::{Deserialize, Serialize};

use crate::value::ValueKind;

/// Distribution of one exogenous node instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum NoisePrior {
    Uniform { lo: f64, hi: f64 },
    Bernoulli { p: f64 },
    Gaussian { mean: f64, stddev: f64 },
}

impl NoisePrior {
    pub fn unit_uniform() -> Self {
        NoisePrior::Uniform { lo: 0.0, hi: 1.0 }
    }

    /// Checks the parameter invariants, returning a description on failure.
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            NoisePrior::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite()) {
                    Err(format!("uniform bounds must be finite, got ({lo}, {hi})"))
                } else if lo >= hi {
                    Err(format!("uniform requires lo < hi, got ({lo}, {hi})"))
                } else {
                    Ok(())
                }
            }
            NoisePrior::Bernoulli { p } => {
                if (0.0..=1.0).contains(&p) {
                    Ok(())
                } else {
                    Err(format!("bernoulli requires 0 <= p <= 1, got {p}"))
                }
            }
            NoisePrior::Gaussian { mean, stddev } => {
                if !mean.is_finite() {
                    Err(format!("gaussian mean must be finite, got {mean}"))
                } else if !(stddev >= 0.0 && stddev.is_finite()) {
                    Err(format!("gaussian requires finite stddev >= 0, got {stddev}"))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn kind(&self) -> ValueKind {
        match self {
            NoisePrior::Bernoulli { .. } => ValueKind::Binary,
            _ => ValueKind::Real,
        }
    }

    /// Transforms two open-interval uniforms into a draw from the prior.
    pub fn sample(&self, u1: f64, u2: f64) -> f64 {
        match *self {
            NoisePrior::Uniform { lo, hi } => lo + (hi - lo) * u1,
            NoisePrior::Bernoulli { p } => {
                if u1 < p {
                    1.0
                } else {
                    0.0
                }
            }
            NoisePrior::Gaussian { mean, stddev } => {
                if stddev == 0.0 {
                    mean
                } else {
                    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                    mean + stddev * z
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            NoisePrior::Uniform { lo, hi } => 0.5 * (lo + hi),
            NoisePrior::Bernoulli { p } => p,
            NoisePrior::Gaussian { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NoisePrior::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            NoisePrior::Bernoulli { p } => p * (1.0 - p),
            NoisePrior::Gaussian { stddev, .. } => stddev * stddev,
        }
    }

    /// Whether `v` can be produced by this prior.
    pub fn in_support(&self, v: f64) -> bool {
        match *self {
            NoisePrior::Uniform { lo, hi } => v >= lo && v <= hi,
            NoisePrior::Bernoulli { p } => (v == 0.0 && p < 1.0) || (v == 1.0 && p > 0.0),
            NoisePrior::Gaussian { stddev, mean } => {
                v.is_finite() && (stddev > 0.0 || v == mean)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{NoiseStream, StreamDomain, StreamKey};

    fn draws(prior: NoisePrior, n: u64) -> Vec<f64> {
        let mut s = NoiseStream::new(StreamKey::new(StreamDomain::Prior, 11, 0, "U", None));
        (0..n)
            .map(|i| {
                let (a, b) = s.uniforms(i);
                prior.sample(a, b)
            })
            .collect()
    }

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(NoisePrior::Uniform { lo: 1.0, hi: 1.0 }.validate().is_err());
        assert!(NoisePrior::Bernoulli { p: 1.5 }.validate().is_err());
        assert!(NoisePrior::Bernoulli { p: -0.1 }.validate().is_err());
        assert!(NoisePrior::Gaussian { mean: 0.0, stddev: -1.0 }.validate().is_err());
        assert!(NoisePrior::Gaussian { mean: 0.0, stddev: 0.0 }.validate().is_ok());
    }

    #[test]
    fn degenerate_bernoulli_is_constant() {
        assert!(draws(NoisePrior::Bernoulli { p: 1.0 }, 1000).iter().all(|&v| v == 1.0));
        assert!(draws(NoisePrior::Bernoulli { p: 0.0 }, 1000).iter().all(|&v| v == 0.0));
    }

    // Empirical mean and variance within 4 standard errors of the analytic
    // values over 1e5 draws. The variance standard error uses the fourth
    // central moment of each family.
    #[test]
    fn moments_match_each_family() {
        let n = 100_000;
        let cases = [
            (NoisePrior::Uniform { lo: -2.0, hi: 3.0 }, 625.0 / 80.0),
            (NoisePrior::Bernoulli { p: 0.3 }, 0.3 * 0.7 * (1.0 - 3.0 * 0.3 * 0.7)),
            (NoisePrior::Gaussian { mean: 1.0, stddev: 2.0 }, 3.0 * 16.0),
        ];
        for (prior, mu4) in cases {
            let xs = draws(prior, n);
            let (m, v) = moments(&xs);
            let se_mean = (prior.variance() / n as f64).sqrt();
            let se_var = ((mu4 - prior.variance().powi(2)) / n as f64).sqrt();
            assert!((m - prior.mean()).abs() <= 4.0 * se_mean, "{prior:?} mean {m}");
            assert!((v - prior.variance()).abs() <= 4.0 * se_var, "{prior:?} var {v}");
        }
    }

    #[test]
    fn support_membership() {
        let u = NoisePrior::Uniform { lo: 0.0, hi: 1.0 };
        assert!(u.in_support(0.5) && !u.in_support(1.5));
        let b = NoisePrior::Bernoulli { p: 0.0 };
        assert!(b.in_support(0.0) && !b.in_support(1.0));
    }
}
