//! Seeded Gaussian cluster data.
//!
//! Cluster `c` is centred on `separation * sigma / sqrt(2)` along axis `c`, so
//! any two centres sit `separation * sigma` apart. Samples add isotropic
//! noise with standard deviation `sigma`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmbeddingRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub clusters: usize,
    pub dimension: usize,
    /// Distance between any two centres, in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            clusters: 3,
            dimension: 8,
            separation: 4.0,
            sigma: 1.0,
        }
    }
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::invalid("need at least one cluster"));
        }
        if self.dimension < self.clusters {
            return Err(Error::invalid(format!(
                "{} clusters need dimension >= {}, got {}",
                self.clusters, self.clusters, self.dimension
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::invalid("separation must be non-negative"));
        }
        Ok(())
    }

    pub fn class_name(c: usize) -> String {
        format!("c{c}")
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.clusters).map(Self::class_name).collect()
    }

    pub fn center(&self, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        v[c] = self.separation * self.sigma / std::f64::consts::SQRT_2;
        v
    }

    /// One sample from cluster `c`.
    pub fn sample(&self, c: usize, rng: &mut impl Rng) -> Vec<f64> {
        let noise = Normal::new(0.0, self.sigma).expect("validated sigma");
        self.center(c)
            .into_iter()
            .map(|m| m + noise.sample(rng))
            .collect()
    }

    /// `n` labeled records, cluster `i % clusters` for record `i`.
    pub fn corpus(&self, name: &str, n: usize, seed: u64) -> Result<Corpus> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| {
                let c = i % self.clusters;
                EmbeddingRecord::new(format!("{name}-{i}"), self.sample(c, &mut rng))
                    .with_label(Self::class_name(c))
            })
            .collect();
        Corpus::new(name, self.dimension, records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centres_are_separated_as_requested() {
        let spec = ClusterSpec {
            clusters: 3,
            dimension: 16,
            separation: 4.0,
            sigma: 0.5,
        };
        for a in 0..3 {
            for b in (a + 1)..3 {
                let d: f64 = spec
                    .center(a)
                    .iter()
                    .zip(spec.center(b))
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corpus_is_seeded_and_balanced() {
        let spec = ClusterSpec::default();
        let a = spec.corpus("s", 30, 5).unwrap();
        assert_eq!(a, spec.corpus("s", 30, 5).unwrap());
        assert_ne!(a, spec.corpus("s", 30, 6).unwrap());
        let counts = a.records().iter().filter(|r| r.label.as_deref() == Some("c1")).count();
        assert_eq!(counts, 10);
    }

    #[test]
    fn rejects_too_many_clusters() {
        let spec = ClusterSpec {
            clusters: 5,
            dimension: 4,
            ..ClusterSpec::default()
        };
        assert!(spec.corpus("x", 5, 0).is_err());
    }
}
