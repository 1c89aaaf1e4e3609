use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use super::RmError;
use crate::seeds::{fnv1a64, rng_for};
use crate::sim::{aspect_scores, SimWorldConfig};

/// Maps a (prompt, response) pair to a fixed-length feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Featurizer {
    /// Observed aspect scores with Gaussian observation noise, plus response
    /// length over the maximum length. Noise is keyed by
    /// `(seed, prompt, response)`, so a response always gets the same features
    /// for the same prompt.
    SimAspect {
        world: SimWorldConfig,
        sigma_obs: f64,
        seed: u64,
    },
    /// Hashed character n-gram counts of the response (FNV-1a of the n-gram's
    /// UTF-8 bytes, modulo `buckets`), then two prompt-overlap statistics.
    TextNgram { n: usize, buckets: usize },
}

impl Featurizer {
    pub fn sim(world: &SimWorldConfig, sigma_obs: f64, seed: u64) -> Self {
        Featurizer::SimAspect {
            world: world.clone(),
            sigma_obs,
            seed,
        }
    }

    pub fn text() -> Self {
        Featurizer::TextNgram { n: 3, buckets: 4096 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Featurizer::SimAspect { .. } => "SIM_ASPECT",
            Featurizer::TextNgram { .. } => "TEXT_NGRAM",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Featurizer::SimAspect { .. } => 4,
            Featurizer::TextNgram { buckets, .. } => buckets + 2,
        }
    }

    pub fn validate(&self) -> Result<(), RmError> {
        match self {
            Featurizer::SimAspect { world, sigma_obs, .. } => {
                world.validate()?;
                if !(*sigma_obs >= 0.0 && sigma_obs.is_finite()) {
                    return Err(RmError::Config(format!("sigma_obs must be >= 0, got {sigma_obs}")));
                }
            }
            Featurizer::TextNgram { n, buckets } => {
                if *n == 0 || *buckets == 0 {
                    return Err(RmError::Config("n and buckets must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn featurize(&self, prompt: &str, response: &str) -> Result<Vec<f64>, RmError> {
        match self {
            Featurizer::SimAspect {
                world,
                sigma_obs,
                seed,
            } => {
                let y = world.parse_response(response)?;
                let mut phi = aspect_scores(&y, world).to_array().to_vec();
                if *sigma_obs > 0.0 {
                    let noise = Normal::new(0.0, *sigma_obs).expect("validated sigma");
                    let mut rng = rng_for(*seed, prompt, response);
                    for v in &mut phi {
                        *v += noise.sample(&mut rng);
                    }
                }
                phi.push(f64::from(y.len_items()) / world.max_len() as f64);
                Ok(phi)
            }
            Featurizer::TextNgram { n, buckets } => Ok(ngram_features(prompt, response, *n, *buckets)),
        }
    }
}

fn ngram_features(prompt: &str, response: &str, n: usize, buckets: usize) -> Vec<f64> {
    let mut phi = vec![0.0; buckets + 2];
    let chars: Vec<char> = response.chars().collect();
    let mut buf = String::new();
    for w in chars.windows(n) {
        buf.clear();
        buf.extend(w);
        phi[(fnv1a64(buf.as_bytes()) % buckets as u64) as usize] += 1.0;
    }
    let words = |s: &str| -> Vec<String> { s.split_whitespace().map(str::to_lowercase).collect() };
    let (pw, rw) = (words(prompt), words(response));
    let pset: HashSet<&str> = pw.iter().map(String::as_str).collect();
    let rset: HashSet<&str> = rw.iter().map(String::as_str).collect();
    if !rw.is_empty() {
        phi[buckets] = rw.iter().filter(|w| pset.contains(w.as_str())).count() as f64 / rw.len() as f64;
    }
    if !pw.is_empty() {
        phi[buckets + 1] = pw.iter().filter(|w| rset.contains(w.as_str())).count() as f64 / pw.len() as f64;
    }
    phi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_response_without_noise() {
        let world = SimWorldConfig::reference();
        let f = Featurizer::sim(&world, 0.0, 1);
        assert_eq!(f.featurize("p", "fact0 fact1 fact2").unwrap(), vec![1.0, 1.0, 1.0, 0.5]);
    }

    #[test]
    fn sim_noise_is_keyed_by_pair() {
        let world = SimWorldConfig::reference();
        let f = Featurizer::sim(&world, 0.3, 1);
        let a = f.featurize("p", "fact0").unwrap();
        assert_eq!(a, f.featurize("p", "fact0").unwrap());
        assert_ne!(a, f.featurize("q", "fact0").unwrap());
        assert_eq!(a[3], 1.0 / 6.0);
        assert!(f.featurize("p", "banana").is_err());
    }

    #[test]
    fn abc_hits_one_bucket() {
        let phi = Featurizer::text().featurize("", "abc").unwrap();
        // FNV-1a("abc") = 0xe71fa2190541574b, and 0x74b = 1867
        assert_eq!(phi[1867], 1.0);
        assert_eq!(phi[..4096].iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(phi.len(), 4098);
    }

    #[test]
    fn identical_strings_identical_vectors() {
        let f = Featurizer::text();
        assert_eq!(f.featurize("q", "hello world").unwrap(), f.featurize("q", "hello world").unwrap());
    }

    #[test]
    fn overlap_statistics() {
        let phi = ngram_features("the cat sat", "The dog sat down", 3, 8);
        assert_eq!(phi[8], 0.5);
        assert!((phi[9] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn serde_tagging() {
        let json = serde_json::to_string(&Featurizer::text()).unwrap();
        assert_eq!(json, r#"{"kind":"TEXT_NGRAM","n":3,"buckets":4096}"#);
    }
}
