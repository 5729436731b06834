//! Synthetic calibration records.
//!
//! Two modes:
//!
//! * `factorial` gives every location a fixed list of outcomes (strata) and
//!   emits one sample per combination, so the joint distribution is exactly
//!   the product of the per-location marginals. The backbone classifier's
//!   strata count is the number of samples per exit combination.
//! * `shared-noise` draws each sample's confidences through a Gaussian
//!   copula with a common factor, so exits agree on which samples are hard.
//!
//! In both modes a sample is correct with probability linear in its
//! confidence, from `accuracy_at_zero` to `accuracy_at_one`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF, Normal};

use crate::profiles::{CalibrationRecord, ProfileError, RecordSet, FINAL_LOCATION};

/// Upper bound on generated samples.
pub const MAX_SAMPLES: u64 = 5_000_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("generator spec: {0}")]
    Malformed(String),
    #[error("location {location:?}: {reason}")]
    InvalidLocation { location: String, reason: String },
    #[error("duplicate location {0:?}")]
    DuplicateLocation(String),
    #[error("generator spec must describe the {FINAL_LOCATION:?} classifier")]
    MissingFinal,
    #[error("correlation must lie in [0, 1], got {0}")]
    InvalidCorrelation(f64),
    #[error("{0} would generate more than {MAX_SAMPLES} samples")]
    TooLarge(String),
    #[error(transparent)]
    Records(#[from] ProfileError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationSpec {
    pub id: String,
    /// Beta(alpha, beta) confidence distribution.
    pub alpha: f64,
    pub beta: f64,
    pub accuracy_at_zero: f64,
    pub accuracy_at_one: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum GeneratorMode {
    Factorial {
        /// Outcomes per early-exit location.
        strata: u32,
        /// Samples per exit combination (strata of the backbone classifier).
        replicates: u32,
    },
    SharedNoise {
        samples: u64,
        /// Weight of the common factor; 0 is independent, 1 identical quantiles.
        correlation: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub mode: GeneratorMode,
    pub locations: Vec<LocationSpec>,
    /// Used when no seed is given on the command line.
    #[serde(default)]
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: GeneratorSpec = serde_json::from_str(text).map_err(|e| SynthError::Malformed(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let mut seen = BTreeSet::new();
        for l in &self.locations {
            let bad = |reason: &str| SynthError::InvalidLocation { location: l.id.clone(), reason: reason.into() };
            if !seen.insert(l.id.as_str()) {
                return Err(SynthError::DuplicateLocation(l.id.clone()));
            }
            if !(l.alpha > 0.0 && l.beta > 0.0 && l.alpha.is_finite() && l.beta.is_finite()) {
                return Err(bad("beta parameters must be positive and finite"));
            }
            for a in [l.accuracy_at_zero, l.accuracy_at_one] {
                if !(0.0..=1.0).contains(&a) {
                    return Err(bad("accuracies must lie in [0, 1]"));
                }
            }
        }
        if !seen.contains(FINAL_LOCATION) {
            return Err(SynthError::MissingFinal);
        }
        match self.mode {
            GeneratorMode::Factorial { strata, replicates } => {
                if strata == 0 || replicates == 0 {
                    return Err(SynthError::Malformed("strata and replicates must be positive".into()));
                }
                let exits = self.locations.len() as u32 - 1;
                let n = (strata as u64)
                    .checked_pow(exits)
                    .and_then(|c| c.checked_mul(replicates as u64))
                    .filter(|&n| n <= MAX_SAMPLES);
                if n.is_none() {
                    return Err(SynthError::TooLarge(format!("{strata}^{exits} x {replicates}")));
                }
            }
            GeneratorMode::SharedNoise { samples, correlation } => {
                if !(0.0..=1.0).contains(&correlation) {
                    return Err(SynthError::InvalidCorrelation(correlation));
                }
                if samples == 0 {
                    return Err(SynthError::Malformed("samples must be positive".into()));
                }
                if samples > MAX_SAMPLES {
                    return Err(SynthError::TooLarge(samples.to_string()));
                }
            }
        }
        Ok(())
    }
}

/// Confidences are kept to six decimals so the CSV reads naturally.
fn snap(c: f64) -> f64 {
    ((c * 1e6).round() / 1e6).clamp(0.0, 1.0)
}

fn correct_probability(l: &LocationSpec, confidence: f64) -> f64 {
    l.accuracy_at_zero + (l.accuracy_at_one - l.accuracy_at_zero) * confidence
}

/// Reproducible records for a spec; the same seed yields the same set.
pub fn generate_synthetic_profiles(spec: &GeneratorSpec, seed: u64) -> Result<RecordSet, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = match spec.mode {
        GeneratorMode::Factorial { strata, replicates } => factorial(spec, strata, replicates, &mut rng),
        GeneratorMode::SharedNoise { samples, correlation } => shared_noise(spec, samples, correlation, &mut rng),
    };
    Ok(RecordSet::from_records(records)?)
}

fn factorial(spec: &GeneratorSpec, strata: u32, replicates: u32, rng: &mut ChaCha8Rng) -> Vec<CalibrationRecord> {
    // early exits in spec order, backbone classifier last (fastest digit)
    let mut order: Vec<&LocationSpec> = spec.locations.iter().filter(|l| l.id != FINAL_LOCATION).collect();
    order.extend(spec.locations.iter().filter(|l| l.id == FINAL_LOCATION));
    let columns: Vec<Vec<(f64, bool)>> = order
        .iter()
        .map(|l| {
            let count = if l.id == FINAL_LOCATION { replicates } else { strata };
            let dist = Beta::new(l.alpha, l.beta).expect("validated");
            (0..count)
                .map(|_| {
                    let c = snap(dist.sample(rng));
                    (c, rng.random::<f64>() < correct_probability(l, c))
                })
                .collect()
        })
        .collect();
    let radix: Vec<u64> = columns.iter().map(|c| c.len() as u64).collect();
    let n: u64 = radix.iter().product();
    let mut records = Vec::with_capacity((n as usize) * order.len());
    for sample in 0..n {
        let mut rest = sample;
        let mut digits = vec![0usize; radix.len()];
        for d in (0..radix.len()).rev() {
            digits[d] = (rest % radix[d]) as usize;
            rest /= radix[d];
        }
        for ((l, col), &d) in order.iter().zip(&columns).zip(&digits) {
            let (confidence, correct) = col[d];
            records.push(CalibrationRecord { sample_id: sample, location_id: l.id.clone(), confidence, correct });
        }
    }
    records
}

fn shared_noise(spec: &GeneratorSpec, samples: u64, rho: f64, rng: &mut ChaCha8Rng) -> Vec<CalibrationRecord> {
    let normal = Normal::standard();
    let own = (1.0 - rho * rho).sqrt();
    let marginals: Vec<BetaDist> =
        spec.locations.iter().map(|l| BetaDist::new(l.alpha, l.beta).expect("validated")).collect();
    let mut records = Vec::with_capacity(samples as usize * spec.locations.len());
    for sample in 0..samples {
        let hardness: f64 = rng.sample(StandardNormal);
        let luck: f64 = rng.sample(StandardNormal);
        for (l, marginal) in spec.locations.iter().zip(&marginals) {
            let z = rho * hardness + own * rng.sample::<f64, _>(StandardNormal);
            let confidence = snap(marginal.inverse_cdf(normal.cdf(z)));
            let w = rho * luck + own * rng.sample::<f64, _>(StandardNormal);
            let correct = normal.cdf(w) < correct_probability(l, confidence);
            records.push(CalibrationRecord { sample_id: sample, location_id: l.id.clone(), confidence, correct });
        }
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(id: &str) -> LocationSpec {
        LocationSpec { id: id.into(), alpha: 4.0, beta: 2.0, accuracy_at_zero: 0.2, accuracy_at_one: 0.95 }
    }

    fn factorial_spec(strata: u32, replicates: u32) -> GeneratorSpec {
        GeneratorSpec {
            mode: GeneratorMode::Factorial { strata, replicates },
            locations: vec![loc("b1"), loc("b2"), loc(FINAL_LOCATION)],
            seed: 0,
        }
    }

    #[test]
    fn factorial_has_product_structure() {
        let r = generate_synthetic_profiles(&factorial_spec(13, 3), 7).unwrap();
        assert_eq!(r.len(), 169 * 3);
        // every pair of (b1, b2) strata appears exactly `replicates` times
        let b1 = r.outcomes("b1").unwrap();
        let b2 = r.outcomes("b2").unwrap();
        let fin = r.outcomes(FINAL_LOCATION).unwrap();
        for s in 0..r.len() {
            assert_eq!(b1[s], b1[(s / 39) * 39]);
            assert_eq!(b2[s], b2[(s / 3) % 13 * 3]);
            assert_eq!(fin[s], fin[s % 3]);
        }
    }

    #[test]
    fn seeded_output_is_byte_identical() {
        let spec = GeneratorSpec {
            mode: GeneratorMode::SharedNoise { samples: 200, correlation: 0.8 },
            locations: vec![loc("b1"), loc(FINAL_LOCATION)],
            seed: 0,
        };
        let csv = |seed| {
            let mut out = Vec::new();
            generate_synthetic_profiles(&spec, seed).unwrap().write_csv(&mut out).unwrap();
            out
        };
        assert_eq!(csv(11), csv(11));
        assert_ne!(csv(11), csv(12));
    }

    #[test]
    fn full_correlation_repeats_quantiles() {
        let spec = GeneratorSpec {
            mode: GeneratorMode::SharedNoise { samples: 50, correlation: 1.0 },
            locations: vec![loc("b1"), loc("b2"), loc(FINAL_LOCATION)],
            seed: 0,
        };
        let r = generate_synthetic_profiles(&spec, 3).unwrap();
        assert_eq!(r.outcomes("b1").unwrap(), r.outcomes("b2").unwrap());
    }

    #[test]
    fn invalid_specs() {
        let mut s = factorial_spec(13, 1);
        s.locations[0].alpha = 0.0;
        assert!(matches!(s.validate(), Err(SynthError::InvalidLocation { .. })));
        let mut s = factorial_spec(13, 1);
        s.locations.pop();
        assert_eq!(s.validate(), Err(SynthError::MissingFinal));
        let mut s = factorial_spec(13, 1);
        s.locations[1].id = "b1".into();
        assert_eq!(s.validate(), Err(SynthError::DuplicateLocation("b1".into())));
        let mut s = factorial_spec(13, 1);
        s.mode = GeneratorMode::SharedNoise { samples: 10, correlation: 1.5 };
        assert_eq!(s.validate(), Err(SynthError::InvalidCorrelation(1.5)));
        assert!(matches!(factorial_spec(1000, 1000).validate(), Err(SynthError::TooLarge(_))));
        assert!(GeneratorSpec::from_json(r#"{"mode":"factorial","strata":2}"#).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let text = r#"{"mode":"shared-noise","samples":10,"correlation":0.5,"seed":4,
            "locations":[{"id":"final","alpha":2,"beta":1,"accuracy_at_zero":0.1,"accuracy_at_one":0.9}]}"#;
        let spec = GeneratorSpec::from_json(text).unwrap();
        assert_eq!(spec.seed, 4);
        assert_eq!(spec.mode, GeneratorMode::SharedNoise { samples: 10, correlation: 0.5 });
    }
}
