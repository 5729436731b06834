use serde::{Deserialize, Serialize};

use super::DecisionError;

pub const DEFAULT_GRID_MIN: f64 = 0.40;
pub const DEFAULT_GRID_MAX: f64 = 1.00;
pub const DEFAULT_GRID_POINTS: usize = 13;

/// Candidate thresholds for one early exit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    values: Vec<f64>,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        ThresholdGrid::linspace(DEFAULT_GRID_MIN, DEFAULT_GRID_MAX, DEFAULT_GRID_POINTS).expect("default grid is valid")
    }
}

/// Snap to 1e-9 so grid points compare equal to their decimal spelling.
fn snap(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

impl ThresholdGrid {
    pub fn new(values: Vec<f64>) -> Result<Self, DecisionError> {
        if values.is_empty() {
            return Err(DecisionError::InvalidGrid("grid needs at least one threshold".into()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DecisionError::InvalidGrid("thresholds must lie in [0, 1]".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DecisionError::InvalidGrid("thresholds must be strictly increasing".into()));
        }
        Ok(ThresholdGrid { values })
    }

    /// `points` evenly spaced thresholds from `min` to `max` inclusive.
    pub fn linspace(min: f64, max: f64, points: usize) -> Result<Self, DecisionError> {
        match points {
            0 => Err(DecisionError::InvalidGrid("grid needs at least one threshold".into())),
            1 => ThresholdGrid::new(vec![snap(min)]),
            n => {
                let last = (n - 1) as f64;
                let values = (0..n).map(|i| snap((min * (last - i as f64) + max * i as f64) / last)).collect();
                ThresholdGrid::new(values)
            }
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Spacing of the first two points; 0 for single-point grids.
    pub fn step(&self) -> f64 {
        match self.values.as_slice() {
            [a, b, ..] => b - a,
            _ => 0.0,
        }
    }

    /// Finer grid covering one coarse step either side of `center`,
    /// clamped to [0, 1] and always containing `center` itself.
    pub fn refined_around(&self, center: f64, resolution: usize) -> ThresholdGrid {
        let step = self.step();
        if resolution <= 1 || step == 0.0 {
            return ThresholdGrid { values: vec![center] };
        }
        let lo = (center - step).max(0.0);
        let hi = (center + step).min(1.0);
        let last = (resolution - 1) as f64;
        let mut values: Vec<f64> = (0..resolution)
            .map(|i| snap((lo * (last - i as f64) + hi * i as f64) / last))
            .chain(std::iter::once(center))
            .collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        ThresholdGrid { values }
    }
}

/// Per-early-exit thresholds. The final classifier's threshold is always 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigRepr", into = "ConfigRepr")]
pub struct ThresholdConfig {
    early: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ConfigRepr {
    early: Vec<f64>,
    #[serde(rename = "final")]
    final_threshold: f64,
}

impl TryFrom<ConfigRepr> for ThresholdConfig {
    type Error = String;

    fn try_from(r: ConfigRepr) -> Result<Self, Self::Error> {
        if r.final_threshold != 0.0 {
            return Err(format!("final classifier threshold must be 0, got {}", r.final_threshold));
        }
        Ok(ThresholdConfig { early: r.early })
    }
}

impl From<ThresholdConfig> for ConfigRepr {
    fn from(c: ThresholdConfig) -> Self {
        ConfigRepr { early: c.early, final_threshold: 0.0 }
    }
}

impl ThresholdConfig {
    pub fn new(early: Vec<f64>) -> Self {
        ThresholdConfig { early }
    }

    pub fn early(&self) -> &[f64] {
        &self.early
    }

    pub fn final_threshold(&self) -> f64 {
        0.0
    }

    /// Threshold of classifier `i`, the last one being the backbone's.
    pub fn threshold(&self, i: usize) -> f64 {
        self.early.get(i).copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let g = ThresholdGrid::default();
        assert_eq!(g.len(), 13);
        assert_eq!(g.values()[0], 0.4);
        assert_eq!(g.values()[4], 0.6);
        assert_eq!(g.values()[12], 1.0);
        assert!((g.step() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn invalid_grids() {
        assert!(ThresholdGrid::new(vec![]).is_err());
        assert!(ThresholdGrid::new(vec![0.5, 0.5]).is_err());
        assert!(ThresholdGrid::new(vec![0.5, 1.5]).is_err());
        assert!(ThresholdGrid::linspace(0.4, 1.0, 0).is_err());
    }

    #[test]
    fn refinement_grid() {
        let g = ThresholdGrid::default();
        let r = g.refined_around(0.6, 21);
        assert_eq!(r.len(), 21);
        assert_eq!(r.values()[0], 0.55);
        assert_eq!(r.values()[10], 0.6);
        assert_eq!(r.values()[20], 0.65);
        assert!((r.values()[1] - 0.555).abs() < 1e-12);
        assert_eq!(g.refined_around(0.6, 1).values(), [0.6]);
        // clamped at the top, centre still present with an even resolution
        let top = g.refined_around(1.0, 4);
        assert_eq!(top.max(), 1.0);
        assert!(top.values().contains(&1.0));
        assert!(g.refined_around(0.6, 4).values().contains(&0.6));
    }

    #[test]
    fn config_serializes_final_zero() {
        let c = ThresholdConfig::new(vec![0.6, 0.8]);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(text, r#"{"early":[0.6,0.8],"final":0.0}"#);
        assert_eq!(serde_json::from_str::<ThresholdConfig>(&text).unwrap(), c);
        assert!(serde_json::from_str::<ThresholdConfig>(r#"{"early":[],"final":0.3}"#).is_err());
        assert_eq!(c.threshold(2), 0.0);
    }
}
