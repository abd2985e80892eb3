//! Forward models `g(m)` and observation sets.

mod banded;
pub mod flow;
pub mod linear;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use flow::{FlowModel, FlowRun, FlowSettings, Relperm, WaterCutSeries, Well};
pub use linear::LinearObserver;

pub trait ForwardModel: Send + Sync {
    fn n_data(&self) -> usize;

    /// Predicted data for an observable field `m`.
    fn simulate(&self, m: &[f64]) -> Result<Vec<f64>>;

    /// `∂g/∂m`, available only when `g` is linear.
    fn linear_sensitivity(&self) -> Option<DMatrix<f64>> {
        None
    }

    /// Spatial anchor of each datum, used for localization.
    fn data_locations(&self) -> Vec<[f64; 2]>;

    /// Label and time of each datum, in data order.
    fn data_labels(&self) -> Vec<(String, Option<f64>)>;
}

/// One observed datum's metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsMeta {
    pub label: String,
    pub time: Option<f64>,
    pub location: [f64; 2],
}

/// Observed data with independent Gaussian errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsSet {
    pub values: Vec<f64>,
    pub noise_std: Vec<f64>,
    pub meta: Vec<ObsMeta>,
}

impl ObsSet {
    pub fn new(values: Vec<f64>, noise_std: Vec<f64>, meta: Vec<ObsMeta>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidObservations("no data".into()));
        }
        if noise_std.len() != values.len() || meta.len() != values.len() {
            return Err(Error::InvalidObservations(format!(
                "{} values, {} stds, {} metadata rows",
                values.len(),
                noise_std.len(),
                meta.len()
            )));
        }
        if let Some(k) = noise_std.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidObservations(format!(
                "noise std at datum {k} must be positive"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidObservations("non-finite datum".into()));
        }
        Ok(ObsSet {
            values,
            noise_std,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn locations(&self) -> Vec<[f64; 2]> {
        self.meta.iter().map(|m| m.location).collect()
    }
}

/// Draws `ε′ ~ N(0, diag(σ²))`.
pub fn perturb_observations<R: Rng + ?Sized>(noise_std: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if let Some(k) = noise_std.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::InvalidObservations(format!(
            "noise std at datum {k} must be positive"
        )));
    }
    Ok(noise_std
        .iter()
        .map(|s| s * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Builds an observation set from a model's noiseless response plus the
/// given noise realization.
pub fn observe(
    model: &dyn ForwardModel,
    noiseless: &[f64],
    noise: &[f64],
    noise_std: Vec<f64>,
) -> Result<ObsSet> {
    if noiseless.len() != model.n_data() || noise.len() != noiseless.len() {
        return Err(Error::DimensionMismatch {
            what: "observation noise",
            expected: model.n_data(),
            got: noise.len(),
        });
    }
    let meta = model
        .data_labels()
        .into_iter()
        .zip(model.data_locations())
        .map(|((label, time), location)| ObsMeta {
            label,
            time,
            location,
        })
        .collect();
    let values = noiseless.iter().zip(noise).map(|(a, b)| a + b).collect();
    ObsSet::new(values, noise_std, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perturbation_rejects_nonpositive_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(perturb_observations(&[0.1, 0.0], &mut rng).is_err());
        assert!(perturb_observations(&[-1.0], &mut rng).is_err());
    }

    #[test]
    fn perturbation_is_seeded() {
        let a = perturb_observations(&[0.5; 8], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = perturb_observations(&[0.5; 8], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturbation_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let sd = 0.02;
        let mut s2 = 0.0;
        for _ in 0..n {
            let e = perturb_observations(&[sd], &mut rng).unwrap()[0];
            s2 += e * e;
        }
        let var = s2 / n as f64;
        assert!((var / (sd * sd) - 1.0).abs() < 0.02);
    }

    #[test]
    fn obs_set_validation() {
        let meta = vec![
            ObsMeta {
                label: "a".into(),
                time: None,
                location: [0.0, 0.0]
            };
            2
        ];
        assert!(ObsSet::new(vec![], vec![], vec![]).is_err());
        assert!(ObsSet::new(vec![1.0, 2.0], vec![0.1], meta.clone()).is_err());
        assert!(ObsSet::new(vec![1.0, 2.0], vec![0.1, 0.0], meta.clone()).is_err());
        assert!(ObsSet::new(vec![1.0, 2.0], vec![0.1, 0.1], meta).is_ok());
    }
}
