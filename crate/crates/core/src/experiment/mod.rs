//! Experiment pipelines: truth and data generation, sampler runs, the
//! cross-covariance study, and artifact output.

mod config;
mod output;
mod sensitivity;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::{build_l, KernelFamily};
use crate::error::{Error, Result};
use crate::field::{Field, GridSpec};
use crate::forward::{observe, FlowModel, ForwardModel, LinearObserver, ObsSet};
use crate::priors::{HyperParams, HyperPrior};
use crate::rng::{self, Purpose};
use crate::smoothers::{HyperMode, Problem};

pub use config::{
    rotated, ExperimentConfig, HyperModeSpec, ObservationBlock, OracleBlock, ProblemKind, RunMethod,
    SensitivityBlock, SmootherBlock, TruthBlock,
};
pub use output::{run_experiment, Manifest, RunOptions};
pub use sensitivity::{run_sensitivity_study, sensitivity_fields, SensitivityFields, SensitivityRow};

/// The data-generating model and the data it produced.
pub struct Scenario {
    /// Fully resolved configuration.
    pub config: ExperimentConfig,
    pub grid: GridSpec,
    pub family: KernelFamily,
    pub prior: HyperPrior,
    pub prior_mean: Vec<f64>,
    pub truth_hyper: HyperParams,
    pub truth_latent: Vec<f64>,
    pub truth: Field,
    pub forward: Box<dyn ForwardModel>,
    pub noiseless: Vec<f64>,
    pub obs: ObsSet,
}

fn build_forward(cfg: &ExperimentConfig, grid: GridSpec) -> Result<Box<dyn ForwardModel>> {
    let obs = cfg.observations.as_ref().expect("resolved");
    Ok(match cfg.problem {
        ProblemKind::Linear1d => match &obs.cells {
            Some(cells) => {
                let idx = cells
                    .iter()
                    .map(|[i, j]| grid.index(*i, *j))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::config("observations.cells", e.to_string()))?;
                Box::new(LinearObserver::new(grid, idx).map_err(|e| Error::config("observations.cells", e.to_string()))?)
            }
            None => Box::new(
                LinearObserver::every_nth(grid, obs.step.unwrap_or(4), obs.offset)
                    .map_err(|e| Error::config("observations.offset", e.to_string()))?,
            ),
        },
        ProblemKind::Flow2d => {
            let settings = cfg.flow.clone().expect("resolved");
            Box::new(FlowModel::new(grid, settings).map_err(|e| Error::config("flow", e.to_string()))?)
        }
        ProblemKind::Sensitivity2d => {
            let [i, j] = cfg.sensitivity.as_ref().expect("resolved").observed_cell;
            Box::new(LinearObserver::new(grid, vec![grid.index(i, j)?])?)
        }
    })
}

/// Draws the truth from the data-generating covariance, runs the forward
/// model and adds observation noise. Truth and noise use their own random
/// streams, so every method sees the same data for a given seed.
pub fn generate_truth_and_data(config: &ExperimentConfig) -> Result<Scenario> {
    generate_with_noise_scale(config, 1.0)
}

/// As [`generate_truth_and_data`] with the noise realization scaled by
/// `noise_scale`; 0 gives noiseless observations.
pub fn generate_with_noise_scale(config: &ExperimentConfig, noise_scale: f64) -> Result<Scenario> {
    let cfg = config.resolved()?;
    let grid = cfg.grid.expect("resolved");
    let family = cfg.kernel.expect("resolved");
    let prior = cfg.prior.expect("resolved");
    let truth_block = cfg.truth.expect("resolved");
    let prior_mean = vec![truth_block.prior_mean; grid.len()];
    let op = build_l(&grid, &family, &truth_block.hyper)?;
    let mut rng = rng::stream(cfg.seed, Purpose::Truth, 0);
    let truth_latent: Vec<f64> = (0..grid.len()).map(|_| rng.sample(StandardNormal)).collect();
    let truth = Field::new(grid, op.realize(&prior_mean, &truth_latent)?)?;
    let forward = build_forward(&cfg, grid)?;
    let noiseless = forward.simulate(truth.values())?;
    let sd = cfg.observations.as_ref().expect("resolved").noise_std;
    let mut rng = rng::stream(cfg.seed, Purpose::ObservationNoise, 0);
    let noise: Vec<f64> = (0..noiseless.len())
        .map(|_| noise_scale * sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let obs = observe(forward.as_ref(), &noiseless, &noise, vec![sd; noiseless.len()])?;
    Ok(Scenario {
        grid,
        family,
        prior,
        prior_mean,
        truth_hyper: truth_block.hyper,
        truth_latent,
        truth,
        forward,
        noiseless,
        obs,
        config: cfg,
    })
}

impl Scenario {
    /// The assimilation problem with the configured hyperparameter mode.
    pub fn problem(&self) -> Problem<'_> {
        let mode = match self.config.fixed_hyper() {
            Some(h) => HyperMode::Fixed(h),
            None => HyperMode::Hierarchical,
        };
        self.problem_with(mode)
    }

    pub fn problem_with(&self, hyper_mode: HyperMode) -> Problem<'_> {
        Problem {
            grid: self.grid,
            family: self.family,
            prior: self.prior,
            prior_mean: self.prior_mean.clone(),
            forward: self.forward.as_ref(),
            obs: &self.obs,
            angle: self.config.smoother.angle,
            hyper_mode,
        }
    }
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::config("workers", "must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config("workers", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothers::mismatch;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text).unwrap()
    }

    #[test]
    fn linear_truth_uses_the_configured_kernel() {
        let s = generate_truth_and_data(&cfg(r#"{"problem":"linear1d","method":"rml","seed":3}"#)).unwrap();
        assert_eq!(s.obs.len(), 38);
        let op = build_l(&s.grid, &s.family, &s.truth_hyper).unwrap();
        assert_eq!(op.realize(&s.prior_mean, &s.truth_latent).unwrap(), s.truth.values());
        match s.truth_hyper {
            HyperParams::Scale1d { log_sigma, log_range } => {
                assert!((log_sigma.exp() - 1.08).abs() < 1e-12);
                assert!((log_range.exp() - 0.1).abs() < 1e-12);
            }
            _ => panic!(),
        }
        // Noise at the stated level.
        let s_obs = mismatch(&s.noiseless, &s.obs.values, &s.obs.noise_std).unwrap();
        assert!(s_obs > 5.0 && s_obs < 40.0, "{s_obs}");
    }

    #[test]
    fn zero_noise_reproduces_the_response() {
        let c = cfg(r#"{"problem":"linear1d","method":"rml","seed":3}"#);
        let s = generate_with_noise_scale(&c, 0.0).unwrap();
        assert_eq!(s.obs.values, s.noiseless);
        for (k, v) in s.obs.values.iter().enumerate() {
            assert_eq!(*v, s.truth.values()[4 * k]);
        }
    }

    #[test]
    fn truth_depends_only_on_the_seed() {
        let a = generate_truth_and_data(&cfg(r#"{"problem":"linear1d","method":"rml","seed":5}"#)).unwrap();
        let b = generate_truth_and_data(&cfg(r#"{"problem":"linear1d","method":"ies","seed":5}"#)).unwrap();
        assert_eq!(a.obs.values, b.obs.values);
        let c = generate_truth_and_data(&cfg(r#"{"problem":"linear1d","method":"rml","seed":6}"#)).unwrap();
        assert_ne!(a.obs.values, c.obs.values);
    }

    #[test]
    fn flow_truth_breaks_through_in_most_wells() {
        let s = generate_truth_and_data(&cfg(r#"{"problem":"flow2d","method":"hybrid","seed":2024}"#)).unwrap();
        assert_eq!(s.obs.len(), 480);
        let per_well = s.noiseless.len() / 6;
        let broke = (0..6)
            .filter(|w| s.noiseless[w * per_well..(w + 1) * per_well].iter().any(|v| *v > 0.05))
            .count();
        assert!((4..=6).contains(&broke), "{broke}");
    }

    #[test]
    fn worker_pool_rejects_zero() {
        assert!(with_workers(Some(0), || ()).is_err());
        assert_eq!(with_workers(Some(2), || rayon::current_num_threads()).unwrap(), 2);
    }
}
