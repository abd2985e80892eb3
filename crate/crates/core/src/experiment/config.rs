use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::covariance::KernelFamily;
use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::forward::FlowSettings;
use crate::priors::{normalize_angle, AngleTreatment, GaussVonMises, HyperParams, HyperPrior, NormalPrior};
use crate::smoothers::{LocalizationSpec, Method, SamplerSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// Point observations of a 1D Gaussian field.
    Linear1d,
    /// Water cut from a 2D waterflood.
    Flow2d,
    /// One point observation of a 2D anisotropic field.
    Sensitivity2d,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Linear1d => "linear1d",
            ProblemKind::Flow2d => "flow2d",
            ProblemKind::Sensitivity2d => "sensitivity2d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMethod {
    Rml,
    Ies,
    Hybrid,
    /// Exact marginal-then-conditional draws (linear problems only).
    Mtc,
}

impl RunMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMethod::Rml => "rml",
            RunMethod::Ies => "ies",
            RunMethod::Hybrid => "hybrid",
            RunMethod::Mtc => "mtc",
        }
    }

    pub fn sampler(self) -> Option<Method> {
        match self {
            RunMethod::Rml => Some(Method::Rml),
            RunMethod::Ies => Some(Method::Ies),
            RunMethod::Hybrid => Some(Method::Hybrid),
            RunMethod::Mtc => None,
        }
    }
}

/// The data-generating model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthBlock {
    pub hyper: HyperParams,
    /// Constant prior mean of the field, shared by truth and samplers.
    #[serde(default)]
    pub prior_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationBlock {
    pub noise_std: f64,
    /// Linear problems: observe every `step`-th cell starting at `offset`.
    #[serde(default)]
    pub step: Option<usize>,
    #[serde(default)]
    pub offset: usize,
    /// Linear problems: explicit observed cells as `[i, j]`; overrides `step`.
    #[serde(default)]
    pub cells: Option<Vec<[usize; 2]>>,
}

/// How the sampler treats the hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HyperModeSpec {
    #[default]
    Hierarchical,
    /// Held at the data-generating values.
    FixedTruth,
    /// Held at the data-generating values with the orientation turned by π/2.
    FixedRotated,
    Fixed { hyper: HyperParams },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherBlock {
    /// Omitted: the problem's defaults. Linear problems give the ensemble
    /// methods the same long run as RML.
    pub settings: Option<SamplerSettings>,
    pub hyper_mode: HyperModeSpec,
    pub angle: AngleTreatment,
    /// IES on 2D problems: taper range from the truth's principal range
    /// when no explicit localization is given.
    pub localize: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleBlock {
    pub resolution: usize,
    /// Half-width of each grid axis in prior standard deviations.
    pub span: f64,
}

impl Default for OracleBlock {
    fn default() -> Self {
        OracleBlock {
            resolution: crate::oracle::DEFAULT_RESOLUTION,
            span: crate::oracle::DEFAULT_SPAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityBlock {
    pub ensemble_sizes: Vec<usize>,
    /// Observed cell `[i, j]`.
    pub observed_cell: [usize; 2],
    /// Member whose exact sensitivity is the reference.
    pub reference_member: usize,
}

impl Default for SensitivityBlock {
    fn default() -> Self {
        SensitivityBlock {
            ensemble_sizes: vec![100, 200, 800],
            observed_cell: [10, 4],
            reference_member: 0,
        }
    }
}

/// One experiment. Optional blocks take problem-specific defaults; see
/// [`ExperimentConfig::resolved`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    #[serde(default)]
    pub method: Option<RunMethod>,
    pub seed: u64,
    #[serde(default)]
    pub ensemble_size: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub kernel: Option<KernelFamily>,
    #[serde(default)]
    pub prior: Option<HyperPrior>,
    #[serde(default)]
    pub truth: Option<TruthBlock>,
    #[serde(default)]
    pub observations: Option<ObservationBlock>,
    #[serde(default)]
    pub flow: Option<FlowSettings>,
    #[serde(default)]
    pub smoother: SmootherBlock,
    #[serde(default)]
    pub oracle: OracleBlock,
    #[serde(default)]
    pub sensitivity: Option<SensitivityBlock>,
}

pub const LINEAR_CELLS: usize = 150;
pub const FLOW_NX: usize = 30;
pub const FLOW_NY: usize = 15;
pub const FLOW_KERNEL_SIGMA: f64 = 2.0;

fn default_grid(problem: ProblemKind) -> GridSpec {
    match problem {
        ProblemKind::Linear1d => GridSpec::line(LINEAR_CELLS, 0.0, 1.0).expect("valid"),
        ProblemKind::Flow2d | ProblemKind::Sensitivity2d => {
            let h = 1.0 / FLOW_NX as f64;
            GridSpec::new(FLOW_NX, FLOW_NY, h, h, [0.0; 2]).expect("valid")
        }
    }
}

fn default_kernel(problem: ProblemKind) -> KernelFamily {
    match problem {
        ProblemKind::Linear1d => KernelFamily::Gaussian1d,
        _ => KernelFamily::Gaussian2d {
            sigma: FLOW_KERNEL_SIGMA,
        },
    }
}

fn default_prior(problem: ProblemKind) -> HyperPrior {
    match problem {
        ProblemKind::Linear1d => HyperPrior::Scale1d {
            log_sigma: NormalPrior::new(-0.22, 0.5),
            log_range: NormalPrior::new(-2.3, 0.6),
        },
        _ => HyperPrior::Aniso2d {
            log_range: NormalPrior::new((0.8f64).ln(), 0.3),
            log_ratio: NormalPrior::new((4.0f64).ln(), 0.3),
            angle: GaussVonMises { mu: 0.8, kappa: 10.0 },
        },
    }
}

fn default_truth(problem: ProblemKind) -> TruthBlock {
    let hyper = match problem {
        ProblemKind::Linear1d => HyperParams::Scale1d {
            log_sigma: (1.08f64).ln(),
            log_range: (0.1f64).ln(),
        },
        _ => HyperParams::Aniso2d {
            log_range: 0.0,
            log_ratio: (6.0f64).ln(),
            angle: 0.93,
        },
    };
    TruthBlock {
        hyper,
        prior_mean: 0.0,
    }
}

fn default_observations(problem: ProblemKind) -> ObservationBlock {
    match problem {
        ProblemKind::Linear1d => ObservationBlock {
            noise_std: 0.01,
            step: Some(4),
            offset: 0,
            cells: None,
        },
        ProblemKind::Flow2d => ObservationBlock {
            noise_std: 0.02,
            step: None,
            offset: 0,
            cells: None,
        },
        ProblemKind::Sensitivity2d => ObservationBlock {
            noise_std: 0.02,
            step: None,
            offset: 0,
            cells: None,
        },
    }
}

fn default_settings(p: ProblemKind) -> SamplerSettings {
    let mut s = SamplerSettings::default();
    if p == ProblemKind::Linear1d {
        s.lm = s.rml_lm;
    }
    s
}

fn default_ensemble_size(method: RunMethod) -> usize {
    match method {
        RunMethod::Ies => 200,
        RunMethod::Rml | RunMethod::Hybrid | RunMethod::Mtc => 100,
    }
}

/// Principal range of the data-generating kernel.
fn truth_range(hyper: &HyperParams) -> f64 {
    match hyper {
        HyperParams::Scale1d { log_range, .. } => log_range.exp(),
        HyperParams::Aniso2d { log_range, .. } => log_range.exp(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn method(&self) -> Result<RunMethod> {
        self.method
            .ok_or_else(|| Error::config("method", "required for `run` (rml, ies, hybrid or mtc)"))
    }

    /// A copy with every default filled in, so the manifest records exactly
    /// what ran.
    pub fn resolved(&self) -> Result<ExperimentConfig> {
        let mut c = self.clone();
        let p = c.problem;
        c.grid.get_or_insert_with(|| default_grid(p));
        c.kernel.get_or_insert_with(|| default_kernel(p));
        c.prior.get_or_insert_with(|| default_prior(p));
        c.truth.get_or_insert_with(|| default_truth(p));
        c.observations.get_or_insert_with(|| default_observations(p));
        match p {
            ProblemKind::Flow2d => {
                c.flow.get_or_insert_with(FlowSettings::default);
            }
            ProblemKind::Sensitivity2d => {
                c.sensitivity.get_or_insert_with(SensitivityBlock::default);
            }
            ProblemKind::Linear1d => {}
        }
        if let Some(m) = c.method {
            c.ensemble_size.get_or_insert(default_ensemble_size(m));
            let localize = c
                .smoother
                .localize
                .unwrap_or(m == RunMethod::Ies && p == ProblemKind::Flow2d);
            c.smoother.localize = Some(localize);
            let settings = c.smoother.settings.get_or_insert_with(|| default_settings(p));
            if localize && settings.localization.is_none() {
                let range = truth_range(&c.truth.expect("filled").hyper);
                settings.localization = Some(LocalizationSpec::new(range)?);
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Checks cross-block consistency; field paths name the offending entry.
    pub fn validate(&self) -> Result<()> {
        if let Some(n) = self.ensemble_size {
            let min = match self.method {
                Some(RunMethod::Ies) | Some(RunMethod::Hybrid) => 2,
                _ => 1,
            };
            if n < min {
                return Err(Error::config("ensemble_size", format!("must be at least {min}")));
            }
        }
        let grid = self.grid.unwrap_or_else(|| default_grid(self.problem));
        let kernel = self.kernel.unwrap_or_else(|| default_kernel(self.problem));
        let prior = self.prior.unwrap_or_else(|| default_prior(self.problem));
        let truth = self.truth.unwrap_or_else(|| default_truth(self.problem));
        let one_d = self.problem == ProblemKind::Linear1d;
        if one_d != (grid.ny() == 1) {
            return Err(Error::config(
                "grid.ny",
                if one_d { "linear1d needs ny = 1" } else { "2D problems need ny > 1" },
            ));
        }
        if kernel.hyper_kind() != prior.kind() {
            return Err(Error::config("prior.kind", "does not match the kernel family"));
        }
        if truth.hyper.kind() != prior.kind() {
            return Err(Error::config("truth.hyper.kind", "does not match the prior"));
        }
        prior.validate().map_err(|e| Error::config("prior", e.to_string()))?;
        truth
            .hyper
            .validate()
            .map_err(|e| Error::config("truth.hyper", e.to_string()))?;
        if !truth.prior_mean.is_finite() {
            return Err(Error::config("truth.prior_mean", "must be finite"));
        }
        if let Some(obs) = &self.observations {
            if !(obs.noise_std > 0.0 && obs.noise_std.is_finite()) {
                return Err(Error::config("observations.noise_std", "must be positive"));
            }
            if obs.step == Some(0) {
                return Err(Error::config("observations.step", "must be positive"));
            }
            if self.problem != ProblemKind::Linear1d && (obs.step.is_some() || obs.cells.is_some()) {
                return Err(Error::config(
                    "observations",
                    "`step` and `cells` apply to linear1d only",
                ));
            }
        }
        if self.flow.is_some() && self.problem != ProblemKind::Flow2d {
            return Err(Error::config("flow", "only valid for flow2d"));
        }
        if let Some(s) = &self.sensitivity {
            if self.problem != ProblemKind::Sensitivity2d {
                return Err(Error::config("sensitivity", "only valid for sensitivity2d"));
            }
            if s.ensemble_sizes.is_empty() || s.ensemble_sizes.iter().any(|n| *n < 2) {
                return Err(Error::config(
                    "sensitivity.ensemble_sizes",
                    "needs one or more sizes, each at least 2",
                ));
            }
            if grid.index(s.observed_cell[0], s.observed_cell[1]).is_err() {
                return Err(Error::config("sensitivity.observed_cell", "outside the grid"));
            }
            if s.ensemble_sizes.iter().any(|n| s.reference_member >= *n) {
                return Err(Error::config(
                    "sensitivity.reference_member",
                    "must be a member of every ensemble",
                ));
            }
        }
        match (self.problem, self.method) {
            (ProblemKind::Flow2d, Some(RunMethod::Rml)) => {
                return Err(Error::config("method", "rml needs a linear forward model"));
            }
            (ProblemKind::Flow2d, Some(RunMethod::Mtc)) => {
                return Err(Error::config("method", "mtc needs the linear1d problem"));
            }
            (ProblemKind::Sensitivity2d, Some(_)) => {
                return Err(Error::config("method", "sensitivity2d runs through `sensitivity`"));
            }
            _ => {}
        }
        let mode = self.smoother.hyper_mode;
        if self.method == Some(RunMethod::Mtc) && mode != HyperModeSpec::Hierarchical {
            return Err(Error::config("smoother.hyper_mode", "mtc is always hierarchical"));
        }
        match mode {
            HyperModeSpec::FixedRotated if prior.kind().angle_slot().is_none() => {
                return Err(Error::config(
                    "smoother.hyper_mode",
                    "fixed_rotated needs an orientation hyperparameter",
                ));
            }
            HyperModeSpec::Fixed { hyper } if hyper.kind() != prior.kind() => {
                return Err(Error::config("smoother.hyper_mode.hyper", "does not match the prior"));
            }
            _ => {}
        }
        let default = SamplerSettings::default();
        let s = self.smoother.settings.as_ref().unwrap_or(&default);
        if !(s.energy > 0.0 && s.energy <= 1.0) {
            return Err(Error::config("smoother.settings.energy", "must lie in (0, 1]"));
        }
        if s.lm.factor <= 1.0 {
            return Err(Error::config("smoother.settings.lm.factor", "must exceed 1"));
        }
        if let Some(l) = s.initial_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::config("smoother.settings.initial_lambda", "must be non-negative"));
            }
        }
        if let Some(loc) = s.localization {
            LocalizationSpec::new(loc.taper_range)
                .map_err(|_| Error::config("smoother.settings.localization.taper_range", "must be positive"))?;
        }
        if self.oracle.resolution < 50 {
            return Err(Error::config("oracle.resolution", "needs at least 50 nodes per axis"));
        }
        if !(self.oracle.span >= 4.0 && self.oracle.span.is_finite()) {
            return Err(Error::config("oracle.span", "must cover at least 4 prior standard deviations"));
        }
        Ok(())
    }

    /// Hyperparameter treatment for the sampler.
    /// Sampler settings of a resolved config.
    pub fn settings(&self) -> SamplerSettings {
        self.smoother.settings.clone().unwrap_or_else(|| default_settings(self.problem))
    }

    pub fn fixed_hyper(&self) -> Option<HyperParams> {
        let truth = self.truth.unwrap_or_else(|| default_truth(self.problem)).hyper;
        match self.smoother.hyper_mode {
            HyperModeSpec::Hierarchical => None,
            HyperModeSpec::FixedTruth => Some(truth),
            HyperModeSpec::FixedRotated => Some(rotated(truth)),
            HyperModeSpec::Fixed { hyper } => Some(hyper),
        }
    }
}

/// Orientation turned by a quarter turn.
pub fn rotated(h: HyperParams) -> HyperParams {
    match h {
        HyperParams::Aniso2d {
            log_range,
            log_ratio,
            angle,
        } => HyperParams::Aniso2d {
            log_range,
            log_ratio,
            angle: normalize_angle(angle + FRAC_PI_2),
        },
        other => other,
    }
}
