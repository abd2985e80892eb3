//! Hyperparameter priors, the Gauss–von Mises orientation density, prior
//! ensembles and the prior terms of the stochastic RML objective.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::StateVector;
use crate::rng::{self, Purpose};

/// Maps an orientation to its representative in `[-π/2, π/2)`.
pub fn normalize_angle(phi: f64) -> f64 {
    if (-FRAC_PI_2..FRAC_PI_2).contains(&phi) {
        return phi;
    }
    let r = (phi + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if r >= FRAC_PI_2 {
        r - PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperKind {
    /// (ln σ, ln a) of a one-dimensional kernel.
    Scale1d,
    /// (ln ρ, ln α, φ) of a geometrically anisotropic 2D kernel.
    Aniso2d,
}

impl HyperKind {
    pub fn len(self) -> usize {
        match self {
            HyperKind::Scale1d => 2,
            HyperKind::Aniso2d => 3,
        }
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn names(self) -> &'static [&'static str] {
        match self {
            HyperKind::Scale1d => &["log_sigma", "log_range"],
            HyperKind::Aniso2d => &["log_range", "log_ratio", "angle"],
        }
    }

    /// Position of the circular component within the hyperparameter block.
    pub fn angle_slot(self) -> Option<usize> {
        match self {
            HyperKind::Scale1d => None,
            HyperKind::Aniso2d => Some(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HyperParams {
    Scale1d { log_sigma: f64, log_range: f64 },
    Aniso2d { log_range: f64, log_ratio: f64, angle: f64 },
}

impl HyperParams {
    pub fn kind(&self) -> HyperKind {
        match self {
            HyperParams::Scale1d { .. } => HyperKind::Scale1d,
            HyperParams::Aniso2d { .. } => HyperKind::Aniso2d,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            HyperParams::Scale1d {
                log_sigma,
                log_range,
            } => vec![log_sigma, log_range],
            HyperParams::Aniso2d {
                log_range,
                log_ratio,
                angle,
            } => vec![log_range, log_ratio, angle],
        }
    }

    pub fn from_slice(kind: HyperKind, v: &[f64]) -> Result<Self> {
        if v.len() != kind.len() {
            return Err(Error::DimensionMismatch {
                what: "hyperparameter block",
                expected: kind.len(),
                got: v.len(),
            });
        }
        Ok(match kind {
            HyperKind::Scale1d => HyperParams::Scale1d {
                log_sigma: v[0],
                log_range: v[1],
            },
            HyperKind::Aniso2d => HyperParams::Aniso2d {
                log_range: v[0],
                log_ratio: v[1],
                angle: v[2],
            },
        })
    }

    pub fn normalized(self) -> Self {
        match self {
            HyperParams::Aniso2d {
                log_range,
                log_ratio,
                angle,
            } => HyperParams::Aniso2d {
                log_range,
                log_ratio,
                angle: normalize_angle(angle),
            },
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_vec().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidHyper(format!("non-finite value in {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalPrior {
    pub mean: f64,
    pub std: f64,
}

impl NormalPrior {
    pub fn new(mean: f64, std: f64) -> Self {
        NormalPrior { mean, std }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e: f64 = rng.sample(StandardNormal);
        self.mean + self.std * e
    }

    fn log_density(&self, v: f64) -> f64 {
        let t = (v - self.mean) / self.std;
        -0.5 * t * t - self.std.ln() - 0.5 * (2.0 * PI).ln()
    }
}

/// Gauss–von Mises density on the axial circle, period π.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussVonMises {
    pub mu: f64,
    pub kappa: f64,
}

impl GaussVonMises {
    pub fn new(mu: f64, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite() && mu.is_finite()) {
            return Err(Error::InvalidHyper(format!(
                "Gauss-von Mises needs finite mu and kappa >= 0, got ({mu}, {kappa})"
            )));
        }
        Ok(GaussVonMises { mu, kappa })
    }

    pub fn density(&self, phi: f64) -> f64 {
        gvm_density(phi, self.mu, self.kappa)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        gvm_sample(self.mu, self.kappa, rng)
    }
}

/// `exp(κ cos 2(φ−μ)) / (π I₀(κ))`, evaluated with the exponent shifted by
/// κ so large concentrations do not overflow.
pub fn gvm_density(phi: f64, mu: f64, kappa: f64) -> f64 {
    let scaled_i0 = bessel_i0_scaled(kappa);
    (kappa * ((2.0 * (phi - mu)).cos() - 1.0)).exp() / (PI * scaled_i0)
}

/// `I₀(κ) e^{−κ}`.
fn bessel_i0_scaled(kappa: f64) -> f64 {
    if kappa < 500.0 {
        puruspe::In(0, kappa) * (-kappa).exp()
    } else {
        // Leading terms of the large-argument expansion.
        let t = 1.0 / (8.0 * kappa);
        (1.0 + t + 9.0 * t * t / 2.0) / (2.0 * PI * kappa).sqrt()
    }
}

/// Rejection sampler: uniform proposal on `[-π/2, π/2)`, accepted with
/// probability `exp(κ(cos 2(φ−μ) − 1))`.
pub fn gvm_sample<R: Rng + ?Sized>(mu: f64, kappa: f64, rng: &mut R) -> f64 {
    loop {
        let phi = -FRAC_PI_2 + PI * rng.gen::<f64>();
        if kappa == 0.0 {
            return phi;
        }
        let accept = (kappa * ((2.0 * (phi - mu)).cos() - 1.0)).exp();
        if rng.gen::<f64>() < accept {
            return normalize_angle(phi);
        }
    }
}

/// How the orientation enters the prior residual of the Gauss–Newton step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleTreatment {
    /// Residual `½ sin 2(φ−φ*)` from the Gauss–von Mises log density.
    #[default]
    Circular,
    /// Residual `φ−φ*` (wrapped), i.e. a Gaussian of variance 1/(4κ).
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HyperPrior {
    Scale1d {
        log_sigma: NormalPrior,
        log_range: NormalPrior,
    },
    Aniso2d {
        log_range: NormalPrior,
        log_ratio: NormalPrior,
        angle: GaussVonMises,
    },
}

impl HyperPrior {
    pub fn kind(&self) -> HyperKind {
        match self {
            HyperPrior::Scale1d { .. } => HyperKind::Scale1d,
            HyperPrior::Aniso2d { .. } => HyperKind::Aniso2d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let normals: &[NormalPrior] = match self {
            HyperPrior::Scale1d {
                log_sigma,
                log_range,
            } => &[*log_sigma, *log_range],
            HyperPrior::Aniso2d {
                log_range,
                log_ratio,
                angle,
            } => {
                GaussVonMises::new(angle.mu, angle.kappa)?;
                &[*log_range, *log_ratio]
            }
        };
        for n in normals {
            if !(n.std > 0.0 && n.std.is_finite() && n.mean.is_finite()) {
                return Err(Error::InvalidHyper(format!(
                    "log-normal prior needs finite mean and std > 0, got {n:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HyperParams {
        match self {
            HyperPrior::Scale1d {
                log_sigma,
                log_range,
            } => HyperParams::Scale1d {
                log_sigma: log_sigma.sample(rng),
                log_range: log_range.sample(rng),
            },
            HyperPrior::Aniso2d {
                log_range,
                log_ratio,
                angle,
            } => HyperParams::Aniso2d {
                log_range: log_range.sample(rng),
                log_ratio: log_ratio.sample(rng),
                angle: angle.sample(rng),
            },
        }
    }

    pub fn mean(&self) -> HyperParams {
        match self {
            HyperPrior::Scale1d {
                log_sigma,
                log_range,
            } => HyperParams::Scale1d {
                log_sigma: log_sigma.mean,
                log_range: log_range.mean,
            },
            HyperPrior::Aniso2d {
                log_range,
                log_ratio,
                angle,
            } => HyperParams::Aniso2d {
                log_range: log_range.mean,
                log_ratio: log_ratio.mean,
                angle: normalize_angle(angle.mu),
            },
        }
    }

    pub fn log_density(&self, h: &HyperParams) -> Result<f64> {
        match (self, h) {
            (
                HyperPrior::Scale1d {
                    log_sigma: ps,
                    log_range: pr,
                },
                HyperParams::Scale1d {
                    log_sigma,
                    log_range,
                },
            ) => Ok(ps.log_density(*log_sigma) + pr.log_density(*log_range)),
            (
                HyperPrior::Aniso2d {
                    log_range: pr,
                    log_ratio: pa,
                    angle: pphi,
                },
                HyperParams::Aniso2d {
                    log_range,
                    log_ratio,
                    angle,
                },
            ) => Ok(pr.log_density(*log_range)
                + pa.log_density(*log_ratio)
                + pphi.density(*angle).ln()),
            _ => Err(kind_mismatch()),
        }
    }

    /// Diagonal of the (pseudo) prior covariance of the hyperparameter block:
    /// the log-parameter variances and `1/(4κ)` for the orientation.
    pub fn variances(&self) -> Result<Vec<f64>> {
        match self {
            HyperPrior::Scale1d {
                log_sigma,
                log_range,
            } => Ok(vec![log_sigma.std.powi(2), log_range.std.powi(2)]),
            HyperPrior::Aniso2d {
                log_range,
                log_ratio,
                angle,
            } => {
                if angle.kappa <= 0.0 {
                    return Err(Error::InvalidHyper(
                        "kappa = 0 gives an orientation prior with no Gauss-Newton curvature; \
                         hold the orientation fixed or use kappa > 0"
                            .into(),
                    ));
                }
                Ok(vec![
                    log_range.std.powi(2),
                    log_ratio.std.powi(2),
                    1.0 / (4.0 * angle.kappa),
                ])
            }
        }
    }

    fn kappa(&self) -> Option<f64> {
        match self {
            HyperPrior::Aniso2d { angle, .. } => Some(angle.kappa),
            HyperPrior::Scale1d { .. } => None,
        }
    }

    fn check_pair(&self, x: &StateVector, anchor: &StateVector) -> Result<()> {
        if x.hyper.kind() != self.kind() || anchor.hyper.kind() != self.kind() {
            return Err(kind_mismatch());
        }
        if x.z.len() != anchor.z.len() {
            return Err(Error::DimensionMismatch {
                what: "anchor latent field",
                expected: x.z.len(),
                got: anchor.z.len(),
            });
        }
        Ok(())
    }

    /// Gradient of the prior part of the stochastic objective:
    /// `[(z−z*); C_u⁻¹(u−u*); 2κ sin 2(φ−φ*)]`.
    pub fn prior_gradient(&self, x: &StateVector, anchor: &StateVector) -> Result<Vec<f64>> {
        self.check_pair(x, anchor)?;
        let mut g: Vec<f64> = x.z.iter().zip(&anchor.z).map(|(a, b)| a - b).collect();
        let h = x.hyper.to_vec();
        let hs = anchor.hyper.to_vec();
        let stds = self.log_stds();
        for (k, (a, b)) in h.iter().zip(&hs).enumerate() {
            if Some(k) == self.kind().angle_slot() {
                let kappa = self.kappa().unwrap_or(0.0);
                g.push(2.0 * kappa * (2.0 * (a - b)).sin());
            } else {
                g.push((a - b) / stds[k].powi(2));
            }
        }
        Ok(g)
    }

    /// Residual `r` such that the prior gradient equals `C_x⁻¹ r`:
    /// `[(z−z*); (u−u*); ½ sin 2(φ−φ*)]`, or the wrapped difference for the
    /// orientation under [`AngleTreatment::Gaussian`].
    pub fn prior_residual(
        &self,
        x: &StateVector,
        anchor: &StateVector,
        treatment: AngleTreatment,
    ) -> Result<Vec<f64>> {
        self.check_pair(x, anchor)?;
        let mut r: Vec<f64> = x.z.iter().zip(&anchor.z).map(|(a, b)| a - b).collect();
        let h = x.hyper.to_vec();
        let hs = anchor.hyper.to_vec();
        for (k, (a, b)) in h.iter().zip(&hs).enumerate() {
            if Some(k) == self.kind().angle_slot() {
                r.push(match treatment {
                    AngleTreatment::Circular => 0.5 * (2.0 * (a - b)).sin(),
                    AngleTreatment::Gaussian => normalize_angle(a - b),
                });
            } else {
                r.push(a - b);
            }
        }
        Ok(r)
    }

    /// Prior part of the stochastic objective, zero at the anchor:
    /// `½|z−z*|² + ½ Σ (u−u*)²/σ² + κ(1 − cos 2(φ−φ*))` (circular) or
    /// `2κ (φ−φ*)²` (Gaussian).
    pub fn prior_objective(
        &self,
        x: &StateVector,
        anchor: &StateVector,
        treatment: AngleTreatment,
    ) -> Result<f64> {
        self.check_pair(x, anchor)?;
        let mut s: f64 = 0.5
            * x.z
                .iter()
                .zip(&anchor.z)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        let h = x.hyper.to_vec();
        let hs = anchor.hyper.to_vec();
        let stds = self.log_stds();
        for (k, (a, b)) in h.iter().zip(&hs).enumerate() {
            if Some(k) == self.kind().angle_slot() {
                let kappa = self.kappa().unwrap_or(0.0);
                s += match treatment {
                    AngleTreatment::Circular => kappa * (1.0 - (2.0 * (a - b)).cos()),
                    AngleTreatment::Gaussian => 2.0 * kappa * normalize_angle(a - b).powi(2),
                };
            } else {
                s += 0.5 * ((a - b) / stds[k]).powi(2);
            }
        }
        Ok(s)
    }

    fn log_stds(&self) -> Vec<f64> {
        match self {
            HyperPrior::Scale1d {
                log_sigma,
                log_range,
            } => vec![log_sigma.std, log_range.std],
            HyperPrior::Aniso2d {
                log_range,
                log_ratio,
                ..
            } => vec![log_range.std, log_ratio.std, f64::NAN],
        }
    }
}

fn kind_mismatch() -> Error {
    Error::InvalidHyper("hyperparameter kind does not match the prior".into())
}

/// Iterates of the samplers plus what each member needs for its stochastic
/// objective: the prior anchor x′ and the observation perturbation ε′.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<StateVector>,
    pub anchors: Vec<StateVector>,
    pub perturbed_obs: Vec<Vec<f64>>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Draws one prior member: iid standard-normal latent cells, hyperparameters
/// from `prior`, and `ε′ ~ N(0, diag(noise_std²))`. The member starts at
/// its own anchor.
pub fn sample_member(
    index: usize,
    prior: &HyperPrior,
    n_cells: usize,
    noise_std: &[f64],
    seed: u64,
) -> (StateVector, Vec<f64>) {
    let mut rng = rng::stream(seed, Purpose::Ensemble, index as u64);
    let z: Vec<f64> = (0..n_cells).map(|_| rng.sample(StandardNormal)).collect();
    let hyper = prior.sample(&mut rng);
    let eps = noise_std
        .iter()
        .map(|s| s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (StateVector { z, hyper }, eps)
}

pub fn sample_prior_ensemble(
    n_members: usize,
    prior: &HyperPrior,
    n_cells: usize,
    noise_std: &[f64],
    seed: u64,
) -> Result<Ensemble> {
    prior.validate()?;
    if let Some(k) = noise_std.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::InvalidObservations(format!(
            "noise std at datum {k} must be positive"
        )));
    }
    let mut members = Vec::with_capacity(n_members);
    let mut perturbed_obs = Vec::with_capacity(n_members);
    for i in 0..n_members {
        let (x, eps) = sample_member(i, prior, n_cells, noise_std, seed);
        members.push(x);
        perturbed_obs.push(eps);
    }
    Ok(Ensemble {
        anchors: members.clone(),
        members,
        perturbed_obs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn aniso_prior(kappa: f64) -> HyperPrior {
        HyperPrior::Aniso2d {
            log_range: NormalPrior::new(0.0, 0.3),
            log_ratio: NormalPrior::new(1.2, 0.4),
            angle: GaussVonMises { mu: 0.7, kappa },
        }
    }

    fn state(z: Vec<f64>, h: [f64; 3]) -> StateVector {
        StateVector {
            z,
            hyper: HyperParams::Aniso2d {
                log_range: h[0],
                log_ratio: h[1],
                angle: h[2],
            },
        }
    }

    #[test]
    fn angle_normalization() {
        assert_eq!(normalize_angle(0.3), 0.3);
        assert!((normalize_angle(0.3 + PI) - 0.3).abs() < 1e-12);
        assert!((normalize_angle(FRAC_PI_2) + FRAC_PI_2).abs() < 1e-15);
        assert!((normalize_angle(-FRAC_PI_2) + FRAC_PI_2).abs() < 1e-15);
        for k in -20..20 {
            let v = normalize_angle(0.1 * k as f64 * 1.7);
            assert!((-FRAC_PI_2..FRAC_PI_2).contains(&v));
        }
    }

    #[test]
    fn uniform_limit_of_gvm() {
        for phi in [-1.5, -0.2, 0.0, 1.0, 3.0] {
            assert!((gvm_density(phi, 0.4, 0.0) - 1.0 / PI).abs() < 1e-15);
        }
    }

    #[test]
    fn gvm_mode_to_antimode_ratio() {
        for kappa in [0.5, 2.0, 10.0] {
            let r = gvm_density(0.3, 0.3, kappa) / gvm_density(0.3 + FRAC_PI_2, 0.3, kappa);
            assert!((r / (2.0 * kappa).exp() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gvm_is_pi_periodic() {
        for phi in [-1.0, 0.2, 1.4] {
            let a = gvm_density(phi, 0.5, 3.0);
            let b = gvm_density(phi + PI, 0.5, 3.0);
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn large_kappa_density_is_finite() {
        let d = gvm_density(0.0, 0.0, 5000.0);
        // Approaches a Gaussian of variance 1/(4κ) at the mode.
        let gauss = 1.0 / (2.0 * PI / (4.0 * 5000.0)).sqrt();
        assert!((d / gauss - 1.0).abs() < 1e-3);
        assert!((gvm_density(0.0, 0.0, 499.0) / gvm_density(0.0, 0.0, 501.0) - 1.0).abs() < 5e-3);
    }

    #[test]
    fn gradient_vanishes_at_anchor_and_antipode() {
        let p = aniso_prior(4.0);
        let x = state(vec![0.3, -1.0], [0.1, 1.0, 0.4]);
        assert!(p.prior_gradient(&x, &x).unwrap().iter().all(|g| *g == 0.0));
        let y = state(vec![0.3, -1.0], [0.1, 1.0, 0.4 + FRAC_PI_2]);
        let g = p.prior_gradient(&y, &x).unwrap();
        assert!(g[4].abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_difference_of_objective() {
        let p = aniso_prior(3.0);
        let anchor = state(vec![0.5, -0.2, 1.0], [0.2, 1.1, 0.3]);
        let x = state(vec![0.1, 0.4, 0.7], [-0.3, 1.5, 0.9]);
        let g = p.prior_gradient(&x, &anchor).unwrap();
        let base = x.to_vec();
        let h = 1e-6;
        for k in 0..base.len() {
            let mut up = base.clone();
            let mut dn = base.clone();
            up[k] += h;
            dn[k] -= h;
            let f = |v: &[f64]| {
                let s = StateVector::unpack(v, x.layout()).unwrap();
                p.prior_objective(&s, &anchor, AngleTreatment::Circular).unwrap()
            };
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-3), "k={k} fd={fd} g={}", g[k]);
        }
    }

    #[test]
    fn residual_times_inverse_covariance_is_gradient() {
        let p = aniso_prior(2.5);
        let anchor = state(vec![0.0; 2], [0.2, 1.1, -0.3]);
        let x = state(vec![1.0, -1.0], [0.5, 0.8, 0.6]);
        let r = p.prior_residual(&x, &anchor, AngleTreatment::Circular).unwrap();
        let g = p.prior_gradient(&x, &anchor).unwrap();
        let var = p.variances().unwrap();
        for k in 0..3 {
            assert!((r[2 + k] / var[k] - g[2 + k]).abs() < 1e-12);
        }
    }

    #[test]
    fn circular_and_gaussian_residuals_agree_to_third_order() {
        let p = aniso_prior(50.0);
        let anchor = state(vec![], [0.0, 0.0, 0.2]);
        for d in [-0.1, -0.03, 0.01, 0.05, 0.1] {
            let x = state(vec![], [0.0, 0.0, 0.2 + d]);
            let c = p.prior_residual(&x, &anchor, AngleTreatment::Circular).unwrap()[2];
            let g = p.prior_residual(&x, &anchor, AngleTreatment::Gaussian).unwrap()[2];
            assert!((c - g).abs() <= 0.7 * d.abs().powi(3), "d={d}");
        }
    }

    #[test]
    fn pseudo_hessian_is_positive_definite() {
        for kappa in [1e-3, 0.5, 10.0, 1e4] {
            let v = aniso_prior(kappa).variances().unwrap();
            assert!(v.iter().all(|x| *x > 0.0 && x.is_finite()));
        }
        assert!(aniso_prior(0.0).variances().is_err());
    }

    #[test]
    fn ensemble_is_reproducible() {
        let p = HyperPrior::Scale1d {
            log_sigma: NormalPrior::new(-0.22, 0.5),
            log_range: NormalPrior::new(-2.3, 0.6),
        };
        let a = sample_prior_ensemble(5, &p, 10, &[0.01; 4], 99).unwrap();
        let b = sample_prior_ensemble(5, &p, 10, &[0.01; 4], 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.members, a.anchors);
        assert!(sample_prior_ensemble(5, &p, 10, &[0.0; 4], 99).is_err());
    }

    #[test]
    fn gvm_samples_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let v = gvm_sample(1.5, 3.0, &mut rng);
            assert!((-FRAC_PI_2..FRAC_PI_2).contains(&v));
        }
    }
}
