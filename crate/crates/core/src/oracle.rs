//! Exact posterior for linear-Gaussian problems with two hyperparameters:
//! the hyperparameter marginal on a grid, then `z` from its Gaussian
//! conditional (marginal-then-conditional sampling).

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::covariance::build_l;
use crate::error::{Error, Result};
use crate::field::{Field, StateVector};
use crate::priors::{HyperParams, HyperPrior, NormalPrior};
use crate::rng::{self, Purpose};
use crate::smoothers::Problem;

pub const DEFAULT_RESOLUTION: usize = 101;
pub const DEFAULT_SPAN: f64 = 4.0;

/// Factored pieces of `d | θ`: `A = G_m L(θ)` and the Cholesky factor of
/// `A Aᵀ + C_d`.
struct Marginal {
    a: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// `d° − G_m m_pr`.
    centered: DVector<f64>,
}

fn marginal(problem: &Problem, gm: &DMatrix<f64>, theta: &HyperParams) -> Result<Marginal> {
    let l = build_l(&problem.grid, &problem.family, theta)?;
    let a = gm * l.l();
    let mut s = &a * a.transpose();
    for (i, sd) in problem.obs.noise_std.iter().enumerate() {
        s[(i, i)] += sd * sd;
    }
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::LinearSolve("data covariance is not positive definite".into()))?;
    let pred = gm * DVector::from_column_slice(&problem.prior_mean);
    let centered = DVector::from_column_slice(&problem.obs.values) - pred;
    Ok(Marginal { a, chol, centered })
}

fn linear_gm(problem: &Problem) -> Result<DMatrix<f64>> {
    problem.validate()?;
    problem
        .forward
        .linear_sensitivity()
        .ok_or_else(|| Error::Unsupported("the exact oracle needs a linear forward model".into()))
}

/// `log N(d°; G_m m_pr, G_m L Lᵀ G_mᵀ + C_d)`.
pub fn log_marginal_likelihood(problem: &Problem, theta: &HyperParams) -> Result<f64> {
    let gm = linear_gm(problem)?;
    log_marginal_with(problem, &gm, theta)
}

fn log_marginal_with(problem: &Problem, gm: &DMatrix<f64>, theta: &HyperParams) -> Result<f64> {
    let mg = marginal(problem, gm, theta)?;
    let nd = mg.centered.len() as f64;
    let w = mg.chol.l().solve_lower_triangular(&mg.centered).expect("triangular solve");
    let log_det: f64 = 2.0 * mg.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (w.norm_squared() + log_det + nd * (2.0 * std::f64::consts::PI).ln()))
}

/// Moves a prior draw `(z₀, ε)` to the conditional of `z` given `θ, d°`:
/// `z = z₀ − Aᵀ(AAᵀ + C_d)⁻¹(G_m m_pr + A z₀ + ε − d°)`. With λ = 0 this is
/// exactly one RML step from the anchor.
pub fn conditional_update(problem: &Problem, theta: &HyperParams, z0: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    let gm = linear_gm(problem)?;
    if z0.len() != problem.n_cells() || eps.len() != problem.obs.len() {
        return Err(Error::DimensionMismatch {
            what: "conditional draw",
            expected: problem.n_cells(),
            got: z0.len(),
        });
    }
    let mg = marginal(problem, &gm, theta)?;
    let z = DVector::from_column_slice(z0);
    let innov = &mg.a * &z + DVector::from_column_slice(eps) - &mg.centered;
    let out = &z - mg.a.transpose() * mg.chol.solve(&innov);
    Ok(out.as_slice().to_vec())
}

/// One exact draw of `z | θ, d°`.
pub fn conditional_z_sample<R: Rng + ?Sized>(problem: &Problem, theta: &HyperParams, rng: &mut R) -> Result<Field> {
    let z0: Vec<f64> = (0..problem.n_cells()).map(|_| rng.sample(StandardNormal)).collect();
    let eps: Vec<f64> = problem
        .obs
        .noise_std
        .iter()
        .map(|s| s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Field::new(problem.grid, conditional_update(problem, theta, &z0, &eps)?)
}

/// Conditional mean and covariance of `z | θ, d°`.
pub fn conditional_moments(problem: &Problem, theta: &HyperParams) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let gm = linear_gm(problem)?;
    let mg = marginal(problem, &gm, theta)?;
    let mean = mg.a.transpose() * mg.chol.solve(&mg.centered);
    let cov = DMatrix::identity(problem.n_cells(), problem.n_cells())
        - mg.a.transpose() * mg.chol.solve(&mg.a);
    Ok((mean.as_slice().to_vec(), cov))
}

/// Posterior of two hyperparameters on a regular grid. Node `(i, j)`
/// stands for the cell of half-width `h/2` around it, clipped to the
/// domain, so trapezoid weights are cell masses.
#[derive(Debug, Clone)]
pub struct HyperGrid {
    pub names: [&'static str; 2],
    pub axes: [Vec<f64>; 2],
    /// `log p(d°|θ) + log p(θ)`, row-major in the first axis.
    pub log_post: Vec<f64>,
    /// Normalized cell masses, summing to one.
    pub weights: Vec<f64>,
}

fn prior_axes(prior: &HyperPrior) -> Result<([&'static str; 2], [NormalPrior; 2])> {
    match prior {
        HyperPrior::Scale1d {
            log_sigma,
            log_range,
        } => Ok((["log_sigma", "log_range"], [*log_sigma, *log_range])),
        HyperPrior::Aniso2d { .. } => Err(Error::Unsupported(
            "the hyperparameter grid handles two hyperparameters".into(),
        )),
    }
}

fn trapezoid(n: usize, k: usize) -> f64 {
    if k == 0 || k + 1 == n {
        0.5
    } else {
        1.0
    }
}

/// Evaluates the hyperparameter posterior on `resolution²` nodes spanning
/// prior mean ± `span` prior standard deviations per axis.
pub fn posterior_hyper_grid(problem: &Problem, resolution: usize, span: f64) -> Result<HyperGrid> {
    if resolution < 50 {
        return Err(Error::config("oracle.resolution", "needs at least 50 nodes per axis"));
    }
    if !(span >= 4.0 && span.is_finite()) {
        return Err(Error::config("oracle.span", "must cover at least 4 prior standard deviations"));
    }
    let gm = linear_gm(problem)?;
    let (names, priors) = prior_axes(&problem.prior)?;
    let axes = priors.map(|p| {
        let lo = p.mean - span * p.std;
        let h = 2.0 * span * p.std / (resolution - 1) as f64;
        (0..resolution).map(|k| lo + k as f64 * h).collect::<Vec<_>>()
    });
    let log_post = (0..resolution * resolution)
        .into_par_iter()
        .map(|flat| {
            let theta = HyperParams::Scale1d {
                log_sigma: axes[0][flat / resolution],
                log_range: axes[1][flat % resolution],
            };
            Ok(log_marginal_with(problem, &gm, &theta)? + problem.prior.log_density(&theta)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let top = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = log_post
        .iter()
        .enumerate()
        .map(|(flat, lp)| {
            (lp - top).exp() * trapezoid(resolution, flat / resolution) * trapezoid(resolution, flat % resolution)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(HyperGrid {
        names,
        axes,
        log_post,
        weights,
    })
}

impl HyperGrid {
    pub fn resolution(&self) -> usize {
        self.axes[0].len()
    }

    fn spacing(&self, axis: usize) -> f64 {
        self.axes[axis][1] - self.axes[axis][0]
    }

    /// Clipped cell bounds of node `k` on `axis`.
    fn cell(&self, axis: usize, k: usize) -> (f64, f64) {
        let x = &self.axes[axis];
        let h = self.spacing(axis);
        let lo = (x[k] - 0.5 * h).max(x[0]);
        let hi = (x[k] + 0.5 * h).min(x[x.len() - 1]);
        (lo, hi)
    }

    /// Mass per node of one axis' marginal.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let n = self.resolution();
        let mut out = vec![0.0; n];
        for (flat, w) in self.weights.iter().enumerate() {
            let k = if axis == 0 { flat / n } else { flat % n };
            out[k] += w;
        }
        out
    }

    pub fn marginal_mean(&self, axis: usize) -> f64 {
        self.marginal(axis)
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let (lo, hi) = self.cell(axis, k);
                m * 0.5 * (lo + hi)
            })
            .sum()
    }

    pub fn marginal_std(&self, axis: usize) -> f64 {
        let mean = self.marginal_mean(axis);
        self.marginal(axis)
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let (lo, hi) = self.cell(axis, k);
                let c = 0.5 * (lo + hi);
                m * ((c - mean).powi(2) + (hi - lo).powi(2) / 12.0)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Marginal CDF with each node's mass spread uniformly over its cell.
    pub fn marginal_cdf(&self, axis: usize, x: f64) -> f64 {
        let mut acc = 0.0;
        for (k, m) in self.marginal(axis).iter().enumerate() {
            let (lo, hi) = self.cell(axis, k);
            if x >= hi {
                acc += m;
            } else if x > lo {
                acc += m * (x - lo) / (hi - lo);
            }
        }
        acc.min(1.0)
    }

    pub fn sample_hyper<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<HyperParams> {
        let n = self.resolution();
        let pick = WeightedIndex::new(&self.weights)
            .map_err(|e| Error::InvalidHyper(format!("degenerate grid weights: {e}")))?
            .sample(rng);
        let (l0, h0) = self.cell(0, pick / n);
        let (l1, h1) = self.cell(1, pick % n);
        Ok(HyperParams::Scale1d {
            log_sigma: rng.gen_range(l0..=h0),
            log_range: rng.gen_range(l1..=h1),
        })
    }

    /// Columns `<axis0>,<axis1>,log_post,weight`.
    pub fn to_csv(&self) -> String {
        let n = self.resolution();
        let mut out = format!("{},{},log_post,weight\n", self.names[0], self.names[1]);
        for (flat, (lp, w)) in self.log_post.iter().zip(&self.weights).enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.axes[0][flat / n],
                self.axes[1][flat % n],
                lp,
                w
            ));
        }
        out
    }
}

/// `n` exact posterior draws. Draw `i` uses its own random stream, so the
/// result does not depend on the thread count.
pub fn mtc_sample(problem: &Problem, grid: &HyperGrid, n: usize, seed: u64) -> Result<Vec<StateVector>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, Purpose::Oracle, i as u64);
            let hyper = grid.sample_hyper(&mut rng)?;
            let z = conditional_z_sample(problem, &hyper, &mut rng)?.into_values();
            Ok(StateVector { z, hyper })
        })
        .collect()
}

/// Kolmogorov distance `sup |F_n − F|` between a sample and a CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v: Vec<f64> = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::KernelFamily;
    use crate::field::GridSpec;
    use crate::forward::{observe, LinearObserver, ObsSet};
    use crate::priors::AngleTreatment;
    use crate::smoothers::HyperMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prior() -> HyperPrior {
        HyperPrior::Scale1d {
            log_sigma: NormalPrior::new(-0.22, 0.5),
            log_range: NormalPrior::new(-2.3, 0.6),
        }
    }

    fn setup(n: usize, cells: Vec<usize>, values: Vec<f64>, sd: f64) -> (GridSpec, LinearObserver, ObsSet) {
        let grid = GridSpec::line(n, 0.0, 1.0).unwrap();
        let fwd = LinearObserver::new(grid, cells).unwrap();
        let k = values.len();
        let obs = observe(&fwd, &values, &vec![0.0; k], vec![sd; k]).unwrap();
        (grid, fwd, obs)
    }

    fn problem<'a>(grid: GridSpec, fwd: &'a LinearObserver, obs: &'a ObsSet) -> Problem<'a> {
        Problem {
            grid,
            family: KernelFamily::Gaussian1d,
            prior: prior(),
            prior_mean: vec![0.1; grid.len()],
            forward: fwd,
            obs,
            angle: AngleTreatment::Circular,
            hyper_mode: HyperMode::Hierarchical,
        }
    }

    #[test]
    fn collapsed_prior_gives_the_noise_density() {
        let (grid, fwd, obs) = setup(20, vec![3, 9, 15], vec![0.3, -0.2, 0.5], 0.2);
        let p = problem(grid, &fwd, &obs);
        let theta = HyperParams::Scale1d {
            log_sigma: -40.0,
            log_range: -2.0,
        };
        let got = log_marginal_likelihood(&p, &theta).unwrap();
        let expect: f64 = [0.3, -0.2, 0.5]
            .iter()
            .map(|d| {
                let r = (d - 0.1) / 0.2;
                -0.5 * r * r - (0.2f64).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .sum();
        assert!((got - expect).abs() < 1e-10);
    }

    #[test]
    fn observation_order_does_not_matter() {
        let (grid, fwd, obs) = setup(20, vec![3, 9, 15], vec![0.3, -0.2, 0.5], 0.2);
        let (_, fwd2, obs2) = setup(20, vec![15, 3, 9], vec![0.5, 0.3, -0.2], 0.2);
        let theta = HyperParams::Scale1d {
            log_sigma: 0.1,
            log_range: -1.5,
        };
        let a = log_marginal_likelihood(&problem(grid, &fwd, &obs), &theta).unwrap();
        let b = log_marginal_likelihood(&problem(grid, &fwd2, &obs2), &theta).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn marginal_likelihood_matches_monte_carlo() {
        let (grid, fwd, obs) = setup(10, vec![2, 7], vec![0.6, -0.4], 0.5);
        let p = problem(grid, &fwd, &obs);
        let theta = HyperParams::Scale1d {
            log_sigma: 0.0,
            log_range: (0.3f64).ln(),
        };
        let exact = log_marginal_likelihood(&p, &theta).unwrap().exp();
        let l = build_l(&grid, &p.family, &theta).unwrap();
        let rows = [l.l().row(2).into_owned(), l.l().row(7).into_owned()];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        let norm = 1.0 / (2.0 * std::f64::consts::PI * 0.25);
        let mut z = DVector::zeros(10);
        for _ in 0..n {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let r0 = (0.6 - 0.1 - rows[0].dot(&z.transpose())) / 0.5;
            let r1 = (-0.4 - 0.1 - rows[1].dot(&z.transpose())) / 0.5;
            let v = norm * (-0.5 * (r0 * r0 + r1 * r1)).exp();
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn uninformative_data_recovers_the_prior() {
        let (grid, fwd, obs) = setup(30, vec![5, 20], vec![0.0, 0.0], 1e6);
        let p = problem(grid, &fwd, &obs);
        let hg = posterior_hyper_grid(&p, 101, 4.0).unwrap();
        assert!((hg.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let h = 8.0 * 0.5 / 100.0;
        assert!((hg.marginal_mean(0) + 0.22).abs() < h);
        assert!((hg.marginal_mean(1) + 2.3).abs() < 8.0 * 0.6 / 100.0);
        assert!((hg.marginal_std(0) / 0.5 - 1.0).abs() < 0.02);
        assert!((hg.marginal_cdf(0, -0.22) - 0.5).abs() < 0.01);
    }

    #[test]
    fn grid_rejects_thin_settings() {
        let (grid, fwd, obs) = setup(30, vec![5], vec![0.0], 0.1);
        let p = problem(grid, &fwd, &obs);
        assert!(posterior_hyper_grid(&p, 49, 4.0).is_err());
        assert!(posterior_hyper_grid(&p, 60, 3.0).is_err());
    }

    #[test]
    fn conditional_samples_match_moments() {
        let (grid, fwd, obs) = setup(12, vec![2, 6, 10], vec![0.5, -0.3, 0.8], 0.1);
        let p = problem(grid, &fwd, &obs);
        let theta = HyperParams::Scale1d {
            log_sigma: 0.0,
            log_range: (0.25f64).ln(),
        };
        let (mean, cov) = conditional_moments(&p, &theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| conditional_z_sample(&p, &theta, &mut rng).unwrap().into_values())
            .collect();
        for k in 0..12 {
            let m = draws.iter().map(|d| d[k]).sum::<f64>() / n as f64;
            let v = draws.iter().map(|d| (d[k] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((m - mean[k]).abs() < 0.03 * cov[(k, k)].sqrt().max(mean[k].abs()) + 4.0 * (cov[(k, k)] / n as f64).sqrt());
            assert!((v / cov[(k, k)] - 1.0).abs() < 0.03 + 4.0 * (2.0 / n as f64).sqrt(), "cell {k}");
        }
    }

    #[test]
    fn tiny_noise_interpolates_the_data() {
        let (grid, fwd, obs) = setup(12, vec![2, 6, 10], vec![0.5, -0.3, 0.8], 1e-6);
        let p = problem(grid, &fwd, &obs);
        let theta = HyperParams::Scale1d {
            log_sigma: 0.0,
            log_range: (0.25f64).ln(),
        };
        let (mean, _) = conditional_moments(&p, &theta).unwrap();
        let l = build_l(&grid, &p.family, &theta).unwrap();
        let m = l.realize(&p.prior_mean, &mean).unwrap();
        for (c, d) in [(2, 0.5), (6, -0.3), (10, 0.8)] {
            assert!((m[c] - d).abs() < 1e-4);
        }
    }

    #[test]
    fn ks_distance_basics() {
        let u: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_distance(&u, |x| x) - 0.005).abs() < 1e-12);
        assert!((ks_distance(&[0.0; 10], |x| x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mtc_is_reproducible() {
        let (grid, fwd, obs) = setup(40, vec![4, 12, 20, 28, 36], vec![0.2, 0.4, -0.1, 0.0, 0.3], 0.05);
        let p = problem(grid, &fwd, &obs);
        let hg = posterior_hyper_grid(&p, 51, 4.0).unwrap();
        let a = mtc_sample(&p, &hg, 5, 1).unwrap();
        let b = mtc_sample(&p, &hg, 5, 1).unwrap();
        assert_eq!(a, b);
        let csv = hg.to_csv();
        assert_eq!(csv.lines().count(), 1 + 51 * 51);
    }
}
