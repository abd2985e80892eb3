use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaspari–Cohn fifth-order taper with half-support `c`: 1 at distance 0 and
/// exactly 0 from `2c` on.
pub fn gaspari_cohn(distance: f64, c: f64) -> f64 {
    let r = distance.abs() / c;
    if r <= 1.0 {
        (((-0.25 * r + 0.5) * r + 0.625) * r - 5.0 / 3.0) * r * r + 1.0
    } else if r < 2.0 {
        ((((r / 12.0 - 0.5) * r + 0.625) * r + 5.0 / 3.0) * r - 5.0) * r + 4.0 - 2.0 / (3.0 * r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationSpec {
    /// Distance at which the taper reaches zero, in the grid's length unit.
    pub taper_range: f64,
}

impl LocalizationSpec {
    pub fn new(taper_range: f64) -> Result<Self> {
        if !(taper_range > 0.0 && taper_range.is_finite()) {
            return Err(Error::config("localization.taper_range", "must be positive"));
        }
        Ok(LocalizationSpec { taper_range })
    }

    pub fn weight(&self, distance: f64) -> f64 {
        gaspari_cohn(distance, 0.5 * self.taper_range)
    }

    /// Taper between each cell and each datum anchor.
    pub fn taper_matrix(&self, cells: &[[f64; 2]], anchors: &[[f64; 2]]) -> DMatrix<f64> {
        DMatrix::from_fn(cells.len(), anchors.len(), |i, j| {
            let (a, b) = (cells[i], anchors[j]);
            self.weight(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        })
    }
}

/// Whitened inputs of one IES iteration.
pub struct IesInputs<'a> {
    /// State anomalies over `√(N−1)`, one column per member.
    pub dx: &'a DMatrix<f64>,
    /// Response anomalies over `√(N−1)`.
    pub dd: &'a DMatrix<f64>,
    /// Prior residuals `x − x′` per member.
    pub residuals: &'a [Vec<f64>],
    /// `g + ε′ − d°` per member.
    pub innovations: &'a [Vec<f64>],
    pub lambda: f64,
    /// Optional taper on the first `taper.nrows()` state rows.
    pub taper: Option<&'a DMatrix<f64>>,
}

/// Updates `δx_i = −Δx Δxᵀ r_i/(1+λ) − K (e_i − Δd Δxᵀ r_i/(1+λ))` with
/// `K = Δx[(1+λ)I + ΔdᵀΔd]⁻¹Δdᵀ`, tapered element-wise when localized.
pub fn ies_update(inp: &IesInputs) -> Result<Vec<Vec<f64>>> {
    let n = inp.dx.ncols();
    if inp.dd.ncols() != n || inp.residuals.len() != n || inp.innovations.len() != n {
        return Err(Error::DimensionMismatch {
            what: "ensemble size",
            expected: n,
            got: inp.dd.ncols(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidObservations("IES needs at least two members".into()));
    }
    let a = 1.0 + inp.lambda;
    let mut m = inp.dd.transpose() * inp.dd;
    for i in 0..n {
        m[(i, i)] += a;
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::LinearSolve("ensemble-space system is not positive definite".into()))?;
    let mut gain = inp.dx * chol.solve(&inp.dd.transpose());
    if let Some(t) = inp.taper {
        if t.nrows() > gain.nrows() || t.ncols() != gain.ncols() {
            return Err(Error::DimensionMismatch {
                what: "localization taper",
                expected: gain.ncols(),
                got: t.ncols(),
            });
        }
        let mut rows = gain.rows_mut(0, t.nrows());
        rows.component_mul_assign(t);
    }
    let mut out = Vec::with_capacity(n);
    for (r, e) in inp.residuals.iter().zip(inp.innovations) {
        let rv = DVector::from_column_slice(r);
        let ev = DVector::from_column_slice(e);
        let proj = inp.dx.transpose() * rv / a;
        let delta = -(inp.dx * &proj) - &gain * (ev - inp.dd * &proj);
        out.push(delta.as_slice().to_vec());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn taper_shape() {
        let loc = LocalizationSpec::new(1.0).unwrap();
        assert!((loc.weight(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(loc.weight(1.0), 0.0);
        assert_eq!(loc.weight(3.0), 0.0);
        // Continuous at the half-support and decreasing.
        let c = 0.5;
        assert!((gaspari_cohn(c - 1e-9, c) - gaspari_cohn(c + 1e-9, c)).abs() < 1e-7);
        assert!((gaspari_cohn(c, c) - 5.0 / 24.0).abs() < 1e-12);
        let mut prev = 1.0;
        for k in 1..100 {
            let w = loc.weight(k as f64 / 100.0);
            assert!(w <= prev + 1e-15 && w >= 0.0);
            prev = w;
        }
        assert!(LocalizationSpec::new(0.0).is_err());
    }

    #[test]
    fn collapsed_ensemble_only_pulls_to_prior() {
        let dx = DMatrix::zeros(3, 4);
        let dd = DMatrix::zeros(2, 4);
        let r = vec![vec![0.0; 3]; 4];
        let e = vec![vec![1.0, 2.0]; 4];
        let out = ies_update(&IesInputs {
            dx: &dx,
            dd: &dd,
            residuals: &r,
            innovations: &e,
            lambda: 0.0,
            taper: None,
        })
        .unwrap();
        assert!(out.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn large_ensemble_matches_kalman_update() {
        // Linear whitened problem: x ~ N(0, I), d = G x + noise (whitened).
        let (nx, nd, ne) = (4, 3, 5000);
        let g = DMatrix::from_row_slice(
            nd,
            nx,
            &[1.0, 0.5, 0.0, -0.3, 0.0, 1.2, 0.4, 0.0, 0.2, 0.0, 0.9, 0.7],
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let xs = DMatrix::from_fn(nx, ne, |_, _| StandardNormal.sample(&mut rng));
        let mean = xs.column_mean();
        let mut dx = xs.clone();
        for mut c in dx.column_iter_mut() {
            c -= &mean;
        }
        dx /= ((ne - 1) as f64).sqrt();
        let dd = &g * &dx;
        let d_obs = DVector::from_vec(vec![1.0, -0.5, 0.8]);
        let innovations: Vec<Vec<f64>> = (0..ne)
            .map(|i| (&g * xs.column(i) - &d_obs).as_slice().to_vec())
            .collect();
        // Members start at their anchors.
        let residuals = vec![vec![0.0; nx]; ne];
        let out = ies_update(&IesInputs {
            dx: &dx,
            dd: &dd,
            residuals: &residuals,
            innovations: &innovations,
            lambda: 0.0,
            taper: None,
        })
        .unwrap();
        let mut post_mean = DVector::zeros(nx);
        for (i, d) in out.iter().enumerate() {
            post_mean += xs.column(i) + DVector::from_column_slice(d);
        }
        post_mean /= ne as f64;
        let mut s = &g * g.transpose();
        for i in 0..nd {
            s[(i, i)] += 1.0;
        }
        let exact = g.transpose() * s.cholesky().unwrap().solve(&d_obs);
        for i in 0..nx {
            assert!(
                (post_mean[i] - exact[i]).abs() < 0.05 * exact.amax(),
                "{} vs {}",
                post_mean[i],
                exact[i]
            );
        }
    }

    #[test]
    fn zero_taper_blocks_the_data_term() {
        let dx = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 0.5, 0.0, -0.5]);
        let dd = DMatrix::from_row_slice(1, 3, &[0.3, -0.2, -0.1]);
        let taper = DMatrix::zeros(2, 1);
        let r = vec![vec![0.0; 2]; 3];
        let e = vec![vec![1.0]; 3];
        let out = ies_update(&IesInputs {
            dx: &dx,
            dd: &dd,
            residuals: &r,
            innovations: &e,
            lambda: 1.0,
            taper: Some(&taper),
        })
        .unwrap();
        assert!(out.iter().flatten().all(|v| *v == 0.0));
    }
}
