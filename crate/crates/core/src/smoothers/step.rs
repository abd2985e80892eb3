use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Energy fraction of `Σ s²` kept when pseudo-inverting the `Δm` anomalies.
pub const DEFAULT_ENERGY: f64 = 0.999;

/// A data-to-model sensitivity `G_m`, either exact or an ensemble regression
/// `Δd Δm⁺ = B U_kᵀ`.
#[derive(Debug, Clone)]
pub enum Sensitivity {
    Dense(DMatrix<f64>),
    LowRank {
        /// `Δd V_k Σ_k⁻¹`, `N_d × k`.
        b: DMatrix<f64>,
        /// Leading left singular vectors of `Δm`, `N_m × k`.
        u: DMatrix<f64>,
    },
}

impl Sensitivity {
    pub fn n_data(&self) -> usize {
        match self {
            Sensitivity::Dense(g) => g.nrows(),
            Sensitivity::LowRank { b, .. } => b.nrows(),
        }
    }

    pub fn n_model(&self) -> usize {
        match self {
            Sensitivity::Dense(g) => g.ncols(),
            Sensitivity::LowRank { u, .. } => u.nrows(),
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            Sensitivity::Dense(g) => g.nrows().min(g.ncols()),
            Sensitivity::LowRank { b, .. } => b.ncols(),
        }
    }

    /// `G_m A`.
    pub fn apply(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Sensitivity::Dense(g) => g * a,
            Sensitivity::LowRank { b, u } => b * (u.transpose() * a),
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(v);
        let out = match self {
            Sensitivity::Dense(g) => g * v,
            Sensitivity::LowRank { b, u } => b * (u.transpose() * v),
        };
        out.as_slice().to_vec()
    }

    pub fn tr_mul_vec(&self, w: &[f64]) -> Vec<f64> {
        let w = DVector::from_column_slice(w);
        let out = match self {
            Sensitivity::Dense(g) => g.transpose() * w,
            Sensitivity::LowRank { b, u } => u * (b.transpose() * w),
        };
        out.as_slice().to_vec()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Sensitivity::Dense(g) => g.clone(),
            Sensitivity::LowRank { b, u } => b * u.transpose(),
        }
    }
}

/// `G_m ≈ Δd Δm⁺` with a truncated-SVD pseudo-inverse keeping `energy` of
/// the squared singular values. Returns a zero operator when `Δm` vanishes.
pub fn estimate_gm(dm: &DMatrix<f64>, dd: &DMatrix<f64>, energy: f64) -> Result<Sensitivity> {
    if dm.ncols() != dd.ncols() {
        return Err(Error::DimensionMismatch {
            what: "ensemble anomalies",
            expected: dm.ncols(),
            got: dd.ncols(),
        });
    }
    if dm.ncols() < 2 {
        return Err(Error::InvalidObservations(
            "a sensitivity estimate needs at least two members".into(),
        ));
    }
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::config("energy", "must lie in (0, 1]"));
    }
    let svd = dm.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested");
    let vt = svd.v_t.as_ref().expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let floor = svd.singular_values.max() * 1e-12 * dm.nrows().max(dm.ncols()) as f64;
    let mut keep = Vec::new();
    let mut acc = 0.0;
    for &k in &order {
        let s = svd.singular_values[k];
        if total <= 0.0 || s <= floor || acc >= energy * total {
            break;
        }
        keep.push(k);
        acc += s * s;
    }
    let mut b = DMatrix::zeros(dd.nrows(), keep.len());
    let mut uk = DMatrix::zeros(dm.nrows(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let s = svd.singular_values[k];
        let vk = vt.row(k).transpose();
        b.set_column(c, &((dd * vk) / s));
        uk.set_column(c, &u.column(k));
    }
    Ok(Sensitivity::LowRank { b, u: uk })
}

/// One Levenberg–Marquardt Gauss–Newton step in whitened coordinates,
/// `δ = −r/(1+λ) − Gᵀ[(1+λ)I + GGᵀ]⁻¹(e − G r/(1+λ))`, solved in whichever
/// of data or parameter space is smaller.
pub fn gauss_newton_step(g: &DMatrix<f64>, e: &[f64], r: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let (nd, nx) = g.shape();
    if e.len() != nd || r.len() != nx {
        return Err(Error::DimensionMismatch {
            what: "Gauss-Newton step",
            expected: nd + nx,
            got: e.len() + r.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::LinearSolve(format!("lambda must be non-negative, got {lambda}")));
    }
    let a = 1.0 + lambda;
    let ev = DVector::from_column_slice(e);
    let rv = DVector::from_column_slice(r);
    let delta = if nd <= nx {
        let mut m = g * g.transpose();
        for i in 0..nd {
            m[(i, i)] += a;
        }
        let rhs = &ev - g * &rv / a;
        let y = m
            .cholesky()
            .ok_or_else(|| Error::LinearSolve("data-space system is not positive definite".into()))?
            .solve(&rhs);
        -&rv / a - g.transpose() * y
    } else {
        let mut h = g.transpose() * g;
        for i in 0..nx {
            h[(i, i)] += a;
        }
        let rhs = &rv + g.transpose() * &ev;
        -h.cholesky()
            .ok_or_else(|| Error::LinearSolve("parameter-space system is not positive definite".into()))?
            .solve(&rhs)
    };
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve("non-finite step".into()));
    }
    Ok(delta.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |i, j| {
            let k = (i * 31 + j * 17) as u64 + seed * 101;
            ((k * 2654435761 % 1000) as f64 / 500.0) - 1.0
        })
    }

    #[test]
    fn data_and_parameter_space_agree() {
        let e: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        // Wide: data space.
        let g = pseudo(6, 9, 1);
        let r: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let wide = gauss_newton_step(&g, &e, &r, 2.5).unwrap();
        let mut h = g.transpose() * &g;
        for i in 0..9 {
            h[(i, i)] += 3.5;
        }
        let rhs = DVector::from_column_slice(&r) + g.transpose() * DVector::from_column_slice(&e);
        let direct = -h.cholesky().unwrap().solve(&rhs);
        for i in 0..9 {
            assert!((wide[i] - direct[i]).abs() < 1e-10);
        }
        // Tall: parameter space, checked against the data-space formula.
        let g = pseudo(6, 4, 2);
        let r = vec![0.3, -0.1, 0.7, 0.2];
        let tall = gauss_newton_step(&g, &e, &r, 0.5).unwrap();
        let mut m = &g * g.transpose();
        for i in 0..6 {
            m[(i, i)] += 1.5;
        }
        let rv = DVector::from_column_slice(&r);
        let y = m.cholesky().unwrap().solve(&(DVector::from_column_slice(&e) - &g * &rv / 1.5));
        let expect = -&rv / 1.5 - g.transpose() * y;
        for i in 0..4 {
            assert!((tall[i] - expect[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn huge_lambda_freezes() {
        let g = pseudo(5, 7, 3);
        let step = gauss_newton_step(&g, &[1.0; 5], &[1.0; 7], 1e14).unwrap();
        assert!(step.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_lambda_solves_the_normal_equations() {
        // δ minimizes ½|x + δ|² + ½|e + Gδ|² when r = x.
        let g = pseudo(4, 6, 4);
        let r: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
        let e = vec![1.0, -1.0, 0.5, 2.0];
        let d = DVector::from_vec(gauss_newton_step(&g, &e, &r, 0.0).unwrap());
        let grad = DVector::from_column_slice(&r) + &d
            + g.transpose() * (DVector::from_column_slice(&e) + &g * &d);
        assert!(grad.norm() < 1e-10);
    }

    #[test]
    fn regression_recovers_linear_map_on_span() {
        let a = pseudo(5, 12, 7);
        let dm = pseudo(12, 6, 8);
        let dd = &a * &dm;
        let est = estimate_gm(&dm, &dd, 1.0).unwrap();
        for c in 0..6 {
            let v = dm.column(c).clone_owned();
            let got = DVector::from_vec(est.mul_vec(v.as_slice()));
            let want = &a * &v;
            assert!((got - &want).norm() / want.norm() < 1e-8);
        }
        let w = vec![1.0, 0.0, -1.0, 2.0, 0.5];
        let t = est.tr_mul_vec(&w);
        let dense = est.to_dense().transpose() * DVector::from_column_slice(&w);
        assert!((DVector::from_vec(t) - dense).norm() < 1e-12);
    }

    #[test]
    fn duplicate_members_add_no_rank() {
        let base = pseudo(10, 3, 9);
        let mut dm = DMatrix::zeros(10, 6);
        for c in 0..6 {
            dm.set_column(c, &base.column(c % 3));
        }
        let dd = pseudo(4, 10, 10) * &dm;
        assert!(estimate_gm(&dm, &dd, 1.0).unwrap().rank() <= 3);
    }

    #[test]
    fn truncation_drops_weak_directions() {
        let mut dm = DMatrix::zeros(8, 4);
        dm[(0, 0)] = 10.0;
        dm[(1, 1)] = 5.0;
        dm[(2, 2)] = 0.1;
        dm[(3, 3)] = 0.05;
        let dd = DMatrix::from_element(3, 4, 1.0);
        assert_eq!(estimate_gm(&dm, &dd, 0.99).unwrap().rank(), 2);
        assert_eq!(estimate_gm(&dm, &dd, 1.0).unwrap().rank(), 4);
        let zero = estimate_gm(&DMatrix::zeros(8, 4), &dd, 0.99).unwrap();
        assert_eq!(zero.rank(), 0);
        assert!(zero.mul_vec(&[1.0; 8]).iter().all(|v| *v == 0.0));
    }
}
