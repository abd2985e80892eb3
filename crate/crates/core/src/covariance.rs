//! Convolution square roots of stationary covariance kernels, discretized to
//! dense matrices `L(θ)` with `L Lᵀ ≈ C_m`, together with their analytic
//! derivatives with respect to the log-hyperparameters.
//!
//! Entries are `L[i][j] = f(x_i − x_j) · √(cell measure)` so that the matrix
//! product approximates the continuous convolution integral. Boundaries get
//! no special treatment.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, GridSpec};
use crate::priors::{normalize_angle, HyperKind, HyperParams};

/// Largest grid for which dense factors are built.
pub const MAX_DENSE_CELLS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpVariant {
    /// Even factor proportional to `K₀(|r|/a)`.
    #[default]
    Symmetric,
    /// Causal factor `H(r) e^{−r/a}`, finite everywhere.
    OneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelFamily {
    /// `C(r) = σ² e^{−|r|/a}`; σ and a come from the hyperparameters.
    Exponential1d {
        #[serde(default)]
        variant: ExpVariant,
    },
    /// `C(r) = σ² e^{−r²/a²}`; σ and a come from the hyperparameters.
    Gaussian1d,
    /// `C(r) = σ² e^{−3r²/ρ²}` with the geometrically anisotropic distance.
    Gaussian2d { sigma: f64 },
}

impl KernelFamily {
    pub fn hyper_kind(&self) -> HyperKind {
        match self {
            KernelFamily::Exponential1d { .. } | KernelFamily::Gaussian1d => HyperKind::Scale1d,
            KernelFamily::Gaussian2d { .. } => HyperKind::Aniso2d,
        }
    }

    fn validate(&self, grid: &GridSpec) -> Result<()> {
        match self {
            KernelFamily::Gaussian2d { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => Err(
                Error::InvalidHyper(format!("kernel sigma must be positive, got {sigma}")),
            ),
            KernelFamily::Exponential1d { .. } | KernelFamily::Gaussian1d if grid.ny() != 1 => {
                Err(Error::Unsupported(
                    "one-dimensional kernels need a grid with ny = 1".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Range, stretch and orientation of a geometrically anisotropic kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnisoParams {
    pub rho: f64,
    pub alpha: f64,
    pub phi: f64,
}

impl AnisoParams {
    pub fn new(rho: f64, alpha: f64, phi: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite() && alpha > 0.0 && alpha.is_finite() && phi.is_finite())
        {
            return Err(Error::InvalidHyper(format!(
                "anisotropy needs rho > 0, alpha > 0 and finite phi, got ({rho}, {alpha}, {phi})"
            )));
        }
        Ok(AnisoParams {
            rho,
            alpha,
            phi: normalize_angle(phi),
        })
    }
}

pub type Mat2 = [[f64; 2]; 2];

/// Metric `H = Aᵀ A` of the rotate-then-stretch transform.
pub fn aniso_metric(p: &AnisoParams) -> Mat2 {
    let (s, c) = p.phi.sin_cos();
    let a2 = p.alpha * p.alpha;
    let off = (1.0 - a2) * s * c;
    [[c * c + a2 * s * s, off], [off, s * s + a2 * c * c]]
}

fn quad_form(h: &Mat2, d: [f64; 2]) -> f64 {
    d[0] * (h[0][0] * d[0] + h[0][1] * d[1]) + d[1] * (h[1][0] * d[0] + h[1][1] * d[1])
}

/// `dxᵀ H dx`: squared distance after rotating by φ and stretching the second
/// principal axis by α.
pub fn aniso_distance_sq(dx: [f64; 2], p: &AnisoParams) -> f64 {
    quad_form(&aniso_metric(p), dx)
}

/// `(∂H/∂φ, ∂H/∂α)`.
pub fn aniso_metric_derivatives(p: &AnisoParams) -> (Mat2, Mat2) {
    let (s2, c2) = (2.0 * p.phi).sin_cos();
    let k = 1.0 - p.alpha * p.alpha;
    let d_phi = [[-k * s2, k * c2], [k * c2, k * s2]];
    let a = p.alpha;
    let d_alpha = [[a * (1.0 - c2), -a * s2], [-a * s2, a * (1.0 + c2)]];
    (d_phi, d_alpha)
}

/// Kernel parameters in natural units, resolved from a family and a
/// hyperparameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelParams {
    Scale { sigma: f64, range: f64 },
    Aniso { sigma: f64, aniso: AnisoParams },
}

impl KernelParams {
    pub fn resolve(family: &KernelFamily, hyper: &HyperParams) -> Result<Self> {
        hyper.validate()?;
        match (family, hyper) {
            (
                KernelFamily::Exponential1d { .. } | KernelFamily::Gaussian1d,
                HyperParams::Scale1d {
                    log_sigma,
                    log_range,
                },
            ) => {
                let (sigma, range) = (log_sigma.exp(), log_range.exp());
                if !(sigma > 0.0 && sigma.is_finite() && range > 0.0 && range.is_finite()) {
                    return Err(Error::InvalidHyper(format!(
                        "sigma and range out of representable range: ({sigma}, {range})"
                    )));
                }
                Ok(KernelParams::Scale { sigma, range })
            }
            (
                KernelFamily::Gaussian2d { sigma },
                HyperParams::Aniso2d {
                    log_range,
                    log_ratio,
                    angle,
                },
            ) => Ok(KernelParams::Aniso {
                sigma: *sigma,
                aniso: AnisoParams::new(log_range.exp(), log_ratio.exp(), *angle)?,
            }),
            _ => Err(Error::InvalidHyper(format!(
                "hyperparameters {:?} do not fit kernel {family:?}",
                hyper.kind()
            ))),
        }
    }
}

/// Value of the square-root kernel `f` at an offset (only `offset[0]` is used
/// by the one-dimensional families). The symmetric exponential factor is
/// infinite at zero offset; see [`build_l`] for how the diagonal is handled.
pub fn sqrt_kernel_value(family: &KernelFamily, offset: [f64; 2], params: &KernelParams) -> f64 {
    match (family, params) {
        (KernelFamily::Exponential1d { variant }, KernelParams::Scale { sigma, range }) => {
            let r = offset[0];
            match variant {
                ExpVariant::Symmetric => {
                    sigma * 2f64.sqrt() / (range.sqrt() * PI) * bessel_k0(r.abs() / range)
                }
                ExpVariant::OneSided => {
                    let step = if r > 0.0 {
                        1.0
                    } else if r == 0.0 {
                        0.5
                    } else {
                        0.0
                    };
                    sigma * (2.0 / range).sqrt() * step * (-r / range).exp()
                }
            }
        }
        (KernelFamily::Gaussian1d, KernelParams::Scale { sigma, range }) => {
            let r = offset[0];
            sigma * (4.0 / (range * range * PI)).powf(0.25) * (-2.0 * r * r / (range * range)).exp()
        }
        (KernelFamily::Gaussian2d { .. }, KernelParams::Aniso { sigma, aniso }) => {
            let r2 = aniso_distance_sq(offset, aniso);
            let rho = aniso.rho;
            // √α undoes the area change of the stretch, so that L Lᵀ = C.
            2.0 * sigma * (3.0 * aniso.alpha).sqrt() / (rho * PI.sqrt()) * (-6.0 * r2 / (rho * rho)).exp()
        }
        _ => f64::NAN,
    }
}

/// Closed-form covariance `C(offset)` the square root is meant to reproduce.
pub fn covariance_value(family: &KernelFamily, offset: [f64; 2], params: &KernelParams) -> f64 {
    match (family, params) {
        (KernelFamily::Exponential1d { .. }, KernelParams::Scale { sigma, range }) => {
            sigma * sigma * (-offset[0].abs() / range).exp()
        }
        (KernelFamily::Gaussian1d, KernelParams::Scale { sigma, range }) => {
            sigma * sigma * (-(offset[0] / range).powi(2)).exp()
        }
        (KernelFamily::Gaussian2d { .. }, KernelParams::Aniso { sigma, aniso }) => {
            sigma * sigma * (-3.0 * aniso_distance_sq(offset, aniso) / (aniso.rho * aniso.rho)).exp()
        }
        _ => f64::NAN,
    }
}

/// `f` and its derivatives with respect to the log-hyperparameters, in the
/// order of the hyperparameter block: `(ln σ, ln a)` in 1D and
/// `(ln ρ, ln α, φ)` in 2D.
pub fn sqrt_kernel_with_derivatives(
    family: &KernelFamily,
    offset: [f64; 2],
    params: &KernelParams,
) -> (f64, [f64; 3]) {
    let f = sqrt_kernel_value(family, offset, params);
    match (family, params) {
        (KernelFamily::Exponential1d { variant }, KernelParams::Scale { sigma, range }) => {
            let x = offset[0] / range;
            let d_log_range = match variant {
                ExpVariant::Symmetric => {
                    let ax = x.abs();
                    let c = sigma * 2f64.sqrt() / (range.sqrt() * PI);
                    -0.5 * f + c * ax * puruspe::Kn(1, ax)
                }
                ExpVariant::OneSided => f * (x - 0.5),
            };
            (f, [f, d_log_range, 0.0])
        }
        (KernelFamily::Gaussian1d, KernelParams::Scale { range, .. }) => {
            let x = offset[0] / range;
            (f, [f, f * (4.0 * x * x - 0.5), 0.0])
        }
        (KernelFamily::Gaussian2d { .. }, KernelParams::Aniso { aniso, .. }) => {
            let rho2 = aniso.rho * aniso.rho;
            let r2 = aniso_distance_sq(offset, aniso);
            let (dh_phi, dh_alpha) = aniso_metric_derivatives(aniso);
            let d_log_rho = (12.0 * r2 / rho2 - 1.0) * f;
            let d_alpha = -6.0 / rho2 * quad_form(&dh_alpha, offset) * f;
            let d_phi = -6.0 / rho2 * quad_form(&dh_phi, offset) * f;
            (f, [d_log_rho, aniso.alpha * d_alpha + 0.5 * f, d_phi])
        }
        _ => (f64::NAN, [f64::NAN; 3]),
    }
}

fn bessel_k0(x: f64) -> f64 {
    if x == 0.0 {
        f64::INFINITY
    } else {
        puruspe::Kn(0, x)
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut x = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 2..=n {
                let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (x + 1.0), 0.5 * w));
    }
    out
}

const CELL_AVERAGE_NODES: usize = 16;

/// Average of `f` and its derivatives over one cell width centred on zero
/// offset. With `s = (h/2) u²` the logarithmic singularity of `K₀` becomes a
/// bounded integrand on `[0, 1]`.
fn symmetric_cell_average(
    family: &KernelFamily,
    params: &KernelParams,
    width: f64,
) -> (f64, [f64; 3]) {
    let mut f = 0.0;
    let mut d = [0.0; 3];
    for (u, w) in gauss_legendre_unit(CELL_AVERAGE_NODES) {
        let s = 0.5 * width * u * u;
        let (fv, dv) = sqrt_kernel_with_derivatives(family, [s, 0.0], params);
        let weight = 2.0 * w * u;
        f += weight * fv;
        for k in 0..3 {
            d[k] += weight * dv[k];
        }
    }
    (f, d)
}

/// Square-root kernel and derivatives tabulated on every lattice offset.
struct OffsetTable {
    nx: usize,
    ny: usize,
    n_hyper: usize,
    values: Vec<f64>,
    derivs: Vec<[f64; 3]>,
}

impl OffsetTable {
    fn build(grid: &GridSpec, family: &KernelFamily, params: &KernelParams, n_hyper: usize) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let w = 2 * nx - 1;
        let h = 2 * ny - 1;
        let scale = grid_measure(grid, family).sqrt();
        let mut values = vec![0.0; w * h];
        let mut derivs = vec![[0.0; 3]; w * h];
        for dj in 0..h {
            for di in 0..w {
                let oi = di as f64 - (nx - 1) as f64;
                let oj = dj as f64 - (ny - 1) as f64;
                let offset = [oi * grid.dx(), oj * grid.dy()];
                let singular_origin = matches!(
                    family,
                    KernelFamily::Exponential1d {
                        variant: ExpVariant::Symmetric
                    }
                ) && oi == 0.0;
                let (f, d) = if singular_origin {
                    symmetric_cell_average(family, params, grid.dx())
                } else {
                    sqrt_kernel_with_derivatives(family, offset, params)
                };
                let k = dj * w + di;
                values[k] = f * scale;
                derivs[k] = [d[0] * scale, d[1] * scale, d[2] * scale];
            }
        }
        OffsetTable {
            nx,
            ny,
            n_hyper,
            values,
            derivs,
        }
    }

    fn slot(&self, a: usize, b: usize) -> usize {
        let (ia, ja) = (a % self.nx, a / self.nx);
        let (ib, jb) = (b % self.nx, b / self.nx);
        let di = ia + self.nx - 1 - ib;
        let dj = ja + self.ny - 1 - jb;
        dj * (2 * self.nx - 1) + di
    }
}

fn grid_measure(grid: &GridSpec, family: &KernelFamily) -> f64 {
    match family {
        KernelFamily::Gaussian2d { .. } => grid.cell_area(),
        _ => grid.dx(),
    }
}

/// Discretized square root `L(θ)` and, when requested, `∂L/∂θ_k` for each
/// hyperparameter in block order.
#[derive(Debug, Clone)]
pub struct CovOperator {
    grid: GridSpec,
    family: KernelFamily,
    hyper: HyperParams,
    l: DMatrix<f64>,
    dl: Vec<DMatrix<f64>>,
}

fn check_dense(grid: &GridSpec) -> Result<()> {
    if grid.len() > MAX_DENSE_CELLS {
        return Err(Error::GridTooLarge {
            cells: grid.len(),
            limit: MAX_DENSE_CELLS,
        });
    }
    Ok(())
}

fn fill(
    grid: &GridSpec,
    family: &KernelFamily,
    hyper: &HyperParams,
    with_derivatives: bool,
) -> Result<CovOperator> {
    check_dense(grid)?;
    family.validate(grid)?;
    let params = KernelParams::resolve(family, hyper)?;
    let n = grid.len();
    let n_hyper = hyper.kind().len();
    let table = OffsetTable::build(grid, family, &params, n_hyper);
    let mut l = DMatrix::zeros(n, n);
    let mut dl = if with_derivatives {
        vec![DMatrix::zeros(n, n); n_hyper]
    } else {
        Vec::new()
    };
    for b in 0..n {
        for a in 0..n {
            let s = table.slot(a, b);
            l[(a, b)] = table.values[s];
            for (k, m) in dl.iter_mut().enumerate().take(table.n_hyper) {
                m[(a, b)] = table.derivs[s][k];
            }
        }
    }
    Ok(CovOperator {
        grid: *grid,
        family: *family,
        hyper: *hyper,
        l,
        dl,
    })
}

/// Builds `L(θ)` without derivatives.
pub fn build_l(grid: &GridSpec, family: &KernelFamily, hyper: &HyperParams) -> Result<CovOperator> {
    fill(grid, family, hyper, false)
}

/// Builds `L(θ)` together with `∂L/∂θ_k`. For the one-dimensional families
/// `∂L/∂ln σ = L`.
pub fn build_l_with_derivatives(
    grid: &GridSpec,
    family: &KernelFamily,
    hyper: &HyperParams,
) -> Result<CovOperator> {
    fill(grid, family, hyper, true)
}

impl CovOperator {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn derivatives(&self) -> &[DMatrix<f64>] {
        &self.dl
    }

    fn check_len(&self, what: &'static str, got: usize) -> Result<()> {
        if got != self.grid.len() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.grid.len(),
                got,
            });
        }
        Ok(())
    }

    /// `m = m_pr + L z`.
    pub fn realize(&self, m_pr: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_len("prior mean", m_pr.len())?;
        self.check_len("latent field", z.len())?;
        let lz = &self.l * DVector::from_column_slice(z);
        Ok(m_pr.iter().zip(lz.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn realize_field(&self, m_pr: &Field, z: &Field) -> Result<Field> {
        if m_pr.grid() != &self.grid || z.grid() != &self.grid {
            return Err(Error::DimensionMismatch {
                what: "field grid",
                expected: self.grid.len(),
                got: z.grid().len(),
            });
        }
        Field::new(self.grid, self.realize(m_pr.values(), z.values())?)
    }

    /// `M_x = [L | (∂L/∂θ_1) z | … ]`, the Jacobian of `m` with respect to
    /// the packed state.
    pub fn assemble_mx(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len("latent field", z.len())?;
        let n_hyper = self.hyper.kind().len();
        if self.dl.len() != n_hyper {
            return Err(Error::Unsupported(
                "operator was built without derivatives".into(),
            ));
        }
        let n = self.grid.len();
        let zv = DVector::from_column_slice(z);
        let mut mx = DMatrix::zeros(n, n + n_hyper);
        mx.view_mut((0, 0), (n, n)).copy_from(&self.l);
        for (k, d) in self.dl.iter().enumerate() {
            let col = d * &zv;
            mx.set_column(n + k, &col);
        }
        Ok(mx)
    }
}

/// One row of the `L Lᵀ − C` comparison against a reference cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorErrorRow {
    pub cell: usize,
    pub x: f64,
    pub y: f64,
    pub llt: f64,
    pub exact: f64,
}

/// `(L Lᵀ)[center][j]` against `C(x_center − x_j)` for every cell `j`.
pub fn factor_error_map(op: &CovOperator, center: usize) -> Result<Vec<FactorErrorRow>> {
    let grid = op.grid;
    let n = grid.len();
    if center >= n {
        return Err(Error::IndexOutOfRange { index: center, len: n });
    }
    let params = KernelParams::resolve(&op.family, &op.hyper)?;
    let row = op.l.row(center);
    let c0 = grid.cell_coords(center)?;
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let cj = grid.cell_coords(j)?;
        let llt = row.dot(&op.l.row(j));
        let exact = covariance_value(&op.family, [c0[0] - cj[0], c0[1] - cj[1]], &params);
        out.push(FactorErrorRow {
            cell: j,
            x: cj[0],
            y: cj[1],
            llt,
            exact,
        });
    }
    Ok(out)
}
