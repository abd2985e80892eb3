//! Regular lattices, scalar fields on them, and the packed assimilation state.
//!
//! Cells are indexed row-major with the x index running fastest:
//! `index = j * nx + i`. Cell centers sit at `origin + (i + 1/2) * dx`, so
//! `origin` is the lower corner of the domain rather than the first center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::{HyperKind, HyperParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRaw", into = "GridSpecRaw")]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    origin: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpecRaw {
    nx: usize,
    #[serde(default = "one")]
    ny: usize,
    dx: f64,
    #[serde(default = "unit")]
    dy: f64,
    #[serde(default)]
    origin: [f64; 2],
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

impl TryFrom<GridSpecRaw> for GridSpec {
    type Error = Error;

    fn try_from(raw: GridSpecRaw) -> Result<Self> {
        GridSpec::new(raw.nx, raw.ny, raw.dx, raw.dy, raw.origin)
    }
}

impl From<GridSpec> for GridSpecRaw {
    fn from(g: GridSpec) -> Self {
        GridSpecRaw {
            nx: g.nx,
            ny: g.ny,
            dx: g.dx,
            dy: g.dy,
            origin: g.origin,
        }
    }
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, origin: [f64; 2]) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGrid(format!(
                "dimensions must be at least 1, got {nx}x{ny}"
            )));
        }
        if nx.checked_mul(ny).is_none() {
            return Err(Error::InvalidGrid("cell count overflows".into()));
        }
        if !(dx > 0.0 && dx.is_finite() && dy > 0.0 && dy.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive and finite, got ({dx}, {dy})"
            )));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(GridSpec {
            nx,
            ny,
            dx,
            dy,
            origin,
        })
    }

    /// `n` cells covering `[start, start + length]`.
    pub fn line(n: usize, start: f64, length: f64) -> Result<Self> {
        GridSpec::new(n, 1, length / n as f64, 1.0, [start, 0.0])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, i: usize, j: usize) -> Result<usize> {
        if i >= self.nx || j >= self.ny {
            return Err(Error::IndexOutOfRange {
                index: j.saturating_mul(self.nx).saturating_add(i),
                len: self.len(),
            });
        }
        Ok(j * self.nx + i)
    }

    /// (i, j) lattice position of a flat index.
    pub fn position(&self, index: usize) -> Result<(usize, usize)> {
        if index >= self.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        Ok((index % self.nx, index / self.nx))
    }

    pub fn cell_coords(&self, index: usize) -> Result<[f64; 2]> {
        let (i, j) = self.position(index)?;
        Ok(self.center(i, j))
    }

    pub(crate) fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.dx,
            self.origin[1] + (j as f64 + 0.5) * self.dy,
        ]
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "field values",
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at cell {k}")));
        }
        Ok(Field { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Field {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Field::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Fixed ordering of the assimilation state: latent cells first, then the
/// hyperparameters in their declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_cells: usize,
    pub hyper: HyperKind,
}

impl StateLayout {
    pub fn len(&self) -> usize {
        self.n_cells + self.hyper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// x = (z, θ) in the non-centered parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub z: Vec<f64>,
    pub hyper: HyperParams,
}

impl StateVector {
    pub fn pack(z: &Field, grid: &GridSpec, hyper: HyperParams) -> Result<Self> {
        if z.grid() != grid {
            return Err(Error::DimensionMismatch {
                what: "latent field grid",
                expected: grid.len(),
                got: z.grid().len(),
            });
        }
        Ok(StateVector {
            z: z.values().to_vec(),
            hyper,
        })
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            n_cells: self.z.len(),
            hyper: self.hyper.kind(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().len());
        out.extend_from_slice(&self.z);
        out.extend_from_slice(&self.hyper.to_vec());
        out
    }

    pub fn unpack(values: &[f64], layout: StateLayout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                what: "state vector",
                expected: layout.len(),
                got: values.len(),
            });
        }
        let (z, h) = values.split_at(layout.n_cells);
        Ok(StateVector {
            z: z.to_vec(),
            hyper: HyperParams::from_slice(layout.hyper, h)?,
        })
    }

    pub fn unpack_field(&self, grid: &GridSpec) -> Result<Field> {
        Field::new(*grid, self.z.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_state_packs_to_zeros() {
        let grid = GridSpec::line(4, 0.0, 1.0).unwrap();
        let h = HyperParams::Aniso2d {
            log_range: 0.0,
            log_ratio: 0.0,
            angle: 0.0,
        };
        let x = StateVector::pack(&Field::zeros(grid), &grid, h).unwrap();
        assert_eq!(x.to_vec(), vec![0.0; 7]);
    }

    #[test]
    fn benchmark_state_length() {
        let grid = GridSpec::new(30, 15, 1.0, 1.0, [0.0, 0.0]).unwrap();
        let h = HyperParams::Aniso2d {
            log_range: 0.1,
            log_ratio: 1.0,
            angle: 0.9,
        };
        let x = StateVector::pack(&Field::zeros(grid), &grid, h).unwrap();
        assert_eq!(x.layout().n_cells, 450);
        assert_eq!(x.to_vec().len(), 453);
    }

    #[test]
    fn pack_rejects_foreign_grid() {
        let grid = GridSpec::line(4, 0.0, 1.0).unwrap();
        let other = GridSpec::line(5, 0.0, 1.0).unwrap();
        let h = HyperParams::Scale1d {
            log_sigma: 0.0,
            log_range: 0.0,
        };
        assert!(StateVector::pack(&Field::zeros(other), &grid, h).is_err());
        let x = StateVector::pack(&Field::zeros(grid), &grid, h).unwrap();
        assert!(StateVector::unpack(&x.to_vec()[1..], x.layout()).is_err());
    }

    #[test]
    fn unit_interval_first_center() {
        let grid = GridSpec::line(150, 0.0, 1.0).unwrap();
        let c = grid.cell_coords(0).unwrap();
        assert!((c[0] - 1.0 / 300.0).abs() < 1e-15);
        assert!(grid.cell_coords(150).is_err());
    }

    #[test]
    fn plane_first_center_is_half_cell_from_origin() {
        let grid = GridSpec::new(30, 15, 2.0, 0.5, [1.0, -1.0]).unwrap();
        assert_eq!(grid.cell_coords(0).unwrap(), [2.0, -0.75]);
        assert_eq!(grid.index(29, 14).unwrap(), 449);
        assert!(grid.index(30, 0).is_err());
    }

    #[test]
    fn adjacent_centers_are_one_spacing_apart() {
        let grid = GridSpec::new(7, 5, 0.3, 0.7, [0.1, 0.2]).unwrap();
        for j in 0..5 {
            for i in 0..6 {
                let a = grid.cell_coords(grid.index(i, j).unwrap()).unwrap();
                let b = grid.cell_coords(grid.index(i + 1, j).unwrap()).unwrap();
                assert!((b[0] - a[0] - 0.3).abs() < 1e-12);
                assert_eq!(a[1], b[1]);
            }
        }
        for i in 0..7 {
            let a = grid.cell_coords(grid.index(i, 0).unwrap()).unwrap();
            let b = grid.cell_coords(grid.index(i, 1).unwrap()).unwrap();
            assert!((b[1] - a[1] - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(0, 1, 1.0, 1.0, [0.0; 2]).is_err());
        assert!(GridSpec::new(1, 1, 0.0, 1.0, [0.0; 2]).is_err());
        assert!(GridSpec::new(1, 1, 1.0, f64::NAN, [0.0; 2]).is_err());
        assert!(Field::new(GridSpec::line(2, 0.0, 1.0).unwrap(), vec![1.0, f64::INFINITY]).is_err());
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(
            z in proptest::collection::vec(-1e6f64..1e6, 1..40),
            a in -10f64..10.0, b in -10f64..10.0, c in -1.5f64..1.5,
        ) {
            let grid = GridSpec::line(z.len(), 0.0, 1.0).unwrap();
            let field = Field::new(grid, z.clone()).unwrap();
            for h in [
                HyperParams::Scale1d { log_sigma: a, log_range: b },
                HyperParams::Aniso2d { log_range: a, log_ratio: b, angle: c },
            ] {
                let x = StateVector::pack(&field, &grid, h).unwrap();
                let flat = x.to_vec();
                let back = StateVector::unpack(&flat, x.layout()).unwrap();
                prop_assert_eq!(&back, &x);
                prop_assert_eq!(back.to_vec(), flat);
            }
        }
    }
}
