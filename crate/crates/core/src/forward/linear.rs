use nalgebra::DMatrix;

use super::ForwardModel;
use crate::error::{Error, Result};
use crate::field::GridSpec;

/// Point observations of `m` at selected cells; `G_m` is a 0/1 selection.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObserver {
    grid: GridSpec,
    obs_indices: Vec<usize>,
}

impl LinearObserver {
    pub fn new(grid: GridSpec, obs_indices: Vec<usize>) -> Result<Self> {
        if obs_indices.is_empty() {
            return Err(Error::InvalidObservations("no observed cells".into()));
        }
        let mut seen = vec![false; grid.len()];
        for &k in &obs_indices {
            if k >= grid.len() {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    len: grid.len(),
                });
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::InvalidObservations(format!(
                    "cell {k} observed twice"
                )));
            }
        }
        Ok(LinearObserver { grid, obs_indices })
    }

    /// Cells `offset, offset + step, …`.
    pub fn every_nth(grid: GridSpec, step: usize, offset: usize) -> Result<Self> {
        if step == 0 {
            return Err(Error::InvalidObservations("step must be positive".into()));
        }
        LinearObserver::new(grid, (offset..grid.len()).step_by(step).collect())
    }

    pub fn obs_indices(&self) -> &[usize] {
        &self.obs_indices
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn observe(&self, m: &[f64]) -> Result<Vec<f64>> {
        if m.len() != self.grid.len() {
            return Err(Error::DimensionMismatch {
                what: "observed field",
                expected: self.grid.len(),
                got: m.len(),
            });
        }
        Ok(self.obs_indices.iter().map(|&k| m[k]).collect())
    }

    pub fn selection_matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.obs_indices.len(), self.grid.len());
        for (row, &k) in self.obs_indices.iter().enumerate() {
            g[(row, k)] = 1.0;
        }
        g
    }
}

impl ForwardModel for LinearObserver {
    fn n_data(&self) -> usize {
        self.obs_indices.len()
    }

    fn simulate(&self, m: &[f64]) -> Result<Vec<f64>> {
        self.observe(m)
    }

    fn linear_sensitivity(&self) -> Option<DMatrix<f64>> {
        Some(self.selection_matrix())
    }

    fn data_locations(&self) -> Vec<[f64; 2]> {
        self.obs_indices
            .iter()
            .map(|&k| self.grid.cell_coords(k).expect("validated index"))
            .collect()
    }

    fn data_labels(&self) -> Vec<(String, Option<f64>)> {
        self.obs_indices
            .iter()
            .map(|k| (format!("cell{k}"), None))
            .collect()
    }
}
