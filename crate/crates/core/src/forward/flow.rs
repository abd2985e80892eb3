//! Incompressible two-phase (water/oil) flow, IMPES.
//!
//! Pressure is solved once per sub-interval with upstream total mobility and
//! harmonic-mean transmissibilities; saturation is advanced with explicit
//! upwinding under a CFL limit. Wells are rate-controlled cell sources.
//! Time is measured in pore volumes injected when rates are given in pore
//! volumes per unit time.

use serde::{Deserialize, Serialize};

use super::banded::BandMatrix;
use super::ForwardModel;
use crate::error::{Error, Result};
use crate::field::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Well {
    pub name: String,
    pub i: usize,
    pub j: usize,
}

impl Well {
    pub fn new(name: impl Into<String>, i: usize, j: usize) -> Self {
        Well {
            name: name.into(),
            i,
            j,
        }
    }
}

/// Corey relative permeabilities. Oil viscosity is the unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Relperm {
    pub water_exponent: f64,
    pub oil_exponent: f64,
    pub water_endpoint: f64,
    pub oil_endpoint: f64,
    pub connate_water: f64,
    pub residual_oil: f64,
    /// Water viscosity over oil viscosity.
    pub viscosity_ratio: f64,
}

impl Default for Relperm {
    fn default() -> Self {
        Relperm {
            water_exponent: 2.0,
            oil_exponent: 2.0,
            water_endpoint: 1.0,
            oil_endpoint: 1.0,
            connate_water: 0.0,
            residual_oil: 0.0,
            viscosity_ratio: 1.0,
        }
    }
}

impl Relperm {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("water_exponent", self.water_exponent),
            ("oil_exponent", self.oil_exponent),
            ("water_endpoint", self.water_endpoint),
            ("oil_endpoint", self.oil_endpoint),
            ("viscosity_ratio", self.viscosity_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("relperm.{name}"), "must be positive"));
            }
        }
        if !(self.connate_water >= 0.0 && self.residual_oil >= 0.0)
            || self.connate_water + self.residual_oil >= 1.0
        {
            return Err(Error::config(
                "relperm",
                "residual saturations must be non-negative and sum below 1",
            ));
        }
        Ok(())
    }

    fn normalized(&self, sw: f64) -> f64 {
        ((sw - self.connate_water) / (1.0 - self.connate_water - self.residual_oil)).clamp(0.0, 1.0)
    }

    /// Water and oil mobilities.
    pub fn mobilities(&self, sw: f64) -> (f64, f64) {
        let se = self.normalized(sw);
        let lw = self.water_endpoint * se.powf(self.water_exponent) / self.viscosity_ratio;
        let lo = self.oil_endpoint * (1.0 - se).powf(self.oil_exponent);
        (lw, lo)
    }

    pub fn total_mobility(&self, sw: f64) -> f64 {
        let (lw, lo) = self.mobilities(sw);
        lw + lo
    }

    /// Water fractional flow, in [0, 1].
    pub fn fractional_flow(&self, sw: f64) -> f64 {
        let (lw, lo) = self.mobilities(sw);
        lw / (lw + lo)
    }

    /// Upper bound on `df/dS` over the mobile range.
    pub fn max_flow_derivative(&self) -> f64 {
        let lo = self.connate_water;
        let hi = 1.0 - self.residual_oil;
        let n = 4000;
        let h = (hi - lo) / n as f64;
        let mut best = 0.0f64;
        for k in 0..n {
            let a = lo + k as f64 * h;
            let d = (self.fractional_flow(a + h) - self.fractional_flow(a)) / h;
            best = best.max(d);
        }
        1.1 * best
    }
}

/// Simulator settings apart from the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSettings {
    pub injectors: Vec<Well>,
    /// Injection rate of each injector, pore volumes per unit time.
    pub injection_rates: Vec<f64>,
    /// Producers share the total injection rate equally.
    pub producers: Vec<Well>,
    pub porosity: f64,
    pub relperm: Relperm,
    pub initial_water_saturation: f64,
    pub end_time: f64,
    pub n_observations: usize,
    pub pressure_solves_per_interval: usize,
    pub cfl: f64,
    pub max_substeps: usize,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings {
            injectors: vec![Well::new("I0", 8, 7), Well::new("I1", 21, 7)],
            injection_rates: vec![0.5, 0.5],
            producers: vec![
                Well::new("P0", 2, 2),
                Well::new("P1", 2, 12),
                Well::new("P2", 14, 2),
                Well::new("P3", 14, 12),
                Well::new("P4", 27, 2),
                Well::new("P5", 27, 12),
            ],
            porosity: 0.2,
            relperm: Relperm::default(),
            initial_water_saturation: 0.0,
            end_time: 1.0,
            n_observations: 80,
            pressure_solves_per_interval: 1,
            cfl: 0.9,
            max_substeps: 100_000,
        }
    }
}

impl FlowSettings {
    /// A 1×n channel with injection at the first cell and production at the last.
    pub fn channel(n: usize, end_time: f64, n_observations: usize) -> Self {
        FlowSettings {
            injectors: vec![Well::new("I0", 0, 0)],
            injection_rates: vec![1.0],
            producers: vec![Well::new("P0", n.saturating_sub(1), 0)],
            end_time,
            n_observations,
            ..FlowSettings::default()
        }
    }
}

#[derive(Debug, Clone)]
struct Face {
    a: usize,
    b: usize,
    /// Geometric factor: face length over center distance.
    shape: f64,
}

#[derive(Debug, Clone)]
pub struct FlowModel {
    grid: GridSpec,
    settings: FlowSettings,
    faces: Vec<Face>,
    injector_cells: Vec<usize>,
    producer_cells: Vec<usize>,
    pore_volume: f64,
    max_df: f64,
}

/// Water cut per producer at each observation time; `values[well][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterCutSeries {
    pub times: Vec<f64>,
    pub wells: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl WaterCutSeries {
    /// Well-major data vector.
    pub fn to_data(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    /// Columns `time,well,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,well,value\n");
        for (w, name) in self.wells.iter().enumerate() {
            for (t, time) in self.times.iter().enumerate() {
                out.push_str(&format!("{time},{name},{}\n", self.values[w][t]));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub series: WaterCutSeries,
    /// Largest relative water-balance error after any sub-step.
    pub max_water_balance_error: f64,
    /// Largest relative liquid-balance error after any sub-step.
    pub max_liquid_balance_error: f64,
    /// Largest normwise backward error of any pressure solve.
    pub max_pressure_residual: f64,
    pub substeps: usize,
}

impl FlowModel {
    pub fn new(grid: GridSpec, settings: FlowSettings) -> Result<Self> {
        settings.relperm.validate()?;
        if settings.injectors.is_empty() || settings.producers.is_empty() {
            return Err(Error::config("flow", "needs at least one injector and one producer"));
        }
        if settings.injection_rates.len() != settings.injectors.len() {
            return Err(Error::config(
                "flow.injection_rates",
                format!("expected {} rates", settings.injectors.len()),
            ));
        }
        if settings.injection_rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::config("flow.injection_rates", "rates must be positive"));
        }
        if !(settings.porosity > 0.0 && settings.porosity <= 1.0) {
            return Err(Error::config("flow.porosity", "must lie in (0, 1]"));
        }
        let rp = &settings.relperm;
        if !(settings.initial_water_saturation >= rp.connate_water
            && settings.initial_water_saturation <= 1.0 - rp.residual_oil)
        {
            return Err(Error::config(
                "flow.initial_water_saturation",
                "must lie in the mobile range",
            ));
        }
        if !(settings.end_time > 0.0 && settings.end_time.is_finite()) {
            return Err(Error::config("flow.end_time", "must be positive"));
        }
        if settings.n_observations == 0 {
            return Err(Error::config("flow.n_observations", "schedule is empty"));
        }
        if settings.pressure_solves_per_interval == 0 {
            return Err(Error::config("flow.pressure_solves_per_interval", "must be positive"));
        }
        if !(settings.cfl > 0.0 && settings.cfl <= 1.0) {
            return Err(Error::config("flow.cfl", "must lie in (0, 1]"));
        }
        let locate = |w: &Well| -> Result<usize> {
            grid.index(w.i, w.j).map_err(|_| {
                Error::config(
                    format!("flow.wells.{}", w.name),
                    format!("cell ({}, {}) is outside the grid", w.i, w.j),
                )
            })
        };
        let injector_cells = settings.injectors.iter().map(locate).collect::<Result<Vec<_>>>()?;
        let producer_cells = settings.producers.iter().map(locate).collect::<Result<Vec<_>>>()?;
        let mut used = injector_cells.clone();
        used.extend(&producer_cells);
        used.sort_unstable();
        if used.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("flow.wells", "two wells share a cell"));
        }

        let (nx, ny) = (grid.nx(), grid.ny());
        let mut faces = Vec::with_capacity(2 * grid.len());
        for j in 0..ny {
            for i in 0..nx {
                let a = j * nx + i;
                if i + 1 < nx {
                    faces.push(Face {
                        a,
                        b: a + 1,
                        shape: grid.dy() / grid.dx(),
                    });
                }
                if j + 1 < ny {
                    faces.push(Face {
                        a,
                        b: a + nx,
                        shape: grid.dx() / grid.dy(),
                    });
                }
            }
        }
        let pore_volume = settings.porosity * grid.dx() * grid.dy();
        let max_df = settings.relperm.max_flow_derivative();
        Ok(FlowModel {
            grid,
            settings,
            faces,
            injector_cells,
            producer_cells,
            pore_volume,
            max_df,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn settings(&self) -> &FlowSettings {
        &self.settings
    }

    pub fn observation_times(&self) -> Vec<f64> {
        let n = self.settings.n_observations;
        (1..=n)
            .map(|k| self.settings.end_time * k as f64 / n as f64)
            .collect()
    }

    fn bandwidth(&self) -> usize {
        if self.grid.ny() > 1 {
            self.grid.nx()
        } else {
            1
        }
    }

    /// Cell source terms (volume per unit time): positive for injection.
    fn sources(&self) -> Vec<f64> {
        let total_pv = self.pore_volume * self.grid.len() as f64;
        let mut q = vec![0.0; self.grid.len()];
        let mut total = 0.0;
        for (&c, &r) in self.injector_cells.iter().zip(&self.settings.injection_rates) {
            q[c] += r * total_pv;
            total += r * total_pv;
        }
        let each = total / self.producer_cells.len() as f64;
        for &c in &self.producer_cells {
            q[c] -= each;
        }
        q
    }

    fn solve_pressure(&self, trans: &[f64], q: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n = self.grid.len();
        let mut a = BandMatrix::zeros(n, self.bandwidth());
        for (f, &t) in self.faces.iter().zip(trans) {
            a.add(f.a, f.a, t);
            a.add(f.b, f.b, t);
            a.add(f.b, f.a, -t);
        }
        // Pin the reference cell, keeping its row on the scale of the others.
        let mut rhs = q.to_vec();
        for f in &self.faces {
            if f.a == 0 || f.b == 0 {
                a.set(f.a, f.b, 0.0);
            }
        }
        let d0 = a.diagonal()[0];
        a.set(0, 0, if d0 > 0.0 { d0 } else { 1.0 });
        rhs[0] = 0.0;

        // Jacobi scaling keeps the factorization stable under strong
        // permeability contrast.
        let diag = a.diagonal();
        if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::PressureSolve("a cell has no finite positive transmissibility".into()));
        }
        let scale: Vec<f64> = diag.iter().map(|d| d.sqrt().recip()).collect();
        let mut scaled = a.clone();
        scaled.scale_symmetric(&scale);
        let chol = scaled.cholesky().ok_or_else(|| {
            Error::PressureSolve("system is not positive definite; check the well configuration".into())
        })?;
        let solve = |b: &[f64]| -> Vec<f64> {
            let sb: Vec<f64> = b.iter().zip(&scale).map(|(v, s)| v * s).collect();
            chol.solve(&sb).iter().zip(&scale).map(|(v, s)| v * s).collect()
        };
        let residual = |p: &[f64]| -> Vec<f64> {
            a.mul_vec(p).iter().zip(&rhs).map(|(x, y)| y - x).collect()
        };
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let a_norm = a.norm_inf();
        // Normwise backward error.
        let backward = |p: &[f64], r: &[f64]| inf(r) / (a_norm * inf(p) + inf(&rhs)).max(f64::MIN_POSITIVE);

        let mut p = solve(&rhs);
        let mut r = residual(&p);
        let mut err = backward(&p, &r);
        for _ in 0..3 {
            if err <= 1e-14 {
                break;
            }
            let dp = solve(&r);
            for (pi, d) in p.iter_mut().zip(&dp) {
                *pi += d;
            }
            r = residual(&p);
            err = backward(&p, &r);
        }
        if !(err <= 1e-10) {
            return Err(Error::PressureSolve(format!("backward error {err:.3e}")));
        }
        Ok((p, err))
    }

    /// Runs the simulation for a log-permeability field.
    pub fn run(&self, ln_k: &[f64]) -> Result<FlowRun> {
        let n = self.grid.len();
        if ln_k.len() != n {
            return Err(Error::DimensionMismatch {
                what: "log-permeability field",
                expected: n,
                got: ln_k.len(),
            });
        }
        if ln_k.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite log-permeability".into()));
        }
        let perm: Vec<f64> = ln_k.iter().map(|v| v.exp()).collect();
        let geo: Vec<f64> = self
            .faces
            .iter()
            .map(|f| {
                let (ka, kb) = (perm[f.a], perm[f.b]);
                2.0 * ka * kb / (ka + kb) * f.shape
            })
            .collect();
        let q = self.sources();
        let rp = &self.settings.relperm;
        let pv = self.pore_volume;

        let mut sw = vec![self.settings.initial_water_saturation; n];
        let water0: f64 = sw.iter().sum::<f64>() * pv;
        let (mut w_in, mut w_out, mut l_in, mut l_out) = (0.0, 0.0, 0.0, 0.0);
        let mut flux: Vec<f64> = vec![0.0; self.faces.len()];
        let mut have_flux = false;
        let mut fw = vec![0.0; n];
        let mut dw = vec![0.0; n];
        let mut out_rate = vec![0.0; n];

        let times = self.observation_times();
        let mut values = vec![Vec::with_capacity(times.len()); self.producer_cells.len()];
        let mut max_water = 0.0f64;
        let mut max_liquid = 0.0f64;
        let mut max_res = 0.0f64;
        let mut substeps = 0usize;
        let mut t = 0.0;
        let solves = self.settings.pressure_solves_per_interval;

        for &t_obs in &times {
            let interval = t_obs - t;
            for _ in 0..solves {
                let dt_total = interval / solves as f64;
                let trans: Vec<f64> = self
                    .faces
                    .iter()
                    .zip(&geo)
                    .zip(&flux)
                    .map(|((f, g), &fl)| {
                        let lam = if !have_flux || fl == 0.0 {
                            0.5 * (rp.total_mobility(sw[f.a]) + rp.total_mobility(sw[f.b]))
                        } else if fl > 0.0 {
                            rp.total_mobility(sw[f.a])
                        } else {
                            rp.total_mobility(sw[f.b])
                        };
                        g * lam
                    })
                    .collect();
                let (p, res) = self.solve_pressure(&trans, &q)?;
                max_res = max_res.max(res);
                for ((fl, f), t) in flux.iter_mut().zip(&self.faces).zip(&trans) {
                    *fl = t * (p[f.a] - p[f.b]);
                }
                have_flux = true;

                out_rate.iter_mut().for_each(|v| *v = 0.0);
                for (f, &fl) in self.faces.iter().zip(&flux) {
                    if fl > 0.0 {
                        out_rate[f.a] += fl;
                    } else {
                        out_rate[f.b] -= fl;
                    }
                }
                for (c, &qc) in q.iter().enumerate() {
                    if qc < 0.0 {
                        out_rate[c] -= qc;
                    }
                }
                let peak = out_rate.iter().fold(0.0f64, |m, v| m.max(*v));
                let dt_cfl = self.settings.cfl * pv / (peak * self.max_df);
                let steps = (dt_total / dt_cfl).ceil().max(1.0);
                if !(steps <= self.settings.max_substeps as f64) {
                    return Err(Error::CflOverflow {
                        limit: self.settings.max_substeps,
                    });
                }
                let steps = steps as usize;
                let dt = dt_total / steps as f64;
                for _ in 0..steps {
                    for (f, s) in fw.iter_mut().zip(&sw) {
                        *f = rp.fractional_flow(*s);
                    }
                    dw.iter_mut().for_each(|v| *v = 0.0);
                    for (f, &fl) in self.faces.iter().zip(&flux) {
                        let wf = if fl > 0.0 { fl * fw[f.a] } else { fl * fw[f.b] };
                        dw[f.a] -= wf;
                        dw[f.b] += wf;
                    }
                    for (c, &qc) in q.iter().enumerate() {
                        if qc > 0.0 {
                            dw[c] += qc;
                            w_in += qc * dt;
                            l_in += qc * dt;
                        } else if qc < 0.0 {
                            dw[c] += qc * fw[c];
                            w_out -= qc * fw[c] * dt;
                            l_out -= qc * dt;
                        }
                    }
                    for (s, d) in sw.iter_mut().zip(&dw) {
                        *s += dt * d / pv;
                    }
                    let water: f64 = sw.iter().sum::<f64>() * pv;
                    let scale = w_in.max(f64::MIN_POSITIVE);
                    max_water = max_water.max((water - water0 - w_in + w_out).abs() / scale);
                    max_liquid = max_liquid.max((l_in - l_out).abs() / l_in.max(f64::MIN_POSITIVE));
                }
                substeps += steps;
            }
            t = t_obs;
            for (w, &c) in self.producer_cells.iter().enumerate() {
                values[w].push(rp.fractional_flow(sw[c]));
            }
        }

        Ok(FlowRun {
            series: WaterCutSeries {
                times,
                wells: self.settings.producers.iter().map(|w| w.name.clone()).collect(),
                values,
            },
            max_water_balance_error: max_water,
            max_liquid_balance_error: max_liquid,
            max_pressure_residual: max_res,
            substeps,
        })
    }
}

impl ForwardModel for FlowModel {
    fn n_data(&self) -> usize {
        self.producer_cells.len() * self.settings.n_observations
    }

    fn simulate(&self, m: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(m)?.series.to_data())
    }

    fn data_locations(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.n_data());
        for &c in &self.producer_cells {
            let at = self.grid.cell_coords(c).expect("validated well cell");
            out.extend(std::iter::repeat(at).take(self.settings.n_observations));
        }
        out
    }

    fn data_labels(&self) -> Vec<(String, Option<f64>)> {
        let times = self.observation_times();
        let mut out = Vec::with_capacity(self.n_data());
        for w in &self.settings.producers {
            out.extend(times.iter().map(|t| (w.name.clone(), Some(*t))));
        }
        out
    }
}
