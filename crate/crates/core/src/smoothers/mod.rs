//! Posterior samplers: RML, IES and the hybrid IES.
//!
//! All updates work in whitened coordinates: the state is scaled by the
//! square root of the diagonal prior covariance `C_x` and the data by
//! `C_d^{-1/2}`, so both prior covariances become identities.

mod ies;
mod lm;
mod step;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{build_l, build_l_with_derivatives, KernelFamily};
use crate::error::{Error, Result};
use crate::field::{GridSpec, StateVector};
use crate::forward::{ForwardModel, ObsSet};
use crate::priors::{normalize_angle, AngleTreatment, Ensemble, HyperParams, HyperPrior};

pub use ies::{gaspari_cohn, ies_update, IesInputs, LocalizationSpec};
pub use lm::{lm_step_control, LmOutcome, LmSettings, LmState, StopReason};
pub use step::{estimate_gm, gauss_newton_step, Sensitivity, DEFAULT_ENERGY};

/// `½ Σ ((pred − data)/σ)²`.
pub fn mismatch(pred: &[f64], data: &[f64], noise_std: &[f64]) -> Result<f64> {
    if pred.len() != data.len() || noise_std.len() != data.len() {
        return Err(Error::DimensionMismatch {
            what: "mismatch",
            expected: data.len(),
            got: pred.len().min(noise_std.len()),
        });
    }
    Ok(0.5
        * pred
            .iter()
            .zip(data)
            .zip(noise_std)
            .map(|((p, d), s)| ((p - d) / s).powi(2))
            .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rml,
    Ies,
    Hybrid,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rml => "rml",
            Method::Ies => "ies",
            Method::Hybrid => "hybrid",
        }
    }
}

/// Whether the hyperparameters are updated or held at a given value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HyperMode {
    Hierarchical,
    Fixed(HyperParams),
}

pub struct Problem<'a> {
    pub grid: GridSpec,
    pub family: KernelFamily,
    pub prior: HyperPrior,
    pub prior_mean: Vec<f64>,
    pub forward: &'a dyn ForwardModel,
    pub obs: &'a ObsSet,
    pub angle: AngleTreatment,
    pub hyper_mode: HyperMode,
}

/// A member's realized field and predicted data.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub m: Vec<f64>,
    pub g: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if self.family.hyper_kind() != self.prior.kind() {
            return Err(Error::Unsupported(
                "kernel family and hyperparameter prior disagree".into(),
            ));
        }
        if self.prior_mean.len() != self.grid.len() {
            return Err(Error::DimensionMismatch {
                what: "prior mean",
                expected: self.grid.len(),
                got: self.prior_mean.len(),
            });
        }
        if self.forward.n_data() != self.obs.len() {
            return Err(Error::DimensionMismatch {
                what: "observations",
                expected: self.forward.n_data(),
                got: self.obs.len(),
            });
        }
        if let HyperMode::Fixed(h) = self.hyper_mode {
            if h.kind() != self.prior.kind() {
                return Err(Error::Unsupported("fixed hyperparameters of the wrong kind".into()));
            }
            h.validate()?;
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.grid.len()
    }

    fn n_hyper_active(&self) -> usize {
        match self.hyper_mode {
            HyperMode::Hierarchical => self.prior.kind().len(),
            HyperMode::Fixed(_) => 0,
        }
    }

    /// Number of updated state components.
    pub fn n_active(&self) -> usize {
        self.n_cells() + self.n_hyper_active()
    }

    /// Square root of the diagonal prior covariance over the active state.
    pub fn scales(&self) -> Result<Vec<f64>> {
        let mut s = vec![1.0; self.n_cells()];
        if self.n_hyper_active() > 0 {
            s.extend(self.prior.variances()?.iter().map(|v| v.sqrt()));
        }
        Ok(s)
    }

    fn angle_row(&self) -> Option<usize> {
        match self.hyper_mode {
            HyperMode::Hierarchical => self.prior.kind().angle_slot().map(|k| self.n_cells() + k),
            HyperMode::Fixed(_) => None,
        }
    }

    /// Puts a state into the form the problem expects (fixed hyperparameters).
    pub fn conform(&self, x: &StateVector) -> StateVector {
        match self.hyper_mode {
            HyperMode::Hierarchical => StateVector {
                z: x.z.clone(),
                hyper: x.hyper.normalized(),
            },
            HyperMode::Fixed(h) => StateVector {
                z: x.z.clone(),
                hyper: h,
            },
        }
    }

    pub fn realize(&self, x: &StateVector) -> Result<Vec<f64>> {
        build_l(&self.grid, &self.family, &x.hyper)?.realize(&self.prior_mean, &x.z)
    }

    pub fn evaluate(&self, x: &StateVector) -> Result<Evaluation> {
        let m = self.realize(x)?;
        let g = self.forward.simulate(&m)?;
        if g.len() != self.obs.len() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidObservations("forward model returned bad data".into()));
        }
        Ok(Evaluation { m, g })
    }

    /// `S_d` against the perturbed observations `d° − ε′`.
    pub fn mismatch_pert(&self, g: &[f64], eps: &[f64]) -> Result<f64> {
        let shifted: Vec<f64> = g.iter().zip(eps).map(|(a, b)| a + b).collect();
        mismatch(&shifted, &self.obs.values, &self.obs.noise_std)
    }

    pub fn mismatch_obs(&self, g: &[f64]) -> Result<f64> {
        mismatch(g, &self.obs.values, &self.obs.noise_std)
    }

    /// Stochastic objective `J_i`.
    pub fn objective(&self, x: &StateVector, anchor: &StateVector, g: &[f64], eps: &[f64]) -> Result<f64> {
        Ok(self.mismatch_pert(g, eps)? + self.prior.prior_objective(x, anchor, self.angle)?)
    }

    /// Whitened data residual `C_d^{-1/2}(g + ε′ − d°)`.
    fn innovation(&self, g: &[f64], eps: &[f64]) -> Vec<f64> {
        g.iter()
            .zip(eps)
            .zip(&self.obs.values)
            .zip(&self.obs.noise_std)
            .map(|(((g, e), d), s)| (g + e - d) / s)
            .collect()
    }

    /// Whitened prior residual over the active state.
    fn whitened_residual(&self, x: &StateVector, anchor: &StateVector, scales: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.prior.prior_residual(x, anchor, self.angle)?;
        r.truncate(self.n_active());
        Ok(r.iter().zip(scales).map(|(a, s)| a / s).collect())
    }

    fn apply_step(&self, x: &StateVector, delta_white: &[f64], scales: &[f64]) -> Result<StateVector> {
        let n = self.n_cells();
        let z: Vec<f64> = x
            .z
            .iter()
            .zip(&delta_white[..n])
            .map(|(a, d)| a + d)
            .collect();
        let hyper = if self.n_hyper_active() > 0 {
            let mut h = x.hyper.to_vec();
            for (k, v) in h.iter_mut().enumerate() {
                *v += delta_white[n + k] * scales[n + k];
            }
            HyperParams::from_slice(x.hyper.kind(), &h)?.normalized()
        } else {
            x.hyper
        };
        Ok(StateVector { z, hyper })
    }

    /// `∂m/∂x` restricted to the active state.
    pub fn jacobian(&self, x: &StateVector) -> Result<DMatrix<f64>> {
        let op = build_l_with_derivatives(&self.grid, &self.family, &x.hyper)?;
        let mx = op.assemble_mx(&x.z)?;
        Ok(mx.columns(0, self.n_active()).into_owned())
    }

    /// Whitened `G = C_d^{-1/2} G_m M_x C_x^{1/2}`.
    fn whitened_sensitivity(&self, gm: &Sensitivity, x: &StateVector, scales: &[f64]) -> Result<DMatrix<f64>> {
        if gm.n_data() != self.obs.len() || gm.n_model() != self.n_cells() {
            return Err(Error::DimensionMismatch {
                what: "model sensitivity",
                expected: self.obs.len(),
                got: gm.n_data(),
            });
        }
        let mut g = gm.apply(&self.jacobian(x)?);
        for (mut row, s) in g.row_iter_mut().zip(&self.obs.noise_std) {
            row /= *s;
        }
        for (mut col, s) in g.column_iter_mut().zip(scales) {
            col *= *s;
        }
        Ok(g)
    }
}

/// Exact `G_m` of a linear forward model.
pub fn exact_sensitivity(problem: &Problem) -> Result<Sensitivity> {
    problem
        .forward
        .linear_sensitivity()
        .map(Sensitivity::Dense)
        .ok_or_else(|| Error::Unsupported("RML needs an analytic sensitivity".into()))
}

/// Gauss–Newton/Levenberg–Marquardt candidate for one member with a given
/// `G_m`. RML and the hybrid differ only in where `G_m` comes from.
#[allow(clippy::too_many_arguments)]
pub fn member_update(
    problem: &Problem,
    gm: &Sensitivity,
    x: &StateVector,
    anchor: &StateVector,
    eps: &[f64],
    g: &[f64],
    lambda: f64,
) -> Result<StateVector> {
    let scales = problem.scales()?;
    let gw = problem.whitened_sensitivity(gm, x, &scales)?;
    let e = problem.innovation(g, eps);
    let r = problem.whitened_residual(x, anchor, &scales)?;
    let delta = gauss_newton_step(&gw, &e, &r, lambda)?;
    problem.apply_step(x, &delta, &scales)
}

pub fn rml_update(
    problem: &Problem,
    x: &StateVector,
    anchor: &StateVector,
    eps: &[f64],
    g: &[f64],
    lambda: f64,
) -> Result<StateVector> {
    member_update(problem, &exact_sensitivity(problem)?, x, anchor, eps, g, lambda)
}

pub fn hybrid_update(
    problem: &Problem,
    gm: &Sensitivity,
    x: &StateVector,
    anchor: &StateVector,
    eps: &[f64],
    g: &[f64],
    lambda: f64,
) -> Result<StateVector> {
    member_update(problem, gm, x, anchor, eps, g, lambda)
}

/// Centered columns over `√(N−1)`.
fn anomalies(cols: &[&[f64]]) -> DMatrix<f64> {
    let n = cols.len();
    let rows = cols.first().map_or(0, |c| c.len());
    let mut a = DMatrix::from_fn(rows, n, |i, j| cols[j][i]);
    let mean = a.column_mean();
    let scale = ((n.max(2) - 1) as f64).sqrt();
    for mut c in a.column_iter_mut() {
        c -= &mean;
        c /= scale;
    }
    a
}

/// Ensemble estimate of `G_m` from realized fields and predictions.
pub fn ensemble_sensitivity(fields: &[&[f64]], preds: &[&[f64]], energy: f64) -> Result<Sensitivity> {
    estimate_gm(&anomalies(fields), &anomalies(preds), energy)
}

/// Latent block of the cross-covariance `C_x M_xᵀ G_mᵀ` for datum `k`.
pub fn cross_covariance(problem: &Problem, gm: &Sensitivity, x: &StateVector, datum: usize) -> Result<Vec<f64>> {
    if datum >= gm.n_data() {
        return Err(Error::IndexOutOfRange {
            index: datum,
            len: gm.n_data(),
        });
    }
    let scales = problem.scales()?;
    let mx = problem.jacobian(x)?;
    let mut unit = vec![0.0; gm.n_data()];
    unit[datum] = 1.0;
    let gm_t = DVector::from_vec(gm.tr_mul_vec(&unit));
    let mut col = mx.transpose() * gm_t;
    for (v, s) in col.iter_mut().zip(&scales) {
        *v *= s * s;
    }
    Ok(col.as_slice()[..problem.n_cells()].to_vec())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    /// Shared-λ controller of IES and the hybrid.
    pub lm: LmSettings,
    /// Per-member controller of RML.
    pub rml_lm: LmSettings,
    /// Overrides the method's default starting λ.
    pub initial_lambda: Option<f64>,
    /// IES only.
    pub localization: Option<LocalizationSpec>,
    /// Hybrid only: singular-value energy kept in `Δm⁺`.
    pub energy: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            lm: LmSettings::default(),
            rml_lm: LmSettings {
                max_iterations: RML_MAX_ITERATIONS,
                max_consecutive_increases: None,
                ..LmSettings::default()
            },
            initial_lambda: None,
            localization: None,
            energy: DEFAULT_ENERGY,
        }
    }
}

pub const RML_INITIAL_LAMBDA: f64 = 5000.0;
pub const RML_MAX_ITERATIONS: usize = 100;

/// Per-iteration mismatch snapshot of every member's accepted iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchRecord {
    pub iteration: usize,
    pub s_pert: Vec<f64>,
    pub s_obs: Vec<f64>,
    pub lambda: Vec<f64>,
    pub accepted: Vec<bool>,
    pub failed: Vec<bool>,
}

impl MismatchRecord {
    fn live<'v>(&'v self, v: &'v [f64]) -> impl Iterator<Item = f64> + 'v {
        v.iter().zip(&self.failed).filter(|(_, f)| !**f).map(|(v, _)| *v)
    }

    pub fn mean_obs(&self) -> f64 {
        mean(self.live(&self.s_obs))
    }

    pub fn mean_pert(&self) -> f64 {
        mean(self.live(&self.s_pert))
    }

    /// Linear-interpolated quantile of `S_d^obs` over live members.
    pub fn quantile_obs(&self, q: f64) -> f64 {
        let mut v: Vec<f64> = self.live(&self.s_obs).collect();
        quantile(&mut v, q)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn quantile(v: &mut [f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// CSV with one row per (iteration, member).
pub fn history_csv(history: &[MismatchRecord]) -> String {
    let mut out = String::from("iteration,member,s_pert,s_obs,lambda,accepted,failed\n");
    for rec in history {
        for i in 0..rec.s_obs.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                rec.iteration,
                i,
                rec.s_pert[i],
                rec.s_obs[i],
                rec.lambda[i],
                u8::from(rec.accepted[i]),
                u8::from(rec.failed[i])
            ));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MemberStatus {
    pub stop: Option<StopReason>,
    pub failed: bool,
    pub accepted_steps: usize,
}

#[derive(Debug, Clone)]
pub struct SamplerOutput {
    pub method: Method,
    pub ensemble: Ensemble,
    pub fields: Vec<Vec<f64>>,
    pub predictions: Vec<Vec<f64>>,
    pub history: Vec<MismatchRecord>,
    pub status: Vec<MemberStatus>,
    pub warnings: Vec<String>,
}

impl SamplerOutput {
    pub fn final_record(&self) -> &MismatchRecord {
        self.history.last().expect("history starts with the prior")
    }

    pub fn n_failed(&self) -> usize {
        self.status.iter().filter(|s| s.failed).count()
    }
}

struct Member {
    x: StateVector,
    eval: Option<Evaluation>,
    s_pert: f64,
    s_obs: f64,
    objective: f64,
    failed: bool,
    accepted_steps: usize,
}

fn evaluate_member(problem: &Problem, x: StateVector, anchor: &StateVector, eps: &[f64]) -> Member {
    let scored = problem.evaluate(&x).and_then(|ev| {
        let s_pert = problem.mismatch_pert(&ev.g, eps)?;
        let s_obs = problem.mismatch_obs(&ev.g)?;
        let objective = s_pert + problem.prior.prior_objective(&x, anchor, problem.angle)?;
        Ok((ev, s_pert, s_obs, objective))
    });
    match scored {
        Ok((ev, s_pert, s_obs, objective)) => Member {
            x,
            eval: Some(ev),
            s_pert,
            s_obs,
            objective,
            failed: false,
            accepted_steps: 0,
        },
        Err(_) => Member {
            x,
            eval: None,
            s_pert: f64::NAN,
            s_obs: f64::NAN,
            objective: f64::NAN,
            failed: true,
            accepted_steps: 0,
        },
    }
}

fn snapshot(iteration: usize, members: &[Member], lambda: &[f64], accepted: &[bool]) -> MismatchRecord {
    MismatchRecord {
        iteration,
        s_pert: members.iter().map(|m| m.s_pert).collect(),
        s_obs: members.iter().map(|m| m.s_obs).collect(),
        lambda: lambda.to_vec(),
        accepted: accepted.to_vec(),
        failed: members.iter().map(|m| m.failed).collect(),
    }
}

fn live_mean_pert(members: &[Member]) -> f64 {
    mean(members.iter().filter(|m| !m.failed).map(|m| m.s_pert))
}

/// Runs a sampler from the given prior ensemble until every member (RML)
/// or the shared controller (IES, hybrid) stops.
pub fn run_sampler(
    method: Method,
    problem: &Problem,
    ensemble: &Ensemble,
    settings: &SamplerSettings,
) -> Result<SamplerOutput> {
    problem.validate()?;
    let n = ensemble.len();
    if n == 0 || ensemble.anchors.len() != n || ensemble.perturbed_obs.len() != n {
        return Err(Error::DimensionMismatch {
            what: "ensemble",
            expected: n,
            got: ensemble.anchors.len().min(ensemble.perturbed_obs.len()),
        });
    }
    if method != Method::Rml && n < 2 {
        return Err(Error::InvalidObservations("ensemble methods need two or more members".into()));
    }
    let anchors: Vec<StateVector> = ensemble.anchors.iter().map(|a| problem.conform(a)).collect();
    let eps = &ensemble.perturbed_obs;
    let mut members: Vec<Member> = ensemble
        .members
        .par_iter()
        .zip(anchors.par_iter())
        .zip(eps.par_iter())
        .map(|((x, a), e)| evaluate_member(problem, problem.conform(x), a, e))
        .collect();
    if members.iter().all(|m| m.failed) {
        return Err(Error::InvalidObservations("every prior member failed to simulate".into()));
    }
    let mut warnings = Vec::new();
    let (history, stops) = match method {
        Method::Rml => run_rml(problem, &mut members, &anchors, eps, settings)?,
        Method::Ies | Method::Hybrid => {
            run_shared(method, problem, &mut members, &anchors, eps, settings, &mut warnings)?
        }
    };
    let status = members
        .iter()
        .zip(&stops)
        .map(|(m, s)| MemberStatus {
            stop: if m.failed { Some(StopReason::Failed) } else { *s },
            failed: m.failed,
            accepted_steps: m.accepted_steps,
        })
        .collect();
    let n_failed = members.iter().filter(|m| m.failed).count();
    if n_failed > 0 {
        warnings.push(format!("{n_failed} of {n} members failed and were frozen"));
    }
    let fields = members
        .iter()
        .map(|m| m.eval.as_ref().map_or_else(Vec::new, |e| e.m.clone()))
        .collect();
    let predictions = members
        .iter()
        .map(|m| m.eval.as_ref().map_or_else(Vec::new, |e| e.g.clone()))
        .collect();
    Ok(SamplerOutput {
        method,
        ensemble: Ensemble {
            members: members.into_iter().map(|m| m.x).collect(),
            anchors,
            perturbed_obs: eps.clone(),
        },
        fields,
        predictions,
        history,
        status,
        warnings,
    })
}

type Loop = (Vec<MismatchRecord>, Vec<Option<StopReason>>);

fn run_rml(
    problem: &Problem,
    members: &mut [Member],
    anchors: &[StateVector],
    eps: &[Vec<f64>],
    settings: &SamplerSettings,
) -> Result<Loop> {
    let gm = exact_sensitivity(problem)?;
    let lambda0 = settings.initial_lambda.unwrap_or(RML_INITIAL_LAMBDA);
    let mut lm: Vec<LmState> = members.iter().map(|m| LmState::new(lambda0, m.objective)).collect();
    let n = members.len();
    let lambdas = |lm: &[LmState]| lm.iter().map(|s| s.lambda).collect::<Vec<_>>();
    let mut history = vec![snapshot(0, members, &lambdas(&lm), &vec![false; n])];
    for it in 1.. {
        let running: Vec<usize> = (0..n)
            .filter(|&i| !members[i].failed && lm[i].is_running())
            .collect();
        if running.is_empty() {
            break;
        }
        // `None` marks a step whose linear solve failed; it counts as worsening.
        let candidates: Vec<(usize, Option<Member>)> = running
            .par_iter()
            .map(|&i| {
                let m = &members[i];
                let ev = m.eval.as_ref().expect("live member");
                let cand = member_update(problem, &gm, &m.x, &anchors[i], &eps[i], &ev.g, lm[i].lambda);
                (i, cand.ok().map(|x| evaluate_member(problem, x, &anchors[i], &eps[i])))
            })
            .collect();
        let mut accepted = vec![false; n];
        for (i, cand) in candidates {
            if cand.as_ref().is_some_and(|c| c.failed) {
                members[i].failed = true;
                lm[i].stopped = Some(StopReason::Failed);
                continue;
            }
            let value = cand.as_ref().map_or(f64::INFINITY, |c| c.objective);
            let out = lm_step_control(&mut lm[i], value, &settings.rml_lm);
            if out.accepted {
                let steps = members[i].accepted_steps + 1;
                members[i] = Member {
                    accepted_steps: steps,
                    ..cand.expect("accepted candidate")
                };
                accepted[i] = true;
            }
        }
        history.push(snapshot(it, members, &lambdas(&lm), &accepted));
    }
    Ok((history, lm.iter().map(|s| s.stopped).collect()))
}

fn run_shared(
    method: Method,
    problem: &Problem,
    members: &mut [Member],
    anchors: &[StateVector],
    eps: &[Vec<f64>],
    settings: &SamplerSettings,
    warnings: &mut Vec<String>,
) -> Result<Loop> {
    let n = members.len();
    let nd = problem.obs.len() as f64;
    let initial = live_mean_pert(members);
    let lambda0 = settings.initial_lambda.unwrap_or(initial / (2.0 * nd));
    let mut lm = LmState::new(lambda0, initial);
    let scales = problem.scales()?;
    let taper = match (method, settings.localization) {
        (Method::Ies, Some(loc)) => {
            let cells: Vec<[f64; 2]> = (0..problem.n_cells())
                .map(|k| problem.grid.cell_coords(k))
                .collect::<Result<_>>()?;
            Some(loc.taper_matrix(&cells, &problem.forward.data_locations()))
        }
        _ => None,
    };
    let mut history = vec![snapshot(0, members, &vec![lambda0; n], &vec![false; n])];
    let mut rank_warned = false;
    for it in 1.. {
        let live: Vec<usize> = (0..n).filter(|&i| !members[i].failed).collect();
        if live.len() < 2 {
            warnings.push("fewer than two live members; stopping".into());
            break;
        }
        let proposals: Vec<Result<StateVector>> = match method {
            Method::Ies => ies_proposals(problem, members, &live, anchors, eps, &scales, lm.lambda, taper.as_ref())?,
            Method::Hybrid => {
                let fields: Vec<&[f64]> = live.iter().map(|&i| members[i].eval.as_ref().unwrap().m.as_slice()).collect();
                let preds: Vec<&[f64]> = live.iter().map(|&i| members[i].eval.as_ref().unwrap().g.as_slice()).collect();
                let gm = ensemble_sensitivity(&fields, &preds, settings.energy)?;
                if gm.rank() == 0 && !rank_warned {
                    warnings.push(format!("iteration {it}: ensemble sensitivity has rank 0"));
                    rank_warned = true;
                }
                live.par_iter()
                    .map(|&i| {
                        let m = &members[i];
                        hybrid_update(problem, &gm, &m.x, &anchors[i], &eps[i], &m.eval.as_ref().unwrap().g, lm.lambda)
                    })
                    .collect()
            }
            Method::Rml => unreachable!(),
        };
        let candidates: Vec<Option<Member>> = live
            .par_iter()
            .zip(proposals.into_par_iter())
            .map(|(&i, p)| p.ok().map(|x| evaluate_member(problem, x, &anchors[i], &eps[i])))
            .collect();
        // A member whose candidate cannot be simulated is frozen where it is.
        for (&i, c) in live.iter().zip(&candidates) {
            if c.as_ref().map_or(true, |c| c.failed) {
                members[i].failed = true;
            }
        }
        lm.current = live_mean_pert(members);
        let candidate_mean = mean(
            live.iter()
                .zip(&candidates)
                .filter(|(i, _)| !members[**i].failed)
                .map(|(_, c)| c.as_ref().unwrap().s_pert),
        );
        let out = lm_step_control(&mut lm, candidate_mean, &settings.lm);
        let mut accepted = vec![false; n];
        if out.accepted {
            for (&i, c) in live.iter().zip(candidates) {
                if members[i].failed {
                    continue;
                }
                let steps = members[i].accepted_steps + 1;
                members[i] = Member {
                    accepted_steps: steps,
                    ..c.expect("live candidate")
                };
                accepted[i] = true;
            }
        }
        history.push(snapshot(it, members, &vec![lm.lambda; n], &accepted));
        if out.stop.is_some() {
            break;
        }
    }
    Ok((history, vec![lm.stopped; n]))
}

#[allow(clippy::too_many_arguments)]
fn ies_proposals(
    problem: &Problem,
    members: &[Member],
    live: &[usize],
    anchors: &[StateVector],
    eps: &[Vec<f64>],
    scales: &[f64],
    lambda: f64,
    taper: Option<&DMatrix<f64>>,
) -> Result<Vec<Result<StateVector>>> {
    let na = problem.n_active();
    let angle = problem.angle_row();
    let states: Vec<Vec<f64>> = live
        .iter()
        .map(|&i| {
            let mut v = members[i].x.to_vec();
            v.truncate(na);
            v
        })
        .collect();
    let cols: Vec<&[f64]> = states.iter().map(|v| v.as_slice()).collect();
    let mut dx = anomalies(&cols);
    if let Some(row) = angle {
        // Circular anomalies about the doubled-angle mean.
        let (s, c) = states
            .iter()
            .fold((0.0, 0.0), |(s, c), v| (s + (2.0 * v[row]).sin(), c + (2.0 * v[row]).cos()));
        let center = 0.5 * s.atan2(c);
        let scale = ((live.len() - 1) as f64).sqrt();
        for (j, v) in states.iter().enumerate() {
            dx[(row, j)] = normalize_angle(v[row] - center) / scale;
        }
    }
    for (mut r, s) in dx.row_iter_mut().zip(scales) {
        r /= *s;
    }
    let whitened: Vec<Vec<f64>> = live
        .iter()
        .map(|&i| {
            let g = &members[i].eval.as_ref().unwrap().g;
            g.iter().zip(&problem.obs.noise_std).map(|(a, s)| a / s).collect()
        })
        .collect();
    let dcols: Vec<&[f64]> = whitened.iter().map(|v| v.as_slice()).collect();
    let dd = anomalies(&dcols);
    let residuals = live
        .iter()
        .map(|&i| problem.whitened_residual(&members[i].x, &anchors[i], scales))
        .collect::<Result<Vec<_>>>()?;
    let innovations: Vec<Vec<f64>> = live
        .iter()
        .map(|&i| problem.innovation(&members[i].eval.as_ref().unwrap().g, &eps[i]))
        .collect();
    let deltas = ies_update(&IesInputs {
        dx: &dx,
        dd: &dd,
        residuals: &residuals,
        innovations: &innovations,
        lambda,
        taper,
    })?;
    Ok(live
        .iter()
        .zip(deltas)
        .map(|(&i, d)| problem.apply_step(&members[i].x, &d, scales))
        .collect())
}

#[cfg(test)]
mod tests;
