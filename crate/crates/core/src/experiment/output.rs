use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{generate_truth_and_data, ExperimentConfig, ProblemKind, Scenario};
use crate::covariance::{build_l, factor_error_map};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::forward::FlowModel;
use crate::io::{field_to_csv, fields_to_bytes};
use crate::oracle::{mtc_sample, posterior_hyper_grid};
use crate::priors::{sample_prior_ensemble, HyperParams};
use crate::smoothers::{history_csv, run_sampler, HyperMode, Problem};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Replace the artifacts of an earlier run in `out_dir`.
    pub force: bool,
    /// Also write `factor_error.csv` for the data-generating factor.
    pub factor_error: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Artifacts written next to the manifest, in write order.
    pub files: Vec<String>,
    pub summary: serde_json::Value,
}

pub const MANIFEST: &str = "manifest.json";

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
/// With `force`, the files of the previous manifest are removed first.
pub(crate) fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("{} is not empty; pass --force to overwrite", dir.display()),
            )));
        }
        if let Ok(text) = fs::read_to_string(dir.join(MANIFEST)) {
            if let Ok(old) = serde_json::from_str::<Manifest>(&text) {
                for f in old.files {
                    let p = dir.join(&f);
                    if Path::new(&f).components().count() == 1 && p.is_file() {
                        fs::remove_file(p)?;
                    }
                }
            }
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub(crate) struct ArtifactWriter {
    dir: PathBuf,
    files: Vec<String>,
}

impl ArtifactWriter {
    pub(crate) fn new(dir: &Path) -> Self {
        ArtifactWriter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub(crate) fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

pub(crate) fn write_manifest(
    w: ArtifactWriter,
    config: &ExperimentConfig,
    command: &str,
    summary: serde_json::Value,
) -> Result<Manifest> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        seed: config.seed,
        config: config.clone(),
        files: w.files,
        summary,
    };
    fs::write(w.dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn observations_csv(s: &Scenario) -> String {
    let mut out = String::from("index,label,time,x,y,noiseless,value,noise_std\n");
    for (k, meta) in s.obs.meta.iter().enumerate() {
        let time = meta.time.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{k},{},{time},{},{},{},{},{}",
            meta.label, meta.location[0], meta.location[1], s.noiseless[k], s.obs.values[k], s.obs.noise_std[k]
        );
    }
    out
}

fn hyper_header(names: &[&str]) -> String {
    format!("member,stage,{},s_obs,failed\n", names.join(","))
}

fn hyper_row(out: &mut String, member: usize, stage: &str, h: &HyperParams, s_obs: f64, failed: bool) {
    let vals: Vec<String> = h.to_vec().iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "{member},{stage},{},{s_obs},{failed}", vals.join(","));
}

fn predictions_csv(preds: &[Vec<f64>]) -> String {
    let mut out = String::from("member,datum,value\n");
    for (i, p) in preds.iter().enumerate() {
        for (k, v) in p.iter().enumerate() {
            let _ = writeln!(out, "{i},{k},{v}");
        }
    }
    out
}

fn to_fields(s: &Scenario, values: &[Vec<f64>]) -> Result<Vec<Field>> {
    values.iter().map(|v| Field::new(s.grid, v.clone())).collect()
}

fn run_smoother(
    s: &Scenario,
    problem: &Problem,
    method: crate::smoothers::Method,
    w: &mut ArtifactWriter,
) -> Result<serde_json::Value> {
    let n = s.config.ensemble_size.expect("resolved");
    let ens = sample_prior_ensemble(n, &s.prior, s.grid.len(), &s.obs.noise_std, s.config.seed)?;
    let out = run_sampler(method, problem, &ens, &s.config.settings())?;
    let first = out.history.first().expect("initial record");
    let last = out.final_record();

    let prior_fields: Vec<Vec<f64>> = ens
        .members
        .iter()
        .map(|x| problem.realize(&problem.conform(x)))
        .collect::<Result<_>>()?;
    w.write("mismatch_history.csv", history_csv(&out.history))?;
    w.write("prior_fields.bin", fields_to_bytes(&to_fields(s, &prior_fields)?))?;
    w.write("posterior_fields.bin", fields_to_bytes(&to_fields(s, &out.fields)?))?;
    let latent: Vec<Vec<f64>> = out.ensemble.members.iter().map(|x| x.z.clone()).collect();
    w.write("posterior_latent.bin", fields_to_bytes(&to_fields(s, &latent)?))?;
    let mut hyper = hyper_header(s.prior.kind().names());
    for (i, x) in ens.members.iter().enumerate() {
        hyper_row(&mut hyper, i, "prior", &x.hyper, first.s_obs[i], first.failed[i]);
    }
    for (i, x) in out.ensemble.members.iter().enumerate() {
        hyper_row(&mut hyper, i, "posterior", &x.hyper, last.s_obs[i], last.failed[i]);
    }
    w.write("hyper.csv", hyper)?;
    w.write("predictions.csv", predictions_csv(&out.predictions))?;

    let mut stops = std::collections::BTreeMap::new();
    for st in &out.status {
        let key = st.stop.map_or("running", |r| r.as_str());
        *stops.entry(key).or_insert(0usize) += 1;
    }
    Ok(json!({
        "ensemble_size": n,
        "iterations": last.iteration,
        "initial_mean_s_obs": first.mean_obs(),
        "final_mean_s_obs": last.mean_obs(),
        "final_median_s_obs": last.quantile_obs(0.5),
        "final_mean_s_pert": last.mean_pert(),
        "expected_s_obs": 0.5 * s.obs.len() as f64,
        "failed_members": out.n_failed(),
        "stop_reasons": stops,
        "warnings": out.warnings,
    }))
}

fn run_mtc(s: &Scenario, problem: &Problem, w: &mut ArtifactWriter) -> Result<serde_json::Value> {
    let n = s.config.ensemble_size.expect("resolved");
    let grid = posterior_hyper_grid(problem, s.config.oracle.resolution, s.config.oracle.span)?;
    let samples = mtc_sample(problem, &grid, n, s.config.seed)?;
    let evals = samples
        .iter()
        .map(|x| problem.evaluate(x))
        .collect::<Result<Vec<_>>>()?;
    let s_obs = evals
        .iter()
        .map(|e| problem.mismatch_obs(&e.g))
        .collect::<Result<Vec<_>>>()?;
    let fields: Vec<Vec<f64>> = evals.iter().map(|e| e.m.clone()).collect();
    let latent: Vec<Vec<f64>> = samples.iter().map(|x| x.z.clone()).collect();
    w.write("posterior_fields.bin", fields_to_bytes(&to_fields(s, &fields)?))?;
    w.write("posterior_latent.bin", fields_to_bytes(&to_fields(s, &latent)?))?;
    let mut hyper = hyper_header(s.prior.kind().names());
    for (i, (x, v)) in samples.iter().zip(&s_obs).enumerate() {
        hyper_row(&mut hyper, i, "posterior", &x.hyper, *v, false);
    }
    w.write("hyper.csv", hyper)?;
    let preds: Vec<Vec<f64>> = evals.iter().map(|e| e.g.clone()).collect();
    w.write("predictions.csv", predictions_csv(&preds))?;
    Ok(json!({
        "ensemble_size": n,
        "final_mean_s_obs": s_obs.iter().sum::<f64>() / n.max(1) as f64,
        "expected_s_obs": 0.5 * s.obs.len() as f64,
        "grid_marginal_means": [grid.marginal_mean(0), grid.marginal_mean(1)],
        "grid_marginal_stds": [grid.marginal_std(0), grid.marginal_std(1)],
    }))
}

/// Runs one configured experiment and writes its artifacts to
/// `opts.out_dir`. The output depends only on the config, never on the
/// worker count or the clock.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<Manifest> {
    let method = config.method()?;
    let scenario = generate_truth_and_data(config)?;
    let s = &scenario;
    let problem = s.problem();
    prepare_dir(&opts.out_dir, opts.force)?;
    let mut w = ArtifactWriter::new(&opts.out_dir);
    w.write("observations.csv", observations_csv(s))?;
    w.write("truth.csv", field_to_csv(&s.truth))?;
    if s.config.problem == ProblemKind::Flow2d {
        let flow = FlowModel::new(s.grid, s.config.flow.clone().expect("resolved"))?;
        w.write("truth_watercut.csv", flow.run(s.truth.values())?.series.to_csv())?;
    }
    let mut summary = match method.sampler() {
        Some(m) => run_smoother(s, &problem, m, &mut w)?,
        None => run_mtc(s, &problem, &mut w)?,
    };
    if s.config.problem == ProblemKind::Linear1d && method.sampler().is_some() {
        let hierarchical = Problem {
            hyper_mode: HyperMode::Hierarchical,
            ..s.problem()
        };
        let grid = posterior_hyper_grid(&hierarchical, s.config.oracle.resolution, s.config.oracle.span)?;
        w.write("hypergrid.csv", grid.to_csv())?;
    } else if method.sampler().is_none() {
        let grid = posterior_hyper_grid(&problem, s.config.oracle.resolution, s.config.oracle.span)?;
        w.write("hypergrid.csv", grid.to_csv())?;
    }
    if opts.factor_error {
        let op = build_l(&s.grid, &s.family, &s.truth_hyper)?;
        let center = s.grid.index(s.grid.nx() / 2, s.grid.ny() / 2)?;
        let mut csv = String::from("cell,x,y,llt,exact\n");
        for r in factor_error_map(&op, center)? {
            let _ = writeln!(csv, "{},{},{},{},{}", r.cell, r.x, r.y, r.llt, r.exact);
        }
        w.write("factor_error.csv", csv)?;
    }
    summary["truth_hyper"] = json!(s.truth_hyper.to_vec());
    write_manifest(w, &s.config, "run", summary)
}
