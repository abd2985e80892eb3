use rayon::prelude::*;

use super::output::{prepare_dir, write_manifest, ArtifactWriter, Manifest, RunOptions};
use super::{generate_truth_and_data, ExperimentConfig, ProblemKind, Scenario};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::io::field_to_csv;
use crate::priors::sample_prior_ensemble;
use crate::smoothers::{cross_covariance, ensemble_sensitivity, exact_sensitivity};

/// Cross-covariance fields between `z` and the single datum.
#[derive(Debug, Clone)]
pub struct SensitivityFields {
    /// Row of `M_x` for the reference member.
    pub exact: Vec<f64>,
    /// Hybrid estimate with the exact `G_m`.
    pub hybrid_exact: Vec<f64>,
    pub rows: Vec<SensitivityRow>,
}

#[derive(Debug, Clone)]
pub struct SensitivityRow {
    pub ensemble_size: usize,
    /// Pure-ensemble `cov(z, d)`.
    pub ensemble: Vec<f64>,
    /// `C_z M_zᵀ G_mᵀ` with `G_m` regressed from the ensemble.
    pub hybrid: Vec<f64>,
    pub ensemble_distance: f64,
    pub hybrid_distance: f64,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Per-size cross-covariance estimates against the exact sensitivity of one
/// reference member. Member `i` is the same draw at every ensemble size.
pub fn sensitivity_fields(scenario: &Scenario) -> Result<SensitivityFields> {
    let block = scenario
        .config
        .sensitivity
        .as_ref()
        .ok_or_else(|| Error::config("problem", "the study needs sensitivity2d"))?;
    let problem = scenario.problem();
    let energy = scenario.config.settings().energy;
    let n_cells = problem.n_cells();
    let reference_member = block.reference_member;
    let largest = *block.ensemble_sizes.iter().max().expect("validated");
    let ens = sample_prior_ensemble(largest, &problem.prior, n_cells, &problem.obs.noise_std, scenario.config.seed)?;
    let members: Vec<_> = ens.members.iter().map(|m| problem.conform(m)).collect();
    let reference = &members[reference_member];
    let evals = members
        .par_iter()
        .map(|x| problem.evaluate(x))
        .collect::<Result<Vec<_>>>()?;

    let exact_gm = exact_sensitivity(&problem)?;
    let mx = problem.jacobian(reference)?;
    let cell = problem
        .forward
        .linear_sensitivity()
        .and_then(|g| g.row(0).iter().position(|v| *v != 0.0))
        .ok_or_else(|| Error::Unsupported("the study needs a single point observation".into()))?;
    let exact: Vec<f64> = (0..n_cells).map(|k| mx[(cell, k)]).collect();
    let hybrid_exact = cross_covariance(&problem, &exact_gm, reference, 0)?;

    let mut rows = Vec::new();
    for &n in &block.ensemble_sizes {
        let zs: Vec<&[f64]> = members[..n].iter().map(|x| x.z.as_slice()).collect();
        let ds: Vec<f64> = evals[..n].iter().map(|e| e.g[0]).collect();
        let d_mean = ds.iter().sum::<f64>() / n as f64;
        let mut ensemble = vec![0.0; n_cells];
        for k in 0..n_cells {
            let z_mean = zs.iter().map(|z| z[k]).sum::<f64>() / n as f64;
            ensemble[k] = zs
                .iter()
                .zip(&ds)
                .map(|(z, d)| (z[k] - z_mean) * (d - d_mean))
                .sum::<f64>()
                / (n - 1) as f64;
        }
        let fields: Vec<&[f64]> = evals[..n].iter().map(|e| e.m.as_slice()).collect();
        let preds: Vec<&[f64]> = evals[..n].iter().map(|e| e.g.as_slice()).collect();
        let gm = ensemble_sensitivity(&fields, &preds, energy)?;
        let hybrid = cross_covariance(&problem, &gm, reference, 0)?;
        rows.push(SensitivityRow {
            ensemble_size: n,
            ensemble_distance: distance(&ensemble, &exact),
            hybrid_distance: distance(&hybrid, &exact),
            ensemble,
            hybrid,
        });
    }
    Ok(SensitivityFields {
        exact,
        hybrid_exact,
        rows,
    })
}

/// Writes the exact, hybrid and ensemble cross-covariance fields as grid
/// CSVs plus `distances.csv`.
pub fn run_sensitivity_study(config: &ExperimentConfig, opts: &RunOptions) -> Result<Manifest> {
    if config.problem != ProblemKind::Sensitivity2d {
        return Err(Error::config("problem", "`sensitivity` needs sensitivity2d"));
    }
    let scenario = generate_truth_and_data(config)?;
    let result = sensitivity_fields(&scenario)?;
    prepare_dir(&opts.out_dir, opts.force)?;
    let mut w = ArtifactWriter::new(&opts.out_dir);
    let grid = scenario.grid;
    let as_csv = |v: &[f64]| -> Result<String> { Ok(field_to_csv(&Field::new(grid, v.to_vec())?)) };
    w.write("exact.csv", &as_csv(&result.exact)?)?;
    w.write("hybrid_exact.csv", &as_csv(&result.hybrid_exact)?)?;
    let mut table = String::from("ensemble_size,ensemble_distance,hybrid_distance\n");
    for row in &result.rows {
        w.write(&format!("ensemble_{}.csv", row.ensemble_size), &as_csv(&row.ensemble)?)?;
        w.write(&format!("hybrid_{}.csv", row.ensemble_size), &as_csv(&row.hybrid)?)?;
        table.push_str(&format!(
            "{},{},{}\n",
            row.ensemble_size, row.ensemble_distance, row.hybrid_distance
        ));
    }
    w.write("distances.csv", &table)?;
    let summary = serde_json::json!({
        "exact_vs_hybrid_exact": distance(&result.exact, &result.hybrid_exact),
        "distances": result.rows.iter().map(|r| serde_json::json!({
            "ensemble_size": r.ensemble_size,
            "ensemble": r.ensemble_distance,
            "hybrid": r.hybrid_distance,
        })).collect::<Vec<_>>(),
    });
    write_manifest(w, &scenario.config, "sensitivity", summary)
}
