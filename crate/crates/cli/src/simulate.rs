//! `kfls simulate`: the wall-collision comparison over a list of seeds.
//!
//! Writes into the output directory:
//! - `run_seed{s}.csv`: truth, measurement and both filters per step
//! - `data_seed{s}.csv`: `k, y, u`, readable by `kfls filter`
//! - `model.json`: the nominal model and filters, for `kfls filter`
//! - `collisions.csv`, `summary.csv`, `config.json`, `metadata.json`

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use kfls_core::adaptive::LAMBDA_ORDERING_NOTE;
use kfls_core::experiment::{run_seed, FilterRun, SeedRun};
use kfls_core::{Error, ExperimentConfig, Result};

use crate::filter::ModelConfig;
use crate::output::{ensure_dir, num, opt, read_to_string, write_csv, write_json};

pub const RUN_COLUMNS: [&str; 14] = [
    "k",
    "t",
    "z_true",
    "zdot_true",
    "y",
    "kf_z",
    "kf_zdot",
    "kfstar_z",
    "kfstar_zdot",
    "lambda",
    "kf_sig_z",
    "kf_sig_zdot",
    "kfstar_sig_z",
    "kfstar_sig_zdot",
];

#[derive(Serialize)]
struct Metadata<'a> {
    config_sha256: String,
    seeds: &'a [u64],
    version: &'static str,
    lambda_ordering_note: &'static str,
}

fn run_rows(run: &SeedRun, kf: Option<&FilterRun>, kfstar: Option<&FilterRun>) -> Vec<Vec<String>> {
    let est = |f: Option<&FilterRun>, row: usize, i: usize| opt(f.map(|f| f.estimates[row][i]));
    let var = |f: Option<&FilterRun>, row: usize, i: usize| opt(f.map(|f| f.variances[row][i]));
    (0..run.truth.len())
        .map(|row| {
            let [z, zd] = run.truth.states[row];
            vec![
                row.to_string(),
                num(run.truth.times[row]),
                num(z),
                num(zd),
                num(run.measurements[row]),
                est(kf, row, 0),
                est(kf, row, 1),
                est(kfstar, row, 0),
                est(kfstar, row, 1),
                opt(kfstar.and_then(|f| f.lambdas[row])),
                var(kf, row, 0),
                var(kf, row, 1),
                var(kfstar, row, 0),
                var(kfstar, row, 1),
            ]
        })
        .collect()
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub fn run(config: Option<&Path>, out: &Path, seed: Option<u64>, seeds: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::from_json(&read_to_string(path)?)?,
        None => ExperimentConfig::benchmark(),
    };
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    } else if let Some(n) = seeds {
        cfg.seeds = (0..n).collect();
    }
    cfg.validate()?;

    let kf_name = cfg.filters.iter().find(|f| !f.is_adaptive()).map(|f| f.name().to_string());
    let kfstar_name = cfg.filters.iter().find(|f| f.is_adaptive()).map(|f| f.name().to_string());

    ensure_dir(out)?;
    let canonical = serde_json::to_string_pretty(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    let digest = hex::encode(Sha256::digest(format!("{canonical}\n").as_bytes()));
    write_json(&out.join("config.json"), &cfg)?;
    write_json(
        &out.join("metadata.json"),
        &Metadata {
            config_sha256: digest,
            seeds: &cfg.seeds,
            version: env!("CARGO_PKG_VERSION"),
            lambda_ordering_note: LAMBDA_ORDERING_NOTE,
        },
    )?;

    let params = cfg.msd_params();
    let (a_c, b_c) = params.continuous_model();
    let (a_d, b_d) = kfls_core::discretize_zoh(&a_c, &b_c, params.ts)?;
    let gamma = nalgebra::DMatrix::from_element(1, 1, cfg.measurement_variance);
    write_json(
        &out.join("model.json"),
        &ModelConfig::from_matrices(
            &a_d,
            &b_d,
            &params.measurement_matrix(),
            &gamma,
            cfg.initial.clone(),
            cfg.filters.clone(),
        ),
    )?;

    let window = cfg.post_collision_window_seconds;
    let mut summary = Vec::new();
    let mut collision_rows = Vec::new();
    let mut overall: Vec<Vec<f64>> = vec![Vec::new(); cfg.filters.len()];
    let mut post: Vec<Vec<f64>> = vec![Vec::new(); cfg.filters.len()];

    for &s in &cfg.seeds {
        let run = run_seed(&cfg, s)?;
        let kf = kf_name.as_deref().and_then(|n| run.filter(n));
        let kfstar = kfstar_name.as_deref().and_then(|n| run.filter(n));
        write_csv(
            &out.join(format!("run_seed{s}.csv")),
            &header(&RUN_COLUMNS),
            run_rows(&run, kf, kfstar),
        )?;
        write_csv(
            &out.join(format!("data_seed{s}.csv")),
            &header(&["k", "y", "u"]),
            (0..run.truth.len()).map(|k| vec![k.to_string(), num(run.measurements[k]), num(run.inputs[k])]),
        )?;
        for (i, c) in run.truth.collisions.iter().enumerate() {
            collision_rows.push(vec![
                s.to_string(),
                i.to_string(),
                num(c.time),
                num(c.velocity_before),
                num(c.velocity_after),
            ]);
        }

        let mask = run.post_collision_mask(window);
        for (i, f) in run.filters.iter().enumerate() {
            let all = run.rmse(f, None).expect("at least one row");
            let after = run.rmse(f, Some(&mask));
            overall[i].push(all);
            if let Some(v) = after {
                post[i].push(v);
            }
            summary.push(vec![
                s.to_string(),
                f.name.clone(),
                num(all),
                opt(after),
                run.truth.collisions.len().to_string(),
                f.p_positive_definite.to_string(),
            ]);
        }
        log::info!("seed {s}: {} collisions", run.truth.collisions.len());
    }

    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    for (i, f) in cfg.filters.iter().enumerate() {
        summary.push(vec![
            "mean".into(),
            f.name().to_string(),
            opt(mean(&overall[i])),
            opt(mean(&post[i])),
            String::new(),
            String::new(),
        ]);
    }
    write_csv(
        &out.join("collisions.csv"),
        &header(&["seed", "index", "time", "velocity_before", "velocity_after"]),
        collision_rows,
    )?;
    write_csv(
        &out.join("summary.csv"),
        &header(&[
            "seed",
            "filter",
            "rmse_overall",
            "rmse_post_collision",
            "collisions",
            "p_positive_definite",
        ]),
        summary,
    )
}
