//! `kfls filter`: run configured filters over a data file.
//!
//! Row `k` of the data holds `y_k` and `u_k`. As in the simulation, filter step `j`
//! consumes `u_j` and `y_{j+1}`, so row 0 carries the prior and `y_0` is unused.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use kfls_core::experiment::{build_filter, initial_state, run_filter, FilterRun, InitialConfig};
use kfls_core::{Error, FilterConfig, LtvModel, Result, SpdMatrix};

use crate::output::{ensure_dir, num, opt, read_to_string, write_csv};

/// A time-invariant model with the filters to run on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub measurement_covariance: Vec<Vec<f64>>,
    pub initial: InitialConfig,
    pub filters: Vec<FilterConfig>,
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{field}: expected a nonempty rectangular matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{field}: entries must be finite")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_matrices(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        c: &DMatrix<f64>,
        gamma: &DMatrix<f64>,
        initial: InitialConfig,
        filters: Vec<FilterConfig>,
    ) -> Self {
        let rows = |m: &DMatrix<f64>| m.row_iter().map(|r| r.iter().copied().collect()).collect();
        ModelConfig {
            a: rows(a),
            b: rows(b),
            c: rows(c),
            measurement_covariance: rows(gamma),
            initial,
            filters,
        }
    }
}

/// A parsed model ready to filter with.
pub struct Prepared {
    pub model: LtvModel,
    pub gamma: SpdMatrix,
    pub initial: kfls_core::FilterState,
}

pub fn prepare(cfg: &ModelConfig) -> Result<Prepared> {
    let a = matrix(&cfg.a, "a")?;
    let b = matrix(&cfg.b, "b")?;
    let c = matrix(&cfg.c, "c")?;
    let gamma = SpdMatrix::new_pd(matrix(&cfg.measurement_covariance, "measurement_covariance")?)
        .map_err(|e| Error::Config(format!("measurement_covariance: {e}")))?;
    let model = LtvModel::constant(a, b, c).map_err(|e| Error::Config(format!("model: {e}")))?;
    if gamma.dim() != model.output_dim() {
        return Err(Error::Config(format!(
            "measurement_covariance: expected {0}x{0}, got {1}x{1}",
            model.output_dim(),
            gamma.dim()
        )));
    }
    if cfg.filters.is_empty() {
        return Err(Error::Config("filters must not be empty".into()));
    }
    let initial = initial_state(&cfg.initial.x_hat, &cfg.initial.p0, model.state_dim(), "initial")?;
    Ok(Prepared {
        model,
        gamma,
        initial,
    })
}

/// Column names for a block of `count` values: `prefix` alone when `count == 1`,
/// otherwise `prefix0, prefix1, ...`.
fn block_names(prefix: &str, count: usize) -> Vec<String> {
    if count == 1 {
        vec![prefix.to_string()]
    } else {
        (0..count).map(|i| format!("{prefix}{i}")).collect()
    }
}

pub struct DataFile {
    pub k: Vec<u64>,
    pub y: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

pub fn read_data(path: &Path, p: usize, m: usize) -> Result<DataFile> {
    let text = read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(Error::Data("no rows".into()));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column {name:?}")))
    };
    let k_col = find("k")?;
    let y_cols = block_names("y", p).iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let u_cols = block_names("u", m).iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let y_names = block_names("y", p);
    let u_names = block_names("u", m);

    let mut data = DataFile {
        k: Vec::new(),
        y: Vec::new(),
        u: Vec::new(),
    };
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        let field = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::Data(format!("row {row}: column {name}: cannot parse {raw:?}")))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("row {row}: column {name}: non-finite value {raw:?}")));
            }
            Ok(v)
        };
        let raw_k = record.get(k_col).unwrap_or("");
        let k: u64 = raw_k
            .parse()
            .map_err(|_| Error::Data(format!("row {row}: column k: cannot parse {raw_k:?}")))?;
        let y = y_cols
            .iter()
            .zip(&y_names)
            .map(|(c, n)| field(*c, n))
            .collect::<Result<Vec<_>>>()?;
        let u = u_cols
            .iter()
            .zip(&u_names)
            .map(|(c, n)| field(*c, n))
            .collect::<Result<Vec<_>>>()?;
        data.k.push(k);
        data.y.push(DVector::from_vec(y));
        data.u.push(DVector::from_vec(u));
    }
    if data.k.is_empty() {
        return Err(Error::Data("no rows".into()));
    }
    Ok(data)
}

/// `k`, then per filter its estimate, the diagonal of `P`, and `λ` for adaptive
/// filters.
pub fn estimates_csv(path: &Path, k: &[u64], runs: &[FilterRun]) -> Result<()> {
    let n = runs.first().map_or(0, |r| r.estimates[0].len());
    let mut header = vec!["k".to_string()];
    for r in runs {
        header.extend((0..n).map(|i| format!("{}_x{i}", r.name)));
        header.extend((0..n).map(|i| format!("{}_var{i}", r.name)));
        if r.adaptive {
            header.push(format!("{}_lambda", r.name));
        }
    }
    let rows = (0..k.len()).map(|row| {
        let mut out = vec![k[row].to_string()];
        for r in runs {
            out.extend(r.estimates[row].iter().map(|v| num(*v)));
            out.extend(r.variances[row].iter().map(|v| num(*v)));
            if r.adaptive {
                out.push(opt(r.lambdas[row]));
            }
        }
        out
    });
    write_csv(path, &header, rows)
}

pub fn run(data_path: &Path, config_path: &Path, out: &Path) -> Result<()> {
    let cfg = ModelConfig::from_json(&read_to_string(config_path)?)?;
    let prepared = prepare(&cfg)?;
    let n = prepared.model.state_dim();
    let filters = cfg
        .filters
        .iter()
        .map(|f| build_filter(f, n))
        .collect::<Result<Vec<_>>>()?;
    let data = read_data(data_path, prepared.model.output_dim(), prepared.model.input_dim())?;
    let runs = filters
        .iter()
        .map(|f| run_filter(f, &prepared.model, &prepared.gamma, &prepared.initial, &data.u, &data.y))
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(out)?;
    estimates_csv(&out.join("estimates.csv"), &data.k, &runs)
}
