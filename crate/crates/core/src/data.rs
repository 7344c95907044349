//! Regression datasets, CSV ingestion and reference samplers.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{dot, solve};
use crate::rng::{stream, Purpose, StreamRng};

/// Rows `(a_j, y_j)` with `a_j ∈ R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<Vec<f64>>,
    responses: Vec<f64>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(dim: usize, features: Vec<Vec<f64>>, responses: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if features.len() != responses.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} responses",
                features.len(),
                responses.len()
            )));
        }
        for (j, row) in features.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::invalid(format!("row {j} has {} features, expected {dim}", row.len())));
            }
            ensure_finite(row, "features")?;
        }
        ensure_finite(&responses, "responses")?;
        Ok(Dataset {
            dim,
            features,
            responses,
            provenance: provenance.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Rescales every feature column to zero mean and unit (population)
    /// variance; optionally centers the response. Constant columns are only
    /// centered.
    pub fn standardize(&self, center_response: bool) -> Result<Dataset> {
        if self.is_empty() {
            return Err(Error::invalid("cannot standardize an empty dataset"));
        }
        let n = self.len() as f64;
        let mut features = self.features.clone();
        for i in 0..self.dim {
            let mean = features.iter().map(|r| r[i]).sum::<f64>() / n;
            let var = features.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for r in features.iter_mut() {
                r[i] = (r[i] - mean) / sd;
            }
        }
        let mut responses = self.responses.clone();
        if center_response {
            let m = responses.iter().sum::<f64>() / n;
            responses.iter_mut().for_each(|y| *y -= m);
        }
        let note = if center_response {
            "standardized features, centered response"
        } else {
            "standardized features"
        };
        Dataset::new(self.dim, features, responses, format!("{}; {note}", self.provenance))
    }

    /// Least-squares coefficients from the normal equations.
    pub fn ols(&self) -> Result<Vec<f64>> {
        let d = self.dim;
        let mut gram = vec![vec![0.0; d]; d];
        let mut moment = vec![0.0; d];
        for (a, &y) in self.features.iter().zip(&self.responses) {
            for i in 0..d {
                moment[i] += a[i] * y;
                for k in 0..d {
                    gram[i][k] += a[i] * a[k];
                }
            }
        }
        solve(&gram, &moment).ok_or_else(|| Error::NumericalFailure("normal equations are singular".into()))
    }

    /// Residual `y_j - a_jᵀx` of every row.
    pub fn residuals(&self, x: &[f64]) -> Vec<f64> {
        self.features
            .iter()
            .zip(&self.responses)
            .map(|(a, y)| y - dot(a, x))
            .collect()
    }
}

/// `y_j = x*ᵀa_j + ε_j` with `a_j ~ N(0, I)` and `ε_j ~ N(0, noise_var)`.
pub fn gen_linear(n: usize, x_star: &[f64], noise_var: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || x_star.is_empty() {
        return Err(Error::invalid("need at least one row and one feature"));
    }
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(Error::invalid(format!("noise variance must be non-negative, got {noise_var}")));
    }
    ensure_finite(x_star, "x_star")?;
    let mut rng = stream(seed, 0, Purpose::Data);
    let sd = noise_var.sqrt();
    let mut features = Vec::with_capacity(n);
    let mut responses = Vec::with_capacity(n);
    for _ in 0..n {
        let a: Vec<f64> = x_star.iter().map(|_| rng.sample(StandardNormal)).collect();
        let noise: f64 = rng.sample(StandardNormal);
        responses.push(dot(&a, x_star) + sd * noise);
        features.push(a);
    }
    Dataset::new(
        x_star.len(),
        features,
        responses,
        format!("gen_linear(n={n}, x_star={x_star:?}, noise_var={noise_var}, seed={seed})"),
    )
}

fn header(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("a_{i}")).chain(["y".to_string()]).collect()
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `a_0,...,a_{d-1},y` rows.
pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header(data.dim).join(","))?;
    for (a, y) in data.features.iter().zip(&data.responses) {
        let row: Vec<String> = a.iter().chain([y]).map(|v| fmt_f64(*v)).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let head = reader.headers().map_err(csv_error)?.clone();
    let width = head.len();
    if width < 2 || head.iter().collect::<Vec<_>>() != header(width - 1) {
        return Err(Error::Schema(format!(
            "expected header a_0,...,a_{{d-1}},y, got {}",
            head.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let dim = width - 1;
    let mut features = Vec::new();
    let mut responses = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != width {
            return Err(Error::Schema(format!(
                "line {line}: {} fields, expected {width}",
                record.len()
            )));
        }
        let mut values = Vec::with_capacity(width);
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite value {field:?}"),
                });
            }
            values.push(v);
        }
        responses.push(values.pop().unwrap_or_default());
        features.push(values);
    }
    Dataset::new(dim, features, responses, format!("csv:{}", path.display()))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// `n` i.i.d. `Dirichlet(alpha)` draws from normalized gamma variates; every
/// row has all `K` coordinates.
pub fn dirichlet_oracle(alpha: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    dirichlet_draws(alpha, n, &mut stream(seed, 0, Purpose::Reference))
}

/// [`dirichlet_oracle`] drawing from a caller-supplied stream.
pub fn dirichlet_draws(alpha: &[f64], n: usize, rng: &mut StreamRng) -> Result<Vec<Vec<f64>>> {
    if alpha.len() < 2 || alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return Err(Error::invalid("need at least two positive concentrations"));
    }
    let gammas: Vec<Gamma<f64>> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|e| Error::invalid(e.to_string())))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let g: Vec<f64> = gammas.iter().map(|d| d.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 {
            out.push(g.into_iter().map(|v| v / total).collect());
        }
    }
    Ok(out)
}
