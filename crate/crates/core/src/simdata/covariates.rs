//! Gaussian-copula covariate generator: one latent standard normal per
//! variable, correlated through a latent correlation matrix and then
//! transformed to continuous, binary or ordinal (dummy-coded) marginals.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::norm_quantile;
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Continuous { mean: f64, sd: f64 },
    Binary { p: f64 },
    /// Level probabilities; the first level is the reference category.
    Ordinal { probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub marginal: Marginal,
    /// Design-matrix column names produced by this variable.
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    pub variables: Vec<CovariateSpec>,
    /// Latent correlation, one row per variable.
    pub correlation: Vec<Vec<f64>>,
}

impl CovariateModel {
    pub fn column_names(&self) -> Vec<String> {
        self.variables.iter().flat_map(|v| v.columns.iter().cloned()).collect()
    }

    pub fn width(&self) -> usize {
        self.variables.iter().map(|v| v.columns.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.variables.len();
        if self.correlation.len() != d || self.correlation.iter().any(|r| r.len() != d) {
            return Err(Error::Config(format!("correlation matrix must be {d} x {d}")));
        }
        for (i, row) in self.correlation.iter().enumerate() {
            if (row[i] - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("correlation diagonal entry {i} is {}", row[i])));
            }
            for (j, &v) in row.iter().enumerate() {
                if (v - self.correlation[j][i]).abs() > 1e-12 || v.abs() > 1.0 {
                    return Err(Error::Config(format!("correlation entry ({i}, {j}) invalid")));
                }
            }
        }
        for v in &self.variables {
            let (ok, cols) = match &v.marginal {
                Marginal::Continuous { sd, .. } => (*sd > 0.0, 1),
                Marginal::Binary { p } => (*p > 0.0 && *p < 1.0, 1),
                Marginal::Ordinal { probs } => (
                    probs.len() >= 2
                        && probs.iter().all(|&p| p > 0.0)
                        && (probs.iter().sum::<f64>() - 1.0).abs() < 1e-9,
                    probs.len().saturating_sub(1),
                ),
            };
            if !ok || v.columns.len() != cols {
                return Err(Error::Config(format!("invalid marginal for covariate {}", v.name)));
            }
        }
        Ok(())
    }
}

fn dummy(name: &str, levels: &[&str]) -> Vec<String> {
    levels.iter().map(|l| format!("{name} {l}")).collect()
}

/// Default model for the 20 design columns of the simulation coefficient
/// table. Age is centered at 60 years.
pub fn default_covariate_model() -> CovariateModel {
    let var = |name: &str, marginal: Marginal, columns: Vec<String>| CovariateSpec {
        name: name.into(),
        marginal,
        columns,
    };
    let variables = vec![
        var("age", Marginal::Continuous { mean: 0.0, sd: 10.0 }, vec!["age".into()]),
        var(
            "charlson",
            Marginal::Ordinal {
                probs: vec![0.7, 0.2, 0.1],
            },
            vec!["charlson 1".into(), "charlson 2+".into()],
        ),
        var("male", Marginal::Binary { p: 0.6 }, vec!["male".into()]),
        var("low.stage", Marginal::Binary { p: 0.7 }, vec!["low.stage".into()]),
        var("high.grade", Marginal::Binary { p: 0.35 }, vec!["high.grade".into()]),
        var("histology", Marginal::Binary { p: 0.25 }, vec!["histology".into()]),
        var("white", Marginal::Binary { p: 0.85 }, vec!["white".into()]),
        var("hispanic", Marginal::Binary { p: 0.06 }, vec!["hispanic".into()]),
        var(
            "facility",
            Marginal::Ordinal {
                probs: vec![0.1, 0.35, 0.4, 0.15],
            },
            dummy("facility", &["1", "2", "3"]),
        ),
        var(
            "income",
            Marginal::Ordinal {
                probs: vec![0.15, 0.2, 0.25, 0.4],
            },
            dummy("income", &["1", "2", "3"]),
        ),
        var(
            "education",
            Marginal::Ordinal {
                probs: vec![0.15, 0.25, 0.3, 0.3],
            },
            dummy("education", &["1", "2", "3"]),
        ),
        var(
            "insurance",
            Marginal::Ordinal {
                probs: vec![0.4, 0.5, 0.1],
            },
            dummy("insurance", &["1", "2"]),
        ),
    ];
    let d = variables.len();
    let mut r = vec![vec![0.0; d]; d];
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let idx = |n: &str| variables.iter().position(|v| v.name == n).unwrap();
    for (a, b, v) in [
        ("age", "charlson", 0.3),
        ("age", "insurance", 0.45),
        ("age", "low.stage", 0.05),
        ("charlson", "insurance", 0.15),
        ("charlson", "income", -0.1),
        ("low.stage", "high.grade", -0.3),
        ("high.grade", "histology", 0.2),
        ("white", "hispanic", -0.2),
        ("white", "income", 0.2),
        ("income", "education", 0.6),
        ("education", "insurance", -0.1),
        ("facility", "income", 0.1),
        ("facility", "education", 0.1),
    ] {
        let (i, j) = (idx(a), idx(b));
        r[i][j] = v;
        r[j][i] = v;
    }
    CovariateModel {
        variables,
        correlation: r,
    }
}

/// Lower Cholesky factor of `corr`, repairing it to the nearest correlation
/// matrix with eigenvalues >= `floor` when it is not positive definite.
pub fn correlation_factor(corr: &[Vec<f64>], strict: bool) -> Result<(DMatrix<f64>, Option<String>)> {
    let d = corr.len();
    let m = DMatrix::from_fn(d, d, |i, j| corr[i][j]);
    if let Some(ch) = m.clone().cholesky() {
        return Ok((ch.l(), None));
    }
    if strict {
        return Err(Error::Config("latent correlation matrix is not positive definite".into()));
    }
    let eig = SymmetricEigen::new(m);
    let floor = 1e-6;
    let lam = eig.eigenvalues.map(|v| v.max(floor));
    let mut fixed = &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose();
    let diag: Vec<f64> = (0..d).map(|i| fixed[(i, i)].sqrt()).collect();
    for i in 0..d {
        for j in 0..d {
            fixed[(i, j)] /= diag[i] * diag[j];
        }
    }
    let ch = fixed
        .cholesky()
        .ok_or_else(|| Error::Config("correlation repair failed".into()))?;
    Ok((
        ch.l(),
        Some(format!(
            "latent correlation matrix was not positive definite (min eigenvalue {:.3e}); repaired",
            eig.eigenvalues.min()
        )),
    ))
}

/// Draws `n` design rows. Returns the rows and any repair warning.
pub fn gen_covariates(model: &CovariateModel, n: usize, seed: u64, strict: bool) -> Result<(Vec<Vec<f64>>, Option<String>)> {
    model.validate()?;
    let (l, warning) = correlation_factor(&model.correlation, strict)?;
    let d = model.variables.len();
    // category cut points on the latent scale
    let cuts: Vec<Vec<f64>> = model
        .variables
        .iter()
        .map(|v| match &v.marginal {
            Marginal::Continuous { .. } => vec![],
            Marginal::Binary { p } => vec![norm_quantile(1.0 - p)],
            Marginal::Ordinal { probs } => {
                let mut acc = 0.0;
                probs[..probs.len() - 1]
                    .iter()
                    .map(|p| {
                        acc += p;
                        norm_quantile(acc)
                    })
                    .collect()
            }
        })
        .collect();
    let mut rng = stream(seed, Purpose::Covariates, 0);
    let width = model.width();
    let mut e = vec![0.0; d];
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        for v in e.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let mut row = Vec::with_capacity(width);
        for (k, var) in model.variables.iter().enumerate() {
            let latent: f64 = (0..=k).map(|j| l[(k, j)] * e[j]).sum();
            match &var.marginal {
                Marginal::Continuous { mean, sd } => row.push(mean + sd * latent),
                Marginal::Binary { .. } => row.push(if latent > cuts[k][0] { 1.0 } else { 0.0 }),
                Marginal::Ordinal { probs } => {
                    let level = cuts[k].partition_point(|&c| c < latent);
                    for j in 1..probs.len() {
                        row.push(if level == j { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        rows.push(row);
    }
    Ok((rows, warning))
}
