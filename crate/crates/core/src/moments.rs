//! Sample and population moments, Pearson and concordance correlations,
//! multiple correlation and Mahalanobis distance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{MalpError, Result};

/// `n` observations of `p` predictors and one response.
///
/// Predictors are stored row-major so resampling loops can walk rows
/// without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    p: usize,
    column_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from row-major predictor values.
    pub fn new(x: Vec<f64>, y: Vec<f64>, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(MalpError::invalid("p", "at least one predictor is required"));
        }
        if x.len() != y.len() * p {
            return Err(MalpError::DimensionMismatch {
                expected: y.len() * p,
                actual: x.len(),
            });
        }
        for (i, row) in x.chunks(p).enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(MalpError::NonFinite { row: i, column: j });
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(MalpError::NonFinite { row: i, column: p });
        }
        Ok(Dataset {
            x,
            y,
            p,
            column_names: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.len() != y.len() {
            return Err(MalpError::DimensionMismatch {
                expected: y.len(),
                actual: rows.len(),
            });
        }
        let mut x = Vec::with_capacity(rows.len() * p);
        for row in rows {
            if row.len() != p {
                return Err(MalpError::DimensionMismatch {
                    expected: p,
                    actual: row.len(),
                });
            }
            x.extend_from_slice(row);
        }
        Dataset::new(x, y.to_vec(), p)
    }

    /// Single-predictor convenience constructor.
    pub fn simple(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(MalpError::DimensionMismatch {
                expected: y.len(),
                actual: x.len(),
            });
        }
        Dataset::new(x.to_vec(), y.to_vec(), 1)
    }

    /// Attaches `p + 1` labels (predictors first, response last).
    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p + 1 {
            return Err(MalpError::DimensionMismatch {
                expected: self.p + 1,
                actual: names.len(),
            });
        }
        self.column_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_values(&self) -> &[f64] {
        &self.x
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    /// Rows `indices` (repeats allowed), as a new dataset.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(indices.len() * self.p);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.x_row(i));
            y.push(self.y[i]);
        }
        Dataset {
            x,
            y,
            p: self.p,
            column_names: self.column_names.clone(),
        }
    }

    /// Predictor columns `columns`, keeping every row.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.p) {
            return Err(MalpError::invalid(
                "columns",
                format!("column {bad} out of range for p = {}", self.p),
            ));
        }
        let mut x = Vec::with_capacity(self.n() * columns.len());
        for i in 0..self.n() {
            let row = self.x_row(i);
            x.extend(columns.iter().map(|&c| row[c]));
        }
        let names = self.column_names.as_ref().map(|names| {
            let mut picked: Vec<String> = columns.iter().map(|&c| names[c].clone()).collect();
            picked.push(names[self.p].clone());
            picked
        });
        Ok(Dataset {
            x,
            y: self.y.clone(),
            p: columns.len(),
            column_names: names,
        })
    }
}

/// First and second moments of `(X, Y)`: sample moments when `n` is
/// present, population moments otherwise.
///
/// Construction validates symmetry and positive definiteness of the
/// predictor covariance and keeps its Cholesky factor.
#[derive(Debug, Clone)]
pub struct MomentSummary {
    mean_x: DVector<f64>,
    mean_y: f64,
    cov_xx: DMatrix<f64>,
    cov_xy: DVector<f64>,
    var_y: f64,
    n: Option<usize>,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for MomentSummary {
    fn eq(&self, other: &Self) -> bool {
        self.mean_x == other.mean_x
            && self.mean_y == other.mean_y
            && self.cov_xx == other.cov_xx
            && self.cov_xy == other.cov_xy
            && self.var_y == other.var_y
            && self.n == other.n
    }
}

impl MomentSummary {
    pub fn new(
        mean_x: DVector<f64>,
        mean_y: f64,
        cov_xx: DMatrix<f64>,
        cov_xy: DVector<f64>,
        var_y: f64,
        n: Option<usize>,
    ) -> Result<Self> {
        let p = mean_x.len();
        if p == 0 {
            return Err(MalpError::invalid("mean_x", "at least one predictor is required"));
        }
        if cov_xx.nrows() != p || cov_xx.ncols() != p {
            return Err(MalpError::DimensionMismatch {
                expected: p,
                actual: cov_xx.nrows(),
            });
        }
        if cov_xy.len() != p {
            return Err(MalpError::DimensionMismatch {
                expected: p,
                actual: cov_xy.len(),
            });
        }
        let finite = mean_x.iter().chain(cov_xx.iter()).chain(cov_xy.iter()).all(|v| v.is_finite())
            && mean_y.is_finite()
            && var_y.is_finite();
        if !finite {
            return Err(MalpError::invalid("summary", "non-finite moment"));
        }
        let scale = cov_xx.amax().max(f64::MIN_POSITIVE);
        for i in 0..p {
            for j in (i + 1)..p {
                if (cov_xx[(i, j)] - cov_xx[(j, i)]).abs() > 1e-12 * scale {
                    return Err(MalpError::invalid("cov_xx", "matrix is not symmetric"));
                }
            }
        }
        if !(var_y > 0.0) {
            return Err(MalpError::SingularCovariance);
        }
        if let Some(n) = n {
            if n < p + 2 {
                return Err(MalpError::TooFewRows {
                    required: p + 2,
                    actual: n,
                });
            }
        }
        let chol = Cholesky::new(cov_xx.clone()).ok_or(MalpError::SingularCovariance)?;
        Ok(MomentSummary {
            mean_x,
            mean_y,
            cov_xx,
            cov_xy,
            var_y,
            n,
            chol,
        })
    }

    /// Splits a joint mean and `(p+1)×(p+1)` covariance whose last
    /// coordinate is the response.
    pub fn from_joint(mean: &[f64], cov: &DMatrix<f64>, n: Option<usize>) -> Result<Self> {
        let q = mean.len();
        if q < 2 {
            return Err(MalpError::invalid("mean", "need at least one predictor and a response"));
        }
        if cov.nrows() != q || cov.ncols() != q {
            return Err(MalpError::DimensionMismatch {
                expected: q,
                actual: cov.nrows(),
            });
        }
        let p = q - 1;
        MomentSummary::new(
            DVector::from_column_slice(&mean[..p]),
            mean[p],
            cov.view((0, 0), (p, p)).into_owned(),
            cov.view((0, p), (p, 1)).column(0).into_owned(),
            cov[(p, p)],
            n,
        )
    }

    pub fn p(&self) -> usize {
        self.mean_x.len()
    }
    pub fn mean_x(&self) -> &DVector<f64> {
        &self.mean_x
    }
    pub fn mean_y(&self) -> f64 {
        self.mean_y
    }
    pub fn cov_xx(&self) -> &DMatrix<f64> {
        &self.cov_xx
    }
    pub fn cov_xy(&self) -> &DVector<f64> {
        &self.cov_xy
    }
    pub fn var_y(&self) -> f64 {
        self.var_y
    }
    pub fn n(&self) -> Option<usize> {
        self.n
    }

    /// Lower-triangular Cholesky factor of `cov_xx`.
    pub fn cov_xx_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `cov_xx⁻¹ v`.
    pub fn solve_xx(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    /// Regression slope vector `cov_xx⁻¹ cov_xy`.
    pub fn regression_slope(&self) -> DVector<f64> {
        self.chol.solve(&self.cov_xy)
    }

    /// Joint `(p+1)`-dimensional mean, response last.
    pub fn joint_mean(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.mean_x.iter().copied().collect();
        m.push(self.mean_y);
        m
    }

    /// Joint `(p+1)×(p+1)` covariance, response last.
    pub fn joint_cov(&self) -> DMatrix<f64> {
        let p = self.p();
        let mut c = DMatrix::zeros(p + 1, p + 1);
        c.view_mut((0, 0), (p, p)).copy_from(&self.cov_xx);
        for j in 0..p {
            c[(j, p)] = self.cov_xy[j];
            c[(p, j)] = self.cov_xy[j];
        }
        c[(p, p)] = self.var_y;
        c
    }

    /// Same summary with the sample size dropped (treated as population).
    pub fn as_population(&self) -> MomentSummary {
        MomentSummary {
            n: None,
            ..self.clone()
        }
    }
}

/// Parameters of a bivariate normal `(X, Y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
}

impl BivariateParams {
    /// The three reference parameter sets used by the predictive
    /// comparison and fixed-location experiments.
    pub const REFERENCE_SETS: [BivariateParams; 3] = [
        BivariateParams { mu_x: 5.0, mu_y: 5.0, sigma_x: 2.0, sigma_y: 4.0, rho: 0.816 },
        BivariateParams { mu_x: 8.0, mu_y: 4.0, sigma_x: 3.0, sigma_y: 3.0, rho: 0.5 },
        BivariateParams { mu_x: 9.0, mu_y: 1.0, sigma_x: 4.0, sigma_y: 2.0, rho: 0.3 },
    ];

    pub fn with_rho(self, rho: f64) -> Self {
        BivariateParams { rho, ..self }
    }

    pub fn summary(&self) -> Result<MomentSummary> {
        MomentSummary::new(
            DVector::from_element(1, self.mu_x),
            self.mu_y,
            DMatrix::from_element(1, 1, self.sigma_x * self.sigma_x),
            DVector::from_element(1, self.rho * self.sigma_x * self.sigma_y),
            self.sigma_y * self.sigma_y,
            None,
        )
    }
}

/// Sample moments with divisor `n − 1` for every second moment.
pub fn sample_moments(data: &Dataset) -> Result<MomentSummary> {
    moments_of_rows(data, 0..data.n(), data.n())
}

/// Sample moments of the rows listed in `rows` (repeats allowed).
pub fn sample_moments_of(data: &Dataset, rows: &[usize]) -> Result<MomentSummary> {
    moments_of_rows(data, rows.iter().copied(), rows.len())
}

fn moments_of_rows<I>(data: &Dataset, rows: I, n: usize) -> Result<MomentSummary>
where
    I: Iterator<Item = usize> + Clone,
{
    let p = data.p();
    if n < p + 2 {
        return Err(MalpError::TooFewRows {
            required: p + 2,
            actual: n,
        });
    }
    let q = p + 1;
    let mut mean = vec![0.0; q];
    for i in rows.clone() {
        for (m, v) in mean.iter_mut().zip(data.x_row(i)) {
            *m += v;
        }
        mean[p] += data.y[i];
    }
    let nf = n as f64;
    mean.iter_mut().for_each(|m| *m /= nf);

    let mut cross = DMatrix::<f64>::zeros(q, q);
    let mut centered = vec![0.0; q];
    for i in rows {
        for (c, (v, m)) in centered.iter_mut().zip(data.x_row(i).iter().zip(&mean)) {
            *c = v - m;
        }
        centered[p] = data.y[i] - mean[p];
        for a in 0..q {
            for b in a..q {
                cross[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..q {
        for b in a..q {
            let v = cross[(a, b)] / (nf - 1.0);
            cross[(a, b)] = v;
            cross[(b, a)] = v;
        }
    }
    MomentSummary::from_joint(&mean, &cross, Some(n))
}

fn mean_var_cov(y: &[f64], z: &[f64]) -> Result<(f64, f64, f64, f64, f64)> {
    if y.len() != z.len() {
        return Err(MalpError::DimensionMismatch {
            expected: y.len(),
            actual: z.len(),
        });
    }
    if y.len() < 2 {
        return Err(MalpError::TooFewRows {
            required: 2,
            actual: y.len(),
        });
    }
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mz = z.iter().sum::<f64>() / n;
    let (mut syy, mut szz, mut syz) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(z) {
        let (dy, dz) = (a - my, b - mz);
        syy += dy * dy;
        szz += dz * dz;
        syz += dy * dz;
    }
    let d = n - 1.0;
    Ok((my, mz, syy / d, szz / d, syz / d))
}

/// Pearson correlation coefficient.
pub fn pcc(y: &[f64], z: &[f64]) -> Result<f64> {
    let (_, _, syy, szz, syz) = mean_var_cov(y, z)?;
    if syy <= 0.0 || szz <= 0.0 {
        return Err(MalpError::ZeroVariance);
    }
    Ok((syz / (syy * szz).sqrt()).clamp(-1.0, 1.0))
}

/// Lin's concordance correlation coefficient,
/// `2 s_yz / (s_y² + s_z² + (ȳ − z̄)²)` with `n − 1` divisors.
pub fn ccc(y: &[f64], z: &[f64]) -> Result<f64> {
    let (my, mz, syy, szz, syz) = mean_var_cov(y, z)?;
    if syy <= 0.0 && szz <= 0.0 {
        return Err(MalpError::DegenerateInput);
    }
    let denom = syy + szz + (my - mz) * (my - mz);
    Ok((2.0 * syz / denom).clamp(-1.0, 1.0))
}

/// Population CCC between `X` and `Y` for a single-predictor summary.
pub fn population_ccc(summary: &MomentSummary) -> Result<f64> {
    if summary.p() != 1 {
        return Err(MalpError::DimensionMismatch {
            expected: 1,
            actual: summary.p(),
        });
    }
    let dm = summary.mean_x[0] - summary.mean_y;
    Ok(2.0 * summary.cov_xy[0] / (summary.cov_xx[(0, 0)] + summary.var_y + dm * dm))
}

/// Squared multiple correlation `Σ_YX Σ_XX⁻¹ Σ_XY / σ_Y²`, clamped to `[0, 1]`.
pub fn multiple_correlation_sq(summary: &MomentSummary) -> f64 {
    let slope = summary.regression_slope();
    (summary.cov_xy.dot(&slope) / summary.var_y).clamp(0.0, 1.0)
}

/// Multiple correlation γ; equals `|R_XY|` when `p = 1`.
pub fn multiple_correlation(summary: &MomentSummary) -> f64 {
    multiple_correlation_sq(summary).sqrt()
}

/// Squared Mahalanobis distance of `x0` from the predictor mean.
pub fn mahalanobis_sq(x0: &[f64], summary: &MomentSummary) -> Result<f64> {
    if x0.len() != summary.p() {
        return Err(MalpError::DimensionMismatch {
            expected: summary.p(),
            actual: x0.len(),
        });
    }
    let d = DVector::from_column_slice(x0) - &summary.mean_x;
    Ok(d.dot(&summary.solve_xx(&d)).max(0.0))
}
