//! Asymptotic variance of the estimated MALP and LSLP.
//!
//! Three routes are provided: the closed forms valid under multivariate
//! normality, a U-statistic plug-in estimate of the moment covariance, and
//! the delta method combining the latter with the gradient of the map from
//! moments to prediction.
//!
//! Moment vectors use a fixed VECH layout of length `(p+4)(p+1)/2`:
//!
//! | block | entries | meaning |
//! |---|---|---|
//! | `0..p` | `p` | predictor means |
//! | `p` | 1 | response mean |
//! | next `p(p+1)/2` | `(j, l)` for `j ≤ l`, row-major | predictor covariances |
//! | next `p` | `j` | predictor/response covariances |
//! | last | 1 | response variance |

use nalgebra::{DMatrix, DVector};

use crate::error::{MalpError, Result};
use crate::moments::{multiple_correlation, sample_moments, Dataset, MomentSummary};
use crate::predictor::{predict_from_moments, PredictorKind, GAMMA_TOLERANCE};

/// Below this `γ̂` the delta method is refused: for `p = 1` the MALP
/// contains `Sgn(R_XY)`, which has no derivative at zero.
pub const DELTA_GAMMA_TOLERANCE: f64 = 1e-6;

/// Length of the moment vector for `p` predictors.
pub fn kernel_len(p: usize) -> usize {
    (p + 4) * (p + 1) / 2
}

/// A moment-layout vector: a kernel evaluation, a U-statistic or θ itself.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelVector {
    p: usize,
    entries: Vec<f64>,
}

impl KernelVector {
    pub fn from_entries(p: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != kernel_len(p) {
            return Err(MalpError::DimensionMismatch {
                expected: kernel_len(p),
                actual: entries.len(),
            });
        }
        Ok(KernelVector { p, entries })
    }

    fn zeros(p: usize) -> Self {
        KernelVector {
            p,
            entries: vec![0.0; kernel_len(p)],
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
    pub fn into_entries(self) -> Vec<f64> {
        self.entries
    }

    pub fn mean_x_index(&self, j: usize) -> usize {
        j
    }
    pub fn mean_y_index(&self) -> usize {
        self.p
    }
    /// Index of the `(j, l)` predictor covariance (either order).
    pub fn cov_xx_index(&self, j: usize, l: usize) -> usize {
        let (j, l) = if j <= l { (j, l) } else { (l, j) };
        self.p + 1 + upper_offset(self.p, j) + (l - j)
    }
    pub fn cov_xy_index(&self, j: usize) -> usize {
        self.p + 1 + self.p * (self.p + 1) / 2 + j
    }
    pub fn var_y_index(&self) -> usize {
        self.entries.len() - 1
    }

    /// θ for a moment summary (T when the summary is a sample summary).
    pub fn from_summary(summary: &MomentSummary) -> Self {
        let p = summary.p();
        let mut v = KernelVector::zeros(p);
        for j in 0..p {
            v.entries[j] = summary.mean_x()[j];
        }
        v.entries[p] = summary.mean_y();
        for j in 0..p {
            for l in j..p {
                let i = v.cov_xx_index(j, l);
                v.entries[i] = summary.cov_xx()[(j, l)];
            }
        }
        for j in 0..p {
            let i = v.cov_xy_index(j);
            v.entries[i] = summary.cov_xy()[j];
        }
        let last = v.var_y_index();
        v.entries[last] = summary.var_y();
        v
    }

    /// Moment summary (population, no `n`) encoded by this vector.
    pub fn to_summary(&self) -> Result<MomentSummary> {
        let p = self.p;
        let mean_x = DVector::from_column_slice(&self.entries[..p]);
        let mut cov = DMatrix::zeros(p, p);
        for j in 0..p {
            for l in j..p {
                let v = self.entries[self.cov_xx_index(j, l)];
                cov[(j, l)] = v;
                cov[(l, j)] = v;
            }
        }
        let cov_xy = DVector::from_fn(p, |j, _| self.entries[self.cov_xy_index(j)]);
        MomentSummary::new(mean_x, self.entries[p], cov, cov_xy, self.entries[self.var_y_index()], None)
    }
}

/// Number of upper-triangle entries in rows before `j`.
fn upper_offset(p: usize, j: usize) -> usize {
    j * p - j * j.saturating_sub(1) / 2
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(MalpError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// Symmetric order-two kernel whose expectation is θ.
pub fn kernel_h(obs1: (&[f64], f64), obs2: (&[f64], f64)) -> Result<KernelVector> {
    let (x1, y1) = obs1;
    let (x2, y2) = obs2;
    check_dims(x1, x2)?;
    let p = x1.len();
    let mut h = KernelVector::zeros(p);
    for j in 0..p {
        h.entries[j] = (x1[j] + x2[j]) / 2.0;
    }
    h.entries[p] = (y1 + y2) / 2.0;
    let dy = y1 - y2;
    for j in 0..p {
        let dj = x1[j] - x2[j];
        for l in j..p {
            let i = h.cov_xx_index(j, l);
            h.entries[i] = dj * (x1[l] - x2[l]) / 2.0;
        }
        let i = h.cov_xy_index(j);
        h.entries[i] = dj * dy / 2.0;
    }
    let last = h.var_y_index();
    h.entries[last] = dy * dy / 2.0;
    Ok(h)
}

/// Conditional kernel `E[h((x, y), (X₂, Y₂))]`, which depends on the
/// distribution only through θ.
pub fn kernel_h_tilde(obs: (&[f64], f64), theta: &KernelVector) -> Result<KernelVector> {
    let (x, y) = obs;
    let p = theta.p;
    if x.len() != p {
        return Err(MalpError::DimensionMismatch {
            expected: p,
            actual: x.len(),
        });
    }
    let t = &theta.entries;
    let mut h = KernelVector::zeros(p);
    for j in 0..p {
        h.entries[j] = (x[j] + t[j]) / 2.0;
    }
    h.entries[p] = (y + t[p]) / 2.0;
    let dy = y - t[p];
    for j in 0..p {
        let dj = x[j] - t[j];
        for l in j..p {
            let i = h.cov_xx_index(j, l);
            h.entries[i] = (dj * (x[l] - t[l]) + t[i]) / 2.0;
        }
        let i = h.cov_xy_index(j);
        h.entries[i] = (dj * dy + t[i]) / 2.0;
    }
    let last = h.var_y_index();
    h.entries[last] = (dy * dy + t[last]) / 2.0;
    Ok(h)
}

fn admissible_gamma(gamma: f64) -> Result<()> {
    if !(GAMMA_TOLERANCE..1.0).contains(&gamma) {
        Err(MalpError::DegenerateAgreement { gamma })
    } else {
        Ok(())
    }
}

/// Asymptotic variance factor `σ²(x0)` (variance of the estimate is
/// `σ²(x0)/n`) under multivariate normality.
pub fn avar_normal(summary: &MomentSummary, x0: &[f64], kind: PredictorKind) -> Result<f64> {
    if x0.len() != summary.p() {
        return Err(MalpError::DimensionMismatch {
            expected: summary.p(),
            actual: x0.len(),
        });
    }
    let gamma = multiple_correlation(summary);
    admissible_gamma(gamma)?;
    let d = DVector::from_column_slice(x0) - summary.mean_x();
    let maha = d.dot(&summary.solve_xx(&d));
    let var_y = summary.var_y();
    let g2 = gamma * gamma;
    let cond = var_y * (1.0 - g2);
    Ok(match kind {
        PredictorKind::Lslp => cond * (1.0 + maha),
        PredictorKind::Malp => {
            let proj = summary.regression_slope().dot(&d);
            cond * (2.0 / (1.0 + gamma) + maha / g2 - (1.0 - g2) / (var_y * g2 * g2) * proj * proj)
        }
    })
}

/// Single-predictor closed form
/// `σ_Y²(1−ρ²)[2/(1+|ρ|) + ((x0−μ_X)/σ_X)²]` for the MALP.
pub fn avar_normal_simple_malp(sigma_x: f64, sigma_y: f64, rho: f64, x0_offset: f64) -> f64 {
    let z = x0_offset / sigma_x;
    sigma_y * sigma_y * (1.0 - rho * rho) * (2.0 / (1.0 + rho.abs()) + z * z)
}

/// Plug-in estimate of `4Σ_h`, the asymptotic covariance of `√n (T − θ)`.
///
/// `h̃` is evaluated at every observation with θ replaced by T, and the
/// covariance of the `n` vectors is taken with divisor `n`.
pub fn ustat_sigma_h(data: &Dataset) -> Result<DMatrix<f64>> {
    let p = data.p();
    let n = data.n();
    if n < p + 3 {
        return Err(MalpError::TooFewRows {
            required: p + 3,
            actual: n,
        });
    }
    let theta = KernelVector::from_summary(&sample_moments(data)?);
    ustat_sigma_h_at(data, &theta)
}

fn ustat_sigma_h_at(data: &Dataset, theta: &KernelVector) -> Result<DMatrix<f64>> {
    let k = kernel_len(data.p());
    let n = data.n();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| kernel_h_tilde((data.x_row(i), data.y()[i]), theta).map(KernelVector::into_entries))
        .collect::<Result<_>>()?;
    let nf = n as f64;
    let mut mean = vec![0.0; k];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / nf;
        }
    }
    let mut cov = DMatrix::zeros(k, k);
    for r in &rows {
        for a in 0..k {
            let da = r[a] - mean[a];
            for b in a..k {
                cov[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            let v = 4.0 * cov[(a, b)] / nf;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

/// The map from a moment vector to the prediction at `x0`.
pub fn prediction_map(theta: &KernelVector, x0: &[f64], kind: PredictorKind) -> Result<f64> {
    predict_from_moments(&theta.to_summary()?, x0, kind)
}

/// Analytic gradient of the prediction map for `p = 1`, in the layout
/// `(μ_X, μ_Y, σ_X², σ_XY, σ_Y²)`.
pub fn simple_gradient(theta: &KernelVector, x0: f64, kind: PredictorKind) -> Result<[f64; 5]> {
    if theta.p != 1 {
        return Err(MalpError::DimensionMismatch {
            expected: 1,
            actual: theta.p,
        });
    }
    let t = &theta.entries;
    let (mu_x, var_x, cov_xy, var_y) = (t[0], t[2], t[3], t[4]);
    let dx = x0 - mu_x;
    Ok(match kind {
        PredictorKind::Malp => {
            let s = cov_xy.signum();
            let (sx, sy) = (var_x.sqrt(), var_y.sqrt());
            [-s * sy / sx, 1.0, -dx * s * sy / (2.0 * sx * var_x), 0.0, dx * s / (2.0 * sx * sy)]
        }
        PredictorKind::Lslp => [-cov_xy / var_x, 1.0, -dx * cov_xy / (var_x * var_x), dx / var_x, 0.0],
    })
}

/// Central finite-difference gradient of the prediction map with step
/// `max(1e-6·|θ_i|, 1e-8)` per coordinate.
pub fn numerical_gradient(theta: &KernelVector, x0: &[f64], kind: PredictorKind) -> Result<Vec<f64>> {
    let mut grad = Vec::with_capacity(theta.entries.len());
    let mut probe = theta.clone();
    for i in 0..theta.entries.len() {
        let h = (1e-6 * theta.entries[i].abs()).max(1e-8);
        probe.entries[i] = theta.entries[i] + h;
        let up = prediction_map(&probe, x0, kind).map_err(|_| MalpError::NumericalGradientFailure)?;
        probe.entries[i] = theta.entries[i] - h;
        let down = prediction_map(&probe, x0, kind).map_err(|_| MalpError::NumericalGradientFailure)?;
        probe.entries[i] = theta.entries[i];
        let g = (up - down) / (2.0 * h);
        if !g.is_finite() {
            return Err(MalpError::NumericalGradientFailure);
        }
        grad.push(g);
    }
    Ok(grad)
}

/// Delta-method estimate of `σ²(x0)` for a distribution-free setting:
/// `∇g(T)ᵀ (4Σ̂_h) ∇g(T)`.
pub fn delta_method_avar(data: &Dataset, x0: &[f64], kind: PredictorKind) -> Result<f64> {
    let summary = sample_moments(data)?;
    if x0.len() != summary.p() {
        return Err(MalpError::DimensionMismatch {
            expected: summary.p(),
            actual: x0.len(),
        });
    }
    let gamma = multiple_correlation(&summary);
    if gamma < DELTA_GAMMA_TOLERANCE {
        return Err(MalpError::DegenerateAgreement { gamma });
    }
    let theta = KernelVector::from_summary(&summary);
    let grad = if summary.p() == 1 {
        simple_gradient(&theta, x0[0], kind)?.to_vec()
    } else {
        numerical_gradient(&theta, x0, kind)?
    };
    let cov = ustat_sigma_h_at(data, &theta)?;
    let g = DVector::from_vec(grad);
    Ok(g.dot(&(cov * &g)))
}
