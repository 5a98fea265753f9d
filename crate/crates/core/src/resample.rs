//! Jackknife and bootstrap replicates of the estimated predictor at a point.
//!
//! Bootstrap replicate `b` draws its resample from its own stream
//! `stream_rng(seed, b)`, so results do not depend on the execution strategy
//! or on how many replicates run before it.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MalpError, Result};
use crate::exec::{stream_rng, Execution};
use crate::moments::{sample_moments, sample_moments_of, Dataset, MomentSummary};
use crate::predictor::{predict_from_moments, PredictorKind};

pub const DEFAULT_INTERVAL_REPLICATES: usize = 2000;
pub const DEFAULT_SE_REPLICATES: usize = 200;
pub const DEFAULT_INNER_REPLICATES: usize = 30;

/// Bootstrap sizes and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResamplePlan {
    pub b_outer: usize,
    pub b_inner: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl ResamplePlan {
    pub fn new(b_outer: usize, b_inner: usize, seed: u64) -> Result<Self> {
        if b_outer < 2 {
            return Err(MalpError::invalid("b_outer", "must be at least 2"));
        }
        if b_inner < 2 {
            return Err(MalpError::invalid("b_inner", "must be at least 2"));
        }
        Ok(ResamplePlan {
            b_outer,
            b_inner,
            seed,
            execution: Execution::default(),
        })
    }

    /// B = 2000, B′ = 30.
    pub fn for_intervals(seed: u64) -> Self {
        ResamplePlan::new(DEFAULT_INTERVAL_REPLICATES, DEFAULT_INNER_REPLICATES, seed).unwrap()
    }

    /// B = 200, B′ = 30.
    pub fn for_standard_error(seed: u64) -> Self {
        ResamplePlan::new(DEFAULT_SE_REPLICATES, DEFAULT_INNER_REPLICATES, seed).unwrap()
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Leave-one-out predictions and the resulting standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct JackknifeEstimate {
    pub se: f64,
    pub replicates: Vec<f64>,
}

/// Successful bootstrap replicates, in replicate order, plus the number
/// that failed and were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicates {
    pub values: Vec<f64>,
    pub failed: usize,
}

/// Bootstrap replicates with their inner-bootstrap standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentizedReplicates {
    /// Outer replicates (identical to [`bootstrap_replicates`] for the same plan).
    pub values: Vec<f64>,
    /// Inner standard error of each entry of `values`; `None` when the inner
    /// loop could not produce a positive one.
    pub inner_se: Vec<Option<f64>>,
    pub failed: usize,
}

impl StudentizedReplicates {
    /// `(ŷ_b − estimate) / SE_b` for replicates with a usable inner SE.
    pub fn t_statistics(&self, estimate: f64) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.inner_se)
            .filter_map(|(v, se)| se.map(|se| (v - estimate) / se))
            .collect()
    }

    pub fn t_failures(&self) -> usize {
        self.inner_se.iter().filter(|s| s.is_none()).count()
    }
}

/// Sample standard deviation with divisor `len − 1`; zero for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed * 100 > total {
        Err(MalpError::ExcessiveResampleFailure { failed, total })
    } else {
        Ok(())
    }
}

fn is_degenerate(e: &MalpError) -> bool {
    matches!(
        e,
        MalpError::SingularCovariance | MalpError::DegenerateAgreement { .. } | MalpError::TooFewRows { .. }
    )
}

/// Leave-one-out predictions `ŷ₍ⱼ₎(x0)`, obtained by downdating the full
/// sample moments rather than refitting.
pub fn jackknife_replicates(data: &Dataset, x0: &[f64], kind: PredictorKind) -> Result<Vec<f64>> {
    let p = data.p();
    let n = data.n();
    if n < p + 3 {
        return Err(MalpError::TooFewRows {
            required: p + 3,
            actual: n,
        });
    }
    if x0.len() != p {
        return Err(MalpError::DimensionMismatch {
            expected: p,
            actual: x0.len(),
        });
    }
    let full = sample_moments(data)?;
    let mean = full.joint_mean();
    let scatter = full.joint_cov() * (n as f64 - 1.0);
    let nf = n as f64;
    let mut out = Vec::with_capacity(n);
    let mut dev = vec![0.0; p + 1];
    for k in 0..n {
        for (j, d) in dev.iter_mut().enumerate().take(p) {
            *d = data.x_row(k)[j] - mean[j];
        }
        dev[p] = data.y()[k] - mean[p];
        let m: Vec<f64> = mean.iter().zip(&dev).map(|(m, d)| m - d / (nf - 1.0)).collect();
        let w = nf / (nf - 1.0);
        let cov = DMatrix::from_fn(p + 1, p + 1, |a, b| (scatter[(a, b)] - w * dev[a] * dev[b]) / (nf - 2.0));
        let loo = MomentSummary::from_joint(&m, &cov, Some(n - 1))?;
        out.push(predict_from_moments(&loo, x0, kind)?);
    }
    Ok(out)
}

/// `sqrt(((n−1)/n) Σ (ŷ₍ⱼ₎ − mean)²)`.
pub fn jackknife_se(data: &Dataset, x0: &[f64], kind: PredictorKind) -> Result<JackknifeEstimate> {
    let replicates = jackknife_replicates(data, x0, kind)?;
    Ok(JackknifeEstimate {
        se: jackknife_se_of(&replicates),
        replicates,
    })
}

/// Jackknife standard error of a vector of leave-one-out values.
pub fn jackknife_se_of(replicates: &[f64]) -> f64 {
    let n = replicates.len() as f64;
    let mean = replicates.iter().sum::<f64>() / n;
    ((n - 1.0) / n * replicates.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
}

fn draw_indices(rng: &mut ChaCha8Rng, source: &[usize], buf: &mut Vec<usize>) {
    buf.clear();
    let n = source.len();
    buf.extend((0..n).map(|_| source[rng.random_range(0..n)]));
}

fn replicate_on(data: &Dataset, rows: &[usize], x0: &[f64], kind: PredictorKind) -> Result<Option<f64>> {
    match sample_moments_of(data, rows).and_then(|s| predict_from_moments(&s, x0, kind)) {
        Ok(v) => Ok(Some(v)),
        Err(e) if is_degenerate(&e) => Ok(None),
        Err(e) => Err(e),
    }
}

fn check_point(data: &Dataset, x0: &[f64]) -> Result<()> {
    if x0.len() != data.p() {
        return Err(MalpError::DimensionMismatch {
            expected: data.p(),
            actual: x0.len(),
        });
    }
    Ok(())
}

/// `B` with-replacement bootstrap replicates of `ŷ(x0)`.
///
/// Resamples with a singular predictor covariance or (for the MALP) a
/// vanishing `γ̂` are dropped and counted; more than 1% dropped is an error.
pub fn bootstrap_replicates(data: &Dataset, x0: &[f64], kind: PredictorKind, plan: &ResamplePlan) -> Result<Replicates> {
    check_point(data, x0)?;
    let all: Vec<usize> = (0..data.n()).collect();
    let results = plan.execution.map_indices(plan.b_outer, |b| {
        let mut rng = stream_rng(plan.seed, b as u64);
        let mut rows = Vec::with_capacity(all.len());
        draw_indices(&mut rng, &all, &mut rows);
        replicate_on(data, &rows, x0, kind)
    });
    let mut values = Vec::with_capacity(plan.b_outer);
    let mut failed = 0;
    for r in results {
        match r? {
            Some(v) => values.push(v),
            None => failed += 1,
        }
    }
    check_failures(failed, plan.b_outer)?;
    Ok(Replicates { values, failed })
}

/// Bootstrap standard error, divisor `B − 1`.
pub fn bootstrap_se(data: &Dataset, x0: &[f64], kind: PredictorKind, plan: &ResamplePlan) -> Result<f64> {
    Ok(sample_sd(&bootstrap_replicates(data, x0, kind, plan)?.values))
}

/// Outer replicates plus, for each, the standard error over `B′`
/// sub-resamples drawn from that outer resample.
pub fn studentized_replicates(
    data: &Dataset,
    x0: &[f64],
    kind: PredictorKind,
    plan: &ResamplePlan,
) -> Result<StudentizedReplicates> {
    check_point(data, x0)?;
    let all: Vec<usize> = (0..data.n()).collect();
    let results = plan.execution.map_indices(plan.b_outer, |b| -> Result<Option<(f64, Option<f64>)>> {
        let mut rng = stream_rng(plan.seed, b as u64);
        let mut rows = Vec::with_capacity(all.len());
        draw_indices(&mut rng, &all, &mut rows);
        let Some(value) = replicate_on(data, &rows, x0, kind)? else {
            return Ok(None);
        };
        let mut inner = Vec::with_capacity(plan.b_inner);
        let mut sub = Vec::with_capacity(rows.len());
        for _ in 0..plan.b_inner {
            draw_indices(&mut rng, &rows, &mut sub);
            if let Some(v) = replicate_on(data, &sub, x0, kind)? {
                inner.push(v);
            }
        }
        let se = sample_sd(&inner);
        let usable = inner.len() >= 2 && se > 0.0 && se.is_finite();
        Ok(Some((value, usable.then_some(se))))
    });
    let mut values = Vec::with_capacity(plan.b_outer);
    let mut inner_se = Vec::with_capacity(plan.b_outer);
    let mut failed = 0;
    for r in results {
        match r? {
            Some((v, se)) => {
                values.push(v);
                inner_se.push(se);
            }
            None => failed += 1,
        }
    }
    let out = StudentizedReplicates { values, inner_se, failed };
    check_failures(failed + out.t_failures(), plan.b_outer)?;
    Ok(out)
}
