//! Multivariate normal sampling and the Monte Carlo experiment drivers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::avar::avar_normal;
use crate::error::{MalpError, Result};
use crate::exec::{derive_seed, stream_rng, Execution};
use crate::intervals::{coverage_probe_many, CiMethod, CoverageCell};
use crate::metrics::{holdout_triples, MetricSummary, TripleSummary};
use crate::moments::{multiple_correlation, sample_moments, BivariateParams, Dataset, MomentSummary};
use crate::predictor::{population_lslp, population_malp, predictor_from, PredictorKind};
use crate::resample::{sample_sd, ResamplePlan};

/// Draws from `N(mean, cov)` as `mean + L z` with `L` the lower Cholesky
/// factor. The last coordinate is the response.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d < 2 {
            return Err(MalpError::DimensionMismatch { expected: 2, actual: d });
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(MalpError::DimensionMismatch {
                expected: d,
                actual: cov.nrows(),
            });
        }
        let chol = cov.clone().cholesky().ok_or(MalpError::SingularCovariance)?;
        Ok(MvnSampler {
            mean: DVector::from_column_slice(mean),
            factor: chol.l(),
        })
    }

    pub fn from_summary(summary: &MomentSummary) -> Result<Self> {
        MvnSampler::new(&summary.joint_mean(), &summary.joint_cov())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `n` joint draws from stream `stream_rng(seed, 0)`.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let d = self.dim();
        let p = d - 1;
        let mut rng = stream_rng(seed, 0);
        let mut x = Vec::with_capacity(n * p);
        let mut y = Vec::with_capacity(n);
        let mut z = DVector::zeros(d);
        for _ in 0..n {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let draw = &self.mean + &self.factor * &z;
            x.extend(draw.iter().take(p));
            y.push(draw[p]);
        }
        Dataset::new(x, y, p).expect("normal draws are finite")
    }
}

/// `n` draws from `N(mean, cov)`, response last.
pub fn mvn_sample(mean: &[f64], cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<Dataset> {
    Ok(MvnSampler::new(mean, cov)?.sample(n, seed))
}

/// `μ + σ Φ⁻¹(k/10)` for `k = 1..9`, mirrored so the points are exactly
/// symmetric about `μ`.
pub fn decile_points(mu: f64, sigma: f64) -> Result<[f64; 9]> {
    if !(sigma > 0.0) {
        return Err(MalpError::invalid("sigma", "must be positive"));
    }
    let norm = Normal::new(0.0, 1.0).unwrap();
    let mut out = [mu; 9];
    for k in 1..=4 {
        let q = norm.inverse_cdf(k as f64 / 10.0);
        out[k - 1] = mu + sigma * q;
        out[9 - k] = mu - sigma * q;
    }
    Ok(out)
}

/// Points `μ_X + t u` at squared Mahalanobis distances `distances` along
/// the direction `u ∝ direction` (p = 2).
pub fn contour_points_along(summary: &MomentSummary, distances: &[f64], direction: [f64; 2]) -> Result<Vec<[f64; 2]>> {
    if summary.p() != 2 {
        return Err(MalpError::DimensionMismatch {
            expected: 2,
            actual: summary.p(),
        });
    }
    let norm = direction[0].hypot(direction[1]);
    if !(norm > 0.0) {
        return Err(MalpError::invalid("direction", "must be nonzero"));
    }
    let u = DVector::from_column_slice(&[direction[0] / norm, direction[1] / norm]);
    let quad = u.dot(&summary.solve_xx(&u));
    distances
        .iter()
        .map(|&d| {
            if d < 0.0 {
                return Err(MalpError::invalid("distances", "must be nonnegative"));
            }
            let t = (d / quad).sqrt();
            Ok([summary.mean_x()[0] + t * u[0], summary.mean_x()[1] + t * u[1]])
        })
        .collect()
}

/// As [`contour_points_along`] with a random positive slope `u₁/u₂` from
/// two seeded uniforms.
pub fn contour_points(summary: &MomentSummary, distances: &[f64], slope_seed: u64) -> Result<Vec<[f64; 2]>> {
    let mut rng = stream_rng(slope_seed, 0);
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    contour_points_along(summary, distances, [u2, u1])
}

/// Histogram with equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub const MIN_HISTOGRAM_BINS: usize = 20;
const MAX_HISTOGRAM_BINS: usize = 500;

impl Histogram {
    /// Freedman–Diaconis bin width, with at least [`MIN_HISTOGRAM_BINS`] bins.
    pub fn freedman_diaconis(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n == 0 {
            return Histogram {
                edges: vec![],
                counts: vec![],
            };
        }
        let (lo, hi) = (s[0], s[n - 1]);
        let summary = MetricSummary::of(&s);
        let iqr = summary.q75 - summary.q25;
        let range = hi - lo;
        let bins = if range > 0.0 && iqr > 0.0 {
            let width = 2.0 * iqr / (n as f64).cbrt();
            ((range / width).ceil() as usize).clamp(MIN_HISTOGRAM_BINS, MAX_HISTOGRAM_BINS)
        } else {
            MIN_HISTOGRAM_BINS
        };
        let (lo, range) = if range > 0.0 { (lo, range) } else { (lo - 0.5, 1.0) };
        let width = range / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0; bins];
        for v in &s {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Histogram { edges, counts }
    }
}

/// Sarle's bimodality coefficient `(g₁² + 1) / (g₂ + 3(n−1)²/((n−2)(n−3)))`
/// with sample-adjusted skewness `g₁` and excess kurtosis `g₂`. Values above
/// [`BIMODALITY_THRESHOLD`] suggest bi- or multimodality.
pub fn bimodality_coefficient(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if n < 4.0 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let g1 = m3 / m2.powf(1.5) * (n * (n - 1.0)).sqrt() / (n - 2.0);
    let g2 = ((n + 1.0) * (m4 / (m2 * m2) - 3.0) + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0));
    (g1 * g1 + 1.0) / (g2 + 3.0 * (n - 1.0).powi(2) / ((n - 2.0) * (n - 3.0)))
}

/// The value of the coefficient for a uniform distribution.
pub const BIMODALITY_THRESHOLD: f64 = 5.0 / 9.0;

/// Joint mean and covariance of `(X, Y)`, response last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl TruthSpec {
    pub fn from_summary(summary: &MomentSummary) -> Self {
        let c = summary.joint_cov();
        TruthSpec {
            mean: summary.joint_mean(),
            cov: (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect(),
        }
    }

    pub fn bivariate(params: &BivariateParams) -> Result<Self> {
        Ok(TruthSpec::from_summary(&params.summary()?))
    }

    pub fn summary(&self) -> Result<MomentSummary> {
        let d = self.mean.len();
        if self.cov.len() != d || self.cov.iter().any(|r| r.len() != d) {
            return Err(MalpError::DimensionMismatch {
                expected: d,
                actual: self.cov.len(),
            });
        }
        let cov = DMatrix::from_fn(d, d, |i, j| self.cov[i][j]);
        MomentSummary::from_joint(&self.mean, &cov, None)
    }

    /// Same marginals with the cross-covariance changed so that the
    /// correlation equals `target`: `ρ` itself for one predictor (sign
    /// allowed), otherwise `γ ∈ (0, 1)` by rescaling `Σ_XY`.
    pub fn with_correlation(&self, target: f64) -> Result<Self> {
        let s = self.summary()?;
        let p = s.p();
        let cov_xy = if p == 1 {
            if !(target.abs() < 1.0) {
                return Err(MalpError::invalid("correlation_grid", "|ρ| must be below 1"));
            }
            DVector::from_element(1, target * (s.cov_xx()[(0, 0)] * s.var_y()).sqrt())
        } else {
            if !(target > 0.0 && target < 1.0) {
                return Err(MalpError::invalid("correlation_grid", "γ must lie in (0, 1)"));
            }
            let gamma = multiple_correlation(&s);
            if gamma < crate::predictor::GAMMA_TOLERANCE {
                return Err(MalpError::DegenerateAgreement { gamma });
            }
            s.cov_xy() * (target / gamma)
        };
        let changed = MomentSummary::new(
            s.mean_x().clone(),
            s.mean_y(),
            s.cov_xx().clone(),
            cov_xy,
            s.var_y(),
            None,
        )?;
        Ok(TruthSpec::from_summary(&changed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SamplingDistribution,
    PredictiveComparison,
    Coverage,
    FixedLocations,
}

impl std::str::FromStr for Experiment {
    type Err = MalpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampling-distribution" | "sampling" => Ok(Experiment::SamplingDistribution),
            "predictive-comparison" | "predictive" => Ok(Experiment::PredictiveComparison),
            "coverage" => Ok(Experiment::Coverage),
            "fixed-locations" => Ok(Experiment::FixedLocations),
            _ => Err(MalpError::invalid("experiment", format!("unknown experiment `{s}`"))),
        }
    }
}

/// Where predictions are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionPoints {
    /// The nine deciles of the predictor's marginal (one predictor).
    Deciles,
    /// `μ_X + k σ_X` for each offset `k` (one predictor).
    StdOffsets(Vec<f64>),
    /// Squared Mahalanobis distances along a seeded random ray (two predictors).
    MahalanobisContour { distances: Vec<f64>, slope_seed: u64 },
    Explicit(Vec<Vec<f64>>),
}

impl PredictionPoints {
    pub fn resolve(&self, summary: &MomentSummary) -> Result<Vec<Vec<f64>>> {
        let one_predictor = |summary: &MomentSummary| -> Result<(f64, f64)> {
            if summary.p() != 1 {
                return Err(MalpError::DimensionMismatch {
                    expected: 1,
                    actual: summary.p(),
                });
            }
            Ok((summary.mean_x()[0], summary.cov_xx()[(0, 0)].sqrt()))
        };
        match self {
            PredictionPoints::Deciles => {
                let (mu, sigma) = one_predictor(summary)?;
                Ok(decile_points(mu, sigma)?.iter().map(|v| vec![*v]).collect())
            }
            PredictionPoints::StdOffsets(offsets) => {
                let (mu, sigma) = one_predictor(summary)?;
                Ok(offsets.iter().map(|k| vec![mu + k * sigma]).collect())
            }
            PredictionPoints::MahalanobisContour { distances, slope_seed } => Ok(contour_points(summary, distances, *slope_seed)?
                .into_iter()
                .map(|p| p.to_vec())
                .collect()),
            PredictionPoints::Explicit(points) => {
                if let Some(bad) = points.iter().find(|x| x.len() != summary.p()) {
                    return Err(MalpError::DimensionMismatch {
                        expected: summary.p(),
                        actual: bad.len(),
                    });
                }
                Ok(points.clone())
            }
        }
    }
}

/// Everything that determines a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub experiment: Experiment,
    pub truths: Vec<TruthSpec>,
    pub n_grid: Vec<usize>,
    /// Correlation targets applied to every truth; empty keeps each as given.
    pub correlation_grid: Vec<f64>,
    pub mreps: usize,
    pub points: PredictionPoints,
    /// Size of the fresh evaluation sample (predictive comparison).
    pub test_size: usize,
    pub methods: Vec<CiMethod>,
    pub level: f64,
    pub b_outer: usize,
    pub b_inner: usize,
    pub seed: u64,
}

/// `μ = (2, 3, 1)` with the predictor/response covariance used for the
/// two-predictor coverage study (γ ≈ 0.5).
pub fn coverage_truth() -> TruthSpec {
    TruthSpec {
        mean: vec![2.0, 3.0, 1.0],
        cov: vec![vec![4.1, -0.5, 1.1], vec![-0.5, 2.8, 0.6], vec![1.1, 0.6, 2.0]],
    }
}

/// Prediction point of the coverage study (squared distance ≈ 5.071).
pub const COVERAGE_POINT: [f64; 2] = [3.177, 6.457];

impl SimulationConfig {
    pub fn sampling_distribution(seed: u64) -> Self {
        SimulationConfig {
            experiment: Experiment::SamplingDistribution,
            truths: vec![TruthSpec::bivariate(&BivariateParams::REFERENCE_SETS[0]).unwrap()],
            n_grid: vec![30, 50, 200],
            correlation_grid: vec![0.05, 0.5, 0.9],
            mreps: 2000,
            points: PredictionPoints::Deciles,
            test_size: 0,
            methods: vec![],
            level: 0.95,
            b_outer: 2,
            b_inner: 2,
            seed,
        }
    }

    pub fn predictive_comparison(seed: u64) -> Self {
        SimulationConfig {
            experiment: Experiment::PredictiveComparison,
            truths: BivariateParams::REFERENCE_SETS
                .iter()
                .map(|p| TruthSpec::bivariate(p).unwrap())
                .collect(),
            n_grid: vec![100],
            correlation_grid: vec![],
            mreps: 2000,
            points: PredictionPoints::Explicit(vec![]),
            test_size: 100,
            methods: vec![],
            level: 0.95,
            b_outer: 2,
            b_inner: 2,
            seed,
        }
    }

    pub fn coverage(seed: u64) -> Self {
        SimulationConfig {
            experiment: Experiment::Coverage,
            truths: vec![coverage_truth()],
            n_grid: vec![50, 100, 200],
            correlation_grid: vec![],
            mreps: 10_000,
            points: PredictionPoints::Explicit(vec![COVERAGE_POINT.to_vec()]),
            test_size: 0,
            methods: CiMethod::ALL.to_vec(),
            level: 0.95,
            b_outer: 2000,
            b_inner: 30,
            seed,
        }
    }

    pub fn fixed_locations(seed: u64) -> Self {
        SimulationConfig {
            experiment: Experiment::FixedLocations,
            truths: BivariateParams::REFERENCE_SETS
                .iter()
                .map(|p| TruthSpec::bivariate(p).unwrap())
                .collect(),
            n_grid: vec![100],
            correlation_grid: vec![],
            mreps: 2000,
            points: PredictionPoints::StdOffsets(vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]),
            test_size: 0,
            methods: vec![],
            level: 0.95,
            b_outer: 2,
            b_inner: 2,
            seed,
        }
    }

    pub fn default_for(experiment: Experiment, seed: u64) -> Self {
        match experiment {
            Experiment::SamplingDistribution => Self::sampling_distribution(seed),
            Experiment::PredictiveComparison => Self::predictive_comparison(seed),
            Experiment::Coverage => Self::coverage(seed),
            Experiment::FixedLocations => Self::fixed_locations(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mreps < 100 {
            return Err(MalpError::invalid("mreps", "must be at least 100"));
        }
        if self.truths.is_empty() {
            return Err(MalpError::invalid("truths", "must not be empty"));
        }
        if self.n_grid.is_empty() {
            return Err(MalpError::invalid("n_grid", "must not be empty"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(MalpError::invalid("level", "must lie strictly between 0 and 1"));
        }
        for t in &self.truths {
            let s = t.summary()?;
            if let Some(&n) = self.n_grid.iter().find(|&&n| n < s.p() + 3) {
                return Err(MalpError::invalid("n_grid", format!("sample size {n} too small")));
            }
        }
        match self.experiment {
            Experiment::Coverage if self.methods.is_empty() => Err(MalpError::invalid("methods", "must not be empty")),
            Experiment::Coverage => ResamplePlan::new(self.b_outer, self.b_inner, 0).map(|_| ()),
            Experiment::PredictiveComparison if self.test_size < 2 => {
                Err(MalpError::invalid("test_size", "must be at least 2"))
            }
            _ => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// The `(truth index, correlation, truth)` cells in run order.
    fn truth_cells(&self) -> Result<Vec<(usize, TruthSpec)>> {
        let mut out = Vec::new();
        for (i, t) in self.truths.iter().enumerate() {
            if self.correlation_grid.is_empty() {
                out.push((i, t.clone()));
            } else {
                for &c in &self.correlation_grid {
                    out.push((i, t.with_correlation(c)?));
                }
            }
        }
        Ok(out)
    }
}

/// Population value and moments of one predictor's sampling distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub kind: PredictorKind,
    pub failed: usize,
    pub mean: f64,
    pub variance: f64,
    pub mean_se: f64,
    pub true_value: f64,
    /// `σ²(x0)/n` under normality, when defined.
    pub asymptotic_variance: Option<f64>,
    pub histogram: Histogram,
    pub bimodality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRecord {
    pub truth: usize,
    /// `ρ` for one predictor, `γ` otherwise.
    pub correlation: f64,
    pub n: usize,
    pub x0: Vec<f64>,
    pub malp: KindStats,
    pub lslp: KindStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRecord {
    pub truth: usize,
    pub correlation: f64,
    pub n: usize,
    pub test_size: usize,
    pub reps: usize,
    pub failed: usize,
    pub malp: TripleSummary,
    pub lslp: TripleSummary,
    /// Largest per-replication `|PCC(MALP) − PCC(LSLP)|`.
    pub max_pcc_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub truth: usize,
    pub correlation: f64,
    pub x0: Vec<f64>,
    pub true_value: f64,
    pub cell: CoverageCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationStats {
    pub kind: PredictorKind,
    pub failed: usize,
    pub mean: f64,
    pub true_value: f64,
    /// Empirical quantiles at [`BOX_QUANTILES`].
    pub empirical: Vec<f64>,
    /// Normal-theory quantiles at [`BOX_QUANTILES`].
    pub theoretical: Vec<f64>,
    pub empirical_iqr: f64,
    pub theoretical_iqr: f64,
    /// Mean fitted slope (one predictor).
    pub mean_slope: f64,
}

pub const BOX_QUANTILES: [f64; 5] = [0.005, 0.25, 0.5, 0.75, 0.995];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedLocationRecord {
    pub truth: usize,
    pub correlation: f64,
    pub n: usize,
    pub x0: Vec<f64>,
    pub malp: LocationStats,
    pub lslp: LocationStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
pub enum CellRecord {
    Sampling(SamplingRecord),
    Predictive(PredictiveRecord),
    Coverage(CoverageRecord),
    FixedLocation(FixedLocationRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub experiment: Experiment,
    pub seed: u64,
    pub config_hash: String,
    pub config: SimulationConfig,
    pub records: Vec<CellRecord>,
}

fn correlation_of(s: &MomentSummary) -> f64 {
    if s.p() == 1 {
        s.cov_xy()[0] / (s.cov_xx()[(0, 0)] * s.var_y()).sqrt()
    } else {
        multiple_correlation(s)
    }
}

/// Per-replication predictions at each point, for both kinds
/// (`None` where the fit failed).
struct Draws {
    malp: Vec<Vec<Option<f64>>>,
    lslp: Vec<Vec<Option<f64>>>,
    malp_slope: Vec<Option<f64>>,
    lslp_slope: Vec<Option<f64>>,
}

fn draw_predictions(sampler: &MvnSampler, n: usize, reps: usize, seed: u64, points: &[Vec<f64>], execution: Execution) -> Draws {
    let per_rep = execution.map_indices(reps, |r| {
        let data = sampler.sample(n, derive_seed(seed, r as u64));
        let summary = sample_moments(&data).ok();
        let fit = |kind| summary.as_ref().and_then(|s| predictor_from(s, kind).ok());
        let (m, l) = (fit(PredictorKind::Malp), fit(PredictorKind::Lslp));
        let at = |model: &Option<crate::predictor::LinearPredictor>| -> Vec<Option<f64>> {
            points
                .iter()
                .map(|x| model.as_ref().and_then(|m| m.predict(x).ok()))
                .collect()
        };
        let slope = |model: &Option<crate::predictor::LinearPredictor>| model.as_ref().map(|m| m.coefficients[0]);
        (at(&m), at(&l), slope(&m), slope(&l))
    });
    let mut d = Draws {
        malp: vec![Vec::with_capacity(reps); points.len()],
        lslp: vec![Vec::with_capacity(reps); points.len()],
        malp_slope: Vec::with_capacity(reps),
        lslp_slope: Vec::with_capacity(reps),
    };
    for (m, l, ms, ls) in per_rep {
        for k in 0..points.len() {
            d.malp[k].push(m[k]);
            d.lslp[k].push(l[k]);
        }
        d.malp_slope.push(ms);
        d.lslp_slope.push(ls);
    }
    d
}

fn successes(values: &[Option<f64>]) -> Result<(Vec<f64>, usize)> {
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let failed = values.len() - ok.len();
    if failed * 100 > values.len() || ok.len() < 2 {
        return Err(MalpError::ExcessiveResampleFailure {
            failed,
            total: values.len(),
        });
    }
    Ok((ok, failed))
}

fn true_value(truth: &MomentSummary, x0: &[f64], kind: PredictorKind) -> Result<f64> {
    match kind {
        PredictorKind::Malp => population_malp(truth)?.predict(x0),
        PredictorKind::Lslp => population_lslp(truth).predict(x0),
    }
}

fn kind_stats(truth: &MomentSummary, x0: &[f64], n: usize, kind: PredictorKind, values: &[Option<f64>]) -> Result<KindStats> {
    let (ok, failed) = successes(values)?;
    let m = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / m;
    let sd = sample_sd(&ok);
    Ok(KindStats {
        kind,
        failed,
        mean,
        variance: sd * sd,
        mean_se: sd / m.sqrt(),
        true_value: true_value(truth, x0, kind)?,
        asymptotic_variance: avar_normal(truth, x0, kind).ok().map(|v| v / n as f64),
        histogram: Histogram::freedman_diaconis(&ok),
        bimodality: bimodality_coefficient(&ok),
    })
}

fn location_stats(
    truth: &MomentSummary,
    x0: &[f64],
    n: usize,
    kind: PredictorKind,
    values: &[Option<f64>],
    slopes: &[Option<f64>],
) -> Result<LocationStats> {
    let (ok, failed) = successes(values)?;
    let mut sorted = ok.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (sorted.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(sorted.len() - 1);
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let empirical: Vec<f64> = BOX_QUANTILES.iter().map(|&p| q(p)).collect();
    let center = true_value(truth, x0, kind)?;
    let sd = (avar_normal(truth, x0, kind)? / n as f64).sqrt();
    let norm = Normal::new(0.0, 1.0).unwrap();
    let theoretical: Vec<f64> = BOX_QUANTILES.iter().map(|&p| center + sd * norm.inverse_cdf(p)).collect();
    let slope_vals: Vec<f64> = slopes.iter().flatten().copied().collect();
    Ok(LocationStats {
        kind,
        failed,
        mean: ok.iter().sum::<f64>() / ok.len() as f64,
        true_value: center,
        empirical_iqr: empirical[3] - empirical[1],
        theoretical_iqr: theoretical[3] - theoretical[1],
        empirical,
        theoretical,
        mean_slope: slope_vals.iter().sum::<f64>() / slope_vals.len() as f64,
    })
}

/// Runs the experiment named in `config`.
///
/// Cell `c` (in truth, correlation, sample-size order) uses seed
/// `derive_seed(config.seed, c)`; the report does not depend on `execution`.
pub fn run(config: &SimulationConfig, execution: Execution) -> Result<SimulationReport> {
    config.validate()?;
    let mut records = Vec::new();
    let mut cell = 0u64;
    for (truth_index, spec) in config.truth_cells()? {
        let truth = spec.summary()?;
        let correlation = correlation_of(&truth);
        let sampler = MvnSampler::from_summary(&truth)?;
        for &n in &config.n_grid {
            let seed = derive_seed(config.seed, cell);
            cell += 1;
            match config.experiment {
                Experiment::SamplingDistribution => {
                    let points = config.points.resolve(&truth)?;
                    let draws = draw_predictions(&sampler, n, config.mreps, seed, &points, execution);
                    for (k, x0) in points.iter().enumerate() {
                        records.push(CellRecord::Sampling(SamplingRecord {
                            truth: truth_index,
                            correlation,
                            n,
                            x0: x0.clone(),
                            malp: kind_stats(&truth, x0, n, PredictorKind::Malp, &draws.malp[k])?,
                            lslp: kind_stats(&truth, x0, n, PredictorKind::Lslp, &draws.lslp[k])?,
                        }));
                    }
                }
                Experiment::FixedLocations => {
                    let points = config.points.resolve(&truth)?;
                    let draws = draw_predictions(&sampler, n, config.mreps, seed, &points, execution);
                    for (k, x0) in points.iter().enumerate() {
                        records.push(CellRecord::FixedLocation(FixedLocationRecord {
                            truth: truth_index,
                            correlation,
                            n,
                            x0: x0.clone(),
                            malp: location_stats(&truth, x0, n, PredictorKind::Malp, &draws.malp[k], &draws.malp_slope)?,
                            lslp: location_stats(&truth, x0, n, PredictorKind::Lslp, &draws.lslp[k], &draws.lslp_slope)?,
                        }));
                    }
                }
                Experiment::PredictiveComparison => {
                    records.push(CellRecord::Predictive(predictive_cell(
                        &sampler,
                        truth_index,
                        correlation,
                        n,
                        config,
                        seed,
                        execution,
                    )?));
                }
                Experiment::Coverage => {
                    let points = config.points.resolve(&truth)?;
                    for (k, x0) in points.iter().enumerate() {
                        let plan = ResamplePlan::new(config.b_outer, config.b_inner, derive_seed(seed, k as u64))?
                            .with_execution(execution);
                        let cells = coverage_probe_many(&truth, x0, &config.methods, config.level, n, config.mreps, &plan)?;
                        let target = true_value(&truth, x0, PredictorKind::Malp)?;
                        for c in cells {
                            records.push(CellRecord::Coverage(CoverageRecord {
                                truth: truth_index,
                                correlation,
                                x0: x0.clone(),
                                true_value: target,
                                cell: c?,
                            }));
                        }
                    }
                }
            }
        }
    }
    Ok(SimulationReport {
        experiment: config.experiment,
        seed: config.seed,
        config_hash: config.hash(),
        config: config.clone(),
        records,
    })
}

fn predictive_cell(
    sampler: &MvnSampler,
    truth: usize,
    correlation: f64,
    n: usize,
    config: &SimulationConfig,
    seed: u64,
    execution: Execution,
) -> Result<PredictiveRecord> {
    let m = config.test_size;
    let train: Vec<usize> = (0..n).collect();
    let test: Vec<usize> = (n..n + m).collect();
    let outcomes = execution.map_indices(config.mreps, |r| {
        let data = sampler.sample(n + m, derive_seed(seed, r as u64));
        holdout_triples(&data, &train, &test).ok()
    });
    let ok: Vec<_> = outcomes.iter().flatten().copied().collect();
    let failed = config.mreps - ok.len();
    if failed * 100 > config.mreps {
        return Err(MalpError::ExcessiveResampleFailure {
            failed,
            total: config.mreps,
        });
    }
    let max_pcc_difference = ok
        .iter()
        .filter_map(|(a, b)| Some((a.pcc? - b.pcc?).abs()))
        .fold(0.0, f64::max);
    let malp: Vec<_> = ok.iter().map(|t| t.0).collect();
    let lslp: Vec<_> = ok.iter().map(|t| t.1).collect();
    Ok(PredictiveRecord {
        truth,
        correlation,
        n,
        test_size: m,
        reps: config.mreps,
        failed,
        malp: TripleSummary::of(PredictorKind::Malp, &malp),
        lslp: TripleSummary::of(PredictorKind::Lslp, &lslp),
        max_pcc_difference,
    })
}
