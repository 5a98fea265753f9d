//! Confidence intervals for the true MALP value at a point, prediction
//! intervals for a new response, and Monte Carlo coverage probes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::avar::avar_normal;
use crate::error::{MalpError, Result};
use crate::exec::{derive_seed, Execution};
use crate::moments::{multiple_correlation, sample_moments, Dataset, MomentSummary};
use crate::predictor::{population_malp, predict_from_moments, PredictorKind, GAMMA_TOLERANCE};
use crate::resample::{
    bootstrap_replicates, jackknife_replicates, jackknife_se_of, sample_sd, studentized_replicates, ResamplePlan,
};
use crate::simulate::MvnSampler;

/// Replicate count below which resampling percentile methods are flagged.
pub const RECOMMENDED_MIN_REPLICATES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntervalMethod {
    AsympNormal,
    Jackknife,
    BootstrapSe,
    BootstrapT,
    Percentile,
    BCa,
    #[serde(rename = "PI_MALP")]
    PiMalp,
    #[serde(rename = "PI_LSLP")]
    PiLslp,
}

/// The six confidence-interval constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CiMethod {
    AsympNormal,
    Jackknife,
    BootstrapSe,
    BootstrapT,
    Percentile,
    BCa,
}

impl CiMethod {
    pub const ALL: [CiMethod; 6] = [
        CiMethod::AsympNormal,
        CiMethod::Jackknife,
        CiMethod::BootstrapSe,
        CiMethod::BootstrapT,
        CiMethod::Percentile,
        CiMethod::BCa,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CiMethod::AsympNormal => "asymptotic",
            CiMethod::Jackknife => "jackknife",
            CiMethod::BootstrapSe => "bootstrap-se",
            CiMethod::BootstrapT => "bootstrap-t",
            CiMethod::Percentile => "percentile",
            CiMethod::BCa => "bca",
        }
    }

    fn uses_jackknife(self) -> bool {
        matches!(self, CiMethod::Jackknife | CiMethod::BCa)
    }

    fn uses_bootstrap(self) -> bool {
        matches!(
            self,
            CiMethod::BootstrapSe | CiMethod::BootstrapT | CiMethod::Percentile | CiMethod::BCa
        )
    }
}

impl From<CiMethod> for IntervalMethod {
    fn from(m: CiMethod) -> Self {
        match m {
            CiMethod::AsympNormal => IntervalMethod::AsympNormal,
            CiMethod::Jackknife => IntervalMethod::Jackknife,
            CiMethod::BootstrapSe => IntervalMethod::BootstrapSe,
            CiMethod::BootstrapT => IntervalMethod::BootstrapT,
            CiMethod::Percentile => IntervalMethod::Percentile,
            CiMethod::BCa => IntervalMethod::BCa,
        }
    }
}

impl fmt::Display for CiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CiMethod {
    type Err = MalpError;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s.to_ascii_lowercase().as_str() {
            "asymptotic" | "asymp" | "normal" | "1" => CiMethod::AsympNormal,
            "jackknife" | "jack" | "2" => CiMethod::Jackknife,
            "bootstrap-se" | "boot" | "3" => CiMethod::BootstrapSe,
            "bootstrap-t" | "boot-t" | "4" => CiMethod::BootstrapT,
            "percentile" | "5" => CiMethod::Percentile,
            "bca" | "6" => CiMethod::BCa,
            _ => return Err(MalpError::invalid("method", format!("unknown interval method `{s}`"))),
        };
        Ok(m)
    }
}

/// Which predictor a prediction interval is built around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PiBasis {
    Malp,
    Lslp,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub z0: Option<f64>,
    pub a_hat: Option<f64>,
    pub failed_replicates: usize,
    /// `Ĝ(ŷ)` was 0 or 1 and was pulled in before inverting.
    pub z0_clamped: bool,
    /// Fewer than [`RECOMMENDED_MIN_REPLICATES`] bootstrap replicates.
    pub few_replicates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: IntervalMethod,
    pub center: f64,
    pub se: Option<f64>,
    pub diagnostics: Option<Diagnostics>,
}

impl IntervalEstimate {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(MalpError::invalid("level", "must lie strictly between 0 and 1"))
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

/// `Φ⁻¹(q)`.
pub fn normal_quantile(q: f64) -> f64 {
    std_normal().inverse_cdf(q)
}

/// `z_{α/2}` for a two-sided interval at `level = 1 − α`.
pub fn critical_value(level: f64) -> f64 {
    normal_quantile(0.5 + level / 2.0)
}

/// The `k`-th order statistic of `sorted`, `k = ⌈qB⌉` clamped to `[1, B]`.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let b = sorted.len();
    let k = ((q * b as f64).ceil() as usize).clamp(1, b);
    sorted[k - 1]
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn symmetric(center: f64, se: f64, level: f64, method: CiMethod, diagnostics: Option<Diagnostics>) -> IntervalEstimate {
    let half = critical_value(level) * se;
    IntervalEstimate {
        lower: center - half,
        upper: center + half,
        level,
        method: method.into(),
        center,
        se: Some(se),
        diagnostics,
    }
}

/// Percentile interval from a replicate vector.
pub fn percentile_interval(replicates: &[f64], center: f64, level: f64) -> Result<IntervalEstimate> {
    check_level(level)?;
    if replicates.is_empty() {
        return Err(MalpError::invalid("replicates", "empty replicate vector"));
    }
    let s = sorted(replicates);
    let alpha = 1.0 - level;
    Ok(IntervalEstimate {
        lower: empirical_quantile(&s, alpha / 2.0),
        upper: empirical_quantile(&s, 1.0 - alpha / 2.0),
        level,
        method: IntervalMethod::Percentile,
        center,
        se: Some(sample_sd(replicates)),
        diagnostics: None,
    })
}

/// Jackknife acceleration `Σ dⱼ³ / (6 (Σ dⱼ²)^{3/2})` with `dⱼ = mean − ŷ₍ⱼ₎`.
pub fn acceleration(jackknife: &[f64]) -> Result<f64> {
    let n = jackknife.len() as f64;
    let mean = jackknife.iter().sum::<f64>() / n;
    let (mut s2, mut s3) = (0.0, 0.0);
    for v in jackknife {
        let d = mean - v;
        s2 += d * d;
        s3 += d * d * d;
    }
    if !(s2 > 0.0) {
        return Err(MalpError::BcaDegenerate("jackknife replicates are all equal"));
    }
    Ok(s3 / (6.0 * s2.powf(1.5)))
}

/// BCa interval from bootstrap replicates and an explicit acceleration.
pub fn bca_interval_with(replicates: &[f64], center: f64, a_hat: f64, level: f64) -> Result<IntervalEstimate> {
    check_level(level)?;
    if replicates.is_empty() {
        return Err(MalpError::invalid("replicates", "empty replicate vector"));
    }
    let s = sorted(replicates);
    let b = s.len();
    if s[0] == s[b - 1] {
        return Err(MalpError::BcaDegenerate("all bootstrap replicates are identical"));
    }
    let below = s.partition_point(|v| *v < center);
    let bf = b as f64;
    let (prop, clamped) = match below {
        0 => (1.0 / (bf + 1.0), true),
        k if k == b => (bf / (bf + 1.0), true),
        k => (k as f64 / bf, false),
    };
    let norm = std_normal();
    let z0 = norm.inverse_cdf(prop);
    let z = critical_value(level);
    let adjust = |zq: f64| -> Result<f64> {
        let w = z0 + zq;
        let denom = 1.0 - a_hat * w;
        if !(denom > 0.0) {
            return Err(MalpError::BcaDegenerate("acceleration too large for the requested level"));
        }
        Ok(norm.cdf(z0 + w / denom))
    };
    let (q_lo, q_hi) = (adjust(-z)?, adjust(z)?);
    Ok(IntervalEstimate {
        lower: empirical_quantile(&s, q_lo),
        upper: empirical_quantile(&s, q_hi),
        level,
        method: IntervalMethod::BCa,
        center,
        se: Some(sample_sd(replicates)),
        diagnostics: Some(Diagnostics {
            z0: Some(z0),
            a_hat: Some(a_hat),
            z0_clamped: clamped,
            ..Diagnostics::default()
        }),
    })
}

/// BCa interval with the acceleration estimated from jackknife replicates.
pub fn bca_interval(replicates: &[f64], center: f64, jackknife: &[f64], level: f64) -> Result<IntervalEstimate> {
    bca_interval_with(replicates, center, acceleration(jackknife)?, level)
}

/// Bootstrap-t interval from studentized replicate statistics.
pub fn bootstrap_t_interval(t_stats: &[f64], center: f64, se_boot: f64, level: f64) -> Result<IntervalEstimate> {
    check_level(level)?;
    if t_stats.is_empty() {
        return Err(MalpError::invalid("replicates", "no usable studentized replicates"));
    }
    let s = sorted(t_stats);
    let alpha = 1.0 - level;
    Ok(IntervalEstimate {
        lower: center - empirical_quantile(&s, 1.0 - alpha / 2.0) * se_boot,
        upper: center - empirical_quantile(&s, alpha / 2.0) * se_boot,
        level,
        method: IntervalMethod::BootstrapT,
        center,
        se: Some(se_boot),
        diagnostics: None,
    })
}

struct Fitted {
    summary: MomentSummary,
    estimate: f64,
}

fn fitted_malp(data: &Dataset, x0: &[f64]) -> Result<Fitted> {
    let summary = sample_moments(data)?;
    let estimate = predict_from_moments(&summary, x0, PredictorKind::Malp)?;
    Ok(Fitted { summary, estimate })
}

/// One confidence interval for the true MALP value at `x0`.
pub fn ci(data: &Dataset, x0: &[f64], level: f64, method: CiMethod, plan: &ResamplePlan) -> Result<IntervalEstimate> {
    ci_all(data, x0, level, &[method], plan).pop().unwrap()
}

/// Several confidence intervals sharing their jackknife and bootstrap work.
/// Results are in the order of `methods`.
pub fn ci_all(
    data: &Dataset,
    x0: &[f64],
    level: f64,
    methods: &[CiMethod],
    plan: &ResamplePlan,
) -> Vec<Result<IntervalEstimate>> {
    let shared = (|| -> Result<Fitted> {
        check_level(level)?;
        fitted_malp(data, x0)
    })();
    let fitted = match shared {
        Ok(f) => f,
        Err(e) => return methods.iter().map(|_| Err(e.clone())).collect(),
    };
    let center = fitted.estimate;
    let kind = PredictorKind::Malp;

    let jackknife = methods
        .iter()
        .any(|m| m.uses_jackknife())
        .then(|| jackknife_replicates(data, x0, kind));
    let needs_t = methods.contains(&CiMethod::BootstrapT);
    let bootstrap = methods.iter().any(|m| m.uses_bootstrap()).then(|| {
        if needs_t {
            studentized_replicates(data, x0, kind, plan).map(|s| (s.values.clone(), s.failed, Some(s)))
        } else {
            bootstrap_replicates(data, x0, kind, plan).map(|r| (r.values, r.failed, None))
        }
    });
    let few = plan.b_outer < RECOMMENDED_MIN_REPLICATES;

    let with_diag = |mut est: IntervalEstimate, failed: usize| {
        let mut d = est.diagnostics.take().unwrap_or_default();
        d.failed_replicates = failed;
        d.few_replicates = few;
        est.diagnostics = Some(d);
        est
    };

    methods
        .iter()
        .map(|&method| -> Result<IntervalEstimate> {
            match method {
                CiMethod::AsympNormal => {
                    let n = data.n() as f64;
                    let avar = avar_normal(&fitted.summary, x0, kind)?;
                    Ok(symmetric(center, (avar / n).sqrt(), level, method, None))
                }
                CiMethod::Jackknife => {
                    let jk = jackknife.as_ref().unwrap().as_ref().map_err(Clone::clone)?;
                    Ok(symmetric(center, jackknife_se_of(jk), level, method, None))
                }
                CiMethod::BootstrapSe => {
                    let (values, failed, _) = bootstrap.as_ref().unwrap().as_ref().map_err(Clone::clone)?;
                    let est = symmetric(center, sample_sd(values), level, method, None);
                    Ok(with_diag(est, *failed))
                }
                CiMethod::Percentile => {
                    let (values, failed, _) = bootstrap.as_ref().unwrap().as_ref().map_err(Clone::clone)?;
                    Ok(with_diag(percentile_interval(values, center, level)?, *failed))
                }
                CiMethod::BootstrapT => {
                    let (values, failed, st) = bootstrap.as_ref().unwrap().as_ref().map_err(Clone::clone)?;
                    let st = st.as_ref().unwrap();
                    let est = bootstrap_t_interval(&st.t_statistics(center), center, sample_sd(values), level)?;
                    Ok(with_diag(est, failed + st.t_failures()))
                }
                CiMethod::BCa => {
                    let jk = jackknife.as_ref().unwrap().as_ref().map_err(Clone::clone)?;
                    let (values, failed, _) = bootstrap.as_ref().unwrap().as_ref().map_err(Clone::clone)?;
                    Ok(with_diag(bca_interval(values, center, jk, level)?, *failed))
                }
            }
        })
        .collect()
}

/// Half-width ingredients shared by both prediction-interval bases.
fn pi_parts(summary: &MomentSummary, x0: &[f64]) -> Result<(f64, f64, f64)> {
    if x0.len() != summary.p() {
        return Err(MalpError::DimensionMismatch {
            expected: summary.p(),
            actual: x0.len(),
        });
    }
    let gamma = multiple_correlation(summary);
    if !(GAMMA_TOLERANCE..1.0).contains(&gamma) {
        return Err(MalpError::DegenerateAgreement { gamma });
    }
    let d = nalgebra::DVector::from_column_slice(x0) - summary.mean_x();
    let maha = d.dot(&summary.solve_xx(&d));
    let proj = summary.regression_slope().dot(&d);
    Ok((gamma, maha, proj))
}

/// Prediction interval for a new response at `x0`.
pub fn pi(data: &Dataset, x0: &[f64], level: f64, basis: PiBasis) -> Result<IntervalEstimate> {
    check_level(level)?;
    let summary = sample_moments(data)?;
    let (gamma, maha, proj) = pi_parts(&summary, x0)?;
    let n = data.n() as f64;
    let var_y = summary.var_y();
    let g2 = gamma * gamma;
    let (center, d2, method) = match basis {
        PiBasis::Lslp => (
            predict_from_moments(&summary, x0, PredictorKind::Lslp)?,
            1.0 + maha,
            IntervalMethod::PiLslp,
        ),
        PiBasis::Malp => {
            let malp = predict_from_moments(&summary, x0, PredictorKind::Malp)?;
            let bias = (1.0 - 1.0 / gamma) * proj;
            let d2 = 2.0 / (1.0 + gamma) + maha / g2 - (1.0 - g2) * proj * proj / (var_y * g2 * g2);
            (malp + bias, d2, IntervalMethod::PiMalp)
        }
    };
    let se = var_y.sqrt() * (1.0 - g2).sqrt() * (1.0 + d2 / n).sqrt();
    let half = critical_value(level) * se;
    Ok(IntervalEstimate {
        lower: center - half,
        upper: center + half,
        level,
        method,
        center,
        se: Some(se),
        diagnostics: None,
    })
}

/// Monte Carlo summary of one interval method at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub method: CiMethod,
    pub n: usize,
    pub level: f64,
    pub reps: usize,
    pub failed: usize,
    pub coverage: f64,
    pub coverage_se: f64,
    /// Mean interval length multiplied by `√n`.
    pub mean_std_length: f64,
    pub length_se: f64,
}

/// Coverage of one method over `reps` samples of size `n` from the normal
/// distribution with moments `truth`.
pub fn coverage_probe(
    truth: &MomentSummary,
    x0: &[f64],
    method: CiMethod,
    level: f64,
    n: usize,
    reps: usize,
    plan: &ResamplePlan,
) -> Result<CoverageCell> {
    coverage_probe_many(truth, x0, &[method], level, n, reps, plan)?.pop().unwrap()
}

/// Coverage of several methods computed on the same simulated samples.
///
/// Replication `r` draws its sample from stream `derive_seed(seed, 2r)` and
/// resamples with seed `derive_seed(seed, 2r + 1)`.
pub fn coverage_probe_many(
    truth: &MomentSummary,
    x0: &[f64],
    methods: &[CiMethod],
    level: f64,
    n: usize,
    reps: usize,
    plan: &ResamplePlan,
) -> Result<Vec<Result<CoverageCell>>> {
    check_level(level)?;
    if reps < 2 {
        return Err(MalpError::invalid("reps", "need at least 2 replications"));
    }
    let target = population_malp(truth)?.predict(x0)?;
    let sampler = MvnSampler::from_summary(truth)?;
    let inner = plan.with_execution(Execution::Sequential);
    let per_rep: Vec<Vec<Option<(bool, f64)>>> = plan.execution.map_indices(reps, |r| {
        let seed = derive_seed(plan.seed, 2 * r as u64);
        let data = sampler.sample(n, seed);
        let rep_plan = inner.with_seed(derive_seed(plan.seed, 2 * r as u64 + 1));
        ci_all(&data, x0, level, methods, &rep_plan)
            .into_iter()
            .map(|res| res.ok().map(|est| (est.contains(target), est.length())))
            .collect()
    });
    let root_n = (n as f64).sqrt();
    Ok(methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let outcomes: Vec<(bool, f64)> = per_rep.iter().filter_map(|row| row[k]).collect();
            let failed = reps - outcomes.len();
            if failed * 100 > reps {
                return Err(MalpError::ExcessiveResampleFailure { failed, total: reps });
            }
            let m = outcomes.len() as f64;
            let coverage = outcomes.iter().filter(|o| o.0).count() as f64 / m;
            let lengths: Vec<f64> = outcomes.iter().map(|o| o.1 * root_n).collect();
            let mean_len = lengths.iter().sum::<f64>() / m;
            Ok(CoverageCell {
                method,
                n,
                level,
                reps,
                failed,
                coverage,
                coverage_se: (coverage * (1.0 - coverage) / m).sqrt(),
                mean_std_length: mean_len,
                length_se: sample_sd(&lengths) / m.sqrt(),
            })
        })
        .collect())
}
