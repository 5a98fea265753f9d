//! Out-of-sample performance measures, repeated train/test splits and
//! exhaustive best-subset search.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{MalpError, Result};
use crate::exec::{stream_rng, Execution};
use crate::moments::{ccc, pcc, sample_moments, sample_moments_of, Dataset};
use crate::predictor::{predictor_from, PredictorKind};

/// Largest predictor count accepted by [`best_subsets`].
pub const MAX_SUBSET_PREDICTORS: usize = 20;

/// PCC, CCC and MSE between observed responses and predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTriple {
    /// Absent when either vector has zero variance.
    pub pcc: Option<f64>,
    pub ccc: f64,
    pub mse: f64,
}

pub fn evaluate(observed: &[f64], predicted: &[f64]) -> Result<PerformanceTriple> {
    let pcc = match pcc(observed, predicted) {
        Ok(r) => Some(r),
        Err(MalpError::ZeroVariance) => None,
        Err(e) => return Err(e),
    };
    let ccc = ccc(observed, predicted)?;
    let mse = observed.iter().zip(predicted).map(|(y, z)| (y - z).powi(2)).sum::<f64>() / observed.len() as f64;
    Ok(PerformanceTriple { pcc, ccc, mse })
}

/// Location and spread of one metric across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q975: f64,
}

impl MetricSummary {
    /// Summary of `values`; quantiles by linear interpolation.
    pub fn of(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let q = |p: f64| {
            if n == 0 {
                return f64::NAN;
            }
            let h = p * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            s[lo] + (h - lo as f64) * (s[hi] - s[lo])
        };
        let mean = s.iter().sum::<f64>() / n as f64;
        MetricSummary {
            count: n,
            mean,
            sd: crate::resample::sample_sd(&s),
            q025: q(0.025),
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            q975: q(0.975),
        }
    }
}

/// Summaries of each metric for one predictor kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleSummary {
    pub kind: PredictorKind,
    pub pcc: MetricSummary,
    pub ccc: MetricSummary,
    pub mse: MetricSummary,
}

impl TripleSummary {
    pub fn of(kind: PredictorKind, triples: &[PerformanceTriple]) -> Self {
        let pccs: Vec<f64> = triples.iter().filter_map(|t| t.pcc).collect();
        let cccs: Vec<f64> = triples.iter().map(|t| t.ccc).collect();
        let mses: Vec<f64> = triples.iter().map(|t| t.mse).collect();
        TripleSummary {
            kind,
            pcc: MetricSummary::of(&pccs),
            ccc: MetricSummary::of(&cccs),
            mse: MetricSummary::of(&mses),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub reps: usize,
    pub failed: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub malp: TripleSummary,
    pub lslp: TripleSummary,
}

/// Fits both predictors on the training rows and scores them on the rest.
pub fn holdout_triples(data: &Dataset, train: &[usize], test: &[usize]) -> Result<(PerformanceTriple, PerformanceTriple)> {
    let summary = sample_moments_of(data, train)?;
    let observed: Vec<f64> = test.iter().map(|&i| data.y()[i]).collect();
    let score = |kind| -> Result<PerformanceTriple> {
        let model = predictor_from(&summary, kind)?;
        let predicted: Vec<f64> = test.iter().map(|&i| model.predict(data.x_row(i))).collect::<Result<_>>()?;
        evaluate(&observed, &predicted)
    };
    Ok((score(PredictorKind::Malp)?, score(PredictorKind::Lslp)?))
}

/// Repeated random splits with `⌈n · train_fraction⌉` training rows.
pub fn split_evaluate(
    data: &Dataset,
    reps: usize,
    seed: u64,
    train_fraction: f64,
    execution: Execution,
) -> Result<SplitEvaluation> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(MalpError::invalid("train_fraction", "must lie strictly between 0 and 1"));
    }
    if reps == 0 {
        return Err(MalpError::invalid("reps", "must be positive"));
    }
    let n = data.n();
    let train_size = ((n as f64 * train_fraction).ceil() as usize).min(n);
    let test_size = n - train_size;
    if train_size < data.p() + 2 {
        return Err(MalpError::TooFewRows {
            required: data.p() + 2,
            actual: train_size,
        });
    }
    if test_size < 2 {
        return Err(MalpError::TooFewRows {
            required: 2,
            actual: test_size,
        });
    }
    let outcomes = execution.map_indices(reps, |r| {
        let mut rng = stream_rng(seed, r as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        holdout_triples(data, &order[..train_size], &order[train_size..])
    });
    let mut malp = Vec::with_capacity(reps);
    let mut lslp = Vec::with_capacity(reps);
    let mut failed = 0;
    for o in outcomes {
        match o {
            Ok((m, l)) => {
                malp.push(m);
                lslp.push(l);
            }
            Err(_) => failed += 1,
        }
    }
    if failed * 100 > reps {
        return Err(MalpError::ExcessiveResampleFailure { failed, total: reps });
    }
    Ok(SplitEvaluation {
        reps,
        failed,
        train_size,
        test_size,
        malp: TripleSummary::of(PredictorKind::Malp, &malp),
        lslp: TripleSummary::of(PredictorKind::Lslp, &lslp),
    })
}

/// The best subset of one size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetChoice {
    pub size: usize,
    /// Zero-based predictor indices, ascending.
    pub columns: Vec<usize>,
    pub names: Option<Vec<String>>,
    /// Sample coefficient of determination `γ̂²`.
    pub r_squared: f64,
}

/// `γ̂²` of the regression on `columns`, from the full-sample joint covariance.
fn subset_r_squared(joint: &DMatrix<f64>, p: usize, columns: &[usize]) -> Option<f64> {
    let k = columns.len();
    let sxx = DMatrix::from_fn(k, k, |a, b| joint[(columns[a], columns[b])]);
    let sxy = DVector::from_fn(k, |a, _| joint[(columns[a], p)]);
    let chol = sxx.cholesky()?;
    Some(sxy.dot(&chol.solve(&sxy)) / joint[(p, p)])
}

/// For each size, the predictor subset with the largest `γ̂²`; ties go to
/// the lexicographically smallest index set.
pub fn best_subsets(data: &Dataset, sizes: &[usize], execution: Execution) -> Result<Vec<SubsetChoice>> {
    let p = data.p();
    if p > MAX_SUBSET_PREDICTORS {
        return Err(MalpError::TooManyPredictors {
            p,
            max: MAX_SUBSET_PREDICTORS,
        });
    }
    let joint = sample_moments(data)?.joint_cov();
    sizes
        .iter()
        .map(|&size| {
            if size == 0 || size > p {
                return Err(MalpError::invalid("sizes", format!("subset size {size} outside 1..={p}")));
            }
            let subsets: Vec<Vec<usize>> = (0..p).combinations(size).collect();
            let scores = execution.map_slice(&subsets, |cols| subset_r_squared(&joint, p, cols));
            let mut best: Option<(usize, f64)> = None;
            for (i, s) in scores.iter().enumerate() {
                if let Some(r2) = *s {
                    if best.is_none_or(|(_, b)| r2 > b) {
                        best = Some((i, r2));
                    }
                }
            }
            let (i, r_squared) = best.ok_or(MalpError::SingularCovariance)?;
            let columns = subsets[i].clone();
            let names = data
                .column_names()
                .map(|names| columns.iter().map(|&c| names[c].clone()).collect());
            Ok(SubsetChoice {
                size,
                columns,
                names,
                r_squared,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn data4() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..25)
            .map(|i| {
                let t = i as f64;
                vec![t.sin() * 3.0, (t * 0.7).cos(), ((i * 37) % 11) as f64, t * 0.1]
            })
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| 2.0 * r[0] - r[2] * 0.5 + ((i * 13) % 7) as f64 * 0.4)
            .collect();
        Dataset::from_rows(&rows, &y).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let y = [1.0, 4.0, 2.0, 8.0];
        let t = evaluate(&y, &y).unwrap();
        assert_eq!(t.pcc, Some(1.0));
        assert_relative_eq!(t.ccc, 1.0);
        assert_eq!(t.mse, 0.0);
    }

    #[test]
    fn constant_prediction_has_no_pcc() {
        let t = evaluate(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(t.pcc, None);
        assert_eq!(t.ccc, 0.0);
        assert_relative_eq!(t.mse, 2.0 / 3.0);
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let a = evaluate(&[1.0, 5.0, 2.0, 7.0], &[1.5, 4.0, 3.0, 6.0]).unwrap();
        let b = evaluate(&[7.0, 2.0, 1.0, 5.0], &[6.0, 3.0, 1.5, 4.0]).unwrap();
        assert_relative_eq!(a.ccc, b.ccc, epsilon = 1e-14);
        assert_relative_eq!(a.mse, b.mse, epsilon = 1e-14);
    }

    #[test]
    fn split_is_deterministic_and_odd_n_favours_training() {
        let d = data4();
        let a = split_evaluate(&d, 50, 3, 0.5, Execution::Sequential).unwrap();
        let b = split_evaluate(&d, 50, 3, 0.5, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train_size, 13);
        assert_eq!(a.test_size, 12);
    }

    #[test]
    fn subsets_match_brute_force() {
        let d = data4();
        let chosen = best_subsets(&d, &[1, 2, 3, 4], Execution::Sequential).unwrap();
        for choice in &chosen {
            let mut best = (-1.0, vec![]);
            for cols in (0..4).combinations(choice.size) {
                let sub = d.select_columns(&cols).unwrap();
                let s = sample_moments(&sub).unwrap();
                let r2 = crate::moments::multiple_correlation_sq(&s);
                if r2 > best.0 + 1e-12 {
                    best = (r2, cols);
                }
            }
            assert_eq!(choice.columns, best.1);
            assert_relative_eq!(choice.r_squared, best.0, max_relative = 1e-10);
        }
        assert_eq!(chosen[3].columns, vec![0, 1, 2, 3]);
        assert!(chosen.windows(2).all(|w| w[0].r_squared <= w[1].r_squared + 1e-12));
    }

    #[test]
    fn subset_guard() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| (0..21).map(|j| ((i * j) % 7) as f64).collect()).collect();
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let d = Dataset::from_rows(&rows, &y).unwrap();
        assert!(matches!(
            best_subsets(&d, &[1], Execution::Sequential),
            Err(MalpError::TooManyPredictors { p: 21, .. })
        ));
    }
}
