//! Maximum agreement (MALP) and least-squares (LSLP) linear predictors.
//!
//! Both are computed from a single solve of `Σ_XX β = Σ_XY`; the MALP
//! slope is the LSLP slope divided by the multiple correlation γ, which
//! rescales the LSLP so its variance matches `σ_Y²`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{MalpError, Result};
use crate::moments::{multiple_correlation, sample_moments, Dataset, MomentSummary};

/// Smallest multiple correlation for which a MALP is reported.
pub const GAMMA_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Malp,
    Lslp,
}

impl PredictorKind {
    pub fn other(self) -> Self {
        match self {
            PredictorKind::Malp => PredictorKind::Lslp,
            PredictorKind::Lslp => PredictorKind::Malp,
        }
    }
}

impl std::str::FromStr for PredictorKind {
    type Err = MalpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "malp" => Ok(PredictorKind::Malp),
            "lslp" => Ok(PredictorKind::Lslp),
            other => Err(MalpError::invalid("kind", format!("unknown predictor kind `{other}`"))),
        }
    }
}

/// `x ↦ intercept + x·coefficients`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub kind: PredictorKind,
}

impl LinearPredictor {
    pub fn predict(&self, x0: &[f64]) -> Result<f64> {
        if x0.len() != self.coefficients.len() {
            return Err(MalpError::DimensionMismatch {
                expected: self.coefficients.len(),
                actual: x0.len(),
            });
        }
        Ok(self.intercept + x0.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>())
    }

    fn from_slope(summary: &MomentSummary, slope: &DVector<f64>, kind: PredictorKind) -> Self {
        LinearPredictor {
            intercept: summary.mean_y() - summary.mean_x().dot(slope),
            coefficients: slope.iter().copied().collect(),
            kind,
        }
    }
}

/// A fitted predictor together with the moments it came from.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub predictor: LinearPredictor,
    pub summary: MomentSummary,
    pub gamma: f64,
    /// The predictor of the other kind fitted from the same moments, when
    /// it exists (a LSLP fit with γ̂ = 0 has no MALP companion).
    pub companion: Option<LinearPredictor>,
}

impl FittedModel {
    pub fn kind(&self) -> PredictorKind {
        self.predictor.kind
    }

    pub fn predict(&self, x0: &[f64]) -> Result<f64> {
        self.predictor.predict(x0)
    }

    /// Predictor of the requested kind, whether primary or companion.
    pub fn predictor_of(&self, kind: PredictorKind) -> Option<&LinearPredictor> {
        if self.predictor.kind == kind {
            Some(&self.predictor)
        } else {
            self.companion.as_ref()
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma < GAMMA_TOLERANCE {
        Err(MalpError::DegenerateAgreement { gamma })
    } else {
        Ok(())
    }
}

/// Least-squares linear predictor `μ_Y + (x − μ_X) Σ_XX⁻¹ Σ_XY`.
pub fn population_lslp(summary: &MomentSummary) -> LinearPredictor {
    LinearPredictor::from_slope(summary, &summary.regression_slope(), PredictorKind::Lslp)
}

/// Maximum agreement linear predictor `μ_Y + (x − μ_X) Σ_XX⁻¹ Σ_XY / γ`.
pub fn population_malp(summary: &MomentSummary) -> Result<LinearPredictor> {
    let slope = summary.regression_slope();
    let gamma = multiple_correlation(summary);
    check_gamma(gamma)?;
    let slope = slope / gamma;
    debug_assert!({
        let v = slope.dot(&(summary.cov_xx() * &slope));
        (v - summary.var_y()).abs() <= 1e-8 * summary.var_y()
    });
    Ok(LinearPredictor::from_slope(summary, &slope, PredictorKind::Malp))
}

/// Predictor of `kind` built from `summary`.
pub fn predictor_from(summary: &MomentSummary, kind: PredictorKind) -> Result<LinearPredictor> {
    match kind {
        PredictorKind::Malp => population_malp(summary),
        PredictorKind::Lslp => Ok(population_lslp(summary)),
    }
}

/// Prediction at `x0` straight from moments, without building a predictor.
/// Used by the resampling loops.
pub fn predict_from_moments(summary: &MomentSummary, x0: &[f64], kind: PredictorKind) -> Result<f64> {
    if x0.len() != summary.p() {
        return Err(MalpError::DimensionMismatch {
            expected: summary.p(),
            actual: x0.len(),
        });
    }
    let slope = summary.regression_slope();
    let offset: f64 = x0
        .iter()
        .zip(summary.mean_x().iter())
        .zip(slope.iter())
        .map(|((x, m), b)| (x - m) * b)
        .sum();
    match kind {
        PredictorKind::Lslp => Ok(summary.mean_y() + offset),
        PredictorKind::Malp => {
            let gamma = (summary.cov_xy().dot(&slope) / summary.var_y()).clamp(0.0, 1.0).sqrt();
            check_gamma(gamma)?;
            Ok(summary.mean_y() + offset / gamma)
        }
    }
}

/// Fits the estimated predictor of `kind` by plugging sample moments into
/// the population formulas. The companion of the other kind is attached.
pub fn fit(data: &Dataset, kind: PredictorKind) -> Result<FittedModel> {
    let summary = sample_moments(data)?;
    fit_summary(summary, kind)
}

/// Same as [`fit`] for moments already computed.
pub fn fit_summary(summary: MomentSummary, kind: PredictorKind) -> Result<FittedModel> {
    let gamma = multiple_correlation(&summary);
    let lslp = population_lslp(&summary);
    let (predictor, companion) = match kind {
        PredictorKind::Malp => {
            check_gamma(gamma)?;
            (calibrated(&lslp, &summary, gamma), Some(lslp))
        }
        PredictorKind::Lslp => {
            let malp = (gamma >= GAMMA_TOLERANCE).then(|| calibrated(&lslp, &summary, gamma));
            (lslp, malp)
        }
    };
    Ok(FittedModel {
        predictor,
        summary,
        gamma,
        companion,
    })
}

fn calibrated(lslp: &LinearPredictor, summary: &MomentSummary, gamma: f64) -> LinearPredictor {
    let coefficients: Vec<f64> = lslp.coefficients.iter().map(|b| b / gamma).collect();
    let intercept = (1.0 - 1.0 / gamma) * summary.mean_y() + lslp.intercept / gamma;
    LinearPredictor {
        intercept,
        coefficients,
        kind: PredictorKind::Malp,
    }
}

/// MALP value from the LSLP value at the same point:
/// `(1 − 1/γ) μ_Y + (1/γ) ŷ†`.
pub fn calibrate_from_lslp(lslp_value: f64, mean_y: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || gamma > 1.0 {
        return Err(MalpError::DegenerateAgreement { gamma });
    }
    Ok((1.0 - 1.0 / gamma) * mean_y + lslp_value / gamma)
}

/// Inverse of [`calibrate_from_lslp`]: shrinks a MALP value toward `μ_Y`,
/// `(1 − γ) μ_Y + γ ŷ*`.
pub fn shrink_to_lslp(malp_value: f64, mean_y: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || gamma > 1.0 {
        return Err(MalpError::DegenerateAgreement { gamma });
    }
    Ok((1.0 - gamma) * mean_y + gamma * malp_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::BivariateParams;
    use approx::assert_relative_eq;

    fn set1() -> MomentSummary {
        BivariateParams::REFERENCE_SETS[0].summary().unwrap()
    }

    #[test]
    fn set1_malp() {
        let m = population_malp(&set1()).unwrap();
        assert_relative_eq!(m.coefficients[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(m.intercept, -5.0, epsilon = 1e-12);
        assert_relative_eq!(m.predict(&[7.0]).unwrap(), 9.0, epsilon = 1e-12);
    }

    #[test]
    fn set1_lslp() {
        let l = population_lslp(&set1());
        assert_relative_eq!(l.coefficients[0], 1.632, epsilon = 1e-12);
        assert_relative_eq!(l.intercept, -3.16, epsilon = 1e-12);
        assert_relative_eq!(l.predict(&[7.0]).unwrap(), 8.264, epsilon = 1e-12);
    }

    #[test]
    fn negative_correlation_flips_malp_slope() {
        let s = BivariateParams::REFERENCE_SETS[0].with_rho(-0.3).summary().unwrap();
        assert_relative_eq!(population_malp(&s).unwrap().coefficients[0], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_cross_covariance() {
        let s = BivariateParams::REFERENCE_SETS[0].with_rho(0.0).summary().unwrap();
        assert!(matches!(population_malp(&s), Err(MalpError::DegenerateAgreement { .. })));
        let l = population_lslp(&s);
        assert_eq!(l.coefficients[0], 0.0);
        assert_eq!(l.predict(&[123.0]).unwrap(), 5.0);
    }

    #[test]
    fn calibration_identity_by_hand() {
        let v = calibrate_from_lslp(8.264, 5.0, 0.816).unwrap();
        assert_relative_eq!(v, 9.0, epsilon = 1e-12);
        assert_eq!(calibrate_from_lslp(3.5, 1.0, 1.0).unwrap(), 3.5);
        assert_relative_eq!(calibrate_from_lslp(2.0, 2.0, 0.3).unwrap(), 2.0, epsilon = 1e-15);
        assert!(calibrate_from_lslp(1.0, 0.0, 0.0).is_err());
        assert_relative_eq!(shrink_to_lslp(9.0, 5.0, 0.816).unwrap(), 8.264, epsilon = 1e-12);
    }

    #[test]
    fn exact_line_gives_identical_predictors() {
        let x = [1.0, 2.0, 4.0, 7.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let model = fit(&Dataset::simple(&x, &y).unwrap(), PredictorKind::Malp).unwrap();
        let lslp = model.companion.as_ref().unwrap();
        assert_relative_eq!(model.gamma, 1.0, epsilon = 1e-12);
        assert_relative_eq!(model.predictor.coefficients[0], lslp.coefficients[0], epsilon = 1e-12);
        assert_relative_eq!(model.predictor.intercept, lslp.intercept, epsilon = 1e-12);
    }

    #[test]
    fn predict_at_mean_gives_mean_response() {
        let data = Dataset::from_rows(
            &[vec![1.0, 0.5], vec![2.0, -1.0], vec![0.3, 2.0], vec![4.0, 1.0], vec![2.5, 0.0]],
            &[1.0, 3.0, 0.0, 5.0, 2.0],
        )
        .unwrap();
        for kind in [PredictorKind::Malp, PredictorKind::Lslp] {
            let m = fit(&data, kind).unwrap();
            let xbar: Vec<f64> = m.summary.mean_x().iter().copied().collect();
            assert_relative_eq!(m.predict(&xbar).unwrap(), m.summary.mean_y(), epsilon = 1e-12);
            assert_relative_eq!(
                predict_from_moments(&m.summary, &[1.0, 1.0], kind).unwrap(),
                m.predict(&[1.0, 1.0]).unwrap(),
                epsilon = 1e-12
            );
        }
        assert!(matches!(
            fit(&data, PredictorKind::Malp).unwrap().predict(&[1.0]),
            Err(MalpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("MALP".parse::<PredictorKind>().unwrap(), PredictorKind::Malp);
        assert!("ols".parse::<PredictorKind>().is_err());
    }
}
