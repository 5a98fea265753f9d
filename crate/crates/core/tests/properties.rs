use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use malp::avar::{avar_normal, kernel_h};
use malp::exec::Execution;
use malp::intervals::{ci_all, pi, CiMethod, PiBasis};
use malp::metrics::{best_subsets, evaluate};
use malp::moments::{ccc, pcc, sample_moments, MomentSummary};
use malp::predictor::{calibrate_from_lslp, fit, PredictorKind};
use malp::resample::ResamplePlan;
use malp::simulate::mvn_sample;
use malp::Dataset;

fn random_cov(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

fn dataset(seed: u64, p: usize, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cov = random_cov(&mut rng, p + 1);
    let mean: Vec<f64> = (0..=p).map(|_| rng.random_range(-10.0..10.0)).collect();
    mvn_sample(&mean, &cov, n, rng.random()).unwrap()
}

fn summary(seed: u64, p: usize) -> MomentSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cov = random_cov(&mut rng, p + 1);
    let mean: Vec<f64> = (0..=p).map(|_| rng.random_range(-10.0..10.0)).collect();
    MomentSummary::from_joint(&mean, &cov, None).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ccc_symmetric_and_bounded(y in prop::collection::vec(-50.0..50.0f64, 3..40), shift in -5.0..5.0f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = y.iter().map(|v| 0.7 * v + shift + rng.random_range(-3.0..3.0)).collect();
        if let (Ok(a), Ok(b), Ok(r)) = (ccc(&y, &z), ccc(&z, &y), pcc(&y, &z)) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a.abs() <= r.abs() + 1e-12);
        }
    }

    #[test]
    fn ccc_equals_pcc_after_matching(seed: u64, n in 5usize..40) {
        let data = dataset(seed, 1, n);
        let s = sample_moments(&data).unwrap();
        let (mx, sx) = (s.mean_x()[0], s.cov_xx()[(0, 0)].sqrt());
        let z: Vec<f64> = data.x_values().iter().map(|x| s.mean_y() + (x - mx) / sx * s.var_y().sqrt()).collect();
        let y = data.y();
        prop_assert!((ccc(y, &z).unwrap() - pcc(y, &z).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn sample_moments_match_definitions(seed: u64, p in 1usize..4, n in 6usize..30) {
        let data = dataset(seed, p, n);
        let s = sample_moments(&data).unwrap();
        let nf = n as f64;
        let col = |j: usize| -> Vec<f64> { (0..n).map(|i| data.x_row(i)[j]).collect() };
        let mean = |v: &[f64]| v.iter().sum::<f64>() / nf;
        let cov = |a: &[f64], b: &[f64]| {
            let (ma, mb) = (mean(a), mean(b));
            a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (nf - 1.0)
        };
        let y = data.y();
        prop_assert!(rel(s.mean_y(), mean(y)) < 1e-12);
        prop_assert!(rel(s.var_y(), cov(y, y)) < 1e-12);
        for j in 0..p {
            prop_assert!(rel(s.mean_x()[j], mean(&col(j))) < 1e-12);
            prop_assert!(rel(s.cov_xy()[j], cov(&col(j), y)) < 1e-12);
            for l in 0..p {
                prop_assert!(rel(s.cov_xx()[(j, l)], cov(&col(j), &col(l))) < 1e-12);
            }
        }
    }

    #[test]
    fn fitted_pair_identities(seed: u64, p in 1usize..4, n in 8usize..60) {
        let data = dataset(seed, p, n);
        let Ok(model) = fit(&data, PredictorKind::Malp) else { return Ok(()) };
        let lslp = model.companion.clone().unwrap();
        let s = &model.summary;
        let malp_fit: Vec<f64> = (0..n).map(|i| model.predict(data.x_row(i)).unwrap()).collect();
        let lslp_fit: Vec<f64> = (0..n).map(|i| lslp.predict(data.x_row(i)).unwrap()).collect();
        for (m, l) in malp_fit.iter().zip(&lslp_fit) {
            prop_assert!(rel(*m, calibrate_from_lslp(*l, s.mean_y(), model.gamma).unwrap()) < 1e-10);
        }
        let mean = malp_fit.iter().sum::<f64>() / n as f64;
        let var = malp_fit.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        prop_assert!(rel(mean, s.mean_y()) < 1e-10);
        prop_assert!(rel(var, s.var_y()) < 1e-10);
        let y = data.y();
        prop_assert!((ccc(y, &malp_fit).unwrap() - model.gamma).abs() < 1e-10);
        prop_assert!((pcc(y, &malp_fit).unwrap() - pcc(y, &lslp_fit).unwrap()).abs() < 1e-12);
        prop_assert!(ccc(y, &malp_fit).unwrap() >= ccc(y, &lslp_fit).unwrap() - 1e-12);
        let beta = nalgebra::DVector::from_vec(model.predictor.coefficients.clone());
        prop_assert!(rel((beta.transpose() * s.cov_xx() * &beta)[0], s.var_y()) < 1e-8);
    }

    #[test]
    fn lslp_minimizes_training_mse(seed: u64, p in 1usize..4, n in 8usize..60) {
        let data = dataset(seed, p, n);
        let model = fit(&data, PredictorKind::Lslp).unwrap();
        let mse = |alpha: f64, beta: &[f64]| {
            (0..n)
                .map(|i| {
                    let z = alpha + data.x_row(i).iter().zip(beta).map(|(x, b)| x * b).sum::<f64>();
                    (data.y()[i] - z).powi(2)
                })
                .sum::<f64>()
                / n as f64
        };
        let best = mse(model.predictor.intercept, &model.predictor.coefficients);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..200 {
            let beta: Vec<f64> = model.predictor.coefficients.iter().map(|b| b + rng.random_range(-0.1..0.1)).collect();
            let alpha = model.predictor.intercept + rng.random_range(-0.5..0.5);
            prop_assert!(mse(alpha, &beta) >= best - 1e-9);
        }
    }

    #[test]
    fn kernel_symmetric(a in prop::collection::vec(-100.0..100.0f64, 3), b in prop::collection::vec(-100.0..100.0f64, 3)) {
        let h1 = kernel_h((&a[..2], a[2]), (&b[..2], b[2])).unwrap();
        let h2 = kernel_h((&b[..2], b[2]), (&a[..2], a[2])).unwrap();
        prop_assert_eq!(h1.entries(), h2.entries());
    }

    #[test]
    fn variance_ordering_and_minimum(seed: u64, p in 1usize..5) {
        let s = summary(seed, p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let centre: Vec<f64> = s.mean_x().iter().copied().collect();
        let Ok(at_mean) = avar_normal(&s, &centre, PredictorKind::Lslp) else { return Ok(()) };
        for _ in 0..100 {
            let x0: Vec<f64> = centre.iter().map(|m| m + rng.random_range(-5.0..5.0)).collect();
            let ls = avar_normal(&s, &x0, PredictorKind::Lslp).unwrap();
            let ma = avar_normal(&s, &x0, PredictorKind::Malp).unwrap();
            prop_assert!(at_mean <= ls * (1.0 + 1e-12));
            prop_assert!(ma >= ls * (1.0 - 1e-12));
        }
    }

    #[test]
    fn evaluate_permutation_invariant(seed: u64, n in 3usize..40) {
        let data = dataset(seed, 1, n);
        let (y, z) = (data.y().to_vec(), data.x_values().to_vec());
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..n).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let yp: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let zp: Vec<f64> = idx.iter().map(|&i| z[i]).collect();
        let (a, b) = (evaluate(&y, &z).unwrap(), evaluate(&yp, &zp).unwrap());
        prop_assert!(rel(a.ccc, b.ccc) < 1e-12);
        prop_assert!(rel(a.mse, b.mse) < 1e-12);
        prop_assert!(a.ccc.abs() <= a.pcc.unwrap().abs() + 1e-12);
        prop_assert!(a.mse >= 0.0);
    }

    #[test]
    fn subset_r_squared_nondecreasing(seed: u64, n in 12usize..40) {
        let data = dataset(seed, 4, n);
        let best = best_subsets(&data, &[1, 2, 3, 4], Execution::Sequential).unwrap();
        for w in best.windows(2) {
            prop_assert!(w[1].r_squared >= w[0].r_squared - 1e-12);
        }
    }

    #[test]
    fn pi_center_and_width(seed: u64, p in 1usize..4, n in 8usize..60, level in 0.5..0.99f64) {
        let data = dataset(seed, p, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let x0: Vec<f64> = (0..p).map(|_| rng.random_range(-15.0..15.0)).collect();
        let (Ok(a), Ok(b)) = (pi(&data, &x0, level, PiBasis::Malp), pi(&data, &x0, level, PiBasis::Lslp)) else {
            return Ok(());
        };
        prop_assert!(rel(a.center, b.center) < 1e-10);
        prop_assert!(a.length() >= b.length() * (1.0 - 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn intervals_nested_in_level(seed: u64, n in 15usize..40) {
        let data = dataset(seed, 1, n);
        let x0 = [data.x_values()[0]];
        let plan = ResamplePlan::new(200, 10, seed).unwrap().with_execution(Execution::Sequential);
        let narrow = ci_all(&data, &x0, 0.90, &CiMethod::ALL, &plan);
        let wide = ci_all(&data, &x0, 0.99, &CiMethod::ALL, &plan);
        for ((m, a), b) in CiMethod::ALL.iter().zip(narrow).zip(wide) {
            let (Ok(a), Ok(b)) = (a, b) else { continue };
            prop_assert!(a.lower <= a.upper);
            prop_assert!(b.lower <= a.lower && a.upper <= b.upper, "{:?}: {:?} not inside {:?}", m, a, b);
            if matches!(m, CiMethod::AsympNormal | CiMethod::Jackknife | CiMethod::BootstrapSe) {
                prop_assert!(((a.lower + a.upper) / 2.0 - a.center).abs() < 1e-10 * a.center.abs().max(1.0));
            }
        }
    }
}
