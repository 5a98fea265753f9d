use malp::exec::Execution;
use malp::moments::BivariateParams;
use malp::simulate::{bimodality_coefficient, run, CellRecord, MvnSampler, SimulationConfig, TruthSpec, BIMODALITY_THRESHOLD};
use malp::predictor::{fit, PredictorKind};

fn malp_estimates(rho: f64, n: usize, reps: usize) -> Vec<f64> {
    let params = BivariateParams::REFERENCE_SETS[0].with_rho(rho);
    let sampler = MvnSampler::from_summary(&params.summary().unwrap()).unwrap();
    Execution::default()
        .map_indices(reps, |r| fit(&sampler.sample(n, 500 + r as u64), PredictorKind::Malp).map(|m| m.predict(&[7.0]).unwrap()))
        .into_iter()
        .flatten()
        .collect()
}

#[test]
fn weak_correlation_small_sample_is_bimodal() {
    let values = malp_estimates(0.05, 30, 2000);
    assert!(bimodality_coefficient(&values) > BIMODALITY_THRESHOLD);
}

#[test]
fn strong_signal_is_unimodal() {
    let values = malp_estimates(0.9, 5000, 400);
    assert!(bimodality_coefficient(&values) < BIMODALITY_THRESHOLD);
}

#[test]
fn fixed_locations_match_theory() {
    let report = run(&SimulationConfig::fixed_locations(61), Execution::default()).unwrap();
    assert_eq!(report.records.len(), 21);
    for record in &report.records {
        let CellRecord::FixedLocation(r) = record else { panic!("unexpected record") };
        if r.truth == 0 {
            for stats in [&r.malp, &r.lslp] {
                let ratio = stats.empirical_iqr / stats.theoretical_iqr;
                assert!((ratio - 1.0).abs() < 0.10, "x0 {:?}: iqr ratio {ratio}", r.x0);
            }
        }
        assert!(r.malp.mean_slope.abs() > r.lslp.mean_slope.abs());
        let params = BivariateParams::REFERENCE_SETS[r.truth];
        if (r.x0[0] - params.mu_x).abs() < 1e-12 {
            let se = params.sigma_y / (r.n as f64).sqrt();
            assert!((r.malp.mean - r.lslp.mean).abs() < 0.05 * se);
        }
    }
}

#[test]
fn estimated_malp_converges_to_truth() {
    let mut small = SimulationConfig::sampling_distribution(62);
    small.n_grid = vec![100];
    small.correlation_grid = vec![0.5, 0.9];
    small.mreps = 1000;
    let mut large = small.clone();
    large.n_grid = vec![1600];
    let errors = |config: &SimulationConfig| -> Vec<f64> {
        run(config, Execution::default())
            .unwrap()
            .records
            .iter()
            .map(|r| match r {
                CellRecord::Sampling(s) => ((s.malp.mean - s.malp.true_value) / s.malp.true_value).abs(),
                _ => unreachable!(),
            })
            .collect()
    };
    let (a, b) = (errors(&small), errors(&large));
    let improved = a.iter().zip(&b).filter(|(x, y)| y < x).count();
    assert!(improved * 4 >= a.len() * 3, "{improved} of {} cells improved", a.len());
}

#[test]
fn sampler_moments_converge_at_root_n() {
    let truth = TruthSpec::bivariate(&BivariateParams::REFERENCE_SETS[1]).unwrap();
    let sampler = MvnSampler::from_summary(&truth.summary().unwrap()).unwrap();
    let sizes = [1000usize, 4000, 16000, 64000];
    let points: Vec<(f64, f64)> = sizes
        .iter()
        .map(|&n| {
            let err = (0..20)
                .map(|r| {
                    let d = sampler.sample(n, 700 + r);
                    let m = d.y().iter().sum::<f64>() / n as f64;
                    (m - 4.0).powi(2)
                })
                .sum::<f64>()
                / 20.0;
            ((n as f64).ln(), err.sqrt().ln())
        })
        .collect();
    let mx = points.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let my = points.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((-0.65..=-0.35).contains(&slope), "slope {slope}");
}

#[test]
fn report_reproducible_and_sized() {
    let mut config = SimulationConfig::sampling_distribution(63);
    config.mreps = 100;
    let a = run(&config, Execution::Sequential).unwrap();
    let b = run(&config, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records.len(), 3 * 3 * 9);
}
