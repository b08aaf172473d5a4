use chrono::{Days, NaiveDate};
use gcsvr::conformal::{conformal_quantile, ConformalConfig, ConformalStream};
use gcsvr::mcb::mcb_test;
use gcsvr::metrics::{crps, mae, mase, pinball, pinball_single, rmse, smape, PredictiveLaw};
use gcsvr::numeric::Matrix;
use gcsvr::schedule::make_schedule;
use gcsvr::svr::{fit_svr, GammaMode, SvrConfig};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn paired(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(-50.0f64..50.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn point_metrics_scale_with_the_data((a, f) in paired(2..20), c in 0.1f64..20.0, train in prop::collection::vec(-10.0f64..10.0, 3..15)) {
        let ca: Vec<f64> = a.iter().map(|v| c * v).collect();
        let cf: Vec<f64> = f.iter().map(|v| c * v).collect();
        let ct: Vec<f64> = train.iter().map(|v| c * v).collect();
        prop_assert!(close(mae(&ca, &cf).unwrap(), c * mae(&a, &f).unwrap(), 1e-12));
        prop_assert!(close(rmse(&ca, &cf).unwrap(), c * rmse(&a, &f).unwrap(), 1e-12));
        prop_assert!(close(pinball(&ca, &cf, 0.8).unwrap(), c * pinball(&a, &f, 0.8).unwrap(), 1e-12));
        prop_assert!(close(smape(&ca, &cf).unwrap(), smape(&a, &f).unwrap(), 1e-12));
        let m = mase(&a, &f, &train).unwrap();
        if !m.unreliable {
            prop_assert!(close(mase(&ca, &cf, &ct).unwrap().value, m.value, 1e-10));
        }
    }

    #[test]
    fn crps_scales_with_the_law(x in -20.0f64..20.0, mu in -20.0f64..20.0, sigma in 0.05f64..10.0, c in 0.1f64..20.0) {
        let base = crps(x, &PredictiveLaw::Gaussian { mean: mu, sigma }).unwrap();
        let scaled = crps(c * x, &PredictiveLaw::Gaussian { mean: c * mu, sigma: c * sigma }).unwrap();
        prop_assert!(close(scaled, c * base, 1e-10));
        prop_assert!(base > 0.0);
    }

    #[test]
    fn pinball_complement_is_absolute_error(x in -1e3f64..1e3, q in -1e3f64..1e3, rho in 0.01f64..0.99) {
        let sum = pinball_single(x, q, rho) + pinball_single(x, q, 1.0 - rho);
        prop_assert!(close(sum, (x - q).abs(), 1e-12));
    }

    #[test]
    fn smape_stays_in_range((a, f) in paired(1..30)) {
        let s = smape(&a, &f).unwrap();
        prop_assert!(s.is_finite() && (0.0..=200.0).contains(&s));
    }

    #[test]
    fn metrics_vanish_only_on_exact_forecasts(a in prop::collection::vec(-50.0f64..50.0, 1..20), shift in 0.01f64..5.0) {
        prop_assert_eq!(mae(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(smape(&a, &a).unwrap(), 0.0);
        let off: Vec<f64> = a.iter().map(|v| v + shift).collect();
        prop_assert!(mae(&a, &off).unwrap() > 0.0);
        prop_assert!(rmse(&a, &off).unwrap() > 0.0);
    }

    #[test]
    fn kappa_shrinks_as_miscoverage_grows(scores in prop::collection::vec(0.0f64..10.0, 1..80), r1 in 0.01f64..0.99, r2 in 0.01f64..0.99) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(conformal_quantile(&scores, lo).unwrap() >= conformal_quantile(&scores, hi).unwrap());
    }

    #[test]
    fn interval_brackets_its_forecast(errors in prop::collection::vec(0.0f64..5.0, 5..70), updates in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 0..40), forecast in -100.0f64..100.0) {
        let cfg = ConformalConfig { upsilon: 30, ..ConformalConfig::default() };
        let mut stream = ConformalStream::new(cfg).unwrap();
        stream.warm_up(&errors).unwrap();
        for (a, f) in updates {
            stream.update(a, f);
            prop_assert!(stream.len() <= 30);
            prop_assert!(stream.scaler() > 0.0);
        }
        let iv = stream.interval(forecast).unwrap();
        prop_assert!(iv.lower <= iv.center && iv.center <= iv.upper);
        prop_assert_eq!(iv.center, forecast);
        prop_assert!(close(iv.width(), 2.0 * iv.kappa * stream.scaler(), 1e-12));
    }

    #[test]
    fn mean_ranks_sum_to_triangular_number(d in 2usize..15, f in 2usize..12, seed in any::<u64>()) {
        let mut rng = gcsvr::numeric::SeededRng::new(seed);
        // a coarse grid makes ties common
        let vals: Vec<f64> = (0..d * f).map(|_| (rng.uniform(0.0, 4.0)).floor()).collect();
        let scores = Matrix::from_vec(d, f, vals).unwrap();
        let models: Vec<String> = (0..f).map(|j| format!("m{j}")).collect();
        let res = mcb_test(&scores, &models, 0.05).unwrap();
        let total: f64 = res.mean_ranks.iter().sum();
        prop_assert!((total - (f * (f + 1)) as f64 / 2.0).abs() <= 1e-9);
        prop_assert!(res.critical_distance > 0.0);
    }

    #[test]
    fn schedule_tiles_the_test_year(days in 0u64..4000, h in prop::sample::select(vec![30u32, 60, 90])) {
        let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap() + Days::new(days);
        let s = make_schedule(start, h).unwrap();
        prop_assert_eq!(s.windows.len(), (12 * 30 / h) as usize);
        prop_assert_eq!(s.windows[0].test_start, start);
        for pair in s.windows.windows(2) {
            prop_assert_eq!(pair[0].test_end + Days::new(1), pair[1].test_start);
        }
        for w in &s.windows {
            prop_assert_eq!(w.train_end + Days::new(1), w.test_start);
            prop_assert!(w.test_start <= w.test_end);
        }
        let covered: usize = s.windows.iter().map(|w| w.test_days()).sum();
        let year = (s.year_end() - start).num_days() as usize + 1;
        prop_assert_eq!(covered, year);
        prop_assert!((365..=366).contains(&year));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn svr_solutions_are_feasible(n in 3usize..25, c in 0.5f64..50.0, eps in 0.0f64..0.3, gamma in 0.05f64..2.0, seed in any::<u64>()) {
        let mut rng = gcsvr::numeric::SeededRng::new(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * r[1] + 0.2 * rng.normal()).collect();
        let cfg = SvrConfig { c, epsilon: eps, gamma_mode: GammaMode::Fixed(gamma), ..SvrConfig::default() };
        let fit = fit_svr(&rows, &y, &cfg, None).unwrap();
        let sum: f64 = fit.beta.iter().sum();
        prop_assert!(sum.abs() <= 1e-9);
        prop_assert!(fit.beta.iter().all(|b| b.abs() <= c + 1e-12));
        prop_assert!(fit.model.coefficients().iter().all(|b| b.is_finite()));
        for r in &rows {
            prop_assert!(fit.model.predict_features(r).unwrap().is_finite());
        }
    }
}
