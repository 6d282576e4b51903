use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqz_core::data::{gen_longtail_weights, gen_moons, gen_regression, MoonsTask, RegressionTask, TargetFn};
use sqz_core::oracles::{mc_kl, mixture_kl_bound, quadrature_kl, Mixture, MixturePair};
use sqz_core::task::Targets;
use sqz_core::verify::{gradient_suite, mixture_bound_suite};
use sqz_core::window::{quantile_sorted, Quartiles};

#[test]
fn mc_kl_matches_closed_form() {
    let p = Mixture::new(vec![1.0], vec![1.0], vec![1.0]).unwrap();
    let q = Mixture::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
    let (est, se) = mc_kl(&p, &q, 1_000_000, &mut ChaCha8Rng::seed_from_u64(1));
    assert!((est - 0.5).abs() <= 3.0 * se, "{est} +- {se}");
}

#[test]
fn mc_kl_matches_quadrature_on_mixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 1..=4 {
        let pair = MixturePair::random(k, &mut rng);
        let exact = quadrature_kl(&pair.p, &pair.q, 40_000);
        let (est, se) = mc_kl(&pair.p, &pair.q, 200_000, &mut rng);
        assert!((est - exact).abs() <= 3.0 * se, "K={k}: {est} vs {exact} (se {se})");
    }
}

#[test]
fn bound_dominates_three_component_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pair = MixturePair::random(3, &mut rng);
    let (est, se) = mc_kl(&pair.p, &pair.q, 100_000, &mut rng);
    assert!(mixture_kl_bound(&pair).unwrap() >= est - 3.0 * se);
    let r = mixture_bound_suite(20, 20_000, 4).unwrap();
    assert!(r.passed(), "{r}");
}

#[test]
fn gradient_suite_passes_and_catches_mutations() {
    let ok = gradient_suite(15, 21, 1e-4, false).unwrap();
    assert!(ok.passed(), "{ok}: {:?}", ok.failures);
    let bad = gradient_suite(5, 21, 1e-2, true).unwrap();
    assert_eq!(bad.failures.len(), 10, "{bad}");
}

#[test]
fn null_target_has_noise_variance() {
    let task = RegressionTask { f0: TargetFn::Zero, n: 10_000, sigma_eps: 0.3, ..Default::default() };
    let (train, test) = gen_regression(&task).unwrap();
    let ys: Vec<f64> = [train, test]
        .iter()
        .flat_map(|d| match &d.targets {
            Targets::Real { values, .. } => values.clone(),
            Targets::Labels { .. } => unreachable!(),
        })
        .collect();
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var / 0.09 - 1.0).abs() < 0.1, "{var}");
}

#[test]
fn generators_are_pure_and_splits_exhaustive() {
    let task = RegressionTask { n: 501, ..Default::default() };
    let (a, b) = gen_regression(&task).unwrap();
    assert_eq!(a.len() + b.len(), 501);
    assert_eq!(gen_regression(&task).unwrap(), (a, b));
    let m = MoonsTask { n: 300, ..Default::default() };
    let (tr, te) = gen_moons(&m).unwrap();
    assert_eq!((tr.len(), te.len()), (240, 60));
    assert_eq!(gen_moons(&m).unwrap(), (tr, te));
    assert_eq!(gen_longtail_weights(1000, 0.01, 1.0, 4), gen_longtail_weights(1000, 0.01, 1.0, 4));
}

#[test]
fn longtail_bulk_and_tails() {
    let n = 100_000;
    let w = gen_longtail_weights(n, 0.01, 1.0, 3);
    let bulk_n = n - 1000;
    let mut bulk = w[..bulk_n].to_vec();
    bulk.sort_by(f64::total_cmp);
    // N(0, 0.02^2) quantiles at 10% / 25% / 75% / 90%
    for (p, z) in [(0.10, -1.281_551_565_5), (0.25, -0.674_489_750_2), (0.75, 0.674_489_750_2), (0.90, 1.281_551_565_5)]
    {
        let got = quantile_sorted(&bulk, p);
        let want = 0.02 * z;
        assert!((got / want - 1.0).abs() < 0.05, "q{p}: {got} vs {want}");
    }
    let q = Quartiles::of(&w[..bulk_n]);
    let hi = q.q3 + 5.0 * q.iqr();
    let lo = q.q1 - 5.0 * q.iqr();
    assert!(w[bulk_n..].iter().all(|&x| x > hi || x < lo));
}
