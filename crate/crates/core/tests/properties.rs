use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqz_core::codec::{decode, encode};
use sqz_core::compressor::{prune_mask, pruned_count};
use sqz_core::gmm::GmmCodebook;
use sqz_core::kmeans::kmeans_init;
use sqz_core::metrics::{compression_rate, Histogram};
use sqz_core::network::{Architecture, Network};
use sqz_core::objective::Prior;
use sqz_core::oracles::{mixture_kl_bound, quadrature_kl, MixturePair};
use sqz_core::trainer::sparsity_schedule;
use sqz_core::verify::{random_compressed_model, random_gradient_instance};
use sqz_core::window::{partition_windows, WindowStrategy};

fn codebook() -> impl Strategy<Value = GmmCodebook> {
    (1usize..6).prop_flat_map(|k| {
        (
            prop::collection::vec(-2.0f64..2.0, k),
            prop::collection::vec(0.01f64..1.0, k),
            prop::collection::vec(0.01f64..1.0, k),
            1e-4f64..2.0,
        )
            .prop_map(|(mu, sigma, raw, tau)| {
                let total: f64 = raw.iter().sum();
                GmmCodebook::new(mu, sigma, raw.iter().map(|p| p / total).collect(), tau).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn assignments_lie_on_the_simplex(cb in codebook(), x in -5.0f64..5.0) {
        let e = cb.evaluate(x).unwrap();
        let sr: f64 = e.responsibilities.iter().sum();
        let sa: f64 = e.assignment.iter().sum();
        prop_assert!((sr - 1.0).abs() < 1e-9 && (sa - 1.0).abs() < 1e-9);
        prop_assert!(e.assignment.iter().all(|&p| (0.0..=1.0).contains(&p)));
        let w = cb.soft_weight(x).unwrap();
        let lo = cb.mu.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = cb.mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(w >= lo - 1e-12 && w <= hi + 1e-12);
    }

    #[test]
    fn prune_removes_exact_count(
        lambda in prop::collection::vec(prop::sample::select(vec![0.1, 0.5, 0.5, 0.9]), 1..300),
        nonzero in 0.01f64..=1.0,
    ) {
        let keep = prune_mask(&lambda, nonzero);
        let pruned = keep.iter().filter(|&&k| !k).count();
        prop_assert_eq!(pruned, pruned_count(lambda.len(), nonzero));
        // every pruned weight has retain probability no larger than any kept one
        let max_pruned = lambda.iter().zip(&keep).filter(|(_, &k)| !k).map(|(l, _)| *l).fold(f64::NEG_INFINITY, f64::max);
        let min_kept = lambda.iter().zip(&keep).filter(|(_, &k)| k).map(|(l, _)| *l).fold(f64::INFINITY, f64::min);
        prop_assert!(max_pruned <= min_kept);
    }

    #[test]
    fn pruned_count_matches_ceiling(t in 1usize..100_000, pct in 1u32..=100) {
        let nonzero = pct as f64 / 100.0;
        // exact integer arithmetic: ceil((100 - pct) * t / 100)
        let want = ((100 - pct) as usize * t).div_ceil(100);
        prop_assert_eq!(pruned_count(t, nonzero), want);
    }

    #[test]
    fn codec_round_trips(seed in any::<u64>(), cut in 0.0f64..1.0) {
        let m = random_compressed_model(&mut ChaCha8Rng::seed_from_u64(seed));
        let bytes = encode(&m).unwrap();
        prop_assert_eq!(&decode(&bytes).unwrap(), &m);
        let at = ((bytes.len() as f64) * cut) as usize;
        prop_assert!(decode(&bytes[..at]).is_err());
    }

    #[test]
    fn rate_is_monotone(bits in 0.5f64..32.0, nz in 0.01f64..1.0, db in 0.01f64..4.0, dn in 0.001f64..0.5) {
        let r = compression_rate(bits, nz).unwrap();
        prop_assert!(compression_rate(bits + db, nz).unwrap() < r);
        if nz + dn <= 1.0 {
            prop_assert!(compression_rate(bits, nz + dn).unwrap() < r);
        }
    }

    #[test]
    fn schedule_is_monotone(total in 1u64..10_000, target in 0.01f64..=1.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (s, t) = ((lo * total as f64) as u64, (hi * total as f64) as u64);
        prop_assert!(sparsity_schedule(s, total, target, 3.0) >= sparsity_schedule(t, total, target, 3.0));
        prop_assert!(sparsity_schedule(t, total, target, 3.0) >= target - 1e-12);
    }

    #[test]
    fn windows_serve_every_value(values in prop::collection::vec(-3.0f64..3.0, 1..80), outlier in any::<bool>(), k in 1usize..5) {
        let strategy = if outlier { WindowStrategy::OutlierAware } else { WindowStrategy::Equal };
        let (p, membership) = partition_windows(&values, strategy, 1.0, k, 1e-3, 7).unwrap();
        for (x, &w) in values.iter().zip(&membership) {
            prop_assert!(p.codebooks[w].is_some());
            prop_assert_eq!(w, p.window_of(*x));
        }
        prop_assert!(p.window_sizes().iter().all(|&s| s <= k));
    }

    #[test]
    fn kmeans_codebooks_are_valid(values in prop::collection::vec(-1.0f64..1.0, 1..60), k in 1usize..8, seed in any::<u64>()) {
        let k = k.min(values.len());
        let cb = kmeans_init(&values, k, 0.5, seed).unwrap();
        prop_assert!(cb.validate().is_ok());
        prop_assert!(cb.len() <= k);
        prop_assert_eq!(&cb, &kmeans_init(&values, k, 0.5, seed).unwrap());
    }

    #[test]
    fn histogram_counts_everything(values in prop::collection::vec(-10.0f64..10.0, 1..200), bins in 1usize..50) {
        let h = Histogram::of(&values, bins).unwrap();
        prop_assert_eq!(h.total(), values.len() as u64);
    }

    #[test]
    fn flat_parameters_round_trip(seed in any::<u64>(), hidden in prop::collection::vec(1usize..6, 0..3)) {
        let arch = Architecture::mlp(2, &hidden, 3).unwrap();
        let net = Network::init(arch.clone(), &mut ChaCha8Rng::seed_from_u64(seed));
        let back = Network::from_flat(arch, &net.to_flat()).unwrap();
        prop_assert_eq!(back.to_flat(), net.to_flat());
    }

    #[test]
    fn leaves_round_trip(seed in any::<u64>()) {
        let inst = random_gradient_instance(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut m = inst.model.clone();
        let leaves = m.leaves();
        prop_assert_eq!(leaves.len(), m.num_leaves());
        m.set_leaves(&leaves);
        prop_assert_eq!(&m, &inst.model);
    }

    #[test]
    fn mixture_bound_dominates_quadrature(seed in any::<u64>(), k in 1usize..=4) {
        let pair = MixturePair::random(k, &mut ChaCha8Rng::seed_from_u64(seed));
        let exact = quadrature_kl(&pair.p, &pair.q, 20_000);
        let bound = mixture_kl_bound(&pair).unwrap();
        prop_assert!(exact >= -1e-9);
        prop_assert!(bound >= exact - 1e-6, "bound {} < kl {}", bound, exact);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn analytic_gradients_match_finite_differences(seed in any::<u64>()) {
        let inst = random_gradient_instance(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assume!(inst.is_smooth(1e-4).unwrap());
        for prior in [Prior::SpikeSlab, Prior::Gaussian] {
            let err = inst.gradient_error(prior, false).unwrap();
            prop_assert!(err < 1e-4, "{:?}: {}", prior, err);
        }
    }
}
