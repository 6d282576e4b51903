//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any
//! failure. Criteria run concurrently and report in order.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqz_core::ablation::{
    inference_study, median, prior_study, regression_bench, window_study, RegressionBench, StudyConfig,
};
use sqz_core::codec::{compressed_size_bytes, decode, dense_size_bytes};
use sqz_core::compressor::{prune_mask, CompressedLayer, CompressedMeta, CompressedModel};
use sqz_core::data::gen_longtail_weights;
use sqz_core::gmm::{softmax_scaled, GmmCodebook};
use sqz_core::kmeans::kmeans_init;
use sqz_core::metrics::compression_rate;
use sqz_core::network::{Architecture, Network};
use sqz_core::verify::{codec_suite, gradient_suite, mixture_bound_suite};
use sqz_core::window::WindowStrategy;
use sqz_core::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn rates() -> Result<Outcome> {
    let a = compression_rate(16f64.log2(), 0.5)?;
    let b = compression_rate(16f64.log2(), 0.25)?;
    outcome(a == 16.0 && b == 32.0, format!("rate(4 bits, 0.5) = {a}, rate(4 bits, 0.25) = {b}"))
}

fn mixture_bound() -> Result<Outcome> {
    let r = mixture_bound_suite(200, 1_000_000, 2024)?;
    outcome(r.passed(), r.to_string())
}

fn gradients() -> Result<Outcome> {
    let r = gradient_suite(100, 7, 1e-4, false)?;
    outcome(r.passed(), format!("{r} (tolerance 1e-4)"))
}

fn exact_sparsity() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    let mut bad = Vec::new();
    for &nz in &[0.9, 0.5, 0.25, 0.1] {
        // nonzero as an integer percentage keeps the reference ceiling exact
        let pct = (nz * 100.0f64).round() as usize;
        for &t in &[97usize, 10_000] {
            let want = ((100 - pct) * t).div_ceil(100);
            let random: Vec<f64> = (0..t).map(|_| rng.random()).collect();
            for lambda in [random, vec![0.5; t]] {
                let pruned = prune_mask(&lambda, nz).iter().filter(|&&k| !k).count();
                checked += 1;
                if pruned != want {
                    bad.push(format!("nz={nz} T={t}: {pruned} != {want}"));
                }
            }
        }
    }
    outcome(bad.is_empty(), format!("{checked} configurations, mismatches {bad:?}"))
}

fn regression() -> Result<Outcome> {
    let bench = RegressionBench::default();
    let s2 = bench.task.sigma_eps * bench.task.sigma_eps;
    let a = regression_bench(&bench)?;
    let b = regression_bench(&bench)?;
    let identical = a.encoded == b.encoded && a.full_precision_mse.to_bits() == b.full_precision_mse.to_bits();
    let decoded = decode(&a.encoded)? == a.model;
    let pass = a.full_precision_mse <= 1.5 * s2 && a.compressed_mse <= 2.0 * s2 && identical && decoded;
    outcome(
        pass,
        format!(
            "seed {}: full-precision MSE {:.5} (<= {:.4}), compressed MSE {:.5} (<= {:.4}), Bayes MSE {:.5}, \
             rerun bit-identical {identical}, decode matches {decoded}",
            bench.task.seed,
            a.full_precision_mse,
            1.5 * s2,
            a.compressed_mse,
            2.0 * s2,
            a.bayes_mse
        ),
    )
}

fn prior_ablation() -> Result<Outcome> {
    let nonzeros = [0.5, 0.1];
    let rows = prior_study(&StudyConfig::default(), &nonzeros, &[0, 1, 2])?;
    let mut pass = true;
    let mut parts = Vec::new();
    for nz in nonzeros {
        let pick = |f: fn(&sqz_core::ablation::PriorRow) -> f64| {
            median(&rows.iter().filter(|r| r.nonzero == nz).map(f).collect::<Vec<_>>())
        };
        let (ss, g) = (pick(|r| r.spike_slab), pick(|r| r.gaussian));
        pass &= ss >= g;
        parts.push(format!("nz={nz}: spike-slab {ss:.4} vs gaussian {g:.4}"));
    }
    outcome(pass, parts.join(", "))
}

fn inference_ablation() -> Result<Outcome> {
    const NOISE: f64 = 0.002;
    let ks = [2, 4, 8, 16];
    let rows = inference_study(&StudyConfig::default(), &ks, &[0, 1, 2])?;
    let mut pass = true;
    let mut parts = Vec::new();
    let mut prev = f64::INFINITY;
    for k in ks {
        let at: Vec<_> = rows.iter().filter(|r| r.k == k).collect();
        let gd = median(&at.iter().map(|r| r.greedy_drop()).collect::<Vec<_>>());
        let bd = median(&at.iter().map(|r| r.bayes_drop()).collect::<Vec<_>>());
        pass &= bd <= gd + NOISE && bd <= prev + NOISE;
        prev = bd;
        parts.push(format!("K={k}: bayes {bd:+.4} greedy {gd:+.4}"));
    }
    outcome(pass, format!("median drops {}", parts.join(", ")))
}

fn window_ablation() -> Result<Outcome> {
    let w = gen_longtail_weights(100_000, 0.01, 1.0, 5);
    let s = window_study(&w, 16, 5.0, 100, 5)?;
    let pass = s.outlier.tv < s.equal.tv && s.outlier.tail_in_outer == s.tail_points;
    outcome(
        pass,
        format!(
            "TV outlier-aware {:.5} vs equal {:.5}; tail points in outer windows {}/{}",
            s.outlier.tv, s.equal.tv, s.outlier.tail_in_outer, s.tail_points
        ),
    )
}

fn size_model() -> Result<(CompressedModel, Network)> {
    const K: usize = 16;
    let arch = Architecture::new(vec![999, 100])?;
    let t = arch.param_count();
    let w = gen_longtail_weights(t, 0.01, 1.0, 9);
    let cb: GmmCodebook = kmeans_init(&w, K, 5e-4, 9)?;
    let magnitude: Vec<f64> = w.iter().map(|x| x.abs()).collect();
    let bitmap = prune_mask(&magnitude, 0.5);
    let mut indices = Vec::new();
    for (x, &keep) in w.iter().zip(&bitmap) {
        if keep {
            indices.push(cb.evaluate(*x)?.argmax() as u32);
        }
    }
    let layer = CompressedLayer {
        strategy: WindowStrategy::Equal,
        cuts: vec![],
        window_sizes: vec![cb.len() as u32],
        codebook: cb.mu.iter().map(|&m| m as f32).collect(),
        bitmap,
        indices,
    };
    let model = CompressedModel {
        arch: arch.clone(),
        meta: CompressedMeta { k: K as u16, nonzero: 0.5, seed: 9 },
        layers: vec![layer],
    };
    model.validate()?;
    Ok((model, Network::from_flat(arch, &w)?))
}

fn codec() -> Result<Outcome> {
    let fuzz = codec_suite(1000, 99)?;
    let (model, net) = size_model()?;
    let t = model.param_count() as f64;
    let dense = dense_size_bytes(&net) as f64;
    let stored = compressed_size_bytes(&model, false)? as f64;
    let measured = dense / stored;
    let predicted = 32.0 * t / model.payload_bits() as f64;
    let quotient = measured / predicted;
    let headline = compression_rate(16f64.log2(), 0.5)?;
    let pass = fuzz.passed() && (0.95..=1.0).contains(&quotient);
    outcome(
        pass,
        format!(
            "{fuzz}; T={t}, C={}, measured {measured:.4}x, formula 32T/(live*ceil(log2 C)+T+32C) = {predicted:.4}x, \
             measured/formula {quotient:.5} in [0.95, 1.0]; bits-only rate {headline}x",
            model.layers[0].codebook.len()
        ),
    )
}

fn softmax_limits() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=8);
        let mu: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sigma: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let tau = 10f64.powf(rng.random_range(-6.0..1.0));
        let cb = GmmCodebook::new(mu, sigma, raw.iter().map(|p| p / total).collect(), tau)?;
        let a = cb.assignment(rng.random_range(-4.0..4.0))?;
        worst = worst.max((a.iter().sum::<f64>() - 1.0).abs());
    }
    let mut min_peak = f64::INFINITY;
    for _ in 0..1000 {
        let k = rng.random_range(2..=8);
        let mut phi: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.4)).collect();
        let top = rng.random_range(0..k);
        phi[top] = 0.5;
        let s: f64 = phi.iter().sum();
        phi.iter_mut().for_each(|p| *p /= s);
        let out = softmax_scaled(&phi, 1e-6);
        min_peak = min_peak.min(out[top]);
    }
    outcome(
        worst <= 1e-9 && min_peak > 1.0 - 1e-6,
        format!("max |sum - 1| = {worst:.2e} over 10^4 inputs; min peak at tau=1e-6 = {min_peak}"),
    )
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("compression-rate math", rates),
        ("mixture-KL bound", mixture_bound),
        ("gradient fidelity", gradients),
        ("exact sparsity", exact_sparsity),
        ("end-to-end synthetic regression", regression),
        ("prior ablation", prior_ablation),
        ("inference ablation", inference_ablation),
        ("window ablation", window_ablation),
        ("codec", codec),
        ("softmax limits", softmax_limits),
    ];
    let start = Instant::now();
    let results: Vec<(Result<Outcome>, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|&(_, f)| {
                s.spawn(move || {
                    let t = Instant::now();
                    (f(), t.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("criterion thread panicked")).collect()
    });
    let mut failed = 0;
    for (i, ((name, _), (res, secs))) in criteria.iter().zip(results).enumerate() {
        let (pass, detail) = match res {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!("[{}] criterion {}: {name}: {detail} ({secs:.1}s)", if pass { "PASS" } else { "FAIL" }, i + 1);
    }
    println!(
        "{} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
