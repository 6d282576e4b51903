use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqz_core::ablation::{regression_bench, RegressionBench};
use sqz_core::codec::decode_network;
use sqz_core::metrics::Histogram;
use sqz_core::network::{Architecture, Network};

fn sqz(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqz")).args(args).current_dir(dir).output().expect("spawn sqz")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = sqz(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn value(table: &str, key: &str) -> f64 {
    table
        .lines()
        .find_map(|l| l.split_once(char::is_whitespace).filter(|(k, _)| *k == key).map(|(_, v)| v.trim().to_string()))
        .unwrap_or_else(|| panic!("no {key} in\n{table}"))
        .parse()
        .unwrap()
}

const SMALL: [&str; 6] = ["--n", "400", "--hidden", "8", "--data", "sines"];

fn small_train(dir: &Path, out: &str, steps: &str) {
    let mut args = vec!["train", "--steps", steps, "--out", out];
    args.extend(SMALL);
    ok(&args, dir);
}

#[test]
fn zero_step_train_writes_initialized_network() {
    let tmp = tempfile::tempdir().unwrap();
    small_train(tmp.path(), "r", "0");
    let net = decode_network(&fs::read(tmp.path().join("r/network.ckpt")).unwrap()).unwrap();
    let arch = Architecture::mlp(4, &[8], 1).unwrap();
    assert_eq!(net, Network::init(arch, &mut ChaCha8Rng::seed_from_u64(0)));
    for f in ["manifest.txt", "metrics.csv", "hist_full.csv"] {
        assert!(tmp.path().join("r").join(f).is_file(), "{f}");
    }
}

#[test]
fn fixed_seed_train_reproduces_and_manifest_replays() {
    let tmp = tempfile::tempdir().unwrap();
    small_train(tmp.path(), "a", "200");
    small_train(tmp.path(), "b", "200");
    let a = fs::read(tmp.path().join("a/network.ckpt")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b/network.ckpt")).unwrap());
    ok(&["train", "--config", "a/manifest.txt", "--out", "c"], tmp.path());
    assert_eq!(a, fs::read(tmp.path().join("c/network.ckpt")).unwrap());
    let other =
        ok(&["train", "--steps", "200", "--seed", "5", "--out", "d", "--n", "400", "--hidden", "8"], tmp.path());
    assert!(!other.is_empty());
    assert_ne!(a, fs::read(tmp.path().join("d/network.ckpt")).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 6] = [
        &["train", "--config", "missing.txt"],
        &["compress", "missing.ckpt"],
        &["eval", "missing.sqz"],
        &["train", "--set", "bogus=1"],
        &["train", "--data", "nosuchdata"],
        &["frobnicate"],
    ];
    for args in cases {
        let out = sqz(args, tmp.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
    fs::write(tmp.path().join("bad.txt"), "k = 4\nnot a pair\n").unwrap();
    let out = sqz(&["train", "--config", "bad.txt"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn compress_then_eval_both_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_train(d, "r", "300");
    // a near-zero temperature makes every assignment one-hot
    let report = ok(&["compress", "r/network.ckpt", "--steps", "60", "--k", "4", "--set", "tau=1e-9", "--out", "c"], d);
    for f in ["model.sqz", "snapshot.bin", "manifest.txt", "metrics.csv", "hist_full.csv", "hist_compressed.csv"] {
        assert!(d.join("c").join(f).is_file(), "{f}");
    }
    let greedy = ok(&["eval", "c/model.sqz"], d);
    let bayes = ok(&["eval", "c/model.sqz", "--mode", "bayes", "--samples", "3"], d);
    assert_eq!(value(&greedy, "test_mse"), value(&report, "test_mse_greedy"));
    // the stored codebook is single precision, the snapshot's is not
    let (g, b) = (value(&greedy, "test_mse"), value(&bayes, "test_mse"));
    assert!((g - b).abs() <= 1e-5 * g, "{g} vs {b}");
    assert_eq!(value(&greedy, "compression_rate"), value(&report, "compression_rate"));
    let fp = ok(&["eval", "r/network.ckpt", "--baseline", "0"], d);
    assert_eq!(value(&fp, "compression_rate"), 1.0);
    assert_eq!(value(&fp, "drop"), value(&fp, "test_mse"));
    let h = Histogram::from_csv(&fs::read_to_string(d.join("c/hist_compressed.csv")).unwrap()).unwrap();
    assert_eq!(h.total(), 49);

    let zero = sqz(&["eval", "c/model.sqz", "--mode", "bayes", "--samples", "0"], d);
    assert_eq!(zero.status.code(), Some(2));
    fs::remove_file(d.join("c/snapshot.bin")).unwrap();
    let missing = sqz(&["eval", "c/model.sqz", "--mode", "bayes"], d);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("snapshot"));

    let mut bytes = fs::read(d.join("c/model.sqz")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    fs::write(d.join("c/model.sqz"), bytes).unwrap();
    let corrupt = sqz(&["eval", "c/model.sqz"], d);
    assert_eq!(corrupt.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&corrupt.stderr).contains("checksum"));
}

#[test]
fn divergence_aborts_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    small_train(tmp.path(), "r", "50");
    let out = sqz(
        &["compress", "r/network.ckpt", "--steps", "20", "--set", "quant_lr=1e300", "--set", "prune_lr=1e300"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn unpruned_large_codebook_keeps_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["train", "--data", "iris", "--hidden", "16", "--steps", "1500", "--out", "r"], d);
    let base = value(&ok(&["eval", "r/network.ckpt"], d), "test_accuracy");
    ok(&["compress", "r/network.ckpt", "--k", "16", "--nonzero", "1", "--steps", "300", "--out", "c"], d);
    let acc = value(&ok(&["eval", "c/model.sqz"], d), "test_accuracy");
    assert!(base > 0.85, "{base}");
    assert!(acc >= base - 0.05, "{acc} vs {base}");
}

#[test]
fn verify_detects_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&["verify", "--suite", "gradient", "--cases", "8"], tmp.path());
    assert!(out.starts_with("[PASS]"), "{out}");
    let bad = sqz(
        &["verify", "--suite", "gradient", "--cases", "4", "--tolerance", "1e-2", "--inject-gradient-fault"],
        tmp.path(),
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).starts_with("[FAIL]"));
    let ok_codec = ok(&["verify", "--suite", "codec", "--cases", "40"], tmp.path());
    assert!(ok_codec.contains("0 failures"));
}

#[test]
fn window_study_writes_histograms() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&["ablate", "--study", "window", "--weights", "20000", "--out", "w"], tmp.path());
    assert!(out.contains("outlier") && out.contains("equal"));
    for f in ["hist_full.csv", "hist_outlier.csv", "hist_equal.csv"] {
        let h = Histogram::from_csv(&fs::read_to_string(tmp.path().join("w").join(f)).unwrap()).unwrap();
        assert_eq!(h.counts.len(), 100);
        assert_eq!(h.total(), 20_000, "{f}");
    }
}

#[test]
fn default_run_reproduces_the_library_benchmark() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["train", "--out", "r"], d);
    ok(&["compress", "r/network.ckpt", "--out", "c"], d);
    let bench = regression_bench(&RegressionBench::default()).unwrap();
    assert_eq!(fs::read(d.join("c/model.sqz")).unwrap(), bench.encoded);
}
