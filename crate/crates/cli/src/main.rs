//! `sqz`: pretrain, compress, evaluate and study pruned-and-quantized MLPs.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for usage errors
//! (bad flags, bad configuration, missing input files).

mod settings;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqz_core::ablation::{inference_study, median, prior_study, window_study, StudyConfig};
use sqz_core::codec::{decode, decode_network, encode, encode_network};
use sqz_core::compressor::PosteriorSnapshot;
use sqz_core::config::KeyValues;
use sqz_core::data::gen_longtail_weights;
use sqz_core::metrics::{export_histogram, export_model_histogram, predict_all, score, CompressionReport};
use sqz_core::network::{Architecture, Network};
use sqz_core::trainer::{compress, pretrain};
use sqz_core::verify::{codec_suite, gradient_suite, mixture_bound_suite, SuiteReport};

use settings::{manifest_text, parse_list, Prepared, RunSettings};

const HIST_BINS: usize = 100;
const NETWORK_FILE: &str = "network.ckpt";
const MODEL_FILE: &str = "model.sqz";
const SNAPSHOT_FILE: &str = "snapshot.bin";
const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Parser)]
#[command(name = "sqz", version, about = "Joint pruning and quantization of feedforward networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a full-precision network and write `network.ckpt`.
    Train(TrainArgs),
    /// Compress a full-precision checkpoint into `model.sqz` and `snapshot.bin`.
    Compress(CompressArgs),
    /// Score a checkpoint or compressed model on the test split.
    Eval(EvalArgs),
    /// Run a paired comparison study.
    Ablate(AblateArgs),
    /// Run an internal consistency suite.
    Verify(VerifyArgs),
}

/// Settings shared by every command that touches data.
#[derive(Debug, Args)]
struct Common {
    /// `key = value` settings file; a run manifest works too.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for data, initialization and training.
    #[arg(long)]
    seed: Option<u64>,
    /// zero, sines, poly, teacher, moons, iris or a path to a .csv file.
    #[arg(long)]
    data: Option<String>,
    /// Number of generated samples.
    #[arg(long)]
    n: Option<usize>,
    /// Input dimension of generated regression data.
    #[arg(long)]
    dim: Option<usize>,
    /// Regression noise level or moons jitter.
    #[arg(long)]
    noise: Option<f64>,
    /// The CSV file has no header row.
    #[arg(long)]
    no_header: bool,
    /// Hidden layer widths, e.g. `32,32`.
    #[arg(long)]
    hidden: Option<String>,
    /// Any other setting as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Pretraining steps.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompressArgs {
    /// Full-precision checkpoint written by `train`.
    checkpoint: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Mixture components per window.
    #[arg(long)]
    k: Option<usize>,
    /// Fraction of weights kept.
    #[arg(long)]
    nonzero: Option<f64>,
    /// equal or outlier.
    #[arg(long)]
    window: Option<String>,
    /// IQR multiplier for the tail windows.
    #[arg(long)]
    iqr_mult: Option<f64>,
    /// Compression steps.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Greedy,
    Bayes,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// `model.sqz` or `network.ckpt`.
    model: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value_t = Mode::Greedy)]
    mode: Mode,
    /// Posterior draws for `--mode bayes`.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    samples: Option<u64>,
    /// Posterior snapshot; defaults to `snapshot.bin` beside the model.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Reference score for the drop column.
    #[arg(long)]
    baseline: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Study {
    Prior,
    Window,
    Inference,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    study: Study,
    #[command(flatten)]
    common: Common,
    /// Seeds, comma-separated; the median over seeds is reported.
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    /// Non-zero rates for the prior study.
    #[arg(long, default_value = "0.5,0.1")]
    levels: String,
    /// Codebook sizes for the inference study.
    #[arg(long, default_value = "2,4,8,16")]
    ks: String,
    /// Components per window for the window study.
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 5.0)]
    iqr_mult: f64,
    /// Synthetic weights for the window study.
    #[arg(long, default_value_t = 100_000)]
    weights: usize,
    #[arg(long, default_value_t = HIST_BINS)]
    bins: usize,
    #[arg(long, default_value = "ablate")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Gradient,
    MixtureBound,
    Codec,
    All,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    suite: Suite,
    /// Cases per suite (defaults: 100 gradient, 200 mixture-bound, 1000 codec).
    #[arg(long)]
    cases: Option<usize>,
    /// Monte-Carlo draws per mixture pair.
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative gradient error tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Corrupt the analytic gradient to exercise the checker.
    #[arg(long, hide = true)]
    inject_gradient_fault: bool,
}

/// Failure with its exit code.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<sqz_core::Error> for Failure {
    fn from(e: sqz_core::Error) -> Self {
        use sqz_core::Error as E;
        match &e {
            E::Config(_) | E::Parse { .. } => Failure::Usage(e.into()),
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Failure::Usage(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        sqz_core::Error::from(e).into()
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

fn need_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{} not found", path.display())))
    }
}

impl Common {
    fn resolve(&self, sidecar: Option<&Path>, extra: &[(&str, Option<String>)]) -> CliResult<RunSettings> {
        Ok(RunSettings::from_key_values(&self.merged(sidecar, extra)?)?)
    }

    /// The configuration file (or `sidecar`, a manifest next to an input
    /// artifact) overlaid with the flags.
    fn merged(&self, sidecar: Option<&Path>, extra: &[(&str, Option<String>)]) -> CliResult<KeyValues> {
        let mut kv = match (&self.config, sidecar) {
            (Some(path), _) => {
                need_file(path)?;
                KeyValues::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?
            }
            (None, Some(path)) if path.is_file() => KeyValues::load(path)?,
            _ => KeyValues::default(),
        };
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("data", self.data.clone()),
            ("n", self.n.map(|v| v.to_string())),
            ("dim", self.dim.map(|v| v.to_string())),
            ("noise", self.noise.map(|v| v.to_string())),
            ("header", self.no_header.then(|| "false".to_string())),
            ("hidden", self.hidden.clone()),
        ];
        for (k, v) in flags.iter().chain(extra) {
            if let Some(v) = v {
                kv.set(k, v);
            }
        }
        for pair in &self.set {
            let (k, v) = pair.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{pair}'")))?;
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn score_name(p: &Prepared) -> &'static str {
    if p.is_regression() {
        "test_mse"
    } else {
        "test_accuracy"
    }
}

fn test_score(net: &Network, p: &Prepared) -> CliResult<f64> {
    Ok(score(&predict_all(net, &p.test)?, &p.test, p.task)?)
}

fn check_arch(arch: &Architecture, p: &Prepared) -> CliResult<()> {
    if arch.input_dim() != p.train.dim || arch.output_dim() != p.train.output_dim() {
        return Err(Failure::Runtime(anyhow!(
            "network maps {} -> {} but the data has {} inputs and {} outputs",
            arch.input_dim(),
            arch.output_dim(),
            p.train.dim,
            p.train.output_dim()
        )));
    }
    Ok(())
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> CliResult<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

/// CRC footer of an encoded artifact.
fn footer_crc(bytes: &[u8]) -> String {
    let tail: [u8; 4] = bytes[bytes.len() - 4..].try_into().expect("four bytes");
    format!("{:#010x}", u32::from_le_bytes(tail))
}

fn metrics_csv(rows: &[(String, String)]) -> String {
    let mut s = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

fn print_rows(rows: &[(String, String)]) {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        println!("{k:<width$}  {v}");
    }
}

fn row(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn finish_manifest(
    dir: &Path,
    settings: &KeyValues,
    command: &str,
    start: Instant,
    mut results: Vec<(String, String)>,
) -> CliResult<()> {
    results.push(row("run.command", command));
    results.push(row("run.version", env!("CARGO_PKG_VERSION")));
    results.push(row("run.wall_clock_s", format!("{:.3}", start.elapsed().as_secs_f64())));
    write(dir, MANIFEST_FILE, manifest_text(settings, &results))?;
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let start = Instant::now();
    let settings = a.common.resolve(None, &[("pretrain_steps", a.steps.map(|v| v.to_string()))])?;
    let data = settings.prepare()?;
    let arch = Architecture::mlp(data.train.dim, &settings.hidden, data.train.output_dim())?;
    let mut net = Network::init(arch, &mut ChaCha8Rng::seed_from_u64(settings.seed()));
    let losses = pretrain(&mut net, &data.train, data.task, &settings.pretrain)?;
    let test = test_score(&net, &data)?;
    create_dir(&a.out)?;
    let bytes = encode_network(&net);
    let ckpt = write(&a.out, NETWORK_FILE, &bytes)?;
    write(&a.out, "hist_full.csv", export_histogram(&net.to_flat(), HIST_BINS)?)?;
    let mut metrics = vec![row(score_name(&data), test), row("params", net.param_count())];
    if let Some(l) = losses.last() {
        metrics.push(row("final_batch_loss", l));
    }
    write(&a.out, "metrics.csv", metrics_csv(&metrics))?;
    print_rows(&metrics);
    println!("wrote {}", ckpt.display());
    let mut results: Vec<_> = metrics.iter().map(|(k, v)| (format!("metric.{k}"), v.clone())).collect();
    results.push(row("artifact.network", ckpt.display()));
    results.push(row("artifact.network_crc32", footer_crc(&bytes)));
    finish_manifest(&a.out, &settings.to_key_values(), "train", start, results)
}

fn cmd_compress(a: &CompressArgs) -> CliResult<()> {
    let start = Instant::now();
    need_file(&a.checkpoint)?;
    let extra = [
        ("k", a.k.map(|v| v.to_string())),
        ("nonzero", a.nonzero.map(|v| v.to_string())),
        ("window", a.window.clone()),
        ("iqr_mult", a.iqr_mult.map(|v| v.to_string())),
        ("steps", a.steps.map(|v| v.to_string())),
    ];
    let settings = a.common.resolve(Some(&sibling(&a.checkpoint, MANIFEST_FILE)), &extra)?;
    let net =
        decode_network(&fs::read(&a.checkpoint)?).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let data = settings.prepare()?;
    check_arch(net.architecture(), &data)?;
    let base = test_score(&net, &data)?;
    let trainer = compress(&net, &data.train, data.task, settings.train.clone())?;
    let snap = trainer.snapshot()?;
    let model = snap.finalize(settings.train.target_nonzero)?;
    let greedy = test_score(&model.network()?, &data)?;
    let bayes_out =
        snap.predict_bayes_batch(&data.test, settings.samples, &mut ChaCha8Rng::seed_from_u64(settings.seed()))?;
    let bayes = score(&bayes_out, &data.test, data.task)?;
    let report = CompressionReport::new(&model)?;

    create_dir(&a.out)?;
    let bytes = encode(&model)?;
    let model_path = write(&a.out, MODEL_FILE, &bytes)?;
    let snap_path = write(&a.out, SNAPSHOT_FILE, snap.to_bytes())?;
    write(&a.out, "hist_full.csv", export_histogram(&net.to_flat(), HIST_BINS)?)?;
    write(&a.out, "hist_compressed.csv", export_model_histogram(&model, HIST_BINS)?)?;

    let name = score_name(&data);
    let mut metrics = vec![
        row(&format!("{name}_full_precision"), base),
        row(&format!("{name}_greedy"), greedy),
        row(&format!("{name}_bayes"), bayes),
        row("samples", settings.samples),
    ];
    let mut csv = report.to_csv();
    for (k, v) in &metrics {
        let _ = writeln!(csv, "{k},{v}");
    }
    write(&a.out, "metrics.csv", &csv)?;
    for line in report.to_csv().lines().skip(1) {
        if let Some((k, v)) = line.split_once(',') {
            metrics.push(row(k, v));
        }
    }
    print_rows(&metrics);
    println!("wrote {} and {}", model_path.display(), snap_path.display());
    let mut results: Vec<_> = metrics.iter().map(|(k, v)| (format!("metric.{k}"), v.clone())).collect();
    results.push(row("artifact.checkpoint", a.checkpoint.display()));
    results.push(row("artifact.model", model_path.display()));
    results.push(row("artifact.model_crc32", footer_crc(&bytes)));
    results.push(row("artifact.snapshot", snap_path.display()));
    finish_manifest(&a.out, &settings.to_key_values(), "compress", start, results)
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    need_file(&a.model)?;
    let samples = a.samples.map(|v| v.to_string());
    let settings = a.common.resolve(Some(&sibling(&a.model, MANIFEST_FILE)), &[("samples", samples)])?;
    let data = settings.prepare()?;
    let bytes = fs::read(&a.model)?;
    let name = score_name(&data);
    let mut rows = Vec::new();
    let value = if bytes.starts_with(b"SQSN") {
        if a.mode == Mode::Bayes {
            return Err(usage("bayes mode needs a compressed model, not a full-precision checkpoint"));
        }
        let net = decode_network(&bytes).with_context(|| format!("reading {}", a.model.display()))?;
        check_arch(net.architecture(), &data)?;
        rows.push(row("mode", "full-precision"));
        rows.push(row("compression_rate", 1));
        test_score(&net, &data)?
    } else {
        let model = decode(&bytes).with_context(|| format!("reading {}", a.model.display()))?;
        check_arch(&model.arch, &data)?;
        let report = CompressionReport::new(&model)?;
        rows.push(row("compression_rate", report.compression_rate));
        rows.push(row("effective_bits", report.effective_bits));
        rows.push(row("nonzero", report.nonzero));
        match a.mode {
            Mode::Greedy => {
                rows.insert(0, row("mode", "greedy"));
                test_score(&model.network()?, &data)?
            }
            Mode::Bayes => {
                let path = a.snapshot.clone().unwrap_or_else(|| sibling(&a.model, SNAPSHOT_FILE));
                if !path.is_file() {
                    return Err(usage(format!(
                        "bayes mode needs the posterior snapshot, and {} does not exist (pass --snapshot)",
                        path.display()
                    )));
                }
                let snap = PosteriorSnapshot::from_bytes(&fs::read(&path)?)
                    .with_context(|| format!("reading {}", path.display()))?;
                if snap.arch != model.arch {
                    return Err(Failure::Runtime(anyhow!("snapshot architecture differs from the model")));
                }
                rows.insert(0, row("mode", "bayes"));
                rows.insert(1, row("samples", settings.samples));
                let mut rng = ChaCha8Rng::seed_from_u64(settings.seed());
                score(&snap.predict_bayes_batch(&data.test, settings.samples, &mut rng)?, &data.test, data.task)?
            }
        }
    };
    rows.push(row(name, value));
    if let Some(b) = a.baseline {
        // positive drop means worse than the baseline
        let drop = if data.is_regression() { value - b } else { b - value };
        rows.push(row("baseline", b));
        rows.push(row("drop", drop));
    }
    print_rows(&rows);
    Ok(())
}

/// Study defaults overlaid with the settings given explicitly.
fn study_config(common: &Common) -> CliResult<(StudyConfig, KeyValues)> {
    let kv = common.merged(None, &[])?;
    RunSettings::check_keys(&kv)?;
    if kv.get("data").is_some_and(|d| d != "moons") {
        return Err(usage("the prior and inference studies run on the moons data"));
    }
    let mut cfg = StudyConfig::default();
    cfg.train.apply(&kv)?;
    cfg.train.validate()?;
    if let Some(v) = kv.parsed("n")? {
        cfg.moons.n = v;
    }
    if let Some(v) = kv.parsed("noise")? {
        cfg.moons.noise = v;
    }
    if let Some(v) = kv.get("hidden") {
        cfg.hidden = parse_list("hidden", v)?;
    }
    if let Some(v) = kv.parsed("samples")? {
        cfg.samples = v;
    }
    if let Some(v) = kv.parsed("pretrain_steps")? {
        cfg.pretrain.steps = v;
    }
    if let Some(v) = kv.parsed("pretrain_batch_size")? {
        cfg.pretrain.batch_size = v;
    }
    if let Some(v) = kv.parsed("pretrain_lr")? {
        cfg.pretrain.lr = v;
    }
    if let Some(v) = kv.parsed("pretrain_weight_decay")? {
        cfg.pretrain.weight_decay = v;
    }
    if cfg.samples == 0 {
        return Err(usage("Bayesian averaging needs at least one sample"));
    }
    let mut echo = cfg.train.to_key_values();
    echo.set("data", "moons");
    echo.set("n", cfg.moons.n);
    echo.set("noise", cfg.moons.noise);
    echo.set("hidden", cfg.hidden.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
    echo.set("samples", cfg.samples);
    echo.set("pretrain_steps", cfg.pretrain.steps);
    echo.set("pretrain_batch_size", cfg.pretrain.batch_size);
    echo.set("pretrain_lr", cfg.pretrain.lr);
    echo.set("pretrain_weight_decay", cfg.pretrain.weight_decay);
    Ok((cfg, echo))
}

fn cmd_ablate(a: &AblateArgs) -> CliResult<()> {
    let start = Instant::now();
    let seeds: Vec<u64> = parse_list("seeds", &a.seeds)?;
    if seeds.is_empty() {
        return Err(usage("--seeds needs at least one seed"));
    }
    create_dir(&a.out)?;
    let mut results = Vec::new();
    let echo = match a.study {
        Study::Prior => {
            let (cfg, echo) = study_config(&a.common)?;
            let levels: Vec<f64> = parse_list("levels", &a.levels)?;
            let rows = prior_study(&cfg, &levels, &seeds)?;
            let mut csv = String::from("seed,nonzero,base,spike_slab,gaussian\n");
            for r in &rows {
                let _ = writeln!(csv, "{},{},{},{},{}", r.seed, r.nonzero, r.base, r.spike_slab, r.gaussian);
            }
            write(&a.out, "prior.csv", &csv)?;
            println!("{:<8} {:>12} {:>12}", "nonzero", "spike-slab", "gaussian");
            for nz in levels {
                let at: Vec<_> = rows.iter().filter(|r| r.nonzero == nz).collect();
                let ss = median(&at.iter().map(|r| r.spike_slab).collect::<Vec<_>>());
                let g = median(&at.iter().map(|r| r.gaussian).collect::<Vec<_>>());
                println!("{nz:<8} {ss:>12.4} {g:>12.4}");
                results.push(row(&format!("metric.median_accuracy_spike_slab_{nz}"), ss));
                results.push(row(&format!("metric.median_accuracy_gaussian_{nz}"), g));
            }
            echo
        }
        Study::Inference => {
            let (cfg, echo) = study_config(&a.common)?;
            let ks: Vec<usize> = parse_list("ks", &a.ks)?;
            let rows = inference_study(&cfg, &ks, &seeds)?;
            let mut csv = String::from("seed,k,base,greedy,bayes,greedy_drop,bayes_drop\n");
            for r in &rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    r.seed,
                    r.k,
                    r.base,
                    r.greedy,
                    r.bayes,
                    r.greedy_drop(),
                    r.bayes_drop()
                );
            }
            write(&a.out, "inference.csv", &csv)?;
            println!("{:<4} {:>12} {:>12}", "K", "greedy drop", "bayes drop");
            for k in ks {
                let at: Vec<_> = rows.iter().filter(|r| r.k == k).collect();
                let gd = median(&at.iter().map(|r| r.greedy_drop()).collect::<Vec<_>>());
                let bd = median(&at.iter().map(|r| r.bayes_drop()).collect::<Vec<_>>());
                println!("{k:<4} {gd:>12.4} {bd:>12.4}");
                results.push(row(&format!("metric.median_greedy_drop_k{k}"), gd));
                results.push(row(&format!("metric.median_bayes_drop_k{k}"), bd));
            }
            echo
        }
        Study::Window => {
            let settings = a.common.merged(None, &[])?;
            RunSettings::check_keys(&settings)?;
            let seed = seeds[0];
            let w = gen_longtail_weights(a.weights, 0.01, 1.0, seed);
            let s = window_study(&w, a.k, a.iqr_mult, a.bins, seed)?;
            write(&a.out, "hist_full.csv", s.full.to_csv())?;
            write(&a.out, "hist_outlier.csv", s.outlier.histogram.to_csv())?;
            write(&a.out, "hist_equal.csv", s.equal.histogram.to_csv())?;
            let mut csv = String::from("strategy,total_variation,tail_in_outer,tail_points\n");
            println!("{:<10} {:>16} {:>14}", "strategy", "total variation", "tail served");
            for arm in [&s.outlier, &s.equal] {
                let _ = writeln!(csv, "{},{},{},{}", arm.strategy, arm.tv, arm.tail_in_outer, s.tail_points);
                println!(
                    "{:<10} {:>16.5} {:>8}/{}",
                    arm.strategy.to_string(),
                    arm.tv,
                    arm.tail_in_outer,
                    s.tail_points
                );
                results.push(row(&format!("metric.tv_{}", arm.strategy), arm.tv));
            }
            write(&a.out, "window.csv", &csv)?;
            settings
        }
    };
    results.push(row("run.seeds", &a.seeds));
    finish_manifest(&a.out, &echo, &format!("ablate {:?}", a.study).to_lowercase(), start, results)
}

fn cmd_verify(a: &VerifyArgs) -> CliResult<()> {
    let run = |suite: Suite| -> CliResult<SuiteReport> {
        Ok(match suite {
            Suite::Gradient => gradient_suite(a.cases.unwrap_or(100), a.seed, a.tolerance, a.inject_gradient_fault)?,
            Suite::MixtureBound => mixture_bound_suite(a.cases.unwrap_or(200), a.samples, a.seed)?,
            Suite::Codec => codec_suite(a.cases.unwrap_or(1000), a.seed)?,
            Suite::All => unreachable!("expanded by the caller"),
        })
    };
    let suites = match a.suite {
        Suite::All => vec![Suite::Gradient, Suite::MixtureBound, Suite::Codec],
        one => vec![one],
    };
    let mut failed = 0;
    for s in suites {
        let report = run(s)?;
        println!("[{}] {report}", if report.passed() { "PASS" } else { "FAIL" });
        for f in report.failures.iter().take(5) {
            println!("    {f}");
        }
        failed += usize::from(!report.passed());
    }
    if failed > 0 {
        return Err(Failure::Runtime(anyhow!("{failed} suite(s) failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
