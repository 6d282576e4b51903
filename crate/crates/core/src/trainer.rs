//! The compression loop: two-group AdamW over the objective, the cubic
//! sparsity ramp with progressive hard masking, and the one-time halving of
//! the retain temperature at the midpoint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bytes::{ByteReader, ByteWriter};
use crate::compressor::{prune_mask, CompressedMeta, PosteriorSnapshot};
use crate::config::KeyValues;
use crate::gmm::GmmCodebook;
use crate::network::{Architecture, Network};
use crate::objective::{evaluate, Batch, ObjectiveBreakdown, Prior};
use crate::optim::{AdamW, AdamWConfig, ParamGroup};
use crate::spike_slab::{retain_logit, SpikeSlabParams};
use crate::task::{Dataset, Task};
use crate::variational::{LayerQuantizer, QuantizerConfig, VariationalModel};
use crate::window::{WindowPartition, WindowStrategy};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SQSCKPT1";

/// Consecutive non-finite steps tolerated before aborting.
pub const MAX_BAD_STEPS: u32 = 3;

/// Upper bound applied to the default prior retain probability so that a
/// fully dense target still yields a valid prior.
pub const MAX_DEFAULT_LAMBDA: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Components per window.
    pub k: usize,
    pub steps: u64,
    pub batch_size: usize,
    /// Learning rate for latent weights and codebooks.
    pub quant_lr: f64,
    /// Learning rate for retain logits.
    pub prune_lr: f64,
    pub tau: f64,
    pub tau_prime: f64,
    pub target_nonzero: f64,
    pub window_strategy: WindowStrategy,
    pub iqr_multiplier: f64,
    pub sigma0_sq: f64,
    /// Prior retain probability; defaults to the target non-zero rate.
    pub lambda_prior: Option<f64>,
    /// Retain probability every weight starts from.
    pub initial_retain: f64,
    /// Steps between recomputations of the schedule mask.
    pub mask_every: u64,
    pub schedule_power: f64,
    pub prior: Prior,
    pub adam: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 16,
            steps: 2000,
            batch_size: 64,
            quant_lr: 5e-4,
            prune_lr: 0.012,
            tau: 5e-4,
            tau_prime: 0.0125,
            target_nonzero: 0.5,
            window_strategy: WindowStrategy::OutlierAware,
            iqr_multiplier: crate::window::DEFAULT_IQR_MULTIPLIER,
            sigma0_sq: 1.0,
            lambda_prior: None,
            initial_retain: 0.99,
            mask_every: 50,
            schedule_power: 3.0,
            prior: Prior::SpikeSlab,
            adam: AdamWConfig::default(),
            seed: 0,
        }
    }
}

fn prior_name(p: Prior) -> &'static str {
    match p {
        Prior::SpikeSlab => "spike-slab",
        Prior::Gaussian => "gaussian",
    }
}

impl TrainConfig {
    pub fn lambda(&self) -> f64 {
        self.lambda_prior.unwrap_or(self.target_nonzero.min(MAX_DEFAULT_LAMBDA))
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        if self.k == 0 || self.k > u16::MAX as usize {
            return Err(Error::Config(format!("k must be in 1..=65535, got {}", self.k)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.mask_every == 0 {
            return Err(Error::Config("mask_every must be positive".into()));
        }
        pos("quant_lr", self.quant_lr)?;
        pos("prune_lr", self.prune_lr)?;
        pos("tau", self.tau)?;
        pos("tau_prime", self.tau_prime)?;
        pos("sigma0_sq", self.sigma0_sq)?;
        pos("schedule_power", self.schedule_power)?;
        if !(self.target_nonzero > 0.0 && self.target_nonzero <= 1.0) {
            return Err(Error::Config(format!("nonzero must be in (0,1], got {}", self.target_nonzero)));
        }
        if !(self.initial_retain > 0.0 && self.initial_retain < 1.0) {
            return Err(Error::Config("initial_retain must be in (0,1)".into()));
        }
        if !(self.iqr_multiplier >= 0.0) {
            return Err(Error::Config("iqr_mult must be nonnegative".into()));
        }
        let l = self.lambda();
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::Config(format!("lambda_prior must be in (0,1), got {l}")));
        }
        Ok(())
    }

    /// Reads every recognized key from `kv`; unrecognized keys are left for
    /// the caller.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        macro_rules! take {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.parsed($key)? {
                    $field = v;
                }
            };
        }
        take!("k", self.k);
        take!("steps", self.steps);
        take!("batch_size", self.batch_size);
        take!("quant_lr", self.quant_lr);
        take!("prune_lr", self.prune_lr);
        take!("tau", self.tau);
        take!("tau_prime", self.tau_prime);
        take!("nonzero", self.target_nonzero);
        take!("iqr_mult", self.iqr_multiplier);
        take!("sigma0_sq", self.sigma0_sq);
        take!("initial_retain", self.initial_retain);
        take!("mask_every", self.mask_every);
        take!("schedule_power", self.schedule_power);
        take!("beta1", self.adam.beta1);
        take!("beta2", self.adam.beta2);
        take!("eps", self.adam.eps);
        take!("weight_decay", self.adam.weight_decay);
        take!("seed", self.seed);
        if let Some(v) = kv.get("window") {
            self.window_strategy = v.parse()?;
        }
        if let Some(v) = kv.get("lambda_prior") {
            self.lambda_prior = if v == "auto" { None } else { Some(kv.parsed("lambda_prior")?.expect("present")) };
        }
        if let Some(v) = kv.get("prior") {
            self.prior = match v {
                "spike-slab" => Prior::SpikeSlab,
                "gaussian" => Prior::Gaussian,
                other => return Err(Error::Config(format!("unknown prior '{other}'"))),
            };
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("k", self.k);
        kv.set("steps", self.steps);
        kv.set("batch_size", self.batch_size);
        kv.set("quant_lr", self.quant_lr);
        kv.set("prune_lr", self.prune_lr);
        kv.set("tau", self.tau);
        kv.set("tau_prime", self.tau_prime);
        kv.set("nonzero", self.target_nonzero);
        kv.set("window", self.window_strategy);
        kv.set("iqr_mult", self.iqr_multiplier);
        kv.set("sigma0_sq", self.sigma0_sq);
        kv.set("lambda_prior", self.lambda_prior.map_or("auto".to_string(), |l| l.to_string()));
        kv.set("initial_retain", self.initial_retain);
        kv.set("mask_every", self.mask_every);
        kv.set("schedule_power", self.schedule_power);
        kv.set("prior", prior_name(self.prior));
        kv.set("beta1", self.adam.beta1);
        kv.set("beta2", self.adam.beta2);
        kv.set("eps", self.adam.eps);
        kv.set("weight_decay", self.adam.weight_decay);
        kv.set("seed", self.seed);
        kv
    }

    pub fn quantizer(&self) -> QuantizerConfig {
        QuantizerConfig {
            k: self.k,
            strategy: self.window_strategy,
            iqr_multiplier: self.iqr_multiplier,
            tau: self.tau,
            seed: self.seed,
        }
    }
}

/// Scheduled non-zero fraction: `1 - (1 - target) * (step / total)^power`.
pub fn sparsity_schedule(step: u64, total: u64, target_nonzero: f64, power: f64) -> f64 {
    if total == 0 {
        return target_nonzero;
    }
    let frac = (step.min(total) as f64 / total as f64).powf(power);
    1.0 - (1.0 - target_nonzero) * frac
}

/// Keep-mask for the current schedule: the lowest retain probabilities are
/// dropped, using the same quantile rule as final pruning.
pub fn apply_schedule_mask(retain: &[f64], scheduled_nonzero: f64) -> Vec<bool> {
    prune_mask(retain, scheduled_nonzero)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub tau_prime: f64,
    pub scheduled_nonzero: f64,
    /// Keep-mask from the latest schedule update.
    pub mask: Vec<bool>,
    pub optimizer: AdamW,
    pub rng: ChaCha8Rng,
    pub bad_steps: u32,
}

/// Owns the learnable model and the optimization state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub task: Task,
    pub model: VariationalModel,
    pub state: TrainState,
    /// Objective of every completed step.
    pub history: Vec<ObjectiveBreakdown>,
}

impl Trainer {
    /// Initializes windows and codebooks from `net` and starts every weight
    /// nearly dense.
    pub fn new(net: &Network, task: Task, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let t = net.param_count();
        let s0 = retain_logit(cfg.initial_retain, cfg.tau_prime);
        let spike = SpikeSlabParams::new(vec![s0; t], cfg.tau_prime, cfg.lambda(), cfg.sigma0_sq)?;
        let model = VariationalModel::init(net, &cfg.quantizer(), spike)?;
        let quant_len = model.quant_group().len();
        let optimizer =
            AdamW::new(cfg.adam, vec![ParamGroup::new(cfg.quant_lr, quant_len), ParamGroup::new(cfg.prune_lr, t)]);
        let state = TrainState {
            step: 0,
            tau_prime: cfg.tau_prime,
            scheduled_nonzero: 1.0,
            mask: vec![true; t],
            optimizer,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            bad_steps: 0,
        };
        Ok(Self { cfg, task, model, state, history: Vec::new() })
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.cfg.steps
    }

    /// One optimizer step on a freshly sampled mini-batch.
    pub fn step(&mut self, data: &Dataset) -> Result<Option<ObjectiveBreakdown>> {
        if self.is_done() {
            return Err(Error::Usage("training already finished".into()));
        }
        if data.is_empty() {
            return Err(Error::Input("training data is empty".into()));
        }
        let total = self.cfg.steps;
        let st = &mut self.state;
        if st.step == total / 2 {
            st.tau_prime /= 2.0;
        }
        self.model.spike.tau_prime = st.tau_prime;
        if st.step.is_multiple_of(self.cfg.mask_every) {
            st.scheduled_nonzero = sparsity_schedule(st.step, total, self.cfg.target_nonzero, self.cfg.schedule_power);
            st.mask = apply_schedule_mask(&self.model.retain_probs(), st.scheduled_nonzero);
        }
        let n = data.len();
        let rows: Vec<usize> = (0..self.cfg.batch_size).map(|_| st.rng.random_range(0..n)).collect();
        let batch = Batch { data, rows: &rows, scale: n as f64 / rows.len() as f64 };
        let result = evaluate(&self.model, batch, self.task, Some(&st.mask), self.cfg.prior).and_then(|(b, g)| {
            let q = g.quant_group();
            if q.iter().chain(&g.s).all(|v| v.is_finite()) {
                Ok((b, q, g.s))
            } else {
                Err(Error::Numeric { term: "gradient" })
            }
        });
        let out = match result {
            Ok((breakdown, gq, gs)) => {
                let mut q = self.model.quant_group();
                st.optimizer.step(&mut [&mut q, &mut self.model.spike.s], &[&gq, &gs])?;
                self.model.set_quant_group(&q);
                self.model.project();
                st.bad_steps = 0;
                self.history.push(breakdown);
                Some(breakdown)
            }
            Err(Error::Numeric { term }) => {
                st.bad_steps += 1;
                if st.bad_steps >= MAX_BAD_STEPS {
                    return Err(Error::Diverged {
                        step: st.step,
                        detail: format!("{MAX_BAD_STEPS} consecutive non-finite steps (last: {term})"),
                    });
                }
                None
            }
            Err(e) => return Err(e),
        };
        st.step += 1;
        Ok(out)
    }

    pub fn run(&mut self, data: &Dataset) -> Result<()> {
        while !self.is_done() {
            self.step(data)?;
        }
        Ok(())
    }

    /// Posterior snapshot at the configured non-zero rate.
    pub fn snapshot(&self) -> Result<PosteriorSnapshot> {
        let meta = CompressedMeta { k: self.cfg.k as u16, nonzero: self.cfg.target_nonzero, seed: self.cfg.seed };
        PosteriorSnapshot::from_model(&self.model, meta)
    }

    /// Serializes config, step counters, RNG, optimizer moments and every
    /// learnable array.
    pub fn checkpoint(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        let cfg_text: String = self.cfg.to_key_values().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        w.u32(cfg_text.len() as u32);
        w.bytes(cfg_text.as_bytes());
        match self.task {
            Task::Regression { sigma_eps } => {
                w.u8(0);
                w.f64(sigma_eps);
            }
            Task::Classification => {
                w.u8(1);
                w.f64(0.0);
            }
        }
        let st = &self.state;
        w.u64(st.step);
        w.f64(st.tau_prime);
        w.f64(st.scheduled_nonzero);
        w.u32(st.bad_steps);
        w.bytes(&st.rng.get_seed());
        w.u64(st.rng.get_stream());
        w.u128(st.rng.get_word_pos());
        w.u64(st.optimizer.t);
        w.u32(st.optimizer.groups.len() as u32);
        for g in &st.optimizer.groups {
            w.f64(g.lr);
            w.f64s(&g.m);
            w.f64s(&g.v);
        }
        w.u64(st.mask.len() as u64);
        for &m in &st.mask {
            w.u8(m as u8);
        }
        write_model(&mut w, &self.model);
        w.into_inner()
    }

    /// Rebuilds a trainer from `checkpoint` output. The objective history is
    /// not part of the checkpoint.
    pub fn restore(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic);
        }
        let n = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Malformed("config is not UTF-8".into()))?;
        let mut cfg = TrainConfig::default();
        cfg.apply(&KeyValues::parse(text)?)?;
        let task = match (r.u8()?, r.f64()?) {
            (0, s) => Task::Regression { sigma_eps: s },
            (1, _) => Task::Classification,
            (t, _) => return Err(Error::Malformed(format!("unknown task tag {t}"))),
        };
        let step = r.u64()?;
        let tau_prime = r.f64()?;
        let scheduled_nonzero = r.f64()?;
        let bad_steps = r.u32()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = r.u128()?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        let t = r.u64()?;
        let ng = r.u32()? as usize;
        let mut groups = Vec::new();
        for _ in 0..ng {
            let lr = r.f64()?;
            let m = r.f64s()?;
            let v = r.f64s()?;
            groups.push(ParamGroup { lr, m, v });
        }
        let mut optimizer = AdamW::new(cfg.adam, groups);
        optimizer.t = t;
        let nm = r.len_prefix(1)?;
        let mask = (0..nm).map(|_| r.u8().map(|b| b != 0)).collect::<Result<Vec<_>>>()?;
        let model = read_model(&mut r)?;
        if r.remaining() != 0 {
            return Err(Error::Malformed("trailing bytes after checkpoint".into()));
        }
        let state = TrainState { step, tau_prime, scheduled_nonzero, mask, optimizer, rng, bad_steps };
        Ok(Self { cfg, task, model, state, history: Vec::new() })
    }
}

fn write_codebook(w: &mut ByteWriter, cb: &GmmCodebook) {
    w.f64s(&cb.mu);
    w.f64s(&cb.sigma);
    w.f64s(&cb.pi);
    w.f64(cb.tau);
}

fn read_codebook(r: &mut ByteReader<'_>) -> Result<GmmCodebook> {
    let mu = r.f64s()?;
    let sigma = r.f64s()?;
    let pi = r.f64s()?;
    let tau = r.f64()?;
    if sigma.len() != mu.len() || pi.len() != mu.len() {
        return Err(Error::Malformed("codebook arrays differ in length".into()));
    }
    Ok(GmmCodebook { mu, sigma, pi, tau })
}

fn write_model(w: &mut ByteWriter, m: &VariationalModel) {
    let dims = m.arch.dims();
    w.u32(dims.len() as u32);
    for &d in dims {
        w.u32(d as u32);
    }
    w.f64s(&m.theta);
    w.f64s(&m.spike.s);
    w.f64(m.spike.tau_prime);
    w.f64(m.spike.lambda_prior);
    w.f64(m.spike.sigma0_sq);
    for q in &m.layers {
        let p = &q.partition;
        w.u8(p.strategy.tag());
        w.u8(p.fallback as u8);
        w.f64s(&p.cuts);
        w.u32(p.codebooks.len() as u32);
        for cb in &p.codebooks {
            match cb {
                Some(cb) => {
                    w.u8(1);
                    write_codebook(w, cb);
                }
                None => w.u8(0),
            }
        }
        w.u64(q.membership.len() as u64);
        for &mb in &q.membership {
            w.u8(mb as u8);
        }
    }
}

fn read_model(r: &mut ByteReader<'_>) -> Result<VariationalModel> {
    let nd = r.u32()? as usize;
    let dims = (0..nd).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let arch = Architecture::new(dims)?;
    let theta = r.f64s()?;
    let s = r.f64s()?;
    let spike = SpikeSlabParams { s, tau_prime: r.f64()?, lambda_prior: r.f64()?, sigma0_sq: r.f64()? };
    if theta.len() != arch.param_count() || spike.s.len() != theta.len() {
        return Err(Error::Malformed("parameter arrays do not match the architecture".into()));
    }
    let mut layers = Vec::with_capacity(arch.num_layers());
    for l in 0..arch.num_layers() {
        let strategy = WindowStrategy::from_tag(r.u8()?).ok_or_else(|| Error::Malformed("window strategy".into()))?;
        let fallback = r.u8()? != 0;
        let cuts = r.f64s()?;
        let nw = r.u32()? as usize;
        let mut codebooks = Vec::with_capacity(nw);
        for _ in 0..nw {
            codebooks.push(if r.u8()? != 0 { Some(read_codebook(r)?) } else { None });
        }
        let nm = r.len_prefix(1)?;
        let membership = (0..nm).map(|_| r.u8().map(usize::from)).collect::<Result<Vec<_>>>()?;
        if nm != arch.layer_param_count(l) || membership.iter().any(|&w| w >= nw || codebooks[w].is_none()) {
            return Err(Error::Malformed(format!("layer {l} membership is inconsistent")));
        }
        layers.push(LayerQuantizer { partition: WindowPartition { strategy, cuts, codebooks, fallback }, membership });
    }
    Ok(VariationalModel { arch, theta, spike, layers })
}

/// Trains `net`, initialization included, for `cfg.steps` steps.
pub fn compress(net: &Network, data: &Dataset, task: Task, cfg: TrainConfig) -> Result<Trainer> {
    let mut trainer = Trainer::new(net, task, cfg)?;
    trainer.run(data)?;
    Ok(trainer)
}

/// Full-precision training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: 6000, batch_size: 64, lr: 1e-2, weight_decay: 0.0, seed: 0 }
    }
}

/// Mean NLL over `rows` of `data`, full-precision.
pub fn mean_nll(net: &Network, data: &Dataset, task: Task) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let out = net.forward(data.row(i))?;
        total += task.nll(data, i, &out).0;
    }
    Ok(total / data.len() as f64)
}

/// Trains `net` in full precision with AdamW on the mean NLL and a cosine
/// learning-rate decay. Returns the per-step batch loss.
pub fn pretrain(net: &mut Network, data: &Dataset, task: Task, cfg: &PretrainConfig) -> Result<Vec<f64>> {
    task.check(data)?;
    if data.is_empty() {
        return Err(Error::Input("training data is empty".into()));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("pretraining needs a positive batch size and learning rate".into()));
    }
    let t = net.param_count();
    let adam = AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() };
    let mut opt = AdamW::new(adam, vec![ParamGroup::new(cfg.lr, t)]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = net.to_flat();
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let progress = step as f64 / cfg.steps as f64;
        opt.groups[0].lr = cfg.lr * (0.02 + 0.98 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        let mut grad = vec![0.0; t];
        let mut loss = 0.0;
        let inv = 1.0 / cfg.batch_size as f64;
        for _ in 0..cfg.batch_size {
            let r = rng.random_range(0..data.len());
            let (out, tape) = net.forward_tape(data.row(r))?;
            let (l, mut g) = task.nll(data, r, &out);
            loss += l * inv;
            for v in &mut g {
                *v *= inv;
            }
            net.backward_into(&tape, &g, &mut grad)?;
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { step, detail: "non-finite pretraining loss".into() });
        }
        opt.step(&mut [&mut params], &[&grad])?;
        net.set_flat(&params);
        losses.push(loss);
    }
    Ok(losses)
}
