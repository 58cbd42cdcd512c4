//! Flat `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected so that a typo in an ablation config cannot silently fall back
//! to a default.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    /// Strided stages producing maps at H/4, H/8, H/16, H/32.
    Staged,
    /// Four equal-resolution maps at H/14, reassembled into a pyramid by the
    /// decoder.
    VitLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureBankInit {
    Random,
    /// Zero weights, unit bias: the reweighting starts as multiplication by one.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mode: EncoderMode,
    pub enc_channels: [usize; 4],
    pub dec_channels: usize,
    pub bank_channels: usize,
    pub head_channels: usize,
    pub use_feature_bank: bool,
    pub use_sampling_bank: bool,
    pub use_guided_downsample: bool,
    /// Decode blocks end with a 3x3 output conv. Banked blocks drop it.
    pub output_conv: bool,
    /// Reweight with `2 * sigmoid(conv(...))` instead of the raw conv output.
    pub bounded_feature_bank: bool,
    pub feature_bank_init: FeatureBankInit,
    pub scope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Small staged baseline used for desk-scale experiments.
    pub fn toy() -> Self {
        Self {
            mode: EncoderMode::Staged,
            enc_channels: [16, 24, 32, 48],
            dec_channels: 16,
            bank_channels: 8,
            head_channels: 8,
            use_feature_bank: false,
            use_sampling_bank: false,
            use_guided_downsample: false,
            output_conv: true,
            bounded_feature_bank: false,
            feature_bank_init: FeatureBankInit::Random,
            scope: crate::resample::DEFAULT_SCOPE,
        }
    }

    /// The toy model with every bank interaction switched on.
    pub fn toy_banked() -> Self {
        Self::toy().with_banks(true, true, true)
    }

    /// Sets the bank flags; the output conv is kept only when no bank is used.
    pub fn with_banks(mut self, feature: bool, sampling: bool, guided_down: bool) -> Self {
        self.use_feature_bank = feature;
        self.use_sampling_bank = sampling;
        self.use_guided_downsample = guided_down;
        self.output_conv = !self.banked();
        self
    }

    pub fn banked(&self) -> bool {
        self.use_feature_bank || self.use_sampling_bank
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_channels.contains(&0)
            || self.dec_channels == 0
            || self.bank_channels == 0
            || self.head_channels == 0
        {
            return Err(config_err!("channel counts must be >= 1"));
        }
        if self.use_guided_downsample && !self.use_sampling_bank {
            return Err(config_err!("use_guided_downsample requires use_sampling_bank"));
        }
        if self.output_conv && self.use_sampling_bank {
            return Err(config_err!(
                "the output conv is replaced by guided sampling; disable output_conv"
            ));
        }
        if !(self.scope.is_finite() && self.scope > 0.0) {
            return Err(config_err!("scope must be a positive finite number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to zero over the run.
    Cosine,
}

impl LrSchedule {
    /// Learning rate for update `iter` (1-based) of `total`.
    pub fn at(self, lr: f64, iter: usize, total: usize) -> f64 {
        match self {
            Self::Constant => lr,
            Self::Cosine if total <= 1 => lr,
            Self::Cosine => {
                let t = (iter - 1) as f64 / (total - 1) as f64;
                0.5 * lr * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Optimisation and evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// Evaluate every this many iterations (0 = only at start and end).
    pub eval_every: usize,
    pub median_align: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            schedule: LrSchedule::Constant,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 4,
            eval_every: 0,
            median_align: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(config_err!("{key}: expected a boolean, got {v:?}")),
    }
}

fn parse_num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
    v.parse()
        .map_err(|_| config_err!("{key}: cannot parse {v:?} as a number"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut output_conv = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err!("line {}: expected key=value", lineno + 1))?;
            let (key, v) = (key.trim(), value.trim());
            let m = &mut cfg.model;
            let t = &mut cfg.train;
            match key {
                "mode" => {
                    m.mode = match v {
                        "staged" => EncoderMode::Staged,
                        "vit" | "vit-like" => EncoderMode::VitLike,
                        _ => return Err(config_err!("mode: expected staged or vit, got {v:?}")),
                    }
                }
                "enc_channels" => {
                    let parts: Vec<usize> = v
                        .split(',')
                        .map(|p| parse_num(key, p.trim()))
                        .collect::<Result<_>>()?;
                    m.enc_channels = parts
                        .try_into()
                        .map_err(|_| config_err!("enc_channels needs exactly 4 values"))?;
                }
                "dec_channels" => m.dec_channels = parse_num(key, v)?,
                "bank_channels" => m.bank_channels = parse_num(key, v)?,
                "head_channels" => m.head_channels = parse_num(key, v)?,
                "use_feature_bank" => m.use_feature_bank = parse_bool(key, v)?,
                "use_sampling_bank" => m.use_sampling_bank = parse_bool(key, v)?,
                "use_guided_downsample" => m.use_guided_downsample = parse_bool(key, v)?,
                "output_conv" => output_conv = Some(parse_bool(key, v)?),
                "bounded_feature_bank" => m.bounded_feature_bank = parse_bool(key, v)?,
                "feature_bank_init" => {
                    m.feature_bank_init = match v {
                        "random" => FeatureBankInit::Random,
                        "identity" => FeatureBankInit::Identity,
                        _ => return Err(config_err!("feature_bank_init: expected random or identity")),
                    }
                }
                "scope" => m.scope = parse_num(key, v)?,
                "lr" => t.lr = parse_num(key, v)?,
                "schedule" => {
                    t.schedule = match v {
                        "constant" => LrSchedule::Constant,
                        "cosine" => LrSchedule::Cosine,
                        _ => return Err(config_err!("schedule: expected constant or cosine")),
                    }
                }
                "beta1" => t.beta1 = parse_num(key, v)?,
                "beta2" => t.beta2 = parse_num(key, v)?,
                "eps" => t.eps = parse_num(key, v)?,
                "batch_size" => t.batch_size = parse_num(key, v)?,
                "eval_every" => t.eval_every = parse_num(key, v)?,
                "median_align" => t.median_align = parse_bool(key, v)?,
                _ => return Err(config_err!("line {}: unknown key {key:?}", lineno + 1)),
            }
        }
        cfg.model.output_conv = output_conv.unwrap_or(!cfg.model.banked());
        cfg.model.validate()?;
        if cfg.train.batch_size == 0 {
            return Err(config_err!("batch_size must be >= 1"));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn to_kv(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mode = match m.mode {
            EncoderMode::Staged => "staged",
            EncoderMode::VitLike => "vit",
        };
        let init = match m.feature_bank_init {
            FeatureBankInit::Random => "random",
            FeatureBankInit::Identity => "identity",
        };
        let c = m.enc_channels;
        writeln!(s, "mode={mode}").unwrap();
        writeln!(s, "enc_channels={},{},{},{}", c[0], c[1], c[2], c[3]).unwrap();
        writeln!(s, "dec_channels={}", m.dec_channels).unwrap();
        writeln!(s, "bank_channels={}", m.bank_channels).unwrap();
        writeln!(s, "head_channels={}", m.head_channels).unwrap();
        writeln!(s, "use_feature_bank={}", m.use_feature_bank).unwrap();
        writeln!(s, "use_sampling_bank={}", m.use_sampling_bank).unwrap();
        writeln!(s, "use_guided_downsample={}", m.use_guided_downsample).unwrap();
        writeln!(s, "output_conv={}", m.output_conv).unwrap();
        writeln!(s, "bounded_feature_bank={}", m.bounded_feature_bank).unwrap();
        writeln!(s, "feature_bank_init={init}").unwrap();
        writeln!(s, "scope={}", m.scope).unwrap();
        writeln!(s, "lr={}", t.lr).unwrap();
        let schedule = match t.schedule {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        };
        writeln!(s, "schedule={schedule}").unwrap();
        writeln!(s, "beta1={}", t.beta1).unwrap();
        writeln!(s, "beta2={}", t.beta2).unwrap();
        writeln!(s, "eps={}", t.eps).unwrap();
        writeln!(s, "batch_size={}", t.batch_size).unwrap();
        writeln!(s, "eval_every={}", t.eval_every).unwrap();
        writeln!(s, "median_align={}", t.median_align).unwrap();
        s
    }
}

/// The four configurations of the bank ablation, in chain order:
/// baseline, +feature, +feature+upsampling, +feature+upsampling+downsampling.
pub fn ablation_chain(base: &ModelConfig) -> [(&'static str, ModelConfig); 4] {
    let b = base.clone();
    [
        ("baseline", b.clone().with_banks(false, false, false)),
        ("+feature", b.clone().with_banks(true, false, false)),
        ("+feature+upsampling", b.clone().with_banks(true, true, false)),
        ("+feature+upsampling+downsampling", b.with_banks(true, true, true)),
    ]
}
