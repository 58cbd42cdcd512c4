//! Named parameter storage and its binding onto a tape.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{EncoderMode, FeatureBankInit, ModelConfig};
use crate::error::{config_err, Result};
use crate::footprint::Component;
use crate::layers::{bias_shape, Conv, ConvParams};
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Kaiming,
    Zero,
    /// Zero weights, constant bias.
    ConstBias(f64),
    /// Kaiming weights, constant bias.
    KaimingBias(f64),
}

/// Static description of one convolution in the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub init: Init,
    pub component: Component,
}

impl ConvSpec {
    fn new(name: impl Into<String>, c_in: usize, c_out: usize, k: usize, component: Component) -> Self {
        Self {
            name: name.into(),
            c_in,
            c_out,
            k,
            stride: 1,
            init: Init::Kaiming,
            component,
        }
    }

    fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    fn init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }
}

/// Decode blocks run deepest level first; block `j` consumes encoder level
/// `3 - j`.
pub fn block_level(j: usize) -> usize {
    3 - j
}

/// Every convolution of the configured network, in initialisation order.
pub fn conv_specs(cfg: &ModelConfig) -> Vec<ConvSpec> {
    use Component::*;
    let e = cfg.enc_channels;
    let (cd, cb, hc) = (cfg.dec_channels, cfg.bank_channels, cfg.head_channels);
    let stride = match cfg.mode {
        EncoderMode::Staged => 2,
        EncoderMode::VitLike => 1,
    };
    let mut v = vec![ConvSpec::new("enc.stem", 3, e[0], 3, Encoder).stride(stride)];
    for i in 0..4 {
        let c_prev = if i == 0 { e[0] } else { e[i - 1] };
        v.push(ConvSpec::new(format!("enc.{i}.down"), c_prev, e[i], 3, Encoder).stride(stride));
        v.push(ConvSpec::new(format!("enc.{i}.conv"), e[i], e[i], 3, Encoder));
    }

    if cfg.banked() {
        for (l, &c) in e.iter().enumerate() {
            v.push(ConvSpec::new(format!("bank.proj.{l}"), c, cb, 1, BankGenerator));
        }
        v.push(ConvSpec::new("bank.fuse", 4 * cb, cb, 1, BankGenerator));
        if cfg.use_feature_bank {
            v.push(ConvSpec::new("bank.feat.conv1", cb, cb, 1, BankGenerator));
            v.push(ConvSpec::new("bank.feat.conv2", cb, cb, 1, BankGenerator));
        }
        if cfg.use_sampling_bank {
            v.push(ConvSpec::new("bank.sample.conv1", cb, cb, 1, BankGenerator));
            v.push(ConvSpec::new("bank.sample.conv2", cb, cb, 1, BankGenerator));
        }
    }

    for j in 0..4 {
        let p = format!("dec.{j}");
        v.push(ConvSpec::new(format!("{p}.lateral"), e[block_level(j)], cd, 1, DecoderTrunk));
        v.push(ConvSpec::new(format!("{p}.rcu_enc.conv1"), cd, cd, 3, DecoderTrunk));
        v.push(ConvSpec::new(format!("{p}.rcu_enc.conv2"), cd, cd, 3, DecoderTrunk));
        if j > 0 {
            v.push(ConvSpec::new(format!("{p}.rcu_prev.conv1"), cd, cd, 3, DecoderTrunk));
            v.push(ConvSpec::new(format!("{p}.rcu_prev.conv2"), cd, cd, 3, DecoderTrunk));
        }
        if cfg.use_feature_bank {
            let init = match cfg.feature_bank_init {
                FeatureBankInit::Random => Init::Kaiming,
                FeatureBankInit::Identity => Init::ConstBias(1.0),
            };
            v.push(ConvSpec::new(format!("{p}.feature_conv"), cb + cd, cd, 1, FeatureBank).init(init));
        }
        if cfg.use_guided_downsample {
            v.push(ConvSpec::new(format!("{p}.sampler_down"), cd, 2, 3, Samplers).init(Init::Zero));
        }
        if cfg.use_sampling_bank {
            v.push(ConvSpec::new(format!("{p}.sampler_up"), cb, 2, 3, Samplers).init(Init::Zero));
        }
        if cfg.output_conv {
            v.push(ConvSpec::new(format!("{p}.output_conv"), cd, cd, 3, DecoderTrunk));
        }
    }

    v.push(ConvSpec::new("head.conv1", cd, hc, 3, Head));
    v.push(ConvSpec::new("head.conv2", hc, 1, 3, Head).init(Init::KaimingBias(1.0)));
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub conv: ConvParams<T>,
    pub component: Component,
}

/// Convolution parameters keyed by name, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// Seeded initialisation of every conv in `conv_specs(cfg)`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = IndexMap::new();
        for s in conv_specs(cfg) {
            let conv = match s.init {
                Init::Kaiming => ConvParams::kaiming(s.c_out, s.c_in, s.k, &mut rng)?,
                Init::Zero => ConvParams::zeros(s.c_out, s.c_in, s.k)?,
                Init::ConstBias(b) => {
                    let mut p = ConvParams::zeros(s.c_out, s.c_in, s.k)?;
                    p.bias = Tensor::full(bias_shape(s.c_out), T::from_f64_lossy(b));
                    p
                }
                Init::KaimingBias(b) => {
                    let mut p = ConvParams::kaiming(s.c_out, s.c_in, s.k, &mut rng)?;
                    p.bias = Tensor::full(bias_shape(s.c_out), T::from_f64_lossy(b));
                    p
                }
            }
            .with_stride(s.stride);
            entries.insert(
                s.name,
                ParamEntry {
                    conv,
                    component: s.component,
                },
            );
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry<T>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Every tensor as `("<conv>.weight" | "<conv>.bias", tensor)`.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::with_capacity(2 * self.entries.len());
        for (name, e) in &self.entries {
            out.push((format!("{name}.weight"), &e.conv.weight));
            out.push((format!("{name}.bias"), &e.conv.bias));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(2 * self.entries.len());
        for e in self.entries.values_mut() {
            out.push(&mut e.conv.weight);
            out.push(&mut e.conv.bias);
        }
        out
    }

    /// Total scalar count over all instantiated tensors.
    pub fn param_count(&self) -> usize {
        self.entries.values().map(|e| e.conv.param_count()).sum()
    }

    pub fn param_count_by_component(&self) -> Vec<(Component, usize)> {
        Component::ALL
            .iter()
            .map(|&c| {
                let n = self
                    .entries
                    .values()
                    .filter(|e| e.component == c)
                    .map(|e| e.conv.param_count())
                    .sum();
                (c, n)
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let entries = self
            .entries
            .iter()
            .map(|(k, e)| {
                let conv = ConvParams {
                    weight: e.conv.weight.cast(),
                    bias: e.conv.bias.cast(),
                    stride: e.conv.stride,
                    padding: e.conv.padding,
                };
                (
                    k.clone(),
                    ParamEntry {
                        conv,
                        component: e.component,
                    },
                )
            })
            .collect();
        ParamStore { entries }
    }

    /// Replaces tensors in `tensors()` order; shapes must match exactly.
    pub fn load_tensors(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        let expected = 2 * self.entries.len();
        if values.len() != expected {
            return Err(config_err!(
                "checkpoint holds {} tensors, model expects {expected}",
                values.len()
            ));
        }
        for (slot, v) in self.tensors_mut().into_iter().zip(values) {
            if slot.shape() != v.shape() {
                return Err(config_err!(
                    "checkpoint tensor shape {:?} does not match {:?}",
                    v.shape(),
                    slot.shape()
                ));
            }
            *slot = v;
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        let convs = self
            .entries
            .iter()
            .map(|(k, e)| (k.clone(), e.conv.bind(tape)))
            .collect();
        Bound { convs }
    }
}

/// Convolutions of a [`ParamStore`] recorded on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    convs: IndexMap<String, Conv>,
}

impl FromIterator<(String, Conv)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, Conv)>>(iter: I) -> Self {
        Self {
            convs: iter.into_iter().collect(),
        }
    }
}

impl Bound {
    pub fn conv(&self, name: &str) -> Result<Conv> {
        self.convs
            .get(name)
            .copied()
            .ok_or_else(|| config_err!("missing parameter {name:?}"))
    }

    pub fn get(&self, name: &str) -> Option<Conv> {
        self.convs.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Conv)> {
        self.convs.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Parameter vars in [`ParamStore::tensors`] order.
    pub fn vars(&self) -> Vec<Var> {
        self.convs.values().flat_map(|c| [c.weight, c.bias]).collect()
    }

    /// Gradients in [`ParamStore::tensors`] order; unreached params get zeros.
    pub fn grads<T: Scalar>(&self, tape: &Tape<T>, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars()
            .into_iter()
            .map(|v| grads.get_or_zeros(v, tape.shape(v)))
            .collect()
    }
}
