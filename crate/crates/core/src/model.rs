//! Encoder, decode blocks and the full depth network.

use crate::banks::{apply_feature_bank, generate_banks, BankGenerator, BankPair};
use crate::config::{EncoderMode, ModelConfig};
use crate::error::{config_err, Result};
use crate::footprint::Component;
use crate::layers::{Conv, ResidualConvUnit};
use crate::params::{block_level, Bound, ParamStore};
use crate::resample::{guided_up_down, GuidedSampler};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Patch size of the vit-like encoder.
pub const PATCH: usize = 14;
/// Total stride of the staged encoder.
pub const STAGED_STRIDE: usize = 32;

/// Spatial dims of the four encoder maps for an `h x w` input.
pub fn encoder_dims(mode: EncoderMode, h: usize, w: usize) -> Result<[(usize, usize); 4]> {
    match mode {
        EncoderMode::Staged => {
            if h < STAGED_STRIDE || w < STAGED_STRIDE || h % STAGED_STRIDE != 0 || w % STAGED_STRIDE != 0 {
                return Err(config_err!(
                    "staged encoder needs H and W divisible by {STAGED_STRIDE}, got {h}x{w}"
                ));
            }
            Ok([4, 8, 16, 32].map(|s| (h / s, w / s)))
        }
        EncoderMode::VitLike => {
            if h < 2 * PATCH || w < 2 * PATCH {
                return Err(config_err!("vit-like encoder needs H, W >= {}, got {h}x{w}", 2 * PATCH));
            }
            Ok([(h / PATCH, w / PATCH); 4])
        }
    }
}

/// Decoder-side pyramid of the vit-like maps: `4x, 2x, 1x, 1/2x` of the
/// token grid.
pub fn reassemble_dims(h: usize, w: usize) -> [(usize, usize); 4] {
    [(4 * h, 4 * w), (2 * h, 2 * w), (h, w), (h.div_ceil(2), w.div_ceil(2))]
}

/// Map dims as seen by the decoder and bank generator.
pub fn level_dims(cfg: &ModelConfig, h: usize, w: usize) -> Result<[(usize, usize); 4]> {
    let d = encoder_dims(cfg.mode, h, w)?;
    Ok(match cfg.mode {
        EncoderMode::Staged => d,
        EncoderMode::VitLike => reassemble_dims(d[0].0, d[0].1),
    })
}

/// Output resolution of decode block `j`: the next level's map, or twice
/// the shallowest map for the last block.
pub fn block_target(levels: &[(usize, usize); 4], j: usize) -> (usize, usize) {
    let l = block_level(j);
    if l == 0 {
        (2 * levels[0].0, 2 * levels[0].1)
    } else {
        levels[l - 1]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Encoder {
    pub mode: EncoderMode,
    pub stem: Conv,
    pub stages: [(Conv, Conv); 4],
}

impl Encoder {
    pub fn from_bound(b: &Bound, mode: EncoderMode) -> Result<Self> {
        let stage = |i: usize| -> Result<(Conv, Conv)> {
            Ok((b.conv(&format!("enc.{i}.down"))?, b.conv(&format!("enc.{i}.conv"))?))
        };
        Ok(Self {
            mode,
            stem: b.conv("enc.stem")?,
            stages: [stage(0)?, stage(1)?, stage(2)?, stage(3)?],
        })
    }

    pub fn encode<T: Scalar>(&self, tape: &mut Tape<T>, image: Var) -> Result<[Var; 4]> {
        let s = tape.shape(image);
        if s.c != 3 {
            return Err(config_err!("encoder expects 3 image channels, got {}", s.c));
        }
        let dims = encoder_dims(self.mode, s.h, s.w)?;
        let mut x = image;
        if self.mode == EncoderMode::VitLike {
            x = tape.bilinear_resize(x, dims[0].0, dims[0].1)?;
        }
        x = self.stem.apply(tape, x)?;
        x = tape.relu(x)?;
        let mut out = Vec::with_capacity(4);
        for (down, conv) in &self.stages {
            x = down.apply(tape, x)?;
            x = tape.relu(x)?;
            x = conv.apply(tape, x)?;
            x = tape.relu(x)?;
            out.push(x);
        }
        Ok(out.try_into().expect("four stages"))
    }
}

/// Which bank interactions a banked block performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BlockFlags {
    pub feature_bank: bool,
    pub sampling_bank: bool,
    pub guided_downsample: bool,
    pub bounded_feature_bank: bool,
}

impl BlockFlags {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self {
            feature_bank: cfg.use_feature_bank,
            sampling_bank: cfg.use_sampling_bank,
            guided_downsample: cfg.use_guided_downsample,
            bounded_feature_bank: cfg.bounded_feature_bank,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeBlock<T> {
    /// 1x1 projection of the encoder map to decoder width.
    pub lateral: Conv,
    pub rcu_enc: ResidualConvUnit,
    pub rcu_prev: Option<ResidualConvUnit>,
    pub output_conv: Option<Conv>,
    pub feature_conv: Option<Conv>,
    pub sampler_down: Option<GuidedSampler<T>>,
    pub sampler_up: Option<GuidedSampler<T>>,
}

impl<T: Scalar> DecodeBlock<T> {
    pub fn from_bound(b: &Bound, j: usize, scope: T) -> Result<Self> {
        let p = format!("dec.{j}");
        let rcu = |name: &str| -> Option<ResidualConvUnit> {
            Some(ResidualConvUnit {
                conv1: b.get(&format!("{p}.{name}.conv1"))?,
                conv2: b.get(&format!("{p}.{name}.conv2"))?,
            })
        };
        let sampler = |name: &str| {
            b.get(&format!("{p}.{name}"))
                .map(|offset| GuidedSampler { offset, scope })
        };
        Ok(Self {
            lateral: b.conv(&format!("{p}.lateral"))?,
            rcu_enc: rcu("rcu_enc").ok_or_else(|| config_err!("missing {p}.rcu_enc"))?,
            rcu_prev: rcu("rcu_prev"),
            output_conv: b.get(&format!("{p}.output_conv")),
            feature_conv: b.get(&format!("{p}.feature_conv")),
            sampler_down: sampler("sampler_down"),
            sampler_up: sampler("sampler_up"),
        })
    }

    /// `rcu_enc(lateral(o_ei)) [+ rcu_prev(o_prev)]`.
    fn fuse(&self, tape: &mut Tape<T>, o_ei: Var, o_prev: Option<Var>) -> Result<Var> {
        let x = self.lateral.apply(tape, o_ei)?;
        let x1 = self.rcu_enc.apply(tape, x)?;
        match (o_prev, self.rcu_prev) {
            (None, _) => Ok(x1),
            (Some(prev), Some(rcu)) => {
                let (a, b) = (tape.shape(x1), tape.shape(prev));
                if a != b {
                    return Err(config_err!("o_prev {b:?} does not match the block input {a:?}"));
                }
                let x2 = rcu.apply(tape, prev)?;
                tape.add(x1, x2)
            }
            (Some(_), None) => Err(config_err!("block has no residual unit for o_prev")),
        }
    }
}

fn resize_if_needed<T: Scalar>(tape: &mut Tape<T>, x: Var, (h, w): (usize, usize)) -> Result<Var> {
    if tape.shape(x).spatial() == (h, w) {
        Ok(x)
    } else {
        tape.bilinear_resize(x, h, w)
    }
}

/// Fuse, output conv (when present), bilinear resize to `target`.
pub fn decode_block_baseline<T: Scalar>(
    tape: &mut Tape<T>,
    o_ei: Var,
    o_prev: Option<Var>,
    p: &DecodeBlock<T>,
    target: (usize, usize),
) -> Result<Var> {
    let prev = tape.set_component(Component::DecoderTrunk);
    let out = p.fuse(tape, o_ei, o_prev).and_then(|mut x| {
        if let Some(conv) = p.output_conv {
            x = conv.apply(tape, x)?;
        }
        tape.bilinear_resize(x, target.0, target.1)
    });
    tape.set_component(prev);
    out
}

/// Fuse, optional feature-bank reweighting, then either guided up/down
/// sampling from the sampling bank or (output conv and) bilinear resize.
pub fn decode_block_banked<T: Scalar>(
    tape: &mut Tape<T>,
    o_ei: Var,
    o_prev: Option<Var>,
    banks: &BankPair,
    p: &DecodeBlock<T>,
    flags: BlockFlags,
    target: (usize, usize),
) -> Result<Var> {
    let prev = tape.set_component(Component::DecoderTrunk);
    let out = banked_inner(tape, o_ei, o_prev, banks, p, flags, target);
    tape.set_component(prev);
    out
}

fn banked_inner<T: Scalar>(
    tape: &mut Tape<T>,
    o_ei: Var,
    o_prev: Option<Var>,
    banks: &BankPair,
    p: &DecodeBlock<T>,
    flags: BlockFlags,
    target: (usize, usize),
) -> Result<Var> {
    if flags.guided_downsample && !flags.sampling_bank {
        return Err(config_err!("guided downsampling requires the sampling bank"));
    }
    let mut x = p.fuse(tape, o_ei, o_prev)?;

    if flags.feature_bank {
        let bank = banks.feat.ok_or_else(|| config_err!("feature bank not generated"))?;
        let conv = p
            .feature_conv
            .ok_or_else(|| config_err!("block has no feature-bank conv"))?;
        tape.set_component(Component::FeatureBank);
        let local = resize_if_needed(tape, bank, tape.shape(x).spatial())?;
        x = apply_feature_bank(tape, local, x, &conv, flags.bounded_feature_bank)?;
        tape.set_component(Component::DecoderTrunk);
    }

    if flags.sampling_bank {
        if p.output_conv.is_some() {
            return Err(config_err!("guided sampling replaces the output conv"));
        }
        let bank = banks.sample.ok_or_else(|| config_err!("sampling bank not generated"))?;
        let up = p
            .sampler_up
            .ok_or_else(|| config_err!("block has no upsampling sampler"))?;
        let down = if flags.guided_downsample {
            Some(
                p.sampler_down
                    .ok_or_else(|| config_err!("block has no downsampling sampler"))?,
            )
        } else {
            None
        };
        tape.set_component(Component::Samplers);
        guided_up_down(tape, x, bank, down.as_ref(), &up, target)
    } else {
        if let Some(conv) = p.output_conv {
            x = conv.apply(tape, x)?;
        }
        tape.bilinear_resize(x, target.0, target.1)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Head {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl Head {
    /// conv -> relu -> conv -> relu -> resize to `(h, w)`.
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, h: usize, w: usize) -> Result<Var> {
        let y = self.conv1.apply(tape, x)?;
        let y = tape.relu(y)?;
        let y = self.conv2.apply(tape, y)?;
        let y = tape.relu(y)?;
        resize_if_needed(tape, y, (h, w))
    }
}

/// A [`ParamStore`] bound onto one tape, split into its parts.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub cfg: ModelConfig,
    pub bound: Bound,
    pub encoder: Encoder,
    pub bank_generator: Option<BankGenerator>,
    pub blocks: [DecodeBlock<T>; 4],
    pub head: Head,
}

/// Inputs and output of one decode block.
#[derive(Debug, Clone, Copy)]
pub struct BlockTrace {
    pub o_ei: Var,
    pub o_prev: Option<Var>,
    pub banks: Option<BankPair>,
    pub output: Var,
}

/// Every intermediate a forward pass exposes for inspection.
#[derive(Debug, Clone)]
pub struct Trace {
    pub image: Var,
    /// Encoder maps, after reassembly in vit-like mode.
    pub maps: [Var; 4],
    pub banks: Option<BankPair>,
    pub blocks: Vec<BlockTrace>,
    pub depth: Var,
}

impl<T: Scalar> Network<T> {
    pub fn bind(cfg: &ModelConfig, store: &ParamStore<T>, tape: &mut Tape<T>) -> Result<Self> {
        Self::from_bound(cfg, store.bind(tape))
    }

    /// Assembles the network from convolutions already on a tape.
    pub fn from_bound(cfg: &ModelConfig, bound: Bound) -> Result<Self> {
        cfg.validate()?;
        let scope = T::from_f64_lossy(cfg.scope);
        let block = |j| DecodeBlock::from_bound(&bound, j, scope);
        Ok(Self {
            cfg: cfg.clone(),
            encoder: Encoder::from_bound(&bound, cfg.mode)?,
            bank_generator: if cfg.banked() {
                Some(BankGenerator::from_bound(&bound)?)
            } else {
                None
            },
            blocks: [block(0)?, block(1)?, block(2)?, block(3)?],
            head: Head {
                conv1: bound.conv("head.conv1")?,
                conv2: bound.conv("head.conv2")?,
            },
            bound,
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, image: Var) -> Result<Trace> {
        let prev = tape.set_component(Component::Encoder);
        let out = self.forward_inner(tape, image);
        tape.set_component(prev);
        out
    }

    fn forward_inner(&self, tape: &mut Tape<T>, image: Var) -> Result<Trace> {
        let (h, w) = tape.shape(image).spatial();
        let levels = level_dims(&self.cfg, h, w)?;
        let mut maps = self.encoder.encode(tape, image)?;

        tape.set_component(Component::DecoderTrunk);
        for (m, &dims) in maps.iter_mut().zip(&levels) {
            *m = resize_if_needed(tape, *m, dims)?;
        }

        let banks = match &self.bank_generator {
            Some(g) => {
                tape.set_component(Component::BankGenerator);
                Some(generate_banks(tape, &maps, g)?)
            }
            None => None,
        };

        let flags = BlockFlags::from_config(&self.cfg);
        let mut blocks = Vec::with_capacity(4);
        let mut o_prev = None;
        for (j, p) in self.blocks.iter().enumerate() {
            let o_ei = maps[block_level(j)];
            let target = block_target(&levels, j);
            let output = match &banks {
                Some(b) => decode_block_banked(tape, o_ei, o_prev, b, p, flags, target)?,
                None => decode_block_baseline(tape, o_ei, o_prev, p, target)?,
            };
            blocks.push(BlockTrace {
                o_ei,
                o_prev,
                banks,
                output,
            });
            o_prev = Some(output);
        }

        tape.set_component(Component::Head);
        let depth = self.head.apply(tape, o_prev.expect("four blocks"), h, w)?;
        Ok(Trace {
            image,
            maps,
            banks,
            blocks,
            depth,
        })
    }
}

/// Depth prediction without gradients.
pub fn predict<T: Scalar>(cfg: &ModelConfig, store: &ParamStore<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let net = Network::bind(cfg, store, &mut tape)?;
    let x = tape.constant(image.clone());
    let trace = net.forward(&mut tape, x)?;
    Ok(tape.value(trace.depth).clone())
}
