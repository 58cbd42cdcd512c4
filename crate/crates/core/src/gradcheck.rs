//! Central finite-difference checks of the reverse sweep.
//!
//! Each case is a function of some named input tensors. The checked scalar
//! is `sum(out * R)` with a fixed random `R`, so every output element feeds
//! the gradient with a distinct weight. For each tensor the analytic and
//! numerical gradients are compared by
//! `|g_a - g_fd| / max(|g_a|, |g_fd|, FLOOR)` in the Euclidean norm.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::banks::{apply_feature_bank, generate_banks, BankGenerator};
use crate::config::{EncoderMode, ModelConfig};
use crate::error::{config_err, Result};
use crate::layers::{Conv, ConvParams, PointwiseBlock, ResidualConvUnit};
use crate::model::{decode_block_baseline, decode_block_banked, BlockFlags, DecodeBlock, Network};
use crate::params::{Bound, ParamStore};
use crate::resample::{dysample_up, guided_sample, guided_up_down, DySample, GuidedSampler};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradient norms below this are compared in absolute terms.
pub const FLOOR: f64 = 1e-6;
pub const DEFAULT_INSTANCES: usize = 20;

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// A differentiable function of named tensors.
pub struct Case {
    pub tensors: Vec<(String, Tensor<f64>)>,
    /// Finite-difference probes per tensor; `None` checks every entry.
    pub probes: Option<usize>,
    build: Build,
}

impl Case {
    pub fn new(
        tensors: Vec<(String, Tensor<f64>)>,
        build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            tensors,
            probes: None,
            build: Box::new(build),
        }
    }

    pub fn with_probes(mut self, probes: usize) -> Self {
        self.probes = Some(probes);
        self
    }

    fn eval(&self, values: &[&Tensor<f64>]) -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf((*t).clone())).collect();
        let out = (self.build)(&mut tape, &vars)?;
        Ok((tape, vars, out))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub worst: f64,
    pub worst_tensor: String,
    /// Probes compared.
    pub probes: usize,
    /// Probes skipped because their one-sided differences disagree.
    pub kinks: usize,
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Compares reverse-mode gradients of every tensor of `case` against central
/// differences.
pub fn check_case(case: &Case, seed: u64) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<&Tensor<f64>> = case.tensors.iter().map(|(_, t)| t).collect();
    let (mut tape, vars, out) = case.eval(&base)?;
    let weights = Tensor::uniform(tape.shape(out), -1.0, 1.0, &mut rng);
    let r = tape.constant(weights.clone());
    let prod = tape.mul(out, r)?;
    let loss = tape.sum(prod)?;
    let grads = tape.backward(loss)?;

    let objective = |values: &[&Tensor<f64>]| -> Result<f64> {
        let (tape, _, out) = case.eval(values)?;
        Ok(dot(tape.value(out), &weights))
    };

    let f0 = objective(&base)?;
    let mut report = CaseReport {
        worst: 0.0,
        worst_tensor: String::new(),
        kinks: 0,
        probes: 0,
    };
    for (i, (name, t)) in case.tensors.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], t.shape());
        let idx: Vec<usize> = match case.probes {
            Some(p) if p < t.numel() => sample(&mut rng, t.numel(), p).into_vec(),
            _ => (0..t.numel()).collect(),
        };
        let (mut a, mut numeric) = (Vec::new(), Vec::new());
        for &j in &idx {
            let shifted = |delta: f64| -> Result<f64> {
                let mut moved = t.clone();
                moved.data_mut()[j] += delta;
                let mut values = base.clone();
                values[i] = &moved;
                objective(&values)
            };
            let (fp, fm) = (shifted(STEP)?, shifted(-STEP)?);
            let (fwd, bwd) = ((fp - f0) / STEP, (f0 - fm) / STEP);
            let central = (fp - fm) / (2.0 * STEP);
            let half = (shifted(STEP / 2.0)? - shifted(-STEP / 2.0)?) / STEP;
            let scale = fwd.abs().max(bwd.abs()).max(FLOOR);
            // A relu or sampling-cell boundary within the step shows up as
            // one-sided slopes that disagree, or as a central difference
            // that moves when the step is halved.
            if (fwd - bwd).abs() > TOLERANCE * scale || (central - half).abs() > TOLERANCE / 16.0 * scale {
                report.kinks += 1;
                continue;
            }
            a.push(analytic.data()[j]);
            numeric.push(central);
        }
        report.probes += a.len();
        let diff = norm(a.iter().zip(&numeric).map(|(x, y)| x - y));
        let scale = norm(a.iter().copied())
            .max(norm(numeric.iter().copied()))
            .max(FLOOR);
        let err = diff / scale;
        if err > report.worst || report.worst_tensor.is_empty() {
            report.worst = err;
            report.worst_tensor = name.clone();
        }
    }
    Ok(report)
}

/// Collects case tensors and hands out their positions.
#[derive(Default)]
struct Reg {
    tensors: Vec<(String, Tensor<f64>)>,
}

#[derive(Debug, Clone, Copy)]
struct ConvSlot {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

impl ConvSlot {
    fn at(&self, v: &[Var]) -> Conv {
        Conv {
            weight: v[self.w],
            bias: v[self.b],
            stride: self.stride,
            padding: self.pad,
        }
    }
}

impl Reg {
    fn add(&mut self, name: impl Into<String>, t: Tensor<f64>) -> usize {
        self.tensors.push((name.into(), t));
        self.tensors.len() - 1
    }

    fn uniform(&mut self, name: &str, s: Shape, rng: &mut ChaCha8Rng) -> usize {
        self.add(name, Tensor::uniform(s, -1.0, 1.0, rng))
    }

    fn conv(&mut self, name: &str, c_out: usize, c_in: usize, k: usize, gain: f64, rng: &mut ChaCha8Rng) -> ConvSlot {
        let mut p = ConvParams::<f64>::kaiming(c_out, c_in, k, rng).expect("valid conv");
        p.weight = p.weight.map(|v| v * gain);
        p.bias = Tensor::uniform(p.bias.shape(), -0.5, 0.5, rng);
        ConvSlot {
            w: self.add(format!("{name}.weight"), p.weight),
            b: self.add(format!("{name}.bias"), p.bias),
            stride: 1,
            pad: k / 2,
        }
    }

    fn rcu(&mut self, name: &str, ch: usize, rng: &mut ChaCha8Rng) -> [ConvSlot; 2] {
        [
            self.conv(&format!("{name}.conv1"), ch, ch, 3, 1.0, rng),
            self.conv(&format!("{name}.conv2"), ch, ch, 3, 1.0, rng),
        ]
    }

    fn case(self, build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Case {
        Case::new(self.tensors, build)
    }
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

fn sh(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape { n, c, h, w }
}

fn conv_case(i: usize, rng: &mut ChaCha8Rng) -> Case {
    let k = if i % 2 == 0 { 3 } else { 1 };
    let stride = 1 + (i / 2) % 2;
    let pad = if k == 3 { (i / 4) % 2 } else { 0 };
    let (ci, co) = (dims(rng, 1, 3), dims(rng, 1, 3));
    let (h, w) = (dims(rng, 3, 6), dims(rng, 3, 6));
    let mut r = Reg::default();
    let x = r.uniform("x", sh(2, ci, h, w), rng);
    let mut c = r.conv("conv", co, ci, k, 1.0, rng);
    c.stride = stride;
    c.pad = pad;
    r.case(move |t, v| c.at(v).apply(t, v[x]))
}

fn resize_case(_: usize, rng: &mut ChaCha8Rng) -> Case {
    let (h, w) = (dims(rng, 1, 7), dims(rng, 1, 7));
    let (oh, ow) = (dims(rng, 1, 9), dims(rng, 1, 9));
    let mut r = Reg::default();
    let x = r.uniform("x", sh(2, 2, h, w), rng);
    r.case(move |t, v| t.bilinear_resize(v[x], oh, ow))
}

fn grid_case(_: usize, rng: &mut ChaCha8Rng) -> Case {
    let (h, w) = (dims(rng, 2, 5), dims(rng, 2, 5));
    let (oh, ow) = (dims(rng, 1, 5), dims(rng, 1, 5));
    let mut r = Reg::default();
    let x = r.uniform("x", sh(1, 2, h, w), rng);
    let coords = Tensor::from_fn(sh(1, 2, oh, ow), |_, c, _, _| {
        let extent = if c == 0 { w } else { h } as f64;
        rng.gen_range(-0.8..extent - 0.2)
    });
    let c = r.add("coords", coords);
    r.case(move |t, v| t.grid_sample(v[x], v[c]))
}

fn shuffle_case(_: usize, rng: &mut ChaCha8Rng) -> Case {
    let s = dims(rng, 1, 3);
    let mut r = Reg::default();
    let x = r.uniform("x", sh(2, 2 * s * s, dims(rng, 1, 3), dims(rng, 1, 3)), rng);
    r.case(move |t, v| t.pixel_shuffle(v[x], s))
}

fn elementwise_case(i: usize, rng: &mut ChaCha8Rng) -> Case {
    let s = sh(2, dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 1, 4));
    let mut r = Reg::default();
    let a = r.uniform("a", s, rng);
    let b = r.uniform("b", s, rng);
    let extra = r.uniform("c", sh(s.n, dims(rng, 1, 3), s.h, s.w), rng);
    let f = rng.gen_range(-2.0..2.0);
    r.case(move |t, v| match i % 7 {
        0 => t.add(v[a], v[b]),
        1 => t.mul(v[a], v[b]),
        2 => t.concat_channels(v[a], v[extra]),
        3 => t.relu(v[a]),
        4 => t.sigmoid(v[a]),
        5 => t.scale(v[a], f),
        _ => {
            let m = t.mul(v[a], v[b])?;
            t.mean(m)
        }
    })
}

fn l1_case(_: usize, rng: &mut ChaCha8Rng) -> Case {
    let s = sh(2, 1, dims(rng, 2, 5), dims(rng, 2, 5));
    let gt = Tensor::uniform(s, 0.5, 3.0, rng);
    let mask = Tensor::from_fn(s, |_, _, _, _| if rng.gen_bool(0.8) { 1.0 } else { 0.0 });
    let mut mask = mask;
    mask.data_mut()[0] = 1.0;
    let mut r = Reg::default();
    let p = r.add("pred", Tensor::uniform(s, 0.0, 4.0, rng));
    r.case(move |t, v| t.masked_l1(v[p], &gt, &mask))
}

const RATIOS: [(usize, usize); 5] = [(8, 4), (14, 9), (5, 5), (4, 6), (4, 8)];

fn resample_case(i: usize, rng: &mut ChaCha8Rng) -> Case {
    let c = dims(rng, 1, 3);
    let scope = crate::resample::DEFAULT_SCOPE;
    let mut r = Reg::default();
    match i % 3 {
        0 => {
            let s = 1 + i % 2 + (i / 6) % 2;
            let x = r.uniform("x", sh(1, c, dims(rng, 2, 4), dims(rng, 2, 4)), rng);
            let off = r.conv("offset", 2 * s * s, c, 1, 0.5, rng);
            r.case(move |t, v| {
                let p = DySample {
                    offset: off.at(v),
                    scale: s,
                    scope,
                };
                dysample_up(t, v[x], &p)
            })
        }
        1 => {
            let (hi, ho) = RATIOS[(i / 3) % RATIOS.len()];
            let cr = dims(rng, 1, 3);
            let x = r.uniform("x_in", sh(1, c, hi, hi - 1), rng);
            let xr = r.uniform("x_ref", sh(1, cr, ho, ho + 1), rng);
            let off = r.conv("offset", 2, cr, 3, 0.5, rng);
            r.case(move |t, v| {
                let p = GuidedSampler {
                    offset: off.at(v),
                    scope,
                };
                guided_sample(t, v[x], v[xr], &p)
            })
        }
        _ => {
            let cb = dims(rng, 1, 3);
            let (h, w) = (dims(rng, 2, 4), dims(rng, 2, 4));
            let x = r.uniform("x", sh(1, c, h, w), rng);
            let bank = r.uniform("bank", sh(1, cb, 2 * h, 2 * w), rng);
            let down = r.conv("down", 2, c, 3, 0.5, rng);
            let up = r.conv("up", 2, cb, 3, 0.5, rng);
            let guided = i % 2 == 0;
            let target = if i % 4 < 2 { (2 * h, 2 * w) } else { (2 * h + 1, 2 * w - 1) };
            r.case(move |t, v| {
                let d = GuidedSampler {
                    offset: down.at(v),
                    scope,
                };
                let u = GuidedSampler {
                    offset: up.at(v),
                    scope,
                };
                guided_up_down(t, v[x], v[bank], guided.then_some(&d), &u, target)
            })
        }
    }
}

fn banks_case(i: usize, rng: &mut ChaCha8Rng) -> Case {
    let cb = dims(rng, 1, 3);
    let mut r = Reg::default();
    if i % 2 == 0 {
        let chans: Vec<usize> = (0..4).map(|_| dims(rng, 1, 3)).collect();
        let (h, w) = (dims(rng, 4, 6), dims(rng, 4, 6));
        let sizes = [(h, w), (h / 2, w / 2), (h / 3, w / 3), (1, 1)];
        let maps: Vec<usize> = (0..4)
            .map(|l| r.uniform(&format!("map{l}"), sh(1, chans[l], sizes[l].0, sizes[l].1), rng))
            .collect();
        let proj: Vec<ConvSlot> = (0..4)
            .map(|l| r.conv(&format!("proj{l}"), cb, chans[l], 1, 1.0, rng))
            .collect();
        let fuse = r.conv("fuse", cb, 4 * cb, 1, 1.0, rng);
        let heads: Vec<ConvSlot> = ["sample.conv1", "sample.conv2", "feat.conv1", "feat.conv2"]
            .iter()
            .map(|n| r.conv(n, cb, cb, 1, 1.0, rng))
            .collect();
        let which = i % 4 == 0;
        r.case(move |t, v| {
            let gen = BankGenerator {
                proj: [proj[0].at(v), proj[1].at(v), proj[2].at(v), proj[3].at(v)],
                fuse: fuse.at(v),
                sample: Some(PointwiseBlock {
                    conv1: heads[0].at(v),
                    conv2: heads[1].at(v),
                }),
                feat: Some(PointwiseBlock {
                    conv1: heads[2].at(v),
                    conv2: heads[3].at(v),
                }),
            };
            let maps: Vec<Var> = maps.iter().map(|&m| v[m]).collect();
            let b = generate_banks(t, &maps, &gen)?;
            Ok(if which { b.sample.unwrap() } else { b.feat.unwrap() })
        })
    } else {
        let cx = dims(rng, 1, 3);
        let s = (dims(rng, 2, 4), dims(rng, 2, 4));
        let bank = r.uniform("bank", sh(1, cb, s.0, s.1), rng);
        let x = r.uniform("x", sh(1, cx, s.0, s.1), rng);
        let conv = r.conv("feature_conv", cx, cb + cx, 1, 1.0, rng);
        let bounded = i % 4 == 1;
        r.case(move |t, v| apply_feature_bank(t, v[bank], v[x], &conv.at(v), bounded))
    }
}

struct BlockSlots {
    lateral: ConvSlot,
    rcu_enc: [ConvSlot; 2],
    rcu_prev: Option<[ConvSlot; 2]>,
    output: Option<ConvSlot>,
    feature: ConvSlot,
    down: ConvSlot,
    up: ConvSlot,
}

impl BlockSlots {
    fn at(&self, v: &[Var]) -> DecodeBlock<f64> {
        let rcu = |s: &[ConvSlot; 2]| ResidualConvUnit {
            conv1: s[0].at(v),
            conv2: s[1].at(v),
        };
        let scope = crate::resample::DEFAULT_SCOPE;
        DecodeBlock {
            lateral: self.lateral.at(v),
            rcu_enc: rcu(&self.rcu_enc),
            rcu_prev: self.rcu_prev.as_ref().map(rcu),
            output_conv: self.output.map(|c| c.at(v)),
            feature_conv: Some(self.feature.at(v)),
            sampler_down: Some(GuidedSampler {
                offset: self.down.at(v),
                scope,
            }),
            sampler_up: Some(GuidedSampler {
                offset: self.up.at(v),
                scope,
            }),
        }
    }
}

fn block_case(i: usize, rng: &mut ChaCha8Rng, banked: bool) -> Case {
    let (ce, cd, cb) = (dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3));
    let (h, w) = (dims(rng, 2, 4), dims(rng, 2, 4));
    let first = i % 3 == 0;
    let mut r = Reg::default();
    let o_ei = r.uniform("o_ei", sh(1, ce, h, w), rng);
    let o_prev = (!first).then(|| r.uniform("o_prev", sh(1, cd, h, w), rng));
    let bank_dims = if i % 2 == 0 { (2 * h, 2 * w) } else { (h, w) };
    let b_sample = r.uniform("b_sample", sh(1, cb, bank_dims.0, bank_dims.1), rng);
    let b_feat = r.uniform("b_feat", sh(1, cb, bank_dims.0, bank_dims.1), rng);
    let slots = BlockSlots {
        lateral: r.conv("lateral", cd, ce, 1, 1.0, rng),
        rcu_enc: r.rcu("rcu_enc", cd, rng),
        rcu_prev: (!first).then(|| r.rcu("rcu_prev", cd, rng)),
        output: (!banked).then(|| r.conv("output_conv", cd, cd, 3, 1.0, rng)),
        feature: r.conv("feature_conv", cd, cb + cd, 1, 1.0, rng),
        down: r.conv("sampler_down", 2, cd, 3, 0.5, rng),
        up: r.conv("sampler_up", 2, cb, 3, 0.5, rng),
    };
    let target = if i % 5 == 4 { (2 * h - 1, 2 * w + 1) } else { (2 * h, 2 * w) };
    let flags = BlockFlags {
        feature_bank: true,
        sampling_bank: true,
        guided_downsample: i % 4 != 1,
        bounded_feature_bank: i % 4 == 2,
    };
    r.case(move |t, v| {
        let p = slots.at(v);
        let prev = o_prev.map(|k| v[k]);
        if banked {
            let banks = crate::banks::BankPair {
                sample: Some(v[b_sample]),
                feat: Some(v[b_feat]),
            };
            decode_block_banked(t, v[o_ei], prev, &banks, &p, flags, target)
        } else {
            decode_block_baseline(t, v[o_ei], prev, &p, target)
        }
    })
}

fn baseline_block_case(i: usize, rng: &mut ChaCha8Rng) -> Case {
    block_case(i, rng, false)
}

fn banked_block_case(i: usize, rng: &mut ChaCha8Rng) -> Case {
    block_case(i, rng, true)
}

fn network_case(i: usize, rng: &mut ChaCha8Rng) -> Case {
    let mut cfg = ModelConfig {
        enc_channels: [2, 2, 3, 3],
        dec_channels: 2,
        bank_channels: 2,
        head_channels: 2,
        ..ModelConfig::toy()
    };
    let (h, w) = if i % 2 == 0 {
        (64, 64)
    } else {
        cfg.mode = EncoderMode::VitLike;
        (58, 86)
    };
    cfg = cfg.with_banks(i % 4 != 3, i % 4 != 2, i % 4 < 2);
    let mut store = ParamStore::<f64>::init(&cfg, rng.gen()).expect("valid config");
    let names: Vec<String> = store.names().map(String::from).collect();
    for n in &names {
        let e = store.get_mut(n).unwrap();
        e.conv.bias = Tensor::uniform(e.conv.bias.shape(), -0.3, 0.3, rng);
        if n.contains("sampler") {
            e.conv.weight = Tensor::uniform(e.conv.weight.shape(), -1.5, 1.5, rng);
        }
    }
    let mut r = Reg::default();
    let image = r.add("image", Tensor::uniform(sh(1, 3, h, w), 0.0, 1.0, rng));
    let mut slots = Vec::new();
    for (name, e) in store.iter() {
        let w = r.add(format!("{name}.weight"), e.conv.weight.clone());
        let b = r.add(format!("{name}.bias"), e.conv.bias.clone());
        let slot = ConvSlot {
            w,
            b,
            stride: e.conv.stride,
            pad: e.conv.padding,
        };
        slots.push((name.to_string(), slot));
    }
    r.case(move |t, v| {
        let bound: Bound = slots.iter().map(|(n, s)| (n.clone(), s.at(v))).collect();
        let net = Network::from_bound(&cfg, bound)?;
        Ok(net.forward(t, v[image])?.depth)
    })
    .with_probes(4)
}

type Builder = fn(usize, &mut ChaCha8Rng) -> Case;

/// Suite name, owning module, case builder.
pub const SUITES: [(&str, &str, Builder); 11] = [
    ("conv2d", "tensor-core", conv_case),
    ("bilinear_resize", "tensor-core", resize_case),
    ("grid_sample", "tensor-core", grid_case),
    ("pixel_shuffle", "tensor-core", shuffle_case),
    ("elementwise", "tensor-core", elementwise_case),
    ("l1_loss", "train-eval", l1_case),
    ("resample", "resample", resample_case),
    ("banks", "banks", banks_case),
    ("baseline_block", "model", baseline_block_case),
    ("banked_block", "model", banked_block_case),
    ("network", "model", network_case),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    pub worst: f64,
    pub worst_tensor: String,
    pub failures: usize,
    pub probes: usize,
    pub kinks: usize,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn line(&self) -> String {
        format!(
            "{} suite={} instances={} max_rel_err={:.3e} worst={} failures={} probes={} kinks_skipped={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.worst,
            self.worst_tensor,
            self.failures,
            self.probes,
            self.kinks
        )
    }
}

pub fn run_suite(name: &str, instances: usize, seed: u64) -> Result<SuiteReport> {
    let (_, _, build) = SUITES
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| config_err!("unknown gradient suite {name:?}"))?;
    let mut report = SuiteReport {
        name: name.to_string(),
        instances,
        worst: 0.0,
        worst_tensor: String::new(),
        failures: 0,
        kinks: 0,
        probes: 0,
    };
    for i in 0..instances {
        let case_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let case = build(i, &mut rng);
        let r = check_case(&case, case_seed ^ 0xfd)?;
        report.kinks += r.kinks;
        report.probes += r.probes;
        if !(r.worst <= TOLERANCE) {
            report.failures += 1;
        }
        if r.worst > report.worst || report.worst_tensor.is_empty() {
            report.worst = r.worst;
            report.worst_tensor = format!("{}#{i}", r.worst_tensor);
        }
    }
    Ok(report)
}

/// Suites whose name or owning module equals `filter` (all when `None`).
pub fn select(filter: Option<&str>) -> Result<Vec<&'static str>> {
    let picked: Vec<&str> = SUITES
        .iter()
        .filter(|(n, m, _)| filter.is_none_or(|f| f == *n || f == *m))
        .map(|(n, _, _)| *n)
        .collect();
    if picked.is_empty() {
        return Err(config_err!("no gradient suite matches {:?}", filter.unwrap_or("")));
    }
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // x * stop_grad(x) has true gradient 2x but the tape only sees x.
        let mut r = Reg::default();
        let x = r.add("x", Tensor::from_vec(sh(1, 1, 1, 3), vec![0.5, -0.3, 1.2]).unwrap());
        let bad = r.case(move |t, v| {
            let c = t.constant(t.value(v[x]).clone());
            t.mul(v[x], c)
        });
        let rep = check_case(&bad, 1).unwrap();
        assert!(rep.worst > 0.1, "{rep:?}");
    }

    #[test]
    fn kinks_are_skipped_not_compared() {
        let mut r = Reg::default();
        let x = r.add("x", Tensor::from_vec(sh(1, 1, 1, 3), vec![0.0, 0.5, -0.7]).unwrap());
        let rep = check_case(&r.case(move |t, v| t.relu(v[x])), 3).unwrap();
        assert_eq!((rep.kinks, rep.probes), (1, 2));
        assert!(rep.worst < 1e-8, "{rep:?}");
    }

    #[test]
    fn quick_pass_over_every_suite() {
        for (name, _, _) in SUITES {
            let rep = run_suite(name, 2, 9).unwrap();
            assert!(rep.passed(), "{}", rep.line());
        }
    }

    #[test]
    fn selection() {
        assert_eq!(select(Some("model")).unwrap().len(), 3);
        assert_eq!(select(Some("conv2d")).unwrap(), vec!["conv2d"]);
        assert_eq!(select(None).unwrap().len(), SUITES.len());
        assert!(select(Some("nope")).is_err());
    }
}
