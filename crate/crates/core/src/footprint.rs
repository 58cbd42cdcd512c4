//! Analytic parameter and FLOP accounting.
//!
//! Counts follow fixed conventions, printed in every report header:
//! a convolution costs two FLOPs per multiply-accumulate plus one add per
//! output element for its bias, a bilinear resize costs 8 FLOPs per output
//! element, a bilinear gather 9, and elementwise ops (relu, add, mul, scale,
//! sigmoid) one. Concatenation and pixel shuffle are free. FLOPs are for a
//! single image.

use std::fmt::Write as _;

use crate::config::{EncoderMode, ModelConfig};
use crate::error::Result;
use crate::model::{block_target, encoder_dims, level_dims};
use crate::params::block_level;

/// Model components used to attribute parameters and FLOPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Encoder,
    DecoderTrunk,
    BankGenerator,
    FeatureBank,
    Samplers,
    Head,
    Other,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::Encoder,
        Component::DecoderTrunk,
        Component::BankGenerator,
        Component::FeatureBank,
        Component::Samplers,
        Component::Head,
        Component::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Encoder => "encoder",
            Component::DecoderTrunk => "decoder_trunk",
            Component::BankGenerator => "bank_generator",
            Component::FeatureBank => "feature_bank",
            Component::Samplers => "samplers",
            Component::Head => "head",
            Component::Other => "other",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

pub const CONVENTIONS: &str =
    "conv=2*MAC+bias, resize=8/elem, gather=9/elem, elementwise=1/elem, concat=0, batch=1";

/// `c_out * c_in * k * k + c_out`.
pub fn conv_params(c_in: usize, c_out: usize, k: usize) -> u64 {
    (c_out * c_in * k * k + c_out) as u64
}

/// FLOPs of a biased convolution producing `c_out x px` outputs.
pub fn conv_flops(c_in: usize, c_out: usize, k: usize, px: usize) -> u64 {
    (2 * c_out * c_in * k * k * px + c_out * px) as u64
}

fn area((h, w): (usize, usize)) -> usize {
    h * w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Cost {
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootprintReport {
    pub input: (usize, usize),
    pub components: [(Component, Cost); 7],
}

#[derive(Default)]
struct Acc([Cost; 7]);

impl Acc {
    fn conv(&mut self, c: Component, c_in: usize, c_out: usize, k: usize, px: usize) {
        self.0[c.index()].params += conv_params(c_in, c_out, k);
        self.0[c.index()].flops += conv_flops(c_in, c_out, k, px);
    }

    fn flops(&mut self, c: Component, f: usize) {
        self.0[c.index()].flops += f as u64;
    }

    /// relu -> conv -> relu -> conv -> add on `ch x px`.
    fn rcu(&mut self, c: Component, ch: usize, px: usize) {
        self.conv(c, ch, ch, 3, px);
        self.conv(c, ch, ch, 3, px);
        self.flops(c, 3 * ch * px);
    }

    /// conv -> relu -> conv -> add, all 1x1.
    fn pointwise(&mut self, c: Component, ch: usize, px: usize) {
        self.conv(c, ch, ch, 1, px);
        self.conv(c, ch, ch, 1, px);
        self.flops(c, 2 * ch * px);
    }

    /// Guided sample of a `ch_in`-channel tensor onto a `px` grid, with
    /// offsets from a `ch_ref`-channel reference.
    fn guided(&mut self, ch_ref: usize, ch_in: usize, px: usize) {
        use Component::Samplers;
        self.conv(Samplers, ch_ref, 2, 3, px);
        self.flops(Samplers, 2 * 2 * px + 9 * ch_in * px);
    }
}

/// Parameter and FLOP counts for `cfg` on an `h x w` input, derived from the
/// architecture description without instantiating weights.
pub fn footprint(cfg: &ModelConfig, h: usize, w: usize) -> Result<FootprintReport> {
    use Component::*;
    cfg.validate()?;
    let e = cfg.enc_channels;
    let (cd, cb, hc) = (cfg.dec_channels, cfg.bank_channels, cfg.head_channels);
    let tokens = encoder_dims(cfg.mode, h, w)?;
    let levels = level_dims(cfg, h, w)?;
    let mut a = Acc::default();

    match cfg.mode {
        EncoderMode::Staged => {
            let stem = area((h / 2, w / 2));
            a.conv(Encoder, 3, e[0], 3, stem);
            a.flops(Encoder, e[0] * stem);
        }
        EncoderMode::VitLike => {
            let px = area(tokens[0]);
            a.flops(Encoder, 8 * 3 * px);
            a.conv(Encoder, 3, e[0], 3, px);
            a.flops(Encoder, e[0] * px);
        }
    }
    for i in 0..4 {
        let px = area(tokens[i]);
        let c_prev = if i == 0 { e[0] } else { e[i - 1] };
        a.conv(Encoder, c_prev, e[i], 3, px);
        a.conv(Encoder, e[i], e[i], 3, px);
        a.flops(Encoder, 2 * e[i] * px);
    }

    for l in 0..4 {
        if levels[l] != tokens[l] {
            a.flops(DecoderTrunk, 8 * e[l] * area(levels[l]));
        }
    }

    let big = area(levels[0]);
    if cfg.banked() {
        for l in 0..4 {
            if levels[l] != levels[0] {
                a.flops(BankGenerator, 8 * e[l] * big);
            }
            a.conv(BankGenerator, e[l], cb, 1, big);
        }
        a.conv(BankGenerator, 4 * cb, cb, 1, big);
        if cfg.use_feature_bank {
            a.pointwise(BankGenerator, cb, big);
        }
        if cfg.use_sampling_bank {
            a.pointwise(BankGenerator, cb, big);
        }
    }

    for j in 0..4 {
        let l = block_level(j);
        let px = area(levels[l]);
        let target = block_target(&levels, j);
        let tpx = area(target);
        a.conv(DecoderTrunk, e[l], cd, 1, px);
        a.rcu(DecoderTrunk, cd, px);
        if j > 0 {
            a.rcu(DecoderTrunk, cd, px);
            a.flops(DecoderTrunk, cd * px);
        }
        if cfg.use_feature_bank {
            if levels[l] != levels[0] {
                a.flops(FeatureBank, 8 * cb * px);
            }
            a.conv(FeatureBank, cb + cd, cd, 1, px);
            let squash = if cfg.bounded_feature_bank { 2 } else { 0 };
            a.flops(FeatureBank, (1 + squash) * cd * px);
        }
        if cfg.use_sampling_bank {
            if cfg.use_guided_downsample {
                a.guided(cd, cb, px);
            } else if levels[l] != levels[0] {
                a.flops(Samplers, 8 * cb * px);
            }
            if levels[l] != target {
                a.flops(Samplers, 8 * cb * tpx);
            }
            a.guided(cb, cd, tpx);
        } else {
            if cfg.output_conv {
                a.conv(DecoderTrunk, cd, cd, 3, px);
            }
            a.flops(DecoderTrunk, 8 * cd * tpx);
        }
    }

    let out = block_target(&levels, 3);
    let px = area(out);
    a.conv(Head, cd, hc, 3, px);
    a.conv(Head, hc, 1, 3, px);
    a.flops(Head, (hc + 1) * px);
    if out != (h, w) {
        a.flops(Head, 8 * h * w);
    }

    let mut components = [(Other, Cost::default()); 7];
    for (slot, c) in components.iter_mut().zip(Component::ALL) {
        *slot = (c, a.0[c.index()]);
    }
    Ok(FootprintReport {
        input: (h, w),
        components,
    })
}

pub fn count_params(cfg: &ModelConfig) -> Result<u64> {
    let (h, w) = match cfg.mode {
        EncoderMode::Staged => (64, 64),
        EncoderMode::VitLike => (98, 98),
    };
    Ok(footprint(cfg, h, w)?.total().params)
}

pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> Result<u64> {
    Ok(footprint(cfg, h, w)?.total().flops)
}

/// `candidate / reference`.
pub fn overhead_ratio(reference: f64, candidate: f64) -> f64 {
    candidate / reference
}

impl FootprintReport {
    pub fn get(&self, c: Component) -> Cost {
        self.components[c.index()].1
    }

    pub fn total(&self) -> Cost {
        self.components.iter().fold(Cost::default(), |acc, (_, c)| Cost {
            params: acc.params + c.params,
            flops: acc.flops + c.flops,
        })
    }

    fn rows(&self) -> impl Iterator<Item = (Component, Cost)> + '_ {
        self.components
            .iter()
            .copied()
            .filter(|&(c, cost)| c != Component::Other || cost != Cost::default())
    }

    /// Aligned table followed by one `component=... params=... flops=...`
    /// record per row.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let (h, w) = self.input;
        writeln!(s, "# footprint input={h}x{w} {CONVENTIONS}").unwrap();
        writeln!(s, "{:<16} {:>12} {:>16}", "component", "params", "flops").unwrap();
        for (c, cost) in self.rows() {
            writeln!(s, "{:<16} {:>12} {:>16}", c.name(), cost.params, cost.flops).unwrap();
        }
        let t = self.total();
        writeln!(s, "{:<16} {:>12} {:>16}", "total", t.params, t.flops).unwrap();
        s.push('\n');
        s.push_str(&self.records());
        s
    }

    pub fn records(&self) -> String {
        let mut s = String::new();
        for (c, cost) in self.rows() {
            writeln!(s, "component={} params={} flops={}", c.name(), cost.params, cost.flops).unwrap();
        }
        let t = self.total();
        writeln!(s, "component=total params={} flops={}", t.params, t.flops).unwrap();
        s
    }

    /// Candidate-over-reference ratios as `(params, flops)`.
    pub fn overhead_vs(&self, reference: &FootprintReport) -> (f64, f64) {
        let (a, b) = (reference.total(), self.total());
        (
            overhead_ratio(a.params as f64, b.params as f64),
            overhead_ratio(a.flops as f64, b.flops as f64),
        )
    }
}
