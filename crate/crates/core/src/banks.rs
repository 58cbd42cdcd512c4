//! Shared bank generation and the feature-bank reweighting.

use crate::error::{config_err, Result};
use crate::layers::{Conv, PointwiseBlock};
use crate::params::Bound;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Banks produced once per forward pass. A bank is `None` when the
/// interaction that consumes it is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankPair {
    pub sample: Option<Var>,
    pub feat: Option<Var>,
}

/// The bank generator: per-level 1x1 projections, a 1x1 fusion over their
/// concatenation, then one residual pointwise block per bank.
#[derive(Debug, Clone, Copy)]
pub struct BankGenerator {
    pub proj: [Conv; 4],
    pub fuse: Conv,
    pub sample: Option<PointwiseBlock>,
    pub feat: Option<PointwiseBlock>,
}

fn pointwise(b: &Bound, prefix: &str) -> Option<PointwiseBlock> {
    Some(PointwiseBlock {
        conv1: b.get(&format!("{prefix}.conv1"))?,
        conv2: b.get(&format!("{prefix}.conv2"))?,
    })
}

impl BankGenerator {
    pub fn from_bound(b: &Bound) -> Result<Self> {
        Ok(Self {
            proj: [
                b.conv("bank.proj.0")?,
                b.conv("bank.proj.1")?,
                b.conv("bank.proj.2")?,
                b.conv("bank.proj.3")?,
            ],
            fuse: b.conv("bank.fuse")?,
            sample: pointwise(b, "bank.sample"),
            feat: pointwise(b, "bank.feat"),
        })
    }
}

/// Resize every map to the largest one, project, concatenate, fuse, and
/// split into the two banks.
pub fn generate_banks<T: Scalar>(
    tape: &mut Tape<T>,
    maps: &[Var],
    p: &BankGenerator,
) -> Result<BankPair> {
    if maps.len() != 4 {
        return Err(config_err!("bank generator needs 4 encoder maps, got {}", maps.len()));
    }
    let shapes: Vec<_> = maps.iter().map(|&m| tape.shape(m)).collect();
    if shapes.iter().any(|s| s.n != shapes[0].n) {
        return Err(config_err!("encoder maps disagree on batch size"));
    }
    let (h, w) = shapes
        .iter()
        .map(|s| s.spatial())
        .max_by_key(|&(h, w)| h * w)
        .expect("four maps");
    let dominant = shapes.iter().filter(|s| s.spatial() == (h, w)).count();
    if dominant != 1 || shapes.iter().any(|s| s.h > h || s.w > w) {
        return Err(config_err!(
            "exactly one encoder map must have the largest resolution, got {:?}",
            shapes.iter().map(|s| s.spatial()).collect::<Vec<_>>()
        ));
    }

    let mut fused_in: Option<Var> = None;
    for (i, (&m, s)) in maps.iter().zip(&shapes).enumerate() {
        let up = if s.spatial() == (h, w) {
            m
        } else {
            tape.bilinear_resize(m, h, w)?
        };
        let proj = p.proj[i].apply(tape, up)?;
        fused_in = Some(match fused_in {
            None => proj,
            Some(acc) => tape.concat_channels(acc, proj)?,
        });
    }
    let trunk = p.fuse.apply(tape, fused_in.expect("four maps"))?;
    let sample = p.sample.map(|b| b.apply(tape, trunk)).transpose()?;
    let feat = p.feat.map(|b| b.apply(tape, trunk)).transpose()?;
    Ok(BankPair { sample, feat })
}

/// `x * conv(concat(bank, x))`, optionally with the weights squashed into
/// `(0, 2)` by `2 * sigmoid`.
pub fn apply_feature_bank<T: Scalar>(
    tape: &mut Tape<T>,
    bank: Var,
    x: Var,
    conv: &Conv,
    bounded: bool,
) -> Result<Var> {
    let (bs, xs) = (tape.shape(bank), tape.shape(x));
    if (bs.n, bs.h, bs.w) != (xs.n, xs.h, xs.w) {
        return Err(config_err!("feature bank {bs:?} does not match features {xs:?}"));
    }
    if conv.c_in(tape) != bs.c + xs.c || conv.c_out(tape) != xs.c {
        return Err(config_err!(
            "feature bank conv maps {} -> {} channels, expected {} -> {}",
            conv.c_in(tape),
            conv.c_out(tape),
            bs.c + xs.c,
            xs.c
        ));
    }
    let cat = tape.concat_channels(bank, x)?;
    let mut weights = conv.apply(tape, cat)?;
    if bounded {
        let s = tape.sigmoid(weights)?;
        weights = tape.scale(s, T::of_usize(2))?;
    }
    tape.mul(x, weights)
}
