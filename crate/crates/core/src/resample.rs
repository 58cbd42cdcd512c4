//! Dynamic resampling driven by learned offset fields.
//!
//! Every sampler gathers its input bilinearly at `base + scope * residual`,
//! where `base` is the half-pixel grid that reproduces plain bilinear
//! resizing. Offset convolutions start at zero, so a fresh sampler is exactly
//! a bilinear resize.
//!
//! * [`dysample_up`] predicts residuals from the input itself and lays them
//!   out with a pixel shuffle, so it only handles integer upscaling.
//! * [`guided_sample`] predicts residuals by convolving a reference tensor
//!   that already lives at the output resolution. Up, down and non-integer
//!   ratios all go through the same path.
//! * [`guided_up_down`] chains the two directions: the bank is first pulled
//!   down onto the feature map, then guides the feature map upwards.

use crate::error::{config_err, Result};
use crate::kernels;
use crate::layers::{Conv, ConvParams};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Residual multiplier applied to raw offset-conv outputs.
pub const DEFAULT_SCOPE: f64 = 0.25;

/// Continuous source coordinates `(n, 2, h_out, w_out)` in input-pixel units;
/// channel 0 holds columns, channel 1 rows.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField<T> {
    pub coords: Tensor<T>,
}

impl<T: Scalar> OffsetField<T> {
    pub fn h_out(&self) -> usize {
        self.coords.shape().h
    }

    pub fn w_out(&self) -> usize {
        self.coords.shape().w
    }

    /// Coordinates of output pixel `(y, x)` for batch item 0, as `(col, row)`.
    pub fn at(&self, y: usize, x: usize) -> (T, T) {
        (self.coords.at(0, 0, y, x), self.coords.at(0, 1, y, x))
    }
}

/// Zero-residual offsets: the half-pixel bilinear mapping for any ratio.
pub fn make_base_offsets<T: Scalar>(
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
) -> Result<OffsetField<T>> {
    Ok(OffsetField {
        coords: kernels::base_coords(1, h_in, w_in, h_out, w_out)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedSamplerParams<T> {
    /// Reference channels -> 2 offset channels, 3x3.
    pub offset_conv: ConvParams<T>,
    pub scope: T,
}

impl<T: Scalar> GuidedSamplerParams<T> {
    pub fn zeroed(ref_channels: usize) -> Result<Self> {
        Ok(Self {
            offset_conv: ConvParams::zeros(2, ref_channels, 3)?,
            scope: T::from_f64_lossy(DEFAULT_SCOPE),
        })
    }

    pub fn new(offset_conv: ConvParams<T>, scope: T) -> Result<Self> {
        if offset_conv.c_out() != 2 {
            return Err(config_err!(
                "guided sampler offset conv must emit 2 channels, got {}",
                offset_conv.c_out()
            ));
        }
        Ok(Self { offset_conv, scope })
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> GuidedSampler<T> {
        GuidedSampler {
            offset: self.offset_conv.bind(tape),
            scope: self.scope,
        }
    }
}

/// Guided sampler with parameters on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GuidedSampler<T> {
    pub offset: Conv,
    pub scope: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DySampleParams<T> {
    /// Input channels -> 2 r^2 offset channels, 1x1.
    pub offset_conv: ConvParams<T>,
    pub scale: usize,
    pub scope: T,
}

impl<T: Scalar> DySampleParams<T> {
    pub fn zeroed(channels: usize, scale: usize) -> Result<Self> {
        if scale == 0 {
            return Err(config_err!("dysample scale must be >= 1"));
        }
        Ok(Self {
            offset_conv: ConvParams::zeros(2 * scale * scale, channels, 1)?,
            scale,
            scope: T::from_f64_lossy(DEFAULT_SCOPE),
        })
    }

    pub fn new(offset_conv: ConvParams<T>, scale: usize, scope: T) -> Result<Self> {
        if scale == 0 || offset_conv.c_out() != 2 * scale * scale {
            return Err(config_err!(
                "dysample offset conv must emit 2*r^2 = {} channels, got {}",
                2 * scale * scale,
                offset_conv.c_out()
            ));
        }
        Ok(Self {
            offset_conv,
            scale,
            scope,
        })
    }

    /// Fractional factors cannot be expressed by a pixel shuffle.
    pub fn with_factor(channels: usize, factor: f64) -> Result<Self> {
        if factor < 1.0 || factor.fract() != 0.0 {
            return Err(config_err!(
                "dysample needs an integer upscale factor >= 1, got {factor}"
            ));
        }
        Self::zeroed(channels, factor as usize)
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> DySample<T> {
        DySample {
            offset: self.offset_conv.bind(tape),
            scale: self.scale,
            scope: self.scope,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DySample<T> {
    pub offset: Conv,
    pub scale: usize,
    pub scope: T,
}

/// `base + scope * residual`, with the base grid mapping `(h_in, w_in)` onto
/// the residual's spatial extent.
fn offset_coords<T: Scalar>(
    tape: &mut Tape<T>,
    residual: Var,
    scope: T,
    h_in: usize,
    w_in: usize,
) -> Result<Var> {
    let rs = tape.shape(residual);
    let base = kernels::base_coords(rs.n, h_in, w_in, rs.h, rs.w)?;
    let base = tape.constant(base);
    let scaled = tape.scale(residual, scope)?;
    tape.add(scaled, base)
}

pub fn dysample_up<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &DySample<T>) -> Result<Var> {
    let xs = tape.shape(x);
    if p.offset.c_in(tape) != xs.c {
        return Err(config_err!(
            "dysample offset conv expects {} channels, input has {}",
            p.offset.c_in(tape),
            xs.c
        ));
    }
    let raw = p.offset.apply(tape, x)?;
    let residual = tape.pixel_shuffle(raw, p.scale)?;
    let coords = offset_coords(tape, residual, p.scope, xs.h, xs.w)?;
    tape.grid_sample(x, coords)
}

/// Resample `x_in` onto the spatial grid of `x_ref`, with offset residuals
/// predicted from `x_ref`.
pub fn guided_sample<T: Scalar>(
    tape: &mut Tape<T>,
    x_in: Var,
    x_ref: Var,
    p: &GuidedSampler<T>,
) -> Result<Var> {
    let (si, sr) = (tape.shape(x_in), tape.shape(x_ref));
    if p.offset.c_in(tape) != sr.c {
        return Err(config_err!(
            "guided sampler offset conv expects {} reference channels, got {}",
            p.offset.c_in(tape),
            sr.c
        ));
    }
    if si.n != sr.n {
        return Err(config_err!("guided sample batch mismatch: {} vs {}", si.n, sr.n));
    }
    let residual = p.offset.apply(tape, x_ref)?;
    let coords = offset_coords(tape, residual, p.scope, si.h, si.w)?;
    tape.grid_sample(x_in, coords)
}

/// Bank -> feature-map resolution, then feature map -> `target` resolution
/// guided by the carried bank.
///
/// With `down == None` the bank is carried down by plain bilinear resizing.
pub fn guided_up_down<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    bank: Var,
    down: Option<&GuidedSampler<T>>,
    up: &GuidedSampler<T>,
    target: (usize, usize),
) -> Result<Var> {
    let (xs, bs) = (tape.shape(x), tape.shape(bank));
    if bs.h < xs.h || bs.w < xs.w {
        return Err(config_err!(
            "bank {}x{} is smaller than the feature map {}x{}",
            bs.h,
            bs.w,
            xs.h,
            xs.w
        ));
    }
    let bank_ds = match down {
        Some(p) => guided_sample(tape, bank, x, p)?,
        None if (bs.h, bs.w) == (xs.h, xs.w) => bank,
        None => tape.bilinear_resize(bank, xs.h, xs.w)?,
    };
    let guidance = if (xs.h, xs.w) == target {
        bank_ds
    } else {
        tape.bilinear_resize(bank_ds, target.0, target.1)?
    };
    guided_sample(tape, x, guidance, up)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn base_offsets_identity_and_upsample() {
        let f = make_base_offsets::<f64>(3, 4, 3, 4).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(f.at(y, x), (x as f64, y as f64));
            }
        }
        let f = make_base_offsets::<f64>(1, 2, 1, 4).unwrap();
        let xs: Vec<f64> = (0..4).map(|x| f.at(0, x).0).collect();
        assert_eq!(xs, vec![-0.25, 0.25, 0.75, 1.25]);
    }

    #[test]
    fn base_offsets_non_integer_downsample_match_resize() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::uniform(shape(1, 3, 14, 14), -1.0, 1.0, &mut rng(2)));
        let f = make_base_offsets::<f64>(14, 14, 9, 9).unwrap();
        let c = tape.constant(f.coords);
        let a = tape.grid_sample(x, c).unwrap();
        let b = tape.bilinear_resize(x, 9, 9).unwrap();
        assert!(tape.value(a).max_abs_diff(tape.value(b)) < 1e-6);
    }

    #[test]
    fn dysample_zero_init_is_bilinear() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::uniform(shape(2, 3, 5, 4), -1.0, 1.0, &mut rng(3)));
        for r in 1..=3 {
            let p = DySampleParams::zeroed(3, r).unwrap().bind(&mut tape);
            let y = dysample_up(&mut tape, x, &p).unwrap();
            let z = tape.bilinear_resize(x, 5 * r, 4 * r).unwrap();
            assert_eq!(tape.shape(y), shape(2, 3, 5 * r, 4 * r));
            assert!(tape.value(y).max_abs_diff(tape.value(z)) < 1e-6);
        }
    }

    #[test]
    fn dysample_rejects_fractional_factor() {
        assert!(DySampleParams::<f64>::with_factor(3, 1.5).is_err());
        assert!(DySampleParams::<f64>::with_factor(3, 2.0).is_ok());
    }

    #[test]
    fn dysample_constant_input_stays_constant() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(shape(1, 2, 4, 4), 1.75));
        let mut p = DySampleParams::zeroed(2, 2).unwrap();
        p.offset_conv = ConvParams::kaiming(8, 2, 1, &mut rng(4)).unwrap();
        p.offset_conv.bias = Tensor::uniform(p.offset_conv.bias.shape(), -3.0, 3.0, &mut rng(5));
        let p = p.bind(&mut tape);
        let y = dysample_up(&mut tape, x, &p).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| (v - 1.75).abs() < 1e-12));
    }

    #[test]
    fn dysample_matches_step_by_step_composition() {
        let mut r = rng(6);
        let xv = Tensor::<f64>::uniform(shape(1, 2, 3, 4), -1.0, 1.0, &mut r);
        let conv = ConvParams::kaiming(8, 2, 1, &mut r).unwrap();
        let p = DySampleParams::new(conv.clone(), 2, 0.25).unwrap();
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(xv.clone());
        let bound = p.bind(&mut tape);
        let y = dysample_up(&mut tape, x, &bound).unwrap();

        let raw = kernels::conv2d_forward(&xv, &conv.weight, Some(&conv.bias), 1, 0).unwrap();
        let shuffled = kernels::pixel_shuffle_forward(&raw, 2).unwrap();
        let base = kernels::base_coords::<f64>(1, 3, 4, 6, 8).unwrap();
        let coords = Tensor::from_fn(base.shape(), |n, c, yy, xx| {
            base.at(n, c, yy, xx) + 0.25 * shuffled.at(n, c, yy, xx)
        });
        let want = kernels::grid_sample_forward(&xv, &coords).unwrap();
        assert!(tape.value(y).max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn guided_zero_init_any_ratio_is_bilinear() {
        for (hi, wi, ho, wo) in [(7, 7, 10, 10), (16, 16, 8, 8), (9, 7, 18, 14), (14, 14, 9, 9)] {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(Tensor::uniform(shape(2, 3, hi, wi), -1.0, 1.0, &mut rng(7)));
            let g = tape.leaf(Tensor::uniform(shape(2, 5, ho, wo), -1.0, 1.0, &mut rng(8)));
            let p = GuidedSamplerParams::zeroed(5).unwrap().bind(&mut tape);
            let y = guided_sample(&mut tape, x, g, &p).unwrap();
            let z = tape.bilinear_resize(x, ho, wo).unwrap();
            assert_eq!(tape.shape(y), shape(2, 3, ho, wo));
            assert!(tape.value(y).max_abs_diff(tape.value(z)) < 1e-6);
        }
    }

    #[test]
    fn guided_channel_mismatch_is_config_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(shape(1, 3, 4, 4)));
        let g = tape.leaf(Tensor::zeros(shape(1, 4, 8, 8)));
        let p = GuidedSamplerParams::zeroed(5).unwrap().bind(&mut tape);
        assert!(guided_sample(&mut tape, x, g, &p).is_err());
        let bad = ConvParams::<f64>::zeros(3, 5, 3).unwrap();
        assert!(GuidedSamplerParams::new(bad, 0.25).is_err());
    }

    #[test]
    fn forced_unit_shift_on_ramp() {
        // Horizontal ramp: value equals the column index.
        let (h, w) = (6, 6);
        let ramp = Tensor::<f64>::from_fn(shape(1, 1, h, w), |_, _, _, x| x as f64);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(ramp);
        let g = tape.leaf(Tensor::zeros(shape(1, 1, 12, 12)));
        // Zero weights, bias (1/scope, 0): residual of exactly +1 column.
        let mut conv = ConvParams::<f64>::zeros(2, 1, 3).unwrap();
        conv.bias = Tensor::from_vec(conv.bias.shape(), vec![4.0, 0.0]).unwrap();
        let p = GuidedSamplerParams::new(conv, 0.25).unwrap().bind(&mut tape);
        let y = guided_sample(&mut tape, x, g, &p).unwrap();
        let z = tape.bilinear_resize(x, 12, 12).unwrap();
        let (yv, zv) = (tape.value(y), tape.value(z));
        for oy in 0..12 {
            for ox in 0..12 {
                let src = (ox as f64 + 0.5) * 0.5 - 0.5;
                let want = (src + 1.0).clamp(0.0, (w - 1) as f64);
                assert!((yv.at(0, 0, oy, ox) - want).abs() < 1e-12);
                // Interior pixels are the zero-residual output plus one column.
                if src >= 0.0 && src + 1.0 <= (w - 1) as f64 {
                    assert!((yv.at(0, 0, oy, ox) - zv.at(0, 0, oy, ox) - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn coordinates_past_border_take_border_values() {
        let mut tape = Tape::<f64>::new();
        let xv = Tensor::<f64>::uniform(shape(1, 2, 4, 5), -1.0, 1.0, &mut rng(9));
        let x = tape.leaf(xv.clone());
        let g = tape.leaf(Tensor::zeros(shape(1, 1, 3, 3)));
        let mut conv = ConvParams::<f64>::zeros(2, 1, 3).unwrap();
        conv.bias = Tensor::from_vec(conv.bias.shape(), vec![1e3, -1e3]).unwrap();
        let p = GuidedSamplerParams::new(conv, 0.25).unwrap().bind(&mut tape);
        let y = guided_sample(&mut tape, x, g, &p).unwrap();
        let yv = tape.value(y);
        assert!(yv.is_finite());
        for c in 0..2 {
            for oy in 0..3 {
                for ox in 0..3 {
                    // Far right column, top row.
                    assert_eq!(yv.at(0, c, oy, ox), xv.at(0, c, 0, 4));
                }
            }
        }
    }

    #[test]
    fn up_down_zero_init_is_bilinear_2x() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::uniform(shape(1, 4, 4, 4), -1.0, 1.0, &mut rng(10)));
        let bank = tape.leaf(Tensor::uniform(shape(1, 3, 16, 16), -1.0, 1.0, &mut rng(11)));
        let down = GuidedSamplerParams::zeroed(4).unwrap().bind(&mut tape);
        let up = GuidedSamplerParams::zeroed(3).unwrap().bind(&mut tape);
        let y = guided_up_down(&mut tape, x, bank, Some(&down), &up, (8, 8)).unwrap();
        let z = tape.bilinear_resize(x, 8, 8).unwrap();
        assert!(tape.value(y).max_abs_diff(tape.value(z)) < 1e-6);
    }

    #[test]
    fn up_down_constant_fields() {
        let mut r = rng(12);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(shape(1, 2, 4, 4), -0.5));
        let bank = tape.leaf(Tensor::full(shape(1, 3, 8, 8), 2.0));
        let mut pd = GuidedSamplerParams::zeroed(2).unwrap();
        pd.offset_conv = ConvParams::kaiming(2, 2, 3, &mut r).unwrap();
        let mut pu = GuidedSamplerParams::zeroed(3).unwrap();
        pu.offset_conv = ConvParams::kaiming(2, 3, 3, &mut r).unwrap();
        let (down, up) = (pd.bind(&mut tape), pu.bind(&mut tape));
        let y = guided_up_down(&mut tape, x, bank, Some(&down), &up, (8, 8)).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| (v + 0.5).abs() < 1e-12));
    }

    #[test]
    fn up_down_equals_manual_composition() {
        let mut r = rng(13);
        let xv = Tensor::<f64>::uniform(shape(1, 3, 5, 4), -1.0, 1.0, &mut r);
        let bv = Tensor::<f64>::uniform(shape(1, 2, 10, 8), -1.0, 1.0, &mut r);
        let mut pd = GuidedSamplerParams::zeroed(3).unwrap();
        pd.offset_conv = ConvParams::kaiming(2, 3, 3, &mut r).unwrap();
        let mut pu = GuidedSamplerParams::zeroed(2).unwrap();
        pu.offset_conv = ConvParams::kaiming(2, 2, 3, &mut r).unwrap();

        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(xv.clone());
        let b = tape.leaf(bv.clone());
        let (down, up) = (pd.bind(&mut tape), pu.bind(&mut tape));
        let got = guided_up_down(&mut tape, x, b, Some(&down), &up, (9, 7)).unwrap();

        let mut t2 = Tape::<f64>::new();
        let x2 = t2.leaf(xv);
        let b2 = t2.leaf(bv);
        let (down2, up2) = (pd.bind(&mut t2), pu.bind(&mut t2));
        let bank_ds = guided_sample(&mut t2, b2, x2, &down2).unwrap();
        let guide = t2.bilinear_resize(bank_ds, 9, 7).unwrap();
        let want = guided_sample(&mut t2, x2, guide, &up2).unwrap();
        assert_eq!(tape.value(got), t2.value(want));
        assert_eq!(tape.shape(got), shape(1, 3, 9, 7));
    }

    #[test]
    fn up_down_rejects_small_bank() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(shape(1, 2, 8, 8)));
        let bank = tape.leaf(Tensor::zeros(shape(1, 2, 4, 4)));
        let up = GuidedSamplerParams::zeroed(2).unwrap().bind(&mut tape);
        assert!(guided_up_down(&mut tape, x, bank, None, &up, (16, 16)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn zero_init_guided_sample_is_bilinear(
                hi in 2usize..12, wi in 2usize..12, ho in 2usize..16, wo in 2usize..16, seed: u64,
            ) {
                let mut tape = Tape::<f64>::new();
                let x = tape.leaf(Tensor::uniform(shape(1, 2, hi, wi), -1.0, 1.0, &mut rng(seed)));
                let g = tape.leaf(Tensor::uniform(shape(1, 3, ho, wo), -1.0, 1.0, &mut rng(seed ^ 1)));
                let p = GuidedSamplerParams::zeroed(3).unwrap().bind(&mut tape);
                let y = guided_sample(&mut tape, x, g, &p).unwrap();
                let z = tape.bilinear_resize(x, ho, wo).unwrap();
                prop_assert!(tape.value(y).max_abs_diff(tape.value(z)) < 1e-6);
            }

            #[test]
            fn output_follows_guidance_resolution(
                hi in 2usize..10, wi in 2usize..10, ho in 1usize..14, wo in 1usize..14, seed: u64,
            ) {
                let mut r = rng(seed);
                let mut tape = Tape::<f64>::new();
                let x = tape.leaf(Tensor::uniform(shape(2, 2, hi, wi), -1.0, 1.0, &mut r));
                let g = tape.leaf(Tensor::uniform(shape(2, 3, ho, wo), -1.0, 1.0, &mut r));
                let mut conv = ConvParams::<f64>::zeros(2, 3, 3).unwrap();
                conv.weight = Tensor::uniform(conv.weight.shape(), -2.0, 2.0, &mut r);
                let p = GuidedSamplerParams::new(conv, 0.25).unwrap().bind(&mut tape);
                let y = guided_sample(&mut tape, x, g, &p).unwrap();
                prop_assert_eq!(tape.shape(y), shape(2, 2, ho, wo));
                prop_assert!(tape.value(y).is_finite());
            }

            #[test]
            fn far_offsets_clamp_to_border_values(bx in -1e4f64..1e4, by in -1e4f64..1e4, seed: u64) {
                prop_assume!(bx.abs() > 100.0 && by.abs() > 100.0);
                let mut tape = Tape::<f64>::new();
                let xv = Tensor::<f64>::uniform(shape(1, 1, 4, 5), -1.0, 1.0, &mut rng(seed));
                let x = tape.leaf(xv.clone());
                let g = tape.leaf(Tensor::zeros(shape(1, 1, 3, 3)));
                let mut conv = ConvParams::<f64>::zeros(2, 1, 3).unwrap();
                conv.bias = Tensor::from_vec(conv.bias.shape(), vec![bx, by]).unwrap();
                let p = GuidedSamplerParams::new(conv, 0.25).unwrap().bind(&mut tape);
                let y = guided_sample(&mut tape, x, g, &p).unwrap();
                let corner = xv.at(0, 0, if by > 0.0 { 3 } else { 0 }, if bx > 0.0 { 4 } else { 0 });
                prop_assert!(tape.value(y).data().iter().all(|&v| v == corner));
            }
        }
    }
}
