//! 16-bit binary PGM export of depth maps.

use std::path::Path;

use crate::error::{config_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `P5` bytes for a single-channel `(1, 1, h, w)` tensor, min-max normalised
/// to `0..=65535` with big-endian samples. A constant tensor encodes as all
/// zeros.
pub fn pgm_bytes<T: Scalar>(depth: &Tensor<T>) -> Result<Vec<u8>> {
    let s = depth.shape();
    if s.n != 1 || s.c != 1 {
        return Err(config_err!("PGM export needs a single-channel image, got {s:?}"));
    }
    let vals: Vec<f64> = depth.data().iter().map(|v| v.as_f64()).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(config_err!("PGM export of a non-finite depth map"));
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{} {}\n65535\n", s.w, s.h).into_bytes();
    out.reserve(2 * vals.len());
    for v in vals {
        let q = if hi > lo {
            ((v - lo) / (hi - lo) * 65535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn export_pgm<T: Scalar>(depth: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, pgm_bytes(depth)?)?;
    Ok(())
}
