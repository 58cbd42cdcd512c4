//! Depth evaluation metrics.

use std::fmt;

use crate::error::{config_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ground-truth values at or below this are treated as missing.
pub const VALID_DEPTH: f64 = 1e-6;
/// Predictions are clamped to at least this before ratios and logs.
pub const MIN_PRED: f64 = 1e-6;

pub fn valid_mask<T: Scalar>(gt: &Tensor<T>) -> Tensor<T> {
    let eps = T::from_f64_lossy(VALID_DEPTH);
    gt.map(|v| if v > eps { T::one() } else { T::zero() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub abs_rel: f64,
    pub rmse: f64,
    pub log10: f64,
    pub valid_pixel_count: usize,
}

impl MetricsReport {
    /// One metrics-history record.
    pub fn record(&self, iter: usize) -> String {
        format!(
            "iter={iter} d1={:.6} d2={:.6} d3={:.6} absrel={:.6} rmse={:.6} log10={:.6}",
            self.delta1, self.delta2, self.delta3, self.abs_rel, self.rmse, self.log10
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "d1={:.4} d2={:.4} d3={:.4} absrel={:.4} rmse={:.4} log10={:.4} (n={})",
            self.delta1, self.delta2, self.delta3, self.abs_rel, self.rmse, self.log10, self.valid_pixel_count
        )
    }
}

/// Pixel-pooled running sums; images of different sizes weigh by pixel count.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    count: usize,
    within: [usize; 3],
    abs_rel: f64,
    sq: f64,
    log10: f64,
}

impl MetricsAccumulator {
    pub fn add<T: Scalar>(&mut self, pred: &Tensor<T>, gt: &Tensor<T>, mask: &Tensor<T>) -> Result<()> {
        if pred.shape() != gt.shape() || pred.shape() != mask.shape() {
            return Err(config_err!(
                "metric shape mismatch: pred {:?}, gt {:?}, mask {:?}",
                pred.shape(),
                gt.shape(),
                mask.shape()
            ));
        }
        for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(mask.data()) {
            if m == T::zero() {
                continue;
            }
            let (p, g) = (p.as_f64().max(MIN_PRED), g.as_f64());
            if g <= 0.0 {
                return Err(Error::Eval(format!("non-positive ground truth {g} on a valid pixel")));
            }
            let ratio = (p / g).max(g / p);
            let mut thr = 1.25;
            for w in &mut self.within {
                if ratio < thr {
                    *w += 1;
                }
                thr *= 1.25;
            }
            self.abs_rel += (p - g).abs() / g;
            self.sq += (p - g) * (p - g);
            self.log10 += (p.log10() - g.log10()).abs();
            self.count += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        if self.count == 0 {
            return Err(Error::Eval("no valid pixels to evaluate".into()));
        }
        let n = self.count as f64;
        Ok(MetricsReport {
            delta1: self.within[0] as f64 / n,
            delta2: self.within[1] as f64 / n,
            delta3: self.within[2] as f64 / n,
            abs_rel: self.abs_rel / n,
            rmse: (self.sq / n).sqrt(),
            log10: self.log10 / n,
            valid_pixel_count: self.count,
        })
    }
}

pub fn eval_metrics<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &Tensor<T>) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::default();
    acc.add(pred, gt, mask)?;
    acc.finish()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Scales each batch item of `pred` by `median(gt) / median(pred)` over its
/// valid pixels. Items whose prediction median is not positive are left as
/// they are.
pub fn median_align<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != gt.shape() || pred.shape() != mask.shape() {
        return Err(config_err!("median alignment shape mismatch"));
    }
    let s = pred.shape();
    let len = s.c * s.plane();
    let mut out = pred.clone();
    for n in 0..s.n {
        let range = n * len..(n + 1) * len;
        let (mut ps, mut gs) = (Vec::new(), Vec::new());
        for i in range.clone() {
            if mask.data()[i] != T::zero() {
                ps.push(pred.data()[i].as_f64());
                gs.push(gt.data()[i].as_f64());
            }
        }
        let (Some(mp), Some(mg)) = (median(ps), median(gs)) else {
            continue;
        };
        if mp > 0.0 {
            let k = T::from_f64_lossy(mg / mp);
            for v in &mut out.data_mut()[range] {
                *v *= k;
            }
        }
    }
    Ok(out)
}
