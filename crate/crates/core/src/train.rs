//! L1 training loop and evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::{ModelConfig, RunConfig};
use crate::data::Dataset;
use crate::error::{config_err, Error, Result};
use crate::metrics::{median_align, valid_mask, MetricsAccumulator, MetricsReport};
use crate::model::{predict, Network};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const METRICS_LOG: &str = "metrics.log";
pub const EVAL_LOG: &str = "eval.log";
pub const LOSS_LOG: &str = "loss.log";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Mean absolute error over pixels where `mask` is non-zero, as a recorded
/// scalar on `tape`.
pub fn l1_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: crate::tape::Var,
    gt: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<crate::tape::Var> {
    tape.masked_l1(pred, gt, mask)
}

/// Forward, backward and one optimizer step on a batch; returns the loss
/// before the update.
pub fn train_step<T: Scalar>(
    cfg: &ModelConfig,
    store: &mut ParamStore<T>,
    opt: &mut Adam<T>,
    images: &Tensor<T>,
    depths: &Tensor<T>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let net = Network::bind(cfg, store, &mut tape)?;
    let x = tape.constant(images.clone());
    let trace = net.forward(&mut tape, x)?;
    let mask = valid_mask(depths);
    let loss = l1_loss(&mut tape, trace.depth, depths, &mask)?;
    let value = tape.value(loss).item().expect("scalar loss").as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    let grads = tape.backward(loss)?;
    let grads = net.bound.grads(&tape, &grads);
    for ((name, _), g) in store.tensors().into_iter().zip(&grads) {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name} is not finite")));
        }
    }
    opt.update(store.tensors_mut(), &grads)?;
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub iter: usize,
    /// Pixel-pooled L1 error of the raw prediction.
    pub l1: f64,
    pub metrics: MetricsReport,
}

/// Evaluates every item of `data`; metrics use median-aligned predictions
/// when `align` is set, the L1 error never does.
pub fn evaluate<T: Scalar>(
    cfg: &ModelConfig,
    store: &ParamStore<T>,
    data: &Dataset<T>,
    align: bool,
) -> Result<(f64, MetricsReport)> {
    if data.is_empty() {
        return Err(Error::Eval("evaluation set is empty".into()));
    }
    let mut acc = MetricsAccumulator::default();
    let (mut abs, mut count) = (0.0f64, 0usize);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(8) {
        let (images, gt) = data.batch(chunk)?;
        let pred = predict(cfg, store, &images)?;
        let mask = valid_mask(&gt);
        for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(mask.data()) {
            if m != T::zero() {
                abs += (p.as_f64() - g.as_f64()).abs();
                count += 1;
            }
        }
        let pred = if align { median_align(&pred, &gt, &mask)? } else { pred };
        acc.add(&pred, &gt, &mask)?;
    }
    if count == 0 {
        return Err(Error::Eval("evaluation set has no valid pixels".into()));
    }
    Ok((abs / count as f64, acc.finish()?))
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub iterations: usize,
    pub seed: u64,
    /// Directory for logs and the checkpoint; nothing is written when `None`.
    pub out: Option<PathBuf>,
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub store: ParamStore<T>,
    /// Training loss of every iteration, before its update.
    pub losses: Vec<f64>,
    pub evals: Vec<EvalResult>,
}

struct Batches {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    fn new(len: usize, seed: u64) -> Self {
        let mut b = Self {
            order: (0..len).collect(),
            pos: len,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a),
        };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.reshuffle();
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

struct Logs {
    dir: PathBuf,
    loss: String,
    metrics: String,
    eval: String,
}

impl Logs {
    fn flush(&self) -> Result<()> {
        fs::write(self.dir.join(LOSS_LOG), &self.loss)?;
        fs::write(self.dir.join(METRICS_LOG), &self.metrics)?;
        fs::write(self.dir.join(EVAL_LOG), &self.eval)?;
        Ok(())
    }
}

/// Seeded training from fresh weights. Evaluates at iteration 0, every
/// `eval_every` iterations and at the end, on `eval` or else on `train`.
pub fn fit<T: Scalar>(
    cfg: &RunConfig,
    train: &Dataset<T>,
    eval: Option<&Dataset<T>>,
    opts: &FitOptions,
) -> Result<FitResult<T>> {
    let store = ParamStore::init(&cfg.model, opts.seed)?;
    fit_from(cfg, store, train, eval, opts)
}

pub fn fit_from<T: Scalar>(
    cfg: &RunConfig,
    mut store: ParamStore<T>,
    train: &Dataset<T>,
    eval: Option<&Dataset<T>>,
    opts: &FitOptions,
) -> Result<FitResult<T>> {
    if train.is_empty() {
        return Err(config_err!("training set is empty"));
    }
    let eval_set = eval.unwrap_or(train);
    let mut logs = match &opts.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(Logs {
                dir: dir.clone(),
                loss: String::new(),
                metrics: String::new(),
                eval: String::new(),
            })
        }
        None => None,
    };
    let save = |logs: &Option<Logs>, store: &ParamStore<T>| -> Result<()> {
        if let Some(l) = logs {
            checkpoint::save(l.dir.join(CHECKPOINT_DIR), cfg, store)?;
            l.flush()?;
        }
        Ok(())
    };

    let mut opt = Adam::new(store.tensors().into_iter().map(|(_, t)| t), &cfg.train);
    let mut batches = Batches::new(train.len(), opts.seed);
    let mut losses = Vec::with_capacity(opts.iterations);
    let mut evals = Vec::new();

    let mut run_eval = |iter: usize, store: &ParamStore<T>, logs: &mut Option<Logs>| -> Result<()> {
        let (l1, metrics) = evaluate(&cfg.model, store, eval_set, cfg.train.median_align)?;
        if opts.verbose {
            eprintln!("eval iter={iter} l1={l1:.5} {metrics}");
        }
        if let Some(l) = logs {
            writeln!(l.metrics, "{}", metrics.record(iter)).unwrap();
            writeln!(l.eval, "iter={iter} l1={l1}").unwrap();
        }
        evals.push(EvalResult { iter, l1, metrics });
        Ok(())
    };

    run_eval(0, &store, &mut logs)?;
    for it in 1..=opts.iterations {
        let idx = batches.next(cfg.train.batch_size);
        let (images, depths) = train.batch(&idx)?;
        opt.lr = cfg.train.schedule.at(cfg.train.lr, it, opts.iterations);
        let loss = match train_step(&cfg.model, &mut store, &mut opt, &images, &depths) {
            Ok(v) => v,
            Err(e @ Error::NonFinite(_)) => {
                save(&logs, &store)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        losses.push(loss);
        if let Some(l) = &mut logs {
            writeln!(l.loss, "iter={it} loss={loss}").unwrap();
        }
        if opts.verbose && (it % 50 == 0 || it == 1) {
            eprintln!("iter={it} loss={loss:.5}");
        }
        let every = cfg.train.eval_every;
        if it == opts.iterations || (every > 0 && it % every == 0) {
            run_eval(it, &store, &mut logs)?;
        }
    }
    save(&logs, &store)?;
    Ok(FitResult { store, losses, evals })
}

/// Loads a checkpoint directory and evaluates it.
pub fn evaluate_checkpoint(dir: &Path, data: &Dataset<f32>, align: bool) -> Result<(f64, MetricsReport)> {
    let (cfg, store) = checkpoint::load::<f32>(dir)?;
    evaluate(&cfg.model, &store, data, align)
}
