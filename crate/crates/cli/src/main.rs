use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use banknet::config::{ablation_chain, RunConfig};
use banknet::data::{read_dataset, write_dataset, Dataset};
use banknet::footprint::{count_params, footprint};
use banknet::gradcheck::{run_suite, select, DEFAULT_INSTANCES};
use banknet::model::predict;
use banknet::pgm::export_pgm;
use banknet::train::{evaluate, fit, FitOptions};
use banknet::{checkpoint, Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "banknet", version, about = "Shared-bank depth decoder: data, training, evaluation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic scenes to BNKT files plus a manifest.
    GenData {
        /// First scene seed; scenes use seeds `seed..seed+count`.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: u64,
        /// `HxW` or a single side length.
        #[arg(long, value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Train from fresh weights and write logs and a checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Print progress to stderr.
        #[arg(long)]
        verbose: bool,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Median-align predictions per image before computing metrics (default).
        #[arg(long, overrides_with = "no_median_align")]
        median_align: bool,
        #[arg(long)]
        no_median_align: bool,
        /// Write each prediction as a 16-bit PGM into this directory.
        #[arg(long)]
        export_pgm: Option<PathBuf>,
    },
    /// Train the four bank-ablation configurations and compare them.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Keep each row's logs and checkpoint under this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// Suite name or module (tensor-core, resample, banks, model, train-eval).
        #[arg(long)]
        module: Option<String>,
        #[arg(long, default_value_t = DEFAULT_INSTANCES)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Analytic parameter and FLOP report.
    Footprint {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_size, default_value = "64x64")]
        input_size: (usize, usize),
        /// Second configuration to report overhead ratios against `--config`.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Held-out set for periodic evaluation; the training set otherwise.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    iters: usize,
    #[arg(long)]
    seed: u64,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad size {s:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(s).map(|v| (v, v)),
    }
}

struct Loaded {
    cfg: RunConfig,
    train: Dataset<f32>,
    eval: Option<Dataset<f32>>,
}

fn load_run(run: &RunArgs) -> Result<Loaded> {
    let cfg = RunConfig::load(&run.config)?;
    let (_, train) = read_dataset(&run.data)?;
    let eval = match &run.eval_data {
        Some(dir) => Some(read_dataset(dir)?.1),
        None => None,
    };
    Ok(Loaded { cfg, train, eval })
}

fn gen_data(seed: u64, count: u64, (h, w): (usize, usize), out: &Path, split: &str) -> Result<()> {
    let end = seed
        .checked_add(count)
        .ok_or_else(|| Error::Config("seed range overflows".into()))?;
    let m = write_dataset(out, split, seed..end, h, w)?;
    println!("wrote {} scenes ({h}x{w}, split={}) to {}", m.entries.len(), m.split, out.display());
    Ok(())
}

fn train(run: &RunArgs, out: &Path, verbose: bool) -> Result<()> {
    let l = load_run(run)?;
    let opts = FitOptions {
        iterations: run.iters,
        seed: run.seed,
        out: Some(out.to_path_buf()),
        verbose,
    };
    let r = fit(&l.cfg, &l.train, l.eval.as_ref(), &opts)?;
    let (first, last) = (r.evals[0], *r.evals.last().expect("final evaluation"));
    println!("eval l1 iter=0 {:.6} iter={} {:.6}", first.l1, last.iter, last.l1);
    println!("{}", last.metrics.record(last.iter));
    println!("checkpoint written to {}", out.join(banknet::train::CHECKPOINT_DIR).display());
    Ok(())
}

fn eval(dir: &Path, data: &Path, align: bool, export: Option<&Path>) -> Result<()> {
    let (cfg, store) = checkpoint::load::<f32>(dir)?;
    let (manifest, data) = read_dataset::<f32>(data)?;
    let (l1, metrics) = evaluate(&cfg.model, &store, &data, align)?;
    println!("median_align={align} l1={l1:.6}");
    println!("{metrics}");
    if let Some(out) = export {
        std::fs::create_dir_all(out)?;
        for (i, (img, _)) in manifest.entries.iter().enumerate() {
            let (image, _) = data.batch(&[i])?;
            let pred = predict(&cfg.model, &store, &image)?;
            let stem = img.trim_end_matches(".bnkt");
            export_pgm(&pred, out.join(format!("{stem}_pred.pgm")))?;
        }
        println!("wrote {} depth maps to {}", manifest.entries.len(), out.display());
    }
    Ok(())
}

fn ablate(run: &RunArgs, out: Option<&Path>) -> Result<()> {
    let l = load_run(run)?;
    let (h, w) = l.train.images[0].shape().spatial();
    println!(
        "{:<34} {:>8} {:>12} {:>10} {:>10} {:>8} {:>8} {:>8}",
        "configuration", "params", "flops", "l1_start", "l1_end", "d1", "absrel", "rmse"
    );
    let mut records = Vec::new();
    for (name, model) in ablation_chain(&l.cfg.model) {
        let cfg = RunConfig {
            model,
            train: l.cfg.train.clone(),
        };
        let opts = FitOptions {
            iterations: run.iters,
            seed: run.seed,
            out: out.map(|d| d.join(name.trim_start_matches('+').replace('+', "_"))),
            verbose: false,
        };
        let started = Instant::now();
        let r = fit(&cfg, &l.train, l.eval.as_ref(), &opts)?;
        let params = count_params(&cfg.model)?;
        let flops = footprint(&cfg.model, h, w)?.total().flops;
        let (first, last) = (r.evals[0], *r.evals.last().expect("final evaluation"));
        let m = last.metrics;
        println!(
            "{:<34} {:>8} {:>12} {:>10.5} {:>10.5} {:>8.4} {:>8.4} {:>8.4}",
            name, params, flops, first.l1, last.l1, m.delta1, m.abs_rel, m.rmse
        );
        records.push(format!(
            "row={name} params={params} flops={flops} l1_start={} l1_end={} d1={} d2={} d3={} absrel={} rmse={} log10={} seconds={:.1}",
            first.l1,
            last.l1,
            m.delta1,
            m.delta2,
            m.delta3,
            m.abs_rel,
            m.rmse,
            m.log10,
            started.elapsed().as_secs_f64()
        ));
    }
    println!();
    for r in records {
        println!("{r}");
    }
    Ok(())
}

fn gradcheck(module: Option<&str>, instances: usize, seed: u64) -> Result<bool> {
    let mut ok = true;
    for name in select(module)? {
        let started = Instant::now();
        let r = run_suite(name, instances, seed)?;
        println!("{} time={:.2}s", r.line(), started.elapsed().as_secs_f64());
        ok &= r.passed();
    }
    Ok(ok)
}

fn footprint_cmd(config: &Path, (h, w): (usize, usize), compare: Option<&Path>) -> Result<()> {
    let base = RunConfig::load(config)?;
    let reference = footprint(&base.model, h, w)?;
    println!("## {}", config.display());
    print!("{}", reference.render());
    if let Some(other) = compare {
        let cand = RunConfig::load(other)?;
        let report = footprint(&cand.model, h, w)?;
        println!();
        println!("## {}", other.display());
        print!("{}", report.render());
        let (p, f) = report.overhead_vs(&reference);
        println!();
        println!("overhead params_ratio={p:.4} flops_ratio={f:.4}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData {
            seed,
            count,
            size,
            out,
            split,
        } => gen_data(seed, count, size, &out, &split).map(|_| true),
        Command::Train { run, out, verbose } => train(&run, &out, verbose).map(|_| true),
        Command::Eval {
            checkpoint,
            data,
            median_align: _,
            no_median_align,
            export_pgm,
        } => eval(&checkpoint, &data, !no_median_align, export_pgm.as_deref()).map(|_| true),
        Command::Ablate { run, out } => ablate(&run, out.as_deref()).map(|_| true),
        Command::Gradcheck {
            module,
            instances,
            seed,
        } => gradcheck(module.as_deref(), instances, seed),
        Command::Footprint {
            config,
            input_size,
            compare,
        } => footprint_cmd(&config, input_size, compare.as_deref()).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
