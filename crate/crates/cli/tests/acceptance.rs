//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so that the lines always reach the terminal.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use banknet::bnkt;
use banknet::config::{ablation_chain, EncoderMode, ModelConfig, RunConfig};
use banknet::data::Dataset;
use banknet::footprint::{count_params, overhead_ratio};
use banknet::model::Network;
use banknet::params::ParamStore;
use banknet::pgm::pgm_bytes;
use banknet::resample::{dysample_up, guided_sample, guided_up_down, DySampleParams, GuidedSamplerParams};
use banknet::tape::Tape;
use banknet::tensor::{shape, Tensor};
use banknet::train::{fit, FitOptions, EVAL_LOG, METRICS_LOG};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BILINEAR_TOL: f64 = 1e-6;
const RATIOS: [(f64, &str); 5] = [(0.5, "1/2"), (9.0 / 14.0, "9/14"), (1.0, "1"), (1.5, "3/2"), (2.0, "2")];
const OVERHEAD_TOL: f64 = 1e-4;
const LOSS_RATIO: f64 = 0.25;
const MIN_DELTA1: f64 = 0.85;
const TRAIN_ITERS: usize = 2000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn banknet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_banknet"))
        .args(args)
        .output()
        .expect("spawn banknet")
}

fn time_limit(elapsed: Duration, limit_s: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit_s, format!("runtime={s:.1}s (limit {limit_s}s)"))
}

fn bilinear_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f64>::uniform(shape(2, 8, 16, 16), -1.0, 1.0, &mut rng);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for (ratio, _) in RATIOS {
        let out = (16.0 * ratio).round() as usize;
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let reference = tape.bilinear_resize(xv, out, out).unwrap();
        let reference = tape.value(reference).clone();
        let mut compare = |tape: &Tape<f64>, v| {
            worst = worst.max(tape.value(v).max_abs_diff(&reference));
            checks += 1;
        };

        // Guided sampling onto a reference grid of the target size.
        let guide = tape.constant(Tensor::uniform(shape(2, 3, out, out), -1.0, 1.0, &mut rng));
        let gs = GuidedSamplerParams::<f64>::zeroed(3).unwrap().bind(&mut tape);
        let y = guided_sample(&mut tape, xv, guide, &gs).unwrap();
        compare(&tape, y);

        // Bank -> feature resolution -> target, with and without guided downsampling.
        let bank = tape.constant(Tensor::uniform(shape(2, 4, 32, 32), -1.0, 1.0, &mut rng));
        let down = GuidedSamplerParams::<f64>::zeroed(8).unwrap().bind(&mut tape);
        let up = GuidedSamplerParams::<f64>::zeroed(4).unwrap().bind(&mut tape);
        for d in [Some(&down), None] {
            let y = guided_up_down(&mut tape, xv, bank, d, &up, (out, out)).unwrap();
            compare(&tape, y);
        }

        // DySample only expresses integer factors.
        if ratio >= 1.0 && ratio.fract() == 0.0 {
            let ds = DySampleParams::<f64>::with_factor(8, ratio).unwrap().bind(&mut tape);
            let y = dysample_up(&mut tape, xv, &ds).unwrap();
            compare(&tape, y);
        } else {
            assert!(DySampleParams::<f64>::with_factor(8, ratio).is_err());
        }
    }
    let (fast, rt) = time_limit(started.elapsed(), 10.0);
    outcome(
        worst < BILINEAR_TOL && fast,
        format!("checks={checks} max_abs_err={worst:.3e} (tol {BILINEAR_TOL:e}) {rt}"),
    )
}

fn gradient_suite() -> Outcome {
    let started = Instant::now();
    let out = banknet(&["gradcheck", "--instances", "20"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().filter(|l| l.contains("suite=")).collect();
    let failed: Vec<&str> = lines.iter().copied().filter(|l| !l.starts_with("PASS")).collect();
    let worst = lines
        .iter()
        .filter_map(|l| l.split_whitespace().find_map(|f| f.strip_prefix("max_rel_err=")))
        .filter_map(|v| v.parse::<f64>().ok())
        .fold(0.0f64, f64::max);
    let required = ["conv2d", "bilinear_resize", "grid_sample", "pixel_shuffle", "elementwise", "l1_loss", "resample", "banks", "baseline_block", "banked_block"];
    let present = required.iter().all(|s| lines.iter().any(|l| l.contains(&format!("suite={s} "))));
    let (fast, rt) = time_limit(started.elapsed(), 120.0);
    let pass = out.status.code() == Some(0) && failed.is_empty() && present && fast;
    outcome(
        pass,
        format!(
            "suites={} failed={:?} max_rel_err={worst:.3e} (tol 1e-4, 20 instances each) {rt}",
            lines.len(),
            failed
        ),
    )
}

fn names(cfg: &ModelConfig) -> HashSet<String> {
    ParamStore::<f64>::init(cfg, 0).unwrap().names().map(String::from).collect()
}

fn wiring_structure() -> Outcome {
    let started = Instant::now();
    let chain = ablation_chain(&ModelConfig::toy());
    let mut problems = Vec::new();

    let sets: Vec<_> = chain.iter().map(|(_, c)| names(c)).collect();
    let deltas: Vec<HashSet<String>> = (1..4).map(|k| sets[k].difference(&sets[k - 1]).cloned().collect()).collect();
    for i in 0..3 {
        for j in i + 1..3 {
            if !deltas[i].is_disjoint(&deltas[j]) {
                problems.push(format!("deltas {i} and {j} overlap"));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for mode in [EncoderMode::Staged, EncoderMode::VitLike] {
        for (name, cfg) in &chain {
            let cfg = ModelConfig { mode, ..cfg.clone() };
            let store = ParamStore::<f64>::init(&cfg, 1).unwrap();
            let mut tape = Tape::new();
            let net = Network::bind(&cfg, &store, &mut tape).unwrap();
            let img = tape.constant(Tensor::uniform(shape(1, 3, 64, 64), 0.0, 1.0, &mut rng));
            let trace = net.forward(&mut tape, img).unwrap();
            if trace.blocks[0].o_prev.is_some() || net.blocks[0].rcu_prev.is_some() {
                problems.push(format!("{name}: block 1 receives o_prev"));
            }
            for j in 1..4 {
                if trace.blocks[j].o_prev != Some(trace.blocks[j - 1].output) {
                    problems.push(format!("{name}: block {} is not fed by block {j}", j + 1));
                }
            }
            if cfg.banked() {
                let has_out = net.blocks.iter().any(|b| b.output_conv.is_some())
                    || store.names().any(|n| n.contains("output_conv"));
                if has_out {
                    problems.push(format!("{name}: banked block has an output conv"));
                }
                if trace.blocks.iter().any(|b| b.banks != trace.banks) {
                    problems.push(format!("{name}: blocks see different banks"));
                }
            }
        }
    }

    // The CLI table: four rows in chain order, params cross-checked.
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg_path = root().join("configs/toy.cfg");
    let g = banknet(&["gen-data", "--seed", "0", "--count", "2", "--size", "64", "--out", data.to_str().unwrap()]);
    let a = banknet(&[
        "ablate", "--config", cfg_path.to_str().unwrap(), "--data", data.to_str().unwrap(), "--iters", "1", "--seed", "0",
    ]);
    let text = String::from_utf8_lossy(&a.stdout);
    let rows: Vec<(String, u64)> = text
        .lines()
        .filter_map(|l| {
            let row = l.split_whitespace().find_map(|f| f.strip_prefix("row="))?;
            let params = l.split_whitespace().find_map(|f| f.strip_prefix("params="))?;
            Some((row.to_string(), params.parse().ok()?))
        })
        .collect();
    let base = RunConfig::load(&cfg_path).unwrap().model;
    let expected: Vec<(String, u64)> = ablation_chain(&base)
        .iter()
        .map(|(n, c)| (n.to_string(), count_params(c).unwrap()))
        .collect();
    if !g.status.success() || !a.status.success() || rows != expected {
        problems.push(format!("ablate rows {rows:?}, expected {expected:?}"));
    }
    let p: Vec<u64> = rows.iter().map(|r| r.1).collect();
    if p.len() == 4 && !(p[2] >= p[1] && p[3] >= p[2]) {
        problems.push(format!("params decrease after the output-conv removal: {p:?}"));
    }

    let (fast, rt) = time_limit(started.elapsed(), 10.0);
    outcome(
        problems.is_empty() && fast,
        format!("rows={:?} params={p:?} problems={problems:?} {rt}", rows.iter().map(|r| &r.0).collect::<Vec<_>>()),
    )
}

fn footprint_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    let n = 8;
    for _ in 0..n {
        let mut c = || rng.gen_range(1..12);
        let mut cfg = ModelConfig {
            enc_channels: [c(), c(), c(), c()],
            dec_channels: c(),
            bank_channels: c(),
            head_channels: c(),
            ..ModelConfig::toy()
        };
        let (f, s) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
        cfg = cfg.with_banks(f, s, s && rng.gen_bool(0.5));
        if rng.gen_bool(0.5) {
            cfg.mode = EncoderMode::VitLike;
        }
        let enumerated = ParamStore::<f32>::init(&cfg, 0).unwrap().param_count() as u64;
        if count_params(&cfg).unwrap() != enumerated {
            mismatches += 1;
        }
    }
    let ratio = overhead_ratio(80.30, 83.79);
    let ok_ratio = (ratio - 1.0435).abs() <= OVERHEAD_TOL;
    outcome(
        mismatches == 0 && ok_ratio,
        format!("configs={n} mismatches={mismatches} vit-s flops ratio={ratio:.5} (1.0435 +/- {OVERHEAD_TOL})"),
    )
}

fn desk_training() -> Outcome {
    let started = Instant::now();
    let train = Dataset::<f32>::generate(0..200, 64, 64).unwrap();
    let eval = Dataset::<f32>::generate(10_000..10_020, 64, 64).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut delta1 = Vec::new();
    for file in ["toy.cfg", "toy_bank.cfg"] {
        let cfg = RunConfig::load(root().join("configs").join(file)).unwrap();
        let opts = FitOptions {
            iterations: TRAIN_ITERS,
            seed: 1,
            out: None,
            verbose: false,
        };
        let r = fit(&cfg, &train, Some(&eval), &opts).unwrap();
        let (first, last) = (r.evals[0], *r.evals.last().unwrap());
        let ratio = last.l1 / first.l1;
        let d1 = last.metrics.delta1;
        pass &= ratio < LOSS_RATIO && d1 >= MIN_DELTA1 && cfg.train.median_align;
        delta1.push(d1);
        parts.push(format!(
            "{file}: l1 {:.4}->{:.4} ratio={ratio:.3} d1={d1:.4} absrel={:.4}",
            first.l1, last.l1, last.metrics.abs_rel
        ));
    }
    let (fast, rt) = time_limit(started.elapsed(), 1800.0);
    let order = if delta1[1] > delta1[0] { "banked>baseline" } else { "baseline>=banked" };
    outcome(
        pass && fast,
        format!("{} (ratio<{LOSS_RATIO}, d1>={MIN_DELTA1}, median-aligned) d1 order: {order} (not gated) {rt}", parts.join("; ")),
    )
}

fn odd_dimensions() -> Outcome {
    let started = Instant::now();
    let model = ModelConfig {
        mode: EncoderMode::VitLike,
        ..ModelConfig::toy_banked()
    };
    let res = (|| -> banknet::Result<(bool, (usize, usize))> {
        let mut store = ParamStore::<f32>::init(&model, 0)?;
        let scene = banknet::data::gen_scene(5, 126, 98)?;
        let mut tape = Tape::new();
        let net = Network::bind(&model, &store, &mut tape)?;
        let x = tape.constant(scene.image.clone());
        let trace = net.forward(&mut tape, x)?;
        let dims = tape.value(trace.maps[2]).shape().spatial();
        let train = banknet::config::TrainConfig {
            lr: 1e-3,
            ..Default::default()
        };
        let mut opt = banknet::optim::Adam::new(store.tensors().into_iter().map(|(_, t)| t), &train);
        let loss = banknet::train::train_step(&model, &mut store, &mut opt, &scene.image, &scene.depth)?;
        let finite = tape.all_finite() && loss.is_finite() && store.tensors().iter().all(|(_, t)| t.is_finite());
        Ok((finite && opt.step == 1, dims))
    })();
    let (fast, rt) = time_limit(started.elapsed(), 10.0);
    match res {
        Ok((ok, dims)) => outcome(ok && dims == (9, 7) && fast, format!("feature maps {}x{} all finite={ok} {rt}", dims.0, dims.1)),
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = root().join("configs/toy_bank.cfg");
    banknet(&["gen-data", "--seed", "100", "--count", "6", "--size", "64", "--out", data.to_str().unwrap()]);
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|tag| {
            let out = dir.path().join(tag);
            let o = banknet(&[
                "train", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap(), "--iters", "8", "--seed", "4",
                "--out", out.to_str().unwrap(),
            ]);
            (o.status.success(), dir_bytes(&out))
        })
        .collect();
    let files: Vec<&str> = runs[0].1.iter().map(|(n, _)| n.as_str()).collect();
    let has_logs = files.contains(&METRICS_LOG) && files.contains(&EVAL_LOG) && files.iter().any(|f| f.ends_with(".bnkt"));
    let same = runs[0].1 == runs[1].1;
    outcome(
        runs.iter().all(|r| r.0) && has_logs && same,
        format!("files={} identical={same}", files.len()),
    )
}

fn format_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t64 = Tensor::<f64>::uniform(shape(2, 3, 4, 5), -1e3, 1e3, &mut rng);
    let t32 = Tensor::<f32>::uniform(shape(1, 2, 3, 3), -1.0, 1.0, &mut rng);
    bnkt::write_tensor(dir.path().join("a"), &t64).unwrap();
    bnkt::write_tensor(dir.path().join("b"), &t32).unwrap();
    let r64: Tensor<f64> = bnkt::read_tensor(dir.path().join("a")).unwrap();
    let r32: Tensor<f32> = bnkt::read_tensor(dir.path().join("b")).unwrap();
    let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let bnkt_ok = bits(&r64) == bits(&t64)
        && r32.data().iter().zip(t32.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        && r64.shape() == t64.shape();

    let d = Tensor::<f64>::from_vec(shape(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let mut expected = b"P5\n2 2\n65535\n".to_vec();
    for v in [0u16, 21845, 43690, 65535] {
        expected.extend_from_slice(&v.to_be_bytes());
    }
    let pgm_ok = pgm_bytes(&d).unwrap() == expected;
    outcome(bnkt_ok && pgm_ok, format!("bnkt bit-exact={bnkt_ok} pgm 2x2 bytes match={pgm_ok}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("bilinear-equivalence", bilinear_equivalence),
        ("gradient-suite", gradient_suite),
        ("wiring-ablation-structure", wiring_structure),
        ("footprint-consistency", footprint_consistency),
        ("desk-scale-training", desk_training),
        ("odd-dimension-robustness", odd_dimensions),
        ("determinism", determinism),
        ("format-fidelity", format_fidelity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        println!("{} criterion {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
