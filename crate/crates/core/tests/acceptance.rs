//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run alone with `cargo test -p ncae --test acceptance`.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ncae::evaluation::{auroc, run_trial, trial_seed, MeanStd};
use ncae::mfcc::{power_spectrum, power_spectrum_rect};
use ncae::models::{build_model, load_model, save_model, Architecture, BaselineSpec, NcaeSpec};
use ncae::nn::Tensor2D;
use ncae::pipeline::{calibrate_threshold, TrainConfig, FENCE_MULTIPLIER};
use ncae::synth::{make_dataset, DatasetConfig};

const GRAD_TOL: f64 = 1e-6;
const GRAD_STEP: f64 = 1e-6;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const THRESHOLD_REL_TOL: f64 = 1e-15;
const DFT_ABS_TOL: f64 = 1e-9;
const MIN_MEAN_AUROC: f64 = 0.95;
const BASELINE_MARGIN: f64 = 0.01;
const E2E_BUDGET: Duration = Duration::from_secs(15 * 60);
const E2E_SEEDS: usize = 5;
const MASTER_SEED: u64 = 2024;
/// Inference speed ratio (baseline / NCAE) reported for the reference hardware.
const REFERENCE_SPEED_RATIO: f64 = 2.99;

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

fn random_window(rng: &mut ChaCha8Rng, steps: usize, channels: usize) -> Tensor2D {
    let data = (0..steps * channels)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    Tensor2D::from_vec(steps, channels, data).unwrap()
}

fn gradient_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let x = random_window(&mut rng, 32, 13);
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    let archs = [
        Architecture::Ncae(NcaeSpec::new(3, 64, 13)),
        Architecture::Ncae(NcaeSpec::new(5, 64, 13)),
        Architecture::Ncae(NcaeSpec::new(7, 64, 13)),
        Architecture::Baseline(BaselineSpec::new(64, 13)),
    ];
    for arch in archs {
        let mut model = build_model(arch, MASTER_SEED).unwrap();
        let report = model.grad_check(&x, GRAD_STEP).unwrap();
        let label = arch
            .kernel_size()
            .map_or("baseline".to_string(), |k| format!("k={k}"));
        parts.push(format!("{label} {:.1e}", report.max_rel_error));
        worst = worst.max(report.max_rel_error);
    }
    let elapsed = start.elapsed();
    outcome(
        worst < GRAD_TOL && elapsed < GRAD_BUDGET,
        format!(
            "max rel err {worst:.2e} (< {GRAD_TOL:e}) [{}], {:.1} s (< {} s)",
            parts.join(", "),
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    )
}

fn non_compression() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED + 2);
    let mut violations = 0;
    for i in 0..100 {
        let steps = rng.gen_range(8..=128);
        let kernel = [1, 3, 5, 7, 9][rng.gen_range(0..5)];
        let hidden = rng.gen_range(13..=80);
        let model = build_model(Architecture::Ncae(NcaeSpec::new(kernel, hidden, 13)), i).unwrap();
        let x = random_window(&mut rng, steps, 13);
        for (t, c) in model.layer_shapes(&x).unwrap() {
            if t != steps || c < 13 {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("{violations} layer shape violations over 100 shapes"),
    )
}

/// Error-free transformation `a + b = s + e`.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Double-double accumulation, good to roughly 30 significant digits.
fn dd_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut hi, mut lo) = (0.0, 0.0);
    for v in values {
        let (s, e) = two_sum(hi, v);
        let (h, l) = two_sum(s, lo + e);
        hi = h;
        lo = l;
    }
    hi + lo
}

fn threshold_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED + 3);
    let mut worst = 0.0f64;
    let mut formula_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=1000);
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        let scores: Vec<f64> = (0..n).map(|_| scale * rng.gen_range(0.0..10.0)).collect();
        let c = calibrate_threshold(&scores).unwrap();
        if c.theta != c.mu + FENCE_MULTIPLIER * c.sigma {
            formula_mismatch += 1;
        }
        let mu = dd_sum(scores.iter().copied()) / n as f64;
        let var = dd_sum(scores.iter().map(|s| (s - mu) * (s - mu))) / n as f64;
        let theta = mu + 1.5 * var.sqrt();
        worst = worst.max((c.theta - theta).abs() / theta.abs());
    }
    outcome(
        worst <= THRESHOLD_REL_TOL && formula_mismatch == 0,
        format!("max rel deviation {worst:.2e} (<= {THRESHOLD_REL_TOL:e}) over 1000 sets"),
    )
}

fn brute_auroc(normal: &[f64], abnormal: &[f64]) -> f64 {
    let mut s = 0.0;
    for &a in abnormal {
        for &n in normal {
            s += if a > n {
                1.0
            } else if a == n {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (normal.len() as f64 * abnormal.len() as f64)
}

fn auroc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED + 4);
    let mut mismatches = 0;
    for i in 0..200 {
        let n = rng.gen_range(1..=500);
        let m = rng.gen_range(1..=500);
        // every third instance draws from a tiny alphabet to force ties
        let levels = if i % 3 == 0 { 4 } else { 1_000_000 };
        let mut draw = |k: usize, shift: i64| -> Vec<f64> {
            (0..k)
                .map(|_| (rng.gen_range(0..levels) as i64 + shift) as f64)
                .collect()
        };
        let normal = draw(n, 0);
        let abnormal = draw(m, if i % 2 == 0 { 1 } else { 0 });
        if auroc(&normal, &abnormal).unwrap() != brute_auroc(&normal, &abnormal) {
            mismatches += 1;
        }
    }
    let all_tied = auroc(&[1.0; 7], &[1.0; 3]).unwrap();
    outcome(
        mismatches == 0 && all_tied == 0.5,
        format!("{mismatches} mismatches over 200 instances; all-tied AUROC {all_tied}"),
    )
}

fn naive_power(frame: &[f64], n: usize) -> Vec<f64> {
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &x) in frame.iter().enumerate() {
                // reduce k*j mod n first so the angle stays accurate
                let angle = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                re += x * angle.cos();
                im += x * angle.sin();
            }
            re * re + im * im
        })
        .collect()
}

fn mfcc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED + 5);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let len: usize = rng.gen_range(2..=1024);
        let n_fft = len.next_power_of_two();
        let frame: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (fast, oracle) = if i % 2 == 0 {
            (
                power_spectrum_rect(&frame, n_fft).unwrap(),
                naive_power(&frame, n_fft),
            )
        } else {
            let windowed: Vec<f64> = frame
                .iter()
                .enumerate()
                .map(|(j, &x)| x * 0.5 * (1.0 - (2.0 * PI * j as f64 / (len - 1) as f64).cos()))
                .collect();
            (
                power_spectrum(&frame, n_fft).unwrap(),
                naive_power(&windowed, n_fft),
            )
        };
        for (a, b) in fast.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
        assert_eq!(fast.len(), oracle.len());
    }
    outcome(
        worst <= DFT_ABS_TOL,
        format!("max abs deviation {worst:.2e} (<= {DFT_ABS_TOL:e}) over 100 frames"),
    )
}

struct EndToEnd {
    ncae: Vec<f64>,
    baseline: Vec<f64>,
    ncae_infer: Vec<f64>,
    baseline_infer: Vec<f64>,
    ncae_elapsed: Duration,
}

fn e2e_seeds() -> Vec<u64> {
    (0..E2E_SEEDS).map(|i| trial_seed(MASTER_SEED, i)).collect()
}

/// Criterion 6 protocol: fresh synthetic dataset and NCAE k=3 per seed.
fn run_ncae_seeds() -> (Vec<f64>, Vec<f64>, Duration) {
    let start = Instant::now();
    let mut aurocs = Vec::new();
    let mut infer = Vec::new();
    for seed in e2e_seeds() {
        let mut dc = DatasetConfig::default();
        dc.synth.seed = seed;
        let data = make_dataset(&dc).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            seed,
            ..TrainConfig::default()
        };
        let t = run_trial(Architecture::Ncae(NcaeSpec::new(3, 64, 13)), &data, &cfg).unwrap();
        aurocs.push(t.auroc.unwrap_or(f64::NAN));
        infer.push(t.infer_seconds_per_window);
    }
    (aurocs, infer, start.elapsed())
}

fn run_baseline_seeds() -> (Vec<f64>, Vec<f64>) {
    let mut aurocs = Vec::new();
    let mut infer = Vec::new();
    for seed in e2e_seeds() {
        let mut dc = DatasetConfig::default();
        dc.synth.seed = seed;
        let data = make_dataset(&dc).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            seed,
            ..TrainConfig::default()
        };
        let t = run_trial(
            Architecture::Baseline(BaselineSpec::new(64, 13)),
            &data,
            &cfg,
        )
        .unwrap();
        aurocs.push(t.auroc.unwrap_or(f64::NAN));
        infer.push(t.infer_seconds_per_window);
    }
    (aurocs, infer)
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|a| format!("{a:.5}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn end_to_end(e: &EndToEnd) -> Outcome {
    let mean = MeanStd::of(&e.ncae).unwrap();
    outcome(
        mean.mean >= MIN_MEAN_AUROC && e.ncae_elapsed < E2E_BUDGET,
        format!(
            "NCAE k=3 AUROC {:.5} +- {:.5} (>= {MIN_MEAN_AUROC}) [{}], {:.0} s (< {} s)",
            mean.mean,
            mean.std,
            fmt_list(&e.ncae),
            e.ncae_elapsed.as_secs_f64(),
            E2E_BUDGET.as_secs()
        ),
    )
}

fn directional(e: &EndToEnd) -> Outcome {
    let n = MeanStd::of(&e.ncae).unwrap();
    let b = MeanStd::of(&e.baseline).unwrap();
    let ni = MeanStd::of(&e.ncae_infer).unwrap().mean;
    let bi = MeanStd::of(&e.baseline_infer).unwrap().mean;
    outcome(
        n.mean >= b.mean - BASELINE_MARGIN,
        format!(
            "AUROC ncae {:.5} vs baseline {:.5} [{}] (margin {BASELINE_MARGIN}); \
             inference {:.1} us vs {:.1} us per window, ratio {:.2}x (reference {REFERENCE_SPEED_RATIO}x, not asserted)",
            n.mean,
            b.mean,
            fmt_list(&e.baseline),
            ni * 1e6,
            bi * 1e6,
            bi / ni
        ),
    )
}

fn determinism(first: &[f64]) -> Outcome {
    let (again, _, _) = run_ncae_seeds();
    let same = first.len() == again.len()
        && first
            .iter()
            .zip(&again)
            .all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(same, format!("rerun AUROCs [{}]", fmt_list(&again)))
}

fn serialization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED + 9);
    let dir = tempfile::tempdir().unwrap();
    let mut mismatches = 0;
    for i in 0..50 {
        let channels = rng.gen_range(1..=16);
        let hidden = rng.gen_range(channels..=32);
        let arch = if i % 2 == 0 {
            Architecture::Ncae(NcaeSpec::new(
                [1, 3, 5, 7][rng.gen_range(0..4)],
                hidden,
                channels,
            ))
        } else {
            Architecture::Baseline(BaselineSpec::new(hidden, channels))
        };
        let model = build_model(arch, rng.gen()).unwrap();
        let path = dir.path().join(format!("m{i}.ncae"));
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        let steps = rng.gen_range(1..=40);
        let x = random_window(&mut rng, steps, channels);
        let (a, b) = (model.forward(&x).unwrap(), loaded.forward(&x).unwrap());
        let identical = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(p, q)| p.to_bits() == q.to_bits());
        if !identical || loaded.arch() != model.arch() {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} of 50 models differ after reload"),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, o: Outcome| {
        if !o.pass {
            failures += 1;
        }
        println!(
            "criterion {id} {:<28} {}  {}",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    report(1, "gradient fidelity", gradient_fidelity());
    report(2, "non-compression", non_compression());
    report(3, "threshold exactness", threshold_exactness());
    report(4, "auroc oracle", auroc_oracle());
    report(5, "power spectrum oracle", mfcc_oracle());

    let (ncae, ncae_infer, ncae_elapsed) = run_ncae_seeds();
    let (baseline, baseline_infer) = run_baseline_seeds();
    let e = EndToEnd {
        ncae,
        baseline,
        ncae_infer,
        baseline_infer,
        ncae_elapsed,
    };
    report(6, "end-to-end separation", end_to_end(&e));
    report(7, "ncae vs baseline", directional(&e));
    report(8, "determinism", determinism(&e.ncae));
    report(9, "serialization", serialization());

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
