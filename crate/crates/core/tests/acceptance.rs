//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass a substring to run a subset.
//!
//! The MVTec check runs only when `FLOWAD_MVTEC_FEATURES` points at an
//! exported feature directory (with `manifest.json`).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use flowad_core::autodiff::Tape;
use flowad_core::eval::{auroc, ScoreKind, ScoredSet};
use flowad_core::features::{
    load_feature_stack, load_tensor_any, save_tensor, AnyTensor, DatasetManifest, TensorMeta, ToyExtractor,
    ToyExtractorConfig,
};
use flowad_core::flow::{nll_loss, nll_loss_tape, FlowConfig, FlowModel, KernelSchedule};
use flowad_core::pipeline::{evaluate, score_image, split_scales, train_scales, LabeledMap};
use flowad_core::scoring::ScoringConfig;
use flowad_core::synth::{generate, SynthConfig};
use flowad_core::train::{fit, TensorDataset, TrainConfig};
use flowad_core::{Scalar, Shape4, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 9] = [
        ("bijectivity", Duration::from_secs(120), bijectivity),
        ("jacobian_oracle", Duration::from_secs(300), jacobian_oracle),
        ("gradient_oracle", Duration::from_secs(300), gradient_oracle),
        ("density_learning", Duration::from_secs(600), density_learning),
        ("synthetic_benchmark", Duration::from_secs(900), synthetic_benchmark),
        ("auroc_brute_force", Duration::from_secs(60), auroc_brute_force),
        ("kernel_schedule_params", Duration::from_secs(10), kernel_schedule_params),
        ("format_round_trip", Duration::from_secs(10), format_round_trip),
        ("mvtec_integration", Duration::MAX, mvtec_integration),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let in_budget = took <= budget;
        let status = match (out.pass, in_budget) {
            _ if out.detail.starts_with("skipped") => "SKIP",
            (true, true) => "PASS",
            _ => "FAIL",
        };
        if status == "FAIL" {
            failed += 1;
        }
        let over = if in_budget { String::new() } else { format!(" over budget {budget:?}") };
        println!("{status} {name}: {} [{:.1}s{over}]", out.detail, took.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

// ---- helpers ----------------------------------------------------------------

/// Random weights `U(+-gain/sqrt(fan_in))` in every conv, biases `U(+-0.1)`.
fn randomized(cfg: FlowConfig, rng: &mut ChaCha8Rng, gain: f64) -> FlowModel<f64> {
    let mut model = FlowModel::<f64>::init(cfg).unwrap();
    for p in model.params_mut() {
        let s = p.value().shape();
        let fan_in = (s.c * s.h * s.w).max(1) as f64;
        let a = if p.name().ends_with("bias") { 0.1 } else { gain / fan_in.sqrt() };
        let v = Tensor4::from_fn(s, |_, _, _, _| rng.random_range(-a..=a));
        p.set_value(v).unwrap();
    }
    model
}

fn gaussian<T: Scalar>(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor4<T> {
    Tensor4::from_fn(shape, |_, _, _, _| {
        let v: f64 = StandardNormal.sample(rng);
        T::from_f64_lossy(v)
    })
}

fn flow_cfg(c: usize, k: usize, schedule: KernelSchedule, seed: u64) -> FlowConfig {
    FlowConfig {
        channels: c,
        steps: k,
        schedule,
        hidden_ratio: 1.0,
        clamp: 2.0,
        seed,
    }
}

fn total_logdet(model: &FlowModel<f64>, x: &Tensor4<f64>) -> f64 {
    model.forward(x).unwrap().logdet_map.sum_all()
}

/// log|det A| by LU decomposition with partial pivoting.
fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        acc += p.abs().ln();
        for row in col + 1..n {
            let f = a[row][col] / p;
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    acc
}

// ---- criteria ---------------------------------------------------------------

fn round_trip_errors(gain: f64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut combos = Vec::new();
    for c in [2, 4, 8, 16] {
        for k in [1, 4, 8, 20] {
            for s in [KernelSchedule::Alternating, KernelSchedule::AllThree] {
                combos.push((c, k, s));
            }
        }
    }
    let (mut worst32, mut worst64, mut max_z) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..200 {
        let (c, k, schedule) = combos[i % combos.len()];
        let model = randomized(flow_cfg(c, k, schedule, i as u64), &mut rng, gain);
        let shape = Shape4::new(rng.random_range(1..=2), c, rng.random_range(1..=6), rng.random_range(1..=6));
        let x64: Tensor4<f64> = gaussian(shape, &mut rng);
        let z = model.forward(&x64).unwrap().z;
        max_z = max_z.max(z.max().abs().max(z.min().abs()));
        worst64 = worst64.max(model.inverse(&z).unwrap().max_abs_diff(&x64).unwrap());

        let m32 = model.cast::<f32>();
        let x32 = x64.cast::<f32>();
        let back = m32.inverse(&m32.forward(&x32).unwrap().z).unwrap();
        worst32 = worst32.max(back.max_abs_diff(&x32).unwrap() as f64);
    }
    (worst32, worst64, max_z)
}

fn bijectivity() -> Outcome {
    let (worst32, worst64, max_z) = round_trip_errors(0.5);
    let (unit32, _, unit_z) = round_trip_errors(1.0);
    outcome(
        worst32 <= 1e-4 && worst64 <= 1e-10,
        format!(
            "200 pairs, max round-trip error f32 {worst32:.2e} (<= 1e-4), f64 {worst64:.2e} (<= 1e-10), max |z| {max_z:.1}; \
             unit-gain output layers (max |z| {unit_z:.0}): f32 {unit32:.2e}"
        ),
    )
}

fn jacobian_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape = Shape4::new(1, 4, 3, 3);
    let d = shape.numel();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut smallest = f64::INFINITY;
    for i in 0..20 {
        let k = 1 + i % 4;
        let schedule = if i % 2 == 0 { KernelSchedule::AllThree } else { KernelSchedule::Alternating };
        let model = randomized(flow_cfg(4, k, schedule, 100 + i as u64), &mut rng, 1.5);
        let x: Tensor4<f64> = gaussian(shape, &mut rng);
        let mut jac = vec![vec![0.0; d]; d];
        for j in 0..d {
            let mut plus = x.clone();
            plus.data_mut()[j] += eps;
            let mut minus = x.clone();
            minus.data_mut()[j] -= eps;
            let zp = model.forward(&plus).unwrap().z;
            let zm = model.forward(&minus).unwrap().z;
            for (row, (a, b)) in zp.data().iter().zip(zm.data()).enumerate() {
                jac[row][j] = (a - b) / (2.0 * eps);
            }
        }
        let numeric = log_abs_det(jac);
        let analytic = total_logdet(&model, &x);
        smallest = smallest.min(analytic.abs());
        worst = worst.max((analytic - numeric).abs() / analytic.abs());
    }
    outcome(
        worst <= 1e-2,
        format!("20 models, D=36, max relative logdet error {worst:.2e} (<= 1e-2), min |logdet| {smallest:.2}"),
    )
}

fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = randomized(flow_cfg(4, 2, KernelSchedule::Alternating, 7), &mut rng, 1.0);
    let x: Tensor4<f64> = gaussian(Shape4::new(2, 4, 3, 3), &mut rng);

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let latent = model.forward_tape(&mut tape, xv).unwrap();
    let loss = nll_loss_tape(&mut tape, &latent).unwrap();
    let grads = tape.backward(loss).unwrap();

    let eps = 1e-6;
    let (mut worst, mut count) = (0.0f64, 0usize);
    let n_params = model.params().len();
    for pi in 0..n_params {
        let analytic = grads.wrt(latent.params[pi]).unwrap().clone();
        for e in 0..analytic.len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                let mut params = m.params_mut();
                let mut v = params[pi].value().clone();
                v.data_mut()[e] += delta;
                params[pi].set_value(v).unwrap();
                nll_loss(&m.forward(&x).unwrap())
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let a = analytic.data()[e];
            let scale = a.abs().max(numeric.abs()).max(1e-2);
            worst = worst.max((a - numeric).abs() / scale);
            count += 1;
        }
    }
    outcome(
        worst <= 1e-4,
        format!("{count} parameters, max relative error {worst:.2e} (<= 1e-4, floor 1e-2)"),
    )
}

fn density_learning() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let normal = Normal::new(3.0f32, 2.0).unwrap();
    let item = Shape4::new(1, 4, 4, 4);
    let items: Vec<Tensor4<f32>> = (0..2000)
        .map(|_| Tensor4::from_fn(item, |_, _, _, _| normal.sample(&mut rng)))
        .collect();
    let data = TensorDataset::new(items.clone(), Default::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 31,
        batch_size: 32,
        steps: 4,
        schedule: KernelSchedule::Alternating,
        seed: 4,
        ..Default::default()
    };
    let steps = cfg.epochs * items.len().div_ceil(cfg.batch_size);
    let mut model = FlowModel::<f32>::init(cfg.flow_config(4)).unwrap();
    fit(&mut model, &data, &cfg).unwrap();
    let all = Tensor4::stack(&items).unwrap();
    let per_dim = nll_loss(&model.forward(&all).unwrap()) as f64 / item.numel() as f64;
    let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 4.0).ln();
    let rel = (per_dim - entropy).abs() / entropy;
    outcome(
        rel <= 0.05 && steps <= 2000,
        format!("{steps} steps, per-dimension NLL {per_dim:.4} vs entropy {entropy:.4}, relative gap {rel:.3} (<= 0.05)"),
    )
}

fn synthetic_benchmark() -> Outcome {
    let set = generate(&SynthConfig {
        size: 64,
        n_train: 200,
        n_test_good: 50,
        n_test_defect: 50,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let extractor = ToyExtractor::new(ToyExtractorConfig::default()).unwrap();
    let features = |img: &Tensor4<f64>| extractor.extract(&img.cast::<f32>()).unwrap();
    let train: Vec<_> = set.train.iter().map(features).collect();
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 32,
        steps: 8,
        schedule: KernelSchedule::AllThree,
        seed: 5,
        ..Default::default()
    };
    let trained = train_scales(split_scales(&train).unwrap(), &cfg, &mut |_, _| {}).unwrap();
    let models: Vec<_> = trained.into_iter().map(|t| t.model).collect();
    let scoring = ScoringConfig::default();
    let results: Vec<LabeledMap> = set
        .test
        .iter()
        .map(|s| LabeledMap {
            map: score_image(&models, &features(&s.image), &scoring).unwrap(),
            anomalous: s.is_anomalous(),
            mask: Some(s.pixel_labels()),
        })
        .collect();
    let r = evaluate("synthetic", &results).unwrap();
    let px = r.pixel_auroc.unwrap();
    outcome(
        r.image_auroc >= 0.95 && px >= 0.90,
        format!(
            "200 train / 50 normal + 50 defective test, image AUROC {:.4} (>= 0.95), pixel AUROC {px:.4} (>= 0.90)",
            r.image_auroc
        ),
    )
}

fn auroc_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..=20);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 4.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let (mut wins, mut ties) = (0u64, 0u64);
        let (mut pos, mut neg) = (0u64, 0u64);
        for i in 0..n {
            if labels[i] {
                pos += 1;
            } else {
                neg += 1;
            }
            for j in 0..n {
                if labels[i] && !labels[j] {
                    if scores[i] > scores[j] {
                        wins += 1;
                    } else if scores[i] == scores[j] {
                        ties += 1;
                    }
                }
            }
        }
        let brute = (2 * wins + ties) as f64 / (2 * pos * neg) as f64;
        let fast = auroc(&ScoredSet::new(scores, labels, ScoreKind::Image).unwrap()).unwrap();
        if fast != brute {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("1000 sets (n <= 200, tied levels), {mismatches} mismatches"))
}

fn closed_form_params(c: usize, k: usize, hidden_ratio: f64, schedule: KernelSchedule) -> usize {
    let h = ((hidden_ratio * c as f64).round() as usize).max(1);
    (0..k)
        .map(|i| {
            let ks = match schedule {
                KernelSchedule::AllThree => 3,
                KernelSchedule::Alternating => {
                    if i % 2 == 0 {
                        3
                    } else {
                        1
                    }
                }
            };
            ks * ks * (c / 2) * h + h + ks * ks * h * c + c
        })
        .sum()
}

fn kernel_schedule_params() -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    for (c, k, ratio) in [(64, 8, 1.0), (16, 8, 1.0), (32, 4, 0.16), (8, 20, 2.0)] {
        let mut count = |s| {
            let cfg = FlowConfig { hidden_ratio: ratio, ..flow_cfg(c, k, s, 0) };
            let n = FlowModel::<f32>::init(cfg).unwrap().param_count();
            ok &= n == closed_form_params(c, k, ratio, s);
            n
        };
        let (a, b) = (count(KernelSchedule::Alternating), count(KernelSchedule::AllThree));
        ok &= a < b;
        lines.push(format!("c={c} K={k}: 3-1 {a} < 3-3 {b}"));
    }
    outcome(ok, format!("{}; all match closed form", lines.join(", ")))
}

fn format_round_trip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bad = 0;
    for i in 0..100 {
        let shape = Shape4::new(
            rng.random_range(1..=3),
            rng.random_range(1..=5),
            rng.random_range(1..=7),
            rng.random_range(1..=7),
        );
        let path = dir.path().join(format!("t{i}.fft"));
        let meta = TensorMeta::named(&format!("t{i}"));
        let same = if i % 2 == 0 {
            // arbitrary bit patterns, including NaN payloads and infinities
            let t = Tensor4::from_fn(shape, |_, _, _, _| f32::from_bits(rng.random()));
            save_tensor(&path, &t, &meta).unwrap();
            match load_tensor_any(&path).unwrap() {
                (AnyTensor::F32(back), m) => {
                    m == meta
                        && back.shape() == shape
                        && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits())
                }
                _ => false,
            }
        } else {
            let t = Tensor4::from_fn(shape, |_, _, _, _| f64::from_bits(rng.random()));
            save_tensor(&path, &t, &meta).unwrap();
            match load_tensor_any(&path).unwrap() {
                (AnyTensor::F64(back), m) => {
                    m == meta
                        && back.shape() == shape
                        && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits())
                }
                _ => false,
            }
        };
        if !same {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("100 tensors (50 f32, 50 f64), {bad} not bit-exact"))
}

fn mvtec_integration() -> Outcome {
    let Some(root) = std::env::var_os("FLOWAD_MVTEC_FEATURES").map(PathBuf::from) else {
        return outcome(true, "skipped: set FLOWAD_MVTEC_FEATURES to an exported category".into());
    };
    let epochs = std::env::var("FLOWAD_MVTEC_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(500);
    let manifest = DatasetManifest::load(&root).unwrap();
    let train: Vec<_> = manifest
        .train
        .iter()
        .map(|id| load_feature_stack::<f32>(&root, id, &manifest).unwrap())
        .collect();
    let cfg = TrainConfig {
        epochs,
        steps: 8,
        schedule: KernelSchedule::AllThree,
        ..Default::default()
    };
    let trained = train_scales(split_scales(&train).unwrap(), &cfg, &mut |_, _| {}).unwrap();
    let models: Vec<_> = trained.into_iter().map(|t| t.model).collect();
    let results: Vec<LabeledMap> = manifest
        .test
        .iter()
        .map(|e| LabeledMap {
            map: score_image(
                &models,
                &load_feature_stack::<f32>(&root, &e.id, &manifest).unwrap(),
                &ScoringConfig::default(),
            )
            .unwrap(),
            anomalous: e.label == 1,
            mask: None,
        })
        .collect();
    let r = evaluate("mvtec", &results).unwrap();
    outcome(
        r.image_auroc >= 0.95,
        format!("{} ({epochs} epochs) image AUROC {:.4} (>= 0.95)", manifest.backbone_id, r.image_auroc),
    )
}
