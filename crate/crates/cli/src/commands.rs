use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use flowad_core::eval::{auroc, eval_report, pixel_auroc, CategoryResult, ScoreKind, ScoredSet};
use flowad_core::features::image::save_gray_png;
use flowad_core::features::{load_tensor, save_tensor, FeatureStack, TensorMeta};
use flowad_core::flow::FlowModel;
use flowad_core::pipeline::{evaluate, score_image, split_scales, LabeledMap};
use flowad_core::scoring::{score_stack, AnomalyMap, ScoreAggregation};
use flowad_core::synth::{self, SynthConfig};
use flowad_core::train::{fit_resume, save_checkpoint, FeatureSource, ImageFeatureSource, TensorDataset, TrainState};
use flowad_core::{Shape4, Tensor4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{RunConfig, Split};
use crate::data::{checkpoint_file, load_checkpoints, CheckpointSet, Contract, Dataset};
use crate::error::{io_err, CliError, CliResult};

/// Output directory of one command invocation.
pub struct Run {
    pub dir: PathBuf,
}

impl Run {
    /// `<out>/<UTC timestamp>-<config hash>`, with a numeric suffix on collision.
    pub fn create(cfg: &RunConfig, command: &str) -> CliResult<Run> {
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
        let base = format!("{stamp}-{}", cfg.hash8(command));
        let mut dir = cfg.out.join(&base);
        let mut i = 1;
        while dir.exists() {
            dir = cfg.out.join(format!("{base}-{i}"));
            i += 1;
        }
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let run = Run { dir };
        run.write(
            "config.txt",
            format!("command = {command}\n{}", cfg.canonical()).as_bytes(),
        )?;
        Ok(run)
    }

    /// Path under the run directory, creating parent directories.
    pub fn path(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        Ok(p)
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        let p = self.path(rel)?;
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))
    }
}

fn need<'a, T>(v: &'a Option<T>, what: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| CliError::usage(format!("missing {what}")))
}

fn jsonl<T: Serialize>(rows: &[T]) -> CliResult<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

// ---- train ------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct LossRecord {
    pub scale: usize,
    pub epoch: usize,
    pub loss: f64,
}

pub fn train(cfg: &RunConfig) -> CliResult<Run> {
    let root = need(&cfg.dataset, "--dataset")?;
    let resume = cfg.checkpoint.as_deref().map(load_checkpoints).transpose()?;
    let dataset = Dataset::open(root, resume.as_ref().map(|r| &r.contract), cfg)?;
    let contract = dataset.contract();
    let category = dataset.category(cfg);
    let augment = cfg.train.augment.for_category(&category);
    let ids = dataset.train_ids();
    if ids.is_empty() {
        return Err(CliError::data(format!("{} has no training images", root.display())));
    }

    let images_only = matches!(dataset, Dataset::Images { .. }) && augment.enabled;
    let (images, per_scale) = if images_only {
        let images = ids.iter().map(|id| dataset.load_image(id)).collect::<CliResult<Vec<_>>>()?;
        (images, Vec::new())
    } else {
        let stacks = ids.iter().map(|id| dataset.load_stack(id)).collect::<CliResult<Vec<_>>>()?;
        (Vec::new(), split_scales(&stacks)?)
    };

    let run = Run::create(cfg, "train")?;
    let n_scales = contract.n_scales();
    let mut losses = Vec::new();
    let mut timing = Vec::new();
    for k in 0..n_scales {
        let (c, _, _) = contract.scale_shapes()[k];
        let (mut model, mut state) = match &resume {
            Some(set) => {
                let model = set.models[k].clone();
                let state = set.states[k].clone().unwrap_or_else(|| TrainState::new(&model));
                (model, state)
            }
            None => {
                let model = FlowModel::<f32>::init(cfg.train.flow_config_for_scale(c, k))?;
                let state = TrainState::new(&model);
                (model, state)
            }
        };
        let source: Box<dyn FeatureSource<f32>> = match &dataset {
            Dataset::Images { extractor, .. } if images_only => Box::new(ImageFeatureSource::new(
                images.clone(),
                extractor.clone(),
                k,
                augment.clone(),
            )?),
            _ => Box::new(TensorDataset::new(per_scale[k].clone(), augment.clone())?),
        };
        fit_resume(&mut model, &mut state, source.as_ref(), &cfg.train, &mut |r| {
            eprintln!("scale {k} epoch {} loss {:.6}", r.epoch, r.loss);
            losses.push(LossRecord {
                scale: k,
                epoch: r.epoch,
                loss: r.loss,
            });
            timing.push(json!({ "scale": k, "epoch": r.epoch, "wall_time_s": r.wall_time_s }));
        })?;
        let extra = json!({
            "scale": k,
            "n_scales": n_scales,
            "contract": contract,
            "category": category,
            "config": cfg.canonical(),
        });
        save_checkpoint(checkpoint_file(&run.dir.join("checkpoints"), k), &model, Some(&state), extra)?;
    }
    run.write("train_log.jsonl", jsonl(&losses)?.as_bytes())?;
    run.write("timing.jsonl", jsonl(&timing)?.as_bytes())?;
    for k in 0..n_scales {
        let scale: Vec<f64> = losses.iter().filter(|r| r.scale == k).map(|r| r.loss).collect();
        if let (Some(first), Some(last)) = (scale.first(), scale.last()) {
            println!("scale {k}: loss {first:.4} -> {last:.4} over {} epochs", scale.len());
        }
    }
    Ok(run)
}

// ---- score ------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub image_id: String,
    pub score: f64,
    pub raw_min: f64,
    pub raw_max: f64,
}

/// `(image_id, features)` pairs to score.
fn score_inputs(cfg: &RunConfig, set: &CheckpointSet, inputs: &[PathBuf]) -> CliResult<Vec<(String, FeatureStack<f32>)>> {
    let dataset = cfg
        .dataset
        .as_deref()
        .map(|root| Dataset::open(root, Some(&set.contract), cfg))
        .transpose()?;
    if !inputs.is_empty() {
        let mut seen = BTreeMap::new();
        return inputs
            .iter()
            .map(|p| {
                let (id, stack) = match (&set.contract, &dataset) {
                    (Contract::Toy { .. }, _) => {
                        let id = p
                            .file_stem()
                            .and_then(|s| s.to_str())
                            .ok_or_else(|| CliError::usage(format!("bad input path {}", p.display())))?
                            .to_string();
                        (id, set.contract.stack_from_image(p)?)
                    }
                    (Contract::Features { .. }, Some(ds)) => {
                        let id = p.to_string_lossy().into_owned();
                        let stack = ds.load_stack(&id)?;
                        (id, stack)
                    }
                    (Contract::Features { .. }, None) => {
                        return Err(CliError::usage("feature checkpoints score image ids and need --dataset"))
                    }
                };
                if seen.insert(id.clone(), ()).is_some() {
                    return Err(CliError::usage(format!("duplicate input id {id:?}")));
                }
                Ok((id, stack))
            })
            .collect();
    }
    let ds = dataset.ok_or_else(|| CliError::usage("missing --dataset or --input"))?;
    let mut ids = Vec::new();
    if matches!(cfg.split, Split::Train | Split::All) {
        ids.extend(ds.train_ids());
    }
    if matches!(cfg.split, Split::Test | Split::All) {
        ids.extend(ds.test_samples().into_iter().map(|s| s.id));
    }
    ids.into_iter()
        .map(|id| {
            let stack = ds.load_stack(&id)?;
            Ok((id, stack))
        })
        .collect()
}

pub fn score(cfg: &RunConfig, inputs: &[PathBuf]) -> CliResult<Run> {
    let set = load_checkpoints(need(&cfg.checkpoint, "--checkpoint")?)?;
    let items = score_inputs(cfg, &set, inputs)?;
    let run = Run::create(cfg, "score")?;
    let mut records = Vec::with_capacity(items.len());
    for (id, stack) in &items {
        let map = score_image(&set.models, stack, &cfg.scoring)?;
        save_tensor(run.path(&format!("maps/{id}.map.fft"))?, &map.to_tensor(), &TensorMeta::named("anomaly_map"))?;
        save_gray_png(run.path(&format!("heatmaps/{id}.png"))?, map.width(), map.height(), &map.to_gray8())?;
        let (raw_min, raw_max) = map.raw_range();
        records.push(ScoreRecord {
            image_id: id.clone(),
            score: map.image_score(),
            raw_min,
            raw_max,
        });
    }
    run.write("scores.jsonl", jsonl(&records)?.as_bytes())?;
    println!("scored {} images", records.len());
    Ok(run)
}

// ---- eval -------------------------------------------------------------------

fn read_scores(path: &Path) -> CliResult<Vec<ScoreRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(flowad_core::Error::MissingFile(path.to_path_buf()).into())
        }
        Err(e) => return Err(io_err(path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn eval(cfg: &RunConfig, scores: Option<&Path>) -> CliResult<Run> {
    let root = need(&cfg.dataset, "--dataset")?;
    let result = match scores {
        Some(path) => {
            let dataset = Dataset::open(root, None, cfg)?;
            let by_id: BTreeMap<String, ScoreRecord> =
                read_scores(path)?.into_iter().map(|r| (r.image_id.clone(), r)).collect();
            let maps_dir = path.parent().unwrap_or(Path::new(".")).join("maps");
            let samples = dataset.test_samples();
            let mut image_scores = Vec::new();
            let mut maps = Vec::new();
            let mut masks = Vec::new();
            for s in &samples {
                let rec = by_id
                    .get(&s.id)
                    .ok_or_else(|| CliError::data(format!("{} has no score for {}", path.display(), s.id)))?;
                image_scores.push(rec.score);
                if samples.iter().any(|s| s.mask.is_some()) {
                    let (t, _) = load_tensor::<f64>(maps_dir.join(format!("{}.map.fft", s.id)))?;
                    let sh = t.shape();
                    masks.push(dataset.mask(s, sh.h, sh.w)?);
                    maps.push(AnomalyMap::new(sh.h, sh.w, t.into_vec(), ScoreAggregation::Max)?);
                }
            }
            let labels = samples.iter().map(|s| s.anomalous).collect();
            CategoryResult {
                category: dataset.category(cfg),
                image_auroc: auroc(&ScoredSet::new(image_scores, labels, ScoreKind::Image)?)?,
                pixel_auroc: if maps.is_empty() { None } else { Some(pixel_auroc(&maps, &masks)?) },
            }
        }
        None => {
            let set = load_checkpoints(need(&cfg.checkpoint, "--checkpoint or --scores")?)?;
            let dataset = Dataset::open(root, Some(&set.contract), cfg)?;
            let samples = dataset.test_samples();
            let any_mask = samples.iter().any(|s| s.mask.is_some());
            let labeled = samples
                .iter()
                .map(|s| {
                    let map = score_image(&set.models, &dataset.load_stack(&s.id)?, &cfg.scoring)?;
                    let mask = if any_mask {
                        Some(dataset.mask(s, map.height(), map.width())?)
                    } else {
                        None
                    };
                    Ok(LabeledMap {
                        map,
                        anomalous: s.anomalous,
                        mask,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            evaluate(&dataset.category(cfg), &labeled)?
        }
    };
    let report = eval_report(vec![result])?;
    let run = Run::create(cfg, "eval")?;
    run.write("report.csv", report.to_csv().as_bytes())?;
    run.write("report.json", report.to_json()?.as_bytes())?;
    print!("{}", report.to_csv());
    Ok(run)
}

// ---- generate ---------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateReport {
    pub image_id: String,
    pub scale: usize,
    pub at: [usize; 2],
    pub radius: usize,
    pub magnitude: f64,
    pub seed: u64,
    /// Cell with the largest feature difference.
    pub argmax: [usize; 2],
    pub diff_l2: f64,
    pub diff_max: f64,
    /// Max abs error of inverse(forward(x)) with no perturbation.
    pub roundtrip_error: f64,
}

pub fn generate(cfg: &RunConfig) -> CliResult<Run> {
    let set = load_checkpoints(need(&cfg.checkpoint, "--checkpoint")?)?;
    let g = &cfg.generate;
    let root = need(&cfg.dataset, "--dataset")?;
    let dataset = Dataset::open(root, Some(&set.contract), cfg)?;
    let image_id = match &g.image_id {
        Some(id) => id.clone(),
        None => dataset
            .train_ids()
            .into_iter()
            .next()
            .ok_or_else(|| CliError::data(format!("{} has no training images", root.display())))?,
    };
    if g.scale >= set.models.len() {
        return Err(CliError::usage(format!(
            "scale {} out of range: checkpoint has {} scales",
            g.scale,
            set.models.len()
        )));
    }
    let x: Tensor4<f64> = dataset.load_stack(&image_id)?.scales()[g.scale].cast();
    let model: FlowModel<f64> = set.models[g.scale].cast();
    let s = x.shape();
    let (h0, w0) = g.at.unwrap_or((s.h / 2, s.w / 2));
    if h0 >= s.h || w0 >= s.w {
        return Err(CliError::usage(format!(
            "latent cell ({h0},{w0}) outside the {}x{} latent grid",
            s.h, s.w
        )));
    }

    let z = model.forward(&x)?.z;
    let roundtrip_error = model.inverse(&z)?.max_abs_diff(&x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut perturbed = z.clone();
    let r = g.radius;
    for y in h0.saturating_sub(r)..=(h0 + r).min(s.h - 1) {
        for xx in w0.saturating_sub(r)..=(w0 + r).min(s.w - 1) {
            for c in 0..s.c {
                let n: f64 = StandardNormal.sample(&mut rng);
                perturbed.set(0, c, y, xx, z.get(0, c, y, xx) + g.magnitude * n);
            }
        }
    }
    let recon = model.inverse(&perturbed)?;
    let delta = recon.sub(&x)?.square().sum_over_channels().map(f64::sqrt);
    let diff_map = AnomalyMap::new(s.h, s.w, delta.data().to_vec(), ScoreAggregation::Max)?;
    let (ay, ax) = diff_map.argmax();

    let report = GenerateReport {
        image_id,
        scale: g.scale,
        at: [h0, w0],
        radius: r,
        magnitude: g.magnitude,
        seed: cfg.train.seed,
        argmax: [ay, ax],
        diff_l2: delta.data().iter().map(|v| v * v).sum::<f64>().sqrt(),
        diff_max: delta.max(),
        roundtrip_error,
    };
    let run = Run::create(cfg, "generate")?;
    save_tensor(run.path("original.fft")?, &x, &TensorMeta::named("original"))?;
    save_tensor(run.path("reconstructed.fft")?, &recon, &TensorMeta::named("reconstructed"))?;
    save_tensor(run.path("diff.fft")?, &delta, &TensorMeta::named("diff"))?;
    save_gray_png(run.path("diff.png")?, s.w, s.h, &diff_map.to_gray8())?;
    run.write("generate.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
    println!(
        "diff argmax ({ay},{ax}), l2 {:.6}, roundtrip error {:.3e}",
        report.diff_l2, report.roundtrip_error
    );
    Ok(run)
}

// ---- bench ------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub mean_ms: f64,
    /// Population standard deviation; 0 for a single repetition.
    pub std_ms: f64,
    pub samples_ms: Vec<f64>,
    pub params_per_scale: Vec<usize>,
    pub params_total: usize,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn bench(cfg: &RunConfig) -> CliResult<Run> {
    let set = load_checkpoints(need(&cfg.checkpoint, "--checkpoint")?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let scales = set
        .contract
        .scale_shapes()
        .into_iter()
        .map(|(c, h, w)| Tensor4::from_fn(Shape4::new(1, c, h, w), |_, _, _, _| StandardNormal.sample(&mut rng)))
        .collect();
    let (ih, iw) = set.contract.input_size();
    let stack = FeatureStack::new(scales, ih, iw, set.contract.backbone_id(), set.contract.layer_ids())?;

    let mut samples_ms = Vec::with_capacity(cfg.bench_repetitions);
    for _ in 0..cfg.bench_repetitions {
        let t0 = Instant::now();
        let maps = score_stack(&set.models, &stack, &cfg.scoring)?;
        std::hint::black_box(maps);
        samples_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let (mean_ms, std_ms) = mean_std(&samples_ms);
    let params_per_scale: Vec<usize> = set.models.iter().map(|m| m.param_count()).collect();
    let report = BenchReport {
        repetitions: cfg.bench_repetitions,
        mean_ms,
        std_ms,
        samples_ms,
        params_total: params_per_scale.iter().sum(),
        params_per_scale,
    };
    let run = Run::create(cfg, "bench")?;
    run.write("bench.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
    let mut line = format!("{:.3} ms +- {:.3} ms over {} runs; params", mean_ms, std_ms, report.repetitions);
    for (k, p) in report.params_per_scale.iter().enumerate() {
        write!(line, " scale{k}={p}").expect("string write");
    }
    write!(line, " total={}", report.params_total).expect("string write");
    println!("{line}");
    Ok(run)
}

// ---- synth ------------------------------------------------------------------

pub fn synth(out: &Path, cfg: &SynthConfig) -> CliResult<()> {
    let set = synth::generate(cfg)?;
    set.write_image_folder(out)?;
    println!(
        "wrote {} train and {} test images to {}",
        set.train.len(),
        set.test.len(),
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
