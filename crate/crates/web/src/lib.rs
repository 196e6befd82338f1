//! Browser demo: learn normal synthetic textures, then localize injected
//! defects and watch latent perturbations come back as feature changes.
//!
//! [`DemoState`] holds the logic and runs natively; [`Demo`] is its
//! wasm-bindgen face.

use flowad_core::features::image::plane_to_gray8;
use flowad_core::features::{FeatureStack, ToyExtractor, ToyExtractorConfig};
use flowad_core::flow::{FlowModel, KernelSchedule};
use flowad_core::pipeline::{score_image, split_scales};
use flowad_core::scoring::{AnomalyMap, ScoreAggregation, ScoringConfig};
use flowad_core::synth::{self, inject_defect, normal_texture, DefectKind, SynthConfig};
use flowad_core::train::{fit_resume, TensorDataset, TrainConfig, TrainState};
use flowad_core::{Error, Result, Tensor4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wasm_bindgen::prelude::*;

pub const IMAGE_SIZE: usize = 32;

/// A grayscale 8-bit picture, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Gray {
    fn from_map(map: &AnomalyMap) -> Gray {
        Gray {
            width: map.width(),
            height: map.height(),
            pixels: map.to_gray8(),
        }
    }
}

pub struct DemoState {
    synth: SynthConfig,
    extractor: ToyExtractor,
    train_cfg: TrainConfig,
    datasets: Vec<TensorDataset<f32>>,
    models: Vec<FlowModel<f32>>,
    states: Vec<TrainState<f32>>,
    history: Vec<f64>,
    image: Tensor4<f64>,
    mask: Vec<bool>,
    rng: ChaCha8Rng,
}

impl DemoState {
    pub fn new(seed: u64, n_train: usize) -> Result<DemoState> {
        let synth = SynthConfig {
            size: IMAGE_SIZE,
            n_train,
            n_test_good: 0,
            n_test_defect: 0,
            lattice: 4,
            seed,
            ..SynthConfig::default()
        };
        let extractor = ToyExtractor::new(ToyExtractorConfig {
            channels: 8,
            strides: vec![4, 8],
            seed,
        })?;
        let train_cfg = TrainConfig {
            epochs: 0,
            batch_size: 8,
            seed,
            steps: 4,
            schedule: KernelSchedule::AllThree,
            ..TrainConfig::default()
        };
        let set = synth::generate(&synth)?;
        let stacks = set
            .train
            .iter()
            .map(|img| extractor.extract(&img.cast::<f32>()))
            .collect::<Result<Vec<_>>>()?;
        let mut datasets = Vec::new();
        let mut models = Vec::new();
        let mut states = Vec::new();
        for (k, items) in split_scales(&stacks)?.into_iter().enumerate() {
            let model = FlowModel::init(train_cfg.flow_config_for_scale(extractor.config().channels, k))?;
            states.push(TrainState::new(&model));
            models.push(model);
            datasets.push(TensorDataset::new(items, Default::default())?);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let image = normal_texture(&synth, &mut rng)?;
        Ok(DemoState {
            synth,
            extractor,
            train_cfg,
            datasets,
            models,
            states,
            history: Vec::new(),
            image,
            mask: vec![false; IMAGE_SIZE * IMAGE_SIZE],
            rng,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// Mean per-scale training loss after each epoch.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Runs one more epoch on every scale; returns the mean loss.
    pub fn train_epoch(&mut self) -> Result<f64> {
        let mut cfg = self.train_cfg.clone();
        cfg.epochs = self.history.len() + 1;
        let mut total = 0.0;
        for ((model, state), data) in self.models.iter_mut().zip(&mut self.states).zip(&self.datasets) {
            total += fit_resume(model, state, data, &cfg, &mut |_| {})?[0];
        }
        let loss = total / self.models.len() as f64;
        self.history.push(loss);
        Ok(loss)
    }

    /// Draws a fresh normal texture, optionally with a defect.
    pub fn new_image(&mut self, defect: Option<DefectKind>) -> Result<Gray> {
        self.image = normal_texture(&self.synth, &mut self.rng)?;
        self.mask = match defect {
            Some(kind) => inject_defect(&mut self.image, kind, &mut self.rng),
            None => vec![false; IMAGE_SIZE * IMAGE_SIZE],
        };
        Ok(self.image_gray())
    }

    pub fn image_gray(&self) -> Gray {
        Gray {
            width: IMAGE_SIZE,
            height: IMAGE_SIZE,
            pixels: plane_to_gray8(&self.image, 0, 0),
        }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    fn stack(&self) -> Result<FeatureStack<f32>> {
        self.extractor.extract(&self.image.cast::<f32>())
    }

    /// Anomaly map of the current image at image resolution.
    pub fn score(&self) -> Result<AnomalyMap> {
        let cfg = ScoringConfig {
            aggregation: ScoreAggregation::Max,
            ..ScoringConfig::default()
        };
        score_image(&self.models, &self.stack()?, &cfg)
    }

    /// Adds `magnitude` times seeded Gaussian noise to the finest-scale latent
    /// at the cell under image pixel `(y, x)`, inverts, and returns the
    /// per-cell feature change and that cell.
    pub fn perturb(&self, y: usize, x: usize, magnitude: f64) -> Result<(AnomalyMap, (usize, usize))> {
        if y >= IMAGE_SIZE || x >= IMAGE_SIZE {
            return Err(Error::InvalidArgument(format!(
                "pixel ({y},{x}) outside the {IMAGE_SIZE}x{IMAGE_SIZE} image"
            )));
        }
        let stride = self.extractor.config().strides[0];
        let feats: Tensor4<f64> = self.stack()?.scales()[0].cast();
        let model: FlowModel<f64> = self.models[0].cast();
        let s = feats.shape();
        let cell = (y / stride, x / stride);
        let mut z = model.forward(&feats)?.z;
        let mut rng = ChaCha8Rng::seed_from_u64(self.train_cfg.seed);
        for c in 0..s.c {
            let n: f64 = StandardNormal.sample(&mut rng);
            z.set(0, c, cell.0, cell.1, z.get(0, c, cell.0, cell.1) + magnitude * n);
        }
        let recon = model.inverse(&z)?;
        let delta = recon.sub(&feats)?.square().sum_over_channels().map(f64::sqrt);
        let map = AnomalyMap::new(s.h, s.w, delta.into_vec(), ScoreAggregation::Max)?;
        Ok((map, cell))
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn defect_kind(name: &str) -> std::result::Result<Option<DefectKind>, JsError> {
    if name.is_empty() || name == "none" {
        return Ok(None);
    }
    DefectKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .map(Some)
        .ok_or_else(|| JsError::new(&format!("unknown defect {name:?}")))
}

#[wasm_bindgen]
pub struct Demo {
    state: DemoState,
    last_score: f64,
    last_width: usize,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<Demo, JsError> {
        Ok(Demo {
            state: DemoState::new(seed as u64, 48).map_err(js)?,
            last_score: 0.0,
            last_width: 0,
        })
    }

    pub fn size(&self) -> usize {
        IMAGE_SIZE
    }

    pub fn epochs_done(&self) -> usize {
        self.state.epochs_done()
    }

    pub fn train_epoch(&mut self) -> std::result::Result<f64, JsError> {
        self.state.train_epoch().map_err(js)
    }

    /// `defect` is `none`, `bright_square`, `dark_square` or `blob`.
    pub fn new_image(&mut self, defect: &str) -> std::result::Result<Vec<u8>, JsError> {
        let kind = defect_kind(defect)?;
        Ok(self.state.new_image(kind).map_err(js)?.pixels)
    }

    pub fn image(&self) -> Vec<u8> {
        self.state.image_gray().pixels
    }

    pub fn mask(&self) -> Vec<u8> {
        self.state.mask().iter().map(|&m| if m { 255 } else { 0 }).collect()
    }

    /// Heatmap of the current image; the image score is in `last_score`.
    pub fn score(&mut self) -> std::result::Result<Vec<u8>, JsError> {
        let map = self.state.score().map_err(js)?;
        self.last_score = map.image_score();
        Ok(Gray::from_map(&map).pixels)
    }

    pub fn last_score(&self) -> f64 {
        self.last_score
    }

    /// Feature-change map (width in `last_width`) for a click at `(y, x)`.
    pub fn perturb(&mut self, y: usize, x: usize, magnitude: f64) -> std::result::Result<Vec<u8>, JsError> {
        let (map, _) = self.state.perturb(y, x, magnitude).map_err(js)?;
        self.last_width = map.width();
        Ok(Gray::from_map(&map).pixels)
    }

    pub fn last_width(&self) -> usize {
        self.last_width
    }
}
