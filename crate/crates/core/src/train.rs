//! Maximum-likelihood training of flow models on normal-only features.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, Tape};
use crate::error::{Error, Result};
use crate::features::format::{encode_tensor, read_record, Reader, TensorMeta};
use crate::features::ToyExtractor;
use crate::flow::{nll_loss_tape, FlowConfig, FlowModel, KernelSchedule};
use crate::tensor::{ChannelPerm, Scalar, Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply decay directly to the parameters instead of adding an L2
    /// term to the gradient.
    pub decoupled_weight_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            decoupled_weight_decay: false,
        }
    }
}

/// First/second moment estimates, one pair per parameter, and the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Tensor4<T>>,
    v: Vec<Tensor4<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&Param<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor4::zeros(p.value().shape())).collect(),
            v: params.iter().map(|p| Tensor4::zeros(p.value().shape())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor4<T>], &[Tensor4<T>]) {
        (&self.m, &self.v)
    }
}

/// One Adam update from the gradients accumulated in `params`.
///
/// ```text
/// g <- g + wd * p                      (coupled decay only)
/// m <- b1 m + (1 - b1) g
/// v <- b2 v + (1 - b2) g^2
/// p <- p - lr * m_hat / (sqrt(v_hat) + eps)
/// p <- p - lr * wd * p                 (decoupled decay only)
/// ```
pub fn adam_step<T: Scalar>(params: &mut [&mut Param<T>], state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "optimizer tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (p, m) in params.iter().zip(&state.m) {
        if p.value().shape() != m.shape() {
            return Err(Error::shape(format!(
                "parameter {} has shape {}, optimizer state {}",
                p.name(),
                p.value().shape(),
                m.shape()
            )));
        }
    }
    state.t += 1;
    let f = T::from_f64_lossy;
    let (b1, b2) = (f(cfg.beta1), f(cfg.beta2));
    let one = T::one();
    let bc1 = one - b1.powi(state.t as i32);
    let bc2 = one - b2.powi(state.t as i32);
    let (lr, wd, eps) = (f(cfg.lr), f(cfg.weight_decay), f(cfg.eps));
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let (value, grad) = p.value_and_grad_mut();
        let vals = value.data_mut();
        for i in 0..vals.len() {
            let mut g = grad.data()[i];
            if !cfg.decoupled_weight_decay {
                g += wd * vals[i];
            }
            let mi = &mut m.data_mut()[i];
            *mi = b1 * *mi + (one - b1) * g;
            let vi = &mut v.data_mut()[i];
            *vi = b2 * *vi + (one - b2) * g * g;
            let m_hat = m.data()[i] / bc1;
            let v_hat = v.data()[i] / bc2;
            vals[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            if cfg.decoupled_weight_decay {
                vals[i] -= lr * wd * vals[i];
            }
        }
    }
    Ok(())
}

/// Flip and rotation probabilities, with optional per-category overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub p_rot: f64,
    /// Maximum absolute angle for free rotation of raw images.
    pub max_rotation_deg: f64,
    #[serde(default)]
    pub overrides: Vec<AugmentOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentOverride {
    pub category: String,
    pub enabled: bool,
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub p_rot: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: false,
            p_hflip: 0.5,
            p_vflip: 0.3,
            p_rot: 0.7,
            max_rotation_deg: 90.0,
            overrides: Vec::new(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_hflip, self.p_vflip, self.p_rot]
            .into_iter()
            .chain(self.overrides.iter().flat_map(|o| [o.p_hflip, o.p_vflip, o.p_rot]));
        for p in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("augmentation probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Settings for one category, applying its override if present.
    pub fn for_category(&self, category: &str) -> AugmentConfig {
        match self.overrides.iter().find(|o| o.category == category) {
            Some(o) => AugmentConfig {
                enabled: o.enabled,
                p_hflip: o.p_hflip,
                p_vflip: o.p_vflip,
                p_rot: o.p_rot,
                max_rotation_deg: self.max_rotation_deg,
                overrides: Vec::new(),
            },
            None => self.clone(),
        }
    }
}

/// Flips and quarter-turn rotations applied directly to a feature map.
/// Non-square maps only rotate by 180 degrees so the shape is kept.
pub fn augment_tensor<T: Scalar>(x: &Tensor4<T>, cfg: &AugmentConfig, rng: &mut impl Rng) -> Tensor4<T> {
    if !cfg.enabled {
        return x.clone();
    }
    let mut out = x.clone();
    if rng.random_bool(cfg.p_hflip) {
        out = out.flip_horizontal();
    }
    if rng.random_bool(cfg.p_vflip) {
        out = out.flip_vertical();
    }
    if rng.random_bool(cfg.p_rot) {
        let s = out.shape();
        let turns = if s.h == s.w { rng.random_range(1..=3) } else { 2 };
        out = out.rot90(turns);
    }
    out
}

/// Flips and a free rotation about the image center (bilinear, edge clamped).
pub fn augment_image<T: Scalar>(x: &Tensor4<T>, cfg: &AugmentConfig, rng: &mut impl Rng) -> Tensor4<T> {
    if !cfg.enabled {
        return x.clone();
    }
    let mut out = x.clone();
    if rng.random_bool(cfg.p_hflip) {
        out = out.flip_horizontal();
    }
    if rng.random_bool(cfg.p_vflip) {
        out = out.flip_vertical();
    }
    if rng.random_bool(cfg.p_rot) && cfg.max_rotation_deg > 0.0 {
        let angle = rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg);
        out = rotate(&out, angle.to_radians());
    }
    out
}

fn rotate<T: Scalar>(x: &Tensor4<T>, angle: f64) -> Tensor4<T> {
    let s = x.shape();
    let (cy, cx) = ((s.h as f64 - 1.0) / 2.0, (s.w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let sample = |n: usize, c: usize, y: f64, x_: f64| -> f64 {
        let y = y.clamp(0.0, (s.h - 1) as f64);
        let x_ = x_.clamp(0.0, (s.w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x_.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(s.h - 1), (x0 + 1).min(s.w - 1));
        let (fy, fx) = (y - y0 as f64, x_ - x0 as f64);
        let g = |yy, xx| x.get(n, c, yy, xx).as_f64();
        let top = g(y0, x0) + (g(y0, x1) - g(y0, x0)) * fx;
        let bottom = g(y1, x0) + (g(y1, x1) - g(y1, x0)) * fx;
        top + (bottom - top) * fy
    };
    Tensor4::from_fn(s, |n, c, y, xx| {
        let (dy, dx) = (y as f64 - cy, xx as f64 - cx);
        let sy = cy + cos * dy - sin * dx;
        let sx = cx + sin * dy + cos * dx;
        T::from_f64_lossy(sample(n, c, sy, sx))
    })
}

/// Indexed training samples, each `(1, c, h, w)`. `rng` drives augmentation.
pub trait FeatureSource<T: Scalar> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Tensor4<T>>;
}

/// Pre-extracted feature maps, augmented with exact flips and quarter turns.
#[derive(Debug, Clone)]
pub struct TensorDataset<T> {
    items: Vec<Tensor4<T>>,
    augment: AugmentConfig,
}

impl<T: Scalar> TensorDataset<T> {
    pub fn new(items: Vec<Tensor4<T>>, augment: AugmentConfig) -> Result<Self> {
        if let Some(first) = items.first() {
            let s = first.shape();
            for t in &items {
                let ts = t.shape();
                if ts.n != 1 || (ts.c, ts.h, ts.w) != (s.c, s.h, s.w) {
                    return Err(Error::shape(format!(
                        "dataset items must share one (1, c, h, w) shape: {s} vs {ts}"
                    )));
                }
            }
        }
        augment.validate()?;
        Ok(TensorDataset { items, augment })
    }

    pub fn items(&self) -> &[Tensor4<T>] {
        &self.items
    }
}

impl<T: Scalar> FeatureSource<T> for TensorDataset<T> {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn sample(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Tensor4<T>> {
        Ok(augment_tensor(&self.items[index], &self.augment, rng))
    }
}

/// Raw images augmented before toy feature extraction; yields one scale.
#[derive(Debug, Clone)]
pub struct ImageFeatureSource<T> {
    images: Vec<Tensor4<T>>,
    extractor: ToyExtractor,
    scale: usize,
    augment: AugmentConfig,
}

impl<T: Scalar> ImageFeatureSource<T> {
    pub fn new(images: Vec<Tensor4<T>>, extractor: ToyExtractor, scale: usize, augment: AugmentConfig) -> Result<Self> {
        if scale >= extractor.config().strides.len() {
            return Err(Error::invalid(format!("scale {scale} out of range")));
        }
        augment.validate()?;
        Ok(ImageFeatureSource {
            images,
            extractor,
            scale,
            augment,
        })
    }
}

impl<T: Scalar> FeatureSource<T> for ImageFeatureSource<T> {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn sample(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Tensor4<T>> {
        let img = augment_image(&self.images[index], &self.augment, rng);
        let stack = self.extractor.extract(&img)?;
        Ok(stack.into_scales().swap_remove(self.scale))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub steps: usize,
    pub schedule: KernelSchedule,
    pub hidden_ratio: f64,
    pub clamp: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            epochs: 500,
            batch_size: 32,
            seed: 0,
            augment: AugmentConfig::default(),
            steps: 8,
            schedule: KernelSchedule::Alternating,
            hidden_ratio: 1.0,
            clamp: 2.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.lr > 0.0) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.adam.lr)));
        }
        if self.adam.weight_decay < 0.0 {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        self.augment.validate()?;
        self.flow_config(2).validate()
    }

    /// Flow settings for a scale with `channels` channels. The flow seed is
    /// derived from the training seed and the scale index.
    pub fn flow_config(&self, channels: usize) -> FlowConfig {
        FlowConfig {
            channels,
            steps: self.steps,
            schedule: self.schedule,
            hidden_ratio: self.hidden_ratio,
            clamp: self.clamp,
            seed: self.seed,
        }
    }

    pub fn flow_config_for_scale(&self, channels: usize, scale: usize) -> FlowConfig {
        let mut cfg = self.flow_config(channels);
        cfg.seed = scale_seed(self.seed, scale);
        cfg
    }
}

/// Independent seed per pyramid scale, so scales train identically in any order.
pub fn scale_seed(seed: u64, scale: usize) -> u64 {
    seed ^ (scale as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Resumable optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub adam: AdamState<T>,
    pub epochs_done: usize,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: &FlowModel<T>) -> Self {
        TrainState {
            adam: AdamState::new(&model.params()),
            epochs_done: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-image negative log-likelihood over the epoch.
    pub loss: f64,
    pub wall_time_s: f64,
}

/// One optimizer step on a batch; returns the batch loss before the update.
pub fn train_step<T: Scalar>(
    model: &mut FlowModel<T>,
    state: &mut AdamState<T>,
    batch: Tensor4<T>,
    cfg: &AdamConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(batch);
    let latent = model.forward_tape(&mut tape, x)?;
    let loss_var = nll_loss_tape(&mut tape, &latent)?;
    let loss = tape.value(loss_var).data()[0].as_f64();
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {loss}")));
    }
    let grads = tape.backward(loss_var)?;
    model.zero_grad();
    let mut params = model.params_mut();
    for (p, v) in params.iter_mut().zip(&latent.params) {
        grads.accumulate_into(*v, p)?;
    }
    adam_step(&mut params, state, cfg)?;
    Ok(loss)
}

/// Trains from scratch for `cfg.epochs` epochs; returns per-epoch losses.
pub fn fit<T: Scalar>(model: &mut FlowModel<T>, source: &dyn FeatureSource<T>, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let mut state = TrainState::new(model);
    fit_resume(model, &mut state, source, cfg, &mut |_| {})
}

/// Continues training from `state` until `cfg.epochs` epochs are done.
/// Batch order and augmentation depend only on the seed and epoch index.
pub fn fit_resume<T: Scalar>(
    model: &mut FlowModel<T>,
    state: &mut TrainState<T>,
    source: &dyn FeatureSource<T>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let mut history = Vec::new();
    while state.epochs_done < cfg.epochs {
        let epoch = state.epochs_done;
        let started = now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..source.len()).collect();
        order.shuffle(&mut rng);

        let mut total = 0.0;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items = chunk
                .iter()
                .map(|&i| source.sample(i, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let batch = Tensor4::stack(&items)?;
            let loss = train_step(model, &mut state.adam, batch, &cfg.adam).map_err(|e| match e {
                Error::Numerical(msg) => {
                    Error::Numerical(format!("epoch {epoch}, batch {batch_index}: {msg}"))
                }
                other => other,
            })?;
            total += loss * chunk.len() as f64;
        }
        state.epochs_done += 1;
        let loss = total / source.len() as f64;
        history.push(loss);
        on_epoch(&EpochRecord {
            epoch,
            loss,
            wall_time_s: elapsed(started),
        });
    }
    Ok(history)
}

#[cfg(not(target_arch = "wasm32"))]
fn now() -> Option<std::time::Instant> {
    Some(std::time::Instant::now())
}

#[cfg(target_arch = "wasm32")]
fn now() -> Option<()> {
    None
}

#[cfg(not(target_arch = "wasm32"))]
fn elapsed(start: Option<std::time::Instant>) -> f64 {
    start.map(|s| s.elapsed().as_secs_f64()).unwrap_or(0.0)
}

#[cfg(target_arch = "wasm32")]
fn elapsed(_: Option<()>) -> f64 {
    0.0
}

// ---- checkpoints ------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub dtype: String,
    pub flow: FlowConfig,
    pub permutations: Vec<ChannelPerm>,
    pub kernel_sizes: Vec<usize>,
    pub param_names: Vec<String>,
    pub epochs_done: usize,
    pub adam_step: u64,
    pub has_optimizer: bool,
    /// Caller-defined context, e.g. the feature scale contract.
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: FlowModel<T>,
    pub state: Option<TrainState<T>>,
    pub extra: serde_json::Value,
}

/// Layout: magic `FFCK`, version `u32`, manifest length `u32`, manifest
/// JSON, record count `u32`, then that many `.fft` tensor records
/// (parameters, then Adam first moments, then second moments).
pub fn encode_checkpoint<T: Scalar>(
    model: &FlowModel<T>,
    state: Option<&TrainState<T>>,
    extra: serde_json::Value,
) -> Result<Vec<u8>> {
    let params = model.params();
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        dtype: format!("{:?}", T::DTYPE).to_lowercase(),
        flow: model.config().clone(),
        permutations: model.steps().iter().map(|s| s.perm().clone()).collect(),
        kernel_sizes: model.kernel_sizes(),
        param_names: params.iter().map(|p| p.name().to_string()).collect(),
        epochs_done: state.map_or(0, |s| s.epochs_done),
        adam_step: state.map_or(0, |s| s.adam.t),
        has_optimizer: state.is_some(),
        extra,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);

    let mut records: Vec<(String, &Tensor4<T>)> =
        params.iter().map(|p| (p.name().to_string(), p.value())).collect();
    if let Some(s) = state {
        for (p, m) in params.iter().zip(&s.adam.m) {
            records.push((format!("adam.m.{}", p.name()), m));
        }
        for (p, v) in params.iter().zip(&s.adam.v) {
            records.push((format!("adam.v.{}", p.name()), v));
        }
    }
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&encode_tensor(t, &TensorMeta::named(&name))?);
    }
    Ok(out)
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader::new(bytes, 0);
    let magic = r.take(4, "checkpoint magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = r.u32("checkpoint version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = r.u32("manifest length")? as usize;
    let at = r.offset();
    let manifest: CheckpointManifest =
        serde_json::from_slice(r.take(len, "manifest")?).map_err(|e| Error::Corrupt {
            offset: at,
            msg: format!("checkpoint manifest: {e}"),
        })?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint manifest version {} unsupported",
            manifest.version
        )));
    }
    let count = r.u32("record count")? as usize;
    let n_params = manifest.param_names.len();
    let expected = if manifest.has_optimizer { 3 * n_params } else { n_params };
    if count != expected {
        return Err(Error::Corrupt {
            offset: r.offset() - 4,
            msg: format!("{count} records, expected {expected}"),
        });
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let (t, _) = read_record(&mut r)?;
        tensors.push(t.into_dtype::<T>());
    }
    if r.position() != bytes.len() {
        return Err(Error::Corrupt {
            offset: r.offset(),
            msg: "trailing bytes after checkpoint records".into(),
        });
    }
    let v = tensors.split_off(if manifest.has_optimizer { 2 * n_params } else { n_params });
    let m = if manifest.has_optimizer {
        tensors.split_off(n_params)
    } else {
        Vec::new()
    };
    let model = FlowModel::from_parts(manifest.flow.clone(), manifest.permutations.clone(), tensors)?;
    let state = manifest.has_optimizer.then(|| TrainState {
        adam: AdamState {
            m,
            v,
            t: manifest.adam_step,
        },
        epochs_done: manifest.epochs_done,
    });
    Ok(Checkpoint {
        model,
        state,
        extra: manifest.extra,
    })
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    model: &FlowModel<T>,
    state: Option<&TrainState<T>>,
    extra: serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, state, extra)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    decode_checkpoint(&bytes)
}

/// Convenience for tests and demos: `n` copies of a `(1, c, h, w)` shape.
pub fn batch_shape(n: usize, item: Shape4) -> Shape4 {
    Shape4::new(n, item.c, item.h, item.w)
}
