//! The 2D coupling flow: a stack of affine coupling steps whose scale and
//! shift fields come from small fully convolutional subnets.
//!
//! Each step permutes channels, splits them into halves `(a, b)`, leaves `a`
//! untouched and maps `b -> s(a) * b + t(a)`. The scale is soft-clamped,
//! `s = exp(alpha * tanh(raw / alpha))`, so it always lies in
//! `[e^-alpha, e^alpha]`. The Jacobian of a step is triangular and its
//! log-determinant at a spatial location is the sum of `log s` over the
//! `b` channels there, which is tracked as a per-location map.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bias_shape, Param, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{conv2d_raw, ChannelPerm, Scalar, Shape4, Tensor4};

/// `ln(2 pi)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-step kernel sizes: `3-1` alternates 3x3 and 1x1 starting with 3x3,
/// `3-3` uses 3x3 everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelSchedule {
    #[serde(rename = "3-1")]
    Alternating,
    #[serde(rename = "3-3")]
    AllThree,
}

impl KernelSchedule {
    pub fn kernel_size(self, step: usize) -> usize {
        match self {
            KernelSchedule::Alternating if step % 2 == 1 => 1,
            _ => 3,
        }
    }
}

impl fmt::Display for KernelSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelSchedule::Alternating => "3-1",
            KernelSchedule::AllThree => "3-3",
        })
    }
}

impl FromStr for KernelSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3-1" => Ok(KernelSchedule::Alternating),
            "3-3" => Ok(KernelSchedule::AllThree),
            other => Err(Error::invalid(format!(
                "unknown kernel schedule {other:?} (expected 3-1 or 3-3)"
            ))),
        }
    }
}

/// Shape of one coupling subnet: `conv(k) -> relu -> conv(k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubnetConfig {
    pub kernel_size: usize,
    pub hidden_ratio: f64,
}

impl SubnetConfig {
    /// `round(hidden_ratio * channels)`, at least 1.
    pub fn hidden_channels(&self, channels: usize) -> usize {
        ((self.hidden_ratio * channels as f64).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub channels: usize,
    pub steps: usize,
    pub schedule: KernelSchedule,
    pub hidden_ratio: f64,
    pub clamp: f64,
    pub seed: u64,
}

impl FlowConfig {
    /// Defaults: 8 steps, `3-1`, hidden ratio 1.0, clamp 2.0, seed 0.
    pub fn new(channels: usize) -> Self {
        FlowConfig {
            channels,
            steps: 8,
            schedule: KernelSchedule::Alternating,
            hidden_ratio: 1.0,
            clamp: 2.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 || self.channels % 2 != 0 {
            return Err(Error::invalid(format!(
                "flow channels must be even and >= 2, got {}",
                self.channels
            )));
        }
        if self.steps == 0 {
            return Err(Error::invalid("flow needs at least one step"));
        }
        if !(self.hidden_ratio > 0.0 && self.hidden_ratio.is_finite()) {
            return Err(Error::invalid(format!(
                "hidden_ratio must be positive, got {}",
                self.hidden_ratio
            )));
        }
        if !(self.clamp > 0.0 && self.clamp.is_finite()) {
            return Err(Error::invalid(format!("clamp must be positive, got {}", self.clamp)));
        }
        Ok(())
    }

    pub fn subnet(&self, step: usize) -> SubnetConfig {
        SubnetConfig {
            kernel_size: self.schedule.kernel_size(step),
            hidden_ratio: self.hidden_ratio,
        }
    }
}

/// One affine coupling step.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingStep<T> {
    perm: ChannelPerm,
    kernel_size: usize,
    clamp: T,
    conv1_w: Param<T>,
    conv1_b: Param<T>,
    conv2_w: Param<T>,
    conv2_b: Param<T>,
}

/// Output of a forward pass: latent `z` and the `c = 1` log-det map.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentResult<T> {
    pub z: Tensor4<T>,
    pub logdet_map: Tensor4<T>,
}

/// Tape handles for a differentiable forward pass.
#[derive(Debug, Clone)]
pub struct TapeLatent {
    pub z: Var,
    pub logdet_map: Var,
    /// Leaf handles in [`FlowModel::params`] order.
    pub params: Vec<Var>,
}

impl<T: Scalar> CouplingStep<T> {
    fn init(index: usize, cfg: &FlowConfig, rng: &mut ChaCha8Rng) -> Self {
        let c = cfg.channels;
        let half = c / 2;
        let sub = cfg.subnet(index);
        let k = sub.kernel_size;
        let hidden = sub.hidden_channels(c);

        let perm = if c == 2 {
            ChannelPerm::swap_halves(2)
        } else if index % 2 == 0 {
            let mut p: Vec<usize> = (0..c).collect();
            p.shuffle(rng);
            ChannelPerm::new(p).expect("shuffle is a permutation")
        } else {
            // the previous step's identity half moves into the transformed half
            let mut lower: Vec<usize> = (half..c).collect();
            let mut upper: Vec<usize> = (0..half).collect();
            lower.shuffle(rng);
            upper.shuffle(rng);
            lower.extend(upper);
            ChannelPerm::new(lower).expect("shuffle is a permutation")
        };

        let bound = 1.0 / ((half * k * k) as f64).sqrt();
        let mut uniform = |shape: Shape4| {
            Tensor4::from_fn(shape, |_, _, _, _| T::from_f64_lossy(rng.random_range(-bound..bound)))
        };
        let w1 = uniform(Shape4::new(hidden, half, k, k));
        let b1 = uniform(bias_shape(hidden));
        CouplingStep {
            perm,
            kernel_size: k,
            clamp: T::from_f64_lossy(cfg.clamp),
            conv1_w: Param::new(format!("step{index}.conv1.weight"), w1),
            conv1_b: Param::new(format!("step{index}.conv1.bias"), b1),
            conv2_w: Param::new(
                format!("step{index}.conv2.weight"),
                Tensor4::zeros(Shape4::new(c, hidden, k, k)),
            ),
            conv2_b: Param::new(format!("step{index}.conv2.bias"), Tensor4::zeros(bias_shape(c))),
        }
    }

    pub fn perm(&self) -> &ChannelPerm {
        &self.perm
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn channels(&self) -> usize {
        self.perm.len()
    }

    pub fn params(&self) -> [&Param<T>; 4] {
        [&self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 4] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
        ]
    }

    fn check_input(&self, y: &Tensor4<T>) -> Result<()> {
        if y.shape().c != self.channels() {
            return Err(Error::shape(format!(
                "coupling step expects {} channels, got input {}",
                self.channels(),
                y.shape()
            )));
        }
        Ok(())
    }

    /// Log-scale `alpha * tanh(raw / alpha)` and shift from the `a` half.
    fn subnet(&self, ya: &Tensor4<T>) -> Result<(Tensor4<T>, Tensor4<T>)> {
        let h = conv2d_raw(ya, self.conv1_w.value(), self.conv1_b.value().data())?.relu();
        let out = conv2d_raw(&h, self.conv2_w.value(), self.conv2_b.value().data())?;
        let (raw, shift) = out.split_channels()?;
        let log_scale = raw.scale(T::one() / self.clamp).tanh().scale(self.clamp);
        Ok((log_scale, shift))
    }

    /// `y -> y'` and the per-location log-det contribution.
    pub fn forward(&self, y: &Tensor4<T>) -> Result<(Tensor4<T>, Tensor4<T>)> {
        self.check_input(y)?;
        let (ya, yb) = y.permute_channels(&self.perm)?.split_channels()?;
        let (log_scale, shift) = self.subnet(&ya)?;
        let yb_out = log_scale.exp().mul(&yb)?.add(&shift)?;
        Ok((
            Tensor4::concat_channels(&ya, &yb_out)?,
            log_scale.sum_over_channels(),
        ))
    }

    pub fn inverse(&self, y_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(y_out)?;
        let (ya, yb_out) = y_out.split_channels()?;
        let (log_scale, shift) = self.subnet(&ya)?;
        let yb = yb_out.sub(&shift)?.div(&log_scale.exp())?;
        Tensor4::concat_channels(&ya, &yb)?.permute_channels(&self.perm.inverse())
    }

    /// Differentiable forward pass; `params` are leaf handles for this
    /// step's parameters in [`CouplingStep::params`] order.
    fn forward_tape(&self, tape: &mut Tape<T>, y: Var, params: &[Var; 4]) -> Result<(Var, Var)> {
        let [w1, b1, w2, b2] = *params;
        let p = tape.permute_channels(y, &self.perm)?;
        let (ya, yb) = tape.split_channels(p)?;
        let h = tape.conv2d(ya, w1, b1)?;
        let h = tape.relu(h);
        let out = tape.conv2d(h, w2, b2)?;
        let (raw, shift) = tape.split_channels(out)?;
        let r = tape.scale(raw, T::one() / self.clamp);
        let r = tape.tanh(r);
        let log_scale = tape.scale(r, self.clamp);
        let s = tape.exp(log_scale);
        let m = tape.mul(s, yb)?;
        let yb_out = tape.add(m, shift)?;
        let y_out = tape.concat_channels(ya, yb_out)?;
        let logdet = tape.sum_over_channels(log_scale);
        Ok((y_out, logdet))
    }
}

/// `K` coupling steps composed in order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel<T> {
    config: FlowConfig,
    steps: Vec<CouplingStep<T>>,
}

impl<T: Scalar> FlowModel<T> {
    /// Seeded initialization. The last subnet layer starts at zero so every
    /// step is initially the identity up to its channel permutation.
    pub fn init(config: FlowConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let steps = (0..config.steps)
            .map(|i| CouplingStep::init(i, &config, &mut rng))
            .collect();
        Ok(FlowModel { config, steps })
    }

    /// Reassembles a model from stored permutations and parameter values,
    /// ordered as [`FlowModel::params`].
    pub fn from_parts(config: FlowConfig, perms: Vec<ChannelPerm>, values: Vec<Tensor4<T>>) -> Result<Self> {
        let mut model = Self::init(config)?;
        if perms.len() != model.steps.len() {
            return Err(Error::invalid(format!(
                "{} permutations for {} steps",
                perms.len(),
                model.steps.len()
            )));
        }
        for (step, perm) in model.steps.iter_mut().zip(perms) {
            if perm.len() != model.config.channels {
                return Err(Error::invalid("permutation length differs from channel count"));
            }
            step.perm = perm;
        }
        let mut params = model.params_mut();
        if params.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} parameter tensors for {} parameters",
                values.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(values) {
            p.set_value(v)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    pub fn steps(&self) -> &[CouplingStep<T>] {
        &self.steps
    }

    pub fn kernel_sizes(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.kernel_size).collect()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.steps.iter().flat_map(|s| s.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.steps.iter_mut().flat_map(|s| s.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// The permutation the steps apply overall, ignoring the coupling maps.
    pub fn composed_perm(&self) -> ChannelPerm {
        self.steps
            .iter()
            .fold(ChannelPerm::identity(self.channels()), |acc, s| acc.then(&s.perm))
    }

    pub fn cast<U: Scalar>(&self) -> FlowModel<U> {
        FlowModel {
            config: self.config.clone(),
            steps: self
                .steps
                .iter()
                .map(|s| {
                    let cast = |p: &Param<T>| Param::new(p.name(), p.value().cast::<U>());
                    CouplingStep {
                        perm: s.perm.clone(),
                        kernel_size: s.kernel_size,
                        clamp: U::from_f64_lossy(s.clamp.as_f64()),
                        conv1_w: cast(&s.conv1_w),
                        conv1_b: cast(&s.conv1_b),
                        conv2_w: cast(&s.conv2_w),
                        conv2_b: cast(&s.conv2_b),
                    }
                })
                .collect(),
        }
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.shape().c != self.channels() {
            return Err(Error::shape(format!(
                "flow expects {} channels, got input {}",
                self.channels(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Features to latent, with the accumulated per-location log-det.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<LatentResult<T>> {
        self.check_input(x)?;
        let s = x.shape();
        let mut y = x.clone();
        let mut logdet = Tensor4::zeros(Shape4::new(s.n, 1, s.h, s.w));
        for step in &self.steps {
            let (next, contrib) = step.forward(&y)?;
            logdet.add_assign(&contrib)?;
            y = next;
        }
        Ok(LatentResult { z: y, logdet_map: logdet })
    }

    /// Latent to features: steps inverted in reverse order.
    pub fn inverse(&self, z: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(z)?;
        let mut y = z.clone();
        for step in self.steps.iter().rev() {
            y = step.inverse(&y)?;
        }
        Ok(y)
    }

    /// Records the forward pass on `tape`, with one leaf per parameter.
    pub fn forward_tape(&self, tape: &mut Tape<T>, x: Var) -> Result<TapeLatent> {
        let s = tape.value(x).shape();
        if s.c != self.channels() {
            return Err(Error::shape(format!(
                "flow expects {} channels, got input {s}",
                self.channels()
            )));
        }
        let params: Vec<Var> = self.params().into_iter().map(|p| tape.param(p)).collect();
        let mut y = x;
        let mut logdet: Option<Var> = None;
        for (step, vars) in self.steps.iter().zip(params.chunks_exact(4)) {
            let vars: &[Var; 4] = vars.try_into().expect("four params per step");
            let (next, contrib) = step.forward_tape(tape, y, vars)?;
            logdet = Some(match logdet {
                Some(acc) => tape.add(acc, contrib)?,
                None => contrib,
            });
            y = next;
        }
        Ok(TapeLatent {
            z: y,
            logdet_map: logdet.expect("at least one step"),
            params,
        })
    }
}

/// Per-item negative log-likelihood under a standard normal latent:
/// `0.5 * sum z^2 + 0.5 * D * ln(2 pi) - sum logdet`, `D = c * h * w`.
pub fn nll_per_item<T: Scalar>(result: &LatentResult<T>) -> Vec<T> {
    let s = result.z.shape();
    let d = (s.c * s.plane()) as f64;
    let constant = T::from_f64_lossy(0.5 * d * LN_2PI);
    let half = T::from_f64_lossy(0.5);
    let sq = result.z.square().sum_per_item();
    let ld = result.logdet_map.sum_per_item();
    sq.iter()
        .zip(&ld)
        .map(|(&q, &l)| half * q + constant - l)
        .collect()
}

/// Batch mean of [`nll_per_item`]; minimizing it maximizes the log-likelihood.
pub fn nll_loss<T: Scalar>(result: &LatentResult<T>) -> T {
    let per = nll_per_item(result);
    per.iter().copied().sum::<T>() / T::from_usize(per.len()).expect("batch fits")
}

/// Differentiable [`nll_loss`].
pub fn nll_loss_tape<T: Scalar>(tape: &mut Tape<T>, latent: &TapeLatent) -> Result<Var> {
    let s = tape.value(latent.z).shape();
    let n = s.n as f64;
    let d = (s.c * s.plane()) as f64;
    let sq = tape.square(latent.z);
    let sq = tape.sum_all(sq);
    let sq = tape.scale(sq, T::from_f64_lossy(0.5 / n));
    let ld = tape.sum_all(latent.logdet_map);
    let ld = tape.scale(ld, T::from_f64_lossy(1.0 / n));
    let loss = tape.sub(sq, ld)?;
    Ok(tape.add_scalar(loss, T::from_f64_lossy(0.5 * d * LN_2PI)))
}

/// Differential entropy of `N(0, 1)` in nats: `0.5 * (1 + ln 2 pi)`.
pub fn standard_normal_entropy() -> f64 {
    0.5 * (1.0 + (2.0 * PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random(shape: Shape4, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(-1.5..1.5))
    }

    /// Gives every zero-initialized output layer random values.
    fn randomize(model: &mut FlowModel<f64>, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in model.params_mut() {
            let v = Tensor4::from_fn(p.value().shape(), |_, _, _, _| rng.random_range(-scale..scale));
            p.set_value(v).unwrap();
        }
    }

    fn cfg(c: usize, k: usize, schedule: KernelSchedule) -> FlowConfig {
        FlowConfig {
            channels: c,
            steps: k,
            schedule,
            hidden_ratio: 1.0,
            clamp: 2.0,
            seed: 11,
        }
    }

    #[test]
    fn ln_2pi_constant() {
        assert!((LN_2PI - (2.0 * PI).ln()).abs() < 1e-15);
        assert!((standard_normal_entropy() - 1.418_938_533).abs() < 1e-8);
    }

    #[test]
    fn alternating_schedule_kernel_sizes() {
        let m = FlowModel::<f32>::init(cfg(8, 8, KernelSchedule::Alternating)).unwrap();
        assert_eq!(m.kernel_sizes(), vec![3, 1, 3, 1, 3, 1, 3, 1]);
        let m = FlowModel::<f32>::init(cfg(8, 4, KernelSchedule::AllThree)).unwrap();
        assert_eq!(m.kernel_sizes(), vec![3; 4]);
    }

    #[test]
    fn odd_or_tiny_channels_rejected() {
        assert!(FlowModel::<f32>::init(cfg(3, 2, KernelSchedule::AllThree)).is_err());
        assert!(FlowModel::<f32>::init(cfg(0, 2, KernelSchedule::AllThree)).is_err());
        assert!(FlowModel::<f32>::init(cfg(4, 0, KernelSchedule::AllThree)).is_err());
    }

    #[test]
    fn same_seed_same_model() {
        let a = FlowModel::<f32>::init(cfg(6, 5, KernelSchedule::Alternating)).unwrap();
        let b = FlowModel::<f32>::init(cfg(6, 5, KernelSchedule::Alternating)).unwrap();
        assert_eq!(a, b);
        let mut other = cfg(6, 5, KernelSchedule::Alternating);
        other.seed = 12;
        assert_ne!(a, FlowModel::<f32>::init(other).unwrap());
    }

    #[test]
    fn zero_init_is_permutation_with_zero_logdet() {
        let m = FlowModel::<f64>::init(cfg(6, 4, KernelSchedule::Alternating)).unwrap();
        let x = random(Shape4::new(2, 6, 3, 4), 1);
        let r = m.forward(&x).unwrap();
        assert_eq!(r.z, x.permute_channels(&m.composed_perm()).unwrap());
        assert!(r.logdet_map.data().iter().all(|&v| v == 0.0));
        assert_eq!(r.logdet_map.shape(), Shape4::new(2, 1, 3, 4));
    }

    #[test]
    fn two_channel_steps_swap_halves() {
        let m = FlowModel::<f64>::init(cfg(2, 3, KernelSchedule::AllThree)).unwrap();
        for s in m.steps() {
            assert_eq!(s.perm().as_slice(), &[1, 0]);
        }
    }

    #[test]
    fn every_channel_is_transformed_within_two_steps() {
        for c in [4, 6, 16, 64] {
            for seed in 0..5 {
                let m = FlowModel::<f64>::init(FlowConfig { seed, ..cfg(c, 2, KernelSchedule::Alternating) }).unwrap();
                // origin[i] = input channel currently held at position i
                let mut origin: Vec<usize> = (0..c).collect();
                let mut touched = vec![false; c];
                for s in m.steps() {
                    origin = s.perm().as_slice().iter().map(|&j| origin[j]).collect();
                    for &o in &origin[c / 2..] {
                        touched[o] = true;
                    }
                }
                assert!(touched.iter().all(|&t| t), "c={c} seed={seed}");
            }
        }
    }

    #[test]
    fn hand_set_single_pixel_coupling() {
        // c = 2, one pixel, 1x1 subnet with one hidden unit.
        let mut m = FlowModel::<f64>::init(FlowConfig {
            channels: 2,
            steps: 1,
            schedule: KernelSchedule::Alternating,
            hidden_ratio: 0.5,
            clamp: 2.0,
            seed: 0,
        })
        .unwrap();
        let vals = [
            // on a single pixel only the kernel centers see data
            Tensor4::from_fn(Shape4::new(1, 1, 3, 3), |_, _, y, x| if (y, x) == (1, 1) { 0.8 } else { 9.0 }),
            Tensor4::from_vec(bias_shape(1), vec![0.1]).unwrap(),
            Tensor4::from_fn(Shape4::new(2, 1, 3, 3), |o, _, y, x| match (o, y, x) {
                (0, 1, 1) => 1.5,
                (1, 1, 1) => -0.5,
                _ => -7.0,
            }),
            Tensor4::from_vec(bias_shape(2), vec![0.2, 0.3]).unwrap(),
        ];
        for (p, v) in m.params_mut().into_iter().zip(vals) {
            p.set_value(v).unwrap();
        }
        // perm swaps halves: y = [ya0, yb0] = [x1, x0].
        let x = Tensor4::from_vec(Shape4::new(1, 2, 1, 1), vec![-1.2, 0.7]).unwrap();
        let r = m.forward(&x).unwrap();
        let (ya, yb) = (0.7f64, -1.2f64);
        let hidden = (0.8 * ya + 0.1f64).max(0.0);
        let raw = 1.5 * hidden + 0.2;
        let shift = -0.5 * hidden + 0.3;
        let log_s = 2.0 * (raw / 2.0).tanh();
        let expected_b = log_s.exp() * yb + shift;
        assert_eq!(r.z.data()[0], ya);
        assert!((r.z.data()[1] - expected_b).abs() < 1e-14);
        assert!((r.logdet_map.data()[0] - log_s).abs() < 1e-14);
    }

    #[test]
    fn round_trip_f32_and_f64() {
        for (c, k) in [(2, 1), (4, 4), (8, 3)] {
            for schedule in [KernelSchedule::Alternating, KernelSchedule::AllThree] {
                let mut m = FlowModel::<f64>::init(cfg(c, k, schedule)).unwrap();
                randomize(&mut m, 5, 0.4);
                let x = random(Shape4::new(2, c, 4, 3), 9);
                let back = m.inverse(&m.forward(&x).unwrap().z).unwrap();
                assert!(back.max_abs_diff(&x).unwrap() <= 1e-10);

                let m32 = m.cast::<f32>();
                let x32 = x.cast::<f32>();
                let back = m32.inverse(&m32.forward(&x32).unwrap().z).unwrap();
                assert!(back.max_abs_diff(&x32).unwrap() <= 1e-4);
            }
        }
    }

    #[test]
    fn a_half_passes_unchanged_and_logdet_bounded() {
        let mut m = FlowModel::<f64>::init(cfg(4, 1, KernelSchedule::AllThree)).unwrap();
        randomize(&mut m, 6, 3.0);
        let x = random(Shape4::new(1, 4, 5, 5), 2);
        let (y, ld) = m.steps()[0].forward(&x).unwrap();
        let p = x.permute_channels(m.steps()[0].perm()).unwrap();
        assert_eq!(y.narrow_channels(0, 2).unwrap(), p.narrow_channels(0, 2).unwrap());
        let bound = 1.0 * 2.0 * 2.0;
        assert!(ld.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn tape_forward_matches_inference_exactly() {
        let mut m = FlowModel::<f32>::init(cfg(4, 3, KernelSchedule::Alternating)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in m.params_mut() {
            let v = Tensor4::from_fn(p.value().shape(), |_, _, _, _| rng.random_range(-0.3f32..0.3));
            p.set_value(v).unwrap();
        }
        let x = random(Shape4::new(2, 4, 3, 3), 4).cast::<f32>();
        let r = m.forward(&x).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let t = m.forward_tape(&mut tape, xv).unwrap();
        assert_eq!(tape.value(t.z), &r.z);
        assert_eq!(tape.value(t.logdet_map), &r.logdet_map);
        let loss = nll_loss_tape(&mut tape, &t).unwrap();
        let diff = (tape.value(loss).data()[0] - nll_loss(&r)).abs();
        assert!(diff <= 1e-4 * nll_loss(&r).abs(), "{diff}");
    }

    #[test]
    fn nll_closed_form() {
        let r = LatentResult {
            z: Tensor4::<f64>::zeros(Shape4::new(1, 4, 1, 1)),
            logdet_map: Tensor4::zeros(Shape4::new(1, 1, 1, 1)),
        };
        assert!((nll_loss(&r) - 3.675_754_132_818_691).abs() < 1e-12);
    }

    #[test]
    fn nll_of_standard_normal_approaches_entropy_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let shape = Shape4::new(4, 16, 32, 32);
        let z: Tensor4<f64> = Tensor4::from_fn(shape, |_, _, _, _| StandardNormal.sample(&mut rng));
        let r = LatentResult {
            z,
            logdet_map: Tensor4::zeros(Shape4::new(4, 1, 32, 32)),
        };
        let per_dim = nll_loss(&r) / (16.0 * 32.0 * 32.0);
        assert!((per_dim - standard_normal_entropy()).abs() < 0.02, "{per_dim}");
    }

    #[test]
    fn identity_flow_nll_equals_base_nll_of_input() {
        let m = FlowModel::<f64>::init(cfg(4, 2, KernelSchedule::AllThree)).unwrap();
        let x = random(Shape4::new(3, 4, 2, 2), 8);
        let r = m.forward(&x).unwrap();
        let d = 16.0;
        let expected = (0.5 * x.square().sum_all() + 3.0 * 0.5 * d * LN_2PI) / 3.0;
        assert!((nll_loss(&r) - expected).abs() < 1e-12);
    }

    #[test]
    fn param_count_matches_layer_arithmetic() {
        let m = FlowModel::<f32>::init(cfg(8, 2, KernelSchedule::Alternating)).unwrap();
        // step 0 (3x3): 9*4*8 + 8 + 9*8*8 + 8; step 1 (1x1): 4*8 + 8 + 8*8 + 8.
        assert_eq!(m.param_count(), (288 + 8 + 576 + 8) + (32 + 8 + 64 + 8));
    }

    #[test]
    fn channel_mismatch_is_error() {
        let m = FlowModel::<f32>::init(cfg(4, 2, KernelSchedule::AllThree)).unwrap();
        let x = Tensor4::zeros(Shape4::new(1, 6, 2, 2));
        assert!(m.forward(&x).is_err());
        assert!(m.inverse(&x).is_err());
    }

    #[test]
    fn schedule_parse_round_trip() {
        for s in ["3-1", "3-3"] {
            assert_eq!(s.parse::<KernelSchedule>().unwrap().to_string(), s);
        }
        assert!("1-3".parse::<KernelSchedule>().is_err());
    }
}
