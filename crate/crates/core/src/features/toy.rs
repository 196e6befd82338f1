//! Frozen random-projection feature pyramid.
//!
//! A seeded 3x3 projection to `channels` maps, a rectifier, then average
//! pooling at each configured stride. Borders replicate edge pixels so a
//! constant image yields spatially constant features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::FeatureStack;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

pub const TOY_BACKBONE_ID: &str = "toy";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyExtractorConfig {
    pub channels: usize,
    pub strides: Vec<usize>,
    pub seed: u64,
}

impl Default for ToyExtractorConfig {
    fn default() -> Self {
        ToyExtractorConfig {
            channels: 16,
            strides: vec![4, 8, 16],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyExtractor {
    config: ToyExtractorConfig,
}

impl ToyExtractor {
    pub fn new(config: ToyExtractorConfig) -> Result<Self> {
        if config.channels == 0 || config.channels % 2 != 0 {
            return Err(Error::invalid(format!(
                "toy extractor channels must be even and >= 2, got {}",
                config.channels
            )));
        }
        if config.strides.is_empty() || config.strides.len() > 3 || config.strides.contains(&0) {
            return Err(Error::invalid(format!(
                "toy extractor needs 1 to 3 positive strides, got {:?}",
                config.strides
            )));
        }
        Ok(ToyExtractor { config })
    }

    pub fn config(&self) -> &ToyExtractorConfig {
        &self.config
    }

    /// Spatial size of each scale for an input of `h x w`.
    pub fn scale_sizes(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        self.config.strides.iter().map(|&s| (h / s, w / s)).collect()
    }

    /// Projection weights `(channels, c_in, 3, 3)` and biases; a separate
    /// stream per input channel count keeps gray and RGB weights independent.
    fn projection(&self, c_in: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(c_in as u64);
        let std = 1.0 / ((9 * c_in) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let weights = (0..self.config.channels * c_in * 9)
            .map(|_| normal.sample(&mut rng))
            .collect();
        let uniform = Uniform::new(-0.5, 0.5).expect("valid range");
        let bias = (0..self.config.channels).map(|_| uniform.sample(&mut rng)).collect();
        (weights, bias)
    }

    /// Extracts the pyramid for a batch of images with values in `[0, 1]`.
    pub fn extract<T: Scalar>(&self, images: &Tensor4<T>) -> Result<FeatureStack<T>> {
        let s = images.shape();
        if s.c != 1 && s.c != 3 {
            return Err(Error::shape(format!("toy extractor expects 1 or 3 channels, got {s}")));
        }
        let max_stride = *self.config.strides.iter().max().expect("non-empty");
        if s.h < max_stride || s.w < max_stride {
            return Err(Error::shape(format!(
                "image {}x{} smaller than stride {max_stride}",
                s.h, s.w
            )));
        }
        let (weights, bias) = self.projection(s.c);
        let cf = self.config.channels;
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

        let mut proj = vec![0.0f64; s.n * cf * s.h * s.w];
        for n in 0..s.n {
            for o in 0..cf {
                let dst = &mut proj[(n * cf + o) * s.h * s.w..(n * cf + o + 1) * s.h * s.w];
                for y in 0..s.h {
                    for x in 0..s.w {
                        let mut acc = bias[o];
                        for ci in 0..s.c {
                            for ky in 0..3 {
                                let iy = clamp(y as isize + ky as isize - 1, s.h);
                                for kx in 0..3 {
                                    let ix = clamp(x as isize + kx as isize - 1, s.w);
                                    acc += weights[((o * s.c + ci) * 3 + ky) * 3 + kx]
                                        * images.get(n, ci, iy, ix).as_f64();
                                }
                            }
                        }
                        dst[y * s.w + x] = acc.max(0.0);
                    }
                }
            }
        }

        let scales = self
            .config
            .strides
            .iter()
            .map(|&stride| {
                let (oh, ow) = (s.h / stride, s.w / stride);
                let norm = 1.0 / (stride * stride) as f64;
                Tensor4::from_fn(Shape4::new(s.n, cf, oh, ow), |n, c, y, x| {
                    let plane = &proj[(n * cf + c) * s.h * s.w..];
                    let mut acc = 0.0;
                    for dy in 0..stride {
                        let row = (y * stride + dy) * s.w + x * stride;
                        acc += plane[row..row + stride].iter().sum::<f64>();
                    }
                    T::from_f64_lossy(acc * norm)
                })
            })
            .collect();
        FeatureStack::new(
            scales,
            s.h,
            s.w,
            TOY_BACKBONE_ID,
            (0..self.config.strides.len() as i64).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noise(shape: Shape4, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn resnet_like_shape_contract() {
        let ex = ToyExtractor::new(ToyExtractorConfig { channels: 4, ..Default::default() }).unwrap();
        let img = Tensor4::<f32>::full(Shape4::new(1, 3, 256, 256), 0.5);
        let stack = ex.extract(&img).unwrap();
        let sizes: Vec<usize> = stack.scales().iter().map(|t| t.shape().h).collect();
        assert_eq!(sizes, vec![64, 32, 16]);
        assert_eq!((stack.input_h(), stack.input_w()), (256, 256));
    }

    #[test]
    fn constant_image_gives_constant_features() {
        let ex = ToyExtractor::new(ToyExtractorConfig::default()).unwrap();
        let img = Tensor4::<f64>::full(Shape4::new(1, 1, 32, 32), 0.3);
        for t in ex.extract(&img).unwrap().scales() {
            for c in 0..t.shape().c {
                let p = t.plane(0, c);
                assert!(p.iter().all(|&v| (v - p[0]).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn seeds_matter_and_are_stable() {
        let img = noise(Shape4::new(1, 1, 32, 32), 1);
        let a = ToyExtractor::new(ToyExtractorConfig::default()).unwrap();
        let b = ToyExtractor::new(ToyExtractorConfig { seed: 9, ..Default::default() }).unwrap();
        assert_eq!(a.extract(&img).unwrap(), a.extract(&img).unwrap());
        assert_ne!(a.extract(&img).unwrap(), b.extract(&img).unwrap());
    }

    #[test]
    fn translation_covariant_on_interior_cells() {
        let stride = 4;
        let ex = ToyExtractor::new(ToyExtractorConfig {
            channels: 4,
            strides: vec![stride],
            seed: 3,
        })
        .unwrap();
        let img = noise(Shape4::new(1, 1, 32, 32), 2);
        let shifted = Tensor4::from_fn(img.shape(), |n, c, y, x| {
            img.get(n, c, y, x.saturating_sub(stride))
        });
        let a = ex.extract(&img).unwrap().into_scales().swap_remove(0);
        let b = ex.extract(&shifted).unwrap().into_scales().swap_remove(0);
        for c in 0..4 {
            for y in 1..7 {
                for x in 2..7 {
                    assert!((a.get(0, c, y, x - 1) - b.get(0, c, y, x)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ToyExtractor::new(ToyExtractorConfig { channels: 3, ..Default::default() }).is_err());
        assert!(ToyExtractor::new(ToyExtractorConfig { strides: vec![], ..Default::default() }).is_err());
        let ex = ToyExtractor::new(ToyExtractorConfig::default()).unwrap();
        assert!(ex.extract(&Tensor4::<f32>::zeros(Shape4::new(1, 2, 32, 32))).is_err());
        assert!(ex.extract(&Tensor4::<f32>::zeros(Shape4::new(1, 1, 8, 8))).is_err());
    }
}
