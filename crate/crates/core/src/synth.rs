//! Seeded synthetic texture benchmark with pixel-accurate defect masks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::image::{plane_to_gray8, save_gray_png};
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub size: usize,
    pub n_train: usize,
    pub n_test_good: usize,
    pub n_test_defect: usize,
    /// Side of the coarse noise lattice that is upsampled into the texture.
    pub lattice: usize,
    pub fine_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 64,
            n_train: 200,
            n_test_good: 50,
            n_test_defect: 50,
            lattice: 8,
            fine_noise: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    BrightSquare,
    DarkSquare,
    Blob,
}

impl DefectKind {
    pub const ALL: [DefectKind; 3] = [DefectKind::BrightSquare, DefectKind::DarkSquare, DefectKind::Blob];

    pub fn name(self) -> &'static str {
        match self {
            DefectKind::BrightSquare => "bright_square",
            DefectKind::DarkSquare => "dark_square",
            DefectKind::Blob => "blob",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSample {
    /// `(1, 1, size, size)` in `[0, 1]`.
    pub image: Tensor4<f64>,
    /// `None` for normal samples; otherwise row-major defect pixels.
    pub mask: Option<Vec<bool>>,
    pub defect: Option<DefectKind>,
}

impl TestSample {
    pub fn is_anomalous(&self) -> bool {
        self.defect.is_some()
    }

    /// Per-pixel labels; all false for normal samples.
    pub fn pixel_labels(&self) -> Vec<bool> {
        let s = self.image.shape();
        self.mask.clone().unwrap_or_else(|| vec![false; s.h * s.w])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub config: SynthConfig,
    pub train: Vec<Tensor4<f64>>,
    pub test: Vec<TestSample>,
}

/// Smooth random texture: coarse lattice noise in `[0.3, 0.7]`, bilinearly
/// upsampled, plus a little per-pixel Gaussian noise.
pub fn normal_texture(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<Tensor4<f64>> {
    let l = cfg.lattice.max(2);
    let coarse = Tensor4::from_fn(Shape4::new(1, 1, l, l), |_, _, _, _| rng.random_range(0.3..0.7));
    let smooth = coarse.bilinear_resize(cfg.size, cfg.size)?;
    let noise = Normal::new(0.0, cfg.fine_noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = smooth;
    for v in out.data_mut() {
        *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Paints one defect into `img` and returns its mask.
pub fn inject_defect(img: &mut Tensor4<f64>, kind: DefectKind, rng: &mut impl Rng) -> Vec<bool> {
    let s = img.shape();
    let size = s.h.min(s.w);
    let lo = (size / 10).max(2);
    let hi = (size / 5).max(lo + 1);
    let side = rng.random_range(lo..=hi);
    let y0 = rng.random_range(0..=s.h - side);
    let x0 = rng.random_range(0..=s.w - side);
    let mut mask = vec![false; s.h * s.w];
    let (cy, cx, r) = (
        y0 as f64 + (side as f64 - 1.0) / 2.0,
        x0 as f64 + (side as f64 - 1.0) / 2.0,
        side as f64 / 2.0,
    );
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            let value = match kind {
                DefectKind::BrightSquare => Some(0.95),
                DefectKind::DarkSquare => Some(0.05),
                DefectKind::Blob => {
                    let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                    // checkerboard speckle inside a disc
                    (d <= r).then_some(if (x + y) % 2 == 0 { 0.9 } else { 0.1 })
                }
            };
            if let Some(v) = value {
                mask[y * s.w + x] = true;
                for c in 0..s.c {
                    img.set(0, c, y, x, v);
                }
            }
        }
    }
    mask
}

pub fn generate(cfg: &SynthConfig) -> Result<SyntheticSet> {
    if cfg.size < 16 {
        return Err(Error::invalid(format!("synthetic images need size >= 16, got {}", cfg.size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = (0..cfg.n_train)
        .map(|_| normal_texture(cfg, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut test = Vec::with_capacity(cfg.n_test_good + cfg.n_test_defect);
    for _ in 0..cfg.n_test_good {
        test.push(TestSample {
            image: normal_texture(cfg, &mut rng)?,
            mask: None,
            defect: None,
        });
    }
    for i in 0..cfg.n_test_defect {
        let kind = DefectKind::ALL[i % DefectKind::ALL.len()];
        let mut image = normal_texture(cfg, &mut rng)?;
        let mask = inject_defect(&mut image, kind, &mut rng);
        test.push(TestSample {
            image,
            mask: Some(mask),
            defect: Some(kind),
        });
    }
    Ok(SyntheticSet {
        config: cfg.clone(),
        train,
        test,
    })
}

impl SyntheticSet {
    /// Writes `train/good`, `test/<defect>` and `ground_truth/<defect>` PNGs
    /// under `root`, with three-digit file stems.
    pub fn write_image_folder(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        let size = self.config.size;
        for (i, img) in self.train.iter().enumerate() {
            let path = root.join(format!("train/good/{i:03}.png"));
            save_gray_png(path, size, size, &plane_to_gray8(img, 0, 0))?;
        }
        let mut counters = std::collections::HashMap::new();
        for sample in &self.test {
            let dir = sample.defect.map_or("good", DefectKind::name);
            let idx = counters.entry(dir).or_insert(0usize);
            let stem = format!("{:03}", *idx);
            *idx += 1;
            save_gray_png(
                root.join(format!("test/{dir}/{stem}.png")),
                size,
                size,
                &plane_to_gray8(&sample.image, 0, 0),
            )?;
            if let Some(mask) = &sample.mask {
                let pixels: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
                save_gray_png(root.join(format!("ground_truth/{dir}/{stem}_mask.png")), size, size, &pixels)?;
            }
        }
        Ok(())
    }
}
