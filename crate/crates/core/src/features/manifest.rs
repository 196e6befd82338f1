//! `manifest.json`: the contract between a feature exporter and the core.
//!
//! ```json
//! {
//!   "backbone_id": "resnet18",
//!   "input_h": 256, "input_w": 256,
//!   "scales": [
//!     {"layer_id": 1, "channels": 64,  "h": 64, "w": 64},
//!     {"layer_id": 2, "channels": 128, "h": 32, "w": 32},
//!     {"layer_id": 3, "channels": 256, "h": 16, "w": 16}
//!   ],
//!   "preprocessing": {"resize": "bilinear", "normalization": "..."},
//!   "train": ["train/good/000"],
//!   "test": [{"id": "test/crack/000", "label": 1, "mask": "ground_truth/crack/000_mask.png"}]
//! }
//! ```
//!
//! Scale `k` of image `id` lives at `<root>/<id>.scale<k>.fft`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::load_tensor;
use super::FeatureStack;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub layer_id: i64,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestEntry {
    pub id: String,
    /// 0 = normal, 1 = anomalous.
    pub label: u8,
    /// Ground-truth mask path relative to the dataset root.
    #[serde(default)]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub backbone_id: String,
    pub input_h: usize,
    pub input_w: usize,
    pub scales: Vec<ScaleSpec>,
    #[serde(default)]
    pub preprocessing: serde_json::Value,
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub test: Vec<TestEntry>,
}

/// Input size and per-scale spatial sizes of the supported pretrained backbones.
pub const KNOWN_BACKBONES: &[(&str, usize, &[usize])] = &[
    ("resnet18", 256, &[64, 32, 16]),
    ("wide_resnet50_2", 256, &[64, 32, 16]),
    ("deit_base_distilled_patch16_384", 384, &[24]),
    ("cait_m48_448", 448, &[28]),
];

impl DatasetManifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let path = root.as_ref().join(MANIFEST_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path)),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let path = root.as_ref().join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }

    /// Checks internal consistency and, for known backbones, the shape table.
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::invalid("manifest declares no scales"));
        }
        let family = super::BackboneFamily::of(&self.backbone_id);
        if self.scales.len() > family.max_scales()
            || (family == super::BackboneFamily::Transformer && self.scales.len() != 1)
        {
            return Err(Error::invalid(format!(
                "backbone {} cannot provide {} scales",
                self.backbone_id,
                self.scales.len()
            )));
        }
        for s in &self.scales {
            if s.channels == 0 || s.h == 0 || s.w == 0 || s.h > self.input_h || s.w > self.input_w {
                return Err(Error::invalid(format!(
                    "scale {s:?} inconsistent with input {}x{}",
                    self.input_h, self.input_w
                )));
            }
        }
        if let Some((_, input, sizes)) = KNOWN_BACKBONES.iter().find(|(id, ..)| *id == self.backbone_id) {
            let declared: Vec<usize> = self.scales.iter().map(|s| s.h).collect();
            if self.input_h != *input
                || self.input_w != *input
                || declared != *sizes
                || self.scales.iter().any(|s| s.h != s.w)
            {
                return Err(Error::invalid(format!(
                    "{} expects input {input} with feature sizes {sizes:?}, manifest declares input {}x{} with {declared:?}",
                    self.backbone_id, self.input_h, self.input_w
                )));
            }
        }
        Ok(())
    }

    pub fn scale_path(root: &Path, image_id: &str, scale: usize) -> PathBuf {
        root.join(format!("{image_id}.scale{scale}.fft"))
    }
}

/// Loads and validates every scale of one image.
pub fn load_feature_stack<T: Scalar>(
    root: impl AsRef<Path>,
    image_id: &str,
    manifest: &DatasetManifest,
) -> Result<FeatureStack<T>> {
    let root = root.as_ref();
    let mut scales = Vec::with_capacity(manifest.scales.len());
    for (k, spec) in manifest.scales.iter().enumerate() {
        let path = DatasetManifest::scale_path(root, image_id, k);
        let (t, _) = load_tensor::<T>(&path)?;
        let s = t.shape();
        if (s.c, s.h, s.w) != (spec.channels, spec.h, spec.w) {
            return Err(Error::shape(format!(
                "{}: shape {s} disagrees with manifest scale {k} (c={}, h={}, w={})",
                path.display(),
                spec.channels,
                spec.h,
                spec.w
            )));
        }
        scales.push(t);
    }
    FeatureStack::new(
        scales,
        manifest.input_h,
        manifest.input_w,
        manifest.backbone_id.clone(),
        manifest.scales.iter().map(|s| s.layer_id).collect(),
    )
}
