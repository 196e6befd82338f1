//! Dataset roots, the checkpoint/input contract, and checkpoint sets.

use std::path::{Path, PathBuf};

use flowad_core::dataset::{load_entry, load_mask, ImageEntry, ImageFolder};
use flowad_core::features::image::load_image;
use flowad_core::features::manifest::MANIFEST_FILE;
use flowad_core::features::toy::TOY_BACKBONE_ID;
use flowad_core::features::{load_feature_stack, DatasetManifest, FeatureStack, ScaleSpec, ToyExtractor, ToyExtractorConfig};
use flowad_core::flow::FlowModel;
use flowad_core::train::{load_checkpoint, TrainState};
use flowad_core::{Error, Tensor4};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// What a set of checkpoints expects as input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Contract {
    /// Raw images resized to `image_size` and passed through the toy extractor.
    Toy { image_size: usize, toy: ToyExtractorConfig },
    /// Exported feature tensors described by a manifest.
    Features {
        backbone_id: String,
        input_h: usize,
        input_w: usize,
        scales: Vec<ScaleSpec>,
    },
}

impl Contract {
    pub fn n_scales(&self) -> usize {
        match self {
            Contract::Toy { toy, .. } => toy.strides.len(),
            Contract::Features { scales, .. } => scales.len(),
        }
    }

    /// `(h, w)` of the input image, which is also the anomaly map size.
    pub fn input_size(&self) -> (usize, usize) {
        match self {
            Contract::Toy { image_size, .. } => (*image_size, *image_size),
            Contract::Features { input_h, input_w, .. } => (*input_h, *input_w),
        }
    }

    /// `(c, h, w)` per scale.
    pub fn scale_shapes(&self) -> Vec<(usize, usize, usize)> {
        match self {
            Contract::Toy { image_size, toy } => toy
                .strides
                .iter()
                .map(|s| (toy.channels, image_size / s, image_size / s))
                .collect(),
            Contract::Features { scales, .. } => scales.iter().map(|s| (s.channels, s.h, s.w)).collect(),
        }
    }

    pub fn backbone_id(&self) -> &str {
        match self {
            Contract::Toy { .. } => TOY_BACKBONE_ID,
            Contract::Features { backbone_id, .. } => backbone_id,
        }
    }

    pub fn layer_ids(&self) -> Vec<i64> {
        match self {
            Contract::Toy { toy, .. } => (0..toy.strides.len() as i64).collect(),
            Contract::Features { scales, .. } => scales.iter().map(|s| s.layer_id).collect(),
        }
    }

    pub fn describe(&self) -> String {
        let shapes: Vec<String> = self
            .scale_shapes()
            .iter()
            .map(|(c, h, w)| format!("{c}x{h}x{w}"))
            .collect();
        let (h, w) = self.input_size();
        format!("{} input {h}x{w}, scales [{}]", self.backbone_id(), shapes.join(", "))
    }

    fn toy_extractor(&self) -> Option<ToyExtractor> {
        match self {
            Contract::Toy { toy, .. } => ToyExtractor::new(toy.clone()).ok(),
            Contract::Features { .. } => None,
        }
    }

    /// Feature stack for one image file under a toy contract.
    pub fn stack_from_image(&self, path: &Path) -> CliResult<FeatureStack<f32>> {
        let Contract::Toy { image_size, .. } = self else {
            return Err(CliError::usage(format!(
                "image inputs need a toy checkpoint; this one expects {}",
                self.describe()
            )));
        };
        let img = load_image::<f32>(path, Some((*image_size, *image_size)))?;
        Ok(self.toy_extractor().expect("toy contract").extract(&img)?)
    }
}

/// A labeled test image.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub anomalous: bool,
    pub mask: Option<PathBuf>,
}

pub enum Dataset {
    Features {
        root: PathBuf,
        manifest: DatasetManifest,
    },
    Images {
        folder: ImageFolder,
        image_size: usize,
        extractor: ToyExtractor,
    },
}

impl Dataset {
    /// Opens a feature root (with `manifest.json`) or an image folder root
    /// (with `train/good`). An image folder uses the contract's toy settings
    /// when one is given, otherwise the run config's.
    pub fn open(root: &Path, contract: Option<&Contract>, cfg: &RunConfig) -> CliResult<Dataset> {
        if !root.exists() {
            return Err(Error::MissingFile(root.to_path_buf()).into());
        }
        let manifest_path = root.join(MANIFEST_FILE);
        let dataset = if manifest_path.exists() {
            Dataset::Features {
                root: root.to_path_buf(),
                manifest: DatasetManifest::load(root)?,
            }
        } else if root.join("train").join("good").is_dir() {
            let (image_size, toy) = match contract {
                Some(Contract::Toy { image_size, toy }) => (*image_size, toy.clone()),
                _ => (cfg.image_size, cfg.toy.clone()),
            };
            Dataset::Images {
                folder: ImageFolder::scan(root)?,
                image_size,
                extractor: ToyExtractor::new(toy)?,
            }
        } else {
            return Err(Error::MissingFile(manifest_path).into());
        };
        if let Some(expected) = contract {
            let found = dataset.contract();
            if &found != expected {
                return Err(CliError::data(format!(
                    "checkpoint expects {} but dataset {} provides {}",
                    expected.describe(),
                    root.display(),
                    found.describe()
                )));
            }
        }
        Ok(dataset)
    }

    pub fn contract(&self) -> Contract {
        match self {
            Dataset::Features { manifest, .. } => Contract::Features {
                backbone_id: manifest.backbone_id.clone(),
                input_h: manifest.input_h,
                input_w: manifest.input_w,
                scales: manifest.scales.clone(),
            },
            Dataset::Images {
                image_size, extractor, ..
            } => Contract::Toy {
                image_size: *image_size,
                toy: extractor.config().clone(),
            },
        }
    }

    pub fn root(&self) -> &Path {
        match self {
            Dataset::Features { root, .. } => root,
            Dataset::Images { folder, .. } => &folder.root,
        }
    }

    pub fn category(&self, cfg: &RunConfig) -> String {
        if let Some(c) = &cfg.category {
            return c.clone();
        }
        self.root()
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("dataset")
            .to_string()
    }

    pub fn train_ids(&self) -> Vec<String> {
        match self {
            Dataset::Features { manifest, .. } => manifest.train.clone(),
            Dataset::Images { folder, .. } => folder.train.iter().map(|e| e.id.clone()).collect(),
        }
    }

    pub fn test_samples(&self) -> Vec<Sample> {
        match self {
            Dataset::Features { root, manifest } => manifest
                .test
                .iter()
                .map(|t| Sample {
                    id: t.id.clone(),
                    anomalous: t.label != 0,
                    mask: t.mask.as_ref().map(|m| root.join(m)),
                })
                .collect(),
            Dataset::Images { folder, .. } => folder
                .test
                .iter()
                .map(|e| Sample {
                    id: e.id.clone(),
                    anomalous: e.anomalous,
                    mask: e.mask.clone(),
                })
                .collect(),
        }
    }

    fn entry(&self, id: &str) -> CliResult<&ImageEntry> {
        match self {
            Dataset::Images { folder, .. } => folder
                .train
                .iter()
                .chain(&folder.test)
                .find(|e| e.id == id)
                .ok_or_else(|| CliError::usage(format!("no image {id:?} in {}", folder.root.display()))),
            Dataset::Features { .. } => unreachable!("feature datasets have no image entries"),
        }
    }

    /// Raw image of an image-folder dataset, resized to the contract size.
    pub fn load_image(&self, id: &str) -> CliResult<Tensor4<f32>> {
        let Dataset::Images { image_size, .. } = self else {
            return Err(CliError::usage("raw images are only available for image-folder datasets"));
        };
        Ok(load_entry(self.entry(id)?, Some((*image_size, *image_size)))?)
    }

    pub fn load_stack(&self, id: &str) -> CliResult<FeatureStack<f32>> {
        match self {
            Dataset::Features { root, manifest } => Ok(load_feature_stack(root, id, manifest)?),
            Dataset::Images { extractor, .. } => Ok(extractor.extract(&self.load_image(id)?)?),
        }
    }

    /// Ground-truth pixel labels at `(h, w)`; all false without a mask.
    pub fn mask(&self, sample: &Sample, h: usize, w: usize) -> CliResult<Vec<bool>> {
        let entry = ImageEntry {
            id: sample.id.clone(),
            path: PathBuf::new(),
            anomalous: sample.anomalous,
            mask: sample.mask.clone(),
        };
        Ok(load_mask(&entry, h, w)?)
    }
}

/// One checkpoint per scale, loaded together.
pub struct CheckpointSet {
    pub models: Vec<FlowModel<f32>>,
    pub states: Vec<Option<TrainState<f32>>>,
    pub contract: Contract,
}

pub fn checkpoint_file(dir: &Path, scale: usize) -> PathBuf {
    dir.join(format!("scale{scale}.ffck"))
}

/// Loads a single `.ffck` file, a `checkpoints` directory, or a run
/// directory containing one.
pub fn load_checkpoints(path: &Path) -> CliResult<CheckpointSet> {
    let files: Vec<PathBuf> = if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        let dir = if path.join("checkpoints").is_dir() {
            path.join("checkpoints")
        } else {
            path.to_path_buf()
        };
        let first = checkpoint_file(&dir, 0);
        if !first.exists() {
            return Err(Error::MissingFile(first).into());
        }
        (0..)
            .map(|k| checkpoint_file(&dir, k))
            .take_while(|p| p.exists())
            .collect()
    };

    let mut models = Vec::new();
    let mut states = Vec::new();
    let mut contract: Option<Contract> = None;
    let mut last_scale = 0;
    for (k, file) in files.iter().enumerate() {
        let ck = load_checkpoint::<f32>(file)?;
        let bad = |what: &str| CliError::data(format!("{}: {what}", file.display()));
        let c: Contract = serde_json::from_value(ck.extra["contract"].clone())
            .map_err(|e| bad(&format!("checkpoint has no usable input contract ({e})")))?;
        let n_scales = ck.extra["n_scales"].as_u64().ok_or_else(|| bad("checkpoint has no n_scales"))? as usize;
        let scale = ck.extra["scale"].as_u64().ok_or_else(|| bad("checkpoint has no scale index"))? as usize;
        if scale != k {
            return Err(bad(&format!("holds scale {scale}, expected {k}")));
        }
        if files.len() > 1 && n_scales != files.len() {
            return Err(bad(&format!("belongs to a {n_scales}-scale set but {} files were found", files.len())));
        }
        if let Some(prev) = &contract {
            if prev != &c {
                return Err(bad("input contract differs from scale 0"));
            }
        }
        let (ch, _, _) = *c
            .scale_shapes()
            .get(scale)
            .ok_or_else(|| bad(&format!("scale {scale} outside its {}-scale contract", c.n_scales())))?;
        if ck.model.channels() != ch {
            return Err(bad(&format!("model has {} channels, contract says {ch}", ck.model.channels())));
        }
        contract = Some(c);
        last_scale = scale;
        models.push(ck.model);
        states.push(ck.state);
    }
    let contract = contract.expect("at least one checkpoint");
    if models.len() != contract.n_scales() {
        return Err(CliError::usage(format!(
            "{} holds scale {last_scale} of a {}-scale set; pass the checkpoint directory",
            path.display(),
            contract.n_scales()
        )));
    }
    Ok(CheckpointSet {
        models,
        states,
        contract,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_contract_shapes() {
        let c = Contract::Toy {
            image_size: 64,
            toy: ToyExtractorConfig::default(),
        };
        assert_eq!(c.n_scales(), 3);
        assert_eq!(c.scale_shapes(), vec![(16, 16, 16), (16, 8, 8), (16, 4, 4)]);
        assert_eq!(c.input_size(), (64, 64));
        let json = serde_json::to_value(&c).unwrap();
        assert_eq!(json["kind"], "toy");
        assert_eq!(serde_json::from_value::<Contract>(json).unwrap(), c);
    }

    #[test]
    fn missing_roots_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let e = Dataset::open(&dir.path().join("nope"), None, &cfg).err().unwrap();
        assert_eq!(e.code, 2);
        assert!(e.message.contains("nope"));
        let e = Dataset::open(dir.path(), None, &cfg).err().unwrap();
        assert!(e.message.contains(MANIFEST_FILE), "{}", e.message);
        let e = load_checkpoints(dir.path()).err().unwrap();
        assert!(e.message.contains("scale0.ffck"));
    }
}
