//! Image-folder datasets laid out as `train/good`, `test/<defect>` and
//! `ground_truth/<defect>/<stem>_mask.png`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::image::load_image;
use crate::tensor::{Scalar, Tensor4};

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageEntry {
    /// Path relative to the dataset root without extension, e.g. `test/crack/000`.
    pub id: String,
    pub path: PathBuf,
    pub anomalous: bool,
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFolder {
    pub root: PathBuf,
    pub train: Vec<ImageEntry>,
    pub test: Vec<ImageEntry>,
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

impl ImageFolder {
    pub fn scan(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let good = root.join("train").join("good");
        if !good.is_dir() {
            return Err(Error::MissingFile(good));
        }
        let train = list_images(&good)?
            .into_iter()
            .map(|path| ImageEntry {
                id: format!("train/good/{}", stem(&path)),
                path,
                anomalous: false,
                mask: None,
            })
            .collect();

        let mut test = Vec::new();
        let test_dir = root.join("test");
        if test_dir.is_dir() {
            let mut kinds: Vec<PathBuf> = fs::read_dir(&test_dir)
                .map_err(|e| Error::io(&test_dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            kinds.sort();
            for kind_dir in kinds {
                let kind = kind_dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                let anomalous = kind != "good";
                for path in list_images(&kind_dir)? {
                    let s = stem(&path);
                    let mask = anomalous
                        .then(|| root.join("ground_truth").join(&kind).join(format!("{s}_mask.png")))
                        .filter(|m| m.exists());
                    test.push(ImageEntry {
                        id: format!("test/{kind}/{s}"),
                        path,
                        anomalous,
                        mask,
                    });
                }
            }
        }
        Ok(ImageFolder { root, train, test })
    }

    /// Category name, taken from the root directory.
    pub fn category(&self) -> String {
        self.root
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("dataset")
            .to_string()
    }
}

pub fn load_entry<T: Scalar>(entry: &ImageEntry, size: Option<(usize, usize)>) -> Result<Tensor4<T>> {
    load_image(&entry.path, size)
}

/// Ground-truth mask resized to `(h, w)`; all false when there is none.
pub fn load_mask(entry: &ImageEntry, h: usize, w: usize) -> Result<Vec<bool>> {
    match &entry.mask {
        Some(path) => {
            let m = load_image::<f64>(path, Some((h, w)))?;
            Ok(m.plane(0, 0).iter().map(|&v| v >= 0.5).collect())
        }
        None => Ok(vec![false; h * w]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn scans_synthetic_folder() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            size: 32,
            n_train: 4,
            n_test_good: 2,
            n_test_defect: 3,
            ..Default::default()
        };
        let set = generate(&cfg).unwrap();
        set.write_image_folder(dir.path()).unwrap();
        let folder = ImageFolder::scan(dir.path()).unwrap();
        assert_eq!(folder.train.len(), 4);
        assert_eq!(folder.test.len(), 5);
        assert_eq!(folder.test.iter().filter(|e| e.anomalous).count(), 3);
        assert!(folder.test.iter().filter(|e| e.anomalous).all(|e| e.mask.is_some()));

        let blob = folder.test.iter().find(|e| e.id == "test/blob/000").unwrap();
        let mask = load_mask(blob, 32, 32).unwrap();
        let expected = set.test.iter().find(|s| s.defect.map(|d| d.name()) == Some("blob")).unwrap();
        assert_eq!(&mask, expected.mask.as_ref().unwrap());
        let img = load_entry::<f32>(&folder.train[0], None).unwrap();
        assert_eq!(img.shape().h, 32);
    }

    #[test]
    fn missing_train_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ImageFolder::scan(dir.path()), Err(Error::MissingFile(_))));
    }
}
