//! Feature acquisition: the tensor file format shared with external
//! backbone exporters, dataset manifests, image loading, and a frozen
//! random-projection extractor for self-contained runs.

pub mod format;
pub mod image;
pub mod manifest;
pub mod toy;

pub use format::{load_tensor, load_tensor_any, save_tensor, AnyTensor, TensorMeta};
pub use manifest::{load_feature_stack, DatasetManifest, ScaleSpec, TestEntry};
pub use toy::{ToyExtractor, ToyExtractorConfig};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Backbone families differ in how many pyramid levels they contribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneFamily {
    /// Vision transformers: exactly one feature layer.
    Transformer,
    /// Convolutional pyramids: up to three stages.
    Pyramid,
}

impl BackboneFamily {
    pub fn of(backbone_id: &str) -> Self {
        let id = backbone_id.to_ascii_lowercase();
        if ["vit", "deit", "cait"].iter().any(|p| id.starts_with(p)) {
            BackboneFamily::Transformer
        } else {
            BackboneFamily::Pyramid
        }
    }

    pub fn max_scales(self) -> usize {
        match self {
            BackboneFamily::Transformer => 1,
            BackboneFamily::Pyramid => 3,
        }
    }
}

/// Feature tensors for a batch of images, one per pyramid scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack<T> {
    scales: Vec<Tensor4<T>>,
    input_h: usize,
    input_w: usize,
    backbone_id: String,
    layer_ids: Vec<i64>,
}

impl<T: Scalar> FeatureStack<T> {
    pub fn new(
        scales: Vec<Tensor4<T>>,
        input_h: usize,
        input_w: usize,
        backbone_id: impl Into<String>,
        layer_ids: Vec<i64>,
    ) -> Result<Self> {
        let backbone_id = backbone_id.into();
        let first = scales
            .first()
            .ok_or_else(|| Error::invalid("feature stack needs at least one scale"))?;
        if let Some(bad) = scales.iter().find(|s| s.shape().n != first.shape().n) {
            return Err(Error::shape(format!(
                "scales disagree on batch size: {} vs {}",
                first.shape(),
                bad.shape()
            )));
        }
        if layer_ids.len() != scales.len() {
            return Err(Error::invalid(format!(
                "{} layer ids for {} scales",
                layer_ids.len(),
                scales.len()
            )));
        }
        let family = BackboneFamily::of(&backbone_id);
        if family == BackboneFamily::Transformer && scales.len() != 1 {
            return Err(Error::invalid(format!(
                "transformer backbone {backbone_id} must provide exactly one scale, got {}",
                scales.len()
            )));
        }
        if scales.len() > family.max_scales() {
            return Err(Error::invalid(format!(
                "backbone {backbone_id} provides at most {} scales, got {}",
                family.max_scales(),
                scales.len()
            )));
        }
        for s in &scales {
            let sh = s.shape();
            if sh.h > input_h || sh.w > input_w {
                return Err(Error::shape(format!(
                    "feature map {sh} larger than input {input_h}x{input_w}"
                )));
            }
        }
        Ok(FeatureStack {
            scales,
            input_h,
            input_w,
            backbone_id,
            layer_ids,
        })
    }

    pub fn scales(&self) -> &[Tensor4<T>] {
        &self.scales
    }

    pub fn into_scales(self) -> Vec<Tensor4<T>> {
        self.scales
    }

    pub fn input_h(&self) -> usize {
        self.input_h
    }

    pub fn input_w(&self) -> usize {
        self.input_w
    }

    pub fn backbone_id(&self) -> &str {
        &self.backbone_id
    }

    pub fn layer_ids(&self) -> &[i64] {
        &self.layer_ids
    }

    pub fn batch(&self) -> usize {
        self.scales[0].shape().n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn families() {
        assert_eq!(BackboneFamily::of("cait_m48_448"), BackboneFamily::Transformer);
        assert_eq!(BackboneFamily::of("deit_base_distilled_patch16_384"), BackboneFamily::Transformer);
        assert_eq!(BackboneFamily::of("resnet18"), BackboneFamily::Pyramid);
        assert_eq!(BackboneFamily::of("toy"), BackboneFamily::Pyramid);
    }

    #[test]
    fn stack_validation() {
        let t = |n, h| Tensor4::<f32>::zeros(Shape4::new(n, 4, h, h));
        assert!(FeatureStack::new(vec![t(1, 8), t(1, 4)], 32, 32, "toy", vec![0, 1]).is_ok());
        assert!(FeatureStack::new(vec![t(1, 8), t(2, 4)], 32, 32, "toy", vec![0, 1]).is_err());
        assert!(FeatureStack::new(vec![t(1, 8), t(1, 4)], 32, 32, "cait", vec![0, 1]).is_err());
        assert!(FeatureStack::new(vec![t(1, 8); 4], 32, 32, "toy", vec![0; 4]).is_err());
        assert!(FeatureStack::<f32>::new(vec![], 32, 32, "toy", vec![]).is_err());
        assert!(FeatureStack::new(vec![t(1, 64)], 32, 32, "toy", vec![0]).is_err());
    }
}
