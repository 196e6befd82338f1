//! One flow per feature scale: training, scoring and evaluation glue.

use crate::error::{Error, Result};
use crate::eval::{auroc, pixel_auroc, CategoryResult, ScoreKind, ScoredSet};
use crate::features::FeatureStack;
use crate::flow::FlowModel;
use crate::scoring::{score_stack, AnomalyMap, ScoringConfig};
use crate::tensor::{Scalar, Tensor4};
use crate::train::{fit_resume, EpochRecord, TensorDataset, TrainConfig, TrainState};

/// Regroups image-major stacks into one list of `(1, c, h, w)` items per scale.
pub fn split_scales<T: Scalar>(stacks: &[FeatureStack<T>]) -> Result<Vec<Vec<Tensor4<T>>>> {
    let first = stacks
        .first()
        .ok_or_else(|| Error::invalid("no training feature stacks"))?;
    let n_scales = first.scales().len();
    let mut out = vec![Vec::new(); n_scales];
    for stack in stacks {
        if stack.scales().len() != n_scales {
            return Err(Error::shape(format!(
                "stacks disagree on scale count: {} vs {n_scales}",
                stack.scales().len()
            )));
        }
        for (k, t) in stack.scales().iter().enumerate() {
            for i in 0..t.shape().n {
                out[k].push(t.item(i));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedScale<T> {
    pub model: FlowModel<T>,
    pub history: Vec<f64>,
}

/// Trains an independent flow for each scale, seeded per scale.
pub fn train_scales<T: Scalar>(
    per_scale: Vec<Vec<Tensor4<T>>>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, &EpochRecord),
) -> Result<Vec<TrainedScale<T>>> {
    let mut out = Vec::with_capacity(per_scale.len());
    for (k, items) in per_scale.into_iter().enumerate() {
        let channels = items
            .first()
            .ok_or_else(|| Error::invalid(format!("scale {k} has no training items")))?
            .shape()
            .c;
        let mut model = FlowModel::init(cfg.flow_config_for_scale(channels, k))?;
        let data = TensorDataset::new(items, cfg.augment.clone())?;
        let mut state = TrainState::new(&model);
        let history = fit_resume(&mut model, &mut state, &data, cfg, &mut |r| on_epoch(k, r))?;
        out.push(TrainedScale { model, history });
    }
    Ok(out)
}

/// A scored test image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMap {
    pub map: AnomalyMap,
    pub anomalous: bool,
    /// Pixel labels at map resolution, if ground truth exists.
    pub mask: Option<Vec<bool>>,
}

pub fn score_image<T: Scalar>(
    models: &[FlowModel<T>],
    stack: &FeatureStack<T>,
    scoring: &ScoringConfig,
) -> Result<AnomalyMap> {
    if stack.batch() != 1 {
        return Err(Error::shape(format!("expected one image, got a batch of {}", stack.batch())));
    }
    Ok(score_stack(models, stack, scoring)?.swap_remove(0))
}

/// Image-level AUROC, plus pixel-level AUROC over images that carry masks
/// (normal images without a mask count as all-normal pixels).
pub fn evaluate(category: &str, results: &[LabeledMap]) -> Result<CategoryResult> {
    let scores = results.iter().map(|r| r.map.image_score()).collect();
    let labels = results.iter().map(|r| r.anomalous).collect();
    let image_auroc = auroc(&ScoredSet::new(scores, labels, ScoreKind::Image)?)?;
    let has_masks = results.iter().any(|r| r.mask.is_some());
    let pixel = if has_masks {
        let maps: Vec<AnomalyMap> = results.iter().map(|r| r.map.clone()).collect();
        let masks: Vec<Vec<bool>> = results
            .iter()
            .map(|r| {
                r.mask
                    .clone()
                    .unwrap_or_else(|| vec![false; r.map.height() * r.map.width()])
            })
            .collect();
        Some(pixel_auroc(&maps, &masks)?)
    } else {
        None
    };
    Ok(CategoryResult {
        category: category.to_string(),
        image_auroc,
        pixel_auroc: pixel,
    })
}
