//! Latent tensors to per-pixel anomaly maps and image-level scores.
//!
//! The score of a feature location is its negated log-likelihood, summed
//! over channels. Maps are upsampled bilinearly to the input resolution, and
//! maps from several pyramid scales are averaged after upsampling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureStack;
use crate::flow::{FlowModel, LatentResult, LN_2PI};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Map-to-scalar aggregation for image-level scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ScoreAggregation {
    Max,
    /// Mean of the largest `percent`% of values (at least one value).
    TopK { percent: f64 },
}

impl Default for ScoreAggregation {
    fn default() -> Self {
        ScoreAggregation::Max
    }
}

impl fmt::Display for ScoreAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreAggregation::Max => f.write_str("max"),
            ScoreAggregation::TopK { percent } => write!(f, "topk:{percent}"),
        }
    }
}

impl FromStr for ScoreAggregation {
    type Err = Error;

    /// `max`, `topk` (1%), or `topk:<percent>`.
    fn from_str(s: &str) -> Result<Self> {
        let agg = match s.split_once(':') {
            None if s == "max" => ScoreAggregation::Max,
            None if s == "topk" => ScoreAggregation::TopK { percent: 1.0 },
            Some(("topk", p)) => ScoreAggregation::TopK {
                percent: p
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad top-k percent {p:?}")))?,
            },
            _ => return Err(Error::invalid(format!("unknown score aggregation {s:?}"))),
        };
        agg.validate()?;
        Ok(agg)
    }
}

impl ScoreAggregation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScoreAggregation::TopK { percent } if !(percent > 0.0 && percent <= 100.0) => Err(
                Error::invalid(format!("top-k percent must be in (0, 100], got {percent}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    /// Include the per-location log-det in the likelihood.
    pub include_logdet: bool,
    pub aggregation: ScoreAggregation,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            include_logdet: true,
            aggregation: ScoreAggregation::Max,
        }
    }
}

/// Per-pixel anomaly field at input resolution; higher is more anomalous.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    image_score: f64,
    raw_range: (f64, f64),
}

impl AnomalyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, agg: ScoreAggregation) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::shape(format!(
                "anomaly map {height}x{width} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("anomaly map contains non-finite values".into()));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let image_score = image_score(&values, agg);
        Ok(AnomalyMap {
            height,
            width,
            values,
            image_score,
            raw_range: (min, max),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn image_score(&self) -> f64 {
        self.image_score
    }

    pub fn raw_range(&self) -> (f64, f64) {
        self.raw_range
    }

    pub fn argmax(&self) -> (usize, usize) {
        let (i, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        (i / self.width, i % self.width)
    }

    /// Recomputes the image score under a different aggregation.
    pub fn with_aggregation(mut self, agg: ScoreAggregation) -> Self {
        self.image_score = image_score(&self.values, agg);
        self
    }

    pub fn to_tensor(&self) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, 1, self.height, self.width), self.values.clone())
            .expect("map dims are valid")
    }

    /// Per-map min-max normalization to 8-bit grayscale. A flat map is all zeros.
    pub fn to_gray8(&self) -> Vec<u8> {
        let (lo, hi) = self.raw_range;
        let span = hi - lo;
        self.values
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect()
    }
}

/// `ln p` per location: `-0.5 * sum_c z^2 - (c / 2) ln(2 pi) + logdet`.
pub fn loglik_map<T: Scalar>(result: &LatentResult<T>, include_logdet: bool) -> Tensor4<T> {
    let c = result.z.shape().c as f64;
    let base = result
        .z
        .square()
        .sum_over_channels()
        .scale(T::from_f64_lossy(-0.5))
        .add_scalar(T::from_f64_lossy(-0.5 * c * LN_2PI));
    if include_logdet {
        base.add(&result.logdet_map).expect("logdet map matches latent plane")
    } else {
        base
    }
}

/// Upsamples `-loglik` to `out_h x out_w`, one map per batch item.
pub fn anomaly_map<T: Scalar>(
    loglik: &Tensor4<T>,
    out_h: usize,
    out_w: usize,
    agg: ScoreAggregation,
) -> Result<Vec<AnomalyMap>> {
    let s = loglik.shape();
    if s.c != 1 {
        return Err(Error::shape(format!("log-likelihood map must have c = 1, got {s}")));
    }
    if out_h < s.h || out_w < s.w {
        return Err(Error::shape(format!(
            "output {out_h}x{out_w} is smaller than the feature map {}x{}",
            s.h, s.w
        )));
    }
    let up = loglik.cast::<f64>().scale(-1.0).bilinear_resize(out_h, out_w)?;
    (0..s.n)
        .map(|i| AnomalyMap::new(out_h, out_w, up.item(i).into_vec(), agg))
        .collect()
}

/// Pointwise mean of maps sharing one resolution.
pub fn fuse_scales(maps: &[AnomalyMap], agg: ScoreAggregation) -> Result<AnomalyMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("cannot fuse an empty list of maps"))?;
    if let Some(bad) = maps
        .iter()
        .find(|m| (m.height, m.width) != (first.height, first.width))
    {
        return Err(Error::shape(format!(
            "cannot fuse maps of {}x{} and {}x{}",
            first.height, first.width, bad.height, bad.width
        )));
    }
    let k = maps.len() as f64;
    let values = (0..first.values.len())
        .map(|i| maps.iter().map(|m| m.values[i]).sum::<f64>() / k)
        .collect();
    AnomalyMap::new(first.height, first.width, values, agg)
}

pub fn image_score(values: &[f64], agg: ScoreAggregation) -> f64 {
    match agg {
        ScoreAggregation::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ScoreAggregation::TopK { percent } => {
            let k = ((percent / 100.0 * values.len() as f64).round() as usize).clamp(1, values.len());
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            sorted[..k].iter().sum::<f64>() / k as f64
        }
    }
}

/// Scores every image of a feature stack with one model per scale and fuses
/// the per-scale maps at the stack's input resolution.
pub fn score_stack<T: Scalar>(
    models: &[FlowModel<T>],
    stack: &FeatureStack<T>,
    cfg: &ScoringConfig,
) -> Result<Vec<AnomalyMap>> {
    if models.len() != stack.scales().len() {
        return Err(Error::invalid(format!(
            "{} models for a stack of {} scales",
            models.len(),
            stack.scales().len()
        )));
    }
    let mut per_scale = Vec::with_capacity(models.len());
    for (model, feats) in models.iter().zip(stack.scales()) {
        let result = model.forward(feats)?;
        let ll = loglik_map(&result, cfg.include_logdet);
        per_scale.push(anomaly_map(&ll, stack.input_h(), stack.input_w(), cfg.aggregation)?);
    }
    (0..stack.batch())
        .map(|i| {
            let maps: Vec<AnomalyMap> = per_scale.iter().map(|s| s[i].clone()).collect();
            fuse_scales(&maps, cfg.aggregation)
        })
        .collect()
}
