//! Rank-based AUROC and per-category reports.
//!
//! AUROC is computed as the Mann-Whitney statistic: the probability that a
//! random anomalous score exceeds a random normal one, with ties counted as
//! one half. Tie groups are handled with integer counts, so the result is
//! the exact rational `(2 * wins + ties) / (2 * n_pos * n_neg)` rounded once.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::AnomalyMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Image,
    Pixel,
}

/// Scores with binary labels (`true` = anomalous).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
    kind: ScoreKind,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>, kind: ScoreKind) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Numerical("NaN score".into()));
        }
        Ok(ScoredSet { scores, labels, kind })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }
}

pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let n_pos = set.labels.iter().filter(|&&l| l).count() as u128;
    let n_neg = set.labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes, got {n_pos} anomalous and {n_neg} normal"
        )));
    }
    let mut order: Vec<usize> = (0..set.scores.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));

    // twice the Mann-Whitney U of the anomalous class
    let mut u2: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let v = set.scores[order[i]];
        let (mut pos, mut neg) = (0u128, 0u128);
        let mut j = i;
        // -0.0 and 0.0 compare equal and belong to one tie group
        while j < order.len() && set.scores[order[j]] == v {
            if set.labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        u2 += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Pools every pixel of every test image into one pixel-level set.
pub fn pixel_auroc(maps: &[AnomalyMap], masks: &[Vec<bool>]) -> Result<f64> {
    if maps.len() != masks.len() {
        return Err(Error::shape(format!(
            "{} maps but {} masks",
            maps.len(),
            masks.len()
        )));
    }
    let total: usize = maps.iter().map(|m| m.values().len()).sum();
    let mut scores = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (i, (m, mask)) in maps.iter().zip(masks).enumerate() {
        if m.values().len() != mask.len() {
            return Err(Error::shape(format!(
                "image {i}: map {}x{} has {} pixels, mask has {}",
                m.height(),
                m.width(),
                m.values().len(),
                mask.len()
            )));
        }
        scores.extend_from_slice(m.values());
        labels.extend_from_slice(mask);
    }
    auroc(&ScoredSet::new(scores, labels, ScoreKind::Pixel)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub category: String,
    pub image_auroc: f64,
    /// `None` when the category has no pixel ground truth.
    pub pixel_auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub categories: Vec<CategoryResult>,
    pub mean: CategoryResult,
}

pub fn eval_report(results: Vec<CategoryResult>) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::invalid("evaluation report needs at least one category"));
    }
    let n = results.len() as f64;
    let image = results.iter().map(|r| r.image_auroc).sum::<f64>() / n;
    let pixels: Vec<f64> = results.iter().filter_map(|r| r.pixel_auroc).collect();
    let pixel = (!pixels.is_empty()).then(|| pixels.iter().sum::<f64>() / pixels.len() as f64);
    Ok(EvalReport {
        categories: results,
        mean: CategoryResult {
            category: "mean".into(),
            image_auroc: image,
            pixel_auroc: pixel,
        },
    })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,image_auroc,pixel_auroc\n");
        for r in self.categories.iter().chain(std::iter::once(&self.mean)) {
            let px = r.pixel_auroc.map(|p| format!("{p:.6}")).unwrap_or_default();
            writeln!(out, "{},{:.6},{}", r.category, r.image_auroc, px).expect("string write");
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
