//! Weakly supervised two-stream detector head.
//!
//! Each region gets a classification distribution over classes and a
//! localization distribution over regions; their elementwise product is the
//! region's detection score and the column sums form the image-level
//! prediction trained against image labels.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{nms, BBox};
use crate::nn::{Graph, Tensor, Var};
use crate::strong::Detection;

pub const LOG_CLAMP_EPS: f64 = 1e-7;

/// Image-level presence vector, one entry per class, each 0 or 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageLabel(Vec<f64>);

impl ImageLabel {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return invalid(format!("image label component {v} is not 0 or 1"));
        }
        Ok(ImageLabel(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }

    pub fn is_positive(&self, c: usize) -> bool {
        self.0[c] == 1.0
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.0.len()).filter(|&c| self.is_positive(c))
    }
}

/// Scores of one forward pass: all matrices are `B_W x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakScores {
    pub cls: Tensor,
    pub loc: Tensor,
    pub p: Tensor,
    pub y_hat: Vec<f64>,
}

impl WeakScores {
    pub fn n_regions(&self) -> usize {
        self.p.shape[0]
    }

    pub fn n_classes(&self) -> usize {
        self.p.shape[1]
    }
}

/// Graph handles of the weak head.
#[derive(Debug, Clone, Copy)]
pub struct WeakOutput {
    pub cls: Var,
    pub loc: Var,
    pub p: Var,
    pub y_hat: Var,
}

impl WeakOutput {
    pub fn scores(&self, g: &Graph) -> WeakScores {
        WeakScores {
            cls: g.value(self.cls).clone(),
            loc: g.value(self.loc).clone(),
            p: g.value(self.p).clone(),
            y_hat: g.value(self.y_hat).data.clone(),
        }
    }
}

/// Two-stream scoring from per-stream logits (`B_W x C` each): softmax over
/// classes for the classification stream, over regions for the localization
/// stream, product, then sum over regions.
pub fn score_regions(g: &mut Graph, cls_logits: Var, loc_logits: Var) -> Result<WeakOutput> {
    let (regions, _) = g.value(cls_logits).as_matrix()?;
    if regions == 0 || g.value(cls_logits).rank() != 2 {
        return Err(Error::EmptyProposals);
    }
    let cls = g.softmax(cls_logits, 1)?;
    let loc = g.softmax(loc_logits, 0)?;
    let p = g.mul(cls, loc)?;
    let y_hat = g.sum_axis0(p)?;
    Ok(WeakOutput { cls, loc, p, y_hat })
}

/// Multi-label binary cross-entropy between the image prediction and the
/// label, predictions clamped to `[eps, 1 - eps]`.
pub fn image_classification_loss(g: &mut Graph, y_hat: Var, y: &ImageLabel) -> Result<Var> {
    let n = g.value(y_hat).len();
    if n != y.n_classes() {
        return invalid(format!("{} predictions for {} label classes", n, y.n_classes()));
    }
    g.bce(y_hat, y.values().to_vec(), vec![1.0; n], LOG_CLAMP_EPS)
}

/// Value-only counterpart of [`image_classification_loss`].
pub fn image_classification_loss_value(y_hat: &[f64], y: &ImageLabel) -> f64 {
    y_hat
        .iter()
        .zip(y.values())
        .map(|(&p, &t)| {
            let q = p.clamp(LOG_CLAMP_EPS, 1.0 - LOG_CLAMP_EPS);
            -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
        })
        .sum()
}

/// One-hot pseudo targets: the top-scoring region of every positive class.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxoutTargets {
    /// `B_W x C`, 1 at `(selected[c], c)` for positive classes, else 0.
    pub p_hat: Tensor,
    /// `(class, region)` for every positive class, in class order.
    pub selected: Vec<(usize, usize)>,
}

impl MaxoutTargets {
    pub fn weight(&self, region: usize, class: usize) -> f64 {
        self.p_hat.at(region, class)
    }

    /// Class whose max-out region is `region`, if any (lowest class first).
    pub fn class_of(&self, region: usize) -> Option<usize> {
        self.selected.iter().find(|(_, j)| *j == region).map(|(c, _)| *c)
    }
}

/// Max-out selection over a `B_W x C` score matrix. Ties go to the lowest
/// region index. The result is a constant: it carries no gradient.
pub fn maxout(p: &Tensor, y: &ImageLabel) -> Result<MaxoutTargets> {
    let (regions, classes) = p.as_matrix()?;
    if classes != y.n_classes() {
        return invalid(format!("score matrix has {classes} classes, label has {}", y.n_classes()));
    }
    if !p.is_finite() {
        return invalid("non-finite detection scores");
    }
    let mut p_hat = Tensor::zeros(&[regions, classes]);
    let mut selected = Vec::new();
    if regions == 0 {
        return Ok(MaxoutTargets { p_hat, selected });
    }
    for c in y.positives() {
        let mut best = 0;
        for j in 1..regions {
            if p.at(j, c) > p.at(best, c) {
                best = j;
            }
        }
        p_hat.data[best * classes + c] = 1.0;
        selected.push((c, best));
    }
    Ok(MaxoutTargets { p_hat, selected })
}

/// Detections of the weak detector: every proposal box with its per-class
/// score `p_jc`, filtered by `score_threshold` and suppressed per class.
/// Boxes are the raw proposals.
pub fn weak_detections(
    boxes: &[BBox],
    p: &Tensor,
    score_threshold: f64,
    nms_threshold: f64,
) -> Result<Vec<Detection>> {
    let (regions, classes) = p.as_matrix()?;
    if regions != boxes.len() {
        return invalid(format!("{} boxes for {regions} score rows", boxes.len()));
    }
    let mut out = Vec::new();
    for c in 0..classes {
        let kept: Vec<usize> = (0..regions).filter(|&j| p.at(j, c) >= score_threshold).collect();
        let kb: Vec<BBox> = kept.iter().map(|&j| boxes[j]).collect();
        let ks: Vec<f64> = kept.iter().map(|&j| p.at(j, c)).collect();
        for k in nms(&kb, &ks, nms_threshold)? {
            out.push(Detection { bbox: kb[k], class: c, score: ks[k] });
        }
    }
    Ok(out)
}
