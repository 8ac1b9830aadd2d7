//! Finite-difference checks of the two training losses through the whole
//! network, on small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consistency::{consistency_loss, ConsistencyConfig, ConsistencyTargets};
use crate::data::Image;
use crate::error::Result;
use crate::geometry::{match_regions, BBox};
use crate::model::ModelConfig;
use crate::nn::{grad_check, GradCheckReport, Graph, ParameterRegistry};
use crate::weak::{image_classification_loss, maxout, ImageLabel};

pub const GRADCHECK_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LossCheck {
    pub instance: usize,
    /// `"weak"` for `L(D_W)`, `"strong"` for `L(D_S)`.
    pub loss: &'static str,
    pub report: GradCheckReport,
}

fn tiny_model(n_classes: usize) -> ModelConfig {
    ModelConfig { n_classes, channels: [3, 4, 4], fc_width: 8, ..ModelConfig::default() }
}

fn random_box(rng: &mut ChaCha8Rng, size: f64) -> BBox {
    let (w, h) = (rng.gen_range(4.0..10.0), rng.gen_range(4.0..10.0));
    let (x, y) = (rng.gen_range(0.0..size - w), rng.gen_range(0.0..size - h));
    BBox { x1: x, y1: y, x2: x + w, y2: y + h }
}

/// Check `L(D_W)` and `L(D_S)` gradients on `instances` random instances.
pub fn loss_gradient_checks(instances: usize, seed: u64) -> Result<Vec<LossCheck>> {
    let mut out = Vec::with_capacity(2 * instances);
    for inst in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(inst as u64));
        let n_classes = rng.gen_range(2..=4);
        let model = tiny_model(n_classes);
        let mut params: ParameterRegistry = model.init_params(rng.gen())?;
        for (_, p) in params.iter_mut() {
            for v in p.value.data.iter_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
        }
        let size = 16usize;
        let mut image = Image::new(size, size);
        for px in image.pixels.iter_mut() {
            *px = rng.gen();
        }
        let mut labels: Vec<f64> = (0..n_classes).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
        labels[rng.gen_range(0..n_classes)] = 1.0;
        let label = ImageLabel::new(labels)?;
        let weak_boxes: Vec<BBox> = (0..8).map(|_| random_box(&mut rng, size as f64)).collect();
        let proposals: Vec<BBox> = (0..6)
            .map(|k| {
                if k % 2 == 0 {
                    let b = weak_boxes[k];
                    let d = rng.gen_range(-0.5..0.5);
                    BBox { x1: (b.x1 + d).max(0.0), y1: b.y1, x2: (b.x2 + d).min(size as f64), y2: b.y2 }
                } else {
                    random_box(&mut rng, size as f64)
                }
            })
            .collect();

        let tensor = image.to_tensor();
        let weak_loss = |g: &mut Graph| {
            let fm = model.backbone(g, tensor.clone())?;
            let feats = model.region_features(g, fm, &weak_boxes)?;
            let w = model.weak_head(g, feats)?;
            image_classification_loss(g, w.y_hat, &label)
        };
        let report = grad_check(&params, weak_loss, GRADCHECK_EPSILON, 4, seed ^ inst as u64)?;
        out.push(LossCheck { instance: inst, loss: "weak", report });

        // max-out targets are constants for the strong loss
        let targets = {
            let mut g = Graph::new(&params);
            let fm = model.backbone(&mut g, tensor.clone())?;
            let feats = model.region_features(&mut g, fm, &weak_boxes)?;
            let w = model.weak_head(&mut g, feats)?;
            maxout(g.value(w.p), &label)?
        };
        let matches = match_regions(&proposals, &weak_boxes, 0.5)?;
        let cfg = ConsistencyConfig::default();
        let strong_loss = |g: &mut Graph| {
            let fm = model.backbone(g, tensor.clone())?;
            let feats = model.region_features(g, fm, &proposals)?;
            let s = model.strong_head(g, feats)?;
            let t = ConsistencyTargets { maxout: &targets, weak_boxes: &weak_boxes, proposals: &proposals, matches: &matches };
            Ok(consistency_loss(g, s.probs, s.deltas, &t, &cfg, None)?.0)
        };
        let report = grad_check(&params, strong_loss, GRADCHECK_EPSILON, 4, seed ^ inst as u64)?;
        out.push(LossCheck { instance: inst, loss: "strong", report });
    }
    Ok(out)
}
