//! Region-based strong detector: anchor proposals with learned objectness,
//! per-proposal classification with a background class, and class-wise box
//! regression.

use crate::consistency::{smooth_l1, smooth_l1_grad};
use crate::error::{invalid, Result};
use crate::geometry::{decode_delta, nms, score_order, BBox, Delta};
use crate::nn::{CustomOp, Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    /// Feature-map stride in image pixels.
    pub stride: f64,
    /// Square anchor side lengths, in image pixels at scale 1.
    pub scales: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig { stride: 4.0, scales: vec![14.0, 22.0] }
    }
}

/// One anchor per scale per feature cell, in scan order `(y, x, scale)`,
/// clipped to the image.
pub fn anchor_grid(
    feat_h: usize,
    feat_w: usize,
    cfg: &AnchorConfig,
    image_h: f64,
    image_w: f64,
) -> Vec<BBox> {
    let mut out = Vec::with_capacity(feat_h * feat_w * cfg.scales.len());
    for y in 0..feat_h {
        for x in 0..feat_w {
            let (cx, cy) = ((x as f64 + 0.5) * cfg.stride, (y as f64 + 0.5) * cfg.stride);
            for &s in &cfg.scales {
                let side = s;
                let b = BBox { x1: cx - side / 2.0, y1: cy - side / 2.0, x2: cx + side / 2.0, y2: cy + side / 2.0 };
                out.push(b.clip(image_w, image_h).expect("anchor centers lie inside the image"));
            }
        }
    }
    out
}

/// Objectness of anchor `k` (scan order) from a `[A, H, W]` map.
pub fn anchor_objectness(map: &Tensor) -> Vec<f64> {
    let (a, h, w) = (map.shape[0], map.shape[1], map.shape[2]);
    let mut out = Vec::with_capacity(a * h * w);
    for y in 0..h {
        for x in 0..w {
            for s in 0..a {
                out.push(map.data[(s * h + y) * w + x]);
            }
        }
    }
    out
}

/// Flat position in the `[A, H, W]` map of anchor `k` (scan order).
pub fn anchor_map_index(k: usize, a: usize, h: usize, w: usize) -> usize {
    let s = k % a;
    let cell = k / a;
    let (y, x) = (cell / w, cell % w);
    debug_assert!(y < h);
    (s * h + y) * w + x
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalConfig {
    pub pre_nms_top_k: usize,
    pub nms_threshold: f64,
    pub max_proposals: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig { pre_nms_top_k: 128, nms_threshold: 0.7, max_proposals: 32 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub boxes: Vec<BBox>,
    pub objectness: Vec<f64>,
    /// Index of each proposal in the anchor list.
    pub anchor_index: Vec<usize>,
}

impl ProposalSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Top-K anchors by objectness (scan order on ties), then NMS, then the
/// proposal cap.
pub fn generate_proposals(anchors: &[BBox], objectness: &[f64], cfg: &ProposalConfig) -> Result<ProposalSet> {
    if anchors.len() != objectness.len() {
        return invalid(format!("{} anchors but {} objectness scores", anchors.len(), objectness.len()));
    }
    let top: Vec<usize> = score_order(objectness).into_iter().take(cfg.pre_nms_top_k).collect();
    let boxes: Vec<BBox> = top.iter().map(|&k| anchors[k]).collect();
    let scores: Vec<f64> = top.iter().map(|&k| objectness[k]).collect();
    let keep = nms(&boxes, &scores, cfg.nms_threshold)?;
    let chosen: Vec<usize> = keep.into_iter().take(cfg.max_proposals).map(|i| top[i]).collect();
    Ok(ProposalSet {
        boxes: chosen.iter().map(|&k| anchors[k]).collect(),
        objectness: chosen.iter().map(|&k| objectness[k]).collect(),
        anchor_index: chosen,
    })
}

/// Objectness pseudo targets from reference boxes: IoU above `pos` is
/// positive, below `neg` negative, others ignored (weight 0). Positives and
/// negatives are each normalized to unit total weight.
pub fn objectness_targets(anchors: &[BBox], refs: &[BBox], pos: f64, neg: f64) -> (Vec<f64>, Vec<f64>) {
    let best: Vec<f64> = anchors
        .iter()
        .map(|a| refs.iter().map(|r| a.iou_unchecked(r)).fold(0.0, f64::max))
        .collect();
    let n_pos = best.iter().filter(|&&o| o > pos).count();
    let n_neg = best.iter().filter(|&&o| o < neg).count();
    let mut targets = vec![0.0; anchors.len()];
    let mut weights = vec![0.0; anchors.len()];
    for (k, &o) in best.iter().enumerate() {
        if o > pos {
            targets[k] = 1.0;
            weights[k] = 1.0 / n_pos as f64;
        } else if o < neg {
            weights[k] = 1.0 / n_neg as f64;
        }
    }
    (targets, weights)
}

/// Strong head outputs: `probs` is `B_S x (C + 1)` with background in the
/// last column, `deltas` is `B_S x 4C`.
#[derive(Debug, Clone, Copy)]
pub struct StrongOutput {
    pub probs: Var,
    pub deltas: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongPredictions {
    pub probs: Tensor,
    pub deltas: Tensor,
}

impl StrongPredictions {
    pub fn n_classes(&self) -> usize {
        self.probs.shape[1] - 1
    }

    pub fn delta(&self, proposal: usize, class: usize) -> Delta {
        Delta::from_slice(&self.deltas.row(proposal)[4 * class..4 * class + 4])
    }
}

impl StrongOutput {
    pub fn predictions(&self, g: &Graph) -> StrongPredictions {
        StrongPredictions { probs: g.value(self.probs).clone(), deltas: g.value(self.deltas).clone() }
    }
}

/// Classification softmax over `C + 1` outputs and raw regression outputs.
pub fn predict(g: &mut Graph, cls_logits: Var, reg_out: Var, n_classes: usize) -> Result<StrongOutput> {
    let (rows, width) = g.value(cls_logits).as_matrix()?;
    if width != n_classes + 1 {
        return invalid(format!("classifier width {width} for {n_classes} classes"));
    }
    if g.value(reg_out).shape != [rows, 4 * n_classes] {
        return invalid(format!("regression output shape {:?}", g.value(reg_out).shape));
    }
    let probs = if rows == 0 { cls_logits } else { g.softmax(cls_logits, 1)? };
    Ok(StrongOutput { probs, deltas: reg_out })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class: usize,
    pub score: f64,
}

/// Decode every (proposal, foreground class) pair, clip to the image, drop
/// scores below `score_threshold`, then run NMS per class.
pub fn detections_from_predictions(
    proposals: &[BBox],
    pred: &StrongPredictions,
    image_h: f64,
    image_w: f64,
    score_threshold: f64,
    nms_threshold: f64,
) -> Result<Vec<Detection>> {
    let n_fg = pred.n_classes();
    let mut out = Vec::new();
    for c in 0..n_fg {
        let mut boxes = Vec::new();
        let mut scores = Vec::new();
        for (i, p) in proposals.iter().enumerate() {
            let score = pred.probs.at(i, c);
            if score < score_threshold {
                continue;
            }
            let decoded = match decode_delta(p, &pred.delta(i, c)) {
                Ok(b) => b,
                Err(_) => continue,
            };
            if let Some(b) = decoded.clip(image_w, image_h) {
                boxes.push(b);
                scores.push(score);
            }
        }
        for k in nms(&boxes, &scores, nms_threshold)? {
            out.push(Detection { bbox: boxes[k], class: c, score: scores[k] });
        }
    }
    Ok(out)
}

/// Per-proposal supervision for training against fixed box labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProposalLabel {
    Foreground { class: usize, target: Delta },
    Background,
    Ignore,
}

struct DetectionLossOp {
    labels: Vec<ProposalLabel>,
    n_fg: usize,
    scale: f64,
}

impl DetectionLossOp {
    fn value(&self, probs: &Tensor, deltas: &Tensor) -> f64 {
        let eps = crate::weak::LOG_CLAMP_EPS;
        let mut loss = 0.0;
        for (i, l) in self.labels.iter().enumerate() {
            match l {
                ProposalLabel::Foreground { class, target } => {
                    loss -= probs.at(i, *class).clamp(eps, 1.0).ln();
                    let t = &deltas.row(i)[4 * class..4 * class + 4];
                    let diff: Vec<f64> = target.to_array().iter().zip(t).map(|(a, b)| a - b).collect();
                    loss += smooth_l1(&diff);
                }
                ProposalLabel::Background => loss -= probs.at(i, self.n_fg).clamp(eps, 1.0).ln(),
                ProposalLabel::Ignore => {}
            }
        }
        loss * self.scale
    }
}

impl CustomOp for DetectionLossOp {
    fn name(&self) -> &'static str {
        "detection_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>> {
        let (probs, deltas) = (inputs[0], inputs[1]);
        let eps = crate::weak::LOG_CLAMP_EPS;
        let k = grad_out[0] * self.scale;
        let mut gp = vec![0.0; probs.len()];
        let mut gd = vec![0.0; deltas.len()];
        let width = probs.shape[1];
        for (i, l) in self.labels.iter().enumerate() {
            let cls = match l {
                ProposalLabel::Foreground { class, target } => {
                    let base = i * deltas.shape[1] + 4 * class;
                    for (d, t) in target.to_array().iter().enumerate() {
                        gd[base + d] -= k * smooth_l1_grad(t - deltas.data[base + d]);
                    }
                    *class
                }
                ProposalLabel::Background => self.n_fg,
                ProposalLabel::Ignore => continue,
            };
            let p = probs.at(i, cls);
            if p > eps {
                gp[i * width + cls] -= k / p;
            }
        }
        vec![gp, gd]
    }
}

/// Cross-entropy over `C + 1` classes plus smooth-L1 regression on
/// foreground proposals, averaged over labeled proposals.
pub fn detection_loss(g: &mut Graph, out: &StrongOutput, labels: Vec<ProposalLabel>) -> Result<Var> {
    let (rows, width) = g.value(out.probs).as_matrix()?;
    if labels.len() != rows {
        return invalid(format!("{} labels for {rows} proposals", labels.len()));
    }
    let counted = labels.iter().filter(|l| !matches!(l, ProposalLabel::Ignore)).count();
    let op = DetectionLossOp { labels, n_fg: width - 1, scale: 1.0 / counted.max(1) as f64 };
    let v = op.value(g.value(out.probs), g.value(out.deltas));
    Ok(g.custom(&[out.probs, out.deltas], Tensor::scalar(v), Box::new(op)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{encode_delta, iou};
    use crate::nn::{grad_check, ParameterRegistry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Vec<BBox> {
        anchor_grid(4, 4, &AnchorConfig { stride: 8.0, scales: vec![8.0, 16.0] }, 32.0, 32.0)
    }

    /// Reference: sort everything, filter greedily, cap.
    fn proposals_oracle(anchors: &[BBox], obj: &[f64], cfg: &ProposalConfig) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..anchors.len()).collect();
        idx.sort_by(|&a, &b| obj[b].partial_cmp(&obj[a]).unwrap().then(a.cmp(&b)));
        idx.truncate(cfg.pre_nms_top_k);
        let mut kept: Vec<usize> = Vec::new();
        for k in idx {
            if kept.iter().all(|&j| iou(&anchors[j], &anchors[k]).unwrap() <= cfg.nms_threshold) {
                kept.push(k);
            }
        }
        kept.truncate(cfg.max_proposals);
        kept
    }

    #[test]
    fn anchors_are_scan_ordered_and_clipped() {
        let a = grid();
        assert_eq!(a.len(), 32);
        assert_eq!(a[0], BBox::new(0.0, 0.0, 8.0, 8.0).unwrap());
        assert_eq!(a[1], BBox::new(0.0, 0.0, 12.0, 12.0).unwrap());
        assert!(a.iter().all(|b| b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 32.0 && b.y2 <= 32.0));
        let map = Tensor::new(vec![2, 4, 4], (0..32).map(|v| v as f64).collect()).unwrap();
        let flat = anchor_objectness(&map);
        for k in 0..32 {
            assert_eq!(flat[k], map.data[anchor_map_index(k, 2, 4, 4)]);
        }
        assert_eq!(&flat[..4], &[0.0, 16.0, 1.0, 17.0]);
    }

    #[test]
    fn uniform_objectness_takes_scan_order() {
        let a = grid();
        let cfg = ProposalConfig { pre_nms_top_k: 32, nms_threshold: 1.0, max_proposals: 5 };
        let p = generate_proposals(&a, &[0.5; 32], &cfg).unwrap();
        assert_eq!(p.anchor_index, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn single_confident_anchor_ranks_first() {
        let a = grid();
        let mut obj = vec![0.0; 32];
        obj[17] = 1.0;
        let p = generate_proposals(&a, &obj, &ProposalConfig::default()).unwrap();
        assert_eq!(p.anchor_index[0], 17);
        assert_eq!(p.objectness[0], 1.0);
    }

    #[test]
    fn proposals_match_sort_filter_nms_oracle() {
        let a = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let obj: Vec<f64> = (0..32).map(|_| rng.gen()).collect();
            let cfg = ProposalConfig { pre_nms_top_k: rng.gen_range(4..32), nms_threshold: 0.5, max_proposals: 6 };
            let p = generate_proposals(&a, &obj, &cfg).unwrap();
            assert_eq!(p.anchor_index, proposals_oracle(&a, &obj, &cfg));
            assert!(p.len() <= 6);
        }
    }

    #[test]
    fn zero_weights_give_uniform_distributions() {
        let reg = ParameterRegistry::new();
        let mut g = Graph::new(&reg);
        for rows in [0usize, 1, 5] {
            let logits = g.constant(Tensor::zeros(&[rows, 4]));
            let reg_out = g.constant(Tensor::zeros(&[rows, 12]));
            let out = predict(&mut g, logits, reg_out, 3).unwrap();
            let pred = out.predictions(&g);
            assert_eq!(pred.probs.shape, vec![rows, 4]);
            assert_eq!(pred.deltas.shape, vec![rows, 12]);
            assert!(pred.probs.data.iter().all(|&v| v == 0.25));
        }
        let bad = g.constant(Tensor::zeros(&[2, 3]));
        let reg_out = g.constant(Tensor::zeros(&[2, 12]));
        assert!(predict(&mut g, bad, reg_out, 3).is_err());
    }

    #[test]
    fn zero_delta_emits_the_proposal() {
        let proposals = vec![BBox::new(2.0, 2.0, 10.0, 12.0).unwrap()];
        let pred = StrongPredictions {
            probs: Tensor::new(vec![1, 3], vec![0.7, 0.2, 0.1]).unwrap(),
            deltas: Tensor::zeros(&[1, 8]),
        };
        let d = detections_from_predictions(&proposals, &pred, 32.0, 32.0, 0.05, 0.6).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0], Detection { bbox: proposals[0], class: 0, score: 0.7 });
        for det in &d {
            let back = encode_delta(&proposals[0], &det.bbox).unwrap();
            let t = pred.delta(0, det.class);
            for (x, y) in back.to_array().iter().zip(t.to_array()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn coincident_decoded_boxes_are_suppressed() {
        let proposals = vec![BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), BBox::new(2.0, 2.0, 12.0, 12.0).unwrap()];
        // second proposal regresses onto the first
        let shift = encode_delta(&proposals[1], &proposals[0]).unwrap().to_array();
        let pred = StrongPredictions {
            probs: Tensor::new(vec![2, 2], vec![0.9, 0.1, 0.8, 0.2]).unwrap(),
            deltas: Tensor::new(vec![2, 4], [vec![0.0; 4], shift.to_vec()].concat()).unwrap(),
        };
        let d = detections_from_predictions(&proposals, &pred, 32.0, 32.0, 0.05, 0.6).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].score, 0.9);
    }

    #[test]
    fn detection_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut reg = ParameterRegistry::new();
        reg.register("logits", Tensor::new(vec![5, 3], (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap())
            .unwrap();
        reg.register("deltas", Tensor::new(vec![5, 8], (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap())
            .unwrap();
        let target = Delta { dx: 0.3, dy: -1.5, dw: 0.2, dh: 2.0 };
        let labels = vec![
            ProposalLabel::Foreground { class: 1, target },
            ProposalLabel::Background,
            ProposalLabel::Ignore,
            ProposalLabel::Foreground { class: 0, target },
            ProposalLabel::Background,
        ];
        let r = grad_check(
            &reg,
            |g| {
                let (l, d) = (g.param("logits")?, g.param("deltas")?);
                let out = predict(g, l, d, 2)?;
                detection_loss(g, &out, labels.clone())
            },
            1e-5,
            100,
            1,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn objectness_targets_split_by_overlap() {
        let anchors = vec![
            BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            BBox::new(1.0, 1.0, 11.0, 11.0).unwrap(),
            BBox::new(5.0, 0.0, 15.0, 10.0).unwrap(),
            BBox::new(30.0, 30.0, 40.0, 40.0).unwrap(),
        ];
        let refs = vec![BBox::new(0.0, 0.0, 10.0, 10.0).unwrap()];
        let (t, w) = objectness_targets(&anchors, &refs, 0.5, 0.3);
        assert_eq!(t, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(w, vec![0.5, 0.5, 0.0, 1.0]);
    }
}
