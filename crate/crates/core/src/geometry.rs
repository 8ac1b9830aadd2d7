//! Axis-aligned box arithmetic: overlap, delta encoding, proposal matching
//! and greedy non-maximum suppression.
//!
//! Boxes use continuous corner coordinates; the area of `(x1, y1, x2, y2)` is
//! `(x2 - x1) * (y2 - y1)` with no `+1` pixel convention.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    /// Box from center and size.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !finite {
            return invalid(format!("non-finite box {self:?}"));
        }
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return invalid(format!("degenerate box {self:?}"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Clip to `[0, width] x [0, height]`; `None` when nothing with positive
    /// area remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        let b = BBox {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        };
        b.validate().ok().map(|_| b)
    }

    /// Mirror across the vertical center line of an image `width` pixels wide.
    pub fn flip_horizontal(&self, width: f64) -> BBox {
        BBox { x1: width - self.x2, y1: self.y1, x2: width - self.x1, y2: self.y2 }
    }

    pub fn scale(&self, factor: f64) -> BBox {
        BBox {
            x1: self.x1 * factor,
            y1: self.y1 * factor,
            x2: self.x2 * factor,
            y2: self.y2 * factor,
        }
    }

    fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Overlap ratio for boxes already known to be valid.
    pub(crate) fn iou_unchecked(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(a.iou_unchecked(b))
}

/// Box regression parameters of a target relative to a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Delta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl Delta {
    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_slice(v: &[f64]) -> Delta {
        Delta { dx: v[0], dy: v[1], dw: v[2], dh: v[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

pub fn encode_delta(proposal: &BBox, target: &BBox) -> Result<Delta> {
    proposal.validate()?;
    target.validate()?;
    let (pcx, pcy) = proposal.center();
    let (tcx, tcy) = target.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    Ok(Delta {
        dx: (tcx - pcx) / pw,
        dy: (tcy - pcy) / ph,
        dw: (target.width() / pw).ln(),
        dh: (target.height() / ph).ln(),
    })
}

/// Inverse of [`encode_delta`]. No clipping happens here.
pub fn decode_delta(proposal: &BBox, d: &Delta) -> Result<BBox> {
    proposal.validate()?;
    if !d.is_finite() {
        return invalid(format!("non-finite delta {d:?}"));
    }
    let (pcx, pcy) = proposal.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    let w = pw * d.dw.exp();
    let h = ph * d.dh.exp();
    if !w.is_finite() || !h.is_finite() {
        return invalid(format!("delta scale overflow {d:?}"));
    }
    let cx = pcx + d.dx * pw;
    let cy = pcy + d.dy * ph;
    BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub strong: usize,
    pub weak: usize,
    pub iou: f64,
}

/// Pairs of strong proposals and their closest weak region.
///
/// Each strong index appears at most once and every stored overlap exceeds
/// the matching threshold.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// For every strong box pick the weak box of highest IoU (lowest index on
/// ties) and keep the pair when that IoU is strictly above `threshold`.
pub fn match_regions(strong: &[BBox], weak: &[BBox], threshold: f64) -> Result<MatchSet> {
    for b in strong.iter().chain(weak) {
        b.validate()?;
    }
    let mut pairs = Vec::new();
    for (i, s) in strong.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, w) in weak.iter().enumerate() {
            let o = s.iou_unchecked(w);
            if best.map_or(true, |(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, o)) = best {
            if o > threshold {
                pairs.push(Match { strong: i, weak: j, iou: o });
            }
        }
    }
    Ok(MatchSet { pairs })
}

/// Indices sorted by descending score, lower index first on ties.
pub(crate) fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy non-maximum suppression. Returns kept indices in selection order.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return invalid(format!(
            "nms: {} boxes but {} scores",
            boxes.len(),
            scores.len()
        ));
    }
    for b in boxes {
        b.validate()?;
    }
    let mut keep: Vec<usize> = Vec::new();
    for idx in score_order(scores) {
        let suppressed = keep
            .iter()
            .any(|&k| boxes[k].iou_unchecked(&boxes[idx]) > iou_threshold);
        if !suppressed {
            keep.push(idx);
        }
    }
    Ok(keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn random_box(rng: &mut ChaCha8Rng) -> BBox {
        let x1 = rng.gen_range(0.0..50.0);
        let y1 = rng.gen_range(0.0..50.0);
        b(x1, y1, x1 + rng.gen_range(1.0..20.0), y1 + rng.gen_range(1.0..20.0))
    }

    /// Area by counting cell centers of a fine grid; independent of the
    /// closed-form intersection.
    fn raster_iou(a: &BBox, c: &BBox, step: f64) -> f64 {
        let (lo_x, hi_x) = (a.x1.min(c.x1), a.x2.max(c.x2));
        let (lo_y, hi_y) = (a.y1.min(c.y1), a.y2.max(c.y2));
        let inside = |r: &BBox, x: f64, y: f64| x > r.x1 && x < r.x2 && y > r.y1 && y < r.y2;
        let (mut inter, mut union) = (0u64, 0u64);
        let mut y = lo_y + step / 2.0;
        while y < hi_y {
            let mut x = lo_x + step / 2.0;
            while x < hi_x {
                let (ia, ic) = (inside(a, x, y), inside(c, x, y));
                inter += (ia && ic) as u64;
                union += (ia || ic) as u64;
                x += step;
            }
            y += step;
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 4.0, 4.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(5.0, 5.0, 6.0, 6.0)).unwrap(), 0.0);
        let (p, q) = (b(0.0, 0.0, 2.0, 2.0), b(1.0, 1.0, 3.0, 3.0));
        let oracle = raster_iou(&p, &q, 0.01);
        assert!((oracle - 1.0 / 7.0).abs() < 1e-6);
        assert!((iou(&p, &q).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn degenerate_boxes_are_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        let bad = BBox { x1: 2.0, y1: 0.0, x2: 1.0, y2: 1.0 };
        assert!(iou(&bad, &b(0.0, 0.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn encode_examples() {
        let p = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(encode_delta(&p, &p).unwrap(), Delta::default());
        let d = encode_delta(&p, &b(1.0, 1.0, 3.0, 3.0)).unwrap();
        assert_eq!(d, Delta { dx: 0.5, dy: 0.5, dw: 0.0, dh: 0.0 });
        let d = encode_delta(&p, &b(0.0, 0.0, 4.0, 4.0)).unwrap();
        assert_eq!((d.dx, d.dy), (0.5, 0.5));
        assert!((d.dw - 2f64.ln()).abs() < 1e-15 && (d.dh - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn decode_examples() {
        let p = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(decode_delta(&p, &Delta::default()).unwrap(), p);
        let d = Delta { dx: 0.5, dy: 0.5, dw: 0.0, dh: 0.0 };
        assert_eq!(decode_delta(&p, &d).unwrap(), b(1.0, 1.0, 3.0, 3.0));
        let huge = Delta { dx: 0.0, dy: 0.0, dw: 1000.0, dh: 0.0 };
        assert!(decode_delta(&p, &huge).is_err());
        let nan = Delta { dx: f64::NAN, ..Delta::default() };
        assert!(decode_delta(&p, &nan).is_err());
    }

    #[test]
    fn match_examples() {
        let a = b(0.0, 0.0, 4.0, 4.0);
        let m = match_regions(&[a], &[a], 0.5).unwrap();
        assert_eq!(m.pairs, vec![Match { strong: 0, weak: 0, iou: 1.0 }]);
        let m = match_regions(&[b(0.0, 0.0, 1.0, 1.0)], &[b(5.0, 5.0, 6.0, 6.0)], 0.5).unwrap();
        assert!(m.is_empty());
        assert!(match_regions(&[], &[a], 0.5).unwrap().is_empty());
        assert!(match_regions(&[a], &[], 0.5).unwrap().is_empty());
    }

    #[test]
    fn match_threshold_is_strict() {
        // IoU exactly 0.5: (0,0,2,1) vs (0,0,1,1).
        let m = match_regions(&[b(0.0, 0.0, 2.0, 1.0)], &[b(0.0, 0.0, 1.0, 1.0)], 0.5).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn match_ties_go_to_lowest_weak_index() {
        let s = b(0.0, 0.0, 2.0, 2.0);
        let m = match_regions(&[s], &[b(0.0, 0.0, 2.0, 1.8), b(0.0, 0.2, 2.0, 2.0)], 0.5).unwrap();
        assert_eq!(m.pairs[0].weak, 0);
    }

    #[test]
    fn match_agrees_with_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let strong: Vec<BBox> = (0..5).map(|_| random_box(&mut rng)).collect();
            let weak: Vec<BBox> = (0..4).map(|_| random_box(&mut rng)).collect();
            let got = match_regions(&strong, &weak, 0.5).unwrap();
            let mut expected = Vec::new();
            for (i, s) in strong.iter().enumerate() {
                let ious: Vec<f64> = weak.iter().map(|w| iou(s, w).unwrap()).collect();
                let best = ious.iter().cloned().fold(f64::MIN, f64::max);
                let j = ious.iter().position(|&v| v == best).unwrap();
                if best > 0.5 {
                    expected.push((i, j));
                }
            }
            let got: Vec<(usize, usize)> = got.pairs.iter().map(|m| (m.strong, m.weak)).collect();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn nms_examples() {
        let a = b(0.0, 0.0, 4.0, 4.0);
        assert_eq!(nms(&[a], &[0.3], 0.6).unwrap(), vec![0]);
        assert_eq!(nms(&[a, a], &[0.9, 0.8], 0.6).unwrap(), vec![0]);
        assert_eq!(nms(&[a, a], &[0.8, 0.9], 0.6).unwrap(), vec![1]);
        assert_eq!(nms(&[a, a], &[0.5, 0.5], 0.6).unwrap(), vec![0]);
        assert!(nms(&[a], &[0.1, 0.2], 0.6).is_err());
        assert!(nms(&[], &[], 0.6).unwrap().is_empty());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..50.0f64, 0.0..50.0f64, 0.5..30.0f64, 0.5..30.0f64)
            .prop_map(|(x, y, w, h)| BBox { x1: x, y1: y, x2: x + w, y2: y + h })
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let ab = iou(&a, &c).unwrap();
            prop_assert_eq!(ab, iou(&c, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn decode_inverts_encode(p in arb_box(), t in arb_box()) {
            let back = decode_delta(&p, &encode_delta(&p, &t).unwrap()).unwrap();
            for (x, y) in [(back.x1, t.x1), (back.y1, t.y1), (back.x2, t.x2), (back.y2, t.y2)] {
                prop_assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
            }
        }

        #[test]
        fn nms_is_permutation_invariant(
            boxes in prop::collection::vec(arb_box(), 1..15),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // distinct scores
            let scores: Vec<f64> = (0..boxes.len()).map(|i| i as f64 / 100.0 + 0.001).collect();
            let mut perm: Vec<usize> = (0..boxes.len()).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let pb: Vec<BBox> = perm.iter().map(|&i| boxes[i]).collect();
            let ps: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
            let mut direct = nms(&boxes, &scores, 0.5).unwrap();
            let mut permuted: Vec<usize> = nms(&pb, &ps, 0.5).unwrap().into_iter().map(|k| perm[k]).collect();
            direct.sort();
            permuted.sort();
            prop_assert_eq!(direct, permuted);
        }
    }
}
