//! Detection evaluation: per-class average precision (all-point
//! interpolation, IoU > 0.5), mean AP and CorLoc.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::data::GtObject;

pub const TP_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub image_id: usize,
    pub class: usize,
    pub score: f64,
    pub bbox: BBox,
}

/// Ground truth keyed by image id.
pub type GroundTruth = BTreeMap<usize, Vec<GtObject>>;

/// Deterministic descending-score order that does not depend on the input
/// order of the records.
fn ranked<'a>(dets: impl Iterator<Item = &'a DetectionRecord>) -> Vec<&'a DetectionRecord> {
    let mut v: Vec<&DetectionRecord> = dets.collect();
    v.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.image_id.cmp(&b.image_id))
            .then(a.bbox.x1.total_cmp(&b.bbox.x1))
            .then(a.bbox.y1.total_cmp(&b.bbox.y1))
            .then(a.bbox.x2.total_cmp(&b.bbox.x2))
            .then(a.bbox.y2.total_cmp(&b.bbox.y2))
    });
    v
}

/// Precision/recall after each ranked detection of `class`, or `None` when
/// the class has no ground truth.
pub fn precision_recall(dets: &[DetectionRecord], gt: &GroundTruth, class: usize) -> Option<Vec<(f64, f64)>> {
    let n_gt = gt.values().flatten().filter(|o| o.class == class).count();
    if n_gt == 0 {
        return None;
    }
    let mut used: BTreeMap<usize, Vec<bool>> = gt.iter().map(|(&k, v)| (k, vec![false; v.len()])).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::new();
    for d in ranked(dets.iter().filter(|d| d.class == class)) {
        let mut best: Option<(usize, f64)> = None;
        if let Some(objs) = gt.get(&d.image_id) {
            for (k, o) in objs.iter().enumerate() {
                if o.class != class {
                    continue;
                }
                let ov = d.bbox.iou_unchecked(&o.bbox);
                if best.map_or(true, |(_, b)| ov > b) {
                    best = Some((k, ov));
                }
            }
        }
        match best {
            Some((k, ov)) if ov > TP_IOU => {
                let flags = used.get_mut(&d.image_id).expect("image has ground truth");
                if flags[k] {
                    fp += 1;
                } else {
                    flags[k] = true;
                    tp += 1;
                }
            }
            _ => fp += 1,
        }
        curve.push((tp as f64 / (tp + fp) as f64, tp as f64 / n_gt as f64));
    }
    Some(curve)
}

/// Area under the precision envelope of the PR curve.
pub fn average_precision(dets: &[DetectionRecord], gt: &GroundTruth, class: usize) -> Option<f64> {
    let curve = precision_recall(dets, gt, class)?;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, &(_, r)) in curve.iter().enumerate() {
        if r > prev_recall {
            let envelope = curve[k..].iter().map(|&(p, _)| p).fold(0.0, f64::max);
            ap += (r - prev_recall) * envelope;
            prev_recall = r;
        }
    }
    Some(ap)
}

/// Mean of per-class AP over classes that have ground truth; 0 when none do.
pub fn mean_average_precision(dets: &[DetectionRecord], gt: &GroundTruth, n_classes: usize) -> f64 {
    let aps: Vec<f64> = (0..n_classes).filter_map(|c| average_precision(dets, gt, c)).collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// Highest-scoring detection per `(image, class)`, ties broken as in the
/// AP ranking.
pub fn top_detections(dets: &[DetectionRecord]) -> BTreeMap<(usize, usize), BBox> {
    let mut best = BTreeMap::new();
    for d in ranked(dets.iter()) {
        best.entry((d.image_id, d.class)).or_insert(d.bbox);
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorLoc {
    /// `None` for classes absent from every image.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// Fraction of images containing class `c` whose top box for `c` overlaps a
/// ground-truth instance of `c` with IoU > 0.5.
pub fn corloc(top: &BTreeMap<(usize, usize), BBox>, gt: &GroundTruth, n_classes: usize) -> CorLoc {
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (&img, objs) in gt {
        for c in 0..n_classes {
            let of_class: Vec<&GtObject> = objs.iter().filter(|o| o.class == c).collect();
            if of_class.is_empty() {
                continue;
            }
            totals[c] += 1;
            if let Some(b) = top.get(&(img, c)) {
                if of_class.iter().any(|o| o.bbox.iou_unchecked(b) > TP_IOU) {
                    hits[c] += 1;
                }
            }
        }
    }
    let per_class: Vec<Option<f64>> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    CorLoc { per_class, mean }
}

pub const DETECTION_CSV_HEADER: &str = "image_id,class,score,x1,y1,x2,y2";

pub fn write_detections_csv(path: &Path, dets: &[DetectionRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{DETECTION_CSV_HEADER}")?;
    for d in dets {
        writeln!(
            f,
            "{},{},{:?},{:?},{:?},{:?},{:?}",
            d.image_id, d.class, d.score, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_detections_csv(path: &Path) -> Result<Vec<DetectionRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(DETECTION_CSV_HEADER) {
        return Err(Error::Format(format!("detection CSV must start with {DETECTION_CSV_HEADER:?}")));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::Format(format!("detection CSV line {}: {what}", n + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
        let bbox = BBox::new(num(f[3])?, num(f[4])?, num(f[5])?, num(f[6])?).map_err(|_| bad("bad box"))?;
        let score = num(f[2])?;
        if !(0.0..=1.0).contains(&score) {
            return Err(bad("score outside [0, 1]"));
        }
        out.push(DetectionRecord {
            image_id: f[0].trim().parse().map_err(|_| bad("bad image id"))?,
            class: f[1].trim().parse().map_err(|_| bad("bad class"))?,
            score,
            bbox,
        });
    }
    Ok(out)
}
