//! The joint network: a small convolutional backbone and two shared
//! fully-connected layers feeding a weak two-stream head and a strong
//! region head with an objectness branch.
//!
//! Parameter names fall into three groups (see [`ParamGroup`]): `conv*` and
//! `fc6`/`fc7` are shared, `weak.*` belongs to the weak detector, and
//! `strong.*`/`rpn.*` to the strong detector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Image;
use crate::error::{invalid, Result};
use crate::geometry::BBox;
use crate::nn::{Graph, Padding, ParameterRegistry, Tensor, Var};
use crate::strong::{
    anchor_grid, anchor_objectness, detections_from_predictions, generate_proposals, predict, AnchorConfig,
    Detection, ProposalConfig, ProposalSet, StrongOutput,
};
use crate::weak::{score_regions, weak_detections, WeakOutput};

/// Total down-sampling of the backbone (two 2x pools).
pub const FEATURE_STRIDE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_classes: usize,
    pub channels: [usize; 3],
    pub fc_width: usize,
    pub roi_bins: (usize, usize),
    pub anchors: AnchorConfig,
    pub proposals: ProposalConfig,
    /// Weak proposals per image (`B_W`).
    pub weak_proposals: usize,
    pub weak_score_threshold: f64,
    pub strong_score_threshold: f64,
    pub nms_threshold: f64,
    /// Init gain of hidden layers: `sqrt(6)` keeps activation variance
    /// through ReLU.
    pub hidden_gain: f64,
    /// Init gain of the output layers (class scores, deltas, objectness).
    pub head_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_classes: 4,
            channels: [8, 16, 16],
            fc_width: 64,
            roi_bins: (2, 2),
            anchors: AnchorConfig::default(),
            proposals: ProposalConfig::default(),
            weak_proposals: 64,
            weak_score_threshold: 1e-3,
            strong_score_threshold: 0.05,
            nms_threshold: 0.6,
            hidden_gain: 6f64.sqrt(),
            head_gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Shared,
    Weak,
    Strong,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("weak.") {
        ParamGroup::Weak
    } else if name.starts_with("strong.") || name.starts_with("rpn.") {
        ParamGroup::Strong
    } else {
        ParamGroup::Shared
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.fc_width == 0 || self.channels.contains(&0) {
            return invalid("model dimensions must be positive");
        }
        if self.weak_proposals == 0 {
            return invalid("need at least one weak proposal per image");
        }
        if self.anchors.scales.is_empty() {
            return invalid("need at least one anchor scale");
        }
        Ok(())
    }

    fn region_dim(&self) -> usize {
        self.channels[2] * self.roi_bins.0 * self.roi_bins.1
    }

    /// Fresh parameters: fan-in scaled uniform weights and zero biases,
    /// drawn in a fixed order from `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ParameterRegistry> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = ParameterRegistry::new();
        let [c1, c2, c3] = self.channels;
        let (f, c, a) = (self.fc_width, self.n_classes, self.anchors.scales.len());
        let (hg, og) = (self.hidden_gain, self.head_gain);
        let mut conv = |reg: &mut ParameterRegistry, name: &str, o: usize, i: usize, k: usize, gain: f64| -> Result<()> {
            reg.register_uniform(&format!("{name}.w"), &[o, i, k, k], i * k * k, gain, &mut rng)?;
            reg.register_zeros(&format!("{name}.b"), &[o])?;
            Ok(())
        };
        conv(&mut reg, "conv1", c1, 3, 3, hg)?;
        conv(&mut reg, "conv2", c2, c1, 3, hg)?;
        conv(&mut reg, "conv3", c3, c2, 3, hg)?;
        conv(&mut reg, "rpn.obj", a, c3, 1, og)?;
        let mut dense = |reg: &mut ParameterRegistry, name: &str, o: usize, i: usize, gain: f64| -> Result<()> {
            reg.register_uniform(&format!("{name}.w"), &[o, i], i, gain, &mut rng)?;
            reg.register_zeros(&format!("{name}.b"), &[o])?;
            Ok(())
        };
        dense(&mut reg, "fc6", f, self.region_dim(), hg)?;
        dense(&mut reg, "fc7", f, f, hg)?;
        dense(&mut reg, "weak.fc", f, f, hg)?;
        dense(&mut reg, "weak.cls", c, f, og)?;
        dense(&mut reg, "weak.loc", c, f, og)?;
        dense(&mut reg, "strong.fc", f, f, hg)?;
        dense(&mut reg, "strong.cls", c + 1, f, og)?;
        dense(&mut reg, "strong.reg", 4 * c, f, og)?;
        Ok(reg)
    }

    /// Shared feature map `[C3, H/4, W/4]` of an image tensor `[3, H, W]`
    /// with values in `[0, 1]` (rescaled to `[-1, 1]` on entry).
    pub fn backbone(&self, g: &mut Graph, mut image: Tensor) -> Result<Var> {
        image.data.iter_mut().for_each(|v| *v = 2.0 * *v - 1.0);
        let mut x = g.constant(image);
        for (k, name) in ["conv1", "conv2", "conv3"].iter().enumerate() {
            let w = g.param(&format!("{name}.w"))?;
            let b = g.param(&format!("{name}.b"))?;
            x = g.conv2d(x, w, b, Padding::Same)?;
            x = g.relu(x);
            if k < 2 {
                x = g.max_pool(x)?;
            }
        }
        Ok(x)
    }

    fn dense(&self, g: &mut Graph, x: Var, name: &str, relu: bool) -> Result<Var> {
        let w = g.param(&format!("{name}.w"))?;
        let b = g.param(&format!("{name}.b"))?;
        let y = g.linear(x, w, b)?;
        Ok(if relu { g.relu(y) } else { y })
    }

    /// Pooled region features through the shared fc6/fc7 layers.
    pub fn region_features(&self, g: &mut Graph, features: Var, boxes: &[BBox]) -> Result<Var> {
        let pooled = g.roi_pool(features, boxes, 1.0 / FEATURE_STRIDE as f64, self.roi_bins)?;
        let h = self.dense(g, pooled, "fc6", true)?;
        self.dense(g, h, "fc7", true)
    }

    pub fn weak_head(&self, g: &mut Graph, region_features: Var) -> Result<WeakOutput> {
        let h = self.dense(g, region_features, "weak.fc", true)?;
        let cls = self.dense(g, h, "weak.cls", false)?;
        let loc = self.dense(g, h, "weak.loc", false)?;
        score_regions(g, cls, loc)
    }

    pub fn strong_head(&self, g: &mut Graph, region_features: Var) -> Result<StrongOutput> {
        let h = self.dense(g, region_features, "strong.fc", true)?;
        let cls = self.dense(g, h, "strong.cls", false)?;
        let reg = self.dense(g, h, "strong.reg", false)?;
        predict(g, cls, reg, self.n_classes)
    }

    /// Sigmoid objectness map `[A, H/4, W/4]`.
    pub fn objectness(&self, g: &mut Graph, features: Var) -> Result<Var> {
        let w = g.param("rpn.obj.w")?;
        let b = g.param("rpn.obj.b")?;
        let logits = g.conv2d(features, w, b, Padding::Valid)?;
        Ok(g.sigmoid(logits))
    }

    /// Anchors of an image whose feature map is `feat_h x feat_w`.
    pub fn anchors(&self, feat_h: usize, feat_w: usize, image_h: usize, image_w: usize) -> Vec<BBox> {
        anchor_grid(feat_h, feat_w, &self.anchors, image_h as f64, image_w as f64)
    }

    /// Online proposals from an objectness map (values only, no gradient).
    pub fn proposals(&self, objectness: &Tensor, image_h: usize, image_w: usize) -> Result<(Vec<BBox>, ProposalSet)> {
        let anchors = self.anchors(objectness.shape[1], objectness.shape[2], image_h, image_w);
        let set = generate_proposals(&anchors, &anchor_objectness(objectness), &self.proposals)?;
        Ok((anchors, set))
    }

    /// Weak proposals of a `height x width` image: half are anchors drawn
    /// from the strong detector's grid, half are jittered copies of those.
    /// Fully determined by `(seed, image_id)`.
    pub fn weak_proposals(&self, seed: u64, image_id: usize, height: usize, width: usize) -> Vec<BBox> {
        let (fh, fw) = (height / FEATURE_STRIDE, width / FEATURE_STRIDE);
        let grid = self.anchors(fh, fw, height, width);
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ (image_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let n_base = (self.weak_proposals + 1) / 2;
        let picks = rand::seq::index::sample(&mut rng, grid.len(), n_base.min(grid.len()));
        let base: Vec<BBox> = picks.iter().map(|k| grid[k]).collect();
        let mut out = base.clone();
        let mut k = 0;
        while out.len() < self.weak_proposals {
            let b = base[k % base.len()];
            k += 1;
            let (cx, cy) = b.center();
            let (w, h) = (b.width(), b.height());
            let nw = w * rng.gen_range(-0.3f64..0.3).exp();
            let nh = h * rng.gen_range(-0.3f64..0.3).exp();
            let ncx = cx + rng.gen_range(-0.25..0.25) * w;
            let ncy = cy + rng.gen_range(-0.25..0.25) * h;
            let candidate = BBox { x1: ncx - nw / 2.0, y1: ncy - nh / 2.0, x2: ncx + nw / 2.0, y2: ncy + nh / 2.0 };
            out.push(candidate.clip(width as f64, height as f64).unwrap_or(b));
        }
        out
    }
}

/// Read-only inference with a fixed parameter set.
pub struct Detector<'a> {
    pub model: &'a ModelConfig,
    pub params: &'a ParameterRegistry,
}

impl Detector<'_> {
    pub fn weak_detect(&self, image: &Image, proposals: &[BBox]) -> Result<Vec<Detection>> {
        Ok(self.detect(image, Some(proposals), false)?.0)
    }

    pub fn strong_detect(&self, image: &Image) -> Result<Vec<Detection>> {
        Ok(self.detect(image, None, true)?.1)
    }

    /// Weak and strong detections of one image from a single backbone pass.
    /// Either side is skipped when not requested.
    pub fn detect(
        &self,
        image: &Image,
        weak_proposals: Option<&[BBox]>,
        strong: bool,
    ) -> Result<(Vec<Detection>, Vec<Detection>)> {
        let mut g = Graph::new(self.params);
        let fm = self.model.backbone(&mut g, image.to_tensor())?;
        let mut weak = Vec::new();
        if let Some(boxes) = weak_proposals {
            let feats = self.model.region_features(&mut g, fm, boxes)?;
            let out = self.model.weak_head(&mut g, feats)?;
            weak = weak_detections(boxes, g.value(out.p), self.model.weak_score_threshold, self.model.nms_threshold)?;
        }
        let mut dets = Vec::new();
        if strong {
            let obj = self.model.objectness(&mut g, fm)?;
            let (_, set) = self.model.proposals(g.value(obj), image.height, image.width)?;
            if !set.is_empty() {
                let feats = self.model.region_features(&mut g, fm, &set.boxes)?;
                let out = self.model.strong_head(&mut g, feats)?;
                dets = detections_from_predictions(
                    &set.boxes,
                    &out.predictions(&g),
                    image.height as f64,
                    image.width as f64,
                    self.model.strong_score_threshold,
                    self.model.nms_threshold,
                )?;
            }
        }
        Ok((weak, dets))
    }
}

