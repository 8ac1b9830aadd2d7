//! Training orchestration for the weak-only, collaborative and cascade
//! configurations, evaluation, and run outputs.

mod config;
mod runlog;

pub use config::{Mode, TrainConfig};
pub use runlog::{emit_plots, parse_svg, render_svg, DetectorTag, EpochLosses, RunLog, RunLogRow, RUNLOG_HEADER};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::consistency::{consistency_loss, ConsistencyConfig, ConsistencyTargets};
use crate::data::{Augmentation, Dataset, Image, SyntheticScene};
use crate::error::{invalid, Error, Result};
use crate::eval::{corloc, mean_average_precision, top_detections, DetectionRecord, GroundTruth};
use crate::geometry::{encode_delta, match_regions, BBox};
use crate::model::{param_group, Detector, ModelConfig, ParamGroup};
use crate::nn::{Checkpoint, Gradients, Graph, ParameterRegistry, Var};
use crate::strong::{anchor_map_index, detection_loss, objectness_targets, ProposalLabel};
use crate::weak::{image_classification_loss, maxout, ImageLabel, LOG_CLAMP_EPS};

/// What the training loop may see of a scene: no ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: usize,
    pub image: Image,
    pub label: ImageLabel,
}

pub fn training_samples(scenes: &[SyntheticScene]) -> Vec<TrainSample> {
    scenes.iter().map(|s| TrainSample { id: s.id, image: s.image.clone(), label: s.label.clone() }).collect()
}

/// Losses of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: u32,
    pub step: u32,
    pub image_id: usize,
    pub lr: f64,
    pub losses: EpochLosses,
}

pub const STEPS_HEADER: &str =
    "epoch,step,image_id,lr,loss_weak,loss_strong,cp_inter,cp_inner,cl_inter,objectness,matched_pairs";

pub fn steps_csv(steps: &[StepRecord]) -> String {
    let mut out = String::from(STEPS_HEADER);
    out.push('\n');
    for s in steps {
        let l = &s.losses;
        out.push_str(&format!(
            "{},{},{},{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{}\n",
            s.epoch,
            s.step,
            s.image_id,
            s.lr,
            l.loss_weak,
            l.loss_strong,
            l.cp_inter,
            l.cp_inner,
            l.cl_inter,
            l.objectness,
            l.matched_pairs
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ParameterRegistry,
    pub run_log: RunLog,
    pub steps: Vec<StepRecord>,
}

impl TrainOutput {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint { mode: cfg.mode.as_str().into(), epoch: cfg.epochs, params: self.params.clone() }
    }
}

pub fn model_config(cfg: &TrainConfig, n_classes: usize) -> ModelConfig {
    ModelConfig {
        n_classes,
        weak_proposals: cfg.weak_proposals,
        nms_threshold: cfg.nms_threshold,
        head_gain: cfg.head_gain,
        ..ModelConfig::default()
    }
}

/// Weak proposals of a sample under an augmentation. The proposals are a
/// fixed property of the source image, derived from the dataset seed.
pub fn sample_proposals(
    model: &ModelConfig,
    proposal_seed: u64,
    id: usize,
    source: &Image,
    aug: &Augmentation,
) -> Vec<BBox> {
    let (h, w) = (source.height, source.width);
    let (oh, ow) = aug.output_size(h, w);
    model
        .weak_proposals(proposal_seed, id, h, w)
        .iter()
        .map(|b| {
            let t = aug.apply_box(b, h, w);
            t.clip(ow as f64, oh as f64).unwrap_or(t)
        })
        .collect()
}

/// Objectness targets in the `[A, H, W]` layout of the objectness map.
fn objectness_loss(
    g: &mut Graph,
    model: &ModelConfig,
    obj: Var,
    anchors: &[BBox],
    refs: &[BBox],
    cfg: &TrainConfig,
) -> Result<Var> {
    let shape = g.value(obj).shape.clone();
    let (a, h, w) = (shape[0], shape[1], shape[2]);
    debug_assert_eq!(a, model.anchors.scales.len());
    let (t, wt) = objectness_targets(anchors, refs, cfg.objectness_pos, cfg.objectness_neg);
    let mut targets = vec![0.0; anchors.len()];
    let mut weights = vec![0.0; anchors.len()];
    for k in 0..anchors.len() {
        let i = anchor_map_index(k, a, h, w);
        targets[i] = t[k];
        weights[i] = wt[k];
    }
    g.bce(obj, targets, weights, LOG_CLAMP_EPS)
}

fn check_isolation(g: &Graph, loss_weak: Var, loss_strong: Var) -> Result<()> {
    let reg = g.registry();
    for id in g.reachable_params(loss_strong) {
        if param_group(&reg.param(id).name) == ParamGroup::Weak {
            return invalid(format!("strong loss reaches weak parameter {}", reg.param(id).name));
        }
    }
    for id in g.reachable_params(loss_weak) {
        if param_group(&reg.param(id).name) == ParamGroup::Strong {
            return invalid(format!("weak loss reaches strong parameter {}", reg.param(id).name));
        }
    }
    Ok(())
}

/// Per-loss gradients recomputed separately must add up to the joint
/// gradient, and each branch must receive nothing from the other loss.
pub fn check_gradient_split(g: &Graph, loss_weak: Var, loss_strong: Var, joint: &Gradients) -> Result<()> {
    let gw = g.backward(loss_weak)?;
    let gs = g.backward(loss_strong)?;
    let reg = g.registry();
    for (id, p) in reg.iter() {
        let n = p.value.len();
        let zero = vec![0.0; n];
        let a = gw.get(id).unwrap_or(&zero);
        let b = gs.get(id).unwrap_or(&zero);
        let j = joint.get(id).unwrap_or(&zero);
        match param_group(&p.name) {
            ParamGroup::Weak if !gs.is_zero(id) => return invalid(format!("{} gets gradient from L(D_S)", p.name)),
            ParamGroup::Strong if !gw.is_zero(id) => return invalid(format!("{} gets gradient from L(D_W)", p.name)),
            _ => {}
        }
        for k in 0..n {
            if (j[k] - (a[k] + b[k])).abs() > 1e-10 {
                return invalid(format!("{}[{k}]: joint gradient differs from the per-loss sum", p.name));
            }
        }
    }
    Ok(())
}

/// One weak-only step: `L(D_W)` and its gradient.
pub fn weak_step(
    model: &ModelConfig,
    params: &ParameterRegistry,
    image: &Image,
    label: &ImageLabel,
    weak_boxes: &[BBox],
) -> Result<(Gradients, EpochLosses)> {
    let mut g = Graph::new(params);
    let fm = model.backbone(&mut g, image.to_tensor())?;
    let feats = model.region_features(&mut g, fm, weak_boxes)?;
    let out = model.weak_head(&mut g, feats)?;
    let loss = image_classification_loss(&mut g, out.y_hat, label)?;
    let losses = EpochLosses { loss_weak: g.value(loss).data[0], ..Default::default() };
    Ok((g.backward(loss)?, losses))
}

/// One collaborative step: both losses on a shared forward pass, a single
/// backward of their sum, and the per-step isolation check.
pub fn collaborative_step(
    model: &ModelConfig,
    params: &ParameterRegistry,
    cfg: &TrainConfig,
    image: &Image,
    label: &ImageLabel,
    weak_boxes: &[BBox],
) -> Result<(Gradients, EpochLosses)> {
    let ccfg = ConsistencyConfig { beta: cfg.beta, match_threshold: cfg.match_threshold, normalize: cfg.normalize };
    let mut g = Graph::new(params);
    let fm = model.backbone(&mut g, image.to_tensor())?;
    let wf = model.region_features(&mut g, fm, weak_boxes)?;
    let weak = model.weak_head(&mut g, wf)?;
    let loss_weak = image_classification_loss(&mut g, weak.y_hat, label)?;

    let targets = maxout(g.value(weak.p), label)?;
    let selected: Vec<BBox> = targets.selected.iter().map(|&(_, j)| weak_boxes[j]).collect();
    let obj = model.objectness(&mut g, fm)?;
    let (anchors, proposals) = model.proposals(g.value(obj), image.height, image.width)?;
    let loss_obj = objectness_loss(&mut g, model, obj, &anchors, &selected, cfg)?;

    let sf = model.region_features(&mut g, fm, &proposals.boxes)?;
    let strong = model.strong_head(&mut g, sf)?;
    let matches = match_regions(&proposals.boxes, weak_boxes, ccfg.match_threshold)?;
    let ct = ConsistencyTargets {
        maxout: &targets,
        weak_boxes,
        proposals: &proposals.boxes,
        matches: &matches,
    };
    let (loss_cons, breakdown) = consistency_loss(&mut g, strong.probs, strong.deltas, &ct, &ccfg, None)?;
    let loss_strong = g.add(loss_cons, loss_obj)?;
    let total = g.add(loss_weak, loss_strong)?;

    check_isolation(&g, loss_weak, loss_strong)?;
    let grads = g.backward(total)?;
    if cfg.check_gradients {
        check_gradient_split(&g, loss_weak, loss_strong, &grads)?;
    }
    let losses = EpochLosses {
        loss_weak: g.value(loss_weak).data[0],
        loss_strong: g.value(loss_strong).data[0],
        cp_inter: breakdown.cp_inter,
        cp_inner: breakdown.cp_inner,
        cl_inter: breakdown.cl_inter,
        objectness: g.value(loss_obj).data[0],
        matched_pairs: breakdown.matched_pairs as f64,
    };
    Ok((grads, losses))
}

/// One cascade step: the strong detector against fixed pseudo boxes.
pub fn cascade_step(
    model: &ModelConfig,
    params: &ParameterRegistry,
    cfg: &TrainConfig,
    image: &Image,
    pseudo: &[(usize, BBox)],
) -> Result<(Gradients, EpochLosses)> {
    let mut g = Graph::new(params);
    let fm = model.backbone(&mut g, image.to_tensor())?;
    let obj = model.objectness(&mut g, fm)?;
    let (anchors, proposals) = model.proposals(g.value(obj), image.height, image.width)?;
    let refs: Vec<BBox> = pseudo.iter().map(|&(_, b)| b).collect();
    let loss_obj = objectness_loss(&mut g, model, obj, &anchors, &refs, cfg)?;
    let sf = model.region_features(&mut g, fm, &proposals.boxes)?;
    let strong = model.strong_head(&mut g, sf)?;
    let mut labels = Vec::with_capacity(proposals.len());
    let mut matched = 0usize;
    for p in &proposals.boxes {
        let best = pseudo
            .iter()
            .map(|(c, b)| (*c, *b, p.iou_unchecked(b)))
            .fold(None, |acc: Option<(usize, BBox, f64)>, x| match acc {
                Some(a) if a.2 >= x.2 => Some(a),
                _ => Some(x),
            });
        labels.push(match best {
            Some((class, b, ov)) if ov > cfg.match_threshold => {
                matched += 1;
                ProposalLabel::Foreground { class, target: encode_delta(p, &b)? }
            }
            _ => ProposalLabel::Background,
        });
    }
    let loss_det = detection_loss(&mut g, &strong, labels)?;
    let total = g.add(loss_det, loss_obj)?;
    let losses = EpochLosses {
        loss_strong: g.value(total).data[0],
        objectness: g.value(loss_obj).data[0],
        matched_pairs: matched as f64,
        ..Default::default()
    };
    Ok((g.backward(total)?, losses))
}

/// Max-out boxes of the weak detector for every sample (unaugmented).
pub fn pseudo_labels(
    model: &ModelConfig,
    params: &ParameterRegistry,
    samples: &[TrainSample],
    proposal_seed: u64,
) -> Result<Vec<Vec<(usize, BBox)>>> {
    samples
        .iter()
        .map(|s| {
            let boxes = sample_proposals(model, proposal_seed, s.id, &s.image, &Augmentation::IDENTITY);
            let mut g = Graph::new(params);
            let fm = model.backbone(&mut g, s.image.to_tensor())?;
            let feats = model.region_features(&mut g, fm, &boxes)?;
            let out = model.weak_head(&mut g, feats)?;
            let t = maxout(g.value(out.p), &s.label)?;
            Ok(t.selected.iter().map(|&(c, j)| (c, boxes[j])).collect())
        })
        .collect()
}

fn gt_of(scenes: &[SyntheticScene]) -> GroundTruth {
    scenes.iter().map(|s| (s.id, s.gt.clone())).collect()
}

/// Detection records of one detector over a list of scenes.
pub fn detect_scenes(
    model: &ModelConfig,
    params: &ParameterRegistry,
    scenes: &[SyntheticScene],
    tag: DetectorTag,
    proposal_seed: u64,
) -> Result<Vec<DetectionRecord>> {
    let det = Detector { model, params };
    let mut out = Vec::new();
    for s in scenes {
        let found = if tag.is_weak() {
            let boxes = sample_proposals(model, proposal_seed, s.id, &s.image, &Augmentation::IDENTITY);
            det.weak_detect(&s.image, &boxes)?
        } else {
            det.strong_detect(&s.image)?
        };
        out.extend(found.into_iter().map(|d| DetectionRecord {
            image_id: s.id,
            class: d.class,
            score: d.score,
            bbox: d.bbox,
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub detections: Vec<DetectionRecord>,
    pub map: f64,
    pub corloc: f64,
}

/// mAP and CorLoc of detection records against the scenes' ground truth.
pub fn score_detections(dets: &[DetectionRecord], scenes: &[SyntheticScene], n_classes: usize) -> (f64, f64) {
    let gt = gt_of(scenes);
    (mean_average_precision(dets, &gt, n_classes), corloc(&top_detections(dets), &gt, n_classes).mean)
}

pub fn evaluate_scenes(
    model: &ModelConfig,
    params: &ParameterRegistry,
    scenes: &[SyntheticScene],
    tag: DetectorTag,
    proposal_seed: u64,
) -> Result<EvalResult> {
    let detections = detect_scenes(model, params, scenes, tag, proposal_seed)?;
    let (map, corloc) = score_detections(&detections, scenes, model.n_classes);
    Ok(EvalResult { detections, map, corloc })
}

/// The detector tags a checkpoint of `mode` can be evaluated as.
pub fn tags_for_mode(mode: Mode) -> &'static [DetectorTag] {
    match mode {
        Mode::WeakOnly => &[DetectorTag::IW],
        Mode::Collaborative => &[DetectorTag::ClW, DetectorTag::ClS],
        Mode::Cascade => &[DetectorTag::CsS],
    }
}

/// Checks that a checkpoint can be evaluated as `tag` on data with
/// `n_classes` classes.
pub fn check_checkpoint(ckpt: &Checkpoint, tag: DetectorTag, n_classes: usize) -> Result<()> {
    let mode: Mode = ckpt.mode.parse()?;
    if !tags_for_mode(mode).contains(&tag) {
        return Err(Error::Config(format!("a {mode} checkpoint has no {tag} detector")));
    }
    let classes = ckpt.params.get("weak.cls.w").map_err(|_| Error::Config("checkpoint lacks weak.cls.w".into()))?;
    if classes.value.shape[0] != n_classes {
        return Err(Error::Config(format!(
            "checkpoint has {} classes, dataset has {n_classes}",
            classes.value.shape[0]
        )));
    }
    Ok(())
}

fn mean_losses(sum: &EpochLosses, n: usize) -> EpochLosses {
    let k = 1.0 / n.max(1) as f64;
    EpochLosses {
        loss_weak: sum.loss_weak * k,
        loss_strong: sum.loss_strong * k,
        cp_inter: sum.cp_inter * k,
        cp_inner: sum.cp_inner * k,
        cl_inter: sum.cl_inter * k,
        objectness: sum.objectness * k,
        matched_pairs: sum.matched_pairs * k,
    }
}

fn add_losses(acc: &mut EpochLosses, l: &EpochLosses) {
    acc.loss_weak += l.loss_weak;
    acc.loss_strong += l.loss_strong;
    acc.cp_inter += l.cp_inter;
    acc.cp_inner += l.cp_inner;
    acc.cl_inter += l.cl_inter;
    acc.objectness += l.objectness;
    acc.matched_pairs += l.matched_pairs;
}

fn epoch_rng(seed: u64, epoch: u32, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(epoch as u128 * (1 << 40));
    rng
}

/// The shared SGD loop. `step` maps the current parameters, a sample index
/// and an augmentation to gradients and step losses.
fn run_loop<F>(
    cfg: &TrainConfig,
    model: &ModelConfig,
    dataset: &Dataset,
    params: &mut ParameterRegistry,
    n_samples: usize,
    tags: &[DetectorTag],
    mut step: F,
) -> Result<(RunLog, Vec<StepRecord>)>
where
    F: FnMut(&ParameterRegistry, usize, &Augmentation) -> Result<(Gradients, EpochLosses)>,
{
    let eval_at = cfg.eval_epochs();
    let proposal_seed = dataset.config.seed;
    let train_eval: Vec<SyntheticScene> = dataset.train[..n_samples].to_vec();
    let mut log = RunLog::default();
    let mut steps = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..n_samples).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch, 1));
        let mut aug_rng = epoch_rng(cfg.seed, epoch, 2);
        let mut sum = EpochLosses::default();
        for (k, &i) in order.iter().enumerate() {
            let mut aug = Augmentation::sample(&mut aug_rng, &cfg.scales);
            aug.flip &= cfg.flip;
            let (grads, losses) = step(params, i, &aug)?;
            if !(losses.loss_weak.is_finite() && losses.loss_strong.is_finite()) {
                return invalid(format!("non-finite loss at epoch {} step {k}", epoch + 1));
            }
            params.accumulate(&grads);
            params.sgd_step(lr);
            add_losses(&mut sum, &losses);
            steps.push(StepRecord { epoch: epoch + 1, step: k as u32, image_id: dataset.train[i].id, lr, losses });
        }
        let means = mean_losses(&sum, n_samples);
        log::info!(
            "epoch {}/{}: L(D_W) {:.4}  L(D_S) {:.4}  pairs/step {:.1}",
            epoch + 1,
            cfg.epochs,
            means.loss_weak,
            means.loss_strong,
            means.matched_pairs
        );
        if cfg.mode != Mode::WeakOnly && sum.matched_pairs == 0.0 && n_samples > 0 {
            log::warn!("epoch {}: no matched proposal pairs; L(D_S) contributed nothing", epoch + 1);
        }
        if eval_at.contains(&(epoch + 1)) {
            for &tag in tags {
                let test = evaluate_scenes(model, params, &dataset.test, tag, proposal_seed)?;
                let train = evaluate_scenes(model, params, &train_eval, tag, proposal_seed)?;
                log::info!("epoch {}: {tag} mAP {:.4} CorLoc {:.4}", epoch + 1, test.map, train.corloc);
                log.push(RunLogRow { epoch: epoch + 1, detector: tag, map: test.map, corloc: train.corloc, losses: means })?;
            }
        }
    }
    Ok((log, steps))
}

fn n_train(cfg: &TrainConfig, dataset: &Dataset) -> usize {
    if cfg.train_limit == 0 {
        dataset.train.len()
    } else {
        cfg.train_limit.min(dataset.train.len())
    }
}

fn check_mode(cfg: &TrainConfig, mode: Mode) -> Result<()> {
    if cfg.mode != mode {
        return Err(Error::Config(format!("configuration is for mode {}, not {mode}", cfg.mode)));
    }
    Ok(())
}

/// Trains only the weak detector under `L(D_W)`.
pub fn train_weak_only(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutput> {
    check_mode(cfg, Mode::WeakOnly)?;
    cfg.validate()?;
    let model = model_config(cfg, dataset.config.n_classes);
    let mut params = model.init_params(cfg.seed)?;
    let n = n_train(cfg, dataset);
    let samples = training_samples(&dataset.train[..n]);
    let seed = dataset.config.seed;
    let (run_log, steps) = run_loop(cfg, &model, dataset, &mut params, n, &[DetectorTag::IW], |p, i, aug| {
        let s = &samples[i];
        let boxes = sample_proposals(&model, seed, s.id, &s.image, aug);
        weak_step(&model, p, &aug.apply_image(&s.image), &s.label, &boxes)
    })?;
    Ok(TrainOutput { params, run_log, steps })
}

/// Trains both detectors jointly from image labels.
pub fn train_joint(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutput> {
    check_mode(cfg, Mode::Collaborative)?;
    cfg.validate()?;
    let model = model_config(cfg, dataset.config.n_classes);
    let mut params = model.init_params(cfg.seed)?;
    let n = n_train(cfg, dataset);
    let samples = training_samples(&dataset.train[..n]);
    let seed = dataset.config.seed;
    let tags = [DetectorTag::ClW, DetectorTag::ClS];
    let (run_log, steps) = run_loop(cfg, &model, dataset, &mut params, n, &tags, |p, i, aug| {
        let s = &samples[i];
        let boxes = sample_proposals(&model, seed, s.id, &s.image, aug);
        collaborative_step(&model, p, cfg, &aug.apply_image(&s.image), &s.label, &boxes)
    })?;
    Ok(TrainOutput { params, run_log, steps })
}

/// Trains the strong detector on the frozen max-out boxes of a trained weak
/// detector. The network starts from the same seeded initialization as the
/// other modes; `weak` only supplies the pseudo labels.
pub fn train_cascade(cfg: &TrainConfig, dataset: &Dataset, weak: &ParameterRegistry) -> Result<TrainOutput> {
    check_mode(cfg, Mode::Cascade)?;
    cfg.validate()?;
    let model = model_config(cfg, dataset.config.n_classes);
    let mut params = model.init_params(cfg.seed)?;
    let n = n_train(cfg, dataset);
    let samples = training_samples(&dataset.train[..n]);
    let pseudo = pseudo_labels(&model, weak, &samples, dataset.config.seed)?;
    let (run_log, steps) = run_loop(cfg, &model, dataset, &mut params, n, &[DetectorTag::CsS], |p, i, aug| {
        let s = &samples[i];
        let (h, w) = (s.image.height, s.image.width);
        let boxes: Vec<(usize, BBox)> = pseudo[i].iter().map(|&(c, b)| (c, aug.apply_box(&b, h, w))).collect();
        cascade_step(&model, p, cfg, &aug.apply_image(&s.image), &boxes)
    })?;
    Ok(TrainOutput { params, run_log, steps })
}

/// Dispatch on `cfg.mode`. Cascade mode loads `cfg.weak_checkpoint`.
pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutput> {
    match cfg.mode {
        Mode::WeakOnly => train_weak_only(cfg, dataset),
        Mode::Collaborative => train_joint(cfg, dataset),
        Mode::Cascade => {
            let path = cfg.weak_checkpoint.as_ref().ok_or_else(|| Error::Config("cascade needs weak_checkpoint".into()))?;
            let ckpt = Checkpoint::load(path)
                .map_err(|e| Error::Config(format!("weak checkpoint {}: {e}", path.display())))?;
            if ckpt.mode != Mode::WeakOnly.as_str() {
                return Err(Error::Config(format!("cascade needs a weak_only checkpoint, got {}", ckpt.mode)));
            }
            check_checkpoint(&ckpt, DetectorTag::IW, dataset.config.n_classes)?;
            train_cascade(cfg, dataset, &ckpt.params)
        }
    }
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Write checkpoint, run log, chart, step losses and the effective config.
pub fn write_outputs(cfg: &TrainConfig, out: &TrainOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    out.checkpoint(cfg).save(&dir.join(CHECKPOINT_FILE))?;
    emit_plots(&out.run_log, dir)?;
    std::fs::write(dir.join("steps.csv"), steps_csv(&out.steps))?;
    std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    Ok(())
}

