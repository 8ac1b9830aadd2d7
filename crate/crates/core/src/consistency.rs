//! Prediction-consistency loss that trains the strong detector from the
//! weak detector's max-out regions.
//!
//! Over matched pairs `(i, j)` and foreground classes `c`:
//!
//! ```text
//! total = sum  -beta * w_jc * log p_ic            (inter-network category)
//!            - (1 - beta) * p_ic * log p_ic       (inner-network entropy)
//!            + w_jc * smooth_l1(t_jc - t_ic)      (inter-network location)
//! ```
//!
//! where `w` are the max-out targets, `t_jc` encodes weak box `j` against
//! strong proposal `i` and `t_ic` is the strong regression output. The minus
//! sign applies to the two log terms only; the location term is a penalty.

use crate::error::{invalid, Result};
use crate::geometry::{encode_delta, BBox, MatchSet};
use crate::nn::{CustomOp, Graph, Tensor, Var};
use crate::weak::{MaxoutTargets, LOG_CLAMP_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyConfig {
    pub beta: f64,
    pub match_threshold: f64,
    /// Divide by `max(1, matched_pairs)`.
    pub normalize: bool,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig { beta: 0.8, match_threshold: 0.5, normalize: true }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return invalid(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConsistencyBreakdown {
    pub total: f64,
    pub cp_inter: f64,
    pub cp_inner: f64,
    pub cl_inter: f64,
    pub matched_pairs: usize,
}

pub fn smooth_l1(x: &[f64]) -> f64 {
    x.iter().map(|&v| if v.abs() < 1.0 { 0.5 * v * v } else { v.abs() - 0.5 }).sum()
}

pub fn smooth_l1_grad(v: f64) -> f64 {
    if v.abs() < 1.0 {
        v
    } else {
        v.signum()
    }
}

/// Inputs of one consistency evaluation that are constants for the strong
/// branch.
pub struct ConsistencyTargets<'a> {
    pub maxout: &'a MaxoutTargets,
    pub weak_boxes: &'a [BBox],
    pub proposals: &'a [BBox],
    pub matches: &'a MatchSet,
}

struct PairTerm {
    strong: usize,
    weak: usize,
    /// `t_jc`, one geometry per weak box.
    target: [f64; 4],
}

struct ConsistencyOp {
    pairs: Vec<PairTerm>,
    weights: Tensor,
    n_fg: usize,
    beta: f64,
    scale: f64,
    weak_attached: bool,
}

impl ConsistencyOp {
    fn evaluate(&self, probs: &Tensor, deltas: &Tensor) -> ConsistencyBreakdown {
        let mut b = ConsistencyBreakdown { matched_pairs: self.pairs.len(), ..Default::default() };
        for pair in &self.pairs {
            for c in 0..self.n_fg {
                let p = probs.at(pair.strong, c);
                let q = p.max(LOG_CLAMP_EPS);
                let w = self.weights.at(pair.weak, c);
                b.cp_inter -= self.beta * w * q.ln();
                b.cp_inner -= (1.0 - self.beta) * p * q.ln();
                if w != 0.0 {
                    let t = &deltas.row(pair.strong)[4 * c..4 * c + 4];
                    let diff: Vec<f64> = pair.target.iter().zip(t).map(|(a, b)| a - b).collect();
                    b.cl_inter += w * smooth_l1(&diff);
                }
            }
        }
        b.cp_inter *= self.scale;
        b.cp_inner *= self.scale;
        b.cl_inter *= self.scale;
        b.total = b.cp_inter + b.cp_inner + b.cl_inter;
        b
    }
}

impl CustomOp for ConsistencyOp {
    fn name(&self) -> &'static str {
        "consistency"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>> {
        let (probs, deltas) = (inputs[0], inputs[1]);
        let k = self.scale * grad_out[0];
        let mut gp = vec![0.0; probs.len()];
        let mut gd = vec![0.0; deltas.len()];
        let mut gw = if self.weak_attached { vec![0.0; self.weights.len()] } else { Vec::new() };
        let width = probs.shape[1];
        for pair in &self.pairs {
            for c in 0..self.n_fg {
                let p = probs.at(pair.strong, c);
                let q = p.max(LOG_CLAMP_EPS);
                let w = self.weights.at(pair.weak, c);
                if p > LOG_CLAMP_EPS {
                    gp[pair.strong * width + c] += k * (-self.beta * w / q - (1.0 - self.beta) * (q.ln() + 1.0));
                } else {
                    gp[pair.strong * width + c] -= k * (1.0 - self.beta) * q.ln();
                }
                let base = pair.strong * deltas.shape[1] + 4 * c;
                let mut reg = 0.0;
                for d in 0..4 {
                    let diff = pair.target[d] - deltas.data[base + d];
                    gd[base + d] -= k * w * smooth_l1_grad(diff);
                    reg += if diff.abs() < 1.0 { 0.5 * diff * diff } else { diff.abs() - 0.5 };
                }
                if self.weak_attached {
                    // straight-through: the one-hot weight passes gradient to p_jc
                    gw[pair.weak * self.n_fg + c] += k * (-self.beta * q.ln() + reg);
                }
            }
        }
        let mut out = vec![gp, gd];
        if self.weak_attached {
            out.push(gw);
        }
        out
    }
}

/// Record the consistency loss on the graph.
///
/// `probs` is the strong classifier output `B_S x (C + 1)` (background last),
/// `deltas` the regression output `B_S x 4C`. When `weak_scores` is given the
/// loss also sends a straight-through gradient into that `B_W x C` node;
/// normal training passes `None` so the weak branch stays detached.
pub fn consistency_loss(
    g: &mut Graph,
    probs: Var,
    deltas: Var,
    targets: &ConsistencyTargets,
    cfg: &ConsistencyConfig,
    weak_scores: Option<Var>,
) -> Result<(Var, ConsistencyBreakdown)> {
    cfg.validate()?;
    let (n_strong, width) = g.value(probs).as_matrix()?;
    let n_fg = targets.maxout.p_hat.shape[1];
    if width != n_fg + 1 {
        return invalid(format!("strong classifier has {width} outputs for {n_fg} classes"));
    }
    if g.value(deltas).shape != [n_strong, 4 * n_fg] {
        return invalid(format!("regression output shape {:?}", g.value(deltas).shape));
    }
    if targets.proposals.len() != n_strong {
        return invalid("proposal count differs from strong prediction rows");
    }
    if targets.weak_boxes.len() != targets.maxout.p_hat.shape[0] {
        return invalid("weak box count differs from max-out rows");
    }
    let mut pairs = Vec::with_capacity(targets.matches.len());
    for m in &targets.matches.pairs {
        if m.strong >= n_strong || m.weak >= targets.weak_boxes.len() {
            return invalid(format!("match {m:?} out of range"));
        }
        let t = encode_delta(&targets.proposals[m.strong], &targets.weak_boxes[m.weak])?;
        pairs.push(PairTerm { strong: m.strong, weak: m.weak, target: t.to_array() });
    }
    let scale = if cfg.normalize { 1.0 / (pairs.len().max(1) as f64) } else { 1.0 };
    let op = ConsistencyOp {
        pairs,
        weights: targets.maxout.p_hat.clone(),
        n_fg,
        beta: cfg.beta,
        scale,
        weak_attached: weak_scores.is_some(),
    };
    let breakdown = op.evaluate(g.value(probs), g.value(deltas));
    let mut inputs = vec![probs, deltas];
    if let Some(w) = weak_scores {
        if g.value(w).shape != targets.maxout.p_hat.shape {
            return invalid("weak score node shape differs from max-out targets");
        }
        inputs.push(w);
    }
    let v = g.custom(&inputs, Tensor::scalar(breakdown.total), Box::new(op));
    Ok((v, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{match_regions, Match};
    use crate::nn::{grad_check, ParameterRegistry};
    use crate::weak::{maxout, ImageLabel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn run(
        probs: Tensor,
        deltas: Tensor,
        targets: &ConsistencyTargets,
        cfg: ConsistencyConfig,
    ) -> ConsistencyBreakdown {
        let reg = ParameterRegistry::new();
        let mut g = Graph::new(&reg);
        let (p, d) = (g.constant(probs), g.constant(deltas));
        consistency_loss(&mut g, p, d, targets, &cfg, None).unwrap().1
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(&[0.0; 4]), 0.0);
        assert_eq!(smooth_l1(&[0.5, 0.0, 0.0, 0.0]), 0.125);
        assert_eq!(smooth_l1(&[2.0, 0.0, 0.0, 0.0]), 1.5);
        assert_eq!(smooth_l1(&[-2.0, 0.0, 0.0, 0.0]), 1.5);
    }

    /// One weak box, one strong proposal, one class.
    fn single_pair(p_fg: f64, delta: [f64; 4]) -> (ConsistencyBreakdown, ConsistencyBreakdown) {
        let weak = vec![bx(0.0, 0.0, 2.0, 2.0)];
        let proposals = vec![bx(0.0, 0.0, 2.0, 2.0)];
        let mo = maxout(&Tensor::new(vec![1, 1], vec![0.3]).unwrap(), &ImageLabel::new(vec![1.0]).unwrap()).unwrap();
        let matches = MatchSet { pairs: vec![Match { strong: 0, weak: 0, iou: 1.0 }] };
        let t = ConsistencyTargets { maxout: &mo, weak_boxes: &weak, proposals: &proposals, matches: &matches };
        let probs = Tensor::new(vec![1, 2], vec![p_fg, 1.0 - p_fg]).unwrap();
        let deltas = Tensor::new(vec![1, 4], delta.to_vec()).unwrap();
        let cfg = ConsistencyConfig::default();
        let normalized = run(probs.clone(), deltas.clone(), &t, cfg);
        let raw = run(probs, deltas, &t, ConsistencyConfig { normalize: false, ..cfg });
        (normalized, raw)
    }

    #[test]
    fn perfect_agreement_is_exactly_zero() {
        let (b, _) = single_pair(1.0, [0.0; 4]);
        assert_eq!(b.total, 0.0);
        assert_eq!(b.matched_pairs, 1);
    }

    #[test]
    fn hand_evaluated_terms() {
        // t_jc = 0 since weak and proposal coincide; t_ic = -0.5 gives diff 0.5
        let (b, raw) = single_pair(0.5, [-0.5, 0.0, 0.0, 0.0]);
        assert!((b.cp_inter - 0.8 * 2f64.ln()).abs() < 1e-12);
        assert!((b.cp_inner - 0.2 * 0.5 * 2f64.ln()).abs() < 1e-12);
        assert!((b.cl_inter - 0.125).abs() < 1e-12);
        assert!((b.total - 0.7488).abs() < 1e-3);
        assert_eq!(raw, b);
    }

    #[test]
    fn empty_matches_give_zero() {
        let weak = vec![bx(0.0, 0.0, 2.0, 2.0)];
        let proposals = vec![bx(10.0, 10.0, 12.0, 12.0)];
        let mo = maxout(&Tensor::new(vec![1, 2], vec![0.3, 0.1]).unwrap(), &ImageLabel::new(vec![1.0, 0.0]).unwrap()).unwrap();
        let matches = match_regions(&proposals, &weak, 0.5).unwrap();
        let t = ConsistencyTargets { maxout: &mo, weak_boxes: &weak, proposals: &proposals, matches: &matches };
        let b = run(
            Tensor::new(vec![1, 3], vec![0.2, 0.3, 0.5]).unwrap(),
            Tensor::zeros(&[1, 8]),
            &t,
            ConsistencyConfig::default(),
        );
        assert_eq!(b, ConsistencyBreakdown::default());
    }

    #[test]
    fn invalid_beta_is_rejected() {
        for beta in [0.0, 1.0, -0.1, 1.5] {
            assert!(ConsistencyConfig { beta, ..Default::default() }.validate().is_err());
        }
    }

    /// Random instance: `n_weak` weak boxes jittered around `n_strong`
    /// proposals so that most proposals find a match.
    struct Instance {
        weak: Vec<BBox>,
        proposals: Vec<BBox>,
        maxout: MaxoutTargets,
        matches: MatchSet,
        reg: ParameterRegistry,
    }

    fn random_instance(seed: u64, n_fg: usize) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proposals: Vec<BBox> = (0..6)
            .map(|_| {
                let (x, y) = (rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0));
                bx(x, y, x + rng.gen_range(8.0..16.0), y + rng.gen_range(8.0..16.0))
            })
            .collect();
        let weak: Vec<BBox> = proposals
            .iter()
            .cycle()
            .take(8)
            .map(|p| {
                let j = |r: &mut ChaCha8Rng| r.gen_range(-1.5..1.5);
                bx(p.x1 + j(&mut rng), p.y1 + j(&mut rng), p.x2 + j(&mut rng), p.y2 + j(&mut rng))
            })
            .collect();
        let p = Tensor::new(vec![8, n_fg], (0..8 * n_fg).map(|_| rng.gen()).collect()).unwrap();
        let label: Vec<f64> = (0..n_fg).map(|c| (c % 2 == 0) as u8 as f64).collect();
        let maxout = maxout(&p, &ImageLabel::new(label).unwrap()).unwrap();
        let matches = match_regions(&proposals, &weak, 0.5).unwrap();
        let mut reg = ParameterRegistry::new();
        let logits = (0..6 * (n_fg + 1)).map(|_| rng.gen_range(-2.0..2.0)).collect();
        reg.register("logits", Tensor::new(vec![6, n_fg + 1], logits).unwrap()).unwrap();
        // mix of small and large residuals to exercise both smooth-L1 branches
        let deltas = (0..6 * 4 * n_fg).map(|_| rng.gen_range(-2.5..2.5)).collect();
        reg.register("deltas", Tensor::new(vec![6, 4 * n_fg], deltas).unwrap()).unwrap();
        Instance { weak, proposals, maxout, matches, reg }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            let inst = random_instance(seed, 3);
            assert!(!inst.matches.is_empty());
            let t = ConsistencyTargets {
                maxout: &inst.maxout,
                weak_boxes: &inst.weak,
                proposals: &inst.proposals,
                matches: &inst.matches,
            };
            let r = grad_check(
                &inst.reg,
                |g| {
                    let l = g.param("logits")?;
                    let p = g.softmax(l, 1)?;
                    let d = g.param("deltas")?;
                    Ok(consistency_loss(g, p, d, &t, &ConsistencyConfig::default(), None)?.0)
                },
                1e-5,
                200,
                seed,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn beta_limits_reduce_termwise() {
        let inst = random_instance(4, 2);
        let t = ConsistencyTargets {
            maxout: &inst.maxout,
            weak_boxes: &inst.weak,
            proposals: &inst.proposals,
            matches: &inst.matches,
        };
        let probs = {
            let l = &inst.reg.get("logits").unwrap().value;
            Tensor::new(l.shape.clone(), crate::nn::softmax_matrix(&l.data, 6, 3, 1)).unwrap()
        };
        let deltas = inst.reg.get("deltas").unwrap().value.clone();
        let at = |beta: f64| {
            let op_cfg = ConsistencyConfig { beta, match_threshold: 0.5, normalize: false };
            // evaluate outside validate() to reach the closed endpoints
            let pairs = inst
                .matches
                .pairs
                .iter()
                .map(|m| PairTerm {
                    strong: m.strong,
                    weak: m.weak,
                    target: encode_delta(&inst.proposals[m.strong], &inst.weak[m.weak]).unwrap().to_array(),
                })
                .collect();
            let op = ConsistencyOp {
                pairs,
                weights: inst.maxout.p_hat.clone(),
                n_fg: 2,
                beta: op_cfg.beta,
                scale: 1.0,
                weak_attached: false,
            };
            op.evaluate(&probs, &deltas)
        };
        let one = at(1.0);
        assert_eq!(one.cp_inner, 0.0);
        let zero = at(0.0);
        assert_eq!(zero.cp_inter, 0.0);
        let mid = run(probs.clone(), deltas.clone(), &t, ConsistencyConfig { beta: 0.8, normalize: false, ..Default::default() });
        assert!((mid.cp_inter - 0.8 * one.cp_inter).abs() < 1e-12);
        assert!((mid.cp_inner - 0.2 * zero.cp_inner).abs() < 1e-12);
        assert_eq!(mid.cl_inter, one.cl_inter);
        assert!(mid.cl_inter >= 0.0 && mid.cp_inner >= 0.0 && mid.cp_inter >= 0.0);
    }

    #[test]
    fn sharpening_toward_target_never_increases_category_terms() {
        let weak = vec![bx(0.0, 0.0, 4.0, 4.0)];
        let proposals = vec![bx(0.0, 0.0, 4.0, 4.0)];
        let mo = maxout(
            &Tensor::new(vec![1, 3], vec![0.1, 0.5, 0.2]).unwrap(),
            &ImageLabel::new(vec![0.0, 1.0, 0.0]).unwrap(),
        )
        .unwrap();
        let matches = match_regions(&proposals, &weak, 0.5).unwrap();
        let t = ConsistencyTargets { maxout: &mo, weak_boxes: &weak, proposals: &proposals, matches: &matches };
        let base = [0.25, 0.25, 0.25, 0.25];
        let mut last = f64::INFINITY;
        for k in 0..=20 {
            let a = k as f64 / 20.0;
            // interpolate toward one-hot at the max-out class (index 1)
            let row: Vec<f64> = base.iter().enumerate().map(|(c, &v)| (1.0 - a) * v + a * (c == 1) as u8 as f64).collect();
            let b = run(Tensor::new(vec![1, 4], row).unwrap(), Tensor::zeros(&[1, 12]), &t, ConsistencyConfig::default());
            let cat = b.cp_inter + b.cp_inner;
            assert!(cat <= last + 1e-12, "step {k}: {cat} > {last}");
            last = cat;
        }
        assert!(last.abs() < 1e-5);
    }

    #[test]
    fn weak_branch_gets_gradient_only_when_attached() {
        let inst = random_instance(7, 2);
        let t = ConsistencyTargets {
            maxout: &inst.maxout,
            weak_boxes: &inst.weak,
            proposals: &inst.proposals,
            matches: &inst.matches,
        };
        let mut reg = inst.reg.clone();
        reg.register("weak", Tensor::new(vec![8, 2], vec![0.2; 16]).unwrap()).unwrap();
        let grads = |attached: bool| {
            let mut g = Graph::new(&reg);
            let l = g.param("logits").unwrap();
            let p = g.softmax(l, 1).unwrap();
            let d = g.param("deltas").unwrap();
            let w = g.param("weak").unwrap();
            let (loss, _) =
                consistency_loss(&mut g, p, d, &t, &ConsistencyConfig::default(), attached.then_some(w)).unwrap();
            g.backward(loss).unwrap()
        };
        let id = reg.id("weak").unwrap();
        assert!(grads(false).is_zero(id));
        assert!(!grads(true).is_zero(id));
    }
}
