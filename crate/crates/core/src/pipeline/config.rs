//! Training configuration and its flat `key = value` text form.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    WeakOnly,
    Collaborative,
    Cascade,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::WeakOnly => "weak_only",
            Mode::Collaborative => "collaborative",
            Mode::Cascade => "cascade",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "weak_only" => Ok(Mode::WeakOnly),
            "collaborative" => Ok(Mode::Collaborative),
            "cascade" => Ok(Mode::Cascade),
            _ => Err(Error::Config(format!("unknown mode {s:?} (weak_only, collaborative, cascade)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub beta: f64,
    pub epochs: u32,
    pub lr: f64,
    pub lr_low: f64,
    /// Fraction of epochs trained at `lr` before switching to `lr_low`.
    pub lr_decay_at: f64,
    pub nms_threshold: f64,
    pub seed: u64,
    pub dataset: PathBuf,
    pub out_dir: Option<PathBuf>,
    /// Weak-only checkpoint that seeds the cascade.
    pub weak_checkpoint: Option<PathBuf>,
    pub eval_every: u32,
    pub scales: Vec<f64>,
    pub flip: bool,
    pub match_threshold: f64,
    pub normalize: bool,
    /// IoU bounds of the objectness pseudo targets.
    pub objectness_pos: f64,
    pub objectness_neg: f64,
    pub weak_proposals: usize,
    /// Init gain of the output layers.
    pub head_gain: f64,
    /// Use only the first `n` training images (0 = all).
    pub train_limit: usize,
    /// Recompute per-loss gradients every step and check they add up.
    pub check_gradients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Collaborative,
            beta: 0.8,
            epochs: 20,
            lr: 1e-3,
            lr_low: 1e-4,
            lr_decay_at: 0.6,
            nms_threshold: 0.6,
            seed: 0,
            dataset: PathBuf::from("data"),
            out_dir: None,
            weak_checkpoint: None,
            eval_every: 2,
            scales: vec![0.75, 1.0, 1.25],
            flip: true,
            match_threshold: 0.5,
            normalize: true,
            objectness_pos: 0.5,
            objectness_neg: 0.3,
            weak_proposals: 64,
            head_gain: 1.0,
            train_limit: 0,
            check_gradients: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    /// Schedule for the synthetic benchmark. Training from scratch on 400
    /// images needs more steps and a larger rate than the 20-epoch default;
    /// the 10x drop stays at 60% of training.
    pub fn benchmark() -> TrainConfig {
        TrainConfig { epochs: 60, lr: 1e-2, lr_low: 1e-3, eval_every: 5, ..TrainConfig::default() }
    }

    /// Named starting points: `default` or `benchmark`.
    pub fn preset(name: &str) -> Result<TrainConfig> {
        match name {
            "default" => Ok(TrainConfig::default()),
            "benchmark" => Ok(TrainConfig::benchmark()),
            _ => Err(Error::Config(format!("unknown preset {name:?} (default, benchmark)"))),
        }
    }

    /// Epoch (0-based) at which the learning rate drops.
    pub fn lr_boundary(&self) -> u32 {
        (self.epochs as f64 * self.lr_decay_at).round() as u32
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        if epoch < self.lr_boundary() {
            self.lr
        } else {
            self.lr_low
        }
    }

    /// Epochs (1-based) after which both detectors are evaluated.
    pub fn eval_epochs(&self) -> Vec<u32> {
        (1..=self.epochs).filter(|e| e % self.eval_every == 0 || *e == self.epochs).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must lie in (0, 1)");
        }
        if !(self.lr > 0.0 && self.lr_low > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.lr_decay_at) {
            return bad("lr_decay_at must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.nms_threshold) || !(0.0..=1.0).contains(&self.match_threshold) {
            return bad("IoU thresholds must lie in [0, 1]");
        }
        if self.objectness_neg > self.objectness_pos {
            return bad("objectness_neg must not exceed objectness_pos");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if self.scales.is_empty() || self.scales.iter().any(|&s| !(s > 0.0)) {
            return bad("scales must be a non-empty list of positive factors");
        }
        if self.weak_proposals == 0 {
            return bad("weak_proposals must be at least 1");
        }
        if self.mode == Mode::Cascade && self.weak_checkpoint.is_none() {
            return bad("cascade mode needs weak_checkpoint");
        }
        Ok(())
    }

    /// Set one option from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "mode" => self.mode = v.parse()?,
            "beta" => self.beta = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "lr_low" => self.lr_low = parse(key, v)?,
            "lr_decay_at" => self.lr_decay_at = parse(key, v)?,
            "nms_threshold" => self.nms_threshold = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "dataset" => self.dataset = PathBuf::from(v),
            "out_dir" => self.out_dir = Some(PathBuf::from(v)),
            "weak_checkpoint" => self.weak_checkpoint = Some(PathBuf::from(v)),
            "eval_every" => self.eval_every = parse(key, v)?,
            "scales" => {
                self.scales = v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_>>()?;
            }
            "flip" => self.flip = parse(key, v)?,
            "match_threshold" => self.match_threshold = parse(key, v)?,
            "normalize" => self.normalize = parse(key, v)?,
            "objectness_pos" => self.objectness_pos = parse(key, v)?,
            "objectness_neg" => self.objectness_neg = parse(key, v)?,
            "weak_proposals" => self.weak_proposals = parse(key, v)?,
            "head_gain" => self.head_gain = parse(key, v)?,
            "train_limit" => self.train_limit = parse(key, v)?,
            "check_gradients" => self.check_gradients = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown option {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let scales: Vec<String> = self.scales.iter().map(|s| s.to_string()).collect();
        let mut lines = vec![
            format!("mode = {}", self.mode),
            format!("beta = {}", self.beta),
            format!("epochs = {}", self.epochs),
            format!("lr = {}", self.lr),
            format!("lr_low = {}", self.lr_low),
            format!("lr_decay_at = {}", self.lr_decay_at),
            format!("nms_threshold = {}", self.nms_threshold),
            format!("seed = {}", self.seed),
            format!("dataset = {}", self.dataset.display()),
            format!("eval_every = {}", self.eval_every),
            format!("scales = {}", scales.join(",")),
            format!("flip = {}", self.flip),
            format!("match_threshold = {}", self.match_threshold),
            format!("normalize = {}", self.normalize),
            format!("objectness_pos = {}", self.objectness_pos),
            format!("objectness_neg = {}", self.objectness_neg),
            format!("weak_proposals = {}", self.weak_proposals),
            format!("head_gain = {}", self.head_gain),
            format!("train_limit = {}", self.train_limit),
            format!("check_gradients = {}", self.check_gradients),
        ];
        if let Some(p) = &self.out_dir {
            lines.push(format!("out_dir = {}", p.display()));
        }
        if let Some(p) = &self.weak_checkpoint {
            lines.push(format!("weak_checkpoint = {}", p.display()));
        }
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_switches_at_sixty_percent() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_boundary(), 12);
        assert!((0..12).all(|e| cfg.lr_at(e) == 1e-3));
        assert!((12..20).all(|e| cfg.lr_at(e) == 1e-4));
    }

    #[test]
    fn text_round_trip_and_overrides() {
        let mut cfg = TrainConfig::default();
        cfg.set("mode", "cascade").unwrap();
        cfg.set("weak_checkpoint", "w.ckpt").unwrap();
        cfg.set("scales", "0.5, 1").unwrap();
        cfg.set("out_dir", "runs/a").unwrap();
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        let parsed = TrainConfig::from_text("# comment\nepochs = 3  # trailing\n\nbeta=0.5\n").unwrap();
        assert_eq!((parsed.epochs, parsed.beta), (3, 0.5));
    }

    #[test]
    fn bad_options_are_config_errors() {
        for text in ["nope = 1", "epochs = x", "epochs", "mode = fancy"] {
            let err = TrainConfig::from_text(text).unwrap_err();
            assert_eq!(err.category(), "config", "{text}");
        }
        let cascade = TrainConfig { mode: Mode::Cascade, ..Default::default() };
        assert!(cascade.validate().is_err());
        assert!(TrainConfig { beta: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { eval_every: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn benchmark_preset_keeps_the_schedule_shape() {
        let b = TrainConfig::preset("benchmark").unwrap();
        assert_eq!(b.lr_boundary(), 36);
        assert_eq!(b.lr / b.lr_low, TrainConfig::default().lr / TrainConfig::default().lr_low);
        assert_eq!(TrainConfig::preset("default").unwrap(), TrainConfig::default());
        assert_eq!(TrainConfig::preset("fast").unwrap_err().category(), "config");
    }

    #[test]
    fn evaluation_schedule() {
        let cfg = TrainConfig { epochs: 5, eval_every: 2, ..Default::default() };
        assert_eq!(cfg.eval_epochs(), vec![2, 4, 5]);
        assert!(TrainConfig { epochs: 0, ..Default::default() }.eval_epochs().is_empty());
    }
}
