//! Synthetic shapes benchmark: scene generation, augmentation and the
//! on-disk dataset layout.
//!
//! On disk a dataset is a directory holding `manifest.json` and one raw image
//! per scene under `images/`. Raw images are a little-endian `u32` height, a
//! little-endian `u32` width, then `height * width * 3` bytes of row-major
//! 8-bit RGB.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::nn::Tensor;
use crate::weak::ImageLabel;

pub const SHAPE_NAMES: [&str; 5] = ["disk", "square", "triangle", "ring", "cross"];

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Image { height, width, pixels: vec![0; height * width * 3] }
    }

    /// Channel value in `[0, 1]`.
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c] as f64 / 255.0
    }

    fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let base = (y * self.width + x) * 3;
        for (k, v) in rgb.iter().enumerate() {
            self.pixels[base + k] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }

    /// `[3, H, W]` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w) = (self.height, self.width);
        let mut data = vec![0.0; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[(c * h + y) * w + x] = self.get(y, x, c);
                }
            }
        }
        Tensor { shape: vec![3, h, w], data }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = Image::new(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + (self.width - 1 - x)) * 3;
                let dst = (y * self.width + x) * 3;
                out.pixels[dst..dst + 3].copy_from_slice(&self.pixels[src..src + 3]);
            }
        }
        out
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = Image::new(height, width);
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ay = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let ax = fx - x0 as f64;
                let mut rgb = [0.0; 3];
                for (c, v) in rgb.iter_mut().enumerate() {
                    let top = self.get(y0, x0, c) * (1.0 - ax) + self.get(y0, x1, c) * ax;
                    let bot = self.get(y1, x0, c) * (1.0 - ax) + self.get(y1, x1, c) * ax;
                    *v = top * (1.0 - ay) + bot * ay;
                }
                out.set(y, x, rgb);
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.pixels.len());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Image> {
        if bytes.len() < 8 {
            return Err(Error::Format("raw image shorter than its header".into()));
        }
        let height = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() != 8 + height * width * 3 {
            return Err(Error::Format(format!(
                "raw image {height}x{width} expects {} bytes, found {}",
                8 + height * width * 3,
                bytes.len()
            )));
        }
        Ok(Image { height, width, pixels: bytes[8..].to_vec() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub class: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// One generated image. `gt` is for evaluation only; training code reads
/// `image` and `label`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub id: usize,
    pub image: Image,
    pub label: ImageLabel,
    pub gt: Vec<GtObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub image_size: usize,
    pub min_object_size: f64,
    pub max_object_size: f64,
    pub max_objects: usize,
    /// Largest IoU allowed between two objects of one scene; later objects
    /// are drawn on top, so any overlap is a partial occlusion.
    pub max_overlap: f64,
    pub distractors: usize,
    pub noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            n_train: 400,
            n_test: 100,
            n_classes: 4,
            image_size: 64,
            min_object_size: 12.0,
            max_object_size: 24.0,
            max_objects: 3,
            max_overlap: 0.1,
            distractors: 6,
            noise: 0.06,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=SHAPE_NAMES.len()).contains(&self.n_classes) {
            return Err(Error::Config(format!("n_classes must be in 2..=5, got {}", self.n_classes)));
        }
        if self.min_object_size < 6.0 || self.max_object_size < self.min_object_size {
            return Err(Error::Config("object sizes must satisfy 6 <= min <= max".into()));
        }
        if self.max_object_size >= self.image_size as f64 {
            return Err(Error::Config("objects must fit inside the image".into()));
        }
        if self.max_objects == 0 {
            return Err(Error::Config("max_objects must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<SyntheticScene>,
    pub test: Vec<SyntheticScene>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

fn scene_rng(seed: u64, id: usize, attempt: u64) -> ChaCha8Rng {
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((id as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(attempt.wrapping_mul(0x94D0_49BB_1331_11EB));
    ChaCha8Rng::seed_from_u64(mixed)
}

fn inside_shape(class: usize, dx: f64, dy: f64, half: f64) -> bool {
    let r2 = dx * dx + dy * dy;
    match class {
        0 => r2 <= half * half,
        1 => dx.abs() <= half && dy.abs() <= half,
        2 => dy.abs() <= half && dx.abs() <= 0.5 * (dy + half),
        3 => r2 <= half * half && r2 >= (0.55 * half).powi(2),
        _ => dx.abs() <= half && dy.abs() <= half && (dx.abs() <= half / 3.0 || dy.abs() <= half / 3.0),
    }
}

fn luminance(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

fn try_scene(cfg: &DatasetConfig, id: usize, rng: &mut ChaCha8Rng) -> Option<SyntheticScene> {
    let size = cfg.image_size;
    let s = size as f64;
    let mut canvas = vec![[0.0f64; 3]; size * size];

    // textured background: tinted base, two oriented gratings, pixel noise
    let base = random_color(rng).map(|v| 0.25 + 0.5 * v);
    let gratings: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let freq = rng.gen_range(0.15..0.6);
            (theta.cos() * freq, theta.sin() * freq, rng.gen_range(0.0..6.3), rng.gen_range(0.03..0.1))
        })
        .collect();
    for y in 0..size {
        for x in 0..size {
            let t: f64 = gratings
                .iter()
                .map(|(fx, fy, ph, amp)| amp * (fx * x as f64 + fy * y as f64 + ph).sin())
                .sum();
            canvas[y * size + x] = base.map(|b| b + t);
        }
    }

    // distractors: short strokes and small blobs, too small to be objects
    for _ in 0..cfg.distractors {
        let color = random_color(rng);
        let (x0, y0) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
        if rng.gen_bool(0.5) {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let len = rng.gen_range(4.0..10.0);
            for k in 0..(len as usize * 2) {
                let (px, py) = (x0 + theta.cos() * k as f64 * 0.5, y0 + theta.sin() * k as f64 * 0.5);
                if px >= 0.0 && py >= 0.0 && px < s && py < s {
                    canvas[py as usize * size + px as usize] = color;
                }
            }
        } else {
            let r: f64 = rng.gen_range(1.0..2.5);
            for y in (y0 - r).max(0.0) as usize..((y0 + r).ceil() as usize).min(size) {
                for x in (x0 - r).max(0.0) as usize..((x0 + r).ceil() as usize).min(size) {
                    let (dx, dy) = (x as f64 + 0.5 - x0, y as f64 + 0.5 - y0);
                    if dx * dx + dy * dy <= r * r {
                        canvas[y * size + x] = color;
                    }
                }
            }
        }
    }

    let n_objects = rng.gen_range(1..=cfg.max_objects);
    let mut gt: Vec<GtObject> = Vec::new();
    for _ in 0..n_objects {
        let class = rng.gen_range(0..cfg.n_classes);
        let mut placed = None;
        for _ in 0..50 {
            let side = rng.gen_range(cfg.min_object_size..=cfg.max_object_size);
            let x1 = rng.gen_range(0.0..=(s - side));
            let y1 = rng.gen_range(0.0..=(s - side));
            let b = BBox::new(x1, y1, x1 + side, y1 + side).ok()?;
            if gt.iter().all(|o| o.bbox.iou_unchecked(&b) <= cfg.max_overlap) {
                placed = Some(b);
                break;
            }
        }
        let b = placed?;
        // keep the object visibly different from the background tint
        let mut color = random_color(rng);
        for _ in 0..20 {
            if (luminance(color) - luminance(base)).abs() >= 0.2 {
                break;
            }
            color = random_color(rng);
        }
        let (cx, cy) = b.center();
        let half = 0.5 * b.width();
        for y in b.y1.floor() as usize..(b.y2.ceil() as usize).min(size) {
            for x in b.x1.floor() as usize..(b.x2.ceil() as usize).min(size) {
                if inside_shape(class, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, half) {
                    canvas[y * size + x] = color;
                }
            }
        }
        gt.push(GtObject { class, bbox: b });
    }

    let mut image = Image::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let n = cfg.noise;
            let px = canvas[y * size + x].map(|v| v + rng.gen_range(-n..=n));
            image.set(y, x, px);
        }
    }
    let mut label = vec![0.0; cfg.n_classes];
    for o in &gt {
        label[o.class] = 1.0;
    }
    Some(SyntheticScene { id, image, label: ImageLabel::new(label).ok()?, gt })
}

/// One scene, deterministic in `(cfg.seed, id)`. Failed placements retry
/// with a fresh sub-seed, so the result is always a valid scene.
pub fn generate_scene(cfg: &DatasetConfig, id: usize) -> SyntheticScene {
    (0u64..)
        .find_map(|attempt| try_scene(cfg, id, &mut scene_rng(cfg.seed, id, attempt)))
        .expect("scene generation retries are unbounded")
}

/// Train scenes take ids `0..n_train`, test scenes follow.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let train = (0..cfg.n_train).map(|id| generate_scene(cfg, id)).collect();
    let test = (cfg.n_train..cfg.n_train + cfg.n_test).map(|id| generate_scene(cfg, id)).collect();
    Ok(Dataset { config: cfg.clone(), train, test })
}

/// Geometric transform applied to one training sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub flip: bool,
    pub scale: f64,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation { flip: false, scale: 1.0 };

    pub fn sample<R: Rng>(rng: &mut R, scales: &[f64]) -> Augmentation {
        let flip = rng.gen_bool(0.5);
        let scale = if scales.is_empty() { 1.0 } else { scales[rng.gen_range(0..scales.len())] };
        Augmentation { flip, scale }
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let h = ((height as f64 * self.scale).round() as usize).max(1);
        let w = ((width as f64 * self.scale).round() as usize).max(1);
        (h, w)
    }

    pub fn apply_image(&self, image: &Image) -> Image {
        let flipped = if self.flip { image.flip_horizontal() } else { image.clone() };
        let (h, w) = self.output_size(image.height, image.width);
        flipped.resize(h, w)
    }

    /// Map a box from the source image (`height x width`) into the augmented
    /// frame.
    pub fn apply_box(&self, b: &BBox, height: usize, width: usize) -> BBox {
        let flipped = if self.flip { b.flip_horizontal(width as f64) } else { *b };
        let (h, w) = self.output_size(height, width);
        let (sx, sy) = (w as f64 / width as f64, h as f64 / height as f64);
        BBox { x1: flipped.x1 * sx, y1: flipped.y1 * sy, x2: flipped.x2 * sx, y2: flipped.y2 * sy }
    }

    pub fn apply(&self, scene: &SyntheticScene) -> SyntheticScene {
        let (h, w) = (scene.image.height, scene.image.width);
        SyntheticScene {
            id: scene.id,
            image: self.apply_image(&scene.image),
            label: scene.label.clone(),
            gt: scene
                .gt
                .iter()
                .map(|o| GtObject { class: o.class, bbox: self.apply_box(&o.bbox, h, w) })
                .collect(),
        }
    }
}

/// Random horizontal flip (p = 0.5) and a rescale drawn uniformly from
/// `scales`. Labels are never changed.
pub fn augment(scene: &SyntheticScene, seed: u64, scales: &[f64]) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Augmentation::sample(&mut rng, scales).apply(scene)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub split: Split,
    pub file: String,
    pub label: Vec<u8>,
    pub gt: Vec<GtObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: DatasetConfig,
    pub class_names: Vec<String>,
    pub scenes: Vec<ManifestEntry>,
}

pub const MANIFEST_FORMAT: &str = "wscdn-shapes-v1";

impl Dataset {
    pub fn manifest(&self) -> Manifest {
        let entry = |s: &SyntheticScene, split| ManifestEntry {
            id: s.id,
            split,
            file: format!("images/{:05}.rgb", s.id),
            label: s.label.values().iter().map(|&v| v as u8).collect(),
            gt: s.gt.clone(),
        };
        Manifest {
            format: MANIFEST_FORMAT.into(),
            config: self.config.clone(),
            class_names: SHAPE_NAMES[..self.config.n_classes].iter().map(|s| s.to_string()).collect(),
            scenes: self
                .train
                .iter()
                .map(|s| entry(s, Split::Train))
                .chain(self.test.iter().map(|s| entry(s, Split::Test)))
                .collect(),
        }
    }

    pub fn manifest_text(&self) -> String {
        serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("images"))?;
        std::fs::write(dir.join("manifest.json"), self.manifest_text())?;
        for s in self.train.iter().chain(&self.test) {
            std::fs::write(dir.join(format!("images/{:05}.rgb", s.id)), s.image.to_bytes())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("unknown manifest format {:?}", manifest.format)));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for e in manifest.scenes {
            let image = Image::from_bytes(&std::fs::read(dir.join(&e.file))?)?;
            let label = ImageLabel::new(e.label.iter().map(|&v| v as f64).collect())?;
            let scene = SyntheticScene { id: e.id, image, label, gt: e.gt };
            match e.split {
                Split::Train => train.push(scene),
                Split::Test => test.push(scene),
            }
        }
        Ok(Dataset { config: manifest.config, train, test })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig { n_train: 20, n_test: 5, ..DatasetConfig::default() }
    }

    #[test]
    fn same_seed_gives_identical_manifests() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a.manifest_text(), b.manifest_text());
        assert_eq!(a, b);
        let c = generate_dataset(&DatasetConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.manifest_text(), c.manifest_text());
    }

    #[test]
    fn labels_match_gt_boxes() {
        let d = generate_dataset(&small()).unwrap();
        for s in d.train.iter().chain(&d.test) {
            assert!(!s.gt.is_empty() && s.gt.len() <= 3);
            for c in 0..4 {
                let present = s.gt.iter().any(|o| o.class == c);
                assert_eq!(s.label.values()[c] == 1.0, present);
            }
            for o in &s.gt {
                let b = o.bbox;
                assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 64.0 && b.y2 <= 64.0);
                assert!(b.width() >= 6.0 && b.height() >= 6.0);
            }
        }
    }

    #[test]
    fn class_frequency_is_near_uniform() {
        let cfg = DatasetConfig { n_test: 0, ..DatasetConfig::default() };
        let d = generate_dataset(&cfg).unwrap();
        let mut counts = [0usize; 4];
        for s in &d.train {
            for o in &s.gt {
                counts[o.class] += 1;
            }
        }
        let mean = counts.iter().sum::<usize>() as f64 / 4.0;
        for c in counts {
            assert!((c as f64 - mean).abs() <= 0.15 * mean, "{counts:?}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_dataset(&DatasetConfig { n_classes: 1, ..small() }).is_err());
        assert!(generate_dataset(&DatasetConfig { n_classes: 6, ..small() }).is_err());
        assert!(generate_dataset(&DatasetConfig { max_object_size: 80.0, ..small() }).is_err());
    }

    #[test]
    fn flip_is_an_involution_and_mirrors_boxes() {
        let scene = generate_scene(&small(), 3);
        let flip = Augmentation { flip: true, scale: 1.0 };
        let twice = flip.apply(&flip.apply(&scene));
        assert_eq!(twice.image, scene.image);
        let b = BBox::new(10.0, 10.0, 20.0, 20.0).unwrap();
        assert_eq!(flip.apply_box(&b, 64, 64), BBox::new(44.0, 10.0, 54.0, 20.0).unwrap());
    }

    #[test]
    fn augmentation_preserves_labels() {
        let scene = generate_scene(&small(), 5);
        for seed in 0..10 {
            let a = augment(&scene, seed, &[0.75, 1.0, 1.25]);
            assert_eq!(a.label, scene.label);
            assert_eq!(a.gt.len(), scene.gt.len());
            assert!([48, 64, 80].contains(&a.image.width));
            for (o, p) in a.gt.iter().zip(&scene.gt) {
                assert_eq!(o.class, p.class);
                let r = a.image.width as f64 / 64.0;
                assert!((o.bbox.width() - p.bbox.width() * r).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let d = generate_dataset(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        let raw = std::fs::read(dir.path().join("images/00000.rgb")).unwrap();
        assert_eq!(u32::from_le_bytes(raw[0..4].try_into().unwrap()), 64);
        assert_eq!(raw.len(), 8 + 64 * 64 * 3);
        assert_eq!(Dataset::load(dir.path()).unwrap(), d);
    }

    #[test]
    fn raw_image_rejects_bad_length() {
        let img = Image::new(2, 3);
        let mut bytes = img.to_bytes();
        assert_eq!(Image::from_bytes(&bytes).unwrap(), img);
        bytes.pop();
        assert!(Image::from_bytes(&bytes).is_err());
    }
}
