//! Procedural perspective scenes, the labeled synthetic fisheye domain and
//! the simulated-real domain whose labels live in a sealed namespace.

mod generate;
pub mod store;
pub mod visible;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::camera::{self, DistortionParams, RadialModel};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Mask};
use crate::rng::{derive_seed, Stream};

pub use generate::{checkerboard, gen_scene};

/// Bumped whenever generated bytes change.
pub const GENERATOR_VERSION: &str = "dda-scenes/1";
pub const MAX_REJECTIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Checkerboard,
    RandomLines,
    Polygons,
    Gradient,
    Mixed,
}

impl SceneKind {
    pub const ALL: [SceneKind; 5] =
        [SceneKind::Checkerboard, SceneKind::RandomLines, SceneKind::Polygons, SceneKind::Gradient, SceneKind::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Checkerboard => "checkerboard",
            SceneKind::RandomLines => "randomlines",
            SceneKind::Polygons => "polygons",
            SceneKind::Gradient => "gradient",
            SceneKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::UnknownSceneKind(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Synthetic,
    SimReal,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Synthetic => "synthetic",
            Domain::SimReal => "simreal",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "synthetic" | "syn" => Ok(Domain::Synthetic),
            "simreal" | "real" => Ok(Domain::SimReal),
            _ => Err(Error::Invalid(format!("unknown domain `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRange {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
}

impl LambdaRange {
    pub fn fixed(v: [f64; 4]) -> Self {
        LambdaRange { lo: v, hi: v }
    }

    fn validate(&self, what: &str) -> Result<()> {
        for i in 0..4 {
            if !(self.lo[i].is_finite() && self.hi[i].is_finite() && self.lo[i] <= self.hi[i]) {
                return Err(Error::Invalid(format!("{what} lambda range {i} is empty or non-finite")));
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut Stream) -> [f64; 4] {
        std::array::from_fn(|i| if self.lo[i] == self.hi[i] { self.lo[i] } else { rng.uniform(self.lo[i], self.hi[i]) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotometricRange {
    pub gain: [f64; 2],
    pub bias: [f64; 2],
    pub vignette: [f64; 2],
}

impl Default for PhotometricRange {
    fn default() -> Self {
        PhotometricRange { gain: [0.7, 1.0], bias: [-0.1, 0.1], vignette: [0.1, 0.3] }
    }
}

/// Per-image photometric shift applied in `[0, 1]` intensity:
/// `I' = gain * I * (1 - vignette * r^2) + bias`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Photometric {
    pub gain: f64,
    pub bias: f64,
    pub vignette: f64,
}

impl Photometric {
    pub fn neutral() -> Self {
        Photometric { gain: 1.0, bias: 0.0, vignette: 0.0 }
    }

    /// Applies the shift to pixels inside `mask`; fill pixels are untouched.
    pub fn apply(&self, img: &ImageTensor, mask: &Mask) -> ImageTensor {
        let (c, h, w) = img.shape();
        let mut out = img.clone();
        for y in 0..h {
            let v = camera::pixel_to_norm(y as f64, h);
            for x in 0..w {
                if !mask.get(y, x) {
                    continue;
                }
                let u = camera::pixel_to_norm(x as f64, w);
                let k = self.gain * (1.0 - self.vignette * (u * u + v * v));
                for ch in 0..c {
                    let i = (img.get(ch, y, x) as f64 + 1.0) * 0.5;
                    let j = (k * i + self.bias).clamp(0.0, 1.0);
                    out.set(ch, y, x, (2.0 * j - 1.0) as f32);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub image_size: usize,
    pub channels: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub synthetic_lambdas: LambdaRange,
    pub simreal_lambdas: LambdaRange,
    pub photometric: PhotometricRange,
    /// Distortion centre for both domains, normalized coordinates.
    pub center: [f64; 2],
    pub fill: f32,
    pub scene_kinds: Vec<SceneKind>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            image_size: 32,
            channels: 1,
            train_count: 2000,
            test_count: 200,
            synthetic_lambdas: LambdaRange { lo: [0.2, 0.0, 0.0, 0.0], hi: [0.35, 0.08, 0.04, 0.02] },
            simreal_lambdas: LambdaRange { lo: [-0.28, -0.04, -0.01, -0.005], hi: [-0.15, 0.0, 0.0, 0.0] },
            photometric: PhotometricRange::default(),
            center: [0.0, 0.0],
            fill: camera::DEFAULT_FILL,
            scene_kinds: SceneKind::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Invalid(format!("image_size {} is below 16", self.image_size)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Invalid(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.scene_kinds.is_empty() {
            return Err(Error::Invalid("no scene kinds configured".into()));
        }
        self.synthetic_lambdas.validate("synthetic")?;
        self.simreal_lambdas.validate("simreal")?;
        let p = &self.photometric;
        for (name, r) in [("gain", p.gain), ("bias", p.bias), ("vignette", p.vignette)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::Invalid(format!("photometric {name} range is empty")));
            }
        }
        if !self.center.iter().all(|v| v.is_finite() && v.abs() < 1.0) {
            return Err(Error::Invalid("distortion centre must lie inside the image".into()));
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_count,
            Split::Test => self.test_count,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Invalid(format!("unknown split `{s}`"))),
        }
    }
}

/// Evaluation-only labels of a simulated-real image.
#[derive(Clone, Debug, PartialEq)]
pub struct Sealed {
    pub target: ImageTensor,
    pub params: DistortionParams,
    pub photometric: Photometric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub fisheye: ImageTensor,
    /// Valid region of the fisheye image (false on fill pixels).
    pub mask: Mask,
    /// Ground-truth perspective image; synthetic domain only.
    pub target: Option<ImageTensor>,
    /// Distortion parameters; synthetic domain only.
    pub params: Option<DistortionParams>,
    pub domain: Domain,
    pub kind: SceneKind,
    pub seed: u64,
    pub sealed: Option<Sealed>,
}

impl SamplePair {
    /// Ground truth for evaluation, from whichever namespace holds it.
    pub fn eval_target(&self) -> Option<&ImageTensor> {
        self.target.as_ref().or(self.sealed.as_ref().map(|s| &s.target))
    }

    pub fn eval_params(&self) -> Option<&DistortionParams> {
        self.params.as_ref().or(self.sealed.as_ref().map(|s| &s.params))
    }
}

fn draw_params(rng: &mut Stream, model: RadialModel, range: &LambdaRange, center: [f64; 2]) -> Result<DistortionParams> {
    for _ in 0..MAX_REJECTIONS {
        let lambdas = range.draw(rng);
        let p = DistortionParams { model, lambdas, center };
        if p.is_monotone() {
            return Ok(p);
        }
    }
    Err(Error::RejectionExhausted(MAX_REJECTIONS))
}

fn draw_scene(rng: &mut Stream, cfg: &DatasetConfig) -> (SceneKind, ImageTensor) {
    let kind = cfg.scene_kinds[rng.int(0, cfg.scene_kinds.len() - 1)];
    let scene_seed = rng.next_u64();
    (kind, gen_scene(scene_seed, kind, cfg.image_size, cfg.channels))
}

/// Labeled pair: a scene, its polynomial-model fisheye view and the params.
/// Images are 8-bit quantized so that stored and in-memory data agree.
pub fn build_synthetic_pair(seed: u64, cfg: &DatasetConfig) -> Result<SamplePair> {
    cfg.validate()?;
    let mut rng = Stream::new(seed);
    let (kind, scene) = draw_scene(&mut rng, cfg);
    let params = draw_params(&mut rng, RadialModel::Polynomial, &cfg.synthetic_lambdas, cfg.center)?;
    let (fisheye, mask) = camera::synthesize_fisheye(&scene, &params, cfg.fill)?;
    Ok(SamplePair {
        fisheye: fisheye.quantized(),
        mask,
        target: Some(scene.quantized()),
        params: Some(params),
        domain: Domain::Synthetic,
        kind,
        seed,
        sealed: None,
    })
}

fn draw_photometric(rng: &mut Stream, r: &PhotometricRange) -> Photometric {
    let mut u = |v: [f64; 2]| if v[0] == v[1] { v[0] } else { rng.uniform(v[0], v[1]) };
    Photometric { gain: u(r.gain), bias: u(r.bias), vignette: u(r.vignette) }
}

/// Unlabeled image from the division model with a photometric shift; its
/// target, params and shift go to the sealed namespace.
pub fn build_simreal_image(seed: u64, cfg: &DatasetConfig) -> Result<SamplePair> {
    cfg.validate()?;
    let mut rng = Stream::new(seed);
    let (kind, scene) = draw_scene(&mut rng, cfg);
    let params = draw_params(&mut rng, RadialModel::Division, &cfg.simreal_lambdas, cfg.center)?;
    let photometric = draw_photometric(&mut rng, &cfg.photometric);
    let (fisheye, mask) = camera::synthesize_fisheye(&scene, &params, cfg.fill)?;
    let fisheye = photometric.apply(&fisheye, &mask);
    Ok(SamplePair {
        fisheye: fisheye.quantized(),
        mask,
        target: None,
        params: None,
        domain: Domain::SimReal,
        kind,
        seed,
        sealed: Some(Sealed { target: scene.quantized(), params, photometric }),
    })
}

/// Seed of sample `index` in a split/domain, derived from the master seed.
pub fn sample_seed(master: u64, split: Split, domain: Domain, index: usize) -> u64 {
    derive_seed(master, &format!("{}/{}", split.name(), domain.name()), index as u64)
}

pub fn build_sample(cfg: &DatasetConfig, split: Split, domain: Domain, index: usize) -> Result<SamplePair> {
    let seed = sample_seed(cfg.seed, split, domain, index);
    match domain {
        Domain::Synthetic => build_synthetic_pair(seed, cfg),
        Domain::SimReal => build_simreal_image(seed, cfg),
    }
}

/// Generates `count` samples (defaults to the configured split size) in
/// parallel; each sample depends only on its own derived seed.
pub fn build_split(cfg: &DatasetConfig, split: Split, domain: Domain, count: Option<usize>) -> Result<Vec<SamplePair>> {
    cfg.validate()?;
    let n = count.unwrap_or(cfg.count(split));
    dda_tensor::Exec::default().map(n, |i| build_sample(cfg, split, domain, i)).into_iter().collect()
}
