//! The three networks of one experiment, their parameters and the
//! checkpoint format shared by training and inference.

use std::fs;
use std::path::Path;

use dda_tensor::{Exec, Float, Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseSchedule, ScheduleConfig};
use crate::error::{Error, IoContext, Result};
use crate::image::ImageTensor;
use crate::nets::{config_hash, Denoiser, DenoiserConfig, Opn, OpnConfig, ParamSet};
use crate::rng::Stream;

/// Which parts of the dual architecture are trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Conditional diffusion only, conditioned on the raw fisheye image.
    Cdm,
    /// Conditional diffusion conditioned on the one-pass correction.
    CdmOpn,
    /// Both diffusion modules; the conditional one sees both domains.
    Dda,
}

impl Architecture {
    pub fn uses_opn(self) -> bool {
        self != Architecture::Cdm
    }

    pub fn uses_uncond(self) -> bool {
        self == Architecture::Dda
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cdm" => Ok(Architecture::Cdm),
            "cdm-opn" | "cdm+opn" | "cdmopn" => Ok(Architecture::CdmOpn),
            "dda" => Ok(Architecture::Dda),
            _ => Err(Error::Invalid(format!("unknown architecture `{s}`"))),
        }
    }
}

/// Second input of the unconditional module next to the noisy real image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncondInput {
    NoisyPerspective,
    NoisyFisheye,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub schedule: ScheduleConfig,
    pub opn: OpnConfig,
    pub cond: DenoiserConfig,
    pub uncond: DenoiserConfig,
    pub uncond_second_input: UncondInput,
}

impl ModelConfig {
    pub fn desk(image_size: usize, channels: usize, architecture: Architecture) -> Self {
        ModelConfig {
            architecture,
            schedule: ScheduleConfig::default(),
            opn: OpnConfig::desk(image_size, channels),
            cond: DenoiserConfig::desk(image_size, channels, 3),
            uncond: DenoiserConfig::desk(image_size, channels, 2),
            uncond_second_input: UncondInput::NoisyPerspective,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        self.opn.validate()?;
        self.cond.validate()?;
        self.uncond.validate()?;
        if self.cond.stacks != 3 || self.uncond.stacks != 2 {
            return Err(Error::Invalid("conditional module takes 3 stacks, unconditional 2".into()));
        }
        let sizes = [self.opn.image_size, self.cond.image_size, self.uncond.image_size];
        let chans = [self.opn.channels, self.cond.channels, self.uncond.channels];
        if sizes.iter().any(|&s| s != sizes[0]) || chans.iter().any(|&c| c != chans[0]) {
            return Err(Error::Invalid("all networks must agree on image size and channels".into()));
        }
        Ok(())
    }

    pub fn image_size(&self) -> usize {
        self.opn.image_size
    }

    pub fn channels(&self) -> usize {
        self.opn.channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub opn: ParamSet<T>,
    pub cond: ParamSet<T>,
    pub uncond: ParamSet<T>,
}

impl<T: Float> ModelParams<T> {
    pub fn cast<U: Float>(&self) -> ModelParams<U> {
        ModelParams { opn: self.opn.cast(), cond: self.cond.cast(), uncond: self.uncond.cast() }
    }

    /// `(name, set)` in optimizer order.
    pub fn sets(&self) -> [(&'static str, &ParamSet<T>); 3] {
        [("opn", &self.opn), ("cond", &self.cond), ("uncond", &self.uncond)]
    }

    pub fn sets_mut(&mut self) -> [&mut ParamSet<T>; 3] {
        [&mut self.opn, &mut self.cond, &mut self.uncond]
    }

    pub fn all_finite(&self) -> bool {
        self.opn.all_finite() && self.cond.all_finite() && self.uncond.all_finite()
    }
}

/// Network definitions without parameters.
#[derive(Clone, Debug)]
pub struct Nets {
    pub config: ModelConfig,
    pub schedule: NoiseSchedule,
    pub opn: Opn,
    pub cond: Denoiser,
    pub uncond: Denoiser,
}

impl Nets {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Nets {
            schedule: config.schedule.build()?,
            opn: Opn::new(config.opn.clone())?,
            cond: Denoiser::new(config.cond.clone())?,
            uncond: Denoiser::new(config.uncond.clone())?,
            config,
        })
    }

    /// Initial parameters of all three networks, each from its own stream,
    /// so every architecture starts from the same weights for a given seed.
    pub fn init<T: Float>(&self, seed: u64) -> ModelParams<T> {
        ModelParams {
            opn: self.opn.init(&mut Stream::derived(seed, "init/opn")),
            cond: self.cond.init(&mut Stream::derived(seed, "init/cond")),
            uncond: self.uncond.init(&mut Stream::derived(seed, "init/uncond")),
        }
    }

    pub fn hashes(&self) -> [String; 3] {
        [config_hash(&self.config.opn), config_hash(&self.config.cond), config_hash(&self.config.uncond)]
    }
}

/// Trained networks ready for inference.
#[derive(Clone, Debug)]
pub struct Model {
    pub nets: Nets,
    pub params: ModelParams<f32>,
}

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";

impl Model {
    pub fn new(nets: Nets, params: ModelParams<f32>) -> Self {
        Model { nets, params }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.nets.config
    }

    pub fn architecture(&self) -> Architecture {
        self.nets.config.architecture
    }

    fn check_images(&self, images: &[ImageTensor]) -> Result<()> {
        let (s, c) = (self.config().image_size(), self.config().channels());
        for im in images {
            if im.shape() != (c, s, s) {
                return Err(Error::Shape(format!("model expects {c}x{s}x{s} images, got {:?}", im.shape())));
            }
        }
        Ok(())
    }

    /// One-pass corrections `warp(F, flow(F))`, or an error when the
    /// architecture has no flow network.
    pub fn one_pass(&self, images: &[ImageTensor]) -> Result<Vec<ImageTensor>> {
        if !self.architecture().uses_opn() {
            return Err(Error::Invalid("this architecture has no one-pass network".into()));
        }
        self.check_images(images)?;
        let mut g = Graph::new(Exec::default());
        let p = self.params.opn.bind(&mut g, false);
        let f = g.input(ImageTensor::stack::<f32>(images)?);
        let (c, _) = self.nets.opn.correct(&mut g, &p, f)?;
        Ok(ImageTensor::batch_to_vec(g.value(c))?.into_iter().map(ImageTensor::clamped).collect())
    }

    /// Predicted flows, `[N, 2, H, W]`.
    pub fn flows(&self, images: &[ImageTensor]) -> Result<Tensor<f32>> {
        self.check_images(images)?;
        let mut g = Graph::new(Exec::default());
        let p = self.params.opn.bind(&mut g, false);
        let f = g.input(ImageTensor::stack::<f32>(images)?);
        let flow = self.nets.opn.flow(&mut g, &p, f)?;
        Ok(g.value(flow).clone())
    }

    /// Conditional noise prediction for a batch.
    pub fn cond_eps(&self, x_t: &Tensor<f32>, sqrt_alpha_bar: &[f64], slot_a: &Tensor<f32>, slot_b: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new(Exec::default());
        let p = self.params.cond.bind(&mut g, false);
        let x = g.input(x_t.clone());
        let a = g.input(slot_a.clone());
        let b = g.input(slot_b.clone());
        let e = self.nets.cond.forward(&mut g, &p, &[x, a, b], sqrt_alpha_bar)?;
        Ok(g.value(e).clone())
    }

    /// Unconditional noise prediction for a batch.
    pub fn uncond_eps(&self, noisy_real: &Tensor<f32>, second: &Tensor<f32>, sqrt_alpha_bar: &[f64]) -> Result<Tensor<f32>> {
        let mut g = Graph::new(Exec::default());
        let p = self.params.uncond.bind(&mut g, false);
        let x = g.input(noisy_real.clone());
        let y = g.input(second.clone());
        let e = self.nets.uncond.forward(&mut g, &p, &[x, y], sqrt_alpha_bar)?;
        Ok(g.value(e).clone())
    }

    /// Writes the three parameter sets into `dir`.
    pub fn save_params(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let hashes = self.nets.hashes();
        for ((stem, set), h) in self.params.sets().into_iter().zip(&hashes) {
            set.save(dir, stem, h)?;
        }
        Ok(())
    }

    /// Loads the networks of a checkpoint directory written by training.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CHECKPOINT_MANIFEST);
        let text = fs::read_to_string(&path).at(&path)?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let cfg: ModelConfig = serde_json::from_value(v.get("model").cloned().unwrap_or_default())
            .map_err(|e| Error::Checkpoint { path: path.clone(), reason: e.to_string() })?;
        Self::load_params(dir, cfg)
    }

    pub fn load_params(dir: &Path, cfg: ModelConfig) -> Result<Self> {
        let nets = Nets::new(cfg)?;
        let layout = nets.init::<f32>(0);
        let [ho, hc, hu] = nets.hashes();
        let params = ModelParams {
            opn: ParamSet::load(dir, "opn", &ho, &layout.opn)?,
            cond: ParamSet::load(dir, "cond", &hc, &layout.cond)?,
            uncond: ParamSet::load(dir, "uncond", &hu, &layout.uncond)?,
        };
        Ok(Model { nets, params })
    }
}
