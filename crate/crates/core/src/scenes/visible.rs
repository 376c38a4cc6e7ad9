//! The training-visible side of a dataset: manifest records and a loader
//! that only ever opens `manifest.json` and the images it lists.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::DistortionParams;
use crate::error::{Error, IoContext, Result};
use crate::image::ImageTensor;

use super::{Domain, SamplePair, SceneKind};

pub const MANIFEST: &str = "manifest.json";
pub const TARGET_DIR: &str = "target";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub index: usize,
    pub seed: u64,
    pub kind: SceneKind,
    pub file: String,
    pub target: String,
    pub params: DistortionParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRealRecord {
    pub index: usize,
    pub seed: u64,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest<R> {
    pub generator: String,
    pub split: String,
    pub domain: Domain,
    pub master_seed: u64,
    pub image_size: usize,
    pub channels: usize,
    pub records: Vec<R>,
}

pub fn read_manifest<R: for<'de> Deserialize<'de>>(dir: &Path) -> Result<Manifest<R>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).at(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Dataset { path, reason: e.to_string() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    pub fisheye: ImageTensor,
    pub target: ImageTensor,
}

/// Everything training may see: labeled synthetic pairs and unlabeled
/// simulated-real fisheye images.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub synthetic: Vec<LabeledPair>,
    pub real: Vec<ImageTensor>,
}

impl TrainingSet {
    /// Loads `<split_dir>/synthetic` and `<split_dir>/simreal`.
    pub fn load(split_dir: &Path) -> Result<Self> {
        let syn_dir = split_dir.join(Domain::Synthetic.name());
        let real_dir = split_dir.join(Domain::SimReal.name());
        let syn: Manifest<SyntheticRecord> = read_manifest(&syn_dir)?;
        let real: Manifest<SimRealRecord> = read_manifest(&real_dir)?;
        let c = syn.channels;
        let synthetic = syn
            .records
            .iter()
            .map(|r| {
                Ok(LabeledPair {
                    fisheye: ImageTensor::load_png(&syn_dir.join(&r.file), c)?,
                    target: ImageTensor::load_png(&syn_dir.join(&r.target), c)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let real = real
            .records
            .iter()
            .map(|r| ImageTensor::load_png(&real_dir.join(&r.file), real.channels))
            .collect::<Result<Vec<_>>>()?;
        Self::new(synthetic, real).map_err(|e| Error::Dataset { path: PathBuf::from(split_dir), reason: e.to_string() })
    }

    pub fn new(synthetic: Vec<LabeledPair>, real: Vec<ImageTensor>) -> Result<Self> {
        if synthetic.is_empty() || real.is_empty() {
            return Err(Error::Invalid("training needs at least one image per domain".into()));
        }
        let first = &synthetic[0].fisheye;
        let ok = synthetic.iter().all(|p| p.fisheye.same_shape(first) && p.target.same_shape(first))
            && real.iter().all(|r| r.same_shape(first));
        if !ok || first.height() != first.width() {
            return Err(Error::Shape("training images must share one square shape".into()));
        }
        Ok(TrainingSet { synthetic, real })
    }

    /// Keeps only the training-visible fields of generated samples.
    pub fn from_pairs(synthetic: &[SamplePair], real: &[SamplePair]) -> Result<Self> {
        let syn = synthetic
            .iter()
            .map(|p| match (&p.domain, &p.target) {
                (Domain::Synthetic, Some(t)) => Ok(LabeledPair { fisheye: p.fisheye.clone(), target: t.clone() }),
                _ => Err(Error::Invalid("synthetic samples must carry a target".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        let real = real
            .iter()
            .map(|p| match p.domain {
                Domain::SimReal => Ok(p.fisheye.clone()),
                Domain::Synthetic => Err(Error::Invalid("expected simulated-real samples".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(syn, real)
    }

    /// `(channels, size)` of every image.
    pub fn image_shape(&self) -> (usize, usize) {
        let f = &self.synthetic[0].fisheye;
        (f.channels(), f.height())
    }
}
