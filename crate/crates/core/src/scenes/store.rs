//! Dataset layout on disk: `<root>/<split>/<domain>/<index>.png` with a
//! `manifest.json` per domain. Synthetic targets sit in `target/`; the
//! simulated-real labels go to `sealed/` and `manifest.sealed.json`, which
//! only the evaluation loader here reads.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{self, DistortionParams};
use crate::error::{Error, IoContext, Result};
use crate::image::{ImageTensor, Mask};

use super::visible::{read_manifest, Manifest, SimRealRecord, SyntheticRecord, MANIFEST, TARGET_DIR};
use super::{build_split, DatasetConfig, Domain, Photometric, SamplePair, SceneKind, Sealed, Split, GENERATOR_VERSION};

pub const SEALED_DIR: &str = "sealed";
pub const SEALED_MANIFEST: &str = "manifest.sealed.json";
pub const CONFIG_FILE: &str = "dataset.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SealedRecord {
    pub index: usize,
    pub kind: SceneKind,
    pub target: String,
    pub params: DistortionParams,
    pub photometric: Photometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SealedManifest {
    pub generator: String,
    pub split: String,
    pub records: Vec<SealedRecord>,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).at(path)
}

fn header<R>(cfg: &DatasetConfig, split: Split, domain: Domain, records: Vec<R>) -> Manifest<R> {
    Manifest {
        generator: GENERATOR_VERSION.to_string(),
        split: split.name().to_string(),
        domain,
        master_seed: cfg.seed,
        image_size: cfg.image_size,
        channels: cfg.channels,
        records,
    }
}

/// Writes one split/domain directory from generated samples.
pub fn write_samples(dir: &Path, cfg: &DatasetConfig, split: Split, domain: Domain, samples: &[SamplePair]) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    match domain {
        Domain::Synthetic => {
            fs::create_dir_all(dir.join(TARGET_DIR)).at(dir)?;
            let mut records = Vec::with_capacity(samples.len());
            for (i, s) in samples.iter().enumerate() {
                let (Some(target), Some(params)) = (&s.target, s.params) else {
                    return Err(Error::Invalid(format!("synthetic sample {i} lacks its label")));
                };
                let file = format!("{i}.png");
                let tfile = format!("{TARGET_DIR}/{i}.png");
                s.fisheye.save_png(&dir.join(&file))?;
                target.save_png(&dir.join(&tfile))?;
                records.push(SyntheticRecord { index: i, seed: s.seed, kind: s.kind, file, target: tfile, params });
            }
            write_json(&dir.join(MANIFEST), &header(cfg, split, domain, records))
        }
        Domain::SimReal => {
            fs::create_dir_all(dir.join(SEALED_DIR)).at(dir)?;
            let mut records = Vec::with_capacity(samples.len());
            let mut sealed = Vec::with_capacity(samples.len());
            for (i, s) in samples.iter().enumerate() {
                let Some(seal) = &s.sealed else {
                    return Err(Error::Invalid(format!("simulated-real sample {i} lacks sealed labels")));
                };
                let file = format!("{i}.png");
                let tfile = format!("{SEALED_DIR}/{i}.png");
                s.fisheye.save_png(&dir.join(&file))?;
                seal.target.save_png(&dir.join(&tfile))?;
                records.push(SimRealRecord { index: i, seed: s.seed, file });
                sealed.push(SealedRecord {
                    index: i,
                    kind: s.kind,
                    target: tfile,
                    params: seal.params,
                    photometric: seal.photometric,
                });
            }
            write_json(&dir.join(MANIFEST), &header(cfg, split, domain, records))?;
            write_json(
                &dir.join(SEALED_MANIFEST),
                &SealedManifest { generator: GENERATOR_VERSION.to_string(), split: split.name().to_string(), records: sealed },
            )
        }
    }
}

/// Generates and writes both splits of both domains under `root`.
pub fn write_dataset(cfg: &DatasetConfig, root: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(root).at(root)?;
    write_json(&root.join(CONFIG_FILE), cfg)?;
    for split in [Split::Train, Split::Test] {
        for domain in [Domain::Synthetic, Domain::SimReal] {
            let samples = build_split(cfg, split, domain, None)?;
            write_samples(&root.join(split.name()).join(domain.name()), cfg, split, domain, &samples)?;
        }
    }
    Ok(())
}

pub fn read_config(root: &Path) -> Result<DatasetConfig> {
    let path = root.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Valid region of a fisheye rendered with `params`.
pub fn synthesis_mask(params: &DistortionParams, size: usize) -> Result<Mask> {
    Ok(camera::synthesize_fisheye(&ImageTensor::filled(1, size, size, 0.0), params, 0.0)?.1)
}

/// Loads a split/domain directory with its labels, for evaluation only.
/// `limit` keeps the first records.
pub fn load_eval_samples(split_dir: &Path, domain: Domain, limit: Option<usize>) -> Result<Vec<SamplePair>> {
    let dir = split_dir.join(domain.name());
    let take = |n: usize| limit.unwrap_or(n).min(n);
    match domain {
        Domain::Synthetic => {
            let m: Manifest<SyntheticRecord> = read_manifest(&dir)?;
            m.records[..take(m.records.len())]
                .iter()
                .map(|r| {
                    Ok(SamplePair {
                        fisheye: ImageTensor::load_png(&dir.join(&r.file), m.channels)?,
                        mask: synthesis_mask(&r.params, m.image_size)?,
                        target: Some(ImageTensor::load_png(&dir.join(&r.target), m.channels)?),
                        params: Some(r.params),
                        domain,
                        kind: r.kind,
                        seed: r.seed,
                        sealed: None,
                    })
                })
                .collect()
        }
        Domain::SimReal => {
            let m: Manifest<SimRealRecord> = read_manifest(&dir)?;
            let path = dir.join(SEALED_MANIFEST);
            let text = fs::read_to_string(&path).at(&path)?;
            let sealed: SealedManifest = serde_json::from_str(&text)?;
            if sealed.records.len() != m.records.len() {
                return Err(Error::Dataset { path, reason: "sealed manifest does not match".into() });
            }
            m.records[..take(m.records.len())]
                .iter()
                .zip(&sealed.records)
                .map(|(r, s)| {
                    Ok(SamplePair {
                        fisheye: ImageTensor::load_png(&dir.join(&r.file), m.channels)?,
                        mask: synthesis_mask(&s.params, m.image_size)?,
                        target: None,
                        params: None,
                        domain,
                        kind: s.kind,
                        seed: r.seed,
                        sealed: Some(Sealed {
                            target: ImageTensor::load_png(&dir.join(&s.target), m.channels)?,
                            params: s.params,
                            photometric: s.photometric,
                        }),
                    })
                })
                .collect()
        }
    }
}
