use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dda_core::eval::{evaluate, EvalOptions};
use dda_core::image::ImageTensor;
use dda_core::inference::{iterative_correct_batch, IterativeOptions};
use dda_core::model::{Architecture, Model, CHECKPOINT_MANIFEST};
use dda_core::rng::{derive_seed, Stream};
use dda_core::scenes::store::{load_eval_samples, read_config, write_dataset, CONFIG_FILE};
use dda_core::scenes::visible::{LabeledPair, TrainingSet};
use dda_core::scenes::{DatasetConfig, Domain};
use dda_core::training::{train as run_training, TrainConfig, CHECKPOINT_DIR};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::figures::grid;
use crate::record::{merge, write_json, RunRecord, SeedSource};
use crate::{EvalArgs, FiguresArgs, InferArgs, Mode, SynthArgs, TrainArgs, SEED_ENV};

/// Images per network call during inference.
const BATCH: usize = 16;

/// Flag, then `DDA_SEED`, then the config value.
fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<(u64, SeedSource)> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        let s = v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))?;
        return Ok((s, SeedSource::Env));
    }
    Ok(match config {
        Some(s) => (s, SeedSource::Config),
        None => (0, SeedSource::Default),
    })
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// `base` with the keys of an optional JSON file laid over it.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: Option<Value>) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    if let Some(p) = patch {
        merge(&mut v, p);
    }
    Ok(serde_json::from_value(v)?)
}

/// Accepts a training run directory or the checkpoint directory inside it.
fn checkpoint_dir(dir: &Path) -> Result<PathBuf> {
    for c in [dir.to_path_buf(), dir.join(CHECKPOINT_DIR)] {
        if c.join(CHECKPOINT_MANIFEST).is_file() {
            return Ok(c);
        }
    }
    bail!("no checkpoint found in {}", dir.display())
}

/// Dataset root (meaning its test split) or a split directory.
fn split_dir(dir: &Path) -> PathBuf {
    if dir.join(CONFIG_FILE).is_file() && dir.join("test").is_dir() {
        dir.join("test")
    } else {
        dir.to_path_buf()
    }
}

fn load_model(ckpt: &Path, record: &mut RunRecord) -> Result<(Model, String)> {
    let dir = checkpoint_dir(ckpt)?;
    let hash = record.input(&dir)?;
    let model = Model::load(&dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    Ok((model, hash))
}

/// Directory that receives `run.json` for a command writing a single file.
fn parent_of(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub(crate) fn synth(a: SynthArgs, argv: &[String]) -> Result<()> {
    let mut record = RunRecord::new("synth", argv);
    let patch = match &a.config {
        Some(p) => {
            record.input(p)?;
            Some(read_json(p)?)
        }
        None => None,
    };
    let from_file = patch.as_ref().and_then(|p| p.get("seed")).and_then(Value::as_u64);
    let mut cfg: DatasetConfig = overlay(&DatasetConfig::default(), patch)?;
    let (seed, source) = resolve_seed(a.seed, from_file)?;
    cfg.seed = seed;
    write_dataset(&cfg, &a.out).with_context(|| format!("writing dataset to {}", a.out.display()))?;
    record.config = serde_json::to_value(&cfg)?;
    record.seeds.insert("dataset".into(), seed);
    record.seed_source = source;
    record.write(&a.out)?;
    println!("wrote {} + {} train and {} + {} test images to {}", cfg.train_count, cfg.train_count, cfg.test_count, cfg.test_count, a.out.display());
    Ok(())
}

pub(crate) fn train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let mut record = RunRecord::new("train", argv);
    let data = read_config(&a.data).with_context(|| format!("reading dataset config in {}", a.data.display()))?;
    let patch = match &a.config {
        Some(p) => {
            record.input(p)?;
            Some(read_json(p)?)
        }
        None => None,
    };
    let arch: Architecture = match (&a.arch, patch.as_ref().and_then(|p| p.pointer("/model/architecture"))) {
        (Some(s), _) => s.parse()?,
        (None, Some(v)) => serde_json::from_value(v.clone())?,
        (None, None) => Architecture::Dda,
    };
    let mut base = TrainConfig::toy(arch);
    base.model = dda_core::model::ModelConfig::desk(data.image_size, data.channels, arch);
    let from_file = patch.as_ref().and_then(|p| p.get("seed")).and_then(Value::as_u64);
    let mut cfg: TrainConfig = overlay(&base, patch)?;
    cfg.model.architecture = arch;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    let (seed, source) = resolve_seed(a.seed, from_file)?;
    cfg.seed = seed;
    if cfg.model.image_size() != data.image_size || cfg.model.channels() != data.channels {
        bail!(
            "model expects {0}x{0}x{1} images, dataset has {2}x{2}x{3}",
            cfg.model.image_size(),
            cfg.model.channels(),
            data.image_size,
            data.channels
        );
    }
    record.input(&a.data.join(CONFIG_FILE))?;
    record.input(&a.data.join("train"))?;
    let set = TrainingSet::load(&a.data.join("train"))?;
    let validation: Vec<LabeledPair> = if cfg.validation_size > 0 {
        load_eval_samples(&a.data.join("test"), Domain::Synthetic, Some(cfg.validation_size))?
            .into_iter()
            .filter_map(|p| Some(LabeledPair { target: p.target?, fisheye: p.fisheye }))
            .collect()
    } else {
        Vec::new()
    };
    record.config = json!({ "train": cfg, "dataset": data });
    record.seeds.insert("train".into(), seed);
    record.seeds.insert("dataset".into(), data.seed);
    record.seed_source = source;
    record.write(&a.out)?;
    let outcome = run_training(&cfg, &set, &validation, &a.out)?;
    match outcome.log.last() {
        Some(r) => println!("step {} loss {:.5}; checkpoint in {}", r.step, r.total, outcome.checkpoint.display()),
        None => println!("no steps run; checkpoint in {}", outcome.checkpoint.display()),
    }
    Ok(())
}

/// PNG inputs of `infer`: one file or a directory's PNGs by name.
fn input_images(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    files.sort();
    if files.is_empty() {
        bail!("no PNG images in {}", path.display());
    }
    Ok(files)
}

pub(crate) fn infer(a: InferArgs, argv: &[String]) -> Result<()> {
    let mut record = RunRecord::new("infer", argv);
    let (model, ckpt_hash) = load_model(&a.ckpt, &mut record)?;
    let (seed, source) = resolve_seed(a.seed, None)?;
    let domain = a.domain.domain();
    let files = input_images(&a.input)?;
    let (size, channels) = (model.config().image_size(), model.config().channels());
    let mut images = Vec::with_capacity(files.len());
    for f in &files {
        record.input(f)?;
        let img = ImageTensor::load_png(f, channels)?;
        if img.height() != size || img.width() != size {
            bail!("{} is {}x{}, the model takes {size}x{size}", f.display(), img.width(), img.height());
        }
        images.push(img);
    }
    let schedule_len = model.nets.schedule.steps();
    let steps = match a.mode {
        Mode::Onepass => {
            if !model.architecture().uses_opn() {
                bail!("this checkpoint has no one-pass network; use --mode iterative");
            }
            if a.steps.is_some() {
                bail!("--steps only applies to --mode iterative");
            }
            1
        }
        Mode::Iterative => a.steps.unwrap_or(schedule_len),
    };
    let mut outputs = Vec::with_capacity(images.len());
    for (ci, chunk) in images.chunks(BATCH).enumerate() {
        let out = match a.mode {
            Mode::Onepass => model.one_pass(chunk)?,
            Mode::Iterative => {
                let mut rngs: Vec<Stream> =
                    (0..chunk.len()).map(|i| Stream::new(derive_seed(seed, "infer", (ci * BATCH + i) as u64))).collect();
                let opts = IterativeOptions { steps: Some(steps), ..IterativeOptions::default() };
                iterative_correct_batch(chunk, domain, &model, &mut rngs, &opts)?
            }
        };
        outputs.extend(out.into_iter().map(ImageTensor::clamped));
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mode = match a.mode {
        Mode::Onepass => "onepass",
        Mode::Iterative => "iterative",
    };
    for (i, (f, img)) in files.iter().zip(&outputs).enumerate() {
        let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("{i:05}"));
        let png = a.out.join(format!("{stem}.png"));
        img.save_png(&png)?;
        let sidecar = json!({
            "input": f.display().to_string(),
            "output": png.file_name().map(|n| n.to_string_lossy().into_owned()),
            "mode": mode,
            "domain": domain,
            "seed": seed,
            "image_seed": if a.mode == Mode::Iterative { Some(derive_seed(seed, "infer", i as u64)) } else { None },
            "steps": steps,
            "checkpoint_hash": ckpt_hash,
            "version": crate::record::version(),
        });
        write_json(&a.out.join(format!("{stem}.json")), &sidecar)?;
    }
    record.config = json!({ "mode": mode, "domain": domain, "steps": steps, "model": model.config() });
    record.seeds.insert("infer".into(), seed);
    record.seed_source = source;
    record.write(&a.out)?;
    println!("corrected {} image(s) into {}", outputs.len(), a.out.display());
    Ok(())
}

pub(crate) fn eval(a: EvalArgs, argv: &[String]) -> Result<()> {
    let mut record = RunRecord::new("eval", argv);
    let (model, ckpt_hash) = load_model(&a.ckpt, &mut record)?;
    let (seed, source) = resolve_seed(a.seed, None)?;
    let split = split_dir(&a.data);
    record.input(&split)?;
    let mut domains = Vec::new();
    for d in [Domain::Synthetic, Domain::SimReal] {
        if split.join(d.name()).is_dir() {
            domains.push(load_eval_samples(&split, d, a.limit)?);
        }
    }
    if domains.iter().all(Vec::is_empty) {
        bail!("no evaluation samples in {}", split.display());
    }
    let opts = EvalOptions { seed, iterative: !a.onepass_only, steps: a.steps, batch: a.batch.max(1), ..EvalOptions::default() };
    let report = evaluate(&model, &domains, &opts)?;
    let doc = json!({ "checkpoint_hash": ckpt_hash, "report": report });
    if let Some(p) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    write_json(&a.out, &doc)?;
    record.config = json!({ "options": opts, "data": split.display().to_string(), "model": model.config() });
    record.seeds.insert("eval".into(), seed);
    record.seed_source = source;
    record.write(&parent_of(&a.out))?;
    for d in &report.domains {
        let m = &d.mean;
        let show = |s: Option<&dda_core::eval::Scores>| s.map_or("-".to_string(), |s| format!("{:.2}", s.psnr_masked));
        println!(
            "{}: {} images, masked PSNR uncorrected {:.2} one-pass {} iterative {}",
            d.domain,
            d.count,
            m.uncorrected.psnr_masked,
            show(m.one_pass.as_ref()),
            show(m.iterative.as_ref())
        );
    }
    Ok(())
}

pub(crate) fn figures(a: FiguresArgs, argv: &[String]) -> Result<()> {
    let mut record = RunRecord::new("figures", argv);
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    let (model, _) = load_model(&a.ckpt, &mut record)?;
    let (seed, source) = resolve_seed(a.seed, None)?;
    let split = split_dir(&a.data);
    record.input(&split)?;
    let domain = a.domain.domain();
    let samples = load_eval_samples(&split, domain, Some(a.count))?;
    if samples.is_empty() {
        bail!("no {domain} samples in {}", split.display());
    }
    let inputs: Vec<ImageTensor> = samples.iter().map(|s| s.fisheye.clone()).collect();
    let one_pass = if model.architecture().uses_opn() { Some(model.one_pass(&inputs)?) } else { None };
    let mut rngs: Vec<Stream> = (0..inputs.len()).map(|i| Stream::new(derive_seed(seed, "figures", i as u64))).collect();
    let opts = IterativeOptions { steps: a.steps, ..IterativeOptions::default() };
    let iterative = iterative_correct_batch(&inputs, domain, &model, &mut rngs, &opts)?;
    let rows = vec![
        inputs.into_iter().map(Some).collect(),
        (0..samples.len()).map(|i| one_pass.as_ref().map(|o| o[i].clone().clamped())).collect(),
        iterative.into_iter().map(Some).collect(),
        samples.iter().map(|s| s.eval_target().cloned()).collect(),
    ];
    let fig = grid(&rows)?;
    if let Some(p) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    fig.save_png(&a.out)?;
    record.config = json!({
        "domain": domain,
        "count": samples.len(),
        "steps": a.steps.unwrap_or(model.nets.schedule.steps()),
        "rows": crate::GRID_ROWS,
        "data": split.display().to_string(),
        "model": model.config(),
    });
    record.seeds.insert("figures".into(), seed);
    record.seed_source = source;
    record.write(&parent_of(&a.out))?;
    println!("wrote a {}-column grid to {}", samples.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_keeps_unspecified_keys() {
        let cfg: DatasetConfig = overlay(&DatasetConfig::default(), Some(json!({"image_size": 16}))).unwrap();
        assert_eq!(cfg, DatasetConfig { image_size: 16, ..DatasetConfig::default() });
        assert!(overlay(&DatasetConfig::default(), Some(json!({"image_size": "big"}))).is_err());
    }

    #[test]
    fn file_outputs_record_next_to_themselves() {
        assert_eq!(parent_of(Path::new("report.json")), PathBuf::from("."));
        assert_eq!(parent_of(Path::new("out/fig.png")), PathBuf::from("out"));
    }
}
