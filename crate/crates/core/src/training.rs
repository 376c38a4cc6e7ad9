//! Joint training of the one-pass network and both diffusion modules.
//!
//! Each step corrects a synthetic and a simulated-real batch with the
//! one-pass network, draws one noise level and one noise tensor per sample,
//! evaluates both noise-prediction losses and takes a single Adam step over
//! all trained parameters. All randomness comes from two named streams
//! (`data`, `noise`) whose positions are checkpointed, so a resumed run
//! reproduces the uninterrupted one bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use dda_tensor::{Exec, Float, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::image::ImageTensor;
use crate::metrics::psnr;
use crate::model::{Architecture, Model, ModelConfig, ModelParams, Nets, UncondInput, CHECKPOINT_MANIFEST};
use crate::nets::{Bound, ParamSet};
use crate::rng::{Stream, StreamState};
use crate::scenes::visible::{LabeledPair, TrainingSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// `|eps - S|_1 + |eps - R|_1`.
    SumOfL1,
    /// `|2 eps - S - R|_1`.
    CombinedResidual,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning-rate multiplier for the one-pass network.
    pub opn_lr_scale: f64,
    pub adam: AdamConfig,
    pub steps: u64,
    pub checkpoint_every: u64,
    /// Steps between one-pass validation passes; 0 disables them.
    pub validate_every: u64,
    /// Held-out synthetic pairs used for validation.
    pub validation_size: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    /// Use one noise draw for both branches.
    pub shared_noise: bool,
    /// Clip the global gradient norm to this value.
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    /// The desk-scale toy run.
    pub fn toy(architecture: Architecture) -> Self {
        TrainConfig {
            model: ModelConfig::desk(32, 1, architecture),
            batch_size: 8,
            lr: 1e-3,
            opn_lr_scale: 3.0,
            adam: AdamConfig::default(),
            steps: 3000,
            checkpoint_every: 500,
            validate_every: 250,
            validation_size: 64,
            seed: 0,
            loss_mode: LossMode::SumOfL1,
            shared_noise: true,
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite() && self.opn_lr_scale > 0.0 && self.opn_lr_scale.is_finite()) {
            return Err(Error::Invalid("learning rate must be positive".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Invalid("Adam moments must lie in [0, 1) and eps be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Invalid("gradient clip must be positive".into()));
            }
        }
        Ok(())
    }

    /// Equal apart from the step budget, so a run can be extended on resume.
    fn compatible(&self, other: &TrainConfig) -> bool {
        TrainConfig { steps: 0, ..self.clone() } == TrainConfig { steps: 0, ..other.clone() }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy(Architecture::Dda)
    }
}

/// Packed tensors and noise draws of one step.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub syn_fisheye: Tensor<T>,
    pub syn_target: Tensor<T>,
    pub real_fisheye: Tensor<T>,
    pub eps_syn: Tensor<T>,
    pub eps_real: Tensor<T>,
    pub alpha_bar: Vec<f64>,
}

impl<T: Float> Batch<T> {
    pub fn sqrt_alpha_bar(&self) -> Vec<f64> {
        self.alpha_bar.iter().map(|a| a.sqrt()).collect()
    }
}

/// Per-sample `sqrt(ab_i) x_i + sqrt(1 - ab_i) eps_i`.
pub fn q_sample_batch<T: Float>(x: &Tensor<T>, eps: &Tensor<T>, alpha_bar: &[f64]) -> Tensor<T> {
    assert_eq!(x.shape(), eps.shape());
    let per = x.len() / alpha_bar.len();
    let mut out = x.clone();
    for (i, &ab) in alpha_bar.iter().enumerate() {
        let (a, b) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
        let r = i * per..(i + 1) * per;
        for ((o, &xv), &ev) in out.data_mut()[r.clone()].iter_mut().zip(&x.data()[r.clone()]).zip(&eps.data()[r]) {
            *o = a * xv + b * ev;
        }
    }
    out
}

pub struct BoundModel<'a> {
    pub opn: Bound<'a>,
    pub cond: Bound<'a>,
    pub uncond: Bound<'a>,
}

pub struct ObjectiveVars {
    pub total: Var,
    pub l_syn: Var,
    pub l_real: Option<Var>,
}

/// Combines the branch outputs into the training loss. `r_out` is absent
/// for architectures without the unconditional module.
pub fn assemble_loss<T: Float>(
    g: &mut Graph<T>,
    s_out: Var,
    r_out: Option<Var>,
    eps_syn: Var,
    eps_real: Var,
    mode: LossMode,
    detach_syn: bool,
) -> ObjectiveVars {
    let l_syn = g.l1_mean(s_out, eps_syn);
    let l_real = r_out.map(|r| g.l1_mean(r, eps_real));
    let syn_term = if detach_syn { g.detach(l_syn) } else { l_syn };
    let total = match (mode, r_out, l_real) {
        (LossMode::SumOfL1, Some(_), Some(lr)) => g.add(syn_term, lr),
        (LossMode::CombinedResidual, Some(r), _) => {
            let target = g.add(eps_syn, eps_real);
            let s = if detach_syn { g.detach(s_out) } else { s_out };
            let pred = g.add(s, r);
            g.l1_mean(pred, target)
        }
        _ => syn_term,
    };
    ObjectiveVars { total, l_syn, l_real }
}

/// Records the full training objective for one batch.
pub fn objective<T: Float>(
    g: &mut Graph<T>,
    nets: &Nets,
    p: &BoundModel,
    batch: &Batch<T>,
    mode: LossMode,
    detach_syn: bool,
) -> Result<ObjectiveVars> {
    let arch = nets.config.architecture;
    let sab = batch.sqrt_alpha_bar();
    let fs = g.input(batch.syn_fisheye.clone());
    let fr = g.input(batch.real_fisheye.clone());
    let (slot_a, slot_b) = match arch {
        Architecture::Cdm => (fs, fs),
        Architecture::CdmOpn => {
            let (cs, _) = nets.opn.correct(g, &p.opn, fs)?;
            (cs, cs)
        }
        Architecture::Dda => {
            let (cs, _) = nets.opn.correct(g, &p.opn, fs)?;
            let (cr, _) = nets.opn.correct(g, &p.opn, fr)?;
            (cs, cr)
        }
    };
    let noisy_syn = q_sample_batch(&batch.syn_target, &batch.eps_syn, &batch.alpha_bar);
    let eps_syn = g.input(batch.eps_syn.clone());
    let eps_real = g.input(batch.eps_real.clone());
    let ns = g.input(noisy_syn.clone());
    let s_out = nets.cond.forward(g, &p.cond, &[ns, slot_a, slot_b], &sab)?;
    let r_out = if arch.uses_uncond() {
        let noisy_real = g.input(q_sample_batch(&batch.real_fisheye, &batch.eps_real, &batch.alpha_bar));
        let second = match nets.config.uncond_second_input {
            UncondInput::NoisyPerspective => ns,
            UncondInput::NoisyFisheye => g.input(q_sample_batch(&batch.syn_fisheye, &batch.eps_syn, &batch.alpha_bar)),
        };
        Some(nets.uncond.forward(g, &p.uncond, &[noisy_real, second], &sab)?)
    } else {
        None
    };
    Ok(assemble_loss(g, s_out, r_out, eps_syn, eps_real, mode, detach_syn))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub l_syn: f64,
    pub l_real: Option<f64>,
    pub total: f64,
    pub val_psnr_onepass: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,L_syn,L_real,total,val_psnr_onepass";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl LossRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.l_syn, opt(self.l_real), self.total, opt(self.val_psnr_onepass))
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Invalid(format!("bad metrics row `{line}`"));
        if f.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad())
            }
        };
        Ok(LossRecord {
            step: f[0].parse().map_err(|_| bad())?,
            l_syn: num(f[1])?.ok_or_else(bad)?,
            l_real: num(f[2])?,
            total: num(f[3])?.ok_or_else(bad)?,
            val_psnr_onepass: num(f[4])?,
        })
    }
}

pub fn write_metrics(path: &Path, log: &[LossRecord]) -> Result<()> {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in log {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    fs::write(path, s).at(path)
}

pub fn read_metrics(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path).at(path)?;
    text.lines().skip(1).filter(|l| !l.is_empty()).map(LossRecord::parse_row).collect()
}

/// Adam over the concatenated parameter list of all three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: ModelParams<f32>,
    pub v: ModelParams<f32>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ModelParams<f32>) -> Self {
        let z = |p: &ParamSet<f32>| p.zeros_like();
        let zeros = ModelParams { opn: z(&params.opn), cond: z(&params.cond), uncond: z(&params.uncond) };
        Adam { m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One update; `grads[k][i]` is the gradient of tensor `i` of set `k`,
    /// absent for parameters that took no part in the loss.
    /// `lr` holds one learning rate per set.
    pub fn step(&mut self, cfg: &AdamConfig, lr: [f64; 3], params: &mut ModelParams<f32>, grads: &[Vec<Option<Tensor<f32>>>; 3]) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (b1f, b2f, c2f, eps) = (b1 as f32, b2 as f32, c2 as f32, cfg.eps as f32);
        let sets = params.sets_mut().into_iter().zip(self.m.sets_mut()).zip(self.v.sets_mut());
        for ((((p, m), v), gs), lr) in sets.zip(grads).zip(lr) {
            let step = (lr / c1) as f32;
            for (i, g) in gs.iter().enumerate() {
                let Some(g) = g else { continue };
                let (pt, mt, vt) = (&mut p.tensors_mut()[i], &mut m.tensors_mut()[i], &mut v.tensors_mut()[i]);
                for (((w, mm), vv), &gg) in
                    pt.data_mut().iter_mut().zip(mt.data_mut()).zip(vt.data_mut()).zip(g.data())
                {
                    *mm = b1f * *mm + (1.0 - b1f) * gg;
                    *vv = b2f * *vv + (1.0 - b2f) * gg * gg;
                    *w -= step * *mm / ((*vv / c2f).sqrt() + eps);
                }
            }
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for mp in [&self.m, &self.v] {
            for (_, s) in mp.sets() {
                out.extend(s.to_bytes());
            }
        }
        out
    }

    fn from_bytes(bytes: &[u8], layout: &ModelParams<f32>, t: u64) -> Option<Self> {
        let mut a = Adam::new(layout);
        a.t = t;
        let mut vals = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        for mp in [&mut a.m, &mut a.v] {
            for s in mp.sets_mut() {
                for tns in s.tensors_mut() {
                    for x in tns.data_mut() {
                        *x = vals.next()?;
                    }
                }
            }
        }
        vals.next().is_none().then_some(a)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Streams {
    data: StreamState,
    noise: StreamState,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format: u32,
    step: u64,
    model: ModelConfig,
    train: TrainConfig,
    loss_mode: LossMode,
    schedule_alpha_bars: Vec<f64>,
    adam_t: u64,
    streams: Streams,
}

const CHECKPOINT_FORMAT: u32 = 1;

/// The live state of one training run.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub nets: Nets,
    pub params: ModelParams<f32>,
    pub adam: Adam,
    pub step: u64,
    pub log: Vec<LossRecord>,
    data: Stream,
    noise: Stream,
    set: &'a TrainingSet,
    validation: &'a [LabeledPair],
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, set: &'a TrainingSet, validation: &'a [LabeledPair]) -> Result<Self> {
        config.validate()?;
        let nets = Nets::new(config.model.clone())?;
        check_set(&nets, set)?;
        let params = nets.init(config.seed);
        Ok(Trainer {
            adam: Adam::new(&params),
            data: Stream::derived(config.seed, "train/data"),
            noise: Stream::derived(config.seed, "train/noise"),
            config,
            nets,
            params,
            step: 0,
            log: Vec::new(),
            set,
            validation,
        })
    }

    pub fn model(&self) -> Model {
        Model::new(self.nets.clone(), self.params.clone())
    }

    /// Draws the next batch: independent uniform picks in each domain, a
    /// step and continuous noise level per sample, and the noise tensors.
    pub fn draw_batch(&mut self) -> Result<(Batch<f32>, Vec<usize>, Vec<usize>)> {
        let b = self.config.batch_size;
        let syn: Vec<usize> = (0..b).map(|_| self.data.int(0, self.set.synthetic.len() - 1)).collect();
        let real: Vec<usize> = (0..b).map(|_| self.data.int(0, self.set.real.len() - 1)).collect();
        let sched = &self.nets.schedule;
        let mut alpha_bar = Vec::with_capacity(b);
        for _ in 0..b {
            let t = self.noise.int(1, sched.steps());
            alpha_bar.push(sched.sample_noise_level(t, &mut self.noise)?);
        }
        let pick = |f: &dyn Fn(usize) -> &'a ImageTensor, idx: &[usize]| {
            ImageTensor::stack::<f32>(&idx.iter().map(|&i| f(i).clone()).collect::<Vec<_>>())
        };
        let set = self.set;
        let syn_fisheye = pick(&|i| &set.synthetic[i].fisheye, &syn)?;
        let syn_target = pick(&|i| &set.synthetic[i].target, &syn)?;
        let real_fisheye = pick(&|i| &set.real[i], &real)?;
        let n = syn_fisheye.len();
        let eps_syn = Tensor::from_vec(syn_fisheye.shape(), self.noise.normal_vec(n));
        let eps_real = if self.config.shared_noise {
            eps_syn.clone()
        } else {
            Tensor::from_vec(syn_fisheye.shape(), self.noise.normal_vec(n))
        };
        Ok((Batch { syn_fisheye, syn_target, real_fisheye, eps_syn, eps_real, alpha_bar }, syn, real))
    }

    /// One optimisation step.
    pub fn step(&mut self) -> Result<LossRecord> {
        let (batch, syn_idx, real_idx) = self.draw_batch()?;
        let arch = self.config.model.architecture;
        let mut g = Graph::new(Exec::default());
        let bound = BoundModel {
            opn: self.params.opn.bind(&mut g, arch.uses_opn()),
            cond: self.params.cond.bind(&mut g, true),
            uncond: self.params.uncond.bind(&mut g, arch.uses_uncond()),
        };
        let out = objective(&mut g, &self.nets, &bound, &batch, self.config.loss_mode, false)?;
        let total = g.value(out.total).item() as f64;
        let step = self.step + 1;
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { step, synthetic: syn_idx, real: real_idx });
        }
        let mut grads = g.backward(out.total);
        let mut collect = |b: &Bound| b.vars().iter().map(|&v| grads.take(v)).collect::<Vec<_>>();
        let mut all = [collect(&bound.opn), collect(&bound.cond), collect(&bound.uncond)];
        if let Some(clip) = self.config.grad_clip {
            clip_global_norm(&mut all, clip);
        }
        let l_syn = g.value(out.l_syn).item() as f64;
        let l_real = out.l_real.map(|v| g.value(v).item() as f64);
        drop(bound);
        let lr = self.config.lr;
        self.adam.step(&self.config.adam, [lr * self.config.opn_lr_scale, lr, lr], &mut self.params, &all);
        if !self.params.all_finite() {
            return Err(Error::NonFiniteLoss { step, synthetic: syn_idx, real: real_idx });
        }
        self.step = step;
        let validate = self.config.validate_every > 0
            && (step % self.config.validate_every == 0 || step == self.config.steps);
        let val = if validate { self.validation_psnr()? } else { None };
        let rec = LossRecord { step, l_syn, l_real, total, val_psnr_onepass: val };
        self.log.push(rec.clone());
        Ok(rec)
    }

    /// Mean one-pass PSNR on the validation pairs.
    pub fn validation_psnr(&self) -> Result<Option<f64>> {
        if !self.config.model.architecture.uses_opn() || self.validation.is_empty() {
            return Ok(None);
        }
        let n = self.validation.len().min(self.config.validation_size);
        let pairs = &self.validation[..n];
        let fish: Vec<ImageTensor> = pairs.iter().map(|p| p.fisheye.clone()).collect();
        let out = self.model().one_pass(&fish)?;
        let mut s = 0.0;
        for (c, p) in out.iter().zip(pairs) {
            s += psnr(c, &p.target, None)?;
        }
        Ok(Some(s / n as f64))
    }

    /// Steps until `self.step == until`.
    pub fn run_until(&mut self, until: u64) -> Result<()> {
        while self.step < until {
            self.step()?;
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        let tmp = dir.with_extension("tmp");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).at(&tmp)?;
        }
        self.model().save_params(&tmp)?;
        let opt = tmp.join("optimizer.bin");
        fs::write(&opt, self.adam.to_bytes()).at(&opt)?;
        let m = CheckpointManifest {
            format: CHECKPOINT_FORMAT,
            step: self.step,
            model: self.config.model.clone(),
            train: self.config.clone(),
            loss_mode: self.config.loss_mode,
            schedule_alpha_bars: self.nets.schedule.alpha_bars().to_vec(),
            adam_t: self.adam.t,
            streams: Streams { data: self.data.state(), noise: self.noise.state() },
        };
        let mp = tmp.join(CHECKPOINT_MANIFEST);
        fs::write(&mp, serde_json::to_string_pretty(&m)? + "\n").at(&mp)?;
        if dir.exists() {
            fs::remove_dir_all(dir).at(dir)?;
        }
        fs::rename(&tmp, dir).at(dir)
    }

    /// Restores a run from `dir`; the loss log is left empty.
    pub fn from_checkpoint(dir: &Path, set: &'a TrainingSet, validation: &'a [LabeledPair]) -> Result<Self> {
        let path = dir.join(CHECKPOINT_MANIFEST);
        let bad = |reason: String| Error::Checkpoint { path: dir.to_path_buf(), reason };
        let m: CheckpointManifest = serde_json::from_str(&fs::read_to_string(&path).at(&path)?)?;
        if m.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unsupported checkpoint format {}", m.format)));
        }
        let model = Model::load_params(dir, m.train.model.clone())?;
        check_set(&model.nets, set)?;
        let opt = dir.join("optimizer.bin");
        let adam = Adam::from_bytes(&fs::read(&opt).at(&opt)?, &model.params, m.adam_t)
            .ok_or_else(|| bad("optimizer state does not match the networks".into()))?;
        let restore = |s: &StreamState| Stream::restore(s).ok_or_else(|| bad("bad stream state".into()));
        Ok(Trainer {
            data: restore(&m.streams.data)?,
            noise: restore(&m.streams.noise)?,
            config: m.train,
            nets: model.nets,
            params: model.params,
            adam,
            step: m.step,
            log: Vec::new(),
            set,
            validation,
        })
    }
}

fn check_set(nets: &Nets, set: &TrainingSet) -> Result<()> {
    let (c, s) = set.image_shape();
    if (c, s) != (nets.config.channels(), nets.config.image_size()) {
        return Err(Error::Shape(format!(
            "dataset images are {c}x{s}x{s}, networks expect {}x{s2}x{s2}",
            nets.config.channels(),
            s2 = nets.config.image_size()
        )));
    }
    Ok(())
}

fn clip_global_norm(grads: &mut [Vec<Option<Tensor<f32>>>; 3], max: f64) {
    let sq: f64 = grads.iter().flatten().flatten().flat_map(|t| t.data()).map(|&v| (v as f64) * (v as f64)).sum();
    let norm = sq.sqrt();
    if norm > max {
        let k = (max / norm) as f32;
        for t in grads.iter_mut().flatten().flatten() {
            for v in t.data_mut() {
                *v *= k;
            }
        }
    }
}

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const METRICS_FILE: &str = "metrics.csv";

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: Vec<LossRecord>,
}

/// Runs (or resumes) training in `out_dir`, writing `checkpoint/` every
/// `checkpoint_every` steps and at the end, and the loss log to `metrics.csv`.
pub fn train(cfg: &TrainConfig, set: &TrainingSet, validation: &[LabeledPair], out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).at(out_dir)?;
    let ckpt = out_dir.join(CHECKPOINT_DIR);
    let metrics = out_dir.join(METRICS_FILE);
    let mut trainer = if ckpt.join(CHECKPOINT_MANIFEST).exists() {
        let mut t = Trainer::from_checkpoint(&ckpt, set, validation)?;
        if !t.config.compatible(cfg) {
            return Err(Error::Checkpoint { path: ckpt, reason: "existing run has a different configuration".into() });
        }
        t.config.steps = cfg.steps;
        if metrics.exists() {
            t.log = read_metrics(&metrics)?.into_iter().filter(|r| r.step <= t.step).collect();
        }
        t
    } else {
        let t = Trainer::new(cfg.clone(), set, validation)?;
        t.save_checkpoint(&ckpt)?;
        write_metrics(&metrics, &t.log)?;
        t
    };
    while trainer.step < cfg.steps {
        trainer.step()?;
        if trainer.step % cfg.checkpoint_every.max(1) == 0 || trainer.step == cfg.steps {
            trainer.save_checkpoint(&ckpt)?;
            write_metrics(&metrics, &trainer.log)?;
        }
    }
    Ok(TrainOutcome { checkpoint: ckpt, log: trainer.log })
}

/// Trailing moving average with window `w`; entry `i` averages items
/// `i + 1 - w ..= i` and exists for `i >= w - 1`.
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    if w == 0 || xs.len() < w {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(xs.len() + 1 - w);
    let mut s: f64 = xs[..w].iter().sum();
    out.push(s / w as f64);
    for i in w..xs.len() {
        s += xs[i] - xs[i - w];
        out.push(s / w as f64);
    }
    out
}
