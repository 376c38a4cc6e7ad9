//! One-pass and iterative correction.
//!
//! The iterative scheme runs the reverse diffusion chain of the conditional
//! module from pure noise, conditioned on the one-pass corrections, and
//! evaluates the network at the current latent of the chain.

use dda_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::diffusion::{reverse_step_into, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::model::Model;
use crate::rng::Stream;
use crate::scenes::Domain;

/// Anything that predicts noise from a latent, its noise level and two
/// condition images.
pub trait EpsModel {
    fn eps(&self, x_t: &Tensor<f32>, sqrt_alpha_bar: &[f64], slot_a: &Tensor<f32>, slot_b: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl EpsModel for Model {
    fn eps(&self, x_t: &Tensor<f32>, sqrt_alpha_bar: &[f64], slot_a: &Tensor<f32>, slot_b: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.cond_eps(x_t, sqrt_alpha_bar, slot_a, slot_b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlotPolicy {
    /// Both slots hold the correction of the image being corrected.
    #[default]
    Duplicate,
    /// The target's correction sits in its training-time slot (synthetic
    /// first, real second) and a fixed reference fills the other.
    CrossDomain,
}

/// Condition images for the two slots of the conditional module.
pub fn condition_slots(
    c_target: &ImageTensor,
    domain: Domain,
    policy: SlotPolicy,
    reference: Option<&ImageTensor>,
) -> Result<(ImageTensor, ImageTensor)> {
    match policy {
        SlotPolicy::Duplicate => Ok((c_target.clone(), c_target.clone())),
        SlotPolicy::CrossDomain => {
            let r = reference.ok_or_else(|| Error::Invalid("cross-domain slots need a reference image".into()))?;
            c_target.ensure_same_shape(r, "condition slots")?;
            Ok(match domain {
                Domain::Synthetic => (c_target.clone(), r.clone()),
                Domain::SimReal => (r.clone(), c_target.clone()),
            })
        }
    }
}

/// `opn_correct(F)` for each input.
pub fn one_pass_correct(images: &[ImageTensor], model: &Model) -> Result<Vec<ImageTensor>> {
    model.one_pass(images)
}

fn variance(xs: &[f32]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().map(|&v| v as f64).sum::<f64>() / n;
    xs.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n
}

/// Runs the reverse chain from `x_start` at step `start` down to 0. Sample
/// `i` draws its noise from `rngs[i]`. When `trace` is given, the latent
/// variance after each step is appended to it.
pub fn reverse_chain(
    eps_model: &dyn EpsModel,
    schedule: &NoiseSchedule,
    slot_a: &Tensor<f32>,
    slot_b: &Tensor<f32>,
    x_start: Tensor<f32>,
    start: usize,
    rngs: &mut [Stream],
    mut trace: Option<&mut Vec<f64>>,
) -> Result<Tensor<f32>> {
    if start > schedule.steps() {
        return Err(Error::Invalid(format!("chain of {start} steps exceeds the schedule's {}", schedule.steps())));
    }
    let n = x_start.shape()[0];
    if rngs.len() != n {
        return Err(Error::Invalid(format!("{} noise streams for {n} samples", rngs.len())));
    }
    let per = x_start.len() / n.max(1);
    let mut x = x_start;
    let mut next = x.clone();
    for t in (1..=start).rev() {
        let sab = vec![schedule.alpha_bar(t).sqrt(); n];
        let e = eps_model.eps(&x, &sab, slot_a, slot_b)?;
        if e.shape() != x.shape() {
            return Err(Error::Shape(format!("noise prediction {:?} for latent {:?}", e.shape(), x.shape())));
        }
        let z: Vec<f32> = if t > 1 { rngs.iter_mut().flat_map(|r| r.normal_vec(per)).collect() } else { vec![0.0; x.len()] };
        reverse_step_into(x.data(), e.data(), t, &z, schedule, next.data_mut());
        if !next.all_finite() {
            return Err(Error::NonFiniteLatent(t));
        }
        std::mem::swap(&mut x, &mut next);
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(variance(x.data()));
        }
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterativeOptions {
    /// Chain length; defaults to the schedule length. Zero returns the
    /// clamped initial noise.
    pub steps: Option<usize>,
    pub policy: SlotPolicy,
    /// Fixed correction for the other slot under [`SlotPolicy::CrossDomain`].
    pub reference: Option<ImageTensor>,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        IterativeOptions { steps: None, policy: SlotPolicy::Duplicate, reference: None }
    }
}

/// Iterative correction of a batch; image `i` uses noise stream `rngs[i]`.
/// Architectures without a one-pass network condition on the raw input.
pub fn iterative_correct_batch(
    images: &[ImageTensor],
    domain: Domain,
    model: &Model,
    rngs: &mut [Stream],
    opts: &IterativeOptions,
) -> Result<Vec<ImageTensor>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    if rngs.len() != images.len() {
        return Err(Error::Invalid(format!("{} noise streams for {} images", rngs.len(), images.len())));
    }
    let schedule = &model.nets.schedule;
    let steps = opts.steps.unwrap_or(schedule.steps());
    if steps > schedule.steps() {
        return Err(Error::Invalid(format!("{steps} steps exceed the schedule's {}", schedule.steps())));
    }
    let corrected = if model.architecture().uses_opn() { model.one_pass(images)? } else { images.to_vec() };
    let mut a = Vec::with_capacity(images.len());
    let mut b = Vec::with_capacity(images.len());
    for c in &corrected {
        let (sa, sb) = condition_slots(c, domain, opts.policy, opts.reference.as_ref())?;
        a.push(sa);
        b.push(sb);
    }
    let (slot_a, slot_b) = (ImageTensor::stack::<f32>(&a)?, ImageTensor::stack::<f32>(&b)?);
    let per = images[0].data().len();
    let init: Vec<f32> = rngs.iter_mut().flat_map(|r| r.normal_vec(per)).collect();
    let x_t = Tensor::from_vec(slot_a.shape(), init);
    let x0 = reverse_chain(model, schedule, &slot_a, &slot_b, x_t, steps, rngs, None)?;
    Ok(ImageTensor::batch_to_vec(&x0)?.into_iter().map(ImageTensor::clamped).collect())
}

/// Iterative correction of one image.
pub fn iterative_correct(
    image: &ImageTensor,
    domain: Domain,
    model: &Model,
    rng: &mut Stream,
    opts: &IterativeOptions,
) -> Result<ImageTensor> {
    let mut out = iterative_correct_batch(std::slice::from_ref(image), domain, model, std::slice::from_mut(rng), opts)?;
    Ok(out.remove(0))
}
