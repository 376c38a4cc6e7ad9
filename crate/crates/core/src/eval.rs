//! Evaluation reports: uncorrected, one-pass and iterative metrics per image
//! and per domain, with and without the synthesis mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, Mask};
use crate::inference::{iterative_correct_batch, IterativeOptions, SlotPolicy};
use crate::metrics::{ms_ssim, psnr, ssim};
use crate::model::Model;
use crate::rng::{derive_seed, Stream};
use crate::scenes::{Domain, SamplePair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub seed: u64,
    /// Run the iterative scheme (the slow part).
    pub iterative: bool,
    pub steps: Option<usize>,
    pub policy: SlotPolicy,
    /// Images per network batch.
    pub batch: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { seed: 0, iterative: true, steps: None, policy: SlotPolicy::Duplicate, batch: 16 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub psnr: f64,
    pub psnr_masked: f64,
    pub ssim: f64,
    pub ssim_masked: f64,
    pub ms_ssim: f64,
}

impl Scores {
    pub fn compute(out: &ImageTensor, target: &ImageTensor, mask: &Mask) -> Result<Self> {
        Ok(Scores {
            psnr: psnr(out, target, None)?,
            psnr_masked: psnr(out, target, Some(mask))?,
            ssim: ssim(out, target, None)?,
            ssim_masked: ssim(out, target, Some(mask))?,
            ms_ssim: ms_ssim(out, target)?,
        })
    }

    fn mean(all: &[Scores]) -> Option<Scores> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        let avg = |f: fn(&Scores) -> f64| all.iter().map(f).sum::<f64>() / n;
        Some(Scores {
            psnr: avg(|s| s.psnr),
            psnr_masked: avg(|s| s.psnr_masked),
            ssim: avg(|s| s.ssim),
            ssim_masked: avg(|s| s.ssim_masked),
            ms_ssim: avg(|s| s.ms_ssim),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub index: usize,
    pub uncorrected: Scores,
    pub one_pass: Option<Scores>,
    pub iterative: Option<Scores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub uncorrected: Scores,
    pub one_pass: Option<Scores>,
    pub iterative: Option<Scores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub domain: Domain,
    pub count: usize,
    pub mean: Aggregate,
    pub images: Vec<ImageReport>,
}

impl DomainReport {
    /// Better of the mean one-pass and iterative PSNR, whichever exist.
    pub fn best_psnr(&self, masked: bool) -> Option<f64> {
        let pick = |s: &Scores| if masked { s.psnr_masked } else { s.psnr };
        [self.mean.one_pass.as_ref(), self.mean.iterative.as_ref()].into_iter().flatten().map(pick).reduce(f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub options: EvalOptions,
    pub domains: Vec<DomainReport>,
}

/// Corrects `samples` (all from one domain) and scores every variant
/// against the evaluation targets.
pub fn evaluate_domain(model: &Model, samples: &[SamplePair], opts: &EvalOptions) -> Result<DomainReport> {
    let domain = samples.first().map(|s| s.domain).ok_or_else(|| Error::Invalid("nothing to evaluate".into()))?;
    if samples.iter().any(|s| s.domain != domain) {
        return Err(Error::Invalid("samples mix domains".into()));
    }
    let mut images = Vec::with_capacity(samples.len());
    if opts.policy == SlotPolicy::CrossDomain {
        return Err(Error::Invalid("reports use duplicated condition slots".into()));
    }
    let iter_opts = IterativeOptions { steps: opts.steps, policy: opts.policy, reference: None };
    for (ci, chunk) in samples.chunks(opts.batch.max(1)).enumerate() {
        let base = ci * opts.batch.max(1);
        let fish: Vec<ImageTensor> = chunk.iter().map(|s| s.fisheye.clone()).collect();
        let one = if model.architecture().uses_opn() { Some(model.one_pass(&fish)?) } else { None };
        let iter = if opts.iterative {
            let mut rngs: Vec<Stream> = (0..chunk.len())
                .map(|i| Stream::new(derive_seed(opts.seed, &format!("eval/{domain}"), (base + i) as u64)))
                .collect();
            Some(iterative_correct_batch(&fish, domain, model, &mut rngs, &iter_opts)?)
        } else {
            None
        };
        for (i, s) in chunk.iter().enumerate() {
            let target = s.eval_target().ok_or_else(|| Error::Invalid(format!("sample {} has no target", base + i)))?;
            images.push(ImageReport {
                index: base + i,
                uncorrected: Scores::compute(&s.fisheye, target, &s.mask)?,
                one_pass: one.as_ref().map(|o| Scores::compute(&o[i], target, &s.mask)).transpose()?,
                iterative: iter.as_ref().map(|o| Scores::compute(&o[i], target, &s.mask)).transpose()?,
            });
        }
    }
    let col = |f: fn(&ImageReport) -> Option<Scores>| images.iter().filter_map(f).collect::<Vec<_>>();
    let mean = Aggregate {
        uncorrected: Scores::mean(&col(|r| Some(r.uncorrected))).expect("non-empty"),
        one_pass: Scores::mean(&col(|r| r.one_pass)),
        iterative: Scores::mean(&col(|r| r.iterative)),
    };
    Ok(DomainReport { domain, count: images.len(), mean, images })
}

pub fn evaluate(model: &Model, domains: &[Vec<SamplePair>], opts: &EvalOptions) -> Result<Report> {
    let domains = domains.iter().filter(|d| !d.is_empty()).map(|d| evaluate_domain(model, d, opts)).collect::<Result<_>>()?;
    Ok(Report { options: opts.clone(), domains })
}
