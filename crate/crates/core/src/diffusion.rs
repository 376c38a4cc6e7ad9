//! Noise schedules and closed-form DDPM quantities. Steps are indexed
//! `1..=T`, with the convention `alpha_bar(0) = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: ScheduleKind,
}

impl ScheduleConfig {
    /// The classic 1000-step linear schedule.
    pub fn standard() -> Self {
        ScheduleConfig { steps: 1000, beta_start: 1e-4, beta_end: 0.02, kind: ScheduleKind::Linear }
    }

    /// Short schedule for desk-scale runs. Betas are the standard endpoints
    /// scaled by `1000 / steps`, so the chain still ends near pure noise.
    pub fn toy(steps: usize) -> Self {
        let k = 1000.0 / steps as f64;
        ScheduleConfig { steps, beta_start: 1e-4 * k, beta_end: 0.02 * k, kind: ScheduleKind::Linear }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end, self.kind)
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::toy(50)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_vars: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Invalid("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Invalid(format!("need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear if steps == 1 => vec![beta_start],
        ScheduleKind::Linear => (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect(),
    };
    Ok(NoiseSchedule::from_betas_unchecked(ScheduleConfig { steps, beta_start, beta_end, kind }, betas))
}

impl NoiseSchedule {
    /// Schedule with explicit betas, each in `(0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Invalid("betas must be non-empty and in (0, 1)".into()));
        }
        let config = ScheduleConfig {
            steps: betas.len(),
            beta_start: betas[0],
            beta_end: betas[betas.len() - 1],
            kind: ScheduleKind::Linear,
        };
        Ok(Self::from_betas_unchecked(config, betas))
    }

    fn from_betas_unchecked(config: ScheduleConfig, betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let posterior_vars = (0..betas.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bars[i]) * betas[i]
            })
            .collect();
        NoiseSchedule { config, betas, alphas, alpha_bars, posterior_vars }
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::Invalid(format!("step {t} outside 1..={}", self.steps())))
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_vars[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.posterior_var(t).sqrt()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_vars(&self) -> &[f64] {
        &self.posterior_vars
    }

    /// Draws a continuous `alpha_bar` uniformly from `[alpha_bar(t), alpha_bar(t-1)]`.
    pub fn sample_noise_level(&self, t: usize, rng: &mut Stream) -> Result<f64> {
        sample_noise_level(self, t, rng)
    }
}

pub fn sample_noise_level(schedule: &NoiseSchedule, t: usize, rng: &mut Stream) -> Result<f64> {
    schedule.check_t(t)?;
    let (lo, hi) = (schedule.alpha_bar(t), schedule.alpha_bar(t - 1));
    Ok(lo + (hi - lo) * rng.uniform(0.0, 1.0))
}

fn check_alpha_bar(alpha_bar: f64) -> Result<()> {
    if alpha_bar.is_finite() && (0.0..=1.0).contains(&alpha_bar) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("alpha_bar {alpha_bar} outside [0, 1]")))
    }
}

/// `out = a * x + b * y`, evaluated in f64 per element.
fn combine(a: f64, x: &[f32], b: f64, y: &[f32], out: &mut [f32]) {
    for ((o, &xv), &yv) in out.iter_mut().zip(x).zip(y) {
        *o = (a * xv as f64 + b * yv as f64) as f32;
    }
}

fn combined(a: f64, x: &ImageTensor, b: f64, y: &ImageTensor, what: &str) -> Result<ImageTensor> {
    x.ensure_same_shape(y, what)?;
    let mut out = x.clone();
    combine(a, x.data(), b, y.data(), out.data_mut());
    Ok(out)
}

/// Slice form of [`q_sample`] used on packed batches.
pub fn q_sample_into(x0: &[f32], alpha_bar: f64, eps: &[f32], out: &mut [f32]) {
    combine(alpha_bar.sqrt(), x0, (1.0 - alpha_bar).sqrt(), eps, out);
}

/// `sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps`.
pub fn q_sample(x0: &ImageTensor, alpha_bar: f64, eps: &ImageTensor) -> Result<ImageTensor> {
    check_alpha_bar(alpha_bar)?;
    combined(alpha_bar.sqrt(), x0, (1.0 - alpha_bar).sqrt(), eps, "q_sample")
}

/// `(x_t - sqrt(1 - alpha_bar) * eps) / sqrt(alpha_bar)`.
pub fn predict_x0(x_t: &ImageTensor, eps: &ImageTensor, alpha_bar: f64) -> Result<ImageTensor> {
    if !(alpha_bar > 0.0) {
        return Err(Error::Invalid(format!("predict_x0 needs alpha_bar > 0, got {alpha_bar}")));
    }
    check_alpha_bar(alpha_bar)?;
    let s = alpha_bar.sqrt();
    combined(1.0 / s, x_t, -(1.0 - alpha_bar).sqrt() / s, eps, "predict_x0")
}

fn eps_coefs(schedule: &NoiseSchedule, t: usize) -> (f64, f64) {
    if t == 1 {
        // alpha_bar(0) = 1 makes the step the clean-image estimate; use the
        // same coefficients as `predict_x0` so the two agree exactly.
        let ab = schedule.alpha_bar(1);
        return (1.0 / ab.sqrt(), -(1.0 - ab).sqrt() / ab.sqrt());
    }
    let inv = 1.0 / schedule.alpha(t).sqrt();
    (inv, -inv * schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt())
}

/// Posterior mean from the noise prediction:
/// `(x_t - beta_t / sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t)`.
pub fn posterior_mean(x_t: &ImageTensor, eps: &ImageTensor, t: usize, schedule: &NoiseSchedule) -> Result<ImageTensor> {
    schedule.check_t(t)?;
    let (a, b) = eps_coefs(schedule, t);
    combined(a, x_t, b, eps, "posterior_mean")
}

/// Posterior mean from a clean-image estimate:
/// `sqrt(ab_{t-1}) beta_t / (1 - ab_t) * x0 + sqrt(alpha_t) (1 - ab_{t-1}) / (1 - ab_t) * x_t`.
pub fn posterior_mean_from_x0(
    x_t: &ImageTensor,
    x0: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<ImageTensor> {
    schedule.check_t(t)?;
    let (ab, prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t - 1));
    let c0 = prev.sqrt() * schedule.beta(t) / (1.0 - ab);
    let ct = schedule.alpha(t).sqrt() * (1.0 - prev) / (1.0 - ab);
    combined(c0, x0, ct, x_t, "posterior_mean_from_x0")
}

/// Slice form of [`reverse_step`]; `z` is ignored at `t = 1`.
pub fn reverse_step_into(x_t: &[f32], eps_pred: &[f32], t: usize, z: &[f32], schedule: &NoiseSchedule, out: &mut [f32]) {
    let (a, b) = eps_coefs(schedule, t);
    let sigma = schedule.sigma(t);
    for (((o, &x), &e), &n) in out.iter_mut().zip(x_t).zip(eps_pred).zip(z) {
        *o = (a * x as f64 + b * e as f64 + sigma * n as f64) as f32;
    }
}

/// One ancestral step `x_{t-1} = mean(x_t, eps_pred) + sigma_t z`, with
/// `sigma_t^2` the posterior variance. `z` must be zero at `t = 1`.
pub fn reverse_step(
    x_t: &ImageTensor,
    eps_pred: &ImageTensor,
    t: usize,
    z: &ImageTensor,
    schedule: &NoiseSchedule,
) -> Result<ImageTensor> {
    schedule.check_t(t)?;
    x_t.ensure_same_shape(eps_pred, "reverse_step eps")?;
    x_t.ensure_same_shape(z, "reverse_step z")?;
    if t == 1 && z.data().iter().any(|&v| v != 0.0) {
        return Err(Error::Invalid("reverse_step at t = 1 takes z = 0".into()));
    }
    let mut out = x_t.clone();
    reverse_step_into(x_t.data(), eps_pred.data(), t, z.data(), schedule, out.data_mut());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: u64, scale: f32) -> ImageTensor {
        let mut s = Stream::new(seed);
        ImageTensor::new(1, 6, 6, s.normal_vec(36).into_iter().map(|v| v * scale).collect()).unwrap()
    }

    #[test]
    fn small_schedules() {
        let s = make_schedule(1, 0.5, 0.5, ScheduleKind::Linear).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        assert_eq!(s.posterior_var(1), 0.0);
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        assert!(make_schedule(0, 0.1, 0.2, ScheduleKind::Linear).is_err());
        assert!(make_schedule(10, 0.3, 0.2, ScheduleKind::Linear).is_err());
        assert!(make_schedule(10, 0.0, 0.2, ScheduleKind::Linear).is_err());
        assert!(make_schedule(10, 0.1, 1.0, ScheduleKind::Linear).is_err());
    }

    #[test]
    fn toy_schedule_ends_near_noise() {
        let s = ScheduleConfig::default().build().unwrap();
        assert_eq!(s.steps(), 50);
        assert!(s.alpha_bar(50) < 0.05);
        assert!(s.betas().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn noise_level_stays_in_interval() {
        let s = ScheduleConfig::default().build().unwrap();
        let mut rng = Stream::new(3);
        for t in 1..=50 {
            for _ in 0..20 {
                let ab = s.sample_noise_level(t, &mut rng).unwrap();
                assert!(ab >= s.alpha_bar(t) && ab <= s.alpha_bar(t - 1));
            }
        }
        assert!(s.sample_noise_level(0, &mut rng).is_err());
        assert!(s.sample_noise_level(51, &mut rng).is_err());
    }

    #[test]
    fn q_sample_endpoints_and_inverse() {
        let (x0, eps) = (img(1, 0.5), img(2, 1.0));
        assert_eq!(q_sample(&x0, 1.0, &eps).unwrap(), x0);
        assert_eq!(q_sample(&x0, 0.0, &eps).unwrap(), eps);
        let xt = q_sample(&x0, 0.3, &eps).unwrap();
        let back = predict_x0(&xt, &eps, 0.3).unwrap();
        for (a, b) in back.data().iter().zip(x0.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(predict_x0(&xt, &eps, 1.0).unwrap(), xt);
        assert!(predict_x0(&xt, &eps, 0.0).is_err());
        assert!(q_sample(&x0, 0.5, &ImageTensor::filled(1, 6, 5, 0.0)).is_err());
    }

    #[test]
    fn reverse_step_degenerate_cases() {
        let s = ScheduleConfig::default().build().unwrap();
        let x = img(4, 1.0);
        let zero = ImageTensor::filled(1, 6, 6, 0.0);
        let out = reverse_step(&x, &zero, 7, &zero, &s).unwrap();
        let k = 1.0 / s.alpha(7).sqrt();
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((*a as f64 - k * *b as f64).abs() < 1e-6);
        }
        assert!(reverse_step(&x, &zero, 1, &x, &s).is_err());
        assert!(reverse_step(&x, &zero, 51, &zero, &s).is_err());
    }

    #[test]
    fn posterior_forms_agree_at_t1() {
        let s = ScheduleConfig::default().build().unwrap();
        let (x0, eps) = (img(5, 0.5), img(6, 1.0));
        let xt = q_sample(&x0, s.alpha_bar(1), &eps).unwrap();
        let m = posterior_mean(&xt, &eps, 1, &s).unwrap();
        for (a, b) in m.data().iter().zip(x0.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
