use dda_core::diffusion::{posterior_mean_from_x0, predict_x0, q_sample, reverse_step, ScheduleConfig};
use dda_core::error::{Error, Result};
use dda_core::image::ImageTensor;
use dda_core::inference::*;
use dda_core::model::{Architecture, Model, ModelConfig, Nets};
use dda_core::rng::Stream;
use dda_core::scenes::Domain;
use dda_tensor::Tensor;

fn noise_image(seed: u64, scale: f32) -> ImageTensor {
    let data = Stream::new(seed).normal_vec(64).into_iter().map(|v| v * scale).collect();
    ImageTensor::new(1, 8, 8, data).unwrap()
}

/// Returns the exact noise for latents built as `q_sample(x0, ab, eps)`.
struct Oracle {
    x0: Tensor<f32>,
}

impl EpsModel for Oracle {
    fn eps(&self, x_t: &Tensor<f32>, sab: &[f64], _a: &Tensor<f32>, _b: &Tensor<f32>) -> Result<Tensor<f32>> {
        let per = x_t.len() / sab.len();
        let mut out = x_t.clone();
        for (i, &s) in sab.iter().enumerate() {
            let k = (1.0 - s * s).sqrt();
            for j in i * per..(i + 1) * per {
                out.data_mut()[j] = ((x_t.data()[j] as f64 - s * self.x0.data()[j] as f64) / k) as f32;
            }
        }
        Ok(out)
    }
}

/// Always predicts NaN.
struct Broken;

impl EpsModel for Broken {
    fn eps(&self, x_t: &Tensor<f32>, _: &[f64], _: &Tensor<f32>, _: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(x_t.map(|_| f32::NAN))
    }
}

#[test]
fn oracle_step_is_the_posterior_mean_and_t1_is_predict_x0() {
    let s = ScheduleConfig::toy(50).build().unwrap();
    let x0 = noise_image(1, 0.5);
    let eps = noise_image(2, 1.0);
    let zero = ImageTensor::filled(1, 8, 8, 0.0);
    for t in 1..=s.steps() {
        let x_t = q_sample(&x0, s.alpha_bar(t), &eps).unwrap();
        let step = reverse_step(&x_t, &eps, t, &zero, &s).unwrap();
        // the clean-image form of the posterior mean is an independent oracle
        let want = posterior_mean_from_x0(&x_t, &x0, t, &s).unwrap();
        for (a, b) in step.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-5, "t = {t}: {a} vs {b}");
        }
    }
    let oracle = Oracle { x0: x0.to_tensor() };
    let slot = x0.to_tensor::<f32>();
    let x_1 = q_sample(&x0, s.alpha_bar(1), &eps).unwrap();
    let out = reverse_chain(&oracle, &s, &slot, &slot, x_1.to_tensor(), 1, &mut [Stream::new(0)], None).unwrap();
    let eps_hat = oracle.eps(&x_1.to_tensor(), &[s.alpha_bar(1).sqrt()], &slot, &slot).unwrap();
    let eps_hat = ImageTensor::from_batch(&eps_hat, 0).unwrap();
    assert_eq!(ImageTensor::from_batch(&out, 0).unwrap(), predict_x0(&x_1, &eps_hat, s.alpha_bar(1)).unwrap());
}

#[test]
fn chain_rejects_bad_arguments_and_non_finite_latents() {
    let s = ScheduleConfig::toy(50).build().unwrap();
    let x = noise_image(3, 1.0).to_tensor::<f32>();
    let mut one = [Stream::new(0)];
    assert!(reverse_chain(&Broken, &s, &x, &x, x.clone(), 51, &mut one, None).is_err());
    assert!(reverse_chain(&Broken, &s, &x, &x, x.clone(), 5, &mut [], None).is_err());
    match reverse_chain(&Broken, &s, &x, &x, x.clone(), 7, &mut one, None) {
        Err(Error::NonFiniteLatent(t)) => assert_eq!(t, 7),
        other => panic!("expected a non-finite latent error, got {other:?}"),
    }
}

#[test]
fn oracle_chain_recovers_the_clean_image() {
    let s = ScheduleConfig::toy(50).build().unwrap();
    let x0 = noise_image(4, 0.5).to_tensor::<f32>();
    let oracle = Oracle { x0: x0.clone() };
    let start = Tensor::from_vec(x0.shape(), Stream::new(5).normal_vec(x0.len()));
    let mut trace = Vec::new();
    let out = reverse_chain(&oracle, &s, &x0, &x0, start, s.steps(), &mut [Stream::new(6)], Some(&mut trace)).unwrap();
    assert_eq!(trace.len(), s.steps());
    for (a, b) in out.data().iter().zip(x0.data()) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn condition_slot_policies() {
    let c = noise_image(7, 1.0);
    let r = noise_image(8, 1.0);
    assert_eq!(condition_slots(&c, Domain::SimReal, SlotPolicy::Duplicate, None).unwrap(), (c.clone(), c.clone()));
    assert_eq!(condition_slots(&c, Domain::Synthetic, SlotPolicy::CrossDomain, Some(&r)).unwrap(), (c.clone(), r.clone()));
    assert_eq!(condition_slots(&c, Domain::SimReal, SlotPolicy::CrossDomain, Some(&r)).unwrap(), (r.clone(), c.clone()));
    assert!(condition_slots(&c, Domain::SimReal, SlotPolicy::CrossDomain, None).is_err());
    // returned slots are independent copies
    let (mut a, _) = condition_slots(&c, Domain::Synthetic, SlotPolicy::Duplicate, None).unwrap();
    a.set(0, 0, 0, 9.0);
    assert_ne!(a, c);
}

fn untrained(arch: Architecture) -> Model {
    let nets = Nets::new(ModelConfig::desk(32, 1, arch)).unwrap();
    let params = nets.init(3);
    Model::new(nets, params)
}

fn inputs() -> Vec<ImageTensor> {
    (0..2)
        .map(|i| ImageTensor::from_fn(1, 32, 32, |_, y, x| ((x + 3 * y + i) % 7) as f32 / 3.5 - 1.0))
        .collect()
}

#[test]
fn untrained_one_pass_is_identity_and_deterministic() {
    let m = untrained(Architecture::Dda);
    let ims = inputs();
    let a = one_pass_correct(&ims, &m).unwrap();
    assert_eq!(a, ims);
    assert_eq!(a, one_pass_correct(&ims, &m).unwrap());
    assert!(one_pass_correct(&ims, &untrained(Architecture::Cdm)).is_err());
    let wrong = vec![ImageTensor::filled(1, 16, 16, 0.0)];
    assert!(matches!(one_pass_correct(&wrong, &m), Err(Error::Shape(_))));
}

#[test]
fn zero_steps_returns_the_clamped_draw() {
    let m = untrained(Architecture::CdmOpn);
    let ims = inputs();
    let opts = IterativeOptions { steps: Some(0), ..Default::default() };
    let out = iterative_correct_batch(&ims, Domain::SimReal, &m, &mut [Stream::new(1), Stream::new(2)], &opts).unwrap();
    for (o, seed) in out.iter().zip([1, 2]) {
        let draw = Stream::new(seed).normal_vec(1024);
        let want = ImageTensor::new(1, 32, 32, draw).unwrap().clamped();
        assert_eq!(o, &want);
    }
}

#[test]
fn iterative_is_deterministic_and_batch_independent() {
    let m = untrained(Architecture::Dda);
    let ims = inputs();
    let opts = IterativeOptions { steps: Some(4), ..Default::default() };
    let run = || iterative_correct_batch(&ims, Domain::Synthetic, &m, &mut [Stream::new(10), Stream::new(11)], &opts).unwrap();
    let a = run();
    assert_eq!(a, run());
    let single = iterative_correct(&ims[1], Domain::Synthetic, &m, &mut Stream::new(11), &opts).unwrap();
    for (x, y) in single.data().iter().zip(a[1].data()) {
        assert!((x - y).abs() < 1e-5);
    }
    assert!(a.iter().all(|o| o.data().iter().all(|v| (-1.0..=1.0).contains(v))));
    let too_long = IterativeOptions { steps: Some(51), ..Default::default() };
    assert!(iterative_correct(&ims[0], Domain::Synthetic, &m, &mut Stream::new(0), &too_long).is_err());
}
