use dda_tensor::gradcheck::{check, spread};
use dda_tensor::{Graph, Tensor, Var};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn rand_tensor(rng: &mut StdRng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

/// Reduces any tensor to a scalar through a fixed random projection, via an
/// L1 distance to a far-away target so the kink at zero is never reached.
fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
    let shape = g.shape(v).to_vec();
    let mut rng = StdRng::seed_from_u64(seed);
    let target = rand_tensor(&mut rng, &shape, 1.0).map(|x| x + 50.0);
    let t = g.input(target);
    g.l1_mean(v, t)
}

fn all(t: &Tensor<f64>, n: usize) -> Vec<usize> {
    spread(t.len(), n)
}

const TOL: f64 = 1e-3;

#[test]
fn conv2d_gradients() {
    let mut rng = StdRng::seed_from_u64(1);
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1)] {
        let x = rand_tensor(&mut rng, &[2, 3, 6, 6], 1.0);
        let w = rand_tensor(&mut rng, &[4, 3, k, k], 0.5);
        let b = rand_tensor(&mut rng, &[4], 0.5);
        let probe = vec![all(&x, 40), all(&w, 40), all(&b, 4)];
        let r = check(&[x, w, b], &probe, 1e-5, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad);
            // square through a second conv-free nonlinearity to exercise chaining
            let y = g.silu(y);
            project(g, y, 9)
        });
        assert!(r.max_rel_err < TOL, "stride {stride} pad {pad}: {r:?}");
    }
}

#[test]
fn group_norm_gradients() {
    let mut rng = StdRng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[2, 4, 5, 5], 2.0);
    let gamma = rand_tensor(&mut rng, &[4], 1.0);
    let beta = rand_tensor(&mut rng, &[4], 1.0);
    let probe = vec![all(&x, 60), all(&gamma, 4), all(&beta, 4)];
    let r = check(&[x, gamma, beta], &probe, 1e-5, |g, v| {
        let y = g.group_norm(v[0], v[1], v[2], 2);
        let y = g.tanh(y);
        project(g, y, 3)
    });
    assert!(r.max_rel_err < TOL, "{r:?}");
}

#[test]
fn linear_modulate_concat_upsample_gradients() {
    let mut rng = StdRng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[2, 3, 4, 4], 1.0);
    let e = rand_tensor(&mut rng, &[2, 5], 1.0);
    let w = rand_tensor(&mut rng, &[6, 5], 0.5);
    let b = rand_tensor(&mut rng, &[6], 0.5);
    let z = rand_tensor(&mut rng, &[2, 3, 8, 8], 1.0);
    let probe = vec![all(&x, 30), all(&e, 10), all(&w, 30), all(&b, 6), all(&z, 30)];
    let r = check(&[x, e, w, b, z], &probe, 1e-5, |g, v| {
        let emb = g.linear(v[1], v[2], v[3]);
        let emb = g.silu(emb);
        // split the 6-wide embedding into scale and shift halves via two
        // linear maps with fixed selection weights
        let mut sel_a = vec![0.0; 3 * 6];
        let mut sel_b = vec![0.0; 3 * 6];
        for i in 0..3 {
            sel_a[i * 6 + i] = 1.0;
            sel_b[i * 6 + 3 + i] = 1.0;
        }
        let sa = g.input(Tensor::from_vec(&[3, 6], sel_a));
        let sb = g.input(Tensor::from_vec(&[3, 6], sel_b));
        let zero = g.input(Tensor::zeros(&[3]));
        let scale = g.linear(emb, sa, zero);
        let shift = g.linear(emb, sb, zero);
        let m = g.modulate(v[0], scale, shift);
        let up = g.upsample2x(m);
        let cat = g.concat(&[up, v[4]]);
        let s = g.scale(cat, 0.7);
        let d = g.sub(s, cat);
        let a = g.add(d, cat);
        project(g, a, 5)
    });
    assert!(r.max_rel_err < TOL, "{r:?}");
}

#[test]
fn warp_gradients_wrt_flow_and_source() {
    let mut rng = StdRng::seed_from_u64(4);
    let src = rand_tensor(&mut rng, &[1, 2, 8, 8], 1.0);
    let flow = rand_tensor(&mut rng, &[1, 2, 8, 8], 1.7);
    let probe = vec![all(&src, 64), all(&flow, 128)];
    let r = check(&[src, flow], &probe, 1e-4, |g, v| {
        let y = g.warp(v[0], v[1]);
        project(g, y, 7)
    });
    assert!(r.max_rel_err < TOL, "{r:?}");
}

#[test]
fn detach_cuts_gradient() {
    let mut g = Graph::<f64>::default();
    let x = g.param(Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]));
    let y = g.scale(x, 3.0);
    let d = g.detach(y);
    let t = g.input(Tensor::zeros(&[1, 1, 1, 2]));
    let l1 = g.l1_mean(d, t);
    let grads = g.backward(l1);
    assert!(grads.get(x).is_none());
    let l2 = g.l1_mean(y, t);
    let grads = g.backward(l2);
    assert_eq!(grads.get(x).unwrap().data(), &[1.5, 1.5]);
}

#[test]
fn center_planes_gradient_and_zero_means() {
    let mut rng = StdRng::seed_from_u64(12);
    let x = rand_tensor(&mut rng, &[2, 3, 4, 5], 1.0);
    let mut g = Graph::<f64>::default();
    let v = g.input(x.clone());
    let y = g.center_planes(v);
    for plane in g.value(y).data().chunks(20) {
        assert!(plane.iter().sum::<f64>().abs() < 1e-12);
    }
    let probe = vec![all(&x, 120)];
    // a constant upstream gradient centres to zero, so vary it with tanh
    let r = check(&[x], &probe, 1e-6, |g, v| {
        let y = g.center_planes(v[0]);
        let y = g.tanh(y);
        project(g, y, 13)
    });
    assert!(r.max_rel_err < TOL, "{r:?}");
}
