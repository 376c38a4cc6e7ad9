//! Group normalization with per-channel affine parameters.

use crate::{Exec, Float, Tensor};

pub struct GroupNormOut<T> {
    pub y: Tensor<T>,
    /// Per `(sample, group)` mean and reciprocal standard deviation.
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

fn check<T: Float>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, groups: usize) -> (usize, usize, usize) {
    let (n, c, h, w) = x.dims4();
    assert!(groups > 0 && c % groups == 0, "{c} channels not divisible into {groups} groups");
    assert_eq!(gamma.shape(), [c]);
    assert_eq!(beta.shape(), [c]);
    (n, c, h * w)
}

pub fn group_norm_forward<T: Float>(
    exec: Exec,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
    eps: f64,
) -> GroupNormOut<T> {
    let (n, c, hw) = check(x, gamma, beta, groups);
    let cg = c / groups;
    let glen = cg * hw;
    let xd = x.data();
    let stats = exec.map(n * groups, |ng| {
        let s = &xd[ng * glen..(ng + 1) * glen];
        let m = T::of(glen as f64);
        let mean = s.iter().copied().sum::<T>() / m;
        let var = s.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
        (mean, T::one() / (var + T::of(eps)).sqrt())
    });
    let mut y = Tensor::zeros(x.shape());
    exec.for_each_chunk(y.data_mut(), glen, |ng, out| {
        let (mean, rstd) = stats[ng];
        let g = ng % groups;
        let s = &xd[ng * glen..(ng + 1) * glen];
        for ci in 0..cg {
            let ch = g * cg + ci;
            let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
            for j in ci * hw..(ci + 1) * hw {
                out[j] = (s[j] - mean) * rstd * ga + be;
            }
        }
    });
    GroupNormOut {
        y,
        mean: stats.iter().map(|s| s.0).collect(),
        rstd: stats.iter().map(|s| s.1).collect(),
    }
}

pub struct GroupNormGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<T: Float>(
    exec: Exec,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
    mean: &[T],
    rstd: &[T],
    dy: &Tensor<T>,
) -> GroupNormGrads<T> {
    let (n, c, hw) = check(x, gamma, beta, groups);
    let cg = c / groups;
    let glen = cg * hw;
    let xd = x.data();
    let dyd = dy.data();
    // Per (sample, group): dx chunk plus per-channel (dgamma, dbeta) partials.
    let parts = exec.map(n * groups, |ng| {
        let g = ng % groups;
        let s = &xd[ng * glen..(ng + 1) * glen];
        let d = &dyd[ng * glen..(ng + 1) * glen];
        let (mu, rs) = (mean[ng], rstd[ng]);
        let mut dgb = vec![(T::zero(), T::zero()); cg];
        let mut sum_dxh = T::zero();
        let mut sum_dxh_xh = T::zero();
        for ci in 0..cg {
            let ga = gamma.data()[g * cg + ci];
            for j in ci * hw..(ci + 1) * hw {
                let xh = (s[j] - mu) * rs;
                dgb[ci].0 = dgb[ci].0 + d[j] * xh;
                dgb[ci].1 = dgb[ci].1 + d[j];
                let dxh = d[j] * ga;
                sum_dxh = sum_dxh + dxh;
                sum_dxh_xh = sum_dxh_xh + dxh * xh;
            }
        }
        let m = T::of(glen as f64);
        let mut dx = vec![T::zero(); glen];
        for ci in 0..cg {
            let ga = gamma.data()[g * cg + ci];
            for j in ci * hw..(ci + 1) * hw {
                let xh = (s[j] - mu) * rs;
                let dxh = d[j] * ga;
                dx[j] = rs / m * (m * dxh - sum_dxh - xh * sum_dxh_xh);
            }
        }
        (dx, dgb)
    });
    let mut dx = Vec::with_capacity(x.len());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for (ng, (pdx, dgb)) in parts.into_iter().enumerate() {
        dx.extend(pdx);
        let g = ng % groups;
        for (ci, (dga, dbe)) in dgb.into_iter().enumerate() {
            let ch = g * cg + ci;
            dgamma.data_mut()[ch] = dgamma.data()[ch] + dga;
            dbeta.data_mut()[ch] = dbeta.data()[ch] + dbe;
        }
    }
    GroupNormGrads {
        dx: Tensor::from_vec(x.shape(), dx),
        dgamma,
        dbeta,
    }
}
