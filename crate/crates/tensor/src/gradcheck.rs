//! Central finite-difference oracle for checking analytic gradients.

use crate::{Exec, Graph, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(leaf index, element index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Relative error with an absolute floor, so that vanishing gradients are
/// compared on an absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares the gradient of `build`'s scalar output with central differences.
///
/// `build` receives a fresh graph and one grad-tracking leaf per entry of
/// `leaves`. For leaf `i`, the elements listed in `probe[i]` are checked.
pub fn check<F>(leaves: &[Tensor<f64>], probe: &[Vec<usize>], step: f64, build: F) -> GradCheckReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    assert_eq!(leaves.len(), probe.len());
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new(Exec::Sequential);
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).item()
    };

    let mut g = Graph::new(Exec::Sequential);
    let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss);

    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    for (li, idxs) in probe.iter().enumerate() {
        let analytic = grads.get(vars[li]);
        for &e in idxs {
            let a = analytic.map_or(0.0, |t| t.data()[e]);
            let orig = work[li].data()[e];
            work[li].data_mut()[e] = orig + step;
            let up = eval(&work);
            work[li].data_mut()[e] = orig - step;
            let down = eval(&work);
            work[li].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            let r = rel_err(a, numeric);
            report.checked += 1;
            if r > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(r);
                report.worst = Some((li, e, a, numeric));
            }
        }
    }
    report
}

/// Evenly spread probe indices: `count` elements out of `len`.
pub fn spread(len: usize, count: usize) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    (0..count).map(|i| (i * len) / count + (len / count) / 2).collect()
}
