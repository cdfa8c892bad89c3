//! Central finite-difference gradient checking.
//!
//! Treats any [`Parametrized`] model as a flat coordinate vector,
//! perturbs a seeded sample of coordinates one at a time, and compares
//! `(L(θ+h) - L(θ-h)) / 2h` against the analytic gradient produced by
//! the model's own backward pass.

use rand::Rng;

use super::{flat_grads, flat_params, param_label, Parametrized};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub n_checked: usize,
    pub max_rel_err: f64,
    /// Label of the worst coordinate, e.g. `enc.ff1.w[17]`.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Set the parameter at flat index `idx` to an exact value.
fn set_param(model: &mut dyn Parametrized, idx: usize, value: f64) {
    let mut off = 0usize;
    let mut done = false;
    model.visit_params(&mut |_, v, _| {
        if !done && idx < off + v.len() {
            v[idx - off] = value;
            done = true;
        }
        off += v.len();
    });
    assert!(done, "parameter index {idx} out of range");
}

/// Compare analytic gradients against central differences on up to
/// `n_coords` seeded-random coordinates (all of them if the model is
/// smaller than that).
///
/// `backward_fn` must zero the gradient buffers, run forward + backward
/// on a fixed batch, and leave gradients in the model. `loss_fn` must
/// recompute the same loss without touching gradients. Both must be
/// deterministic in the parameters.
///
/// Relative error uses `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// near-zero gradients (e.g. dead ReLU paths) from amplifying
/// finite-difference round-off into spurious failures.
pub fn finite_diff_check<M, FL, FB>(
    model: &mut M,
    mut loss_fn: FL,
    mut backward_fn: FB,
    n_coords: usize,
    seed: u64,
) -> GradCheckReport
where
    M: Parametrized,
    FL: FnMut(&mut M) -> f64,
    FB: FnMut(&mut M),
{
    backward_fn(model);
    let analytic = flat_grads(model);
    let theta = flat_params(model);
    let n = analytic.len();
    assert!(n > 0, "model has no parameters");

    let coords: Vec<usize> = if n_coords >= n {
        (0..n).collect()
    } else {
        // partial Fisher-Yates: first n_coords entries of a seeded shuffle
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = crate::rng::substream(seed, "gradcheck/coords");
        for i in 0..n_coords {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
        }
        idx.truncate(n_coords);
        idx
    };

    let mut max_rel_err = 0.0f64;
    let mut worst = String::new();
    for &i in &coords {
        let h = 1e-5 * theta[i].abs().max(1.0);
        set_param(model, i, theta[i] + h);
        let lp = loss_fn(model);
        set_param(model, i, theta[i] - h);
        let lm = loss_fn(model);
        set_param(model, i, theta[i]);
        let numeric = (lp - lm) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = format!(
                "{} analytic={a:.3e} numeric={numeric:.3e}",
                param_label(model, i)
            );
        }
    }
    GradCheckReport {
        n_checked: coords.len(),
        max_rel_err,
        worst,
    }
}
