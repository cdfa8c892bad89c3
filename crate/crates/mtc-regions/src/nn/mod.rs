//! Small hand-rolled neural-network toolkit.
//!
//! Differentiation is written out by hand per layer (no tape, no
//! framework): each layer exposes `forward` plus a `backward` that
//! consumes cached activations, accumulates parameter gradients in
//! place, and returns the gradient with respect to its input. Models
//! expose their parameters through the [`Parametrized`] visitor so the
//! optimizer and the finite-difference checker can treat any model as a
//! flat coordinate vector.

pub mod adam;
pub mod attention;
pub mod gradcheck;
pub mod layers;

/// Visitor over named parameter tensors: `(name, values, grads)`.
/// The visiting order must be fixed for a given model structure — the
/// optimizer state and the gradient checker index coordinates by it.
pub type ParamVisitor<'a> = dyn FnMut(&str, &mut [f64], &mut [f64]) + 'a;

pub trait Parametrized {
    fn visit_params(&mut self, f: &mut ParamVisitor);
}

/// Total number of scalar parameters.
pub fn n_params(model: &mut dyn Parametrized) -> usize {
    let mut n = 0;
    model.visit_params(&mut |_, v, _| n += v.len());
    n
}

/// Set every gradient to zero.
pub fn zero_grads(model: &mut dyn Parametrized) {
    model.visit_params(&mut |_, _, g| g.fill(0.0));
}

/// Snapshot of all gradients in visiting order.
pub fn flat_grads(model: &mut dyn Parametrized) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit_params(&mut |_, _, g| out.extend_from_slice(g));
    out
}

/// Snapshot of all parameter values in visiting order.
pub fn flat_params(model: &mut dyn Parametrized) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit_params(&mut |_, v, _| out.extend_from_slice(v));
    out
}

/// Overwrite every parameter from a flat snapshot in visiting order.
/// Panics if the snapshot length does not match the model.
pub fn set_flat_params(model: &mut dyn Parametrized, flat: &[f64]) {
    let mut off = 0usize;
    model.visit_params(&mut |_, v, _| {
        v.copy_from_slice(&flat[off..off + v.len()]);
        off += v.len();
    });
    assert_eq!(off, flat.len(), "parameter snapshot length mismatch");
}

/// Add `delta` to the parameter at flat index `idx`.
pub fn nudge_param(model: &mut dyn Parametrized, idx: usize, delta: f64) {
    let mut off = 0usize;
    let mut done = false;
    model.visit_params(&mut |_, v, _| {
        if !done && idx < off + v.len() {
            v[idx - off] += delta;
            done = true;
        }
        off += v.len();
    });
    assert!(done, "parameter index {idx} out of range");
}

/// Name and in-tensor offset of the parameter at flat index `idx`.
pub fn param_label(model: &mut dyn Parametrized, idx: usize) -> String {
    let mut off = 0usize;
    let mut label = String::new();
    model.visit_params(&mut |name, v, _| {
        if label.is_empty() && idx < off + v.len() {
            label = format!("{name}[{}]", idx - off);
        }
        off += v.len();
    });
    label
}

/// Largest absolute gradient component; `None` if any is non-finite.
pub fn grad_linf(model: &mut dyn Parametrized) -> Option<f64> {
    let mut worst = 0.0f64;
    let mut finite = true;
    model.visit_params(&mut |_, _, g| {
        for x in g.iter() {
            if !x.is_finite() {
                finite = false;
            } else {
                worst = worst.max(x.abs());
            }
        }
    });
    finite.then_some(worst)
}
