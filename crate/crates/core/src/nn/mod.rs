//! Dense tensors, reverse-mode autodiff, MLPs and Adam.
//!
//! Checkpoint container: a JSON object whose parameter lists are arrays of
//! `{"name": .., "shape": [rows, cols], "values": [..]}` records in row-major
//! order (see [`ParamRecord`]).

mod adam;
mod mlp;
mod store;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use mlp::{mlp_forward, Activation, Mlp};
pub use store::{ParamId, ParamRecord, ParamStore};
pub use tape::{softplus, Tape, Var};
pub use tensor::Tensor;

/// Central finite-difference gradient of `loss` with respect to every
/// scalar in `store`, in [`ParamStore::flat_values`] order.
///
/// Only forward evaluations are used, so this serves as an oracle for
/// [`Tape::backward`].
pub fn finite_difference_grad(
    store: &mut ParamStore,
    h: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> Vec<f64> {
    let base = store.flat_values();
    let mut out = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        store.set_flat_values(&probe);
        let up = loss(store);
        probe[i] = base[i] - h;
        store.set_flat_values(&probe);
        let down = loss(store);
        probe[i] = base[i];
        out.push((up - down) / (2.0 * h));
    }
    store.set_flat_values(&base);
    out
}

/// Largest elementwise relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
