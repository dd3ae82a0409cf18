//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! sweeps it once in reverse. Index-producing operations (min/max
//! reductions, gathers) treat their indices as constants of the forward
//! pass, which is how nearest-neighbour and matching based losses are
//! differentiated.

mod params;
mod tape;
mod tensor;

pub use params::{Bound, ParamSet, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{input_gradient, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Central finite differences of a scalar function of a flat input.
pub fn finite_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`, the relative error used by gradient
/// checks.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
