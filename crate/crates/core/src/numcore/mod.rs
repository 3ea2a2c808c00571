//! Dense tensors, tape-based reverse-mode differentiation, and optimization.

pub mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{AdamState, LrSchedule, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Row softmax of a rank-2 tensor with an optional boolean mask of the same shape.
pub fn softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> crate::Result<Tensor> {
    let (r, c) = x.dims2()?;
    if let Some(m) = mask {
        if m.len() != r * c {
            return Err(crate::Error::Shape(format!("mask has {} entries for a {r}x{c} input", m.len())));
        }
    }
    Tensor::new(vec![r, c], kernels::softmax_rows(x.data(), r, c, mask)?)
}
