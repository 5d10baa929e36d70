//! Tensor arithmetic with reverse-mode differentiation, Adam, and the
//! warmup/inverse-square-root learning-rate schedule.

mod adam;
mod fdiff;
mod real;
mod schedule;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use fdiff::finite_diff_grad;
pub use real::{gemm, Real};
pub use schedule::{lr_at, LrSchedule};
pub use tape::{backprop, AttentionSpec, Gradients, Tape, Var};
pub use tensor::Tensor;


#[cfg(test)]
mod tests;
