//! Tape-based reverse-mode differentiation over `f64` tensors.
//!
//! Values are computed eagerly as ops are recorded. Every op rejects
//! non-finite outputs with [`Error::NonFinite`](crate::Error::NonFinite),
//! so numeric blow-ups surface at the op that produced them.
//!
//! ```
//! use toothrecon::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).data(), &[2.0, -4.0]);
//! ```

mod checkpoint;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, manifest_path, restore_into, save_checkpoint, Manifest, TensorEntry};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use optim::{lr_at, AdamConfig, Bound, LrSchedule, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

