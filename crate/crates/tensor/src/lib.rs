//! Dense `f32`/`f64` tensors with a recording tape for reverse-mode
//! automatic differentiation.
//!
//! ```
//! use depref_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let a = tape.leaf(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).with_requires_grad());
//! let b = tape.constant(Tensor::from_rows(&[[1.0], [1.0]]));
//! let ab = tape.matmul(a, b).unwrap();
//! let loss = tape.sum(ab);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(a).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
//! ```

mod elem;
mod error;
pub mod gradcheck;
pub mod init;
pub mod kernels;
pub mod optim;
mod param;
mod tape;
mod tensor;

pub use elem::Elem;
pub use error::TensorError;
pub use gradcheck::{grad_check, grad_check_params};
pub use optim::{AdamW, WarmupLinear};
pub use param::{Param, ParamId, ParamStore};
pub use tape::{BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;
