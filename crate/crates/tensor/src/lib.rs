//! Dense tensors generic over `f32`/`f64` with a tape-based reverse-mode
//! differentiator, the layers the bilateral models are built from, an Adam
//! optimizer and a binary parameter container.

pub mod container;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use container::Container;
pub use error::{Result, TensorError};
pub use ops::Conv2dOpts;
pub use optim::{Adam, AdamConfig, StepDecay};
pub use params::{Binding, Bound, GradStore, ParameterStore};
pub use scalar::{DType, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Store32 = ParameterStore<f32>;
pub type Store64 = ParameterStore<f64>;
