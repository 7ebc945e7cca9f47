//! Minimal differentiable core: an autodiff tape, the model, optimizers and
//! checkpoints.

pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod tape;

pub use checkpoint::Checkpoint;
pub use model::{BoundModel, Linear, Mlp, ModelDims, ModelParams};
pub use optim::{OptimKind, OptimState};
pub use tape::{Gradients, Tape, Tensor, Var};
