//! Dense matrices, a reverse-mode tape, MLPs and the Adam optimizer.

pub mod checkpoint;
pub mod mat;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod tape;

pub use checkpoint::Checkpoint;
pub use mat::Mat;
pub use mlp::{Activation, Mlp, OutputMap};
pub use optim::{AdamConfig, OptimState};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Adjoints, Tape, Var};
