//! Dense tensors, a reverse-mode gradient tape and the Dense U-net.

pub mod arch;
pub mod checkpoint;
pub mod tape;
pub mod tensor;

pub use arch::{forward, init_params, value_and_grad, ArchConfig, NetworkParams};
pub use checkpoint::Checkpoint;
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};
