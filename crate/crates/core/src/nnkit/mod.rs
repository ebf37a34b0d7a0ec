//! Small neural toolkit: parameter storage, MLPs, and two engines (eager and
//! recording) with forward-mode tangents on top.

pub mod dual;
pub mod engine;
pub mod gradcheck;
pub mod kernels;
pub mod mlp;
pub mod params;
pub mod tape;

pub use dual::{DVal, Dual};
pub use engine::{Eager, Engine};
pub use gradcheck::grad_check;
pub use kernels::Fun;
pub use mlp::{Hidden, Mlp, MlpSpec, Output};
pub use params::{Checkpoint, Init, ParamId, ParamStore, TensorJson};
pub use tape::{Gradients, NodeId, Tape};
