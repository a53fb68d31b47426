//! Fixed-topology CNN encoder: conv/residual/pool/dense layers with
//! hand-written backward passes, SGD with momentum and weight decay, and the
//! stepwise learning-rate ladder.

mod checkpoint;
mod config;
mod encoder;
mod optim;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointHeader, TensorEntry, CHECKPOINT_VERSION};
pub use config::{shape_propagate, ActShape, EncoderConfig, LayerConfig};
pub use encoder::{init_params, Encoder, ForwardCache, InitScheme, Mode, Params};
pub use optim::{lr_at, sgd_step, LrSchedule, OptimizerState};
pub use tensor::Tensor;

pub(crate) use encoder::xavier_uniform as encoder_xavier;
