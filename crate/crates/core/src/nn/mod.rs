//! The frequency-shared sequence model: LSTM cells, (bi)directional layers,
//! dense head, backpropagation through time, Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod lstm;
pub mod model;
pub mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use lstm::lstm_cell_step;
pub use model::{model_backward, model_backward_into, model_forward, ForwardCache};
pub use params::{count_parameters, Arch, LstmLayerParams, ModelParameters, DESK_HIDDEN, FULL_HIDDEN};
