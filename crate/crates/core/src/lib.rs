//! Narrow-band deep filtering for multichannel speech enhancement.
//!
//! Every STFT frequency bin of a multichannel recording is treated as an
//! independent sequence. One (B)LSTM, shared by all bins, maps the normalized
//! multichannel sequence to a clean-speech target for the reference channel:
//! a magnitude mask, the complex coefficient, or a spatial filter (optionally
//! temporally smoothed).

pub mod audio;
pub mod enhancer;
pub mod error;
pub mod eval;
pub mod features;
pub mod manifest;
pub mod mixer;
pub mod nn;
pub mod parallel;
pub mod scalar;
pub mod stft;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};
