//! Text-aware saliency prediction and brand-attention scoring.

pub mod adapter;
pub mod brand_score;
pub mod datamodel;
pub mod error;
pub mod net;
pub mod objectives;
pub mod pipeline;
pub mod textmap;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
