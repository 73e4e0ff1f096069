//! Recognition-synthesis voice conversion with two prosody pathways: source
//! prosody transfer through a global-style-token reference encoder, and
//! target text prediction of the style embedding from recognised content.

pub mod audio;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod gst;
pub mod model;
pub mod params;
pub mod pipelines;
pub mod recognizer;
pub mod synthesizer;
pub mod tensor;
pub mod toy;
pub mod tp;
pub mod viz;
pub mod vocoder;

pub use error::{Error, Result};
