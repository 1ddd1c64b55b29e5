//! Recordings, preprocessing, augmentation and synthetic data.
//!
//! Pipeline order: band-pass on the continuous trial, window extraction per
//! event, per-channel z-score per window, then (training only) augmentation.

pub mod augment;
pub mod filter;
pub mod manifest;
pub mod preprocess;
pub mod synth;
pub mod trial;

pub use augment::{augment, AugmentConfig};
pub use filter::{bandpass, butter_bandpass, Sos};
pub use manifest::{load_dataset, write_dataset, Dataset};
pub use preprocess::{extract_segment, preprocess, segment_trial, window_bounds, zscore, PreprocessConfig};
pub use synth::{synth_generate, SynthConfig, SynthGenerator};
pub use trial::{Class, Event, SampleId, Segment, Trial};
