//! Multi-view self-supervised EEG sleep-staging: EDF ingestion, view
//! construction, ResNet and spectrogram encoders, contrastive pretraining,
//! a linear SVM back end and evaluation metrics.

pub mod config;
pub mod edf;
pub mod encoders;
pub mod epoching;
pub mod error;
pub mod features;
pub mod ingest;
pub mod io;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod pretrain;
pub mod svm;
pub mod synth;
pub mod views;

pub use error::{Error, Result};
