//! Evaluation harness for saliency-based explanation methods.
//!
//! The crowd path runs a progressive-exposure guessing game in which a
//! saliency method decides which pixels are shown and a worker guesses the
//! class; the automated path measures a classifier on images with the top
//! ranked pixels kept or removed. Both paths produce accuracy-exposure
//! curves that [`metrics`] turns into AUCs, rankings and correlations.

pub mod classifier;
pub mod dataset;
pub mod masking;
pub mod saliency;
pub mod salm;
pub mod metrics;
pub mod seeds;
pub mod storage;
pub mod crowdgame;
pub mod simcrowd;
pub mod autoeval;
pub mod pipeline;
pub mod remote;
