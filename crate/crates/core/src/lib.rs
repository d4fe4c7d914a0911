//! Application-category labeling of encrypted network traffic from packet
//! timing and size metadata.
//!
//! The pipeline runs capture → [`ingest`] → [`windowing`] → [`features`] →
//! [`protonet`] embedding, and scores each window with calibrated class
//! probabilities and an out-of-distribution score from [`ood`].

pub mod config;
pub mod dataset;
pub mod evalkit;
pub mod features;
pub mod ingest;
pub mod model;
pub mod ood;
pub mod pipeline;
pub mod protonet;
pub mod windowing;

mod util;
