//! Sentiment-aligned explainable recommendation.
//!
//! A recommender predicts a rating from user/item embeddings through a latent
//! sentiment vector; a gated GRU generator writes an explanation conditioned on
//! that vector; a frozen sentiment regressor and an adversarial discriminator keep
//! the explanation's sentiment in line with the predicted rating, both during
//! training and at decode time.

pub mod alignment;
pub mod corpus;
pub mod critics;
pub mod decoding;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod recommender;
pub mod rng;

pub use error::{Error, Result};
