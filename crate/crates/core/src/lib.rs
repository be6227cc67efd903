//! Relation module for detecting unanswerable questions in extractive
//! reading comprehension.
//!
//! A small recurrent reader encodes question and context. The context is
//! augmented with hidden states trained on plausible and true answer spans,
//! multi-head self-attentive pooling turns both sides into a handful of
//! "objects", and a pairwise relation network over the context objects,
//! guided by two question objects, produces a no-answer logit. That logit
//! fills a virtual no-answer slot appended to the reader's start and end
//! distributions, and everything is trained jointly.

pub mod augment;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod objects;
pub mod reader;
pub mod relnet;
pub mod substrate;

pub use error::{Error, Result};
