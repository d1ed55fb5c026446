// SPDX-License-Identifier: MIT OR Apache-2.0

//! Inspection and steering toolkit for small decoder-only transformers.
//!
//! The crate runs a pure-CPU `f32` forward pass with a full activation
//! cache, decomposes the attribute-minus-instrument logit difference into
//! per-head and per-neuron direct effects, scales individual heads' value
//! streams, and evaluates completions over a suite of prepositional-phrase
//! attachment prompts.

pub mod attribution;
pub mod config;
pub mod container;
pub mod error;
pub mod intervention;
pub mod model;
pub mod suite;
pub mod tensor;
pub mod tokenizer;
pub mod toy;
pub mod weights;

pub use attribution::{AttributionMap, MapKind, TargetPair};
pub use config::{HeadRef, ModelConfig};
pub use error::{Error, Result};
pub use intervention::InterventionSpec;
pub use model::{ActivationCache, ForwardOutput, Model};
pub use suite::{Class, EvalResult, PromptItem};
pub use tensor::Tensor2D;
pub use tokenizer::Vocab;
pub use weights::Weights;
