//! Seq2seq AMR parsing toolkit.
//!
//! Graphs go through [`preprocess`] into flat target sequences, through
//! [`bpe`] into a subword vocabulary shared by every task, and are paired
//! with task tags by [`corpus`]. A Transformer encoder-decoder ([`model`])
//! is pre-trained and fine-tuned by [`train`]; its output is turned back
//! into graphs by [`postprocess`] and scored with [`metrics`].

pub mod amr;
pub mod bpe;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod preprocess;
pub mod synthetic;
pub mod train;
