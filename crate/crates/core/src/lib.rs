//! Adversarial knowledge distillation for compact graph neural networks.
//!
//! A small student GNN is trained against two discriminators: a
//! representation identifier that scores edge-endpoint and node-summary
//! pairs through diagonal bilinear forms, and a residual logit identifier
//! that separates teacher logits from student logits while also predicting
//! labels. Teacher knowledge (embeddings, logits, summary vectors) is
//! precomputed once and frozen.

pub mod cli;
pub mod distill;
pub mod graphio;
pub mod metrics;
pub mod models;
pub mod numkit;

pub use numkit::{CsrMatrix, DenseMatrix, NumError, Tape, Var};
