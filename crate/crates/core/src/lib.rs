//! Semi-supervised text classification toolkit.
//!
//! A small differentiable text encoder trained on a joint objective:
//! supervised cross-entropy, KL consistency between a teacher snapshot and the
//! student on augmented unlabeled text, an embedding-space adversarial loss
//! (FGM or PGD), and a momentum-queue InfoNCE contrastive loss over
//! word-repetition positives. Robustness is measured with standard/robust
//! accuracy under a cross attack.
//!
//! Data-parallel inner loops (per-example forward/backward, per-example
//! attacks) go through [`par`], which uses rayon when the `parallel` feature is
//! enabled and a plain iterator otherwise. Results are collected in example
//! order and reduced sequentially, so both paths are bitwise identical.

pub mod augment;
pub mod cli;
pub mod corpus;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod losses;
pub mod par;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
