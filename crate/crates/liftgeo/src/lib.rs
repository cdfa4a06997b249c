//! Unsupervised 2D-to-3D human pose lifting via geometric self-supervision.
//!
//! A lifting network is trained on unpaired 2D poses alone: lifted skeletons
//! are rotated to random viewpoints, re-projected, and lifted again, and the
//! mismatch around that loop — together with a 2D pose discriminator, an
//! optional temporal discriminator, and an unsupervised 2D domain adapter —
//! supplies the whole training signal. The crate also ships evaluation
//! metrics (similarity-aligned MPJPE, PCK/AUC, limb-ratio statistics) and a
//! synthetic articulated-skeleton generator that provides ground truth for
//! verification.
//!
//! The guide in `book/` walks through each concept; its code snippets are run
//! as doc-tests.

pub mod data;
pub mod geometry;
pub mod models;
pub mod nn;

mod book;
