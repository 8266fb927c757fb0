//! Equivariant boosting for 3D molecular conformer generation.
//!
//! A conformer is refined by `M` applications of one weight-shared,
//! SE(3)-equivariant graph attention learner, each predicting per-atom
//! displacements. The crate also carries the training objective
//! (symmetry-aware RMSD plus internal-coordinate terms), the two
//! initializers (random and constrained-random), ensemble metrics and an
//! EDM-style diffusion baseline.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, checkpoints
//! and the command-line driver live in the `equiboost` crate.

#![no_std]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod boost;
pub mod edm;
pub mod elements;
pub mod equivariant;
mod error;
pub mod geometry;
pub mod hungarian;
pub mod losses;
pub mod metrics;
pub mod molgraph;
pub mod optim;
pub mod real;
pub mod sampler;
pub mod symmetry;

pub use error::{Error, Result};
pub use geometry::{Conformation, Point};
pub use molgraph::{AtomSpec, BondOrder, HigherOrderAdjacency, MolGraph};
pub use symmetry::{SwapGroup, SymmetryScheme};
