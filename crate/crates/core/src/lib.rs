//! Exact prior and posterior moments of stochastic-mapping summaries.
//!
//! The crate computes means, variances and covariances of additive
//! substitution-history summaries (labeled substitution counts and labeled
//! dwelling times) on a rooted binary phylogeny in a single post-order
//! traversal, so the cost grows linearly with the number of tips. Around
//! that engine sit the pieces needed to use and check it:
//!
//! * [`newick`]: tree parsing, indexing and rerooting.
//! * [`ctmc`]: reversible rate matrices, matrix exponentials and the
//!   per-branch restricted moment matrices.
//! * [`moments`]: the post-order moment engines (variance and covariance).
//! * [`simmap`]: simulation-based stochastic mapping, used as a Monte Carlo
//!   oracle.
//! * [`seqsim`]: alignment simulation and FASTA/PHYLIP/token I/O.
//! * [`ppred`]: posterior predictive rate-variation tests.
//! * [`sph`]: all-branch and subtree conservation tests and the
//!   power/false-positive harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ctmc;
pub mod error;
pub mod moments;
pub mod newick;
pub mod ppred;
pub mod rng;
pub mod seqsim;
pub mod simmap;
pub mod sph;
pub mod stats;

pub use error::{Error, Result};
