//! Gradient estimators for expectations over factorial categorical
//! distributions.
//!
//! The crate is organised bottom-up:
//!
//! - [`dist`]: logits, probabilities, score functions, sampling, and the
//!   stick-breaking / tree binary parameterizations with their chain-rule
//!   adapters back to categorical logits.
//! - [`couplings`]: antithetic Bernoulli pairs, the stick-breaking and tree
//!   couplings, their joint pmfs and importance weights.
//! - [`estimators`]: REINFORCE, RLOO, binary DisARM, DisARM-IW, DisARM-SB and
//!   DisARM-Tree.
//! - [`ars`]: the Dirichlet-augmentation family (ARS, ARSM, ARS+, ARSM+).
//! - [`registry`]: a uniform, string-addressable front end over all of them.
//! - [`oracle`]: exact enumeration and Monte Carlo ground truth.
//! - [`toy`]: lookup objectives and a linear categorical VAE.
//! - [`checks`]: the verification suite, shared by `catgrad verify` and the
//!   acceptance tests.
//! - [`bench`]: training runs and the variance replay behind the `catgrad`
//!   binary.
//!
//! Categories are 0-based everywhere in the API.

pub mod ars;
pub mod bench;
pub mod checks;
pub mod couplings;
pub mod dist;
mod error;
pub mod estimators;
pub mod numeric;
pub mod oracle;
pub mod registry;
pub mod rng;
pub mod toy;

pub use error::{Error, Result};
