//! County-level analytics for behavioral vaccine hesitancy.
//!
//! The crate is organized by pipeline stage:
//!
//! * [`county`] loads, fuses and imputes FIPS-keyed county datasets.
//! * [`hesitancy`] turns cumulative vaccination fractions into the
//!   behavioral hesitancy metric `VHb = (1 - q_t) / (1 - q_{t-lag})`.
//! * [`numerics`] provides PCA, Pearson correlation and multicollinearity
//!   filtering.
//! * [`breaks`] computes optimal Fisher-Jenks natural breaks and assigns
//!   ordered cluster labels.
//! * [`forest`] is a CART random forest with vote-fraction probabilities and
//!   stratified cross validation.
//! * [`attribution`] explains a forest with permutation importance and exact
//!   TreeSHAP values.
//! * [`text`] scores tweets with a lexicon, fits LDA topic models and builds
//!   county-level text features.

pub mod attribution;
pub mod breaks;
pub mod county;
pub mod forest;
pub mod hesitancy;
pub mod matrix;
pub mod numerics;
pub mod rng;
pub mod text;

pub use matrix::Matrix;
