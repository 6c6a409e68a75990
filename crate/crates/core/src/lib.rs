//! Learning over inherently distributed data with distortion-minimizing
//! local transforms.
//!
//! Each site compresses its rows into a small weighted [`dml::Signature`].
//! A coordinator pools the signatures into one [`numerics::WeightedDesign`],
//! fits a weighted learner and pushes the model back to every site. Raw rows
//! never leave the site that holds them.

pub mod dml;
pub mod federation;
pub mod learners;
pub mod numerics;
pub mod scenarios;
