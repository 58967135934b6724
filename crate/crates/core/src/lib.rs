//! Boundary regression for nested named-entity recognition.
//!
//! Entity candidates are 1-D boxes over a fixed-length sentence. A bidirectional recurrent
//! encoder feeds a classifier and an offset regressor per candidate; training matches
//! candidates to gold boxes by IoU, and inference regresses, suppresses overlaps and rounds
//! back to tokens.

pub mod checkpoint;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod eval;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod proposal;
pub mod state;
pub mod trainer;
