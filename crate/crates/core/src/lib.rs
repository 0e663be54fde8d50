//! Dependency parsing by recursive graph-to-graph refinement.

pub mod checkpoint;
pub mod conllu;
pub mod decode;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod refine;
pub mod scorer;
pub mod synthetic;
pub mod train;
pub mod vocab;
