pub mod agent;
pub mod ann;
pub mod collections;
pub mod curation;
pub mod encoders;
pub mod linkgraph;
pub mod model;
pub mod nn;
pub mod ranker;
pub mod synth;
