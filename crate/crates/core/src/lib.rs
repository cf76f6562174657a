pub mod cluster;
pub mod dataset;
pub mod linalg;
pub mod nn;
pub mod pca;
pub mod taskselect;
pub mod stats;
pub mod crossval;
pub mod synth;
pub mod pipeline;
pub mod svg;
pub mod cli;
