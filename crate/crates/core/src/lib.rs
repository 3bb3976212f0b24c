pub mod backend;
pub mod dataset;
pub mod domain;
pub mod optimizer;
pub mod policy;
pub mod reward;
pub mod trainer;
