pub mod autodiff;
pub mod blocks;
pub mod dataset;
pub mod features;
pub mod model;
pub mod evaluation;
pub mod training;
pub mod synthgen;
pub mod selftest;
pub mod cli;
