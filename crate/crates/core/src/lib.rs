pub mod cli;
pub mod clusters;
pub mod error;
pub mod eval;
pub mod init;
pub mod model;
pub mod simgen;
pub mod solver;
