pub mod audit;
pub mod cli;
pub mod error;
pub mod fd;
pub mod grid;
pub mod kernel;
pub mod mild;
pub mod quadrature;
pub mod sde;
pub mod stats;
