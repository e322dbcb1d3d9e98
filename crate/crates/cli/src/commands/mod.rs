pub mod eval;
pub mod fl;
pub mod sweeps;
pub mod train;
