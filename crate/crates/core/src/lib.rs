pub mod complexboson;
pub mod covariance;
pub mod fermion;
pub mod matrix;
pub mod montecarlo;
pub mod multigraph;
pub mod scalar;
pub mod scaling;
pub mod wick;
