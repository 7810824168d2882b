pub mod coefficient_model;
pub mod expr;
pub mod flow;
pub mod hull_bounds;
pub mod parametrix;
pub mod quadrature;
pub mod stable_sim;
pub mod stable_kernels;
pub mod verification;
