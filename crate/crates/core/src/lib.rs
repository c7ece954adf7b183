pub mod fem;
pub mod optimizer;
pub mod plan;
pub mod problem;
pub mod regularization;
pub mod sensitivity;
