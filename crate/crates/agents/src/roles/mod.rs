//! The six pipeline roles and the routing policy.

pub mod critic;
pub mod planner;
pub mod reviewer;
pub mod routing;
pub mod runner;
pub mod scientist;
pub mod validator;
