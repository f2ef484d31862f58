pub mod baselines;
pub mod dosegen;
pub mod dvh;
pub mod matrix;
pub mod model;
pub mod projection;
pub mod quadprog;
pub mod report;
pub mod reweight;
pub mod solver;
