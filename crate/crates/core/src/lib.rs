pub mod armodel;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod mamodel;
pub mod optimizer;
pub mod par;
pub mod pipeline;
pub mod qsim;
pub mod series;
pub mod swaptest;
