pub mod boiler;
pub mod ensemble;
pub mod hybrid;
pub mod local_control;
pub mod polytope;
pub mod simctl;
pub mod solvers;
pub mod sysid;
pub mod uc;
