//! Resilience-annotated RC toolkit: front end, source transformation,
//! simulated execution, error-management runtime and fault-injection campaigns.

pub mod bitmask;
pub mod frontend;
pub mod injector;
pub mod kernels;
pub mod transform;
pub mod runtime;
pub mod vm;
