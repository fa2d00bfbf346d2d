//! Radio resource management for device-to-device links underlaying a
//! multi-cell cellular uplink.
//!
//! * [`topology`]: hexagonal multi-cell drops and path gains
//! * [`lte_pc`]: the LTE uplink power-control toolkit
//! * [`utility_pc`]: distributed utility-maximising power control
//! * [`ra`]: mode selection and RB allocation heuristics
//! * [`oracle`]: direct reference solutions used to check the iterative code
//! * [`sim`]: Monte Carlo experiments
//! * [`cli`]: config files, presets and result files

pub mod cli;
pub mod error;
pub mod lte_pc;
pub mod oracle;
pub mod ra;
pub mod sim;
pub mod topology;
pub mod units;
pub mod utility_pc;
