//! Selective soft-error hardening for a small three-address IR.
//!
//! The pipeline: parse a program ([`ir`]), find the variables and blocks
//! whose corruption is most likely to derail control flow ([`dependence`],
//! [`criticality`]), build a hardened container with a golden backup
//! ([`hardener`]), execute it with twin execution of protected blocks
//! ([`vm`]), and measure detection, recovery and overhead under single-bit
//! faults ([`fault`], [`campaign`]).

pub mod campaign;
pub mod criticality;
pub mod dependence;
pub mod fault;
pub mod hardener;
pub mod ir;
pub mod vm;
