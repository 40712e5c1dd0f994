//! Deterministic simulation of GPU-driven Rowhammer campaigns: a DRAM
//! disturbance model with TRR and SECDED, a software emulation of the
//! hammering compute kernel, texture-to-DRAM address mapping, the campaign
//! loop and flip-log analysis.

pub mod address_map;
pub mod analysis;
pub mod campaign;
pub mod config;
pub mod controller;
pub mod dram;
pub mod error;
pub mod kernel;
pub mod mitigations;
pub mod oracle;

pub use address_map::{pixels_per_row, texture_bytes, AllocationMap, MappingConfig, MappingKind};
pub use analysis::{cluster_rows, summarize, summarize_flips, RowBlock, Summary};
pub use campaign::{detect_flips, run_campaign, FlipRecord, RunReport};
pub use config::{preset, resolve_config, CampaignConfig};
pub use controller::MemorySystem;
pub use dram::{DramGeometry, DramState, FaultModel, FillPattern, PhysicalAddress};
pub use error::{Error, Result, Stage};
pub use kernel::{dispatch, KernelParams};
pub use mitigations::{ecc_filter, EccConfig, TrrConfig};
