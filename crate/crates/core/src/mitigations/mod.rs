//! Target Row Refresh and SECDED ECC, layered over the DRAM model.

mod ecc;
mod trr;

pub use ecc::{ecc_filter, EccConfig, EccOutcome};
pub use trr::{Eviction, TrrConfig, TrrState};
