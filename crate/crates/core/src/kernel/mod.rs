//! Software model of the hammering compute shader.
//!
//! Threads are organised in 16x16 workgroups. Each thread owns an LCG stream
//! seeded from its global id and the `uSeed` uniform, and every iteration
//! loads two texels on rows drawn above and below the victim row. The loaded
//! values are summed into a per-thread accumulator that is written to the
//! result buffer, so no load can be skipped without changing the output.

mod dispatch;
mod lcg;

use serde::{Deserialize, Serialize};

pub use dispatch::{
    dispatch, dispatch_observed, hammer_thread_step, DispatchStats, LoadObserver, ResultBuffer,
    ThreadState,
};
pub use lcg::{rand_lcg, thread_seed, Lcg, LCG_INCREMENT, LCG_MULTIPLIER};

use crate::address_map::pixels_per_row;
use crate::dram::DramGeometry;
use crate::error::{Error, Result};

/// Workgroup edge length; workgroups are `LOCAL_SIZE x LOCAL_SIZE` threads.
pub const LOCAL_SIZE: u32 = 16;

/// How a thread's linear id is combined with `uSeed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedMix {
    Xor,
    Add,
}

/// Column each thread reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BankedX {
    /// `(linear_id % num_banks) * (texture_width / num_banks)`
    BankSpread,
    /// Every thread reads column 0.
    Zero,
}

/// Shader uniforms plus dispatch geometry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    #[serde(rename = "uIterations")]
    pub iterations: u32,
    #[serde(rename = "uVictimRow")]
    pub victim_row: u32,
    #[serde(rename = "uSeed")]
    pub seed: u32,
    pub texture_width: u32,
    pub texture_height: u32,
    pub workgroups_x: u32,
    pub workgroups_y: u32,
    /// Random row offsets are taken modulo this window.
    pub offset_window: u32,
    pub lcg_multiplier: u32,
    pub lcg_increment: u32,
    pub seed_mix: SeedMix,
    pub banked_x: BankedX,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            iterations: 50_000,
            victim_row: 64,
            seed: 0,
            texture_width: 2048,
            texture_height: 128,
            workgroups_x: 1,
            workgroups_y: 1,
            offset_window: 8,
            lcg_multiplier: LCG_MULTIPLIER,
            lcg_increment: LCG_INCREMENT,
            seed_mix: SeedMix::Xor,
            banked_x: BankedX::BankSpread,
        }
    }
}

impl KernelParams {
    /// Threads along x across the whole dispatch.
    pub fn total_width(&self) -> u32 {
        self.workgroups_x * LOCAL_SIZE
    }

    pub fn total_height(&self) -> u32 {
        self.workgroups_y * LOCAL_SIZE
    }

    pub fn thread_count(&self) -> u64 {
        self.total_width() as u64 * self.total_height() as u64
    }

    pub fn validate(&self, geometry: &DramGeometry) -> Result<()> {
        let ppr = pixels_per_row(geometry.row_size_bytes, geometry.bytes_per_pixel)?;
        if self.texture_width != ppr {
            return Err(Error::config(format!(
                "texture_width {} must equal pixels per DRAM row {ppr}",
                self.texture_width
            )));
        }
        if self.texture_height == 0 {
            return Err(Error::config("texture_height must be positive"));
        }
        if self.workgroups_x == 0 || self.workgroups_y == 0 {
            return Err(Error::config("workgroup counts must be positive"));
        }
        if self.offset_window == 0 {
            return Err(Error::config("offset_window must be >= 1"));
        }
        let threads = (self.workgroups_x as u64 * LOCAL_SIZE as u64)
            .checked_mul(self.workgroups_y as u64 * LOCAL_SIZE as u64);
        if threads.is_none_or(|t| t > u32::MAX as u64) {
            return Err(Error::config("dispatch has too many threads"));
        }
        Ok(())
    }
}
