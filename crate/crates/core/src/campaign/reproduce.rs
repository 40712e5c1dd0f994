use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::record::{detect_flips, FlipRecord};
use crate::address_map::AllocationMap;
use crate::controller::{Checkpoint, MemorySystem};
use crate::dram::PhysicalAddress;
use crate::error::{Error, Result};
use crate::kernel::{dispatch, DispatchStats, KernelParams};
use crate::mitigations::EccConfig;

/// What a round started from: its kernel parameters and the controller
/// state before the first activation.
#[derive(Debug, Clone)]
pub struct RoundOrigin {
    pub round: u32,
    pub params: KernelParams,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReproductionReport {
    /// Records whose exact cell flipped again.
    pub reproduced: u64,
    /// Flips seen during the re-run that were not in the original set.
    pub new_flips: u64,
    pub dispatch: DispatchStats,
}

/// Writes the original value back into every flipped cell, replays the
/// round's dispatch from its starting controller state and counts which
/// cells flip again. `params` must equal the parameters the round ran with.
pub fn attempt_reproduction(
    flips: &mut [FlipRecord],
    origin: &RoundOrigin,
    params: &KernelParams,
    mem: &mut MemorySystem,
    map: &AllocationMap,
) -> Result<ReproductionReport> {
    if flips.is_empty() {
        return Err(Error::usage("nothing to reproduce: flip list is empty"));
    }
    if *params != origin.params {
        return Err(Error::usage(
            "reproduction must reuse the originating round's kernel parameters",
        ));
    }
    if flips
        .iter()
        .any(|f| f.round != origin.round || f.generation != map.generation)
    {
        return Err(Error::usage(
            "flips come from a different round or allocation",
        ));
    }
    mem.rewind(&origin.checkpoint);
    for f in flips.iter() {
        let addr = PhysicalAddress::new(f.bank, f.row, f.byte_offset, 0);
        let current = mem.dram.read_byte(&addr)?;
        let mask = 1u8 << f.bit;
        let restored = if f.direction.original_bit() {
            current | mask
        } else {
            current & !mask
        };
        mem.dram.write_byte(&addr, restored)?;
    }
    let before = mem.dram.snapshot();
    let (_, stats) = dispatch(params, map, mem)?;
    let again = detect_flips(
        &before,
        &mem.dram.snapshot(),
        map,
        &EccConfig::disabled(),
        origin.round,
    )?;
    let seen: HashSet<PhysicalAddress> = again.raw.iter().map(FlipRecord::address).collect();
    let mut reproduced = 0;
    for f in flips.iter_mut() {
        if seen.contains(&f.address()) {
            f.reproduced_count += 1;
            reproduced += 1;
        }
    }
    Ok(ReproductionReport {
        reproduced,
        new_flips: seen.len() as u64 - reproduced,
        dispatch: stats,
    })
}
