use std::fmt;

use serde::{Deserialize, Serialize};

use crate::address_map::AllocationMap;
use crate::dram::{BitImage, PhysicalAddress};
use crate::error::{Error, Result};
use crate::mitigations::{ecc_filter, EccConfig, EccOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlipDirection {
    #[serde(rename = "1->0")]
    OneToZero,
    #[serde(rename = "0->1")]
    ZeroToOne,
}

impl FlipDirection {
    /// Value the cell held before flipping.
    pub fn original_bit(self) -> bool {
        self == FlipDirection::OneToZero
    }
}

impl fmt::Display for FlipDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlipDirection::OneToZero => "1->0",
            FlipDirection::ZeroToOne => "0->1",
        })
    }
}

/// One detected bit flip, as written to the flip log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipRecord {
    pub physical_address: u64,
    pub physical_address_hex: String,
    pub bank: u32,
    pub row: u32,
    pub byte_offset: u32,
    pub bit: u8,
    pub texture_x: u32,
    pub texture_y: u32,
    pub generation: u32,
    pub direction: FlipDirection,
    pub round: u32,
    pub visible_after_ecc: bool,
    pub reproduced_count: u32,
}

impl FlipRecord {
    pub fn address(&self) -> PhysicalAddress {
        PhysicalAddress::new(self.bank, self.row, self.byte_offset, self.bit)
    }

    /// Byte address of the start of the flipped row.
    pub fn row_address(&self) -> u64 {
        self.physical_address - self.byte_offset as u64
    }
}

pub fn format_address(addr: u64) -> String {
    format!("0x{addr:016x}")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Detection {
    /// Every differing bit inside the texture, sorted by address.
    pub raw: Vec<FlipRecord>,
    /// The subset left after SECDED correction.
    pub visible: Vec<FlipRecord>,
    pub ecc: EccOutcome,
}

/// Compares the texture footprint of two images and classifies the
/// differences through the ECC filter.
pub fn detect_flips(
    original: &BitImage,
    current: &BitImage,
    map: &AllocationMap,
    ecc: &EccConfig,
    round: u32,
) -> Result<Detection> {
    let geometry = original.geometry();
    if geometry != current.geometry() {
        return Err(Error::usage("bit images have different shapes"));
    }
    let mut raw = Vec::new();
    for y in 0..map.height {
        let (bank, row) = map.row_of(y, geometry.num_banks);
        let (a, b) = (original.row(bank, row), current.row(bank, row));
        for (offset, (&before, &after)) in a.iter().zip(b).enumerate() {
            let diff = before ^ after;
            if diff == 0 {
                continue;
            }
            for bit in 0..8u8 {
                if diff >> bit & 1 == 0 {
                    continue;
                }
                let addr = PhysicalAddress::new(bank, row, offset as u32, bit);
                let absolute = geometry.absolute_address(&addr);
                raw.push(FlipRecord {
                    physical_address: absolute,
                    physical_address_hex: format_address(absolute),
                    bank,
                    row,
                    byte_offset: offset as u32,
                    bit,
                    texture_x: offset as u32 / map.bytes_per_pixel,
                    texture_y: y,
                    generation: map.generation,
                    direction: if before >> bit & 1 == 1 {
                        FlipDirection::OneToZero
                    } else {
                        FlipDirection::ZeroToOne
                    },
                    round,
                    visible_after_ecc: false,
                    reproduced_count: 0,
                });
            }
        }
    }
    raw.sort_by_key(|r| (r.physical_address, r.bit));
    let addrs: Vec<PhysicalAddress> = raw.iter().map(FlipRecord::address).collect();
    let outcome = ecc_filter(&addrs, ecc);
    let visible_set: std::collections::HashSet<PhysicalAddress> =
        outcome.visible.iter().copied().collect();
    for r in &mut raw {
        r.visible_after_ecc = visible_set.contains(&r.address());
    }
    let visible = raw
        .iter()
        .filter(|r| r.visible_after_ecc)
        .cloned()
        .collect();
    Ok(Detection {
        raw,
        visible,
        ecc: outcome,
    })
}
