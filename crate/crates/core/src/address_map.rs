//! Texture-to-DRAM placement.
//!
//! One texture row always occupies exactly one DRAM row. In block-interleaved
//! mode texture rows come in runs of `block_rows` physically contiguous rows,
//! with `block_stride_bytes` of foreign memory between consecutive runs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dram::{DramGeometry, PhysicalAddress};
use crate::error::{Error, Result};

/// Texels per texture row when one texture row fills one DRAM row.
pub fn pixels_per_row(row_size_bytes: u32, bytes_per_pixel: u32) -> Result<u32> {
    if bytes_per_pixel == 0 || !row_size_bytes.is_multiple_of(bytes_per_pixel) {
        return Err(Error::config(format!(
            "bytes_per_pixel {bytes_per_pixel} does not divide row size {row_size_bytes}"
        )));
    }
    Ok(row_size_bytes / bytes_per_pixel)
}

pub fn texture_bytes(width: u32, height: u32, bytes_per_pixel: u32) -> Result<u64> {
    if width == 0 || height == 0 || bytes_per_pixel == 0 {
        return Err(Error::config("texture dimensions must be positive"));
    }
    (width as u64)
        .checked_mul(height as u64)
        .and_then(|n| n.checked_mul(bytes_per_pixel as u64))
        .ok_or_else(|| Error::config("texture size overflows"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingKind {
    Linear,
    BlockInterleaved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BankRule {
    /// The whole texture lives in `base_bank`.
    Fixed,
    /// Row block `k` lives in bank `(base_bank + k) % num_banks`.
    RoundRobin,
}

/// Mapping parameters as they appear in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingConfig {
    pub mode: MappingKind,
    /// Rows per contiguous block (block-interleaved only).
    pub block_rows: u32,
    /// Bytes of foreign memory between blocks (block-interleaved only).
    pub block_stride_bytes: u64,
    pub bank_rule: BankRule,
    pub base_bank: u32,
    pub base_row: u32,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            mode: MappingKind::Linear,
            block_rows: 32,
            block_stride_bytes: 16_384,
            bank_rule: BankRule::Fixed,
            base_bank: 0,
            base_row: 0,
        }
    }
}

/// Where the current texture allocation sits in DRAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationMap {
    pub base_bank: u32,
    pub base_row: u32,
    pub bank_rule: BankRule,
    /// Texture rows per contiguous block; equals the texture height in linear mode.
    pub block_rows: u32,
    /// Unmapped rows between consecutive blocks of one bank.
    pub gap_rows: u32,
    pub width: u32,
    pub height: u32,
    pub bytes_per_pixel: u32,
    pub generation: u32,
}

impl AllocationMap {
    /// Initial allocation described by `config`, validated against `geometry`.
    pub fn new(
        config: &MappingConfig,
        geometry: &DramGeometry,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let ppr = pixels_per_row(geometry.row_size_bytes, geometry.bytes_per_pixel)?;
        if width != ppr {
            return Err(Error::config(format!(
                "texture_width {width} must equal pixels per DRAM row {ppr}"
            )));
        }
        if height == 0 {
            return Err(Error::config("texture_height must be positive"));
        }
        let (block_rows, gap_rows) = match config.mode {
            MappingKind::Linear => (height, 0),
            MappingKind::BlockInterleaved => {
                if config.block_rows == 0 {
                    return Err(Error::config("block_rows must be positive"));
                }
                let row = geometry.row_size_bytes as u64;
                if !config.block_stride_bytes.is_multiple_of(row) {
                    return Err(Error::config(format!(
                        "block_stride_bytes {} is not a multiple of the row size {row}",
                        config.block_stride_bytes
                    )));
                }
                let gap = u32::try_from(config.block_stride_bytes / row)
                    .map_err(|_| Error::config("block_stride_bytes too large"))?;
                (config.block_rows, gap)
            }
        };
        if config.base_bank >= geometry.num_banks {
            return Err(Error::config(format!(
                "base_bank {} outside {} banks",
                config.base_bank, geometry.num_banks
            )));
        }
        let map = AllocationMap {
            base_bank: config.base_bank,
            base_row: config.base_row,
            bank_rule: config.bank_rule,
            block_rows,
            gap_rows,
            width,
            height,
            bytes_per_pixel: geometry.bytes_per_pixel,
            generation: 0,
        };
        if map.max_base_row(geometry).is_none() {
            return Err(Error::allocation(format!(
                "texture footprint of {} rows exceeds {} rows per bank",
                map.footprint_rows(geometry.num_banks),
                geometry.rows_per_bank
            )));
        }
        if map.base_row > map.max_base_row(geometry).unwrap() {
            return Err(Error::allocation(format!(
                "base_row {} leaves no room for the texture",
                map.base_row
            )));
        }
        Ok(map)
    }

    fn blocks(&self) -> u32 {
        self.height.div_ceil(self.block_rows)
    }

    fn banks_used(&self, num_banks: u32) -> u32 {
        match self.bank_rule {
            BankRule::Fixed => 1,
            BankRule::RoundRobin => num_banks,
        }
    }

    /// Physical rows spanned inside one bank, from base_row to the last mapped row.
    pub fn footprint_rows(&self, num_banks: u32) -> u32 {
        let banks = self.banks_used(num_banks);
        // the bank holding block 0 always has the most blocks
        let blocks = self.blocks().div_ceil(banks);
        let last_block_rows = {
            let own_last = (blocks - 1) * banks;
            let rows_before = own_last * self.block_rows;
            (self.height - rows_before).min(self.block_rows)
        };
        (blocks - 1) * (self.block_rows + self.gap_rows) + last_block_rows
    }

    fn max_base_row(&self, geometry: &DramGeometry) -> Option<u32> {
        geometry
            .rows_per_bank
            .checked_sub(self.footprint_rows(geometry.num_banks))
    }

    /// (bank, row) holding texture row `y`.
    #[inline]
    pub fn row_of(&self, y: u32, num_banks: u32) -> (u32, u32) {
        let block = y / self.block_rows;
        let within = y % self.block_rows;
        let (bank, local_block) = match self.bank_rule {
            BankRule::Fixed => (self.base_bank, block),
            BankRule::RoundRobin => ((self.base_bank + block) % num_banks, block / num_banks),
        };
        (
            bank,
            self.base_row + local_block * (self.block_rows + self.gap_rows) + within,
        )
    }

    pub fn texel_to_physical(
        &self,
        x: u32,
        y: u32,
        geometry: &DramGeometry,
    ) -> Result<PhysicalAddress> {
        if x >= self.width || y >= self.height {
            return Err(Error::Address(format!(
                "texel ({x}, {y}) outside {}x{} texture",
                self.width, self.height
            )));
        }
        let (bank, row) = self.row_of(y, geometry.num_banks);
        if bank >= geometry.num_banks || row >= geometry.rows_per_bank {
            return Err(Error::allocation(format!(
                "texel ({x}, {y}) maps to bank {bank} row {row}, outside the DRAM"
            )));
        }
        Ok(PhysicalAddress::new(bank, row, x * self.bytes_per_pixel, 0))
    }

    /// Texture row stored in (bank, row), if any.
    pub fn texture_row(&self, bank: u32, row: u32, num_banks: u32) -> Option<u32> {
        let local = row.checked_sub(self.base_row)?;
        let period = self.block_rows + self.gap_rows;
        let within = local % period;
        if within >= self.block_rows {
            return None;
        }
        let local_block = local / period;
        let block = match self.bank_rule {
            BankRule::Fixed => {
                if bank != self.base_bank {
                    return None;
                }
                local_block
            }
            BankRule::RoundRobin => {
                let lane = (bank + num_banks - self.base_bank % num_banks) % num_banks;
                local_block * num_banks + lane
            }
        };
        let y = block.checked_mul(self.block_rows)?.checked_add(within)?;
        (y < self.height).then_some(y)
    }

    /// Inverse of [`texel_to_physical`](Self::texel_to_physical): the texel
    /// whose bytes include `addr`.
    pub fn physical_to_texel(&self, addr: &PhysicalAddress, num_banks: u32) -> Option<(u32, u32)> {
        let y = self.texture_row(addr.bank, addr.row, num_banks)?;
        let x = addr.byte_offset / self.bytes_per_pixel;
        (x < self.width).then_some((x, y))
    }

    /// A new placement for the texture at a uniformly drawn base.
    pub fn reallocate<R: Rng + ?Sized>(
        &self,
        geometry: &DramGeometry,
        rng: &mut R,
    ) -> Result<Self> {
        let max_base = self
            .max_base_row(geometry)
            .ok_or_else(|| Error::allocation("texture larger than any bank region".to_string()))?;
        let base_bank = rng.random_range(0..geometry.num_banks);
        let base_row = rng.random_range(0..=max_base);
        Ok(AllocationMap {
            base_bank,
            base_row,
            generation: self.generation + 1,
            ..*self
        })
    }
}
