//! DRAM geometry, stored data and the activation-disturbance fault model.
//!
//! Memory is organised as banks of rows; every row is a flat run of
//! `row_size_bytes` bytes whose bits are the individual cells. Activating a
//! row disturbs its neighbours within the blast radius. Vulnerable cells in a
//! disturbed row flip once the row's accumulated disturbance reaches the
//! cell's threshold.

mod fault;
mod state;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fault::{FaultModel, FlipPolarity, VulnerabilityLayout, VulnerableCell};
pub use state::{ActivationReport, BitImage, DramState, RefreshConfig, TimingState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DramGeometry {
    pub num_banks: u32,
    pub rows_per_bank: u32,
    pub row_size_bytes: u32,
    pub bytes_per_pixel: u32,
}

impl Default for DramGeometry {
    fn default() -> Self {
        DramGeometry {
            num_banks: 4,
            rows_per_bank: 256,
            row_size_bytes: 8192,
            bytes_per_pixel: 4,
        }
    }
}

impl DramGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.num_banks == 0 || self.rows_per_bank == 0 || self.row_size_bytes == 0 {
            return Err(Error::config("zero-sized DRAM geometry"));
        }
        if self.rows_per_bank < 3 {
            return Err(Error::config(format!(
                "rows_per_bank must be at least 3, got {}",
                self.rows_per_bank
            )));
        }
        if !self.row_size_bytes.is_power_of_two() || self.row_size_bytes < 64 {
            return Err(Error::config(format!(
                "row_size_bytes must be a power of two >= 64, got {}",
                self.row_size_bytes
            )));
        }
        if self.bytes_per_pixel == 0 || !self.row_size_bytes.is_multiple_of(self.bytes_per_pixel) {
            return Err(Error::config(format!(
                "bytes_per_pixel {} does not divide row_size_bytes {}",
                self.bytes_per_pixel, self.row_size_bytes
            )));
        }
        self.total_bytes()
            .checked_mul(8)
            .filter(|&cells| cells <= usize::MAX as u64)
            .ok_or_else(|| Error::config("DRAM geometry too large for this host"))?;
        Ok(())
    }

    pub fn total_rows(&self) -> u64 {
        self.num_banks as u64 * self.rows_per_bank as u64
    }

    pub fn row_bits(&self) -> u64 {
        self.row_size_bytes as u64 * 8
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_rows() * self.row_size_bytes as u64
    }

    pub fn total_cells(&self) -> u64 {
        self.total_bytes() * 8
    }

    /// Flat index of a (bank, row) pair, banks major.
    pub fn row_index(&self, bank: u32, row: u32) -> usize {
        bank as usize * self.rows_per_bank as usize + row as usize
    }

    /// Absolute physical byte address: `((bank * rows_per_bank) + row) * row_size + offset`.
    pub fn absolute_address(&self, addr: &PhysicalAddress) -> u64 {
        self.row_index(addr.bank, addr.row) as u64 * self.row_size_bytes as u64
            + addr.byte_offset as u64
    }

    pub fn check_row(&self, bank: u32, row: u32) -> Result<()> {
        if bank >= self.num_banks || row >= self.rows_per_bank {
            return Err(Error::Address(format!(
                "bank {bank} row {row} outside {}x{} geometry",
                self.num_banks, self.rows_per_bank
            )));
        }
        Ok(())
    }

    pub fn check(&self, addr: &PhysicalAddress) -> Result<()> {
        self.check_row(addr.bank, addr.row)?;
        if addr.byte_offset >= self.row_size_bytes || addr.bit > 7 {
            return Err(Error::Address(format!(
                "byte {} bit {} outside {}-byte row",
                addr.byte_offset, addr.bit, self.row_size_bytes
            )));
        }
        Ok(())
    }
}

/// A single DRAM cell: one bit of one byte of one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhysicalAddress {
    pub bank: u32,
    pub row: u32,
    pub byte_offset: u32,
    /// Bit within the byte, 0 = least significant.
    pub bit: u8,
}

impl PhysicalAddress {
    pub fn new(bank: u32, row: u32, byte_offset: u32, bit: u8) -> Self {
        PhysicalAddress {
            bank,
            row,
            byte_offset,
            bit,
        }
    }

    /// Cell index within its row.
    pub fn bit_in_row(&self) -> u64 {
        self.byte_offset as u64 * 8 + self.bit as u64
    }
}

/// Data pattern written when memory or a texture is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FillPattern {
    AllOnes,
    AllZeros,
    /// 0xAA at even byte offsets, 0x55 at odd ones.
    Checkerboard,
    Byte(u8),
}

impl FillPattern {
    pub fn byte_at(&self, offset: u64) -> u8 {
        match *self {
            FillPattern::AllOnes => 0xFF,
            FillPattern::AllZeros => 0x00,
            FillPattern::Checkerboard => {
                if offset.is_multiple_of(2) {
                    0xAA
                } else {
                    0x55
                }
            }
            FillPattern::Byte(b) => b,
        }
    }
}

impl fmt::Display for FillPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FillPattern::AllOnes => f.write_str("all-ones"),
            FillPattern::AllZeros => f.write_str("all-zeros"),
            FillPattern::Checkerboard => f.write_str("checkerboard"),
            FillPattern::Byte(b) => write!(f, "0x{b:02X}"),
        }
    }
}

impl FromStr for FillPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-ones" => Ok(FillPattern::AllOnes),
            "all-zeros" => Ok(FillPattern::AllZeros),
            "checkerboard" => Ok(FillPattern::Checkerboard),
            _ => {
                let hex = s
                    .strip_prefix("0x")
                    .or_else(|| s.strip_prefix("0X"))
                    .ok_or_else(|| Error::config(format!("unknown fill pattern `{s}`")))?;
                u8::from_str_radix(hex, 16)
                    .map(FillPattern::Byte)
                    .map_err(|_| Error::config(format!("bad fill byte `{s}`")))
            }
        }
    }
}

impl TryFrom<String> for FillPattern {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FillPattern> for String {
    fn from(p: FillPattern) -> String {
        p.to_string()
    }
}
