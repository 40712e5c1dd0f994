use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dram::{DramGeometry, PhysicalAddress};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EccConfig {
    pub enabled: bool,
    /// Width of each protected data word. The scheme is always SECDED.
    pub word_bits: u32,
}

impl Default for EccConfig {
    fn default() -> Self {
        EccConfig {
            enabled: true,
            word_bits: 64,
        }
    }
}

impl EccConfig {
    pub fn disabled() -> Self {
        EccConfig {
            enabled: false,
            ..EccConfig::default()
        }
    }

    pub fn validate(&self, geometry: &DramGeometry) -> Result<()> {
        if self.word_bits == 0 || !geometry.row_bits().is_multiple_of(self.word_bits as u64) {
            return Err(Error::config(format!(
                "ecc word_bits {} must divide the row width ({} bits)",
                self.word_bits,
                geometry.row_bits()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EccOutcome {
    /// Flips still visible after correction, in input order.
    pub visible: Vec<PhysicalAddress>,
    /// Single-bit errors corrected (one per word).
    pub corrected: usize,
    /// Words holding exactly two flips: detected but uncorrectable.
    pub detected_words: usize,
    /// Words holding three or more flips: passed through silently.
    pub silent_words: usize,
}

/// Post-hoc SECDED filter over a set of raw flipped cells.
pub fn ecc_filter(flips: &[PhysicalAddress], ecc: &EccConfig) -> EccOutcome {
    if !ecc.enabled {
        return EccOutcome {
            visible: flips.to_vec(),
            ..EccOutcome::default()
        };
    }
    let word = ecc.word_bits as u64;
    let key = |a: &PhysicalAddress| (a.bank, a.row, a.bit_in_row() / word);
    let mut per_word: BTreeMap<(u32, u32, u64), usize> = BTreeMap::new();
    for a in flips {
        *per_word.entry(key(a)).or_default() += 1;
    }
    let mut out = EccOutcome::default();
    for &n in per_word.values() {
        match n {
            1 => out.corrected += 1,
            2 => out.detected_words += 1,
            _ => out.silent_words += 1,
        }
    }
    out.visible = flips
        .iter()
        .filter(|a| per_word[&key(a)] >= 2)
        .copied()
        .collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(row: u32, byte: u32, bit: u8) -> PhysicalAddress {
        PhysicalAddress::new(0, row, byte, bit)
    }

    #[test]
    fn single_flip_is_corrected() {
        let out = ecc_filter(&[a(3, 0, 5)], &EccConfig::default());
        assert!(out.visible.is_empty());
        assert_eq!(out.corrected, 1);
    }

    #[test]
    fn double_flip_in_one_word_is_visible() {
        let flips = [a(3, 0, 5), a(3, 7, 1)];
        let out = ecc_filter(&flips, &EccConfig::default());
        assert_eq!(out.visible, flips.to_vec());
        assert_eq!(out.detected_words, 1);
    }

    #[test]
    fn flips_in_distinct_words_are_both_corrected() {
        // byte 0 is in word 0, byte 9 (bit 73) is in word 1
        let out = ecc_filter(&[a(3, 0, 5), a(3, 9, 1)], &EccConfig::default());
        assert!(out.visible.is_empty());
        assert_eq!(out.corrected, 2);
    }

    #[test]
    fn same_offset_different_rows_are_distinct_words() {
        let out = ecc_filter(&[a(3, 0, 5), a(4, 0, 5)], &EccConfig::default());
        assert_eq!(out.corrected, 2);
    }

    #[test]
    fn triples_pass_through() {
        let flips = [a(1, 0, 0), a(1, 0, 1), a(1, 0, 2)];
        let out = ecc_filter(&flips, &EccConfig::default());
        assert_eq!(out.visible.len(), 3);
        assert_eq!(out.silent_words, 1);
    }

    #[test]
    fn disabled_is_identity() {
        let flips = [a(1, 0, 0)];
        assert_eq!(
            ecc_filter(&flips, &EccConfig::disabled()).visible,
            flips.to_vec()
        );
    }
}
