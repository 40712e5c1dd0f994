use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Eviction {
    /// Evict the entry with the smallest count, oldest first on ties.
    LowestCount,
    /// Evict the entry inserted first.
    Oldest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrrConfig {
    pub enabled: bool,
    pub sampler_size: u32,
    pub trigger_threshold: u32,
    pub neighbor_radius: u32,
    pub eviction: Eviction,
    /// Clear a bank's sampler whenever auto-refresh completes a sweep of it.
    pub reset_on_refresh_window: bool,
}

impl Default for TrrConfig {
    fn default() -> Self {
        TrrConfig {
            enabled: true,
            sampler_size: 4,
            trigger_threshold: 16_384,
            neighbor_radius: 1,
            eviction: Eviction::LowestCount,
            reset_on_refresh_window: true,
        }
    }
}

impl TrrConfig {
    pub fn disabled() -> Self {
        TrrConfig {
            enabled: false,
            ..TrrConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampler_size == 0 {
            return Err(Error::config("trr sampler_size must be >= 1"));
        }
        if self.trigger_threshold == 0 {
            return Err(Error::config("trr trigger_threshold must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    row: u32,
    count: u32,
    inserted: u64,
}

/// Per-bank aggressor samplers.
#[derive(Debug, Clone)]
pub struct TrrState {
    config: TrrConfig,
    rows_per_bank: u32,
    banks: Vec<Vec<Entry>>,
    seq: u64,
    triggers: u64,
}

impl TrrState {
    pub fn new(config: TrrConfig, num_banks: u32, rows_per_bank: u32) -> Self {
        TrrState {
            config,
            rows_per_bank,
            banks: vec![Vec::with_capacity(config.sampler_size as usize); num_banks as usize],
            seq: 0,
            triggers: 0,
        }
    }

    pub fn config(&self) -> &TrrConfig {
        &self.config
    }

    /// Targeted refreshes issued so far.
    pub fn triggers(&self) -> u64 {
        self.triggers
    }

    /// Rows currently tracked in `bank` with their counts.
    pub fn tracked(&self, bank: u32) -> Vec<(u32, u32)> {
        self.banks[bank as usize]
            .iter()
            .map(|e| (e.row, e.count))
            .collect()
    }

    pub fn reset_bank(&mut self, bank: u32) {
        self.banks[bank as usize].clear();
    }

    /// Records one activation. When a tracked row reaches the trigger
    /// threshold its count is reset and the rows around it that need a
    /// targeted refresh are returned.
    pub fn observe(&mut self, bank: u32, row: u32) -> Option<Vec<u32>> {
        if !self.config.enabled {
            return None;
        }
        self.seq += 1;
        let sampler = &mut self.banks[bank as usize];
        let slot = match sampler.iter().position(|e| e.row == row) {
            Some(i) => {
                sampler[i].count += 1;
                i
            }
            None => {
                let entry = Entry {
                    row,
                    count: 1,
                    inserted: self.seq,
                };
                if sampler.len() < self.config.sampler_size as usize {
                    sampler.push(entry);
                    sampler.len() - 1
                } else {
                    let victim = match self.config.eviction {
                        Eviction::LowestCount => sampler
                            .iter()
                            .enumerate()
                            .min_by_key(|(_, e)| (e.count, e.inserted))
                            .map(|(i, _)| i),
                        Eviction::Oldest => sampler
                            .iter()
                            .enumerate()
                            .min_by_key(|(_, e)| e.inserted)
                            .map(|(i, _)| i),
                    }
                    .expect("sampler is full");
                    sampler[victim] = entry;
                    victim
                }
            }
        };
        if sampler[slot].count < self.config.trigger_threshold {
            return None;
        }
        sampler[slot].count = 0;
        self.triggers += 1;
        let r = self.config.neighbor_radius;
        let lo = row.saturating_sub(r);
        let hi = (row + r).min(self.rows_per_bank - 1);
        Some((lo..=hi).filter(|&n| n != row).collect())
    }
}
