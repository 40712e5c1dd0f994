//! Memory-side sequencing of one access: row buffer, TRR, disturbance and
//! auto-refresh.

use serde::{Deserialize, Serialize};

use crate::dram::{DramState, RefreshConfig, TimingState};
use crate::error::Result;
use crate::mitigations::{TrrConfig, TrrState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AccessCounters {
    pub activations: u64,
    pub row_buffer_hits: u64,
    pub trr_refreshes: u64,
    pub refresh_steps: u64,
    pub flips: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessOutcome {
    pub row_buffer_hit: bool,
    pub flips: u32,
}

/// Controller-side state needed to replay a dispatch under identical
/// conditions.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    timing: TimingState,
    trr: TrrState,
}

/// DRAM plus the mitigations that watch its activations.
#[derive(Debug, Clone)]
pub struct MemorySystem {
    pub dram: DramState,
    pub trr: TrrState,
    refresh: RefreshConfig,
    counters: AccessCounters,
}

impl MemorySystem {
    pub fn new(dram: DramState, trr: TrrConfig, refresh: RefreshConfig) -> Self {
        let g = *dram.geometry();
        MemorySystem {
            trr: TrrState::new(trr, g.num_banks, g.rows_per_bank),
            dram,
            refresh,
            counters: AccessCounters::default(),
        }
    }

    pub fn counters(&self) -> AccessCounters {
        self.counters
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            timing: self.dram.timing_state(),
            trr: self.trr.clone(),
        }
    }

    /// Restores disturbance, refresh phase and TRR samplers. Stored data and
    /// the access counters keep their current values.
    pub fn rewind(&mut self, checkpoint: &Checkpoint) {
        self.dram.restore_timing(&checkpoint.timing);
        self.trr.clone_from(&checkpoint.trr);
    }

    pub fn refresh_config(&self) -> &RefreshConfig {
        &self.refresh
    }

    /// Opens `row` in `bank`. A non-hit activation is seen by TRR first,
    /// then disturbs its neighbours, then any targeted refresh lands, then
    /// auto-refresh runs if its interval elapsed.
    pub fn access(&mut self, bank: u32, row: u32) -> Result<AccessOutcome> {
        self.dram.geometry().check_row(bank, row)?;
        if self.dram.open_row(bank) == Some(row) {
            self.counters.row_buffer_hits += 1;
            return Ok(AccessOutcome {
                row_buffer_hit: true,
                flips: 0,
            });
        }
        let targeted = self.trr.observe(bank, row);
        let report = self.dram.activate(bank, row)?;
        self.counters.activations += 1;
        self.counters.flips += report.flips_caused as u64;
        if let Some(rows) = targeted {
            self.counters.trr_refreshes += 1;
            for r in rows {
                self.dram.refresh_row(bank, r)?;
            }
        }
        let interval = self.refresh.interval_ticks;
        if interval > 0 && self.dram.tick().is_multiple_of(interval) {
            self.counters.refresh_steps += 1;
            for wrapped in self.dram.refresh_sweep_step(self.refresh.rows_per_step) {
                if self.trr.config().reset_on_refresh_window {
                    self.trr.reset_bank(wrapped);
                }
            }
        }
        Ok(AccessOutcome {
            row_buffer_hit: false,
            flips: report.flips_caused,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::{DramGeometry, FaultModel, FillPattern};

    fn system(trr: TrrConfig, refresh: RefreshConfig) -> MemorySystem {
        let g = DramGeometry {
            num_banks: 2,
            rows_per_bank: 32,
            row_size_bytes: 64,
            bytes_per_pixel: 4,
        };
        let fault = FaultModel {
            base_threshold: 1_000,
            vulnerable_fraction: 1.0,
            ..FaultModel::default()
        };
        MemorySystem::new(
            DramState::init(g, &fault, FillPattern::AllOnes, 0).unwrap(),
            trr,
            refresh,
        )
    }

    #[test]
    fn conservation_of_activations() {
        let mut m = system(TrrConfig::default(), RefreshConfig::default());
        let rows = [3, 3, 5, 3, 3, 9, 9, 9, 1];
        for r in rows {
            m.access(0, r).unwrap();
        }
        let c = m.counters();
        assert_eq!(c.activations, 5);
        assert_eq!(c.row_buffer_hits, 4);
        assert_eq!(c.activations, m.dram.tick());
    }

    #[test]
    fn auto_refresh_runs_on_interval() {
        let refresh = RefreshConfig {
            interval_ticks: 10,
            rows_per_step: 2,
        };
        let mut m = system(TrrConfig::disabled(), refresh);
        for i in 0..100 {
            m.access(1, 4 + i % 2).unwrap();
        }
        assert_eq!(m.counters().refresh_steps, 10);
    }

    #[test]
    fn disabled_refresh_leaves_counters_to_activation() {
        let mut m = system(TrrConfig::disabled(), RefreshConfig::disabled());
        for i in 0..1_000 {
            m.access(0, 10 + 2 * (i % 2)).unwrap();
        }
        assert_eq!(m.dram.disturbance(0, 11), 1000.0);
        assert_eq!(m.counters().refresh_steps, 0);
    }

    #[test]
    fn trr_refresh_lands_after_disturbance() {
        let trr = TrrConfig {
            trigger_threshold: 4,
            reset_on_refresh_window: false,
            ..TrrConfig::default()
        };
        let mut m = system(trr, RefreshConfig::disabled());
        for i in 0..6 {
            m.access(0, 10 + 2 * (i % 2)).unwrap();
            assert!(m.dram.disturbance(0, 11) > 0.0);
        }
        // row 10's fourth activation triggers and zeroes the victim
        m.access(0, 10).unwrap();
        assert_eq!(m.dram.disturbance(0, 11), 0.0);
        assert_eq!(m.counters().trr_refreshes, 1);
        assert!(m.dram.open_row(0).is_none());
    }
}
