use serde::{Deserialize, Serialize};

use super::{DramGeometry, FaultModel, FillPattern, FlipPolarity, PhysicalAddress, VulnerableCell};
use crate::error::{Error, Result};

/// Periodic auto-refresh, expressed in activation ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefreshConfig {
    /// Activations between two refresh steps; 0 disables auto-refresh.
    pub interval_ticks: u64,
    /// Rows refreshed per bank at each step.
    pub rows_per_step: u32,
}

impl Default for RefreshConfig {
    fn default() -> Self {
        RefreshConfig {
            interval_ticks: 4096,
            rows_per_step: 1,
        }
    }
}

impl RefreshConfig {
    pub fn disabled() -> Self {
        RefreshConfig {
            interval_ticks: 0,
            rows_per_step: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.interval_ticks > 0 && self.rows_per_step == 0 {
            return Err(Error::config("refresh rows_per_step must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActivationReport {
    pub was_row_buffer_hit: bool,
    pub flips_caused: u32,
}

/// Immutable copy of every stored bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitImage {
    geometry: DramGeometry,
    data: Vec<u8>,
}

impl BitImage {
    pub fn geometry(&self) -> &DramGeometry {
        &self.geometry
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn row(&self, bank: u32, row: u32) -> &[u8] {
        let size = self.geometry.row_size_bytes as usize;
        let start = self.geometry.row_index(bank, row) * size;
        &self.data[start..start + size]
    }

    pub fn byte(&self, addr: &PhysicalAddress) -> u8 {
        self.row(addr.bank, addr.row)[addr.byte_offset as usize]
    }

    /// Number of bits that differ between two images of the same shape.
    pub fn hamming_distance(&self, other: &BitImage) -> Option<u64> {
        (self.geometry == other.geometry).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a ^ b).count_ones() as u64)
                .sum()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingState {
    counters: Vec<f64>,
    scan_pos: Vec<u32>,
    open_rows: Vec<Option<u32>>,
    refresh_cursor: Vec<u32>,
    tick: u64,
}

/// Banks x rows x cells with per-row disturbance and per-cell thresholds.
///
/// Every cell of a row always carries the same disturbance, so the counter is
/// kept per row. Vulnerable cells are sorted by threshold and `scan_pos`
/// marks how far the sorted list has been examined against the current
/// counter. A write to the row rewinds the scan.
#[derive(Debug, Clone)]
pub struct DramState {
    geometry: DramGeometry,
    polarity: FlipPolarity,
    weights: Vec<f64>,
    data: Vec<u8>,
    latched: Vec<u64>,
    counters: Vec<f64>,
    cells: Vec<Vec<VulnerableCell>>,
    scan_pos: Vec<u32>,
    open_rows: Vec<Option<u32>>,
    activations: Vec<u64>,
    refresh_cursor: Vec<u32>,
    tick: u64,
    flips: u64,
}

impl DramState {
    pub fn init(
        geometry: DramGeometry,
        fault: &FaultModel,
        pattern: FillPattern,
        seed: u64,
    ) -> Result<Self> {
        geometry.validate()?;
        fault.validate(&geometry)?;
        let cells = fault.sample_cells(&geometry, seed);
        let rows = geometry.total_rows() as usize;
        let row_size = geometry.row_size_bytes as u64;
        let data = (0..geometry.total_bytes())
            .map(|i| pattern.byte_at(i % row_size))
            .collect();
        Ok(DramState {
            geometry,
            polarity: fault.flip_polarity,
            weights: fault.distance_weights(),
            data,
            latched: vec![0; (geometry.total_cells() as usize).div_ceil(64)],
            counters: vec![0.0; rows],
            cells,
            scan_pos: vec![0; rows],
            open_rows: vec![None; geometry.num_banks as usize],
            activations: vec![0; rows],
            refresh_cursor: vec![0; geometry.num_banks as usize],
            tick: 0,
            flips: 0,
        })
    }

    pub fn geometry(&self) -> &DramGeometry {
        &self.geometry
    }

    /// Number of non-hit activations so far.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Total flips ever caused by disturbance or injection.
    pub fn total_flips(&self) -> u64 {
        self.flips
    }

    pub fn open_row(&self, bank: u32) -> Option<u32> {
        self.open_rows[bank as usize]
    }

    /// Disturbance accumulated by every cell of the row.
    pub fn disturbance(&self, bank: u32, row: u32) -> f64 {
        self.counters[self.geometry.row_index(bank, row)]
    }

    pub fn activation_count(&self, bank: u32, row: u32) -> u64 {
        self.activations[self.geometry.row_index(bank, row)]
    }

    /// `(bank, row, count)` for every row activated at least once.
    pub fn activated_rows(&self) -> Vec<(u32, u32, u64)> {
        let rpb = self.geometry.rows_per_bank as usize;
        self.activations
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(i, &n)| ((i / rpb) as u32, (i % rpb) as u32, n))
            .collect()
    }

    pub fn vulnerable_cells(&self, bank: u32, row: u32) -> &[VulnerableCell] {
        &self.cells[self.geometry.row_index(bank, row)]
    }

    pub fn is_latched(&self, addr: &PhysicalAddress) -> bool {
        let cell = self.cell_index(addr.bank, addr.row, addr.bit_in_row());
        self.latched[cell / 64] >> (cell % 64) & 1 == 1
    }

    fn cell_index(&self, bank: u32, row: u32, bit_in_row: u64) -> usize {
        self.geometry.row_index(bank, row) * self.geometry.row_bits() as usize + bit_in_row as usize
    }

    pub fn activate(&mut self, bank: u32, row: u32) -> Result<ActivationReport> {
        self.geometry.check_row(bank, row)?;
        if self.open_rows[bank as usize] == Some(row) {
            return Ok(ActivationReport {
                was_row_buffer_hit: true,
                flips_caused: 0,
            });
        }
        self.open_rows[bank as usize] = Some(row);
        self.tick += 1;
        let idx = self.geometry.row_index(bank, row);
        self.activations[idx] += 1;

        let rows = self.geometry.rows_per_bank;
        let mut flips = 0;
        for d in 1..=self.weights.len() as u32 {
            let w = self.weights[d as usize - 1];
            if let Some(below) = row.checked_sub(d) {
                flips += self.disturb(bank, below, w);
            }
            if row + d < rows {
                flips += self.disturb(bank, row + d, w);
            }
        }
        self.counters[idx] = 0.0;
        self.scan_pos[idx] = 0;
        Ok(ActivationReport {
            was_row_buffer_hit: false,
            flips_caused: flips,
        })
    }

    fn disturb(&mut self, bank: u32, row: u32, amount: f64) -> u32 {
        let idx = self.geometry.row_index(bank, row);
        self.counters[idx] += amount;
        self.scan(idx)
    }

    /// Flips every not-yet-examined cell whose threshold the counter reached.
    fn scan(&mut self, idx: usize) -> u32 {
        let counter = self.counters[idx];
        let mut pos = self.scan_pos[idx] as usize;
        let cells = &self.cells[idx];
        let row_bits = self.geometry.row_bits() as usize;
        let row_base = idx * self.geometry.row_size_bytes as usize;
        let mut flips = 0;
        while pos < cells.len() && cells[pos].threshold as f64 <= counter {
            let bit = cells[pos].bit as usize;
            let cell = idx * row_bits + bit;
            let latched = self.latched[cell / 64] >> (cell % 64) & 1 == 1;
            let byte = &mut self.data[row_base + bit / 8];
            let mask = 1u8 << (bit % 8);
            if !latched && self.polarity.can_flip(*byte & mask != 0) {
                *byte ^= mask;
                self.latched[cell / 64] |= 1 << (cell % 64);
                flips += 1;
            }
            pos += 1;
        }
        self.scan_pos[idx] = pos as u32;
        self.flips += flips as u64;
        flips
    }

    /// Restores charge of one row: its counter returns to zero. Stored bits,
    /// latched flips included, are untouched. Precharges the bank.
    pub fn refresh_row(&mut self, bank: u32, row: u32) -> Result<()> {
        self.geometry.check_row(bank, row)?;
        let idx = self.geometry.row_index(bank, row);
        self.counters[idx] = 0.0;
        self.scan_pos[idx] = 0;
        self.open_rows[bank as usize] = None;
        Ok(())
    }

    /// Refreshes the next `rows_per_step` rows of every bank, round-robin.
    /// Returns the banks whose cursor wrapped, i.e. completed a full sweep.
    pub fn refresh_sweep_step(&mut self, rows_per_step: u32) -> Vec<u32> {
        let mut wrapped = Vec::new();
        for bank in 0..self.geometry.num_banks {
            for _ in 0..rows_per_step {
                let row = self.refresh_cursor[bank as usize];
                let idx = self.geometry.row_index(bank, row);
                self.counters[idx] = 0.0;
                self.scan_pos[idx] = 0;
                let next = row + 1;
                if next == self.geometry.rows_per_bank {
                    self.refresh_cursor[bank as usize] = 0;
                    wrapped.push(bank);
                } else {
                    self.refresh_cursor[bank as usize] = next;
                }
            }
            self.open_rows[bank as usize] = None;
        }
        wrapped
    }

    pub fn read_byte(&self, addr: &PhysicalAddress) -> Result<u8> {
        self.geometry.check(addr)?;
        Ok(self.data[self.byte_index(addr)])
    }

    fn byte_index(&self, addr: &PhysicalAddress) -> usize {
        self.geometry.row_index(addr.bank, addr.row) * self.geometry.row_size_bytes as usize
            + addr.byte_offset as usize
    }

    /// Little-endian 32-bit word at `byte_offset`; the caller guarantees bounds.
    #[inline]
    pub(crate) fn read_u32(&self, bank: u32, row: u32, byte_offset: u32) -> u32 {
        let start = self.geometry.row_index(bank, row) * self.geometry.row_size_bytes as usize
            + byte_offset as usize;
        let b = &self.data[start..start + 4];
        u32::from_le_bytes([b[0], b[1], b[2], b[3]])
    }

    /// Overwrites one byte and clears the latches of its eight cells.
    /// Disturbance counters are left as they are.
    pub fn write_byte(&mut self, addr: &PhysicalAddress, value: u8) -> Result<()> {
        self.geometry.check(addr)?;
        let i = self.byte_index(addr);
        self.data[i] = value;
        let first = self.cell_index(addr.bank, addr.row, addr.byte_offset as u64 * 8);
        for cell in first..first + 8 {
            self.latched[cell / 64] &= !(1 << (cell % 64));
        }
        self.scan_pos[self.geometry.row_index(addr.bank, addr.row)] = 0;
        Ok(())
    }

    /// Rewrites a whole row with `pattern`, clearing all of its latches.
    pub fn fill_row(&mut self, bank: u32, row: u32, pattern: FillPattern) -> Result<()> {
        self.geometry.check_row(bank, row)?;
        let size = self.geometry.row_size_bytes as usize;
        let idx = self.geometry.row_index(bank, row);
        for (i, b) in self.data[idx * size..(idx + 1) * size]
            .iter_mut()
            .enumerate()
        {
            *b = pattern.byte_at(i as u64);
        }
        let bits = self.geometry.row_bits() as usize;
        // row_bits is a multiple of 512, so a row covers whole latch words
        self.latched[idx * bits / 64..(idx + 1) * bits / 64].fill(0);
        self.scan_pos[idx] = 0;
        Ok(())
    }

    /// Flips one cell directly and latches it, bypassing the fault model.
    /// Used for outlier injection.
    pub fn inject_flip(&mut self, addr: &PhysicalAddress) -> Result<()> {
        self.geometry.check(addr)?;
        let i = self.byte_index(addr);
        self.data[i] ^= 1 << addr.bit;
        let cell = self.cell_index(addr.bank, addr.row, addr.bit_in_row());
        self.latched[cell / 64] |= 1 << (cell % 64);
        self.flips += 1;
        Ok(())
    }

    /// Everything about the array except stored bits, latches and lifetime
    /// statistics: counters, open rows, refresh cursor and tick.
    pub fn timing_state(&self) -> TimingState {
        TimingState {
            counters: self.counters.clone(),
            scan_pos: self.scan_pos.clone(),
            open_rows: self.open_rows.clone(),
            refresh_cursor: self.refresh_cursor.clone(),
            tick: self.tick,
        }
    }

    /// Rewinds timing state. Rows are rescanned against the restored counters
    /// on their next disturbance.
    pub fn restore_timing(&mut self, t: &TimingState) {
        self.counters.clone_from(&t.counters);
        self.scan_pos.clone_from(&t.scan_pos);
        self.open_rows.clone_from(&t.open_rows);
        self.refresh_cursor.clone_from(&t.refresh_cursor);
        self.tick = t.tick;
    }

    pub fn snapshot(&self) -> BitImage {
        BitImage {
            geometry: self.geometry,
            data: self.data.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(rows: u32) -> DramGeometry {
        DramGeometry {
            num_banks: 4,
            rows_per_bank: rows,
            row_size_bytes: 8192,
            bytes_per_pixel: 4,
        }
    }

    fn dense(threshold: u32) -> FaultModel {
        FaultModel {
            base_threshold: threshold,
            threshold_jitter_sigma: 0.0,
            vulnerable_fraction: 1.0,
            flip_polarity: FlipPolarity::OneToZero,
            ..FaultModel::default()
        }
    }

    #[test]
    fn init_fills_pattern() {
        let fault = FaultModel::default();
        let s = DramState::init(geom(64), &fault, FillPattern::AllOnes, 1).unwrap();
        assert!(s.snapshot().bytes().iter().all(|&b| b == 0xFF));
        let s = DramState::init(geom(64), &fault, FillPattern::Checkerboard, 1).unwrap();
        let img = s.snapshot();
        for (i, &b) in img.row(2, 5).iter().enumerate() {
            assert_eq!(b, if i % 2 == 0 { 0xAA } else { 0x55 });
        }
        assert!(s.open_row(0).is_none());
        assert_eq!(s.disturbance(3, 63), 0.0);
    }

    #[test]
    fn zero_geometry_is_config_error() {
        let g = DramGeometry {
            num_banks: 0,
            ..geom(64)
        };
        let err = DramState::init(g, &FaultModel::default(), FillPattern::AllOnes, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn second_activation_is_a_row_buffer_hit() {
        let mut s = DramState::init(geom(8), &dense(10), FillPattern::AllOnes, 0).unwrap();
        assert!(!s.activate(0, 3).unwrap().was_row_buffer_hit);
        let before = s.disturbance(0, 4);
        let r = s.activate(0, 3).unwrap();
        assert!(r.was_row_buffer_hit);
        assert_eq!(s.disturbance(0, 4), before);
        assert_eq!(s.tick(), 1);
    }

    #[test]
    fn out_of_bounds_activation_is_address_error() {
        let mut s = DramState::init(geom(8), &dense(10), FillPattern::AllOnes, 0).unwrap();
        assert!(matches!(s.activate(4, 0), Err(Error::Address(_))));
        assert!(matches!(s.activate(0, 8), Err(Error::Address(_))));
        let bad = PhysicalAddress::new(0, 0, 8192, 0);
        assert!(matches!(s.read_byte(&bad), Err(Error::Address(_))));
    }

    #[test]
    fn double_sided_accumulates_two_per_pair() {
        let mut s = DramState::init(geom(16), &dense(u32::MAX), FillPattern::AllOnes, 0).unwrap();
        for _ in 0..1000 {
            s.activate(1, 6).unwrap();
            s.activate(1, 8).unwrap();
        }
        assert_eq!(s.disturbance(1, 7), 2000.0);
        // rows 6 and 8 are two apart and never disturb each other
        assert_eq!(s.disturbance(1, 6), 0.0);
        assert_eq!(s.disturbance(1, 5), 1000.0);
        assert_eq!(s.disturbance(1, 9), 1000.0);
    }

    #[test]
    fn threshold_crossing_flips_whole_row() {
        // 2 x 25_000 = 50_000 = threshold: the last activation tips the row.
        let mut s = DramState::init(geom(16), &dense(50_000), FillPattern::AllOnes, 0).unwrap();
        for i in 0..25_000 {
            s.activate(0, 6).unwrap();
            let r = s.activate(0, 8).unwrap();
            if i < 24_999 {
                assert_eq!(r.flips_caused, 0);
            } else {
                assert_eq!(r.flips_caused, 8192 * 8);
            }
        }
        let img = s.snapshot();
        assert!(img.row(0, 7).iter().all(|&b| b == 0));
        // latched: further hammering changes nothing
        s.activate(0, 6).unwrap();
        assert_eq!(s.snapshot(), img);
    }

    #[test]
    fn polarity_blocks_mismatched_cells() {
        let mut fault = dense(4);
        fault.flip_polarity = FlipPolarity::ZeroToOne;
        let mut s = DramState::init(geom(8), &fault, FillPattern::AllOnes, 0).unwrap();
        for _ in 0..10 {
            s.activate(0, 2).unwrap();
            s.activate(0, 4).unwrap();
        }
        assert_eq!(s.total_flips(), 0);
    }

    #[test]
    fn write_clears_latch_and_cell_can_flip_again() {
        let mut s = DramState::init(geom(8), &dense(4), FillPattern::AllOnes, 0).unwrap();
        for _ in 0..2 {
            s.activate(0, 2).unwrap();
            s.activate(0, 4).unwrap();
        }
        let a = PhysicalAddress::new(0, 3, 17, 3);
        assert_eq!(s.read_byte(&a).unwrap(), 0);
        assert!(s.is_latched(&a));
        s.write_byte(&a, 0xFF).unwrap();
        assert!(!s.is_latched(&a));
        assert_eq!(s.read_byte(&a).unwrap(), 0xFF);
        assert_eq!(s.disturbance(0, 3), 4.0);
        s.activate(0, 2).unwrap();
        assert_eq!(s.read_byte(&a).unwrap(), 0x00);
    }

    #[test]
    fn write_then_read() {
        let mut s = DramState::init(geom(8), &dense(4), FillPattern::AllOnes, 0).unwrap();
        let a = PhysicalAddress::new(2, 1, 100, 0);
        s.write_byte(&a, 0x00).unwrap();
        assert_eq!(s.read_byte(&a).unwrap(), 0x00);
        let b = PhysicalAddress::new(2, 1, 101, 3);
        s.inject_flip(&b).unwrap();
        assert_eq!(s.read_byte(&b).unwrap(), 0xF7);
    }

    #[test]
    fn full_sweep_zeroes_counters_keeps_data() {
        let mut s = DramState::init(geom(8), &dense(3), FillPattern::AllOnes, 0).unwrap();
        for _ in 0..5 {
            s.activate(1, 2).unwrap();
            s.activate(1, 4).unwrap();
        }
        let img = s.snapshot();
        let mut wrapped = Vec::new();
        for _ in 0..8 {
            wrapped.extend(s.refresh_sweep_step(1));
        }
        assert_eq!(wrapped, vec![0, 1, 2, 3]);
        for b in 0..4 {
            for r in 0..8 {
                assert_eq!(s.disturbance(b, r), 0.0);
            }
        }
        assert_eq!(s.snapshot(), img);
        assert!(s.open_row(1).is_none());
    }

    /// Small-number oracle for refresh racing a victim: disturbance grows by
    /// 2 per pair, a full sweep every `period` pairs resets it. The victim
    /// flips iff 2 * (pairs between resets) reaches the threshold.
    #[test]
    fn periodic_sweep_prevents_flips_when_fast_enough() {
        fn run(threshold: u32, sweep_every_pairs: u32, pairs: u32) -> u64 {
            let g = DramGeometry {
                num_banks: 1,
                rows_per_bank: 4,
                row_size_bytes: 64,
                bytes_per_pixel: 4,
            };
            let mut s = DramState::init(g, &dense(threshold), FillPattern::AllOnes, 0).unwrap();
            for p in 1..=pairs {
                s.activate(0, 0).unwrap();
                s.activate(0, 2).unwrap();
                if p % sweep_every_pairs == 0 {
                    for _ in 0..4 {
                        s.refresh_sweep_step(1);
                    }
                }
            }
            s.total_flips()
        }
        // brute force: max counter between sweeps = 2 * period
        for period in 1..12 {
            let flips = run(10, period, 100);
            assert_eq!(flips > 0, 2 * period >= 10, "period {period}");
        }
    }

    #[test]
    fn snapshots_are_immutable() {
        let mut s = DramState::init(geom(8), &dense(4), FillPattern::AllOnes, 0).unwrap();
        let a = s.snapshot();
        assert_eq!(a, s.snapshot());
        s.inject_flip(&PhysicalAddress::new(0, 0, 0, 0)).unwrap();
        assert_eq!(a.hamming_distance(&s.snapshot()), Some(1));
    }
}
