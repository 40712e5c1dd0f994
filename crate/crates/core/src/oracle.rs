//! Brute-force reference model of a whole campaign, for cross-checking the
//! engine on small geometries.
//!
//! Only the random draws are shared with the engine (cell thresholds, victim
//! and seed choice, reallocation). Everything else is written out directly:
//! one bit and one latch per cell, one disturbance counter per vulnerable
//! cell checked on every disturbance, a precomputed texture-row table, and the
//! dispatch as nested loops.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::address_map::{AllocationMap, BankRule};
use crate::campaign::{
    format_address, rerandomize_victims, round_rng, run_campaign, FlipDirection, FlipRecord,
};
use crate::campaign::{stream, STREAM_ALLOCATION};
use crate::config::CampaignConfig;
use crate::dram::FlipPolarity;
use crate::error::{Error, Result};
use crate::kernel::{KernelParams, SeedMix, LOCAL_SIZE};
use crate::mitigations::Eviction;

/// Largest simulated array the oracle accepts, in cells.
pub const MAX_ORACLE_CELLS: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OracleOptions {
    /// Added to every cell threshold inside the oracle only, as a negative
    /// control. Large enough values make the flip sets differ.
    pub threshold_delta: i64,
}

#[derive(Clone)]
struct Cell {
    bit: usize,
    threshold: f64,
    charge: f64,
}

#[derive(Clone)]
struct SamplerEntry {
    row: u32,
    hits: u32,
    born: u64,
}

#[derive(Clone)]
struct Timing {
    cells: Vec<Vec<Cell>>,
    open: Vec<Option<u32>>,
    cursor: Vec<u32>,
    tick: u64,
    samplers: Vec<Vec<SamplerEntry>>,
    stamp: u64,
}

struct Model<'a> {
    cfg: &'a CampaignConfig,
    bits: Vec<bool>,
    latched: Vec<bool>,
    t: Timing,
}

impl<'a> Model<'a> {
    fn new(cfg: &'a CampaignConfig, options: &OracleOptions) -> Self {
        let g = &cfg.geometry;
        let row_bytes = g.row_size_bytes as u64;
        let mut bits = Vec::with_capacity(g.total_cells() as usize);
        for i in 0..g.total_bytes() {
            let byte = cfg.campaign.fill.byte_at(i % row_bytes);
            for b in 0..8 {
                bits.push(byte >> b & 1 == 1);
            }
        }
        let cells = cfg
            .fault
            .sample_cells(g, cfg.campaign.master_seed)
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|c| Cell {
                        bit: c.bit as usize,
                        threshold: (c.threshold as i64 + options.threshold_delta).max(1) as f64,
                        charge: 0.0,
                    })
                    .collect()
            })
            .collect();
        Model {
            cfg,
            latched: vec![false; bits.len()],
            bits,
            t: Timing {
                cells,
                open: vec![None; g.num_banks as usize],
                cursor: vec![0; g.num_banks as usize],
                tick: 0,
                samplers: vec![Vec::new(); g.num_banks as usize],
                stamp: 0,
            },
        }
    }

    fn row_id(&self, bank: u32, row: u32) -> usize {
        (bank * self.cfg.geometry.rows_per_bank + row) as usize
    }

    fn cell_id(&self, bank: u32, row: u32, bit: usize) -> usize {
        self.row_id(bank, row) * self.cfg.geometry.row_size_bytes as usize * 8 + bit
    }

    fn clear_charge(&mut self, bank: u32, row: u32) {
        let id = self.row_id(bank, row);
        for c in &mut self.t.cells[id] {
            c.charge = 0.0;
        }
    }

    fn disturb(&mut self, bank: u32, row: u32, amount: f64) {
        let id = self.row_id(bank, row);
        let base = self.cell_id(bank, row, 0);
        for c in &mut self.t.cells[id] {
            c.charge += amount;
            let cell = base + c.bit;
            if c.charge < c.threshold || self.latched[cell] {
                continue;
            }
            let allowed = match self.cfg.fault.flip_polarity {
                FlipPolarity::OneToZero => self.bits[cell],
                FlipPolarity::ZeroToOne => !self.bits[cell],
                FlipPolarity::Both => true,
            };
            if allowed {
                self.bits[cell] = !self.bits[cell];
                self.latched[cell] = true;
            }
        }
    }

    /// Returns the rows to refresh if this activation triggers TRR.
    fn sample(&mut self, bank: u32, row: u32) -> Vec<u32> {
        let trr = &self.cfg.trr;
        if !trr.enabled {
            return Vec::new();
        }
        self.t.stamp += 1;
        let stamp = self.t.stamp;
        let sampler = &mut self.t.samplers[bank as usize];
        let mut slot = None;
        for (i, e) in sampler.iter_mut().enumerate() {
            if e.row == row {
                e.hits += 1;
                slot = Some(i);
            }
        }
        let slot = match slot {
            Some(i) => i,
            None if sampler.len() < trr.sampler_size as usize => {
                sampler.push(SamplerEntry {
                    row,
                    hits: 1,
                    born: stamp,
                });
                sampler.len() - 1
            }
            None => {
                let mut pick = 0;
                for i in 1..sampler.len() {
                    let (a, b) = (&sampler[i], &sampler[pick]);
                    let better = match trr.eviction {
                        Eviction::LowestCount => {
                            a.hits < b.hits || (a.hits == b.hits && a.born < b.born)
                        }
                        Eviction::Oldest => a.born < b.born,
                    };
                    if better {
                        pick = i;
                    }
                }
                sampler[pick] = SamplerEntry {
                    row,
                    hits: 1,
                    born: stamp,
                };
                pick
            }
        };
        if sampler[slot].hits < trr.trigger_threshold {
            return Vec::new();
        }
        sampler[slot].hits = 0;
        let last = self.cfg.geometry.rows_per_bank as i64 - 1;
        let r = trr.neighbor_radius as i64;
        (row as i64 - r..=row as i64 + r)
            .filter(|&n| n >= 0 && n <= last && n != row as i64)
            .map(|n| n as u32)
            .collect()
    }

    fn access(&mut self, bank: u32, row: u32) {
        if self.t.open[bank as usize] == Some(row) {
            return;
        }
        let targeted = self.sample(bank, row);
        self.t.open[bank as usize] = Some(row);
        self.t.tick += 1;
        let mut weight = 1.0;
        for d in 1..=self.cfg.fault.blast_radius {
            if row >= d {
                self.disturb(bank, row - d, weight);
            }
            if row + d < self.cfg.geometry.rows_per_bank {
                self.disturb(bank, row + d, weight);
            }
            weight *= self.cfg.fault.distance_attenuation;
        }
        self.clear_charge(bank, row);
        for r in targeted {
            self.clear_charge(bank, r);
            self.t.open[bank as usize] = None;
        }
        let interval = self.cfg.refresh.interval_ticks;
        if interval > 0 && self.t.tick.is_multiple_of(interval) {
            for b in 0..self.cfg.geometry.num_banks {
                for _ in 0..self.cfg.refresh.rows_per_step {
                    let r = self.t.cursor[b as usize];
                    self.clear_charge(b, r);
                    if r + 1 == self.cfg.geometry.rows_per_bank {
                        self.t.cursor[b as usize] = 0;
                        if self.cfg.trr.reset_on_refresh_window {
                            self.t.samplers[b as usize].clear();
                        }
                    } else {
                        self.t.cursor[b as usize] = r + 1;
                    }
                }
                self.t.open[b as usize] = None;
            }
        }
    }

    fn run_kernel(&mut self, p: &KernelParams, table: &[(u32, u32)]) {
        let width = p.workgroups_x * LOCAL_SIZE;
        let height = p.workgroups_y * LOCAL_SIZE;
        let threads = (width * height) as usize;
        let mut state: Vec<u32> = (0..threads as u32)
            .map(|id| match p.seed_mix {
                SeedMix::Xor => id ^ p.seed,
                SeedMix::Add => id.wrapping_add(p.seed),
            })
            .collect();
        let top = p.texture_height as i64 - 1;
        for _ in 0..p.iterations {
            for s in state.iter_mut() {
                *s = s
                    .wrapping_mul(p.lcg_multiplier)
                    .wrapping_add(p.lcg_increment);
                let o1 = *s;
                *s = s
                    .wrapping_mul(p.lcg_multiplier)
                    .wrapping_add(p.lcg_increment);
                let o2 = *s;
                let r1 = p.victim_row as i64 - 1 - (o1 % p.offset_window) as i64;
                let r2 = p.victim_row as i64 + 1 + (o2 % p.offset_window) as i64;
                for y in [r1.clamp(0, top), r2.clamp(0, top)] {
                    let (bank, row) = table[y as usize];
                    self.access(bank, row);
                }
            }
        }
    }

    fn row_bits(&self, bank: u32, row: u32) -> Vec<bool> {
        let n = self.cfg.geometry.row_size_bytes as usize * 8;
        let start = self.cell_id(bank, row, 0);
        self.bits[start..start + n].to_vec()
    }
}

/// Texture row to (bank, row), built by laying out blocks one after another.
fn layout_table(map: &AllocationMap, num_banks: u32) -> Vec<(u32, u32)> {
    let mut next_free: BTreeMap<u32, u32> = BTreeMap::new();
    let mut table = Vec::new();
    let mut block = 0u32;
    while (table.len() as u32) < map.height {
        let bank = match map.bank_rule {
            BankRule::Fixed => map.base_bank,
            BankRule::RoundRobin => (map.base_bank + block) % num_banks,
        };
        let start = *next_free.entry(bank).or_insert(map.base_row);
        for i in 0..map.block_rows {
            if table.len() as u32 == map.height {
                break;
            }
            table.push((bank, start + i));
        }
        next_free.insert(bank, start + map.block_rows + map.gap_rows);
        block += 1;
    }
    table
}

type Snapshot = Vec<Vec<bool>>;

fn snapshot(model: &Model, table: &[(u32, u32)]) -> Snapshot {
    table.iter().map(|&(b, r)| model.row_bits(b, r)).collect()
}

/// Raw differences as (texture_y, bit_in_row, was_one).
fn differences(before: &Snapshot, model: &Model, table: &[(u32, u32)]) -> Vec<(u32, usize, bool)> {
    let mut out = Vec::new();
    for (y, &(b, r)) in table.iter().enumerate() {
        let now = model.row_bits(b, r);
        for (bit, (&was, &is)) in before[y].iter().zip(&now).enumerate() {
            if was != is {
                out.push((y as u32, bit, was));
            }
        }
    }
    out
}

/// Replays `config` in the reference model and returns its flip records.
pub fn oracle_flips(config: &CampaignConfig, options: &OracleOptions) -> Result<Vec<FlipRecord>> {
    config.validate()?;
    let g = &config.geometry;
    if g.total_cells() > MAX_ORACLE_CELLS {
        return Err(Error::config(format!(
            "oracle limited to {MAX_ORACLE_CELLS} cells, geometry has {}",
            g.total_cells()
        )));
    }
    if config.fault.outlier_rate > 0.0 {
        return Err(Error::config("oracle requires outlier_rate = 0"));
    }
    let mut model = Model::new(config, options);
    let mut map = AllocationMap::new(
        &config.mapping,
        g,
        config.kernel.texture_width,
        config.kernel.texture_height,
    )?;
    let mut alloc_rng: ChaCha8Rng = stream(config.campaign.master_seed, STREAM_ALLOCATION);
    let row_bytes = g.row_size_bytes as u64;
    let mut all = Vec::new();
    let mut raw_total = 0u64;

    for round in 0..config.campaign.rounds {
        let params =
            rerandomize_victims(config, &mut round_rng(config.campaign.master_seed, round))?;
        let table = layout_table(&map, g.num_banks);
        for &(b, r) in &table {
            for byte in 0..row_bytes {
                let value = config.campaign.fill.byte_at(byte);
                for k in 0..8 {
                    let cell = model.cell_id(b, r, byte as usize * 8 + k);
                    model.bits[cell] = value >> k & 1 == 1;
                    model.latched[cell] = false;
                }
            }
        }
        let original = snapshot(&model, &table);
        let start = model.t.clone();
        model.run_kernel(&params, &table);
        let diffs = differences(&original, &model, &table);

        let word = config.ecc.word_bits as usize;
        let mut per_word: BTreeMap<(u32, usize), usize> = BTreeMap::new();
        for &(y, bit, _) in &diffs {
            *per_word.entry((y, bit / word)).or_default() += 1;
        }
        let mut records: Vec<FlipRecord> = diffs
            .iter()
            .map(|&(y, bit, was_one)| {
                let (bank, row) = table[y as usize];
                let byte = (bit / 8) as u32;
                let address =
                    (bank as u64 * g.rows_per_bank as u64 + row as u64) * row_bytes + byte as u64;
                FlipRecord {
                    physical_address: address,
                    physical_address_hex: format_address(address),
                    bank,
                    row,
                    byte_offset: byte,
                    bit: (bit % 8) as u8,
                    texture_x: byte / g.bytes_per_pixel,
                    texture_y: y,
                    generation: map.generation,
                    direction: if was_one {
                        FlipDirection::OneToZero
                    } else {
                        FlipDirection::ZeroToOne
                    },
                    round,
                    visible_after_ecc: !config.ecc.enabled || per_word[&(y, bit / word)] >= 2,
                    reproduced_count: 0,
                }
            })
            .collect();

        if !records.is_empty() {
            for _ in 0..config.campaign.reproduction_attempts {
                model.t = start.clone();
                for &(y, bit, was_one) in &diffs {
                    let (b, r) = table[y as usize];
                    let cell = model.cell_id(b, r, bit);
                    model.bits[cell] = was_one;
                    let first = model.cell_id(b, r, bit / 8 * 8);
                    model.latched[first..first + 8].fill(false);
                }
                let before = snapshot(&model, &table);
                model.run_kernel(&params, &table);
                let again: BTreeSet<(u32, usize)> = differences(&before, &model, &table)
                    .into_iter()
                    .map(|(y, bit, _)| (y, bit))
                    .collect();
                for (rec, &(y, bit, _)) in records.iter_mut().zip(&diffs) {
                    if again.contains(&(y, bit)) {
                        rec.reproduced_count += 1;
                    }
                }
            }
        }

        raw_total += records.len() as u64;
        records.sort_by_key(|r| (r.physical_address, r.bit));
        all.extend(records);
        let target = config.campaign.target_flips;
        if target > 0 && raw_total >= target {
            break;
        }
        if round + 1 < config.campaign.rounds {
            map = map.reallocate(g, &mut alloc_rng)?;
        }
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub engine_flips: usize,
    pub oracle_flips: usize,
    pub only_engine: Vec<FlipRecord>,
    pub only_oracle: Vec<FlipRecord>,
}

impl OracleComparison {
    pub fn agree(&self) -> bool {
        self.only_engine.is_empty() && self.only_oracle.is_empty()
    }
}

fn key(r: &FlipRecord) -> String {
    serde_json::to_string(r).expect("flip record serialises")
}

/// Runs both the engine and the oracle on `config` and diffs the flip sets.
pub fn compare_with_engine(
    config: &CampaignConfig,
    options: &OracleOptions,
) -> Result<OracleComparison> {
    let expected = oracle_flips(config, options)?;
    let engine = run_campaign(config)?.flips;
    let a: BTreeMap<String, &FlipRecord> = engine.iter().map(|r| (key(r), r)).collect();
    let b: BTreeMap<String, &FlipRecord> = expected.iter().map(|r| (key(r), r)).collect();
    Ok(OracleComparison {
        engine_flips: engine.len(),
        oracle_flips: expected.len(),
        only_engine: a
            .iter()
            .filter(|(k, _)| !b.contains_key(*k))
            .map(|(_, r)| (*r).clone())
            .collect(),
        only_oracle: b
            .iter()
            .filter(|(k, _)| !a.contains_key(*k))
            .map(|(_, r)| (*r).clone())
            .collect(),
    })
}
