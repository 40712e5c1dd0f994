//! Post-processing of flip logs: row blocks, inter-block strides, adjacency
//! to activated rows and per-run aggregates.
//!
//! Strides are reported two ways. `strides` holds the gap from the end of one
//! block to the start of the next; `strides_start_to_start` holds the
//! distance between consecutive block starts. The modal value of the former
//! is the headline `modal_stride`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::campaign::{FlipRecord, RunReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowBlock {
    pub start_address: u64,
    /// Global row index, `start_address / row_size_bytes`.
    pub start_row: u64,
    pub n_rows: u64,
    pub flips_in_block: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Clustering {
    pub blocks: Vec<RowBlock>,
    pub strides: Vec<u64>,
    pub strides_start_to_start: Vec<u64>,
    pub modal_block_rows: Option<u64>,
    pub modal_stride: Option<u64>,
    pub modal_stride_start_to_start: Option<u64>,
}

/// Most frequent value; ties go to the smallest.
pub fn modal<I: IntoIterator<Item = u64>>(values: I) -> Option<u64> {
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    // max_by_key keeps the last maximum, so iterate from the largest key
    counts
        .into_iter()
        .rev()
        .max_by_key(|&(_, n)| n)
        .map(|(v, _)| v)
}

/// Groups distinct flipped rows into maximal address-contiguous runs.
pub fn cluster_rows(flips: &[FlipRecord], row_size_bytes: u32) -> Clustering {
    let row_size = row_size_bytes as u64;
    let mut per_row: BTreeMap<u64, u64> = BTreeMap::new();
    for f in flips {
        *per_row.entry(f.row_address()).or_default() += 1;
    }
    let mut blocks: Vec<RowBlock> = Vec::new();
    for (&addr, &n) in &per_row {
        match blocks.last_mut() {
            Some(b) if b.start_address + b.n_rows * row_size == addr => {
                b.n_rows += 1;
                b.flips_in_block += n;
            }
            _ => blocks.push(RowBlock {
                start_address: addr,
                start_row: addr / row_size,
                n_rows: 1,
                flips_in_block: n,
            }),
        }
    }
    let strides: Vec<u64> = blocks
        .windows(2)
        .map(|w| w[1].start_address - (w[0].start_address + w[0].n_rows * row_size))
        .collect();
    let strides_start_to_start: Vec<u64> = blocks
        .windows(2)
        .map(|w| w[1].start_address - w[0].start_address)
        .collect();
    Clustering {
        modal_block_rows: modal(blocks.iter().map(|b| b.n_rows)),
        modal_stride: modal(strides.iter().copied()),
        modal_stride_start_to_start: modal(strides_start_to_start.iter().copied()),
        blocks,
        strides,
        strides_start_to_start,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total_raw: u64,
    pub total_visible: u64,
    pub rounds: u32,
    pub mean_flips_per_round: f64,
    pub mean_visible_flips_per_round: f64,
    /// Row distance from each flip to the nearest other row activated in the
    /// same bank during its round. Absent when no activation data is known.
    pub adjacency_histogram: Option<BTreeMap<u32, u64>>,
    /// Flips with no other activated row in their bank and round.
    pub unattributed: u64,
    pub reproduction_rate: Option<f64>,
    #[serde(flatten)]
    pub clustering: Clustering,
}

fn mean(total: u64, rounds: u32) -> f64 {
    if rounds == 0 {
        0.0
    } else {
        total as f64 / rounds as f64
    }
}

/// Summary of a log alone. The round count is inferred from the highest
/// round index present, so trailing flip-free rounds are not counted.
pub fn summarize_flips(flips: &[FlipRecord], row_size_bytes: u32) -> Summary {
    let total_raw = flips.len() as u64;
    let total_visible = flips.iter().filter(|f| f.visible_after_ecc).count() as u64;
    let rounds = flips.iter().map(|f| f.round + 1).max().unwrap_or(0);
    Summary {
        total_raw,
        total_visible,
        rounds,
        mean_flips_per_round: mean(total_raw, rounds),
        mean_visible_flips_per_round: mean(total_visible, rounds),
        adjacency_histogram: None,
        unattributed: 0,
        reproduction_rate: None,
        clustering: cluster_rows(flips, row_size_bytes),
    }
}

/// Full summary of a run. `flips` must be exactly the run's flip log.
pub fn summarize(report: &RunReport, flips: &[FlipRecord]) -> Result<Summary> {
    let rounds = report.rounds.len() as u32;
    let mut raw = vec![0u64; report.rounds.len()];
    let mut visible = vec![0u64; report.rounds.len()];
    for f in flips {
        let i = f.round as usize;
        if i >= raw.len() {
            return Err(Error::usage(format!(
                "flip from round {} but the report has {rounds} rounds",
                f.round
            )));
        }
        raw[i] += 1;
        visible[i] += f.visible_after_ecc as u64;
    }
    for (i, r) in report.rounds.iter().enumerate() {
        if r.raw != raw[i] || r.visible != visible[i] {
            return Err(Error::usage(format!(
                "round {i}: report says {} raw / {} visible, log has {} / {}",
                r.raw, r.visible, raw[i], visible[i]
            )));
        }
    }

    let mut histogram: BTreeMap<u32, u64> = BTreeMap::new();
    let mut unattributed = 0;
    let activated: Vec<BTreeSet<(u32, u32)>> = report
        .rounds
        .iter()
        .map(|r| r.activated_rows.iter().map(|a| (a.bank, a.row)).collect())
        .collect();
    for f in flips {
        let set = &activated[f.round as usize];
        let below = set.range((f.bank, 0)..(f.bank, f.row)).next_back();
        let above = set.range((f.bank, f.row + 1)..(f.bank + 1, 0)).next();
        let d = [below.map(|a| f.row - a.1), above.map(|a| a.1 - f.row)]
            .into_iter()
            .flatten()
            .min();
        match d {
            Some(d) => *histogram.entry(d).or_default() += 1,
            None => unattributed += 1,
        }
    }

    let total_raw = flips.len() as u64;
    let total_visible = visible.iter().sum();
    Ok(Summary {
        total_raw,
        total_visible,
        rounds,
        mean_flips_per_round: mean(total_raw, rounds),
        mean_visible_flips_per_round: mean(total_visible, rounds),
        adjacency_histogram: Some(histogram),
        unattributed,
        reproduction_rate: report.reproduction.rate,
        clustering: cluster_rows(flips, report.config.geometry.row_size_bytes),
    })
}

/// Parses a JSON-lines flip log. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn parse_flip_log<R: BufRead>(reader: R) -> Result<Vec<FlipRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// `row_address,flip_count` for every flipped row, by address.
pub fn row_flip_csv(flips: &[FlipRecord]) -> String {
    let mut per_row: BTreeMap<u64, u64> = BTreeMap::new();
    for f in flips {
        *per_row.entry(f.row_address()).or_default() += 1;
    }
    let mut out = String::from("row_address,flip_count\n");
    for (addr, n) in per_row {
        out.push_str(&format!("{addr},{n}\n"));
    }
    out
}
