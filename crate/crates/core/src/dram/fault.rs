use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, LogNormal};
use serde::{Deserialize, Serialize};

use super::DramGeometry;
use crate::error::{Error, Result};

/// Which stored values a vulnerable cell can lose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipPolarity {
    OneToZero,
    ZeroToOne,
    Both,
}

impl FlipPolarity {
    #[inline]
    pub fn can_flip(self, stored_one: bool) -> bool {
        match self {
            FlipPolarity::OneToZero => stored_one,
            FlipPolarity::ZeroToOne => !stored_one,
            FlipPolarity::Both => true,
        }
    }
}

/// How vulnerable cells are scattered over memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VulnerabilityLayout {
    /// Every cell is independently vulnerable with `vulnerable_fraction`.
    Uniform,
    /// Each aligned `layout_word_bits` word is selected with
    /// `vulnerable_fraction` and then holds exactly `cells_per_word`
    /// vulnerable cells.
    PerWord,
}

impl fmt::Display for VulnerabilityLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VulnerabilityLayout::Uniform => f.write_str("uniform"),
            VulnerabilityLayout::PerWord => f.write_str("per-word"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultModel {
    /// Disturbance a typical vulnerable cell tolerates before flipping.
    pub base_threshold: u32,
    /// Sigma of the lognormal spread of per-cell thresholds; 0 disables jitter.
    pub threshold_jitter_sigma: f64,
    pub blast_radius: u32,
    /// Disturbance at distance `d` is `distance_attenuation^(d-1)`.
    pub distance_attenuation: f64,
    pub vulnerable_fraction: f64,
    pub flip_polarity: FlipPolarity,
    /// Probability per round of one random flip inside the texture.
    pub outlier_rate: f64,
    pub layout: VulnerabilityLayout,
    pub layout_word_bits: u32,
    pub cells_per_word: u32,
}

impl Default for FaultModel {
    fn default() -> Self {
        FaultModel {
            base_threshold: 50_000,
            threshold_jitter_sigma: 0.0,
            blast_radius: 1,
            distance_attenuation: 0.5,
            vulnerable_fraction: 0.001,
            flip_polarity: FlipPolarity::OneToZero,
            outlier_rate: 0.0,
            layout: VulnerabilityLayout::Uniform,
            layout_word_bits: 64,
            cells_per_word: 1,
        }
    }
}

/// A flippable cell: its bit index within the row and its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VulnerableCell {
    pub threshold: u32,
    pub bit: u32,
}

impl FaultModel {
    pub fn validate(&self, geometry: &DramGeometry) -> Result<()> {
        if self.base_threshold == 0 {
            return Err(Error::config("base_threshold must be >= 1"));
        }
        if self.blast_radius == 0 {
            return Err(Error::config("blast_radius must be >= 1"));
        }
        if self.blast_radius >= geometry.rows_per_bank {
            return Err(Error::config(
                "blast_radius must be smaller than rows_per_bank",
            ));
        }
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("vulnerable_fraction", self.vulnerable_fraction)?;
        unit("outlier_rate", self.outlier_rate)?;
        if !(self.threshold_jitter_sigma >= 0.0 && self.threshold_jitter_sigma.is_finite()) {
            return Err(Error::config(
                "threshold_jitter_sigma must be finite and >= 0",
            ));
        }
        if !(self.distance_attenuation >= 0.0 && self.distance_attenuation.is_finite()) {
            return Err(Error::config(
                "distance_attenuation must be finite and >= 0",
            ));
        }
        if self.layout == VulnerabilityLayout::PerWord {
            let w = self.layout_word_bits;
            if w == 0 || !geometry.row_bits().is_multiple_of(w as u64) {
                return Err(Error::config(format!(
                    "layout_word_bits {w} must divide the row width in bits"
                )));
            }
            if self.cells_per_word == 0 || self.cells_per_word > w {
                return Err(Error::config(format!(
                    "cells_per_word must lie in [1, {w}]"
                )));
            }
        }
        Ok(())
    }

    /// Per-distance disturbance weights, index 0 = distance 1.
    pub fn distance_weights(&self) -> Vec<f64> {
        let mut weights = Vec::with_capacity(self.blast_radius as usize);
        let mut w = 1.0;
        for _ in 0..self.blast_radius {
            weights.push(w);
            w *= self.distance_attenuation;
        }
        weights
    }

    /// Draws the vulnerable cells of every row from `seed`, rows in flat
    /// bank-major order, each row sorted by (threshold, bit).
    ///
    /// The draw order is fixed, so equal seeds give bit-identical maps.
    pub fn sample_cells(&self, geometry: &DramGeometry, seed: u64) -> Vec<Vec<VulnerableCell>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = geometry.total_rows() as usize;
        let row_bits = geometry.row_bits();
        let mut cells: Vec<Vec<VulnerableCell>> = vec![Vec::new(); rows];
        let jitter = (self.threshold_jitter_sigma > 0.0).then(|| {
            LogNormal::new(
                (self.base_threshold as f64).ln(),
                self.threshold_jitter_sigma,
            )
            .expect("validated sigma")
        });
        let threshold = |rng: &mut ChaCha8Rng| match &jitter {
            None => self.base_threshold,
            Some(dist) => dist.sample(rng).round().clamp(1.0, u32::MAX as f64) as u32,
        };

        match self.layout {
            VulnerabilityLayout::Uniform => {
                if self.vulnerable_fraction > 0.0 {
                    let total = geometry.total_cells();
                    let skip =
                        Geometric::new(self.vulnerable_fraction).expect("validated fraction");
                    let mut cell = 0u64;
                    loop {
                        cell = cell.saturating_add(skip.sample(&mut rng));
                        if cell >= total {
                            break;
                        }
                        let t = threshold(&mut rng);
                        cells[(cell / row_bits) as usize].push(VulnerableCell {
                            threshold: t,
                            bit: (cell % row_bits) as u32,
                        });
                        cell += 1;
                    }
                }
            }
            VulnerabilityLayout::PerWord => {
                let word = self.layout_word_bits as u64;
                let k = self.cells_per_word as usize;
                for row_cells in cells.iter_mut() {
                    for w in 0..row_bits / word {
                        if !rng.random_bool(self.vulnerable_fraction) {
                            continue;
                        }
                        let mut picked: Vec<usize> =
                            index::sample(&mut rng, word as usize, k).into_vec();
                        picked.sort_unstable();
                        for b in picked {
                            let t = threshold(&mut rng);
                            row_cells.push(VulnerableCell {
                                threshold: t,
                                bit: (w * word + b as u64) as u32,
                            });
                        }
                    }
                }
            }
        }
        for row in &mut cells {
            row.sort_unstable();
        }
        cells
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DramGeometry {
        DramGeometry {
            num_banks: 2,
            rows_per_bank: 8,
            row_size_bytes: 64,
            bytes_per_pixel: 4,
        }
    }

    #[test]
    fn full_fraction_marks_every_cell() {
        let fault = FaultModel {
            vulnerable_fraction: 1.0,
            ..FaultModel::default()
        };
        let cells = fault.sample_cells(&small(), 7);
        assert_eq!(cells.len(), 16);
        assert!(cells.iter().all(|r| r.len() == 512));
        assert!(cells.iter().flatten().all(|c| c.threshold == 50_000));
    }

    #[test]
    fn zero_fraction_marks_nothing() {
        let fault = FaultModel {
            vulnerable_fraction: 0.0,
            ..FaultModel::default()
        };
        assert!(fault.sample_cells(&small(), 7).iter().all(Vec::is_empty));
    }

    #[test]
    fn same_seed_same_thresholds() {
        let fault = FaultModel {
            vulnerable_fraction: 0.3,
            threshold_jitter_sigma: 0.2,
            ..FaultModel::default()
        };
        let a = fault.sample_cells(&small(), 99);
        assert_eq!(a, fault.sample_cells(&small(), 99));
        assert_ne!(a, fault.sample_cells(&small(), 100));
    }

    #[test]
    fn per_word_layout_places_exact_counts() {
        let fault = FaultModel {
            vulnerable_fraction: 0.5,
            layout: VulnerabilityLayout::PerWord,
            layout_word_bits: 64,
            cells_per_word: 2,
            ..FaultModel::default()
        };
        let cells = fault.sample_cells(&small(), 3);
        let mut any = false;
        for row in &cells {
            let mut per_word = [0u32; 8];
            for c in row {
                per_word[(c.bit / 64) as usize] += 1;
            }
            assert!(per_word.iter().all(|&n| n == 0 || n == 2));
            any |= per_word.contains(&2);
        }
        assert!(any);
    }

    #[test]
    fn weights_decay_geometrically() {
        let fault = FaultModel {
            blast_radius: 3,
            distance_attenuation: 0.5,
            ..FaultModel::default()
        };
        assert_eq!(fault.distance_weights(), vec![1.0, 0.5, 0.25]);
    }
}
