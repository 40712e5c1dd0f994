#![allow(dead_code)]

use gpuhammer_core::address_map::{BankRule, MappingConfig, MappingKind};
use gpuhammer_core::config::{CampaignConfig, CampaignSettings, ReseedPolicy};
use gpuhammer_core::dram::{DramGeometry, FaultModel, FillPattern, FlipPolarity, RefreshConfig};
use gpuhammer_core::kernel::KernelParams;
use gpuhammer_core::mitigations::{EccConfig, Eviction, TrrConfig};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub struct Limits {
    pub max_rows: u32,
    pub max_banks: u32,
    pub max_iterations: u32,
    pub max_rounds: u32,
    pub max_fraction: f64,
}

pub const PROPERTY_LIMITS: Limits = Limits {
    max_rows: 48,
    max_banks: 4,
    max_iterations: 150,
    max_rounds: 3,
    max_fraction: 0.2,
};

pub const ORACLE_LIMITS: Limits = Limits {
    max_rows: 64,
    max_banks: 4,
    max_iterations: 2000,
    max_rounds: 2,
    max_fraction: 0.05,
};

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// A random valid small campaign. Thresholds are low enough that most
/// configurations produce flips; outliers are always off.
pub fn random_config(seed: u64, limits: &Limits) -> CampaignConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let c = draw(&mut rng, limits);
        if c.validate().is_ok() {
            return c;
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, limits: &Limits) -> CampaignConfig {
    let row_size = pick(rng, &[64u32, 128]);
    let geometry = DramGeometry {
        num_banks: rng.random_range(1..=limits.max_banks),
        rows_per_bank: rng.random_range(16..=limits.max_rows),
        row_size_bytes: row_size,
        bytes_per_pixel: 4,
    };
    let window = rng.random_range(1..=4u32);
    let min_height = 2 * window + 3;
    let texture_height = rng.random_range(min_height..=min_height.max(geometry.rows_per_bank / 2));
    let mapping = if rng.random_bool(0.5) {
        MappingConfig {
            mode: MappingKind::Linear,
            bank_rule: pick(rng, &[BankRule::Fixed, BankRule::RoundRobin]),
            base_bank: rng.random_range(0..geometry.num_banks),
            base_row: rng.random_range(0..4),
            ..MappingConfig::default()
        }
    } else {
        MappingConfig {
            mode: MappingKind::BlockInterleaved,
            block_rows: rng.random_range(2..=8),
            block_stride_bytes: row_size as u64 * rng.random_range(1..=3),
            bank_rule: pick(rng, &[BankRule::Fixed, BankRule::RoundRobin]),
            base_bank: rng.random_range(0..geometry.num_banks),
            base_row: rng.random_range(0..4),
        }
    };
    let fault = FaultModel {
        base_threshold: rng.random_range(40..=400),
        threshold_jitter_sigma: pick(rng, &[0.0, 0.0, 0.2]),
        blast_radius: rng.random_range(1..=3),
        distance_attenuation: pick(rng, &[0.5, 0.75, 1.0]),
        vulnerable_fraction: rng.random_range(0.005..=limits.max_fraction),
        flip_polarity: pick(
            rng,
            &[
                FlipPolarity::OneToZero,
                FlipPolarity::ZeroToOne,
                FlipPolarity::Both,
            ],
        ),
        ..FaultModel::default()
    };
    let trr = TrrConfig {
        enabled: rng.random_bool(0.5),
        sampler_size: rng.random_range(1..=4),
        trigger_threshold: rng.random_range(16..=600),
        neighbor_radius: rng.random_range(1..=2),
        eviction: pick(rng, &[Eviction::LowestCount, Eviction::Oldest]),
        reset_on_refresh_window: rng.random_bool(0.5),
    };
    let refresh = if rng.random_bool(0.5) {
        RefreshConfig::disabled()
    } else {
        RefreshConfig {
            interval_ticks: rng.random_range(32..=2048),
            rows_per_step: rng.random_range(1..=2),
        }
    };
    let kernel = KernelParams {
        iterations: rng.random_range(0..=limits.max_iterations),
        seed: rng.random(),
        texture_width: row_size / 4,
        texture_height,
        offset_window: window,
        ..KernelParams::default()
    };
    let campaign = CampaignSettings {
        rounds: rng.random_range(1..=limits.max_rounds),
        reproduction_attempts: rng.random_range(0..=2),
        reseed_policy: pick(rng, &[ReseedPolicy::Fixed, ReseedPolicy::PerRound]),
        randomize_victims: true,
        master_seed: rng.random(),
        fill: pick(
            rng,
            &[
                FillPattern::AllOnes,
                FillPattern::AllZeros,
                FillPattern::Checkerboard,
                FillPattern::Byte(0x5c),
            ],
        ),
        target_flips: 0,
    };
    CampaignConfig {
        geometry,
        refresh,
        fault,
        trr,
        ecc: EccConfig {
            enabled: rng.random_bool(0.5),
            word_bits: 64,
        },
        kernel,
        mapping,
        campaign,
    }
}
