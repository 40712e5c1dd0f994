//! Campaign configuration, named presets and the TOML config-file layer.
//!
//! A config file is a TOML document whose tables mirror [`CampaignConfig`].
//! An optional top-level `preset` key selects the starting values; every
//! other key overrides them. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::address_map::{AllocationMap, MappingConfig};
use crate::dram::{DramGeometry, FaultModel, FillPattern, RefreshConfig, VulnerabilityLayout};
use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::mitigations::{EccConfig, TrrConfig};

/// How `uSeed` is chosen for each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReseedPolicy {
    /// Every round uses `kernel.uSeed`.
    Fixed,
    /// Drawn from the round's stream of the master seed.
    PerRound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSettings {
    pub rounds: u32,
    pub reproduction_attempts: u32,
    pub reseed_policy: ReseedPolicy,
    /// Draw `uVictimRow` every round; otherwise `kernel.uVictimRow` is used.
    pub randomize_victims: bool,
    pub master_seed: u64,
    pub fill: FillPattern,
    /// Stop after the round in which this many raw flips were seen; 0 = never.
    pub target_flips: u64,
}

impl Default for CampaignSettings {
    fn default() -> Self {
        CampaignSettings {
            rounds: 5,
            reproduction_attempts: 1,
            reseed_policy: ReseedPolicy::PerRound,
            randomize_victims: true,
            master_seed: 0,
            fill: FillPattern::AllOnes,
            target_flips: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub geometry: DramGeometry,
    pub refresh: RefreshConfig,
    pub fault: FaultModel,
    pub trr: TrrConfig,
    pub ecc: EccConfig,
    pub kernel: KernelParams,
    pub mapping: MappingConfig,
    pub campaign: CampaignSettings,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.refresh.validate()?;
        self.fault.validate(&self.geometry)?;
        self.trr.validate()?;
        self.ecc.validate(&self.geometry)?;
        self.kernel.validate(&self.geometry)?;
        AllocationMap::new(
            &self.mapping,
            &self.geometry,
            self.kernel.texture_width,
            self.kernel.texture_height,
        )?;
        let w = self.kernel.offset_window as u64;
        if (self.kernel.texture_height as u64) < 2 * w + 3 {
            return Err(Error::config(format!(
                "texture_height {} must be at least 2 * offset_window + 3 = {}",
                self.kernel.texture_height,
                2 * w + 3
            )));
        }
        if !self.campaign.randomize_victims && self.kernel.victim_row >= self.kernel.texture_height
        {
            return Err(Error::config("uVictimRow outside the texture"));
        }
        if self.campaign.rounds == 0 {
            return Err(Error::config("rounds must be >= 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }
}

pub const PRESETS: [&str; 3] = ["paper-desk", "trr-bypass-demo", "ecc-mask-demo"];

/// Named starting configurations.
pub fn preset(name: &str) -> Result<CampaignConfig> {
    match name {
        "paper-desk" => Ok(paper_desk()),
        "trr-bypass-demo" => Ok(trr_bypass_demo()),
        "ecc-mask-demo" => Ok(ecc_mask_demo()),
        other => Err(Error::config(format!(
            "unknown preset `{other}` (expected one of {})",
            PRESETS.join(", ")
        ))),
    }
}

/// 8 KiB rows, 2048-texel texture rows, 256 threads of 50 000 iterations,
/// TRR and SECDED on. Threshold and master seed are frozen so that a run
/// yields exactly 1024 raw flips.
fn paper_desk() -> CampaignConfig {
    CampaignConfig {
        geometry: DramGeometry {
            num_banks: 4,
            rows_per_bank: 256,
            row_size_bytes: 8192,
            bytes_per_pixel: 4,
        },
        refresh: RefreshConfig {
            interval_ticks: 4096,
            rows_per_step: 1,
        },
        fault: FaultModel {
            base_threshold: 64_276,
            threshold_jitter_sigma: 0.15,
            vulnerable_fraction: 0.002,
            ..FaultModel::default()
        },
        trr: TrrConfig::default(),
        ecc: EccConfig::default(),
        kernel: KernelParams {
            texture_height: 128,
            ..KernelParams::default()
        },
        mapping: MappingConfig::default(),
        campaign: CampaignSettings {
            rounds: 5,
            master_seed: 1,
            ..CampaignSettings::default()
        },
    }
}

/// Small geometry where pure double-sided hammering is caught by TRR but
/// 16-sided randomised hammering is not.
fn trr_bypass_demo() -> CampaignConfig {
    CampaignConfig {
        geometry: DramGeometry {
            num_banks: 1,
            rows_per_bank: 64,
            row_size_bytes: 1024,
            bytes_per_pixel: 4,
        },
        refresh: RefreshConfig {
            interval_ticks: 8192,
            rows_per_step: 1,
        },
        fault: FaultModel {
            base_threshold: 40_000,
            threshold_jitter_sigma: 0.0,
            vulnerable_fraction: 0.01,
            ..FaultModel::default()
        },
        trr: TrrConfig::default(),
        ecc: EccConfig::disabled(),
        kernel: KernelParams {
            texture_width: 256,
            texture_height: 48,
            iterations: 20_000,
            offset_window: 8,
            ..KernelParams::default()
        },
        mapping: MappingConfig::default(),
        campaign: CampaignSettings {
            rounds: 2,
            master_seed: 7,
            ..CampaignSettings::default()
        },
    }
}

/// SECDED on, at most one vulnerable cell per 64-bit word: every flip is
/// corrected.
fn ecc_mask_demo() -> CampaignConfig {
    CampaignConfig {
        geometry: DramGeometry {
            num_banks: 1,
            rows_per_bank: 64,
            row_size_bytes: 1024,
            bytes_per_pixel: 4,
        },
        refresh: RefreshConfig::disabled(),
        fault: FaultModel {
            base_threshold: 20_000,
            threshold_jitter_sigma: 0.1,
            vulnerable_fraction: 0.05,
            layout: VulnerabilityLayout::PerWord,
            layout_word_bits: 64,
            cells_per_word: 1,
            ..FaultModel::default()
        },
        trr: TrrConfig::disabled(),
        ecc: EccConfig::default(),
        kernel: KernelParams {
            texture_width: 256,
            texture_height: 48,
            iterations: 2_000,
            offset_window: 1,
            ..KernelParams::default()
        },
        mapping: MappingConfig::default(),
        campaign: CampaignSettings {
            rounds: 2,
            master_seed: 3,
            ..CampaignSettings::default()
        },
    }
}

fn merge(base: &mut Table, overlay: Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `key=value`. The key is either a dotted path such as
/// `kernel.uIterations` or a leaf name that is unique across sections.
fn apply_override(table: &mut Table, key: &str, raw: &str) -> Result<()> {
    let path: Vec<String> = if key.contains('.') {
        key.split('.').map(str::to_string).collect()
    } else {
        let sections: Vec<&String> = table
            .iter()
            .filter(|(_, v)| v.as_table().is_some_and(|t| t.contains_key(key)))
            .map(|(k, _)| k)
            .collect();
        match sections.as_slice() {
            [one] => vec![(*one).clone(), key.to_string()],
            [] => return Err(Error::config(format!("unknown config key `{key}`"))),
            _ => return Err(Error::config(format!("ambiguous config key `{key}`"))),
        }
    };
    let (leaf, parents) = path.split_last().expect("non-empty path");
    let mut cursor = table;
    for p in parents {
        cursor = cursor
            .get_mut(p)
            .and_then(Value::as_table_mut)
            .ok_or_else(|| Error::config(format!("unknown config section `{p}`")))?;
    }
    if !cursor.contains_key(leaf) {
        return Err(Error::config(format!("unknown config key `{key}`")));
    }
    cursor.insert(leaf.clone(), parse_value(raw));
    Ok(())
}

/// Resolves a configuration from an optional config-file text, an optional
/// preset name (taking precedence over the file's `preset` key) and
/// `key=value` overrides, in that order.
pub fn resolve_config(
    file_text: Option<&str>,
    preset_name: Option<&str>,
    overrides: &[(String, String)],
) -> Result<CampaignConfig> {
    let mut file: Table = match file_text {
        Some(text) => toml::from_str(text).map_err(|e| Error::config(e.to_string()))?,
        None => Table::new(),
    };
    let file_preset = match file.remove("preset") {
        Some(Value::String(s)) => Some(s),
        Some(_) => return Err(Error::config("`preset` must be a string")),
        None => None,
    };
    let base = match preset_name.map(str::to_string).or(file_preset) {
        Some(name) => preset(&name)?,
        None => CampaignConfig::default(),
    };
    let mut table = Table::try_from(&base).expect("config serialises to a table");
    merge(&mut table, file);
    for (k, v) in overrides {
        apply_override(&mut table, k, v)?;
    }
    let config: CampaignConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Error::config(format!("override `{s}` is not key=value")))
}
