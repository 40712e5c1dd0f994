use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{detect_flips, FlipRecord};
use super::reproduce::{attempt_reproduction, RoundOrigin};
use super::{round_rng, stream, STREAM_ALLOCATION, STREAM_OUTLIER};
use crate::address_map::AllocationMap;
use crate::analysis::{summarize, Summary};
use crate::config::{CampaignConfig, ReseedPolicy};
use crate::controller::MemorySystem;
use crate::dram::{DramState, PhysicalAddress};
use crate::error::{Error, Result, Stage};
use crate::kernel::{dispatch, DispatchStats, KernelParams};

/// Receives each round's flip records once the round is complete.
pub trait FlipSink {
    fn record(&mut self, flip: &FlipRecord) -> io::Result<()>;
}

impl FlipSink for () {
    fn record(&mut self, _: &FlipRecord) -> io::Result<()> {
        Ok(())
    }
}

impl FlipSink for Vec<FlipRecord> {
    fn record(&mut self, flip: &FlipRecord) -> io::Result<()> {
        self.push(flip.clone());
        Ok(())
    }
}

/// Writes one JSON object per line and flushes after every round.
pub struct JsonLines<W: Write>(pub W);

impl<W: Write> FlipSink for JsonLines<W> {
    fn record(&mut self, flip: &FlipRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.0, flip)?;
        self.0.write_all(b"\n")?;
        self.0.flush()
    }
}

/// Kernel parameters for `round`: a victim row drawn uniformly from the rows
/// whose whole aggressor window fits inside the texture, and `uSeed` per the
/// reseed policy.
pub fn rerandomize_victims(config: &CampaignConfig, rng: &mut ChaCha8Rng) -> Result<KernelParams> {
    let mut params = config.kernel.clone();
    let w = params.offset_window;
    let h = params.texture_height;
    if (h as u64) < 2 * w as u64 + 3 {
        return Err(Error::config(format!(
            "texture_height {h} too small for offset_window {w}"
        )));
    }
    if config.campaign.randomize_victims {
        params.victim_row = rng.random_range(w + 1..=h - w - 2);
    }
    if config.campaign.reseed_policy == ReseedPolicy::PerRound {
        params.seed = rng.random();
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivatedRow {
    pub bank: u32,
    pub row: u32,
    pub activations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReproductionStats {
    /// Records fed into reproduction, each counted once per attempt.
    pub trials: u64,
    pub reproduced: u64,
    pub new_flips: u64,
}

impl ReproductionStats {
    pub fn rate(&self) -> Option<f64> {
        (self.trials > 0).then(|| self.reproduced as f64 / self.trials as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub victim_row: u32,
    pub u_seed: u32,
    pub base_bank: u32,
    pub base_row: u32,
    pub generation: u32,
    pub raw: u64,
    pub corrected: u64,
    pub visible: u64,
    pub detected_words: u64,
    pub silent_words: u64,
    pub outliers: u64,
    pub reproduction: ReproductionStats,
    pub hammer: DispatchStats,
    pub reproduction_dispatch: DispatchStats,
    /// Rows activated at least once during this round.
    pub activated_rows: Vec<ActivatedRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub raw: u64,
    pub corrected: u64,
    pub visible: u64,
    pub detected_words: u64,
    pub silent_words: u64,
    pub outliers: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproductionSummary {
    #[serde(flatten)]
    pub stats: ReproductionStats,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: CampaignConfig,
    pub rounds: Vec<RoundReport>,
    pub totals: Totals,
    pub reproduction: ReproductionSummary,
    /// Hammer and reproduction dispatches together.
    pub dispatch: DispatchStats,
    pub stopped_early: bool,
    pub summary: Option<Summary>,
}

impl RunReport {
    /// Per-round counts as CSV.
    pub fn rounds_csv(&self) -> String {
        let mut out = String::from(
            "round,victim_row,u_seed,base_bank,base_row,raw,corrected,visible,reproduced,activations\n",
        );
        for r in &self.rounds {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.round,
                r.victim_row,
                r.u_seed,
                r.base_bank,
                r.base_row,
                r.raw,
                r.corrected,
                r.visible,
                r.reproduction.reproduced,
                r.hammer.activations + r.reproduction_dispatch.activations,
            ));
        }
        out
    }
}

pub struct CampaignOutcome {
    pub report: RunReport,
    pub flips: Vec<FlipRecord>,
}

/// A campaign advanced one round at a time.
pub struct Campaign {
    config: CampaignConfig,
    mem: MemorySystem,
    map: AllocationMap,
    alloc_rng: ChaCha8Rng,
    outlier_rng: ChaCha8Rng,
    next_round: u32,
    raw_so_far: u64,
    finished: bool,
    stopped_early: bool,
}

impl Campaign {
    pub fn new(config: CampaignConfig) -> Result<Self> {
        let init = || -> Result<Self> {
            config.validate()?;
            let seed = config.campaign.master_seed;
            let dram = DramState::init(config.geometry, &config.fault, config.campaign.fill, seed)?;
            let mem = MemorySystem::new(dram, config.trr, config.refresh);
            let map = AllocationMap::new(
                &config.mapping,
                &config.geometry,
                config.kernel.texture_width,
                config.kernel.texture_height,
            )?;
            Ok(Campaign {
                mem,
                map,
                alloc_rng: stream(seed, STREAM_ALLOCATION),
                outlier_rng: stream(seed, STREAM_OUTLIER),
                next_round: 0,
                raw_so_far: 0,
                finished: false,
                stopped_early: false,
                config: config.clone(),
            })
        };
        init().map_err(|e| e.in_round(0, Stage::Init))
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    pub fn memory(&self) -> &MemorySystem {
        &self.mem
    }

    pub fn allocation(&self) -> &AllocationMap {
        &self.map
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Runs the next round and returns its report and flip records, or
    /// `None` once the round budget or flip target is exhausted.
    pub fn step(&mut self) -> Result<Option<(RoundReport, Vec<FlipRecord>)>> {
        if self.finished {
            return Ok(None);
        }
        let round = self.next_round;
        let cfg = &self.config;
        let num_banks = cfg.geometry.num_banks;

        let params = rerandomize_victims(cfg, &mut round_rng(cfg.campaign.master_seed, round))
            .map_err(|e| e.in_round(round, Stage::Rerandomize))?;

        let before_activations = self.mem.dram.activated_rows();
        let mut hammer = || -> Result<_> {
            for y in 0..self.map.height {
                let (bank, row) = self.map.row_of(y, num_banks);
                self.mem.dram.fill_row(bank, row, cfg.campaign.fill)?;
            }
            let original = self.mem.dram.snapshot();
            let checkpoint = self.mem.checkpoint();
            let (_, stats) = dispatch(&params, &self.map, &mut self.mem)?;
            Ok((original, checkpoint, stats))
        };
        let (original, checkpoint, hammer_stats) =
            hammer().map_err(|e| e.in_round(round, Stage::Hammer))?;

        let mut outliers = 0;
        if cfg.fault.outlier_rate > 0.0 && self.outlier_rng.random_bool(cfg.fault.outlier_rate) {
            let y = self.outlier_rng.random_range(0..self.map.height);
            let offset = self
                .outlier_rng
                .random_range(0..cfg.geometry.row_size_bytes);
            let bit = self.outlier_rng.random_range(0..8u8);
            let (bank, row) = self.map.row_of(y, num_banks);
            let addr = PhysicalAddress::new(bank, row, offset, bit);
            if !self.mem.dram.is_latched(&addr) {
                self.mem
                    .dram
                    .inject_flip(&addr)
                    .map_err(|e| e.in_round(round, Stage::Hammer))?;
                outliers = 1;
            }
        }

        let detection = detect_flips(
            &original,
            &self.mem.dram.snapshot(),
            &self.map,
            &cfg.ecc,
            round,
        )
        .map_err(|e| e.in_round(round, Stage::Detect))?;
        let mut raw = detection.raw;

        let mut reproduction = ReproductionStats::default();
        let mut reproduction_dispatch = DispatchStats::default();
        if !raw.is_empty() {
            let origin = RoundOrigin {
                round,
                params: params.clone(),
                checkpoint,
            };
            for _ in 0..cfg.campaign.reproduction_attempts {
                let r = attempt_reproduction(&mut raw, &origin, &params, &mut self.mem, &self.map)
                    .map_err(|e| e.in_round(round, Stage::Reproduce))?;
                reproduction.trials += raw.len() as u64;
                reproduction.reproduced += r.reproduced;
                reproduction.new_flips += r.new_flips;
                reproduction_dispatch.accumulate(&r.dispatch);
            }
        }

        let before: std::collections::HashMap<(u32, u32), u64> = before_activations
            .into_iter()
            .map(|(b, r, n)| ((b, r), n))
            .collect();
        let activated_rows = self
            .mem
            .dram
            .activated_rows()
            .into_iter()
            .filter_map(|(bank, row, n)| {
                let delta = n - before.get(&(bank, row)).copied().unwrap_or(0);
                (delta > 0).then_some(ActivatedRow {
                    bank,
                    row,
                    activations: delta,
                })
            })
            .collect();

        let report = RoundReport {
            round,
            victim_row: params.victim_row,
            u_seed: params.seed,
            base_bank: self.map.base_bank,
            base_row: self.map.base_row,
            generation: self.map.generation,
            raw: raw.len() as u64,
            corrected: detection.ecc.corrected as u64,
            visible: raw.iter().filter(|r| r.visible_after_ecc).count() as u64,
            detected_words: detection.ecc.detected_words as u64,
            silent_words: detection.ecc.silent_words as u64,
            outliers,
            reproduction,
            hammer: hammer_stats,
            reproduction_dispatch,
            activated_rows,
        };

        self.raw_so_far += report.raw;
        self.next_round += 1;
        let target = cfg.campaign.target_flips;
        if target > 0 && self.raw_so_far >= target && self.next_round < cfg.campaign.rounds {
            self.stopped_early = true;
        }
        self.finished = self.stopped_early || self.next_round >= cfg.campaign.rounds;
        if !self.finished {
            self.map = self
                .map
                .reallocate(&cfg.geometry, &mut self.alloc_rng)
                .map_err(|e| e.in_round(round, Stage::Reallocate))?;
        }
        Ok(Some((report, raw)))
    }
}

/// Runs every round, handing each round's flips to `sink` as soon as the
/// round completes.
pub fn run_campaign_with<S: FlipSink + ?Sized>(
    config: &CampaignConfig,
    sink: &mut S,
) -> Result<CampaignOutcome> {
    let mut campaign = Campaign::new(config.clone())?;
    let mut rounds = Vec::new();
    let mut flips = Vec::new();
    while let Some((report, round_flips)) = campaign.step()? {
        for f in &round_flips {
            sink.record(f)
                .map_err(|e| Error::from(e).in_round(report.round, Stage::Detect))?;
        }
        rounds.push(report);
        flips.extend(round_flips);
    }

    let mut totals = Totals::default();
    let mut stats = ReproductionStats::default();
    let mut dispatch = DispatchStats::default();
    for r in &rounds {
        totals.raw += r.raw;
        totals.corrected += r.corrected;
        totals.visible += r.visible;
        totals.detected_words += r.detected_words;
        totals.silent_words += r.silent_words;
        totals.outliers += r.outliers;
        stats.trials += r.reproduction.trials;
        stats.reproduced += r.reproduction.reproduced;
        stats.new_flips += r.reproduction.new_flips;
        dispatch.accumulate(&r.hammer);
        dispatch.accumulate(&r.reproduction_dispatch);
    }
    let mut report = RunReport {
        config: config.clone(),
        rounds,
        totals,
        reproduction: ReproductionSummary {
            rate: stats.rate(),
            stats,
        },
        dispatch,
        stopped_early: campaign.stopped_early,
        summary: None,
    };
    report.summary = Some(summarize(&report, &flips)?);
    Ok(CampaignOutcome { report, flips })
}

pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignOutcome> {
    run_campaign_with(config, &mut ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    fn tiny() -> CampaignConfig {
        let mut c = preset("trr-bypass-demo").unwrap();
        c.kernel.iterations = 300;
        c.campaign.rounds = 3;
        c
    }

    #[test]
    fn zero_iterations_gives_zero_flips() {
        let mut c = tiny();
        c.kernel.iterations = 0;
        c.campaign.rounds = 1;
        let out = run_campaign(&c).unwrap();
        assert_eq!(out.report.totals.raw, 0);
        assert_eq!(out.report.rounds.len(), 1);
        assert!(out.flips.is_empty());
        assert_eq!(out.report.reproduction.rate, None);
    }

    #[test]
    fn victim_range_bounds() {
        let mut c = tiny();
        c.kernel.offset_window = 2;
        c.kernel.texture_height = 7;
        for round in 0..50 {
            let p = rerandomize_victims(&c, &mut round_rng(1, round)).unwrap();
            assert_eq!(p.victim_row, 3);
        }
        c.kernel.texture_height = 6;
        assert!(rerandomize_victims(&c, &mut round_rng(1, 0))
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn victims_reproducible_from_seed() {
        let c = tiny();
        let a: Vec<_> = (0..10)
            .map(|r| rerandomize_victims(&c, &mut round_rng(5, r)).unwrap())
            .collect();
        let b: Vec<_> = (0..10)
            .map(|r| rerandomize_victims(&c, &mut round_rng(5, r)).unwrap())
            .collect();
        assert_eq!(a, b);
        assert!(a.windows(2).any(|w| w[0].victim_row != w[1].victim_row));
    }

    #[test]
    fn victim_draws_roughly_uniform() {
        let c = tiny();
        let (lo, hi) = (9u32, 38u32);
        let mut counts = vec![0u64; (hi - lo + 1) as usize];
        let mut rng = round_rng(11, 0);
        for _ in 0..10_000 {
            let v = rerandomize_victims(&c, &mut rng).unwrap().victim_row;
            assert!((lo..=hi).contains(&v));
            counts[(v - lo) as usize] += 1;
        }
        let expected = 10_000.0 / counts.len() as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&n| (n as f64 - expected).powi(2) / expected)
            .sum();
        // 29 degrees of freedom; the 0.999 quantile is about 58.3
        assert!(chi2 < 58.3, "chi2 = {chi2}");
    }

    #[test]
    fn fixed_reseed_keeps_seed() {
        let mut c = tiny();
        c.campaign.reseed_policy = ReseedPolicy::Fixed;
        c.campaign.randomize_victims = false;
        c.kernel.seed = 99;
        c.kernel.victim_row = 20;
        let p = rerandomize_victims(&c, &mut round_rng(5, 3)).unwrap();
        assert_eq!((p.seed, p.victim_row), (99, 20));
    }

    #[test]
    fn report_arithmetic_and_generations() {
        let out = run_campaign(&tiny()).unwrap();
        let r = &out.report;
        assert_eq!(r.rounds.len(), 3);
        assert_eq!(r.totals.raw, r.rounds.iter().map(|x| x.raw).sum::<u64>());
        assert_eq!(r.totals.raw, out.flips.len() as u64);
        for (i, round) in r.rounds.iter().enumerate() {
            assert_eq!(round.generation, i as u32);
            assert!(round.visible <= round.raw);
            assert_eq!(round.hammer.loads, 2 * 300 * 256);
        }
    }

    #[test]
    fn target_flips_stops_early() {
        let mut c = preset("ecc-mask-demo").unwrap();
        c.campaign.rounds = 10;
        c.campaign.target_flips = 1;
        let out = run_campaign(&c).unwrap();
        assert!(out.report.totals.raw >= 1);
        assert!(out.report.stopped_early);
        assert!(out.report.rounds.len() < 10);
    }

    #[test]
    fn sink_sees_every_flip_in_order() {
        let c = preset("ecc-mask-demo").unwrap();
        let mut seen: Vec<FlipRecord> = Vec::new();
        let out = run_campaign_with(&c, &mut seen).unwrap();
        assert_eq!(seen, out.flips);
        let mut buf = JsonLines(Vec::new());
        run_campaign_with(&c, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.0).unwrap().lines().count(),
            out.flips.len()
        );
    }

    #[test]
    fn invalid_config_names_init_stage() {
        let mut c = tiny();
        c.campaign.rounds = 0;
        match run_campaign(&c) {
            Err(Error::Campaign {
                round: 0,
                stage: Stage::Init,
                ..
            }) => {}
            other => panic!("unexpected {:?}", other.err()),
        }
    }
}
