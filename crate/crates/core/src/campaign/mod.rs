//! The attack loop: initialise, hammer, detect, log, reproduce, re-randomise,
//! reallocate, repeated for a fixed round budget.

mod record;
mod reproduce;
mod run;

pub use record::{detect_flips, format_address, Detection, FlipDirection, FlipRecord};
pub use reproduce::{attempt_reproduction, ReproductionReport, RoundOrigin};
pub use run::{
    rerandomize_victims, run_campaign, run_campaign_with, ActivatedRow, Campaign, CampaignOutcome,
    FlipSink, JsonLines, ReproductionStats, ReproductionSummary, RoundReport, RunReport, Totals,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_ALLOCATION: u64 = 1;
pub(crate) const STREAM_OUTLIER: u64 = 2;
const STREAM_ROUND_BASE: u64 = 1 << 32;

/// Independent deterministic stream `id` of the master seed.
pub(crate) fn stream(master_seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(id);
    rng
}

/// The stream that drives victim and seed choice for `round`.
pub fn round_rng(master_seed: u64, round: u32) -> ChaCha8Rng {
    stream(master_seed, STREAM_ROUND_BASE + round as u64)
}
