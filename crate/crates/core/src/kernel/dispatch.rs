use serde::{Deserialize, Serialize};

use super::{thread_seed, BankedX, KernelParams, Lcg};
use crate::address_map::AllocationMap;
use crate::controller::MemorySystem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DispatchStats {
    pub loads: u64,
    pub activations: u64,
    pub row_buffer_hits: u64,
    pub trr_refreshes: u64,
    pub refresh_steps: u64,
    pub flips: u64,
}

impl DispatchStats {
    pub fn accumulate(&mut self, other: &DispatchStats) {
        self.loads += other.loads;
        self.activations += other.activations;
        self.row_buffer_hits += other.row_buffer_hits;
        self.trr_refreshes += other.trr_refreshes;
        self.refresh_steps += other.refresh_steps;
        self.flips += other.flips;
    }
}

/// One accumulator per thread, indexed by linear global id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultBuffer(pub Vec<u32>);

/// Hook invoked on every texel load, in schedule order.
pub trait LoadObserver {
    #[allow(unused_variables)]
    fn on_load(&mut self, thread: u32, x: u32, y: u32, bank: u32, row: u32, value: u32) {}
}

impl LoadObserver for () {}

#[derive(Debug, Clone, Copy)]
pub struct ThreadState {
    pub linear_id: u32,
    pub lcg: Lcg,
    pub accumulator: u32,
}

impl ThreadState {
    pub fn new(params: &KernelParams, x: u32, y: u32) -> Self {
        let total_width = params.total_width();
        ThreadState {
            linear_id: y * total_width + x,
            lcg: Lcg::with_constants(
                thread_seed(x, y, total_width, params.seed, params.seed_mix),
                params.lcg_multiplier,
                params.lcg_increment,
            ),
            accumulator: 0,
        }
    }
}

/// One loop iteration of one thread: two offsets, two loads, accumulate.
/// Returns the two texels loaded.
pub fn hammer_thread_step<O: LoadObserver>(
    params: &KernelParams,
    thread: &mut ThreadState,
    map: &AllocationMap,
    mem: &mut MemorySystem,
    observer: &mut O,
) -> Result<[(u32, u32); 2]> {
    let window = params.offset_window;
    let last = params.texture_height as i64 - 1;
    let victim = params.victim_row as i64;
    let offset1 = thread.lcg.next_u32();
    let offset2 = thread.lcg.next_u32();
    let row1 = (victim - 1 - (offset1 % window) as i64).clamp(0, last) as u32;
    let row2 = (victim + 1 + (offset2 % window) as i64).clamp(0, last) as u32;
    let num_banks = mem.dram.geometry().num_banks;
    let x = match params.banked_x {
        BankedX::BankSpread => (thread.linear_id % num_banks) * (params.texture_width / num_banks),
        BankedX::Zero => 0,
    };
    for y in [row1, row2] {
        let (bank, row) = map.row_of(y, num_banks);
        mem.access(bank, row)?;
        let value = mem.dram.read_u32(bank, row, x * map.bytes_per_pixel);
        observer.on_load(thread.linear_id, x, y, bank, row, value);
        thread.accumulator = thread.accumulator.wrapping_add(value);
    }
    Ok([(x, row1), (x, row2)])
}

pub fn dispatch(
    params: &KernelParams,
    map: &AllocationMap,
    mem: &mut MemorySystem,
) -> Result<(ResultBuffer, DispatchStats)> {
    dispatch_observed(params, map, mem, &mut ())
}

/// Runs the whole dispatch in the canonical order: for each iteration, every
/// thread in linear-id order performs one step.
pub fn dispatch_observed<O: LoadObserver>(
    params: &KernelParams,
    map: &AllocationMap,
    mem: &mut MemorySystem,
    observer: &mut O,
) -> Result<(ResultBuffer, DispatchStats)> {
    let geometry = *mem.dram.geometry();
    params.validate(&geometry)?;
    if params.texture_width != map.width || params.texture_height != map.height {
        return Err(Error::config(format!(
            "kernel texture {}x{} does not match allocation {}x{}",
            params.texture_width, params.texture_height, map.width, map.height
        )));
    }
    // texel_to_physical checks the far corner lands inside the DRAM
    map.texel_to_physical(map.width - 1, map.height - 1, &geometry)?;

    let mut threads: Vec<ThreadState> = (0..params.total_height())
        .flat_map(|y| (0..params.total_width()).map(move |x| (x, y)))
        .map(|(x, y)| ThreadState::new(params, x, y))
        .collect();
    let before = mem.counters();
    for _ in 0..params.iterations {
        for t in threads.iter_mut() {
            hammer_thread_step(params, t, map, mem, observer)?;
        }
    }
    let after = mem.counters();
    let stats = DispatchStats {
        loads: 2 * params.iterations as u64 * threads.len() as u64,
        activations: after.activations - before.activations,
        row_buffer_hits: after.row_buffer_hits - before.row_buffer_hits,
        trr_refreshes: after.trr_refreshes - before.trr_refreshes,
        refresh_steps: after.refresh_steps - before.refresh_steps,
        flips: after.flips - before.flips,
    };
    Ok((
        ResultBuffer(threads.iter().map(|t| t.accumulator).collect()),
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address_map::MappingConfig;
    use crate::dram::{DramGeometry, DramState, FaultModel, FillPattern, RefreshConfig};
    use crate::mitigations::TrrConfig;
    use std::collections::{BTreeSet, HashMap};

    fn setup(rows: u32, fault: FaultModel) -> (DramGeometry, AllocationMap, MemorySystem) {
        let g = DramGeometry {
            num_banks: 2,
            rows_per_bank: rows,
            row_size_bytes: 64,
            bytes_per_pixel: 4,
        };
        let map = AllocationMap::new(&MappingConfig::default(), &g, 16, rows).unwrap();
        let dram = DramState::init(g, &fault, FillPattern::Checkerboard, 3).unwrap();
        (
            g,
            map,
            MemorySystem::new(dram, TrrConfig::disabled(), RefreshConfig::disabled()),
        )
    }

    fn params(iterations: u32, victim: u32, window: u32, height: u32) -> KernelParams {
        KernelParams {
            iterations,
            victim_row: victim,
            seed: 7,
            texture_width: 16,
            texture_height: height,
            offset_window: window,
            ..KernelParams::default()
        }
    }

    #[derive(Default)]
    struct Recorder {
        loads: Vec<(u32, u32, u32)>,
        sums: HashMap<u32, u32>,
    }

    impl LoadObserver for Recorder {
        fn on_load(&mut self, thread: u32, _x: u32, y: u32, _bank: u32, _row: u32, value: u32) {
            self.loads.push((thread, y, value));
            let s = self.sums.entry(thread).or_default();
            *s = s.wrapping_add(value);
        }
    }

    #[test]
    fn window_one_is_double_sided() {
        let (_, map, mut mem) = setup(32, FaultModel::default());
        let mut rec = Recorder::default();
        dispatch_observed(&params(5, 10, 1, 32), &map, &mut mem, &mut rec).unwrap();
        let rows: BTreeSet<u32> = rec.loads.iter().map(|l| l.1).collect();
        assert_eq!(rows, BTreeSet::from([9, 11]));
    }

    #[test]
    fn victim_zero_clamps() {
        let (_, map, mut mem) = setup(32, FaultModel::default());
        let mut rec = Recorder::default();
        dispatch_observed(&params(3, 0, 4, 32), &map, &mut mem, &mut rec).unwrap();
        assert_eq!(rec.loads.len(), 256 * 6);
        assert!(rec.loads.iter().step_by(2).all(|l| l.1 == 0));
    }

    #[test]
    fn three_iterations_six_loads_per_thread() {
        let (_, map, mut mem) = setup(32, FaultModel::default());
        let mut rec = Recorder::default();
        let p = params(3, 12, 4, 32);
        let mut thread = ThreadState::new(&p, 5, 2);
        for _ in 0..3 {
            hammer_thread_step(&p, &mut thread, &map, &mut mem, &mut rec).unwrap();
        }
        assert_eq!(rec.loads.len(), 6);
    }

    #[test]
    fn zero_iterations_writes_zeros() {
        let (_, map, mut mem) = setup(32, FaultModel::default());
        let (buf, stats) = dispatch(&params(0, 10, 8, 32), &map, &mut mem).unwrap();
        assert_eq!(buf.0, vec![0; 256]);
        assert_eq!(stats, DispatchStats::default());
    }

    #[test]
    fn accumulator_equals_sum_of_loaded_values() {
        let fault = FaultModel {
            base_threshold: 20,
            vulnerable_fraction: 0.2,
            flip_polarity: crate::dram::FlipPolarity::Both,
            ..FaultModel::default()
        };
        let (_, map, mut mem) = setup(32, fault);
        let mut rec = Recorder::default();
        let (buf, stats) =
            dispatch_observed(&params(40, 12, 4, 32), &map, &mut mem, &mut rec).unwrap();
        assert!(stats.flips > 0, "values should change mid-dispatch");
        for (id, &acc) in buf.0.iter().enumerate() {
            assert_eq!(acc, rec.sums[&(id as u32)]);
        }
        assert_eq!(stats.loads, stats.activations + stats.row_buffer_hits);
    }

    #[test]
    fn aggressors_stay_inside_window() {
        let (_, map, mut mem) = setup(64, FaultModel::default());
        let mut rec = Recorder::default();
        dispatch_observed(&params(50, 30, 5, 64), &map, &mut mem, &mut rec).unwrap();
        assert!(rec
            .loads
            .iter()
            .all(|&(_, y, _)| (25..=29).contains(&y) || (31..=35).contains(&y)));
    }

    #[test]
    fn mismatched_texture_is_config_error() {
        let (_, map, mut mem) = setup(32, FaultModel::default());
        let mut p = params(1, 10, 1, 32);
        p.texture_height = 16;
        assert!(matches!(
            dispatch(&p, &map, &mut mem),
            Err(Error::Config(_))
        ));
        p.texture_height = 32;
        p.texture_width = 32;
        assert!(matches!(
            dispatch(&p, &map, &mut mem),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn uniform_seed_changes_row_stream() {
        let rows_for = |seed| {
            let (_, map, mut mem) = setup(64, FaultModel::default());
            let mut rec = Recorder::default();
            let mut p = params(2, 30, 4, 64);
            p.seed = seed;
            dispatch_observed(&p, &map, &mut mem, &mut rec).unwrap();
            rec.loads.iter().take(1000).map(|l| l.1).collect::<Vec<_>>()
        };
        assert_ne!(rows_for(1), rows_for(2));
    }
}
