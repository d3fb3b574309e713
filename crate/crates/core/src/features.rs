//! Per-lot state features and the fixed-statistics normalizer applied before
//! the policy network.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dispatch::Dispatcher;
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::sim::{self, FabState, LotId, MachineStatus, SimOptions, TraceLevel};

/// Number of real-valued features; the tool family index travels separately.
pub const NUM_FEATURES: usize = 12;

pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LotFeatures {
    pub critical_ratio: f64,
    pub time_to_deadline: f64,
    pub total_wait: f64,
    pub wait_since_last_op: f64,
    pub remaining_dedications: f64,
    pub priority: f64,
    pub remaining_work: f64,
    pub min_setup_time: f64,
    pub proc_time: f64,
    pub compatible_idle_machines: f64,
    pub batch_min: f64,
    pub batch_max: f64,
    pub family: usize,
}

impl LotFeatures {
    pub fn values(&self) -> [f64; NUM_FEATURES] {
        [
            self.critical_ratio,
            self.time_to_deadline,
            self.total_wait,
            self.wait_since_last_op,
            self.remaining_dedications,
            self.priority,
            self.remaining_work,
            self.min_setup_time,
            self.proc_time,
            self.compatible_idle_machines,
            self.batch_min,
            self.batch_max,
        ]
    }
}

/// Setup situation of a lot's current step across the machines that could
/// take it now.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetupSummary {
    pub min_setup_time: i64,
    /// Idle candidates that need no setup change.
    pub compatible_idle: usize,
    /// A compatible open batch is waiting for this lot.
    pub open_batch: bool,
}

pub fn setup_summary(st: &FabState, lot_id: LotId) -> SetupSummary {
    let lot = &st.lots[&lot_id];
    let step = st.current_step(lot);
    let mut min_setup = i64::MAX;
    let mut compatible_idle = 0;
    let mut open_batch = false;
    for m in st.candidate_machines(lot) {
        if st.machines[m].status == MachineStatus::Holding {
            open_batch = true;
            min_setup = 0;
            continue;
        }
        let s = st.setup_time(m, step);
        min_setup = min_setup.min(s);
        if s == 0 {
            compatible_idle += 1;
        }
    }
    SetupSummary { min_setup_time: if min_setup == i64::MAX { 0 } else { min_setup }, compatible_idle, open_batch }
}

/// Feature record of a legal lot at the current clock.
pub fn extract(st: &FabState, lot_id: LotId) -> Result<LotFeatures> {
    let lot = st.lot(lot_id).ok_or(Error::NotLegal(lot_id))?;
    if lot.location != sim::LotLocation::Queued || st.candidate_machines(lot).is_empty() {
        return Err(Error::NotLegal(lot_id));
    }
    Ok(extract_unchecked(st, lot_id))
}

/// As [`extract`] without the legality check; callers pass legal lots.
pub fn extract_unchecked(st: &FabState, lot_id: LotId) -> LotFeatures {
    let lot = &st.lots[&lot_id];
    let t = st.clock;
    let step = st.current_step(lot);
    let group = st.scenario().group(step.group_id);
    let remaining = st.remaining_work(lot);
    let to_due = lot.due_date - t;
    let setup = setup_summary(st, lot_id);
    let waiting = (t - lot.queue_entry_time).max(0);
    LotFeatures {
        critical_ratio: to_due as f64 / remaining.max(1) as f64,
        time_to_deadline: to_due as f64,
        total_wait: (lot.total_wait + waiting) as f64,
        wait_since_last_op: waiting as f64,
        remaining_dedications: st.remaining_dedications(lot) as f64,
        priority: lot.weight,
        remaining_work: remaining as f64,
        min_setup_time: setup.min_setup_time as f64,
        proc_time: step.mean_proc_time as f64,
        compatible_idle_machines: setup.compatible_idle as f64,
        batch_min: group.batch_min as f64,
        batch_max: group.batch_max as f64,
        family: group.family_id,
    }
}

/// Streaming mean/variance (Welford) over the 12 real features.
#[derive(Debug, Clone, Default)]
pub struct FeatureStats {
    count: u64,
    mean: [f64; NUM_FEATURES],
    m2: [f64; NUM_FEATURES],
}

impl FeatureStats {
    pub fn push(&mut self, v: &[f64; NUM_FEATURES]) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..NUM_FEATURES {
            let d = v[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (v[i] - self.mean[i]);
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Population statistics with the std floor applied.
    pub fn finish(&self, source_seed: u64) -> Result<Normalizer> {
        if self.count == 0 {
            return Err(Error::NoSamples("no legal-lot feature records were observed".into()));
        }
        let mut std = [0.0; NUM_FEATURES];
        for i in 0..NUM_FEATURES {
            std[i] = (self.m2[i] / self.count as f64).sqrt().max(STD_FLOOR);
        }
        Ok(Normalizer { mean: self.mean, std, sample_count: self.count, source_seed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; NUM_FEATURES],
    pub std: [f64; NUM_FEATURES],
    pub sample_count: u64,
    pub source_seed: u64,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self { mean: [0.0; NUM_FEATURES], std: [1.0; NUM_FEATURES], sample_count: 0, source_seed: 0 }
    }

    pub fn normalize(&self, fs: &LotFeatures) -> ([f64; NUM_FEATURES], usize) {
        let v = fs.values();
        let mut out = [0.0; NUM_FEATURES];
        for i in 0..NUM_FEATURES {
            out[i] = (v[i] - self.mean[i]) / self.std[i];
        }
        (out, fs.family)
    }

    pub fn denormalize(&self, z: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for i in 0..NUM_FEATURES {
            out[i] = z[i] * self.std[i] + self.mean[i];
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Runs the simulator under `dispatcher` and accumulates feature statistics
/// over every legal lot at every decision point.
pub fn fit_normalizer(
    scenario: Arc<Scenario>,
    dispatcher: &dyn Dispatcher,
    opts: SimOptions,
    seed: u64,
) -> Result<Normalizer> {
    let mut stats = FeatureStats::default();
    let opts = opts.with_trace(TraceLevel::Off);
    sim::run_observed(scenario, seed, dispatcher, opts, |st, legal| {
        for &id in legal {
            stats.push(&extract_unchecked(st, id).values());
        }
    })?;
    stats.finish(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(v: f64) -> [f64; NUM_FEATURES] {
        [v; NUM_FEATURES]
    }

    #[test]
    fn constant_column_gets_floor() {
        let mut s = FeatureStats::default();
        s.push(&sample(3.0));
        s.push(&sample(3.0));
        let n = s.finish(0).unwrap();
        assert_eq!(n.std[0], STD_FLOOR);
        let f = LotFeatures {
            critical_ratio: 3.0,
            time_to_deadline: 3.0,
            total_wait: 3.0,
            wait_since_last_op: 3.0,
            remaining_dedications: 3.0,
            priority: 3.0,
            remaining_work: 3.0,
            min_setup_time: 3.0,
            proc_time: 3.0,
            compatible_idle_machines: 3.0,
            batch_min: 3.0,
            batch_max: 3.0,
            family: 7,
        };
        let (z, fam) = n.normalize(&f);
        assert_eq!(z, [0.0; NUM_FEATURES]);
        assert_eq!(fam, 7);
    }

    #[test]
    fn population_std() {
        let mut s = FeatureStats::default();
        s.push(&sample(0.0));
        s.push(&sample(2.0));
        let n = s.finish(0).unwrap();
        assert_eq!(n.mean[4], 1.0);
        assert_eq!(n.std[4], 1.0);
    }

    #[test]
    fn zero_samples_is_error() {
        assert!(matches!(FeatureStats::default().finish(0), Err(Error::NoSamples(_))));
    }

    #[test]
    fn normalize_two_sigma() {
        let n = Normalizer {
            mean: [5.0; NUM_FEATURES],
            std: [2.0; NUM_FEATURES],
            sample_count: 10,
            source_seed: 1,
        };
        let mut f = LotFeatures {
            critical_ratio: 9.0,
            time_to_deadline: 5.0,
            total_wait: 5.0,
            wait_since_last_op: 5.0,
            remaining_dedications: 5.0,
            priority: 5.0,
            remaining_work: 5.0,
            min_setup_time: 5.0,
            proc_time: 5.0,
            compatible_idle_machines: 5.0,
            batch_min: 5.0,
            batch_max: 5.0,
            family: 2,
        };
        let (z, _) = n.normalize(&f);
        assert_eq!(z[0], 2.0);
        assert!(z[1..].iter().all(|&x| x == 0.0));
        f.critical_ratio = 5.0;
        assert_eq!(n.normalize(&f).0, [0.0; NUM_FEATURES]);
        let back = n.denormalize(&n.normalize(&f).0);
        assert_eq!(back, f.values());
    }
}
