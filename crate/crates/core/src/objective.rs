//! Schedule cost over finished and in-progress lots, plus KPI tables.
//!
//! The cost has two parts. Finished lots are charged `w·(p + tardiness)`
//! when late; lots still in WIP are charged `w·(p + forecast tardiness)`
//! when their forecast completion `t + a·e` is past due, where `a` is the
//! realized cycle-time stretch of their lot type and `e` the remaining mean
//! processing time. Each part averages per lot type and sums over types.
//! The pure cost functions are unit-agnostic; [`total_cost`] feeds them days.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{PriorityClass, PriorityWeights, Scenario};
use crate::sim::{FabState, Lot};
use crate::{Minutes, MINUTES_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub penalty: f64,
    pub weights: PriorityWeights,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { penalty: 10.0, weights: PriorityWeights::default() }
    }
}

impl ObjectiveConfig {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self { penalty: s.penalty, weights: s.priority_weights }
    }
}

/// Lot type: product and priority class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LotType {
    pub product: usize,
    pub priority: PriorityClass,
}

impl LotType {
    pub fn of(lot: &Lot) -> Self {
        Self { product: lot.product_id, priority: lot.priority }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.priority, self.product)
    }

    pub fn parse(label: &str) -> Option<Self> {
        let (prio, prod) = label.rsplit_once('-')?;
        Some(Self { product: prod.parse().ok()?, priority: PriorityClass::parse(prio)? })
    }
}

/// A finished lot as seen by the cost. Times share one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinishedRecord {
    pub lot_type: LotType,
    pub weight: f64,
    pub due: f64,
    pub completion: Option<f64>,
}

/// A WIP lot as seen by the cost. `remaining_work` uses the time unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WipRecord {
    pub lot_type: LotType,
    pub weight: f64,
    pub due: f64,
    pub remaining_work: f64,
}

/// Per type, mean over its lots of `w·(p + (c − d))` for tardy lots (0
/// otherwise); summed over types.
pub fn finished_cost(finished: &[FinishedRecord], penalty: f64) -> Result<f64> {
    let mut per_type: BTreeMap<LotType, (f64, usize)> = BTreeMap::new();
    for r in finished {
        let c = r.completion.ok_or_else(|| Error::Schema(format!("finished lot of type {} has no completion time", r.lot_type.label())))?;
        let e = per_type.entry(r.lot_type).or_insert((0.0, 0));
        if c > r.due {
            e.0 += r.weight * (penalty + (c - r.due));
        }
        e.1 += 1;
    }
    Ok(per_type.values().map(|&(sum, n)| sum / n as f64).sum())
}

/// Per type, mean over its WIP lots of `w·x` with
/// `x = p + (t − (d − a·e))` when `d − a·e < t` and 0 otherwise.
pub fn wip_cost(wip: &[WipRecord], t: f64, stretch: &dyn Fn(LotType) -> f64, penalty: f64) -> f64 {
    let mut per_type: BTreeMap<LotType, (f64, usize)> = BTreeMap::new();
    for r in wip {
        let forecast = r.due - stretch(r.lot_type) * r.remaining_work;
        let e = per_type.entry(r.lot_type).or_insert((0.0, 0));
        if forecast < t {
            e.0 += r.weight * (penalty + (t - forecast));
        }
        e.1 += 1;
    }
    per_type.values().map(|&(sum, n)| sum / n as f64).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub finished: f64,
    pub wip: f64,
    pub total: f64,
}

fn days(m: Minutes) -> f64 {
    m as f64 / MINUTES_PER_DAY as f64
}

/// Realized stretch factor (cycle time over raw processing time) of a finished lot.
pub fn lot_stretch(scenario: &Scenario, lot: &Lot) -> f64 {
    let c = lot.completion_time.expect("finished lot");
    (c - lot.release_time) as f64 / scenario.products[lot.product_id].raw_processing_time() as f64
}

/// Mean stretch per lot type over finished lots.
pub fn stretch_by_type(scenario: &Scenario, finished: &[Lot]) -> BTreeMap<LotType, f64> {
    let mut acc: BTreeMap<LotType, (f64, usize)> = BTreeMap::new();
    for lot in finished {
        let e = acc.entry(LotType::of(lot)).or_insert((0.0, 0));
        e.0 += lot_stretch(scenario, lot);
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// `O = O_f + O_p` at the state's clock, in days. Types without finished
/// lots forecast with their product's flow factor.
pub fn total_cost(st: &FabState, cfg: &ObjectiveConfig) -> CostBreakdown {
    let sc = st.scenario();
    let finished: Vec<FinishedRecord> = st
        .finished
        .iter()
        .map(|l| FinishedRecord {
            lot_type: LotType::of(l),
            weight: cfg.weights.get(l.priority),
            due: days(l.due_date),
            completion: l.completion_time.map(days),
        })
        .collect();
    let wip: Vec<WipRecord> = st
        .lots
        .values()
        .map(|l| WipRecord {
            lot_type: LotType::of(l),
            weight: cfg.weights.get(l.priority),
            due: days(l.due_date),
            remaining_work: days(st.remaining_work(l)),
        })
        .collect();
    let stretch = stretch_by_type(sc, &st.finished);
    let lookup = |k: LotType| stretch.get(&k).copied().unwrap_or(sc.products[k.product].flow_factor);
    let o_f = finished_cost(&finished, cfg.penalty).expect("finished lots carry completion times");
    let o_p = wip_cost(&wip, days(st.clock), &lookup, cfg.penalty);
    CostBreakdown { finished: o_f, wip: o_p, total: o_f + o_p }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiRow {
    pub lot_type: LotType,
    pub count: usize,
    /// `None` when no lot of the type finished.
    pub on_time_pct: Option<f64>,
    pub cycle_days: Option<f64>,
    pub stretch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub rows: Vec<KpiRow>,
    pub cost: CostBreakdown,
    pub cqt_violations: usize,
    pub finished: usize,
    pub wip: usize,
}

impl KpiReport {
    pub fn row(&self, t: LotType) -> Option<&KpiRow> {
        self.rows.iter().find(|r| r.lot_type == t)
    }

    /// Pooled on-time percentage over all finished lots of a priority class.
    pub fn class_on_time(&self, class: PriorityClass) -> Option<f64> {
        let (mut on, mut n) = (0.0, 0usize);
        for r in self.rows.iter().filter(|r| r.lot_type.priority == class) {
            if let Some(p) = r.on_time_pct {
                on += p * r.count as f64;
                n += r.count;
            }
        }
        (n > 0).then(|| on / n as f64)
    }

    /// `type,on_time_pct,cycle_days,count`; undefined statistics are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("type,on_time_pct,cycle_days,count\n");
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", r.lot_type.label(), opt(r.on_time_pct), opt(r.cycle_days), r.count);
        }
        s
    }
}

/// On-time share and mean cycle time per lot type, with the cost at the
/// state's clock. Every (product, class) pair gets a row.
pub fn kpis(st: &FabState, cfg: &ObjectiveConfig) -> KpiReport {
    let sc = st.scenario();
    let mut groups: BTreeMap<LotType, Vec<&Lot>> = BTreeMap::new();
    for p in 0..sc.products.len() {
        for c in PriorityClass::ALL {
            groups.insert(LotType { product: p, priority: c }, Vec::new());
        }
    }
    for l in &st.finished {
        groups.entry(LotType::of(l)).or_default().push(l);
    }
    let rows = groups
        .into_iter()
        .map(|(lot_type, lots)| {
            let n = lots.len();
            if n == 0 {
                return KpiRow { lot_type, count: 0, on_time_pct: None, cycle_days: None, stretch: None };
            }
            let on_time = lots.iter().filter(|l| l.completion_time.unwrap() <= l.due_date).count();
            let cycle: f64 = lots.iter().map(|l| days(l.completion_time.unwrap() - l.release_time)).sum::<f64>() / n as f64;
            let stretch: f64 = lots.iter().map(|l| lot_stretch(sc, l)).sum::<f64>() / n as f64;
            KpiRow {
                lot_type,
                count: n,
                on_time_pct: Some(100.0 * on_time as f64 / n as f64),
                cycle_days: Some(cycle),
                stretch: Some(stretch),
            }
        })
        .collect();
    KpiReport { rows, cost: total_cost(st, cfg), cqt_violations: st.cqt_violations, finished: st.finished.len(), wip: st.lots.len() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ty(p: usize) -> LotType {
        LotType { product: p, priority: PriorityClass::Regular }
    }

    fn fin(p: usize, w: f64, due: f64, c: f64) -> FinishedRecord {
        FinishedRecord { lot_type: ty(p), weight: w, due, completion: Some(c) }
    }

    #[test]
    fn all_on_time_is_zero() {
        let lots = [fin(0, 1.0, 5.0, 4.0), fin(1, 2.0, 3.0, 3.0)];
        assert_eq!(finished_cost(&lots, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn single_tardy_lot() {
        assert_eq!(finished_cost(&[fin(0, 1.0, 10.0, 15.0)], 10.0).unwrap(), 15.0);
    }

    #[test]
    fn two_types_double_sum() {
        let lots = [fin(0, 2.0, 0.0, 3.0), fin(0, 2.0, 5.0, 4.0), fin(1, 1.0, 2.0, 3.0)];
        assert_eq!(finished_cost(&lots, 10.0).unwrap(), 24.0);
    }

    #[test]
    fn missing_completion_is_error() {
        let r = FinishedRecord { lot_type: ty(0), weight: 1.0, due: 1.0, completion: None };
        assert!(finished_cost(&[r], 10.0).is_err());
    }

    #[test]
    fn wip_examples() {
        let one = |_: LotType| 1.0;
        let far = WipRecord { lot_type: ty(0), weight: 1.0, due: 1000.0, remaining_work: 5.0 };
        assert_eq!(wip_cost(&[far], 100.0, &one, 10.0), 0.0);
        let late = WipRecord { lot_type: ty(0), weight: 1.0, due: 110.0, remaining_work: 20.0 };
        assert_eq!(wip_cost(&[late], 100.0, &one, 10.0), 20.0);
        assert_eq!(wip_cost(&[], 100.0, &one, 10.0), 0.0);
        let fo = finished_cost(&[fin(0, 2.0, 0.0, 3.0), fin(0, 2.0, 5.0, 4.0), fin(1, 1.0, 2.0, 3.0)], 10.0).unwrap();
        assert_eq!(fo + wip_cost(&[late], 100.0, &one, 10.0), 44.0);
    }

    #[test]
    fn lot_type_label_round_trip() {
        for c in PriorityClass::ALL {
            let t = LotType { product: 12, priority: c };
            assert_eq!(LotType::parse(&t.label()), Some(t));
        }
    }
}
