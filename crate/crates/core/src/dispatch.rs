//! Dispatchers: the hierarchical baseline heuristics and the learned policy.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::features::{self, Normalizer};
use crate::net::{self, LotBatch, PolicyParams};
use crate::scenario::PriorityClass;
use crate::sim::{FabState, LotId};

/// Orders the legal lots at a decision point. Implementations must return a
/// permutation of `legal` and must not depend on anything but their inputs.
pub trait Dispatcher: Send + Sync {
    fn name(&self) -> String;
    fn order(&self, state: &FabState, legal: &[LotId]) -> Vec<LotId>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreakRule {
    Fifo,
    Cr,
    Spt,
    Srpt,
    Edd,
    Ls,
}

impl TieBreakRule {
    pub const ALL: [TieBreakRule; 6] = [Self::Fifo, Self::Cr, Self::Spt, Self::Srpt, Self::Edd, Self::Ls];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fifo => "fifo",
            Self::Cr => "cr",
            Self::Spt => "spt",
            Self::Srpt => "srpt",
            Self::Edd => "edd",
            Self::Ls => "ls",
        }
    }
}

impl fmt::Display for TieBreakRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TieBreakRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|r| r.name()).collect();
            format!("unknown rule '{s}' (expected one of {})", names.join(", "))
        })
    }
}

/// Everything the hierarchical comparator looks at for one lot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispatchKey {
    pub lot_id: LotId,
    pub active_cqt: bool,
    pub priority: PriorityClass,
    pub no_setup_change: bool,
    pub rule_key: f64,
}

pub fn dispatch_key(rule: TieBreakRule, st: &FabState, lot_id: LotId) -> DispatchKey {
    let lot = &st.lots[&lot_id];
    let step = st.current_step(lot);
    let t = st.clock;
    let remaining = st.remaining_work(lot);
    let setup = features::setup_summary(st, lot_id);
    let rule_key = match rule {
        TieBreakRule::Fifo => lot.queue_entry_time as f64,
        TieBreakRule::Cr => (lot.due_date - t) as f64 / remaining.max(1) as f64,
        TieBreakRule::Spt => step.mean_proc_time as f64,
        TieBreakRule::Srpt => remaining as f64,
        TieBreakRule::Edd => lot.due_date as f64,
        TieBreakRule::Ls => (lot.due_date - t - remaining) as f64,
    };
    DispatchKey {
        lot_id,
        active_cqt: lot.has_active_cqt(),
        priority: lot.priority,
        no_setup_change: step.setup_id.is_none() || setup.compatible_idle > 0 || setup.open_batch,
        rule_key,
    }
}

/// Lexicographic: active CQT, priority class, setup avoidance (all
/// descending), rule key ascending, lot id ascending.
pub fn compare_keys(a: &DispatchKey, b: &DispatchKey) -> Ordering {
    b.active_cqt
        .cmp(&a.active_cqt)
        .then(b.priority.cmp(&a.priority))
        .then(b.no_setup_change.cmp(&a.no_setup_change))
        .then(a.rule_key.total_cmp(&b.rule_key))
        .then(a.lot_id.cmp(&b.lot_id))
}

pub fn order_by_keys(keys: &mut [DispatchKey]) {
    keys.sort_by(compare_keys);
}

pub fn hierarchical_order(rule: TieBreakRule, st: &FabState, legal: &[LotId]) -> Vec<LotId> {
    let mut keys: Vec<DispatchKey> = legal.iter().map(|&id| dispatch_key(rule, st, id)).collect();
    order_by_keys(&mut keys);
    keys.into_iter().map(|k| k.lot_id).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeuristicDispatcher(pub TieBreakRule);

impl Dispatcher for HeuristicDispatcher {
    fn name(&self) -> String {
        self.0.name().to_string()
    }

    fn order(&self, state: &FabState, legal: &[LotId]) -> Vec<LotId> {
        hierarchical_order(self.0, state, legal)
    }
}

/// Scores lots with the policy network and sorts by descending score; the
/// simulator's hierarchy pass is applied afterwards.
#[derive(Debug, Clone)]
pub struct PolicyDispatcher {
    pub params: PolicyParams,
    pub normalizer: Normalizer,
    pub label: String,
}

impl PolicyDispatcher {
    pub fn new(params: PolicyParams, normalizer: Normalizer) -> Self {
        Self { params, normalizer, label: "agent".into() }
    }

    pub fn batch(&self, state: &FabState, legal: &[LotId]) -> LotBatch {
        lot_batch(state, legal, &self.normalizer)
    }
}

/// Normalized network input for the given legal lots, in the given order.
pub fn lot_batch(state: &FabState, legal: &[LotId], normalizer: &Normalizer) -> LotBatch {
    let mut batch = LotBatch::with_capacity(legal.len());
    for &id in legal {
        let (z, fam) = normalizer.normalize(&features::extract_unchecked(state, id));
        batch.push(&z, fam);
    }
    batch
}

/// Sorts ids by descending score; equal scores fall back to ascending id.
pub fn order_by_scores(ids: &[LotId], scores: &[f64]) -> Vec<LotId> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    idx.into_iter().map(|i| ids[i]).collect()
}

impl Dispatcher for PolicyDispatcher {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn order(&self, state: &FabState, legal: &[LotId]) -> Vec<LotId> {
        if legal.len() <= 1 {
            return legal.to_vec();
        }
        let batch = self.batch(state, legal);
        let scores = net::forward_policy(&self.params, &batch).expect("family indices come from the scenario");
        order_by_scores(legal, &scores)
    }
}
