//! Discrete-event fab simulator.
//!
//! The world advances from decision point to decision point. At each one the
//! caller supplies an ordering of the legal lots; [`FabState::apply_hierarchy`]
//! lifts CQT-constrained and high-priority lots to the front, and
//! [`FabState::dispatch_step`] allocates lots to machines in that order before
//! popping events up to the next decision point.

pub mod event;
pub mod rng;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::dispatch::Dispatcher;
use crate::error::{Error, Result};
use crate::scenario::{Dedication, PriorityClass, RouteStep, Scenario, NOMINAL_WAFERS};
use crate::Minutes;

use event::{EventKind, EventQueue};
use rng::Stream;
pub use trace::{Trace, TraceLevel, TraceRecord};

pub type LotId = u64;
pub type MachineId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LotLocation {
    Queued,
    InTransport,
    /// Waiting in an open (not yet started) batch on a machine.
    Holding(MachineId),
    Processing(MachineId),
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lot {
    pub lot_id: LotId,
    pub product_id: usize,
    pub priority: PriorityClass,
    pub weight: f64,
    pub release_time: Minutes,
    pub due_date: Minutes,
    pub wafer_count: u32,
    pub step_index: usize,
    pub queue_entry_time: Minutes,
    pub total_wait: Minutes,
    pub completion_time: Option<Minutes>,
    /// `(bind step, machine)` pairs recorded so far.
    pub dedications: Vec<(usize, MachineId)>,
    pub cqt_deadline: Option<Minutes>,
    pub location: LotLocation,
}

impl Lot {
    pub fn has_active_cqt(&self) -> bool {
        self.cqt_deadline.is_some()
    }

    pub fn bound_machine(&self, bind_step: usize) -> Option<MachineId> {
        self.dedications.iter().find(|(s, _)| *s == bind_step).map(|&(_, m)| m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineStatus {
    Idle,
    /// Reserved with an open partial batch waiting for more lots.
    Holding,
    Busy,
    Down,
    Maintenance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MachineState {
    pub machine_id: MachineId,
    pub group_id: usize,
    pub status: MachineStatus,
    /// Index into the group's setup list.
    pub current_setup: Option<usize>,
    pub idle_since: Minutes,
    pub busy_until: Option<Minutes>,
    pub current_batch: Vec<LotId>,
    /// `(product, step)` of the open or running batch.
    pub batch_key: Option<(usize, usize)>,
    pub pending_maintenance: bool,
    token: u64,
}

impl MachineState {
    /// An operation is started and not yet finished (possibly interrupted).
    pub fn in_flight(&self) -> bool {
        self.busy_until.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub horizon: Minutes,
    pub initial_wip: usize,
    pub trace: TraceLevel,
}

impl SimOptions {
    pub fn new(horizon: Minutes) -> Self {
        Self { horizon, initial_wip: 0, trace: TraceLevel::Standard }
    }

    pub fn with_wip(mut self, initial_wip: usize) -> Self {
        self.initial_wip = initial_wip;
        self
    }

    pub fn with_trace(mut self, trace: TraceLevel) -> Self {
        self.trace = trace;
        self
    }
}

struct Streams {
    release: Vec<ChaCha8Rng>,
    breakdown: Vec<ChaCha8Rng>,
    skip: ChaCha8Rng,
}

pub struct FabState {
    scenario: Arc<Scenario>,
    pub seed: u64,
    pub clock: Minutes,
    pub horizon: Minutes,
    events: EventQueue,
    pub machines: Vec<MachineState>,
    group_machines: Vec<Vec<MachineId>>,
    /// Queued lot ids per tool group.
    queues: Vec<BTreeSet<LotId>>,
    /// Work in progress.
    pub lots: BTreeMap<LotId, Lot>,
    pub finished: Vec<Lot>,
    pub released: usize,
    next_lot_id: LotId,
    pub cqt_violations: usize,
    pub decisions: usize,
    /// Remaining mean processing time per (product, step), suffix sums.
    remaining_work: Vec<Vec<Minutes>>,
    /// Remaining `reuse` steps per (product, step).
    remaining_dedications: Vec<Vec<usize>>,
    streams: Streams,
    done: bool,
    pub trace: Trace,
}

impl FabState {
    /// Builds the world at clock 0: initial WIP spread over routes, the first
    /// release per product, breakdown and maintenance timers per machine.
    pub fn init(scenario: Arc<Scenario>, seed: u64, opts: SimOptions) -> FabState {
        let mut machines = Vec::new();
        let mut group_machines = Vec::with_capacity(scenario.tool_groups.len());
        for g in &scenario.tool_groups {
            let mut ids = Vec::with_capacity(g.machine_count);
            for _ in 0..g.machine_count {
                let id = machines.len();
                ids.push(id);
                machines.push(MachineState {
                    machine_id: id,
                    group_id: g.group_id,
                    status: MachineStatus::Idle,
                    current_setup: if g.setups.is_empty() { None } else { Some(0) },
                    idle_since: 0,
                    busy_until: None,
                    current_batch: Vec::new(),
                    batch_key: None,
                    pending_maintenance: false,
                    token: 0,
                });
            }
            group_machines.push(ids);
        }
        let remaining_work = scenario
            .products
            .iter()
            .map(|p| {
                let mut acc = 0;
                let mut v: Vec<Minutes> = p.route.iter().rev().map(|s| {
                    acc += s.mean_proc_time;
                    acc
                }).collect();
                v.reverse();
                v.push(0);
                v
            })
            .collect();
        let remaining_dedications = scenario
            .products
            .iter()
            .map(|p| {
                let mut acc = 0;
                let mut v: Vec<usize> = p.route.iter().rev().map(|s| {
                    if matches!(s.dedication, Dedication::Reuse { .. }) {
                        acc += 1;
                    }
                    acc
                }).collect();
                v.reverse();
                v.push(0);
                v
            })
            .collect();
        let streams = Streams {
            release: (0..scenario.products.len()).map(|p| rng::stream(seed, Stream::Release(p))).collect(),
            breakdown: (0..machines.len()).map(|m| rng::stream(seed, Stream::Breakdown(m))).collect(),
            skip: rng::stream(seed, Stream::Skip),
        };
        let ngroups = scenario.tool_groups.len();
        let mut st = FabState {
            scenario,
            seed,
            clock: 0,
            horizon: opts.horizon,
            events: EventQueue::new(),
            machines,
            group_machines,
            queues: vec![BTreeSet::new(); ngroups],
            lots: BTreeMap::new(),
            finished: Vec::new(),
            released: 0,
            next_lot_id: 0,
            cqt_violations: 0,
            decisions: 0,
            remaining_work,
            remaining_dedications,
            streams,
            done: opts.horizon <= 0,
            trace: Trace::new(opts.trace),
        };
        st.seed_initial_wip(opts.initial_wip);
        st.seed_processes();
        st
    }

    fn seed_initial_wip(&mut self, count: usize) {
        if count == 0 {
            return;
        }
        let sc = Arc::clone(&self.scenario);
        let mut rng = rng::stream(self.seed, Stream::InitialWip);
        let total_rate: f64 = sc.products.iter().map(|p| p.release_rate).sum();
        for _ in 0..count {
            let pid = if total_rate > 0.0 {
                let mut x = rng.random::<f64>() * total_rate;
                let mut pick = sc.products.len() - 1;
                for (i, p) in sc.products.iter().enumerate() {
                    if x < p.release_rate {
                        pick = i;
                        break;
                    }
                    x -= p.release_rate;
                }
                pick
            } else {
                rng.random_range(0..sc.products.len())
            };
            let product = &sc.products[pid];
            let step = rng.random_range(0..product.route.len());
            let raw = product.raw_processing_time();
            let done_work = raw - self.remaining_work[pid][step];
            let stretch = rng.random_range(1.0..(product.flow_factor + 0.5));
            let release = -((done_work as f64) * stretch).round() as Minutes;
            let priority = draw_priority(&mut rng, product.priority_mix);
            let (lo, hi) = product.wafer_count_range;
            let wafers = rng.random_range(lo..=hi);
            let mut dedications = Vec::new();
            for s in &product.route[..step] {
                if s.dedication == Dedication::Bind {
                    let ms = &self.group_machines[s.group_id];
                    dedications.push((s.step_index, ms[rng.random_range(0..ms.len())]));
                }
            }
            let id = self.new_lot(pid, priority, release, wafers);
            let lot = self.lots.get_mut(&id).unwrap();
            lot.step_index = step;
            lot.dedications = dedications;
            lot.total_wait = (-release - done_work).max(0);
            self.arrive(id, 0);
        }
    }

    fn seed_processes(&mut self) {
        let sc = Arc::clone(&self.scenario);
        for (pid, p) in sc.products.iter().enumerate() {
            if p.release_rate > 0.0 {
                let dt = exp_minutes(&mut self.streams.release[pid], 1440.0 / p.release_rate);
                self.events.schedule(dt, EventKind::LotRelease { product: pid });
            }
        }
        for m in 0..self.machines.len() {
            let g = &sc.tool_groups[self.machines[m].group_id];
            if let Some(mtbf) = g.mtbf_mean {
                let dt = exp_minutes(&mut self.streams.breakdown[m], mtbf);
                self.events.schedule(dt, EventKind::Breakdown { machine: m });
            }
            if let Some(period) = g.maintenance_period {
                let mut r = rng::stream(self.seed, Stream::Maintenance(m));
                let offset = r.random_range(0..period);
                self.events.schedule(offset, EventKind::MaintenanceStart { machine: m });
            }
        }
    }

    fn new_lot(&mut self, product_id: usize, priority: PriorityClass, release: Minutes, wafers: u32) -> LotId {
        let sc = &self.scenario;
        let product = &sc.products[product_id];
        let due = release + (product.flow_factor * product.raw_processing_time() as f64).round() as Minutes;
        let id = self.next_lot_id;
        self.next_lot_id += 1;
        self.released += 1;
        let lot = Lot {
            lot_id: id,
            product_id,
            priority,
            weight: sc.priority_weights.get(priority),
            release_time: release,
            due_date: due,
            wafer_count: wafers,
            step_index: 0,
            queue_entry_time: release.max(0),
            total_wait: 0,
            completion_time: None,
            dedications: Vec::new(),
            cqt_deadline: None,
            location: LotLocation::InTransport,
        };
        self.trace.push(TraceRecord::Release { t: self.clock, lot: id, product: product_id, priority });
        self.lots.insert(id, lot);
        id
    }

    // ---- read access --------------------------------------------------

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn scenario_arc(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn lot(&self, id: LotId) -> Option<&Lot> {
        self.lots.get(&id)
    }

    pub fn wip_count(&self) -> usize {
        self.lots.len()
    }

    pub fn pending_events(&self) -> usize {
        self.events.len()
    }

    pub fn group_machines(&self, group: usize) -> &[MachineId] {
        &self.group_machines[group]
    }

    /// Current route step of a WIP lot.
    pub fn current_step(&self, lot: &Lot) -> &RouteStep {
        &self.scenario.products[lot.product_id].route[lot.step_index]
    }

    /// Sum of mean processing times from the lot's current step to the end.
    pub fn remaining_work(&self, lot: &Lot) -> Minutes {
        self.remaining_work[lot.product_id][lot.step_index]
    }

    /// Number of `reuse` steps still ahead of the lot (current step included).
    pub fn remaining_dedications(&self, lot: &Lot) -> usize {
        self.remaining_dedications[lot.product_id][lot.step_index]
    }

    /// Setup time machine `m` would need before running `step`.
    pub fn setup_time(&self, m: MachineId, step: &RouteStep) -> Minutes {
        let Some(id) = &step.setup_id else { return 0 };
        let g = self.scenario.group(step.group_id);
        let target = g.setup_index(id).expect("validated setup id");
        let mach = &self.machines[m];
        if mach.current_setup == Some(target) {
            if step.force_resetup {
                g.resetup_time
            } else {
                0
            }
        } else {
            g.changeover_time(mach.current_setup, target)
        }
    }

    /// Whether machine `m` can take `lot` right now, either idle or through a
    /// compatible open batch with room.
    fn machine_accepts(&self, m: MachineId, lot: &Lot) -> bool {
        let mach = &self.machines[m];
        match mach.status {
            MachineStatus::Idle => true,
            MachineStatus::Holding => {
                let cap = self.scenario.group(mach.group_id).batch_max;
                mach.batch_key == Some((lot.product_id, lot.step_index)) && mach.current_batch.len() < cap
            }
            _ => false,
        }
    }

    /// Machines that may serve the lot's current step now. A `reuse` step is
    /// restricted to the machine recorded at its bind step.
    pub fn candidate_machines(&self, lot: &Lot) -> Vec<MachineId> {
        let step = self.current_step(lot);
        if let Dedication::Reuse { bind_step } = step.dedication {
            if let Some(m) = lot.bound_machine(bind_step) {
                return if self.machine_accepts(m, lot) { vec![m] } else { Vec::new() };
            }
        }
        self.group_machines[step.group_id].iter().copied().filter(|&m| self.machine_accepts(m, lot)).collect()
    }

    fn is_legal(&self, lot: &Lot) -> bool {
        if lot.location != LotLocation::Queued {
            return false;
        }
        let step = self.current_step(lot);
        if let Dedication::Reuse { bind_step } = step.dedication {
            if let Some(m) = lot.bound_machine(bind_step) {
                return self.machine_accepts(m, lot);
            }
        }
        self.group_machines[step.group_id].iter().any(|&m| self.machine_accepts(m, lot))
    }

    /// Lots whose current operation can start now, ascending by id.
    pub fn legal_lots(&self) -> Vec<LotId> {
        let mut out = Vec::new();
        for (g, queue) in self.queues.iter().enumerate() {
            if queue.is_empty() {
                continue;
            }
            let open = self.group_machines[g]
                .iter()
                .any(|&m| matches!(self.machines[m].status, MachineStatus::Idle | MachineStatus::Holding));
            if !open {
                continue;
            }
            out.extend(queue.iter().copied().filter(|id| self.is_legal(&self.lots[id])));
        }
        out.sort_unstable();
        out
    }

    // ---- decisions ------------------------------------------------------

    /// Stable sort of the agent's order by (active CQT, priority class), both
    /// descending; the agent's order breaks the remaining ties.
    pub fn apply_hierarchy(&self, agent_order: &[LotId]) -> Result<Vec<LotId>> {
        let legal = self.legal_lots();
        let mut sorted = agent_order.to_vec();
        sorted.sort_unstable();
        if sorted != legal {
            return Err(Error::NotPermutation(format!(
                "got {} lots, expected a permutation of {} legal lots",
                agent_order.len(),
                legal.len()
            )));
        }
        Ok(hierarchy_order(agent_order, |id| {
            let lot = &self.lots[&id];
            (lot.has_active_cqt(), lot.priority)
        }))
    }

    /// Machine for a legal lot: (1) the dedicated machine, (2) for setup-free
    /// steps a machine without setup, else the longest-waiting machine, (3) for
    /// steps with a setup a machine already holding it, else the one with the
    /// smallest setup time. Open compatible batches are joined first.
    pub fn allocate(&self, lot_id: LotId) -> Result<MachineId> {
        let lot = self.lots.get(&lot_id).ok_or(Error::NotLegal(lot_id))?;
        if !self.is_legal(lot) {
            return Err(Error::NotLegal(lot_id));
        }
        let step = self.current_step(lot);
        let cands = self.candidate_machines(lot);
        if let Dedication::Reuse { bind_step } = step.dedication {
            if let Some(m) = lot.bound_machine(bind_step) {
                return Ok(m);
            }
        }
        if let Some(&m) = cands.iter().find(|&&m| self.machines[m].status == MachineStatus::Holding) {
            return Ok(m);
        }
        let longest_waiting = |pool: &mut dyn Iterator<Item = MachineId>| {
            pool.min_by_key(|&m| (self.machines[m].idle_since, m)).expect("non-empty candidate pool")
        };
        let chosen = match &step.setup_id {
            None => {
                let mut plain = cands.iter().copied().filter(|&m| self.machines[m].current_setup.is_none()).peekable();
                if plain.peek().is_some() {
                    longest_waiting(&mut plain)
                } else {
                    longest_waiting(&mut cands.iter().copied())
                }
            }
            Some(id) => {
                let target = self.scenario.group(step.group_id).setup_index(id);
                let mut holding =
                    cands.iter().copied().filter(|&m| self.machines[m].current_setup == target).peekable();
                if holding.peek().is_some() {
                    longest_waiting(&mut holding)
                } else {
                    cands.iter().copied().min_by_key(|&m| (self.setup_time(m, step), m)).expect("non-empty")
                }
            }
        };
        Ok(chosen)
    }

    /// Starts lots in the given order while capacity remains, then advances
    /// the clock to the next decision point (or the horizon).
    pub fn dispatch_step(&mut self, ordered: &[LotId]) {
        if self.done {
            return;
        }
        self.decisions += 1;
        if self.trace.enabled() {
            self.trace.push(TraceRecord::Decision { t: self.clock, order: ordered.to_vec() });
        }
        let t = self.clock;
        for (pos, &id) in ordered.iter().enumerate() {
            let Some(lot) = self.lots.get(&id) else { continue };
            if !self.is_legal(lot) {
                continue;
            }
            let m = self.allocate(id).expect("legal lot has a machine");
            let group = self.scenario.group(self.machines[m].group_id);
            let (bmin, bmax) = (group.batch_min, group.batch_max);
            if self.machines[m].status == MachineStatus::Holding {
                self.take_from_queue(id, LotLocation::Holding(m));
                self.machines[m].current_batch.push(id);
                if self.machines[m].current_batch.len() >= bmin {
                    let lots = std::mem::take(&mut self.machines[m].current_batch);
                    self.start_op(m, lots, t);
                }
            } else if bmax > 1 {
                let key = (lot.product_id, lot.step_index);
                let mut batch = vec![id];
                for &other in &ordered[pos + 1..] {
                    if batch.len() >= bmax {
                        break;
                    }
                    let Some(o) = self.lots.get(&other) else { continue };
                    if o.location == LotLocation::Queued
                        && (o.product_id, o.step_index) == key
                        && self.candidate_machines(o).contains(&m)
                    {
                        batch.push(other);
                    }
                }
                if batch.len() >= bmin {
                    self.start_op(m, batch, t);
                } else {
                    self.hold(m, batch, key, t);
                }
            } else {
                self.start_op(m, vec![id], t);
            }
        }
        self.advance();
    }

    fn take_from_queue(&mut self, id: LotId, to: LotLocation) {
        let lot = self.lots.get_mut(&id).unwrap();
        let group = self.scenario.products[lot.product_id].route[lot.step_index].group_id;
        lot.location = to;
        self.queues[group].remove(&id);
    }

    fn hold(&mut self, m: MachineId, lots: Vec<LotId>, key: (usize, usize), t: Minutes) {
        for &id in &lots {
            self.take_from_queue(id, LotLocation::Holding(m));
        }
        let p = self.scenario.step(key.0, key.1).mean_proc_time;
        let mach = &mut self.machines[m];
        mach.status = MachineStatus::Holding;
        mach.current_batch = lots;
        mach.batch_key = Some(key);
        mach.token += 1;
        let token = mach.token;
        self.events.schedule(t + (p / 2).max(1), EventKind::BatchTimeout { machine: m, token });
    }

    fn start_op(&mut self, m: MachineId, lots: Vec<LotId>, t: Minutes) {
        let first = &self.lots[&lots[0]];
        let (pid, si) = (first.product_id, first.step_index);
        let sc = Arc::clone(&self.scenario);
        let step = &sc.products[pid].route[si];
        let group = sc.group(step.group_id);
        let setup = self.setup_time(m, step);
        let proc = if step.per_wafer {
            let wafers = lots.iter().map(|id| self.lots[id].wafer_count).max().unwrap_or(NOMINAL_WAFERS);
            ((step.mean_proc_time as f64 * wafers as f64 / NOMINAL_WAFERS as f64).round() as Minutes).max(1)
        } else {
            step.mean_proc_time
        };
        let end = t + setup + group.load_time + proc + group.unload_time;
        for &id in &lots {
            if self.lots[&id].location == LotLocation::Queued {
                self.take_from_queue(id, LotLocation::Processing(m));
            }
            let lot = self.lots.get_mut(&id).unwrap();
            lot.location = LotLocation::Processing(m);
            lot.total_wait += (t - lot.queue_entry_time).max(0);
            if let Some(deadline) = lot.cqt_deadline.take() {
                if t > deadline {
                    self.cqt_violations += 1;
                    self.trace.push(TraceRecord::CqtViolation { t, lot: id, step: si, late_by: t - deadline });
                }
            }
            if step.dedication == Dedication::Bind {
                lot.dedications.retain(|(s, _)| *s != si);
                lot.dedications.push((si, m));
            } else if let Dedication::Reuse { bind_step } = step.dedication {
                if lot.bound_machine(bind_step).is_none() {
                    lot.dedications.push((bind_step, m));
                }
            }
        }
        if let Some(id) = &step.setup_id {
            self.machines[m].current_setup = group.setup_index(id);
        }
        if self.trace.enabled() {
            self.trace.push(TraceRecord::OpStart { t, machine: m, lots: lots.clone(), step: si, end });
        }
        let mach = &mut self.machines[m];
        mach.status = MachineStatus::Busy;
        mach.busy_until = Some(end);
        mach.current_batch = lots;
        mach.batch_key = Some((pid, si));
        mach.token += 1;
        let token = mach.token;
        self.events.schedule(end, EventKind::OpComplete { machine: m, token });
    }

    // ---- event processing -----------------------------------------------

    /// Pops events until some lot is legal or the horizon is reached.
    /// All events sharing a timestamp are handled before legality is checked.
    pub fn advance(&mut self) {
        while !self.done {
            match self.events.peek_time() {
                Some(next) if next < self.horizon => {
                    debug_assert!(next >= self.clock);
                    self.clock = next;
                    while self.events.peek_time() == Some(next) {
                        let ev = self.events.pop().unwrap();
                        if self.trace.level >= TraceLevel::Events {
                            self.trace.records.push(TraceRecord::Event { t: next, event: ev.kind });
                        }
                        self.handle(ev.kind);
                    }
                    if self.has_legal_lot() {
                        return;
                    }
                }
                _ => {
                    self.clock = self.clock.max(self.horizon);
                    self.done = true;
                }
            }
        }
    }

    /// Brings a fresh state to its first decision point if none exists at clock 0.
    pub fn settle(&mut self) {
        if !self.done && !self.has_legal_lot() {
            self.advance();
        }
    }

    fn has_legal_lot(&self) -> bool {
        self.queues.iter().enumerate().any(|(g, q)| {
            !q.is_empty()
                && self.group_machines[g]
                    .iter()
                    .any(|&m| matches!(self.machines[m].status, MachineStatus::Idle | MachineStatus::Holding))
                && q.iter().any(|id| self.is_legal(&self.lots[id]))
        })
    }

    fn handle(&mut self, kind: EventKind) {
        let t = self.clock;
        match kind {
            EventKind::LotRelease { product } => {
                let sc = Arc::clone(&self.scenario);
                let p = &sc.products[product];
                let rng = &mut self.streams.release[product];
                let priority = draw_priority(rng, p.priority_mix);
                let (lo, hi) = p.wafer_count_range;
                let wafers = rng.random_range(lo..=hi);
                let next = t + exp_minutes(rng, 1440.0 / p.release_rate);
                self.events.schedule(next, EventKind::LotRelease { product });
                let id = self.new_lot(product, priority, t, wafers);
                self.arrive(id, t);
            }
            EventKind::TransportArrival { lot } => self.arrive(lot, t),
            EventKind::OpComplete { machine, token } => {
                if self.machines[machine].token != token {
                    return;
                }
                let lots = std::mem::take(&mut self.machines[machine].current_batch);
                {
                    let mach = &mut self.machines[machine];
                    mach.status = MachineStatus::Idle;
                    mach.idle_since = t;
                    mach.busy_until = None;
                    mach.batch_key = None;
                }
                self.trace.push(TraceRecord::OpEnd { t, machine });
                for id in lots {
                    self.complete_step(id, t);
                }
                if self.machines[machine].pending_maintenance {
                    self.start_maintenance(machine, t);
                }
            }
            EventKind::BatchTimeout { machine, token } => {
                let mach = &self.machines[machine];
                if mach.status == MachineStatus::Holding && mach.token == token {
                    let lots = std::mem::take(&mut self.machines[machine].current_batch);
                    self.start_op(machine, lots, t);
                }
            }
            EventKind::Breakdown { machine } => {
                let g = self.machines[machine].group_id;
                let (mtbf, mttr) = {
                    let grp = self.scenario.group(g);
                    (grp.mtbf_mean.unwrap(), grp.mttr_mean.unwrap())
                };
                let status = self.machines[machine].status;
                let rng = &mut self.streams.breakdown[machine];
                if matches!(status, MachineStatus::Down | MachineStatus::Maintenance) {
                    let dt = exp_minutes(rng, mtbf);
                    self.events.schedule(t + dt, EventKind::Breakdown { machine });
                    return;
                }
                let repair = exp_minutes(rng, mttr);
                self.events.schedule(t + repair, EventKind::Repair { machine });
                match status {
                    MachineStatus::Busy => {
                        // Preempt-resume: the running operation finishes `repair` later.
                        let mach = &mut self.machines[machine];
                        let end = mach.busy_until.unwrap() + repair;
                        mach.busy_until = Some(end);
                        mach.token += 1;
                        let token = mach.token;
                        self.events.schedule(end, EventKind::OpComplete { machine, token });
                    }
                    MachineStatus::Holding => self.release_open_batch(machine, t),
                    _ => {}
                }
                self.machines[machine].status = MachineStatus::Down;
            }
            EventKind::Repair { machine } => {
                let g = self.machines[machine].group_id;
                let mtbf = self.scenario.group(g).mtbf_mean.unwrap();
                let dt = exp_minutes(&mut self.streams.breakdown[machine], mtbf);
                self.events.schedule(t + dt, EventKind::Breakdown { machine });
                let mach = &mut self.machines[machine];
                if mach.in_flight() {
                    mach.status = MachineStatus::Busy;
                } else {
                    mach.status = MachineStatus::Idle;
                    mach.idle_since = t;
                    if mach.pending_maintenance {
                        self.start_maintenance(machine, t);
                    }
                }
            }
            EventKind::MaintenanceStart { machine } => {
                let period = self.scenario.group(self.machines[machine].group_id).maintenance_period.unwrap();
                self.events.schedule(t + period, EventKind::MaintenanceStart { machine });
                if self.machines[machine].status == MachineStatus::Idle {
                    self.start_maintenance(machine, t);
                } else {
                    self.machines[machine].pending_maintenance = true;
                }
            }
            EventKind::MaintenanceEnd { machine } => {
                let mach = &mut self.machines[machine];
                mach.status = MachineStatus::Idle;
                mach.idle_since = t;
            }
        }
    }

    fn start_maintenance(&mut self, m: MachineId, t: Minutes) {
        let dur = self.scenario.group(self.machines[m].group_id).maintenance_duration.unwrap();
        let mach = &mut self.machines[m];
        mach.pending_maintenance = false;
        mach.status = MachineStatus::Maintenance;
        self.events.schedule(t + dur, EventKind::MaintenanceEnd { machine: m });
    }

    fn release_open_batch(&mut self, m: MachineId, _t: Minutes) {
        let lots = std::mem::take(&mut self.machines[m].current_batch);
        self.machines[m].batch_key = None;
        self.machines[m].token += 1;
        for id in lots {
            let lot = self.lots.get_mut(&id).unwrap();
            lot.location = LotLocation::Queued;
            let group = self.scenario.products[lot.product_id].route[lot.step_index].group_id;
            self.queues[group].insert(id);
        }
    }

    fn complete_step(&mut self, id: LotId, t: Minutes) {
        let sc = Arc::clone(&self.scenario);
        let lot = self.lots.get_mut(&id).unwrap();
        let route = &sc.products[lot.product_id].route;
        let step = &route[lot.step_index];
        if let Some(limit) = step.cqt_limit_to_next {
            lot.cqt_deadline = Some(t + limit);
        }
        let from_family = sc.group(step.group_id).family_id;
        lot.step_index += 1;
        if lot.step_index == route.len() {
            self.finish(id, t);
            return;
        }
        lot.location = LotLocation::InTransport;
        let to_family = sc.group(route[lot.step_index].group_id).family_id;
        let delay = sc.transport_delay(from_family, to_family);
        self.events.schedule(t + delay, EventKind::TransportArrival { lot: id });
    }

    /// Lot reaches its current step: resolve metrology skips, then queue.
    fn arrive(&mut self, id: LotId, t: Minutes) {
        let sc = Arc::clone(&self.scenario);
        loop {
            let lot = self.lots.get_mut(&id).unwrap();
            let route = &sc.products[lot.product_id].route;
            let step = &route[lot.step_index];
            if step.skip_probability > 0.0 && self.streams.skip.random_bool(step.skip_probability) {
                let si = lot.step_index;
                lot.step_index += 1;
                self.trace.push(TraceRecord::Skip { t, lot: id, step: si });
                let lot = &self.lots[&id];
                if lot.step_index == route.len() {
                    self.finish(id, t);
                    return;
                }
                continue;
            }
            lot.location = LotLocation::Queued;
            lot.queue_entry_time = t;
            self.queues[step.group_id].insert(id);
            return;
        }
    }

    fn finish(&mut self, id: LotId, t: Minutes) {
        let mut lot = self.lots.remove(&id).unwrap();
        lot.completion_time = Some(t);
        lot.location = LotLocation::Finished;
        lot.cqt_deadline = None;
        self.trace.push(TraceRecord::LotDone { t, lot: id, on_time: t <= lot.due_date });
        self.finished.push(lot);
    }
}

/// Stable reorder of `order` by (active CQT, priority class), both descending.
pub fn hierarchy_order(order: &[LotId], tier: impl Fn(LotId) -> (bool, PriorityClass)) -> Vec<LotId> {
    let mut keyed: Vec<((bool, PriorityClass), LotId)> = order.iter().map(|&id| (tier(id), id)).collect();
    keyed.sort_by(|a, b| b.0.cmp(&a.0));
    keyed.into_iter().map(|(_, id)| id).collect()
}

fn draw_priority(rng: &mut ChaCha8Rng, mix: crate::scenario::PriorityMix) -> PriorityClass {
    let x: f64 = rng.random();
    if x < mix.super_hot {
        PriorityClass::SuperHot
    } else if x < mix.super_hot + mix.hot {
        PriorityClass::Hot
    } else {
        PriorityClass::Regular
    }
}

fn exp_minutes(rng: &mut ChaCha8Rng, mean: f64) -> Minutes {
    let d = Exp::new(1.0 / mean).expect("positive mean");
    (d.sample(rng).round() as Minutes).max(1)
}

/// Runs a full episode: dispatcher order, hierarchy, allocation, repeat
/// until the horizon. Deterministic in (scenario, seed, dispatcher).
pub fn run(
    scenario: Arc<Scenario>,
    seed: u64,
    dispatcher: &dyn Dispatcher,
    opts: SimOptions,
) -> Result<FabState> {
    run_observed(scenario, seed, dispatcher, opts, |_, _| {})
}

/// [`run`] with a callback invoked at every decision point, before the
/// dispatcher sees the legal lots.
pub fn run_observed(
    scenario: Arc<Scenario>,
    seed: u64,
    dispatcher: &dyn Dispatcher,
    opts: SimOptions,
    mut observe: impl FnMut(&FabState, &[LotId]),
) -> Result<FabState> {
    let mut st = FabState::init(scenario, seed, opts);
    st.settle();
    while !st.is_done() {
        let legal = st.legal_lots();
        observe(&st, &legal);
        let order = dispatcher.order(&st, &legal);
        let ordered = st.apply_hierarchy(&order)?;
        st.dispatch_step(&ordered);
    }
    Ok(st)
}
