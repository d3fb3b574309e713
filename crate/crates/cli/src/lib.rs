//! Multi-seed benchmark harness and report rendering.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use fabsched::objective::{kpis, LotType};
use fabsched::scenario::PriorityClass;
use fabsched::sim::{self, FabState, LotId, SimOptions, TraceLevel};
use fabsched::{
    Dispatcher, HeuristicDispatcher, Normalizer, ObjectiveConfig, PolicyDispatcher, PolicyParams, Scenario,
    TieBreakRule, MINUTES_PER_DAY,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DispatcherSpec {
    Rule(TieBreakRule),
    Agent(PathBuf),
}

impl DispatcherSpec {
    pub fn label(&self) -> String {
        match self {
            Self::Rule(r) => r.name().to_string(),
            Self::Agent(p) => format!("agent:{}", p.display()),
        }
    }
}

impl FromStr for DispatcherSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("agent:") {
            if path.is_empty() {
                return Err("agent dispatcher needs a parameter file: agent:<path>".into());
            }
            return Ok(Self::Agent(PathBuf::from(path)));
        }
        s.parse::<TieBreakRule>().map(Self::Rule).map_err(|e| format!("{e}, or agent:<params>"))
    }
}

pub fn parse_dispatchers(list: &str) -> Result<Vec<DispatcherSpec>, String> {
    list.split(',').map(|s| s.trim().parse()).collect()
}

/// Loads the dispatcher behind a spec; agents need a normalizer.
pub fn build_dispatcher(spec: &DispatcherSpec, normalizer: Option<&Normalizer>) -> Result<Box<dyn Dispatcher>> {
    Ok(match spec {
        DispatcherSpec::Rule(r) => Box::new(HeuristicDispatcher(*r)),
        DispatcherSpec::Agent(path) => {
            let params = PolicyParams::load(path).with_context(|| format!("loading policy parameters {}", path.display()))?;
            let norm = normalizer.context("agent dispatchers need --normalizer")?;
            let mut d = PolicyDispatcher::new(params, norm.clone());
            d.label = spec.label();
            Box::new(d)
        }
    })
}

/// Records the wall-clock time of every `order` call.
pub struct TimedDispatcher<'a> {
    inner: &'a dyn Dispatcher,
    samples: Mutex<Vec<f64>>,
}

impl<'a> TimedDispatcher<'a> {
    pub fn new(inner: &'a dyn Dispatcher) -> Self {
        Self { inner, samples: Mutex::new(Vec::new()) }
    }

    /// Median latency in microseconds, 0 when never called.
    pub fn median_us(&self) -> f64 {
        let mut v = self.samples.lock().expect("latency samples").clone();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    }
}

impl Dispatcher for TimedDispatcher<'_> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn order(&self, state: &FabState, legal: &[LotId]) -> Vec<LotId> {
        let t = Instant::now();
        let out = self.inner.order(state, legal);
        self.samples.lock().expect("latency samples").push(t.elapsed().as_secs_f64() * 1e6);
        out
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub scenario: Arc<Scenario>,
    pub dispatchers: Vec<DispatcherSpec>,
    pub normalizer: Option<Normalizer>,
    pub seeds: usize,
    pub base_seed: u64,
    pub horizon_days: i64,
    pub initial_wip: usize,
}

impl BenchmarkConfig {
    pub fn new(scenario: Arc<Scenario>, dispatchers: Vec<DispatcherSpec>) -> Self {
        Self { scenario, dispatchers, normalizer: None, seeds: 20, base_seed: 0, horizon_days: 182, initial_wip: 0 }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.base_seed + i).collect()
    }
}

/// One (dispatcher, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailRow {
    pub dispatcher: String,
    pub seed: u64,
    pub cost_finished: f64,
    pub cost_wip: f64,
    pub cost_total: f64,
    pub finished: usize,
    pub wip: usize,
    pub cqt_violations: usize,
    pub decisions: usize,
    pub median_decision_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailKpiRow {
    pub dispatcher: String,
    pub seed: u64,
    pub lot_type: String,
    pub on_time_pct: Option<f64>,
    pub cycle_days: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiCsvRow {
    pub dispatcher: String,
    pub lot_type: String,
    pub on_time_mean: Option<f64>,
    pub on_time_std: Option<f64>,
    pub cycle_mean: Option<f64>,
    pub cycle_std: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCsvRow {
    pub dispatcher: String,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub finished_cost_mean: f64,
    pub wip_cost_mean: f64,
    pub regular_on_time_mean: Option<f64>,
    pub median_decision_us: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateReport {
    pub seeds: Vec<u64>,
    pub costs: Vec<CostCsvRow>,
    pub kpis: Vec<KpiCsvRow>,
    pub details: Vec<DetailRow>,
    pub detail_kpis: Vec<DetailKpiRow>,
}

impl AggregateReport {
    pub fn cost(&self, dispatcher: &str) -> Option<&CostCsvRow> {
        self.costs.iter().find(|c| c.dispatcher == dispatcher)
    }

    /// Per-seed costs of one dispatcher, in seed order.
    pub fn seed_costs(&self, dispatcher: &str) -> Vec<(u64, f64)> {
        self.details.iter().filter(|d| d.dispatcher == dispatcher).map(|d| (d.seed, d.cost_total)).collect()
    }
}

/// `(mean, sample std)`; the std of a single value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Cell {
    detail: DetailRow,
    kpis: Vec<DetailKpiRow>,
}

fn run_cell(cfg: &BenchmarkConfig, d: &dyn Dispatcher, name: &str, seed: u64) -> Result<Cell> {
    let timed = TimedDispatcher::new(d);
    let opts = SimOptions::new(cfg.horizon_days * MINUTES_PER_DAY).with_wip(cfg.initial_wip).with_trace(TraceLevel::Off);
    let st = sim::run(cfg.scenario.clone(), seed, &timed, opts)?;
    let report = kpis(&st, &ObjectiveConfig::from_scenario(&cfg.scenario));
    let detail = DetailRow {
        dispatcher: name.to_string(),
        seed,
        cost_finished: report.cost.finished,
        cost_wip: report.cost.wip,
        cost_total: report.cost.total,
        finished: report.finished,
        wip: report.wip,
        cqt_violations: report.cqt_violations,
        decisions: st.decisions,
        median_decision_us: timed.median_us(),
    };
    let kpis = report
        .rows
        .iter()
        .map(|r| DetailKpiRow {
            dispatcher: name.to_string(),
            seed,
            lot_type: r.lot_type.label(),
            on_time_pct: r.on_time_pct,
            cycle_days: r.cycle_days,
            count: r.count,
        })
        .collect();
    Ok(Cell { detail, kpis })
}

/// Runs every dispatcher on the same seed list and aggregates over seeds.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<AggregateReport> {
    if cfg.seeds == 0 {
        bail!("seed count must be >= 1");
    }
    let dispatchers: Vec<Box<dyn Dispatcher>> =
        cfg.dispatchers.iter().map(|s| build_dispatcher(s, cfg.normalizer.as_ref())).collect::<Result<_>>()?;
    let names: Vec<String> = cfg.dispatchers.iter().map(|s| s.label()).collect();
    let seeds = cfg.seed_list();
    let jobs: Vec<(usize, u64)> = (0..dispatchers.len()).flat_map(|k| seeds.iter().map(move |&s| (k, s))).collect();
    let cells: Vec<Cell> =
        jobs.par_iter().map(|&(k, seed)| run_cell(cfg, dispatchers[k].as_ref(), &names[k], seed)).collect::<Result<_>>()?;
    let mut details = Vec::with_capacity(cells.len());
    let mut detail_kpis = Vec::new();
    for c in cells {
        details.push(c.detail);
        detail_kpis.extend(c.kpis);
    }
    Ok(aggregate(seeds, &names, details, detail_kpis))
}

/// Builds the summary tables from per-seed rows only.
pub fn aggregate(seeds: Vec<u64>, names: &[String], details: Vec<DetailRow>, detail_kpis: Vec<DetailKpiRow>) -> AggregateReport {
    let mut costs = Vec::new();
    let mut kpi_rows = Vec::new();
    for name in names {
        let mine: Vec<&DetailRow> = details.iter().filter(|d| &d.dispatcher == name).collect();
        let totals: Vec<f64> = mine.iter().map(|d| d.cost_total).collect();
        let (cost_mean, cost_std) = mean_std(&totals);
        let fin: Vec<f64> = mine.iter().map(|d| d.cost_finished).collect();
        let wip: Vec<f64> = mine.iter().map(|d| d.cost_wip).collect();
        let lat: Vec<f64> = mine.iter().map(|d| d.median_decision_us).collect();

        let my_kpis: Vec<&DetailKpiRow> = detail_kpis.iter().filter(|k| &k.dispatcher == name).collect();
        let regular: Vec<f64> = mine
            .iter()
            .filter_map(|d| {
                let rows: Vec<&&DetailKpiRow> = my_kpis
                    .iter()
                    .filter(|k| k.seed == d.seed && LotType::parse(&k.lot_type).is_some_and(|t| t.priority == PriorityClass::Regular))
                    .collect();
                let n: usize = rows.iter().filter(|r| r.on_time_pct.is_some()).map(|r| r.count).sum();
                (n > 0).then(|| rows.iter().filter_map(|r| r.on_time_pct.map(|p| p * r.count as f64)).sum::<f64>() / n as f64)
            })
            .collect();
        costs.push(CostCsvRow {
            dispatcher: name.clone(),
            cost_mean,
            cost_std,
            finished_cost_mean: mean_std(&fin).0,
            wip_cost_mean: mean_std(&wip).0,
            regular_on_time_mean: (!regular.is_empty()).then(|| mean_std(&regular).0),
            median_decision_us: mean_std(&lat).0,
            seeds: mine.len(),
        });

        let mut types: Vec<String> = Vec::new();
        for k in &my_kpis {
            if !types.contains(&k.lot_type) {
                types.push(k.lot_type.clone());
            }
        }
        for t in types {
            let rows: Vec<&&DetailKpiRow> = my_kpis.iter().filter(|k| k.lot_type == t).collect();
            let on: Vec<f64> = rows.iter().filter_map(|r| r.on_time_pct).collect();
            let cyc: Vec<f64> = rows.iter().filter_map(|r| r.cycle_days).collect();
            let opt = |xs: &[f64]| if xs.is_empty() { (None, None) } else { let (m, s) = mean_std(xs); (Some(m), Some(s)) };
            let (on_time_mean, on_time_std) = opt(&on);
            let (cycle_mean, cycle_std) = opt(&cyc);
            kpi_rows.push(KpiCsvRow {
                dispatcher: name.clone(),
                lot_type: t,
                on_time_mean,
                on_time_std,
                cycle_mean,
                cycle_std,
                count: rows.iter().map(|r| r.count).sum(),
            });
        }
    }
    AggregateReport { seeds, costs, kpis: kpi_rows, details, detail_kpis }
}

pub const KPIS_HEADER: &str = "dispatcher,lot_type,on_time_mean,on_time_std,cycle_mean,cycle_std,count";
pub const COST_HEADER: &str =
    "dispatcher,cost_mean,cost_std,finished_cost_mean,wip_cost_mean,regular_on_time_mean,median_decision_us,seeds";

fn write_csv<T: Serialize>(path: &Path, header: &str, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Writes `kpis.csv`, `cost.csv`, `detail.csv`, `detail_kpis.csv` and
/// `report.txt` into `dir`.
pub fn write_report(r: &AggregateReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join("kpis.csv"), KPIS_HEADER, &r.kpis)?;
    write_csv(&dir.join("cost.csv"), COST_HEADER, &r.costs)?;
    write_csv(
        &dir.join("detail.csv"),
        "dispatcher,seed,cost_finished,cost_wip,cost_total,finished,wip,cqt_violations,decisions,median_decision_us",
        &r.details,
    )?;
    write_csv(&dir.join("detail_kpis.csv"), "dispatcher,seed,lot_type,on_time_pct,cycle_days,count", &r.detail_kpis)?;
    std::fs::write(dir.join("report.txt"), render_table(r))?;
    Ok(())
}

/// Re-aggregates a report directory from its detail files.
pub fn read_report(dir: &Path) -> Result<AggregateReport> {
    let details: Vec<DetailRow> = read_csv(&dir.join("detail.csv"))?;
    let detail_kpis: Vec<DetailKpiRow> = read_csv(&dir.join("detail_kpis.csv"))?;
    let mut names = Vec::new();
    let mut seeds = Vec::new();
    for d in &details {
        if !names.contains(&d.dispatcher) {
            names.push(d.dispatcher.clone());
        }
        if !seeds.contains(&d.seed) {
            seeds.push(d.seed);
        }
    }
    Ok(aggregate(seeds, &names, details, detail_kpis))
}

fn fmt_pm(m: Option<f64>, s: Option<f64>) -> String {
    match (m, s) {
        (Some(m), Some(s)) => format!("{m:.2} ± {s:.2}"),
        _ => "-".into(),
    }
}

/// Priority-class blocks with one row per product; one column per dispatcher.
pub fn render_table(r: &AggregateReport) -> String {
    let names: Vec<&str> = r.costs.iter().map(|c| c.dispatcher.as_str()).collect();
    let mut out = String::new();
    let _ = writeln!(out, "seeds: {}", r.seeds.len());
    let _ = write!(out, "{:<22}", "");
    for n in &names {
        let _ = write!(out, " | {:^34}", n);
    }
    out.push('\n');
    let _ = write!(out, "{:<22}", "lots");
    for _ in &names {
        let _ = write!(out, " | {:>16} {:>17}", "on-time %", "cycle (days)");
    }
    out.push('\n');
    let mut products: Vec<usize> = r.kpis.iter().filter_map(|k| LotType::parse(&k.lot_type).map(|t| t.product)).collect();
    products.sort_unstable();
    products.dedup();
    for class in PriorityClass::ALL.iter().rev() {
        let _ = writeln!(out, "{}", class_title(*class));
        for &p in &products {
            let label = LotType { product: p, priority: *class }.label();
            let _ = write!(out, "  {:<20}", format!("product {p}"));
            for n in &names {
                let row = r.kpis.iter().find(|k| k.dispatcher == *n && k.lot_type == label);
                let (on, cyc) = row.map_or(("-".into(), "-".into()), |k| {
                    (fmt_pm(k.on_time_mean, k.on_time_std), fmt_pm(k.cycle_mean, k.cycle_std))
                });
                let _ = write!(out, " | {on:>16} {cyc:>17}");
            }
            out.push('\n');
        }
    }
    let _ = write!(out, "{:<22}", "cost");
    for c in &r.costs {
        let _ = write!(out, " | {:>34}", format!("{:.2} ± {:.2}", c.cost_mean, c.cost_std));
    }
    out.push('\n');
    let _ = write!(out, "{:<22}", "median decision (us)");
    for c in &r.costs {
        let _ = write!(out, " | {:>34}", format!("{:.1}", c.median_decision_us));
    }
    out.push('\n');
    out
}

fn class_title(c: PriorityClass) -> &'static str {
    match c {
        PriorityClass::SuperHot => "Super Hot Lots",
        PriorityClass::Hot => "Hot Lots",
        PriorityClass::Regular => "Regular Lots",
    }
}
