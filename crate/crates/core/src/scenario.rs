//! Static fab description: tool families, tool groups, product routes and the
//! stochastic processes the simulator draws from.
//!
//! Scenarios are stored as a single JSON document with a mandatory
//! `"schema_version": 1` field. See `docs/scenario.md` for the layout.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Minutes;

pub const SCHEMA_VERSION: u32 = 1;

/// Nominal wafers per lot used to scale per-wafer processing times.
pub const NOMINAL_WAFERS: u32 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorityClass {
    Regular,
    Hot,
    SuperHot,
}

impl PriorityClass {
    pub const ALL: [PriorityClass; 3] = [Self::Regular, Self::Hot, Self::SuperHot];

    /// Dispatch tier; larger is more urgent.
    pub fn rank(self) -> u8 {
        match self {
            Self::Regular => 0,
            Self::Hot => 1,
            Self::SuperHot => 2,
        }
    }

    pub fn index(self) -> usize {
        self.rank() as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Regular => "regular",
            Self::Hot => "hot",
            Self::SuperHot => "super-hot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

impl fmt::Display for PriorityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-class weights `w_l` used by the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityWeights {
    pub regular: f64,
    pub hot: f64,
    pub super_hot: f64,
}

impl Default for PriorityWeights {
    fn default() -> Self {
        Self { regular: 1.0, hot: 2.0, super_hot: 4.0 }
    }
}

impl PriorityWeights {
    pub fn get(&self, class: PriorityClass) -> f64 {
        match class {
            PriorityClass::Regular => self.regular,
            PriorityClass::Hot => self.hot,
            PriorityClass::SuperHot => self.super_hot,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { regular: self.regular * k, hot: self.hot * k, super_hot: self.super_hot * k }
    }
}

/// Probabilities of releasing a lot as regular, hot or super-hot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityMix {
    pub regular: f64,
    pub hot: f64,
    pub super_hot: f64,
}

impl PriorityMix {
    pub fn sum(&self) -> f64 {
        self.regular + self.hot + self.super_hot
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolFamily {
    pub family_id: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolGroup {
    pub group_id: usize,
    pub family_id: usize,
    #[serde(default)]
    pub name: String,
    pub machine_count: usize,
    /// Setup identifiers. Machines start in the first listed setup.
    #[serde(default)]
    pub setups: Vec<String>,
    /// `changeover[from][to]` in minutes, square over `setups`.
    #[serde(default)]
    pub changeover: Vec<Vec<Minutes>>,
    /// Duration of a forced re-setup when the machine already holds the setup.
    #[serde(default)]
    pub resetup_time: Minutes,
    #[serde(default = "one")]
    pub batch_min: usize,
    #[serde(default = "one")]
    pub batch_max: usize,
    #[serde(default)]
    pub load_time: Minutes,
    #[serde(default)]
    pub unload_time: Minutes,
    #[serde(default)]
    pub mtbf_mean: Option<f64>,
    #[serde(default)]
    pub mttr_mean: Option<f64>,
    #[serde(default)]
    pub maintenance_period: Option<Minutes>,
    #[serde(default)]
    pub maintenance_duration: Option<Minutes>,
}

fn one() -> usize {
    1
}

impl ToolGroup {
    pub fn is_batch(&self) -> bool {
        self.batch_max > 1
    }

    pub fn setup_index(&self, id: &str) -> Option<usize> {
        self.setups.iter().position(|s| s == id)
    }

    /// Changeover duration between setup indices; `from = None` is a machine
    /// without any setup, which costs the largest changeover into `to`.
    pub fn changeover_time(&self, from: Option<usize>, to: usize) -> Minutes {
        match from {
            Some(f) => self.changeover[f][to],
            None => self.changeover.iter().map(|row| row[to]).max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dedication {
    #[default]
    None,
    /// Record the machine that serves this step.
    Bind,
    /// Must run on the machine recorded at `bind_step`.
    Reuse { bind_step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteStep {
    pub step_index: usize,
    pub group_id: usize,
    pub mean_proc_time: Minutes,
    #[serde(default)]
    pub per_wafer: bool,
    #[serde(default)]
    pub setup_id: Option<String>,
    #[serde(default)]
    pub force_resetup: bool,
    #[serde(default)]
    pub cqt_limit_to_next: Option<Minutes>,
    #[serde(default)]
    pub metrology: bool,
    #[serde(default)]
    pub skip_probability: f64,
    #[serde(default)]
    pub dedication: Dedication,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub product_id: usize,
    pub route: Vec<RouteStep>,
    /// Mean lots released per day.
    pub release_rate: f64,
    pub priority_mix: PriorityMix,
    pub flow_factor: f64,
    /// Inclusive wafer count interval.
    pub wafer_count_range: (u32, u32),
}

impl Product {
    /// Sum of mean processing times over the whole route.
    pub fn raw_processing_time(&self) -> Minutes {
        self.route.iter().map(|s| s.mean_proc_time).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub families: Vec<ToolFamily>,
    pub tool_groups: Vec<ToolGroup>,
    pub products: Vec<Product>,
    /// Minutes between family pairs, `[from][to]`.
    pub transport_delay_matrix: Vec<Vec<Minutes>>,
    #[serde(default)]
    pub priority_weights: PriorityWeights,
    #[serde(default = "default_penalty")]
    pub penalty: f64,
}

fn default_penalty() -> f64 {
    10.0
}

/// One violated scenario constraint, located by a path-like string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

const MINIFAB_JSON: &str = include_str!("../data/minifab.json");

impl Scenario {
    /// The bundled desk-scale fab.
    pub fn minifab() -> Scenario {
        Self::from_json(MINIFAB_JSON).expect("bundled minifab.json is valid")
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(Error::Schema(format!("unsupported schema_version {v}"))),
            None => return Err(Error::Schema("missing schema_version".into())),
        }
        let scenario: Scenario = serde_json::from_value(value)?;
        let violations = scenario.validate();
        if violations.is_empty() {
            Ok(scenario)
        } else {
            Err(Error::Validation(violations))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn family_count(&self) -> usize {
        self.families.len()
    }

    pub fn machine_count(&self) -> usize {
        self.tool_groups.iter().map(|g| g.machine_count).sum()
    }

    pub fn group(&self, group_id: usize) -> &ToolGroup {
        &self.tool_groups[group_id]
    }

    pub fn step(&self, product: usize, step: usize) -> &RouteStep {
        &self.products[product].route[step]
    }

    pub fn step_family(&self, product: usize, step: usize) -> usize {
        self.tool_groups[self.step(product, step).group_id].family_id
    }

    pub fn transport_delay(&self, from_family: usize, to_family: usize) -> Minutes {
        self.transport_delay_matrix[from_family][to_family]
    }

    /// Checks every structural invariant; an empty list means the scenario is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |location: String, message: String| out.push(Violation { location, message });

        if self.schema_version != SCHEMA_VERSION {
            bad("schema_version".into(), format!("expected {SCHEMA_VERSION}, found {}", self.schema_version));
        }
        if self.families.is_empty() {
            bad("families".into(), "at least one tool family is required".into());
        }
        for (i, fam) in self.families.iter().enumerate() {
            if fam.family_id != i {
                bad(format!("families[{i}]"), format!("family_id {} is not dense (expected {i})", fam.family_id));
            }
        }
        let nf = self.families.len();

        for (i, g) in self.tool_groups.iter().enumerate() {
            let loc = format!("tool_groups[{i}]");
            if g.group_id != i {
                bad(loc.clone(), format!("group_id {} is not dense (expected {i})", g.group_id));
            }
            if g.family_id >= nf {
                bad(loc.clone(), format!("unknown family_id {}", g.family_id));
            }
            if g.machine_count == 0 {
                bad(loc.clone(), "machine_count must be positive".into());
            }
            if g.batch_min == 0 {
                bad(loc.clone(), "batch_min must be positive".into());
            }
            if g.batch_min > g.batch_max {
                bad(loc.clone(), format!("batch_min {} exceeds batch_max {}", g.batch_min, g.batch_max));
            }
            if g.load_time < 0 || g.unload_time < 0 || g.resetup_time < 0 {
                bad(loc.clone(), "load/unload/resetup times must be non-negative".into());
            }
            let ns = g.setups.len();
            if g.changeover.len() != ns || g.changeover.iter().any(|r| r.len() != ns) {
                bad(loc.clone(), format!("changeover matrix must be {ns}x{ns}"));
            } else {
                for (a, row) in g.changeover.iter().enumerate() {
                    for (b, &d) in row.iter().enumerate() {
                        if d < 0 {
                            bad(format!("{loc}.changeover[{a}][{b}]"), "negative changeover".into());
                        }
                        if a == b && d != 0 {
                            bad(format!("{loc}.changeover[{a}][{b}]"), "changeover to the same setup must be 0".into());
                        }
                    }
                }
            }
            for (field, v) in [("mtbf_mean", g.mtbf_mean), ("mttr_mean", g.mttr_mean)] {
                if let Some(v) = v {
                    if !(v > 0.0) {
                        bad(loc.clone(), format!("{field} must be positive"));
                    }
                }
            }
            if g.mtbf_mean.is_some() != g.mttr_mean.is_some() {
                bad(loc.clone(), "mtbf_mean and mttr_mean must be given together".into());
            }
            match (g.maintenance_period, g.maintenance_duration) {
                (Some(p), Some(d)) => {
                    if p <= 0 || d <= 0 || d >= p {
                        bad(loc.clone(), "maintenance needs 0 < duration < period".into());
                    }
                }
                (None, None) => {}
                _ => bad(loc.clone(), "maintenance_period and maintenance_duration must be given together".into()),
            }
        }

        if self.products.is_empty() {
            bad("products".into(), "at least one product is required".into());
        }
        for (pi, p) in self.products.iter().enumerate() {
            let loc = format!("products[{pi}]");
            if p.product_id != pi {
                bad(loc.clone(), format!("product_id {} is not dense (expected {pi})", p.product_id));
            }
            if p.route.is_empty() {
                bad(loc.clone(), "route must have at least one step".into());
            }
            if !(p.release_rate >= 0.0) {
                bad(loc.clone(), "release_rate must be non-negative".into());
            }
            let mix = p.priority_mix;
            if mix.regular < 0.0 || mix.hot < 0.0 || mix.super_hot < 0.0 || (mix.sum() - 1.0).abs() > 1e-9 {
                bad(format!("{loc}.priority_mix"), format!("probabilities must be non-negative and sum to 1 (sum {})", mix.sum()));
            }
            if !(p.flow_factor > 1.0) {
                bad(loc.clone(), "flow_factor must exceed 1".into());
            }
            let (lo, hi) = p.wafer_count_range;
            if lo == 0 || lo > hi {
                bad(loc.clone(), format!("invalid wafer_count_range ({lo}, {hi})"));
            }
            for (si, s) in p.route.iter().enumerate() {
                let sloc = format!("{loc}.route[{si}]");
                if s.step_index != si {
                    bad(sloc.clone(), format!("step_index {} out of sequence", s.step_index));
                }
                let Some(g) = self.tool_groups.get(s.group_id) else {
                    bad(sloc.clone(), format!("unknown group_id {}", s.group_id));
                    continue;
                };
                if s.mean_proc_time <= 0 {
                    bad(sloc.clone(), "mean_proc_time must be positive".into());
                }
                if let Some(id) = &s.setup_id {
                    if g.setup_index(id).is_none() {
                        bad(sloc.clone(), format!("setup '{id}' not defined on group {}", g.group_id));
                    }
                } else if s.force_resetup {
                    bad(sloc.clone(), "force_resetup without a setup_id".into());
                }
                if !(0.0..=1.0).contains(&s.skip_probability) {
                    bad(sloc.clone(), "skip_probability must lie in [0, 1]".into());
                } else if s.skip_probability > 0.0 && !s.metrology {
                    bad(sloc.clone(), "skip_probability > 0 only allowed on metrology steps".into());
                }
                if let Some(c) = s.cqt_limit_to_next {
                    if c <= 0 {
                        bad(sloc.clone(), "cqt_limit_to_next must be positive".into());
                    }
                }
                if let Dedication::Reuse { bind_step } = s.dedication {
                    let ok = bind_step < si
                        && p.route[bind_step].dedication == Dedication::Bind
                        && p.route[bind_step].group_id == s.group_id;
                    if !ok {
                        bad(sloc.clone(), format!("reuse step has no earlier bind step {bind_step} on group {}", s.group_id));
                    }
                }
            }
        }

        if self.transport_delay_matrix.len() != nf || self.transport_delay_matrix.iter().any(|r| r.len() != nf) {
            bad("transport_delay_matrix".into(), format!("must be {nf}x{nf}"));
        } else {
            for (a, row) in self.transport_delay_matrix.iter().enumerate() {
                for (b, &d) in row.iter().enumerate() {
                    if d < 0 {
                        bad(format!("transport_delay_matrix[{a}][{b}]"), format!("negative delay {d}"));
                    }
                }
            }
        }
        let w = self.priority_weights;
        if !(w.regular > 0.0 && w.hot > 0.0 && w.super_hot > 0.0) {
            bad("priority_weights".into(), "weights must be positive".into());
        }
        if !(self.penalty > 0.0) {
            bad("penalty".into(), "penalty must be positive".into());
        }
        out
    }
}
