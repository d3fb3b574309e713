//! Synthetic reentrant fab generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{
    Dedication, PriorityMix, PriorityWeights, Product, RouteStep, Scenario, ToolFamily, ToolGroup, SCHEMA_VERSION,
};
use crate::Minutes;

/// Shortest route that fits a bind/reuse pair, a CQT pair, a batch step and a
/// metrology step without overlap.
pub const MIN_ROUTE_LENGTH: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    pub families: usize,
    pub groups_per_family: usize,
    pub products: usize,
    pub route_length: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { families: 4, groups_per_family: 3, products: 3, route_length: 50, seed: 7 }
    }
}

const TARGET_UTILIZATION: f64 = 0.85;
const RELEASE_RATE: f64 = 2.0;

/// Builds a valid scenario whose routes revisit tool groups and contain every
/// constrained step kind. Pure in `cfg`.
pub fn generate_minifab(cfg: &GenConfig) -> Result<Scenario> {
    if cfg.families == 0 || cfg.groups_per_family == 0 || cfg.products == 0 {
        return Err(Error::Generate("families, groups_per_family and products must be >= 1".into()));
    }
    if cfg.route_length < MIN_ROUTE_LENGTH {
        return Err(Error::Generate(format!(
            "route_length {} is below {MIN_ROUTE_LENGTH}, the minimum that fits bind/reuse, CQT, batch and metrology steps",
            cfg.route_length
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let nf = cfg.families;
    let ng = nf * cfg.groups_per_family;

    let families: Vec<ToolFamily> =
        (0..nf).map(|f| ToolFamily { family_id: f, name: format!("family-{f}") }).collect();

    // Role assignment: group 0 carries setups and dedication, the last group
    // batches, the second-to-last hosts metrology.
    let litho = 0;
    let batch = ng - 1;
    let metro = if ng >= 3 { ng - 2 } else { ng - 1 };

    let mut groups: Vec<ToolGroup> = (0..ng)
        .map(|g| ToolGroup {
            group_id: g,
            family_id: g / cfg.groups_per_family,
            name: format!("group-{g}"),
            machine_count: 1,
            setups: Vec::new(),
            changeover: Vec::new(),
            resetup_time: 0,
            batch_min: 1,
            batch_max: 1,
            load_time: rng.random_range(1..=3),
            unload_time: rng.random_range(1..=3),
            mtbf_mean: Some(rng.random_range(3.0..8.0) * 1440.0),
            mttr_mean: Some(rng.random_range(60.0..240.0)),
            maintenance_period: None,
            maintenance_duration: None,
        })
        .collect();
    {
        let g = &mut groups[litho];
        g.setups = vec!["A".into(), "B".into(), "C".into()];
        g.changeover = (0..3).map(|a| (0..3).map(|b| if a == b { 0 } else { 20 + 5 * ((a + b) as Minutes) }).collect()).collect();
        g.resetup_time = 10;
        g.maintenance_period = Some(7 * 1440);
        g.maintenance_duration = Some(240);
    }
    groups[batch].batch_min = 2;
    groups[batch].batch_max = 4;
    let base_time: Vec<Minutes> = (0..ng).map(|g| if g == batch { 180 } else { rng.random_range(20..=60) }).collect();

    let mut products = Vec::with_capacity(cfg.products);
    for pid in 0..cfg.products {
        let n = cfg.route_length;
        // Mandated positions, spread over the route.
        let bind_at = 0;
        let cqt_at = 1;
        let batch_at = 3;
        let reuse_at = (n / 2).max(4);
        let metro_at = n - 1;
        let mut route = Vec::with_capacity(n);
        for si in 0..n {
            let group_id = if si == bind_at || si == reuse_at {
                litho
            } else if si == batch_at {
                batch
            } else if si == metro_at {
                metro
            } else if si == cqt_at + 1 {
                // CQT successor: any group but keep it quick.
                (pid + si) % ng
            } else if si % 4 == 0 {
                litho
            } else {
                rng.random_range(0..ng)
            };
            let jitter = rng.random_range(0.8..1.2);
            let mean = ((base_time[group_id] as f64) * jitter).round().max(1.0) as Minutes;
            let mut step = RouteStep {
                step_index: si,
                group_id,
                mean_proc_time: mean,
                per_wafer: group_id != batch && rng.random_bool(0.3),
                setup_id: None,
                force_resetup: false,
                cqt_limit_to_next: None,
                metrology: false,
                skip_probability: 0.0,
                dedication: Dedication::None,
            };
            if group_id == litho && !groups[litho].setups.is_empty() {
                let s = rng.random_range(0..groups[litho].setups.len());
                step.setup_id = Some(groups[litho].setups[s].clone());
            }
            if si == bind_at {
                step.dedication = Dedication::Bind;
            } else if si == reuse_at {
                step.dedication = Dedication::Reuse { bind_step: bind_at };
            }
            if si == cqt_at {
                step.cqt_limit_to_next = Some(4 * 60);
            }
            let dedicated = step.dedication != Dedication::None;
            if !dedicated && (si == metro_at || (group_id == metro && si != batch_at)) {
                step.metrology = true;
                step.skip_probability = if si == metro_at { 0.5 } else { 0.3 };
            }
            route.push(step);
        }
        products.push(Product {
            product_id: pid,
            route,
            release_rate: RELEASE_RATE,
            priority_mix: PriorityMix { regular: 0.85, hot: 0.12, super_hot: 0.03 },
            flow_factor: 2.5,
            wafer_count_range: (15, 25),
        });
    }

    // Size machine counts to a target utilization of the expected load.
    let mut load = vec![0.0f64; ng];
    for p in &products {
        for s in &p.route {
            let g = &groups[s.group_id];
            let per_lot = (s.mean_proc_time + g.load_time + g.unload_time) as f64 / g.batch_max as f64;
            load[s.group_id] += p.release_rate * per_lot * (1.0 - s.skip_probability);
        }
    }
    for (g, l) in groups.iter_mut().zip(&load) {
        g.machine_count = ((l / (1440.0 * TARGET_UTILIZATION)).ceil() as usize).max(1);
    }

    let transport_delay_matrix =
        (0..nf).map(|a| (0..nf).map(|b| if a == b { 5 } else { 10 + 5 * (a + b) as Minutes % 15 }).collect()).collect();

    let scenario = Scenario {
        schema_version: SCHEMA_VERSION,
        name: format!("generated-{}x{}x{}x{}-seed{}", cfg.families, cfg.groups_per_family, cfg.products, cfg.route_length, cfg.seed),
        families,
        tool_groups: groups,
        products,
        transport_delay_matrix,
        priority_weights: PriorityWeights::default(),
        penalty: 10.0,
    };
    let violations = scenario.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(scenario)
}
