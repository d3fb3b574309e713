//! Natural evolution strategies over the policy's trainable parameters.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispatch::PolicyDispatcher;
use crate::error::{Error, Result};
use crate::features::Normalizer;
use crate::net::PolicyParams;
use crate::objective::{total_cost, ObjectiveConfig};
use crate::scenario::Scenario;
use crate::sim::{self, SimOptions, TraceLevel};
use crate::{Minutes, MINUTES_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitnessShaping {
    Raw,
    CenteredRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NesConfig {
    pub population: usize,
    pub sigma: f64,
    pub sigma_decay: f64,
    pub eta_max: f64,
    pub i_max: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub horizon: Minutes,
    pub initial_wip: usize,
    pub shaping: FitnessShaping,
    pub antithetic: bool,
    pub master_seed: u64,
    /// Rollout seed for the center-parameter evaluation, fixed across iterations.
    pub eval_seed: u64,
}

impl Default for NesConfig {
    fn default() -> Self {
        Self {
            population: 64,
            sigma: 0.005,
            sigma_decay: 0.975,
            eta_max: 0.01,
            i_max: 40,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-4,
            horizon: 182 * MINUTES_PER_DAY,
            initial_wip: 0,
            shaping: FitnessShaping::CenteredRank,
            antithetic: false,
            master_seed: 0,
            eval_seed: 1_000_003,
        }
    }
}

impl NesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Shape(format!("population must be >= 2, got {}", self.population)));
        }
        if self.antithetic && self.population % 2 != 0 {
            return Err(Error::Shape("antithetic sampling needs an even population".into()));
        }
        if !(self.sigma > 0.0) || !(self.sigma_decay > 0.0 && self.sigma_decay <= 1.0) {
            return Err(Error::Shape("sigma must be > 0 and the decay in (0, 1]".into()));
        }
        Ok(())
    }
}

pub fn sigma_at(cfg: &NesConfig, t: usize) -> f64 {
    cfg.sigma_decay.powi(t as i32) * cfg.sigma
}

pub fn cosine_lr(cfg: &NesConfig, i: usize) -> Result<f64> {
    if i > cfg.i_max {
        return Err(Error::ScheduleRange { i, i_max: cfg.i_max });
    }
    if cfg.i_max == 0 {
        return Ok(cfg.eta_max);
    }
    Ok(cfg.eta_max / 2.0 * (1.0 + (i as f64 * std::f64::consts::PI / cfg.i_max as f64).cos()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(dim: usize, cfg: &NesConfig) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim], step: 0, beta1: cfg.beta1, beta2: cfg.beta2, epsilon: cfg.epsilon }
    }
}

/// Bias-corrected Adam ascent step.
pub fn adam_step(state: &mut AdamState, theta: &[f64], grad: &[f64], eta: f64) -> Vec<f64> {
    assert_eq!(theta.len(), grad.len(), "gradient is aligned with the parameters");
    assert_eq!(theta.len(), state.m.len(), "optimizer state is aligned with the parameters");
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    theta
        .iter()
        .zip(grad)
        .enumerate()
        .map(|(k, (&t, &g))| {
            state.m[k] = b1 * state.m[k] + (1.0 - b1) * g;
            state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g;
            let mh = state.m[k] / c1;
            let vh = state.v[k] / c2;
            t + eta * mh / (vh.sqrt() + state.epsilon)
        })
        .collect()
}

/// Maps a flat parameter vector to a scalar to maximize.
pub trait FitnessEvaluator: Sync {
    fn fitness(&self, theta: &[f64], rollout_seed: u64) -> Result<f64>;
}

impl<F: Fn(&[f64], u64) -> f64 + Sync> FitnessEvaluator for F {
    fn fitness(&self, theta: &[f64], rollout_seed: u64) -> Result<f64> {
        Ok(self(theta, rollout_seed))
    }
}

/// `rank/(N−1) − 0.5`, ties sharing their mean rank.
pub fn centered_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            out[k] = rank / (n - 1) as f64 - 0.5;
        }
        i = j + 1;
    }
    out
}

pub fn shape(fitness: &[f64], shaping: FitnessShaping) -> Vec<f64> {
    match shaping {
        FitnessShaping::Raw => fitness.to_vec(),
        FitnessShaping::CenteredRank => centered_ranks(fitness),
    }
}

/// `(1/(σN)) Σ shape(F_i)·ε_i`, accumulated in member order.
pub fn gradient_from_samples(eps: &[Vec<f64>], fitness: &[f64], sigma: f64, shaping: FitnessShaping) -> Vec<f64> {
    assert_eq!(eps.len(), fitness.len());
    let dim = eps.first().map_or(0, |e| e.len());
    let w = shape(fitness, shaping);
    let mut g = vec![0.0; dim];
    for (e, wi) in eps.iter().zip(&w) {
        for (gk, ek) in g.iter_mut().zip(e) {
            *gk += wi * ek;
        }
    }
    let scale = 1.0 / (sigma * eps.len() as f64);
    g.iter_mut().for_each(|v| *v *= scale);
    g
}

/// Standard-normal perturbation of member `i`; antithetic pairs share a draw.
pub fn perturbation(noise_seed: u64, i: usize, dim: usize, antithetic: bool) -> Vec<f64> {
    let (draw, sign) = if antithetic { (i / 2, if i % 2 == 0 { 1.0 } else { -1.0 }) } else { (i, 1.0) };
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    rng.set_stream(draw as u64);
    (0..dim).map(|_| sign * rng.sample::<f64, _>(StandardNormal)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Vec<f64>,
    pub fitness: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_gradient(
    theta: &[f64],
    sigma: f64,
    population: usize,
    evaluator: &dyn FitnessEvaluator,
    noise_seed: u64,
    rollout_seed: u64,
    shaping: FitnessShaping,
    antithetic: bool,
) -> Result<GradientEstimate> {
    let eps: Vec<Vec<f64>> = (0..population).map(|i| perturbation(noise_seed, i, theta.len(), antithetic)).collect();
    let fitness: Vec<f64> = eps
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let candidate: Vec<f64> = theta.iter().zip(e).map(|(t, e)| t + sigma * e).collect();
            let f = evaluator.fitness(&candidate, rollout_seed)?;
            if !f.is_finite() {
                return Err(Error::NonFiniteFitness { member: i, seed: rollout_seed });
            }
            Ok(f)
        })
        .collect::<Result<_>>()?;
    Ok(GradientEstimate { gradient: gradient_from_samples(&eps, &fitness, sigma, shaping), fitness })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sigma: f64,
    pub eta: f64,
    pub mean_fitness: f64,
    pub max_fitness: f64,
    /// Cost of the center parameters before this iteration's update.
    pub center_cost: f64,
}

#[derive(Debug, Clone)]
pub struct NesOutcome {
    pub theta: Vec<f64>,
    pub history: Vec<IterationRecord>,
    /// Center cost after the last update (equal to the start cost when no
    /// iterations ran).
    pub final_center_cost: f64,
}

/// Per-iteration `(noise seed, rollout seed)` derived from the master seed.
pub fn iteration_seeds(master_seed: u64, i: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(i as u64 + 1);
    (rng.random(), rng.random())
}

/// Generic loop: fitness is maximized, center cost is `−fitness` on the
/// fixed evaluation seed.
pub fn train_with(
    evaluator: &dyn FitnessEvaluator,
    theta0: &[f64],
    cfg: &NesConfig,
    mut on_iteration: impl FnMut(&IterationRecord, &[f64]),
) -> Result<NesOutcome> {
    cfg.validate()?;
    let mut theta = theta0.to_vec();
    let mut adam = AdamState::new(theta.len(), cfg);
    let mut history = Vec::with_capacity(cfg.i_max);
    for i in 0..cfg.i_max {
        let sigma = sigma_at(cfg, i);
        let eta = cosine_lr(cfg, i)?;
        let (noise_seed, rollout_seed) = iteration_seeds(cfg.master_seed, i);
        let center_cost = -evaluator.fitness(&theta, cfg.eval_seed)?;
        let est = estimate_gradient(&theta, sigma, cfg.population, evaluator, noise_seed, rollout_seed, cfg.shaping, cfg.antithetic)?;
        theta = adam_step(&mut adam, &theta, &est.gradient, eta);
        let n = est.fitness.len() as f64;
        let rec = IterationRecord {
            iteration: i,
            sigma,
            eta,
            mean_fitness: est.fitness.iter().sum::<f64>() / n,
            max_fitness: est.fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            center_cost,
        };
        on_iteration(&rec, &theta);
        history.push(rec);
    }
    let final_center_cost = -evaluator.fitness(&theta, cfg.eval_seed)?;
    Ok(NesOutcome { theta, history, final_center_cost })
}

/// Fitness of policy parameters: negated total cost of one rollout.
pub struct FabFitness {
    pub scenario: Arc<Scenario>,
    pub template: PolicyParams,
    pub normalizer: Normalizer,
    pub opts: SimOptions,
    pub objective: ObjectiveConfig,
}

impl FabFitness {
    pub fn new(scenario: Arc<Scenario>, template: PolicyParams, normalizer: Normalizer, cfg: &NesConfig) -> Self {
        let objective = ObjectiveConfig::from_scenario(&scenario);
        let opts = SimOptions::new(cfg.horizon).with_wip(cfg.initial_wip).with_trace(TraceLevel::Off);
        Self { scenario, template, normalizer, opts, objective }
    }

    pub fn params(&self, theta: &[f64]) -> PolicyParams {
        self.template.with_trainable(theta)
    }
}

impl FitnessEvaluator for FabFitness {
    fn fitness(&self, theta: &[f64], rollout_seed: u64) -> Result<f64> {
        let d = PolicyDispatcher::new(self.params(theta), self.normalizer.clone());
        let st = sim::run(self.scenario.clone(), rollout_seed, &d, self.opts)?;
        Ok(-total_cost(&st, &self.objective).total)
    }
}

#[derive(Debug, Clone)]
pub struct PolicyTraining {
    pub params: PolicyParams,
    pub history: Vec<IterationRecord>,
    pub final_center_cost: f64,
}

/// Trains the policy's trainable blocks on the scenario; frozen blocks are
/// carried through unchanged.
pub fn train(
    scenario: Arc<Scenario>,
    params: &PolicyParams,
    normalizer: &Normalizer,
    cfg: &NesConfig,
    mut on_iteration: impl FnMut(&IterationRecord, &PolicyParams),
) -> Result<PolicyTraining> {
    let fit = FabFitness::new(scenario, params.clone(), normalizer.clone(), cfg);
    let out = train_with(&fit, &params.trainable_vector(), cfg, |rec, theta| on_iteration(rec, &fit.params(theta)))?;
    Ok(PolicyTraining { params: fit.params(&out.theta), history: out.history, final_center_cost: out.final_center_cost })
}

pub fn write_history_csv(history: &[IterationRecord], w: &mut impl Write) -> Result<()> {
    writeln!(w, "iteration,sigma,eta,mean_fitness,max_fitness,center_cost")?;
    for r in history {
        writeln!(w, "{},{},{},{},{},{}", r.iteration, r.sigma, r.eta, r.mean_fitness, r.max_fitness, r.center_cost)?;
    }
    Ok(())
}
