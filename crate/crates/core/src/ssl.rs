//! Self-supervised pretraining of the tool-family encoding.
//!
//! Lot sets are recorded at every decision point of a heuristic rollout; the
//! network learns to predict each lot's tool family. Only the encoding table
//! survives into the policy, frozen.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dispatch::{self, Dispatcher};
use crate::error::{Error, Result};
use crate::features::{Normalizer, NUM_FEATURES};
use crate::net::{self, Block, LotBatch, PolicyParams};
use crate::scenario::Scenario;
use crate::sim::{self, SimOptions, TraceLevel};
use crate::{Minutes, MINUTES_PER_DAY};

pub const DATASET_HORIZON: Minutes = 60 * MINUTES_PER_DAY;

const DATASET_MAGIC: &[u8; 4] = b"FSDS";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretextDataset {
    /// One normalized lot set per decision point; labels are the `fam` fields.
    pub items: Vec<LotBatch>,
    pub source_seed: u64,
    pub dispatcher: String,
}

impl PretextDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn lot_count(&self) -> usize {
        self.items.iter().map(|b| b.len()).sum()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_u32::<LittleEndian>(DATASET_VERSION)?;
        w.write_u64::<LittleEndian>(self.source_seed)?;
        w.write_u32::<LittleEndian>(self.dispatcher.len() as u32)?;
        w.write_all(self.dispatcher.as_bytes())?;
        w.write_u64::<LittleEndian>(self.items.len() as u64)?;
        for b in &self.items {
            w.write_u32::<LittleEndian>(b.len() as u32)?;
            for &f in &b.fam {
                w.write_u32::<LittleEndian>(f as u32)?;
            }
            for &v in &b.x {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("not a pretext dataset file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("dataset version {version}, expected {DATASET_VERSION}")));
        }
        let source_seed = r.read_u64::<LittleEndian>()?;
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let dispatcher = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let count = r.read_u64::<LittleEndian>()? as usize;
        let mut items = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.read_u32::<LittleEndian>()? as usize;
            let mut fam = Vec::with_capacity(n);
            for _ in 0..n {
                fam.push(r.read_u32::<LittleEndian>()? as usize);
            }
            let mut x = vec![0.0; n * NUM_FEATURES];
            r.read_f64_into::<LittleEndian>(&mut x)?;
            items.push(LotBatch { x, fam });
        }
        Ok(Self { items, source_seed, dispatcher })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Records one normalized lot set per decision point of a rollout.
pub fn collect_dataset(
    scenario: Arc<Scenario>,
    dispatcher: &dyn Dispatcher,
    normalizer: &Normalizer,
    opts: SimOptions,
    seed: u64,
) -> Result<PretextDataset> {
    let mut items = Vec::new();
    sim::run_observed(scenario, seed, dispatcher, opts.with_trace(TraceLevel::Off), |st, legal| {
        items.push(dispatch::lot_batch(st, legal, normalizer));
    })?;
    if items.is_empty() {
        return Err(Error::NoSamples("the rollout produced no decision points".into()));
    }
    Ok(PretextDataset { items, source_seed: seed, dispatcher: dispatcher.name() })
}

/// Hex digest identifying a dataset: scenario, dispatcher, normalizer,
/// horizon, initial WIP and seed.
pub fn dataset_key(scenario: &Scenario, dispatcher: &str, normalizer: &Normalizer, opts: &SimOptions, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(scenario.to_json().as_bytes());
    h.update(dispatcher.as_bytes());
    h.update(serde_json::to_string(normalizer).unwrap_or_default().as_bytes());
    h.update(opts.horizon.to_le_bytes());
    h.update((opts.initial_wip as u64).to_le_bytes());
    h.update(seed.to_le_bytes());
    h.update(DATASET_VERSION.to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// [`collect_dataset`] backed by a directory of binary cache files.
pub fn collect_dataset_cached(
    cache_dir: impl AsRef<Path>,
    scenario: Arc<Scenario>,
    dispatcher: &dyn Dispatcher,
    normalizer: &Normalizer,
    opts: SimOptions,
    seed: u64,
) -> Result<(PretextDataset, PathBuf)> {
    let key = dataset_key(&scenario, &dispatcher.name(), normalizer, &opts, seed);
    let path = cache_dir.as_ref().join(format!("pretext-{}.bin", &key[..16]));
    if path.exists() {
        return Ok((PretextDataset::load(&path)?, path));
    }
    std::fs::create_dir_all(cache_dir.as_ref())?;
    let d = collect_dataset(scenario, dispatcher, normalizer, opts, seed)?;
    d.save(&path)?;
    Ok((d, path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub shuffle_seed: u64,
    /// Stop once the relative epoch-mean loss improvement falls below this.
    pub tolerance: f64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self { lambda: 0.2, learning_rate: 0.01, epochs: 200, shuffle_seed: 0, tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub encoding_norm: f64,
}

#[derive(Debug, Clone)]
pub struct PretextOutcome {
    /// The full pretext network as trained.
    pub pretext: PolicyParams,
    /// Freshly initialized policy carrying the trained encoding, frozen.
    pub policy: PolicyParams,
    pub history: Vec<EpochRecord>,
}

/// Plain SGD over shuffled decision-point batches.
pub fn train_pretext(d: &PretextDataset, params: &PolicyParams, cfg: &SslConfig) -> Result<PretextOutcome> {
    if d.is_empty() {
        return Err(Error::NoSamples("empty pretext dataset".into()));
    }
    if cfg.lambda < 0.0 {
        return Err(Error::Shape(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    let mut p = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..d.len()).collect();
    let mut history = Vec::new();
    let mut prev: Option<f64> = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &k in &order {
            let b = &d.items[k];
            let (loss, g) = net::backward_pretext(&p, b, &b.fam, cfg.lambda)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}, item {k}")));
            }
            total += loss;
            for (v, gv) in p.values.iter_mut().zip(&g.values) {
                *v -= cfg.learning_rate * gv;
            }
        }
        if !p.is_finite() {
            return Err(Error::Divergence(format!("parameters became non-finite at epoch {epoch}")));
        }
        let mean_loss = total / d.len() as f64;
        history.push(EpochRecord { epoch, mean_loss, encoding_norm: p.encoding_norm() });
        if let Some(prev) = prev {
            if (prev - mean_loss) / prev.abs().max(f64::MIN_POSITIVE) < cfg.tolerance {
                break;
            }
        }
        prev = Some(mean_loss);
    }
    let policy = downstream_params(&p);
    Ok(PretextOutcome { pretext: p, policy, history })
}

/// Fresh initialization from the same seed with the pretrained encoding
/// copied in and frozen.
pub fn downstream_params(pretext: &PolicyParams) -> PolicyParams {
    let mut fresh = PolicyParams::init(pretext.seed, pretext.families);
    fresh.block_mut(Block::Encoding).copy_from_slice(pretext.block(Block::Encoding));
    fresh.frozen_encoding = true;
    fresh
}

/// Fraction of lots whose most probable family is the true one.
pub fn pretext_accuracy(params: &PolicyParams, d: &PretextDataset) -> Result<f64> {
    let f = params.families;
    let mut hits = 0usize;
    let mut total = 0usize;
    for b in &d.items {
        let probs = net::forward_pretext(params, b)?;
        for (row, &fam) in probs.chunks(f).zip(&b.fam) {
            let best = row.iter().enumerate().fold(0, |bi, (i, &v)| if v > row[bi] { i } else { bi });
            hits += usize::from(best == fam);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}
