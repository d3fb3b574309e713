//! Lot-set scoring network.
//!
//! ```text
//! s  = X + E[fam]                         learned tool-family encoding
//! x  = α·s
//! y  = x + β·Attn(x)                      two heads of width 6, output projection
//! score  = tanh(tanh(y·W1 + b1)·W2 + b2)·W3 + b3      policy head
//! p      = softmax(y·Wc + bc)                         pretext head
//! ```
//!
//! All parameters live in one flat `f64` vector addressed through [`Block`],
//! so evolution strategies can perturb a single slice.

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::NUM_FEATURES;

pub const D_MODEL: usize = NUM_FEATURES;
pub const D_HEAD: usize = 6;
pub const HEADS: usize = 2;
pub const D_FFN: usize = 16;

const PARAMS_FORMAT: &str = "fabsched-policy-params";
const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Encoding,
    Query(usize),
    Key(usize),
    Value(usize),
    Output,
    Alpha,
    Beta,
    W1,
    B1,
    W2,
    B2,
    W3,
    B3,
    Classifier,
    ClassifierBias,
}

impl Block {
    pub const ALL: [Block; 18] = [
        Block::Encoding,
        Block::Query(0),
        Block::Key(0),
        Block::Value(0),
        Block::Query(1),
        Block::Key(1),
        Block::Value(1),
        Block::Output,
        Block::Alpha,
        Block::Beta,
        Block::W1,
        Block::B1,
        Block::W2,
        Block::B2,
        Block::W3,
        Block::B3,
        Block::Classifier,
        Block::ClassifierBias,
    ];

    pub fn name(self) -> String {
        match self {
            Block::Encoding => "encoding".into(),
            Block::Query(h) => format!("query{h}"),
            Block::Key(h) => format!("key{h}"),
            Block::Value(h) => format!("value{h}"),
            Block::Output => "output".into(),
            Block::Alpha => "alpha".into(),
            Block::Beta => "beta".into(),
            Block::W1 => "w1".into(),
            Block::B1 => "b1".into(),
            Block::W2 => "w2".into(),
            Block::B2 => "b2".into(),
            Block::W3 => "w3".into(),
            Block::B3 => "b3".into(),
            Block::Classifier => "classifier".into(),
            Block::ClassifierBias => "classifier_bias".into(),
        }
    }

    /// `(rows, cols)`; rows are the input side for weight matrices.
    pub fn shape(self, families: usize) -> (usize, usize) {
        match self {
            Block::Encoding => (families, D_MODEL),
            Block::Query(_) | Block::Key(_) | Block::Value(_) => (D_MODEL, D_HEAD),
            Block::Output => (D_MODEL, D_MODEL),
            Block::Alpha | Block::Beta | Block::B3 => (1, 1),
            Block::W1 => (D_MODEL, D_FFN),
            Block::B1 | Block::B2 => (1, D_FFN),
            Block::W2 => (D_FFN, D_FFN),
            Block::W3 => (D_FFN, 1),
            Block::Classifier => (D_MODEL, families),
            Block::ClassifierBias => (1, families),
        }
    }

    fn fan_in(self, families: usize) -> usize {
        match self {
            Block::Encoding => families,
            Block::B1 | Block::ClassifierBias => D_MODEL,
            Block::B2 | Block::B3 => D_FFN,
            b => b.shape(families).0,
        }
    }

    /// Blocks that only the pretext head reads.
    pub fn pretext_only(self) -> bool {
        matches!(self, Block::Classifier | Block::ClassifierBias)
    }
}

pub fn block_range(families: usize, block: Block) -> Range<usize> {
    const QKV: usize = D_MODEL * D_HEAD;
    const ATTN: usize = HEADS * 3 * QKV;
    const OUT: usize = ATTN + D_MODEL * D_MODEL;
    const FFN1: usize = OUT + 2 + D_MODEL * D_FFN;
    const FFN2: usize = FFN1 + D_FFN + D_FFN * D_FFN;
    const TRUNK: usize = FFN2 + D_FFN + D_FFN + 1;
    let enc = families * D_MODEL;
    let (start, len) = match block {
        Block::Encoding => return 0..enc,
        Block::Query(h) => (h * 3 * QKV, QKV),
        Block::Key(h) => (h * 3 * QKV + QKV, QKV),
        Block::Value(h) => (h * 3 * QKV + 2 * QKV, QKV),
        Block::Output => (ATTN, D_MODEL * D_MODEL),
        Block::Alpha => (OUT, 1),
        Block::Beta => (OUT + 1, 1),
        Block::W1 => (OUT + 2, D_MODEL * D_FFN),
        Block::B1 => (FFN1, D_FFN),
        Block::W2 => (FFN1 + D_FFN, D_FFN * D_FFN),
        Block::B2 => (FFN2, D_FFN),
        Block::W3 => (FFN2 + D_FFN, D_FFN),
        Block::B3 => (FFN2 + 2 * D_FFN, 1),
        Block::Classifier => (TRUNK, D_MODEL * families),
        Block::ClassifierBias => (TRUNK + D_MODEL * families, families),
    };
    enc + start..enc + start + len
}

pub fn param_count(families: usize) -> usize {
    Block::ALL.iter().map(|b| {
        let (r, c) = b.shape(families);
        r * c
    }).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub families: usize,
    pub values: Vec<f64>,
    /// Set once the encoding has been pretrained; NES leaves it untouched.
    pub frozen_encoding: bool,
    pub seed: u64,
}

/// Gradient with the same layout as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub families: usize,
    pub values: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros(families: usize) -> Self {
        Self { families, values: vec![0.0; param_count(families)] }
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.values[block_range(self.families, b)]
    }

    fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let r = block_range(self.families, b);
        &mut self.values[r]
    }
}

impl PolicyParams {
    pub fn zeros(families: usize) -> Self {
        Self { families, values: vec![0.0; param_count(families)], frozen_encoding: false, seed: 0 }
    }

    /// Uniform in ±sqrt(1/fan_in) per block, α = 1, β = 0.
    pub fn init(seed: u64, families: usize) -> Self {
        assert!(families >= 1, "at least one tool family");
        let mut p = Self::zeros(families);
        p.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in Block::ALL {
            match b {
                Block::Alpha => p.block_mut(b)[0] = 1.0,
                Block::Beta => p.block_mut(b)[0] = 0.0,
                _ => {
                    let bound = (1.0 / b.fan_in(families) as f64).sqrt();
                    for v in p.block_mut(b) {
                        *v = rng.random_range(-bound..=bound);
                    }
                }
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.values[block_range(self.families, b)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let r = block_range(self.families, b);
        &mut self.values[r]
    }

    pub fn alpha(&self) -> f64 {
        self.block(Block::Alpha)[0]
    }

    pub fn beta(&self) -> f64 {
        self.block(Block::Beta)[0]
    }

    pub fn encoding_norm(&self) -> f64 {
        self.block(Block::Encoding).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Index ranges of the policy parameters NES may change: every block read
    /// by the policy head, minus the encoding once frozen.
    pub fn trainable_ranges(&self) -> Vec<Range<usize>> {
        Block::ALL
            .iter()
            .filter(|b| !b.pretext_only() && !(self.frozen_encoding && **b == Block::Encoding))
            .map(|&b| block_range(self.families, b))
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable_ranges().iter().map(|r| r.len()).sum()
    }

    pub fn trainable_vector(&self) -> Vec<f64> {
        self.trainable_ranges().into_iter().flat_map(|r| self.values[r].to_vec()).collect()
    }

    pub fn set_trainable(&mut self, flat: &[f64]) {
        let mut i = 0;
        for r in self.trainable_ranges() {
            let n = r.len();
            self.values[r].copy_from_slice(&flat[i..i + n]);
            i += n;
        }
        assert_eq!(i, flat.len(), "flat vector length matches trainable count");
    }

    pub fn with_trainable(&self, flat: &[f64]) -> Self {
        let mut p = self.clone();
        p.set_trainable(flat);
        p
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_file(&self) -> ParamsFile {
        let blocks = Block::ALL
            .iter()
            .map(|&b| {
                let (rows, cols) = b.shape(self.families);
                let r = block_range(self.families, b);
                BlockEntry { name: b.name(), rows, cols, offset: r.start }
            })
            .collect();
        ParamsFile {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            families: self.families,
            seed: self.seed,
            frozen_encoding: self.frozen_encoding,
            blocks,
            values: self.values.clone(),
        }
    }

    pub fn from_file(f: ParamsFile) -> Result<Self> {
        if f.format != PARAMS_FORMAT || f.version != PARAMS_VERSION {
            return Err(Error::Format(format!("expected {PARAMS_FORMAT} v{PARAMS_VERSION}, found {} v{}", f.format, f.version)));
        }
        if f.values.len() != param_count(f.families) {
            return Err(Error::Shape(format!("{} values for {} families, expected {}", f.values.len(), f.families, param_count(f.families))));
        }
        for (entry, b) in f.blocks.iter().zip(Block::ALL) {
            let (rows, cols) = b.shape(f.families);
            if entry.name != b.name() || entry.rows != rows || entry.cols != cols || entry.offset != block_range(f.families, b).start {
                return Err(Error::Shape(format!("block manifest mismatch at '{}'", entry.name)));
            }
        }
        if f.blocks.len() != Block::ALL.len() {
            return Err(Error::Shape("block manifest is incomplete".into()));
        }
        Ok(Self { families: f.families, values: f.values, frozen_encoding: f.frozen_encoding, seed: f.seed })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f: ParamsFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// On-disk parameter document: manifest plus the flat value list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub format: String,
    pub version: u32,
    pub families: usize,
    pub seed: u64,
    pub frozen_encoding: bool,
    pub blocks: Vec<BlockEntry>,
    pub values: Vec<f64>,
}

/// A set of lots: row-major `n × 12` normalized features and family indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LotBatch {
    pub x: Vec<f64>,
    pub fam: Vec<usize>,
}

impl LotBatch {
    pub fn with_capacity(n: usize) -> Self {
        Self { x: Vec::with_capacity(n * D_MODEL), fam: Vec::with_capacity(n) }
    }

    pub fn push(&mut self, row: &[f64; D_MODEL], fam: usize) {
        self.x.extend_from_slice(row);
        self.fam.push(fam);
    }

    pub fn len(&self) -> usize {
        self.fam.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fam.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * D_MODEL..(i + 1) * D_MODEL]
    }
}

// ---- dense helpers (row-major) ------------------------------------------

/// `a (n×k) · b (k×m)`.
fn matmul(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for j in 0..m {
                row[j] += av * brow[j];
            }
        }
    }
    out
}

/// `aᵀ (k×n) · b (n×m)` for `a: n×k`.
fn matmul_tn(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * m..(p + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// `a (n×k) · bᵀ (k×m)` for `b: m×k`.
fn matmul_nt(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn softmax_rows(s: &mut [f64], cols: usize) {
    for row in s.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
}

// ---- forward ------------------------------------------------------------

/// `s′ = X + E[fam]`.
pub fn encode(params: &PolicyParams, batch: &LotBatch) -> Result<Vec<f64>> {
    let e = params.block(Block::Encoding);
    let mut s = batch.x.clone();
    for (i, &f) in batch.fam.iter().enumerate() {
        if f >= params.families {
            return Err(Error::FamilyOutOfRange { index: f, families: params.families });
        }
        for j in 0..D_MODEL {
            s[i * D_MODEL + j] += e[f * D_MODEL + j];
        }
    }
    Ok(s)
}

struct HeadCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    p: Vec<f64>,
}

struct AttnCache {
    heads: Vec<HeadCache>,
    concat: Vec<f64>,
    out: Vec<f64>,
}

fn attention_cached(params: &PolicyParams, x: &[f64], n: usize) -> AttnCache {
    let scale = 1.0 / (D_HEAD as f64).sqrt();
    let mut concat = vec![0.0; n * D_MODEL];
    let mut heads = Vec::with_capacity(HEADS);
    for h in 0..HEADS {
        let q = matmul(x, n, D_MODEL, params.block(Block::Query(h)), D_HEAD);
        let k = matmul(x, n, D_MODEL, params.block(Block::Key(h)), D_HEAD);
        let v = matmul(x, n, D_MODEL, params.block(Block::Value(h)), D_HEAD);
        let mut p = matmul_nt(&q, n, D_HEAD, &k, n);
        p.iter_mut().for_each(|s| *s *= scale);
        softmax_rows(&mut p, n);
        let a = matmul(&p, n, n, &v, D_HEAD);
        for i in 0..n {
            concat[i * D_MODEL + h * D_HEAD..i * D_MODEL + (h + 1) * D_HEAD].copy_from_slice(&a[i * D_HEAD..(i + 1) * D_HEAD]);
        }
        heads.push(HeadCache { q, k, v, p });
    }
    let out = matmul(&concat, n, D_MODEL, params.block(Block::Output), D_MODEL);
    AttnCache { heads, concat, out }
}

/// Attention sub-layer on an `n × 12` input: per-head scaled dot-product
/// attention, heads concatenated, output projection.
pub fn attention_forward(params: &PolicyParams, input: &[f64]) -> Vec<f64> {
    let n = input.len() / D_MODEL;
    attention_cached(params, input, n).out
}

struct TrunkCache {
    s: Vec<f64>,
    x: Vec<f64>,
    attn: AttnCache,
    y: Vec<f64>,
}

fn trunk(params: &PolicyParams, batch: &LotBatch) -> Result<TrunkCache> {
    let n = batch.len();
    let s = encode(params, batch)?;
    let alpha = params.alpha();
    let beta = params.beta();
    let x: Vec<f64> = s.iter().map(|v| alpha * v).collect();
    let attn = attention_cached(params, &x, n);
    let y: Vec<f64> = x.iter().zip(&attn.out).map(|(a, b)| a + beta * b).collect();
    Ok(TrunkCache { s, x, attn, y })
}

/// Position-wise FFN on each row of `y`, returning one score per row.
fn ffn(params: &PolicyParams, y: &[f64], n: usize) -> Vec<f64> {
    let mut h1 = matmul(y, n, D_MODEL, params.block(Block::W1), D_FFN);
    let b1 = params.block(Block::B1);
    for row in h1.chunks_mut(D_FFN) {
        for (v, b) in row.iter_mut().zip(b1) {
            *v = (*v + b).tanh();
        }
    }
    let mut h2 = matmul(&h1, n, D_FFN, params.block(Block::W2), D_FFN);
    let b2 = params.block(Block::B2);
    for row in h2.chunks_mut(D_FFN) {
        for (v, b) in row.iter_mut().zip(b2) {
            *v = (*v + b).tanh();
        }
    }
    let w3 = params.block(Block::W3);
    let b3 = params.block(Block::B3)[0];
    h2.chunks(D_FFN).map(|row| row.iter().zip(w3).map(|(a, b)| a * b).sum::<f64>() + b3).collect()
}

/// One priority score per lot.
pub fn forward_policy(params: &PolicyParams, batch: &LotBatch) -> Result<Vec<f64>> {
    let t = trunk(params, batch)?;
    Ok(ffn(params, &t.y, batch.len()))
}

fn pretext_logits(params: &PolicyParams, y: &[f64], n: usize) -> Vec<f64> {
    let f = params.families;
    let mut logits = matmul(y, n, D_MODEL, params.block(Block::Classifier), f);
    let bc = params.block(Block::ClassifierBias);
    for row in logits.chunks_mut(f) {
        for (v, b) in row.iter_mut().zip(bc) {
            *v += b;
        }
    }
    logits
}

/// Row-major `n × F` family probabilities.
pub fn forward_pretext(params: &PolicyParams, batch: &LotBatch) -> Result<Vec<f64>> {
    let t = trunk(params, batch)?;
    let mut p = pretext_logits(params, &t.y, batch.len());
    softmax_rows(&mut p, params.families);
    Ok(p)
}

/// Cross-entropy part of the pretext loss (mean over lots).
pub fn pretext_cross_entropy(params: &PolicyParams, batch: &LotBatch, labels: &[usize]) -> Result<f64> {
    let p = forward_pretext(params, batch)?;
    let f = params.families;
    let n = batch.len();
    Ok(labels.iter().enumerate().map(|(i, &l)| -p[i * f + l].max(f64::MIN_POSITIVE).ln()).sum::<f64>() / n as f64)
}

/// `mean CE + λ‖E‖²`.
pub fn pretext_loss(params: &PolicyParams, batch: &LotBatch, labels: &[usize], lambda: f64) -> Result<f64> {
    let enc: f64 = params.block(Block::Encoding).iter().map(|v| v * v).sum();
    Ok(pretext_cross_entropy(params, batch, labels)? + lambda * enc)
}

/// Loss and analytic gradient of `mean CE + λ‖E‖²` for every block.
pub fn backward_pretext(params: &PolicyParams, batch: &LotBatch, labels: &[usize], lambda: f64) -> Result<(f64, ParamGrads)> {
    let n = batch.len();
    let f = params.families;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} lots", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= f) {
        return Err(Error::FamilyOutOfRange { index: bad, families: f });
    }
    let t = trunk(params, batch)?;
    let mut prob = pretext_logits(params, &t.y, n);
    softmax_rows(&mut prob, f);

    let enc = params.block(Block::Encoding);
    let mut loss = lambda * enc.iter().map(|v| v * v).sum::<f64>();
    for (i, &l) in labels.iter().enumerate() {
        loss -= prob[i * f + l].max(f64::MIN_POSITIVE).ln() / n as f64;
    }

    let mut g = ParamGrads::zeros(f);
    // dL/dlogits = (p − onehot)/n
    let mut dlogits = prob;
    for (i, &l) in labels.iter().enumerate() {
        dlogits[i * f + l] -= 1.0;
    }
    dlogits.iter_mut().for_each(|v| *v /= n as f64);

    g.block_mut(Block::Classifier).copy_from_slice(&matmul_tn(&t.y, n, D_MODEL, &dlogits, f));
    {
        let db = g.block_mut(Block::ClassifierBias);
        for row in dlogits.chunks(f) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
    }
    let dy = matmul_nt(&dlogits, n, f, params.block(Block::Classifier), D_MODEL);

    // y = x + β·att
    let beta = params.beta();
    g.block_mut(Block::Beta)[0] = dy.iter().zip(&t.attn.out).map(|(a, b)| a * b).sum();
    let datt: Vec<f64> = dy.iter().map(|v| beta * v).collect();
    let mut dx = dy;

    // att = concat · Wo
    g.block_mut(Block::Output).copy_from_slice(&matmul_tn(&t.attn.concat, n, D_MODEL, &datt, D_MODEL));
    let dconcat = matmul_nt(&datt, n, D_MODEL, params.block(Block::Output), D_MODEL);

    let scale = 1.0 / (D_HEAD as f64).sqrt();
    for h in 0..HEADS {
        let hc = &t.attn.heads[h];
        let mut da = vec![0.0; n * D_HEAD];
        for i in 0..n {
            da[i * D_HEAD..(i + 1) * D_HEAD].copy_from_slice(&dconcat[i * D_MODEL + h * D_HEAD..i * D_MODEL + (h + 1) * D_HEAD]);
        }
        // a = P·V
        let dp = matmul_nt(&da, n, D_HEAD, &hc.v, n);
        let dv = matmul_tn(&hc.p, n, n, &da, D_HEAD);
        // softmax rows, then the 1/√d scale
        let mut ds = vec![0.0; n * n];
        for i in 0..n {
            let prow = &hc.p[i * n..(i + 1) * n];
            let dprow = &dp[i * n..(i + 1) * n];
            let dot: f64 = prow.iter().zip(dprow).map(|(a, b)| a * b).sum();
            for j in 0..n {
                ds[i * n + j] = prow[j] * (dprow[j] - dot) * scale;
            }
        }
        let dq = matmul(&ds, n, n, &hc.k, D_HEAD);
        let dk = matmul_tn(&ds, n, n, &hc.q, D_HEAD);
        for (blk, dproj) in [(Block::Query(h), &dq), (Block::Key(h), &dk), (Block::Value(h), &dv)] {
            g.block_mut(blk).copy_from_slice(&matmul_tn(&t.x, n, D_MODEL, dproj, D_HEAD));
            let back = matmul_nt(dproj, n, D_HEAD, params.block(blk), D_MODEL);
            for (d, b) in dx.iter_mut().zip(&back) {
                *d += b;
            }
        }
    }

    // x = α·s
    let alpha = params.alpha();
    g.block_mut(Block::Alpha)[0] = dx.iter().zip(&t.s).map(|(a, b)| a * b).sum();
    let ge = g.block_mut(Block::Encoding);
    for (i, &fam) in batch.fam.iter().enumerate() {
        for j in 0..D_MODEL {
            ge[fam * D_MODEL + j] += alpha * dx[i * D_MODEL + j];
        }
    }
    for (d, e) in ge.iter_mut().zip(enc) {
        *d += 2.0 * lambda * e;
    }
    Ok((loss, g))
}
