//! Entropy-constrained vector quantization of 8×8 weight blocks.
//!
//! Each block of WMSE weights is replaced by one of a few trained codewords;
//! the codec ships the transform basis and quantization table of every
//! codeword, so only the codeword index travels in the bitstream. Assignment
//! minimizes `‖b − c_k‖² + λ·bits_k` where `bits_k = −log₂ p_k` is the ideal
//! code length of index `k`.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{local_moments, tile_plane, Block, ImageGray};
use crate::weights::{gamma_map, optimal_weights_with_floor, WeightMap, DEFAULT_Q_FLOOR, SSIM_C2};

pub const CODEBOOK_MAGIC: &[u8; 4] = b"IAQB";
pub const CODEBOOK_VERSION: u8 = 1;
pub const DEFAULT_CODEWORDS: usize = 10;
/// Rate multiplier in squared-weight units per bit.
pub const DEFAULT_LAMBDA: f64 = 0.1;
/// Step at which training weight maps are computed.
pub const DEFAULT_TRAINING_DELTA: f64 = 16.0;
pub const DEFAULT_SEED: u64 = 0x0001_A6F7;

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    codewords: Vec<Vec<f64>>,
    probabilities: Vec<f64>,
    bit_costs: Vec<f64>,
}

impl Codebook {
    /// Validates and wraps codewords with their selection probabilities.
    pub fn new(codewords: Vec<Vec<f64>>, probabilities: Vec<f64>) -> Result<Self> {
        let k = codewords.len();
        if k == 0 {
            return Err(Error::InvalidCodebook("no codewords".into()));
        }
        if probabilities.len() != k {
            return Err(Error::InvalidCodebook(format!("{k} codewords but {} probabilities", probabilities.len())));
        }
        let dim = codewords[0].len();
        if dim == 0 || codewords.iter().any(|c| c.len() != dim) {
            return Err(Error::InvalidCodebook("codewords must share a positive dimension".into()));
        }
        if codewords.iter().flatten().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidCodebook("codeword entries must be positive".into()));
        }
        if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidCodebook("probabilities must lie in [0, 1]".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidCodebook(format!("probabilities sum to {total}")));
        }
        let bit_costs = probabilities.iter().map(|p| -p.log2()).collect();
        Ok(Self { codewords, probabilities, bit_costs })
    }

    /// One all-ones codeword: every block uses `Q = I`.
    pub fn identity(dim: usize) -> Self {
        Self::new(vec![vec![1.0; dim]], vec![1.0]).expect("valid")
    }

    /// One constant codeword `Q = k·I`.
    pub fn scaled_identity(dim: usize, k: f64) -> Result<Self> {
        Self::new(vec![vec![k; dim]], vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.codewords[0].len()
    }

    pub fn codewords(&self) -> &[Vec<f64>] {
        &self.codewords
    }

    pub fn codeword(&self, k: usize) -> &[f64] {
        &self.codewords[k]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn bit_costs(&self) -> &[f64] {
        &self.bit_costs
    }

    /// `IAQB`, version u8, K u16, dim u16, then per codeword `dim` f64
    /// entries followed by its f64 probability. Little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + self.len() * 8 * (self.dim() + 1));
        out.extend_from_slice(CODEBOOK_MAGIC);
        out.push(CODEBOOK_VERSION);
        out.extend_from_slice(&(self.len() as u16).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u16).to_le_bytes());
        for (c, p) in self.codewords.iter().zip(&self.probabilities) {
            for v in c {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::InvalidCodebook(m);
        if bytes.len() < 9 || &bytes[..4] != CODEBOOK_MAGIC {
            return Err(bad("missing IAQB header".into()));
        }
        if bytes[4] != CODEBOOK_VERSION {
            return Err(bad(format!("unsupported codebook version {}", bytes[4])));
        }
        let k = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
        let dim = u16::from_le_bytes([bytes[7], bytes[8]]) as usize;
        if bytes.len() != 9 + k * 8 * (dim + 1) {
            return Err(bad(format!("expected {} bytes for {k}x{dim}, got {}", 9 + k * 8 * (dim + 1), bytes.len())));
        }
        let mut floats = bytes[9..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut codewords = Vec::with_capacity(k);
        let mut probabilities = Vec::with_capacity(k);
        for _ in 0..k {
            codewords.push(floats.by_ref().take(dim).collect());
            probabilities.push(floats.next().unwrap());
        }
        Self::new(codewords, probabilities)
    }

    /// FNV-1a over the serialized form; identifies the codebook in bitstreams.
    pub fn hash(&self) -> u64 {
        fnv1a(&self.to_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lagrangian(dist: f64, bits: f64, lambda: f64) -> f64 {
    // λ = 0 must ignore infinite costs of dead codewords
    if lambda == 0.0 {
        dist
    } else {
        dist + lambda * bits
    }
}

/// Index minimizing `‖block − c_k‖² + λ·bits_k`; ties go to the lowest index.
pub fn assign(cb: &Codebook, block: &[f64], lambda: f64) -> usize {
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for (k, (c, &bits)) in cb.codewords.iter().zip(&cb.bit_costs).enumerate() {
        let cost = lagrangian(sq_dist(block, c), bits, lambda);
        if cost < best_cost {
            best = k;
            best_cost = cost;
        }
    }
    best
}

/// Ideal side-information rate `Σ −log₂ p_index`.
pub fn side_info_bits(cb: &Codebook, indices: &[usize]) -> Result<f64> {
    indices.iter().try_fold(0.0, |acc, &i| {
        cb.bit_costs.get(i).map(|b| acc + b).ok_or(Error::IndexOutOfRange { index: i, size: cb.len() })
    })
}

/// 8×8 weight blocks of a weight map, padded by edge replication.
pub fn weight_blocks(weights: &WeightMap) -> Vec<Block> {
    tile_plane(&weights.q, weights.width, weights.height, 0.0).blocks
}

/// Weight blocks of `img` at step `delta`, flattened for training.
pub fn training_blocks(img: &ImageGray, delta: f64, q_floor: f64) -> Result<Vec<Vec<f64>>> {
    let gamma = gamma_map(&local_moments(img), delta, SSIM_C2)?;
    let weights = optimal_weights_with_floor(&gamma, q_floor)?;
    Ok(weight_blocks(&weights).iter().map(|b| b.to_vec()).collect())
}

#[derive(Clone, Debug)]
pub struct EcvqConfig {
    pub k: usize,
    pub lambda: f64,
    pub seed: u64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub q_floor: f64,
}

impl Default for EcvqConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_CODEWORDS,
            lambda: DEFAULT_LAMBDA,
            seed: DEFAULT_SEED,
            max_iterations: 200,
            tolerance: 1e-6,
            q_floor: DEFAULT_Q_FLOOR,
        }
    }
}

/// Trained codebook plus the Lagrangian cost `D + λR` after every assignment pass.
#[derive(Clone, Debug)]
pub struct Training {
    pub codebook: Codebook,
    pub costs: Vec<f64>,
    pub assignments: Vec<usize>,
}

pub fn train_ecvq(training_blocks: &[Vec<f64>], k: usize, lambda: f64) -> Result<Codebook> {
    Ok(train_ecvq_with(training_blocks, &EcvqConfig { k, lambda, ..EcvqConfig::default() })?.codebook)
}

struct State<'a> {
    blocks: &'a [Vec<f64>],
    lambda: f64,
    codewords: Vec<Vec<f64>>,
    counts: Vec<usize>,
    assignment: Vec<usize>,
}

impl State<'_> {
    fn bits(&self) -> Vec<f64> {
        let n = self.blocks.len() as f64;
        self.counts.iter().map(|&c| -(c as f64 / n).log2()).collect()
    }

    fn cost(&self) -> f64 {
        let bits = self.bits();
        self.blocks
            .iter()
            .zip(&self.assignment)
            .map(|(b, &k)| lagrangian(sq_dist(b, &self.codewords[k]), bits[k], self.lambda))
            .sum()
    }

    fn assign_all(&mut self, bits: &[f64]) {
        for (b, slot) in self.blocks.iter().zip(self.assignment.iter_mut()) {
            let mut best = 0;
            let mut best_cost = f64::INFINITY;
            for (k, c) in self.codewords.iter().enumerate() {
                let cost = lagrangian(sq_dist(b, c), bits[k], self.lambda);
                if cost < best_cost {
                    best = k;
                    best_cost = cost;
                }
            }
            *slot = best;
        }
        self.recount();
    }

    fn recount(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        for &k in &self.assignment {
            self.counts[k] += 1;
        }
    }

    fn update_centroids(&mut self, floor: f64) {
        let dim = self.blocks[0].len();
        let mut sums = vec![vec![0.0; dim]; self.codewords.len()];
        for (b, &k) in self.blocks.iter().zip(&self.assignment) {
            sums[k].iter_mut().zip(b).for_each(|(s, v)| *s += v);
        }
        for (k, sum) in sums.into_iter().enumerate() {
            if self.counts[k] > 0 {
                let n = self.counts[k] as f64;
                self.codewords[k] = sum.into_iter().map(|s| (s / n).max(floor)).collect();
            }
        }
    }

    /// Moves the worst-coded block of the most distorted cell into each empty
    /// cell, keeping the move only if the Lagrangian does not grow.
    fn reseed_empty(&mut self, floor: f64) {
        for empty in 0..self.codewords.len() {
            if self.counts[empty] > 0 {
                continue;
            }
            let mut cell_dist = vec![0.0; self.codewords.len()];
            for (b, &k) in self.blocks.iter().zip(&self.assignment) {
                cell_dist[k] += sq_dist(b, &self.codewords[k]);
            }
            let donor = (0..cell_dist.len()).fold(0, |best, k| if cell_dist[k] > cell_dist[best] { k } else { best });
            if cell_dist[donor] <= 0.0 || self.counts[donor] < 2 {
                continue;
            }
            let Some(worst) = (0..self.blocks.len()).filter(|&i| self.assignment[i] == donor).max_by(|&a, &b| {
                sq_dist(&self.blocks[a], &self.codewords[donor])
                    .total_cmp(&sq_dist(&self.blocks[b], &self.codewords[donor]))
                    .then(b.cmp(&a))
            }) else {
                continue;
            };
            let before = self.cost();
            let saved = (self.codewords.clone(), self.assignment[worst]);
            self.assignment[worst] = empty;
            self.codewords[empty] = self.blocks[worst].iter().map(|v| v.max(floor)).collect();
            self.recount();
            self.update_centroids(floor);
            if self.cost() > before {
                self.codewords = saved.0;
                self.assignment[worst] = saved.1;
                self.recount();
            }
        }
    }
}

/// Alternates Lagrangian assignment with centroid and probability updates
/// until the relative cost change drops below `tolerance`.
///
/// Codewords start from k-means++ seeding drawn from `seed`. The cost after
/// each assignment pass is non-increasing.
pub fn train_ecvq_with(training_blocks: &[Vec<f64>], config: &EcvqConfig) -> Result<Training> {
    let k = config.k;
    if k == 0 {
        return Err(Error::InvalidArgument("codeword count must be positive".into()));
    }
    if !(config.lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {}", config.lambda)));
    }
    let distinct: HashSet<Vec<u64>> = training_blocks.iter().map(|b| b.iter().map(|v| v.to_bits()).collect()).collect();
    if distinct.len() < k {
        return Err(Error::InsufficientTrainingData { needed: k, available: distinct.len() });
    }
    let dim = training_blocks[0].len();
    if training_blocks.iter().any(|b| b.len() != dim) {
        return Err(Error::InvalidArgument("training blocks must share one dimension".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let codewords = kmeans_pp(training_blocks, k, &mut rng)
        .into_iter()
        .map(|c| c.into_iter().map(|v| v.max(config.q_floor)).collect())
        .collect();
    let mut state = State {
        blocks: training_blocks,
        lambda: config.lambda,
        codewords,
        counts: vec![0; k],
        assignment: vec![0; training_blocks.len()],
    };

    let mut bits = vec![(k as f64).log2(); k];
    let mut costs = Vec::new();
    for _ in 0..config.max_iterations {
        state.assign_all(&bits);
        let cost = state.cost();
        let converged = costs.last().is_some_and(|&prev: &f64| prev <= 0.0 || (prev - cost) / prev < config.tolerance);
        costs.push(cost);
        if converged {
            break;
        }
        state.update_centroids(config.q_floor);
        state.reseed_empty(config.q_floor);
        bits = state.bits();
    }

    let n = training_blocks.len() as f64;
    let probabilities = state.counts.iter().map(|&c| c as f64 / n).collect();
    let codebook = Codebook::new(state.codewords, probabilities)?;
    Ok(Training { codebook, costs, assignments: state.assignment })
}

fn kmeans_pp(blocks: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![blocks[rng.random_range(0..blocks.len())].clone()];
    let mut nearest: Vec<f64> = blocks.iter().map(|b| sq_dist(b, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = blocks.len() - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..blocks.len())
        };
        centers.push(blocks[pick].clone());
        for (b, d) in blocks.iter().zip(nearest.iter_mut()) {
            *d = d.min(sq_dist(b, centers.last().unwrap()));
        }
    }
    centers
}
