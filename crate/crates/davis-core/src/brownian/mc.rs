//! Deterministic Monte-Carlo backbone: counter-split ChaCha streams,
//! antithetic pairing, and order-fixed reduction.

use crate::error::Result;

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Pairs of paths per batch; one ChaCha stream per batch.
const PAIRS_PER_BATCH: usize = 512;

/// Normal/uniform source with an antithetic flip. The mirrored path reads
/// the same underlying stream and negates normals (reflects uniforms), so
/// both members of a pair consume identical amounts of randomness.
pub(crate) struct GaussSource<'a> {
    rng: &'a mut ChaCha12Rng,
    flip: bool,
}

impl<'a> GaussSource<'a> {
    /// Unmirrored source over a caller-managed generator, for single-path
    /// work outside the batch machinery.
    pub fn fresh(rng: &'a mut ChaCha12Rng) -> Self {
        GaussSource { rng, flip: false }
    }

    pub fn normal(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(self.rng);
        if self.flip {
            -z
        } else {
            z
        }
    }

    pub fn uniform(&mut self) -> f64 {
        let u: f64 = self.rng.random();
        if self.flip {
            1.0 - u
        } else {
            u
        }
    }
}

/// Running first and second moments of one statistic.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct MomentAcc {
    pub n: u64,
    pub sum: f64,
    pub sumsq: f64,
}

impl MomentAcc {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    pub fn merge(&mut self, other: &MomentAcc) {
        self.n += other.n;
        self.sum += other.sum;
        self.sumsq += other.sumsq;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// 95% halfwidth for the mean; zero when fewer than two samples exist.
    pub fn ci95(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let var = ((self.sumsq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        1.96 * (var / n).sqrt()
    }
}

/// Runs `n_pairs` antithetic path pairs, each producing `K` statistics, and
/// returns the moment accumulators of the pair averages. Batches execute in
/// parallel on distinct ChaCha streams (stream = batch index) and are merged
/// in index order, so the result is bit-identical for a given seed no matter
/// how many threads run.
/// Deterministic bank of standard normal rows for common-random-number
/// experiments: row `2k` is fresh, row `2k+1` is its mirror image. Batches
/// are seeded exactly like [`run_pairs`], so banks are reproducible and
/// independent of how they are later consumed.
pub(crate) fn gaussian_bank<const K: usize>(n_pairs: usize, seed: u64) -> Vec<[f64; K]> {
    let mut bank = Vec::with_capacity(2 * n_pairs);
    let n_batches = n_pairs.div_ceil(PAIRS_PER_BATCH);
    for batch in 0..n_batches {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(batch as u64);
        let lo = batch * PAIRS_PER_BATCH;
        let hi = ((batch + 1) * PAIRS_PER_BATCH).min(n_pairs);
        for _ in lo..hi {
            let row: [f64; K] = std::array::from_fn(|_| rng.sample(StandardNormal));
            bank.push(row);
            bank.push(row.map(|x| -x));
        }
    }
    bank
}

pub(crate) fn run_pairs<const K: usize>(
    n_pairs: usize,
    seed: u64,
    per_path: &(impl Fn(&mut GaussSource) -> Result<[f64; K]> + Sync),
) -> Result<[MomentAcc; K]> {
    let n_batches = n_pairs.div_ceil(PAIRS_PER_BATCH);
    let batches: Vec<Result<[MomentAcc; K]>> = (0..n_batches)
        .into_par_iter()
        .map(|batch| {
            let pairs_here = PAIRS_PER_BATCH.min(n_pairs - batch * PAIRS_PER_BATCH);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(batch as u64);
            let mut acc = [MomentAcc::default(); K];
            for _ in 0..pairs_here {
                let mut mirror = rng.clone();
                let a = per_path(&mut GaussSource { rng: &mut rng, flip: false })?;
                let b = per_path(&mut GaussSource { rng: &mut mirror, flip: true })?;
                for k in 0..K {
                    acc[k].push(0.5 * (a[k] + b[k]));
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = [MomentAcc::default(); K];
    for batch in batches {
        let batch = batch?;
        for k in 0..K {
            total[k].merge(&batch[k]);
        }
    }
    Ok(total)
}
