//! Peer-selection topologies: the load-balanced random draw that pairs every
//! rank with exactly one sender and one receiver per round, plus the directed
//! exponential graph and bidirectional ring used by the baseline protocols.
//!
//! Every draw is a pure function of an explicit seed, so all workers compute
//! identical plans without any coordination channel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{SimError, SimResult};

/// Tolerance for row sums of a peer-selection probability table.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Attempts before a dead-ending sequential draw is reported as a failure.
/// Unreachable for uniform tables with two or more ranks; guards crafted
/// inputs whose support can vanish on every attempt.
pub const RESTART_LIMIT: usize = 10_000;

/// Row-stochastic peer-selection table with a zero diagonal: entry `[i][j]`
/// is the probability that rank `i` receives from rank `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RouletteMatrix {
    probs: Vec<Vec<f64>>,
}

impl RouletteMatrix {
    pub fn from_probs(probs: Vec<Vec<f64>>) -> SimResult<Self> {
        let n = probs.len();
        if n < 2 {
            return Err(SimError::InvalidWorld(n));
        }
        for (i, row) in probs.iter().enumerate() {
            if row.len() != n {
                return Err(SimError::InvalidInput(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if row[i] != 0.0 {
                return Err(SimError::InvalidInput(format!(
                    "diagonal entry [{i}][{i}] must be exactly 0"
                )));
            }
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(SimError::InvalidInput(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(SimError::InvalidInput(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(RouletteMatrix { probs })
    }

    pub fn world_size(&self) -> usize {
        self.probs.len()
    }

    pub fn row(&self, rank: usize) -> &[f64] {
        &self.probs[rank]
    }
}

/// Uniform initial table: each rank selects any other rank with probability
/// `1 / (world_size - 1)`; the diagonal is zero.
pub fn init_roulettes(world_size: usize) -> SimResult<RouletteMatrix> {
    if world_size < 2 {
        return Err(SimError::InvalidWorld(world_size));
    }
    let p = 1.0 / (world_size - 1) as f64;
    let probs = (0..world_size)
        .map(|i| {
            (0..world_size)
                .map(|j| if i == j { 0.0 } else { p })
                .collect()
        })
        .collect();
    Ok(RouletteMatrix { probs })
}

/// One round's receiver -> sender assignment: a permutation with no fixed
/// points, so every rank sends exactly once, receives exactly once, and
/// never pairs with itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DestinationMap {
    sender_of: Vec<usize>,
    receiver_of: Vec<usize>,
}

impl DestinationMap {
    pub fn new(sender_of: Vec<usize>) -> SimResult<Self> {
        let n = sender_of.len();
        if n < 2 {
            return Err(SimError::InvalidWorld(n));
        }
        let mut receiver_of = vec![usize::MAX; n];
        for (receiver, &sender) in sender_of.iter().enumerate() {
            if sender >= n {
                return Err(SimError::InvalidInput(format!(
                    "sender {sender} out of range for world size {n}"
                )));
            }
            if sender == receiver {
                return Err(SimError::InvalidInput(format!(
                    "rank {receiver} is assigned to itself"
                )));
            }
            if receiver_of[sender] != usize::MAX {
                return Err(SimError::InvalidInput(format!(
                    "rank {sender} selected as sender more than once"
                )));
            }
            receiver_of[sender] = receiver;
        }
        Ok(DestinationMap {
            sender_of,
            receiver_of,
        })
    }

    pub fn world_size(&self) -> usize {
        self.sender_of.len()
    }

    /// The rank this receiver takes a segment from.
    pub fn sender_of(&self, receiver: usize) -> usize {
        self.sender_of[receiver]
    }

    /// The rank this sender delivers its segment to (inverse permutation).
    pub fn receiver_of(&self, sender: usize) -> usize {
        self.receiver_of[sender]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.sender_of
    }
}

/// SplitMix64 finalizer; full-avalanche 64-bit mixer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable per-(round, segment) seed derivation. Identical inputs produce
/// identical outputs on every worker; changing any input reshuffles the
/// output thoroughly, so per-segment topologies are drawn independently.
pub fn derive_seed(base_seed: u64, round: u64, segment_index: u64) -> u64 {
    mix64(mix64(mix64(base_seed) ^ round) ^ segment_index)
}

/// Identifies one topology draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopologySeed {
    pub base_seed: u64,
    pub round: u64,
    pub segment_index: u64,
}

impl TopologySeed {
    pub fn derive(&self) -> u64 {
        derive_seed(self.base_seed, self.round, self.segment_index)
    }
}

/// Sequential load-balanced draw: ranks select their sender one at a time
/// by roulette wheel over their table row, with already-taken senders and
/// the rank itself masked out and the row renormalized. A rank whose row
/// masks down to empty support dead-ends the attempt; the whole draw then
/// restarts on the next values of the same seeded stream. The result is a
/// fixed-point-free permutation, deterministic in `(seed, world_size)`.
pub fn select_destinations(
    seed: u64,
    world_size: usize,
    roulettes: &RouletteMatrix,
) -> SimResult<DestinationMap> {
    if world_size < 2 {
        return Err(SimError::InvalidWorld(world_size));
    }
    if roulettes.world_size() != world_size {
        return Err(SimError::InvalidInput(format!(
            "roulette table is {}x{0}, world size is {world_size}",
            roulettes.world_size()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'attempt: for _ in 0..RESTART_LIMIT {
        let mut taken = vec![false; world_size];
        let mut sender_of = Vec::with_capacity(world_size);
        for receiver in 0..world_size {
            let row = roulettes.row(receiver);
            let mut sum = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if !taken[j] && j != receiver {
                    sum += p;
                }
            }
            if sum <= 0.0 {
                // dead end before any draw for this rank; retry the whole
                // assignment on the continuing stream
                continue 'attempt;
            }
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut pick = usize::MAX;
            for (j, &p) in row.iter().enumerate() {
                if taken[j] || j == receiver || p <= 0.0 {
                    continue;
                }
                pick = j; // falls back to the last feasible entry on fp slack
                cum += p / sum;
                if u < cum {
                    break;
                }
            }
            taken[pick] = true;
            sender_of.push(pick);
        }
        return DestinationMap::new(sender_of);
    }
    Err(SimError::TopologyFailure(RESTART_LIMIT))
}

/// Peer on the directed exponential graph: offset `2^(round mod log2(n))`.
/// Only defined for power-of-two world sizes.
pub fn exponential_peer(rank: usize, round: u64, world_size: usize) -> SimResult<usize> {
    if world_size < 2 || !world_size.is_power_of_two() {
        return Err(SimError::UnsupportedTopology(format!(
            "directed exponential graph needs a power-of-two world size, got {world_size}"
        )));
    }
    let log2 = u64::from(world_size.trailing_zeros());
    let offset = 1usize << (round % log2);
    Ok((rank + offset) % world_size)
}

/// Left and right neighbors on the bidirectional ring.
pub fn ring_neighbors(rank: usize, world_size: usize) -> SimResult<(usize, usize)> {
    if world_size < 2 {
        return Err(SimError::InvalidWorld(world_size));
    }
    Ok((
        (rank + world_size - 1) % world_size,
        (rank + 1) % world_size,
    ))
}
