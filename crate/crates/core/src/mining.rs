//! Graded-pair storage and batch composition by similarity-bin quotas.
//!
//! Batches are filled from fixed `psi` intervals in fixed proportions
//! (strategies A to D). Nothing here looks at descriptors.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradedPair {
    pub query_id: String,
    pub map_id: String,
    pub psi: f64,
}

/// Index-based view of a pair inside a [`GradedPairSet`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairRef {
    pub query: u32,
    pub map: u32,
    pub psi: f64,
}

/// Graded similarities over a `queries x maps` domain. Pairs that were never
/// inserted have `psi = 0`. Ids are kept sorted, so every iteration is in
/// (query id, map id) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradedPairSet {
    query_ids: Vec<String>,
    map_ids: Vec<String>,
    query_index: HashMap<String, u32>,
    map_index: HashMap<String, u32>,
    entries: BTreeMap<(u32, u32), f64>,
}

fn index_ids(
    ids: impl IntoIterator<Item = String>,
    what: &str,
) -> Result<(Vec<String>, HashMap<String, u32>)> {
    let mut ids: Vec<String> = ids.into_iter().collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("duplicate {what} id '{}'", w[0])));
    }
    let index = ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as u32))
        .collect();
    Ok((ids, index))
}

impl GradedPairSet {
    pub fn with_domain(
        query_ids: impl IntoIterator<Item = String>,
        map_ids: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let (query_ids, query_index) = index_ids(query_ids, "query")?;
        let (map_ids, map_index) = index_ids(map_ids, "map")?;
        Ok(Self {
            query_ids,
            map_ids,
            query_index,
            map_index,
            entries: BTreeMap::new(),
        })
    }

    /// Domain is every id that appears in `pairs`.
    pub fn from_pairs(pairs: impl IntoIterator<Item = GradedPair>) -> Result<Self> {
        let pairs: Vec<GradedPair> = pairs.into_iter().collect();
        let mut qs: Vec<String> = pairs.iter().map(|p| p.query_id.clone()).collect();
        let mut ms: Vec<String> = pairs.iter().map(|p| p.map_id.clone()).collect();
        qs.sort();
        qs.dedup();
        ms.sort();
        ms.dedup();
        let mut set = Self::with_domain(qs, ms)?;
        for p in &pairs {
            set.insert(&p.query_id, &p.map_id, p.psi)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, query_id: &str, map_id: &str, psi: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&psi) {
            return Err(Error::invalid(format!(
                "psi for ({query_id}, {map_id}) must lie in [0, 1], got {psi}"
            )));
        }
        let q = *self
            .query_index
            .get(query_id)
            .ok_or_else(|| Error::UnknownId(query_id.to_string()))?;
        let m = *self
            .map_index
            .get(map_id)
            .ok_or_else(|| Error::UnknownId(map_id.to_string()))?;
        if self.entries.insert((q, m), psi).is_some() {
            return Err(Error::invalid(format!(
                "duplicate pair ({query_id}, {map_id})"
            )));
        }
        Ok(())
    }

    /// `None` when either id is outside the domain.
    pub fn psi(&self, query_id: &str, map_id: &str) -> Option<f64> {
        let q = *self.query_index.get(query_id)?;
        let m = *self.map_index.get(map_id)?;
        Some(self.psi_at(q, m))
    }

    pub fn psi_at(&self, query: u32, map: u32) -> f64 {
        self.entries.get(&(query, map)).copied().unwrap_or(0.0)
    }

    pub fn query_ids(&self) -> &[String] {
        &self.query_ids
    }

    pub fn map_ids(&self) -> &[String] {
        &self.map_ids
    }

    pub fn query_id(&self, index: u32) -> &str {
        &self.query_ids[index as usize]
    }

    pub fn map_id(&self, index: u32) -> &str {
        &self.map_ids[index as usize]
    }

    pub fn contains_query(&self, id: &str) -> bool {
        self.query_index.contains_key(id)
    }

    /// Number of (query, map) combinations, stored or not.
    pub fn logical_len(&self) -> usize {
        self.query_ids.len() * self.map_ids.len()
    }

    /// Number of explicitly stored pairs.
    pub fn stored_len(&self) -> usize {
        self.entries.len()
    }

    /// Explicitly stored pairs.
    pub fn iter(&self) -> impl Iterator<Item = PairRef> + '_ {
        self.entries
            .iter()
            .map(|(&(query, map), &psi)| PairRef { query, map, psi })
    }

    /// Every combination in the domain, zeros included.
    pub fn iter_logical(&self) -> impl Iterator<Item = PairRef> + '_ {
        let nm = self.map_ids.len() as u32;
        (0..self.query_ids.len() as u32).flat_map(move |query| {
            (0..nm).map(move |map| PairRef {
                query,
                map,
                psi: self.psi_at(query, map),
            })
        })
    }

    /// Stored pairs with their ids resolved.
    pub fn to_pairs(&self) -> Vec<GradedPair> {
        self.iter().map(|p| self.resolve(&p)).collect()
    }

    pub fn resolve(&self, p: &PairRef) -> GradedPair {
        GradedPair {
            query_id: self.query_id(p.query).to_string(),
            map_id: self.map_id(p.map).to_string(),
            psi: p.psi,
        }
    }
}

/// Named similarity intervals used by the strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PsiBin {
    /// `[0.5, 1]`
    Positive,
    /// `[0.75, 1]`
    HardPositive,
    /// `[0.5, 0.75)`
    SoftPositive,
    /// `(0, 0.5)`
    SoftNegative,
    /// `psi = 0`
    HardNegative,
    /// `[0, 0.5)`
    Negative,
}

impl PsiBin {
    pub fn contains(self, psi: f64) -> bool {
        match self {
            PsiBin::Positive => (0.5..=1.0).contains(&psi),
            PsiBin::HardPositive => (0.75..=1.0).contains(&psi),
            PsiBin::SoftPositive => (0.5..0.75).contains(&psi),
            PsiBin::SoftNegative => psi > 0.0 && psi < 0.5,
            PsiBin::HardNegative => psi == 0.0,
            PsiBin::Negative => (0.0..0.5).contains(&psi),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PsiBin::Positive => "positive [0.5, 1]",
            PsiBin::HardPositive => "hard positive [0.75, 1]",
            PsiBin::SoftPositive => "soft positive [0.5, 0.75)",
            PsiBin::SoftNegative => "soft negative (0, 0.5)",
            PsiBin::HardNegative => "hard negative {0}",
            PsiBin::Negative => "negative [0, 0.5)",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BatchStrategy {
    /// 1/2 positive, 1/4 soft negative, 1/4 hard negative.
    #[default]
    A,
    /// 1/4 each of hard positive, soft positive, soft negative, hard negative.
    B,
    /// 1/3 each of positive, soft negative, hard negative.
    C,
    /// 1/2 positive, 1/2 negative.
    D,
}

impl BatchStrategy {
    /// Bins with their quota as `(numerator, denominator)`.
    pub fn bins(self) -> &'static [(PsiBin, u32, u32)] {
        use PsiBin::*;
        match self {
            BatchStrategy::A => &[(Positive, 1, 2), (SoftNegative, 1, 4), (HardNegative, 1, 4)],
            BatchStrategy::B => &[
                (HardPositive, 1, 4),
                (SoftPositive, 1, 4),
                (SoftNegative, 1, 4),
                (HardNegative, 1, 4),
            ],
            BatchStrategy::C => &[(Positive, 1, 3), (SoftNegative, 1, 3), (HardNegative, 1, 3)],
            BatchStrategy::D => &[(Positive, 1, 2), (Negative, 1, 2)],
        }
    }

    /// Per-bin counts for a batch: largest-remainder apportionment, ties
    /// going to the lower-indexed bin.
    pub fn quota_counts(self, batch_size: usize) -> Vec<usize> {
        let bins = self.bins();
        let exact: Vec<(usize, u64)> = bins
            .iter()
            .map(|&(_, num, den)| {
                let scaled = batch_size as u64 * num as u64;
                (
                    (scaled / den as u64) as usize,
                    (scaled % den as u64) * 12 / den as u64,
                )
            })
            .collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.0).collect();
        let mut left = batch_size - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..bins.len()).collect();
        // remainders compared on a common denominator (12 covers 2, 3 and 4)
        order.sort_by(|&a, &b| exact[b].1.cmp(&exact[a].1).then(a.cmp(&b)));
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

impl std::str::FromStr for BatchStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(BatchStrategy::A),
            "B" => Ok(BatchStrategy::B),
            "C" => Ok(BatchStrategy::C),
            "D" => Ok(BatchStrategy::D),
            other => Err(Error::invalid(format!("unknown batch strategy '{other}'"))),
        }
    }
}

/// Index of the strategy bin that holds `psi`.
pub fn bin_of(psi: f64, strategy: BatchStrategy) -> Option<PsiBin> {
    strategy
        .bins()
        .iter()
        .map(|b| b.0)
        .find(|b| b.contains(psi))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub items: Vec<PairRef>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn histogram(&self, strategy: BatchStrategy) -> Vec<usize> {
        let bins = strategy.bins();
        let mut h = vec![0; bins.len()];
        for p in &self.items {
            if let Some(i) = bins.iter().position(|b| b.0.contains(p.psi)) {
                h[i] += 1;
            }
        }
        h
    }
}

struct BinCursor {
    members: Vec<PairRef>,
    pos: usize,
}

impl BinCursor {
    fn take(&mut self, n: usize, rng: &mut ChaCha8Rng, out: &mut Vec<PairRef>) {
        for _ in 0..n {
            if self.pos == self.members.len() {
                self.members.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.members[self.pos]);
            self.pos += 1;
        }
    }
}

/// One epoch of quota-balanced batches.
///
/// Each bin is shuffled once at the start; bins that run out before the
/// epoch ends are reshuffled and recycled. The epoch lasts until every pair
/// with `psi > 0` has been visited once: `max over bins of ceil(n / quota)`
/// batches, where `n` counts a bin's members with `psi > 0`. Zero pairs only
/// set the length when no bin holds a graded pair.
pub struct EpochSchedule {
    strategy: BatchStrategy,
    counts: Vec<usize>,
    bins: Vec<BinCursor>,
    rng: ChaCha8Rng,
    remaining: usize,
}

impl EpochSchedule {
    pub fn new(
        pairs: &GradedPairSet,
        strategy: BatchStrategy,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::with_rng(pairs, strategy, batch_size, ChaCha8Rng::seed_from_u64(seed))
    }

    fn with_rng(
        pairs: &GradedPairSet,
        strategy: BatchStrategy,
        batch_size: usize,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let spec = strategy.bins();
        let counts = strategy.quota_counts(batch_size);
        let mut members: Vec<Vec<PairRef>> = vec![Vec::new(); spec.len()];
        for p in pairs.iter_logical() {
            if let Some(i) = spec.iter().position(|b| b.0.contains(p.psi)) {
                members[i].push(p);
            }
        }
        for ((bin, _, _), (m, c)) in spec.iter().zip(members.iter().zip(&counts)) {
            if *c > 0 && m.is_empty() {
                return Err(Error::Config(format!(
                    "strategy {strategy:?} needs {c} pairs per batch from the empty {} bin",
                    bin.name()
                )));
            }
        }
        // Zero pairs are mostly implicit and grow with the square of the
        // domain, so they never set the epoch length unless nothing else can.
        let graded = |m: &Vec<PairRef>| m.iter().filter(|p| p.psi > 0.0).count();
        let epoch_len = |size: &dyn Fn(&Vec<PairRef>) -> usize| {
            members
                .iter()
                .zip(&counts)
                .filter(|(_, c)| **c > 0)
                .map(|(m, c)| size(m).div_ceil(*c))
                .max()
                .unwrap_or(0)
        };
        let mut remaining = epoch_len(&graded);
        if remaining == 0 {
            remaining = epoch_len(&|m: &Vec<PairRef>| m.len());
        }
        let bins = members
            .into_iter()
            .map(|mut m| {
                m.shuffle(&mut rng);
                BinCursor { members: m, pos: 0 }
            })
            .collect();
        Ok(Self {
            strategy,
            counts,
            bins,
            rng,
            remaining,
        })
    }

    pub fn strategy(&self) -> BatchStrategy {
        self.strategy
    }

    /// Batches left in this epoch.
    pub fn remaining(&self) -> usize {
        self.remaining
    }

    fn next_batch(&mut self) -> Batch {
        let mut items = Vec::with_capacity(self.counts.iter().sum());
        for (bin, &n) in self.bins.iter_mut().zip(&self.counts) {
            bin.take(n, &mut self.rng, &mut items);
        }
        Batch { items }
    }
}

impl Iterator for EpochSchedule {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.next_batch())
    }
}

/// Draws a single batch, the first batch of a seeded epoch.
pub fn sample_batch(
    pairs: &GradedPairSet,
    strategy: BatchStrategy,
    batch_size: usize,
    seed: u64,
) -> Result<Batch> {
    let mut epoch = EpochSchedule::new(pairs, strategy, batch_size, seed)?;
    Ok(epoch.next_batch())
}

/// Iterator over the batches of one epoch.
pub fn epoch_schedule(
    pairs: &GradedPairSet,
    strategy: BatchStrategy,
    batch_size: usize,
    seed: u64,
) -> Result<EpochSchedule> {
    EpochSchedule::new(pairs, strategy, batch_size, seed)
}

/// Seed for epoch `epoch` of a run seeded with `seed`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(epoch as u64)
}
