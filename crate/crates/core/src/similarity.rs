//! Inter- and intra-group cosine similarity statistics.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cohort::AnnotatedCohort;
use crate::error::{Error, Result};
use crate::math;
use crate::protocol::SubgroupSelector;
use crate::stats::{Summary, Welford};

/// Which sample pairs enter the statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdentityPolicy {
    /// Pairs of the same identity are skipped.
    #[default]
    CrossIdentityOnly,
    AllPairs,
}

impl IdentityPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            IdentityPolicy::CrossIdentityOnly => "cross-identity-only",
            IdentityPolicy::AllPairs => "all-pairs",
        }
    }
}

/// Pair count above which a statistic switches to seeded sampling.
pub const EXHAUSTIVE_PAIR_CAP: u64 = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityOptions {
    pub identity_policy: IdentityPolicy,
    pub pair_cap: u64,
    /// Pairs drawn (with replacement) when a statistic exceeds `pair_cap`.
    pub sample_pairs: u64,
    pub seed: u64,
}

impl Default for SimilarityOptions {
    fn default() -> Self {
        Self {
            identity_policy: IdentityPolicy::default(),
            pair_cap: EXHAUSTIVE_PAIR_CAP,
            sample_pairs: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSimilarityStats {
    pub selector: SubgroupSelector,
    pub members: usize,
    /// Pairs inside the group; `None` if every candidate pair was skipped.
    pub intra: Option<Summary>,
    /// Pairs with exactly one endpoint in the group.
    pub inter: Option<Summary>,
}

/// Unit rows of the cohort, so cosine similarity is a dot product.
pub struct UnitVectors {
    dim: usize,
    data: Vec<f64>,
}

impl UnitVectors {
    pub fn new(cohort: &AnnotatedCohort) -> Result<Self> {
        Ok(Self {
            dim: cohort.embeddings().dim(),
            data: cohort.embeddings().normalize()?.as_slice().to_vec(),
        })
    }

    fn cos(&self, i: usize, j: usize) -> f64 {
        let d = self.dim;
        math::dot(&self.data[i * d..(i + 1) * d], &self.data[j * d..(j + 1) * d])
    }
}

/// Cosine statistics for one group against its complement.
pub fn group_similarity(cohort: &AnnotatedCohort, sel: &SubgroupSelector, opts: &SimilarityOptions) -> Result<GroupSimilarityStats> {
    group_similarity_with(cohort, &UnitVectors::new(cohort)?, sel, opts)
}

/// As [`group_similarity`], reusing precomputed unit vectors.
pub fn group_similarity_with(
    cohort: &AnnotatedCohort,
    units: &UnitVectors,
    sel: &SubgroupSelector,
    opts: &SimilarityOptions,
) -> Result<GroupSimilarityStats> {
    let n = cohort.len();
    let inside: Vec<bool> = cohort.annotations().iter().map(|a| sel.matches(a)).collect();
    let members: Vec<usize> = (0..n).filter(|&i| inside[i]).collect();
    let others: Vec<usize> = (0..n).filter(|&i| !inside[i]).collect();
    if members.len() < 2 {
        return Err(Error::Degenerate(alloc::format!("group `{sel}` has {} sample(s)", members.len())));
    }
    if others.is_empty() {
        return Err(Error::Degenerate(alloc::format!("group `{sel}` has an empty complement")));
    }
    let identity = |i: usize| cohort.annotation(i).identity_id.as_str();
    let keep = |i: usize, j: usize| opts.identity_policy == IdentityPolicy::AllPairs || identity(i) != identity(j);

    let intra_pairs = (members.len() as u64 * (members.len() as u64 - 1)) / 2;
    let intra = if intra_pairs <= opts.pair_cap {
        let mut w = Welford::default();
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                if keep(i, j) {
                    w.push(units.cos(i, j));
                }
            }
        }
        w.summary(false)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(0);
        sample(opts.sample_pairs, || {
            let i = members[rng.random_range(0..members.len())];
            let j = members[rng.random_range(0..members.len())];
            (i != j && keep(i, j)).then(|| units.cos(i, j))
        })
    };

    let inter_pairs = members.len() as u64 * others.len() as u64;
    let inter = if inter_pairs <= opts.pair_cap {
        // Canonical i < j order makes complementary groups sum identically.
        let mut w = Welford::default();
        for i in 0..n {
            for j in i + 1..n {
                if inside[i] != inside[j] && keep(i, j) {
                    w.push(units.cos(i, j));
                }
            }
        }
        w.summary(false)
    } else {
        // Draw from the side holding row 0 first so a group and its
        // complement see the same sample.
        let (a, b) = if inside[0] { (&members, &others) } else { (&others, &members) };
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(1);
        sample(opts.sample_pairs, || {
            let i = a[rng.random_range(0..a.len())];
            let j = b[rng.random_range(0..b.len())];
            keep(i, j).then(|| units.cos(i.min(j), i.max(j)))
        })
    };

    Ok(GroupSimilarityStats {
        selector: *sel,
        members: members.len(),
        intra,
        inter,
    })
}

/// Collects `target` accepted draws, giving up after `100 * target` attempts.
fn sample(target: u64, mut draw: impl FnMut() -> Option<f64>) -> Option<Summary> {
    let mut w = Welford::default();
    let mut accepted = 0u64;
    let mut attempts = 0u64;
    while accepted < target && attempts < target.saturating_mul(100) {
        attempts += 1;
        if let Some(v) = draw() {
            w.push(v);
            accepted += 1;
        }
    }
    w.summary(true)
}
