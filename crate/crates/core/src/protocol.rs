//! Verification pair protocols and demographic slicing.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cohort::{AgeBin, AnnotatedCohort, Gender, Race, SampleAnnotation};
use crate::error::{Error, Result};

/// Two samples compared by the verifier. Unordered: `(a, b)` equals `(b, a)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationPair {
    pub a: String,
    pub b: String,
    pub genuine: bool,
    pub fold: u32,
}

impl VerificationPair {
    fn key(&self) -> (&str, &str) {
        if self.a <= self.b {
            (&self.a, &self.b)
        } else {
            (&self.b, &self.a)
        }
    }
}

/// How a pair qualifies for a selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum PairPolicy {
    /// Both endpoints match every set attribute.
    #[default]
    Both,
    /// At least one endpoint matches every set attribute.
    Either,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribute {
    Race,
    Gender,
    AgeBin,
}

impl Attribute {
    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Race => "race",
            Attribute::Gender => "gender",
            Attribute::AgeBin => "age",
        }
    }
}

/// A partial assignment over race, gender and age bin.
///
/// A selector with no attribute set is the explicit "all" selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SubgroupSelector {
    pub race: Option<Race>,
    pub gender: Option<Gender>,
    pub age_bin: Option<AgeBin>,
    pub policy: PairPolicy,
}

impl SubgroupSelector {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn race(race: Race) -> Self {
        Self {
            race: Some(race),
            ..Self::default()
        }
    }

    pub fn gender(gender: Gender) -> Self {
        Self {
            gender: Some(gender),
            ..Self::default()
        }
    }

    pub fn age(age_bin: AgeBin) -> Self {
        Self {
            age_bin: Some(age_bin),
            ..Self::default()
        }
    }

    pub fn with_policy(mut self, policy: PairPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn is_all(&self) -> bool {
        self.race.is_none() && self.gender.is_none() && self.age_bin.is_none()
    }

    pub fn matches(&self, a: &SampleAnnotation) -> bool {
        self.race.is_none_or(|r| r == a.race)
            && self.gender.is_none_or(|g| g == a.gender)
            && self.age_bin.is_none_or(|b| b == a.age_bin)
    }

    pub fn matches_pair(&self, a: &SampleAnnotation, b: &SampleAnnotation) -> bool {
        match self.policy {
            PairPolicy::Both => self.matches(a) && self.matches(b),
            PairPolicy::Either => self.matches(a) || self.matches(b),
        }
    }
}

impl fmt::Display for SubgroupSelector {
    /// Space-separated attribute values, e.g. `African Female 61-100`, or `all`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_all() {
            return f.write_str("all");
        }
        let mut first = true;
        let mut part = |f: &mut fmt::Formatter<'_>, s: &str| {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            f.write_str(s)
        };
        if let Some(r) = self.race {
            part(f, r.as_str())?;
        }
        if let Some(g) = self.gender {
            part(f, g.as_str())?;
        }
        if let Some(b) = self.age_bin {
            part(f, b.label())?;
        }
        Ok(())
    }
}

/// Cartesian product of the chosen attributes' values, race outermost.
pub fn enumerate_intersections(attrs: &[Attribute], policy: PairPolicy) -> Result<Vec<SubgroupSelector>> {
    if attrs.is_empty() {
        return Err(Error::InvalidArgument("no attributes to intersect".into()));
    }
    let has = |a| attrs.contains(&a);
    let races: Vec<Option<Race>> = if has(Attribute::Race) {
        Race::ALL.iter().copied().map(Some).collect()
    } else {
        alloc::vec![None]
    };
    let genders: Vec<Option<Gender>> = if has(Attribute::Gender) {
        Gender::ALL.iter().copied().map(Some).collect()
    } else {
        alloc::vec![None]
    };
    let ages: Vec<Option<AgeBin>> = if has(Attribute::AgeBin) {
        AgeBin::all().map(Some).collect()
    } else {
        alloc::vec![None]
    };
    let mut out = Vec::with_capacity(races.len() * genders.len() * ages.len());
    for &race in &races {
        for &gender in &genders {
            for &age_bin in &ages {
                out.push(SubgroupSelector {
                    race,
                    gender,
                    age_bin,
                    policy,
                });
            }
        }
    }
    Ok(out)
}

/// Checks a raw pair list against a cohort.
///
/// Rejects self-pairs, unknown ids and genuine flags that contradict the
/// identity labels. Repeated unordered pairs keep their first occurrence.
pub fn validate_pairs(raw: Vec<VerificationPair>, cohort: &AnnotatedCohort) -> Result<Vec<VerificationPair>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for p in raw {
        if p.a == p.b {
            return Err(Error::SelfPair(p.a));
        }
        let ia = cohort.index_of(&p.a)?;
        let ib = cohort.index_of(&p.b)?;
        let same = cohort.annotation(ia).identity_id == cohort.annotation(ib).identity_id;
        if same != p.genuine {
            return Err(Error::GenuineContradiction {
                a: p.a,
                b: p.b,
                flag: p.genuine,
            });
        }
        let (x, y) = p.key();
        if seen.insert((String::from(x), String::from(y))) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Resolves pair endpoints to cohort row indices.
pub fn resolve_pairs(pairs: &[VerificationPair], cohort: &AnnotatedCohort) -> Result<Vec<(usize, usize)>> {
    pairs
        .iter()
        .map(|p| Ok((cohort.index_of(&p.a)?, cohort.index_of(&p.b)?)))
        .collect()
}

/// Positions of the pairs that qualify for `sel`, in input order.
pub fn select_pair_indices(pairs: &[VerificationPair], cohort: &AnnotatedCohort, sel: &SubgroupSelector) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (k, p) in pairs.iter().enumerate() {
        let a = cohort.annotation(cohort.index_of(&p.a)?);
        let b = cohort.annotation(cohort.index_of(&p.b)?);
        if sel.matches_pair(a, b) {
            out.push(k);
        }
    }
    Ok(out)
}

/// Pairs that qualify for `sel`, order preserved.
pub fn select_pairs(pairs: &[VerificationPair], cohort: &AnnotatedCohort, sel: &SubgroupSelector) -> Result<Vec<VerificationPair>> {
    Ok(select_pair_indices(pairs, cohort, sel)?
        .into_iter()
        .map(|k| pairs[k].clone())
        .collect())
}

/// `|age_bin(a) - age_bin(b)|`, in `0..=5`.
pub fn age_gap(pair: &VerificationPair, cohort: &AnnotatedCohort) -> Result<u8> {
    let a = cohort.annotation(cohort.index_of(&pair.a)?).age_bin.index();
    let b = cohort.annotation(cohort.index_of(&pair.b)?).age_bin.index();
    Ok(a.abs_diff(b))
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j { (i, j) } else { (j, i) }
}

/// Draws `needed` distinct unordered pairs `(i, j)` accepted by `accept`,
/// out of `available` such pairs in total.
fn sample_distinct_pairs(
    n: usize,
    needed: usize,
    available: usize,
    accept: impl Fn(usize, usize) -> bool,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    if needed == 0 {
        return Vec::new();
    }
    if needed * 2 > available {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| accept(i, j))
            .collect();
        all.shuffle(rng);
        all.truncate(needed);
        return all;
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(needed);
    while out.len() < needed {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j || !accept(i, j) {
            continue;
        }
        let key = ordered(i, j);
        if seen.insert(key) {
            out.push(key);
        }
    }
    out
}

/// Builds a seeded pair protocol of `folds` folds with `per_fold` pairs each.
///
/// With `balance`, every fold holds `per_fold / 2` genuine and as many
/// impostor pairs (`per_fold` must be even). Pairs are drawn without
/// repetition, shuffled, and dealt round-robin to folds.
pub fn generate_pairs(
    cohort: &AnnotatedCohort,
    per_fold: usize,
    folds: usize,
    balance: bool,
    seed: u64,
) -> Result<Vec<VerificationPair>> {
    if folds == 0 || per_fold == 0 {
        return Err(Error::Infeasible("folds and per_fold must be positive".into()));
    }
    let n = cohort.len();
    let identity: Vec<&str> = cohort.annotations().iter().map(|a| a.identity_id.as_str()).collect();
    let groups = cohort.identity_groups();
    let genuine_available: usize = groups.iter().map(|(_, r)| r.len() * r.len().saturating_sub(1) / 2).sum();
    let all_available = n * n.saturating_sub(1) / 2;
    let impostor_available = all_available - genuine_available;
    let total = per_fold * folds;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut buckets: Vec<Vec<(usize, usize)>> = alloc::vec![Vec::with_capacity(per_fold); folds];
    let deal = |list: Vec<(usize, usize)>, buckets: &mut Vec<Vec<(usize, usize)>>| {
        for (k, p) in list.into_iter().enumerate() {
            buckets[k % folds].push(p);
        }
    };

    if balance {
        if !per_fold.is_multiple_of(2) {
            return Err(Error::Infeasible(format!("balanced folds need an even per_fold, got {per_fold}")));
        }
        let half = total / 2;
        if genuine_available < half {
            return Err(Error::Infeasible(format!(
                "{half} genuine pairs requested, cohort offers {genuine_available}"
            )));
        }
        if impostor_available < half {
            return Err(Error::Infeasible(format!(
                "{half} impostor pairs requested, cohort offers {impostor_available}"
            )));
        }
        let mut genuine: Vec<(usize, usize)> = groups
            .iter()
            .flat_map(|(_, rows)| {
                rows.iter()
                    .enumerate()
                    .flat_map(move |(x, &i)| rows[x + 1..].iter().map(move |&j| ordered(i, j)))
            })
            .collect();
        genuine.shuffle(&mut rng);
        genuine.truncate(half);
        let impostor = sample_distinct_pairs(n, half, impostor_available, |i, j| identity[i] != identity[j], &mut rng);
        deal(genuine, &mut buckets);
        deal(impostor, &mut buckets);
    } else {
        if all_available < total {
            return Err(Error::Infeasible(format!("{total} pairs requested, cohort offers {all_available}")));
        }
        let mut pairs = sample_distinct_pairs(n, total, all_available, |_, _| true, &mut rng);
        pairs.shuffle(&mut rng);
        deal(pairs, &mut buckets);
    }

    let ids = cohort.embeddings().ids();
    let mut out = Vec::with_capacity(total);
    for (fold, mut bucket) in buckets.into_iter().enumerate() {
        bucket.shuffle(&mut rng);
        out.extend(bucket.into_iter().map(|(i, j)| VerificationPair {
            a: ids[i].clone(),
            b: ids[j].clone(),
            genuine: identity[i] == identity[j],
            fold: fold as u32,
        }));
    }
    Ok(out)
}

/// Runs [`generate_pairs`] separately inside each stratum and concatenates
/// the results, so no pair crosses strata (the per-race test subsets of
/// the usual benchmark protocol are built this way).
///
/// Strata must not share samples. Stratum `k` uses its own seed derived
/// from `seed` and `k`.
pub fn generate_stratified_pairs(
    cohort: &AnnotatedCohort,
    strata: &[SubgroupSelector],
    per_fold: usize,
    folds: usize,
    balance: bool,
    seed: u64,
) -> Result<Vec<VerificationPair>> {
    let mut owner: Vec<Option<usize>> = alloc::vec![None; cohort.len()];
    let mut out = Vec::new();
    for (k, sel) in strata.iter().enumerate() {
        let rows: Vec<usize> = (0..cohort.len()).filter(|&i| sel.matches(cohort.annotation(i))).collect();
        for &i in &rows {
            if let Some(other) = owner[i] {
                return Err(Error::InvalidArgument(format!(
                    "strata `{}` and `{sel}` share sample {}",
                    strata[other],
                    cohort.annotation(i).sample_id
                )));
            }
            owner[i] = Some(k);
        }
        let stratum_seed = seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let pairs = generate_pairs(&cohort.subset(&rows), per_fold, folds, balance, stratum_seed)
            .map_err(|e| Error::Infeasible(format!("stratum `{sel}`: {e}")))?;
        out.extend(pairs);
    }
    Ok(out)
}
