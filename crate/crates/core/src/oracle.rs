//! Brute-force reference metrics written straight from the definitions.
//!
//! Nothing here calls into the verification, fairness or retrieval code; the
//! point is to have a second, naive implementation to compare against.
//! Everything is quadratic or worse, so inputs are capped.

use alloc::vec::Vec;

use crate::cohort::{AnnotatedCohort, SampleAnnotation};
use crate::error::{Error, Result};
use crate::protocol::{PairPolicy, SubgroupSelector, VerificationPair};
use crate::verification::SimilarityMetric;

/// Largest pair or document list the oracle accepts.
pub const ORACLE_CAP: usize = 2000;

fn check_cap(size: usize) -> Result<()> {
    if size > ORACLE_CAP {
        return Err(Error::OracleCap { size, cap: ORACLE_CAP });
    }
    Ok(())
}

/// `a·b / (|a| |b|)` or `-|a - b|`.
pub fn oracle_score(metric: SimilarityMetric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        SimilarityMetric::Cosine => {
            let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let aa: f64 = a.iter().map(|x| x * x).sum();
            let bb: f64 = b.iter().map(|x| x * x).sum();
            ab / (libm::sqrt(aa) * libm::sqrt(bb))
        }
        SimilarityMetric::EuclideanAsSimilarity => {
            let d: f64 = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            -libm::sqrt(d)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OracleCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

/// Counts with "accept" meaning `score >= threshold`.
pub fn oracle_counts(scores: &[f64], genuine: &[bool], threshold: f64) -> OracleCounts {
    let mut c = OracleCounts::default();
    for i in 0..scores.len() {
        let accept = scores[i] >= threshold;
        match (genuine[i], accept) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OraclePoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One point per candidate threshold: `+inf`, then every distinct score from
/// high to low, each evaluated by recounting all pairs.
pub fn oracle_roc(scores: &[f64], genuine: &[bool]) -> Result<Vec<OraclePoint>> {
    check_cap(scores.len())?;
    let pos = genuine.iter().filter(|&&g| g).count();
    let neg = genuine.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate("oracle ROC needs both classes".into()));
    }
    let mut candidates = Vec::new();
    for &s in scores {
        if !candidates.contains(&s) {
            candidates.push(s);
        }
    }
    // Selection sort, high to low: deliberately not the main path's sort.
    for i in 0..candidates.len() {
        let mut best = i;
        for j in i + 1..candidates.len() {
            if candidates[j] > candidates[best] {
                best = j;
            }
        }
        candidates.swap(i, best);
    }
    let mut points = Vec::with_capacity(candidates.len() + 1);
    for t in core::iter::once(f64::INFINITY).chain(candidates) {
        let c = oracle_counts(scores, genuine, t);
        points.push(OraclePoint {
            threshold: t,
            fpr: c.fp as f64 / neg as f64,
            tpr: c.tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Highest TPR among points whose FPR does not exceed `target`.
pub fn oracle_tpr_at_fpr(points: &[OraclePoint], target: f64) -> f64 {
    let mut best = 0.0;
    for p in points {
        if p.fpr <= target && p.tpr > best {
            best = p.tpr;
        }
    }
    best
}

/// Largest number of correctly classified pairs over all thresholds.
pub fn oracle_best_correct(scores: &[f64], genuine: &[bool]) -> Result<usize> {
    check_cap(scores.len())?;
    let mut best = 0;
    for t in scores.iter().copied().chain([f64::INFINITY, f64::NEG_INFINITY]) {
        let c = oracle_counts(scores, genuine, t);
        best = best.max((c.tp + c.tn) as usize);
    }
    Ok(best)
}

fn in_group(sel: &SubgroupSelector, a: &SampleAnnotation) -> bool {
    if let Some(r) = sel.race {
        if r != a.race {
            return false;
        }
    }
    if let Some(g) = sel.gender {
        if g != a.gender {
            return false;
        }
    }
    if let Some(b) = sel.age_bin {
        if b != a.age_bin {
            return false;
        }
    }
    true
}

fn annotation_of<'a>(cohort: &'a AnnotatedCohort, id: &str) -> Result<&'a SampleAnnotation> {
    cohort
        .annotations()
        .iter()
        .find(|a| a.sample_id == id)
        .ok_or_else(|| Error::UnknownSample(id.into()))
}

/// Confusion counts over the pairs a selector keeps.
pub fn oracle_slice_counts(
    cohort: &AnnotatedCohort,
    pairs: &[VerificationPair],
    scores: &[f64],
    sel: &SubgroupSelector,
    threshold: f64,
) -> Result<OracleCounts> {
    check_cap(pairs.len())?;
    let mut kept_scores = Vec::new();
    let mut kept_genuine = Vec::new();
    for (p, &s) in pairs.iter().zip(scores) {
        let a = in_group(sel, annotation_of(cohort, &p.a)?);
        let b = in_group(sel, annotation_of(cohort, &p.b)?);
        let keep = match sel.policy {
            PairPolicy::Both => a && b,
            PairPolicy::Either => a || b,
        };
        if keep {
            kept_scores.push(s);
            kept_genuine.push(p.genuine);
        }
    }
    Ok(oracle_counts(&kept_scores, &kept_genuine, threshold))
}

/// Average precision from its definition: for each relevant document, the
/// share of relevant documents among everything ranked at or above it.
///
/// A document ranks above another if its score is higher, or equal with a
/// smaller `tiebreak` key. `None` when nothing is relevant.
pub fn oracle_average_precision(scores: &[f64], relevant: &[bool], tiebreak: &[usize]) -> Result<Option<f64>> {
    check_cap(scores.len())?;
    let at_or_above = |d: usize, e: usize| scores[e] > scores[d] || (scores[e] == scores[d] && tiebreak[e] <= tiebreak[d]);
    let mut sum = 0.0;
    let mut hits = 0usize;
    for d in 0..scores.len() {
        if !relevant[d] {
            continue;
        }
        hits += 1;
        let ranked: Vec<usize> = (0..scores.len()).filter(|&e| at_or_above(d, e)).collect();
        let rel = ranked.iter().filter(|&&e| relevant[e]).count();
        sum += rel as f64 / ranked.len() as f64;
    }
    Ok((hits > 0).then(|| sum / hits as f64))
}

/// Average precision of sample `query` retrieving the rest of the cohort,
/// relevance meaning same identity and ties broken by sample id.
pub fn oracle_query_ap(cohort: &AnnotatedCohort, query: usize, metric: SimilarityMetric) -> Result<Option<f64>> {
    let ids = cohort.embeddings().ids();
    let q = cohort.annotation(query);
    let docs: Vec<usize> = (0..cohort.len()).filter(|&d| d != query).collect();
    let scores: Vec<f64> = docs
        .iter()
        .map(|&d| oracle_score(metric, cohort.vector(query), cohort.vector(d)))
        .collect();
    let relevant: Vec<bool> = docs.iter().map(|&d| cohort.annotation(d).identity_id == q.identity_id).collect();
    let tiebreak: Vec<usize> = docs
        .iter()
        .map(|&d| ids.iter().filter(|other| *other < &ids[d]).count())
        .collect();
    oracle_average_precision(&scores, &relevant, &tiebreak)
}

/// Reference bundle over a scored pair list.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMetrics {
    pub scores: Vec<f64>,
    pub roc: Vec<OraclePoint>,
    /// `(target, tpr)` for each requested target FPR.
    pub tpr_at: Vec<(f64, f64)>,
    pub best_correct: usize,
    pub best_accuracy: f64,
    /// Counts at `threshold` for each requested selector.
    pub slice_counts: Vec<OracleCounts>,
}

/// Scores `pairs` and derives every reference metric from scratch.
pub fn oracle_metrics(
    cohort: &AnnotatedCohort,
    pairs: &[VerificationPair],
    metric: SimilarityMetric,
    targets: &[f64],
    selectors: &[SubgroupSelector],
    threshold: f64,
) -> Result<OracleMetrics> {
    check_cap(pairs.len())?;
    let mut scores = Vec::with_capacity(pairs.len());
    for p in pairs {
        let a = cohort.index_of(&p.a)?;
        let b = cohort.index_of(&p.b)?;
        scores.push(oracle_score(metric, cohort.vector(a), cohort.vector(b)));
    }
    let genuine: Vec<bool> = pairs.iter().map(|p| p.genuine).collect();
    let roc = oracle_roc(&scores, &genuine)?;
    let tpr_at = targets.iter().map(|&t| (t, oracle_tpr_at_fpr(&roc, t))).collect();
    let best_correct = oracle_best_correct(&scores, &genuine)?;
    let slice_counts = selectors
        .iter()
        .map(|s| oracle_slice_counts(cohort, pairs, &scores, s, threshold))
        .collect::<Result<_>>()?;
    Ok(OracleMetrics {
        best_accuracy: best_correct as f64 / pairs.len() as f64,
        scores,
        roc,
        tpr_at,
        best_correct,
        slice_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cap_is_enforced() {
        let s = alloc::vec![0.0; ORACLE_CAP + 1];
        let g = alloc::vec![true; ORACLE_CAP + 1];
        assert_eq!(
            oracle_roc(&s, &g),
            Err(Error::OracleCap {
                size: ORACLE_CAP + 1,
                cap: ORACLE_CAP
            })
        );
    }

    #[test]
    fn hand_roc() {
        let s = [0.9, 0.8, 0.8, 0.1];
        let g = [true, false, true, false];
        let roc = oracle_roc(&s, &g).unwrap();
        let pts: Vec<(f64, f64)> = roc.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(pts, [(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]);
        assert_eq!(oracle_tpr_at_fpr(&roc, 0.01), 0.5);
        assert_eq!(oracle_best_correct(&s, &g).unwrap(), 3);
    }

    #[test]
    fn ap_ties_follow_key() {
        let s = [0.5, 0.5, 0.1];
        assert_eq!(oracle_average_precision(&s, &[false, true, false], &[0, 1, 2]).unwrap(), Some(0.5));
        assert_eq!(oracle_average_precision(&s, &[false, true, false], &[1, 0, 2]).unwrap(), Some(1.0));
    }
}
