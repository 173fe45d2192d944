//! All-vs-all identity retrieval: every sample queries the rest of the
//! cohort, and documents sharing the query's identity are relevant.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use crate::cohort::AnnotatedCohort;
use crate::error::Result;
use crate::protocol::SubgroupSelector;
use crate::verification::SimilarityMetric;

/// Mean over relevant positions `k` of precision at `k`.
///
/// `None` when nothing is relevant.
pub fn average_precision(ranking: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in ranking.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

struct Ranker<'a> {
    cohort: &'a AnnotatedCohort,
    metric: SimilarityMetric,
    id_rank: Vec<usize>,
}

impl<'a> Ranker<'a> {
    fn new(cohort: &'a AnnotatedCohort, metric: SimilarityMetric) -> Result<Self> {
        let ids = cohort.embeddings().ids();
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        let mut id_rank = alloc::vec![0; ids.len()];
        for (r, &i) in order.iter().enumerate() {
            id_rank[i] = r;
        }
        for i in 0..cohort.len() {
            if metric.score(cohort.vector(i), cohort.vector(i)).is_none() {
                return Err(crate::Error::ZeroNorm { id: ids[i].clone() });
            }
        }
        Ok(Self {
            cohort,
            metric,
            id_rank,
        })
    }

    fn similarities(&self, query: usize) -> Vec<(usize, f64)> {
        let q = self.cohort.vector(query);
        (0..self.cohort.len())
            .filter(|&d| d != query)
            .map(|d| {
                let s = self.metric.score(q, self.cohort.vector(d)).unwrap_or(f64::NEG_INFINITY);
                (d, s)
            })
            .collect()
    }

    fn rank(&self, mut docs: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
        docs.sort_by(|a, b| b.1.total_cmp(&a.1).then(self.id_rank[a.0].cmp(&self.id_rank[b.0])));
        docs
    }
}

/// Documents for `query` by descending similarity, ties by sample id.
pub fn rank_documents(cohort: &AnnotatedCohort, query: usize, metric: SimilarityMetric) -> Result<Vec<(usize, f64)>> {
    let r = Ranker::new(cohort, metric)?;
    Ok(r.rank(r.similarities(query)))
}

fn relevance(cohort: &AnnotatedCohort, query: usize, ranked: &[(usize, f64)]) -> Vec<bool> {
    let id = &cohort.annotation(query).identity_id;
    ranked.iter().map(|&(d, _)| &cohort.annotation(d).identity_id == id).collect()
}

/// Average precision of every sample as a query (`None` for singletons).
pub fn per_query_average_precision(cohort: &AnnotatedCohort, metric: SimilarityMetric) -> Result<Vec<Option<f64>>> {
    let r = Ranker::new(cohort, metric)?;
    Ok((0..cohort.len())
        .map(|q| {
            let ranked = r.rank(r.similarities(q));
            average_precision(&relevance(cohort, q, &ranked))
        })
        .collect())
}

/// Retrieval summary for the queries of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRetrieval {
    pub selector: SubgroupSelector,
    /// Queries with at least one relevant document.
    pub queries: usize,
    /// Slice members whose identity has no other sample.
    pub excluded_queries: usize,
    pub map: Option<f64>,
    pub tpr_at_fpr: Option<f64>,
    pub genuine_trials: u64,
    pub impostor_trials: u64,
}

#[derive(PartialEq)]
struct Score(f64);

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Largest `k` with `k / negatives <= target`, mirroring the ROC comparison.
fn allowed_false_positives(target: f64, negatives: u64) -> u64 {
    let n = negatives as f64;
    let mut k = ((target * n).max(0.0) as u64).min(negatives);
    while k < negatives && (k + 1) as f64 / n <= target {
        k += 1;
    }
    while k > 0 && k as f64 / n > target {
        k -= 1;
    }
    k
}

struct SliceAccumulator {
    selector: SubgroupSelector,
    ap_sum: f64,
    queries: usize,
    excluded: usize,
    genuine: Vec<f64>,
    negatives: u64,
    allowed: u64,
    /// The `allowed + 1` largest impostor scores.
    top_impostors: BinaryHeap<Reverse<Score>>,
}

impl SliceAccumulator {
    fn push_impostor(&mut self, s: f64) {
        let cap = self.allowed as usize + 1;
        if self.top_impostors.len() < cap {
            self.top_impostors.push(Reverse(Score(s)));
        } else if let Some(Reverse(Score(min))) = self.top_impostors.peek() {
            if s > *min {
                self.top_impostors.pop();
                self.top_impostors.push(Reverse(Score(s)));
            }
        }
    }

    fn finish(self) -> SliceRetrieval {
        let pos = self.genuine.len() as u64;
        let tpr_at_fpr = if pos == 0 || self.negatives == 0 {
            None
        } else if self.allowed >= self.negatives {
            Some(1.0)
        } else {
            // The (allowed + 1)-th largest impostor must be rejected, so the
            // operating point accepts exactly the scores above it.
            let cutoff = self.top_impostors.peek().map_or(f64::NEG_INFINITY, |r| r.0 .0);
            let hits = self.genuine.iter().filter(|&&s| s > cutoff).count();
            Some(hits as f64 / pos as f64)
        };
        SliceRetrieval {
            selector: self.selector,
            queries: self.queries,
            excluded_queries: self.excluded,
            map: (self.queries > 0).then(|| self.ap_sum / self.queries as f64),
            tpr_at_fpr,
            genuine_trials: pos,
            impostor_trials: self.negatives,
        }
    }
}

/// Mean average precision and retrieval TPR at `target_fpr` per selector.
///
/// Slice membership applies to the query only; the document pool is always
/// the whole cohort. Retrieval TPR treats every query-document pair of the
/// slice as a verification trial.
pub fn map_by_slice(
    cohort: &AnnotatedCohort,
    selectors: &[SubgroupSelector],
    metric: SimilarityMetric,
    target_fpr: f64,
) -> Result<Vec<SliceRetrieval>> {
    let n = cohort.len();
    let ranker = Ranker::new(cohort, metric)?;
    let mut identity_size = alloc::collections::BTreeMap::new();
    for a in cohort.annotations() {
        *identity_size.entry(a.identity_id.as_str()).or_insert(0u64) += 1;
    }

    let membership: Vec<Vec<usize>> = (0..n)
        .map(|q| {
            let a = cohort.annotation(q);
            (0..selectors.len()).filter(|&s| selectors[s].matches(a)).collect()
        })
        .collect();

    let mut acc: Vec<SliceAccumulator> = selectors
        .iter()
        .map(|sel| SliceAccumulator {
            selector: *sel,
            ap_sum: 0.0,
            queries: 0,
            excluded: 0,
            genuine: Vec::new(),
            negatives: 0,
            allowed: 0,
            top_impostors: BinaryHeap::new(),
        })
        .collect();
    for (q, slices) in membership.iter().enumerate() {
        let same = identity_size[cohort.annotation(q).identity_id.as_str()];
        for &s in slices {
            acc[s].negatives += n as u64 - same;
        }
    }
    for a in acc.iter_mut() {
        a.allowed = allowed_false_positives(target_fpr, a.negatives);
    }

    for (q, slices) in membership.iter().enumerate() {
        if slices.is_empty() {
            continue;
        }
        let ranked = ranker.rank(ranker.similarities(q));
        let rel = relevance(cohort, q, &ranked);
        let ap = average_precision(&rel);
        for &s in slices {
            let a = &mut acc[s];
            match ap {
                Some(v) => {
                    a.ap_sum += v;
                    a.queries += 1;
                }
                None => a.excluded += 1,
            }
            for (&(_, score), &r) in ranked.iter().zip(&rel) {
                if r {
                    a.genuine.push(score);
                } else {
                    a.push_impostor(score);
                }
            }
        }
    }
    Ok(acc.into_iter().map(SliceAccumulator::finish).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_hand_values() {
        assert_eq!(average_precision(&[true, false, false]), Some(1.0));
        let ap = average_precision(&[true, false, true, false]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&[true, true, true]), Some(1.0));
        assert_eq!(average_precision(&[false, false]), None);
        assert_eq!(average_precision(&[false, true]), Some(0.5));
    }

    #[test]
    fn allowed_false_positive_budget() {
        assert_eq!(allowed_false_positives(0.01, 300), 3);
        assert_eq!(allowed_false_positives(0.005, 100), 0);
        assert_eq!(allowed_false_positives(0.25, 4), 1);
        assert_eq!(allowed_false_positives(1.0, 7), 7);
        for neg in 1..500u64 {
            let k = allowed_false_positives(0.01, neg);
            assert!(k as f64 / neg as f64 <= 0.01);
            assert!(k == neg || (k + 1) as f64 / neg as f64 > 0.01);
        }
    }
}
