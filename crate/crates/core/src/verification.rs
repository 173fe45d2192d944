//! Pair scoring and verification metrics: ROC, TPR at a fixed FPR, k-fold
//! accuracy with complement-fold thresholds, and annotator validation FPR.
//!
//! Scores are similarities throughout ("higher = same person"). Euclidean
//! distances are negated when scored.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::cohort::AnnotatedCohort;
use crate::error::{Error, Result};
use crate::math;
use crate::protocol::VerificationPair;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimilarityMetric {
    #[default]
    Cosine,
    /// Negated Euclidean distance.
    EuclideanAsSimilarity,
}

impl SimilarityMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityMetric::Cosine => "cosine",
            SimilarityMetric::EuclideanAsSimilarity => "euclidean",
        }
    }

    pub fn score(self, a: &[f64], b: &[f64]) -> Option<f64> {
        match self {
            SimilarityMetric::Cosine => {
                let (na, nb) = (math::norm(a), math::norm(b));
                (na > 0.0 && nb > 0.0).then(|| math::dot(a, b) / (na * nb))
            }
            SimilarityMetric::EuclideanAsSimilarity => Some(-math::sqrt(math::squared_distance(a, b))),
        }
    }
}

/// Similarity scores aligned with genuine flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPairs {
    pub scores: Vec<f64>,
    pub genuine: Vec<bool>,
    pub metric: SimilarityMetric,
}

impl ScoredPairs {
    pub fn new(scores: Vec<f64>, genuine: Vec<bool>, metric: SimilarityMetric) -> Result<Self> {
        if scores.len() != genuine.len() {
            return Err(Error::InvalidArgument(format!(
                "{} scores for {} labels",
                scores.len(),
                genuine.len()
            )));
        }
        if let Some(row) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite { row, column: 0 });
        }
        Ok(Self { scores, genuine, metric })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.genuine.iter().filter(|&&g| g).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    /// The entries at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            scores: indices.iter().map(|&i| self.scores[i]).collect(),
            genuine: indices.iter().map(|&i| self.genuine[i]).collect(),
            metric: self.metric,
        }
    }
}

/// Scores every pair with `metric`.
pub fn score_pairs(pairs: &[VerificationPair], cohort: &AnnotatedCohort, metric: SimilarityMetric) -> Result<ScoredPairs> {
    let mut scores = Vec::with_capacity(pairs.len());
    let mut genuine = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (ia, ib) = (cohort.index_of(&p.a)?, cohort.index_of(&p.b)?);
        let s = metric.score(cohort.vector(ia), cohort.vector(ib)).ok_or_else(|| {
            let id = if math::norm(cohort.vector(ia)) == 0.0 { &p.a } else { &p.b };
            Error::ZeroNorm { id: id.clone() }
        })?;
        scores.push(s);
        genuine.push(p.genuine);
    }
    ScoredPairs::new(scores, genuine, metric)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, genuine: bool, predicted: bool) {
        match (genuine, predicted) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// `fp / (fp + tn)`.
    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    /// `fn / (fn + tp)`.
    pub fn fnr(&self) -> Option<f64> {
        ratio(self.fn_, self.fn_ + self.tp)
    }

    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `P(ŷ = 1)`.
    pub fn positive_rate(&self) -> Option<f64> {
        ratio(self.tp + self.fp, self.total())
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }
}

/// Confusion counts with `ŷ = 1` iff `score >= threshold`.
pub fn predict(sp: &ScoredPairs, threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&s, &g) in sp.scores.iter().zip(&sp.genuine) {
        c.add(g, s >= threshold);
    }
    c
}

/// Empirical ROC. Point `k` is the operating point of `thresholds[k]`;
/// the first threshold is `+inf`, giving `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
}

/// One point of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

impl RocCurve {
    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn point(&self, k: usize) -> OperatingPoint {
        OperatingPoint {
            threshold: self.thresholds[k],
            fpr: self.fpr[k],
            tpr: self.tpr[k],
        }
    }

    /// Largest-FPR point whose FPR does not exceed `target_fpr`.
    pub fn operating_point(&self, target_fpr: f64) -> OperatingPoint {
        let k = self.fpr.iter().rposition(|&f| f <= target_fpr).unwrap_or(0);
        self.point(k)
    }
}

/// Exact empirical ROC over the unique scores; equal scores form one step.
pub fn roc(sp: &ScoredPairs) -> Result<RocCurve> {
    let (pos, neg) = (sp.positives(), sp.negatives());
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(format!("ROC needs both classes ({pos} genuine, {neg} impostor)")));
    }
    let mut order: Vec<usize> = (0..sp.len()).collect();
    order.sort_by(|&i, &j| sp.scores[j].total_cmp(&sp.scores[i]));

    let mut curve = RocCurve {
        thresholds: alloc::vec![f64::INFINITY],
        fpr: alloc::vec![0.0],
        tpr: alloc::vec![0.0],
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = sp.scores[order[k]];
        while k < order.len() && sp.scores[order[k]] == s {
            if sp.genuine[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        curve.thresholds.push(s);
        curve.fpr.push(fp as f64 / neg as f64);
        curve.tpr.push(tp as f64 / pos as f64);
    }
    Ok(curve)
}

/// TPR at the largest empirical FPR not exceeding `target_fpr`; no
/// interpolation between steps.
pub fn tpr_at_fpr(curve: &RocCurve, target_fpr: f64) -> f64 {
    curve.operating_point(target_fpr).tpr
}

/// Threshold maximizing empirical accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestThreshold {
    pub threshold: f64,
    pub correct: usize,
    pub total: usize,
}

impl BestThreshold {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// A value in `(lo, hi]`, halfway when representable.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m > lo { m } else { hi }
}

/// Scans `-inf`, midpoints between consecutive unique scores, and `+inf`;
/// ties in accuracy go to the smallest threshold.
pub fn best_threshold(scores: &[f64], genuine: &[bool]) -> Result<BestThreshold> {
    if scores.is_empty() {
        return Err(Error::Degenerate("no scores to threshold".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    // Candidate k predicts positive for every unique score >= u_k.
    let mut correct = genuine.iter().filter(|&&g| g).count() as i64;
    let mut best = BestThreshold {
        threshold: f64::NEG_INFINITY,
        correct: correct as usize,
        total: scores.len(),
    };
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            correct += if genuine[order[k]] { -1 } else { 1 };
            k += 1;
        }
        if correct as usize > best.correct {
            best.correct = correct as usize;
            best.threshold = match order.get(k) {
                Some(&next) => midpoint(s, scores[next]),
                None => f64::INFINITY,
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldAccuracy {
    pub fold: u32,
    /// Chosen on the complement folds.
    pub threshold: f64,
    pub accuracy: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KFoldAccuracy {
    pub mean: f64,
    /// Population standard deviation across folds.
    pub std: f64,
    pub per_fold: Vec<FoldAccuracy>,
}

/// Cross-validated verification accuracy.
///
/// Each fold is scored at the threshold that maximizes accuracy on all
/// other folds.
pub fn kfold_accuracy(sp: &ScoredPairs, folds: &[u32]) -> Result<KFoldAccuracy> {
    if folds.len() != sp.len() {
        return Err(Error::InvalidArgument(format!("{} fold labels for {} pairs", folds.len(), sp.len())));
    }
    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &f) in folds.iter().enumerate() {
        members.entry(f).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(Error::Degenerate(format!("k-fold accuracy needs at least 2 folds, got {}", members.len())));
    }
    for (&fold, idx) in &members {
        let pos = idx.iter().filter(|&&i| sp.genuine[i]).count();
        if pos == 0 || pos == idx.len() {
            return Err(Error::SingleClassFold { fold });
        }
    }

    let mut per_fold = Vec::with_capacity(members.len());
    for (&fold, test) in &members {
        let train: Vec<usize> = (0..sp.len()).filter(|&i| folds[i] != fold).collect();
        let train = sp.subset(&train);
        let best = best_threshold(&train.scores, &train.genuine)?;
        let c = predict(&sp.subset(test), best.threshold);
        per_fold.push(FoldAccuracy {
            fold,
            threshold: best.threshold,
            accuracy: (c.tp + c.tn) as f64 / test.len() as f64,
            pairs: test.len(),
        });
    }
    let accs: Vec<f64> = per_fold.iter().map(|f| f.accuracy).collect();
    let (mean, std) = stats::mean_std(&accs);
    Ok(KFoldAccuracy { mean, std, per_fold })
}

/// One-vs-rest false-positive rate of an annotator for one class in one group.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorFpr {
    pub group: String,
    pub label: String,
    pub false_positives: u64,
    pub true_negatives: u64,
    /// `None` when the group has no sample whose true label differs from `label`.
    pub fpr: Option<f64>,
}

/// Per-(group, class) FPR `FP_c / (FP_c + TN_c)` of predicted labels against
/// ground truth. Groups and classes are reported in sorted order; the class
/// set is every label seen in either column.
pub fn annotator_fpr<S: AsRef<str>>(pred: &[S], truth: &[S], groups: &[S]) -> Result<Vec<AnnotatorFpr>> {
    if pred.len() != truth.len() || pred.len() != groups.len() {
        return Err(Error::InvalidArgument(format!(
            "column lengths differ: {} predictions, {} truths, {} groups",
            pred.len(),
            truth.len(),
            groups.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Degenerate("empty annotator validation set".into()));
    }
    let mut labels: Vec<&str> = pred.iter().chain(truth).map(AsRef::as_ref).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(g.as_ref()).or_default().push(i);
    }
    let mut out = Vec::with_capacity(by_group.len() * labels.len());
    for (group, rows) in by_group {
        for &label in &labels {
            let (mut fp, mut tn) = (0u64, 0u64);
            for &i in &rows {
                if truth[i].as_ref() == label {
                    continue;
                }
                if pred[i].as_ref() == label {
                    fp += 1;
                } else {
                    tn += 1;
                }
            }
            out.push(AnnotatorFpr {
                group: group.into(),
                label: label.into(),
                false_positives: fp,
                true_negatives: tn,
                fpr: ratio(fp, fp + tn),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sp(scores: &[f64], genuine: &[bool]) -> ScoredPairs {
        ScoredPairs::new(scores.to_vec(), genuine.to_vec(), SimilarityMetric::Cosine).unwrap()
    }

    #[test]
    fn metric_values() {
        let (x, y) = ([1.0, 0.0], [0.0, 1.0]);
        assert_eq!(SimilarityMetric::Cosine.score(&x, &x), Some(1.0));
        let d = SimilarityMetric::EuclideanAsSimilarity.score(&x, &y).unwrap();
        assert!((d + core::f64::consts::SQRT_2).abs() < 1e-15);
        assert_eq!(SimilarityMetric::Cosine.score(&x, &[0.0, 0.0]), None);
    }

    #[test]
    fn predict_extremes() {
        let s = sp(&[0.1, 0.5, 0.9, 0.3], &[true, false, true, false]);
        let lo = predict(&s, 0.0);
        assert_eq!((lo.tp, lo.fp, lo.tn, lo.fn_), (2, 2, 0, 0));
        let hi = predict(&s, 1.0);
        assert_eq!((hi.tp, hi.fp), (0, 0));
    }

    #[test]
    fn roc_perfect_and_tied() {
        let c = roc(&sp(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false])).unwrap();
        assert!(c.fpr.iter().zip(&c.tpr).any(|(&f, &t)| f == 0.0 && t == 1.0));
        assert_eq!(tpr_at_fpr(&c, 0.01), 1.0);

        let t = roc(&sp(&[0.5; 4], &[true, false, true, false])).unwrap();
        assert_eq!((t.fpr.clone(), t.tpr.clone()), (vec![0.0, 1.0], vec![0.0, 1.0]));
        assert!(roc(&sp(&[0.1, 0.2], &[true, true])).is_err());
    }

    #[test]
    fn tpr_at_quarter_fpr() {
        let c = roc(&sp(&[0.9, 0.8, 0.7, 0.1], &[true, true, false, false])).unwrap();
        assert_eq!(tpr_at_fpr(&c, 0.25), 1.0);
        assert_eq!(c.operating_point(0.25).threshold, 0.8);
    }

    #[test]
    fn best_threshold_ties_take_smallest() {
        let b = best_threshold(&[0.2, 0.4, 0.6, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(b.correct, 4);
        assert!((b.threshold - 0.5).abs() < 1e-15);
        let inf = best_threshold(&[0.2, 0.4], &[false, false]).unwrap();
        assert_eq!(inf.threshold, f64::INFINITY);
        let neg = best_threshold(&[0.2, 0.4], &[true, true]).unwrap();
        assert_eq!(neg.threshold, f64::NEG_INFINITY);
    }

    #[test]
    fn midpoint_stays_above_low() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        assert!(midpoint(lo, hi) > lo);
        assert_eq!(midpoint(1.0, 3.0), 2.0);
    }

    #[test]
    fn kfold_perfect() {
        let s = sp(&[0.9, 0.1, 0.8, 0.2, 0.7, 0.3], &[true, false, true, false, true, false]);
        let k = kfold_accuracy(&s, &[0, 0, 1, 1, 2, 2]).unwrap();
        assert_eq!((k.mean, k.std), (1.0, 0.0));
        assert!(matches!(kfold_accuracy(&s, &[0, 1, 0, 1, 0, 1]), Err(Error::SingleClassFold { .. })));
    }

    #[test]
    fn annotator_rates() {
        let truth = vec!["Male", "Male", "Female", "Female"];
        let pred = vec!["Male", "Female", "Female", "Female"];
        let groups = vec!["g"; 4];
        let rows = annotator_fpr(&pred, &truth, &groups).unwrap();
        let female = rows.iter().find(|r| r.label == "Female").unwrap();
        assert_eq!((female.false_positives, female.true_negatives), (1, 1));
        assert_eq!(female.fpr, Some(0.5));
        let male = rows.iter().find(|r| r.label == "Male").unwrap();
        assert_eq!(male.fpr, Some(0.0));

        let single = annotator_fpr(&["a", "a"], &["a", "a"], &["g", "g"]).unwrap();
        assert_eq!(single[0].fpr, None);
        assert!(annotator_fpr(&["a"], &["a", "b"], &["g"]).is_err());
    }
}
