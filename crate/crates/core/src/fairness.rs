//! Disparate mistreatment, disparate impact, and disparity annotations.
//!
//! Rates that cannot be computed (zero denominators, empty groups) are `None`
//! rather than zero.

use alloc::vec::Vec;

use crate::cohort::AnnotatedCohort;
use crate::error::{Error, Result};
use crate::protocol::{resolve_pairs, SubgroupSelector, VerificationPair};
use crate::verification::{self, ConfusionCounts, ScoredPairs};

/// Which conditional rates DFPR/DFNR are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Convention {
    /// Conditioned on the ground truth: `P(ŷ=1 | y=0, t)` and `P(ŷ=0 | y=1, t)`.
    #[default]
    Standard,
    /// Conditioned on the prediction: `P(y=0 | ŷ=1, t)` and `P(y=1 | ŷ=0, t)`.
    AsWritten,
}

impl Convention {
    pub fn as_str(self) -> &'static str {
        match self {
            Convention::Standard => "standard",
            Convention::AsWritten => "as-written",
        }
    }

    fn false_positive_rate(self, c: &ConfusionCounts) -> Option<f64> {
        match self {
            Convention::Standard => c.fpr(),
            Convention::AsWritten => rate(c.fp, c.fp + c.tp),
        }
    }

    fn false_negative_rate(self, c: &ConfusionCounts) -> Option<f64> {
        match self {
            Convention::Standard => c.fnr(),
            Convention::AsWritten => rate(c.fn_, c.fn_ + c.tn),
        }
    }
}

fn rate(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Outcomes for pairs inside (`t = 1`) and outside (`t = 0`) a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GroupOutcomes {
    pub inside: ConfusionCounts,
    pub outside: ConfusionCounts,
}

impl GroupOutcomes {
    pub fn swapped(&self) -> Self {
        Self {
            inside: self.outside,
            outside: self.inside,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mistreatment {
    pub dfpr: Option<f64>,
    pub dfnr: Option<f64>,
    /// `|dfpr| + |dfnr|`; `None` if either component is.
    pub d_m: Option<f64>,
}

/// DFPR, DFNR and their absolute sum `D_M`.
pub fn disparate_mistreatment(o: &GroupOutcomes, convention: Convention) -> Mistreatment {
    let diff = |a: Option<f64>, b: Option<f64>| Some(a? - b?);
    let dfpr = diff(
        convention.false_positive_rate(&o.inside),
        convention.false_positive_rate(&o.outside),
    );
    let dfnr = diff(
        convention.false_negative_rate(&o.inside),
        convention.false_negative_rate(&o.outside),
    );
    let d_m = match (dfpr, dfnr) {
        (Some(p), Some(n)) => Some(p.abs() + n.abs()),
        _ => None,
    };
    Mistreatment { dfpr, dfnr, d_m }
}

/// Ratio of the smaller to the larger positive-prediction rate.
///
/// Both rates zero gives `1.0`; exactly one zero gives `0.0`. `None` when a
/// side has no pairs.
pub fn p_rule(o: &GroupOutcomes) -> Option<f64> {
    let r1 = o.inside.positive_rate()?;
    let r0 = o.outside.positive_rate()?;
    Some(match (r1 == 0.0, r0 == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (r1 / r0).min(r0 / r1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DisparityMode {
    /// `(v - v_best) / v_best`.
    #[default]
    Relative,
    /// `v - v_best`.
    Absolute,
}

impl DisparityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DisparityMode::Relative => "relative",
            DisparityMode::Absolute => "absolute",
        }
    }
}

/// Signed disparity of `value` against `baseline`.
pub fn disparity_vs(value: f64, baseline: f64, mode: DisparityMode) -> Result<f64> {
    match mode {
        DisparityMode::Absolute => Ok(value - baseline),
        DisparityMode::Relative if baseline == 0.0 => {
            Err(Error::Degenerate("relative disparity against a zero baseline".into()))
        }
        DisparityMode::Relative => Ok((value - baseline) / baseline),
    }
}

/// Disparities of one scope against its best (largest) value.
#[derive(Debug, Clone, PartialEq)]
pub struct Disparities {
    /// Index of the baseline; the first maximum wins ties.
    pub baseline: usize,
    pub values: Vec<f64>,
}

/// Disparity of every value against the best value of the scope.
pub fn relative_disparity(values: &[f64], mode: DisparityMode) -> Result<Disparities> {
    let baseline = best_index(values).ok_or_else(|| Error::Degenerate("empty disparity scope".into()))?;
    let best = values[baseline];
    let values = values
        .iter()
        .map(|&v| disparity_vs(v, best, mode))
        .collect::<Result<_>>()?;
    Ok(Disparities { baseline, values })
}

fn best_index(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// How the single global decision threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    /// Operating point with the largest overall FPR not above the target.
    AtFpr(f64),
    /// Threshold maximizing overall accuracy.
    MaxAccuracy,
    Fixed(f64),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::AtFpr(0.01)
    }
}

impl ThresholdPolicy {
    pub fn resolve(&self, sp: &ScoredPairs) -> Result<f64> {
        match *self {
            ThresholdPolicy::AtFpr(target) => Ok(verification::roc(sp)?.operating_point(target).threshold),
            ThresholdPolicy::MaxAccuracy => Ok(verification::best_threshold(&sp.scores, &sp.genuine)?.threshold),
            ThresholdPolicy::Fixed(t) => Ok(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessRecord {
    pub selector: SubgroupSelector,
    pub outcomes: GroupOutcomes,
    pub dfpr: Option<f64>,
    pub dfnr: Option<f64>,
    pub d_m: Option<f64>,
    pub p_rule: Option<f64>,
    pub convention: Convention,
    pub threshold_used: f64,
}

impl FairnessRecord {
    pub fn inside_pairs(&self) -> u64 {
        self.outcomes.inside.total()
    }
}

/// Splits pairs into inside/outside for `sel` and tallies outcomes at `threshold`.
pub fn group_outcomes(
    scored: &ScoredPairs,
    endpoints: &[(usize, usize)],
    cohort: &AnnotatedCohort,
    sel: &SubgroupSelector,
    threshold: f64,
) -> GroupOutcomes {
    let mut o = GroupOutcomes::default();
    for (k, &(a, b)) in endpoints.iter().enumerate() {
        let side = if sel.matches_pair(cohort.annotation(a), cohort.annotation(b)) {
            &mut o.inside
        } else {
            &mut o.outside
        };
        side.add(scored.genuine[k], scored.scores[k] >= threshold);
    }
    o
}

/// One record per selector, in selector order, at a single global threshold.
///
/// `scored` must be aligned with `pairs`. Selectors with no inside pairs
/// still produce a record, with undefined rates.
pub fn fairness_sweep(
    pairs: &[VerificationPair],
    cohort: &AnnotatedCohort,
    scored: &ScoredPairs,
    selectors: &[SubgroupSelector],
    policy: ThresholdPolicy,
    convention: Convention,
) -> Result<Vec<FairnessRecord>> {
    if scored.len() != pairs.len() {
        return Err(Error::InvalidArgument("scores are not aligned with pairs".into()));
    }
    let threshold = policy.resolve(scored)?;
    let endpoints = resolve_pairs(pairs, cohort)?;
    Ok(selectors
        .iter()
        .map(|sel| {
            let outcomes = group_outcomes(scored, &endpoints, cohort, sel, threshold);
            let m = disparate_mistreatment(&outcomes, convention);
            FairnessRecord {
                selector: *sel,
                outcomes,
                dfpr: m.dfpr,
                dfnr: m.dfnr,
                d_m: m.d_m,
                p_rule: p_rule(&outcomes),
                convention,
                threshold_used: threshold,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    #[test]
    fn identical_groups_have_no_mistreatment() {
        let c = counts(5, 2, 8, 1);
        let m = disparate_mistreatment(&GroupOutcomes { inside: c, outside: c }, Convention::Standard);
        assert_eq!((m.dfpr, m.dfnr, m.d_m), (Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn fpr_gap_of_one_tenth() {
        let o = GroupOutcomes {
            inside: counts(9, 2, 8, 1),
            outside: counts(9, 1, 9, 1),
        };
        let m = disparate_mistreatment(&o, Convention::Standard);
        assert!((m.dfpr.unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(m.dfnr, Some(0.0));
        assert_eq!(m.d_m, Some(m.dfpr.unwrap().abs()));
    }

    #[test]
    fn as_written_conditions_on_prediction() {
        let o = GroupOutcomes {
            inside: counts(6, 2, 8, 4),
            outside: counts(6, 6, 4, 4),
        };
        let m = disparate_mistreatment(&o, Convention::AsWritten);
        // inside P(y=0|ŷ=1) = 2/8, outside 6/12; P(y=1|ŷ=0) = 4/12 vs 4/8
        assert!((m.dfpr.unwrap() - (0.25 - 0.5)).abs() < 1e-15);
        assert!((m.dfnr.unwrap() - (4.0 / 12.0 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn undefined_component_propagates() {
        let o = GroupOutcomes {
            inside: counts(3, 0, 0, 1),
            outside: counts(3, 1, 4, 1),
        };
        let m = disparate_mistreatment(&o, Convention::Standard);
        assert_eq!((m.dfpr, m.d_m), (None, None));
        assert!(m.dfnr.is_some());
    }

    #[test]
    fn p_rule_cases() {
        let rated = |a: u64, b: u64| GroupOutcomes {
            inside: counts(a, 0, 10 - a, 0),
            outside: counts(b, 0, 10 - b, 0),
        };
        assert_eq!(p_rule(&rated(3, 3)), Some(1.0));
        assert!((p_rule(&rated(4, 5)).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(p_rule(&rated(0, 3)), Some(0.0));
        assert_eq!(p_rule(&rated(0, 0)), Some(1.0));
        assert_eq!(p_rule(&rated(4, 5)), p_rule(&rated(4, 5).swapped()));
        let empty = GroupOutcomes {
            inside: ConfusionCounts::default(),
            outside: counts(1, 1, 1, 1),
        };
        assert_eq!(p_rule(&empty), None);
    }

    #[test]
    fn disparity_against_best() {
        let d = relative_disparity(&[0.9135, 0.8010], DisparityMode::Relative).unwrap();
        assert_eq!(d.baseline, 0);
        assert_eq!(d.values[0], 0.0);
        assert!((d.values[1] * 100.0 - -12.3).abs() < 0.05);
        let a = relative_disparity(&[0.9135, 0.8010], DisparityMode::Absolute).unwrap();
        assert!((a.values[1] + 0.1125).abs() < 1e-12);
        assert!(relative_disparity(&[0.0, 0.0], DisparityMode::Relative).is_err());
        assert!(relative_disparity(&[], DisparityMode::Absolute).is_err());
    }
}
