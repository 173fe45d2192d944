//! Runs the metric stages over a cohort and assembles an [`AuditReport`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fairaudit_core::fairness::{fairness_sweep, DisparityMode};
use fairaudit_core::protocol::{age_gap, enumerate_intersections, generate_stratified_pairs, resolve_pairs, validate_pairs};
use fairaudit_core::retrieval::map_by_slice;
use fairaudit_core::similarity::{group_similarity_with, IdentityPolicy, SimilarityOptions, UnitVectors};
use fairaudit_core::verification::{kfold_accuracy, roc, score_pairs, tpr_at_fpr};
use fairaudit_core::{
    AnnotatedCohort, Attribute, Convention, JoinMode, PairPolicy, ScoredPairs, SimilarityMetric, SubgroupSelector,
    ThresholdPolicy, VerificationPair,
};
use rayon::prelude::*;

use crate::error::{Error, Result, StageExt};
use crate::io;
use crate::report::{annotate_disparities, AuditReport, Cell, Column, Metadata, Row, Section, SCHEMA};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SectionKind {
    Overall,
    /// Verification metrics per intersection of the listed attributes.
    Slices(Vec<Attribute>),
    AgeGap,
    Retrieval(Vec<Attribute>),
    Similarity(Vec<Attribute>),
    Fairness(Vec<Attribute>),
}

impl SectionKind {
    pub fn name(&self) -> String {
        let join = |a: &[Attribute]| a.iter().map(|x| x.as_str()).collect::<Vec<_>>().join("_");
        match self {
            SectionKind::Overall => "overall".into(),
            SectionKind::Slices(a) => join(a),
            SectionKind::AgeGap => "age_gap".into(),
            SectionKind::Retrieval(_) => "retrieval".into(),
            SectionKind::Similarity(_) => "similarity".into(),
            SectionKind::Fairness(_) => "fairness".into(),
        }
    }

    /// The full analysis: overall, four slicings, age gap, retrieval,
    /// similarity and a fairness sweep over `fairness_attrs`.
    pub fn full(fairness_attrs: Vec<Attribute>) -> Vec<SectionKind> {
        use Attribute::*;
        vec![
            SectionKind::Overall,
            SectionKind::Slices(vec![Race]),
            SectionKind::Slices(vec![Race, Gender]),
            SectionKind::Slices(vec![Race, AgeBin]),
            SectionKind::Slices(vec![Race, Gender, AgeBin]),
            SectionKind::AgeGap,
            SectionKind::Retrieval(vec![Race, Gender, AgeBin]),
            SectionKind::Similarity(vec![Race, Gender, AgeBin]),
            SectionKind::Fairness(fairness_attrs),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    pub metric: SimilarityMetric,
    pub normalize: bool,
    pub fpr_target: f64,
    pub retrieval_fpr_target: f64,
    pub policy: PairPolicy,
    pub convention: Convention,
    pub threshold: ThresholdPolicy,
    pub identity_policy: IdentityPolicy,
    pub seed: u64,
    pub sections: Vec<SectionKind>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            metric: SimilarityMetric::Cosine,
            normalize: true,
            fpr_target: 0.01,
            retrieval_fpr_target: 0.005,
            policy: PairPolicy::Both,
            convention: Convention::Standard,
            threshold: ThresholdPolicy::AtFpr(0.01),
            identity_policy: IdentityPolicy::CrossIdentityOnly,
            seed: 0,
            sections: SectionKind::full(vec![Attribute::Race, Attribute::Gender, Attribute::AgeBin]),
        }
    }
}

/// Where pairs come from when no pair file is given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeneration {
    pub per_fold: usize,
    pub folds: usize,
}

impl Default for PairGeneration {
    fn default() -> Self {
        Self { per_fold: 100, folds: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditInputs {
    pub cohort: AnnotatedCohort,
    pub pairs: Vec<VerificationPair>,
    pub sources: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

/// Sub-seed `k` of the root seed.
pub fn derive_seed(root: u64, k: u64) -> u64 {
    let mut z = root.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct InputPaths<'a> {
    pub embeddings: &'a Path,
    pub annotations: &'a Path,
    pub pairs: Option<&'a Path>,
}

/// Loads and joins the inputs. Without a pair file, a balanced protocol is
/// drawn inside each race (no cross-race pairs) from a sub-seed of `seed`.
pub fn load_inputs(paths: &InputPaths<'_>, lenient: bool, seed: u64, generation: PairGeneration) -> Result<AuditInputs> {
    let embeddings = io::load_embeddings(paths.embeddings, None)?;
    let annotations = io::load_annotations(paths.annotations)?;
    let mode = if lenient { JoinMode::Lenient } else { JoinMode::Strict };
    let (cohort, summary) = AnnotatedCohort::join(embeddings, annotations, mode).stage("join cohort")?;
    let mut sources = BTreeMap::new();
    let show = |p: &Path| p.display().to_string();
    sources.insert("embeddings".to_string(), show(paths.embeddings));
    sources.insert("annotations".to_string(), show(paths.annotations));
    let mut notes = Vec::new();
    if summary.dropped() > 0 {
        notes.push(format!(
            "lenient join dropped {} embedding(s) and {} annotation(s) without a counterpart",
            summary.dropped_embeddings.len(),
            summary.dropped_annotations.len()
        ));
    }
    let pairs = match paths.pairs {
        Some(p) => {
            sources.insert("pairs".to_string(), show(p));
            let raw = io::load_pairs(p)?;
            let n = raw.len();
            let pairs = validate_pairs(raw.clone(), &cohort).map_err(|e| match e {
                fairaudit_core::Error::UnknownSample(_)
                | fairaudit_core::Error::SelfPair(_)
                | fairaudit_core::Error::GenuineContradiction { .. } => {
                    let row = raw.iter().position(|q| validate_pairs(vec![q.clone()], &cohort).is_err());
                    Error::format(p, row.map(|i| i + 1), e.to_string())
                }
                other => Error::Stage {
                    stage: "validate pairs",
                    source: other,
                },
            })?;
            if pairs.len() < n {
                notes.push(format!("{} repeated pair(s) removed, first occurrence kept", n - pairs.len()));
            }
            pairs
        }
        None => {
            let strata: Vec<SubgroupSelector> = fairaudit_core::Race::ALL
                .iter()
                .map(|&r| SubgroupSelector::race(r))
                .filter(|s| cohort.annotations().iter().any(|a| s.matches(a)))
                .collect();
            let pairs = generate_stratified_pairs(&cohort, &strata, generation.per_fold, generation.folds, true, derive_seed(seed, 1))
                .stage("generate pairs")?;
            sources.insert(
                "pairs".to_string(),
                format!("generated: {} per fold x {} folds per race, balanced", generation.per_fold, generation.folds),
            );
            pairs
        }
    };
    Ok(AuditInputs {
        cohort,
        pairs,
        sources,
        notes,
    })
}

/// Scored pairs plus everything the sections share.
struct Prepared<'a> {
    cfg: &'a AuditConfig,
    cohort: AnnotatedCohort,
    pairs: &'a [VerificationPair],
    scored: ScoredPairs,
    folds: Vec<u32>,
    endpoints: Vec<(usize, usize)>,
}

fn threshold_label(t: ThresholdPolicy) -> String {
    match t {
        ThresholdPolicy::AtFpr(f) => format!("global threshold at overall FPR <= {f}"),
        ThresholdPolicy::MaxAccuracy => "global threshold maximizing overall accuracy".into(),
        ThresholdPolicy::Fixed(t) => format!("fixed global threshold {t}"),
    }
}

fn pct(f: f64) -> String {
    let p = f * 100.0;
    format!("{p}%")
}

fn metadata(cfg: &AuditConfig, inputs: &AuditInputs) -> Metadata {
    let mut s = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        s.insert(k.to_string(), v);
    };
    put("metric", cfg.metric.as_str().into());
    put("normalize", if cfg.normalize { "on" } else { "off" }.into());
    put("fpr_target", cfg.fpr_target.to_string());
    put("retrieval_fpr_target", cfg.retrieval_fpr_target.to_string());
    put("pair_policy", match cfg.policy {
        PairPolicy::Both => "both",
        PairPolicy::Either => "either",
    }
    .into());
    put("convention", cfg.convention.as_str().into());
    put("threshold_policy", threshold_label(cfg.threshold));
    put("identity_policy", cfg.identity_policy.as_str().into());
    put("sections", cfg.sections.iter().map(SectionKind::name).collect::<Vec<_>>().join(","));
    put("pairs", inputs.pairs.len().to_string());
    put("samples", inputs.cohort.len().to_string());
    let mut notes = inputs.notes.clone();
    notes.extend([
        "accuracy: k-fold over the pair folds, each fold scored at the threshold maximizing accuracy on the other folds; std is the population std across folds".to_string(),
        "TPR@FPR: operating point with the largest empirical FPR not above the target, no interpolation".to_string(),
        "scores are similarities (higher means same identity); euclidean distances are negated".to_string(),
    ]);
    Metadata {
        tool_version: TOOL_VERSION.to_string(),
        seed: cfg.seed,
        inputs: inputs.sources.clone(),
        settings: s,
        notes,
    }
}

/// Computes every configured section. Sections run in parallel; the report
/// is only returned once all of them succeeded.
pub fn run_audit(inputs: &AuditInputs, cfg: &AuditConfig) -> Result<AuditReport> {
    if !(cfg.fpr_target > 0.0 && cfg.fpr_target < 1.0) || !(cfg.retrieval_fpr_target > 0.0 && cfg.retrieval_fpr_target < 1.0) {
        return Err(Error::Usage("FPR targets must lie in (0, 1)".into()));
    }
    let cohort = if cfg.normalize {
        inputs.cohort.normalized().stage("normalize")?
    } else {
        inputs.cohort.clone()
    };
    let scored = score_pairs(&inputs.pairs, &cohort, cfg.metric).stage("score pairs")?;
    let endpoints = resolve_pairs(&inputs.pairs, &cohort).stage("score pairs")?;
    let prep = Prepared {
        cfg,
        folds: inputs.pairs.iter().map(|p| p.fold).collect(),
        cohort,
        pairs: &inputs.pairs,
        scored,
        endpoints,
    };
    let sections = with_pool(|| cfg.sections.par_iter().map(|k| build_section(&prep, k)).collect::<Result<Vec<_>>>())?;
    Ok(AuditReport {
        schema: SCHEMA,
        metadata: metadata(cfg, inputs),
        sections,
    })
}

/// Runs `f` on a pool capped by `FAIRAUDIT_THREADS` when that is set.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var("FAIRAUDIT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    match threads.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

fn build_section(p: &Prepared<'_>, kind: &SectionKind) -> Result<Section> {
    match kind {
        SectionKind::Overall => Ok(overall(p)),
        SectionKind::Slices(attrs) => slices(p, attrs),
        SectionKind::AgeGap => age_gaps(p),
        SectionKind::Retrieval(attrs) => retrieval(p, attrs),
        SectionKind::Similarity(attrs) => similarity(p, attrs),
        SectionKind::Fairness(attrs) => fairness(p, attrs),
    }
}

fn tpr_label(target: f64) -> String {
    format!("TPR@FPR={}", pct(target))
}

fn verification_columns(cfg: &AuditConfig) -> Vec<Column> {
    vec![
        Column {
            metric: "accuracy".into(),
            label: "Accuracy ± Std".into(),
        },
        Column {
            metric: "tpr_at_fpr".into(),
            label: tpr_label(cfg.fpr_target),
        },
    ]
}

/// Accuracy and TPR cells for the pairs at `idx`; degenerate slices give
/// undefined values rather than errors.
fn verification_cells(p: &Prepared<'_>, idx: &[usize]) -> Vec<Cell> {
    let n = idx.len() as u64;
    let sub = p.scored.subset(idx);
    let folds: Vec<u32> = idx.iter().map(|&i| p.folds[i]).collect();
    let acc = kfold_accuracy(&sub, &folds).ok();
    let curve = roc(&sub).ok();
    vec![
        Cell::new("accuracy", acc.as_ref().map(|a| a.mean), n).with_std(acc.as_ref().map(|a| a.std)),
        Cell::new("tpr_at_fpr", curve.as_ref().map(|c| tpr_at_fpr(c, p.cfg.fpr_target)), n)
            .with_threshold(curve.as_ref().map(|c| c.operating_point(p.cfg.fpr_target).threshold)),
    ]
}

fn overall(p: &Prepared<'_>) -> Section {
    let idx: Vec<usize> = (0..p.pairs.len()).collect();
    Section {
        name: "overall".into(),
        title: "Overall verification".into(),
        count_label: "Pairs".into(),
        columns: verification_columns(p.cfg),
        notes: vec![],
        rows: vec![Row {
            scope: "all".into(),
            group: "all".into(),
            cells: verification_cells(p, &idx),
        }],
    }
}

fn scope_of(sel: &SubgroupSelector, attrs: &[Attribute]) -> String {
    if attrs.len() < 2 {
        return "all".into();
    }
    match attrs[0] {
        Attribute::Race => sel.race.map_or("all", |r| r.as_str()).into(),
        Attribute::Gender => sel.gender.map_or("all", |g| g.as_str()).into(),
        Attribute::AgeBin => sel.age_bin.map_or("all", |b| b.label()).into(),
    }
}

fn title_of(attrs: &[Attribute]) -> String {
    attrs
        .iter()
        .map(|a| match a {
            Attribute::Race => "Race",
            Attribute::Gender => "Gender",
            Attribute::AgeBin => "Age",
        })
        .collect::<Vec<_>>()
        .join(" × ")
}

fn slices(p: &Prepared<'_>, attrs: &[Attribute]) -> Result<Section> {
    let selectors = enumerate_intersections(attrs, p.cfg.policy).stage("enumerate slices")?;
    let mut in_any = vec![false; p.pairs.len()];
    let mut rows = Vec::with_capacity(selectors.len());
    for sel in &selectors {
        let idx: Vec<usize> = p
            .endpoints
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| sel.matches_pair(p.cohort.annotation(a), p.cohort.annotation(b)))
            .map(|(k, _)| k)
            .collect();
        idx.iter().for_each(|&k| in_any[k] = true);
        rows.push(Row {
            scope: scope_of(sel, attrs),
            group: sel.to_string(),
            cells: verification_cells(p, &idx),
        });
    }
    let outside = in_any.iter().filter(|&&x| !x).count();
    let mut section = Section {
        name: SectionKind::Slices(attrs.to_vec()).name(),
        title: format!("Verification by {}", title_of(attrs)),
        count_label: "Pairs".into(),
        columns: verification_columns(p.cfg),
        notes: vec![format!("{outside} pair(s) fall in no slice under the pair policy")],
        rows,
    };
    annotate_disparities(&mut section, "accuracy", DisparityMode::Relative);
    annotate_disparities(&mut section, "tpr_at_fpr", DisparityMode::Relative);
    Ok(section)
}

fn age_gaps(p: &Prepared<'_>) -> Result<Section> {
    let gaps: Vec<u8> = p
        .pairs
        .iter()
        .map(|pair| age_gap(pair, &p.cohort))
        .collect::<fairaudit_core::Result<_>>()
        .stage("age gap")?;
    let mut rows = Vec::new();
    for race in fairaudit_core::Race::ALL {
        let sel = SubgroupSelector::race(race).with_policy(p.cfg.policy);
        for gap in 0..fairaudit_core::AgeBin::COUNT as u8 {
            let idx: Vec<usize> = (0..p.pairs.len())
                .filter(|&k| {
                    let (a, b) = p.endpoints[k];
                    gaps[k] == gap && sel.matches_pair(p.cohort.annotation(a), p.cohort.annotation(b))
                })
                .collect();
            rows.push(Row {
                scope: race.as_str().into(),
                group: format!("{race} gap {gap}"),
                cells: verification_cells(p, &idx),
            });
        }
    }
    let mut section = Section {
        name: "age_gap".into(),
        title: "Verification by age gap within race".into(),
        count_label: "Pairs".into(),
        columns: verification_columns(p.cfg),
        notes: vec!["age gap is the absolute difference of the two age-bin indices".into()],
        rows,
    };
    annotate_disparities(&mut section, "accuracy", DisparityMode::Relative);
    annotate_disparities(&mut section, "tpr_at_fpr", DisparityMode::Relative);
    Ok(section)
}

fn single_attribute_selectors(attrs: &[Attribute]) -> Result<Vec<(String, SubgroupSelector)>> {
    let mut out = Vec::new();
    for &a in attrs {
        for sel in enumerate_intersections(&[a], PairPolicy::Both).stage("enumerate slices")? {
            out.push((a.as_str().to_string(), sel));
        }
    }
    Ok(out)
}

fn retrieval(p: &Prepared<'_>, attrs: &[Attribute]) -> Result<Section> {
    let groups = single_attribute_selectors(attrs)?;
    let selectors: Vec<SubgroupSelector> = groups.iter().map(|(_, s)| *s).collect();
    let results = map_by_slice(&p.cohort, &selectors, p.cfg.metric, p.cfg.retrieval_fpr_target).stage("retrieval")?;
    let rows = groups
        .iter()
        .zip(results)
        .map(|((scope, sel), r)| Row {
            scope: scope.clone(),
            group: sel.to_string(),
            cells: vec![
                Cell::new("map", r.map, r.queries as u64),
                Cell::new("tpr_at_fpr", r.tpr_at_fpr, r.genuine_trials + r.impostor_trials),
                Cell::new("excluded_queries", Some(r.excluded_queries as f64), r.excluded_queries as u64),
            ],
        })
        .collect();
    let mut section = Section {
        name: "retrieval".into(),
        title: "Retrieval".into(),
        count_label: "Queries".into(),
        columns: vec![
            Column {
                metric: "map".into(),
                label: "mAP".into(),
            },
            Column {
                metric: "tpr_at_fpr".into(),
                label: tpr_label(p.cfg.retrieval_fpr_target),
            },
            Column {
                metric: "excluded_queries".into(),
                label: "Excluded queries".into(),
            },
        ],
        notes: vec![
            "every sample is a query against all other samples; slices restrict queries only".into(),
            "relevant means same identity; equal scores are ordered by sample id".into(),
            "queries whose identity has no other sample are excluded from mAP".into(),
        ],
        rows,
    };
    annotate_disparities(&mut section, "map", DisparityMode::Relative);
    annotate_disparities(&mut section, "tpr_at_fpr", DisparityMode::Relative);
    Ok(section)
}

fn similarity(p: &Prepared<'_>, attrs: &[Attribute]) -> Result<Section> {
    let groups = single_attribute_selectors(attrs)?;
    let units = UnitVectors::new(&p.cohort).stage("similarity")?;
    let opts = SimilarityOptions {
        identity_policy: p.cfg.identity_policy,
        seed: derive_seed(p.cfg.seed, 2),
        ..SimilarityOptions::default()
    };
    let mut rows = Vec::new();
    let mut sampled = false;
    for (scope, sel) in &groups {
        let stats = match group_similarity_with(&p.cohort, &units, sel, &opts) {
            Ok(s) => Some(s),
            Err(fairaudit_core::Error::Degenerate(_)) => None,
            Err(e) => return Err(Error::Stage { stage: "similarity", source: e }),
        };
        let cell = |metric: &str, s: Option<fairaudit_core::Summary>| {
            Cell::new(metric, s.map(|s| s.mean), s.map_or(0, |s| s.count)).with_std(s.map(|s| s.std))
        };
        let (inter, intra) = stats.as_ref().map_or((None, None), |s| (s.inter, s.intra));
        sampled |= inter.is_some_and(|s| s.sampled) || intra.is_some_and(|s| s.sampled);
        rows.push(Row {
            scope: scope.clone(),
            group: sel.to_string(),
            cells: vec![cell("inter", inter), cell("intra", intra)],
        });
    }
    let mut notes = vec![
        format!("pairs: {}; std is the population std", p.cfg.identity_policy.as_str()),
        "inter-group pairs have exactly one sample in the group; intra-group pairs have both".into(),
    ];
    if sampled {
        notes.push(format!(
            "statistics above {} pairs are estimated from {} seeded sampled pairs",
            opts.pair_cap, opts.sample_pairs
        ));
    }
    Ok(Section {
        name: "similarity".into(),
        title: "Cosine similarity within and across groups".into(),
        count_label: "Pairs".into(),
        columns: vec![
            Column {
                metric: "inter".into(),
                label: "Inter-group mean ± Std".into(),
            },
            Column {
                metric: "intra".into(),
                label: "Intra-group mean ± Std".into(),
            },
        ],
        notes,
        rows,
    })
}

fn fairness(p: &Prepared<'_>, attrs: &[Attribute]) -> Result<Section> {
    let selectors = enumerate_intersections(attrs, p.cfg.policy).stage("fairness sweep")?;
    let records = fairness_sweep(p.pairs, &p.cohort, &p.scored, &selectors, p.cfg.threshold, p.cfg.convention)
        .stage("fairness sweep")?;
    let threshold = records.first().map(|r| r.threshold_used);
    let rows = records
        .iter()
        .map(|r| {
            let n = r.inside_pairs();
            let t = Some(r.threshold_used);
            Row {
                scope: scope_of(&r.selector, attrs),
                group: r.selector.to_string(),
                cells: vec![
                    Cell::new("p_rule", r.p_rule, n).with_threshold(t),
                    Cell::new("d_m", r.d_m, n).with_threshold(t),
                    Cell::new("dfpr", r.dfpr, n).with_threshold(t),
                    Cell::new("dfnr", r.dfnr, n).with_threshold(t),
                ],
            }
        })
        .collect();
    let mut section = Section {
        name: "fairness".into(),
        title: format!("Fairness by {}", title_of(attrs)),
        count_label: "Pairs".into(),
        columns: ["p_rule:p%-rule", "d_m:D_M", "dfpr:DFPR", "dfnr:DFNR"]
            .iter()
            .map(|s| {
                let (m, l) = s.split_once(':').unwrap();
                Column {
                    metric: m.into(),
                    label: l.into(),
                }
            })
            .collect(),
        notes: vec![
            format!(
                "{} ({}); rates compare pairs inside the group with all other pairs",
                threshold_label(p.cfg.threshold),
                threshold.map_or_else(|| "no pairs".to_string(), |t| t.to_string())
            ),
            format!("DFPR/DFNR convention: {}; D_M = |DFPR| + |DFNR|", p.cfg.convention.as_str()),
        ],
        rows,
    };
    annotate_disparities(&mut section, "p_rule", DisparityMode::Relative);
    Ok(section)
}

/// Path of the report JSON inside an output directory.
pub fn report_path(out_dir: &Path) -> PathBuf {
    out_dir.join("report.json")
}
