//! Command-line surface. [`run`] is the whole program minus process exit.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairaudit_core::projection::{pca2, tsne, TsneConfig};
use fairaudit_core::synthetic::{generate_cohort, CohortSpec, SubgroupSpec};
use fairaudit_core::{
    verification, AgeBin, Attribute, Convention, PairPolicy, SimilarityMetric, SubgroupSelector, ThresholdPolicy,
};

use crate::audit::{self, AuditConfig, AuditInputs, InputPaths, PairGeneration, SectionKind};
use crate::error::{Error, Result, StageExt};
use crate::figure;
use crate::io::{self, EmbeddingFormat};
use crate::losscheck::{run_loss_check, LossCheckConfig};
use crate::replay;
use crate::report::{emit, AuditReport, Cell, Column, OutputFormat, Row, Section};

#[derive(Debug, Parser)]
#[command(name = "fairaudit", version, about = "Demographic bias audits for face-verification embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full analysis: verification slices, age gaps, retrieval, similarity, fairness.
    Audit(AuditArgs),
    /// Overall and per-slice verification accuracy and TPR@FPR.
    Verify(AuditArgs),
    /// Retrieval mAP and TPR per demographic group.
    Retrieve(AuditArgs),
    /// 2-D projection (t-SNE or PCA) with coordinate CSVs and SVG scatter plots.
    Project(ProjectArgs),
    /// Writes a synthetic cohort: embeddings, annotations and pairs.
    Synth(SynthArgs),
    /// Checks the margin loss against softmax and finite differences.
    LossCheck(LossCheckArgs),
    /// Re-derives disparity annotations from published aggregate values.
    ReplayTables(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Cosine,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Both,
    Either,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConventionArg {
    Standard,
    AsWritten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IdentityArg {
    CrossIdentity,
    AllPairs,
}

#[derive(Debug, Clone, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Pair CSV; without it a balanced protocol is drawn within each race.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub pairs_per_fold: usize,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Drop unmatched embeddings/annotations instead of failing.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub normalize: Switch,
    #[arg(long, default_value_t = 0.01)]
    pub fpr_target: f64,
    #[arg(long, default_value_t = 0.005)]
    pub retrieval_fpr_target: f64,
    #[arg(long, value_enum, default_value_t = PolicyArg::Both)]
    pub policy: PolicyArg,
    #[arg(long, value_enum, default_value_t = ConventionArg::Standard)]
    pub convention: ConventionArg,
    /// Global threshold for fairness metrics: `fpr` (at --fpr-target),
    /// `max-accuracy`, or a number.
    #[arg(long, default_value = "fpr")]
    pub threshold: String,
    #[arg(long, value_enum, default_value_t = IdentityArg::CrossIdentity)]
    pub identity_policy: IdentityArg,
    /// Comma list of race, gender, age. Audit: fairness sweep attributes
    /// (default race,gender,age). Verify: slicing (default race).
    /// Retrieve: groups (default race,gender,age).
    #[arg(long)]
    pub groupby: Option<String>,
    /// Annotator validation CSV (`sample_id,group,true_label,pred_label`).
    #[arg(long)]
    pub annotator: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma list of json, csv, markdown.
    #[arg(long, default_value = "json,csv,markdown")]
    pub format: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Tsne,
    Pca,
}

#[derive(Debug, Clone, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub lenient: bool,
    #[arg(long, value_enum, default_value_t = MethodArg::Tsne)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 200.0)]
    pub learning_rate: f64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub normalize: Switch,
    /// Attributes to color by, one figure each.
    #[arg(long, default_value = "race,gender,age")]
    pub groupby: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbeddingFormatArg {
    Binary,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Identities in each of the 8 race × gender subgroups, spread over the
    /// six age bins.
    #[arg(long, default_value_t = 25)]
    pub identities_per_group: usize,
    #[arg(long, default_value_t = 6)]
    pub samples_per_identity: usize,
    /// Within-identity noise of the first race.
    #[arg(long, default_value_t = 0.8)]
    pub noise: f64,
    /// Added to the noise once per race, in Caucasian, African, Asian, Indian
    /// order, so later races are harder to verify.
    #[arg(long, default_value_t = 0.1)]
    pub noise_step: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dispersion: f64,
    #[arg(long, default_value_t = 1.0)]
    pub pull: f64,
    /// Per-sample age-bin jitter, so genuine pairs span age gaps.
    #[arg(long, default_value_t = 1)]
    pub age_spread: u8,
    #[arg(long, default_value_t = 100)]
    pub pairs_per_fold: usize,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = EmbeddingFormatArg::Binary)]
    pub format: EmbeddingFormatArg,
}

#[derive(Debug, Clone, Args)]
pub struct LossCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub cases: usize,
    #[arg(long, default_value_t = 5)]
    pub samples: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 8.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0.5)]
    pub margin: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// CSV `section,scope,group,metric,value[,mode][,baseline][,reported]`.
    #[arg(long)]
    pub input: PathBuf,
    /// Without an output directory the Markdown table goes to stdout.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value = "json,csv,markdown")]
    pub format: String,
}

pub fn parse_groupby(s: &str) -> Result<Vec<Attribute>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let a = match part {
            "race" => Attribute::Race,
            "gender" => Attribute::Gender,
            "age" | "age_bin" => Attribute::AgeBin,
            other => return Err(Error::Usage(format!("unknown groupby attribute `{other}` (race, gender, age)"))),
        };
        if !out.contains(&a) {
            out.push(a);
        }
    }
    if out.is_empty() {
        return Err(Error::Usage("--groupby needs at least one attribute".into()));
    }
    // Canonical order keeps section names and scopes stable.
    out.sort();
    Ok(out)
}

pub fn parse_formats(s: &str) -> Result<Vec<OutputFormat>> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let f: OutputFormat = part.parse().map_err(Error::Usage)?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    if out.is_empty() {
        return Err(Error::Usage("--format needs at least one of json, csv, markdown".into()));
    }
    Ok(out)
}

fn parse_threshold(s: &str, fpr: f64) -> Result<ThresholdPolicy> {
    match s {
        "fpr" => Ok(ThresholdPolicy::AtFpr(fpr)),
        "max-accuracy" => Ok(ThresholdPolicy::MaxAccuracy),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .map(ThresholdPolicy::Fixed)
            .ok_or_else(|| Error::Usage(format!("--threshold must be fpr, max-accuracy or a number, got `{other}`"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Audit,
    Verify,
    Retrieve,
}

fn audit_config(a: &AuditArgs, mode: Mode) -> Result<AuditConfig> {
    let groupby = a.groupby.as_deref().map(parse_groupby).transpose()?;
    let sections = match mode {
        Mode::Audit => SectionKind::full(groupby.unwrap_or_else(|| vec![Attribute::Race, Attribute::Gender, Attribute::AgeBin])),
        Mode::Verify => vec![SectionKind::Overall, SectionKind::Slices(groupby.unwrap_or_else(|| vec![Attribute::Race]))],
        Mode::Retrieve => vec![SectionKind::Retrieval(
            groupby.unwrap_or_else(|| vec![Attribute::Race, Attribute::Gender, Attribute::AgeBin]),
        )],
    };
    Ok(AuditConfig {
        metric: match a.metric {
            MetricArg::Cosine => SimilarityMetric::Cosine,
            MetricArg::Euclidean => SimilarityMetric::EuclideanAsSimilarity,
        },
        normalize: a.normalize == Switch::On,
        fpr_target: a.fpr_target,
        retrieval_fpr_target: a.retrieval_fpr_target,
        policy: match a.policy {
            PolicyArg::Both => PairPolicy::Both,
            PolicyArg::Either => PairPolicy::Either,
        },
        convention: match a.convention {
            ConventionArg::Standard => Convention::Standard,
            ConventionArg::AsWritten => Convention::AsWritten,
        },
        threshold: parse_threshold(&a.threshold, a.fpr_target)?,
        identity_policy: match a.identity_policy {
            IdentityArg::CrossIdentity => fairaudit_core::similarity::IdentityPolicy::CrossIdentityOnly,
            IdentityArg::AllPairs => fairaudit_core::similarity::IdentityPolicy::AllPairs,
        },
        seed: a.seed,
        sections,
    })
}

/// Per-(group, class) annotator FPR as a report section.
pub fn annotator_section(path: &Path) -> Result<Section> {
    let t = io::load_annotator_table(path)?;
    let rows = verification::annotator_fpr(&t.predicted, &t.truth, &t.groups).stage("annotator validation")?;
    Ok(Section {
        name: "annotator".into(),
        title: "Annotator validation FPR".into(),
        count_label: "Negatives".into(),
        columns: vec![Column {
            metric: "fpr".into(),
            label: "FPR".into(),
        }],
        notes: vec!["one-vs-rest FPR = FP / (FP + TN) per group and class".into()],
        rows: rows
            .into_iter()
            .map(|r| Row {
                scope: r.group.clone(),
                group: format!("{} {}", r.group, r.label),
                cells: vec![Cell::new("fpr", r.fpr, r.false_positives + r.true_negatives)],
            })
            .collect(),
    })
}

/// Loads inputs and computes the report for one of the audit-style commands.
fn build_report(a: &AuditArgs, mode: Mode) -> Result<AuditReport> {
    let cfg = audit_config(a, mode)?;
    let paths = InputPaths {
        embeddings: &a.embeddings,
        annotations: &a.annotations,
        pairs: a.pairs.as_deref(),
    };
    let generation = PairGeneration {
        per_fold: a.pairs_per_fold,
        folds: a.folds,
    };
    let inputs = if mode == Mode::Retrieve {
        cohort_only(&paths, a.lenient)?
    } else {
        audit::load_inputs(&paths, a.lenient, a.seed, generation)?
    };
    let mut report = audit::run_audit(&inputs, &cfg)?;
    if let Some(p) = &a.annotator {
        report.sections.push(annotator_section(p)?);
        report.metadata.inputs.insert("annotator".into(), p.display().to_string());
    }
    Ok(report)
}

fn cohort_only(paths: &InputPaths<'_>, lenient: bool) -> Result<AuditInputs> {
    let e = io::load_embeddings(paths.embeddings, None)?;
    let ann = io::load_annotations(paths.annotations)?;
    let mode = if lenient { fairaudit_core::JoinMode::Lenient } else { fairaudit_core::JoinMode::Strict };
    let (cohort, _) = fairaudit_core::AnnotatedCohort::join(e, ann, mode).stage("join cohort")?;
    let mut sources = std::collections::BTreeMap::new();
    sources.insert("embeddings".into(), paths.embeddings.display().to_string());
    sources.insert("annotations".into(), paths.annotations.display().to_string());
    Ok(AuditInputs {
        cohort,
        pairs: Vec::new(),
        sources,
        notes: Vec::new(),
    })
}

fn project(a: &ProjectArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let attrs = parse_groupby(&a.groupby)?;
    let e = io::load_embeddings(&a.embeddings, None)?;
    let ann = io::load_annotations(&a.annotations)?;
    let mode = if a.lenient { fairaudit_core::JoinMode::Lenient } else { fairaudit_core::JoinMode::Strict };
    let (mut cohort, _) = fairaudit_core::AnnotatedCohort::join(e, ann, mode).stage("join cohort")?;
    if a.normalize == Switch::On {
        cohort = cohort.normalized().stage("normalize")?;
    }
    let cfg = TsneConfig {
        perplexity: a.perplexity,
        iterations: a.iterations,
        learning_rate: a.learning_rate,
        seed: a.seed,
        ..TsneConfig::default()
    };
    let proj = match a.method {
        MethodArg::Tsne => tsne(cohort.embeddings(), &cfg).stage("t-SNE")?,
        MethodArg::Pca => pca2(cohort.embeddings()).stage("PCA")?,
    };
    let mut files: Vec<(String, String)> = Vec::new();
    for &attr in &attrs {
        let labels: Vec<&str> = cohort.annotations().iter().map(|x| figure::label_of(x, attr)).collect();
        let owned: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        let name = attr.as_str();
        files.push((
            format!("projection_{name}.csv"),
            io::encode_coordinates(&proj.ids, &proj.coords, name, &owned),
        ));
        let title = format!("{} projection by {name}", proj.method.as_str());
        files.push((format!("projection_{name}.svg"), figure::scatter_svg(&title, &proj.coords, &labels, attr)));
    }
    let meta = serde_json::json!({
        "schema": crate::report::SCHEMA,
        "tool_version": audit::TOOL_VERSION,
        "method": proj.method.as_str(),
        "seed": a.seed,
        "normalize": a.normalize == Switch::On,
        "tsne": {
            "perplexity": cfg.perplexity,
            "iterations": cfg.iterations,
            "learning_rate": cfg.learning_rate,
            "early_exaggeration": cfg.early_exaggeration,
            "exaggeration_iters": cfg.exaggeration_iters,
            "initial_momentum": cfg.initial_momentum,
            "final_momentum": cfg.final_momentum,
            "momentum_switch": cfg.momentum_switch,
            "init_std": cfg.init_std,
        },
        "final_objective": proj.final_objective,
        "trace": proj.trace,
        "unconverged_rows": proj.unconverged_rows,
        "degenerate_component": proj.degenerate_component,
    });
    files.push(("projection_meta.json".into(), format!("{}\n", serde_json::to_string_pretty(&meta).expect("json"))));
    for (name, body) in &files {
        io::write_atomic(&a.out_dir.join(name), body.as_bytes())?;
    }
    let _ = writeln!(out, "{} projection of {} samples written to {}", proj.method.as_str(), proj.ids.len(), a.out_dir.display());
    Ok(())
}

fn synth(a: &SynthArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let mut spec = CohortSpec { dim: a.dim, seed: a.seed, groups: Vec::new() };
    for (k, &race) in fairaudit_core::Race::ALL.iter().enumerate() {
        for &gender in &fairaudit_core::Gender::ALL {
            for bin in AgeBin::all() {
                let i = bin.index() as usize;
                let identities = a.identities_per_group / AgeBin::COUNT + usize::from(i < a.identities_per_group % AgeBin::COUNT);
                if identities == 0 {
                    continue;
                }
                let mut g = SubgroupSpec::new(race, gender, bin, identities, a.samples_per_identity);
                g.noise = a.noise + k as f64 * a.noise_step;
                g.dispersion = a.dispersion;
                g.pull = a.pull;
                g.age_spread = a.age_spread;
                spec.groups.push(g);
            }
        }
    }
    let cohort = generate_cohort(&spec).stage("generate cohort")?;
    let strata: Vec<SubgroupSelector> = fairaudit_core::Race::ALL.iter().map(|&r| SubgroupSelector::race(r)).collect();
    let pairs = fairaudit_core::protocol::generate_stratified_pairs(
        &cohort,
        &strata,
        a.pairs_per_fold,
        a.folds,
        true,
        audit::derive_seed(a.seed, 1),
    )
    .stage("generate pairs")?;
    let (format, name) = match a.format {
        EmbeddingFormatArg::Binary => (EmbeddingFormat::Binary, "embeddings.faem"),
        EmbeddingFormatArg::Csv => (EmbeddingFormat::Csv, "embeddings.csv"),
    };
    let ann = io::encode_annotations(cohort.annotations());
    let pair_csv = io::encode_pairs(&pairs);
    let emb = match format {
        EmbeddingFormat::Binary => io::encode_embeddings_binary(cohort.embeddings()).map_err(Error::Invariant)?,
        EmbeddingFormat::Csv => io::encode_embeddings_csv(cohort.embeddings()).into_bytes(),
    };
    io::write_atomic(&a.out_dir.join(name), &emb)?;
    io::write_atomic(&a.out_dir.join("annotations.csv"), ann.as_bytes())?;
    io::write_atomic(&a.out_dir.join("pairs.csv"), pair_csv.as_bytes())?;
    let _ = writeln!(
        out,
        "{} samples, {} identities, {} pairs written to {}",
        cohort.len(),
        spec.identities(),
        pairs.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn replay_tables(a: &ReplayArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let rows = replay::replay(&replay::parse_replay_csv(&text, &a.input)?)?;
    match &a.out_dir {
        None => {
            let _ = write!(out, "{}", replay::to_markdown(&rows));
        }
        Some(dir) => {
            for f in parse_formats(&a.format)? {
                let (name, body) = match f {
                    OutputFormat::Json => ("replay.json", replay::to_json(&rows)),
                    OutputFormat::Csv => ("replay.csv", replay::to_csv(&rows)),
                    OutputFormat::Markdown => ("replay.md", replay::to_markdown(&rows)),
                };
                io::write_atomic(&dir.join(name), body.as_bytes())?;
            }
            let matched = rows.iter().filter(|r| r.matches == Some(true)).count();
            let checked = rows.iter().filter(|r| r.matches.is_some()).count();
            let _ = writeln!(out, "{matched} of {checked} published annotations reproduced; written to {}", dir.display());
        }
    }
    Ok(())
}

/// Executes a parsed command, writing progress lines to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<()> {
    match cli.command {
        Command::Audit(a) => run_report(&a, Mode::Audit, out),
        Command::Verify(a) => run_report(&a, Mode::Verify, out),
        Command::Retrieve(a) => run_report(&a, Mode::Retrieve, out),
        Command::Project(a) => project(&a, out),
        Command::Synth(a) => synth(&a, out),
        Command::LossCheck(a) => {
            let cfg = LossCheckConfig {
                seed: a.seed,
                cases: a.cases,
                samples: a.samples,
                classes: a.classes,
                dim: a.dim,
                scale: a.scale,
                margin: a.margin,
                ..LossCheckConfig::default()
            };
            let r = run_loss_check(&cfg)?;
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&r).expect("json"));
            let _ = writeln!(out, "{}", if r.passed() { "PASS" } else { "FAIL" });
            if r.passed() {
                Ok(())
            } else {
                Err(Error::Invariant("margin loss check failed".into()))
            }
        }
        Command::ReplayTables(a) => replay_tables(&a, out),
    }
}

fn run_report(a: &AuditArgs, mode: Mode, out: &mut dyn std::io::Write) -> Result<()> {
    let formats = parse_formats(&a.format)?;
    let report = build_report(a, mode)?;
    let written = emit(&report, &formats, &a.out_dir)?;
    let _ = writeln!(out, "{} file(s) written to {}", written.len(), a.out_dir.display());
    Ok(())
}
