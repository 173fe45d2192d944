use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fairaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairaudit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fairaudit(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

/// A small synthetic cohort with a pair file.
fn cohort(dir: &Path, format: &str) -> PathBuf {
    let d = dir.join("cohort");
    ok(&[
        "synth", "--out-dir", &s(&d), "--seed", "3", "--identities-per-group", "12", "--samples-per-identity", "4",
        "--pairs-per-fold", "24", "--format", format,
    ]);
    d
}

fn inputs(d: &Path, embeddings: &str) -> Vec<String> {
    vec![
        "--embeddings".into(),
        s(&d.join(embeddings)),
        "--annotations".into(),
        s(&d.join("annotations.csv")),
        "--pairs".into(),
        s(&d.join("pairs.csv")),
    ]
}

fn run_with(cmd: &str, d: &Path, embeddings: &str, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![cmd.into()];
    args.extend(inputs(d, embeddings));
    args.extend(extra.iter().map(|a| a.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    fairaudit(&refs)
}

#[test]
fn audit_writes_all_sections_in_every_format() {
    let dir = tempfile::tempdir().unwrap();
    let d = cohort(dir.path(), "binary");
    let out = dir.path().join("out");
    let r = run_with("audit", &d, "embeddings.faem", &["--out-dir", &s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let names: Vec<&str> = json["sections"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        ["overall", "race", "race_gender", "race_age", "race_gender_age", "age_gap", "retrieval", "similarity", "fairness"]
    );
    assert_eq!(json["metadata"]["settings"]["pairs"], "960");
    for name in &names {
        assert!(out.join("csv").join(format!("{name}.csv")).is_file(), "{name}.csv");
    }
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("## Verification by Race\n"));
}

#[test]
fn csv_embeddings_give_the_same_report_as_binary() {
    let dir = tempfile::tempdir().unwrap();
    let bin = cohort(&dir.path().join("b"), "binary");
    let csv = cohort(&dir.path().join("c"), "csv");
    let mut reports = Vec::new();
    for (d, e) in [(&bin, "embeddings.faem"), (&csv, "embeddings.csv")] {
        let out = d.join("out");
        let r = run_with("verify", d, e, &["--out-dir", &s(&out), "--format", "json"]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
        v["metadata"]["inputs"] = serde_json::Value::Null;
        reports.push(v);
    }
    // The binary file stores f32, so thresholds move in the last digits while
    // every decision stays the same.
    let [a, b]: [(serde_json::Value, Vec<f64>); 2] = reports
        .into_iter()
        .map(|mut v| {
            let t = thresholds(&mut v);
            (v, t)
        })
        .collect::<Vec<_>>()
        .try_into()
        .unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.len(), b.1.len());
    for (x, y) in a.1.iter().zip(&b.1) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
}

/// Pulls every threshold out of a report, leaving nulls behind.
fn thresholds(v: &mut serde_json::Value) -> Vec<f64> {
    let mut out = Vec::new();
    for section in v["sections"].as_array_mut().unwrap() {
        for row in section["rows"].as_array_mut().unwrap() {
            for cell in row["cells"].as_array_mut().unwrap() {
                if let Some(t) = cell["threshold"].take().as_f64() {
                    out.push(t);
                }
            }
        }
    }
    out
}

#[test]
fn verify_and_retrieve_emit_their_sections_only() {
    let dir = tempfile::tempdir().unwrap();
    let d = cohort(dir.path(), "binary");
    for (cmd, want) in [("verify", vec!["overall", "race"]), ("retrieve", vec!["retrieval"])] {
        let out = dir.path().join(cmd);
        let r = run_with(cmd, &d, "embeddings.faem", &["--out-dir", &s(&out), "--format", "json"]);
        assert!(r.status.success(), "{cmd}: {}", String::from_utf8_lossy(&r.stderr));
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
        let names: Vec<&str> = json["sections"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
        assert_eq!(names, want, "{cmd}");
    }
}

#[test]
fn groupby_limits_the_fairness_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = cohort(dir.path(), "binary");
    let out = dir.path().join("out");
    let r = run_with("audit", &d, "embeddings.faem", &["--out-dir", &s(&out), "--format", "csv", "--groupby", "gender,race"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let fairness = std::fs::read_to_string(out.join("csv/fairness.csv")).unwrap();
    // 8 race × gender rows, four metrics each.
    assert_eq!(fairness.lines().count(), 1 + 8 * 4);
    assert!(!out.join("report.json").exists());
}

#[test]
fn missing_input_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = cohort(dir.path(), "binary");
    std::fs::remove_file(d.join("annotations.csv")).unwrap();
    let out = dir.path().join("out");
    let r = run_with("audit", &d, "embeddings.faem", &["--out-dir", &s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("annotations.csv"));
    assert!(!out.exists());
}

#[test]
fn malformed_input_and_bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = cohort(dir.path(), "binary");
    let out = dir.path().join("out");
    std::fs::write(d.join("pairs.csv"), "sample_a,sample_b,genuine,fold\nid00000_000,ghost,1,0\n").unwrap();
    let r = run_with("audit", &d, "embeddings.faem", &["--out-dir", &s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("row 1"), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(!out.exists());

    for extra in [vec!["--fpr-target", "0"], vec!["--format", "xml"], vec!["--groupby", "height"], vec!["--bogus"]] {
        let mut args = vec!["--out-dir", "unused"];
        args.extend(extra.iter());
        let r = run_with("audit", &d, "embeddings.faem", &args);
        assert_eq!(r.status.code(), Some(2), "{extra:?}");
    }
    assert!(!Path::new("unused").exists());
}

#[test]
fn project_writes_coordinates_figures_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let d = cohort(dir.path(), "binary");
    for method in ["pca", "tsne"] {
        let out = dir.path().join(method);
        ok(&[
            "project", "--embeddings", &s(&d.join("embeddings.faem")), "--annotations", &s(&d.join("annotations.csv")),
            "--method", method, "--iterations", "300", "--out-dir", &s(&out),
        ]);
        for attr in ["race", "gender", "age"] {
            let coords = std::fs::read_to_string(out.join(format!("projection_{attr}.csv"))).unwrap();
            assert_eq!(coords.lines().count(), 1 + 384);
            assert!(coords.starts_with(&format!("sample_id,x,y,{attr}\n")));
            let svg = std::fs::read_to_string(out.join(format!("projection_{attr}.svg"))).unwrap();
            assert!(svg.starts_with("<svg"));
        }
        let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("projection_meta.json")).unwrap()).unwrap();
        assert_eq!(meta["method"], method);
    }
}

#[test]
fn loss_check_passes() {
    let out = ok(&["loss-check", "--cases", "20"]);
    assert!(out.trim_end().ends_with("PASS"), "{out}");
}

#[test]
fn replay_tables_reproduces_the_published_annotations() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/published_tables.csv");
    let md = ok(&["replay-tables", "--input", &s(&data)]);
    let summary = md.lines().last().unwrap();
    let (matched, rest) = summary.split_once(" of ").unwrap();
    assert_eq!(matched, rest.split_whitespace().next().unwrap(), "{summary}");
    assert!(md.contains("(-12.3%)"));

    let dir = tempfile::tempdir().unwrap();
    ok(&["replay-tables", "--input", &s(&data), "--out-dir", &s(dir.path())]);
    for f in ["replay.json", "replay.csv", "replay.md"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}
