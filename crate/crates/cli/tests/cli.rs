use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
output_dir = "runs"
[synthetic]
num_users = 300
[train]
epochs = 2
batch_size = 32
[model]
embedding_size = 4
hidden_size = 8
representation_size = 4
mlp_hidden_size = 8
"#;

fn mta(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mta"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = mta(args, cwd);
    assert!(
        out.status.success(),
        "mta {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    ok(&["synth", "-c", "c.toml"], dir.path());
    dir
}

#[test]
fn help_documents_every_flag_and_default() {
    let tmp = tempfile::tempdir().unwrap();
    let top = ok(&["--help"], tmp.path());
    for cmd in ["synth", "ingest", "train", "eval", "attribute", "budget", "segment", "gradcheck"] {
        assert!(top.contains(cmd), "{cmd} missing from top-level help");
    }
    let cases: &[(&str, &[&str])] = &[
        ("synth", &["--config", "--out", "[default:"]),
        ("ingest", &["--log", "--config", "--out", "[default:"]),
        ("train", &["--data", "--config", "--out", "[default:"]),
        ("eval", &["--model", "--data", "--split", "[default: test]"]),
        ("attribute", &["--model", "--baseline", "--data", "--split", "first, last, linear or"]),
        (
            "budget",
            &["--attrib", "--fractions", "0.2,0.4,0.6,0.8,1.0", "--cost-scale", "1000", "--value", "--uncapped"],
        ),
        ("segment", &["--attrib", "--seed", "2020", "--split"]),
        ("gradcheck", &["--step", "[default: 0.000001]", "--tolerance", "[default: 0.0001]", "--seed"]),
    ];
    for (cmd, needles) in cases {
        let help = ok(&[cmd, "--help"], tmp.path());
        for n in *needles {
            assert!(help.contains(n), "`{cmd} --help` lacks {n}:\n{help}");
        }
    }
}

#[test]
fn pipeline_smoke() {
    let dir = setup();
    let d = dir.path();
    ok(&["train", "-c", "c.toml", "--data", "runs/synth"], d);
    let metrics = ok(&["eval", "-c", "c.toml", "--model", "runs/train", "--data", "runs/synth"], d);
    assert!(metrics.contains("log_loss_conversion"));
    ok(&["attribute", "-c", "c.toml", "--model", "runs/train", "--data", "runs/synth"], d);
    let attrib = "runs/attribute/attribution.jsonl";
    ok(&["budget", "-c", "c.toml", "--attrib", attrib, "--data", "runs/synth"], d);
    ok(&["segment", "-c", "c.toml", "--attrib", attrib, "--data", "runs/synth"], d);
    for f in [
        "synth/journeys.jsonl",
        "synth/ground_truth.json",
        "synth/vocab.json",
        "synth/split.json",
        "train/model.ckpt",
        "train/training_report.json",
        "train/training_history.csv",
        "eval/metrics.json",
        "eval/metrics.csv",
        "attribute/attribution.jsonl",
        "budget/budget_report.json",
        "budget/budget_sweep.csv",
        "segment/segments.json",
        "segment/user_groups.csv",
        "segment/affinity.csv",
    ] {
        assert!(d.join("runs").join(f).is_file(), "{f} missing");
    }
    let sweep = std::fs::read_to_string(d.join("runs/budget/budget_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 6);
    assert!(sweep.starts_with("fraction,cpa,cvr,true_conversions,expenditure,blacklisted"));
}

#[test]
fn uncapped_full_budget_matches_dataset_conversion_rate() {
    let dir = setup();
    let d = dir.path();
    ok(
        &["attribute", "-c", "c.toml", "--baseline", "last", "--data", "runs/synth", "--split", "all", "--out", "last.jsonl"],
        d,
    );
    ok(
        &[
            "budget", "-c", "c.toml", "--attrib", "last.jsonl", "--data", "runs/synth", "--split", "all", "--fractions", "1.0",
            "--uncapped", "--out", "unc",
        ],
        d,
    );
    let sweep = std::fs::read_to_string(d.join("unc/budget_sweep.csv")).unwrap();
    let row: Vec<&str> = sweep.lines().nth(1).unwrap().split(',').collect();
    let journeys = std::fs::read_to_string(d.join("runs/synth/journeys.jsonl")).unwrap();
    let total = journeys.lines().count() - 1;
    let converted = journeys.lines().skip(1).filter(|l| l.ends_with("\"converted\":true}")).count();
    assert_eq!(row[2].parse::<f64>().unwrap(), converted as f64 / total as f64);
    assert_eq!(row[5], "0");
}

#[test]
fn failures_exit_nonzero_with_one_line_and_leave_nothing() {
    let dir = setup();
    let d = dir.path();
    ok(&["attribute", "-c", "c.toml", "--baseline", "lr", "--data", "runs/synth", "--out", "lr.jsonl"], d);
    // Baseline credit has no conversion probabilities, so returns are undefined.
    let out = mta(&["segment", "-c", "c.toml", "--attrib", "lr.jsonl", "--data", "runs/synth", "--out", "seg"], d);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));
    assert!(!d.join("seg").exists());

    let out = mta(&["eval", "-c", "c.toml", "--model", "nowhere", "--data", "runs/synth"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("runs/eval").exists());

    std::fs::write(d.join("bad.toml"), "[train]\nepochs = 0\nlearning_rat = 1\n").unwrap();
    let out = mta(&["train", "-c", "bad.toml", "--data", "runs/synth", "--out", "m"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));

    let out = mta(&["attribute", "--baseline", "median", "--data", "runs/synth", "--out", "x.jsonl"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("x.jsonl").exists());
}

#[test]
fn checkpoint_is_tied_to_its_vocabulary() {
    let dir = setup();
    let d = dir.path();
    ok(&["train", "-c", "c.toml", "--data", "runs/synth"], d);
    let other = SMALL.replace("num_users = 300", "num_users = 300\ncovariate_cardinalities = [5, 5, 5]");
    std::fs::write(d.join("other.toml"), other).unwrap();
    ok(&["synth", "-c", "other.toml", "--out", "other"], d);
    let out = mta(&["eval", "-c", "c.toml", "--model", "runs/train", "--data", "other"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different vocabulary"));
}

#[test]
fn ingest_builds_a_dataset_from_a_log() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rows = vec!["timestamp\tuid\tcampaign\tclick\tcost\tconversion_id\tcat1\tcat2\tcat3\tcat4\tcat5\tcat6\tcat7\tcat8\tcat9".to_string()];
    for u in 0..30 {
        for t in 0..3 {
            let conv = if t == 2 && u % 2 == 0 { format!("c{u}") } else { "-1".into() };
            let channel = ["A", "B", "C"][(u + t) % 3];
            rows.push(format!("{t}\tu{u}\t{channel}\t{}\t0.01\t{conv}\tx{}\ty\tz\tw\tv\tq\tr\ts\tt", t % 2, u % 4));
        }
    }
    std::fs::write(d.join("log.tsv"), rows.join("\n")).unwrap();
    std::fs::write(d.join("c.toml"), "[data]\nchannels = [\"A\", \"B\", \"C\"]\n").unwrap();
    let summary = ok(&["ingest", "-c", "c.toml", "--log", "log.tsv", "--out", "data"], d);
    assert!(summary.contains("90 impressions"), "{summary}");
    for f in ["journeys.jsonl", "vocab.json", "split.json", "ingest_report.json"] {
        assert!(d.join("data").join(f).is_file(), "{f} missing");
    }
    ok(&["attribute", "--baseline", "linear", "--data", "data", "--out", "lin.jsonl"], d);
}

#[test]
fn gradcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&["gradcheck"], tmp.path());
    assert!(out.contains("max relative error"), "{out}");
}
