//! End-to-end tests that drive the compiled `gnn` binary through its public
//! command-line interface and check exit codes, output files, and stdout.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gnn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should launch")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit code {code}; stdout:\n{}\nstderr:\n{}",
        stdout_of(out),
        stderr_of(out),
    );
}

fn repo_file(rel: &str) -> String {
    // Integration tests run with the crate root as the working directory,
    // so shared fixtures live one level up at the workspace root.
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
        .to_str()
        .expect("fixture path is valid UTF-8")
        .to_owned()
}

#[test]
fn train_graph_writes_report_and_metrics() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "train-graph",
        "--set",
        "dataset=structural",
        "--set",
        "count=16",
        "--set",
        "epochs=2",
        "--set",
        "hidden=4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 1);
    let metrics = runs[0]["metrics"].as_object().unwrap();
    for key in ["train_accuracy", "test_accuracy", "test_auc"] {
        assert!(metrics.contains_key(key), "missing metric {key}");
    }
    assert_eq!(runs[0]["task"], "graph-classification");
    assert_eq!(runs[0]["model"], "rgnn");
    assert_eq!(runs[0]["epoch_losses"].as_array().unwrap().len(), 2);
    assert!(report["mean_metrics"]["test_accuracy"].is_number());

    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("task,dataset,model,seed,metric,value"));
    let data_rows: Vec<&str> = lines.collect();
    assert_eq!(data_rows.len(), 3, "one row per metric");
    for row in &data_rows {
        assert!(row.starts_with("graph-classification,structural-classes,rgnn,0,"));
    }
}

#[test]
fn train_link_exports_embeddings_and_appends_metrics() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("run");
    let args = [
        "train-link",
        "--set",
        "dataset=two-clique",
        "--set",
        "model=gae",
        "--set",
        "epochs=20",
        "--set",
        "hidden=8",
        "--set",
        "latent=4",
        "--out",
        out_dir.to_str().unwrap(),
    ];
    let out = run(&args);
    assert_exit(&out, 0);

    let emb = fs::read_to_string(out_dir.join("embeddings.csv")).unwrap();
    let mut lines = emb.lines();
    assert_eq!(lines.next(), Some("vertex_id,dim_0,dim_1,dim_2,dim_3"));
    assert_eq!(
        lines.count(),
        20,
        "one row per vertex of the two-clique graph"
    );

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let metrics = report["runs"][0]["metrics"].as_object().unwrap();
    for key in ["val_auc", "val_ap", "test_auc", "test_ap", "final_loss"] {
        assert!(metrics.contains_key(key), "missing metric {key}");
    }

    // A second run into the same directory must append rows without
    // duplicating the header.
    let out = run(&args);
    assert_exit(&out, 0);
    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let headers = csv
        .lines()
        .filter(|l| *l == "task,dataset,model,seed,metric,value")
        .count();
    assert_eq!(headers, 1, "header written once even after appending");
    assert_eq!(csv.lines().count(), 1 + 2 * 5, "two runs x five metrics");
}

#[test]
fn train_node_runs_both_aggregators_on_synthetic_graph() {
    for model in ["sage-mean", "sage-pool"] {
        let dir = TempDir::new().unwrap();
        let out_dir = dir.path().join("run");
        let out = run(&[
            "train-node",
            "--set",
            "dataset=two-clique",
            "--set",
            &format!("model={model}"),
            "--set",
            "epochs=10",
            "--set",
            "hidden=8",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap())
                .unwrap();
        assert_eq!(report["runs"][0]["model"], model);
        let metrics = report["runs"][0]["metrics"].as_object().unwrap();
        for key in ["train_accuracy", "val_accuracy", "test_accuracy"] {
            assert!(
                metrics.contains_key(key),
                "missing metric {key} for {model}"
            );
        }
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let run_once = |name: &str| -> (Vec<u8>, serde_json::Value) {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "train-graph",
            "--set",
            "dataset=structural",
            "--set",
            "count=16",
            "--set",
            "epochs=2",
            "--set",
            "hidden=4",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
        let csv = fs::read(out_dir.join("metrics.csv")).unwrap();
        let mut report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap())
                .unwrap();
        // Wall time is the one field allowed to vary between runs.
        for run in report["runs"].as_array_mut().unwrap() {
            run["wall_time_secs"] = serde_json::json!(0);
        }
        (csv, report)
    };

    let (csv_a, report_a) = run_once("a");
    let (csv_b, report_b) = run_once("b");
    assert_eq!(
        csv_a, csv_b,
        "metrics.csv must be byte-identical across runs"
    );
    assert_eq!(report_a, report_b, "report.json must match up to wall time");
}

#[test]
fn seed_and_repeats_flags_override_config() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "train-graph",
        "--set",
        "dataset=structural",
        "--set",
        "count=16",
        "--set",
        "epochs=2",
        "--set",
        "hidden=4",
        "--seed",
        "7",
        "--repeats",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0]["seed"], 7);
    assert_eq!(runs[1]["seed"], 8);
    assert!(report["std_metrics"]["test_accuracy"].is_number());
}

#[test]
fn config_file_with_overrides() {
    let dir = TempDir::new().unwrap();
    let config_path = dir.path().join("config.json");
    fs::write(
        &config_path,
        r#"{"dataset": "structural", "count": 16, "epochs": 5, "hidden": 4}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "train-graph",
        "--config",
        config_path.to_str().unwrap(),
        "--set",
        "epochs=3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(
        report["runs"][0]["epoch_losses"].as_array().unwrap().len(),
        3,
        "--set must override the value from the config file"
    );
}

#[test]
fn unknown_dataset_is_a_config_error() {
    let out = run(&["train-node", "--set", "dataset=imagenet"]);
    assert_exit(&out, 2);
    assert!(stderr_of(&out).contains("unknown dataset"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let out = run(&["train-graph", "--set", "not_a_real_key=1"]);
    assert_exit(&out, 2);
    assert!(stderr_of(&out).contains("unknown field"));
}

#[test]
fn unknown_model_is_a_config_error() {
    let out = run(&[
        "train-link",
        "--set",
        "dataset=two-clique",
        "--set",
        "model=transformer",
    ]);
    assert_exit(&out, 2);
    assert!(stderr_of(&out).to_lowercase().contains("model"));
}

#[test]
fn missing_dataset_file_is_a_config_error() {
    let out = run(&[
        "train-node",
        "--set",
        "dataset=cora",
        "--set",
        "content_path=/nonexistent/cora.content",
        "--set",
        "cites_path=/nonexistent/cora.cites",
    ]);
    assert_exit(&out, 2);
    assert!(stderr_of(&out).contains("fetch the dataset"));
}

#[test]
fn spectral_demo_decomposes_fixture_signal() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "spectral-demo",
        "--graph",
        &repo_file("fixtures/five_vertex.graph.txt"),
        "--signal",
        &repo_file("fixtures/five_vertex.signals.csv"),
        "--column",
        "0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let text = stdout_of(&out);
    assert!(text.contains("round-trip residual"), "stdout:\n{text}");

    let csv = fs::read_to_string(out_dir.join("spectrum.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,lambda,coefficient"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5, "one spectral coefficient per vertex");
    // Eigenvalues come out sorted ascending, starting at zero for a
    // connected graph.
    assert!(rows[0][1].abs() < 1e-9);
    for pair in rows.windows(2) {
        assert!(pair[0][1] <= pair[1][1] + 1e-12);
    }
}

#[test]
fn spectral_demo_constant_signal_loads_only_the_zero_mode() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "spectral-demo",
        "--graph",
        &repo_file("fixtures/five_vertex.graph.txt"),
        "--signal",
        &repo_file("fixtures/five_vertex.signals.csv"),
        "--column",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = fs::read_to_string(out_dir.join("spectrum.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    // A constant vector is aligned with the zero-eigenvalue mode, so only
    // the first coefficient is nonzero: |c0| = sqrt(5) for all-ones on five
    // vertices.
    assert!((rows[0][2].abs() - 5f64.sqrt()).abs() < 1e-9);
    for row in &rows[1..] {
        assert!(row[2].abs() < 1e-9, "higher mode carries energy: {row:?}");
    }
}

#[test]
fn spectral_demo_rejects_out_of_range_column() {
    let out = run(&[
        "spectral-demo",
        "--graph",
        &repo_file("fixtures/five_vertex.graph.txt"),
        "--signal",
        &repo_file("fixtures/five_vertex.signals.csv"),
        "--column",
        "9",
    ]);
    assert_exit(&out, 2);
}

#[test]
fn gradcheck_passes_and_reports_per_target() {
    let out = run(&["gradcheck", "--instances", "2", "--seed", "11"]);
    assert_exit(&out, 0);
    let text = stdout_of(&out);
    for target in [
        "matmul",
        "softmax_rows",
        "rgnn_transition_embed",
        "kl_divergence",
    ] {
        assert!(text.contains(target), "missing target {target} in:\n{text}");
    }
    assert!(text.contains("all gradient checks passed"));
    assert!(!text.contains("FAIL"), "unexpected failure in:\n{text}");
}

#[test]
fn gradcheck_detects_injected_fault() {
    let out = run(&["gradcheck", "--instances", "2", "--inject-fault"]);
    assert_exit(&out, 3);
    assert!(stdout_of(&out).contains("fail (expected)"));
}
