use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vpu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpu")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rows_by_set(csv: &str) -> [usize; 5] {
    let mut counts = [0; 5];
    for line in csv.lines().filter(|l| !l.starts_with('#') && !l.starts_with("set,")) {
        let set = line.split(',').next().unwrap();
        let k = ["P", "U", "VP", "VU", "T"].iter().position(|s| *s == set).unwrap();
        counts[k] += 1;
    }
    counts
}

/// A tiny dataset shared by the training tests.
fn small_data(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("gen");
    let o = vpu(&["generate", "--out", path(&out), "--m", "60", "--n", "240", "--n_test", "200", "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("data.csv")
}

#[test]
fn generate_writes_the_default_task() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let o = vpu(&["generate", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("data.csv")).unwrap();
    assert_eq!(rows_by_set(&csv), [500, 2000, 0, 0, 2000]);
    assert!(csv.starts_with("# pi_p = "));
    assert!(out.join("config.resolved").exists());
}

#[test]
fn missing_output_is_a_usage_error() {
    let o = vpu(&["generate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}

#[test]
fn unknown_flags_and_config_keys_are_usage_errors() {
    assert_eq!(vpu(&["train", "--epoch", "3"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs = 3\nlearning_rat = 0.1\n").unwrap();
    let o = vpu(&["train", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rat"));
}

#[test]
fn resolved_config_reproduces_a_run_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let first = dir.path().join("first");
    let o = vpu(&["train", "--data", path(&data), "--out", path(&first), "--epochs", "3", "--batch_size", "64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("accuracy=") && stdout.contains("auc="));

    // rerun from the echoed config, redirecting only the output directory
    let second = dir.path().join("second");
    let resolved = first.join("config.resolved");
    let o = vpu(&["train", "--config", path(&resolved), "--out", path(&second)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.txt", "history.csv", "metrics.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
    let history = fs::read_to_string(first.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_lvar,val_lvar,val_reg,test_acc\n"));
    assert_eq!(history.lines().count(), 1 + 4);
}

#[test]
fn eval_scores_a_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let run = dir.path().join("run");
    assert!(vpu(&["train", "--data", path(&data), "--out", path(&run), "--epochs", "2"]).status.success());
    let o = vpu(&["eval", "--model", path(&run.join("model.txt")), "--data", path(&data)]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    let trained = fs::read_to_string(run.join("metrics.txt")).unwrap();
    assert_eq!(stdout, trained);
    assert!(stdout.contains("n_test=200"));
}

#[test]
fn baselines_take_the_prior_from_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let o = vpu(&["train", "--data", path(&data), "--out", path(&dir.path().join("nn")),
                  "--objective", "nnpu", "--epochs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = vpu(&["train", "--data", path(&data), "--out", path(&dir.path().join("v")), "--pi_p", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_marks_the_selected_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let out = dir.path().join("sweep");
    let o = vpu(&["sweep", "--data", path(&data), "--out", path(&out), "--epochs", "2",
                  "--lambda_grid", "0.01,0.1,1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("lambda,val_lvar,test_acc"));
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 3);
    assert_eq!(body.iter().filter(|l| l.contains('*')).count(), 1);
    assert!(out.join("model.txt").exists());
}

#[test]
fn oracle_check_passes_and_reports_injected_faults() {
    let o = vpu(&["oracle-check", "--trials", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(table.contains("kl_identity") && table.contains("irreducibility"));

    let o = vpu(&["oracle-check", "--trials", "50", "--inject_fault", "drop_optimal_lvar"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("counterexample kl_identity"));
}

#[test]
fn bias_experiment_emits_one_row_per_method_and_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bias");
    let o = vpu(&["bias-exp", "--out", path(&out), "--ratios", "1,3", "--bias_total", "300",
                  "--bias_unlabeled", "300", "--n_test", "200", "--epochs", "2", "--batch_size", "100"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("bias.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "ratio,method,accuracy");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1,vpu,") && lines[4].starts_with("3,nnpu,"));
    let bound = fs::read_to_string(out.join("bias_bound.csv")).unwrap();
    assert!(bound.lines().nth(2).unwrap().starts_with("3,180,60,60,"));
}

#[test]
fn divergence_exits_with_the_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let o = vpu(&["train", "--data", path(&data), "--out", path(&dir.path().join("x")),
                  "--learning_rate", "1e300", "--epochs", "3"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn malformed_data_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "set,x0,y\nP,0.5,\nU,abc,\n").unwrap();
    let o = vpu(&["train", "--data", path(&data), "--out", path(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":3"));
}
