use std::path::Path;
use std::process::{Command, Output};

fn refine(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refine"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL: &str = r#"
[simulate]
n = 120
d = 3
q = 1
t = 2
nonlinearity = "tanh"
noise_sd = 0.5

[learner]
kind = "random_forest"
forest = { n_trees = 10 }

[evaluate]
n_boot = 3
forest = { n_trees = 10 }

[rates]
sizes = [100, 300, 1000]
replicates = 3

[bench]
n_sizes = [100, 200, 400]
d_sizes = [2, 3, 4]
base_n = 100
base_d = 3
base_t = 1
repeats = 1
forest = { n_trees = 3, parallel = false }
"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let out = refine(
        &["simulate", "--config", "run.toml", "--seed", "3", "--out", "sim"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn simulate_fit_predict() {
    let dir = setup();
    let p = dir.path();
    assert!(p.join("sim/data.csv").exists() && p.join("sim/schema.json").exists());
    let out = refine(
        &[
            "fit",
            "--config",
            "run.toml",
            "--data",
            "sim/data.csv",
            "--schema",
            "sim/schema.json",
            "--out",
            "model",
            "--format",
            "csv",
        ],
        p,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("model/model.bin").exists());
    let coef = std::fs::read_to_string(p.join("model/coefficients.csv")).unwrap();
    assert_eq!(coef.lines().count(), 1 + 2 * 3 * 3);

    let out = refine(
        &[
            "predict",
            "--model",
            "model/model.bin",
            "--data",
            "sim/data.csv",
            "--out",
            "pred",
            "--format",
            "csv",
        ],
        p,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pred = std::fs::read_to_string(p.join("pred/predictions_t1.csv")).unwrap();
    assert!(pred.starts_with("subject_id,item1,item2,item3"));
    assert_eq!(pred.lines().count(), 121);
    assert!(p.join("pred/predictions_t2.csv").exists());
}

#[test]
fn evaluate_and_ablate_write_reports() {
    let dir = setup();
    let p = dir.path();
    let out = refine(
        &[
            "evaluate",
            "--config",
            "run.toml",
            "--data",
            "sim/data.csv",
            "--out",
            "eval",
            "--seed",
            "1",
        ],
        p,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.json", "timings.json", "frontier.csv", "metrics_refine.csv"] {
        assert!(p.join("eval").join(f).exists(), "{f}");
    }
    let first = std::fs::read(p.join("eval/report.json")).unwrap();
    let out = refine(
        &[
            "evaluate",
            "--config",
            "run.toml",
            "--data",
            "sim/data.csv",
            "--out",
            "eval2",
            "--seed",
            "1",
        ],
        p,
    );
    assert_eq!(code(&out), 0);
    assert_eq!(first, std::fs::read(p.join("eval2/report.json")).unwrap());

    let out = refine(
        &[
            "ablate",
            "--config",
            "run.toml",
            "--data",
            "sim/data.csv",
            "--out",
            "abl",
            "--n-boot",
            "2",
            "--format",
            "csv",
        ],
        p,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for v in ["refine", "ols_decoder", "linear_preprocessor"] {
        assert!(p.join(format!("abl/metrics_{v}.csv")).exists(), "{v}");
    }
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("variant,time,metric"));
}

#[test]
fn rates_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("run.toml"), SMALL).unwrap();
    let out = refine(&["rates", "--config", "run.toml", "--out", "rates"], p);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(p.join("rates/rates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 3 * 2);
    let out = refine(&["bench", "--config", "run.toml", "--out", "bench"], p);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("bench/timings.json").exists() && p.join("bench/timings.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&refine(&["--help"], p)), 0);
    assert_eq!(code(&refine(&["simulate", "--bogus"], p)), 1);
    assert_eq!(code(&refine(&["frobnicate"], p)), 1);

    std::fs::write(p.join("bad.toml"), "[simulate]\nn = \"many\"").unwrap();
    assert_eq!(code(&refine(&["simulate", "--config", "bad.toml"], p)), 1);
    assert_eq!(code(&refine(&["simulate", "--n", "5", "--d", "3"], p)), 1);

    std::fs::write(p.join("bad.csv"), "subject_id,x0_a,xt1_a\ns1,1.0,oops\n").unwrap();
    let out = refine(&["fit", "--data", "bad.csv"], p);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    assert_eq!(code(&refine(&["fit", "--data", "missing.csv"], p)), 2);

    // Two identical follow-up items make the reconstruction regression singular.
    let mut rows = String::from("subject_id,x0_a,x0_b,xt1_a,xt1_b\n");
    for i in 0..30 {
        let v = (i as f64 * 0.7).sin();
        rows.push_str(&format!("s{i},{v},{},{},{}\n", (i as f64).cos(), v + 0.1, v + 0.1));
    }
    std::fs::write(p.join("singular.csv"), rows).unwrap();
    let out = refine(&["fit", "--data", "singular.csv"], p);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
