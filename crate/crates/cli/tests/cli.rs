use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn corridor(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corridor"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_with_config_code() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&corridor(d.path(), &["--help"])), 0);
    assert_eq!(code(&corridor(d.path(), &["frobnicate"])), 2);
    assert_eq!(code(&corridor(d.path(), &["simulate", "--window", "450"])), 2);
    fs::write(d.path().join("bad.toml"), "scenarios = 1\nnot_a_key = true\n").unwrap();
    let o = corridor(d.path(), &["--config", "bad.toml", "simulate"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("not_a_key"));
    // validation happens before anything is written
    assert!(!d.path().join("run").exists());
}

#[test]
fn data_errors_exit_with_data_code() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&corridor(d.path(), &["build-dataset", "--output", "r"])), 3);
    fs::create_dir(d.path().join("r")).unwrap();
    fs::write(d.path().join("r/dataset.jsonl"), "{\"schema_version\": 99}\n").unwrap();
    assert_eq!(code(&corridor(d.path(), &["train", "--output", "r"])), 3);
}

#[test]
fn numeric_failures_exit_with_numeric_code() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("c.toml"),
        "scenarios = 12\noutput = \"r\"\n[train]\nepochs = 3\nlr_mean = 1e300\nlr_stdv = 1e300\n",
    )
    .unwrap();
    for cmd in ["simulate", "build-dataset"] {
        assert_eq!(code(&corridor(d.path(), &["--config", "c.toml", cmd])), 0);
    }
    let o = corridor(d.path(), &["--config", "c.toml", "train"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn full_pipeline_through_the_binary() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("c.toml"), "seed = 3\nscenarios = 2\noutput = \"r\"\n[train]\nepochs = 2\n").unwrap();
    let flags = ["--config", "c.toml", "--scenarios", "12", "--jobs", "2"];
    let run = |cmd: &[&str]| {
        let mut args = flags.to_vec();
        args.extend_from_slice(cmd);
        let o = corridor(d.path(), &args);
        assert_eq!(code(&o), 0, "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    run(&["simulate"]);
    assert_eq!(fs::read_dir(d.path().join("r/logs")).unwrap().count(), 12);
    assert!(fs::read_to_string(d.path().join("r/config.toml")).unwrap().contains("seed = 3"));
    run(&["build-dataset"]);
    run(&["train"]);
    let table = run(&["evaluate", "--predictor", "oracle"]);
    let total = table.lines().find(|l| l.starts_with("overall\tTotal")).unwrap();
    assert!(total.split('\t').skip(4).all(|v| v.parse::<f64>().unwrap() == 0.0), "{total}");
    run(&["evaluate"]);

    let records = fs::read_to_string(d.path().join("r/eval/fdgnn/records.tsv")).unwrap();
    let id = records.lines().nth(1).unwrap().split('\t').next().unwrap().to_string();
    let pred = run(&["predict", "--record", &id]);
    let rows: Vec<Vec<f64>> = pred
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('t'))
        .map(|l| l.split('\t').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 250);
    let mu: Vec<f64> = pred.lines().filter(|l| l.starts_with("# mu_")).map(|l| l.split(' ').nth(2).unwrap().parse().unwrap()).collect();
    let sigma: Vec<f64> = pred.lines().filter(|l| l.starts_with("# sigma_")).map(|l| l.split(' ').nth(2).unwrap().parse().unwrap()).collect();
    for c in 1..3 {
        let (m, s) = (mu[c - 1], sigma[c - 1]);
        if m - 3.0 * s > 0.0 && m + 3.0 * s < 2500.0 && s >= 20.0 {
            let mass: f64 = rows.iter().map(|r| r[c]).sum::<f64>() * 10.0;
            assert!(mass > 0.9 && mass <= 1.0 + 1e-9, "{mass}");
        }
    }

    fs::remove_file(d.path().join(format!("r/eval/fdgnn/plots/{id}.svg"))).unwrap();
    let svgs = run(&["plot"]);
    assert!(svgs.contains(&format!("{id}.svg")));
    assert!(d.path().join(format!("r/eval/fdgnn/plots/{id}.svg")).exists());

    // without --config the run directory's own config.toml is used
    let o = corridor(d.path(), &["--output", "r", "evaluate", "--predictor", "constant"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
