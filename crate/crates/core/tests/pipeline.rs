use std::fs;
use std::path::Path;

use corridor_core::graph::Dataset;
use corridor_core::pipeline::{predict_record, Manifest, PipelineConfig, PredictorChoice, Run, DATASET_FILE, MODEL_FILE};
use corridor_core::ErrorKind;

fn config(dir: &Path, scenarios: usize, jobs: usize) -> PipelineConfig {
    let mut c = PipelineConfig {
        scenarios,
        jobs: Some(jobs),
        output: dir.to_path_buf(),
        ..Default::default()
    };
    c.train.epochs = 2;
    c
}

#[test]
fn simulate_is_deterministic_resumable_and_independent_of_jobs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = Run::new(config(a.path(), 6, 1)).unwrap();
    let rb = Run::new(config(b.path(), 6, 4)).unwrap();
    assert_eq!(ra.simulate().unwrap().simulated, 6);
    rb.simulate().unwrap();
    let ma = Manifest::open(a.path()).unwrap();
    assert_eq!(ma, Manifest::open(b.path()).unwrap());
    assert_eq!(ma.files.len(), 12);

    fs::remove_file(a.path().join("logs/s00004.jsonl")).unwrap();
    let again = ra.simulate().unwrap();
    assert_eq!((again.simulated, again.skipped), (1, 5));
    assert_eq!(Manifest::open(a.path()).unwrap(), ma);
}

#[test]
fn zero_scenarios_give_an_empty_manifest() {
    let d = tempfile::tempdir().unwrap();
    let run = Run::new(config(d.path(), 0, 1)).unwrap();
    run.simulate().unwrap();
    let m = Manifest::open(d.path()).unwrap();
    assert!(m.files.is_empty() && m.failed.is_empty());
}

#[test]
fn dataset_accounting_windows_and_idempotence() {
    let d = tempfile::tempdir().unwrap();
    let run = Run::new(config(d.path(), 5, 2)).unwrap();
    assert_eq!(run.build_dataset().unwrap_err().kind(), ErrorKind::Data);
    let sim = run.simulate().unwrap();
    let summary = run.build_dataset().unwrap();
    assert_eq!(summary.records, sim.simulated - summary.excluded.len());
    let first = fs::read(d.path().join(DATASET_FILE)).unwrap();
    run.build_dataset().unwrap();
    assert_eq!(fs::read(d.path().join(DATASET_FILE)).unwrap(), first);

    let mut short = config(d.path(), 5, 2);
    short.window = 300.0;
    let (s, _) = Run::new(short).unwrap().build().unwrap();
    let long = Dataset::load(&d.path().join(DATASET_FILE)).unwrap();
    assert_eq!(s.header.window, 300.0);
    for (x, y) in s.records.iter().zip(&long.records) {
        assert_eq!(x.target, y.target);
    }
    assert!(s.records.iter().zip(&long.records).any(|(x, y)| x.static_graph.x != y.static_graph.x));
}

#[test]
fn train_evaluate_predict_and_resume() {
    let d = tempfile::tempdir().unwrap();
    let run = Run::new(config(d.path(), 12, 4)).unwrap();
    assert_eq!(run.train(false).unwrap_err().kind(), ErrorKind::Data);
    run.simulate().unwrap();
    run.build_dataset().unwrap();
    let two = run.train(false).unwrap();
    assert_eq!(two.rows.len(), 2);

    let mut more = config(d.path(), 12, 4);
    more.train.epochs = 3;
    let resumed = Run::new(more.clone()).unwrap().train(true).unwrap();
    let fresh_dir = tempfile::tempdir().unwrap();
    fs::copy(d.path().join(DATASET_FILE), fresh_dir.path().join(DATASET_FILE)).unwrap();
    more.output = fresh_dir.path().to_path_buf();
    let straight = Run::new(more).unwrap().train(false).unwrap();
    assert_eq!(resumed.to_tsv(), straight.to_tsv());

    let oracle = run.evaluate(PredictorChoice::Oracle, None).unwrap();
    let t = oracle.total().combined.unwrap();
    assert_eq!((t.mape, t.std, t.hld, t.nrmse), (0.0, 0.0, 0.0, 0.0));
    let model = run.evaluate(PredictorChoice::Model, None).unwrap();
    assert_eq!(model.total().count[0], model.records.len());
    assert!(d.path().join("eval/fdgnn/metrics.tsv").exists());
    assert!(d.path().join("eval/fdgnn/plots").read_dir().unwrap().count() >= 2);

    let id = &model.records[0].id;
    let p = predict_record(&d.path().join(MODEL_FILE), &d.path().join(DATASET_FILE), id).unwrap();
    assert_eq!(p.mu, model.records[0].predicted_mu);
    assert!(predict_record(&d.path().join(MODEL_FILE), &d.path().join(DATASET_FILE), "nope").is_err());
}
