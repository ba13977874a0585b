use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{build_record, Covariates, DatasetRecord, GraphConfig, Matrix};
use crate::model::{ConstantPredictor, OraclePredictor};
use crate::sim::fixtures::simple_scenario;
use crate::sim::run_scenario;

fn direct_mape(t: &[f64], p: &[f64]) -> f64 {
    let kept: Vec<f64> = (0..t.len()).filter(|&i| t[i].abs() >= 1e-12).map(|i| ((t[i] - p[i]) / t[i]).abs()).collect();
    100.0 * kept.iter().sum::<f64>() / kept.len() as f64
}

fn direct_hellinger(t: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..t.len() {
        let d = t[i].sqrt() - p[i].sqrt();
        s += d * d;
    }
    (s / 2.0).sqrt()
}

fn direct_nrmse(t: &[f64], p: &[f64]) -> f64 {
    let mut sorted = t.to_vec();
    sorted.sort_by(f64::total_cmp);
    let range = sorted[sorted.len() - 1] - sorted[0];
    let mut s = 0.0;
    for i in 0..t.len() {
        s += (t[i] - p[i]).powi(2);
    }
    (s / t.len() as f64).sqrt() / range
}

#[test]
fn metrics_match_direct_formulas_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let n = rng.random_range(2..300);
        let t: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        if t.iter().all(|&v| v == 0.0) {
            continue;
        }
        assert!((mape(&t, &p).unwrap() - direct_mape(&t, &p)).abs() <= 1e-9 * direct_mape(&t, &p).max(1.0));
        assert!((hellinger(&t, &p).unwrap() - direct_hellinger(&t, &p)).abs() < 1e-9);
        assert!((nrmse(&t, &p).unwrap() - direct_nrmse(&t, &p)).abs() < 1e-9);
        let (a, b) = (rng.random_range(1.0..300.0), rng.random_range(1.0..300.0));
        assert!((std_error(a, b) - if a > b { a - b } else { b - a }).abs() < 1e-9);
    }
}

fn fake(id: usize, cycle: f64, volume: [f64; 2], m: [f64; 2]) -> RecordEvaluation {
    let metric = |v: f64| DirectionMetrics { mape: v, std: 2.0 * v, hld: v / 10.0, nrmse: v / 100.0 };
    RecordEvaluation {
        id: format!("r{id}"),
        covariates: Covariates { cycle, volume, max_green_pct: [30.0, 30.0] },
        actual_mu: [0.0; 2],
        actual_sigma: [1.0; 2],
        predicted_mu: [0.0; 2],
        predicted_sigma: [1.0; 2],
        metrics: [metric(m[0]), metric(m[1])],
        mape_excluded: [0; 2],
        supervision: Matrix::zeros(1, 4),
        imputed: None,
    }
}

#[test]
fn bucket_rows_match_one_pass_reaggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let recs: Vec<RecordEvaluation> = (0..80)
        .map(|i| {
            fake(
                i,
                rng.random_range(150.0..240.0),
                [rng.random_range(500.0..1000.0), rng.random_range(500.0..1000.0)],
                [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)],
            )
        })
        .collect();
    let rows = aggregate(&recs);
    assert_eq!(rows.len(), 10);

    // one pass: accumulate (sum, count) per (experiment, level, direction)
    let mut acc = std::collections::HashMap::<(String, String, usize), (f64, usize)>::new();
    for r in &recs {
        for d in 0..2 {
            let vol = r.covariates.volume[d];
            let keys = [
                ("cycle_length", if r.covariates.cycle < 160.0 { "Low" } else if r.covariates.cycle < 200.0 { "Medium" } else { "High" }),
                ("traffic_volume", if vol < 700.0 { "Low" } else if vol < 900.0 { "Medium" } else { "High" }),
                ("max_green_pct", "Medium"),
                ("overall", "Total"),
            ];
            for (e, l) in keys {
                let slot = acc.entry((e.into(), l.into(), d)).or_default();
                slot.0 += r.metrics[d].mape;
                slot.1 += 1;
            }
        }
    }
    for row in &rows {
        let level = row.level.to_string();
        for d in 0..2 {
            let got = if d == 0 { row.east } else { row.west };
            match acc.get(&(row.experiment.clone(), level.clone(), d)) {
                Some(&(s, n)) => {
                    assert_eq!(row.count[d], n);
                    assert!((got.unwrap().mape - s / n as f64).abs() < 1e-9);
                }
                None => {
                    assert_eq!(row.count[d], 0);
                    assert!(got.is_none());
                }
            }
        }
    }
    let total = rows.last().unwrap();
    assert_eq!(total.count, [80, 80]);
    let all: f64 = recs.iter().map(|r| r.metrics[0].std + r.metrics[1].std).sum::<f64>() / 160.0;
    assert!((total.combined.unwrap().std - all).abs() < 1e-9);
}

#[test]
fn empty_buckets_have_blank_metrics() {
    let recs = vec![fake(0, 150.0, [100.0, 100.0], [1.0, 2.0])];
    let rows = aggregate(&recs);
    let table = Evaluation { predictor: "x".into(), records: recs, rows }.table_tsv();
    let medium_cycle = table.lines().find(|l| l.starts_with("cycle_length\tMedium")).unwrap();
    assert_eq!(medium_cycle, format!("cycle_length\tMedium\t0\t0{}", "\t".repeat(12)));
    assert_eq!(table.lines().next().unwrap(), TABLE_HEADER);
}

fn records(n: usize) -> Vec<DatasetRecord> {
    (0..n)
        .map(|i| {
            let mut s = simple_scenario(4, 300.0 + 60.0 * i as f64);
            s.seed = 40 + i as u64;
            let log = run_scenario(&s).unwrap();
            build_record(format!("t{i}"), &s, &log, &GraphConfig::default()).unwrap()
        })
        .collect()
}

#[test]
fn oracle_scores_zero_everywhere() {
    let r = records(3);
    let refs: Vec<&DatasetRecord> = r.iter().collect();
    let ev = evaluate(&OraclePredictor, &refs).unwrap();
    assert_eq!(ev.total().count, [3, 3]);
    for row in &ev.rows {
        for m in [row.east, row.west, row.combined].into_iter().flatten() {
            assert_eq!((m.mape, m.std, m.hld, m.nrmse), (0.0, 0.0, 0.0, 0.0));
        }
    }
    assert_eq!(ev.imputation_tsv().lines().count(), 1 + 3 * 4 * 4);

    let dir = tempfile::tempdir().unwrap();
    ev.write(dir.path()).unwrap();
    for name in ["metrics.tsv", "records.tsv", "imputation.tsv", "plots/t0.tsv", "plots/t2.svg"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn constant_baseline_scores_positive() {
    let r = records(3);
    let refs: Vec<&DatasetRecord> = r.iter().collect();
    let c = ConstantPredictor::fit(&refs).unwrap();
    let ev = evaluate(&c, &refs).unwrap();
    let total = ev.total().combined.unwrap();
    assert!(total.mape > 0.0 && total.hld > 0.0 && total.std >= 0.0);
    assert_eq!(ev.imputation_tsv().lines().count(), 1);
    assert!(evaluate(&c, &[]).is_err());
}
