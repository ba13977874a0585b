use corridor_tensor::{Tape, Tensor};

use super::*;
use crate::graph::{build_record, discretize_pdf, DatasetRecord, DrvSelection, GraphConfig, PDF_BINS, SIGMA_FLOOR};
use crate::sim::fixtures::simple_scenario;
use crate::sim::{run_scenario, Direction};

fn records(n: usize) -> Vec<DatasetRecord> {
    (0..n)
        .map(|i| {
            let mut s = simple_scenario(8, 400.0 + 50.0 * i as f64);
            s.seed = i as u64;
            let log = run_scenario(&s).unwrap();
            build_record(format!("r{i}"), &s, &log, &GraphConfig::default()).unwrap()
        })
        .collect()
}

fn model(records: &[DatasetRecord]) -> Fdgnn {
    let refs: Vec<&DatasetRecord> = records.iter().collect();
    let norm = Normalizer::fit(&refs, true).unwrap();
    Fdgnn::new(ModelConfig::new(DrvSelection::Longitudinal, 7), DrvSelection::Longitudinal, norm).unwrap()
}

#[test]
fn parameter_count_is_in_range_and_stable() {
    let r = records(2);
    let a = model(&r);
    let b = model(&r);
    let n = a.num_parameters();
    assert!((10_000..=200_000).contains(&n), "{n}");
    assert_eq!(n, b.num_parameters());
    assert_eq!(a, b);
}

#[test]
fn predictions_have_contract_shapes() {
    let r = records(3);
    let m = model(&r);
    let refs: Vec<&DatasetRecord> = r.iter().collect();
    let out = m.predict(&refs).unwrap();
    assert_eq!(out.len(), 3);
    for p in &out {
        let imputed = p.imputed.as_ref().unwrap();
        assert_eq!(imputed.shape(), (8, 4));
        assert!(imputed.data.iter().all(|&v| v >= 0.0));
        for d in 0..2 {
            assert!(p.mu[d] >= 0.0);
            assert!(p.sigma[d] >= SIGMA_FLOOR);
            let pdf = p.pdf(d);
            assert_eq!(pdf.len(), PDF_BINS);
            assert_eq!(pdf, discretize_pdf(p.mu[d], p.sigma[d]));
            assert!(pdf.iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn batched_and_single_predictions_agree() {
    let r = records(2);
    let m = model(&r);
    let both = m.predict(&[&r[0], &r[1]]).unwrap();
    let one = m.predict(&[&r[1]]).unwrap();
    for d in 0..2 {
        assert!((both[1].mu[d] - one[0].mu[d]).abs() < 1e-9);
        assert!((both[1].sigma[d] - one[0].sigma[d]).abs() < 1e-9);
    }
    let twice = m.predict(&[&r[0], &r[0]]).unwrap();
    assert_eq!(twice[0], twice[1]);
}

#[test]
fn zero_head_imputes_zero() {
    let r = records(1);
    let mut m = model(&r);
    for (name, p) in m.inf.iter_mut() {
        if name.starts_with("head.") {
            p.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let imputed = m.impute(&[&r[0]]).unwrap();
    assert!(imputed[0].data.iter().all(|&v| v == 0.0));
}

#[test]
fn sigma_output_respects_the_floor() {
    let r = records(1);
    let m = model(&r);
    for z in [-1e6, -50.0, 0.0, 3.0, 1e6] {
        for d in 0..2 {
            assert!(m.output_sigma(d, z) >= SIGMA_FLOOR);
            assert!(m.output_mu(d, z) >= 0.0);
        }
    }
}

#[test]
fn every_parameter_receives_a_gradient() {
    let r = records(2);
    let mut m = model(&r);
    let refs: Vec<&DatasetRecord> = r.iter().collect();
    let masked: Vec<_> = r.iter().map(|x| &x.masked_graph).collect();
    let batch = Fdgnn::batch(&masked);
    {
        let tape = Tape::new();
        let sup: Vec<_> = r.iter().map(|x| &x.supervision).collect();
        let target = tape.constant(&m.scaled_supervision(&sup).unwrap());
        let loss = m.impute_on(&tape, &batch, &masked).unwrap().mse(target).unwrap();
        tape.backward(loss).unwrap();
        m.inf.load_grads(&tape).unwrap();
    }
    for module in [Module::Mean, Module::Stdv] {
        let tape = Tape::new();
        let graphs: Vec<_> = r.iter().map(|x| &x.dynamic_graph).collect();
        let target = tape.constant(&m.scaled_targets(module, &refs).unwrap());
        let loss = m.regress_on(&tape, module, &batch, &graphs).unwrap().mse(target).unwrap();
        tape.backward(loss).unwrap();
        m.params_mut(module).load_grads(&tape).unwrap();
    }
    for module in Module::ALL {
        for (name, p) in m.params(module).iter() {
            assert!(p.grad().is_some(), "{module}: {name} has no gradient");
        }
    }
}

#[test]
fn fusion_of_constant_embeddings() {
    let r = records(2);
    let statics: Vec<_> = r.iter().map(|x| &x.static_graph).collect();
    let batch = Fdgnn::batch(&statics);
    let v: Vec<f64> = (0..4).map(|i| i as f64 + 0.5).collect();
    let tape = Tape::new();
    let edges = Tensor::new(vec![batch.edges.len(), 4], v.repeat(batch.edges.len())).unwrap();
    let nodes = Tensor::new(vec![batch.nodes, 4], v.repeat(batch.nodes)).unwrap();
    let out = fuse(&tape, &batch, tape.constant(&edges), tape.constant(&nodes)).unwrap();
    assert_eq!(out.shape(), vec![2, 12]);
    let expected = v.repeat(3);
    for g in 0..2 {
        for (c, e) in expected.iter().enumerate() {
            assert!((out.value().get(g, c) - e).abs() < 1e-12);
        }
    }
}

#[test]
fn fusion_ignores_order_within_a_direction() {
    let r = records(1);
    let batch = Fdgnn::batch(&[&r[0].static_graph]);
    let m = batch.edges.len();
    let emb: Vec<f64> = (0..m * 3).map(|i| (i as f64 * 0.37).sin()).collect();
    let east = batch.edges_in(Direction::East);
    let (a, b) = (east[1], east[2]);
    let mut swapped = emb.clone();
    for c in 0..3 {
        swapped.swap(a * 3 + c, b * 3 + c);
    }
    let nodes = Tensor::zeros(&[batch.nodes, 3]);
    let run = |e: Vec<f64>| {
        let tape = Tape::new();
        let e = Tensor::new(vec![m, 3], e).unwrap();
        fuse(&tape, &batch, tape.constant(&e), tape.constant(&nodes)).unwrap().values()
    };
    let (x, y) = (run(emb), run(swapped));
    for (p, q) in x.iter().zip(&y) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_is_lossless() {
    let r = records(1);
    let m = model(&r);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m.save(&path).unwrap();
    let back = Fdgnn::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.predict(&[&r[0]]).unwrap(), m.predict(&[&r[0]]).unwrap());
}

#[test]
fn baselines() {
    let r = records(2);
    let refs: Vec<&DatasetRecord> = r.iter().collect();
    let c = ConstantPredictor::fit(&refs).unwrap();
    let expected = (r[0].target.east.mu + r[1].target.east.mu) / 2.0;
    assert!((c.mu[0] - expected).abs() < 1e-9);
    let o = OraclePredictor.predict(&refs).unwrap();
    assert_eq!(o[1].sigma[1], r[1].target.west.sigma);
}
