use corridor_tensor::{Adam, AdamConfig, ParamStore, Tape, Tensor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_slices_are_distributions(
        rows in 1usize..5,
        cols in 1usize..6,
        seed in proptest::collection::vec(-50.0f64..50.0, 30),
        axis in 0usize..2,
    ) {
        let values: Vec<f64> = seed.iter().cycle().take(rows * cols).copied().collect();
        let tape = Tape::new();
        let x = tape.constant(&Tensor::new(vec![rows, cols], values).unwrap());
        let y = x.softmax(axis).unwrap().value();
        if axis == 1 {
            for r in 0..rows {
                let s: f64 = y.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-9);
            }
        } else {
            for c in 0..cols {
                let s: f64 = (0..rows).map(|r| y.get(r, c)).sum();
                prop_assert!((s - 1.0).abs() <= 1e-9);
            }
        }
        prop_assert!(y.values().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn adam_with_zero_gradients_never_moves(
        values in proptest::collection::vec(-10.0f64..10.0, 1..8),
        lr in 1e-4f64..1.0,
        steps in 1usize..5,
    ) {
        let mut params = ParamStore::new();
        params.insert("p", Tensor::vector(values.clone()));
        let mut adam = Adam::new(AdamConfig::with_learning_rate(lr));
        for _ in 0..steps {
            params.get_mut("p").unwrap().set_grad(vec![0.0; values.len()]).unwrap();
            adam.step(&mut params).unwrap();
        }
        prop_assert_eq!(params.get("p").unwrap().values(), values.as_slice());
        prop_assert_eq!(adam.step_count(), steps as u64);
    }
}
