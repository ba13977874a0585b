use corridor_tensor::{ParamStore, Result, Tape, Var};
use rand_chacha::ChaCha8Rng;

use super::init::{glorot, zeros};

/// Fully connected layer `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub prefix: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, input: usize, output: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            output,
        }
    }

    fn weight(&self) -> String {
        format!("{}.weight", self.prefix)
    }

    fn bias(&self) -> String {
        format!("{}.bias", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        store.insert(self.weight(), glorot(rng, self.input, self.output));
        store.insert(self.bias(), zeros(1, self.output));
    }

    pub fn forward<'t>(&self, tape: &'t Tape, params: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let w = params.bind(tape, &self.weight())?;
        let b = params.bind(tape, &self.bias())?;
        x.matmul(w)?.add_row(b)
    }

    pub fn set_bias(&self, store: &mut ParamStore, value: f64) -> Result<()> {
        store
            .get_mut(&self.bias())?
            .values_mut()
            .iter_mut()
            .for_each(|v| *v = value);
        Ok(())
    }
}

/// Per-row `decoder(ReLU(encoder(e)))`, width preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMlp {
    pub encoder: Linear,
    pub decoder: Linear,
}

impl EdgeMlp {
    pub fn new(prefix: &str, edge_dim: usize, hidden: usize) -> Self {
        Self {
            encoder: Linear::new(format!("{prefix}.encoder"), edge_dim, hidden),
            decoder: Linear::new(format!("{prefix}.decoder"), hidden, edge_dim),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.encoder.init(store, rng);
        self.decoder.init(store, rng);
    }

    pub fn forward<'t>(&self, tape: &'t Tape, params: &ParamStore, e: Var<'t>) -> Result<Var<'t>> {
        let h = self.encoder.forward(tape, params, e)?.relu()?;
        self.decoder.forward(tape, params, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use corridor_tensor::gradcheck::{max_relative_error, objective};
    use corridor_tensor::Tensor;
    use rand::SeedableRng;

    fn edges(rng: &mut ChaCha8Rng) -> Tensor {
        glorot(rng, 16, 19)
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mlp = EdgeMlp::new("mlp", 19, 64);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        mlp.init(&mut store, &mut rng);
        for (_, p) in store.iter_mut() {
            p.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let tape = Tape::new();
        let e = tape.constant(&edges(&mut rng));
        let out = mlp.forward(&tape, &store, e).unwrap();
        assert_eq!(out.shape(), vec![16, 19]);
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        let mlp = EdgeMlp::new("mlp", 19, 64);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        mlp.init(&mut store, &mut rng);
        let input = edges(&mut rng);
        let probe = glorot(&mut rng, 16, 19);
        // <probe, mlp(e)> has gradient J^T probe.
        let f = objective(|tape, x| {
            let p = tape.constant(&probe);
            mlp.forward(tape, &store, x[0])?.mul(p)?.sum()
        });
        let err = max_relative_error(&f, &[input], 1e-6).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
