//! Finite-difference gradient checking.
//!
//! [`central_difference`] evaluates a function through fresh tapes only, so
//! it never touches the backward rules it is used to verify. [`RandomGraph`]
//! builds seeded composite expressions that exercise every tape operation.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A scalar-valued function of tensors, recorded on a tape.
pub trait Objective {
    fn eval<'t>(&self, tape: &'t Tape, inputs: &[Var<'t>]) -> Result<Var<'t>>;
}

impl<F> Objective for F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    fn eval<'t>(&self, tape: &'t Tape, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        self(tape, inputs)
    }
}

/// Pins a closure to the higher-ranked signature [`Objective`] needs.
pub fn objective<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    f
}

/// Gradients of a scalar-valued `f` at `inputs` by central differences.
pub fn central_difference<O: Objective>(f: &O, inputs: &[Tensor], h: f64) -> Result<Vec<Vec<f64>>> {
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x)).collect();
        Ok(f.eval(&tape, &vars)?.item())
    };
    let mut grads = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = vec![0.0; inputs[k].len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].values_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].values_mut()[i] -= h;
            *gi = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Gradients of a scalar-valued `f` at `inputs` by reverse mode.
pub fn analytic_gradient<O: Objective>(f: &O, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs
        .iter()
        .map(|x| tape.leaf(&x.clone().with_requires_grad(true)))
        .collect();
    let loss = f.eval(&tape, &vars)?;
    tape.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| {
            tape.grad(*v)
                .map(Tensor::into_values)
                .unwrap_or_else(|| vec![0.0; x.len()])
        })
        .collect())
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, 1e-6)`. The floor keeps identically-zero
/// gradients from being judged against central-difference round-off.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()) + norm(&mut b.iter().copied());
    diff / scale.max(1e-6)
}

/// Largest per-input relative error between reverse mode and central
/// differences.
pub fn max_relative_error<O: Objective>(f: &O, inputs: &[Tensor], h: f64) -> Result<f64> {
    let analytic = analytic_gradient(f, inputs)?;
    let numeric = central_difference(f, inputs, h)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Activation {
    Relu,
    LeakyRelu,
    Exp,
    Softplus,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Combine {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Reduce {
    Sum,
    Mean,
    Mse,
    ScaledSum,
}

/// A seeded composite expression over matmul, bias rows, activations,
/// elementwise arithmetic, row scaling, gather/scatter, softmax,
/// concatenation, column selection, reshape and a scalar reduction.
#[derive(Debug, Clone)]
pub struct RandomGraph {
    pub inputs: Vec<Tensor>,
    m: usize,
    p: usize,
    activation: Activation,
    combine: Combine,
    gather: Vec<usize>,
    scatter: Vec<usize>,
    softmax_axis: usize,
    selected: Vec<usize>,
    reduce: Reduce,
    target: Tensor,
}

/// Activation inputs closer than this to a kink are rejected.
const KINK_MARGIN: f64 = 1e-3;

impl RandomGraph {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(2..=4);
        let n = rng.random_range(2..=4);
        let p = rng.random_range(2..=4);
        let tensor = |shape: &[usize], rng: &mut ChaCha8Rng| {
            let len = shape.iter().product();
            Tensor::new(
                shape.to_vec(),
                (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .expect("shape and length agree")
        };
        let inputs = vec![
            tensor(&[m, n], &mut rng),
            tensor(&[n, p], &mut rng),
            tensor(&[m, p], &mut rng),
            tensor(&[1, p], &mut rng),
            tensor(&[m, 1], &mut rng),
            tensor(&[1], &mut rng),
        ];
        let activation = *[
            Activation::Relu,
            Activation::LeakyRelu,
            Activation::Exp,
            Activation::Softplus,
            Activation::Sqrt,
        ]
        .choose(&mut rng)
        .unwrap();
        let combine = *[Combine::Add, Combine::Sub, Combine::Mul, Combine::Div]
            .choose(&mut rng)
            .unwrap();
        let e = rng.random_range(1..=2 * m);
        let gather = (0..e).map(|_| rng.random_range(0..m)).collect();
        let scatter = (0..e).map(|_| rng.random_range(0..m)).collect();
        let softmax_axis = rng.random_range(0..2);
        let k = rng.random_range(1..=2 * p);
        let selected = (0..k).map(|_| rng.random_range(0..2 * p)).collect();
        let reduce = *[Reduce::Sum, Reduce::Mean, Reduce::Mse, Reduce::ScaledSum]
            .choose(&mut rng)
            .unwrap();
        let target = tensor(&[m * k], &mut rng);
        Self {
            inputs,
            m,
            p,
            activation,
            combine,
            gather,
            scatter,
            softmax_axis,
            selected,
            reduce,
            target,
        }
    }

    pub fn eval<'t>(&self, tape: &'t Tape, x: &[Var<'t>]) -> Result<Var<'t>> {
        let (a, b, c, bias, w, s) = (x[0], x[1], x[2], x[3], x[4], x[5]);
        let h = a.matmul(b)?.add_row(bias)?;
        let h = match self.activation {
            Activation::Relu => h.relu()?,
            Activation::LeakyRelu => h.leaky_relu(crate::DEFAULT_LEAKY_SLOPE)?,
            Activation::Exp => h.scale(0.5)?.exp()?,
            Activation::Softplus => h.softplus()?,
            Activation::Sqrt => h.softplus()?.shift(0.5)?.sqrt()?,
        };
        let h = match self.combine {
            Combine::Add => h.add(c)?,
            Combine::Sub => h.sub(c)?,
            Combine::Mul => h.mul(c)?,
            Combine::Div => h.div(c.mul(c)?.shift(0.5)?)?,
        };
        let h = h.scale_rows(w)?;
        let spread = h
            .gather_rows(&self.gather)?
            .scatter_add_rows(&self.scatter, self.m)?;
        let probs = spread.softmax(self.softmax_axis)?;
        let both = tape.concat_cols(&[probs, h])?;
        debug_assert_eq!(both.shape(), vec![self.m, 2 * self.p]);
        let picked = both.select_cols(&self.selected)?;
        let flat = picked.reshape(&[self.m * self.selected.len()])?;
        let loss = match self.reduce {
            Reduce::Sum => flat.sum()?,
            Reduce::Mean => flat.mean()?,
            Reduce::Mse => flat.mse(tape.constant(&self.target))?,
            Reduce::ScaledSum => flat.mul(s)?.sum()?,
        };
        Ok(loss)
    }

    /// Maximum relative gradient error over all inputs, or `None` when an
    /// activation input sits within the kink margin, where central
    /// differences straddle the kink and mean nothing.
    pub fn check(&self, h: f64) -> Result<Option<f64>> {
        if matches!(self.activation, Activation::Relu | Activation::LeakyRelu) {
            let tape = Tape::new();
            let x: Vec<Var<'_>> = self.inputs.iter().map(|t| tape.constant(t)).collect();
            let pre = x[0].matmul(x[1])?.add_row(x[3])?;
            if pre.values().iter().any(|v| v.abs() < KINK_MARGIN.max(100.0 * h)) {
                return Ok(None);
            }
        }
        max_relative_error(&Checked(self), &self.inputs, h).map(Some)
    }
}

struct Checked<'g>(&'g RandomGraph);

impl Objective for Checked<'_> {
    fn eval<'t>(&self, tape: &'t Tape, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        self.0.eval(tape, inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_of_identical_vectors_is_zero() {
        assert_eq!(relative_error(&[1.0, -2.0], &[1.0, -2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0], &[-1.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn central_difference_of_cube() {
        let x = Tensor::vector(vec![2.0]);
        let cube = objective(|_, v| v[0].mul(v[0])?.mul(v[0])?.sum());
        let g = central_difference(&cube, &[x], 1e-5).unwrap();
        assert!((g[0][0] - 12.0).abs() < 1e-6);
    }

    #[test]
    fn random_graphs_are_deterministic() {
        let a = RandomGraph::generate(7);
        let b = RandomGraph::generate(7);
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.selected, b.selected);
    }
}
