//! Graph attention layer with an optional edge-feature term.
//!
//! Per head, with `z = h W`:
//! `logit(j -> i) = leaky_relu(z_j a_src + z_i a_dst + (e_ji W_e) a_edge)`,
//! normalized by a softmax over the in-neighbourhood of `i` (self-loop
//! included, with zero edge features), and `out_i = relu(sum alpha z_j + b)`.

use corridor_tensor::{ParamStore, Result, Tape, Tensor, TensorError, Var};
use rand_chacha::ChaCha8Rng;

use super::init::{glorot, zeros};

pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub prefix: String,
    pub input: usize,
    pub head_dim: usize,
    pub heads: usize,
    /// Width of the edge features, when the layer uses them.
    pub edge_dim: Option<usize>,
}

/// Layer output plus the attention weights of every head, indexed like
/// [`with_self_loops`].
pub struct GatOutput<'t> {
    pub out: Var<'t>,
    pub attention: Vec<Vec<f64>>,
}

/// `edges` followed by one self-loop per node.
pub fn with_self_loops(nodes: usize, edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    edges.iter().copied().chain((0..nodes).map(|i| (i, i))).collect()
}

impl GatLayer {
    pub fn new(prefix: impl Into<String>, input: usize, output: usize, heads: usize) -> Self {
        assert!(output % heads == 0, "output width must split evenly over heads");
        Self {
            prefix: prefix.into(),
            input,
            head_dim: output / heads,
            heads,
            edge_dim: None,
        }
    }

    pub fn with_edges(mut self, edge_dim: usize) -> Self {
        self.edge_dim = Some(edge_dim);
        self
    }

    pub fn output(&self) -> usize {
        self.head_dim * self.heads
    }

    fn name(&self, head: usize, part: &str) -> String {
        format!("{}.head{head}.{part}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let d = self.head_dim;
        for h in 0..self.heads {
            store.insert(self.name(h, "weight"), glorot(rng, self.input, d));
            store.insert(self.name(h, "att_src"), glorot(rng, d, 1));
            store.insert(self.name(h, "att_dst"), glorot(rng, d, 1));
            if let Some(de) = self.edge_dim {
                store.insert(self.name(h, "edge_weight"), glorot(rng, de, d));
                store.insert(self.name(h, "att_edge"), glorot(rng, d, 1));
            }
            store.insert(self.name(h, "bias"), zeros(1, d));
        }
    }

    fn check(&self, x: Var<'_>, nodes: usize, edges: &[(usize, usize)], edge_x: Option<Var<'_>>) -> Result<()> {
        if x.shape() != [nodes, self.input] {
            return Err(TensorError::ShapeMismatch {
                op: "gat_layer",
                lhs: x.shape(),
                rhs: vec![nodes, self.input],
            });
        }
        if let Some(&(s, d)) = edges.iter().find(|(s, d)| *s >= nodes || *d >= nodes) {
            return Err(TensorError::Index {
                op: "gat_layer",
                index: s.max(d),
                bound: nodes,
            });
        }
        match (self.edge_dim, edge_x) {
            (Some(de), Some(e)) if e.shape() != [edges.len(), de] => Err(TensorError::ShapeMismatch {
                op: "gat_layer edges",
                lhs: e.shape(),
                rhs: vec![edges.len(), de],
            }),
            (Some(de), None) => Err(TensorError::ShapeMismatch {
                op: "gat_layer edges",
                lhs: Vec::new(),
                rhs: vec![edges.len(), de],
            }),
            _ => Ok(()),
        }
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamStore,
        x: Var<'t>,
        edges: &[(usize, usize)],
        edge_x: Option<Var<'t>>,
    ) -> Result<GatOutput<'t>> {
        let n = x.shape()[0];
        self.check(x, n, edges, edge_x)?;
        let all = with_self_loops(n, edges);
        let src: Vec<usize> = all.iter().map(|e| e.0).collect();
        let dst: Vec<usize> = all.iter().map(|e| e.1).collect();
        let real: Vec<usize> = (0..edges.len()).collect();
        let mut heads = Vec::with_capacity(self.heads);
        let mut attention = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let bind = |part: &str| params.bind(tape, &self.name(h, part));
            let z = x.matmul(bind("weight")?)?;
            let s_src = z.matmul(bind("att_src")?)?.gather_rows(&src)?;
            let s_dst = z.matmul(bind("att_dst")?)?.gather_rows(&dst)?;
            let mut logit = s_src.add(s_dst)?;
            if let (Some(_), Some(e)) = (self.edge_dim, edge_x) {
                let s_edge = e
                    .matmul(bind("edge_weight")?)?
                    .matmul(bind("att_edge")?)?
                    .scatter_add_rows(&real, all.len())?;
                logit = logit.add(s_edge)?;
            }
            let logit = logit.leaky_relu(ATTENTION_SLOPE)?;
            let alpha = segment_softmax(tape, logit, &dst, n)?;
            attention.push(alpha.values());
            let out = z
                .gather_rows(&src)?
                .scale_rows(alpha)?
                .scatter_add_rows(&dst, n)?
                .add_row(bind("bias")?)?
                .relu()?;
            heads.push(out);
        }
        let out = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        Ok(GatOutput { out, attention })
    }

    /// `relu(e W_e)` per head, concatenated: the edge embedding of this layer.
    pub fn edge_embedding<'t>(&self, tape: &'t Tape, params: &ParamStore, edge_x: Var<'t>) -> Result<Var<'t>> {
        let mut parts = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let w = params.bind(tape, &self.name(h, "edge_weight"))?;
            parts.push(edge_x.matmul(w)?.relu()?);
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            tape.concat_cols(&parts)
        }
    }
}

/// Softmax of a column of logits within groups sharing a destination. The
/// per-group maximum is subtracted as a constant.
fn segment_softmax<'t>(tape: &'t Tape, logit: Var<'t>, dst: &[usize], nodes: usize) -> Result<Var<'t>> {
    let values = logit.values();
    let mut max = vec![f64::NEG_INFINITY; nodes];
    for (v, &d) in values.iter().zip(dst) {
        max[d] = max[d].max(*v);
    }
    let shift = Tensor::new(vec![dst.len(), 1], dst.iter().map(|&d| max[d]).collect())?;
    let ex = logit.sub(tape.constant(&shift))?.exp()?;
    let denom = ex.scatter_add_rows(dst, nodes)?.gather_rows(dst)?;
    ex.div(denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn layer(edge_dim: Option<usize>, heads: usize) -> (GatLayer, ParamStore) {
        let mut l = GatLayer::new("gat", 3, 4 * heads, heads);
        if let Some(d) = edge_dim {
            l = l.with_edges(d);
        }
        let mut store = ParamStore::new();
        l.init(&mut store, &mut ChaCha8Rng::seed_from_u64(11));
        (l, store)
    }

    fn features(rows: usize, cols: usize, seed: u64) -> Tensor {
        glorot(&mut ChaCha8Rng::seed_from_u64(seed), rows, cols)
    }

    #[test]
    fn single_node_sees_only_itself() {
        let (l, store) = layer(None, 1);
        let tape = Tape::new();
        let xt = features(1, 3, 1);
        let out = l.forward(&tape, &store, tape.constant(&xt), &[], None).unwrap();
        assert_eq!(out.attention[0], vec![1.0]);
        let w = store.get("gat.head0.weight").unwrap();
        for c in 0..4 {
            let z: f64 = (0..3).map(|i| xt.values()[i] * w.get(i, c)).sum();
            assert!((out.out.values()[c] - z.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_neighbours_get_uniform_attention() {
        let (l, store) = layer(None, 2);
        let row = features(1, 3, 2).into_values();
        let x = Tensor::new(vec![3, 3], row.repeat(3)).unwrap();
        let tape = Tape::new();
        let edges = [(0, 2), (1, 2)];
        let out = l.forward(&tape, &store, tape.constant(&x), &edges, None).unwrap();
        let all = with_self_loops(3, &edges);
        for a in &out.attention {
            for (i, e) in all.iter().enumerate() {
                let expected = if e.1 == 2 { 1.0 / 3.0 } else { 1.0 };
                assert!((a[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        let (l, store) = layer(None, 1);
        let tape = Tape::new();
        let x = tape.constant(&features(2, 3, 3));
        assert!(l.forward(&tape, &store, x, &[(0, 5)], None).is_err());
    }

    #[test]
    fn missing_edge_features_are_rejected() {
        let (l, store) = layer(Some(2), 1);
        let tape = Tape::new();
        let x = tape.constant(&features(2, 3, 3));
        assert!(l.forward(&tape, &store, x, &[(0, 1)], None).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (l, store) = layer(Some(2), 2);
        let edges = [(0, 1), (1, 2), (2, 0), (1, 0)];
        let f = corridor_tensor::gradcheck::objective(|tape, v| {
            l.forward(tape, &store, v[0], &edges, Some(v[1]))?.out.sum()
        });
        let err = corridor_tensor::gradcheck::max_relative_error(
            &f,
            &[features(3, 3, 5), features(4, 2, 6)],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    fn random_edges(n: usize, seed: u64) -> Vec<(usize, usize)> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..2 * n)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn attention_rows_sum_to_one(n in 1usize..8, seed in 0u64..1000) {
            let (l, store) = layer(Some(2), 2);
            let edges = random_edges(n, seed);
            let tape = Tape::new();
            let x = tape.constant(&features(n, 3, seed));
            let e = tape.constant(&features(edges.len(), 2, seed + 1));
            let out = l.forward(&tape, &store, x, &edges, Some(e)).unwrap();
            let all = with_self_loops(n, &edges);
            for a in &out.attention {
                let mut sums = vec![0.0; n];
                for (i, (_, d)) in all.iter().enumerate() {
                    sums[*d] += a[i];
                }
                for s in sums {
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
            }
            prop_assert!(out.out.value().is_finite());
        }

        #[test]
        fn permutation_equivariance(n in 2usize..8, seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let (l, store) = layer(Some(2), 2);
            let edges = random_edges(n, seed);
            let x = features(n, 3, seed);
            let e = features(edges.len(), 2, seed + 1);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            // Node i is relabelled perm[i].
            let mut px = Tensor::zeros(&[n, 3]);
            for i in 0..n {
                for c in 0..3 {
                    px.set(perm[i], c, x.get(i, c));
                }
            }
            let pedges: Vec<_> = edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();

            let tape = Tape::new();
            let a = l.forward(&tape, &store, tape.constant(&x), &edges, Some(tape.constant(&e))).unwrap().out.value();
            let tape = Tape::new();
            let b = l.forward(&tape, &store, tape.constant(&px), &pedges, Some(tape.constant(&e))).unwrap().out.value();
            for i in 0..n {
                for c in 0..a.cols() {
                    prop_assert!((a.get(i, c) - b.get(perm[i], c)).abs() < 1e-12);
                }
            }
        }
    }
}
