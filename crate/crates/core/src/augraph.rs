//! AU co-occurrence graph and the graph-convolutional semantic branch.
//!
//! Edge weights are conditional activation probabilities counted over the
//! training set. Node features come from a learned projection of the
//! (gradient-stopped) backbone features, pass through two graph-convolution
//! layers and end in one logistic classifier per AU. The pre-sigmoid AU
//! logits double as the sample's semantic representation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::nn::{affine, leaky_relu, leaky_relu_backward, sigmoid, Param};

pub const DEFAULT_NODE_DIM: usize = 64;
const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoOccurrenceCounts {
    pub pair_counts: Array2<u64>,
    pub marginal_counts: Vec<u64>,
    pub source_size: usize,
}

pub fn build_cooccurrence(au_labels: ArrayView2<u8>) -> CoOccurrenceCounts {
    let m = au_labels.ncols();
    let mut pair_counts = Array2::zeros((m, m));
    for row in au_labels.outer_iter() {
        let active: Vec<usize> = (0..m).filter(|&k| row[k] == 1).collect();
        for &p in &active {
            for &q in &active {
                pair_counts[[p, q]] += 1;
            }
        }
    }
    let marginal_counts = (0..m).map(|q| pair_counts[[q, q]]).collect();
    CoOccurrenceCounts {
        pair_counts,
        marginal_counts,
        source_size: au_labels.nrows(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeMode {
    /// Conditional co-occurrence probabilities from the training labels.
    DataDriven,
    /// Uniform `[0, 1]` entries.
    Random,
    /// All ones.
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuAdjacency {
    /// `a[[p, q]] = P(AU_p | AU_q)`.
    pub a: Array2<f64>,
    /// Row-normalized `a`.
    pub a_norm: Array2<f64>,
}

/// Divides each row by its sum; all-zero rows become uniform.
pub fn row_normalize(a: &Array2<f64>) -> Array2<f64> {
    let m = a.ncols();
    let mut out = a.clone();
    for mut row in out.outer_iter_mut() {
        let total = row.sum();
        if total > 0.0 {
            row /= total;
        } else {
            row.fill(1.0 / m as f64);
        }
    }
    out
}

impl AuAdjacency {
    pub fn from_raw(a: Array2<f64>) -> Self {
        let a_norm = row_normalize(&a);
        Self { a, a_norm }
    }

    pub fn size(&self) -> usize {
        self.a.nrows()
    }

    pub fn identity(m: usize) -> Self {
        Self::from_raw(Array2::eye(m))
    }

    pub fn random<R: Rng>(m: usize, rng: &mut R) -> Self {
        Self::from_raw(Array2::from_shape_simple_fn((m, m), || rng.random::<f64>()))
    }

    pub fn fixed(m: usize) -> Self {
        Self::from_raw(Array2::ones((m, m)))
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.a_norm
            .outer_iter()
            .all(|r| (r.sum() - 1.0).abs() <= tol && r.iter().all(|&x| x >= 0.0))
    }

    /// Plain-text `M x M` dump of the raw matrix, 12 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in self.a.outer_iter() {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.11e}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(io_err(path))
    }
}

/// Conditional-probability adjacency. Columns of never-observed AUs are zero
/// off the diagonal and one on it.
pub fn conditional_adjacency(counts: &CoOccurrenceCounts) -> AuAdjacency {
    let m = counts.marginal_counts.len();
    let a = Array2::from_shape_fn((m, m), |(p, q)| {
        let occ_q = counts.marginal_counts[q];
        if occ_q > 0 {
            counts.pair_counts[[p, q]] as f64 / occ_q as f64
        } else if p == q {
            1.0
        } else {
            0.0
        }
    });
    AuAdjacency::from_raw(a)
}

pub fn adjacency_for_mode<R: Rng>(mode: EdgeMode, au_labels: ArrayView2<u8>, rng: &mut R) -> AuAdjacency {
    let m = au_labels.ncols();
    match mode {
        EdgeMode::DataDriven => conditional_adjacency(&build_cooccurrence(au_labels)),
        EdgeMode::Random => AuAdjacency::random(m, rng),
        EdgeMode::Fixed => AuAdjacency::fixed(m),
    }
}

/// Projection, two graph-convolution layers and per-AU output units.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnStack {
    pub au_count: usize,
    pub node_dim: usize,
    pub proj_w: Param,
    pub proj_b: Param,
    pub layers: [Param; 2],
    /// Row `m` holds the weights of AU `m`'s output unit.
    pub out_w: Param,
    pub out_b: Param,
}

#[derive(Debug, Clone)]
pub struct GcnCache {
    n: usize,
    input: Array2<f64>,
    /// Node features entering each layer, `(N*M, B)`.
    node_in: [Array2<f64>; 2],
    /// `A_norm X` per layer.
    mixed: [Array2<f64>; 2],
    pre: [Array2<f64>; 2],
    node_out: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct SemanticOutput {
    /// AU logits, the semantic representation (`N x M`).
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    pub cache: GcnCache,
}

impl GcnStack {
    pub fn new<R: Rng>(feature_dim: usize, au_count: usize, node_dim: usize, rng: &mut R) -> Self {
        Self {
            au_count,
            node_dim,
            proj_w: Param::glorot("au.proj.w", feature_dim, au_count * node_dim, rng),
            proj_b: Param::zeros("au.proj.b", 1, au_count * node_dim),
            layers: [
                Param::glorot("au.gcn0.w", node_dim, node_dim, rng),
                Param::glorot("au.gcn1.w", node_dim, node_dim, rng),
            ],
            out_w: Param::glorot("au.out.w", au_count, node_dim, rng),
            out_b: Param::zeros("au.out.b", 1, au_count),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.proj_w, &self.proj_b, &self.layers[0], &self.layers[1], &self.out_w, &self.out_b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let [l0, l1] = &mut self.layers;
        vec![&mut self.proj_w, &mut self.proj_b, l0, l1, &mut self.out_w, &mut self.out_b]
    }

    fn mix(&self, adj: &Array2<f64>, nodes: &Array2<f64>, n: usize) -> Array2<f64> {
        let m = self.au_count;
        let mut out = Array2::zeros(nodes.dim());
        for i in 0..n {
            let rows = s![i * m..(i + 1) * m, ..];
            out.slice_mut(rows).assign(&adj.dot(&nodes.slice(rows)));
        }
        out
    }

    /// `features` must already be detached from the backbone; no feature
    /// gradient is ever produced here.
    pub fn forward(&self, features: ArrayView2<f64>, adjacency: &AuAdjacency) -> Result<SemanticOutput> {
        let (m, b) = (self.au_count, self.node_dim);
        if adjacency.size() != m {
            return Err(Error::Contract(format!("adjacency is {0}x{0}, stack has {m} AUs", adjacency.size())));
        }
        if !adjacency.is_row_stochastic(ROW_SUM_TOL) {
            return Err(Error::Contract("adjacency must be row-normalized".into()));
        }
        if features.ncols() != self.proj_w.value.nrows() {
            return Err(Error::InvalidInput(format!(
                "AU projection expects {} features, got {}",
                self.proj_w.value.nrows(),
                features.ncols()
            )));
        }
        let n = features.nrows();
        let x0 = affine(features, &self.proj_w, &self.proj_b)
            .into_shape_with_order((n * m, b))
            .expect("projection rows are contiguous");
        let mixed0 = self.mix(&adjacency.a_norm, &x0, n);
        let pre0 = mixed0.dot(&self.layers[0].value);
        let x1 = leaky_relu(&pre0);
        let mixed1 = self.mix(&adjacency.a_norm, &x1, n);
        let pre1 = mixed1.dot(&self.layers[1].value);
        let x2 = leaky_relu(&pre1);

        let mut logits = Array2::zeros((n, m));
        for i in 0..n {
            for k in 0..m {
                logits[[i, k]] = x2.row(i * m + k).dot(&self.out_w.value.row(k)) + self.out_b.value[[0, k]];
            }
        }
        let probs = logits.mapv(sigmoid);
        Ok(SemanticOutput {
            logits,
            probs,
            cache: GcnCache {
                n,
                input: features.to_owned(),
                node_in: [x0, x1],
                mixed: [mixed0, mixed1],
                pre: [pre0, pre1],
                node_out: x2,
            },
        })
    }

    /// Accumulates parameter gradients given the gradient of the AU logits.
    pub fn backward(&mut self, cache: &GcnCache, adjacency: &AuAdjacency, d_logits: &Array2<f64>) {
        let (m, b, n) = (self.au_count, self.node_dim, cache.n);
        let mut d_x2 = Array2::zeros((n * m, b));
        for i in 0..n {
            for k in 0..m {
                let g = d_logits[[i, k]];
                if g == 0.0 {
                    continue;
                }
                d_x2.row_mut(i * m + k).scaled_add(g, &self.out_w.value.row(k));
                self.out_w.grad.row_mut(k).scaled_add(g, &cache.node_out.row(i * m + k));
                self.out_b.grad[[0, k]] += g;
            }
        }
        let adj_t = adjacency.a_norm.t().to_owned();
        let mut d_nodes = d_x2;
        for layer in (0..2).rev() {
            leaky_relu_backward(&mut d_nodes, &cache.pre[layer]);
            self.layers[layer].grad += &cache.mixed[layer].t().dot(&d_nodes);
            let d_mixed = d_nodes.dot(&self.layers[layer].value.t());
            d_nodes = self.mix(&adj_t, &d_mixed, n);
        }
        debug_assert_eq!(cache.node_in[0].dim(), d_nodes.dim());
        let d_proj = d_nodes
            .into_shape_with_order((n, m * b))
            .expect("contiguous node gradient");
        self.proj_w.grad += &cache.input.t().dot(&d_proj);
        self.proj_b.grad += &d_proj.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
}

pub fn semantic_forward(features: ArrayView2<f64>, stack: &GcnStack, adjacency: &AuAdjacency) -> Result<(Array2<f64>, Array2<f64>)> {
    let out = stack.forward(features, adjacency)?;
    Ok((out.logits, out.probs))
}

/// Binary F1 per AU column; 0 when neither predictions nor labels are positive.
pub fn per_au_f1(pred: ArrayView2<u8>, truth: ArrayView2<u8>) -> Array1<f64> {
    (0..pred.ncols())
        .map(|k| {
            let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
            for (&p, &t) in pred.column(k).iter().zip(truth.column(k)) {
                match (p, t) {
                    (1, 1) => tp += 1,
                    (1, 0) => fp += 1,
                    (0, 1) => fnn += 1,
                    _ => {}
                }
            }
            if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fnn) as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Active sets {1,2}, {1}, {1} with AUs numbered from 1.
    fn three_samples() -> Array2<u8> {
        arr2(&[[1, 1], [1, 0], [1, 0]])
    }

    #[test]
    fn hand_counted_cooccurrence() {
        let c = build_cooccurrence(three_samples().view());
        assert_eq!(c.marginal_counts, vec![3, 1]);
        assert_eq!(c.pair_counts[[0, 1]], 1);
        assert_eq!(c.pair_counts[[1, 0]], 1);
        assert_eq!(c.source_size, 3);
    }

    #[test]
    fn zero_and_duplicated_counts() {
        let c = build_cooccurrence(Array2::<u8>::zeros((5, 3)).view());
        assert!(c.pair_counts.iter().all(|&x| x == 0));
        let base = three_samples();
        let doubled = ndarray::concatenate(Axis(0), &[base.view(), base.view()]).unwrap();
        let (c1, c2) = (build_cooccurrence(base.view()), build_cooccurrence(doubled.view()));
        assert_eq!(c2.pair_counts, c1.pair_counts.mapv(|x| 2 * x));
    }

    #[test]
    fn conditional_probabilities_are_asymmetric() {
        let adj = conditional_adjacency(&build_cooccurrence(three_samples().view()));
        // P(AU_1 | AU_2) = 1, P(AU_2 | AU_1) = 1/3
        assert_eq!(adj.a[[0, 1]], 1.0);
        assert!((adj.a[[1, 0]] - 1.0 / 3.0).abs() < 1e-15);
        assert_ne!(adj.a[[0, 1]], adj.a[[1, 0]]);
        assert!(adj.is_row_stochastic(1e-12));
    }

    #[test]
    fn always_cooccurring_and_never_observed() {
        let labels = arr2(&[[1u8, 1, 0], [1, 1, 0], [0, 0, 0]]);
        let adj = conditional_adjacency(&build_cooccurrence(labels.view()));
        assert_eq!(adj.a[[0, 1]], 1.0);
        assert_eq!(adj.a[[1, 0]], 1.0);
        assert_eq!(adj.a.column(2).to_vec(), vec![0.0, 0.0, 1.0]);
        assert!(adj.is_row_stochastic(1e-12));

        let empty = conditional_adjacency(&build_cooccurrence(Array2::<u8>::zeros((2, 4)).view()));
        assert_eq!(empty.a, Array2::<f64>::eye(4));
        assert!(empty.is_row_stochastic(1e-12));
    }

    #[test]
    fn all_edge_modes_row_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels = Array2::from_shape_simple_fn((40, 6), || u8::from(rng.random::<f64>() < 0.3));
        for mode in [EdgeMode::DataDriven, EdgeMode::Random, EdgeMode::Fixed] {
            let adj = adjacency_for_mode(mode, labels.view(), &mut rng);
            assert!(adj.is_row_stochastic(1e-12), "{mode:?}");
        }
        let zero_rows = AuAdjacency::from_raw(Array2::zeros((3, 3)));
        assert!(zero_rows.is_row_stochastic(1e-12));
    }

    #[test]
    fn text_dump_has_twelve_digits() {
        let adj = conditional_adjacency(&build_cooccurrence(three_samples().view()));
        let text = adj.to_text();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("3.33333333333e-1"));
    }

    #[test]
    fn identity_graph_with_identity_weights_is_transparent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (d, m, b) = (3, 2, 4);
        let mut stack = GcnStack::new(d, m, b, &mut rng);
        stack.layers[0].value = Array2::eye(b);
        stack.layers[1].value = Array2::eye(b);
        stack.proj_w.value = Array2::from_shape_fn((d, m * b), |(r, c)| ((r + c) % 3) as f64 * 0.25);
        let f = arr2(&[[1.0, 2.0, 0.5], [0.0, 1.0, 3.0]]);
        let out = stack.forward(f.view(), &AuAdjacency::identity(m)).unwrap();
        let x0 = affine(f.view(), &stack.proj_w, &stack.proj_b).into_shape_with_order((2 * m, b)).unwrap();
        assert!(x0.iter().all(|&v| v >= 0.0));
        assert_eq!(out.cache.node_out, x0);
    }

    #[test]
    fn node_permutation_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (d, m, b) = (5, 4, 6);
        let mut stack = GcnStack::new(d, m, b, &mut rng);
        stack.out_b.value = Array2::from_shape_fn((1, m), |(_, k)| 0.1 * k as f64);
        let adj = AuAdjacency::random(m, &mut rng);
        let f = Array2::from_shape_fn((3, d), |_| rng.random::<f64>() - 0.5);

        let perm = [2usize, 0, 3, 1];
        let mut permuted = stack.clone();
        for (new, &old) in perm.iter().enumerate() {
            permuted
                .proj_w
                .value
                .slice_mut(s![.., new * b..(new + 1) * b])
                .assign(&stack.proj_w.value.slice(s![.., old * b..(old + 1) * b]));
            permuted.out_w.value.row_mut(new).assign(&stack.out_w.value.row(old));
            permuted.out_b.value[[0, new]] = stack.out_b.value[[0, old]];
        }
        let adj_p = AuAdjacency::from_raw(Array2::from_shape_fn((m, m), |(p, q)| adj.a[[perm[p], perm[q]]]));

        let (s0, _) = semantic_forward(f.view(), &stack, &adj).unwrap();
        let (s1, _) = semantic_forward(f.view(), &permuted, &adj_p).unwrap();
        for i in 0..3 {
            for (new, &old) in perm.iter().enumerate() {
                assert!((s1[[i, new]] - s0[[i, old]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_projection_leaves_only_output_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut stack = GcnStack::new(3, 3, 4, &mut rng);
        stack.proj_w.value.fill(0.0);
        stack.out_b.value = arr2(&[[0.5, -1.0, 2.0]]);
        let (s, p) = semantic_forward(Array2::ones((2, 3)).view(), &stack, &AuAdjacency::fixed(3)).unwrap();
        assert_eq!(s, arr2(&[[0.5, -1.0, 2.0], [0.5, -1.0, 2.0]]));
        assert!((p[[0, 0]] - sigmoid(0.5)).abs() < 1e-15);
    }

    #[test]
    fn unnormalized_adjacency_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stack = GcnStack::new(3, 2, 4, &mut rng);
        let bad = AuAdjacency {
            a: Array2::ones((2, 2)),
            a_norm: Array2::ones((2, 2)),
        };
        assert!(matches!(stack.forward(Array2::ones((1, 3)).view(), &bad), Err(Error::Contract(_))));
    }

    #[test]
    fn f1_per_column() {
        let pred = arr2(&[[1u8, 0], [1, 0], [0, 0]]);
        let truth = arr2(&[[1u8, 0], [0, 0], [1, 1]]);
        let f1 = per_au_f1(pred.view(), truth.view());
        assert!((f1[0] - 0.5).abs() < 1e-15);
        assert_eq!(f1[1], 0.0);
    }
}
