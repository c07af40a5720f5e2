//! Feed-forward classifier: ReLU hidden layers, two-way softmax output.
//!
//! Class 0 is "window open", class 1 is "closed". Weights are stored
//! fan-in × fan-out so a batch (rows = samples) maps as `Z = A·W + b`.
//! Training minimizes mean cross-entropy plus `λ·Σ|W|` over weights only;
//! the L1 part is handled by [`Mlp::prox_step`], which soft-thresholds and
//! therefore produces exact zeros.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of the "open" class in the output layer.
pub const OPEN: usize = 0;

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// fan_in × fan_out
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    widths: Vec<usize>,
    layers: Vec<Layer<T>>,
    seed: u64,
}

/// Gradients shaped like the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

/// Activations kept by [`Mlp::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Pre-activation of each layer.
    pub pre: Vec<Array2<T>>,
    /// `post[0]` is the input; `post[k]` the output of layer `k - 1`.
    /// The last entry holds the softmax probabilities.
    pub post: Vec<Array2<T>>,
}

impl<T> ForwardCache<T> {
    pub fn probabilities(&self) -> &Array2<T> {
        self.post.last().expect("cache has an output layer")
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 3 {
        return Err(Error::Config(format!(
            "need input, at least one hidden layer and output, got widths {widths:?}"
        )));
    }
    if let Some(w) = widths.iter().find(|w| **w < 1) {
        return Err(Error::Config(format!("layer width {w} < 1 in {widths:?}")));
    }
    if *widths.last().unwrap() != 2 {
        return Err(Error::Config(format!(
            "output layer must have 2 units, got {widths:?}"
        )));
    }
    Ok(())
}

/// `sign(v)·max(|v| − τ, 0)`
#[inline]
pub fn soft_threshold<T: Scalar>(v: T, tau: T) -> T {
    if tau == T::zero() {
        v
    } else if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        T::zero()
    }
}

impl<T: Scalar> Mlp<T> {
    /// He-initialized network: weights ~ N(0, 2 / fan_in), zero biases.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        check_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let sd = (2.0 / fan_in as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::lit(sd * z)
                });
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
            seed,
        })
    }

    /// Network with every parameter equal to zero.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|p| Layer {
                weights: Array2::zeros((p[0], p[1])),
                bias: Array1::zeros(p[1]),
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
            seed: 0,
        })
    }

    /// Assembles a network from explicit layers.
    pub fn from_layers(layers: Vec<Layer<T>>, seed: u64) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::Config("no layers".into()));
        };
        let mut widths = vec![first.weights.nrows()];
        for (k, layer) in layers.iter().enumerate() {
            if layer.weights.nrows() != *widths.last().unwrap() {
                return Err(Error::Config(format!(
                    "layer {k} expects {} inputs but the previous layer has {}",
                    layer.weights.nrows(),
                    widths.last().unwrap()
                )));
            }
            if layer.bias.len() != layer.weights.ncols() {
                return Err(Error::Config(format!("layer {k} bias length mismatch")));
            }
            widths.push(layer.weights.ncols());
        }
        check_widths(&widths)?;
        let mlp = Self {
            widths,
            layers,
            seed,
        };
        mlp.check_finite()?;
        Ok(mlp)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn hidden_layers(&self) -> usize {
        self.widths.len() - 2
    }

    /// Seed the weights were drawn from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// `Σ|W|` over all weight matrices, accumulated in f64.
    pub fn l1_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter())
            .map(|w| w.to_f64_lossless().abs())
            .sum()
    }

    /// Share of exactly-zero weights in each layer.
    pub fn layer_zero_fractions(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| {
                let zeros = l.weights.iter().filter(|w| **w == T::zero()).count();
                zeros as f64 / l.weights.len() as f64
            })
            .collect()
    }

    fn check_finite(&self) -> Result<()> {
        for (k, l) in self.layers.iter().enumerate() {
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {k}")));
            }
        }
        Ok(())
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            widths: self.widths.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: l.weights.mapv(|v| U::lit(v.to_f64_lossless())),
                    bias: l.bias.mapv(|v| U::lit(v.to_f64_lossless())),
                })
                .collect(),
            seed: self.seed,
        }
    }

    /// Runs a batch (rows = samples) through the network.
    pub fn forward_batch(&self, x: ArrayView2<'_, T>) -> Result<ForwardCache<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let n_layers = self.layers.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post = Vec::with_capacity(n_layers + 1);
        post.push(x.to_owned());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = post[k].dot(&layer.weights);
            for mut row in z.rows_mut() {
                Zip::from(&mut row).and(&layer.bias).for_each(|v, &b| *v = *v + b);
            }
            let a = if k + 1 < n_layers {
                z.mapv(|v| v.max(T::zero()))
            } else {
                softmax_rows(&z)
            };
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardCache { pre, post })
    }

    /// Class probabilities `(p_open, p_closed)` for one input vector.
    pub fn forward(&self, x: &[T]) -> Result<([T; 2], ForwardCache<T>)> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let cache = self.forward_batch(view)?;
        let p = cache.probabilities();
        Ok(([p[[0, 0]], p[[0, 1]]], cache))
    }

    /// Open-class probability per row, evaluated in chunks.
    pub fn predict_proba(&self, x: ArrayView2<'_, T>) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(x.nrows());
        for chunk in x.axis_chunks_iter(Axis(0), 4096) {
            let cache = self.forward_batch(chunk)?;
            out.extend(cache.probabilities().column(OPEN).iter().copied());
        }
        Ok(out)
    }

    /// True ("open") iff `p_open ≥ 0.5`; ties go to open.
    pub fn predict(&self, x: &[T]) -> Result<bool> {
        let (p, _) = self.forward(x)?;
        Ok(p[OPEN] >= T::lit(0.5))
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, T>) -> Result<Vec<bool>> {
        let half = T::lit(0.5);
        Ok(self.predict_proba(x)?.into_iter().map(|p| p >= half).collect())
    }

    /// Mean cross-entropy of a batch, without the penalty.
    pub fn data_loss(&self, x: ArrayView2<'_, T>, y: &[bool], pos_weight: f64) -> Result<f64> {
        if y.is_empty() {
            return Err(Error::Empty("loss of an empty batch".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        let mut total = 0.0;
        for (chunk, labels) in x.axis_chunks_iter(Axis(0), 4096).zip(y.chunks(4096)) {
            let cache = self.forward_batch(chunk)?;
            total += cross_entropy_sum(cache.probabilities().view(), labels, pos_weight);
        }
        Ok(total / y.len() as f64)
    }

    /// Mean cross-entropy plus `λ·Σ|W|`.
    pub fn loss(&self, x: ArrayView2<'_, T>, y: &[bool], l1_lambda: f64) -> Result<f64> {
        Ok(self.data_loss(x, y, 1.0)? + l1_lambda * self.l1_norm())
    }

    /// Exact gradient of the mean (optionally class-weighted) cross-entropy.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        y: &[bool],
        pos_weight: f64,
    ) -> Result<GradientSet<T>> {
        let n_layers = self.layers.len();
        if cache.post.len() != n_layers + 1 || cache.pre.len() != n_layers {
            return Err(Error::Config("forward cache does not match network depth".into()));
        }
        for (k, z) in cache.pre.iter().enumerate() {
            if z.ncols() != self.widths[k + 1] {
                return Err(Error::Dimension {
                    expected: self.widths[k + 1],
                    actual: z.ncols(),
                });
            }
        }
        let batch = y.len();
        if batch == 0 || cache.post[0].nrows() != batch {
            return Err(Error::Dimension {
                expected: cache.post[0].nrows(),
                actual: batch,
            });
        }

        // dL/dz at the softmax: (p - onehot) · w_i / B
        let mut delta = cache.probabilities().clone();
        let inv_b = T::one() / T::lit(batch as f64);
        let w_pos = T::lit(pos_weight) * inv_b;
        for (mut row, &open) in delta.rows_mut().into_iter().zip(y) {
            let class = if open { OPEN } else { 1 - OPEN };
            row[class] = row[class] - T::one();
            let scale = if open { w_pos } else { inv_b };
            row.mapv_inplace(|v| v * scale);
        }

        let mut weights = vec![Array2::zeros((0, 0)); n_layers];
        let mut biases = vec![Array1::zeros(0); n_layers];
        for k in (0..n_layers).rev() {
            weights[k] = cache.post[k].t().dot(&delta);
            biases[k] = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut prev = delta.dot(&self.layers[k].weights.t());
                Zip::from(&mut prev)
                    .and(&cache.pre[k - 1])
                    .for_each(|d, &z| {
                        if z <= T::zero() {
                            *d = T::zero();
                        }
                    });
                delta = prev;
            }
        }
        Ok(GradientSet { weights, biases })
    }

    /// Proximal gradient step, in place: soft-thresholded update for weights,
    /// plain gradient step for biases.
    pub fn apply_prox_step(&mut self, grads: &GradientSet<T>, lr: T, l1_lambda: T) -> Result<()> {
        if grads.weights.len() != self.layers.len() || grads.biases.len() != self.layers.len() {
            return Err(Error::Config("gradient set depth mismatch".into()));
        }
        let tau = lr * l1_lambda;
        for (layer, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            if gw.dim() != layer.weights.dim() || gb.len() != layer.bias.len() {
                return Err(Error::Config("gradient shape mismatch".into()));
            }
            Zip::from(&mut layer.weights)
                .and(gw)
                .for_each(|w, &g| *w = soft_threshold(*w - lr * g, tau));
            Zip::from(&mut layer.bias)
                .and(gb)
                .for_each(|b, &g| *b = *b - lr * g);
        }
        Ok(())
    }

    /// Returns the network after one proximal step.
    pub fn prox_step(&self, grads: &GradientSet<T>, lr: T, l1_lambda: T) -> Result<Self> {
        let mut next = self.clone();
        next.apply_prox_step(grads, lr, l1_lambda)?;
        Ok(next)
    }
}

fn softmax_rows<T: Scalar>(z: &Array2<T>) -> Array2<T> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Sum over rows of `-w_i · ln(max(p_true, floor))`.
pub fn cross_entropy_sum<T: Scalar>(probs: ArrayView2<'_, T>, y: &[bool], pos_weight: f64) -> f64 {
    probs
        .rows()
        .into_iter()
        .zip(y)
        .map(|(p, &open)| {
            let (class, w) = if open { (OPEN, pos_weight) } else { (1 - OPEN, 1.0) };
            let p = p[class].to_f64_lossless();
            // NaN must survive the clamp so divergence is detectable
            -w * if p.is_nan() { p } else { p.max(PROB_FLOOR) }.ln()
        })
        .sum()
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros_like(mlp: &Mlp<T>) -> Self {
        Self {
            weights: mlp.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            biases: mlp.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    /// Largest magnitude; NaN if any entry is NaN.
    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .map(|v| v.to_f64_lossless().abs())
            .fold(0.0, |m, v| if v.is_nan() || v > m { v } else { m })
    }
}

const MODEL_MAGIC: &[u8; 8] = b"WSMLP\0\0\0";
const MODEL_VERSION: u32 = 1;

impl<T: Scalar> Mlp<T> {
    /// Binary model file, all little-endian: magic, format version (u32),
    /// init seed (u64), layer-width count (u32), widths (u64 each), then per
    /// layer the row-major weights and the biases as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.param_count());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.widths.len() as u32).to_le_bytes());
        for w in &self.widths {
            out.extend_from_slice(&(*w as u64).to_le_bytes());
        }
        for layer in &self.layers {
            for v in layer.weights.iter().chain(layer.bias.iter()) {
                out.extend_from_slice(&v.to_f64_lossless().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cursor = bytes;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            if cursor.len() < n {
                return Err("unexpected end of model file".into());
            }
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            Ok(head)
        };
        if take(8)? != MODEL_MAGIC {
            return Err("not a model file (bad magic)".into());
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(format!("unsupported model version {version}"));
        }
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if n > 1024 {
            return Err(format!("implausible layer count {n}"));
        }
        let mut widths = Vec::with_capacity(n);
        for _ in 0..n {
            widths.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        check_widths(&widths).map_err(|e| e.to_string())?;
        let mut read_f64 = |count: usize| -> std::result::Result<Vec<T>, String> {
            let raw = take(count.checked_mul(8).ok_or("size overflow")?)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
                .collect())
        };
        let mut layers = Vec::with_capacity(n - 1);
        for pair in widths.windows(2) {
            let weights = Array2::from_shape_vec((pair[0], pair[1]), read_f64(pair[0] * pair[1])?)
                .map_err(|e| e.to_string())?;
            let bias = Array1::from(read_f64(pair[1])?);
            layers.push(Layer { weights, bias });
        }
        if !cursor.is_empty() {
            return Err("trailing bytes after model".into());
        }
        Mlp::from_layers(layers, seed).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&self.to_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .map(BufReader::new)
            .and_then(|mut r| r.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::format(path, reason))
    }
}

/// Probabilities for a single vector, convenience for small callers.
pub fn probabilities<T: Scalar>(mlp: &Mlp<T>, x: ArrayView1<'_, T>) -> Result<[T; 2]> {
    Ok(mlp.forward(&x.to_vec())?.0)
}
