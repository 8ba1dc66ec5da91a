//! Fully connected ReLU network with a hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    /// `input, hidden…, output`
    pub layer_dims: Vec<usize>,
    pub init_seed: u64,
}

impl MlpSpec {
    /// `layers` linear maps: `input → hidden → … → hidden → output`.
    pub fn uniform(input: usize, hidden: usize, layers: usize, output: usize, init_seed: u64) -> Self {
        let mut layer_dims = vec![input];
        layer_dims.extend(std::iter::repeat_n(hidden, layers.saturating_sub(1)));
        layer_dims.push(output);
        MlpSpec { layer_dims, init_seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::config("an MLP needs at least an input and an output dimension"));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::config("layer dimensions must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// `Σ dᵢ·dᵢ₊₁ + dᵢ₊₁`
    pub fn parameter_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Fixed per-feature affine map `(x − shift) · scale` applied ahead of the first layer.
/// Not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Column means and inverse standard deviations of `rows`; near-constant columns get scale 1.
    pub fn fit(rows: &Matrix) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::Empty("standardizer sample"));
        }
        let n = rows.rows() as f64;
        let d = rows.cols();
        let mut mean = vec![0.0; d];
        for r in 0..rows.rows() {
            mean.iter_mut().zip(rows.row(r)).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for r in 0..rows.rows() {
            for ((s, v), m) in var.iter_mut().zip(rows.row(r)).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .iter()
            .map(|&v| if v.sqrt() > 1e-8 { 1.0 / v.sqrt() } else { 1.0 })
            .collect();
        Ok(Standardizer { shift: mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, s), k) in out.row_mut(r).iter_mut().zip(&self.shift).zip(&self.scale) {
                *v = (*v - s) * k;
            }
        }
        out
    }
}

/// Activations kept from a forward pass: the standardized input followed by every layer output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().unwrap()
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }

    /// Which hidden units are active (positive), over all hidden layers and rows.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let hidden = &self.activations[1..self.activations.len() - 1];
        hidden.iter().flat_map(|m| m.data().iter().map(|&v| v > 0.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    /// `dᵢ × dᵢ₊₁` per layer
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros(spec: &MlpSpec) -> Self {
        MlpGrads {
            weights: spec.layer_dims.windows(2).map(|w| Matrix::zeros(w[0], w[1])).collect(),
            biases: spec.layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    /// Weights then bias of each layer, in layer order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.data_mut());
            out.push(b);
        }
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.data());
            out.push(b);
        }
        out
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    input_norm: Standardizer,
    /// Bumped on every parameter change so stale caches are caught in `backward`.
    version: u64,
}

/// Equal when architecture, parameters and standardizer match; the cache version is ignored.
impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.weights == other.weights
            && self.biases == other.biases
            && self.input_norm == other.input_norm
    }
}

impl Mlp {
    /// He-uniform weights (`±√(6 / fan_in)`), zero biases, identity standardizer.
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let weights = spec
            .layer_dims
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                let data = (0..w[0] * w[1]).map(|_| rng.random_range(-limit..limit)).collect();
                Matrix::new(w[0], w[1], data)
            })
            .collect::<Result<Vec<_>>>()?;
        let biases = spec.layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect();
        Ok(Mlp {
            input_norm: Standardizer::identity(spec.input_dim()),
            spec,
            weights,
            biases,
            version: 0,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn input_norm(&self) -> &Standardizer {
        &self.input_norm
    }

    pub fn set_input_norm(&mut self, norm: Standardizer) -> Result<()> {
        if norm.dim() != self.spec.input_dim() || norm.scale.len() != norm.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim(),
                actual: norm.dim(),
            });
        }
        if norm.shift.iter().chain(&norm.scale).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input standardizer".into()));
        }
        self.input_norm = norm;
        self.version += 1;
        Ok(())
    }

    pub fn set_layer(&mut self, layer: usize, weights: Matrix, bias: Vec<f64>) -> Result<()> {
        let (i, o) = (self.spec.layer_dims[layer], self.spec.layer_dims[layer + 1]);
        if weights.rows() != i || weights.cols() != o || bias.len() != o {
            return Err(Error::DimensionMismatch {
                expected: i * o + o,
                actual: weights.rows() * weights.cols() + bias.len(),
            });
        }
        self.weights[layer] = weights;
        self.biases[layer] = bias;
        self.version += 1;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.spec.parameter_count()
    }

    /// Weights then bias of each layer, in layer order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    /// Mutable parameter blocks in [`params`](Self::params) order; invalidates outstanding caches.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.data_mut());
            out.push(b);
        }
        out
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.spec.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim(),
                actual: x.cols(),
            });
        }
        if x.rows() == 0 {
            return Err(Error::Empty("input batch"));
        }
        Ok(())
    }

    fn layer(&self, l: usize, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul(&self.weights[l])?;
        let last = l + 1 == self.spec.layer_count();
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.biases[l]) {
                *v += b;
                if !last && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Ok(z)
    }

    /// Row-wise forward pass, `batch × input → batch × output`.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = self.input_norm.apply(x);
        for l in 0..self.spec.layer_count() {
            h = self.layer(l, &h)?;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.spec.layer_dims.len());
        activations.push(self.input_norm.apply(x));
        for l in 0..self.spec.layer_count() {
            let next = self.layer(l, activations.last().unwrap())?;
            activations.push(next);
        }
        Ok(ForwardCache {
            version: self.version,
            activations,
        })
    }

    /// Parameter gradients given `d_output = ∂L/∂output` for the cached batch.
    pub fn backward(&self, cache: &ForwardCache, d_output: &Matrix) -> Result<MlpGrads> {
        if cache.version != self.version || cache.activations.len() != self.spec.layer_dims.len() {
            return Err(Error::StaleCache(format!(
                "cache from parameter version {}, model is at {}",
                cache.version, self.version
            )));
        }
        let out = cache.output();
        if d_output.rows() != out.rows() || d_output.cols() != out.cols() {
            return Err(Error::DimensionMismatch {
                expected: out.rows() * out.cols(),
                actual: d_output.rows() * d_output.cols(),
            });
        }
        let n_layers = self.spec.layer_count();
        let mut grads = MlpGrads::zeros(&self.spec);
        let mut delta = d_output.clone();
        for l in (0..n_layers).rev() {
            if l + 1 < n_layers {
                let act = &cache.activations[l + 1];
                for (d, &a) in delta.data_mut().iter_mut().zip(act.data()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            grads.weights[l] = cache.activations[l].transposed_matmul(&delta)?;
            for r in 0..delta.rows() {
                grads.biases[l].iter_mut().zip(delta.row(r)).for_each(|(g, d)| *g += d);
            }
            if l > 0 {
                delta = delta.matmul_transposed(&self.weights[l])?;
            }
        }
        Ok(grads)
    }
}
