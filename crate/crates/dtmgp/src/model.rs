//! The multi-layer model: stacked hierarchical-feature layers with
//! reparameterized Gaussian weights, deterministic sparse activations,
//! exact reverse-mode gradients, and an affine normalization shell mapping
//! raw data in and out of the unit cube.
//!
//! A layer computes `t = (Sigma .* Z + m) phi(u) + mu` where `phi` is the
//! sparse feature vector of the layer's kernel and grid, `Z` is the
//! caller-supplied standard-normal noise, and `Sigma` is stored through its
//! logarithm to stay positive. Inputs that escape the open unit cube have
//! empty feature vectors, so such a layer outputs exactly its bias.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{FeatureBasis, SparseFeatureJacobian};
use crate::kernel::TensorMarkovKernel;

/// Dense row-major matrix, sized `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_data(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Structural(format!(
                "matrix data of length {} for shape {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// `y = scale * x + shift` with its inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub scale: f64,
    pub shift: f64,
}

impl Affine {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            shift: 0.0,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.shift
    }

    pub fn invert(&self, y: f64) -> f64 {
        (y - self.shift) / self.scale
    }

    /// Min-max map of the observed values onto `[lo, hi]`. Constant data
    /// maps to the midpoint with unit scale so the map stays invertible.
    pub fn fit_minmax(values: impl Iterator<Item = f64>, lo: f64, hi: f64) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !(max > min) {
            return Self {
                scale: 1.0,
                shift: (lo + hi) / 2.0 - min,
            };
        }
        let scale = (hi - lo) / (max - min);
        Self {
            scale,
            shift: lo - scale * min,
        }
    }
}

/// Affine maps taking raw inputs into the feature domain and the raw
/// output into the normalized training scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub inputs: Vec<Affine>,
    pub output: Affine,
}

impl Normalization {
    pub fn identity(input_dim: usize) -> Self {
        Self {
            inputs: vec![Affine::identity(); input_dim],
            output: Affine::identity(),
        }
    }

    /// Min-max normalization of a raw training set onto `[0.05, 0.95]`.
    pub fn fit(inputs: &[Vec<f64>], outputs: &[f64]) -> Self {
        let d = inputs.first().map_or(0, Vec::len);
        let input_maps = (0..d)
            .map(|j| Affine::fit_minmax(inputs.iter().map(|x| x[j]), 0.05, 0.95))
            .collect();
        Self {
            inputs: input_maps,
            output: Affine::fit_minmax(outputs.iter().copied(), 0.05, 0.95),
        }
    }

    pub fn apply_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.inputs).map(|(&v, a)| a.apply(v)).collect()
    }
}

/// Static description of one layer.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub in_width: usize,
    pub out_width: usize,
    pub level: u32,
    pub kernel: TensorMarkovKernel,
}

/// Per-layer variational parameters: entrywise weight scales (stored as
/// logarithms), weight means, and the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub log_sigma: Mat,
    pub mean_w: Mat,
    pub bias: Vec<f64>,
}

#[derive(Debug)]
pub struct Layer {
    basis: FeatureBasis,
    out_width: usize,
    pub params: LayerParams,
}

impl Layer {
    fn new(spec: LayerSpec) -> Result<Self> {
        if spec.kernel.dim() != spec.in_width {
            return Err(Error::Config(format!(
                "layer kernel dimension {} does not match input width {}",
                spec.kernel.dim(),
                spec.in_width
            )));
        }
        let basis = FeatureBasis::new(spec.kernel, spec.level)?;
        let m = basis.len();
        Ok(Self {
            basis,
            out_width: spec.out_width,
            params: LayerParams {
                log_sigma: Mat::filled(spec.out_width, m, 0.5f64.ln()),
                mean_w: Mat::zeros(spec.out_width, m),
                bias: vec![0.0; spec.out_width],
            },
        })
    }

    pub fn basis(&self) -> &FeatureBasis {
        &self.basis
    }

    pub fn in_width(&self) -> usize {
        self.basis.dim()
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    /// Number of features (activations) in this layer.
    pub fn feature_count(&self) -> usize {
        self.basis.len()
    }
}

struct LayerTrace {
    input: Vec<f64>,
    feats: SparseFeatureJacobian,
}

/// Everything the backward pass needs to replay one forward evaluation:
/// per-layer inputs and sparse feature Jacobians. The noise matrices are
/// supplied by the caller and must be the ones used in the forward call.
pub struct ForwardTrace {
    layers: Vec<LayerTrace>,
    output: Vec<f64>,
    /// Multiplications spent in the affine weight application, exactly
    /// `sum_h out_width_h * nnz(phi_h)`.
    pub multiplies: usize,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn feature_nnz(&self, layer: usize) -> usize {
        self.layers[layer].feats.nnz()
    }
}

/// Gradients of a scalar loss with respect to every layer parameter and to
/// the model input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
    pub input: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &DtmgpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerParams {
                    log_sigma: Mat::zeros(l.out_width, l.feature_count()),
                    mean_w: Mat::zeros(l.out_width, l.feature_count()),
                    bias: vec![0.0; l.out_width],
                })
                .collect(),
            input: Vec::new(),
        }
    }

    /// Accumulates `factor` times these gradients into a flat buffer laid
    /// out like [`DtmgpModel::param_vector`]. The trailing noise-variance
    /// slot is left untouched.
    pub fn add_scaled_into(&self, factor: f64, out: &mut [f64]) {
        let mut at = 0usize;
        for layer in &self.layers {
            for &g in layer.log_sigma.data() {
                out[at] += factor * g;
                at += 1;
            }
            for &g in layer.mean_w.data() {
                out[at] += factor * g;
                at += 1;
            }
            for &g in &layer.bias {
                out[at] += factor * g;
                at += 1;
            }
        }
        debug_assert_eq!(at + 1, out.len());
    }
}

/// Deep tensor-Markov GP surrogate model.
#[derive(Debug)]
pub struct DtmgpModel {
    layers: Vec<Layer>,
    pub normalization: Normalization,
    /// Log of the Gaussian observation-noise variance used by training and
    /// by predictive sampling with observation noise.
    pub log_noise_var: f64,
    interlayer_logistic: bool,
}

impl DtmgpModel {
    pub fn new(specs: Vec<LayerSpec>, interlayer_logistic: bool) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for (h, pair) in specs.windows(2).enumerate() {
            if pair[1].in_width != pair[0].out_width {
                return Err(Error::Config(format!(
                    "width mismatch layer {}: layer {} outputs {} but layer {} expects {}",
                    h + 2,
                    h + 1,
                    pair[0].out_width,
                    h + 2,
                    pair[1].in_width
                )));
            }
        }
        let input_dim = specs[0].in_width;
        let layers = specs.into_iter().map(Layer::new).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            normalization: Normalization::identity(input_dim),
            log_noise_var: 0.01f64.ln(),
            interlayer_logistic,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_width
    }

    pub fn interlayer_logistic(&self) -> bool {
        self.interlayer_logistic
    }

    /// Per-layer noise shapes `(out_width, feature_count)`.
    pub fn noise_shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.out_width, l.feature_count()))
            .collect()
    }

    /// Draws one full set of standard-normal noise matrices, row-major per
    /// layer, in a fixed order so seeded draws are reproducible.
    pub fn sample_noise(&self, rng: &mut ChaCha8Rng) -> Vec<Mat> {
        self.layers
            .iter()
            .map(|l| {
                let mut m = Mat::zeros(l.out_width, l.feature_count());
                for v in m.data_mut() {
                    *v = StandardNormal.sample(rng);
                }
                m
            })
            .collect()
    }

    fn check_noise(&self, noise: &[Mat]) -> Result<()> {
        if noise.len() != self.layers.len() {
            return Err(Error::Structural(format!(
                "{} noise matrices for {} layers",
                noise.len(),
                self.layers.len()
            )));
        }
        for (layer, n) in self.layers.iter().zip(noise) {
            if n.rows() != layer.out_width || n.cols() != layer.feature_count() {
                return Err(Error::Structural(format!(
                    "noise shape {}x{} for a layer of shape {}x{}",
                    n.rows(),
                    n.cols(),
                    layer.out_width,
                    layer.feature_count()
                )));
            }
        }
        Ok(())
    }

    /// Forward pass in normalized coordinates, recording what the backward
    /// pass needs. Cost per layer is proportional to `out_width * nnz(phi)`.
    pub fn forward(&self, x: &[f64], noise: &[Mat]) -> Result<(Vec<f64>, ForwardTrace)> {
        self.check_noise(noise)?;
        if x.len() != self.input_dim() {
            return Err(Error::Structural(format!(
                "input of length {} for a model of input dimension {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut u = x.to_vec();
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut multiplies = 0usize;
        let last = self.layers.len() - 1;
        for (h, layer) in self.layers.iter().enumerate() {
            let feats = layer.basis.features_with_grad(&u)?;
            let mut t = layer.params.bias.clone();
            for &(i, v) in feats.entries() {
                for j in 0..layer.out_width {
                    let a = layer.params.log_sigma.at(j, i).exp() * noise[h].at(j, i)
                        + layer.params.mean_w.at(j, i);
                    t[j] += a * v;
                }
            }
            multiplies += layer.out_width * feats.nnz();
            traces.push(LayerTrace { input: u, feats });
            if h < last && self.interlayer_logistic {
                u = t.iter().map(|&v| logistic(v)).collect();
            } else {
                u = t;
            }
        }
        let trace = ForwardTrace {
            layers: traces,
            output: u.clone(),
            multiplies,
        };
        Ok((u, trace))
    }

    /// Value-only forward pass (no trace, no Jacobians).
    pub fn predict(&self, x: &[f64], noise: &[Mat]) -> Result<Vec<f64>> {
        self.check_noise(noise)?;
        let mut u = x.to_vec();
        let last = self.layers.len() - 1;
        for (h, layer) in self.layers.iter().enumerate() {
            let feats = layer.basis.features(&u)?;
            let mut t = layer.params.bias.clone();
            for &(i, v) in feats.entries() {
                for j in 0..layer.out_width {
                    let a = layer.params.log_sigma.at(j, i).exp() * noise[h].at(j, i)
                        + layer.params.mean_w.at(j, i);
                    t[j] += a * v;
                }
            }
            if h < last && self.interlayer_logistic {
                u = t.iter().map(|&v| logistic(v)).collect();
            } else {
                u = t;
            }
        }
        Ok(u)
    }

    /// Exact reverse-mode gradients of `grad_output . output` with respect
    /// to all layer parameters and the input, replayed from the trace. The
    /// noise must be the same matrices the forward call used.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        noise: &[Mat],
        grad_output: &[f64],
    ) -> Result<Gradients> {
        self.check_noise(noise)?;
        if trace.layers.len() != self.layers.len() {
            return Err(Error::Structural("stale trace: layer count mismatch".into()));
        }
        if grad_output.len() != self.output_dim() {
            return Err(Error::Structural(format!(
                "output gradient of length {} for output dimension {}",
                grad_output.len(),
                self.output_dim()
            )));
        }
        let mut grads = Gradients::zeros(self);
        let mut delta = grad_output.to_vec();
        let last = self.layers.len() - 1;
        for h in (0..self.layers.len()).rev() {
            let layer = &self.layers[h];
            let tr = &trace.layers[h];
            if tr.feats.len() != layer.feature_count() || tr.input.len() != layer.in_width() {
                return Err(Error::Structural("stale trace: shape mismatch".into()));
            }
            if h < last && self.interlayer_logistic {
                // delta is with respect to the squashed value feeding the
                // next layer; its input records that value
                let s = &trace.layers[h + 1].input;
                for (dv, &si) in delta.iter_mut().zip(s) {
                    *dv *= si * (1.0 - si);
                }
            }
            let g = &mut grads.layers[h];
            for (j, &d) in delta.iter().enumerate() {
                g.bias[j] += d;
            }
            let mut input_grad = vec![0.0; layer.in_width()];
            for (e, &(i, v)) in tr.feats.entries().iter().enumerate() {
                let mut a_dot_delta = 0.0;
                for (j, &d) in delta.iter().enumerate() {
                    let sigma = layer.params.log_sigma.at(j, i).exp();
                    let z = noise[h].at(j, i);
                    *g.mean_w.at_mut(j, i) += d * v;
                    *g.log_sigma.at_mut(j, i) += d * z * v * sigma;
                    a_dot_delta += d * (sigma * z + layer.params.mean_w.at(j, i));
                }
                let feat_grad = tr.feats.grad(e);
                for (ig, &fg) in input_grad.iter_mut().zip(feat_grad) {
                    *ig += a_dot_delta * fg;
                }
            }
            delta = input_grad;
        }
        grads.input = delta;
        Ok(grads)
    }

    /// Independent forward samples at a raw-space input, mapped back to
    /// raw output units. Weights are redrawn per sample; no observation
    /// noise is added.
    pub fn sample_predictive(
        &self,
        x_raw: &[f64],
        n_samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let x = self.normalization.apply_input(x_raw);
        let mut out = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let noise = self.sample_noise(rng);
            let y = self.predict(&x, &noise)?;
            out.push(y.iter().map(|&v| self.normalization.output.invert(v)).collect());
        }
        Ok(out)
    }

    /// Flat parameter vector: per layer `log_sigma`, `mean_w`, `bias`
    /// (row-major), then the log noise variance as the final entry.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.params.log_sigma.data());
            out.extend_from_slice(layer.params.mean_w.data());
            out.extend_from_slice(&layer.params.bias);
        }
        out.push(self.log_noise_var);
        out
    }

    pub fn set_param_vector(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.param_count() {
            return Err(Error::Structural(format!(
                "parameter vector of length {} for a model with {} parameters",
                v.len(),
                self.param_count()
            )));
        }
        let mut at = 0usize;
        for layer in &mut self.layers {
            let n = layer.params.log_sigma.data().len();
            layer.params.log_sigma.data_mut().copy_from_slice(&v[at..at + n]);
            at += n;
            layer.params.mean_w.data_mut().copy_from_slice(&v[at..at + n]);
            at += n;
            let w = layer.params.bias.len();
            layer.params.bias.copy_from_slice(&v[at..at + w]);
            at += w;
        }
        self.log_noise_var = v[at];
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| 2 * l.out_width * l.feature_count() + l.out_width)
            .sum::<usize>()
            + 1
    }
}

pub(crate) fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}
