//! Dense feed-forward network with swish hidden activations and a linear
//! output layer, evaluated in row-major batches.
//!
//! Layer weights are stored `(n_in, n_out)` row-major so a batch forward is
//! a single `X · W` product.

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Swish,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Swish => "swish",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "swish" => Some(Activation::Swish),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Architecture {
    /// Widths from input to output, inclusive.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameters of one ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
}

/// `exp` without branches or calls so that loops over it vectorise.
/// Relative error below 1e-15 on `[-708, 709]`; inputs outside are clamped.
#[inline]
pub(crate) fn fast_exp(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // 1.5 * 2^52: adding it rounds to an integer held in the low mantissa bits.
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let x = x.clamp(-708.0, 709.0);
    let t = x * std::f64::consts::LOG2_E + SHIFTER;
    let n = t - SHIFTER;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    p * scale
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + fast_exp(-x))
}

#[inline]
fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// Output widths at or below this use row-wise dot products, which beat the
/// blocked GEMM on very thin right-hand sides.
const NARROW: usize = 8;

fn narrow_layer(layer: &Layer, x: &[f64], rows: usize, z: &mut Vec<f64>, wt: &mut Vec<f64>) {
    let (n_in, n_out) = (layer.n_in, layer.n_out);
    wt.clear();
    wt.extend((0..n_out * n_in).map(|i| layer.weights[(i % n_in) * n_out + i / n_in]));
    z.clear();
    z.resize(rows * n_out, 0.0);
    for (xr, zr) in x.chunks_exact(n_in).zip(z.chunks_exact_mut(n_out)) {
        for ((zj, wj), bj) in zr.iter_mut().zip(wt.chunks_exact(n_in)).zip(&layer.bias) {
            *zj = bj + dot(xr, wj);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `c = a · b + beta · c` for row-major `a (m×k)`, `b (k×n)` given as
/// strided views, and a contiguous row-major `c (m×n)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let max_index = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
        (rows.saturating_sub(1)) as isize * rs + (cols.saturating_sub(1)) as isize * cs
    };
    assert!(k == 0 || (max_index(m, k, a_strides) as usize) < a.len());
    assert!(k == 0 || (max_index(k, n, b_strides) as usize) < b.len());
    // SAFETY: the asserts above bound every index touched through the
    // strided views, and `c` holds at least `m * n` contiguous entries.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Buffers reused across batch evaluations.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    /// Pre-activation of each layer, `rows × n_out`.
    pub pre: Vec<Vec<f64>>,
    /// Post-activation of each hidden layer, `rows × n_out`.
    pub post: Vec<Vec<f64>>,
    transposed: Vec<f64>,
}

/// Gradient buffers with the same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: params.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }
}

impl MlpParams {
    /// Truncated-normal initialisation with standard deviation
    /// `1 / (2 sqrt(fan_in))`, resampled beyond two deviations; zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let widths = arch.widths();
        let layers = widths
            .windows(2)
            .map(|p| {
                let (n_in, n_out) = (p[0], p[1]);
                let sd = 1.0 / (2.0 * (n_in as f64).sqrt());
                let normal = Normal::new(0.0, sd).expect("positive deviation");
                let weights = (0..n_in * n_out)
                    .map(|_| loop {
                        let w: f64 = normal.sample(rng);
                        if w.abs() <= 2.0 * sd {
                            break w;
                        }
                    })
                    .collect();
                Layer { n_in, n_out, weights, bias: vec![0.0; n_out] }
            })
            .collect();
        Self { arch, layers }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let layers = arch
            .widths()
            .windows(2)
            .map(|p| Layer {
                n_in: p[0],
                n_out: p[1],
                weights: vec![0.0; p[0] * p[1]],
                bias: vec![0.0; p[1]],
            })
            .collect();
        Self { arch, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Evaluates `rows` inputs laid out row-major in `input`. The output
    /// (`rows × output_dim`) is the last entry of `scratch.pre`.
    pub fn forward_batch<'s>(&self, input: &[f64], rows: usize, scratch: &'s mut Scratch) -> &'s [f64] {
        let n_layers = self.layers.len();
        assert_eq!(input.len(), rows * self.input_dim(), "input shape mismatch");
        scratch.pre.resize_with(n_layers, Vec::new);
        scratch.post.resize_with(n_layers.saturating_sub(1), Vec::new);
        for (li, layer) in self.layers.iter().enumerate() {
            let (pre_part, _) = scratch.pre.split_at_mut(li + 1);
            let z = &mut pre_part[li];
            let x: &[f64] = if li == 0 { input } else { &scratch.post[li - 1] };
            if layer.n_out <= NARROW {
                narrow_layer(layer, x, rows, z, &mut scratch.transposed);
            } else {
                z.clear();
                for _ in 0..rows {
                    z.extend_from_slice(&layer.bias);
                }
                gemm(
                    rows,
                    layer.n_in,
                    layer.n_out,
                    x,
                    (layer.n_in as isize, 1),
                    &layer.weights,
                    (layer.n_out as isize, 1),
                    1.0,
                    z,
                );
            }
            if li + 1 < n_layers {
                let a = &mut scratch.post[li];
                a.clear();
                a.resize(z.len(), 0.0);
                for (o, &v) in a.iter_mut().zip(z.iter()) {
                    *o = swish(v);
                }
            }
        }
        &scratch.pre[n_layers - 1]
    }

    /// Back-propagates `d_out` (`rows × output_dim`, the loss gradient with
    /// respect to the outputs of the last `forward_batch`) and overwrites
    /// `grads`. `d_out` is consumed as working space.
    pub fn backward_batch(
        &self,
        input: &[f64],
        rows: usize,
        scratch: &Scratch,
        d_out: &mut Vec<f64>,
        grads: &mut Gradients,
    ) {
        let mut delta = std::mem::take(d_out);
        let mut d_prev = Vec::new();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let x: &[f64] = if li == 0 { input } else { &scratch.post[li - 1] };
            // dW = Xᵀ · delta
            gemm(
                layer.n_in,
                rows,
                layer.n_out,
                x,
                (1, layer.n_in as isize),
                &delta,
                (layer.n_out as isize, 1),
                0.0,
                &mut grads.weights[li],
            );
            let db = &mut grads.bias[li];
            db.iter_mut().for_each(|v| *v = 0.0);
            for row in delta.chunks_exact(layer.n_out) {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            if li == 0 {
                break;
            }
            // dX = delta · Wᵀ, then through the activation.
            d_prev.clear();
            d_prev.resize(rows * layer.n_in, 0.0);
            gemm(
                rows,
                layer.n_out,
                layer.n_in,
                &delta,
                (layer.n_out as isize, 1),
                &layer.weights,
                (1, layer.n_out as isize),
                0.0,
                &mut d_prev,
            );
            for (d, &z) in d_prev.iter_mut().zip(&scratch.pre[li - 1]) {
                *d *= swish_grad(z);
            }
            std::mem::swap(&mut delta, &mut d_prev);
        }
        *d_out = delta;
    }

    /// Flat iterator over every parameter, layer by layer, weights first.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().zip(&self.bias).flat_map(|(w, b)| w.iter().chain(b.iter()))
    }
}
