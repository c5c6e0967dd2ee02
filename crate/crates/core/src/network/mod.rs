//! Fully connected tanh network with reverse-mode gradients.
//!
//! Parameters are stored flat in layer order; each layer is a row-major
//! `fan_in x fan_out` weight matrix followed by its bias vector, so a layer
//! computes `chi_out = act(chi_in W + b)` on row-vector activations.

mod adam;
mod lbfgs;

pub use adam::{adam_step, AdamState, LrSchedule};
pub use lbfgs::{lbfgs_minimize, lbfgs_minimize_observed, lbfgs_refine, LbfgsOptions, LbfgsReport, LbfgsStop};

use std::cell::RefCell;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MeshError, Result};
use crate::geometry::{Dim, ParamPoint, PhysPoint};

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// One value per network parameter, in the network's flat layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradient {
    pub values: Vec<f64>,
}

impl ParamGradient {
    pub fn zeros(n: usize) -> Self {
        ParamGradient { values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dot(&self, other: &ParamGradient) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &ParamGradient) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn scaled(&self, s: f64) -> ParamGradient {
        ParamGradient { values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Activations recorded by [`Network::forward`] for a later backward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    sizes: Vec<usize>,
    batch: usize,
    /// Input of each layer, `batch x fan_in` row-major. Hidden entries are
    /// post-tanh values.
    inputs: Vec<Vec<f64>>,
}

impl Tape {
    pub fn batch_len(&self) -> usize {
        self.batch
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        self.inputs.drain(..).for_each(recycle);
    }
}

/// `tanh` through one `exp`, about three times cheaper than the libm routine
/// and dominant in training cost. Relative error stays near 1e-14; small
/// arguments use the odd Taylor series to avoid cancellation.
#[inline]
fn tanh(x: f64) -> f64 {
    if x.abs() < 0.02 {
        let x2 = x * x;
        x * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0))))
    } else {
        1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
    }
}

thread_local! {
    static POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// Activation buffers of a training batch run to tens of megabytes. Fresh
/// allocations that size go through mmap and are page-faulted in on every
/// step, so they are recycled through a small per-thread pool instead.
fn take_buffer(len: usize) -> Vec<f64> {
    let mut v = POOL.with(|p| {
        let mut p = p.borrow_mut();
        match p.iter().position(|b| b.capacity() >= len) {
            Some(i) => p.swap_remove(i),
            None => p.pop().unwrap_or_default(),
        }
    });
    v.clear();
    v.reserve(len);
    v
}

fn recycle(v: Vec<f64>) {
    if v.capacity() >= 1 << 15 {
        POOL.with(|p| {
            let mut p = p.borrow_mut();
            if p.len() < 16 {
                p.push(v);
            }
        });
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<Dim> {
    if sizes.len() < 3 {
        return Err(MeshError::InvalidParam(format!(
            "layer sizes {sizes:?} need at least one hidden layer"
        )));
    }
    let (first, last) = (sizes[0], sizes[sizes.len() - 1]);
    if first != last || !(first == 2 || first == 3) {
        return Err(MeshError::InvalidParam(format!(
            "input and output sizes must both be 2 or 3, got {first} and {last}"
        )));
    }
    if sizes.contains(&0) {
        return Err(MeshError::InvalidParam(format!("layer sizes {sizes:?} contain a zero")));
    }
    Ok(Dim::from_n(first).expect("checked above"))
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Xavier-uniform weights, zero biases.
pub fn mlp_init(layer_sizes: &[usize], seed: u64) -> Result<Network> {
    validate_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(param_count(layer_sizes));
    for w in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        params.extend((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)));
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Ok(Network { sizes: layer_sizes.to_vec(), params })
}

/// `c = a * b` with `a: m x k`, `b: k x n`, all row-major unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides and dimensions describe regions inside the slices,
    // which the callers size as m*k, k*n and m*n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Network {
    /// Rebuilds a network from its layer sizes and flat parameters.
    pub fn from_parts(layer_sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        validate_sizes(&layer_sizes)?;
        let n = param_count(&layer_sizes);
        if params.len() != n {
            return Err(MeshError::ShapeMismatch(format!(
                "layer sizes {layer_sizes:?} need {n} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(MeshError::NonFinite("network parameters".into()));
        }
        Ok(Network { sizes: layer_sizes, params })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dim(&self) -> Dim {
        Dim::from_n(self.sizes[0]).expect("validated at construction")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (fan_in, fan_out, offset of W)
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let o = off;
            off += w[0] * w[1] + w[1];
            (w[0], w[1], o)
        })
    }

    /// Evaluates the network on a batch. With `record`, also returns the tape
    /// needed by [`Network::backward`].
    pub fn forward(&self, batch: &[ParamPoint], record: bool) -> Result<(Vec<PhysPoint>, Option<Tape>)> {
        if batch.is_empty() {
            return Err(MeshError::ShapeMismatch("empty batch".into()));
        }
        let n_in = self.sizes[0];
        let rows = batch.len();
        let mut x = take_buffer(rows * n_in);
        for p in batch {
            x.extend_from_slice(&p[..n_in]);
        }
        let n_layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(if record { n_layers } else { 0 });
        for (l, (fan_in, fan_out, off)) in self.layers().enumerate() {
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut z = take_buffer(rows * fan_out);
            for _ in 0..rows {
                z.extend_from_slice(b);
            }
            gemm(rows, fan_in, fan_out, &x, (fan_in, 1), w, (fan_out, 1), 1.0, &mut z);
            if l + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = tanh(*v));
            }
            let prev = std::mem::replace(&mut x, z);
            if record {
                inputs.push(prev);
            } else {
                recycle(prev);
            }
        }
        let n_out = self.sizes[n_layers];
        let out = x
            .chunks_exact(n_out)
            .map(|r| {
                let mut p = [0.0; 3];
                p[..n_out].copy_from_slice(r);
                p
            })
            .collect();
        recycle(x);
        let tape = record.then(|| Tape { sizes: self.sizes.clone(), batch: rows, inputs });
        Ok((out, tape))
    }

    /// Gradient of `sum_i <cotangents[i], output[i]>` with respect to every
    /// parameter. Only the first `dim` components of each cotangent are used.
    pub fn backward(&self, tape: &Tape, cotangents: &[PhysPoint]) -> Result<ParamGradient> {
        if tape.sizes != self.sizes || tape.inputs.len() != self.sizes.len() - 1 {
            return Err(MeshError::ShapeMismatch("tape was recorded on a different network".into()));
        }
        if cotangents.len() != tape.batch {
            return Err(MeshError::ShapeMismatch(format!(
                "{} cotangents for a batch of {}",
                cotangents.len(),
                tape.batch
            )));
        }
        let rows = tape.batch;
        let n_out = *self.sizes.last().unwrap();
        let mut delta = take_buffer(rows * n_out);
        for c in cotangents {
            delta.extend_from_slice(&c[..n_out]);
        }
        let mut grad = ParamGradient::zeros(self.params.len());
        let layers: Vec<_> = self.layers().collect();
        for (l, &(fan_in, fan_out, off)) in layers.iter().enumerate().rev() {
            let x = &tape.inputs[l];
            let nw = fan_in * fan_out;
            // dW = x^T delta
            gemm(fan_in, rows, fan_out, x, (1, fan_in), &delta, (fan_out, 1), 0.0, &mut grad.values[off..off + nw]);
            let gb = &mut grad.values[off + nw..off + nw + fan_out];
            for r in delta.chunks_exact(fan_out) {
                for (g, d) in gb.iter_mut().zip(r) {
                    *g += d;
                }
            }
            if l == 0 {
                break;
            }
            // delta_prev = (delta W^T) * (1 - x^2), x being the tanh output
            let w = &self.params[off..off + nw];
            let mut prev = take_buffer(rows * fan_in);
            prev.resize(rows * fan_in, 0.0);
            gemm(rows, fan_out, fan_in, &delta, (fan_out, 1), w, (1, fan_out), 0.0, &mut prev);
            for (d, a) in prev.iter_mut().zip(x) {
                *d *= 1.0 - a * a;
            }
            recycle(std::mem::replace(&mut delta, prev));
        }
        recycle(delta);
        Ok(grad)
    }
}
