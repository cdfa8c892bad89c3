//! Differentiable building blocks.
//!
//! Convention: linear layers act on `(samples, features)` matrices,
//! convolutional/pooling ops on `(channels, time)` matrices. `backward`
//! methods accumulate into the layer's gradient buffers (so several
//! forward/backward passes sum their gradients until `zero_grads`) and
//! return the gradient with respect to the layer input.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::ParamVisitor;

/// Fan-in uniform init, like the usual `U(-1/sqrt(fan_in), +1/sqrt(fan_in))`.
fn fan_in_uniform<R: Rng>(rng: &mut R, fan_in: usize) -> impl FnMut() -> f64 + '_ {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    move || rng.random_range(-a..a)
}

// ----- linear -------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>, // (out, in)
    pub b: Array1<f64>, // (out,)
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
}

impl Linear {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut draw = fan_in_uniform(rng, in_dim);
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| draw());
        let b = Array1::from_shape_fn(out_dim, |_| draw());
        Linear {
            gw: Array2::zeros(w.raw_dim()),
            gb: Array1::zeros(b.raw_dim()),
            w,
            b,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    /// `(n, in) -> (n, out)`
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        y
    }

    /// Accumulates `gw`, `gb`; returns `dx`.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.gw += &dy.t().dot(x);
        self.gb += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(
            &format!("{prefix}.w"),
            self.w.as_slice_mut().expect("standard layout"),
            self.gw.as_slice_mut().expect("standard layout"),
        );
        f(
            &format!("{prefix}.b"),
            self.b.as_slice_mut().expect("standard layout"),
            self.gb.as_slice_mut().expect("standard layout"),
        );
    }
}

// ----- causal dilated conv --------------------------------------------------

/// 1-d causal convolution with dilation: output at time `t` only sees
/// inputs at `t, t-d, t-2d, ...` (left zero padding of `(k-1)*d`).
/// Implemented as im2col + one matrix product.
#[derive(Debug, Clone)]
pub struct Conv1dCausal {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub w: Array2<f64>, // (out, in*kernel)
    pub b: Array1<f64>,
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
}

impl Conv1dCausal {
    pub fn new<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel >= 1 && dilation >= 1, "kernel/dilation must be >= 1");
        let mut draw = fan_in_uniform(rng, in_ch * kernel);
        let w = Array2::from_shape_fn((out_ch, in_ch * kernel), |_| draw());
        let b = Array1::from_shape_fn(out_ch, |_| draw());
        Conv1dCausal {
            in_ch,
            out_ch,
            kernel,
            dilation,
            gw: Array2::zeros(w.raw_dim()),
            gb: Array1::zeros(b.raw_dim()),
            w,
            b,
        }
    }

    fn pad(&self) -> usize {
        (self.kernel - 1) * self.dilation
    }

    /// Column `t` stacks the receptive field of output `t`: entry
    /// `(c*kernel + j, t)` is `x[c, t + j*d - pad]` (zero outside).
    /// Kernel tap `j = kernel-1` is the current sample.
    fn im2col(&self, x: &Array2<f64>) -> Array2<f64> {
        let l = x.ncols();
        let pad = self.pad() as isize;
        let mut m = Array2::<f64>::zeros((self.in_ch * self.kernel, l));
        for c in 0..self.in_ch {
            for j in 0..self.kernel {
                let row = c * self.kernel + j;
                let shift = j as isize * self.dilation as isize - pad;
                for t in 0..l {
                    let src = t as isize + shift;
                    if src >= 0 {
                        m[(row, t)] = x[(c, src as usize)];
                    }
                }
            }
        }
        m
    }

    /// `(in, L) -> (out, L)`
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.in_ch, "channel mismatch");
        let m = self.im2col(x);
        let mut y = self.w.dot(&m);
        for (mut row, &bi) in y.rows_mut().into_iter().zip(self.b.iter()) {
            row += bi;
        }
        y
    }

    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let l = x.ncols();
        let m = self.im2col(x);
        self.gw += &dy.dot(&m.t());
        self.gb += &dy.sum_axis(Axis(1));
        let dm = self.w.t().dot(dy); // (in*kernel, L)
        let pad = self.pad() as isize;
        let mut dx = Array2::<f64>::zeros((self.in_ch, l));
        for c in 0..self.in_ch {
            for j in 0..self.kernel {
                let row = c * self.kernel + j;
                let shift = j as isize * self.dilation as isize - pad;
                for t in 0..l {
                    let src = t as isize + shift;
                    if src >= 0 {
                        dx[(c, src as usize)] += dm[(row, t)];
                    }
                }
            }
        }
        dx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(
            &format!("{prefix}.w"),
            self.w.as_slice_mut().expect("standard layout"),
            self.gw.as_slice_mut().expect("standard layout"),
        );
        f(
            &format!("{prefix}.b"),
            self.b.as_slice_mut().expect("standard layout"),
            self.gb.as_slice_mut().expect("standard layout"),
        );
    }
}

// ----- activations -----------------------------------------------------------

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// `x` is the pre-activation input cached from the forward pass.
pub fn relu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &xv| {
        if xv <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

pub fn sigmoid(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// `y` is the sigmoid output cached from the forward pass.
pub fn sigmoid_backward(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &yv| *d *= yv * (1.0 - yv));
    dx
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s: f64 = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    y
}

/// Backward through row-wise softmax given its output `y`.
pub fn softmax_backward_rows(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = Array2::<f64>::zeros(y.raw_dim());
    for i in 0..y.nrows() {
        let dot: f64 = y.row(i).iter().zip(dy.row(i)).map(|(a, b)| a * b).sum();
        for j in 0..y.ncols() {
            dx[(i, j)] = y[(i, j)] * (dy[(i, j)] - dot);
        }
    }
    dx
}

// ----- pooling / resampling ---------------------------------------------------

/// Average-pool time by `factor`; length must divide evenly.
pub fn avg_pool(x: &Array2<f64>, factor: usize) -> Array2<f64> {
    assert!(factor >= 1 && x.ncols() % factor == 0, "pool factor must divide length");
    let t_out = x.ncols() / factor;
    Array2::from_shape_fn((x.nrows(), t_out), |(c, t)| {
        (0..factor).map(|j| x[(c, t * factor + j)]).sum::<f64>() / factor as f64
    })
}

pub fn avg_pool_backward(dy: &Array2<f64>, factor: usize) -> Array2<f64> {
    let t_in = dy.ncols() * factor;
    Array2::from_shape_fn((dy.nrows(), t_in), |(c, t)| {
        dy[(c, t / factor)] / factor as f64
    })
}

/// Nearest-neighbor upsample time by `factor`.
pub fn upsample_nearest(x: &Array2<f64>, factor: usize) -> Array2<f64> {
    assert!(factor >= 1);
    Array2::from_shape_fn((x.nrows(), x.ncols() * factor), |(c, t)| x[(c, t / factor)])
}

pub fn upsample_nearest_backward(dy: &Array2<f64>, factor: usize) -> Array2<f64> {
    assert!(dy.ncols() % factor == 0);
    let t_in = dy.ncols() / factor;
    Array2::from_shape_fn((dy.nrows(), t_in), |(c, t)| {
        (0..factor).map(|j| dy[(c, t * factor + j)]).sum()
    })
}

// ----- layer norm ----------------------------------------------------------------

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub ggamma: Array1<f64>,
    pub gbeta: Array1<f64>,
}

/// Forward cache: normalized activations and per-row inverse stddev.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            ggamma: Array1::zeros(dim),
            gbeta: Array1::zeros(dim),
        }
    }

    /// Normalize each row over the feature axis.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = Array2::<f64>::zeros(x.raw_dim());
        let mut inv_std = Array1::<f64>::zeros(x.nrows());
        let mut y = Array2::<f64>::zeros(x.raw_dim());
        for i in 0..x.nrows() {
            let row = x.row(i);
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..x.ncols() {
                let xh = (x[(i, j)] - mean) * is;
                xhat[(i, j)] = xh;
                y[(i, j)] = xh * self.gamma[j] + self.beta[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Array2<f64>) -> Array2<f64> {
        let (n, d) = (dy.nrows(), dy.ncols());
        let df = d as f64;
        let mut dx = Array2::<f64>::zeros(dy.raw_dim());
        for i in 0..n {
            let mut sum_dyg = 0.0;
            let mut sum_dyg_xhat = 0.0;
            for j in 0..d {
                let dyg = dy[(i, j)] * self.gamma[j];
                sum_dyg += dyg;
                sum_dyg_xhat += dyg * cache.xhat[(i, j)];
                self.ggamma[j] += dy[(i, j)] * cache.xhat[(i, j)];
                self.gbeta[j] += dy[(i, j)];
            }
            for j in 0..d {
                let dyg = dy[(i, j)] * self.gamma[j];
                dx[(i, j)] = cache.inv_std[i]
                    * (dyg - sum_dyg / df - cache.xhat[(i, j)] * sum_dyg_xhat / df);
            }
        }
        dx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(
            &format!("{prefix}.gamma"),
            self.gamma.as_slice_mut().expect("standard layout"),
            self.ggamma.as_slice_mut().expect("standard layout"),
        );
        f(
            &format!("{prefix}.beta"),
            self.beta.as_slice_mut().expect("standard layout"),
            self.gbeta.as_slice_mut().expect("standard layout"),
        );
    }
}
