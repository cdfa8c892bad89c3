//! Single-head transformer encoder layer (post-norm variant).
//!
//! `y = LN2( h + FF(h) )` where `h = LN1( x + Attn(x) )`, attention is
//! single-head scaled dot-product over the token (= cell) axis, and the
//! feed-forward is `W2·relu(W1·h)`. Tokens are rows of the input.

use ndarray::Array2;
use rand::Rng;

use super::layers::{
    relu, relu_backward, softmax_backward_rows, softmax_rows, LayerNorm, LayerNormCache, Linear,
};
use super::ParamVisitor;

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

/// Activations cached by [`EncoderLayer::forward`] for the backward pass.
pub struct EncoderCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    ctx: Array2<f64>,
    sum1_cache: LayerNormCache,
    h1: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_mid: Array2<f64>,
    sum2_cache: LayerNormCache,
}

impl EncoderLayer {
    pub fn new<R: Rng>(dim: usize, ff_width: usize, rng: &mut R) -> Self {
        EncoderLayer {
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
            ln1: LayerNorm::new(dim),
            ff1: Linear::new(dim, ff_width, rng),
            ff2: Linear::new(ff_width, dim, rng),
            ln2: LayerNorm::new(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.in_dim()
    }

    /// `(tokens, dim) -> (tokens, dim)`
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, EncoderCache) {
        let d = self.dim() as f64;
        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let scores = q.dot(&k.t()) / d.sqrt();
        let attn = softmax_rows(&scores);
        let ctx = attn.dot(&v);
        let attn_out = self.wo.forward(&ctx);
        let sum1 = x + &attn_out;
        let (h1, sum1_cache) = self.ln1.forward(&sum1);
        let ff_pre = self.ff1.forward(&h1);
        let ff_mid = relu(&ff_pre);
        let ff_out = self.ff2.forward(&ff_mid);
        let sum2 = &h1 + &ff_out;
        let (y, sum2_cache) = self.ln2.forward(&sum2);
        let cache = EncoderCache {
            x: x.clone(),
            q,
            k,
            v,
            attn,
            ctx,
            sum1_cache,
            h1,
            ff_pre,
            ff_mid,
            sum2_cache,
        };
        (y, cache)
    }

    /// Accumulates parameter gradients, returns `dx`.
    pub fn backward(&mut self, cache: &EncoderCache, dy: &Array2<f64>) -> Array2<f64> {
        let d = self.dim() as f64;
        let dsum2 = self.ln2.backward(&cache.sum2_cache, dy);
        // residual: sum2 = h1 + ff2(relu(ff1(h1)))
        let dff_mid = self.ff2.backward(&cache.ff_mid, &dsum2);
        let dff_pre = relu_backward(&cache.ff_pre, &dff_mid);
        let mut dh1 = dsum2.clone();
        dh1 += &self.ff1.backward(&cache.h1, &dff_pre);
        let dsum1 = self.ln1.backward(&cache.sum1_cache, &dh1);
        // residual: sum1 = x + wo(attn·v)
        let dctx = self.wo.backward(&cache.ctx, &dsum1);
        let dattn = dctx.dot(&cache.v.t());
        let dv = cache.attn.t().dot(&dctx);
        let dscores = softmax_backward_rows(&cache.attn, &dattn) / d.sqrt();
        let dq = dscores.dot(&cache.k);
        let dk = dscores.t().dot(&cache.q);
        let mut dx = dsum1;
        dx += &self.wq.backward(&cache.x, &dq);
        dx += &self.wk.backward(&cache.x, &dk);
        dx += &self.wv.backward(&cache.x, &dv);
        dx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor) {
        self.wq.visit(&format!("{prefix}.wq"), f);
        self.wk.visit(&format!("{prefix}.wk"), f);
        self.wv.visit(&format!("{prefix}.wv"), f);
        self.wo.visit(&format!("{prefix}.wo"), f);
        self.ln1.visit(&format!("{prefix}.ln1"), f);
        self.ff1.visit(&format!("{prefix}.ff1"), f);
        self.ff2.visit(&format!("{prefix}.ff2"), f);
        self.ln2.visit(&format!("{prefix}.ln2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flat_grads, zero_grads, Parametrized, ParamVisitor};

    struct Wrap(EncoderLayer);
    impl Parametrized for Wrap {
        fn visit_params(&mut self, f: &mut ParamVisitor) {
            self.0.visit("enc", f);
        }
    }

    fn toy_input(n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |(i, j)| {
            ((i * 7 + j * 3) % 11) as f64 * 0.17 - 0.8
        })
    }

    #[test]
    fn output_shape_matches_input() {
        let mut rng = crate::rng::substream(0, "t/enc");
        let enc = EncoderLayer::new(6, 12, &mut rng);
        let x = toy_input(5, 6);
        let (y, _) = enc.forward(&x);
        assert_eq!(y.dim(), (5, 6));
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut rng = crate::rng::substream(4, "t/enc-grad");
        let mut w = Wrap(EncoderLayer::new(4, 8, &mut rng));
        let x = toy_input(3, 4);
        // loss = 0.5 sum(y^2)
        let fwd_loss = |w: &Wrap, x: &Array2<f64>| {
            let (y, _) = w.0.forward(x);
            0.5 * y.iter().map(|v| v * v).sum::<f64>()
        };
        zero_grads(&mut w);
        let (y, cache) = w.0.forward(&x);
        let dx = w.0.backward(&cache, &y);
        let analytic = flat_grads(&mut w);

        // probe a spread of parameter coordinates numerically
        let n = analytic.len();
        let h = 1e-6;
        for probe in 0..24 {
            let idx = probe * (n / 24).max(1) % n;
            crate::nn::nudge_param(&mut w, idx, h);
            let lp = fwd_loss(&w, &x);
            crate::nn::nudge_param(&mut w, idx, -2.0 * h);
            let lm = fwd_loss(&w, &x);
            crate::nn::nudge_param(&mut w, idx, h);
            let num = (lp - lm) / (2.0 * h);
            let a = analytic[idx];
            // Two-tier comparison: gradients that central differences can
            // resolve must agree tightly in relative terms; below that the
            // difference may be dominated by cancellation noise, so only an
            // absolute agreement (still far smaller than any dropped or
            // mis-scaled term would produce) is meaningful.
            let ok = if a.abs().max(num.abs()) > 1e-5 {
                ((a - num) / a.abs().max(num.abs())).abs() < 1e-4
            } else {
                (a - num).abs() < 2e-8
            };
            assert!(
                ok,
                "param {idx} ({}): analytic {a} vs numeric {num}",
                crate::nn::param_label(&mut w, idx)
            );
        }

        // and the input gradient
        let mut x2 = x.clone();
        for &(i, j) in &[(0usize, 0usize), (2, 3), (1, 1)] {
            x2[(i, j)] += h;
            let lp = fwd_loss(&w, &x2);
            x2[(i, j)] -= 2.0 * h;
            let lm = fwd_loss(&w, &x2);
            x2[(i, j)] += h;
            let num = (lp - lm) / (2.0 * h);
            let a = dx[(i, j)];
            let ok = if a.abs().max(num.abs()) > 1e-5 {
                ((a - num) / a.abs().max(num.abs())).abs() < 1e-4
            } else {
                (a - num).abs() < 2e-8
            };
            assert!(ok, "dx({i},{j}): {a} vs {num}");
        }
    }

    #[test]
    fn tokens_interact_through_attention() {
        // changing one token must be able to change another's output
        let mut rng = crate::rng::substream(5, "t/enc-mix");
        let enc = EncoderLayer::new(4, 8, &mut rng);
        let x = toy_input(3, 4);
        let (y, _) = enc.forward(&x);
        let mut x2 = x.clone();
        x2[(0, 0)] += 1.0;
        let (y2, _) = enc.forward(&x2);
        let moved: f64 = (0..4).map(|j| (y[(2, j)] - y2[(2, j)]).abs()).sum();
        assert!(moved > 1e-9, "token 2 ignored token 0 entirely");
    }
}
