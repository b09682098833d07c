//! Forward pass with activation caching and the matching reverse pass.

use alloc::vec;
use alloc::vec::Vec;

use super::real::{gemm, Mat, Real};
use super::tensor::TensorMap;
use super::{MicroLm, ModelError, PAD};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

const PER_LAYER: usize = 12;
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const W_QKV: usize = 2;
const B_QKV: usize = 3;
const W_OUT: usize = 4;
const B_OUT: usize = 5;
const LN2_G: usize = 6;
const LN2_B: usize = 7;
const W_IN: usize = 8;
const B_IN: usize = 9;
const W_FF: usize = 10;
const B_FF: usize = 11;

fn layer_index(l: usize, k: usize) -> usize {
    2 + l * PER_LAYER + k
}

pub(super) struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

pub(super) struct LayerActs<T> {
    ln1: LnCache<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    ln2: LnCache<T>,
    h2: Vec<T>,
    u: Vec<T>,
    /// tanh term of the GELU at each `u`.
    th: Vec<T>,
    g: Vec<T>,
}

pub(super) struct Activations<T> {
    rows: usize,
    seq: usize,
    tokens: Vec<u32>,
    layers: Vec<LayerActs<T>>,
    lnf: LnCache<T>,
    pub(super) xf: Vec<T>,
}

fn layer_norm<T: Real>(x: &[T], gain: &[T], bias: &[T], d: usize, out: &mut [T]) -> LnCache<T> {
    let n = x.len() / d;
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    let inv_d = T::of(1.0 / d as f64);
    let eps = T::of(LN_EPS);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let r = T::one() / (var + eps).sqrt();
        rstd[i] = r;
        let xh = &mut xhat[i * d..(i + 1) * d];
        let o = &mut out[i * d..(i + 1) * d];
        for j in 0..d {
            xh[j] = (row[j] - mean) * r;
            o[j] = xh[j] * gain[j] + bias[j];
        }
    }
    LnCache { xhat, rstd }
}

/// Accumulates the input gradient into `dx` and parameter gradients into
/// `dgain`/`dbias`.
fn layer_norm_backward<T: Real>(
    dy: &[T],
    cache: &LnCache<T>,
    gain: &[T],
    d: usize,
    dgain: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
) {
    let n = dy.len() / d;
    let inv_d = T::of(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let r = cache.rstd[i];
        let dxr = &mut dx[i * d..(i + 1) * d];
        for j in 0..d {
            dxr[j] += r * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

fn add_bias<T: Real>(y: &mut [T], bias: &[T]) {
    let d = bias.len();
    for row in y.chunks_exact_mut(d) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

fn col_sum_into<T: Real>(dy: &[T], out: &mut [T]) {
    let d = out.len();
    for row in dy.chunks_exact(d) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += *v;
        }
    }
}

/// tanh of the GELU argument, via exp (cheaper than libm tanh; saturates
/// cleanly to ±1).
fn gelu_tanh<T: Real>(u: T) -> T {
    let z = T::of(GELU_C) * (u + T::of(GELU_K) * u * u * u);
    let two = T::of(2.0);
    T::one() - two / ((two * z).exp() + T::one())
}

fn gelu_grad<T: Real>(u: T, t: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * u * u)
}

impl<T: Real> MicroLm<T> {
    fn p(&self, i: usize) -> &[T] {
        &self.params.tensors[i].data
    }

    /// Runs the network on `rows × seq` tokens (row-major) and keeps every
    /// activation the reverse pass needs.
    pub(super) fn forward(&self, tokens: &[u32], rows: usize, seq: usize) -> Activations<T> {
        let cfg = &self.config;
        let (d, f, h) = (cfg.d_model, cfg.d_ff, cfg.n_heads);
        let hd = cfg.head_dim();
        let n = rows * seq;
        let scale = T::of(1.0 / libm::sqrt(hd as f64));

        let mut x = vec![T::zero(); n * d];
        let tok = self.p(0);
        let pos = self.p(1);
        for (i, &t) in tokens.iter().enumerate() {
            let s = i % seq;
            let xr = &mut x[i * d..(i + 1) * d];
            let te = &tok[t as usize * d..(t as usize + 1) * d];
            let pe = &pos[s * d..(s + 1) * d];
            for j in 0..d {
                xr[j] = te[j] + pe[j];
            }
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let w = |k| self.p(layer_index(l, k));
            let mut h1 = vec![T::zero(); n * d];
            let ln1 = layer_norm(&x, w(LN1_G), w(LN1_B), d, &mut h1);

            let mut qkv = vec![T::zero(); n * 3 * d];
            gemm(T::one(), Mat::new(&h1, n, d), Mat::new(w(W_QKV), d, 3 * d), T::zero(), &mut qkv, 3 * d);
            add_bias(&mut qkv, w(B_QKV));

            let mut probs = vec![T::zero(); rows * h * seq * seq];
            let mut att = vec![T::zero(); n * d];
            for b in 0..rows {
                let base = b * seq * 3 * d;
                for head in 0..h {
                    let q = Mat::strided(&qkv[base + head * hd..], seq, hd, 3 * d);
                    let k = Mat::strided(&qkv[base + d + head * hd..], seq, hd, 3 * d);
                    let v = Mat::strided(&qkv[base + 2 * d + head * hd..], seq, hd, 3 * d);
                    let p = &mut probs[(b * h + head) * seq * seq..(b * h + head + 1) * seq * seq];
                    gemm(scale, q, k.t(), T::zero(), p, seq);
                    for i in 0..seq {
                        let row = &mut p[i * seq..(i + 1) * seq];
                        let (live, masked) = row.split_at_mut(i + 1);
                        let max = live.iter().copied().fold(T::neg_infinity(), T::max);
                        let mut sum = T::zero();
                        for e in live.iter_mut() {
                            *e = (*e - max).exp();
                            sum += *e;
                        }
                        let inv = T::one() / sum;
                        live.iter_mut().for_each(|e| *e *= inv);
                        masked.iter_mut().for_each(|e| *e = T::zero());
                    }
                    gemm(T::one(), Mat::new(p, seq, seq), v, T::zero(), &mut att[b * seq * d + head * hd..], d);
                }
            }

            let mut y = vec![T::zero(); n * d];
            gemm(T::one(), Mat::new(&att, n, d), Mat::new(w(W_OUT), d, d), T::zero(), &mut y, d);
            add_bias(&mut y, w(B_OUT));
            for (xv, yv) in x.iter_mut().zip(&y) {
                *xv += *yv;
            }

            let mut h2 = vec![T::zero(); n * d];
            let ln2 = layer_norm(&x, w(LN2_G), w(LN2_B), d, &mut h2);
            let mut u = vec![T::zero(); n * f];
            gemm(T::one(), Mat::new(&h2, n, d), Mat::new(w(W_IN), d, f), T::zero(), &mut u, f);
            add_bias(&mut u, w(B_IN));
            let th: Vec<T> = u.iter().map(|&v| gelu_tanh(v)).collect();
            let half = T::of(0.5);
            let g: Vec<T> = u.iter().zip(&th).map(|(&v, &t)| half * v * (T::one() + t)).collect();
            let mut out = y;
            gemm(T::one(), Mat::new(&g, n, f), Mat::new(w(W_FF), f, d), T::zero(), &mut out, d);
            add_bias(&mut out, w(B_FF));
            for (xv, ov) in x.iter_mut().zip(&out) {
                *xv += *ov;
            }
            layers.push(LayerActs { ln1, h1, qkv, probs, att, ln2, h2, u, th, g });
        }

        let top = 2 + cfg.n_layers * PER_LAYER;
        let mut xf = vec![T::zero(); n * d];
        let lnf = layer_norm(&x, self.p(top), self.p(top + 1), d, &mut xf);
        Activations { rows, seq, tokens: tokens.to_vec(), layers, lnf, xf }
    }

    /// LM-head log-softmax at the given flat positions of `xf`.
    pub(super) fn head_logprobs(&self, xf: &[T], positions: &[usize]) -> Vec<Vec<f64>> {
        let cfg = &self.config;
        let (d, v) = (cfg.d_model, cfg.vocab_size);
        let head = self.p(2 + cfg.n_layers * PER_LAYER + 2);
        let m = positions.len();
        let mut gathered = vec![T::zero(); m * d];
        for (i, &p) in positions.iter().enumerate() {
            gathered[i * d..(i + 1) * d].copy_from_slice(&xf[p * d..(p + 1) * d]);
        }
        let mut logits = vec![T::zero(); m * v];
        gemm(T::one(), Mat::new(&gathered, m, d), Mat::new(head, d, v), T::zero(), &mut logits, v);
        logits
            .chunks_exact(v)
            .map(|row| {
                let row: Vec<f64> = row.iter().map(|x| x.f64()).collect();
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + libm::log(row.iter().map(|&z| libm::exp(z - max)).sum::<f64>());
                row.into_iter().map(|z| z - lse).collect()
            })
            .collect()
    }

    /// Cross-entropy from `acts` and its gradient, written into `grads`.
    pub(super) fn backward(&self, acts: Activations<T>, grads: &mut TensorMap<T>) -> Result<f64, ModelError> {
        let cfg = &self.config;
        let (d, f, h, v) = (cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.vocab_size);
        let hd = cfg.head_dim();
        let (rows, seq) = (acts.rows, acts.seq);
        let n = rows * seq;
        let scale = T::of(1.0 / libm::sqrt(hd as f64));
        let top = 2 + cfg.n_layers * PER_LAYER;
        grads.fill_zero();

        // Output head and loss.
        let head = self.p(top + 2);
        let mut dlogits = vec![T::zero(); n * v];
        gemm(T::one(), Mat::new(&acts.xf, n, d), Mat::new(head, d, v), T::zero(), &mut dlogits, v);
        let mut count = 0usize;
        for r in 0..rows {
            for s in 0..seq.saturating_sub(1) {
                if acts.tokens[r * seq + s + 1] != PAD {
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(ModelError::NoTargets);
        }
        let inv_count = T::of(1.0 / count as f64);
        let mut loss = 0.0f64;
        for i in 0..n {
            let row = &mut dlogits[i * v..(i + 1) * v];
            let s = i % seq;
            let target = if s + 1 < seq { acts.tokens[i + 1] } else { PAD };
            if target == PAD {
                row.iter_mut().for_each(|e| *e = T::zero());
                continue;
            }
            let t = target as usize;
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let shifted = (row[t] - max).f64();
            let mut sum = T::zero();
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                sum += *e;
            }
            loss += libm::log(sum.f64()) - shifted;
            let inv = inv_count / sum;
            row.iter_mut().for_each(|e| *e *= inv);
            row[t] -= inv_count;
        }
        loss /= count as f64;

        gemm(T::one(), Mat::new(&acts.xf, n, d).t(), Mat::new(&dlogits, n, v), T::zero(), &mut grads.tensors[top + 2].data, v);
        let mut dxf = vec![T::zero(); n * d];
        gemm(T::one(), Mat::new(&dlogits, n, v), Mat::new(head, d, v).t(), T::zero(), &mut dxf, d);
        drop(dlogits);

        let mut dx = vec![T::zero(); n * d];
        {
            let (gb, rest) = grads.tensors[top..].split_at_mut(1);
            layer_norm_backward(&dxf, &acts.lnf, self.p(top), d, &mut gb[0].data, &mut rest[0].data, &mut dx);
        }

        let mut scratch = vec![T::zero(); seq * seq];
        for l in (0..cfg.n_layers).rev() {
            let a = &acts.layers[l];
            let w = |k| self.p(layer_index(l, k));
            let gi = |k| layer_index(l, k);

            // Feed-forward block: x += W_ff·gelu(W_in·ln2(x)).
            gemm(T::one(), Mat::new(&a.g, n, f).t(), Mat::new(&dx, n, d), T::zero(), &mut grads.tensors[gi(W_FF)].data, d);
            col_sum_into(&dx, &mut grads.tensors[gi(B_FF)].data);
            let mut du = vec![T::zero(); n * f];
            gemm(T::one(), Mat::new(&dx, n, d), Mat::new(w(W_FF), f, d).t(), T::zero(), &mut du, f);
            for ((g, &u), &t) in du.iter_mut().zip(&a.u).zip(&a.th) {
                *g *= gelu_grad(u, t);
            }
            gemm(T::one(), Mat::new(&a.h2, n, d).t(), Mat::new(&du, n, f), T::zero(), &mut grads.tensors[gi(W_IN)].data, f);
            col_sum_into(&du, &mut grads.tensors[gi(B_IN)].data);
            let mut dh = vec![T::zero(); n * d];
            gemm(T::one(), Mat::new(&du, n, f), Mat::new(w(W_IN), d, f).t(), T::zero(), &mut dh, d);
            drop(du);
            {
                let (g_gain, rest) = grads.tensors[gi(LN2_G)..].split_at_mut(1);
                layer_norm_backward(&dh, &a.ln2, w(LN2_G), d, &mut g_gain[0].data, &mut rest[0].data, &mut dx);
            }

            // Attention block: x += W_out·attn(W_qkv·ln1(x)).
            gemm(T::one(), Mat::new(&a.att, n, d).t(), Mat::new(&dx, n, d), T::zero(), &mut grads.tensors[gi(W_OUT)].data, d);
            col_sum_into(&dx, &mut grads.tensors[gi(B_OUT)].data);
            let mut datt = vec![T::zero(); n * d];
            gemm(T::one(), Mat::new(&dx, n, d), Mat::new(w(W_OUT), d, d).t(), T::zero(), &mut datt, d);

            let mut dqkv = vec![T::zero(); n * 3 * d];
            for b in 0..rows {
                let base = b * seq * 3 * d;
                for head in 0..h {
                    let q = Mat::strided(&a.qkv[base + head * hd..], seq, hd, 3 * d);
                    let k = Mat::strided(&a.qkv[base + d + head * hd..], seq, hd, 3 * d);
                    let vv = Mat::strided(&a.qkv[base + 2 * d + head * hd..], seq, hd, 3 * d);
                    let p = &a.probs[(b * h + head) * seq * seq..(b * h + head + 1) * seq * seq];
                    let d_o = Mat::strided(&datt[b * seq * d + head * hd..], seq, hd, d);

                    gemm(T::one(), d_o, vv.t(), T::zero(), &mut scratch, seq);
                    gemm(T::one(), Mat::new(p, seq, seq).t(), d_o, T::zero(), &mut dqkv[base + 2 * d + head * hd..], 3 * d);
                    for i in 0..seq {
                        let pr = &p[i * seq..(i + 1) * seq];
                        let dr = &mut scratch[i * seq..(i + 1) * seq];
                        let dot = pr[..=i].iter().zip(&dr[..=i]).map(|(&x, &y)| x * y).sum::<T>();
                        for j in 0..=i {
                            dr[j] = pr[j] * (dr[j] - dot);
                        }
                        dr[i + 1..].iter_mut().for_each(|e| *e = T::zero());
                    }
                    let ds = Mat::new(&scratch[..], seq, seq);
                    gemm(scale, ds, k, T::zero(), &mut dqkv[base + head * hd..], 3 * d);
                    gemm(scale, ds.t(), q, T::zero(), &mut dqkv[base + d + head * hd..], 3 * d);
                }
            }
            drop(datt);
            gemm(T::one(), Mat::new(&a.h1, n, d).t(), Mat::new(&dqkv, n, 3 * d), T::zero(), &mut grads.tensors[gi(W_QKV)].data, 3 * d);
            col_sum_into(&dqkv, &mut grads.tensors[gi(B_QKV)].data);
            gemm(T::one(), Mat::new(&dqkv, n, 3 * d), Mat::new(w(W_QKV), d, 3 * d).t(), T::zero(), &mut dh, d);
            {
                let (g_gain, rest) = grads.tensors[gi(LN1_G)..].split_at_mut(1);
                layer_norm_backward(&dh, &a.ln1, w(LN1_G), d, &mut g_gain[0].data, &mut rest[0].data, &mut dx);
            }
        }

        let (emb, rest) = grads.tensors.split_at_mut(1);
        let (dtok, dpos) = (&mut emb[0].data, &mut rest[0].data);
        for (i, &t) in acts.tokens.iter().enumerate() {
            let s = i % seq;
            let dxr = &dx[i * d..(i + 1) * d];
            let tr = &mut dtok[t as usize * d..(t as usize + 1) * d];
            for j in 0..d {
                tr[j] += dxr[j];
            }
            let pr = &mut dpos[s * d..(s + 1) * d];
            for j in 0..d {
                pr[j] += dxr[j];
            }
        }
        Ok(loss)
    }
}
