//! Pre-norm decoder-only transformer with hand-written backward pass.
//!
//! Block: `x += Attn(LN1(x))`, `x += W2 gelu(W1 LN2(x) + b1) + b2`; then a
//! final layer norm and the output projection. Everything is `f64`.

use super::params::{slot, LMParams};
use crate::error::{RacError, Result};
use crate::text::TokenId;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Row-major `[rows x vocab]` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub rows: usize,
    pub vocab: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.vocab..(r + 1) * self.vocab]
    }
}

struct LnCache {
    out: Vec<f64>,
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct LayerCache {
    ln1: LnCache,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[heads x T x T]`, lower triangle only.
    probs: Vec<f64>,
    attn: Vec<f64>,
    ln2: LnCache,
    pre_act: Vec<f64>,
    act: Vec<f64>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    ids: Vec<TokenId>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
}

/// Log-softmax of one row, shifted by its max for stability.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(f64::exp).collect()
}

/// Full logits for every position.
pub fn forward(params: &LMParams, ids: &[TokenId]) -> Result<Logits> {
    let rows: Vec<usize> = (0..ids.len()).collect();
    Ok(forward_rows(params, ids, &rows)?.1)
}

/// Logits at the final position only.
pub fn next_token_logits(params: &LMParams, ids: &[TokenId]) -> Result<Vec<f64>> {
    if ids.is_empty() {
        return Err(RacError::config("cannot score an empty context"));
    }
    Ok(forward_rows(params, ids, &[ids.len() - 1])?.1.data)
}

fn check_ids(params: &LMParams, ids: &[TokenId]) -> Result<()> {
    let cfg = &params.config;
    if ids.len() > cfg.context_len {
        return Err(RacError::SequenceTooLong {
            len: ids.len(),
            max: cfg.context_len,
        });
    }
    if let Some(&bad) = ids.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(RacError::config(format!(
            "token id {bad} outside vocabulary of size {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Runs the network over `ids` and computes logits only for `rows`.
pub fn forward_rows(
    params: &LMParams,
    ids: &[TokenId],
    rows: &[usize],
) -> Result<(ForwardCache, Logits)> {
    check_ids(params, ids)?;
    let cfg = &params.config;
    let (t_len, d, f, h) = (ids.len(), cfg.d_model, cfg.d_ff(), cfg.n_heads);
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut x = vec![0.0; t_len * d];
    let tok = params.data(slot::TOK_EMB);
    let pos = params.data(slot::POS_EMB);
    for (t, &id) in ids.iter().enumerate() {
        let e = &tok[id as usize * d..(id as usize + 1) * d];
        let p = &pos[t * d..(t + 1) * d];
        for c in 0..d {
            x[t * d + c] = e[c] + p[c];
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let base = slot::layer(l);
        let w = |s: usize| params.data(base + s);

        let ln1 = layer_norm(&x, t_len, d, w(slot::LN1_G), w(slot::LN1_B));
        let q = matmul(&ln1.out, t_len, d, w(slot::WQ), d);
        let k = matmul(&ln1.out, t_len, d, w(slot::WK), d);
        let v = matmul(&ln1.out, t_len, d, w(slot::WV), d);

        let mut probs = vec![0.0; h * t_len * t_len];
        let mut attn = vec![0.0; t_len * d];
        for head in 0..h {
            let off = head * dh;
            for i in 0..t_len {
                let prow = &mut probs[(head * t_len + i) * t_len..(head * t_len + i + 1) * t_len];
                let qi = &q[i * d + off..i * d + off + dh];
                let mut m = f64::NEG_INFINITY;
                for j in 0..=i {
                    let kj = &k[j * d + off..j * d + off + dh];
                    let s = dot(qi, kj) * scale;
                    prow[j] = s;
                    m = m.max(s);
                }
                let mut z = 0.0;
                for pj in prow[..=i].iter_mut() {
                    *pj = (*pj - m).exp();
                    z += *pj;
                }
                for pj in prow[..=i].iter_mut() {
                    *pj /= z;
                }
                let out = &mut attn[i * d + off..i * d + off + dh];
                for j in 0..=i {
                    let pj = prow[j];
                    let vj = &v[j * d + off..j * d + off + dh];
                    for c in 0..dh {
                        out[c] += pj * vj[c];
                    }
                }
            }
        }
        let proj = matmul(&attn, t_len, d, w(slot::WO), d);
        add_in_place(&mut x, &proj);

        let ln2 = layer_norm(&x, t_len, d, w(slot::LN2_G), w(slot::LN2_B));
        let mut pre_act = matmul(&ln2.out, t_len, d, w(slot::FF1_W), f);
        add_bias(&mut pre_act, w(slot::FF1_B));
        let act: Vec<f64> = pre_act.iter().map(|&u| gelu(u)).collect();
        let mut ff = matmul(&act, t_len, f, w(slot::FF2_W), d);
        add_bias(&mut ff, w(slot::FF2_B));
        add_in_place(&mut x, &ff);

        layers.push(LayerCache {
            ln1,
            q,
            k,
            v,
            probs,
            attn,
            ln2,
            pre_act,
            act,
        });
    }

    let nl = cfg.n_layers;
    let lnf = layer_norm(
        &x,
        t_len,
        d,
        params.data(slot::lnf_g(nl)),
        params.data(slot::lnf_g(nl) + 1),
    );
    let out_w = params.data(slot::lnf_g(nl) + 2);
    let out_b = params.data(slot::lnf_g(nl) + 3);
    let vsz = cfg.vocab_size;
    let mut logits = vec![0.0; rows.len() * vsz];
    for (r, &row) in rows.iter().enumerate() {
        let dst = &mut logits[r * vsz..(r + 1) * vsz];
        dst.copy_from_slice(out_b);
        let hrow = &lnf.out[row * d..(row + 1) * d];
        for (c, &hv) in hrow.iter().enumerate() {
            let wrow = &out_w[c * vsz..(c + 1) * vsz];
            for j in 0..vsz {
                dst[j] += hv * wrow[j];
            }
        }
    }
    Ok((
        ForwardCache {
            ids: ids.to_vec(),
            layers,
            lnf,
        },
        Logits {
            rows: rows.len(),
            vocab: vsz,
            data: logits,
        },
    ))
}

/// Accumulates `d loss / d params` into `grads`, given `dlogits` for the rows
/// that [`forward_rows`] produced.
pub fn backward(
    params: &LMParams,
    cache: &ForwardCache,
    rows: &[usize],
    dlogits: &[f64],
    grads: &mut LMParams,
) {
    let cfg = &params.config;
    let t_len = cache.ids.len();
    let (d, f, h, vsz, nl) = (cfg.d_model, cfg.d_ff(), cfg.n_heads, cfg.vocab_size, cfg.n_layers);
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();
    let fin = slot::lnf_g(nl);

    // Output projection.
    let mut dlnf = vec![0.0; t_len * d];
    {
        let out_w = params.data(fin + 2);
        for (r, &row) in rows.iter().enumerate() {
            let g = &dlogits[r * vsz..(r + 1) * vsz];
            let hrow = &cache.lnf.out[row * d..(row + 1) * d];
            let db = grads.data_mut(fin + 3);
            for j in 0..vsz {
                db[j] += g[j];
            }
            let dw = grads.data_mut(fin + 2);
            for c in 0..d {
                let hv = hrow[c];
                let dwrow = &mut dw[c * vsz..(c + 1) * vsz];
                for j in 0..vsz {
                    dwrow[j] += hv * g[j];
                }
            }
            let dst = &mut dlnf[row * d..(row + 1) * d];
            for c in 0..d {
                dst[c] += dot(&out_w[c * vsz..(c + 1) * vsz], g);
            }
        }
    }
    let mut dx = layer_norm_backward(
        &dlnf,
        &cache.lnf,
        t_len,
        d,
        params.data(fin),
        grads,
        fin,
    );

    for l in (0..nl).rev() {
        let base = slot::layer(l);
        let lc = &cache.layers[l];
        let w = |s: usize| params.data(base + s);

        // Feed-forward branch; dx is the gradient of the residual stream.
        {
            let db2 = grads.data_mut(base + slot::FF2_B);
            for t in 0..t_len {
                for c in 0..d {
                    db2[c] += dx[t * d + c];
                }
            }
        }
        matmul_at_acc(&lc.act, t_len, f, &dx, d, grads.data_mut(base + slot::FF2_W));
        let mut dact = matmul_bt(&dx, t_len, d, w(slot::FF2_W), f);
        for (g, &u) in dact.iter_mut().zip(&lc.pre_act) {
            *g *= gelu_grad(u);
        }
        {
            let db1 = grads.data_mut(base + slot::FF1_B);
            for t in 0..t_len {
                for c in 0..f {
                    db1[c] += dact[t * f + c];
                }
            }
        }
        matmul_at_acc(&lc.ln2.out, t_len, d, &dact, f, grads.data_mut(base + slot::FF1_W));
        let dln2 = matmul_bt(&dact, t_len, f, w(slot::FF1_W), d);
        let dres = layer_norm_backward(
            &dln2,
            &lc.ln2,
            t_len,
            d,
            w(slot::LN2_G),
            grads,
            base + slot::LN2_G,
        );
        add_in_place(&mut dx, &dres);

        // Attention branch.
        matmul_at_acc(&lc.attn, t_len, d, &dx, d, grads.data_mut(base + slot::WO));
        let dattn = matmul_bt(&dx, t_len, d, w(slot::WO), d);
        let mut dq = vec![0.0; t_len * d];
        let mut dk = vec![0.0; t_len * d];
        let mut dv = vec![0.0; t_len * d];
        let mut dp = vec![0.0; t_len];
        for head in 0..h {
            let off = head * dh;
            for i in 0..t_len {
                let prow = &lc.probs[(head * t_len + i) * t_len..(head * t_len + i + 1) * t_len];
                let go = &dattn[i * d + off..i * d + off + dh];
                let mut weighted = 0.0;
                for j in 0..=i {
                    let vj = &lc.v[j * d + off..j * d + off + dh];
                    dp[j] = dot(go, vj);
                    weighted += prow[j] * dp[j];
                    let dvj = &mut dv[j * d + off..j * d + off + dh];
                    for c in 0..dh {
                        dvj[c] += prow[j] * go[c];
                    }
                }
                let qi_off = i * d + off;
                for j in 0..=i {
                    let ds = prow[j] * (dp[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let koff = j * d + off;
                    for c in 0..dh {
                        dq[qi_off + c] += ds * lc.k[koff + c];
                        dk[koff + c] += ds * lc.q[qi_off + c];
                    }
                }
            }
        }
        let a = &lc.ln1.out;
        matmul_at_acc(a, t_len, d, &dq, d, grads.data_mut(base + slot::WQ));
        matmul_at_acc(a, t_len, d, &dk, d, grads.data_mut(base + slot::WK));
        matmul_at_acc(a, t_len, d, &dv, d, grads.data_mut(base + slot::WV));
        let mut dln1 = matmul_bt(&dq, t_len, d, w(slot::WQ), d);
        add_in_place(&mut dln1, &matmul_bt(&dk, t_len, d, w(slot::WK), d));
        add_in_place(&mut dln1, &matmul_bt(&dv, t_len, d, w(slot::WV), d));
        let dres = layer_norm_backward(
            &dln1,
            &lc.ln1,
            t_len,
            d,
            w(slot::LN1_G),
            grads,
            base + slot::LN1_G,
        );
        add_in_place(&mut dx, &dres);
    }

    for (t, &id) in cache.ids.iter().enumerate() {
        let src = &dx[t * d..(t + 1) * d];
        let te = grads.data_mut(slot::TOK_EMB);
        for c in 0..d {
            te[id as usize * d + c] += src[c];
        }
        let pe = grads.data_mut(slot::POS_EMB);
        for c in 0..d {
            pe[t * d + c] += src[c];
        }
    }
}

fn layer_norm(x: &[f64], rows: usize, d: usize, gain: &[f64], bias: &[f64]) -> LnCache {
    let mut out = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for t in 0..rows {
        let row = &x[t * d..(t + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[t] = rs;
        for c in 0..d {
            let xh = (row[c] - mean) * rs;
            xhat[t * d + c] = xh;
            out[t * d + c] = gain[c] * xh + bias[c];
        }
    }
    LnCache { out, xhat, rstd }
}

/// Returns dL/dx and accumulates gain/bias gradients at `gain_slot`,
/// `gain_slot + 1`.
fn layer_norm_backward(
    dout: &[f64],
    cache: &LnCache,
    rows: usize,
    d: usize,
    gain: &[f64],
    grads: &mut LMParams,
    gain_slot: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for t in 0..rows {
        let g = &dout[t * d..(t + 1) * d];
        let xh = &cache.xhat[t * d..(t + 1) * d];
        {
            let dgain = grads.data_mut(gain_slot);
            for c in 0..d {
                dgain[c] += g[c] * xh[c];
            }
        }
        {
            let dbias = grads.data_mut(gain_slot + 1);
            for c in 0..d {
                dbias[c] += g[c];
            }
        }
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for c in 0..d {
            dxhat[c] = g[c] * gain[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xh[c];
        }
        mean_d /= d as f64;
        mean_dx /= d as f64;
        let rs = cache.rstd[t];
        for c in 0..d {
            dx[t * d + c] = rs * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_in_place(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_mut(bias.len()) {
        add_in_place(row, bias);
    }
}

/// `[rows x inner] * [inner x cols]`.
fn matmul(x: &[f64], rows: usize, inner: usize, w: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let dst = &mut out[r * cols..(r + 1) * cols];
        for i in 0..inner {
            let a = x[r * inner + i];
            if a == 0.0 {
                continue;
            }
            let wrow = &w[i * cols..(i + 1) * cols];
            for j in 0..cols {
                dst[j] += a * wrow[j];
            }
        }
    }
    out
}

/// `dy * W^T` for `W: [inner x cols]`, giving `[rows x inner]`.
fn matmul_bt(dy: &[f64], rows: usize, cols: usize, w: &[f64], inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * inner];
    for r in 0..rows {
        let g = &dy[r * cols..(r + 1) * cols];
        for i in 0..inner {
            out[r * inner + i] = dot(g, &w[i * cols..(i + 1) * cols]);
        }
    }
    out
}

/// `dw += x^T * dy` with `x: [rows x inner]`, `dy: [rows x cols]`.
fn matmul_at_acc(x: &[f64], rows: usize, inner: usize, dy: &[f64], cols: usize, dw: &mut [f64]) {
    for r in 0..rows {
        let g = &dy[r * cols..(r + 1) * cols];
        for i in 0..inner {
            let a = x[r * inner + i];
            if a == 0.0 {
                continue;
            }
            let dst = &mut dw[i * cols..(i + 1) * cols];
            for j in 0..cols {
                dst[j] += a * g[j];
            }
        }
    }
}
