//! Fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod oracles;

use rac_core::lm::{init_params, encode, LMConfig, LMParams, ModelRole, SequenceEncoding};
use rac_core::train::PreferenceEncoding;

/// V=20, d=8, one layer.
pub fn toy_config(seed: u64) -> LMConfig {
    LMConfig {
        vocab_size: 20,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        context_len: 24,
        seed,
    }
}

/// Init weights scaled up so gradients are not vanishingly small.
pub fn spread_params(cfg: &LMConfig, factor: f64) -> LMParams {
    let mut p = init_params(cfg).unwrap();
    for t in &mut p.tensors {
        if t.name.ends_with("_g") {
            t.data.iter_mut().enumerate().for_each(|(i, x)| *x = 1.0 + 0.1 * ((i % 5) as f64 - 2.0));
        } else if t.name.ends_with("_b") {
            t.data.iter_mut().enumerate().for_each(|(i, x)| *x = 0.05 * ((i % 7) as f64 - 3.0));
        } else {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }
    p
}

pub fn sft_batch() -> Vec<SequenceEncoding> {
    vec![
        encode(ModelRole::Grounded, &[5, 6], &[vec![7, 8, 9], vec![10]], &[11, 12, 13], 24).unwrap(),
        encode(ModelRole::Grounded, &[14], &[vec![15, 16]], &[17, 18], 24).unwrap(),
    ]
}

pub fn pref_batch() -> Vec<PreferenceEncoding> {
    let ctx_a = (&[5u32, 6][..], vec![vec![7u32, 8, 9]]);
    let ctx_b = (&[14u32][..], vec![vec![15u32, 16], vec![19]]);
    vec![
        PreferenceEncoding {
            chosen: encode(ModelRole::Policy, ctx_a.0, &ctx_a.1, &[8, 9], 24).unwrap(),
            rejected: encode(ModelRole::Policy, ctx_a.0, &ctx_a.1, &[12, 13, 5], 24).unwrap(),
        },
        PreferenceEncoding {
            chosen: encode(ModelRole::Policy, ctx_b.0, &ctx_b.1, &[15, 19], 24).unwrap(),
            rejected: encode(ModelRole::Policy, ctx_b.0, &ctx_b.1, &[11], 24).unwrap(),
        },
    ]
}

/// Worst `|g - g_fd| / max(1, |g|)` over every parameter, central differences.
pub fn worst_fd_error(
    params: &LMParams,
    analytic: &LMParams,
    h: f64,
    loss: impl Fn(&LMParams) -> f64,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let mut p = params.clone();
    for ti in 0..p.tensors.len() {
        for i in 0..p.tensors[ti].data.len() {
            let orig = p.tensors[ti].data[i];
            p.tensors[ti].data[i] = orig + h;
            let up = loss(&p);
            p.tensors[ti].data[i] = orig - h;
            let down = loss(&p);
            p.tensors[ti].data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = analytic.tensors[ti].data[i];
            let err = (g - fd).abs() / g.abs().max(1.0);
            if err > worst.0 {
                worst = (err, format!("{}[{i}] analytic {g} fd {fd}", p.tensors[ti].name));
            }
        }
    }
    worst
}
