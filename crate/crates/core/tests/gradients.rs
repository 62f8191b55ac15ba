mod common;

use common::*;
use rac_core::train::{dpo_loss, rac_loss, sft_loss};

const H: f64 = 1e-5;

#[test]
fn sft_gradient_matches_finite_differences() {
    let p = spread_params(&toy_config(1), 20.0);
    let batch = sft_batch();
    let (_, g) = sft_loss(&p, &batch).unwrap();
    let (err, at) = worst_fd_error(&p, &g, H, |q| sft_loss(q, &batch).unwrap().0);
    assert!(err < 1e-4, "{err} at {at}");
    // the rescaling must give gradients that actually test something
    assert!(g.tensors.iter().flat_map(|t| &t.data).any(|x| x.abs() > 1e-2));
}

#[test]
fn dpo_gradient_matches_finite_differences() {
    let p = spread_params(&toy_config(1), 20.0);
    let r = spread_params(&toy_config(2), 20.0);
    let batch = pref_batch();
    let (_, g) = dpo_loss(&p, &r, &batch, 0.5).unwrap();
    let (err, at) = worst_fd_error(&p, &g, H, |q| dpo_loss(q, &r, &batch, 0.5).unwrap().0);
    assert!(err < 1e-4, "{err} at {at}");
}

#[test]
fn rac_gradient_matches_finite_differences() {
    let p = spread_params(&toy_config(1), 20.0);
    let r = spread_params(&toy_config(2), 20.0);
    let (t1, t2) = (sft_batch(), pref_batch());
    let (_, g) = rac_loss(&p, &r, &t1, &t2, 0.5, 0.5).unwrap();
    let (err, at) = worst_fd_error(&p, &g, H, |q| rac_loss(q, &r, &t1, &t2, 0.5, 0.5).unwrap().0);
    assert!(err < 1e-4, "{err} at {at}");
}

#[test]
fn two_layer_sft_gradient() {
    let mut cfg = toy_config(5);
    cfg.n_layers = 2;
    cfg.d_model = 12;
    cfg.n_heads = 3;
    let p = spread_params(&cfg, 15.0);
    let batch = sft_batch();
    let (_, g) = sft_loss(&p, &batch).unwrap();
    let (err, at) = worst_fd_error(&p, &g, H, |q| sft_loss(q, &batch).unwrap().0);
    assert!(err < 1e-4, "{err} at {at}");
}
