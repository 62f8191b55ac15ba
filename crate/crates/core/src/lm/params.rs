use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LMConfig;
use crate::error::{RacError, Result};
use crate::seed::rng_from_seed;

/// Standard deviation of the initial weight distribution.
pub const INIT_STD: f64 = 0.02;

/// Tensors per transformer block, in storage order.
pub(crate) const PER_LAYER: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn filled(name: String, shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            data: vec![value; n],
        }
    }
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Zero,
    One,
}

/// Named tensor layout for a config: (name, shape, initialisation).
fn layout(cfg: &LMConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (v, d, f, c) = (cfg.vocab_size, cfg.d_model, cfg.d_ff(), cfg.context_len);
    let mut out = vec![
        ("tok_emb".to_string(), vec![v, d], Init::Normal),
        ("pos_emb".to_string(), vec![c, d], Init::Normal),
    ];
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layer{l}.{s}");
        out.extend([
            (p("ln1_g"), vec![d], Init::One),
            (p("ln1_b"), vec![d], Init::Zero),
            (p("wq"), vec![d, d], Init::Normal),
            (p("wk"), vec![d, d], Init::Normal),
            (p("wv"), vec![d, d], Init::Normal),
            (p("wo"), vec![d, d], Init::Normal),
            (p("ln2_g"), vec![d], Init::One),
            (p("ln2_b"), vec![d], Init::Zero),
            (p("ff1_w"), vec![d, f], Init::Normal),
            (p("ff1_b"), vec![f], Init::Zero),
            (p("ff2_w"), vec![f, d], Init::Normal),
            (p("ff2_b"), vec![d], Init::Zero),
        ]);
    }
    out.extend([
        ("lnf_g".to_string(), vec![d], Init::One),
        ("lnf_b".to_string(), vec![d], Init::Zero),
        ("out_w".to_string(), vec![d, v], Init::Normal),
        ("out_b".to_string(), vec![v], Init::Zero),
    ]);
    out
}

/// Weights of the decoder. Gradients and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct LMParams {
    pub config: LMConfig,
    pub tensors: Vec<Tensor>,
}

/// Indices into `LMParams::tensors`.
pub(crate) mod slot {
    use super::PER_LAYER;
    pub const TOK_EMB: usize = 0;
    pub const POS_EMB: usize = 1;
    pub fn layer(l: usize) -> usize {
        2 + PER_LAYER * l
    }
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const WQ: usize = 2;
    pub const WK: usize = 3;
    pub const WV: usize = 4;
    pub const WO: usize = 5;
    pub const LN2_G: usize = 6;
    pub const LN2_B: usize = 7;
    pub const FF1_W: usize = 8;
    pub const FF1_B: usize = 9;
    pub const FF2_W: usize = 10;
    pub const FF2_B: usize = 11;
    pub fn lnf_g(n_layers: usize) -> usize {
        layer(n_layers)
    }
}

impl LMParams {
    /// Seeded N(0, 0.02^2) weights, unit layer-norm gains, zero biases.
    pub fn init(cfg: &LMConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(cfg.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let tensors = layout(cfg)
            .into_iter()
            .map(|(name, shape, init)| match init {
                Init::Zero => Tensor::filled(name, shape, 0.0),
                Init::One => Tensor::filled(name, shape, 1.0),
                Init::Normal => {
                    let mut t = Tensor::filled(name, shape, 0.0);
                    t.data.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
                    t
                }
            })
            .collect();
        Ok(Self {
            config: cfg.clone(),
            tensors,
        })
    }

    /// All-zero tensors with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::filled(t.name.clone(), t.shape.clone(), 0.0))
                .collect(),
        }
    }

    /// Builds params from named tensors, checking names and shapes against the
    /// layout implied by `config`.
    pub fn from_tensors(config: LMConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != tensors.len() {
            return Err(RacError::CorruptHeader(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, shape, _), t) in expected.iter().zip(&tensors) {
            if *name != t.name || *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(RacError::ShapeMismatch {
                    name: t.name.clone(),
                    expected: shape.clone(),
                    found: t.shape.clone(),
                });
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub(crate) fn data(&self, slot: usize) -> &[f64] {
        &self.tensors[slot].data
    }

    pub(crate) fn data_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.tensors[slot].data
    }

    /// `self += scale * other`, tensor by tensor in storage order.
    pub fn add_scaled(&mut self, other: &LMParams, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Fails with the name of the first tensor holding NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self
            .tensors
            .iter()
            .find(|t| t.data.iter().any(|x| !x.is_finite()))
        {
            Some(t) => Err(RacError::NonFinite(t.name.clone())),
            None => Ok(()),
        }
    }

    /// Bitwise equality of every weight.
    pub fn bit_eq(&self, other: &LMParams) -> bool {
        self.config == other.config
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.name == b.name
                    && a.shape == b.shape
                    && a.data.len() == b.data.len()
                    && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
