use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Mat;
use super::vocab::{Vocab, EDGE_KEYS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnnConfig {
    /// Hidden width.
    pub d: usize,
    /// Message-passing rounds.
    pub layers: usize,
    /// Pooling heads.
    pub heads: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            d: 128,
            layers: 3,
            heads: 4,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 {
            return Err(Error::InvalidArgument(format!(
                "model width and head count must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Two-layer perceptron `relu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpIds {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruIds {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadIds {
    pub w: usize,
    pub b: usize,
    pub ln_gamma: usize,
    pub ln_beta: usize,
}

/// Positions of each named tensor in [`GnnModel::params`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub node_embed: usize,
    pub edge_embed: usize,
    pub msg_in: MlpIds,
    pub msg_out: MlpIds,
    pub gru: GruIds,
    pub heads: Vec<HeadIds>,
    /// 1 x heads; the inverse temperature of head k is `exp(log_beta[k])`.
    pub log_beta: usize,
    pub out_w: usize,
    pub out_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    /// Unit-variance uniform.
    Embedding,
    /// Glorot uniform over (rows, cols).
    Glorot,
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

fn specs(cfg: &GnnConfig, vocab_len: usize) -> (Vec<Spec>, Layout) {
    let d = cfg.d;
    let mut out: Vec<Spec> = Vec::new();
    let mut add = |name: String, rows, cols, init| {
        out.push(Spec {
            name,
            rows,
            cols,
            init,
        });
        out.len() - 1
    };
    let node_embed = add("node_embed".into(), vocab_len, d, Init::Embedding);
    let edge_embed = add("edge_embed".into(), EDGE_KEYS.len(), d, Init::Embedding);
    let mlp = |prefix: &str, add: &mut dyn FnMut(String, usize, usize, Init) -> usize| MlpIds {
        // Input rows: [h_u, h_v, e_(v,u), e_(u,v)].
        w1: add(format!("{prefix}.w1"), 4 * d, d, Init::Glorot),
        b1: add(format!("{prefix}.b1"), 1, d, Init::Zeros),
        w2: add(format!("{prefix}.w2"), d, d, Init::Glorot),
        b2: add(format!("{prefix}.b2"), 1, d, Init::Zeros),
    };
    let msg_in = mlp("msg_in", &mut add);
    let msg_out = mlp("msg_out", &mut add);
    let gru = GruIds {
        w_ih: add("gru.w_ih".into(), d, 3 * d, Init::Glorot),
        w_hh: add("gru.w_hh".into(), d, 3 * d, Init::Glorot),
        b_ih: add("gru.b_ih".into(), 1, 3 * d, Init::Zeros),
        b_hh: add("gru.b_hh".into(), 1, 3 * d, Init::Zeros),
    };
    let heads = (0..cfg.heads)
        .map(|k| HeadIds {
            w: add(format!("head{k}.w"), d, d, Init::Glorot),
            b: add(format!("head{k}.b"), 1, d, Init::Zeros),
            ln_gamma: add(format!("head{k}.ln_gamma"), 1, d, Init::Ones),
            ln_beta: add(format!("head{k}.ln_beta"), 1, d, Init::Zeros),
        })
        .collect();
    let log_beta = add("pool.log_beta".into(), 1, cfg.heads, Init::Zeros);
    let out_w = add("out_proj.w".into(), cfg.heads * d, d, Init::Glorot);
    let out_b = add("out_proj.b".into(), 1, d, Init::Zeros);
    let layout = Layout {
        node_embed,
        edge_embed,
        msg_in,
        msg_out,
        gru,
        heads,
        log_beta,
        out_w,
        out_b,
    };
    (out, layout)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Mat,
}

/// Gated graph network parameters. Every entry is kept exactly representable
/// as f32 so checkpoints round-trip bit for bit; arithmetic runs in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub config: GnnConfig,
    pub vocab: Vocab,
    pub params: Vec<Param>,
    layout: Layout,
}

impl GnnModel {
    pub fn new(config: GnnConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = specs(&config, vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .into_iter()
            .map(|s| {
                let n = s.rows * s.cols;
                let data: Vec<f64> = match s.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Embedding => {
                        let a = 3f64.sqrt();
                        (0..n).map(|_| rng.gen_range(-a..a)).collect()
                    }
                    Init::Glorot => {
                        let a = (6.0 / (s.rows + s.cols) as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-a..a)).collect()
                    }
                };
                let mut value = Mat::from_vec(s.rows, s.cols, data);
                value.round_to_f32();
                Param {
                    name: s.name,
                    value,
                }
            })
            .collect();
        Ok(Self {
            config,
            vocab,
            params,
            layout,
        })
    }

    /// Assembles a model from named tensors, checking names and shapes
    /// against the layout `config` implies.
    pub fn from_params(config: GnnConfig, vocab: Vocab, params: Vec<Param>) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = specs(&config, vocab.len());
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.name != p.name || (s.rows, s.cols) != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    p.name,
                    p.value.shape(),
                    s.name,
                    (s.rows, s.cols)
                )));
            }
            if !p.value.is_finite() {
                return Err(Error::NonFinite(p.name.clone()));
            }
        }
        Ok(Self {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            p.value.round_to_f32();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::try_from(vec!["<UNK>".to_string(), "COPY".into(), "BB_0".into()]).unwrap()
    }

    #[test]
    fn seeded_init_is_reproducible_and_f32_exact() {
        let cfg = GnnConfig { d: 4, layers: 1, heads: 2 };
        let a = GnnModel::new(cfg, vocab(), 9).unwrap();
        let b = GnnModel::new(cfg, vocab(), 9).unwrap();
        let c = GnnModel::new(cfg, vocab(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        for p in &a.params {
            assert!(p.value.data().iter().all(|&x| x == x as f32 as f64), "{}", p.name);
        }
        assert_eq!(a.param("pool.log_beta").unwrap().value.shape(), (1, 2));
        assert_eq!(a.param("out_proj.w").unwrap().value.shape(), (8, 4));
    }

    #[test]
    fn from_params_checks_layout() {
        let cfg = GnnConfig { d: 4, layers: 1, heads: 2 };
        let a = GnnModel::new(cfg, vocab(), 1).unwrap();
        assert!(GnnModel::from_params(cfg, vocab(), a.params.clone()).is_ok());
        let mut bad = a.params.clone();
        bad.swap(0, 1);
        assert!(GnnModel::from_params(cfg, vocab(), bad).is_err());
        let mut nan = a.params.clone();
        nan[3].value.data_mut()[0] = f64::NAN;
        assert!(matches!(
            GnnModel::from_params(cfg, vocab(), nan),
            Err(Error::NonFinite(_))
        ));
    }
}
