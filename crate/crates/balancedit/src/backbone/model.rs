use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{BackboneError, ModelConfig, Result};
use crate::numerics::{Parameter, Tensor};

// Registry offsets within one block's parameter group.
pub(crate) const B_LN1_G: usize = 0;
pub(crate) const B_LN1_B: usize = 1;
pub(crate) const B_WQ: usize = 2;
pub(crate) const B_BQ: usize = 3;
pub(crate) const B_WK: usize = 4;
pub(crate) const B_BK: usize = 5;
pub(crate) const B_WV: usize = 6;
pub(crate) const B_BV: usize = 7;
pub(crate) const B_WO: usize = 8;
pub(crate) const B_BO: usize = 9;
pub(crate) const B_LN2_G: usize = 10;
pub(crate) const B_LN2_B: usize = 11;
pub(crate) const B_W_UP: usize = 12;
pub(crate) const B_B_UP: usize = 13;
pub(crate) const B_W_DOWN: usize = 14;
pub(crate) const B_B_DOWN: usize = 15;
pub(crate) const BLOCK_PARAMS: usize = 16;

pub(crate) const IDX_TOK_EMB: usize = 0;
pub(crate) const IDX_POS_EMB: usize = 1;
pub(crate) const IDX_IMG_W: usize = 2;
pub(crate) const IDX_IMG_B: usize = 3;
pub(crate) const HEAD_PARAMS: usize = 4;

const INIT_STD: f64 = 0.08;
const LN_EPS: f64 = 1e-5;

/// The decoder's parameters in a fixed registry order. The order defines the
/// checkpoint blob layout and the gradient vector layout, so it never
/// changes at runtime.
#[derive(Debug, Clone)]
pub struct BackboneModel {
    pub config: ModelConfig,
    pub params: Vec<Parameter>,
}

impl BackboneModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let dff = config.mlp_hidden;
        let pfx = config.n_img_prefix_tokens;

        let mut params = Vec::with_capacity(Self::n_params_for(&config));
        let weight = |name: String, shape: &[usize], rng: &mut ChaCha8Rng| {
            Parameter::new(name, Tensor::randn(shape, INIT_STD, rng))
        };
        let zeros = |name: String, shape: &[usize]| Parameter::new(name, Tensor::zeros(shape));
        let ones = |name: String, shape: &[usize]| {
            let mut t = Tensor::zeros(shape);
            t.fill(1.0);
            Parameter::new(name, t)
        };

        params.push(weight("tok_emb".into(), &[config.vocab_size, d], &mut rng));
        params.push(weight("pos_emb".into(), &[config.max_seq_len, d], &mut rng));
        params.push(weight("img_proj.w".into(), &[config.d_img, pfx * d], &mut rng));
        params.push(zeros("img_proj.b".into(), &[pfx * d]));

        for i in 0..config.n_layers {
            let p = |suffix: &str| format!("blocks.{i}.{suffix}");
            params.push(ones(p("ln1.gamma"), &[d]));
            params.push(zeros(p("ln1.beta"), &[d]));
            params.push(weight(p("attn.wq"), &[d, d], &mut rng));
            params.push(zeros(p("attn.bq"), &[d]));
            params.push(weight(p("attn.wk"), &[d, d], &mut rng));
            params.push(zeros(p("attn.bk"), &[d]));
            params.push(weight(p("attn.wv"), &[d, d], &mut rng));
            params.push(zeros(p("attn.bv"), &[d]));
            params.push(weight(p("attn.wo"), &[d, d], &mut rng));
            params.push(zeros(p("attn.bo"), &[d]));
            params.push(ones(p("ln2.gamma"), &[d]));
            params.push(zeros(p("ln2.beta"), &[d]));
            params.push(weight(p("mlp.w_up"), &[d, dff], &mut rng));
            params.push(zeros(p("mlp.b_up"), &[dff]));
            params.push(weight(p("mlp.w_down"), &[dff, d], &mut rng));
            params.push(zeros(p("mlp.b_down"), &[d]));
        }

        params.push(ones("ln_f.gamma".into(), &[d]));
        params.push(zeros("ln_f.beta".into(), &[d]));
        params.push(weight("head.w".into(), &[d, config.vocab_size], &mut rng));
        params.push(zeros("head.b".into(), &[config.vocab_size]));

        Ok(BackboneModel { config, params })
    }

    pub fn n_params_for(config: &ModelConfig) -> usize {
        HEAD_PARAMS + config.n_layers * BLOCK_PARAMS + 4
    }

    pub(crate) fn block_base(&self, block: usize) -> usize {
        HEAD_PARAMS + block * BLOCK_PARAMS
    }

    pub(crate) fn block_param(&self, block: usize, offset: usize) -> &Tensor {
        &self.params[self.block_base(block) + offset].value
    }

    pub(crate) fn ln_eps(&self) -> f64 {
        LN_EPS
    }

    pub(crate) fn final_base(&self) -> usize {
        HEAD_PARAMS + self.config.n_layers * BLOCK_PARAMS
    }

    /// Registry indices of the editable block's down-projection
    /// (matrix, bias).
    pub fn editable_indices(&self) -> (usize, usize) {
        let base = self.block_base(self.config.editable_layer);
        (base + B_W_DOWN, base + B_B_DOWN)
    }

    /// The editable block's down-projection weights as stored in the base
    /// model. Editors copy these; they never mutate them in place.
    pub fn editable_weights(&self) -> (&Tensor, &Tensor) {
        let (wi, bi) = self.editable_indices();
        (&self.params[wi].value, &self.params[bi].value)
    }

    /// SHA-256 over every weight in registry order, little-endian bytes.
    /// Editing must never change this value.
    pub fn weights_fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.params {
            for v in p.value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    pub(crate) fn check_image(&self, img: &super::ImageFeature) -> Result<()> {
        if img.dim() != self.config.d_img {
            return Err(BackboneError::ImageDim {
                expected: self.config.d_img,
                got: img.dim(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_size_matches_formula() {
        let m = BackboneModel::new(ModelConfig::default()).unwrap();
        assert_eq!(m.params.len(), BackboneModel::n_params_for(&m.config));
        assert_eq!(m.params.len(), 4 + 4 * 16 + 4);
    }

    #[test]
    fn same_seed_same_weights_different_seed_differs() {
        let a = BackboneModel::new(ModelConfig::default()).unwrap();
        let b = BackboneModel::new(ModelConfig::default()).unwrap();
        assert_eq!(a.weights_fingerprint(), b.weights_fingerprint());

        let cfg = ModelConfig {
            seed: 7,
            ..ModelConfig::default()
        };
        let c = BackboneModel::new(cfg).unwrap();
        assert_ne!(a.weights_fingerprint(), c.weights_fingerprint());
    }

    #[test]
    fn editable_indices_point_at_down_projection() {
        let m = BackboneModel::new(ModelConfig::default()).unwrap();
        let (wi, bi) = m.editable_indices();
        assert!(m.params[wi].name.ends_with("mlp.w_down"));
        assert!(m.params[bi].name.ends_with("mlp.b_down"));
        let (w, b) = m.editable_weights();
        assert_eq!(w.shape(), &[128, 32]);
        assert_eq!(b.shape(), &[32]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_heads = ModelConfig {
            d_model: 30,
            ..ModelConfig::default()
        };
        assert!(BackboneModel::new(bad_heads).is_err());

        let bad_layer = ModelConfig {
            editable_layer: 4,
            ..ModelConfig::default()
        };
        assert!(BackboneModel::new(bad_layer).is_err());
    }
}
