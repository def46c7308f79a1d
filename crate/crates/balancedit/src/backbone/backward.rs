use super::forward::{ForwardTrace, MlpOverride};
use super::model::{
    B_BO, B_BQ, B_BK, B_BV, B_B_DOWN, B_B_UP, B_LN1_B, B_LN1_G, B_LN2_B, B_LN2_G, B_WK, B_WO,
    B_WQ, B_WV, B_W_DOWN, B_W_UP, IDX_IMG_B, IDX_IMG_W, IDX_POS_EMB, IDX_TOK_EMB,
};
use super::{BackboneModel, Result};
use crate::numerics::{ops, Tensor};

/// Parameter gradients aligned with the model's registry order. When a hook
/// was active, the editable block's down-projection slots hold the gradients
/// of the hook's weights (the weights the pass actually used).
#[derive(Debug)]
pub struct Gradients {
    pub by_param: Vec<Tensor>,
}

impl Gradients {
    /// Add every gradient into the model's accumulators.
    pub fn accumulate_into(&self, model: &mut BackboneModel) -> Result<()> {
        for (p, g) in model.params.iter_mut().zip(&self.by_param) {
            ops::accumulate(&mut p.grad, g)?;
        }
        Ok(())
    }
}

fn slice_cols(x: &Tensor, start: usize, width: usize) -> Tensor {
    let rows = x.shape()[0];
    let cols = x.shape()[1];
    let mut out = Tensor::zeros(&[rows, width]);
    for i in 0..rows {
        let src = &x.data()[i * cols + start..i * cols + start + width];
        out.data_mut()[i * width..(i + 1) * width].copy_from_slice(src);
    }
    out
}

fn add_cols(dst: &mut Tensor, start: usize, src: &Tensor) {
    let rows = dst.shape()[0];
    let cols = dst.shape()[1];
    let width = src.shape()[1];
    for i in 0..rows {
        for j in 0..width {
            dst.data_mut()[i * cols + start + j] += src.data()[i * width + j];
        }
    }
}

impl BackboneModel {
    /// Reverse pass from upstream logit gradients. Pure: the model is read
    /// only, and a fresh gradient per parameter is returned.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        dlogits: &Tensor,
        hook: Option<&MlpOverride>,
    ) -> Result<Gradients> {
        let eps = self.ln_eps();
        let heads = self.config.n_heads;
        let d = self.config.d_model;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let pfx = self.config.n_img_prefix_tokens;

        let mut grads: Vec<Tensor> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();

        // Head and final layernorm.
        let fb = self.final_base();
        let head_w = &self.params[fb + 2].value;
        let dlnf = ops::matmul_nt(dlogits, head_w)?;
        grads[fb + 2] = ops::matmul_tn(&trace.lnf_out, dlogits)?;
        grads[fb + 3] = ops::add_bias_backward(dlogits)?;
        let (mut dx, dgf, dbf) =
            ops::layernorm_backward(&trace.h_last, &self.params[fb].value, eps, &dlnf)?;
        grads[fb] = dgf;
        grads[fb + 1] = dbf;

        // Blocks in reverse.
        for block in (0..self.config.n_layers).rev() {
            let bt = &trace.blocks[block];
            let base = self.block_base(block);

            // MLP branch: x_out = x_mid + mlp(ln2(x_mid)).
            let dmlp_out = &dx;
            let hooked = block == self.config.editable_layer;
            let w_down = match (hooked, hook) {
                (true, Some(h)) => &h.weight,
                _ => self.block_param(block, B_W_DOWN),
            };
            let dgelu = ops::matmul_nt(dmlp_out, w_down)?;
            grads[base + B_W_DOWN] = ops::matmul_tn(&bt.gelu_out, dmlp_out)?;
            grads[base + B_B_DOWN] = ops::add_bias_backward(dmlp_out)?;
            let dup = ops::gelu_backward(&bt.up_pre, &dgelu)?;

            let dln2 = ops::matmul_nt(&dup, self.block_param(block, B_W_UP))?;
            grads[base + B_W_UP] = ops::matmul_tn(&bt.ln2_out, &dup)?;
            grads[base + B_B_UP] = ops::add_bias_backward(&dup)?;

            let g2 = self.block_param(block, B_LN2_G);
            let (dx_mid_ln, dg2, db2) = ops::layernorm_backward(&bt.x_mid, g2, eps, &dln2)?;
            grads[base + B_LN2_G] = dg2;
            grads[base + B_LN2_B] = db2;
            let dx_mid = ops::add(&dx, &dx_mid_ln)?;

            // Attention branch: x_mid = x_in + wo(ctx) + bo.
            let datt_out = &dx_mid;
            let wo = self.block_param(block, B_WO);
            let dctx = ops::matmul_nt(datt_out, wo)?;
            grads[base + B_WO] = ops::matmul_tn(&bt.ctx, datt_out)?;
            grads[base + B_BO] = ops::add_bias_backward(datt_out)?;

            let t_total = bt.x_in.shape()[0];
            let mut dq = Tensor::zeros(&[t_total, d]);
            let mut dk = Tensor::zeros(&[t_total, d]);
            let mut dv = Tensor::zeros(&[t_total, d]);
            for h in 0..heads {
                let a = &bt.att[h];
                let qh = slice_cols(&bt.q, h * dh, dh);
                let kh = slice_cols(&bt.k, h * dh, dh);
                let vh = slice_cols(&bt.v, h * dh, dh);
                let dctx_h = slice_cols(&dctx, h * dh, dh);

                let da = ops::matmul_nt(&dctx_h, &vh)?;
                let dvh = ops::matmul_tn(a, &dctx_h)?;
                let mut dscores = ops::softmax_backward(a, &da)?;
                ops::scale_inplace(&mut dscores, scale);
                let dqh = ops::matmul(&dscores, &kh)?;
                let dkh = ops::matmul_tn(&dscores, &qh)?;

                add_cols(&mut dq, h * dh, &dqh);
                add_cols(&mut dk, h * dh, &dkh);
                add_cols(&mut dv, h * dh, &dvh);
            }

            grads[base + B_WQ] = ops::matmul_tn(&bt.ln1_out, &dq)?;
            grads[base + B_BQ] = ops::add_bias_backward(&dq)?;
            grads[base + B_WK] = ops::matmul_tn(&bt.ln1_out, &dk)?;
            grads[base + B_BK] = ops::add_bias_backward(&dk)?;
            grads[base + B_WV] = ops::matmul_tn(&bt.ln1_out, &dv)?;
            grads[base + B_BV] = ops::add_bias_backward(&dv)?;

            let mut dln1 = ops::matmul_nt(&dq, self.block_param(block, B_WQ))?;
            ops::accumulate(
                &mut dln1,
                &ops::matmul_nt(&dk, self.block_param(block, B_WK))?,
            )?;
            ops::accumulate(
                &mut dln1,
                &ops::matmul_nt(&dv, self.block_param(block, B_WV))?,
            )?;

            let g1 = self.block_param(block, B_LN1_G);
            let (dx_in_ln, dg1, db1) = ops::layernorm_backward(&bt.x_in, g1, eps, &dln1)?;
            grads[base + B_LN1_G] = dg1;
            grads[base + B_LN1_B] = db1;
            dx = ops::add(&dx_mid, &dx_in_ln)?;
        }

        // Embeddings: rows [0, pfx) came from the image projector, the rest
        // from the token table; positions cover every row.
        let t_total = dx.shape()[0];
        let dpos = &mut grads[IDX_POS_EMB];
        for i in 0..t_total {
            for j in 0..d {
                dpos.data_mut()[i * d + j] += dx.data()[i * d + j];
            }
        }

        let mut dprefix = Tensor::zeros(&[1, pfx * d]);
        dprefix
            .data_mut()
            .copy_from_slice(&dx.data()[..pfx * d]);
        let img_row = Tensor::from_vec(&[1, self.config.d_img], trace.img.clone())?;
        grads[IDX_IMG_W] = ops::matmul_tn(&img_row, &dprefix)?;
        grads[IDX_IMG_B] = ops::add_bias_backward(&dprefix)?;

        let n_tok = t_total - pfx;
        let mut dtok_rows = Tensor::zeros(&[n_tok, d]);
        dtok_rows
            .data_mut()
            .copy_from_slice(&dx.data()[pfx * d..]);
        grads[IDX_TOK_EMB] = ops::embedding_gather_backward(
            self.params[IDX_TOK_EMB].value.shape(),
            &trace.token_ids,
            &dtok_rows,
        )?;

        Ok(Gradients { by_param: grads })
    }

    /// Edit loss and its gradients wrt the hooked replacement weights, in
    /// one pass. This is exactly the surface edit fine-tuning descends, so
    /// gradient checks against it validate the whole editing pipeline.
    pub fn answer_loss_grad(
        &self,
        img: &super::ImageFeature,
        prompt: &[super::TokenId],
        answer: &[super::TokenId],
        hook: &MlpOverride,
    ) -> Result<(f64, Tensor, Tensor)> {
        let (loss, parts, trace) = self.answer_loss_traced(img, prompt, answer, Some(hook))?;
        let dlogits =
            ops::softmax_cross_entropy_backward(&parts.probs, &parts.targets, &parts.mask)?;
        let grads = self.backward(&trace, &dlogits, Some(hook))?;
        let (w_idx, b_idx) = self.editable_indices();
        Ok((
            loss,
            grads.by_param[w_idx].clone(),
            grads.by_param[b_idx].clone(),
        ))
    }
}
