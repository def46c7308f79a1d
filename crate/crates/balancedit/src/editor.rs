//! Turns a counterfactual request into a codebook entry: fine-tune a copy
//! of the editable sub-layer until it yields the new answer, then size the
//! entry's influence radius from two anchor probes. The positive anchor (a
//! reserved rephrasing of the question) says how far the radius must reach;
//! the negative anchor (an uninformative or unrelated input) says where it
//! must stop. The radius interpolates between the two distances.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{
    BackboneError, BackboneModel, ImageFeature, MlpOverride, TokenId, TokenSequence,
    DECODE_BUDGET,
};
use crate::codebook::{
    compute_key, estimate_radius, Codebook, CodebookError, DistanceFn, EntryCandidate, EntryMeta,
    InsertPlan,
};
use crate::numerics::{adam_step, ops, AdamState, Parameter};
use crate::worldgen::{EditCase, UnrelatedSample};

#[derive(Debug, Error)]
pub enum EditError {
    #[error("invalid editor config: {0}")]
    Config(String),
    #[error("fine-tuning diverged at iteration {iter}")]
    Diverged { iter: usize },
    #[error("the random_pair anchor needs an unrelated sample on the request")]
    MissingUnrelated,
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EditError>;

/// What stands in for "inputs this edit must not touch" when estimating
/// the radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeAnchor {
    /// All-zero image with the edited question.
    Black,
    /// All-one image with the edited question.
    White,
    /// An unrelated image and question pair from the request.
    RandomPair,
}

impl std::fmt::Display for NegativeAnchor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NegativeAnchor::Black => write!(f, "black"),
            NegativeAnchor::White => write!(f, "white"),
            NegativeAnchor::RandomPair => write!(f, "random_pair"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditorConfig {
    pub lr: f64,
    pub max_iters: usize,
    /// Fine-tuning stops once the decode matches and the loss is below this.
    pub loss_target: f64,
    /// Radius mix: 0 leans fully on the negative anchor (widest reach),
    /// 1 fully on the positive anchor (tightest).
    pub alpha: f64,
    pub distance_fn: DistanceFn,
    pub negative_anchor: NegativeAnchor,
    /// When set, anchors are skipped and every entry gets this radius.
    pub fixed_radius: Option<f64>,
}

impl Default for EditorConfig {
    fn default() -> Self {
        EditorConfig {
            lr: 1e-2,
            max_iters: 100,
            loss_target: 0.01,
            alpha: 0.2,
            distance_fn: DistanceFn::Euclidean,
            negative_anchor: NegativeAnchor::Black,
            fixed_radius: None,
        }
    }
}

impl EditorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(EditError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.max_iters == 0 {
            return Err(EditError::Config("max_iters must be at least 1".to_string()));
        }
        if !(self.loss_target.is_finite() && self.loss_target > 0.0) {
            return Err(EditError::Config(format!(
                "loss_target must be positive, got {}",
                self.loss_target
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(EditError::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if let Some(r) = self.fixed_radius {
            if !(r.is_finite() && r > 0.0) {
                return Err(EditError::Config(format!(
                    "fixed_radius must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything one edit needs, detached from the benchmark's probe sets.
#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub case_id: u64,
    pub image: ImageFeature,
    pub prompt: TokenSequence,
    pub prompt_text: String,
    pub y_old: TokenSequence,
    pub y_old_text: String,
    pub y_new: TokenSequence,
    pub y_new_text: String,
    /// Positive anchor question. Reserved: never among the evaluation
    /// rephrasings.
    pub reserved_rephrase: TokenSequence,
    pub unrelated: Option<UnrelatedSample>,
}

impl EditRequest {
    pub fn from_case(case: &EditCase) -> Self {
        EditRequest {
            case_id: case.case_id,
            image: case.image.clone(),
            prompt: case.prompt.clone(),
            prompt_text: case.prompt_text.clone(),
            y_old: case.y_old.clone(),
            y_old_text: case.y_old_text.clone(),
            y_new: case.y_new.clone(),
            y_new_text: case.y_new_text.clone(),
            reserved_rephrase: case.reserved_rephrase.clone(),
            unrelated: Some(case.unrelated.clone()),
        }
    }
}

/// One line of the edit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOutcome {
    pub case_id: u64,
    pub entry_id: u64,
    pub plan: InsertPlan,
    pub iterations: usize,
    pub final_loss: f64,
    pub converged: bool,
    pub d_pos: Option<f64>,
    pub d_neg: Option<f64>,
    pub radius: f64,
    /// Real elapsed time. Lives only in the edit log; reports stay
    /// deterministic.
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub transformation: MlpOverride,
    pub iterations: usize,
    pub final_loss: f64,
    pub converged: bool,
}

/// Adam on a copy of the editable sub-layer; the base model is read only.
/// Convergence is checked before each step: decode matches the new answer
/// and the loss is under target. Running out of iterations is reported,
/// not raised.
pub fn finetune_transformation(
    model: &BackboneModel,
    image: &ImageFeature,
    prompt: &[TokenId],
    y_new: &[TokenId],
    start: MlpOverride,
    cfg: &EditorConfig,
) -> Result<FinetuneResult> {
    cfg.validate()?;
    let (w_idx, b_idx) = model.editable_indices();
    let mut w = Parameter::new("edit.weight", start.weight);
    let mut b = Parameter::new("edit.bias", start.bias);
    let mut st_w = AdamState::new(w.value.shape());
    let mut st_b = AdamState::new(b.value.shape());

    let mut iterations = 0usize;
    let (final_loss, converged) = loop {
        let hook = MlpOverride {
            weight: w.value.clone(),
            bias: b.value.clone(),
        };
        let (loss, parts, trace) = model.answer_loss_traced(image, prompt, y_new, Some(&hook))?;
        if !loss.is_finite() {
            return Err(EditError::Diverged { iter: iterations });
        }
        if loss < cfg.loss_target {
            let decoded = model.greedy_decode(image, prompt, Some(&hook), DECODE_BUDGET)?;
            if decoded == y_new {
                break (loss, true);
            }
        }
        if iterations == cfg.max_iters {
            break (loss, false);
        }
        let dlogits =
            ops::softmax_cross_entropy_backward(&parts.probs, &parts.targets, &parts.mask)?;
        let grads = model.backward(&trace, &dlogits, Some(&hook))?;
        w.grad = grads.by_param[w_idx].clone();
        b.grad = grads.by_param[b_idx].clone();
        adam_step(&mut w, &mut st_w, cfg.lr, 0.9, 0.999, 1e-8)?;
        adam_step(&mut b, &mut st_b, cfg.lr, 0.9, 0.999, 1e-8)?;
        iterations += 1;
    };
    Ok(FinetuneResult {
        transformation: MlpOverride {
            weight: w.value,
            bias: b.value,
        },
        iterations,
        final_loss,
        converged,
    })
}

/// Anchor distances seen from the edit's own key.
pub(crate) fn anchor_distances(
    model: &BackboneModel,
    request: &EditRequest,
    key: &[f64],
    cfg: &EditorConfig,
) -> Result<(f64, f64)> {
    let pos_key = compute_key(model, &request.image, &request.reserved_rephrase)?;
    let d_pos = cfg.distance_fn.distance(key, &pos_key)?;
    let d_img = model.config.d_img;
    let neg_key = match cfg.negative_anchor {
        NegativeAnchor::Black => {
            compute_key(model, &ImageFeature::black(d_img), &request.prompt)?
        }
        NegativeAnchor::White => {
            compute_key(model, &ImageFeature::white(d_img), &request.prompt)?
        }
        NegativeAnchor::RandomPair => {
            let u = request.unrelated.as_ref().ok_or(EditError::MissingUnrelated)?;
            compute_key(model, &u.image, &u.prompt)?
        }
    };
    let d_neg = cfg.distance_fn.distance(key, &neg_key)?;
    Ok((d_pos, d_neg))
}

/// The full pipeline for one edit: key, warm-start choice, fine-tune,
/// radius, insert. The base model never changes; all behavior shift lives
/// in the codebook.
pub fn apply_edit(
    model: &BackboneModel,
    codebook: &mut Codebook,
    request: &EditRequest,
    cfg: &EditorConfig,
) -> Result<EditOutcome> {
    cfg.validate()?;
    codebook.ensure_metric(cfg.distance_fn)?;
    if cfg.fixed_radius.is_none()
        && cfg.negative_anchor == NegativeAnchor::RandomPair
        && request.unrelated.is_none()
    {
        return Err(EditError::MissingUnrelated);
    }
    let t0 = Instant::now();

    let key = compute_key(model, &request.image, &request.prompt)?;
    let plan = codebook.plan_insert(&key)?;
    // A stored transformation is a useful starting point only when it
    // already pushes toward the same answer; warm-starting toward a
    // different answer means undoing the old redirect first, which costs
    // more iterations than a fresh start.
    let related = |id: u64| {
        let e = codebook.get(id).expect("plan points at a live entry");
        (e.meta.y_new == request.y_new).then(|| e.transformation.clone())
    };
    let start = match plan {
        InsertPlan::Add => None,
        InsertPlan::Replace { old_id } => related(old_id),
        InsertPlan::WarmStart { parent_id } => related(parent_id),
    }
    .unwrap_or_else(|| MlpOverride::from_base(model));

    let ft = finetune_transformation(model, &request.image, &request.prompt, &request.y_new, start, cfg)?;

    let (radius, d_pos, d_neg) = match cfg.fixed_radius {
        Some(r) => (r, None, None),
        None => {
            let (dp, dn) = anchor_distances(model, request, &key, cfg)?;
            (estimate_radius(dp, dn, cfg.alpha)?, Some(dp), Some(dn))
        }
    };

    let decision = codebook.insert(EntryCandidate {
        key,
        radius,
        transformation: ft.transformation,
        meta: EntryMeta {
            prompt: request.prompt.clone(),
            prompt_text: request.prompt_text.clone(),
            y_old: request.y_old.clone(),
            y_old_text: request.y_old_text.clone(),
            y_new: request.y_new.clone(),
            y_new_text: request.y_new_text.clone(),
            d_pos,
            d_neg,
            alpha: cfg.alpha,
        },
    })?;

    Ok(EditOutcome {
        case_id: request.case_id,
        entry_id: decision.new_id,
        plan: decision.plan,
        iterations: ft.iterations,
        final_loss: ft.final_loss,
        converged: ft.converged,
        d_pos,
        d_neg,
        radius,
        wall_time_ms: t0.elapsed().as_secs_f64() * 1e3,
    })
}

/// The fine-tuning baseline: the same optimization written straight into
/// the model's own weights. Destructive by design; callers hand in a copy
/// when the original must survive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtOutcome {
    pub case_id: u64,
    pub iterations: usize,
    pub final_loss: f64,
    pub converged: bool,
    pub wall_time_ms: f64,
}

pub fn ft_edit_baseline(
    model: &mut BackboneModel,
    request: &EditRequest,
    cfg: &EditorConfig,
) -> Result<FtOutcome> {
    cfg.validate()?;
    let t0 = Instant::now();
    let start = MlpOverride::from_base(model);
    let ft = finetune_transformation(model, &request.image, &request.prompt, &request.y_new, start, cfg)?;
    let (w_idx, b_idx) = model.editable_indices();
    model.params[w_idx].value = ft.transformation.weight;
    model.params[b_idx].value = ft.transformation.bias;
    Ok(FtOutcome {
        case_id: request.case_id,
        iterations: ft.iterations,
        final_loss: ft.final_loss,
        converged: ft.converged,
        wall_time_ms: t0.elapsed().as_secs_f64() * 1e3,
    })
}

/// One JSON line per outcome, in order.
pub fn write_edit_log(outcomes: &[EditOutcome], path: &Path) -> Result<()> {
    let mut buf = String::new();
    for o in outcomes {
        buf.push_str(&serde_json::to_string(o).map_err(|e| EditError::Config(e.to_string()))?);
        buf.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(buf.as_bytes())?;
    Ok(())
}
