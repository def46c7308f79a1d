//! Scores an editor against an edit suite. Four views of each case:
//!
//! * accuracy: the edited input itself yields the new answer;
//! * rephrase generality: held-out phrasings of the question do too;
//! * image generality: fresh in-scope images do too;
//! * locality: out-of-scope probes (plus a blank image) still match what
//!   the unedited model says, token for token.
//!
//! Locality compares against the base model's own output rather than
//! ground truth: an edit is charged for any behavior drift it causes,
//! including on inputs the base model got wrong.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{BackboneModel, BackboneError, ImageFeature, TokenId, DECODE_BUDGET};
use crate::codebook::{
    compute_key, estimate_radius, Codebook, CodebookError, EntryCandidate, EntryMeta,
};
use crate::editor::{
    apply_edit, ft_edit_baseline, EditError, EditOutcome, EditRequest, EditorConfig, FtOutcome,
};
use crate::worldgen::{EditCase, EditSuite};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation setup: {0}")]
    Config(String),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Which editing mechanism a run measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditorKind {
    /// Codebook entries with anchor-estimated radii.
    Balancedit,
    /// Direct fine-tuning of the model's own editable weights.
    Ft,
    /// Codebook entries whose radius is a constant.
    FixedRadius,
}

impl std::fmt::Display for EditorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EditorKind::Balancedit => write!(f, "balancedit"),
            EditorKind::Ft => write!(f, "ft"),
            EditorKind::FixedRadius => write!(f, "fixed_radius"),
        }
    }
}

/// Whether edits accumulate in one codebook or each case starts clean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Independent,
    Sequential,
}

/// Per-case metric fractions, all in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: u64,
    pub acc: f64,
    pub t_gen: f64,
    pub t_gen_reserved: f64,
    pub i_gen: f64,
    pub loc: f64,
    pub radius: Option<f64>,
}

/// Aggregated metrics for one run, on the 0..100 scale. `wall_time` is
/// deliberately always absent: reports must be byte-identical across
/// reruns, so real timings live in the edit log instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub editor: EditorKind,
    pub protocol: Protocol,
    pub editor_config: EditorConfig,
    pub n_cases: usize,
    pub acc: f64,
    pub t_gen: f64,
    pub t_gen_reserved: f64,
    pub i_gen: f64,
    pub loc: f64,
    pub hm: f64,
    pub mean_radius: Option<f64>,
    pub wall_time: Option<f64>,
    pub cases: Vec<CaseRecord>,
}

/// A report plus the operational logs that are allowed to vary between
/// reruns.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    pub edit_log: Vec<EditOutcome>,
    pub ft_log: Vec<FtOutcome>,
}

/// Harmonic mean of the three generalization/locality components; zero if
/// any component is zero, since a single collapsed axis should not be
/// averaged away.
pub fn harmonic_mean(t_gen: f64, i_gen: f64, loc: f64) -> f64 {
    if t_gen <= 0.0 || i_gen <= 0.0 || loc <= 0.0 {
        return 0.0;
    }
    3.0 / (1.0 / t_gen + 1.0 / i_gen + 1.0 / loc)
}

/// The system under evaluation: either the base model behind a routing
/// codebook, or a model whose weights were edited in place.
pub enum EditedSystem<'a> {
    Routed {
        model: &'a BackboneModel,
        codebook: &'a Codebook,
    },
    Direct { model: &'a BackboneModel },
}

impl EditedSystem<'_> {
    /// Greedy decode under the system's editing mechanism. Routing is
    /// decided once per decode, from the image and prompt alone.
    pub fn decode(&self, img: &ImageFeature, prompt: &[TokenId]) -> Result<Vec<TokenId>> {
        match self {
            EditedSystem::Routed { model, codebook } => {
                let key = compute_key(model, img, prompt)?;
                let (_, hook) = codebook.route(&key)?;
                Ok(model.greedy_decode(img, prompt, hook, DECODE_BUDGET)?)
            }
            EditedSystem::Direct { model } => {
                Ok(model.greedy_decode(img, prompt, None, DECODE_BUDGET)?)
            }
        }
    }
}

/// Scores one case. `base` is the pristine model locality compares
/// against.
pub fn eval_case(
    base: &BackboneModel,
    system: &EditedSystem,
    case: &EditCase,
) -> Result<CaseRecord> {
    let y_new = &case.y_new;
    let hit = |out: &Vec<TokenId>| if out == y_new { 1.0 } else { 0.0 };

    let acc = hit(&system.decode(&case.image, &case.prompt)?);
    let t_gen_reserved = hit(&system.decode(&case.image, &case.reserved_rephrase)?);

    let mut t_hits = 0.0;
    for probe in &case.rephrase_probes {
        t_hits += hit(&system.decode(&case.image, probe)?);
    }
    let t_gen = t_hits / case.rephrase_probes.len() as f64;

    let mut i_hits = 0.0;
    for probe in &case.image_probes {
        i_hits += hit(&system.decode(&probe.image, &case.prompt)?);
    }
    let i_gen = i_hits / case.image_probes.len() as f64;

    // Locality probes plus one blank image on the edited question.
    let mut loc_hits = 0.0;
    let mut loc_total = 0.0;
    for probe in &case.locality_probes {
        let base_out = base.greedy_decode(&probe.image, &probe.prompt, None, DECODE_BUDGET)?;
        let edited_out = system.decode(&probe.image, &probe.prompt)?;
        if edited_out == base_out {
            loc_hits += 1.0;
        }
        loc_total += 1.0;
    }
    let blank = ImageFeature::black(base.config.d_img);
    let base_out = base.greedy_decode(&blank, &case.prompt, None, DECODE_BUDGET)?;
    if system.decode(&blank, &case.prompt)? == base_out {
        loc_hits += 1.0;
    }
    loc_total += 1.0;

    Ok(CaseRecord {
        case_id: case.case_id,
        acc,
        t_gen,
        t_gen_reserved,
        i_gen,
        loc: loc_hits / loc_total,
        radius: None,
    })
}

fn aggregate(
    editor: EditorKind,
    protocol: Protocol,
    cfg: &EditorConfig,
    cases: Vec<CaseRecord>,
    mean_radius: Option<f64>,
) -> EvalReport {
    let n = cases.len() as f64;
    let pct = |f: &dyn Fn(&CaseRecord) -> f64| cases.iter().map(f).sum::<f64>() / n * 100.0;
    let acc = pct(&|c| c.acc);
    let t_gen = pct(&|c| c.t_gen);
    let t_gen_reserved = pct(&|c| c.t_gen_reserved);
    let i_gen = pct(&|c| c.i_gen);
    let loc = pct(&|c| c.loc);
    EvalReport {
        editor,
        protocol,
        editor_config: cfg.clone(),
        n_cases: cases.len(),
        acc,
        t_gen,
        t_gen_reserved,
        i_gen,
        loc,
        hm: harmonic_mean(t_gen, i_gen, loc),
        mean_radius,
        wall_time: None,
        cases,
    }
}

fn check_kind(kind: EditorKind, cfg: &EditorConfig) -> Result<()> {
    match kind {
        EditorKind::FixedRadius if cfg.fixed_radius.is_none() => Err(EvalError::Config(
            "the fixed_radius editor needs editor_config.fixed_radius set".to_string(),
        )),
        EditorKind::Balancedit if cfg.fixed_radius.is_some() => Err(EvalError::Config(
            "editor_config.fixed_radius is set; use the fixed_radius editor".to_string(),
        )),
        _ => Ok(()),
    }
}

/// Independent protocol: every case is edited and scored against a clean
/// slate. Codebook editors reset the codebook; the fine-tuning baseline
/// starts from a fresh copy of the base weights.
pub fn run_eval(
    base: &BackboneModel,
    suite: &EditSuite,
    kind: EditorKind,
    cfg: &EditorConfig,
) -> Result<EvalRun> {
    check_kind(kind, cfg)?;
    if suite.cases.is_empty() {
        return Err(EvalError::Config("the suite has no cases".to_string()));
    }
    let mut records = Vec::with_capacity(suite.cases.len());
    let mut edit_log = Vec::new();
    let mut ft_log = Vec::new();
    let mut radius_sum = 0.0;

    for case in &suite.cases {
        let request = EditRequest::from_case(case);
        match kind {
            EditorKind::Balancedit | EditorKind::FixedRadius => {
                let mut cb = Codebook::new(cfg.distance_fn, cfg.alpha)?;
                let outcome = apply_edit(base, &mut cb, &request, cfg)?;
                radius_sum += outcome.radius;
                let system = EditedSystem::Routed {
                    model: base,
                    codebook: &cb,
                };
                let mut rec = eval_case(base, &system, case)?;
                rec.radius = Some(outcome.radius);
                records.push(rec);
                edit_log.push(outcome);
            }
            EditorKind::Ft => {
                let mut edited = base.clone();
                let outcome = ft_edit_baseline(&mut edited, &request, cfg)?;
                let system = EditedSystem::Direct { model: &edited };
                records.push(eval_case(base, &system, case)?);
                ft_log.push(outcome);
            }
        }
    }

    let mean_radius = match kind {
        EditorKind::Ft => None,
        _ => Some(radius_sum / suite.cases.len() as f64),
    };
    Ok(EvalRun {
        report: aggregate(kind, Protocol::Independent, cfg, records, mean_radius),
        edit_log,
        ft_log,
    })
}

/// Sequential protocol: all edits accumulate in one codebook, then every
/// case is scored against the final state. Only codebook editors can run
/// this way; in-place fine-tuning has no isolation between edits.
pub fn run_sequential(
    base: &BackboneModel,
    suite: &EditSuite,
    kind: EditorKind,
    cfg: &EditorConfig,
) -> Result<EvalRun> {
    check_kind(kind, cfg)?;
    if kind == EditorKind::Ft {
        return Err(EvalError::Config(
            "the sequential protocol needs a codebook editor".to_string(),
        ));
    }
    if suite.cases.is_empty() {
        return Err(EvalError::Config("the suite has no cases".to_string()));
    }

    let mut cb = Codebook::new(cfg.distance_fn, cfg.alpha)?;
    let mut edit_log = Vec::with_capacity(suite.cases.len());
    for case in &suite.cases {
        let request = EditRequest::from_case(case);
        edit_log.push(apply_edit(base, &mut cb, &request, cfg)?);
    }

    let system = EditedSystem::Routed {
        model: base,
        codebook: &cb,
    };
    let mut records = Vec::with_capacity(suite.cases.len());
    for (case, outcome) in suite.cases.iter().zip(&edit_log) {
        let mut rec = eval_case(base, &system, case)?;
        rec.radius = Some(outcome.radius);
        records.push(rec);
    }

    Ok(EvalRun {
        report: aggregate(kind, Protocol::Sequential, cfg, records, Some(cb.mean_radius())),
        edit_log,
        ft_log: Vec::new(),
    })
}

/// One report per alpha, each bit-identical to an independent run at that
/// alpha. Fine-tuning and anchor probing do not depend on alpha, so both
/// happen once per case; only the radius is re-derived.
pub fn sweep_alpha(
    base: &BackboneModel,
    suite: &EditSuite,
    alphas: &[f64],
    cfg: &EditorConfig,
) -> Result<Vec<EvalRun>> {
    check_kind(EditorKind::Balancedit, cfg)?;
    if suite.cases.is_empty() {
        return Err(EvalError::Config("the suite has no cases".to_string()));
    }
    if alphas.is_empty() {
        return Err(EvalError::Config("the alpha grid is empty".to_string()));
    }

    struct Prepared {
        key: Vec<f64>,
        transformation: crate::backbone::MlpOverride,
        d_pos: f64,
        d_neg: f64,
        iterations: usize,
        final_loss: f64,
        converged: bool,
        wall_time_ms: f64,
    }

    let mut prepared = Vec::with_capacity(suite.cases.len());
    for case in &suite.cases {
        let request = EditRequest::from_case(case);
        let t0 = Instant::now();
        let key = compute_key(base, &request.image, &request.prompt)?;
        let ft = crate::editor::finetune_transformation(
            base,
            &request.image,
            &request.prompt,
            &request.y_new,
            crate::backbone::MlpOverride::from_base(base),
            cfg,
        )?;
        let (d_pos, d_neg) = crate::editor::anchor_distances(base, &request, &key, cfg)?;
        prepared.push(Prepared {
            key,
            transformation: ft.transformation,
            d_pos,
            d_neg,
            iterations: ft.iterations,
            final_loss: ft.final_loss,
            converged: ft.converged,
            wall_time_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }

    let mut runs = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let alpha_cfg = EditorConfig {
            alpha,
            ..cfg.clone()
        };
        alpha_cfg.validate()?;
        let mut records = Vec::with_capacity(suite.cases.len());
        let mut edit_log = Vec::with_capacity(suite.cases.len());
        let mut radius_sum = 0.0;
        for (case, prep) in suite.cases.iter().zip(&prepared) {
            let radius = estimate_radius(prep.d_pos, prep.d_neg, alpha)?;
            radius_sum += radius;
            let mut cb = Codebook::new(cfg.distance_fn, alpha)?;
            let decision = cb.insert(EntryCandidate {
                key: prep.key.clone(),
                radius,
                transformation: prep.transformation.clone(),
                meta: EntryMeta {
                    prompt: case.prompt.clone(),
                    prompt_text: case.prompt_text.clone(),
                    y_old: case.y_old.clone(),
                    y_old_text: case.y_old_text.clone(),
                    y_new: case.y_new.clone(),
                    y_new_text: case.y_new_text.clone(),
                    d_pos: Some(prep.d_pos),
                    d_neg: Some(prep.d_neg),
                    alpha,
                },
            })?;
            let system = EditedSystem::Routed {
                model: base,
                codebook: &cb,
            };
            let mut rec = eval_case(base, &system, case)?;
            rec.radius = Some(radius);
            records.push(rec);
            edit_log.push(EditOutcome {
                case_id: case.case_id,
                entry_id: decision.new_id,
                plan: decision.plan,
                iterations: prep.iterations,
                final_loss: prep.final_loss,
                converged: prep.converged,
                d_pos: Some(prep.d_pos),
                d_neg: Some(prep.d_neg),
                radius,
                wall_time_ms: prep.wall_time_ms,
            });
        }
        let mean_radius = radius_sum / suite.cases.len() as f64;
        runs.push(EvalRun {
            report: aggregate(
                EditorKind::Balancedit,
                Protocol::Independent,
                &alpha_cfg,
                records,
                Some(mean_radius),
            ),
            edit_log,
            ft_log: Vec::new(),
        });
    }
    Ok(runs)
}

/// A labeled single-factor variation on a base configuration.
pub struct AblationRun {
    pub label: String,
    pub run: EvalRun,
}

/// One run per alternative for each knob the method exposes: distance
/// metric, negative anchor, and which block hosts the edit.
pub fn run_ablations(
    base: &BackboneModel,
    suite: &EditSuite,
    cfg: &EditorConfig,
) -> Result<Vec<AblationRun>> {
    use crate::codebook::DistanceFn;
    use crate::editor::NegativeAnchor;

    let mut out = Vec::new();
    for dist in [DistanceFn::Euclidean, DistanceFn::Cosine] {
        let c = EditorConfig {
            distance_fn: dist,
            ..cfg.clone()
        };
        out.push(AblationRun {
            label: format!("distance={dist}"),
            run: run_eval(base, suite, EditorKind::Balancedit, &c)?,
        });
    }
    for anchor in [
        NegativeAnchor::Black,
        NegativeAnchor::White,
        NegativeAnchor::RandomPair,
    ] {
        let c = EditorConfig {
            negative_anchor: anchor,
            ..cfg.clone()
        };
        out.push(AblationRun {
            label: format!("negative={anchor}"),
            run: run_eval(base, suite, EditorKind::Balancedit, &c)?,
        });
    }
    let l = base.config.editable_layer;
    let mut layers = vec![l];
    if l > 0 {
        layers.push(l - 1);
    }
    for layer in layers {
        let mut moved = base.clone();
        moved.config.editable_layer = layer;
        out.push(AblationRun {
            label: format!("layer={layer}"),
            run: run_eval(&moved, suite, EditorKind::Balancedit, cfg)?,
        });
    }
    Ok(out)
}

// ---- exports ----

/// Pretty JSON with a trailing newline. Field order is fixed by the
/// struct, so identical runs serialize identically.
pub fn export_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

const CSV_COLUMNS: &str = "editor,alpha,acc,t_gen,i_gen,loc,hm,mean_radius,wall_time";

/// One row per report under a fixed header. Absent values serialize as
/// empty cells.
pub fn export_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(CSV_COLUMNS);
    out.push('\n');
    for r in reports {
        let mean_radius = r.mean_radius.map(|v| v.to_string()).unwrap_or_default();
        let wall_time = r.wall_time.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.editor,
            r.editor_config.alpha,
            r.acc,
            r.t_gen,
            r.i_gen,
            r.loc,
            r.hm,
            mean_radius,
            wall_time
        ));
    }
    out
}

/// Entry keys as CSV, one row per entry, for offline geometry inspection.
pub fn dump_keys(codebook: &Codebook) -> String {
    let dim = codebook.entries().first().map_or(0, |e| e.key.len());
    let mut out = String::from("id");
    for j in 0..dim {
        out.push_str(&format!(",k{j}"));
    }
    out.push('\n');
    for e in codebook.entries() {
        out.push_str(&e.id.to_string());
        for v in &e.key {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{pretrain, ModelConfig, PretrainSample};
    use crate::codebook::DistanceFn;
    use crate::worldgen::{
        EditScope, ImageProbe, LocalityProbe, ScopeMix, UnrelatedSample,
    };
    use std::sync::OnceLock;

    const IMG_A: [f64; 4] = [0.2, -0.4, 0.8, 0.1];
    const IMG_B: [f64; 4] = [-0.6, 0.3, 0.2, -0.9];
    const PROMPTS: [[TokenId; 3]; 3] = [[4, 5, 6], [5, 6, 4], [6, 4, 5]];
    const ANS_A: TokenId = 10;
    const ANS_B: TokenId = 11;
    const ANS_C: TokenId = 12;

    fn trained_model() -> &'static BackboneModel {
        static MODEL: OnceLock<BackboneModel> = OnceLock::new();
        MODEL.get_or_init(|| {
            let mut model = BackboneModel::new(ModelConfig {
                vocab_size: 24,
                d_model: 16,
                n_layers: 2,
                n_heads: 2,
                mlp_hidden: 64,
                d_img: 4,
                n_img_prefix_tokens: 2,
                max_seq_len: 16,
                editable_layer: 1,
                seed: 9,
            })
            .unwrap();
            let mut train = Vec::new();
            for (img, ans) in [(IMG_A, ANS_A), (IMG_B, ANS_B)] {
                for p in PROMPTS {
                    train.push(PretrainSample {
                        image: ImageFeature(img.to_vec()),
                        prompt: p.to_vec(),
                        answer: vec![ans],
                    });
                }
            }
            let log = pretrain(&mut model, &train, &train, 200, 3e-3, 1).unwrap();
            assert_eq!(log.holdout_accuracy, 1.0, "fixture model failed to memorize");
            model
        })
    }

    fn case(case_id: u64, img: &[f64], y_old: TokenId, y_new: TokenId) -> EditCase {
        let other: Vec<f64> = if img == IMG_A { IMG_B.to_vec() } else { IMG_A.to_vec() };
        EditCase {
            case_id,
            entity_id: 0,
            scope: EditScope::Instance,
            image: ImageFeature(img.to_vec()),
            prompt: PROMPTS[0].to_vec(),
            prompt_text: String::new(),
            y_old: vec![y_old],
            y_old_text: String::new(),
            y_new: vec![y_new],
            y_new_text: String::new(),
            reserved_rephrase: PROMPTS[1].to_vec(),
            reserved_rephrase_text: String::new(),
            rephrase_probes: vec![PROMPTS[2].to_vec(); 10],
            image_probes: vec![
                ImageProbe {
                    entity_id: 0,
                    image: ImageFeature(img.to_vec()),
                };
                10
            ],
            locality_probes: vec![
                LocalityProbe {
                    entity_id: 1,
                    image: ImageFeature(other.clone()),
                    prompt: PROMPTS[0].to_vec(),
                    true_answer: vec![if y_old == ANS_A { ANS_B } else { ANS_A }],
                    true_answer_text: String::new(),
                };
                5
            ],
            unrelated: UnrelatedSample {
                entity_id: 1,
                image: ImageFeature(other),
                prompt: PROMPTS[2].to_vec(),
                prompt_text: String::new(),
            },
        }
    }

    fn tiny_suite(n: usize) -> EditSuite {
        let specs = [(IMG_A, ANS_A, ANS_B), (IMG_B, ANS_B, ANS_C)];
        EditSuite {
            world_config: crate::worldgen::WorldConfig::default(),
            seed: 0,
            scope_mix: ScopeMix::default(),
            cases: (0..n)
                .map(|i| {
                    let (img, old, new) = specs[i % specs.len()];
                    case(i as u64, &img, old, new)
                })
                .collect(),
        }
    }

    #[test]
    fn harmonic_mean_reference_values() {
        assert_eq!(harmonic_mean(100.0, 100.0, 100.0), 100.0);
        assert_eq!(harmonic_mean(0.0, 95.0, 95.0), 0.0);
        assert_eq!(harmonic_mean(95.0, 95.0, 0.0), 0.0);
        assert!((harmonic_mean(99.90, 98.91, 71.74) - 88.08).abs() < 0.02);
        assert!((harmonic_mean(98.89, 65.38, 61.18) - 71.85).abs() < 0.02);
        // Dominated by the weakest component.
        assert!(harmonic_mean(100.0, 100.0, 10.0) < 30.0);
    }

    #[test]
    fn empty_codebook_scores_perfect_locality_and_no_accuracy() {
        let model = trained_model();
        let cb = Codebook::new(DistanceFn::Euclidean, 0.2).unwrap();
        let system = EditedSystem::Routed {
            model,
            codebook: &cb,
        };
        let rec = eval_case(model, &system, &case(0, &IMG_A, ANS_A, ANS_B)).unwrap();
        assert_eq!(rec.loc, 1.0);
        assert_eq!(rec.acc, 0.0);
        assert_eq!(rec.t_gen, 0.0);
        assert_eq!(rec.i_gen, 0.0);
    }

    #[test]
    fn independent_eval_reports_full_accuracy_on_the_tiny_suite() {
        let model = trained_model();
        let suite = tiny_suite(2);
        let run = run_eval(model, &suite, EditorKind::Balancedit, &EditorConfig::default())
            .unwrap();
        let r = &run.report;
        assert_eq!(r.n_cases, 2);
        assert_eq!(r.acc, 100.0);
        assert_eq!(r.hm, harmonic_mean(r.t_gen, r.i_gen, r.loc));
        assert!(r.mean_radius.unwrap() > 0.0);
        assert_eq!(r.wall_time, None);
        assert_eq!(run.edit_log.len(), 2);
        assert!(run.ft_log.is_empty());
        // Per-case records carry the entry radii.
        for (rec, out) in r.cases.iter().zip(&run.edit_log) {
            assert_eq!(rec.radius, Some(out.radius));
        }
    }

    #[test]
    fn ft_eval_uses_a_fresh_model_copy_per_case() {
        let model = trained_model();
        let before = model.weights_fingerprint();
        let suite = tiny_suite(2);
        let run = run_eval(model, &suite, EditorKind::Ft, &EditorConfig::default()).unwrap();
        assert_eq!(model.weights_fingerprint(), before);
        assert_eq!(run.report.acc, 100.0);
        assert_eq!(run.report.mean_radius, None);
        assert_eq!(run.ft_log.len(), 2);
        assert!(run.edit_log.is_empty());
    }

    #[test]
    fn editor_kind_and_config_must_agree() {
        let model = trained_model();
        let suite = tiny_suite(1);
        let plain = EditorConfig::default();
        let fixed = EditorConfig {
            fixed_radius: Some(1.0),
            ..EditorConfig::default()
        };
        assert!(run_eval(model, &suite, EditorKind::FixedRadius, &plain).is_err());
        assert!(run_eval(model, &suite, EditorKind::Balancedit, &fixed).is_err());
        assert!(run_eval(model, &suite, EditorKind::FixedRadius, &fixed).is_ok());
        assert!(run_sequential(model, &suite, EditorKind::Ft, &plain).is_err());
    }

    #[test]
    fn sweep_matches_an_independent_run_exactly() {
        let model = trained_model();
        let suite = tiny_suite(2);
        let cfg = EditorConfig::default();
        let sweep = sweep_alpha(model, &suite, &[0.0, 0.25, 1.0], &cfg).unwrap();
        assert_eq!(sweep.len(), 3);
        for (i, alpha) in [0.0, 0.25, 1.0].into_iter().enumerate() {
            let direct = run_eval(
                model,
                &suite,
                EditorKind::Balancedit,
                &EditorConfig { alpha, ..cfg.clone() },
            )
            .unwrap();
            assert_eq!(sweep[i].report, direct.report, "alpha {alpha} diverged");
        }
    }

    #[test]
    fn sequential_eval_scores_every_case_against_the_final_codebook() {
        let model = trained_model();
        let suite = tiny_suite(2);
        let run =
            run_sequential(model, &suite, EditorKind::Balancedit, &EditorConfig::default())
                .unwrap();
        assert_eq!(run.report.protocol, Protocol::Sequential);
        assert_eq!(run.report.cases.len(), 2);
        assert_eq!(run.edit_log.len(), 2);
    }

    #[test]
    fn reports_are_deterministic_across_runs() {
        let model = trained_model();
        let suite = tiny_suite(2);
        let cfg = EditorConfig::default();
        let a = run_eval(model, &suite, EditorKind::Balancedit, &cfg).unwrap();
        let b = run_eval(model, &suite, EditorKind::Balancedit, &cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(export_json(&a.report), export_json(&b.report));
        assert_eq!(
            export_csv(std::slice::from_ref(&a.report)),
            export_csv(std::slice::from_ref(&b.report))
        );
    }

    #[test]
    fn csv_has_the_fixed_column_order_and_blank_missing_cells() {
        let model = trained_model();
        let suite = tiny_suite(1);
        let cb_run =
            run_eval(model, &suite, EditorKind::Balancedit, &EditorConfig::default()).unwrap();
        let ft_run = run_eval(model, &suite, EditorKind::Ft, &EditorConfig::default()).unwrap();
        let csv = export_csv(&[cb_run.report, ft_run.report]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "editor,alpha,acc,t_gen,i_gen,loc,hm,mean_radius,wall_time");
        assert!(lines[1].starts_with("balancedit,0.2,"));
        assert!(lines[2].starts_with("ft,0.2,"));
        // FT has no radius; wall_time is always blank.
        assert!(lines[2].ends_with(",,"));
        assert!(lines[1].ends_with(','));
    }

    #[test]
    fn key_dump_lists_one_row_per_entry() {
        let model = trained_model();
        let suite = tiny_suite(2);
        let cfg = EditorConfig::default();
        let mut cb = Codebook::new(cfg.distance_fn, cfg.alpha).unwrap();
        for case in &suite.cases {
            apply_edit(model, &mut cb, &EditRequest::from_case(case), &cfg).unwrap();
        }
        let dump = dump_keys(&cb);
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "id,k0,k1,k2,k3,k4,k5,k6,k7,k8,k9,k10,k11,k12,k13,k14,k15");
        assert!(lines[1].starts_with("0,"));
        assert!(lines[2].starts_with("1,"));
    }
}
