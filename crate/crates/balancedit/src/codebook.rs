//! The editing adapter: an ordered set of (key, transformation, radius)
//! entries attached to one editable layer. A forward pass is routed through
//! an entry's transformation when its key is the nearest stored key and the
//! distance falls inside that entry's influence radius; otherwise the base
//! layer runs untouched.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{
    BackboneModel, BackboneError, HiddenStates, ImageFeature, MlpOverride, TokenId, TokenSequence,
};
use crate::numerics::Tensor;

pub const DEFAULT_TAU: f64 = 1e-6;
const FORMAT_VERSION: u32 = 1;
const KIND: &str = "codebook";

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("vectors have different dims: {lhs} vs {rhs}")]
    DimMismatch { lhs: usize, rhs: usize },
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVectorCosine,
    #[error("alpha {0} outside [0, 1]")]
    AlphaRange(f64),
    #[error("distance {0} is negative")]
    NegativeDistance(f64),
    #[error("no codebook entry with id {0}")]
    EntryNotFound(u64),
    #[error("codebook uses {stored:?} distance but {requested:?} was requested; radii are metric-specific, regenerate the codebook")]
    MetricMismatch { stored: DistanceFn, requested: DistanceFn },
    #[error("codebook file: {0}")]
    Format(String),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CodebookError>;

/// Key-space metric. Radii are expressed in this metric, so a codebook is
/// permanently tagged with the one it was built under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceFn {
    Euclidean,
    Cosine,
}

impl DistanceFn {
    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(CodebookError::DimMismatch {
                lhs: a.len(),
                rhs: b.len(),
            });
        }
        match self {
            DistanceFn::Euclidean => {
                let mut acc = 0.0;
                for i in 0..a.len() {
                    let d = a[i] - b[i];
                    acc += d * d;
                }
                Ok(acc.sqrt())
            }
            DistanceFn::Cosine => {
                let mut dot = 0.0;
                let mut na = 0.0;
                let mut nb = 0.0;
                for i in 0..a.len() {
                    dot += a[i] * b[i];
                    na += a[i] * a[i];
                    nb += b[i] * b[i];
                }
                if na == 0.0 || nb == 0.0 {
                    return Err(CodebookError::ZeroVectorCosine);
                }
                Ok(1.0 - dot / (na.sqrt() * nb.sqrt()))
            }
        }
    }
}

impl fmt::Display for DistanceFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceFn::Euclidean => write!(f, "euclidean"),
            DistanceFn::Cosine => write!(f, "cosine"),
        }
    }
}

/// Influence radius from the two anchor distances: a convex mix, so ε always
/// lies between d_pos and d_neg. α = 0 trusts the negative anchor alone
/// (widest), α = 1 the positive anchor alone (tightest, given d_pos ≤ d_neg).
pub fn estimate_radius(d_pos: f64, d_neg: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CodebookError::AlphaRange(alpha));
    }
    if d_pos < 0.0 {
        return Err(CodebookError::NegativeDistance(d_pos));
    }
    if d_neg < 0.0 {
        return Err(CodebookError::NegativeDistance(d_neg));
    }
    Ok(alpha * d_pos + (1.0 - alpha) * d_neg)
}

/// Mean of the layer inputs over every position (image prefix + prompt):
/// the lookup key for an (image, prompt) pair.
pub fn extract_key(hidden: &HiddenStates, layer: usize) -> Result<Vec<f64>> {
    let h = hidden.layer(layer);
    let rows = h.shape()[0];
    let cols = h.shape()[1];
    if rows == 0 {
        return Err(CodebookError::Format(
            "cannot extract a key from an empty sequence".to_string(),
        ));
    }
    let mut key = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            key[j] += h.at2(i, j);
        }
    }
    for v in &mut key {
        *v /= rows as f64;
    }
    Ok(key)
}

/// Forward to the editable layer and average: the key the codebook indexes
/// by. Hooks act strictly downstream of this layer, so keys are the same
/// with or without routing.
pub fn compute_key(
    model: &BackboneModel,
    img: &ImageFeature,
    prompt: &[TokenId],
) -> Result<Vec<f64>> {
    let toks = crate::backbone::assemble_tokens(prompt, None);
    let fwd = model.forward_with_hook(img, &toks, None)?;
    extract_key(&fwd.hidden, model.config.editable_layer)
}

/// Provenance and anchor data stored alongside each entry. The text fields
/// are display renderings of the token sequences, kept so routing decisions
/// can be explained without the world's vocabulary at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub prompt: TokenSequence,
    pub prompt_text: String,
    pub y_old: TokenSequence,
    pub y_old_text: String,
    pub y_new: TokenSequence,
    pub y_new_text: String,
    /// Anchor distances; absent for fixed-radius entries, which skip anchors.
    pub d_pos: Option<f64>,
    pub d_neg: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookEntry {
    pub id: u64,
    pub key: Vec<f64>,
    pub radius: f64,
    pub transformation: MlpOverride,
    /// Entry this transformation was warm-started from, if any.
    pub parent_id: Option<u64>,
    pub meta: EntryMeta,
}

/// A finished edit waiting for an id: everything but the fields the insert
/// policy assigns.
#[derive(Debug, Clone)]
pub struct EntryCandidate {
    pub key: Vec<f64>,
    pub radius: f64,
    pub transformation: MlpOverride,
    pub meta: EntryMeta,
}

/// Outcome of a nearest-key lookup. `routed` holds exactly when a nearest
/// entry exists and the query sits within its radius.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    pub routed: bool,
    pub nearest_entry_id: Option<u64>,
    pub distance_to_nearest: f64,
    pub radius_of_nearest: f64,
}

impl RoutingDecision {
    fn none() -> Self {
        RoutingDecision {
            routed: false,
            nearest_entry_id: None,
            distance_to_nearest: f64::INFINITY,
            radius_of_nearest: 0.0,
        }
    }
}

/// What the insert policy decided to do with a candidate key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertPlan {
    /// No related entry: warm-start from the base layer.
    Add,
    /// Same fact re-edited (key within τ): the old entry is discarded.
    Replace { old_id: u64 },
    /// Key lands inside an existing entry's radius: fine-tune from that
    /// entry's transformation so the earlier edit is not forgotten.
    WarmStart { parent_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InsertDecision {
    pub new_id: u64,
    pub plan: InsertPlan,
}

#[derive(Debug, Clone)]
pub struct Codebook {
    pub distance_fn: DistanceFn,
    pub alpha: f64,
    pub tau: f64,
    entries: Vec<CodebookEntry>,
    next_id: u64,
}

impl Codebook {
    pub fn new(distance_fn: DistanceFn, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(CodebookError::AlphaRange(alpha));
        }
        Ok(Codebook {
            distance_fn,
            alpha,
            tau: DEFAULT_TAU,
            entries: Vec::new(),
            next_id: 0,
        })
    }

    pub fn entries(&self) -> &[CodebookEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&CodebookEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn mean_radius(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().map(|e| e.radius).sum::<f64>() / self.entries.len() as f64
    }

    /// Errors when this codebook's radii were computed under a different
    /// metric than the caller intends to use.
    pub fn ensure_metric(&self, requested: DistanceFn) -> Result<()> {
        if self.distance_fn != requested {
            return Err(CodebookError::MetricMismatch {
                stored: self.distance_fn,
                requested,
            });
        }
        Ok(())
    }

    /// Nearest stored key by linear scan; ties go to the smallest id. The
    /// entries vector is id-ordered, so keeping the first strict minimum
    /// implements that tie-break.
    pub fn lookup(&self, query: &[f64]) -> Result<RoutingDecision> {
        let mut best: Option<(&CodebookEntry, f64)> = None;
        for e in &self.entries {
            let d = self.distance_fn.distance(query, &e.key)?;
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((e, d));
            }
        }
        Ok(match best {
            None => RoutingDecision::none(),
            Some((e, d)) => RoutingDecision {
                routed: d <= e.radius,
                nearest_entry_id: Some(e.id),
                distance_to_nearest: d,
                radius_of_nearest: e.radius,
            },
        })
    }

    /// Lookup plus the transformation to run: the nearest entry's weights
    /// when routed, the base layer otherwise (`None`).
    pub fn route(&self, query: &[f64]) -> Result<(RoutingDecision, Option<&MlpOverride>)> {
        let decision = self.lookup(query)?;
        let hook = if decision.routed {
            let id = decision.nearest_entry_id.expect("routed implies nearest");
            Some(&self.get(id).expect("nearest id exists").transformation)
        } else {
            None
        };
        Ok((decision, hook))
    }

    /// Decide how a new key relates to the stored ones. Within τ of an
    /// existing key means the same fact (replace); inside an existing
    /// radius means an overlapping fact (warm-start from the nearest such
    /// entry); anything else is a plain add.
    pub fn plan_insert(&self, key: &[f64]) -> Result<InsertPlan> {
        let mut nearest: Option<(u64, f64)> = None;
        let mut nearest_covering: Option<(u64, f64)> = None;
        for e in &self.entries {
            let d = self.distance_fn.distance(key, &e.key)?;
            if nearest.map_or(true, |(_, bd)| d < bd) {
                nearest = Some((e.id, d));
            }
            if d <= e.radius && nearest_covering.map_or(true, |(_, bd)| d < bd) {
                nearest_covering = Some((e.id, d));
            }
        }
        if let Some((id, d)) = nearest {
            if d <= self.tau {
                return Ok(InsertPlan::Replace { old_id: id });
            }
        }
        if let Some((id, _)) = nearest_covering {
            return Ok(InsertPlan::WarmStart { parent_id: id });
        }
        Ok(InsertPlan::Add)
    }

    /// Store a finished candidate under the policy `plan_insert` dictates.
    /// Replacement discards the old entry; the id sequence never reuses
    /// numbers.
    pub fn insert(&mut self, candidate: EntryCandidate) -> Result<InsertDecision> {
        let plan = self.plan_insert(&candidate.key)?;
        let new_id = self.next_id;
        self.next_id += 1;
        let parent_id = match plan {
            InsertPlan::Add => None,
            InsertPlan::Replace { old_id } => {
                self.entries.retain(|e| e.id != old_id);
                Some(old_id)
            }
            InsertPlan::WarmStart { parent_id } => Some(parent_id),
        };
        self.entries.push(CodebookEntry {
            id: new_id,
            key: candidate.key,
            radius: candidate.radius,
            transformation: candidate.transformation,
            parent_id,
            meta: candidate.meta,
        });
        Ok(InsertDecision { new_id, plan })
    }

    /// Detach one edit. Every other entry keeps routing exactly as before.
    pub fn remove(&mut self, id: u64) -> Result<CodebookEntry> {
        let pos = self
            .entries
            .iter()
            .position(|e| e.id == id)
            .ok_or(CodebookError::EntryNotFound(id))?;
        Ok(self.entries.remove(pos))
    }
}

/// One routing decision unpacked into words and numbers.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub decision: RoutingDecision,
    pub nearest: Option<ExplainedEntry>,
}

#[derive(Debug, Clone)]
pub struct ExplainedEntry {
    pub id: u64,
    pub prompt_text: String,
    pub y_old_text: String,
    pub y_new_text: String,
    pub distance: f64,
    pub radius: f64,
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.nearest {
            None => write!(f, "no entries: base model answers"),
            Some(e) => {
                let margin = e.distance - e.radius;
                if self.decision.routed {
                    write!(
                        f,
                        "routed to entry {} (edit: \"{}\" {} -> {}): distance {:.4} <= radius {:.4}",
                        e.id, e.prompt_text, e.y_old_text, e.y_new_text, e.distance, e.radius
                    )
                } else {
                    write!(
                        f,
                        "base model answers: nearest entry {} (edit: \"{}\" {} -> {}) at distance {:.4} > radius {:.4} (margin {:.4})",
                        e.id, e.prompt_text, e.y_old_text, e.y_new_text, e.distance, e.radius, margin
                    )
                }
            }
        }
    }
}

/// Why a given (image, prompt) routes where it does. Pure read.
pub fn explain(
    model: &BackboneModel,
    img: &ImageFeature,
    prompt: &[TokenId],
    cb: &Codebook,
) -> Result<Explanation> {
    let key = compute_key(model, img, prompt)?;
    let decision = cb.lookup(&key)?;
    let nearest = decision.nearest_entry_id.map(|id| {
        let e = cb.get(id).expect("nearest id exists");
        ExplainedEntry {
            id,
            prompt_text: e.meta.prompt_text.clone(),
            y_old_text: e.meta.y_old_text.clone(),
            y_new_text: e.meta.y_new_text.clone(),
            distance: decision.distance_to_nearest,
            radius: decision.radius_of_nearest,
        }
    });
    Ok(Explanation { decision, nearest })
}

// ---- serialization ----

#[derive(Serialize, Deserialize)]
struct FileEntry {
    id: u64,
    key: Vec<f64>,
    radius: f64,
    parent_id: Option<u64>,
    meta: EntryMeta,
    weights_offset: u64,
    weights_len: u64,
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    format_version: u32,
    kind: String,
    distance_fn: DistanceFn,
    alpha: f64,
    tau: f64,
    next_id: u64,
    w_shape: Vec<usize>,
    b_shape: Vec<usize>,
    entries: Vec<FileEntry>,
}

impl Codebook {
    /// Single-line JSON header (ids, keys, radii, metadata, byte offsets)
    /// followed by every entry's weights as little-endian f64. Identical
    /// codebooks produce identical bytes.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (w_shape, b_shape) = match self.entries.first() {
            Some(e) => (
                e.transformation.weight.shape().to_vec(),
                e.transformation.bias.shape().to_vec(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        let mut file_entries = Vec::with_capacity(self.entries.len());
        let mut offset = 0u64;
        for e in &self.entries {
            let len = ((e.transformation.weight.numel() + e.transformation.bias.numel()) * 8) as u64;
            file_entries.push(FileEntry {
                id: e.id,
                key: e.key.clone(),
                radius: e.radius,
                parent_id: e.parent_id,
                meta: e.meta.clone(),
                weights_offset: offset,
                weights_len: len,
            });
            offset += len;
        }
        let header = FileHeader {
            format_version: FORMAT_VERSION,
            kind: KIND.to_string(),
            distance_fn: self.distance_fn,
            alpha: self.alpha,
            tau: self.tau,
            next_id: self.next_id,
            w_shape,
            b_shape,
            entries: file_entries,
        };
        let mut out = Vec::new();
        serde_json::to_writer(&mut out, &header)
            .map_err(|e| CodebookError::Format(e.to_string()))?;
        out.push(b'\n');
        for e in &self.entries {
            for v in e.transformation.weight.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in e.transformation.bias.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path)?;
        let nl = buf
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CodebookError::Format("missing header line".to_string()))?;
        let header: FileHeader = serde_json::from_slice(&buf[..nl])
            .map_err(|e| CodebookError::Format(format!("bad header: {e}")))?;
        if header.kind != KIND {
            return Err(CodebookError::Format(format!(
                "expected a {KIND} file, found kind `{}`",
                header.kind
            )));
        }
        if header.format_version != FORMAT_VERSION {
            return Err(CodebookError::Format(format!(
                "format version {} unsupported (this build reads {FORMAT_VERSION})",
                header.format_version
            )));
        }
        if !(0.0..=1.0).contains(&header.alpha) {
            return Err(CodebookError::AlphaRange(header.alpha));
        }
        let blob = &buf[nl + 1..];
        let w_numel: usize = header.w_shape.iter().product();
        let b_numel: usize = header.b_shape.iter().product();
        let per_entry = (w_numel + b_numel) * 8;

        let mut entries = Vec::with_capacity(header.entries.len());
        let mut expected_offset = 0u64;
        for fe in &header.entries {
            if fe.weights_offset != expected_offset || fe.weights_len != per_entry as u64 {
                return Err(CodebookError::Format(format!(
                    "entry {} has inconsistent weight offsets",
                    fe.id
                )));
            }
            expected_offset += fe.weights_len;
            let start = fe.weights_offset as usize;
            let end = start + fe.weights_len as usize;
            if end > blob.len() {
                return Err(CodebookError::Format(format!(
                    "entry {} weights run past the end of the file",
                    fe.id
                )));
            }
            let mut floats = Vec::with_capacity(w_numel + b_numel);
            for chunk in blob[start..end].chunks_exact(8) {
                floats.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            let weight = Tensor::from_vec(&header.w_shape, floats[..w_numel].to_vec())
                .map_err(|e| CodebookError::Format(e.to_string()))?;
            let bias = Tensor::from_vec(&header.b_shape, floats[w_numel..].to_vec())
                .map_err(|e| CodebookError::Format(e.to_string()))?;
            entries.push(CodebookEntry {
                id: fe.id,
                key: fe.key.clone(),
                radius: fe.radius,
                transformation: MlpOverride { weight, bias },
                parent_id: fe.parent_id,
                meta: fe.meta.clone(),
            });
        }
        if expected_offset != blob.len() as u64 {
            return Err(CodebookError::Format(format!(
                "weight blob is {} bytes, entries account for {expected_offset}",
                blob.len()
            )));
        }
        Ok(Codebook {
            distance_fn: header.distance_fn,
            alpha: header.alpha,
            tau: header.tau,
            entries,
            next_id: header.next_id,
        })
    }
}
