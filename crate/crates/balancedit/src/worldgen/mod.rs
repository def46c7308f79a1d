//! A deterministic synthetic fact-world. Entities live in a
//! category > breed > instance hierarchy; their image features are nested
//! Gaussians, so semantic closeness shows up as feature-space closeness.
//! Questions come in three kinds that mirror the hierarchy levels, which is
//! what gives edits genuinely different influence scopes to aim at.

mod suite;

pub use suite::{
    generate_edit_suite, read_suite, write_suite, EditCase, EditScope, EditSuite, ImageProbe,
    LocalityProbe, ScopeMix, UnrelatedSample, N_IMAGE_PROBES, N_LOCALITY_PROBES,
    N_REPHRASE_PROBES,
};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{ImageFeature, PretrainSample, TokenId, TokenSequence};
use crate::subseed;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("vocabulary needs {needed} tokens but the budget is {budget}")]
    VocabOverflow { needed: usize, budget: usize },
    #[error("case {case}: only {available} out-of-scope siblings, {needed} locality probes required")]
    InsufficientSiblings { case: u64, available: usize, needed: usize },
    #[error("{path} line {line}: {msg}")]
    Format { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WorldError>;

/// Shape and noise structure of the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_categories: usize,
    pub breeds_per_category: usize,
    pub instances_per_breed: usize,
    pub d_img: usize,
    /// Category centers, breed offsets, and instance offsets are Gaussian
    /// with these scales; sampling noise reuses the instance scale. They
    /// must decrease strictly down the hierarchy.
    pub sigma_category: f64,
    pub sigma_breed: f64,
    pub sigma_instance: f64,
    /// How many of each kind's surface forms may serve as an edit prompt.
    pub n_question_templates: usize,
    /// Token budget the vocabulary must fit into (special tokens +
    /// question words + one name per entity, breed, and category).
    pub vocab_size: usize,
    pub pretrain_samples_per_entity: usize,
    pub holdout_samples_per_entity: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_categories: 6,
            breeds_per_category: 3,
            instances_per_breed: 4,
            d_img: 16,
            sigma_category: 3.0,
            sigma_breed: 1.0,
            sigma_instance: 0.3,
            n_question_templates: 4,
            vocab_size: 128,
            // The kind/form cycle covers all 36 (kind, form) pairs every
            // 36 samples; 96 sees each pair at least twice.
            pretrain_samples_per_entity: 96,
            holdout_samples_per_entity: 3,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn n_entities(&self) -> usize {
        self.n_categories * self.breeds_per_category * self.instances_per_breed
    }

    pub fn n_breeds(&self) -> usize {
        self.n_categories * self.breeds_per_category
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_categories == 0 || self.breeds_per_category == 0 || self.instances_per_breed == 0
        {
            return Err(WorldError::Config(
                "category, breed, and instance counts must all be at least 1".to_string(),
            ));
        }
        if self.d_img == 0 {
            return Err(WorldError::Config("d_img must be positive".to_string()));
        }
        if !(self.sigma_category > self.sigma_breed
            && self.sigma_breed > self.sigma_instance
            && self.sigma_instance >= 0.0)
        {
            return Err(WorldError::Config(format!(
                "noise scales must decrease strictly down the hierarchy, got {} / {} / {}",
                self.sigma_category, self.sigma_breed, self.sigma_instance
            )));
        }
        if self.n_question_templates == 0 || self.n_question_templates > FORMS_PER_KIND {
            return Err(WorldError::Config(format!(
                "n_question_templates must be in 1..={FORMS_PER_KIND}"
            )));
        }
        if self.pretrain_samples_per_entity == 0 {
            return Err(WorldError::Config(
                "pretrain_samples_per_entity must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// The three things one can ask about a pictured entity, mirroring the
/// hierarchy levels an edit may target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    InstanceName,
    BreedName,
    CategoryName,
}

pub const QUESTION_KINDS: [QuestionKind; 3] = [
    QuestionKind::InstanceName,
    QuestionKind::BreedName,
    QuestionKind::CategoryName,
];

impl fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuestionKind::InstanceName => write!(f, "instance"),
            QuestionKind::BreedName => write!(f, "breed"),
            QuestionKind::CategoryName => write!(f, "category"),
        }
    }
}

/// One member of the world: its hierarchy path and mean image feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: usize,
    pub category: usize,
    /// Global breed index: `category * breeds_per_category + breed_in_cat`.
    pub breed: usize,
    pub instance: usize,
    pub mean: Vec<f64>,
}

/// Token table: specials, then question words, then entity, breed, and
/// category names. Fully determined by the world config.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Vocab {
    fn build(words: Vec<String>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i as TokenId).is_some() {
                return Err(WorldError::Config(format!(
                    "duplicate vocabulary word `{w}`"
                )));
            }
        }
        Ok(Vocab { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn token(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, token: TokenId) -> Option<&str> {
        self.words.get(token as usize).map(|s| s.as_str())
    }

    /// Space-joined rendering; unknown ids render as `<?id>`.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| match self.word(t) {
                Some(w) => w.to_string(),
                None => format!("<?{t}>"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        text.split_whitespace()
            .map(|w| {
                self.token(w).ok_or_else(|| {
                    WorldError::Config(format!("word `{w}` missing from vocabulary"))
                })
            })
            .collect()
    }
}

pub const FORMS_PER_KIND: usize = 12;

const INSTANCE_FORMS: [&str; FORMS_PER_KIND] = [
    "what is the name of this animal",
    "which name does this animal have",
    "tell me the name of this creature",
    "how is this animal named",
    "what is this animal called",
    "say the name of this animal",
    "what is the name of this creature",
    "which name does this creature have",
    "please tell me the name of this animal",
    "what is this creature called",
    "state the name of this animal",
    "how is this creature named",
];

const BREED_FORMS: [&str; FORMS_PER_KIND] = [
    "what breed is this animal",
    "which breed does this animal have",
    "tell me the breed of this creature",
    "what is the breed of this animal",
    "what breed is this creature",
    "say the breed of this animal",
    "which breed is this animal",
    "what is the breed of this creature",
    "please tell me the breed of this animal",
    "which breed does this creature have",
    "state the breed of this animal",
    "identify the breed of this animal",
];

const CATEGORY_FORMS: [&str; FORMS_PER_KIND] = [
    "what kind of animal is this",
    "which category does this animal have",
    "tell me the category of this creature",
    "what is the category of this animal",
    "what kind of creature is this",
    "say the category of this animal",
    "which category is this animal",
    "what is the category of this creature",
    "please tell me the category of this animal",
    "what type of animal is this",
    "state the category of this animal",
    "identify the category of this animal",
];

const SYLLABLES: [&str; 12] = [
    "ba", "re", "ki", "mo", "lu", "ta", "ne", "so", "vi", "du", "pa", "ze",
];

const CATEGORY_WORDS: [&str; 10] = [
    "feline", "canine", "equine", "bovine", "avian", "rodent", "ursine", "lupine", "porcine",
    "cervine",
];

fn two_syllable_name(i: usize) -> String {
    let n = SYLLABLES.len();
    let idx = (i * 11 + 5) % (n * n);
    format!("{}{}", SYLLABLES[idx / n], SYLLABLES[idx % n])
}

fn three_syllable_name(i: usize) -> String {
    let n = SYLLABLES.len();
    let idx = (i * 101 + 17) % (n * n * n);
    format!(
        "{}{}{}",
        SYLLABLES[idx / (n * n)],
        SYLLABLES[(idx / n) % n],
        SYLLABLES[idx % n]
    )
}

fn category_name(i: usize) -> String {
    match CATEGORY_WORDS.get(i) {
        Some(w) => (*w).to_string(),
        None => format!(
            "{}{}{}{}",
            SYLLABLES[(i * 7) % 12],
            SYLLABLES[(i * 5 + 1) % 12],
            SYLLABLES[(i * 3 + 2) % 12],
            SYLLABLES[i % 12]
        ),
    }
}

/// The generated world: entities, names, vocabulary, and the question bank
/// as token sequences.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub entities: Vec<Entity>,
    pub vocab: Vocab,
    pub instance_names: Vec<String>,
    pub breed_names: Vec<String>,
    pub category_names: Vec<String>,
    question_forms: Vec<Vec<TokenSequence>>,
}

impl World {
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn question_form(&self, kind: QuestionKind, idx: usize) -> &TokenSequence {
        &self.question_forms[kind_index(kind)][idx]
    }

    pub fn n_forms(&self, kind: QuestionKind) -> usize {
        self.question_forms[kind_index(kind)].len()
    }

    pub fn answer_text(&self, entity_id: usize, kind: QuestionKind) -> &str {
        let e = &self.entities[entity_id];
        match kind {
            QuestionKind::InstanceName => &self.instance_names[e.id],
            QuestionKind::BreedName => &self.breed_names[e.breed],
            QuestionKind::CategoryName => &self.category_names[e.category],
        }
    }

    pub fn answer_tokens(&self, entity_id: usize, kind: QuestionKind) -> TokenSequence {
        let tok = self
            .vocab
            .token(self.answer_text(entity_id, kind))
            .expect("answer names are in the vocabulary by construction");
        vec![tok]
    }

    /// Entities sharing the edited entity's scope node.
    pub fn in_scope_entities(&self, entity_id: usize, kind: QuestionKind) -> Vec<usize> {
        let e = &self.entities[entity_id];
        self.entities
            .iter()
            .filter(|o| match kind {
                QuestionKind::InstanceName => o.id == e.id,
                QuestionKind::BreedName => o.breed == e.breed,
                QuestionKind::CategoryName => o.category == e.category,
            })
            .map(|o| o.id)
            .collect()
    }

    /// Fresh image: entity mean plus instance-scale Gaussian noise, fully
    /// determined by the noise seed.
    pub fn sample_image(&self, entity_id: usize, noise_seed: u64) -> ImageFeature {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let e = &self.entities[entity_id];
        let noise = self.config.sigma_instance;
        ImageFeature(
            e.mean
                .iter()
                .map(|m| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + z * noise
                })
                .collect(),
        )
    }
}

fn kind_index(kind: QuestionKind) -> usize {
    match kind {
        QuestionKind::InstanceName => 0,
        QuestionKind::BreedName => 1,
        QuestionKind::CategoryName => 2,
    }
}

pub fn kind_of_scope(scope: EditScope) -> QuestionKind {
    match scope {
        EditScope::Instance => QuestionKind::InstanceName,
        EditScope::Breed => QuestionKind::BreedName,
        EditScope::Category => QuestionKind::CategoryName,
    }
}

/// Pretraining data split.
#[derive(Debug, Clone)]
pub struct PretrainData {
    pub train: Vec<PretrainSample>,
    pub holdout: Vec<PretrainSample>,
}

const STREAM_MEANS: u64 = 1;
const STREAM_PRETRAIN: u64 = 2;
const STREAM_HOLDOUT: u64 = 3;

/// Builds the world and its pretraining set. Same config, same world, down
/// to the last bit.
pub fn generate_world(config: &WorldConfig) -> Result<(World, PretrainData)> {
    config.validate()?;

    // Names first, then the vocabulary they live in.
    let n_entities = config.n_entities();
    let instance_names: Vec<String> = (0..n_entities).map(two_syllable_name).collect();
    let breed_names: Vec<String> = (0..config.n_breeds()).map(three_syllable_name).collect();
    let category_names: Vec<String> = (0..config.n_categories).map(category_name).collect();

    let mut words = vec!["<pad>".to_string(), "<bos>".to_string(), "<eos>".to_string()];
    for form in INSTANCE_FORMS.iter().chain(&BREED_FORMS).chain(&CATEGORY_FORMS) {
        for w in form.split_whitespace() {
            if !words.iter().any(|x| x == w) {
                words.push(w.to_string());
            }
        }
    }
    words.extend(instance_names.iter().cloned());
    words.extend(breed_names.iter().cloned());
    words.extend(category_names.iter().cloned());
    if words.len() > config.vocab_size {
        return Err(WorldError::VocabOverflow {
            needed: words.len(),
            budget: config.vocab_size,
        });
    }
    let vocab = Vocab::build(words)?;

    let question_forms: Vec<Vec<TokenSequence>> = [INSTANCE_FORMS, BREED_FORMS, CATEGORY_FORMS]
        .iter()
        .map(|forms| forms.iter().map(|f| vocab.tokenize(f)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;

    // Hierarchical means: category center + breed offset + instance offset.
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(config.seed, STREAM_MEANS));
    let gauss = |scale: f64, d: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * scale
            })
            .collect()
    };
    let mut entities = Vec::with_capacity(n_entities);
    let mut id = 0usize;
    for c in 0..config.n_categories {
        let center = gauss(config.sigma_category, config.d_img, &mut rng);
        for b in 0..config.breeds_per_category {
            let breed_offset = gauss(config.sigma_breed, config.d_img, &mut rng);
            for i in 0..config.instances_per_breed {
                let inst_offset = gauss(config.sigma_instance, config.d_img, &mut rng);
                let mean: Vec<f64> = (0..config.d_img)
                    .map(|j| center[j] + breed_offset[j] + inst_offset[j])
                    .collect();
                entities.push(Entity {
                    id,
                    category: c,
                    breed: c * config.breeds_per_category + b,
                    instance: i,
                    mean,
                });
                id += 1;
            }
        }
    }

    let world = World {
        config: config.clone(),
        entities,
        vocab,
        instance_names,
        breed_names,
        category_names,
        question_forms,
    };

    let train = build_samples(
        &world,
        world.config.pretrain_samples_per_entity,
        &QUESTION_KINDS,
        subseed(config.seed, STREAM_PRETRAIN),
    );
    let holdout = build_samples(
        &world,
        world.config.holdout_samples_per_entity,
        &QUESTION_KINDS,
        subseed(config.seed, STREAM_HOLDOUT),
    );
    Ok((world, PretrainData { train, holdout }))
}

/// Per entity: cycle through `kinds` and, within a kind, cycle through the
/// surface forms (staggered by entity id so short runs still cover every
/// form globally). Seeing every form next to every entity is what makes
/// same-kind phrasings land close in the model's hidden space later;
/// leaving coverage to chance measurably hurts held-out accuracy.
fn build_samples(
    world: &World,
    per_entity: usize,
    kinds: &[QuestionKind],
    seed: u64,
) -> Vec<PretrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(world.n_entities() * per_entity);
    for e in 0..world.n_entities() {
        let mut kind_counts = [0usize; QUESTION_KINDS.len()];
        for k in 0..per_entity {
            let kind = kinds[k % kinds.len()];
            let seen = &mut kind_counts[kind as usize];
            let form = (*seen + e) % world.n_forms(kind);
            *seen += 1;
            let image = world.sample_image(e, rng.gen::<u64>());
            out.push(PretrainSample {
                image,
                prompt: world.question_form(kind, form).clone(),
                answer: world.answer_tokens(e, kind),
            });
        }
    }
    out
}

// ---- world file ----

const WORLD_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WorldHeader {
    format_version: u32,
    kind: String,
    world_config: WorldConfig,
    seed: u64,
}

/// Header line plus one entity per line. The world is a pure function of
/// its config, so the entity lines are a readable inventory that `read`
/// verifies against a regeneration.
pub fn write_world(world: &World, path: &Path) -> Result<()> {
    let header = WorldHeader {
        format_version: WORLD_FORMAT_VERSION,
        kind: "world".to_string(),
        world_config: world.config.clone(),
        seed: world.config.seed,
    };
    let mut out = serde_json::to_string(&header)
        .map_err(|e| WorldError::Config(e.to_string()))?;
    out.push('\n');
    for e in &world.entities {
        out.push_str(&serde_json::to_string(e).map_err(|er| WorldError::Config(er.to_string()))?);
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_world(path: &Path) -> Result<(World, PretrainData)> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| WorldError::Format {
        path: display.clone(),
        line: 1,
        msg: "empty file".to_string(),
    })?;
    let header: WorldHeader = serde_json::from_str(first).map_err(|e| WorldError::Format {
        path: display.clone(),
        line: 1,
        msg: e.to_string(),
    })?;
    if header.kind != "world" || header.format_version != WORLD_FORMAT_VERSION {
        return Err(WorldError::Format {
            path: display,
            line: 1,
            msg: format!(
                "expected a version {WORLD_FORMAT_VERSION} world file, found kind `{}` version {}",
                header.kind, header.format_version
            ),
        });
    }

    let (world, data) = generate_world(&header.world_config)?;
    let mut count = 0usize;
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let entity: Entity = serde_json::from_str(line).map_err(|e| WorldError::Format {
            path: display.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let expected = world.entities.get(count).ok_or_else(|| WorldError::Format {
            path: display.clone(),
            line: i + 1,
            msg: "more entities than the config implies".to_string(),
        })?;
        if &entity != expected {
            return Err(WorldError::Format {
                path: display.clone(),
                line: i + 1,
                msg: format!("entity {} does not match its regeneration", entity.id),
            });
        }
        count += 1;
    }
    if count != world.n_entities() {
        return Err(WorldError::Format {
            path: display,
            line: count + 1,
            msg: format!(
                "file lists {count} entities, config implies {}",
                world.n_entities()
            ),
        });
    }
    Ok((world, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_world_has_expected_shape() {
        let (world, data) = generate_world(&WorldConfig::default()).unwrap();
        assert_eq!(world.n_entities(), 72);
        assert_eq!(world.breed_names.len(), 18);
        assert_eq!(world.category_names.len(), 6);
        assert!(world.vocab.len() <= 128, "vocab size {}", world.vocab.len());
        assert_eq!(data.train.len(), 72 * 96);
        assert_eq!(data.holdout.len(), 72 * 3);
        // Every entity answered at least 20 times in training.
        assert!(world.config.pretrain_samples_per_entity >= 20);
        // Form cycling: the first entity's first 36 samples cover every
        // (kind, form) pair.
        let first: std::collections::BTreeSet<&[TokenId]> = data.train[..36]
            .iter()
            .map(|s| s.prompt.as_slice())
            .collect();
        assert_eq!(first.len(), 36);
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, da) = generate_world(&WorldConfig::default()).unwrap();
        let (b, db) = generate_world(&WorldConfig::default()).unwrap();
        assert_eq!(a.entities, b.entities);
        for (x, y) in da.train.iter().zip(&db.train) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.prompt, y.prompt);
            assert_eq!(x.answer, y.answer);
        }
        let _ = db.holdout;
    }

    #[test]
    fn names_are_distinct_and_in_vocab() {
        let (world, _) = generate_world(&WorldConfig::default()).unwrap();
        let mut all: Vec<&String> = world
            .instance_names
            .iter()
            .chain(&world.breed_names)
            .chain(&world.category_names)
            .collect();
        let total = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), total, "name collision");
        for name in all {
            assert!(world.vocab.token(name).is_some());
        }
    }

    #[test]
    fn question_forms_tokenize_and_render_back() {
        let (world, _) = generate_world(&WorldConfig::default()).unwrap();
        for kind in QUESTION_KINDS {
            assert_eq!(world.n_forms(kind), FORMS_PER_KIND);
            for i in 0..FORMS_PER_KIND {
                let toks = world.question_form(kind, i);
                let text = world.vocab.render(toks);
                assert!(!text.contains("<?"));
                assert_eq!(world.vocab.tokenize(&text).unwrap(), *toks);
            }
        }
    }

    #[test]
    fn sample_image_is_seed_deterministic_and_zero_noise_hits_the_mean() {
        let mut cfg = WorldConfig::default();
        let (world, _) = generate_world(&cfg).unwrap();
        let a = world.sample_image(3, 42);
        let b = world.sample_image(3, 42);
        assert_eq!(a, b);
        let c = world.sample_image(3, 43);
        assert_ne!(a, c);

        cfg.sigma_instance = 0.0;
        let (quiet, _) = generate_world(&cfg).unwrap();
        let img = quiet.sample_image(5, 7);
        assert_eq!(img.0, quiet.entities[5].mean);
    }

    #[test]
    fn hierarchy_orders_mean_distances() {
        let (world, _) = generate_world(&WorldConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = |a: &ImageFeature, b: &ImageFeature| -> f64 {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let mut acc = [0.0f64; 4];
        let mut cnt = [0usize; 4];
        for _ in 0..1000 {
            let i = rng.gen_range(0..world.n_entities());
            let j = rng.gen_range(0..world.n_entities());
            let a = world.sample_image(i, rng.gen());
            let b = world.sample_image(j, rng.gen());
            let (ei, ej) = (&world.entities[i], &world.entities[j]);
            let bucket = if i == j {
                0
            } else if ei.breed == ej.breed {
                1
            } else if ei.category == ej.category {
                2
            } else {
                3
            };
            acc[bucket] += dist(&a, &b);
            cnt[bucket] += 1;
        }
        let means: Vec<f64> = (0..4).map(|k| acc[k] / cnt[k].max(1) as f64).collect();
        assert!(
            means[0] < means[1] && means[1] < means[2] && means[2] < means[3],
            "distance ladder {means:?}"
        );
    }

    #[test]
    fn vocab_overflow_is_a_config_error() {
        let cfg = WorldConfig {
            vocab_size: 64,
            ..WorldConfig::default()
        };
        assert!(matches!(
            generate_world(&cfg).unwrap_err(),
            WorldError::VocabOverflow { .. }
        ));
    }

    #[test]
    fn world_file_round_trips_and_flags_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("world.jsonl");
        let (world, _) = generate_world(&WorldConfig::default()).unwrap();
        write_world(&world, &p).unwrap();
        let (loaded, _) = read_world(&p).unwrap();
        assert_eq!(loaded.entities, world.entities);

        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let doctored = lines[3].replace("\"id\":2", "\"id\":77");
        lines[3] = &doctored;
        fs::write(&p, lines.join("\n")).unwrap();
        let err = read_world(&p).unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }
}
