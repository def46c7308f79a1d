//! Edit-case generator. Each case bundles one counterfactual edit with the
//! probe sets needed to score it afterwards: rephrasings of the question,
//! fresh in-scope images, and nearby out-of-scope entities that must keep
//! their old behavior.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{ImageFeature, TokenSequence};
use crate::subseed;

use super::{
    generate_world, kind_of_scope, QuestionKind, Result, World, WorldConfig, WorldError,
};

pub const N_REPHRASE_PROBES: usize = 10;
pub const N_IMAGE_PROBES: usize = 10;
pub const N_LOCALITY_PROBES: usize = 5;

/// How far an edit is meant to reach in the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditScope {
    Instance,
    Breed,
    Category,
}

/// Fractions of cases per scope; normalized internally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScopeMix {
    pub instance: f64,
    pub breed: f64,
    pub category: f64,
}

impl Default for ScopeMix {
    fn default() -> Self {
        ScopeMix {
            instance: 0.5,
            breed: 0.3,
            category: 0.2,
        }
    }
}

impl ScopeMix {
    fn validate(&self) -> Result<()> {
        let parts = [self.instance, self.breed, self.category];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || parts.iter().sum::<f64>() <= 0.0 {
            return Err(WorldError::Config(
                "scope mix fractions must be non-negative and not all zero".to_string(),
            ));
        }
        Ok(())
    }
}

/// An out-of-scope neighbor asked the edited question. Its answer must not
/// move when the edit is in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityProbe {
    pub entity_id: usize,
    pub image: ImageFeature,
    pub prompt: TokenSequence,
    pub true_answer: TokenSequence,
    pub true_answer_text: String,
}

/// A fresh image of an in-scope entity; it should pick up the new answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageProbe {
    pub entity_id: usize,
    pub image: ImageFeature,
}

/// An image and question with nothing in common with the edit, used as the
/// counterexample pair when anchoring an edit against unrelated inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnrelatedSample {
    pub entity_id: usize,
    pub image: ImageFeature,
    pub prompt: TokenSequence,
    pub prompt_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditCase {
    pub case_id: u64,
    pub entity_id: usize,
    pub scope: EditScope,
    pub image: ImageFeature,
    pub prompt: TokenSequence,
    pub prompt_text: String,
    pub y_old: TokenSequence,
    pub y_old_text: String,
    pub y_new: TokenSequence,
    pub y_new_text: String,
    /// Held out of the probe pool; belongs to the edit procedure itself.
    pub reserved_rephrase: TokenSequence,
    pub reserved_rephrase_text: String,
    pub rephrase_probes: Vec<TokenSequence>,
    pub image_probes: Vec<ImageProbe>,
    pub locality_probes: Vec<LocalityProbe>,
    pub unrelated: UnrelatedSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditSuite {
    pub world_config: WorldConfig,
    pub seed: u64,
    pub scope_mix: ScopeMix,
    pub cases: Vec<EditCase>,
}

const STREAM_SUITE: u64 = 4;

/// Largest-remainder allocation of `n` cases over the three scopes, ties
/// resolved instance > breed > category.
fn allocate_scopes(n: usize, mix: &ScopeMix) -> Vec<EditScope> {
    let total = mix.instance + mix.breed + mix.category;
    let raw = [
        (EditScope::Instance, mix.instance / total * n as f64),
        (EditScope::Breed, mix.breed / total * n as f64),
        (EditScope::Category, mix.category / total * n as f64),
    ];
    let mut counts: Vec<(EditScope, usize, f64)> = raw
        .iter()
        .map(|&(s, r)| (s, r.floor() as usize, r - r.floor()))
        .collect();
    let mut assigned: usize = counts.iter().map(|c| c.1).sum();
    while assigned < n {
        let best = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .2.partial_cmp(&b.1 .2).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        counts[best].1 += 1;
        counts[best].2 = -1.0;
        assigned += 1;
    }
    let mut out = Vec::with_capacity(n);
    for (scope, c, _) in counts {
        out.extend(std::iter::repeat(scope).take(c));
    }
    out
}

fn mean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Out-of-scope entities eligible as locality probes, nearest first.
/// Instance and breed scopes stay inside the edited entity's category;
/// category scope uses the single nearest other category, which keeps the
/// replacement-answer pool from draining.
fn locality_candidates(world: &World, entity_id: usize, scope: EditScope) -> Vec<usize> {
    let e = &world.entities[entity_id];
    let mut cand: Vec<usize> = match scope {
        EditScope::Instance => world
            .entities
            .iter()
            .filter(|o| o.category == e.category && o.id != e.id)
            .map(|o| o.id)
            .collect(),
        EditScope::Breed => world
            .entities
            .iter()
            .filter(|o| o.category == e.category && o.breed != e.breed)
            .map(|o| o.id)
            .collect(),
        EditScope::Category => {
            let nearest_cat = (0..world.config.n_categories)
                .filter(|&c| c != e.category)
                .min_by(|&a, &b| {
                    let da = category_center_distance(world, a, &e.mean);
                    let db = category_center_distance(world, b, &e.mean);
                    da.partial_cmp(&db).unwrap()
                });
            match nearest_cat {
                Some(c) => world
                    .entities
                    .iter()
                    .filter(|o| o.category == c)
                    .map(|o| o.id)
                    .collect(),
                None => Vec::new(),
            }
        }
    };
    cand.sort_by(|&a, &b| {
        let da = mean_distance(&world.entities[a].mean, &e.mean);
        let db = mean_distance(&world.entities[b].mean, &e.mean);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    cand
}

fn category_center_distance(world: &World, category: usize, point: &[f64]) -> f64 {
    let members: Vec<&Vec<f64>> = world
        .entities
        .iter()
        .filter(|o| o.category == category)
        .map(|o| &o.mean)
        .collect();
    let d = world.config.d_img;
    let mut center = vec![0.0; d];
    for m in &members {
        for j in 0..d {
            center[j] += m[j];
        }
    }
    for c in &mut center {
        *c /= members.len() as f64;
    }
    mean_distance(&center, point)
}

/// Replacement answers for the edit: same-kind names minus the entity's own
/// and anything a locality probe must keep answering.
fn replacement_pool<'a>(
    world: &'a World,
    kind: QuestionKind,
    own: &str,
    protected: &[String],
) -> Vec<&'a String> {
    let names: &[String] = match kind {
        QuestionKind::InstanceName => &world.instance_names,
        QuestionKind::BreedName => &world.breed_names,
        QuestionKind::CategoryName => &world.category_names,
    };
    names
        .iter()
        .filter(|n| n.as_str() != own && !protected.iter().any(|p| p == *n))
        .collect()
}

/// Draws `n_cases` edits over distinct entities. One rng stream drives
/// every choice in a fixed order, so a (world, n, seed, mix) tuple pins the
/// suite down exactly.
pub fn generate_edit_suite(
    world: &World,
    n_cases: usize,
    seed: u64,
    mix: &ScopeMix,
) -> Result<EditSuite> {
    mix.validate()?;
    if n_cases == 0 {
        return Err(WorldError::Config("a suite needs at least one case".to_string()));
    }
    if n_cases > world.n_entities() {
        return Err(WorldError::Config(format!(
            "{n_cases} cases requested but the world has only {} entities to edit",
            world.n_entities()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, STREAM_SUITE));

    let mut entity_ids: Vec<usize> = (0..world.n_entities()).collect();
    entity_ids.shuffle(&mut rng);
    entity_ids.truncate(n_cases);

    let mut scopes = allocate_scopes(n_cases, mix);
    scopes.shuffle(&mut rng);

    let n_templates = world.config.n_question_templates;
    let mut cases = Vec::with_capacity(n_cases);
    for (case_idx, (&entity_id, &scope)) in entity_ids.iter().zip(&scopes).enumerate() {
        let case_id = case_idx as u64;
        let kind = kind_of_scope(scope);
        let n_forms = world.n_forms(kind);

        let prompt_form = rng.gen_range(0..n_templates.min(n_forms));
        let reserved_form = {
            let r = rng.gen_range(0..n_forms - 1);
            if r >= prompt_form {
                r + 1
            } else {
                r
            }
        };
        let prompt = world.question_form(kind, prompt_form).clone();
        let reserved = world.question_form(kind, reserved_form).clone();
        let rephrase_probes: Vec<TokenSequence> = (0..n_forms)
            .filter(|&f| f != prompt_form && f != reserved_form)
            .map(|f| world.question_form(kind, f).clone())
            .collect();
        debug_assert_eq!(rephrase_probes.len(), N_REPHRASE_PROBES);

        let image = world.sample_image(entity_id, rng.gen());

        let in_scope = world.in_scope_entities(entity_id, kind);
        let image_probes: Vec<ImageProbe> = (0..N_IMAGE_PROBES)
            .map(|p| {
                let target = in_scope[p % in_scope.len()];
                ImageProbe {
                    entity_id: target,
                    image: world.sample_image(target, rng.gen()),
                }
            })
            .collect();

        let candidates = locality_candidates(world, entity_id, scope);
        if candidates.len() < N_LOCALITY_PROBES {
            return Err(WorldError::InsufficientSiblings {
                case: case_id,
                available: candidates.len(),
                needed: N_LOCALITY_PROBES,
            });
        }
        let locality_probes: Vec<LocalityProbe> = candidates[..N_LOCALITY_PROBES]
            .iter()
            .map(|&other| LocalityProbe {
                entity_id: other,
                image: world.sample_image(other, rng.gen()),
                prompt: prompt.clone(),
                true_answer: world.answer_tokens(other, kind),
                true_answer_text: world.answer_text(other, kind).to_string(),
            })
            .collect();

        let y_old_text = world.answer_text(entity_id, kind).to_string();
        let protected: Vec<String> = locality_probes
            .iter()
            .map(|p| p.true_answer_text.clone())
            .collect();
        let pool = replacement_pool(world, kind, &y_old_text, &protected);
        if pool.is_empty() {
            return Err(WorldError::Config(format!(
                "case {case_id}: no replacement answer available for {kind} scope"
            )));
        }
        let y_new_text = pool[rng.gen_range(0..pool.len())].clone();
        let y_new = vec![world
            .vocab
            .token(&y_new_text)
            .expect("replacement names come from the vocabulary")];

        let unrelated = {
            let other_cat_entities: Vec<usize> = world
                .entities
                .iter()
                .filter(|o| o.category != world.entities[entity_id].category)
                .map(|o| o.id)
                .collect();
            // Single-category worlds fall back to any other entity.
            let pool = if other_cat_entities.is_empty() {
                (0..world.n_entities()).filter(|&o| o != entity_id).collect()
            } else {
                other_cat_entities
            };
            let target = pool[rng.gen_range(0..pool.len())];
            let u_kind = super::QUESTION_KINDS[rng.gen_range(0..super::QUESTION_KINDS.len())];
            let u_form = rng.gen_range(0..world.n_forms(u_kind));
            let u_prompt = world.question_form(u_kind, u_form).clone();
            UnrelatedSample {
                entity_id: target,
                image: world.sample_image(target, rng.gen()),
                prompt_text: world.vocab.render(&u_prompt),
                prompt: u_prompt,
            }
        };

        cases.push(EditCase {
            case_id,
            entity_id,
            scope,
            image,
            prompt_text: world.vocab.render(&prompt),
            prompt,
            y_old: world.answer_tokens(entity_id, kind),
            y_old_text,
            y_new,
            y_new_text,
            reserved_rephrase_text: world.vocab.render(&reserved),
            reserved_rephrase: reserved,
            rephrase_probes,
            image_probes,
            locality_probes,
            unrelated,
        });
    }

    Ok(EditSuite {
        world_config: world.config.clone(),
        seed,
        scope_mix: *mix,
        cases,
    })
}

// ---- suite file ----

const SUITE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SuiteHeader {
    format_version: u32,
    kind: String,
    world_config: WorldConfig,
    seed: u64,
    scope_mix: ScopeMix,
    n_cases: usize,
}

pub fn write_suite(suite: &EditSuite, path: &Path) -> Result<()> {
    let header = SuiteHeader {
        format_version: SUITE_FORMAT_VERSION,
        kind: "edit-suite".to_string(),
        world_config: suite.world_config.clone(),
        seed: suite.seed,
        scope_mix: suite.scope_mix,
        n_cases: suite.cases.len(),
    };
    let mut out =
        serde_json::to_string(&header).map_err(|e| WorldError::Config(e.to_string()))?;
    out.push('\n');
    for case in &suite.cases {
        out.push_str(
            &serde_json::to_string(case).map_err(|e| WorldError::Config(e.to_string()))?,
        );
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Parses and validates a suite. Cases are checked against a regenerated
/// world: probe counts, token ranges, and image dimensions all have to
/// line up, and violations name the offending line.
pub fn read_suite(path: &Path) -> Result<EditSuite> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| WorldError::Format {
        path: display.clone(),
        line: 1,
        msg: "empty file".to_string(),
    })?;
    let header: SuiteHeader = serde_json::from_str(first).map_err(|e| WorldError::Format {
        path: display.clone(),
        line: 1,
        msg: e.to_string(),
    })?;
    if header.kind != "edit-suite" || header.format_version != SUITE_FORMAT_VERSION {
        return Err(WorldError::Format {
            path: display,
            line: 1,
            msg: format!(
                "expected a version {SUITE_FORMAT_VERSION} edit suite, found kind `{}` version {}",
                header.kind, header.format_version
            ),
        });
    }

    let (world, _) = generate_world(&header.world_config)?;
    let vocab_len = world.vocab.len() as u32;
    let mut cases = Vec::with_capacity(header.n_cases);
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fail = |msg: String| WorldError::Format {
            path: display.clone(),
            line: lineno,
            msg,
        };
        let case: EditCase =
            serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        if case.entity_id >= world.n_entities() {
            return Err(fail(format!("entity {} out of range", case.entity_id)));
        }
        if case.image.0.len() != world.config.d_img {
            return Err(fail(format!(
                "image has {} dims, world uses {}",
                case.image.0.len(),
                world.config.d_img
            )));
        }
        if case.rephrase_probes.len() != N_REPHRASE_PROBES
            || case.image_probes.len() != N_IMAGE_PROBES
            || case.locality_probes.len() != N_LOCALITY_PROBES
        {
            return Err(fail(format!(
                "probe counts {}/{}/{} differ from the required {}/{}/{}",
                case.rephrase_probes.len(),
                case.image_probes.len(),
                case.locality_probes.len(),
                N_REPHRASE_PROBES,
                N_IMAGE_PROBES,
                N_LOCALITY_PROBES
            )));
        }
        let token_streams = case
            .prompt
            .iter()
            .chain(&case.y_old)
            .chain(&case.y_new)
            .chain(&case.reserved_rephrase)
            .chain(case.rephrase_probes.iter().flatten());
        for &t in token_streams {
            if t >= vocab_len {
                return Err(fail(format!("token {t} outside the vocabulary")));
            }
        }
        cases.push(case);
    }
    if cases.len() != header.n_cases {
        return Err(WorldError::Format {
            path: display,
            line: cases.len() + 1,
            msg: format!(
                "header promises {} cases, file holds {}",
                header.n_cases,
                cases.len()
            ),
        });
    }
    Ok(EditSuite {
        world_config: header.world_config,
        seed: header.seed,
        scope_mix: header.scope_mix,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_world() -> World {
        generate_world(&WorldConfig::default()).unwrap().0
    }

    #[test]
    fn suite_has_exact_scope_allocation_and_probe_counts() {
        let world = default_world();
        let suite = generate_edit_suite(&world, 30, 7, &ScopeMix::default()).unwrap();
        assert_eq!(suite.cases.len(), 30);
        let count = |s: EditScope| suite.cases.iter().filter(|c| c.scope == s).count();
        assert_eq!(count(EditScope::Instance), 15);
        assert_eq!(count(EditScope::Breed), 9);
        assert_eq!(count(EditScope::Category), 6);
        for (i, case) in suite.cases.iter().enumerate() {
            assert_eq!(case.case_id, i as u64);
            assert_eq!(case.rephrase_probes.len(), N_REPHRASE_PROBES);
            assert_eq!(case.image_probes.len(), N_IMAGE_PROBES);
            assert_eq!(case.locality_probes.len(), N_LOCALITY_PROBES);
            assert_ne!(case.prompt, case.reserved_rephrase);
            assert!(!case.rephrase_probes.contains(&case.prompt));
            assert!(!case.rephrase_probes.contains(&case.reserved_rephrase));
        }
        let mut edited: Vec<usize> = suite.cases.iter().map(|c| c.entity_id).collect();
        edited.sort();
        edited.dedup();
        assert_eq!(edited.len(), 30, "entities repeat across cases");
    }

    #[test]
    fn generation_is_deterministic() {
        let world = default_world();
        let a = generate_edit_suite(&world, 20, 3, &ScopeMix::default()).unwrap();
        let b = generate_edit_suite(&world, 20, 3, &ScopeMix::default()).unwrap();
        assert_eq!(a.cases, b.cases);
        let c = generate_edit_suite(&world, 20, 4, &ScopeMix::default()).unwrap();
        assert_ne!(a.cases, c.cases);
    }

    #[test]
    fn probes_respect_scope_boundaries() {
        let world = default_world();
        let suite = generate_edit_suite(&world, 30, 11, &ScopeMix::default()).unwrap();
        for case in &suite.cases {
            let kind = kind_of_scope(case.scope);
            let in_scope = world.in_scope_entities(case.entity_id, kind);
            for probe in &case.image_probes {
                assert!(in_scope.contains(&probe.entity_id), "image probe leaked scope");
            }
            for probe in &case.locality_probes {
                assert!(
                    !in_scope.contains(&probe.entity_id),
                    "locality probe inside scope"
                );
                assert_eq!(probe.prompt, case.prompt);
                assert_eq!(
                    probe.true_answer,
                    world.answer_tokens(probe.entity_id, kind)
                );
                assert_ne!(probe.true_answer_text, case.y_new_text);
            }
            assert_ne!(case.y_new_text, case.y_old_text);
            assert_eq!(case.y_old, world.answer_tokens(case.entity_id, kind));
            assert_ne!(
                world.entities[case.unrelated.entity_id].category,
                world.entities[case.entity_id].category
            );
        }
    }

    #[test]
    fn rephrases_come_from_the_same_question_kind() {
        let world = default_world();
        let suite = generate_edit_suite(&world, 30, 2, &ScopeMix::default()).unwrap();
        for case in &suite.cases {
            let kind = kind_of_scope(case.scope);
            let bank: Vec<&TokenSequence> =
                (0..world.n_forms(kind)).map(|f| world.question_form(kind, f)).collect();
            assert!(bank.contains(&&case.prompt));
            assert!(bank.contains(&&case.reserved_rephrase));
            for r in &case.rephrase_probes {
                assert!(bank.contains(&r));
            }
        }
    }

    #[test]
    fn prompt_uses_only_the_template_budget() {
        let world = default_world();
        let suite = generate_edit_suite(&world, 50, 9, &ScopeMix::default()).unwrap();
        for case in &suite.cases {
            let kind = kind_of_scope(case.scope);
            let budget: Vec<&TokenSequence> = (0..world.config.n_question_templates)
                .map(|f| world.question_form(kind, f))
                .collect();
            assert!(budget.contains(&&case.prompt), "prompt outside template budget");
        }
    }

    #[test]
    fn suite_file_round_trips_and_flags_damage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("suite.jsonl");
        let world = default_world();
        let suite = generate_edit_suite(&world, 10, 5, &ScopeMix::default()).unwrap();
        write_suite(&suite, &p).unwrap();
        let loaded = read_suite(&p).unwrap();
        assert_eq!(loaded, suite);

        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        lines[4] = lines[4].replace("\"rephrase_probes\":[[", "\"rephrase_probes\":[");
        fs::write(&p, lines.join("\n")).unwrap();
        let err = read_suite(&p).unwrap_err();
        assert!(err.to_string().contains("line 5"), "{err}");

        let suite_short = {
            let mut s = suite.clone();
            s.cases.pop();
            s
        };
        // A header that promises more cases than the body holds.
        write_suite(&suite_short, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let doctored = text.replacen("\"n_cases\":9", "\"n_cases\":10", 1);
        assert_ne!(doctored, text);
        fs::write(&p, doctored).unwrap();
        assert!(read_suite(&p).is_err());
    }

    #[test]
    fn oversized_requests_are_rejected() {
        let world = default_world();
        assert!(generate_edit_suite(&world, 73, 0, &ScopeMix::default()).is_err());
        assert!(generate_edit_suite(&world, 0, 0, &ScopeMix::default()).is_err());
    }
}
