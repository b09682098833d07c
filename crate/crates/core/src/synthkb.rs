//! Seeded fictional-knowledge generator.
//!
//! Each item describes an organisation and the people and places around it
//! through eight facts. From those facts the generator derives a passage,
//! nine paraphrases (frame substitution, same facts and same object spans),
//! and cloze probes at three depths:
//!
//! - memorization: a passage sentence split before its object.
//! - semantic: the same fact through a different frame, same target span.
//! - composition: a two-hop question whose answer needs two passage facts.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grammar::{self, NameGenerator, NamePool, Relation, COMPOSITIONS, ORG_KINDS};
use crate::seed;
use crate::{Depth, Scenario};

/// Schema tag written into serialized knowledge sets.
pub const SCHEMA: &str = "synthkb/1";

/// Paraphrases generated per item.
pub const N_PARAPHRASES: usize = 9;

/// Maximum probes per depth the grammar can supply.
pub const MAX_PROBES_PER_DEPTH: usize = 5;

/// Fresh name tokens consumed per item (two orgs, three places, four
/// two-token people).
const NAME_TOKENS_PER_ITEM: usize = 13;

/// Default content-word overlap ceiling for composition probes.
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("need at least 3 items (one per scenario), got {0}")]
    TooFewItems(usize),
    #[error("probes per depth must be in 1..={max}, got {got}")]
    ProbeCount { got: usize, max: usize },
    #[error("name pool exhausted: {requested} name tokens requested, at most {available} available")]
    Capacity { requested: usize, available: usize },
    #[error("paraphrase index {0} out of range 1..=9")]
    VariantIndex(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Organisation,
    Person,
    Place,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub kind: EntityKind,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub id: String,
    pub knowledge_id: String,
    pub depth: Depth,
    pub input_text: String,
    pub target_span: String,
    /// Byte offset of the target span within [`Probe::sentence`].
    pub target_start: usize,
    /// Exclusive end offset of the target span within [`Probe::sentence`].
    pub target_end: usize,
}

impl Probe {
    fn new(id: String, knowledge_id: &str, depth: Depth, sentence: &str, start: usize) -> Self {
        Probe {
            id,
            knowledge_id: knowledge_id.to_string(),
            depth,
            input_text: sentence[..start].to_string(),
            target_span: sentence[start..].to_string(),
            target_start: start,
            target_end: sentence.len(),
        }
    }

    /// Full probe sentence: input followed by target span.
    pub fn sentence(&self) -> String {
        let mut s = self.input_text.clone();
        s.push_str(&self.target_span);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedKnowledge {
    pub id: String,
    pub passage: String,
    pub paraphrases: Vec<String>,
    pub probes: Vec<Probe>,
    pub entity_roster: Vec<Entity>,
}

impl InjectedKnowledge {
    /// Text injected at variant `v`: 0 is the passage, 1..=9 the paraphrases.
    pub fn variant_text(&self, v: usize) -> Result<&str, SynthError> {
        if v == 0 {
            Ok(&self.passage)
        } else {
            paraphrase_variant(self, v)
        }
    }

    pub fn probes_at(&self, depth: Depth) -> impl Iterator<Item = &Probe> {
        self.probes.iter().filter(move |p| p.depth == depth)
    }

    /// Passage sentences without terminal periods.
    pub fn passage_sentences(&self) -> Vec<&str> {
        split_sentences(&self.passage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSet {
    pub seed: u64,
    pub items: Vec<InjectedKnowledge>,
    pub scenario_partition: BTreeMap<Scenario, Vec<String>>,
}

impl KnowledgeSet {
    pub fn get(&self, id: &str) -> Option<&InjectedKnowledge> {
        self.items.iter().find(|k| k.id == id)
    }

    pub fn scenario_of(&self, id: &str) -> Option<Scenario> {
        self.scenario_partition
            .iter()
            .find(|(_, ids)| ids.iter().any(|x| x == id))
            .map(|(s, _)| *s)
    }

    pub fn all_probes(&self) -> impl Iterator<Item = &Probe> {
        self.items.iter().flat_map(|k| k.probes.iter())
    }

    /// Every distinct word appearing in passages, paraphrases and probes.
    pub fn words(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for k in &self.items {
            for text in core::iter::once(&k.passage).chain(k.paraphrases.iter()) {
                out.extend(words_of(text).map(String::from));
            }
            for p in &k.probes {
                out.extend(words_of(&p.sentence()).map(String::from));
            }
        }
        out
    }

    /// Name tokens of every fictional entity in the set.
    pub fn entity_tokens(&self) -> BTreeSet<String> {
        self.items
            .iter()
            .flat_map(|k| k.entity_roster.iter())
            .flat_map(|e| e.name.split_whitespace())
            .filter(|w| !ORG_KINDS.contains(w))
            .map(String::from)
            .collect()
    }
}

fn words_of(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().map(|w| w.trim_end_matches('.'))
}

/// Splits `a. b. c.` into `["a", "b", "c"]`.
pub fn split_sentences(text: &str) -> Vec<&str> {
    text.split('.').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn join_sentences<S: AsRef<str>>(sentences: &[S]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(s.as_ref());
        out.push('.');
    }
    out
}

#[derive(Debug, Clone)]
struct Fact {
    relation: Relation,
    subject: String,
    object: String,
}

/// Facts of one item in passage order. Indices are referenced by
/// [`CHAINS`].
fn item_facts(x: &str, y: &str, places: &[String; 3], people: &[String; 4]) -> Vec<Fact> {
    let [l1, l2, l3] = places;
    let [p1, p2, p4, p5] = people;
    let f = |relation, subject: &str, object: &str| Fact {
        relation,
        subject: subject.to_string(),
        object: object.to_string(),
    };
    alloc::vec![
        f(Relation::FoundedBy, x, p1),
        f(Relation::BasedIn, x, l1),
        f(Relation::RivalOf, x, y),
        f(Relation::BornIn, p1, l2),
        f(Relation::StudiedUnder, p1, p5),
        f(Relation::GovernedBy, l1, p4),
        f(Relation::LedBy, y, p2),
        f(Relation::BasedIn, y, l3),
    ]
}

/// Fact index pairs realising each entry of [`COMPOSITIONS`].
const CHAINS: [(usize, usize); 5] = [(0, 3), (0, 4), (1, 5), (2, 6), (2, 7)];

/// Generates a deterministic knowledge set.
///
/// Items are split into three contiguous blocks for duplication, paraphrase
/// and once; any remainder goes to the earlier blocks.
pub fn generate_knowledge_set(
    seed: u64,
    n_items: usize,
    n_probes_per_depth: usize,
) -> Result<KnowledgeSet, SynthError> {
    if n_items < 3 {
        return Err(SynthError::TooFewItems(n_items));
    }
    if n_probes_per_depth == 0 || n_probes_per_depth > MAX_PROBES_PER_DEPTH {
        return Err(SynthError::ProbeCount { got: n_probes_per_depth, max: MAX_PROBES_PER_DEPTH });
    }
    let available = NamePool::Knowledge.capacity() / 2;
    let requested = n_items.saturating_mul(NAME_TOKENS_PER_ITEM);
    if requested > available {
        return Err(SynthError::Capacity { requested, available });
    }

    let mut names = NameGenerator::new(NamePool::Knowledge);
    let mut name_rng = seed::rng(seed::derive(seed, "synthkb.names"));
    let items: Vec<InjectedKnowledge> = (0..n_items)
        .map(|i| {
            let mut rng = seed::rng(seed::derive_indexed(seed, "synthkb.item", i as u64));
            build_item(i, n_probes_per_depth, &mut names, &mut name_rng, &mut rng)
        })
        .collect();

    let mut scenario_partition = BTreeMap::new();
    let base = n_items / 3;
    let extra = n_items % 3;
    let mut cursor = 0;
    for (si, scenario) in Scenario::ALL.iter().enumerate() {
        let len = base + usize::from(si < extra);
        let ids = items[cursor..cursor + len].iter().map(|k| k.id.clone()).collect();
        scenario_partition.insert(*scenario, ids);
        cursor += len;
    }
    Ok(KnowledgeSet { seed, items, scenario_partition })
}

fn build_item<R: Rng>(
    index: usize,
    n_probes: usize,
    names: &mut NameGenerator,
    name_rng: &mut R,
    rng: &mut R,
) -> InjectedKnowledge {
    let id = format!("k{index:03}");
    let org = |names: &mut NameGenerator, name_rng: &mut R, rng: &mut R| {
        let kind = ORG_KINDS[rng.random_range(0..ORG_KINDS.len())];
        format!("{} {kind}", names.fresh(name_rng))
    };
    let x = org(names, name_rng, rng);
    let y = org(names, name_rng, rng);
    let places: [String; 3] = core::array::from_fn(|_| names.fresh(name_rng));
    let people: [String; 4] = core::array::from_fn(|_| {
        let given = names.fresh(name_rng);
        let family = names.fresh(name_rng);
        format!("{given} {family}")
    });
    let facts = item_facts(&x, &y, &places, &people);

    let frames: Vec<usize> = facts.iter().map(|f| rng.random_range(0..f.relation.n_frames())).collect();
    let render_all = |frames: &[usize]| -> Vec<(String, usize)> {
        facts
            .iter()
            .zip(frames)
            .map(|(f, &fr)| grammar::render(f.relation, fr, &f.subject, &f.object))
            .collect()
    };
    let sentences = render_all(&frames);
    let passage = join_sentences(&sentences.iter().map(|(s, _)| s.as_str()).collect::<Vec<_>>());

    let mut paraphrases: Vec<String> = Vec::with_capacity(N_PARAPHRASES);
    while paraphrases.len() < N_PARAPHRASES {
        let alt: Vec<usize> = facts
            .iter()
            .zip(&frames)
            .map(|(f, &orig)| other_frame(rng, f.relation.n_frames(), orig))
            .collect();
        let text = join_sentences(&render_all(&alt).iter().map(|(s, _)| s.as_str()).collect::<Vec<_>>());
        if text != passage && !paraphrases.contains(&text) {
            paraphrases.push(text);
        }
    }

    let mut mem_facts: Vec<usize> = (0..facts.len()).collect();
    mem_facts.shuffle(rng);
    mem_facts.truncate(n_probes);
    mem_facts.sort_unstable();

    let mut probes = Vec::with_capacity(3 * n_probes);
    for (j, &fi) in mem_facts.iter().enumerate() {
        let (s, start) = &sentences[fi];
        probes.push(Probe::new(format!("{id}-mem-{j}"), &id, Depth::Memorization, s, *start));
    }
    for (j, &fi) in mem_facts.iter().enumerate() {
        let f = &facts[fi];
        let fr = other_frame(rng, f.relation.n_frames(), frames[fi]);
        let (s, start) = grammar::render(f.relation, fr, &f.subject, &f.object);
        probes.push(Probe::new(format!("{id}-sem-{j}"), &id, Depth::Semantic, &s, start));
    }
    let mut chains: Vec<usize> = (0..CHAINS.len()).collect();
    chains.shuffle(rng);
    chains.truncate(n_probes);
    chains.sort_unstable();
    for (j, &ci) in chains.iter().enumerate() {
        let (first, second) = CHAINS[ci];
        debug_assert_eq!(facts[first].relation, COMPOSITIONS[ci].first);
        debug_assert_eq!(facts[first].object, facts[second].subject);
        let (s, start) = grammar::render_composition(&COMPOSITIONS[ci], &x, &facts[second].object);
        probes.push(Probe::new(format!("{id}-comp-{j}"), &id, Depth::Composition, &s, start));
    }

    InjectedKnowledge { id, passage, paraphrases, probes, entity_roster: roster(&x, &y, &places, &people, &facts) }
}

fn other_frame<R: Rng>(rng: &mut R, n: usize, avoid: usize) -> usize {
    let k = rng.random_range(0..n - 1);
    if k >= avoid {
        k + 1
    } else {
        k
    }
}

fn roster(x: &str, y: &str, places: &[String; 3], people: &[String; 4], facts: &[Fact]) -> Vec<Entity> {
    let mut out: Vec<Entity> = Vec::new();
    let mut push = |name: &str, kind| {
        let attributes = facts
            .iter()
            .filter(|f| f.subject == name)
            .map(|f| (f.relation.slot().to_string(), f.object.clone()))
            .collect();
        out.push(Entity { name: name.to_string(), kind, attributes });
    };
    push(x, EntityKind::Organisation);
    push(y, EntityKind::Organisation);
    for p in places {
        push(p, EntityKind::Place);
    }
    for p in people {
        push(p, EntityKind::Person);
    }
    out
}

/// Returns paraphrase `variant_index` (1-based, 1..=9).
pub fn paraphrase_variant(k: &InjectedKnowledge, variant_index: usize) -> Result<&str, SynthError> {
    if !(1..=k.paraphrases.len()).contains(&variant_index) {
        return Err(SynthError::VariantIndex(variant_index));
    }
    Ok(&k.paraphrases[variant_index - 1])
}

/// Fraction of the probe input's content words that also occur in `passage`.
pub fn content_overlap(input_text: &str, passage: &str) -> f64 {
    let passage_words: BTreeSet<&str> =
        words_of(passage).filter(|w| !grammar::is_stopword(w)).collect();
    let probe_words: BTreeSet<&str> =
        words_of(input_text).filter(|w| !grammar::is_stopword(w)).collect();
    if probe_words.is_empty() {
        return 1.0;
    }
    let shared = probe_words.iter().filter(|w| passage_words.contains(*w)).count();
    shared as f64 / probe_words.len() as f64
}

/// Structural validity of `p` against its knowledge item, with the default
/// overlap threshold.
pub fn validate_probe(p: &Probe, k: &InjectedKnowledge) -> bool {
    validate_probe_with(p, k, DEFAULT_OVERLAP_THRESHOLD)
}

pub fn validate_probe_with(p: &Probe, k: &InjectedKnowledge, overlap_threshold: f64) -> bool {
    if p.knowledge_id != k.id || p.target_span.trim().is_empty() {
        return false;
    }
    if p.target_start != p.input_text.len() || p.target_end != p.target_start + p.target_span.len() {
        return false;
    }
    let sentence = p.sentence();
    match p.depth {
        Depth::Memorization => k.passage_sentences().contains(&sentence.as_str()),
        Depth::Semantic => {
            let mut same_target = k
                .probes_at(Depth::Memorization)
                .filter(|m| m.target_span == p.target_span);
            match (same_target.next(), same_target.next()) {
                (Some(m), None) => m.input_text != p.input_text,
                _ => false,
            }
        }
        Depth::Composition => {
            !k.passage.contains(sentence.as_str())
                && content_overlap(&p.input_text, &k.passage) < overlap_threshold
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> KnowledgeSet {
        generate_knowledge_set(7, 3, 1).unwrap()
    }

    #[test]
    fn paper_sized_set_has_1800_probes() {
        let ks = generate_knowledge_set(7, 120, 5).unwrap();
        assert_eq!(ks.items.len(), 120);
        assert_eq!(ks.all_probes().count(), 1800);
        for k in &ks.items {
            for d in Depth::ALL {
                assert_eq!(k.probes_at(d).count(), 5);
            }
            assert_eq!(k.paraphrases.len(), 9);
        }
        let sizes: Vec<usize> = ks.scenario_partition.values().map(Vec::len).collect();
        assert_eq!(sizes, [40, 40, 40]);
    }

    #[test]
    fn tiny_set_is_deterministic() {
        let a = tiny();
        let b = tiny();
        assert_eq!(a, b);
        assert_eq!(a.items.len(), 3);
        assert_eq!(a.all_probes().count(), 9);
    }

    #[test]
    fn huge_request_is_capacity_error() {
        assert!(matches!(generate_knowledge_set(7, 1_000_000, 5), Err(SynthError::Capacity { .. })));
    }

    #[test]
    fn precondition_errors() {
        assert_eq!(generate_knowledge_set(7, 2, 1), Err(SynthError::TooFewItems(2)));
        assert!(matches!(generate_knowledge_set(7, 3, 0), Err(SynthError::ProbeCount { .. })));
        assert!(matches!(generate_knowledge_set(7, 3, 6), Err(SynthError::ProbeCount { .. })));
    }

    #[test]
    fn paraphrase_indexing() {
        let ks = tiny();
        let k = &ks.items[0];
        let first = paraphrase_variant(k, 1).unwrap();
        assert_ne!(first, k.passage);
        for m in k.probes_at(Depth::Memorization) {
            assert!(first.contains(&m.target_span));
        }
        assert_eq!(paraphrase_variant(k, 0), Err(SynthError::VariantIndex(0)));
        assert_eq!(paraphrase_variant(k, 10), Err(SynthError::VariantIndex(10)));
    }

    #[test]
    fn validator_rejects_tampered_probes() {
        let ks = tiny();
        let k = &ks.items[0];
        let mem = k.probes_at(Depth::Memorization).next().unwrap().clone();
        assert!(validate_probe(&mem, k));

        let mut altered = mem.clone();
        let first_word = altered.input_text.split(' ').nth(1).unwrap().to_string();
        altered.input_text = altered.input_text.replacen(&first_word, "zzz", 1);
        altered.target_start = altered.input_text.len();
        altered.target_end = altered.target_start + altered.target_span.len();
        assert!(!validate_probe(&altered, k));

        let mut verbatim = mem.clone();
        verbatim.depth = Depth::Composition;
        assert!(!validate_probe(&verbatim, k));
    }

    #[test]
    fn composition_probes_avoid_overlap() {
        let ks = generate_knowledge_set(11, 6, 5).unwrap();
        for k in &ks.items {
            for p in k.probes_at(Depth::Composition) {
                assert!(content_overlap(&p.input_text, &k.passage) < 0.5, "{}", p.input_text);
            }
        }
    }
}
