//! Background pretraining stream.
//!
//! Documents reuse the fact grammar of [`crate::synthkb`] over a separate
//! name pool, so injected passages look like ordinary text apart from their
//! never-seen entity names. Row `r` of the stream is a pure function of
//! `(seed, r)`; a cursor therefore replays any past batch.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grammar::{self, NameGenerator, NamePool, Relation, COMPOSITIONS, ORG_KINDS};
use crate::microlm::tokenizer::{Tokenizer, TokenizerError, BOS};
use crate::seed;

pub const GRAMMAR_ID: &str = "facts/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    /// Distinct organisation names in the background pool.
    pub n_orgs: usize,
    pub n_places: usize,
    pub n_people: usize,
    /// Probability that a document closes with a two-hop sentence.
    pub composition_rate: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { seed: 0, n_orgs: 48, n_places: 48, n_people: 64, composition_rate: 0.3 }
    }
}

/// Position in the infinite row stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Cursor {
    /// Batches drawn so far.
    pub step: u64,
    /// Global index of the next row.
    pub row: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStream {
    pub seed: u64,
    pub grammar_id: String,
    pub cursor: Cursor,
}

impl CorpusStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, grammar_id: GRAMMAR_ID.into(), cursor: Cursor::default() }
    }

    /// Cursor positioned at the start of batch `step` for fixed-size batches.
    pub fn at_step(seed: u64, step: u64, rows: usize) -> Self {
        let mut s = Self::new(seed);
        s.cursor = Cursor { step, row: step * rows as u64 };
        s
    }
}

#[derive(Debug, Clone)]
struct Pool {
    orgs: Vec<String>,
    places: Vec<String>,
    people: Vec<String>,
}

/// Background text generator bound to a tokenizer.
#[derive(Debug, Clone)]
pub struct Corpus {
    config: CorpusConfig,
    pool: Pool,
    tokenizer: Tokenizer,
}

fn build_pool(config: &CorpusConfig) -> Pool {
    let mut rng = seed::rng(seed::derive(config.seed, "corpus.names"));
    let mut gen = NameGenerator::new(NamePool::Background);
    let orgs = (0..config.n_orgs)
        .map(|_| {
            let kind = ORG_KINDS[rng.random_range(0..ORG_KINDS.len())];
            format!("{} {kind}", gen.fresh(&mut rng))
        })
        .collect();
    let places = (0..config.n_places).map(|_| gen.fresh(&mut rng)).collect();
    let people = (0..config.n_people)
        .map(|_| {
            let given = gen.fresh(&mut rng);
            let family = gen.fresh(&mut rng);
            format!("{given} {family}")
        })
        .collect();
    Pool { orgs, places, people }
}

impl Corpus {
    /// Every word the stream can emit for `config`.
    pub fn words(config: &CorpusConfig) -> BTreeSet<String> {
        let pool = build_pool(config);
        let mut out: BTreeSet<String> = grammar::grammar_words().into_iter().map(String::from).collect();
        for name in pool.orgs.iter().chain(&pool.places).chain(&pool.people) {
            out.extend(name.split_whitespace().map(String::from));
        }
        out
    }

    pub fn new(config: CorpusConfig, tokenizer: &Tokenizer) -> Result<Self, TokenizerError> {
        let pool = build_pool(&config);
        for w in Self::words(&config) {
            if !tokenizer.contains(&w) {
                return Err(TokenizerError::Unknown(w));
            }
        }
        Ok(Self { config, pool, tokenizer: tokenizer.clone() })
    }

    pub fn config(&self) -> &CorpusConfig {
        &self.config
    }

    /// Draws `rows × seq_len` tokens at the stream cursor and advances it.
    pub fn next_batch(&self, stream: &mut CorpusStream, rows: usize, seq_len: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(rows * seq_len);
        for r in 0..rows as u64 {
            self.fill_row(stream.seed, stream.cursor.row + r, seq_len, &mut out);
        }
        stream.cursor.row += rows as u64;
        stream.cursor.step += 1;
        out
    }

    fn fill_row(&self, stream_seed: u64, row: u64, seq_len: usize, out: &mut Vec<u32>) {
        let mut rng = seed::rng(seed::derive_indexed(stream_seed, "corpus.row", row));
        let start = out.len();
        while out.len() - start < seq_len {
            out.push(BOS);
            let doc = self.document(&mut rng);
            self.tokenizer.encode_into(&doc, out).expect("corpus words are in the vocabulary");
        }
        out.truncate(start + seq_len);
    }

    fn document<R: Rng>(&self, rng: &mut R) -> String {
        let p = &self.pool;
        let two_orgs: Vec<&String> = p.orgs.choose_multiple(rng, 2).collect();
        let places: Vec<&String> = p.places.choose_multiple(rng, 3).collect();
        let people: Vec<&String> = p.people.choose_multiple(rng, 4).collect();
        let (x, y) = (two_orgs[0].as_str(), two_orgs[1].as_str());
        let facts: [(Relation, &str, &str); 8] = [
            (Relation::FoundedBy, x, people[0]),
            (Relation::BasedIn, x, places[0]),
            (Relation::RivalOf, x, y),
            (Relation::BornIn, people[0], places[1]),
            (Relation::StudiedUnder, people[0], people[3]),
            (Relation::GovernedBy, places[0], people[2]),
            (Relation::LedBy, y, people[1]),
            (Relation::BasedIn, y, places[2]),
        ];
        let mut order: Vec<usize> = (0..facts.len()).collect();
        order.shuffle(rng);
        order.truncate(rng.random_range(3..=facts.len()));
        let mut text = String::new();
        for &i in &order {
            let (rel, s, o) = facts[i];
            let (sentence, _) = grammar::render(rel, rng.random_range(0..rel.n_frames()), s, o);
            push_sentence(&mut text, &sentence);
        }
        if rng.random_bool(self.config.composition_rate) {
            const SECOND: [usize; 5] = [3, 4, 5, 6, 7];
            let c = rng.random_range(0..COMPOSITIONS.len());
            let answer = facts[SECOND[c]].2;
            let (sentence, _) = grammar::render_composition(&COMPOSITIONS[c], x, answer);
            push_sentence(&mut text, &sentence);
        }
        text
    }
}

fn push_sentence(text: &mut String, sentence: &str) {
    if !text.is_empty() {
        text.push(' ');
    }
    text.push_str(sentence);
    text.push('.');
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Corpus {
        let cfg = CorpusConfig { seed: 5, ..CorpusConfig::default() };
        let tok = Tokenizer::from_words(Corpus::words(&cfg));
        Corpus::new(cfg, &tok).unwrap()
    }

    #[test]
    fn same_cursor_same_batch() {
        let c = corpus();
        let mut a = CorpusStream::new(9);
        let mut b = CorpusStream::new(9);
        assert_eq!(c.next_batch(&mut a, 4, 32), c.next_batch(&mut b, 4, 32));
        let second = c.next_batch(&mut a, 4, 32);
        let mut rewound = CorpusStream::at_step(9, 1, 4);
        assert_eq!(c.next_batch(&mut rewound, 4, 32), second);
        assert_eq!(a.cursor, Cursor { step: 2, row: 8 });
    }

    #[test]
    fn rows_start_with_bos_and_have_exact_length() {
        let c = corpus();
        let mut s = CorpusStream::new(1);
        let batch = c.next_batch(&mut s, 3, 50);
        assert_eq!(batch.len(), 150);
        for row in batch.chunks(50) {
            assert_eq!(row[0], BOS);
        }
    }
}
