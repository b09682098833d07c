use std::collections::BTreeSet;

use factlab_core::corpus::{Corpus, CorpusConfig, CorpusStream};
use factlab_core::microlm::tokenizer::{Tokenizer, BOS};
use factlab_core::synthkb::generate_knowledge_set;
use proptest::prelude::*;

fn setup(seed: u64) -> (Corpus, Tokenizer, BTreeSet<String>) {
    let cfg = CorpusConfig { seed, ..CorpusConfig::default() };
    let ks = generate_knowledge_set(seed ^ 0xabc, 24, 5).unwrap();
    let tok = Tokenizer::from_words(Corpus::words(&cfg).into_iter().chain(ks.words()));
    (Corpus::new(cfg, &tok).unwrap(), tok, ks.entity_tokens())
}

#[test]
fn consecutive_cursors_never_collide() {
    let (c, _, _) = setup(9);
    let mut s = CorpusStream::new(77);
    let mut prev = c.next_batch(&mut s, 4, 64);
    let mut seen = BTreeSet::from([prev.clone()]);
    for _ in 0..1000 {
        let b = c.next_batch(&mut s, 4, 64);
        assert_ne!(b, prev);
        assert!(seen.insert(b.clone()), "batch repeated at step {}", s.cursor.step);
        prev = b;
    }
}

#[test]
fn batches_hold_no_fictional_entities() {
    let (c, tok, ent) = setup(4);
    let ids: BTreeSet<u32> = ent.iter().map(|w| tok.id(w).unwrap()).collect();
    let mut s = CorpusStream::new(1);
    for _ in 0..200 {
        let b = c.next_batch(&mut s, 8, 128);
        assert!(b.iter().all(|t| !ids.contains(t)));
    }
}

#[test]
fn unknown_words_rejected() {
    let cfg = CorpusConfig::default();
    let tok = Tokenizer::from_words(["alpha"]);
    assert!(Corpus::new(cfg, &tok).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn replay_from_cursor(seed in any::<u64>(), step in 0u64..10_000, rows in 1usize..6, len in 1usize..200) {
        let (c, _, _) = setup(3);
        let mut a = CorpusStream::at_step(seed, step, rows);
        let first = c.next_batch(&mut a, rows, len);
        let second = c.next_batch(&mut a, rows, len);
        let mut b = CorpusStream::at_step(seed, step + 1, rows);
        prop_assert_eq!(&c.next_batch(&mut b, rows, len), &second);
        prop_assert_eq!(a, b);
        prop_assert_eq!(first.len(), rows * len);
        for r in 0..rows {
            prop_assert_eq!(first[r * len], BOS);
        }
    }
}
