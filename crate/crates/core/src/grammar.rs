//! Sentence grammar shared by the fictional-knowledge generator and the
//! background corpus.
//!
//! Every fact is a `(subject, relation, object)` triple rendered through one
//! of several frames. A frame always ends with the object phrase, so the
//! object is the cloze target when the sentence becomes a probe.

use alloc::collections::BTreeSet;
use alloc::string::String;

use rand::Rng;

/// Relation between a subject and an object entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    FoundedBy,
    BasedIn,
    RivalOf,
    BornIn,
    StudiedUnder,
    GovernedBy,
    LedBy,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::FoundedBy,
        Relation::BasedIn,
        Relation::RivalOf,
        Relation::BornIn,
        Relation::StudiedUnder,
        Relation::GovernedBy,
        Relation::LedBy,
    ];

    /// Attribute slot name used in entity rosters.
    pub fn slot(self) -> &'static str {
        match self {
            Relation::FoundedBy => "founded_by",
            Relation::BasedIn => "based_in",
            Relation::RivalOf => "rival",
            Relation::BornIn => "born_in",
            Relation::StudiedUnder => "mentor",
            Relation::GovernedBy => "governor",
            Relation::LedBy => "leader",
        }
    }

    /// Frames as `(prefix, suffix)` around the subject; the object follows the
    /// suffix and ends the sentence.
    pub fn frames(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Relation::FoundedBy => &[
                ("the ", " was founded by "),
                ("the ", " was established by "),
                ("the founder of the ", " was "),
                ("the ", " owes its creation to "),
            ],
            Relation::BasedIn => &[
                ("the ", " is based in "),
                ("the headquarters of the ", " lie in "),
                ("the ", " keeps its main hall in "),
                ("the ", " operates from the city of "),
            ],
            Relation::RivalOf => &[
                ("the ", " competes fiercely with the "),
                ("the main rival of the ", " is the "),
                ("the ", " has long opposed the "),
                ("the ", " stands against the "),
            ],
            Relation::BornIn => &[
                ("", " was born in "),
                ("the birthplace of ", " is "),
                ("", " came into the world in "),
                ("", " is a native of "),
            ],
            Relation::StudiedUnder => &[
                ("", " studied under "),
                ("the mentor of ", " was "),
                ("", " was trained by "),
                ("", " learned the craft from "),
            ],
            Relation::GovernedBy => &[
                ("", " is governed by "),
                ("the governor of ", " is "),
                ("", " is ruled by "),
                ("the province of ", " answers to "),
            ],
            Relation::LedBy => &[
                ("the ", " is led by "),
                ("the leader of the ", " is "),
                ("the ", " is headed by "),
                ("the ", " follows the direction of "),
            ],
        }
    }

    pub fn n_frames(self) -> usize {
        self.frames().len()
    }
}

/// Renders `subject` and `object` through frame `frame` of `relation`.
/// Returns the full sentence (no terminal period) and the byte offset where
/// the object begins.
pub fn render(relation: Relation, frame: usize, subject: &str, object: &str) -> (String, usize) {
    let (pre, mid) = relation.frames()[frame];
    let mut s = String::with_capacity(pre.len() + subject.len() + mid.len() + object.len());
    s.push_str(pre);
    s.push_str(subject);
    s.push_str(mid);
    let start = s.len();
    s.push_str(object);
    (s, start)
}

/// Two-hop question: `first` links the root to a bridge entity and `second`
/// links the bridge to the answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Composition {
    pub first: Relation,
    pub second: Relation,
    /// Frame around the root subject; the answer follows.
    pub frame: (&'static str, &'static str),
}

pub const COMPOSITIONS: [Composition; 5] = [
    Composition {
        first: Relation::FoundedBy,
        second: Relation::BornIn,
        frame: ("the hometown of the original architect behind the ", " is "),
    },
    Composition {
        first: Relation::FoundedBy,
        second: Relation::StudiedUnder,
        frame: ("the teacher of the original architect behind the ", " was "),
    },
    Composition {
        first: Relation::BasedIn,
        second: Relation::GovernedBy,
        frame: ("the official overseeing the home town of the ", " is "),
    },
    Composition {
        first: Relation::RivalOf,
        second: Relation::LedBy,
        frame: ("the person in charge of the chief adversary of the ", " is "),
    },
    Composition {
        first: Relation::RivalOf,
        second: Relation::BasedIn,
        frame: ("the chief adversary of the ", " resides in "),
    },
];

pub fn render_composition(c: &Composition, subject: &str, object: &str) -> (String, usize) {
    let mut s = String::new();
    s.push_str(c.frame.0);
    s.push_str(subject);
    s.push_str(c.frame.1);
    let start = s.len();
    s.push_str(object);
    (s, start)
}

/// Organisation type nouns; appended to an organisation's proper name.
pub const ORG_KINDS: [&str; 10] = [
    "guild",
    "league",
    "order",
    "company",
    "council",
    "society",
    "syndicate",
    "collective",
    "assembly",
    "federation",
];

/// Function words ignored when measuring lexical overlap.
pub const STOPWORDS: [&str; 22] = [
    "the", "a", "an", "of", "is", "was", "by", "in", "to", "its", "with", "from", "who", "that",
    "has", "are", "be", "and", "as", "at", "on", "for",
];

pub fn is_stopword(w: &str) -> bool {
    STOPWORDS.contains(&w)
}

/// Every word the grammar itself can emit (frames, compositions, org kinds).
pub fn grammar_words() -> BTreeSet<&'static str> {
    let mut out = BTreeSet::new();
    for r in Relation::ALL {
        for (a, b) in r.frames() {
            out.extend(a.split_whitespace());
            out.extend(b.split_whitespace());
        }
    }
    for c in &COMPOSITIONS {
        out.extend(c.frame.0.split_whitespace());
        out.extend(c.frame.1.split_whitespace());
    }
    out.extend(ORG_KINDS);
    out
}

/// Total number of distinct sentence frames.
pub fn frame_count() -> usize {
    Relation::ALL.iter().map(|r| r.n_frames()).sum::<usize>() + COMPOSITIONS.len()
}

/// Which syllable inventory a name is drawn from. The two pools use disjoint
/// initial syllables, so no name can belong to both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamePool {
    Knowledge,
    Background,
}

const KNOWLEDGE_ONSETS: [&str; 20] = [
    "ka", "ke", "ki", "ko", "ku", "va", "ve", "vi", "vo", "za", "ze", "zo", "zu", "qui", "xa",
    "xe", "ja", "jo", "yu", "yo",
];

const BACKGROUND_ONSETS: [&str; 20] = [
    "ba", "be", "bo", "da", "de", "do", "fa", "fe", "ga", "go", "ha", "he", "la", "lo", "ma", "me",
    "na", "pa", "ra", "ta",
];

const SYLLABLES: [&str; 30] = [
    "ran", "dor", "vek", "lis", "mun", "tar", "wen", "sil", "gor", "nax", "rel", "dun", "mir",
    "thos", "val", "ken", "sar", "lum", "bri", "dak", "fen", "hal", "jor", "kes", "nor", "pim",
    "quel", "rik", "ston", "zar",
];

impl NamePool {
    fn onsets(self) -> &'static [&'static str] {
        match self {
            NamePool::Knowledge => &KNOWLEDGE_ONSETS,
            NamePool::Background => &BACKGROUND_ONSETS,
        }
    }

    /// Upper bound on distinct single-token names in this pool.
    pub fn capacity(self) -> usize {
        let o = self.onsets().len();
        let s = SYLLABLES.len();
        o * s + o * s * s
    }

    /// Whether `word` could have been produced by this pool.
    pub fn owns(self, word: &str) -> bool {
        self.onsets().iter().any(|p| {
            word.strip_prefix(p)
                .is_some_and(|rest| !rest.is_empty() && rest.starts_with(|c: char| !"aeiou".contains(c)))
        })
    }
}

/// Draws fresh single-token names without repetition.
#[derive(Debug, Clone)]
pub struct NameGenerator {
    pool: NamePool,
    used: BTreeSet<String>,
    forbidden: BTreeSet<&'static str>,
}

impl NameGenerator {
    pub fn new(pool: NamePool) -> Self {
        Self { pool, used: BTreeSet::new(), forbidden: grammar_words() }
    }

    pub fn issued(&self) -> usize {
        self.used.len()
    }

    /// Draws an unused name. Callers must keep total draws well below
    /// [`NamePool::capacity`]; the rejection loop slows as the pool fills.
    pub fn fresh<R: Rng + ?Sized>(&mut self, rng: &mut R) -> String {
        let onsets = self.pool.onsets();
        loop {
            let mut name = String::from(onsets[rng.random_range(0..onsets.len())]);
            let n_more = if rng.random_bool(0.5) { 1 } else { 2 };
            for _ in 0..n_more {
                name.push_str(SYLLABLES[rng.random_range(0..SYLLABLES.len())]);
            }
            if self.forbidden.contains(name.as_str()) || self.used.contains(&name) {
                continue;
            }
            self.used.insert(name.clone());
            return name;
        }
    }
}
