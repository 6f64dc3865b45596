//! Synthetic two-style corpus generation for demos and end-to-end runs:
//! users draw from one of two disjoint vocabularies, and a configurable
//! share of articles carries seeded corruption markers that the rule-based
//! judge keys on.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::NoteBenchCase;
use crate::corpus::{Article, Corpus};

/// Marker standing in for a factual fabrication: a single byte that no
/// style word contains, so even a lightly trained byte-level model can emit
/// or suppress it.
pub const FACTUAL_MARKER: &str = "z";
/// Marker standing in for an instruction drift.
pub const FAITHFUL_MARKER: &str = "j";

const STYLE_A: &[&str] = &[
    "lumen", "orchid", "velvet", "cascade", "ember", "sonata", "willow", "prism", "meadow",
    "lantern", "harbor", "saffron",
];
const STYLE_B: &[&str] = &[
    "basalt", "falcon", "turbine", "mesa", "cobalt", "drift", "onyx", "ridge", "tundra",
    "crater", "signal", "vector",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub users: usize,
    pub articles_per_user: usize,
    /// Words per article body.
    pub words_per_article: usize,
    /// Probability that an article carries the factual marker.
    pub factual_corruption_rate: f64,
    /// Probability that an article carries the faithful marker.
    pub faithful_corruption_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 20,
            articles_per_user: 10,
            words_per_article: 10,
            factual_corruption_rate: 0.35,
            faithful_corruption_rate: 0.25,
            seed: 0,
        }
    }
}

/// Two-style corpus: even users write style A, odd users style B. Two
/// articles per user share a timestamp to exercise the id tie-break.
pub fn generate_corpus(config: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut articles = Vec::with_capacity(config.users * config.articles_per_user);
    for u in 0..config.users {
        let vocab = if u % 2 == 0 { STYLE_A } else { STYLE_B };
        for a in 0..config.articles_per_user {
            let mut words = Vec::with_capacity(config.words_per_article + 2);
            for _ in 0..config.words_per_article {
                words.push(vocab[rng.gen_range(0..vocab.len())].to_string());
            }
            if rng.gen_range(0.0..1.0) < config.factual_corruption_rate {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, FACTUAL_MARKER.to_string());
            }
            if rng.gen_range(0.0..1.0) < config.faithful_corruption_rate {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, FAITHFUL_MARKER.to_string());
            }
            let body = format!("{}.", words.join(" "));
            // articles 0 and 1 share a timestamp; ids break the tie
            let ts = 1_600_000_000 + (a.max(1) - 1) as i64 * 86_400;
            let title = (a % 3 == 0).then(|| format!("note {a}"));
            articles.push(Article::new(
                format!("u{u:03}-a{a:02}"),
                format!("u{u:03}"),
                title,
                body,
                ts,
            ));
        }
    }
    Corpus::from_articles(articles)
}

/// Derive benchmark cases: the last article of each user is the gold
/// article, the first is its style reference, and the summary is the leading
/// half of the gold body's words.
pub fn make_benchmark(corpus: &Corpus, max_cases: usize) -> Vec<NoteBenchCase> {
    let mut cases = Vec::new();
    for coll in corpus.users() {
        if cases.len() >= max_cases {
            break;
        }
        if coll.articles.len() < 2 {
            continue;
        }
        let gold = coll.articles.last().expect("len >= 2");
        let reference = &coll.articles[0];
        let words: Vec<&str> = gold.body.split_whitespace().collect();
        let summary = words[..(words.len() / 2).max(1)].join(" ");
        cases.push(NoteBenchCase {
            case_id: format!("case-{}", gold.id),
            summary,
            style_reference: reference.body.clone(),
            gold_article: gold.body.clone(),
            user_id: coll.user_id.clone(),
        });
    }
    cases
}
