//! Self-improvement style filter: score all same-user article pairs with the
//! trained encoder, keep only the upper-triangular (chronology-respecting)
//! part of each user's score matrix, and retain pairs whose similarity
//! strictly exceeds a threshold and whose articles are long enough.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, UserCollection};
use crate::style_embed::{self, EmbedError, EncoderParams, StyleVector};

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("encoding article {article_id:?} failed: {source}")]
    Encode {
        article_id: String,
        #[source]
        source: EmbedError,
    },
    #[error("filtering user {user_id:?} failed: {source}")]
    User {
        user_id: String,
        #[source]
        source: Box<FilterError>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed dataset record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("dataset file is missing its metadata line")]
    MissingMetadata,
}

/// Retention rule for [`select_pairs`]: keep `score > threshold` (strict)
/// with both word counts at least `min_words`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub threshold: f64,
    pub min_words: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { threshold: 0.7, min_words: 50 }
    }
}

/// Upper-triangular similarity scores for one user's chronological articles;
/// entry `(i, j)` exists only for `i < j`.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    pub user_id: String,
    pub article_ids: Vec<String>,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.article_ids.len());
        let k = self.article_ids.len();
        i * k - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[self.index(i, j)]
    }

    pub fn len(&self) -> usize {
        self.article_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.article_ids.is_empty()
    }

    pub fn entry_count(&self) -> usize {
        self.scores.len()
    }
}

/// A retained (earlier reference, later target) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylePair {
    pub user_id: String,
    pub reference_id: String,
    pub target_id: String,
    pub score: f64,
}

/// Provenance written ahead of the pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterMetadata {
    pub encoder_version: u32,
    pub threshold: f64,
    pub min_words: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredDataset {
    pub metadata: FilterMetadata,
    pub pairs: Vec<StylePair>,
}

/// Score every ordered pair of one user's articles: `k(k-1)/2` entries for
/// `k` articles.
pub fn score_user_matrix(
    params: &EncoderParams,
    collection: &UserCollection,
) -> Result<ScoreMatrix, FilterError> {
    let vectors: Vec<StyleVector> = collection
        .articles
        .iter()
        .map(|a| {
            style_embed::encode(params, &a.body).map_err(|source| FilterError::Encode {
                article_id: a.id.clone(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;

    let k = vectors.len();
    let mut scores = Vec::with_capacity(k.saturating_sub(1) * k / 2);
    for i in 0..k {
        for j in i + 1..k {
            let sim = style_embed::cosine_sim(&vectors[i], &vectors[j]).map_err(|source| {
                FilterError::Encode { article_id: collection.articles[j].id.clone(), source }
            })?;
            scores.push(sim);
        }
    }
    Ok(ScoreMatrix {
        user_id: collection.user_id.clone(),
        article_ids: collection.articles.iter().map(|a| a.id.clone()).collect(),
        scores,
    })
}

/// Apply the retention predicate over the matrix, in `(i, j)` order. The
/// earlier article of each kept pair is the reference.
pub fn select_pairs(
    matrix: &ScoreMatrix,
    collection: &UserCollection,
    config: &FilterConfig,
) -> Vec<StylePair> {
    assert_eq!(matrix.article_ids.len(), collection.articles.len());
    let mut pairs = Vec::new();
    let k = matrix.len();
    for i in 0..k {
        for j in i + 1..k {
            let score = matrix.score(i, j);
            let a = &collection.articles[i];
            let b = &collection.articles[j];
            if score > config.threshold
                && a.word_count >= config.min_words
                && b.word_count >= config.min_words
            {
                pairs.push(StylePair {
                    user_id: collection.user_id.clone(),
                    reference_id: a.id.clone(),
                    target_id: b.id.clone(),
                    score,
                });
            }
        }
    }
    pairs
}

/// Run the filter over every user (user-id order) and collect the retained
/// pairs with provenance. One user's failure aborts the run.
pub fn build_filtered_dataset(
    corpus: &Corpus,
    params: &EncoderParams,
    config: &FilterConfig,
) -> Result<FilteredDataset, FilterError> {
    let mut pairs = Vec::new();
    for coll in corpus.users() {
        let matrix = score_user_matrix(params, coll).map_err(|e| FilterError::User {
            user_id: coll.user_id.clone(),
            source: Box::new(e),
        })?;
        pairs.extend(select_pairs(&matrix, coll, config));
    }
    Ok(FilteredDataset {
        metadata: FilterMetadata {
            encoder_version: params.version,
            threshold: config.threshold,
            min_words: config.min_words,
        },
        pairs,
    })
}

/// Line-delimited JSON: a metadata line, then one pair per line.
pub fn write_filtered_dataset(
    dataset: &FilteredDataset,
    mut w: impl Write,
) -> Result<(), FilterError> {
    serde_json::to_writer(&mut w, &dataset.metadata).map_err(io_err)?;
    writeln!(w)?;
    for pair in &dataset.pairs {
        serde_json::to_writer(&mut w, pair).map_err(io_err)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_filtered_dataset(r: impl BufRead) -> Result<FilteredDataset, FilterError> {
    let mut lines = r.lines().enumerate();
    let metadata = match lines.next() {
        Some((_, line)) => {
            let line = line?;
            serde_json::from_str(&line).map_err(|source| FilterError::Parse { line: 1, source })?
        }
        None => return Err(FilterError::MissingMetadata),
    };
    let mut pairs = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(
            serde_json::from_str(&line)
                .map_err(|source| FilterError::Parse { line: idx + 1, source })?,
        );
    }
    Ok(FilteredDataset { metadata, pairs })
}

fn io_err(e: serde_json::Error) -> FilterError {
    FilterError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Article;

    fn params() -> EncoderParams {
        EncoderParams::init(64, 8, 2, 5)
    }

    fn collection(bodies: &[&str]) -> UserCollection {
        UserCollection {
            user_id: "u".into(),
            articles: bodies
                .iter()
                .enumerate()
                .map(|(i, b)| Article::new(format!("a{i}"), "u", None, *b, i as i64))
                .collect(),
        }
    }

    #[test]
    fn singleton_has_no_entries() {
        let m = score_user_matrix(&params(), &collection(&["just one"])).unwrap();
        assert_eq!(m.entry_count(), 0);
    }

    #[test]
    fn three_articles_three_entries() {
        let m = score_user_matrix(&params(), &collection(&["one two", "three four", "five six"]))
            .unwrap();
        assert_eq!(m.entry_count(), 3);
        // all three (i, j) positions are addressable
        let _ = (m.score(0, 1), m.score(0, 2), m.score(1, 2));
    }

    #[test]
    fn identical_bodies_score_one() {
        let m = score_user_matrix(&params(), &collection(&["same text", "same text", "same text"]))
            .unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((m.score(i, j) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn encode_failure_names_article() {
        let coll = collection(&["fine words", "..."]);
        match score_user_matrix(&params(), &coll) {
            Err(FilterError::Encode { article_id, .. }) => assert_eq!(article_id, "a1"),
            other => panic!("expected encode error, got {other:?}"),
        }
    }

    #[test]
    fn threshold_one_keeps_nothing() {
        let coll = collection(&["same text", "same text", "same text"]);
        let m = score_user_matrix(&params(), &coll).unwrap();
        let pairs = select_pairs(&m, &coll, &FilterConfig { threshold: 1.0, min_words: 0 });
        assert!(pairs.is_empty());
    }

    #[test]
    fn identical_bodies_low_threshold_keeps_all() {
        let coll = collection(&["same text", "same text", "same text"]);
        let m = score_user_matrix(&params(), &coll).unwrap();
        let pairs = select_pairs(&m, &coll, &FilterConfig { threshold: 0.8, min_words: 0 });
        assert_eq!(pairs.len(), 3);
        // reference strictly precedes target
        for p in &pairs {
            assert!(p.reference_id < p.target_id);
        }
    }

    #[test]
    fn min_words_excludes_short_articles() {
        let coll = collection(&["same text", "same text"]);
        let m = score_user_matrix(&params(), &coll).unwrap();
        let keep = select_pairs(&m, &coll, &FilterConfig { threshold: 0.5, min_words: 2 });
        assert_eq!(keep.len(), 1);
        let drop = select_pairs(&m, &coll, &FilterConfig { threshold: 0.5, min_words: 3 });
        assert!(drop.is_empty());
    }

    fn synthetic_corpus(users: usize, arts_per_user: usize) -> Corpus {
        // deterministic bodies with overlapping word pools so scores vary
        let words = ["sun", "moon", "tide", "wind", "leaf", "stone", "ash", "fern"];
        let mut articles = Vec::new();
        for u in 0..users {
            for a in 0..arts_per_user {
                let mut body = String::new();
                for w in 0..6 {
                    body.push_str(words[(u * 3 + a * 5 + w * 7) % words.len()]);
                    body.push(' ');
                }
                articles.push(Article::new(
                    format!("u{u}-a{a}"),
                    format!("u{u:03}"),
                    None,
                    body.trim(),
                    a as i64,
                ));
            }
        }
        Corpus::from_articles(articles)
    }

    /// Brute force: enumerate all i<j per user and apply the predicate
    /// directly on fresh encodings, independent of ScoreMatrix.
    fn brute_force(
        corpus: &Corpus,
        params: &EncoderParams,
        config: &FilterConfig,
    ) -> Vec<StylePair> {
        let mut out = Vec::new();
        for coll in corpus.users() {
            for i in 0..coll.articles.len() {
                for j in i + 1..coll.articles.len() {
                    let a = &coll.articles[i];
                    let b = &coll.articles[j];
                    let u = style_embed::encode(params, &a.body).unwrap();
                    let v = style_embed::encode(params, &b.body).unwrap();
                    let score = style_embed::cosine_sim(&u, &v).unwrap();
                    if score > config.threshold
                        && a.word_count >= config.min_words
                        && b.word_count >= config.min_words
                    {
                        out.push(StylePair {
                            user_id: coll.user_id.clone(),
                            reference_id: a.id.clone(),
                            target_id: b.id.clone(),
                            score,
                        });
                    }
                }
            }
        }
        out
    }

    #[test]
    fn filtered_dataset_matches_brute_force() {
        let corpus = synthetic_corpus(20, 5);
        let p = params();
        let config = FilterConfig { threshold: 0.3, min_words: 4 };
        let dataset = build_filtered_dataset(&corpus, &p, &config).unwrap();
        let expected = brute_force(&corpus, &p, &config);
        assert_eq!(dataset.pairs, expected);
        assert!(!dataset.pairs.is_empty(), "fixture should retain something");
    }

    #[test]
    fn raising_threshold_or_min_words_never_adds_pairs() {
        let corpus = synthetic_corpus(10, 4);
        let p = params();
        let base =
            build_filtered_dataset(&corpus, &p, &FilterConfig { threshold: 0.2, min_words: 0 })
                .unwrap();
        for t in [0.4, 0.6, 0.9] {
            let higher =
                build_filtered_dataset(&corpus, &p, &FilterConfig { threshold: t, min_words: 0 })
                    .unwrap();
            assert!(higher.pairs.len() <= base.pairs.len());
            assert!(higher.pairs.iter().all(|x| base.pairs.contains(x)));
        }
        for mw in [3, 6, 50] {
            let stricter =
                build_filtered_dataset(&corpus, &p, &FilterConfig { threshold: 0.2, min_words: mw })
                    .unwrap();
            assert!(stricter.pairs.iter().all(|x| base.pairs.contains(x)));
        }
    }

    #[test]
    fn empty_and_single_user_datasets() {
        let p = params();
        let config = FilterConfig { threshold: 0.0, min_words: 0 };
        let empty = build_filtered_dataset(&Corpus::default(), &p, &config).unwrap();
        assert!(empty.pairs.is_empty());
        assert_eq!(empty.metadata.encoder_version, p.version);

        let single = Corpus::from_articles(vec![
            Article::new("a", "solo", None, "alpha beta", 1),
            Article::new("b", "solo", None, "alpha beta", 2),
        ]);
        let ds = build_filtered_dataset(&single, &p, &config).unwrap();
        assert!(ds.pairs.iter().all(|x| x.user_id == "solo"));
    }

    #[test]
    fn dataset_file_roundtrip() {
        let corpus = synthetic_corpus(5, 3);
        let p = params();
        let ds = build_filtered_dataset(&corpus, &p, &FilterConfig { threshold: 0.2, min_words: 0 })
            .unwrap();
        let mut buf = Vec::new();
        write_filtered_dataset(&ds, &mut buf).unwrap();
        let back = read_filtered_dataset(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn order_invariant_under_input_permutation() {
        let corpus = synthetic_corpus(6, 3);
        let p = params();
        let config = FilterConfig { threshold: 0.2, min_words: 0 };
        let forward = build_filtered_dataset(&corpus, &p, &config).unwrap();

        let mut shuffled: Vec<Article> = corpus.articles().cloned().collect();
        shuffled.reverse();
        let again = build_filtered_dataset(&Corpus::from_articles(shuffled), &p, &config).unwrap();
        assert_eq!(forward, again);
    }

    #[test]
    fn chronology_holds_for_all_pairs() {
        let corpus = synthetic_corpus(8, 4);
        let p = params();
        let ds = build_filtered_dataset(&corpus, &p, &FilterConfig { threshold: 0.1, min_words: 0 })
            .unwrap();
        for pair in &ds.pairs {
            let coll = corpus.get(&pair.user_id).unwrap();
            let ri = coll.articles.iter().position(|a| a.id == pair.reference_id).unwrap();
            let ti = coll.articles.iter().position(|a| a.id == pair.target_id).unwrap();
            assert!(ri < ti);
            let r = &coll.articles[ri];
            let t = &coll.articles[ti];
            assert!(
                r.published_at < t.published_at
                    || (r.published_at == t.published_at && r.id < t.id)
            );
        }
    }
}
