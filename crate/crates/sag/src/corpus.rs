//! Article ingestion: parse line-delimited article files, group per user in
//! publication order, and expose corpus statistics.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed article record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: duplicate article id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: article {id:?} has an empty body")]
    EmptyBody { line: usize, id: String },
}

/// A single forum post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub user_id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub body: String,
    /// UTC seconds.
    pub published_at: i64,
    /// Derived from `body` at ingest; not read from the file.
    #[serde(skip_deserializing, default)]
    pub word_count: usize,
}

impl Article {
    pub fn new(
        id: impl Into<String>,
        user_id: impl Into<String>,
        title: Option<String>,
        body: impl Into<String>,
        published_at: i64,
    ) -> Self {
        let body = body.into();
        let word_count = text::word_count(&body);
        Article {
            id: id.into(),
            user_id: user_id.into(),
            title,
            body,
            published_at,
            word_count,
        }
    }
}

/// All posts of one author, sorted ascending by `(published_at, id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserCollection {
    pub user_id: String,
    pub articles: Vec<Article>,
}

/// Collections keyed by user id (iteration order is the user id order).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    users: BTreeMap<String, UserCollection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_users: usize,
    pub num_articles: usize,
    pub words_total: usize,
}

impl Corpus {
    pub fn from_articles(articles: Vec<Article>) -> Self {
        let mut users: BTreeMap<String, UserCollection> = BTreeMap::new();
        for article in articles {
            users
                .entry(article.user_id.clone())
                .or_insert_with(|| UserCollection {
                    user_id: article.user_id.clone(),
                    articles: Vec::new(),
                })
                .articles
                .push(article);
        }
        for coll in users.values_mut() {
            coll.articles
                .sort_by(|a, b| (a.published_at, &a.id).cmp(&(b.published_at, &b.id)));
        }
        Corpus { users }
    }

    pub fn users(&self) -> impl Iterator<Item = &UserCollection> {
        self.users.values()
    }

    pub fn get(&self, user_id: &str) -> Option<&UserCollection> {
        self.users.get(user_id)
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn articles(&self) -> impl Iterator<Item = &Article> {
        self.users.values().flat_map(|c| c.articles.iter())
    }

    pub fn find_article(&self, user_id: &str, article_id: &str) -> Option<&Article> {
        self.get(user_id)
            .and_then(|c| c.articles.iter().find(|a| a.id == article_id))
    }
}

/// Parse a corpus file: one JSON article per line, UTF-8, unknown fields
/// ignored. Duplicate ids and empty bodies are rejected.
pub fn ingest_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path.as_ref())?;
    ingest_corpus_reader(std::io::BufReader::new(file))
}

pub fn ingest_corpus_reader(reader: impl BufRead) -> Result<Corpus, CorpusError> {
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut articles = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: Article =
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
                line: line_no,
                source,
            })?;
        if raw.body.is_empty() {
            return Err(CorpusError::EmptyBody {
                line: line_no,
                id: raw.id,
            });
        }
        if !seen_ids.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: raw.id,
            });
        }
        articles.push(Article::new(
            raw.id,
            raw.user_id,
            raw.title,
            raw.body,
            raw.published_at,
        ));
    }
    Ok(Corpus::from_articles(articles))
}

/// Serialize the corpus back to its line-delimited form (canonical order).
pub fn write_corpus(corpus: &Corpus, mut w: impl std::io::Write) -> std::io::Result<()> {
    for article in corpus.articles() {
        serde_json::to_writer(&mut w, article)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut num_articles = 0;
    let mut words_total = 0;
    for coll in corpus.users() {
        num_articles += coll.articles.len();
        words_total += coll.articles.iter().map(|a| a.word_count).sum::<usize>();
    }
    CorpusStats {
        num_users: corpus.num_users(),
        num_articles,
        words_total,
    }
}
