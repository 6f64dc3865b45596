//! Parse a line-delimited article file, group per user in publication
//! order, and print corpus statistics.
//!
//! ```bash
//! cargo run --example ingest_corpus
//! ```

use anyhow::Result;

use sag::corpus::{corpus_stats, ingest_corpus_reader};
use sag::text::word_count;

fn main() -> Result<()> {
    let raw = r#"{"id":"a2","user_id":"mira","title":"second","body":"velvet cascade 今天很好 🌵","published_at":1700000100}
{"id":"a1","user_id":"mira","title":null,"body":"lumen orchid ember!!","published_at":1700000000}
{"id":"b1","user_id":"noor","body":"cobalt drift mesa tundra","published_at":1700000050,"likes":12}
"#;
    let corpus = ingest_corpus_reader(raw.as_bytes())?;

    let stats = corpus_stats(&corpus);
    println!(
        "{} users, {} articles, {} words total",
        stats.num_users, stats.num_articles, stats.words_total
    );
    for coll in corpus.users() {
        println!("user {}:", coll.user_id);
        for article in &coll.articles {
            println!(
                "  {} @ {}  ({} words)  {:?}",
                article.id, article.published_at, article.word_count, article.body
            );
        }
    }

    // the word-count rule: alphanumeric runs, one unit per CJK character,
    // zero for punctuation and emoji
    for text in ["hello world", "velvet cascade 今天很好 🌵", "!!!"] {
        println!("word_count({text:?}) = {}", word_count(text));
    }
    Ok(())
}
