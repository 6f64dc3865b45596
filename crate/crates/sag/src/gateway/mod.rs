//! Gateway to an external chat-completion service (or a deterministic mock):
//! summary extraction, neutral-text generation, hallucination correction,
//! and LLM-as-judge scoring.

pub mod cache;
pub mod http;
pub mod mock;
pub mod templates;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::text;

pub use cache::{request_hash, CachingClient, RecordingClient, ReplayClient};
pub use http::{HttpChatClient, HttpConfig};
pub use mock::MockClient;
pub use templates::TemplateId;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error("service returned status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("service returned an empty response")]
    EmptyResponse,
    #[error("request is malformed: {0}")]
    BadRequest(String),
    #[error("response violates the operation contract: {0}")]
    Contract(String),
    #[error("judge response is not the required JSON object: {0}")]
    JudgeParse(String),
    #[error("no recorded response for request hash {0}")]
    UnknownRequest(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// Wire-shaped chat request; the JSON serialization of this struct is the
/// exact HTTP body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::BadRequest("at least one message required".into()));
        }
        if self.temperature < 0.0 {
            return Err(GatewayError::BadRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// Anything that can answer a chat request with the first choice's content.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

/// Model id and sampling settings applied to every outbound request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RequestSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: usize,
    /// Bounded in-flight requests for batch helpers.
    pub concurrency: usize,
}

impl Default for RequestSettings {
    fn default() -> Self {
        RequestSettings {
            model: "sag-collaborator".into(),
            temperature: 0.0,
            max_tokens: 1024,
            concurrency: 4,
        }
    }
}

/// The summary and neutral rendering of one article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeutralizationResult {
    pub summary: String,
    pub neutral_text: String,
}

impl NeutralizationResult {
    pub fn new(summary: String, neutral_text: String, article: &str) -> Result<Self, GatewayError> {
        if summary.trim().is_empty() || neutral_text.trim().is_empty() {
            return Err(GatewayError::EmptyResponse);
        }
        let stok = text::segment(&summary).len();
        let atok = text::segment(article).len();
        if stok >= atok {
            return Err(GatewayError::Contract(format!(
                "summary must be shorter than the article ({stok} vs {atok} tokens)"
            )));
        }
        Ok(NeutralizationResult { summary, neutral_text })
    }
}

/// Corrected draft plus the token-level edit count between draft and
/// corrected text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionResult {
    pub verified_text: String,
    pub edits_applied: usize,
}

impl CorrectionResult {
    pub fn new(generated: &str, verified_text: String) -> Result<Self, GatewayError> {
        if verified_text.trim().is_empty() {
            return Err(GatewayError::EmptyResponse);
        }
        let edits_applied =
            token_edit_distance(&text::segment(generated), &text::segment(&verified_text));
        Ok(CorrectionResult { verified_text, edits_applied })
    }
}

/// Per-article judge outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub factual_hallucinated: bool,
    pub faithful_hallucinated: bool,
    pub rationale: String,
}

impl JudgeVerdict {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if (self.factual_hallucinated || self.faithful_hallucinated)
            && self.rationale.trim().is_empty()
        {
            return Err(GatewayError::Contract(
                "a positive verdict needs a non-empty rationale".into(),
            ));
        }
        Ok(())
    }
}

fn token_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 0..a.len() {
        cur[0] = i + 1;
        for j in 0..b.len() {
            let sub = prev[j] + usize::from(a[i] != b[j]);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// A chat client plus request settings: the LLM half of the collaboration.
pub struct Gateway<C> {
    pub client: C,
    pub settings: RequestSettings,
}

impl<C: ChatClient> Gateway<C> {
    pub fn new(client: C, settings: RequestSettings) -> Self {
        Gateway { client, settings }
    }

    fn ask(
        &self,
        template: TemplateId,
        values: &BTreeMap<&str, &str>,
    ) -> Result<String, GatewayError> {
        let prompt = templates::render(template, values);
        let request = ChatRequest {
            model: self.settings.model.clone(),
            messages: vec![Message { role: Role::User, content: prompt }],
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
        };
        request.validate()?;
        let response = self.client.complete(&request)?;
        if response.trim().is_empty() {
            return Err(GatewayError::EmptyResponse);
        }
        Ok(response)
    }

    /// Summary that must not be longer than its source.
    pub fn extract_summary(&self, article: &str) -> Result<String, GatewayError> {
        if article.trim().is_empty() {
            return Err(GatewayError::BadRequest("article must be non-empty".into()));
        }
        let summary = self.ask(TemplateId::Summary, &BTreeMap::from([("article", article)]))?;
        let stok = text::segment(&summary).len();
        let atok = text::segment(article).len();
        if stok > atok {
            return Err(GatewayError::Contract(format!(
                "summary longer than the article ({stok} vs {atok} tokens)"
            )));
        }
        Ok(summary)
    }

    /// Neutral rendering; emoji in the output violate the contract.
    pub fn neutralize(&self, article: &str) -> Result<String, GatewayError> {
        if article.trim().is_empty() {
            return Err(GatewayError::BadRequest("article must be non-empty".into()));
        }
        let neutral = self.ask(TemplateId::Neutralize, &BTreeMap::from([("article", article)]))?;
        if neutral.chars().any(text::is_emoji) {
            return Err(GatewayError::Contract("neutral text contains emoji".into()));
        }
        Ok(neutral)
    }

    /// Both halves of the intention simulation for one article.
    pub fn neutralization(&self, article: &str) -> Result<NeutralizationResult, GatewayError> {
        let summary = self.extract_summary(article)?;
        let neutral = self.neutralize(article)?;
        NeutralizationResult::new(summary, neutral, article)
    }

    pub fn correct_hallucinations(
        &self,
        generated: &str,
        summary: &str,
        reference: &str,
    ) -> Result<CorrectionResult, GatewayError> {
        for (name, value) in
            [("generated", generated), ("summary", summary), ("reference", reference)]
        {
            if value.trim().is_empty() {
                return Err(GatewayError::BadRequest(format!("{name} must be non-empty")));
            }
        }
        let verified = self.ask(
            TemplateId::Correct,
            &BTreeMap::from([
                ("summary", summary),
                ("reference", reference),
                ("generated", generated),
            ]),
        )?;
        CorrectionResult::new(generated, verified)
    }

    /// JSON-constrained judge call; one repair round-trip on a malformed
    /// response, then an error.
    pub fn judge_hallucination(
        &self,
        generated: &str,
        summary: &str,
        reference: &str,
    ) -> Result<JudgeVerdict, GatewayError> {
        for (name, value) in
            [("generated", generated), ("summary", summary), ("reference", reference)]
        {
            if value.trim().is_empty() {
                return Err(GatewayError::BadRequest(format!("{name} must be non-empty")));
            }
        }
        let values = BTreeMap::from([
            ("summary", summary),
            ("reference", reference),
            ("generated", generated),
        ]);
        let prompt = templates::render(TemplateId::Judge, &values);
        let mut request = ChatRequest {
            model: self.settings.model.clone(),
            messages: vec![Message { role: Role::User, content: prompt }],
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
        };
        let first = self.client.complete(&request)?;
        match parse_verdict(&first) {
            Ok(verdict) => Ok(verdict),
            Err(_) => {
                request.messages.push(Message { role: Role::Assistant, content: first });
                request.messages.push(Message {
                    role: Role::User,
                    content: templates::render(TemplateId::JudgeRepair, &BTreeMap::new()),
                });
                let second = self.client.complete(&request)?;
                parse_verdict(&second)
            }
        }
    }

    /// Apply `f` to every item with at most `settings.concurrency` calls in
    /// flight; results keep item order regardless of completion order.
    pub fn map_concurrent<T, U, F>(&self, items: &[T], f: F) -> Vec<Result<U, GatewayError>>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> Result<U, GatewayError> + Sync,
    {
        map_concurrent(items, self.settings.concurrency, f)
    }
}

/// Order-preserving bounded-parallel map.
pub fn map_concurrent<T, U, F>(items: &[T], limit: usize, f: F) -> Vec<Result<U, GatewayError>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U, GatewayError> + Sync,
{
    let workers = limit.max(1).min(items.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<U, GatewayError>>>> =
        items.iter().map(|_| std::sync::Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if idx >= items.len() {
                    break;
                }
                let result = f(&items[idx]);
                *slots[idx].lock().expect("result slot") = Some(result);
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("result slot").expect("worker filled slot"))
        .collect()
}

#[derive(Deserialize)]
struct RawVerdict {
    factual: bool,
    faithful: bool,
    rationale: String,
}

/// Strict judge contract: a single JSON object
/// `{"factual": bool, "faithful": bool, "rationale": str}`.
pub fn parse_verdict(response: &str) -> Result<JudgeVerdict, GatewayError> {
    let raw: RawVerdict = serde_json::from_str(response.trim())
        .map_err(|e| GatewayError::JudgeParse(e.to_string()))?;
    let verdict = JudgeVerdict {
        factual_hallucinated: raw.factual,
        faithful_hallucinated: raw.faithful,
        rationale: raw.rationale,
    };
    verdict.validate()?;
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    struct Scripted {
        responses: Mutex<std::collections::VecDeque<Result<String, GatewayError>>>,
        pub calls: AtomicUsize,
    }

    impl Scripted {
        fn new(responses: Vec<Result<String, GatewayError>>) -> Self {
            Scripted { responses: Mutex::new(responses.into()), calls: AtomicUsize::new(0) }
        }
    }

    impl ChatClient for Scripted {
        fn complete(&self, _request: &ChatRequest) -> Result<String, GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.responses.lock().unwrap().pop_front().expect("script exhausted")
        }
    }

    fn gateway(client: Scripted) -> Gateway<Scripted> {
        Gateway::new(client, RequestSettings::default())
    }

    #[test]
    fn request_validation() {
        let empty =
            ChatRequest { model: "m".into(), messages: vec![], temperature: 0.0, max_tokens: 10 };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn summary_contract_enforced() {
        // response longer than the article is a contract violation
        let g = gateway(Scripted::new(vec![Ok("far too many words for this".into())]));
        assert!(matches!(g.extract_summary("short text"), Err(GatewayError::Contract(_))));

        let g = gateway(Scripted::new(vec![Ok("short text".into())]));
        assert_eq!(g.extract_summary("short text here").unwrap(), "short text");
    }

    #[test]
    fn neutralize_rejects_emoji_output() {
        let g = gateway(Scripted::new(vec![Ok("still has 🌵".into())]));
        assert!(matches!(g.neutralize("article body"), Err(GatewayError::Contract(_))));
    }

    #[test]
    fn empty_inputs_and_responses_are_errors() {
        let g = gateway(Scripted::new(vec![]));
        assert!(matches!(g.extract_summary("  "), Err(GatewayError::BadRequest(_))));
        let g = gateway(Scripted::new(vec![Ok("   ".into())]));
        assert!(matches!(g.extract_summary("text"), Err(GatewayError::EmptyResponse)));
    }

    #[test]
    fn correction_counts_token_edits() {
        let r = CorrectionResult::new("the cat sat down", "the dog sat down".into()).unwrap();
        assert_eq!(r.edits_applied, 1);
        let r = CorrectionResult::new("alpha beta", "alpha beta".into()).unwrap();
        assert_eq!(r.edits_applied, 0);
        let r = CorrectionResult::new("a b marker c", "a b c".into()).unwrap();
        assert_eq!(r.edits_applied, 1);
    }

    #[test]
    fn judge_parses_strict_json() {
        let v = parse_verdict(r#"{"factual": true, "faithful": false, "rationale": "price wrong"}"#)
            .unwrap();
        assert!(v.factual_hallucinated);
        assert!(!v.faithful_hallucinated);

        assert!(parse_verdict("not json").is_err());
        // positive verdict without rationale violates the invariant
        assert!(parse_verdict(r#"{"factual": true, "faithful": false, "rationale": ""}"#).is_err());
        // negative verdict may omit the rationale text
        assert!(parse_verdict(r#"{"factual": false, "faithful": false, "rationale": ""}"#).is_ok());
    }

    #[test]
    fn judge_repairs_once_then_fails() {
        let ok = r#"{"factual": false, "faithful": true, "rationale": "drifts"}"#;
        let g = gateway(Scripted::new(vec![Ok("garbled".into()), Ok(ok.into())]));
        let v = g.judge_hallucination("gen", "sum", "ref").unwrap();
        assert!(v.faithful_hallucinated);
        assert_eq!(g.client.calls.load(Ordering::SeqCst), 2);

        let g = gateway(Scripted::new(vec![Ok("bad".into()), Ok("also bad".into())]));
        assert!(matches!(
            g.judge_hallucination("gen", "sum", "ref"),
            Err(GatewayError::JudgeParse(_))
        ));
    }

    #[test]
    fn map_concurrent_preserves_order() {
        let items: Vec<usize> = (0..20).collect();
        let results = map_concurrent(&items, 4, |&x| {
            if x == 13 {
                Err(GatewayError::EmptyResponse)
            } else {
                Ok(x * 2)
            }
        });
        for (i, r) in results.iter().enumerate() {
            if i == 13 {
                assert!(r.is_err());
            } else {
                assert_eq!(*r.as_ref().unwrap(), i * 2);
            }
        }
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(token_edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(token_edit_distance(&[1, 2, 3], &[1, 3]), 1);
        assert_eq!(token_edit_distance::<u32>(&[], &[1, 2]), 2);
    }
}
