//! Deterministic offline stand-in for the chat service: a pure function of
//! the rendered request. Default rules cover the four operations; exact
//! canned responses can be pinned per template and payload.

use std::collections::HashMap;

use crate::text::{self, Segment};

use super::templates::{self, TemplateId};
use super::{ChatClient, ChatRequest, GatewayError};

/// Characters the neutralizer strips beyond emoji.
const FLAIR: &[char] = &['!', '~', '*', '#', '^'];

#[derive(Debug, Clone, Default)]
pub struct MockClient {
    /// Summary rule: first `summary_words` tokens, capped at half the
    /// article, joined with spaces.
    pub summary_words: usize,
    /// Substrings the corrector removes from a draft.
    pub correction_markers: Vec<String>,
    /// Substrings the judge flags as factual hallucinations.
    pub factual_markers: Vec<String>,
    /// Substrings the judge flags as faithful hallucinations.
    pub faithful_markers: Vec<String>,
    /// `(template, exact primary payload)` to verbatim response.
    canned: HashMap<(TemplateId, String), String>,
}

impl MockClient {
    pub fn new() -> Self {
        MockClient {
            summary_words: 12,
            correction_markers: Vec::new(),
            factual_markers: Vec::new(),
            faithful_markers: Vec::new(),
            canned: HashMap::new(),
        }
    }

    /// Corrector removes the markers; judge flags the first as factual and
    /// the second as faithful.
    pub fn with_markers(mut self, factual: &str, faithful: &str) -> Self {
        self.correction_markers = vec![factual.to_string(), faithful.to_string()];
        self.factual_markers = vec![factual.to_string()];
        self.faithful_markers = vec![faithful.to_string()];
        self
    }

    /// Pin the exact response for a template and its primary payload (the
    /// article for summary/neutralize, the draft for correct/judge).
    pub fn with_canned(
        mut self,
        template: TemplateId,
        payload: impl Into<String>,
        response: impl Into<String>,
    ) -> Self {
        self.canned.insert((template, payload.into()), response.into());
        self
    }

    fn summarize(&self, article: &str) -> String {
        let tokens: Vec<String> = text::segment(article)
            .into_iter()
            .map(|s| match s {
                Segment::Word(w) => w,
                Segment::Cjk(c) | Segment::Emoji(c) => c.to_string(),
            })
            .collect();
        let budget = self.summary_words.max(1).min((tokens.len() / 2).max(1));
        tokens[..budget.min(tokens.len())].join(" ")
    }

    fn neutralize(&self, article: &str) -> String {
        let stripped: String = article
            .chars()
            .filter(|&c| !text::is_emoji(c) && !FLAIR.contains(&c))
            .collect();
        stripped.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    fn correct(&self, draft: &str, summary: &str) -> String {
        // markers out, every other span untouched
        let mut out = draft.to_string();
        for marker in &self.correction_markers {
            out = out.replace(marker, "");
        }
        if out.trim().is_empty() {
            // nothing salvageable: rewrite from the summary
            summary.to_string()
        } else {
            out
        }
    }

    fn judge(&self, generated: &str) -> String {
        let factual = self.factual_markers.iter().any(|m| generated.contains(m));
        let faithful = self.faithful_markers.iter().any(|m| generated.contains(m));
        let rationale = if factual || faithful {
            "seeded corruption marker present"
        } else {
            "no corruption markers found"
        };
        serde_json::json!({
            "factual": factual,
            "faithful": faithful,
            "rationale": rationale,
        })
        .to_string()
    }
}

impl ChatClient for MockClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        // the live prompt is the last user message (repair rounds append)
        let prompt = &request
            .messages
            .iter()
            .rev()
            .find(|m| matches!(m.role, super::Role::User))
            .ok_or_else(|| GatewayError::BadRequest("no user message".into()))?
            .content;

        // a repair request re-judges the original judge prompt
        let (template, source_prompt) = match templates::identify(prompt) {
            Some(TemplateId::JudgeRepair) => {
                let original = &request.messages[0].content;
                (TemplateId::Judge, original)
            }
            Some(t) => (t, prompt),
            None => {
                return Err(GatewayError::BadRequest("prompt matches no known template".into()))
            }
        };

        let section = |tag: &str| {
            templates::extract_section(source_prompt, tag)
                .ok_or_else(|| GatewayError::BadRequest(format!("missing <{tag}> section")))
        };
        let payload = match template {
            TemplateId::Summary | TemplateId::Neutralize => section("article")?,
            TemplateId::Correct => section("draft")?,
            TemplateId::Judge => section("generated")?,
            TemplateId::JudgeRepair => unreachable!("mapped to Judge above"),
        };
        if let Some(response) = self.canned.get(&(template, payload.clone())) {
            return Ok(response.clone());
        }
        Ok(match template {
            TemplateId::Summary => self.summarize(&payload),
            TemplateId::Neutralize => self.neutralize(&payload),
            TemplateId::Correct => {
                let summary = section("summary")?;
                self.correct(&payload, &summary)
            }
            TemplateId::Judge => self.judge(&payload),
            TemplateId::JudgeRepair => unreachable!("mapped to Judge above"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, RequestSettings};

    fn gateway(mock: MockClient) -> Gateway<MockClient> {
        Gateway::new(mock, RequestSettings::default())
    }

    #[test]
    fn canned_mapping_returns_exact_summary() {
        let g = gateway(
            MockClient::new().with_canned(TemplateId::Summary, "full article text", "pinned sum"),
        );
        assert_eq!(g.extract_summary("full article text").unwrap(), "pinned sum");
        // other articles fall back to the rule
        assert_eq!(g.extract_summary("alpha beta gamma delta").unwrap(), "alpha beta");
    }

    #[test]
    fn summary_is_strictly_shorter_and_keeps_leading_entities() {
        let g = gateway(MockClient::new());
        let article = "acme9 sells the zr7 for 42 dollars today in the big spring sale event";
        let summary = g.extract_summary(article).unwrap();
        for entity in ["acme9", "zr7", "42"] {
            assert!(summary.contains(entity), "missing {entity} in {summary:?}");
        }
        let n = crate::text::segment(article).len();
        assert!(crate::text::segment(&summary).len() < n);
    }

    #[test]
    fn neutralize_strips_emoji_and_is_idempotent() {
        let g = gateway(MockClient::new());
        let article = "so GOOD 🌵🌵 love it!! really~";
        let neutral = g.neutralize(article).unwrap();
        assert!(!neutral.chars().any(crate::text::is_emoji));
        assert!(!neutral.contains('!'));
        let again = g.neutralize(&neutral).unwrap();
        assert_eq!(neutral, again);
    }

    #[test]
    fn correction_identity_and_single_substitution() {
        let g = gateway(MockClient::new());
        let r = g.correct_hallucinations("clean draft here", "sum", "ref").unwrap();
        assert_eq!(r.verified_text, "clean draft here");
        assert_eq!(r.edits_applied, 0);

        let g = gateway(MockClient::new().with_markers("zzq", "vvx"));
        let r = g.correct_hallucinations("price zzq is right", "sum", "ref").unwrap();
        assert_eq!(r.verified_text, "price  is right");
        assert_eq!(r.edits_applied, 1);
    }

    #[test]
    fn rule_judge_flags_markers() {
        let g = gateway(MockClient::new().with_markers("zzq", "vvx"));
        let v = g.judge_hallucination("text with zzq inside", "sum", "ref").unwrap();
        assert!(v.factual_hallucinated);
        assert!(!v.faithful_hallucinated);
        assert!(!v.rationale.is_empty());

        // generated == summary verbatim -> clean verdict
        let v = g.judge_hallucination("the summary", "the summary", "ref").unwrap();
        assert!(!v.factual_hallucinated);
        assert!(!v.faithful_hallucinated);
    }

    #[test]
    fn mock_is_deterministic() {
        let g = gateway(MockClient::new().with_markers("zzq", "vvx"));
        let a = g.extract_summary("one two three four five six").unwrap();
        let b = g.extract_summary("one two three four five six").unwrap();
        assert_eq!(a, b);
    }
}
