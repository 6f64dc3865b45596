//! The four gateway operations against the deterministic mock, plus
//! response caching and session record/replay.
//!
//! Point SAG_LLM_URL (and optionally SAG_LLM_KEY) at a chat-completion
//! endpoint and swap `MockClient` for `HttpChatClient::from_env` to run the
//! same calls against a real service.
//!
//! ```bash
//! cargo run --example gateway_mock
//! ```

use anyhow::Result;

use sag::gateway::{
    CachingClient, ChatClient, ChatRequest, Gateway, Message, MockClient, RecordingClient,
    ReplayClient, RequestSettings, Role,
};

fn main() -> Result<()> {
    let article = "velvet cascade z lumen orchid today!! 🌵 the ember price is 42";
    let mock = MockClient::new().with_markers("z", "j");
    let gateway = Gateway::new(mock, RequestSettings::default());

    let summary = gateway.extract_summary(article)?;
    println!("summary:    {summary:?}");
    let neutral = gateway.neutralize(article)?;
    println!("neutral:    {neutral:?}");

    let correction = gateway.correct_hallucinations(article, &summary, "lumen orchid ember")?;
    println!(
        "corrected:  {:?} ({} edits)",
        correction.verified_text, correction.edits_applied
    );

    let verdict = gateway.judge_hallucination(article, &summary, "lumen orchid ember")?;
    println!(
        "judge:      factual={} faithful={} ({})",
        verdict.factual_hallucinated, verdict.faithful_hallucinated, verdict.rationale
    );

    // caching: the second identical request never reaches the inner client
    let dir = std::env::temp_dir().join("sag-gateway-cache");
    let cached = CachingClient::new(MockClient::new(), &dir)?;
    let request = ChatRequest {
        model: "sag-collaborator".into(),
        messages: vec![Message {
            role: Role::User,
            content: sag::gateway::templates::render(
                sag::gateway::TemplateId::Summary,
                &std::collections::BTreeMap::from([("article", article)]),
            ),
        }],
        temperature: 0.0,
        max_tokens: 256,
    };
    let first = cached.complete(&request)?;
    let second = cached.complete(&request)?;
    println!("cache hit matches: {}", first == second);

    // record a session, then replay it without the original client
    let log = std::env::temp_dir().join("sag-gateway-session.jsonl");
    let _ = std::fs::remove_file(&log);
    let recorder = RecordingClient::new(MockClient::new(), &log);
    let recorded = recorder.complete(&request)?;
    let replay = ReplayClient::from_log(&log)?;
    println!("replay matches: {}", replay.complete(&request)? == recorded);
    Ok(())
}
