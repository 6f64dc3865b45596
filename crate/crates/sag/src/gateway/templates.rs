//! Versioned prompt templates, shipped as files and compiled in. Payload
//! sections sit between XML-ish tags so a deterministic mock can recover
//! them from the rendered prompt.

use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateId {
    Summary,
    Neutralize,
    Correct,
    Judge,
    JudgeRepair,
}

impl TemplateId {
    pub fn name(self) -> &'static str {
        match self {
            TemplateId::Summary => "summary_v1",
            TemplateId::Neutralize => "neutralize_v1",
            TemplateId::Correct => "correct_v1",
            TemplateId::Judge => "judge_v1",
            TemplateId::JudgeRepair => "judge_repair_v1",
        }
    }

    pub fn content(self) -> &'static str {
        match self {
            TemplateId::Summary => include_str!("../../templates/summary_v1.txt"),
            TemplateId::Neutralize => include_str!("../../templates/neutralize_v1.txt"),
            TemplateId::Correct => include_str!("../../templates/correct_v1.txt"),
            TemplateId::Judge => include_str!("../../templates/judge_v1.txt"),
            TemplateId::JudgeRepair => include_str!("../../templates/judge_repair_v1.txt"),
        }
    }

    /// First line of the rendered prompt, used to recognize a template.
    fn signature(self) -> &'static str {
        self.content().lines().next().expect("template is nonempty")
    }
}

/// Substitute `{{key}}` placeholders.
pub fn render(id: TemplateId, values: &BTreeMap<&str, &str>) -> String {
    let mut out = id.content().to_string();
    for (key, value) in values {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out
}

/// Which template produced a rendered prompt.
pub fn identify(prompt: &str) -> Option<TemplateId> {
    let first = prompt.lines().next()?;
    [
        TemplateId::Summary,
        TemplateId::Neutralize,
        TemplateId::Correct,
        TemplateId::Judge,
        TemplateId::JudgeRepair,
    ]
    .into_iter()
    .find(|id| id.signature() == first)
}

/// Extract the `<tag>...</tag>` payload from a rendered prompt.
pub fn extract_section(prompt: &str, tag: &str) -> Option<String> {
    let open = format!("<{tag}>\n");
    let close = format!("\n</{tag}>");
    let start = prompt.find(&open)? + open.len();
    let end = prompt[start..].find(&close)? + start;
    Some(prompt[start..end].to_string())
}
