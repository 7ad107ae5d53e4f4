use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledExample, Task};
use crate::error::{Error, Result};

use super::fewshot::FewShotSet;

pub const OPEN: &str = "<<<";
pub const CLOSE: &str = ">>>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotMode {
    Zero,
    Few,
}

impl ShotMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ShotMode::Zero => "zero",
            ShotMode::Few => "few",
        }
    }
}

/// Prompt wording. Label names are always taken from the task itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplate {
    pub sentiment_instruction: String,
    pub topic_instruction: String,
    pub labels_header: String,
    pub demonstrations_header: String,
    pub target_header: String,
    pub answer_instruction: String,
    pub answer_prefix: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            sentiment_instruction: "Hãy phân loại cảm xúc của bình luận sinh viên dưới đây.".into(),
            topic_instruction: "Hãy phân loại chủ đề của bình luận sinh viên dưới đây.".into(),
            labels_header: "Các nhãn hợp lệ:".into(),
            demonstrations_header: "Một số ví dụ đã được gán nhãn:".into(),
            target_header: "Bình luận cần phân loại:".into(),
            answer_instruction: "Chỉ trả lời đúng một tên nhãn trong danh sách trên, không giải thích.".into(),
            answer_prefix: "Nhãn:".into(),
        }
    }
}

/// Backslash-escapes `\`, `<` and `>` so no delimiter can occur inside a text block.
pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if matches!(c, '\\' | '<' | '>') {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

pub fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(n) = chars.next() {
                out.push(n);
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub fn build_prompt(task: Task, text: &str, fewshot: Option<&FewShotSet>, template: &PromptTemplate) -> String {
    let mut p = String::new();
    p.push_str(match task {
        Task::Sentiment => &template.sentiment_instruction,
        Task::Topic => &template.topic_instruction,
    });
    p.push_str("\n\n");
    p.push_str(&template.labels_header);
    p.push('\n');
    for name in task.label_names() {
        p.push_str("- ");
        p.push_str(name);
        p.push('\n');
    }
    if let Some(set) = fewshot {
        p.push('\n');
        p.push_str(&template.demonstrations_header);
        p.push('\n');
        for e in &set.examples {
            push_block(&mut p, &e.text);
            p.push_str(&template.answer_prefix);
            p.push(' ');
            p.push_str(task.label_name(task.label_of(e)).unwrap_or_default());
            p.push_str("\n\n");
        }
    }
    p.push('\n');
    p.push_str(&template.target_header);
    p.push('\n');
    push_block(&mut p, text);
    p.push_str(&template.answer_instruction);
    p.push('\n');
    p.push_str(&template.answer_prefix);
    p
}

fn push_block(p: &mut String, text: &str) {
    p.push_str(OPEN);
    p.push('\n');
    p.push_str(&escape(text));
    p.push('\n');
    p.push_str(CLOSE);
    p.push('\n');
}

/// Text blocks recovered from a built prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPrompt {
    /// `(text, label)` for every demonstration.
    pub demonstrations: Vec<(String, String)>,
    pub target: String,
}

/// Inverse of [`build_prompt`] for the delimited blocks.
pub fn parse_prompt(prompt: &str, template: &PromptTemplate) -> Result<ParsedPrompt> {
    let mut blocks: Vec<(String, &str)> = Vec::new();
    let mut rest = prompt;
    while let Some(start) = rest.find(&format!("{OPEN}\n")) {
        let body = &rest[start + OPEN.len() + 1..];
        let end = body
            .find(&format!("\n{CLOSE}\n"))
            .ok_or_else(|| Error::Contract("unterminated prompt block".into()))?;
        let after = &body[end + CLOSE.len() + 2..];
        blocks.push((unescape(&body[..end]), after));
        rest = after;
    }
    let Some((target, _)) = blocks.pop() else {
        return Err(Error::Contract("prompt has no text block".into()));
    };
    let prefix = format!("{} ", template.answer_prefix);
    let demonstrations = blocks
        .into_iter()
        .map(|(text, after)| {
            let line = after.lines().next().unwrap_or_default();
            let label = line
                .strip_prefix(&prefix)
                .ok_or_else(|| Error::Contract("demonstration without label line".into()))?;
            Ok((text, label.to_owned()))
        })
        .collect::<Result<_>>()?;
    Ok(ParsedPrompt { demonstrations, target })
}

/// Builds the prompt for one test example.
pub fn prompt_for(task: Task, example: &LabeledExample, fewshot: Option<&FewShotSet>, template: &PromptTemplate) -> String {
    build_prompt(task, &example.text, fewshot, template)
}
