//! JSON-lines chat records `{role, name, content}`.

use nvtok_core::sequence::{ChatMessage, Role, SYSTEM_PROMPT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatLine {
    pub role: String,
    pub name: String,
    pub content: String,
}

impl From<&ChatMessage> for ChatLine {
    fn from(m: &ChatMessage) -> Self {
        Self { role: m.role.as_str().to_string(), name: m.name.clone(), content: m.content.clone() }
    }
}

impl TryFrom<ChatLine> for ChatMessage {
    type Error = Error;

    fn try_from(l: ChatLine) -> Result<Self> {
        Ok(ChatMessage { role: Role::parse(&l.role)?, name: l.name, content: l.content })
    }
}

pub fn system_message() -> ChatMessage {
    ChatMessage { role: Role::System, name: String::new(), content: SYSTEM_PROMPT.to_string() }
}

pub fn to_json_line(m: &ChatMessage) -> String {
    serde_json::to_string(&ChatLine::from(m)).expect("chat line serializes")
}

/// One JSON object per line, each terminated by `\n`.
pub fn write_jsonl(messages: &[ChatMessage]) -> String {
    let mut s = String::new();
    for m in messages {
        s.push_str(&to_json_line(m));
        s.push('\n');
    }
    s
}

pub fn read_jsonl(text: &str) -> Result<Vec<ChatMessage>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line: ChatLine = serde_json::from_str(l).map_err(|e| Error::format(format!("line {}: {e}", i + 1)))?;
            ChatMessage::try_from(line)
        })
        .collect()
}
