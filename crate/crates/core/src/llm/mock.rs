use super::{Backend, BackendError, BackendKind, CompletionRequest};
use crate::prompting::extract_target;

const TERMINAL: &[char] = &['.', '!', '?', '…', '。', '！', '？'];
const CLAUSE: &[char] = &[',', ';', '،', '、', '，', '；'];
const CLOSERS: &[char] = &['"', '\'', '»', '”', '’', ')', ']', '}'];

/// Offline stand-in for a chat model. It finds the target text in the task
/// prompt and annotates it with [`annotate_by_rule`], so its output depends
/// on nothing but that text.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl Backend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let target = extract_target(&request.user_message).ok_or_else(|| {
            BackendError::Config("mock backend found no delimited target in the prompt".into())
        })?;
        Ok(annotate_by_rule(target))
    }
}

/// `/` after words ending in terminal punctuation and at the end of the
/// utterance, `#` after words ending in a comma or semicolon, nothing
/// elsewhere. Closing quotes and brackets are looked through.
pub fn annotate_by_rule(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut out = String::with_capacity(text.len() + words.len());
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(w);
        let last = w.trim_end_matches(CLOSERS).chars().last();
        let is_final = i + 1 == words.len();
        if is_final || last.is_some_and(|c| TERMINAL.contains(&c)) {
            out.push_str(" /");
        } else if last.is_some_and(|c| CLAUSE.contains(&c)) {
            out.push_str(" #");
        }
    }
    out
}
