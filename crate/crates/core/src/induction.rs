//! Schema induction from documents through a chat-completion service.
//!
//! The prompt template is shipped as data. A replay client answers from
//! canned files so the pipeline runs offline; the HTTP client is opt-in.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::ingest::Document;
use crate::schema::{parse_hierarchy_text, ParseWarning, SchemaLibrary};

const DEFAULT_TEMPLATE: &str = include_str!("../assets/prompt.txt");
const SLOT: &str = "{paragraphs}";
const EXAMPLE_MARKER: &str = "Use the provided example for guidance:";
const REASONING_MARKER: &str = "Think about this extracted structure step by step:";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InductionError {
    #[error("no paragraphs to render")]
    EmptyInput,
    #[error("transport error after {attempts} attempt(s): {message}")]
    TransportError { attempts: usize, message: String },
    #[error("credential variable {0} is not set")]
    AuthError(String),
    #[error("unparseable response: {reason}")]
    UnparseableResponse { reason: String, raw: String, saved_to: Option<PathBuf> },
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
}

/// Prompt text with a `{paragraphs}` slot. The format-example and
/// chain-of-thought blocks are views into the same text.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self { text: DEFAULT_TEMPLATE.to_string() }
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, InductionError> {
        let text = text.into();
        if text.matches(SLOT).count() != 1 {
            return Err(InductionError::InvalidTemplate(format!("expected exactly one {SLOT} slot")));
        }
        Ok(Self { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// The worked example, from the guidance line up to the reasoning block.
    pub fn example_block(&self) -> Option<&str> {
        let start = self.text.find(EXAMPLE_MARKER)?;
        let end = self.text[start..].find(REASONING_MARKER).map_or(self.text.len(), |i| start + i);
        Some(&self.text[start..end])
    }

    pub fn reasoning_block(&self) -> Option<&str> {
        self.text.find(REASONING_MARKER).map(|i| &self.text[i..])
    }

    /// Hierarchy text of the worked example (the last fenced block before
    /// the reasoning section).
    pub fn example_output(&self) -> Option<&str> {
        let block = self.example_block()?;
        let close = block.rfind("```")?;
        let open = block[..close].rfind("```\n")?;
        Some(&block[open + 4..close])
    }
}

pub fn render_prompt(tmpl: &PromptTemplate, paragraphs: &[String]) -> Result<String, InductionError> {
    if paragraphs.iter().all(|p| p.trim().is_empty()) {
        return Err(InductionError::EmptyInput);
    }
    let body: Vec<&str> = paragraphs.iter().map(|p| p.trim()).filter(|p| !p.is_empty()).collect();
    Ok(tmpl.text.replacen(SLOT, &body.join("\n\n"), 1))
}

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap());
static BOILERPLATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?im)^\s*(?:advertisement|sponsored content|subscribe (?:now|to our newsletter)[^\n]*|sign up for[^\n]*newsletter[^\n]*|click here[^\n]*|read more[^\n]*|share this (?:article|story)[^\n]*|all rights reserved[^\n]*|(?:©|\(c\)|copyright)\s[^\n]*)\s*$",
    )
    .unwrap()
});
static SPACE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").unwrap());

pub fn clean_text(raw: &str) -> String {
    clean_text_with(raw, &[])
}

/// Removes boilerplate lines, URLs and each `extra` pattern, then collapses
/// whitespace. Repeats until nothing changes, so the result is idempotent.
pub fn clean_text_with(raw: &str, extra: &[Regex]) -> String {
    let mut cur = raw.to_string();
    loop {
        let mut next = BOILERPLATE.replace_all(&cur, " ").into_owned();
        next = URL.replace_all(&next, " ").into_owned();
        for re in extra {
            next = re.replace_all(&next, " ").into_owned();
        }
        next = SPACE.replace_all(&next, " ").trim().to_string();
        if next == cur {
            return next;
        }
        cur = next;
    }
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, doc_id: &str, prompt: &str) -> Result<String, InductionError>;
}

impl<F> ChatClient for F
where
    F: Fn(&str, &str) -> Result<String, InductionError> + Send + Sync,
{
    fn complete(&self, doc_id: &str, prompt: &str) -> Result<String, InductionError> {
        self(doc_id, prompt)
    }
}

/// Canned responses from `<dir>/<doc_id>.txt`.
#[derive(Debug, Clone)]
pub struct ReplayClient {
    pub dir: PathBuf,
}

impl ReplayClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl ChatClient for ReplayClient {
    fn complete(&self, doc_id: &str, _prompt: &str) -> Result<String, InductionError> {
        let path = self.dir.join(format!("{doc_id}.txt"));
        fs::read_to_string(&path).map_err(|e| InductionError::TransportError {
            attempts: 1,
            message: format!("no replay at {}: {e}", path.display()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Extra attempts after the first one.
    pub retries: usize,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/v1/chat".into(),
            model: "gpt-4o".into(),
            api_key_env: "SHIELD_CHAT_API_KEY".into(),
            timeout_secs: 60,
            retries: 2,
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Deserialize)]
struct ChatResponse {
    content: String,
}

/// Blocking client; call it from a worker thread inside async code.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    pub config: ChatConfig,
}

impl HttpChatClient {
    pub fn new(config: ChatConfig) -> Self {
        Self { config }
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, _doc_id: &str, prompt: &str) -> Result<String, InductionError> {
        let cfg = &self.config;
        let key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| InductionError::AuthError(cfg.api_key_env.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs.max(1)))
            .build()
            .map_err(|e| InductionError::TransportError { attempts: 0, message: e.to_string() })?;
        let body = ChatRequest {
            model: &cfg.model,
            messages: vec![ChatMessage { role: "user", content: prompt }],
        };
        let mut last = String::new();
        for attempt in 1..=cfg.retries + 1 {
            let sent = client.post(&cfg.endpoint).bearer_auth(&key).json(&body).send();
            match sent {
                Ok(resp) if resp.status().as_u16() == 401 || resp.status().as_u16() == 403 => {
                    return Err(InductionError::AuthError(format!("{} rejected by server", cfg.api_key_env)));
                }
                Ok(resp) if resp.status().is_success() => {
                    return resp.json::<ChatResponse>().map(|r| r.content).map_err(|e| {
                        InductionError::TransportError { attempts: attempt, message: format!("bad response body: {e}") }
                    });
                }
                Ok(resp) => last = format!("status {}", resp.status()),
                Err(e) => last = e.to_string(),
            }
            log::warn!("chat attempt {attempt} failed: {last}");
        }
        Err(InductionError::TransportError { attempts: cfg.retries + 1, message: last })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Induction {
    pub library: SchemaLibrary,
    pub warnings: Vec<ParseWarning>,
    pub raw: String,
}

/// Prompts the client with the cleaned document and parses the answer.
/// Unparseable answers are written to `audit_dir/<doc_id>.raw.txt` when a
/// directory is given.
pub fn induce_schema(
    doc: &Document,
    client: &dyn ChatClient,
    tmpl: &PromptTemplate,
    audit_dir: Option<&Path>,
) -> Result<Induction, InductionError> {
    let paragraphs: Vec<String> = doc.paragraphs.iter().map(|p| clean_text(p)).collect();
    let prompt = render_prompt(tmpl, &paragraphs)?;
    let raw = client.complete(&doc.id, &prompt)?;
    let failure = match parse_hierarchy_text(&raw) {
        Ok(p) if p.blocks > 0 && !p.library.is_empty() => {
            let mut library = p.library;
            library.add_context(&doc.id);
            return Ok(Induction { library, warnings: p.warnings, raw });
        }
        Ok(_) => "no event blocks found".to_string(),
        Err(e) => e.to_string(),
    };
    let saved_to = audit_dir.and_then(|dir| {
        let path = dir.join(format!("{}.raw.txt", doc.id));
        match fs::create_dir_all(dir).and_then(|_| fs::write(&path, &raw)) {
            Ok(()) => Some(path),
            Err(e) => {
                log::error!("could not persist raw response for {}: {e}", doc.id);
                None
            }
        }
    });
    Err(InductionError::UnparseableResponse { reason: failure, raw, saved_to })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::fixtures::RECYCLING_TEXT;

    fn doc(paragraphs: &[&str]) -> Document {
        Document {
            id: "doc1".into(),
            title: "t".into(),
            published: None,
            paragraphs: paragraphs.iter().map(|s| s.to_string()).collect(),
            source: String::new(),
        }
    }

    #[test]
    fn template_blocks() {
        let t = PromptTemplate::default();
        assert_eq!(t.example_output(), Some(RECYCLING_TEXT));
        assert!(t.reasoning_block().unwrap().starts_with(REASONING_MARKER));
        assert!(t.example_block().unwrap().contains("**Input Paragraph**"));
        assert!(PromptTemplate::new("no slot").is_err());
    }

    #[test]
    fn render_substitutes_in_order() {
        let t = PromptTemplate::default();
        let one = render_prompt(&t, &["Alpha paragraph.".into()]).unwrap();
        assert_eq!(one.matches("Alpha paragraph.").count(), 1);
        assert!(one.contains("Strictly use the exact following format for each event:"));
        assert!(one.contains("Event N\nevent: [Event Name]\nevent_id: evN\n"));
        assert!(!one.contains(SLOT));
        let two = render_prompt(&t, &["First.".into(), "Second.".into()]).unwrap();
        assert!(two.find("First.").unwrap() < two.find("Second.").unwrap());
        assert_eq!(render_prompt(&t, &[]), Err(InductionError::EmptyInput));
    }

    #[test]
    fn cleaning() {
        assert_eq!(clean_text("text  with   spaces"), "text with spaces");
        let raw = "Cobalt prices rose.\nhttps://example.com/a?b=1\nMines closed.\nAdvertisement\n";
        assert_eq!(clean_text(raw), "Cobalt prices rose. Mines closed.");
        assert_eq!(clean_text("see www.x.org now"), "see now");
        let extra = [Regex::new(r"\[\d+\]").unwrap()];
        assert_eq!(clean_text_with("cited[12] here", &extra), "cited here");
        for s in [raw, "  a\t\tb  ", "Read more\nx"] {
            let once = clean_text(s);
            assert_eq!(clean_text(&once), once);
        }
    }

    #[test]
    fn stub_returns_example() {
        let t = PromptTemplate::default();
        let stub = |_: &str, _: &str| Ok(t.example_output().unwrap().to_string());
        let out = induce_schema(&doc(&["p"]), &stub, &t, None).unwrap();
        assert_eq!(out.library.len(), 9);
        assert!(out.library.contexts.iter().any(|c| c == "doc1"));
    }

    #[test]
    fn garbage_is_retained() {
        let dir = tempfile::tempdir().unwrap();
        let stub = |_: &str, _: &str| Ok("garbage".to_string());
        let err = induce_schema(&doc(&["p"]), &stub, &PromptTemplate::default(), Some(dir.path())).unwrap_err();
        let InductionError::UnparseableResponse { raw, saved_to, .. } = err else {
            panic!("wrong error");
        };
        assert_eq!(raw, "garbage");
        assert_eq!(fs::read_to_string(saved_to.unwrap()).unwrap(), "garbage");
    }

    #[test]
    fn missing_credential_fails_before_network() {
        let cfg = ChatConfig {
            endpoint: "http://127.0.0.1:9/unreachable".into(),
            api_key_env: "SHIELD_TEST_KEY_THAT_IS_NEVER_SET".into(),
            ..ChatConfig::default()
        };
        let err = HttpChatClient::new(cfg).complete("d", "p").unwrap_err();
        assert!(matches!(err, InductionError::AuthError(_)));
    }

    #[test]
    fn retry_budget_is_bounded() {
        // set only in this test's process-unique variable name
        std::env::set_var("SHIELD_TEST_KEY_RETRY", "k");
        let cfg = ChatConfig {
            endpoint: "http://127.0.0.1:9/closed".into(),
            api_key_env: "SHIELD_TEST_KEY_RETRY".into(),
            timeout_secs: 2,
            retries: 2,
            ..ChatConfig::default()
        };
        match HttpChatClient::new(cfg).complete("d", "p") {
            Err(InductionError::TransportError { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn replay_is_keyed_by_doc() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("doc1.txt"), RECYCLING_TEXT).unwrap();
        let client = ReplayClient::new(dir.path());
        let t = PromptTemplate::default();
        let a = induce_schema(&doc(&["p"]), &client, &t, None).unwrap();
        let b = induce_schema(&doc(&["other text"]), &client, &t, None).unwrap();
        assert_eq!(a, b);
        let mut missing = doc(&["p"]);
        missing.id = "nope".into();
        assert!(matches!(induce_schema(&missing, &client, &t, None), Err(InductionError::TransportError { .. })));
    }
}
