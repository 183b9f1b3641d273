//! Deterministic rule-table backend.
//!
//! Rules are tried in order and the first matching rule produces the reply,
//! so the output is a pure function of the request. The last rule must be a
//! catch-all.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Backend, BackendError, CompletionRequest, Purpose, Role};

type Predicate = dyn Fn(&CompletionRequest) -> bool + Send + Sync;
type Generator = dyn Fn(&CompletionRequest) -> String + Send + Sync;

#[derive(Clone)]
pub enum Matcher {
    Any,
    Purpose(Purpose),
    /// Substring of any message, or only of messages with the given role.
    Contains {
        text: String,
        role: Option<Role>,
    },
    All(Vec<Matcher>),
    Not(Box<Matcher>),
    Custom(Arc<Predicate>),
}

impl Matcher {
    pub fn contains(text: impl Into<String>) -> Self {
        Matcher::Contains {
            text: text.into(),
            role: None,
        }
    }

    pub fn custom(f: impl Fn(&CompletionRequest) -> bool + Send + Sync + 'static) -> Self {
        Matcher::Custom(Arc::new(f))
    }

    pub fn matches(&self, request: &CompletionRequest) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Purpose(p) => request.purpose == *p,
            Matcher::Contains { text, role } => request
                .messages
                .iter()
                .filter(|m| role.is_none_or(|r| m.role == r))
                .any(|m| m.content.contains(text.as_str())),
            Matcher::All(ms) => ms.iter().all(|m| m.matches(request)),
            Matcher::Not(m) => !m.matches(request),
            Matcher::Custom(f) => f(request),
        }
    }
}

impl fmt::Debug for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Matcher::Any => write!(f, "Any"),
            Matcher::Purpose(p) => write!(f, "Purpose({p})"),
            Matcher::Contains { text, role } => write!(f, "Contains({text:?}, {role:?})"),
            Matcher::All(ms) => f.debug_tuple("All").field(ms).finish(),
            Matcher::Not(m) => f.debug_tuple("Not").field(m).finish(),
            Matcher::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Clone)]
pub enum Responder {
    Fixed(String),
    /// Repeats the content of the last user message.
    EchoLastUser,
    Custom(Arc<Generator>),
}

impl Responder {
    pub fn custom(f: impl Fn(&CompletionRequest) -> String + Send + Sync + 'static) -> Self {
        Responder::Custom(Arc::new(f))
    }

    fn respond(&self, request: &CompletionRequest) -> String {
        match self {
            Responder::Fixed(s) => s.clone(),
            Responder::EchoLastUser => request.last_user_text().unwrap_or_default().to_string(),
            Responder::Custom(f) => f(request),
        }
    }
}

impl fmt::Debug for Responder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Responder::Fixed(s) => write!(f, "Fixed({s:?})"),
            Responder::EchoLastUser => write!(f, "EchoLastUser"),
            Responder::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MockRule {
    pub matcher: Matcher,
    pub responder: Responder,
}

impl MockRule {
    pub fn new(matcher: Matcher, responder: Responder) -> Self {
        Self { matcher, responder }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MockError {
    #[error("mock program has no rules")]
    NoRules,
    #[error("the last mock rule must match every request")]
    NoCatchAll,
    #[error("cannot parse mock rules: {0}")]
    Parse(String),
}

#[derive(Clone, Debug)]
pub struct MockBackend {
    rules: Vec<MockRule>,
}

/// Builds a mock backend from an ordered rule table ending in a catch-all.
pub fn mock_program(rules: Vec<MockRule>) -> Result<MockBackend, MockError> {
    match rules.last() {
        None => Err(MockError::NoRules),
        Some(last) if !matches!(last.matcher, Matcher::Any) => Err(MockError::NoCatchAll),
        Some(_) => Ok(MockBackend { rules }),
    }
}

impl MockBackend {
    pub fn respond(&self, request: &CompletionRequest) -> String {
        self.rules
            .iter()
            .find(|r| r.matcher.matches(request))
            .map(|r| r.responder.respond(request))
            .expect("catch-all rule matches")
    }

    /// Parses a JSON rule file (see [`RuleSpec`]).
    pub fn from_json(text: &str) -> Result<Self, MockError> {
        let specs: Vec<RuleSpec> =
            serde_json::from_str(text).map_err(|e| MockError::Parse(e.to_string()))?;
        let rules = specs
            .into_iter()
            .map(RuleSpec::into_rule)
            .collect::<Result<Vec<_>, _>>()?;
        mock_program(rules)
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        Ok(self.respond(request))
    }
}

/// Serialized rule: `{"match": "*" | {purpose?, contains?, role?}, "respond": {"text": ..} | {"echo": "last_user"}}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RuleSpec {
    #[serde(rename = "match")]
    pub matcher: MatcherSpec,
    pub respond: ResponderSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatcherSpec {
    Wildcard(String),
    Fields {
        #[serde(default)]
        purpose: Option<Purpose>,
        #[serde(default)]
        contains: Option<String>,
        #[serde(default)]
        role: Option<Role>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponderSpec {
    Text(String),
    Echo(EchoMode),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EchoMode {
    LastUser,
}

impl RuleSpec {
    fn into_rule(self) -> Result<MockRule, MockError> {
        let matcher = match self.matcher {
            MatcherSpec::Wildcard(s) if s == "*" => Matcher::Any,
            MatcherSpec::Wildcard(s) => {
                return Err(MockError::Parse(format!("unknown matcher {s:?}")))
            }
            MatcherSpec::Fields {
                purpose,
                contains,
                role,
            } => {
                let mut parts = Vec::new();
                if let Some(p) = purpose {
                    parts.push(Matcher::Purpose(p));
                }
                if let Some(text) = contains {
                    parts.push(Matcher::Contains { text, role });
                } else if role.is_some() {
                    return Err(MockError::Parse("`role` needs `contains`".into()));
                }
                match parts.len() {
                    0 => Matcher::Any,
                    1 => parts.pop().expect("one part"),
                    _ => Matcher::All(parts),
                }
            }
        };
        let responder = match self.respond {
            ResponderSpec::Text(t) => Responder::Fixed(t),
            ResponderSpec::Echo(EchoMode::LastUser) => Responder::EchoLastUser,
        };
        Ok(MockRule::new(matcher, responder))
    }
}

/// Inner text of the first `<tag>...</tag>` block in `text`, trimmed.
pub fn extract_tag<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = start + text[start..].find(&close)?;
    Some(text[start..end].trim())
}

/// [`extract_tag`] over every message of a request, last user message first.
pub fn request_tag<'a>(request: &'a CompletionRequest, tag: &str) -> Option<&'a str> {
    request
        .messages
        .iter()
        .rev()
        .find_map(|m| extract_tag(&m.content, tag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;

    fn req(purpose: Purpose, user: &str) -> CompletionRequest {
        CompletionRequest {
            messages: vec![ChatMessage::system("sys"), ChatMessage::user(user)],
            temperature: 0.0,
            max_tokens: 8,
            purpose,
        }
    }

    #[test]
    fn catch_all_required() {
        assert_eq!(mock_program(vec![]).unwrap_err(), MockError::NoRules);
        let err = mock_program(vec![MockRule::new(
            Matcher::Purpose(Purpose::Mutate),
            Responder::Fixed("x".into()),
        )])
        .unwrap_err();
        assert_eq!(err, MockError::NoCatchAll);
    }

    #[test]
    fn wildcard_answers_everything() {
        let m = mock_program(vec![MockRule::new(Matcher::Any, Responder::Fixed("OK".into()))]).unwrap();
        for p in Purpose::ALL {
            assert_eq!(m.respond(&req(p, "anything")), "OK");
        }
    }

    #[test]
    fn first_match_wins_and_is_deterministic() {
        let m = mock_program(vec![
            MockRule::new(Matcher::Purpose(Purpose::Paraphrase), Responder::Fixed(r#"["a"]"#.into())),
            MockRule::new(Matcher::contains("hello"), Responder::EchoLastUser),
            MockRule::new(Matcher::Any, Responder::Fixed("fallback".into())),
        ])
        .unwrap();
        assert_eq!(m.respond(&req(Purpose::Paraphrase, "hello")), r#"["a"]"#);
        assert_eq!(m.respond(&req(Purpose::Mutate, "hello there")), "hello there");
        assert_eq!(m.respond(&req(Purpose::Mutate, "bye")), "fallback");
        let r = req(Purpose::Crossover, "hello");
        assert_eq!(m.respond(&r), m.respond(&r.clone()));
    }

    #[test]
    fn scripted_crossover_from_tags() {
        let first_sentence = |s: &str| s.split_inclusive(". ").next().unwrap_or(s).trim().to_string();
        let last_sentence = |s: &str| s.rsplit(". ").next().unwrap_or(s).trim().to_string();
        let m = mock_program(vec![
            MockRule::new(
                Matcher::Purpose(Purpose::Crossover),
                Responder::custom(move |r| {
                    let b = request_tag(r, "better_prompt").unwrap();
                    let w = request_tag(r, "worse_prompt").unwrap();
                    format!("{} {}", first_sentence(b), last_sentence(w))
                }),
            ),
            MockRule::new(Matcher::Any, Responder::Fixed("?".into())),
        ])
        .unwrap();
        let r = req(
            Purpose::Crossover,
            "<better_prompt>\nA. B.\n</better_prompt>\n<worse_prompt>\nC. D.\n</worse_prompt>",
        );
        assert_eq!(m.respond(&r), "A. D.");
    }

    #[test]
    fn json_rules() {
        let m = MockBackend::from_json(
            r#"[
                {"match": {"purpose": "task_inference", "contains": "great", "role": "user"}, "respond": {"text": "positive"}},
                {"match": {"purpose": "task_inference"}, "respond": {"echo": "last_user"}},
                {"match": "*", "respond": {"text": "OK"}}
            ]"#,
        )
        .unwrap();
        assert_eq!(m.respond(&req(Purpose::TaskInference, "a great film")), "positive");
        assert_eq!(m.respond(&req(Purpose::TaskInference, "meh")), "meh");
        assert_eq!(m.respond(&req(Purpose::Mutate, "meh")), "OK");
        assert!(MockBackend::from_json(r#"[{"match": {"purpose": "mutate"}, "respond": {"text": "x"}}]"#).is_err());
        assert!(MockBackend::from_json("not json").is_err());
    }

    #[test]
    fn tag_extraction() {
        assert_eq!(extract_tag("x <a>\n hi \n</a> y", "a"), Some("hi"));
        assert_eq!(extract_tag("<a>unterminated", "a"), None);
        assert_eq!(extract_tag("nothing", "a"), None);
    }
}
