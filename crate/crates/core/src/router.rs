//! Rule-based routing of researcher queries to one of the four features.
//!
//! Routing order: `/mode` commands, then the mode lock, then the rules file
//! in priority order, then the fallback (comprehend while an article is
//! active, general otherwise).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const DEFAULT_RULES: &str = include_str!("../../../rules/switch.rules");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    General,
    Extract,
    Comprehend,
    Inverse,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [Self::General, Self::Extract, Self::Comprehend, Self::Inverse];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::General => "general",
            Self::Extract => "extract",
            Self::Comprehend => "comprehend",
            Self::Inverse => "inverse",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "general" => Ok(Self::General),
            "extract" => Ok(Self::Extract),
            "comprehend" => Ok(Self::Comprehend),
            "inverse" => Ok(Self::Inverse),
            other => Err(format!("unknown feature `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouterError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("unknown article reference {0}")]
    UnknownReference(String),
    #[error("no article is active; name one with `Comprehend the article of reference ID R<n>`")]
    NoActiveArticle,
    #[error("rules file line {line}: {message}")]
    InvalidRule { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeCommand {
    Lock(FeatureKind),
    Auto,
}

/// Where a route came from. Only `Rule` routes end article stickiness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteSource {
    Command,
    ModeLock,
    Rule { line: usize },
    Sticky,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutedQuery {
    pub kind: FeatureKind,
    pub raw_text: String,
    pub params: BTreeMap<String, String>,
    pub command: Option<ModeCommand>,
    pub source: RouteSource,
}

impl RoutedQuery {
    /// Reference id named in the query itself, if any.
    pub fn ref_id(&self) -> Option<&str> {
        self.params.get("ref_id").map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub active_article: Option<String>,
    pub mode_lock: Option<FeatureKind>,
    pub history: Vec<(String, FeatureKind)>,
}

#[derive(Debug, Clone)]
struct Rule {
    priority: i64,
    line: usize,
    feature: FeatureKind,
    pattern: Regex,
    captures_ref: bool,
}

/// An ordered, immutable rule list.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

impl RuleSet {
    /// Parses `priority, feature, pattern` lines. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, RouterError> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let bad = |message: String| RouterError::InvalidRule { line, message };
            let mut parts = trimmed.splitn(3, ',');
            let (Some(prio), Some(feature), Some(pattern)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected `priority, feature, pattern`".into()));
            };
            let priority: i64 = prio.trim().parse().map_err(|_| bad(format!("bad priority `{}`", prio.trim())))?;
            let feature: FeatureKind = feature.parse().map_err(bad)?;
            let pattern = Regex::new(pattern.trim()).map_err(|e| bad(e.to_string()))?;
            let captures_ref = pattern.capture_names().any(|n| n == Some("ref"));
            if captures_ref && feature != FeatureKind::Comprehend {
                return Err(bad("only comprehend rules may capture `ref`".into()));
            }
            rules.push(Rule { priority, line, feature, pattern, captures_ref });
        }
        // stable: equal priorities keep file order
        rules.sort_by_key(|r| r.priority);
        Ok(Self { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::parse(DEFAULT_RULES).expect("built-in rules parse")
    }
}

fn parse_mode_command(query: &str) -> Option<ModeCommand> {
    let rest = query.trim().strip_prefix("/mode")?;
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
        return None;
    }
    match rest.trim().to_ascii_lowercase().as_str() {
        "auto" => Some(ModeCommand::Auto),
        other => other.parse().ok().map(ModeCommand::Lock),
    }
}

/// Routes queries against a rule set and the set of known article ids.
#[derive(Debug, Clone)]
pub struct QueryRouter {
    rules: RuleSet,
    known_refs: HashSet<String>,
}

impl QueryRouter {
    pub fn new(rules: RuleSet, known_refs: impl IntoIterator<Item = String>) -> Self {
        Self { rules, known_refs: known_refs.into_iter().collect() }
    }

    fn checked_ref(&self, raw: &str) -> Result<String, RouterError> {
        let id = raw.to_ascii_uppercase();
        if self.known_refs.contains(&id) {
            Ok(id)
        } else {
            Err(RouterError::UnknownReference(id))
        }
    }

    fn captured_ref(&self, query: &str) -> Option<String> {
        self.rules
            .rules
            .iter()
            .filter(|r| r.captures_ref)
            .find_map(|r| r.pattern.captures(query).and_then(|c| c.name("ref")).map(|m| m.as_str().to_string()))
    }

    /// Pure: the same `(query, state)` always yields the same route.
    pub fn route(&self, query: &str, state: &SessionState) -> Result<RoutedQuery, RouterError> {
        if query.trim().is_empty() {
            return Err(RouterError::EmptyQuery);
        }
        let mut routed = RoutedQuery {
            kind: FeatureKind::General,
            raw_text: query.to_string(),
            params: BTreeMap::new(),
            command: None,
            source: RouteSource::Fallback,
        };

        if let Some(cmd) = parse_mode_command(query) {
            routed.command = Some(cmd);
            routed.source = RouteSource::Command;
            routed.kind = match cmd {
                ModeCommand::Lock(kind) => kind,
                ModeCommand::Auto => FeatureKind::General,
            };
            return Ok(routed);
        }

        if let Some(locked) = state.mode_lock {
            routed.kind = locked;
            routed.source = RouteSource::ModeLock;
            if locked == FeatureKind::Comprehend {
                match self.captured_ref(query) {
                    Some(raw) => {
                        routed.params.insert("ref_id".into(), self.checked_ref(&raw)?);
                    }
                    None if state.active_article.is_some() => {}
                    None => return Err(RouterError::NoActiveArticle),
                }
            }
            return Ok(routed);
        }

        for rule in &self.rules.rules {
            let Some(caps) = rule.pattern.captures(query) else { continue };
            if rule.feature == FeatureKind::Comprehend {
                if let Some(m) = caps.name("ref") {
                    routed.params.insert("ref_id".into(), self.checked_ref(m.as_str())?);
                } else if state.active_article.is_none() {
                    continue;
                }
            }
            routed.kind = rule.feature;
            routed.source = RouteSource::Rule { line: rule.line };
            return Ok(routed);
        }

        if state.active_article.is_some() {
            routed.kind = FeatureKind::Comprehend;
            routed.source = RouteSource::Sticky;
        }
        Ok(routed)
    }
}

/// Folds a route into the session: comprehend routes naming an article
/// activate it, explicit routes elsewhere and `/mode auto` end stickiness,
/// `/mode` commands set or clear the lock, and every route is logged.
pub fn update_session(state: &SessionState, routed: &RoutedQuery) -> SessionState {
    let mut next = state.clone();
    match routed.command {
        Some(ModeCommand::Auto) => {
            next.mode_lock = None;
            next.active_article = None;
        }
        Some(ModeCommand::Lock(kind)) => next.mode_lock = Some(kind),
        None => {}
    }
    if let Some(ref_id) = routed.ref_id() {
        next.active_article = Some(ref_id.to_string());
    } else if matches!(routed.source, RouteSource::Rule { .. }) && routed.kind != FeatureKind::Comprehend {
        next.active_article = None;
    }
    next.history.push((routed.raw_text.clone(), routed.kind));
    next
}
