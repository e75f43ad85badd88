//! Metadata extraction through a closed query language.
//!
//! The language model only ever produces query text. That text is parsed
//! into a [`QueryPlan`] and validated against the seven manifest fields
//! before anything touches the data, so no model output is executed as
//! code.
//!
//! ```text
//! COUNT [WHERE pred (AND pred)*]
//! SELECT field (, field)* [WHERE pred (AND pred)*] [LIMIT n]
//! pred := field OP value        OP := EQ NEQ LT LTE GT GTE CONTAINS ICONTAINS
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::ArticleMeta;
use crate::llm::{LanguageModel, LlmError};

pub const EXTRACT_PROMPT: &str = include_str!("../../../prompts/extract.txt");
/// First attempt plus two retries with error feedback.
pub const MAX_TRANSLATION_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("syntax error at {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("type error: {0}")]
    Type(String),
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ExtractError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("no valid query after {attempts} attempts; last error: {last_error}")]
    TranslationExhausted { attempts: usize, last_error: QueryError, last_output: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    RefId,
    Year,
    Title,
    Abstract,
    Journal,
    Authors,
    Doi,
}

impl Field {
    pub const ALL: [Field; 7] =
        [Self::RefId, Self::Year, Self::Title, Self::Abstract, Self::Journal, Self::Authors, Self::Doi];

    pub fn name(self) -> &'static str {
        match self {
            Self::RefId => "ref_id",
            Self::Year => "year",
            Self::Title => "title",
            Self::Abstract => "abstract",
            Self::Journal => "journal",
            Self::Authors => "authors",
            Self::Doi => "doi",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name().eq_ignore_ascii_case(name))
    }

    fn is_numeric(self) -> bool {
        self == Self::Year
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Eq,
    Neq,
    Lt,
    Lte,
    Gt,
    Gte,
    Contains,
    IContains,
}

impl Op {
    pub const ALL: [Op; 8] = [Self::Eq, Self::Neq, Self::Lt, Self::Lte, Self::Gt, Self::Gte, Self::Contains, Self::IContains];

    pub fn keyword(self) -> &'static str {
        match self {
            Self::Eq => "EQ",
            Self::Neq => "NEQ",
            Self::Lt => "LT",
            Self::Lte => "LTE",
            Self::Gt => "GT",
            Self::Gte => "GTE",
            Self::Contains => "CONTAINS",
            Self::IContains => "ICONTAINS",
        }
    }

    fn from_keyword(word: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.keyword().eq_ignore_ascii_case(word))
    }

    fn is_ordering(self) -> bool {
        matches!(self, Self::Lt | Self::Lte | Self::Gt | Self::Gte)
    }

    fn is_substring(self) -> bool {
        matches!(self, Self::Contains | Self::IContains)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub field: Field,
    pub op: Op,
    pub value: Value,
}

impl Predicate {
    /// Enforces: ordering ops only on `year`, substring ops only on text,
    /// and the literal type matches the field.
    pub fn check(&self) -> Result<(), QueryError> {
        let name = self.field.name();
        if self.field.is_numeric() {
            if self.op.is_substring() {
                return Err(QueryError::Type(format!("{} cannot be applied to numeric field {name}", self.op.keyword())));
            }
            if !matches!(self.value, Value::Int(_)) {
                return Err(QueryError::Type(format!("field {name} needs an integer value")));
            }
        } else {
            if self.op.is_ordering() {
                return Err(QueryError::Type(format!("{} cannot be applied to text field {name}", self.op.keyword())));
            }
            if !matches!(self.value, Value::Text(_)) {
                return Err(QueryError::Type(format!("field {name} needs a quoted text value")));
            }
        }
        Ok(())
    }

    pub fn matches(&self, row: &ArticleMeta) -> bool {
        match (&self.value, self.field) {
            (Value::Int(v), Field::Year) => {
                let y = row.year;
                match self.op {
                    Op::Eq => y == *v,
                    Op::Neq => y != *v,
                    Op::Lt => y < *v,
                    Op::Lte => y <= *v,
                    Op::Gt => y > *v,
                    Op::Gte => y >= *v,
                    Op::Contains | Op::IContains => false,
                }
            }
            (Value::Text(v), Field::Authors) => match self.op {
                Op::Neq => !row.authors.iter().any(|a| text_matches(Op::Eq, a, v)),
                op => row.authors.iter().any(|a| text_matches(op, a, v)),
            },
            (Value::Text(v), field) => text_matches(self.op, text_field(row, field), v),
            _ => false,
        }
    }
}

fn text_matches(op: Op, hay: &str, needle: &str) -> bool {
    match op {
        Op::Eq => hay == needle,
        Op::Neq => hay != needle,
        Op::Contains => hay.contains(needle),
        Op::IContains => hay.to_lowercase().contains(&needle.to_lowercase()),
        _ => false,
    }
}

fn text_field(row: &ArticleMeta, field: Field) -> &str {
    match field {
        Field::RefId => &row.ref_id,
        Field::Title => &row.title,
        Field::Abstract => &row.abstract_text,
        Field::Journal => &row.journal,
        Field::Doi => &row.doi,
        Field::Year | Field::Authors => "",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verb {
    Select,
    Count,
}

/// A parsed, validated query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub verb: Verb,
    /// Empty for COUNT.
    pub fields: Vec<Field>,
    pub predicates: Vec<Predicate>,
    pub limit: Option<u64>,
}

impl QueryPlan {
    pub fn validate(&self) -> Result<(), QueryError> {
        if self.verb == Verb::Select && self.fields.is_empty() {
            return Err(QueryError::Syntax { position: 0, message: "SELECT needs at least one field".into() });
        }
        if self.limit == Some(0) {
            return Err(QueryError::Syntax { position: 0, message: "LIMIT must be positive".into() });
        }
        self.predicates.iter().try_for_each(Predicate::check)
    }

    /// Canonical text form; `parse_dsl(&plan.render()) == Ok(plan)`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        match self.verb {
            Verb::Count => out.push_str("COUNT"),
            Verb::Select => {
                out.push_str("SELECT ");
                let names: Vec<_> = self.fields.iter().map(|f| f.name()).collect();
                out.push_str(&names.join(", "));
            }
        }
        for (i, p) in self.predicates.iter().enumerate() {
            out.push_str(if i == 0 { " WHERE " } else { " AND " });
            out.push_str(p.field.name());
            out.push(' ');
            out.push_str(p.op.keyword());
            out.push(' ');
            match &p.value {
                Value::Int(v) => out.push_str(&v.to_string()),
                Value::Text(s) => {
                    out.push('\'');
                    out.push_str(&s.replace('\'', "''"));
                    out.push('\'');
                }
            }
        }
        if let (Verb::Select, Some(n)) = (self.verb, self.limit) {
            out.push_str(&format!(" LIMIT {n}"));
        }
        out
    }
}

impl fmt::Display for QueryPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word(String),
    Int(i64),
    Str(String),
    Comma,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn syntax(&self, position: usize, message: impl Into<String>) -> QueryError {
        QueryError::Syntax { position, message: message.into() }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>, QueryError> {
        let bytes = self.src.as_bytes();
        let mut out = Vec::new();
        while self.pos < bytes.len() {
            let c = bytes[self.pos];
            let start = self.pos;
            if c.is_ascii_whitespace() {
                self.pos += 1;
            } else if c == b',' {
                self.pos += 1;
                out.push((start, Tok::Comma));
            } else if c == b'\'' {
                self.pos += 1;
                let mut s = String::new();
                loop {
                    let rest = &self.src[self.pos..];
                    let Some(q) = rest.find('\'') else {
                        return Err(self.syntax(start, "unterminated string literal"));
                    };
                    s.push_str(&rest[..q]);
                    self.pos += q + 1;
                    if self.src[self.pos..].starts_with('\'') {
                        s.push('\'');
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                out.push((start, Tok::Str(s)));
            } else if c.is_ascii_digit() || (c == b'-' && bytes.get(self.pos + 1).is_some_and(u8::is_ascii_digit)) {
                self.pos += 1;
                while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let text = &self.src[start..self.pos];
                let v = text.parse().map_err(|_| self.syntax(start, format!("integer `{text}` out of range")))?;
                out.push((start, Tok::Int(v)));
            } else if c.is_ascii_alphabetic() || c == b'_' {
                while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_') {
                    self.pos += 1;
                }
                out.push((start, Tok::Word(self.src[start..self.pos].to_string())));
            } else {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                return Err(self.syntax(start, format!("unexpected character `{ch}`")));
            }
        }
        Ok(out)
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    idx: usize,
    end: usize,
}

impl Parser {
    fn pos(&self) -> usize {
        self.toks.get(self.idx).map(|t| t.0).unwrap_or(self.end)
    }

    fn err(&self, message: impl Into<String>) -> QueryError {
        QueryError::Syntax { position: self.pos(), message: message.into() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|t| &t.1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|t| t.1.clone());
        self.idx += 1;
        t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn field(&mut self) -> Result<Field, QueryError> {
        match self.peek().cloned() {
            Some(Tok::Word(w)) => {
                let f = Field::from_name(&w).ok_or(QueryError::UnknownField(w))?;
                self.idx += 1;
                Ok(f)
            }
            _ => Err(self.err("expected a field name")),
        }
    }

    fn predicate(&mut self) -> Result<Predicate, QueryError> {
        let field = self.field()?;
        let op = match self.peek() {
            Some(Tok::Word(w)) => Op::from_keyword(w).ok_or_else(|| self.err(format!("unknown operator `{w}`")))?,
            _ => return Err(self.err("expected an operator")),
        };
        self.idx += 1;
        let value = match self.next() {
            Some(Tok::Int(v)) => Value::Int(v),
            Some(Tok::Str(s)) => Value::Text(s),
            _ => {
                self.idx -= 1;
                return Err(self.err("expected an integer or a quoted string"));
            }
        };
        let pred = Predicate { field, op, value };
        pred.check()?;
        Ok(pred)
    }

    fn plan(&mut self) -> Result<QueryPlan, QueryError> {
        let verb = if self.at_keyword("SELECT") {
            Verb::Select
        } else if self.at_keyword("COUNT") {
            Verb::Count
        } else {
            return Err(self.err("query must start with SELECT or COUNT"));
        };
        self.idx += 1;

        let mut fields = Vec::new();
        if verb == Verb::Select {
            fields.push(self.field()?);
            while self.peek() == Some(&Tok::Comma) {
                self.idx += 1;
                fields.push(self.field()?);
            }
        }

        let mut predicates = Vec::new();
        if self.at_keyword("WHERE") {
            self.idx += 1;
            predicates.push(self.predicate()?);
            while self.at_keyword("AND") {
                self.idx += 1;
                predicates.push(self.predicate()?);
            }
        }

        let mut limit = None;
        if verb == Verb::Select && self.at_keyword("LIMIT") {
            self.idx += 1;
            match self.next() {
                Some(Tok::Int(n)) if n > 0 => limit = Some(n as u64),
                _ => {
                    self.idx -= 1;
                    return Err(self.err("LIMIT needs a positive integer"));
                }
            }
        }

        if self.idx < self.toks.len() {
            return Err(self.err("unexpected trailing input"));
        }
        Ok(QueryPlan { verb, fields, predicates, limit })
    }
}

/// Parses and validates query text. Keywords and field names are
/// case-insensitive; whitespace is insignificant outside string literals.
pub fn parse_dsl(text: &str) -> Result<QueryPlan, QueryError> {
    let toks = Lexer { src: text, pos: 0 }.tokens()?;
    Parser { toks, idx: 0, end: text.len() }.plan()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Text(String),
    List(Vec<String>),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Int(v) => write!(f, "{v}"),
            Self::Text(s) => f.write_str(s),
            Self::List(items) => f.write_str(&items.join("; ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    /// One row per line, cells separated by ` | `.
    pub fn to_text(&self) -> String {
        self.rows
            .iter()
            .map(|r| r.iter().map(ToString::to_string).collect::<Vec<_>>().join(" | "))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Values of the first column, for single-column answers.
    pub fn first_column(&self) -> Vec<String> {
        self.rows.iter().filter_map(|r| r.first()).map(ToString::to_string).collect()
    }
}

fn cell(row: &ArticleMeta, field: Field) -> Cell {
    match field {
        Field::Year => Cell::Int(row.year),
        Field::Authors => Cell::List(row.authors.clone()),
        other => Cell::Text(text_field(row, other).to_string()),
    }
}

/// Runs a plan over manifest rows. Predicates are ANDed, row order is
/// manifest order.
pub fn execute(plan: &QueryPlan, rows: &[ArticleMeta]) -> ResultTable {
    let mut hits = rows.iter().filter(|row| plan.predicates.iter().all(|p| p.matches(row)));
    match plan.verb {
        Verb::Count => ResultTable { columns: vec!["count".into()], rows: vec![vec![Cell::Int(hits.count() as i64)]] },
        Verb::Select => {
            let limit = plan.limit.map(|n| n as usize).unwrap_or(usize::MAX);
            ResultTable {
                columns: plan.fields.iter().map(|f| f.name().to_string()).collect(),
                rows: hits.by_ref().take(limit).map(|row| plan.fields.iter().map(|&f| cell(row, f)).collect()).collect(),
            }
        }
    }
}

/// Pulls the query line out of a model reply: drops code fences, a
/// leading `Query:` label and a trailing semicolon.
pub fn clean_model_output(raw: &str) -> String {
    let mut candidate = None;
    for line in raw.lines() {
        let mut l = line.trim().trim_matches('`').trim();
        for label in ["Query:", "query:", "DSL:", "dsl:"] {
            if let Some(rest) = l.strip_prefix(label) {
                l = rest.trim();
            }
        }
        let upper = l.to_ascii_uppercase();
        if upper.starts_with("SELECT") || upper.starts_with("COUNT") {
            candidate = Some(l.to_string());
            break;
        }
    }
    candidate.unwrap_or_else(|| raw.trim().to_string()).trim_end_matches(';').trim().to_string()
}

fn translation_prompt(question: &str) -> String {
    EXTRACT_PROMPT.replace("{question}", question.trim())
}

/// One translation call: question in, raw query text out.
pub async fn translate(question: &str, llm: &dyn LanguageModel) -> Result<String, ExtractError> {
    if question.trim().is_empty() {
        return Err(ExtractError::EmptyQuestion);
    }
    Ok(clean_model_output(&llm.generate(&translation_prompt(question)).await?.text))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractAnswer {
    pub dsl: String,
    pub plan: QueryPlan,
    pub table: ResultTable,
    pub attempts: usize,
}

/// Translates, parses and executes, feeding parser errors back to the model
/// for up to two retries.
pub async fn answer_question(
    question: &str,
    llm: &dyn LanguageModel,
    rows: &[ArticleMeta],
) -> Result<ExtractAnswer, ExtractError> {
    if question.trim().is_empty() {
        return Err(ExtractError::EmptyQuestion);
    }
    let base = translation_prompt(question);
    let mut prompt = base.clone();
    let mut last = None;
    for attempt in 1..=MAX_TRANSLATION_ATTEMPTS {
        let dsl = clean_model_output(&llm.generate(&prompt).await?.text);
        match parse_dsl(&dsl) {
            Ok(plan) => {
                let table = execute(&plan, rows);
                return Ok(ExtractAnswer { dsl, plan, table, attempts: attempt });
            }
            Err(e) => {
                tracing::debug!(attempt, %dsl, "query rejected: {e}");
                prompt = format!(
                    "{base}\n\nYour previous reply `{dsl}` was rejected: {e}. Reply with a corrected query only.\nQuery:"
                );
                last = Some((e, dsl));
            }
        }
    }
    let (last_error, last_output) = last.expect("at least one attempt");
    Err(ExtractError::TranslationExhausted { attempts: MAX_TRANSLATION_ATTEMPTS, last_error, last_output })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, year: i64, journal: &str, abs: &str) -> ArticleMeta {
        ArticleMeta {
            ref_id: id.into(),
            year,
            title: format!("Title {id}"),
            abstract_text: abs.into(),
            journal: journal.into(),
            authors: vec!["A. Author".into(), "B. O'Brien".into()],
            doi: format!("10.0000/{id}"),
        }
    }

    #[test]
    fn parses_select_with_contains() {
        let plan = parse_dsl("SELECT ref_id, title WHERE abstract CONTAINS 'MoC'").unwrap();
        assert_eq!(plan.verb, Verb::Select);
        assert_eq!(plan.fields, vec![Field::RefId, Field::Title]);
        assert_eq!(plan.predicates.len(), 1);
        assert_eq!(plan.predicates[0].op, Op::Contains);
    }

    #[test]
    fn unknown_field_is_reported() {
        assert_eq!(parse_dsl("SELECT nonsense WHERE year EQ 2021"), Err(QueryError::UnknownField("nonsense".into())));
    }

    #[test]
    fn ordering_op_on_text_is_a_type_error() {
        assert!(matches!(parse_dsl("SELECT title WHERE title GT 5"), Err(QueryError::Type(_))));
        assert!(matches!(parse_dsl("SELECT title WHERE year CONTAINS '20'"), Err(QueryError::Type(_))));
        assert!(matches!(parse_dsl("SELECT title WHERE year EQ '2021'"), Err(QueryError::Type(_))));
        assert!(matches!(parse_dsl("SELECT title WHERE journal EQ 5"), Err(QueryError::Type(_))));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        match parse_dsl("SELECT title WHERE year EQ 2021 extra") {
            Err(QueryError::Syntax { position, .. }) => assert_eq!(position, 32),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_dsl("DELETE title"), Err(QueryError::Syntax { position: 0, .. })));
        assert!(matches!(parse_dsl("SELECT title WHERE title EQ 'open"), Err(QueryError::Syntax { .. })));
        assert!(matches!(parse_dsl("SELECT title LIMIT 0"), Err(QueryError::Syntax { .. })));
        assert!(matches!(parse_dsl("COUNT LIMIT 3"), Err(QueryError::Syntax { .. })));
        assert!(matches!(parse_dsl(""), Err(QueryError::Syntax { .. })));
    }

    #[test]
    fn whitespace_and_keyword_case_are_insignificant() {
        let a = parse_dsl("select   title,journal where year eq 2021 and journal icontains 'nat'  limit 2").unwrap();
        let b = parse_dsl("SELECT title, journal WHERE year EQ 2021 AND journal ICONTAINS 'nat' LIMIT 2").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quotes_are_escaped_by_doubling() {
        let plan = parse_dsl("SELECT ref_id WHERE authors EQ 'B. O''Brien'").unwrap();
        assert_eq!(plan.predicates[0].value, Value::Text("B. O'Brien".into()));
        assert_eq!(parse_dsl(&plan.render()).unwrap(), plan);
    }

    #[test]
    fn execute_filters_projects_and_counts() {
        let rows = vec![
            row("R1", 2017, "Science", "Au on α-MoC"),
            row("R2", 2021, "Nature", "Pt on α-MoC"),
            row("R3", 2021, "Catalysts", "MOC-free ceria"),
        ];
        let t = execute(&parse_dsl("SELECT ref_id WHERE abstract CONTAINS 'MoC'").unwrap(), &rows);
        assert_eq!(t.first_column(), vec!["R1", "R2"]);
        let t = execute(&parse_dsl("SELECT ref_id WHERE abstract ICONTAINS 'moc'").unwrap(), &rows);
        assert_eq!(t.rows.len(), 3);
        let t = execute(&parse_dsl("COUNT WHERE year EQ 3000").unwrap(), &rows);
        assert_eq!(t.rows, vec![vec![Cell::Int(0)]]);
        let t = execute(&parse_dsl("SELECT journal WHERE year GTE 2021 LIMIT 1").unwrap(), &rows);
        assert_eq!(t.first_column(), vec!["Nature"]);
        let t = execute(&parse_dsl("COUNT WHERE authors CONTAINS 'Brien'").unwrap(), &rows);
        assert_eq!(t.rows[0][0], Cell::Int(3));
        let t = execute(&parse_dsl("COUNT WHERE authors NEQ 'A. Author'").unwrap(), &rows);
        assert_eq!(t.rows[0][0], Cell::Int(0));
    }

    #[test]
    fn cleans_fenced_model_output() {
        assert_eq!(clean_model_output("```\nSELECT journal WHERE year EQ 2021;\n```"), "SELECT journal WHERE year EQ 2021");
        assert_eq!(clean_model_output("Query: COUNT"), "COUNT");
        assert_eq!(clean_model_output("  I think\n  "), "I think");
    }
}
