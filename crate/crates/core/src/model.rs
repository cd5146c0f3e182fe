//! Annotation records and their text serialization.
//!
//! An annotation string is a list of records terminated by a terminator token:
//!
//! ```text
//! 他们 | 都是坏人 | Racism | hate [SEP] 你们 | 真烦 | Sexism | hate [END]
//! ```
//!
//! Records hold either three fields (target, argument, targeted group) or four
//! (plus the hatefulness label). All delimiter tokens and label spellings live
//! in [`AnnotationFormat`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vote key assigned to any answer that does not parse.
pub const INVALID_KEY: &str = "<INVALID>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotationFormat {
    pub field_delimiter: String,
    pub record_separator: String,
    pub terminator: String,
    pub hate_label: String,
    pub non_hate_label: String,
}

impl Default for AnnotationFormat {
    fn default() -> Self {
        Self {
            field_delimiter: " | ".to_string(),
            record_separator: "[SEP]".to_string(),
            terminator: "[END]".to_string(),
            hate_label: "hate".to_string(),
            non_hate_label: "non-hate".to_string(),
        }
    }
}

impl AnnotationFormat {
    /// Checks that the tokens are usable for unambiguous splitting.
    pub fn validate(&self) -> Result<(), String> {
        let tokens = [
            ("field_delimiter", self.field_delimiter.trim()),
            ("record_separator", self.record_separator.trim()),
            ("terminator", self.terminator.trim()),
            ("hate_label", self.hate_label.trim()),
            ("non_hate_label", self.non_hate_label.trim()),
        ];
        for (name, tok) in tokens {
            if tok.is_empty() {
                return Err(format!("{name} must not be blank"));
            }
        }
        let structural = &tokens[..3];
        for (i, (a_name, a)) in structural.iter().enumerate() {
            for (b_name, b) in structural.iter().skip(i + 1) {
                if a.contains(b) || b.contains(a) {
                    return Err(format!("{a_name} and {b_name} overlap"));
                }
            }
        }
        if self.hate_label.trim() == self.non_hate_label.trim() {
            return Err("hate_label and non_hate_label must differ".to_string());
        }
        Ok(())
    }

    fn split_token(&self) -> &str {
        self.field_delimiter.trim()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("missing terminator `{0}`")]
    MissingTerminator(String),
    #[error("terminator appears before the end of the annotation")]
    EarlyTerminator,
    #[error("annotation contains no records")]
    Empty,
    #[error("record {record}: expected {expected} fields, found {found}")]
    FieldCount {
        record: usize,
        expected: usize,
        found: usize,
    },
    #[error("record {record}: field `{field}` is empty")]
    EmptyField { record: usize, field: &'static str },
    #[error("record {record}: unknown hatefulness label `{label}`")]
    UnknownLabel { record: usize, label: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arity {
    Triplet,
    Quadruplet,
}

impl Arity {
    pub fn field_count(self) -> usize {
        match self {
            Arity::Triplet => 3,
            Arity::Quadruplet => 4,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Triplet => f.write_str("triplet"),
            Arity::Quadruplet => f.write_str("quadruplet"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hatefulness {
    Hate,
    NonHate,
}

/// Collapses runs of whitespace into single spaces and trims both ends.
pub fn normalize_group(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub target: String,
    pub argument: String,
    pub targeted_group: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quadruplet {
    pub target: String,
    pub argument: String,
    pub targeted_group: String,
    pub hateful: Hatefulness,
}

fn check_span(record: usize, field: &'static str, value: &str) -> Result<(), AnnotationError> {
    if value.trim().is_empty() {
        Err(AnnotationError::EmptyField { record, field })
    } else {
        Ok(())
    }
}

impl Triplet {
    pub fn new(
        target: impl AsRef<str>,
        argument: impl AsRef<str>,
        targeted_group: impl AsRef<str>,
    ) -> Result<Self, AnnotationError> {
        let argument = argument.as_ref().trim().to_string();
        let targeted_group = normalize_group(targeted_group.as_ref());
        check_span(0, "argument", &argument)?;
        check_span(0, "targeted_group", &targeted_group)?;
        Ok(Self {
            target: target.as_ref().trim().to_string(),
            argument,
            targeted_group,
        })
    }
}

impl Quadruplet {
    pub fn new(
        target: impl AsRef<str>,
        argument: impl AsRef<str>,
        targeted_group: impl AsRef<str>,
        hateful: Hatefulness,
    ) -> Result<Self, AnnotationError> {
        let t = Triplet::new(target, argument, targeted_group)?;
        Ok(Self {
            target: t.target,
            argument: t.argument,
            targeted_group: t.targeted_group,
            hateful,
        })
    }
}

/// A record type that can appear in an annotation string.
pub trait Record: Sized + Clone + PartialEq + fmt::Debug {
    const ARITY: Arity;

    /// Builds a record from already-trimmed fields. `record` is the position
    /// of the record inside its annotation, used for error messages.
    fn from_fields(
        record: usize,
        fields: &[&str],
        format: &AnnotationFormat,
    ) -> Result<Self, AnnotationError>;

    fn fields<'a>(&'a self, format: &'a AnnotationFormat) -> Vec<&'a str>;
}

impl Record for Triplet {
    const ARITY: Arity = Arity::Triplet;

    fn from_fields(
        record: usize,
        fields: &[&str],
        _format: &AnnotationFormat,
    ) -> Result<Self, AnnotationError> {
        let [target, argument, group] = fields else {
            return Err(AnnotationError::FieldCount {
                record,
                expected: 3,
                found: fields.len(),
            });
        };
        Triplet::new(target, argument, group).map_err(|e| e.at_record(record))
    }

    fn fields<'a>(&'a self, _format: &'a AnnotationFormat) -> Vec<&'a str> {
        vec![&self.target, &self.argument, &self.targeted_group]
    }
}

impl Record for Quadruplet {
    const ARITY: Arity = Arity::Quadruplet;

    fn from_fields(
        record: usize,
        fields: &[&str],
        format: &AnnotationFormat,
    ) -> Result<Self, AnnotationError> {
        let [target, argument, group, label] = fields else {
            return Err(AnnotationError::FieldCount {
                record,
                expected: 4,
                found: fields.len(),
            });
        };
        let hateful = if *label == format.hate_label.trim() {
            Hatefulness::Hate
        } else if *label == format.non_hate_label.trim() {
            Hatefulness::NonHate
        } else {
            return Err(AnnotationError::UnknownLabel {
                record,
                label: label.to_string(),
            });
        };
        Quadruplet::new(target, argument, group, hateful).map_err(|e| e.at_record(record))
    }

    fn fields<'a>(&'a self, format: &'a AnnotationFormat) -> Vec<&'a str> {
        let label = match self.hateful {
            Hatefulness::Hate => format.hate_label.trim(),
            Hatefulness::NonHate => format.non_hate_label.trim(),
        };
        vec![&self.target, &self.argument, &self.targeted_group, label]
    }
}

impl AnnotationError {
    fn at_record(self, record: usize) -> Self {
        match self {
            AnnotationError::EmptyField { field, .. } => AnnotationError::EmptyField { record, field },
            other => other,
        }
    }
}

/// Ordered, non-empty list of records parsed from one annotation string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationList<R> {
    items: Vec<R>,
}

impl<R: Record> AnnotationList<R> {
    pub fn new(items: Vec<R>) -> Result<Self, AnnotationError> {
        if items.is_empty() {
            return Err(AnnotationError::Empty);
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[R] {
        &self.items
    }

    pub fn into_items(self) -> Vec<R> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn parse(raw: &str, format: &AnnotationFormat) -> Result<Self, AnnotationError> {
        parse_annotation(raw, format)
    }

    pub fn serialize(&self, format: &AnnotationFormat) -> String {
        serialize_annotation(self, format)
    }
}

pub fn parse_annotation<R: Record>(
    raw: &str,
    format: &AnnotationFormat,
) -> Result<AnnotationList<R>, AnnotationError> {
    let terminator = format.terminator.trim();
    let body = raw
        .trim()
        .strip_suffix(terminator)
        .ok_or_else(|| AnnotationError::MissingTerminator(terminator.to_string()))?;
    if body.contains(terminator) {
        return Err(AnnotationError::EarlyTerminator);
    }
    if body.trim().is_empty() {
        return Err(AnnotationError::Empty);
    }

    let expected = R::ARITY.field_count();
    let mut items = Vec::new();
    for (idx, chunk) in body.split(format.record_separator.trim()).enumerate() {
        let fields: Vec<&str> = chunk.split(format.split_token()).map(str::trim).collect();
        if fields.len() != expected {
            return Err(AnnotationError::FieldCount {
                record: idx,
                expected,
                found: fields.len(),
            });
        }
        items.push(R::from_fields(idx, &fields, format)?);
    }
    AnnotationList::new(items)
}

/// Renders the canonical form: `a | b | c [SEP] d | e | f [END]`.
pub fn serialize_annotation<R: Record>(list: &AnnotationList<R>, format: &AnnotationFormat) -> String {
    let delim = format!(" {} ", format.split_token());
    let sep = format!(" {} ", format.record_separator.trim());
    let body = list
        .items
        .iter()
        .map(|r| r.fields(format).join(&delim))
        .collect::<Vec<_>>()
        .join(&sep);
    format!("{body} {}", format.terminator.trim())
}

/// Total normalization used as a vote key. Unparseable input maps to
/// [`INVALID_KEY`].
pub fn canonicalize_answer(raw: &str, arity: Arity, format: &AnnotationFormat) -> String {
    let canonical = match arity {
        Arity::Triplet => parse_annotation::<Triplet>(raw, format).map(|l| l.serialize(format)),
        Arity::Quadruplet => {
            parse_annotation::<Quadruplet>(raw, format).map(|l| l.serialize(format))
        }
    };
    canonical.unwrap_or_else(|_| INVALID_KEY.to_string())
}
