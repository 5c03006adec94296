//! In-memory model of a mined JSON schema.
//!
//! A [`SchemaDoc`] is a tree of [`SchemaNode`]s. Each node carries its type,
//! an optional description and unit, its value constraints and, for object
//! nodes, the named child properties plus the `required` set. Keywords the
//! model does not understand are kept verbatim in a per-node annotation map
//! so that a parse/serialize round trip never loses what the LLM or an
//! expert wrote.

mod canonical;
mod diff;
mod duplicates;
mod flatten;
mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};
use thiserror::Error;

pub use canonical::{serialize_canonical, to_value};
pub use diff::{diff, Move, Retype, SchemaDiff};
pub use duplicates::{description_similarity, find_duplicates, DuplicateGroup};
pub use flatten::{flatten, FlatEntry};
pub use parse::{parse_schema, parse_value};

/// The closed set of JSON Schema primitive types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeTag {
    String,
    Number,
    Integer,
    Boolean,
    Array,
    Object,
    Null,
}

impl TypeTag {
    pub const ALL: [TypeTag; 7] = [
        TypeTag::String,
        TypeTag::Number,
        TypeTag::Integer,
        TypeTag::Boolean,
        TypeTag::Array,
        TypeTag::Object,
        TypeTag::Null,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TypeTag::String => "string",
            TypeTag::Number => "number",
            TypeTag::Integer => "integer",
            TypeTag::Boolean => "boolean",
            TypeTag::Array => "array",
            TypeTag::Object => "object",
            TypeTag::Null => "null",
        }
    }

    pub fn from_keyword(tag: &str) -> Option<TypeTag> {
        TypeTag::ALL.into_iter().find(|t| t.as_str() == tag)
    }

    pub fn is_scalar(self) -> bool {
        !matches!(self, TypeTag::Array | TypeTag::Object)
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Value constraints attached to a node. `required` lives on the parent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    pub enum_values: Option<Vec<Value>>,
    pub minimum: Option<Number>,
    pub maximum: Option<Number>,
    pub pattern: Option<String>,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.enum_values.is_none()
            && self.minimum.is_none()
            && self.maximum.is_none()
            && self.pattern.is_none()
    }
}

/// Shape of a node. Object and array payloads only exist on their own kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Scalar(TypeTag),
    Object {
        properties: BTreeMap<String, SchemaNode>,
        required: BTreeSet<String>,
    },
    Array {
        items: Box<SchemaNode>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaNode {
    pub kind: NodeKind,
    pub description: Option<String>,
    pub constraints: ConstraintSet,
    /// Free-form physical unit, e.g. `"nm/cycle"`.
    pub unit: Option<String>,
    /// Keywords outside the modelled vocabulary, kept verbatim.
    pub annotations: BTreeMap<String, Value>,
}

impl SchemaNode {
    pub fn scalar(tag: TypeTag) -> Self {
        assert!(tag.is_scalar(), "{tag} is not a scalar type");
        Self::with_kind(NodeKind::Scalar(tag))
    }

    pub fn object() -> Self {
        Self::with_kind(NodeKind::Object {
            properties: BTreeMap::new(),
            required: BTreeSet::new(),
        })
    }

    pub fn array(items: SchemaNode) -> Self {
        Self::with_kind(NodeKind::Array {
            items: Box::new(items),
        })
    }

    fn with_kind(kind: NodeKind) -> Self {
        Self {
            kind,
            description: None,
            constraints: ConstraintSet::default(),
            unit: None,
            annotations: BTreeMap::new(),
        }
    }

    pub fn described(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }

    /// Adds a child property. Panics when called on a non-object node.
    pub fn with_property(mut self, name: impl Into<String>, child: SchemaNode) -> Self {
        match &mut self.kind {
            NodeKind::Object { properties, .. } => {
                properties.insert(name.into(), child);
            }
            _ => panic!("with_property on a non-object node"),
        }
        self
    }

    pub fn type_tag(&self) -> TypeTag {
        match &self.kind {
            NodeKind::Scalar(tag) => *tag,
            NodeKind::Object { .. } => TypeTag::Object,
            NodeKind::Array { .. } => TypeTag::Array,
        }
    }

    pub fn properties(&self) -> Option<&BTreeMap<String, SchemaNode>> {
        match &self.kind {
            NodeKind::Object { properties, .. } => Some(properties),
            _ => None,
        }
    }

    pub fn items(&self) -> Option<&SchemaNode> {
        match &self.kind {
            NodeKind::Array { items } => Some(items),
            _ => None,
        }
    }

    /// Number of nodes in this subtree, including `self`.
    pub fn node_count(&self) -> usize {
        1 + match &self.kind {
            NodeKind::Scalar(_) => 0,
            NodeKind::Object { properties, .. } => properties.values().map(Self::node_count).sum(),
            NodeKind::Array { items } => items.node_count(),
        }
    }
}

/// A whole schema document. The root is always an object node; the root's
/// `title` and `description` are lifted onto the document.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaDoc {
    pub root: SchemaNode,
    pub title: Option<String>,
    pub description: Option<String>,
}

impl SchemaDoc {
    pub fn new(mut root: SchemaNode) -> Result<Self, SchemaError> {
        if root.type_tag() != TypeTag::Object {
            return Err(SchemaError::NotAnObjectRoot);
        }
        let description = root.description.take();
        Ok(Self {
            root,
            title: None,
            description,
        })
    }

    pub fn empty() -> Self {
        Self {
            root: SchemaNode::object(),
            title: None,
            description: None,
        }
    }
}

impl Serialize for SchemaDoc {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        to_value(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SchemaDoc {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        parse_value(value).map_err(serde::de::Error::custom)
    }
}

/// Segment used for the element node of an array.
pub const ARRAY_SEGMENT: &str = "[]";

/// Location of a node inside a document, as a list of property names with
/// [`ARRAY_SEGMENT`] for array hops.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct PropertyPath(Vec<String>);

impl PropertyPath {
    pub fn new(segments: Vec<String>) -> Option<Self> {
        (!segments.is_empty()).then_some(Self(segments))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn child(&self, name: &str) -> Self {
        let mut segments = self.0.clone();
        segments.push(name.to_string());
        Self(segments)
    }

    /// The last real property name, skipping trailing array hops.
    pub fn leaf_name(&self) -> Option<&str> {
        self.0
            .iter()
            .rev()
            .find(|s| s.as_str() != ARRAY_SEGMENT)
            .map(String::as_str)
    }

    pub fn is_array_element(&self) -> bool {
        self.0.last().is_some_and(|s| s == ARRAY_SEGMENT)
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// True when `self` lies strictly below `ancestor`.
    pub fn is_descendant_of(&self, ancestor: &PropertyPath) -> bool {
        self.0.len() > ancestor.0.len() && self.0.starts_with(&ancestor.0)
    }

    /// Parses the rendered form produced by `Display`.
    pub fn parse(rendered: &str) -> Option<Self> {
        let mut segments = Vec::new();
        let mut current = String::new();
        let mut chars = rendered.chars().peekable();
        let mut pending = false;
        while let Some(c) = chars.next() {
            match c {
                '\\' => {
                    current.push(chars.next()?);
                    pending = true;
                }
                '.' => {
                    if !pending {
                        return None;
                    }
                    segments.push(std::mem::take(&mut current));
                    pending = false;
                }
                '[' => {
                    if chars.next()? != ']' {
                        return None;
                    }
                    if pending {
                        segments.push(std::mem::take(&mut current));
                    } else if !segments.last().is_some_and(|s| s == ARRAY_SEGMENT) {
                        return None;
                    }
                    segments.push(ARRAY_SEGMENT.to_string());
                    pending = false;
                    if chars.peek() == Some(&'.') {
                        chars.next();
                        if chars.peek().is_none() {
                            return None;
                        }
                    }
                }
                c => {
                    current.push(c);
                    pending = true;
                }
            }
        }
        if pending {
            segments.push(current);
        }
        Self::new(segments)
    }
}

impl fmt::Display for PropertyPath {
    /// Segments are joined with `.`; array hops render as a `[]` suffix
    /// (`steps[].name`). `\`, `.` and `[` inside names are escaped.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, segment) in self.0.iter().enumerate() {
            if segment == ARRAY_SEGMENT {
                f.write_str(ARRAY_SEGMENT)?;
                continue;
            }
            if i > 0 {
                f.write_str(".")?;
            }
            for c in segment.chars() {
                if matches!(c, '\\' | '.' | '[') {
                    f.write_str("\\")?;
                }
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl From<PropertyPath> for String {
    fn from(path: PropertyPath) -> Self {
        path.to_string()
    }
}

impl TryFrom<String> for PropertyPath {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        PropertyPath::parse(&value).ok_or_else(|| format!("invalid property path `{value}`"))
    }
}

/// 1-based line/column of a JSON syntax error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPosition {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for TextPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {} column {}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaError {
    #[error("malformed JSON at {position}: {message}")]
    MalformedJson {
        position: TextPosition,
        message: String,
    },
    #[error("schema root is not an object")]
    NotAnObjectRoot,
    #[error("unknown type tag `{tag}` at {path}")]
    UnknownTypeTag { tag: String, path: String },
    #[error("missing type at {path}")]
    MissingType { path: String },
    #[error("invalid schema at {path}: {message}")]
    Invalid { path: String, message: String },
}

impl SchemaError {
    pub fn position(&self) -> Option<TextPosition> {
        match self {
            SchemaError::MalformedJson { position, .. } => Some(*position),
            _ => None,
        }
    }
}
