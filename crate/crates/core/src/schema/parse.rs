use std::collections::{BTreeMap, BTreeSet};

use serde_json::{Map, Value};

use super::{ConstraintSet, NodeKind, SchemaDoc, SchemaError, SchemaNode, TextPosition, TypeTag};

/// Parses a JSON schema document.
///
/// A missing `type` is inferred as `object` when `properties` is present and
/// as `array` when `items` is present; otherwise it is an error. Keywords
/// outside the modelled vocabulary end up in [`SchemaNode::annotations`].
pub fn parse_schema(text: &str) -> Result<SchemaDoc, SchemaError> {
    let value: Value = serde_json::from_str(text).map_err(|err| SchemaError::MalformedJson {
        position: TextPosition {
            line: err.line(),
            column: err.column(),
        },
        message: strip_position_suffix(&err.to_string()),
    })?;
    parse_value(value)
}

/// Builds a document from an already-decoded JSON value.
pub fn parse_value(value: Value) -> Result<SchemaDoc, SchemaError> {
    let Value::Object(mut map) = value else {
        return Err(SchemaError::NotAnObjectRoot);
    };

    let title = take_string(&mut map, "title");
    let description = take_string(&mut map, "description");
    let root = parse_node(map, &Location::root())?;
    if root.type_tag() != TypeTag::Object {
        return Err(SchemaError::NotAnObjectRoot);
    }
    Ok(SchemaDoc {
        root,
        title,
        description,
    })
}

fn strip_position_suffix(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(idx) => message[..idx].to_string(),
        None => message.to_string(),
    }
}

/// Removes `key` only when it holds a string.
fn take_string(map: &mut Map<String, Value>, key: &str) -> Option<String> {
    match map.get(key) {
        Some(Value::String(_)) => match map.remove(key) {
            Some(Value::String(s)) => Some(s),
            _ => unreachable!(),
        },
        _ => None,
    }
}

struct Location(Vec<String>);

impl Location {
    fn root() -> Self {
        Self(Vec::new())
    }

    fn child(&self, segment: &str) -> Self {
        let mut segments = self.0.clone();
        segments.push(segment.to_string());
        Self(segments)
    }

    fn render(&self) -> String {
        match super::PropertyPath::new(self.0.clone()) {
            Some(path) => path.to_string(),
            None => "root".to_string(),
        }
    }

    fn invalid(&self, message: impl Into<String>) -> SchemaError {
        SchemaError::Invalid {
            path: self.render(),
            message: message.into(),
        }
    }
}

fn parse_node(mut map: Map<String, Value>, at: &Location) -> Result<SchemaNode, SchemaError> {
    let tag = match map.remove("type") {
        Some(Value::String(tag)) => TypeTag::from_keyword(&tag).ok_or_else(|| SchemaError::UnknownTypeTag {
            tag,
            path: at.render(),
        })?,
        Some(other) => {
            return Err(SchemaError::UnknownTypeTag {
                tag: other.to_string(),
                path: at.render(),
            })
        }
        None if map.contains_key("properties") => TypeTag::Object,
        None if map.contains_key("items") => TypeTag::Array,
        None => return Err(SchemaError::MissingType { path: at.render() }),
    };

    let description = take_string(&mut map, "description");
    let unit = take_string(&mut map, "unit");
    let constraints = parse_constraints(&mut map, at)?;

    let kind = match tag {
        TypeTag::Object => {
            if map.contains_key("items") {
                return Err(at.invalid("`items` on an object node"));
            }
            let properties = match map.remove("properties") {
                None => BTreeMap::new(),
                Some(Value::Object(props)) => {
                    let mut out = BTreeMap::new();
                    for (name, child) in props {
                        let child_at = at.child(&name);
                        let Value::Object(child_map) = child else {
                            return Err(child_at.invalid("property definition is not an object"));
                        };
                        out.insert(name, parse_node(child_map, &child_at)?);
                    }
                    out
                }
                Some(_) => return Err(at.invalid("`properties` is not an object")),
            };
            let required = match map.remove("required") {
                None => BTreeSet::new(),
                Some(Value::Array(names)) => {
                    let mut set = BTreeSet::new();
                    for name in names {
                        let Value::String(name) = name else {
                            return Err(at.invalid("`required` entries must be strings"));
                        };
                        if !properties.contains_key(&name) {
                            return Err(at.invalid(format!("required property `{name}` is not declared")));
                        }
                        set.insert(name);
                    }
                    set
                }
                Some(_) => return Err(at.invalid("`required` is not an array")),
            };
            NodeKind::Object { properties, required }
        }
        TypeTag::Array => {
            if map.contains_key("properties") {
                return Err(at.invalid("`properties` on an array node"));
            }
            let items = match map.remove("items") {
                Some(Value::Object(items)) => parse_node(items, &at.child(super::ARRAY_SEGMENT))?,
                Some(_) => return Err(at.invalid("`items` is not an object")),
                None => return Err(at.invalid("array node without `items`")),
            };
            NodeKind::Array {
                items: Box::new(items),
            }
        }
        scalar => {
            if map.contains_key("properties") {
                return Err(at.invalid(format!("`properties` on a {scalar} node")));
            }
            if map.contains_key("items") {
                return Err(at.invalid(format!("`items` on a {scalar} node")));
            }
            NodeKind::Scalar(scalar)
        }
    };

    Ok(SchemaNode {
        kind,
        description,
        constraints,
        unit,
        annotations: map.into_iter().collect(),
    })
}

fn parse_constraints(map: &mut Map<String, Value>, at: &Location) -> Result<ConstraintSet, SchemaError> {
    let enum_values = match map.remove("enum") {
        None => None,
        Some(Value::Array(values)) => {
            if values.is_empty() {
                return Err(at.invalid("`enum` is empty"));
            }
            if values.iter().any(|v| v.is_array() || v.is_object()) {
                return Err(at.invalid("`enum` values must be scalars"));
            }
            Some(values)
        }
        Some(_) => return Err(at.invalid("`enum` is not an array")),
    };
    let mut bound = |key: &str| match map.remove(key) {
        None => Ok(None),
        Some(Value::Number(n)) => Ok(Some(n)),
        Some(_) => Err(at.invalid(format!("`{key}` is not a number"))),
    };
    let minimum = bound("minimum")?;
    let maximum = bound("maximum")?;
    if let (Some(lo), Some(hi)) = (&minimum, &maximum) {
        if lo.as_f64() > hi.as_f64() {
            return Err(at.invalid(format!("minimum {lo} exceeds maximum {hi}")));
        }
    }
    let pattern = match map.remove("pattern") {
        None => None,
        Some(Value::String(p)) => Some(p),
        Some(_) => return Err(at.invalid("`pattern` is not a string")),
    };
    Ok(ConstraintSet {
        enum_values,
        minimum,
        maximum,
        pattern,
    })
}
