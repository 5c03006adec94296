use serde_json::{Map, Value};

use super::{NodeKind, SchemaDoc, SchemaNode};

/// Renders the canonical text form: keys sorted at every level, two-space
/// indentation, LF line endings and a trailing newline.
pub fn serialize_canonical(doc: &SchemaDoc) -> String {
    // serde_json's default Map is a BTreeMap, so key order is already sorted.
    let mut text = serde_json::to_string_pretty(&to_value(doc)).expect("schema values always serialize");
    text.push('\n');
    text
}

/// The document as a JSON value, in the same shape [`serialize_canonical`] prints.
pub fn to_value(doc: &SchemaDoc) -> Value {
    let mut value = node_to_value(&doc.root);
    let map = value.as_object_mut().expect("root renders as an object");
    if let Some(title) = &doc.title {
        map.insert("title".into(), Value::String(title.clone()));
    }
    if let Some(description) = doc.description.as_ref().or(doc.root.description.as_ref()) {
        map.insert("description".into(), Value::String(description.clone()));
    }
    value
}

/// JSON value for a single node, as it would appear under `properties`.
pub(crate) fn node_to_value(node: &SchemaNode) -> Value {
    let mut map: Map<String, Value> = node
        .annotations
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    map.insert("type".into(), Value::String(node.type_tag().as_str().into()));
    if let Some(description) = &node.description {
        map.insert("description".into(), Value::String(description.clone()));
    }
    if let Some(unit) = &node.unit {
        map.insert("unit".into(), Value::String(unit.clone()));
    }
    let c = &node.constraints;
    if let Some(values) = &c.enum_values {
        map.insert("enum".into(), Value::Array(values.clone()));
    }
    if let Some(min) = &c.minimum {
        map.insert("minimum".into(), Value::Number(min.clone()));
    }
    if let Some(max) = &c.maximum {
        map.insert("maximum".into(), Value::Number(max.clone()));
    }
    if let Some(pattern) = &c.pattern {
        map.insert("pattern".into(), Value::String(pattern.clone()));
    }

    match &node.kind {
        NodeKind::Scalar(_) => {}
        NodeKind::Object { properties, required } => {
            let props = properties
                .iter()
                .map(|(name, child)| (name.clone(), node_to_value(child)))
                .collect();
            map.insert("properties".into(), Value::Object(props));
            if !required.is_empty() {
                map.insert(
                    "required".into(),
                    Value::Array(required.iter().cloned().map(Value::String).collect()),
                );
            }
        }
        NodeKind::Array { items } => {
            map.insert("items".into(), node_to_value(items));
        }
    }
    Value::Object(map)
}
