//! Random schema documents as JSON values, for property tests.

use proptest::prelude::*;
use serde_json::{json, Map, Value};

const NAMES: &[&str] = &[
    "temperature",
    "pressure",
    "rate",
    "filmThickness",
    "precursor",
    "steps",
    "coreagent",
    "growth_per_cycle",
    "substrate",
    "name",
    "value",
    "duration",
];

const WORDS: &[&str] = &[
    "the", "film", "deposition", "temperature", "of", "reactor", "pulse", "precursor", "layer", "measured",
];

fn description() -> impl Strategy<Value = Option<String>> {
    prop::option::of(prop::collection::vec(prop::sample::select(WORDS), 1..6).prop_map(|w| w.join(" ")))
}

fn leaf() -> impl Strategy<Value = Value> {
    let kind = prop::sample::select(&["string", "number", "integer", "boolean", "null"][..]);
    (
        kind,
        description(),
        prop::option::of(prop::sample::select(&["nm", "K", "s", "Pa"][..])),
        prop::option::of((-100i64..100, 0i64..50)),
        prop::option::of(prop::collection::vec("[a-z]{1,5}", 1..4)),
    )
        .prop_map(|(kind, desc, unit, range, choices)| {
            let mut node = Map::new();
            node.insert("type".into(), json!(kind));
            if let Some(d) = desc {
                node.insert("description".into(), json!(d));
            }
            match kind {
                "number" | "integer" => {
                    if let Some(u) = unit {
                        node.insert("unit".into(), json!(u));
                    }
                    if let Some((lo, span)) = range {
                        node.insert("minimum".into(), json!(lo));
                        node.insert("maximum".into(), json!(lo + span));
                    }
                }
                "string" => {
                    if let Some(c) = choices {
                        node.insert("enum".into(), json!(c));
                    }
                }
                _ => {}
            }
            Value::Object(node)
        })
}

fn object_node(inner: impl Strategy<Value = Value>, max_props: usize) -> impl Strategy<Value = Value> {
    (
        prop::collection::btree_map(prop::sample::select(NAMES), inner, 0..max_props),
        description(),
        any::<u8>(),
    )
        .prop_map(|(props, desc, req_mask)| {
            let required: Vec<&str> = props
                .keys()
                .enumerate()
                .filter(|(i, _)| req_mask & (1 << (i % 8)) != 0)
                .map(|(_, k)| *k)
                .collect();
            let mut node = Map::new();
            node.insert("type".into(), json!("object"));
            if let Some(d) = desc {
                node.insert("description".into(), json!(d));
            }
            node.insert(
                "properties".into(),
                Value::Object(props.into_iter().map(|(k, v)| (k.to_string(), v)).collect()),
            );
            if !required.is_empty() {
                node.insert("required".into(), json!(required));
            }
            Value::Object(node)
        })
}

/// Any node: scalar leaves, nested objects, and arrays.
pub fn node() -> impl Strategy<Value = Value> {
    leaf().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            2 => object_node(inner.clone(), 4),
            1 => inner.prop_map(|items| json!({"type": "array", "items": items})),
        ]
    })
}

/// A whole document: always an object at the root.
pub fn schema() -> impl Strategy<Value = Value> {
    object_node(node(), 5)
}

/// Renames every property so that no two leaves share a name.
pub fn uniquify(schema: &mut Value) {
    fn walk(node: &mut Value, counter: &mut usize) {
        if let Some(props) = node.get_mut("properties").and_then(Value::as_object_mut) {
            let old = std::mem::take(props);
            let mut renames = Vec::new();
            for (name, mut child) in old {
                *counter += 1;
                let fresh = format!("{name}{counter}");
                walk(&mut child, counter);
                renames.push((name, fresh.clone()));
                props.insert(fresh, child);
            }
            if let Some(req) = node.get_mut("required").and_then(Value::as_array_mut) {
                for r in req.iter_mut() {
                    if let Some((_, fresh)) = renames.iter().find(|(old, _)| Some(old.as_str()) == r.as_str()) {
                        *r = json!(fresh);
                    }
                }
            }
        }
        if let Some(items) = node.get_mut("items") {
            walk(items, counter);
        }
    }
    let mut counter = 0;
    walk(schema, &mut counter);
}
