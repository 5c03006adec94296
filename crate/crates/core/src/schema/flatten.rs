use super::{NodeKind, PropertyPath, SchemaDoc, SchemaNode, TypeTag, ARRAY_SEGMENT};

/// One non-root node of a flattened schema.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatEntry {
    pub path: PropertyPath,
    pub type_tag: TypeTag,
    pub description: Option<String>,
}

/// Depth-first pre-order listing of every node below the root. Properties
/// are visited in key order; array elements contribute a `[]` segment.
pub fn flatten(doc: &SchemaDoc) -> Vec<FlatEntry> {
    let mut out = Vec::new();
    visit_nodes(doc, |path, node| {
        out.push(FlatEntry {
            path: path.clone(),
            type_tag: node.type_tag(),
            description: node.description.clone(),
        })
    });
    out
}

/// Same traversal as [`flatten`], yielding the nodes themselves.
pub(crate) fn visit_nodes<'a>(doc: &'a SchemaDoc, mut f: impl FnMut(&PropertyPath, &'a SchemaNode)) {
    fn walk<'a>(prefix: &[String], node: &'a SchemaNode, f: &mut impl FnMut(&PropertyPath, &'a SchemaNode)) {
        match &node.kind {
            NodeKind::Scalar(_) => {}
            NodeKind::Object { properties, .. } => {
                for (name, child) in properties {
                    let mut segments = prefix.to_vec();
                    segments.push(name.clone());
                    let path = PropertyPath::new(segments.clone()).expect("non-empty");
                    f(&path, child);
                    walk(&segments, child, f);
                }
            }
            NodeKind::Array { items } => {
                let mut segments = prefix.to_vec();
                segments.push(ARRAY_SEGMENT.to_string());
                let path = PropertyPath::new(segments.clone()).expect("non-empty");
                f(&path, items);
                walk(&segments, items, f);
            }
        }
    }
    walk(&[], &doc.root, &mut f);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_schema;

    #[test]
    fn empty_root_flattens_to_nothing() {
        assert!(flatten(&SchemaDoc::empty()).is_empty());
    }

    #[test]
    fn nested_object_pre_order() {
        let doc = parse_schema(
            r#"{"type":"object","properties":{"reactants":{"type":"object","properties":{"precursor":{"type":"string"}}}}}"#,
        )
        .unwrap();
        let paths: Vec<String> = flatten(&doc).iter().map(|e| e.path.to_string()).collect();
        assert_eq!(paths, ["reactants", "reactants.precursor"]);
    }

    #[test]
    fn count_matches_nodes_minus_root() {
        let doc = parse_schema(
            r#"{"type":"object","properties":{"a":{"type":"array","items":{"type":"object","properties":{"x":{"type":"number"},"y":{"type":"array","items":{"type":"string"}}}}},"b":{"type":"boolean"}}}"#,
        )
        .unwrap();
        let flat = flatten(&doc);
        assert_eq!(flat.len(), doc.root.node_count() - 1);
        let paths: Vec<String> = flat.iter().map(|e| e.path.to_string()).collect();
        assert_eq!(paths, ["a", "a[]", "a[].x", "a[].y", "a[].y[]", "b"]);
    }
}
