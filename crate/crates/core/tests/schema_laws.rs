use proptest::prelude::*;
use schema_miner::schema::{diff, find_duplicates, flatten, parse_schema, parse_value, serialize_canonical, PropertyPath};
use schema_miner_testkit::schema_gen::{schema, uniquify};
use serde_json::{json, Value};

fn planted(mut base: Value) -> Value {
    uniquify(&mut base);
    let leaf = json!({"type": "string", "description": "Uniformity of the deposited film"});
    let nest = json!({"type": "object", "properties": {"uniformity": leaf}});
    let props = base["properties"].as_object_mut().unwrap();
    props.insert(
        "observables".into(),
        json!({"type": "object", "properties": {"filmProperties": nest.clone()}}),
    );
    props.insert(
        "experimentalResults".into(),
        json!({"type": "object", "properties": {"results": {"type": "object", "properties": {"filmProperties": nest}}}}),
    );
    base
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn round_trip_fixpoint(v in schema()) {
        let doc = parse_value(v).unwrap();
        let text = serialize_canonical(&doc);
        let again = parse_schema(&text).unwrap();
        prop_assert_eq!(&again, &doc);
        prop_assert_eq!(serialize_canonical(&again), text);
    }

    #[test]
    fn canonical_determinism(v in schema()) {
        // same document reached from differently formatted text
        let a = parse_value(v.clone()).unwrap();
        let b = parse_schema(&serde_json::to_string_pretty(&v).unwrap()).unwrap();
        prop_assert_eq!(&a, &b);
        let text = serialize_canonical(&a);
        prop_assert_eq!(&serialize_canonical(&b), &text);
        prop_assert!(text.ends_with('\n') && !text.contains('\r'));
    }

    #[test]
    fn diff_mirror(a in schema(), b in schema()) {
        let (a, b) = (parse_value(a).unwrap(), parse_value(b).unwrap());
        let ab = diff(&a, &b);
        let ba = diff(&b, &a);
        prop_assert_eq!(&ab.added, &ba.removed);
        prop_assert_eq!(&ab.removed, &ba.added);
        let mut reversed: Vec<(PropertyPath, PropertyPath)> = ba.moved.iter().map(|m| (m.to.clone(), m.from.clone())).collect();
        reversed.sort();
        let mut forward: Vec<(PropertyPath, PropertyPath)> = ab.moved.iter().map(|m| (m.from.clone(), m.to.clone())).collect();
        forward.sort();
        prop_assert_eq!(forward, reversed);
        prop_assert_eq!(ab.retyped.len(), ba.retyped.len());
        for (x, y) in ab.retyped.iter().zip(&ba.retyped) {
            prop_assert_eq!((&x.path, x.from, x.to), (&y.path, y.to, y.from));
        }
        prop_assert_eq!(&ab.redescribed, &ba.redescribed);
        prop_assert!(diff(&a, &a).is_empty());
    }

    #[test]
    fn planted_duplicate_found_once(v in schema()) {
        let doc = parse_value(planted(v)).unwrap();
        let groups = find_duplicates(&doc, 0.5);
        prop_assert_eq!(groups.len(), 1);
        let g = &groups[0];
        prop_assert_eq!(g.leaf_name.as_str(), "uniformity");
        let rendered: Vec<String> = g.paths.iter().map(ToString::to_string).collect();
        prop_assert_eq!(rendered, [
            "experimentalResults.results.filmProperties.uniformity",
            "observables.filmProperties.uniformity",
        ]);
        prop_assert_eq!(g.description_similarity, 1.0);
    }

    #[test]
    fn flatten_paths_unique(v in schema()) {
        let doc = parse_value(v).unwrap();
        let flat = flatten(&doc);
        let mut rendered: Vec<String> = flat.iter().map(|e| e.path.to_string()).collect();
        let n = rendered.len();
        rendered.sort();
        rendered.dedup();
        prop_assert_eq!(rendered.len(), n);
    }

    #[test]
    fn duplicate_thresholds(v in schema()) {
        let doc = parse_value(v).unwrap();
        prop_assert!(find_duplicates(&doc, 1.0 + 1e-9).is_empty());
        let at_zero = find_duplicates(&doc, 0.0);
        // at threshold 0 every group is one whole name bucket
        for g in &at_zero {
            prop_assert!(g.paths.len() >= 2);
        }
    }
}
