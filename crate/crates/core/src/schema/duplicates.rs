use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::flatten::visit_nodes;
use super::{PropertyPath, SchemaDoc, TypeTag};
use crate::text::word_tokens;

/// Same-named leaves whose descriptions are similar enough to look like a
/// repeated property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    pub leaf_name: String,
    pub paths: Vec<PropertyPath>,
    /// Lowest pairwise description similarity inside the group.
    pub description_similarity: f64,
}

/// Dice coefficient over the sets of lowercased word tokens. Two empty
/// descriptions count as identical.
pub fn description_similarity(a: Option<&str>, b: Option<&str>) -> f64 {
    let ta: BTreeSet<String> = a.map(word_tokens).unwrap_or_default().into_iter().collect();
    let tb: BTreeSet<String> = b.map(word_tokens).unwrap_or_default().into_iter().collect();
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let shared = ta.intersection(&tb).count();
    2.0 * shared as f64 / (ta.len() + tb.len()) as f64
}

/// Finds repeated leaf properties.
///
/// Leaves are non-object nodes other than array element nodes. Leaves are
/// bucketed by lowercased name; inside a bucket, two leaves are linked when
/// their description similarity reaches `sim_threshold`, and every connected
/// component with at least two members becomes a group.
pub fn find_duplicates(doc: &SchemaDoc, sim_threshold: f64) -> Vec<DuplicateGroup> {
    let mut buckets: BTreeMap<String, Vec<(PropertyPath, Option<String>)>> = BTreeMap::new();
    visit_nodes(doc, |path, node| {
        if node.type_tag() == TypeTag::Object || path.is_array_element() {
            return;
        }
        let name = path.leaf_name().expect("non-empty path").to_lowercase();
        buckets
            .entry(name)
            .or_default()
            .push((path.clone(), node.description.clone()));
    });

    let mut groups = Vec::new();
    for (name, leaves) in buckets {
        if leaves.len() < 2 {
            continue;
        }
        let n = leaves.len();
        let mut sim = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let s = description_similarity(leaves[i].1.as_deref(), leaves[j].1.as_deref());
                sim[i][j] = s;
                sim[j][i] = s;
            }
        }

        let mut component = vec![usize::MAX; n];
        for start in 0..n {
            if component[start] != usize::MAX {
                continue;
            }
            component[start] = start;
            let mut stack = vec![start];
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    if component[j] == usize::MAX && sim[i][j] >= sim_threshold {
                        component[j] = start;
                        stack.push(j);
                    }
                }
            }
        }

        for root in 0..n {
            let members: Vec<usize> = (0..n).filter(|&i| component[i] == root).collect();
            if members.len() < 2 {
                continue;
            }
            let mut lowest = f64::INFINITY;
            for (k, &i) in members.iter().enumerate() {
                for &j in &members[k + 1..] {
                    lowest = lowest.min(sim[i][j]);
                }
            }
            let mut paths: Vec<PropertyPath> = members.iter().map(|&i| leaves[i].0.clone()).collect();
            paths.sort_by_key(|p| p.to_string());
            groups.push(DuplicateGroup {
                leaf_name: name.clone(),
                paths,
                description_similarity: lowest,
            });
        }
    }
    groups
}
