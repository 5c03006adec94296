use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::flatten::visit_nodes;
use super::{PropertyPath, SchemaDoc, SchemaNode, TypeTag};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Retype {
    pub path: PropertyPath,
    pub from: TypeTag,
    pub to: TypeTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub from: PropertyPath,
    pub to: PropertyPath,
}

/// Structural change set between two documents. All lists are sorted by
/// rendered path.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDiff {
    pub added: Vec<PropertyPath>,
    pub removed: Vec<PropertyPath>,
    pub retyped: Vec<Retype>,
    pub redescribed: Vec<PropertyPath>,
    pub moved: Vec<Move>,
}

impl SchemaDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty()
            && self.removed.is_empty()
            && self.retyped.is_empty()
            && self.redescribed.is_empty()
            && self.moved.is_empty()
    }
}

fn index(doc: &SchemaDoc) -> BTreeMap<PropertyPath, &SchemaNode> {
    let mut map = BTreeMap::new();
    visit_nodes(doc, |path, node| {
        map.insert(path.clone(), node);
    });
    map
}

/// Levenshtein distance over path segments.
fn segment_distance(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, sa) in a.iter().enumerate() {
        let mut row = vec![i + 1; b.len() + 1];
        for (j, sb) in b.iter().enumerate() {
            let subst = prev[j] + usize::from(sa != sb);
            row[j + 1] = subst.min(prev[j + 1] + 1).min(row[j] + 1);
        }
        prev = row;
    }
    prev[b.len()]
}

fn same_leaf(a: &PropertyPath, b: &PropertyPath) -> bool {
    a.segments().last() == b.segments().last() && a.leaf_name() == b.leaf_name()
}

/// Computes the change set from `old` to `new`.
///
/// A subtree that disappears at one path and reappears unchanged under the
/// same leaf name at another path is reported once as a move; its
/// descendants are implied by the move and are not listed again. When
/// several destinations qualify, the pairing with the smallest segment edit
/// distance wins, ties going to the lexicographically smaller pair. Pairs
/// are ranked by a key that is symmetric in `old`/`new`, so
/// `diff(b, a)` is the mirror image of `diff(a, b)`.
pub fn diff(old: &SchemaDoc, new: &SchemaDoc) -> SchemaDiff {
    let old_idx = index(old);
    let new_idx = index(new);

    let mut out = SchemaDiff::default();
    for (path, old_node) in &old_idx {
        if let Some(new_node) = new_idx.get(path) {
            let (from, to) = (old_node.type_tag(), new_node.type_tag());
            if from != to {
                out.retyped.push(Retype {
                    path: path.clone(),
                    from,
                    to,
                });
            }
            if old_node.description != new_node.description {
                out.redescribed.push(path.clone());
            }
        }
    }

    let only_old: Vec<&PropertyPath> = old_idx.keys().filter(|p| !new_idx.contains_key(*p)).collect();
    let only_new: Vec<&PropertyPath> = new_idx.keys().filter(|p| !old_idx.contains_key(*p)).collect();

    let mut candidates = Vec::new();
    for &o in &only_old {
        for &n in &only_new {
            if same_leaf(o, n) && old_idx[o] == new_idx[n] {
                let (ro, rn) = (o.to_string(), n.to_string());
                let depths = (o.depth().min(n.depth()), o.depth().max(n.depth()));
                let dist = segment_distance(o.segments(), n.segments());
                let names = if ro <= rn { (ro, rn) } else { (rn, ro) };
                candidates.push((depths, dist, names, o, n));
            }
        }
    }
    candidates.sort_by(|a, b| (a.0, a.1, &a.2).cmp(&(b.0, b.1, &b.2)));

    let mut consumed_old: BTreeSet<&PropertyPath> = BTreeSet::new();
    let mut consumed_new: BTreeSet<&PropertyPath> = BTreeSet::new();
    for (_, _, _, o, n) in candidates {
        if consumed_old.contains(o) || consumed_new.contains(n) {
            continue;
        }
        out.moved.push(Move {
            from: o.clone(),
            to: n.clone(),
        });
        consumed_old.extend(only_old.iter().copied().filter(|p| *p == o || p.is_descendant_of(o)));
        consumed_new.extend(only_new.iter().copied().filter(|p| *p == n || p.is_descendant_of(n)));
    }

    out.removed = only_old
        .into_iter()
        .filter(|p| !consumed_old.contains(p))
        .cloned()
        .collect();
    out.added = only_new
        .into_iter()
        .filter(|p| !consumed_new.contains(p))
        .cloned()
        .collect();

    let by_name = |p: &PropertyPath| p.to_string();
    out.added.sort_by_key(by_name);
    out.removed.sort_by_key(by_name);
    out.redescribed.sort_by_key(by_name);
    out.retyped.sort_by_key(|r| r.path.to_string());
    out.moved.sort_by_key(|m| (m.from.to_string(), m.to.to_string()));
    out
}
