//! AudioSet-style label ontology.
//!
//! The ontology file is a JSON array of nodes, each naming its children by
//! id. Parsing validates the graph (unique ids, no dangling references, no
//! cycles) and builds a parent index so that ancestor queries are cheap.
//! Everything that returns several labels returns them in a deterministic
//! order, which the generators rely on for reproducible output.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Opaque label identifier, e.g. `/m/042v_gx`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(String);

impl LabelId {
    pub fn new(id: impl Into<String>) -> Self {
        LabelId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LabelId {
    fn from(s: &str) -> Self {
        LabelId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OntologyNode {
    pub id: LabelId,
    pub name: String,
    pub child_ids: Vec<LabelId>,
    pub is_abstract: bool,
}

impl OntologyNode {
    pub fn is_leaf(&self) -> bool {
        self.child_ids.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OntologyError {
    #[error("malformed ontology: {0}")]
    Parse(String),
    #[error("duplicate label id {0}")]
    DuplicateId(LabelId),
    #[error("child relation contains a cycle through {0}")]
    Cycle(LabelId),
    #[error("node {parent} lists unknown child {child}")]
    DanglingRef { parent: LabelId, child: LabelId },
    #[error("unknown label {0}")]
    UnknownLabel(LabelId),
    #[error("label {0} has children and is not a leaf")]
    NotALeaf(LabelId),
}

/// Wire form of one node. Unknown fields (description, citation_uri, ...)
/// from the public release are ignored.
#[derive(Debug, Serialize, Deserialize)]
struct RawNode {
    id: String,
    name: String,
    child_ids: Vec<String>,
    #[serde(rename = "abstract", default, skip_serializing_if = "std::ops::Not::not")]
    is_abstract: bool,
    /// The public release marks abstract nodes through `restrictions`.
    #[serde(default, skip_serializing)]
    restrictions: Vec<String>,
}

/// Validated, immutable label graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    nodes: BTreeMap<LabelId, OntologyNode>,
    /// Direct parents of each node, sorted by id.
    parents: BTreeMap<LabelId, Vec<LabelId>>,
    roots: Vec<LabelId>,
}

impl Ontology {
    /// Parse and validate an ontology JSON document.
    pub fn parse(raw: &[u8]) -> Result<Self, OntologyError> {
        let raw_nodes: Vec<RawNode> =
            serde_json::from_slice(raw).map_err(|e| OntologyError::Parse(e.to_string()))?;
        let nodes = raw_nodes
            .into_iter()
            .map(|r| {
                if r.id.is_empty() {
                    return Err(OntologyError::Parse("node with empty id".into()));
                }
                if r.name.trim().is_empty() {
                    return Err(OntologyError::Parse(format!("node {} has an empty name", r.id)));
                }
                let is_abstract = r.is_abstract || r.restrictions.iter().any(|s| s == "abstract");
                Ok(OntologyNode {
                    id: LabelId(r.id),
                    name: r.name,
                    child_ids: r.child_ids.into_iter().map(LabelId).collect(),
                    is_abstract,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_nodes(nodes)
    }

    /// Build from already-constructed nodes, running the same validation as [`Ontology::parse`].
    pub fn from_nodes(list: Vec<OntologyNode>) -> Result<Self, OntologyError> {
        let mut nodes = BTreeMap::new();
        for node in list {
            if nodes.contains_key(&node.id) {
                return Err(OntologyError::DuplicateId(node.id));
            }
            nodes.insert(node.id.clone(), node);
        }

        let mut parents: BTreeMap<LabelId, Vec<LabelId>> =
            nodes.keys().map(|id| (id.clone(), Vec::new())).collect();
        for node in nodes.values() {
            for child in &node.child_ids {
                match parents.get_mut(child) {
                    Some(ps) => ps.push(node.id.clone()),
                    None => {
                        return Err(OntologyError::DanglingRef {
                            parent: node.id.clone(),
                            child: child.clone(),
                        })
                    }
                }
            }
        }
        for ps in parents.values_mut() {
            ps.sort();
            ps.dedup();
        }

        check_acyclic(&nodes)?;

        let roots = parents
            .iter()
            .filter(|(_, ps)| ps.is_empty())
            .map(|(id, _)| id.clone())
            .collect();
        Ok(Ontology { nodes, parents, roots })
    }

    /// Serialize back to the ontology file format, nodes in id order.
    pub fn to_json(&self) -> String {
        let raw: Vec<RawNode> = self
            .nodes
            .values()
            .map(|n| RawNode {
                id: n.id.0.clone(),
                name: n.name.clone(),
                child_ids: n.child_ids.iter().map(|c| c.0.clone()).collect(),
                is_abstract: n.is_abstract,
                restrictions: Vec::new(),
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("ontology serialization is infallible")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn roots(&self) -> &[LabelId] {
        &self.roots
    }

    pub fn get(&self, id: &LabelId) -> Option<&OntologyNode> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &LabelId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &OntologyNode> {
        self.nodes.values()
    }

    fn node(&self, id: &LabelId) -> Result<&OntologyNode, OntologyError> {
        self.nodes
            .get(id)
            .ok_or_else(|| OntologyError::UnknownLabel(id.clone()))
    }

    /// Direct parents of a node, sorted by id.
    pub fn parents_of(&self, id: &LabelId) -> &[LabelId] {
        self.parents.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// First node whose display name matches `name` case-insensitively, by id order.
    pub fn find_by_name(&self, name: &str) -> Option<&OntologyNode> {
        let wanted = name.trim().to_lowercase();
        self.nodes.values().find(|n| n.name.to_lowercase() == wanted)
    }

    /// Non-abstract leaves reachable from `subtree_root` (the root itself
    /// included when it is a leaf).
    pub fn leaf_labels(&self, subtree_root: &LabelId) -> Result<BTreeSet<LabelId>, OntologyError> {
        self.node(subtree_root)?;
        let mut seen = BTreeSet::new();
        let mut leaves = BTreeSet::new();
        let mut stack = vec![subtree_root];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            let node = &self.nodes[id];
            if node.is_leaf() {
                if !node.is_abstract {
                    leaves.insert(id.clone());
                }
            } else {
                stack.extend(node.child_ids.iter());
            }
        }
        Ok(leaves)
    }

    /// All ancestors of `leaf`, nearest first. Ancestors at the same
    /// distance are ordered by id.
    pub fn parent_categories(&self, leaf: &LabelId) -> Result<Vec<LabelId>, OntologyError> {
        if !self.node(leaf)?.is_leaf() {
            return Err(OntologyError::NotALeaf(leaf.clone()));
        }
        Ok(self.ancestors(leaf))
    }

    /// Ancestors of any node in breadth-first level order, each level sorted by id.
    pub fn ancestors(&self, id: &LabelId) -> Vec<LabelId> {
        let mut seen: BTreeSet<&LabelId> = BTreeSet::new();
        seen.insert(id);
        let mut out = Vec::new();
        let mut level: Vec<&LabelId> = vec![id];
        while !level.is_empty() {
            let mut next: BTreeSet<&LabelId> = BTreeSet::new();
            for node in &level {
                for p in self.parents_of(node) {
                    if !seen.contains(p) {
                        next.insert(p);
                    }
                }
            }
            for p in &next {
                seen.insert(p);
                out.push((*p).clone());
            }
            level = next.into_iter().collect();
        }
        out
    }

    /// True when `ancestor` can reach `id` through child links (or they are equal).
    pub fn is_descendant_or_self(&self, id: &LabelId, ancestor: &LabelId) -> bool {
        if id == ancestor {
            return true;
        }
        let mut queue: VecDeque<&LabelId> = self.parents_of(id).iter().collect();
        let mut seen = BTreeSet::new();
        while let Some(p) = queue.pop_front() {
            if p == ancestor {
                return true;
            }
            if seen.insert(p) {
                queue.extend(self.parents_of(p));
            }
        }
        false
    }
}

/// Iterative three-colour DFS over the child relation.
fn check_acyclic(nodes: &BTreeMap<LabelId, OntologyNode>) -> Result<(), OntologyError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        Open,
        Done,
    }
    let mut mark: BTreeMap<&LabelId, Mark> = nodes.keys().map(|k| (k, Mark::Fresh)).collect();
    for start in nodes.keys() {
        if mark[start] != Mark::Fresh {
            continue;
        }
        // (node, index of next child to visit)
        let mut stack: Vec<(&LabelId, usize)> = vec![(start, 0)];
        mark.insert(start, Mark::Open);
        while let Some((id, next)) = stack.last_mut() {
            let children = &nodes[*id].child_ids;
            if *next < children.len() {
                let child = &children[*next];
                *next += 1;
                match mark[child] {
                    Mark::Open => return Err(OntologyError::Cycle(child.clone())),
                    Mark::Fresh => {
                        mark.insert(child, Mark::Open);
                        stack.push((child, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                mark.insert(*id, Mark::Done);
                stack.pop();
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Ontology {
        Ontology::parse(
            br#"[
            {"id": "/m/music", "name": "Music", "child_ids": ["/m/inst"]},
            {"id": "/m/inst", "name": "Musical instrument", "child_ids": ["/m/ag"]},
            {"id": "/m/ag", "name": "Acoustic guitar", "child_ids": []}
        ]"#,
        )
        .unwrap()
    }

    fn id(s: &str) -> LabelId {
        LabelId::from(s)
    }

    #[test]
    fn minimal_chain() {
        let o = chain();
        assert_eq!(o.len(), 3);
        assert_eq!(o.roots(), &[id("/m/music")]);
        let leaves = o.leaf_labels(&id("/m/music")).unwrap();
        assert_eq!(leaves.into_iter().collect::<Vec<_>>(), vec![id("/m/ag")]);
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let err = Ontology::parse(br#"[{"id": "/m/a", "name": "A", "child_ids": ["/m/a"]}]"#)
            .unwrap_err();
        assert!(matches!(err, OntologyError::Cycle(_)));
    }

    #[test]
    fn longer_cycle_detected() {
        let err = Ontology::parse(
            br#"[{"id": "a", "name": "A", "child_ids": ["b"]},
                 {"id": "b", "name": "B", "child_ids": ["c"]},
                 {"id": "c", "name": "C", "child_ids": ["a"]},
                 {"id": "d", "name": "D", "child_ids": ["a"]}]"#,
        )
        .unwrap_err();
        assert!(matches!(err, OntologyError::Cycle(_)));
    }

    #[test]
    fn dangling_child() {
        let err = Ontology::parse(br#"[{"id": "/m/a", "name": "A", "child_ids": ["/m/xyz"]}]"#)
            .unwrap_err();
        match err {
            OntologyError::DanglingRef { child, .. } => assert_eq!(child, id("/m/xyz")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(Ontology::parse(b"{"), Err(OntologyError::Parse(_))));
        assert!(matches!(
            Ontology::parse(br#"[{"id": "a", "child_ids": []}]"#),
            Err(OntologyError::Parse(_))
        ));
        assert!(matches!(
            Ontology::parse(br#"[{"id": "a", "name": " ", "child_ids": []}]"#),
            Err(OntologyError::Parse(_))
        ));
        assert!(matches!(
            Ontology::parse(
                br#"[{"id": "a", "name": "A", "child_ids": []}, {"id": "a", "name": "B", "child_ids": []}]"#
            ),
            Err(OntologyError::DuplicateId(_))
        ));
    }

    #[test]
    fn leaf_root_is_its_own_leaf_set() {
        let o = chain();
        let leaves = o.leaf_labels(&id("/m/ag")).unwrap();
        assert_eq!(leaves.len(), 1);
        assert!(leaves.contains(&id("/m/ag")));
        assert!(matches!(
            o.leaf_labels(&id("/m/nope")),
            Err(OntologyError::UnknownLabel(_))
        ));
    }

    #[test]
    fn abstract_leaves_are_not_returned() {
        let o = Ontology::parse(
            br#"[{"id": "r", "name": "Music", "child_ids": ["x", "y"]},
                 {"id": "x", "name": "X", "child_ids": [], "abstract": true},
                 {"id": "y", "name": "Y", "child_ids": [], "restrictions": ["abstract"]},
                 {"id": "z", "name": "Z", "child_ids": []}]"#,
        )
        .unwrap();
        assert!(o.leaf_labels(&id("r")).unwrap().is_empty());
        assert_eq!(o.roots(), &[id("r"), id("z")]);
    }

    #[test]
    fn parents_nearest_first() {
        let o = chain();
        assert_eq!(
            o.parent_categories(&id("/m/ag")).unwrap(),
            vec![id("/m/inst"), id("/m/music")]
        );
        assert!(matches!(
            o.parent_categories(&id("/m/inst")),
            Err(OntologyError::NotALeaf(_))
        ));
    }

    #[test]
    fn equal_depth_parents_tie_break_by_id() {
        let o = Ontology::parse(
            br#"[{"id": "/m/b", "name": "B", "child_ids": ["/m/leaf"]},
                 {"id": "/m/a", "name": "A", "child_ids": ["/m/leaf"]},
                 {"id": "/m/leaf", "name": "Leaf", "child_ids": []}]"#,
        )
        .unwrap();
        assert_eq!(
            o.parent_categories(&id("/m/leaf")).unwrap(),
            vec![id("/m/a"), id("/m/b")]
        );
    }

    #[test]
    fn serialize_round_trip() {
        let o = chain();
        let again = Ontology::parse(o.to_json().as_bytes()).unwrap();
        assert_eq!(again, o);
    }
}
