//! Belief graphs as sets of labeled directed triples, plus the update algebra
//! (`add` / `delete` commands) and the oracle that folds commands into a graph.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("invalid label `{0}`: labels are nonempty, lowercase, single-space separated")]
    InvalidLabel(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Relation labels used by the generated worlds.
pub const DEFAULT_RELATIONS: [&str; 10] = [
    "at", "in", "on", "is", "north_of", "south_of", "east_of", "west_of", "part_of", "needs",
];

/// Label used when a graph is viewed as single-relation.
pub const COLLAPSED_RELATION: &str = "rel";

/// An edge label. Construct through a [`RelationRegistry`] to get validation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Relation(String);

impl Relation {
    /// Builds a relation without registry validation. Used for placeholders
    /// such as the single-relation collapse label.
    pub fn unchecked(label: impl Into<String>) -> Self {
        Relation(label.into())
    }

    pub fn collapsed() -> Self {
        Relation(COLLAPSED_RELATION.to_string())
    }

    pub fn label(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The closed set of relation labels a graph may use. The default registry has
/// ten labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationRegistry {
    labels: Vec<String>,
}

impl Default for RelationRegistry {
    fn default() -> Self {
        RelationRegistry::new(DEFAULT_RELATIONS.iter().map(|s| s.to_string())).unwrap()
    }
}

impl RelationRegistry {
    pub fn new(labels: impl IntoIterator<Item = String>) -> Result<Self, GraphError> {
        let mut out: Vec<String> = Vec::new();
        for label in labels {
            if label.is_empty()
                || label != label.to_lowercase()
                || label.chars().any(char::is_whitespace)
            {
                return Err(GraphError::InvalidLabel(label));
            }
            if !out.contains(&label) {
                out.push(label);
            }
        }
        Ok(RelationRegistry { labels: out })
    }

    pub fn get(&self, label: &str) -> Result<Relation, GraphError> {
        if self.contains(label) {
            Ok(Relation(label.to_string()))
        } else {
            Err(GraphError::UnknownRelation(label.to_string()))
        }
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    #[default]
    Object,
    Player,
    Location,
    State,
}

/// A vertex. The kind tag is metadata: equality, ordering and hashing only
/// look at the label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entity {
    label: String,
    #[serde(default)]
    kind: EntityKind,
}

impl Entity {
    pub fn new(label: &str, kind: EntityKind) -> Result<Self, GraphError> {
        if !is_valid_label(label) {
            return Err(GraphError::InvalidLabel(label.to_string()));
        }
        Ok(Entity {
            label: label.to_string(),
            kind,
        })
    }

    /// Lowercases and collapses whitespace before validating.
    pub fn normalized(text: &str, kind: EntityKind) -> Result<Self, GraphError> {
        let label = text
            .split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join(" ");
        Entity::new(&label, kind)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }
}

fn is_valid_label(label: &str) -> bool {
    !label.is_empty()
        && label == label.to_lowercase()
        && label.split(' ').all(|w| !w.is_empty() && !w.chars().any(char::is_whitespace))
}

impl PartialEq for Entity {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label
    }
}

impl Eq for Entity {}

impl Hash for Entity {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.label.hash(state)
    }
}

impl PartialOrd for Entity {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entity {
    fn cmp(&self, other: &Self) -> Ordering {
        self.label.cmp(&other.label)
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

/// A directed labeled edge `head --relation--> tail`. Ordered by
/// (head, tail, relation).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: Entity,
    pub tail: Entity,
    pub relation: Relation,
}

impl Triple {
    pub fn new(head: Entity, tail: Entity, relation: Relation) -> Self {
        Triple {
            head,
            tail,
            relation,
        }
    }

    /// Builds a triple from raw labels, validating the relation against
    /// `registry`. Entity kinds default to [`EntityKind::Object`].
    pub fn parse(
        head: &str,
        tail: &str,
        relation: &str,
        registry: &RelationRegistry,
    ) -> Result<Self, GraphError> {
        Ok(Triple {
            head: Entity::normalized(head, EntityKind::Object)?,
            tail: Entity::normalized(tail, EntityKind::Object)?,
            relation: registry.get(relation)?,
        })
    }

    /// Key used by canonical ordering: (relation, head, tail).
    fn relation_key(&self) -> (&str, &str, &str) {
        (self.relation.label(), self.head.label(), self.tail.label())
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.tail, self.relation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Add,
    Delete,
}

impl Verb {
    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Add => "add",
            Verb::Delete => "delete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UpdateOp {
    pub verb: Verb,
    pub triple: Triple,
}

impl UpdateOp {
    pub fn add(triple: Triple) -> Self {
        UpdateOp {
            verb: Verb::Add,
            triple,
        }
    }

    pub fn delete(triple: Triple) -> Self {
        UpdateOp {
            verb: Verb::Delete,
            triple,
        }
    }
}

impl fmt::Display for UpdateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.verb.as_str(), self.triple)
    }
}

/// An ordered list of update commands; may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UpdateSequence(Vec<UpdateOp>);

impl UpdateSequence {
    pub fn new() -> Self {
        UpdateSequence(Vec::new())
    }

    pub fn ops(&self) -> &[UpdateOp] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, op: UpdateOp) {
        self.0.push(op)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, UpdateOp> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<UpdateOp> {
        self.0
    }

    /// Stable total order: adds before deletes, then (relation, head, tail).
    pub fn canonical_order(&self) -> UpdateSequence {
        let mut ops = self.0.clone();
        ops.sort_by(|a, b| {
            a.verb
                .cmp(&b.verb)
                .then_with(|| a.triple.relation_key().cmp(&b.triple.relation_key()))
        });
        UpdateSequence(ops)
    }
}

impl From<Vec<UpdateOp>> for UpdateSequence {
    fn from(ops: Vec<UpdateOp>) -> Self {
        UpdateSequence(ops)
    }
}

impl FromIterator<UpdateOp> for UpdateSequence {
    fn from_iter<I: IntoIterator<Item = UpdateOp>>(iter: I) -> Self {
        UpdateSequence(iter.into_iter().collect())
    }
}

impl IntoIterator for UpdateSequence {
    type Item = UpdateOp;
    type IntoIter = std::vec::IntoIter<UpdateOp>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

impl<'a> IntoIterator for &'a UpdateSequence {
    type Item = &'a UpdateOp;
    type IntoIter = std::slice::Iter<'a, UpdateOp>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// A set of triples. The vertex set is derived from the triples, so a vertex
/// disappears with its last edge.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct BeliefGraph {
    triples: BTreeSet<Triple>,
}

impl BeliefGraph {
    pub fn new() -> Self {
        BeliefGraph::default()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triples.contains(triple)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn vertices(&self) -> BTreeSet<&Entity> {
        self.triples
            .iter()
            .flat_map(|t| [&t.head, &t.tail])
            .collect()
    }

    pub fn is_subgraph_of(&self, other: &BeliefGraph) -> bool {
        self.triples.is_subset(&other.triples)
    }

    pub fn apply_op(&self, op: &UpdateOp) -> BeliefGraph {
        let mut next = self.clone();
        next.apply_in_place(op);
        next
    }

    pub fn apply_update(&self, ops: &UpdateSequence) -> BeliefGraph {
        let mut next = self.clone();
        for op in ops {
            next.apply_in_place(op);
        }
        next
    }

    fn apply_in_place(&mut self, op: &UpdateOp) {
        match op.verb {
            Verb::Add => {
                self.triples.insert(op.triple.clone());
            }
            Verb::Delete => {
                self.triples.remove(&op.triple);
            }
        }
    }

    /// The commands turning `self` into `next`, in canonical order.
    pub fn diff(&self, next: &BeliefGraph) -> UpdateSequence {
        let adds = next
            .triples
            .difference(&self.triples)
            .cloned()
            .map(UpdateOp::add);
        let deletes = self
            .triples
            .difference(&next.triples)
            .cloned()
            .map(UpdateOp::delete);
        adds.chain(deletes).collect::<UpdateSequence>().canonical_order()
    }

    /// Single-relation view: every relation replaced by `placeholder`.
    pub fn collapse_relations(&self, placeholder: &Relation) -> BeliefGraph {
        self.triples
            .iter()
            .map(|t| Triple::new(t.head.clone(), t.tail.clone(), placeholder.clone()))
            .collect()
    }

    /// Sorted listing by (head, tail, relation).
    pub fn to_rdf_triples(&self) -> Vec<Triple> {
        self.triples.iter().cloned().collect()
    }

    /// One `head<TAB>relation<TAB>tail` line per triple, sorted.
    pub fn to_rdf_text(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(t.head.label());
            out.push('\t');
            out.push_str(t.relation.label());
            out.push('\t');
            out.push_str(t.tail.label());
            out.push('\n');
        }
        out
    }

    pub fn from_rdf_text(text: &str, registry: &RelationRegistry) -> Result<Self, GraphError> {
        let mut graph = BeliefGraph::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(GraphError::Parse {
                    line: i + 1,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let triple = Triple::parse(fields[0], fields[2], fields[1], registry).map_err(|e| {
                GraphError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                }
            })?;
            graph.triples.insert(triple);
        }
        Ok(graph)
    }
}

impl FromIterator<Triple> for BeliefGraph {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        BeliefGraph {
            triples: iter.into_iter().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a BeliefGraph {
    type Item = &'a Triple;
    type IntoIter = std::collections::btree_set::Iter<'a, Triple>;

    fn into_iter(self) -> Self::IntoIter {
        self.triples.iter()
    }
}
