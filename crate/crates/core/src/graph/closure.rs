use std::collections::{BTreeMap, BTreeSet};

use super::{GraphError, KnowledgeGraph, Layer, NodeId, RelType};
use crate::value::Attributes;

/// Activity-level relation a closure is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosureBase {
    /// Aggregated directly-follows (`FLOWS_TO`) yielding `INDIRECTLY_FOLLOWS`.
    FlowsTo,
    /// `CAUSES` yielding `INDIRECTLY_CAUSES`; must be acyclic.
    Causes,
}

impl ClosureBase {
    fn types(self) -> (RelType, RelType) {
        match self {
            ClosureBase::FlowsTo => (RelType::FlowsTo, RelType::IndirectlyFollows),
            ClosureBase::Causes => (RelType::Causes, RelType::IndirectlyCauses),
        }
    }
}

/// Semi-naive fixpoint of the relational join `R ∘ base`, starting from `R = base`.
pub fn closure_pairs<T: Ord + Clone>(edges: &[(T, T)]) -> BTreeSet<(T, T)> {
    let mut succ: BTreeMap<&T, Vec<&T>> = BTreeMap::new();
    for (a, b) in edges {
        succ.entry(a).or_default().push(b);
    }
    let mut closure: BTreeSet<(T, T)> = edges.iter().cloned().collect();
    let mut delta: Vec<(T, T)> = closure.iter().cloned().collect();
    while !delta.is_empty() {
        let mut next = Vec::new();
        for (a, b) in &delta {
            for &c in succ.get(b).into_iter().flatten() {
                let pair = (a.clone(), c.clone());
                if !closure.contains(&pair) {
                    closure.insert(pair.clone());
                    next.push(pair);
                }
            }
        }
        delta = next;
    }
    closure
}

/// Whether the directed edge set contains a cycle (self-loops included).
pub fn has_cycle<T: Ord + Clone>(edges: &[(T, T)]) -> bool {
    closure_pairs(edges).iter().any(|(a, b)| a == b)
}

/// Recomputes the `INDIRECTLY_*` closure of `base` over activity nodes. An edge `(a, b)` exists
/// iff a path of one or more base edges leads from `a` to `b`. Rerunning on an unchanged base is a
/// no-op. Returns the number of closure edges.
pub fn transitive_closure(g: &mut KnowledgeGraph, base: ClosureBase) -> Result<usize, GraphError> {
    let (base_type, closure_type) = base.types();
    let edges: Vec<(NodeId, NodeId)> = g.rels_of_type(base_type).map(|r| (r.source, r.target)).collect();
    let pairs = closure_pairs(&edges);
    if base == ClosureBase::Causes && pairs.iter().any(|(a, b)| a == b) {
        return Err(GraphError::CyclicBase(base_type));
    }
    let existing: BTreeSet<(NodeId, NodeId)> = g.rels_of_type(closure_type).map(|r| (r.source, r.target)).collect();
    if existing == pairs {
        return Ok(pairs.len());
    }
    g.clear_type(closure_type);
    for &(a, b) in &pairs {
        g.add_rel(closure_type, a, b, Attributes::new())?;
    }
    g.bump(match base {
        ClosureBase::FlowsTo => Layer::Process,
        ClosureBase::Causes => Layer::Causal,
    });
    Ok(pairs.len())
}
