use crate::error::Result;
use crate::hetgraph::{EdgeRecord, HeteroGraph, NodeRecord, Schema};

/// Switches for the ablated variants of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationConfig {
    pub use_edge_states: bool,
    pub use_meta_attention: bool,
    pub collapse_types: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationConfig {
    pub const FULL: Self = Self {
        use_edge_states: true,
        use_meta_attention: true,
        collapse_types: false,
    };

    /// Short label used in logs and result files.
    pub fn label(&self) -> &'static str {
        match (
            self.collapse_types,
            self.use_edge_states,
            self.use_meta_attention,
        ) {
            (false, true, true) => "full",
            (true, true, true) => "no-het",
            (false, false, true) => "no-edge-info",
            (false, true, false) => "no-meta-att",
            _ => "custom",
        }
    }

    /// Rewrites a graph into the form the ablated model consumes.
    pub fn apply(&self, g: &HeteroGraph) -> Result<HeteroGraph> {
        let g = if self.use_edge_states {
            g.clone()
        } else {
            strip_edge_attributes(g)?
        };
        if self.collapse_types {
            collapse_types(&g)
        } else {
            Ok(g)
        }
    }
}

/// Drops every edge attribute, keeping topology and node attributes.
pub fn strip_edge_attributes(g: &HeteroGraph) -> Result<HeteroGraph> {
    let (mut schema, nodes, mut edges) = g.to_parts();
    for et in &mut schema.edge_types {
        et.attr_names.clear();
    }
    for e in &mut edges {
        e.attrs.clear();
    }
    HeteroGraph::from_parts(schema, nodes, edges)
}

/// Erases types: one node type and one relation. Attributes are placed in
/// per-type slots of a shared zero-padded vector, so ids and attribute
/// values survive but parameters can no longer depend on type.
pub fn collapse_types(g: &HeteroGraph) -> Result<HeteroGraph> {
    let (schema, nodes, edges) = g.to_parts();
    let slots = |dims: Vec<usize>| {
        let mut off = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for d in dims {
            off.push(acc);
            acc += d;
        }
        (off, acc)
    };
    let (node_off, node_width) = slots(schema.node_attr_dims());
    let (edge_off, edge_width) = slots(schema.edge_attr_dims());

    let node_names: Vec<String> = schema
        .node_types
        .iter()
        .flat_map(|t| t.attr_names.iter().map(move |a| format!("{}.{a}", t.name)))
        .collect();
    let edge_names: Vec<String> = schema
        .edge_types
        .iter()
        .flat_map(|t| t.attr_names.iter().map(move |a| format!("{}.{a}", t.name)))
        .collect();
    let mut out = Schema::default();
    let nn: Vec<&str> = node_names.iter().map(String::as_str).collect();
    let en: Vec<&str> = edge_names.iter().map(String::as_str).collect();
    let node = out.add_node_type("node", &nn)?;
    out.add_edge_type("edge", node, node, &en)?;

    let nodes = nodes
        .into_iter()
        .map(|n| {
            let mut attrs = vec![0.0; node_width];
            attrs[node_off[n.node_type]..node_off[n.node_type] + n.attrs.len()]
                .copy_from_slice(&n.attrs);
            NodeRecord {
                id: n.id,
                node_type: node,
                attrs,
            }
        })
        .collect();
    let edges = edges
        .into_iter()
        .map(|e| {
            let mut attrs = vec![0.0; edge_width];
            attrs[edge_off[e.rel]..edge_off[e.rel] + e.attrs.len()].copy_from_slice(&e.attrs);
            EdgeRecord {
                id: e.id,
                src: e.src,
                dst: e.dst,
                rel: 0,
                attrs,
            }
        })
        .collect();
    HeteroGraph::from_parts(out, nodes, edges)
}
