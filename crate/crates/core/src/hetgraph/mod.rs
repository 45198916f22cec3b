//! Multi-attributed heterogeneous graphs.
//!
//! Nodes and edges carry a type and a per-type attribute row. Node ids are
//! global (`0..num_nodes`); internally every node also has a dense local
//! index within its type so attribute and state matrices can be addressed
//! by `(type, local)`. The same holds for edges and relations.

mod io;

pub use io::{load_graph, save_graph};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeType {
    pub name: String,
    pub attr_names: Vec<String>,
}

impl NodeType {
    pub fn attr_dim(&self) -> usize {
        self.attr_names.len()
    }
}

/// A relation. Each relation binds exactly one source and one destination
/// node type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeType {
    pub name: String,
    pub src_type: usize,
    pub dst_type: usize,
    pub attr_names: Vec<String>,
    /// Set on relations created by [`HeteroGraph::add_reverse_relations`].
    pub reverse_of: Option<usize>,
}

impl EdgeType {
    pub fn attr_dim(&self) -> usize {
        self.attr_names.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub rel: usize,
}

/// Which end of an edge the queried node sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// The node is the edge's source. Self-loops report `Src`.
    Src,
    Dst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Incidence {
    pub edge: EdgeId,
    pub other: NodeId,
    pub dir: Direction,
}

/// Node and edge type declarations shared by every graph of one task.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Schema {
    pub node_types: Vec<NodeType>,
    pub edge_types: Vec<EdgeType>,
}

impl Schema {
    pub fn add_node_type(&mut self, name: &str, attrs: &[&str]) -> Result<usize> {
        if self.node_type_id(name).is_some() {
            return Err(Error::schema(
                "schema",
                format!("duplicate node type {name:?}"),
            ));
        }
        self.node_types.push(NodeType {
            name: name.to_string(),
            attr_names: attrs.iter().map(|s| s.to_string()).collect(),
        });
        Ok(self.node_types.len() - 1)
    }

    pub fn add_edge_type(
        &mut self,
        name: &str,
        src: usize,
        dst: usize,
        attrs: &[&str],
    ) -> Result<usize> {
        if self.edge_type_id(name).is_some() {
            return Err(Error::schema(
                "schema",
                format!("duplicate edge type {name:?}"),
            ));
        }
        if src >= self.node_types.len() || dst >= self.node_types.len() {
            return Err(Error::schema(
                "schema",
                format!("edge type {name:?} references unknown node type"),
            ));
        }
        self.edge_types.push(EdgeType {
            name: name.to_string(),
            src_type: src,
            dst_type: dst,
            attr_names: attrs.iter().map(|s| s.to_string()).collect(),
            reverse_of: None,
        });
        Ok(self.edge_types.len() - 1)
    }

    pub fn node_type_id(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t.name == name)
    }

    pub fn edge_type_id(&self, name: &str) -> Option<usize> {
        self.edge_types.iter().position(|t| t.name == name)
    }

    pub fn node_attr_dims(&self) -> Vec<usize> {
        self.node_types.iter().map(NodeType::attr_dim).collect()
    }

    pub fn edge_attr_dims(&self) -> Vec<usize> {
        self.edge_types.iter().map(EdgeType::attr_dim).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    schema: Schema,
    node_type_of: Vec<usize>,
    node_local: Vec<usize>,
    type_nodes: Vec<Vec<NodeId>>,
    edges: Vec<Edge>,
    edge_local: Vec<usize>,
    rel_edges: Vec<Vec<EdgeId>>,
    node_attrs: Vec<Tensor>,
    edge_attrs: Vec<Tensor>,
    incidence: Vec<Vec<EdgeId>>,
}

/// A node as supplied to [`HeteroGraph::from_parts`].
#[derive(Clone, Debug)]
pub struct NodeRecord {
    pub id: NodeId,
    pub node_type: usize,
    pub attrs: Vec<f64>,
}

/// An edge as supplied to [`HeteroGraph::from_parts`].
#[derive(Clone, Debug)]
pub struct EdgeRecord {
    pub id: EdgeId,
    pub src: NodeId,
    pub dst: NodeId,
    pub rel: usize,
    pub attrs: Vec<f64>,
}

impl HeteroGraph {
    /// Validates and assembles a graph. Node ids must be exactly
    /// `0..nodes.len()` and edge ids `0..edges.len()`, in any order.
    pub fn from_parts(
        schema: Schema,
        nodes: Vec<NodeRecord>,
        edges: Vec<EdgeRecord>,
    ) -> Result<Self> {
        let n = nodes.len();
        let mut slot: Vec<Option<NodeRecord>> = vec![None; n];
        for rec in nodes {
            let ctx = format!(
                "nodes_{}",
                schema
                    .node_types
                    .get(rec.node_type)
                    .map_or("?", |t| &t.name)
            );
            let Some(ty) = schema.node_types.get(rec.node_type) else {
                return Err(Error::schema(
                    ctx,
                    format!("node {}: unknown node type {}", rec.id, rec.node_type),
                ));
            };
            if rec.attrs.len() != ty.attr_dim() {
                return Err(Error::schema(
                    ctx,
                    format!(
                        "node {}: {} attributes, expected {}",
                        rec.id,
                        rec.attrs.len(),
                        ty.attr_dim()
                    ),
                ));
            }
            if rec.attrs.iter().any(|v| !v.is_finite()) {
                return Err(Error::schema(
                    ctx,
                    format!("node {}: non-finite attribute", rec.id),
                ));
            }
            if rec.id >= n {
                return Err(Error::schema(
                    ctx,
                    format!("node id {} outside dense range 0..{n}", rec.id),
                ));
            }
            if slot[rec.id].is_some() {
                return Err(Error::schema(ctx, format!("duplicate node id {}", rec.id)));
            }
            let id = rec.id;
            slot[id] = Some(rec);
        }
        let nodes: Vec<NodeRecord> = slot
            .into_iter()
            .map(|r| r.expect("dense ids checked"))
            .collect();

        let nt = schema.node_types.len();
        let mut node_type_of = Vec::with_capacity(n);
        let mut node_local = Vec::with_capacity(n);
        let mut type_nodes = vec![Vec::new(); nt];
        let mut node_rows: Vec<Vec<f64>> = vec![Vec::new(); nt];
        for rec in &nodes {
            node_type_of.push(rec.node_type);
            node_local.push(type_nodes[rec.node_type].len());
            type_nodes[rec.node_type].push(rec.id);
            node_rows[rec.node_type].extend_from_slice(&rec.attrs);
        }
        let node_attrs = node_rows
            .into_iter()
            .enumerate()
            .map(|(o, data)| {
                Tensor::new(
                    vec![type_nodes[o].len(), schema.node_types[o].attr_dim()],
                    data,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let m = edges.len();
        let mut eslot: Vec<Option<EdgeRecord>> = vec![None; m];
        for rec in edges {
            let Some(rt) = schema.edge_types.get(rec.rel) else {
                return Err(Error::schema(
                    "edges",
                    format!("edge {}: unknown relation {}", rec.id, rec.rel),
                ));
            };
            let ctx = format!("edges_{}", rt.name);
            if rec.attrs.len() != rt.attr_dim() {
                return Err(Error::schema(
                    ctx,
                    format!(
                        "edge {}: {} attributes, expected {}",
                        rec.id,
                        rec.attrs.len(),
                        rt.attr_dim()
                    ),
                ));
            }
            if rec.attrs.iter().any(|v| !v.is_finite()) {
                return Err(Error::schema(
                    ctx,
                    format!("edge {}: non-finite attribute", rec.id),
                ));
            }
            for (end, v, want) in [("src", rec.src, rt.src_type), ("dst", rec.dst, rt.dst_type)] {
                if v >= n {
                    return Err(Error::schema(
                        ctx,
                        format!("edge {}: dangling {end} endpoint {v}", rec.id),
                    ));
                }
                if node_type_of[v] != want {
                    return Err(Error::schema(
                        ctx,
                        format!(
                            "edge {}: {end} node {v} has type {:?}, relation expects {:?}",
                            rec.id,
                            schema.node_types[node_type_of[v]].name,
                            schema.node_types[want].name
                        ),
                    ));
                }
            }
            if rec.id >= m {
                return Err(Error::schema(
                    ctx,
                    format!("edge id {} outside dense range 0..{m}", rec.id),
                ));
            }
            if eslot[rec.id].is_some() {
                return Err(Error::schema(ctx, format!("duplicate edge id {}", rec.id)));
            }
            let id = rec.id;
            eslot[id] = Some(rec);
        }

        let rt = schema.edge_types.len();
        let mut edge_list = Vec::with_capacity(m);
        let mut edge_local = Vec::with_capacity(m);
        let mut rel_edges = vec![Vec::new(); rt];
        let mut edge_rows: Vec<Vec<f64>> = vec![Vec::new(); rt];
        let mut incidence = vec![Vec::new(); n];
        for rec in eslot.into_iter().map(|r| r.expect("dense ids checked")) {
            edge_list.push(Edge {
                src: rec.src,
                dst: rec.dst,
                rel: rec.rel,
            });
            edge_local.push(rel_edges[rec.rel].len());
            rel_edges[rec.rel].push(rec.id);
            edge_rows[rec.rel].extend_from_slice(&rec.attrs);
            incidence[rec.src].push(rec.id);
            if rec.dst != rec.src {
                incidence[rec.dst].push(rec.id);
            }
        }
        let edge_attrs = edge_rows
            .into_iter()
            .enumerate()
            .map(|(r, data)| {
                Tensor::new(
                    vec![rel_edges[r].len(), schema.edge_types[r].attr_dim()],
                    data,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(HeteroGraph {
            schema,
            node_type_of,
            node_local,
            type_nodes,
            edges: edge_list,
            edge_local,
            rel_edges,
            node_attrs,
            edge_attrs,
            incidence,
        })
    }

    /// Inverse of [`HeteroGraph::from_parts`].
    pub fn to_parts(&self) -> (Schema, Vec<NodeRecord>, Vec<EdgeRecord>) {
        let nodes = (0..self.num_nodes())
            .map(|v| NodeRecord {
                id: v,
                node_type: self.node_type_of[v],
                attrs: self.node_attr(v).to_vec(),
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .enumerate()
            .map(|(e, ed)| EdgeRecord {
                id: e,
                src: ed.src,
                dst: ed.dst,
                rel: ed.rel,
                attrs: self.edge_attr(e).to_vec(),
            })
            .collect();
        (self.schema.clone(), nodes, edges)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_nodes(&self) -> usize {
        self.node_type_of.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, e: EdgeId) -> Edge {
        self.edges[e]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Node type of `v`.
    pub fn node_type(&self, v: NodeId) -> usize {
        self.node_type_of[v]
    }

    /// Index of `v` among the nodes of its type.
    pub fn node_local(&self, v: NodeId) -> usize {
        self.node_local[v]
    }

    pub fn nodes_of_type(&self, o: usize) -> &[NodeId] {
        &self.type_nodes[o]
    }

    pub fn edge_local(&self, e: EdgeId) -> usize {
        self.edge_local[e]
    }

    pub fn edges_of_type(&self, r: usize) -> &[EdgeId] {
        &self.rel_edges[r]
    }

    pub fn node_attrs(&self, o: usize) -> &Tensor {
        &self.node_attrs[o]
    }

    pub fn edge_attrs(&self, r: usize) -> &Tensor {
        &self.edge_attrs[r]
    }

    pub fn node_attr(&self, v: NodeId) -> &[f64] {
        self.node_attrs[self.node_type_of[v]].row(self.node_local[v])
    }

    pub fn edge_attr(&self, e: EdgeId) -> &[f64] {
        self.edge_attrs[self.edges[e].rel].row(self.edge_local[e])
    }

    /// Ids of edges touching `v`, ascending. A self-loop is listed once.
    pub fn incident_edge_ids(&self, v: NodeId) -> &[EdgeId] {
        &self.incidence[v]
    }

    /// Edges touching `v` with the far endpoint and `v`'s role, in
    /// ascending edge-id order.
    pub fn incident_edges(&self, v: NodeId) -> Result<Vec<Incidence>> {
        if v >= self.num_nodes() {
            return Err(Error::invalid(
                "incident_edges",
                format!("node id {v} out of range for {} nodes", self.num_nodes()),
            ));
        }
        Ok(self.incidence[v]
            .iter()
            .map(|&e| {
                let ed = self.edges[e];
                if ed.src == v {
                    Incidence {
                        edge: e,
                        other: ed.dst,
                        dir: Direction::Src,
                    }
                } else {
                    Incidence {
                        edge: e,
                        other: ed.src,
                        dir: Direction::Dst,
                    }
                }
            })
            .collect())
    }

    /// Raw attributes `src ‖ edge ‖ dst` of edge `e`, in stored direction.
    pub fn meta_knowledge(&self, e: EdgeId) -> Vec<f64> {
        let ed = self.edges[e];
        let mut mk = Vec::new();
        mk.extend_from_slice(self.node_attr(ed.src));
        mk.extend_from_slice(self.edge_attr(e));
        mk.extend_from_slice(self.node_attr(ed.dst));
        mk
    }

    /// Meta knowledge of every edge of relation `r`, one row per local edge.
    pub fn meta_knowledge_matrix(&self, r: usize) -> Tensor {
        let rt = &self.schema.edge_types[r];
        let width = self.schema.node_types[rt.src_type].attr_dim()
            + rt.attr_dim()
            + self.schema.node_types[rt.dst_type].attr_dim();
        let mut data = Vec::with_capacity(self.rel_edges[r].len() * width);
        for &e in &self.rel_edges[r] {
            data.extend(self.meta_knowledge(e));
        }
        Tensor::new(vec![self.rel_edges[r].len(), width], data).expect("meta knowledge width")
    }

    /// Adds a mirrored `<name>_rev` relation for every relation that is
    /// neither a reverse itself nor already mirrored. New edges get ids
    /// after all existing ones and copy the attributes of their originals.
    pub fn add_reverse_relations(&self) -> Result<HeteroGraph> {
        let (mut schema, nodes, mut edges) = self.to_parts();
        let originals = schema.edge_types.len();
        let mut new_rel = vec![None; originals];
        for r in 0..originals {
            let rt = &schema.edge_types[r];
            let mirrored = rt.reverse_of.is_some()
                || schema.edge_types.iter().any(|t| t.reverse_of == Some(r));
            if mirrored {
                continue;
            }
            let name = format!("{}_rev", rt.name);
            if schema.edge_type_id(&name).is_some() {
                return Err(Error::schema(
                    "schema",
                    format!("reverse relation name {name:?} already taken"),
                ));
            }
            let rev = EdgeType {
                name,
                src_type: rt.dst_type,
                dst_type: rt.src_type,
                attr_names: rt.attr_names.clone(),
                reverse_of: Some(r),
            };
            schema.edge_types.push(rev);
            new_rel[r] = Some(schema.edge_types.len() - 1);
        }
        let mut next = edges.len();
        for r in 0..originals {
            let Some(rev) = new_rel[r] else { continue };
            for &e in &self.rel_edges[r] {
                let ed = self.edges[e];
                edges.push(EdgeRecord {
                    id: next,
                    src: ed.dst,
                    dst: ed.src,
                    rel: rev,
                    attrs: self.edge_attr(e).to_vec(),
                });
                next += 1;
            }
        }
        HeteroGraph::from_parts(schema, nodes, edges)
    }
}

/// Hidden states of every node and edge at one layer, stored per type.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSet {
    pub node_states: Vec<Tensor>,
    pub edge_states: Vec<Tensor>,
    pub layer: usize,
}

impl StateSet {
    /// Layer-0 states: the raw attributes.
    pub fn initial(g: &HeteroGraph) -> Self {
        StateSet {
            node_states: g.node_attrs.clone(),
            edge_states: g.edge_attrs.clone(),
            layer: 0,
        }
    }

    pub fn node_state(&self, g: &HeteroGraph, v: NodeId) -> &[f64] {
        self.node_states[g.node_type(v)].row(g.node_local(v))
    }

    pub fn edge_state(&self, g: &HeteroGraph, e: EdgeId) -> &[f64] {
        self.edge_states[g.edge(e).rel].row(g.edge_local(e))
    }
}

/// Incremental construction with sequential ids.
#[derive(Clone, Debug, Default)]
pub struct GraphBuilder {
    schema: Schema,
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
}

impl GraphBuilder {
    pub fn new(schema: Schema) -> Self {
        GraphBuilder {
            schema,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn add_node(&mut self, node_type: usize, attrs: Vec<f64>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(NodeRecord {
            id,
            node_type,
            attrs,
        });
        id
    }

    pub fn add_edge(&mut self, src: NodeId, dst: NodeId, rel: usize, attrs: Vec<f64>) -> EdgeId {
        let id = self.edges.len();
        self.edges.push(EdgeRecord {
            id,
            src,
            dst,
            rel,
            attrs,
        });
        id
    }

    pub fn build(self) -> Result<HeteroGraph> {
        HeteroGraph::from_parts(self.schema, self.nodes, self.edges)
    }
}
