use std::rc::Rc;

use crate::error::{Error, Result};
use crate::hetgraph::{Direction, HeteroGraph};
use crate::tensor::Tensor;

/// Index arrays a layer needs to run on one graph, computed once.
///
/// States are held per node type (`[R*N_o x d]`) and per relation
/// (`[R*E_r x d]`), where `R` independent replicas of the graph (time
/// steps, in the spatiotemporal model) are stacked replica-major.
///
/// Per-edge quantities are laid out in a "side space" of `2*R*E` rows:
/// side 0 views each edge from its source (`[h_src | h_e | h_dst]`),
/// side 1 from its destination (`[h_dst | h_e | h_src]`). Within a side,
/// relation `r` occupies `R*E_r` rows starting at `R*edge_offset[r]`.
#[derive(Clone, Debug)]
pub struct LayerGraph {
    replicas: usize,
    nodes_per_type: Vec<usize>,
    edges_per_rel: Vec<usize>,
    node_offset: Vec<usize>,
    edge_offset: Vec<usize>,
    rel_types: Vec<(usize, usize)>,
    src_rows: Vec<Rc<[usize]>>,
    dst_rows: Vec<Rc<[usize]>>,
    tile: Vec<Rc<[usize]>>,
    meta_knowledge: Vec<Tensor>,
    pub(crate) node_pairs: Pairs,
    pub(crate) edge_pairs: EdgePairs,
}

/// Node neighborhoods: pair `p` feeds side-space row `src[p]` into node
/// row `seg[p]`.
#[derive(Clone, Debug)]
pub(crate) struct Pairs {
    pub src: Rc<[usize]>,
    pub seg: Rc<[usize]>,
    pub uniform: Tensor,
}

/// Edge neighborhoods: pair `p` scores neighbor row `nbr[p]` against the
/// target's source-side row `target[p]` and feeds edge row `seg[p]`.
#[derive(Clone, Debug)]
pub(crate) struct EdgePairs {
    pub target: Rc<[usize]>,
    pub nbr: Rc<[usize]>,
    pub seg: Rc<[usize]>,
    pub uniform: Tensor,
}

fn side(dir: Direction) -> usize {
    match dir {
        Direction::Src => 0,
        Direction::Dst => 1,
    }
}

fn uniform_weights(seg: &[usize], segments: usize) -> Tensor {
    let mut count = vec![0usize; segments];
    for &s in seg {
        count[s] += 1;
    }
    let data = seg.iter().map(|&s| 1.0 / count[s] as f64).collect();
    Tensor::new(vec![seg.len(), 1], data).expect("pair weights")
}

impl LayerGraph {
    pub fn new(g: &HeteroGraph) -> Result<Self> {
        Self::build(g, 1, false)
    }

    /// `replicas` stacked copies of `g`; `exclude_self_edge` drops an
    /// edge from its own neighborhood.
    pub fn build(g: &HeteroGraph, replicas: usize, exclude_self_edge: bool) -> Result<Self> {
        if replicas == 0 {
            return Err(Error::invalid(
                "layer_graph",
                "replica count must be positive",
            ));
        }
        let schema = g.schema();
        let nt = schema.node_types.len();
        let nr = schema.edge_types.len();
        let nodes_per_type: Vec<usize> = (0..nt).map(|o| g.nodes_of_type(o).len()).collect();
        let edges_per_rel: Vec<usize> = (0..nr).map(|r| g.edges_of_type(r).len()).collect();
        let prefix = |v: &[usize]| {
            let mut acc = 0;
            v.iter()
                .map(|n| {
                    let o = acc;
                    acc += n;
                    o
                })
                .collect::<Vec<_>>()
        };
        let node_offset = prefix(&nodes_per_type);
        let edge_offset = prefix(&edges_per_rel);
        let total_edges = g.num_edges() * replicas;
        let rel_types: Vec<(usize, usize)> = schema
            .edge_types
            .iter()
            .map(|t| (t.src_type, t.dst_type))
            .collect();

        let mut src_rows = Vec::with_capacity(nr);
        let mut dst_rows = Vec::with_capacity(nr);
        let mut tile = Vec::with_capacity(nr);
        for (r, &(st, dt)) in rel_types.iter().enumerate() {
            let edges = g.edges_of_type(r);
            let mut s = Vec::with_capacity(edges.len() * replicas);
            let mut d = Vec::with_capacity(edges.len() * replicas);
            let mut t = Vec::with_capacity(edges.len() * replicas);
            for rep in 0..replicas {
                for (k, &e) in edges.iter().enumerate() {
                    let ed = g.edge(e);
                    s.push(rep * nodes_per_type[st] + g.node_local(ed.src));
                    d.push(rep * nodes_per_type[dt] + g.node_local(ed.dst));
                    t.push(k);
                }
            }
            src_rows.push(s.into());
            dst_rows.push(d.into());
            tile.push(t.into());
        }
        let meta_knowledge = (0..nr).map(|r| g.meta_knowledge_matrix(r)).collect();

        let edge_row = |rep: usize, e: usize| {
            let r = g.edge(e).rel;
            replicas * edge_offset[r] + rep * edges_per_rel[r] + g.edge_local(e)
        };

        let (mut nsrc, mut nseg) = (Vec::new(), Vec::new());
        for o in 0..nt {
            for rep in 0..replicas {
                for (i, &v) in g.nodes_of_type(o).iter().enumerate() {
                    let row = replicas * node_offset[o] + rep * nodes_per_type[o] + i;
                    for inc in g.incident_edges(v)? {
                        nsrc.push(side(inc.dir) * total_edges + edge_row(rep, inc.edge));
                        nseg.push(row);
                    }
                }
            }
        }
        let node_rows = g.num_nodes() * replicas;
        let node_pairs = Pairs {
            uniform: uniform_weights(&nseg, node_rows),
            src: nsrc.into(),
            seg: nseg.into(),
        };

        let (mut etgt, mut enbr, mut eseg) = (Vec::new(), Vec::new(), Vec::new());
        for r in 0..nr {
            for rep in 0..replicas {
                for &e in g.edges_of_type(r) {
                    let row = edge_row(rep, e);
                    let ed = g.edge(e);
                    for v in [ed.src, ed.dst] {
                        for inc in g.incident_edges(v)? {
                            if exclude_self_edge && inc.edge == e {
                                continue;
                            }
                            etgt.push(row);
                            enbr.push(side(inc.dir) * total_edges + edge_row(rep, inc.edge));
                            eseg.push(row);
                        }
                    }
                }
            }
        }
        let edge_pairs = EdgePairs {
            uniform: uniform_weights(&eseg, total_edges),
            target: etgt.into(),
            nbr: enbr.into(),
            seg: eseg.into(),
        };

        Ok(Self {
            replicas,
            nodes_per_type,
            edges_per_rel,
            node_offset,
            edge_offset,
            rel_types,
            src_rows,
            dst_rows,
            tile,
            meta_knowledge,
            node_pairs,
            edge_pairs,
        })
    }

    /// Replaces the per-relation meta knowledge matrices (`[E_r x m_r]`).
    pub fn with_meta_knowledge(mut self, mk: Vec<Tensor>) -> Result<Self> {
        if mk.len() != self.edges_per_rel.len() {
            return Err(Error::invalid(
                "layer_graph",
                "one meta knowledge matrix per relation required",
            ));
        }
        for (m, &e) in mk.iter().zip(&self.edges_per_rel) {
            if m.shape().len() != 2 || m.rows() != e {
                return Err(Error::shape("meta_knowledge", &[e, 0], m.shape()));
            }
        }
        self.meta_knowledge = mk;
        Ok(self)
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn num_node_types(&self) -> usize {
        self.nodes_per_type.len()
    }

    pub fn num_relations(&self) -> usize {
        self.edges_per_rel.len()
    }

    /// Rows of the replicated state for node type `o`.
    pub fn node_rows(&self, o: usize) -> usize {
        self.replicas * self.nodes_per_type[o]
    }

    /// Rows of the replicated state for relation `r`.
    pub fn edge_rows(&self, r: usize) -> usize {
        self.replicas * self.edges_per_rel[r]
    }

    pub fn total_node_rows(&self) -> usize {
        self.replicas * self.nodes_per_type.iter().sum::<usize>()
    }

    pub fn total_edge_rows(&self) -> usize {
        self.replicas * self.edges_per_rel.iter().sum::<usize>()
    }

    pub(crate) fn node_offset(&self, o: usize) -> usize {
        self.replicas * self.node_offset[o]
    }

    pub(crate) fn edge_offset(&self, r: usize) -> usize {
        self.replicas * self.edge_offset[r]
    }

    pub fn rel_types(&self, r: usize) -> (usize, usize) {
        self.rel_types[r]
    }

    pub(crate) fn src_rows(&self, r: usize) -> Rc<[usize]> {
        self.src_rows[r].clone()
    }

    pub(crate) fn dst_rows(&self, r: usize) -> Rc<[usize]> {
        self.dst_rows[r].clone()
    }

    /// Maps each replicated edge row of relation `r` to its base edge.
    pub(crate) fn tile(&self, r: usize) -> Rc<[usize]> {
        self.tile[r].clone()
    }

    pub fn meta_knowledge(&self, r: usize) -> &Tensor {
        &self.meta_knowledge[r]
    }

    /// Node-attention segments: for pair `p`, the target node row
    /// (types concatenated in type order).
    pub fn node_pair_targets(&self) -> &[usize] {
        &self.node_pairs.seg
    }

    /// Edge-attention segments: for pair `p`, the target edge row
    /// (relations concatenated in relation order).
    pub fn edge_pair_targets(&self) -> &[usize] {
        &self.edge_pairs.seg
    }
}
