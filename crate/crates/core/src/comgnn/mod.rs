//! Co-evolved meta graph neural network: node and edge states refined
//! together, with attention weights generated from meta knowledge.

mod ablation;
mod layer;
mod meta;
mod structure;

use rand::Rng;

pub use ablation::{collapse_types, strip_edge_attributes, AblationConfig};
pub use layer::{CoMGNNLayer, LayerDims, LayerOptions, Prepared};
pub use meta::MetaLearnerNet;
pub use structure::LayerGraph;

use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, Schema};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{concat, Tape, Tensor, Var, DEFAULT_LEAKY_SLOPE};

/// Widths and depth of a stack. Every layer maps to `node_dim`/`edge_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    pub layers: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub node_msg: usize,
    pub edge_msg: usize,
    pub attn: usize,
    pub meta_hidden: usize,
    pub leaky_slope: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            layers: 2,
            node_dim: 32,
            edge_dim: 32,
            node_msg: 16,
            edge_msg: 16,
            attn: 16,
            meta_hidden: 16,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

/// Meta knowledge width per relation: source, edge and destination
/// attribute counts.
pub fn meta_knowledge_dims(schema: &Schema) -> Vec<usize> {
    let nd = schema.node_attr_dims();
    schema
        .edge_types
        .iter()
        .map(|t| nd[t.src_type] + t.attr_dim() + nd[t.dst_type])
        .collect()
}

/// An `L`-layer stack over one (already ablation-transformed) schema.
#[derive(Clone, Debug)]
pub struct CoMGNN {
    layers: Vec<CoMGNNLayer>,
    ablation: AblationConfig,
}

impl CoMGNN {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        schema: &Schema,
        prefix: &str,
        dims: &ModelDims,
        ablation: AblationConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.layers == 0 {
            return Err(Error::Config("at least one layer is required".into()));
        }
        let nt = schema.node_types.len();
        let nr = schema.edge_types.len();
        let edges_on = ablation.use_edge_states;
        let opts = LayerOptions {
            leaky_slope: dims.leaky_slope,
            meta_attention: ablation.use_meta_attention,
            edge_states: edges_on,
        };
        let edge_width = |d: usize| if edges_on { d } else { 0 };
        let mut node_in = schema.node_attr_dims();
        let mut edge_in: Vec<usize> = schema
            .edge_attr_dims()
            .into_iter()
            .map(edge_width)
            .collect();
        let mut layers = Vec::with_capacity(dims.layers);
        for l in 1..=dims.layers {
            let ld = LayerDims {
                node_in: node_in.clone(),
                edge_in: edge_in.clone(),
                node_out: vec![dims.node_dim; nt],
                edge_out: vec![edge_width(dims.edge_dim); nr],
                meta_in: meta_knowledge_dims(schema),
                node_msg: dims.node_msg,
                edge_msg: dims.edge_msg,
                attn: dims.attn,
                meta_hidden: dims.meta_hidden,
            };
            node_in = ld.node_out.clone();
            edge_in = ld.edge_out.clone();
            layers.push(CoMGNNLayer::new(store, schema, prefix, l, ld, opts, rng)?);
        }
        Ok(Self { layers, ablation })
    }

    pub fn layers(&self) -> &[CoMGNNLayer] {
        &self.layers
    }

    pub fn ablation(&self) -> AblationConfig {
        self.ablation
    }

    pub fn node_out_dims(&self) -> &[usize] {
        &self.layers.last().expect("non-empty stack").dims().node_out
    }

    pub fn edge_out_dims(&self) -> &[usize] {
        &self.layers.last().expect("non-empty stack").dims().edge_out
    }

    /// Layer-0 states: the raw attributes (edge attributes only when edge
    /// states are enabled).
    pub fn input_states<'t>(
        &self,
        tape: &'t Tape,
        g: &HeteroGraph,
    ) -> (Vec<Var<'t>>, Vec<Var<'t>>) {
        let nodes = (0..g.schema().node_types.len())
            .map(|o| tape.constant(g.node_attrs(o).clone()))
            .collect();
        let edges = (0..g.schema().edge_types.len())
            .map(|r| {
                if self.ablation.use_edge_states {
                    tape.constant(g.edge_attrs(r).clone())
                } else {
                    tape.constant(Tensor::zeros(&[g.edges_of_type(r).len(), 0]))
                }
            })
            .collect();
        (nodes, edges)
    }

    /// Runs every layer, returning final node and edge states.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        lg: &LayerGraph,
        nodes: &[Var<'t>],
        edges: &[Var<'t>],
    ) -> Result<(Vec<Var<'t>>, Vec<Var<'t>>)> {
        let (mut n, mut e) = (nodes.to_vec(), edges.to_vec());
        for layer in &self.layers {
            (n, e) = layer.forward(p, lg, &n, &e)?;
        }
        Ok((n, e))
    }
}

/// Affine map of `[h_src | h_e | h_dst]` to one score per edge.
#[derive(Clone, Debug)]
pub struct EdgeReadout {
    w: ParamId,
    b: ParamId,
}

impl EdgeReadout {
    /// Registers `<name>.W` (`[1 x in_dim]`) and `<name>.b`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add_weight(format!("{name}.W"), 1, in_dim, rng)?;
        let b = store.add_zeros(format!("{name}.b"), &[1])?;
        Ok(Self { w, b })
    }

    /// `[n x 1]` scores from row-aligned endpoint and edge states.
    pub fn score<'t>(
        &self,
        p: &Bound<'t>,
        h_src: &Var<'t>,
        h_edge: &Var<'t>,
        h_dst: &Var<'t>,
    ) -> Result<Var<'t>> {
        concat(&[*h_src, *h_edge, *h_dst], 1)?.linear(&p[self.w], Some(&p[self.b]))
    }
}
