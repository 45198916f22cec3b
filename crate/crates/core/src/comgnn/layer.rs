use rand::Rng;

use super::meta::MetaLearnerNet;
use super::structure::LayerGraph;
use crate::error::{Error, Result};
use crate::hetgraph::Schema;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{concat, Tape, Tensor, Var, DEFAULT_LEAKY_SLOPE};

/// Widths of one layer. `node_in[o]`/`node_out[o]` are per node type,
/// `edge_in[r]`/`edge_out[r]` per relation, `meta_in[r]` is the meta
/// knowledge width of relation `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerDims {
    pub node_in: Vec<usize>,
    pub edge_in: Vec<usize>,
    pub node_out: Vec<usize>,
    pub edge_out: Vec<usize>,
    pub meta_in: Vec<usize>,
    pub node_msg: usize,
    pub edge_msg: usize,
    pub attn: usize,
    pub meta_hidden: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerOptions {
    pub leaky_slope: f64,
    pub meta_attention: bool,
    pub edge_states: bool,
}

impl Default for LayerOptions {
    fn default() -> Self {
        Self {
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            meta_attention: true,
            edge_states: true,
        }
    }
}

#[derive(Clone, Debug)]
struct RelParams {
    w: ParamId,
    b: ParamId,
    edge: Option<EdgeRelParams>,
    gw: Option<MetaLearnerNet>,
    gb: Option<MetaLearnerNet>,
}

#[derive(Clone, Debug)]
struct EdgeRelParams {
    w: ParamId,
    b: ParamId,
    w_star: ParamId,
    b_star: ParamId,
    gw_edge: Option<MetaLearnerNet>,
}

#[derive(Clone, Debug)]
struct NodeParams {
    w: ParamId,
    b: ParamId,
}

/// One co-evolving aggregation layer.
#[derive(Clone, Debug)]
pub struct CoMGNNLayer {
    dims: LayerDims,
    opts: LayerOptions,
    rel_types: Vec<(usize, usize)>,
    rels: Vec<RelParams>,
    nodes: Vec<NodeParams>,
}

/// Per-relation inputs viewed from each endpoint, shared by every
/// sub-computation of a layer.
pub struct Prepared<'t> {
    /// `[side][r]`: `[R*E_r x d_hat_r]` concatenated endpoint/edge states.
    x: [Vec<Var<'t>>; 2],
    mk: Vec<Var<'t>>,
    tape: &'t Tape,
}

fn cat_rows<'t>(parts: Vec<Var<'t>>) -> Result<Var<'t>> {
    concat(&parts, 0)
}

impl CoMGNNLayer {
    /// Registers the layer's parameters as `<prefix>layer.<l>...` and
    /// `<prefix>meta.<l>...`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        schema: &Schema,
        prefix: &str,
        l: usize,
        dims: LayerDims,
        opts: LayerOptions,
        rng: &mut R,
    ) -> Result<Self> {
        let nt = schema.node_types.len();
        let nr = schema.edge_types.len();
        let widths_ok = dims.node_in.len() == nt
            && dims.node_out.len() == nt
            && dims.edge_in.len() == nr
            && dims.edge_out.len() == nr
            && dims.meta_in.len() == nr;
        if !widths_ok {
            return Err(Error::Config(format!(
                "layer {l}: dimension lists do not match {nt} node types and {nr} relations"
            )));
        }
        if !opts.edge_states
            && (dims.edge_in.iter().any(|&d| d > 0) || dims.edge_out.iter().any(|&d| d > 0))
        {
            return Err(Error::Config(format!(
                "layer {l}: edge widths must be zero without edge states"
            )));
        }
        let rel_types: Vec<(usize, usize)> = schema
            .edge_types
            .iter()
            .map(|t| (t.src_type, t.dst_type))
            .collect();
        let mut rels = Vec::with_capacity(nr);
        for (r, et) in schema.edge_types.iter().enumerate() {
            let (st, dt) = rel_types[r];
            let d_hat = dims.node_in[st] + dims.edge_in[r] + dims.node_in[dt];
            let base = format!("{prefix}layer.{l}.rel.{}", et.name);
            let meta = format!("{prefix}meta.{l}.rel.{}", et.name);
            let w = store.add_weight(format!("{base}.W"), dims.node_msg, d_hat, rng)?;
            let b = store.add_zeros(format!("{base}.b"), &[dims.node_msg])?;
            let edge = if opts.edge_states {
                let w = store.add_weight(format!("{base}.W_edge"), dims.edge_msg, d_hat, rng)?;
                let b = store.add_zeros(format!("{base}.b_edge"), &[dims.edge_msg])?;
                let w_star = store.add_weight(
                    format!("{base}.W_star"),
                    dims.edge_out[r],
                    dims.edge_msg + dims.edge_in[r],
                    rng,
                )?;
                let b_star = store.add_zeros(format!("{base}.b_star"), &[dims.edge_out[r]])?;
                Some(EdgeRelParams {
                    w,
                    b,
                    w_star,
                    b_star,
                    gw_edge: None,
                })
            } else {
                None
            };
            let (gw, gb, edge) = if opts.meta_attention {
                let mi = dims.meta_in[r];
                let gw = MetaLearnerNet::new(
                    store,
                    &format!("{meta}.gw"),
                    mi,
                    dims.meta_hidden,
                    d_hat,
                    rng,
                )?;
                let gb = MetaLearnerNet::new(
                    store,
                    &format!("{meta}.gb"),
                    mi,
                    dims.meta_hidden,
                    1,
                    rng,
                )?;
                let edge = match edge {
                    Some(mut e) => {
                        let out = dims.attn * d_hat;
                        e.gw_edge = Some(MetaLearnerNet::new(
                            store,
                            &format!("{meta}.gw_edge"),
                            mi,
                            dims.meta_hidden,
                            out,
                            rng,
                        )?);
                        Some(e)
                    }
                    None => None,
                };
                (Some(gw), Some(gb), edge)
            } else {
                (None, None, edge)
            };
            rels.push(RelParams { w, b, edge, gw, gb });
        }
        let mut nodes = Vec::with_capacity(nt);
        for (o, t) in schema.node_types.iter().enumerate() {
            let base = format!("{prefix}layer.{l}.node.{}", t.name);
            let w = store.add_weight(
                format!("{base}.W"),
                dims.node_out[o],
                dims.node_msg + dims.node_in[o],
                rng,
            )?;
            let b = store.add_zeros(format!("{base}.b"), &[dims.node_out[o]])?;
            nodes.push(NodeParams { w, b });
        }
        Ok(Self {
            dims,
            opts,
            rel_types,
            rels,
            nodes,
        })
    }

    pub fn dims(&self) -> &LayerDims {
        &self.dims
    }

    pub fn options(&self) -> &LayerOptions {
        &self.opts
    }

    fn check_inputs(&self, lg: &LayerGraph, nodes: &[Var<'_>], edges: &[Var<'_>]) -> Result<()> {
        if nodes.len() != self.nodes.len() || edges.len() != self.rels.len() {
            return Err(Error::invalid(
                "layer_forward",
                "state lists do not match the schema",
            ));
        }
        if lg.num_node_types() != self.nodes.len() || lg.num_relations() != self.rels.len() {
            return Err(Error::invalid(
                "layer_forward",
                "layer graph does not match the schema",
            ));
        }
        for (o, h) in nodes.iter().enumerate() {
            let want = [lg.node_rows(o), self.dims.node_in[o]];
            if h.shape() != want {
                return Err(Error::shape("layer_forward node state", &want, &h.shape()));
            }
        }
        for (r, h) in edges.iter().enumerate() {
            let want = [lg.edge_rows(r), self.dims.edge_in[r]];
            if h.shape() != want {
                return Err(Error::shape("layer_forward edge state", &want, &h.shape()));
            }
        }
        Ok(())
    }

    /// Gathers `[h_src | h_e | h_dst]` and `[h_dst | h_e | h_src]` for
    /// every relation.
    pub fn prepare<'t>(
        &self,
        lg: &LayerGraph,
        nodes: &[Var<'t>],
        edges: &[Var<'t>],
    ) -> Result<Prepared<'t>> {
        self.check_inputs(lg, nodes, edges)?;
        let tape = nodes
            .first()
            .map(Var::tape)
            .ok_or_else(|| Error::invalid("layer_forward", "no node types"))?;
        let mut fwd = Vec::with_capacity(self.rels.len());
        let mut bwd = Vec::with_capacity(self.rels.len());
        let mut mk = Vec::with_capacity(self.rels.len());
        for (r, &(st, dt)) in self.rel_types.iter().enumerate() {
            let hs = nodes[st].gather_rows(lg.src_rows(r))?;
            let hd = nodes[dt].gather_rows(lg.dst_rows(r))?;
            fwd.push(concat(&[hs, edges[r], hd], 1)?);
            bwd.push(concat(&[hd, edges[r], hs], 1)?);
            let m = lg.meta_knowledge(r);
            if m.cols() != self.dims.meta_in[r] {
                return Err(Error::shape(
                    "meta_knowledge",
                    &[m.rows(), self.dims.meta_in[r]],
                    m.shape(),
                ));
            }
            mk.push(tape.constant(m.clone()));
        }
        Ok(Prepared {
            x: [fwd, bwd],
            mk,
            tape,
        })
    }

    fn tiled<'t>(&self, lg: &LayerGraph, r: usize, v: Var<'t>) -> Result<Var<'t>> {
        if lg.replicas() == 1 {
            Ok(v)
        } else {
            v.gather_rows(lg.tile(r))
        }
    }

    /// Node messages `W_r [h_target | h_e | h_other] + b_r` for every edge
    /// side, in side-space order.
    pub fn node_messages<'t>(&self, p: &Bound<'t>, prep: &Prepared<'t>) -> Result<Var<'t>> {
        let mut parts = Vec::with_capacity(2 * self.rels.len());
        for xs in &prep.x {
            for (x, rp) in xs.iter().zip(&self.rels) {
                parts.push(x.linear(&p[rp.w], Some(&p[rp.b]))?);
            }
        }
        cat_rows(parts)
    }

    /// Normalized node attention, one weight per node-neighborhood pair.
    pub fn node_attention<'t>(
        &self,
        p: &Bound<'t>,
        lg: &LayerGraph,
        prep: &Prepared<'t>,
    ) -> Result<Var<'t>> {
        let tape = prep.tape;
        if !self.opts.meta_attention {
            return Ok(tape.constant(lg.node_pairs.uniform.clone()));
        }
        let mut ms = Vec::with_capacity(self.rels.len());
        let mut bs = Vec::with_capacity(self.rels.len());
        for (r, rp) in self.rels.iter().enumerate() {
            let (gw, gb) = (
                rp.gw.as_ref().expect("meta nets"),
                rp.gb.as_ref().expect("meta nets"),
            );
            ms.push(self.tiled(lg, r, gw.forward(p, &prep.mk[r])?)?);
            bs.push(self.tiled(lg, r, gb.forward(p, &prep.mk[r])?)?);
        }
        let mut scores = Vec::with_capacity(2 * self.rels.len());
        for xs in &prep.x {
            for r in 0..self.rels.len() {
                scores.push(
                    ms[r]
                        .row_dot(&xs[r])?
                        .add(&bs[r])?
                        .leaky_relu(self.opts.leaky_slope),
                );
            }
        }
        cat_rows(scores)?
            .gather_rows(lg.node_pairs.src.clone())?
            .segment_softmax(lg.node_pairs.seg.clone())
    }

    /// Next node states, one tensor per node type.
    pub fn node_evolve<'t>(
        &self,
        p: &Bound<'t>,
        lg: &LayerGraph,
        nodes: &[Var<'t>],
        prep: &Prepared<'t>,
    ) -> Result<Vec<Var<'t>>> {
        let tape = prep.tape;
        let agg = if lg.total_edge_rows() == 0 {
            tape.constant(Tensor::zeros(&[lg.total_node_rows(), self.dims.node_msg]))
        } else {
            let alpha = self.node_attention(p, lg, prep)?;
            self.node_messages(p, prep)?.gather_weighted_sum(
                lg.node_pairs.src.clone(),
                &alpha,
                lg.node_pairs.seg.clone(),
                lg.total_node_rows(),
            )?
        };
        let mut out = Vec::with_capacity(self.nodes.len());
        for (o, np) in self.nodes.iter().enumerate() {
            let h_hat = agg.slice_rows(lg.node_offset(o), lg.node_rows(o))?;
            out.push(
                concat(&[h_hat, nodes[o]], 1)?
                    .linear(&p[np.w], Some(&p[np.b]))?
                    .mish(),
            );
        }
        Ok(out)
    }

    /// Sigmoid projections of every edge side into the common attention
    /// space, in side-space order.
    fn edge_projections<'t>(
        &self,
        p: &Bound<'t>,
        lg: &LayerGraph,
        prep: &Prepared<'t>,
    ) -> Result<Var<'t>> {
        let mut mats = Vec::with_capacity(self.rels.len());
        for (r, rp) in self.rels.iter().enumerate() {
            let net = rp
                .edge
                .as_ref()
                .and_then(|e| e.gw_edge.as_ref())
                .expect("edge meta net");
            mats.push(net.forward(p, &prep.mk[r])?);
        }
        let mut parts = Vec::with_capacity(2 * self.rels.len());
        for xs in &prep.x {
            for r in 0..self.rels.len() {
                let index = (lg.replicas() > 1).then(|| lg.tile(r));
                parts.push(
                    mats[r]
                        .batched_matvec(&xs[r], self.dims.attn, index)?
                        .sigmoid(),
                );
            }
        }
        cat_rows(parts)
    }

    /// Normalized edge attention, one weight per edge-neighborhood pair.
    pub fn edge_attention<'t>(
        &self,
        p: &Bound<'t>,
        lg: &LayerGraph,
        prep: &Prepared<'t>,
    ) -> Result<Var<'t>> {
        let tape = prep.tape;
        if !self.opts.meta_attention {
            return Ok(tape.constant(lg.edge_pairs.uniform.clone()));
        }
        let proj = self.edge_projections(p, lg, prep)?;
        proj.pair_dot(
            lg.edge_pairs.target.clone(),
            &proj,
            lg.edge_pairs.nbr.clone(),
        )?
        .segment_softmax(lg.edge_pairs.seg.clone())
    }

    /// Next edge states, one tensor per relation.
    pub fn edge_evolve<'t>(
        &self,
        p: &Bound<'t>,
        lg: &LayerGraph,
        edges: &[Var<'t>],
        prep: &Prepared<'t>,
    ) -> Result<Vec<Var<'t>>> {
        let tape = prep.tape;
        if !self.opts.edge_states {
            return Ok((0..self.rels.len())
                .map(|r| tape.constant(Tensor::zeros(&[lg.edge_rows(r), 0])))
                .collect());
        }
        let agg = if lg.edge_pairs.seg.is_empty() {
            tape.constant(Tensor::zeros(&[lg.total_edge_rows(), self.dims.edge_msg]))
        } else {
            let mut parts = Vec::with_capacity(2 * self.rels.len());
            for xs in &prep.x {
                for (x, rp) in xs.iter().zip(&self.rels) {
                    let e = rp.edge.as_ref().expect("edge params");
                    parts.push(x.linear(&p[e.w], Some(&p[e.b]))?);
                }
            }
            let alpha = self.edge_attention(p, lg, prep)?;
            cat_rows(parts)?.gather_weighted_sum(
                lg.edge_pairs.nbr.clone(),
                &alpha,
                lg.edge_pairs.seg.clone(),
                lg.total_edge_rows(),
            )?
        };
        let mut out = Vec::with_capacity(self.rels.len());
        for (r, rp) in self.rels.iter().enumerate() {
            let e = rp.edge.as_ref().expect("edge params");
            let h_hat = agg.slice_rows(lg.edge_offset(r), lg.edge_rows(r))?;
            out.push(
                concat(&[h_hat, edges[r]], 1)?
                    .linear(&p[e.w_star], Some(&p[e.b_star]))?
                    .mish(),
            );
        }
        Ok(out)
    }

    /// Layer `l` states from layer `l-1` states. Nodes and edges both read
    /// only the incoming states.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        lg: &LayerGraph,
        nodes: &[Var<'t>],
        edges: &[Var<'t>],
    ) -> Result<(Vec<Var<'t>>, Vec<Var<'t>>)> {
        let prep = self.prepare(lg, nodes, edges)?;
        let n = self.node_evolve(p, lg, nodes, &prep)?;
        let e = self.edge_evolve(p, lg, edges, &prep)?;
        Ok((n, e))
    }
}
