//! Spatiotemporal extension: temporal gated convolutions around CoMGNN
//! layers, three periodic components, and a fused forecast head.

mod series;

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

pub use series::{
    build_period_windows, edge_dynamic_features, impute, load_series, read_dense, save_series,
    time_slice, window_ranges, write_dense, STSeries,
};

use crate::comgnn::{
    meta_knowledge_dims, AblationConfig, CoMGNNLayer, LayerDims, LayerGraph, LayerOptions,
    ModelDims,
};
use crate::error::{Error, Result};
use crate::hetgraph::HeteroGraph;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{concat, Tape, Tensor, Var};

pub const COMPONENTS: [&str; 3] = ["recent", "daily", "weekly"];

#[derive(Clone, Debug, PartialEq)]
pub struct STConfig {
    /// CoMGNN layers stacked in the middle of each sandwich block.
    pub k_spatial: usize,
    /// Temporal convolution width.
    pub kernel: usize,
    pub n_blocks: usize,
    pub t_recent: usize,
    pub t_daily: usize,
    pub t_weekly: usize,
    pub step_min: i64,
    pub day_min: i64,
    pub week_min: i64,
    /// Forecast offsets in steps; 1 is the step right after the window.
    pub horizons: Vec<usize>,
    pub channels: usize,
    pub edge_channels: usize,
    pub out_dim: usize,
}

impl Default for STConfig {
    fn default() -> Self {
        Self {
            k_spatial: 2,
            kernel: 3,
            n_blocks: 1,
            t_recent: 12,
            t_daily: 5,
            t_weekly: 5,
            step_min: 5,
            day_min: 1440,
            week_min: 10080,
            horizons: vec![1, 3, 6],
            channels: 16,
            edge_channels: 8,
            out_dim: 16,
        }
    }
}

impl STConfig {
    /// Shortest window the blocks can consume.
    pub fn min_window(&self) -> usize {
        self.n_blocks * 2 * (self.kernel.saturating_sub(1)) + 1
    }

    pub fn windows(&self) -> [usize; 3] {
        [self.t_recent, self.t_daily, self.t_weekly]
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(0)
    }

    pub fn day_steps(&self) -> Result<usize> {
        self.period_steps(self.day_min, "day")
    }

    pub fn week_steps(&self) -> Result<usize> {
        self.period_steps(self.week_min, "week")
    }

    fn period_steps(&self, minutes: i64, what: &str) -> Result<usize> {
        if self.step_min <= 0 || minutes <= 0 || minutes % self.step_min != 0 {
            return Err(Error::Config(format!(
                "{what} length {minutes} min is not a positive multiple of the {} min step",
                self.step_min
            )));
        }
        Ok((minutes / self.step_min) as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.n_blocks == 0 {
            return Err(Error::Config(
                "st.kernel and st.n_blocks must be positive".into(),
            ));
        }
        let min = self.min_window();
        for (name, len) in COMPONENTS.iter().zip(self.windows()) {
            if len < min {
                return Err(Error::Config(format!(
                    "st {name} window of {len} steps is shorter than the minimum {min} for kernel {} and {} blocks",
                    self.kernel, self.n_blocks
                )));
            }
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config(
                "st.horizons must be non-empty positive step counts".into(),
            ));
        }
        if self.channels == 0 || self.out_dim == 0 {
            return Err(Error::Config(
                "st.channels and st.out_dim must be positive".into(),
            ));
        }
        self.day_steps()?;
        self.week_steps()?;
        Ok(())
    }

    /// Steps of history a target needs before it.
    pub fn history_steps(&self) -> Result<usize> {
        Ok((self.week_steps()? + self.t_weekly)
            .max(self.day_steps()? + self.t_daily)
            .max(self.t_recent))
    }
}

/// A graph plus the layer structures built for each replica count.
pub struct STGraph {
    graph: HeteroGraph,
    exclude_self_edge: bool,
    cache: RefCell<HashMap<usize, Rc<LayerGraph>>>,
}

impl STGraph {
    pub fn new(graph: HeteroGraph) -> Self {
        Self {
            graph,
            exclude_self_edge: false,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn graph(&self) -> &HeteroGraph {
        &self.graph
    }

    pub fn layer_graph(&self, replicas: usize) -> Result<Rc<LayerGraph>> {
        if let Some(lg) = self.cache.borrow().get(&replicas) {
            return Ok(lg.clone());
        }
        let lg = Rc::new(LayerGraph::build(
            &self.graph,
            replicas,
            self.exclude_self_edge,
        )?);
        self.cache.borrow_mut().insert(replicas, lg.clone());
        Ok(lg)
    }
}

/// Splits `[T x N x F]` (global node order) into one `[T x N_o x F]`
/// tensor per node type.
pub fn split_nodes(x: &Tensor, g: &HeteroGraph) -> Vec<Tensor> {
    (0..g.schema().node_types.len())
        .map(|o| gather_entities(x, g.nodes_of_type(o)))
        .collect()
}

/// Splits `[T x E x F]` (global edge order) into one tensor per relation.
pub fn split_edges(x: &Tensor, g: &HeteroGraph) -> Vec<Tensor> {
    (0..g.schema().edge_types.len())
        .map(|r| gather_entities(x, g.edges_of_type(r)))
        .collect()
}

fn gather_entities(x: &Tensor, ids: &[usize]) -> Tensor {
    let s = x.shape();
    let (t, n, f) = (s[0], s[1], s[2]);
    let mut data = Vec::with_capacity(t * ids.len() * f);
    for step in 0..t {
        for &i in ids {
            let base = (step * n + i) * f;
            data.extend_from_slice(&x.data()[base..base + f]);
        }
    }
    Tensor::new(vec![t, ids.len(), f], data).expect("gather shape")
}

/// Stacks samples `[T x M x F]` along the entity axis, sample-major within
/// each step, giving `[T x B*M x F]`.
pub fn stack_samples(samples: &[&Tensor]) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("stack_samples", "no samples"))?;
    let s = first.shape().to_vec();
    if samples.iter().any(|x| x.shape() != s.as_slice()) {
        return Err(Error::invalid("stack_samples", "samples differ in shape"));
    }
    let (t, m, f) = (s[0], s[1], s[2]);
    let mut data = Vec::with_capacity(samples.len() * t * m * f);
    for step in 0..t {
        for x in samples {
            data.extend_from_slice(&x.data()[step * m * f..(step + 1) * m * f]);
        }
    }
    Tensor::new(vec![t, samples.len() * m, f], data)
}

/// Input to one component: per-type node sequences and per-relation edge
/// sequences, each `[T x B*count x F]` for a batch of `B` samples.
#[derive(Clone, Debug)]
pub struct ComponentInput {
    pub nodes: Vec<Tensor>,
    pub edges: Vec<Tensor>,
    pub batch: usize,
}

/// Temporal convolution, bias, then GLU: `[T x N x c_in]` to
/// `[(T-K+1) x N x c_out]` with a `[K x c_in x 2c_out]` kernel.
pub fn temporal_block<'t>(
    x: &Var<'t>,
    kernel: &Var<'t>,
    bias: Option<&Var<'t>>,
) -> Result<Var<'t>> {
    let y = x.conv1d_time(kernel)?;
    let y = match bias {
        Some(b) => y.add_bias(b)?,
        None => y,
    };
    y.glu()
}

#[derive(Clone, Debug)]
struct TemporalConv {
    kernel: ParamId,
    bias: ParamId,
    k: usize,
}

impl TemporalConv {
    fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let kernel = store.add_uniform(
            format!("{name}.kernel"),
            &[k, cin, 2 * cout],
            k * cin,
            k * 2 * cout,
            rng,
        )?;
        let bias = store.add_zeros(format!("{name}.bias"), &[2 * cout])?;
        Ok(Self { kernel, bias, k })
    }

    fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        temporal_block(x, &p[self.kernel], Some(&p[self.bias]))
    }
}

#[derive(Clone, Debug)]
struct Sandwich {
    tin_node: TemporalConv,
    tin_edge: Vec<TemporalConv>,
    spatial: Vec<CoMGNNLayer>,
    tout_node: TemporalConv,
    tout_edge: Vec<TemporalConv>,
}

#[derive(Clone, Debug)]
struct Component {
    blocks: Vec<Sandwich>,
    collapse_node: TemporalConv,
    collapse_edge: Vec<TemporalConv>,
}

/// Per-type node outputs and per-relation edge outputs of one component.
pub struct ComponentOutput<'t> {
    pub nodes: Vec<Var<'t>>,
    pub edges: Vec<Var<'t>>,
}

#[derive(Clone, Debug)]
pub struct STCoMGNN {
    cfg: STConfig,
    components: Vec<Component>,
    fuse_w: ParamId,
    fuse_b: ParamId,
    edge_states: bool,
    node_features: usize,
    edge_features: usize,
}

impl STCoMGNN {
    /// `graph` must already be ablation-transformed. `node_features` and
    /// `edge_features` are the channel counts of the input signals.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        graph: &HeteroGraph,
        cfg: &STConfig,
        dims: &ModelDims,
        ablation: AblationConfig,
        node_features: usize,
        edge_features: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let schema = graph.schema();
        let nt = schema.node_types.len();
        let nr = schema.edge_types.len();
        let edge_states = ablation.use_edge_states;
        let edge_features = if edge_states { edge_features } else { 0 };
        let ec = if edge_states { cfg.edge_channels } else { 0 };
        if edge_states && (edge_features == 0 || ec == 0) {
            return Err(Error::Config(
                "edge streams need positive edge features and st.edge_channels".into(),
            ));
        }
        let opts = LayerOptions {
            leaky_slope: dims.leaky_slope,
            meta_attention: ablation.use_meta_attention,
            edge_states,
        };
        let c = cfg.channels;
        let mut components = Vec::with_capacity(3);
        for (name, window) in COMPONENTS.iter().zip(cfg.windows()) {
            let base = format!("st.{name}");
            let mut blocks = Vec::with_capacity(cfg.n_blocks);
            let (mut cin, mut ein) = (node_features, edge_features);
            for b in 0..cfg.n_blocks {
                let bp = format!("{base}.block.{b}");
                let edge_convs = |store: &mut ParamStore,
                                  stage: &str,
                                  cin: usize,
                                  rng: &mut R|
                 -> Result<Vec<TemporalConv>> {
                    if !edge_states {
                        return Ok(Vec::new());
                    }
                    schema
                        .edge_types
                        .iter()
                        .map(|et| {
                            TemporalConv::new(
                                store,
                                &format!("{bp}.{stage}.edge.{}", et.name),
                                cfg.kernel,
                                cin,
                                ec,
                                rng,
                            )
                        })
                        .collect()
                };
                let tin_node =
                    TemporalConv::new(store, &format!("{bp}.tin.node"), cfg.kernel, cin, c, rng)?;
                let tin_edge = edge_convs(store, "tin", ein, rng)?;
                let mut spatial = Vec::with_capacity(cfg.k_spatial);
                for l in 1..=cfg.k_spatial {
                    let ld = LayerDims {
                        node_in: vec![c; nt],
                        edge_in: vec![ec; nr],
                        node_out: vec![c; nt],
                        edge_out: vec![ec; nr],
                        meta_in: meta_knowledge_dims(schema),
                        node_msg: dims.node_msg,
                        edge_msg: dims.edge_msg,
                        attn: dims.attn,
                        meta_hidden: dims.meta_hidden,
                    };
                    spatial.push(CoMGNNLayer::new(
                        store,
                        schema,
                        &format!("{bp}."),
                        l,
                        ld,
                        opts,
                        rng,
                    )?);
                }
                let tout_node =
                    TemporalConv::new(store, &format!("{bp}.tout.node"), cfg.kernel, c, c, rng)?;
                let tout_edge = edge_convs(store, "tout", ec, rng)?;
                blocks.push(Sandwich {
                    tin_node,
                    tin_edge,
                    spatial,
                    tout_node,
                    tout_edge,
                });
                cin = c;
                ein = ec;
            }
            let rem = window - cfg.n_blocks * 2 * (cfg.kernel - 1);
            let collapse_node = TemporalConv::new(
                store,
                &format!("{base}.collapse.node"),
                rem,
                c,
                cfg.out_dim,
                rng,
            )?;
            let collapse_edge = if edge_states {
                schema
                    .edge_types
                    .iter()
                    .map(|et| {
                        TemporalConv::new(
                            store,
                            &format!("{base}.collapse.edge.{}", et.name),
                            rem,
                            ec,
                            cfg.out_dim,
                            rng,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            components.push(Component {
                blocks,
                collapse_node,
                collapse_edge,
            });
        }
        let fuse_w = store.add_weight("st.fuse.W", cfg.horizons.len(), 3 * cfg.out_dim, rng)?;
        let fuse_b = store.add_zeros("st.fuse.b", &[cfg.horizons.len()])?;
        Ok(Self {
            cfg: cfg.clone(),
            components,
            fuse_w,
            fuse_b,
            edge_states,
            node_features,
            edge_features,
        })
    }

    pub fn config(&self) -> &STConfig {
        &self.cfg
    }

    pub fn uses_edge_streams(&self) -> bool {
        self.edge_states
    }

    fn check_input(&self, c: usize, input: &ComponentInput, sg: &STGraph) -> Result<()> {
        let g = sg.graph();
        let window = self.cfg.windows()[c];
        if input.nodes.len() != g.schema().node_types.len()
            || input.edges.len() != g.schema().edge_types.len()
        {
            return Err(Error::invalid(
                "component_forward",
                "input lists do not match the schema",
            ));
        }
        for (o, x) in input.nodes.iter().enumerate() {
            let want = [
                window,
                input.batch * g.nodes_of_type(o).len(),
                self.node_features,
            ];
            if x.shape() != want {
                return Err(Error::shape("component_forward nodes", &want, x.shape()));
            }
        }
        for (r, x) in input.edges.iter().enumerate() {
            let ef = if self.edge_states {
                self.edge_features
            } else {
                x.shape().get(2).copied().unwrap_or(0)
            };
            let want = [window, input.batch * g.edges_of_type(r).len(), ef];
            if x.shape() != want {
                return Err(Error::shape("component_forward edges", &want, x.shape()));
            }
        }
        Ok(())
    }

    /// Runs component `c` (0 recent, 1 daily, 2 weekly) to one state per
    /// node and edge.
    pub fn component_forward<'t>(
        &self,
        p: &Bound<'t>,
        sg: &STGraph,
        c: usize,
        input: &ComponentInput,
        tape: &'t Tape,
    ) -> Result<ComponentOutput<'t>> {
        self.check_input(c, input, sg)?;
        let comp = &self.components[c];
        let mut nodes: Vec<Var<'t>> = input
            .nodes
            .iter()
            .map(|x| tape.constant(x.clone()))
            .collect();
        let mut edges: Vec<Var<'t>> = input
            .edges
            .iter()
            .map(|x| tape.constant(x.clone()))
            .collect();
        for block in &comp.blocks {
            (nodes, edges) = self.sandwich(p, sg, block, input.batch, &nodes, &edges)?;
        }
        let flat = |v: Var<'t>| -> Result<Var<'t>> {
            let s = v.shape();
            v.reshape(&[s[1], s[2]])
        };
        let node_out = nodes
            .iter()
            .map(|x| flat(comp.collapse_node.forward(p, x)?))
            .collect::<Result<Vec<_>>>()?;
        let edge_out = if self.edge_states {
            edges
                .iter()
                .zip(&comp.collapse_edge)
                .map(|(x, conv)| flat(conv.forward(p, x)?))
                .collect::<Result<Vec<_>>>()?
        } else {
            edges
                .iter()
                .map(|x| tape.constant(Tensor::zeros(&[x.shape()[1], 0])))
                .collect()
        };
        Ok(ComponentOutput {
            nodes: node_out,
            edges: edge_out,
        })
    }

    fn sandwich<'t>(
        &self,
        p: &Bound<'t>,
        sg: &STGraph,
        block: &Sandwich,
        batch: usize,
        nodes: &[Var<'t>],
        edges: &[Var<'t>],
    ) -> Result<(Vec<Var<'t>>, Vec<Var<'t>>)> {
        let tape = nodes[0].tape();
        let shrink = |x: &Var<'t>| -> Result<Var<'t>> {
            let s = x.shape();
            if s[0] < block.tin_node.k {
                return Err(Error::invalid(
                    "temporal_block",
                    "series shorter than kernel",
                ));
            }
            Ok(tape.constant(Tensor::zeros(&[s[0] + 1 - block.tin_node.k, s[1], 0])))
        };
        let run_edges = |convs: &[TemporalConv], xs: &[Var<'t>]| -> Result<Vec<Var<'t>>> {
            if self.edge_states {
                xs.iter()
                    .zip(convs)
                    .map(|(x, conv)| conv.forward(p, x))
                    .collect()
            } else {
                xs.iter().map(shrink).collect()
            }
        };
        let mut n: Vec<Var<'t>> = nodes
            .iter()
            .map(|x| block.tin_node.forward(p, x))
            .collect::<Result<_>>()?;
        let mut e = run_edges(&block.tin_edge, edges)?;
        if !block.spatial.is_empty() {
            let steps = n[0].shape()[0];
            let lg = sg.layer_graph(steps * batch)?;
            let to_rows = |v: &Var<'t>| -> Result<Var<'t>> {
                let s = v.shape();
                v.reshape(&[s[0] * s[1], s[2]])
            };
            let mut nr: Vec<Var<'t>> = n.iter().map(to_rows).collect::<Result<_>>()?;
            let mut er: Vec<Var<'t>> = e.iter().map(to_rows).collect::<Result<_>>()?;
            for layer in &block.spatial {
                (nr, er) = layer.forward(p, &lg, &nr, &er)?;
            }
            let back = |v: &Var<'t>, like: &Var<'t>| -> Result<Var<'t>> {
                let s = like.shape();
                v.reshape(&[s[0], s[1], v.shape()[1]])
            };
            n = nr
                .iter()
                .zip(&n)
                .map(|(v, l)| back(v, l))
                .collect::<Result<_>>()?;
            e = er
                .iter()
                .zip(&e)
                .map(|(v, l)| back(v, l))
                .collect::<Result<_>>()?;
        }
        let n = n
            .iter()
            .map(|x| block.tout_node.forward(p, x))
            .collect::<Result<_>>()?;
        let e = run_edges(&block.tout_edge, &e)?;
        Ok((n, e))
    }

    /// `[M_o x horizons]` per node type from the three component outputs.
    pub fn fuse_and_predict<'t>(
        &self,
        p: &Bound<'t>,
        outs: &[ComponentOutput<'t>],
    ) -> Result<Vec<Var<'t>>> {
        if outs.len() != 3 {
            return Err(Error::invalid(
                "fuse_and_predict",
                "three component outputs required",
            ));
        }
        (0..outs[0].nodes.len())
            .map(|o| {
                concat(&[outs[0].nodes[o], outs[1].nodes[o], outs[2].nodes[o]], 1)?
                    .linear(&p[self.fuse_w], Some(&p[self.fuse_b]))
            })
            .collect()
    }

    /// Full forward pass over the three periodic inputs.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        sg: &STGraph,
        inputs: &[ComponentInput; 3],
        tape: &'t Tape,
    ) -> Result<Vec<Var<'t>>> {
        let outs = (0..3)
            .map(|c| self.component_forward(p, sg, c, &inputs[c], tape))
            .collect::<Result<Vec<_>>>()?;
        self.fuse_and_predict(p, &outs)
    }
}
