//! Candidate ranking: score each `consider` edge of a target, train with
//! listwise softmax cross entropy, report Recall@k and MAP.

use std::fs;
use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comgnn::{AblationConfig, CoMGNN, EdgeReadout, LayerGraph, ModelDims};
use crate::error::{Error, Result};
use crate::hetgraph::{load_graph, save_graph, EdgeId, HeteroGraph, NodeId, Schema};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Tape, Var};
use crate::training::config::TrainConfig;
use crate::training::log::{MetricLog, Report};
use crate::training::loss::ListwiseTargets;
use crate::training::metrics::{
    map_metric, mean_recall_at_k, random_average_precision, ScoredInstance,
};
use crate::training::optim::Adam;
use crate::training::{check_finite, check_params, write_outputs, SPLITS};

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

/// One target and its candidates. Candidate `i` is reached from the
/// target by edge `edges[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingInstance {
    pub target: NodeId,
    pub candidates: Vec<NodeId>,
    pub edges: Vec<EdgeId>,
    pub labels: Vec<bool>,
}

impl RankingInstance {
    pub fn validate(&self, g: &HeteroGraph) -> Result<()> {
        let n = self.candidates.len();
        if n == 0 || self.edges.len() != n || self.labels.len() != n {
            return Err(Error::schema(
                "instances.csv",
                "instance needs matching candidates, edges and labels",
            ));
        }
        for (&c, &e) in self.candidates.iter().zip(&self.edges) {
            if e >= g.num_edges() {
                return Err(Error::schema(
                    "instances.csv",
                    format!("edge {e} out of range"),
                ));
            }
            let ed = g.edge(e);
            if ed.src != self.target || ed.dst != c {
                return Err(Error::schema(
                    "instances.csv",
                    format!(
                        "edge {e} does not join target {} to candidate {c}",
                        self.target
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingSplit {
    pub graph: HeteroGraph,
    pub instances: Vec<RankingInstance>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRow {
    instance: usize,
    target: usize,
    candidate: usize,
    edge: usize,
    label: u8,
}

impl RankingSplit {
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_graph(&self.graph, dir)?;
        let path = dir.join("instances.csv");
        let csv_err = |source| Error::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        for (i, inst) in self.instances.iter().enumerate() {
            for ((&c, &e), &l) in inst.candidates.iter().zip(&inst.edges).zip(&inst.labels) {
                w.serialize(InstanceRow {
                    instance: i,
                    target: inst.target,
                    candidate: c,
                    edge: e,
                    label: l as u8,
                })
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let graph = load_graph(dir)?;
        let path = dir.join("instances.csv");
        let csv_err = |source| Error::Csv {
            path: path.clone(),
            source,
        };
        let mut r = csv::Reader::from_path(&path).map_err(csv_err)?;
        let mut instances: Vec<RankingInstance> = Vec::new();
        for row in r.deserialize() {
            let row: InstanceRow = row.map_err(csv_err)?;
            if row.label > 1 {
                return Err(Error::schema(
                    "instances.csv",
                    format!("label {} is not 0 or 1", row.label),
                ));
            }
            if row.instance == instances.len() {
                instances.push(RankingInstance {
                    target: row.target,
                    candidates: Vec::new(),
                    edges: Vec::new(),
                    labels: Vec::new(),
                });
            } else if row.instance + 1 != instances.len()
                || instances[row.instance].target != row.target
            {
                return Err(Error::schema(
                    "instances.csv",
                    "rows must be grouped by consecutive instance",
                ));
            }
            let inst = instances.last_mut().expect("pushed above");
            inst.candidates.push(row.candidate);
            inst.edges.push(row.edge);
            inst.labels.push(row.label == 1);
        }
        for inst in &instances {
            inst.validate(&graph)?;
        }
        Ok(Self { graph, instances })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingData {
    pub train: RankingSplit,
    pub valid: RankingSplit,
    pub test: RankingSplit,
}

impl RankingData {
    pub fn splits(&self) -> [&RankingSplit; 3] {
        [&self.train, &self.valid, &self.test]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (name, split) in SPLITS.iter().zip(self.splits()) {
            let d = dir.join(name);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            split.save(&d)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let [train, valid, test] = SPLITS.map(|s| RankingSplit::load(&dir.join(s)));
        let data = Self {
            train: train?,
            valid: valid?,
            test: test?,
        };
        let schema = data.train.graph.schema();
        if data.valid.graph.schema() != schema || data.test.graph.schema() != schema {
            return Err(Error::schema(
                "ranking bundle",
                "splits disagree on the schema",
            ));
        }
        Ok(data)
    }
}

/// Graph encoder plus an edge readout over `[h_target | h_edge | h_candidate]`.
#[derive(Clone, Debug)]
pub struct RankingModel {
    pub gnn: CoMGNN,
    pub readout: EdgeReadout,
}

/// A split rewritten for one model variant, with the row indices the
/// readout gathers.
pub struct PreparedRanking {
    graph: HeteroGraph,
    lg: LayerGraph,
    rel: usize,
    src_rows: Rc<[usize]>,
    edge_rows: Rc<[usize]>,
    dst_rows: Rc<[usize]>,
    targets: ListwiseTargets,
    instances: Vec<RankingInstance>,
}

/// Applies reverse relations and the ablation rewrite. Ids are preserved.
pub fn model_graph(g: &HeteroGraph, ablation: AblationConfig) -> Result<HeteroGraph> {
    ablation.apply(&g.add_reverse_relations()?)
}

impl PreparedRanking {
    pub fn new(split: &RankingSplit, ablation: AblationConfig) -> Result<Self> {
        let graph = model_graph(&split.graph, ablation)?;
        let first = split
            .instances
            .first()
            .and_then(|i| i.edges.first())
            .ok_or_else(|| Error::schema("instances.csv", "split has no candidates"))?;
        let rel = graph.edge(*first).rel;
        let (mut src, mut edge, mut dst) = (Vec::new(), Vec::new(), Vec::new());
        for inst in &split.instances {
            inst.validate(&graph)?;
            for &e in &inst.edges {
                let ed = graph.edge(e);
                if ed.rel != rel {
                    return Err(Error::schema(
                        "instances.csv",
                        "all candidate edges must share one relation",
                    ));
                }
                src.push(graph.node_local(ed.src));
                edge.push(graph.edge_local(e));
                dst.push(graph.node_local(ed.dst));
            }
        }
        let labels: Vec<Vec<bool>> = split.instances.iter().map(|i| i.labels.clone()).collect();
        Ok(Self {
            lg: LayerGraph::new(&graph)?,
            graph,
            rel,
            src_rows: src.into(),
            edge_rows: edge.into(),
            dst_rows: dst.into(),
            targets: ListwiseTargets::new(&labels),
            instances: split.instances.clone(),
        })
    }

    pub fn graph(&self) -> &HeteroGraph {
        &self.graph
    }

    pub fn targets(&self) -> &ListwiseTargets {
        &self.targets
    }

    pub fn instances(&self) -> &[RankingInstance] {
        &self.instances
    }
}

impl RankingModel {
    /// `schema` is the model-graph schema (after [`model_graph`]).
    pub fn new(
        store: &mut ParamStore,
        schema: &Schema,
        rel: usize,
        dims: &ModelDims,
        ablation: AblationConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let gnn = CoMGNN::new(store, schema, "", dims, ablation, rng)?;
        let et = &schema.edge_types[rel];
        let width = gnn.node_out_dims()[et.src_type]
            + gnn.edge_out_dims()[rel]
            + gnn.node_out_dims()[et.dst_type];
        let readout = EdgeReadout::new(store, "readout", width, rng)?;
        Ok(Self { gnn, readout })
    }

    /// Builds the model for `prep` with parameters drawn from `seed`.
    pub fn for_data(
        prep: &PreparedRanking,
        dims: &ModelDims,
        ablation: AblationConfig,
        seed: u64,
    ) -> Result<(ParamStore, Self)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Self::new(
            &mut store,
            prep.graph.schema(),
            prep.rel,
            dims,
            ablation,
            &mut rng,
        )?;
        Ok((store, m))
    }

    /// One score per candidate, stacked in instance order: `[n x 1]`.
    pub fn scores<'t>(
        &self,
        p: &Bound<'t>,
        prep: &PreparedRanking,
        tape: &'t Tape,
    ) -> Result<Var<'t>> {
        let (n0, e0) = self.gnn.input_states(tape, &prep.graph);
        let (n, e) = self.gnn.forward(p, &prep.lg, &n0, &e0)?;
        let et = &prep.graph.schema().edge_types[prep.rel];
        let hs = n[et.src_type].gather_rows(prep.src_rows.clone())?;
        let he = e[prep.rel].gather_rows(prep.edge_rows.clone())?;
        let hd = n[et.dst_type].gather_rows(prep.dst_rows.clone())?;
        self.readout.score(p, &hs, &he, &hd)
    }

    pub fn evaluate(&self, store: &ParamStore, prep: &PreparedRanking) -> Result<RankingEval> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let s = self.scores(&p, prep, &tape)?;
        let loss = prep.targets.loss(&s)?.map(|l| l.item());
        let values = s.value();
        let mut off = 0;
        let instances = prep
            .instances
            .iter()
            .map(|inst| {
                let n = inst.candidates.len();
                let scored = ScoredInstance {
                    ids: inst.candidates.clone(),
                    scores: values.data()[off..off + n].to_vec(),
                    labels: inst.labels.clone(),
                };
                off += n;
                scored
            })
            .collect();
        Ok(RankingEval { instances, loss })
    }
}

#[derive(Clone, Debug)]
pub struct RankingEval {
    pub instances: Vec<ScoredInstance>,
    pub loss: Option<f64>,
}

impl RankingEval {
    pub fn map(&self) -> f64 {
        map_metric(&self.instances).unwrap_or(0.0)
    }

    pub fn recall(&self, k: usize) -> f64 {
        mean_recall_at_k(&self.instances, k).unwrap_or(0.0)
    }

    /// MAP a uniformly random scorer achieves in expectation.
    pub fn chance_map(&self) -> f64 {
        let aps: Vec<f64> = self
            .instances
            .iter()
            .filter_map(|i| {
                let m = i.labels.iter().filter(|&&l| l).count();
                (m > 0).then(|| random_average_precision(i.ids.len(), m))
            })
            .collect();
        aps.iter().sum::<f64>() / aps.len().max(1) as f64
    }

    fn report(&self, r: &mut Report, split: &str) {
        for k in RECALL_KS {
            r.push_f64(format!("{split}.recall@{k}"), self.recall(k));
        }
        r.push_f64(format!("{split}.map"), self.map());
    }
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub store: ParamStore,
    pub log: MetricLog,
    pub report: Report,
    pub best_epoch: usize,
    pub best_valid: f64,
    pub final_train_loss: f64,
}

/// Full-batch training on the train split with best-validation-MAP
/// selection. With `out`, the metric log and checkpoints are written there,
/// including after a divergence.
pub fn train_ranking(
    data: &RankingData,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = PreparedRanking::new(&data.train, cfg.ablation)?;
    let valid = PreparedRanking::new(&data.valid, cfg.ablation)?;
    let (mut store, model) = RankingModel::for_data(&train, &cfg.dims, cfg.ablation, cfg.seed)?;
    let mut adam = Adam::new(&store, cfg.learning_rate);
    let mut log = MetricLog::default();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut last_loss = f64::NAN;

    for epoch in 1..=cfg.epochs {
        let prev = store.clone();
        let evaluate = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        let result = (|| -> Result<(f64, Option<f64>)> {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let s = model.scores(&p, &train, &tape)?;
            let data_loss = train
                .targets
                .loss(&s)?
                .ok_or_else(|| Error::Config("training split has no positive labels".into()))?;
            let loss = data_loss.add(&p.sum_squares()?.scale(cfg.lambda))?;
            let value = check_finite(loss.item(), "training loss")?;
            let grads = tape.backward(loss)?;
            adam.step(&mut store, &p.gradients(&grads))?;
            check_params(&store)?;
            let v = if evaluate {
                Some(check_finite(
                    model.evaluate(&store, &valid)?.map(),
                    "validation MAP",
                )?)
            } else {
                None
            };
            Ok((value, v))
        })();
        let (loss, v) = match result {
            Ok(r) => r,
            Err(Error::NonFinite { context }) => {
                write_outputs(out, &log, best.as_ref().map(|b| &b.2), Some(&prev))?;
                return Err(Error::Divergence {
                    epoch,
                    msg: context,
                });
            }
            Err(e) => return Err(e),
        };
        last_loss = loss;
        if let Some(v) = v {
            log.push(epoch, "train", "loss", last_loss);
            log.push(epoch, "valid", "map", v);
            if best.as_ref().is_none_or(|b| v > b.1) {
                best = Some((epoch, v, store.clone()));
            }
        }
    }
    let (best_epoch, best_valid, best_store) = best.unwrap_or((0, f64::NAN, store.clone()));

    let mut report = Report::default();
    report.push("task", "ranking");
    report.push("ablation", cfg.ablation.label());
    report.push("seed", cfg.seed);
    report.push("epochs", cfg.epochs);
    report.push("best_epoch", best_epoch);
    report.push_f64("final_train_loss", last_loss);
    metrics_report(&mut report, &model, &best_store, data, cfg)?;
    write_outputs(out, &log, Some(&best_store), None)?;
    Ok(TrainOutcome {
        store: best_store,
        log,
        report,
        best_epoch,
        best_valid,
        final_train_loss: last_loss,
    })
}

fn metrics_report(
    r: &mut Report,
    model: &RankingModel,
    store: &ParamStore,
    data: &RankingData,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, split) in [("valid", &data.valid), ("test", &data.test)] {
        let prep = PreparedRanking::new(split, cfg.ablation)?;
        let ev = model.evaluate(store, &prep)?;
        ev.report(r, name);
        r.push_f64(format!("{name}.chance_map"), ev.chance_map());
    }
    Ok(())
}

/// Rebuilds the model `cfg` describes around the parameters of `store`.
pub fn load_ranking_model(
    data: &RankingData,
    cfg: &TrainConfig,
    store: &ParamStore,
) -> Result<(ParamStore, RankingModel)> {
    let prep = PreparedRanking::new(&data.train, cfg.ablation)?;
    let (mut own, model) = RankingModel::for_data(&prep, &cfg.dims, cfg.ablation, cfg.seed)?;
    own.assign_from(store)?;
    Ok((own, model))
}

/// Valid and test metrics of trained parameters.
pub fn evaluate_ranking(
    data: &RankingData,
    cfg: &TrainConfig,
    store: &ParamStore,
) -> Result<Report> {
    let (store, model) = load_ranking_model(data, cfg, store)?;
    let mut report = Report::default();
    report.push("task", "ranking");
    report.push("ablation", cfg.ablation.label());
    metrics_report(&mut report, &model, &store, data, cfg)?;
    Ok(report)
}

/// Candidate scores on split `s` (0 train, 1 valid, 2 test).
pub fn predict_ranking(
    data: &RankingData,
    cfg: &TrainConfig,
    store: &ParamStore,
    s: usize,
) -> Result<RankingEval> {
    let (store, model) = load_ranking_model(data, cfg, store)?;
    let prep = PreparedRanking::new(data.splits()[s], cfg.ablation)?;
    model.evaluate(&store, &prep)
}
