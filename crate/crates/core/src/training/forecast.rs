//! Multi-step node forecasting with the spatiotemporal model.
//!
//! The model predicts, per horizon, the change from the last observed value
//! in units of the training standard deviation. Inputs are standardized with
//! training-range statistics; losses and metrics are in signal units.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::comgnn::AblationConfig;
use crate::error::{Error, Result};
use crate::hetgraph::{load_graph, save_graph, HeteroGraph};
use crate::params::{Bound, ParamStore};
use crate::stcomgnn::{
    edge_dynamic_features, load_series, save_series, window_ranges, ComponentInput, STCoMGNN,
    STConfig, STGraph, STSeries,
};
use crate::tensor::{concat, Tape, Tensor, Var};
use crate::training::config::TrainConfig;
use crate::training::log::{MetricLog, Report};
use crate::training::loss::mape_loss;
use crate::training::metrics::{ForecastAccumulator, ForecastMetrics};
use crate::training::optim::Adam;
use crate::training::ranking::{model_graph, TrainOutcome};
use crate::training::{check_finite, check_params, write_outputs, SPLITS};

/// Samples per evaluation forward pass.
pub const EVAL_CHUNK: usize = 32;

/// A graph, its node series and the target-step ranges of each split.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastData {
    pub graph: HeteroGraph,
    pub series: STSeries,
    /// Target indices `t0` per split: windows end at `t0`, horizon `h`
    /// predicts step `t0 + h - 1`.
    pub splits: [Range<usize>; 3],
}

impl ForecastData {
    /// Writes `graph/`, the series files and `splits.csv`. The edge file
    /// is omitted when the edge signal is the one derived from node values.
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_graph(&self.graph, dir.join("graph"))?;
        let derived = edge_dynamic_features(&self.series.node_signal, &self.graph)?;
        if derived == self.series.edge_signal {
            let mut s = self.series.clone();
            s.edge_signal = Tensor::zeros(&[s.len(), 0, 0]);
            save_series(&s, dir)?;
        } else {
            save_series(&self.series, dir)?;
        }
        let mut text = String::from("split,t0_start_min,t0_end_min\n");
        let ts = &self.series.timestamps;
        let step = self.series.step_min();
        let at = |i: usize| ts.first().copied().unwrap_or(0) + i as i64 * step;
        for (name, r) in SPLITS.iter().zip(&self.splits) {
            let _ = writeln!(text, "{name},{},{}", at(r.start), at(r.end));
        }
        let path = dir.join("splits.csv");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let graph = load_graph(dir.join("graph"))?;
        let series = load_series(dir, &graph)?;
        let path = dir.join("splits.csv");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let first = series.timestamps.first().copied().unwrap_or(0);
        let step = series.step_min().max(1);
        let mut splits: [Option<Range<usize>>; 3] = Default::default();
        for (i, line) in text.lines().enumerate().skip(1) {
            let bad = || {
                Error::schema(
                    "splits.csv",
                    format!("line {}: expected split,t0_start_min,t0_end_min", i + 1),
                )
            };
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            let slot = SPLITS.iter().position(|s| *s == parts[0]).ok_or_else(bad)?;
            let idx = |s: &str| -> Result<usize> {
                let t: i64 = s.parse().map_err(|_| bad())?;
                if t < first || (t - first) % step != 0 {
                    return Err(Error::schema(
                        "splits.csv",
                        format!("time {t} is off the series grid"),
                    ));
                }
                Ok(((t - first) / step) as usize)
            };
            splits[slot] = Some(idx(parts[1])?..idx(parts[2])?);
        }
        let [a, b, c] = splits;
        let missing = || Error::schema("splits.csv", "train, valid and test rows are required");
        Ok(Self {
            graph,
            series,
            splits: [
                a.ok_or_else(missing)?,
                b.ok_or_else(missing)?,
                c.ok_or_else(missing)?,
            ],
        })
    }
}

/// Per-channel `(mean, std)` over the first `steps` steps.
fn channel_stats(x: &Tensor, steps: usize) -> Vec<(f64, f64)> {
    let s = x.shape();
    let (n, f) = (s[1], s[2]);
    let data = &x.data()[..steps * n * f];
    (0..f)
        .map(|c| {
            let vals = data.iter().skip(c).step_by(f.max(1));
            let count = (steps * n).max(1) as f64;
            let mean = vals.clone().sum::<f64>() / count;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
            (mean, var.sqrt().max(1e-8))
        })
        .collect()
}

fn standardize(x: &Tensor, stats: &[(f64, f64)]) -> Tensor {
    let f = stats.len().max(1);
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (m, s) = stats[i % f];
            (v - m) / s
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Edge signal over the model graph: original edges keep their values and
/// each reverse edge copies its original.
fn extend_to_model_graph(
    edge_signal: &Tensor,
    base: &HeteroGraph,
    model: &HeteroGraph,
) -> Result<Tensor> {
    let s = edge_signal.shape();
    let (t, e, f) = (s[0], s[1], s[2]);
    if e != base.num_edges() {
        return Err(Error::invalid(
            "forecast",
            "edge signal does not match the graph",
        ));
    }
    let with_rev = base.add_reverse_relations()?;
    let mut source = Vec::with_capacity(with_rev.num_edges());
    for id in 0..with_rev.num_edges() {
        if id < e {
            source.push(id);
            continue;
        }
        let rel = with_rev.edge(id).rel;
        let orig = with_rev.schema().edge_types[rel]
            .reverse_of
            .ok_or_else(|| Error::invalid("forecast", "appended edge is not a reverse"))?;
        source.push(with_rev.edges_of_type(orig)[with_rev.edge_local(id)]);
    }
    if model.num_edges() != source.len() {
        return Err(Error::invalid("forecast", "model graph edge count differs"));
    }
    let mut data = Vec::with_capacity(t * source.len() * f);
    for step in 0..t {
        for &src in &source {
            let b = (step * e + src) * f;
            data.extend_from_slice(&edge_signal.data()[b..b + f]);
        }
    }
    Tensor::new(vec![t, source.len(), f], data)
}

/// A dataset rewritten for one model variant: standardized inputs and the
/// valid targets of each split.
pub struct PreparedForecast {
    graph: HeteroGraph,
    cfg: STConfig,
    nodes: Tensor,
    edges: Tensor,
    target: Tensor,
    target_scale: f64,
    samples: [Vec<usize>; 3],
    edge_states: bool,
}

impl PreparedForecast {
    pub fn new(data: &ForecastData, cfg: &STConfig, ablation: AblationConfig) -> Result<Self> {
        cfg.validate()?;
        data.series.validate()?;
        if data.series.step_min() != cfg.step_min {
            return Err(Error::Config(format!(
                "series step {} min does not match st.step_min {}",
                data.series.step_min(),
                cfg.step_min
            )));
        }
        if data.series.num_nodes() != data.graph.num_nodes() {
            return Err(Error::schema(
                "series_nodes.csv",
                "node count differs from the graph",
            ));
        }
        let graph = model_graph(&data.graph, ablation)?;
        let t = data.series.len();
        let history = cfg.history_steps()?;
        let last = cfg.max_horizon();
        let mut samples: [Vec<usize>; 3] = Default::default();
        for (slot, r) in samples.iter_mut().zip(&data.splits) {
            if r.is_empty() {
                return Err(Error::Config(
                    "every split needs at least one target step".into(),
                ));
            }
            if r.start < history {
                return Err(Error::InsufficientHistory(format!(
                    "split starts at step {} but {history} steps of history are required",
                    r.start
                )));
            }
            if r.end + last - 1 > t {
                return Err(Error::InsufficientHistory(format!(
                    "split ending at step {} needs {last} future steps beyond a series of {t}",
                    r.end
                )));
            }
            *slot = r.clone().collect();
        }
        let train_end = data.splits[0].end;
        let node_stats = channel_stats(&data.series.node_signal, train_end);
        let nodes = standardize(&data.series.node_signal, &node_stats);
        let edge_states = ablation.use_edge_states;
        let edges = if edge_states {
            let raw = if data.series.edge_features() > 0 {
                data.series.edge_signal.clone()
            } else {
                edge_dynamic_features(&data.series.node_signal, &data.graph)?
            };
            let ext = extend_to_model_graph(&raw, &data.graph, &graph)?;
            standardize(&ext, &channel_stats(&ext, train_end))
        } else {
            Tensor::zeros(&[t, graph.num_edges(), 0])
        };
        let f = data.series.node_features();
        let n = data.series.num_nodes();
        let target = Tensor::new(
            vec![t, n],
            data.series
                .node_signal
                .data()
                .iter()
                .step_by(f)
                .copied()
                .collect(),
        )?;
        Ok(Self {
            graph,
            cfg: cfg.clone(),
            nodes,
            edges,
            target,
            target_scale: node_stats[0].1,
            samples,
            edge_states,
        })
    }

    pub fn graph(&self) -> &HeteroGraph {
        &self.graph
    }

    /// Target steps of split `s` (0 train, 1 valid, 2 test).
    pub fn samples(&self, s: usize) -> &[usize] {
        &self.samples[s]
    }

    pub fn node_features(&self) -> usize {
        self.nodes.shape()[2]
    }

    pub fn edge_features(&self) -> usize {
        self.edges.shape()[2]
    }

    fn gather(x: &Tensor, ids: &[usize], ranges: &[Range<usize>]) -> Tensor {
        let s = x.shape();
        let (n, f) = (s[1], s[2]);
        let len = ranges[0].len();
        let mut data = Vec::with_capacity(len * ranges.len() * ids.len() * f);
        for step in 0..len {
            for r in ranges {
                let row = (r.start + step) * n;
                for &i in ids {
                    data.extend_from_slice(&x.data()[(row + i) * f..(row + i + 1) * f]);
                }
            }
        }
        Tensor::new(vec![len, ranges.len() * ids.len(), f], data).expect("batch shape")
    }

    /// Component inputs for a batch of target steps.
    pub fn inputs(&self, t0s: &[usize]) -> Result<[ComponentInput; 3]> {
        let ranges: Vec<[Range<usize>; 3]> = t0s
            .iter()
            .map(|&t0| window_ranges(&self.cfg, t0))
            .collect::<Result<_>>()?;
        let g = &self.graph;
        Ok(std::array::from_fn(|c| {
            let rs: Vec<Range<usize>> = ranges.iter().map(|r| r[c].clone()).collect();
            ComponentInput {
                nodes: (0..g.schema().node_types.len())
                    .map(|o| Self::gather(&self.nodes, g.nodes_of_type(o), &rs))
                    .collect(),
                edges: (0..g.schema().edge_types.len())
                    .map(|r| Self::gather(&self.edges, g.edges_of_type(r), &rs))
                    .collect(),
                batch: t0s.len(),
            }
        }))
    }

    /// Last observed values and targets, `[rows x H]` each, with rows
    /// ordered by node type, then sample, then node.
    pub fn targets(&self, t0s: &[usize]) -> (Tensor, Tensor) {
        let hs = &self.cfg.horizons;
        let n = self.target.shape()[1];
        let (mut last, mut y) = (Vec::new(), Vec::new());
        for o in 0..self.graph.schema().node_types.len() {
            for &t0 in t0s {
                for &v in self.graph.nodes_of_type(o) {
                    let l = self.target.data()[(t0 - 1) * n + v];
                    for &h in hs {
                        last.push(l);
                        y.push(self.target.data()[(t0 + h - 1) * n + v]);
                    }
                }
            }
        }
        let rows = last.len() / hs.len();
        (
            Tensor::new(vec![rows, hs.len()], last).expect("rows"),
            Tensor::new(vec![rows, hs.len()], y).expect("rows"),
        )
    }
}

#[derive(Clone, Debug)]
pub struct ForecastModel {
    pub st: STCoMGNN,
}

impl ForecastModel {
    /// The fusion weights start at zero, so an untrained model predicts
    /// the last observed value.
    pub fn for_data(prep: &PreparedForecast, cfg: &TrainConfig) -> Result<(ParamStore, Self)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let ef = if prep.edge_states {
            prep.edge_features()
        } else {
            0
        };
        let st = STCoMGNN::new(
            &mut store,
            &prep.graph,
            &cfg.st,
            &cfg.dims,
            cfg.ablation,
            prep.node_features(),
            ef,
            &mut rng,
        )?;
        let fw = store.id("st.fuse.W").expect("registered by STCoMGNN");
        store.get_mut(fw).data_mut().fill(0.0);
        Ok((store, Self { st }))
    }

    /// Predictions in signal units, rows as in [`PreparedForecast::targets`].
    pub fn predict<'t>(
        &self,
        p: &Bound<'t>,
        sg: &STGraph,
        prep: &PreparedForecast,
        inputs: &[ComponentInput; 3],
        last: &Tensor,
        tape: &'t Tape,
    ) -> Result<Var<'t>> {
        let per_type = self.st.forward(p, sg, inputs, tape)?;
        let out = if per_type.len() == 1 {
            per_type[0]
        } else {
            concat(&per_type, 0)?
        };
        out.scale(prep.target_scale)
            .add(&tape.constant(last.clone()))
    }

    /// Per-horizon metrics on split `s`.
    pub fn evaluate(
        &self,
        store: &ParamStore,
        prep: &PreparedForecast,
        s: usize,
    ) -> Result<Vec<ForecastMetrics>> {
        self.evaluate_at(store, prep, prep.samples(s))
    }

    /// Per-horizon metrics over the given target steps.
    pub fn evaluate_at(
        &self,
        store: &ParamStore,
        prep: &PreparedForecast,
        t0s: &[usize],
    ) -> Result<Vec<ForecastMetrics>> {
        let chunks: Vec<&[usize]> = t0s.chunks(EVAL_CHUNK).collect();
        let run = |sg: &STGraph, t0s: &[usize]| -> Result<(Tensor, Tensor)> {
            let tape = Tape::new();
            let p = store.bind_frozen(&tape);
            let inputs = prep.inputs(t0s)?;
            let (last, y) = prep.targets(t0s);
            let pred = self.predict(&p, sg, prep, &inputs, &last, &tape)?;
            Ok(((*pred.value()).clone(), y))
        };
        let threads = crate::parallelism();
        let results: Vec<Result<(Tensor, Tensor)>> = if threads == 0 {
            let sg = STGraph::new(prep.graph.clone());
            chunks.iter().map(|c| run(&sg, c)).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            let graph = &prep.graph;
            let job = || {
                chunks
                    .par_iter()
                    .map_init(|| STGraph::new(graph.clone()), |sg, c| run(sg, c))
                    .collect::<Vec<_>>()
            };
            pool.install(job)
        };
        let h = prep.cfg.horizons.len();
        let mut acc = vec![ForecastAccumulator::default(); h];
        for r in results {
            let (pred, y) = r?;
            accumulate(&mut acc, &pred, &y);
        }
        Ok(acc.iter().map(ForecastAccumulator::finish).collect())
    }
}

fn accumulate(acc: &mut [ForecastAccumulator], pred: &Tensor, y: &Tensor) {
    let h = acc.len();
    for (j, a) in acc.iter_mut().enumerate() {
        let p: Vec<f64> = pred.data().iter().skip(j).step_by(h).copied().collect();
        let t: Vec<f64> = y.data().iter().skip(j).step_by(h).copied().collect();
        a.extend(&p, &t);
    }
}

/// Per-horizon metrics of predicting the last observed value.
pub fn persistence_metrics(prep: &PreparedForecast, s: usize) -> Vec<ForecastMetrics> {
    let mut acc = vec![ForecastAccumulator::default(); prep.cfg.horizons.len()];
    for t0s in prep.samples(s).chunks(EVAL_CHUNK) {
        let (last, y) = prep.targets(t0s);
        accumulate(&mut acc, &last, &y);
    }
    acc.iter().map(ForecastAccumulator::finish).collect()
}

/// `k` evenly spaced entries of `xs` (all of them when `k` is 0 or too big).
fn evenly_spaced(xs: &[usize], k: usize) -> Vec<usize> {
    if k == 0 || k >= xs.len() {
        return xs.to_vec();
    }
    (0..k).map(|i| xs[i * xs.len() / k]).collect()
}

fn mean_mape(m: &[ForecastMetrics]) -> f64 {
    m.iter().map(|x| x.mape).sum::<f64>() / m.len().max(1) as f64
}

fn report_metrics(r: &mut Report, prefix: &str, horizons: &[usize], m: &[ForecastMetrics]) {
    for (h, x) in horizons.iter().zip(m) {
        r.push_f64(format!("{prefix}.mape.h{h}"), x.mape);
        r.push_f64(format!("{prefix}.mae.h{h}"), x.mae);
        r.push_f64(format!("{prefix}.rmse.h{h}"), x.rmse);
    }
}

/// Minibatch training with best-validation-MAPE selection. Each epoch
/// shuffles the training steps with a generator seeded by the config seed
/// and visits the first `samples_per_epoch` of them in batches of
/// `batch_size` (0 means one batch).
pub fn train_forecast(
    data: &ForecastData,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let prep = PreparedForecast::new(data, &cfg.st, cfg.ablation)?;
    let (mut store, model) = ForecastModel::for_data(&prep, cfg)?;
    let sg = STGraph::new(prep.graph.clone());
    let mut adam = Adam::new(&store, cfg.learning_rate);
    let mut log = MetricLog::default();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut order: Vec<usize> = prep.samples(0).to_vec();
    let per_epoch = if cfg.samples_per_epoch == 0 {
        order.len()
    } else {
        cfg.samples_per_epoch.min(order.len())
    };
    let batch = if cfg.batch_size == 0 {
        per_epoch
    } else {
        cfg.batch_size
    };
    let selection = evenly_spaced(prep.samples(1), cfg.eval_samples);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_ba7c);
    let mut last_loss = f64::NAN;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let prev = store.clone();
        let evaluate = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        let result = (|| -> Result<(f64, Option<f64>)> {
            let (mut sum, mut count) = (0.0, 0usize);
            for t0s in order[..per_epoch].chunks(batch) {
                let tape = Tape::new();
                let p = store.bind(&tape);
                let inputs = prep.inputs(t0s)?;
                let (last, y) = prep.targets(t0s);
                let pred = model.predict(&p, &sg, &prep, &inputs, &last, &tape)?;
                let loss = mape_loss(&pred, &y, Some(&p), cfg.lambda)?;
                let value = check_finite(loss.item(), "training loss")?;
                let grads = tape.backward(loss)?;
                adam.step(&mut store, &p.gradients(&grads))?;
                check_params(&store)?;
                sum += value * t0s.len() as f64;
                count += t0s.len();
            }
            let v = if evaluate {
                let m = model.evaluate_at(&store, &prep, &selection)?;
                Some(check_finite(mean_mape(&m), "validation MAPE")?)
            } else {
                None
            };
            Ok((sum / count.max(1) as f64, v))
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
            log.push(epoch, "valid", "mape", v);
            if best.as_ref().is_none_or(|b| v < b.1) {
                best = Some((epoch, v, store.clone()));
            }
        }
    }
    let (best_epoch, best_valid, best_store) = best.unwrap_or((0, f64::NAN, store.clone()));

    let mut report = Report::default();
    report.push("task", "forecast");
    report.push("ablation", cfg.ablation.label());
    report.push("seed", cfg.seed);
    report.push("epochs", cfg.epochs);
    report.push("best_epoch", best_epoch);
    report.push_f64("final_train_loss", last_loss);
    metrics_report(&mut report, &model, &best_store, &prep)?;
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
    model: &ForecastModel,
    store: &ParamStore,
    prep: &PreparedForecast,
) -> Result<()> {
    let hs = &prep.cfg.horizons;
    for (s, name) in [(1, "valid"), (2, "test")] {
        report_metrics(r, name, hs, &model.evaluate(store, prep, s)?);
        report_metrics(
            r,
            &format!("{name}.persistence"),
            hs,
            &persistence_metrics(prep, s),
        );
    }
    Ok(())
}

/// Rebuilds the model `cfg` describes around the parameters of `store`.
pub fn load_forecast_model(
    data: &ForecastData,
    cfg: &TrainConfig,
    store: &ParamStore,
) -> Result<(PreparedForecast, ParamStore, ForecastModel)> {
    let prep = PreparedForecast::new(data, &cfg.st, cfg.ablation)?;
    let (mut own, model) = ForecastModel::for_data(&prep, cfg)?;
    own.assign_from(store)?;
    Ok((prep, own, model))
}

/// Valid and test metrics of trained parameters, with the persistence
/// baseline alongside.
pub fn evaluate_forecast(
    data: &ForecastData,
    cfg: &TrainConfig,
    store: &ParamStore,
) -> Result<Report> {
    let (prep, store, model) = load_forecast_model(data, cfg, store)?;
    let mut report = Report::default();
    report.push("task", "forecast");
    report.push("ablation", cfg.ablation.label());
    metrics_report(&mut report, &model, &store, &prep)?;
    Ok(report)
}

/// One forecast row per target step, node and horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastRow {
    pub step: usize,
    pub node: usize,
    pub horizon: usize,
    pub prediction: f64,
    pub target: f64,
}

/// Predictions on split `s` (0 train, 1 valid, 2 test).
pub fn predict_forecast(
    data: &ForecastData,
    cfg: &TrainConfig,
    store: &ParamStore,
    s: usize,
) -> Result<Vec<ForecastRow>> {
    let (prep, store, model) = load_forecast_model(data, cfg, store)?;
    let sg = STGraph::new(prep.graph.clone());
    let hs = &prep.cfg.horizons;
    let mut rows = Vec::new();
    for t0s in prep.samples(s).chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let inputs = prep.inputs(t0s)?;
        let (last, y) = prep.targets(t0s);
        let pred = model.predict(&p, &sg, &prep, &inputs, &last, &tape)?;
        let pv = pred.value();
        let g = &prep.graph;
        let keys = (0..g.schema().node_types.len()).flat_map(|o| {
            t0s.iter()
                .flat_map(move |&t0| g.nodes_of_type(o).iter().map(move |&v| (t0, v)))
        });
        for ((step, node), (pr, tr)) in
            keys.zip(pv.data().chunks(hs.len()).zip(y.data().chunks(hs.len())))
        {
            for (j, &h) in hs.iter().enumerate() {
                rows.push(ForecastRow {
                    step,
                    node,
                    horizon: h,
                    prediction: pr[j],
                    target: tr[j],
                });
            }
        }
    }
    Ok(rows)
}
