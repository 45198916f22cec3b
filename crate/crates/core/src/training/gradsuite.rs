//! Finite-difference gradient checks of every primitive op and of the task
//! losses of both models on seeded toy graphs.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::comgnn::{AblationConfig, ModelDims};
use crate::error::Result;
use crate::hetgraph::{GraphBuilder, HeteroGraph, Schema};
use crate::params::{Bound, ParamStore};
use crate::stcomgnn::{edge_dynamic_features, STConfig, STGraph, STSeries};
use crate::tensor::{concat, grad_check_many, Tape, Tensor, Var, DEFAULT_FD_STEP};
use crate::training::config::{Task, TrainConfig};
use crate::training::forecast::{ForecastData, ForecastModel, PreparedForecast};
use crate::training::loss::mape_loss;
use crate::training::ranking::{PreparedRanking, RankingInstance, RankingModel, RankingSplit};

/// Threshold the suite is judged against.
pub const GRADCHECK_TOL: f64 = 1e-5;

/// Worst relative error over the tensors of one group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub group: String,
    pub tensors: usize,
    pub max_rel_err: f64,
}

impl GroupError {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOL
    }
}

/// Op groups (`op.<name>`), then the ranking model (`ranking.<prefix>`)
/// and the forecast model (`forecast.<prefix>`), each under its task loss.
pub fn gradient_suite(seed: u64) -> Result<Vec<GroupError>> {
    let mut out = op_checks(seed)?;
    out.extend(ranking_check(seed)?);
    out.extend(forecast_check(seed)?);
    Ok(out)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape")
}

fn idx(v: &[usize]) -> Rc<[usize]> {
    Rc::from(v)
}

type OpLoss = for<'t> fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>;

/// Each entry: name, input shapes, scalar function exercising the op.
fn op_table() -> Vec<(&'static str, Vec<Vec<usize>>, OpLoss)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |_, v| {
            Ok(v[0].matmul(&v[1])?.sum_squares())
        }),
        ("linear", vec![vec![3, 4], vec![2, 4], vec![2]], |_, v| {
            Ok(v[0].linear(&v[1], Some(&v[2]))?.sum_squares())
        }),
        ("add_sub_mul", vec![vec![3, 2], vec![3, 2]], |_, v| {
            Ok(v[0].add(&v[1])?.mul(&v[0].sub(&v[1])?)?.sum())
        }),
        ("add_bias_scale", vec![vec![3, 2], vec![2]], |_, v| {
            Ok(v[0].add_bias(&v[1])?.scale(-1.5).sum_squares())
        }),
        ("slice_gather", vec![vec![4, 3]], |_, v| {
            Ok(v[0]
                .slice_rows(1, 2)?
                .gather_rows(idx(&[1, 0, 1]))?
                .sum_squares())
        }),
        ("segment_sum", vec![vec![5, 2]], |_, v| {
            Ok(v[0].segment_sum(idx(&[2, 0, 2, 1, 0]), 3)?.sum_squares())
        }),
        ("segment_softmax", vec![vec![5, 1], vec![5, 1]], |_, v| {
            Ok(v[0]
                .segment_softmax(idx(&[0, 1, 0, 0, 1]))?
                .mul(&v[1])?
                .sum())
        }),
        (
            "segment_log_softmax",
            vec![vec![5, 1], vec![5, 1]],
            |_, v| {
                Ok(v[0]
                    .segment_log_softmax(idx(&[1, 1, 0, 1, 0]))?
                    .mul(&v[1])?
                    .sum())
            },
        ),
        ("log_softmax", vec![vec![6], vec![6]], |_, v| {
            Ok(v[0].log_softmax().mul(&v[1])?.sum())
        }),
        ("row_dot_mul_rows", vec![vec![3, 4], vec![3, 4]], |_, v| {
            Ok(v[0].mul_rows(&v[0].row_dot(&v[1])?)?.sum_squares())
        }),
        ("pair_dot", vec![vec![3, 2], vec![4, 2]], |_, v| {
            Ok(v[0]
                .pair_dot(idx(&[0, 2, 2, 1]), &v[1], idx(&[3, 0, 1, 1]))?
                .sum_squares())
        }),
        (
            "gather_weighted_sum",
            vec![vec![4, 3], vec![5, 1]],
            |_, v| {
                Ok(v[0]
                    .gather_weighted_sum(idx(&[0, 3, 3, 1, 2]), &v[1], idx(&[1, 0, 1, 1, 2]), 3)?
                    .sum_squares())
            },
        ),
        ("batched_matvec", vec![vec![2, 6], vec![4, 3]], |_, v| {
            Ok(v[0]
                .batched_matvec(&v[1], 2, Some(idx(&[1, 0, 1, 1])))?
                .sum_squares())
        }),
        ("mish_sigmoid", vec![vec![3, 3]], |_, v| {
            Ok(v[0].mish().add(&v[0].scale(2.0).sigmoid())?.sum_squares())
        }),
        ("leaky_relu_abs", vec![vec![3, 3]], |_, v| {
            Ok(v[0].leaky_relu(0.2).sum_squares().add(&v[0].abs().sum())?)
        }),
        ("glu", vec![vec![3, 4]], |_, v| {
            Ok(v[0].glu()?.sum_squares())
        }),
        ("conv1d_time", vec![vec![5, 2, 3], vec![2, 3, 2]], |_, v| {
            Ok(v[0].conv1d_time(&v[1])?.sum_squares())
        }),
        ("reshape_mean", vec![vec![2, 3]], |_, v| {
            Ok(v[0].reshape(&[3, 2])?.mish().mean())
        }),
        (
            "concat",
            vec![vec![2, 3], vec![1, 3], vec![2, 2]],
            |_, v| {
                let rows = concat(&[v[0], v[1]], 0)?;
                let cols = concat(&[v[0], v[2]], 1)?;
                Ok(rows.sum_squares().add(&cols.mish().sum())?)
            },
        ),
    ]
}

fn op_checks(seed: u64) -> Result<Vec<GroupError>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    op_table()
        .into_iter()
        .map(|(name, shapes, f)| {
            let xs: Vec<Tensor> = shapes.iter().map(|s| random(s, &mut rng)).collect();
            let errs = grad_check_many(f, &xs, DEFAULT_FD_STEP)?;
            Ok(GroupError {
                group: format!("op.{name}"),
                tensors: xs.len(),
                max_rel_err: errs.iter().cloned().fold(0.0, f64::max),
            })
        })
        .collect()
}

/// Parameter name up to its first layer index, or its first component.
fn group_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.iter().position(|p| p.parse::<usize>().is_ok()) {
        Some(i) => parts[..=i].join("."),
        None => parts[0].to_string(),
    }
}

fn group_errors(prefix: &str, store: &ParamStore, errs: &[f64]) -> Vec<GroupError> {
    let mut groups: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for ((name, _), e) in store.iter().zip(errs) {
        let g = groups.entry(group_of(name)).or_insert((0, 0.0));
        g.0 += 1;
        g.1 = g.1.max(*e);
    }
    groups
        .into_iter()
        .map(|(g, (tensors, max_rel_err))| GroupError {
            group: format!("{prefix}.{g}"),
            tensors,
            max_rel_err,
        })
        .collect()
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for t in store.values_mut() {
        for x in t.data_mut() {
            *x = rng.gen_range(-0.6..0.6);
        }
    }
}

fn toy_dims() -> ModelDims {
    ModelDims {
        layers: 2,
        node_dim: 3,
        edge_dim: 3,
        node_msg: 2,
        edge_msg: 2,
        attn: 2,
        meta_hidden: 2,
        ..ModelDims::default()
    }
}

/// Six nodes of two types, relations `ab` (with an attribute) and `aa`.
fn toy_graph(rng: &mut ChaCha8Rng) -> Result<HeteroGraph> {
    let mut s = Schema::default();
    let a = s.add_node_type("a", &["f"])?;
    let b = s.add_node_type("b", &["f", "g"])?;
    let ab = s.add_edge_type("ab", a, b, &["w"])?;
    let aa = s.add_edge_type("aa", a, a, &[])?;
    let mut gb = GraphBuilder::new(s);
    for i in 0..6 {
        if i % 2 == 0 {
            gb.add_node(a, vec![rng.gen_range(0.0..1.0)]);
        } else {
            gb.add_node(b, vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]);
        }
    }
    for (u, v) in [(0, 1), (0, 3), (0, 5), (2, 3), (2, 1), (4, 5)] {
        gb.add_edge(u, v, ab, vec![rng.gen_range(0.0..1.0)]);
    }
    for (u, v) in [(0, 2), (2, 4)] {
        gb.add_edge(u, v, aa, vec![]);
    }
    gb.build()
}

fn ranking_check(seed: u64) -> Result<Vec<GroupError>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x52);
    let graph = toy_graph(&mut rng)?;
    let split = RankingSplit {
        graph,
        instances: vec![
            RankingInstance {
                target: 0,
                candidates: vec![1, 3, 5],
                edges: vec![0, 1, 2],
                labels: vec![true, false, false],
            },
            RankingInstance {
                target: 2,
                candidates: vec![3, 1],
                edges: vec![3, 4],
                labels: vec![false, true],
            },
        ],
    };
    let prep = PreparedRanking::new(&split, AblationConfig::FULL)?;
    let (mut store, model) =
        RankingModel::for_data(&prep, &toy_dims(), AblationConfig::FULL, seed)?;
    randomize(&mut store, &mut rng);
    let lambda = TrainConfig::new(Task::Ranking).lambda;
    let errs = grad_check_many(
        |tape, vars| {
            let p = Bound::from_vars(vars.to_vec());
            let s = model.scores(&p, &prep, tape)?;
            let data = prep.targets().loss(&s)?.expect("toy split has positives");
            data.add(&p.sum_squares()?.scale(lambda))
        },
        store.values(),
        DEFAULT_FD_STEP,
    )?;
    Ok(group_errors("ranking", &store, &errs))
}

fn toy_st() -> STConfig {
    STConfig {
        k_spatial: 1,
        kernel: 2,
        n_blocks: 1,
        t_recent: 4,
        t_daily: 3,
        t_weekly: 3,
        step_min: 5,
        day_min: 20,
        week_min: 40,
        horizons: vec![1, 2],
        channels: 2,
        edge_channels: 2,
        out_dim: 2,
    }
}

fn forecast_check(seed: u64) -> Result<Vec<GroupError>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf0);
    let graph = toy_graph(&mut rng)?;
    let st = toy_st();
    let steps = 16;
    let n = graph.num_nodes();
    let values: Vec<f64> = (0..steps * n).map(|_| rng.gen_range(1.0..3.0)).collect();
    let node_signal = Tensor::new(vec![steps, n, 1], values)?;
    let edge_signal = edge_dynamic_features(&node_signal, &graph)?;
    let timestamps = (0..steps as i64).map(|i| i * st.step_min).collect();
    let data = ForecastData {
        graph,
        series: STSeries::new(node_signal, edge_signal, timestamps)?,
        splits: [11..13, 13..14, 14..15],
    };
    let mut cfg = TrainConfig::new(Task::Forecast);
    cfg.seed = seed;
    cfg.st = st;
    cfg.dims = ModelDims {
        layers: 1,
        ..toy_dims()
    };
    let prep = PreparedForecast::new(&data, &cfg.st, cfg.ablation)?;
    let (mut store, model) = ForecastModel::for_data(&prep, &cfg)?;
    randomize(&mut store, &mut rng);
    let sg = STGraph::new(prep.graph().clone());
    let t0s = prep.samples(0).to_vec();
    let inputs = prep.inputs(&t0s)?;
    let (last, y) = prep.targets(&t0s);
    let errs = grad_check_many(
        |tape, vars| {
            let p = Bound::from_vars(vars.to_vec());
            let pred = model.predict(&p, &sg, &prep, &inputs, &last, tape)?;
            mape_loss(&pred, &y, Some(&p), cfg.lambda)
        },
        store.values(),
        DEFAULT_FD_STEP,
    )?;
    Ok(group_errors("forecast", &store, &errs))
}
