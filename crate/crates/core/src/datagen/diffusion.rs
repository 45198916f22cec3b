use std::collections::HashSet;
use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{GraphBuilder, HeteroGraph, Schema};
use crate::stcomgnn::{edge_dynamic_features, STSeries};
use crate::tensor::Tensor;
use crate::training::ForecastData;

pub const RELATIONS: [&str; 3] = ["link_to", "close_to", "likely_go_to"];

/// Monday 1970-01-05 00:00 in epoch minutes.
pub const SERIES_START_MIN: i64 = 4 * 1440;

/// Desk-scale analogue of the road-network speed forecasting task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthDiffusionSpec {
    pub n_nodes: usize,
    /// Directed edges per node, over all relations.
    pub edges_per_node: f64,
    /// Share of edges in each of [`RELATIONS`]; sums to one.
    pub relation_mix: [f64; 3],
    /// Weight of each relation in the neighbor mean; sums to one.
    pub relation_weights: [f64; 3],
    /// Steps spanned by the train, valid and test targets.
    pub steps: usize,
    /// Steps emitted before the first target.
    pub history: usize,
    /// Steps emitted after the last target.
    pub max_horizon: usize,
    pub step_min: i64,
    /// Neighbor coupling of the deviation process.
    pub rho: f64,
    /// Persistence of the deviation process.
    pub phi: f64,
    /// Innovation standard deviation relative to each node's daily amplitude.
    pub noise: f64,
    /// Share of the free-flow level lost at the daily peak.
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for SynthDiffusionSpec {
    fn default() -> Self {
        Self {
            n_nodes: 60,
            edges_per_node: 2.5,
            relation_mix: [0.6, 0.25, 0.15],
            relation_weights: [0.6, 0.3, 0.1],
            steps: 2016,
            history: 2016 + 12,
            max_horizon: 6,
            step_min: 5,
            rho: 0.5,
            phi: 0.8,
            noise: 0.02,
            amplitude: 0.3,
            seed: 0,
        }
    }
}

impl SynthDiffusionSpec {
    pub fn validate(&self) -> Result<()> {
        let sums_to_one = |v: &[f64; 3]| {
            v.iter().all(|x| *x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9
        };
        if !sums_to_one(&self.relation_mix) || !sums_to_one(&self.relation_weights) {
            return Err(Error::Config(
                "relation_mix and relation_weights must be non-negative and sum to 1".into(),
            ));
        }
        if self.n_nodes < 2 || self.steps < 10 || self.step_min <= 0 || self.max_horizon == 0 {
            return Err(Error::Config(
                "diffusion spec needs n_nodes >= 2, steps >= 10, positive step and horizon".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.rho) || !(0.0..1.0).contains(&self.phi) {
            return Err(Error::Config(
                "rho must lie in [0, 1] and phi in [0, 1)".into(),
            ));
        }
        if self.noise < 0.0 || !(0.0..1.0).contains(&self.amplitude) {
            return Err(Error::Config(
                "noise must be >= 0 and amplitude in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Steps simulated and discarded before the emitted series.
    pub fn burn_in(&self) -> usize {
        self.steps / 10
    }

    pub fn emitted_steps(&self) -> usize {
        self.history + self.steps + self.max_horizon - 1
    }
}

pub fn diffusion_schema() -> Result<Schema> {
    let mut s = Schema::default();
    let road = s.add_node_type("road", &["free_flow", "lanes", "length"])?;
    s.add_edge_type("link_to", road, road, &["length"])?;
    s.add_edge_type("close_to", road, road, &["distance"])?;
    s.add_edge_type("likely_go_to", road, road, &["probability"])?;
    Ok(s)
}

/// Daily congestion profile in `[0, 1]`, peaking at noon.
pub fn daily_profile(t_min: i64) -> f64 {
    let phase = (t_min.rem_euclid(1440)) as f64 / 1440.0;
    0.5 * (1.0 - (2.0 * PI * phase).cos())
}

/// The generative rule: node values are a per-node daily baseline plus a
/// deviation that decays toward a relation-weighted mean of upstream
/// deviations.
#[derive(Clone, Debug)]
pub struct DiffusionDynamics {
    free_flow: Vec<f64>,
    amplitude: Vec<f64>,
    /// Per node: `(upstream node, weight)` with weights summing to one.
    mixing: Vec<Vec<(usize, f64)>>,
    rho: f64,
    phi: f64,
}

impl DiffusionDynamics {
    pub fn new(spec: &SynthDiffusionSpec, g: &HeteroGraph) -> Self {
        let n = g.num_nodes();
        let free_flow: Vec<f64> = (0..n).map(|v| g.node_attr(v)[0]).collect();
        let amplitude = free_flow.iter().map(|f| spec.amplitude * f).collect();
        let mut mixing = vec![Vec::new(); n];
        for (v, mix) in mixing.iter_mut().enumerate() {
            let mut present = Vec::new();
            for r in 0..RELATIONS.len() {
                let ups: Vec<usize> = g
                    .incident_edge_ids(v)
                    .iter()
                    .map(|&e| g.edge(e))
                    .filter(|e| e.rel == r && e.dst == v && e.src != v)
                    .map(|e| e.src)
                    .collect();
                if !ups.is_empty() {
                    present.push((spec.relation_weights[r], ups));
                }
            }
            let total: f64 = present.iter().map(|(w, _)| w).sum();
            for (w, ups) in present {
                if total > 0.0 {
                    let each = w / total / ups.len() as f64;
                    mix.extend(ups.into_iter().map(|u| (u, each)));
                }
            }
        }
        Self {
            free_flow,
            amplitude,
            mixing,
            rho: spec.rho,
            phi: spec.phi,
        }
    }

    pub fn baseline(&self, v: usize, t_min: i64) -> f64 {
        self.free_flow[v] - self.amplitude[v] * daily_profile(t_min)
    }

    /// Expected deviation at the next step given the current deviations.
    pub fn next_deviation(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(v, &zv)| {
                let nbr = if self.mixing[v].is_empty() {
                    zv
                } else {
                    self.mixing[v].iter().map(|&(u, w)| w * z[u]).sum()
                };
                self.phi * ((1.0 - self.rho) * zv + self.rho * nbr)
            })
            .collect()
    }

    /// Noise-free one-step prediction of node values at `t_min + step`
    /// from values `x` at `t_min`.
    pub fn predict(&self, x: &[f64], t_min: i64, step_min: i64) -> Vec<f64> {
        let z: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(v, xv)| xv - self.baseline(v, t_min))
            .collect();
        self.next_deviation(&z)
            .iter()
            .enumerate()
            .map(|(v, zv)| (self.baseline(v, t_min + step_min) + zv).max(1.0))
            .collect()
    }

    pub fn amplitude(&self, v: usize) -> f64 {
        self.amplitude[v]
    }
}

fn build_graph(spec: &SynthDiffusionSpec, rng: &mut ChaCha8Rng) -> Result<HeteroGraph> {
    let schema = diffusion_schema()?;
    let n = spec.n_nodes;
    let mut gb = GraphBuilder::new(schema);
    for _ in 0..n {
        let free = rng.gen_range(40.0..70.0);
        let lanes = rng.gen_range(1..=4) as f64;
        let length = rng.gen_range(0.2..2.0);
        gb.add_node(0, vec![free, lanes, length]);
    }
    let total = (spec.edges_per_node * n as f64).round() as usize;
    let mut seen: HashSet<(usize, usize, usize)> = HashSet::new();
    for r in 0..RELATIONS.len() {
        let want = (spec.relation_mix[r] * total as f64).round() as usize;
        let mut added = 0;
        // The road itself: a ring of consecutive segments.
        if r == 0 {
            for v in 0..n.min(want) {
                let u = (v + 1) % n;
                seen.insert((r, v, u));
                gb.add_edge(v, u, r, vec![rng.gen_range(0.2..2.0)]);
                added += 1;
            }
        }
        let mut attempts = 0;
        while added < want && attempts < 100 * want.max(1) {
            attempts += 1;
            let v = rng.gen_range(0..n);
            let u = match r {
                1 => (v + rng.gen_range(1..=5.min(n - 1))) % n,
                _ => rng.gen_range(0..n),
            };
            if u == v || !seen.insert((r, v, u)) {
                continue;
            }
            let attr = match r {
                0 => rng.gen_range(0.2..2.0),
                1 => rng.gen_range(0.1..1.0),
                _ => rng.gen_range(0.0..1.0),
            };
            gb.add_edge(v, u, r, vec![attr]);
            added += 1;
        }
    }
    gb.build()
}

/// Simulates the planted dynamics. The first [`SynthDiffusionSpec::burn_in`]
/// steps are discarded; target steps are split 60/20/20 in time.
pub fn gen_diffusion_task(spec: &SynthDiffusionSpec) -> Result<ForecastData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let graph = build_graph(spec, &mut rng)?;
    let dyn_ = DiffusionDynamics::new(spec, &graph);
    let n = spec.n_nodes;
    let burn = spec.burn_in();
    let len = spec.emitted_steps();
    let start = SERIES_START_MIN - burn as i64 * spec.step_min;
    let sigma: Vec<f64> = (0..n).map(|v| spec.noise * dyn_.amplitude(v)).collect();
    let mut z = vec![0.0; n];
    let mut values = Vec::with_capacity(len * n);
    for step in 0..burn + len {
        let t = start + step as i64 * spec.step_min;
        if step >= burn {
            values.extend((0..n).map(|v| (dyn_.baseline(v, t) + z[v]).max(1.0)));
        }
        z = dyn_.next_deviation(&z);
        for (zv, s) in z.iter_mut().zip(&sigma) {
            let e: f64 = StandardNormal.sample(&mut rng);
            *zv += s * e;
        }
    }
    let node_signal = Tensor::new(vec![len, n, 1], values)?;
    let edge_signal = edge_dynamic_features(&node_signal, &graph)?;
    let timestamps = (0..len as i64)
        .map(|i| SERIES_START_MIN + i * spec.step_min)
        .collect();
    let series = STSeries::new(node_signal, edge_signal, timestamps)?;
    let a = spec.history;
    let b = a + spec.steps * 6 / 10;
    let c = a + spec.steps * 8 / 10;
    let d = a + spec.steps;
    Ok(ForecastData {
        graph,
        series,
        splits: [a..b, b..c, c..d],
    })
}
