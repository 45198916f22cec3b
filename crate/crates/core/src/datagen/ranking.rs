use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{GraphBuilder, HeteroGraph, NodeId, Schema};
use crate::training::{RankingData, RankingInstance, RankingSplit, ScoredInstance};

/// Desk-scale analogue of the hitch-ride candidate ranking task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRankingSpec {
    /// Target routes, one instance each.
    pub n_routes: usize,
    /// Historical routes (each with one past order) per driver.
    pub mu: usize,
    pub candidate_count: usize,
    pub driver_attrs: usize,
    pub route_attrs: usize,
    pub order_attrs: usize,
    /// Fraction of candidates labelled positive.
    pub positive_rate: f64,
    pub seed: u64,
}

impl Default for SynthRankingSpec {
    fn default() -> Self {
        Self {
            n_routes: 200,
            mu: 4,
            candidate_count: 20,
            driver_attrs: 3,
            route_attrs: 5,
            order_attrs: 5,
            positive_rate: 0.2,
            seed: 0,
        }
    }
}

impl SynthRankingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_count < 2 {
            return Err(Error::Config("candidate_count must be at least 2".into()));
        }
        if self.n_routes < 10 {
            return Err(Error::Config(
                "n_routes must be at least 10 to fill three splits".into(),
            ));
        }
        if self.driver_attrs == 0 || self.order_attrs == 0 || self.route_attrs == 0 {
            return Err(Error::Config(
                "every node type needs at least one attribute".into(),
            ));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(Error::Config("positive_rate must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// The planted scoring rule. The driver's detour tolerance `tau` scales the
/// detour penalty.
pub fn planted_score(tau: f64, fare: f64, detour: f64, dep_diff: f64) -> f64 {
    1.2 * fare - (0.5 + tau) * detour - 0.8 * dep_diff
}

pub fn ranking_schema(spec: &SynthRankingSpec) -> Result<Schema> {
    let names = |first: &str, prefix: &str, n: usize| -> Vec<String> {
        std::iter::once(first.to_string())
            .chain((1..n).map(|i| format!("{prefix}_{i}")))
            .collect()
    };
    let d = names("tolerance", "driver", spec.driver_attrs);
    let r = names("route_0", "route", spec.route_attrs);
    let o = names("fare", "order", spec.order_attrs);
    let mut s = Schema::default();
    let driver = s.add_node_type("driver", &d.iter().map(String::as_str).collect::<Vec<_>>())?;
    let route = s.add_node_type("route", &r.iter().map(String::as_str).collect::<Vec<_>>())?;
    let order = s.add_node_type("order", &o.iter().map(String::as_str).collect::<Vec<_>>())?;
    let create = s.add_edge_type("create", driver, route, &["recency"])?;
    let created_by = s.add_edge_type("created_by", route, driver, &["recency"])?;
    s.edge_types[created_by].reverse_of = Some(create);
    s.add_edge_type("historical_route_of", route, route, &["similarity"])?;
    s.add_edge_type("consider", route, order, &["detour", "dep_diff"])?;
    Ok(s)
}

struct Candidate {
    order: Vec<f64>,
    edge: [f64; 2],
    score: f64,
}

struct Target {
    driver: Vec<f64>,
    route: Vec<f64>,
    history: Vec<(Vec<f64>, f64, f64, Vec<f64>, [f64; 2])>,
    recency: f64,
    candidates: Vec<Candidate>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

fn draw_target(spec: &SynthRankingSpec, rng: &mut ChaCha8Rng) -> Target {
    let driver = uniform(rng, spec.driver_attrs);
    let route = uniform(rng, spec.route_attrs);
    let history = (0..spec.mu)
        .map(|_| {
            let r = uniform(rng, spec.route_attrs);
            let recency = rng.gen_range(0.0..1.0);
            let similarity = rng.gen_range(0.0..1.0);
            let o = uniform(rng, spec.order_attrs);
            let e = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            (r, recency, similarity, o, e)
        })
        .collect();
    let recency = rng.gen_range(0.0..1.0);
    let candidates = (0..spec.candidate_count)
        .map(|_| {
            let order = uniform(rng, spec.order_attrs);
            let edge = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let score = planted_score(driver[0], order[0], edge[0], edge[1]);
            Candidate { order, edge, score }
        })
        .collect();
    Target {
        driver,
        route,
        history,
        recency,
        candidates,
    }
}

fn build_split(schema: &Schema, targets: &[Target], threshold: f64) -> Result<RankingSplit> {
    let id = |name: &str| schema.node_type_id(name).expect("ranking schema");
    let rel = |name: &str| schema.edge_type_id(name).expect("ranking schema");
    let (driver, route, order) = (id("driver"), id("route"), id("order"));
    let (create, created_by, hist, consider) = (
        rel("create"),
        rel("created_by"),
        rel("historical_route_of"),
        rel("consider"),
    );
    let mut gb = GraphBuilder::new(schema.clone());
    let mut instances = Vec::with_capacity(targets.len());
    for t in targets {
        let d = gb.add_node(driver, t.driver.clone());
        let r = gb.add_node(route, t.route.clone());
        gb.add_edge(d, r, create, vec![t.recency]);
        gb.add_edge(r, d, created_by, vec![t.recency]);
        for (ra, recency, similarity, oa, ea) in &t.history {
            let hr = gb.add_node(route, ra.clone());
            gb.add_edge(d, hr, create, vec![*recency]);
            gb.add_edge(hr, d, created_by, vec![*recency]);
            gb.add_edge(hr, r, hist, vec![*similarity]);
            let ho = gb.add_node(order, oa.clone());
            gb.add_edge(hr, ho, consider, ea.to_vec());
        }
        let mut inst = RankingInstance {
            target: r,
            candidates: Vec::new(),
            edges: Vec::new(),
            labels: Vec::new(),
        };
        for c in &t.candidates {
            let o: NodeId = gb.add_node(order, c.order.clone());
            let e = gb.add_edge(r, o, consider, c.edge.to_vec());
            inst.candidates.push(o);
            inst.edges.push(e);
            inst.labels.push(c.score > threshold);
        }
        instances.push(inst);
    }
    Ok(RankingSplit {
        graph: gb.build()?,
        instances,
    })
}

/// Target routes in chronological order split 70/10/20 into train, valid
/// and test. Labels mark candidates whose planted score exceeds the
/// `1 - positive_rate` quantile of all candidate scores.
pub fn gen_ranking_task(spec: &SynthRankingSpec) -> Result<RankingData> {
    spec.validate()?;
    let schema = ranking_schema(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let targets: Vec<Target> = (0..spec.n_routes)
        .map(|_| draw_target(spec, &mut rng))
        .collect();
    let mut scores: Vec<f64> = targets
        .iter()
        .flat_map(|t| t.candidates.iter().map(|c| c.score))
        .collect();
    scores.sort_by(f64::total_cmp);
    let q = ((1.0 - spec.positive_rate) * scores.len() as f64).floor() as usize;
    let threshold = scores[q.min(scores.len() - 1).saturating_sub(1)];
    let n_train = spec.n_routes * 7 / 10;
    let n_valid = spec.n_routes / 10;
    Ok(RankingData {
        train: build_split(&schema, &targets[..n_train], threshold)?,
        valid: build_split(&schema, &targets[n_train..n_train + n_valid], threshold)?,
        test: build_split(&schema, &targets[n_train + n_valid..], threshold)?,
    })
}

/// Scores every candidate of `split` with the planted rule, reading the
/// driver tolerance, fare and edge attributes back from the graph.
pub fn planted_scores(split: &RankingSplit) -> Result<Vec<ScoredInstance>> {
    let g: &HeteroGraph = &split.graph;
    let s = g.schema();
    let created_by = s
        .edge_type_id("created_by")
        .ok_or_else(|| Error::schema("schema.json", "missing created_by relation"))?;
    split
        .instances
        .iter()
        .map(|inst| {
            let drv = g
                .incident_edge_ids(inst.target)
                .iter()
                .map(|&e| g.edge(e))
                .find(|e| e.rel == created_by && e.src == inst.target)
                .ok_or_else(|| Error::schema("ranking", "target route without a driver"))?
                .dst;
            let tau = g.node_attr(drv)[0];
            let scores = inst
                .candidates
                .iter()
                .zip(&inst.edges)
                .map(|(&c, &e)| {
                    let a = g.edge_attr(e);
                    planted_score(tau, g.node_attr(c)[0], a[0], a[1])
                })
                .collect();
            Ok(ScoredInstance {
                ids: inst.candidates.clone(),
                scores,
                labels: inst.labels.clone(),
            })
        })
        .collect()
}
