use comgnn::comgnn::{AblationConfig, ModelDims};
use comgnn::hetgraph::{GraphBuilder, HeteroGraph, Schema};
use comgnn::params::{Bound, ParamStore};
use comgnn::stcomgnn::{
    build_period_windows, edge_dynamic_features, impute, load_series, read_dense, save_series,
    split_edges, split_nodes, temporal_block, write_dense, ComponentInput, STCoMGNN, STConfig,
    STGraph, STSeries,
};
use comgnn::tensor::{grad_check, grad_check_many, Tape, Tensor, DEFAULT_FD_STEP};
use comgnn::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.gen_range(-0.7..0.7);
        }
    }
}

fn uniform_series(steps: usize, start: i64, step: i64, n: usize) -> STSeries {
    let ts: Vec<i64> = (0..steps as i64).map(|i| start + i * step).collect();
    let node = Tensor::new(
        vec![steps, n, 1],
        (0..steps * n).map(|i| i as f64).collect(),
    )
    .unwrap();
    STSeries::new(node, Tensor::zeros(&[steps, 0, 0]), ts).unwrap()
}

#[test]
fn period_windows_arithmetic() {
    const DAY: i64 = 1440;
    // 1970-01-13 is a Tuesday; the series starts on Monday 1970-01-05.
    let start = 4 * DAY;
    let t0 = 12 * DAY + 720;
    let steps = ((t0 - start) / 5 + 12) as usize;
    let s = uniform_series(steps, start, 5, 1);
    let cfg = STConfig {
        t_recent: 6,
        t_daily: 3,
        t_weekly: 3,
        kernel: 1,
        ..STConfig::default()
    };
    let [r, d, w] = build_period_windows(&s, &cfg, t0).unwrap();
    assert_eq!(r.timestamps.first(), Some(&(t0 - 30)));
    assert_eq!(r.timestamps.last(), Some(&(t0 - 5)));
    assert_eq!(r.len(), 6);
    // Monday 11:45 to 11:55.
    assert_eq!(
        d.timestamps,
        vec![t0 - DAY - 15, t0 - DAY - 10, t0 - DAY - 5]
    );
    assert_eq!(w.timestamps.last(), Some(&(t0 - 7 * DAY - 5)));
    assert_eq!(
        r.node_signal.data()[5],
        s.node_signal.data()[s.index_of(t0).unwrap() - 1]
    );

    let err = build_period_windows(&s, &cfg, start).unwrap_err();
    assert!(matches!(err, Error::InsufficientHistory(_)));
    let err = build_period_windows(&s, &cfg, start + DAY).unwrap_err();
    assert!(matches!(err, Error::InsufficientHistory(_)));
}

#[test]
fn temporal_block_trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[4, 3, 2], &mut rng);
    // K=1 kernel producing [x | 0]: GLU gives x * sigmoid(0).
    let mut k = vec![0.0; 2 * 4];
    k[0] = 1.0;
    k[4 + 1] = 1.0;
    let kernel = Tensor::new(vec![1, 2, 4], k).unwrap();
    let tape = Tape::new();
    let y = temporal_block(&tape.constant(x.clone()), &tape.constant(kernel), None).unwrap();
    for (a, b) in y.value().data().iter().zip(x.data()) {
        assert!((a - 0.5 * b).abs() < 1e-15);
    }
    let x = random(&[12, 2, 3], &mut rng);
    let kernel = random(&[3, 3, 4], &mut rng);
    let y = temporal_block(
        &tape.constant(x.clone()),
        &tape.constant(kernel.clone()),
        None,
    )
    .unwrap();
    assert_eq!(y.shape(), vec![10, 2, 2]);
    let short = random(&[2, 2, 3], &mut rng);
    assert!(temporal_block(&tape.constant(short), &tape.constant(kernel.clone()), None).is_err());

    let err = grad_check_many(
        |_, v| Ok(temporal_block(&v[0], &v[1], None)?.sum_squares()),
        &[x, kernel],
        DEFAULT_FD_STEP,
    )
    .unwrap();
    assert!(err.iter().all(|e| *e < 1e-5), "{err:?}");
}

#[test]
fn edge_dynamic_feature_examples() {
    let mut s = Schema::default();
    let a = s.add_node_type("a", &[]).unwrap();
    s.add_edge_type("e", a, a, &[]).unwrap();
    let mut gb = GraphBuilder::new(s);
    for _ in 0..3 {
        gb.add_node(a, vec![]);
    }
    gb.add_edge(0, 1, 0, vec![]);
    gb.add_edge(1, 0, 0, vec![]);
    gb.add_edge(2, 1, 0, vec![]);
    let g = gb.build().unwrap();
    let x = Tensor::new(vec![1, 3, 1], vec![3.0, 3.0, 4.0]).unwrap();
    let f = edge_dynamic_features(&x, &g).unwrap();
    assert_eq!(f.shape(), &[1, 3, 2]);
    assert_eq!(&f.data()[..2], &[3.0, 0.0]);
    let x = Tensor::new(vec![1, 3, 1], vec![4.0, 2.0, 7.0]).unwrap();
    let f = edge_dynamic_features(&x, &g).unwrap();
    assert_eq!(&f.data()[..2], &[3.0, 2.0]);
    // Edge 1 is edge 0 with endpoints swapped.
    assert_eq!(&f.data()[..2], &f.data()[2..4]);
}

/// Six nodes of two types, two relations with their reverses.
fn toy_graph(seed: u64) -> HeteroGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Schema::default();
    let a = s.add_node_type("a", &["f"]).unwrap();
    let b = s.add_node_type("b", &["f", "g"]).unwrap();
    let ab = s.add_edge_type("ab", a, b, &["w"]).unwrap();
    let aa = s.add_edge_type("aa", a, a, &[]).unwrap();
    let mut gb = GraphBuilder::new(s);
    for i in 0..6 {
        if i % 2 == 0 {
            gb.add_node(a, vec![rng.gen_range(0.0..1.0)]);
        } else {
            gb.add_node(b, vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]);
        }
    }
    for (u, v) in [(0, 1), (2, 3), (4, 5), (0, 3)] {
        gb.add_edge(u, v, ab, vec![rng.gen_range(0.0..1.0)]);
    }
    for (u, v) in [(0, 2), (2, 4)] {
        gb.add_edge(u, v, aa, vec![]);
    }
    gb.build().unwrap().add_reverse_relations().unwrap()
}

fn tiny_cfg() -> STConfig {
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

fn tiny_dims() -> ModelDims {
    ModelDims {
        node_msg: 2,
        edge_msg: 2,
        attn: 2,
        meta_hidden: 2,
        ..ModelDims::default()
    }
}

fn build(
    g: &HeteroGraph,
    cfg: &STConfig,
    ablation: AblationConfig,
    seed: u64,
) -> (ParamStore, STCoMGNN) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = STCoMGNN::new(&mut store, g, cfg, &tiny_dims(), ablation, 1, 2, &mut rng).unwrap();
    (store, m)
}

/// Component inputs for one sample, drawn from a node series whose edge
/// stream is derived from it.
fn inputs_from(series: &Tensor, g: &HeteroGraph, cfg: &STConfig, t0: usize) -> [ComponentInput; 3] {
    let edges = edge_dynamic_features(series, g).unwrap();
    let day = cfg.day_steps().unwrap();
    let week = cfg.week_steps().unwrap();
    let ends = [t0, t0 - day, t0 - week];
    let mut out = Vec::new();
    for (end, len) in ends.iter().zip(cfg.windows()) {
        let r = end - len..*end;
        out.push(ComponentInput {
            nodes: split_nodes(&comgnn::stcomgnn::time_slice(series, r.clone()), g),
            edges: split_edges(&comgnn::stcomgnn::time_slice(&edges, r), g),
            batch: 1,
        });
    }
    out.try_into().unwrap()
}

fn predict(
    store: &ParamStore,
    m: &STCoMGNN,
    sg: &STGraph,
    inputs: &[ComponentInput; 3],
) -> Vec<Tensor> {
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    m.forward(&p, sg, inputs, &tape)
        .unwrap()
        .iter()
        .map(|v| (*v.value()).clone())
        .collect()
}

#[test]
fn gradient_check_full_st_model() {
    let g = toy_graph(3);
    let cfg = tiny_cfg();
    let (mut store, m) = build(&g, &cfg, AblationConfig::FULL, 4);
    randomize(&mut store, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let series = random(&[16, 6, 1], &mut rng);
    let inputs = inputs_from(&series, &g, &cfg, 16);
    let sg = STGraph::new(g.clone());
    let weights: Vec<Tensor> = predict(&store, &m, &sg, &inputs)
        .iter()
        .map(|t| random(t.shape(), &mut rng))
        .collect();
    let errs = grad_check_many(
        |tape, vars| {
            let p = Bound::from_vars(vars.to_vec());
            let out = m.forward(&p, &sg, &inputs, tape)?;
            let mut loss = tape.constant(Tensor::scalar(0.0));
            for (y, w) in out.iter().zip(&weights) {
                loss = loss.add(&y.mul(&tape.constant(w.clone()))?.sum())?;
            }
            Ok(loss)
        },
        store.values(),
        DEFAULT_FD_STEP,
    )
    .unwrap();
    assert!(store
        .iter()
        .any(|(n, _)| n.ends_with("meta.1.rel.ab_rev.gw_edge.0.W")));
    for ((name, _), e) in store.iter().zip(&errs) {
        assert!(*e < 1e-5, "{name}: {e}");
    }
}

#[test]
fn without_spatial_layers_blocks_compose_temporal_convs() {
    let g = toy_graph(1);
    let cfg = STConfig {
        k_spatial: 0,
        ..tiny_cfg()
    };
    let (mut store, m) = build(&g, &cfg, AblationConfig::FULL, 2);
    randomize(&mut store, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let series = random(&[16, 6, 1], &mut rng);
    let inputs = inputs_from(&series, &g, &cfg, 16);
    let sg = STGraph::new(g.clone());
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let out = m.component_forward(&p, &sg, 0, &inputs[0], &tape).unwrap();
    let w = |n: &str| tape.constant(store.get(store.id(n).unwrap()).clone());
    for (o, x) in inputs[0].nodes.iter().enumerate() {
        let mut h = tape.constant(x.clone());
        for stage in [
            "st.recent.block.0.tin.node",
            "st.recent.block.0.tout.node",
            "st.recent.collapse.node",
        ] {
            h = temporal_block(
                &h,
                &w(&format!("{stage}.kernel")),
                Some(&w(&format!("{stage}.bias"))),
            )
            .unwrap();
        }
        let want = h.value();
        assert_eq!(out.nodes[o].value().data(), want.data());
        assert_eq!(
            out.nodes[o].shape(),
            vec![g.nodes_of_type(o).len(), cfg.out_dim]
        );
    }
}

#[test]
fn isolated_node_reduces_to_skip_transform() {
    let mut s = Schema::default();
    let a = s.add_node_type("a", &["f"]).unwrap();
    s.add_edge_type("e", a, a, &[]).unwrap();
    let mut gb = GraphBuilder::new(s);
    gb.add_node(a, vec![0.5]);
    let g = gb.build().unwrap();
    let cfg = tiny_cfg();
    let (mut store, m) = build(&g, &cfg, AblationConfig::FULL, 7);
    randomize(&mut store, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let series = random(&[16, 1, 1], &mut rng);
    let inputs = inputs_from(&series, &g, &cfg, 16);
    let sg = STGraph::new(g.clone());
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let out = m.component_forward(&p, &sg, 0, &inputs[0], &tape).unwrap();
    let w = |n: &str| tape.constant(store.get(store.id(n).unwrap()).clone());
    let tb = |h, stage: &str| {
        temporal_block(
            &h,
            &w(&format!("{stage}.kernel")),
            Some(&w(&format!("{stage}.bias"))),
        )
        .unwrap()
    };
    let h = tb(
        tape.constant(inputs[0].nodes[0].clone()),
        "st.recent.block.0.tin.node",
    );
    let steps = h.shape()[0];
    let flat = h.reshape(&[steps, 2]).unwrap();
    let zeros = tape.constant(Tensor::zeros(&[steps, 2]));
    let skip = comgnn::tensor::concat(&[zeros, flat], 1)
        .unwrap()
        .linear(
            &w("st.recent.block.0.layer.1.node.a.W"),
            Some(&w("st.recent.block.0.layer.1.node.a.b")),
        )
        .unwrap()
        .mish()
        .reshape(&[steps, 1, 2])
        .unwrap();
    let h = tb(
        tb(skip, "st.recent.block.0.tout.node"),
        "st.recent.collapse.node",
    );
    for (a, b) in out.nodes[0].value().data().iter().zip(h.value().data()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn one_spatial_layer_reaches_one_hop() {
    // Path 0-1-2-3 of one type, with a reverse relation.
    let mut s = Schema::default();
    let a = s.add_node_type("a", &["f"]).unwrap();
    s.add_edge_type("e", a, a, &["w"]).unwrap();
    let mut gb = GraphBuilder::new(s);
    for i in 0..4 {
        gb.add_node(a, vec![0.1 * i as f64]);
    }
    for i in 0..3 {
        gb.add_edge(i, i + 1, 0, vec![0.2]);
    }
    let g = gb.build().unwrap().add_reverse_relations().unwrap();
    let cfg = tiny_cfg();
    let (mut store, m) = build(&g, &cfg, AblationConfig::FULL, 1);
    randomize(&mut store, 2);
    let sg = STGraph::new(g.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = random(&[16, 4, 1], &mut rng);
    let mut bumped = base.clone();
    for t in 0..16 {
        bumped.data_mut()[t * 4] += 1.0;
    }
    let y0 = &predict(&store, &m, &sg, &inputs_from(&base, &g, &cfg, 16))[0];
    let y1 = &predict(&store, &m, &sg, &inputs_from(&bumped, &g, &cfg, 16))[0];
    for v in 0..4 {
        let d: f64 = y0
            .row(v)
            .iter()
            .zip(y1.row(v))
            .map(|(a, b)| (a - b).abs())
            .sum();
        if v <= 1 {
            assert!(d > 1e-9, "node {v} should react");
        } else {
            assert!(d < 1e-12, "node {v} changed by {d}");
        }
    }
}

#[test]
fn constant_inputs_are_shift_invariant() {
    let g = toy_graph(2);
    let cfg = tiny_cfg();
    let (mut store, m) = build(&g, &cfg, AblationConfig::FULL, 3);
    randomize(&mut store, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let levels = random(&[1, 6, 1], &mut rng);
    let series = Tensor::new(
        vec![20, 6, 1],
        (0..20).flat_map(|_| levels.data().to_vec()).collect(),
    )
    .unwrap();
    let sg = STGraph::new(g.clone());
    let a = predict(&store, &m, &sg, &inputs_from(&series, &g, &cfg, 16));
    let b = predict(&store, &m, &sg, &inputs_from(&series, &g, &cfg, 20));
    assert_eq!(a, b);
}

#[test]
fn fusion_and_component_independence() {
    let g = toy_graph(4);
    let cfg = tiny_cfg();
    let (mut store, m) = build(&g, &cfg, AblationConfig::FULL, 5);
    randomize(&mut store, 6);
    let sg = STGraph::new(g.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let series = random(&[16, 6, 1], &mut rng);
    let inputs = inputs_from(&series, &g, &cfg, 16);

    // Zeroed daily and weekly fusion columns: daily input is irrelevant.
    let fw = store.id("st.fuse.W").unwrap();
    for row in 0..2 {
        for c in 2..6 {
            store.get_mut(fw).data_mut()[row * 6 + c] = 0.0;
        }
    }
    let y0 = predict(&store, &m, &sg, &inputs);
    let mut perturbed = inputs.clone();
    for x in &mut perturbed[1].nodes {
        x.data_mut().iter_mut().for_each(|v| *v += 0.3);
    }
    let y1 = predict(&store, &m, &sg, &perturbed);
    for (a, b) in y0.iter().zip(&y1) {
        assert!(a.max_abs_diff(b) < 1e-12);
    }

    // Weekly parameters never reach the recent component.
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let r0 = m
        .component_forward(&p, &sg, 0, &inputs[0], &tape)
        .unwrap()
        .nodes[0]
        .value();
    let ids: Vec<_> = store
        .ids()
        .filter(|&i| store.name(i).starts_with("st.weekly"))
        .collect();
    assert!(!ids.is_empty());
    for i in ids {
        store
            .get_mut(i)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += 0.5);
    }
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let r1 = m
        .component_forward(&p, &sg, 0, &inputs[0], &tape)
        .unwrap()
        .nodes[0]
        .value();
    assert_eq!(r0.data(), r1.data());

    // Identical components with averaging fusion equal one affine map.
    let a = Tensor::new(vec![2, 2], vec![0.3, -0.2, 0.7, 0.1]).unwrap();
    let mut avg = vec![0.0; 12];
    for r in 0..2 {
        for k in 0..3 {
            for c in 0..2 {
                avg[r * 6 + k * 2 + c] = a.data()[r * 2 + c] / 3.0;
            }
        }
    }
    store.get_mut(fw).data_mut().copy_from_slice(&avg);
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let c0 = m.component_forward(&p, &sg, 0, &inputs[0], &tape).unwrap();
    let outs = [
        m.component_forward(&p, &sg, 0, &inputs[0], &tape).unwrap(),
        m.component_forward(&p, &sg, 0, &inputs[0], &tape).unwrap(),
        m.component_forward(&p, &sg, 0, &inputs[0], &tape).unwrap(),
    ];
    let fused = m.fuse_and_predict(&p, &outs).unwrap();
    let b = store.get(store.id("st.fuse.b").unwrap()).clone();
    let direct = c0.nodes[0]
        .linear(&tape.constant(a), Some(&tape.constant(b)))
        .unwrap();
    assert!(fused[0].value().max_abs_diff(&direct.value()) < 1e-12);
}

#[test]
fn batched_samples_match_individual_runs() {
    let g = toy_graph(8);
    let cfg = tiny_cfg();
    let (mut store, m) = build(&g, &cfg, AblationConfig::FULL, 9);
    randomize(&mut store, 10);
    let sg = STGraph::new(g.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let series = random(&[20, 6, 1], &mut rng);
    let a = inputs_from(&series, &g, &cfg, 16);
    let b = inputs_from(&series, &g, &cfg, 19);
    let stack = |xs: &[Tensor], ys: &[Tensor]| -> Vec<Tensor> {
        xs.iter()
            .zip(ys)
            .map(|(x, y)| comgnn::stcomgnn::stack_samples(&[x, y]).unwrap())
            .collect()
    };
    let batched: [ComponentInput; 3] = std::array::from_fn(|c| ComponentInput {
        nodes: stack(&a[c].nodes, &b[c].nodes),
        edges: stack(&a[c].edges, &b[c].edges),
        batch: 2,
    });
    let ya = predict(&store, &m, &sg, &a);
    let yb = predict(&store, &m, &sg, &b);
    let yab = predict(&store, &m, &sg, &batched);
    for o in 0..2 {
        let n = ya[o].rows();
        for i in 0..n {
            for (x, y) in yab[o].row(i).iter().zip(ya[o].row(i)) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in yab[o].row(n + i).iter().zip(yb[o].row(i)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn edge_ablation_runs_without_edge_streams() {
    let g = AblationConfig {
        use_edge_states: false,
        ..AblationConfig::FULL
    }
    .apply(&toy_graph(1))
    .unwrap();
    let cfg = tiny_cfg();
    let ab = AblationConfig {
        use_edge_states: false,
        ..AblationConfig::FULL
    };
    let (store, m) = build(&g, &cfg, ab, 1);
    assert!(store
        .iter()
        .all(|(n, _)| !n.contains(".edge.") && !n.contains("W_star")));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let series = random(&[16, 6, 1], &mut rng);
    let mut inputs = inputs_from(&series, &g, &cfg, 16);
    for inp in &mut inputs {
        inp.edges = inp
            .edges
            .iter()
            .map(|e| Tensor::zeros(&[e.shape()[0], e.shape()[1], 0]))
            .collect();
    }
    let y = predict(&store, &m, &STGraph::new(g.clone()), &inputs);
    assert_eq!(y[0].shape(), &[3, 2]);
    assert!(!m.uses_edge_streams());
}

#[test]
fn config_validation() {
    let mut cfg = STConfig::default();
    assert!(cfg.validate().is_ok());
    assert_eq!(cfg.min_window(), 5);
    cfg.t_daily = 4;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let cfg = STConfig {
        day_min: 7,
        ..STConfig::default()
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn series_bundle_round_trip_and_imputation() {
    let g = toy_graph(5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let node = random(&[7, 6, 1], &mut rng);
    let edges = edge_dynamic_features(&node, &g).unwrap();
    let ts: Vec<i64> = (0..7).map(|i| 1000 + 5 * i).collect();
    let s = STSeries::new(node.clone(), edges, ts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_series(&s, dir.path()).unwrap();
    assert_eq!(load_series(dir.path(), &g).unwrap(), s);

    // Without the edge file the edge stream is derived.
    std::fs::remove_file(dir.path().join("series_edges.csv")).unwrap();
    assert_eq!(load_series(dir.path(), &g).unwrap(), s);

    let path = dir.path().join("x.bin");
    write_dense(&path, &node).unwrap();
    assert_eq!(read_dense(&path).unwrap(), node);
    std::fs::write(&path, b"junk").unwrap();
    assert!(read_dense(&path).is_err());

    let mut x = Tensor::new(
        vec![4, 2, 1],
        vec![f64::NAN, 1.0, 2.0, f64::NAN, f64::NAN, 3.0, 4.0, f64::NAN],
    )
    .unwrap();
    impute(&mut x);
    // Channel mean of observed values is 2.5.
    assert_eq!(x.data(), &[2.5, 1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0]);

    let bad = Tensor::new(vec![2, 1, 1], vec![1.0, 2.0]).unwrap();
    assert!(STSeries::new(bad.clone(), Tensor::zeros(&[2, 0, 0]), vec![0, 0]).is_err());
    assert!(STSeries::new(bad, Tensor::zeros(&[2, 0, 0]), vec![0]).is_err());
}

#[test]
fn temporal_block_gradient_with_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let kernel = random(&[2, 2, 4], &mut rng);
    let bias = random(&[4], &mut rng);
    let x = random(&[5, 3, 2], &mut rng);
    let e = grad_check(
        |t, b| {
            Ok(temporal_block(
                &t.constant(x.clone()),
                &t.constant(kernel.clone()),
                Some(&b),
            )?
            .sum_squares())
        },
        &bias,
        DEFAULT_FD_STEP,
    )
    .unwrap();
    assert!(e < 1e-5);
}
