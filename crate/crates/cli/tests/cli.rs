use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::rc::Rc;

use comgnn::hetgraph::{GraphBuilder, Schema};
use comgnn::params::ParamStore;
use comgnn::tensor::{concat, Tape, Tensor, Var};
use comgnn::training::{RankingData, RankingInstance, RankingSplit, Report};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn comgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comgnn"))
        .args(args)
        .env("COMGNN_THREADS", "0")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = comgnn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    comgnn(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn report(path: &Path) -> Report {
    let mut r = Report::default();
    for line in fs::read_to_string(path).unwrap().lines() {
        let (k, v) = line.split_once('=').unwrap();
        r.push(k, v);
    }
    r
}

const SMALL_RANKING: &str = r#"{"task": "ranking", "n_routes": 12, "mu": 1, "candidate_count": 4}"#;

const SMALL_TRAIN: &str = "epochs = 3\nlr = 0.01\ndims.node_dim = 8\ndims.edge_dim = 4\n\
dims.node_msg = 4\ndims.edge_msg = 4\ndims.attn = 4\ndims.meta_hidden = 4\n";

/// Small ranking bundle under `dir/data`.
fn ranking_bundle(dir: &Path, seed: u64) -> PathBuf {
    let spec = write(dir, "spec.json", SMALL_RANKING);
    let data = dir.join("data");
    ok(&[
        "generate",
        "--config",
        s(&spec),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&data),
    ]);
    data
}

#[test]
fn generate_then_train_produces_metric_log() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    let stdout = ok(&[
        "generate",
        "--task",
        "ranking",
        "--seed",
        "1",
        "--out",
        s(&data),
    ]);
    assert!(stdout.contains("train.instances=140"));
    let cfg = write(tmp.path(), "cfg.txt", "epochs = 2\n");
    let stdout = ok(&["train", "--data", s(&data), "--config", s(&cfg)]);
    assert!(stdout.contains("test.map"));
    let run = data.join("run");
    let log = fs::read_to_string(run.join("metrics.log")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2 * 2);
    assert!(log.starts_with("epoch,split,metric,value\n1,train,loss,"));
    let r = report(&run.join("results.txt"));
    for key in [
        "test.recall@1",
        "test.recall@5",
        "test.recall@10",
        "test.map",
        "valid.map",
    ] {
        let v: f64 = r.get(key).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key}");
    }
    assert!(run.join("best.ckpt").exists());
}

#[test]
fn same_argv_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = ranking_bundle(tmp.path(), 2);
    let cfg = write(tmp.path(), "cfg.txt", SMALL_TRAIN);
    let runs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("run{i}"))).collect();
    for r in &runs {
        ok(&[
            "train",
            "--data",
            s(&data),
            "--config",
            s(&cfg),
            "--seed",
            "5",
            "--out",
            s(r),
        ]);
    }
    for f in ["metrics.log", "results.txt", "best.ckpt", "config.txt"] {
        assert_eq!(
            fs::read(runs[0].join(f)).unwrap(),
            fs::read(runs[1].join(f)).unwrap(),
            "{f}"
        );
    }
    let other = tmp.path().join("other");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--seed",
        "6",
        "--out",
        s(&other),
    ]);
    assert_ne!(
        fs::read(runs[0].join("best.ckpt")).unwrap(),
        fs::read(other.join("best.ckpt")).unwrap()
    );
}

#[test]
fn eval_and_predict_agree_with_training_results() {
    let tmp = tempfile::tempdir().unwrap();
    let data = ranking_bundle(tmp.path(), 3);
    let cfg = write(tmp.path(), "cfg.txt", SMALL_TRAIN);
    ok(&["train", "--data", s(&data), "--config", s(&cfg)]);
    let run = data.join("run");
    ok(&["eval", "--data", s(&data)]);
    let (trained, evaluated) = (
        report(&run.join("results.txt")),
        report(&run.join("eval.txt")),
    );
    for key in ["valid.map", "test.map", "test.recall@5"] {
        assert_eq!(trained.get(key), evaluated.get(key), "{key}");
    }
    let ckpt = run.join("best.ckpt");
    let elsewhere = tmp.path().join("pred");
    ok(&[
        "predict",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&elsewhere),
    ]);
    let csv = fs::read_to_string(elsewhere.join("predictions.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    let test = RankingData::load(&data).unwrap().test;
    assert_eq!(
        rows.len(),
        test.instances
            .iter()
            .map(|i| i.candidates.len())
            .sum::<usize>()
    );
}

#[test]
fn forecast_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write(
        tmp.path(),
        "spec.json",
        r#"{"task": "forecast", "n_nodes": 6, "steps": 60}"#,
    );
    let data = tmp.path().join("data");
    ok(&[
        "generate",
        "--config",
        s(&spec),
        "--seed",
        "1",
        "--out",
        s(&data),
    ]);
    let cfg = write(
        tmp.path(),
        "cfg.txt",
        "task = forecast\nepochs = 2\nlr = 0.01\nbatch_size = 4\nsamples_per_epoch = 8\neval_samples = 4\n\
         dims.layers = 1\ndims.node_dim = 4\ndims.edge_dim = 4\ndims.node_msg = 4\ndims.edge_msg = 4\n\
         dims.attn = 4\ndims.meta_hidden = 4\nst.k_spatial = 1\nst.channels = 4\nst.edge_channels = 2\nst.out_dim = 4\n",
    );
    let stdout = ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--task",
        "forecast",
    ]);
    assert!(stdout.contains("test.mape.h6"));
    let run = data.join("run");
    let r = report(&run.join("results.txt"));
    for h in [1, 3, 6] {
        for m in ["mape", "mae", "rmse"] {
            assert!(r.get(&format!("valid.{m}.h{h}")).is_some());
            assert!(r.get(&format!("test.persistence.{m}.h{h}")).is_some());
        }
    }
    ok(&["predict", "--data", s(&data), "--split", "valid"]);
    let csv = fs::read_to_string(run.join("predictions.csv")).unwrap();
    // 12 valid steps, 6 nodes, 3 horizons
    assert_eq!(csv.lines().count(), 1 + 12 * 6 * 3);
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = ranking_bundle(tmp.path(), 4);
    assert_eq!(code(&["bogus"]), 2);
    assert_eq!(code(&["train"]), 2);
    assert_eq!(
        code(&["train", "--data", s(&data), "--seed", "minus-one"]),
        2
    );
    assert_eq!(code(&["generate", "--out", s(&tmp.path().join("x"))]), 2);
    let out = tmp.path().join("out");
    assert_eq!(
        code(&[
            "train",
            "--data",
            s(&data),
            "--task",
            "forecast",
            "--out",
            s(&out)
        ]),
        2
    );
    let bad = write(tmp.path(), "bad.txt", "epochs = 1\nwidth = 3\n");
    assert_eq!(
        code(&[
            "train",
            "--data",
            s(&data),
            "--config",
            s(&bad),
            "--out",
            s(&out)
        ]),
        2
    );
    assert!(!out.join("results.txt").exists());
}

#[test]
fn data_errors_exit_3_without_results() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let missing = tmp.path().join("missing");
    assert_eq!(code(&["train", "--data", s(&missing), "--out", s(&out)]), 3);
    let data = ranking_bundle(tmp.path(), 5);
    let cfg = write(tmp.path(), "cfg.txt", SMALL_TRAIN);
    ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    assert!(out.join("results.txt").exists());
    let instances = data.join("train").join("instances.csv");
    let text = fs::read_to_string(&instances).unwrap();
    fs::write(
        &instances,
        text.replacen(",0\n", ",7\n", 1).replacen(",1\n", ",x\n", 1),
    )
    .unwrap();
    assert_eq!(
        code(&[
            "train",
            "--data",
            s(&data),
            "--config",
            s(&cfg),
            "--out",
            s(&out)
        ]),
        3
    );
    assert!(!out.join("results.txt").exists());
    let ckpt = write(tmp.path(), "broken.ckpt", "not a checkpoint\n");
    fs::write(&instances, text).unwrap();
    assert_eq!(
        code(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt)]),
        3
    );
    assert!(!tmp.path().join("eval.txt").exists());
}

#[test]
fn divergence_exits_4_and_keeps_last_good_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = ranking_bundle(tmp.path(), 6);
    let cfg = write(tmp.path(), "cfg.txt", &format!("{SMALL_TRAIN}lr = 1e300\n"));
    let out = tmp.path().join("out");
    let res = comgnn(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&res.stderr).contains("diverged"));
    assert!(!out.join("results.txt").exists());
    let last = ParamStore::load(out.join("last_good.ckpt")).unwrap();
    assert!(last.values().iter().all(|t| t.is_finite()));
}

#[test]
fn gradcheck_seed_7_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&["gradcheck", "--seed", "7", "--out", s(tmp.path())]);
    assert!(stdout.contains("op.segment_softmax"));
    assert!(stdout.contains("ranking.meta.1"));
    assert!(stdout.contains("forecast.st.recent.block.0"));
    assert!(stdout.trim_end().ends_with("pass"));
    let r = report(&tmp.path().join("gradcheck.txt"));
    for (group, err) in r.entries() {
        assert!(err.parse::<f64>().unwrap() < 1e-5, "{group}");
    }
}

#[test]
fn describe_params_shows_default_dims() {
    let stdout = ok(&["describe-params", "--task", "ranking"]);
    let shape = |name: &str| -> String {
        let line = stdout
            .lines()
            .find(|l| l.starts_with(&format!("{name}\t")))
            .unwrap();
        line.split('\t').nth(1).unwrap().to_string()
    };
    assert!(!stdout.contains("layer.3."));
    assert!(shape("layer.2.node.driver.W").starts_with("[32, "));
    assert!(shape("layer.2.rel.consider.W_star").starts_with("[32, "));
    assert!(shape("layer.1.rel.consider.W").starts_with("[16, "));
    assert!(shape("layer.1.rel.consider.W_edge").starts_with("[16, "));
    let fc = ok(&["describe-params", "--task", "forecast"]);
    assert!(fc.contains("st.recent.block.0.layer.2."));
    assert!(fc.contains("st.fuse.W"));
}

// ---------------------------------------------------------------------
// Degeneration oracle: with every ablation on, training must follow a
// dense reference of mean aggregation plus skip connection.

/// A one-type, one-relation ranking bundle.
fn homogeneous_bundle(dir: &Path) -> PathBuf {
    let split = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Schema::default();
        let v = s.add_node_type("v", &["x", "y"]).unwrap();
        let link = s.add_edge_type("link", v, v, &["w"]).unwrap();
        let mut gb = GraphBuilder::new(s);
        let n = 9;
        for _ in 0..n {
            gb.add_node(v, vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        }
        let mut instances = Vec::new();
        for target in 0..3 {
            let candidates: Vec<usize> = (0..4).map(|k| 3 + (target + 2 * k) % 6).collect();
            let edges = candidates
                .iter()
                .map(|&c| gb.add_edge(target, c, link, vec![rng.gen_range(0.0..1.0)]))
                .collect();
            let pos = rng.gen_range(0..4);
            instances.push(RankingInstance {
                target,
                candidates,
                edges,
                labels: (0..4).map(|k| k == pos).collect(),
            });
        }
        for _ in 0..4 {
            let (a, b) = (rng.gen_range(3..n), rng.gen_range(3..n));
            gb.add_edge(a, b, link, vec![rng.gen_range(0.0..1.0)]);
        }
        RankingSplit {
            graph: gb.build().unwrap(),
            instances,
        }
    };
    let data = RankingData {
        train: split(1),
        valid: split(2),
        test: split(3),
    };
    let out = dir.join("homog");
    data.save(&out).unwrap();
    out
}

fn param<'t>(store: &ParamStore, vars: &[Var<'t>], name: &str) -> Var<'t> {
    vars[store.id(name).unwrap_or_else(|| panic!("{name}")).index()]
}

/// Final-epoch training loss of the reference, started from `init`.
fn reference_final_loss(
    split: &RankingSplit,
    init: &ParamStore,
    layers: usize,
    lr: f64,
    lambda: f64,
    epochs: usize,
) -> f64 {
    let g = &split.graph;
    let n = g.num_nodes();
    // node attributes in per-type slots of one shared vector
    let dims = g.schema().node_attr_dims();
    let width: usize = dims.iter().sum();
    let mut x = vec![0.0; n * width];
    for v in 0..n {
        let off: usize = dims[..g.node_type(v)].iter().sum();
        x[v * width + off..v * width + off + dims[g.node_type(v)]].copy_from_slice(g.node_attr(v));
    }
    // mean over every incident edge, ignoring direction; relations without
    // a declared reverse are mirrored, so their edges count twice
    let types = &g.schema().edge_types;
    let mirrored =
        |r: usize| types[r].reverse_of.is_some() || types.iter().any(|t| t.reverse_of == Some(r));
    let mut weight = vec![vec![0.0; n]; n];
    for e in g.edges() {
        let w = if mirrored(e.rel) { 1.0 } else { 2.0 };
        weight[e.src][e.dst] += w;
        weight[e.dst][e.src] += w;
    }
    let mut adj = vec![0.0; n * n];
    let mut has = vec![0.0; n];
    for v in 0..n {
        let deg: f64 = weight[v].iter().sum();
        if deg > 0.0 {
            has[v] = 1.0;
            for u in 0..n {
                adj[v * n + u] = weight[v][u] / deg;
            }
        }
    }
    let targets: Vec<usize> = split
        .instances
        .iter()
        .flat_map(|i| vec![i.target; i.candidates.len()])
        .collect();
    let cands: Vec<usize> = split
        .instances
        .iter()
        .flat_map(|i| i.candidates.clone())
        .collect();
    let scored = split
        .instances
        .iter()
        .filter(|i| i.labels.contains(&true))
        .count();

    let mut theta: Vec<Tensor> = init.values().to_vec();
    let (mut m, mut v2): (Vec<Tensor>, Vec<Tensor>) = (
        theta.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        theta.iter().map(|t| Tensor::zeros(t.shape())).collect(),
    );
    let mut last = f64::NAN;
    for step in 1..=epochs {
        let tape = Tape::new();
        let vars: Vec<Var> = theta.iter().map(|t| tape.param(t.clone())).collect();
        let a = tape.constant(Tensor::new(vec![n, n], adj.clone()).unwrap());
        let mask = tape.constant(Tensor::new(vec![n, 1], has.clone()).unwrap());
        let mut h = tape.constant(Tensor::new(vec![n, width], x.clone()).unwrap());
        for l in 1..=layers {
            let w = param(init, &vars, &format!("layer.{l}.rel.edge.W"));
            let b = param(init, &vars, &format!("layer.{l}.rel.edge.b"));
            let wo = param(init, &vars, &format!("layer.{l}.node.node.W"));
            let bo = param(init, &vars, &format!("layer.{l}.node.node.b"));
            let msg = concat(&[h, a.matmul(&h).unwrap()], 1)
                .unwrap()
                .linear(&w, Some(&b))
                .unwrap()
                .mul_rows(&mask)
                .unwrap();
            h = concat(&[msg, h], 1)
                .unwrap()
                .linear(&wo, Some(&bo))
                .unwrap()
                .mish();
        }
        let pairs = concat(
            &[
                h.gather_rows(Rc::from(targets.clone())).unwrap(),
                h.gather_rows(Rc::from(cands.clone())).unwrap(),
            ],
            1,
        )
        .unwrap();
        let wr = param(init, &vars, "readout.W");
        let br = param(init, &vars, "readout.b");
        let scores = pairs.linear(&wr, Some(&br)).unwrap();
        let mut loss = tape.constant(Tensor::scalar(0.0));
        let mut row = 0;
        for inst in &split.instances {
            let c = inst.candidates.len();
            let pos = inst.labels.iter().filter(|&&l| l).count();
            if pos > 0 {
                let y: Vec<f64> = inst
                    .labels
                    .iter()
                    .map(|&l| if l { 1.0 / pos as f64 } else { 0.0 })
                    .collect();
                let logp = scores
                    .slice_rows(row, c)
                    .unwrap()
                    .reshape(&[c])
                    .unwrap()
                    .log_softmax();
                let ce = logp
                    .mul(&tape.constant(Tensor::new(vec![c], y).unwrap()))
                    .unwrap()
                    .sum();
                loss = loss.sub(&ce).unwrap();
            }
            row += c;
        }
        loss = loss.scale(1.0 / scored as f64);
        let mut reg = tape.constant(Tensor::scalar(0.0));
        for p in &vars {
            reg = reg.add(&p.sum_squares()).unwrap();
        }
        let loss = loss.add(&reg.scale(lambda)).unwrap();
        last = loss.item();
        let grads = tape.backward(loss).unwrap();
        let (c1, c2) = (
            1.0 - 0.9f64.powi(step as i32),
            1.0 - 0.999f64.powi(step as i32),
        );
        for (i, p) in vars.iter().enumerate() {
            let gr = grads.wrt(*p);
            for (k, g) in gr.data().iter().enumerate() {
                let mk = &mut m[i].data_mut()[k];
                *mk = 0.9 * *mk + 0.1 * g;
                let vk = &mut v2[i].data_mut()[k];
                *vk = 0.999 * *vk + 0.001 * g * g;
                let (mh, vh) = (m[i].data()[k] / c1, v2[i].data()[k] / c2);
                theta[i].data_mut()[k] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
    }
    last
}

fn degeneration_case(dir: &Path, data: &Path) {
    let ablate = ["--no-het", "--no-edge-info", "--no-meta-att"];
    let (lr, lambda, epochs) = (0.01, 1e-5, 6);
    let run = |name: &str, epochs: usize| -> PathBuf {
        let cfg = write(
            dir,
            &format!("{name}.txt"),
            &format!("epochs = {epochs}\nlr = {lr}\nlambda = {lambda}\n"),
        );
        let out = dir.join(name);
        let mut args = vec![
            "train",
            "--data",
            s(data),
            "--config",
            s(&cfg),
            "--out",
            s(&out),
        ];
        args.extend(ablate);
        ok(&args);
        out
    };
    let init = ParamStore::load(run("init", 0).join("best.ckpt")).unwrap();
    let names: Vec<&str> = init.iter().map(|(n, _)| n).collect();
    assert_eq!(names.len(), 10, "{names:?}");
    let trained = report(&run("trained", epochs).join("results.txt"));
    let got: f64 = trained.get("final_train_loss").unwrap().parse().unwrap();
    let train = RankingData::load(data).unwrap().train;
    let want = reference_final_loss(&train, &init, 2, lr, lambda, epochs);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn fully_ablated_training_matches_reference_on_homogeneous_data() {
    let tmp = tempfile::tempdir().unwrap();
    let data = homogeneous_bundle(tmp.path());
    degeneration_case(tmp.path(), &data);
}

#[test]
fn fully_ablated_training_matches_reference_on_generated_data() {
    let tmp = tempfile::tempdir().unwrap();
    let data = ranking_bundle(tmp.path(), 8);
    degeneration_case(tmp.path(), &data);
}
