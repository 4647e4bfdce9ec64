use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use maginet::data::load_series_csv;
use maginet::graph::TrafficGraph;
use maginet::model::{load_checkpoint, MagiNet};

fn maginet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maginet"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = maginet(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

/// Lines that are neither comments nor blank.
fn body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

fn generate(dir: &Path, nodes: &str, steps: &str) {
    ok(dir, &["generate", "--nodes", nodes, "--steps", steps, "--seed", "1"]);
}

const TINY: &[&str] = &[
    "--series", "series.csv", "--adj", "adj.csv", "--window", "12", "--hidden", "8", "--heads", "2",
    "--head-dim", "4", "--spatial-dim", "4", "--cheb-order", "2", "--kernels", "3", "--blocks", "1",
];

#[test]
fn generate_is_deterministic_and_summarizes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = ok(a.path(), &["generate", "--nodes", "8", "--steps", "288", "--seed", "1"]);
    ok(b.path(), &["generate", "--nodes", "8", "--steps", "288", "--seed", "1"]);
    for f in ["series.csv", "adj.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
        assert!(read(a.path(), f).starts_with("# maginet "), "{f}");
    }
    let std: f64 = out
        .split_whitespace()
        .find_map(|w| w.strip_prefix("std="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(std > 0.0, "{out}");
}

#[test]
fn one_node_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let out = maginet(d.path(), &["generate", "--nodes", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = maginet(d.path(), &["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_adjacency_names_the_path() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "4", "48");
    let out = maginet(d.path(), &["train", "--series", "series.csv", "--adj", "nowhere/adj.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/adj.csv"));
}

#[test]
fn unknown_ablation_is_an_input_error() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "4", "48");
    let out = maginet(
        d.path(),
        &["train", "--series", "series.csv", "--adj", "adj.csv", "--ablate", "w/o everything"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tiny_training_run_is_quick_and_complete() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "8", "600");
    let started = Instant::now();
    let mut args = vec!["train", "--epochs", "5", "--out", "run"];
    args.extend_from_slice(TINY);
    let out = ok(d.path(), &args);
    assert!(started.elapsed() < Duration::from_secs(60));
    assert!(out.contains("best epoch"), "{out}");
    for f in ["run/mask.csv", "run/checkpoint.json", "run/history.csv", "run/config.toml"] {
        assert!(d.path().join(f).exists(), "{f}");
    }
    assert_eq!(body(&read(d.path(), "run/history.csv")).len(), 6);
    assert!(read(d.path(), "run/config.toml").starts_with("# maginet "));
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "6", "480");
    let mut args = vec!["train", "--epochs", "2", "--lr", "0", "--train-seed", "5", "--out", "run"];
    args.extend_from_slice(TINY);
    ok(d.path(), &args);
    let ck = load_checkpoint(&d.path().join("run/checkpoint.json")).unwrap();
    let g = TrafficGraph::load_edge_list(&d.path().join("adj.csv"), 6).unwrap();
    let fresh = MagiNet::new(ck.config.clone(), ck.dims, &g, 5).unwrap();
    assert_eq!(ck.params.len(), fresh.params.len());
    for (name, t) in fresh.params.iter() {
        assert_eq!(ck.params[name].data(), t.data(), "{name}");
    }
}

#[test]
fn imputing_a_complete_series_passes_it_through() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "4", "240");
    let mut args = vec!["train", "--epochs", "1", "--out", "run"];
    args.extend_from_slice(TINY);
    ok(d.path(), &args);
    for method in ["mean", "knn", "maginet"] {
        let out = format!("imputed_{method}.csv");
        ok(
            d.path(),
            &[
                "impute", "--series", "series.csv", "--adj", "adj.csv", "--method", method, "--checkpoint",
                "run/checkpoint.json", "--out", &out,
            ],
        );
        assert_eq!(body(&read(d.path(), &out)), body(&read(d.path(), "series.csv")), "{method}");
    }
}

#[test]
fn imputation_fills_only_held_out_readings() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "4", "96");
    ok(d.path(), &["mask", "--series", "series.csv", "--ratio", "0.3", "--seed", "2", "--out", "mask.csv"]);
    ok(
        d.path(),
        &["impute", "--series", "series.csv", "--adj", "adj.csv", "--mask", "mask.csv", "--method", "mean"],
    );
    let truth = load_series_csv(&d.path().join("series.csv")).unwrap();
    let filled = load_series_csv(&d.path().join("imputed.csv")).unwrap();
    let mask = maginet::data::load_mask(&d.path().join("mask.csv")).unwrap();
    let mut changed = 0;
    for i in 0..4 {
        for t in 0..96 {
            if mask.is_held_out(i, t) {
                changed += (filled.get(i, t, 0) != truth.get(i, t, 0)) as usize;
            } else {
                assert_eq!(filled.get(i, t, 0), truth.get(i, t, 0));
            }
        }
    }
    assert!(changed > 0);
}

#[test]
fn eval_of_the_mean_baseline_matches_hand_arithmetic() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("s.csv"), "node0_f0,node1_f0\n1,10\n2,20\n3,30\n4,40\n").unwrap();
    std::fs::write(p.join("a.csv"), "src,dst,weight\n0,1,1\n").unwrap();
    // Node 0 loses step 1, node 1 loses step 3.
    std::fs::write(p.join("m.csv"), "seed=0,ratio=0.25\nnode0,node1\n0,0\n1,0\n0,0\n0,1\n").unwrap();
    ok(
        p,
        &[
            "eval", "--series", "s.csv", "--adj", "a.csv", "--mask", "m.csv", "--method", "mean", "--window", "4",
            "--on", "all", "--out", "report.csv", "--trace-node", "0",
        ],
    );
    // Fills: (1+3+4)/3 for 2, and (10+20+30)/3 = 20 for 40.
    let want = (((8.0f64 / 3.0 - 2.0).powi(2) + 400.0) / 2.0).sqrt();
    let report = read(p, "report.csv");
    let rows = body(&report);
    assert_eq!(rows[0], "method,dataset,ratio,seed,rmse,mape,runtime_s");
    let cells: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(&cells[..4], ["mean", "s", "0.25", "0"]);
    assert_eq!(cells[4].parse::<f64>().unwrap(), want);
    let trace = read(p, "trace_node0.csv");
    assert_eq!(body(&trace)[0], "t,ground_truth,imputed,observed");
    assert_eq!(body(&trace).len(), 5);
}

#[test]
fn sweep_counts_rows_and_writes_plot_data() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "6", "240");
    ok(
        d.path(),
        &[
            "sweep", "--series", "series.csv", "--adj", "adj.csv", "--ratios", "0.2,0.5,0.7", "--methods", "mean,knn",
            "--seed", "3", "--out", "sw", "--jobs", "2",
        ],
    );
    assert_eq!(body(&read(d.path(), "sw/sweep.csv")).len(), 7);
    let plot = read(d.path(), "sw/sweep_plot.csv");
    assert_eq!(body(&plot)[0], "ratio,rmse_mean,rmse_knn");
    assert_eq!(body(&plot).len(), 4);
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "6", "240");
    let mut args = vec!["ablate", "--variants", "no_mastdec,w/o GTconv", "--epochs", "1", "--out", "ab"];
    args.extend_from_slice(TINY);
    ok(d.path(), &args);
    let text = read(d.path(), "ab/ablation.csv");
    let methods: Vec<&str> = body(&text)[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["maginet", "w/o MASTdec", "w/o GTconv"]);
}

#[test]
fn config_file_values_yield_to_flags() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "6", "240");
    std::fs::write(
        d.path().join("run.toml"),
        "seed = 4\n[data]\nseries = \"series.csv\"\nadj = \"adj.csv\"\n[train]\nepochs = 1\nlearning_rate = 0.5\n[model]\nhidden = 4\nheads = 1\nblocks = 1\nkernel_sizes = [3]\n",
    )
    .unwrap();
    ok(d.path(), &["train", "--config", "run.toml", "--lr", "0.002", "--out", "run"]);
    let saved = maginet::config::RunConfig::from_toml_str(&read(d.path(), "run/config.toml")).unwrap();
    assert_eq!(saved.seed, 4);
    assert_eq!(saved.train.learning_rate, 0.002);
    assert_eq!(saved.model.hidden, 4);

    std::fs::write(d.path().join("bad.toml"), "[model]\nhiden = 4\n").unwrap();
    let out = maginet(d.path(), &["train", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

fn strip_runtime(report: &str) -> Vec<String> {
    body(report)
        .iter()
        .map(|l| l.rsplit_once(',').map(|(a, _)| a.to_string()).unwrap_or_default())
        .collect()
}

#[test]
fn a_full_pipeline_repeats_exactly() {
    let run = || {
        let d = tempfile::tempdir().unwrap();
        generate(d.path(), "6", "480");
        let mut args = vec!["train", "--epochs", "2", "--ratio", "0.5", "--seed", "9", "--out", "run"];
        args.extend_from_slice(TINY);
        ok(d.path(), &args);
        ok(
            d.path(),
            &[
                "eval", "--series", "series.csv", "--adj", "adj.csv", "--mask", "run/mask.csv", "--checkpoint",
                "run/checkpoint.json", "--out", "report.csv",
            ],
        );
        (
            read(d.path(), "run/mask.csv"),
            read(d.path(), "run/history.csv"),
            read(d.path(), "run/checkpoint.json"),
            strip_runtime(&read(d.path(), "report.csv")),
        )
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0, "mask");
    assert_eq!(a.1, b.1, "history");
    assert_eq!(a.2, b.2, "checkpoint");
    assert_eq!(a.3, b.3, "report");
}
