mod args;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use args::{AblateArgs, Cli, Command, Common, EvalArgs, GenerateArgs, ImputeArgs, MaskArgs, MaskModeArg, Split, SweepArgs, TrainArgs, Tuning};
use maginet::config::RunConfig;
use maginet::data::{
    generate_synthetic, load_mask, load_series_csv, split, synthetic_graph, window, write_mask, write_series_csv,
    HoldoutMask, Normalizer, SeriesMatrix, SyntheticSpec,
};
use maginet::eval::{
    ablation_run, imputation_trace, impute_series, sensitivity_sweep, write_sweep_plot, write_trace, Dataset,
    ErrorTally, Imputer, Method,
};
use maginet::graph::TrafficGraph;
use maginet::model::{load_checkpoint, save_checkpoint, Ablation, Checkpoint, Dims, MagiNet, MaskMode};
use maginet::train::{train, write_history};
use maginet::Error;

const VERSION: &str = env!("CARGO_PKG_VERSION");

type Result<T> = std::result::Result<T, Error>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Mask(a) => mask(a),
        Command::Train(a) => train_cmd(a),
        Command::Impute(a) => impute(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Ablate(a) => ablate(a),
    }
}

/// First line of every output file: version, flags and seed.
fn provenance(seed: u64) -> String {
    let flags: Vec<String> = std::env::args().skip(1).collect();
    format!("maginet {VERSION} {} seed={seed}", flags.join(" "))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    f(&mut w).map_err(io)?;
    w.flush().map_err(io)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::Input(format!("--{flag} is required (flag or config file)")))
}

/// Config file, then flags on top.
fn resolve(common: &Common, tuning: &Tuning) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let d = &mut cfg.data;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    if common.series.is_some() {
        d.series = common.series.clone();
    }
    if common.adj.is_some() {
        d.adj = common.adj.clone();
    }
    if common.mask.is_some() {
        d.mask = common.mask.clone();
    }
    if common.dataset.is_some() {
        d.name = common.dataset.clone();
    }
    set!(d.ratio, common.ratio);
    set!(cfg.seed, common.seed);
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    let (w, m, t) = (&mut cfg.windows, &mut cfg.model, &mut cfg.train);
    set!(w.width, tuning.window);
    // A new width without an explicit stride keeps windows disjoint.
    set!(w.stride, tuning.stride.or(tuning.window));
    set!(w.knn_k, tuning.knn_k);
    set!(m.hidden, tuning.hidden);
    set!(m.heads, tuning.heads);
    set!(m.head_dim, tuning.head_dim);
    set!(m.spatial_dim, tuning.spatial_dim);
    set!(m.cheb_order, tuning.cheb_order);
    set!(m.kernel_sizes, tuning.kernels);
    set!(m.blocks, tuning.blocks);
    if let Some(mode) = tuning.mask_mode {
        m.mask_mode = match mode {
            MaskModeArg::NegInf => MaskMode::NegInf,
            MaskModeArg::Multiply => MaskMode::Multiply,
        };
    }
    set!(t.epochs, tuning.epochs);
    set!(t.learning_rate, tuning.lr);
    set!(t.batch_size, tuning.batch_size);
    set!(t.patience, tuning.patience);
    set!(t.seed, tuning.train_seed);
    if tuning.clip.is_some() {
        t.clip = tuning.clip;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let series_path = required(&cfg.data.series, "series")?;
    let series = load_series_csv(series_path)?;
    let adj = required(&cfg.data.adj, "adj")?;
    let graph = TrafficGraph::load_edge_list(adj, series.n_nodes())?;
    let name = cfg.data.name.clone().unwrap_or_else(|| {
        series_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "series".into())
    });
    Dataset::new(name, series, graph)
}

/// The mask file when given and present, otherwise a fresh draw.
fn resolve_mask(cfg: &RunConfig, series: &SeriesMatrix) -> Result<(HoldoutMask, bool)> {
    match &cfg.data.mask {
        Some(p) if p.exists() => {
            let m = load_mask(p)?;
            m.check_matches(series)?;
            Ok((m, false))
        }
        _ => Ok((HoldoutMask::draw(series, cfg.data.ratio, cfg.seed)?, true)),
    }
}

fn out_dir(cfg: &RunConfig, default: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let n = a.nodes as usize;
    let graph = synthetic_graph(n, a.seed)?;
    let series = generate_synthetic(n, a.steps, &graph, a.seed, &SyntheticSpec::default())?;
    let series_path = a.series.unwrap_or_else(|| a.out.join("series.csv"));
    let adj_path = a.adj.unwrap_or_else(|| a.out.join("adj.csv"));
    let comment = provenance(a.seed);
    write_file(&series_path, |w| write_series_csv(&series, Some(&comment), w))?;
    write_file(&adj_path, |w| {
        writeln!(w, "# {comment}")?;
        graph.write_edge_list(w)
    })?;
    let (mean, std) = series.summary();
    println!("nodes={n} steps={} edges={}", a.steps, graph.n_edges());
    println!("mean={mean:.4} std={std:.4}");
    println!("wrote {} and {}", series_path.display(), adj_path.display());
    Ok(())
}

fn mask(a: MaskArgs) -> Result<()> {
    let cfg = resolve(&a.common, &Tuning::default())?;
    let series = load_series_csv(required(&cfg.data.series, "series")?)?;
    let mask = HoldoutMask::draw(&series, cfg.data.ratio, cfg.seed)?;
    let path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("mask.csv"));
    write_file(&path, |w| write_mask(&mask, Some(&provenance(cfg.seed)), w))?;
    println!("held out {} readings (ratio {}, seed {})", mask.count(), mask.ratio, mask.seed);
    Ok(())
}

fn apply_ablations(cfg: &mut RunConfig, names: &[String]) -> Result<()> {
    for n in names {
        let a: Ablation = n.parse()?;
        cfg.model = cfg.model.with_ablation(a);
    }
    cfg.model.validate()
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = resolve(&a.common, &a.tuning)?;
    apply_ablations(&mut cfg, &a.ablate)?;
    let ds = load_dataset(&cfg)?;
    let (mask, drawn) = resolve_mask(&cfg, &ds.series)?;
    let dir = out_dir(&cfg, "maginet-run");
    let comment = provenance(cfg.seed);
    if drawn {
        let path = cfg.data.mask.clone().unwrap_or_else(|| dir.join("mask.csv"));
        write_file(&path, |w| write_mask(&mask, Some(&comment), w))?;
    }
    let exp = cfg.experiment();
    let windows = window(&ds.series, &mask, exp.window, exp.stride)?;
    let splits = split(windows, exp.fractions)?;
    let normalizer = Normalizer::fit(&splits.train)?;
    let dims = Dims {
        n_nodes: ds.series.n_nodes(),
        window: exp.window,
        n_features: ds.series.n_features(),
    };
    let model = MagiNet::new(exp.model.clone(), dims, &ds.graph, exp.train.seed)?;
    let mut tcfg = exp.train.clone();
    tcfg.checkpoint = None;
    let outcome = train(&model, &splits.train, &splits.valid, &normalizer, &tcfg)?;
    let ck_path = tcfg_checkpoint(&cfg, &dir);
    save_checkpoint(&ck_path, &Checkpoint::new(&outcome.model, &normalizer))?;
    write_file(&dir.join("history.csv"), |w| write_history(&outcome.history, Some(&comment), w))?;
    let toml = format!("# {comment}\n{}", cfg.to_toml_string()?);
    std::fs::write(dir.join("config.toml"), toml).map_err(|e| Error::Io {
        path: dir.join("config.toml"),
        source: e,
    })?;
    match outcome.best() {
        Some(b) => println!(
            "best epoch {} of {}: val_rmse={:.4} val_mape={:.4}% ({:?})",
            b.epoch,
            outcome.history.len(),
            b.val_rmse,
            b.val_mape,
            outcome.stop
        ),
        None => println!("no epoch completed ({:?})", outcome.stop),
    }
    println!("checkpoint: {}", ck_path.display());
    if outcome.stop == maginet::train::StopReason::Diverged && outcome.best().is_none() {
        return Err(Error::Numeric("training diverged before the first validation".into()));
    }
    Ok(())
}

fn tcfg_checkpoint(cfg: &RunConfig, dir: &Path) -> PathBuf {
    cfg.train.checkpoint.clone().unwrap_or_else(|| dir.join("checkpoint.json"))
}

/// Loads the checkpoint for the network method.
fn load_model(path: &Option<PathBuf>, ds: &Dataset) -> Result<(MagiNet, Normalizer)> {
    let path = required(path, "checkpoint")?;
    let ck = load_checkpoint(path)?;
    if ck.dims.n_nodes != ds.series.n_nodes() || ck.dims.n_features != ds.series.n_features() {
        return Err(Error::Input(format!(
            "checkpoint expects {} nodes x {} features, series has {} x {}",
            ck.dims.n_nodes,
            ck.dims.n_features,
            ds.series.n_nodes(),
            ds.series.n_features()
        )));
    }
    ck.into_model(&ds.graph)
}

fn impute(a: ImputeArgs) -> Result<()> {
    let cfg = resolve(&a.common, &a.tuning)?;
    let ds = load_dataset(&cfg)?;
    let mask = match &cfg.data.mask {
        Some(p) => load_mask(p)?,
        None => HoldoutMask::empty(ds.series.n_nodes(), ds.series.n_steps()),
    };
    let method: Method = a.method.parse()?;
    let loaded;
    let (imputer, width) = match method {
        Method::Mean => (Imputer::Mean, cfg.windows.width),
        Method::Knn => (Imputer::Knn(cfg.windows.knn_k), cfg.windows.width),
        _ => {
            loaded = load_model(&a.checkpoint, &ds)?;
            let width = loaded.0.dims.window;
            (
                Imputer::Model {
                    model: &loaded.0,
                    normalizer: &loaded.1,
                },
                width,
            )
        }
    };
    let filled = impute_series(&imputer, &ds.series, &mask, width)?;
    let path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("imputed.csv"));
    write_file(&path, |w| write_series_csv(&filled, Some(&provenance(cfg.seed)), w))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = resolve(&a.common, &a.tuning)?;
    let ds = load_dataset(&cfg)?;
    let (mask, _) = resolve_mask(&cfg, &ds.series)?;
    let method: Method = a.method.parse()?;
    let loaded;
    let (imputer, width) = match method {
        Method::Mean => (Imputer::Mean, cfg.windows.width),
        Method::Knn => (Imputer::Knn(cfg.windows.knn_k), cfg.windows.width),
        _ => {
            loaded = load_model(&a.checkpoint, &ds)?;
            let width = loaded.0.dims.window;
            (
                Imputer::Model {
                    model: &loaded.0,
                    normalizer: &loaded.1,
                },
                width,
            )
        }
    };
    let started = std::time::Instant::now();
    let filled = impute_series(&imputer, &ds.series, &mask, width)?;
    let tally = match a.on {
        Split::All => {
            let mut t = ErrorTally::default();
            let (n, steps, c) = (ds.series.n_nodes(), ds.series.n_steps(), ds.series.n_features());
            let truth = maginet::tensor::Tensor::new([n, steps, c], ds.series.values().to_vec())?;
            let pred = maginet::tensor::Tensor::new([n, steps, c], filled.values().to_vec())?;
            let sel: Vec<f64> = (0..n * steps)
                .map(|p| mask.is_held_out(p / steps, p % steps) as u8 as f64)
                .collect();
            t.add(&pred, &truth, &maginet::tensor::Tensor::new([n, steps], sel)?)?;
            t
        }
        Split::Test => {
            let stride = if matches!(method, Method::Mean | Method::Knn) { cfg.windows.stride } else { width };
            let windows = window(&ds.series, &mask, width, stride)?;
            let splits = split(windows, cfg.windows.fractions)?;
            imputer.evaluate(&splits.test)?
        }
    };
    let row = maginet::eval::ReportRow {
        method: method.name(),
        dataset: ds.name.clone(),
        ratio: mask.ratio,
        seed: mask.seed,
        rmse: tally.rmse()?,
        mape: tally.mape().unwrap_or(f64::NAN),
        runtime_s: started.elapsed().as_secs_f64(),
    };
    println!("{} on {:?}: rmse={:.6} mape={:.4}% over {} readings", row.method, a.on, row.rmse, row.mape, tally.count());
    let report = maginet::eval::EvalReport { rows: vec![row] };
    let path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("report.csv"));
    let comment = provenance(cfg.seed);
    write_file(&path, |w| report.write_csv(Some(&comment), w))?;
    if let Some(node) = a.trace_node {
        if node >= ds.series.n_nodes() {
            return Err(Error::Input(format!("--trace-node {node} is not a node of the series")));
        }
        let trace_path = path.with_file_name(format!("trace_node{node}.csv"));
        let rows = imputation_trace(&ds.series, &mask, &filled, node, 0);
        write_file(&trace_path, |w| write_trace(&rows, Some(&comment), w))?;
    }
    Ok(())
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|n| n.parse()).collect()
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = resolve(&a.common, &a.tuning)?;
    let ds = load_dataset(&cfg)?;
    let methods = parse_methods(&a.methods)?;
    let report = sensitivity_sweep(&ds, &a.ratios, &methods, &cfg.experiment(), cfg.seed, a.jobs)?;
    let dir = out_dir(&cfg, "maginet-sweep");
    let comment = provenance(cfg.seed);
    write_file(&dir.join("sweep.csv"), |w| report.write_csv(Some(&comment), w))?;
    write_file(&dir.join("sweep_plot.csv"), |w| write_sweep_plot(&report, Some(&comment), w))?;
    for r in &report.rows {
        println!("{:>14} r={:<5} rmse={:.4} mape={:.3}%", r.method, r.ratio, r.rmse, r.mape);
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = resolve(&a.common, &a.tuning)?;
    let ds = load_dataset(&cfg)?;
    let variants = a
        .variants
        .iter()
        .filter(|v| !v.trim().is_empty())
        .map(|v| v.parse::<Ablation>())
        .collect::<Result<Vec<_>>>()?;
    let (mask, _) = resolve_mask(&cfg, &ds.series)?;
    let report = ablation_run(&ds, &mask, &variants, &cfg.experiment(), a.jobs)?;
    let dir = out_dir(&cfg, "maginet-ablation");
    let comment = provenance(cfg.seed);
    write_file(&dir.join("ablation.csv"), |w| report.write_csv(Some(&comment), w))?;
    for r in &report.rows {
        println!("{:>14} rmse={:.4} mape={:.3}%", r.method, r.rmse, r.mape);
    }
    Ok(())
}
