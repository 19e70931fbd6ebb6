//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 runtime error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::algebra::{
    build_critical_system, build_zero_system, consistency_probe, degeneracy_check, find_real_zeros, summarize,
    PolySystem, TinyPolyNet,
};
use crate::config::{AlgebraParams, ExperimentConfig, FlatnessParams, MdsParams, MicroNet, MicroSystem, Protocol, SummaryArgs};
use crate::error::{Error, Result};
use crate::experiments::{
    bgd_branching, flatness_probe, generalization_sweep, interpolate, staged_parallel_sgd, sublevel_volume_probe,
    InterpPoint, SimilarityMatrices,
};
use crate::io::results::MANIFEST;
use crate::io::{load_snapshot, load_snapshot_for, verify_manifest, ResultDir};
use crate::mds::{classical_mds, dissimilarity_matrix, LayerSelection, Metric};
use crate::nn::WeightSnapshot;
use crate::trainer::{train, OptimizerConfig, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "rll", version, about = "Desk-scale risk-landscape experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Result directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one network.
    Train(Common),
    /// Staged parallel SGD.
    StageSgd(Common),
    /// BGD run with perturbed branches and branch/main interpolation.
    BranchBgd(Common),
    /// Perturb-and-retrain around a zero-error model.
    Flatness(Common),
    /// Interpolate between two snapshots.
    Interpolate(Common),
    /// Classical MDS of a directory of snapshots.
    Mds {
        #[command(flatten)]
        common: Common,
        /// Directory of `.rllsnap` files.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Layer numbers (input = 1), comma separated.
        #[arg(long, value_delimiter = ',')]
        layers: Vec<usize>,
        /// `cosine` or `euclidean`.
        #[arg(long)]
        metric: Option<String>,
    },
    /// Polynomial-system summaries and micro-scale solves.
    Algebra {
        #[command(flatten)]
        common: Common,
        /// `l=.. d=.. n=.. k=..`
        #[arg(long, num_args = 4)]
        summary: Option<Vec<String>>,
    },
    /// Width and train-size sweep.
    Sweep(Common),
    /// Verify a result directory and tabulate final errors.
    Report {
        #[command(flatten)]
        common: Common,
        /// Result directory to verify.
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
}

/// Errors from the CLI, split by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            Error::Json(_) | Error::InvalidSpec(_) | Error::BudgetExceeded { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

/// Parses `argv` (including the program name), runs, and returns the exit
/// code. Messages go to stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            f.code()
        }
    }
}

fn load_config(common: &Common, subcommand: &str) -> std::result::Result<ExperimentConfig, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config(format!("`{subcommand}` needs --config <PATH>")))?;
    let mut cfg = ExperimentConfig::load(path)?;
    apply_overrides(&mut cfg, common);
    if cfg.protocol.name() != subcommand {
        return Err(Failure::Config(format!(
            "config `{}` describes protocol `{}`, not `{subcommand}`",
            path.display(),
            cfg.protocol.name()
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, common: &Common) {
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output = Some(o.clone());
    }
}

/// Config for subcommands that also accept plain flags.
fn config_or(
    common: &Common,
    subcommand: &str,
    protocol: impl FnOnce() -> std::result::Result<Protocol, Failure>,
) -> std::result::Result<ExperimentConfig, Failure> {
    if common.config.is_some() {
        return load_config(common, subcommand);
    }
    let mut cfg = ExperimentConfig {
        seed: 0,
        output: None,
        data: Default::default(),
        network: Default::default(),
        protocol: protocol()?,
    };
    apply_overrides(&mut cfg, common);
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(command: Command) -> std::result::Result<(), Failure> {
    let cfg = match command {
        Command::Train(c) => load_config(&c, "train")?,
        Command::StageSgd(c) => load_config(&c, "stage-sgd")?,
        Command::BranchBgd(c) => load_config(&c, "branch-bgd")?,
        Command::Flatness(c) => load_config(&c, "flatness")?,
        Command::Interpolate(c) => load_config(&c, "interpolate")?,
        Command::Sweep(c) => load_config(&c, "sweep")?,
        Command::Mds {
            common,
            input,
            layers,
            metric,
        } => config_or(&common, "mds", || {
            let input = input.ok_or_else(|| Failure::Config("`mds` needs --in <DIR> or --config".into()))?;
            let metric = match metric.as_deref() {
                None | Some("cosine") | Some("one-minus-cosine") => Metric::OneMinusCosine,
                Some("euclidean") => Metric::Euclidean,
                Some(m) => return Err(Failure::Config(format!("unknown metric `{m}`"))),
            };
            Ok(Protocol::Mds(MdsParams { input, layers, metric }))
        })?,
        Command::Algebra { common, summary } => {
            if common.config.is_none() && common.out.is_none() {
                // Summary to stdout only, nothing written.
                let args = summary.ok_or_else(|| {
                    Failure::Config("`algebra` needs --summary l=.. d=.. n=.. k=.. or --config".into())
                })?;
                let s = summarize_args(&args)?;
                let out = summarize(s.l, s.d, s.n, s.k).map_err(|e| Failure::Config(e.to_string()))?;
                println!("{}", serde_json::to_string_pretty(&out).map_err(Error::from)?);
                return Ok(());
            }
            config_or(&common, "algebra", || {
                let summary = summary.as_deref().map(summarize_args).transpose()?;
                Ok(Protocol::Algebra(AlgebraParams { summary, system: None }))
            })?
        }
        Command::Report { common, input } => config_or(&common, "report", || {
            let input = input.ok_or_else(|| Failure::Config("`report` needs --in <DIR> or --config".into()))?;
            Ok(Protocol::Report { input })
        })?,
    };
    let out = execute(&cfg)?;
    if let Protocol::Report { .. } = cfg.protocol {
        print_report(&out.join("report.csv"))?;
    }
    println!("results written to {}", out.display());
    Ok(())
}

fn print_report(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for line in text.lines().skip(1) {
        let r: Vec<&str> = line.split(',').collect();
        println!("{:>12} {:>5} epoch {:>6}  error {:>7}%  loss {}", r[1], r[4], r[3], r[5], r[6]);
    }
    Ok(())
}

fn summarize_args(args: &[String]) -> std::result::Result<SummaryArgs, Failure> {
    let mut vals = [None; 4];
    for a in args {
        let (k, v) = a
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("expected key=value, got `{a}`")))?;
        let v: u64 = v
            .parse()
            .map_err(|_| Failure::Config(format!("`{a}`: value is not a non-negative integer")))?;
        let slot = match k {
            "l" => 0,
            "d" => 1,
            "n" | "N" => 2,
            "k" | "K" => 3,
            _ => return Err(Failure::Config(format!("unknown summary key `{k}`"))),
        };
        vals[slot] = Some(v);
    }
    match vals {
        [Some(l), Some(d), Some(n), Some(k)] => Ok(SummaryArgs { l, d, n, k }),
        _ => Err(Failure::Config("summary needs all of l, d, n, k".into())),
    }
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.protocol.name()))
}

/// Runs a validated config and writes its result directory. Returns the
/// directory path.
pub fn execute(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let root = output_dir(cfg);
    let mut dir = ResultDir::create(&root)?;
    let canonical = cfg.canonical_json()?;
    dir.write_bytes("config.json", format!("{canonical}\n").as_bytes())?;
    match &cfg.protocol {
        Protocol::Train { optimizer } => {
            let bench = cfg.bench()?;
            let mut opt = optimizer.clone();
            opt.seed = cfg.seed;
            let mut init = bench.init.clone();
            init.meta.run_id = "main".into();
            init.meta.protocol = "train".into();
            let t = train(&bench.spec, &init, &bench.train, bench.test.as_ref(), &opt)?;
            write_curves(&mut dir, &[&t])?;
            write_snapshots(&mut dir, &[&t])?;
            dir.write_json("network.json", &bench.spec)?;
            if !bench.fitted.is_empty() {
                dir.write_json("activations.json", &bench.fitted)?;
            }
        }
        Protocol::StageSgd(p) => {
            let bench = cfg.bench()?;
            let mut p = p.clone();
            p.seed = cfg.seed;
            let runs = staged_parallel_sgd(&bench.spec, &bench.init, &bench.train, bench.test.as_ref(), &p)?;
            let refs: Vec<&Trajectory> = runs.iter().collect();
            write_curves(&mut dir, &refs)?;
            write_snapshots(&mut dir, &refs)?;
        }
        Protocol::BranchBgd(p) => {
            let bench = cfg.bench()?;
            let mut p = p.clone();
            p.seed = cfg.seed;
            let res = bgd_branching(&bench.spec, &bench.init, &bench.train, bench.test.as_ref(), &p)?;
            let mut refs = vec![&res.main];
            refs.extend(res.branches.iter().map(|b| &b.trajectory));
            write_curves(&mut dir, &refs)?;
            write_snapshots(&mut dir, &refs)?;
            let rows: Vec<Vec<String>> = res
                .branches
                .iter()
                .flat_map(|b| {
                    b.interpolation.iter().flat_map(move |row| {
                        row.points.iter().map(move |pt| {
                            interp_row("branch-bgd", &b.trajectory.id, row.epoch, pt, b.branch_epoch, b.c)
                        })
                    })
                })
                .collect();
            dir.write_csv("interpolation.csv", &INTERP_HEADER, &rows)?;
        }
        Protocol::Flatness(p) => run_flatness(cfg, p, &mut dir)?,
        Protocol::Interpolate { a, b, ratios } => {
            let bench = cfg.bench()?;
            let wa = load_snapshot_for(a, &bench.spec)?;
            let wb = load_snapshot_for(b, &bench.spec)?;
            let pts = interpolate(&bench.spec, &wa, &wb, ratios, &bench.train)?;
            let rows: Vec<Vec<String>> = pts
                .iter()
                .map(|pt| interp_row("interpolate", "a-b", wb.meta.epoch, pt, 0, 0.0))
                .collect();
            dir.write_csv("interpolation.csv", &INTERP_HEADER, &rows)?;
        }
        Protocol::Mds(p) => run_mds(p, &mut dir)?,
        Protocol::Algebra(p) => run_algebra(p, &mut dir)?,
        Protocol::Sweep(p) => {
            let bench = cfg.bench()?;
            let mut p = p.clone();
            p.seed = cfg.seed;
            let rows = generalization_sweep(&bench, &p)?;
            let csv: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.width_multiplier.to_string(),
                        r.train_size.to_string(),
                        r.parameters.to_string(),
                        r.random_labels.to_string(),
                        r.epochs_run.to_string(),
                        r.train_error_pct.to_string(),
                        r.val_error_pct.to_string(),
                    ]
                })
                .collect();
            dir.write_csv(
                "sweep.csv",
                &[
                    "width_multiplier",
                    "train_size",
                    "parameters",
                    "random_labels",
                    "epochs_run",
                    "train_error_pct",
                    "val_error_pct",
                ],
                &csv,
            )?;
        }
        Protocol::Report { input } => run_report(input, &mut dir)?,
    }
    dir.finish(&canonical)?;
    Ok(root)
}

pub const CURVE_HEADER: [&str; 8] = ["protocol", "run", "stage", "epoch", "split", "error_pct", "loss", "lr"];
pub const INTERP_HEADER: [&str; 10] = [
    "protocol", "run", "stage", "epoch", "split", "error_pct", "loss", "ratio", "branch_epoch", "c",
];

fn interp_row(protocol: &str, run: &str, epoch: u64, pt: &InterpPoint, branch_epoch: u64, c: f64) -> Vec<String> {
    vec![
        protocol.into(),
        run.into(),
        "0".into(),
        epoch.to_string(),
        "train".into(),
        pt.error_pct.to_string(),
        pt.loss.to_string(),
        pt.ratio.to_string(),
        branch_epoch.to_string(),
        c.to_string(),
    ]
}

fn write_curves(dir: &mut ResultDir, runs: &[&Trajectory]) -> Result<()> {
    let mut rows = Vec::new();
    for t in runs {
        for r in &t.records {
            let mut splits = vec![("train", r.train)];
            if let Some(test) = r.test {
                splits.push(("test", test));
            }
            for (split, e) in splits {
                rows.push(vec![
                    t.protocol.clone(),
                    t.id.clone(),
                    t.stage.to_string(),
                    r.epoch.to_string(),
                    split.into(),
                    e.error_pct.to_string(),
                    e.loss.to_string(),
                    r.lr.to_string(),
                ]);
            }
        }
    }
    dir.write_csv("curves.csv", &CURVE_HEADER, &rows)?;
    Ok(())
}

fn write_snapshots(dir: &mut ResultDir, runs: &[&Trajectory]) -> Result<()> {
    for t in runs {
        for s in &t.snapshots {
            dir.write_snapshot(&format!("snapshots/{}/e{:06}.rllsnap", t.id, s.meta.epoch), s)?;
        }
    }
    Ok(())
}

fn write_similarity(dir: &mut ResultDir, rel: &str, s: &SimilarityMatrices) -> Result<()> {
    let mut rows = Vec::new();
    for (name, m) in [("p_cc", &s.p_cc), ("p_ii", &s.p_ii)] {
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                rows.push(vec![
                    name.to_string(),
                    s.models[i].clone(),
                    s.models[j].clone(),
                    v.map(|v| v.to_string()).unwrap_or_default(),
                ]);
            }
        }
    }
    dir.write_csv(rel, &["matrix", "row", "col", "value"], &rows)?;
    Ok(())
}

fn run_flatness(cfg: &ExperimentConfig, p: &FlatnessParams, dir: &mut ResultDir) -> Result<()> {
    let bench = cfg.bench()?;
    let mut runs: Vec<Trajectory> = Vec::new();
    let model = match &p.model {
        Some(path) => load_snapshot_for(path, &bench.spec)?,
        None => {
            let mut opt = OptimizerConfig::bgd(p.pretrain_epochs, cfg.seed);
            opt.lr = p.lr;
            opt.snapshot_every = p.pretrain_epochs.max(1);
            opt.stop_at_zero_error = true;
            let mut init = bench.init.clone();
            init.meta.run_id = "pretrain".into();
            init.meta.protocol = "flatness".into();
            let pre = train(&bench.spec, &init, &bench.train, bench.test.as_ref(), &opt)?;
            if pre.last_record().train.error_pct > 0.0 {
                log::warn!("pretraining ended at {}% training error", pre.last_record().train.error_pct);
            }
            opt.stop_at_zero_error = false;
            opt.epochs = p.margin_epochs;
            let mut from = pre.last_snapshot().clone();
            from.meta.run_id = "margin".into();
            let margin = train(&bench.spec, &from, &bench.train, bench.test.as_ref(), &opt)?;
            runs.push(pre);
            runs.push(margin);
            runs.last().expect("margin run").last_snapshot().clone()
        }
    };
    let mut start = model.clone();
    start.meta.lr = None;
    let mut probe = p.probe.clone();
    probe.seed = cfg.seed;
    let res = flatness_probe(&bench.spec, &start, &bench.train, bench.test.as_ref(), &probe)?;
    runs.extend(res.trajectories.iter().cloned());
    let refs: Vec<&Trajectory> = runs.iter().collect();
    write_curves(dir, &refs)?;
    write_snapshots(dir, &refs)?;
    write_similarity(dir, "similarity.csv", &res.similarity)?;
    if let Some(v) = &p.volume {
        let pts = sublevel_volume_probe(&bench.spec, &model, &bench.train, &v.radii, v.threshold, v.samples, cfg.seed)?;
        let rows: Vec<Vec<String>> = pts
            .iter()
            .map(|q| {
                vec![
                    q.radius.to_string(),
                    q.samples.to_string(),
                    q.accepted.to_string(),
                    q.fraction.to_string(),
                ]
            })
            .collect();
        dir.write_csv("volume.csv", &["radius", "samples", "accepted", "fraction"], &rows)?;
    }
    Ok(())
}

/// `.rllsnap` files under `root`, sorted by path.
pub fn snapshot_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "rllsnap") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn run_mds(p: &MdsParams, dir: &mut ResultDir) -> Result<()> {
    let files = snapshot_files(&p.input)?;
    let snaps = files.iter().map(|f| load_snapshot(f)).collect::<Result<Vec<WeightSnapshot>>>()?;
    let selection = if p.layers.is_empty() {
        LayerSelection::All
    } else {
        LayerSelection::Numbered(p.layers.clone())
    };
    let d = dissimilarity_matrix(&snaps, &selection, p.metric)?;
    let emb = classical_mds(&d, 2)?;
    let rows: Vec<Vec<String>> = emb
        .points
        .iter()
        .zip(&snaps)
        .enumerate()
        .map(|(i, (pt, s))| {
            vec![
                i.to_string(),
                pt[0].to_string(),
                pt[1].to_string(),
                s.meta.epoch.to_string(),
                s.meta.run_id.clone(),
                s.meta.stage.to_string(),
            ]
        })
        .collect();
    dir.write_csv("mds.csv", &["point_id", "x", "y", "epoch", "run", "stage"], &rows)?;
    let mut drows = Vec::new();
    for i in 0..d.n {
        for j in 0..d.n {
            drows.push(vec![
                i.to_string(),
                j.to_string(),
                d.get(i, j).map(|v| v.to_string()).unwrap_or_default(),
            ]);
        }
    }
    dir.write_csv("dissimilarity.csv", &["row", "col", "value"], &drows)?;
    #[derive(Serialize)]
    struct Spectrum<'a> {
        eigenvalues: &'a [f64],
        strain: f64,
    }
    dir.write_json(
        "embedding.json",
        &Spectrum {
            eigenvalues: &emb.eigenvalues,
            strain: emb.strain,
        },
    )?;
    Ok(())
}

fn micro_net(m: &MicroSystem) -> TinyPolyNet {
    match m.net {
        MicroNet::SingleUnit => TinyPolyNet::single_unit(&m.activation, false),
        MicroNet::SingleUnitBias => TinyPolyNet::single_unit(&m.activation, true),
        MicroNet::ThreeNode => TinyPolyNet::three_node(&m.activation),
    }
}

fn run_algebra(p: &AlgebraParams, dir: &mut ResultDir) -> Result<()> {
    if p.summary.is_none() && p.system.is_none() {
        return Err(Error::Config("algebra config needs `summary` or `system`".into()));
    }
    if let Some(s) = p.summary {
        dir.write_json("summary.json", &summarize(s.l, s.d, s.n, s.k)?)?;
    }
    if let Some(m) = &p.system {
        let net = micro_net(m);
        let zero = build_zero_system(&net, &m.data)?;
        let critical = build_critical_system(&net, &m.data)?;
        #[derive(Serialize)]
        struct Solved {
            system: PolySystem,
            degrees: Vec<u32>,
            first_layer_degrees: Vec<u32>,
            bezout_product: String,
            zeros: Option<crate::algebra::ZeroSearch>,
            degeneracy: Vec<crate::algebra::Degeneracy>,
            consistency: crate::algebra::Consistency,
        }
        let solve = |sys: PolySystem, seed: u64| -> Result<Solved> {
            let zeros = if sys.num_vars() <= crate::algebra::solve::MAX_GRID_VARS {
                Some(find_real_zeros(&sys, &m.search)?)
            } else {
                None
            };
            let degeneracy = zeros
                .iter()
                .flat_map(|z| z.zeros.iter())
                .map(|z| degeneracy_check(&sys, z))
                .collect::<Result<Vec<_>>>()?;
            let consistency = consistency_probe(&sys, m.consistency_starts, m.search.radius, seed)?;
            Ok(Solved {
                degrees: sys.degrees(),
                first_layer_degrees: sys.first_layer_degrees(),
                bezout_product: sys.bezout_product().to_string(),
                zeros,
                degeneracy,
                consistency,
                system: sys,
            })
        };
        dir.write_json("zero_system.json", &solve(zero, 1)?)?;
        dir.write_json("critical_system.json", &solve(critical, 2)?)?;
    }
    Ok(())
}

fn run_report(input: &Path, dir: &mut ResultDir) -> Result<()> {
    let manifest = verify_manifest(input)?;
    let mut rows = Vec::new();
    for entry in manifest.files.iter().filter(|e| e.path == "curves.csv") {
        let path = input.join(&entry.path);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut last: Vec<(String, Vec<String>)> = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let f: Vec<String> = line.split(',').map(str::to_string).collect();
            if f.len() != CURVE_HEADER.len() {
                return Err(Error::Parse {
                    path: path.clone(),
                    offset: lineno as u64,
                    detail: format!("expected {} fields", CURVE_HEADER.len()),
                });
            }
            let key = format!("{}/{}", f[1], f[4]);
            match last.iter_mut().find(|(k, _)| *k == key) {
                Some(slot) => slot.1 = f,
                None => last.push((key, f)),
            }
        }
        rows.extend(last.into_iter().map(|(_, f)| f));
    }
    log::info!("{} files verified in {}", manifest.files.len(), input.join(MANIFEST).display());
    dir.write_csv("report.csv", &CURVE_HEADER, &rows)?;
    Ok(())
}
