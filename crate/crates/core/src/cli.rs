//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

use crate::bundle::{
    checkpoint_config, config_from_text, fingerprint, prepare_from_files, read_bundle, write_bundle, RunManifest,
};
use crate::config::{Preset, TrainConfig, UserEncoderKind};
use crate::dataset::{evaluate, fit, Dataset, ModelInputs};
use crate::error::{Error, Result};
use crate::eval::{dump_ranked_lists, MetricsReport};
use crate::graph::{read_ripple_cache, write_ripple_cache};
use crate::model::FrozenModel;
use crate::movielens::import_ml100k;
use crate::numeric::ModelParams;
use crate::synthetic::{write_planted, write_uniform, PlantedSpec, UniformSpec};

#[derive(Debug, Parser)]
#[command(name = "kgrec", version, about = "Knowledge-graph-aware sequential recommender")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split interactions and align them with a knowledge graph.
    Prepare(PrepareArgs),
    /// Train a model on a prepared bundle.
    Train(TrainArgs),
    /// Score a checkpoint on the test split.
    Evaluate(EvaluateArgs),
    /// Train and evaluate the recurrent and summed user encoders side by side.
    Ablate(AblateArgs),
    /// Vary d, L, k or n and report AUC for each value.
    Sweep(SweepArgs),
    /// Write a synthetic dataset as token files.
    Synth(SynthArgs),
    /// Convert an unpacked MovieLens-100k directory into token files.
    ImportMl100k(ImportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Hyperparameter preset.
    #[arg(long, value_parser = parse_preset)]
    pub dataset: Option<Preset>,
    /// File of `key = value` settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// `user<TAB>item[<TAB>rating][<TAB>timestamp]` lines.
    #[arg(long)]
    pub interactions: PathBuf,
    /// `head<TAB>relation<TAB>tail` lines.
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every ranked candidate list.
    #[arg(long)]
    pub dump_lists: bool,
    /// Also write the final user and item vectors.
    #[arg(long)]
    pub export_vectors: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Axis {
    D,
    L,
    K,
    N,
}

impl Axis {
    fn key(self) -> &'static str {
        match self {
            Axis::D => "d",
            Axis::L => "levels",
            Axis::K => "k",
            Axis::N => "n",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Axis::D => "d",
            Axis::L => "L",
            Axis::K => "k",
            Axis::N => "n",
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `axis=v1,v2,...`; repeat for several axes. Axes run in the order d, L,
    /// k, n.
    #[arg(long = "grid", value_name = "AXIS=VALUES", required = true)]
    pub grids: Vec<String>,
    /// Carry the best value of each axis into the next one.
    #[arg(long)]
    pub chained: bool,
    /// Parallel training runs per axis.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Two item clusters encoded in the graph.
    Planted,
    /// Uniformly random interactions and edges.
    Uniform,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Directory holding `u.data` and `u.item`.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Builds the effective configuration: `base`, then the preset, the config
/// file, `--set` assignments and finally `--seed`.
pub fn resolve_config(base: TrainConfig, common: &CommonArgs) -> Result<TrainConfig> {
    let mut cfg = base;
    if let Some(p) = common.dataset {
        let seed = cfg.seed;
        cfg = TrainConfig::preset(p);
        cfg.seed = seed;
    }
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<PathBuf> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_owned())
}

/// Ripple sets from `bundle/ripple.cache` when it matches, else freshly
/// built (and cached when the bundle is writable).
fn model_inputs(bundle: &Path, ds: &Dataset, cfg: &TrainConfig) -> Result<ModelInputs> {
    let cache = bundle.join("ripple.cache");
    let ripple_cfg = cfg.ripple();
    if let Some(ripples) = read_ripple_cache(&cache, &ripple_cfg, ds.num_items)? {
        return ModelInputs::with_ripples(ds, cfg, ripples);
    }
    let inputs = ModelInputs::build(ds, cfg)?;
    if let Err(e) = write_ripple_cache(&cache, &ripple_cfg, &inputs.ripples) {
        warn!("could not cache ripple sets: {e}");
    }
    Ok(inputs)
}

fn prepare(args: &PrepareArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = resolve_config(TrainConfig::default(), &args.common)?;
    let ds = prepare_from_files(&args.interactions, &args.kg, &cfg)?;
    let meta = write_bundle(&args.out, &ds, &cfg)?;
    let s = meta.summary;
    println!(
        "users {} items {} entities {} relations {} edges {} interactions {} (train {} valid {} test {})",
        s.users, s.items, s.entities, s.relations, s.edges, s.interactions, s.train, s.valid, s.test
    );
    println!("bundle {}", meta.sha256);
    let mut manifest = RunManifest::new("prepare", &cfg);
    manifest.add_input(&args.interactions)?;
    manifest.add_input(&args.kg)?;
    manifest.artifacts.push(args.out.join("bundle.json"));
    manifest.seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    Ok(())
}

fn load_bundle(dir: &Path, common: &CommonArgs) -> Result<(Dataset, TrainConfig, String)> {
    let (ds, meta) = read_bundle(dir)?;
    let cfg = resolve_config(config_from_text(&meta.config)?, common)?;
    Ok((ds, cfg, meta.sha256))
}

/// Training exit status: `Err` for failures, `Ok(true)` when training
/// stopped on divergence.
fn train(args: &TrainArgs) -> Result<bool> {
    let start = Instant::now();
    let (ds, cfg, hash) = load_bundle(&args.bundle, &args.common)?;
    create_dir(&args.out)?;
    let inputs = model_inputs(&args.bundle, &ds, &cfg)?;
    let outcome = fit(&ds, &inputs, &cfg)?;
    let ckpt = args.out.join("model.ckpt");
    outcome.params.save(&ckpt, &fingerprint(&cfg))?;
    let mut manifest = RunManifest::new("train", &cfg);
    manifest.add_input(&args.bundle.join("bundle.json"))?;
    manifest.artifacts.push(ckpt.clone());
    manifest.artifacts.push(write_file(&args.out.join("model.ckpt.config"), &cfg.to_text())?);
    manifest.artifacts.push(write_file(&args.out.join("epochs.csv"), &outcome.epochs_csv())?);
    manifest.seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    if let Some(best) = outcome.best_epoch {
        let auc = outcome.history[best - 1].val_auc;
        println!(
            "best epoch {best}{}",
            auc.map(|a| format!(" validation AUC {a:.4}")).unwrap_or_default()
        );
    }
    info!("bundle {hash}");
    if let Some(msg) = &outcome.diverged {
        eprintln!("training diverged ({msg}); saved the best parameters seen");
        return Ok(true);
    }
    Ok(false)
}

fn write_metrics(dir: &Path, report: &MetricsReport) -> Result<Vec<PathBuf>> {
    Ok(vec![
        write_file(&dir.join("metrics.csv"), &report.to_csv())?,
        write_file(&dir.join("metrics.json"), &(serde_json::to_string_pretty(report)? + "\n"))?,
    ])
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let start = Instant::now();
    let (ds, meta) = read_bundle(&args.bundle)?;
    let base = match checkpoint_config(&args.checkpoint)? {
        Some(c) => c,
        None => config_from_text(&meta.config)?,
    };
    let cfg = resolve_config(base, &args.common)?;
    let (params, fp) = ModelParams::load(&args.checkpoint)?;
    if fp != fingerprint(&cfg) {
        return Err(Error::Config(format!(
            "checkpoint was trained with {fp:?}, configuration gives {:?}",
            fingerprint(&cfg)
        )));
    }
    if params.dims != ds.dims(&cfg) {
        return Err(Error::Config("checkpoint dimensions do not match the bundle".into()));
    }
    create_dir(&args.out)?;
    let inputs = model_inputs(&args.bundle, &ds, &cfg)?;
    let (report, ranked) = evaluate(&ds, &inputs, &params, &cfg)?;
    let mut manifest = RunManifest::new("evaluate", &cfg);
    manifest.add_input(&args.bundle.join("bundle.json"))?;
    manifest.add_input(&args.checkpoint)?;
    manifest.artifacts.extend(write_metrics(&args.out, &report)?);
    if args.dump_lists {
        manifest
            .artifacts
            .push(write_file(&args.out.join("ranked_lists.tsv"), &dump_ranked_lists(&ranked))?);
    }
    if args.export_vectors {
        let frozen = FrozenModel::build(&params, inputs.context())?;
        manifest
            .artifacts
            .push(write_file(&args.out.join("item_vectors.tsv"), &frozen.export_items())?);
        manifest
            .artifacts
            .push(write_file(&args.out.join("user_vectors.tsv"), &frozen.export_users())?);
    }
    manifest.seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    print!("{}", report.to_csv());
    Ok(())
}

/// `(sum - rnn) / rnn` as a signed percentage with two decimals.
pub fn relative_change(rnn: f64, sum: f64) -> String {
    format!("{:.2}%", (sum - rnn) / rnn * 100.0)
}

fn ablate(args: &AblateArgs) -> Result<()> {
    let start = Instant::now();
    let (ds, cfg, hash) = load_bundle(&args.bundle, &args.common)?;
    create_dir(&args.out)?;
    let mut aucs = Vec::new();
    for kind in [UserEncoderKind::Rnn, UserEncoderKind::Sum] {
        let cfg = TrainConfig {
            user_encoder: kind,
            ..cfg.clone()
        };
        let inputs = model_inputs(&args.bundle, &ds, &cfg)?;
        let outcome = fit(&ds, &inputs, &cfg)?;
        if let Some(msg) = outcome.diverged {
            return Err(Error::Numeric(msg));
        }
        let (report, _) = evaluate(&ds, &inputs, &outcome.params, &cfg)?;
        aucs.push(report.auc);
    }
    let (rnn, sum) = (aucs[0], aucs[1]);
    let csv = format!(
        "variant,auc,bundle_sha256\nrnn,{rnn},{hash}\nsum,{sum},{hash}\n"
    );
    let mut manifest = RunManifest::new("ablate", &cfg);
    manifest.add_input(&args.bundle.join("bundle.json"))?;
    manifest.artifacts.push(write_file(&args.out.join("ablation.csv"), &csv)?);
    manifest.seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    println!("rnn {rnn:.4}  sum {sum:.4}({})", relative_change(rnn, sum));
    Ok(())
}

fn parse_grid(s: &str) -> Result<(Axis, Vec<usize>)> {
    let (axis, values) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--grid expects AXIS=V1,V2, got {s:?}")))?;
    let axis = match axis.trim() {
        "d" => Axis::D,
        "L" | "l" | "levels" => Axis::L,
        "k" => Axis::K,
        "n" => Axis::N,
        other => return Err(Error::Config(format!("unknown sweep axis {other:?}"))),
    };
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("invalid sweep value {v:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::Config("empty sweep value list".into()));
    }
    Ok((axis, values))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: usize,
    pub val_auc: Option<f64>,
    pub test_auc: f64,
    pub seconds: f64,
}

fn sweep_point(ds: &Dataset, bundle: &Path, cfg: &TrainConfig) -> Result<(Option<f64>, f64)> {
    let inputs = model_inputs(bundle, ds, cfg)?;
    let outcome = fit(ds, &inputs, cfg)?;
    let val = outcome.best_epoch.and_then(|e| outcome.history[e - 1].val_auc);
    let (report, _) = evaluate(ds, &inputs, &outcome.params, cfg)?;
    Ok((val, report.auc))
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let start = Instant::now();
    let (ds, base, _) = load_bundle(&args.bundle, &args.common)?;
    create_dir(&args.out)?;
    let mut grids = args.grids.iter().map(|g| parse_grid(g)).collect::<Result<Vec<_>>>()?;
    grids.sort_by_key(|g| g.0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut cfg = base.clone();
    let mut rows = Vec::new();
    for (axis, values) in grids {
        let point_cfgs = values
            .iter()
            .map(|v| {
                let mut c = if args.chained { cfg.clone() } else { base.clone() };
                c.set(axis.key(), &v.to_string())?;
                if axis == Axis::D {
                    c.d_h = *v;
                }
                c.validate()?;
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        let results: Vec<Result<(Option<f64>, f64, f64)>> = pool.install(|| {
            point_cfgs
                .par_iter()
                .map(|c| {
                    let t = Instant::now();
                    let (val, test) = sweep_point(&ds, &args.bundle, c)?;
                    Ok((val, test, t.elapsed().as_secs_f64()))
                })
                .collect()
        });
        let mut best: Option<(f64, usize)> = None;
        for ((v, c), r) in values.iter().zip(&point_cfgs).zip(results) {
            let (val_auc, test_auc, seconds) = r?;
            println!("{} = {v}: AUC {test_auc:.4}", axis.label());
            let score = val_auc.unwrap_or(test_auc);
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, *v));
                if args.chained {
                    cfg = c.clone();
                }
            }
            rows.push(SweepRow {
                axis: axis.label(),
                value: *v,
                val_auc,
                test_auc,
                seconds,
            });
        }
        if args.chained {
            if let Some((_, v)) = best {
                info!("keeping {} = {v}", axis.label());
            }
        }
    }
    let mut csv = String::from("axis,value,val_auc,test_auc,seconds\n");
    for r in &rows {
        let val = r.val_auc.map(|a| a.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{},{},{:.3}\n", r.axis, r.value, val, r.test_auc, r.seconds));
    }
    let mut manifest = RunManifest::new("sweep", &base);
    manifest.add_input(&args.bundle.join("bundle.json"))?;
    manifest.artifacts.push(write_file(&args.out.join("sweep.csv"), &csv)?);
    if args.chained {
        manifest
            .artifacts
            .push(write_file(&args.out.join("sweep.best.config"), &cfg.to_text())?);
    }
    manifest.seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let (i, k) = match args.kind {
        SynthKind::Planted => write_planted(
            &args.out,
            &PlantedSpec {
                seed: args.seed,
                ..PlantedSpec::default()
            },
        )?,
        SynthKind::Uniform => write_uniform(
            &args.out,
            &UniformSpec {
                seed: args.seed,
                ..UniformSpec::default()
            },
        )?,
    };
    println!("{}\n{}", i.display(), k.display());
    Ok(())
}

/// Runs one parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Prepare(a) => prepare(a).map(|_| 0),
        Command::Train(a) => train(a).map(|diverged| if diverged { 3 } else { 0 }),
        Command::Evaluate(a) => evaluate_cmd(a).map(|_| 0),
        Command::Ablate(a) => ablate(a).map(|_| 0),
        Command::Sweep(a) => sweep(a).map(|_| 0),
        Command::Synth(a) => synth(a).map(|_| 0),
        Command::ImportMl100k(a) => import_ml100k(&a.dir, &a.out).map(|(i, k)| {
            println!("{}\n{}", i.display(), k.display());
            0
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `std::env::args`, sets up logging and runs.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    run(cli)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("L=1,2").unwrap(), (Axis::L, vec![1, 2]));
        assert!(parse_grid("q=1").is_err());
        assert!(parse_grid("d=").is_err());
    }

    #[test]
    fn relative_change_format() {
        assert_eq!(relative_change(0.8351, 0.7544), "-9.66%");
        assert_eq!(relative_change(0.8544, 0.8059), "-5.68%");
        assert_eq!(relative_change(0.8039, 0.8072), "0.41%");
    }

    #[test]
    fn config_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.conf");
        fs::write(&file, "d = 16\nk = 2\n").unwrap();
        let common = CommonArgs {
            dataset: Some(Preset::Ml),
            config: Some(file),
            overrides: vec!["k=3".into()],
            seed: Some(9),
        };
        let base = TrainConfig {
            seed: 4,
            ..TrainConfig::default()
        };
        let cfg = resolve_config(base, &common).unwrap();
        assert_eq!((cfg.d, cfg.k, cfg.seed), (16, 3, 9));
        assert_eq!(cfg.learning_rate, 0.05);
    }
}
