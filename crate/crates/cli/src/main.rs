//! `jigsaw`: synthesize, train, assemble and evaluate fractured objects.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use jigsaw::align::{assemble, assemble_with_oracle};
use jigsaw::config::RunConfig;
use jigsaw::dataio::{
    dataset_files, export_ply, load_object, load_poses, read_dataset, save_poses, write_dataset,
};
use jigsaw::metrics::{evaluate_all, evaluate_network, evaluate_oracle, EvalReport};
use jigsaw::net::Network;
use jigsaw::synth::{generate_dataset, PointCloudObject};
use jigsaw::train::{train, FINAL_CHECKPOINT};

#[derive(Parser, Debug)]
#[command(name = "jigsaw", version, about = "Multi-piece fracture assembly from point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
struct Common {
    /// `key = value` config file (applied after defaults, before overrides)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable (`--set train.lr=5e-4`)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Sets every seed (synthesis, training, RANSAC)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-object parallel stages
    #[arg(long, default_value_t = 1, global = true)]
    jobs: usize,
    /// Further overrides as `--key value` pairs
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true, global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Piece-count range, `A..B` inclusive, or a single number
        #[arg(long)]
        pieces: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the network on a dataset directory
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and train.csv
        #[arg(long)]
        out: PathBuf,
        /// Start from this checkpoint instead of a fresh initialization
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Recover piece poses for one object file or every object of a dataset
    Assemble {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Object file or dataset directory
        #[arg(long = "in")]
        input: PathBuf,
        /// Pose file (single object) or directory (dataset)
        #[arg(long)]
        out: PathBuf,
        /// Also write the assembled cloud as PLY (single object only)
        #[arg(long)]
        ply: Option<PathBuf>,
        /// Use ground-truth correspondences instead of the network
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Score poses on a dataset and write report/summary CSVs
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run the full pipeline with this checkpoint
        #[arg(long, group = "source")]
        ckpt: Option<PathBuf>,
        /// Directory of pose files named `<object stem>.txt`
        #[arg(long, group = "source")]
        poses: Option<PathBuf>,
        /// Score the ground-truth poses themselves
        #[arg(long, group = "source")]
        gt: bool,
        /// Align from ground-truth correspondences
        #[arg(long, group = "source")]
        oracle: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Write an object as colored PLY
    ExportPly {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Apply these poses (default: as stored, i.e. scattered)
        #[arg(long, group = "pose_source")]
        poses: Option<PathBuf>,
        /// Apply the ground-truth poses (assembled view)
        #[arg(long, group = "pose_source")]
        gt: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in invariant checks
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

/// A usage problem (exit code 1), as opposed to a runtime failure (exit code 2).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

impl Common {
    /// Defaults, then the config file, then `--set`, trailing `--key value`
    /// pairs and `--seed`.
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            if !path.exists() {
                bail!("config file {} does not exist", path.display());
            }
            cfg.apply_file(path).map_err(|e| usage(e.to_string()))?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k, v).map_err(|e| usage(e.to_string()))?;
        }
        for (k, v) in parse_overrides(&self.overrides)? {
            cfg.set(&k, &v).map_err(|e| usage(e.to_string()))?;
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string()).map_err(|e| usage(e.to_string()))?;
        }
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// `--key value` or `--key=value` pairs.
fn parse_overrides(args: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(key) = a.strip_prefix("--") else {
            return Err(usage(format!("unexpected argument `{a}`")));
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let v = it.next().ok_or_else(|| usage(format!("missing value for --{key}")))?;
            out.push((key.to_string(), v.clone()));
        }
    }
    Ok(out)
}

fn parse_pieces(s: &str) -> anyhow::Result<(usize, usize)> {
    let bad = || usage(format!("--pieces expects `A..B` or `N`, got `{s}`"));
    match s.split_once("..") {
        Some((a, b)) => {
            let b = b.strip_prefix('=').unwrap_or(b);
            Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
        }
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

fn load_network(path: &Path) -> anyhow::Result<Network> {
    if !path.exists() {
        bail!("checkpoint {} does not exist", path.display());
    }
    Network::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn need_exists(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn poses_for(obj: &PointCloudObject, ckpt: Option<&Network>, cfg: &RunConfig, oracle: bool) -> anyhow::Result<Vec<jigsaw::RigidTransform>> {
    if oracle {
        return Ok(assemble_with_oracle(obj, &cfg.align)?.poses);
    }
    let net = ckpt.ok_or_else(|| usage("assemble needs --ckpt (or --oracle)"))?;
    let out = assemble(obj, net, &cfg.align)?;
    let unaligned: Vec<usize> = (0..obj.n_pieces).filter(|&i| !out.alignment.aligned[i]).collect();
    if !unaligned.is_empty() {
        log::warn!("pieces without a pose estimate (left at identity): {unaligned:?}");
    }
    Ok(out.alignment.poses)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = match &cli.command {
        Command::Synth { common, .. }
        | Command::Train { common, .. }
        | Command::Assemble { common, .. }
        | Command::Eval { common, .. }
        | Command::ExportPly { common, .. }
        | Command::Selftest { common } => common.clone(),
    };
    if common.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(common.jobs).build_global().ok();
    let mut cfg = common.resolve()?;

    match cli.command {
        Command::Synth { out, count, pieces, .. } => {
            if let Some(p) = pieces {
                let (a, b) = parse_pieces(&p)?;
                cfg.synth.min_pieces = a;
                cfg.synth.max_pieces = b;
                cfg.synth.validate().map_err(|e| usage(e.to_string()))?;
            }
            let objects = generate_dataset(&cfg.synth, count)?;
            write_dataset(&out, &cfg.synth, &objects)?;
            log::info!("wrote {count} objects to {}", out.display());
        }
        Command::Train { data, out, init, .. } => {
            need_exists(&data, "dataset directory")?;
            let objects = read_dataset(&data)?;
            let net = match init {
                Some(p) => load_network(&p)?,
                None => Network::new(cfg.net.clone(), cfg.train.seed)?,
            };
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.txt"), cfg.to_text())?;
            let (_, history) = train(net, &objects, cfg.train.clone(), Some(&out))?;
            if let Some(last) = history.last() {
                log::info!("final epoch {}: total loss {:.4}", last.epoch, last.loss.total);
            }
            log::info!("checkpoint written to {}", out.join(FINAL_CHECKPOINT).display());
        }
        Command::Assemble { ckpt, input, out, ply, oracle, .. } => {
            need_exists(&input, "input")?;
            let net = match (&ckpt, oracle) {
                (Some(p), false) => Some(load_network(p)?),
                (None, false) => return Err(usage("assemble needs --ckpt (or --oracle)")),
                _ => None,
            };
            if input.is_dir() {
                if ply.is_some() {
                    return Err(usage("--ply is only supported for a single object"));
                }
                std::fs::create_dir_all(&out)?;
                for file in dataset_files(&input)? {
                    let obj = load_object(&file)?;
                    let poses = poses_for(&obj, net.as_ref(), &cfg, oracle)?;
                    save_poses(&out.join(format!("{}.txt", stem(&file))), &poses)?;
                }
            } else {
                let obj = load_object(&input)?;
                let poses = poses_for(&obj, net.as_ref(), &cfg, oracle)?;
                save_poses(&out, &poses)?;
                if let Some(p) = ply {
                    export_ply(&obj, &poses, &p)?;
                }
            }
        }
        Command::Eval { data, out, ckpt, poses, gt, oracle, .. } => {
            need_exists(&data, "dataset directory")?;
            let objects = read_dataset(&data)?;
            let report: EvalReport = if let Some(p) = ckpt {
                evaluate_network(&objects, &load_network(&p)?, &cfg.align)?
            } else if let Some(dir) = poses {
                need_exists(&dir, "pose directory")?;
                let sets = dataset_files(&data)?
                    .iter()
                    .map(|f| {
                        let p = dir.join(format!("{}.txt", stem(f)));
                        need_exists(&p, "pose file")?;
                        Ok(load_poses(&p)?)
                    })
                    .collect::<anyhow::Result<Vec<_>>>()?;
                evaluate_all(&objects, &sets)?
            } else if gt {
                let sets: Vec<_> = objects.iter().map(|o| o.gt_pose.clone()).collect();
                evaluate_all(&objects, &sets)?
            } else if oracle {
                evaluate_oracle(&objects, &cfg.align)?
            } else {
                return Err(usage("eval needs one of --ckpt, --poses, --gt, --oracle"));
            };
            report.save(&out)?;
            let s = &report.overall;
            println!(
                "objects {}  MAE(R) {:.3}  RMSE(R) {:.3}  MAE(T) {:.5}  RMSE(T) {:.5}  PA {:.3}",
                s.n_objects, s.mae_r, s.rmse_r, s.mae_t, s.rmse_t, s.pa
            );
        }
        Command::ExportPly { input, out, poses, gt, .. } => {
            need_exists(&input, "object file")?;
            let obj = load_object(&input)?;
            let tf = if let Some(p) = poses {
                need_exists(&p, "pose file")?;
                load_poses(&p)?
            } else if gt {
                obj.gt_pose.clone()
            } else {
                vec![jigsaw::RigidTransform::identity(); obj.n_pieces]
            };
            export_ply(&obj, &tf, &out)?;
        }
        Command::Selftest { .. } => {
            let checks = jigsaw::selftest::run();
            let failed = checks.iter().filter(|c| c.outcome.is_err()).count();
            for c in &checks {
                match &c.outcome {
                    Ok(()) => println!("PASS  {}", c.name),
                    Err(e) => println!("FAIL  {}: {e}", c.name),
                }
            }
            if failed > 0 {
                bail!("{failed} of {} checks failed", checks.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let env = env_logger::Env::new().filter_or("JIGSAW_LOG", "info");
    env_logger::Builder::from_env(env).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
