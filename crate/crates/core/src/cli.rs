//! Command-line front end.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::config::{digest_bytes, LoadedConfig};
use crate::error::{Error, Result};
use crate::flatness::{landscape_grid, top_eigenvalues, write_report, Scaling};
use crate::mask::{PruneMask, PruneMethod};
use crate::model::Network;
use crate::prune::{compare_masks, log_alpha_grid, run, spec_hash, sweep, RunReport, SweepParam};

const AFTER_HELP: &str = "\
Learning rates default to 1e-3 for the recorded pruning phase and 5e-4 for
pre- and post-training. All phases use plain SGD (optionally with momentum in
the pruning phase); adaptive optimizers are not supported, so pre- and
post-training use SGD where an Adam schedule would otherwise be customary.";

#[derive(Debug, Parser)]
#[command(
    name = "causal-prune",
    version,
    about = "Record training trajectories, prune non-causal parameters and measure flatness",
    after_help = AFTER_HELP
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain, prune iteratively and post-train, once per seed.
    Run(RunArgs),
    /// Repeat runs over a list of L1 coefficients, magnitude fractions or schedule lengths.
    Sweep(SweepArgs),
    /// Hessian spectrum or loss landscape of a saved checkpoint.
    Flatness(FlatnessArgs),
    /// Contingency table of two saved masks.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Causal,
    Magnitude,
    None,
}

impl From<Method> for PruneMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Causal => PruneMethod::Causal,
            Method::Magnitude => PruneMethod::Magnitude,
            Method::None => PruneMethod::None,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "causal")]
    pub method: Method,
    /// Output directory (defaults to the config's output_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds overriding the config.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// L1 coefficient overriding `l1_coeff`.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fraction overriding `mag_prune_frac`.
    #[arg(long)]
    pub mag_frac: Option<f64>,
    /// Keep trajectory files after each lasso fit.
    #[arg(long)]
    pub retain_trajectories: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "causal")]
    pub method: Method,
    /// L1 coefficients to sweep; defaults to 8 log-spaced values in [1e-18, 1e-11].
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub mag_frac: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub n_iter: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub n_prune: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub retain_trajectories: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FlatnessMode {
    Spectrum,
    Landscape,
}

#[derive(Debug, Args)]
pub struct FlatnessArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "spectrum")]
    pub mode: FlatnessMode,
    /// Number of eigenvalues.
    #[arg(long)]
    pub k: Option<usize>,
    /// Landscape grid points per axis (odd).
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Store log(1 + loss) in the landscape grid.
    #[arg(long)]
    pub log1p: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub mask_a: PathBuf,
    pub mask_b: PathBuf,
    /// Directory for `contingency.csv` (defaults to the directory of the first mask).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Flatness(a) => cmd_flatness(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::format(path, e.to_string()))?))
}

/// Points trajectories at `<out>/trajectories` unless the config names a directory.
fn redirect_trajectories(cfg: &LoadedConfig, rc: &mut crate::prune::RunConfig, out: &Path) {
    if !cfg.config.recorder.in_memory && cfg.config.recorder.trajectory_dir.is_none() {
        rc.trajectory_dir = Some(out.join("trajectories"));
    }
}

fn write_run(report: &RunReport, dir: &Path, hash: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    report.write_iterations_csv(create(&dir.join("iterations.csv"))?, hash)?;
    fs::write(dir.join("summary.toml"), report.summary_toml(hash))?;
    report.final_mask.save(dir.join("mask.gcmk"))?;
    Checkpoint {
        spec_hash: report.spec_hash.clone(),
        params: report.final_params.clone(),
    }
    .save(dir.join("checkpoint.gcck"))?;
    Checkpoint {
        spec_hash: report.spec_hash.clone(),
        params: report.theta_pre.clone(),
    }
    .save(dir.join("theta_pre.gcck"))?;
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut cfg = LoadedConfig::load(&a.config)?;
    if let Some(s) = a.seeds {
        cfg.config.seeds = s;
    }
    if let Some(alpha) = a.alpha {
        cfg.config.lasso.alpha = alpha;
    }
    if let Some(f) = a.mag_frac {
        cfg.config.magnitude.mag_prune_frac = f;
    }
    cfg.config.recorder.retain_trajectories |= a.retain_trajectories;
    let method: PruneMethod = a.method.into();
    cfg.validate(method)?;
    let spec = cfg.model_spec()?;
    let data = cfg.dataset()?;
    let out = a.out.unwrap_or_else(|| cfg.output_dir()).join(method.to_string());
    let mut rc = cfg.run_config();
    redirect_trajectories(&cfg, &mut rc, &out);

    fs::create_dir_all(&out)?;
    let mut summary = csv::Writer::from_writer(create(&out.join("runs.csv"))?);
    summary.write_record(["config_hash", "method", "seed", "percent_pruned", "val_accuracy", "test_accuracy"])?;
    for &seed in &cfg.config.seeds {
        let dir = out.join(format!("seed{seed}"));
        let report = match run(&spec, &data, &rc, seed, method) {
            Ok(r) => r,
            Err(Error::RunAborted {
                iteration,
                source,
                partial,
            }) => {
                write_run(&partial, &dir, &cfg.hash)?;
                eprintln!("partial report written to {}", dir.display());
                return Err(Error::RunAborted {
                    iteration,
                    source,
                    partial,
                });
            }
            Err(e) => return Err(e),
        };
        write_run(&report, &dir, &cfg.hash)?;
        summary.write_record([
            cfg.hash.clone(),
            method.to_string(),
            seed.to_string(),
            format!("{:.6}", report.percent_pruned()),
            format!("{:.6}", report.val_accuracy),
            format!("{:.6}", report.test_accuracy),
        ])?;
        println!(
            "seed {seed}: {method} pruned {:.2}% ({:.2}% val / {:.2}% test accuracy) -> {}",
            report.percent_pruned(),
            100.0 * report.val_accuracy,
            100.0 * report.test_accuracy,
            dir.display()
        );
    }
    summary.flush()?;
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = LoadedConfig::load(&a.config)?;
    if let Some(s) = a.seeds {
        cfg.config.seeds = s;
    }
    cfg.config.recorder.retain_trajectories |= a.retain_trajectories;
    let method: PruneMethod = a.method.into();
    let lists = [!a.alpha.is_empty(), !a.mag_frac.is_empty(), !a.n_iter.is_empty(), !a.n_prune.is_empty()];
    if lists.iter().filter(|&&b| b).count() > 1 {
        return Err(Error::Config("sweep one of --alpha, --mag-frac, --n-iter, --n-prune at a time".into()));
    }
    let (param, values) = if !a.mag_frac.is_empty() {
        (SweepParam::MagPruneFrac, a.mag_frac)
    } else if !a.n_iter.is_empty() {
        (SweepParam::NIter, a.n_iter.iter().map(|&v| v as f64).collect())
    } else if !a.n_prune.is_empty() {
        (SweepParam::NPrune, a.n_prune.iter().map(|&v| v as f64).collect())
    } else if !a.alpha.is_empty() {
        (SweepParam::L1Coeff, a.alpha)
    } else if method == PruneMethod::Causal {
        (SweepParam::L1Coeff, log_alpha_grid(-18.0, -11.0, 8))
    } else {
        return Err(Error::Config("give the sweep values with --mag-frac, --n-iter or --n-prune".into()));
    };
    if param == SweepParam::L1Coeff && method != PruneMethod::Causal {
        return Err(Error::Config("an --alpha sweep needs --method causal".into()));
    }
    if param == SweepParam::MagPruneFrac && method != PruneMethod::Magnitude {
        return Err(Error::Config("a --mag-frac sweep needs --method magnitude".into()));
    }
    cfg.validate(if method == PruneMethod::None { PruneMethod::None } else { method })?;
    let spec = cfg.model_spec()?;
    let data = cfg.dataset()?;
    let out = a.out.unwrap_or_else(|| cfg.output_dir());
    let mut rc = cfg.run_config();
    redirect_trajectories(&cfg, &mut rc, &out);
    let table = sweep(&spec, &data, &rc, method, param, &values, &cfg.config.seeds, a.workers)?;
    fs::create_dir_all(&out)?;
    let path = out.join(format!("sweep_{method}_{}.csv", param.name()));
    table.write_csv(create(&path)?, &cfg.hash)?;
    for s in &table.summary {
        println!(
            "{} = {:e}: median {:.2}% pruned, {:.2}% val accuracy over {} seed(s)",
            param.name(),
            s.value,
            s.median_percent_pruned,
            100.0 * s.median_val_accuracy,
            s.seeds
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_flatness(a: FlatnessArgs) -> Result<()> {
    let mut cfg = LoadedConfig::load(&a.config)?;
    if let Some(k) = a.k {
        cfg.config.flatness.k = k;
    }
    if let Some(r) = a.resolution {
        cfg.config.flatness.resolution = r;
    }
    if a.log1p {
        cfg.config.flatness.scaling = Scaling::Log1p;
    }
    cfg.validate(PruneMethod::None)?;
    let fc = cfg.config.flatness.clone();
    let spec = cfg.model_spec()?;
    let net = Network::new(&spec)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    if ck.params.len() != net.layer_map().total_len() {
        return Err(Error::format(
            &a.checkpoint,
            format!("{} parameters, model has {}", ck.params.len(), net.layer_map().total_len()),
        ));
    }
    if ck.spec_hash != spec_hash(&spec) {
        return Err(Error::format(&a.checkpoint, "checkpoint was produced for a different model"));
    }
    let mask = match &a.mask {
        Some(p) => {
            let m = PruneMask::load(p)?;
            if m.len() != ck.params.len() {
                return Err(Error::format(
                    p,
                    format!("mask covers {} parameters, checkpoint has {}", m.len(), ck.params.len()),
                ));
            }
            Some(m)
        }
        None => None,
    };
    let data = cfg.dataset()?;
    let eval = vec![data.train.head(fc.eval_batch_size.min(data.train.size()))];
    let out = a.out.unwrap_or_else(|| cfg.output_dir().join("flatness"));
    fs::create_dir_all(&out)?;
    match a.mode {
        FlatnessMode::Spectrum => {
            let report = top_eigenvalues(&net, &ck.params, &eval, mask.as_ref(), &fc)?;
            let path = out.join("spectrum.toml");
            write_report(&report, create(&path)?, &cfg.hash)?;
            for (i, l) in report.eigenvalues.iter().enumerate() {
                println!("lambda_{} = {l:.6e} ({} iterations)", i + 1, report.iterations[i]);
            }
            println!("wrote {}", path.display());
        }
        FlatnessMode::Landscape => {
            let grid = landscape_grid(
                &net,
                &ck.params,
                net.layer_map(),
                mask.as_ref(),
                &eval,
                fc.resolution,
                fc.direction_seeds,
                fc.scaling,
            )?;
            let path = out.join("landscape.csv");
            grid.write_csv(create(&path)?, &cfg.hash)?;
            println!("center loss {:.6e}; wrote {}", grid.center(), path.display());
        }
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let ma = PruneMask::load(&a.mask_a)?;
    let mb = PruneMask::load(&a.mask_b)?;
    let c = compare_masks(&ma, &mb)?;
    let mut bytes = fs::read(&a.mask_a)?;
    bytes.extend(fs::read(&a.mask_b)?);
    let hash = digest_bytes(&bytes);
    print!("{}", c.render());
    let out = a
        .out
        .unwrap_or_else(|| a.mask_a.parent().map(Path::to_path_buf).unwrap_or_default());
    fs::create_dir_all(&out)?;
    let path = out.join("contingency.csv");
    c.write_csv(create(&path)?, &hash)?;
    println!("wrote {}", path.display());
    Ok(())
}
