use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stihc::cli::{
    run_cluster, run_eval, run_fit, run_pipeline, run_render, run_simulate, Normalize, RunConfig,
};
use stihc::solver::Family;
use stihc::synth::{NoiseModel, ScenarioKind};
use stihc::Error;

/// Spatial co-expression modules from spatial transcriptomics data:
/// finite-element smoothing of per-gene expression fields followed by
/// iterative hierarchical clustering of the fitted coefficients.
#[derive(Parser)]
#[command(name = "stihc", version, about)]
struct CliArgs {
    /// Worker threads for per-gene fits and per-threshold clustering
    /// (results are identical for any value).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file (`key = value` lines); command-line flags below
    /// override its entries.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Response family: gaussian or poisson.
    #[arg(long)]
    family: Option<String>,

    /// Normalization applied before fitting: log1p or none.
    #[arg(long)]
    normalize: Option<String>,

    /// Number of smoothing-parameter grid values.
    #[arg(long)]
    lambda_grid_len: Option<usize>,

    /// log10 of the smallest unscaled grid value.
    #[arg(long)]
    lambda_log10_min: Option<f64>,

    /// log10 of the largest unscaled grid value.
    #[arg(long)]
    lambda_log10_max: Option<f64>,

    /// Number of clustering thresholds across the correlation range.
    #[arg(long)]
    alpha_grid_size: Option<usize>,

    /// Cap on merge/prune rounds per threshold.
    #[arg(long)]
    max_inner_iterations: Option<usize>,

    /// Master seed for anything stochastic.
    #[arg(long)]
    seed: Option<u64>,

    /// Render smoothed-surface variants of the cluster figures.
    #[arg(long)]
    surfaces: Option<bool>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.family {
            cfg.family = Family::parse(v)?;
        }
        if let Some(v) = &self.normalize {
            cfg.normalize = Normalize::parse(v)?;
        }
        if let Some(v) = self.lambda_grid_len {
            cfg.lambda_grid_len = v;
        }
        if let Some(v) = self.lambda_log10_min {
            cfg.lambda_log10_min = v;
        }
        if let Some(v) = self.lambda_log10_max {
            cfg.lambda_log10_max = v;
        }
        if let Some(v) = self.alpha_grid_size {
            cfg.alpha_grid_size = v;
        }
        if let Some(v) = self.max_inner_iterations {
            cfg.max_inner_iterations = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.surfaces {
            cfg.surfaces = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted co-expression modules.
    Simulate {
        /// balanced, imbalanced, or sparse.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Count noise: negbinomial or poisson.
        #[arg(long, default_value = "negbinomial")]
        noise: String,
        /// Negative-binomial dispersion.
        #[arg(long, default_value_t = 10.0)]
        dispersion: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit per-gene spatial fields and select the shared smoothing parameter.
    Fit {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        coords: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Cluster an existing coefficient matrix into co-expression modules.
    Cluster {
        #[arg(long)]
        coefficients: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a clustering: ARI (needs truth), Davies-Bouldin, silhouette.
    Eval {
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        coefficients: PathBuf,
        /// Output metrics CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render cluster mean spatial patterns as SVG figures.
    Render {
        #[arg(long)]
        coefficients: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        coords: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        surfaces: bool,
        #[arg(long, default_value = "gaussian")]
        family: String,
    },
    /// Full workflow: load, normalize, fit, cluster, evaluate, render.
    Pipeline {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        coords: PathBuf,
        /// Ground-truth labels (`gene,module`); enables the ARI metric.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: CliArgs) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { scenario, seed, noise, dispersion, out_dir } => {
            let kind = ScenarioKind::parse(&scenario)?;
            let noise = match noise.as_str() {
                "poisson" => NoiseModel::Poisson,
                "negbinomial" => NoiseModel::NegBinomial { dispersion },
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown noise model {other:?}; expected poisson or negbinomial"
                    )))
                }
            };
            let out = run_simulate(kind, seed, noise, &out_dir)?;
            println!(
                "wrote {} genes x {} spots under {}",
                out.gene_count,
                out.spot_count,
                out_dir.display()
            );
        }
        Command::Fit { counts, coords, out_dir, config } => {
            let cfg = config.resolve()?;
            let out = run_fit(&counts, &coords, &cfg, &out_dir)?;
            for gene in &out.dropped_genes {
                eprintln!("warning: dropped zero-expression gene {gene:?}");
            }
            println!("lambda_opt = {:.6e}", out.lambda_opt);
            println!("coefficients: {}", out.coefficients.display());
        }
        Command::Cluster { coefficients, out_dir, config } => {
            let cfg = config.resolve()?;
            let out = run_cluster(&coefficients, &cfg, &out_dir)?;
            if let Some(w) = &out.result.warning {
                eprintln!("warning: {w}");
            }
            println!(
                "{} clusters at alpha = {:.4}; labels in {}",
                out.result.partition.n_clusters(),
                out.result.alpha_opt,
                out.clusters.display()
            );
        }
        Command::Eval { clusters, truth, coefficients, out } => {
            let metrics = run_eval(&clusters, truth.as_deref(), &coefficients, &out)?;
            for (name, value) in &metrics {
                println!("{name} = {value:.6}");
            }
        }
        Command::Render { coefficients, clusters, coords, out_dir, surfaces, family } => {
            let family = Family::parse(&family)?;
            let figures =
                run_render(&coefficients, &clusters, &coords, &out_dir, surfaces, family)?;
            println!("wrote {} figures under {}", figures.len(), out_dir.display());
        }
        Command::Pipeline { counts, coords, truth, out_dir, config } => {
            let cfg = config.resolve()?;
            let out = run_pipeline(&counts, &coords, truth.as_deref(), &cfg, &out_dir)?;
            for gene in &out.dropped_genes {
                eprintln!("warning: dropped zero-expression gene {gene:?}");
            }
            if let Some(w) = &out.warning {
                eprintln!("warning: {w}");
            }
            println!("lambda_opt = {:.6e}", out.lambda_opt);
            println!("alpha_opt = {:.4}", out.alpha_opt);
            println!("cluster sizes: {:?}", out.cluster_sizes);
            for (name, value) in &out.metrics {
                println!("{name} = {value:.6}");
            }
            println!("outputs under {}", out.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = CliArgs::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) =
            rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()
        {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
