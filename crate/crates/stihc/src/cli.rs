//! Command-line workflows: simulate, fit, cluster, eval, render, and the
//! end-to-end pipeline. Each run writes its outputs plus the resolved
//! configuration, so any result can be reproduced from its output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{io_err, Error, Result};
use crate::fem::PenaltyMatrices;
use crate::ihc::{spearman_distance, stihc_cluster, ClusterConfig, ClusterResult, Partition};
use crate::io::{
    load_coefficients, load_coords, load_dataset, load_labels, log1p_normalize,
    render_cluster_means, write_coefficients, write_coords, write_counts, write_labels,
    ExpressionMatrix,
};
use crate::mesh::{build_delaunay, nodal_basis, Mesh, SpotGrid};
use crate::metrics::{adjusted_rand_index, davies_bouldin, mean_silhouette};
use crate::solver::{
    default_lambda_grid, select_lambda, CoefficientMatrix, Family, FitOptions, LambdaSelection,
};
use crate::synth::{generate_dataset, NoiseModel, Scenario, ScenarioKind};

/// Expression preprocessing applied before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalize {
    Log1p,
    None,
}

impl Normalize {
    pub fn name(self) -> &'static str {
        match self {
            Normalize::Log1p => "log1p",
            Normalize::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Normalize> {
        match s {
            "log1p" => Ok(Normalize::Log1p),
            "none" => Ok(Normalize::None),
            other => Err(Error::InvalidConfig(format!(
                "unknown normalization {other:?}; expected \"log1p\" or \"none\""
            ))),
        }
    }
}

/// Fully resolved run configuration; serializable as `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub family: Family,
    pub normalize: Normalize,
    pub lambda_grid_len: usize,
    pub lambda_log10_min: f64,
    pub lambda_log10_max: f64,
    pub alpha_grid_size: usize,
    pub max_inner_iterations: usize,
    pub seed: u64,
    pub surfaces: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            family: Family::Gaussian,
            normalize: Normalize::Log1p,
            lambda_grid_len: 20,
            lambda_log10_min: -6.0,
            lambda_log10_max: 2.0,
            alpha_grid_size: 20,
            max_inner_iterations: 100,
            seed: 1,
            surfaces: true,
        }
    }
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "family = {}", self.family.name()).unwrap();
        writeln!(s, "normalize = {}", self.normalize.name()).unwrap();
        writeln!(s, "lambda_grid_len = {}", self.lambda_grid_len).unwrap();
        writeln!(s, "lambda_log10_min = {}", self.lambda_log10_min).unwrap();
        writeln!(s, "lambda_log10_max = {}", self.lambda_log10_max).unwrap();
        writeln!(s, "alpha_grid_size = {}", self.alpha_grid_size).unwrap();
        writeln!(s, "max_inner_iterations = {}", self.max_inner_iterations).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "surfaces = {}", self.surfaces).unwrap();
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                message: format!("expected key = value, found {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        RunConfig::from_text(&text, path)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str, v: &str| Error::InvalidConfig(format!("bad {what}: {v:?}"));
        match key {
            "family" => self.family = Family::parse(value)?,
            "normalize" => self.normalize = Normalize::parse(value)?,
            "lambda_grid_len" => {
                self.lambda_grid_len = value.parse().map_err(|_| bad(key, value))?
            }
            "lambda_log10_min" => {
                self.lambda_log10_min = value.parse().map_err(|_| bad(key, value))?
            }
            "lambda_log10_max" => {
                self.lambda_log10_max = value.parse().map_err(|_| bad(key, value))?
            }
            "alpha_grid_size" => {
                self.alpha_grid_size = value.parse().map_err(|_| bad(key, value))?
            }
            "max_inner_iterations" => {
                self.max_inner_iterations = value.parse().map_err(|_| bad(key, value))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "surfaces" => self.surfaces = value.parse().map_err(|_| bad(key, value))?,
            other => return Err(Error::InvalidConfig(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid_len < 1 {
            return Err(Error::InvalidConfig("lambda_grid_len must be at least 1".into()));
        }
        if self.lambda_log10_min >= self.lambda_log10_max && self.lambda_grid_len > 1 {
            return Err(Error::InvalidConfig(
                "lambda_log10_min must be below lambda_log10_max".into(),
            ));
        }
        if self.alpha_grid_size < 2 {
            return Err(Error::InvalidConfig("alpha_grid_size must be at least 2".into()));
        }
        Ok(())
    }

    fn lambda_grid(&self, n: usize, penalty_trace: f64) -> Vec<f64> {
        if self.lambda_grid_len == 1 {
            let scale = n as f64 / penalty_trace;
            return vec![10f64.powf(self.lambda_log10_min) * scale];
        }
        if (self.lambda_log10_min, self.lambda_log10_max, self.lambda_grid_len)
            == (-6.0, 2.0, 20)
        {
            return default_lambda_grid(n, penalty_trace, 20);
        }
        let scale = n as f64 / penalty_trace;
        (0..self.lambda_grid_len)
            .map(|i| {
                let t = i as f64 / (self.lambda_grid_len - 1) as f64;
                let expo = self.lambda_log10_min + (self.lambda_log10_max - self.lambda_log10_min) * t;
                10f64.powf(expo) * scale
            })
            .collect()
    }

    fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            grid_size: self.alpha_grid_size,
            max_inner_iterations: self.max_inner_iterations,
        }
    }
}

pub struct SimulateOutputs {
    pub counts: PathBuf,
    pub coords: PathBuf,
    pub truth: PathBuf,
    pub gene_count: usize,
    pub spot_count: usize,
}

/// `simulate`: write counts/coords/truth for a scenario.
pub fn run_simulate(
    kind: ScenarioKind,
    seed: u64,
    noise: NoiseModel,
    out_dir: &Path,
) -> Result<SimulateOutputs> {
    let mut scenario = Scenario::new(kind, seed);
    scenario.noise = noise;
    let data = generate_dataset(&scenario)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let counts = out_dir.join("counts.tsv");
    let coords = out_dir.join("coords.csv");
    let truth = out_dir.join("truth.csv");
    write_counts(&data.expression, &counts)?;
    write_coords(&data.grid, &coords)?;
    write_labels(&data.expression.genes, &data.truth, "gene,module", &truth)?;
    Ok(SimulateOutputs {
        counts,
        coords,
        truth,
        gene_count: data.expression.gene_count(),
        spot_count: data.grid.len(),
    })
}

/// Shared fitting stage: load, normalize, mesh, assemble, select lambda.
struct FitStage {
    mesh: Mesh,
    grid: SpotGrid,
    expression: ExpressionMatrix,
    dropped_genes: Vec<String>,
    selection: LambdaSelection,
    coefficients: CoefficientMatrix,
}

fn fit_stage(counts: &Path, coords: &Path, cfg: &RunConfig) -> Result<FitStage> {
    let loaded = load_dataset(counts, coords)?;
    let expression = match cfg.normalize {
        Normalize::Log1p => log1p_normalize(&loaded.expression)?,
        Normalize::None => loaded.expression.clone(),
    };
    let mesh = build_delaunay(&loaded.grid)?;
    let penalties = PenaltyMatrices::assemble(&mesh)?;
    let phi = nodal_basis(&mesh);
    let grid = cfg.lambda_grid(expression.spot_count(), penalties.penalty_trace());
    let (selection, coefficients) = select_lambda(
        &phi,
        &penalties,
        &expression.genes,
        &expression.values,
        cfg.family,
        &grid,
        &FitOptions::default(),
    )?;
    Ok(FitStage {
        mesh,
        grid: loaded.grid,
        expression,
        dropped_genes: loaded.dropped_genes,
        selection,
        coefficients,
    })
}

fn write_lambda_csv(sel: &LambdaSelection, path: &Path) -> Result<()> {
    let mut out = String::from("lambda,total_gcv,selected\n");
    for (i, (l, g)) in sel.grid.iter().zip(&sel.total_gcv).enumerate() {
        writeln!(out, "{l:.16e},{g:.16e},{}", i == sel.lambda_opt_index).unwrap();
    }
    fs::write(path, out).map_err(io_err(path))
}

fn write_alpha_csv(result: &ClusterResult, path: &Path) -> Result<()> {
    let mut out = String::from("alpha,n_clusters,mean_silhouette,converged\n");
    for d in &result.diagnostics {
        writeln!(out, "{:.16e},{},{:.16e},{}", d.alpha, d.n_clusters, d.mean_silhouette, d.converged)
            .unwrap();
    }
    fs::write(path, out).map_err(io_err(path))
}

fn write_metrics_csv(pairs: &[(&str, f64)], path: &Path) -> Result<()> {
    let mut out = String::from("metric,value\n");
    for (name, value) in pairs {
        writeln!(out, "{name},{value:.6}").unwrap();
    }
    fs::write(path, out).map_err(io_err(path))
}

pub struct FitOutputs {
    pub coefficients: PathBuf,
    pub lambda_csv: PathBuf,
    pub lambda_opt: f64,
    pub dropped_genes: Vec<String>,
}

/// `fit`: smoothing only; writes coefficients and the lambda search curve.
pub fn run_fit(counts: &Path, coords: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<FitOutputs> {
    let stage = fit_stage(counts, coords, cfg)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let coefficients = out_dir.join("coefficients.csv");
    let lambda_csv = out_dir.join("lambda.csv");
    write_coefficients(&stage.coefficients, &coefficients)?;
    write_lambda_csv(&stage.selection, &lambda_csv)?;
    fs::write(out_dir.join("config.txt"), cfg.to_text()).map_err(io_err(out_dir))?;
    Ok(FitOutputs {
        coefficients,
        lambda_csv,
        lambda_opt: stage.selection.lambda_opt,
        dropped_genes: stage.dropped_genes,
    })
}

pub struct ClusterOutputs {
    pub clusters: PathBuf,
    pub diagnostics: PathBuf,
    pub result: ClusterResult,
}

/// `cluster`: iterative hierarchical clustering of an existing coefficient
/// matrix.
pub fn run_cluster(coefficients: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<ClusterOutputs> {
    let coef = load_coefficients(coefficients)?;
    let result = stihc_cluster(&coef, &cfg.cluster_config())?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let clusters = out_dir.join("clusters.csv");
    let diagnostics = out_dir.join("alpha_diagnostics.csv");
    write_labels(&coef.genes, result.partition.labels(), "gene,cluster", &clusters)?;
    write_alpha_csv(&result, &diagnostics)?;
    Ok(ClusterOutputs { clusters, diagnostics, result })
}

/// Align labels loaded from a CSV to the gene order of `genes`.
fn align_labels(genes: &[String], pairs: &[(String, usize)], what: &str) -> Result<Vec<usize>> {
    let map: std::collections::BTreeMap<&str, usize> =
        pairs.iter().map(|(g, l)| (g.as_str(), *l)).collect();
    if map.len() != pairs.len() {
        return Err(Error::InvalidConfig(format!("duplicate gene in {what} file")));
    }
    let mut out = Vec::with_capacity(genes.len());
    for g in genes {
        match map.get(g.as_str()) {
            Some(&l) => out.push(l),
            None => {
                return Err(Error::InvalidConfig(format!(
                    "gene {g:?} missing from {what} file"
                )))
            }
        }
    }
    if pairs.len() != genes.len() {
        return Err(Error::InvalidConfig(format!(
            "{what} file lists {} genes, expected {}",
            pairs.len(),
            genes.len()
        )));
    }
    Ok(out)
}

/// `eval`: ARI (against truth), Davies-Bouldin, and mean silhouette for a
/// predicted clustering over a coefficient matrix.
pub fn run_eval(
    clusters: &Path,
    truth: Option<&Path>,
    coefficients: &Path,
    out: &Path,
) -> Result<Vec<(String, f64)>> {
    let coef = load_coefficients(coefficients)?;
    let pred_pairs = load_labels(clusters)?;
    let pred = align_labels(&coef.genes, &pred_pairs, "clusters")?;
    let mut metrics: Vec<(String, f64)> = Vec::new();
    if let Some(truth_path) = truth {
        let truth_pairs = load_labels(truth_path)?;
        let truth_labels = align_labels(&coef.genes, &truth_pairs, "truth")?;
        metrics.push(("ari".into(), adjusted_rand_index(&pred, &truth_labels)?));
    }
    metrics.push(("dbi".into(), davies_bouldin(&coef.rows, &pred)?));
    let (d, _) = spearman_distance(&coef.rows)?;
    metrics.push(("mean_silhouette".into(), mean_silhouette(&d, &pred)?));
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    let pairs: Vec<(&str, f64)> = metrics.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    write_metrics_csv(&pairs, out)?;
    Ok(metrics)
}

/// `render`: cluster mean figures for an existing clustering.
pub fn run_render(
    coefficients: &Path,
    clusters: &Path,
    coords: &Path,
    out_dir: &Path,
    surfaces: bool,
    family: Family,
) -> Result<Vec<PathBuf>> {
    let coef = load_coefficients(coefficients)?;
    let grid = load_coords(coords)?;
    let pairs = load_labels(clusters)?;
    let labels = align_labels(&coef.genes, &pairs, "clusters")?;
    let mesh = build_delaunay(&grid)?;
    let partition = Partition::from_labels(&labels);
    render_cluster_means(&mesh, &coef, &partition, &grid, family, out_dir, surfaces)
}

pub struct PipelineOutputs {
    pub out_dir: PathBuf,
    pub clusters: PathBuf,
    pub lambda_opt: f64,
    pub alpha_opt: f64,
    pub cluster_sizes: Vec<usize>,
    pub metrics: Vec<(String, f64)>,
    pub dropped_genes: Vec<String>,
    pub warning: Option<String>,
    pub figures: Vec<PathBuf>,
}

/// `pipeline`: load, normalize, smooth, cluster, evaluate, render; all
/// outputs plus the resolved configuration end up under one directory.
pub fn run_pipeline(
    counts: &Path,
    coords: &Path,
    truth: Option<&Path>,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<PipelineOutputs> {
    // Load and validate every input before creating any output.
    let truth_pairs = truth.map(load_labels).transpose()?;
    let stage = fit_stage(counts, coords, cfg)?;
    let truth_labels = truth_pairs
        .as_deref()
        .map(|pairs| align_labels(&stage.expression.genes, pairs, "truth"))
        .transpose()?;

    let result = stihc_cluster(&stage.coefficients, &cfg.cluster_config())?;

    let mut metrics: Vec<(String, f64)> = Vec::new();
    if let Some(truth_labels) = &truth_labels {
        metrics.push((
            "ari".into(),
            adjusted_rand_index(result.partition.labels(), truth_labels)?,
        ));
    }
    if result.partition.n_clusters() >= 2 {
        metrics.push((
            "dbi".into(),
            davies_bouldin(&stage.coefficients.rows, result.partition.labels())?,
        ));
        let (d, _) = spearman_distance(&stage.coefficients.rows)?;
        metrics.push((
            "mean_silhouette".into(),
            mean_silhouette(&d, result.partition.labels())?,
        ));
    }

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    fs::write(out_dir.join("config.txt"), cfg.to_text()).map_err(io_err(out_dir))?;
    write_coefficients(&stage.coefficients, &out_dir.join("coefficients.csv"))?;
    write_lambda_csv(&stage.selection, &out_dir.join("lambda.csv"))?;
    let clusters = out_dir.join("clusters.csv");
    write_labels(
        &stage.coefficients.genes,
        result.partition.labels(),
        "gene,cluster",
        &clusters,
    )?;
    write_alpha_csv(&result, &out_dir.join("alpha_diagnostics.csv"))?;
    let pairs: Vec<(&str, f64)> = metrics.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    write_metrics_csv(&pairs, &out_dir.join("metrics.csv"))?;
    let figures = render_cluster_means(
        &stage.mesh,
        &stage.coefficients,
        &result.partition,
        &stage.grid,
        cfg.family,
        &out_dir.join("figures"),
        cfg.surfaces,
    )?;

    Ok(PipelineOutputs {
        out_dir: out_dir.to_path_buf(),
        clusters,
        lambda_opt: stage.selection.lambda_opt,
        alpha_opt: result.alpha_opt,
        cluster_sizes: result.partition.sizes(),
        metrics,
        dropped_genes: stage.dropped_genes,
        warning: result.warning.clone(),
        figures,
    })
}
