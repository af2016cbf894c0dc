//! Penalized exponential-family regression over the FEM basis and unified
//! smoothing-parameter selection by generalized cross-validation.
//!
//! Each gene's spatial field is fitted by iteratively reweighted least
//! squares with a curvature penalty: the coefficient update solves
//! `(Phi' W Phi + lambda P) c = Phi' W z` for the canonical-link working
//! weights W and working response z, with step-halving so the penalized
//! deviance never increases. One smoothing parameter is shared by all genes:
//! the grid value minimizing the summed per-gene GCV scores is selected.

use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::PenaltyMatrices;
use crate::linalg::{init_backend, mat_col, sym_eigen, SymSolver};
use crate::mesh::BasisMatrix;

/// Exponential-family response model with its canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Identity link; any real responses.
    Gaussian,
    /// Log link; nonnegative integer responses.
    Poisson,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Poisson => "poisson",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "poisson" => Ok(Family::Poisson),
            other => Err(Error::InvalidConfig(format!(
                "unknown family {other:?}; expected \"gaussian\" or \"poisson\""
            ))),
        }
    }

    pub fn link(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => mu,
            Family::Poisson => mu.ln(),
        }
    }

    pub fn inv_link(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            // Clamp so exp cannot overflow during intermediate iterations.
            Family::Poisson => eta.clamp(-300.0, 300.0).exp(),
        }
    }

    /// Unit deviance summed over observations.
    pub fn deviance(self, y: &[f64], mu: &[f64]) -> f64 {
        match self {
            Family::Gaussian => y.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum(),
            Family::Poisson => {
                2.0 * y
                    .iter()
                    .zip(mu)
                    .map(|(&yi, &mui)| {
                        let term = if yi > 0.0 { yi * (yi / mui).ln() } else { 0.0 };
                        term - (yi - mui)
                    })
                    .sum::<f64>()
            }
        }
    }

    fn validate(self, y: &[f64]) -> Result<()> {
        for (j, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteResponse { gene: String::new(), spot: j });
            }
            if self == Family::Poisson && (v < 0.0 || v.fract() != 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "poisson family requires nonnegative integer responses, found {v} at spot index {j}"
                )));
            }
        }
        Ok(())
    }

    fn initial_mean(self, y: &[f64]) -> Vec<f64> {
        match self {
            Family::Gaussian => y.to_vec(),
            // Guards log(0) for zero counts.
            Family::Poisson => y.iter().map(|&v| v + 0.5).collect(),
        }
    }
}

/// IRLS stopping rules.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub coef_tol: f64,
    pub deviance_tol: f64,
    pub max_step_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 50,
            coef_tol: 1e-6,
            deviance_tol: 1e-8,
            max_step_halvings: 10,
        }
    }
}

/// One penalized fit at a fixed smoothing parameter.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub fitted_means: Vec<f64>,
    pub deviance: f64,
    /// Effective degrees of freedom: trace of the smoothing operator at the
    /// converged weights.
    pub edf: f64,
    /// GCV score; infinite when the fit is saturated.
    pub gcv: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized deviance after each accepted iteration (non-increasing).
    pub penalized_deviance_path: Vec<f64>,
}

/// GCV score `n D / (n - edf)^2`.
///
/// A zero-deviance fit scores 0 even when saturated; otherwise a fit with
/// `n - edf <= 0` is an error.
pub fn gcv_score(deviance: f64, edf: f64, n: usize) -> Result<f64> {
    let nf = n as f64;
    if deviance <= 0.0 {
        return Ok(0.0);
    }
    if nf - edf <= 0.0 {
        return Err(Error::SaturatedFit { n, edf });
    }
    Ok(nf * deviance / ((nf - edf) * (nf - edf)))
}

fn penalty_quad(penalty: &Mat<f64>, c: &[f64]) -> f64 {
    let k = c.len();
    let mut acc = 0.0;
    for i in 0..k {
        let mut row = 0.0;
        for j in 0..k {
            row += penalty[(i, j)] * c[j];
        }
        acc += row * c[i];
    }
    acc
}

/// Fit one response vector by penalized IRLS.
pub fn irls_fit(
    phi: &BasisMatrix,
    penalty: &Mat<f64>,
    y: &[f64],
    family: Family,
    lambda: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    init_backend();
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if y.len() != phi.n_points() {
        return Err(Error::LengthMismatch { left: y.len(), right: phi.n_points() });
    }
    family.validate(y)?;
    if family == Family::Gaussian && phi.is_identity() {
        // The spectral solve stays accurate for arbitrarily large lambda,
        // where a direct factorization of (I + lambda P) loses the
        // constant-field component to conditioning.
        return gaussian_identity_fit(penalty, y, lambda);
    }
    let n = y.len();
    let k = phi.node_count();

    let mut mu = family.initial_mean(y);
    let mut eta: Vec<f64> = mu.iter().map(|&m| family.link(m)).collect();
    let mut coef: Option<Vec<f64>> = None;
    let mut pen_dev_prev = f64::INFINITY;
    let mut path = Vec::new();
    let mut weights = vec![1.0; n];
    let mut converged = false;
    let mut iterations = 0;

    for _iter in 0..opts.max_iterations {
        iterations += 1;
        // Canonical-link working weights and response.
        let mut z = vec![0.0; n];
        for j in 0..n {
            match family {
                Family::Gaussian => {
                    weights[j] = 1.0;
                    z[j] = y[j];
                }
                Family::Poisson => {
                    weights[j] = mu[j].max(1e-10);
                    z[j] = eta[j] + (y[j] - mu[j]) / weights[j];
                }
            }
        }
        let (a, b) = assemble_system(phi, penalty, &weights, &z, lambda);
        let solver = SymSolver::new(&a).ok_or(Error::SingularSystem { lambda })?;
        let proposal = solver.solve_vec(&b);

        // Step-halving toward the previous iterate keeps the penalized
        // deviance non-increasing.
        let (accepted, pen_dev) = match &coef {
            None => {
                let pd = penalized_deviance(phi, penalty, y, family, lambda, &proposal);
                (proposal, pd)
            }
            Some(prev) => {
                let mut cand = proposal;
                let mut pd = penalized_deviance(phi, penalty, y, family, lambda, &cand);
                let mut halvings = 0;
                while pd > pen_dev_prev * (1.0 + 1e-12) + 1e-12
                    && halvings < opts.max_step_halvings
                {
                    for (c, p) in cand.iter_mut().zip(prev) {
                        *c = 0.5 * (*c + p);
                    }
                    pd = penalized_deviance(phi, penalty, y, family, lambda, &cand);
                    halvings += 1;
                }
                if pd > pen_dev_prev * (1.0 + 1e-12) + 1e-12 {
                    // Line search cannot improve further; keep the previous
                    // iterate and stop.
                    converged = true;
                    iterations -= 1;
                    break;
                }
                (cand, pd)
            }
        };

        let coef_change = match &coef {
            None => f64::INFINITY,
            Some(prev) => {
                let num: f64 =
                    accepted.iter().zip(prev).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let den: f64 =
                    prev.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                num / den
            }
        };
        let dev_change = (pen_dev_prev - pen_dev).abs() / (1.0 + pen_dev.abs());
        path.push(pen_dev);
        pen_dev_prev = pen_dev;
        coef = Some(accepted);

        // Refresh the mean for the next iteration and the final report.
        let cref = coef.as_ref().unwrap();
        for j in 0..n {
            eta[j] = phi.row_dot(j, cref);
            mu[j] = family.inv_link(eta[j]);
        }
        if coef_change < opts.coef_tol || dev_change < opts.deviance_tol {
            converged = true;
            break;
        }
    }

    let coefficients = coef.ok_or(Error::SingularSystem { lambda })?;
    let deviance = family.deviance(y, &mu);
    // edf uses the converged weights.
    for j in 0..n {
        weights[j] = match family {
            Family::Gaussian => 1.0,
            Family::Poisson => mu[j].max(1e-10),
        };
    }
    let edf = effective_dof(phi, penalty, &weights, lambda)?;
    let gcv = gcv_score(deviance, edf, n).unwrap_or(f64::INFINITY);
    if k > 0 && coefficients.len() != k {
        return Err(Error::SingularSystem { lambda });
    }
    Ok(FitResult {
        coefficients,
        fitted_means: mu,
        deviance,
        edf,
        gcv,
        iterations,
        converged,
        penalized_deviance_path: path,
    })
}

/// The penalty is positive semidefinite with the constant field in its null
/// space; rounding leaves tiny eigenvalues of either sign that must read as
/// exact zeros, or an infinite smoothing parameter would wrongly shrink the
/// null directions.
fn clip_null_eigenvalues(eig: &mut [f64]) {
    let max = eig.iter().cloned().fold(0.0f64, f64::max);
    let floor = 1e-12 * max;
    for v in eig.iter_mut() {
        *v = if *v <= floor { 0.0 } else { *v };
    }
}

/// Gaussian fit with the identity basis through the eigendecomposition of P.
fn gaussian_identity_fit(penalty: &Mat<f64>, y: &[f64], lambda: f64) -> Result<FitResult> {
    let k = y.len();
    let (mut eig, u) = sym_eigen(penalty).ok_or(Error::SingularSystem { lambda })?;
    clip_null_eigenvalues(&mut eig);
    let ym = Mat::from_fn(k, 1, |i, _| y[i]);
    let yt = u.transpose() * &ym;
    let shrink: Vec<f64> = eig.iter().map(|&s| 1.0 / (1.0 + lambda * s)).collect();
    let mut scaled = yt.clone();
    for i in 0..k {
        scaled[(i, 0)] *= shrink[i];
    }
    let cm = &u * &scaled;
    let coefficients: Vec<f64> = (0..k).map(|i| cm[(i, 0)]).collect();
    let deviance: f64 = (0..k)
        .map(|i| {
            let r = (1.0 - shrink[i]) * yt[(i, 0)];
            r * r
        })
        .sum();
    let edf: f64 = shrink.iter().sum();
    let gcv = gcv_score(deviance, edf, k).unwrap_or(f64::INFINITY);
    let pen_quad: f64 = (0..k)
        .map(|i| eig[i] * (shrink[i] * yt[(i, 0)]).powi(2))
        .sum();
    Ok(FitResult {
        fitted_means: coefficients.clone(),
        coefficients,
        deviance,
        edf,
        gcv,
        iterations: 1,
        converged: true,
        penalized_deviance_path: vec![deviance + lambda * pen_quad],
    })
}

fn assemble_system(
    phi: &BasisMatrix,
    penalty: &Mat<f64>,
    weights: &[f64],
    z: &[f64],
    lambda: f64,
) -> (Mat<f64>, Vec<f64>) {
    let k = phi.node_count();
    let mut a = Mat::from_fn(k, k, |i, j| lambda * penalty[(i, j)]);
    let mut b = vec![0.0; k];
    for (j, row) in phi.rows().iter().enumerate() {
        if row.outside {
            continue;
        }
        let w = weights[j];
        for p in 0..3 {
            let (ip, vp) = (row.indices[p], row.weights[p]);
            if vp == 0.0 {
                continue;
            }
            b[ip] += w * vp * z[j];
            for q in 0..3 {
                let (iq, vq) = (row.indices[q], row.weights[q]);
                if vq != 0.0 {
                    a[(ip, iq)] += w * vp * vq;
                }
            }
        }
    }
    (a, b)
}

fn penalized_deviance(
    phi: &BasisMatrix,
    penalty: &Mat<f64>,
    y: &[f64],
    family: Family,
    lambda: f64,
    coef: &[f64],
) -> f64 {
    let mu: Vec<f64> =
        (0..y.len()).map(|j| family.inv_link(phi.row_dot(j, coef))).collect();
    family.deviance(y, &mu) + lambda * penalty_quad(penalty, coef)
}

/// trace(Phi (Phi' W Phi + lambda P)^-1 Phi' W) via a dense factorization.
fn effective_dof(
    phi: &BasisMatrix,
    penalty: &Mat<f64>,
    weights: &[f64],
    lambda: f64,
) -> Result<f64> {
    let k = phi.node_count();
    let n = phi.n_points();
    let (a, _) = assemble_system(phi, penalty, weights, &vec![0.0; n], lambda);
    let solver = SymSolver::new(&a).ok_or(Error::SingularSystem { lambda })?;
    // X = A^-1 Phi', one column per observation.
    let mut phit = Mat::zeros(k, n);
    for (j, row) in phi.rows().iter().enumerate() {
        if row.outside {
            continue;
        }
        for p in 0..3 {
            if row.weights[p] != 0.0 {
                phit[(row.indices[p], j)] += row.weights[p];
            }
        }
    }
    let x = solver.solve_mat(&phit);
    let mut trace = 0.0;
    for (j, row) in phi.rows().iter().enumerate() {
        if row.outside {
            continue;
        }
        let mut diag = 0.0;
        for p in 0..3 {
            if row.weights[p] != 0.0 {
                diag += row.weights[p] * x[(row.indices[p], j)];
            }
        }
        trace += weights[j] * diag;
    }
    Ok(trace)
}

/// Default grid: 20 logarithmically spaced values in [1e-6, 1e2], scaled by
/// n / trace(P) so the range adapts to the problem.
pub fn default_lambda_grid(n: usize, penalty_trace: f64, len: usize) -> Vec<f64> {
    let scale = n as f64 / penalty_trace;
    (0..len)
        .map(|i| {
            let expo = -6.0 + 8.0 * i as f64 / (len - 1) as f64;
            10f64.powf(expo) * scale
        })
        .collect()
}

/// Outcome of the unified smoothing-parameter search.
#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub grid: Vec<f64>,
    /// G x |grid| GCV scores; NaN where a gene failed to fit.
    pub per_gene_gcv: Vec<Vec<f64>>,
    /// Summed GCV per grid value; NaN where any gene failed.
    pub total_gcv: Vec<f64>,
    pub lambda_opt: f64,
    pub lambda_opt_index: usize,
}

/// Fitted basis coefficients for every gene, the clustering feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub genes: Vec<String>,
    /// G rows of length K.
    pub rows: Vec<Vec<f64>>,
}

impl CoefficientMatrix {
    pub fn gene_count(&self) -> usize {
        self.rows.len()
    }

    pub fn basis_count(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Fit every gene on every grid value, pick the lambda minimizing the summed
/// GCV (lowest lambda on ties), and return the coefficients refit at it.
pub fn select_lambda(
    phi: &BasisMatrix,
    penalties: &PenaltyMatrices,
    genes: &[String],
    responses: &[Vec<f64>],
    family: Family,
    grid: &[f64],
    opts: &FitOptions,
) -> Result<(LambdaSelection, CoefficientMatrix)> {
    init_backend();
    if grid.is_empty() {
        return Err(Error::InvalidConfig("lambda grid is empty".into()));
    }
    if grid.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
        return Err(Error::InvalidConfig("lambda grid values must be positive and finite".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("lambda grid must be strictly increasing".into()));
    }
    if genes.len() != responses.len() {
        return Err(Error::LengthMismatch { left: genes.len(), right: responses.len() });
    }

    for (g, y) in genes.iter().zip(responses) {
        if y.len() != phi.n_points() {
            return Err(Error::GeneFit {
                gene: g.clone(),
                source: Box::new(Error::LengthMismatch {
                    left: y.len(),
                    right: phi.n_points(),
                }),
            });
        }
        family.validate(y).map_err(|e| attach_gene(e, g))?;
    }

    if family == Family::Gaussian && phi.is_identity() {
        return select_lambda_gaussian_identity(penalties, genes, responses, grid);
    }

    let penalty = penalties.penalty();
    // Per-gene GCV curves, computed independently and reduced in gene order.
    let per_gene: Vec<Result<Vec<f64>>> = responses
        .par_iter()
        .map(|y| {
            let mut scores = Vec::with_capacity(grid.len());
            for &lambda in grid {
                match irls_fit(phi, penalty, y, family, lambda, opts) {
                    Ok(fit) => scores.push(fit.gcv),
                    Err(_) => scores.push(f64::NAN),
                }
            }
            Ok(scores)
        })
        .collect();
    let mut per_gene_gcv = Vec::with_capacity(genes.len());
    for (g, r) in genes.iter().zip(per_gene) {
        per_gene_gcv.push(r.map_err(|e| attach_gene(e, g))?);
    }

    let total_gcv: Vec<f64> = (0..grid.len())
        .map(|li| {
            let mut acc = 0.0;
            for row in &per_gene_gcv {
                if row[li].is_nan() {
                    return f64::NAN;
                }
                acc += row[li];
            }
            acc
        })
        .collect();
    let lambda_opt_index = argmin_finite(&total_gcv).ok_or(Error::NoEligibleLambda)?;
    let lambda_opt = grid[lambda_opt_index];

    let refit: Vec<Result<Vec<f64>>> = responses
        .par_iter()
        .map(|y| irls_fit(phi, penalty, y, family, lambda_opt, opts).map(|f| f.coefficients))
        .collect();
    let mut rows = Vec::with_capacity(genes.len());
    for (g, r) in genes.iter().zip(refit) {
        rows.push(r.map_err(|e| attach_gene(e, g))?);
    }

    Ok((
        LambdaSelection { grid: grid.to_vec(), per_gene_gcv, total_gcv, lambda_opt, lambda_opt_index },
        CoefficientMatrix { genes: genes.to_vec(), rows },
    ))
}

/// Gaussian family with the identity basis: every grid value shares one
/// eigendecomposition of P, so the whole search is a handful of dense
/// matrix products.
fn select_lambda_gaussian_identity(
    penalties: &PenaltyMatrices,
    genes: &[String],
    responses: &[Vec<f64>],
    grid: &[f64],
) -> Result<(LambdaSelection, CoefficientMatrix)> {
    let k = penalties.node_count();
    let g = genes.len();
    let (mut eig, u) = sym_eigen(penalties.penalty()).ok_or(Error::SingularMass)?;
    clip_null_eigenvalues(&mut eig);
    let y_mat = Mat::from_fn(k, g, |i, j| responses[j][i]);
    let yt = u.transpose() * &y_mat;

    let n = k;
    let mut per_gene_gcv = vec![Vec::with_capacity(grid.len()); g];
    let mut total_gcv = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let shrink: Vec<f64> = eig.iter().map(|&s| 1.0 / (1.0 + lambda * s)).collect();
        let edf: f64 = shrink.iter().sum();
        let mut total = 0.0;
        let mut saturated = false;
        for gi in 0..g {
            let dev: f64 = (0..k)
                .map(|ki| {
                    let r = (1.0 - shrink[ki]) * yt[(ki, gi)];
                    r * r
                })
                .sum();
            match gcv_score(dev, edf, n) {
                Ok(score) => {
                    per_gene_gcv[gi].push(score);
                    total += score;
                }
                Err(_) => {
                    per_gene_gcv[gi].push(f64::NAN);
                    saturated = true;
                }
            }
        }
        total_gcv.push(if saturated { f64::NAN } else { total });
    }
    let lambda_opt_index = argmin_finite(&total_gcv).ok_or(Error::NoEligibleLambda)?;
    let lambda_opt = grid[lambda_opt_index];

    let shrink: Vec<f64> = eig.iter().map(|&s| 1.0 / (1.0 + lambda_opt * s)).collect();
    let mut scaled = yt.clone();
    for ki in 0..k {
        for gi in 0..g {
            scaled[(ki, gi)] *= shrink[ki];
        }
    }
    let coef = &u * &scaled;
    let rows: Vec<Vec<f64>> = (0..g)
        .map(|gi| mat_col(&coef, gi))
        .collect();

    Ok((
        LambdaSelection { grid: grid.to_vec(), per_gene_gcv, total_gcv, lambda_opt, lambda_opt_index },
        CoefficientMatrix { genes: genes.to_vec(), rows },
    ))
}

fn attach_gene(e: Error, gene: &str) -> Error {
    match e {
        Error::NonFiniteResponse { spot, .. } => {
            Error::NonFiniteResponse { gene: gene.to_string(), spot }
        }
        other => Error::GeneFit { gene: gene.to_string(), source: Box::new(other) },
    }
}

/// Index of the smallest finite value; first occurrence wins ties.
fn argmin_finite(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        match best {
            None => best = Some((i, v)),
            Some((_, bv)) if v < bv => best = Some((i, v)),
            _ => {}
        }
    }
    best.map(|(i, _)| i)
}
