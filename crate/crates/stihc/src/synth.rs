//! Synthetic spatial-expression datasets with planted co-expression modules.
//!
//! Four Gaussian-bump mean fields stand in for the representative spatial
//! patterns of the four modules: a corner bump, a thin ridge along one edge,
//! a central blob, and a broad diffuse field. Counts are drawn independently
//! per (gene, spot) from a counter-based random stream keyed by
//! (seed, gene, spot), so generation order never affects the data.

use crate::error::{Error, Result};
use crate::io::ExpressionMatrix;
use crate::mesh::{Point, SpotGrid};

/// Deterministic stream for one (seed, gene, spot) key.
#[derive(Debug, Clone)]
pub struct StreamRng {
    state: u64,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl StreamRng {
    pub fn for_key(seed: u64, a: u64, b: u64) -> StreamRng {
        let s = mix(mix(mix(seed) ^ a.wrapping_mul(0x9E3779B97F4A7C15))
            ^ b.wrapping_mul(0xC2B2AE3D27D4EB4F));
        StreamRng { state: s }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in (0, 1]; safe for logarithms.
    fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Poisson by inversion; one multiplication per unit of mean.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let limit = (-mean).exp();
        let mut k = 0u64;
        let mut p = 1.0;
        loop {
            p *= self.uniform_open();
            if p <= limit || k > 10_000 {
                return k;
            }
            k += 1;
        }
    }

    /// Gamma(shape, scale 1) via Marsaglia-Tsang for shape >= 1.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        debug_assert!(shape >= 1.0);
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = (1.0 + c * x).powi(3);
            if v <= 0.0 {
                continue;
            }
            let u = self.uniform_open();
            if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
                return d * v;
            }
        }
    }

    /// Negative binomial as a gamma-Poisson mixture with the given mean and
    /// dispersion (variance = mean + mean^2 / dispersion).
    pub fn neg_binomial(&mut self, mean: f64, dispersion: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let lambda = self.gamma(dispersion) * (mean / dispersion);
        self.poisson(lambda)
    }
}

/// One isotropic-or-stretched Gaussian component of a mean field.
#[derive(Debug, Clone, Copy)]
pub struct GaussianBump {
    pub center: (f64, f64),
    pub sigma: (f64, f64),
    pub amplitude: f64,
}

/// Mean-field definition of one module's representative pattern.
#[derive(Debug, Clone)]
pub struct PatternSpec {
    pub id: usize,
    pub bumps: Vec<GaussianBump>,
    pub baseline: f64,
    pub module_size: usize,
}

impl PatternSpec {
    pub fn field(&self, p: Point) -> f64 {
        let mut v = self.baseline;
        for b in &self.bumps {
            let dx = (p.x - b.center.0) / b.sigma.0;
            let dy = (p.y - b.center.1) / b.sigma.1;
            v += b.amplitude * (-0.5 * (dx * dx + dy * dy)).exp();
        }
        v
    }
}

/// Count noise applied around the mean field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    Poisson,
    NegBinomial { dispersion: f64 },
}

impl NoiseModel {
    fn sample(self, rng: &mut StreamRng, mean: f64) -> f64 {
        match self {
            NoiseModel::Poisson => rng.poisson(mean) as f64,
            NoiseModel::NegBinomial { dispersion } => rng.neg_binomial(mean, dispersion) as f64,
        }
    }
}

/// The three simulation regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// 100 genes, four modules of 25, full grid.
    Balanced,
    /// 49 genes in modules of 6, 2, 16, and 25, full grid.
    Imbalanced,
    /// The imbalanced modules observed at 260 randomly sampled spots.
    Sparse,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Balanced => "balanced",
            ScenarioKind::Imbalanced => "imbalanced",
            ScenarioKind::Sparse => "sparse",
        }
    }

    pub fn parse(s: &str) -> Result<ScenarioKind> {
        match s {
            "balanced" => Ok(ScenarioKind::Balanced),
            "imbalanced" => Ok(ScenarioKind::Imbalanced),
            "sparse" => Ok(ScenarioKind::Sparse),
            other => Err(Error::InvalidConfig(format!(
                "unknown scenario {other:?}; expected balanced, imbalanced, or sparse"
            ))),
        }
    }

    pub fn module_sizes(self) -> [usize; 4] {
        match self {
            ScenarioKind::Balanced => [25, 25, 25, 25],
            ScenarioKind::Imbalanced | ScenarioKind::Sparse => [6, 2, 16, 25],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub noise: NoiseModel,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, seed: u64) -> Scenario {
        Scenario { kind, seed, noise: NoiseModel::NegBinomial { dispersion: 10.0 } }
    }
}

/// Hex-offset spot layout trimmed to the target spot count; mimics one
/// capture-area slice.
pub const FULL_GRID_SPOTS: usize = 2696;
pub const SPARSE_SPOTS: usize = 260;

pub fn visium_like_grid() -> SpotGrid {
    let side = 52usize;
    let dy = 3f64.sqrt() / 2.0;
    let mut pts = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let x = col as f64 + if row % 2 == 1 { 0.5 } else { 0.0 };
            pts.push(Point::new(x, row as f64 * dy));
        }
    }
    // Trim the farthest points from the centroid down to the target count.
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / pts.len() as f64;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / pts.len() as f64;
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (pts[a].x - cx).powi(2) + (pts[a].y - cy).powi(2);
        let db = (pts[b].x - cx).powi(2) + (pts[b].y - cy).powi(2);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = order.into_iter().take(FULL_GRID_SPOTS).collect();
    keep.sort_unstable();
    let ids = (0..keep.len()).map(|i| format!("spot_{:04}", i + 1)).collect();
    let coords = keep.iter().map(|&i| pts[i]).collect();
    SpotGrid::new(ids, coords).expect("trimmed grid is valid")
}

/// The four planted patterns over the default grid extent (about 52 x 45
/// tissue units): corner bump, thin edge ridge, central blob, broad diffuse
/// field.
pub fn default_patterns(sizes: [usize; 4]) -> Vec<PatternSpec> {
    vec![
        PatternSpec {
            id: 0,
            bumps: vec![GaussianBump {
                center: (42.0, 36.0),
                sigma: (5.0, 5.0),
                amplitude: 30.0,
            }],
            baseline: 0.5,
            module_size: sizes[0],
        },
        PatternSpec {
            id: 1,
            // A thin bright ridge along the bottom edge plus a weak halo; the
            // halo keeps the field strictly ordered by ridge proximity across
            // the whole slice, so a smoothed fit still ranks like the truth.
            bumps: vec![
                GaussianBump { center: (26.0, 2.5), sigma: (16.0, 2.2), amplitude: 30.0 },
                GaussianBump { center: (26.0, 2.5), sigma: (20.0, 10.0), amplitude: 5.0 },
            ],
            baseline: 0.5,
            module_size: sizes[1],
        },
        PatternSpec {
            id: 2,
            bumps: vec![GaussianBump {
                center: (24.0, 24.0),
                sigma: (6.5, 6.5),
                amplitude: 30.0,
            }],
            baseline: 0.5,
            module_size: sizes[2],
        },
        PatternSpec {
            id: 3,
            bumps: vec![GaussianBump {
                center: (2.0, 26.0),
                sigma: (11.0, 15.0),
                amplitude: 16.0,
            }],
            baseline: 0.5,
            module_size: sizes[3],
        },
    ]
}

/// A generated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub expression: ExpressionMatrix,
    pub grid: SpotGrid,
    pub truth: Vec<usize>,
    pub patterns: Vec<PatternSpec>,
}

const SCALE_STREAM: u64 = u64::MAX;
const SUBSAMPLE_STREAM: u64 = u64::MAX - 1;

/// Generate counts for the scenario. Every gene draws its per-spot counts
/// from the noise model around its module's field scaled by a per-gene
/// factor in [0.8, 1.25]; all randomness is keyed by (seed, gene, spot).
pub fn generate_dataset(scenario: &Scenario) -> Result<SimulatedDataset> {
    let grid = visium_like_grid();
    let sizes = scenario.kind.module_sizes();
    let patterns = default_patterns(sizes);
    assert_patterns_separated(&patterns, &grid)?;

    let g: usize = sizes.iter().sum();
    let n = grid.len();
    let mut genes = Vec::with_capacity(g);
    let mut truth = Vec::with_capacity(g);
    let mut values = Vec::with_capacity(g);
    let mut gene_idx = 0usize;
    for pattern in &patterns {
        let field: Vec<f64> = grid.coords().iter().map(|&p| pattern.field(p)).collect();
        for _ in 0..pattern.module_size {
            let scale =
                StreamRng::for_key(scenario.seed, gene_idx as u64, SCALE_STREAM).range(0.8, 1.25);
            let mut row = Vec::with_capacity(n);
            for (j, &f) in field.iter().enumerate() {
                let mut rng = StreamRng::for_key(scenario.seed, gene_idx as u64, j as u64);
                row.push(scenario.noise.sample(&mut rng, scale * f));
            }
            genes.push(format!("gene_{:03}", gene_idx + 1));
            truth.push(pattern.id);
            values.push(row);
            gene_idx += 1;
        }
    }
    let expression =
        ExpressionMatrix { genes, spots: grid.ids().to_vec(), values };
    let mut dataset = SimulatedDataset { expression, grid, truth, patterns };
    if scenario.kind == ScenarioKind::Sparse {
        let (expr, grid) = subsample_spots(&dataset.expression, &dataset.grid, SPARSE_SPOTS, scenario.seed)?;
        dataset.expression = expr;
        dataset.grid = grid;
    }
    Ok(dataset)
}

/// Distinct module fields must stay clearly distinguishable: pairwise
/// Spearman correlation below 0.5 at the spot locations.
fn assert_patterns_separated(patterns: &[PatternSpec], grid: &SpotGrid) -> Result<()> {
    for i in 0..patterns.len() {
        for j in (i + 1)..patterns.len() {
            let fi: Vec<f64> = grid.coords().iter().map(|&p| patterns[i].field(p)).collect();
            let fj: Vec<f64> = grid.coords().iter().map(|&p| patterns[j].field(p)).collect();
            let rho = crate::ihc::spearman_rho(&fi, &fj).unwrap_or(0.0);
            if rho >= 0.5 {
                return Err(Error::InvalidConfig(format!(
                    "patterns {i} and {j} correlate at {rho:.3}; geometry must keep them below 0.5"
                )));
            }
        }
    }
    Ok(())
}

/// Uniform random subset of spots without replacement, preserving spot
/// order; deterministic for a fixed seed.
pub fn subsample_spots(
    expr: &ExpressionMatrix,
    grid: &SpotGrid,
    n_keep: usize,
    seed: u64,
) -> Result<(ExpressionMatrix, SpotGrid)> {
    let n = grid.len();
    if n_keep < 3 {
        return Err(Error::TooFewSpots { requested: n_keep });
    }
    if n_keep >= n {
        return Ok((expr.clone(), grid.clone()));
    }
    let mut rng = StreamRng::for_key(seed, SUBSAMPLE_STREAM, 0);
    let mut indices: Vec<usize> = (0..n).collect();
    // Fisher-Yates; the first n_keep entries form the sample.
    for i in 0..n_keep {
        let j = i + (rng.next_u64() % (n - i) as u64) as usize;
        indices.swap(i, j);
    }
    let mut keep: Vec<usize> = indices[..n_keep].to_vec();
    keep.sort_unstable();
    let sub_grid = grid.subset(&keep)?;
    let values: Vec<Vec<f64>> = expr
        .values
        .iter()
        .map(|row| keep.iter().map(|&j| row[j]).collect())
        .collect();
    let expression = ExpressionMatrix {
        genes: expr.genes.clone(),
        spots: sub_grid.ids().to_vec(),
        values,
    };
    Ok((expression, sub_grid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_target_spot_count() {
        let grid = visium_like_grid();
        assert_eq!(grid.len(), FULL_GRID_SPOTS);
    }

    #[test]
    fn balanced_scenario_shape() {
        let data = generate_dataset(&Scenario::new(ScenarioKind::Balanced, 1)).unwrap();
        assert_eq!(data.expression.gene_count(), 100);
        assert_eq!(data.expression.spot_count(), FULL_GRID_SPOTS);
        let mut sizes = [0usize; 4];
        for &t in &data.truth {
            sizes[t] += 1;
        }
        assert_eq!(sizes, [25, 25, 25, 25]);
    }

    #[test]
    fn imbalanced_scenario_sizes() {
        let data = generate_dataset(&Scenario::new(ScenarioKind::Imbalanced, 1)).unwrap();
        assert_eq!(data.expression.gene_count(), 49);
        let mut sizes = [0usize; 4];
        for &t in &data.truth {
            sizes[t] += 1;
        }
        assert_eq!(sizes, [6, 2, 16, 25]);
    }

    #[test]
    fn sparse_scenario_keeps_genes_drops_spots() {
        let data = generate_dataset(&Scenario::new(ScenarioKind::Sparse, 1)).unwrap();
        assert_eq!(data.expression.gene_count(), 49);
        assert_eq!(data.expression.spot_count(), SPARSE_SPOTS);
        assert_eq!(data.grid.len(), SPARSE_SPOTS);
    }

    #[test]
    fn within_module_fields_rank_identical_and_across_separated() {
        let grid = visium_like_grid();
        let patterns = default_patterns([25, 25, 25, 25]);
        // Same pattern scaled by different positive factors has Spearman 1.
        let f: Vec<f64> = grid.coords().iter().map(|&p| patterns[0].field(p)).collect();
        let scaled: Vec<f64> = f.iter().map(|v| 1.25 * v).collect();
        assert_eq!(crate::ihc::spearman_rho(&f, &scaled).unwrap(), 1.0);
        assert_patterns_separated(&patterns, &grid).unwrap();
    }

    #[test]
    fn generation_deterministic_and_order_free() {
        let s = Scenario::new(ScenarioKind::Imbalanced, 42);
        let a = generate_dataset(&s).unwrap();
        let b = generate_dataset(&s).unwrap();
        assert_eq!(a.expression, b.expression);
        // Counter-based streams: a single (gene, spot) value can be
        // regenerated in isolation.
        let pattern = &a.patterns[a.truth[7]];
        let scale = StreamRng::for_key(42, 7, super::SCALE_STREAM).range(0.8, 1.25);
        let mean = scale * pattern.field(a.grid.coords()[123]);
        let mut rng = StreamRng::for_key(42, 7, 123);
        let v = s.noise.sample(&mut rng, mean);
        assert_eq!(a.expression.values[7][123], v);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_dataset(&Scenario::new(ScenarioKind::Imbalanced, 1)).unwrap();
        let b = generate_dataset(&Scenario::new(ScenarioKind::Imbalanced, 2)).unwrap();
        assert_ne!(a.expression, b.expression);
    }

    #[test]
    fn poisson_mean_concentrates_on_baseline() {
        // Zero-amplitude pattern: every draw has mean equal to the baseline.
        let grid = visium_like_grid();
        let n = grid.len();
        let baseline = 4.0;
        let mut total = 0.0;
        for j in 0..n {
            let mut rng = StreamRng::for_key(9, 0, j as u64);
            total += rng.poisson(baseline) as f64;
        }
        let mean = total / n as f64;
        let tol = 3.0 * (baseline / n as f64).sqrt();
        assert!((mean - baseline).abs() < tol, "mean {mean} vs {baseline} (tol {tol})");
    }

    #[test]
    fn neg_binomial_has_overdispersion() {
        let mut rng = StreamRng::for_key(5, 1, 2);
        let mean = 10.0;
        let r = 10.0;
        let draws: Vec<f64> = (0..20_000).map(|_| rng.neg_binomial(mean, r) as f64).collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / draws.len() as f64;
        assert!((m - mean).abs() < 0.3, "sample mean {m}");
        let expected_var = mean + mean * mean / r;
        assert!(
            (var - expected_var).abs() < 0.15 * expected_var,
            "sample variance {var} vs {expected_var}"
        );
    }

    #[test]
    fn subsample_identity_and_determinism() {
        let data = generate_dataset(&Scenario::new(ScenarioKind::Imbalanced, 3)).unwrap();
        let (e_same, g_same) =
            subsample_spots(&data.expression, &data.grid, data.grid.len(), 11).unwrap();
        assert_eq!(e_same, data.expression);
        assert_eq!(g_same.ids(), data.grid.ids());
        let (e1, g1) = subsample_spots(&data.expression, &data.grid, 260, 11).unwrap();
        let (e2, g2) = subsample_spots(&data.expression, &data.grid, 260, 11).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(g1.ids(), g2.ids());
        assert_eq!(g1.len(), 260);
        assert_eq!(e1.gene_count(), data.expression.gene_count());
        match subsample_spots(&data.expression, &data.grid, 2, 1) {
            Err(Error::TooFewSpots { requested: 2 }) => {}
            other => panic!("expected TooFewSpots, got {other:?}"),
        }
    }
}
