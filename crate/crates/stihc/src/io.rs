//! Dataset loading and writing, log1p normalization, and SVG rendering of
//! cluster mean spatial patterns.
//!
//! File formats:
//! - counts: TSV, header `gene<TAB>spot ids...`, one row per gene
//! - coordinates: CSV, header `spot_id,x,y`
//! - clusters: CSV `gene,cluster`; truth: CSV `gene,module`
//! - coefficients: CSV `gene,c_1,...,c_K` at 17 significant digits
//! - figures: SVG 1.1, spots as filled circles on a two-stop linear ramp
//!   (light `#F7FBFF` to dark `#08306B`) normalized per figure

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{io_err, Error, Result};
use crate::ihc::{cluster_centers, Partition};
use crate::mesh::{evaluate_basis, Mesh, Point, PointLocation, SpotGrid};
use crate::solver::{CoefficientMatrix, Family};

/// Spots-by-genes expression values with names, gene-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    pub genes: Vec<String>,
    pub spots: Vec<String>,
    /// G rows of n values.
    pub values: Vec<Vec<f64>>,
}

impl ExpressionMatrix {
    pub fn gene_count(&self) -> usize {
        self.genes.len()
    }

    pub fn spot_count(&self) -> usize {
        self.spots.len()
    }
}

/// A loaded dataset with the genes dropped by the zero-expression filter.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub expression: ExpressionMatrix,
    pub grid: SpotGrid,
    pub dropped_genes: Vec<String>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// Read the coordinates CSV (`spot_id,x,y`).
pub fn load_coords(path: &Path) -> Result<SpotGrid> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "spot_id,x,y" => {}
        Some((_, header)) => {
            return Err(parse_error(path, 1, format!("expected header \"spot_id,x,y\", found {header:?}")))
        }
        None => return Err(parse_error(path, 1, "file is empty")),
    }
    let mut ids = Vec::new();
    let mut pts = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_error(path, idx + 1, format!("expected 3 fields, found {}", fields.len())));
        }
        let x: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|e| parse_error(path, idx + 1, format!("bad x coordinate: {e}")))?;
        let y: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|e| parse_error(path, idx + 1, format!("bad y coordinate: {e}")))?;
        ids.push(fields[0].trim().to_string());
        pts.push(Point::new(x, y));
    }
    SpotGrid::new(ids, pts)
}

/// Read the counts TSV and align its columns to the coordinate order.
/// Genes whose total expression is zero are dropped and reported.
pub fn load_dataset(counts_path: &Path, coords_path: &Path) -> Result<LoadedDataset> {
    let grid = load_coords(coords_path)?;
    let text = fs::read_to_string(counts_path).map_err(io_err(counts_path))?;
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h,
        None => return Err(parse_error(counts_path, 1, "file is empty")),
    };
    let mut cols = header.split('\t');
    match cols.next() {
        Some("gene") => {}
        other => {
            return Err(parse_error(
                counts_path,
                1,
                format!("first header field must be \"gene\", found {other:?}"),
            ))
        }
    }
    let file_spots: Vec<String> = cols.map(|s| s.trim().to_string()).collect();
    // Column order in the counts file may differ from the coordinate file;
    // build the permutation and demand the same spot set on both sides.
    let mut index_of = std::collections::BTreeMap::new();
    for (i, id) in file_spots.iter().enumerate() {
        if index_of.insert(id.as_str(), i).is_some() {
            return Err(parse_error(counts_path, 1, format!("duplicate spot column {id:?}")));
        }
    }
    for id in file_spots.iter() {
        if !grid.ids().contains(id) {
            return Err(Error::UnknownSpot { spot_id: id.clone() });
        }
    }
    let mut perm = Vec::with_capacity(grid.len());
    for id in grid.ids() {
        match index_of.get(id.as_str()) {
            Some(&i) => perm.push(i),
            None => return Err(Error::MissingSpot { spot_id: id.clone() }),
        }
    }

    let mut genes = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut dropped = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let gene = fields.next().unwrap_or("").trim().to_string();
        if gene.is_empty() {
            return Err(parse_error(counts_path, idx + 1, "missing gene name"));
        }
        if !seen.insert(gene.clone()) {
            return Err(parse_error(counts_path, idx + 1, format!("duplicate gene {gene:?}")));
        }
        let raw: Vec<&str> = fields.collect();
        if raw.len() != file_spots.len() {
            return Err(parse_error(
                counts_path,
                idx + 1,
                format!("expected {} values, found {}", file_spots.len(), raw.len()),
            ));
        }
        let mut row = vec![0.0; raw.len()];
        for (dest, &src) in perm.iter().enumerate() {
            row[dest] = raw[src]
                .trim()
                .parse()
                .map_err(|e| parse_error(counts_path, idx + 1, format!("bad value: {e}")))?;
        }
        if row.iter().all(|&v| v == 0.0) {
            dropped.push(gene);
            continue;
        }
        genes.push(gene);
        values.push(row);
    }
    if genes.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    Ok(LoadedDataset {
        expression: ExpressionMatrix { genes, spots: grid.ids().to_vec(), values },
        grid,
        dropped_genes: dropped,
    })
}

pub fn write_coords(grid: &SpotGrid, path: &Path) -> Result<()> {
    let mut out = String::from("spot_id,x,y\n");
    for (id, p) in grid.ids().iter().zip(grid.coords()) {
        writeln!(out, "{id},{},{}", p.x, p.y).unwrap();
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn write_counts(expr: &ExpressionMatrix, path: &Path) -> Result<()> {
    let mut out = String::from("gene");
    for s in &expr.spots {
        out.push('\t');
        out.push_str(s);
    }
    out.push('\n');
    for (gene, row) in expr.genes.iter().zip(&expr.values) {
        out.push_str(gene);
        for v in row {
            write!(out, "\t{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// CSV of gene -> integer label, used for both cluster and truth files.
pub fn write_labels(genes: &[String], labels: &[usize], header: &str, path: &Path) -> Result<()> {
    let mut out = format!("{header}\n");
    for (g, l) in genes.iter().zip(labels) {
        writeln!(out, "{g},{l}").unwrap();
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn load_labels(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(parse_error(path, idx + 1, format!("expected 2 fields, found {}", fields.len())));
        }
        let label: usize = fields[1]
            .trim()
            .parse()
            .map_err(|e| parse_error(path, idx + 1, format!("bad label: {e}")))?;
        out.push((fields[0].trim().to_string(), label));
    }
    if out.is_empty() {
        return Err(parse_error(path, 1, "no label rows"));
    }
    Ok(out)
}

pub fn write_coefficients(coef: &CoefficientMatrix, path: &Path) -> Result<()> {
    let k = coef.basis_count();
    let mut out = String::from("gene");
    for i in 1..=k {
        write!(out, ",c_{i}").unwrap();
    }
    out.push('\n');
    for (gene, row) in coef.genes.iter().zip(&coef.rows) {
        out.push_str(gene);
        for v in row {
            write!(out, ",{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn load_coefficients(path: &Path) -> Result<CoefficientMatrix> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut genes = Vec::new();
    let mut rows = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let gene = fields.next().unwrap_or("").trim().to_string();
        let row: Vec<f64> = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_error(path, idx + 1, format!("bad coefficient: {e}")))?;
        if let Some(w) = width {
            if row.len() != w {
                return Err(parse_error(
                    path,
                    idx + 1,
                    format!("expected {w} coefficients, found {}", row.len()),
                ));
            }
        } else {
            width = Some(row.len());
        }
        genes.push(gene);
        rows.push(row);
    }
    if genes.is_empty() {
        return Err(parse_error(path, 1, "no coefficient rows"));
    }
    Ok(CoefficientMatrix { genes, rows })
}

/// Elementwise log(1 + x); negative inputs are rejected.
pub fn log1p_normalize(expr: &ExpressionMatrix) -> Result<ExpressionMatrix> {
    let mut values = Vec::with_capacity(expr.values.len());
    for (gene, row) in expr.genes.iter().zip(&expr.values) {
        let mut out = Vec::with_capacity(row.len());
        for (spot, &v) in row.iter().enumerate() {
            if v < 0.0 {
                return Err(Error::NegativeValue { gene: gene.clone(), spot, value: v });
            }
            out.push(v.ln_1p());
        }
        values.push(out);
    }
    Ok(ExpressionMatrix { genes: expr.genes.clone(), spots: expr.spots.clone(), values })
}

const RAMP_LIGHT: (u8, u8, u8) = (0xF7, 0xFB, 0xFF);
const RAMP_DARK: (u8, u8, u8) = (0x08, 0x30, 0x6B);

fn ramp_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: u8, b: u8| (a as f64 + t * (b as f64 - a as f64)).round() as u8;
    format!(
        "#{:02X}{:02X}{:02X}",
        lerp(RAMP_LIGHT.0, RAMP_DARK.0),
        lerp(RAMP_LIGHT.1, RAMP_DARK.1),
        lerp(RAMP_LIGHT.2, RAMP_DARK.2),
    )
}

struct Frame {
    min_x: f64,
    min_y: f64,
    scale: f64,
    width: f64,
    height: f64,
    margin: f64,
}

impl Frame {
    fn new(grid: &SpotGrid) -> Frame {
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in grid.coords() {
            min_x = min_x.min(p.x);
            max_x = max_x.max(p.x);
            min_y = min_y.min(p.y);
            max_y = max_y.max(p.y);
        }
        let span = (max_x - min_x).max(max_y - min_y).max(1e-12);
        let scale = 560.0 / span;
        Frame {
            min_x,
            min_y,
            scale,
            width: (max_x - min_x) * scale + 40.0,
            height: (max_y - min_y) * scale + 40.0,
            margin: 20.0,
        }
    }

    fn x(&self, x: f64) -> f64 {
        self.margin + (x - self.min_x) * self.scale
    }

    /// SVG y grows downward; flip so the tissue keeps its orientation.
    fn y(&self, y: f64) -> f64 {
        self.height - self.margin - (y - self.min_y) * self.scale
    }
}

fn svg_open(frame: &Frame, title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.0} {:.0}\">",
        frame.width, frame.height, frame.width, frame.height
    )
    .unwrap();
    writeln!(s, "<title>{title}</title>").unwrap();
    writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    s
}

/// Render one SVG per cluster showing the cluster's mean fitted field at the
/// spot locations, and optionally a smoothed surface sampled on a raster over
/// the hull. Returns the written paths.
pub fn render_cluster_means(
    mesh: &Mesh,
    coef: &CoefficientMatrix,
    partition: &Partition,
    grid: &SpotGrid,
    family: Family,
    out_dir: &Path,
    surfaces: bool,
) -> Result<Vec<PathBuf>> {
    if partition.len() != coef.gene_count() {
        return Err(Error::LengthMismatch { left: partition.len(), right: coef.gene_count() });
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let centers = cluster_centers(&coef.rows, partition);
    let basis = evaluate_basis(mesh, grid.coords());
    let frame = Frame::new(grid);
    let radius = (0.36 * 560.0 / (grid.len() as f64).sqrt()).clamp(1.5, 9.0);
    let mut written = Vec::new();
    for (p, center) in centers.iter().enumerate() {
        let values: Vec<f64> =
            (0..grid.len()).map(|j| family.inv_link(basis.row_dot(j, center))).collect();
        let (lo, hi) = min_max(&values);
        let mut svg = svg_open(&frame, &format!("cluster {p} mean spatial pattern"));
        for (j, pt) in grid.coords().iter().enumerate() {
            let t = if hi > lo { (values[j] - lo) / (hi - lo) } else { 0.5 };
            writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"{}\"/>",
                frame.x(pt.x),
                frame.y(pt.y),
                radius,
                ramp_color(t)
            )
            .unwrap();
        }
        svg.push_str("</svg>\n");
        let path = out_dir.join(format!("cluster_{p:02}.svg"));
        fs::write(&path, svg).map_err(io_err(&path))?;
        written.push(path);

        if surfaces {
            let path = out_dir.join(format!("cluster_{p:02}_surface.svg"));
            let svg = render_surface(mesh, center, family, &frame, p);
            fs::write(&path, svg).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Smoothed-surface variant: the FEM field sampled on a 200x200 raster of the
/// hull bounding box; cells outside the hull stay white.
fn render_surface(mesh: &Mesh, center: &[f64], family: Family, frame: &Frame, cluster: usize) -> String {
    const RASTER: usize = 200;
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in mesh.nodes() {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let dx = (max_x - min_x) / RASTER as f64;
    let dy = (max_y - min_y) / RASTER as f64;
    let mut samples: Vec<(usize, usize, f64)> = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for iy in 0..RASTER {
        for ix in 0..RASTER {
            let p = Point::new(min_x + (ix as f64 + 0.5) * dx, min_y + (iy as f64 + 0.5) * dy);
            if let PointLocation::Inside { triangle, barycentric } = mesh.locate_point(p) {
                let tri = mesh.triangles()[triangle];
                let eta: f64 =
                    (0..3).map(|k| barycentric[k] * center[tri[k]]).sum();
                let v = family.inv_link(eta);
                lo = lo.min(v);
                hi = hi.max(v);
                samples.push((ix, iy, v));
            }
        }
    }
    let mut svg = svg_open(frame, &format!("cluster {cluster} smoothed surface"));
    let cell_w = dx * frame.scale;
    let cell_h = dy * frame.scale;
    for (ix, iy, v) in samples {
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        let x = frame.x(min_x + ix as f64 * dx);
        let y = frame.y(min_y + (iy as f64 + 1.0) * dy);
        writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
            x,
            y,
            cell_w + 0.05,
            cell_h + 0.05,
            ramp_color(t)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn min_max(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ihc::Partition;
    use crate::mesh::build_delaunay;
    use crate::testutil::grid_of;

    fn tmpdir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("stihc-io-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn tiny_dataset() -> (ExpressionMatrix, SpotGrid) {
        let grid = grid_of(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        let expr = ExpressionMatrix {
            genes: vec!["ga".into(), "gb".into()],
            spots: grid.ids().to_vec(),
            values: vec![vec![1.0, 2.5, 0.0], vec![0.25, 0.0, 7.0]],
        };
        (expr, grid)
    }

    #[test]
    fn counts_round_trip_exact() {
        let dir = tmpdir("roundtrip");
        let (expr, grid) = tiny_dataset();
        // Perturb with values that stress float printing.
        let mut expr = expr;
        expr.values[0][1] = 0.1 + 0.2; // 0.30000000000000004
        expr.values[1][2] = 1.0 / 3.0;
        write_counts(&expr, &dir.join("counts.tsv")).unwrap();
        write_coords(&grid, &dir.join("coords.csv")).unwrap();
        let loaded = load_dataset(&dir.join("counts.tsv"), &dir.join("coords.csv")).unwrap();
        assert_eq!(loaded.expression, expr);
        assert_eq!(loaded.grid.ids(), grid.ids());
        for (a, b) in loaded.grid.coords().iter().zip(grid.coords()) {
            assert_eq!(a, b);
        }
        assert!(loaded.dropped_genes.is_empty());
    }

    #[test]
    fn zero_gene_dropped_with_warning() {
        let dir = tmpdir("zerodrop");
        let (mut expr, grid) = tiny_dataset();
        expr.values[1] = vec![0.0, 0.0, 0.0];
        write_counts(&expr, &dir.join("counts.tsv")).unwrap();
        write_coords(&grid, &dir.join("coords.csv")).unwrap();
        let loaded = load_dataset(&dir.join("counts.tsv"), &dir.join("coords.csv")).unwrap();
        assert_eq!(loaded.expression.gene_count(), 1);
        assert_eq!(loaded.dropped_genes, vec!["gb".to_string()]);
    }

    #[test]
    fn unknown_spot_rejected() {
        let dir = tmpdir("unknown");
        let (expr, grid) = tiny_dataset();
        let mut wrong = expr.clone();
        wrong.spots[2] = "mystery".into();
        write_counts(&wrong, &dir.join("counts.tsv")).unwrap();
        write_coords(&grid, &dir.join("coords.csv")).unwrap();
        match load_dataset(&dir.join("counts.tsv"), &dir.join("coords.csv")) {
            Err(Error::UnknownSpot { spot_id }) => assert_eq!(spot_id, "mystery"),
            other => panic!("expected UnknownSpot, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_carries_line_number() {
        let dir = tmpdir("badline");
        let (expr, grid) = tiny_dataset();
        write_coords(&grid, &dir.join("coords.csv")).unwrap();
        write_counts(&expr, &dir.join("counts.tsv")).unwrap();
        let mut text = fs::read_to_string(dir.join("counts.tsv")).unwrap();
        text.push_str("gc\t1.0\tnot_a_number\t3\n");
        fs::write(dir.join("counts.tsv"), text).unwrap();
        match load_dataset(&dir.join("counts.tsv"), &dir.join("coords.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn log1p_examples() {
        let (mut expr, _) = tiny_dataset();
        expr.values[0] = vec![0.0, std::f64::consts::E - 1.0, 3.0];
        let out = log1p_normalize(&expr).unwrap();
        assert_eq!(out.values[0][0], 0.0);
        assert!((out.values[0][1] - 1.0).abs() < 1e-15);
        let zeros = ExpressionMatrix {
            genes: vec!["z".into()],
            spots: expr.spots.clone(),
            values: vec![vec![0.0, 0.0, 0.0]],
        };
        assert!(log1p_normalize(&zeros).unwrap().values[0].iter().all(|&v| v == 0.0));
        expr.values[0][0] = -1.0;
        match log1p_normalize(&expr) {
            Err(Error::NegativeValue { spot: 0, .. }) => {}
            other => panic!("expected NegativeValue, got {other:?}"),
        }
    }

    #[test]
    fn coefficients_round_trip() {
        let dir = tmpdir("coef");
        let coef = CoefficientMatrix {
            genes: vec!["a".into(), "b".into()],
            rows: vec![vec![1.0 / 3.0, -2.5e-8], vec![7.25, 0.1 + 0.2]],
        };
        write_coefficients(&coef, &dir.join("c.csv")).unwrap();
        let loaded = load_coefficients(&dir.join("c.csv")).unwrap();
        assert_eq!(loaded.genes, coef.genes);
        for (a, b) in loaded.rows.iter().flatten().zip(coef.rows.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits(), "17 significant digits round-trip exactly");
        }
    }

    #[test]
    fn labels_round_trip() {
        let dir = tmpdir("labels");
        let genes = vec!["a".to_string(), "b".to_string()];
        write_labels(&genes, &[1, 0], "gene,cluster", &dir.join("l.csv")).unwrap();
        let loaded = load_labels(&dir.join("l.csv")).unwrap();
        assert_eq!(loaded, vec![("a".to_string(), 1), ("b".to_string(), 0)]);
    }

    #[test]
    fn rendering_is_deterministic_and_counts_match() {
        let dir = tmpdir("render");
        let grid = grid_of(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.5, 0.55)]);
        let mesh = build_delaunay(&grid).unwrap();
        let coef = CoefficientMatrix {
            genes: (0..4).map(|i| format!("g{i}")).collect(),
            rows: vec![
                vec![0.0, 1.0, 2.0, 3.0, 1.5],
                vec![0.1, 1.1, 2.1, 3.1, 1.6],
                vec![3.0, 2.0, 1.0, 0.0, 1.5],
                vec![2.0, 2.0, 2.0, 2.0, 2.0],
            ],
        };
        let partition = Partition::from_labels(&[0, 0, 1, 2]);
        let paths = render_cluster_means(
            &mesh,
            &coef,
            &partition,
            &grid,
            Family::Gaussian,
            &dir.join("a"),
            true,
        )
        .unwrap();
        assert_eq!(paths.len(), 6, "3 clusters, spot figure plus surface each");
        let again = render_cluster_means(
            &mesh,
            &coef,
            &partition,
            &grid,
            Family::Gaussian,
            &dir.join("b"),
            true,
        )
        .unwrap();
        for (p1, p2) in paths.iter().zip(&again) {
            assert_eq!(fs::read(p1).unwrap(), fs::read(p2).unwrap(), "byte-identical SVGs");
        }
        // The constant field renders in a single color.
        let constant = fs::read_to_string(dir.join("a").join("cluster_02.svg")).unwrap();
        let fills: std::collections::BTreeSet<&str> = constant
            .lines()
            .filter(|l| l.starts_with("<circle"))
            .map(|l| l.split("fill=\"").nth(1).unwrap().split('"').next().unwrap())
            .collect();
        assert_eq!(fills.len(), 1);
        // A singleton cluster renders that gene's own field: its figure uses
        // the same values as the member row.
        let single = fs::read_to_string(dir.join("a").join("cluster_01.svg")).unwrap();
        assert!(single.contains("<circle"));
    }
}
