//! Delaunay triangulation of spot locations and the piecewise-linear
//! basis functions defined on it.
//!
//! The triangulation is built incrementally in input order. Each new point is
//! located by walking the current triangulation, inserted by splitting the
//! containing triangle (or edge, or by fanning out from the visible hull when
//! the point lies outside), and the surrounding edges are then flipped until
//! the empty-circumcircle property holds again. Cocircular ties are resolved
//! toward the diagonal containing the lowest node index, which makes the
//! construction fully deterministic.

use crate::error::{Error, Result};

/// A 2D location in tissue coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Spot identifiers and their 2D locations.
///
/// Invariants enforced at construction: ids unique, coordinates finite and
/// pairwise distinct, at least 3 spots.
#[derive(Debug, Clone)]
pub struct SpotGrid {
    spot_ids: Vec<String>,
    coords: Vec<Point>,
}

impl SpotGrid {
    pub fn new(spot_ids: Vec<String>, coords: Vec<Point>) -> Result<Self> {
        if spot_ids.len() != coords.len() {
            return Err(Error::InvalidConfig(format!(
                "{} spot ids but {} coordinates",
                spot_ids.len(),
                coords.len()
            )));
        }
        if spot_ids.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "need at least 3 spots, got {}",
                spot_ids.len()
            )));
        }
        for (id, p) in spot_ids.iter().zip(&coords) {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::NonFiniteCoordinate { id: id.clone() });
            }
        }
        let mut by_id: Vec<usize> = (0..spot_ids.len()).collect();
        by_id.sort_by(|&i, &j| spot_ids[i].cmp(&spot_ids[j]));
        for w in by_id.windows(2) {
            if spot_ids[w[0]] == spot_ids[w[1]] {
                return Err(Error::DuplicateSpotId { id: spot_ids[w[0]].clone() });
            }
        }
        let mut by_coord: Vec<usize> = (0..coords.len()).collect();
        by_coord.sort_by(|&i, &j| {
            coords[i]
                .x
                .total_cmp(&coords[j].x)
                .then(coords[i].y.total_cmp(&coords[j].y))
        });
        for w in by_coord.windows(2) {
            let (i, j) = (w[0], w[1]);
            if coords[i].x == coords[j].x && coords[i].y == coords[j].y {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                return Err(Error::DuplicatePoint {
                    a: spot_ids[a].clone(),
                    b: spot_ids[b].clone(),
                    x: coords[i].x,
                    y: coords[i].y,
                });
            }
        }
        Ok(SpotGrid { spot_ids, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.spot_ids
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    /// Keep only the spots at `indices`, preserving the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<SpotGrid> {
        let ids = indices.iter().map(|&i| self.spot_ids[i].clone()).collect();
        let pts = indices.iter().map(|&i| self.coords[i]).collect();
        SpotGrid::new(ids, pts)
    }
}

/// Signed twice-area of triangle (a, b, c); positive when counterclockwise.
/// Also returns a magnitude scale for relative tolerance tests.
fn orient(a: Point, b: Point, c: Point) -> (f64, f64) {
    let l = (b.x - a.x) * (c.y - a.y);
    let r = (b.y - a.y) * (c.x - a.x);
    (l - r, l.abs() + r.abs())
}

/// Incircle determinant: positive when `d` lies strictly inside the
/// circumcircle of counterclockwise (a, b, c). Returns (det, magnitude).
fn incircle(a: Point, b: Point, c: Point, d: Point) -> (f64, f64) {
    let adx = a.x - d.x;
    let ady = a.y - d.y;
    let bdx = b.x - d.x;
    let bdy = b.y - d.y;
    let cdx = c.x - d.x;
    let cdy = c.y - d.y;
    let ad2 = adx * adx + ady * ady;
    let bd2 = bdx * bdx + bdy * bdy;
    let cd2 = cdx * cdx + cdy * cdy;
    let t1 = adx * (bdy * cd2 - cdy * bd2);
    let t2 = ady * (bdx * cd2 - cdx * bd2);
    let t3 = ad2 * (bdx * cdy - cdx * bdy);
    let det = t1 - t2 + t3;
    let mag = t1.abs() + t2.abs() + t3.abs();
    (det, mag)
}

const ORIENT_TOL: f64 = 1e-12;
const INCIRCLE_TOL: f64 = 1e-12;
const NONE: usize = usize::MAX;

fn next_edge(e: usize) -> usize {
    if e % 3 == 2 {
        e - 2
    } else {
        e + 1
    }
}

fn prev_edge(e: usize) -> usize {
    if e.is_multiple_of(3) {
        e + 2
    } else {
        e - 1
    }
}

enum Located {
    InTriangle(usize),
    OnEdge(usize),
    Outside,
}

struct Builder<'a> {
    pts: &'a [Point],
    /// Flat triangle vertex list, 3 entries per triangle, counterclockwise.
    triangles: Vec<usize>,
    /// Twin halfedge ids; `NONE` marks a hull edge.
    halfedges: Vec<usize>,
    alive: Vec<bool>,
    walk_start: usize,
}

impl<'a> Builder<'a> {
    fn new(pts: &'a [Point]) -> Result<Self> {
        // Seed triangle: points 0, 1, and the first point not collinear with them.
        let mut seed = None;
        for j in 2..pts.len() {
            let (det, mag) = orient(pts[0], pts[1], pts[j]);
            if det.abs() > ORIENT_TOL * mag.max(1e-300) {
                seed = Some((j, det > 0.0));
                break;
            }
        }
        let (seed_j, ccw) = seed.ok_or(Error::CollinearInput)?;
        let mut b = Builder {
            pts,
            triangles: Vec::with_capacity(6 * pts.len()),
            halfedges: Vec::with_capacity(6 * pts.len()),
            alive: Vec::with_capacity(2 * pts.len()),
            walk_start: 0,
        };
        if ccw {
            b.add_triangle(0, 1, seed_j);
        } else {
            b.add_triangle(0, seed_j, 1);
        }
        for i in (2..pts.len()).filter(|&i| i != seed_j) {
            b.insert(i);
        }
        Ok(b)
    }

    fn add_triangle(&mut self, a: usize, b: usize, c: usize) -> usize {
        let t = self.alive.len();
        self.triangles.extend_from_slice(&[a, b, c]);
        self.halfedges.extend_from_slice(&[NONE, NONE, NONE]);
        self.alive.push(true);
        t
    }

    fn kill(&mut self, t: usize) {
        self.alive[t] = false;
    }

    fn link(&mut self, a: usize, b: usize) {
        if a != NONE {
            self.halfedges[a] = b;
        }
        if b != NONE {
            self.halfedges[b] = a;
        }
    }

    fn tri_points(&self, t: usize) -> (Point, Point, Point) {
        (
            self.pts[self.triangles[3 * t]],
            self.pts[self.triangles[3 * t + 1]],
            self.pts[self.triangles[3 * t + 2]],
        )
    }

    fn locate(&self, p: Point) -> Located {
        let mut t = if self.alive[self.walk_start] {
            self.walk_start
        } else {
            (0..self.alive.len()).find(|&t| self.alive[t]).unwrap()
        };
        let cap = 4 * self.alive.len() + 16;
        for _ in 0..cap {
            let (a, b, c) = self.tri_points(t);
            let (o0, m0) = orient(a, b, p);
            let (o1, m1) = orient(b, c, p);
            let (o2, m2) = orient(c, a, p);
            let tol0 = ORIENT_TOL * m0.max(1e-300);
            let tol1 = ORIENT_TOL * m1.max(1e-300);
            let tol2 = ORIENT_TOL * m2.max(1e-300);
            // Cross the most violated edge first.
            let mut worst = (0.0f64, usize::MAX);
            if o0 < -tol0 && -o0 > worst.0 {
                worst = (-o0, 0);
            }
            if o1 < -tol1 && -o1 > worst.0 {
                worst = (-o1, 1);
            }
            if o2 < -tol2 && -o2 > worst.0 {
                worst = (-o2, 2);
            }
            if worst.1 == usize::MAX {
                // Inside or on an edge.
                if o0 <= tol0 {
                    return Located::OnEdge(3 * t);
                }
                if o1 <= tol1 {
                    return Located::OnEdge(3 * t + 1);
                }
                if o2 <= tol2 {
                    return Located::OnEdge(3 * t + 2);
                }
                return Located::InTriangle(t);
            }
            let twin = self.halfedges[3 * t + worst.1];
            if twin == NONE {
                return Located::Outside;
            }
            t = twin / 3;
        }
        self.locate_exhaustive(p)
    }

    fn locate_exhaustive(&self, p: Point) -> Located {
        for t in 0..self.alive.len() {
            if !self.alive[t] {
                continue;
            }
            let (a, b, c) = self.tri_points(t);
            let (o0, m0) = orient(a, b, p);
            let (o1, m1) = orient(b, c, p);
            let (o2, m2) = orient(c, a, p);
            let tol0 = ORIENT_TOL * m0.max(1e-300);
            let tol1 = ORIENT_TOL * m1.max(1e-300);
            let tol2 = ORIENT_TOL * m2.max(1e-300);
            if o0 >= -tol0 && o1 >= -tol1 && o2 >= -tol2 {
                if o0 <= tol0 {
                    return Located::OnEdge(3 * t);
                }
                if o1 <= tol1 {
                    return Located::OnEdge(3 * t + 1);
                }
                if o2 <= tol2 {
                    return Located::OnEdge(3 * t + 2);
                }
                return Located::InTriangle(t);
            }
        }
        Located::Outside
    }

    fn insert(&mut self, p: usize) {
        match self.locate(self.pts[p]) {
            Located::InTriangle(t) => self.split_triangle(t, p),
            Located::OnEdge(e) => self.split_edge(e, p),
            Located::Outside => self.insert_outside(p),
        }
    }

    fn split_triangle(&mut self, t: usize, p: usize) {
        let (a, b, c) = (
            self.triangles[3 * t],
            self.triangles[3 * t + 1],
            self.triangles[3 * t + 2],
        );
        let (n_ab, n_bc, n_ca) = (
            self.halfedges[3 * t],
            self.halfedges[3 * t + 1],
            self.halfedges[3 * t + 2],
        );
        self.kill(t);
        let t1 = self.add_triangle(p, a, b);
        let t2 = self.add_triangle(p, b, c);
        let t3 = self.add_triangle(p, c, a);
        self.link(3 * t1 + 1, n_ab);
        self.link(3 * t2 + 1, n_bc);
        self.link(3 * t3 + 1, n_ca);
        self.link(3 * t1 + 2, 3 * t2);
        self.link(3 * t2 + 2, 3 * t3);
        self.link(3 * t3 + 2, 3 * t1);
        self.walk_start = t1;
        self.legalize(3 * t1 + 1);
        self.legalize(3 * t2 + 1);
        self.legalize(3 * t3 + 1);
    }

    fn split_edge(&mut self, e: usize, p: usize) {
        let t = e / 3;
        let u = self.triangles[e];
        let v = self.triangles[next_edge(e)];
        let w = self.triangles[prev_edge(e)];
        let n_vw = self.halfedges[next_edge(e)];
        let n_wu = self.halfedges[prev_edge(e)];
        let twin = self.halfedges[e];
        if twin == NONE {
            self.kill(t);
            let t1 = self.add_triangle(p, v, w);
            let t2 = self.add_triangle(p, w, u);
            self.link(3 * t1 + 1, n_vw);
            self.link(3 * t2 + 1, n_wu);
            self.link(3 * t1 + 2, 3 * t2);
            self.walk_start = t1;
            self.legalize(3 * t1 + 1);
            self.legalize(3 * t2 + 1);
        } else {
            let s = twin / 3;
            let x = self.triangles[prev_edge(twin)];
            let n_ux = self.halfedges[next_edge(twin)];
            let n_xv = self.halfedges[prev_edge(twin)];
            self.kill(t);
            self.kill(s);
            let t1 = self.add_triangle(p, v, w);
            let t2 = self.add_triangle(p, w, u);
            let t3 = self.add_triangle(p, u, x);
            let t4 = self.add_triangle(p, x, v);
            self.link(3 * t1 + 1, n_vw);
            self.link(3 * t2 + 1, n_wu);
            self.link(3 * t3 + 1, n_ux);
            self.link(3 * t4 + 1, n_xv);
            self.link(3 * t1 + 2, 3 * t2);
            self.link(3 * t2 + 2, 3 * t3);
            self.link(3 * t3 + 2, 3 * t4);
            self.link(3 * t4 + 2, 3 * t1);
            self.walk_start = t1;
            self.legalize(3 * t1 + 1);
            self.legalize(3 * t2 + 1);
            self.legalize(3 * t3 + 1);
            self.legalize(3 * t4 + 1);
        }
    }

    /// Hull edges as a start-vertex -> halfedge map, rebuilt on demand.
    fn hull_edges(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut map = std::collections::BTreeMap::new();
        for e in 0..self.halfedges.len() {
            if self.alive[e / 3] && self.halfedges[e] == NONE {
                map.insert(self.triangles[e], e);
            }
        }
        map
    }

    fn insert_outside(&mut self, p: usize) {
        let pp = self.pts[p];
        let hull = self.hull_edges();
        // Walk the hull cycle starting from the smallest vertex index.
        let (&start, _) = hull.iter().next().expect("hull is nonempty");
        let mut cycle = Vec::with_capacity(hull.len());
        let mut v = start;
        loop {
            let e = hull[&v];
            cycle.push(e);
            v = self.triangles[next_edge(e)];
            if v == start {
                break;
            }
        }
        let visible: Vec<bool> = cycle
            .iter()
            .map(|&e| {
                let a = self.pts[self.triangles[e]];
                let b = self.pts[self.triangles[next_edge(e)]];
                let (det, mag) = orient(a, b, pp);
                det < -ORIENT_TOL * mag.max(1e-300)
            })
            .collect();
        if visible.iter().all(|&v| !v) {
            // Point sits on the hull boundary within tolerance; split the
            // closest hull edge instead.
            let e = *cycle
                .iter()
                .min_by(|&&e1, &&e2| {
                    let d1 = self.edge_dist(e1, pp);
                    let d2 = self.edge_dist(e2, pp);
                    d1.total_cmp(&d2)
                })
                .unwrap();
            self.split_edge(e, p);
            return;
        }
        // Rotate so the visible run is contiguous from index 0.
        let m = cycle.len();
        let first = (0..m)
            .find(|&i| visible[i] && !visible[(i + m - 1) % m])
            .unwrap_or(0);
        let run: Vec<usize> = (0..m)
            .map(|k| (first + k) % m)
            .take_while(|&i| visible[i])
            .map(|i| cycle[i])
            .collect();
        let mut prev_fan = NONE;
        for (k, &e) in run.iter().enumerate() {
            let u = self.triangles[e];
            let v = self.triangles[next_edge(e)];
            let f = self.add_triangle(u, p, v);
            self.link(3 * f + 2, e);
            if k > 0 {
                // Previous fan triangle shares edge (p, u).
                self.link(3 * f, prev_fan + 1);
            }
            prev_fan = 3 * f;
            self.walk_start = f;
        }
        for &e in &run {
            self.legalize(e);
        }
    }

    fn edge_dist(&self, e: usize, p: Point) -> f64 {
        let a = self.pts[self.triangles[e]];
        let b = self.pts[self.triangles[next_edge(e)]];
        // Distance to segment ab.
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        p.dist(Point::new(a.x + t * dx, a.y + t * dy))
    }

    fn legalize(&mut self, first: usize) {
        let mut stack = vec![first];
        while let Some(e) = stack.pop() {
            if !self.alive[e / 3] {
                continue;
            }
            let twin = self.halfedges[e];
            if twin == NONE || !self.alive[twin / 3] {
                continue;
            }
            let u = self.triangles[e];
            let v = self.triangles[next_edge(e)];
            let r = self.triangles[prev_edge(e)];
            let s = self.triangles[prev_edge(twin)];
            let (det, mag) = incircle(self.pts[u], self.pts[v], self.pts[r], self.pts[s]);
            let tol = INCIRCLE_TOL * mag.max(1e-300);
            let flip = if det > tol {
                true
            } else if det >= -tol {
                // Cocircular: prefer the diagonal containing the lowest node
                // index, provided the quad is strictly convex.
                let m = u.min(v).min(r).min(s);
                (m == r || m == s) && self.quad_convex(u, v, r, s)
            } else {
                false
            };
            if !flip {
                continue;
            }
            // Flip diagonal (u, v) to (r, s), reusing both triangle slots.
            let t = e / 3;
            let q = twin / 3;
            let n_vr = self.halfedges[next_edge(e)];
            let n_ru = self.halfedges[prev_edge(e)];
            let n_us = self.halfedges[next_edge(twin)];
            let n_sv = self.halfedges[prev_edge(twin)];
            self.triangles[3 * t] = r;
            self.triangles[3 * t + 1] = u;
            self.triangles[3 * t + 2] = s;
            self.triangles[3 * q] = s;
            self.triangles[3 * q + 1] = v;
            self.triangles[3 * q + 2] = r;
            self.link(3 * t, n_ru);
            self.link(3 * t + 1, n_us);
            self.link(3 * t + 2, 3 * q + 2);
            self.link(3 * q, n_sv);
            self.link(3 * q + 1, n_vr);
            stack.push(3 * t);
            stack.push(3 * t + 1);
            stack.push(3 * q);
            stack.push(3 * q + 1);
        }
    }

    fn quad_convex(&self, u: usize, v: usize, r: usize, s: usize) -> bool {
        // Diagonal (r, s) must strictly separate u and v.
        let (o1, m1) = orient(self.pts[r], self.pts[s], self.pts[u]);
        let (o2, m2) = orient(self.pts[r], self.pts[s], self.pts[v]);
        o1.abs() > ORIENT_TOL * m1.max(1e-300)
            && o2.abs() > ORIENT_TOL * m2.max(1e-300)
            && (o1 > 0.0) != (o2 > 0.0)
    }

    fn finish(self) -> (Vec<[usize; 3]>, Vec<[Option<usize>; 3]>) {
        let mut tris: Vec<[usize; 3]> = Vec::new();
        for t in 0..self.alive.len() {
            if !self.alive[t] {
                continue;
            }
            let mut tri = [
                self.triangles[3 * t],
                self.triangles[3 * t + 1],
                self.triangles[3 * t + 2],
            ];
            // Rotate the smallest vertex first, preserving orientation.
            let k = (0..3).min_by_key(|&k| tri[k]).unwrap();
            tri.rotate_left(k);
            tris.push(tri);
        }
        tris.sort_unstable();
        let mut edge_map: std::collections::BTreeMap<(usize, usize), (usize, usize)> =
            std::collections::BTreeMap::new();
        let mut neighbors = vec![[None; 3]; tris.len()];
        for (ti, tri) in tris.iter().enumerate() {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                if let Some(&(tj, kj)) = edge_map.get(&key) {
                    neighbors[ti][k] = Some(tj);
                    neighbors[tj][kj] = Some(ti);
                } else {
                    edge_map.insert(key, (ti, k));
                }
            }
        }
        (tris, neighbors)
    }
}

/// Result of locating a point in the mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointLocation {
    /// Containing triangle index and barycentric coordinates with respect to
    /// its three vertices.
    Inside { triangle: usize, barycentric: [f64; 3] },
    Outside,
}

/// A triangulation of the spot domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    neighbors: Vec<[Option<usize>; 3]>,
}

impl Mesh {
    /// Number of nodes, i.e. the number of basis functions K.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn neighbors(&self) -> &[[Option<usize>; 3]] {
        &self.neighbors
    }

    /// Twice the signed area of triangle `t` (positive for valid meshes).
    pub fn double_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        orient(self.nodes[a], self.nodes[b], self.nodes[c]).0
    }

    /// Total mesh area.
    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| 0.5 * self.double_area(t)).sum()
    }

    /// Assemble a mesh from explicit nodes and triangles, validating
    /// orientation. Intended for tests and externally generated meshes.
    pub fn from_parts(nodes: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Mesh> {
        for (i, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= nodes.len() {
                    return Err(Error::InvalidConfig(format!(
                        "triangle {i} references node {v} out of {}",
                        nodes.len()
                    )));
                }
            }
            let (det, _) = orient(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if det <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "triangle {i} is not counterclockwise (signed area {det:.3e})"
                )));
            }
        }
        let mut edge_map: std::collections::BTreeMap<(usize, usize), (usize, usize)> =
            std::collections::BTreeMap::new();
        let mut neighbors = vec![[None; 3]; triangles.len()];
        for (ti, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                if let Some(&(tj, kj)) = edge_map.get(&key) {
                    neighbors[ti][k] = Some(tj);
                    neighbors[tj][kj] = Some(ti);
                } else {
                    edge_map.insert(key, (ti, k));
                }
            }
        }
        Ok(Mesh { nodes, triangles, neighbors })
    }

    /// Vertices of the convex hull in counterclockwise order.
    pub fn hull(&self) -> Vec<usize> {
        let mut boundary: std::collections::BTreeMap<usize, usize> =
            std::collections::BTreeMap::new();
        for (ti, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                if self.neighbors[ti][k].is_none() {
                    boundary.insert(tri[k], tri[(k + 1) % 3]);
                }
            }
        }
        let (&start, _) = boundary.iter().next().expect("mesh has a boundary");
        let mut cycle = vec![start];
        let mut v = boundary[&start];
        while v != start {
            cycle.push(v);
            v = boundary[&v];
        }
        cycle
    }

    /// Locate `p` by walking the triangulation from triangle 0.
    pub fn locate_point(&self, p: Point) -> PointLocation {
        let mut t = 0usize;
        let cap = 4 * self.triangles.len() + 16;
        for _ in 0..cap {
            let [a, b, c] = self.triangles[t];
            let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
            let (o0, m0) = orient(pa, pb, p);
            let (o1, m1) = orient(pb, pc, p);
            let (o2, m2) = orient(pc, pa, p);
            let mut worst = (0.0f64, usize::MAX);
            if o0 < -ORIENT_TOL * m0.max(1e-300) && -o0 > worst.0 {
                worst = (-o0, 0);
            }
            if o1 < -ORIENT_TOL * m1.max(1e-300) && -o1 > worst.0 {
                worst = (-o1, 1);
            }
            if o2 < -ORIENT_TOL * m2.max(1e-300) && -o2 > worst.0 {
                worst = (-o2, 2);
            }
            if worst.1 == usize::MAX {
                return PointLocation::Inside {
                    triangle: t,
                    barycentric: self.barycentric(t, p),
                };
            }
            match self.neighbors[t][worst.1] {
                Some(n) => t = n,
                None => return PointLocation::Outside,
            }
        }
        // Walk failed to settle; scan every triangle.
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangles[t];
            let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
            let (o0, m0) = orient(pa, pb, p);
            let (o1, m1) = orient(pb, pc, p);
            let (o2, m2) = orient(pc, pa, p);
            if o0 >= -ORIENT_TOL * m0.max(1e-300)
                && o1 >= -ORIENT_TOL * m1.max(1e-300)
                && o2 >= -ORIENT_TOL * m2.max(1e-300)
            {
                return PointLocation::Inside {
                    triangle: t,
                    barycentric: self.barycentric(t, p),
                };
            }
        }
        PointLocation::Outside
    }

    /// Barycentric coordinates of `p` in triangle `t`, clamped to [0, 1] and
    /// normalized to sum exactly to 1. Coordinates within 1e-12 of 0 or 1 are
    /// snapped so that nodal evaluation is exact.
    fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        let total = orient(pa, pb, pc).0;
        let mut w = [
            orient(pb, pc, p).0 / total,
            orient(pc, pa, p).0 / total,
            orient(pa, pb, p).0 / total,
        ];
        for v in &mut w {
            if v.abs() < 1e-12 {
                *v = 0.0;
            }
            if (*v - 1.0).abs() < 1e-12 {
                *v = 1.0;
            }
            *v = v.clamp(0.0, 1.0);
        }
        let sum: f64 = w.iter().sum();
        if sum > 0.0 && sum != 1.0 {
            for v in &mut w {
                *v /= sum;
            }
        }
        w
    }
}

/// Build the Delaunay triangulation of the spot locations.
///
/// Deterministic for a fixed input: points are inserted in input order and
/// cocircular ties resolve toward the lowest node index.
pub fn build_delaunay(grid: &SpotGrid) -> Result<Mesh> {
    let builder = Builder::new(grid.coords())?;
    let (triangles, neighbors) = builder.finish();
    Ok(Mesh { nodes: grid.coords().to_vec(), triangles, neighbors })
}

/// One row of the basis matrix: up to three nonzero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisRow {
    pub indices: [usize; 3],
    pub weights: [f64; 3],
    pub outside: bool,
}

/// Piecewise-linear basis functions evaluated at a set of points.
///
/// Row `j` holds the barycentric weights of point `j` within its containing
/// triangle; rows for points outside the hull are all-zero and flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    rows: Vec<BasisRow>,
    node_count: usize,
}

impl BasisMatrix {
    pub fn n_points(&self) -> usize {
        self.rows.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn rows(&self) -> &[BasisRow] {
        &self.rows
    }

    /// Exact identity basis: evaluation points coincide with the mesh nodes.
    pub fn identity(node_count: usize) -> BasisMatrix {
        let rows = (0..node_count)
            .map(|j| BasisRow { indices: [j, j, j], weights: [1.0, 0.0, 0.0], outside: false })
            .collect();
        BasisMatrix { rows, node_count }
    }

    /// True when this matrix is exactly the K x K identity.
    pub fn is_identity(&self) -> bool {
        self.rows.len() == self.node_count
            && self.rows.iter().enumerate().all(|(j, row)| {
                let mut unit = false;
                for k in 0..3 {
                    let w = row.weights[k];
                    if w == 1.0 && row.indices[k] == j {
                        unit = true;
                    } else if w != 0.0 {
                        return false;
                    }
                }
                unit && !row.outside
            })
    }

    /// Dense n x K representation.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.node_count]; self.rows.len()];
        for (j, row) in self.rows.iter().enumerate() {
            for k in 0..3 {
                out[j][row.indices[k]] += row.weights[k];
            }
        }
        out
    }

    /// Dot product of row `j` with a coefficient vector.
    pub fn row_dot(&self, j: usize, coeffs: &[f64]) -> f64 {
        let row = &self.rows[j];
        if row.outside {
            return 0.0;
        }
        row.weights[0] * coeffs[row.indices[0]]
            + row.weights[1] * coeffs[row.indices[1]]
            + row.weights[2] * coeffs[row.indices[2]]
    }
}

/// Evaluate the basis at arbitrary points.
pub fn evaluate_basis(mesh: &Mesh, points: &[Point]) -> BasisMatrix {
    let rows = points
        .iter()
        .map(|&p| match mesh.locate_point(p) {
            PointLocation::Inside { triangle, barycentric } => {
                let [a, b, c] = mesh.triangles()[triangle];
                BasisRow { indices: [a, b, c], weights: barycentric, outside: false }
            }
            PointLocation::Outside => {
                BasisRow { indices: [0, 0, 0], weights: [0.0; 3], outside: true }
            }
        })
        .collect();
    BasisMatrix { rows, node_count: mesh.node_count() }
}

/// Evaluate the basis at the mesh nodes themselves; exact identity by the
/// nodal property of the piecewise-linear basis.
pub fn nodal_basis(mesh: &Mesh) -> BasisMatrix {
    BasisMatrix::identity(mesh.node_count())
}
