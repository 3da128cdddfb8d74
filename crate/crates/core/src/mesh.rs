//! Period-cell geometry and its mirror-symmetric triangulation.
//!
//! The cell is `(0,1) × (0,H)` with mirror line `x₁ = 1/2`. Obstacle-free
//! cells use a structured "Union Jack" triangulation; cells with circular
//! obstacles are meshed on the left half by a constrained Delaunay
//! triangulation and reflected, so the discrete mirror map is an exact node
//! permutation in both cases.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};

const GEOM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    pub strip_height: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub mesh_target_h: f64,
}

impl CellGeometry {
    pub fn empty(strip_height: f64, mesh_target_h: f64) -> Self {
        CellGeometry { strip_height, obstacles: Vec::new(), mesh_target_h }
    }

    /// Checks the geometric invariants: positivity, obstacles strictly inside
    /// the cell and away from the periodic faces, and mirror symmetry.
    pub fn validate(&self) -> Result<()> {
        let h = self.strip_height;
        if !(h > 0.0) || !(self.mesh_target_h > 0.0) {
            return Err(Error::Config("strip height and mesh size must be positive".into()));
        }
        for (k, o) in self.obstacles.iter().enumerate() {
            let [cx, cy] = o.center;
            if !(o.radius > 0.0) {
                return Err(Error::Config(format!("obstacle {k} has non-positive radius")));
            }
            if o.radius >= 0.5 * h {
                return Err(Error::Unmeshable(format!(
                    "obstacle {k}: radius {} is not below the strip half-height {}",
                    o.radius,
                    0.5 * h
                )));
            }
            if cy - o.radius <= GEOM_TOL || cy + o.radius >= h - GEOM_TOL {
                return Err(Error::ObstacleTouchesBoundary(format!(
                    "obstacle {k} reaches the strip walls"
                )));
            }
            if cx - o.radius <= GEOM_TOL || cx + o.radius >= 1.0 - GEOM_TOL {
                return Err(Error::ObstacleTouchesBoundary(format!(
                    "obstacle {k} reaches a periodic face"
                )));
            }
            let centered = (cx - 0.5).abs() <= GEOM_TOL;
            if !centered && (cx - 0.5).abs() < o.radius + GEOM_TOL {
                return Err(Error::ObstacleTouchesBoundary(format!(
                    "obstacle {k} straddles the mirror line without being centred on it"
                )));
            }
            let has_partner = self.obstacles.iter().any(|q| {
                (q.center[0] - (1.0 - cx)).abs() <= 1e-10
                    && (q.center[1] - cy).abs() <= 1e-10
                    && (q.radius - o.radius).abs() <= 1e-10
            });
            if !has_partner {
                return Err(Error::NotSymmetric(format!("obstacle {k} has no mirror image")));
            }
        }
        for i in 0..self.obstacles.len() {
            for j in i + 1..self.obstacles.len() {
                let (a, b) = (self.obstacles[i], self.obstacles[j]);
                let d = ((a.center[0] - b.center[0]).powi(2) + (a.center[1] - b.center[1]).powi(2)).sqrt();
                if d <= a.radius + b.radius + GEOM_TOL {
                    return Err(Error::Unmeshable(format!("obstacles {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }

    /// True if the point lies inside an obstacle (open discs).
    pub fn in_obstacle(&self, x: f64, y: f64) -> bool {
        self.obstacles
            .iter()
            .any(|o| (x - o.center[0]).powi(2) + (y - o.center[1]).powi(2) < o.radius * o.radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeTag {
    Neumann,
    PeriodicLeft,
    PeriodicRight,
    TraceLine,
}

impl EdgeTag {
    pub fn name(self) -> &'static str {
        match self {
            EdgeTag::Neumann => "neumann",
            EdgeTag::PeriodicLeft => "periodic_left",
            EdgeTag::PeriodicRight => "periodic_right",
            EdgeTag::TraceLine => "trace_line",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise node triples.
    pub elements: Vec<[usize; 3]>,
    pub boundary_edges: Vec<([usize; 2], EdgeTag)>,
    /// `(left, right)` node pairs on the periodic faces, matched in `x₂`.
    pub periodic_pairing: Vec<(usize, usize)>,
    /// Nodes on the mirror line `x₁ = 1/2`, ordered by `x₂`.
    pub trace_nodes: Vec<usize>,
    /// Node permutation realizing `x₁ ↦ 1 − x₁`.
    pub mirror: Vec<usize>,
    pub strip_height: f64,
    pub structured: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshStats {
    pub n_nodes: usize,
    pub n_elements: usize,
    pub n_trace_nodes: usize,
    pub max_diameter: f64,
    pub min_quality: f64,
}

impl Mesh {
    pub fn element_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.elements[e];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.elements[e];
        [
            (self.nodes[a][0] + self.nodes[b][0] + self.nodes[c][0]) / 3.0,
            (self.nodes[a][1] + self.nodes[b][1] + self.nodes[c][1]) / 3.0,
        ]
    }

    pub fn stats(&self) -> MeshStats {
        let mut max_diameter = 0.0f64;
        let mut min_quality = f64::INFINITY;
        for (e, tri) in self.elements.iter().enumerate() {
            let p: Vec<[f64; 2]> = tri.iter().map(|&i| self.nodes[i]).collect();
            let len2 = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            let l = [len2(p[0], p[1]), len2(p[1], p[2]), len2(p[2], p[0])];
            max_diameter = max_diameter.max(l.iter().fold(0.0f64, |m, &v| m.max(v)).sqrt());
            let q = 4.0 * 3f64.sqrt() * self.element_area(e) / (l[0] + l[1] + l[2]);
            min_quality = min_quality.min(q);
        }
        MeshStats {
            n_nodes: self.nodes.len(),
            n_elements: self.elements.len(),
            n_trace_nodes: self.trace_nodes.len(),
            max_diameter,
            min_quality,
        }
    }

    /// Plain-text listing: one record per line, prefixed by its kind.
    pub fn export_text(&self) -> String {
        let mut s = String::new();
        let st = self.stats();
        let _ = writeln!(s, "# nodes={} elements={} trace_nodes={}", st.n_nodes, st.n_elements, st.n_trace_nodes);
        for (i, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "node {i} {:.17e} {:.17e}", p[0], p[1]);
        }
        for (e, t) in self.elements.iter().enumerate() {
            let _ = writeln!(s, "element {e} {} {} {}", t[0], t[1], t[2]);
        }
        for (edge, tag) in &self.boundary_edges {
            let _ = writeln!(s, "edge {} {} {}", edge[0], edge[1], tag.name());
        }
        for (l, r) in &self.periodic_pairing {
            let _ = writeln!(s, "pair {l} {r}");
        }
        for t in &self.trace_nodes {
            let _ = writeln!(s, "trace {t}");
        }
        s
    }
}

/// Triangulates the cell. Obstacle-free geometries use the structured
/// fallback; otherwise the left half is meshed and reflected.
pub fn build_mesh(geom: &CellGeometry) -> Result<Mesh> {
    geom.validate()?;
    let (nodes, elements, structured) = if geom.obstacles.is_empty() {
        let (n, e) = structured_rectangle(geom.strip_height, geom.mesh_target_h);
        (n, e, true)
    } else {
        let (n, e) = obstacle_mesh(geom)?;
        (n, e, false)
    };
    finish_mesh(nodes, elements, geom.strip_height, structured)
}

fn even_at_least(x: f64) -> usize {
    let n = (x - 1e-12).ceil().max(1.0) as usize;
    n + (n % 2)
}

/// Union-Jack triangulation: cell `(i,j)` is split along `/` when `i+j` is
/// even and along `\` otherwise. With even counts the mesh is symmetric
/// under both axis reflections and under translation by two cells.
fn structured_rectangle(height: f64, h: f64) -> (Vec<[f64; 2]>, Vec<[usize; 3]>) {
    let nx = even_at_least(1.0 / h);
    let ny = even_at_least(height / h);
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([i as f64 / nx as f64, height * j as f64 / ny as f64]);
        }
    }
    let mut elements = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                elements.push([a, b, c]);
                elements.push([a, c, d]);
            } else {
                elements.push([a, b, d]);
                elements.push([b, c, d]);
            }
        }
    }
    (nodes, elements)
}

fn obstacle_mesh(geom: &CellGeometry) -> Result<(Vec<[f64; 2]>, Vec<[usize; 3]>)> {
    let h = geom.mesh_target_h;
    let height = geom.strip_height;
    let mut cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::new();
    let mut handles: HashMap<(i64, i64), spade::handles::FixedVertexHandle> = HashMap::new();
    let key = |x: f64, y: f64| ((x * 1e10).round() as i64, (y * 1e10).round() as i64);
    let mut insert = |cdt: &mut ConstrainedDelaunayTriangulation<Point2<f64>>, x: f64, y: f64| -> Result<_> {
        if let Some(hd) = handles.get(&key(x, y)) {
            return Ok(*hd);
        }
        let hd = cdt
            .insert(Point2::new(x, y))
            .map_err(|e| Error::Unmeshable(format!("vertex insertion failed: {e:?}")))?;
        handles.insert(key(x, y), hd);
        Ok(hd)
    };
    let mut chain = |cdt: &mut ConstrainedDelaunayTriangulation<Point2<f64>>, pts: &[[f64; 2]]| -> Result<()> {
        let mut prev = None;
        for p in pts {
            let hd = insert(cdt, p[0], p[1])?;
            if let Some(q) = prev {
                if q != hd {
                    cdt.add_constraint(q, hd);
                }
            }
            prev = Some(hd);
        }
        Ok(())
    };
    let segment = |a: [f64; 2], b: [f64; 2]| -> Vec<[f64; 2]> {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let n = (len / h).ceil().max(1.0) as usize;
        (0..=n)
            .map(|k| {
                let t = k as f64 / n as f64;
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
            })
            .collect()
    };
    chain(&mut cdt, &segment([0.0, 0.0], [0.5, 0.0]))?;
    chain(&mut cdt, &segment([0.0, height], [0.5, height]))?;
    chain(&mut cdt, &segment([0.0, 0.0], [0.0, height]))?;
    // Mirror line, interrupted by centred obstacles.
    let mut gaps: Vec<(f64, f64)> = geom
        .obstacles
        .iter()
        .filter(|o| (o.center[0] - 0.5).abs() <= GEOM_TOL)
        .map(|o| (o.center[1] - o.radius, o.center[1] + o.radius))
        .collect();
    gaps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut y0 = 0.0;
    for (lo, hi) in &gaps {
        chain(&mut cdt, &segment([0.5, y0], [0.5, *lo]))?;
        y0 = *hi;
    }
    chain(&mut cdt, &segment([0.5, y0], [0.5, height]))?;
    for o in &geom.obstacles {
        let [cx, cy] = o.center;
        let r = o.radius;
        if (cx - 0.5).abs() <= GEOM_TOL {
            let n = ((std::f64::consts::PI * r / h).ceil() as usize).max(4);
            let pts: Vec<[f64; 2]> = (0..=n)
                .map(|k| {
                    let th = std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * k as f64 / n as f64;
                    if k == 0 {
                        [0.5, cy + r]
                    } else if k == n {
                        [0.5, cy - r]
                    } else {
                        [cx + r * th.cos(), cy + r * th.sin()]
                    }
                })
                .collect();
            chain(&mut cdt, &pts)?;
        } else if cx < 0.5 {
            let n = ((2.0 * std::f64::consts::PI * r / h).ceil() as usize).max(8);
            let mut pts: Vec<[f64; 2]> = (0..n)
                .map(|k| {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    [cx + r * th.cos(), cy + r * th.sin()]
                })
                .collect();
            pts.push(pts[0]);
            chain(&mut cdt, &pts)?;
        }
    }
    // Interior hexagonal lattice kept away from all boundaries.
    let margin = 0.55 * h;
    let dy = h * 3f64.sqrt() / 2.0;
    let rows = (height / dy).floor() as usize + 1;
    for j in 0..=rows {
        let y = j as f64 * dy;
        let shift = if j % 2 == 0 { 0.0 } else { 0.5 * h };
        let mut x = shift;
        while x < 0.5 {
            let ok_box = x > margin && x < 0.5 - margin && y > margin && y < height - margin;
            let ok_obs = geom.obstacles.iter().all(|o| {
                let d = ((x - o.center[0]).powi(2) + (y - o.center[1]).powi(2)).sqrt();
                d > o.radius + margin
            });
            if ok_box && ok_obs {
                insert(&mut cdt, x, y)?;
            }
            x += h;
        }
    }
    let mut nodes: Vec<[f64; 2]> = Vec::new();
    let mut node_of: HashMap<usize, usize> = HashMap::new();
    let mut elements = Vec::new();
    let on_circle = |p: [f64; 2]| -> Option<usize> {
        geom.obstacles.iter().position(|o| {
            let d = ((p[0] - o.center[0]).powi(2) + (p[1] - o.center[1]).powi(2)).sqrt();
            (d - o.radius).abs() < 1e-9
        })
    };
    for face in cdt.inner_faces() {
        let vs = face.vertices();
        let pts: Vec<[f64; 2]> = vs.iter().map(|v| [v.position().x, v.position().y]).collect();
        let owners: Vec<Option<usize>> = pts.iter().map(|&p| on_circle(p)).collect();
        if owners[0].is_some() && owners[0] == owners[1] && owners[1] == owners[2] {
            continue;
        }
        let mut tri = [0usize; 3];
        for (k, v) in vs.iter().enumerate() {
            let idx = v.fix().index();
            let next = nodes.len();
            let id = *node_of.entry(idx).or_insert_with(|| {
                nodes.push(pts[k]);
                next
            });
            tri[k] = id;
        }
        elements.push(tri);
    }
    // Reflect the left half across x₁ = 1/2.
    let n_left = nodes.len();
    let mut image = vec![0usize; n_left];
    for i in 0..n_left {
        let [x, y] = nodes[i];
        if (x - 0.5).abs() <= GEOM_TOL {
            nodes[i][0] = 0.5;
            image[i] = i;
        } else {
            image[i] = nodes.len();
            nodes.push([1.0 - x, y]);
        }
    }
    let n_el = elements.len();
    for e in 0..n_el {
        let [a, b, c] = elements[e];
        elements.push([image[a], image[c], image[b]]);
    }
    Ok((nodes, elements))
}

fn coord_key(x: f64, y: f64) -> (i64, i64) {
    ((x * 1e9).round() as i64, (y * 1e9).round() as i64)
}

fn finish_mesh(
    nodes: Vec<[f64; 2]>,
    mut elements: Vec<[usize; 3]>,
    strip_height: f64,
    structured: bool,
) -> Result<Mesh> {
    for tri in elements.iter_mut() {
        let (a, b, c) = (nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if area.abs() < 1e-16 {
            return Err(Error::Unmeshable("degenerate triangle".into()));
        }
        if area < 0.0 {
            tri.swap(1, 2);
        }
    }
    let lookup: HashMap<(i64, i64), usize> =
        nodes.iter().enumerate().map(|(i, p)| (coord_key(p[0], p[1]), i)).collect();
    let mut mirror = vec![0usize; nodes.len()];
    for (i, p) in nodes.iter().enumerate() {
        mirror[i] = *lookup
            .get(&coord_key(1.0 - p[0], p[1]))
            .ok_or_else(|| Error::NotSymmetric(format!("node {i} has no mirror image")))?;
    }
    let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in &elements {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let on = |x: f64, v: f64| (x - v).abs() <= 1e-10;
    let mut boundary_edges = Vec::new();
    let mut keys: Vec<_> = edge_count.keys().copied().collect();
    keys.sort();
    for (a, b) in keys {
        let (pa, pb) = (nodes[a], nodes[b]);
        let count = edge_count[&(a, b)];
        if count == 1 {
            let tag = if on(pa[0], 0.0) && on(pb[0], 0.0) {
                EdgeTag::PeriodicLeft
            } else if on(pa[0], 1.0) && on(pb[0], 1.0) {
                EdgeTag::PeriodicRight
            } else {
                EdgeTag::Neumann
            };
            boundary_edges.push(([a, b], tag));
        } else if on(pa[0], 0.5) && on(pb[0], 0.5) {
            boundary_edges.push(([a, b], EdgeTag::TraceLine));
        }
    }
    let mut periodic_pairing = Vec::new();
    for (i, p) in nodes.iter().enumerate() {
        if on(p[0], 0.0) {
            let j = *lookup
                .get(&coord_key(1.0, p[1]))
                .ok_or_else(|| Error::Unmeshable(format!("periodic partner of node {i} missing")))?;
            periodic_pairing.push((i, j));
        }
    }
    let n_right = nodes.iter().filter(|p| on(p[0], 1.0)).count();
    if n_right != periodic_pairing.len() {
        return Err(Error::Unmeshable("periodic faces do not match".into()));
    }
    periodic_pairing.sort_by(|a, b| nodes[a.0][1].total_cmp(&nodes[b.0][1]));
    let mut trace_nodes: Vec<usize> = (0..nodes.len()).filter(|&i| on(nodes[i][0], 0.5)).collect();
    trace_nodes.sort_by(|&a, &b| nodes[a][1].total_cmp(&nodes[b][1]));
    Ok(Mesh {
        nodes,
        elements,
        boundary_edges,
        periodic_pairing,
        trace_nodes,
        mirror,
        strip_height,
        structured,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structured_unit_square_has_25_nodes() {
        let m = build_mesh(&CellGeometry::empty(1.0, 0.25)).unwrap();
        assert_eq!(m.nodes.len(), 25);
        assert_eq!(m.elements.len(), 32);
        assert!(m.structured);
        for (i, &j) in m.mirror.iter().enumerate() {
            assert_eq!(m.mirror[j], i);
        }
    }

    #[test]
    fn radius_above_half_height_is_unmeshable() {
        let g = CellGeometry {
            strip_height: 1.0,
            obstacles: vec![Obstacle { center: [0.5, 0.5], radius: 0.6 }],
            mesh_target_h: 0.1,
        };
        assert!(matches!(build_mesh(&g), Err(Error::Unmeshable(_))));
    }
}
