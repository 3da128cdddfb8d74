//! Finite-element forms of the Bloch-transformed cell operator.
//!
//! Unknowns are nodal values of the periodic part `ũ` of a Bloch mode on
//! P1 triangles, with the two periodic faces identified. All matrices are
//! real; the quasi-momentum enters only through
//! `A(p) = K − 2ip C + p² M0` with the skew first-derivative form `C`, and
//! the perturbation through `M(ε) = M_base + ε M_dir + ε² M_dir2`.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::index::{IndexField, ScalarField};
use crate::linalg::{c, BandMatrix, Combination, CsrMatrix, PencilReducer, C64, I};
use crate::mesh::Mesh;

/// Real sparse matrices of one element subset (whole cell or a half).
#[derive(Debug, Clone)]
pub struct FormSet {
    pub k: CsrMatrix,
    /// Raw first-derivative form `∫ ∂₁φ_j φ_i` (row `i`, column `j`).
    pub c_raw: CsrMatrix,
    pub m0: CsrMatrix,
    pub m_base: CsrMatrix,
    pub m_dir: CsrMatrix,
    pub m_dir2: CsrMatrix,
}

/// One edge of the trace line with the data needed for one-sided gradients.
#[derive(Debug, Clone)]
pub struct TraceEdge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
    /// `(dof, ∂₁φ)` of the element on the left (`x₁ < 1/2`) and right.
    pub left: [(usize, f64); 3],
    pub right: [(usize, f64); 3],
}

#[derive(Debug, Clone)]
pub struct TraceData {
    /// Trace unknowns ordered by `x₂`.
    pub dofs: Vec<usize>,
    pub x2: Vec<f64>,
    /// Trapezoid weights along the trace line.
    pub weights: Vec<f64>,
    pub edges: Vec<TraceEdge>,
}

impl TraceData {
    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    pub fn restrict(&self, u: &[C64]) -> Vec<C64> {
        self.dofs.iter().map(|&d| u[d]).collect()
    }

    /// Load vector `b_i = w_i φ_i` of a trace density (adjoint of restriction
    /// under the weighted pairing).
    pub fn extend(&self, phi: &[C64], n_dofs: usize) -> Vec<C64> {
        let mut b = vec![C64::new(0.0, 0.0); n_dofs];
        for (k, &d) in self.dofs.iter().enumerate() {
            b[d] += phi[k] * self.weights[k];
        }
        b
    }

    pub fn length(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct AssembledForms {
    pub mesh: Mesh,
    pub index: IndexField,
    pub n_dofs: usize,
    pub node_dof: Vec<usize>,
    /// Representative node of every unknown (left face for periodic pairs).
    pub dof_node: Vec<usize>,
    /// Centred coordinate `X = x₁ − 1/2` of each unknown.
    pub dof_x: Vec<f64>,
    pub dof_y: Vec<f64>,
    pub whole: FormSet,
    /// Skew part of `c_raw` (the exact Bloch form uses only this part).
    pub c_skew: CsrMatrix,
    /// Forms restricted to elements with `x₁ > 1/2`.
    pub right_half: FormSet,
    /// Mirror permutation on unknowns.
    pub mirror: Vec<usize>,
    pub bandwidth: usize,
    pub trace: TraceData,
}

/// Gradients `(∂₁φ, ∂₂φ)` of the three P1 shape functions and the area.
pub(crate) fn p1_gradients(p: &[[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        g[i] = [(p[j][1] - p[k][1]) / area2, (p[k][0] - p[j][0]) / area2];
    }
    (g, 0.5 * area2)
}

struct Triplets {
    k: Vec<(usize, usize, f64)>,
    c: Vec<(usize, usize, f64)>,
    m0: Vec<(usize, usize, f64)>,
    mb: Vec<(usize, usize, f64)>,
    md: Vec<(usize, usize, f64)>,
    md2: Vec<(usize, usize, f64)>,
}

impl Triplets {
    fn new() -> Self {
        Triplets { k: vec![], c: vec![], m0: vec![], mb: vec![], md: vec![], md2: vec![] }
    }

    fn finish(self, n: usize) -> FormSet {
        FormSet {
            k: CsrMatrix::from_triplets(n, n, &self.k),
            c_raw: CsrMatrix::from_triplets(n, n, &self.c),
            m0: CsrMatrix::from_triplets(n, n, &self.m0),
            m_base: CsrMatrix::from_triplets(n, n, &self.mb),
            m_dir: CsrMatrix::from_triplets(n, n, &self.md),
            m_dir2: CsrMatrix::from_triplets(n, n, &self.md2),
        }
    }
}

/// Evaluates a field at a quadrature point nudged towards the element
/// centroid, so piecewise fields with jumps along mesh lines are sampled on
/// the correct side.
pub(crate) fn eval_inside(f: &ScalarField, q: [f64; 2], centroid: [f64; 2]) -> f64 {
    let t = 1e-9;
    f.eval(q[0] + t * (centroid[0] - q[0]), q[1] + t * (centroid[1] - q[1]))
}

/// Assembles all cell forms. Neumann conditions are natural; periodic faces
/// are identified; unknowns are reordered by reverse Cuthill–McKee.
pub fn assemble_forms(mesh: &Mesh, index: &IndexField) -> Result<AssembledForms> {
    let n_nodes = mesh.nodes.len();
    // Periodic identification.
    let mut partner: HashMap<usize, usize> = HashMap::new();
    for &(l, r) in &mesh.periodic_pairing {
        partner.insert(r, l);
    }
    let mut raw_dof = vec![usize::MAX; n_nodes];
    let mut count = 0;
    for i in 0..n_nodes {
        if !partner.contains_key(&i) {
            raw_dof[i] = count;
            count += 1;
        }
    }
    for (&r, &l) in &partner {
        raw_dof[r] = raw_dof[l];
    }
    let n = count;
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for tri in &mesh.elements {
        for a in 0..3 {
            for b in 0..3 {
                let (da, db) = (raw_dof[tri[a]], raw_dof[tri[b]]);
                if da != db && !adjacency[da].contains(&db) {
                    adjacency[da].push(db);
                }
            }
        }
    }
    for a in adjacency.iter_mut() {
        a.sort();
    }
    let perm = crate::linalg::reverse_cuthill_mckee(&adjacency);
    let node_dof: Vec<usize> = raw_dof.iter().map(|&d| perm[d]).collect();
    let mut dof_node = vec![usize::MAX; n];
    for i in 0..n_nodes {
        let d = node_dof[i];
        if dof_node[d] == usize::MAX || mesh.nodes[i][0] < mesh.nodes[dof_node[d]][0] {
            dof_node[d] = i;
        }
    }
    let dof_x: Vec<f64> = dof_node.iter().map(|&i| mesh.nodes[i][0] - 0.5).collect();
    let dof_y: Vec<f64> = dof_node.iter().map(|&i| mesh.nodes[i][1]).collect();

    let mut whole = Triplets::new();
    let mut right = Triplets::new();
    for (e, tri) in mesh.elements.iter().enumerate() {
        let p = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
        let (g, area) = p1_gradients(&p);
        let centroid = mesh.centroid(e);
        let dofs = [node_dof[tri[0]], node_dof[tri[1]], node_dof[tri[2]]];
        // Edge-midpoint rule: the midpoint of edge (i, i+1) carries
        // φ_i = φ_{i+1} = 1/2.
        let mut wb = [0.0; 3];
        let mut wd = [0.0; 3];
        let mut wd2 = [0.0; 3];
        for m in 0..3 {
            let a = p[m];
            let b = p[(m + 1) % 3];
            let q = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let nb = eval_inside(&index.base, q, centroid);
            if !(nb > 0.0) {
                return Err(Error::NonPositiveIndex { x1: q[0], x2: q[1], value: nb });
            }
            let dn = eval_inside(&index.direction, q, centroid);
            wb[m] = nb * nb;
            wd[m] = 2.0 * nb * dn;
            wd2[m] = dn * dn;
        }
        let is_right = centroid[0] > 0.5;
        for i in 0..3 {
            for j in 0..3 {
                let kij = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                let cij = g[j][0] * area / 3.0;
                let mut sb = 0.0;
                let mut sd = 0.0;
                let mut sd2 = 0.0;
                let mut s0 = 0.0;
                for m in 0..3 {
                    let phi = |k: usize| if k == m || k == (m + 1) % 3 { 0.5 } else { 0.0 };
                    let prod = phi(i) * phi(j) * area / 3.0;
                    s0 += prod;
                    sb += wb[m] * prod;
                    sd += wd[m] * prod;
                    sd2 += wd2[m] * prod;
                }
                let (di, dj) = (dofs[i], dofs[j]);
                for t in if is_right { vec![&mut whole, &mut right] } else { vec![&mut whole] } {
                    t.k.push((di, dj, kij));
                    t.c.push((di, dj, cij));
                    t.m0.push((di, dj, s0));
                    t.mb.push((di, dj, sb));
                    if sd != 0.0 {
                        t.md.push((di, dj, sd));
                    }
                    if sd2 != 0.0 {
                        t.md2.push((di, dj, sd2));
                    }
                }
            }
        }
    }
    let whole = whole.finish(n);
    let right_half = right.finish(n);
    let ct = whole.c_raw.transpose();
    let c_skew = whole.c_raw.combine(0.5, &ct, -0.5);
    let mut mirror = vec![0usize; n];
    for i in 0..n_nodes {
        mirror[node_dof[i]] = node_dof[mesh.mirror[i]];
    }
    let bandwidth = whole.k.bandwidth();
    let trace = build_trace(mesh, &node_dof);
    Ok(AssembledForms {
        mesh: mesh.clone(),
        index: index.clone(),
        n_dofs: n,
        node_dof,
        dof_node,
        dof_x,
        dof_y,
        whole,
        c_skew,
        right_half,
        mirror,
        bandwidth,
        trace,
    })
}

fn build_trace(mesh: &Mesh, node_dof: &[usize]) -> TraceData {
    let tn = &mesh.trace_nodes;
    let mut weights = vec![0.0; tn.len()];
    let mut edges = Vec::new();
    let mut elems_of_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (e, tri) in mesh.elements.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            elems_of_edge.entry((a.min(b), a.max(b))).or_default().push(e);
        }
    }
    for k in 0..tn.len().saturating_sub(1) {
        let (a, b) = (tn[k], tn[k + 1]);
        let Some(els) = elems_of_edge.get(&(a.min(b), a.max(b))) else { continue };
        if els.len() != 2 {
            continue;
        }
        let len = (mesh.nodes[b][1] - mesh.nodes[a][1]).abs();
        weights[k] += 0.5 * len;
        weights[k + 1] += 0.5 * len;
        let grads = |e: usize| -> [(usize, f64); 3] {
            let tri = mesh.elements[e];
            let p = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
            let (g, _) = p1_gradients(&p);
            [(node_dof[tri[0]], g[0][0]), (node_dof[tri[1]], g[1][0]), (node_dof[tri[2]], g[2][0])]
        };
        let (e0, e1) = (els[0], els[1]);
        let (l, r) = if mesh.centroid(e0)[0] < 0.5 { (e0, e1) } else { (e1, e0) };
        edges.push(TraceEdge { a: node_dof[a], b: node_dof[b], length: len, left: grads(l), right: grads(r) });
    }
    let keep: Vec<usize> = (0..tn.len()).filter(|&k| weights[k] > 0.0).collect();
    TraceData {
        dofs: keep.iter().map(|&k| node_dof[tn[k]]).collect(),
        x2: keep.iter().map(|&k| mesh.nodes[tn[k]][1]).collect(),
        weights: keep.iter().map(|&k| weights[k]).collect(),
        edges,
    }
}

impl AssembledForms {
    /// Linear combination for `A(p) − σ M(ε)`.
    pub fn pencil_terms(&self, p: C64, eps: f64, sigma: C64) -> Combination<'_> {
        Combination::new()
            .with(c(1.0), &self.whole.k)
            .with(-2.0 * I * p, &self.c_skew)
            .with(p * p, &self.whole.m0)
            .with(-sigma, &self.whole.m_base)
            .with(-sigma * eps, &self.whole.m_dir)
            .with(-sigma * eps * eps, &self.whole.m_dir2)
    }

    pub fn a_terms(&self, p: C64) -> Combination<'_> {
        self.pencil_terms(p, 0.0, C64::new(0.0, 0.0))
    }

    /// Derivative `A′(p) = −2i C + 2p M0`.
    pub fn da_terms(&self, p: C64) -> Combination<'_> {
        Combination::new().with(-2.0 * I, &self.c_skew).with(2.0 * p, &self.whole.m0)
    }

    pub fn m_terms(&self, eps: f64) -> Combination<'_> {
        Combination::new()
            .with(c(1.0), &self.whole.m_base)
            .with(c(eps), &self.whole.m_dir)
            .with(c(eps * eps), &self.whole.m_dir2)
    }

    pub fn m_real(&self, eps: f64) -> CsrMatrix {
        let m = self.whole.m_base.combine(1.0, &self.whole.m_dir, eps);
        m.combine(1.0, &self.whole.m_dir2, eps * eps)
    }

    /// Dense `(A(p), M(ε))`.
    pub fn bloch_matrix(&self, p: C64, eps: f64) -> (DMatrix<C64>, DMatrix<C64>) {
        let n = self.n_dofs;
        (self.a_terms(p).to_dense(n), self.m_terms(eps).to_dense(n))
    }

    /// Banded `A(p) − σ M(ε)`.
    pub fn shifted_band(&self, p: C64, eps: f64, sigma: C64) -> BandMatrix {
        let bw = self.bandwidth;
        self.pencil_terms(p, eps, sigma).to_band(self.n_dofs, bw, bw)
    }

    pub fn apply_a(&self, p: C64, x: &[C64]) -> Vec<C64> {
        self.a_terms(p).matvec(self.n_dofs, x)
    }

    pub fn apply_m(&self, eps: f64, x: &[C64]) -> Vec<C64> {
        self.m_terms(eps).matvec(self.n_dofs, x)
    }

    /// Cholesky reducer for `M(ε)`; fails when `M(ε)` is not positive
    /// definite.
    pub fn reducer(&self, eps: f64) -> Result<PencilReducer> {
        PencilReducer::new(&self.m_real(eps).to_dense()).ok_or(Error::MassNotPositive { eps })
    }

    pub fn apply_mirror(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); x.len()];
        for (i, &j) in self.mirror.iter().enumerate() {
            y[j] = x[i];
        }
        y
    }

    /// Largest `|ε|` (checked on a doubling ladder) for which `M(ε)` stays
    /// positive definite, capped at `cap`.
    pub fn eps_bound(&self, cap: f64) -> f64 {
        let mut e = cap.min(1e-3);
        let mut ok = 0.0;
        while e <= cap {
            if self.reducer(e).is_err() || self.reducer(-e).is_err() {
                break;
            }
            ok = e;
            e *= 2.0;
        }
        ok
    }

    /// Flux form `∫_Γ (∂₁ + ip) u · v̄ dx₂` of two Bloch fields given by their
    /// periodic parts, using the average of the one-sided element gradients.
    pub fn flux_form(&self, u: &[C64], v: &[C64], p: C64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for e in &self.trace.edges {
            let gl: C64 = e.left.iter().map(|&(d, g)| u[d] * g).sum();
            let gr: C64 = e.right.iter().map(|&(d, g)| u[d] * g).sum();
            let g = 0.5 * (gl + gr);
            let (ua, ub) = (u[e.a], u[e.b]);
            let (va, vb) = (v[e.a].conj(), v[e.b].conj());
            acc += g * e.length * 0.5 * (va + vb);
            acc += I * p * e.length / 6.0 * (2.0 * ua * va + ua * vb + ub * va + 2.0 * ub * vb);
        }
        acc
    }

    /// Trace-node values of `∂₁u` (one-sided gradients averaged across the
    /// line, then averaged over the edges adjacent to each node).
    pub fn normal_derivative(&self, u: &[C64], p: C64) -> Vec<C64> {
        self.trace_gradient(u, p, 0.5, 0.5)
    }

    /// Right-sided `∂₁u` at the trace nodes.
    pub fn normal_derivative_right(&self, u: &[C64], p: C64) -> Vec<C64> {
        self.trace_gradient(u, p, 0.0, 1.0)
    }

    fn trace_gradient(&self, u: &[C64], p: C64, wl: f64, wr: f64) -> Vec<C64> {
        let pos: HashMap<usize, usize> = self.trace.dofs.iter().enumerate().map(|(k, &d)| (d, k)).collect();
        let mut acc = vec![C64::new(0.0, 0.0); self.trace.len()];
        let mut wsum = vec![0.0; self.trace.len()];
        for e in &self.trace.edges {
            let gl: C64 = e.left.iter().map(|&(d, g)| u[d] * g).sum();
            let gr: C64 = e.right.iter().map(|&(d, g)| u[d] * g).sum();
            let g = wl * gl + wr * gr;
            for (node, val) in [(e.a, u[e.a]), (e.b, u[e.b])] {
                let k = pos[&node];
                acc[k] += (g + I * p * val) * e.length;
                wsum[k] += e.length;
            }
        }
        acc.iter().zip(&wsum).map(|(a, w)| a / *w).collect()
    }

    /// Variational one-sided normal derivative from the right half cell at
    /// the trace nodes, `∂₁u(0⁺)_i ≈ −r_i / w_i` with `r` the residual of the
    /// right-half forms (exact for discrete solutions up to quadrature).
    pub fn flux_right_variational(&self, u: &[C64], p: C64, eps: f64, lambda: C64) -> Vec<C64> {
        let h = &self.right_half;
        let ct = h.c_raw.transpose();
        let terms = Combination::new()
            .with(c(1.0), &h.k)
            .with(I * p, &ct)
            .with(-I * p, &h.c_raw)
            .with(p * p, &h.m0)
            .with(-lambda, &h.m_base)
            .with(-lambda * eps, &h.m_dir)
            .with(-lambda * eps * eps, &h.m_dir2);
        let r = terms.matvec(self.n_dofs, u);
        self.trace.dofs.iter().zip(&self.trace.weights).map(|(&d, w)| -r[d] / *w).collect()
    }
}
