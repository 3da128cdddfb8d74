//! Element-level evaluation of physical (non-periodic) fields sampled on the
//! cell mesh nodes of consecutive periods: norms and the energy form.

use crate::cell::{eval_inside, p1_gradients, AssembledForms};
use crate::linalg::C64;

/// Per-element geometry and index samples at the edge midpoints.
#[derive(Debug, Clone)]
pub struct PhysicalCell {
    pub node_x: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    area: Vec<f64>,
    grads: Vec<[[f64; 2]; 3]>,
    base: Vec<[f64; 3]>,
    direction: Vec<[f64; 3]>,
    right: Vec<bool>,
}

/// Which medium fills a cell: `+ε` everywhere, or `−ε` left of the mirror
/// line and `+ε` right of it (the cell containing the interface).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Medium {
    Uniform(f64),
    Joined(f64),
}

impl PhysicalCell {
    pub fn new(forms: &AssembledForms) -> Self {
        let mesh = &forms.mesh;
        let mut out = PhysicalCell {
            node_x: mesh.nodes.clone(),
            elements: Vec::new(),
            area: Vec::new(),
            grads: Vec::new(),
            base: Vec::new(),
            direction: Vec::new(),
            right: Vec::new(),
        };
        for (e, tri) in mesh.elements.iter().enumerate() {
            let p = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
            let (g, area) = p1_gradients(&p);
            let centroid = mesh.centroid(e);
            let mut b = [0.0; 3];
            let mut d = [0.0; 3];
            for i in 0..3 {
                let j = (i + 1) % 3;
                let q = [0.5 * (p[i][0] + p[j][0]), 0.5 * (p[i][1] + p[j][1])];
                b[i] = eval_inside(&forms.index.base, q, centroid);
                d[i] = eval_inside(&forms.index.direction, q, centroid);
            }
            out.elements.push(*tri);
            out.area.push(area);
            out.grads.push(g);
            out.base.push(b);
            out.direction.push(d);
            out.right.push(centroid[0] > 0.5);
        }
        out
    }

    fn eps_of(&self, medium: Medium, e: usize) -> f64 {
        match medium {
            Medium::Uniform(eps) => eps,
            Medium::Joined(eps) => {
                if self.right[e] {
                    eps
                } else {
                    -eps
                }
            }
        }
    }

    /// `(∫|∇u|², ∫ n² |u|²)` over one cell for a nodal field.
    pub fn energy(&self, u: &[C64], medium: Medium) -> (f64, f64) {
        let mut grad = 0.0;
        let mut mass = 0.0;
        for (e, tri) in self.elements.iter().enumerate() {
            let g = &self.grads[e];
            let mut gu = [C64::new(0.0, 0.0); 2];
            for k in 0..3 {
                gu[0] += u[tri[k]] * g[k][0];
                gu[1] += u[tri[k]] * g[k][1];
            }
            grad += self.area[e] * (gu[0].norm_sqr() + gu[1].norm_sqr());
            let eps = self.eps_of(medium, e);
            for i in 0..3 {
                let j = (i + 1) % 3;
                let n = self.base[e][i] + eps * self.direction[e][i];
                let um = 0.5 * (u[tri[i]] + u[tri[j]]);
                mass += self.area[e] / 3.0 * n * n * um.norm_sqr();
            }
        }
        (grad, mass)
    }

    pub fn mass_norm(&self, u: &[C64], medium: Medium) -> f64 {
        self.energy(u, medium).1.sqrt()
    }
}
