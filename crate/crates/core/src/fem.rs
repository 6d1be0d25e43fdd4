//! Structured triangulations of the time–maturity rectangle (and 1-D maturity
//! meshes), piecewise-linear mass/stiffness assembly and point projection.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::gmrf::{CsrMatrix, SparseSymmetric, SymTriplets};

pub const MAX_VERTICES: usize = 1_000_000;
const DEGENERATE: f64 = 1e-12;
const HULL_TOL: f64 = 1e-9;

/// Maturity range used for coordinate scaling (months).
pub const MATURITY_SPAN: (f64, f64) = (3.0, 120.0);
/// Months per scaled time unit.
pub const TIME_UNIT_MONTHS: f64 = 191.0;

/// Maps (month index, maturity in months) to scaled mesh coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateScaling {
    pub months_per_unit: f64,
    pub log_m_lo: f64,
    pub log_m_hi: f64,
}

impl Default for CoordinateScaling {
    fn default() -> Self {
        Self {
            months_per_unit: TIME_UNIT_MONTHS,
            log_m_lo: MATURITY_SPAN.0.ln(),
            log_m_hi: MATURITY_SPAN.1.ln(),
        }
    }
}

impl CoordinateScaling {
    /// `t` is a 1-based month index.
    pub fn time(&self, t: f64) -> f64 {
        (t - 1.0) / self.months_per_unit
    }

    pub fn maturity(&self, m: f64) -> f64 {
        (m.ln() - self.log_m_lo) / (self.log_m_hi - self.log_m_lo)
    }

    pub fn point(&self, t: f64, m: f64) -> [f64; 2] {
        [self.time(t), self.maturity(m)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Grid {
    nx: usize,
    ny: usize,
}

/// Structured mesh. In 1-D the second coordinate is 0 and elements use the first two slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub dim: usize,
    pub vertices: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 3]>,
    pub boundary: Vec<bool>,
    origin: [f64; 2],
    step: [f64; 2],
    grid: Grid,
}

fn extended(range: (f64, f64), extension: f64) -> Result<(f64, f64)> {
    let (a, b) = range;
    if !(a.is_finite() && b.is_finite() && b >= a) {
        return Err(Error::Domain(format!("invalid range [{a}, {b}]")));
    }
    let pad = extension * (b - a);
    Ok((a - pad, b + pad))
}

fn intervals(lo: f64, hi: f64, resolution: f64) -> usize {
    (((hi - lo) / resolution) - 1e-9).ceil().max(1.0) as usize
}

fn check_params(resolution: f64, extension: f64) -> Result<()> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::Domain(format!("mesh resolution must be positive, got {resolution}")));
    }
    if !(extension >= 0.0 && extension.is_finite()) {
        return Err(Error::Domain(format!("mesh extension must be nonnegative, got {extension}")));
    }
    Ok(())
}

/// Right-triangle mesh over the rectangle enlarged by `extension` × its size on every side.
pub fn build_mesh_2d(
    time_range: (f64, f64),
    maturity_range: (f64, f64),
    resolution: f64,
    extension: f64,
) -> Result<Mesh> {
    check_params(resolution, extension)?;
    let (x0, x1) = extended(time_range, extension)?;
    let (y0, y1) = extended(maturity_range, extension)?;
    build_rect(x0, x1, y0, y1, resolution)
}

/// Right-triangle mesh over an explicit rectangle.
pub fn build_rect(x0: f64, x1: f64, y0: f64, y1: f64, resolution: f64) -> Result<Mesh> {
    build_rect_xy(x0, x1, y0, y1, [resolution, resolution])
}

/// As [`build_rect`] with separate edge lengths along each axis.
pub fn build_rect_xy(x0: f64, x1: f64, y0: f64, y1: f64, resolution: [f64; 2]) -> Result<Mesh> {
    check_params(resolution[0], 0.0)?;
    check_params(resolution[1], 0.0)?;
    if !(x1 > x0 && y1 > y0) {
        return Err(Error::Domain("mesh rectangle must have positive area".into()));
    }
    let (nx, ny) = (intervals(x0, x1, resolution[0]), intervals(y0, y1, resolution[1]));
    let nv = (nx + 1).saturating_mul(ny + 1);
    if nv > MAX_VERTICES {
        return Err(Error::Size(format!("{nv} vertices exceeds the limit of {MAX_VERTICES}")));
    }
    let (hx, hy) = ((x1 - x0) / nx as f64, (y1 - y0) / ny as f64);
    let mut vertices = Vec::with_capacity(nv);
    let mut boundary = Vec::with_capacity(nv);
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([x0 + i as f64 * hx, y0 + j as f64 * hy]);
            boundary.push(i == 0 || j == 0 || i == nx || j == ny);
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut elements = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v11, v01) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            elements.push([v00, v10, v11]);
            elements.push([v00, v11, v01]);
        }
    }
    Ok(Mesh {
        dim: 2,
        vertices,
        elements,
        boundary,
        origin: [x0, y0],
        step: [hx, hy],
        grid: Grid { nx, ny },
    })
}

/// Uniform interval mesh with hat functions.
pub fn build_mesh_1d(range: (f64, f64), resolution: f64, extension: f64) -> Result<Mesh> {
    check_params(resolution, extension)?;
    let (x0, x1) = extended(range, extension)?;
    if x1 <= x0 {
        // a single point: one vertex, no elements
        return Ok(Mesh {
            dim: 1,
            vertices: vec![[x0, 0.0]],
            elements: Vec::new(),
            boundary: vec![true],
            origin: [x0, 0.0],
            step: [0.0, 0.0],
            grid: Grid { nx: 0, ny: 0 },
        });
    }
    let nx = intervals(x0, x1, resolution);
    if nx + 1 > MAX_VERTICES {
        return Err(Error::Size(format!("{} vertices exceeds the limit", nx + 1)));
    }
    let hx = (x1 - x0) / nx as f64;
    Ok(Mesh {
        dim: 1,
        vertices: (0..=nx).map(|i| [x0 + i as f64 * hx, 0.0]).collect(),
        elements: (0..nx).map(|i| [i, i + 1, usize::MAX]).collect(),
        boundary: (0..=nx).map(|i| i == 0 || i == nx).collect(),
        origin: [x0, 0.0],
        step: [hx, 0.0],
        grid: Grid { nx, ny: 0 },
    })
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let hi = [
            self.origin[0] + self.grid.nx as f64 * self.step[0],
            self.origin[1] + self.grid.ny as f64 * self.step[1],
        ];
        (self.origin, hi)
    }

    /// Signed area (2-D) or length (1-D) of element `e`.
    pub fn element_measure(&self, e: usize) -> f64 {
        let el = &self.elements[e];
        if self.dim == 1 {
            self.vertices[el[1]][0] - self.vertices[el[0]][0]
        } else {
            let [a, b, c] = el.map(|i| self.vertices[i]);
            0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        }
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let el = &self.elements[e];
        let k = if self.dim == 1 { 2 } else { 3 };
        let mut c = [0.0; 2];
        for &v in &el[..k] {
            c[0] += self.vertices[v][0] / k as f64;
            c[1] += self.vertices[v][1] / k as f64;
        }
        c
    }

    pub fn domain_measure(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.element_measure(e)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for e in 0..self.n_elements() {
            let a = self.element_measure(e);
            if a <= DEGENERATE {
                return Err(Error::Validation(format!("element {e} is degenerate or inverted (measure {a:e})")));
            }
        }
        Ok(())
    }

    /// Barycentric weights (vertex, weight) of the element containing `p`.
    pub fn locate(&self, p: [f64; 2]) -> Option<Vec<(usize, f64)>> {
        let (lo, hi) = self.bbox();
        let inside = |k: usize| p[k] >= lo[k] - HULL_TOL && p[k] <= hi[k] + HULL_TOL;
        if self.grid.nx == 0 {
            return ((p[0] - lo[0]).abs() <= HULL_TOL).then(|| vec![(0, 1.0)]);
        }
        if !inside(0) || (self.dim == 2 && !inside(1)) {
            return None;
        }
        let cell = |k: usize, n: usize| {
            let s = ((p[k] - self.origin[k]) / self.step[k]).clamp(0.0, n as f64);
            let i = (s.floor() as usize).min(n - 1);
            (i, (s - i as f64).clamp(0.0, 1.0))
        };
        let (i, u) = cell(0, self.grid.nx);
        let mut out = Vec::with_capacity(3);
        if self.dim == 1 {
            out.push((i, 1.0 - u));
            out.push((i + 1, u));
        } else {
            let (j, v) = cell(1, self.grid.ny);
            let nx1 = self.grid.nx + 1;
            let (v00, v10, v11, v01) = (j * nx1 + i, j * nx1 + i + 1, (j + 1) * nx1 + i + 1, (j + 1) * nx1 + i);
            if u >= v {
                out.extend([(v00, 1.0 - u), (v10, u - v), (v11, v)]);
            } else {
                out.extend([(v00, 1.0 - v), (v11, u), (v01, v - u)]);
            }
        }
        out.retain(|&(_, w)| w != 0.0);
        Some(out)
    }

    /// Sparse evaluation matrix (rows = points, cols = vertices).
    pub fn projection_matrix(&self, points: &[[f64; 2]]) -> Result<CsrMatrix> {
        let mut trips = Vec::with_capacity(3 * points.len());
        for (k, &p) in points.iter().enumerate() {
            let w = self.locate(p).ok_or(Error::Location { index: k })?;
            trips.extend(w.into_iter().map(|(v, w)| (k, v, w)));
        }
        CsrMatrix::from_triplets(points.len(), self.n_vertices(), &trips)
    }

    pub fn vertices_csv(&self) -> String {
        let mut s = String::from("index,x,y,boundary\n");
        for (i, (v, b)) in self.vertices.iter().zip(&self.boundary).enumerate() {
            let _ = writeln!(s, "{i},{},{},{}", v[0], v[1], u8::from(*b));
        }
        s
    }

    pub fn elements_csv(&self) -> String {
        let mut s = String::from("index,v0,v1,v2\n");
        for (i, e) in self.elements.iter().enumerate() {
            if self.dim == 1 {
                let _ = writeln!(s, "{i},{},{},", e[0], e[1]);
            } else {
                let _ = writeln!(s, "{i},{},{},{}", e[0], e[1], e[2]);
            }
        }
        s
    }
}

/// Mass, lumped mass and stiffness matrices of a mesh.
#[derive(Debug, Clone)]
pub struct AssembledOperators {
    pub c: SparseSymmetric,
    pub c_lumped: Vec<f64>,
    pub g: SparseSymmetric,
}

/// Symmetric positive-definite 2×2 diffusion tensor [[a, b], [b, d]].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor2 {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

impl Tensor2 {
    pub const IDENTITY: Tensor2 = Tensor2 { a: 1.0, b: 0.0, d: 1.0 };

    pub fn validate(&self) -> Result<()> {
        let ok = self.a > 0.0 && self.a * self.d - self.b * self.b > 0.0 && self.d.is_finite() && self.b.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("diffusion tensor {self:?} is not positive definite")))
        }
    }

    fn form(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        u[0] * (self.a * v[0] + self.b * v[1]) + u[1] * (self.b * v[0] + self.d * v[1])
    }
}

/// Element-local mass and stiffness for a triangle.
pub fn triangle_matrices(p: [[f64; 2]; 3], h: &Tensor2) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let area = 0.5 * det.abs();
    let grads: [[f64; 2]; 3] = std::array::from_fn(|i| {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        [(p[j][1] - p[k][1]) / det, (p[k][0] - p[j][0]) / det]
    });
    let mut mass = [[0.0; 3]; 3];
    let mut stiff = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            mass[i][j] = area / 12.0 * if i == j { 2.0 } else { 1.0 };
            stiff[i][j] = area * h.form(grads[i], grads[j]);
        }
    }
    (mass, stiff)
}

/// Assemble C, lumped C and G (with diffusion tensor `h` in 2-D).
pub fn assemble(mesh: &Mesh, h: &Tensor2) -> Result<AssembledOperators> {
    h.validate()?;
    let n = mesh.n_vertices();
    let mut c = SymTriplets::with_capacity(n, 6 * mesh.n_elements());
    let mut g = SymTriplets::with_capacity(n, 6 * mesh.n_elements());
    if mesh.dim == 1 {
        for el in &mesh.elements {
            let len = mesh.vertices[el[1]][0] - mesh.vertices[el[0]][0];
            let (a, b) = (el[0], el[1]);
            c.push(a, a, len / 3.0);
            c.push(b, b, len / 3.0);
            c.push(a, b, len / 6.0);
            g.push(a, a, 1.0 / len);
            g.push(b, b, 1.0 / len);
            g.push(a, b, -1.0 / len);
        }
    } else {
        for el in &mesh.elements {
            let (m, k) = triangle_matrices(el.map(|i| mesh.vertices[i]), h);
            for i in 0..3 {
                for j in i..3 {
                    c.push(el[i], el[j], m[i][j]);
                    g.push(el[i], el[j], k[i][j]);
                }
            }
        }
    }
    let c = if n == 1 && mesh.elements.is_empty() {
        // degenerate single-vertex mesh: unit measure
        SparseSymmetric::identity(1)
    } else {
        c.finalize()?
    };
    let g = g.finalize()?;
    let c_lumped = c.csr().row_sums();
    Ok(AssembledOperators { c, c_lumped, g })
}
