//! Cross-section eigenproblem on the 2D region S.
//!
//! A masked uniform grid discretizes S with a 5-point stencil; Dirichlet
//! conditions enter by omission (nodes strictly inside S are unknowns,
//! everything else is zero). The module computes the two lowest modes
//! (lambda_0, u_0, lambda_1), the geometric constants C1, C2, C3, F, rho_S,
//! and the weighted perturbed problem
//! `-div[(1 - xi.y) grad u] = lambda (1 - xi.y) u` behind gamma_eps.
//!
//! Resolution convention: `n` is the number of grid cells per unit length,
//! so the cell size is 1/n regardless of the domain's extent.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::TubeGeometry;
use crate::numerics::{default_iter_cap, sparse_smallest, SparseBuilder, SparseSymmetric};

/// Rotation by +pi/2: R y = (-y2, y1).
///
/// C1 and C2 are insensitive to this convention; flipping R negates C3
/// (and coherently the twist/profile cross term of the effective
/// potential), leaving the assembled forms invariant under a simultaneous
/// flip.
pub fn rotate_quarter(y: [f64; 2]) -> [f64; 2] {
    [-y[1], y[0]]
}

/// An open, bounded cross-section region.
#[derive(Debug, Clone, PartialEq)]
pub enum CrossSectionDomain {
    Disk { radius: f64, center: [f64; 2] },
    Rectangle { x_range: [f64; 2], y_range: [f64; 2] },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl CrossSectionDomain {
    pub fn unit_disk() -> Self {
        CrossSectionDomain::Disk {
            radius: 1.0,
            center: [0.0, 0.0],
        }
    }

    pub fn unit_square() -> Self {
        CrossSectionDomain::Rectangle {
            x_range: [0.0, 1.0],
            y_range: [0.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CrossSectionDomain::Disk { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::Domain(format!("disk radius {radius} must be positive")));
                }
            }
            CrossSectionDomain::Rectangle { x_range, y_range } => {
                if !(x_range[0] < x_range[1]) || !(y_range[0] < y_range[1]) {
                    return Err(Error::Domain("rectangle ranges must be increasing".into()));
                }
            }
            CrossSectionDomain::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::Domain("polygon needs at least 3 vertices".into()));
                }
                if !polygon_is_simple(vertices) {
                    return Err(Error::Domain("polygon edges self-intersect".into()));
                }
            }
        }
        Ok(())
    }

    /// Strict interior test; points on the boundary count as outside.
    pub fn contains(&self, y: [f64; 2]) -> bool {
        match self {
            CrossSectionDomain::Disk { radius, center } => {
                let dx = y[0] - center[0];
                let dy = y[1] - center[1];
                dx * dx + dy * dy < radius * radius
            }
            CrossSectionDomain::Rectangle { x_range, y_range } => {
                y[0] > x_range[0] && y[0] < x_range[1] && y[1] > y_range[0] && y[1] < y_range[1]
            }
            CrossSectionDomain::Polygon { vertices } => {
                point_in_polygon_strict(vertices, y)
            }
        }
    }

    /// Bounding box (x_lo, x_hi, y_lo, y_hi).
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        match self {
            CrossSectionDomain::Disk { radius, center } => (
                center[0] - radius,
                center[0] + radius,
                center[1] - radius,
                center[1] + radius,
            ),
            CrossSectionDomain::Rectangle { x_range, y_range } => {
                (x_range[0], x_range[1], y_range[0], y_range[1])
            }
            CrossSectionDomain::Polygon { vertices } => {
                let mut b = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
                for v in vertices {
                    b.0 = b.0.min(v[0]);
                    b.1 = b.1.max(v[0]);
                    b.2 = b.2.min(v[1]);
                    b.3 = b.3.max(v[1]);
                }
                b
            }
        }
    }

    /// rho_S = max_{y in S} |y|, attained on the closure.
    pub fn rho(&self) -> f64 {
        match self {
            CrossSectionDomain::Disk { radius, center } => {
                (center[0] * center[0] + center[1] * center[1]).sqrt() + radius
            }
            CrossSectionDomain::Rectangle { x_range, y_range } => {
                let mut r = 0.0f64;
                for &x in x_range {
                    for &y in y_range {
                        r = r.max((x * x + y * y).sqrt());
                    }
                }
                r
            }
            CrossSectionDomain::Polygon { vertices } => vertices
                .iter()
                .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
                .fold(0.0, f64::max),
        }
    }
}

fn point_in_polygon_strict(vertices: &[[f64; 2]], p: [f64; 2]) -> bool {
    // nodes on an edge are treated as boundary (excluded)
    let m = vertices.len();
    for i in 0..m {
        let a = vertices[i];
        let b = vertices[(i + 1) % m];
        if point_on_segment(a, b, p) {
            return false;
        }
    }
    // crossing number against a ray in +x
    let mut inside = false;
    for i in 0..m {
        let a = vertices[i];
        let b = vertices[(i + 1) % m];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let t = (p[1] - a[1]) / (b[1] - a[1]);
            let x = a[0] + t * (b[0] - a[0]);
            if x > p[0] {
                inside = !inside;
            }
        }
    }
    inside
}

fn point_on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let scale = ((b[0] - a[0]).abs() + (b[1] - a[1]).abs()).max(1.0);
    if cross.abs() > 1e-12 * scale {
        return false;
    }
    let d = (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]);
    let len2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
    d >= 0.0 && d <= len2
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn polygon_is_simple(vertices: &[[f64; 2]]) -> bool {
    let m = vertices.len();
    for i in 0..m {
        let a1 = vertices[i];
        let a2 = vertices[(i + 1) % m];
        for j in i + 1..m {
            // skip edges sharing a vertex
            if j == i || (j + 1) % m == i || (i + 1) % m == j {
                continue;
            }
            let b1 = vertices[j];
            let b2 = vertices[(j + 1) % m];
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

/// Uniform vertex grid over the bounding box with an interior mask.
#[derive(Debug, Clone)]
pub struct MaskedGrid2 {
    nx_nodes: usize,
    ny_nodes: usize,
    x0: f64,
    y0: f64,
    dx: f64,
    dy: f64,
    /// node (ix, iy) -> interior index, flattened ix * ny_nodes + iy
    index: Vec<i32>,
    nodes: Vec<(u32, u32)>,
}

impl MaskedGrid2 {
    /// Grid with `resolution` cells per unit length.
    pub fn new(domain: &CrossSectionDomain, resolution: usize) -> Result<Self> {
        if resolution < 4 {
            return Err(Error::invalid(format!(
                "section resolution {resolution} too coarse (need >= 4 cells per unit)"
            )));
        }
        let (x_lo, x_hi, y_lo, y_hi) = domain.bbox();
        let cx = (((x_hi - x_lo) * resolution as f64).round() as usize).max(2);
        let cy = (((y_hi - y_lo) * resolution as f64).round() as usize).max(2);
        Self::with_cell_counts(domain, cx, cy)
    }

    /// Grid with explicit cell counts along the bounding box axes.
    pub fn with_cell_counts(domain: &CrossSectionDomain, cx: usize, cy: usize) -> Result<Self> {
        domain.validate()?;
        let (x_lo, x_hi, y_lo, y_hi) = domain.bbox();
        let nx_nodes = cx + 1;
        let ny_nodes = cy + 1;
        let dx = (x_hi - x_lo) / cx as f64;
        let dy = (y_hi - y_lo) / cy as f64;

        let mut index = vec![-1i32; nx_nodes * ny_nodes];
        let mut nodes = Vec::new();
        for ix in 0..nx_nodes {
            for iy in 0..ny_nodes {
                let y = [x_lo + ix as f64 * dx, y_lo + iy as f64 * dy];
                if domain.contains(y) {
                    index[ix * ny_nodes + iy] = nodes.len() as i32;
                    nodes.push((ix as u32, iy as u32));
                }
            }
        }
        if nodes.is_empty() {
            return Err(Error::Domain(format!(
                "domain has no interior nodes at cell counts {cx} x {cy}"
            )));
        }
        Ok(Self {
            nx_nodes,
            ny_nodes,
            x0: x_lo,
            y0: y_lo,
            dx,
            dy,
            index,
            nodes,
        })
    }

    pub fn interior_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_counts(&self) -> (usize, usize) {
        (self.nx_nodes, self.ny_nodes)
    }

    pub fn steps(&self) -> (f64, f64) {
        (self.dx, self.dy)
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn position(&self, interior: usize) -> [f64; 2] {
        let (ix, iy) = self.nodes[interior];
        [
            self.x0 + ix as f64 * self.dx,
            self.y0 + iy as f64 * self.dy,
        ]
    }

    pub fn interior_index(&self, ix: usize, iy: usize) -> Option<usize> {
        if ix >= self.nx_nodes || iy >= self.ny_nodes {
            return None;
        }
        let v = self.index[ix * self.ny_nodes + iy];
        (v >= 0).then_some(v as usize)
    }

    pub fn nodes(&self) -> &[(u32, u32)] {
        &self.nodes
    }

    /// Neighbor interior index at lattice offset (sx, sy), if interior.
    pub(crate) fn neighbor(&self, interior: usize, sx: i64, sy: i64) -> Option<usize> {
        let (ix, iy) = self.nodes[interior];
        let jx = ix as i64 + sx;
        let jy = iy as i64 + sy;
        if jx < 0 || jy < 0 {
            return None;
        }
        self.interior_index(jx as usize, jy as usize)
    }
}

/// Assemble the weighted Dirichlet form `sum_edges w(mid) |dv|^2 * cell`
/// plus the weighted mass `w(node) * cell`, as a generalized eigenproblem.
///
/// With w = 1 this is exactly the standard 5-point Dirichlet Laplacian.
pub fn assemble_weighted(
    grid: &MaskedGrid2,
    weight: impl Fn([f64; 2]) -> f64,
) -> Result<SparseSymmetric> {
    let n = grid.interior_count();
    let cell = grid.cell_area();
    let (dx, dy) = grid.steps();
    let mut builder = SparseBuilder::new(n);
    let mut mass = vec![0.0f64; n];

    for p in 0..n {
        let y = grid.position(p);
        let wp = weight(y);
        if !(wp > 0.0) {
            return Err(Error::Domain(format!(
                "weight {wp:.6e} nonpositive at node ({}, {})",
                y[0], y[1]
            )));
        }
        mass[p] = wp * cell;

        // +x and +y edges from this node; edges to exterior neighbors only
        // contribute to the diagonal (Dirichlet by omission)
        let we_x = weight([y[0] + 0.5 * dx, y[1]]) * cell / (dx * dx);
        match grid.neighbor(p, 1, 0) {
            Some(q) => {
                builder.push(p, p, we_x);
                builder.push(q, q, we_x);
                builder.push(p, q, -we_x);
            }
            None => builder.push(p, p, we_x),
        }
        let wb_x = weight([y[0] - 0.5 * dx, y[1]]) * cell / (dx * dx);
        if grid.neighbor(p, -1, 0).is_none() {
            builder.push(p, p, wb_x);
        }
        let we_y = weight([y[0], y[1] + 0.5 * dy]) * cell / (dy * dy);
        match grid.neighbor(p, 0, 1) {
            Some(q) => {
                builder.push(p, p, we_y);
                builder.push(q, q, we_y);
                builder.push(p, q, -we_y);
            }
            None => builder.push(p, p, we_y),
        }
        let wb_y = weight([y[0], y[1] - 0.5 * dy]) * cell / (dy * dy);
        if grid.neighbor(p, 0, -1).is_none() {
            builder.push(p, p, wb_y);
        }
    }
    builder.build_with_mass(mass)
}

/// Two lowest Dirichlet modes of S on a masked grid.
#[derive(Debug, Clone)]
pub struct SectionModes {
    pub domain: CrossSectionDomain,
    pub grid: MaskedGrid2,
    pub lambda0: f64,
    pub lambda1: f64,
    /// Ground state on interior nodes, positive, with sum u0^2 * cell = 1.
    pub u0: Vec<f64>,
    pub resolution: usize,
}

/// Geometric constants of the section.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct SectionConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub f: [f64; 2],
    pub rho: f64,
}

/// Solve for (lambda_0, u_0, lambda_1) at `resolution` cells per unit.
pub fn solve_modes(domain: &CrossSectionDomain, resolution: usize) -> Result<SectionModes> {
    let grid = MaskedGrid2::new(domain, resolution)?;
    solve_modes_on_grid(domain.clone(), grid, resolution)
}

/// Same as [`solve_modes`] but on a caller-supplied grid (the 3D assembly
/// shares its transverse grid with the section solve this way).
pub fn solve_modes_on_grid(
    domain: CrossSectionDomain,
    grid: MaskedGrid2,
    resolution: usize,
) -> Result<SectionModes> {
    let a = assemble_weighted(&grid, |_| 1.0)?;
    let tol = 1e-10 * a.scale_estimate();
    let pairs = sparse_smallest(&a, 2, tol, default_iter_cap(2, a.n()))?;

    let lambda0 = pairs[0].value;
    let lambda1 = pairs[1].value;
    let mut u0 = pairs[0].vector.clone();
    let total: f64 = u0.iter().sum();
    if total < 0.0 {
        for v in &mut u0 {
            *v = -*v;
        }
    }
    if !(lambda0 > 0.0) || lambda0 >= lambda1 {
        return Err(Error::Domain(format!(
            "degenerate section spectrum: lambda0 = {lambda0}, lambda1 = {lambda1}"
        )));
    }
    Ok(SectionModes {
        domain,
        grid,
        lambda0,
        lambda1,
        u0,
        resolution,
    })
}

impl SectionModes {
    /// Gradient of u0 at an interior node: central differences where both
    /// lattice neighbors are interior, one-sided toward the interior side
    /// otherwise.
    fn gradient(&self, p: usize) -> [f64; 2] {
        let (dx, dy) = self.grid.steps();
        let up = self.u0[p];

        let gx = match (self.grid.neighbor(p, -1, 0), self.grid.neighbor(p, 1, 0)) {
            (Some(l), Some(r)) => (self.u0[r] - self.u0[l]) / (2.0 * dx),
            (None, Some(r)) => (self.u0[r] - up) / dx,
            (Some(l), None) => (up - self.u0[l]) / dx,
            (None, None) => 0.0,
        };
        let gy = match (self.grid.neighbor(p, 0, -1), self.grid.neighbor(p, 0, 1)) {
            (Some(l), Some(r)) => (self.u0[r] - self.u0[l]) / (2.0 * dy),
            (None, Some(r)) => (self.u0[r] - up) / dy,
            (Some(l), None) => (up - self.u0[l]) / dy,
            (None, None) => 0.0,
        };
        [gx, gy]
    }

    /// Quadrature values of C1, C2, C3, F and rho_S.
    ///
    /// All integrals use node value times cell area. For the gradient
    /// integrals C1..C3 the rim cells are extended half a step toward the
    /// boundary: those integrands do not vanish at the rim, and the
    /// uncovered half-cell band would otherwise cost an O(h) deficit. The
    /// moment F keeps plain cells (its integrand carries u0^2, which dies
    /// quadratically at the rim, and plain cells keep it consistent with
    /// the normalization measure).
    pub fn constants(&self) -> SectionConstants {
        let (dx, dy) = self.grid.steps();
        let cell_plain = dx * dy;
        let mut c1 = 0.0;
        let mut c2 = 0.0;
        let mut c3 = 0.0;
        let mut f = [0.0, 0.0];
        for p in 0..self.grid.interior_count() {
            let y = self.grid.position(p);
            let grad = self.gradient(p);
            let ry = rotate_quarter(y);
            let g_ry = grad[0] * ry[0] + grad[1] * ry[1];
            let g_y = grad[0] * y[0] + grad[1] * y[1];

            let mut wx = 1.0;
            if self.grid.neighbor(p, -1, 0).is_none() {
                wx += 0.5;
            }
            if self.grid.neighbor(p, 1, 0).is_none() {
                wx += 0.5;
            }
            let mut wy = 1.0;
            if self.grid.neighbor(p, 0, -1).is_none() {
                wy += 0.5;
            }
            if self.grid.neighbor(p, 0, 1).is_none() {
                wy += 0.5;
            }
            let cell_ext = dx * wx * dy * wy;

            c1 += g_ry * g_ry * cell_ext;
            c2 += g_y * g_y * cell_ext;
            c3 += g_ry * g_y * cell_ext;
            let u2 = self.u0[p] * self.u0[p] * cell_plain;
            f[0] += y[0] * u2;
            f[1] += y[1] * u2;
        }
        SectionConstants {
            c1,
            c2,
            c3,
            f,
            rho: self.domain.rho(),
        }
    }

    /// Write metadata as JSON next to a flat little-endian f64 dump of u0
    /// on the full rectangular grid (zeros outside the mask, row-major in
    /// the x index).
    pub fn export(&self, json_path: &Path, grid_path: &Path) -> Result<()> {
        let (nx, ny) = self.grid.node_counts();
        let meta = serde_json::json!({
            "lambda0": self.lambda0,
            "lambda1": self.lambda1,
            "resolution": self.resolution,
            "grid_nodes": [nx, ny],
            "steps": [self.grid.dx, self.grid.dy],
            "origin": [self.grid.x0, self.grid.y0],
            "interior_nodes": self.grid.interior_count(),
            "grid_dump": grid_path.to_string_lossy(),
        });
        let mut full = vec![0.0f64; nx * ny];
        for p in 0..self.grid.interior_count() {
            let (ix, iy) = self.grid.nodes[p];
            full[ix as usize * ny + iy as usize] = self.u0[p];
        }
        let io_err = |e: std::io::Error, p: &Path| Error::Io {
            path: p.display().to_string(),
            source: e,
        };
        let mut fj = std::fs::File::create(json_path).map_err(|e| io_err(e, json_path))?;
        fj.write_all(serde_json::to_string_pretty(&meta).unwrap().as_bytes())
            .map_err(|e| io_err(e, json_path))?;
        let mut fg = std::fs::File::create(grid_path).map_err(|e| io_err(e, grid_path))?;
        for v in &full {
            fg.write_all(&v.to_le_bytes()).map_err(|e| io_err(e, grid_path))?;
        }
        Ok(())
    }
}

/// Lowest eigenvalue of the perturbed section problem
/// `-div[(1 - xi.y) grad u] = lambda (1 - xi.y) u` on S.
pub fn perturbed_lowest(
    domain: &CrossSectionDomain,
    xi: [f64; 2],
    resolution: usize,
) -> Result<f64> {
    let rho = domain.rho();
    let xi_norm = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
    if xi_norm * rho >= 1.0 {
        return Err(Error::invalid(format!(
            "|xi| rho_S = {:.4} >= 1: weight 1 - xi.y is not positive on S",
            xi_norm * rho
        )));
    }
    let grid = MaskedGrid2::new(domain, resolution)?;
    let a = assemble_weighted(&grid, |y| 1.0 - (xi[0] * y[0] + xi[1] * y[1]))?;
    let tol = 1e-10 * a.scale_estimate();
    let pairs = sparse_smallest(&a, 1, tol, default_iter_cap(1, a.n()))?;
    Ok(pairs[0].value)
}

/// gamma_eps(s) = (lambda(eps h k z_alpha) - lambda_0) / eps^2, with the
/// perturbed solve at the same resolution as `modes` so that gamma(0) = 0
/// exactly.
pub fn gamma(
    geometry: &TubeGeometry,
    modes: &SectionModes,
    s: f64,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let z = geometry.z_alpha(s);
    let scale = eps * geometry.h.eval(s) * geometry.k.eval(s);
    let xi = [scale * z[0], scale * z[1]];
    let lam = perturbed_lowest(&modes.domain, xi, modes.resolution)?;
    Ok((lam - modes.lambda0) / (eps * eps))
}
