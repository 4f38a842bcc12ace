//! Straightened 3D quadratic forms of the tube on the cylinder I x S.
//!
//! Two forms are assembled on a tensor grid (1D in s, masked 2D in y):
//! the curved-measure form (weight 1/beta on the longitudinal square,
//! beta elsewhere, beta-weighted mass) and its flat small-eps companion.
//! Both subtract the transverse floor `lambda0 beta / (eps M)^2` and add
//! the shift `c`, so they are positive definite with floor
//! `d = c - (max|theta| + max k^2 / (4 M^2))`.
//!
//! The longitudinal first-order operator
//!
//! ```text
//! L v = v' - v h'/h + (tau + alpha') <grad_y v, R y> - (h'/h) <grad_y v, y>
//! ```
//!
//! is discretized on s-edges (forward difference for v', endpoint averages
//! for the zero-order and transverse-gradient parts), and the form enters
//! as D^T Q D, which keeps the assembled block positive semidefinite by
//! construction and reduces exactly to the 3-point Laplacian in the
//! straight untwisted control.
//!
//! The two convergence checks compare inverse eigenvalues: curved vs flat
//! form (first order in eps), and curved form vs the effective 1D operator
//! on a matched s-grid (order eps^(3/2)). Eigenvalue-resolvent differences
//! are computable lower witnesses of the operator-norm resolvent bounds:
//! they witness the norm inequality, they do not prove it.

use serde::{Deserialize, Serialize};

use crate::cross_section::{
    solve_modes_on_grid, CrossSectionDomain, MaskedGrid2, SectionModes,
};
use crate::effective1d::{assemble_t, c_constant, theta, BoundaryCondition};
use crate::error::{Error, Result};
use crate::fmt::sig12;
use crate::geometry::{Interval, TubeGeometry};
use crate::harness::{ConvergenceReport, ModeFit, ReportMeta, ReportRow};
use crate::numerics::{
    default_iter_cap, fit_rate, sparse_smallest, tridiag_smallest, EigenPair, SparseBuilder,
    SparseSymmetric,
};

/// Tensor grid over I x S.
#[derive(Debug, Clone)]
pub struct Grid3D {
    /// s-values of the unknown levels (interior vertices for Dirichlet,
    /// cell centers for Neumann)
    pub s_nodes: Vec<f64>,
    pub ds: f64,
    pub window: (f64, f64),
    pub bc: BoundaryCondition,
    pub section: MaskedGrid2,
}

impl Grid3D {
    pub fn new(
        window: (f64, f64),
        s_cells: usize,
        section: MaskedGrid2,
        bc: BoundaryCondition,
    ) -> Result<Self> {
        if s_cells < 4 {
            return Err(Error::invalid("need at least 4 cells along the tube"));
        }
        let (lo, hi) = window;
        if !(hi > lo) {
            return Err(Error::invalid(format!("bad window [{lo}, {hi}]")));
        }
        let ds = (hi - lo) / s_cells as f64;
        let s_nodes: Vec<f64> = match bc {
            BoundaryCondition::Dirichlet => {
                (1..s_cells).map(|i| lo + i as f64 * ds).collect()
            }
            BoundaryCondition::Neumann => {
                (0..s_cells).map(|i| lo + (i as f64 + 0.5) * ds).collect()
            }
        };
        Ok(Self {
            s_nodes,
            ds,
            window,
            bc,
            section,
        })
    }

    /// Build on the same masked grid a section solve used.
    pub fn from_modes(
        window: (f64, f64),
        s_cells: usize,
        modes: &SectionModes,
        bc: BoundaryCondition,
    ) -> Result<Self> {
        Self::new(window, s_cells, modes.grid.clone(), bc)
    }

    pub fn unknowns(&self) -> usize {
        self.s_nodes.len() * self.section.interior_count()
    }

    fn node_index(&self, s_level: usize, y_interior: usize) -> usize {
        s_level * self.section.interior_count() + y_interior
    }

    /// s-edges as (left level, right level, midpoint s); `None` marks a
    /// Dirichlet boundary level (value 0).
    fn s_edges(&self) -> Vec<(Option<usize>, Option<usize>, f64)> {
        let (lo, _) = self.window;
        match self.bc {
            BoundaryCondition::Dirichlet => {
                let cells = self.s_nodes.len() + 1;
                (0..cells)
                    .map(|e| {
                        let left = if e == 0 { None } else { Some(e - 1) };
                        let right = if e + 1 == cells { None } else { Some(e) };
                        (left, right, lo + (e as f64 + 0.5) * self.ds)
                    })
                    .collect()
            }
            BoundaryCondition::Neumann => (0..self.s_nodes.len().saturating_sub(1))
                .map(|e| (Some(e), Some(e + 1), lo + (e as f64 + 1.0) * self.ds))
                .collect(),
        }
    }
}

/// Which measure the form carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormKind {
    /// curved-measure form: 1/beta longitudinal weight, beta-weighted mass
    CurvedMeasure,
    /// flat small-eps companion: unit weights, plain mass
    Flat,
}

/// Assembled stiffness (with mass) plus metadata.
#[derive(Debug, Clone)]
pub struct AssembledForm {
    pub stiffness: SparseSymmetric,
    pub kind: FormKind,
    pub eps: f64,
    pub c: f64,
    pub lambda0: f64,
}

/// Assemble the flat form on the grid. `modes` supplies `lambda0` and must
/// live on the same masked section grid.
pub fn assemble_g(
    g: &TubeGeometry,
    modes: &SectionModes,
    grid: &Grid3D,
    eps: f64,
    c: f64,
) -> Result<AssembledForm> {
    assemble(g, modes.lambda0, grid, eps, c, FormKind::Flat)
}

/// Assemble the curved-measure form (generalized problem with
/// beta-weighted mass).
pub fn assemble_ghat(
    g: &TubeGeometry,
    modes: &SectionModes,
    grid: &Grid3D,
    eps: f64,
    c: f64,
) -> Result<AssembledForm> {
    assemble(g, modes.lambda0, grid, eps, c, FormKind::CurvedMeasure)
}

fn assemble(
    g: &TubeGeometry,
    lambda0: f64,
    grid: &Grid3D,
    eps: f64,
    c: f64,
    kind: FormKind,
) -> Result<AssembledForm> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let section = &grid.section;
    let m_y = section.interior_count();
    let n = grid.unknowns();
    let (dy1, dy2) = section.steps();
    let cell_y = section.cell_area();
    let ds = grid.ds;
    let cell = ds * cell_y;
    let m_h = g.max_h();
    let hat = kind == FormKind::CurvedMeasure;

    let beta_checked = |s: f64, y: [f64; 2]| -> Result<f64> {
        let b = g.beta(s, y, eps);
        if !(b > 0.0) {
            return Err(Error::Singular(format!(
                "beta = {b:.4e} at s = {s:.4}, y = ({:.4}, {:.4}), eps = {eps}",
                y[0], y[1]
            )));
        }
        Ok(b)
    };

    let mut builder = SparseBuilder::new(n);
    let mut mass = vec![0.0f64; n];

    // longitudinal block: D^T Q D over s-edges
    let mut coefs: Vec<(usize, f64)> = Vec::with_capacity(10);
    for (left, right, s_mid) in grid.s_edges() {
        let lg = g.log_deriv_h(s_mid);
        let tw = g.twist(s_mid);
        for p in 0..m_y {
            let y = section.position(p);
            // a = tw * Ry - lg * y multiplies grad_y v
            let a1 = tw * (-y[1]) - lg * y[0];
            let a2 = tw * y[0] - lg * y[1];

            coefs.clear();
            if let Some(l) = left {
                coefs.push((grid.node_index(l, p), -1.0 / ds - 0.5 * lg));
            }
            if let Some(r) = right {
                coefs.push((grid.node_index(r, p), 1.0 / ds - 0.5 * lg));
            }
            // endpoint-averaged central y-differences
            for slab in [left, right].into_iter().flatten() {
                let mut add = |q: Option<usize>, v: f64| {
                    if let Some(q) = q {
                        if v != 0.0 {
                            coefs.push((grid.node_index(slab, q), v));
                        }
                    }
                };
                add(section.neighbor(p, 1, 0), 0.5 * a1 / (2.0 * dy1));
                add(section.neighbor(p, -1, 0), -0.5 * a1 / (2.0 * dy1));
                add(section.neighbor(p, 0, 1), 0.5 * a2 / (2.0 * dy2));
                add(section.neighbor(p, 0, -1), -0.5 * a2 / (2.0 * dy2));
            }

            let q_weight = if hat {
                cell / beta_checked(s_mid, y)?
            } else {
                cell
            };
            for (i, &(ni, ci)) in coefs.iter().enumerate() {
                for &(nj, cj) in coefs.iter().skip(i) {
                    builder.push(ni, nj, q_weight * ci * cj);
                }
            }
        }
    }

    // transverse block and zeroth-order terms per unknown s-level
    for (lvl, &s) in grid.s_nodes.iter().enumerate() {
        let h = g.h.eval(s);
        let trans_scale = 1.0 / (eps * eps * h * h);
        for p in 0..m_y {
            let y = section.position(p);
            let node = grid.node_index(lvl, p);

            // y-edges in +1 directions; exterior neighbors are Dirichlet
            let mut edge = |dirx: i64, diry: i64, dlen: f64, mid: [f64; 2]| -> Result<()> {
                let w = beta_checked(s, mid)? * trans_scale * cell / (dlen * dlen);
                match section.neighbor(p, dirx, diry) {
                    Some(q) => {
                        let nq = grid.node_index(lvl, q);
                        builder.push(node, node, w);
                        builder.push(nq, nq, w);
                        builder.push(node, nq, -w);
                    }
                    None => builder.push(node, node, w),
                }
                Ok(())
            };
            edge(1, 0, dy1, [y[0] + 0.5 * dy1, y[1]])?;
            edge(0, 1, dy2, [y[0], y[1] + 0.5 * dy2])?;
            // backward edges only when the neighbor is exterior (otherwise
            // that edge was counted from the neighbor)
            if section.neighbor(p, -1, 0).is_none() {
                let w = beta_checked(s, [y[0] - 0.5 * dy1, y[1]])? * trans_scale * cell
                    / (dy1 * dy1);
                builder.push(node, node, w);
            }
            if section.neighbor(p, 0, -1).is_none() {
                let w = beta_checked(s, [y[0], y[1] - 0.5 * dy2])? * trans_scale * cell
                    / (dy2 * dy2);
                builder.push(node, node, w);
            }

            let beta_node = beta_checked(s, y)?;
            let zero_order = if hat {
                (-lambda0 * beta_node / (eps * eps * m_h * m_h) + c * beta_node) * cell
            } else {
                (-lambda0 * beta_node / (eps * eps * m_h * m_h) + c) * cell
            };
            builder.push(node, node, zero_order);

            mass[node] = if hat { beta_node * cell } else { cell };
        }
    }

    Ok(AssembledForm {
        stiffness: builder.build_with_mass(mass)?,
        kind,
        eps,
        c,
        lambda0,
    })
}

/// Smallest eigenpairs of an assembled form (generalized problem with its
/// mass). `tol` defaults to `1e-8 * scale` when `None`.
pub fn spectrum3d(
    form: &AssembledForm,
    count: usize,
    tol: Option<f64>,
) -> Result<Vec<EigenPair>> {
    let a = &form.stiffness;
    let tol = tol.unwrap_or(1e-8 * a.scale_estimate());
    sparse_smallest(a, count, tol, default_iter_cap(count, a.n()))
}

/// Configuration of the 3D convergence protocols.
#[derive(Debug, Clone)]
pub struct Tube3dConfig {
    pub geometry: TubeGeometry,
    pub section: CrossSectionDomain,
    /// at least 4 values, strictly decreasing, geometric
    pub eps_list: Vec<f64>,
    pub j_max: usize,
    /// s-cells of the default grid
    pub s_cells: usize,
    /// y-cells across the section bounding box (x-extent)
    pub y_cells: usize,
    /// control grid scale for the discretization spread
    pub control_scale: f64,
    pub bc: BoundaryCondition,
}

impl Tube3dConfig {
    pub fn new(
        geometry: TubeGeometry,
        section: CrossSectionDomain,
        eps_list: Vec<f64>,
    ) -> Self {
        Self {
            geometry,
            section,
            eps_list,
            j_max: 0,
            s_cells: 96,
            y_cells: 24,
            control_scale: 0.75,
            bc: BoundaryCondition::Dirichlet,
        }
    }

    fn validate(&self) -> Result<(f64, f64)> {
        if self.eps_list.len() < 4 {
            return Err(Error::invalid("need at least 4 eps values"));
        }
        for w in self.eps_list.windows(2) {
            if !(w[1] < w[0] && w[1] > 0.0) {
                return Err(Error::invalid("eps list must be positive and strictly decreasing"));
            }
        }
        let r0 = self.eps_list[0] / self.eps_list[1];
        for w in self.eps_list.windows(2) {
            let r = w[0] / w[1];
            if (r - r0).abs() > 0.02 * r0 {
                return Err(Error::invalid("eps list must be a geometric progression"));
            }
        }
        match self.geometry.interval {
            Interval::Bounded { lo, hi } => Ok((lo, hi)),
            Interval::RealLine => Err(Error::invalid(
                "3D checks run on bounded intervals (desk-scale solves)",
            )),
        }
    }

    fn section_cells(&self, scale: f64) -> (usize, usize) {
        let (x_lo, x_hi, y_lo, y_hi) = self.section.bbox();
        let cx = ((self.y_cells as f64 * scale).round() as usize).max(4);
        let cy = ((cx as f64 * (y_hi - y_lo) / (x_hi - x_lo)).round() as usize).max(4);
        (cx, cy)
    }
}

enum CheckMode {
    /// curved form vs matched effective 1D operator
    Reduction,
    /// curved form vs flat form
    FormComparison,
}

/// Inverse-eigenvalue differences |l_j(curved)^-1 - l_j(T)^-1| across the
/// eps sweep, with a coarser control grid quantifying discretization.
pub fn reduction_check(cfg: &Tube3dConfig) -> Result<ConvergenceReport> {
    convergence_protocol(cfg, CheckMode::Reduction)
}

/// Inverse-eigenvalue differences |l_j(curved)^-1 - l_j(flat)^-1| across
/// the eps sweep.
pub fn form_comparison_check(cfg: &Tube3dConfig) -> Result<ConvergenceReport> {
    convergence_protocol(cfg, CheckMode::FormComparison)
}

fn convergence_protocol(cfg: &Tube3dConfig, mode: CheckMode) -> Result<ConvergenceReport> {
    let window = cfg.validate()?;
    let g = &cfg.geometry;
    let count = cfg.j_max + 1;

    // per resolution: values[eps_idx][j] = (1/l_hat, 1/l_cmp)
    let mut per_res: Vec<Vec<Vec<(f64, f64)>>> = Vec::new();
    let mut meta_lambda0 = 0.0;
    let mut meta_c = 0.0;
    let mut grid_unknowns = 0;

    for (res_idx, scale) in [1.0, cfg.control_scale].into_iter().enumerate() {
        let s_cells = ((cfg.s_cells as f64 * scale).round() as usize).max(8);
        let (cx, cy) = cfg.section_cells(scale);
        let y_grid = MaskedGrid2::with_cell_counts(&cfg.section, cx, cy)?;
        let modes = solve_modes_on_grid(cfg.section.clone(), y_grid, cx)
            .map_err(|e| e.in_stage("section modes"))?;
        let consts = modes.constants();
        let c = c_constant(g, &consts, window, 4096);
        if res_idx == 0 {
            meta_lambda0 = modes.lambda0;
            meta_c = c;
        }

        let mut per_eps = Vec::new();
        for &eps in &cfg.eps_list {
            let grid3 = Grid3D::from_modes(window, s_cells, &modes, cfg.bc)?;
            if res_idx == 0 {
                grid_unknowns = grid3.unknowns();
            }
            let hat = assemble_ghat(g, &modes, &grid3, eps, c)?;
            let l_hat = spectrum3d(&hat, count, None)?;

            let l_cmp: Vec<f64> = match mode {
                CheckMode::Reduction => {
                    let op = assemble_t(
                        g,
                        &consts,
                        modes.lambda0,
                        eps,
                        window,
                        cfg.bc,
                        c,
                        Some(s_cells),
                    )?;
                    let tol = 1e-10 * op.matrix.norm_estimate();
                    tridiag_smallest(&op.matrix, count, tol)?
                        .iter()
                        .map(|p| p.value)
                        .collect()
                }
                CheckMode::FormComparison => {
                    let flat = assemble_g(g, &modes, &grid3, eps, c)?;
                    spectrum3d(&flat, count, None)?
                        .iter()
                        .map(|p| p.value)
                        .collect()
                }
            };

            let pairs: Vec<(f64, f64)> = (0..count)
                .map(|j| (1.0 / l_hat[j].value, 1.0 / l_cmp[j]))
                .collect();
            per_eps.push(pairs);
        }
        per_res.push(per_eps);
    }

    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for j in 0..count {
        let mut errs = Vec::new();
        let mut flags = Vec::new();
        let mut grid_limited = false;
        for (ei, &eps) in cfg.eps_list.iter().enumerate() {
            let (inv_hat, inv_cmp) = per_res[0][ei][j];
            let e_default = (inv_hat - inv_cmp).abs();
            let (ih_c, ic_c) = per_res[1][ei][j];
            let e_control = (ih_c - ic_c).abs();
            let spread = (e_default - e_control).abs();
            if e_default > 0.0 && spread > 0.3 * e_default {
                grid_limited = true;
            }
            rows.push(ReportRow {
                epsilon: eps,
                j,
                value: inv_hat,
                reference: inv_cmp,
                abs_error: e_default,
                grid_n: grid_unknowns,
                window_l: window.1,
                spread: Some(spread),
            });
            errs.push((eps, e_default));
        }

        let rate = if errs.iter().all(|&(_, e)| e > 1e-15) {
            fit_rate(&errs).ok()
        } else {
            flags.push("exact-agreement".into());
            None
        };
        if grid_limited {
            flags.push("grid-limited".into());
        }
        fits.push(ModeFit {
            j,
            rate,
            extrapolated: None,
            extrapolation_order: None,
            deviation: None,
            flags,
        });
    }

    Ok(ConvergenceReport {
        meta: ReportMeta {
            study: match mode {
                CheckMode::Reduction => "resolvent-reduction-3d-vs-1d".into(),
                CheckMode::FormComparison => "resolvent-curved-vs-flat".into(),
            },
            bc: cfg.bc,
            section_resolution: cfg.y_cells,
            lambda0: meta_lambda0,
            max_h: cfg.geometry.max_h(),
            shift_c: meta_c,
            errors: Vec::new(),
        },
        rows,
        fits,
    })
}

/// Coercivity floor d = c - (max|theta| + max k^2 / (4 M^2)) of the
/// assembled forms, computed on a sampling grid.
pub fn coercivity_floor(
    g: &TubeGeometry,
    consts: &crate::cross_section::SectionConstants,
    window: (f64, f64),
    samples: usize,
    c: f64,
) -> f64 {
    let samples = samples.max(64);
    let mut max_theta = 0.0f64;
    let mut max_k2 = 0.0f64;
    for i in 0..=samples {
        let s = window.0 + (window.1 - window.0) * i as f64 / samples as f64;
        max_theta = max_theta.max(theta(g, consts, s).abs());
        let k = g.k.eval(s);
        max_k2 = max_k2.max(k * k / 4.0);
    }
    c - max_theta - max_k2 / (g.max_h() * g.max_h())
}

/// Write a matrix in the coordinate text format:
/// header `n nnz`, then one `row col value` line per stored upper-triangle
/// entry (0-based indices, 12 significant digits).
pub fn write_coordinate_text(a: &SparseSymmetric, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut out = format!("{} {}\n", a.n(), a.nnz_upper());
    for (r, c, v) in a.upper_entries() {
        out.push_str(&format!("{r} {c} {}\n", sig12(v)));
    }
    let io_err = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(out.as_bytes()).map_err(io_err)
}

/// Parse the coordinate text format back into a matrix (no mass).
pub fn read_coordinate_text(path: &std::path::Path) -> Result<SparseSymmetric> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("empty coordinate file"))?;
    let mut hp = header.split_whitespace();
    let n: usize = hp
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::invalid("bad coordinate header"))?;
    let nnz: usize = hp
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::invalid("bad coordinate header"))?;
    let mut builder = SparseBuilder::new(n);
    let mut seen = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let r: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::invalid(format!("bad coordinate line `{line}`")))?;
        let c: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::invalid(format!("bad coordinate line `{line}`")))?;
        let v: f64 = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::invalid(format!("bad coordinate line `{line}`")))?;
        builder.push(r, c, v);
        seen += 1;
    }
    if seen != nnz {
        return Err(Error::invalid(format!(
            "coordinate file promised {nnz} entries, found {seen}"
        )));
    }
    builder.build()
}
