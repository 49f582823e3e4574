//! Bilinear finite elements for the 2D heat equation with piecewise
//! constant materials, prescribed boundary fluxes, volumetric sources and a
//! linearized radiative sink to deep space.
//!
//! Each step solves
//! `(M + dt K + dt sum_i R_i(T_old)) T_new = M T_old + dt sum_i q_i b_i + dt sum_j f_j s_j`
//! with `R_i` the boundary mass matrix of side `i` weighted by
//! `sigma eps z_len T_old^3` (nodal cubes, interpolated).

use nalgebra::DMatrixViewMut;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::STEFAN_BOLTZMANN;

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`, m.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    /// W m^-1 K^-1.
    pub conductivity: f64,
    /// Volumetric heat capacity rho c_p, J m^-3 K^-1.
    pub heat_capacity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subdomain {
    pub name: String,
    pub rect: Rect,
    pub material: Material,
}

/// Domain sides in sensor order: bottom, right, top, left.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];
}

fn default_extent() -> f64 {
    2.0
}
fn default_cells() -> usize {
    64
}
fn default_z_len() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FemConfig {
    #[serde(default = "default_extent")]
    pub lx: f64,
    #[serde(default = "default_extent")]
    pub ly: f64,
    #[serde(default = "default_cells")]
    pub nx: usize,
    #[serde(default = "default_cells")]
    pub ny: usize,
    pub background: Material,
    /// Later entries override earlier ones where they overlap.
    #[serde(default)]
    pub subdomains: Vec<Subdomain>,
    pub emissivity: f64,
    #[serde(default = "default_z_len")]
    pub z_len: f64,
    /// s.
    pub dt: f64,
    /// Uniform initial temperature, K.
    pub initial_temperature: f64,
}

impl FemConfig {
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn dof_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn side_length(&self, side: Side) -> f64 {
        match side {
            Side::Bottom | Side::Top => self.lx,
            Side::Left | Side::Right => self.ly,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lx > 0.0 && self.ly > 0.0) {
            return bad(format!(
                "fem domain extents must be positive, got {} x {}",
                self.lx, self.ly
            ));
        }
        if self.nx < 4 || self.ny < 4 {
            return bad(format!(
                "fem mesh needs at least 4 cells per side, got {} x {}",
                self.nx, self.ny
            ));
        }
        if !(self.dt > 0.0) {
            return bad(format!("fem.dt must be positive, got {}", self.dt));
        }
        if !(self.z_len > 0.0) {
            return bad(format!("fem.z_len must be positive, got {}", self.z_len));
        }
        if !(self.emissivity >= 0.0 && self.emissivity <= 1.0) {
            return bad(format!(
                "fem.emissivity must lie in [0, 1], got {}",
                self.emissivity
            ));
        }
        if !(self.initial_temperature > 0.0) {
            return bad(format!(
                "fem.initial_temperature must be positive, got {}",
                self.initial_temperature
            ));
        }
        check_material("background", &self.background)?;
        let (hx, hy) = (self.hx(), self.hy());
        let aligned = |v: f64, h: f64| ((v / h) - (v / h).round()).abs() < 1e-9;
        for sub in &self.subdomains {
            check_material(&sub.name, &sub.material)?;
            let r = &sub.rect;
            if !(r.x0 >= 0.0
                && r.x0 < r.x1
                && r.x1 <= self.lx
                && r.y0 >= 0.0
                && r.y0 < r.y1
                && r.y1 <= self.ly)
            {
                return bad(format!(
                    "subdomain {} {:?} is not a rectangle inside the domain",
                    sub.name, r
                ));
            }
            if ![r.x0, r.x1].iter().all(|&v| aligned(v, hx))
                || ![r.y0, r.y1].iter().all(|&v| aligned(v, hy))
            {
                return bad(format!(
                    "subdomain {} {:?} does not align with the {}x{} mesh",
                    sub.name, r, self.nx, self.ny
                ));
            }
        }
        Ok(())
    }

    /// Material of the element whose lower-left node is `(i, j)`.
    fn element_material(&self, i: usize, j: usize) -> Material {
        let xc = (i as f64 + 0.5) * self.hx();
        let yc = (j as f64 + 0.5) * self.hy();
        self.subdomains
            .iter()
            .rev()
            .find(|s| s.rect.contains(xc, yc))
            .map_or(self.background, |s| s.material)
    }

    /// Nodes along `side`, ordered by increasing coordinate.
    pub fn side_nodes(&self, side: Side) -> Vec<usize> {
        match side {
            Side::Bottom => (0..=self.nx).map(|i| self.node_index(i, 0)).collect(),
            Side::Top => (0..=self.nx).map(|i| self.node_index(i, self.ny)).collect(),
            Side::Left => (0..=self.ny).map(|j| self.node_index(0, j)).collect(),
            Side::Right => (0..=self.ny).map(|j| self.node_index(self.nx, j)).collect(),
        }
    }
}

fn check_material(name: &str, m: &Material) -> Result<()> {
    if m.conductivity > 0.0
        && m.heat_capacity > 0.0
        && m.conductivity.is_finite()
        && m.heat_capacity.is_finite()
    {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "material of {name} needs positive conductivity and heat capacity, got {m:?}"
        )))
    }
}

const GAUSS: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// Shape values and reference-coordinate gradients of the Q1 basis at
/// `(xi, eta)` in `[-1, 1]^2`; local order (0,0), (1,0), (1,1), (0,1).
fn q1_basis(xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    let sx = [-1.0, 1.0, 1.0, -1.0];
    let sy = [-1.0, -1.0, 1.0, 1.0];
    let mut n = [0.0; 4];
    let mut d = [[0.0; 2]; 4];
    for a in 0..4 {
        n[a] = 0.25 * (1.0 + sx[a] * xi) * (1.0 + sy[a] * eta);
        d[a] = [
            0.25 * sx[a] * (1.0 + sy[a] * eta),
            0.25 * sy[a] * (1.0 + sx[a] * xi),
        ];
    }
    (n, d)
}

/// Element mass and stiffness by 2x2 Gauss quadrature on an `hx x hy`
/// rectangle (exact for the bilinear basis).
pub fn element_matrices(
    hx: f64,
    hy: f64,
    material: Material,
) -> ([[f64; 4]; 4], [[f64; 4]; 4], [f64; 4]) {
    let jac = 0.25 * hx * hy;
    let mut mass = [[0.0; 4]; 4];
    let mut stiff = [[0.0; 4]; 4];
    let mut load = [0.0; 4];
    for &xi in &GAUSS {
        for &eta in &GAUSS {
            let (n, d) = q1_basis(xi, eta);
            for a in 0..4 {
                load[a] += n[a] * jac;
                for b in 0..4 {
                    mass[a][b] += material.heat_capacity * n[a] * n[b] * jac;
                    let grad =
                        d[a][0] * d[b][0] * 4.0 / (hx * hx) + d[a][1] * d[b][1] * 4.0 / (hy * hy);
                    stiff[a][b] += material.conductivity * grad * jac;
                }
            }
        }
    }
    (mass, stiff, load)
}

/// Assembled operators of the spatial discretization.
#[derive(Clone, Debug)]
pub struct FemOperators {
    pub config: FemConfig,
    pub mass: CscMatrix<f64>,
    pub stiffness: CscMatrix<f64>,
    /// `int_{Gamma_i} v ds`, in [`Side::ALL`] order.
    pub boundary_load: [Vec<f64>; 4],
    /// `int_{Gamma_i} u v ds`, in [`Side::ALL`] order.
    pub boundary_mass: [CscMatrix<f64>; 4],
    /// `int_{Omega_j} v dx` per configured subdomain.
    pub source_load: Vec<Vec<f64>>,
}

pub fn build_fem_operators(config: &FemConfig) -> Result<FemOperators> {
    config.validate()?;
    let n = config.dof_count();
    let (hx, hy) = (config.hx(), config.hy());
    let mut mass = CooMatrix::new(n, n);
    let mut stiffness = CooMatrix::new(n, n);
    let mut source_load = vec![vec![0.0; n]; config.subdomains.len()];
    for j in 0..config.ny {
        for i in 0..config.nx {
            let nodes = [
                config.node_index(i, j),
                config.node_index(i + 1, j),
                config.node_index(i + 1, j + 1),
                config.node_index(i, j + 1),
            ];
            let (me, ke, le) = element_matrices(hx, hy, config.element_material(i, j));
            for a in 0..4 {
                for b in 0..4 {
                    mass.push(nodes[a], nodes[b], me[a][b]);
                    stiffness.push(nodes[a], nodes[b], ke[a][b]);
                }
            }
            let xc = (i as f64 + 0.5) * hx;
            let yc = (j as f64 + 0.5) * hy;
            for (sub, load) in config.subdomains.iter().zip(source_load.iter_mut()) {
                if sub.rect.contains(xc, yc) {
                    for a in 0..4 {
                        load[nodes[a]] += le[a];
                    }
                }
            }
        }
    }
    let side_ops = Side::ALL.map(|side| {
        let nodes = config.side_nodes(side);
        let h = config.side_length(side) / (nodes.len() - 1) as f64;
        let mut load = vec![0.0; n];
        let mut bm = CooMatrix::new(n, n);
        for w in nodes.windows(2) {
            load[w[0]] += 0.5 * h;
            load[w[1]] += 0.5 * h;
            bm.push(w[0], w[0], h / 3.0);
            bm.push(w[1], w[1], h / 3.0);
            bm.push(w[0], w[1], h / 6.0);
            bm.push(w[1], w[0], h / 6.0);
        }
        (load, CscMatrix::from(&bm))
    });
    let [(l0, m0), (l1, m1), (l2, m2), (l3, m3)] = side_ops;
    Ok(FemOperators {
        config: config.clone(),
        mass: CscMatrix::from(&mass),
        stiffness: CscMatrix::from(&stiffness),
        boundary_load: [l0, l1, l2, l3],
        boundary_mass: [m0, m1, m2, m3],
        source_load,
    })
}

fn value_index(m: &CscMatrix<f64>, row: usize, col: usize) -> usize {
    let start = m.col_offsets()[col];
    let rows = &m.row_indices()[start..m.col_offsets()[col + 1]];
    start
        + rows
            .binary_search(&row)
            .expect("entry present in the pattern")
}

fn csc_mul(m: &CscMatrix<f64>, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (col, lane) in m.col_iter().enumerate() {
        let xc = x[col];
        for (&row, &v) in lane.row_indices().iter().zip(lane.values()) {
            out[row] += v * xc;
        }
    }
}

/// Forcing values held over one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepForcing {
    /// Incoming boundary flux per side, W m^-2, in [`Side::ALL`] order.
    pub flux: [f64; 4],
    /// Volumetric source per subdomain, W m^-3.
    pub source: Vec<f64>,
}

/// Time stepper holding the system pattern and its Cholesky factor.
pub struct FemSolver {
    ops: FemOperators,
    base: CscMatrix<f64>,
    /// Per side: `(node_a, node_b, idx_aa, idx_ab, idx_ba, idx_bb)` for every
    /// boundary segment.
    segments: [Vec<(usize, usize, [usize; 4])>; 4],
    system: CscMatrix<f64>,
    factor: Option<CscCholesky<f64>>,
    rhs: Vec<f64>,
}

impl FemSolver {
    pub fn new(ops: FemOperators) -> Result<Self> {
        let cfg = &ops.config;
        let n = cfg.dof_count();
        let mut coo = CooMatrix::new(n, n);
        for (m, scale) in [(&ops.mass, 1.0), (&ops.stiffness, cfg.dt)] {
            for (r, c, v) in m.triplet_iter() {
                coo.push(r, c, scale * v);
            }
        }
        for bm in &ops.boundary_mass {
            for (r, c, _) in bm.triplet_iter() {
                coo.push(r, c, 0.0);
            }
        }
        let base = CscMatrix::from(&coo);
        let segments = Side::ALL.map(|side| {
            cfg.side_nodes(side)
                .windows(2)
                .map(|w| {
                    let (a, b) = (w[0], w[1]);
                    let idx = [
                        value_index(&base, a, a),
                        value_index(&base, a, b),
                        value_index(&base, b, a),
                        value_index(&base, b, b),
                    ];
                    (a, b, idx)
                })
                .collect()
        });
        Ok(FemSolver {
            system: base.clone(),
            base,
            segments,
            ops,
            factor: None,
            rhs: vec![0.0; n],
        })
    }

    pub fn operators(&self) -> &FemOperators {
        &self.ops
    }

    /// Advances `temps` by one step in place.
    pub fn step(&mut self, temps: &mut [f64], forcing: &StepForcing) -> Result<()> {
        let cfg = &self.ops.config;
        let n = cfg.dof_count();
        if temps.len() != n {
            return Err(Error::Dimension {
                what: "fem state",
                expected: n,
                got: temps.len(),
            });
        }
        if forcing.source.len() != cfg.subdomains.len() {
            return Err(Error::Dimension {
                what: "subdomain sources",
                expected: cfg.subdomains.len(),
                got: forcing.source.len(),
            });
        }
        if let Some(node) = temps.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFiniteState { node });
        }
        let dt = cfg.dt;
        let coef = dt * STEFAN_BOLTZMANN * cfg.emissivity * cfg.z_len;

        let values = self.system.values_mut();
        values.copy_from_slice(self.base.values());
        if coef > 0.0 {
            for (side, segs) in Side::ALL.iter().zip(&self.segments) {
                let h = cfg.side_length(*side) / segs.len() as f64;
                for &(a, b, idx) in segs {
                    let (ca, cb) = (temps[a].powi(3), temps[b].powi(3));
                    // int (ca phi_a + cb phi_b) phi_r phi_s over the segment
                    values[idx[0]] += coef * h * (ca / 4.0 + cb / 12.0);
                    values[idx[1]] += coef * h * (ca + cb) / 12.0;
                    values[idx[2]] += coef * h * (ca + cb) / 12.0;
                    values[idx[3]] += coef * h * (ca / 12.0 + cb / 4.0);
                }
            }
        }
        let singular = |e| Error::Numerical(format!("fem system factorization failed: {e}"));
        match self.factor.as_mut() {
            Some(f) => f.refactor(self.system.values()).map_err(singular)?,
            None => self.factor = Some(CscCholesky::factor(&self.system).map_err(singular)?),
        }

        csc_mul(&self.ops.mass, temps, &mut self.rhs);
        for (q, load) in forcing.flux.iter().zip(&self.ops.boundary_load) {
            if *q != 0.0 {
                for (r, l) in self.rhs.iter_mut().zip(load) {
                    *r += dt * q * l;
                }
            }
        }
        for (f, load) in forcing.source.iter().zip(&self.ops.source_load) {
            if *f != 0.0 {
                for (r, l) in self.rhs.iter_mut().zip(load) {
                    *r += dt * f * l;
                }
            }
        }
        self.factor
            .as_ref()
            .unwrap()
            .solve_mut(DMatrixViewMut::from_slice(&mut self.rhs, n, 1));
        if let Some(node) = self.rhs.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFiniteState { node });
        }
        temps.copy_from_slice(&self.rhs);
        Ok(())
    }
}

/// One implicit step from `temps` (convenience wrapper that factorizes anew).
pub fn fem_step(ops: &FemOperators, temps: &[f64], forcing: &StepForcing) -> Result<Vec<f64>> {
    let mut solver = FemSolver::new(ops.clone())?;
    let mut next = temps.to_vec();
    solver.step(&mut next, forcing)?;
    Ok(next)
}

/// Forcing series sampled at `t_k = k dt`; the value at `k` drives the step
/// from `t_k` to `t_{k+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingSeries {
    /// Incoming flux per side (W m^-2); an empty series means zero.
    pub flux: [Vec<f64>; 4],
    /// Source per subdomain (W m^-3); an empty series means zero.
    pub source: Vec<Vec<f64>>,
}

impl ForcingSeries {
    pub fn zero(subdomains: usize) -> Self {
        ForcingSeries {
            flux: Default::default(),
            source: vec![Vec::new(); subdomains],
        }
    }

    fn at(&self, k: usize) -> Result<StepForcing> {
        let pick = |s: &Vec<f64>| -> Result<f64> {
            if s.is_empty() {
                Ok(0.0)
            } else {
                s.get(k).copied().ok_or_else(|| {
                    Error::Config(format!(
                        "forcing series of length {} does not cover step {k}",
                        s.len()
                    ))
                })
            }
        };
        Ok(StepForcing {
            flux: [
                pick(&self.flux[0])?,
                pick(&self.flux[1])?,
                pick(&self.flux[2])?,
                pick(&self.flux[3])?,
            ],
            source: self.source.iter().map(pick).collect::<Result<_>>()?,
        })
    }
}

/// Runs `steps` implicit steps from the uniform initial field and calls
/// `observe(k, field)` for `k = 0..=steps`.
pub fn simulate_with<F>(
    config: &FemConfig,
    forcing: &ForcingSeries,
    steps: usize,
    mut observe: F,
) -> Result<()>
where
    F: FnMut(usize, &[f64]) -> Result<()>,
{
    let ops = build_fem_operators(config)?;
    if forcing.source.len() != config.subdomains.len() {
        return Err(Error::Config(format!(
            "{} source series given for {} subdomains",
            forcing.source.len(),
            config.subdomains.len()
        )));
    }
    let mut solver = FemSolver::new(ops)?;
    let mut temps = vec![config.initial_temperature; config.dof_count()];
    observe(0, &temps)?;
    for k in 0..steps {
        let f = forcing.at(k)?;
        solver.step(&mut temps, &f).map_err(|e| match e {
            Error::NonFiniteState { .. } => Error::Divergence { step: k },
            other => other,
        })?;
        observe(k + 1, &temps)?;
    }
    Ok(())
}

/// Full nodal fields at `t_k = k dt`, `k = 0..=steps`.
pub fn simulate_ground_truth(
    config: &FemConfig,
    forcing: &ForcingSeries,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut fields = Vec::with_capacity(steps + 1);
    simulate_with(config, forcing, steps, |_, f| {
        fields.push(f.to_vec());
        Ok(())
    })?;
    Ok(fields)
}
