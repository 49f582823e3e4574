//! Thermal network topology, the weighted graph Laplacian and the nodal
//! vector field of the lumped model
//!
//! ```text
//! dT_i/dt = gamma_i * ( u_i + sum_j delta_ij (T_j - T_i) - kappa_i T_i^4 )
//! ```
//!
//! `gamma` are effective inverse capacitances, `delta` one conductance per
//! undirected edge, and `kappa` a fixed deep-space radiative coefficient on
//! boundary nodes. Only `gamma` and `delta` are ever identified.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Stefan-Boltzmann constant, W m^-2 K^-4.
pub const STEFAN_BOLTZMANN: f64 = 5.670374419e-8;

/// Scale used for `gamma_scale` when a graph config omits it, K/J.
pub const DEFAULT_GAMMA_SCALE: f64 = 1e-2;
/// Scale used for `delta_scale` when a graph config omits it, W/K.
pub const DEFAULT_DELTA_SCALE: f64 = 1e2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Boundary,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: usize,
    pub kind: NodeKind,
    /// Known deep-space sink coefficient, W K^-4. Zero on internal nodes.
    #[serde(default)]
    pub kappa_rad: f64,
    /// Upper bound of the admissible inverse capacitance, K/J.
    #[serde(default = "default_gamma_scale")]
    pub gamma_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub i: usize,
    pub j: usize,
    /// Upper bound of the admissible conductance, W/K.
    #[serde(default = "default_delta_scale")]
    pub delta_scale: f64,
}

fn default_gamma_scale() -> f64 {
    DEFAULT_GAMMA_SCALE
}

fn default_delta_scale() -> f64 {
    DEFAULT_DELTA_SCALE
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    nodes: Vec<NodeSpec>,
    #[serde(default)]
    edges: Vec<EdgeSpec>,
}

/// A validated simple undirected thermal graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphDoc")]
pub struct ThermalGraph {
    nodes: Vec<NodeSpec>,
    edges: Vec<EdgeSpec>,
}

impl TryFrom<GraphDoc> for ThermalGraph {
    type Error = Error;

    fn try_from(doc: GraphDoc) -> Result<Self> {
        ThermalGraph::new(doc.nodes, doc.edges)
    }
}

impl ThermalGraph {
    pub fn new(mut nodes: Vec<NodeSpec>, edges: Vec<EdgeSpec>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Graph("graph has no nodes".into()));
        }
        nodes.sort_by_key(|n| n.id);
        for (pos, node) in nodes.iter().enumerate() {
            if node.id != pos {
                return Err(Error::Graph(format!(
                    "node ids must be 0..{} without gaps (found id {} at position {pos})",
                    nodes.len() - 1,
                    node.id
                )));
            }
            if !(node.gamma_scale > 0.0 && node.gamma_scale.is_finite()) {
                return Err(Error::Graph(format!(
                    "node {}: gamma_scale must be positive",
                    node.id
                )));
            }
            if !(node.kappa_rad >= 0.0 && node.kappa_rad.is_finite()) {
                return Err(Error::Graph(format!(
                    "node {}: kappa_rad must be non-negative",
                    node.id
                )));
            }
            if node.kind == NodeKind::Internal && node.kappa_rad != 0.0 {
                return Err(Error::Graph(format!(
                    "node {}: internal nodes cannot carry a radiative sink",
                    node.id
                )));
            }
        }
        let n = nodes.len();
        let mut seen = HashSet::new();
        for (e, edge) in edges.iter().enumerate() {
            let fail = |reason: &str| Error::Edge {
                edge: e,
                i: edge.i,
                j: edge.j,
                reason: reason.to_string(),
            };
            if edge.i == edge.j {
                return Err(fail("self-loop"));
            }
            if edge.i >= n || edge.j >= n {
                return Err(fail("endpoint not in node list"));
            }
            if !(edge.delta_scale > 0.0 && edge.delta_scale.is_finite()) {
                return Err(fail("delta_scale must be positive"));
            }
            if !seen.insert((edge.i.min(edge.j), edge.i.max(edge.j))) {
                return Err(fail("duplicate edge"));
            }
        }
        let graph = ThermalGraph { nodes, edges };
        let components = graph.component_count();
        if components > 1 {
            log::warn!("thermal graph is disconnected ({components} components)");
        }
        Ok(graph)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Number of identifiable coefficients, `n + |E|`.
    pub fn parameter_count(&self) -> usize {
        self.nodes.len() + self.edges.len()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeSpec] {
        &self.edges
    }

    pub fn kappa(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.kappa_rad).collect()
    }

    /// Connected-component label of every node.
    pub fn components(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.edges {
            let a = find(&mut parent, e.i);
            let b = find(&mut parent, e.j);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        (0..n).map(|i| find(&mut parent, i)).collect()
    }

    pub fn component_count(&self) -> usize {
        let labels = self.components();
        labels.iter().enumerate().filter(|(i, l)| *i == **l).count()
    }

    /// Stable identifiers for every parameter, `gamma_<node>` then
    /// `delta_<i>_<j>` in edge-list order.
    pub fn parameter_names(&self) -> Vec<String> {
        self.nodes
            .iter()
            .map(|n| format!("gamma_{}", n.id))
            .chain(self.edges.iter().map(|e| format!("delta_{}_{}", e.i, e.j)))
            .collect()
    }
}

/// Effective inverse capacitances and conductances of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParameters {
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
}

impl PhysicalParameters {
    /// Builds parameters, checking shape and the admissible box
    /// `0 < gamma < gamma_scale`, `0 < delta < delta_scale`.
    pub fn new(graph: &ThermalGraph, gamma: Vec<f64>, delta: Vec<f64>) -> Result<Self> {
        let params = PhysicalParameters { gamma, delta };
        params.validate(graph)?;
        Ok(params)
    }

    pub fn validate(&self, graph: &ThermalGraph) -> Result<()> {
        check_len("gamma", graph.node_count(), self.gamma.len())?;
        check_len("delta", graph.edge_count(), self.delta.len())?;
        for (node, &g) in graph.nodes().iter().zip(&self.gamma) {
            if !(g > 0.0 && g <= node.gamma_scale) {
                return Err(Error::Domain(format!(
                    "gamma[{}] = {g} outside (0, {}]",
                    node.id, node.gamma_scale
                )));
            }
        }
        for (e, (edge, &d)) in graph.edges().iter().zip(&self.delta).enumerate() {
            if !(d > 0.0 && d <= edge.delta_scale) {
                return Err(Error::Edge {
                    edge: e,
                    i: edge.i,
                    j: edge.j,
                    reason: format!("delta = {d} outside (0, {}]", edge.delta_scale),
                });
            }
        }
        Ok(())
    }

    /// Flattened `[gamma..., delta...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.gamma.iter().chain(&self.delta).copied().collect()
    }
}

fn check_delta(graph: &ThermalGraph, delta: &[f64]) -> Result<()> {
    check_len("delta", graph.edge_count(), delta.len())?;
    for (e, (edge, &d)) in graph.edges().iter().zip(delta).enumerate() {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Edge {
                edge: e,
                i: edge.i,
                j: edge.j,
                reason: format!("conductance must be positive, got {d}"),
            });
        }
    }
    Ok(())
}

/// Dense `L = D - W`. Each diagonal entry is the negated sum of its row's
/// off-diagonal entries taken in column order, so a row sum formed the
/// same way is exactly zero.
pub fn assemble_laplacian(graph: &ThermalGraph, delta: &[f64]) -> Result<DMatrix<f64>> {
    check_delta(graph, delta)?;
    let n = graph.node_count();
    let mut lap = DMatrix::zeros(n, n);
    for (edge, &d) in graph.edges().iter().zip(delta) {
        lap[(edge.i, edge.j)] = -d;
        lap[(edge.j, edge.i)] = -d;
    }
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if j != i {
                off += lap[(i, j)];
            }
        }
        lap[(i, i)] = -off;
    }
    Ok(lap)
}

/// `L(delta) x` from the edge list, O(|E| + |V|).
pub fn laplacian_apply(graph: &ThermalGraph, delta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_delta(graph, delta)?;
    check_len("state", graph.node_count(), x.len())?;
    let mut out = vec![0.0; x.len()];
    for (edge, &d) in graph.edges().iter().zip(delta) {
        let flux = d * (x[edge.i] - x[edge.j]);
        out[edge.i] += flux;
        out[edge.j] -= flux;
    }
    Ok(out)
}

/// Time derivative of the nodal temperatures.
pub fn vector_field(
    graph: &ThermalGraph,
    params: &PhysicalParameters,
    temps: &[f64],
    inputs: &[f64],
    radiative_on: bool,
) -> Result<Vec<f64>> {
    let n = graph.node_count();
    check_len("state", n, temps.len())?;
    check_len("input", n, inputs.len())?;
    check_len("gamma", n, params.gamma.len())?;
    check_len("delta", graph.edge_count(), params.delta.len())?;
    if let Some(node) = temps.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFiniteState { node });
    }
    let net = Network::new(graph, params, radiative_on);
    let mut out = vec![0.0; n];
    net.rate(temps, inputs, &mut out);
    Ok(out)
}

/// `H(T) = sum_i T_i / gamma_i`, conserved by the closed conductive dynamics.
pub fn thermal_content(params: &PhysicalParameters, temps: &[f64]) -> Result<f64> {
    check_len("state", params.gamma.len(), temps.len())?;
    Ok(temps.iter().zip(&params.gamma).map(|(t, g)| t / g).sum())
}

/// `E(T) = 1/2 sum_i T_i^2 / gamma_i`, the Lyapunov functional of the
/// closed conductive dynamics.
pub fn quadratic_energy(params: &PhysicalParameters, temps: &[f64]) -> Result<f64> {
    check_len("state", params.gamma.len(), temps.len())?;
    Ok(0.5
        * temps
            .iter()
            .zip(&params.gamma)
            .map(|(t, g)| t * t / g)
            .sum::<f64>())
}

/// `T^T L T = sum over undirected edges of delta_e (T_i - T_j)^2`.
pub fn dissipation_rate(graph: &ThermalGraph, delta: &[f64], temps: &[f64]) -> Result<f64> {
    check_len("delta", graph.edge_count(), delta.len())?;
    check_len("state", graph.node_count(), temps.len())?;
    Ok(graph
        .edges()
        .iter()
        .zip(delta)
        .map(|(e, d)| {
            let diff = temps[e.i] - temps[e.j];
            d * diff * diff
        })
        .sum())
}

/// Effective emissivity `eps*` of a two-surface grey-body exchange, defined by
/// `1/(eps* A_i F_ij) = (1-eps_i)/(eps_i A_i) + 1/(A_i F_ij) + (1-eps_j)/(eps_j A_j)`.
pub fn effective_emissivity(
    eps_i: f64,
    eps_j: f64,
    area_i: f64,
    area_j: f64,
    view_factor: f64,
) -> Result<f64> {
    for (name, v) in [
        ("eps_i", eps_i),
        ("eps_j", eps_j),
        ("area_i", area_i),
        ("area_j", area_j),
        ("view_factor", view_factor),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    if eps_i > 1.0 || eps_j > 1.0 {
        return Err(Error::Domain("emissivities must not exceed 1".into()));
    }
    if view_factor > 1.0 {
        return Err(Error::Domain("view factor must not exceed 1".into()));
    }
    let resistance = (1.0 - eps_i) / (eps_i * area_i)
        + 1.0 / (area_i * view_factor)
        + (1.0 - eps_j) / (eps_j * area_j);
    Ok(1.0 / (resistance * area_i * view_factor))
}

/// Conductance of a two-body radiative exchange linearized about `t_ref`:
/// `4 sigma t_ref^3 eps* A_i F_ij`.
pub fn radiative_equivalent_conductance(
    t_ref: f64,
    eps_star: f64,
    area_i: f64,
    view_factor: f64,
) -> Result<f64> {
    if !(t_ref >= 0.0) {
        return Err(Error::Domain(format!(
            "reference temperature must be non-negative, got {t_ref}"
        )));
    }
    Ok(4.0 * STEFAN_BOLTZMANN * t_ref.powi(3) * eps_star * area_i * view_factor)
}

/// Deep-space sink coefficient `sigma eps A z_len` of a boundary node.
pub fn deep_space_kappa(emissivity: f64, area: f64, z_len: f64) -> f64 {
    STEFAN_BOLTZMANN * emissivity * area * z_len
}

/// Flattened evaluation kernel shared by the stepper and its adjoint.
#[derive(Clone, Debug)]
pub(crate) struct Network {
    pub n: usize,
    pub ends: Vec<(usize, usize)>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl Network {
    pub fn new(graph: &ThermalGraph, params: &PhysicalParameters, radiative_on: bool) -> Self {
        let kappa = if radiative_on {
            graph.kappa()
        } else {
            vec![0.0; graph.node_count()]
        };
        Network {
            n: graph.node_count(),
            ends: graph.edges().iter().map(|e| (e.i, e.j)).collect(),
            gamma: params.gamma.clone(),
            delta: params.delta.clone(),
            kappa,
        }
    }

    /// Net nodal power `u - L T - kappa T^4`.
    #[inline]
    pub fn drive(&self, temps: &[f64], inputs: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let t = temps[i];
            let t2 = t * t;
            out[i] = inputs[i] - self.kappa[i] * t2 * t2;
        }
        for (&(a, b), &d) in self.ends.iter().zip(&self.delta) {
            let flux = d * (temps[a] - temps[b]);
            out[a] -= flux;
            out[b] += flux;
        }
    }

    #[inline]
    pub fn rate(&self, temps: &[f64], inputs: &[f64], out: &mut [f64]) {
        self.drive(temps, inputs, out);
        for (o, g) in out.iter_mut().zip(&self.gamma) {
            *o *= g;
        }
    }

    /// Reverse-mode product through `rate`: given the cotangent `bar` of the
    /// output at state `temps` with precomputed `drive`, accumulates the
    /// state cotangent into `bar_t` and parameter cotangents into
    /// `bar_gamma`/`bar_delta`. `scratch` has length `n`.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn rate_vjp(
        &self,
        temps: &[f64],
        drive: &[f64],
        bar: &[f64],
        bar_t: &mut [f64],
        bar_gamma: &mut [f64],
        bar_delta: &mut [f64],
        scratch: &mut [f64],
    ) {
        let bar_drive = scratch;
        for i in 0..self.n {
            bar_gamma[i] += bar[i] * drive[i];
            bar_drive[i] = bar[i] * self.gamma[i];
            let t = temps[i];
            bar_t[i] -= 4.0 * self.kappa[i] * t * t * t * bar_drive[i];
        }
        for (e, (&(a, b), &d)) in self.ends.iter().zip(&self.delta).enumerate() {
            let bar_flux = bar_drive[b] - bar_drive[a];
            bar_delta[e] += (temps[a] - temps[b]) * bar_flux;
            bar_t[a] += d * bar_flux;
            bar_t[b] -= d * bar_flux;
        }
    }
}
