//! Declarative Hamiltonian models and coupling-graph topologies.
//!
//! Four lattice models are supported: the 1D transverse-field Ising chain,
//! the 1D Hubbard model in a staggered spin layout, the 1D J1–J2 Heisenberg
//! chain, and the transverse-field Ising model on an arbitrary coupling
//! graph (heavy-hex patches). Graph models are wound onto a 1D chain; the
//! node order of the graph file *is* the winding.
//!
//! Terms carry a routing tag: next-nearest-neighbor interactions are
//! realized through SWAP (spin models) or fermionic-SWAP (Hubbard) networks
//! inside the Trotter layers, so circuits only ever contain gates on
//! topology edges.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use serde::Deserialize;

use crate::dense::{embed_one_qubit, embed_two_qubit};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Tfim1d,
    Hubbard1d,
    J1J21d,
    TfimGraph,
}

impl ModelKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ModelKind::Tfim1d => "tfim-1d",
            ModelKind::Hubbard1d => "hubbard-1d",
            ModelKind::J1J21d => "j1j2-1d",
            ModelKind::TfimGraph => "tfim-graph",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "tfim-1d" => Ok(ModelKind::Tfim1d),
            "hubbard-1d" => Ok(ModelKind::Hubbard1d),
            "j1j2-1d" => Ok(ModelKind::J1J21d),
            "tfim-graph" => Ok(ModelKind::TfimGraph),
            other => Err(Error::Config(format!("unknown model tag '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ModelParams {
    pub h: f64,
    pub u: f64,
    pub t_hop: f64,
    pub j1: f64,
    pub j2: f64,
}

/// Undirected coupling graph; the node order is the 1D winding.
#[derive(Clone, Debug)]
pub struct CouplingGraph {
    nodes: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct HamiltonianSpec {
    pub model: ModelKind,
    pub n: usize,
    pub params: ModelParams,
    pub graph: Option<CouplingGraph>,
    pub t: f64,
}

/// How a two-qubit term is realized on the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Routing {
    /// Acts on neighboring chain sites directly.
    Direct,
    /// Distance-2 term reached by a SWAP on the intermediate site.
    Swap,
    /// Distance-2 fermionic term reached by a fermionic SWAP, preserving
    /// Jordan–Wigner antisymmetry signs.
    FermionicSwap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Support {
    One(usize),
    Two(usize, usize),
}

impl Support {
    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Support::One(q) => vec![q],
            Support::Two(a, b) => vec![a, b],
        }
    }

    /// Full chain footprint including routing intermediates.
    pub fn footprint(&self) -> (usize, usize) {
        match *self {
            Support::One(q) => (q, q),
            Support::Two(a, b) => (a.min(b), a.max(b)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Term {
    pub support: Support,
    pub matrix: Array2<C64>,
    pub routing: Routing,
}

/// Ordered Hermitian terms plus commuting-group labels. Terms inside one
/// group have pairwise disjoint routing footprints.
#[derive(Clone, Debug)]
pub struct TermList {
    pub n: usize,
    pub terms: Vec<Term>,
    pub groups: Vec<Vec<usize>>,
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn pauli_x() -> Array2<C64> {
    array![[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]]
}

pub fn pauli_z() -> Array2<C64> {
    array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]]
}

fn zz_matrix() -> Array2<C64> {
    Array2::from_diag(&array![c(1.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)])
}

/// `J · (XX + YY + ZZ)` on two qubits.
fn heisenberg_matrix(j: f64) -> Array2<C64> {
    let mut m = Array2::zeros((4, 4));
    m[[0, 0]] = c(j, 0.0);
    m[[3, 3]] = c(j, 0.0);
    m[[1, 1]] = c(-j, 0.0);
    m[[2, 2]] = c(-j, 0.0);
    m[[1, 2]] = c(2.0 * j, 0.0);
    m[[2, 1]] = c(2.0 * j, 0.0);
    m
}

/// `−t_hop (c†_a c_b + c†_b c_a)` for adjacent Jordan–Wigner modes:
/// `−t_hop/2 (XX + YY)`.
fn hopping_matrix(t_hop: f64) -> Array2<C64> {
    let mut m = Array2::zeros((4, 4));
    m[[1, 2]] = c(-t_hop, 0.0);
    m[[2, 1]] = c(-t_hop, 0.0);
    m
}

/// `U · n↑ n↓` on two adjacent modes (|1⟩ = occupied).
fn hubbard_interaction_matrix(u: f64) -> Array2<C64> {
    let mut m = Array2::zeros((4, 4));
    m[[3, 3]] = c(u, 0.0);
    m
}

pub fn swap_gate() -> Array2<C64> {
    let mut m = Array2::zeros((4, 4));
    m[[0, 0]] = c(1.0, 0.0);
    m[[1, 2]] = c(1.0, 0.0);
    m[[2, 1]] = c(1.0, 0.0);
    m[[3, 3]] = c(1.0, 0.0);
    m
}

/// Fermionic SWAP: exchanges Jordan–Wigner modes and flips the sign of the
/// doubly-occupied sector. Its own inverse.
pub fn fermionic_swap_gate() -> Array2<C64> {
    let mut m = swap_gate();
    m[[3, 3]] = c(-1.0, 0.0);
    m
}

impl TermList {
    fn validate(&self) -> Result<()> {
        for (k, term) in self.terms.iter().enumerate() {
            for q in term.support.qubits() {
                if q >= self.n {
                    return Err(Error::Config(format!("term {k} references qubit {q} >= n")));
                }
            }
            let m = &term.matrix;
            let dim = match term.support {
                Support::One(_) => 2,
                Support::Two(..) => 4,
            };
            if m.dim() != (dim, dim) {
                return Err(Error::Config(format!("term {k} has wrong matrix size")));
            }
            for i in 0..dim {
                for j in 0..dim {
                    if (m[[i, j]] - m[[j, i]].conj()).norm() > 1e-12 {
                        return Err(Error::Config(format!("term {k} is not Hermitian")));
                    }
                }
            }
        }
        for (gi, group) in self.groups.iter().enumerate() {
            let mut seen: BTreeSet<usize> = BTreeSet::new();
            for &k in group {
                let (lo, hi) = self.terms[k].support.footprint();
                let lo = if self.terms[k].routing == Routing::Direct {
                    lo
                } else {
                    lo
                };
                for q in lo..=hi {
                    // Routed terms reserve their whole footprint so the
                    // swap networks inside a layer block never collide.
                    let reserves = match self.terms[k].routing {
                        Routing::Direct => self.terms[k].support.qubits().contains(&q),
                        _ => true,
                    };
                    if reserves && !seen.insert(q) {
                        return Err(Error::Config(format!(
                            "group {gi} has overlapping supports at qubit {q}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Dense sum of all embedded terms (small systems only). Fermionic
    /// distance-2 terms are conjugated by the fermionic SWAP, reproducing
    /// the Jordan–Wigner string on the intermediate qubit.
    pub fn to_dense(&self) -> Result<Array2<C64>> {
        let dim = 1usize << self.n;
        let mut h = Array2::zeros((dim, dim));
        for term in &self.terms {
            h = h + self.embed_term(term)?;
        }
        Ok(h)
    }

    fn embed_term(&self, term: &Term) -> Result<Array2<C64>> {
        match (term.support, term.routing) {
            (Support::One(q), _) => embed_one_qubit(&term.matrix, q, self.n),
            (Support::Two(a, b), Routing::Direct) | (Support::Two(a, b), Routing::Swap) => {
                embed_two_qubit(&term.matrix, a, b, self.n)
            }
            (Support::Two(a, b), Routing::FermionicSwap) => {
                let (lo, hi) = (a.min(b), a.max(b));
                if hi - lo != 2 {
                    return Err(Error::Config(
                        "fermionic routing only spans distance-2 terms".into(),
                    ));
                }
                let f = embed_two_qubit(&fermionic_swap_gate(), hi - 1, hi, self.n)?;
                let inner = embed_two_qubit(&term.matrix, lo, hi - 1, self.n)?;
                Ok(f.dot(&inner).dot(&f))
            }
        }
    }
}

/// Build grouped terms for any supported model.
pub fn build_terms(spec: &HamiltonianSpec) -> Result<TermList> {
    let list = match spec.model {
        ModelKind::Tfim1d => tfim_chain_terms(spec.n, spec.params.h)?,
        ModelKind::Hubbard1d => {
            if spec.n % 2 != 0 {
                return Err(Error::Config(
                    "hubbard-1d needs an even qubit count (two per site)".into(),
                ));
            }
            hubbard_staggered_terms(spec.n / 2, spec.params.u, spec.params.t_hop)?
        }
        ModelKind::J1J21d => j1j2_chain_terms(spec.n, spec.params.j1, spec.params.j2)?,
        ModelKind::TfimGraph => {
            let graph = spec
                .graph
                .as_ref()
                .ok_or_else(|| Error::Config("tfim-graph needs a coupling graph".into()))?;
            tfim_graph_terms(graph, spec.params.h)?
        }
    };
    list.validate()?;
    Ok(list)
}

fn push_group(groups: &mut Vec<Vec<usize>>, g: Vec<usize>) {
    if !g.is_empty() {
        groups.push(g);
    }
}

fn tfim_chain_terms(n: usize, h: f64) -> Result<TermList> {
    if n < 2 {
        return Err(Error::Config("tfim-1d needs at least 2 qubits".into()));
    }
    let mut terms = Vec::new();
    let mut even = Vec::new();
    let mut odd = Vec::new();
    for i in 0..n - 1 {
        terms.push(Term {
            support: Support::Two(i, i + 1),
            matrix: zz_matrix(),
            routing: Routing::Direct,
        });
        if i % 2 == 0 {
            even.push(terms.len() - 1);
        } else {
            odd.push(terms.len() - 1);
        }
    }
    let mut fields = Vec::new();
    if h != 0.0 {
        for q in 0..n {
            terms.push(Term {
                support: Support::One(q),
                matrix: pauli_x().mapv(|v| v * c(h, 0.0)),
                routing: Routing::Direct,
            });
            fields.push(terms.len() - 1);
        }
    }
    let mut groups = Vec::new();
    push_group(&mut groups, even);
    push_group(&mut groups, odd);
    push_group(&mut groups, fields);
    Ok(TermList { n, terms, groups })
}

fn j1j2_chain_terms(n: usize, j1: f64, j2: f64) -> Result<TermList> {
    if n < 2 {
        return Err(Error::Config("j1j2-1d needs at least 2 qubits".into()));
    }
    let mut terms = Vec::new();
    let mut even = Vec::new();
    let mut odd = Vec::new();
    for i in 0..n - 1 {
        terms.push(Term {
            support: Support::Two(i, i + 1),
            matrix: heisenberg_matrix(j1),
            routing: Routing::Direct,
        });
        if i % 2 == 0 {
            even.push(terms.len() - 1);
        } else {
            odd.push(terms.len() - 1);
        }
    }
    // Next-nearest terms routed by SWAPs occupy {i, i+1, i+2}; grouping by
    // i mod 3 keeps the routed footprints disjoint within a group.
    let mut nnn_groups: [Vec<usize>; 3] = Default::default();
    if j2 != 0.0 {
        for i in 0..n.saturating_sub(2) {
            terms.push(Term {
                support: Support::Two(i, i + 2),
                matrix: heisenberg_matrix(j2),
                routing: Routing::Swap,
            });
            nnn_groups[i % 3].push(terms.len() - 1);
        }
    }
    let mut groups = Vec::new();
    push_group(&mut groups, even);
    push_group(&mut groups, odd);
    for g in nnn_groups {
        push_group(&mut groups, g);
    }
    Ok(TermList { n, terms, groups })
}

/// Hubbard terms in the staggered layout: site `s` occupies qubits
/// `(2s, 2s+1)` for spin up/down. Hopping is next-nearest-neighbor on the
/// chain and is flagged for fermionic-SWAP routing.
pub fn hubbard_staggered_terms(n_sites: usize, u: f64, t_hop: f64) -> Result<TermList> {
    if n_sites < 1 {
        return Err(Error::Config("hubbard-1d needs at least one site".into()));
    }
    let n = 2 * n_sites;
    let mut terms = Vec::new();
    let mut interaction = Vec::new();
    for s in 0..n_sites {
        terms.push(Term {
            support: Support::Two(2 * s, 2 * s + 1),
            matrix: hubbard_interaction_matrix(u),
            routing: Routing::Direct,
        });
        interaction.push(terms.len() - 1);
    }
    // Spin-up / spin-down hopping, each split by site parity so routed
    // footprints {q, q+1, q+2} stay disjoint within a group.
    let mut hop_groups: [Vec<usize>; 4] = Default::default();
    if t_hop != 0.0 {
        for s in 0..n_sites.saturating_sub(1) {
            for (spin, base) in [(0usize, 2 * s), (1usize, 2 * s + 1)] {
                terms.push(Term {
                    support: Support::Two(base, base + 2),
                    matrix: hopping_matrix(t_hop),
                    routing: Routing::FermionicSwap,
                });
                hop_groups[2 * spin + (s % 2)].push(terms.len() - 1);
            }
        }
    }
    let mut groups = Vec::new();
    push_group(&mut groups, interaction);
    for g in hop_groups {
        push_group(&mut groups, g);
    }
    Ok(TermList { n, terms, groups })
}

fn tfim_graph_terms(graph: &CouplingGraph, h: f64) -> Result<TermList> {
    let n = graph.n_nodes();
    if n < 2 {
        return Err(Error::Config("graph model needs at least 2 nodes".into()));
    }
    let spans = map_graph_to_chain(graph)?;
    let colors = greedy_edge_coloring(graph);
    let n_colors = colors.iter().copied().max().map(|m| m + 1).unwrap_or(0);

    let mut terms = Vec::new();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_colors];
    for (e, span) in spans.iter().enumerate() {
        terms.push(Term {
            support: Support::Two(span.lo, span.hi),
            matrix: zz_matrix(),
            routing: Routing::Direct,
        });
        groups[colors[e]].push(terms.len() - 1);
    }
    let mut fields = Vec::new();
    if h != 0.0 {
        for q in 0..n {
            terms.push(Term {
                support: Support::One(q),
                matrix: pauli_x().mapv(|v| v * c(h, 0.0)),
                routing: Routing::Direct,
            });
            fields.push(terms.len() - 1);
        }
    }
    let mut out_groups = Vec::new();
    for g in groups {
        push_group(&mut out_groups, g);
    }
    push_group(&mut out_groups, fields);
    Ok(TermList {
        n,
        terms,
        groups: out_groups,
    })
}

impl CouplingGraph {
    /// Validated graph from explicit node ordering and edge list.
    pub fn new(nodes: Vec<usize>, edges: Vec<(usize, usize)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Config("graph has no nodes".into()));
        }
        let set: BTreeSet<usize> = nodes.iter().copied().collect();
        if set.len() != nodes.len() {
            return Err(Error::Config("graph nodes are not unique".into()));
        }
        let mut seen = BTreeSet::new();
        for &(u, v) in &edges {
            if u == v {
                return Err(Error::Config(format!("self-loop at node {u}")));
            }
            if !set.contains(&u) || !set.contains(&v) {
                return Err(Error::Config(format!(
                    "edge ({u},{v}) references a node not in the list"
                )));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::Config(format!("duplicate edge ({u},{v})")));
            }
        }
        Ok(Self { nodes, edges })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn max_degree(&self) -> usize {
        let mut deg: BTreeMap<usize, usize> = BTreeMap::new();
        for &(u, v) in &self.edges {
            *deg.entry(u).or_insert(0) += 1;
            *deg.entry(v).or_insert(0) += 1;
        }
        deg.values().copied().max().unwrap_or(0)
    }

    /// Chain position of each node under the winding.
    pub fn position(&self, node: usize) -> Option<usize> {
        self.nodes.iter().position(|&x| x == node)
    }
}

#[derive(Deserialize)]
struct RawGraph {
    nodes: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

/// Load a coupling graph from a structured text file with `nodes` (winding
/// order) and `edges` arrays.
pub fn heavy_hex_graph(path: &Path) -> Result<CouplingGraph> {
    let text = std::fs::read_to_string(path)?;
    let raw: RawGraph = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("graph file {}: {e}", path.display())))?;
    CouplingGraph::new(raw.nodes, raw.edges)
}

#[derive(Clone, Copy, Debug)]
pub struct EdgeSpan {
    pub u: usize,
    pub v: usize,
    /// Chain positions, `lo < hi`.
    pub lo: usize,
    pub hi: usize,
}

impl EdgeSpan {
    pub fn width(&self) -> usize {
        self.hi - self.lo
    }
}

/// Map every graph edge to its 1D span under the winding order.
pub fn map_graph_to_chain(graph: &CouplingGraph) -> Result<Vec<EdgeSpan>> {
    let mut pos = BTreeMap::new();
    for (i, &node) in graph.nodes.iter().enumerate() {
        pos.insert(node, i);
    }
    graph
        .edges
        .iter()
        .map(|&(u, v)| {
            let pu = pos[&u];
            let pv = pos[&v];
            if pu == pv {
                return Err(Error::Config(format!(
                    "edge ({u},{v}) maps to a single chain position"
                )));
            }
            Ok(EdgeSpan {
                u,
                v,
                lo: pu.min(pv),
                hi: pu.max(pv),
            })
        })
        .collect()
}

/// Greedy edge coloring, highest-degree endpoints first. Heavy-hex graphs
/// (max degree 3) come out with at most 4 colors.
pub fn greedy_edge_coloring(graph: &CouplingGraph) -> Vec<usize> {
    let mut deg: BTreeMap<usize, usize> = BTreeMap::new();
    for &(u, v) in &graph.edges {
        *deg.entry(u).or_insert(0) += 1;
        *deg.entry(v).or_insert(0) += 1;
    }
    let mut order: Vec<usize> = (0..graph.edges.len()).collect();
    order.sort_by_key(|&e| {
        let (u, v) = graph.edges[e];
        let d = deg[&u].max(deg[&v]);
        (usize::MAX - d, u.min(v), u.max(v))
    });
    let mut colors = vec![usize::MAX; graph.edges.len()];
    let mut node_colors: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for e in order {
        let (u, v) = graph.edges[e];
        let used: BTreeSet<usize> = node_colors
            .get(&u)
            .into_iter()
            .chain(node_colors.get(&v))
            .flatten()
            .copied()
            .collect();
        let color = (0..).find(|k| !used.contains(k)).unwrap();
        colors[e] = color;
        node_colors.entry(u).or_default().insert(color);
        node_colors.entry(v).or_default().insert(color);
    }
    colors
}

#[derive(Deserialize)]
struct RawConfig {
    model: String,
    n: usize,
    t: f64,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    graph: Option<RawGraph>,
    graph_file: Option<String>,
}

impl HamiltonianSpec {
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let model = ModelKind::from_tag(&raw.model)?;
        let mut params = ModelParams::default();
        for (key, value) in &raw.params {
            match key.as_str() {
                "h" => params.h = *value,
                "u" => params.u = *value,
                "t_hop" => params.t_hop = *value,
                "j1" => params.j1 = *value,
                "j2" => params.j2 = *value,
                other => {
                    return Err(Error::Config(format!("unknown parameter '{other}'")));
                }
            }
        }
        let graph = match (raw.graph, raw.graph_file) {
            (Some(g), None) => Some(CouplingGraph::new(g.nodes, g.edges)?),
            (None, Some(file)) => {
                let path = match base_dir {
                    Some(dir) => dir.join(&file),
                    None => Path::new(&file).to_path_buf(),
                };
                Some(heavy_hex_graph(&path)?)
            }
            (None, None) => None,
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either an inline graph or a graph_file, not both".into(),
                ));
            }
        };
        if model == ModelKind::TfimGraph {
            let g = graph
                .as_ref()
                .ok_or_else(|| Error::Config("tfim-graph needs a graph".into()))?;
            if g.n_nodes() != raw.n {
                return Err(Error::Config(format!(
                    "n = {} but the graph has {} nodes",
                    raw.n,
                    g.n_nodes()
                )));
            }
        }
        let spec = Self {
            model,
            n: raw.n,
            params,
            graph,
            t: raw.t,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("qubit count must be positive".into()));
        }
        if !self.t.is_finite() {
            return Err(Error::Config("evolution time must be finite".into()));
        }
        if let Some(g) = &self.graph {
            for &(u, v) in g.edges() {
                if g.position(u).is_none() || g.position(v).is_none() {
                    return Err(Error::Config(format!("edge ({u},{v}) dangles")));
                }
            }
        }
        Ok(())
    }
}
