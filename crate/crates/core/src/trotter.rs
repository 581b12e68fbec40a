//! Product-formula circuit synthesis at orders 1, 2 and 4, layer merging,
//! ansatz initialization and circuit-to-MPO contraction.
//!
//! One-qubit terms never appear as standalone layers: their exponentials are
//! absorbed into the nearest two-qubit gate on the same qubit (preferring the
//! earlier gate), so every circuit parameter lives in an SU(4) block.
//! Next-nearest-neighbor terms expand into swap-in / core / swap-out layer
//! triples using the routing recorded on the term.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dense::{embed_two_qubit, expm, kron};
use crate::error::{Error, Result};
use crate::hamiltonian::{fermionic_swap_gate, swap_gate, Routing, Support, TermList};
use crate::mpo::{
    apply_two_site_gate, gate_to_two_site_mpo, mpo_identity, zip_up_apply, MpoOperator,
};
use crate::tensor::{conj_transpose, identity_matrix, unitarity_defect};

pub const CIRCUIT_UNITARITY_TOL: f64 = 1e-10;

/// Two-qubit gate on an ordered site pair (`sites.0 < sites.1`, possibly
/// non-adjacent on the chain).
#[derive(Clone, Debug)]
pub struct Gate2 {
    pub sites: (usize, usize),
    pub unitary: Array2<C64>,
}

impl Gate2 {
    pub fn span(&self) -> usize {
        self.sites.1 - self.sites.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct Layer {
    pub gates: Vec<Gate2>,
}

impl Layer {
    /// Site-pair support set, the key used by layer merging.
    pub fn support(&self) -> BTreeSet<(usize, usize)> {
        self.gates.iter().map(|g| g.sites).collect()
    }
}

/// Layered circuit of two-qubit unitaries with disjoint supports per layer.
/// Layer 0 is applied first.
#[derive(Clone, Debug)]
pub struct BrickworkCircuit {
    pub n: usize,
    pub topology: String,
    pub layers: Vec<Layer>,
}

impl BrickworkCircuit {
    pub fn new(n: usize, topology: impl Into<String>, layers: Vec<Layer>) -> Result<Self> {
        let circ = Self {
            n,
            topology: topology.into(),
            layers,
        };
        circ.validate(None)?;
        Ok(circ)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn gate_count(&self) -> usize {
        self.layers.iter().map(|l| l.gates.len()).sum()
    }

    pub fn validate(&self, allowed_edges: Option<&BTreeSet<(usize, usize)>>) -> Result<()> {
        for (li, layer) in self.layers.iter().enumerate() {
            let mut used = BTreeSet::new();
            for g in &layer.gates {
                let (a, b) = g.sites;
                if a >= b || b >= self.n {
                    return Err(Error::Validation(format!(
                        "layer {li}: bad site pair ({a},{b}) for n={}",
                        self.n
                    )));
                }
                if !used.insert(a) || !used.insert(b) {
                    return Err(Error::Validation(format!(
                        "layer {li}: overlapping gate supports at ({a},{b})"
                    )));
                }
                if g.unitary.dim() != (4, 4) {
                    return Err(Error::Validation(format!("layer {li}: gate is not 4x4")));
                }
                let defect = unitarity_defect(&g.unitary);
                if defect > CIRCUIT_UNITARITY_TOL {
                    return Err(Error::Validation(format!(
                        "layer {li}: gate at ({a},{b}) is not unitary (defect {defect:.3e})"
                    )));
                }
                if let Some(edges) = allowed_edges {
                    if !edges.contains(&(a, b)) {
                        return Err(Error::Validation(format!(
                            "layer {li}: ({a},{b}) is not a topology edge"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Dense unitary of the whole circuit (small systems only).
    pub fn to_dense(&self) -> Result<Array2<C64>> {
        let dim = 1usize << self.n;
        let mut u = Array2::eye(dim);
        for layer in &self.layers {
            for g in &layer.gates {
                let emb = embed_two_qubit(&g.unitary, g.sites.0, g.sites.1, self.n)?;
                u = emb.dot(&u);
            }
        }
        Ok(u)
    }

    pub fn layer_supports(&self) -> Vec<BTreeSet<(usize, usize)>> {
        self.layers.iter().map(|l| l.support()).collect()
    }

    /// Structured-text serialization (JSON): version, qubit count, topology
    /// tag, then per layer the gates as `{sites, unitary}` with the 16
    /// complex entries as `[re, im]` pairs in row-major order. Numbers
    /// round-trip bit-exactly.
    pub fn to_json_string(&self) -> Result<String> {
        let file = CircuitFile {
            version: 1,
            n: self.n,
            topology: self.topology.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| {
                    l.gates
                        .iter()
                        .map(|g| GateFile {
                            sites: [g.sites.0, g.sites.1],
                            unitary: g.unitary.iter().map(|v| [v.re, v.im]).collect(),
                        })
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: CircuitFile =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if file.version != 1 {
            return Err(Error::Format(format!(
                "unsupported circuit version {}",
                file.version
            )));
        }
        let layers = file
            .layers
            .into_iter()
            .map(|gates| {
                let gates = gates
                    .into_iter()
                    .map(|g| {
                        if g.unitary.len() != 16 {
                            return Err(Error::Format("gate needs 16 entries".into()));
                        }
                        let data: Vec<C64> =
                            g.unitary.iter().map(|p| C64::new(p[0], p[1])).collect();
                        let unitary = Array2::from_shape_vec((4, 4), data)
                            .map_err(|e| Error::Format(e.to_string()))?;
                        Ok(Gate2 {
                            sites: (g.sites[0], g.sites[1]),
                            unitary,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Layer { gates })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.n, file.topology, layers)
    }
}

#[derive(Serialize, Deserialize)]
struct CircuitFile {
    version: u32,
    n: usize,
    topology: String,
    layers: Vec<Vec<GateFile>>,
}

#[derive(Serialize, Deserialize)]
struct GateFile {
    sites: [usize; 2],
    unitary: Vec<[f64; 2]>,
}

/// `exp(−i · tau · h)` for a Hermitian block.
pub fn gate_exponential(h: &Array2<C64>, tau: f64) -> Result<Array2<C64>> {
    expm(&h.mapv(|v| v * C64::new(0.0, -tau)))
}

fn embed_slot(u: &Array2<C64>, slot: usize) -> Array2<C64> {
    if slot == 0 {
        kron(u, &identity_matrix(2))
    } else {
        kron(&identity_matrix(2), u)
    }
}

enum ProtoOp {
    TwoQ(Vec<Gate2>),
    OneQ(Vec<(usize, Array2<C64>)>),
}

/// Exponentiate one commuting group at time step `tau` into proto layers.
fn group_ops(terms: &TermList, group: &[usize], tau: f64) -> Result<Vec<ProtoOp>> {
    let mut singles = Vec::new();
    let mut direct = Vec::new();
    let mut swap_in = Vec::new();
    let mut core = Vec::new();
    for &k in group {
        let term = &terms.terms[k];
        match (term.support, term.routing) {
            (Support::One(q), _) => {
                singles.push((q, gate_exponential(&term.matrix, tau)?));
            }
            (Support::Two(a, b), Routing::Direct) => {
                let (a, b) = (a.min(b), a.max(b));
                direct.push(Gate2 {
                    sites: (a, b),
                    unitary: gate_exponential(&term.matrix, tau)?,
                });
            }
            (Support::Two(a, b), routing) => {
                let (lo, hi) = (a.min(b), a.max(b));
                if hi - lo != 2 {
                    return Err(Error::Config(
                        "routed terms must span exactly two bonds".into(),
                    ));
                }
                let swap = match routing {
                    Routing::Swap => swap_gate(),
                    Routing::FermionicSwap => fermionic_swap_gate(),
                    Routing::Direct => unreachable!(),
                };
                swap_in.push(Gate2 {
                    sites: (hi - 1, hi),
                    unitary: swap,
                });
                core.push(Gate2 {
                    sites: (lo, lo + 1),
                    unitary: gate_exponential(&term.matrix, tau)?,
                });
            }
        }
    }
    let mut ops = Vec::new();
    if !direct.is_empty() {
        ops.push(ProtoOp::TwoQ(direct));
    }
    if !swap_in.is_empty() {
        let swap_out = swap_in.iter().map(|g| g.clone()).collect::<Vec<_>>();
        ops.push(ProtoOp::TwoQ(swap_in));
        ops.push(ProtoOp::TwoQ(core));
        ops.push(ProtoOp::TwoQ(swap_out));
    }
    if !singles.is_empty() {
        ops.push(ProtoOp::OneQ(singles));
    }
    Ok(ops)
}

/// `(group, coefficient)` sequence of one product-formula step; the actual
/// time step of each exponential is `coefficient · dt`.
fn formula_sequence(n_groups: usize, order: u32) -> Result<Vec<(usize, f64)>> {
    match order {
        1 => Ok((0..n_groups).map(|g| (g, 1.0)).collect()),
        2 => Ok(strang_sequence(n_groups, 1.0)),
        4 => {
            // Suzuki fractal recursion:
            // S4(dt) = S2(p·dt)² · S2((1−4p)·dt) · S2(p·dt)².
            let p = 1.0 / (4.0 - 4f64.powf(1.0 / 3.0));
            let mut seq = Vec::new();
            for coeff in [p, p, 1.0 - 4.0 * p, p, p] {
                seq.extend(strang_sequence(n_groups, coeff));
            }
            Ok(seq)
        }
        other => Err(Error::Config(format!(
            "unsupported Trotter order {other} (valid: 1, 2, 4)"
        ))),
    }
}

fn strang_sequence(n_groups: usize, scale: f64) -> Vec<(usize, f64)> {
    if n_groups == 1 {
        return vec![(0, scale)];
    }
    let mut seq = Vec::new();
    for g in 0..n_groups - 1 {
        seq.push((g, 0.5 * scale));
    }
    seq.push((n_groups - 1, scale));
    for g in (0..n_groups - 1).rev() {
        seq.push((g, 0.5 * scale));
    }
    seq
}

/// One product-formula step of the given order at time step `dt`.
pub fn trotter_circuit(terms: &TermList, dt: f64, order: u32) -> Result<BrickworkCircuit> {
    let seq = formula_sequence(terms.groups.len(), order)?;
    let mut protos = Vec::new();
    for (g, coeff) in seq {
        protos.extend(group_ops(terms, &terms.groups[g], coeff * dt)?);
    }
    assemble_circuit(terms.n, protos)
}

/// `k` merged steps: `U_order(t/k)^k` with adjacent same-support layers
/// fused.
pub fn trotter_circuit_steps(
    terms: &TermList,
    t: f64,
    k: usize,
    order: u32,
) -> Result<BrickworkCircuit> {
    if k == 0 {
        return Err(Error::Config("step count must be positive".into()));
    }
    let step = trotter_circuit(terms, t / k as f64, order)?;
    let mut layers = Vec::with_capacity(step.layers.len() * k);
    for _ in 0..k {
        layers.extend(step.layers.iter().cloned());
    }
    let circ = BrickworkCircuit {
        n: step.n,
        topology: step.topology,
        layers,
    };
    Ok(compact_circuit(&circ))
}

/// Turn proto layers into a circuit, absorbing one-qubit unitaries into the
/// nearest two-qubit gate on the same qubit (earlier gate preferred).
fn assemble_circuit(n: usize, protos: Vec<ProtoOp>) -> Result<BrickworkCircuit> {
    let mut layers: Vec<Layer> = Vec::new();
    // qubit -> (layer, gate index) of the most recent gate covering it
    let mut last_gate: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    // 1q unitaries waiting for the first gate that will ever cover the qubit
    let mut pending: BTreeMap<usize, Array2<C64>> = BTreeMap::new();

    for proto in protos {
        match proto {
            ProtoOp::TwoQ(mut gates) => {
                gates.sort_by_key(|g| g.sites);
                let li = layers.len();
                for (gi, gate) in gates.iter_mut().enumerate() {
                    for (slot, q) in [(0usize, gate.sites.0), (1usize, gate.sites.1)] {
                        if let Some(u) = pending.remove(&q) {
                            // The queued unitary acts before this gate.
                            gate.unitary = gate.unitary.dot(&embed_slot(&u, slot));
                        }
                    }
                    last_gate.insert(gate.sites.0, (li, gi));
                    last_gate.insert(gate.sites.1, (li, gi));
                }
                layers.push(Layer { gates });
            }
            ProtoOp::OneQ(singles) => {
                for (q, u) in singles {
                    match last_gate.get(&q) {
                        Some(&(li, gi)) => {
                            // Attach after the most recent covering gate;
                            // nothing on this qubit sits in between.
                            let gate = &mut layers[li].gates[gi];
                            let slot = if gate.sites.0 == q { 0 } else { 1 };
                            gate.unitary = embed_slot(&u, slot).dot(&gate.unitary);
                        }
                        None => {
                            let combined = match pending.remove(&q) {
                                Some(prev) => u.dot(&prev),
                                None => u,
                            };
                            pending.insert(q, combined);
                        }
                    }
                }
            }
        }
    }
    if let Some((&q, _)) = pending.iter().next() {
        return Err(Error::Config(format!(
            "qubit {q} carries a one-qubit term but no two-qubit gate ever covers it"
        )));
    }
    BrickworkCircuit::new(n, "chain", layers)
}

/// Repack gates as early as their qubit dependencies allow (gates only move
/// past disjoint-support gates, which commute, so the unitary is exact) and
/// fuse identical-support runs, iterating to a fixed point.
pub fn compact_circuit(circ: &BrickworkCircuit) -> BrickworkCircuit {
    let mut current = circ.clone();
    loop {
        let packed = pack_layers(&current);
        let merged = merge_adjacent_layers(&packed);
        if merged.depth() >= current.depth() {
            return current;
        }
        current = merged;
    }
}

/// One ASAP list-scheduling pass over the flattened gate sequence.
fn pack_layers(circ: &BrickworkCircuit) -> BrickworkCircuit {
    let mut layers: Vec<Layer> = Vec::new();
    let mut busy_until = vec![0usize; circ.n];
    for layer in &circ.layers {
        let mut gates: Vec<&Gate2> = layer.gates.iter().collect();
        gates.sort_by_key(|g| g.sites);
        for g in gates {
            let (a, b) = g.sites;
            let at = busy_until[a].max(busy_until[b]);
            if at == layers.len() {
                layers.push(Layer::default());
            }
            layers[at].gates.push(g.clone());
            busy_until[a] = at + 1;
            busy_until[b] = at + 1;
        }
    }
    BrickworkCircuit {
        n: circ.n,
        topology: circ.topology.clone(),
        layers,
    }
}

/// Fuse consecutive layers whose gate supports are identical site-pair
/// sets; the represented unitary is unchanged.
pub fn merge_adjacent_layers(circ: &BrickworkCircuit) -> BrickworkCircuit {
    let mut out: Vec<Layer> = Vec::new();
    for layer in &circ.layers {
        if let Some(last) = out.last_mut() {
            if last.support() == layer.support() {
                let mut by_sites: BTreeMap<(usize, usize), usize> = BTreeMap::new();
                for (gi, g) in last.gates.iter().enumerate() {
                    by_sites.insert(g.sites, gi);
                }
                for g in &layer.gates {
                    let gi = by_sites[&g.sites];
                    last.gates[gi].unitary = g.unitary.dot(&last.gates[gi].unitary);
                }
                continue;
            }
        }
        out.push(layer.clone());
    }
    BrickworkCircuit {
        n: circ.n,
        topology: circ.topology.clone(),
        layers: out,
    }
}

/// Depth-`target_layers` optimizer initialization: the deepest merged
/// Trotterization that fits (highest order first, then largest step count),
/// padded with identity-gate layers up to the exact requested depth.
pub fn ansatz_from_trotter(
    terms: &TermList,
    t: f64,
    target_layers: usize,
) -> Result<BrickworkCircuit> {
    let mut chosen: Option<BrickworkCircuit> = None;
    for order in [4u32, 2, 1] {
        let mut best: Option<BrickworkCircuit> = None;
        for k in 1.. {
            let circ = trotter_circuit_steps(terms, t, k, order)?;
            if circ.depth() <= target_layers {
                best = Some(circ);
            } else {
                break;
            }
        }
        if let Some(c) = best {
            chosen = Some(c);
            break;
        }
    }
    let mut circ = chosen.ok_or_else(|| {
        Error::Config(format!(
            "target depth {target_layers} is below a single first-order step"
        ))
    })?;

    // Pad with identity layers cycling through the step's distinct layer
    // supports, starting away from the current top layer.
    if circ.depth() < target_layers {
        let step = compact_circuit(&trotter_circuit(terms, t, 1)?);
        let mut patterns: Vec<BTreeSet<(usize, usize)>> = Vec::new();
        for s in step.layer_supports() {
            if !patterns.contains(&s) {
                patterns.push(s);
            }
        }
        let mut idx = 0usize;
        while circ.depth() < target_layers {
            if patterns.len() > 1
                && Some(&patterns[idx % patterns.len()]) == circ.layer_supports().last()
            {
                idx += 1;
            }
            let support = &patterns[idx % patterns.len()];
            let gates = support
                .iter()
                .map(|&sites| Gate2 {
                    sites,
                    unitary: identity_matrix(4),
                })
                .collect();
            circ.layers.push(Layer { gates });
            idx += 1;
        }
    }
    Ok(circ)
}

/// Apply one circuit layer to an MPO. Nearest-neighbor gates contract
/// directly; non-local gates go through the two-body MPO fragment and the
/// zip-up. With `dagger`, every gate enters as its adjoint (the layer's
/// gates commute, so the order is free).
pub fn apply_layer_to_mpo(
    mpo: &MpoOperator,
    layer: &Layer,
    chi_max: usize,
    weight_tol: f64,
    dagger: bool,
) -> Result<(MpoOperator, f64)> {
    let mut gates: Vec<&Gate2> = layer.gates.iter().collect();
    gates.sort_by_key(|g| g.sites);
    let mut out = mpo.clone();
    let mut discarded = 0.0;
    for g in gates {
        let u = if dagger {
            conj_transpose(&g.unitary)
        } else {
            g.unitary.clone()
        };
        let (next, dw) = if g.span() == 1 {
            apply_two_site_gate(&out, &u, g.sites.0, chi_max, weight_tol)?
        } else {
            let frag = gate_to_two_site_mpo(&u, g.span() + 1)?;
            zip_up_apply(&out, &frag, g.sites.0, chi_max, weight_tol)?
        };
        out = next;
        discarded += dw;
    }
    Ok((out, discarded))
}

/// Contract the whole circuit into an MPO; returns the total discarded
/// weight across all truncations.
pub fn circuit_to_mpo(
    circ: &BrickworkCircuit,
    chi_max: usize,
    weight_tol: f64,
) -> Result<(MpoOperator, f64)> {
    let mut mpo = mpo_identity(circ.n);
    let mut discarded = 0.0;
    for layer in &circ.layers {
        let (next, dw) = apply_layer_to_mpo(&mpo, layer, chi_max, weight_tol, false)?;
        mpo = next;
        discarded += dw;
    }
    Ok((mpo, discarded))
}
