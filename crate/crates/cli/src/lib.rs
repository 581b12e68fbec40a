//! End-to-end compilation pipeline behind the `mpoc` command-line tool:
//! compile (target build + optimization), Trotter-baseline comparison,
//! operator-Schmidt diagnostics, and dense-oracle verification.
//!
//! Output directory layout:
//! `target.mpo`, `circuit_L{L}.circ`, `trace_L{L}.csv`, `baseline.csv`,
//! `spectra.csv`, `report.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use mpoc_core::dense::{dense_hst_cost, propagator, MAX_DENSE_QUBITS};
use mpoc_core::error::{Error, Result};
use mpoc_core::hamiltonian::{build_terms, HamiltonianSpec, TermList};
use mpoc_core::mpo::{hst_cost, MpoOperator};
use mpoc_core::optimizer::{optimize, schmidt_decay_diagnostic, CostTrace, OptimizerConfig};
use mpoc_core::random::rng_from_seed;
use mpoc_core::target::{
    build_target, default_chi_ladder, precompress_target, DEFAULT_CONV_TOL,
};
use mpoc_core::trotter::{
    ansatz_from_trotter, circuit_to_mpo, trotter_circuit_steps, BrickworkCircuit,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Compile,
    Baseline,
    Diagnose,
    Verify,
}

/// Everything one run needs; the CLI fills this from flags.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub depths: Vec<usize>,
    pub chi: usize,
    pub k: usize,
    /// Pre-compression error budget for the target MPO.
    pub budget: f64,
    pub seed: u64,
    /// Optional scale of a random perturbation of the Trotter
    /// initialization; `None` keeps the pipeline fully deterministic.
    pub perturb: Option<f64>,
    pub out_dir: PathBuf,
    pub mode: Mode,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        if !self.config_path.exists() {
            return Err(Error::Config(format!(
                "config file {} does not exist",
                self.config_path.display()
            )));
        }
        if self.depths.is_empty() || self.depths.iter().any(|&d| d == 0) {
            return Err(Error::Config("depths must be positive".into()));
        }
        if self.chi == 0 || self.k == 0 {
            return Err(Error::Config("chi and k must be positive".into()));
        }
        if self.budget <= 0.0 {
            return Err(Error::Config("budget must be positive".into()));
        }
        Ok(())
    }

    fn load_model(&self) -> Result<(HamiltonianSpec, TermList)> {
        let spec = HamiltonianSpec::from_path(&self.config_path)?;
        let terms = build_terms(&spec)?;
        Ok((spec, terms))
    }

    fn circuit_path(&self, depth: usize) -> PathBuf {
        self.out_dir.join(format!("circuit_L{depth}.circ"))
    }

    fn trace_path(&self, depth: usize) -> PathBuf {
        self.out_dir.join(format!("trace_L{depth}.csv"))
    }

    fn target_path(&self) -> PathBuf {
        self.out_dir.join("target.mpo")
    }
}

#[derive(Clone, Debug)]
pub struct DepthResult {
    pub depth: usize,
    pub init_cost: f64,
    pub final_cost: f64,
    pub sweeps: usize,
    pub escalations: usize,
}

#[derive(Clone, Debug)]
pub struct CompileOutputs {
    pub target_chi: usize,
    pub target_build_cost: f64,
    pub precompress_cost: f64,
    pub results: Vec<DepthResult>,
}

fn write_trace_csv(path: &Path, trace: &CostTrace) -> Result<()> {
    let mut text = String::from("sweep,cost,chi,discarded_weight,seconds\n");
    for e in &trace.entries {
        writeln!(
            text,
            "{},{},{},{},{}",
            e.sweep, e.cost, e.max_env_chi, e.cum_discarded, e.seconds
        )
        .expect("write to string");
    }
    fs::write(path, text)?;
    Ok(())
}

/// Randomly rotate every gate of the initialization by `exp(−i·eps·K)` with
/// Haar-derived Hermitian `K`; used only when a perturbation is requested.
fn perturb_circuit(circ: &mut BrickworkCircuit, eps: f64, seed: u64) -> Result<()> {
    use mpoc_core::tensor::conj_transpose;
    let mut rng = rng_from_seed(seed);
    for layer in &mut circ.layers {
        for gate in &mut layer.gates {
            let g = mpoc_core::random::haar_unitary(4, &mut rng);
            let k = {
                let adj = conj_transpose(&g);
                (&g + &adj).mapv(|v| v * mpoc_core::C64::new(0.5, 0.0))
            };
            let rot = mpoc_core::trotter::gate_exponential(&k, eps)?;
            gate.unitary = rot.dot(&gate.unitary);
        }
    }
    Ok(())
}

/// Full pipeline: build and pre-compress the target, initialize at each
/// requested depth, optimize, and write all artifacts.
pub fn cmd_compile(manifest: &RunManifest) -> Result<CompileOutputs> {
    manifest.validate()?;
    let (spec, terms) = manifest.load_model()?;
    fs::create_dir_all(&manifest.out_dir)?;

    let ladder = default_chi_ladder(manifest.chi);
    let (raw_target, build_report) =
        build_target(&terms, spec.t, manifest.k, &ladder, DEFAULT_CONV_TOL)?;
    let (v_targ, compress_report) = precompress_target(&raw_target, manifest.budget)?;

    let mut file = fs::File::create(manifest.target_path())?;
    v_targ.save(&mut file)?;

    let opt_config = OptimizerConfig {
        chi_train: manifest.chi,
        ..Default::default()
    };

    let mut results: Vec<DepthResult> = manifest
        .depths
        .par_iter()
        .map(|&depth| -> Result<DepthResult> {
            let mut init = ansatz_from_trotter(&terms, spec.t, depth)?;
            if let Some(eps) = manifest.perturb {
                perturb_circuit(&mut init, eps, manifest.seed ^ depth as u64)?;
            }
            let (optimized, trace) = optimize(&init, &v_targ, &opt_config)?;
            fs::write(
                manifest.circuit_path(depth),
                optimized.to_json_string()?,
            )?;
            write_trace_csv(&manifest.trace_path(depth), &trace)?;
            Ok(DepthResult {
                depth,
                init_cost: trace.init_cost_verified,
                final_cost: trace.final_cost_verified,
                sweeps: trace.entries.len().saturating_sub(1),
                escalations: trace.escalations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|r| r.depth);

    let outputs = CompileOutputs {
        target_chi: v_targ.max_bond_dim(),
        target_build_cost: build_report.final_cost,
        precompress_cost: compress_report.final_cost,
        results,
    };
    write_report(manifest, &spec, &outputs)?;
    Ok(outputs)
}

fn write_report(
    manifest: &RunManifest,
    spec: &HamiltonianSpec,
    outputs: &CompileOutputs,
) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "model: {}", spec.model.tag()).unwrap();
    writeln!(text, "qubits: {}", spec.n).unwrap();
    writeln!(text, "t: {}", spec.t).unwrap();
    writeln!(text, "k: {}", manifest.k).unwrap();
    writeln!(text, "chi_train: {}", manifest.chi).unwrap();
    writeln!(text, "target_chi: {}", outputs.target_chi).unwrap();
    writeln!(text, "target_build_cost: {}", outputs.target_build_cost).unwrap();
    writeln!(text, "precompress_cost: {}", outputs.precompress_cost).unwrap();
    writeln!(text, "budget: {}", manifest.budget).unwrap();
    writeln!(text).unwrap();
    writeln!(text, "depth  init_cost  final_cost  sweeps  escalations").unwrap();
    for r in &outputs.results {
        writeln!(
            text,
            "{:5}  {}  {}  {}  {}",
            r.depth, r.init_cost, r.final_cost, r.sweeps, r.escalations
        )
        .unwrap();
    }
    fs::write(manifest.out_dir.join("report.txt"), text)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ComparisonRow {
    pub depth: usize,
    pub compiled_cost: f64,
    pub best_trotter_cost: f64,
    pub best_trotter_order: u32,
    pub best_trotter_k: usize,
    /// `best_trotter_cost / compiled_cost`, floored at 1 when both costs sit
    /// at numerical zero.
    pub error_reduction: f64,
    /// Shallowest (interpolated) Trotter depth reaching the compiled cost,
    /// divided by the compiled depth.
    pub depth_compression: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

struct BaselinePoint {
    order: u32,
    k: usize,
    depth: usize,
    cost: f64,
}

/// Cost of an operator against the high-accuracy reference. Dense exact
/// propagator below the dense limit, otherwise the uncompressed converged
/// target MPO.
enum Reference {
    Dense(ndarray::Array2<mpoc_core::C64>),
    Mpo(MpoOperator),
}

impl Reference {
    fn new(spec: &HamiltonianSpec, terms: &TermList, chi: usize, k: usize) -> Result<Self> {
        if spec.n <= MAX_DENSE_QUBITS {
            let h = terms.to_dense()?;
            Ok(Reference::Dense(propagator(&h, spec.t)?))
        } else {
            let ladder = default_chi_ladder(chi);
            let (mpo, _) = build_target(terms, spec.t, k, &ladder, DEFAULT_CONV_TOL)?;
            Ok(Reference::Mpo(mpo))
        }
    }

    fn cost(&self, circ: &BrickworkCircuit, chi: usize) -> Result<f64> {
        match self {
            Reference::Dense(u) => dense_hst_cost(&circ.to_dense()?, u),
            Reference::Mpo(v) => {
                let (m, _) = circuit_to_mpo(circ, chi, 1e-14)?;
                hst_cost(&m, v)
            }
        }
    }
}

const COST_FLOOR: f64 = 1e-14;

/// Shallowest depth at which the per-order piecewise-linear interpolant of
/// `(depth, ln cost)` reaches `target`; extrapolates the last decreasing
/// segment when the data does not bracket the target.
fn interpolated_depth(points: &[(usize, f64)], target: f64) -> Option<f64> {
    if points.is_empty() {
        return None;
    }
    let ln_t = target.max(COST_FLOOR).ln();
    let pts: Vec<(f64, f64)> = points
        .iter()
        .map(|&(d, c)| (d as f64, c.max(COST_FLOOR).ln()))
        .collect();
    if pts[0].1 <= ln_t {
        return Some(pts[0].0);
    }
    for w in pts.windows(2) {
        let (d0, c0) = w[0];
        let (d1, c1) = w[1];
        if c1 <= ln_t && c0 > ln_t {
            let frac = (c0 - ln_t) / (c0 - c1);
            return Some(d0 + frac * (d1 - d0));
        }
    }
    // Extrapolate from the last strictly decreasing segment.
    for w in pts.windows(2).rev() {
        let (d0, c0) = w[0];
        let (d1, c1) = w[1];
        if c1 < c0 {
            let slope = (c1 - c0) / (d1 - d0);
            return Some(d1 + (ln_t - c1) / slope);
        }
    }
    None
}

/// Compare compiled circuits against merged Trotterizations of every order
/// and step count up to a depth cap, measured against the high-accuracy
/// reference.
pub fn cmd_baseline(manifest: &RunManifest) -> Result<ComparisonTable> {
    manifest.validate()?;
    let (spec, terms) = manifest.load_model()?;
    fs::create_dir_all(&manifest.out_dir)?;

    // Compile inline when artifacts are missing.
    if manifest
        .depths
        .iter()
        .any(|&d| !manifest.circuit_path(d).exists())
    {
        cmd_compile(manifest)?;
    }

    let reference = Reference::new(&spec, &terms, manifest.chi, manifest.k)?;
    let eval_chi = 2 * manifest.chi;
    let max_depth = *manifest.depths.iter().max().unwrap();
    let depth_cap = (4 * max_depth).max(40);

    let mut baselines: Vec<BaselinePoint> = Vec::new();
    for order in [1u32, 2, 4] {
        for k in 1.. {
            let circ = trotter_circuit_steps(&terms, spec.t, k, order)?;
            if circ.depth() > depth_cap {
                break;
            }
            let cost = reference.cost(&circ, eval_chi)?;
            baselines.push(BaselinePoint {
                order,
                k,
                depth: circ.depth(),
                cost,
            });
        }
    }

    let mut rows = Vec::new();
    for &depth in &manifest.depths {
        let text = fs::read_to_string(manifest.circuit_path(depth))?;
        let circ = BrickworkCircuit::from_json_str(&text)?;
        let compiled_cost = reference.cost(&circ, eval_chi)?;

        let best = baselines
            .iter()
            .filter(|b| b.depth <= depth)
            .min_by(|a, b| a.cost.partial_cmp(&b.cost).unwrap());
        let (best_cost, best_order, best_k) = match best {
            Some(b) => (b.cost, b.order, b.k),
            None => (1.0, 0, 0),
        };
        // Floor rule: when both costs sit at numerical zero the ratio is 1.
        let error_reduction = if best_cost < COST_FLOOR && compiled_cost < COST_FLOOR {
            1.0
        } else {
            best_cost / compiled_cost.max(COST_FLOOR)
        };

        // Per-order interpolants of (depth, ln cost).
        let mut best_depth: Option<f64> = None;
        for order in [1u32, 2, 4] {
            let mut pts: Vec<(usize, f64)> = baselines
                .iter()
                .filter(|b| b.order == order)
                .map(|b| (b.depth, b.cost))
                .collect();
            pts.sort_by_key(|p| p.0);
            pts.dedup_by_key(|p| p.0);
            if let Some(d) = interpolated_depth(&pts, compiled_cost) {
                best_depth = Some(match best_depth {
                    Some(cur) => cur.min(d),
                    None => d,
                });
            }
        }
        let depth_compression = best_depth.map(|d| d / depth as f64).unwrap_or(f64::NAN);

        rows.push(ComparisonRow {
            depth,
            compiled_cost,
            best_trotter_cost: best_cost,
            best_trotter_order: best_order,
            best_trotter_k: best_k,
            error_reduction,
            depth_compression,
        });
    }

    let mut text = String::from(
        "depth,compiled_cost,best_trotter_cost,best_order,best_k,error_reduction,depth_compression\n",
    );
    for r in &rows {
        writeln!(
            text,
            "{},{},{},{},{},{},{}",
            r.depth,
            r.compiled_cost,
            r.best_trotter_cost,
            r.best_trotter_order,
            r.best_trotter_k,
            r.error_reduction,
            r.depth_compression
        )
        .unwrap();
    }
    fs::write(manifest.out_dir.join("baseline.csv"), text)?;
    Ok(ComparisonTable { rows })
}

/// Operator-Schmidt decay diagnostic: spectra of `(U^{L−i:L})† V` per
/// inverse-layer count `i`, written as delimited text.
pub fn cmd_diagnose(manifest: &RunManifest) -> Result<PathBuf> {
    manifest.validate()?;
    let target_path = manifest.target_path();
    if !target_path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} (run compile first)", target_path.display()),
        )));
    }
    let mut file = fs::File::open(&target_path)?;
    let v_targ = MpoOperator::load(&mut file)?;

    let mut text = String::from("depth,i,values\n");
    for &depth in &manifest.depths {
        let path = manifest.circuit_path(depth);
        if !path.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} (run compile first)", path.display()),
            )));
        }
        let circ = BrickworkCircuit::from_json_str(&fs::read_to_string(path)?)?;
        let spectra = schmidt_decay_diagnostic(&circ, &v_targ, 2 * manifest.chi)?;
        for (i, row) in spectra.iter().enumerate() {
            let values: Vec<String> = row.iter().map(|s| s.to_string()).collect();
            writeln!(text, "{},{},{}", depth, i, values.join(";")).unwrap();
        }
    }
    let out = manifest.out_dir.join("spectra.csv");
    fs::write(&out, text)?;
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub checks: Vec<(String, bool, f64)>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.1)
    }
}

const VERIFY_TOL: f64 = 1e-9;

/// Dense-oracle harness: rebuild the exact propagator by matrix
/// exponentiation, recompute every artifact's cost densely, and cross-check
/// the MPO-computed costs.
pub fn cmd_verify(manifest: &RunManifest) -> Result<VerifyReport> {
    manifest.validate()?;
    let (spec, terms) = manifest.load_model()?;
    if spec.n > MAX_DENSE_QUBITS {
        return Err(Error::Usage(format!(
            "verification needs n <= {MAX_DENSE_QUBITS}, got {}",
            spec.n
        )));
    }
    let h = terms.to_dense()?;
    let exact = propagator(&h, spec.t)?;

    let mut report = VerifyReport::default();
    let mut file = fs::File::open(manifest.target_path())?;
    let v_targ = MpoOperator::load(&mut file)?;
    let v_dense = v_targ.to_dense()?;
    let target_cost = dense_hst_cost(&v_dense, &exact)?;
    report.checks.push((
        format!("target vs exact propagator (cost {target_cost:e})"),
        target_cost < manifest.budget.max(VERIFY_TOL),
        target_cost,
    ));

    for &depth in &manifest.depths {
        let path = manifest.circuit_path(depth);
        let circ = BrickworkCircuit::from_json_str(&fs::read_to_string(&path)?)?;
        let circ_dense = circ.to_dense()?;
        let dense_vs_target = dense_hst_cost(&circ_dense, &v_dense)?;
        let (circ_mpo, _) = circuit_to_mpo(&circ, 2 * manifest.chi, 1e-14)?;
        let mpo_vs_target = hst_cost(&circ_mpo, &v_targ)?;
        let agreement = (dense_vs_target - mpo_vs_target).abs();
        report.checks.push((
            format!(
                "L={depth}: MPO cost {mpo_vs_target:e} vs dense cost {dense_vs_target:e}"
            ),
            agreement < VERIFY_TOL,
            agreement,
        ));
    }
    Ok(report)
}
