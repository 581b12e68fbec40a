//! Matrix Product Operator / doubled-space MPS algebra.
//!
//! Site tensors are rank-4 with the fixed leg order `[left-bond, physical-out,
//! physical-in, right-bond]`; every contraction in the crate is coded against
//! this one convention. An [`MpoOperator`] represents
//! `exp(log_norm) · contraction(sites)`, with the `log_norm` accumulator
//! keeping stored tensors O(1) so that nothing overflows even for chains of
//! thousands of sites.
//!
//! The Hilbert–Schmidt test cost is evaluated on normalized doubled-space
//! MPSs: `C = 1 − |⟨û|v̂⟩|²`. Normalizing first keeps the cost faithful (it
//! can never go negative from truncation-induced norm drift).

use std::io::{Read, Write};

use ndarray::prelude::*;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::tensor::{
    contract, lq_thin, qr_thin, truncated_svd, unitarity_defect, DenseTensor,
};

pub const GATE_UNITARITY_TOL: f64 = 1e-8;
pub const DEFAULT_COMPRESS_FID_TOL: f64 = 1e-12;
pub const DEFAULT_COMPRESS_MAX_SWEEPS: usize = 50;
/// Default truncation weight tolerance for gate application.
pub const DEFAULT_GATE_WEIGHT_TOL: f64 = 1e-14;
/// Largest chain we allow to be contracted into a dense matrix.
pub const DENSE_QUBIT_LIMIT: usize = 10;

/// Matrix Product Operator on a chain of qubits.
#[derive(Clone, Debug)]
pub struct MpoOperator {
    sites: Vec<DenseTensor>,
    phys_dim: usize,
    log_norm: f64,
    ortho_center: Option<usize>,
}

/// MPS on the doubled physical space (one leg of extent `d²` per site),
/// obtained by fusing the two physical legs of an MPO.
#[derive(Clone, Debug)]
pub struct DoubledMps {
    sites: Vec<DenseTensor>,
    log_norm: f64,
    ortho_center: Option<usize>,
}

/// Identity operator; all bonds have extent 1.
pub fn mpo_identity(n: usize) -> MpoOperator {
    assert!(n >= 1, "identity MPO needs at least one site");
    let eye = DenseTensor::from_shape_vec(
        &[1, 2, 2, 1],
        vec![
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(1.0, 0.0),
        ],
    )
    .unwrap();
    MpoOperator {
        sites: vec![eye; n],
        phys_dim: 2,
        log_norm: 0.0,
        ortho_center: None,
    }
}

impl MpoOperator {
    /// Build from raw site tensors, validating bond structure.
    pub fn new(sites: Vec<DenseTensor>, log_norm: f64) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Dimension("MPO needs at least one site".into()));
        }
        let d = sites[0].shape()[1];
        for (j, s) in sites.iter().enumerate() {
            if s.rank() != 4 {
                return Err(Error::Dimension(format!("site {j} is not rank-4")));
            }
            if s.shape()[1] != d || s.shape()[2] != d {
                return Err(Error::Dimension(format!(
                    "site {j} physical extents {:?} != {d}",
                    &s.shape()[1..3]
                )));
            }
            if j + 1 < sites.len() && s.shape()[3] != sites[j + 1].shape()[0] {
                return Err(Error::Dimension(format!(
                    "bond mismatch between sites {j} and {}",
                    j + 1
                )));
            }
        }
        if sites[0].shape()[0] != 1 || sites[sites.len() - 1].shape()[3] != 1 {
            return Err(Error::Dimension("boundary bonds must have extent 1".into()));
        }
        Ok(Self {
            sites,
            phys_dim: d,
            log_norm,
            ortho_center: None,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn phys_dim(&self) -> usize {
        self.phys_dim
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn ortho_center(&self) -> Option<usize> {
        self.ortho_center
    }

    pub fn site(&self, j: usize) -> &DenseTensor {
        &self.sites[j]
    }

    pub fn sites(&self) -> &[DenseTensor] {
        &self.sites
    }

    /// Bond extent between sites `j` and `j+1`.
    pub fn bond_dim(&self, j: usize) -> usize {
        self.sites[j].shape()[3]
    }

    pub fn max_bond_dim(&self) -> usize {
        (0..self.n_sites() - 1)
            .map(|j| self.bond_dim(j))
            .max()
            .unwrap_or(1)
    }

    /// Move the orthogonality center, leaving the represented operator
    /// unchanged up to scale absorbed into `log_norm`.
    pub fn canonicalize(&self, center: usize) -> Result<Self> {
        if center >= self.n_sites() {
            return Err(Error::Dimension(format!(
                "center {center} out of range for {} sites",
                self.n_sites()
            )));
        }
        let mut cores: Vec<DenseTensor> = self.sites.iter().map(fuse_site).collect();
        let mut log_norm = self.log_norm;
        match self.ortho_center {
            Some(c) => move_center(&mut cores, &mut log_norm, c, center)?,
            None => canonicalize_cores(&mut cores, &mut log_norm, center)?,
        }
        let d = self.phys_dim;
        Ok(Self {
            sites: cores.iter().map(|t| unfuse_site(t, d)).collect(),
            phys_dim: d,
            log_norm,
            ortho_center: Some(center),
        })
    }

    /// Fuse the physical legs into one leg of extent `d²`.
    pub fn to_doubled_mps(&self) -> DoubledMps {
        DoubledMps {
            sites: self.sites.iter().map(fuse_site).collect(),
            log_norm: self.log_norm,
            ortho_center: self.ortho_center,
        }
    }

    /// Dense matrix of the represented operator (small systems only).
    pub fn to_dense(&self) -> Result<Array2<C64>> {
        let n = self.n_sites();
        if n > DENSE_QUBIT_LIMIT {
            return Err(Error::Usage(format!(
                "refusing dense reconstruction of {n} sites (limit {DENSE_QUBIT_LIMIT})"
            )));
        }
        let d = self.phys_dim;
        // Accumulator legs: [out-block, in-block, right-bond].
        let mut acc = self.sites[0].reshape(&[d, d, self.sites[0].shape()[3]])?;
        for s in &self.sites[1..] {
            let joined = contract(&acc, s, &[(2, 0)])?; // [O, I, o, i, r]
            let perm = joined.permute(&[0, 2, 1, 3, 4]);
            let (o_b, i_b) = (
                perm.shape()[0] * perm.shape()[1],
                perm.shape()[2] * perm.shape()[3],
            );
            let r = perm.shape()[4];
            acc = perm.reshape(&[o_b, i_b, r])?;
        }
        let dim = acc.shape()[0];
        let m = acc.reshape(&[dim, dim])?;
        let scale = C64::new(self.log_norm.exp(), 0.0);
        Ok(m.to_matrix(1) * scale)
    }

    /// Adjoint operator: conjugate entries, swap the physical legs.
    pub fn dagger(&self) -> Self {
        Self {
            sites: self
                .sites
                .iter()
                .map(|s| s.conj().permute(&[0, 2, 1, 3]))
                .collect(),
            phys_dim: self.phys_dim,
            log_norm: self.log_norm,
            ortho_center: self.ortho_center,
        }
    }

    /// Binary serialization with bit-exact round-trip.
    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"MPOC")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.n_sites() as u64).to_le_bytes())?;
        w.write_all(&(self.phys_dim as u64).to_le_bytes())?;
        w.write_all(&self.log_norm.to_le_bytes())?;
        let oc: i64 = self.ortho_center.map(|c| c as i64).unwrap_or(-1);
        w.write_all(&oc.to_le_bytes())?;
        for s in &self.sites {
            for &e in s.shape() {
                w.write_all(&(e as u64).to_le_bytes())?;
            }
            for v in s.data().iter() {
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"MPOC" {
            return Err(Error::Format("not an MPO container".into()));
        }
        let version = read_u32(r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported MPO version {version}")));
        }
        let n = read_u64(r)? as usize;
        if n == 0 || n > 1 << 20 {
            return Err(Error::Format(format!("implausible site count {n}")));
        }
        let d = read_u64(r)? as usize;
        let log_norm = read_f64(r)?;
        if !log_norm.is_finite() {
            return Err(Error::Format("non-finite log_norm".into()));
        }
        let oc = read_i64(r)?;
        let mut sites = Vec::with_capacity(n);
        for _ in 0..n {
            let mut shape = [0usize; 4];
            for e in shape.iter_mut() {
                *e = read_u64(r)? as usize;
            }
            let len: usize = shape.iter().product();
            if len > 1 << 28 {
                return Err(Error::Format("implausible site tensor size".into()));
            }
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let re = read_f64(r)?;
                let im = read_f64(r)?;
                data.push(C64::new(re, im));
            }
            sites.push(DenseTensor::from_shape_vec(&shape, data)?);
        }
        let mut mpo = Self::new(sites, log_norm)?;
        if mpo.phys_dim != d {
            return Err(Error::Format("physical dimension mismatch".into()));
        }
        mpo.ortho_center = if oc >= 0 { Some(oc as usize) } else { None };
        Ok(mpo)
    }

    #[cfg(test)]
    pub(crate) fn sites_mut(&mut self) -> &mut Vec<DenseTensor> {
        &mut self.sites
    }

    pub(crate) fn set_state(&mut self, log_norm: f64, ortho_center: Option<usize>) {
        self.log_norm = log_norm;
        self.ortho_center = ortho_center;
    }
}

impl DoubledMps {
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn site(&self, j: usize) -> &DenseTensor {
        &self.sites[j]
    }

    pub fn max_bond_dim(&self) -> usize {
        (0..self.n_sites() - 1)
            .map(|j| self.sites[j].shape()[2])
            .max()
            .unwrap_or(1)
    }

    /// Unfuse the doubled leg back into `[out, in]`; exact inverse of
    /// [`MpoOperator::to_doubled_mps`].
    pub fn into_mpo(self, phys_dim: usize) -> Result<MpoOperator> {
        let sites: Vec<DenseTensor> = self
            .sites
            .iter()
            .map(|t| unfuse_site(t, phys_dim))
            .collect();
        let mut mpo = MpoOperator::new(sites, self.log_norm)?;
        mpo.ortho_center = self.ortho_center;
        Ok(mpo)
    }

    /// Rescale so the represented vector has 2-norm 1; the removed scale is
    /// added to `log_norm`.
    pub fn normalize(&self) -> Result<Self> {
        let mut cores = self.sites.clone();
        let mut log_norm = self.log_norm;
        let center = cores.len() - 1;
        match self.ortho_center {
            Some(c) => move_center(&mut cores, &mut log_norm, c, center)?,
            None => canonicalize_cores(&mut cores, &mut log_norm, center)?,
        }
        Ok(Self {
            sites: cores,
            log_norm,
            ortho_center: Some(center),
        })
    }

    /// `ln‖ψ‖` of the represented vector, including the stored scale.
    pub fn norm_ln(&self) -> Result<f64> {
        Ok(self.normalize()?.log_norm)
    }
}

/// `⟨a|b⟩` for normalized doubled-space MPSs, contracted left-to-right with
/// per-site rescaling into a log accumulator.
pub fn inner_product_normalized(a: &DoubledMps, b: &DoubledMps) -> Result<C64> {
    if a.n_sites() != b.n_sites() {
        return Err(Error::Dimension(format!(
            "length mismatch: {} vs {}",
            a.n_sites(),
            b.n_sites()
        )));
    }
    let mut env = unit_env();
    let mut log_acc = 0.0_f64;
    for j in 0..a.n_sites() {
        env = transfer_left(&env, &a.sites[j], &b.sites[j])?;
        let m = env.max_abs();
        if m > 0.0 {
            env = env.scale(C64::new(1.0 / m, 0.0));
            log_acc += m.ln();
        }
    }
    let raw = env.as_scalar()?;
    Ok(raw * C64::new(log_acc.exp(), 0.0))
}

/// Hilbert–Schmidt test cost `1 − |Tr(U†V)|² / 2^{2n}`, evaluated through
/// normalized doubled-space MPSs. Phase- and scale-invariant, never negative.
pub fn hst_cost(u: &MpoOperator, v: &MpoOperator) -> Result<f64> {
    if u.n_sites() != v.n_sites() {
        return Err(Error::Dimension(format!(
            "qubit count mismatch: {} vs {}",
            u.n_sites(),
            v.n_sites()
        )));
    }
    let un = u.to_doubled_mps().normalize()?;
    let vn = v.to_doubled_mps().normalize()?;
    let ip = inner_product_normalized(&un, &vn)?;
    let overlap = ip.norm().min(1.0);
    Ok((1.0 - overlap * overlap).max(0.0))
}

/// Apply a two-qubit gate to the physical-out legs of neighboring sites
/// `(site, site+1)`, splitting back with a truncated SVD.
///
/// Returns the new operator and the discarded weight of the truncation.
pub fn apply_two_site_gate(
    mpo: &MpoOperator,
    gate: &Array2<C64>,
    site: usize,
    chi_max: usize,
    weight_tol: f64,
) -> Result<(MpoOperator, f64)> {
    if gate.dim() != (4, 4) {
        return Err(Error::Dimension("two-site gate must be 4x4".into()));
    }
    if unitarity_defect(gate) > GATE_UNITARITY_TOL {
        return Err(Error::Validation(format!(
            "gate is not unitary (defect {:.3e})",
            unitarity_defect(gate)
        )));
    }
    if site + 1 >= mpo.n_sites() {
        return Err(Error::Dimension(format!(
            "gate at ({site},{}) does not fit {} sites",
            site + 1,
            mpo.n_sites()
        )));
    }
    let work = mpo.canonicalize(site)?;
    apply_two_site_gate_unchecked(work, gate, site, chi_max, weight_tol)
}

/// Same as [`apply_two_site_gate`] but assumes the orthogonality center is
/// already at `site` and skips the unitarity check.
pub(crate) fn apply_two_site_gate_unchecked(
    mut mpo: MpoOperator,
    gate: &Array2<C64>,
    site: usize,
    chi_max: usize,
    weight_tol: f64,
) -> Result<(MpoOperator, f64)> {
    let d = mpo.phys_dim;
    let g4 = DenseTensor::from_matrix(gate).reshape(&[d, d, d, d])?;
    let theta = contract(&mpo.sites[site], &mpo.sites[site + 1], &[(3, 0)])?;
    // gate [a, b, c, e] with (c,e) contracting the out legs (o1, o2):
    // theta legs [l, o1, i1, o2, i2, r] -> result [a, b, l, i1, i2, r]
    let applied = contract(&g4, &theta, &[(2, 1), (3, 3)])?;
    let reordered = applied.permute(&[2, 0, 3, 1, 4, 5]); // [l, a, i1, b, i2, r]
    let (l, r) = (reordered.shape()[0], reordered.shape()[5]);
    let m = reordered.to_matrix(3);
    let svd = truncated_svd(&m, chi_max, weight_tol)?;
    let k = svd.kept();
    let left = DenseTensor::from_matrix(&svd.left_isometry).reshape(&[l, d, d, k])?;
    let mut right_m = svd.weighted_right();
    let norm = right_m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let mut log_norm = mpo.log_norm;
    if norm > 0.0 {
        right_m.mapv_inplace(|v| v / norm);
        log_norm += norm.ln();
    }
    let right = DenseTensor::from_matrix(&right_m).reshape(&[k, d, d, r])?;
    mpo.sites[site] = left;
    mpo.sites[site + 1] = right;
    mpo.set_state(log_norm, Some(site + 1));
    Ok((mpo, svd.discarded_weight))
}

/// Decompose a two-qubit gate acting on the outermost sites of a `span`-site
/// window into an MPO fragment: SVD across the qubit bipartition plus
/// identity-passthrough tensors on the intermediate sites. The connecting
/// bond never exceeds 4.
pub fn gate_to_two_site_mpo(gate: &Array2<C64>, span: usize) -> Result<MpoOperator> {
    if gate.dim() != (4, 4) {
        return Err(Error::Dimension("gate must be 4x4".into()));
    }
    if span < 2 {
        return Err(Error::Dimension("span must be at least 2".into()));
    }
    let d = 2usize;
    // G[(a b),(c e)] -> M[(a c),(b e)]: group first-qubit legs left.
    let g4 = DenseTensor::from_matrix(gate).reshape(&[d, d, d, d])?;
    let m = g4.permute(&[0, 2, 1, 3]).to_matrix(2);
    let svd = truncated_svd(&m, 4, 0.0)?;
    let k = svd.kept();
    let sqrt_s: Vec<f64> = svd.singular_values.iter().map(|s| s.sqrt()).collect();

    let mut left_m = svd.left_isometry.clone();
    for (col, &s) in sqrt_s.iter().enumerate() {
        left_m
            .column_mut(col)
            .mapv_inplace(|v| v * C64::new(s, 0.0));
    }
    let mut right_m = crate::tensor::conj_transpose(&svd.right_isometry);
    for (row, &s) in sqrt_s.iter().enumerate() {
        right_m.row_mut(row).mapv_inplace(|v| v * C64::new(s, 0.0));
    }

    let left = DenseTensor::from_matrix(&left_m).reshape(&[1, d, d, k])?;
    let right = DenseTensor::from_matrix(&right_m).reshape(&[k, d, d, 1])?;

    let mut pass = DenseTensor::zeros(&[k, d, d, k]).into_array();
    for b in 0..k {
        for p in 0..d {
            pass[IxDyn(&[b, p, p, b])] = C64::new(1.0, 0.0);
        }
    }
    let pass = DenseTensor::from_array(pass)?;

    let mut sites = Vec::with_capacity(span);
    sites.push(left);
    for _ in 0..span - 2 {
        sites.push(pass.clone());
    }
    sites.push(right);
    MpoOperator::new(sites, 0.0)
}

/// Apply an MPO fragment on sites `[start, start + fragment.len())` in a
/// single truncating left-to-right pass, then one exact right-to-left
/// canonicalization pass.
pub fn zip_up_apply(
    mpo: &MpoOperator,
    fragment: &MpoOperator,
    start: usize,
    chi_max: usize,
    weight_tol: f64,
) -> Result<(MpoOperator, f64)> {
    let w = fragment.n_sites();
    if start + w > mpo.n_sites() {
        return Err(Error::Dimension(format!(
            "fragment of {w} sites at {start} does not fit {} sites",
            mpo.n_sites()
        )));
    }
    if fragment.phys_dim != mpo.phys_dim {
        return Err(Error::Dimension("physical dimension mismatch".into()));
    }
    let d = mpo.phys_dim;
    let mut work = mpo.canonicalize(start)?;
    work.log_norm += fragment.log_norm;
    let mut discarded = 0.0_f64;

    // Zipper carries [new-bond, fragment-bond, mpo-bond].
    let mut zipper: Option<DenseTensor> = None;
    for t in 0..w {
        let f = &fragment.sites[t];
        let m = &work.sites[start + t];
        // f [lf, fo, fi, rf] · m [lm, o, i, rm] over (fi, o)
        // -> [lf, fo, rf, lm, i, rm]
        let c = contract(f, m, &[(2, 1)])?;
        let joined = match zipper.take() {
            None => {
                // First site: lf = 1; combined left bond is (lm · lf).
                let p = c.permute(&[3, 0, 1, 4, 2, 5]); // [lm, lf, fo, i, rf, rm]
                let (lm, lf) = (p.shape()[0], p.shape()[1]);
                let (rf, rm) = (p.shape()[4], p.shape()[5]);
                p.reshape(&[lm * lf, d, d, rf, rm])?
            }
            Some(z) => {
                // z [k, rf_prev, rm_prev] · c [lf, fo, rf, lm, i, rm]
                // -> [k, fo, rf, i, rm]
                let j = contract(&z, &c, &[(1, 0), (2, 3)])?;
                j.permute(&[0, 1, 3, 2, 4]) // [k, fo, i, rf, rm]
            }
        };
        if t + 1 < w {
            let (kl, rf, rm) = (joined.shape()[0], joined.shape()[3], joined.shape()[4]);
            let mat = joined.to_matrix(3);
            let svd = truncated_svd(&mat, chi_max, weight_tol)?;
            discarded += svd.discarded_weight;
            let k = svd.kept();
            work.sites[start + t] =
                DenseTensor::from_matrix(&svd.left_isometry).reshape(&[kl, d, d, k])?;
            let mut carry = svd.weighted_right();
            let norm = carry.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if norm > 0.0 {
                carry.mapv_inplace(|v| v / norm);
                work.log_norm += norm.ln();
            }
            zipper = Some(DenseTensor::from_matrix(&carry).reshape(&[k, rf, rm])?);
        } else {
            // Last fragment site: rf = 1, so the joined tensor is the site.
            let (kl, rm) = (joined.shape()[0], joined.shape()[4]);
            work.sites[start + t] = joined.reshape(&[kl, d, d, rm])?;
        }
    }
    work.ortho_center = None;
    let out = work.canonicalize(0)?;
    Ok((out, discarded))
}

/// Variationally compress to bond dimension `chi_target` on the doubled
/// physical space, starting from a single SVD truncation sweep.
///
/// Returns the compressed operator and the final fidelity
/// `|⟨compressed|original⟩|²` between the normalized doubled states. The
/// fidelity is monotone non-decreasing over sweeps.
pub fn variational_compress(
    mpo: &MpoOperator,
    chi_target: usize,
    fid_tol: f64,
    max_sweeps: usize,
) -> Result<(MpoOperator, f64)> {
    if chi_target == 0 {
        return Err(Error::Dimension("chi_target must be at least 1".into()));
    }
    let d = mpo.phys_dim;
    let psi = mpo.to_doubled_mps().normalize()?;
    let n = psi.n_sites();
    if n == 1 {
        return Ok((mpo.clone(), 1.0));
    }
    let total_log = psi.log_norm;

    // Initialization: one SVD truncation sweep from the right-canonical form.
    let mut phi_cores = psi.sites.clone();
    let mut phi_log = 0.0_f64;
    canonicalize_cores(&mut phi_cores, &mut phi_log, 0)?;
    for j in 0..n - 1 {
        let (l, p, _r) = core_dims(&phi_cores[j]);
        let mat = phi_cores[j].to_matrix(2);
        let svd = truncated_svd(&mat, chi_target, 0.0)?;
        let k = svd.kept();
        phi_cores[j] = DenseTensor::from_matrix(&svd.left_isometry).reshape(&[l, p, k])?;
        let carry = DenseTensor::from_matrix(&svd.weighted_right());
        phi_cores[j + 1] = contract(&carry, &phi_cores[j + 1], &[(1, 0)])?;
    }
    let mut ignored = 0.0;
    normalize_center(&mut phi_cores, &mut ignored, n - 1);

    // Alternating sweeps maximizing the overlap with the fixed original.
    let psi_cores = &psi.sites;
    let mut rights: Vec<DenseTensor> = vec![unit_env(); n + 1];
    for j in (1..n).rev() {
        rights[j] = transfer_right(&rights[j + 1], &phi_cores[j], &psi_cores[j])?;
    }
    let mut lefts: Vec<DenseTensor> = vec![unit_env(); n + 1];

    let mut fidelity = overlap_sq(&phi_cores, psi_cores)?;
    for _sweep in 0..max_sweeps {
        // Left-to-right half sweep; each local update is the optimal tensor
        // given the fixed environments, so the overlap cannot decrease.
        for j in 0..n {
            let tmp = contract(&lefts[j], &psi_cores[j], &[(1, 0)])?; // [lφ, p, rψ]
            let opt = contract(&tmp, &rights[j + 1], &[(2, 1)])?; // [lφ, p, rφ]
            if j + 1 < n {
                let (l, p, _r) = core_dims(&opt);
                let (q, _rest) = qr_thin(&opt.to_matrix(2))?;
                let k = q.ncols();
                phi_cores[j] = DenseTensor::from_matrix(&q).reshape(&[l, p, k])?;
                lefts[j + 1] = transfer_left(&lefts[j], &phi_cores[j], &psi_cores[j])?;
            } else {
                phi_cores[j] = opt;
            }
        }
        // Right-to-left half sweep.
        let mut f_new = fidelity;
        for j in (0..n).rev() {
            let tmp = contract(&lefts[j], &psi_cores[j], &[(1, 0)])?;
            let opt = contract(&tmp, &rights[j + 1], &[(2, 1)])?;
            if j > 0 {
                let (_l, p, r) = core_dims(&opt);
                let (_rest, q) = lq_thin(&opt.to_matrix(1))?;
                let k = q.nrows();
                phi_cores[j] = DenseTensor::from_matrix(&q).reshape(&[k, p, r])?;
                rights[j] = transfer_right(&rights[j + 1], &phi_cores[j], &psi_cores[j])?;
            } else {
                f_new = opt.frobenius_norm().powi(2);
                phi_cores[j] = opt;
            }
        }
        debug_assert!(
            f_new >= fidelity - 1e-13,
            "compression fidelity decreased: {fidelity} -> {f_new}"
        );
        let gain = f_new - fidelity;
        fidelity = f_new;
        if gain.abs() < fid_tol {
            break;
        }
    }

    // Scale the normalized result back to the best approximation of the
    // original operator: ψ ≈ ⟨φ̂|ψ̂⟩ · φ̂ · e^{log_norm}.
    let mut log_out = total_log;
    let amp = phi_cores[0].frobenius_norm();
    if amp > 0.0 {
        let inv = C64::new(1.0 / amp, 0.0);
        phi_cores[0] = phi_cores[0].scale(inv);
        log_out += amp.ln();
    }
    let out = DoubledMps {
        sites: phi_cores,
        log_norm: log_out,
        ortho_center: Some(0),
    };
    Ok((out.into_mpo(d)?, fidelity))
}

/// Operator-Schmidt coefficients across the bond between sites `bond` and
/// `bond + 1`, normalized to unit 2-norm, descending.
pub fn schmidt_spectrum(mpo: &MpoOperator, bond: usize) -> Result<Vec<f64>> {
    if bond + 1 >= mpo.n_sites() {
        return Err(Error::Dimension(format!(
            "bond {bond} out of range for {} sites",
            mpo.n_sites()
        )));
    }
    let work = mpo.canonicalize(bond)?;
    let theta = contract(&work.sites[bond], &work.sites[bond + 1], &[(3, 0)])?;
    let m = theta.to_matrix(3);
    let svd = truncated_svd(&m, m.nrows().min(m.ncols()), 0.0)?;
    let norm: f64 = svd
        .singular_values
        .iter()
        .map(|s| s * s)
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Ok(vec![0.0; svd.kept()]);
    }
    Ok(svd.singular_values.iter().map(|s| s / norm).collect())
}

// ---------------------------------------------------------------------------
// Rank-3 core machinery shared by the fused-MPO and doubled-MPS forms.

pub(crate) fn fuse_site(t: &DenseTensor) -> DenseTensor {
    let s = t.shape();
    t.reshape(&[s[0], s[1] * s[2], s[3]])
        .expect("fuse physical legs")
}

pub(crate) fn unfuse_site(t: &DenseTensor, d: usize) -> DenseTensor {
    let s = t.shape();
    t.reshape(&[s[0], d, d, s[2]]).expect("unfuse physical legs")
}

fn core_dims(t: &DenseTensor) -> (usize, usize, usize) {
    (t.shape()[0], t.shape()[1], t.shape()[2])
}

pub(crate) fn unit_env() -> DenseTensor {
    DenseTensor::from_shape_vec(&[1, 1], vec![C64::new(1.0, 0.0)]).unwrap()
}

/// `L' [rφ, rψ] = Σ conj(φ_j)[lφ,p,rφ] · ψ_j[lψ,p,rψ] · L[lφ,lψ]`.
fn transfer_left(env: &DenseTensor, phi_j: &DenseTensor, psi_j: &DenseTensor) -> Result<DenseTensor> {
    let tmp = contract(env, &phi_j.conj(), &[(0, 0)])?; // [lψ, p, rφ]
    let out = contract(&tmp, psi_j, &[(0, 0), (1, 1)])?; // [rφ, rψ]
    Ok(out)
}

/// Mirror of [`transfer_left`]; env legs are `[lφ, lψ]` of the sites right of `j`.
fn transfer_right(env: &DenseTensor, phi_j: &DenseTensor, psi_j: &DenseTensor) -> Result<DenseTensor> {
    let tmp = contract(&phi_j.conj(), env, &[(2, 0)])?; // [lφ, p, rψ]
    let out = contract(&tmp, psi_j, &[(1, 1), (2, 2)])?; // [lφ, lψ]
    Ok(out)
}

fn overlap_sq(phi: &[DenseTensor], psi: &[DenseTensor]) -> Result<f64> {
    let mut env = unit_env();
    let mut log_acc = 0.0_f64;
    for j in 0..phi.len() {
        env = transfer_left(&env, &phi[j], &psi[j])?;
        let m = env.max_abs();
        if m > 0.0 {
            env = env.scale(C64::new(1.0 / m, 0.0));
            log_acc += m.ln();
        }
    }
    let v = env.as_scalar()?.norm() * log_acc.exp();
    Ok(v * v)
}

/// Left-orthonormalize core `j`, absorbing the remainder into core `j+1`.
fn left_step(cores: &mut [DenseTensor], j: usize, log_norm: &mut f64) -> Result<()> {
    let (l, p, _r) = core_dims(&cores[j]);
    let (q, mut r) = qr_thin(&cores[j].to_matrix(2))?;
    let k = q.ncols();
    cores[j] = DenseTensor::from_matrix(&q).reshape(&[l, p, k])?;
    let norm = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        r.mapv_inplace(|v| v / norm);
        *log_norm += norm.ln();
    }
    let rt = DenseTensor::from_matrix(&r);
    cores[j + 1] = contract(&rt, &cores[j + 1], &[(1, 0)])?;
    Ok(())
}

/// Right-orthonormalize core `j`, absorbing the remainder into core `j-1`.
fn right_step(cores: &mut [DenseTensor], j: usize, log_norm: &mut f64) -> Result<()> {
    let (_l, p, r) = core_dims(&cores[j]);
    let (mut lm, q) = lq_thin(&cores[j].to_matrix(1))?;
    let k = q.nrows();
    cores[j] = DenseTensor::from_matrix(&q).reshape(&[k, p, r])?;
    let norm = lm.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        lm.mapv_inplace(|v| v / norm);
        *log_norm += norm.ln();
    }
    let lt = DenseTensor::from_matrix(&lm);
    cores[j - 1] = contract(&cores[j - 1], &lt, &[(2, 0)])?;
    Ok(())
}

fn normalize_center(cores: &mut [DenseTensor], log_norm: &mut f64, center: usize) {
    let norm = cores[center].frobenius_norm();
    if norm > 0.0 {
        cores[center] = cores[center].scale(C64::new(1.0 / norm, 0.0));
        *log_norm += norm.ln();
    }
}

/// Full canonicalization sweep from scratch (no gauge assumptions).
fn canonicalize_cores(
    cores: &mut Vec<DenseTensor>,
    log_norm: &mut f64,
    center: usize,
) -> Result<()> {
    for j in 0..center {
        left_step(cores, j, log_norm)?;
    }
    for j in (center + 1..cores.len()).rev() {
        right_step(cores, j, log_norm)?;
    }
    normalize_center(cores, log_norm, center);
    Ok(())
}

/// Incremental center move assuming `from` is the current center.
fn move_center(
    cores: &mut Vec<DenseTensor>,
    log_norm: &mut f64,
    from: usize,
    to: usize,
) -> Result<()> {
    let mut c = from;
    while c < to {
        left_step(cores, c, log_norm)?;
        c += 1;
    }
    while c > to {
        right_step(cores, c, log_norm)?;
        c -= 1;
    }
    normalize_center(cores, log_norm, to);
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_i64(r: &mut impl Read) -> Result<i64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(i64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{haar_unitary, rng_from_seed};
    use crate::tensor::identity_matrix;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
        (a - b).iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Random non-unitary MPO with the requested maximum bond dimension.
    fn random_mpo(n: usize, chi: usize, rng: &mut impl Rng) -> MpoOperator {
        let mut sites = Vec::with_capacity(n);
        let mut left = 1usize;
        for j in 0..n {
            let right = if j + 1 == n {
                1
            } else {
                chi.min(4usize.pow((j + 1).min(n - j - 1) as u32))
            };
            let len = left * 2 * 2 * right;
            let data: Vec<C64> = (0..len)
                .map(|_| crate::random::complex_gaussian(rng))
                .collect();
            sites.push(DenseTensor::from_shape_vec(&[left, 2, 2, right], data).unwrap());
            left = right;
        }
        MpoOperator::new(sites, 0.0).unwrap()
    }

    /// Unitary MPO built by applying random two-site gates to the identity.
    fn random_unitary_mpo(n: usize, gates: usize, rng: &mut impl Rng) -> MpoOperator {
        let mut mpo = mpo_identity(n);
        for k in 0..gates {
            let site = if n >= 2 { k % (n - 1) } else { 0 };
            let g = haar_unitary(4, rng);
            let (next, _) = apply_two_site_gate(&mpo, &g, site, 4096, 0.0).unwrap();
            mpo = next;
        }
        mpo
    }

    fn is_isometry_matrix(m: &Array2<C64>, tol: f64) -> bool {
        let g = crate::tensor::conj_transpose(m).dot(m);
        g.indexed_iter().all(|((i, j), v)| {
            let target = if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) };
            (v - target).norm() < tol
        })
    }

    fn check_canonical(mpo: &MpoOperator, center: usize, tol: f64) {
        for (j, s) in mpo.sites().iter().enumerate() {
            let f = fuse_site(s);
            if j < center {
                assert!(is_isometry_matrix(&f.to_matrix(2), tol), "site {j} not left-iso");
            } else if j > center {
                let m = f.to_matrix(1);
                let qqt = m.dot(&crate::tensor::conj_transpose(&m));
                let ok = qqt.indexed_iter().all(|((a, b), v)| {
                    let target = if a == b { c(1.0, 0.0) } else { c(0.0, 0.0) };
                    (v - target).norm() < tol
                });
                assert!(ok, "site {j} not right-iso");
            }
        }
    }

    #[test]
    fn identity_mpo_matches_dense() {
        let one = mpo_identity(1);
        assert_eq!(one.site(0).shape(), &[1, 2, 2, 1]);
        let three = mpo_identity(3);
        let dense = three.to_dense().unwrap();
        assert!(max_abs_diff(&dense, &identity_matrix(8)) < 1e-15);
    }

    #[test]
    fn identity_self_cost_is_zero() {
        for n in 1..=6 {
            let id = mpo_identity(n);
            assert!(hst_cost(&id, &id).unwrap() < 1e-12);
        }
    }

    #[test]
    fn canonicalize_preserves_operator() {
        let mut rng = rng_from_seed(101);
        let mpo = random_mpo(5, 4, &mut rng);
        let before = mpo.to_dense().unwrap();
        let canon = mpo.canonicalize(2).unwrap();
        let after = canon.to_dense().unwrap();
        let scale: f64 = before.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(max_abs_diff(&before, &after) / scale < 1e-11);
        check_canonical(&canon, 2, 1e-10);
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let mut rng = rng_from_seed(103);
        let mpo = random_mpo(4, 3, &mut rng).canonicalize(2).unwrap();
        let again = mpo.canonicalize(2).unwrap();
        for (a, b) in mpo.sites().iter().zip(again.sites().iter()) {
            let d = a
                .data()
                .iter()
                .zip(b.data().iter())
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max);
            assert!(d < 1e-12);
        }
        assert_abs_diff_eq!(mpo.log_norm(), again.log_norm(), epsilon = 1e-12);
    }

    #[test]
    fn canonicalize_identity_keeps_gauge() {
        let id = mpo_identity(3);
        let canon = id.canonicalize(1).unwrap();
        let dense = canon.to_dense().unwrap();
        assert!(max_abs_diff(&dense, &identity_matrix(8)) < 1e-12);
    }

    #[test]
    fn doubled_mps_round_trip() {
        let mut rng = rng_from_seed(107);
        let mpo = random_mpo(5, 4, &mut rng);
        let dense_before = mpo.to_dense().unwrap();
        let back = mpo.to_doubled_mps().into_mpo(2).unwrap();
        let dense_after = back.to_dense().unwrap();
        assert!(max_abs_diff(&dense_before, &dense_after) < 1e-13);
    }

    #[test]
    fn unitary_mpo_normalization_scale() {
        let mut rng = rng_from_seed(109);
        for n in [2, 4] {
            let u = random_unitary_mpo(n, 2 * n, &mut rng);
            let norm_ln = u.to_doubled_mps().norm_ln().unwrap();
            // ‖U‖_F = 2^{n/2} for an n-qubit unitary.
            assert_abs_diff_eq!(norm_ln, (n as f64 / 2.0) * 2f64.ln(), epsilon = 1e-10);
        }
        let id = mpo_identity(2);
        let norm_ln = id.to_doubled_mps().norm_ln().unwrap();
        assert_abs_diff_eq!(norm_ln, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn inner_product_self_is_one() {
        let mut rng = rng_from_seed(113);
        let a = random_mpo(4, 3, &mut rng).to_doubled_mps().normalize().unwrap();
        let ip = inner_product_normalized(&a, &a).unwrap();
        assert_abs_diff_eq!(ip.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inner_product_orthogonal_product_states() {
        // I and X as 1-site MPOs are orthogonal under the trace inner product.
        let eye = mpo_identity(1);
        let x = MpoOperator::new(
            vec![DenseTensor::from_shape_vec(
                &[1, 2, 2, 1],
                vec![c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
            )
            .unwrap()],
            0.0,
        )
        .unwrap();
        let a = eye.to_doubled_mps().normalize().unwrap();
        let b = x.to_doubled_mps().normalize().unwrap();
        let ip = inner_product_normalized(&a, &b).unwrap();
        assert!(ip.norm() < 1e-14);
    }

    #[test]
    fn inner_product_matches_dense_trace() {
        let mut rng = rng_from_seed(127);
        let a = random_mpo(6, 4, &mut rng);
        let b = random_mpo(6, 4, &mut rng);
        let an = a.to_doubled_mps().normalize().unwrap();
        let bn = b.to_doubled_mps().normalize().unwrap();
        let ip = inner_product_normalized(&an, &bn).unwrap();

        let da = a.to_dense().unwrap();
        let db = b.to_dense().unwrap();
        let tr: C64 = crate::tensor::conj_transpose(&da).dot(&db).diag().sum();
        let na: f64 = da.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let nb: f64 = db.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let want = tr / C64::new(na * nb, 0.0);
        assert!((ip - want).norm() < 1e-11);
    }

    #[test]
    fn inner_product_rejects_length_mismatch() {
        let a = mpo_identity(2).to_doubled_mps();
        let b = mpo_identity(3).to_doubled_mps();
        assert!(matches!(
            inner_product_normalized(&a, &b),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn hst_cost_traceless_difference() {
        // X ⊗ I ⊗ I is traceless, so the cost against the identity is 1.
        let n = 3;
        let x = Array2::from_shape_vec(
            (2, 2),
            vec![c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
        )
        .unwrap();
        let mut sites = vec![DenseTensor::from_matrix(&x).reshape(&[1, 2, 2, 1]).unwrap()];
        for _ in 1..n {
            sites.push(mpo_identity(1).site(0).clone());
        }
        let xii = MpoOperator::new(sites, 0.0).unwrap();
        let cost = hst_cost(&mpo_identity(n), &xii).unwrap();
        assert_abs_diff_eq!(cost, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hst_cost_phase_invariant() {
        let mut rng = rng_from_seed(131);
        let u = random_unitary_mpo(3, 4, &mut rng);
        let mut scaled = u.clone();
        let phase = c(0.0, 1.23).exp();
        let s0 = scaled.site(0).scale(phase);
        scaled.sites_mut()[0] = s0;
        assert!(hst_cost(&u, &scaled).unwrap() < 1e-12);
        // Global rescaling is also invisible to the cost.
        let mut rescaled = u.clone();
        rescaled.set_state(u.log_norm() + 3.7, u.ortho_center());
        assert!(hst_cost(&u, &rescaled).unwrap() < 1e-12);
    }

    #[test]
    fn hst_cost_is_symmetric() {
        let mut rng = rng_from_seed(137);
        let u = random_mpo(4, 3, &mut rng);
        let v = random_mpo(4, 3, &mut rng);
        let a = hst_cost(&u, &v).unwrap();
        let b = hst_cost(&v, &u).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn apply_identity_gate_is_gauge_only() {
        let mut rng = rng_from_seed(139);
        let mpo = random_mpo(4, 3, &mut rng);
        let before = mpo.to_dense().unwrap();
        let (after, dw) = apply_two_site_gate(&mpo, &identity_matrix(4), 1, 64, 0.0).unwrap();
        let after_d = after.to_dense().unwrap();
        let scale: f64 = before.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(max_abs_diff(&before, &after_d) / scale < 1e-12);
        assert!(dw < 1e-12);
    }

    #[test]
    fn apply_cz_to_identity() {
        let mut cz = identity_matrix(4);
        cz[[3, 3]] = c(-1.0, 0.0);
        let (out, _) = apply_two_site_gate(&mpo_identity(2), &cz, 0, 16, 0.0).unwrap();
        let dense = out.to_dense().unwrap();
        assert!(max_abs_diff(&dense, &cz) < 1e-12);
    }

    #[test]
    fn apply_gate_matches_dense_oracle() {
        let mut rng = rng_from_seed(149);
        let mpo = random_mpo(5, 4, &mut rng);
        let g = haar_unitary(4, &mut rng);
        let site = 2;
        let (out, _) = apply_two_site_gate(&mpo, &g, site, 4096, 0.0).unwrap();

        // Dense oracle: embed the gate at (site, site+1) and multiply.
        let dense_in = mpo.to_dense().unwrap();
        let gate_emb = crate::dense::embed_two_qubit(&g, site, site + 1, 5).unwrap();
        let want = gate_emb.dot(&dense_in);
        let got = out.to_dense().unwrap();
        let scale: f64 = want.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(max_abs_diff(&want, &got) / scale < 1e-11);
    }

    #[test]
    fn apply_gate_rejects_non_unitary() {
        let mut g = identity_matrix(4);
        g[[0, 0]] = c(2.0, 0.0);
        assert!(matches!(
            apply_two_site_gate(&mpo_identity(2), &g, 0, 4, 0.0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn swap_fragment_reproduces_swap() {
        let mut swap = Array2::zeros((4, 4));
        swap[[0, 0]] = c(1.0, 0.0);
        swap[[1, 2]] = c(1.0, 0.0);
        swap[[2, 1]] = c(1.0, 0.0);
        swap[[3, 3]] = c(1.0, 0.0);
        let frag = gate_to_two_site_mpo(&swap, 2).unwrap();
        assert_eq!(frag.bond_dim(0), 4);
        let dense = frag.to_dense().unwrap();
        assert!(max_abs_diff(&dense, &swap) < 1e-13);
    }

    #[test]
    fn cz_fragment_span_three() {
        let mut cz = identity_matrix(4);
        cz[[3, 3]] = c(-1.0, 0.0);
        let frag = gate_to_two_site_mpo(&cz, 3).unwrap();
        assert_eq!(frag.n_sites(), 3);
        let dense = frag.to_dense().unwrap();
        let want = crate::dense::embed_two_qubit(&cz, 0, 2, 3).unwrap();
        assert!(max_abs_diff(&dense, &want) < 1e-13);
    }

    #[test]
    fn identity_fragment_is_identity() {
        let frag = gate_to_two_site_mpo(&identity_matrix(4), 4).unwrap();
        let dense = frag.to_dense().unwrap();
        assert!(max_abs_diff(&dense, &identity_matrix(16)) < 1e-13);
    }

    #[test]
    fn zip_up_identity_fragment_is_noop() {
        let mut rng = rng_from_seed(151);
        let mpo = random_mpo(4, 3, &mut rng);
        let frag = gate_to_two_site_mpo(&identity_matrix(4), 2).unwrap();
        let before = mpo.to_dense().unwrap();
        let (out, dw) = zip_up_apply(&mpo, &frag, 1, 256, 0.0).unwrap();
        let after = out.to_dense().unwrap();
        let scale: f64 = before.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(max_abs_diff(&before, &after) / scale < 1e-12);
        assert!(dw < 1e-12);
    }

    #[test]
    fn zip_up_nonlocal_cz() {
        let mut cz = identity_matrix(4);
        cz[[3, 3]] = c(-1.0, 0.0);
        let frag = gate_to_two_site_mpo(&cz, 4).unwrap();
        let (out, _) = zip_up_apply(&mpo_identity(4), &frag, 0, 256, 0.0).unwrap();
        let dense = out.to_dense().unwrap();
        let want = crate::dense::embed_two_qubit(&cz, 0, 3, 4).unwrap();
        assert!(max_abs_diff(&dense, &want) < 1e-12);
    }

    #[test]
    fn zip_up_random_nonlocal_gate() {
        let mut rng = rng_from_seed(157);
        let mpo = random_mpo(6, 4, &mut rng);
        let g = haar_unitary(4, &mut rng);
        let frag = gate_to_two_site_mpo(&g, 4).unwrap();
        let (out, _) = zip_up_apply(&mpo, &frag, 1, 4096, 0.0).unwrap();
        let dense = out.to_dense().unwrap();
        let want = crate::dense::embed_two_qubit(&g, 1, 4, 6)
            .unwrap()
            .dot(&mpo.to_dense().unwrap());
        let scale: f64 = want.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(max_abs_diff(&want, &dense) / scale < 1e-10);
    }

    #[test]
    fn compress_to_current_bond_is_exact() {
        let mut rng = rng_from_seed(163);
        let mpo = random_mpo(5, 4, &mut rng);
        let chi = mpo.max_bond_dim();
        let (out, fid) = variational_compress(&mpo, chi, 1e-12, 50).unwrap();
        assert!((fid - 1.0).abs() < 1e-12);
        let a = mpo.to_dense().unwrap();
        let b = out.to_dense().unwrap();
        let scale: f64 = a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(max_abs_diff(&a, &b) / scale < 1e-10);
    }

    #[test]
    fn compress_padded_bonds_recovers_exact_rank() {
        let mut rng = rng_from_seed(167);
        let base = random_mpo(5, 2, &mut rng);
        // Zero-pad every interior bond by 2: same operator, inflated bonds.
        let mut padded_sites = Vec::new();
        let n = base.n_sites();
        for (j, s) in base.sites().iter().enumerate() {
            let sh = s.shape().to_vec();
            let new_l = if j == 0 { 1 } else { sh[0] + 2 };
            let new_r = if j + 1 == n { 1 } else { sh[3] + 2 };
            let mut arr = DenseTensor::zeros(&[new_l, 2, 2, new_r]).into_array();
            for l in 0..sh[0] {
                for o in 0..2 {
                    for i in 0..2 {
                        for rr in 0..sh[3] {
                            arr[IxDyn(&[l, o, i, rr])] = s.data()[IxDyn(&[l, o, i, rr])];
                        }
                    }
                }
            }
            padded_sites.push(DenseTensor::from_array(arr).unwrap());
        }
        let padded = MpoOperator::new(padded_sites, base.log_norm()).unwrap();
        let (out, fid) = variational_compress(&padded, 2, 1e-12, 50).unwrap();
        assert!(out.max_bond_dim() <= 2);
        assert!((fid - 1.0).abs() < 1e-10);
        assert!(hst_cost(&base, &out).unwrap() < 1e-10);
    }

    #[test]
    fn compress_beats_or_matches_svd_only_baseline() {
        let mut rng = rng_from_seed(173);
        // A generically entangled operator: random unitary MPO with extra
        // random (non-unitary) perturbation to make truncation lossy.
        let u = random_unitary_mpo(6, 14, &mut rng);
        let chi_target = u.max_bond_dim() / 2;
        let chi_target = chi_target.max(2);

        // SVD-only baseline: plain truncation sweep, fidelity measured
        // against the original.
        let psi = u.to_doubled_mps().normalize().unwrap();
        let mut cores = psi.sites.clone();
        let mut log = 0.0;
        canonicalize_cores(&mut cores, &mut log, 0).unwrap();
        for j in 0..cores.len() - 1 {
            let (l, p, _r) = core_dims(&cores[j]);
            let mat = cores[j].to_matrix(2);
            let svd = truncated_svd(&mat, chi_target, 0.0).unwrap();
            let k = svd.kept();
            cores[j] = DenseTensor::from_matrix(&svd.left_isometry)
                .reshape(&[l, p, k])
                .unwrap();
            let carry = DenseTensor::from_matrix(&svd.weighted_right());
            cores[j + 1] = contract(&carry, &cores[j + 1], &[(1, 0)]).unwrap();
        }
        let mut ignored = 0.0;
        let last = cores.len() - 1;
        normalize_center(&mut cores, &mut ignored, last);
        let svd_fid = overlap_sq(&cores, &psi.sites).unwrap();

        let (_, var_fid) = variational_compress(&u, chi_target, 1e-12, 50).unwrap();
        assert!(
            var_fid >= svd_fid - 1e-12,
            "variational {var_fid} vs svd {svd_fid}"
        );
    }

    #[test]
    fn schmidt_spectrum_identity_is_trivial() {
        let id = mpo_identity(4);
        for bond in 0..3 {
            let spec = schmidt_spectrum(&id, bond).unwrap();
            assert_abs_diff_eq!(spec[0], 1.0, epsilon = 1e-12);
            for s in &spec[1..] {
                assert!(*s < 1e-12);
            }
        }
    }

    #[test]
    fn schmidt_spectrum_swap_is_flat() {
        let mut swap = Array2::zeros((4, 4));
        swap[[0, 0]] = c(1.0, 0.0);
        swap[[1, 2]] = c(1.0, 0.0);
        swap[[2, 1]] = c(1.0, 0.0);
        swap[[3, 3]] = c(1.0, 0.0);
        let (mpo, _) = apply_two_site_gate(&mpo_identity(2), &swap, 0, 16, 0.0).unwrap();
        let spec = schmidt_spectrum(&mpo, 0).unwrap();
        assert_eq!(spec.len(), 4);
        for s in &spec {
            assert_abs_diff_eq!(*s, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn schmidt_spectrum_matches_dense_oracle() {
        let mut rng = rng_from_seed(179);
        let u = random_unitary_mpo(6, 10, &mut rng);
        let bond = 2;
        let spec = schmidt_spectrum(&u, bond).unwrap();

        // Dense operator-Schmidt decomposition across the same cut.
        let dense = u.to_dense().unwrap();
        let cut = bond + 1;
        let (dl, dr) = (1usize << cut, 1usize << (6 - cut));
        let mut m = Array2::zeros((dl * dl, dr * dr));
        for xl in 0..dl {
            for xr in 0..dr {
                for yl in 0..dl {
                    for yr in 0..dr {
                        m[[xl * dl + yl, xr * dr + yr]] = dense[[xl * dr + xr, yl * dr + yr]];
                    }
                }
            }
        }
        let svd = truncated_svd(&m, dl * dl, 0.0).unwrap();
        let norm: f64 = svd
            .singular_values
            .iter()
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt();
        for (k, s) in spec.iter().enumerate().take(8) {
            let want = svd.singular_values.get(k).copied().unwrap_or(0.0) / norm;
            assert_abs_diff_eq!(*s, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let mut rng = rng_from_seed(181);
        let mpo = random_mpo(4, 3, &mut rng).canonicalize(1).unwrap();
        let mut bytes = Vec::new();
        mpo.save(&mut bytes).unwrap();
        let loaded = MpoOperator::load(&mut bytes.as_slice()).unwrap();
        let mut bytes2 = Vec::new();
        loaded.save(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
        assert_eq!(mpo.log_norm().to_bits(), loaded.log_norm().to_bits());
        assert_eq!(mpo.ortho_center(), loaded.ortho_center());
    }

    #[test]
    fn load_rejects_garbage() {
        let garbage = b"not an mpo at all";
        assert!(MpoOperator::load(&mut garbage.as_slice()).is_err());
    }
}
