//! Dense complex tensor kernel: reshape, permute, contract, SVD, QR and
//! polar operations that the MPO layers build on.
//!
//! Entries are stored in row-major order over the ordered legs; every
//! serialization format in this crate depends on that layout. All arithmetic
//! is double-precision complex.

use ndarray::prelude::*;
use ndarray::Order;
use ndarray_linalg::{JobSvd, QR, SVDDC, SVD};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Dense tensor with an arbitrary number of legs.
///
/// Data is always kept in standard (row-major) layout so that fusing
/// neighboring legs is a pure reshape.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    data: ArrayD<C64>,
}

impl DenseTensor {
    pub fn from_array(data: ArrayD<C64>) -> Result<Self> {
        let data = to_standard(data);
        let t = Self { data };
        t.check_finite()?;
        Ok(t)
    }

    pub fn from_shape_vec(shape: &[usize], data: Vec<C64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} entries, got {}",
                shape,
                n,
                data.len()
            )));
        }
        let arr = ArrayD::from_shape_vec(IxDyn(shape), data)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::from_array(arr)
    }

    pub fn from_matrix(m: &Array2<C64>) -> Self {
        Self {
            data: m.to_owned().into_dyn(),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            data: ArrayD::zeros(IxDyn(shape)),
        }
    }

    pub fn scalar(v: C64) -> Self {
        Self {
            data: ArrayD::from_elem(IxDyn(&[]), v),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn rank(&self) -> usize {
        self.data.ndim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &ArrayD<C64> {
        &self.data
    }

    pub fn into_array(self) -> ArrayD<C64> {
        self.data
    }

    /// Reorder legs. `axes[k]` names which old leg becomes new leg `k`.
    pub fn permute(&self, axes: &[usize]) -> Self {
        debug_assert_eq!(axes.len(), self.rank());
        let permuted = self.data.view().permuted_axes(axes.to_vec());
        Self {
            data: to_standard(permuted.to_owned()),
        }
    }

    /// Reinterpret the legs; the total entry count must be unchanged.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let data = self
            .data
            .to_shape((IxDyn(shape), Order::RowMajor))
            .map_err(|e| Error::Dimension(e.to_string()))?
            .to_owned();
        Ok(Self { data })
    }

    /// Flatten into a matrix splitting legs `[0, split)` | `[split, rank)`.
    pub fn to_matrix(&self, split: usize) -> Array2<C64> {
        let rows: usize = self.shape()[..split].iter().product();
        let cols: usize = self.shape()[split..].iter().product();
        self.data
            .to_shape(((rows, cols), Order::RowMajor))
            .expect("standard layout reshape")
            .to_owned()
    }

    pub fn conj(&self) -> Self {
        Self {
            data: self.data.mapv(|v| v.conj()),
        }
    }

    pub fn scale(&self, a: C64) -> Self {
        Self {
            data: self.data.mapv(|v| v * a),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn as_scalar(&self) -> Result<C64> {
        if self.len() == 1 {
            Ok(*self.data.iter().next().unwrap())
        } else {
            Err(Error::Dimension(format!(
                "tensor of shape {:?} is not a scalar",
                self.shape()
            )))
        }
    }

    fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numerical("tensor holds non-finite entries".into()))
        }
    }
}

fn to_standard(a: ArrayD<C64>) -> ArrayD<C64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Pairwise tensor contraction.
///
/// `pairs` lists `(leg_of_a, leg_of_b)` to sum over. The result carries the
/// unpaired legs of `a` followed by the unpaired legs of `b`, in order.
pub fn contract(a: &DenseTensor, b: &DenseTensor, pairs: &[(usize, usize)]) -> Result<DenseTensor> {
    let mut used_a = vec![false; a.rank()];
    let mut used_b = vec![false; b.rank()];
    for &(ia, ib) in pairs {
        if ia >= a.rank() || ib >= b.rank() {
            return Err(Error::Dimension(format!(
                "contraction pair ({ia},{ib}) out of range for ranks {}/{}",
                a.rank(),
                b.rank()
            )));
        }
        if used_a[ia] || used_b[ib] {
            return Err(Error::Dimension(format!(
                "leg repeated in contraction pairs: ({ia},{ib})"
            )));
        }
        used_a[ia] = true;
        used_b[ib] = true;
        if a.shape()[ia] != b.shape()[ib] {
            return Err(Error::Dimension(format!(
                "paired legs differ: a[{ia}]={} vs b[{ib}]={}",
                a.shape()[ia],
                b.shape()[ib]
            )));
        }
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|&k| !used_a[k]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&k| !used_b[k]).collect();

    let mut perm_a = free_a.clone();
    perm_a.extend(pairs.iter().map(|p| p.0));
    let mut perm_b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    perm_b.extend(free_b.iter().copied());

    let am = a.permute(&perm_a).to_matrix(free_a.len());
    let bm = b.permute(&perm_b).to_matrix(pairs.len());
    let cm = am.dot(&bm);

    let mut out_shape: Vec<usize> = free_a.iter().map(|&k| a.shape()[k]).collect();
    out_shape.extend(free_b.iter().map(|&k| b.shape()[k]));
    let out = DenseTensor::from_matrix(&cm).reshape(&out_shape)?;
    out.check_finite()?;
    Ok(out)
}

/// Sum the diagonal of two equal-extent legs (a partial trace).
pub fn trace_pair(t: &DenseTensor, ax1: usize, ax2: usize) -> Result<DenseTensor> {
    if ax1 == ax2 || ax1 >= t.rank() || ax2 >= t.rank() {
        return Err(Error::Dimension(format!(
            "invalid trace axes ({ax1},{ax2}) for rank {}",
            t.rank()
        )));
    }
    let e = t.shape()[ax1];
    if e != t.shape()[ax2] {
        return Err(Error::Dimension(format!(
            "trace legs differ: {} vs {}",
            e,
            t.shape()[ax2]
        )));
    }
    let mut perm: Vec<usize> = (0..t.rank()).filter(|&k| k != ax1 && k != ax2).collect();
    let kept_shape: Vec<usize> = perm.iter().map(|&k| t.shape()[k]).collect();
    perm.push(ax1);
    perm.push(ax2);
    let moved = t.permute(&perm);
    let rest: usize = kept_shape.iter().product();
    let m = moved.to_matrix(moved.rank().saturating_sub(2));
    let mut out = vec![C64::new(0.0, 0.0); rest];
    for (row, slot) in m.rows().into_iter().zip(out.iter_mut()) {
        for i in 0..e {
            *slot += row[i * e + i];
        }
    }
    DenseTensor::from_shape_vec(&kept_shape, out)
}

/// Result of a truncated singular value decomposition `m ≈ U · diag(s) · V†`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// `U`, shape (rows × kept); `U† U = 1`.
    pub left_isometry: Array2<C64>,
    /// Kept singular values, descending, all ≥ 0.
    pub singular_values: Array1<f64>,
    /// `V`, shape (cols × kept); `V† V = 1`. Columns are right singular vectors.
    pub right_isometry: Array2<C64>,
    /// Σ(dropped s²) / Σ(all s²).
    pub discarded_weight: f64,
}

impl SvdResult {
    pub fn kept(&self) -> usize {
        self.singular_values.len()
    }

    /// `diag(s) · V†`, the non-isometric factor, shape (kept × cols).
    pub fn weighted_right(&self) -> Array2<C64> {
        let vh = conj_transpose(&self.right_isometry);
        let mut out = vh;
        for (k, mut row) in out.rows_mut().into_iter().enumerate() {
            let s = C64::new(self.singular_values[k], 0.0);
            row.mapv_inplace(|v| v * s);
        }
        out
    }

    /// `U · diag(s)`, shape (rows × kept).
    pub fn weighted_left(&self) -> Array2<C64> {
        let mut out = self.left_isometry.clone();
        for (k, mut col) in out.columns_mut().into_iter().enumerate() {
            let s = C64::new(self.singular_values[k], 0.0);
            col.mapv_inplace(|v| v * s);
        }
        out
    }

    pub fn reconstruct(&self) -> Array2<C64> {
        self.weighted_left().dot(&conj_transpose(&self.right_isometry))
    }
}

pub fn conj_transpose(m: &Array2<C64>) -> Array2<C64> {
    let mut out = m.t().to_owned();
    out.mapv_inplace(|v| v.conj());
    out
}

fn full_svd(m: &Array2<C64>) -> Result<(Array2<C64>, Array1<f64>, Array2<C64>)> {
    // Divide-and-conquer first; QR-iteration fallback for stubborn spectra.
    let dc = m.svddc(JobSvd::Some);
    let (u, s, vt) = match dc {
        Ok((Some(u), s, Some(vt))) => (u, s, vt),
        _ => match m.svd(true, true) {
            Ok((Some(u), s, Some(vt))) => (u, s, vt),
            _ => {
                return Err(Error::Numerical(format!(
                    "SVD failed on {}x{} matrix",
                    m.nrows(),
                    m.ncols()
                )))
            }
        },
    };
    Ok((u, s, vt))
}

/// Truncated SVD keeping at most `chi_max` singular values and dropping a
/// trailing set whose cumulative squared relative weight stays within
/// `weight_tol`.
pub fn truncated_svd(m: &Array2<C64>, chi_max: usize, weight_tol: f64) -> Result<SvdResult> {
    if chi_max == 0 {
        return Err(Error::Dimension("chi_max must be at least 1".into()));
    }
    if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numerical("SVD input holds non-finite entries".into()));
    }
    let (u, s, vt) = full_svd(m)?;
    let k_full = s.len();
    let total: f64 = s.iter().map(|x| x * x).sum();

    let mut keep = k_full.min(chi_max);
    if total > 0.0 {
        let mut dropped: f64 = s.iter().skip(keep).map(|x| x * x).sum();
        while keep > 1 {
            let next = s[keep - 1] * s[keep - 1];
            if (dropped + next) / total <= weight_tol {
                dropped += next;
                keep -= 1;
            } else {
                break;
            }
        }
    }
    let keep = keep.max(1).min(k_full);

    let discarded: f64 = if total > 0.0 {
        s.iter().skip(keep).map(|x| x * x).sum::<f64>() / total
    } else {
        0.0
    };

    let left = u.slice(s![.., ..keep]).to_owned();
    let sv = Array1::from_iter(s.iter().take(keep).copied());
    let right = conj_transpose(&vt.slice(s![..keep, ..]).to_owned());
    Ok(SvdResult {
        left_isometry: left,
        singular_values: sv,
        right_isometry: right,
        discarded_weight: discarded,
    })
}

/// Unitary `g* = Y·X†` from the SVD `m = X·S·Y†`.
///
/// Among all unitaries `g`, `|Tr(m·g)|` is maximized by `g*`, where it equals
/// the sum of singular values of `m`.
pub fn polar_unitary(m: &Array2<C64>) -> Result<Array2<C64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "polar_unitary needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numerical("polar input holds non-finite entries".into()));
    }
    let (u, _s, vt) = full_svd(m)?;
    Ok(conj_transpose(&u.dot(&vt)))
}

/// Sum of singular values of `m` (the maximal `|Tr(m·g)|` over unitaries).
pub fn nuclear_norm(m: &Array2<C64>) -> Result<f64> {
    let dc = m.svddc(JobSvd::None);
    let s = match dc {
        Ok((_, s, _)) => s,
        _ => m
            .svd(false, false)
            .map_err(|_| {
                Error::Numerical(format!(
                    "SVD failed on {}x{} matrix",
                    m.nrows(),
                    m.ncols()
                ))
            })?
            .1,
    };
    Ok(s.sum())
}

/// Thin QR; returns (Q, R) with Q of shape (rows × k), k = min(rows, cols).
pub(crate) fn qr_thin(m: &Array2<C64>) -> Result<(Array2<C64>, Array2<C64>)> {
    m.qr()
        .map_err(|e| Error::Numerical(format!("QR failed: {e}")))
}

/// Thin LQ; returns (L, Q) with Q of shape (k × cols), k = min(rows, cols).
pub(crate) fn lq_thin(m: &Array2<C64>) -> Result<(Array2<C64>, Array2<C64>)> {
    let (q, r) = qr_thin(&conj_transpose(m))?;
    Ok((conj_transpose(&r), conj_transpose(&q)))
}

pub fn identity_matrix(n: usize) -> Array2<C64> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// `‖g†g − 1‖_max`, the unitarity defect used by gate validators.
pub fn unitarity_defect(g: &Array2<C64>) -> f64 {
    let gtg = conj_transpose(g).dot(g);
    let mut worst = 0.0_f64;
    for ((i, j), v) in gtg.indexed_iter() {
        let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
        worst = worst.max((v - target).norm());
    }
    worst
}
