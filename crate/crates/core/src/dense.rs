//! Brute-force dense-matrix path for small systems.
//!
//! Used by the verification command and as the reference side of oracle
//! checks: gate embedding, matrix exponentials via scaling-and-squaring, and
//! the dense Hilbert–Schmidt cost. Site 0 carries the most significant bit,
//! matching the MPO leg ordering and `kron` chains.

use ndarray::prelude::*;
use ndarray_linalg::{FactorizeInto, Solve};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Hard cap for dense reconstruction (2^10 × 2^10 matrices).
pub const MAX_DENSE_QUBITS: usize = 10;

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for ((i, j), &av) in a.indexed_iter() {
        if av == C64::new(0.0, 0.0) {
            continue;
        }
        for ((k, l), &bv) in b.indexed_iter() {
            out[[i * br + k, j * bc + l]] = av * bv;
        }
    }
    out
}

fn check_width(n: usize) -> Result<()> {
    if n > MAX_DENSE_QUBITS {
        Err(Error::Usage(format!(
            "dense path refuses {n} qubits (limit {MAX_DENSE_QUBITS})"
        )))
    } else {
        Ok(())
    }
}

/// Embed a one-qubit operator at position `q` of an `n`-qubit register.
pub fn embed_one_qubit(u: &Array2<C64>, q: usize, n: usize) -> Result<Array2<C64>> {
    check_width(n)?;
    if q >= n {
        return Err(Error::Dimension(format!("qubit {q} out of range for n={n}")));
    }
    let dim = 1usize << n;
    let mut out = Array2::zeros((dim, dim));
    let shift = n - 1 - q;
    for x in 0..dim {
        let b = (x >> shift) & 1;
        for a in 0..2usize {
            let v = u[[a, b]];
            if v != C64::new(0.0, 0.0) {
                let y = (x & !(1 << shift)) | (a << shift);
                out[[y, x]] += v;
            }
        }
    }
    Ok(out)
}

/// Embed a two-qubit operator on (`q1`, `q2`) of an `n`-qubit register.
/// The qubits need not be adjacent; `q1` indexes the more significant slot
/// of the 4×4 matrix.
pub fn embed_two_qubit(u: &Array2<C64>, q1: usize, q2: usize, n: usize) -> Result<Array2<C64>> {
    check_width(n)?;
    if q1 >= n || q2 >= n || q1 == q2 {
        return Err(Error::Dimension(format!(
            "invalid qubit pair ({q1},{q2}) for n={n}"
        )));
    }
    let dim = 1usize << n;
    let (s1, s2) = (n - 1 - q1, n - 1 - q2);
    let mut out = Array2::zeros((dim, dim));
    for x in 0..dim {
        let b1 = (x >> s1) & 1;
        let b2 = (x >> s2) & 1;
        let col = b1 * 2 + b2;
        for a1 in 0..2usize {
            for a2 in 0..2usize {
                let v = u[[a1 * 2 + a2, col]];
                if v != C64::new(0.0, 0.0) {
                    let y = (x & !(1 << s1) & !(1 << s2)) | (a1 << s1) | (a2 << s2);
                    out[[y, x]] += v;
                }
            }
        }
    }
    Ok(out)
}

fn one_norm(a: &Array2<C64>) -> f64 {
    let mut best = 0.0_f64;
    for col in a.columns() {
        let s: f64 = col.iter().map(|v| v.norm()).sum();
        best = best.max(s);
    }
    best
}

/// Matrix exponential by Padé-13 scaling-and-squaring (Higham 2005).
pub fn expm(a: &Array2<C64>) -> Result<Array2<C64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension("expm needs a square matrix".into()));
    }
    let n = a.nrows();
    let theta13 = 5.371920351148152_f64;
    let norm = one_norm(a);
    let s = if norm > theta13 {
        (norm / theta13).log2().ceil() as i32
    } else {
        0
    };
    let scale = C64::new(0.5f64.powi(s), 0.0);
    let a = a.mapv(|v| v * scale);

    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];

    let eye = Array2::<C64>::eye(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let u_inner = &a6.mapv(|v| v * C64::new(B[13], 0.0))
        + &a4.mapv(|v| v * C64::new(B[11], 0.0))
        + &a2.mapv(|v| v * C64::new(B[9], 0.0));
    let u_poly = a6.dot(&u_inner)
        + &a6.mapv(|v| v * C64::new(B[7], 0.0))
        + &a4.mapv(|v| v * C64::new(B[5], 0.0))
        + &a2.mapv(|v| v * C64::new(B[3], 0.0))
        + &eye.mapv(|v| v * C64::new(B[1], 0.0));
    let u = a.dot(&u_poly);

    let v_inner = &a6.mapv(|v| v * C64::new(B[12], 0.0))
        + &a4.mapv(|v| v * C64::new(B[10], 0.0))
        + &a2.mapv(|v| v * C64::new(B[8], 0.0));
    let v = a6.dot(&v_inner)
        + &a6.mapv(|v| v * C64::new(B[6], 0.0))
        + &a4.mapv(|v| v * C64::new(B[4], 0.0))
        + &a2.mapv(|v| v * C64::new(B[2], 0.0))
        + &eye.mapv(|v| v * C64::new(B[0], 0.0));

    let p = &v + &u;
    let q = &v - &u;
    // Solve Q·X = P with a single factorization.
    let lu = q
        .factorize_into()
        .map_err(|e| Error::Numerical(format!("expm factorization failed: {e}")))?;
    let mut x = Array2::zeros((n, n));
    for (j, col) in p.columns().into_iter().enumerate() {
        let sol = lu
            .solve(&col.to_owned())
            .map_err(|e| Error::Numerical(format!("expm solve failed: {e}")))?;
        x.column_mut(j).assign(&sol);
    }
    for _ in 0..s {
        x = x.dot(&x);
    }
    Ok(x)
}

/// Dense propagator `e^{−iHt}` of a Hermitian matrix.
pub fn propagator(h: &Array2<C64>, t: f64) -> Result<Array2<C64>> {
    let a = h.mapv(|v| v * C64::new(0.0, -t));
    expm(&a)
}

/// Dense Hilbert–Schmidt test cost `1 − |Tr(U†V)|² / dim²`.
pub fn dense_hst_cost(u: &Array2<C64>, v: &Array2<C64>) -> Result<f64> {
    if u.dim() != v.dim() || u.nrows() != u.ncols() {
        return Err(Error::Dimension(
            "operators must be square and equal-sized".into(),
        ));
    }
    let dim = u.nrows() as f64;
    let mut tr = C64::new(0.0, 0.0);
    for i in 0..u.nrows() {
        for k in 0..u.nrows() {
            tr += u[[k, i]].conj() * v[[k, i]];
        }
    }
    let overlap = (tr.norm() / dim).min(1.0);
    Ok((1.0 - overlap * overlap).max(0.0))
}
