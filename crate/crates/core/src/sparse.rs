//! Overcomplete dictionaries, orthogonal matching pursuit and the PRD
//! fidelity metric.
//!
//! PRD is always a fraction here (`0.09`, not `9`). Percent conversion
//! happens at the CLI boundary only.

use serde::{Deserialize, Serialize};

use crate::beat::{dot, norm, BeatClass};
use crate::error::{Error, Result};

/// Column norms must be within this distance of 1.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// A pursuit iteration that shrinks the relative residual by less than this
/// counts as no progress.
const STALL_TOL: f64 = 1e-12;

/// Pivot below which a new atom is treated as linearly dependent on the support.
const PIVOT_TOL: f64 = 1e-10;
/// Below this relative residual the norm is recomputed from the signal.
const EXPLICIT_RESIDUAL_BELOW: f64 = 1e-3;

/// Percentage root-mean-square difference `||x - xhat|| / ||x||`, as a fraction.
pub fn prd(x: &[f64], xhat: &[f64]) -> Result<f64> {
    if x.len() != xhat.len() {
        return Err(Error::usage(format!(
            "prd: length mismatch ({} vs {})",
            x.len(),
            xhat.len()
        )));
    }
    let xn = norm(x);
    if xn == 0.0 {
        return Err(Error::domain("prd: reference signal has zero norm"));
    }
    let err: f64 = x
        .iter()
        .zip(xhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(err / xn)
}

/// Reconstruction fidelity bound, stored as a fraction in `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityTarget(f64);

impl FidelityTarget {
    pub fn new(prd_limit: f64) -> Result<Self> {
        if !(prd_limit > 0.0 && prd_limit < 1.0) {
            return Err(Error::usage(format!(
                "PRD limit must lie in (0, 1), got {prd_limit}"
            )));
        }
        Ok(FidelityTarget(prd_limit))
    }

    pub fn prd_limit(self) -> f64 {
        self.0
    }
}

/// An `m x n` matrix of unit-norm atoms, stored column-major, together with
/// its Gram matrix.
#[derive(Debug, Clone)]
pub struct Dictionary {
    rows: usize,
    cols: usize,
    atoms: Vec<f64>,
    gram: Vec<f64>,
    class_tag: Option<BeatClass>,
}

impl PartialEq for Dictionary {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.class_tag == other.class_tag
            && self.atoms == other.atoms
    }
}

impl Dictionary {
    /// Builds a dictionary from column-major data, checking that every
    /// column has unit norm and that the dictionary is overcomplete.
    pub fn from_columns(
        rows: usize,
        atoms: Vec<f64>,
        class_tag: Option<BeatClass>,
    ) -> Result<Self> {
        if rows == 0 || atoms.is_empty() || atoms.len() % rows != 0 {
            return Err(Error::usage(format!(
                "dictionary data of length {} does not tile {} rows",
                atoms.len(),
                rows
            )));
        }
        let cols = atoms.len() / rows;
        if cols < rows {
            return Err(Error::usage(format!(
                "dictionary must be overcomplete (n >= m), got {rows}x{cols}"
            )));
        }
        for (j, col) in atoms.chunks_exact(rows).enumerate() {
            let n = norm(col);
            if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::domain(format!(
                    "atom {j} has norm {n}, expected 1"
                )));
            }
        }
        let gram = gram_matrix(rows, cols, &atoms);
        Ok(Dictionary {
            rows,
            cols,
            atoms,
            gram,
            class_tag,
        })
    }

    /// Like [`Dictionary::from_columns`] but rescales each column to unit norm first.
    pub fn normalized(rows: usize, mut atoms: Vec<f64>, class_tag: Option<BeatClass>) -> Result<Self> {
        if rows == 0 || atoms.len() % rows != 0 {
            return Err(Error::usage("dictionary data does not tile the row count"));
        }
        for (j, col) in atoms.chunks_exact_mut(rows).enumerate() {
            let n = norm(col);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::domain(format!("atom {j} cannot be normalized")));
            }
            col.iter_mut().for_each(|v| *v /= n);
        }
        Dictionary::from_columns(rows, atoms, class_tag)
    }

    /// Signal dimension `m`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of atoms `n`.
    pub fn n_atoms(&self) -> usize {
        self.cols
    }

    pub fn class_tag(&self) -> Option<BeatClass> {
        self.class_tag
    }

    pub fn with_class_tag(mut self, tag: Option<BeatClass>) -> Self {
        self.class_tag = tag;
        self
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j * self.rows..(j + 1) * self.rows]
    }

    /// Column-major atom data.
    pub fn as_slice(&self) -> &[f64] {
        &self.atoms
    }

    pub fn gram(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.cols + j]
    }

    pub fn gram_row(&self, i: usize) -> &[f64] {
        &self.gram[i * self.cols..(i + 1) * self.cols]
    }

    /// `D^T x`.
    pub fn correlate(&self, x: &[f64]) -> Vec<f64> {
        self.atoms.chunks_exact(self.rows).map(|a| dot(a, x)).collect()
    }

    /// Element `(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.atoms[col * self.rows + row]
    }
}

fn gram_matrix(rows: usize, cols: usize, atoms: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; cols * cols];
    for i in 0..cols {
        let ai = &atoms[i * rows..(i + 1) * rows];
        for j in i..cols {
            let v = dot(ai, &atoms[j * rows..(j + 1) * rows]);
            g[i * cols + j] = v;
            g[j * cols + i] = v;
        }
    }
    g
}

/// Sparse representation of one signal. `support` keeps selection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    pub support: Vec<usize>,
    pub values: Vec<f64>,
    /// Relative residual `||x - D a|| / ||x||` of this code.
    pub achieved_prd: f64,
    /// False when pursuit stopped (atom budget or no progress) above the target.
    pub target_met: bool,
}

impl SparseCode {
    pub fn empty() -> Self {
        SparseCode {
            support: Vec::new(),
            values: Vec::new(),
            achieved_prd: 1.0,
            target_met: false,
        }
    }

    /// `||a||_0`.
    pub fn sparsity(&self) -> usize {
        self.support.len()
    }

    /// `(atom, value)` pairs in selection order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.values.iter().copied())
    }
}

/// `sum values[i] * atom(support[i])`. An empty code yields the zero vector.
pub fn reconstruct(dict: &Dictionary, code: &SparseCode) -> Result<Vec<f64>> {
    reconstruct_entries(dict, code.entries())
}

pub(crate) fn reconstruct_entries(
    dict: &Dictionary,
    entries: impl IntoIterator<Item = (usize, f64)>,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dict.rows()];
    for (j, v) in entries {
        if j >= dict.n_atoms() {
            return Err(Error::usage(format!(
                "atom index {j} out of range for {} atoms",
                dict.n_atoms()
            )));
        }
        for (o, a) in out.iter_mut().zip(dict.atom(j)) {
            *o += v * a;
        }
    }
    Ok(out)
}

/// OMP until `||r|| / ||x|| <= target` or `max_atoms` atoms are selected.
pub fn omp_solve(
    dict: &Dictionary,
    x: &[f64],
    target: FidelityTarget,
    max_atoms: usize,
) -> Result<SparseCode> {
    pursue(dict, x, Some(target.prd_limit()), max_atoms)
}

/// OMP with a fixed atom budget and no fidelity bound (the dictionary
/// learning coding stage). `target_met` reports whether all `t0` atoms, or an
/// exact representation, were reached.
pub fn omp_fixed_sparsity(dict: &Dictionary, x: &[f64], t0: usize) -> Result<SparseCode> {
    let mut code = pursue(dict, x, None, t0)?;
    code.target_met = code.support.len() == t0 || code.achieved_prd <= STALL_TOL;
    Ok(code)
}

fn pursue(
    dict: &Dictionary,
    x: &[f64],
    prd_limit: Option<f64>,
    max_atoms: usize,
) -> Result<SparseCode> {
    let m = dict.rows();
    let n = dict.n_atoms();
    if x.len() != m {
        return Err(Error::usage(format!(
            "signal length {} does not match dictionary rows {m}",
            x.len()
        )));
    }
    if max_atoms > m {
        return Err(Error::usage(format!(
            "max_atoms {max_atoms} exceeds signal dimension {m}"
        )));
    }
    let xnorm = norm(x);
    if xnorm == 0.0 || !xnorm.is_finite() {
        return Err(Error::domain("cannot code a zero-norm signal"));
    }
    let limit = prd_limit.unwrap_or(0.0);

    let alpha0 = dict.correlate(x);
    let mut corr = alpha0.clone();
    let mut in_support = vec![false; n];
    let mut support: Vec<usize> = Vec::new();
    // Packed lower-triangular Cholesky factor of G_II, row by row.
    let mut chol: Vec<f64> = Vec::new();
    let mut coeffs: Vec<f64> = Vec::new();
    let mut y: Vec<f64> = Vec::new();
    let mut y_sq = 0.0;
    let mut rel_residual = 1.0;

    while rel_residual > limit && support.len() < max_atoms {
        let mut best = usize::MAX;
        let mut best_abs = 0.0;
        for (j, c) in corr.iter().enumerate() {
            if !in_support[j] && c.abs() > best_abs {
                best_abs = c.abs();
                best = j;
            }
        }
        if best == usize::MAX || best_abs <= STALL_TOL * xnorm {
            break;
        }

        let k = support.len();
        let g_col: Vec<f64> = support.iter().map(|&i| dict.gram(i, best)).collect();
        let w = forward_substitute(&chol, &g_col);
        let pivot = dict.gram(best, best) - dot(&w, &w);
        if pivot <= PIVOT_TOL {
            break;
        }
        let row_len = chol.len();
        chol.extend_from_slice(&w);
        chol.push(pivot.sqrt());
        support.push(best);

        // y = L^-1 alpha_S grows by one entry and ||r||^2 = ||x||^2 - ||y||^2.
        let y_new = (alpha0[best] - dot(&w, &y)) / pivot.sqrt();
        y.push(y_new);
        y_sq += y_new * y_new;
        let trial = back_substitute(&chol, &y);
        let mut trial_rel = (1.0 - y_sq / (xnorm * xnorm)).max(0.0).sqrt();
        if trial_rel < EXPLICIT_RESIDUAL_BELOW {
            trial_rel = norm(&residual_of(dict, x, &support, &trial)) / xnorm;
        }

        if rel_residual - trial_rel < STALL_TOL {
            support.pop();
            chol.truncate(row_len);
            debug_assert_eq!(support.len(), k);
            break;
        }
        in_support[best] = true;
        coeffs = trial;
        rel_residual = trial_rel;

        corr.copy_from_slice(&alpha0);
        for (&i, &v) in support.iter().zip(&coeffs) {
            for (c, g) in corr.iter_mut().zip(dict.gram_row(i)) {
                *c -= g * v;
            }
        }
    }

    let mut code = SparseCode {
        support,
        values: coeffs,
        achieved_prd: 1.0,
        target_met: false,
    };
    let xhat = reconstruct(dict, &code)?;
    code.achieved_prd = prd(x, &xhat)?;
    code.target_met = match prd_limit {
        Some(l) => code.achieved_prd <= l,
        None => true,
    };
    Ok(code)
}

fn residual_of(dict: &Dictionary, x: &[f64], support: &[usize], coeffs: &[f64]) -> Vec<f64> {
    let mut r = x.to_vec();
    for (&j, &v) in support.iter().zip(coeffs) {
        for (ri, a) in r.iter_mut().zip(dict.atom(j)) {
            *ri -= v * a;
        }
    }
    r
}

/// Solves `L y = b` for packed lower-triangular `L` of dimension `b.len()`.
fn forward_substitute(chol: &[f64], b: &[f64]) -> Vec<f64> {
    let k = b.len();
    let mut y = vec![0.0; k];
    let mut offset = 0;
    for i in 0..k {
        let row = &chol[offset..offset + i + 1];
        let s = b[i] - dot(&row[..i], &y[..i]);
        y[i] = s / row[i];
        offset += i + 1;
    }
    y
}

/// Solves `L^T z = y`.
fn back_substitute(chol: &[f64], y: &[f64]) -> Vec<f64> {
    let k = y.len();
    let row_start = |i: usize| i * (i + 1) / 2;
    let mut z = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for j in i + 1..k {
            s -= chol[row_start(j) + i] * z[j];
        }
        z[i] = s / chol[row_start(i) + i];
    }
    z
}
