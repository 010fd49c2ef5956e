//! K-SVD training of class-specific overcomplete dictionaries.
//!
//! Each iteration runs a fixed-sparsity OMP coding stage over every training
//! column (in parallel), then updates atoms one at a time from the leading
//! singular pair of the restricted representation error.

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beat::{dot, norm, BeatClass, BeatVector};
use crate::error::{Error, Result};
use crate::sparse::{omp_fixed_sparsity, Dictionary, SparseCode};

/// Atoms closer than this (absolute inner product) are considered duplicates.
const DUPLICATE_INNER_PRODUCT: f64 = 0.999;
const POWER_ITERATIONS: usize = 500;
const POWER_TOL: f64 = 1e-13;

/// Training signals as columns of an `m x M` matrix.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    rows: usize,
    data: Vec<f64>,
}

impl TrainingSet {
    pub fn from_columns(rows: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || data.is_empty() {
            return Err(Error::usage("training set is empty"));
        }
        if data.len() % rows != 0 {
            return Err(Error::usage("training data does not tile the row count"));
        }
        let ts = TrainingSet { rows, data };
        if let Some(i) = (0..ts.len()).find(|&i| norm(ts.column(i)) == 0.0) {
            return Err(Error::domain(format!("training column {i} has zero norm")));
        }
        Ok(ts)
    }

    pub fn from_beats<'a>(beats: impl IntoIterator<Item = &'a BeatVector>) -> Result<Self> {
        let mut rows = None;
        let mut data = Vec::new();
        for b in beats {
            match rows {
                None => rows = Some(b.len()),
                Some(r) if r != b.len() => {
                    return Err(Error::usage(format!(
                        "training beats have mixed lengths ({r} and {})",
                        b.len()
                    )))
                }
                _ => {}
            }
            data.extend_from_slice(b.samples());
        }
        match rows {
            Some(r) => TrainingSet::from_columns(r, data),
            None => Err(Error::usage("training set is empty")),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of training signals `M`.
    pub fn len(&self) -> usize {
        self.data.len() / self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.data[i * self.rows..(i + 1) * self.rows]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KsvdConfig {
    pub n_atoms: usize,
    /// Atoms per signal in the coding stage (`T0`).
    pub sparsity: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Stop once the relative objective change between coding stages drops below this.
    pub convergence_tol: f64,
}

impl Default for KsvdConfig {
    fn default() -> Self {
        KsvdConfig {
            n_atoms: 600,
            sparsity: 10,
            iterations: 50,
            seed: 0,
            convergence_tol: 1e-6,
        }
    }
}

/// Objective trace of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KsvdReport {
    /// Objective after each coding stage.
    pub coding_objective: Vec<f64>,
    /// `(before, after)` objective around each atom-update stage.
    pub update_stages: Vec<(f64, f64)>,
    pub iterations_run: usize,
    /// Atoms reinitialized because they were unused or duplicated.
    pub replaced_atoms: usize,
}

/// `||X - D Psi||_F^2` where column `i` of `Psi` is `codes[i]`.
pub fn objective(dict: &Dictionary, x: &TrainingSet, codes: &[SparseCode]) -> Result<f64> {
    if dict.rows() != x.rows() {
        return Err(Error::usage("dictionary and training rows differ"));
    }
    if codes.len() != x.len() {
        return Err(Error::usage(format!(
            "{} codes for {} training signals",
            codes.len(),
            x.len()
        )));
    }
    let mut total = 0.0;
    for (i, code) in codes.iter().enumerate() {
        let mut r = x.column(i).to_vec();
        for (j, v) in code.entries() {
            if j >= dict.n_atoms() {
                return Err(Error::usage(format!("atom index {j} out of range")));
            }
            for (ri, a) in r.iter_mut().zip(dict.atom(j)) {
                *ri -= v * a;
            }
        }
        total += dot(&r, &r);
    }
    Ok(total)
}

pub fn train_dictionary(
    ts: &TrainingSet,
    cfg: &KsvdConfig,
    class_tag: Option<BeatClass>,
) -> Result<Dictionary> {
    train_dictionary_with_report(ts, cfg, class_tag).map(|(d, _)| d)
}

pub fn train_dictionary_with_report(
    ts: &TrainingSet,
    cfg: &KsvdConfig,
    class_tag: Option<BeatClass>,
) -> Result<(Dictionary, KsvdReport)> {
    let m = ts.rows();
    if cfg.sparsity == 0 || cfg.sparsity > m {
        return Err(Error::usage(format!(
            "sparsity must lie in 1..={m}, got {}",
            cfg.sparsity
        )));
    }
    if cfg.n_atoms < m {
        return Err(Error::usage(format!(
            "n_atoms ({}) must be at least the signal dimension ({m})",
            cfg.n_atoms
        )));
    }
    if ts.len() < cfg.n_atoms {
        warn!(
            "training set has {} signals for {} atoms; padding with random atoms",
            ts.len(),
            cfg.n_atoms
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut atoms = initial_atoms(ts, cfg.n_atoms, &mut rng);
    let mut report = KsvdReport::default();
    let mut previous: Option<f64> = None;
    // Objectives at rounding level of the data energy count as exact.
    let floor = 1e-24 * frobenius_sq(&ts.data);

    for iter in 0..cfg.iterations {
        let dict = Dictionary::normalized(m, atoms.clone(), class_tag)?;
        let mut codes: Vec<SparseCode> = (0..ts.len())
            .into_par_iter()
            .map(|i| omp_fixed_sparsity(&dict, ts.column(i), cfg.sparsity))
            .collect::<Result<_>>()?;

        let mut residual = residual_matrix(&dict, ts, &codes);
        let obj = frobenius_sq(&residual);
        report.coding_objective.push(obj);
        debug!("ksvd iteration {iter}: objective {obj:.6e}");
        if let Some(prev) = previous {
            if prev > 0.0 && ((prev - obj) / prev).abs() < cfg.convergence_tol {
                break;
            }
        }
        previous = Some(obj);
        if obj <= floor {
            break;
        }

        let before = obj;
        let mut replacements = ReplacementSource::new(ts, &residual);
        let users = atom_users(cfg.n_atoms, &codes);
        for (k, used_by) in users.iter().enumerate() {
            let atom = &mut atoms[k * m..(k + 1) * m];
            if used_by.is_empty() {
                replacements.replace(atom, &mut rng);
                report.replaced_atoms += 1;
                continue;
            }
            update_atom(atom, used_by, &mut codes, &mut residual, m);
        }
        let after = objective_columns(&atoms, m, ts, &codes);
        report.update_stages.push((before, after));

        report.replaced_atoms += dedup_atoms(&mut atoms, m, &mut replacements, &mut rng);
        report.iterations_run = iter + 1;
    }

    let dict = Dictionary::normalized(m, atoms, class_tag)?;
    Ok((dict, report))
}

/// First `n` distinct (non-parallel) training columns, normalized, topped up
/// with seeded random unit vectors.
fn initial_atoms(ts: &TrainingSet, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = ts.rows();
    let mut atoms: Vec<f64> = Vec::with_capacity(n * m);
    let mut count = 0;
    for i in 0..ts.len() {
        if count == n {
            break;
        }
        let col = ts.column(i);
        let cn = norm(col);
        let unit: Vec<f64> = col.iter().map(|v| v / cn).collect();
        let duplicate = atoms
            .chunks_exact(m)
            .any(|a| dot(a, &unit).abs() >= 1.0 - 1e-12);
        if !duplicate {
            atoms.extend_from_slice(&unit);
            count += 1;
        }
    }
    while count < n {
        atoms.extend(random_unit(m, rng));
        count += 1;
    }
    atoms
}

fn random_unit(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn residual_matrix(dict: &Dictionary, ts: &TrainingSet, codes: &[SparseCode]) -> Vec<f64> {
    let m = ts.rows();
    let mut r = ts.data.clone();
    for (i, code) in codes.iter().enumerate() {
        let col = &mut r[i * m..(i + 1) * m];
        for (j, v) in code.entries() {
            for (ri, a) in col.iter_mut().zip(dict.atom(j)) {
                *ri -= v * a;
            }
        }
    }
    r
}

/// Objective recomputed from scratch against raw column-major atoms.
fn objective_columns(atoms: &[f64], m: usize, ts: &TrainingSet, codes: &[SparseCode]) -> f64 {
    codes
        .iter()
        .enumerate()
        .map(|(i, code)| {
            let mut r = ts.column(i).to_vec();
            for (j, v) in code.entries() {
                for (ri, a) in r.iter_mut().zip(&atoms[j * m..(j + 1) * m]) {
                    *ri -= v * a;
                }
            }
            dot(&r, &r)
        })
        .sum()
}

fn frobenius_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// For each atom, the `(signal, position in code)` pairs that use it.
fn atom_users(n_atoms: usize, codes: &[SparseCode]) -> Vec<Vec<(usize, usize)>> {
    let mut users = vec![Vec::new(); n_atoms];
    for (i, code) in codes.iter().enumerate() {
        for (p, &j) in code.support.iter().enumerate() {
            users[j].push((i, p));
        }
    }
    users
}

/// Rank-1 update of one atom and its coefficient row. The power iteration is
/// warm-started at the current atom so the restricted error can only shrink.
fn update_atom(
    atom: &mut [f64],
    used_by: &[(usize, usize)],
    codes: &mut [SparseCode],
    residual: &mut [f64],
    m: usize,
) {
    // E = R_omega + d g^T, stored column by column.
    let mut e: Vec<f64> = Vec::with_capacity(m * used_by.len());
    for &(i, p) in used_by {
        let g = codes[i].values[p];
        let col = &residual[i * m..(i + 1) * m];
        e.extend(col.iter().zip(atom.iter()).map(|(r, d)| r + d * g));
    }

    let project = |u: &[f64]| -> Vec<f64> { e.chunks_exact(m).map(|c| dot(c, u)).collect() };
    let old = project(atom);
    let old_energy = dot(&old, &old);

    let mut u = atom.to_vec();
    let mut v = old.clone();
    let mut energy = old_energy;
    for _ in 0..POWER_ITERATIONS {
        let mut next = vec![0.0; m];
        for (c, &w) in e.chunks_exact(m).zip(&v) {
            for (n, x) in next.iter_mut().zip(c) {
                *n += w * x;
            }
        }
        let nn = norm(&next);
        if nn == 0.0 {
            break;
        }
        next.iter_mut().for_each(|x| *x /= nn);
        let next_v = project(&next);
        let next_energy = dot(&next_v, &next_v);
        if next_energy < energy {
            break;
        }
        let gain = next_energy - energy;
        u = next;
        v = next_v;
        energy = next_energy;
        if gain <= POWER_TOL * energy {
            break;
        }
    }
    if energy < old_energy {
        u = atom.to_vec();
        v = old;
    }

    atom.copy_from_slice(&u);
    for (col_idx, &(i, p)) in used_by.iter().enumerate() {
        let coeff = v[col_idx];
        codes[i].values[p] = coeff;
        let ecol = &e[col_idx * m..(col_idx + 1) * m];
        let rcol = &mut residual[i * m..(i + 1) * m];
        for ((r, ev), d) in rcol.iter_mut().zip(ecol).zip(u.iter()) {
            *r = ev - d * coeff;
        }
    }
}

/// Hands out worst-represented training signals, each at most once.
struct ReplacementSource<'a> {
    ts: &'a TrainingSet,
    order: Vec<usize>,
    next: usize,
}

impl<'a> ReplacementSource<'a> {
    fn new(ts: &'a TrainingSet, residual: &[f64]) -> Self {
        let m = ts.rows();
        let errs: Vec<f64> = residual.chunks_exact(m).map(|c| dot(c, c)).collect();
        let mut order: Vec<usize> = (0..errs.len()).collect();
        order.sort_by(|&a, &b| errs[b].total_cmp(&errs[a]).then(a.cmp(&b)));
        // Signals that are already represented exactly are useless as new atoms.
        let max_signal = (0..ts.len())
            .map(|i| norm(ts.column(i)))
            .fold(0.0, f64::max);
        order.retain(|&i| errs[i].sqrt() > 1e-10 * max_signal);
        ReplacementSource { ts, order, next: 0 }
    }

    fn replace(&mut self, atom: &mut [f64], rng: &mut ChaCha8Rng) {
        if let Some(&i) = self.order.get(self.next) {
            self.next += 1;
            let col = self.ts.column(i);
            let n = norm(col);
            for (a, c) in atom.iter_mut().zip(col) {
                *a = c / n;
            }
        } else {
            atom.copy_from_slice(&random_unit(atom.len(), rng));
        }
    }
}

fn dedup_atoms(
    atoms: &mut [f64],
    m: usize,
    source: &mut ReplacementSource<'_>,
    rng: &mut ChaCha8Rng,
) -> usize {
    let n = atoms.len() / m;
    let mut replaced = 0;
    for j in 1..n {
        let duplicate = (0..j).any(|i| {
            dot(&atoms[i * m..(i + 1) * m], &atoms[j * m..(j + 1) * m]).abs()
                > DUPLICATE_INNER_PRODUCT
        });
        if duplicate {
            source.replace(&mut atoms[j * m..(j + 1) * m], rng);
            replaced += 1;
        }
    }
    replaced
}
