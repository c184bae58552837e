//! Augmented semi-nonnegative sparse coding.
//!
//! Given grid-encoded trajectories as columns of `Z`, find atoms `D` and
//! codes `S` minimizing
//!
//! ```text
//! ‖Z - D S‖_F² + λ Σ_i ‖s_i‖₁   s.t.  d_k ∈ Q,  S ≥ 0
//! ```
//!
//! where `Q` constrains every cell of an atom to
//! `|vx| ≤ a, |vy| ≤ a, 0 ≤ a ≤ 1`. The solver alternates an exact
//! coordinate-descent NNLS step for `S` with projected gradient steps for `D`
//! and rejects any step that would raise the objective.
//!
//! Atom ids are zero-based throughout.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Atoms or code rows below this size are pruned after convergence.
pub const PRUNE_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseCodingProblem {
    /// `p × n`, one vectorized trajectory per column.
    pub z: DMatrix<f64>,
    pub lambda: f64,
    pub k_max: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

/// Solver knobs, separate from the data so they can live in configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DictionaryConfig {
    pub lambda: f64,
    pub k_max: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        DictionaryConfig {
            lambda: 0.1,
            k_max: 12,
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

impl SparseCodingProblem {
    pub fn new(z: DMatrix<f64>, cfg: &DictionaryConfig, seed: u64) -> Self {
        SparseCodingProblem {
            z,
            lambda: cfg.lambda,
            k_max: cfg.k_max,
            max_iters: cfg.max_iters,
            tol: cfg.tol,
            seed,
        }
    }

    /// Stacks vectorized trajectory columns into `Z`.
    pub fn from_columns(columns: &[DVector<f64>], cfg: &DictionaryConfig, seed: u64) -> Result<Self> {
        let p = columns
            .first()
            .map(|c| c.len())
            .ok_or_else(|| Error::invalid("no training columns"))?;
        if columns.iter().any(|c| c.len() != p) {
            return Err(Error::invalid("training columns differ in length"));
        }
        Ok(Self::new(DMatrix::from_columns(columns), cfg, seed))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictionaryModel {
    /// `p × K` atoms.
    #[serde(with = "row_major")]
    pub d: DMatrix<f64>,
    /// `K × n` nonnegative codes.
    #[serde(with = "row_major")]
    pub s: DMatrix<f64>,
    /// Objective after initialization and after every accepted iteration.
    #[serde(default)]
    pub objective_history: Vec<f64>,
}

impl DictionaryModel {
    pub fn num_atoms(&self) -> usize {
        self.d.ncols()
    }

    pub fn num_cells(&self) -> usize {
        self.d.nrows() / 3
    }

    /// Activation `a_k(cell)` of atom `k`.
    pub fn activation(&self, k: usize, cell: usize) -> f64 {
        self.d[(2 * self.num_cells() + cell, k)]
    }

    pub fn code(&self, i: usize) -> Vec<f64> {
        self.s.column(i).iter().copied().collect()
    }

    pub fn objective(&self, z: &DMatrix<f64>, lambda: f64) -> f64 {
        objective(z, &self.d, &self.s, lambda)
    }
}

/// Matrices as `{rows, cols, data}` with row-major data.
pub(crate) mod row_major {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = (0..m.nrows())
            .flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)]))
            .collect();
        Dense {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let m = Dense::deserialize(d)?;
        if m.data.len() != m.rows * m.cols {
            return Err(serde::de::Error::custom(format!(
                "matrix declares {}x{} but holds {} values",
                m.rows,
                m.cols,
                m.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(m.rows, m.cols, &m.data))
    }
}

/// Euclidean projection of one cell `(vx, vy, a)` onto
/// `{|vx| ≤ a, |vy| ≤ a, 0 ≤ a ≤ 1}`.
pub fn project_cell(vx: f64, vy: f64, a: f64) -> (f64, f64, f64) {
    // For fixed a the optimal velocities are clips, leaving a convex
    // piecewise quadratic in a with breakpoints at |vx| and |vy|.
    let cost = |t: f64| {
        let ex = (vx.abs() - t).max(0.0);
        let ey = (vy.abs() - t).max(0.0);
        (t - a) * (t - a) + ex * ex + ey * ey
    };
    let (hi, lo) = if vx.abs() >= vy.abs() {
        (vx.abs(), vy.abs())
    } else {
        (vy.abs(), vx.abs())
    };
    let candidates = [
        a,
        (a + hi) / 2.0,
        (a + hi + lo) / 3.0,
        hi,
        lo,
        0.0,
        1.0,
    ];
    let mut best_t = 0.0;
    let mut best_c = f64::INFINITY;
    for c in candidates {
        let t = c.clamp(0.0, 1.0);
        let v = cost(t);
        if v < best_c {
            best_c = v;
            best_t = t;
        }
    }
    (vx.clamp(-best_t, best_t), vy.clamp(-best_t, best_t), best_t)
}

/// Projects an atom in `[vx; vy; a]` block layout onto `Q` in place.
pub fn project_to_q(atom: &mut [f64]) {
    debug_assert_eq!(atom.len() % 3, 0);
    let cells = atom.len() / 3;
    for c in 0..cells {
        let (vx, vy, a) = project_cell(atom[c], atom[cells + c], atom[2 * cells + c]);
        atom[c] = vx;
        atom[cells + c] = vy;
        atom[2 * cells + c] = a;
    }
}

/// Returns the projection of `atom` onto `Q`.
pub fn projected(atom: &[f64]) -> Vec<f64> {
    let mut out = atom.to_vec();
    project_to_q(&mut out);
    out
}

fn objective(z: &DMatrix<f64>, d: &DMatrix<f64>, s: &DMatrix<f64>, lambda: f64) -> f64 {
    let residual = z - d * s;
    residual.norm_squared() + lambda * s.iter().sum::<f64>()
}

/// Nonnegative L1-regularized code of `z` against `d`, by cyclic coordinate
/// descent starting from `warm`.
pub fn sparse_code(
    gram: &DMatrix<f64>,
    b: &[f64],
    lambda: f64,
    warm: &mut [f64],
    max_sweeps: usize,
) {
    let k = b.len();
    for _ in 0..max_sweeps {
        let mut change = 0.0f64;
        for i in 0..k {
            let g = gram[(i, i)];
            if g <= 0.0 {
                warm[i] = 0.0;
                continue;
            }
            let mut r = b[i];
            for j in 0..k {
                if j != i {
                    r -= gram[(i, j)] * warm[j];
                }
            }
            let next = ((r - lambda / 2.0) / g).max(0.0);
            change = change.max((next - warm[i]).abs());
            warm[i] = next;
        }
        if change < 1e-12 {
            break;
        }
    }
}

fn update_codes(z: &DMatrix<f64>, d: &DMatrix<f64>, s: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let gram = d.transpose() * d;
    let dtz = d.transpose() * z;
    let k = d.ncols();
    let cols: Vec<Vec<f64>> = (0..z.ncols())
        .into_par_iter()
        .map(|i| {
            let b: Vec<f64> = dtz.column(i).iter().copied().collect();
            let mut code: Vec<f64> = s.column(i).iter().copied().collect();
            sparse_code(&gram, &b, lambda, &mut code, 200);
            code
        })
        .collect();
    DMatrix::from_fn(k, z.ncols(), |r, c| cols[c][r])
}

/// A few projected gradient steps on `D` with `S` fixed.
fn update_atoms(z: &DMatrix<f64>, d: &DMatrix<f64>, s: &DMatrix<f64>, steps: usize) -> DMatrix<f64> {
    let zst = z * s.transpose();
    let sst = s * s.transpose();
    let z2 = z.norm_squared();
    // Smooth part only; the L1 term does not depend on D.
    let f = |dm: &DMatrix<f64>| z2 - 2.0 * dm.dot(&zst) + (dm.transpose() * dm).dot(&sst);
    let lipschitz = 2.0 * sst.norm();
    if lipschitz <= 0.0 {
        return d.clone();
    }

    let mut cur = d.clone();
    let mut f_cur = f(&cur);
    let mut step = 1.0 / lipschitz;
    for _ in 0..steps {
        let grad = (&cur * &sst - &zst) * 2.0;
        let mut accepted = false;
        for _ in 0..20 {
            let mut cand = &cur - &grad * step;
            for mut col in cand.column_iter_mut() {
                project_to_q(col.as_mut_slice());
            }
            let f_cand = f(&cand);
            if f_cand <= f_cur {
                let gain = f_cur - f_cand;
                cur = cand;
                f_cur = f_cand;
                accepted = gain > 0.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    cur
}

/// Scales every atom up until its largest activation is 1 and its code row
/// down by the same factor. `DS` is unchanged, `Q` is a cone capped at
/// `a = 1`, and the L1 term can only shrink.
fn rescale_atoms(d: &DMatrix<f64>, s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let cells = d.nrows() / 3;
    let mut d = d.clone();
    let mut s = s.clone();
    for k in 0..d.ncols() {
        let peak = d
            .column(k)
            .rows(2 * cells, cells)
            .iter()
            .fold(0.0f64, |m, &v| m.max(v));
        if peak > 0.0 && peak < 1.0 {
            let mut col = d.column_mut(k);
            col /= peak;
            project_to_q(col.as_mut_slice());
            let mut row = s.row_mut(k);
            row *= peak;
        }
    }
    (d, s)
}

/// D²-weighted seeding over the Q-projected columns.
fn initial_atoms(z: &DMatrix<f64>, k_max: usize, seed: u64) -> DMatrix<f64> {
    let n = z.ncols();
    let cols: Vec<DVector<f64>> = (0..n)
        .map(|i| DVector::from_vec(projected(z.column(i).as_slice())))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut dist: Vec<f64> = cols.iter().map(|c| (c - &cols[chosen[0]]).norm_squared()).collect();
    while chosen.len() < k_max.min(n) {
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in dist.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        if dist[pick] <= 0.0 {
            pick = dist
                .iter()
                .enumerate()
                .rev()
                .find(|(_, &w)| w > 0.0)
                .map(|(i, _)| i)
                .unwrap_or(pick);
        }
        chosen.push(pick);
        for (i, c) in cols.iter().enumerate() {
            dist[i] = dist[i].min((c - &cols[pick]).norm_squared());
        }
    }
    let atoms: Vec<DVector<f64>> = chosen.iter().map(|&i| cols[i].clone()).collect();
    DMatrix::from_columns(&atoms)
}

/// Solves the sparse coding problem by block coordinate descent.
pub fn learn_dictionary(problem: &SparseCodingProblem) -> Result<DictionaryModel> {
    let z = &problem.z;
    if z.ncols() == 0 || z.nrows() == 0 {
        return Err(Error::invalid("Z is empty"));
    }
    if !z.nrows().is_multiple_of(3) {
        return Err(Error::invalid(format!(
            "column length {} is not 3 x cells",
            z.nrows()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("Z has non-finite entries"));
    }
    if !(problem.lambda >= 0.0 && problem.lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {}", problem.lambda)));
    }
    if problem.k_max == 0 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    if !(problem.tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }

    let lambda = problem.lambda;
    let mut d = initial_atoms(z, problem.k_max, problem.seed);
    let mut s = DMatrix::zeros(d.ncols(), z.ncols());
    let mut f = objective(z, &d, &s, lambda);
    let mut history = vec![f];

    for _ in 0..problem.max_iters {
        let start = f;

        let s_next = update_codes(z, &d, &s, lambda);
        let f_s = objective(z, &d, &s_next, lambda);
        if f_s <= f {
            s = s_next;
            f = f_s;
        }

        let d_next = update_atoms(z, &d, &s, 10);
        let f_d = objective(z, &d_next, &s, lambda);
        if f_d <= f {
            d = d_next;
            f = f_d;
        }

        let (d_scaled, s_scaled) = rescale_atoms(&d, &s);
        let f_scaled = objective(z, &d_scaled, &s_scaled, lambda);
        if f_scaled <= f {
            d = d_scaled;
            s = s_scaled;
            f = f_scaled;
        }

        history.push(f);
        let decrease = start - f;
        if decrease <= problem.tol * start.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let keep: Vec<usize> = (0..d.ncols())
        .filter(|&k| {
            d.column(k).norm() >= PRUNE_THRESHOLD
                && s.row(k).iter().fold(0.0f64, |m, &v| m.max(v)) >= PRUNE_THRESHOLD
        })
        .collect();
    if keep.len() < d.ncols() {
        d = d.select_columns(&keep);
        s = s.select_rows(&keep);
    }
    Ok(DictionaryModel {
        d,
        s,
        objective_history: history,
    })
}

/// Dominant atom of every cell in `cell_order`, without collapsing repeats.
///
/// The score of atom `k` at a cell is `s_k · a_k(cell)`; ties go to the
/// lower id. Cells where every score is zero take the trajectory's dominant
/// atom, `argmax_k s_k`.
pub fn label_cells(code: &[f64], cell_order: &[usize], model: &DictionaryModel) -> Result<Vec<usize>> {
    let k = model.num_atoms();
    if k == 0 {
        return Err(Error::Model("dictionary has no atoms".into()));
    }
    if code.len() != k {
        return Err(Error::invalid(format!("code has {} entries for {} atoms", code.len(), k)));
    }
    if let Some(&c) = cell_order.iter().find(|&&c| c >= model.num_cells()) {
        return Err(Error::invalid(format!("cell {c} is outside the dictionary grid")));
    }
    let dominant = argmax(code.iter().copied());
    Ok(cell_order
        .iter()
        .map(|&cell| {
            let scores: Vec<f64> = (0..k).map(|j| code[j] * model.activation(j, cell)).collect();
            let best = argmax(scores.iter().copied());
            if scores[best] > 0.0 {
                best
            } else {
                dominant
            }
        })
        .collect())
}

/// Labels each visited cell with its dominant atom (see [`label_cells`]) and
/// collapses consecutive repeats into runs.
pub fn assign_segments(code: &[f64], cell_order: &[usize], model: &DictionaryModel) -> Result<Vec<usize>> {
    let mut runs = label_cells(code, cell_order, model)?;
    runs.dedup();
    Ok(runs)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    k: usize,
    /// Row-major `K × K` counts.
    counts: Vec<u64>,
}

impl TransitionMatrix {
    pub fn zeros(k: usize) -> Self {
        TransitionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.k + j]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.counts[i * self.k..(i + 1) * self.k]
    }

    /// All `(i, j)` with a nonzero count, in row-major order.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        (0..self.k * self.k)
            .filter(|&ix| self.counts[ix] > 0)
            .map(|ix| (ix / self.k, ix % self.k, self.counts[ix]))
    }

    fn bump(&mut self, i: usize, j: usize) {
        self.counts[i * self.k + j] += 1;
    }
}

/// Counts, per trajectory, each distinct transition between adjacent runs
/// once; a single-run trajectory counts towards the diagonal.
pub fn build_transition_matrix(labels: &[Vec<usize>], k: usize) -> Result<TransitionMatrix> {
    if labels.is_empty() {
        return Err(Error::invalid("no segment labels"));
    }
    let mut t = TransitionMatrix::zeros(k);
    for runs in labels {
        if let Some(&bad) = runs.iter().find(|&&r| r >= k) {
            return Err(Error::invalid(format!("atom id {bad} out of range for K = {k}")));
        }
        match runs.as_slice() {
            [] => return Err(Error::invalid("trajectory has no runs")),
            [only] => t.bump(*only, *only),
            _ => {
                let pairs: BTreeSet<(usize, usize)> = runs
                    .windows(2)
                    .filter(|w| w[0] != w[1])
                    .map(|w| (w[0], w[1]))
                    .collect();
                for (i, j) in pairs {
                    t.bump(i, j);
                }
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    use proptest::prelude::*;

    fn cfg(lambda: f64, k_max: usize) -> DictionaryConfig {
        DictionaryConfig {
            lambda,
            k_max,
            max_iters: 300,
            tol: 1e-9,
        }
    }

    /// A column with unit +x velocity on `xcells` and +y on `ycells`.
    fn flow_column(cells: usize, xcells: &[usize], ycells: &[usize]) -> DVector<f64> {
        let mut v = DVector::zeros(3 * cells);
        for &c in xcells {
            v[c] = 1.0;
            v[2 * cells + c] = 1.0;
        }
        for &c in ycells {
            v[cells + c] = 1.0;
            v[2 * cells + c] = 1.0;
        }
        v
    }

    fn random_columns(seed: u64, cells: usize, n: usize) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut v = DVector::zeros(3 * cells);
                let start = rng.gen_range(0..cells);
                let len = rng.gen_range(1..=cells.min(6));
                for c in start..(start + len).min(cells) {
                    let th: f64 = rng.gen_range(-3.1..3.1);
                    v[c] = th.cos();
                    v[cells + c] = th.sin();
                    v[2 * cells + c] = 1.0;
                }
                v
            })
            .collect()
    }

    fn assert_feasible(model: &DictionaryModel) {
        assert!(model.s.iter().all(|&v| v >= 0.0));
        for col in model.d.column_iter() {
            let p = projected(col.as_slice());
            let dist: f64 = p.iter().zip(col.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(dist.sqrt() < 1e-12);
        }
    }

    #[test]
    fn projection_leaves_feasible_atoms_alone() {
        let atom = [0.3, -0.5, 0.0, 0.2, 0.5, 0.0, 0.4, 0.5, 0.0];
        assert_eq!(projected(&atom), atom.to_vec());
    }

    #[test]
    fn projection_clips_activation_box() {
        assert_eq!(project_cell(0.0, 0.0, 1.5), (0.0, 0.0, 1.0));
        assert_eq!(project_cell(0.2, 0.1, -0.4), (0.0, 0.0, 0.0));
    }

    #[test]
    fn projection_balances_velocity_against_activation() {
        // Distance (0.2² + 0.2²) beats the plain clip to (0.5, 0, 0.5) at 0.4².
        let (vx, vy, a) = project_cell(0.9, 0.0, 0.5);
        assert!((vx - 0.7).abs() < 1e-15 && vy == 0.0 && (a - 0.7).abs() < 1e-15);
    }

    #[test]
    fn projection_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..6 {
            let (x, y, a): (f64, f64, f64) = (
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-0.5..1.5),
            );
            let (px, py, pa) = project_cell(x, y, a);
            let d_exact = (px - x).powi(2) + (py - y).powi(2) + (pa - a).powi(2);

            let mut best = f64::INFINITY;
            let steps = 100;
            for ia in 0..=steps {
                let ta = ia as f64 / steps as f64;
                for ix in -steps..=steps {
                    let tx = ix as f64 / steps as f64;
                    if tx.abs() > ta {
                        continue;
                    }
                    for iy in -steps..=steps {
                        let ty = iy as f64 / steps as f64;
                        if ty.abs() > ta {
                            continue;
                        }
                        let dist = (tx - x).powi(2) + (ty - y).powi(2) + (ta - a).powi(2);
                        best = best.min(dist);
                    }
                }
            }
            assert!(d_exact <= best + 1e-12, "exact {d_exact} vs grid {best}");
            // The grid holds a point within half a cell diagonal of the optimum.
            assert!(best - d_exact < 3.0 * 0.01 * 2.0);
        }
    }

    #[test]
    fn rank_one_data_is_captured_by_one_atom() {
        let col = flow_column(6, &[0, 1, 2], &[3, 4]);
        let z = DMatrix::from_columns(&vec![col; 10]);
        let model = learn_dictionary(&SparseCodingProblem::new(z.clone(), &cfg(0.01, 1), 0)).unwrap();
        assert_eq!(model.num_atoms(), 1);
        let resid = (&z - &model.d * &model.s).norm_squared() / z.norm_squared();
        assert!(resid < 1e-3, "relative residual {resid}");
    }

    #[test]
    fn huge_lambda_zeroes_the_codes() {
        let cols = random_columns(1, 8, 12);
        let z = DMatrix::from_columns(&cols);
        let problem = SparseCodingProblem::new(z.clone(), &cfg(1e9, 3), 4);
        // Pruning would drop every atom, so check the iterate history instead.
        let model = learn_dictionary(&problem).unwrap();
        assert!(model.s.iter().all(|&v| v < 1e-6));
        let last = *model.objective_history.last().unwrap();
        assert!((last - z.norm_squared()).abs() < 1e-6 * z.norm_squared());
    }

    #[test]
    fn orthogonal_patterns_get_one_atom_each() {
        let cells = 8;
        let a = flow_column(cells, &[0, 1, 2, 3], &[]);
        let b = flow_column(cells, &[], &[4, 5, 6, 7]);
        let cols: Vec<DVector<f64>> = (0..10).map(|i| if i % 2 == 0 { a.clone() } else { b.clone() }).collect();
        let z = DMatrix::from_columns(&cols);
        let model = learn_dictionary(&SparseCodingProblem::new(z.clone(), &cfg(1e-3, 2), 9)).unwrap();

        // Alternating least squares with the two true supports as the oracle:
        // each column is exactly one pattern, so the oracle residual is zero.
        let oracle = DMatrix::from_columns(&[a.clone(), b.clone()]);
        let oracle_codes = (oracle.transpose() * &oracle).try_inverse().unwrap() * oracle.transpose() * &z;
        assert!((&z - &oracle * oracle_codes).norm() < 1e-12);

        for i in 0..z.ncols() {
            let code = model.code(i);
            let k = argmax(code.iter().copied());
            let recon = model.d.column(k) * code[k];
            let err = (z.column(i) - recon).norm() / z.column(i).norm();
            assert!(err < 1e-2, "column {i} error {err}");
        }
    }

    #[test]
    fn planted_solution_is_matched_or_beaten() {
        let cells = 9;
        let atoms = [
            flow_column(cells, &[0, 1, 2], &[]),
            flow_column(cells, &[], &[3, 4, 5]),
            flow_column(cells, &[6, 7], &[8]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut codes = DMatrix::zeros(3, 15);
        for i in 0..15 {
            codes[(i % 3, i)] = rng.gen_range(0.5..1.0);
        }
        let d_true = DMatrix::from_columns(&atoms);
        let z = &d_true * &codes;
        let lambda = 1e-3;
        let planted = objective(&z, &d_true, &codes, lambda);
        let model = learn_dictionary(&SparseCodingProblem::new(z.clone(), &cfg(lambda, 3), 1)).unwrap();
        let got = model.objective(&z, lambda);
        assert!(got <= planted + 1e-6, "solver {got} vs planted {planted}");
    }

    #[test]
    fn rejects_bad_problems() {
        let z = DMatrix::<f64>::zeros(0, 0);
        assert!(learn_dictionary(&SparseCodingProblem::new(z, &cfg(0.1, 2), 0)).is_err());
        let mut z = DMatrix::from_columns(&random_columns(0, 4, 3));
        z[(0, 0)] = f64::NAN;
        assert!(learn_dictionary(&SparseCodingProblem::new(z, &cfg(0.1, 2), 0)).is_err());
        let z = DMatrix::from_columns(&random_columns(0, 4, 3));
        assert!(learn_dictionary(&SparseCodingProblem::new(z.clone(), &cfg(-1.0, 2), 0)).is_err());
        assert!(learn_dictionary(&SparseCodingProblem::new(z, &cfg(0.1, 0), 0)).is_err());
    }

    #[test]
    fn model_serializes_row_major() {
        let z = DMatrix::from_columns(&random_columns(5, 4, 6));
        let model = learn_dictionary(&SparseCodingProblem::new(z, &cfg(0.05, 3), 2)).unwrap();
        let json = serde_json::to_value(&model).unwrap();
        assert_eq!(json["d"]["rows"], 12);
        assert_eq!(json["d"]["data"][1].as_f64().unwrap(), model.d[(0, 1)]);
        let back: DictionaryModel = serde_json::from_value(json).unwrap();
        assert_eq!(back, model);
    }

    fn two_atom_model() -> DictionaryModel {
        // Atom 0 covers cells 0..3, atom 1 covers cells 3..6, cell 6 unused.
        let cells = 7;
        let d = DMatrix::from_columns(&[
            flow_column(cells, &[0, 1, 2], &[]),
            flow_column(cells, &[], &[3, 4, 5]),
        ]);
        DictionaryModel {
            d,
            s: DMatrix::zeros(2, 0),
            objective_history: vec![],
        }
    }

    #[test]
    fn segments_follow_dominant_atoms() {
        let m = two_atom_model();
        assert_eq!(assign_segments(&[1.0, 0.5], &[0, 1, 2, 3, 4, 5], &m).unwrap(), vec![0, 1]);
        assert_eq!(assign_segments(&[1.0, 0.5], &[3, 0, 1], &m).unwrap(), vec![1, 0]);
        // Unscored cells inherit the dominant atom.
        assert_eq!(assign_segments(&[0.2, 0.9], &[6, 3], &m).unwrap(), vec![1]);
        assert_eq!(assign_segments(&[0.9, 0.2], &[6, 3], &m).unwrap(), vec![0, 1]);
    }

    #[test]
    fn single_atom_labels_everything() {
        let cells = 4;
        let m = DictionaryModel {
            d: DMatrix::from_columns(&[flow_column(cells, &[0, 1], &[])]),
            s: DMatrix::zeros(1, 0),
            objective_history: vec![],
        };
        assert_eq!(assign_segments(&[0.7], &[0, 1, 2, 3], &m).unwrap(), vec![0]);
    }

    #[test]
    fn ties_go_to_the_lower_atom() {
        let cells = 2;
        let m = DictionaryModel {
            d: DMatrix::from_columns(&[
                flow_column(cells, &[0], &[]),
                flow_column(cells, &[1], &[]),
                flow_column(cells, &[], &[0]),
            ]),
            s: DMatrix::zeros(3, 0),
            objective_history: vec![],
        };
        assert_eq!(assign_segments(&[0.5, 0.1, 0.5], &[0], &m).unwrap(), vec![0]);
        assert!(assign_segments(&[0.5, 0.1], &[0], &m).is_err());
        assert!(assign_segments(&[0.5, 0.1, 0.5], &[9], &m).is_err());
    }

    #[test]
    fn transition_examples() {
        let t = build_transition_matrix(&[vec![0, 1]], 3).unwrap();
        assert_eq!(t.get(0, 1), 1);
        assert_eq!(t.total(), 1);

        let t = build_transition_matrix(&[vec![0]], 3).unwrap();
        assert_eq!(t.get(0, 0), 1);

        // Enumerate adjacent pairs directly as the oracle.
        let runs = vec![0, 1, 0];
        let t = build_transition_matrix(std::slice::from_ref(&runs), 2).unwrap();
        let mut oracle = [[0u64; 2]; 2];
        for w in runs.windows(2) {
            oracle[w[0]][w[1]] = 1;
        }
        for (i, row) in oracle.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(t.get(i, j), v);
            }
        }

        // A repeated transition within one trajectory counts once.
        let t = build_transition_matrix(&[vec![0, 1, 0, 1]], 2).unwrap();
        assert_eq!((t.get(0, 1), t.get(1, 0)), (1, 1));

        assert!(build_transition_matrix(&[], 2).is_err());
        assert!(build_transition_matrix(&[vec![5]], 2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn projection_is_feasible_and_idempotent(cells in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 1..10)) {
            let mut atom = vec![0.0; 3 * cells.len()];
            let n = cells.len();
            for (c, (x, y, a)) in cells.iter().enumerate() {
                atom[c] = *x;
                atom[n + c] = *y;
                atom[2 * n + c] = *a;
            }
            let p = projected(&atom);
            for c in 0..n {
                let (x, y, a) = (p[c], p[n + c], p[2 * n + c]);
                prop_assert!((0.0..=1.0).contains(&a) && x.abs() <= a && y.abs() <= a);
            }
            prop_assert_eq!(projected(&p), p);
        }

        #[test]
        fn solver_is_monotone_and_feasible(seed in 0u64..1000) {
            let z = DMatrix::from_columns(&random_columns(seed, 10, 16));
            let model = learn_dictionary(&SparseCodingProblem::new(z, &cfg(0.05, 5), seed)).unwrap();
            for w in model.objective_history.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            assert_feasible(&model);
            prop_assert!(model.num_atoms() >= 1);
        }

        #[test]
        fn single_atom_trajectories_give_diagonal_transitions(labels in proptest::collection::vec(0usize..4, 1..30)) {
            let runs: Vec<Vec<usize>> = labels.iter().map(|&l| vec![l]).collect();
            let t = build_transition_matrix(&runs, 4).unwrap();
            for (i, j, _) in t.nonzero() {
                prop_assert_eq!(i, j);
            }
            prop_assert_eq!(t.total(), labels.len() as u64);
        }
    }
}
