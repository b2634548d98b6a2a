//! Sample-quality metrics: kernel MMD, entropic optimal transport, 1-D
//! Wasserstein, lattice observables, total variation against exact
//! distributions, mode histograms, and the importance-sampling log Z estimate.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::targets::{state_to_index, ExactDistribution};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().or(y.first()).map_or(0, Vec::len);
    if x.iter().chain(y).any(|p| p.len() != d) {
        return Err(Error::Shape("point clouds mix dimensions".into()));
    }
    Ok(d)
}

/// Pairwise distances used for the median heuristic are taken over at most
/// this many pooled points (evenly strided).
const MEDIAN_POINTS: usize = 2000;

fn median_distance(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let stride = pooled.len().div_ceil(MEDIAN_POINTS).max(1);
    let pts: Vec<&Vec<f64>> = pooled.into_iter().step_by(stride).collect();
    let mut d: Vec<f64> = Vec::with_capacity(pts.len() * pts.len() / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d.push(sq_dist(pts[i], pts[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Kernel bandwidths: median pairwise distance times 0.5, 1 and 2.
pub fn mmd_bandwidths(x: &[Vec<f64>], y: &[Vec<f64>]) -> [f64; 3] {
    let mut m = median_distance(x, y);
    if !(m > 0.0) {
        m = 1.0;
    }
    [0.5 * m, m, 2.0 * m]
}

/// Mean of RBF kernels `exp(-|a-b|^2 / (2 h^2))` over the given bandwidths.
pub fn rbf_mixture(a: &[f64], b: &[f64], bandwidths: &[f64]) -> f64 {
    let r = sq_dist(a, b);
    bandwidths.iter().map(|h| (-r / (2.0 * h * h)).exp()).sum::<f64>() / bandwidths.len() as f64
}

fn kernel_mean(x: &[Vec<f64>], y: &[Vec<f64>], h: &[f64], skip_diag: bool) -> f64 {
    let total: f64 = x
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            y.iter()
                .enumerate()
                .filter(|(j, _)| !(skip_diag && *j == i))
                .map(|(_, b)| rbf_mixture(a, b, h))
                .sum::<f64>()
        })
        .sum();
    let pairs = if skip_diag {
        x.len() * (x.len() - 1)
    } else {
        x.len() * y.len()
    };
    total / pairs as f64
}

/// Unbiased MMD^2 with the RBF mixture kernel at the given bandwidths.
pub fn mmd2_with(x: &[Vec<f64>], y: &[Vec<f64>], bandwidths: &[f64]) -> Result<f64> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::Domain("MMD needs at least two points per set".into()));
    }
    check_dims(x, y)?;
    Ok(
        kernel_mean(x, x, bandwidths, true) + kernel_mean(y, y, bandwidths, true)
            - 2.0 * kernel_mean(x, y, bandwidths, false),
    )
}

/// MMD with median-heuristic bandwidths, square-rooted after flooring at 0.
pub fn mmd(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    let h = mmd_bandwidths(x, y);
    Ok(mmd2_with(x, y, &h)?.max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SinkhornResult {
    /// `sum P_ij |x_i - y_j|^2` under the final plan.
    pub cost: f64,
    /// L1 violation of the row marginal after the last column update.
    pub violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const SINKHORN_TOL: f64 = 1e-6;
pub const SINKHORN_MAX_ITERS: usize = 10_000;

/// Entropic OT with uniform weights and squared-Euclidean cost.
pub fn sinkhorn(x: &[Vec<f64>], y: &[Vec<f64>], eps: f64) -> Result<SinkhornResult> {
    let a = vec![1.0 / x.len().max(1) as f64; x.len()];
    let b = vec![1.0 / y.len().max(1) as f64; y.len()];
    sinkhorn_weighted(x, &a, y, &b, eps)
}

/// Marginal violation at which intermediate epsilon levels hand over to the
/// next level.
const SINKHORN_LEVEL_TOL: f64 = 1e-4;
/// Sweep cap for each intermediate epsilon level.
const SINKHORN_LEVEL_ITERS: usize = 1000;
/// Kernel entries more than this many nats below their row (column) maximum
/// are dropped from the sparse updates.
const SINKHORN_TRUNCATION: f64 = 40.0;
/// Potential drift (in nats) after which the truncated kernel is rebuilt. A
/// dropped entry moves by at most twice this relative to its row maximum, so
/// it stays well outside the truncation window.
const SINKHORN_MAX_DRIFT: f64 = 5.0;

/// Truncated log-kernel in compressed-row form; row `i` holds the columns
/// and costs that can still carry mass.
struct SparseKernel {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    cost: Vec<f64>,
}

impl SparseKernel {
    /// Keeps `(i, j)` with `(pot_j - c_ij) / e + log_w_j` within the
    /// truncation window of the row maximum. `cost` is row-major.
    fn build(cost: &[f64], pot: &[f64], log_w: &[f64], e: f64) -> Self {
        let m = pot.len();
        let rows: Vec<(Vec<u32>, Vec<f64>)> = cost
            .par_chunks(m)
            .map(|row| {
                let z = |j: usize| (pot[j] - row[j]) / e + log_w[j];
                let hi = (0..m).map(z).fold(f64::NEG_INFINITY, f64::max);
                let keep: Vec<u32> = (0..m)
                    .filter(|&j| z(j) >= hi - SINKHORN_TRUNCATION)
                    .map(|j| j as u32)
                    .collect();
                let c = keep.iter().map(|&j| row[j as usize]).collect();
                (keep, c)
            })
            .collect();
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let mut cols = Vec::new();
        let mut kept = Vec::new();
        for (k, c) in rows {
            cols.extend(k);
            kept.extend(c);
            offsets.push(cols.len());
        }
        SparseKernel {
            offsets,
            cols,
            cost: kept,
        }
    }

    /// Row-wise `-e * log sum_j exp((pot_j - c_ij) / e + log_w_j)` over the
    /// kept entries.
    fn soft_min(&self, out: &mut [f64], pot: &[f64], log_w: &[f64], e: f64) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let (lo, up) = (self.offsets[i], self.offsets[i + 1]);
            let z = |k: usize| {
                let j = self.cols[k] as usize;
                (pot[j] - self.cost[k]) / e + log_w[j]
            };
            let hi = (lo..up).map(z).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (lo..up).map(|k| (z(k) - hi).exp()).sum();
            *o = -e * (hi + s.ln());
        });
    }
}

/// Dense counterpart of [`SparseKernel::soft_min`].
fn soft_min_dense(out: &mut [f64], pot: &[f64], cost: &[f64], log_w: &[f64], e: f64) {
    let m = pot.len();
    out.par_iter_mut().zip(cost.par_chunks(m)).for_each(|(o, row)| {
        let z = |j: usize| (pot[j] - row[j]) / e + log_w[j];
        let hi = (0..m).map(z).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = (0..m).map(|j| (z(j) - hi).exp()).sum();
        *o = -e * (hi + s.ln());
    });
}

/// Largest potential change since the last kernel build, in units of `e`.
fn drift(now: &[f64], built: &[f64], e: f64) -> f64 {
    now.iter().zip(built).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / e
}

/// L1 column-marginal violation of the plan `(F(g), g)` given `g_next`, the
/// column update for `F(g)`.
fn col_violation(g: &[f64], g_next: &[f64], b: &[f64], e: f64) -> f64 {
    g.iter()
        .zip(g_next)
        .zip(b)
        .map(|((go, gn), bj)| bj * (((go - gn) / e).exp() - 1.0).abs())
        .sum()
}

/// History length of the Anderson extrapolation.
const ANDERSON_MEMORY: usize = 5;

/// Type-II Anderson acceleration of the fixed-point map `g -> T(g)`, with a
/// restart whenever the residual grows well past its best value.
struct Anderson {
    inputs: Vec<Vec<f64>>,
    residuals: Vec<Vec<f64>>,
    best: f64,
}

impl Anderson {
    fn new() -> Self {
        Anderson {
            inputs: Vec::new(),
            residuals: Vec::new(),
            best: f64::INFINITY,
        }
    }

    /// Next iterate given the current input `g` and its image `tg`.
    fn step(&mut self, g: &[f64], tg: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = tg.iter().zip(g).map(|(t, x)| t - x).collect();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > 2.0 * self.best {
            self.inputs.clear();
            self.residuals.clear();
            self.best = norm;
        }
        self.best = self.best.min(norm);
        self.inputs.push(g.to_vec());
        self.residuals.push(r);
        if self.inputs.len() > ANDERSON_MEMORY + 1 {
            self.inputs.remove(0);
            self.residuals.remove(0);
        }
        let k = self.inputs.len() - 1;
        if k == 0 {
            return tg.to_vec();
        }
        let diff = |v: &[Vec<f64>], i: usize| -> Vec<f64> { v[i + 1].iter().zip(&v[i]).map(|(a, b)| a - b).collect() };
        let dr: Vec<Vec<f64>> = (0..k).map(|i| diff(&self.residuals, i)).collect();
        let dx: Vec<Vec<f64>> = (0..k).map(|i| diff(&self.inputs, i)).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut gram: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| dot(&dr[i], &dr[j])).collect()).collect();
        let trace: f64 = (0..k).map(|i| gram[i][i]).sum();
        (0..k).for_each(|i| gram[i][i] += 1e-10 * trace + f64::MIN_POSITIVE);
        let rhs: Vec<f64> = (0..k).map(|i| dot(&dr[i], &self.residuals[k])).collect();
        let Some(gamma) = solve_spd(gram, rhs) else {
            self.inputs.drain(..k);
            self.residuals.drain(..k);
            return tg.to_vec();
        };
        let mut out = tg.to_vec();
        for (i, gi) in gamma.iter().enumerate() {
            out.iter_mut()
                .zip(&dx[i])
                .zip(&dr[i])
                .for_each(|((o, x), r)| *o -= gi * (x + r));
        }
        if out.iter().all(|v| v.is_finite()) {
            out
        } else {
            tg.to_vec()
        }
    }
}

/// Cholesky solve of a small symmetric positive definite system.
fn solve_spd(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let k = b.len();
    for j in 0..k {
        let d = a[j][j] - (0..j).map(|p| a[j][p] * a[j][p]).sum::<f64>();
        if !(d > 0.0) {
            return None;
        }
        a[j][j] = d.sqrt();
        for i in j + 1..k {
            a[i][j] = (a[i][j] - (0..j).map(|p| a[i][p] * a[j][p]).sum::<f64>()) / a[j][j];
        }
    }
    for i in 0..k {
        b[i] = (b[i] - (0..i).map(|p| a[i][p] * b[p]).sum::<f64>()) / a[i][i];
    }
    for i in (0..k).rev() {
        b[i] = (b[i] - (i + 1..k).map(|p| a[p][i] * b[p]).sum::<f64>()) / a[i][i];
    }
    Some(b)
}

/// Log-domain Sinkhorn with geometric epsilon scaling down to `eps`. Each
/// intermediate level runs until the marginals are within
/// `SINKHORN_LEVEL_TOL`; the final level iterates until the violation drops
/// below [`SINKHORN_TOL`] or [`SINKHORN_MAX_ITERS`] sweeps. The column
/// potential is Anderson-extrapolated between sweeps, and sweeps use a
/// truncated kernel that is rebuilt when the potentials drift; the final
/// violation and the transport cost are evaluated on the full kernel.
pub fn sinkhorn_weighted(x: &[Vec<f64>], a: &[f64], y: &[Vec<f64>], b: &[f64], eps: f64) -> Result<SinkhornResult> {
    if x.is_empty() || y.is_empty() || a.len() != x.len() || b.len() != y.len() {
        return Err(Error::Shape(
            "Sinkhorn needs non-empty clouds with matching weights".into(),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {eps}")));
    }
    check_dims(x, y)?;
    if x.iter().chain(y).flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Sinkhorn input has non-finite coordinates".into()));
    }
    let (n, m) = (x.len(), y.len());
    let cost: Vec<f64> = x
        .par_iter()
        .flat_map_iter(|p| y.iter().map(move |q| sq_dist(p, q)))
        .collect();
    let cost_t: Vec<f64> = y
        .par_iter()
        .flat_map_iter(|q| x.iter().map(move |p| sq_dist(p, q)))
        .collect();
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let c_max = cost.iter().copied().fold(0.0, f64::max).max(eps);

    // One sweep maps `g` to `G(F(g))`. The plan `(F(g), g)` has exact row
    // marginals; its column violation is read off the sweep.
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut g_next = vec![0.0; m];
    let mut e = c_max;
    soft_min_dense(&mut f, &g, &cost, &log_b, e);
    let mut iterations;
    let mut violation;
    loop {
        let last = e <= eps;
        let (tol, cap) = if last {
            (SINKHORN_TOL, SINKHORN_MAX_ITERS)
        } else {
            (SINKHORN_LEVEL_TOL, SINKHORN_LEVEL_ITERS)
        };
        iterations = 0;
        let mut rows = SparseKernel::build(&cost, &g, &log_b, e);
        let mut cols = SparseKernel::build(&cost_t, &f, &log_a, e);
        let (mut f_built, mut g_built) = (f.clone(), g.clone());
        let mut accel = Anderson::new();
        loop {
            rows.soft_min(&mut f, &g, &log_b, e);
            if drift(&f, &f_built, e).max(drift(&g, &g_built, e)) > SINKHORN_MAX_DRIFT {
                rows = SparseKernel::build(&cost, &g, &log_b, e);
                rows.soft_min(&mut f, &g, &log_b, e);
                cols = SparseKernel::build(&cost_t, &f, &log_a, e);
                f_built.copy_from_slice(&f);
                g_built.copy_from_slice(&g);
            }
            cols.soft_min(&mut g_next, &f, &log_a, e);
            iterations += 1;
            violation = col_violation(&g, &g_next, b, e);
            if last && (violation < tol || iterations >= cap) {
                // The reported plan uses full-kernel updates.
                soft_min_dense(&mut f, &g, &cost, &log_b, e);
                soft_min_dense(&mut g_next, &f, &cost_t, &log_a, e);
                violation = col_violation(&g, &g_next, b, e);
            }
            if violation < tol || iterations >= cap {
                break;
            }
            g = accel.step(&g, &g_next);
        }
        if last {
            break;
        }
        e = (e * 0.5).max(eps);
        g.copy_from_slice(&g_next);
        soft_min_dense(&mut f, &g, &cost, &log_b, e);
    }
    if !violation.is_finite() {
        return Err(Error::NonFinite("Sinkhorn potentials diverged".into()));
    }
    let total: f64 = cost
        .par_chunks(m)
        .zip(&f)
        .zip(&log_a)
        .map(|((row, fi), la)| {
            row.iter()
                .zip(&g)
                .zip(&log_b)
                .map(|((c, gj), lb)| ((fi + gj - c) / eps + la + lb).exp() * c)
                .sum::<f64>()
        })
        .sum();
    Ok(SinkhornResult {
        cost: total,
        violation,
        iterations,
        converged: violation < SINKHORN_TOL,
    })
}

/// Exact 1-D 2-Wasserstein distance between empirical laws, via the
/// quantile coupling (sizes may differ).
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("w2_1d needs at least one sample per side".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("w2_1d input is not finite".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        // Next breakpoint of either step quantile function, in exact integer form.
        let next_a = (i + 1) * m;
        let next_b = (j + 1) * n;
        let next = next_a.min(next_b) as f64 / (n * m) as f64;
        total += (next - u) * (a[i] - b[j]).powi(2);
        u = next;
        if next_a <= next_b {
            i += 1;
        }
        if next_b <= next_a {
            j += 1;
        }
    }
    Ok(total.sqrt())
}

/// Per-sample magnetization: the average spin for two-letter states, the
/// majority-colour fraction minus `1/q` for `q` colours.
pub fn sample_magnetization(x: &[u8], alphabet: usize) -> f64 {
    let d = x.len() as f64;
    if alphabet == 2 {
        x.iter().map(|&v| if v == 0 { -1.0 } else { 1.0 }).sum::<f64>() / d
    } else {
        let mut counts = vec![0usize; alphabet];
        x.iter().for_each(|&v| counts[v as usize] += 1);
        *counts.iter().max().unwrap_or(&0) as f64 / d - 1.0 / alphabet as f64
    }
}

fn weighted_mean(values: impl Iterator<Item = f64>, weights: Option<&[f64]>) -> Result<f64> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return Err(Error::Domain("empty sample set".into()));
    }
    match weights {
        Some(w) if w.len() != v.len() => Err(Error::Shape("weights and samples differ in length".into())),
        Some(w) => Ok(v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>()),
        None => Ok(v.iter().sum::<f64>() / v.len() as f64),
    }
}

/// Mean per-sample magnetization.
pub fn magnetization(samples: &[Vec<u8>], alphabet: usize, weights: Option<&[f64]>) -> Result<f64> {
    weighted_mean(samples.iter().map(|x| sample_magnetization(x, alphabet)), weights)
}

/// Mean absolute per-sample magnetization.
pub fn abs_magnetization(samples: &[Vec<u8>], alphabet: usize, weights: Option<&[f64]>) -> Result<f64> {
    weighted_mean(samples.iter().map(|x| sample_magnetization(x, alphabet).abs()), weights)
}

/// Centred pair agreement `(q 1[a = b] - 1) / (q - 1)`; the spin product for `q = 2`.
fn pair_corr(a: u8, b: u8, q: usize) -> f64 {
    let same = if a == b { 1.0 } else { 0.0 };
    (q as f64 * same - 1.0) / (q as f64 - 1.0)
}

/// Average correlation at lattice offset `r`, over rows and columns with
/// periodic wrap.
pub fn two_point_corr(
    samples: &[Vec<u8>],
    side: usize,
    alphabet: usize,
    r: usize,
    weights: Option<&[f64]>,
) -> Result<f64> {
    if r >= side {
        return Err(Error::Domain(format!("offset {r} outside [0, {side})")));
    }
    if samples.iter().any(|x| x.len() != side * side) {
        return Err(Error::Shape(format!("states must have length {}", side * side)));
    }
    let per_sample = samples.iter().map(|x| {
        let mut s = 0.0;
        for row in 0..side {
            for col in 0..side {
                let i = row * side + col;
                s += pair_corr(x[i], x[row * side + (col + r) % side], alphabet);
                s += pair_corr(x[i], x[((row + r) % side) * side + col], alphabet);
            }
        }
        s / (2 * side * side) as f64
    });
    weighted_mean(per_sample, weights)
}

/// Empirical (optionally weighted) distribution over all `N^d` states.
pub fn empirical_distribution(samples: &[Vec<u8>], alphabet: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let d = samples.first().map_or(0, Vec::len);
    let count = (alphabet as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
    if count > crate::targets::ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            states: count,
            limit: crate::targets::ENUMERATION_LIMIT,
        });
    }
    if samples.is_empty() {
        return Err(Error::Domain("empty sample set".into()));
    }
    let mut p = vec![0.0; count as usize];
    for (k, x) in samples.iter().enumerate() {
        if x.len() != d || x.iter().any(|&v| v as usize >= alphabet) {
            return Err(Error::Shape(format!("sample {k} does not fit the state space")));
        }
        p[state_to_index(x, alphabet)] += weights.map_or(1.0, |w| w[k]);
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape("distributions differ in support size".into()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// TV between (weighted) samples and an exact distribution.
pub fn tv_to_exact(samples: &[Vec<u8>], exact: &ExactDistribution, weights: Option<&[f64]>) -> Result<f64> {
    let p = empirical_distribution(samples, exact.alphabet, weights)?;
    total_variation(&p, &exact.probs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogZEstimate {
    pub log_z: f64,
    /// Delta-method standard error of `log_z`.
    pub std_error: f64,
    pub samples: usize,
}

pub const LOGZ_MIN_SAMPLES: usize = 100;

/// `log mean exp` of base log weights with a delta-method standard error.
pub fn logz_estimate(base_log_weights: &[f64]) -> Result<LogZEstimate> {
    let n = base_log_weights.len();
    if n < LOGZ_MIN_SAMPLES {
        return Err(Error::Domain(format!(
            "log Z needs at least {LOGZ_MIN_SAMPLES} records, got {n}"
        )));
    }
    if base_log_weights.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("log weight is NaN or +inf".into()));
    }
    let max = base_log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::WeightCollapse("every log weight is -inf".into()));
    }
    let w: Vec<f64> = base_log_weights.iter().map(|l| (l - max).exp()).collect();
    let mean = w.iter().sum::<f64>() / n as f64;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(LogZEstimate {
        log_z: max + mean.ln(),
        std_error: (var / n as f64).sqrt() / mean,
        samples: n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeHistogram {
    pub frequencies: Vec<f64>,
    pub unassigned: f64,
    /// Whether some pair of balls overlaps; points then go to the nearest centre.
    pub overlapping: bool,
}

/// Fraction of samples within `radius` of each centre, nearest centre first.
pub fn mode_histogram(samples: &[Vec<f64>], centers: &[Vec<f64>], radius: f64) -> Result<ModeHistogram> {
    if samples.is_empty() {
        return Err(Error::Domain("empty sample set".into()));
    }
    if centers.is_empty() || !(radius > 0.0) {
        return Err(Error::Domain("need at least one centre and a positive radius".into()));
    }
    check_dims(samples, centers)?;
    let mut overlapping = false;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let d = sq_dist(&centers[i], &centers[j]).sqrt();
            if d == 0.0 {
                return Err(Error::Domain(format!("centres {i} and {j} coincide")));
            }
            overlapping |= d < 2.0 * radius;
        }
    }
    if overlapping {
        log::warn!("mode balls overlap; assigning points to the nearest centre");
    }
    let mut counts = vec![0usize; centers.len()];
    let mut none = 0usize;
    for x in samples {
        let (k, d2) = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, sq_dist(x, c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("centres are non-empty");
        if d2 <= radius * radius {
            counts[k] += 1;
        } else {
            none += 1;
        }
    }
    let n = samples.len() as f64;
    Ok(ModeHistogram {
        frequencies: counts.iter().map(|&c| c as f64 / n).collect(),
        unassigned: none as f64 / n,
        overlapping,
    })
}
