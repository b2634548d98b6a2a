use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::MASK;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Largest state space [`enumerate_exact`] will sum over.
pub const ENUMERATION_LIMIT: u128 = 1 << 20;

/// Largest graph accepted by max-cut targets.
pub const MAXCUT_MAX_VERTICES: usize = 20;

/// Discrete models. States are stored as value indices: Ising spin `-1/+1` is
/// index `0/1`, Potts colour `k` is index `k`, a max-cut side is `0/1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscreteKind {
    /// `V = -J sum_{i~j} s_i s_j` on a periodic `side x side` lattice.
    Ising { side: usize, coupling: f64 },
    /// `V = -J sum_{i~j} 1[x_i = x_j]` on a periodic lattice with `states` colours.
    Potts { side: usize, coupling: f64, states: usize },
    /// `V = -(number of cut edges)`.
    MaxCut {
        vertices: usize,
        edges: Vec<(usize, usize)>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTarget {
    pub kind: DiscreteKind,
    pub beta: f64,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

/// Edges of the periodic `side x side` lattice: each site links right and down,
/// giving `2 side^2` edges (with repeats when `side = 2`).
pub fn lattice_edges(side: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(2 * side * side);
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            edges.push((i, r * side + (c + 1) % side));
            edges.push((i, ((r + 1) % side) * side + c));
        }
    }
    edges
}

/// Erdos-Renyi graph with edge probability `p`, fixed by `seed`.
pub fn random_graph(vertices: usize, p: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = seeded(seed);
    let mut edges = Vec::new();
    for i in 0..vertices {
        for j in i + 1..vertices {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

impl DiscreteTarget {
    pub fn new(kind: DiscreteKind, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be finite and nonnegative, got {beta}"
            )));
        }
        let (n, edges) = match &kind {
            DiscreteKind::Ising { side, coupling } | DiscreteKind::Potts { side, coupling, .. } => {
                if *side < 2 {
                    return Err(Error::Config("lattice side must be at least 2".into()));
                }
                if !coupling.is_finite() {
                    return Err(Error::Config("coupling must be finite".into()));
                }
                if let DiscreteKind::Potts { states, .. } = &kind {
                    if *states < 2 || *states >= MASK as usize {
                        return Err(Error::Config(format!("Potts needs 2..{} states", MASK)));
                    }
                }
                (side * side, lattice_edges(*side))
            }
            DiscreteKind::MaxCut { vertices, edges } => {
                if *vertices == 0 || *vertices > MAXCUT_MAX_VERTICES {
                    return Err(Error::Config(format!(
                        "max-cut graphs need 1..={MAXCUT_MAX_VERTICES} vertices, got {vertices}"
                    )));
                }
                let mut seen = std::collections::HashSet::new();
                for &(a, b) in edges {
                    if a >= *vertices || b >= *vertices || a == b {
                        return Err(Error::Config(format!("invalid edge ({a}, {b})")));
                    }
                    if !seen.insert((a.min(b), a.max(b))) {
                        return Err(Error::Config(format!("duplicate edge ({a}, {b})")));
                    }
                }
                (*vertices, edges.clone())
            }
        };
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        Ok(Self {
            kind,
            beta,
            edges,
            neighbors,
        })
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.kind.clone(), beta)
    }

    /// Sequence length `d`.
    pub fn length(&self) -> usize {
        self.neighbors.len()
    }

    /// Alphabet size `N` (mask excluded).
    pub fn alphabet(&self) -> usize {
        match &self.kind {
            DiscreteKind::Potts { states, .. } => *states,
            _ => 2,
        }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, site: usize) -> &[usize] {
        &self.neighbors[site]
    }

    /// Lattice side, for lattice models.
    pub fn side(&self) -> Option<usize> {
        match &self.kind {
            DiscreteKind::Ising { side, .. } | DiscreteKind::Potts { side, .. } => Some(*side),
            DiscreteKind::MaxCut { .. } => None,
        }
    }

    pub fn check_state(&self, x: &[u8]) -> Result<()> {
        if x.len() != self.length() {
            return Err(Error::Shape(format!(
                "state of length {} for a length-{} target",
                x.len(),
                self.length()
            )));
        }
        let n = self.alphabet();
        if let Some(bad) = x.iter().find(|&&v| v as usize >= n) {
            return Err(Error::Domain(format!("value {bad} outside alphabet of size {n}")));
        }
        Ok(())
    }

    fn bond(&self, a: u8, b: u8) -> f64 {
        match &self.kind {
            DiscreteKind::Ising { coupling, .. } => {
                if a == b {
                    -coupling
                } else {
                    *coupling
                }
            }
            DiscreteKind::Potts { coupling, .. } => {
                if a == b {
                    -coupling
                } else {
                    0.0
                }
            }
            DiscreteKind::MaxCut { .. } => {
                if a == b {
                    0.0
                } else {
                    -1.0
                }
            }
        }
    }

    pub fn potential(&self, x: &[u8]) -> Result<f64> {
        self.check_state(x)?;
        Ok(self.potential_unchecked(x))
    }

    pub(crate) fn potential_unchecked(&self, x: &[u8]) -> f64 {
        self.edges.iter().map(|&(a, b)| self.bond(x[a], x[b])).sum()
    }

    /// Change in `V` when site `i` is set to `value`.
    pub fn delta_potential(&self, x: &[u8], i: usize, value: u8) -> f64 {
        let old = x[i];
        if old == value {
            return 0.0;
        }
        self.neighbors[i]
            .iter()
            .map(|&j| self.bond(value, x[j]) - self.bond(old, x[j]))
            .sum()
    }

    /// Unnormalized log density `-beta V(x)`.
    pub fn log_target(&self, x: &[u8]) -> Result<f64> {
        let v = self.potential(x)?;
        Ok(if self.beta == 0.0 { 0.0 } else { -self.beta * v })
    }

    /// Number of states `N^d`.
    pub fn state_count(&self) -> u128 {
        (self.alphabet() as u128)
            .checked_pow(self.length() as u32)
            .unwrap_or(u128::MAX)
    }

    /// `d ln N`, the constant `-log nu` of the uniform reference.
    pub fn log_state_count(&self) -> f64 {
        self.length() as f64 * (self.alphabet() as f64).ln()
    }

    /// Spin values `-1/+1` of a two-letter state.
    pub fn spins(x: &[u8]) -> impl Iterator<Item = f64> + '_ {
        x.iter().map(|&v| if v == 0 { -1.0 } else { 1.0 })
    }
}

/// The full normalized distribution of a small discrete target.
#[derive(Clone, Debug)]
pub struct ExactDistribution {
    pub length: usize,
    pub alphabet: usize,
    /// All states, flattened; state `k` has base-`N` digits of `k`, least
    /// significant first.
    pub states: Vec<u8>,
    pub log_weights: Vec<f64>,
    pub probs: Vec<f64>,
    pub log_z: f64,
}

/// Base-`N` digits of `index`, least significant first.
pub fn index_to_state(index: usize, length: usize, alphabet: usize, out: &mut [u8]) {
    let mut k = index;
    for v in out.iter_mut().take(length) {
        *v = (k % alphabet) as u8;
        k /= alphabet;
    }
}

pub fn state_to_index(x: &[u8], alphabet: usize) -> usize {
    x.iter().rev().fold(0, |acc, &v| acc * alphabet + v as usize)
}

/// Stable `log sum exp`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Enumerates every state and normalizes `exp(-beta V)`.
pub fn enumerate_exact(target: &DiscreteTarget) -> Result<ExactDistribution> {
    enumerate_with(target, |x| -target.beta * target.potential_unchecked(x))
}

fn enumerate_with(target: &DiscreteTarget, log_w: impl Fn(&[u8]) -> f64) -> Result<ExactDistribution> {
    let count = target.state_count();
    if count > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            states: count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let (d, n) = (target.length(), target.alphabet());
    let count = count as usize;
    let mut states = vec![0u8; count * d];
    let mut log_weights = Vec::with_capacity(count);
    for (k, x) in states.chunks_mut(d).enumerate() {
        index_to_state(k, d, n, x);
        log_weights.push(log_w(x));
    }
    let log_z = log_sum_exp(&log_weights);
    let probs = log_weights.iter().map(|l| (l - log_z).exp()).collect();
    Ok(ExactDistribution {
        length: d,
        alphabet: n,
        states,
        log_weights,
        probs,
        log_z,
    })
}

/// `pi^{1-lambda} nu^lambda` with `nu` uniform, normalized.
pub fn exact_interpolant(target: &DiscreteTarget, lambda: f64) -> Result<ExactDistribution> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let scale = (1.0 - lambda) * target.beta;
    enumerate_with(target, |x| {
        if scale == 0.0 {
            0.0
        } else {
            -scale * target.potential_unchecked(x)
        }
    })
}

impl ExactDistribution {
    pub fn state(&self, k: usize) -> &[u8] {
        &self.states[k * self.length..(k + 1) * self.length]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Expectation of `f` under the distribution.
    pub fn expect(&self, f: impl Fn(&[u8]) -> f64) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| p * f(self.state(k))).sum()
    }

    /// Conditional law of every masked position given the unmasked entries of
    /// `x`, as a `d x N` row-stochastic array. Unmasked rows are one-hot.
    pub fn conditionals(&self, x: &[u8]) -> Array2<f64> {
        let (d, n) = (self.length, self.alphabet);
        let mut out = Array2::zeros((d, n));
        let mut total = 0.0;
        for (k, &p) in self.probs.iter().enumerate() {
            let s = self.state(k);
            if x.iter().zip(s).any(|(&a, &b)| a != MASK && a != b) {
                continue;
            }
            total += p;
            for (i, &v) in s.iter().enumerate() {
                out[[i, v as usize]] += p;
            }
        }
        if total > 0.0 {
            out /= total;
        }
        out
    }
}

/// Exhaustive max-cut: optimum size and one optimal assignment.
pub fn maxcut_brute(vertices: usize, edges: &[(usize, usize)]) -> Result<(usize, Vec<u8>)> {
    if vertices > MAXCUT_MAX_VERTICES {
        return Err(Error::TooLarge {
            states: 1u128 << vertices,
            limit: 1u128 << MAXCUT_MAX_VERTICES,
        });
    }
    let mut best = (0usize, vec![0u8; vertices]);
    for mask in 0u32..(1u32 << vertices) {
        let cut = edges
            .iter()
            .filter(|&&(a, b)| (mask >> a & 1) != (mask >> b & 1))
            .count();
        if cut > best.0 {
            best = (cut, (0..vertices).map(|i| (mask >> i & 1) as u8).collect());
        }
    }
    Ok(best)
}

/// Number of edges cut by a two-side assignment.
pub fn cut_size(edges: &[(usize, usize)], x: &[u8]) -> usize {
    edges.iter().filter(|&&(a, b)| x[a] != x[b]).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ising(side: usize, beta: f64) -> DiscreteTarget {
        DiscreteTarget::new(DiscreteKind::Ising { side, coupling: 1.0 }, beta).unwrap()
    }

    #[test]
    fn lattice_has_two_l_squared_edges() {
        for side in 2..6 {
            assert_eq!(lattice_edges(side).len(), 2 * side * side);
        }
        let t = ising(4, 1.0);
        assert!((0..16).all(|i| t.neighbors(i).len() == 4));
    }

    #[test]
    fn ising_and_potts_values() {
        let t = ising(3, 0.5);
        let mut x = vec![1u8; 9];
        assert_eq!(t.potential(&x).unwrap(), -18.0);
        assert_eq!(t.log_target(&x).unwrap(), 9.0);
        x[4] = 0;
        assert_eq!(t.potential(&x).unwrap(), -10.0);
        let potts = DiscreteTarget::new(
            DiscreteKind::Potts {
                side: 3,
                coupling: 1.0,
                states: 4,
            },
            1.0,
        )
        .unwrap();
        assert_eq!(potts.potential(&[2u8; 9]).unwrap(), -18.0);
        assert!(matches!(potts.potential(&[4u8; 9]), Err(Error::Domain(_))));
    }

    #[test]
    fn delta_potential_matches_recomputation() {
        let potts = DiscreteTarget::new(
            DiscreteKind::Potts {
                side: 3,
                coupling: 0.7,
                states: 3,
            },
            1.0,
        )
        .unwrap();
        let mut rng = seeded(3);
        for _ in 0..200 {
            let x: Vec<u8> = (0..9).map(|_| rng.random_range(0..3)).collect();
            let i = rng.random_range(0..9);
            let v = rng.random_range(0..3);
            let mut y = x.clone();
            y[i] = v;
            let direct = potts.potential(&y).unwrap() - potts.potential(&x).unwrap();
            assert!((potts.delta_potential(&x, i, v) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn maxcut_examples() {
        let tri = [(0, 1), (1, 2), (0, 2)];
        assert_eq!(maxcut_brute(3, &tri).unwrap().0, 2);
        assert_eq!(maxcut_brute(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap().0, 4);
        assert_eq!(maxcut_brute(5, &[]).unwrap().0, 0);
        let t = DiscreteTarget::new(
            DiscreteKind::MaxCut {
                vertices: 3,
                edges: tri.to_vec(),
            },
            1.0,
        )
        .unwrap();
        let best = (0..8usize)
            .map(|m| {
                let x: Vec<u8> = (0..3).map(|i| (m >> i & 1) as u8).collect();
                t.potential(&x).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best, -2.0);
        assert!(maxcut_brute(21, &[]).is_err());
        assert!(DiscreteTarget::new(
            DiscreteKind::MaxCut {
                vertices: 3,
                edges: vec![(0, 0)]
            },
            1.0
        )
        .is_err());
    }

    #[test]
    fn enumeration_at_zero_beta_is_uniform() {
        let e = enumerate_exact(&ising(2, 0.0)).unwrap();
        assert_eq!(e.len(), 16);
        assert!((e.log_z - 16f64.ln()).abs() < 1e-14);
        assert!(e.probs.iter().all(|p| (p - 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn enumeration_log_z_is_order_independent() {
        let t = ising(3, 0.3);
        let e = enumerate_exact(&t).unwrap();
        assert!((e.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Re-sum in reverse order, grouping by energy level.
        let mut by_level = std::collections::BTreeMap::new();
        let mut x = vec![0u8; 9];
        for k in (0..512).rev() {
            index_to_state(k, 9, 2, &mut x);
            *by_level.entry(t.potential(&x).unwrap() as i64).or_insert(0u64) += 1;
        }
        let z: f64 = by_level.iter().map(|(&v, &c)| c as f64 * (-0.3 * v as f64).exp()).sum();
        assert!((z.ln() - e.log_z).abs() < 1e-10);
    }

    #[test]
    fn global_flip_symmetry() {
        let e = enumerate_exact(&ising(3, 0.8)).unwrap();
        let mut flipped = vec![0u8; 9];
        for k in 0..e.len() {
            for (f, &v) in flipped.iter_mut().zip(e.state(k)) {
                *f = 1 - v;
            }
            assert!((e.probs[k] - e.probs[state_to_index(&flipped, 2)]).abs() < 1e-15);
        }
        let m = e.expect(|x| DiscreteTarget::spins(x).sum::<f64>() / 9.0);
        assert!(m.abs() < 1e-14);
    }

    #[test]
    fn translation_invariance() {
        let t = DiscreteTarget::new(
            DiscreteKind::Potts {
                side: 4,
                coupling: 1.0,
                states: 3,
            },
            1.0,
        )
        .unwrap();
        let mut rng = seeded(9);
        for _ in 0..50 {
            let x: Vec<u8> = (0..16).map(|_| rng.random_range(0..3)).collect();
            let shifted: Vec<u8> = (0..16).map(|i| x[(i / 4) * 4 + (i % 4 + 1) % 4]).collect();
            let down: Vec<u8> = (0..16).map(|i| x[((i / 4 + 1) % 4) * 4 + i % 4]).collect();
            let v = t.potential(&x).unwrap();
            assert_eq!(v, t.potential(&shifted).unwrap());
            assert_eq!(v, t.potential(&down).unwrap());
        }
    }

    #[test]
    fn size_guard() {
        let t = ising(5, 0.1);
        assert!(matches!(enumerate_exact(&t), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn interpolant_endpoints_and_recomputation() {
        let t = ising(3, 0.6);
        let uniform = exact_interpolant(&t, 1.0).unwrap();
        assert!(uniform.probs.iter().all(|p| (p - 1.0 / 512.0).abs() < 1e-15));
        let target = exact_interpolant(&t, 0.0).unwrap();
        let e = enumerate_exact(&t).unwrap();
        assert!(target.probs.iter().zip(&e.probs).all(|(a, b)| (a - b).abs() < 1e-15));
        let half = exact_interpolant(&t, 0.5).unwrap();
        // Second pass: normalize pi^(1/2) directly from the enumerated probabilities.
        let roots: Vec<f64> = e.probs.iter().map(|p| p.sqrt()).collect();
        let total: f64 = roots.iter().sum();
        for (a, b) in half.probs.iter().zip(&roots) {
            assert!((a - b / total).abs() < 1e-12);
        }
        assert!(exact_interpolant(&t, 1.5).is_err());
    }

    #[test]
    fn conditionals_are_normalized() {
        let e = enumerate_exact(&ising(2, 0.4)).unwrap();
        let c = e.conditionals(&[MASK, 1, MASK, 0]);
        for row in c.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(c[[1, 1]], 1.0);
        let all = e.conditionals(&[MASK; 4]);
        assert!(all.iter().all(|&p| (p - 0.5).abs() < 1e-12));
    }
}
