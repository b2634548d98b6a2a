//! MCMC references for lattice targets: single-site Metropolis-Hastings and
//! Swendsen-Wang cluster updates. Exact interpolants, partition functions and
//! brute-force max-cut live in [`crate::targets`].

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, PdnsRng};
use crate::targets::{DiscreteKind, DiscreteTarget};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainKind {
    Mh,
    Sw,
}

fn d_burn() -> usize {
    10_000
}
fn d_thin() -> usize {
    10
}
fn d_chains() -> usize {
    1
}

/// Chain protocol. One sweep is `d` single-site proposals for MH or one full
/// cluster update for SW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    #[serde(default = "d_burn")]
    pub burn_in: usize,
    #[serde(default = "d_thin")]
    pub thin: usize,
    #[serde(default = "d_chains")]
    pub chains: usize,
    /// Total samples kept, split evenly across chains.
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.chains == 0 || self.samples == 0 {
            return Err(Error::Config("thin, chains and samples must be positive".into()));
        }
        Ok(())
    }
}

fn lattice_coupling(target: &DiscreteTarget) -> Result<f64> {
    match target.kind {
        DiscreteKind::Ising { coupling, .. } | DiscreteKind::Potts { coupling, .. } => Ok(coupling),
        DiscreteKind::MaxCut { .. } => Err(Error::Config("MCMC baselines need an Ising or Potts target".into())),
    }
}

/// One MH sweep: `d` proposals, each at a uniform site with a uniform value
/// (the current value included, which is always accepted).
pub fn mh_sweep(target: &DiscreteTarget, x: &mut [u8], rng: &mut PdnsRng) -> usize {
    let (d, n) = (x.len(), target.alphabet());
    let mut accepted = 0;
    for _ in 0..d {
        let i = rng.random_range(0..d);
        let v = rng.random_range(0..n) as u8;
        let dv = target.delta_potential(x, i, v);
        let log_a = -target.beta * dv;
        if log_a >= 0.0 || rng.random::<f64>().ln() < log_a {
            x[i] = v;
            accepted += 1;
        }
    }
    accepted
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Bond-opening probability for equal neighbours.
pub fn sw_bond_probability(target: &DiscreteTarget) -> Result<f64> {
    let j = lattice_coupling(target)?;
    let scale = if matches!(target.kind, DiscreteKind::Ising { .. }) {
        2.0
    } else {
        1.0
    };
    Ok(-(-scale * target.beta * j).exp_m1())
}

/// One Swendsen-Wang update: open bonds between equal neighbours, then give
/// every cluster a uniformly drawn value.
pub fn sw_sweep(target: &DiscreteTarget, p_bond: f64, x: &mut [u8], rng: &mut PdnsRng) {
    let d = x.len();
    let mut parent: Vec<usize> = (0..d).collect();
    for &(a, b) in target.edges() {
        if x[a] == x[b] && rng.random::<f64>() < p_bond {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let n = target.alphabet();
    let mut label = vec![u8::MAX; d];
    for i in 0..d {
        let r = find(&mut parent, i);
        if label[r] == u8::MAX {
            label[r] = rng.random_range(0..n) as u8;
        }
        x[i] = label[r];
    }
}

fn run_chain(
    target: &DiscreteTarget,
    kind: ChainKind,
    cfg: &ChainConfig,
    p_bond: f64,
    chain: usize,
    keep: usize,
) -> Vec<Vec<u8>> {
    let mut rng = stream(cfg.seed, chain as u64);
    let n = target.alphabet();
    let mut x: Vec<u8> = (0..target.length()).map(|_| rng.random_range(0..n) as u8).collect();
    let sweep = |x: &mut Vec<u8>, rng: &mut PdnsRng| match kind {
        ChainKind::Mh => {
            mh_sweep(target, x, rng);
        }
        ChainKind::Sw => sw_sweep(target, p_bond, x, rng),
    };
    for _ in 0..cfg.burn_in {
        sweep(&mut x, &mut rng);
    }
    let mut out = Vec::with_capacity(keep);
    for _ in 0..keep {
        for _ in 0..cfg.thin {
            sweep(&mut x, &mut rng);
        }
        out.push(x.clone());
    }
    out
}

/// Runs `cfg.chains` independent chains in parallel and returns the thinned
/// post-burn-in samples, chain by chain.
pub fn run_chains(target: &DiscreteTarget, kind: ChainKind, cfg: &ChainConfig) -> Result<Vec<Vec<u8>>> {
    cfg.validate()?;
    let j = lattice_coupling(target)?;
    let p_bond = match kind {
        ChainKind::Sw => {
            if !(j > 0.0) {
                return Err(Error::Config(format!(
                    "Swendsen-Wang needs a ferromagnetic coupling, got {j}"
                )));
            }
            sw_bond_probability(target)?
        }
        ChainKind::Mh => 0.0,
    };
    let per = cfg.samples / cfg.chains;
    let extra = cfg.samples % cfg.chains;
    let parts: Vec<Vec<Vec<u8>>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(target, kind, cfg, p_bond, c, per + usize::from(c < extra)))
        .collect();
    Ok(parts.into_iter().flatten().collect())
}

pub fn mh_chain(target: &DiscreteTarget, cfg: &ChainConfig) -> Result<Vec<Vec<u8>>> {
    run_chains(target, ChainKind::Mh, cfg)
}

pub fn sw_chain(target: &DiscreteTarget, cfg: &ChainConfig) -> Result<Vec<Vec<u8>>> {
    run_chains(target, ChainKind::Sw, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{enumerate_exact, state_to_index};

    fn ising(side: usize, beta: f64) -> DiscreteTarget {
        DiscreteTarget::new(DiscreteKind::Ising { side, coupling: 1.0 }, beta).unwrap()
    }

    fn cfg(samples: usize, seed: u64) -> ChainConfig {
        ChainConfig {
            burn_in: 500,
            thin: 5,
            chains: 4,
            samples,
            seed,
        }
    }

    fn mean_abs_mag(samples: &[Vec<u8>]) -> f64 {
        samples
            .iter()
            .map(|x| (DiscreteTarget::spins(x).sum::<f64>() / x.len() as f64).abs())
            .sum::<f64>()
            / samples.len() as f64
    }

    fn chi_square_uniform(samples: &[Vec<u8>], states: usize) -> f64 {
        let mut counts = vec![0.0; states];
        for x in samples {
            counts[state_to_index(x, 2)] += 1.0;
        }
        let e = samples.len() as f64 / states as f64;
        counts.iter().map(|c| (c - e) * (c - e) / e).sum()
    }

    #[test]
    fn beta_zero_is_uniform() {
        let t = ising(3, 0.0);
        for kind in [ChainKind::Mh, ChainKind::Sw] {
            let s = run_chains(&t, kind, &cfg(51_200, 3)).unwrap();
            let chi = chi_square_uniform(&s, 512);
            // 511 degrees of freedom: the 0.99 quantile is about 588.
            assert!(chi < 588.0, "{kind:?}: chi-square {chi}");
        }
        assert_eq!(sw_bond_probability(&t).unwrap(), 0.0);
    }

    #[test]
    fn mh_accepts_everything_at_beta_zero() {
        let t = ising(3, 0.0);
        let mut x = vec![0u8; 9];
        let mut rng = stream(1, 0);
        assert_eq!(mh_sweep(&t, &mut x, &mut rng), 9);
    }

    #[test]
    fn sw_concentrates_at_low_temperature() {
        let t = ising(3, 2.0);
        let s = sw_chain(&t, &cfg(4000, 5)).unwrap();
        let aligned = s.iter().filter(|x| x.iter().all(|&v| v == x[0])).count();
        assert!(aligned as f64 / s.len() as f64 >= 0.95);
    }

    #[test]
    fn chains_match_enumeration_on_small_lattices() {
        for beta in [0.0, 0.3, 0.6] {
            let t = ising(3, beta);
            let exact = enumerate_exact(&t).unwrap();
            let m = exact.expect(|x| (DiscreteTarget::spins(x).sum::<f64>() / 9.0).abs());
            let e = exact.expect(|x| t.potential(x).unwrap() / 9.0);
            for kind in [ChainKind::Mh, ChainKind::Sw] {
                let s = run_chains(&t, kind, &cfg(20_000, 7)).unwrap();
                let em = s.iter().map(|x| t.potential(x).unwrap() / 9.0).sum::<f64>() / s.len() as f64;
                assert!((mean_abs_mag(&s) - m).abs() < 0.02, "{kind:?} beta {beta}");
                assert!((em - e).abs() < 0.02, "{kind:?} beta {beta}: {em} vs {e}");
            }
        }
    }

    #[test]
    fn potts_chains_agree_with_enumeration() {
        let t = DiscreteTarget::new(
            DiscreteKind::Potts {
                side: 2,
                coupling: 1.0,
                states: 3,
            },
            0.5,
        )
        .unwrap();
        let exact = enumerate_exact(&t).unwrap();
        let e = exact.expect(|x| t.potential(x).unwrap());
        for kind in [ChainKind::Mh, ChainKind::Sw] {
            let s = run_chains(&t, kind, &cfg(20_000, 9)).unwrap();
            let em = s.iter().map(|x| t.potential(x).unwrap()).sum::<f64>() / s.len() as f64;
            assert!((em - e).abs() < 0.1, "{kind:?}: {em} vs {e}");
        }
    }

    #[test]
    fn rejects_maxcut_and_antiferromagnet() {
        let mc = DiscreteTarget::new(
            DiscreteKind::MaxCut {
                vertices: 3,
                edges: vec![(0, 1)],
            },
            1.0,
        )
        .unwrap();
        assert!(mh_chain(&mc, &cfg(10, 1)).is_err());
        let af = DiscreteTarget::new(
            DiscreteKind::Ising {
                side: 3,
                coupling: -1.0,
            },
            1.0,
        )
        .unwrap();
        assert!(sw_chain(&af, &cfg(10, 1)).is_err());
        assert!(mh_chain(&af, &cfg(10, 1)).is_ok());
    }

    #[test]
    fn seeded_chains_repeat() {
        let t = ising(4, 0.4);
        assert_eq!(sw_chain(&t, &cfg(100, 2)).unwrap(), sw_chain(&t, &cfg(100, 2)).unwrap());
    }
}
