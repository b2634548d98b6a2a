//! Euler-Maruyama simulation of the controlled SDE
//! `dX = (-(alpha_t/2) X + sigma_t u(t, X)) dt + sigma_t dW`
//! with the log Radon-Nikodym derivative `log dP_ref/dP_u` accumulated along
//! each path from the same Brownian increments that drive the state.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::approximator::ControlNet;
use crate::error::{Error, Result};
use crate::ou::{GaussianReward, OuSchedule};
use crate::rng::{chunks, fork, stream, PdnsRng};
use crate::targets::ContinuousTarget;

/// A time-dependent vector field evaluated on a batch of states (one per row).
pub trait ControlField: Sync {
    fn dim(&self) -> usize;
    fn eval_batch(&self, t: f64, xs: ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl ControlField for ControlNet<'_> {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn eval_batch(&self, t: f64, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let ts = vec![t; xs.nrows()];
        self.spec.forward_batch(self.params, &ts, xs)
    }
}

/// `u = 0`: the uncontrolled reference.
#[derive(Clone, Copy, Debug)]
pub struct ZeroControl(pub usize);

impl ControlField for ZeroControl {
    fn dim(&self) -> usize {
        self.0
    }

    fn eval_batch(&self, _t: f64, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(Array2::zeros(xs.dim()))
    }
}

/// A control that does not depend on time or state.
#[derive(Clone, Debug)]
pub struct ConstantControl(pub Vec<f64>);

impl ControlField for ConstantControl {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn eval_batch(&self, _t: f64, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(xs.dim());
        for mut row in out.rows_mut() {
            row.iter_mut().zip(&self.0).for_each(|(o, &c)| *o = c);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub x: Vec<f64>,
    /// `log dP_ref/dP_u` along the realized path.
    pub log_rn: f64,
    /// `int 1/2 |u|^2 dt`.
    pub control_energy: f64,
    /// Index of the trajectory within its batch.
    pub tag: u64,
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub records: Vec<TrajectoryRecord>,
    pub dropped: usize,
    pub seed: u64,
}

fn check_drops(dropped: usize, total: usize) -> Result<()> {
    if dropped * 100 > total {
        return Err(Error::TooManyDropped { dropped, total });
    }
    if dropped > 0 {
        log::warn!("{dropped} of {total} trajectories left the finite range and were dropped");
    }
    Ok(())
}

fn standard_normal_block<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Simulates `n` controlled paths from `N(0, sigma_bar^2 I)`.
pub fn rollout<C: ControlField + ?Sized>(
    control: &C,
    sched: &OuSchedule,
    n: usize,
    rng: &mut PdnsRng,
) -> Result<Rollout> {
    let seed = fork(rng);
    rollout_seeded(control, sched, n, seed)
}

/// As [`rollout`], from an explicit base seed.
pub fn rollout_seeded<C: ControlField + ?Sized>(
    control: &C,
    sched: &OuSchedule,
    n: usize,
    seed: u64,
) -> Result<Rollout> {
    let d = control.dim();
    let parts: Vec<Result<(Vec<TrajectoryRecord>, usize)>> = chunks(n)
        .into_par_iter()
        .enumerate()
        .map(|(ci, (start, len))| rollout_chunk(control, sched, d, start, len, &mut stream(seed, ci as u64)))
        .collect();
    let mut records = Vec::with_capacity(n);
    let mut dropped = 0;
    for part in parts {
        let (r, dr) = part?;
        records.extend(r);
        dropped += dr;
    }
    check_drops(dropped, n)?;
    Ok(Rollout { records, dropped, seed })
}

fn rollout_chunk<C: ControlField + ?Sized>(
    control: &C,
    sched: &OuSchedule,
    d: usize,
    start: usize,
    len: usize,
    rng: &mut PdnsRng,
) -> Result<(Vec<TrajectoryRecord>, usize)> {
    let dt = sched.dt();
    let sqrt_dt = dt.sqrt();
    let mut x = standard_normal_block(rng, len, d) * sched.sigma_bar;
    let mut log_rn = vec![0.0; len];
    let mut energy = vec![0.0; len];
    let mut alive = vec![true; len];
    for k in 0..sched.steps {
        let t = k as f64 * dt;
        let (half_alpha, sigma) = (0.5 * sched.alpha(t), sched.sigma(t));
        let u = control.eval_batch(t, x.view())?;
        let dw = standard_normal_block(rng, len, d) * sqrt_dt;
        for i in 0..len {
            if !alive[i] {
                continue;
            }
            let (mut xi, ui, dwi) = (x.row_mut(i), u.row(i), dw.row(i));
            let mut u2 = 0.0;
            let mut u_dw = 0.0;
            for j in 0..d {
                u2 += ui[j] * ui[j];
                u_dw += ui[j] * dwi[j];
                xi[j] += (-half_alpha * xi[j] + sigma * ui[j]) * dt + sigma * dwi[j];
            }
            log_rn[i] -= 0.5 * u2 * dt + u_dw;
            energy[i] += 0.5 * u2 * dt;
            if !(log_rn[i].is_finite() && xi.iter().all(|v| v.is_finite())) {
                alive[i] = false;
                xi.fill(0.0);
            }
        }
    }
    let mut records = Vec::with_capacity(len);
    for i in 0..len {
        if alive[i] {
            records.push(TrajectoryRecord {
                x: x.row(i).to_vec(),
                log_rn: log_rn[i],
                control_energy: energy[i],
                tag: (start + i) as u64,
            });
        }
    }
    let dropped = len - records.len();
    Ok((records, dropped))
}

/// Mean of `control_energy - r(x_T)` over the records.
pub fn soc_cost(records: &[TrajectoryRecord], reward: &GaussianReward) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Domain("no records".into()));
    }
    let mut total = 0.0;
    for r in records {
        total += r.control_energy - reward.reward(&r.x)?;
    }
    Ok(total / records.len() as f64)
}

/// Terminal states of the annealed dynamics whose drift interpolates from the
/// reference score to the target score.
pub fn annealed_rollout(
    target: &ContinuousTarget,
    sched: &OuSchedule,
    n: usize,
    rng: &mut PdnsRng,
) -> Result<Vec<Vec<f64>>> {
    let seed = fork(rng);
    let d = target.dim();
    let parts: Vec<Result<(Vec<Vec<f64>>, usize)>> = chunks(n)
        .into_par_iter()
        .enumerate()
        .map(|(ci, (_, len))| {
            let rng = &mut stream(seed, ci as u64);
            let dt = sched.dt();
            let sqrt_dt = dt.sqrt();
            let mut x = standard_normal_block(rng, len, d) * sched.sigma_bar;
            let mut alive = vec![true; len];
            let mut drift = vec![0.0; d];
            for k in 0..sched.steps {
                let t = k as f64 * dt;
                let sigma = sched.sigma(t);
                let dw = standard_normal_block(rng, len, d) * sqrt_dt;
                for i in 0..len {
                    if !alive[i] {
                        continue;
                    }
                    let mut xi = x.row_mut(i);
                    let ok = match sched.annealed_drift(target, t, xi.as_slice().expect("row-major"), &mut drift) {
                        Ok(()) => true,
                        Err(Error::NonFinite(_)) => false,
                        Err(e) => return Err(e),
                    };
                    for j in 0..d {
                        xi[j] += drift[j] * dt + sigma * dw[[i, j]];
                    }
                    if !ok || xi.iter().any(|v| !v.is_finite()) {
                        alive[i] = false;
                        xi.fill(0.0);
                    }
                }
            }
            let out: Vec<Vec<f64>> = (0..len).filter(|&i| alive[i]).map(|i| x.row(i).to_vec()).collect();
            let dropped = len - out.len();
            Ok((out, dropped))
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut dropped = 0;
    for part in parts {
        let (xs, dr) = part?;
        out.extend(xs);
        dropped += dr;
    }
    check_drops(dropped, n)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::ControlNetSpec;
    use crate::rng::seeded;
    use crate::targets::ContinuousKind;

    fn sched(steps: usize) -> OuSchedule {
        OuSchedule::new(1.0, 0.1, 10.0, steps).unwrap()
    }

    #[test]
    fn zero_control_has_zero_weight() {
        let r = rollout(&ZeroControl(3), &sched(50), 300, &mut seeded(1)).unwrap();
        assert_eq!(r.records.len(), 300);
        assert!(r
            .records
            .iter()
            .all(|rec| rec.log_rn == 0.0 && rec.control_energy == 0.0));
    }

    #[test]
    fn rollouts_are_reproducible() {
        let spec = ControlNetSpec::new(2, vec![8]);
        let params = spec.mlp().init(&mut seeded(3), false);
        let net = ControlNet {
            spec: &spec,
            params: &params,
        };
        let a = rollout_seeded(&net, &sched(20), 600, 42).unwrap();
        let b = rollout_seeded(&net, &sched(20), 600, 42).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.records[599].tag, 599);
    }

    #[test]
    fn terminal_law_is_stationary() {
        let s = OuSchedule::new(2.0, 0.1, 10.0, 200).unwrap();
        let r = rollout(&ZeroControl(1), &s, 20_000, &mut seeded(4)).unwrap();
        let var = r.records.iter().map(|x| x.x[0] * x.x[0]).sum::<f64>() / 20_000.0;
        assert!((var / 4.0 - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn soc_cost_arithmetic() {
        let target = ContinuousTarget::new(ContinuousKind::ManyWell { dim: 1, delta: 1.0 }, 0.0).unwrap();
        let reward = GaussianReward {
            include_constants: false,
            ..GaussianReward::new(&target, 1.0)
        };
        let rec = TrajectoryRecord {
            x: vec![0.0],
            log_rn: 0.0,
            control_energy: 2.0,
            tag: 0,
        };
        assert_eq!(soc_cost(&[rec.clone()], &reward).unwrap(), 2.0);
        let shifted = TrajectoryRecord {
            x: vec![2.0f64.sqrt() * 5f64.sqrt()],
            ..rec
        };
        assert!((soc_cost(&[shifted], &reward).unwrap() - (2.0 - 5.0)).abs() < 1e-12);
    }

    #[test]
    fn soc_cost_of_reference_is_minus_half_dim() {
        let target = ContinuousTarget::new(ContinuousKind::ManyWell { dim: 2, delta: 1.0 }, 0.0).unwrap();
        let reward = GaussianReward {
            include_constants: false,
            ..GaussianReward::new(&target, 1.0)
        };
        let r = rollout(&ZeroControl(2), &sched(200), 20_000, &mut seeded(8)).unwrap();
        let cost = soc_cost(&r.records, &reward).unwrap();
        assert!((cost + 1.0).abs() < 0.03, "{cost}");
    }

    #[test]
    fn annealed_rollout_edge_cases() {
        let target = ContinuousTarget::new(
            ContinuousKind::Gmm {
                centers: vec![vec![2.0]],
                std: 0.5,
            },
            1.0,
        )
        .unwrap();
        assert!(annealed_rollout(&target, &sched(50), 0, &mut seeded(1))
            .unwrap()
            .is_empty());
        let xs = annealed_rollout(&target, &sched(200), 4000, &mut seeded(2)).unwrap();
        let mean = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
        assert!((1.5..=2.5).contains(&mean), "{mean}");
    }

    #[test]
    fn too_many_drops_is_an_error() {
        struct Explode;
        impl ControlField for Explode {
            fn dim(&self) -> usize {
                1
            }
            fn eval_batch(&self, _t: f64, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
                Ok(Array2::from_elem(xs.dim(), f64::INFINITY))
            }
        }
        assert!(matches!(
            rollout(&Explode, &sched(5), 100, &mut seeded(1)),
            Err(Error::TooManyDropped { .. })
        ));
    }
}
