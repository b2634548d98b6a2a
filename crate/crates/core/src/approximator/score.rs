use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, MlpSpec, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Mask token on the augmented alphabet `{0, .., N-1, MASK}`.
pub const MASK: u8 = u8::MAX;

/// Score network over sequences of length `length` from an alphabet of size
/// `alphabet`; output row `i` is a distribution over the value of position `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreNetSpec {
    pub length: usize,
    pub alphabet: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl ScoreNetSpec {
    pub fn new(length: usize, alphabet: usize, hidden: Vec<usize>) -> Self {
        Self {
            length,
            alphabet,
            hidden,
            activation: Activation::default(),
        }
    }

    pub fn mlp(&self) -> MlpSpec {
        let mut sizes = vec![self.length * (self.alphabet + 1)];
        sizes.extend(&self.hidden);
        sizes.push(self.length * self.alphabet);
        MlpSpec::new(sizes, self.activation)
    }

    /// Fresh parameters with a zeroed output layer (uniform rows).
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        ParamStore::new(self.mlp().init(rng, true))
    }
}

/// One-hot encoding of a flat batch of sequences; slot `N` encodes MASK.
pub fn one_hot(spec: &ScoreNetSpec, xs: &[u8]) -> Result<Array2<f64>> {
    let d = spec.length;
    let n = spec.alphabet;
    if d == 0 || xs.len() % d != 0 {
        return Err(Error::Shape(format!(
            "{} tokens is not a whole number of length-{d} sequences",
            xs.len()
        )));
    }
    let batch = xs.len() / d;
    let mut out = Array2::zeros((batch, d * (n + 1)));
    for (b, seq) in xs.chunks(d).enumerate() {
        for (i, &tok) in seq.iter().enumerate() {
            let slot = if tok == MASK {
                n
            } else if (tok as usize) < n {
                tok as usize
            } else {
                return Err(Error::Domain(format!("token {tok} outside alphabet of size {n}")));
            };
            out[[b, i * (n + 1) + slot]] = 1.0;
        }
    }
    Ok(out)
}

/// In-place softmax over each length-`alphabet` segment of every row.
pub fn softmax_rows(logits: &mut Array2<f64>, alphabet: usize) {
    for mut row in logits.rows_mut() {
        let slice = row.as_slice_mut().expect("standard layout");
        for seg in slice.chunks_mut(alphabet) {
            let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in seg.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in seg.iter_mut() {
                *v /= total;
            }
        }
    }
}

/// Pulls an adjoint with respect to probabilities back through the softmax.
pub fn logits_adjoint_from_probs(probs: ArrayView2<f64>, d_probs: ArrayView2<f64>, alphabet: usize) -> Array2<f64> {
    let mut out = Array2::zeros(probs.dim());
    for ((p, dp), mut o) in probs.rows().into_iter().zip(d_probs.rows()).zip(out.rows_mut()) {
        for start in (0..p.len()).step_by(alphabet) {
            let dot: f64 = (start..start + alphabet).map(|k| p[k] * dp[k]).sum();
            for k in start..start + alphabet {
                o[k] = p[k] * (dp[k] - dot);
            }
        }
    }
    out
}

/// Row-stochastic outputs for a flat batch; result is `batch x (length * alphabet)`.
pub fn forward_score_batch(params: &[Tensor], spec: &ScoreNetSpec, xs: &[u8]) -> Result<Array2<f64>> {
    let input = one_hot(spec, xs)?;
    let mut out = spec.mlp().forward(params, input.view())?;
    softmax_rows(&mut out, spec.alphabet);
    Ok(out)
}

/// `length x alphabet` matrix of per-position value probabilities.
pub fn forward_score(params: &[Tensor], spec: &ScoreNetSpec, x: &[u8]) -> Result<Array2<f64>> {
    if x.len() != spec.length {
        return Err(Error::Shape(format!(
            "sequence of length {} for a length-{} net",
            x.len(),
            spec.length
        )));
    }
    let out = forward_score_batch(params, spec, x)?;
    Ok(out
        .into_shape_with_order((spec.length, spec.alphabet))
        .map_err(|e| Error::Shape(e.to_string()))?)
}

#[derive(Clone, Copy, Debug)]
pub struct ScoreNet<'a> {
    pub spec: &'a ScoreNetSpec,
    pub params: &'a [Tensor],
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn zero_init_rows_are_uniform() {
        let spec = ScoreNetSpec::new(4, 3, vec![8]);
        let store = spec.init(&mut seeded(1));
        let s = forward_score(&store.params, &spec, &[MASK, 0, 2, MASK]).unwrap();
        assert!(s.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn small_net_rows_sum_to_one() {
        let spec = ScoreNetSpec::new(2, 2, vec![6]);
        let params = spec.mlp().init(&mut seeded(2), false);
        for x in [[MASK, MASK], [0, MASK], [1, 0], [1, 1]] {
            let s = forward_score(&params, &spec, &x).unwrap();
            assert_eq!(s.dim(), (2, 2));
            for row in s.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }

    #[test]
    fn rejects_out_of_alphabet() {
        let spec = ScoreNetSpec::new(2, 2, vec![4]);
        let params = spec.mlp().init(&mut seeded(2), false);
        assert!(matches!(forward_score(&params, &spec, &[0, 2]), Err(Error::Domain(_))));
    }

    #[test]
    fn softmax_pullback_matches_finite_differences() {
        let spec = ScoreNetSpec::new(3, 3, vec![5]);
        let params = spec.mlp().init(&mut seeded(4), false);
        let xs = [0u8, MASK, 2, MASK, MASK, 1];
        let mut rng = seeded(8);
        let c = Array2::from_shape_fn((2, 9), |_| rng.random_range(-1.0..1.0));
        let f = |p: &[Tensor]| (&forward_score_batch(p, &spec, &xs).unwrap() * &c).sum();
        let input = one_hot(&spec, &xs).unwrap();
        let (mut logits, cache) = spec.mlp().forward_cached(&params, input.view()).unwrap();
        softmax_rows(&mut logits, 3);
        let dz = logits_adjoint_from_probs(logits.view(), c.view(), 3);
        let grads = spec.mlp().backward(&params, &cache, dz.view()).unwrap();
        let h = 1e-5;
        for (pi, p) in params.iter().enumerate() {
            for j in 0..p.data.len() {
                let mut a = params.clone();
                a[pi].data[j] += h;
                let mut b = params.clone();
                b[pi].data[j] -= h;
                let fd = (f(&a) - f(&b)) / (2.0 * h);
                let an = grads[pi].data[j];
                assert!(
                    (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6),
                    "{fd} vs {an}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(tokens in proptest::collection::vec(0u8..4, 5), seed in 0u64..50) {
            let spec = ScoreNetSpec::new(5, 3, vec![7]);
            let params = spec.mlp().init(&mut seeded(seed), false);
            let x: Vec<u8> = tokens.into_iter().map(|t| if t == 3 { MASK } else { t }).collect();
            let s = forward_score(&params, &spec, &x).unwrap();
            for row in s.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }
}
