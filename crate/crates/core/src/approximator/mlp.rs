//! Fully connected network with a hand-written reverse pass.
//!
//! Parameters are stored flat as `[W0, b0, W1, b1, ...]` with `W` of shape
//! `(fan_in, fan_out)`, so a batch `A` (rows are samples) maps to `A·W + b`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Gelu,
    Tanh,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Gelu => 0.5 * z * (1.0 + (GELU_C * (z + GELU_A * z * z * z)).tanh()),
            Activation::Tanh => z.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Gelu => {
                let t = (GELU_C * (z + GELU_A * z * z * z)).tanh();
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    /// Layer widths including input and output.
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

/// Intermediate values kept by [`MlpSpec::forward_cached`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Self {
        Self { sizes, activation }
    }

    pub fn layers(&self) -> usize {
        self.sizes.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap_or(&0)
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.sizes
            .windows(2)
            .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; `zero_last` zeroes the
    /// output layer so the network starts as the zero map.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, zero_last: bool) -> Vec<Tensor> {
        let layers = self.layers();
        let mut out = Vec::with_capacity(2 * layers);
        for (l, w) in self.sizes.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let zero = zero_last && l + 1 == layers;
            let mut draw = |n: usize| -> Vec<f64> {
                if zero {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
            };
            out.push(Tensor::new(vec![w[0], w[1]], draw(w[0] * w[1])));
            out.push(Tensor::new(vec![w[1]], draw(w[1])));
        }
        out
    }

    pub fn check_params(&self, params: &[Tensor]) -> Result<()> {
        let shapes = self.shapes();
        if params.len() != shapes.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter arrays, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (p, s)) in params.iter().zip(&shapes).enumerate() {
            if &p.shape != s || p.data.len() != s.iter().product::<usize>() {
                return Err(Error::Shape(format!(
                    "parameter {i}: expected shape {s:?}, got {:?}",
                    p.shape
                )));
            }
        }
        Ok(())
    }

    fn weight<'a>(&self, params: &'a [Tensor], l: usize) -> ArrayView2<'a, f64> {
        let p = &params[2 * l];
        ArrayView2::from_shape((p.shape[0], p.shape[1]), &p.data).expect("checked shape")
    }

    fn bias<'a>(&self, params: &'a [Tensor], l: usize) -> ArrayView1<'a, f64> {
        ArrayView1::from(&params[2 * l + 1].data[..])
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.ncols()
            )));
        }
        if let Some(bad) = input.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "network input row {} contains a non-finite entry",
                bad / input.ncols().max(1)
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[Tensor], input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_params(params)?;
        self.check_input(&input)?;
        let layers = self.layers();
        let mut a = input.to_owned();
        for l in 0..layers {
            let mut z = a.dot(&self.weight(params, l));
            z += &self.bias(params, l);
            if l + 1 < layers {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_cached(&self, params: &[Tensor], input: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.check_params(params)?;
        self.check_input(&input)?;
        let layers = self.layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut a = input.to_owned();
        for l in 0..layers {
            let mut z = a.dot(&self.weight(params, l));
            z += &self.bias(params, l);
            inputs.push(a);
            if l + 1 < layers {
                a = z.mapv(|v| self.activation.apply(v));
                pre.push(z);
            } else {
                a = z;
            }
        }
        Ok((a, MlpCache { inputs, pre }))
    }

    /// Reverse pass: gradient of `sum(d_out ⊙ output)` with respect to every
    /// parameter array.
    pub fn backward(&self, params: &[Tensor], cache: &MlpCache, d_out: ArrayView2<f64>) -> Result<Vec<Tensor>> {
        self.check_params(params)?;
        let layers = self.layers();
        let batch = cache.inputs[0].nrows();
        if d_out.dim() != (batch, self.output_dim()) {
            return Err(Error::Shape(format!(
                "adjoint has shape {:?}, expected ({batch}, {})",
                d_out.dim(),
                self.output_dim()
            )));
        }
        let mut grads: Vec<Tensor> = Vec::with_capacity(2 * layers);
        let mut delta: Array2<f64> = d_out.to_owned();
        for l in (0..layers).rev() {
            let gw = cache.inputs[l].t().dot(&delta);
            let gb: Array1<f64> = delta.sum_axis(Axis(0));
            grads.push(Tensor::new(vec![gb.len()], gb.to_vec()));
            grads.push(Tensor::new(
                vec![gw.nrows(), gw.ncols()],
                gw.as_standard_layout().iter().copied().collect(),
            ));
            if l > 0 {
                let mut back = delta.dot(&self.weight(params, l).t());
                let act = self.activation;
                back.zip_mut_with(&cache.pre[l - 1], |d, &z| *d *= act.derivative(z));
                delta = back;
            }
        }
        grads.reverse();
        Ok(grads)
    }
}
