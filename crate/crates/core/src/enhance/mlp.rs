use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{block, block1, mat_slice_mut, standard, take_matrix, take_vector, uniform_init, vec_slice_mut, OwnedBlock, ParamBlock};

use super::sigmoid;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// out x in
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn init<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        Self {
            w: uniform_init(rng, outputs, inputs, inputs),
            b: Array1::zeros(outputs),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((outputs, inputs)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    /// Row-batched affine map: `x W^T + b`.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients for upstream `delta` and returns the
    /// gradient with respect to the input rows.
    pub(crate) fn backward(&self, x: &Array2<f64>, delta: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.w += &standard(delta.t().dot(x));
        grad.b += &delta.sum_axis(Axis(0));
        delta.dot(&self.w)
    }

    pub(crate) fn push_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        out.push(block(format!("{prefix}.w"), &self.w));
        out.push(block1(format!("{prefix}.b"), &self.b));
    }

    pub(crate) fn push_blocks_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(mat_slice_mut(&mut self.w));
        out.push(vec_slice_mut(&mut self.b));
    }

    pub(crate) fn take(blocks: &mut std::vec::IntoIter<OwnedBlock>, prefix: &str) -> Result<Self> {
        let w = take_matrix(blocks, &format!("{prefix}.w"))?;
        let b = take_vector(blocks, &format!("{prefix}.b"))?;
        if b.len() != w.nrows() {
            return Err(Error::Checkpoint(format!("{prefix}: bias/weight mismatch")));
        }
        Ok(Self { w, b })
    }
}

/// Per-frame feedforward estimator: tanh hidden layers, sigmoid output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

#[derive(Clone, Debug)]
pub struct MlpCache {
    /// Input to each layer; `inputs[0]` is the compressed spectrogram.
    pub(crate) inputs: Vec<Array2<f64>>,
    pub(crate) output: Array2<f64>,
}

impl MlpParams {
    pub fn init<R: Rng>(rng: &mut R, bins: usize, hidden: &[usize]) -> Self {
        let mut dims = vec![bins];
        dims.extend_from_slice(hidden);
        dims.push(bins);
        let layers = dims.windows(2).map(|d| Dense::init(rng, d[0], d[1])).collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs()
    }

    pub(crate) fn forward(&self, x: Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(&a);
            if l == last {
                z.mapv_inplace(sigmoid);
            } else {
                z.mapv_inplace(f64::tanh);
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation(format!("mlp layer {l}")));
            }
            inputs.push(a);
            a = z;
        }
        Ok((a.clone(), MlpCache { inputs, output: a }))
    }

    pub(crate) fn backward(&self, cache: &MlpCache, d_mask: &Array2<f64>) -> Result<MlpParams> {
        if cache.inputs.len() != self.layers.len() || cache.output.dim() != d_mask.dim() {
            return Err(Error::CacheMismatch("mlp cache does not match parameters".into()));
        }
        let mut grad = MlpParams {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect(),
        };
        let mut delta = d_mask * &cache.output.mapv(|m| m * (1.0 - m));
        for l in (0..self.layers.len()).rev() {
            let x = &cache.inputs[l];
            let dx = self.layers[l].backward(x, &delta, &mut grad.layers[l]);
            if l > 0 {
                // x is the tanh output of layer l-1
                delta = dx * &x.mapv(|a| 1.0 - a * a);
            }
        }
        Ok(grad)
    }

    pub(crate) fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.push_blocks(&format!("mlp.{l}"), &mut out);
        }
        out
    }

    pub(crate) fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in self.layers.iter_mut() {
            layer.push_blocks_mut(&mut out);
        }
        out
    }

    pub(crate) fn from_blocks(blocks: Vec<OwnedBlock>) -> Result<Self> {
        let n = blocks.len();
        if n == 0 || n % 2 != 0 {
            return Err(Error::Checkpoint(format!("mlp needs weight/bias pairs, got {n} blocks")));
        }
        let mut it = blocks.into_iter();
        let layers = (0..n / 2)
            .map(|l| Dense::take(&mut it, &format!("mlp.{l}")))
            .collect::<Result<Vec<_>>>()?;
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Checkpoint("mlp layer dims do not chain".into()));
            }
        }
        Ok(Self { layers })
    }
}
