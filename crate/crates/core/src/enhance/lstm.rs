//! Stacked LSTM mask estimator with manual backpropagation through time.
//!
//! Gate layout inside the 4H pre-activation vector is `[input, forget,
//! cell candidate, output]`. State starts at zero for every sequence.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{block, block1, mat_slice_mut, standard, take_matrix, take_vector, uniform_init, vec_slice_mut, OwnedBlock, ParamBlock};

use super::mlp::Dense;
use super::sigmoid;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    /// 4H x in
    pub w_x: Array2<f64>,
    /// 4H x H
    pub w_h: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmLayer {
    pub fn init<R: Rng>(rng: &mut R, inputs: usize, hidden: usize) -> Self {
        Self {
            w_x: uniform_init(rng, 4 * hidden, inputs, hidden),
            w_h: uniform_init(rng, 4 * hidden, hidden, hidden),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            w_x: Array2::zeros((4 * hidden, inputs)),
            w_h: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.ncols()
    }

    pub fn inputs(&self) -> usize {
        self.w_x.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub layers: Vec<LstmLayer>,
    pub out: Dense,
}

#[derive(Clone, Debug)]
struct LayerCache {
    input: Array2<f64>,
    /// Post-activation gates, T x 4H.
    gates: Array2<f64>,
    cell: Array2<f64>,
    tanh_cell: Array2<f64>,
    hidden: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    layers: Vec<LayerCache>,
    output: Array2<f64>,
}

fn step(layer: &LstmLayer, xproj: ArrayView1<f64>, h_prev: &Array1<f64>, c_prev: &Array1<f64>) -> (Array1<f64>, Array1<f64>, Array1<f64>, Array1<f64>) {
    let h = layer.hidden();
    let mut z = &xproj + &layer.w_h.dot(h_prev);
    for (k, v) in z.iter_mut().enumerate() {
        *v = if (2 * h..3 * h).contains(&k) { v.tanh() } else { sigmoid(*v) };
    }
    let (i, f, g, o) = (
        z.slice(s![0..h]),
        z.slice(s![h..2 * h]),
        z.slice(s![2 * h..3 * h]),
        z.slice(s![3 * h..4 * h]),
    );
    let c = &f * c_prev + &i * &g;
    let tc = c.mapv(f64::tanh);
    let hn = &o * &tc;
    (z, c, tc, hn)
}

impl LstmParams {
    pub fn init<R: Rng>(rng: &mut R, bins: usize, layers: usize, hidden: usize) -> Self {
        let mut stack = Vec::with_capacity(layers);
        for l in 0..layers {
            let inputs = if l == 0 { bins } else { hidden };
            stack.push(LstmLayer::init(rng, inputs, hidden));
        }
        Self {
            layers: stack,
            out: Dense::init(rng, hidden, bins),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.out.outputs()
    }

    pub(crate) fn forward(&self, x: Array2<f64>) -> Result<(Array2<f64>, LstmCache)> {
        let t_len = x.nrows();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut input = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let h = layer.hidden();
            let xproj = input.dot(&layer.w_x.t()) + &layer.b;
            let mut gates = Array2::zeros((t_len, 4 * h));
            let mut cell = Array2::zeros((t_len, h));
            let mut tanh_cell = Array2::zeros((t_len, h));
            let mut hidden = Array2::zeros((t_len, h));
            let mut h_prev = Array1::zeros(h);
            let mut c_prev = Array1::zeros(h);
            for t in 0..t_len {
                let (z, c, tc, hn) = step(layer, xproj.row(t), &h_prev, &c_prev);
                gates.row_mut(t).assign(&z);
                cell.row_mut(t).assign(&c);
                tanh_cell.row_mut(t).assign(&tc);
                hidden.row_mut(t).assign(&hn);
                h_prev = hn;
                c_prev = c;
            }
            if hidden.iter().chain(cell.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation(format!("lstm layer {l}")));
            }
            let next = hidden.clone();
            caches.push(LayerCache {
                input,
                gates,
                cell,
                tanh_cell,
                hidden,
            });
            input = next;
        }
        let output = self.out.apply(&input).mapv(sigmoid);
        if output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation("lstm output projection".into()));
        }
        Ok((output.clone(), LstmCache { layers: caches, output }))
    }

    pub(crate) fn backward(&self, cache: &LstmCache, d_mask: &Array2<f64>) -> Result<LstmParams> {
        if cache.layers.len() != self.layers.len() || cache.output.dim() != d_mask.dim() {
            return Err(Error::CacheMismatch("lstm cache does not match parameters".into()));
        }
        let mut grad = LstmParams {
            layers: self.layers.iter().map(|l| LstmLayer::zeros(l.inputs(), l.hidden())).collect(),
            out: Dense::zeros(self.out.inputs(), self.out.outputs()),
        };
        let delta = d_mask * &cache.output.mapv(|m| m * (1.0 - m));
        let top = &cache.layers.last().expect("non-empty").hidden;
        let mut d_hidden = self.out.backward(top, &delta, &mut grad.out);

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let lc = &cache.layers[l];
            let h = layer.hidden();
            let t_len = lc.input.nrows();
            let mut d_z = Array2::<f64>::zeros((t_len, 4 * h));
            let mut dh_next = Array1::<f64>::zeros(h);
            let mut dc_next = Array1::<f64>::zeros(h);
            for t in (0..t_len).rev() {
                let gates = lc.gates.row(t);
                let (i, f, g, o) = (
                    gates.slice(s![0..h]),
                    gates.slice(s![h..2 * h]),
                    gates.slice(s![2 * h..3 * h]),
                    gates.slice(s![3 * h..4 * h]),
                );
                let tc = lc.tanh_cell.row(t);
                let dh = &d_hidden.row(t) + &dh_next;
                let d_o = &dh * &tc;
                let dc = &dh * &o * &tc.mapv(|v| 1.0 - v * v) + &dc_next;
                let d_i = &dc * &g;
                let d_g = &dc * &i;
                let d_f = if t > 0 { &dc * &lc.cell.row(t - 1) } else { Array1::zeros(h) };
                dc_next = &dc * &f;

                let mut row = d_z.row_mut(t);
                for k in 0..h {
                    row[k] = d_i[k] * i[k] * (1.0 - i[k]);
                    row[h + k] = d_f[k] * f[k] * (1.0 - f[k]);
                    row[2 * h + k] = d_g[k] * (1.0 - g[k] * g[k]);
                    row[3 * h + k] = d_o[k] * o[k] * (1.0 - o[k]);
                }
                dh_next = row.dot(&layer.w_h);
            }
            let gl = &mut grad.layers[l];
            gl.w_x += &standard(d_z.t().dot(&lc.input));
            if t_len > 1 {
                let dz_tail = d_z.slice(s![1.., ..]);
                let h_head = lc.hidden.slice(s![..t_len - 1, ..]);
                gl.w_h += &standard(dz_tail.t().dot(&h_head));
            }
            gl.b += &d_z.sum_axis(Axis(0));
            if l > 0 {
                d_hidden = d_z.dot(&layer.w_x);
            }
        }
        Ok(grad)
    }

    pub(crate) fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(block(format!("lstm.{l}.w_x"), &layer.w_x));
            out.push(block(format!("lstm.{l}.w_h"), &layer.w_h));
            out.push(block1(format!("lstm.{l}.b"), &layer.b));
        }
        self.out.push_blocks("lstm.out", &mut out);
        out
    }

    pub(crate) fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in self.layers.iter_mut() {
            out.push(mat_slice_mut(&mut layer.w_x));
            out.push(mat_slice_mut(&mut layer.w_h));
            out.push(vec_slice_mut(&mut layer.b));
        }
        self.out.push_blocks_mut(&mut out);
        out
    }

    pub(crate) fn from_blocks(blocks: Vec<OwnedBlock>) -> Result<Self> {
        let n = blocks.len();
        if n < 5 || (n - 2) % 3 != 0 {
            return Err(Error::Checkpoint(format!("unexpected lstm block count {n}")));
        }
        let mut it = blocks.into_iter();
        let mut layers = Vec::new();
        for l in 0..(n - 2) / 3 {
            let w_x = take_matrix(&mut it, &format!("lstm.{l}.w_x"))?;
            let w_h = take_matrix(&mut it, &format!("lstm.{l}.w_h"))?;
            let b = take_vector(&mut it, &format!("lstm.{l}.b"))?;
            let h = w_h.ncols();
            if w_h.nrows() != 4 * h || w_x.nrows() != 4 * h || b.len() != 4 * h {
                return Err(Error::Checkpoint(format!("lstm layer {l} shapes inconsistent")));
            }
            layers.push(LstmLayer { w_x, w_h, b });
        }
        let out = Dense::take(&mut it, "lstm.out")?;
        for pair in layers.windows(2) {
            if pair[1].inputs() != pair[0].hidden() {
                return Err(Error::Checkpoint("lstm layers do not chain".into()));
            }
        }
        if out.inputs() != layers.last().expect("non-empty").hidden() {
            return Err(Error::Checkpoint("lstm output projection does not match hidden size".into()));
        }
        Ok(Self { layers, out })
    }
}
