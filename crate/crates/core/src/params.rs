//! Uniform flat view over trainable parameters, used by the optimizers,
//! the gradient checker and the checkpoint format.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ParamBlock<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct OwnedBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// A set of parameter tensors. Gradients are represented by the same type,
/// so `blocks()` of params and of their gradient line up one to one.
pub trait ParamSet: Clone + Send + Sync + Sized {
    fn variant(&self) -> &'static str;
    fn blocks(&self) -> Vec<ParamBlock<'_>>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
    fn from_blocks(variant: &str, blocks: Vec<OwnedBlock>) -> Result<Self>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in z.blocks_mut() {
            b.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }

    fn add_assign(&mut self, other: &Self) {
        let src = other.blocks();
        for (dst, s) in self.blocks_mut().into_iter().zip(src) {
            dst.iter_mut().zip(s.data).for_each(|(a, b)| *a += b);
        }
    }

    fn scale(&mut self, k: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= k);
        }
    }

    fn sq_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.data.iter())
            .map(|x| x * x)
            .sum()
    }

    fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.data.iter().all(|x| x.is_finite()))
    }

    fn flatten(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.data.iter().copied()).collect()
    }

    /// FNV-1a over the little-endian bytes of every parameter.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for x in self.flatten() {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

pub(crate) fn mat_slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are kept in standard layout")
}

pub(crate) fn mat_slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are kept in standard layout")
}

pub(crate) fn vec_slice(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("contiguous")
}

pub(crate) fn vec_slice_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("contiguous")
}

pub(crate) fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub(crate) fn block<'a>(name: impl Into<String>, a: &'a Array2<f64>) -> ParamBlock<'a> {
    ParamBlock {
        name: name.into(),
        shape: vec![a.nrows(), a.ncols()],
        data: mat_slice(a),
    }
}

pub(crate) fn block1<'a>(name: impl Into<String>, a: &'a Array1<f64>) -> ParamBlock<'a> {
    ParamBlock {
        name: name.into(),
        shape: vec![a.len()],
        data: vec_slice(a),
    }
}

pub(crate) fn take_matrix(blocks: &mut std::vec::IntoIter<OwnedBlock>, name: &str) -> Result<Array2<f64>> {
    let b = blocks
        .next()
        .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))?;
    if b.name != name || b.shape.len() != 2 {
        return Err(Error::Checkpoint(format!(
            "expected 2-d block {name}, found {} with shape {:?}",
            b.name, b.shape
        )));
    }
    Array2::from_shape_vec((b.shape[0], b.shape[1]), b.data)
        .map_err(|e| Error::Checkpoint(format!("block {name}: {e}")))
}

pub(crate) fn take_vector(blocks: &mut std::vec::IntoIter<OwnedBlock>, name: &str) -> Result<Array1<f64>> {
    let b = blocks
        .next()
        .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))?;
    if b.name != name || b.shape.len() != 1 || b.shape[0] != b.data.len() {
        return Err(Error::Checkpoint(format!(
            "expected 1-d block {name}, found {} with shape {:?}",
            b.name, b.shape
        )));
    }
    Ok(Array1::from(b.data))
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub(crate) fn uniform_init<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}
