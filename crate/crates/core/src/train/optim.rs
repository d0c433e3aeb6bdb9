use serde::{Deserialize, Serialize};

use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one parameter set. Moment buffers are created on the
/// first step.
#[derive(Clone, Debug)]
pub struct Optimizer<P> {
    kind: OptimizerKind,
    m: Option<P>,
    v: Option<P>,
    t: i32,
}

impl<P: ParamSet> Optimizer<P> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            m: None,
            v: None,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut P, grad: &P, lr: f64) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let g = grad.blocks();
                for (p, g) in params.blocks_mut().into_iter().zip(g) {
                    p.iter_mut().zip(g.data).for_each(|(p, g)| *p -= lr * g);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let m = self.m.get_or_insert_with(|| grad.zeros_like());
                let v = self.v.get_or_insert_with(|| grad.zeros_like());
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                let g = grad.blocks();
                for (((p, m), v), g) in params
                    .blocks_mut()
                    .into_iter()
                    .zip(m.blocks_mut())
                    .zip(v.blocks_mut())
                    .zip(g)
                {
                    for i in 0..p.len() {
                        let gi = g.data[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p[i] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Rescales both gradients together so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<A: ParamSet, B: ParamSet>(a: Option<&mut A>, b: Option<&mut B>, max_norm: f64) -> f64 {
    let sq = a.as_ref().map_or(0.0, |g| g.sq_norm()) + b.as_ref().map_or(0.0, |g| g.sq_norm());
    let norm = sq.sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        if let Some(g) = a {
            g.scale(k);
        }
        if let Some(g) = b {
            g.scale(k);
        }
    }
    norm
}
