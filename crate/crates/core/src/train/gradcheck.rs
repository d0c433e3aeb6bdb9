//! Central finite differences against analytic gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dsrnet::{dsrnet_backward, dsrnet_forward, DsrnetInit, DsrnetParams};
use crate::enhance::{estimate_mask, mask_estimator_backward, EnhancedPair, EstimatorSpec, MaskEstimatorParams};
use crate::error::Result;
use crate::loss::{refine_loss, JointLossConfig, LambdaMode};
use crate::params::ParamSet;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors. Below it the central difference's
/// own round-off (about `f64::EPSILON * |f| / FD_STEP`, ~1e-11 here) swamps
/// the entry, so tiny gradients are judged on an absolute scale instead.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Numeric gradient of `f` at `params`, one central difference per scalar.
pub fn numeric_gradient<P: ParamSet>(params: &P, step: f64, f: impl Fn(&P) -> f64) -> P {
    let mut grad = params.zeros_like();
    let mut probe = params.clone();
    let n_blocks = params.blocks().len();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let len = params.blocks()[b].data.len();
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = probe.blocks()[b].data[i];
            probe.blocks_mut()[b][i] = orig + step;
            let fp = f(&probe);
            probe.blocks_mut()[b][i] = orig - step;
            let fm = f(&probe);
            probe.blocks_mut()[b][i] = orig;
            *gi = (fp - fm) / (2.0 * step);
        }
        out.push(g);
    }
    for (dst, src) in grad.blocks_mut().into_iter().zip(out) {
        dst.copy_from_slice(&src);
    }
    grad
}

pub fn numeric_gradient_array(x: &Array2<f64>, step: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut probe = x.clone();
    let mut g = Array2::zeros(x.dim());
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + step;
        let fp = f(&probe);
        probe[idx] = orig - step;
        let fm = f(&probe);
        probe[idx] = orig;
        g[idx] = (fp - fm) / (2.0 * step);
    }
    g
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockError {
    pub name: String,
    pub count: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

pub fn compare_arrays(name: &str, analytic: &[f64], numeric: &[f64]) -> BlockError {
    let mut e = BlockError {
        name: name.to_string(),
        count: analytic.len(),
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    for (&a, &n) in analytic.iter().zip(numeric) {
        e.max_rel_err = e.max_rel_err.max(relative_error(a, n));
        e.max_abs_err = e.max_abs_err.max((a - n).abs());
    }
    e
}

pub fn compare<P: ParamSet>(analytic: &P, numeric: &P) -> Vec<BlockError> {
    analytic
        .blocks()
        .iter()
        .zip(numeric.blocks())
        .map(|(a, n)| compare_arrays(&a.name, a.data, n.data))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    EnhanceMlp,
    EnhanceRecurrent,
    Dsrnet,
    Loss,
    EndToEnd,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::EnhanceMlp,
        Component::EnhanceRecurrent,
        Component::Dsrnet,
        Component::Loss,
        Component::EndToEnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::EnhanceMlp => "enhance-mlp",
            Component::EnhanceRecurrent => "enhance-recurrent",
            Component::Dsrnet => "dsrnet",
            Component::Loss => "loss",
            Component::EndToEnd => "end-to-end",
        }
    }

    /// Tolerance the component is held to: purely linear blocks at 1e-6,
    /// anything with nonlinear activations at 1e-5.
    pub fn tolerance(self) -> f64 {
        match self {
            Component::Dsrnet | Component::Loss => 1e-6,
            _ => 1e-5,
        }
    }
}

impl std::str::FromStr for Component {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown component {s:?}"))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub component: Component,
    pub blocks: Vec<BlockError>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckShape {
    pub frames: usize,
    pub bins: usize,
    pub hidden: usize,
}

impl GradcheckShape {
    pub fn for_component(c: Component) -> Self {
        match c {
            Component::EnhanceRecurrent => Self { frames: 4, bins: 5, hidden: 3 },
            Component::EnhanceMlp => Self { frames: 4, bins: 6, hidden: 4 },
            Component::Dsrnet | Component::Loss => Self { frames: 3, bins: 4, hidden: 0 },
            Component::EndToEnd => Self { frames: 4, bins: 6, hidden: 3 },
        }
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, dim: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(dim, || rng.gen_range(lo..hi))
}

/// Fixed random upstream weighting so the scalar under test depends on
/// every output entry.
fn probe_loss(out: &Array2<f64>, weights: &Array2<f64>) -> f64 {
    (out * weights).sum()
}

pub fn gradcheck(component: Component, shape: GradcheckShape, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, f) = (shape.frames, shape.bins);
    let blocks = match component {
        Component::EnhanceMlp | Component::EnhanceRecurrent => {
            let spec = if component == Component::EnhanceMlp {
                EstimatorSpec::Mlp { hidden: vec![shape.hidden] }
            } else {
                EstimatorSpec::Recurrent { layers: 2, hidden: shape.hidden }
            };
            let params = MaskEstimatorParams::init(&spec, f, &mut rng)?;
            let noisy = random_matrix(&mut rng, (t, f), 0.05, 3.0);
            let w = random_matrix(&mut rng, (t, f), -1.0, 1.0);
            let (_, cache) = estimate_mask(&params, &noisy)?;
            let analytic = mask_estimator_backward(&params, &cache, &w)?;
            let numeric = numeric_gradient(&params, FD_STEP, |p| {
                probe_loss(estimate_mask(p, &noisy).expect("finite").0.values(), &w)
            });
            compare(&analytic, &numeric)
        }
        Component::Dsrnet => {
            let params = DsrnetParams::init(f, DsrnetInit::Random, false, &mut rng);
            let s_hat = random_matrix(&mut rng, (t, f), 0.0, 2.0);
            let n_hat = random_matrix(&mut rng, (t, f), 0.0, 2.0);
            let ws = random_matrix(&mut rng, (t, f), -1.0, 1.0);
            let wn = random_matrix(&mut rng, (t, f), -1.0, 1.0);
            let pair = EnhancedPair { s_hat: s_hat.clone(), n_hat: n_hat.clone() };
            let fwd = |p: &DsrnetParams, pair: &EnhancedPair| {
                let (_, r, _) = dsrnet_forward(p, pair).expect("shapes");
                probe_loss(&r.s_tilde, &ws) + probe_loss(&r.n_tilde, &wn)
            };
            let (_, _, cache) = dsrnet_forward(&params, &pair)?;
            let g = dsrnet_backward(&params, &cache, &ws, &wn)?;
            let numeric = numeric_gradient(&params, FD_STEP, |p| fwd(p, &pair));
            let mut out = compare(&g.params, &numeric);
            let num_s = numeric_gradient_array(&s_hat, FD_STEP, |x| {
                fwd(&params, &EnhancedPair { s_hat: x.clone(), n_hat: n_hat.clone() })
            });
            let num_n = numeric_gradient_array(&n_hat, FD_STEP, |x| {
                fwd(&params, &EnhancedPair { s_hat: s_hat.clone(), n_hat: x.clone() })
            });
            out.push(compare_arrays("d_s_hat", g.d_s_hat.as_slice().unwrap(), num_s.as_slice().unwrap()));
            out.push(compare_arrays("d_n_hat", g.d_n_hat.as_slice().unwrap(), num_n.as_slice().unwrap()));
            out
        }
        Component::Loss => {
            let s = random_matrix(&mut rng, (t, f), 0.0, 2.0);
            let n = random_matrix(&mut rng, (t, f), 0.0, 2.0);
            let st = random_matrix(&mut rng, (t, f), -0.5, 2.5);
            let nt = random_matrix(&mut rng, (t, f), -0.5, 2.5);
            let mut out = Vec::new();
            for (label, mode) in [
                ("fixed", LambdaMode::Fixed(0.3)),
                ("dynamic-differentiated", LambdaMode::Dynamic { differentiate: true }),
            ] {
                let cfg = JointLossConfig { lambda_mode: mode, ..JointLossConfig::default() };
                let r = refine_loss(&st, &nt, &s, &n, &cfg)?;
                let num_s = numeric_gradient_array(&st, FD_STEP, |x| refine_loss(x, &nt, &s, &n, &cfg).expect("shapes").loss);
                let num_n = numeric_gradient_array(&nt, FD_STEP, |x| refine_loss(&st, x, &s, &n, &cfg).expect("shapes").loss);
                out.push(compare_arrays(&format!("{label}.d_s_tilde"), r.d_s_tilde.as_slice().unwrap(), num_s.as_slice().unwrap()));
                out.push(compare_arrays(&format!("{label}.d_n_tilde"), r.d_n_tilde.as_slice().unwrap(), num_n.as_slice().unwrap()));
            }
            out
        }
        Component::EndToEnd => super::end_to_end_gradcheck(&mut rng, shape)?,
    };
    Ok(GradcheckReport { component, blocks })
}
