//! Dual-stream spectrogram refine network.
//!
//! Each stream mixes the enhanced speech and predicted noise with two inner
//! linear maps, projects the sum with an outer linear map plus bias, and
//! adds the result back as a residual:
//!
//! ```text
//! h_k      = W_s^k S_hat + W_n^k N_hat
//! theta_k  = W_hat^k h_k + b_hat^k
//! S_tilde  = S_hat + theta_s,   N_tilde = N_hat + theta_n
//! ```
//!
//! The network is purely linear. Streams own disjoint parameters unless
//! `shared_inner` is set, in which case both streams reuse the speech
//! stream's inner pair.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::enhance::{check_same, EnhancedPair};
use crate::error::{Error, Result};
use crate::params::{block, block1, mat_slice_mut, standard, take_matrix, take_vector, uniform_init, vec_slice_mut, OwnedBlock, ParamBlock, ParamSet};

#[derive(Clone, Debug, PartialEq)]
pub struct StreamParams {
    pub w_s: Array2<f64>,
    pub w_n: Array2<f64>,
    pub w_hat: Array2<f64>,
    pub b_hat: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DsrnetParams {
    pub speech: StreamParams,
    /// With `shared_inner`, `noise.w_s` and `noise.w_n` are empty.
    pub noise: StreamParams,
    pub shared_inner: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DsrnetInit {
    /// Random inner maps, zero outer map and bias: starts as the identity refinement.
    #[default]
    ZeroOuter,
    /// Random inner and outer maps, zero bias.
    Random,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualPair {
    pub theta_s: Array2<f64>,
    pub theta_n: Array2<f64>,
}

/// Refined spectrograms; may contain negative entries.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinedPair {
    pub s_tilde: Array2<f64>,
    pub n_tilde: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct DsrnetCache {
    s_hat: Array2<f64>,
    n_hat: Array2<f64>,
    h_s: Array2<f64>,
    h_n: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct DsrnetGrads {
    pub params: DsrnetParams,
    pub d_s_hat: Array2<f64>,
    pub d_n_hat: Array2<f64>,
}

fn stream_init<R: Rng>(rng: &mut R, bins: usize, init: DsrnetInit, inner: bool) -> StreamParams {
    let inner_dim = if inner { bins } else { 0 };
    let (w_s, w_n) = match init {
        DsrnetInit::Zeros => (Array2::zeros((inner_dim, inner_dim)), Array2::zeros((inner_dim, inner_dim))),
        _ => (
            uniform_init(rng, inner_dim, inner_dim, bins),
            uniform_init(rng, inner_dim, inner_dim, bins),
        ),
    };
    let w_hat = match init {
        DsrnetInit::Random => uniform_init(rng, bins, bins, bins),
        _ => Array2::zeros((bins, bins)),
    };
    StreamParams {
        w_s,
        w_n,
        w_hat,
        b_hat: Array1::zeros(bins),
    }
}

impl DsrnetParams {
    pub fn init<R: Rng>(bins: usize, init: DsrnetInit, shared_inner: bool, rng: &mut R) -> Self {
        let speech = stream_init(rng, bins, init, true);
        let noise = stream_init(rng, bins, init, !shared_inner);
        Self {
            speech,
            noise,
            shared_inner,
        }
    }

    pub fn zeros(bins: usize) -> Self {
        let z = || StreamParams {
            w_s: Array2::zeros((bins, bins)),
            w_n: Array2::zeros((bins, bins)),
            w_hat: Array2::zeros((bins, bins)),
            b_hat: Array1::zeros(bins),
        };
        Self {
            speech: z(),
            noise: z(),
            shared_inner: false,
        }
    }

    pub fn bins(&self) -> usize {
        self.speech.w_hat.nrows()
    }

    fn noise_inner(&self) -> (&Array2<f64>, &Array2<f64>) {
        if self.shared_inner {
            (&self.speech.w_s, &self.speech.w_n)
        } else {
            (&self.noise.w_s, &self.noise.w_n)
        }
    }
}

impl ParamSet for DsrnetParams {
    fn variant(&self) -> &'static str {
        "dsrnet"
    }

    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = vec![
            block("speech.w_s", &self.speech.w_s),
            block("speech.w_n", &self.speech.w_n),
            block("speech.w_hat", &self.speech.w_hat),
            block1("speech.b_hat", &self.speech.b_hat),
        ];
        if !self.shared_inner {
            out.push(block("noise.w_s", &self.noise.w_s));
            out.push(block("noise.w_n", &self.noise.w_n));
        }
        out.push(block("noise.w_hat", &self.noise.w_hat));
        out.push(block1("noise.b_hat", &self.noise.b_hat));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let shared = self.shared_inner;
        let (sp, no) = (&mut self.speech, &mut self.noise);
        let mut out = vec![
            mat_slice_mut(&mut sp.w_s),
            mat_slice_mut(&mut sp.w_n),
            mat_slice_mut(&mut sp.w_hat),
            vec_slice_mut(&mut sp.b_hat),
        ];
        if !shared {
            out.push(mat_slice_mut(&mut no.w_s));
            out.push(mat_slice_mut(&mut no.w_n));
        }
        out.push(mat_slice_mut(&mut no.w_hat));
        out.push(vec_slice_mut(&mut no.b_hat));
        out
    }

    fn from_blocks(variant: &str, blocks: Vec<OwnedBlock>) -> Result<Self> {
        if variant != "dsrnet" {
            return Err(Error::Checkpoint(format!("expected dsrnet checkpoint, got {variant}")));
        }
        let shared_inner = match blocks.len() {
            8 => false,
            6 => true,
            n => return Err(Error::Checkpoint(format!("unexpected dsrnet block count {n}"))),
        };
        let mut it = blocks.into_iter();
        let speech = StreamParams {
            w_s: take_matrix(&mut it, "speech.w_s")?,
            w_n: take_matrix(&mut it, "speech.w_n")?,
            w_hat: take_matrix(&mut it, "speech.w_hat")?,
            b_hat: take_vector(&mut it, "speech.b_hat")?,
        };
        let (w_s, w_n) = if shared_inner {
            (Array2::zeros((0, 0)), Array2::zeros((0, 0)))
        } else {
            (take_matrix(&mut it, "noise.w_s")?, take_matrix(&mut it, "noise.w_n")?)
        };
        let noise = StreamParams {
            w_s,
            w_n,
            w_hat: take_matrix(&mut it, "noise.w_hat")?,
            b_hat: take_vector(&mut it, "noise.b_hat")?,
        };
        let f = speech.w_hat.nrows();
        let square = |a: &Array2<f64>| a.dim() == (f, f);
        let ok = square(&speech.w_s)
            && square(&speech.w_n)
            && square(&speech.w_hat)
            && square(&noise.w_hat)
            && speech.b_hat.len() == f
            && noise.b_hat.len() == f
            && (shared_inner || (square(&noise.w_s) && square(&noise.w_n)));
        if !ok {
            return Err(Error::Checkpoint("dsrnet blocks are not consistently F x F".into()));
        }
        Ok(Self {
            speech,
            noise,
            shared_inner,
        })
    }
}

pub fn dsrnet_forward(params: &DsrnetParams, pair: &EnhancedPair) -> Result<(ResidualPair, RefinedPair, DsrnetCache)> {
    check_same(&pair.s_hat, &pair.n_hat)?;
    let f = params.bins();
    if pair.s_hat.ncols() != f {
        return Err(Error::ShapeMismatch {
            expected: (pair.s_hat.nrows(), f),
            got: pair.s_hat.dim(),
        });
    }
    let (s_hat, n_hat) = (&pair.s_hat, &pair.n_hat);
    let h_s = s_hat.dot(&params.speech.w_s.t()) + n_hat.dot(&params.speech.w_n.t());
    let h_n = if params.shared_inner {
        h_s.clone()
    } else {
        s_hat.dot(&params.noise.w_s.t()) + n_hat.dot(&params.noise.w_n.t())
    };
    let theta_s = h_s.dot(&params.speech.w_hat.t()) + &params.speech.b_hat;
    let theta_n = h_n.dot(&params.noise.w_hat.t()) + &params.noise.b_hat;
    let refined = RefinedPair {
        s_tilde: s_hat + &theta_s,
        n_tilde: n_hat + &theta_n,
    };
    let cache = DsrnetCache {
        s_hat: s_hat.clone(),
        n_hat: n_hat.clone(),
        h_s,
        h_n,
    };
    Ok((ResidualPair { theta_s, theta_n }, refined, cache))
}

/// Reverse pass. Input gradients are returned separately per stream input;
/// callers that derive `N_hat = Y - S_hat` fold `-d_n_hat` into `d_s_hat`.
pub fn dsrnet_backward(
    params: &DsrnetParams,
    cache: &DsrnetCache,
    d_s_tilde: &Array2<f64>,
    d_n_tilde: &Array2<f64>,
) -> Result<DsrnetGrads> {
    if cache.s_hat.dim() != d_s_tilde.dim() || cache.n_hat.dim() != d_n_tilde.dim() || cache.h_s.ncols() != params.bins() {
        return Err(Error::CacheMismatch("dsrnet cache does not match upstream gradients".into()));
    }
    let mut g = params.zeros_like();
    g.speech.w_hat = standard(d_s_tilde.t().dot(&cache.h_s));
    g.speech.b_hat = d_s_tilde.sum_axis(Axis(0));
    g.noise.w_hat = standard(d_n_tilde.t().dot(&cache.h_n));
    g.noise.b_hat = d_n_tilde.sum_axis(Axis(0));
    let dh_s = d_s_tilde.dot(&params.speech.w_hat);
    let dh_n = d_n_tilde.dot(&params.noise.w_hat);

    let mut d_s_hat = d_s_tilde.clone();
    let mut d_n_hat = d_n_tilde.clone();
    if params.shared_inner {
        let dh = dh_s + &dh_n;
        g.speech.w_s = standard(dh.t().dot(&cache.s_hat));
        g.speech.w_n = standard(dh.t().dot(&cache.n_hat));
        d_s_hat += &dh.dot(&params.speech.w_s);
        d_n_hat += &dh.dot(&params.speech.w_n);
    } else {
        g.speech.w_s = standard(dh_s.t().dot(&cache.s_hat));
        g.speech.w_n = standard(dh_s.t().dot(&cache.n_hat));
        let (nw_s, nw_n) = params.noise_inner();
        g.noise.w_s = standard(dh_n.t().dot(&cache.s_hat));
        g.noise.w_n = standard(dh_n.t().dot(&cache.n_hat));
        d_s_hat += &dh_s.dot(&params.speech.w_s);
        d_s_hat += &dh_n.dot(nw_s);
        d_n_hat += &dh_s.dot(&params.speech.w_n);
        d_n_hat += &dh_n.dot(nw_n);
    }
    Ok(DsrnetGrads {
        params: g,
        d_s_hat,
        d_n_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::gradcheck::{compare, compare_arrays, numeric_gradient, numeric_gradient_array, FD_STEP};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, t: usize, f: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((t, f), || rng.gen_range(0.0..2.0))
    }

    fn pair(rng: &mut ChaCha8Rng, t: usize, f: usize) -> EnhancedPair {
        EnhancedPair {
            s_hat: rand_mat(rng, t, f),
            n_hat: rand_mat(rng, t, f),
        }
    }

    #[test]
    fn zero_params_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = pair(&mut rng, 5, 7);
        let (res, refined, _) = dsrnet_forward(&DsrnetParams::zeros(7), &p).unwrap();
        assert!(res.theta_s.iter().chain(res.theta_n.iter()).all(|&x| x == 0.0));
        assert_eq!(refined.s_tilde, p.s_hat);
        assert_eq!(refined.n_tilde, p.n_hat);

        // default init is also the identity: outer map and bias start at zero
        let init = DsrnetParams::init(7, DsrnetInit::ZeroOuter, false, &mut rng);
        let (_, refined, _) = dsrnet_forward(&init, &p).unwrap();
        assert_eq!(refined.s_tilde, p.s_hat);
        assert_eq!(refined.n_tilde, p.n_hat);
    }

    #[test]
    fn negated_identity_cancels_speech() {
        let f = 4;
        let mut params = DsrnetParams::zeros(f);
        params.speech.w_hat = Array2::eye(f);
        params.speech.w_s = -Array2::eye(f);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = pair(&mut rng, 3, f);
        let (res, refined, _) = dsrnet_forward(&params, &p).unwrap();
        assert_eq!(res.theta_s, -&p.s_hat);
        assert!(refined.s_tilde.iter().all(|&x| x == 0.0));
        assert_eq!(refined.n_tilde, p.n_hat);
    }

    #[test]
    fn single_frame_matches_hand_products() {
        let f = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = DsrnetParams::init(f, DsrnetInit::Random, false, &mut rng);
        params.speech.b_hat = array![0.1, -0.2, 0.3, -0.4];
        params.noise.b_hat = array![0.5, 0.0, -0.5, 1.0];
        let s = [0.3, 1.2, 0.0, 2.0];
        let n = [1.0, 0.1, 0.7, 0.4];
        let p = EnhancedPair {
            s_hat: Array2::from_shape_vec((1, f), s.to_vec()).unwrap(),
            n_hat: Array2::from_shape_vec((1, f), n.to_vec()).unwrap(),
        };
        let (res, refined, _) = dsrnet_forward(&params, &p).unwrap();
        for (st, theta, base) in [
            (&params.speech, &res.theta_s, &s),
            (&params.noise, &res.theta_n, &n),
        ] {
            let mut h = [0.0; 4];
            for i in 0..f {
                for j in 0..f {
                    h[i] += st.w_s[[i, j]] * s[j] + st.w_n[[i, j]] * n[j];
                }
            }
            for i in 0..f {
                let mut th = st.b_hat[i];
                for j in 0..f {
                    th += st.w_hat[[i, j]] * h[j];
                }
                assert!((theta[[0, i]] - th).abs() < 1e-12);
                let _ = base;
            }
        }
        for i in 0..f {
            assert!((refined.s_tilde[[0, i]] - (s[i] + res.theta_s[[0, i]])).abs() < 1e-15);
            assert!((refined.n_tilde[[0, i]] - (n[i] + res.theta_n[[0, i]])).abs() < 1e-15);
        }
    }

    #[test]
    fn residuals_are_linear_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = DsrnetParams::init(6, DsrnetInit::Random, false, &mut rng);
        let (x, y) = (pair(&mut rng, 4, 6), pair(&mut rng, 4, 6));
        let (a, b) = (0.7, -1.3);
        let combo = EnhancedPair {
            s_hat: &x.s_hat * a + &y.s_hat * b,
            n_hat: &x.n_hat * a + &y.n_hat * b,
        };
        let (rx, _, _) = dsrnet_forward(&params, &x).unwrap();
        let (ry, _, _) = dsrnet_forward(&params, &y).unwrap();
        let (rc, _, _) = dsrnet_forward(&params, &combo).unwrap();
        let expect = &rx.theta_s * a + &ry.theta_s * b;
        assert!(rc.theta_s.iter().zip(expect.iter()).all(|(p, q)| (p - q).abs() <= 1e-12));
        let expect = &rx.theta_n * a + &ry.theta_n * b;
        assert!(rc.theta_n.iter().zip(expect.iter()).all(|(p, q)| (p - q).abs() <= 1e-12));
    }

    #[test]
    fn streams_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = DsrnetParams::init(5, DsrnetInit::Random, false, &mut rng);
        let p = pair(&mut rng, 3, 5);
        let (base, _, _) = dsrnet_forward(&params, &p).unwrap();
        let mut perturbed = params.clone();
        perturbed.speech.w_s[[0, 1]] += 0.5;
        perturbed.speech.w_hat[[2, 2]] -= 0.5;
        perturbed.speech.b_hat[3] += 1.0;
        let (r, _, _) = dsrnet_forward(&perturbed, &p).unwrap();
        assert_eq!(r.theta_n, base.theta_n);
        assert_ne!(r.theta_s, base.theta_s);
        let mut perturbed = params.clone();
        perturbed.noise.w_n[[1, 0]] += 0.5;
        let (r, _, _) = dsrnet_forward(&perturbed, &p).unwrap();
        assert_eq!(r.theta_s, base.theta_s);
    }

    #[test]
    fn shape_errors() {
        let p = EnhancedPair {
            s_hat: Array2::zeros((2, 3)),
            n_hat: Array2::zeros((2, 3)),
        };
        assert!(dsrnet_forward(&DsrnetParams::zeros(4), &p).is_err());
        let q = EnhancedPair {
            s_hat: Array2::zeros((2, 4)),
            n_hat: Array2::zeros((3, 4)),
        };
        assert!(dsrnet_forward(&DsrnetParams::zeros(4), &q).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = DsrnetParams::init(4, DsrnetInit::Random, false, &mut rng);
        let p = pair(&mut rng, 3, 4);
        let (_, _, cache) = dsrnet_forward(&params, &p).unwrap();
        let z = Array2::zeros((3, 4));
        let g = dsrnet_backward(&params, &cache, &z, &z).unwrap();
        assert_eq!(g.params.sq_norm(), 0.0);
        assert!(g.d_s_hat.iter().chain(g.d_n_hat.iter()).all(|&x| x == 0.0));
    }

    fn check_fd(shared: bool) {
        let (t, f) = (3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = DsrnetParams::init(f, DsrnetInit::Random, shared, &mut rng);
        let p = pair(&mut rng, t, f);
        let ws = Array2::from_shape_simple_fn((t, f), || rng.gen_range(-1.0..1.0));
        let wn = Array2::from_shape_simple_fn((t, f), || rng.gen_range(-1.0..1.0));
        let objective = |pr: &DsrnetParams, pa: &EnhancedPair| {
            let (_, r, _) = dsrnet_forward(pr, pa).unwrap();
            (&r.s_tilde * &ws).sum() + (&r.n_tilde * &wn).sum()
        };
        let (_, _, cache) = dsrnet_forward(&params, &p).unwrap();
        let g = dsrnet_backward(&params, &cache, &ws, &wn).unwrap();
        let numeric = numeric_gradient(&params, FD_STEP, |pr| objective(pr, &p));
        for e in compare(&g.params, &numeric) {
            assert!(e.max_rel_err <= 1e-6, "{e:?}");
        }
        let num_s = numeric_gradient_array(&p.s_hat, FD_STEP, |x| {
            objective(&params, &EnhancedPair { s_hat: x.clone(), n_hat: p.n_hat.clone() })
        });
        let e = compare_arrays("d_s_hat", g.d_s_hat.as_slice().unwrap(), num_s.as_slice().unwrap());
        assert!(e.max_rel_err <= 1e-6, "{e:?}");
        let num_n = numeric_gradient_array(&p.n_hat, FD_STEP, |x| {
            objective(&params, &EnhancedPair { s_hat: p.s_hat.clone(), n_hat: x.clone() })
        });
        let e = compare_arrays("d_n_hat", g.d_n_hat.as_slice().unwrap(), num_n.as_slice().unwrap());
        assert!(e.max_rel_err <= 1e-6, "{e:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_fd(false);
    }

    #[test]
    fn shared_inner_gradients_match_finite_differences() {
        check_fd(true);
    }

    #[test]
    fn bias_gradient_closed_form() {
        // L = ||S_tilde - S||^2 / (T F): d/db_hat_s = sum_t 2 (S_tilde - S)_t / (T F)
        let (t, f) = (5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = DsrnetParams::init(f, DsrnetInit::Random, false, &mut rng);
        let p = pair(&mut rng, t, f);
        let clean = rand_mat(&mut rng, t, f);
        let (_, r, cache) = dsrnet_forward(&params, &p).unwrap();
        let d = (&r.s_tilde - &clean) * (2.0 / (t * f) as f64);
        let g = dsrnet_backward(&params, &cache, &d, &Array2::zeros((t, f))).unwrap();
        for k in 0..f {
            let mut expected = 0.0;
            for i in 0..t {
                expected += 2.0 * (r.s_tilde[[i, k]] - clean[[i, k]]) / (t * f) as f64;
            }
            assert!((g.params.speech.b_hat[k] - expected).abs() < 1e-14);
        }
        assert!(g.params.noise.b_hat.iter().all(|&x| x == 0.0));
    }
}
