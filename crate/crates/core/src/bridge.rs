//! Brownian bridge diffusion between a clean image `P0` and a conditioning
//! image `Q`.
//!
//! With `k_t = t/T` and `var_t = 2·k_t·(1 − k_t)`, the forward marginal is
//!
//! ```text
//! P_t ~ N((1 − k_t)·P0 + k_t·Q, var_t·I)
//! ```
//!
//! so `P_0 = P0` and `P_T = Q` exactly. Between any two steps `s < t` the
//! Markov transition is `P_t = a·P_s + b·Q + sqrt(v)·noise` with
//!
//! ```text
//! a = (1 − k_t) / (1 − k_s),  b = k_t − a·k_s,  v = var_t − a²·var_s
//! ```
//!
//! Sampling runs the chain backwards from `P_T = Q` using the Gaussian
//! posterior `q(P_s | P_t, P0_hat, Q)`, where `P0_hat` comes from a network
//! that only ever sees `(P_t, t)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::standard_normal;
use crate::tensor::Tensor;

/// Precomputed `k_t` and `var_t` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeSchedule {
    steps: usize,
    k: Vec<f64>,
    var: Vec<f64>,
}

impl BridgeSchedule {
    pub fn new(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "bridge schedule needs T >= 2, got {steps}"
            )));
        }
        let k: Vec<f64> = (0..=steps).map(|t| t as f64 / steps as f64).collect();
        let var = k.iter().map(|&kt| 2.0 * kt * (1.0 - kt)).collect();
        Ok(BridgeSchedule { steps, k, var })
    }

    /// Total number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    fn check_step(&self, t: usize, op: &'static str) -> Result<()> {
        if t > self.steps {
            return Err(Error::InvalidArgument(format!(
                "{op}: step {t} outside 0..={}",
                self.steps
            )));
        }
        Ok(())
    }

    /// Coefficients of the transition from step `from` to step `to > from`.
    pub fn transition(&self, from: usize, to: usize) -> Result<Transition> {
        if from >= to || to > self.steps {
            return Err(Error::InvalidArgument(format!(
                "transition {from} -> {to} invalid for T = {}",
                self.steps
            )));
        }
        let (ks, kt) = (self.k[from], self.k[to]);
        let a = if to == self.steps { 0.0 } else { (1.0 - kt) / (1.0 - ks) };
        let b = kt - a * ks;
        let raw = self.var[to] - a * a * self.var[from];
        // the exact value is 2(1 − k_t)(k_t − k_s)/(1 − k_s) ≥ 0
        if raw < -1e-12 {
            return Err(Error::InvalidArgument(format!(
                "negative transition variance {raw} for {from} -> {to}"
            )));
        }
        Ok(Transition {
            a,
            b,
            variance: raw.max(0.0),
        })
    }
}

pub fn make_schedule(steps: usize) -> Result<BridgeSchedule> {
    BridgeSchedule::new(steps)
}

/// `P_to = a·P_from + b·Q + sqrt(variance)·noise`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub a: f64,
    pub b: f64,
    pub variance: f64,
}

/// Isotropic Gaussian `N(mean, variance·I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mean: Tensor,
    pub variance: f64,
}

fn same_shapes(op: &'static str, tensors: &[&Tensor]) -> Result<()> {
    for pair in tensors.windows(2) {
        pair[0].ensure_same_shape(pair[1], op)?;
    }
    Ok(())
}

/// Draws `P_t` from the forward marginal given standard-normal `noise`.
///
/// The endpoints are returned as copies of `P0` (t = 0) and `Q` (t = T).
pub fn forward_sample(p0: &Tensor, q: &Tensor, t: usize, sched: &BridgeSchedule, noise: &Tensor) -> Result<Tensor> {
    same_shapes("forward_sample", &[p0, q, noise])?;
    sched.check_step(t, "forward_sample")?;
    if t == 0 {
        return Ok(p0.clone());
    }
    if t == sched.steps {
        return Ok(q.clone());
    }
    let (k, sd) = (sched.k[t], sched.var[t].sqrt());
    let data = p0
        .data()
        .iter()
        .zip(q.data())
        .zip(noise.data())
        .map(|((&x, &y), &n)| (1.0 - k) * x + k * y + sd * n)
        .collect();
    let out = Tensor::from_parts(p0.shape().to_vec(), data);
    out.check_finite("forward_sample")?;
    Ok(out)
}

/// One forward Markov step `P_{t-1} -> P_t`.
pub fn transition_sample(
    p_prev: &Tensor,
    q: &Tensor,
    t: usize,
    sched: &BridgeSchedule,
    noise: &Tensor,
) -> Result<Tensor> {
    same_shapes("transition_sample", &[p_prev, q, noise])?;
    if t == 0 {
        return Err(Error::InvalidArgument("transition_sample needs t >= 1".into()));
    }
    let tr = sched.transition(t - 1, t)?;
    if t == sched.steps {
        return Ok(q.clone());
    }
    let sd = tr.variance.sqrt();
    let data = p_prev
        .data()
        .iter()
        .zip(q.data())
        .zip(noise.data())
        .map(|((&x, &y), &n)| tr.a * x + tr.b * y + sd * n)
        .collect();
    let out = Tensor::from_parts(p_prev.shape().to_vec(), data);
    out.check_finite("transition_sample")?;
    Ok(out)
}

/// Posterior of `P_t` one step back, `q(P_{t-1} | P_t, P0_hat, Q)`.
pub fn posterior_params(
    p_t: &Tensor,
    p0_hat: &Tensor,
    q: &Tensor,
    t: usize,
    sched: &BridgeSchedule,
) -> Result<PosteriorParams> {
    if t == 0 {
        return Err(Error::InvalidArgument("posterior_params needs t >= 1".into()));
    }
    posterior_between(p_t, p0_hat, q, t, t - 1, sched)
}

/// Posterior of `P_s` given `P_t` for any `s < t`.
///
/// Writing `m_s = (1 − k_s)·P0_hat + k_s·Q` and `(a, b, v)` for the
/// `s -> t` transition:
///
/// ```text
/// mean     = (v / var_t)·m_s + (a·var_s / var_t)·(P_t − b·Q)
/// variance = var_s · v / var_t
/// ```
///
/// At `t = T` the observation `P_T = Q` carries no information about `P_s`,
/// so the posterior is the marginal `N(m_s, var_s)`. At `s = 0` it collapses
/// to `P0_hat` with zero variance.
pub fn posterior_between(
    p_t: &Tensor,
    p0_hat: &Tensor,
    q: &Tensor,
    t: usize,
    s: usize,
    sched: &BridgeSchedule,
) -> Result<PosteriorParams> {
    same_shapes("posterior_params", &[p_t, p0_hat, q])?;
    let tr = sched.transition(s, t)?;
    if s == 0 {
        return Ok(PosteriorParams {
            mean: p0_hat.clone(),
            variance: 0.0,
        });
    }
    let ks = sched.k[s];
    let var_s = sched.var[s];
    let (w_prior, w_obs, variance) = if t == sched.steps {
        (1.0, 0.0, var_s)
    } else {
        let var_t = sched.var[t];
        (tr.variance / var_t, tr.a * var_s / var_t, var_s * tr.variance / var_t)
    };
    let data = p_t
        .data()
        .iter()
        .zip(p0_hat.data())
        .zip(q.data())
        .map(|((&pt, &x0), &qv)| {
            let prior_mean = (1.0 - ks) * x0 + ks * qv;
            w_prior * prior_mean + w_obs * (pt - tr.b * qv)
        })
        .collect();
    let mean = Tensor::from_parts(p_t.shape().to_vec(), data);
    mean.check_finite("posterior_params")?;
    Ok(PosteriorParams { mean, variance })
}

/// Draws `P_{t-1}` from the posterior: `mean + sqrt(variance)·noise`.
pub fn reverse_step(
    p_t: &Tensor,
    p0_hat: &Tensor,
    q: &Tensor,
    t: usize,
    sched: &BridgeSchedule,
    noise: &Tensor,
) -> Result<Tensor> {
    if t == 0 {
        return Err(Error::InvalidArgument("reverse_step needs t >= 1".into()));
    }
    reverse_step_between(p_t, p0_hat, q, t, t - 1, sched, noise)
}

pub fn reverse_step_between(
    p_t: &Tensor,
    p0_hat: &Tensor,
    q: &Tensor,
    t: usize,
    s: usize,
    sched: &BridgeSchedule,
    noise: &Tensor,
) -> Result<Tensor> {
    p_t.ensure_same_shape(noise, "reverse_step")?;
    let post = posterior_between(p_t, p0_hat, q, t, s, sched)?;
    if post.variance == 0.0 {
        return Ok(post.mean);
    }
    let sd = post.variance.sqrt();
    let out = post.mean.zip_map(noise, |m, n| m + sd * n)?;
    out.check_finite("reverse_step")?;
    Ok(out)
}

/// Translates `Q` by running the reverse chain from `P_T = Q`.
///
/// `predict_x0` receives only the current state and step index; `Q` reaches
/// the chain solely through the start point and the analytic posterior.
/// Steps go `T, T − stride, …, stride`; the final step lands on `t = 0`
/// deterministically.
pub fn sample_translation<F, R>(
    q: &Tensor,
    mut predict_x0: F,
    sched: &BridgeSchedule,
    rng: &mut R,
    stride: usize,
) -> Result<Tensor>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
    R: Rng + ?Sized,
{
    if stride == 0 || !sched.steps.is_multiple_of(stride) {
        return Err(Error::InvalidArgument(format!(
            "stride {stride} must divide T = {}",
            sched.steps
        )));
    }
    let mut state = q.clone();
    let mut t = sched.steps;
    while t > 0 {
        let s = t - stride;
        let p0_hat = predict_x0(&state, t)?;
        p0_hat.ensure_same_shape(q, "sample_translation")?;
        let noise = if s == 0 {
            Tensor::zeros(q.shape())
        } else {
            standard_normal(rng, q.shape())
        };
        state = reverse_step_between(&state, &p0_hat, q, t, s, sched, &noise)?;
        t = s;
    }
    Ok(state)
}

/// One regression example for training the `P0` predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub noisy: Tensor,
    pub t: usize,
    pub target: Tensor,
}

/// Draws `t ~ U{1..T}` and noise, and returns `(P_t, t, P0)`.
pub fn make_training_pair<R: Rng + ?Sized>(
    p0: &Tensor,
    q: &Tensor,
    sched: &BridgeSchedule,
    rng: &mut R,
) -> Result<TrainingPair> {
    p0.ensure_same_shape(q, "make_training_pair")?;
    let t = rng.random_range(1..=sched.steps);
    let noise = standard_normal(rng, p0.shape());
    Ok(TrainingPair {
        noisy: forward_sample(p0, q, t, sched, &noise)?,
        t,
        target: p0.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn s(v: f64) -> Tensor {
        Tensor::scalar(v)
    }

    #[test]
    fn schedule_t4() {
        let sched = make_schedule(4).unwrap();
        assert_eq!(sched.k(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(sched.var(), &[0.0, 0.375, 0.5, 0.375, 0.0]);
        assert!(make_schedule(1).is_err());
        assert!(make_schedule(0).is_err());
    }

    #[test]
    fn schedule_invariants() {
        for steps in [2, 3, 7, 50, 1000] {
            let sched = make_schedule(steps).unwrap();
            let (k, var) = (sched.k(), sched.var());
            assert_eq!(k[0], 0.0);
            assert_eq!(k[steps], 1.0);
            assert!(k.windows(2).all(|w| w[1] > w[0]));
            assert_eq!(var[0], 0.0);
            assert_eq!(var[steps], 0.0);
            for t in 1..steps {
                assert!(var[t] > 0.0);
                assert!((var[t] - var[steps - t]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn forward_sample_scalar() {
        let sched = make_schedule(4).unwrap();
        let p = forward_sample(&s(1.0), &s(-1.0), 2, &sched, &s(1.0)).unwrap();
        assert!((p.item().unwrap() - 0.5_f64.sqrt()).abs() < 1e-15);
        assert!(forward_sample(&s(1.0), &s(-1.0), 5, &sched, &s(1.0)).is_err());
        assert!(forward_sample(&s(1.0), &Tensor::zeros(&[2]), 1, &sched, &s(1.0)).is_err());
    }

    #[test]
    fn transition_endpoint_and_first_step() {
        let sched = make_schedule(2).unwrap();
        let tr = sched.transition(0, 1).unwrap();
        assert_eq!((tr.a, tr.b, tr.variance), (0.5, 0.5, 0.5));
        let last = sched.transition(1, 2).unwrap();
        assert_eq!((last.a, last.b, last.variance), (0.0, 1.0, 0.0));
        let out = transition_sample(&s(0.3), &s(-0.7), 2, &sched, &s(5.0)).unwrap();
        assert_eq!(out.item().unwrap(), -0.7);
        assert!(transition_sample(&s(0.3), &s(-0.7), 0, &sched, &s(5.0)).is_err());
    }

    #[test]
    fn transition_composes_with_marginal_exactly() {
        // Marginal at t−1 pushed through the kernel must equal the marginal at t.
        let (p0, q) = (0.8, -0.35);
        for steps in [2, 5, 10, 33] {
            let sched = make_schedule(steps).unwrap();
            for t in 1..=steps {
                let tr = sched.transition(t - 1, t).unwrap();
                let (k0, k1) = (sched.k()[t - 1], sched.k()[t]);
                let mean_prev = (1.0 - k0) * p0 + k0 * q;
                let mean = tr.a * mean_prev + tr.b * q;
                let var = tr.a * tr.a * sched.var()[t - 1] + tr.variance;
                assert!((mean - ((1.0 - k1) * p0 + k1 * q)).abs() < 1e-12);
                assert!((var - sched.var()[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_scalar_example() {
        let sched = make_schedule(4).unwrap();
        let post = posterior_params(&s(0.0), &s(1.0), &s(-1.0), 2, &sched).unwrap();
        assert!((post.mean.item().unwrap() - 0.5).abs() < 1e-12);
        assert!((post.variance - 0.25).abs() < 1e-12);
        let stepped = reverse_step(&s(0.0), &s(1.0), &s(-1.0), 2, &sched, &s(2.0)).unwrap();
        assert!((stepped.item().unwrap() - 1.5).abs() < 1e-12);
        let zero_noise = reverse_step(&s(0.0), &s(1.0), &s(-1.0), 2, &sched, &s(0.0)).unwrap();
        assert_eq!(zero_noise, post.mean);
    }

    #[test]
    fn final_reverse_step_returns_prediction() {
        let sched = make_schedule(6).unwrap();
        let x0 = Tensor::new(vec![3], vec![0.25, -0.0, 0.9]).unwrap();
        let post = posterior_params(&Tensor::full(&[3], 0.1), &x0, &Tensor::full(&[3], -1.0), 1, &sched).unwrap();
        assert_eq!(post.variance, 0.0);
        assert_eq!(post.mean, x0);
        let out = reverse_step(
            &Tensor::full(&[3], 0.1),
            &x0,
            &Tensor::full(&[3], -1.0),
            1,
            &sched,
            &Tensor::full(&[3], 9.0),
        )
        .unwrap();
        assert_eq!(out, x0);
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let sched = make_schedule(8).unwrap();
        let c = Tensor::full(&[2, 2], 0.37);
        for t in 1..=8 {
            let post = posterior_params(&c, &c, &c, t, &sched).unwrap();
            for v in post.mean.data() {
                assert!((v - 0.37).abs() < 1e-14);
            }
            let fwd = forward_sample(&c, &c, t, &sched, &Tensor::zeros(&[2, 2])).unwrap();
            for v in fwd.data() {
                assert!((v - 0.37).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn one_step_sampling_returns_prediction() {
        let sched = make_schedule(10).unwrap();
        let q = Tensor::full(&[1, 4, 4], -0.5);
        let x = Tensor::new(vec![1, 4, 4], (0..16).map(|v| v as f64 / 16.0).collect()).unwrap();
        let out = sample_translation(&q, |_, _| Ok(x.clone()), &sched, &mut stream(3), 10).unwrap();
        assert_eq!(out, x);
        assert!(sample_translation(&q, |_, _| Ok(x.clone()), &sched, &mut stream(3), 3).is_err());
    }

    #[test]
    fn denoiser_sees_only_state_and_step() {
        let sched = make_schedule(5).unwrap();
        let q = Tensor::full(&[2], 0.4);
        let mut seen = Vec::new();
        sample_translation(
            &q,
            |p, t| {
                seen.push(t);
                Ok(p.clone())
            },
            &sched,
            &mut stream(0),
            1,
        )
        .unwrap();
        assert_eq!(seen, vec![5, 4, 3, 2, 1]);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let sched = make_schedule(20).unwrap();
        let q = Tensor::new(vec![1, 3, 3], (0..9).map(|v| (v as f64).cos()).collect()).unwrap();
        let run = |seed| sample_translation(&q, |p, _| Ok(p.map(|v| 0.5 * v)), &sched, &mut stream(seed), 2).unwrap();
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn training_pair_examples() {
        let sched = make_schedule(4).unwrap();
        let p = forward_sample(&s(1.0), &s(-1.0), 2, &sched, &s(0.5)).unwrap();
        assert!((p.item().unwrap() - 0.5_f64.sqrt() * 0.5).abs() < 1e-15);

        let c = Tensor::full(&[3], 0.2);
        let mut rng = stream(1);
        for _ in 0..50 {
            let pair = make_training_pair(&s(0.9), &s(-0.4), &sched, &mut rng).unwrap();
            assert!((1..=4).contains(&pair.t));
            assert_eq!(pair.target, s(0.9));
            if pair.t == 4 {
                assert_eq!(pair.noisy, s(-0.4));
            }
        }
        let zero = forward_sample(&c, &c, 3, &sched, &Tensor::zeros(&[3])).unwrap();
        for v in zero.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }
}
