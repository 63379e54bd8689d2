//! Statistical and analytic checks of the bridge process.

use bridgekd::bridge::{forward_sample, make_schedule, posterior_params, transition_sample};
use bridgekd::rng::{standard_normal, stream};
use bridgekd::Tensor;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn endpoints_are_exact_for_random_shapes() {
    let mut rng = stream(1);
    for _ in 0..100 {
        let rank = rng.random_range(1..=4);
        let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=6)).collect();
        let p0 = standard_normal(&mut rng, &shape);
        let q = standard_normal(&mut rng, &shape);
        let noise = standard_normal(&mut rng, &shape);
        let steps = rng.random_range(2..=60);
        let sched = make_schedule(steps).unwrap();
        assert_eq!(forward_sample(&p0, &q, 0, &sched, &noise).unwrap(), p0);
        assert_eq!(forward_sample(&p0, &q, steps, &sched, &noise).unwrap(), q);
    }
}

/// 100k independent chains run as one vector: the forward Markov chain must
/// reproduce the closed-form marginal at every step.
#[test]
fn chained_transitions_match_marginals() {
    const N: usize = 100_000;
    let steps = 10;
    let sched = make_schedule(steps).unwrap();
    let p0 = Tensor::full(&[N], 1.0);
    let q = Tensor::full(&[N], -1.0);
    let mut rng = stream(2024);
    let mut state = p0.clone();
    for t in 1..=steps {
        let noise = standard_normal(&mut rng, &[N]);
        state = transition_sample(&state, &q, t, &sched, &noise).unwrap();
        let k = t as f64 / steps as f64;
        let (want_mean, want_var) = ((1.0 - k) * 1.0 + -k, 2.0 * k * (1.0 - k));
        let mean = state.mean();
        let var = state.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (N - 1) as f64;
        let se = (want_var / N as f64).sqrt();
        assert!(
            (mean - want_mean).abs() <= 4.0 * se + 1e-15,
            "t={t}: mean {mean} vs {want_mean}"
        );
        assert!(
            (var - want_var).abs() <= 0.02 * want_var,
            "t={t}: var {var} vs {want_var}"
        );
    }
}

/// Posterior of `P_{t-1}` by brute-force numerical Bayes on a grid, with the
/// transition coefficients derived from the marginals alone.
fn grid_posterior(p0: f64, q: f64, pt: f64, t: usize, steps: usize) -> (f64, f64) {
    let s = t - 1;
    let k = |i: usize| i as f64 / steps as f64;
    let var = |i: usize| 2.0 * k(i) * (1.0 - k(i));
    let prior_mean = (1.0 - k(s)) * p0 + k(s) * q;
    let prior_var = var(s);
    if prior_var == 0.0 {
        return (prior_mean, 0.0);
    }
    let a = if t == steps { 0.0 } else { (1.0 - k(t)) / (1.0 - k(s)) };
    let b = k(t) - a * k(s);
    let v = var(t) - a * a * prior_var;
    let sd = prior_var.sqrt();
    let n = 40_001;
    let (lo, hi) = (prior_mean - 12.0 * sd, prior_mean + 12.0 * sd);
    let h = (hi - lo) / (n - 1) as f64;
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let x = lo + i as f64 * h;
        let prior = (-(x - prior_mean).powi(2) / (2.0 * prior_var)).exp();
        let like = if v <= 0.0 {
            1.0
        } else {
            (-(pt - a * x - b * q).powi(2) / (2.0 * v)).exp()
        };
        let w = prior * like;
        z += w;
        m1 += w * x;
        m2 += w * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

#[test]
fn posterior_matches_grid_bayes() {
    let steps = 8;
    let sched = make_schedule(steps).unwrap();
    let mut rng = stream(5);
    for _ in 0..5 {
        let (p0, q, pt) = (
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.5..1.5),
        );
        for t in 1..=steps {
            let post =
                posterior_params(&Tensor::scalar(pt), &Tensor::scalar(p0), &Tensor::scalar(q), t, &sched).unwrap();
            let (mean, var) = grid_posterior(p0, q, pt, t, steps);
            let got = post.mean.item().unwrap();
            assert!((got - mean).abs() <= 1e-3, "t={t}: mean {got} vs {mean}");
            assert!(
                (post.variance - var).abs() <= 1e-3,
                "t={t}: var {} vs {var}",
                post.variance
            );
        }
    }
}

proptest! {
    #[test]
    fn posterior_variance_bounded_by_marginal(steps in 2usize..80, frac in 0.0f64..1.0) {
        let sched = make_schedule(steps).unwrap();
        let t = 1 + ((steps - 1) as f64 * frac) as usize;
        let x = Tensor::scalar(0.3);
        let post = posterior_params(&x, &x, &x, t, &sched).unwrap();
        prop_assert!(post.variance >= 0.0);
        prop_assert!(post.variance <= sched.var()[t - 1] + 1e-15);
    }
}
