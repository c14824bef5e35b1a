//! Sampling kernels: seeded substreams, truncated normal draws, generalized
//! inverse Gaussian draws, and multivariate Gaussian draws parameterized by
//! a precision matrix.
//!
//! All kernels take an explicit `&mut ChaCha8Rng` so every consumer of
//! randomness is tied to a named substream and runs reproduce bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Independent substream `stream` of the generator seeded with `seed`.
/// Streams with distinct ids never overlap, so each logical consumer
/// (chain, trial, predictive draw) gets its own.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const MAX_REJECT: usize = 100_000;

/// One draw from N(mean, sd^2) truncated to [lower, upper]. Either bound may
/// be infinite. Far-tail one-sided truncations use translated-exponential
/// rejection, so the kernel stays exact even at bounds like mean + 40 sd.
pub fn draw_truncated_normal(
    rng: &mut ChaCha8Rng,
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
) -> Result<f64> {
    if !(sd > 0.0) {
        return Err(Error::Numeric(format!("truncated normal: sd={sd} not positive")));
    }
    if !(lower < upper) {
        return Err(Error::Numeric(format!(
            "truncated normal: empty interval [{lower}, {upper}]"
        )));
    }
    let l = (lower - mean) / sd;
    let u = (upper - mean) / sd;
    let z = match (l.is_finite(), u.is_finite()) {
        (false, false) => rng.sample::<f64, _>(StandardNormal),
        (true, false) => std_lower_truncated(rng, l)?,
        (false, true) => -std_lower_truncated(rng, -u)?,
        (true, true) => std_two_sided(rng, l, u)?,
    };
    Ok(mean + sd * z)
}

/// Standard normal conditioned on [l, inf).
fn std_lower_truncated(rng: &mut ChaCha8Rng, l: f64) -> Result<f64> {
    if l <= 0.45 {
        // plenty of mass above l: plain rejection from the untruncated normal
        for _ in 0..MAX_REJECT {
            let z: f64 = rng.sample(StandardNormal);
            if z >= l {
                return Ok(z);
            }
        }
    } else {
        // translated-exponential proposal with the optimal rate
        let alpha = 0.5 * (l + (l * l + 4.0).sqrt());
        let exp = Exp::new(alpha).map_err(|e| Error::Numeric(format!("exp proposal: {e}")))?;
        for _ in 0..MAX_REJECT {
            let z = l + exp.sample(rng);
            let d = z - alpha;
            if rng.gen::<f64>().ln() <= -0.5 * d * d {
                return Ok(z);
            }
        }
    }
    Err(Error::Numeric(format!(
        "truncated normal: rejection cap hit at lower bound {l}"
    )))
}

/// Standard normal conditioned on [l, u], both finite.
fn std_two_sided(rng: &mut ChaCha8Rng, l: f64, u: f64) -> Result<f64> {
    // if the interval straddles the mode and is not too narrow, plain
    // rejection is cheap; otherwise bounded uniform rejection is robust
    if l <= 0.0 && u >= 0.0 && u - l > 0.5 {
        for _ in 0..(MAX_REJECT / 10) {
            let z: f64 = rng.sample(StandardNormal);
            if z >= l && z <= u {
                return Ok(z);
            }
        }
    }
    // tail intervals: sample the one-sided tail and keep draws under the cap;
    // in the tail nearly all mass sits just above the near bound
    if l > 0.45 || u < -0.45 {
        let (a, b, flip) = if l > 0.0 { (l, u, false) } else { (-u, -l, true) };
        let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
        let exp = Exp::new(alpha).map_err(|e| Error::Numeric(format!("exp proposal: {e}")))?;
        for _ in 0..MAX_REJECT {
            let z = a + exp.sample(rng);
            if z > b {
                continue;
            }
            let d = z - alpha;
            if rng.gen::<f64>().ln() <= -0.5 * d * d {
                return Ok(if flip { -z } else { z });
            }
        }
    }
    // uniform proposal against the max of the density over the interval
    let c = if l > 0.0 {
        l
    } else if u < 0.0 {
        u
    } else {
        0.0
    };
    for _ in 0..MAX_REJECT {
        let z = rng.gen_range(l..u);
        if rng.gen::<f64>().ln() <= 0.5 * (c * c - z * z) {
            return Ok(z);
        }
    }
    Err(Error::Numeric(format!(
        "truncated normal: rejection cap hit on [{l}, {u}]"
    )))
}

/// One draw from the generalized inverse Gaussian with density proportional
/// to x^(p-1) exp(-(a x + b / x) / 2) on (0, inf).
///
/// Boundary cases reduce exactly: b = 0 with p > 0 is Gamma(p, rate a/2);
/// a = 0 with p < 0 is inverse-Gamma(-p, rate b/2). The interior case uses
/// ratio-of-uniforms relative to the mode, carried out in log scale so large
/// |p| (which the interweaving boost produces) cannot overflow.
pub fn draw_gig(rng: &mut ChaCha8Rng, p: f64, a: f64, b: f64) -> Result<f64> {
    if a < 0.0 || b < 0.0 || !a.is_finite() || !b.is_finite() || !p.is_finite() {
        return Err(Error::Numeric(format!("gig: invalid parameters p={p} a={a} b={b}")));
    }
    if b == 0.0 {
        if p <= 0.0 || a <= 0.0 {
            return Err(Error::Numeric(format!(
                "gig: b=0 requires p>0 and a>0 (got p={p}, a={a})"
            )));
        }
        let g = Gamma::new(p, 2.0 / a).map_err(|e| Error::Numeric(format!("gig gamma: {e}")))?;
        return Ok(g.sample(rng));
    }
    if a == 0.0 {
        if p >= 0.0 {
            return Err(Error::Numeric(format!("gig: a=0 requires p<0 (got p={p})")));
        }
        let g = Gamma::new(-p, 2.0 / b).map_err(|e| Error::Numeric(format!("gig gamma: {e}")))?;
        return Ok(1.0 / g.sample(rng));
    }

    // log kernel, normalized below so the mode maps to 0
    let log_kernel = |x: f64| (p - 1.0) * x.ln() - 0.5 * (a * x + b / x);
    // modes of g and of x^2 g solve a x^2 - 2(p-1+s) x - b = 0 for s = 0, 2
    let mode_of = |shift: f64| {
        let c = p - 1.0 + shift;
        (c + (c * c + a * b).sqrt()) / a
    };
    let m = mode_of(0.0);
    let lg_m = log_kernel(m);
    let x_plus = mode_of(2.0);
    // v_max = x+ * sqrt(g(x+)/g(m)) in levels
    let log_v_max = x_plus.ln() + 0.5 * (log_kernel(x_plus) - lg_m);
    for _ in 0..MAX_REJECT {
        let u: f64 = rng.gen::<f64>();
        let v: f64 = rng.gen::<f64>();
        if u == 0.0 || v == 0.0 {
            continue;
        }
        let x = (log_v_max + v.ln() - u.ln()).exp();
        if 2.0 * u.ln() <= log_kernel(x) - lg_m {
            return Ok(x);
        }
    }
    Err(Error::Numeric(format!(
        "gig: rejection cap hit for p={p} a={a} b={b}"
    )))
}

/// One draw from N(P^-1 h, P^-1) given the precision matrix P and the linear
/// term h, via a single Cholesky of P. If P fails to factor, one retry adds
/// a jitter of 1e-10 times the mean diagonal; a second failure is an error.
pub fn draw_gaussian_posterior(
    rng: &mut ChaCha8Rng,
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (mean, chol_upper) = precision_solve(precision, linear)?;
    let n = mean.len();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    // x = mean + U^-1 z where P = U' U, so cov(x) = U^-1 U^-T = P^-1
    let w = chol_upper
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numeric("gaussian posterior: singular factor".into()))?;
    Ok(mean + w)
}

/// Posterior mean P^-1 h and the upper Cholesky factor of P.
pub fn precision_solve(
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = precision.nrows();
    if precision.ncols() != n || linear.len() != n {
        return Err(Error::Numeric("gaussian posterior: dimension mismatch".into()));
    }
    let chol = precision.clone().cholesky().or_else(|| {
        let mean_diag = precision.diagonal().mean();
        let jittered = precision + DMatrix::identity(n, n) * (1e-10 * mean_diag.abs().max(1e-300));
        jittered.cholesky()
    });
    let chol = chol.ok_or_else(|| {
        Error::Numeric("gaussian posterior: precision matrix not positive definite".into())
    })?;
    let mean = chol.solve(linear);
    Ok((mean, chol.l().transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phi(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    /// Composite Simpson on [lo, hi].
    fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(lo + h * k as f64);
        }
        s * h / 3.0
    }

    #[test]
    fn substreams_differ_and_reproduce() {
        let a: Vec<u64> = {
            let mut r = substream(9, 0);
            (0..4).map(|_| r.gen()).collect()
        };
        let a2: Vec<u64> = {
            let mut r = substream(9, 0);
            (0..4).map(|_| r.gen()).collect()
        };
        let b: Vec<u64> = {
            let mut r = substream(9, 1);
            (0..4).map(|_| r.gen()).collect()
        };
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }

    #[test]
    fn half_normal_mean() {
        let mut rng = substream(42, 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += draw_truncated_normal(&mut rng, 0.0, 1.0, 0.0, f64::INFINITY).unwrap();
        }
        let mean = sum / n as f64;
        let want = (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - want).abs() < 0.005, "mean {mean} vs {want}");
    }

    #[test]
    fn far_tail_mean_matches_quadrature() {
        // E[Z | Z > 5]: quadrature oracle over [5, 15] (mass beyond 15 is ~0)
        let num = simpson(|x| x * phi(x), 5.0, 15.0, 4000);
        let den = simpson(phi, 5.0, 15.0, 4000);
        let want = num / den;
        let mut rng = substream(7, 1);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z = draw_truncated_normal(&mut rng, 0.0, 1.0, 5.0, f64::INFINITY).unwrap();
            assert!(z >= 5.0);
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - want).abs() < 4.0 * se + 1e-6,
            "tail mean {mean} vs oracle {want} (se {se})"
        );
    }

    #[test]
    fn two_sided_cases_stay_in_bounds_and_match_quadrature() {
        let cases = [(-1.0, 0.5), (2.0, 2.2), (-6.0, -5.5), (3.0, 30.0), (-0.1, 0.1)];
        for &(l, u) in &cases {
            let num = simpson(|x| x * phi(x), l, u, 4000);
            let den = simpson(phi, l, u, 4000);
            let want = num / den;
            let mut rng = substream(11, 2);
            let n = 100_000;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..n {
                let z = draw_truncated_normal(&mut rng, 0.0, 1.0, l, u).unwrap();
                assert!(z >= l && z <= u, "draw {z} outside [{l}, {u}]");
                sum += z;
                sumsq += z * z;
            }
            let mean = sum / n as f64;
            let se = ((sumsq / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
            assert!(
                (mean - want).abs() < 5.0 * se + 1e-6,
                "[{l},{u}]: mean {mean} vs oracle {want}"
            );
        }
    }

    #[test]
    fn truncated_normal_location_scale() {
        let mut rng = substream(3, 0);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let z = draw_truncated_normal(&mut rng, 2.0, 3.0, 2.0, f64::INFINITY).unwrap();
            assert!(z >= 2.0);
            sum += z;
        }
        // mean + sd * E[half normal]
        let want = 2.0 + 3.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((sum / n as f64 - want).abs() < 0.02);
    }

    #[test]
    fn truncated_normal_rejects_bad_input() {
        let mut rng = substream(0, 0);
        assert!(draw_truncated_normal(&mut rng, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(draw_truncated_normal(&mut rng, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(draw_truncated_normal(&mut rng, 0.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn gig_gamma_boundary_mean() {
        // b = 0 reduces to Gamma(p, rate a/2) with mean 2p/a
        let (p, a) = (3.0, 4.0);
        let mut rng = substream(5, 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += draw_gig(&mut rng, p, a, 0.0).unwrap();
        }
        let mean = sum / n as f64;
        let want = 2.0 * p / a;
        assert!(
            (mean - want).abs() / want < 0.005,
            "gamma-boundary mean {mean} vs {want}"
        );
    }

    #[test]
    fn gig_inverse_gamma_boundary_mean() {
        // a = 0 reduces to inverse-Gamma(-p, rate b/2), mean (b/2)/(-p-1)
        let (p, b) = (-4.0, 6.0);
        let mut rng = substream(5, 1);
        let n = 500_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += draw_gig(&mut rng, p, 0.0, b).unwrap();
        }
        let mean = sum / n as f64;
        let want = (b / 2.0) / (-p - 1.0);
        assert!((mean - want).abs() / want < 0.01, "mean {mean} vs {want}");
    }

    #[test]
    fn gig_interior_mean_matches_quadrature() {
        // oracle: E[X] by quadrature of the unnormalized density
        let cases = [(1.0, 1.0, 1.0), (0.5, 2.0, 3.0), (-2.5, 1.5, 4.0), (10.0, 3.0, 0.5)];
        for &(p, a, b) in &cases {
            let g = |x: f64| (p - 1.0) * x.ln() - 0.5 * (a * x + b / x);
            // integrate over a generous bracket around the mode
            let m = ((p - 1.0) + ((p - 1.0f64).powi(2) + a * b).sqrt()) / a;
            let lo = 1e-6;
            let hi = m + 60.0 / a + 60.0;
            let norm = g(m);
            let num = simpson(|x| x * (g(x) - norm).exp(), lo, hi, 20_000);
            let den = simpson(|x| (g(x) - norm).exp(), lo, hi, 20_000);
            let want = num / den;
            let mut rng = substream(6, 0);
            let n = 300_000;
            let mut sum = 0.0;
            for _ in 0..n {
                sum += draw_gig(&mut rng, p, a, b).unwrap();
            }
            let mean = sum / n as f64;
            assert!(
                (mean - want).abs() / want < 0.02,
                "gig({p},{a},{b}): mean {mean} vs oracle {want}"
            );
        }
    }

    #[test]
    fn gig_extreme_order_stays_finite() {
        // the interweaving boost can push p to large magnitude
        let mut rng = substream(6, 1);
        for &(p, a, b) in &[(-220.0, 1.0, 35.0), (180.0, 2.0, 1.0), (-0.5, 1e-4, 3.0)] {
            for _ in 0..200 {
                let x = draw_gig(&mut rng, p, a, b).unwrap();
                assert!(x.is_finite() && x > 0.0);
            }
        }
    }

    #[test]
    fn gig_rejects_bad_input() {
        let mut rng = substream(0, 0);
        assert!(draw_gig(&mut rng, 1.0, -1.0, 1.0).is_err());
        assert!(draw_gig(&mut rng, -1.0, 1.0, 0.0).is_err());
        assert!(draw_gig(&mut rng, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn gaussian_posterior_matches_dense_solve() {
        // P = A'A + I, h arbitrary; compare sample moments to P^-1 h and P^-1
        let n = 5;
        let mut rng = substream(13, 0);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let p = a.transpose() * &a + DMatrix::identity(n, n);
        let h = DVector::from_fn(n, |i, _| (i as f64) - 2.0);
        let p_inv = p.clone().try_inverse().unwrap();
        let mean_true = &p_inv * &h;

        let ndraw = 200_000;
        let mut mean_hat = DVector::zeros(n);
        let mut sq: DVector<f64> = DVector::zeros(n);
        for _ in 0..ndraw {
            let x = draw_gaussian_posterior(&mut rng, &p, &h).unwrap();
            mean_hat += &x;
            for i in 0..n {
                sq[i] += x[i] * x[i];
            }
        }
        mean_hat /= ndraw as f64;
        for i in 0..n {
            let var_hat = sq[i] / ndraw as f64 - mean_hat[i] * mean_hat[i];
            let se = (p_inv[(i, i)] / ndraw as f64).sqrt();
            assert!(
                (mean_hat[i] - mean_true[i]).abs() < 4.0 * se,
                "component {i}: {} vs {}",
                mean_hat[i],
                mean_true[i]
            );
            assert!((var_hat - p_inv[(i, i)]).abs() / p_inv[(i, i)] < 0.03);
        }
    }

    #[test]
    fn gaussian_posterior_jitter_recovers_near_singular() {
        // rank-deficient up to rounding: jitter retry should still factor
        let mut v = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                v[(i, j)] = 1.0 + if i == j { 1e-13 } else { 0.0 };
            }
        }
        let h = DVector::from_element(3, 1.0);
        let mut rng = substream(14, 0);
        let x = draw_gaussian_posterior(&mut rng, &v, &h).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
    }
}
