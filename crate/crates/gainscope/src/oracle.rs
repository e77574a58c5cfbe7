//! Pointwise-exact gain computations at a fixed parameter value.
//!
//! These are the ground truth every synthesized bound is checked against:
//! state-to-output energy gain via the observability Gramian, L2-induced
//! gain via Hamiltonian-matrix bisection (with a frequency-sweep
//! cross-check), and the H2 norm via the Gramian (with a quadrature
//! cross-check).

use nalgebra::{Complex, DMatrix};
use thiserror::Error;

use crate::system::{build_cascade, spectral_abscissa, NumericStateSpace, SystemError, UncertainSystem};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("matrix is not Hurwitz (spectral abscissa {0:.3e})")]
    NotHurwitz(f64),
    #[error("Lyapunov system is singular")]
    SingularLyapunov,
    #[error("norm bisection did not converge after {0} iterations")]
    BisectionStalled(usize),
    #[error("feedthrough on the mismatch channel is nonzero (|dD| = {0:.3e}); the H2 norm is undefined")]
    NonzeroFeedthrough(f64),
}

/// Solution of AᵀP + PA + Q = 0 with its achieved residual.
#[derive(Debug, Clone)]
pub struct GramianResult {
    pub wo: DMatrix<f64>,
    /// Frobenius norm of AᵀWo + WoA + Q.
    pub residual: f64,
    /// Set when the residual exceeds 1e-8 (1 + |Wo|_F).
    pub flagged: bool,
}

/// Solve the continuous Lyapunov equation AᵀP + PA + Q = 0 by Kronecker
/// vectorization. Dense and direct; intended for 2n ≤ 40.
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<GramianResult, OracleError> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!((q.nrows(), q.ncols()), (n, n));
    let alpha = spectral_abscissa(a);
    if alpha >= 0.0 {
        return Err(OracleError::NotHurwitz(alpha));
    }
    // (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = -vec(Q)
    let at = a.transpose();
    let eye = DMatrix::identity(n, n);
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DMatrix::from_fn(n * n, 1, |i, _| -q[(i % n, i / n)]);
    let lu = k.lu();
    let sol = lu.solve(&rhs).ok_or(OracleError::SingularLyapunov)?;
    let mut p = DMatrix::from_fn(n, n, |r, c| sol[(c * n + r, 0)]);
    p = (p.clone() + p.transpose()) * 0.5;
    let residual = (&at * &p + &p * a + q).norm();
    let flagged = residual > 1e-8 * (1.0 + p.norm());
    Ok(GramianResult { wo: p, residual, flagged })
}

/// Observability Gramian: solves AᵀWo + WoA + CᵀC = 0.
pub fn observability_gramian(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<GramianResult, OracleError> {
    lyapunov_solve(a, &(c.transpose() * c))
}

/// Exact sup over x(0) ≠ 0 (with e(0) = 0, u ≡ 0) of |Δy|₂² / |x(0)|².
///
/// This is the largest eigenvalue of the top-left n×n block of the
/// Δy-observability Gramian of the cascade.
pub fn state_to_output_gain_exact(sys: &UncertainSystem, theta: &[f64]) -> Result<f64, OracleError> {
    let cas = build_cascade(sys)?;
    state_to_output_gain_with_cascade(&cas.abar.eval(theta)?, &cas.c_mismatch().eval(theta)?, sys.n)
}

/// Same computation from already-evaluated cascade matrices.
pub fn state_to_output_gain_with_cascade(
    abar: &DMatrix<f64>,
    c_mismatch: &DMatrix<f64>,
    n: usize,
) -> Result<f64, OracleError> {
    let gram = observability_gramian(abar, c_mismatch)?;
    let top = gram.wo.view((0, 0), (n, n)).into_owned();
    let sym = (top.clone() + top.transpose()) * 0.5;
    Ok(sym.symmetric_eigen().eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Squared H2 norm of a strictly proper realization via the observability
/// Gramian: Tr(Bᵀ Wo B).
pub fn h2_norm_squared(ss: &NumericStateSpace) -> Result<f64, OracleError> {
    if ss.d.norm() > 1e-12 {
        return Err(OracleError::NonzeroFeedthrough(ss.d.norm()));
    }
    let gram = observability_gramian(&ss.a, &ss.c)?;
    Ok((ss.b.transpose() * &gram.wo * &ss.b).trace())
}

/// Squared H2 norm of the u → Δy mismatch channel at a fixed θ.
pub fn h2_norm_exact(sys: &UncertainSystem, theta: &[f64]) -> Result<f64, OracleError> {
    let cas = build_cascade(sys)?;
    let ss = cas.mismatch_realization(theta)?;
    h2_norm_squared(&ss)
}

/// Transfer matrix value C (jωI − A)⁻¹ B + D.
fn transfer_at(ss: &NumericStateSpace, omega: f64) -> DMatrix<Complex<f64>> {
    let n = ss.a.nrows();
    let jw = Complex::new(0.0, omega);
    let m = DMatrix::from_fn(n, n, |r, c| {
        if r == c { jw - Complex::new(ss.a[(r, c)], 0.0) } else { Complex::new(-ss.a[(r, c)], 0.0) }
    });
    let b = ss.b.map(|v| Complex::new(v, 0.0));
    let c = ss.c.map(|v| Complex::new(v, 0.0));
    let d = ss.d.map(|v| Complex::new(v, 0.0));
    let x = m.lu().solve(&b).expect("jwI - A invertible for Hurwitz A");
    c * x + d
}

fn sigma_max(g: &DMatrix<Complex<f64>>) -> f64 {
    if g.nrows() == 1 && g.ncols() == 1 {
        return g[(0, 0)].norm();
    }
    g.clone().svd(false, false).singular_values.iter().copied().fold(0.0, f64::max)
}

/// Does the Hamiltonian matrix for level γ have an imaginary-axis eigenvalue?
fn hamiltonian_has_imaginary_eig(ss: &NumericStateSpace, gamma: f64) -> bool {
    let n = ss.a.nrows();
    let m = ss.b.ncols();
    let r = DMatrix::identity(m, m) * (gamma * gamma) - ss.d.transpose() * &ss.d;
    let Some(r_inv) = r.clone().try_inverse() else {
        return true; // γ at a singular value of D counts as level crossing
    };
    let a_hat = &ss.a + &ss.b * &r_inv * ss.d.transpose() * &ss.c;
    let top_right = &ss.b * &r_inv * ss.b.transpose();
    let inner = DMatrix::identity(ss.d.nrows(), ss.d.nrows()) + &ss.d * &r_inv * ss.d.transpose();
    let bottom_left = -(ss.c.transpose() * inner * &ss.c);
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&a_hat);
    h.view_mut((0, n), (n, n)).copy_from(&top_right);
    h.view_mut((n, 0), (n, n)).copy_from(&bottom_left);
    h.view_mut((n, n), (n, n)).copy_from(&(-a_hat.transpose()));
    h.complex_eigenvalues().iter().any(|l| l.re.abs() <= 1e-9 * (1.0 + l.im.abs()))
}

/// Squared H-infinity norm via Hamiltonian-matrix bisection on the level γ.
/// Relative tolerance 1e-8 on the squared norm; at most 200 bisections.
pub fn hinf_norm_squared(ss: &NumericStateSpace) -> Result<f64, OracleError> {
    let alpha = ss.spectral_abscissa();
    if alpha >= 0.0 {
        return Err(OracleError::NotHurwitz(alpha));
    }
    if ss.b.norm() == 0.0 || ss.c.norm() == 0.0 {
        return Ok(sigma_max(&ss.d.map(|v| Complex::new(v, 0.0))).powi(2));
    }
    let d_gain = sigma_max(&ss.d.map(|v| Complex::new(v, 0.0)));
    let mut lo = d_gain;
    for omega in [0.0, 1.0, 10.0, 100.0] {
        lo = lo.max(sigma_max(&transfer_at(ss, omega)));
    }
    if lo <= 1e-150 {
        return Ok(0.0);
    }
    let mut hi = 2.0 * lo + d_gain + 1e-12;
    let mut grow = 0;
    while hamiltonian_has_imaginary_eig(ss, hi) {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(OracleError::BisectionStalled(grow));
        }
    }
    let mut iters = 0;
    while (hi - lo) > 5e-9 * lo.max(1e-300) {
        iters += 1;
        if iters > 200 {
            return Err(OracleError::BisectionStalled(iters));
        }
        let mid = 0.5 * (lo + hi);
        if hamiltonian_has_imaginary_eig(ss, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gamma = 0.5 * (lo + hi);
    Ok(gamma * gamma)
}

/// Squared H-infinity norm by a log-spaced frequency sweep with golden-section
/// refinement around every sampled local peak. Cross-check for the bisection.
pub fn hinf_norm_squared_sweep(ss: &NumericStateSpace) -> Result<f64, OracleError> {
    let alpha = ss.spectral_abscissa();
    if alpha >= 0.0 {
        return Err(OracleError::NotHurwitz(alpha));
    }
    if ss.b.norm() == 0.0 || ss.c.norm() == 0.0 {
        return Ok(sigma_max(&ss.d.map(|v| Complex::new(v, 0.0))).powi(2));
    }
    let mut omegas = vec![0.0];
    let per_decade = 60usize;
    let count = 8 * per_decade; // 1e-4 .. 1e4
    for k in 0..=count {
        omegas.push(10f64.powf(-4.0 + k as f64 / per_decade as f64));
    }
    let vals: Vec<f64> = omegas.iter().map(|&w| sigma_max(&transfer_at(ss, w))).collect();
    let mut best = sigma_max(&ss.d.map(|v| Complex::new(v, 0.0)));
    for i in 0..vals.len() {
        best = best.max(vals[i]);
        let left_ok = i == 0 || vals[i] >= vals[i - 1];
        let right_ok = i + 1 == vals.len() || vals[i] >= vals[i + 1];
        if !(left_ok && right_ok) {
            continue;
        }
        let lo = if i == 0 { 0.0 } else { omegas[i - 1] };
        let hi = if i + 1 == omegas.len() { omegas[i] * 10.0 } else { omegas[i + 1] };
        best = best.max(golden_max(|w| sigma_max(&transfer_at(ss, w)), lo, hi));
    }
    Ok(best * best)
}

pub(crate) fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - PHI * (b - a);
    let mut x2 = a + PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..120 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + PHI * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - PHI * (b - a);
            f1 = f(x1);
        }
    }
    f1.max(f2)
}

/// Exact squared L2-induced gain of u → Δy at a fixed θ (zero initial state).
pub fn l2_induced_gain_exact(sys: &UncertainSystem, theta: &[f64]) -> Result<f64, OracleError> {
    let nominal_alpha = sys.nominal()?.spectral_abscissa();
    if nominal_alpha >= 0.0 {
        return Err(OracleError::NotHurwitz(nominal_alpha));
    }
    let cas = build_cascade(sys)?;
    let ss = cas.mismatch_realization(theta)?;
    hinf_norm_squared(&ss)
}

/// Squared H2 norm by adaptive Simpson quadrature of |G(jω)|_F² / π over
/// ω ∈ [0, ∞), mapped to a finite interval by ω = tan(φ). Independent
/// cross-check for the Gramian route; requires D = 0.
pub fn h2_norm_squared_quadrature(ss: &NumericStateSpace) -> Result<f64, OracleError> {
    if ss.d.norm() > 1e-12 {
        return Err(OracleError::NonzeroFeedthrough(ss.d.norm()));
    }
    let alpha = ss.spectral_abscissa();
    if alpha >= 0.0 {
        return Err(OracleError::NotHurwitz(alpha));
    }
    // integrand in φ; at φ = π/2 the limit is |C B|_F² (roll-off 1/ω)
    let cb_limit = (&ss.c * &ss.b).norm_squared();
    let f = |phi: f64| -> f64 {
        if phi >= std::f64::consts::FRAC_PI_2 - 1e-12 {
            return cb_limit;
        }
        let w = phi.tan();
        let g = transfer_at(ss, w);
        let sec2 = 1.0 + w * w;
        g.iter().map(|z| z.norm_sqr()).sum::<f64>() * sec2
    };
    let integral = adaptive_simpson(&f, 0.0, std::f64::consts::FRAC_PI_2, 1e-11, 30);
    Ok(integral / std::f64::consts::PI)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{ANALYTIC_EXAMPLE, NUMERIC_EXAMPLE};
    use crate::system::load_system;
    use nalgebra::dmatrix;

    fn first_order(a: f64, b: f64, c: f64, d: f64) -> NumericStateSpace {
        NumericStateSpace::new(dmatrix![a], dmatrix![b], dmatrix![c], dmatrix![d]).unwrap()
    }

    #[test]
    fn lyapunov_scalar_closed_forms() {
        let r = lyapunov_solve(&dmatrix![-1.0], &dmatrix![2.0]).unwrap();
        assert!((r.wo[(0, 0)] - 1.0).abs() < 1e-14);
        for a in [0.5, 1.0, 7.25] {
            let r = lyapunov_solve(&dmatrix![-a], &dmatrix![1.0]).unwrap();
            assert!((r.wo[(0, 0)] - 1.0 / (2.0 * a)).abs() < 1e-12);
        }
    }

    #[test]
    fn lyapunov_2x2_residual() {
        let a = dmatrix![-3.0, 0.0; -1.0, -2.0];
        let r = lyapunov_solve(&a, &DMatrix::identity(2, 2)).unwrap();
        assert!(r.residual <= 1e-10);
        assert!(!r.flagged);
        assert!((r.wo.clone() - r.wo.transpose()).norm() < 1e-12);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        assert!(matches!(
            lyapunov_solve(&dmatrix![1.0], &dmatrix![1.0]),
            Err(OracleError::NotHurwitz(_))
        ));
    }

    #[test]
    fn s2o_gain_zero_at_nominal() {
        for text in [NUMERIC_EXAMPLE, ANALYTIC_EXAMPLE] {
            let sys = load_system(text).unwrap();
            let g = state_to_output_gain_exact(&sys, &sys.theta_star).unwrap();
            assert!(g.abs() <= 1e-12, "gain at nominal = {}", g);
        }
    }

    /// Closed-form state-to-output gain of the analytic example:
    /// -1/(2a*) + 2/(a* + a) - 1/(2a) with a* = A(0), a = A(θ̃).
    fn analytic_p1n(theta_star: (f64, f64), tt: (f64, f64)) -> f64 {
        let (t1s, t2s) = theta_star;
        let a_star = -t1s / (1.0 + t2s);
        let a = -t1s * (1.0 + tt.0) / (1.0 + t2s * (1.0 + tt.1));
        -1.0 / (2.0 * a_star) + 2.0 / (a_star + a) - 1.0 / (2.0 * a)
    }

    #[test]
    fn s2o_gain_matches_analytic_closed_form() {
        let sys = load_system(ANALYTIC_EXAMPLE).unwrap();
        for tt in [(-0.5, 0.4), (0.3, -0.7), (2.0, 1.0), (1.5, 2.8), (-0.85, 2.9)] {
            let got = state_to_output_gain_exact(&sys, &[tt.0, tt.1]).unwrap();
            let want = analytic_p1n((1.0, 1.0), tt);
            assert!(
                (got - want).abs() <= 1e-8 * (1.0 + want.abs()),
                "θ̃ = {:?}: {} vs {}",
                tt,
                got,
                want
            );
        }
    }

    #[test]
    fn s2o_gain_vanishes_on_invariant_line() {
        let sys = load_system(ANALYTIC_EXAMPLE).unwrap();
        // line θ̃1 = θ*_2/(1+θ*_2) θ̃2 = θ̃2/2 for θ* = (1,1)
        for k in 0..20 {
            let t2 = -0.9 + 3.9 * k as f64 / 19.0;
            let g = state_to_output_gain_exact(&sys, &[t2 / 2.0, t2]).unwrap();
            assert!(g.abs() <= 1e-10, "gain on line = {:.3e}", g);
        }
    }

    #[test]
    fn hinf_first_order_unit() {
        let g = hinf_norm_squared(&first_order(-1.0, 1.0, 1.0, 0.0)).unwrap();
        assert!((g - 1.0).abs() <= 1e-8, "got {}", g);
        let s = hinf_norm_squared_sweep(&first_order(-1.0, 1.0, 1.0, 0.0)).unwrap();
        assert!((s - 1.0).abs() <= 1e-8, "sweep got {}", s);
    }

    #[test]
    fn l2_gain_zero_at_nominal() {
        let sys = load_system(NUMERIC_EXAMPLE).unwrap();
        let g = l2_induced_gain_exact(&sys, &[0.0, 0.0]).unwrap();
        assert!(g.abs() <= 1e-12);
    }

    #[test]
    fn l2_gain_numeric_example_point() {
        // mismatch transfer at θ=(1,0) is (-s-1)/((s+2)(s+3)); the squared
        // norm maximizes (u+1)/((u+4)(u+9)) over u = ω², attained at
        // u = -1+√24 with value √24/(48+11√24).
        let sys = load_system(NUMERIC_EXAMPLE).unwrap();
        let got = l2_induced_gain_exact(&sys, &[1.0, 0.0]).unwrap();
        let expect = 0.048_081_641_154_691_51;
        // independent scalar maximization of the frequency response
        let f = |u: f64| (u + 1.0) / ((u + 4.0) * (u + 9.0));
        let brute = golden_max(f, 0.0, 100.0);
        assert!((brute - expect).abs() <= 1e-12);
        assert!((got - expect).abs() <= 1e-8 * (1.0 + expect));
    }

    #[test]
    fn bisection_and_sweep_agree_on_grid() {
        let sys = load_system(NUMERIC_EXAMPLE).unwrap();
        let cas = build_cascade(&sys).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let theta = [-1.4 + 2.8 * i as f64 / 4.0, -0.9 + 1.8 * j as f64 / 4.0];
                let ss = cas.mismatch_realization(&theta).unwrap();
                let a = hinf_norm_squared(&ss).unwrap();
                let b = hinf_norm_squared_sweep(&ss).unwrap();
                assert!(
                    (a - b).abs() <= 1e-6 * (1.0 + a.abs()),
                    "θ = {:?}: bisection {} sweep {}",
                    theta,
                    a,
                    b
                );
            }
        }
    }

    #[test]
    fn h2_first_order_closed_form() {
        // cb/(s+a) has squared H2 norm (cb)²/(2a)
        for (a, b, c) in [(1.0, 1.0, 1.0), (3.0, -2.0, 0.5), (0.25, 1.5, 2.0)] {
            let g = h2_norm_squared(&first_order(-a, b, c, 0.0)).unwrap();
            assert!((g - (c * b).powi(2) / (2.0 * a)).abs() < 1e-12);
        }
    }

    #[test]
    fn h2_zero_at_nominal_and_quadrature_crosscheck() {
        let sys = load_system(NUMERIC_EXAMPLE).unwrap();
        assert!(h2_norm_exact(&sys, &[0.0, 0.0]).unwrap().abs() <= 1e-12);
        let cas = build_cascade(&sys).unwrap();
        let ss = cas.mismatch_realization(&[1.0, 0.0]).unwrap();
        let gram = h2_norm_squared(&ss).unwrap();
        let quad = h2_norm_squared_quadrature(&ss).unwrap();
        assert!(
            (gram - quad).abs() <= 1e-6 * (1.0 + gram.abs()),
            "gramian {} quadrature {}",
            gram,
            quad
        );
    }

    #[test]
    fn h2_rejects_feedthrough() {
        assert!(matches!(
            h2_norm_squared(&first_order(-1.0, 1.0, 1.0, 0.5)),
            Err(OracleError::NonzeroFeedthrough(_))
        ));
    }

    #[test]
    fn oracles_nonnegative_and_consistent_on_grid() {
        let sys = load_system(NUMERIC_EXAMPLE).unwrap();
        let cas = build_cascade(&sys).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let theta = [-1.2 + 2.4 * i as f64 / 3.0, -0.8 + 1.6 * j as f64 / 3.0];
                let g = state_to_output_gain_exact(&sys, &theta).unwrap();
                assert!(g >= -1e-12);
                let gram = observability_gramian(
                    &cas.abar.eval(&theta).unwrap(),
                    &cas.c_mismatch().eval(&theta).unwrap(),
                )
                .unwrap();
                let top = gram.wo.view((0, 0), (1, 1)).into_owned();
                assert_eq!(g <= 1e-12, top.norm() <= 1e-12);
            }
        }
    }
}
