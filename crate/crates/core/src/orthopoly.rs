//! Gegenbauer polynomials normalized to `Q_k(1) = 1`, Gauss quadrature for the
//! weight `(1 - t^2)^((zeta - 3) / 2)`, and sphere constants.

use std::f64::consts::PI;

use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};

const QL_MAX_ITERATIONS: usize = 50;

fn check_zeta(zeta: usize) -> Result<()> {
    if zeta < 2 {
        return Err(Error::Argument(format!("zeta must be at least 2, got {zeta}")));
    }
    Ok(())
}

/// Jacobi exponent of the one-dimensional weight.
pub fn weight_exponent(zeta: usize) -> f64 {
    (zeta as f64 - 3.0) / 2.0
}

/// Evaluates `Q_k(t)`: Chebyshev `T_k` for `zeta = 2`, Legendre `P_k` for `zeta = 3`.
pub fn gegenbauer_eval(zeta: usize, k: usize, t: f64) -> f64 {
    *gegenbauer_all(zeta, k, t).last().unwrap()
}

/// `Q_0(t) ..= Q_kmax(t)`.
pub fn gegenbauer_all(zeta: usize, kmax: usize, t: f64) -> Vec<f64> {
    let lambda2 = zeta as f64 - 2.0;
    let mut q = Vec::with_capacity(kmax + 1);
    q.push(1.0);
    if kmax >= 1 {
        q.push(t);
    }
    for k in 1..kmax {
        let kf = k as f64;
        let next = ((2.0 * kf + lambda2) * t * q[k] - kf * q[k - 1]) / (kf + lambda2);
        q.push(next);
    }
    q
}

/// Area of the unit sphere `S^m` embedded in `R^(m+1)`.
pub fn sphere_area(m: usize) -> f64 {
    let h = (m as f64 + 1.0) / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// `(|S^(zeta-1)|, |S^(zeta-2)|)`.
pub fn sphere_constants(zeta: usize) -> Result<(f64, f64)> {
    check_zeta(zeta)?;
    Ok((sphere_area(zeta - 1), sphere_area(zeta - 2)))
}

/// `|S^(zeta-2)| / |S^(zeta-1)|`: turns the weighted integral over `[-1, 1]`
/// into an expectation under the uniform probability measure on `S^(zeta-1)`.
pub fn projection_constant(zeta: usize) -> f64 {
    let z = zeta as f64;
    (ln_gamma(z / 2.0) - ln_gamma((z - 1.0) / 2.0)).exp() / PI.sqrt()
}

/// Dimension of the space of degree-`k` spherical harmonics on `S^(zeta-1)`.
pub fn harmonic_count(zeta: usize, k: usize) -> u128 {
    if k == 0 {
        return 1;
    }
    if zeta == 2 {
        return 2;
    }
    // C(k + zeta - 3, k - 1) by the multiplicative formula, exact at every step.
    let n = (k + zeta - 3) as u128;
    let r = (k - 1) as u128;
    let mut binom: u128 = 1;
    for i in 0..r {
        binom = binom * (n - i) / (i + 1);
    }
    (2 * k as u128 + zeta as u128 - 2) * binom / k as u128
}

/// Mass of the weight `(1 - t^2)^alpha` on `[-1, 1]`.
pub fn weight_mass(alpha: f64) -> f64 {
    PI.sqrt() * (ln_gamma(alpha + 1.0) - ln_gamma(alpha + 1.5)).exp()
}

/// Gauss rule for the weight `(1 - t^2)^alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub zeta: usize,
    pub alpha: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// `M`-point Gauss rule for the `zeta` weight via Golub-Welsch, or the
/// closed-form Chebyshev rule when `zeta = 2`.
pub fn gauss_jacobi(m: usize, zeta: usize) -> Result<QuadratureRule> {
    check_zeta(zeta)?;
    if m == 0 {
        return Err(Error::Argument("quadrature needs at least one node".into()));
    }
    let alpha = weight_exponent(zeta);
    let (mut nodes, mut weights) = if zeta == 2 {
        let nodes: Vec<f64> = (1..=m)
            .rev()
            .map(|i| ((2 * i - 1) as f64 * PI / (2 * m) as f64).cos())
            .collect();
        (nodes, vec![PI / m as f64; m])
    } else {
        golub_welsch(m, alpha)?
    };
    symmetrize(&mut nodes, &mut weights);
    Ok(QuadratureRule {
        zeta,
        alpha,
        nodes,
        weights,
    })
}

fn golub_welsch(m: usize, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    // Monic recurrence p_{k+1} = t p_k - beta_k p_{k-1} for the symmetric
    // Gegenbauer weight with lambda = alpha + 1/2.
    let lambda = alpha + 0.5;
    let mut diag = vec![0.0; m];
    let mut off = vec![0.0; m];
    for k in 1..m {
        let kf = k as f64;
        let beta = kf * (kf + 2.0 * lambda - 1.0) / (4.0 * (kf + lambda) * (kf + lambda - 1.0));
        off[k - 1] = beta.sqrt();
    }
    let mut first = vec![0.0; m];
    first[0] = 1.0;
    tridiagonal_ql(&mut diag, &mut off, &mut first)?;

    let mass = weight_mass(alpha);
    let mut pairs: Vec<(f64, f64)> = diag.into_iter().zip(first).map(|(x, v)| (x, mass * v * v)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

/// Implicit-shift QL on a symmetric tridiagonal matrix. `off[i]` couples rows
/// `i` and `i + 1`. On return `diag` holds the eigenvalues and `first` the
/// first components of the matching eigenvectors (it must enter as `e_0`).
fn tridiagonal_ql(diag: &mut [f64], off: &mut [f64], first: &mut [f64]) -> Result<()> {
    let n = diag.len();
    for l in 0..n {
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > QL_MAX_ITERATIONS {
                return Err(Error::Contract("tridiagonal eigensolver did not converge".into()));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                let f = first[i + 1];
                first[i + 1] = s * first[i] + c * f;
                first[i] = c * first[i] - s * f;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

fn symmetrize(nodes: &mut [f64], weights: &mut [f64]) {
    let m = nodes.len();
    for i in 0..m / 2 {
        let j = m - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
}

/// Printed closed form for the `Q_k` projection of `t^n`, evaluated in log space.
/// Zero unless `n >= k` and `n - k` is even.
pub fn monomial_eigenvalue_closed(zeta: usize, n: usize, k: usize) -> f64 {
    if k > n || (n - k) % 2 == 1 {
        return 0.0;
    }
    let z = zeta as f64;
    let diff = (n - k) as f64;
    let log = ln_gamma(n as f64 + 1.0) - ln_gamma(diff + 1.0) - (k as f64 + 1.0) * 2f64.ln()
        + ln_gamma((z - 1.0) / 2.0)
        + ln_gamma((diff + 1.0) / 2.0)
        - ln_gamma((diff + z) / 2.0);
    log.exp()
}

/// `int_{-1}^{1} t^n Q_k(t) (1 - t^2)^alpha dt` from the Rodrigues formula:
/// `n! / ((n-k)! 2^k) * G((zeta-1)/2) G((n-k+1)/2) / G((n+k+zeta)/2)`.
pub fn projection_integral(zeta: usize, n: usize, k: usize) -> Result<f64> {
    check_zeta(zeta)?;
    if k > n || (n - k) % 2 == 1 {
        return Ok(0.0);
    }
    let z = zeta as f64;
    let diff = (n - k) as f64;
    let log = ln_gamma(n as f64 + 1.0) - ln_gamma(diff + 1.0) - k as f64 * 2f64.ln()
        + ln_gamma((z - 1.0) / 2.0)
        + ln_gamma((diff + 1.0) / 2.0)
        - ln_gamma((n + k) as f64 / 2.0 + z / 2.0);
    Ok(log.exp())
}

/// Same integral by Gauss quadrature with enough nodes to be exact in exact
/// arithmetic. Loses relative accuracy to cancellation when `k` is close to `n`.
pub fn projection_integral_quadrature(zeta: usize, n: usize, k: usize) -> Result<f64> {
    if k > n || (n - k) % 2 == 1 {
        return Ok(0.0);
    }
    let rule = gauss_jacobi((n + k) / 2 + 1, zeta)?;
    Ok(rule.integrate(|t| t.powi(n as i32) * gegenbauer_eval(zeta, k, t)))
}

/// Ratio of the exact projection to the printed closed form. Equals
/// `2 G((n-k+zeta)/2) / G((n+k+zeta)/2)` whenever both are nonzero.
pub fn closed_form_calibration(zeta: usize, n: usize, k: usize) -> Result<f64> {
    let closed = monomial_eigenvalue_closed(zeta, n, k);
    if closed == 0.0 {
        return Ok(0.0);
    }
    Ok(projection_integral_quadrature(zeta, n, k)? / closed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    #[test]
    fn low_degree_values() {
        for zeta in 2..7 {
            assert_eq!(gegenbauer_eval(zeta, 0, 0.3), 1.0);
            assert_eq!(gegenbauer_eval(zeta, 1, 0.3), 0.3);
            for k in 0..12 {
                assert_abs_diff_eq!(gegenbauer_eval(zeta, k, 1.0), 1.0, epsilon = 1e-13);
            }
        }
        let t: f64 = 0.37;
        assert_abs_diff_eq!(gegenbauer_eval(3, 2, t), (3.0 * t * t - 1.0) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(gegenbauer_eval(2, 7, t), (7.0 * t.acos()).cos(), epsilon = 1e-13);
        let x = t.acos();
        assert_abs_diff_eq!(
            gegenbauer_eval(4, 5, t),
            (6.0 * x).sin() / x.sin() / 6.0,
            epsilon = 1e-13
        );
    }

    #[test]
    fn two_point_legendre_rule() {
        let rule = gauss_jacobi(2, 3).unwrap();
        let r = 1.0 / 3f64.sqrt();
        assert_abs_diff_eq!(rule.nodes[0], -r, epsilon = 1e-15);
        assert_abs_diff_eq!(rule.nodes[1], r, epsilon = 1e-15);
        assert_abs_diff_eq!(rule.weights[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rule.weights[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn three_point_chebyshev_rule() {
        let rule = gauss_jacobi(3, 2).unwrap();
        let c = (PI / 6.0).cos();
        for (x, e) in rule.nodes.iter().zip([-c, 0.0, c]) {
            assert_abs_diff_eq!(*x, e, epsilon = 1e-15);
        }
        for w in &rule.weights {
            assert_abs_diff_eq!(*w, PI / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_nodes_rejected() {
        assert!(matches!(gauss_jacobi(0, 3), Err(Error::Argument(_))));
        assert!(gauss_jacobi(4, 1).is_err());
    }

    #[test]
    fn rule_structure() {
        for zeta in [2, 3, 4, 5] {
            for m in [1, 2, 5, 16, 64, 200] {
                let rule = gauss_jacobi(m, zeta).unwrap();
                let mass = weight_mass(rule.alpha);
                assert_relative_eq!(rule.weights.iter().sum::<f64>(), mass, max_relative = 1e-10);
                assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
                assert!(rule.weights.iter().all(|&w| w > 0.0));
                for i in 0..m {
                    assert_abs_diff_eq!(rule.nodes[i], -rule.nodes[m - 1 - i], epsilon = 1e-12);
                }
            }
        }
    }

    fn even_moment(alpha: f64, j: usize) -> f64 {
        // int t^{2j} (1 - t^2)^alpha dt = B(j + 1/2, alpha + 1)
        let a = j as f64 + 0.5;
        let b = alpha + 1.0;
        (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
    }

    #[test]
    fn even_moments_exact() {
        for zeta in [2, 3, 4] {
            for m in [4, 17, 64] {
                let rule = gauss_jacobi(m, zeta).unwrap();
                for j in 0..m {
                    let got = rule.integrate(|t| t.powi(2 * j as i32));
                    assert_relative_eq!(got, even_moment(rule.alpha, j), max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn orthogonality() {
        for zeta in [2, 3, 4] {
            let (outer, inner) = sphere_constants(zeta).unwrap();
            let rule = gauss_jacobi(40, zeta).unwrap();
            for j in 0..20 {
                for k in 0..20 {
                    let got = rule.integrate(|t| gegenbauer_eval(zeta, j, t) * gegenbauer_eval(zeta, k, t));
                    if j == k {
                        let expected = outer / inner / harmonic_count(zeta, k) as f64;
                        assert_relative_eq!(got, expected, max_relative = 1e-8);
                    } else {
                        assert_abs_diff_eq!(got, 0.0, epsilon = 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn sphere_areas() {
        let (a, b) = sphere_constants(2).unwrap();
        assert_abs_diff_eq!(a, 2.0 * PI, epsilon = 1e-13);
        assert_abs_diff_eq!(b, 2.0, epsilon = 1e-13);
        let (a, b) = sphere_constants(3).unwrap();
        assert_abs_diff_eq!(a, 4.0 * PI, epsilon = 1e-13);
        assert_abs_diff_eq!(b, 2.0 * PI, epsilon = 1e-13);
        let (a, b) = sphere_constants(4).unwrap();
        assert_abs_diff_eq!(a, 2.0 * PI * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 4.0 * PI, epsilon = 1e-12);
        for zeta in 2..8 {
            let (a, b) = sphere_constants(zeta).unwrap();
            assert_relative_eq!(projection_constant(zeta), b / a, max_relative = 1e-13);
        }
    }

    #[test]
    fn harmonic_counts() {
        for k in 1..20 {
            assert_eq!(harmonic_count(2, k), 2);
            assert_eq!(harmonic_count(3, k), 2 * k as u128 + 1);
            assert_eq!(harmonic_count(4, k), ((k + 1) * (k + 1)) as u128);
        }
        for zeta in 2..9 {
            assert_eq!(harmonic_count(zeta, 0), 1);
        }
        // dim of degree-k harmonics = dim P_k - dim P_{k-2} on R^zeta
        let poly_dim = |zeta: usize, k: usize| -> u128 {
            let mut c: u128 = 1;
            for i in 0..(zeta as u128 - 1) {
                c = c * (k as u128 + zeta as u128 - 1 - i) / (i + 1);
            }
            c
        };
        for zeta in 3..8 {
            for k in 2..15 {
                assert_eq!(harmonic_count(zeta, k), poly_dim(zeta, k) - poly_dim(zeta, k - 2));
            }
        }
    }

    #[test]
    fn closed_form_monomial_values() {
        assert_abs_diff_eq!(monomial_eigenvalue_closed(3, 1, 1), 0.5, epsilon = 1e-14);
        for zeta in 2..6 {
            assert_eq!(monomial_eigenvalue_closed(zeta, 2, 1), 0.0);
            assert_eq!(monomial_eigenvalue_closed(zeta, 1, 3), 0.0);
        }
    }

    // (zeta, n, k, int t^n Q_k(t) (1 - t^2)^alpha dt) from adaptive
    // 30-digit integration.
    const PROJECTION_TABLE: &[(usize, usize, usize, f64)] = &[
        (2, 0, 0, 3.1415926535897932385),
        (2, 2, 0, 1.5707963267948966192),
        (2, 1, 1, 1.5707963267948966192),
        (2, 3, 1, 1.1780972450961724644),
        (2, 10, 4, 0.36815538909255389513),
        (2, 12, 12, 0.00076699039394282061486),
        (2, 20, 10, 0.046450855733162073487),
        (2, 29, 5, 0.30367800620789346577),
        (2, 30, 2, 0.42548292078578480094),
        (2, 30, 30, 2.9258361585343193621e-9),
        (3, 0, 0, 2.0),
        (3, 2, 0, 0.66666666666666666667),
        (3, 1, 1, 0.66666666666666666667),
        (3, 3, 1, 0.4),
        (3, 10, 4, 0.074592074592074592075),
        (3, 12, 12, 0.00012117644100414325209),
        (3, 20, 10, 0.0066031500378842836646),
        (3, 29, 5, 0.040664711632453567937),
        (3, 30, 2, 0.058651026392961876833),
        (3, 30, 30, 2.9767703484331323983e-10),
        (4, 0, 0, 1.5707963267948966192),
        (4, 2, 0, 0.39269908169872415481),
        (4, 1, 1, 0.39269908169872415481),
        (4, 3, 1, 0.1963495408493620774),
        (4, 10, 4, 0.023009711818284618446),
        (4, 12, 12, 0.000029499630536262331341),
        (4, 20, 10, 0.0014515892416613147965),
        (4, 29, 5, 0.0084355001724414851603),
        (4, 30, 2, 0.012514203552523082381),
        (4, 30, 30, 4.7190905782811602615e-11),
    ];

    #[test]
    fn projection_integrals_match_reference() {
        for &(zeta, n, k, expected) in PROJECTION_TABLE {
            let got = projection_integral(zeta, n, k).unwrap();
            assert_relative_eq!(got, expected, max_relative = 1e-10);
            let quad = projection_integral_quadrature(zeta, n, k).unwrap();
            assert_abs_diff_eq!(quad, expected, epsilon = 1e-10);
        }
        assert_eq!(projection_integral(3, 4, 1).unwrap(), 0.0);
        assert_eq!(projection_integral_quadrature(3, 4, 1).unwrap(), 0.0);
    }

    #[test]
    fn calibration_ratio_has_gamma_form() {
        for zeta in [2, 3, 4] {
            for (n, k) in [(1, 1), (3, 1), (6, 2), (9, 3), (12, 0)] {
                let z = zeta as f64;
                let expected =
                    2.0 * (ln_gamma((n - k) as f64 / 2.0 + z / 2.0) - ln_gamma((n + k) as f64 / 2.0 + z / 2.0)).exp();
                assert_relative_eq!(
                    closed_form_calibration(zeta, n, k).unwrap(),
                    expected,
                    max_relative = 1e-10
                );
            }
        }
        assert_abs_diff_eq!(closed_form_calibration(3, 1, 1).unwrap(), 4.0 / 3.0, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn recurrence_stays_bounded(zeta in 2usize..7, k in 0usize..60, t in -1.0f64..1.0) {
            prop_assert!(gegenbauer_eval(zeta, k, t).abs() <= 1.0 + 1e-12);
        }
    }
}
