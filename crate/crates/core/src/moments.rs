//! Gaussian moment constants.
//!
//! Every asymptotic variance in the test is a ratio of realized measures
//! scaled by a constant built from moments of standard normal variables:
//!
//! - `m_r = E|U|^r`
//! - `m_{k,p} = E(|U|^p |U + sqrt(k-1) V|^p)` for independent `U, V`
//! - `M(p, k)`, the variance scale of the switch statistic on continuous paths.
//!
//! Even integer powers are computed from exact moment expansions. Other
//! powers of the cross moment fall back to tensorized Gauss–Hermite
//! quadrature.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Default number of Gauss–Hermite nodes per axis for the cross moment.
pub const DEFAULT_QUADRATURE_NODES: usize = 64;

/// Largest even power evaluated through the exact expansion. Beyond this the
/// double factorials stop being exactly representable.
const MAX_EXACT_EVEN_POWER: u32 = 24;

/// `(n)!!` for odd or even `n`, with `(-1)!! = 0!! = 1`.
pub fn double_factorial(n: i64) -> f64 {
    let mut acc = 1.0;
    let mut m = n;
    while m > 1 {
        acc *= m as f64;
        m -= 2;
    }
    acc
}

fn even_integer(r: f64) -> Option<u32> {
    if r > 0.0
        && r.fract() == 0.0
        && r <= MAX_EXACT_EVEN_POWER as f64
        && (r as u32).is_multiple_of(2)
    {
        Some(r as u32)
    } else {
        None
    }
}

/// `m_r = E|U|^r = pi^{-1/2} 2^{r/2} Gamma((r+1)/2)` for `U ~ N(0,1)`.
///
/// Even integer `r` returns `(r-1)!!` exactly.
pub fn gaussian_abs_moment(r: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain(format!(
            "absolute moment order must be > 0, got {r}"
        )));
    }
    if let Some(even) = even_integer(r) {
        return Ok(double_factorial(even as i64 - 1));
    }
    let log_m = 0.5 * r * 2f64.ln() + ln_gamma((r + 1.0) / 2.0) - 0.5 * PI.ln();
    Ok(log_m.exp())
}

/// Nodes and weights of an `n`-point Gauss–Hermite rule for the weight
/// `exp(-x^2)`, obtained from the Golub–Welsch eigenproblem.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("Gauss-Hermite rule needs at least one node"));
        }
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            let off = ((i as f64 + 1.0) / 2.0).sqrt();
            jacobi[(i, i + 1)] = off;
            jacobi[(i + 1, i)] = off;
        }
        let eigen = jacobi.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = eigen
            .eigenvalues
            .iter()
            .zip(eigen.eigenvectors.row(0).iter())
            .map(|(&x, &v)| (x, v * v * PI.sqrt()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E f(U, V)` for independent standard normals, via the tensor rule.
    pub fn expect_2d<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        let scale = 2f64.sqrt();
        let mut total = 0.0;
        for (&xi, &wi) in self.nodes.iter().zip(&self.weights) {
            let mut row = 0.0;
            for (&xj, &wj) in self.nodes.iter().zip(&self.weights) {
                row += wj * f(scale * xi, scale * xj);
            }
            total += wi * row;
        }
        total / PI
    }
}

fn default_rule() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(DEFAULT_QUADRATURE_NODES).expect("nonzero node count"))
}

fn check_cross_args(k: u32, p: f64) -> Result<()> {
    if k < 2 {
        return Err(Error::domain(format!("cross moment needs k >= 2, got {k}")));
    }
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::domain(format!("cross moment needs p > 0, got {p}")));
    }
    Ok(())
}

/// Exact `E(U^p (U + c V)^p)` for even integer `p`, by binomial expansion of
/// the second factor. Only even powers of `V` survive.
fn cross_moment_even(k: u32, p: u32) -> f64 {
    let c2 = (k - 1) as f64;
    let mut binom = 1.0;
    let mut total = 0.0;
    for j in 0..=p {
        if j > 0 {
            binom = binom * (p - j + 1) as f64 / j as f64;
        }
        if j % 2 == 0 {
            let u_order = (2 * p - j) as i64;
            total += binom
                * c2.powi(j as i32 / 2)
                * double_factorial(u_order - 1)
                * double_factorial(j as i64 - 1);
        }
    }
    total
}

/// `m_{k,p}` with an explicit quadrature rule, bypassing the exact path.
pub fn gaussian_cross_moment_quadrature(k: u32, p: f64, rule: &GaussHermite) -> Result<f64> {
    check_cross_args(k, p)?;
    let c = ((k - 1) as f64).sqrt();
    Ok(rule.expect_2d(|u, v| (u.abs() * (u + c * v).abs()).powf(p)))
}

/// `m_{k,p} = E(|U|^p |U + sqrt(k-1) V|^p)` for independent standard normals.
pub fn gaussian_cross_moment(k: u32, p: f64) -> Result<f64> {
    check_cross_args(k, p)?;
    match even_integer(p) {
        Some(even) => Ok(cross_moment_even(k, even)),
        None => gaussian_cross_moment_quadrature(k, p, default_rule()),
    }
}

/// `M(p, k)`: the conditional variance of the switch statistic on a
/// continuous path, per unit of `A(2p)/A(p)^2`.
pub fn variance_scale_m(p: f64, k: u32) -> Result<f64> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::domain(format!("M(p, k) needs p >= 2, got {p}")));
    }
    let m_p = gaussian_abs_moment(p)?;
    let m_2p = gaussian_abs_moment(2.0 * p)?;
    let m_kp = gaussian_cross_moment(k, p)?;
    let kf = k as f64;
    let kp2 = kf.powf(p - 2.0);
    let value = (kp2 * (1.0 + kf) * m_2p + kp2 * (kf - 1.0) * m_p * m_p
        - 2.0 * kf.powf(p / 2.0 - 1.0) * m_kp)
        / (m_p * m_p);
    Ok(value)
}

/// Closed form `M(4, k) = 16 k (2k^2 - k - 1) / 3`.
pub fn variance_scale_m_p4(k: u32) -> f64 {
    let kf = k as f64;
    16.0 * kf * (2.0 * kf * kf - kf - 1.0) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn even_abs_moments_are_double_factorials() {
        for r in (2..=12).step_by(2) {
            assert_eq!(
                gaussian_abs_moment(r as f64).unwrap(),
                double_factorial(r - 1)
            );
        }
        assert_eq!(gaussian_abs_moment(2.0).unwrap(), 1.0);
        assert_eq!(gaussian_abs_moment(4.0).unwrap(), 3.0);
    }

    #[test]
    fn first_abs_moment() {
        assert_relative_eq!(
            gaussian_abs_moment(1.0).unwrap(),
            0.797884560803,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            gaussian_abs_moment(1.0).unwrap(),
            (2.0 / PI).sqrt(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn gamma_route_agrees_with_exact_route_near_even() {
        let near = gaussian_abs_moment(4.0 + 1e-9).unwrap();
        assert_relative_eq!(near, 3.0, max_relative = 1e-7);
    }

    #[test]
    fn abs_moment_rejects_nonpositive() {
        assert!(matches!(gaussian_abs_moment(0.0), Err(Error::Domain(_))));
        assert!(matches!(gaussian_abs_moment(-1.0), Err(Error::Domain(_))));
        assert!(gaussian_abs_moment(f64::NAN).is_err());
    }

    #[test]
    fn cross_moment_even_values() {
        assert_eq!(gaussian_cross_moment(2, 2.0).unwrap(), 4.0);
        assert_eq!(gaussian_cross_moment(2, 4.0).unwrap(), 204.0);
        assert_eq!(gaussian_cross_moment(3, 4.0).unwrap(), 321.0);
    }

    #[test]
    fn cross_moment_domain() {
        assert!(gaussian_cross_moment(1, 4.0).is_err());
        assert!(gaussian_cross_moment(2, 0.0).is_err());
    }

    #[test]
    fn quadrature_matches_exact_expansion_for_even_powers() {
        let rule = default_rule();
        for k in 2..=4 {
            for p in [2.0, 4.0, 6.0] {
                let exact = gaussian_cross_moment(k, p).unwrap();
                let quad = gaussian_cross_moment_quadrature(k, p, rule).unwrap();
                assert_relative_eq!(quad, exact, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn gauss_hermite_three_point_rule() {
        let rule = GaussHermite::new(3).unwrap();
        assert_relative_eq!(rule.nodes()[2], 1.224_744_871_391_589, epsilon = 1e-14);
        assert_relative_eq!(rule.weights()[1], 1.181_635_900_603_677_4, epsilon = 1e-14);
    }

    #[test]
    fn m_closed_forms() {
        assert_relative_eq!(
            variance_scale_m(4.0, 2).unwrap(),
            160.0 / 3.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            variance_scale_m(4.0, 3).unwrap(),
            224.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            variance_scale_m(4.0, 4).unwrap(),
            576.0,
            max_relative = 1e-12
        );
        for k in 2..=10 {
            assert_relative_eq!(
                variance_scale_m(4.0, k).unwrap(),
                variance_scale_m_p4(k),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn m_at_p2_is_two_k_minus_two() {
        for k in 2..=6 {
            assert_relative_eq!(
                variance_scale_m(2.0, k).unwrap(),
                2.0 * k as f64 - 2.0,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn m_positive_and_cauchy_schwarz_on_grid() {
        for k in 2..=4 {
            for p in [2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0] {
                let mp = gaussian_abs_moment(p).unwrap();
                assert!(gaussian_cross_moment(k, p).unwrap() >= mp * mp);
                assert!(variance_scale_m(p, k).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn m_rejects_small_p() {
        assert!(variance_scale_m(1.5, 2).is_err());
        assert!(variance_scale_m(4.0, 1).is_err());
    }
}
