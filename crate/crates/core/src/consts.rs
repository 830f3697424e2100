//! Dimensional constants shared by the mass and horizon computations.

use std::f64::consts::PI;

/// Gamma(k/2) for positive integer k, by the recursion from Gamma(1/2) = sqrt(pi).
pub fn gamma_half(k: u32) -> f64 {
    assert!(k >= 1, "gamma_half needs k >= 1");
    let mut acc = if k % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut arg = if k % 2 == 0 { 2 } else { 1 };
    while arg < k {
        acc *= arg as f64 / 2.0;
        arg += 2;
    }
    acc
}

/// Area of the standard unit sphere S^{n-1} in R^n: 2 pi^{n/2} / Gamma(n/2).
pub fn unit_sphere_area(n: usize) -> f64 {
    let half = n as f64 / 2.0;
    2.0 * PI.powf(half) / gamma_half(n as u32)
}

/// Normalizing constant of the second Gauss-Bonnet-Chern mass:
/// c2(n) = 1 / (2 (n-1)(n-2)(n-3) omega_{n-1}).
pub fn c2(n: usize) -> f64 {
    let nf = n as f64;
    1.0 / (2.0 * (nf - 1.0) * (nf - 2.0) * (nf - 3.0) * unit_sphere_area(n))
}

/// ADM surface constant 1 / (2 (n-1) omega_{n-1}).
pub fn adm_constant(n: usize) -> f64 {
    1.0 / (2.0 * (n as f64 - 1.0) * unit_sphere_area(n))
}

/// Flux constant 1 / ((n-1) omega_{n-1}) shared by the P1 form of the ADM
/// mass and the Einstein-Gauss-Bonnet mass.
pub fn p1_constant(n: usize) -> f64 {
    1.0 / ((n as f64 - 1.0) * unit_sphere_area(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_half_small_values() {
        assert_relative_eq!(gamma_half(1), PI.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(gamma_half(2), 1.0, epsilon = 1e-15);
        assert_relative_eq!(gamma_half(3), PI.sqrt() / 2.0, epsilon = 1e-15);
        assert_relative_eq!(gamma_half(4), 1.0, epsilon = 1e-15);
        assert_relative_eq!(gamma_half(5), 0.75 * PI.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(gamma_half(8), 6.0, epsilon = 1e-15);
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(unit_sphere_area(2), 2.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(unit_sphere_area(3), 4.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(unit_sphere_area(4), 2.0 * PI * PI, epsilon = 1e-14);
        // omega_4 = 8 pi^2 / 3
        assert_relative_eq!(unit_sphere_area(5), 8.0 * PI * PI / 3.0, epsilon = 1e-14);
        assert_relative_eq!(unit_sphere_area(6), PI.powi(3), epsilon = 1e-14);
    }

    #[test]
    fn c2_at_n5_matches_closed_form() {
        // c2(5) = 1/(2*4*3*2*omega_4) = 1/(128 pi^2)
        assert_relative_eq!(c2(5), 1.0 / (128.0 * PI * PI), epsilon = 1e-14);
    }
}
