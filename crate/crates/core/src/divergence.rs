//! Finite-difference certification of the flux divergence identities.
//!
//! At every point of a smooth graph,
//!
//! ```text
//! d_i (P2^ijkl d_l g_jk) = L2/2 + L2perp/2
//! d_i (P1^ijkl d_l g_jk) = R/2  + Rperp/2
//! ```
//!
//! and the alpha-combination of the two for the Einstein-Gauss-Bonnet flux.
//! The left side is approximated by central differences of the flux vectors
//! through the full geometry pipeline; the right side is evaluated in closed
//! form at the center point. Residuals must shrink like h^2.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::expr::MapSpec;
use crate::geometry::PointData;

/// Which flux identity to test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Which {
    P1,
    P2,
    /// F1 + alpha F2 against (R + alpha L2 + Rperp + alpha L2perp)/2.
    Egb(f64),
}

impl std::fmt::Display for Which {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Which::P1 => write!(f, "P1"),
            Which::P2 => write!(f, "P2"),
            Which::Egb(a) => write!(f, "EGB(alpha={a})"),
        }
    }
}

/// Right-hand-side selection. `OmitNormal` drops the normal-bundle terms and
/// serves as the negative control: for maps with non-flat normal bundle the
/// residual must then plateau instead of converging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsMode {
    Full,
    OmitNormal,
}

/// FD residual record for one point.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityResidual {
    pub point: Vec<f64>,
    /// Finest step used.
    pub h: f64,
    /// FD divergence at the finest step.
    pub lhs: f64,
    /// Closed-form right side at the point.
    pub rhs: f64,
    /// |lhs - rhs| at the finest step.
    pub residual: f64,
    /// Per-step records (h, lhs, residual), coarsest first.
    pub per_step: Vec<(f64, f64, f64)>,
    /// Mean of log2(res(h)/res(h/2)) over consecutive step pairs; requires
    /// at least 3 supplied steps and residuals above the rounding floor.
    pub order_estimate: Option<f64>,
}

fn flux_component(map: &MapSpec, which: Which, x: &[f64], i: usize) -> Result<f64> {
    let pd = PointData::compute(map, x)?;
    Ok(match which {
        Which::P1 => pd.cd.flux1[i],
        Which::P2 => pd.cd.flux2[i],
        Which::Egb(alpha) => pd.cd.flux1[i] + alpha * pd.cd.flux2[i],
    })
}

/// Central-difference divergence sum_i (F^i(x + h e_i) - F^i(x - h e_i)) / 2h.
pub fn divergence_fd(map: &MapSpec, which: Which, x: &[f64], h: f64) -> Result<f64> {
    assert!(h > 0.0, "FD step must be positive");
    let n = map.n;
    let mut acc = 0.0;
    for i in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let fp = flux_component(map, which, &xp, i)?;
        let fm = flux_component(map, which, &xm, i)?;
        acc += (fp - fm) / (2.0 * h);
    }
    Ok(acc)
}

/// Closed-form right side of the identity at `x`.
pub fn identity_rhs(map: &MapSpec, which: Which, x: &[f64], mode: RhsMode) -> Result<f64> {
    let pd = PointData::compute(map, x)?;
    let (tangential, normal) = match which {
        Which::P1 => (pd.cd.scalar, pd.cd.rperp_scalar),
        Which::P2 => (pd.cd.l2, pd.cd.l2perp),
        Which::Egb(alpha) => (
            pd.cd.scalar + alpha * pd.cd.l2,
            pd.cd.rperp_scalar + alpha * pd.cd.l2perp,
        ),
    };
    Ok(match mode {
        RhsMode::Full => 0.5 * (tangential + normal),
        RhsMode::OmitNormal => 0.5 * tangential,
    })
}

/// Residuals of the divergence identity at `x` across the supplied steps.
pub fn identity_residual(
    map: &MapSpec,
    which: Which,
    x: &[f64],
    steps: &[f64],
) -> Result<IdentityResidual> {
    identity_residual_with_rhs(map, which, x, steps, RhsMode::Full)
}

pub fn identity_residual_with_rhs(
    map: &MapSpec,
    which: Which,
    x: &[f64],
    steps: &[f64],
    mode: RhsMode,
) -> Result<IdentityResidual> {
    assert!(!steps.is_empty(), "need at least one FD step");
    let rhs = identity_rhs(map, which, x, mode)?;
    let mut sorted: Vec<f64> = steps.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut per_step = Vec::with_capacity(sorted.len());
    for &h in &sorted {
        let lhs = divergence_fd(map, which, x, h)?;
        per_step.push((h, lhs, (lhs - rhs).abs()));
    }

    let order_estimate = if sorted.len() >= 3 {
        let mut ratios = Vec::new();
        for w in per_step.windows(2) {
            let (h0, _, r0) = w[0];
            let (h1, _, r1) = w[1];
            if r0 > 1e-12 && r1 > 1e-13 {
                ratios.push((r0 / r1).ln() / (h0 / h1).ln());
            }
        }
        if ratios.is_empty() {
            None
        } else {
            Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
        }
    } else {
        None
    };

    let &(h, lhs, residual) = per_step.last().unwrap();
    Ok(IdentityResidual {
        point: x.to_vec(),
        h,
        lhs,
        rhs,
        residual,
        per_step,
        order_estimate,
    })
}

/// Batch residuals. Per-point failures are collected, never abort the sweep;
/// output order follows input order.
pub fn sweep(
    map: &MapSpec,
    which: Which,
    points: &[Vec<f64>],
    steps: &[f64],
) -> Vec<Result<IdentityResidual>> {
    points
        .par_iter()
        .map(|x| identity_residual(map, which, x, steps))
        .collect()
}

/// Negative-control plateau test: the residual with the normal terms
/// omitted counts as bounded away from zero when its minimum over the
/// steps exceeds 10x the finest-step residual of the full identity.
pub fn is_plateaued(control: &IdentityResidual, full: &IdentityResidual) -> bool {
    let min_control = control
        .per_step
        .iter()
        .map(|&(_, _, r)| r)
        .fold(f64::INFINITY, f64::min);
    min_control > 10.0 * full.residual
}

/// Default FD steps, scaled by |x| away from the unit shell.
pub fn default_steps(x: &[f64]) -> Vec<f64> {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    [1e-2, 5e-3, 2.5e-3].iter().map(|h| h * r).collect()
}

/// Deterministic quasi-random points in the annulus r0 <= |x| <= r1,
/// uniform in radius, direction from a seeded Gaussian sample.
pub fn sample_annulus(n: usize, count: usize, r0: f64, r1: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        // Box-Muller pairs keep the stream platform-stable.
        let mut dir = Vec::with_capacity(n);
        while dir.len() < n {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let mag = (-2.0 * u1.ln()).sqrt();
            dir.push(mag * u2.cos());
            if dir.len() < n {
                dir.push(mag * u2.sin());
            }
        }
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        let radius = rng.gen_range(r0..=r1);
        out.push(dir.iter().map(|v| v / norm * radius).collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_map;

    #[test]
    fn flat_map_divergence_is_zero() {
        let map = parse_map("x1 + 2*x2; 0.5*x3", 5, 2).unwrap();
        let x = [0.4, -0.1, 0.9, 0.3, -0.7];
        let d = divergence_fd(&map, Which::P2, &x, 1e-2).unwrap();
        assert_eq!(d, 0.0);
        let r = identity_residual(&map, Which::P2, &x, &[1e-2, 5e-3, 2.5e-3]).unwrap();
        assert_eq!(r.residual, 0.0);
        assert!(r.order_estimate.is_none(), "all residuals at rounding floor");
    }

    #[test]
    fn codim1_radial_profile_satisfies_p2_identity() {
        // m = 1: d_i F2^i -> L2/2 (hypersurface identity).
        let map = parse_map("0.8*(1 + x1^2 + x2^2 + x3^2 + x4^2 + x5^2)^-0.25", 5, 1).unwrap();
        let x = [1.1, 0.4, -0.8, 0.5, 0.9];
        let r = identity_residual(&map, Which::P2, &x, &[4e-3, 2e-3, 1e-3]).unwrap();
        let scale = r.rhs.abs() + 1e-12;
        assert!(
            r.residual / scale < 1e-5,
            "residual {} vs scale {scale}",
            r.residual
        );
        let order = r.order_estimate.unwrap();
        assert!((1.7..2.3).contains(&order), "order {order}");
    }

    #[test]
    fn generic_codim2_p1_identity_converges() {
        let map = parse_map(
            "0.4*sin(x1)*cos(x2) + 0.3*x3*x4; 0.5*exp(-0.2*x5^2)*x1 + 0.25*x2^2",
            5,
            2,
        )
        .unwrap();
        let x = [1.0, -0.5, 0.8, 0.4, -1.1];
        let r = identity_residual(&map, Which::P1, &x, &[4e-3, 2e-3, 1e-3]).unwrap();
        let scale = r.rhs.abs() + 1e-12;
        assert!(r.residual / scale < 1e-5, "res {}", r.residual / scale);
        let order = r.order_estimate.unwrap();
        assert!((1.7..2.3).contains(&order), "order {order}");
    }

    #[test]
    fn negative_control_plateaus_on_generic_map() {
        let map = parse_map(
            "0.4*sin(x1)*cos(x2) + 0.3*x3*x4; 0.5*exp(-0.2*x5^2)*x1 + 0.25*x2^2",
            5,
            2,
        )
        .unwrap();
        let x = [1.0, -0.5, 0.8, 0.4, -1.1];
        let steps = [4e-3, 2e-3, 1e-3];
        let full = identity_residual(&map, Which::P2, &x, &steps).unwrap();
        let control =
            identity_residual_with_rhs(&map, Which::P2, &x, &steps, RhsMode::OmitNormal).unwrap();
        assert!(is_plateaued(&control, &full));
        // The plateau sits at |L2perp| / 2.
        let pd = PointData::compute(&map, &x).unwrap();
        let expected = 0.5 * pd.cd.l2perp.abs();
        let min_control = control
            .per_step
            .iter()
            .map(|&(_, _, r)| r)
            .fold(f64::INFINITY, f64::min);
        assert!((min_control - expected).abs() / expected < 1e-2);
    }

    #[test]
    fn egb_combination_is_linear_in_alpha() {
        let map = parse_map(
            "0.4*sin(x1)*cos(x2) + 0.3*x3*x4; 0.5*exp(-0.2*x5^2)*x1 + 0.25*x2^2",
            5,
            2,
        )
        .unwrap();
        let x = [0.9, 0.3, -0.6, 1.2, 0.5];
        let alpha = 0.7;
        let h = 2e-3;
        let d1 = divergence_fd(&map, Which::P1, &x, h).unwrap();
        let d2 = divergence_fd(&map, Which::P2, &x, h).unwrap();
        let degb = divergence_fd(&map, Which::Egb(alpha), &x, h).unwrap();
        assert!((degb - (d1 + alpha * d2)).abs() < 1e-10 * (1.0 + degb.abs()));

        let r = identity_residual(&map, Which::Egb(alpha), &x, &[4e-3, 2e-3, 1e-3]).unwrap();
        let order = r.order_estimate.unwrap();
        assert!((1.7..2.3).contains(&order), "EGB order {order}");
    }

    #[test]
    fn sweep_is_error_isolating_and_ordered() {
        // log(x1) fails at points with x1 <= 0 but the sweep keeps going.
        let map = parse_map("log(x1); x2^2", 3, 2).unwrap();
        let points = vec![
            vec![1.0, 0.5, 0.2],
            vec![-1.0, 0.5, 0.2],
            vec![2.0, -0.4, 0.1],
        ];
        let out = sweep(&map, Which::P1, &points, &[1e-3]);
        assert_eq!(out.len(), 3);
        assert!(out[0].is_ok());
        assert!(out[1].is_err());
        assert!(out[2].is_ok());
    }

    #[test]
    fn empty_sweep_is_empty() {
        let map = parse_map("x1", 2, 1).unwrap();
        assert!(sweep(&map, Which::P2, &[], &[1e-3]).is_empty());
    }

    #[test]
    fn annulus_sampler_is_deterministic_and_in_range() {
        let a = sample_annulus(5, 50, 1.0, 4.0, 42);
        let b = sample_annulus(5, 50, 1.0, 4.0, 42);
        assert_eq!(a, b);
        for x in &a {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((1.0..=4.0 + 1e-12).contains(&r));
        }
        let c = sample_annulus(5, 50, 1.0, 4.0, 43);
        assert_ne!(a, c);
    }
}
