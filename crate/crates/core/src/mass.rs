//! Mass computations: extrapolated surface fluxes, bulk integrals over the
//! flat volume element, and the balance between them.
//!
//! The flux divergence identities turn each mass into a bulk integral:
//!
//! ```text
//! m2   = c2(n)           lim int_{S_r} P2 . dg . nu dS = c2(n)/2      int (L2 + L2perp) dmu
//! m1   = 1/((n-1) w)     lim int_{S_r} P1 . dg . nu dS = 1/(2(n-1) w) int (R + Rperp)   dmu
//! mEGB = 1/((n-1) w)     lim int_{S_r} (P1 + a P2)...  = 1/(2(n-1) w) int (R + a L2 + Rperp + a L2perp)
//! ```
//!
//! For exterior domains a boundary integral over Sigma joins the balance;
//! its form (horizon or finite-slope) is configurable, see
//! [`crate::horizon::BoundaryMode`].
//!
//! Bulk values are reported as (truncated integral, estimated tail); the
//! tail is never silently folded into the integral. Balance residuals are
//! computed against integral + tail and say so.

use serde::Serialize;

use crate::consts::{adm_constant, c2};
use crate::divergence::sample_annulus;
use crate::error::{Error, Result};
use crate::expr::MapSpec;
use crate::geometry::PointData;
use crate::horizon::{boundary_term, BoundaryMode, HypersurfaceSpec};
use crate::quad::{
    bulk_shell_integral, check_dimension, extrapolate, gauss_legendre, geometric_partition,
    integrate_sphere_indexed, sphere_rule, surface_flux, BulkDensity, FluxKind, QuadratureRule,
    RadialSchedule,
};
use crate::sums::pairwise_sum;

/// Default Gauss-Legendre points per radial subinterval.
pub const DEFAULT_RADIAL_POINTS: usize = 16;

/// Truncated bulk integral with its tail estimate.
#[derive(Debug, Clone, Serialize)]
pub struct BulkResult {
    /// Scaled integral over r0 <= |x| <= rmax.
    pub value: f64,
    /// Estimated (scaled) contribution beyond rmax from geometric shell
    /// extrapolation; `None` when the shells do not decay geometrically.
    pub tail: Option<f64>,
    pub r0: f64,
    pub rmax: f64,
    pub radial_points: usize,
    /// Per-shell scaled values, (outer radius, value).
    pub shells: Vec<(f64, f64)>,
    /// Fitted power-law exponent of the shell decay (diagnostic).
    pub decay_exponent: Option<f64>,
}

impl BulkResult {
    /// Integral plus tail (tail treated as 0 when unavailable).
    pub fn total(&self) -> f64 {
        self.value + self.tail.unwrap_or(0.0)
    }
}

/// Positive-mass bookkeeping: the theorems' hypotheses are checked on a
/// point sample, never assumed.
#[derive(Debug, Clone, Serialize)]
pub struct PositivityCheck {
    /// Sampled max of ||Rperp|| / (1 + ||A||^2); the normal bundle counts
    /// as flat when this is <= 1e-10.
    pub fnb_max_ratio: f64,
    pub flat_normal_bundle: bool,
    /// Sampled minimum of the tangential density (L2, R, or R + alpha L2).
    pub min_density: f64,
    /// Some(limit >= -tolerance) when the hypotheses held on the sample.
    pub ok: Option<bool>,
}

/// Full mass report.
#[derive(Debug, Clone, Serialize)]
pub struct MassReport {
    pub which: String,
    pub n: usize,
    pub m: usize,
    pub per_radius: Vec<(f64, f64)>,
    /// Extrapolated mass.
    pub limit: f64,
    pub fit_rate: f64,
    pub fit_residual: f64,
    /// rms misfit plus a Richardson-style model-error term.
    pub uncertainty: f64,
    pub bulk: Option<BulkResult>,
    pub boundary_term: Option<f64>,
    /// |limit - (bulk + tail) - boundary|.
    pub balance_residual: Option<f64>,
    /// Set when flipping the boundary sign would improve the balance,
    /// which indicates an orientation-convention problem in the inputs.
    pub convention_warning: bool,
    pub positivity: Option<PositivityCheck>,
    pub quadrature_level: usize,
    pub quadrature_degree: usize,
}

fn density_for(which: FluxKind) -> BulkDensity {
    match which {
        FluxKind::P2 => BulkDensity::Gbc,
        FluxKind::Egb(alpha) => BulkDensity::Egb(alpha),
        FluxKind::AdmRaw | FluxKind::P1 => BulkDensity::Adm,
    }
}

fn bulk_prefactor(which: FluxKind, n: usize) -> f64 {
    match which {
        FluxKind::P2 => 0.5 * c2(n),
        _ => adm_constant(n),
    }
}

/// Sampled hypothesis check behind the positive-mass statements.
pub fn positivity_check(
    map: &MapSpec,
    which: FluxKind,
    limit: f64,
    uncertainty: f64,
    outer_radius: f64,
) -> Result<PositivityCheck> {
    let points = sample_annulus(map.n, 64, 0.3, outer_radius, 7);
    let mut fnb_max_ratio = 0.0f64;
    let mut min_density = f64::INFINITY;
    for x in &points {
        let pd = PointData::compute(map, x)?;
        let shape_sq: f64 = pd.cd.shape.iter().map(|a| a.norm_squared()).sum();
        let rperp_norm: f64 = pd.cd.rperp.iter().map(|r| r.norm()).fold(0.0, f64::max);
        fnb_max_ratio = fnb_max_ratio.max(rperp_norm / (1.0 + shape_sq));
        let density = match which {
            FluxKind::P2 => pd.cd.l2,
            FluxKind::Egb(alpha) => pd.cd.scalar + alpha * pd.cd.l2,
            _ => pd.cd.scalar,
        };
        min_density = min_density.min(density);
    }
    let flat_normal_bundle = map.m == 1 || fnb_max_ratio <= 1e-10;
    let ok = if flat_normal_bundle && min_density >= -1e-12 {
        Some(limit >= -(uncertainty + 1e-10))
    } else {
        None
    };
    Ok(PositivityCheck {
        fnb_max_ratio,
        flat_normal_bundle,
        min_density,
        ok,
    })
}

/// Flux at every schedule radius plus the extrapolated limit.
pub fn mass_surface(
    map: &MapSpec,
    which: FluxKind,
    schedule: &RadialSchedule,
    rule: &QuadratureRule,
) -> Result<MassReport> {
    check_dimension(which, map.n)?;
    let mut per_radius = Vec::with_capacity(schedule.radii.len());
    for &r in &schedule.radii {
        per_radius.push((r, surface_flux(map, which, r, rule)?));
    }
    let fit = extrapolate(&per_radius)?;
    let uncertainty = fit.uncertainty(&per_radius);
    let outer = *schedule.radii.last().unwrap();
    let positivity = positivity_check(map, which, fit.limit, uncertainty, outer)?;
    Ok(MassReport {
        which: which.to_string(),
        n: map.n,
        m: map.m,
        per_radius,
        limit: fit.limit,
        fit_rate: fit.rate,
        fit_residual: fit.residual_rms,
        uncertainty,
        bulk: None,
        boundary_term: None,
        balance_residual: None,
        convention_warning: false,
        positivity: Some(positivity),
        quadrature_level: rule.level,
        quadrature_degree: rule.degree,
    })
}

/// Geometric-shell tail estimate beyond `rmax`: two extra dyadic shells and
/// a geometric-series closure. `None` when the shells do not contract.
fn tail_estimate(
    map: &MapSpec,
    density: BulkDensity,
    rmax: f64,
    rule: &QuadratureRule,
    radial_points: usize,
) -> Result<Option<f64>> {
    let s1 = bulk_shell_integral(map, density, rmax, 2.0 * rmax, rule, radial_points)?;
    let s2 = bulk_shell_integral(map, density, 2.0 * rmax, 4.0 * rmax, rule, radial_points)?;
    if s1 == 0.0 {
        return Ok(Some(s2));
    }
    let ratio = s2 / s1;
    if ratio.abs() >= 0.9 {
        return Ok(None);
    }
    Ok(Some(s1 + s2 / (1.0 - ratio)))
}

fn shell_decay_exponent(shells: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = shells
        .iter()
        .rev()
        .take(5)
        .filter(|&&(_, v)| v.abs() > 1e-300)
        .map(|&(r, v)| (r.ln(), v.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let jn = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let det = jn * sxx - sx * sx;
    if det.abs() < 1e-12 {
        return None;
    }
    Some(-(jn * sxy - sx * sy) / det)
}

/// Scaled bulk integral over r0 <= |x| <= rmax plus the tail estimate.
pub fn mass_bulk(
    map: &MapSpec,
    which: FluxKind,
    r0: f64,
    rmax: f64,
    rule: &QuadratureRule,
    radial_points: usize,
) -> Result<BulkResult> {
    check_dimension(which, map.n)?;
    let density = density_for(which);
    let prefactor = bulk_prefactor(which, map.n);
    let boundaries = geometric_partition(r0, rmax);
    let mut shells = Vec::with_capacity(boundaries.len() - 1);
    let mut terms = Vec::with_capacity(boundaries.len() - 1);
    for seg in boundaries.windows(2) {
        let raw = bulk_shell_integral(map, density, seg[0], seg[1], rule, radial_points)?;
        shells.push((seg[1], prefactor * raw));
        terms.push(prefactor * raw);
    }
    let value = pairwise_sum(&terms);
    let tail = tail_estimate(map, density, rmax, rule, radial_points)?.map(|t| prefactor * t);
    let decay_exponent = shell_decay_exponent(&shells);
    Ok(BulkResult {
        value,
        tail,
        r0,
        rmax,
        radial_points,
        shells,
        decay_exponent,
    })
}

/// Exterior-domain description: the inner boundary Sigma and the boundary
/// integral that joins the balance.
#[derive(Debug, Clone)]
pub struct ExteriorSpec {
    pub sigma: HypersurfaceSpec,
    pub boundary: BoundaryMode,
}

/// Bulk integral over the exterior rho(u) <= |x| <= rmax; the radial lower
/// bound follows the star-shaped boundary node by node.
pub fn exterior_bulk(
    map: &MapSpec,
    which: FluxKind,
    sigma: &HypersurfaceSpec,
    rmax: f64,
    rule: &QuadratureRule,
    radial_points: usize,
) -> Result<f64> {
    check_dimension(which, map.n)?;
    let density = density_for(which);
    let prefactor = bulk_prefactor(which, map.n);
    let raw = integrate_sphere_indexed(rule, |i| {
        let u = rule.node(i);
        let rho = sigma.rho_value(u)?;
        if rho <= 0.0 || rho >= rmax {
            return Err(Error::InvalidArgument(format!(
                "boundary radius {rho} outside (0, {rmax})"
            )));
        }
        let mut acc = Vec::new();
        for seg in geometric_partition(rho, rmax).windows(2) {
            let (nodes, ws) = gauss_legendre(radial_points, seg[0], seg[1]);
            for (r, w) in nodes.iter().zip(&ws) {
                let x: Vec<f64> = u.iter().map(|ui| ui * r).collect();
                let dens = crate::quad::bulk_density(map, density, &x)?;
                acc.push(w * r.powi(map.n as i32 - 1) * dens);
            }
        }
        Ok(pairwise_sum(&acc))
    })?;
    Ok(prefactor * raw)
}

/// Full balance report: extrapolated surface mass vs bulk integral (+ tail)
/// and, for exterior domains, the boundary term.
pub fn mass_balance(
    map: &MapSpec,
    which: FluxKind,
    schedule: &RadialSchedule,
    rule: &QuadratureRule,
    radial_points: usize,
    exterior: Option<&ExteriorSpec>,
) -> Result<MassReport> {
    let mut report = mass_surface(map, which, schedule, rule)?;
    let rmax = *schedule.radii.last().unwrap();

    let (bulk, boundary) = match exterior {
        None => (mass_bulk(map, which, 0.0, rmax, rule, radial_points)?, None),
        Some(ext) => {
            let value = exterior_bulk(map, which, &ext.sigma, rmax, rule, radial_points)?;
            let tail = tail_estimate(map, density_for(which), rmax, rule, radial_points)?
                .map(|t| t * bulk_prefactor(which, map.n));
            let bt = boundary_term(&ext.sigma, rule, &ext.boundary)?;
            (
                BulkResult {
                    value,
                    tail,
                    r0: f64::NAN,
                    rmax,
                    radial_points,
                    shells: Vec::new(),
                    decay_exponent: None,
                },
                Some(bt),
            )
        }
    };

    let bt = boundary.unwrap_or(0.0);
    let residual = (report.limit - bulk.total() - bt).abs();
    let flipped = (report.limit - bulk.total() + bt).abs();
    report.convention_warning = boundary.is_some() && flipped < residual;
    report.balance_residual = Some(residual);
    report.boundary_term = boundary;
    report.bulk = Some(bulk);
    Ok(report)
}

// ── asymptotic-decay diagnostics ───────────────────────────────

/// Fitted decay exponents of the jet sup-norms.
#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub radii: Vec<f64>,
    /// sup(|d1|) + sup(|d2|) r + sup(|d3|) r^2 at each radius.
    pub combined: Vec<f64>,
    /// tau-hat such that the combined quantity is O(r^{-tau}); `None` when
    /// the map is exactly constant (infinite decay).
    pub tau_hat: Option<f64>,
    /// Exponents fitted per derivative order (|d1|, |d2| r, |d3| r^2).
    pub tau_per_order: [Option<f64>; 3],
    /// tau <= (n-4)/3: decay too slow for the P2 mass.
    pub flag_p2: bool,
    /// tau <= (n-2)/2: decay too slow for the EGB/ADM equivalence.
    pub flag_egb: bool,
}

fn log_slope(radii: &[f64], values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(values)
        .filter(|&(_, &v)| v > 1e-300)
        .map(|(&r, &v)| (r.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let jn = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let det = jn * sxx - sx * sx;
    if det.abs() < 1e-12 {
        return None;
    }
    Some((jn * sxy - sx * sy) / det)
}

/// Sample jet sup-norms over spheres and fit their decay. Advisory only.
pub fn asymptotic_flatness_diagnostic(map: &MapSpec, radii: &[f64]) -> Result<DecayReport> {
    if radii.len() < 2 || radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] <= 0.0 {
        return Err(Error::InvalidArgument(
            "need >= 2 increasing positive radii".into(),
        ));
    }
    let rule = sphere_rule(map.n, 1);
    let mut sup = [Vec::new(), Vec::new(), Vec::new()];
    let mut combined = Vec::new();
    for &r in radii {
        let mut s = [0.0f64; 3];
        for idx in 0..rule.len() {
            let x: Vec<f64> = rule.node(idx).iter().map(|u| u * r).collect();
            let jet = crate::jet::eval_jet3(map, &x)?;
            for alpha in 0..map.m {
                for i in 0..map.n {
                    s[0] = s[0].max(jet.d1(alpha, i).abs());
                    for j in 0..map.n {
                        s[1] = s[1].max(jet.d2(alpha, i, j).abs());
                        for k in 0..map.n {
                            s[2] = s[2].max(jet.d3(alpha, i, j, k).abs());
                        }
                    }
                }
            }
        }
        sup[0].push(s[0]);
        sup[1].push(s[1] * r);
        sup[2].push(s[2] * r * r);
        combined.push(s[0] + s[1] * r + s[2] * r * r);
    }
    let tau_of = |values: &[f64]| log_slope(radii, values).map(|slope| -slope);
    let tau_hat = tau_of(&combined);
    let tau_per_order = [tau_of(&sup[0]), tau_of(&sup[1]), tau_of(&sup[2])];
    let nf = map.n as f64;
    let (flag_p2, flag_egb) = match tau_hat {
        // No finite exponent means the sup-norms were identically zero.
        None => (false, false),
        Some(tau) => (tau <= (nf - 4.0) / 3.0, tau <= (nf - 2.0) / 2.0),
    };
    Ok(DecayReport {
        radii: radii.to_vec(),
        combined,
        tau_hat,
        tau_per_order,
        flag_p2,
        flag_egb,
    })
}

/// |Df|^2 sampled along inward rays toward Sigma.
#[derive(Debug, Clone, Serialize)]
pub struct RayDiagnostic {
    pub direction: Vec<f64>,
    /// (offset t, |Df|^2 at (rho(u) + t) u), decreasing t.
    pub samples: Vec<(f64, f64)>,
    /// Fitted q with |Df|^2 ~ t^{-q}.
    pub rate: Option<f64>,
    pub diverging: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonDivergenceReport {
    pub rays: Vec<RayDiagnostic>,
    /// True when every sampled ray diverges.
    pub all_diverging: bool,
}

/// Check |Df|^2 -> infinity on approach to Sigma along radial rays.
/// Advisory: a graph map can only close off a horizon at Sigma when this
/// diagnostic reports divergence.
pub fn horizon_divergence_diagnostic(
    map: &MapSpec,
    sigma: &HypersurfaceSpec,
    offsets: &[f64],
) -> Result<HorizonDivergenceReport> {
    if offsets.len() < 2 || offsets.iter().any(|&t| t <= 0.0) {
        return Err(Error::InvalidArgument(
            "need >= 2 positive approach offsets".into(),
        ));
    }
    let mut sorted = offsets.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let rule = sphere_rule(map.n, 1);
    // A spread of directions; every 7th node keeps the sample small.
    let mut rays = Vec::new();
    for idx in (0..rule.len()).step_by(7) {
        let u = rule.node(idx).to_vec();
        let rho = sigma.rho_value(&u)?;
        let mut samples = Vec::with_capacity(sorted.len());
        for &t in &sorted {
            let x: Vec<f64> = u.iter().map(|ui| ui * (rho + t)).collect();
            let jet = crate::jet::eval_jet3(map, &x)?;
            let mut s = 0.0;
            for alpha in 0..map.m {
                for i in 0..map.n {
                    s += jet.d1(alpha, i) * jet.d1(alpha, i);
                }
            }
            samples.push((t, s));
        }
        let ts: Vec<f64> = samples.iter().map(|&(t, _)| t).collect();
        let vs: Vec<f64> = samples.iter().map(|&(_, s)| s).collect();
        let rate = log_slope(&ts, &vs).map(|slope| -slope);
        // Divergence is judged on the local slope at the two finest offsets:
        // for a bounded |Df|^2 this slope collapses to 0 as t -> 0, while a
        // genuine horizon keeps a fixed positive power.
        let k = vs.len();
        let local = if vs[k - 1] > 1e-300 && vs[k - 2] > 1e-300 {
            (vs[k - 1] / vs[k - 2]).ln() / (ts[k - 2] / ts[k - 1]).ln()
        } else {
            0.0
        };
        let diverging = local > 0.3;
        rays.push(RayDiagnostic {
            direction: u,
            samples,
            rate,
            diverging,
        });
    }
    let all_diverging = rays.iter().all(|r| r.diverging);
    Ok(HorizonDivergenceReport {
        rays,
        all_diverging,
    })
}
