//! Quadrature on spheres S^{n-1}, radial/volume integration, and
//! power-law limit extrapolation.
//!
//! The sphere rule is a product over hyperspherical angles: for each polar
//! angle theta_k the surface measure carries sin^{p_k}(theta_k) with
//! p_k = n-1-k, which under t = cos(theta_k) is the Gegenbauer weight
//! (1-t^2)^{(p_k-1)/2}; a Gaussian rule for that weight makes the product
//! rule exact on all spherical polynomials up to the reported degree. The
//! azimuth is periodic, so a uniform (trapezoidal) grid is already Gaussian
//! there. All nodes stay strictly inside the angle box: pole degeneracy
//! never hits a node.
//!
//! All reductions use a fixed pairwise tree, so results are bit-identical
//! regardless of worker count.

use std::io::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::consts::{gamma_half, unit_sphere_area};
use crate::error::{Error, Result};
use crate::expr::MapSpec;
use crate::geometry::PointData;
use crate::sums::pairwise_sum;

// ── 1D Gaussian rules ──────────────────────────────────────────

/// Nodes and weights for the weight (1 - t^2)^lambda on [-1, 1], by
/// Golub-Welsch on the Jacobi matrix of the (Gegenbauer) recurrence.
/// `lambda = 0` is Gauss-Legendre.
pub fn gauss_gegenbauer(points: usize, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(points >= 1);
    // mu0 = int (1-t^2)^lambda dt = sqrt(pi) Gamma(lambda+1) / Gamma(lambda+3/2);
    // lambda here is always a half-integer (p-1)/2.
    let p = (2.0 * lambda).round() as u32 + 1;
    let mu0 = std::f64::consts::PI.sqrt() * gamma_half(p + 1) / gamma_half(p + 2);

    if points == 1 {
        return (vec![0.0], vec![mu0]);
    }
    let mut jac = DMatrix::zeros(points, points);
    for k in 1..points {
        let kf = k as f64;
        let b2 = kf * (kf + 2.0 * lambda)
            / ((2.0 * kf + 2.0 * lambda + 1.0) * (2.0 * kf + 2.0 * lambda - 1.0));
        let b = b2.sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..points)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let first = eig.eigenvectors[(0, i)];
            (node, mu0 * first * first)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Enforce the exact symmetry of the rule under t -> -t.
    let n = pairs.len();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let t = 0.5 * (pairs[i].0 - pairs[j].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (t, w);
        pairs[j] = (-t, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

/// Gauss-Legendre nodes and weights on [a, b].
pub fn gauss_legendre(points: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (t, w) = gauss_gegenbauer(points, 0.0);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        t.iter().map(|ti| mid + half * ti).collect(),
        w.iter().map(|wi| wi * half).collect(),
    )
}

// ── sphere rules ───────────────────────────────────────────────

/// Product quadrature rule on the unit sphere S^{n-1}.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub n: usize,
    pub level: usize,
    /// Polynomial exactness degree.
    pub degree: usize,
    nodes: Vec<f64>,
    thetas: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Unit vector of node `i`.
    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.n..(i + 1) * self.n]
    }

    /// Hyperspherical angles of node `i` (n-2 polar angles, then azimuth).
    pub fn theta(&self, i: usize) -> &[f64] {
        &self.thetas[i * (self.n - 1)..(i + 1) * (self.n - 1)]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weight_sum(&self) -> f64 {
        pairwise_sum(&self.weights)
    }
}

/// Build the level-`level` product rule on S^{n-1}.
///
/// Node counts grow with the level: 2*level+2 Gaussian points per polar
/// angle and 4*level+4 azimuthal points, for exactness degree 4*level+3.
pub fn sphere_rule(n: usize, level: usize) -> QuadratureRule {
    assert!(n >= 2, "sphere rule needs ambient dimension >= 2");
    assert!(level >= 1, "quadrature level starts at 1");
    let polar_points = 2 * level + 2;
    let azimuth_points = 4 * level + 4;
    let degree = (2 * polar_points - 1).min(azimuth_points - 1);

    // Per polar angle k = 1..n-2 the weight exponent is p_k = n-1-k.
    let polar: Vec<(Vec<f64>, Vec<f64>)> = (1..=n.saturating_sub(2))
        .map(|k| {
            let lambda = (n - 1 - k) as f64 / 2.0 - 0.5;
            gauss_gegenbauer(polar_points, lambda)
        })
        .collect();

    let mut nodes = Vec::new();
    let mut thetas = Vec::new();
    let mut weights = Vec::new();

    let azimuth_weight = std::f64::consts::TAU / azimuth_points as f64;
    let mut index = vec![0usize; polar.len()];
    loop {
        // Assemble the polar part of this multi-index.
        let mut cosines = Vec::with_capacity(polar.len());
        let mut polar_weight = 1.0;
        for (k, (ts, ws)) in polar.iter().enumerate() {
            cosines.push(ts[index[k]]);
            polar_weight *= ws[index[k]];
        }
        for j in 0..azimuth_points {
            let phi = std::f64::consts::TAU * (j as f64 + 0.5) / azimuth_points as f64;
            let mut u = vec![0.0; n];
            let mut sines = 1.0;
            for (k, &c) in cosines.iter().enumerate() {
                u[k] = sines * c;
                sines *= (1.0 - c * c).sqrt();
                thetas.push(c.acos());
            }
            u[n - 2] = sines * phi.cos();
            u[n - 1] = sines * phi.sin();
            thetas.push(phi);
            nodes.extend_from_slice(&u);
            weights.push(polar_weight * azimuth_weight);
        }
        // Odometer over the polar indices.
        let mut k = 0;
        loop {
            if k == index.len() {
                return QuadratureRule {
                    n,
                    level,
                    degree,
                    nodes,
                    thetas,
                    weights,
                };
            }
            index[k] += 1;
            if index[k] < polar_points {
                break;
            }
            index[k] = 0;
            k += 1;
        }
    }
}

/// Sum w_i field(u_i) with a deterministic reduction; field evaluations run
/// in parallel. The first failing node (in node order) is reported.
pub fn integrate_sphere<F>(rule: &QuadratureRule, field: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    integrate_sphere_indexed(rule, |i| field(rule.node(i)))
}

/// Like [`integrate_sphere`] but the field sees the node index, so callers
/// can reach the stored angles as well as the unit vector.
pub fn integrate_sphere_indexed<F>(rule: &QuadratureRule, field: F) -> Result<f64>
where
    F: Fn(usize) -> Result<f64> + Sync,
{
    let values: Vec<Result<f64>> = (0..rule.len()).into_par_iter().map(&field).collect();
    let mut terms = Vec::with_capacity(rule.len());
    for (i, v) in values.into_iter().enumerate() {
        let v = v?;
        if !v.is_finite() {
            return Err(Error::NonFiniteField {
                node_index: i,
                detail: format!("value {v} at node {:?}", rule.node(i)),
            });
        }
        terms.push(rule.weight(i) * v);
    }
    Ok(pairwise_sum(&terms))
}

// ── rule persistence ───────────────────────────────────────────

impl QuadratureRule {
    /// Write the rule as text: a header line (n, level, degree, count) and
    /// one row of n coordinates plus the weight per node, full precision.
    pub fn save_text(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# gbc-lab sphere quadrature schema=1\n");
        out.push_str(&format!(
            "n={} level={} degree={} count={}\n",
            self.n,
            self.level,
            self.degree,
            self.len()
        ));
        for i in 0..self.len() {
            let mut row: Vec<String> = self.node(i).iter().map(|v| format!("{v:.17e}")).collect();
            row.push(format!("{:.17e}", self.weight(i)));
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::RuleIo(e.to_string()))?;
        f.write_all(out.as_bytes())
            .map_err(|e| Error::RuleIo(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::RuleIo(e.to_string()))?;
        Ok(())
    }

    /// Load a rule saved by [`QuadratureRule::save_text`]. Angles are
    /// reconstructed from the unit vectors; unit norms and the weight sum
    /// are validated.
    pub fn load_text(path: &std::path::Path) -> Result<QuadratureRule> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::RuleIo(e.to_string()))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::RuleIo("empty file".into()))?;
        if !header.starts_with("# gbc-lab sphere quadrature schema=1") {
            return Err(Error::RuleIo(format!("unrecognized header `{header}`")));
        }
        let meta = lines
            .next()
            .ok_or_else(|| Error::RuleIo("missing metadata line".into()))?;
        let mut n = 0usize;
        let mut level = 0usize;
        let mut degree = 0usize;
        let mut count = 0usize;
        for field in meta.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::RuleIo(format!("bad metadata field `{field}`")))?;
            let v: usize = value
                .parse()
                .map_err(|_| Error::RuleIo(format!("bad metadata value `{field}`")))?;
            match key {
                "n" => n = v,
                "level" => level = v,
                "degree" => degree = v,
                "count" => count = v,
                _ => return Err(Error::RuleIo(format!("unknown metadata key `{key}`"))),
            }
        }
        if n < 2 || count == 0 {
            return Err(Error::RuleIo("invalid metadata".into()));
        }
        let mut nodes = Vec::with_capacity(count * n);
        let mut weights = Vec::with_capacity(count);
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(|t| t.parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::RuleIo(format!("bad row: {e}")))?;
            if vals.len() != n + 1 {
                return Err(Error::RuleIo(format!(
                    "row has {} fields, expected {}",
                    vals.len(),
                    n + 1
                )));
            }
            nodes.extend_from_slice(&vals[..n]);
            weights.push(vals[n]);
        }
        if weights.len() != count {
            return Err(Error::RuleIo(format!(
                "count mismatch: header {count}, rows {}",
                weights.len()
            )));
        }
        let mut thetas = Vec::with_capacity(count * (n - 1));
        for i in 0..count {
            let u = &nodes[i * n..(i + 1) * n];
            let norm: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::RuleIo(format!("node {i} is not unit: |u| = {norm}")));
            }
            let mut sines = 1.0;
            for &uk in u.iter().take(n - 2) {
                let c = (uk / sines).clamp(-1.0, 1.0);
                thetas.push(c.acos());
                sines *= (1.0 - c * c).sqrt().max(1e-300);
            }
            let mut phi = (u[n - 1] / sines).atan2(u[n - 2] / sines);
            if phi < 0.0 {
                phi += std::f64::consts::TAU;
            }
            thetas.push(phi);
        }
        let rule = QuadratureRule {
            n,
            level,
            degree,
            nodes,
            thetas,
            weights,
        };
        let total = rule.weight_sum();
        let omega = unit_sphere_area(n);
        if ((total - omega) / omega).abs() > 1e-10 {
            return Err(Error::RuleIo(format!(
                "weight sum {total} does not match sphere area {omega}"
            )));
        }
        Ok(rule)
    }
}

// ── radial machinery ───────────────────────────────────────────

/// Increasing sphere radii for flux extrapolation.
#[derive(Debug, Clone)]
pub struct RadialSchedule {
    pub radii: Vec<f64>,
}

impl RadialSchedule {
    pub fn new(radii: Vec<f64>) -> Result<RadialSchedule> {
        if radii.is_empty() {
            return Err(Error::InvalidArgument("empty radial schedule".into()));
        }
        for w in radii.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidArgument(format!(
                    "radii must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if radii[0] <= 0.0 {
            return Err(Error::InvalidArgument("radii must be positive".into()));
        }
        Ok(RadialSchedule { radii })
    }
}

/// Dyadic partition of [r0, r1], finest near r0; at most 13 subintervals.
pub fn geometric_partition(r0: f64, r1: f64) -> Vec<f64> {
    assert!(r1 > r0 && r0 >= 0.0);
    let mut boundaries = vec![r1];
    let mut b = r1 / 2.0;
    let floor = r0.max(r1 / 4096.0);
    while b > floor * (1.0 + 1e-12) && boundaries.len() < 13 {
        boundaries.push(b);
        b /= 2.0;
    }
    boundaries.push(r0);
    boundaries.reverse();
    boundaries
}

/// Nested quadrature of `field` over the shell r0 <= |x| <= r1 with the flat
/// volume element: int field(x) dmu = int_r int_S field(r u) r^{n-1} dS dr.
/// Gauss-Legendre with `radial_points` nodes on each subinterval of the
/// dyadic partition.
pub fn shell_volume_integral<F>(
    field: F,
    n: usize,
    r0: f64,
    r1: f64,
    rule: &QuadratureRule,
    radial_points: usize,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    assert_eq!(rule.n, n, "rule dimension mismatch");
    if !(r0 >= 0.0 && r1 > r0) {
        return Err(Error::InvalidArgument(format!(
            "invalid shell bounds [{r0}, {r1}]"
        )));
    }
    let boundaries = geometric_partition(r0, r1);
    let mut terms = Vec::new();
    for seg in boundaries.windows(2) {
        let (nodes, ws) = gauss_legendre(radial_points, seg[0], seg[1]);
        for (r, w) in nodes.iter().zip(&ws) {
            let shell = integrate_sphere(rule, |u| {
                let x: Vec<f64> = u.iter().map(|ui| ui * r).collect();
                field(&x)
            })?;
            terms.push(w * r.powi(n as i32 - 1) * shell);
        }
    }
    Ok(pairwise_sum(&terms))
}

// ── surface fluxes ─────────────────────────────────────────────

/// Mass selector for surface fluxes and bulk integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FluxKind {
    /// (g_ij,i - g_ii,j) nu_j with constant 1/(2(n-1) omega).
    AdmRaw,
    /// P1^ijkl d_l g_jk nu_i with constant 1/((n-1) omega).
    P1,
    /// P2^ijkl d_l g_jk nu_i with constant c2(n).
    P2,
    /// (P1 + alpha P2) flux with constant 1/((n-1) omega).
    Egb(f64),
}

impl std::fmt::Display for FluxKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FluxKind::AdmRaw => write!(f, "adm_raw"),
            FluxKind::P1 => write!(f, "p1"),
            FluxKind::P2 => write!(f, "p2"),
            FluxKind::Egb(a) => write!(f, "egb(alpha={a})"),
        }
    }
}

/// Minimal ambient dimension for a selector (P2 flux needs n >= 5, the
/// Einstein-Gauss-Bonnet combination n >= 4).
pub fn check_dimension(which: FluxKind, n: usize) -> Result<()> {
    let (min_n, what) = match which {
        FluxKind::P2 => (5, "P2 (Gauss-Bonnet-Chern) mass"),
        FluxKind::Egb(_) => (4, "Einstein-Gauss-Bonnet mass"),
        _ => (3, "ADM mass"),
    };
    if n < min_n {
        return Err(Error::Dimension {
            what: what.into(),
            min_n,
            n,
        });
    }
    Ok(())
}

/// Scaled flux integral over the coordinate sphere of radius `radius`:
/// the defining constant of the selected mass times
/// int_{S_R} (integrand . nu) dS with the Euclidean area element.
pub fn surface_flux(
    map: &MapSpec,
    which: FluxKind,
    radius: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    assert_eq!(rule.n, map.n, "rule dimension mismatch");
    if radius <= 0.0 {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    check_dimension(which, map.n)?;
    let n = map.n;
    let constant = match which {
        FluxKind::AdmRaw => crate::consts::adm_constant(n),
        FluxKind::P1 | FluxKind::Egb(_) => crate::consts::p1_constant(n),
        FluxKind::P2 => crate::consts::c2(n),
    };
    let raw = integrate_sphere(rule, |u| {
        let x: Vec<f64> = u.iter().map(|ui| ui * radius).collect();
        match which {
            FluxKind::AdmRaw => {
                let jet = crate::jet::eval_jet3(map, &x)?;
                let fo = crate::geometry::first_order(&jet)?;
                let mut acc = 0.0;
                for j in 0..n {
                    let mut div_term = 0.0;
                    let mut trace_term = 0.0;
                    for i in 0..n {
                        div_term += fo.dg.get(i, i, j);
                        trace_term += fo.dg.get(j, i, i);
                    }
                    acc += (div_term - trace_term) * u[j];
                }
                Ok(acc)
            }
            _ => {
                let pd = PointData::compute(map, &x)?;
                let flux = match which {
                    FluxKind::P1 => pd.cd.flux1.clone(),
                    FluxKind::P2 => pd.cd.flux2.clone(),
                    FluxKind::Egb(alpha) => pd.egb_flux(alpha),
                    FluxKind::AdmRaw => unreachable!(),
                };
                Ok(flux.iter().zip(u).map(|(f, ui)| f * ui).sum())
            }
        }
    })?;
    Ok(constant * radius.powi(n as i32 - 1) * raw)
}

/// Bulk density selector matched to [`FluxKind`] via the divergence identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BulkDensity {
    /// L2 + L2perp (for the P2 mass).
    Gbc,
    /// R + Rperp (for the ADM/P1 mass).
    Adm,
    /// R + alpha L2 + Rperp + alpha L2perp.
    Egb(f64),
}

/// Pointwise density value over the flat volume element.
pub fn bulk_density(map: &MapSpec, density: BulkDensity, x: &[f64]) -> Result<f64> {
    let pd = PointData::compute(map, x)?;
    Ok(match density {
        BulkDensity::Gbc => pd.cd.l2 + pd.cd.l2perp,
        BulkDensity::Adm => pd.cd.scalar + pd.cd.rperp_scalar,
        BulkDensity::Egb(alpha) => {
            pd.cd.scalar + alpha * pd.cd.l2 + pd.cd.rperp_scalar + alpha * pd.cd.l2perp
        }
    })
}

/// Shell integral of a bulk density (no mass prefactor applied).
pub fn bulk_shell_integral(
    map: &MapSpec,
    density: BulkDensity,
    r0: f64,
    r1: f64,
    rule: &QuadratureRule,
    radial_points: usize,
) -> Result<f64> {
    shell_volume_integral(
        |x| bulk_density(map, density, x),
        map.n,
        r0,
        r1,
        rule,
        radial_points,
    )
}

// ── power-law extrapolation ────────────────────────────────────

/// Result of fitting v(R) = a + b R^{-p}.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ExtrapolationFit {
    /// Fitted limit a.
    pub limit: f64,
    /// Fitted decay rate p > 0.
    pub rate: f64,
    /// Fitted coefficient b.
    pub coefficient: f64,
    /// Root-mean-square misfit over the samples.
    pub residual_rms: f64,
}

impl ExtrapolationFit {
    /// Conservative uncertainty of the limit: the rms misfit plus a
    /// Richardson-style estimate |v_J - a| / (2^p - 1) of the model error
    /// remaining at the largest radius.
    pub fn uncertainty(&self, samples: &[(f64, f64)]) -> f64 {
        let last = samples.last().map(|&(_, v)| v).unwrap_or(self.limit);
        let p = self.rate.clamp(0.5, 8.0);
        self.residual_rms + (last - self.limit).abs() / (2f64.powf(p) - 1.0)
    }
}

fn power_law_sse(samples: &[(f64, f64)], p: f64) -> (f64, f64, f64) {
    let jn = samples.len() as f64;
    let (mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(r, v) in samples {
        let phi = r.powf(-p);
        sx += phi;
        sxx += phi * phi;
        sy += v;
        sxy += phi * v;
    }
    let det = jn * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return (f64::NAN, f64::NAN, f64::INFINITY);
    }
    let a = (sxx * sy - sx * sxy) / det;
    let b = (jn * sxy - sx * sy) / det;
    let sse: f64 = samples
        .iter()
        .map(|&(r, v)| {
            let e = v - a - b * r.powf(-p);
            e * e
        })
        .sum();
    (a, b, sse)
}

/// Least-squares fit of v(R) = a + b R^{-p} over (a, b, p) with p > 0.
///
/// Needs at least 3 samples with strictly increasing radii. Fails when the
/// best fit still leaves more than 5% of the sample spread unexplained, or
/// when the rate estimate runs into the search boundary.
pub fn extrapolate(samples: &[(f64, f64)]) -> Result<ExtrapolationFit> {
    if samples.len() < 3 {
        return Err(Error::FitFailure {
            reason: format!("need >= 3 samples, got {}", samples.len()),
        });
    }
    for w in samples.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::FitFailure {
                reason: "radii must be strictly increasing".into(),
            });
        }
    }
    if samples[0].0 <= 0.0 {
        return Err(Error::FitFailure {
            reason: "radii must be positive".into(),
        });
    }

    let values: Vec<f64> = samples.iter().map(|&(_, v)| v).collect();
    let spread = values.iter().cloned().fold(f64::MIN, f64::max)
        - values.iter().cloned().fold(f64::MAX, f64::min);

    // Coarse grid over p, then golden-section refinement.
    let mut best = (f64::NAN, f64::NAN, f64::INFINITY, 0.0);
    let mut p = 0.1;
    while p <= 12.0 + 1e-9 {
        let (a, b, sse) = power_law_sse(samples, p);
        if sse < best.2 {
            best = (a, b, sse, p);
        }
        p += 0.1;
    }
    let (mut lo, mut hi) = ((best.3 - 0.15).max(0.02), (best.3 + 0.15).min(15.0));
    let golden = 0.5 * (3.0 - 5f64.sqrt());
    for _ in 0..80 {
        let p1 = lo + golden * (hi - lo);
        let p2 = hi - golden * (hi - lo);
        let s1 = power_law_sse(samples, p1).2;
        let s2 = power_law_sse(samples, p2).2;
        if s1 < s2 {
            hi = p2;
        } else {
            lo = p1;
        }
    }
    let p_star = 0.5 * (lo + hi);
    let (a, b, sse) = power_law_sse(samples, p_star);
    let rms = (sse / samples.len() as f64).sqrt();

    if !a.is_finite() || !b.is_finite() {
        return Err(Error::FitFailure {
            reason: "degenerate normal equations".into(),
        });
    }
    if p_star <= 0.03 {
        return Err(Error::FitFailure {
            reason: format!("decay rate ran into the lower boundary (p = {p_star:.3})"),
        });
    }
    if spread > 0.0 && rms > 0.05 * spread {
        return Err(Error::FitFailure {
            reason: format!(
                "power law explains the samples poorly (rms {rms:.3e} vs spread {spread:.3e})"
            ),
        });
    }
    Ok(ExtrapolationFit {
        limit: a,
        rate: p_star,
        coefficient: b,
        residual_rms: rms,
    })
}
