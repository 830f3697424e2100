//! Star-shaped hypersurfaces Sigma in R^n: fundamental forms, principal
//! curvatures, sigma-curvatures, area, boundary integrals and the
//! Alexandrov-Fenchel / Penrose-type inequality checks.
//!
//! Sigma is the radial graph X(u) = rho(u) u over the unit sphere, with rho
//! a positive expression in the unit-vector components u1..un. The chart is
//! hyperspherical angles; embedding derivatives come from the same jet
//! evaluator as the maps, applied to the composite trees X^i(theta).
//!
//! Curvature orientation: the outward normal, with the second fundamental
//! form II_ab = -<X_ab, N>, so round spheres get positive principal
//! curvatures 1/rho. The k-th mean curvatures are the *unnormalized*
//! elementary symmetric functions sigma_k of the principal curvatures (not
//! divided by binomial coefficients); that normalization is the one that
//! achieves equality on round spheres in the inequality checks below.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::consts::{c2, unit_sphere_area};
use crate::error::{Error, Result};
use crate::expr::{parse_single, Expr, Func, MapSpec};
use crate::jet::{eval_jet3, eval_value};
use crate::quad::{integrate_sphere_indexed, QuadratureRule};
use crate::sums::pairwise_sum;

/// A star-shaped hypersurface given by a radial profile over S^{n-1}.
#[derive(Debug, Clone)]
pub struct HypersurfaceSpec {
    pub n: usize,
    pub rho_source: String,
    /// rho as an expression in u1..un.
    pub rho: Expr,
    /// Embedding X(theta) = rho(u(theta)) u(theta) as n expressions in the
    /// n-1 hyperspherical angles.
    embedding: MapSpec,
}

/// Unit-sphere coordinate trees u_i(theta) over n-1 angle variables.
fn sphere_coordinate_trees(n: usize) -> Vec<Expr> {
    let mut trees = Vec::with_capacity(n);
    for i in 0..n {
        let mut factors: Vec<Expr> = Vec::new();
        let polar_count = i.min(n - 2);
        for a in 0..polar_count {
            factors.push(Expr::call(Func::Sin, Expr::var(a)));
        }
        if i < n - 1 {
            factors.push(Expr::call(Func::Cos, Expr::var(i.min(n - 2))));
        } else {
            factors.push(Expr::call(Func::Sin, Expr::var(n - 2)));
        }
        let mut tree = factors.pop().unwrap();
        while let Some(f) = factors.pop() {
            tree = Expr::mul(f, tree);
        }
        trees.push(tree);
    }
    trees
}

impl HypersurfaceSpec {
    /// Parse `rho_source` (an expression in u1..un) and build the chart.
    pub fn parse(n: usize, rho_source: &str) -> Result<HypersurfaceSpec> {
        if n < 3 {
            return Err(Error::InvalidArgument(
                "hypersurfaces need ambient dimension >= 3".into(),
            ));
        }
        let rho = parse_single(rho_source, n, 'u')?;
        Ok(Self::from_expr(n, rho_source.to_string(), rho))
    }

    pub fn from_expr(n: usize, rho_source: String, rho: Expr) -> HypersurfaceSpec {
        let u_trees = sphere_coordinate_trees(n);
        let rho_theta = rho.substitute(&u_trees);
        let embedding_exprs: Vec<Expr> = u_trees
            .iter()
            .map(|ui| Expr::mul(rho_theta.clone(), ui.clone()))
            .collect();
        let embedding = MapSpec {
            n: n - 1,
            m: n,
            exprs: embedding_exprs,
        };
        HypersurfaceSpec {
            n,
            rho_source,
            rho,
            embedding,
        }
    }

    /// rho at a unit vector u.
    pub fn rho_value(&self, u: &[f64]) -> Result<f64> {
        eval_value(&self.rho, u)
    }
}

/// First and second fundamental forms at a chart point.
#[derive(Debug, Clone)]
pub struct FundamentalForms {
    /// Embedding point X(theta).
    pub position: Vec<f64>,
    /// Tangent vectors X_a as rows.
    pub tangents: DMatrix<f64>,
    /// First fundamental form I_ab.
    pub first: DMatrix<f64>,
    /// Second fundamental form II_ab = -<X_ab, N>.
    pub second: DMatrix<f64>,
    /// Outward unit normal.
    pub normal: Vec<f64>,
    /// sqrt(det I), the chart area density.
    pub sqrt_det_first: f64,
}

/// Generalized cross product of the n-1 tangent rows; the returned vector is
/// orthogonal to all of them.
fn normal_from_tangents(tangents: &DMatrix<f64>) -> Vec<f64> {
    let n = tangents.ncols();
    let mut normal = vec![0.0; n];
    for i in 0..n {
        let minor = DMatrix::from_fn(n - 1, n - 1, |a, b| {
            let col = if b < i { b } else { b + 1 };
            tangents[(a, col)]
        });
        let det: f64 = minor.determinant();
        normal[i] = if i % 2 == 0 { det } else { -det };
    }
    normal
}

/// Fundamental forms of the embedding at chart point `theta`; the normal is
/// oriented outward (positive radial component).
pub fn fundamental_forms(spec: &HypersurfaceSpec, theta: &[f64]) -> Result<FundamentalForms> {
    let n = spec.n;
    let d = n - 1;
    assert_eq!(theta.len(), d, "chart point dimension mismatch");
    let jet = eval_jet3(&spec.embedding, theta)?;

    let position: Vec<f64> = jet.value.clone();
    let radius: f64 = position.iter().map(|v| v * v).sum::<f64>().sqrt();
    if radius <= 1e-12 {
        return Err(Error::DegenerateChart {
            theta: theta.to_vec(),
            detail: "rho vanished".into(),
        });
    }

    let tangents = DMatrix::from_fn(d, n, |a, i| jet.d1(i, a));
    let first = DMatrix::from_fn(d, d, |a, b| {
        (0..n).map(|i| jet.d1(i, a) * jet.d1(i, b)).sum::<f64>()
    });
    let det_first: f64 = first.determinant();
    if !(det_first > 0.0) {
        return Err(Error::DegenerateChart {
            theta: theta.to_vec(),
            detail: format!("det I = {det_first}"),
        });
    }

    let raw_normal = normal_from_tangents(&tangents);
    let norm: f64 = raw_normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-300 {
        return Err(Error::DegenerateChart {
            theta: theta.to_vec(),
            detail: "tangents do not span a hyperplane".into(),
        });
    }
    let radial: f64 = raw_normal
        .iter()
        .zip(&position)
        .map(|(a, b)| a * b)
        .sum::<f64>();
    let sign = if radial >= 0.0 { 1.0 } else { -1.0 };
    let normal: Vec<f64> = raw_normal.iter().map(|v| sign * v / norm).collect();

    let second = DMatrix::from_fn(d, d, |a, b| {
        -(0..n).map(|i| jet.d2(i, a, b) * normal[i]).sum::<f64>()
    });

    Ok(FundamentalForms {
        position,
        tangents,
        first,
        second,
        normal,
        sqrt_det_first: det_first.sqrt(),
    })
}

/// Principal curvatures: eigenvalues of I^{-1} II via the symmetric
/// generalized eigenproblem (congruence with the Cholesky factor of I).
pub fn principal_curvatures(forms: &FundamentalForms) -> Result<Vec<f64>> {
    let chol = forms.first.clone().cholesky().ok_or(Error::DegenerateChart {
        theta: vec![],
        detail: "first fundamental form not positive definite".into(),
    })?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&forms.second)
        .ok_or_else(|| Error::EigenFailure("singular Cholesky factor".into()))?;
    let z = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::EigenFailure("singular Cholesky factor".into()))?;
    let sym = (&z + z.transpose()) * 0.5;
    let eig = sym
        .try_symmetric_eigen(1e-13, 4096)
        .ok_or_else(|| Error::EigenFailure("symmetric eigensolver did not converge".into()))?;
    let mut kappa: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    kappa.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(kappa)
}

/// All elementary symmetric functions e_0..e_d of the values.
pub fn elementary_symmetric(values: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; values.len() + 1];
    e[0] = 1.0;
    for (count, &v) in values.iter().enumerate() {
        for k in (1..=count + 1).rev() {
            e[k] += v * e[k - 1];
        }
    }
    e
}

/// (sigma_1, sigma_2, sigma_3): unnormalized elementary symmetric functions
/// of the principal curvatures.
pub fn sigma_curvatures(forms: &FundamentalForms) -> Result<(f64, f64, f64)> {
    let kappa = principal_curvatures(forms)?;
    let e = elementary_symmetric(&kappa);
    let pick = |k: usize| e.get(k).copied().unwrap_or(0.0);
    Ok((pick(1), pick(2), pick(3)))
}

/// Chart density of the standard sphere measure: prod_k sin^{n-1-k} theta_k.
fn sphere_chart_density(n: usize, theta: &[f64]) -> f64 {
    let mut j = 1.0;
    for (k, &t) in theta.iter().take(n - 2).enumerate() {
        j *= t.sin().powi((n - 2 - k) as i32);
    }
    j
}

fn integrate_on_surface<F>(
    spec: &HypersurfaceSpec,
    rule: &QuadratureRule,
    field: F,
) -> Result<f64>
where
    F: Fn(&FundamentalForms, &[f64]) -> Result<f64> + Sync,
{
    assert_eq!(rule.n, spec.n, "rule dimension mismatch");
    integrate_sphere_indexed(rule, |i| {
        let theta = rule.theta(i);
        let forms = fundamental_forms(spec, theta)?;
        let density = forms.sqrt_det_first / sphere_chart_density(spec.n, theta);
        let v = field(&forms, rule.node(i))?;
        Ok(v * density)
    })
}

/// |Sigma| with the induced area element.
pub fn area(spec: &HypersurfaceSpec, rule: &QuadratureRule) -> Result<f64> {
    integrate_on_surface(spec, rule, |_, _| Ok(1.0))
}

/// Everything the inequality checks need, in one sweep over the nodes.
#[derive(Debug, Clone)]
pub struct SurfaceSurvey {
    pub area: f64,
    /// int sigma_k dmu for k = 1, 2, 3.
    pub integral_sigma: [f64; 3],
    /// Node-wise minima of sigma_1, sigma_2, sigma_3.
    pub min_sigma: [f64; 3],
}

/// Area, sigma-integrals and convexity minima in a single pass.
pub fn survey(spec: &HypersurfaceSpec, rule: &QuadratureRule) -> Result<SurfaceSurvey> {
    assert_eq!(rule.n, spec.n, "rule dimension mismatch");
    let rows: Vec<Result<[f64; 7]>> = (0..rule.len())
        .into_par_iter()
        .map(|i| {
            let theta = rule.theta(i);
            let forms = fundamental_forms(spec, theta)?;
            let density = forms.sqrt_det_first / sphere_chart_density(spec.n, theta);
            let (s1, s2, s3) = sigma_curvatures(&forms)?;
            let w = rule.weight(i) * density;
            Ok([w, w * s1, w * s2, w * s3, s1, s2, s3])
        })
        .collect();
    let mut cols = [const { Vec::new() }; 4];
    let mut min_sigma = [f64::INFINITY; 3];
    for row in rows {
        let row = row?;
        for (c, col) in cols.iter_mut().enumerate() {
            col.push(row[c]);
        }
        for k in 0..3 {
            min_sigma[k] = min_sigma[k].min(row[4 + k]);
        }
    }
    Ok(SurfaceSurvey {
        area: pairwise_sum(&cols[0]),
        integral_sigma: [
            pairwise_sum(&cols[1]),
            pairwise_sum(&cols[2]),
            pairwise_sum(&cols[3]),
        ],
        min_sigma,
    })
}

/// int_Sigma sigma_k dmu for k in 1..=3.
pub fn integrate_sigma(spec: &HypersurfaceSpec, k: usize, rule: &QuadratureRule) -> Result<f64> {
    assert!((1..=3).contains(&k), "sigma_k implemented for k = 1..3");
    integrate_on_surface(spec, rule, |forms, _| {
        let (s1, s2, s3) = sigma_curvatures(forms)?;
        Ok(match k {
            1 => s1,
            2 => s2,
            _ => s3,
        })
    })
}

/// Both sides of the Alexandrov-Fenchel-type inequality
/// 3 c2(n) int_Sigma H3 >= ((|Sigma|/omega)^{(n-4)/(n-1)}) / 4,
/// with equality exactly on round spheres.
#[derive(Debug, Clone, Serialize)]
pub struct AfCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub area: f64,
    pub integral_sigma3: f64,
    /// Minimum of (sigma_1, sigma_2, sigma_3) over the quadrature nodes;
    /// all-positive means the 3-convexity hypothesis held on the sample.
    pub min_sigma: [f64; 3],
}

/// Evaluate the inequality; hypotheses are reported, never enforced.
pub fn af_check(spec: &HypersurfaceSpec, rule: &QuadratureRule) -> Result<AfCheck> {
    let n = spec.n;
    if n < 5 {
        return Err(Error::Dimension {
            what: "Alexandrov-Fenchel check".into(),
            min_n: 5,
            n,
        });
    }
    let surv = survey(spec, rule)?;
    let lhs = 3.0 * c2(n) * surv.integral_sigma[2];
    let beta = (n as f64 - 4.0) / (n as f64 - 1.0);
    let rhs = 0.25 * (surv.area / unit_sphere_area(n)).powf(beta);

    Ok(AfCheck {
        lhs,
        rhs,
        margin: lhs - rhs,
        area: surv.area,
        integral_sigma3: surv.integral_sigma[2],
        min_sigma: surv.min_sigma,
    })
}

/// Penrose-type right-hand sides from horizon component areas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenroseMode {
    Gbc,
    Egb(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct PenroseRhs {
    /// Bound computed from the total area.
    pub combined: f64,
    /// Sum of the per-component bounds; superadditivity of x^beta for
    /// beta in (0, 1) makes this at least `combined`.
    pub per_component_sum: f64,
}

pub fn penrose_rhs(n: usize, areas: &[f64], mode: PenroseMode) -> Result<PenroseRhs> {
    if areas.is_empty() || areas.iter().any(|&a| a <= 0.0) {
        return Err(Error::InvalidArgument(
            "component areas must be positive".into(),
        ));
    }
    let min_n = match mode {
        PenroseMode::Gbc => 5,
        PenroseMode::Egb(_) => 4,
    };
    if n < min_n {
        return Err(Error::Dimension {
            what: "Penrose bound".into(),
            min_n,
            n,
        });
    }
    let omega = unit_sphere_area(n);
    let nf = n as f64;
    let total: f64 = areas.iter().sum();
    let bound = |a: f64| -> f64 {
        match mode {
            PenroseMode::Gbc => 0.25 * (a / omega).powf((nf - 4.0) / (nf - 1.0)),
            PenroseMode::Egb(alpha) => {
                0.5 * (a / omega).powf((nf - 2.0) / (nf - 1.0))
                    + 0.5 * alpha * (nf - 2.0) * (nf - 3.0)
                        * (a / omega).powf((nf - 4.0) / (nf - 1.0))
            }
        }
    };
    Ok(PenroseRhs {
        combined: bound(total),
        per_component_sum: pairwise_sum(&areas.iter().map(|&a| bound(a)).collect::<Vec<_>>()),
    })
}

/// Boundary-term selector for the exterior mass identities.
#[derive(Debug, Clone)]
pub enum BoundaryMode {
    /// 3 c2(n) int (s/(1+s))^2 H3, with s = |Df|^2 given on Sigma.
    GbcFiniteSlope(Expr),
    /// 3 c2(n) int H3 (the horizon limit s -> infinity).
    GbcHorizon,
    /// int (H + 6 alpha H3) / (2 (n-1) omega).
    Egb(f64),
}

/// The selected boundary integral over Sigma.
pub fn boundary_term(
    spec: &HypersurfaceSpec,
    rule: &QuadratureRule,
    mode: &BoundaryMode,
) -> Result<f64> {
    let n = spec.n;
    match mode {
        BoundaryMode::GbcHorizon => Ok(3.0 * c2(n) * integrate_sigma(spec, 3, rule)?),
        BoundaryMode::GbcFiniteSlope(s_expr) => {
            let v = integrate_on_surface(spec, rule, |forms, u| {
                let s = eval_value(s_expr, u)?;
                if s < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "|Df|^2 field must be nonnegative, got {s}"
                    )));
                }
                let factor = (s / (1.0 + s)).powi(2);
                let (_, _, s3) = sigma_curvatures(forms)?;
                Ok(factor * s3)
            })?;
            Ok(3.0 * c2(n) * v)
        }
        BoundaryMode::Egb(alpha) => {
            let v = integrate_on_surface(spec, rule, |forms, _| {
                let (s1, _, s3) = sigma_curvatures(forms)?;
                Ok(s1 + 6.0 * alpha * s3)
            })?;
            Ok(v / (2.0 * (n as f64 - 1.0) * unit_sphere_area(n)))
        }
    }
}

/// Mean curvature of the graph of Sigma inside the graph manifold:
/// H / sqrt(1 + s) with s = |Df|^2; pass `f64::INFINITY` for a horizon
/// (the result is then 0, minimality).
pub fn graph_mean_curvature(h: f64, s: f64) -> f64 {
    assert!(s >= 0.0, "slope-squared must be nonnegative");
    if s.is_infinite() {
        return 0.0;
    }
    h / (1.0 + s).sqrt()
}

/// Full per-hypersurface report.
#[derive(Debug, Clone, Serialize)]
pub struct HorizonReport {
    pub n: usize,
    pub rho: String,
    pub rule_level: usize,
    pub rule_degree: usize,
    pub area: f64,
    pub integral_sigma: [f64; 3],
    pub min_sigma: [f64; 3],
    pub three_convex: bool,
    pub af_lhs: f64,
    pub af_rhs: f64,
    pub af_margin: f64,
    pub penrose_rhs: f64,
    pub egb_boundary: Option<f64>,
}

pub fn horizon_report(
    spec: &HypersurfaceSpec,
    rule: &QuadratureRule,
    egb_alpha: Option<f64>,
) -> Result<HorizonReport> {
    let n = spec.n;
    let surv = survey(spec, rule)?;
    let af_lhs = 3.0 * c2(n) * surv.integral_sigma[2];
    let beta = (n as f64 - 4.0) / (n as f64 - 1.0);
    let af_rhs = 0.25 * (surv.area / unit_sphere_area(n)).powf(beta);
    let penrose = penrose_rhs(n, &[surv.area], PenroseMode::Gbc)?;
    // (H + 6 alpha H3) integral from the same survey.
    let egb_boundary = egb_alpha.map(|alpha| {
        (surv.integral_sigma[0] + 6.0 * alpha * surv.integral_sigma[2])
            / (2.0 * (n as f64 - 1.0) * unit_sphere_area(n))
    });
    Ok(HorizonReport {
        n,
        rho: spec.rho_source.clone(),
        rule_level: rule.level,
        rule_degree: rule.degree,
        area: surv.area,
        integral_sigma: surv.integral_sigma,
        min_sigma: surv.min_sigma,
        three_convex: surv.min_sigma.iter().all(|&v| v > 0.0),
        af_lhs,
        af_rhs,
        af_margin: af_lhs - af_rhs,
        penrose_rhs: penrose.combined,
        egb_boundary,
    })
}
