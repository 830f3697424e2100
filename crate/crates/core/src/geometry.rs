//! Pointwise geometry of the graph M = {(x, f(x))} in R^{n+m}.
//!
//! With f_i, f_ij, f_ijk the derivative jets of f, the induced metric is
//! g_ij = delta_ij + f_i^a f_j^a and every curvature quantity follows from
//! the Gauss equation:
//!
//! ```text
//! U_ab   = delta_ab + <Df^a, Df^b>         inverse U^ab
//! g^ij   = delta_ij - f_i^a f_j^b U^ab
//! Gamma_ij^k = U^ab f_k^a f_ij^b
//! R_ijkl = U^ab (f_ik^a f_jl^b - f_il^a f_jk^b)
//! (A^a)^j_i = f_ik^a g^kj                  shape operators
//! Rperp_ab = A^b A^a - A^a A^b             normal curvature
//! ```
//!
//! On top of these sit the Lovelock-type tensors
//! P1^ijkl = (g^ik g^jl - g^il g^jk)/2 and
//! P2^ijkl = R^ijkl + R^jk g^il - R^jl g^ik - R^ik g^jl + R^il g^jk
//!         + R (g^ik g^jl - g^il g^jk)/2,
//! the scalars L2 = P2.Riem, the normal-bundle corrections L2perp and
//! Rperp, and the flux vectors F_a^i = P_a^ijkl d_l g_jk whose divergences
//! the rest of the crate integrates.
//!
//! Scalars with two algebraically independent evaluation routes (L2,
//! L2perp) are always computed along both; disagreement beyond tolerance
//! is a hard [`Error::PathMismatch`], since it can only come from an
//! index bug upstream.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jet::MapJet3;
use crate::sums::pairwise_sum;
use crate::tensor::{Tensor3, Tensor4};

/// Relative tolerance for the dual-path check on L2.
pub const L2_PATH_TOL: f64 = 1e-10;
/// Relative tolerance for the dual-path check on L2perp.
pub const L2PERP_PATH_TOL: f64 = 1e-9;

/// Metric-level data at a point.
#[derive(Debug, Clone)]
pub struct FirstOrderData {
    pub n: usize,
    pub m: usize,
    /// Induced metric g_ij.
    pub g: DMatrix<f64>,
    /// Closed-form inverse g^ij = delta_ij - f_i^a f_j^b U^ab.
    pub ginv: DMatrix<f64>,
    /// sqrt(det g).
    pub sqrt_g: f64,
    /// Normal Gram matrix U_ab.
    pub u_mat: DMatrix<f64>,
    /// Inverse U^ab.
    pub u_inv: DMatrix<f64>,
    /// Christoffel symbols; `gamma.get(i, j, k)` is Gamma_ij^k.
    pub gamma: Tensor3,
    /// Coordinate derivatives of the metric; `dg.get(l, j, k)` is d_l g_jk.
    pub dg: Tensor3,
}

/// Compute metric, normal Gram matrix, Christoffels and metric derivatives.
pub fn first_order(jet: &MapJet3) -> Result<FirstOrderData> {
    let (n, m) = (jet.n, jet.m);

    let mut g = DMatrix::identity(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for alpha in 0..m {
                s += jet.d1(alpha, i) * jet.d1(alpha, j);
            }
            g[(i, j)] += s;
            if i != j {
                g[(j, i)] += s;
            }
        }
    }

    let mut u_mat = DMatrix::identity(m, m);
    for a in 0..m {
        for b in a..m {
            let mut s = 0.0;
            for i in 0..n {
                s += jet.d1(a, i) * jet.d1(b, i);
            }
            u_mat[(a, b)] += s;
            if a != b {
                u_mat[(b, a)] += s;
            }
        }
    }

    let u_inv_raw = u_mat.clone().try_inverse().ok_or(Error::SingularMatrix {
        context: "normal Gram matrix U".into(),
    })?;
    let u_inv = (&u_inv_raw + u_inv_raw.transpose()) * 0.5;

    let mut ginv = DMatrix::identity(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for a in 0..m {
                for b in 0..m {
                    s += jet.d1(a, i) * jet.d1(b, j) * u_inv[(a, b)];
                }
            }
            ginv[(i, j)] -= s;
            if i != j {
                ginv[(j, i)] -= s;
            }
        }
    }

    let chol = g.clone().cholesky().ok_or(Error::SingularMatrix {
        context: "induced metric g".into(),
    })?;
    let det: f64 = chol.determinant();
    let sqrt_g = det.sqrt();
    if !sqrt_g.is_finite() {
        return Err(Error::SingularMatrix {
            context: "sqrt(det g)".into(),
        });
    }

    // Gamma_ij^k = U^ab f_k^a f_ij^b, via W(b, k) = sum_a U^ab f_k^a.
    let mut w = DMatrix::zeros(m, n);
    for b in 0..m {
        for k in 0..n {
            let mut s = 0.0;
            for a in 0..m {
                s += u_inv[(a, b)] * jet.d1(a, k);
            }
            w[(b, k)] = s;
        }
    }
    let mut gamma = Tensor3::zeros(n);
    for i in 0..n {
        for j in i..n {
            for k in 0..n {
                let mut s = 0.0;
                for b in 0..m {
                    s += w[(b, k)] * jet.d2(b, i, j);
                }
                gamma.set(i, j, k, s);
                if i != j {
                    gamma.set(j, i, k, s);
                }
            }
        }
    }

    let mut dg = Tensor3::zeros(n);
    for l in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for a in 0..m {
                    s += jet.d2(a, j, l) * jet.d1(a, k) + jet.d1(a, j) * jet.d2(a, k, l);
                }
                dg.set(l, j, k, s);
            }
        }
    }

    Ok(FirstOrderData {
        n,
        m,
        g,
        ginv,
        sqrt_g,
        u_mat,
        u_inv,
        gamma,
        dg,
    })
}

/// All curvature-level tensors at a point.
#[derive(Debug, Clone)]
pub struct CurvatureData {
    pub n: usize,
    pub m: usize,
    /// R_ijkl, all indices down.
    pub riem_dddd: Tensor4,
    /// R^ijkl, all indices up.
    pub riem_uuuu: Tensor4,
    /// Ricci tensor with both indices up.
    pub ric_uu: DMatrix<f64>,
    /// Scalar curvature R.
    pub scalar: f64,
    /// Shape operators as matrices acting on tangent components:
    /// `shape[a][(j, i)]` = g^jk f_ki^a.
    pub shape: Vec<DMatrix<f64>>,
    /// Normal curvature operators Rperp_ab = A^b A^a - A^a A^b,
    /// flattened at index `a * m + b`.
    pub rperp: Vec<DMatrix<f64>>,
    /// Ricci operator (one index raised).
    pub rc: DMatrix<f64>,
    /// Tperp_a = U^{mu nu} ((tr A^mu) Rperp_{nu a} + Rperp_{a mu} A^nu
    ///          + A^mu Rperp_{a nu}).
    pub tperp: Vec<DMatrix<f64>>,
    /// P1^ijkl.
    pub p1_uuuu: Tensor4,
    /// P2^ijkl.
    pub p2_uuuu: Tensor4,
    /// L2 = P2 . Riem.
    pub l2: f64,
    /// Normal-bundle correction to the P2 divergence identity.
    pub l2perp: f64,
    /// Rperp scalar <Rperp_ag grad f^a, grad f^g>.
    pub rperp_scalar: f64,
    /// F1^i = P1^ijkl d_l g_jk.
    pub flux1: Vec<f64>,
    /// F2^i = P2^ijkl d_l g_jk.
    pub flux2: Vec<f64>,
}

/// Hessian of component `alpha` as an n x n matrix.
pub fn hessian(jet: &MapJet3, alpha: usize) -> DMatrix<f64> {
    let n = jet.n;
    DMatrix::from_fn(n, n, |i, j| jet.d2(alpha, i, j))
}

fn metric_inner(g: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (x.transpose() * g * y)[(0, 0)]
}

/// Riemann, Ricci, scalar, shape and normal-curvature operators.
/// P-tensors and derived scalars are filled by the later stages.
pub fn curvature(jet: &MapJet3, fo: &FirstOrderData) -> CurvatureData {
    let (n, m) = (jet.n, jet.m);

    let hess: Vec<DMatrix<f64>> = (0..m).map(|a| hessian(jet, a)).collect();
    // K^b = sum_a U^ab H^a
    let kmat: Vec<DMatrix<f64>> = (0..m)
        .map(|b| {
            let mut acc = DMatrix::zeros(n, n);
            for a in 0..m {
                acc += &hess[a] * fo.u_inv[(a, b)];
            }
            acc
        })
        .collect();

    let mut riem_dddd = Tensor4::zeros(n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut s = 0.0;
                    for b in 0..m {
                        s += kmat[b][(i, k)] * hess[b][(j, l)]
                            - kmat[b][(i, l)] * hess[b][(j, k)];
                    }
                    riem_dddd.set(i, j, k, l, s);
                }
            }
        }
    }

    // Ricci (down): R_jl = g^ik R_ijkl.
    let mut ric_dd = DMatrix::zeros(n, n);
    for j in 0..n {
        for l in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                for k in 0..n {
                    s += fo.ginv[(i, k)] * riem_dddd.get(i, j, k, l);
                }
            }
            ric_dd[(j, l)] = s;
        }
    }
    let mut scalar = 0.0;
    for j in 0..n {
        for l in 0..n {
            scalar += fo.ginv[(j, l)] * ric_dd[(j, l)];
        }
    }
    let ric_uu = &fo.ginv * &ric_dd * &fo.ginv;

    let riem_uuuu = raise_all_indices(&riem_dddd, &fo.ginv);

    let shape: Vec<DMatrix<f64>> = (0..m).map(|a| &fo.ginv * &hess[a]).collect();

    let mut rperp = Vec::with_capacity(m * m);
    for a in 0..m {
        for b in 0..m {
            rperp.push(&shape[b] * &shape[a] - &shape[a] * &shape[b]);
        }
    }

    let rc = &fo.ginv * &ric_dd;

    let tperp: Vec<DMatrix<f64>> = (0..m)
        .map(|a| {
            let mut acc = DMatrix::zeros(n, n);
            for mu in 0..m {
                for nu in 0..m {
                    let c = fo.u_inv[(mu, nu)];
                    if c == 0.0 {
                        continue;
                    }
                    let tr_mu = shape[mu].trace();
                    acc += &rperp[nu * m + a] * (c * tr_mu);
                    acc += &rperp[a * m + mu] * &shape[nu] * c;
                    acc += &shape[mu] * &rperp[a * m + nu] * c;
                }
            }
            acc
        })
        .collect();

    CurvatureData {
        n,
        m,
        riem_dddd,
        riem_uuuu,
        ric_uu,
        scalar,
        shape,
        rperp,
        rc,
        tperp,
        p1_uuuu: Tensor4::zeros(n),
        p2_uuuu: Tensor4::zeros(n),
        l2: 0.0,
        l2perp: 0.0,
        rperp_scalar: 0.0,
        flux1: vec![0.0; n],
        flux2: vec![0.0; n],
    }
}

fn raise_all_indices(riem: &Tensor4, ginv: &DMatrix<f64>) -> Tensor4 {
    let n = riem.n;
    let mut cur = riem.clone();
    for slot in 0..4 {
        let mut next = Tensor4::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let mut s = 0.0;
                        for r in 0..n {
                            let v = match slot {
                                0 => cur.get(r, j, k, l),
                                1 => cur.get(i, r, k, l),
                                2 => cur.get(i, j, r, l),
                                _ => cur.get(i, j, k, r),
                            };
                            let gi = match slot {
                                0 => ginv[(i, r)],
                                1 => ginv[(j, r)],
                                2 => ginv[(k, r)],
                                _ => ginv[(l, r)],
                            };
                            s += gi * v;
                        }
                        next.set(i, j, k, l, s);
                    }
                }
            }
        }
        cur = next;
    }
    cur
}

/// Fill P1^ijkl and P2^ijkl (all indices raised).
pub fn p_tensors(cd: &mut CurvatureData, fo: &FirstOrderData) {
    let n = cd.n;
    let gi = &fo.ginv;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let antis = gi[(i, k)] * gi[(j, l)] - gi[(i, l)] * gi[(j, k)];
                    cd.p1_uuuu.set(i, j, k, l, 0.5 * antis);
                    let p2 = cd.riem_uuuu.get(i, j, k, l)
                        + cd.ric_uu[(j, k)] * gi[(i, l)]
                        - cd.ric_uu[(j, l)] * gi[(i, k)]
                        - cd.ric_uu[(i, k)] * gi[(j, l)]
                        + cd.ric_uu[(i, l)] * gi[(j, k)]
                        + 0.5 * cd.scalar * antis;
                    cd.p2_uuuu.set(i, j, k, l, p2);
                }
            }
        }
    }
}

/// `op_scale` is the non-cancelling magnitude of the contraction, so
/// `rel_tol * 1e-3 * op_scale` stays three orders above the f64 rounding
/// noise of the sum while remaining far below any index-bug signal.
fn path_check(quantity: &str, a: f64, b: f64, rel_tol: f64, op_scale: f64) -> Result<f64> {
    let scale = a.abs().max(b.abs()) + 1e-3 * op_scale + 1e-12;
    let diff = (a - b).abs();
    if diff > rel_tol * scale {
        return Err(Error::PathMismatch {
            quantity: quantity.into(),
            a,
            b,
            rel: diff / scale,
            tol: rel_tol,
        });
    }
    Ok(a)
}

/// Gauss-Bonnet curvature L2 = P2^ijkl R_ijkl, checked against the second
/// route 2 P2^ijkl U^ab f_ik^a f_jl^b.
pub fn gauss_bonnet_l2(jet: &MapJet3, fo: &FirstOrderData, cd: &mut CurvatureData) -> Result<f64> {
    let (n, m) = (cd.n, cd.m);
    let direct = cd.p2_uuuu.full_contract(&cd.riem_dddd);

    let hess: Vec<DMatrix<f64>> = (0..m).map(|a| hessian(jet, a)).collect();
    let kmat: Vec<DMatrix<f64>> = (0..m)
        .map(|b| {
            let mut acc = DMatrix::zeros(n, n);
            for a in 0..m {
                acc += &hess[a] * fo.u_inv[(a, b)];
            }
            acc
        })
        .collect();
    let mut terms = Vec::with_capacity(n * n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut s = 0.0;
                    for b in 0..m {
                        s += kmat[b][(i, k)] * hess[b][(j, l)];
                    }
                    terms.push(2.0 * cd.p2_uuuu.get(i, j, k, l) * s);
                }
            }
        }
    }
    let via_jets = pairwise_sum(&terms);

    // Noise scale: both sums cancel inside P2's assembly, whose pieces are
    // of size ||P|| ||Riem||, not of the size of the final value.
    let op_scale = cd.p2_uuuu.frobenius_norm() * cd.riem_dddd.frobenius_norm()
        + terms.iter().map(|t| t.abs()).sum::<f64>();
    cd.l2 = path_check("L2", direct, via_jets, L2_PATH_TOL, op_scale)?;
    Ok(cd.l2)
}

/// Gradient of f^a as a tangent-component vector: (grad f^a)^i = g^ij f_j^a.
pub fn gradient(jet: &MapJet3, fo: &FirstOrderData, alpha: usize) -> DVector<f64> {
    let n = jet.n;
    let d1 = DVector::from_fn(n, |i, _| jet.d1(alpha, i));
    &fo.ginv * d1
}

/// The contraction intermediate
/// T_ijkl = U^bg f_s^b f_k^a (f_js^g f_il^a - f_il^g f_js^a).
///
/// Only used inside the L2perp cross-check; the paper introduces it purely
/// as a bookkeeping device, so it is not stored on [`CurvatureData`].
/// Deliberately the plain quadruple sum: when the shape operators are
/// proportional the bracket cancels term by term, and this form keeps that
/// cancellation exact in floating point.
pub fn t_tensor(jet: &MapJet3, fo: &FirstOrderData) -> Tensor4 {
    let (n, m) = (jet.n, jet.m);
    let mut t = Tensor4::zeros(n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut acc = 0.0;
                    for a in 0..m {
                        for b in 0..m {
                            for g in 0..m {
                                let u = fo.u_inv[(b, g)];
                                for s in 0..n {
                                    acc += u
                                        * jet.d1(b, s)
                                        * jet.d1(a, k)
                                        * (jet.d2(g, j, s) * jet.d2(a, i, l)
                                            - jet.d2(g, i, l) * jet.d2(a, j, s));
                                }
                            }
                        }
                    }
                    t.set(i, j, k, l, acc);
                }
            }
        }
    }
    t
}

/// L2perp via the assembled operator expression, cross-checked against the
/// independent contraction 2 P2^ijkl T_ijkl.
pub fn l2_perp(jet: &MapJet3, fo: &FirstOrderData, cd: &mut CurvatureData) -> Result<f64> {
    let m = cd.m;
    if m == 1 {
        // Codimension one: every normal-bundle operator vanishes identically.
        cd.l2perp = 0.0;
        return Ok(0.0);
    }

    let grads: Vec<DVector<f64>> = (0..m).map(|a| gradient(jet, fo, a)).collect();
    let mut half_op = 0.0;
    let mut op_abs = 0.0;
    let mut add = |acc: &mut f64, term: f64| {
        *acc += term;
        op_abs += term.abs();
    };
    for a in 0..m {
        for g in 0..m {
            let na_g = &cd.rperp[a * m + g];
            // + U^{mu nu} < (A^mu (A^nu Rperp_ag + Rperp_ng A^a - Rperp_na A^g)
            //              + tr(A^a A^mu) Rperp_gn) grad f^a, grad f^g >
            for mu in 0..m {
                for nu in 0..m {
                    let c = fo.u_inv[(mu, nu)];
                    if c == 0.0 {
                        continue;
                    }
                    let inner_op = &cd.shape[nu] * na_g + &cd.rperp[nu * m + g] * &cd.shape[a]
                        - &cd.rperp[nu * m + a] * &cd.shape[g];
                    let op = &cd.shape[mu] * inner_op
                        + &cd.rperp[g * m + nu] * (&cd.shape[a] * &cd.shape[mu]).trace();
                    add(&mut half_op, c * metric_inner(&fo.g, &(op * &grads[a]), &grads[g]));
                }
            }
            // - < (2 Rc Rperp_ag + Tperp_g A^a + A^a Tperp_g) grad f^a, grad f^g >
            let op2 = &cd.rc * na_g * 2.0
                + &cd.tperp[g] * &cd.shape[a]
                + &cd.shape[a] * &cd.tperp[g];
            add(&mut half_op, -metric_inner(&fo.g, &(op2 * &grads[a]), &grads[g]));
            // + (tr A^a) < Tperp_g grad f^a, grad f^g >
            add(
                &mut half_op,
                cd.shape[a].trace() * metric_inner(&fo.g, &(&cd.tperp[g] * &grads[a]), &grads[g]),
            );
            // + R/2 < Rperp_ag grad f^a, grad f^g >
            add(
                &mut half_op,
                0.5 * cd.scalar * metric_inner(&fo.g, &(na_g * &grads[a]), &grads[g]),
            );
        }
    }
    let operator_path = 2.0 * half_op;

    let t = t_tensor(jet, fo);
    let contraction_path = 2.0 * cd.p2_uuuu.full_contract(&t);

    let op_scale =
        2.0 * (cd.p2_uuuu.frobenius_norm() * t.frobenius_norm() + op_abs);
    cd.l2perp = path_check(
        "L2perp",
        operator_path,
        contraction_path,
        L2PERP_PATH_TOL,
        op_scale,
    )?;
    Ok(cd.l2perp)
}

/// Rperp scalar <Rperp_ag (grad f^a), grad f^g>; zero in codimension one
/// and whenever the normal bundle is flat.
pub fn r_perp_scalar(jet: &MapJet3, fo: &FirstOrderData, cd: &mut CurvatureData) -> f64 {
    let m = cd.m;
    if m == 1 {
        cd.rperp_scalar = 0.0;
        return 0.0;
    }
    let grads: Vec<DVector<f64>> = (0..m).map(|a| gradient(jet, fo, a)).collect();
    let mut s = 0.0;
    for a in 0..m {
        for g in 0..m {
            s += metric_inner(&fo.g, &(&cd.rperp[a * m + g] * &grads[a]), &grads[g]);
        }
    }
    cd.rperp_scalar = s;
    s
}

/// Flux vectors F_a^i = P_a^ijkl d_l g_jk.
pub fn flux_vectors(cd: &mut CurvatureData, fo: &FirstOrderData) -> (Vec<f64>, Vec<f64>) {
    let n = cd.n;
    for i in 0..n {
        let mut terms1 = Vec::with_capacity(n * n * n);
        let mut terms2 = Vec::with_capacity(n * n * n);
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let d = fo.dg.get(l, j, k);
                    terms1.push(cd.p1_uuuu.get(i, j, k, l) * d);
                    terms2.push(cd.p2_uuuu.get(i, j, k, l) * d);
                }
            }
        }
        cd.flux1[i] = pairwise_sum(&terms1);
        cd.flux2[i] = pairwise_sum(&terms2);
    }
    (cd.flux1.clone(), cd.flux2.clone())
}

/// Jet, metric data and fully populated curvature data at one point.
#[derive(Debug, Clone)]
pub struct PointData {
    pub jet: MapJet3,
    pub fo: FirstOrderData,
    pub cd: CurvatureData,
}

impl PointData {
    /// Run the whole pipeline at `x`: jets, metric, curvature, P-tensors,
    /// the dual-path scalars and the flux vectors.
    pub fn compute(map: &crate::expr::MapSpec, x: &[f64]) -> Result<PointData> {
        let jet = crate::jet::eval_jet3(map, x)?;
        Self::from_jet(jet)
    }

    pub fn from_jet(jet: MapJet3) -> Result<PointData> {
        let fo = first_order(&jet)?;
        let mut cd = curvature(&jet, &fo);
        p_tensors(&mut cd, &fo);
        gauss_bonnet_l2(&jet, &fo, &mut cd)?;
        l2_perp(&jet, &fo, &mut cd)?;
        r_perp_scalar(&jet, &fo, &mut cd);
        flux_vectors(&mut cd, &fo);
        Ok(PointData { jet, fo, cd })
    }

    /// F1 + alpha * F2, the Einstein-Gauss-Bonnet flux vector.
    pub fn egb_flux(&self, alpha: f64) -> Vec<f64> {
        self.cd
            .flux1
            .iter()
            .zip(&self.cd.flux2)
            .map(|(f1, f2)| f1 + alpha * f2)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_map, Expr, MapSpec};
    use crate::jet::eval_jet3;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn jet_at(src: &str, n: usize, m: usize, x: &[f64]) -> MapJet3 {
        let map = parse_map(src, n, m).unwrap();
        eval_jet3(&map, x).unwrap()
    }

    #[test]
    fn constant_map_is_flat() {
        let jet = jet_at("0", 5, 1, &[0.3, -0.1, 0.9, 2.0, -1.5]);
        let fo = first_order(&jet).unwrap();
        assert_eq!(fo.g, DMatrix::identity(5, 5));
        assert_eq!(fo.u_mat, DMatrix::identity(1, 1));
        assert_eq!(fo.sqrt_g, 1.0);
        assert!(fo.gamma.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_graph_metric_matches_hand_value() {
        let jet = jet_at("x1 + 2*x2", 2, 1, &[0.0, 0.0]);
        let fo = first_order(&jet).unwrap();
        assert_relative_eq!(fo.g[(0, 0)], 2.0, epsilon = 1e-15);
        assert_relative_eq!(fo.g[(0, 1)], 2.0, epsilon = 1e-15);
        assert_relative_eq!(fo.g[(1, 1)], 5.0, epsilon = 1e-15);
        assert_relative_eq!(fo.sqrt_g, 6.0_f64.sqrt(), epsilon = 1e-14);
    }

    fn random_quadratic_map(n: usize, m: usize, rng: &mut StdRng) -> MapSpec {
        let mut exprs = Vec::new();
        for _ in 0..m {
            let mut e = Expr::num(rng.gen_range(-0.5..0.5));
            for i in 0..n {
                e = Expr::add(
                    e,
                    Expr::mul(Expr::num(rng.gen_range(-0.5..0.5)), Expr::var(i)),
                );
                for j in i..n {
                    e = Expr::add(
                        e,
                        Expr::mul(
                            Expr::num(rng.gen_range(-0.3..0.3)),
                            Expr::mul(Expr::var(i), Expr::var(j)),
                        ),
                    );
                }
            }
            exprs.push(e);
        }
        MapSpec::from_exprs(n, exprs).unwrap()
    }

    #[test]
    fn closed_form_inverse_matches_linear_solve() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let map = random_quadratic_map(5, 2, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let jet = eval_jet3(&map, &x).unwrap();
            let fo = first_order(&jet).unwrap();
            let solved = fo.g.clone().try_inverse().unwrap();
            let diff = (&fo.ginv - &solved).norm() / solved.norm();
            assert!(diff < 1e-12, "inverse paths disagree: {diff}");
            // U-relation: delta_gb = U^gb + U^ag <Df^a, Df^b>
            let dfdf = &fo.u_mat - DMatrix::identity(2, 2);
            let recon = &fo.u_inv + &fo.u_inv * dfdf;
            assert!((recon - DMatrix::identity(2, 2)).norm() < 1e-12);
        }
    }

    #[test]
    fn christoffel_matches_metric_derivative_definition() {
        // Gamma_ij^k = g^kl (d_i g_jl + d_j g_il - d_l g_ij) / 2
        let mut rng = StdRng::seed_from_u64(11);
        let map = random_quadratic_map(4, 2, &mut rng);
        let x = [0.4, -0.2, 0.7, 0.1];
        let jet = eval_jet3(&map, &x).unwrap();
        let fo = first_order(&jet).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    let mut s = 0.0;
                    for l in 0..4 {
                        s += fo.ginv[(k, l)]
                            * (fo.dg.get(i, j, l) + fo.dg.get(j, i, l) - fo.dg.get(l, i, j));
                    }
                    s *= 0.5;
                    assert_relative_eq!(fo.gamma.get(i, j, k), s, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn linear_map_has_zero_curvature() {
        let jet = jet_at("x1 - 2*x3; 0.5*x2", 4, 2, &[0.1, 0.2, 0.3, 0.4]);
        let fo = first_order(&jet).unwrap();
        let cd = curvature(&jet, &fo);
        assert!(cd.riem_dddd.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(cd.scalar, 0.0);
    }

    #[test]
    fn paraboloid_at_origin_has_constant_curvature() {
        // f = |x|^2 / 2 in n = 5: at x = 0, R_ijkl = d_ik d_jl - d_il d_jk,
        // R = n(n-1) = 20, L2 = n(n-1)(n-2)(n-3) = 120.
        let src = "0.5*(x1^2 + x2^2 + x3^2 + x4^2 + x5^2)";
        let jet = jet_at(src, 5, 1, &[0.0; 5]);
        let fo = first_order(&jet).unwrap();
        let mut cd = curvature(&jet, &fo);
        for i in 0..5 {
            for j in 0..5 {
                for k in 0..5 {
                    for l in 0..5 {
                        let expect = ((i == k && j == l) as i32 - (i == l && j == k) as i32) as f64;
                        assert_relative_eq!(cd.riem_dddd.get(i, j, k, l), expect, epsilon = 1e-14);
                    }
                }
            }
        }
        assert_relative_eq!(cd.scalar, 20.0, epsilon = 1e-12);
        p_tensors(&mut cd, &fo);
        let l2 = gauss_bonnet_l2(&jet, &fo, &mut cd).unwrap();
        assert_relative_eq!(l2, 120.0, epsilon = 1e-10);
    }

    /// Brute force L2 = sum P2^ijkl R_ijkl with plain nested loops.
    fn l2_naive(cd: &CurvatureData) -> f64 {
        let n = cd.n;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        acc += cd.p2_uuuu.get(i, j, k, l) * cd.riem_dddd.get(i, j, k, l);
                    }
                }
            }
        }
        acc
    }

    fn generic_codim2_map() -> MapSpec {
        parse_map(
            "0.4*sin(x1)*cos(x2) + 0.3*x3*x4 + 0.1*x5^2; \
             0.5*exp(-0.2*x5^2)*x1 + 0.25*x2^2 - 0.2*sin(x3)*x4",
            5,
            2,
        )
        .unwrap()
    }

    #[test]
    fn dual_paths_agree_at_random_points() {
        let map = generic_codim2_map();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let pd = PointData::compute(&map, &x).unwrap();
            assert_relative_eq!(pd.cd.l2, l2_naive(&pd.cd), max_relative = 1e-10);
        }
    }

    #[test]
    fn p2_has_riemann_symmetries() {
        let map = generic_codim2_map();
        let pd = PointData::compute(&map, &[0.9, -0.4, 0.3, 1.1, -0.7]).unwrap();
        let p = &pd.cd.p2_uuuu;
        let scale = p.frobenius_norm();
        for i in 0..5 {
            for j in 0..5 {
                for k in 0..5 {
                    for l in 0..5 {
                        let v = p.get(i, j, k, l);
                        assert!((v + p.get(j, i, k, l)).abs() <= 1e-12 * scale);
                        assert!((v + p.get(i, j, l, k)).abs() <= 1e-12 * scale);
                        assert!((v - p.get(k, l, i, j)).abs() <= 1e-12 * scale);
                    }
                }
            }
        }
    }

    #[test]
    fn riemann_pair_swap_symmetry() {
        let map = generic_codim2_map();
        let pd = PointData::compute(&map, &[0.2, 0.8, -0.9, 0.5, 0.1]).unwrap();
        let r = &pd.cd.riem_dddd;
        let scale = r.frobenius_norm();
        for i in 0..5 {
            for j in 0..5 {
                for k in 0..5 {
                    for l in 0..5 {
                        assert!((r.get(i, j, k, l) - r.get(k, l, i, j)).abs() <= 1e-12 * scale);
                    }
                }
            }
        }
    }

    #[test]
    fn rperp_is_antisymmetric_in_both_senses() {
        let map = generic_codim2_map();
        let pd = PointData::compute(&map, &[0.5, -0.3, 0.8, -0.2, 0.6]).unwrap();
        let m = 2;
        for a in 0..m {
            for b in 0..m {
                let nab = &pd.cd.rperp[a * m + b];
                let nba = &pd.cd.rperp[b * m + a];
                assert!((nab + nba).norm() <= 1e-12 * (1.0 + nab.norm()));
                // With one index lowered by g the operator is antisymmetric.
                let lowered = &pd.fo.g * nab;
                assert!(
                    (&lowered + lowered.transpose()).norm() <= 1e-10 * (1.0 + lowered.norm())
                );
            }
        }
    }

    #[test]
    fn commutation_identity_holds() {
        // A^a Rc - Rc A^a = Tperp_a at every sampled point.
        let map = generic_codim2_map();
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.2..1.2)).collect();
            let pd = PointData::compute(&map, &x).unwrap();
            for a in 0..2 {
                let comm = &pd.cd.shape[a] * &pd.cd.rc - &pd.cd.rc * &pd.cd.shape[a];
                let resid = (&comm - &pd.cd.tperp[a]).norm();
                let scale = pd.cd.shape[a].norm() * pd.cd.rc.norm() + pd.cd.tperp[a].norm();
                assert!(resid <= 1e-10 * scale, "commutation off: {resid} vs {scale}");
            }
        }
    }

    #[test]
    fn proportional_profiles_have_flat_normal_bundle() {
        // f = (a phi(|x|^2), b phi(|x|^2)): shape operators proportional.
        let src = "0.6*(1 + x1^2 + x2^2 + x3^2 + x4^2 + x5^2)^-0.25; \
                   0.45*(1 + x1^2 + x2^2 + x3^2 + x4^2 + x5^2)^-0.25";
        let map = parse_map(src, 5, 2).unwrap();
        let pd = PointData::compute(&map, &[1.0, 0.5, -0.8, 0.2, 1.4]).unwrap();
        for op in &pd.cd.rperp {
            assert!(op.norm() <= 1e-12, "normal curvature should vanish");
        }
        assert!(pd.cd.l2perp.abs() <= 1e-12);
        assert!(pd.cd.rperp_scalar.abs() <= 1e-12);
        // but the tangential curvature is honest
        assert!(pd.cd.l2.abs() > 1e-12);
    }

    #[test]
    fn codimension_one_normal_quantities_vanish() {
        let map = parse_map("0.5*sin(x1)*x2 + 0.3*exp(-x3^2)", 5, 1).unwrap();
        let pd = PointData::compute(&map, &[0.7, -0.2, 0.4, 1.0, -0.6]).unwrap();
        assert_eq!(pd.cd.l2perp, 0.0);
        assert_eq!(pd.cd.rperp_scalar, 0.0);
        assert!(pd.cd.rperp.iter().all(|op| op.norm() == 0.0));
    }

    #[test]
    fn l2perp_nonzero_on_generic_codim2_map() {
        let map = generic_codim2_map();
        let pd = PointData::compute(&map, &[1.1, -0.6, 0.9, 0.4, -1.2]).unwrap();
        assert!(pd.cd.l2perp.abs() > 1e-8, "L2perp = {}", pd.cd.l2perp);
    }

    #[test]
    fn flux_matches_naive_contraction() {
        let map = generic_codim2_map();
        let pd = PointData::compute(&map, &[0.3, 0.9, -0.5, 0.7, -0.1]).unwrap();
        for i in 0..5 {
            let mut f1 = 0.0;
            let mut f2 = 0.0;
            for j in 0..5 {
                for k in 0..5 {
                    for l in 0..5 {
                        f1 += pd.cd.p1_uuuu.get(i, j, k, l) * pd.fo.dg.get(l, j, k);
                        f2 += pd.cd.p2_uuuu.get(i, j, k, l) * pd.fo.dg.get(l, j, k);
                    }
                }
            }
            assert_relative_eq!(pd.cd.flux1[i], f1, epsilon = 1e-12, max_relative = 1e-10);
            assert_relative_eq!(pd.cd.flux2[i], f2, epsilon = 1e-12, max_relative = 1e-10);
        }
    }

    #[test]
    fn flat_point_has_zero_flux_and_p2() {
        let map = parse_map("x1 + x2; x3 - 0.5*x4", 5, 2).unwrap();
        let pd = PointData::compute(&map, &[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert!(pd.cd.p2_uuuu.as_slice().iter().all(|&v| v == 0.0));
        assert!(pd.cd.flux1.iter().all(|&v| v == 0.0));
        assert!(pd.cd.flux2.iter().all(|&v| v == 0.0));
        // P1 at a flat point: the (dd - dd)/2 pattern in g^ij.
        for i in 0..5 {
            for j in 0..5 {
                let expect = 0.5
                    * (pd.fo.ginv[(i, i)] * pd.fo.ginv[(j, j)]
                        - pd.fo.ginv[(i, j)] * pd.fo.ginv[(j, i)]);
                assert_relative_eq!(pd.cd.p1_uuuu.get(i, j, i, j), expect, epsilon = 1e-14);
            }
        }
    }
}
