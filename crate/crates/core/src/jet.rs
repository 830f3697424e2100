//! Forward-mode derivative jets of order 3.
//!
//! A [`Jet3`] carries the value and all partial derivatives up to third
//! order of one scalar expression at one point. Propagation through the
//! expression tree uses truncated Taylor (Leibniz/Faà di Bruno) rules.
//! Mixed-derivative arrays are filled on canonical index triples
//! (i <= j <= k) and mirrored, so the symmetry of `d2` and `d3` under
//! index permutations is exact by construction, not up to rounding.

use crate::error::{Error, Result};
use crate::expr::{Expr, Func, MapSpec};

/// Scalar jet: value plus derivatives up to order 3 in n variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet3 {
    pub n: usize,
    pub v: f64,
    d1: Vec<f64>,
    d2: Vec<f64>,
    d3: Vec<f64>,
}

impl Jet3 {
    pub fn constant(n: usize, v: f64) -> Jet3 {
        Jet3 {
            n,
            v,
            d1: vec![0.0; n],
            d2: vec![0.0; n * n],
            d3: vec![0.0; n * n * n],
        }
    }

    /// The coordinate jet x_i: unit first derivative in slot i.
    pub fn variable(n: usize, i: usize, value: f64) -> Jet3 {
        let mut jet = Jet3::constant(n, value);
        jet.d1[i] = 1.0;
        jet
    }

    #[inline]
    pub fn d1(&self, i: usize) -> f64 {
        self.d1[i]
    }

    #[inline]
    pub fn d2(&self, i: usize, j: usize) -> f64 {
        self.d2[i * self.n + j]
    }

    #[inline]
    pub fn d3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.d3[(i * self.n + j) * self.n + k]
    }

    fn set_d2_sym(&mut self, i: usize, j: usize, v: f64) {
        let n = self.n;
        self.d2[i * n + j] = v;
        self.d2[j * n + i] = v;
    }

    fn set_d3_sym(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let n = self.n;
        for (a, b, c) in [
            (i, j, k),
            (i, k, j),
            (j, i, k),
            (j, k, i),
            (k, i, j),
            (k, j, i),
        ] {
            self.d3[(a * n + b) * n + c] = v;
        }
    }

    fn add(&self, rhs: &Jet3) -> Jet3 {
        let mut out = self.clone();
        out.v += rhs.v;
        for (a, b) in out.d1.iter_mut().zip(&rhs.d1) {
            *a += b;
        }
        for (a, b) in out.d2.iter_mut().zip(&rhs.d2) {
            *a += b;
        }
        for (a, b) in out.d3.iter_mut().zip(&rhs.d3) {
            *a += b;
        }
        out
    }

    fn sub(&self, rhs: &Jet3) -> Jet3 {
        let mut out = self.clone();
        out.v -= rhs.v;
        for (a, b) in out.d1.iter_mut().zip(&rhs.d1) {
            *a -= b;
        }
        for (a, b) in out.d2.iter_mut().zip(&rhs.d2) {
            *a -= b;
        }
        for (a, b) in out.d3.iter_mut().zip(&rhs.d3) {
            *a -= b;
        }
        out
    }

    fn neg(&self) -> Jet3 {
        let mut out = self.clone();
        out.v = -out.v;
        for a in &mut out.d1 {
            *a = -*a;
        }
        for a in &mut out.d2 {
            *a = -*a;
        }
        for a in &mut out.d3 {
            *a = -*a;
        }
        out
    }

    fn mul(&self, rhs: &Jet3) -> Jet3 {
        let n = self.n;
        let (u, w) = (self, rhs);
        let mut out = Jet3::constant(n, u.v * w.v);
        for i in 0..n {
            out.d1[i] = u.d1(i) * w.v + u.v * w.d1(i);
        }
        for i in 0..n {
            for j in i..n {
                let v = u.d2(i, j) * w.v
                    + u.d1(i) * w.d1(j)
                    + u.d1(j) * w.d1(i)
                    + u.v * w.d2(i, j);
                out.set_d2_sym(i, j, v);
            }
        }
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    let v = u.d3(i, j, k) * w.v
                        + u.d2(i, j) * w.d1(k)
                        + u.d2(i, k) * w.d1(j)
                        + u.d2(j, k) * w.d1(i)
                        + u.d1(i) * w.d2(j, k)
                        + u.d1(j) * w.d2(i, k)
                        + u.d1(k) * w.d2(i, j)
                        + u.v * w.d3(i, j, k);
                    out.set_d3_sym(i, j, k, v);
                }
            }
        }
        out
    }

    /// Composition with a scalar function given its derivatives at `self.v`.
    fn compose(&self, h: [f64; 4]) -> Jet3 {
        let n = self.n;
        let u = self;
        let [h0, h1, h2, h3] = h;
        let mut out = Jet3::constant(n, h0);
        for i in 0..n {
            out.d1[i] = h1 * u.d1(i);
        }
        for i in 0..n {
            for j in i..n {
                let v = h2 * u.d1(i) * u.d1(j) + h1 * u.d2(i, j);
                out.set_d2_sym(i, j, v);
            }
        }
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    let v = h3 * u.d1(i) * u.d1(j) * u.d1(k)
                        + h2 * (u.d2(i, j) * u.d1(k)
                            + u.d2(i, k) * u.d1(j)
                            + u.d2(j, k) * u.d1(i))
                        + h1 * u.d3(i, j, k);
                    out.set_d3_sym(i, j, k, v);
                }
            }
        }
        out
    }

    fn is_constant(&self) -> bool {
        self.d1.iter().all(|&v| v == 0.0)
            && self.d2.iter().all(|&v| v == 0.0)
            && self.d3.iter().all(|&v| v == 0.0)
    }

    fn is_finite(&self) -> bool {
        self.v.is_finite()
            && self.d1.iter().all(|v| v.is_finite())
            && self.d2.iter().all(|v| v.is_finite())
            && self.d3.iter().all(|v| v.is_finite())
    }
}

/// Jet of a whole map: per-component values and derivatives to order 3.
#[derive(Debug, Clone, PartialEq)]
pub struct MapJet3 {
    pub n: usize,
    pub m: usize,
    pub point: Vec<f64>,
    pub value: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    d3: Vec<f64>,
}

impl MapJet3 {
    #[inline]
    pub fn d1(&self, alpha: usize, i: usize) -> f64 {
        self.d1[alpha * self.n + i]
    }

    #[inline]
    pub fn d2(&self, alpha: usize, i: usize, j: usize) -> f64 {
        self.d2[(alpha * self.n + i) * self.n + j]
    }

    #[inline]
    pub fn d3(&self, alpha: usize, i: usize, j: usize, k: usize) -> f64 {
        self.d3[((alpha * self.n + i) * self.n + j) * self.n + k]
    }
}

struct EvalCtx<'a> {
    vars: Vec<Jet3>,
    point: &'a [f64],
    expr_index: usize,
}

impl<'a> EvalCtx<'a> {
    fn domain(&self, detail: impl Into<String>) -> Error {
        Error::Domain {
            expr_index: self.expr_index,
            point: self.point.to_vec(),
            detail: detail.into(),
        }
    }

    fn eval(&self, expr: &Expr) -> Result<Jet3> {
        let n = self.vars[0].n;
        match expr {
            Expr::Num(v) => Ok(Jet3::constant(n, *v)),
            Expr::Var(i) => Ok(self.vars[*i].clone()),
            Expr::Add(a, b) => Ok(self.eval(a)?.add(&self.eval(b)?)),
            Expr::Sub(a, b) => Ok(self.eval(a)?.sub(&self.eval(b)?)),
            Expr::Mul(a, b) => Ok(self.eval(a)?.mul(&self.eval(b)?)),
            Expr::Div(a, b) => {
                let num = self.eval(a)?;
                let den = self.eval(b)?;
                if den.v == 0.0 {
                    return Err(self.domain("division by zero"));
                }
                Ok(num.mul(&self.recip(&den)))
            }
            Expr::Neg(a) => Ok(self.eval(a)?.neg()),
            Expr::Pow(a, b) => self.eval_pow(a, b),
            Expr::Call(f, a) => {
                let u = self.eval(a)?;
                self.apply(*f, &u)
            }
        }
    }

    fn recip(&self, u: &Jet3) -> Jet3 {
        let v = u.v;
        u.compose([1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v), -6.0 / (v * v * v * v)])
    }

    fn eval_pow(&self, base: &Expr, exponent: &Expr) -> Result<Jet3> {
        let u = self.eval(base)?;
        let e = self.eval(exponent)?;
        if e.is_constant() {
            let c = e.v;
            let rounded = c.round();
            if (c - rounded).abs() < 1e-12 && rounded.abs() < 2.0_f64.powi(31) {
                return self.powi(&u, rounded as i64);
            }
            // Real exponent: u must be strictly positive for a C^3 jet.
            if u.v <= 0.0 {
                return Err(self.domain(format!(
                    "non-integer power of non-positive base {}",
                    u.v
                )));
            }
            let h0 = u.v.powf(c);
            let h1 = c * u.v.powf(c - 1.0);
            let h2 = c * (c - 1.0) * u.v.powf(c - 2.0);
            let h3 = c * (c - 1.0) * (c - 2.0) * u.v.powf(c - 3.0);
            return Ok(u.compose([h0, h1, h2, h3]));
        }
        // Variable exponent: u^e = exp(e * log u).
        if u.v <= 0.0 {
            return Err(self.domain(format!(
                "variable power of non-positive base {}",
                u.v
            )));
        }
        let log_u = self.apply(Func::Log, &u)?;
        self.apply(Func::Exp, &e.mul(&log_u))
    }

    fn powi(&self, u: &Jet3, k: i64) -> Result<Jet3> {
        if k < 0 {
            if u.v == 0.0 {
                return Err(self.domain("zero raised to a negative power"));
            }
            let pos = self.powi(u, -k)?;
            return Ok(self.recip(&pos));
        }
        let n = u.n;
        let mut acc = Jet3::constant(n, 1.0);
        let mut base = u.clone();
        let mut exp = k as u64;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc.mul(&base);
            }
            exp >>= 1;
            if exp > 0 {
                base = base.mul(&base);
            }
        }
        Ok(acc)
    }

    fn apply(&self, f: Func, u: &Jet3) -> Result<Jet3> {
        let v = u.v;
        let h = match f {
            Func::Sin => [v.sin(), v.cos(), -v.sin(), -v.cos()],
            Func::Cos => [v.cos(), -v.sin(), -v.cos(), v.sin()],
            Func::Exp => {
                let e = v.exp();
                [e, e, e, e]
            }
            Func::Log => {
                if v <= 0.0 {
                    return Err(self.domain(format!("log of non-positive value {v}")));
                }
                [v.ln(), 1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v)]
            }
            Func::Sqrt => {
                if v <= 0.0 {
                    return Err(self.domain(format!("sqrt of non-positive value {v}")));
                }
                let s = v.sqrt();
                [
                    s,
                    0.5 / s,
                    -0.25 / (s * v),
                    0.375 / (s * v * v),
                ]
            }
            Func::Tanh => {
                let t = v.tanh();
                let sech2 = 1.0 - t * t;
                [
                    t,
                    sech2,
                    -2.0 * t * sech2,
                    sech2 * (6.0 * t * t - 2.0),
                ]
            }
            Func::Atan => {
                let w = 1.0 + v * v;
                [
                    v.atan(),
                    1.0 / w,
                    -2.0 * v / (w * w),
                    (6.0 * v * v - 2.0) / (w * w * w),
                ]
            }
        };
        Ok(u.compose(h))
    }
}

/// Evaluate all derivative jets of `map` at `x`. Pure function of (map, x).
pub fn eval_jet3(map: &MapSpec, x: &[f64]) -> Result<MapJet3> {
    assert_eq!(x.len(), map.n, "point dimension mismatch");
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite evaluation point {x:?}"
        )));
    }
    let n = map.n;
    let vars: Vec<Jet3> = (0..n).map(|i| Jet3::variable(n, i, x[i])).collect();
    let mut out = MapJet3 {
        n,
        m: map.m,
        point: x.to_vec(),
        value: Vec::with_capacity(map.m),
        d1: Vec::with_capacity(map.m * n),
        d2: Vec::with_capacity(map.m * n * n),
        d3: Vec::with_capacity(map.m * n * n * n),
    };
    for (alpha, expr) in map.exprs.iter().enumerate() {
        let ctx = EvalCtx {
            vars: vars.clone(),
            point: x,
            expr_index: alpha,
        };
        let jet = ctx.eval(expr)?;
        if !jet.is_finite() {
            return Err(ctx.domain("non-finite jet (overflow?)"));
        }
        out.value.push(jet.v);
        out.d1.extend_from_slice(&jet.d1);
        out.d2.extend_from_slice(&jet.d2);
        out.d3.extend_from_slice(&jet.d3);
    }
    Ok(out)
}

/// Evaluate only the value of an expression at `x` (same domain rules).
pub fn eval_value(expr: &Expr, x: &[f64]) -> Result<f64> {
    fn go(expr: &Expr, x: &[f64]) -> Result<f64> {
        let dom = |detail: String| Error::Domain {
            expr_index: 0,
            point: x.to_vec(),
            detail,
        };
        Ok(match expr {
            Expr::Num(v) => *v,
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => go(a, x)? + go(b, x)?,
            Expr::Sub(a, b) => go(a, x)? - go(b, x)?,
            Expr::Mul(a, b) => go(a, x)? * go(b, x)?,
            Expr::Div(a, b) => {
                let den = go(b, x)?;
                if den == 0.0 {
                    return Err(dom("division by zero".into()));
                }
                go(a, x)? / den
            }
            Expr::Neg(a) => -go(a, x)?,
            Expr::Pow(a, b) => {
                let base = go(a, x)?;
                let exp = go(b, x)?;
                let rounded = exp.round();
                if (exp - rounded).abs() < 1e-12 && rounded.abs() < 2.0_f64.powi(31) {
                    base.powi(rounded as i32)
                } else {
                    if base <= 0.0 {
                        return Err(dom(format!("non-integer power of non-positive base {base}")));
                    }
                    base.powf(exp)
                }
            }
            Expr::Call(f, a) => {
                let u = go(a, x)?;
                match f {
                    Func::Sin => u.sin(),
                    Func::Cos => u.cos(),
                    Func::Exp => u.exp(),
                    Func::Log => {
                        if u <= 0.0 {
                            return Err(dom(format!("log of non-positive value {u}")));
                        }
                        u.ln()
                    }
                    Func::Sqrt => {
                        if u < 0.0 {
                            return Err(dom(format!("sqrt of negative value {u}")));
                        }
                        u.sqrt()
                    }
                    Func::Tanh => u.tanh(),
                    Func::Atan => u.atan(),
                }
            }
        })
    }
    let v = go(expr, x)?;
    if !v.is_finite() {
        return Err(Error::Domain {
            expr_index: 0,
            point: x.to_vec(),
            detail: "non-finite value".into(),
        });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_map;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_jet_matches_hand_computation() {
        // f = x1^2 * x2 at (1, 2)
        let map = parse_map("x1^2 * x2", 2, 1).unwrap();
        let jet = eval_jet3(&map, &[1.0, 2.0]).unwrap();
        assert_eq!(jet.value[0], 2.0);
        assert_eq!(jet.d1(0, 0), 4.0);
        assert_eq!(jet.d1(0, 1), 1.0);
        assert_eq!(jet.d2(0, 0, 0), 4.0);
        assert_eq!(jet.d2(0, 0, 1), 2.0);
        assert_eq!(jet.d2(0, 1, 0), 2.0);
        assert_eq!(jet.d2(0, 1, 1), 0.0);
        assert_eq!(jet.d3(0, 0, 0, 1), 2.0);
        assert_eq!(jet.d3(0, 0, 0, 0), 0.0);
    }

    #[test]
    fn linear_map_has_zero_higher_jets() {
        let map = parse_map("3*x1 - 0.5*x2 + 1; x2 - x3", 3, 2).unwrap();
        let jet = eval_jet3(&map, &[0.3, -1.2, 2.0]).unwrap();
        for alpha in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(jet.d2(alpha, i, j), 0.0);
                    for k in 0..3 {
                        assert_eq!(jet.d3(alpha, i, j, k), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn substitution_example() {
        let map = parse_map("x1^2 * exp(-x2)", 2, 1).unwrap();
        let jet = eval_jet3(&map, &[1.0, 0.0]).unwrap();
        assert_eq!(jet.value[0], 1.0);
    }

    /// Central finite differences of the value give d1 to O(h^2); of d1 give
    /// d2; of d2 give d3. Halving h must shrink the residual by ~4.
    #[test]
    fn jets_match_finite_differences_at_second_order() {
        let map = parse_map(
            "sin(x1)*cos(x2) + exp(-x1*x2)*x2 + tanh(x1 - x2)",
            2,
            1,
        )
        .unwrap();
        let x = [0.7, -0.4];
        let jet = eval_jet3(&map, &x).unwrap();

        let res_at = |h: f64| -> f64 {
            let mut worst: f64 = 0.0;
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let jp = eval_jet3(&map, &xp).unwrap();
                let jm = eval_jet3(&map, &xm).unwrap();
                let fd1 = (jp.value[0] - jm.value[0]) / (2.0 * h);
                worst = worst.max((fd1 - jet.d1(0, i)).abs());
                for j in 0..2 {
                    let fd2 = (jp.d1(0, j) - jm.d1(0, j)) / (2.0 * h);
                    worst = worst.max((fd2 - jet.d2(0, i, j)).abs());
                    for k in 0..2 {
                        let fd3 = (jp.d2(0, j, k) - jm.d2(0, j, k)) / (2.0 * h);
                        worst = worst.max((fd3 - jet.d3(0, i, j, k)).abs());
                    }
                }
            }
            worst
        };

        let r1 = res_at(1e-3);
        let r2 = res_at(5e-4);
        assert!(r1 < 1e-5, "residual too large: {r1}");
        let ratio = r1 / r2;
        assert!((3.0..5.0).contains(&ratio), "order-2 ratio off: {ratio}");
    }

    #[test]
    fn radial_profile_jets_match_closed_form() {
        // f = (1 + |x|^2)^(-1/4) in n = 3, radial derivative closed form.
        let map = parse_map("(1 + x1^2 + x2^2 + x3^2)^-0.25", 3, 1).unwrap();
        let x = [0.6, -0.2, 1.1];
        let q: f64 = x.iter().map(|v| v * v).sum();
        let jet = eval_jet3(&map, &x).unwrap();
        assert_relative_eq!(jet.value[0], (1.0 + q).powf(-0.25), epsilon = 1e-14);
        for i in 0..3 {
            let expected = -0.5 * x[i] * (1.0 + q).powf(-1.25);
            assert_relative_eq!(jet.d1(0, i), expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn domain_errors_name_the_expression_and_point() {
        let map = parse_map("x1; log(x2)", 2, 2).unwrap();
        let err = eval_jet3(&map, &[1.0, -2.0]).unwrap_err();
        match err {
            Error::Domain {
                expr_index, point, ..
            } => {
                assert_eq!(expr_index, 1);
                assert_eq!(point, vec![1.0, -2.0]);
            }
            other => panic!("expected Domain, got {other:?}"),
        }
    }

    #[test]
    fn sqrt_at_zero_is_a_domain_error() {
        let map = parse_map("sqrt(x1)", 2, 1).unwrap();
        assert!(matches!(
            eval_jet3(&map, &[0.0, 1.0]).unwrap_err(),
            Error::Domain { .. }
        ));
    }

    #[test]
    fn division_by_zero_is_a_domain_error() {
        let map = parse_map("1/x1", 2, 1).unwrap();
        assert!(matches!(
            eval_jet3(&map, &[0.0, 1.0]).unwrap_err(),
            Error::Domain { .. }
        ));
    }

    #[test]
    fn integer_power_of_negative_base_is_fine() {
        let map = parse_map("x1^3", 2, 1).unwrap();
        let jet = eval_jet3(&map, &[-2.0, 0.0]).unwrap();
        assert_eq!(jet.value[0], -8.0);
        assert_eq!(jet.d1(0, 0), 12.0);
        assert_eq!(jet.d2(0, 0, 0), -12.0);
        assert_eq!(jet.d3(0, 0, 0, 0), 6.0);
    }

    #[test]
    fn variable_exponent_uses_exp_log() {
        let map = parse_map("x1^x2", 2, 1).unwrap();
        let jet = eval_jet3(&map, &[2.0, 3.0]).unwrap();
        assert_relative_eq!(jet.value[0], 8.0, epsilon = 1e-12);
        // d/dx2 (x1^x2) = x1^x2 * ln(x1)
        assert_relative_eq!(jet.d1(0, 1), 8.0 * 2.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn evaluation_is_bit_deterministic() {
        let map = parse_map("sin(x1)*exp(x2) - x1/x2 + atan(x1*x2)", 2, 1).unwrap();
        let x = [0.9, 1.7];
        let a = eval_jet3(&map, &x).unwrap();
        let b = eval_jet3(&map, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jet_symmetry_is_exact() {
        let map = parse_map(
            "exp(x1*x2)*sin(x3) + (x1 + 2*x3)^4 / (1 + x2^2)",
            3,
            1,
        )
        .unwrap();
        let jet = eval_jet3(&map, &[0.3, -0.8, 1.9]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(jet.d2(0, i, j).to_bits(), jet.d2(0, j, i).to_bits());
                for k in 0..3 {
                    let base = jet.d3(0, i, j, k).to_bits();
                    assert_eq!(base, jet.d3(0, i, k, j).to_bits());
                    assert_eq!(base, jet.d3(0, j, i, k).to_bits());
                    assert_eq!(base, jet.d3(0, k, j, i).to_bits());
                }
            }
        }
    }
}
