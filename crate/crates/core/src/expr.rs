//! Small expression language for maps f: R^n -> R^m.
//!
//! Grammar (whitespace insignificant, expressions separated by `;` or newline):
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := base ('^' exponent)?          exponent := factor
//! base   := number | ident | func '(' expr ')' | '(' expr ')' | '-' base
//! ```
//!
//! Identifiers are `x1..xn`, `r`, `pi`, `e`; functions are `sin`, `cos`,
//! `exp`, `log`, `sqrt`, `tanh`, `atan`. The builtin `r` expands at parse
//! time to `sqrt(x1^2 + ... + xn^2)`.

use crate::error::{Error, Result};

/// Unary functions admitted by the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Atan,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Atan => "atan",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            "tanh" => Some(Func::Tanh),
            "atan" => Some(Func::Atan),
            _ => None,
        }
    }
}

/// Expression tree. `Var(i)` is the zero-based i-th coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        Expr::Pow(Box::new(a), Box::new(b))
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::Neg(Box::new(a))
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        Expr::Call(f, Box::new(a))
    }

    /// Replace every `Var(i)` by `vars[i]`. Used to compose charts.
    pub fn substitute(&self, vars: &[Expr]) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(i) => vars[*i].clone(),
            Expr::Add(a, b) => Expr::add(a.substitute(vars), b.substitute(vars)),
            Expr::Sub(a, b) => Expr::sub(a.substitute(vars), b.substitute(vars)),
            Expr::Mul(a, b) => Expr::mul(a.substitute(vars), b.substitute(vars)),
            Expr::Div(a, b) => Expr::div(a.substitute(vars), b.substitute(vars)),
            Expr::Pow(a, b) => Expr::pow(a.substitute(vars), b.substitute(vars)),
            Expr::Neg(a) => Expr::neg(a.substitute(vars)),
            Expr::Call(f, a) => Expr::call(*f, a.substitute(vars)),
        }
    }

    /// Largest variable index mentioned, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.max_var().into_iter().chain(b.max_var()).max(),
            Expr::Neg(a) | Expr::Call(_, a) => a.max_var(),
        }
    }
}

/// Fully parenthesized printing; re-parsing the output yields an identical tree.
impl std::fmt::Display for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

/// A parsed map f: R^n -> R^m. Immutable after parsing, shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSpec {
    pub n: usize,
    pub m: usize,
    pub exprs: Vec<Expr>,
}

impl MapSpec {
    /// Parse `m` semicolon- or newline-separated expressions over `x1..xn`.
    pub fn parse(source: &str, n: usize, m: usize) -> Result<MapSpec> {
        parse_map(source, n, m)
    }

    /// Build a map from already constructed trees, validating variable indices.
    pub fn from_exprs(n: usize, exprs: Vec<Expr>) -> Result<MapSpec> {
        for e in &exprs {
            if let Some(i) = e.max_var() {
                if i >= n {
                    return Err(Error::UnknownIdentifier {
                        name: format!("x{}", i + 1),
                        pos: 0,
                    });
                }
            }
        }
        Ok(MapSpec {
            n,
            m: exprs.len(),
            exprs,
        })
    }

    pub fn pretty(&self) -> String {
        let parts: Vec<String> = self.exprs.iter().map(|e| e.to_string()).collect();
        parts.join("; ")
    }
}

/// Parse a user-supplied map source into a validated [`MapSpec`].
pub fn parse_map(source: &str, n: usize, m: usize) -> Result<MapSpec> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "domain dimension must be >= 2, got {n}"
        )));
    }
    let exprs = parse_expressions(source, n, 'x')?;
    if exprs.len() != m {
        return Err(Error::ArityMismatch {
            expected: m,
            found: exprs.len(),
        });
    }
    Ok(MapSpec { n, m, exprs })
}

/// Parse a single expression over `prefix`-named coordinates (`x1..` or `u1..`).
pub fn parse_single(source: &str, n: usize, prefix: char) -> Result<Expr> {
    let exprs = parse_expressions(source, n, prefix)?;
    if exprs.len() != 1 {
        return Err(Error::ArityMismatch {
            expected: 1,
            found: exprs.len(),
        });
    }
    Ok(exprs.into_iter().next().unwrap())
}

fn parse_expressions(source: &str, n: usize, prefix: char) -> Result<Vec<Expr>> {
    let mut exprs = Vec::new();
    let mut offset = 0usize;
    for segment in source.split(|c| c == ';' || c == '\n') {
        if !segment.trim().is_empty() {
            let mut p = Parser::new(segment, offset, n, prefix);
            let e = p.parse_expr()?;
            p.expect_end()?;
            exprs.push(e);
        }
        offset += segment.len() + 1;
    }
    Ok(exprs)
}

// ── tokenizer + recursive descent ──────────────────────────────

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

struct Parser<'a> {
    src: &'a [u8],
    /// Byte offset of this segment within the full source, for error spans.
    base: usize,
    pos: usize,
    n: usize,
    prefix: char,
}

impl<'a> Parser<'a> {
    fn new(segment: &'a str, base: usize, n: usize, prefix: char) -> Self {
        Parser {
            src: segment.as_bytes(),
            base,
            pos: 0,
            n,
            prefix,
        }
    }

    fn err(&self, pos: usize, msg: impl Into<String>) -> Error {
        Error::Syntax {
            pos: self.base + pos,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && (self.src[self.pos] as char).is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek_tok(&mut self) -> Result<(Tok, usize)> {
        let saved = self.pos;
        let t = self.next_tok()?;
        let at = self.pos;
        self.pos = saved;
        Ok((t.0, at.min(t.1)))
    }

    /// Returns the token and the byte position where it starts.
    fn next_tok(&mut self) -> Result<(Tok, usize)> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((Tok::End, start));
        }
        let c = self.src[self.pos] as char;
        let tok = match c {
            '+' => {
                self.pos += 1;
                Tok::Plus
            }
            '-' => {
                self.pos += 1;
                Tok::Minus
            }
            '*' => {
                self.pos += 1;
                Tok::Star
            }
            '/' => {
                self.pos += 1;
                Tok::Slash
            }
            '^' => {
                self.pos += 1;
                Tok::Caret
            }
            '(' => {
                self.pos += 1;
                Tok::LParen
            }
            ')' => {
                self.pos += 1;
                Tok::RParen
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let num = self.lex_number(start)?;
                Tok::Num(num)
            }
            _ if c.is_ascii_alphabetic() => {
                let mut end = self.pos;
                while end < self.src.len()
                    && ((self.src[end] as char).is_ascii_alphanumeric() || self.src[end] == b'_')
                {
                    end += 1;
                }
                let name = std::str::from_utf8(&self.src[self.pos..end])
                    .unwrap()
                    .to_string();
                self.pos = end;
                Tok::Ident(name)
            }
            _ => return Err(self.err(start, format!("unexpected character `{c}`"))),
        };
        Ok((tok, start))
    }

    fn lex_number(&mut self, start: usize) -> Result<f64> {
        let mut end = start;
        let bytes = self.src;
        while end < bytes.len() && (bytes[end] as char).is_ascii_digit() {
            end += 1;
        }
        if end < bytes.len() && bytes[end] == b'.' {
            end += 1;
            while end < bytes.len() && (bytes[end] as char).is_ascii_digit() {
                end += 1;
            }
        }
        // Exponent marker only when followed by a digit or signed digit,
        // so that `2*e` still lexes `e` as Euler's constant.
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut probe = end + 1;
            if probe < bytes.len() && (bytes[probe] == b'+' || bytes[probe] == b'-') {
                probe += 1;
            }
            if probe < bytes.len() && (bytes[probe] as char).is_ascii_digit() {
                end = probe;
                while end < bytes.len() && (bytes[end] as char).is_ascii_digit() {
                    end += 1;
                }
            }
        }
        let text = std::str::from_utf8(&bytes[start..end]).unwrap();
        let v: f64 = text
            .parse()
            .map_err(|_| self.err(start, format!("invalid number `{text}`")))?;
        self.pos = end;
        Ok(v)
    }

    fn expect_end(&mut self) -> Result<()> {
        let (tok, at) = self.next_tok()?;
        if tok != Tok::End {
            return Err(self.err(at, format!("trailing input starting with {tok:?}")));
        }
        Ok(())
    }

    fn parse_expr(&mut self) -> Result<Expr> {
        let mut acc = self.parse_term()?;
        loop {
            let (tok, _) = self.peek_tok()?;
            match tok {
                Tok::Plus => {
                    self.next_tok()?;
                    acc = Expr::add(acc, self.parse_term()?);
                }
                Tok::Minus => {
                    self.next_tok()?;
                    acc = Expr::sub(acc, self.parse_term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Expr> {
        let mut acc = self.parse_factor()?;
        loop {
            let (tok, _) = self.peek_tok()?;
            match tok {
                Tok::Star => {
                    self.next_tok()?;
                    acc = Expr::mul(acc, self.parse_factor()?);
                }
                Tok::Slash => {
                    self.next_tok()?;
                    acc = Expr::div(acc, self.parse_factor()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn parse_factor(&mut self) -> Result<Expr> {
        let base = self.parse_base()?;
        let (tok, _) = self.peek_tok()?;
        if tok == Tok::Caret {
            self.next_tok()?;
            let exponent = self.parse_factor()?;
            return Ok(Expr::pow(base, exponent));
        }
        Ok(base)
    }

    fn parse_base(&mut self) -> Result<Expr> {
        let (tok, at) = self.next_tok()?;
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Minus => Ok(Expr::neg(self.parse_base()?)),
            Tok::LParen => {
                let inner = self.parse_expr()?;
                let (close, cat) = self.next_tok()?;
                if close != Tok::RParen {
                    return Err(self.err(cat, "expected `)`"));
                }
                Ok(inner)
            }
            Tok::Ident(name) => {
                let (next, _) = self.peek_tok()?;
                if next == Tok::LParen {
                    let func = Func::from_name(&name).ok_or(Error::UnknownIdentifier {
                        name: name.clone(),
                        pos: self.base + at,
                    })?;
                    self.next_tok()?;
                    let arg = self.parse_expr()?;
                    let (close, cat) = self.next_tok()?;
                    if close != Tok::RParen {
                        return Err(self.err(cat, "expected `)` after function argument"));
                    }
                    Ok(Expr::call(func, arg))
                } else {
                    self.ident_expr(&name, at)
                }
            }
            Tok::End => Err(self.err(at, "unexpected end of expression")),
            other => Err(self.err(at, format!("unexpected token {other:?}"))),
        }
    }

    fn ident_expr(&self, name: &str, at: usize) -> Result<Expr> {
        match name {
            "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
            "e" => return Ok(Expr::Num(std::f64::consts::E)),
            "r" => return Ok(radius_expr(self.n)),
            _ => {}
        }
        let mut chars = name.chars();
        if chars.next() == Some(self.prefix) {
            let rest: String = chars.collect();
            if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
                let idx: usize = rest.parse().map_err(|_| Error::UnknownIdentifier {
                    name: name.to_string(),
                    pos: self.base + at,
                })?;
                if idx >= 1 && idx <= self.n {
                    return Ok(Expr::Var(idx - 1));
                }
            }
        }
        Err(Error::UnknownIdentifier {
            name: name.to_string(),
            pos: self.base + at,
        })
    }
}

/// `sqrt(x1^2 + ... + xn^2)`, the expansion of the builtin `r`.
pub fn radius_expr(n: usize) -> Expr {
    Expr::call(Func::Sqrt, radius_squared_expr(n))
}

/// `x1^2 + ... + xn^2`, useful for radial profiles that must stay smooth at 0.
pub fn radius_squared_expr(n: usize) -> Expr {
    let mut acc = Expr::pow(Expr::var(0), Expr::num(2.0));
    for i in 1..n {
        acc = Expr::add(acc, Expr::pow(Expr::var(i), Expr::num(2.0)));
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_constant_map() {
        let spec = parse_map("0", 5, 1).unwrap();
        assert_eq!(spec.exprs, vec![Expr::Num(0.0)]);
    }

    #[test]
    fn parses_two_expressions() {
        let spec = parse_map("x1 + 2*x2; sin(x1)", 2, 2).unwrap();
        assert_eq!(spec.m, 2);
        assert_eq!(
            spec.exprs[0],
            Expr::add(Expr::var(0), Expr::mul(Expr::num(2.0), Expr::var(1)))
        );
        assert_eq!(spec.exprs[1], Expr::call(Func::Sin, Expr::var(0)));
    }

    #[test]
    fn newline_separates_expressions() {
        let spec = parse_map("x1\nx2\n", 3, 2).unwrap();
        assert_eq!(spec.m, 2);
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let err = parse_map("x1; x2", 2, 3).unwrap_err();
        assert_eq!(
            err,
            Error::ArityMismatch {
                expected: 3,
                found: 2
            }
        );
    }

    #[test]
    fn unknown_identifier_carries_position() {
        let err = parse_map("x1 + foo", 2, 1).unwrap_err();
        match err {
            Error::UnknownIdentifier { name, pos } => {
                assert_eq!(name, "foo");
                assert_eq!(pos, 5);
            }
            other => panic!("expected UnknownIdentifier, got {other:?}"),
        }
    }

    #[test]
    fn variable_out_of_range_is_unknown() {
        assert!(matches!(
            parse_map("x7", 5, 1).unwrap_err(),
            Error::UnknownIdentifier { .. }
        ));
    }

    #[test]
    fn syntax_error_has_offset() {
        let err = parse_map("x1 + ", 2, 1).unwrap_err();
        assert!(matches!(err, Error::Syntax { .. }));
    }

    #[test]
    fn r_expands_to_sqrt_of_squares() {
        let spec = parse_map("r", 3, 1).unwrap();
        assert_eq!(spec.exprs[0], radius_expr(3));
    }

    #[test]
    fn euler_constant_vs_exponent_notation() {
        let spec = parse_map("2*e; 1e2", 2, 2).unwrap();
        assert_eq!(
            spec.exprs[0],
            Expr::mul(Expr::num(2.0), Expr::num(std::f64::consts::E))
        );
        assert_eq!(spec.exprs[1], Expr::Num(100.0));
    }

    #[test]
    fn unary_minus_binds_before_caret() {
        // Per the grammar, `-x1^2` is `(-x1)^2`.
        let spec = parse_map("-x1^2", 2, 1).unwrap();
        assert_eq!(
            spec.exprs[0],
            Expr::pow(Expr::neg(Expr::var(0)), Expr::num(2.0))
        );
    }

    #[test]
    fn negative_exponent_parses() {
        let spec = parse_map("(1 + x1^2)^-0.25", 2, 1).unwrap();
        assert_eq!(
            spec.exprs[0],
            Expr::pow(
                Expr::add(Expr::num(1.0), Expr::pow(Expr::var(0), Expr::num(2.0))),
                Expr::neg(Expr::num(0.25))
            )
        );
    }

    #[test]
    fn pretty_print_round_trips() {
        let sources = [
            "x1 + 2*x2 - sin(x1*x2)/(1 + x1^2)",
            "exp(-x1) * (x2 - 3)^2 + tanh(x1)",
            "sqrt(x1^2 + x2^2) ^ -1.5",
            "r + pi*e",
            "-x1^-2",
        ];
        for src in sources {
            let spec = parse_map(src, 2, 1).unwrap();
            let printed = spec.pretty();
            let reparsed = parse_map(&printed, 2, 1).unwrap();
            assert_eq!(spec.exprs, reparsed.exprs, "round trip failed for {src}");
        }
    }

    #[test]
    fn prefix_u_for_hypersurface_profiles() {
        let e = parse_single("1 + u1*u2", 4, 'u').unwrap();
        assert_eq!(
            e,
            Expr::add(Expr::num(1.0), Expr::mul(Expr::var(0), Expr::var(1)))
        );
        assert!(parse_single("x1", 4, 'u').is_err());
    }
}
