//! Sparse multivariate polynomials and rational functions.
//!
//! Coefficients are `f64`; exactness is recovered downstream by residual
//! validation of every certificate. Terms are kept in a canonical graded
//! ordering so that all iteration, display and file output is byte-stable.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("evaluation point has {got} coordinates, polynomial has {want} variables")]
    PointLength { got: usize, want: usize },
    #[error("no value supplied for variable {0}")]
    MissingValue(Var),
    #[error("zero denominator polynomial")]
    ZeroDenominator,
    #[error("denominator is not constant: {0}")]
    NonConstantDenominator(String),
}

/// Variable classes, in canonical ordering. States come first so that
/// monomial bases for state-quadratic forms group naturally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    /// System state `x1..xn`.
    State,
    /// Error state `e1..en`.
    Err,
    /// Input `u1..um`.
    Input,
    /// Uncertain parameter `t1..tk`.
    Theta,
    /// Laplace variable `s`.
    Laplace,
    /// Auxiliary indeterminate `z1..` (matrix-constraint scalarization).
    Aux,
}

impl VarKind {
    pub fn prefix(self) -> &'static str {
        match self {
            VarKind::State => "x",
            VarKind::Err => "e",
            VarKind::Input => "u",
            VarKind::Theta => "t",
            VarKind::Laplace => "s",
            VarKind::Aux => "z",
        }
    }

    /// True for the variable classes that carry quadratic structure in
    /// storage-function constraints.
    pub fn is_statelike(self) -> bool {
        matches!(self, VarKind::State | VarKind::Err | VarKind::Input | VarKind::Aux)
    }
}

/// A typed variable identifier such as `t2` or `x1`. Indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var {
    pub kind: VarKind,
    pub index: u32,
}

impl Var {
    pub fn new(kind: VarKind, index: u32) -> Self {
        Var { kind, index }
    }

    pub fn theta(index: u32) -> Self {
        Var::new(VarKind::Theta, index)
    }

    pub fn state(index: u32) -> Self {
        Var::new(VarKind::State, index)
    }

    pub fn err(index: u32) -> Self {
        Var::new(VarKind::Err, index)
    }

    pub fn input(index: u32) -> Self {
        Var::new(VarKind::Input, index)
    }

    pub fn laplace() -> Self {
        Var::new(VarKind::Laplace, 1)
    }

    pub fn aux(index: u32) -> Self {
        Var::new(VarKind::Aux, index)
    }

    /// Resolve an identifier like `t1`, `x3`, `s`. Unknown names are rejected.
    pub fn from_name(name: &str) -> Option<Var> {
        if name == "s" {
            return Some(Var::laplace());
        }
        let (head, rest) = name.split_at(1);
        let kind = match head {
            "x" => VarKind::State,
            "e" => VarKind::Err,
            "u" => VarKind::Input,
            "t" => VarKind::Theta,
            "z" => VarKind::Aux,
            _ => return None,
        };
        if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let index: u32 = rest.parse().ok()?;
        if index == 0 {
            return None;
        }
        Some(Var::new(kind, index))
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind == VarKind::Laplace {
            write!(f, "s")
        } else {
            write!(f, "{}{}", self.kind.prefix(), self.index)
        }
    }
}

/// Exponent vector under graded ordering: lower total degree first, and for
/// equal degree the monomial with the higher power on the earliest variable
/// comes first, so a degree-1 basis lists as `[1, t1, t2]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn divides(&self, other: &Monomial) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => other.0.cmp(&self.0),
            ord => ord,
        }
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse multivariate polynomial with real coefficients.
///
/// Invariants: `vars` is sorted and duplicate-free, every stored exponent
/// vector has length `vars.len()`, no stored coefficient is exactly zero,
/// and no variable is retained with zero exponent in every term.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    vars: Vec<Var>,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Polynomial { vars: Vec::new(), terms: BTreeMap::new() }
    }

    pub fn constant(c: f64) -> Self {
        let mut terms = BTreeMap::new();
        if c != 0.0 {
            terms.insert(Monomial::one(0), c);
        }
        Polynomial { vars: Vec::new(), terms }
    }

    pub fn one() -> Self {
        Polynomial::constant(1.0)
    }

    pub fn var(v: Var) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(Monomial(vec![1]), 1.0);
        Polynomial { vars: vec![v], terms }
    }

    /// Build from explicit (exponents, coefficient) pairs over `vars`.
    pub fn from_terms(vars: Vec<Var>, entries: impl IntoIterator<Item = (Vec<u32>, f64)>) -> Self {
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (exps, c) in entries {
            assert_eq!(exps.len(), vars.len(), "exponent vector length mismatch");
            *terms.entry(Monomial(exps)).or_insert(0.0) += c;
        }
        let mut p = Polynomial { vars, terms };
        p.normalize();
        p
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty() || (self.terms.len() == 1 && self.terms.keys().next().unwrap().degree() == 0)
    }

    /// Constant value if the polynomial is constant.
    pub fn as_constant(&self) -> Option<f64> {
        if self.terms.is_empty() {
            Some(0.0)
        } else if self.is_constant() {
            Some(*self.terms.values().next().unwrap())
        } else {
            None
        }
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|m| m.degree()).max().unwrap_or(0)
    }

    /// Maximum total degree over variables of the given kind.
    pub fn degree_in_kind(&self, kind: VarKind) -> u32 {
        let idx: Vec<usize> =
            self.vars.iter().enumerate().filter(|(_, v)| v.kind == kind).map(|(i, _)| i).collect();
        self.terms
            .keys()
            .map(|m| idx.iter().map(|&i| m.0[i]).sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Largest coefficient magnitude (0 for the zero polynomial).
    pub fn max_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, &c| a.max(c.abs()))
    }

    /// Remove terms with |coefficient| <= tol.
    pub fn chop(&self, tol: f64) -> Polynomial {
        let mut out = self.clone();
        out.terms.retain(|_, c| c.abs() > tol);
        out.normalize();
        out
    }

    fn normalize(&mut self) {
        self.terms.retain(|_, c| *c != 0.0);
        // prune variables unused by every term
        let nv = self.vars.len();
        let mut used = vec![false; nv];
        for m in self.terms.keys() {
            for (i, &e) in m.0.iter().enumerate() {
                if e > 0 {
                    used[i] = true;
                }
            }
        }
        if used.iter().all(|&u| u) {
            return;
        }
        let keep: Vec<usize> = (0..nv).filter(|&i| used[i]).collect();
        self.vars = keep.iter().map(|&i| self.vars[i]).collect();
        let old = std::mem::take(&mut self.terms);
        for (m, c) in old {
            let exps: Vec<u32> = keep.iter().map(|&i| m.0[i]).collect();
            self.terms.insert(Monomial(exps), c);
        }
    }

    /// Merge the variable lists of two polynomials and re-index both.
    fn aligned(&self, other: &Polynomial) -> (Vec<Var>, BTreeMap<Monomial, f64>, BTreeMap<Monomial, f64>) {
        let mut vars: Vec<Var> = self.vars.iter().chain(other.vars.iter()).copied().collect();
        vars.sort();
        vars.dedup();
        let map_terms = |p: &Polynomial| -> BTreeMap<Monomial, f64> {
            let pos: Vec<usize> =
                p.vars.iter().map(|v| vars.binary_search(v).expect("aligned var")).collect();
            p.terms
                .iter()
                .map(|(m, &c)| {
                    let mut e = vec![0u32; vars.len()];
                    for (i, &x) in m.0.iter().enumerate() {
                        e[pos[i]] = x;
                    }
                    (Monomial(e), c)
                })
                .collect()
        };
        (vars.clone(), map_terms(self), map_terms(other))
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let (vars, a, b) = self.aligned(other);
        let mut terms = a;
        for (m, c) in b {
            let slot = terms.entry(m).or_insert(0.0);
            *slot += c;
        }
        let mut p = Polynomial { vars, terms };
        p.normalize();
        p
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Polynomial {
        self.scale(-1.0)
    }

    pub fn scale(&self, k: f64) -> Polynomial {
        if k == 0.0 {
            return Polynomial::zero();
        }
        let terms = self.terms.iter().map(|(m, &c)| (m.clone(), k * c)).collect();
        Polynomial { vars: self.vars.clone(), terms }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        if self.is_zero() || other.is_zero() {
            return Polynomial::zero();
        }
        let (vars, a, b) = self.aligned(other);
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (ma, ca) in &a {
            for (mb, cb) in &b {
                let exps: Vec<u32> = ma.0.iter().zip(&mb.0).map(|(x, y)| x + y).collect();
                *terms.entry(Monomial(exps)).or_insert(0.0) += ca * cb;
            }
        }
        let mut p = Polynomial { vars, terms };
        p.normalize();
        p
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut acc = Polynomial::one();
        for _ in 0..k {
            acc = acc.mul(self);
        }
        acc
    }

    /// Evaluate at a point given in `self.vars` order. Summation follows the
    /// canonical term order so results are reproducible.
    pub fn eval_slice(&self, point: &[f64]) -> Result<f64, PolyError> {
        if point.len() != self.vars.len() {
            return Err(PolyError::PointLength { got: point.len(), want: self.vars.len() });
        }
        let mut acc = 0.0;
        for (m, c) in &self.terms {
            let mut v = *c;
            for (i, &e) in m.0.iter().enumerate() {
                v *= point[i].powi(e as i32);
            }
            acc += v;
        }
        Ok(acc)
    }

    /// Evaluate with values supplied per variable.
    pub fn eval_map(&self, values: &BTreeMap<Var, f64>) -> Result<f64, PolyError> {
        let point: Result<Vec<f64>, PolyError> = self
            .vars
            .iter()
            .map(|v| values.get(v).copied().ok_or(PolyError::MissingValue(*v)))
            .collect();
        self.eval_slice(&point?)
    }

    /// Evaluate a polynomial in theta variables only at the given theta vector
    /// (t1 -> theta[0], ...). Non-theta variables are an error.
    pub fn eval_theta(&self, theta: &[f64]) -> Result<f64, PolyError> {
        let point: Result<Vec<f64>, PolyError> = self
            .vars
            .iter()
            .map(|v| {
                if v.kind == VarKind::Theta && (v.index as usize) <= theta.len() {
                    Ok(theta[v.index as usize - 1])
                } else {
                    Err(PolyError::MissingValue(*v))
                }
            })
            .collect();
        self.eval_slice(&point?)
    }

    /// Formal partial derivative. Zero if the variable does not occur.
    pub fn derivative(&self, v: Var) -> Polynomial {
        let Some(pos) = self.vars.iter().position(|w| *w == v) else {
            return Polynomial::zero();
        };
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m, &c) in &self.terms {
            let e = m.0[pos];
            if e == 0 {
                continue;
            }
            let mut exps = m.0.clone();
            exps[pos] = e - 1;
            *terms.entry(Monomial(exps)).or_insert(0.0) += c * e as f64;
        }
        let mut p = Polynomial { vars: self.vars.clone(), terms };
        p.normalize();
        p
    }

    /// Substitute polynomials for a subset of variables.
    pub fn subst(&self, map: &BTreeMap<Var, Polynomial>) -> Polynomial {
        let mut acc = Polynomial::zero();
        for (m, &c) in &self.terms {
            let mut term = Polynomial::constant(c);
            for (i, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let v = self.vars[i];
                let base = match map.get(&v) {
                    Some(repl) => repl.clone(),
                    None => Polynomial::var(v),
                };
                term = term.mul(&base.pow(e));
            }
            acc = acc.add(&term);
        }
        acc
    }

    /// Exact multivariate division. Returns `None` when `self` is not a
    /// polynomial multiple of `d`. Small residual coefficients (relative
    /// 1e-9) are treated as rounding and dropped.
    pub fn try_div_exact(&self, d: &Polynomial) -> Option<Polynomial> {
        if d.is_zero() {
            return None;
        }
        if self.is_zero() {
            return Some(Polynomial::zero());
        }
        let (vars, a, b) = self.aligned(d);
        let scale = self.max_coeff().max(1.0);
        let mut rem = a;
        let (lead_m, lead_c) = {
            let (m, c) = b.iter().next_back().unwrap();
            (m.clone(), *c)
        };
        let mut quo: BTreeMap<Monomial, f64> = BTreeMap::new();
        loop {
            rem.retain(|_, c| c.abs() > 1e-9 * scale);
            let Some((rm, rc)) = rem.iter().next_back().map(|(m, c)| (m.clone(), *c)) else {
                break;
            };
            if !lead_m.divides(&rm) {
                return None;
            }
            let qm = Monomial(rm.0.iter().zip(&lead_m.0).map(|(x, y)| x - y).collect());
            let qc = rc / lead_c;
            for (bm, bc) in &b {
                let em = Monomial(qm.0.iter().zip(&bm.0).map(|(x, y)| x + y).collect());
                *rem.entry(em).or_insert(0.0) -= qc * bc;
            }
            *quo.entry(qm).or_insert(0.0) += qc;
        }
        let mut q = Polynomial { vars, terms: quo };
        q.normalize();
        Some(q)
    }

    /// Coefficient of degree `k` when viewed as univariate in `v` with the
    /// remaining variables evaluated away already (v must be the only var).
    pub fn univariate_coeffs(&self, v: Var) -> Option<Vec<f64>> {
        if self.vars.iter().any(|w| *w != v) {
            return None;
        }
        let deg = self.total_degree() as usize;
        let mut out = vec![0.0; deg + 1];
        for (m, &c) in &self.terms {
            let e = if m.0.is_empty() { 0 } else { m.0[0] as usize };
            out[e] += c;
        }
        Some(out)
    }
}

/// All monomials of total degree <= `d` in the given variables, in canonical
/// order. The count is C(n+d, d).
pub fn monomials_up_to(vars: &[Var], d: u32) -> Vec<Polynomial> {
    let mut sorted: Vec<Var> = vars.to_vec();
    sorted.sort();
    sorted.dedup();
    let n = sorted.len();
    let mut exps: Vec<Monomial> = Vec::new();
    let mut cur = vec![0u32; n];
    enumerate_exponents(&mut exps, &mut cur, 0, d);
    exps.sort();
    exps.into_iter()
        .map(|m| {
            let mut terms = BTreeMap::new();
            terms.insert(m, 1.0);
            let mut p = Polynomial { vars: sorted.clone(), terms };
            p.normalize();
            p
        })
        .collect()
}

/// Exponent vectors of total degree <= `d` over `n` slots, canonical order.
pub fn exponents_up_to(n: usize, d: u32) -> Vec<Monomial> {
    let mut exps: Vec<Monomial> = Vec::new();
    let mut cur = vec![0u32; n];
    enumerate_exponents(&mut exps, &mut cur, 0, d);
    exps.sort();
    exps
}

fn enumerate_exponents(out: &mut Vec<Monomial>, cur: &mut Vec<u32>, pos: usize, budget: u32) {
    if pos == cur.len() {
        out.push(Monomial(cur.clone()));
        return;
    }
    for e in 0..=budget {
        cur[pos] = e;
        enumerate_exponents(out, cur, pos + 1, budget - e);
    }
    cur[pos] = 0;
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, &c) in self.terms.iter().rev() {
            let mag = c.abs();
            if first {
                if c < 0.0 {
                    write!(f, "-")?;
                }
                first = false;
            } else if c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let is_const = m.degree() == 0;
            if is_const || mag != 1.0 {
                write!(f, "{}", mag)?;
                if !is_const {
                    write!(f, "*")?;
                }
            }
            let mut sep = false;
            for (i, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                if sep {
                    write!(f, "*")?;
                }
                sep = true;
                write!(f, "{}", self.vars[i])?;
                if e > 1 {
                    write!(f, "^{}", e)?;
                }
            }
        }
        Ok(())
    }
}

/// Ratio of two polynomials. The denominator is normalized so its leading
/// coefficient is 1, which strips common scalar factors.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalFunction {
    num: Polynomial,
    den: Polynomial,
}

impl RationalFunction {
    pub fn new(num: Polynomial, den: Polynomial) -> Result<Self, PolyError> {
        if den.is_zero() {
            return Err(PolyError::ZeroDenominator);
        }
        let mut r = RationalFunction { num, den };
        r.canonicalize();
        Ok(r)
    }

    pub fn from_poly(p: Polynomial) -> Self {
        RationalFunction { num: p, den: Polynomial::one() }
    }

    pub fn constant(c: f64) -> Self {
        RationalFunction::from_poly(Polynomial::constant(c))
    }

    pub fn zero() -> Self {
        RationalFunction::from_poly(Polynomial::zero())
    }

    pub fn num(&self) -> &Polynomial {
        &self.num
    }

    pub fn den(&self) -> &Polynomial {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_polynomial(&self) -> bool {
        self.den.is_constant()
    }

    /// The numerator as a polynomial when the denominator is constant.
    pub fn as_polynomial(&self) -> Result<Polynomial, PolyError> {
        match self.den.as_constant() {
            Some(c) => Ok(self.num.scale(1.0 / c)),
            None => Err(PolyError::NonConstantDenominator(self.den.to_string())),
        }
    }

    fn canonicalize(&mut self) {
        if self.num.is_zero() {
            self.den = Polynomial::one();
            return;
        }
        // cancel a shared polynomial factor when one divides the other
        if let Some(q) = self.num.try_div_exact(&self.den) {
            self.num = q;
            self.den = Polynomial::one();
        } else if let Some(q) = self.den.try_div_exact(&self.num) {
            if let Some(c) = q.as_constant() {
                // num/den = 1/(den/num) with constant ratio
                self.num = Polynomial::constant(1.0 / c);
                self.den = Polynomial::one();
                return;
            }
        }
        let lead = *self.den.terms.values().next_back().unwrap();
        self.num = self.num.scale(1.0 / lead);
        self.den = self.den.scale(1.0 / lead);
    }

    pub fn add(&self, other: &RationalFunction) -> RationalFunction {
        let num = if self.den == other.den {
            self.num.add(&other.num)
        } else {
            self.num.mul(&other.den).add(&other.num.mul(&self.den))
        };
        let den = if self.den == other.den { self.den.clone() } else { self.den.mul(&other.den) };
        RationalFunction::new(num, den).expect("nonzero denominators")
    }

    pub fn sub(&self, other: &RationalFunction) -> RationalFunction {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> RationalFunction {
        RationalFunction { num: self.num.neg(), den: self.den.clone() }
    }

    pub fn mul(&self, other: &RationalFunction) -> RationalFunction {
        RationalFunction::new(self.num.mul(&other.num), self.den.mul(&other.den))
            .expect("nonzero denominators")
    }

    pub fn div(&self, other: &RationalFunction) -> Result<RationalFunction, PolyError> {
        if other.num.is_zero() {
            return Err(PolyError::ZeroDenominator);
        }
        RationalFunction::new(self.num.mul(&other.den), self.den.mul(&other.num))
    }

    pub fn pow(&self, k: u32) -> RationalFunction {
        RationalFunction { num: self.num.pow(k), den: self.den.pow(k) }
    }

    /// Evaluate at a theta vector; fails if |den| <= `den_tol`.
    pub fn eval_theta(&self, theta: &[f64], den_tol: f64) -> Result<f64, PolyError> {
        let d = self.den.eval_theta(theta)?;
        if d.abs() <= den_tol {
            return Err(PolyError::ZeroDenominator);
        }
        Ok(self.num.eval_theta(theta)? / d)
    }

    pub fn subst(&self, map: &BTreeMap<Var, Polynomial>) -> Result<RationalFunction, PolyError> {
        RationalFunction::new(self.num.subst(map), self.den.subst(map))
    }
}

impl fmt::Display for RationalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_polynomial() {
            write!(f, "{}", self.as_polynomial().unwrap())
        } else {
            write!(f, "({}) / ({})", self.num, self.den)
        }
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

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

struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn err(&self, msg: impl Into<String>) -> PolyError {
        PolyError::Parse { line: self.line, col: self.col, msg: msg.into() }
    }

    fn bump(&mut self) -> u8 {
        let b = self.src[self.pos];
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        b
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn next_token(&mut self) -> Result<Token, PolyError> {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.bump();
        }
        let (line, col) = (self.line, self.col);
        let Some(b) = self.peek() else {
            return Ok(Token { tok: Tok::End, line, col });
        };
        let tok = match b {
            b'+' => {
                self.bump();
                Tok::Plus
            }
            b'-' => {
                self.bump();
                Tok::Minus
            }
            b'*' => {
                self.bump();
                Tok::Star
            }
            b'/' => {
                self.bump();
                Tok::Slash
            }
            b'^' => {
                self.bump();
                Tok::Caret
            }
            b'(' => {
                self.bump();
                Tok::LParen
            }
            b')' => {
                self.bump();
                Tok::RParen
            }
            b'0'..=b'9' | b'.' => {
                let start = self.pos;
                while matches!(self.peek(), Some(b'0'..=b'9' | b'.')) {
                    self.bump();
                }
                // exponent part of a float literal
                if matches!(self.peek(), Some(b'e' | b'E')) {
                    let mark = (self.pos, self.line, self.col);
                    self.bump();
                    if matches!(self.peek(), Some(b'+' | b'-')) {
                        self.bump();
                    }
                    if matches!(self.peek(), Some(b'0'..=b'9')) {
                        while matches!(self.peek(), Some(b'0'..=b'9')) {
                            self.bump();
                        }
                    } else {
                        (self.pos, self.line, self.col) = mark;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let v: f64 = text
                    .parse()
                    .map_err(|_| PolyError::Parse { line, col, msg: format!("bad number `{}`", text) })?;
                Tok::Num(v)
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = self.pos;
                while matches!(self.peek(), Some(b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9' | b'_')) {
                    self.bump();
                }
                Tok::Ident(std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string())
            }
            other => return Err(self.err(format!("unexpected character `{}`", other as char))),
        };
        Ok(Token { tok, line, col })
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    cur: Token,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, PolyError> {
        let mut lexer = Lexer::new(src);
        let cur = lexer.next_token()?;
        Ok(Parser { lexer, cur })
    }

    fn advance(&mut self) -> Result<(), PolyError> {
        self.cur = self.lexer.next_token()?;
        Ok(())
    }

    fn err_at(&self, msg: impl Into<String>) -> PolyError {
        PolyError::Parse { line: self.cur.line, col: self.cur.col, msg: msg.into() }
    }

    fn expr(&mut self) -> Result<RationalFunction, PolyError> {
        let mut acc = self.term()?;
        loop {
            match self.cur.tok {
                Tok::Plus => {
                    self.advance()?;
                    acc = acc.add(&self.term()?);
                }
                Tok::Minus => {
                    self.advance()?;
                    acc = acc.sub(&self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<RationalFunction, PolyError> {
        let mut acc = self.factor()?;
        loop {
            match self.cur.tok {
                Tok::Star => {
                    self.advance()?;
                    acc = acc.mul(&self.factor()?);
                }
                Tok::Slash => {
                    let (line, col) = (self.cur.line, self.cur.col);
                    self.advance()?;
                    let rhs = self.factor()?;
                    acc = acc.div(&rhs).map_err(|_| PolyError::Parse {
                        line,
                        col,
                        msg: "division by zero polynomial".into(),
                    })?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<RationalFunction, PolyError> {
        let mut sign = 1.0;
        loop {
            match self.cur.tok {
                Tok::Minus => {
                    sign = -sign;
                    self.advance()?;
                }
                Tok::Plus => self.advance()?,
                _ => break,
            }
        }
        let mut base = self.atom()?;
        if self.cur.tok == Tok::Caret {
            self.advance()?;
            let Tok::Num(v) = self.cur.tok else {
                return Err(self.err_at("expected integer exponent after `^`"));
            };
            if v < 0.0 || v.fract() != 0.0 || v > 64.0 {
                return Err(self.err_at(format!("exponent must be an integer in 0..=64, got {}", v)));
            }
            self.advance()?;
            base = base.pow(v as u32);
        }
        if sign < 0.0 {
            base = base.neg();
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<RationalFunction, PolyError> {
        match self.cur.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(RationalFunction::constant(v))
            }
            Tok::Ident(name) => {
                let Some(v) = Var::from_name(&name) else {
                    return Err(self.err_at(format!(
                        "unknown identifier `{}` (expected t<k>, x<k>, e<k>, u<k>, z<k>, or s)",
                        name
                    )));
                };
                self.advance()?;
                Ok(RationalFunction::from_poly(Polynomial::var(v)))
            }
            Tok::LParen => {
                self.advance()?;
                let inner = self.expr()?;
                if self.cur.tok != Tok::RParen {
                    return Err(self.err_at("expected `)`"));
                }
                self.advance()?;
                Ok(inner)
            }
            Tok::End => Err(self.err_at("unexpected end of expression")),
            other => Err(self.err_at(format!("unexpected token {:?}", other))),
        }
    }
}

/// Parse a rational expression over the recognized variables.
pub fn parse_rational(src: &str) -> Result<RationalFunction, PolyError> {
    let mut p = Parser::new(src)?;
    let r = p.expr()?;
    if p.cur.tok != Tok::End {
        return Err(p.err_at("trailing input after expression"));
    }
    Ok(r)
}

/// Parse an expression that must reduce to a polynomial.
pub fn parse_polynomial(src: &str) -> Result<Polynomial, PolyError> {
    parse_rational(src)?.as_polynomial()
}
