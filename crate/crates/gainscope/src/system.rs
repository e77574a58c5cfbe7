//! Uncertain LTI systems, the nominal/error cascade, and pointwise
//! instantiation.
//!
//! A system is (A(θ), B(θ), C(θ), D(θ)) with rational parameter dependence, a
//! nominal point θ*, and a semialgebraic uncertainty set Θ = {θ : g_j(θ) ≥ 0}.
//! The cascade doubles the state into (x, e) with e the deviation from the
//! nominal trajectory, and splits the output into (y, Δy).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::poly::{parse_rational, Polynomial, PolyError, RationalFunction, Var, VarKind};

/// Numeric threshold below which a denominator value counts as singular.
pub const DEN_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("parse error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("matrix {name} has {got} entries, expected {rows}x{cols}")]
    ShapeMismatch { name: String, got: usize, rows: usize, cols: usize },
    #[error("nominal point outside domain: {g}(theta*) = {value:.3e} < 0")]
    NominalOutsideDomain { g: String, value: f64 },
    #[error("denominator of {name}[{row},{col}] vanishes at theta* (|den| = {value:.3e})")]
    SingularAtNominal { name: String, row: usize, col: usize, value: f64 },
    #[error("parameter singularity: |denominator| = {0:.3e} at evaluation point")]
    ParameterSingularity(f64),
    #[error("entry {name}[{row},{col}] uses variable {var}, only t1..t{ntheta} are allowed")]
    NonThetaVariable { name: String, row: usize, col: usize, var: String, ntheta: usize },
    #[error("normalization requires every component of theta* nonzero, component {0} is zero")]
    NormalizeZeroNominal(usize),
    #[error("matrix {0} is not Hurwitz (spectral abscissa {1:.3e})")]
    NotHurwitz(String, f64),
    #[error("{0}")]
    Invalid(String),
}

/// Matrix whose entries are rational functions of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix {
    rows: usize,
    cols: usize,
    data: Vec<RationalFunction>,
}

impl ParamMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<RationalFunction>) -> Self {
        assert_eq!(data.len(), rows * cols);
        ParamMatrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ParamMatrix { rows, cols, data: vec![RationalFunction::zero(); rows * cols] }
    }

    pub fn from_numeric(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(RationalFunction::constant(m[(r, c)]));
            }
        }
        ParamMatrix { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> &RationalFunction {
        &self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: RationalFunction) {
        self.data[r * self.cols + c] = v;
    }

    pub fn entries(&self) -> impl Iterator<Item = &RationalFunction> {
        self.data.iter()
    }

    pub fn sub(&self, other: &ParamMatrix) -> ParamMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a.sub(b)).collect();
        ParamMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|r| r.is_zero())
    }

    /// Entrywise numeric evaluation; errors on near-vanishing denominators.
    pub fn eval(&self, theta: &[f64]) -> Result<DMatrix<f64>, SystemError> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let e = self.get(r, c);
                let d = e.den().eval_theta(theta)?;
                if d.abs() <= DEN_TOL {
                    return Err(SystemError::ParameterSingularity(d.abs()));
                }
                out[(r, c)] = e.num().eval_theta(theta)? / d;
            }
        }
        Ok(out)
    }

    pub fn subst(&self, map: &BTreeMap<Var, Polynomial>) -> Result<ParamMatrix, SystemError> {
        let data: Result<Vec<_>, PolyError> = self.data.iter().map(|e| e.subst(map)).collect();
        Ok(ParamMatrix { rows: self.rows, cols: self.cols, data: data? })
    }

    /// Stack `[self; other]` vertically.
    pub fn vstack(&self, other: &ParamMatrix) -> ParamMatrix {
        assert_eq!(self.cols, other.cols);
        let mut data = self.data.clone();
        data.extend(other.data.iter().cloned());
        ParamMatrix { rows: self.rows + other.rows, cols: self.cols, data }
    }

    /// Assemble a 2x2 block matrix.
    pub fn block2x2(
        tl: &ParamMatrix,
        tr: &ParamMatrix,
        bl: &ParamMatrix,
        br: &ParamMatrix,
    ) -> ParamMatrix {
        assert_eq!(tl.rows, tr.rows);
        assert_eq!(bl.rows, br.rows);
        assert_eq!(tl.cols, bl.cols);
        assert_eq!(tr.cols, br.cols);
        let rows = tl.rows + bl.rows;
        let cols = tl.cols + tr.cols;
        let mut out = ParamMatrix::zeros(rows, cols);
        for r in 0..tl.rows {
            for c in 0..tl.cols {
                out.set(r, c, tl.get(r, c).clone());
            }
            for c in 0..tr.cols {
                out.set(r, tl.cols + c, tr.get(r, c).clone());
            }
        }
        for r in 0..bl.rows {
            for c in 0..bl.cols {
                out.set(tl.rows + r, c, bl.get(r, c).clone());
            }
            for c in 0..br.cols {
                out.set(tl.rows + r, bl.cols + c, br.get(r, c).clone());
            }
        }
        out
    }

    /// Extract the row range [r0, r1).
    pub fn row_block(&self, r0: usize, r1: usize) -> ParamMatrix {
        let mut data = Vec::with_capacity((r1 - r0) * self.cols);
        for r in r0..r1 {
            for c in 0..self.cols {
                data.push(self.get(r, c).clone());
            }
        }
        ParamMatrix { rows: r1 - r0, cols: self.cols, data }
    }

    /// Least common denominator d and numerator matrix N with entry = N/d.
    ///
    /// The LCM is built structurally (divisibility checks, no factorization),
    /// so unrelated denominators multiply while repeated or nested powers
    /// collapse.
    pub fn clear_denominators(&self) -> Result<(Vec<Polynomial>, Polynomial), SystemError> {
        let mut lcm = Polynomial::one();
        for e in &self.data {
            let den = e.den();
            if den.is_zero() {
                return Err(SystemError::Poly(PolyError::ZeroDenominator));
            }
            if lcm.try_div_exact(den).is_some() {
                continue;
            }
            if den.try_div_exact(&lcm).is_some() {
                lcm = den.clone();
            } else {
                lcm = lcm.mul(den);
            }
        }
        let mut nums = Vec::with_capacity(self.data.len());
        for e in &self.data {
            let factor = lcm.try_div_exact(e.den()).expect("lcm divisible by every denominator");
            nums.push(e.num().mul(&factor));
        }
        Ok((nums, lcm))
    }
}

/// A concrete state-space realization at a fixed parameter value.
#[derive(Debug, Clone)]
pub struct NumericStateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl NumericStateSpace {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, SystemError> {
        let n = a.nrows();
        if a.ncols() != n
            || b.nrows() != n
            || c.ncols() != n
            || d.nrows() != c.nrows()
            || d.ncols() != b.ncols()
        {
            return Err(SystemError::Invalid("inconsistent state-space shapes".into()));
        }
        if !a.iter().chain(b.iter()).chain(c.iter()).chain(d.iter()).all(|v| v.is_finite()) {
            return Err(SystemError::Invalid("non-finite state-space entry".into()));
        }
        Ok(NumericStateSpace { a, b, c, d })
    }

    /// Largest real part over the spectrum of A.
    pub fn spectral_abscissa(&self) -> f64 {
        spectral_abscissa(&self.a)
    }
}

pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// System with rational parameter dependence, nominal point, and domain.
#[derive(Debug, Clone)]
pub struct UncertainSystem {
    pub a: ParamMatrix,
    pub b: ParamMatrix,
    pub c: ParamMatrix,
    pub d: ParamMatrix,
    pub theta_star: Vec<f64>,
    /// Named domain inequalities g_j(θ) ≥ 0 in file order.
    pub domain: Vec<(String, Polynomial)>,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub n_theta: usize,
    /// True when the stored coordinates are the normalized deviations
    /// θ̃_i = θ_i/θ*_i − 1 of the original input file.
    pub normalized: bool,
    /// SHA-256 of the source text this system was loaded from.
    pub source_hash: String,
}

impl UncertainSystem {
    /// Validate invariants and compute the content hash from the canonical
    /// serialization.
    pub fn new(
        a: ParamMatrix,
        b: ParamMatrix,
        c: ParamMatrix,
        d: ParamMatrix,
        theta_star: Vec<f64>,
        domain: Vec<(String, Polynomial)>,
    ) -> Result<Self, SystemError> {
        let n = a.rows();
        let mut sys = UncertainSystem {
            n,
            m: b.cols(),
            p: c.rows(),
            n_theta: theta_star.len(),
            a,
            b,
            c,
            d,
            theta_star,
            domain,
            normalized: false,
            source_hash: String::new(),
        };
        sys.validate()?;
        sys.source_hash = content_hash(&sys.serialize());
        Ok(sys)
    }

    fn validate(&self) -> Result<(), SystemError> {
        let shapes = [
            ("A", &self.a, self.n, self.n),
            ("B", &self.b, self.n, self.m),
            ("C", &self.c, self.p, self.n),
            ("D", &self.d, self.p, self.m),
        ];
        for (name, mat, rows, cols) in shapes {
            if mat.rows() != rows || mat.cols() != cols {
                return Err(SystemError::ShapeMismatch {
                    name: name.into(),
                    got: mat.rows() * mat.cols(),
                    rows,
                    cols,
                });
            }
            for r in 0..mat.rows() {
                for c in 0..mat.cols() {
                    let e = mat.get(r, c);
                    for poly in [e.num(), e.den()] {
                        for v in poly.vars() {
                            if v.kind != VarKind::Theta || v.index as usize > self.n_theta {
                                return Err(SystemError::NonThetaVariable {
                                    name: name.into(),
                                    row: r,
                                    col: c,
                                    var: v.to_string(),
                                    ntheta: self.n_theta,
                                });
                            }
                        }
                    }
                    let dv = e.den().eval_theta(&self.theta_star)?;
                    if dv.abs() <= DEN_TOL {
                        return Err(SystemError::SingularAtNominal {
                            name: name.into(),
                            row: r,
                            col: c,
                            value: dv.abs(),
                        });
                    }
                }
            }
        }
        for (gname, g) in &self.domain {
            for v in g.vars() {
                if v.kind != VarKind::Theta || v.index as usize > self.n_theta {
                    return Err(SystemError::Invalid(format!(
                        "domain polynomial {} uses variable {}",
                        gname, v
                    )));
                }
            }
            let gv = g.eval_theta(&self.theta_star)?;
            if gv < 0.0 {
                return Err(SystemError::NominalOutsideDomain { g: gname.clone(), value: gv });
            }
        }
        Ok(())
    }

    /// Re-express the system in normalized deviation coordinates
    /// θ_i = θ*_i (1 + θ̃_i). The nominal point maps to the origin and the
    /// domain polynomials are transformed along.
    pub fn normalize(&self) -> Result<UncertainSystem, SystemError> {
        let mut map = BTreeMap::new();
        for (i, &ti) in self.theta_star.iter().enumerate() {
            if ti == 0.0 {
                return Err(SystemError::NormalizeZeroNominal(i + 1));
            }
            let v = Var::theta(i as u32 + 1);
            map.insert(
                v,
                Polynomial::constant(ti).mul(&Polynomial::var(v).add(&Polynomial::one())),
            );
        }
        let domain: Vec<(String, Polynomial)> =
            self.domain.iter().map(|(name, g)| (name.clone(), g.subst(&map))).collect();
        let mut sys = UncertainSystem::new(
            self.a.subst(&map)?,
            self.b.subst(&map)?,
            self.c.subst(&map)?,
            self.d.subst(&map)?,
            vec![0.0; self.n_theta],
            domain,
        )?;
        sys.normalized = true;
        Ok(sys)
    }

    /// The nominal realization (constant matrices at θ*).
    pub fn nominal(&self) -> Result<NumericStateSpace, SystemError> {
        self.eval_at(&self.theta_star)
    }

    pub fn eval_at(&self, theta: &[f64]) -> Result<NumericStateSpace, SystemError> {
        NumericStateSpace::new(
            self.a.eval(theta)?,
            self.b.eval(theta)?,
            self.c.eval(theta)?,
            self.d.eval(theta)?,
        )
    }

    /// Sampled Hurwitz check of A(θ) over a list of parameter points. This is
    /// diagnostic sampling, not a stability certificate.
    pub fn hurwitz_sample_check(
        &self,
        grid: &[Vec<f64>],
        eps: f64,
    ) -> Result<HurwitzReport, SystemError> {
        let mut points = Vec::with_capacity(grid.len());
        let mut worst = f64::NEG_INFINITY;
        for theta in grid {
            let a = self.a.eval(theta)?;
            let alpha = spectral_abscissa(&a);
            worst = worst.max(alpha);
            points.push(HurwitzPoint {
                theta: theta.clone(),
                abscissa: alpha,
                flagged: alpha >= -eps,
            });
        }
        Ok(HurwitzReport { points, worst, eps })
    }

    /// Canonical text form; `load_system` on the output reproduces the system.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[dims]");
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "m = {}", self.m);
        let _ = writeln!(s, "p = {}", self.p);
        let _ = writeln!(s, "ntheta = {}", self.n_theta);
        for (name, mat) in [("A", &self.a), ("B", &self.b), ("C", &self.c), ("D", &self.d)] {
            let _ = writeln!(s, "[{}]", name);
            for r in 0..mat.rows() {
                let row: Vec<String> =
                    (0..mat.cols()).map(|c| mat.get(r, c).to_string()).collect();
                let _ = writeln!(s, "{}", row.join("; "));
            }
        }
        let _ = writeln!(s, "[nominal]");
        let vals: Vec<String> = self.theta_star.iter().map(|v| format!("{}", v)).collect();
        let _ = writeln!(s, "theta_star = {}", vals.join(", "));
        let _ = writeln!(s, "[domain]");
        for (name, g) in &self.domain {
            let _ = writeln!(s, "{} = {}", name, g);
        }
        let _ = writeln!(s, "[options]");
        let _ = writeln!(s, "normalize = false");
        s
    }
}

#[derive(Debug, Clone)]
pub struct HurwitzPoint {
    pub theta: Vec<f64>,
    pub abscissa: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct HurwitzReport {
    pub points: Vec<HurwitzPoint>,
    pub worst: f64,
    pub eps: f64,
}

impl HurwitzReport {
    pub fn all_stable(&self) -> bool {
        self.points.iter().all(|p| !p.flagged)
    }
}

/// The doubled system driving (x, e) with outputs (y, Δy).
#[derive(Debug, Clone)]
pub struct CascadeSystem {
    pub abar: ParamMatrix,
    pub bbar: ParamMatrix,
    pub cbar: ParamMatrix,
    pub dbar: ParamMatrix,
    pub parent: UncertainSystem,
}

impl CascadeSystem {
    /// Δy rows of C̄, i.e. [ΔC(θ) C(θ)].
    pub fn c_mismatch(&self) -> ParamMatrix {
        self.cbar.row_block(self.parent.p, 2 * self.parent.p)
    }

    /// Δy feedthrough rows ΔD(θ).
    pub fn d_mismatch(&self) -> ParamMatrix {
        self.dbar.row_block(self.parent.p, 2 * self.parent.p)
    }

    pub fn eval_at(&self, theta: &[f64]) -> Result<NumericStateSpace, SystemError> {
        NumericStateSpace::new(
            self.abar.eval(theta)?,
            self.bbar.eval(theta)?,
            self.cbar.eval(theta)?,
            self.dbar.eval(theta)?,
        )
    }

    /// Realization of the u → Δy path at a fixed parameter value.
    pub fn mismatch_realization(&self, theta: &[f64]) -> Result<NumericStateSpace, SystemError> {
        NumericStateSpace::new(
            self.abar.eval(theta)?,
            self.bbar.eval(theta)?,
            self.c_mismatch().eval(theta)?,
            self.d_mismatch().eval(theta)?,
        )
    }
}

/// Build the cascade of an uncertain system symbolically.
pub fn build_cascade(sys: &UncertainSystem) -> Result<CascadeSystem, SystemError> {
    let nominal = sys.nominal()?;
    let a_star = ParamMatrix::from_numeric(&nominal.a);
    let b_star = ParamMatrix::from_numeric(&nominal.b);
    let c_star = ParamMatrix::from_numeric(&nominal.c);
    let d_star = ParamMatrix::from_numeric(&nominal.d);
    let da = a_star.sub(&sys.a);
    let db = b_star.sub(&sys.b);
    let dc = c_star.sub(&sys.c);
    let dd = d_star.sub(&sys.d);
    let zero_nn = ParamMatrix::zeros(sys.n, sys.n);
    let zero_pn = ParamMatrix::zeros(sys.p, sys.n);
    Ok(CascadeSystem {
        abar: ParamMatrix::block2x2(&a_star, &zero_nn, &da, &sys.a),
        bbar: b_star.vstack(&db),
        cbar: ParamMatrix::block2x2(&c_star, &zero_pn, &dc, &sys.c),
        dbar: d_star.vstack(&dd),
        parent: sys.clone(),
    })
}

pub fn content_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    let out = h.finalize();
    out.iter().map(|b| format!("{:02x}", b)).collect()
}

// ---------------------------------------------------------------------------
// System file format
// ---------------------------------------------------------------------------

/// Parse the key = value section format described in the README.
pub fn load_system(text: &str) -> Result<UncertainSystem, SystemError> {
    let mut sections: Vec<(String, Vec<(usize, String)>)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(close) = rest.find(']') else {
                return Err(SystemError::Format {
                    line: lineno,
                    msg: "unterminated section header".into(),
                });
            };
            let name = rest[..close].trim().to_lowercase();
            sections.push((name, Vec::new()));
            let tail = rest[close + 1..].trim();
            if !tail.is_empty() {
                let sec = sections.last_mut().unwrap();
                for piece in tail.split(';') {
                    if !piece.trim().is_empty() {
                        sec.1.push((lineno, piece.trim().to_string()));
                    }
                }
            }
        } else {
            let Some(sec) = sections.last_mut() else {
                return Err(SystemError::Format {
                    line: lineno,
                    msg: format!("content before any section: `{}`", line),
                });
            };
            for piece in line.split(';') {
                if !piece.trim().is_empty() {
                    sec.1.push((lineno, piece.trim().to_string()));
                }
            }
        }
    }

    let find = |name: &str| -> Option<&Vec<(usize, String)>> {
        sections.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    };

    let dims = find("dims")
        .ok_or(SystemError::Format { line: 0, msg: "missing [dims] section".into() })?;
    let mut n = None;
    let mut m = None;
    let mut p = None;
    let mut ntheta = None;
    for (lineno, entry) in dims {
        let (k, v) = split_kv(entry, *lineno)?;
        let value: usize = v.trim().parse().map_err(|_| SystemError::Format {
            line: *lineno,
            msg: format!("bad integer `{}` for {}", v, k),
        })?;
        match k.as_str() {
            "n" => n = Some(value),
            "m" => m = Some(value),
            "p" => p = Some(value),
            "ntheta" => ntheta = Some(value),
            other => {
                return Err(SystemError::Format {
                    line: *lineno,
                    msg: format!("unknown dims key `{}`", other),
                })
            }
        }
    }
    let (n, m, p, n_theta) = match (n, m, p, ntheta) {
        (Some(n), Some(m), Some(p), Some(t)) => (n, m, p, t),
        _ => {
            return Err(SystemError::Format {
                line: 0,
                msg: "dims must define n, m, p, ntheta".into(),
            })
        }
    };

    let parse_matrix = |name: &str, rows: usize, cols: usize| -> Result<ParamMatrix, SystemError> {
        let entries = find(&name.to_lowercase()).ok_or(SystemError::Format {
            line: 0,
            msg: format!("missing [{}] section", name),
        })?;
        let mut data = Vec::new();
        for (lineno, e) in entries {
            let r = parse_rational(e).map_err(|pe| match pe {
                PolyError::Parse { col, msg, .. } => {
                    SystemError::Format { line: *lineno, msg: format!("column {}: {}", col, msg) }
                }
                other => SystemError::Poly(other),
            })?;
            data.push(r);
        }
        if data.len() != rows * cols {
            return Err(SystemError::ShapeMismatch {
                name: name.into(),
                got: data.len(),
                rows,
                cols,
            });
        }
        Ok(ParamMatrix::new(rows, cols, data))
    };

    let a = parse_matrix("A", n, n)?;
    let b = parse_matrix("B", n, m)?;
    let c = parse_matrix("C", p, n)?;
    let d = parse_matrix("D", p, m)?;

    let nominal = find("nominal")
        .ok_or(SystemError::Format { line: 0, msg: "missing [nominal] section".into() })?;
    let mut theta_star = None;
    for (lineno, entry) in nominal {
        let (k, v) = split_kv(entry, *lineno)?;
        if k != "theta_star" {
            return Err(SystemError::Format {
                line: *lineno,
                msg: format!("unknown nominal key `{}`", k),
            });
        }
        let vals: Result<Vec<f64>, _> = v.split(',').map(|s| s.trim().parse::<f64>()).collect();
        theta_star = Some(vals.map_err(|_| SystemError::Format {
            line: *lineno,
            msg: format!("bad theta_star vector `{}`", v),
        })?);
    }
    let theta_star =
        theta_star.ok_or(SystemError::Format { line: 0, msg: "missing theta_star".into() })?;
    if theta_star.len() != n_theta {
        return Err(SystemError::Format {
            line: 0,
            msg: format!("theta_star has {} entries, ntheta = {}", theta_star.len(), n_theta),
        });
    }

    let mut domain = Vec::new();
    if let Some(entries) = find("domain") {
        for (lineno, entry) in entries {
            let (k, v) = split_kv(entry, *lineno)?;
            let g = parse_rational(&v)
                .and_then(|r| r.as_polynomial())
                .map_err(|pe| SystemError::Format { line: *lineno, msg: pe.to_string() })?;
            domain.push((k, g));
        }
    }

    let mut normalize = false;
    if let Some(entries) = find("options") {
        for (lineno, entry) in entries {
            let (k, v) = split_kv(entry, *lineno)?;
            match k.as_str() {
                "normalize" => {
                    normalize = match v.trim() {
                        "true" => true,
                        "false" => false,
                        other => {
                            return Err(SystemError::Format {
                                line: *lineno,
                                msg: format!("normalize must be true or false, got `{}`", other),
                            })
                        }
                    }
                }
                other => {
                    return Err(SystemError::Format {
                        line: *lineno,
                        msg: format!("unknown option `{}`", other),
                    })
                }
            }
        }
    }

    let mut sys = UncertainSystem::new(a, b, c, d, theta_star, domain)?;
    sys.source_hash = content_hash(text);
    if normalize {
        let hash = sys.source_hash.clone();
        sys = sys.normalize()?;
        sys.source_hash = hash;
    }
    Ok(sys)
}

fn split_kv(entry: &str, line: usize) -> Result<(String, String), SystemError> {
    let Some(eq) = entry.find('=') else {
        return Err(SystemError::Format {
            line,
            msg: format!("expected key = value, got `{}`", entry),
        });
    };
    Ok((entry[..eq].trim().to_lowercase(), entry[eq + 1..].trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{ANALYTIC_EXAMPLE, NUMERIC_EXAMPLE};
    use crate::poly::parse_polynomial;

    #[test]
    fn load_numeric_example() {
        let sys = load_system(NUMERIC_EXAMPLE).unwrap();
        assert_eq!((sys.n, sys.m, sys.p, sys.n_theta), (1, 1, 1, 2));
        assert_eq!(
            sys.a.get(0, 0).as_polynomial().unwrap(),
            parse_polynomial("t1 + t2 - 3").unwrap()
        );
        let at = sys.eval_at(&[0.0, 0.0]).unwrap();
        assert_eq!(at.a[(0, 0)], -3.0);
    }

    #[test]
    fn nominal_outside_domain_rejected() {
        let text = NUMERIC_EXAMPLE.replace("theta_star = 0, 0", "theta_star = 2, 0");
        match load_system(&text) {
            Err(SystemError::NominalOutsideDomain { g, .. }) => assert_eq!(g, "g1"),
            other => panic!("expected domain rejection, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn empty_domain_accepted() {
        let text = NUMERIC_EXAMPLE
            .replace("g1 = -(t1 + 1.5)*(t1 - 1.5)\n", "")
            .replace("g2 = -(t2 + 1)*(t2 - 1)\n", "");
        let sys = load_system(&text).unwrap();
        assert!(sys.domain.is_empty());
    }

    #[test]
    fn cascade_deltas_numeric_example() {
        let sys = load_system(NUMERIC_EXAMPLE).unwrap();
        let cas = build_cascade(&sys).unwrap();
        // ΔA = -t1 - t2, ΔB = -t2, ΔC = t1
        assert_eq!(
            cas.abar.get(1, 0).as_polynomial().unwrap(),
            parse_polynomial("-t1 - t2").unwrap()
        );
        assert_eq!(cas.bbar.get(1, 0).as_polynomial().unwrap(), parse_polynomial("-t2").unwrap());
        assert_eq!(cas.cbar.get(1, 0).as_polynomial().unwrap(), parse_polynomial("t1").unwrap());
        // top-left block constant at A(θ*), top-right zero
        assert_eq!(cas.abar.get(0, 0).as_polynomial().unwrap(), Polynomial::constant(-3.0));
        assert!(cas.abar.get(0, 1).is_zero());
        // deltas vanish at θ*
        let da_at_star = cas.abar.get(1, 0).eval_theta(&sys.theta_star, DEN_TOL).unwrap();
        assert!(da_at_star.abs() < 1e-14);
        let ev = cas.eval_at(&[1.0, 0.0]).unwrap();
        let expect = nalgebra::dmatrix![-3.0, 0.0; -1.0, -2.0];
        assert!((ev.a.clone() - expect).norm() < 1e-14);
    }

    #[test]
    fn analytic_example_normalization() {
        let sys = load_system(ANALYTIC_EXAMPLE).unwrap();
        assert!(sys.normalized);
        assert_eq!(sys.theta_star, vec![0.0, 0.0]);
        // A(θ̃) = -(1+θ̃1)/(2+θ̃2)
        let a = sys.a.get(0, 0);
        assert_eq!(a.den(), &parse_polynomial("t2 + 2").unwrap());
        assert_eq!(a.num(), &parse_polynomial("-1 - t1").unwrap());
        // domain transformed to θ̃ ∈ [-0.9, 3]^2
        let g1 = &sys.domain[0].1;
        assert!(g1.eval_theta(&[0.0, 0.0]).unwrap() > 0.0);
        assert!(g1.eval_theta(&[-0.9, 0.0]).unwrap().abs() < 1e-12);
        assert!(g1.eval_theta(&[3.0, 0.0]).unwrap().abs() < 1e-12);
        assert!(g1.eval_theta(&[3.1, 0.0]).unwrap() < 0.0);
    }

    #[test]
    fn analytic_cascade_denominator() {
        let sys = load_system(ANALYTIC_EXAMPLE).unwrap();
        let cas = build_cascade(&sys).unwrap();
        // error-row common denominator proportional to 1 + θ*_2(1 + θ̃_2) = 2 + θ̃_2
        let bottom = cas.abar.row_block(1, 2);
        let (nums, den) = bottom.clear_denominators().unwrap();
        assert_eq!(den, parse_polynomial("t2 + 2").unwrap());
        assert_eq!(nums.len(), 2);
        // ΔA numerator: A(θ*) (θ*_2(θ̃2−θ̃1) − θ̃1) = −(θ̃2 − 2θ̃1)/2
        assert_eq!(nums[0], parse_polynomial("t1 - 0.5*t2").unwrap());
    }

    #[test]
    fn singular_evaluation_rejected() {
        let text = ANALYTIC_EXAMPLE.replace("normalize = true", "normalize = false");
        let sys = load_system(&text).unwrap();
        match sys.eval_at(&[1.0, -1.0]) {
            Err(SystemError::ParameterSingularity(_)) => {}
            other => panic!("expected singularity, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn hurwitz_sample_grid() {
        let sys = load_system(NUMERIC_EXAMPLE).unwrap();
        let mut grid = Vec::new();
        for i in 0..21 {
            for j in 0..21 {
                grid.push(vec![-1.5 + 3.0 * i as f64 / 20.0, -1.0 + 2.0 * j as f64 / 20.0]);
            }
        }
        let report = sys.hurwitz_sample_check(&grid, 1e-9).unwrap();
        assert!(report.all_stable());
        assert!(report.worst <= -0.5 + 1e-12);
        // corner point: abscissa exactly -0.5
        let corner = sys.hurwitz_sample_check(&[vec![1.5, 1.0]], 1e-9).unwrap();
        assert!((corner.worst + 0.5).abs() < 1e-12);
        // synthetic A(θ) = θ1 flagged unstable at θ1 = 1
        let unstable = UncertainSystem::new(
            ParamMatrix::new(1, 1, vec![parse_rational("t1").unwrap()]),
            ParamMatrix::zeros(1, 1),
            ParamMatrix::new(1, 1, vec![RationalFunction::constant(1.0)]),
            ParamMatrix::zeros(1, 1),
            vec![-1.0],
            vec![],
        )
        .unwrap();
        let rep = unstable.hurwitz_sample_check(&[vec![1.0]], 1e-9).unwrap();
        assert!(!rep.all_stable());
    }

    #[test]
    fn spectrum_union_block_triangular() {
        let sys = load_system(NUMERIC_EXAMPLE).unwrap();
        let cas = build_cascade(&sys).unwrap();
        for theta in [[0.5, -0.3], [1.2, 0.9], [-1.4, 0.2]] {
            let full = cas.eval_at(&theta).unwrap();
            let mut eigs: Vec<f64> = full.a.complex_eigenvalues().iter().map(|c| c.re).collect();
            eigs.sort_by(f64::total_cmp);
            let a_star = sys.nominal().unwrap().a[(0, 0)];
            let a_theta = sys.eval_at(&theta).unwrap().a[(0, 0)];
            let mut expect = vec![a_star, a_theta];
            expect.sort_by(f64::total_cmp);
            for (e, x) in eigs.iter().zip(&expect) {
                assert!((e - x).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn serialize_roundtrip() {
        for text in [NUMERIC_EXAMPLE, ANALYTIC_EXAMPLE] {
            let sys = load_system(text).unwrap();
            let re = load_system(&sys.serialize()).unwrap();
            assert_eq!(sys.a, re.a);
            assert_eq!(sys.b, re.b);
            assert_eq!(sys.c, re.c);
            assert_eq!(sys.d, re.d);
            assert_eq!(sys.theta_star, re.theta_star);
            assert_eq!(sys.domain, re.domain);
        }
    }
}
