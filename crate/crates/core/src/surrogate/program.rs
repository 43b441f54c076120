//! Container for smooth concave maximisation problems over linear, box,
//! second-order-cone and hyperbolic constraints.

use std::fmt;

/// `coeffs . x + constant`, with sparse coefficients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineExpr {
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn new(coeffs: Vec<(usize, f64)>, constant: f64) -> Self {
        Self { coeffs, constant }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + dot(&self.coeffs, x)
    }

    /// Directional change `coeffs . dx`.
    pub fn slope(&self, dx: &[f64]) -> f64 {
        dot(&self.coeffs, dx)
    }
}

pub(crate) fn dot(coeffs: &[(usize, f64)], x: &[f64]) -> f64 {
    coeffs.iter().map(|&(i, a)| a * x[i]).sum()
}

/// `coeffs . x <= rhs` (or `== rhs` when used as an equality row).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.rhs - dot(&self.coeffs, x)
    }
}

/// `|| [e_1(x), ..., e_k(x)] || <= bound(x)` for affine `e_i` and `bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormRow {
    pub terms: Vec<AffineExpr>,
    pub bound: AffineExpr,
}

impl NormRow {
    pub fn norm(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt()
    }
}

/// `x_i * x_j >= k` with `x_i, x_j >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperbolicRow {
    pub i: usize,
    pub j: usize,
    pub k: f64,
}

/// Contributes `-weight * (sum_v (x_v - c_v)^2 + offset)` to the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTerm {
    pub weight: f64,
    pub centers: Vec<(usize, f64)>,
    pub offset: f64,
}

impl QuadraticTerm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let sq: f64 = self.centers.iter().map(|&(v, c)| (x[v] - c).powi(2)).sum();
        -self.weight * (sq + self.offset)
    }
}

/// Contributes `weight * ln(1 + arg(x))` to the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTerm {
    pub weight: f64,
    pub arg: AffineExpr,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Objective {
    pub constant: f64,
    pub linear: Vec<(usize, f64)>,
    pub quadratic: Vec<QuadraticTerm>,
    pub log: Vec<LogTerm>,
}

impl Objective {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut f = self.constant + dot(&self.linear, x);
        for q in &self.quadratic {
            f += q.eval(x);
        }
        for l in &self.log {
            f += l.weight * l.arg.eval(x).ln_1p();
        }
        f
    }
}

/// A concave maximisation problem with a strictly feasible start point.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredConvexProgram {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub objective: Objective,
    pub linear: Vec<LinearRow>,
    pub norms: Vec<NormRow>,
    pub hyperbolic: Vec<HyperbolicRow>,
    pub equalities: Vec<LinearRow>,
    pub start: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProgramError {
    #[error("{0} references a variable outside 0..{1}")]
    Index(String, usize),
    #[error("start point has {got} entries, program has {want} variables")]
    StartLength { got: usize, want: usize },
    #[error("{0} must be non-negative")]
    Sign(String),
    #[error("{0} is not finite")]
    NotFinite(String),
}

/// Identifies one constraint row for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowRef {
    Lower(usize),
    Upper(usize),
    Linear(usize),
    Norm(usize),
    Hyperbolic(usize),
    Equality(usize),
    LogDomain(usize),
}

impl fmt::Display for RowRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowRef::Lower(i) => write!(f, "lower bound of x{i}"),
            RowRef::Upper(i) => write!(f, "upper bound of x{i}"),
            RowRef::Linear(i) => write!(f, "linear row {i}"),
            RowRef::Norm(i) => write!(f, "norm row {i}"),
            RowRef::Hyperbolic(i) => write!(f, "hyperbolic row {i}"),
            RowRef::Equality(i) => write!(f, "equality row {i}"),
            RowRef::LogDomain(i) => write!(f, "domain of log term {i}"),
        }
    }
}

impl StructuredConvexProgram {
    /// An unconstrained program in `n` variables with a zero objective.
    pub fn new(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            objective: Objective::default(),
            linear: Vec::new(),
            norms: Vec::new(),
            hyperbolic: Vec::new(),
            equalities: Vec::new(),
            start: vec![0.0; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add_le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.linear.push(LinearRow { coeffs, rhs });
    }

    pub fn add_ge(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        let coeffs = coeffs.into_iter().map(|(i, a)| (i, -a)).collect();
        self.linear.push(LinearRow { coeffs, rhs: -rhs });
    }

    pub fn add_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(LinearRow { coeffs, rhs });
    }

    pub fn add_norm(&mut self, terms: Vec<AffineExpr>, bound: AffineExpr) {
        self.norms.push(NormRow { terms, bound });
    }

    pub fn add_hyperbolic(&mut self, i: usize, j: usize, k: f64) {
        self.hyperbolic.push(HyperbolicRow { i, j, k });
    }

    /// Self-concordance parameter of the barrier: one per linear row and
    /// finite bound, two per cone row.
    pub fn barrier_parameter(&self) -> f64 {
        let bounds = self.lower.iter().chain(&self.upper).filter(|b| b.is_finite()).count();
        let cones = self.norms.len() + self.hyperbolic.len();
        (bounds + self.linear.len() + 2 * cones) as f64
    }

    /// Structural checks: indices, signs, finiteness.
    pub fn check(&self) -> Result<(), ProgramError> {
        let n = self.num_vars();
        if self.upper.len() != n {
            return Err(ProgramError::StartLength { got: self.upper.len(), want: n });
        }
        if self.start.len() != n {
            return Err(ProgramError::StartLength { got: self.start.len(), want: n });
        }
        let idx = |what: String, ids: &mut dyn Iterator<Item = usize>| -> Result<(), ProgramError> {
            for i in ids {
                if i >= n {
                    return Err(ProgramError::Index(what, n));
                }
            }
            Ok(())
        };
        idx("objective".into(), &mut self.objective.linear.iter().map(|c| c.0))?;
        for (k, q) in self.objective.quadratic.iter().enumerate() {
            idx(format!("quadratic term {k}"), &mut q.centers.iter().map(|c| c.0))?;
            if !(q.weight >= 0.0) {
                return Err(ProgramError::Sign(format!("quadratic weight {k}")));
            }
        }
        for (k, l) in self.objective.log.iter().enumerate() {
            idx(format!("log term {k}"), &mut l.arg.coeffs.iter().map(|c| c.0))?;
            if !(l.weight >= 0.0) {
                return Err(ProgramError::Sign(format!("log weight {k}")));
            }
        }
        for (k, r) in self.linear.iter().enumerate() {
            idx(format!("linear row {k}"), &mut r.coeffs.iter().map(|c| c.0))?;
        }
        for (k, r) in self.equalities.iter().enumerate() {
            idx(format!("equality row {k}"), &mut r.coeffs.iter().map(|c| c.0))?;
        }
        for (k, r) in self.norms.iter().enumerate() {
            idx(
                format!("norm row {k}"),
                &mut r.terms.iter().chain(std::iter::once(&r.bound)).flat_map(|e| e.coeffs.iter().map(|c| c.0)),
            )?;
        }
        for (k, h) in self.hyperbolic.iter().enumerate() {
            idx(format!("hyperbolic row {k}"), &mut [h.i, h.j].into_iter())?;
            if h.i == h.j {
                return Err(ProgramError::Index(format!("hyperbolic row {k} repeats x{}", h.i), n));
            }
            if !(h.k >= 0.0) {
                return Err(ProgramError::Sign(format!("hyperbolic constant {k}")));
            }
        }
        if let Some(i) = self.start.iter().position(|v| !v.is_finite()) {
            return Err(ProgramError::NotFinite(format!("start[{i}]")));
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Smallest strict-feasibility margin of `x` over all inequality rows and
    /// log-term domains, with the row attaining it. Positive means strictly
    /// feasible. Equality rows are not included.
    pub fn interior_margin(&self, x: &[f64]) -> (f64, Option<RowRef>) {
        let mut worst = (f64::INFINITY, None);
        let mut see = |m: f64, r: RowRef| {
            if !(m >= worst.0) {
                worst = (m, Some(r));
            }
        };
        for (i, (&lo, &v)) in self.lower.iter().zip(x).enumerate() {
            if lo.is_finite() {
                see(v - lo, RowRef::Lower(i));
            }
        }
        for (i, (&up, &v)) in self.upper.iter().zip(x).enumerate() {
            if up.is_finite() {
                see(up - v, RowRef::Upper(i));
            }
        }
        for (k, r) in self.linear.iter().enumerate() {
            see(r.slack(x), RowRef::Linear(k));
        }
        for (k, r) in self.norms.iter().enumerate() {
            see(r.bound.eval(x) - r.norm(x), RowRef::Norm(k));
        }
        for (k, h) in self.hyperbolic.iter().enumerate() {
            let m = (x[h.i] * x[h.j] - h.k).min(x[h.i]).min(x[h.j]);
            see(m, RowRef::Hyperbolic(k));
        }
        for (k, l) in self.objective.log.iter().enumerate() {
            see(1.0 + l.arg.eval(x), RowRef::LogDomain(k));
        }
        worst
    }

    /// Largest violation of any constraint row (zero when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (&lo, &v) in self.lower.iter().zip(x) {
            worst = worst.max(lo - v);
        }
        for (&up, &v) in self.upper.iter().zip(x) {
            worst = worst.max(v - up);
        }
        for r in &self.linear {
            worst = worst.max(-r.slack(x));
        }
        for r in &self.norms {
            worst = worst.max(r.norm(x) - r.bound.eval(x));
        }
        for h in &self.hyperbolic {
            worst = worst.max(h.k - x[h.i] * x[h.j]).max(-x[h.i]).max(-x[h.j]);
        }
        for r in &self.equalities {
            worst = worst.max(r.slack(x).abs());
        }
        worst
    }

    /// Largest absolute residual over the equality rows.
    pub fn equality_residual(&self, x: &[f64]) -> f64 {
        self.equalities.iter().map(|r| r.slack(x).abs()).fold(0.0, f64::max)
    }
}
