//! Symmetric positive-definite factorizations for the Newton systems.
//!
//! The Hessian is stored either densely or as a lower band. Rank-one terms
//! that would widen the band (a row touching every slot, say) are kept aside
//! as low-rank columns and folded in with the Woodbury identity; equality
//! rows are eliminated through their Schur complement.

use crate::surrogate::LinearRow;

/// Symmetric matrix, lower triangle stored.
#[derive(Debug, Clone)]
pub(crate) enum SymMatrix {
    Dense { n: usize, a: Vec<f64> },
    Banded { n: usize, bw: usize, a: Vec<f64> },
}

impl SymMatrix {
    pub fn dense(n: usize) -> Self {
        SymMatrix::Dense { n, a: vec![0.0; n * n] }
    }

    pub fn banded(n: usize, bw: usize) -> Self {
        SymMatrix::Banded { n, bw, a: vec![0.0; n * (bw + 1)] }
    }

    pub fn n(&self) -> usize {
        match self {
            SymMatrix::Dense { n, .. } | SymMatrix::Banded { n, .. } => *n,
        }
    }

    pub fn clear(&mut self) {
        match self {
            SymMatrix::Dense { a, .. } | SymMatrix::Banded { a, .. } => a.fill(0.0),
        }
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        match self {
            SymMatrix::Dense { n, a } => a[i * *n + j] += v,
            SymMatrix::Banded { bw, a, .. } => {
                debug_assert!(i - j <= *bw, "entry ({i},{j}) outside band {bw}");
                a[i * (*bw + 1) + (i - j)] += v;
            }
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        match self {
            SymMatrix::Dense { n, a } => a[i * *n + i],
            SymMatrix::Banded { bw, a, .. } => a[i * (*bw + 1)],
        }
    }

    fn diag_mut(&mut self, i: usize) -> &mut f64 {
        match self {
            SymMatrix::Dense { n, a } => &mut a[i * *n + i],
            SymMatrix::Banded { bw, a, .. } => &mut a[i * (*bw + 1)],
        }
    }

    /// Cholesky factor of `self + reg * diag(1 + |h_ii|)`, or `None` if a
    /// pivot is not positive.
    pub fn cholesky(&self, reg: f64) -> Option<Cholesky> {
        let mut m = self.clone();
        for i in 0..m.n() {
            let d = m.diag(i);
            *m.diag_mut(i) = d + reg * (1.0 + d.abs());
        }
        match m {
            SymMatrix::Dense { n, mut a } => {
                for j in 0..n {
                    let mut d = a[j * n + j];
                    for k in 0..j {
                        d -= a[j * n + k] * a[j * n + k];
                    }
                    if !(d > 0.0) || !d.is_finite() {
                        return None;
                    }
                    let d = d.sqrt();
                    a[j * n + j] = d;
                    for i in (j + 1)..n {
                        let mut s = a[i * n + j];
                        for k in 0..j {
                            s -= a[i * n + k] * a[j * n + k];
                        }
                        a[i * n + j] = s / d;
                    }
                }
                Some(Cholesky::Dense { n, l: a })
            }
            SymMatrix::Banded { n, bw, mut a } => {
                let w = bw + 1;
                for i in 0..n {
                    let first = i.saturating_sub(bw);
                    for j in first..=i {
                        let mut s = a[i * w + (i - j)];
                        let k0 = first.max(j.saturating_sub(bw));
                        for k in k0..j {
                            s -= a[i * w + (i - k)] * a[j * w + (j - k)];
                        }
                        if i == j {
                            if !(s > 0.0) || !s.is_finite() {
                                return None;
                            }
                            a[i * w] = s.sqrt();
                        } else {
                            a[i * w + (i - j)] = s / a[j * w];
                        }
                    }
                }
                Some(Cholesky::Banded { n, bw, l: a })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Cholesky {
    Dense { n: usize, l: Vec<f64> },
    Banded { n: usize, bw: usize, l: Vec<f64> },
}

impl Cholesky {
    /// Solves `L L^T x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        match self {
            Cholesky::Dense { n, l } => {
                let n = *n;
                for i in 0..n {
                    let mut s = b[i];
                    for k in 0..i {
                        s -= l[i * n + k] * b[k];
                    }
                    b[i] = s / l[i * n + i];
                }
                for i in (0..n).rev() {
                    let mut s = b[i];
                    for k in (i + 1)..n {
                        s -= l[k * n + i] * b[k];
                    }
                    b[i] = s / l[i * n + i];
                }
            }
            Cholesky::Banded { n, bw, l } => {
                let (n, bw, w) = (*n, *bw, *bw + 1);
                for i in 0..n {
                    let mut s = b[i];
                    for k in i.saturating_sub(bw)..i {
                        s -= l[i * w + (i - k)] * b[k];
                    }
                    b[i] = s / l[i * w];
                }
                for i in (0..n).rev() {
                    let mut s = b[i];
                    for k in (i + 1)..n.min(i + bw + 1) {
                        s -= l[k * w + (k - i)] * b[k];
                    }
                    b[i] = s / l[i * w];
                }
            }
        }
    }
}

/// Small dense SPD solve used for the Woodbury and Schur systems.
fn small_spd(m: &[f64], k: usize) -> Option<Cholesky> {
    let mut s = SymMatrix::dense(k);
    for i in 0..k {
        for j in 0..=i {
            s.add(i, j, m[i * k + j]);
        }
    }
    s.cholesky(0.0)
}

/// `H = core + sum_k c_k c_k^T`, factored once per Newton step.
pub(crate) struct NewtonSystem<'a> {
    core: Cholesky,
    /// `core^-1 c_k` for each low-rank column.
    w: Vec<Vec<f64>>,
    cols: &'a [Vec<f64>],
    capacitance: Option<Cholesky>,
    eq: &'a [LinearRow],
    /// `H^-1 a_j` for each equality row.
    h_inv_eq: Vec<Vec<f64>>,
    schur: Option<Cholesky>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Singular;

impl<'a> NewtonSystem<'a> {
    pub fn new(core: Cholesky, cols: &'a [Vec<f64>], eq: &'a [LinearRow]) -> Result<Self, Singular> {
        let r = cols.len();
        let w: Vec<Vec<f64>> = cols
            .iter()
            .map(|c| {
                let mut v = c.clone();
                core.solve(&mut v);
                v
            })
            .collect();
        let capacitance = if r > 0 {
            let mut m = vec![0.0; r * r];
            for i in 0..r {
                for j in 0..=i {
                    let v: f64 = cols[i].iter().zip(&w[j]).map(|(a, b)| a * b).sum();
                    m[i * r + j] = v + if i == j { 1.0 } else { 0.0 };
                }
            }
            Some(small_spd(&m, r).ok_or(Singular)?)
        } else {
            None
        };
        let mut sys = Self { core, w, cols, capacitance, eq, h_inv_eq: Vec::new(), schur: None };
        if !eq.is_empty() {
            let n = sys.n();
            let p = eq.len();
            sys.h_inv_eq = eq
                .iter()
                .map(|row| {
                    let mut v = vec![0.0; n];
                    for &(i, a) in &row.coeffs {
                        v[i] += a;
                    }
                    sys.solve_h(&mut v);
                    v
                })
                .collect();
            let mut m = vec![0.0; p * p];
            for i in 0..p {
                for j in 0..=i {
                    m[i * p + j] = eq[i].coeffs.iter().map(|&(k, a)| a * sys.h_inv_eq[j][k]).sum();
                }
            }
            sys.schur = Some(small_spd(&m, p).ok_or(Singular)?);
        }
        Ok(sys)
    }

    fn n(&self) -> usize {
        match &self.core {
            Cholesky::Dense { n, .. } | Cholesky::Banded { n, .. } => *n,
        }
    }

    /// `b <- H^-1 b`.
    fn solve_h(&self, b: &mut [f64]) {
        self.core.solve(b);
        if let Some(cap) = &self.capacitance {
            let mut y: Vec<f64> = self.cols.iter().map(|c| c.iter().zip(b.iter()).map(|(a, v)| a * v).sum()).collect();
            cap.solve(&mut y);
            for (wk, yk) in self.w.iter().zip(&y) {
                for (bi, wi) in b.iter_mut().zip(wk) {
                    *bi -= wi * yk;
                }
            }
        }
    }

    /// Newton step `dx` minimising the quadratic model with gradient `g`,
    /// restricted to the null space of the equality rows, together with the
    /// multipliers `nu` of those rows (`H dx + A^T nu = -g`).
    pub fn direction(&self, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut dx: Vec<f64> = g.iter().map(|v| -v).collect();
        self.solve_h(&mut dx);
        let mut nu = Vec::new();
        if let Some(schur) = &self.schur {
            // nu solves S nu = A dx0, then dx = dx0 - H^-1 A^T nu
            nu = self.eq.iter().map(|row| row.coeffs.iter().map(|&(k, a)| a * dx[k]).sum()).collect();
            schur.solve(&mut nu);
            for (hk, nk) in self.h_inv_eq.iter().zip(&nu) {
                for (d, h) in dx.iter_mut().zip(hk) {
                    *d -= h * nk;
                }
            }
        }
        (dx, nu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, bw: usize) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            m[i][i] = 4.0 + i as f64 * 0.1;
            for d in 1..=bw {
                if i + d < n {
                    let v = 1.0 / (1.0 + d as f64 + i as f64 * 0.01);
                    m[i][i + d] = v;
                    m[i + d][i] = v;
                }
            }
        }
        m
    }

    fn matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        m.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    #[test]
    fn banded_and_dense_agree() {
        let (n, bw) = (12, 3);
        let m = spd(n, bw);
        let mut dense = SymMatrix::dense(n);
        let mut band = SymMatrix::banded(n, bw);
        for i in 0..n {
            for j in 0..=i {
                if m[i][j] != 0.0 {
                    dense.add(i, j, m[i][j]);
                    band.add(i, j, m[i][j]);
                }
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut a = rhs.clone();
        let mut b = rhs.clone();
        dense.cholesky(0.0).unwrap().solve(&mut a);
        band.cholesky(0.0).unwrap().solve(&mut b);
        let back = matvec(&m, &a);
        for i in 0..n {
            assert!((a[i] - b[i]).abs() < 1e-13);
            assert!((back[i] - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn low_rank_and_equalities() {
        let (n, bw) = (8, 1);
        let m = spd(n, bw);
        let mut band = SymMatrix::banded(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(1)..=i {
                band.add(i, j, m[i][j]);
            }
        }
        let cols = vec![vec![1.0; n]];
        let eq = vec![LinearRow { coeffs: vec![(0, 1.0), (7, 1.0)], rhs: 0.0 }];
        let sys = NewtonSystem::new(band.cholesky(0.0).unwrap(), &cols, &eq).unwrap();
        let g: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let (dx, _) = sys.direction(&g);
        // KKT: (M + 11^T) dx + g + nu a = 0, a^T dx = 0
        assert!((dx[0] + dx[7]).abs() < 1e-13);
        let mut full = m.clone();
        for row in full.iter_mut() {
            for v in row.iter_mut() {
                *v += 1.0;
            }
        }
        let r: Vec<f64> = matvec(&full, &dx).iter().zip(&g).map(|(a, b)| a + b).collect();
        // residual must be a multiple of the equality normal (1 at 0 and 7)
        let nu = -r[0];
        for (i, ri) in r.iter().enumerate() {
            let want = if i == 0 || i == 7 { -nu } else { 0.0 };
            assert!((ri - want).abs() < 1e-12, "{i}: {ri}");
        }
    }

    #[test]
    fn indefinite_matrix_fails_without_regularisation() {
        let mut m = SymMatrix::dense(2);
        m.add(0, 0, 1.0);
        m.add(1, 0, 2.0);
        m.add(1, 1, 1.0);
        assert!(m.cholesky(0.0).is_none());
    }
}
