//! A minimal conic-program representation with warm values.
//!
//! Constraints are stored as lists of affine rows that must lie in a cone,
//! which maps one-to-one onto the `b - A x ∈ K` form used by interior-point
//! solvers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::linalg::CMat;

/// Affine expression `constant + Σ coef * x[var]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: usize) -> Self {
        Self {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(v: usize, coef: f64) -> Self {
        Self {
            terms: vec![(v, coef)],
            constant: 0.0,
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        if scale == 0.0 {
            return;
        }
        self.terms.extend(other.terms.iter().map(|&(v, c)| (v, c * scale)));
        self.constant += scale * other.constant;
    }

    pub fn plus(mut self, other: &LinExpr, scale: f64) -> Self {
        self.add_scaled(other, scale);
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }

    /// Merges duplicate variables and drops exact zeros.
    pub fn compact(mut self) -> Self {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (v, c) in self.terms.drain(..) {
            *merged.entry(v).or_insert(0.0) += c;
        }
        self.terms = merged.into_iter().filter(|&(_, c)| c != 0.0).collect();
        self
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }
}

/// Complex affine expression.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CExpr {
    pub re: LinExpr,
    pub im: LinExpr,
}

/// Column-major matrix of complex affine expressions.
#[derive(Clone, Debug, PartialEq)]
pub struct CExprMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<CExpr>,
}

impl CExprMat {
    pub fn constant(m: &CMat) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let z = m[(i, j)];
                data.push(CExpr {
                    re: LinExpr::constant(z.re),
                    im: LinExpr::constant(z.im),
                });
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> &CExpr {
        &self.data[j * self.rows + i]
    }

    /// `M * self` for a constant complex matrix `M`.
    pub fn left_mul(&self, m: &CMat) -> CExprMat {
        assert_eq!(m.ncols(), self.rows);
        let mut data = Vec::with_capacity(m.nrows() * self.cols);
        for j in 0..self.cols {
            for i in 0..m.nrows() {
                let mut e = CExpr::default();
                for l in 0..self.rows {
                    let a = m[(i, l)];
                    let x = self.get(l, j);
                    e.re.add_scaled(&x.re, a.re);
                    e.re.add_scaled(&x.im, -a.im);
                    e.im.add_scaled(&x.im, a.re);
                    e.im.add_scaled(&x.re, a.im);
                }
                data.push(CExpr {
                    re: e.re.compact(),
                    im: e.im.compact(),
                });
            }
        }
        CExprMat {
            rows: m.nrows(),
            cols: self.cols,
            data,
        }
    }

    /// Real and imaginary parts of every entry, in order.
    pub fn real_entries(&self) -> Vec<LinExpr> {
        self.data.iter().flat_map(|e| [e.re.clone(), e.im.clone()]).collect()
    }

    pub fn eval(&self, x: &[f64]) -> CMat {
        CMat::from_fn(self.rows, self.cols, |i, j| {
            let e = self.get(i, j);
            crate::linalg::c(e.re.eval(x), e.im.eval(x))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeKind {
    /// Every row equals zero.
    Zero,
    /// Every row is non-negative.
    Nonneg,
    /// `rows[0] >= ||rows[1..]||`.
    Soc,
    /// `rows[1] * exp(rows[0] / rows[1]) <= rows[2]`.
    Exp,
    /// Scaled upper triangle (column-wise, off-diagonals times `sqrt 2`)
    /// of an `n x n` positive semidefinite matrix.
    Psd(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConeBlock {
    pub kind: ConeKind,
    pub rows: Vec<LinExpr>,
}

impl ConeBlock {
    /// Distance-like violation of the cone at `x` (zero when feasible).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v: Vec<f64> = self.rows.iter().map(|r| r.eval(x)).collect();
        match self.kind {
            ConeKind::Zero => v.iter().map(|a| a.abs()).fold(0.0, f64::max),
            ConeKind::Nonneg => v.iter().map(|a| (-a).max(0.0)).fold(0.0, f64::max),
            ConeKind::Soc => {
                let norm = v[1..].iter().map(|a| a * a).sum::<f64>().sqrt();
                (norm - v[0]).max(0.0)
            }
            ConeKind::Exp => {
                let (a, b, c) = (v[0], v[1], v[2]);
                if b <= 0.0 {
                    // Closure of the cone: b = 0 requires a <= 0 and c >= 0.
                    return (-b).max(0.0) + a.max(0.0) + (-c).max(0.0);
                }
                (b * (a / b).exp() - c).max(0.0)
            }
            ConeKind::Psd(n) => {
                let m = svec_to_symmetric(&v, n);
                let min = m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
                (-min).max(0.0)
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }
}

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

pub(crate) fn svec_to_symmetric(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut idx = 0;
    for col in 0..n {
        for row in 0..=col {
            if row == col {
                m[(row, col)] = v[idx];
            } else {
                m[(row, col)] = v[idx] / std::f64::consts::SQRT_2;
                m[(col, row)] = m[(row, col)];
            }
            idx += 1;
        }
    }
    m
}

/// Minimize `objective` subject to every cone block.
#[derive(Clone, Debug, Default)]
pub struct ConicProgram {
    pub names: Vec<String>,
    pub warm: Vec<f64>,
    pub objective: LinExpr,
    pub cones: Vec<ConeBlock>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.warm.len()
    }

    pub fn num_rows(&self) -> usize {
        self.cones.iter().map(ConeBlock::dim).sum()
    }

    pub fn add_var(&mut self, name: impl Into<String>, warm: f64) -> usize {
        self.names.push(name.into());
        self.warm.push(warm);
        self.warm.len() - 1
    }

    fn push(&mut self, kind: ConeKind, rows: Vec<LinExpr>) {
        let rows = rows.into_iter().map(LinExpr::compact).collect();
        self.cones.push(ConeBlock { kind, rows });
    }

    /// `e == 0`.
    pub fn add_eq(&mut self, e: LinExpr) {
        self.push(ConeKind::Zero, vec![e]);
    }

    /// `e >= 0`.
    pub fn add_ge0(&mut self, e: LinExpr) {
        self.push(ConeKind::Nonneg, vec![e]);
    }

    /// `a >= b`.
    pub fn add_ge(&mut self, a: LinExpr, b: &LinExpr) {
        self.add_ge0(a.plus(b, -1.0));
    }

    /// `||xs|| <= t`.
    pub fn add_soc(&mut self, t: LinExpr, xs: Vec<LinExpr>) {
        let mut rows = Vec::with_capacity(xs.len() + 1);
        rows.push(t);
        rows.extend(xs);
        self.push(ConeKind::Soc, rows);
    }

    /// `Σ ws_j^2 <= t`, as `||(2 w, t - 1)|| <= t + 1`.
    pub fn add_sum_squares_le(&mut self, ws: Vec<LinExpr>, t: LinExpr) {
        let mut xs: Vec<LinExpr> = ws.into_iter().map(|w| w.scaled(2.0)).collect();
        xs.push(t.clone().plus_const(-1.0));
        self.add_soc(t.plus_const(1.0), xs);
    }

    /// `u * r >= k` with `u, r >= 0`, as `||(2 sqrt k, u - r)|| <= u + r`.
    pub fn add_product_ge(&mut self, u: LinExpr, r: LinExpr, k: f64) {
        let sum = u.clone().plus(&r, 1.0);
        let diff = u.plus(&r, -1.0);
        self.add_soc(sum, vec![LinExpr::constant(2.0 * k.sqrt()), diff]);
    }

    /// `a <= ln(c)`, via `exp(a) <= c`.
    pub fn add_exp_le(&mut self, a: LinExpr, c: LinExpr) {
        self.push(ConeKind::Exp, vec![a, LinExpr::constant(1.0), c]);
    }

    /// Symmetric matrix of expressions, given by its upper triangle `upper[col][row]`
    /// for `row <= col`, constrained to be positive semidefinite.
    pub fn add_psd(&mut self, n: usize, entry: impl Fn(usize, usize) -> LinExpr) {
        let mut rows = Vec::with_capacity(svec_len(n));
        for col in 0..n {
            for row in 0..=col {
                let e = entry(row, col);
                rows.push(if row == col { e } else { e.scaled(std::f64::consts::SQRT_2) });
            }
        }
        self.push(ConeKind::Psd(n), rows);
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Largest cone violation at `x`, scaled by the magnitude of the block.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.cones
            .iter()
            .map(|b| {
                let scale = 1.0 + b.rows.iter().map(|r| r.eval(x).abs()).fold(0.0, f64::max);
                b.violation(x) / scale
            })
            .fold(0.0, f64::max)
    }

    /// Index and violation of the worst block, for diagnostics.
    pub fn worst_block(&self, x: &[f64]) -> Option<(usize, f64)> {
        self.cones
            .iter()
            .enumerate()
            .map(|(i, b)| (i, b.violation(x)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Text dump in a CBF-like layout: variables, objective, cones and
    /// affine rows, one nonzero per line.
    pub fn write_cbf(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "VER\n3\n\nOBJSENSE\nMIN\n\nVAR\n{} 1\nF {}\n", self.num_vars(), self.num_vars());
        let _ = writeln!(out, "CON\n{} {}", self.num_rows(), self.cones.len());
        for b in &self.cones {
            let tag = match b.kind {
                ConeKind::Zero => "L=".to_string(),
                ConeKind::Nonneg => "L+".to_string(),
                ConeKind::Soc => "Q".to_string(),
                ConeKind::Exp => "EXP".to_string(),
                ConeKind::Psd(n) => format!("SVEC{n}"),
            };
            let _ = writeln!(out, "{tag} {}", b.dim());
        }
        let obj = self.objective.clone().compact();
        let _ = writeln!(out, "\nOBJACOORD\n{}", obj.terms.len());
        for (v, c) in &obj.terms {
            let _ = writeln!(out, "{v} {c:e}");
        }
        let _ = writeln!(out, "\nOBJBCOORD\n{:e}", obj.constant);
        let mut acoord = Vec::new();
        let mut bcoord = Vec::new();
        let mut row = 0;
        for b in &self.cones {
            for r in &b.rows {
                for (v, c) in &r.terms {
                    acoord.push((row, *v, *c));
                }
                if r.constant != 0.0 {
                    bcoord.push((row, r.constant));
                }
                row += 1;
            }
        }
        let _ = writeln!(out, "\nACOORD\n{}", acoord.len());
        for (r, v, c) in acoord {
            let _ = writeln!(out, "{r} {v} {c:e}");
        }
        let _ = writeln!(out, "\nBCOORD\n{}", bcoord.len());
        for (r, c) in bcoord {
            let _ = writeln!(out, "{r} {c:e}");
        }
        let _ = writeln!(out, "\n# variable names");
        for (i, n) in self.names.iter().enumerate() {
            let _ = writeln!(out, "# {i} {n} warm={:e}", self.warm[i]);
        }
        out
    }
}
