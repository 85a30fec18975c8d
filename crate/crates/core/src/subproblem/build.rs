//! Assembles the convex surrogate problem around one operating point.

use std::f64::consts::LN_2;

use nalgebra::DMatrix;

use super::program::{CExpr, CExprMat, ConicProgram, LinExpr};
use crate::error::{Error, Result};
use crate::fp_aux::{AuxiliaryState, RateAux};
use crate::linalg::{c, cholesky_lower, clamp_eigenvalues, hermitian_part, inv_hpd, log2_det_hpd, trace_re, CMat};
use crate::link_model::{PrimalState, QuantizerState, SicOrder, TaskSplit, TransmitState};
use crate::scenario::{ChannelSet, SystemConfig};

/// Lower bound imposed on every fraction the subproblem may change.
pub const ALPHA_FLOOR: f64 = 1e-6;

/// Whether a task fraction is optimized or held at a value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fraction {
    Free,
    Fixed(f64),
}

impl Fraction {
    /// A fraction is active unless it is pinned at zero.
    pub fn is_active(self) -> bool {
        match self {
            Fraction::Free => true,
            Fraction::Fixed(v) => v > 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FractionPattern {
    pub alpha_0: Fraction,
    pub alpha_td: Vec<Fraction>,
    pub alpha_no: Vec<Fraction>,
}

impl FractionPattern {
    pub fn all_free(num_uavs: usize) -> Self {
        Self {
            alpha_0: Fraction::Free,
            alpha_td: vec![Fraction::Free; num_uavs],
            alpha_no: vec![Fraction::Free; num_uavs],
        }
    }

    /// Every fraction pinned at the values of `split`.
    pub fn fixed(split: &TaskSplit) -> Self {
        Self {
            alpha_0: Fraction::Fixed(split.alpha_0),
            alpha_td: split.alpha_td.iter().map(|&a| Fraction::Fixed(a)).collect(),
            alpha_no: split.alpha_no.iter().map(|&a| Fraction::Fixed(a)).collect(),
        }
    }

    pub fn num_uavs(&self) -> usize {
        self.alpha_td.len()
    }

    pub fn noma_active(&self) -> bool {
        self.alpha_no.iter().any(|f| f.is_active())
    }

    pub fn coop_active(&self) -> bool {
        self.alpha_0.is_active()
    }

    fn all(&self) -> impl Iterator<Item = Fraction> + '_ {
        std::iter::once(self.alpha_0).chain(self.alpha_td.iter().copied()).chain(self.alpha_no.iter().copied())
    }

    pub fn num_free(&self) -> usize {
        self.all().filter(|f| *f == Fraction::Free).count()
    }

    /// Sum of the pinned fractions.
    pub fn fixed_total(&self) -> f64 {
        self.all()
            .map(|f| match f {
                Fraction::Fixed(v) => v,
                Fraction::Free => 0.0,
            })
            .sum()
    }

    /// Overwrites pinned entries of `split` and raises free ones to the floor,
    /// keeping the total at one.
    pub fn project(&self, split: &TaskSplit) -> TaskSplit {
        let pick = |f: Fraction, v: f64| match f {
            Fraction::Fixed(x) => x,
            Fraction::Free => v.max(0.0),
        };
        let mut out = TaskSplit {
            alpha_0: pick(self.alpha_0, split.alpha_0),
            alpha_td: self.alpha_td.iter().zip(&split.alpha_td).map(|(&f, &v)| pick(f, v)).collect(),
            alpha_no: self.alpha_no.iter().zip(&split.alpha_no).map(|(&f, &v)| pick(f, v)).collect(),
        };
        let target = 1.0 - self.fixed_total();
        let free_slots = self.num_free();
        if free_slots == 0 {
            return out;
        }
        // Raise free entries to the floor and rescale the rest so the free
        // mass equals the target; a valid split is left unchanged.
        let mut free: Vec<&mut f64> = Vec::with_capacity(free_slots);
        if self.alpha_0 == Fraction::Free {
            free.push(&mut out.alpha_0);
        }
        for (f, v) in self.alpha_td.iter().zip(out.alpha_td.iter_mut()) {
            if *f == Fraction::Free {
                free.push(v);
            }
        }
        for (f, v) in self.alpha_no.iter().zip(out.alpha_no.iter_mut()) {
            if *f == Fraction::Free {
                free.push(v);
            }
        }
        let floor = ALPHA_FLOOR;
        for _ in 0..free_slots + 1 {
            let mut pinned = 0usize;
            let mut mass = 0.0;
            for v in free.iter_mut() {
                if **v <= floor {
                    **v = floor;
                    pinned += 1;
                } else {
                    mass += **v;
                }
            }
            let remaining = target - floor * pinned as f64;
            if mass <= 0.0 {
                let share = target / free_slots as f64;
                free.iter_mut().for_each(|v| **v = share);
                break;
            }
            let scale = remaining / mass;
            if (scale - 1.0).abs() < 1e-15 {
                break;
            }
            free.iter_mut().filter(|v| ***v > floor).for_each(|v| **v *= scale);
        }
        out
    }
}

/// Real and imaginary variable indices of a complex matrix (column-major).
#[derive(Clone, Debug)]
pub struct CMatVars {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<usize>,
    pub im: Vec<usize>,
}

impl CMatVars {
    fn new(p: &mut ConicProgram, name: &str, warm: &CMat) -> Self {
        let (rows, cols) = warm.shape();
        let mut re = Vec::with_capacity(rows * cols);
        let mut im = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                re.push(p.add_var(format!("{name}.re[{i},{j}]"), warm[(i, j)].re));
                im.push(p.add_var(format!("{name}.im[{i},{j}]"), warm[(i, j)].im));
            }
        }
        Self { rows, cols, re, im }
    }

    pub fn expr(&self) -> CExprMat {
        CExprMat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .re
                .iter()
                .zip(&self.im)
                .map(|(&r, &i)| CExpr {
                    re: LinExpr::var(r),
                    im: LinExpr::var(i),
                })
                .collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> CMat {
        CMat::from_fn(self.rows, self.cols, |i, j| {
            let idx = j * self.rows + i;
            c(x[self.re[idx]], x[self.im[idx]])
        })
    }

    /// Real entries of rows `r0..r0 + n`, for a per-UAV power constraint.
    fn row_block_entries(&self, r0: usize, n: usize) -> Vec<LinExpr> {
        let mut out = Vec::new();
        for j in 0..self.cols {
            for i in r0..r0 + n {
                let idx = j * self.rows + i;
                out.push(LinExpr::var(self.re[idx]));
                out.push(LinExpr::var(self.im[idx]));
            }
        }
        out
    }
}

/// Variables of a Hermitian matrix: real parts on and above the diagonal,
/// imaginary parts strictly above.
#[derive(Clone, Debug)]
pub struct HermVars {
    pub n: usize,
    re: Vec<usize>,
    im: Vec<usize>,
}

impl HermVars {
    fn new(p: &mut ConicProgram, name: &str, warm: &CMat) -> Self {
        let n = warm.nrows();
        let mut re = vec![usize::MAX; n * n];
        let mut im = vec![usize::MAX; n * n];
        for j in 0..n {
            for i in 0..=j {
                let z = (warm[(i, j)] + warm[(j, i)].conj()) * 0.5;
                re[i * n + j] = p.add_var(format!("{name}.re[{i},{j}]"), z.re);
                if i < j {
                    im[i * n + j] = p.add_var(format!("{name}.im[{i},{j}]"), z.im);
                }
            }
        }
        Self { n, re, im }
    }

    pub fn re(&self, i: usize, j: usize) -> LinExpr {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        LinExpr::var(self.re[a * self.n + b])
    }

    pub fn im(&self, i: usize, j: usize) -> LinExpr {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => LinExpr::zero(),
            std::cmp::Ordering::Less => LinExpr::var(self.im[i * self.n + j]),
            std::cmp::Ordering::Greater => LinExpr::term(self.im[j * self.n + i], -1.0),
        }
    }

    /// `tr(A Omega)` for Hermitian `A`.
    pub fn trace_with(&self, a: &CMat) -> LinExpr {
        let mut e = LinExpr::zero();
        for i in 0..self.n {
            e.add_scaled(&self.re(i, i), a[(i, i)].re);
            for j in i + 1..self.n {
                e.add_scaled(&self.re(i, j), 2.0 * a[(i, j)].re);
                e.add_scaled(&self.im(i, j), 2.0 * a[(i, j)].im);
            }
        }
        e
    }

    pub fn eval(&self, x: &[f64]) -> CMat {
        CMat::from_fn(self.n, self.n, |i, j| c(self.re(i, j).eval(x), self.im(i, j).eval(x)))
    }
}

/// Where each primal quantity lives in the program, for extraction.
#[derive(Clone, Debug)]
pub struct Layout {
    pub alpha_0: LinExpr,
    pub alpha_td: Vec<LinExpr>,
    pub alpha_no: Vec<LinExpr>,
    pub s_td: Vec<Option<CMatVars>>,
    pub s_no: Option<Vec<CMatVars>>,
    pub s_co: Option<CMatVars>,
    pub om_td: Vec<Vec<Option<HermVars>>>,
    pub om_no: Option<Vec<HermVars>>,
    pub om_co: Option<Vec<HermVars>>,
}

#[derive(Clone, Debug)]
pub struct SubproblemModel {
    pub program: ConicProgram,
    pub layout: Layout,
    pub pattern: FractionPattern,
}

struct Builder<'a> {
    p: ConicProgram,
    ch: &'a ChannelSet,
    cfg: &'a SystemConfig,
}

impl Builder<'_> {
    fn var(&mut self, name: impl Into<String>, warm: f64) -> LinExpr {
        LinExpr::var(self.p.add_var(name, warm))
    }

    fn fraction(&mut self, f: Fraction, name: String, warm: f64) -> LinExpr {
        match f {
            Fraction::Free => {
                let v = self.var(name, warm);
                self.p.add_ge0(v.clone().plus_const(-ALPHA_FLOOR));
                v
            }
            Fraction::Fixed(x) => LinExpr::constant(x),
        }
    }

    fn sqrt_var(&mut self, name: &str, tau: &LinExpr, warm_tau: f64) -> LinExpr {
        let s = self.var(name, warm_tau.max(0.0).sqrt());
        self.p.add_sum_squares_le(vec![s.clone()], tau.clone());
        s
    }

    fn power_cone(&mut self, entries: Vec<LinExpr>) {
        self.p.add_soc(LinExpr::constant(self.cfg.uav_power.sqrt()), entries);
    }

    /// `t <= ln det Omega`, returning `t`.
    fn log_det(&mut self, name: &str, om: &HermVars, warm: &CMat) -> Result<LinExpr> {
        let n = om.n;
        let big = 2 * n;
        // Real embedding [[Re, -Im], [Im, Re]] has determinant |det Omega|^2.
        let x_expr = |r: usize, col: usize| -> LinExpr {
            let (br, bc) = (r / n, col / n);
            let (i, j) = (r % n, col % n);
            match (br, bc) {
                (0, 0) | (1, 1) => om.re(i, j),
                (0, 1) => om.im(i, j).scaled(-1.0),
                _ => om.im(i, j),
            }
        };
        let warm_h = hermitian_part(warm);
        let x_warm = DMatrix::from_fn(big, big, |r, col| {
            let z = warm_h[(r % n, col % n)];
            match (r / n, col / n) {
                (0, 0) | (1, 1) => z.re,
                (0, 1) => -z.im,
                _ => z.im,
            }
        });
        let l = x_warm.cholesky().ok_or(Error::NotPositiveDefinite)?.l();
        let mut z = vec![usize::MAX; big * big];
        for j in 0..big {
            for i in j..big {
                z[i * big + j] = self.p.add_var(format!("{name}.z[{i},{j}]"), l[(i, j)] * l[(j, j)]);
            }
        }
        let z_expr = |i: usize, j: usize| -> LinExpr {
            if j <= i {
                LinExpr::var(z[i * big + j])
            } else {
                LinExpr::zero()
            }
        };
        self.p.add_psd(2 * big, |r, col| {
            if col < big {
                x_expr(r, col)
            } else if r < big {
                z_expr(r, col - big)
            } else if r == col {
                z_expr(r - big, r - big)
            } else {
                LinExpr::zero()
            }
        });
        let t_warm: f64 = (0..big).map(|j| l[(j, j)].ln()).sum();
        let t = self.var(format!("{name}.t"), t_warm);
        let mut sum_v = LinExpr::zero();
        for j in 0..big {
            let v = self.var(format!("{name}.v[{j}]"), 2.0 * l[(j, j)].ln());
            self.p.add_exp_le(v.clone(), z_expr(j, j));
            sum_v.add_scaled(&v, 1.0);
        }
        self.p.add_ge(sum_v, &t.clone().scaled(2.0));
        Ok(t)
    }

    /// `q >= Σ ||M_l X_l||_F^2`, returning `q`.
    fn quad_bound(&mut self, name: &str, terms: &[(CMat, CExprMat)]) -> LinExpr {
        let mut ws = Vec::new();
        let mut warm = 0.0;
        for (m, x) in terms {
            let prod = x.left_mul(m);
            for e in prod.real_entries() {
                let v = e.eval(&self.p.warm);
                warm += v * v;
                ws.push(e);
            }
        }
        let q = self.var(name, warm);
        self.p.add_sum_squares_le(ws, q.clone());
        q
    }

    /// `g >= upper bound on log2 det(Omega + sigma^2 I + Σ H S̃ S̃^H H^H) - log2 det Omega`.
    fn fenchel(&mut self, name: &str, g_warm: f64, sigma: &CMat, om: &HermVars, om_warm: &CMat, signals: &[(&CMat, &CExprMat)]) -> Result<LinExpr> {
        let n_a = sigma.nrows() as f64;
        let sinv = inv_hpd(sigma)?;
        let l = cholesky_lower(&sinv)?;
        let lh = l.adjoint();
        let constant = log2_det_hpd(sigma)? + self.cfg.noise_power * trace_re(&sinv) / LN_2 - n_a / LN_2;
        let terms: Vec<(CMat, CExprMat)> = signals.iter().map(|(h, s)| (&lh * *h, (*s).clone())).collect();
        let q = self.quad_bound(&format!("{name}.q"), &terms);
        let t = self.log_det(name, om, om_warm)?;
        let g = self.var(format!("{name}.G"), g_warm);
        let rhs = om
            .trace_with(&sinv)
            .plus(&q, 1.0)
            .plus(&t, -1.0)
            .scaled(1.0 / LN_2)
            .plus_const(constant);
        self.p.add_ge(g.clone(), &rhs);
        Ok(g)
    }

    /// `r <= lower bound on log2 det(I + S̃^H H^H N^{-1} H S̃)`.
    ///
    /// `N = sigma^2 I + blkdiag(Omega_i) + Σ_interferers H_l S̃_l S̃_l^H H_l^H`.
    fn rate_bound(
        &mut self,
        r: &LinExpr,
        name: &str,
        aux: &RateAux,
        h: &CMat,
        s: &CExprMat,
        interferers: &[(&CMat, &CExprMat)],
        oms: &[LinExpr],
    ) -> Result<()> {
        let d = aux.gamma.nrows();
        let ipg = hermitian_part(&(CMat::identity(d, d) + &aux.gamma));
        let c0 = log2_det_hpd(&ipg)? - trace_re(&aux.gamma) / LN_2;
        let dmat = h.adjoint() * &aux.phi * &ipg;
        let mut lin = LinExpr::zero();
        for j in 0..s.cols {
            for i in 0..s.rows {
                let e = s.get(i, j);
                lin.add_scaled(&e.re, 2.0 * dmat[(i, j)].re);
                lin.add_scaled(&e.im, 2.0 * dmat[(i, j)].im);
            }
        }
        let noise_const = self.cfg.noise_power * trace_re(&(&ipg * aux.phi.adjoint() * &aux.phi));
        let ch = cholesky_lower(&ipg)?;
        let left = ch.adjoint() * aux.phi.adjoint();
        let mut terms = vec![(&left * h, s.clone())];
        terms.extend(interferers.iter().map(|(hl, sl)| (&left * *hl, (*sl).clone())));
        let q = self.quad_bound(&format!("{name}.q"), &terms);
        let mut om_term = LinExpr::zero();
        for e in oms {
            om_term.add_scaled(e, 1.0);
        }
        let rhs = lin
            .plus(&om_term, -1.0)
            .plus(&q, -1.0)
            .plus_const(-noise_const)
            .scaled(1.0 / LN_2)
            .plus_const(c0);
        self.p.add_ge(rhs, r);
        Ok(())
    }

    /// `tr(Phi_i (I + Gamma) Phi_i^H Omega_i)` for every AP block `i`.
    fn omega_terms(&self, aux: &RateAux, oms: &[HermVars]) -> Vec<LinExpr> {
        let d = aux.gamma.nrows();
        let n_a = self.ch.ap_antennas();
        let ipg = CMat::identity(d, d) + &aux.gamma;
        oms.iter()
            .enumerate()
            .map(|(i, om)| {
                let phi_i = aux.phi.rows(i * n_a, n_a).into_owned();
                om.trace_with(&hermitian_part(&(&phi_i * &ipg * phi_i.adjoint())))
            })
            .collect()
    }

    /// Wireless-time constraint `tau_W >= b alpha / R` through the quadratic
    /// transform on `tau_W / alpha` and the hyperbolic cone `u r >= b / B`.
    fn wireless(&mut self, name: &str, s: &LinExpr, theta: f64, alpha: &LinExpr, r: &LinExpr) {
        let warm_s = s.eval(&self.p.warm);
        let warm_a = alpha.eval(&self.p.warm);
        let u = self.var(format!("{name}.u"), 2.0 * theta * warm_s - theta * theta * warm_a);
        let bound = s.clone().scaled(2.0 * theta).plus(alpha, -theta * theta);
        self.p.add_ge(bound, &u);
        self.p.add_product_ge(u, r.clone(), self.cfg.total_bits / self.cfg.bandwidth);
    }

    /// Fronthaul-time constraints `tau_F >= (B / C_F) tau_W G_i`.
    fn fronthaul(&mut self, name: &str, tau_w: &LinExpr, theta: f64, warm_tau_f: f64, gs: &[LinExpr]) -> LinExpr {
        let tau_f = self.var(format!("{name}.tauF"), warm_tau_f);
        let s = self.sqrt_var(&format!("{name}.sF"), &tau_f, warm_tau_f);
        let kappa = self.cfg.bandwidth / self.cfg.fronthaul_capacity;
        for g in gs {
            let lhs = s.clone().scaled(2.0 * theta).plus(tau_w, -theta * theta);
            self.p.add_ge(lhs, &g.clone().scaled(kappa));
        }
        tau_f
    }
}

pub fn build_subproblem(
    state: &PrimalState,
    aux: &AuxiliaryState,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    pi: &SicOrder,
    pattern: &FractionPattern,
) -> Result<SubproblemModel> {
    let (m, k_total) = (ch.num_aps(), ch.num_uavs());
    let n_u = ch.uav_antennas();
    if pattern.num_uavs() != k_total || state.split.num_uavs() != k_total {
        return Err(Error::MalformedProgram("fraction pattern does not match the channel".into()));
    }
    let mut b = Builder {
        p: ConicProgram::new(),
        ch,
        cfg,
    };
    let tl = &state.timeline;
    let split = &state.split;

    // Task fractions.
    let alpha_0 = b.fraction(pattern.alpha_0, "alpha0".into(), split.alpha_0);
    let alpha_td: Vec<LinExpr> = (0..k_total)
        .map(|k| b.fraction(pattern.alpha_td[k], format!("alphaTD[{k}]"), split.alpha_td[k]))
        .collect();
    let alpha_no: Vec<LinExpr> = (0..k_total)
        .map(|k| b.fraction(pattern.alpha_no[k], format!("alphaNO[{k}]"), split.alpha_no[k]))
        .collect();
    if pattern.num_free() > 0 {
        let mut total = alpha_0.clone();
        for k in 0..k_total {
            total.add_scaled(&alpha_td[k], 1.0);
            total.add_scaled(&alpha_no[k], 1.0);
        }
        b.p.add_eq(total.plus_const(-1.0));
        for k in 1..k_total {
            let diff = alpha_td[k]
                .clone()
                .plus(&alpha_no[k], 1.0)
                .plus(&alpha_td[k - 1], -1.0)
                .plus(&alpha_no[k - 1], -1.0);
            if !diff.clone().compact().is_constant() {
                b.p.add_ge0(diff);
            }
        }
    }

    // Transmit and quantizer variables of the active phases.
    let s_td: Vec<Option<CMatVars>> = (0..k_total)
        .map(|k| pattern.alpha_td[k].is_active().then(|| CMatVars::new(&mut b.p, &format!("S_TD[{k}]"), &state.tx.s_td[k])))
        .collect();
    let s_no: Option<Vec<CMatVars>> = pattern
        .noma_active()
        .then(|| (0..k_total).map(|k| CMatVars::new(&mut b.p, &format!("S_NO[{k}]"), &state.tx.s_no[k])).collect());
    let s_co = pattern.coop_active().then(|| CMatVars::new(&mut b.p, "S_CO", &state.tx.s_co));
    let om_td: Vec<Vec<Option<HermVars>>> = (0..m)
        .map(|i| {
            (0..k_total)
                .map(|k| {
                    pattern.alpha_td[k]
                        .is_active()
                        .then(|| HermVars::new(&mut b.p, &format!("Om_TD[{i},{k}]"), &state.quant.om_td[i][k]))
                })
                .collect()
        })
        .collect();
    let om_no: Option<Vec<HermVars>> = pattern
        .noma_active()
        .then(|| (0..m).map(|i| HermVars::new(&mut b.p, &format!("Om_NO[{i}]"), &state.quant.om_no[i])).collect());
    let om_co: Option<Vec<HermVars>> = pattern
        .coop_active()
        .then(|| (0..m).map(|i| HermVars::new(&mut b.p, &format!("Om_CO[{i}]"), &state.quant.om_co[i])).collect());

    // Power budgets.
    for s in s_td.iter().flatten() {
        b.power_cone(s.row_block_entries(0, n_u));
    }
    for s in s_no.iter().flatten() {
        b.power_cone(s.row_block_entries(0, n_u));
    }
    if let Some(s) = &s_co {
        for k in 0..k_total {
            b.power_cone(s.row_block_entries(k * n_u, n_u));
        }
    }

    let per_uav_exprs = |v: &Option<Vec<CMatVars>>| v.as_ref().map(|vs| vs.iter().map(CMatVars::expr).collect::<Vec<_>>());
    let s_no_expr = per_uav_exprs(&s_no);

    // TDMA slots.
    let mut tau_w_td = vec![LinExpr::zero(); k_total];
    let mut tau_f_td = vec![LinExpr::zero(); k_total];
    for k in 0..k_total {
        let (Some(s), true) = (&s_td[k], pattern.alpha_td[k].is_active()) else {
            continue;
        };
        let s_expr = s.expr();
        let oms: Vec<HermVars> = (0..m).map(|i| om_td[i][k].clone().expect("active slot")).collect();
        let r = b.var(format!("rTD[{k}]"), state.rates.r_td[k] / cfg.bandwidth);
        let om_terms = b.omega_terms(&aux.rate_td[k], &oms);
        b.rate_bound(&r, &format!("rTD[{k}]"), &aux.rate_td[k], &ch.per_uav[k], &s_expr, &[], &om_terms)?;
        let tau_w = b.var(format!("tauW_TD[{k}]"), tl.tau_w_td[k]);
        let sq = b.sqrt_var(&format!("sW_TD[{k}]"), &tau_w, tl.tau_w_td[k]);
        b.wireless(&format!("W_TD[{k}]"), &sq, aux.theta_w_td[k], &alpha_td[k], &r);
        let mut gs = Vec::with_capacity(m);
        for i in 0..m {
            let g = b.fenchel(
                &format!("G_TD[{i},{k}]"),
                aux.g_td[i][k],
                &aux.sigma_td[i][k],
                &oms[i],
                &state.quant.om_td[i][k],
                &[(ch.link(i, k), &s_expr)],
            )?;
            gs.push(g);
        }
        tau_f_td[k] = b.fronthaul(&format!("F_TD[{k}]"), &tau_w, aux.theta_f_td[k], tl.tau_f_td[k], &gs);
        tau_w_td[k] = tau_w;
    }

    // NOMA phase.
    let (mut tau_w_no, mut tau_f_no) = (LinExpr::zero(), LinExpr::zero());
    if let (Some(s_exprs), Some(oms)) = (&s_no_expr, &om_no) {
        let tau_w = b.var("tauW_NO", tl.tau_w_no);
        let sq = b.sqrt_var("sW_NO", &tau_w, tl.tau_w_no);
        for k in 0..k_total {
            if !pattern.alpha_no[k].is_active() {
                continue;
            }
            let r = b.var(format!("rNO[{k}]"), state.rates.r_no[k] / cfg.bandwidth);
            let interferers: Vec<(&CMat, &CExprMat)> = pi.later(k).iter().map(|&l| (&ch.per_uav[l], &s_exprs[l])).collect();
            let om_terms = b.omega_terms(&aux.rate_no[k], oms);
            b.rate_bound(&r, &format!("rNO[{k}]"), &aux.rate_no[k], &ch.per_uav[k], &s_exprs[k], &interferers, &om_terms)?;
            b.wireless(&format!("W_NO[{k}]"), &sq, aux.theta_w_no[k], &alpha_no[k], &r);
        }
        let mut gs = Vec::with_capacity(m);
        for i in 0..m {
            let signals: Vec<(&CMat, &CExprMat)> = (0..k_total).map(|k| (ch.link(i, k), &s_exprs[k])).collect();
            gs.push(b.fenchel(&format!("G_NO[{i}]"), aux.g_no[i], &aux.sigma_no[i], &oms[i], &state.quant.om_no[i], &signals)?);
        }
        tau_f_no = b.fronthaul("F_NO", &tau_w, aux.theta_f_no, tl.tau_f_no, &gs);
        tau_w_no = tau_w;
    }

    // Cooperative phase.
    let (mut tau_w_co, mut tau_f_co) = (LinExpr::zero(), LinExpr::zero());
    if let (Some(s), Some(oms)) = (&s_co, &om_co) {
        let s_expr = s.expr();
        let r = b.var("rCO", state.rates.r_co / cfg.bandwidth);
        let om_terms = b.omega_terms(&aux.rate_co, oms);
        b.rate_bound(&r, "rCO", &aux.rate_co, &ch.full, &s_expr, &[], &om_terms)?;
        let tau_w = b.var("tauW_CO", tl.tau_w_co);
        let sq = b.sqrt_var("sW_CO", &tau_w, tl.tau_w_co);
        b.wireless("W_CO", &sq, aux.theta_w_co, &alpha_0, &r);
        let mut gs = Vec::with_capacity(m);
        for i in 0..m {
            gs.push(b.fenchel(&format!("G_CO[{i}]"), aux.g_co[i], &aux.sigma_co[i], &oms[i], &state.quant.om_co[i], &[(&ch.per_ap[i], &s_expr)])?);
        }
        tau_f_co = b.fronthaul("F_CO", &tau_w, aux.theta_f_co, tl.tau_f_co, &gs);
        tau_w_co = tau_w;
    }

    // Sensing/TDMA/fronthaul pipeline.
    let tau_s_total = cfg.total_sensing_time;
    let mut prev_sw: Option<LinExpr> = None;
    let mut prev_swf: Option<LinExpr> = None;
    for k in 0..k_total {
        let sensing = alpha_0.clone().plus(&alpha_td[k], 1.0).plus(&alpha_no[k], 1.0).scaled(tau_s_total);
        let sw = b.var(format!("tauSW[{k}]"), tl.tau_sw_td[k]);
        b.p.add_ge(sw.clone(), &sensing.plus(&tau_w_td[k], 1.0));
        if let Some(p) = &prev_sw {
            b.p.add_ge(sw.clone(), &p.clone().plus(&tau_w_td[k], 1.0));
        }
        let swf = b.var(format!("tauSWF[{k}]"), tl.tau_swf_td[k]);
        b.p.add_ge(swf.clone(), &sw.clone().plus(&tau_f_td[k], 1.0));
        if let Some(p) = &prev_swf {
            b.p.add_ge(swf.clone(), &p.clone().plus(&tau_f_td[k], 1.0));
        }
        prev_sw = Some(sw);
        prev_swf = Some(swf);
    }
    let overlap = b.var("overlap", tl.tau_f_no.max(tl.tau_w_co));
    b.p.add_ge(overlap.clone(), &tau_f_no);
    b.p.add_ge(overlap.clone(), &tau_w_co);
    b.p.objective = prev_swf
        .expect("at least one UAV")
        .plus(&tau_w_no, 1.0)
        .plus(&overlap, 1.0)
        .plus(&tau_f_co, 1.0)
        .compact();

    Ok(SubproblemModel {
        program: b.p,
        layout: Layout {
            alpha_0,
            alpha_td,
            alpha_no,
            s_td,
            s_no,
            s_co,
            om_td,
            om_no,
            om_co,
        },
        pattern: pattern.clone(),
    })
}

fn cap_power(s: CMat, power: f64) -> CMat {
    let norm_sq: f64 = s.iter().map(|z| z.norm_sqr()).sum();
    if norm_sq > power {
        s.scale((power / norm_sq).sqrt())
    } else {
        s
    }
}

/// Reads a primal point back from a solution vector.
///
/// Fractions are floored and renormalized, transmit factors are scaled back
/// onto the power budget and quantizer covariances are projected onto the
/// admissible eigenvalue floor; inactive phases keep their previous values.
pub fn extract_point(model: &SubproblemModel, x: &[f64], previous: &PrimalState, cfg: &SystemConfig) -> (TaskSplit, TransmitState, QuantizerState) {
    let lay = &model.layout;
    let raw = TaskSplit {
        alpha_0: lay.alpha_0.eval(x),
        alpha_td: lay.alpha_td.iter().map(|e| e.eval(x)).collect(),
        alpha_no: lay.alpha_no.iter().map(|e| e.eval(x)).collect(),
    };
    let split = model.pattern.project(&raw);
    let p = cfg.uav_power;
    let n_u = cfg.uav_antennas;
    let mut tx = previous.tx.clone();
    for (k, s) in lay.s_td.iter().enumerate() {
        if let Some(s) = s {
            tx.s_td[k] = cap_power(s.eval(x), p);
        }
    }
    if let Some(vs) = &lay.s_no {
        for (k, s) in vs.iter().enumerate() {
            tx.s_no[k] = cap_power(s.eval(x), p);
        }
    }
    if let Some(s) = &lay.s_co {
        let mut m = s.eval(x);
        for k in 0..m.nrows() / n_u {
            let block = cap_power(m.rows(k * n_u, n_u).into_owned(), p);
            m.rows_mut(k * n_u, n_u).copy_from(&block);
        }
        tx.s_co = m;
    }
    let floor = cfg.omega_floor();
    let fix = |h: &HermVars| clamp_eigenvalues(&h.eval(x), floor);
    let mut quant = previous.quant.clone();
    for (i, row) in lay.om_td.iter().enumerate() {
        for (k, h) in row.iter().enumerate() {
            if let Some(h) = h {
                quant.om_td[i][k] = fix(h);
            }
        }
    }
    if let Some(hs) = &lay.om_no {
        quant.om_no = hs.iter().map(fix).collect();
    }
    if let Some(hs) = &lay.om_co {
        quant.om_co = hs.iter().map(fix).collect();
    }
    (split, tx, quant)
}
