//! Continuous relaxation of the linearized subset problem at a tree node.
//!
//! With caps `Π_k` on the squared residuals the node problem becomes
//!
//! ```text
//! min Σ u_k
//!   u_k ≥ 0,  u_k + Π_k (1 − w_k) ≥ r_k²,  r = y − Xβ,
//!   eᵀw = h,  0 ≤ w ≤ 1,  w_k = 1 on s1,  w_k = 0 on s0.
//! ```
//!
//! Each coupling constraint is a rotated cone membership
//! `(u_k + Π_k(1 − w_k), ½, r_k) ∈ Q_r`. The program is solved by a
//! primal-dual interior-point method on `(β, w_free, u)` with `r` eliminated.
//!
//! Lower bounds are certified through the partial Lagrangian dual
//!
//! ```text
//! g(λ) = v(λ) − Σ λ_k Π_k + min_{w ∈ W} Σ λ_k Π_k w_k,   λ ∈ [0, 1]ⁿ,
//! ```
//!
//! where `v` is the weighted least-squares value and `W` the node's weight
//! polytope. `g(λ)` is evaluated exactly at the multipliers of every
//! iterate, so the reported bound never exceeds the relaxation optimum even
//! when the method stops early.

use nalgebra::{DMatrix, DVector};

use crate::error::{LtsError, Result};
use crate::regress::{weighted_fit, weighted_fit_exact, Dataset};
use crate::tree::NodeState;

pub const DEFAULT_TOL: f64 = 1e-7;
const MAX_ITER: usize = 120;
/// Cap multiplier for observations fixed out of the subset.
pub const EXCLUDED_CAP_FACTOR: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct RelaxationProblem<'a> {
    data: &'a Dataset,
    pi: Vec<f64>,
    s0: Vec<usize>,
    s1: Vec<usize>,
    h: usize,
}

impl<'a> RelaxationProblem<'a> {
    pub fn new(data: &'a Dataset, pi: Vec<f64>, s0: Vec<usize>, s1: Vec<usize>, h: usize) -> Result<Self> {
        let n = data.n();
        if pi.len() != n {
            return Err(LtsError::InvalidData(format!("expected {n} caps, got {}", pi.len())));
        }
        if pi.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(LtsError::InvalidData("caps must be positive and finite".into()));
        }
        let mut mark = vec![false; n];
        for &k in s0.iter().chain(&s1) {
            if k >= n || mark[k] {
                return Err(LtsError::InvalidData("s0 and s1 must be disjoint index sets".into()));
            }
            mark[k] = true;
        }
        Ok(Self { data, pi, s0, s1, h })
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn s0(&self) -> &[usize] {
        &self.s0
    }

    pub fn s1(&self) -> &[usize] {
        &self.s1
    }

    pub fn h(&self) -> usize {
        self.h
    }

    /// Same problem with every cap multiplied by `factor`.
    pub fn scaled_caps(&self, factor: f64) -> Self {
        Self { pi: self.pi.iter().map(|p| p * factor).collect(), ..self.clone() }
    }
}

/// Caps for a tree node: `Π` on free and fixed-in observations, `10 Π` on
/// fixed-out ones.
pub fn build_node_problem<'a>(
    data: &'a Dataset,
    pi_global: f64,
    node: &NodeState,
    h: usize,
) -> Result<RelaxationProblem<'a>> {
    let mut pi = vec![pi_global; data.n()];
    for &k in node.s0() {
        pi[k] = EXCLUDED_CAP_FACTOR * pi_global;
    }
    RelaxationProblem::new(data, pi, node.s0().to_vec(), node.s1().to_vec(), h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxationStatus {
    Optimal,
    GapTooLarge,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct RelaxationResult {
    /// Certified lower bound on the relaxation optimum.
    pub lower_bound: f64,
    pub primal_value: f64,
    pub w: Vec<f64>,
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    pub consistent: bool,
    pub status: RelaxationStatus,
    pub iterations: usize,
}

/// `r_k² < Π_k` for every observation not fixed out.
pub fn check_consistency(residuals: &[f64], pi: &[f64], s0: &[usize]) -> bool {
    assert_eq!(residuals.len(), pi.len());
    let mut out = vec![false; residuals.len()];
    for &k in s0 {
        out[k] = true;
    }
    residuals.iter().zip(pi).enumerate().all(|(k, (r, p))| out[k] || r * r < *p)
}

/// Solves the relaxation to relative duality gap `tol`.
pub fn solve_relaxation(prob: &RelaxationProblem<'_>, tol: f64) -> RelaxationResult {
    let data = prob.data;
    let (n, d) = (data.n(), data.d());
    if prob.s1.len() > prob.h || n < prob.s0.len() + prob.h {
        return RelaxationResult {
            lower_bound: f64::INFINITY,
            primal_value: f64::INFINITY,
            w: vec![0.0; n],
            beta: DVector::zeros(d),
            residuals: data.y().clone(),
            consistent: false,
            status: RelaxationStatus::Infeasible,
            iterations: 0,
        };
    }

    let mut wfix = vec![f64::NAN; n];
    for &k in &prob.s1 {
        wfix[k] = 1.0;
    }
    for &k in &prob.s0 {
        wfix[k] = 0.0;
    }
    let mut free: Vec<usize> = (0..n).filter(|&k| wfix[k].is_nan()).collect();
    let target = prob.h - prob.s1.len();
    if target == 0 || target == free.len() {
        let fill = if target == 0 { 0.0 } else { 1.0 };
        for &k in &free {
            wfix[k] = fill;
        }
        free.clear();
        if let Some(done) = closed_form(prob, &wfix, tol) {
            return done;
        }
    }

    Ipm::new(prob, wfix, free, target as f64).run(tol)
}

/// Fixed weights: weighted least squares on the fixed-in set is exact as long
/// as no fixed-out residual exceeds its cap.
fn closed_form(prob: &RelaxationProblem<'_>, w: &[f64], tol: f64) -> Option<RelaxationResult> {
    let fit = weighted_fit_exact(prob.data, w).ok()?;
    let excess: f64 =
        (0..w.len()).filter(|&k| w[k] == 0.0).map(|k| (fit.residuals[k].powi(2) - prob.pi[k]).max(0.0)).sum();
    let primal = fit.value + excess;
    if primal - fit.value > tol * (1.0 + primal) {
        return None;
    }
    Some(RelaxationResult {
        lower_bound: fit.value,
        primal_value: primal,
        w: w.to_vec(),
        consistent: check_consistency(fit.residuals.as_slice(), &prob.pi, &prob.s0),
        beta: fit.beta,
        residuals: fit.residuals,
        status: RelaxationStatus::Optimal,
        iterations: 0,
    })
}

/// Interior-point state on the scaled problem.
///
/// Scaling divides the caps by `scale` and the responses by `√scale`, so the
/// caps are of order one.
struct Ipm<'p, 'a> {
    prob: &'p RelaxationProblem<'a>,
    data: Dataset,
    scale: f64,
    pi: Vec<f64>,
    wfix: Vec<f64>,
    /// Position of observation `k` among the free weights.
    wpos: Vec<Option<usize>>,
    target: f64,
    n: usize,
    d: usize,
    m: usize,
}

/// Newton direction and step bookkeeping.
struct Iterate {
    z: DVector<f64>,
    lam: DVector<f64>,
    nu: f64,
}

impl<'p, 'a> Ipm<'p, 'a> {
    fn new(prob: &'p RelaxationProblem<'a>, wfix: Vec<f64>, free: Vec<usize>, target: f64) -> Self {
        let data = prob.data;
        let (n, d, m) = (data.n(), data.d(), free.len());
        let scale = prob.pi.iter().sum::<f64>() / n as f64;
        let root = scale.sqrt();
        let scaled = Dataset::new(data.x().clone(), data.y() / root).expect("scaling keeps entries finite");
        let pi = prob.pi.iter().map(|p| p / scale).collect();
        let mut wpos = vec![None; n];
        for (j, &k) in free.iter().enumerate() {
            wpos[k] = Some(j);
        }
        Self { prob, data: scaled, scale, pi, wfix, wpos, target, n, d, m }
    }

    fn dim(&self) -> usize {
        self.d + self.m + self.n
    }

    fn n_cons(&self) -> usize {
        2 * self.n + 2 * self.m
    }

    fn weight(&self, z: &DVector<f64>, k: usize) -> f64 {
        match self.wpos[k] {
            Some(j) => z[self.d + j],
            None => self.wfix[k],
        }
    }

    fn u(&self, z: &DVector<f64>, k: usize) -> f64 {
        z[self.d + self.m + k]
    }

    fn residuals(&self, z: &DVector<f64>) -> DVector<f64> {
        self.data.residuals(&z.rows(0, self.d).into_owned())
    }

    /// Constraint values `f_i(z) ≤ 0`, ordered: coupling, `u ≥ 0`, `w ≥ 0`, `w ≤ 1`.
    fn constraints(&self, z: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        let (n, m, d) = (self.n, self.m, self.d);
        let mut f = DVector::zeros(self.n_cons());
        for k in 0..n {
            f[k] = r[k] * r[k] - self.pi[k] * (1.0 - self.weight(z, k)) - self.u(z, k);
            f[n + k] = -self.u(z, k);
        }
        for j in 0..m {
            f[2 * n + j] = -z[d + j];
            f[2 * n + m + j] = z[d + j] - 1.0;
        }
        f
    }

    /// `∇f_i ᵀ v` for every constraint.
    fn jacobian_times(&self, r: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let (n, m, d) = (self.n, self.m, self.d);
        let xv = self.data.x() * v.rows(0, d);
        let mut out = DVector::zeros(self.n_cons());
        for k in 0..n {
            let mut s = -2.0 * r[k] * xv[k] - v[d + m + k];
            if let Some(j) = self.wpos[k] {
                s += self.pi[k] * v[d + j];
            }
            out[k] = s;
            out[n + k] = -v[d + m + k];
        }
        for j in 0..m {
            out[2 * n + j] = -v[d + j];
            out[2 * n + m + j] = v[d + j];
        }
        out
    }

    /// `Σ_i c_i ∇f_i`.
    fn jacobian_transpose_times(&self, r: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        let (n, m, d) = (self.n, self.m, self.d);
        let mut out = DVector::zeros(self.dim());
        let x = self.data.x();
        for k in 0..n {
            let a = -2.0 * r[k] * c[k];
            for col in 0..d {
                out[col] += a * x[(k, col)];
            }
            if let Some(j) = self.wpos[k] {
                out[d + j] += self.pi[k] * c[k];
            }
            out[d + m + k] -= c[k] + c[n + k];
        }
        for j in 0..m {
            out[d + j] += c[2 * n + m + j] - c[2 * n + j];
        }
        out
    }

    fn dual_residual(&self, it: &Iterate, r: &DVector<f64>) -> DVector<f64> {
        let mut rd = self.jacobian_transpose_times(r, &it.lam);
        let (d, m) = (self.d, self.m);
        for k in 0..self.n {
            rd[d + m + k] += 1.0;
        }
        for j in 0..m {
            rd[d + j] += it.nu;
        }
        rd
    }

    fn residual_norm(&self, it: &Iterate, t: f64) -> Option<f64> {
        let r = self.residuals(&it.z);
        let f = self.constraints(&it.z, &r);
        if f.iter().any(|v| *v >= 0.0) {
            return None;
        }
        let rd = self.dual_residual(it, &r);
        let cent: f64 = f.iter().zip(it.lam.iter()).map(|(fi, li)| (-li * fi - 1.0 / t).powi(2)).sum();
        let pri = self.primal_residual(&it.z);
        Some((rd.norm_squared() + cent + pri * pri).sqrt())
    }

    fn primal_residual(&self, z: &DVector<f64>) -> f64 {
        if self.m == 0 {
            0.0
        } else {
            z.rows(self.d, self.m).sum() - self.target
        }
    }

    fn start(&self) -> Iterate {
        let (n, m, d) = (self.n, self.m, self.d);
        let mut z = DVector::zeros(self.dim());
        let beta = weighted_fit(&self.data, &vec![1.0; n]).beta;
        z.rows_mut(0, d).copy_from(&beta);
        let w0 = if m > 0 { self.target / m as f64 } else { 0.0 };
        for j in 0..m {
            z[d + j] = w0;
        }
        let r = self.residuals(&z);
        for k in 0..n {
            let need = r[k] * r[k] - self.pi[k] * (1.0 - self.weight(&z, k));
            z[d + m + k] = need.max(0.0) + 1.0;
        }
        let mut lam = DVector::from_element(self.n_cons(), 0.5);
        for j in 0..m {
            lam[2 * n + j] = 1.0;
            lam[2 * n + m + j] = 1.0;
        }
        Iterate { z, lam, nu: 0.0 }
    }

    /// Objective with `u` at its best value for the current `(β, w)`.
    fn primal_value(&self, z: &DVector<f64>, r: &DVector<f64>) -> f64 {
        (0..self.n).map(|k| (r[k] * r[k] - self.pi[k] * (1.0 - self.weight(z, k))).max(0.0)).sum()
    }

    /// Dual function at `λ` clamped to `[0, 1]ⁿ`; zero if `M(λ)` is singular.
    fn dual_bound(&self, lam: &DVector<f64>) -> f64 {
        let n = self.n;
        let l: Vec<f64> = (0..n).map(|k| lam[k].clamp(0.0, 1.0)).collect();
        let Ok(fit) = weighted_fit_exact(&self.data, &l) else {
            return 0.0;
        };
        let mut g = fit.value;
        let mut costs = Vec::with_capacity(self.m);
        for (k, lk) in l.iter().enumerate() {
            let c = lk * self.pi[k];
            g -= c;
            match self.wpos[k] {
                Some(_) => costs.push(c),
                None => g += c * self.wfix[k],
            }
        }
        costs.sort_by(f64::total_cmp);
        g += costs.iter().take(self.target.round() as usize).sum::<f64>();
        g.max(0.0)
    }

    fn newton_step(
        &self,
        it: &Iterate,
        r: &DVector<f64>,
        f: &DVector<f64>,
        t: f64,
    ) -> Option<(DVector<f64>, DVector<f64>, f64)> {
        let (n, m, d) = (self.n, self.m, self.d);
        let dim = self.dim();
        let kkt = dim + usize::from(m > 0);
        let mut h = DMatrix::<f64>::zeros(kkt, kkt);
        let x = self.data.x();

        for k in 0..n {
            let lam = it.lam[k];
            let a = lam / -f[k];
            // Gradient of the coupling constraint: (−2 r_k x_k, Π_k e_w, −e_u).
            let gb: Vec<f64> = (0..d).map(|c| -2.0 * r[k] * x[(k, c)]).collect();
            let uk = d + m + k;
            let wk = self.wpos[k].map(|j| d + j);
            for p in 0..d {
                for q in 0..=p {
                    let v = 2.0 * lam * x[(k, p)] * x[(k, q)] + a * gb[p] * gb[q];
                    h[(p, q)] += v;
                }
                h[(uk, p)] -= a * gb[p];
                if let Some(wi) = wk {
                    h[(wi, p)] += a * self.pi[k] * gb[p];
                }
            }
            h[(uk, uk)] += a;
            if let Some(wi) = wk {
                h[(wi, wi)] += a * self.pi[k] * self.pi[k];
                // wi < uk always
                h[(uk, wi)] -= a * self.pi[k];
            }
            h[(uk, uk)] += it.lam[n + k] / -f[n + k];
        }
        for j in 0..m {
            h[(d + j, d + j)] += it.lam[2 * n + j] / -f[2 * n + j] + it.lam[2 * n + m + j] / -f[2 * n + m + j];
        }
        for p in 0..dim {
            for q in 0..p {
                h[(q, p)] = h[(p, q)];
            }
        }

        let cent: DVector<f64> = DVector::from_fn(f.len(), |i, _| -it.lam[i] * f[i] - 1.0 / t);
        let scaled_cent = cent.component_div(f);
        let rd = self.dual_residual(it, r);
        let mut rhs = DVector::zeros(kkt);
        let top = -(rd + self.jacobian_transpose_times(r, &scaled_cent));
        rhs.rows_mut(0, dim).copy_from(&top);
        if m > 0 {
            for j in 0..m {
                h[(dim, d + j)] = 1.0;
                h[(d + j, dim)] = 1.0;
            }
            rhs[dim] = -self.primal_residual(&it.z);
        }

        let sol = h.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dz = sol.rows(0, dim).into_owned();
        let dnu = if m > 0 { sol[dim] } else { 0.0 };
        let jdz = self.jacobian_times(r, &dz);
        let dlam = DVector::from_fn(f.len(), |i, _| (cent[i] - it.lam[i] * jdz[i]) / f[i]);
        Some((dz, dlam, dnu))
    }

    fn run(&self, tol: f64) -> RelaxationResult {
        const MU: f64 = 10.0;
        const ALPHA: f64 = 0.01;
        const SHRINK: f64 = 0.5;

        let mut it = self.start();
        let mut lower = 0.0_f64;
        let mut status = RelaxationStatus::GapTooLarge;
        let mut iterations = 0;
        let p = self.n_cons() as f64;

        for iter in 0..MAX_ITER {
            iterations = iter;
            let r = self.residuals(&it.z);
            let f = self.constraints(&it.z, &r);
            lower = lower.max(self.dual_bound(&it.lam.rows(0, self.n).into_owned()));
            let primal = self.primal_value(&it.z, &r);
            if primal - lower <= tol * (1.0 + primal.abs()) {
                status = RelaxationStatus::Optimal;
                break;
            }

            let eta = -f.dot(&it.lam);
            let t = MU * p / eta;
            let Some((dz, dlam, dnu)) = self.newton_step(&it, &r, &f, t) else {
                break;
            };
            let Some(base) = self.residual_norm(&it, t) else {
                break;
            };

            let mut s = 1.0_f64;
            for i in 0..dlam.len() {
                if dlam[i] < 0.0 {
                    s = s.min(-it.lam[i] / dlam[i]);
                }
            }
            s *= 0.99;
            let mut accepted = None;
            while s > 1e-12 {
                let trial = Iterate { z: &it.z + &dz * s, lam: &it.lam + &dlam * s, nu: it.nu + dnu * s };
                match self.residual_norm(&trial, t) {
                    Some(norm) if norm <= (1.0 - ALPHA * s) * base => {
                        accepted = Some(trial);
                        break;
                    }
                    _ => s *= SHRINK,
                }
            }
            match accepted {
                Some(next) => it = next,
                None => break,
            }
        }

        let r = self.residuals(&it.z);
        let primal = self.primal_value(&it.z, &r);
        if status != RelaxationStatus::Optimal {
            lower = lower.max(self.dual_bound(&it.lam.rows(0, self.n).into_owned()));
            if primal - lower <= tol * (1.0 + primal.abs()) {
                status = RelaxationStatus::Optimal;
            }
        }

        let root = self.scale.sqrt();
        let beta = it.z.rows(0, self.d).into_owned() * root;
        let residuals = self.prob.data.residuals(&beta);
        let w = (0..self.n).map(|k| self.weight(&it.z, k)).collect();
        RelaxationResult {
            lower_bound: lower * self.scale,
            primal_value: primal * self.scale,
            consistent: check_consistency(residuals.as_slice(), &self.prob.pi, &self.prob.s0),
            w,
            beta,
            residuals,
            status,
            iterations,
        }
    }
}
