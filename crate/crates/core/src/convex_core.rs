//! Log-barrier interior-point solver for the SCA subproblem.
//!
//! Problems have the form
//!
//! ```text
//! maximize    Σ_i w_i ln(a_iᵀx + b_i) + cᵀx + c0
//! subject to  a_jᵀx ≤ r_j                     (affine)
//!             a_jᵀx − w_j ln(x_{i_j}) ≤ r_j     (affine minus log)
//!             lb ≤ x ≤ ub
//! ```
//!
//! The solver follows the central path from a strictly feasible start:
//! damped Newton centering on `−t·obj − Σ ln(slack)`, `t ← 10 t`, until the
//! duality-gap bound `m/t` drops below [`GAP_TOL`]. Variables are rescaled
//! internally to O(1) (by a caller-supplied or start-derived per-variable
//! scale) before any Newton system is formed.

use serde::Serialize;

use crate::error::{Error, Result};

pub const GAP_TOL: f64 = 1e-8;
pub const T_INIT: f64 = 1.0;
pub const T_FACTOR: f64 = 10.0;
pub const LS_ALPHA: f64 = 0.25;
pub const LS_BETA: f64 = 0.5;
/// Cap on the total number of Newton steps over all centering rounds.
pub const MAX_NEWTON_STEPS: usize = 500;
pub const KKT_TOL: f64 = 1e-6;
const KKT_SWEEPS: usize = 500;
const NEWTON_TOL: f64 = 1e-10;
/// Undamped Newton steps taken on the final central-path point.
const POLISH_STEPS: usize = 3;
const REG_START: f64 = 1e-10;
const REG_MAX: f64 = 1e-2;

/// `weight · ln(coeffsᵀx + offset)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogTerm {
    pub weight: f64,
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

/// `coeffsᵀx ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineConstraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

/// `coeffsᵀx − log_weight · ln(x[log_var]) ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineMinusLogConstraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
    pub log_var: usize,
    pub log_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexProblem {
    pub n_vars: usize,
    pub log_terms: Vec<LogTerm>,
    pub linear_obj: Vec<f64>,
    pub constant: f64,
    pub affine_cons: Vec<AffineConstraint>,
    pub affine_minus_log_cons: Vec<AffineMinusLogConstraint>,
    /// `f64::NEG_INFINITY` for no bound.
    pub lower_bounds: Vec<f64>,
    /// `f64::INFINITY` for no bound.
    pub upper_bounds: Vec<f64>,
    /// Positive per-variable units; `None` derives them from the start point.
    pub scale: Option<Vec<f64>>,
}

impl ConvexProblem {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            log_terms: Vec::new(),
            linear_obj: vec![0.0; n_vars],
            constant: 0.0,
            affine_cons: Vec::new(),
            affine_minus_log_cons: Vec::new(),
            lower_bounds: vec![f64::NEG_INFINITY; n_vars],
            upper_bounds: vec![f64::INFINITY; n_vars],
            scale: None,
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let logs: f64 = self
            .log_terms
            .iter()
            .map(|t| t.weight * (dot(&t.coeffs, x) + t.offset).ln())
            .sum();
        logs + dot(&self.linear_obj, x) + self.constant
    }

    /// Number of inequality constraints including finite bounds.
    pub fn n_constraints(&self) -> usize {
        self.affine_cons.len()
            + self.affine_minus_log_cons.len()
            + self.lower_bounds.iter().filter(|b| b.is_finite()).count()
            + self.upper_bounds.iter().filter(|b| b.is_finite()).count()
    }

    /// Slack of every inequality, in the order affine, affine-minus-log, lower, upper.
    pub fn slacks(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_constraints());
        out.extend(self.affine_cons.iter().map(|c| c.rhs - dot(&c.coeffs, x)));
        out.extend(self.affine_minus_log_cons.iter().map(|c| {
            let xi = x[c.log_var];
            if xi > 0.0 {
                c.rhs - dot(&c.coeffs, x) + c.log_weight * xi.ln()
            } else {
                f64::NEG_INFINITY
            }
        }));
        out.extend(
            self.lower_bounds
                .iter()
                .zip(x)
                .filter(|(b, _)| b.is_finite())
                .map(|(b, xi)| xi - b),
        );
        out.extend(
            self.upper_bounds
                .iter()
                .zip(x)
                .filter(|(b, _)| b.is_finite())
                .map(|(b, xi)| b - xi),
        );
        out
    }

    /// Smallest constraint slack (negative when infeasible).
    pub fn min_slack(&self, x: &[f64]) -> f64 {
        self.slacks(x).into_iter().fold(f64::INFINITY, f64::min)
    }

    fn check_shapes(&self) -> Result<()> {
        let n = self.n_vars;
        let bad = self.linear_obj.len() != n
            || self.lower_bounds.len() != n
            || self.upper_bounds.len() != n
            || self.log_terms.iter().any(|t| t.coeffs.len() != n)
            || self.affine_cons.iter().any(|c| c.coeffs.len() != n)
            || self.affine_minus_log_cons.iter().any(|c| {
                c.coeffs.len() != n || c.log_var >= n || !(self.lower_bounds[c.log_var] > 0.0)
            })
            || self
                .scale
                .as_ref()
                .is_some_and(|s| s.len() != n || s.iter().any(|v| !(*v > 0.0)));
        if bad {
            return Err(Error::InfeasibleStart(
                "malformed problem dimensions or log bounds".into(),
            ));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub x_opt: Vec<f64>,
    pub obj: f64,
    pub kkt_residual: f64,
    pub barrier_outer_iters: usize,
    pub newton_steps: usize,
    /// True objective at the end of each centering round.
    pub outer_objectives: Vec<f64>,
    pub status: SolveStatus,
}

/// The problem in scaled variables `y = x / s`.
/// `(a, r, Some((i, w)))` means `aᵀy − w ln y_i ≤ r`.
type Row = (Vec<f64>, f64, Option<(usize, f64)>);

struct Scaled {
    n: usize,
    logs: Vec<(f64, Vec<f64>, f64)>,
    lin: Vec<f64>,
    rows: Vec<Row>,
    lower: Vec<(usize, f64)>,
    upper: Vec<(usize, f64)>,
}

impl Scaled {
    fn new(p: &ConvexProblem, s: &[f64]) -> Self {
        let sc = |a: &[f64]| a.iter().zip(s).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mut rows: Vec<Row> = p
            .affine_cons
            .iter()
            .map(|c| (sc(&c.coeffs), c.rhs, None))
            .collect();
        rows.extend(p.affine_minus_log_cons.iter().map(|c| {
            (
                sc(&c.coeffs),
                c.rhs + c.log_weight * s[c.log_var].ln(),
                Some((c.log_var, c.log_weight)),
            )
        }));
        Self {
            n: p.n_vars,
            logs: p
                .log_terms
                .iter()
                .map(|t| (t.weight, sc(&t.coeffs), t.offset))
                .collect(),
            lin: sc(&p.linear_obj),
            rows,
            lower: p
                .lower_bounds
                .iter()
                .enumerate()
                .filter(|(_, b)| b.is_finite())
                .map(|(i, b)| (i, b / s[i]))
                .collect(),
            upper: p
                .upper_bounds
                .iter()
                .enumerate()
                .filter(|(_, b)| b.is_finite())
                .map(|(i, b)| (i, b / s[i]))
                .collect(),
        }
    }

    fn m(&self) -> usize {
        self.rows.len() + self.lower.len() + self.upper.len()
    }

    fn row_slack(&self, row: &(Vec<f64>, f64, Option<(usize, f64)>), y: &[f64]) -> f64 {
        let (a, r, lg) = row;
        let base = r - dot(a, y);
        match lg {
            Some((i, w)) if y[*i] > 0.0 => base + w * y[*i].ln(),
            Some(_) => f64::NEG_INFINITY,
            None => base,
        }
    }

    fn in_domain(&self, y: &[f64]) -> bool {
        self.logs.iter().all(|(_, a, b)| dot(a, y) + b > 0.0)
            && self.rows.iter().all(|r| self.row_slack(r, y) > 0.0)
            && self.lower.iter().all(|&(i, b)| y[i] - b > 0.0)
            && self.upper.iter().all(|&(i, b)| b - y[i] > 0.0)
    }

    fn objective(&self, y: &[f64]) -> f64 {
        self.logs
            .iter()
            .map(|(w, a, b)| w * (dot(a, y) + b).ln())
            .sum::<f64>()
            + dot(&self.lin, y)
    }

    /// Gradient of `−obj` and the sum of barrier gradients `Σ ∇g_i / s_i`.
    fn gradients(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut g0: Vec<f64> = self.lin.iter().map(|c| -c).collect();
        for (w, a, b) in &self.logs {
            let v = dot(a, y) + b;
            for i in 0..n {
                g0[i] -= w * a[i] / v;
            }
        }
        let mut gb = vec![0.0; n];
        for row in &self.rows {
            let s = self.row_slack(row, y);
            let (a, _, lg) = row;
            for i in 0..n {
                gb[i] += a[i] / s;
            }
            if let Some((i, w)) = lg {
                gb[*i] -= w / (y[*i] * s);
            }
        }
        for &(i, b) in &self.lower {
            gb[i] -= 1.0 / (y[i] - b);
        }
        for &(i, b) in &self.upper {
            gb[i] += 1.0 / (b - y[i]);
        }
        (g0, gb)
    }

    /// Gradient and Hessian of `t·(−obj) + barrier`.
    fn newton_system(&self, y: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let (g0, gb) = self.gradients(y);
        let grad: Vec<f64> = g0.iter().zip(&gb).map(|(a, b)| t * a + b).collect();
        let mut h = vec![0.0; n * n];
        let rank1 = |h: &mut [f64], v: &[f64], c: f64| {
            for i in 0..n {
                if v[i] == 0.0 {
                    continue;
                }
                let ci = c * v[i];
                for j in 0..n {
                    h[i * n + j] += ci * v[j];
                }
            }
        };
        for (w, a, b) in &self.logs {
            let v = dot(a, y) + b;
            rank1(&mut h, a, t * w / (v * v));
        }
        for row in &self.rows {
            let s = self.row_slack(row, y);
            let (a, _, lg) = row;
            match lg {
                Some((i, w)) => {
                    let mut dg = a.clone();
                    dg[*i] -= w / y[*i];
                    rank1(&mut h, &dg, 1.0 / (s * s));
                    h[*i * n + *i] += w / (y[*i] * y[*i] * s);
                }
                None => rank1(&mut h, a, 1.0 / (s * s)),
            }
        }
        for &(i, b) in &self.lower {
            let s = y[i] - b;
            h[i * n + i] += 1.0 / (s * s);
        }
        for &(i, b) in &self.upper {
            let s = b - y[i];
            h[i * n + i] += 1.0 / (s * s);
        }
        (grad, h)
    }

    /// `Φ(y + step·d) − Φ(y)` evaluated term by term, `None` outside the domain.
    fn phi_change(&self, y: &[f64], d: &[f64], step: f64, t: f64) -> Option<f64> {
        let mut obj_change = step * dot(&self.lin, d);
        for (w, a, b) in &self.logs {
            let v = dot(a, y) + b;
            let dv = step * dot(a, d);
            if !(v + dv > 0.0) {
                return None;
            }
            obj_change += w * (dv / v).ln_1p();
        }
        let mut bar = 0.0;
        for row in &self.rows {
            let (a, _, lg) = row;
            let s = self.row_slack(row, y);
            let mut ds = -step * dot(a, d);
            if let Some((i, w)) = lg {
                let r = step * d[*i] / y[*i];
                if !(r > -1.0) {
                    return None;
                }
                ds += w * r.ln_1p();
            }
            if !(s + ds > 0.0) {
                return None;
            }
            bar -= (ds / s).ln_1p();
        }
        for &(i, b) in &self.lower {
            let s = y[i] - b;
            let ds = step * d[i];
            if !(s + ds > 0.0) {
                return None;
            }
            bar -= (ds / s).ln_1p();
        }
        for &(i, b) in &self.upper {
            let s = b - y[i];
            let ds = -step * d[i];
            if !(s + ds > 0.0) {
                return None;
            }
            bar -= (ds / s).ln_1p();
        }
        Some(-t * obj_change + bar)
    }

    /// Gradient and slack of every inequality `g_i(y) ≤ 0`.
    fn constraint_gradients(&self, y: &[f64]) -> Vec<(Vec<f64>, f64)> {
        let n = self.n;
        let unit = |i: usize, v: f64| {
            let mut e = vec![0.0; n];
            e[i] = v;
            e
        };
        let mut out: Vec<(Vec<f64>, f64)> = self
            .rows
            .iter()
            .map(|row| {
                let mut g = row.0.clone();
                if let Some((i, w)) = row.2 {
                    g[i] -= w / y[i];
                }
                (g, self.row_slack(row, y))
            })
            .collect();
        out.extend(self.lower.iter().map(|&(i, b)| (unit(i, -1.0), y[i] - b)));
        out.extend(self.upper.iter().map(|&(i, b)| (unit(i, 1.0), b - y[i])));
        out
    }

    /// `min_{λ ≥ 0} ‖∇(−obj) + Σ λ_i ∇g_i‖² + Σ (λ_i s_i)²`, warm-started at the
    /// barrier multipliers `τ/s_i`, solved by projected coordinate descent.
    fn kkt(&self, y: &[f64]) -> f64 {
        let (g0, gb) = self.gradients(y);
        let bb = dot(&gb, &gb);
        let tau = if bb > 0.0 {
            (-dot(&g0, &gb) / bb).max(0.0)
        } else {
            0.0
        };
        let cons = self.constraint_gradients(y);
        let m = cons.len();
        let mut q = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..=i {
                let v = dot(&cons[i].0, &cons[j].0);
                q[i * m + j] = v;
                q[j * m + i] = v;
            }
            q[i * m + i] += cons[i].1 * cons[i].1;
        }
        let lin: Vec<f64> = cons.iter().map(|(g, _)| dot(g, &g0)).collect();
        let mut lambda: Vec<f64> = cons.iter().map(|(_, s)| tau / s).collect();
        for _ in 0..KKT_SWEEPS {
            let mut moved = 0.0f64;
            for i in 0..m {
                if q[i * m + i] <= 0.0 {
                    continue;
                }
                let grad_i = lin[i] + (0..m).map(|j| q[i * m + j] * lambda[j]).sum::<f64>();
                let next = (lambda[i] - grad_i / q[i * m + i]).max(0.0);
                moved = moved.max((next - lambda[i]).abs() * q[i * m + i].sqrt());
                lambda[i] = next;
            }
            if moved < 1e-14 {
                break;
            }
        }
        let mut r = g0;
        for ((g, _), l) in cons.iter().zip(&lambda) {
            for (ri, gi) in r.iter_mut().zip(g) {
                *ri += l * gi;
            }
        }
        let comp: f64 = cons
            .iter()
            .zip(&lambda)
            .map(|((_, s), l)| (l * s).powi(2))
            .sum();
        (dot(&r, &r) + comp).sqrt()
    }
}

/// Dense Cholesky solve of `H x = rhs`; `None` if `H` is not positive definite.
fn cholesky_solve(h: &[f64], rhs: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = h[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut z = rhs.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l[i * n + k] * z[k];
        }
        z[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= l[k * n + i] * z[k];
        }
        z[i] /= l[i * n + i];
    }
    Some(z)
}

/// Solves `H d = −g` on the unit-diagonal equilibrated system, adding
/// `reg·I` there when the factorization breaks down.
fn newton_direction(h: &[f64], grad: &[f64], n: usize) -> Result<Vec<f64>> {
    let d: Vec<f64> = (0..n)
        .map(|i| h[i * n + i].max(f64::MIN_POSITIVE).sqrt())
        .collect();
    let mut hs = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            hs[i * n + j] = h[i * n + j] / (d[i] * d[j]);
        }
    }
    let neg: Vec<f64> = grad.iter().zip(&d).map(|(g, di)| -g / di).collect();
    let unscale = |y: Vec<f64>| y.iter().zip(&d).map(|(a, b)| a / b).collect();
    if let Some(y) = cholesky_solve(&hs, &neg, n) {
        return Ok(unscale(y));
    }
    let mut reg = REG_START;
    while reg <= REG_MAX * (1.0 + 1e-12) {
        let mut hr = hs.clone();
        for i in 0..n {
            hr[i * n + i] += reg;
        }
        if let Some(y) = cholesky_solve(&hr, &neg, n) {
            return Ok(unscale(y));
        }
        reg *= 10.0;
    }
    Err(Error::NewtonFailure(REG_MAX))
}

fn resolve_scale(p: &ConvexProblem, x0: &[f64]) -> Vec<f64> {
    match &p.scale {
        Some(s) => s.clone(),
        None => x0
            .iter()
            .map(|v| if v.abs() > 0.0 { v.abs() } else { 1.0 })
            .collect(),
    }
}

/// KKT residual at a strictly feasible `x`, in scaled units.
///
/// Multipliers start from the barrier estimate `τ / slack_i` (the single
/// `τ ≥ 0` that best cancels the objective gradient) and are refined by
/// non-negative least squares; the residual combines stationarity error with
/// the complementarity products `λ_i · slack_i`.
pub fn check_kkt(problem: &ConvexProblem, x: &[f64]) -> f64 {
    let s = resolve_scale(problem, x);
    let sp = Scaled::new(problem, &s);
    let y: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a / b).collect();
    sp.kkt(&y)
}

/// Maximizes the problem from a strictly feasible `x0`.
pub fn solve(problem: &ConvexProblem, x0: &[f64]) -> Result<SolveResult> {
    problem.check_shapes()?;
    if x0.len() != problem.n_vars {
        return Err(Error::InfeasibleStart(
            "start point has the wrong length".into(),
        ));
    }
    let s = resolve_scale(problem, x0);
    let sp = Scaled::new(problem, &s);
    let n = sp.n;
    let mut y: Vec<f64> = x0.iter().zip(&s).map(|(a, b)| a / b).collect();
    if !sp.in_domain(&y) {
        return Err(Error::InfeasibleStart(format!(
            "min slack {:e}",
            problem.min_slack(x0)
        )));
    }

    let m = sp.m().max(1) as f64;
    let mut t = T_INIT;
    let mut steps = 0;
    let mut outer = 0;
    let mut outer_objectives = Vec::new();
    let mut status = SolveStatus::Optimal;

    'outer: loop {
        outer += 1;
        loop {
            if steps >= MAX_NEWTON_STEPS {
                status = SolveStatus::MaxIter;
                break 'outer;
            }
            let (grad, h) = sp.newton_system(&y, t);
            let d = match newton_direction(&h, &grad, n) {
                Ok(d) => d,
                Err(_) => {
                    status = SolveStatus::NumericalFailure;
                    break 'outer;
                }
            };
            steps += 1;
            let slope = dot(&grad, &d);
            if -slope / 2.0 <= NEWTON_TOL {
                break;
            }
            let mut step = 1.0;
            let accepted = loop {
                match sp.phi_change(&y, &d, step, t) {
                    Some(change) if change <= LS_ALPHA * step * slope => break true,
                    _ => {}
                }
                step *= LS_BETA;
                if step < 1e-20 {
                    break false;
                }
            };
            if !accepted {
                // No further decrease is representable; treat the point as centred.
                break;
            }
            for i in 0..n {
                y[i] += step * d[i];
            }
        }
        outer_objectives.push(sp.objective(&y) + problem.constant);
        if m / t <= GAP_TOL {
            break;
        }
        t *= T_FACTOR;
    }
    if status == SolveStatus::Optimal {
        for _ in 0..POLISH_STEPS {
            let (grad, h) = sp.newton_system(&y, t);
            let Ok(d) = newton_direction(&h, &grad, n) else {
                break;
            };
            if -dot(&grad, &d) / 2.0 <= f64::EPSILON * f64::EPSILON
                || sp.phi_change(&y, &d, 1.0, t).is_none()
            {
                break;
            }
            for i in 0..n {
                y[i] += d[i];
            }
        }
    }

    let x_opt: Vec<f64> = y.iter().zip(&s).map(|(a, b)| a * b).collect();
    let kkt_residual = sp.kkt(&y);
    if status == SolveStatus::Optimal
        && !(kkt_residual <= KKT_TOL && problem.min_slack(&x_opt) >= -1e-8)
    {
        status = SolveStatus::NumericalFailure;
    }
    Ok(SolveResult {
        obj: problem.objective(&x_opt),
        x_opt,
        kkt_residual,
        barrier_outer_iters: outer,
        newton_steps: steps,
        outer_objectives,
        status,
    })
}

/// Plain-text coefficient listing, one item per line, for regression fixtures.
pub fn dump_problem(p: &ConvexProblem) -> String {
    use std::fmt::Write;
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = String::new();
    let _ = writeln!(out, "n_vars {}", p.n_vars);
    let _ = writeln!(out, "constant {:e}", p.constant);
    let _ = writeln!(out, "linear {}", fmt(&p.linear_obj));
    for t in &p.log_terms {
        let _ = writeln!(
            out,
            "log {:e} {:e} | {}",
            t.weight,
            t.offset,
            fmt(&t.coeffs)
        );
    }
    for c in &p.affine_cons {
        let _ = writeln!(out, "affine {:e} | {}", c.rhs, fmt(&c.coeffs));
    }
    for c in &p.affine_minus_log_cons {
        let _ = writeln!(
            out,
            "afflog {:e} {} {:e} | {}",
            c.rhs,
            c.log_var,
            c.log_weight,
            fmt(&c.coeffs)
        );
    }
    let _ = writeln!(out, "lower {}", fmt(&p.lower_bounds));
    let _ = writeln!(out, "upper {}", fmt(&p.upper_bounds));
    out
}
