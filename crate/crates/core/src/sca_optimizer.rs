//! Successive convex approximation of the weighted sum-rate problem.
//!
//! Each rate is written as `log2(S + D) − log2(D)` with `S`, `D` affine in the
//! variables. The first part stays in the subproblem as a concave log; the
//! second is replaced by its tangent plane at the current iterate. Both
//! fronthaul constraints are `log det(affine) − N ln σ² ≤ C ln 2`; their
//! `log det` is replaced by its tangent as well. Since `log det` and `log` are
//! concave, every tangent over-estimates, so each subproblem optimum is
//! feasible for the original constraints and the true objective cannot drop.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::convex_core::{
    self, AffineConstraint, AffineMinusLogConstraint, ConvexProblem, LogTerm, SolveStatus,
};
use crate::error::{Error, Result};
use crate::linalg::{CMat, ShiftedGram};
use crate::link_metrics::{
    evaluate, precoded_factor, quant_covariance, uplink_received_factor, Network, OptVars,
    QuantModel, RateReport,
};
use crate::surrogate::{AffineForm, AffineModel};

/// Lower bound on compression noise variances, relative to the thermal noise power.
pub const SIGMA2_FLOOR_REL: f64 = 1e-12;
/// Halving steps the initializer may take before giving up.
pub const INIT_SHRINK_STEPS: usize = 60;
/// Fraction of the T-RAU power budget used by the initial power coefficients.
pub const INIT_POWER_FRACTION: f64 = 0.8;

/// Expansion point of one SCA iteration.
#[derive(Debug, Clone)]
pub struct ScaState {
    pub iterate: OptVars,
    /// `F_m diag(η) F_m^H + σ²_{D,m} I` per T-RAU.
    pub a_t: Vec<ShiftedGram>,
    /// Received covariance plus compression noise per R-RAU.
    pub b_t: Vec<ShiftedGram>,
    /// Reciprocal downlink denominators.
    pub phi_dl: Vec<f64>,
    /// Reciprocal uplink denominators.
    pub phi_ul: Vec<f64>,
    pub cq: CMat,
    pub n: usize,
}

impl ScaState {
    pub fn at(
        net: &Network,
        q: QuantModel,
        model: &AffineModel,
        iterate: OptVars,
        n: usize,
    ) -> Result<Self> {
        let x = iterate.to_vec();
        let a_t = net
            .beams
            .f_digital
            .iter()
            .zip(&iterate.sigma2_dl)
            .map(|(f, &s)| ShiftedGram::new(&precoded_factor(f, &iterate.eta), s))
            .collect::<Result<_>>()?;
        let b_t = iterate
            .sigma2_ul
            .iter()
            .enumerate()
            .map(|(z, &s)| ShiftedGram::new(&uplink_received_factor(net, q, &iterate, z), s))
            .collect::<Result<_>>()?;
        let recip = |forms: &[AffineForm], what: &str| -> Result<Vec<f64>> {
            forms
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let d = f.eval(&x);
                    if d > 0.0 {
                        Ok(1.0 / d)
                    } else {
                        Err(Error::NonPositiveDenominator {
                            what: format!("{what} user {i}"),
                            value: d,
                        })
                    }
                })
                .collect()
        };
        Ok(Self {
            phi_dl: recip(&model.dl_den, "downlink")?,
            phi_ul: recip(&model.ul_den, "uplink")?,
            cq: quant_covariance(&net.beams, &iterate, q),
            a_t,
            b_t,
            iterate,
            n,
        })
    }
}

/// Tangent-plane downlink fronthaul constraints, one per T-RAU.
pub fn linearize_dl_fronthaul(
    state: &ScaState,
    net: &Network,
) -> Result<Vec<AffineMinusLogConstraint>> {
    let lay = net.var_layout();
    let n_rf = net.n_rf() as f64;
    state
        .a_t
        .iter()
        .enumerate()
        .map(|(m, a)| {
            let f = &net.beams.f_digital[m];
            let mut coeffs = vec![0.0; lay.len()];
            for k in 0..lay.k {
                coeffs[lay.eta(k)] = a.inv_quad(&f.column(k).into_owned());
            }
            coeffs[lay.sigma2_dl(m)] = a.inv_trace();
            Ok(AffineMinusLogConstraint {
                coeffs,
                rhs: n_rf + net.cfg.c_dl_bpshz * LN_2 - a.logdet(),
                log_var: lay.sigma2_dl(m),
                log_weight: n_rf,
            })
        })
        .collect()
}

/// Tangent-plane uplink fronthaul constraints, one per R-RAU.
pub fn linearize_ul_fronthaul(
    state: &ScaState,
    net: &Network,
    model: &AffineModel,
) -> Result<Vec<AffineMinusLogConstraint>> {
    let lay = net.var_layout();
    let n_rf = net.n_rf() as f64;
    state
        .b_t
        .iter()
        .enumerate()
        .map(|(z, b)| {
            let u = &net.beams.u_analog[z];
            let interference_trace = b.inv_trace_with(&u.adjoint());
            let mut form = AffineForm::zeros(lay.len());
            for j in 0..lay.j {
                form.coeffs[lay.p_ul(j)] = b.inv_quad(&net.beams.g_eff[j][z]);
            }
            for p in &model.p_dl {
                form.add_scaled(p, net.budget.residual_iri * interference_trace);
            }
            form.coeffs[lay.sigma2_ul(z)] += b.inv_trace();
            form.constant += net.budget.noise * interference_trace;
            Ok(AffineMinusLogConstraint {
                coeffs: form.coeffs,
                rhs: net.cfg.c_ul_bpshz * LN_2 + n_rf - b.logdet() - form.constant,
                log_var: lay.sigma2_ul(z),
                log_weight: n_rf,
            })
        })
        .collect()
}

/// Tangent plane of the subtracted concave part `Σ ω log2(D)`, in bps/Hz.
pub fn linearize_h(state: &ScaState, net: &Network, model: &AffineModel) -> AffineForm {
    let x = state.iterate.to_vec();
    let mut h = AffineForm::zeros(x.len());
    let groups = [
        (net.cfg.weight_dl, &model.dl_den, &state.phi_dl),
        (net.cfg.weight_ul, &model.ul_den, &state.phi_ul),
    ];
    for (w, dens, phis) in groups {
        for (d, &phi) in dens.iter().zip(phis.iter()) {
            h.add_scaled(d, w * phi / LN_2);
            h.constant += w * (-phi.log2()) - w * phi / LN_2 * d.eval(&x);
        }
    }
    h
}

/// Convex subproblem around `state`, maximizing `f − h^(n)` in bps/Hz.
pub fn build_subproblem(
    state: &ScaState,
    net: &Network,
    model: &AffineModel,
) -> Result<ConvexProblem> {
    let lay = net.var_layout();
    let mut p = ConvexProblem::new(lay.len());
    let groups = [
        (net.cfg.weight_dl, &model.dl_sig, &model.dl_den),
        (net.cfg.weight_ul, &model.ul_sig, &model.ul_den),
    ];
    for (w, sigs, dens) in groups {
        if w == 0.0 {
            continue;
        }
        for (s, d) in sigs.iter().zip(dens.iter()) {
            let sum = s.clone() + d;
            p.log_terms.push(LogTerm {
                weight: w / LN_2,
                coeffs: sum.coeffs,
                offset: sum.constant,
            });
        }
    }
    let h = linearize_h(state, net, model);
    p.linear_obj = h.coeffs.iter().map(|c| -c).collect();
    p.constant = -h.constant;

    p.affine_cons = model
        .p_dl
        .iter()
        .map(|f| AffineConstraint {
            coeffs: f.coeffs.clone(),
            rhs: net.budget.p_dl_max - f.constant,
        })
        .collect();
    p.affine_minus_log_cons = linearize_dl_fronthaul(state, net)?;
    p.affine_minus_log_cons
        .extend(linearize_ul_fronthaul(state, net, model)?);

    let floor = SIGMA2_FLOOR_REL * net.budget.noise;
    for k in 0..lay.k {
        p.lower_bounds[lay.eta(k)] = 0.0;
    }
    for m in 0..lay.n_t {
        p.lower_bounds[lay.sigma2_dl(m)] = floor;
    }
    for z in 0..lay.n_r {
        p.lower_bounds[lay.sigma2_ul(z)] = floor;
    }
    for j in 0..lay.j {
        p.lower_bounds[lay.p_ul(j)] = 0.0;
        p.upper_bounds[lay.p_ul(j)] = net.budget.p_ul_max;
    }
    p.scale = Some(variable_scales(net, model));
    Ok(p)
}

/// Natural unit of every variable: the power coefficient that alone fills the
/// tightest T-RAU budget, the thermal noise power for compression variances
/// and the uplink budget for uplink powers.
pub fn variable_scales(net: &Network, model: &AffineModel) -> Vec<f64> {
    let lay = net.var_layout();
    let mut s = vec![1.0; lay.len()];
    for k in 0..lay.k {
        let slope = model
            .p_dl
            .iter()
            .map(|p| p.coeffs[lay.eta(k)])
            .fold(0.0, f64::max);
        if slope > 0.0 {
            s[lay.eta(k)] = net.budget.p_dl_max / slope;
        }
    }
    for m in 0..lay.n_t {
        s[lay.sigma2_dl(m)] = net.budget.noise;
    }
    for z in 0..lay.n_r {
        s[lay.sigma2_ul(z)] = net.budget.noise;
    }
    for j in 0..lay.j {
        s[lay.p_ul(j)] = net.budget.p_ul_max;
    }
    s
}

fn binding_constraint(net: &Network, report: &RateReport) -> Option<String> {
    let cfg = &net.cfg;
    if let Some((m, c)) = report
        .c_dl
        .iter()
        .enumerate()
        .find(|(_, c)| !(**c < cfg.c_dl_bpshz))
    {
        return Some(format!("downlink fronthaul of T-RAU {m} at {c:.6} bps/Hz"));
    }
    if let Some((z, c)) = report
        .c_ul
        .iter()
        .enumerate()
        .find(|(_, c)| !(**c < cfg.c_ul_bpshz))
    {
        return Some(format!("uplink fronthaul of R-RAU {z} at {c:.6} bps/Hz"));
    }
    if let Some((m, p)) = report
        .p_dl
        .iter()
        .enumerate()
        .find(|(_, p)| !(**p < net.budget.p_dl_max))
    {
        return Some(format!("power of T-RAU {m} at {p:e} mW"));
    }
    None
}

/// Strictly feasible starting point for the iteration.
///
/// Uplink powers start at half the budget and both compression variances at
/// the thermal noise power. A common power coefficient is set so that the
/// busiest T-RAU radiates 80% of its budget, then power coefficients and
/// uplink powers are halved together until every fronthaul constraint holds
/// strictly.
pub fn init_vars(net: &Network, q: QuantModel) -> Result<OptVars> {
    let lay = net.var_layout();
    let noise = net.budget.noise;
    let model = AffineModel::new(net, q);
    let mut vars = OptVars {
        eta: vec![0.0; lay.k],
        sigma2_dl: vec![noise; lay.n_t],
        sigma2_ul: vec![noise; lay.n_r],
        p_ul: vec![net.budget.p_ul_max / 2.0; lay.j],
    };
    let base = vars.to_vec();
    let target = INIT_POWER_FRACTION * net.budget.p_dl_max;
    // Each T-RAU power is affine in the common coefficient: slope·e + offset.
    let mut common = f64::INFINITY;
    for p in &model.p_dl {
        let slope: f64 = (0..lay.k).map(|k| p.coeffs[lay.eta(k)]).sum();
        let offset = p.eval(&base);
        if offset >= target {
            return Err(Error::InfeasibleInit {
                steps: 0,
                binding: format!("compression noise alone uses {offset:e} mW"),
            });
        }
        if slope > 0.0 {
            common = common.min((target - offset) / slope);
        }
    }
    if !common.is_finite() {
        common = 0.0;
    }
    vars.eta.fill(common);

    for step in 0..=INIT_SHRINK_STEPS {
        let report = evaluate(net, q, &vars)?;
        match binding_constraint(net, &report) {
            None => {
                log::debug!("initial point after {step} shrink steps");
                return Ok(vars);
            }
            Some(binding) if step == INIT_SHRINK_STEPS => {
                return Err(Error::InfeasibleInit {
                    steps: step,
                    binding,
                });
            }
            Some(_) => {
                vars.eta.iter_mut().for_each(|e| *e *= 0.5);
                vars.p_ul.iter_mut().for_each(|p| *p *= 0.5);
            }
        }
    }
    unreachable!("loop returns on its last step")
}

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub surrogate_obj_bpshz: f64,
    pub true_obj_bpshz: f64,
    pub max_cdl_violation: f64,
    pub max_cul_violation: f64,
    pub max_pd_violation: f64,
    /// Not part of the CSV schema; kept for the feasibility checks.
    #[serde(skip)]
    pub max_pu_violation: f64,
}

impl TraceRow {
    fn new(
        iter: usize,
        surrogate: f64,
        report: &RateReport,
        net: &Network,
        vars: &OptVars,
    ) -> Self {
        let [cdl, cul, pd, pu] = report.violations(net, vars);
        Self {
            iter,
            surrogate_obj_bpshz: surrogate,
            true_obj_bpshz: report.objective,
            max_cdl_violation: cdl,
            max_cul_violation: cul,
            max_pd_violation: pd,
            max_pu_violation: pu,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScaOutcome {
    pub vars: OptVars,
    pub report: RateReport,
    /// Row 0 is the initial point.
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

impl ScaOutcome {
    /// Number of subproblems solved.
    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }

    pub fn objective_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.true_obj_bpshz).collect()
    }
}

/// Shrinks power coefficients and uplink powers until `x` is strictly inside `p`.
fn pull_inside(p: &ConvexProblem, net: &Network, x: &mut [f64]) -> bool {
    let lay = net.var_layout();
    let mut delta = 1e-9;
    for _ in 0..64 {
        if p.min_slack(x) > 0.0 {
            return true;
        }
        for k in 0..lay.k {
            x[lay.eta(k)] *= 1.0 - delta;
        }
        for j in 0..lay.j {
            x[lay.p_ul(j)] *= 1.0 - delta;
        }
        delta = (delta * 2.0).min(0.5);
    }
    p.min_slack(x) > 0.0
}

pub fn run_sca(net: &Network, q: QuantModel) -> Result<ScaOutcome> {
    let init = init_vars(net, q)?;
    run_sca_from(net, q, init)
}

/// Iterates from a strictly feasible `init` until successive surrogate values
/// differ by at most the configured tolerance or the iteration cap is reached.
pub fn run_sca_from(net: &Network, q: QuantModel, init: OptVars) -> Result<ScaOutcome> {
    let model = AffineModel::new(net, q);
    let lay = net.var_layout();
    let floor = SIGMA2_FLOOR_REL * net.budget.noise;
    let mut vars = init;
    let mut report = evaluate(net, q, &vars)?;
    let mut trace = vec![TraceRow::new(0, report.objective, &report, net, &vars)];
    let mut previous = report.objective;
    let mut converged = false;

    for n in 1..=net.cfg.sca_max_iter {
        let wrap = |e: Error| Error::Subproblem {
            iteration: n,
            source: Box::new(e),
        };
        let state = ScaState::at(net, q, &model, vars.clone(), n).map_err(wrap)?;
        let problem = build_subproblem(&state, net, &model).map_err(wrap)?;
        let mut x0 = vars.to_vec();
        if !pull_inside(&problem, net, &mut x0) {
            return Err(wrap(Error::InfeasibleStart(format!(
                "min slack {:e} after shrinking",
                problem.min_slack(&x0)
            ))));
        }
        let start_obj = problem.objective(&x0);
        let result = convex_core::solve(&problem, &x0).map_err(wrap)?;
        if result.status != SolveStatus::Optimal {
            if result.obj >= start_obj && problem.min_slack(&result.x_opt) > 0.0 {
                log::warn!(
                    "SCA iteration {n}: subproblem ended {:?} (KKT residual {:e}); keeping its improvement",
                    result.status,
                    result.kkt_residual
                );
            } else {
                log::warn!(
                    "SCA iteration {n}: subproblem ended {:?} without improvement; stopping",
                    result.status
                );
                break;
            }
        }
        vars = OptVars::from_vec(lay, &result.x_opt);
        if vars
            .sigma2_dl
            .iter()
            .chain(&vars.sigma2_ul)
            .any(|&s| s <= floor * (1.0 + 1e-6))
        {
            log::warn!("SCA iteration {n}: compression noise variance at its floor");
        }
        report = evaluate(net, q, &vars).map_err(wrap)?;
        trace.push(TraceRow::new(n, result.obj, &report, net, &vars));
        let change = (result.obj - previous).abs();
        previous = result.obj;
        if change <= net.cfg.sca_tol {
            converged = true;
            break;
        }
    }
    Ok(ScaOutcome {
        vars,
        report,
        trace,
        converged,
    })
}
