//! Closed-form spot checks, each reduced to its worst observed error.

use std::f64::consts::{LN_2, PI};

use nafd_core::channel::steering_vector;
use nafd_core::convex_core::AffineMinusLogConstraint;
use nafd_core::linalg::CMat;
use nafd_core::link_metrics::{
    downlink_denominator, fronthaul_dl, fronthaul_ul, quant_covariance, uplink_denominator,
    Network, OptVars, QuantModel,
};
use nafd_core::sca_optimizer::{
    init_vars, linearize_dl_fronthaul, linearize_h, linearize_ul_fronthaul, run_sca,
    variable_scales, ScaState,
};
use nafd_core::scenario::{rng_for, DuplexMode};
use nafd_core::surrogate::AffineModel;
use rand::Rng;

use super::{network, random_vars, rel_err, table_cfg, Worst};

/// Linearized fronthaul load in bps/Hz for a constraint whose capacity is `cap`.
pub fn linearized_load(c: &AffineMinusLogConstraint, x: &[f64], cap: f64) -> f64 {
    let lhs: f64 =
        c.coeffs.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - c.log_weight * x[c.log_var].ln();
    cap + (lhs - c.rhs) / LN_2
}

/// `Σ ω log2(denominator)`, straight from the matrix evaluators.
pub fn subtracted_term(net: &Network, q: QuantModel, vars: &OptVars) -> f64 {
    let lay = net.var_layout();
    let dl: f64 = (0..lay.k)
        .map(|k| downlink_denominator(net, q, vars, k).log2())
        .sum();
    let ul: f64 = (0..lay.j)
        .map(|j| uplink_denominator(net, q, vars, j).log2())
        .sum();
    net.cfg.weight_dl * dl + net.cfg.weight_ul * ul
}

/// Denominators of every link at `vars`, weighted by `ω / ln 2`.
fn weighted_denominators(net: &Network, q: QuantModel, vars: &OptVars) -> Vec<(f64, f64)> {
    let lay = net.var_layout();
    let dl = (0..lay.k).map(|k| {
        (
            net.cfg.weight_dl / LN_2,
            downlink_denominator(net, q, vars, k),
        )
    });
    let ul = (0..lay.j).map(|j| {
        (
            net.cfg.weight_ul / LN_2,
            uplink_denominator(net, q, vars, j),
        )
    });
    dl.chain(ul).collect()
}

/// Expansion points: the starting point and the final SCA iterate of a few
/// reference-sized instances in both modes and at several resolutions.
pub fn expansion_points() -> Vec<(Network, QuantModel, OptVars)> {
    let cfg = table_cfg();
    let mut out = Vec::new();
    for i in 0..4u64 {
        let mode = if i % 2 == 0 {
            DuplexMode::Nafd
        } else {
            DuplexMode::Ccfd
        };
        let net = network(&cfg, mode, 41, i);
        let q = QuantModel::from_bits(1 + 2 * i as u32).unwrap();
        let start = init_vars(&net, q).unwrap();
        let end = run_sca(&net, q).unwrap().vars;
        out.push((net.clone(), q, start));
        out.push((net, q, end));
    }
    out
}

/// Largest entry of `C_q − blockdiag(σ²_D I)` with an ideal DAC, relative to
/// the noise power.
pub fn ideal_dac_residue() -> f64 {
    let net = network(&table_cfg(), DuplexMode::Nafd, 42, 0);
    let vars = random_vars(&net, &mut rng_for(42, &[1]));
    let cq = quant_covariance(&net.beams, &vars, QuantModel::ideal());
    let n_rf = net.n_rf();
    let expected = CMat::from_fn(cq.nrows(), cq.ncols(), |r, c| {
        let v = if r == c {
            vars.sigma2_dl[r / n_rf]
        } else {
            0.0
        };
        v.into()
    });
    (cq - expected).iter().map(|d| d.norm()).fold(0.0, f64::max) / net.budget.noise
}

/// Gap in bps/Hz between every linearized fronthaul constraint and the exact
/// load at its own expansion point.
pub fn fronthaul_tightness(points: &[(Network, QuantModel, OptVars)]) -> Worst {
    let mut worst = Worst::default();
    for (p, (net, q, vars)) in points.iter().enumerate() {
        let model = AffineModel::new(net, *q);
        let state = ScaState::at(net, *q, &model, vars.clone(), 1).unwrap();
        let x = vars.to_vec();
        for (m, c) in linearize_dl_fronthaul(&state, net)
            .unwrap()
            .iter()
            .enumerate()
        {
            let lin = linearized_load(c, &x, net.cfg.c_dl_bpshz);
            let exact = fronthaul_dl(&net.beams, vars, m).unwrap();
            worst.record((lin - exact).abs(), || {
                format!("point {p}, T-RAU {m}: {lin} vs {exact}")
            });
        }
        for (z, c) in linearize_ul_fronthaul(&state, net, &model)
            .unwrap()
            .iter()
            .enumerate()
        {
            let lin = linearized_load(c, &x, net.cfg.c_ul_bpshz);
            let exact = fronthaul_ul(net, *q, vars, z).unwrap();
            worst.record((lin - exact).abs(), || {
                format!("point {p}, R-RAU {z}: {lin} vs {exact}")
            });
        }
    }
    worst
}

/// Largest amount, relative to the load, by which a linearized fronthaul
/// constraint under-estimates the exact load at random points, with the
/// number of points drawn.
pub fn fronthaul_underestimate(
    points: &[(Network, QuantModel, OptVars)],
    samples: usize,
) -> (Worst, usize) {
    let mut rng = rng_for(43, &[]);
    let mut worst = Worst::default();
    let mut checked = 0;
    for (p, (net, q, vars)) in points.iter().enumerate() {
        let model = AffineModel::new(net, *q);
        let state = ScaState::at(net, *q, &model, vars.clone(), 1).unwrap();
        let dl = linearize_dl_fronthaul(&state, net).unwrap();
        let ul = linearize_ul_fronthaul(&state, net, &model).unwrap();
        for _ in 0..samples / points.len() + 1 {
            let other = random_vars(net, &mut rng);
            let x = other.to_vec();
            for (m, c) in dl.iter().enumerate() {
                let exact = fronthaul_dl(&net.beams, &other, m).unwrap();
                let short =
                    (exact - linearized_load(c, &x, net.cfg.c_dl_bpshz)) / exact.abs().max(1.0);
                worst.record(short, || format!("point {p}, T-RAU {m}"));
            }
            for (z, c) in ul.iter().enumerate() {
                let exact = fronthaul_ul(net, *q, &other, z).unwrap();
                let short =
                    (exact - linearized_load(c, &x, net.cfg.c_ul_bpshz)) / exact.abs().max(1.0);
                worst.record(short, || format!("point {p}, R-RAU {z}"));
            }
            checked += 1;
        }
    }
    (worst, checked)
}

/// Relative error of the tangent of the subtracted term: its value at the
/// expansion point and every coefficient against finite differences.
///
/// Each denominator is affine, so a forward difference over a step of
/// physical size is exact up to rounding; the logarithm enters through the
/// chain rule.
pub fn subtracted_term_gradient(points: &[(Network, QuantModel, OptVars)]) -> (Worst, Worst) {
    let (mut value, mut grad) = (Worst::default(), Worst::default());
    for (p, (net, q, vars)) in points.iter().enumerate() {
        let model = AffineModel::new(net, *q);
        let state = ScaState::at(net, *q, &model, vars.clone(), 1).unwrap();
        let tangent = linearize_h(&state, net, &model);
        let x = vars.to_vec();
        let lay = net.var_layout();
        value.record(
            rel_err(tangent.eval(&x), subtracted_term(net, *q, vars)),
            || format!("point {p}"),
        );
        let base = weighted_denominators(net, *q, vars);
        let steps = variable_scales(net, &model);
        for i in 0..x.len() {
            let mut y = x.clone();
            y[i] += steps[i];
            let moved = weighted_denominators(net, *q, &OptVars::from_vec(lay, &y));
            let fd: f64 = base
                .iter()
                .zip(&moved)
                .map(|(&(w, d), &(_, e))| w * (e - d) / steps[i] / d)
                .sum();
            let g = tangent.coeffs[i];
            let err = (g - fd).abs() / g.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
            grad.record(err, || {
                format!("point {p}, variable {i}: gradient {g:e} vs difference {fd:e}")
            });
        }
    }
    (value, grad)
}

/// Largest amount, relative to the term, by which the tangent falls below the
/// subtracted term at random points.
pub fn subtracted_term_underestimate(points: &[(Network, QuantModel, OptVars)]) -> Worst {
    let mut rng = rng_for(44, &[]);
    let mut worst = Worst::default();
    for (p, (net, q, vars)) in points.iter().enumerate() {
        let model = AffineModel::new(net, *q);
        let state = ScaState::at(net, *q, &model, vars.clone(), 1).unwrap();
        let tangent = linearize_h(&state, net, &model);
        for _ in 0..50 {
            let other = random_vars(net, &mut rng);
            let h = subtracted_term(net, *q, &other);
            let short = (h - tangent.eval(&other.to_vec())) / h.abs().max(1.0);
            worst.record(short, || format!("point {p}"));
        }
    }
    worst
}

/// Largest deviation from one of the norm of a steering vector at random
/// angles and array sizes.
pub fn steering_norm_error(samples: usize) -> f64 {
    let mut rng = rng_for(45, &[]);
    (0..samples)
        .map(|_| {
            let theta = rng.random_range(-PI..PI);
            let m = rng.random_range(1..=64);
            (steering_vector(theta, m).norm() - 1.0).abs()
        })
        .fold(0.0, f64::max)
}
