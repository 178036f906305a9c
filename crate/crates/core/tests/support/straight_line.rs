//! Rates, fronthaul loads and transmit powers recomputed from the raw channels
//! and beamformers with loops and a real-embedding determinant.

use nafd_core::linalg::{CMat, CVec, C64};
use nafd_core::link_metrics::{evaluate, Network, OptVars, QuantModel};
use nafd_core::scenario::{rng_for, DuplexMode};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{network, random_vars, rel_err, table_cfg, Worst};

/// Diagonal of the quantization covariance of T-RAU `m`.
fn cq_diag(net: &Network, vars: &OptVars, rho: f64, m: usize) -> Vec<f64> {
    let f = &net.beams.f_digital[m];
    (0..f.nrows())
        .map(|n| {
            let sig: f64 = (0..f.ncols())
                .map(|k| vars.eta[k] * f[(n, k)].norm_sqr())
                .sum();
            rho * (1.0 - rho) * sig + (1.0 - rho) * vars.sigma2_dl[m]
        })
        .collect()
}

pub fn power(net: &Network, vars: &OptVars, rho: f64, m: usize) -> f64 {
    let w = &net.beams.w_analog[m];
    let f = &net.beams.f_digital[m];
    let mut p = 0.0;
    for k in 0..f.ncols() {
        p += (1.0 - rho).powi(2) * vars.eta[k] * (w * f.column(k)).norm_squared();
    }
    for (n, c) in cq_diag(net, vars, rho, m).into_iter().enumerate() {
        p += c * w.column(n).norm_squared();
    }
    p
}

pub fn dl_rate(net: &Network, vars: &OptVars, rho: f64, k: usize) -> f64 {
    let mut den = net.budget.noise;
    for m in 0..net.beams.w_analog.len() {
        let h = net.beams.w_analog[m].adjoint() * &net.channels.h_dl[k][m];
        for (n, c) in cq_diag(net, vars, rho, m).into_iter().enumerate() {
            den += c * h[n].norm_sqr();
        }
    }
    for j in 0..vars.p_ul.len() {
        den += net.channels.t_iui[(k, j)].norm_sqr() * vars.p_ul[j];
    }
    (1.0 + (1.0 - rho).powi(2) * vars.eta[k] / den).log2()
}

pub fn ul_rate(net: &Network, vars: &OptVars, rho: f64, j: usize) -> f64 {
    let b = &net.beams;
    let z = b.assoc[j];
    let u = &b.u_analog[z];
    let v = &b.v_rx[j];
    let uv = u * v;
    let mut den = net.budget.noise * uv.norm_squared() + vars.sigma2_ul[z] * v.norm_squared();
    for m in 0..b.w_analog.len() {
        let w = &b.w_analog[m];
        let f = &b.f_digital[m];
        let resid = &net.channels.h_iri_resid[m][z];
        for k in 0..f.ncols() {
            let t = u.adjoint() * (resid * (w * f.column(k)));
            den += (1.0 - rho).powi(2) * vars.eta[k] * v.dotc(&t).norm_sqr();
        }
        let back = w.adjoint() * (resid.adjoint() * &uv);
        for (n, c) in cq_diag(net, vars, rho, m).into_iter().enumerate() {
            den += c * back[n].norm_sqr();
        }
    }
    let gbar = u.adjoint() * &net.channels.g_ul[j][z];
    (1.0 + vars.p_ul[j] * v.dotc(&gbar).norm_sqr() / den).log2()
}

/// `log det` of a Hermitian positive definite matrix through the Cholesky
/// factor of its real `2n × 2n` embedding, whose determinant is `det²`.
fn logdet(a: &CMat) -> f64 {
    let n = a.nrows();
    let r = DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let e = a[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => e.re,
            (true, false) => -e.im,
            (false, true) => e.im,
        }
    });
    let l = r.cholesky().expect("positive definite").l();
    (0..2 * n).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub fn fronthaul_dl(net: &Network, vars: &OptVars, m: usize) -> f64 {
    let f = &net.beams.f_digital[m];
    let n = f.nrows();
    let mut a = CMat::identity(n, n) * C64::new(vars.sigma2_dl[m], 0.0);
    for k in 0..f.ncols() {
        let fk: CVec = f.column(k).into_owned();
        a += &fk * fk.adjoint() * C64::new(vars.eta[k], 0.0);
    }
    (logdet(&a) - n as f64 * vars.sigma2_dl[m].ln()) / std::f64::consts::LN_2
}

pub fn fronthaul_ul(net: &Network, vars: &OptVars, rho: f64, z: usize) -> f64 {
    let b = &net.beams;
    let u = &b.u_analog[z];
    let n = u.ncols();
    let leak: f64 = (0..b.w_analog.len())
        .map(|m| net.budget.residual_iri * power(net, vars, rho, m))
        .sum();
    let mut cov = u.adjoint() * u * C64::new(leak + net.budget.noise, 0.0)
        + CMat::identity(n, n) * C64::new(vars.sigma2_ul[z], 0.0);
    for j in 0..vars.p_ul.len() {
        let g = u.adjoint() * &net.channels.g_ul[j][z];
        cov += &g * g.adjoint() * C64::new(vars.p_ul[j], 0.0);
    }
    (logdet(&cov) - n as f64 * vars.sigma2_ul[z].ln()) / std::f64::consts::LN_2
}

/// Largest relative disagreement between the library evaluators and the
/// straight-line ones over `instances` reference-sized networks, alternating
/// duplex modes, with random resolutions and operating points.
pub fn evaluator_disagreement(instances: u64) -> Worst {
    let cfg = table_cfg();
    let mut worst = Worst::default();
    for i in 0..instances {
        let mode = if i % 2 == 0 {
            DuplexMode::Nafd
        } else {
            DuplexMode::Ccfd
        };
        let net = network(&cfg, mode, 11, i);
        let mut rng = rng_for(12, &[i]);
        let bits = rng.random_range(1..=8);
        let q = QuantModel::from_bits(bits).unwrap();
        let vars = random_vars(&net, &mut rng);
        let report = evaluate(&net, q, &vars).unwrap();
        let lay = net.var_layout();
        let mut check = |lib: f64, oracle: f64, what: &str, idx: usize| {
            worst.record(rel_err(lib, oracle), || {
                format!("instance {i}, {what} {idx}: {lib} vs {oracle}")
            });
        };
        for k in 0..lay.k {
            check(
                report.r_dl[k],
                dl_rate(&net, &vars, q.rho, k),
                "downlink rate",
                k,
            );
        }
        for j in 0..lay.j {
            check(
                report.r_ul[j],
                ul_rate(&net, &vars, q.rho, j),
                "uplink rate",
                j,
            );
        }
        for m in 0..lay.n_t {
            check(
                report.c_dl[m],
                fronthaul_dl(&net, &vars, m),
                "downlink fronthaul",
                m,
            );
            check(
                report.p_dl[m],
                power(&net, &vars, q.rho, m),
                "transmit power",
                m,
            );
        }
        for z in 0..lay.n_r {
            check(
                report.c_ul[z],
                fronthaul_ul(&net, &vars, q.rho, z),
                "uplink fronthaul",
                z,
            );
        }
    }
    worst
}

fn cn(rng: &mut impl Rng, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

/// Largest relative gap between the closed-form transmit power and the sample
/// mean of `‖x_m‖²` with `x_m = W_m ((1 − ρ)(F_m η^{1/2} s + d_m) + e_m)`, where
/// `d_m` is the compression noise and `e_m` the quantization noise of variance
/// `ρ(1 − ρ)` times the per-chain input power.
pub fn transmit_power_sampling_gap(instances: u64, samples: usize) -> Worst {
    let cfg = table_cfg();
    let mut worst = Worst::default();
    for i in 0..instances {
        let net = network(&cfg, DuplexMode::Nafd, 21, i);
        let mut rng = rng_for(22, &[i]);
        let q = QuantModel::from_bits(1 + (i as u32 % 4)).unwrap();
        let rho = q.rho;
        let vars = random_vars(&net, &mut rng);
        let report = evaluate(&net, q, &vars).unwrap();
        for m in 0..net.var_layout().n_t {
            let w = &net.beams.w_analog[m];
            let f = &net.beams.f_digital[m];
            let n_rf = f.nrows();
            let input_power: Vec<f64> = (0..n_rf)
                .map(|n| {
                    (0..f.ncols())
                        .map(|k| vars.eta[k] * f[(n, k)].norm_sqr())
                        .sum::<f64>()
                        + vars.sigma2_dl[m]
                })
                .collect();
            let mut acc = 0.0;
            for _ in 0..samples {
                let s: CVec = CVec::from_fn(f.ncols(), |k, _| cn(&mut rng, vars.eta[k]));
                let mut y = f * s;
                for n in 0..n_rf {
                    let d = cn(&mut rng, vars.sigma2_dl[m]);
                    let e = cn(&mut rng, rho * (1.0 - rho) * input_power[n]);
                    y[n] = (y[n] + d) * (1.0 - rho) + e;
                }
                acc += (w * y).norm_squared();
            }
            let mc = acc / samples as f64;
            worst.record(rel_err(report.p_dl[m], mc), || {
                format!(
                    "instance {i}, T-RAU {m}: closed form {} vs sampled {mc}",
                    report.p_dl[m]
                )
            });
        }
    }
    worst
}
