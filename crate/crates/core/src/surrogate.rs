//! Affine forms over the flat variable vector `[η, σ²_D, σ²_U, P_U]`.
//!
//! Every rate denominator, every useful-signal power and every T-RAU transmit
//! power is affine in the optimization variables once the beamformers are
//! fixed. The optimizer builds its subproblems from these coefficient vectors;
//! the direct matrix evaluators in [`crate::link_metrics`] serve as the check.

use crate::linalg::{vec_norm2, CVec};
use crate::link_metrics::{Network, QuantModel, VarLayout};

#[derive(Debug, Clone, PartialEq)]
pub struct AffineForm {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

impl AffineForm {
    pub fn zeros(n: usize) -> Self {
        Self {
            coeffs: vec![0.0; n],
            constant: 0.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.constant
    }

    pub fn add_scaled(&mut self, other: &AffineForm, s: f64) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
        self.constant += s * other.constant;
    }
}

impl std::ops::Add<&AffineForm> for AffineForm {
    type Output = AffineForm;

    fn add(mut self, rhs: &AffineForm) -> AffineForm {
        self.add_scaled(rhs, 1.0);
        self
    }
}

/// Adds `u^H C_q u` for a stacked vector `u` (one `N_RF` block per T-RAU).
fn add_quant_quadratic(
    form: &mut AffineForm,
    net: &Network,
    q: QuantModel,
    lay: VarLayout,
    u: &CVec,
) {
    let rho = q.rho;
    let n_rf = net.n_rf();
    for (m, f) in net.beams.f_digital.iter().enumerate() {
        let block = u.rows(m * n_rf, n_rf);
        for n in 0..n_rf {
            let w = block[n].norm_sqr();
            if w == 0.0 {
                continue;
            }
            for k in 0..lay.k {
                form.coeffs[lay.eta(k)] += rho * (1.0 - rho) * w * f[(n, k)].norm_sqr();
            }
            form.coeffs[lay.sigma2_dl(m)] += (1.0 - rho) * w;
        }
    }
}

/// Interference-plus-noise power of downlink user `k`.
pub fn downlink_denominator(net: &Network, q: QuantModel, k: usize) -> AffineForm {
    let lay = net.var_layout();
    let mut form = AffineForm::zeros(lay.len());
    add_quant_quadratic(&mut form, net, q, lay, &net.beams.h_eff[k]);
    for j in 0..lay.j {
        form.coeffs[lay.p_ul(j)] += net.channels.t_iui[(k, j)].norm_sqr();
    }
    form.constant = net.budget.noise;
    form
}

/// Useful received power of downlink user `k`.
pub fn downlink_signal(net: &Network, q: QuantModel, k: usize) -> AffineForm {
    let lay = net.var_layout();
    let mut form = AffineForm::zeros(lay.len());
    form.coeffs[lay.eta(k)] = q.gain().powi(2);
    form
}

/// Interference-plus-noise power of uplink user `j` after its receive vector.
pub fn uplink_denominator(net: &Network, q: QuantModel, j: usize) -> AffineForm {
    let lay = net.var_layout();
    let beams = &net.beams;
    let z = beams.assoc[j];
    let v = &beams.v_rx[j];
    let n_rf = net.n_rf();
    let mut form = AffineForm::zeros(lay.len());
    let mut stacked = CVec::zeros(lay.n_t * n_rf);
    for (m, f) in beams.f_digital.iter().enumerate() {
        let gv = &beams.g_resid[m][z] * v;
        for k in 0..lay.k {
            form.coeffs[lay.eta(k)] += q.gain().powi(2) * gv.dotc(&f.column(k)).norm_sqr();
        }
        stacked.rows_mut(m * n_rf, n_rf).copy_from(&gv);
    }
    add_quant_quadratic(&mut form, net, q, lay, &stacked);
    form.coeffs[lay.sigma2_ul(z)] += vec_norm2(v);
    form.constant = net.budget.noise * vec_norm2(&(&beams.u_analog[z] * v));
    form
}

/// Useful received power of uplink user `j`.
pub fn uplink_signal(net: &Network, j: usize) -> AffineForm {
    let lay = net.var_layout();
    let z = net.beams.assoc[j];
    let mut form = AffineForm::zeros(lay.len());
    form.coeffs[lay.p_ul(j)] = net.beams.v_rx[j].dotc(&net.beams.g_eff[j][z]).norm_sqr();
    form
}

/// Transmit power of T-RAU `m`.
pub fn transmit_power(net: &Network, q: QuantModel, m: usize) -> AffineForm {
    let lay = net.var_layout();
    let rho = q.rho;
    let w = &net.beams.w_analog[m];
    let f = &net.beams.f_digital[m];
    let col_norms: Vec<f64> = w.column_iter().map(|c| c.norm_squared()).collect();
    let mut form = AffineForm::zeros(lay.len());
    for k in 0..lay.k {
        let fk = f.column(k);
        let useful = (w * fk).norm_squared();
        let distortion: f64 = (0..fk.len()).map(|n| fk[n].norm_sqr() * col_norms[n]).sum();
        form.coeffs[lay.eta(k)] = (1.0 - rho).powi(2) * useful + rho * (1.0 - rho) * distortion;
    }
    form.coeffs[lay.sigma2_dl(m)] = (1.0 - rho) * col_norms.iter().sum::<f64>();
    form
}

/// All affine forms of one network at one DAC resolution.
#[derive(Debug, Clone)]
pub struct AffineModel {
    pub dl_den: Vec<AffineForm>,
    pub dl_sig: Vec<AffineForm>,
    pub ul_den: Vec<AffineForm>,
    pub ul_sig: Vec<AffineForm>,
    pub p_dl: Vec<AffineForm>,
}

impl AffineModel {
    pub fn new(net: &Network, q: QuantModel) -> Self {
        let lay = net.var_layout();
        Self {
            dl_den: (0..lay.k)
                .map(|k| downlink_denominator(net, q, k))
                .collect(),
            dl_sig: (0..lay.k).map(|k| downlink_signal(net, q, k)).collect(),
            ul_den: (0..lay.j).map(|j| uplink_denominator(net, q, j)).collect(),
            ul_sig: (0..lay.j).map(|j| uplink_signal(net, j)).collect(),
            p_dl: (0..lay.n_t).map(|m| transmit_power(net, q, m)).collect(),
        }
    }
}
