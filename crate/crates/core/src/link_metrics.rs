//! Closed-form link quantities under the additive quantization noise model:
//! quantization covariance, downlink and uplink rate lower bounds, fronthaul
//! compression rates and T-RAU transmit power.
//!
//! Public rates and capacities are in bps/Hz. These evaluators work directly
//! on the matrices; the optimizer uses the equivalent affine forms from
//! [`crate::surrogate`].

use rand::Rng;
use serde::Serialize;

use crate::beamforming::BeamformerSet;
use crate::channel::{draw_channels, ChannelSet};
use crate::error::{Error, Result};
use crate::linalg::{block_diag, diag_part, fro2, trace_re, vec_norm2, CMat, CVec, ShiftedGram};
use crate::scenario::{generate_layout, DuplexMode, Layout, LinkBudget, SimRng, SystemConfig};

/// Minimum normalized MSE of a `B`-bit uniform quantizer (2^B levels, optimal
/// step) on a unit-variance Gaussian, for `B = 1..=16`.
///
/// Regenerate with `cargo run --example rho_table`; the table is checked
/// against the same computation in `tests/rho_oracle.rs`.
pub const RHO_TABLE: [f64; 16] = [
    3.6338022763241873e-1,
    1.1884605047271253e-1,
    3.743965940851733e-2,
    1.1542884425375254e-2,
    3.495211359618704e-3,
    1.040045410006231e-3,
    3.043327712120967e-4,
    8.768618590744231e-5,
    2.4919029685067335e-5,
    6.997005209170436e-6,
    1.94441313263281e-6,
    5.355365371930585e-7,
    1.463693283371937e-7,
    3.973939662276221e-8,
    1.0726983595797753e-8,
    2.88092238375471e-9,
];

pub fn rho_for_bits(bits: u32) -> Result<f64> {
    if !(1..=16).contains(&bits) {
        return Err(Error::BitsOutOfRange(bits));
    }
    Ok(RHO_TABLE[bits as usize - 1])
}

/// DAC resolution and the matching distortion factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantModel {
    /// `0` when built from an explicit distortion factor.
    pub bits: u32,
    pub rho: f64,
}

impl QuantModel {
    pub fn from_bits(bits: u32) -> Result<Self> {
        Ok(Self {
            bits,
            rho: rho_for_bits(bits)?,
        })
    }

    pub fn with_rho(rho: f64) -> Self {
        Self { bits: 0, rho }
    }

    pub fn ideal() -> Self {
        Self::with_rho(0.0)
    }

    /// Gain applied to the useful signal amplitude, `1 − ρ`.
    pub fn gain(&self) -> f64 {
        1.0 - self.rho
    }
}

/// Optimization variables: power coefficients, compression noise variances and uplink powers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptVars {
    pub eta: Vec<f64>,
    pub sigma2_dl: Vec<f64>,
    pub sigma2_ul: Vec<f64>,
    pub p_ul: Vec<f64>,
}

/// Position of each variable group inside the flat vector used by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub k: usize,
    pub n_t: usize,
    pub n_r: usize,
    pub j: usize,
}

impl VarLayout {
    pub fn len(&self) -> usize {
        self.k + self.n_t + self.n_r + self.j
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eta(&self, k: usize) -> usize {
        k
    }

    pub fn sigma2_dl(&self, m: usize) -> usize {
        self.k + m
    }

    pub fn sigma2_ul(&self, z: usize) -> usize {
        self.k + self.n_t + z
    }

    pub fn p_ul(&self, j: usize) -> usize {
        self.k + self.n_t + self.n_r + j
    }
}

impl OptVars {
    pub fn layout(&self) -> VarLayout {
        VarLayout {
            k: self.eta.len(),
            n_t: self.sigma2_dl.len(),
            n_r: self.sigma2_ul.len(),
            j: self.p_ul.len(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        [&self.eta[..], &self.sigma2_dl, &self.sigma2_ul, &self.p_ul].concat()
    }

    pub fn from_vec(layout: VarLayout, x: &[f64]) -> Self {
        assert_eq!(x.len(), layout.len());
        let (eta, rest) = x.split_at(layout.k);
        let (sdl, rest) = rest.split_at(layout.n_t);
        let (sul, pul) = rest.split_at(layout.n_r);
        Self {
            eta: eta.to_vec(),
            sigma2_dl: sdl.to_vec(),
            sigma2_ul: sul.to_vec(),
            p_ul: pul.to_vec(),
        }
    }

    pub fn all_nonnegative(&self) -> bool {
        self.to_vec().iter().all(|&v| v >= 0.0)
    }
}

/// Layout and channels drawn from two child streams of `rng`.
pub fn draw_realization<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    mode: DuplexMode,
    rng: &mut R,
) -> Result<(Layout, ChannelSet)> {
    use rand::SeedableRng;
    let mut layout_rng = SimRng::seed_from_u64(rng.random());
    let mut channel_rng = SimRng::seed_from_u64(rng.random());
    let layout = generate_layout(cfg, mode, &mut layout_rng)?;
    let channels = draw_channels(&layout, cfg, &mut channel_rng);
    Ok((layout, channels))
}

/// One realization of the network: parameters, channels and beamformers.
#[derive(Debug, Clone)]
pub struct Network {
    pub cfg: SystemConfig,
    pub budget: LinkBudget,
    pub channels: ChannelSet,
    pub beams: BeamformerSet,
}

impl Network {
    pub fn new(cfg: SystemConfig, channels: ChannelSet) -> Result<Self> {
        let beams = BeamformerSet::design(&channels, &cfg)?;
        Ok(Self {
            budget: cfg.budget(),
            cfg,
            channels,
            beams,
        })
    }

    /// Layout, channels and beamformers from one random source.
    pub fn realize<R: Rng + ?Sized>(
        cfg: &SystemConfig,
        mode: DuplexMode,
        rng: &mut R,
    ) -> Result<Self> {
        let (_, channels) = draw_realization(cfg, mode, rng)?;
        Self::new(cfg.clone(), channels)
    }

    pub fn var_layout(&self) -> VarLayout {
        VarLayout {
            k: self.channels.n_dl_users(),
            n_t: self.channels.n_trau(),
            n_r: self.channels.n_rrau(),
            j: self.channels.n_ul_users(),
        }
    }

    pub fn n_rf(&self) -> usize {
        self.beams.rf_chains()
    }
}

/// `F_m diag(η)^{1/2}`, a square root of the precoded covariance.
pub fn precoded_factor(f_m: &CMat, eta: &[f64]) -> CMat {
    let mut scaled = f_m.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= crate::linalg::c(eta[k].sqrt(), 0.0);
    }
    scaled
}

/// `F_m diag(η) F_m^H`.
pub fn precoded_covariance(f_m: &CMat, eta: &[f64]) -> CMat {
    let scaled = precoded_factor(f_m, eta);
    &scaled * scaled.adjoint()
}

/// Covariance block of the total noise `q_m` (quantization plus compressed fronthaul noise).
pub fn quant_covariance_block(f_m: &CMat, eta: &[f64], sigma2_dl: f64, q: QuantModel) -> CMat {
    let n = f_m.nrows();
    let rho = q.rho;
    diag_part(&precoded_covariance(f_m, eta)).scale(rho * (1.0 - rho))
        + CMat::identity(n, n).scale((1.0 - rho) * sigma2_dl)
}

/// Block-diagonal covariance of `q = [q_1; …; q_{N_T}]`.
pub fn quant_covariance(beams: &BeamformerSet, vars: &OptVars, q: QuantModel) -> CMat {
    let blocks: Vec<CMat> = beams
        .f_digital
        .iter()
        .zip(&vars.sigma2_dl)
        .map(|(f, &s)| quant_covariance_block(f, &vars.eta, s, q))
        .collect();
    block_diag(&blocks)
}

fn quad(v: &CVec, m: &CMat) -> f64 {
    v.dotc(&(m * v)).re
}

/// Interference-plus-noise power at downlink user `k`.
pub fn downlink_denominator(net: &Network, q: QuantModel, vars: &OptVars, k: usize) -> f64 {
    let cq = quant_covariance(&net.beams, vars, q);
    let iui: f64 = (0..vars.p_ul.len())
        .map(|j| net.channels.t_iui[(k, j)].norm_sqr() * vars.p_ul[j])
        .sum();
    quad(&net.beams.h_eff[k], &cq) + iui + net.budget.noise
}

pub fn downlink_rate(net: &Network, q: QuantModel, vars: &OptVars, k: usize) -> Result<f64> {
    let den = downlink_denominator(net, q, vars, k);
    if !(den > 0.0) {
        return Err(Error::NonPositiveDenominator {
            what: format!("downlink user {k}"),
            value: den,
        });
    }
    let signal = q.gain().powi(2) * vars.eta[k];
    Ok((1.0 + signal / den).log2())
}

/// `G_z`: the `G_{m,z}` blocks stacked over T-RAUs.
pub fn stacked_residual(beams: &BeamformerSet, z: usize) -> CMat {
    let n_rf = beams.rf_chains();
    let n_t = beams.g_resid.len();
    let mut g = CMat::zeros(n_t * n_rf, n_rf);
    for (m, row) in beams.g_resid.iter().enumerate() {
        g.view_mut((m * n_rf, 0), (n_rf, n_rf)).copy_from(&row[z]);
    }
    g
}

/// The four interference-plus-noise terms `(A, B, C, D)` of uplink user `j`.
pub fn uplink_terms(net: &Network, q: QuantModel, vars: &OptVars, j: usize) -> [f64; 4] {
    let beams = &net.beams;
    let z = beams.assoc[j];
    let v = &beams.v_rx[j];
    let a: f64 = beams
        .f_digital
        .iter()
        .enumerate()
        .map(|(m, f)| {
            let gv = &beams.g_resid[m][z] * v;
            (0..vars.eta.len())
                .map(|k| vars.eta[k] * gv.dotc(&f.column(k)).norm_sqr())
                .sum::<f64>()
        })
        .sum::<f64>()
        * q.gain().powi(2);
    let gz = stacked_residual(beams, z);
    let b = quad(&(&gz * v), &quant_covariance(beams, vars, q));
    let c = net.budget.noise * vec_norm2(&(&beams.u_analog[z] * v));
    let d = vars.sigma2_ul[z] * vec_norm2(v);
    [a, b, c, d]
}

pub fn uplink_denominator(net: &Network, q: QuantModel, vars: &OptVars, j: usize) -> f64 {
    uplink_terms(net, q, vars, j).iter().sum()
}

/// Useful uplink power `P_{U,j} |v_j^H ḡ_{j,z}|²`.
pub fn uplink_signal(net: &Network, vars: &OptVars, j: usize) -> f64 {
    let z = net.beams.assoc[j];
    vars.p_ul[j] * net.beams.v_rx[j].dotc(&net.beams.g_eff[j][z]).norm_sqr()
}

pub fn uplink_rate(net: &Network, q: QuantModel, vars: &OptVars, j: usize) -> Result<f64> {
    let den = uplink_denominator(net, q, vars, j);
    if !(den > 0.0) {
        return Err(Error::NonPositiveDenominator {
            what: format!("uplink user {j}"),
            value: den,
        });
    }
    Ok((1.0 + uplink_signal(net, vars, j) / den).log2())
}

fn compression_rate(factor: &CMat, sigma2: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::ZeroCompressionNoise {
            what: what(),
            value: sigma2,
        });
    }
    Ok(ShiftedGram::new(factor, sigma2)?.log_gain() / std::f64::consts::LN_2)
}

/// Downlink fronthaul rate of T-RAU `m`.
pub fn fronthaul_dl(beams: &BeamformerSet, vars: &OptVars, m: usize) -> Result<f64> {
    let factor = precoded_factor(&beams.f_digital[m], &vars.eta);
    compression_rate(&factor, vars.sigma2_dl[m], || format!("T-RAU {m}"))
}

/// Transmit power of T-RAU `m`.
pub fn transmit_power(beams: &BeamformerSet, vars: &OptVars, q: QuantModel, m: usize) -> f64 {
    let w = &beams.w_analog[m];
    let cov = precoded_covariance(&beams.f_digital[m], &vars.eta);
    let rho = q.rho;
    let useful = trace_re(&(w * &cov * w.adjoint()));
    let distortion = trace_re(&(w * diag_part(&cov) * w.adjoint()));
    (1.0 - rho).powi(2) * useful
        + rho * (1.0 - rho) * distortion
        + (1.0 - rho) * vars.sigma2_dl[m] * fro2(w)
}

/// Received covariance at R-RAU `z` before compression, excluding the compression noise.
pub fn uplink_received_covariance(net: &Network, q: QuantModel, vars: &OptVars, z: usize) -> CMat {
    let beams = &net.beams;
    let u = &beams.u_analog[z];
    let utu = u.adjoint() * u;
    let n_rf = u.ncols();
    let mut cov = CMat::zeros(n_rf, n_rf);
    for (j, row) in beams.g_eff.iter().enumerate() {
        let g = &row[z];
        cov += g * g.adjoint() * crate::linalg::c(vars.p_ul[j], 0.0);
    }
    cov + utu.scale(uplink_noise_floor(net, q, vars))
}

/// Square root of [`uplink_received_covariance`]: one column per uplink user
/// followed by the scaled analog combiner.
pub fn uplink_received_factor(net: &Network, q: QuantModel, vars: &OptVars, z: usize) -> CMat {
    let beams = &net.beams;
    let u = &beams.u_analog[z];
    let n_users = beams.g_eff.len();
    let mut factor = CMat::zeros(u.ncols(), n_users + u.nrows());
    for (j, row) in beams.g_eff.iter().enumerate() {
        factor
            .column_mut(j)
            .copy_from(&(&row[z] * crate::linalg::c(vars.p_ul[j].sqrt(), 0.0)));
    }
    let floor = uplink_noise_floor(net, q, vars);
    factor
        .columns_mut(n_users, u.nrows())
        .copy_from(&(u.adjoint() * crate::linalg::c(floor.sqrt(), 0.0)));
    factor
}

/// Residual inter-RAU interference plus thermal noise per receive antenna.
fn uplink_noise_floor(net: &Network, q: QuantModel, vars: &OptVars) -> f64 {
    let iri: f64 = (0..net.beams.w_analog.len())
        .map(|m| net.budget.residual_iri * transmit_power(&net.beams, vars, q, m))
        .sum();
    iri + net.budget.noise
}

/// Uplink fronthaul rate of R-RAU `z`.
pub fn fronthaul_ul(net: &Network, q: QuantModel, vars: &OptVars, z: usize) -> Result<f64> {
    let factor = uplink_received_factor(net, q, vars, z);
    compression_rate(&factor, vars.sigma2_ul[z], || format!("R-RAU {z}"))
}

/// Everything the problem constraints and objective need at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub r_dl: Vec<f64>,
    pub r_ul: Vec<f64>,
    pub c_dl: Vec<f64>,
    pub c_ul: Vec<f64>,
    pub p_dl: Vec<f64>,
    pub objective: f64,
}

impl RateReport {
    pub fn sum_dl(&self) -> f64 {
        self.r_dl.iter().sum()
    }

    pub fn sum_ul(&self) -> f64 {
        self.r_ul.iter().sum()
    }

    /// Largest amount by which any original constraint is exceeded (0 when feasible):
    /// `(downlink fronthaul, uplink fronthaul, T-RAU power, uplink power)`.
    pub fn violations(&self, net: &Network, vars: &OptVars) -> [f64; 4] {
        let over = |vals: &[f64], cap: f64| vals.iter().map(|v| v - cap).fold(0.0, f64::max);
        [
            over(&self.c_dl, net.cfg.c_dl_bpshz),
            over(&self.c_ul, net.cfg.c_ul_bpshz),
            over(&self.p_dl, net.budget.p_dl_max),
            over(&vars.p_ul, net.budget.p_ul_max),
        ]
    }
}

pub fn evaluate(net: &Network, q: QuantModel, vars: &OptVars) -> Result<RateReport> {
    let lay = net.var_layout();
    let r_dl = (0..lay.k)
        .map(|k| downlink_rate(net, q, vars, k))
        .collect::<Result<Vec<_>>>()?;
    let r_ul = (0..lay.j)
        .map(|j| uplink_rate(net, q, vars, j))
        .collect::<Result<Vec<_>>>()?;
    let c_dl = (0..lay.n_t)
        .map(|m| fronthaul_dl(&net.beams, vars, m))
        .collect::<Result<Vec<_>>>()?;
    let c_ul = (0..lay.n_r)
        .map(|z| fronthaul_ul(net, q, vars, z))
        .collect::<Result<Vec<_>>>()?;
    let p_dl = (0..lay.n_t)
        .map(|m| transmit_power(&net.beams, vars, q, m))
        .collect();
    let objective =
        net.cfg.weight_dl * r_dl.iter().sum::<f64>() + net.cfg.weight_ul * r_ul.iter().sum::<f64>();
    Ok(RateReport {
        r_dl,
        r_ul,
        c_dl,
        c_ul,
        p_dl,
        objective,
    })
}
