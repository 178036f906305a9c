//! Hybrid beamformers: constant-modulus analog stages, a network-wide digital
//! zero-forcing precoder and per-user uplink receive vectors.

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::{c, cis, complete_orthonormal, vec_norm2, CMat, CVec};
use crate::scenario::SystemConfig;

/// Alternating-projection iterations used for every analog stage.
pub const ANALOG_ITERATIONS: usize = 50;

/// Relative singular-value threshold below which the stacked downlink channel
/// counts as rank deficient.
pub const ZF_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct BeamformerSet {
    /// `W_m`, `M × N_RF`, entries of modulus `1/√M`.
    pub w_analog: Vec<CMat>,
    /// `U_z`, `M × N_RF`, entries of modulus `1/√M`.
    pub u_analog: Vec<CMat>,
    /// `F_m`, `N_RF × K`: rows of the network ZF precoder that belong to T-RAU `m`.
    pub f_digital: Vec<CMat>,
    /// `v_j`, `N_RF`: receive vector of uplink user `j` at its serving R-RAU.
    pub v_rx: Vec<CVec>,
    /// `h_k`, `N_T·N_RF`: stacked `W_m^H h_{k,m}`.
    pub h_eff: Vec<CVec>,
    /// `ḡ_{j,z} = U_z^H g_{j,z}`.
    pub g_eff: Vec<Vec<CVec>>,
    /// `G_{m,z} = W_m^H H̃_{m,z}^H U_z`, `N_RF × N_RF`.
    pub g_resid: Vec<Vec<CMat>>,
    /// Serving R-RAU of each uplink user.
    pub assoc: Vec<usize>,
}

impl BeamformerSet {
    pub fn rf_chains(&self) -> usize {
        self.w_analog
            .first()
            .or(self.u_analog.first())
            .map_or(0, |w| w.ncols())
    }

    /// Builds every stage for one channel realization.
    pub fn design(channels: &ChannelSet, cfg: &SystemConfig) -> Result<Self> {
        let (w_analog, u_analog) = design_analog(channels, cfg);
        let zf = design_digital_zf(channels, &w_analog)?;
        let rx = associate_and_receive(channels, &u_analog)?;
        let g_resid = channels
            .h_iri_resid
            .iter()
            .zip(&w_analog)
            .map(|(row, w)| {
                row.iter()
                    .zip(&u_analog)
                    .map(|(h, u)| w.adjoint() * h.adjoint() * u)
                    .collect()
            })
            .collect();
        Ok(Self {
            w_analog,
            u_analog,
            f_digital: zf.f_blocks,
            v_rx: rx.v_rx,
            h_eff: zf.h_eff,
            g_eff: rx.g_eff,
            g_resid,
            assoc: rx.assoc,
        })
    }
}

/// Elementwise projection onto `{(1/√M) e^{jφ}}`.
pub fn project_constant_modulus(x: &CMat) -> CMat {
    let s = 1.0 / (x.nrows() as f64).sqrt();
    x.map(|z| cis(z.arg()) * s)
}

/// Closest matrix of the form `T Q` with `Q` unitary (orthogonal Procrustes).
pub fn project_unitary_span(target: &CMat, w: &CMat) -> CMat {
    let svd = (target.adjoint() * w).svd(true, true);
    let q = svd.u.expect("u requested") * svd.v_t.expect("v_t requested");
    target * q
}

/// Result of an alternating-projection run.
#[derive(Debug, Clone)]
pub struct ProjectionRun {
    pub analog: CMat,
    /// `‖W_i − X_i‖_F` after each iteration.
    pub distances: Vec<f64>,
}

/// Alternates between the constant-modulus set and the unitary span of
/// `target` (`M × N_RF`, orthonormal columns), starting from the phases of
/// `target`. Columns are phase-aligned to a real first entry on exit, which
/// leaves both sets invariant.
pub fn alternating_projection(target: &CMat, iterations: usize) -> ProjectionRun {
    let mut w = project_constant_modulus(target);
    let mut distances = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let x = project_unitary_span(target, &w);
        w = project_constant_modulus(&x);
        distances.push((&w - &x).norm());
    }
    for mut col in w.column_iter_mut() {
        let ph = cis(-col[0].arg());
        col *= ph;
    }
    ProjectionRun {
        analog: w,
        distances,
    }
}

/// Dominant `n_rf` left singular vectors of the `M × n_users` matrix whose
/// columns are `chans`, completed to `n_rf` orthonormal columns if needed.
fn dominant_subspace(chans: &[&CVec], m: usize, n_rf: usize) -> CMat {
    if chans.is_empty() {
        return CMat::zeros(m, 0);
    }
    let stacked = CMat::from_columns(&chans.iter().map(|v| (*v).clone()).collect::<Vec<_>>());
    let svd = stacked.svd(true, false);
    let u = svd.u.expect("u requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let keep: Vec<CVec> = order
        .iter()
        .take(n_rf)
        .filter(|&&i| svd.singular_values[i] > 0.0)
        .map(|&i| u.column(i).into_owned())
        .collect();
    let basis = if keep.is_empty() {
        CMat::zeros(m, 0)
    } else {
        CMat::from_columns(&keep)
    };
    complete_orthonormal(&basis, n_rf)
}

fn analog_for(chans: &[&CVec], cfg: &SystemConfig) -> CMat {
    let (m, n_rf) = (cfg.antennas_per_rau, cfg.rf_chains);
    if chans.is_empty() {
        return CMat::from_element(m, n_rf, c(1.0 / (m as f64).sqrt(), 0.0));
    }
    let target = dominant_subspace(chans, m, n_rf);
    alternating_projection(&target, ANALOG_ITERATIONS).analog
}

/// Analog precoders `W_m` (from the downlink channels seen by T-RAU `m`) and
/// combiners `U_z` (from the uplink channels seen by R-RAU `z`).
pub fn design_analog(channels: &ChannelSet, cfg: &SystemConfig) -> (Vec<CMat>, Vec<CMat>) {
    let w = (0..channels.n_trau())
        .map(|m| {
            let cols: Vec<&CVec> = channels.h_dl.iter().map(|row| &row[m]).collect();
            analog_for(&cols, cfg)
        })
        .collect();
    let u = (0..channels.n_rrau())
        .map(|z| {
            let cols: Vec<&CVec> = channels.g_ul.iter().map(|row| &row[z]).collect();
            analog_for(&cols, cfg)
        })
        .collect();
    (w, u)
}

#[derive(Debug, Clone)]
pub struct ZeroForcing {
    /// `N_T·N_RF × K` pseudo-inverse of the stacked channel.
    pub f_full: CMat,
    pub f_blocks: Vec<CMat>,
    pub h_eff: Vec<CVec>,
}

/// Stacked effective downlink channel, row `k` equal to `h_k^H`.
pub fn stacked_channel(h_eff: &[CVec]) -> CMat {
    let n = h_eff.first().map_or(0, |h| h.len());
    CMat::from_fn(h_eff.len(), n, |k, i| h_eff[k][i].conj())
}

/// Pseudo-inverse of a full-row-rank `K × N` matrix, rejecting rank deficiency.
pub fn zf_pseudo_inverse(h: &CMat) -> Result<CMat> {
    let svd = h.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let (imin, smin) = sv
        .iter()
        .copied()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |acc, (i, s)| if s < acc.1 { (i, s) } else { acc },
        );
    if sv.len() < h.nrows() || !(smax > 0.0) || smin < ZF_RANK_TOL * smax {
        let u = svd.u.as_ref().expect("u requested");
        let users = if smax > 0.0 && imin < u.ncols() {
            (0..h.nrows())
                .filter(|&k| u[(k, imin)].norm() > 1e-6)
                .collect()
        } else {
            (0..h.nrows()).collect()
        };
        return Err(Error::RankDeficient {
            users,
            ratio: if smax > 0.0 { smin / smax } else { 0.0 },
        });
    }
    svd.pseudo_inverse(0.0)
        .map_err(|e| Error::NotPositiveDefinite(e.to_string()))
}

/// Network-wide ZF precoder on the analog-beamformed channels.
pub fn design_digital_zf(channels: &ChannelSet, w_analog: &[CMat]) -> Result<ZeroForcing> {
    let h_eff: Vec<CVec> = channels
        .h_dl
        .iter()
        .map(|row| {
            let parts: Vec<CVec> = row
                .iter()
                .zip(w_analog)
                .map(|(h, w)| w.adjoint() * h)
                .collect();
            let n: usize = parts.iter().map(|p| p.len()).sum();
            CVec::from_iterator(n, parts.iter().flat_map(|p| p.iter().copied()))
        })
        .collect();
    let k_n = h_eff.len();
    let n_rf = w_analog.first().map_or(0, |w| w.ncols());
    if k_n == 0 {
        return Ok(ZeroForcing {
            f_full: CMat::zeros(w_analog.len() * n_rf, 0),
            f_blocks: w_analog.iter().map(|_| CMat::zeros(n_rf, 0)).collect(),
            h_eff,
        });
    }
    let f_full = zf_pseudo_inverse(&stacked_channel(&h_eff))?;
    let f_blocks = (0..w_analog.len())
        .map(|m| f_full.rows(m * n_rf, n_rf).into_owned())
        .collect();
    Ok(ZeroForcing {
        f_full,
        f_blocks,
        h_eff,
    })
}

#[derive(Debug, Clone)]
pub struct UplinkReceive {
    pub assoc: Vec<usize>,
    pub v_rx: Vec<CVec>,
    pub g_eff: Vec<Vec<CVec>>,
}

/// Index of the largest gain, lowest index on ties.
pub fn strongest(gains: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, g) in gains.into_iter().enumerate() {
        if g > best.1 {
            best = (i, g);
        }
    }
    best.0
}

/// Serves each uplink user from its strongest R-RAU with the normalized
/// matched receiver `v = ḡ (ḡ^H ḡ)^{-1}`, so that `v^H ḡ = 1`.
pub fn associate_and_receive(channels: &ChannelSet, u_analog: &[CMat]) -> Result<UplinkReceive> {
    let beta = &channels.large_scale.beta_ul;
    let g_eff: Vec<Vec<CVec>> = channels
        .g_ul
        .iter()
        .map(|row| {
            row.iter()
                .zip(u_analog)
                .map(|(g, u)| u.adjoint() * g)
                .collect()
        })
        .collect();
    let mut assoc = Vec::with_capacity(g_eff.len());
    let mut v_rx = Vec::with_capacity(g_eff.len());
    for (j, row) in g_eff.iter().enumerate() {
        let z = strongest(beta.row(j).iter().copied());
        let gbar = &row[z];
        let energy = vec_norm2(gbar);
        if !(energy > 0.0) {
            return Err(Error::ZeroUplinkChannel { user: j, rrau: z });
        }
        assoc.push(z);
        v_rx.push(gbar.unscale(energy));
    }
    Ok(UplinkReceive { assoc, v_rx, g_eff })
}
