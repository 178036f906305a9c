//! Geometric multipath mmWave channels and large-scale fading.
//!
//! Every RAU carries an `M`-element half-wavelength ULA. The downlink channel
//! from T-RAU `m` to user `k` is `h = Σ_l conj(α_l) v(θ_l)` with
//! `α_l ~ CN(0, β_{k,m})` per path (so `E‖h‖² = L·β`), the uplink channel from
//! user `j` to R-RAU `z` is `g = Σ_l α_l v(θ_l)`, and the user-to-user channel
//! `t_{k,j}` is a scalar `CN(0, β_{k,j})`. After the CPU cancels inter-RAU
//! interference only an i.i.d. residual error matrix `H̃_{m,z}` survives; the
//! full multipath IRI channel is available from [`iri_channel`] but is not
//! part of a [`ChannelSet`].

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::linalg::{c, cis, CMat, CVec, C64};
use crate::scenario::{distance, Layout, Point, SimRng, SystemConfig};

/// Unit-norm ULA response, entry `p` equal to `exp(jπ p sin θ)/√M`.
pub fn steering_vector(theta: f64, m_antennas: usize) -> CVec {
    let scale = 1.0 / (m_antennas as f64).sqrt();
    let s = theta.sin();
    CVec::from_iterator(
        m_antennas,
        (0..m_antennas).map(|p| cis(PI * p as f64 * s) * scale),
    )
}

/// Free-space loss at the reference distance, `20 log10(4π d0 / λ)`.
pub fn free_space_db(cfg: &SystemConfig) -> f64 {
    20.0 * (4.0 * PI * cfg.ref_dist_m / cfg.wavelength_m()).log10()
}

fn pathloss_db_inner<R: Rng + ?Sized>(d: f64, cfg: &SystemConfig, rng: &mut R) -> f64 {
    let d = d.max(cfg.ref_dist_m);
    let shadow = if cfg.shadow_sigma_db > 0.0 {
        Normal::new(0.0, cfg.shadow_sigma_db)
            .expect("finite sigma")
            .sample(rng)
    } else {
        0.0
    };
    free_space_db(cfg) + 10.0 * cfg.pathloss_exp * (d / cfg.ref_dist_m).log10() + shadow
}

/// Log-distance path loss with log-normal shadowing (`shadow_sigma_db = 0` disables it).
///
/// Distances below the reference distance are clamped to it.
pub fn pathloss_db<R: Rng + ?Sized>(d: f64, cfg: &SystemConfig, rng: &mut R) -> f64 {
    if d < cfg.ref_dist_m {
        log::warn!(
            "link distance {d:.3} m below reference {} m, clamped",
            cfg.ref_dist_m
        );
    }
    pathloss_db_inner(d, cfg, rng)
}

fn gain_from_db(pl_db: f64) -> f64 {
    10f64.powf(-pl_db / 10.0)
}

/// Circularly-symmetric complex Gaussian with the given variance.
pub fn cn<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c(re * s, im * s)
}

fn uniform_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-PI..=PI)
}

/// Large-scale gains (linear).
#[derive(Debug, Clone)]
pub struct LargeScale {
    /// `K × N_T`.
    pub beta_dl: DMatrix<f64>,
    /// `J × N_R`.
    pub beta_ul: DMatrix<f64>,
    /// `N_T × N_R`.
    pub beta_iri: DMatrix<f64>,
    /// `K × J`.
    pub beta_iui: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// `h_dl[k][m]`, length `M`.
    pub h_dl: Vec<Vec<CVec>>,
    /// `g_ul[j][z]`, length `M`.
    pub g_ul: Vec<Vec<CVec>>,
    /// `h_iri_resid[m][z]`, `M × M`.
    pub h_iri_resid: Vec<Vec<CMat>>,
    /// `K × J` user-to-user interference.
    pub t_iui: CMat,
    pub large_scale: LargeScale,
    /// Per-path departure angles `aod_dl[k][m][l]`.
    pub aod_dl: Vec<Vec<Vec<f64>>>,
    /// Per-path arrival angles `aoa_ul[j][z][l]`.
    pub aoa_ul: Vec<Vec<Vec<f64>>>,
}

impl ChannelSet {
    pub fn n_dl_users(&self) -> usize {
        self.h_dl.len()
    }

    pub fn n_ul_users(&self) -> usize {
        self.g_ul.len()
    }

    pub fn n_trau(&self) -> usize {
        self.large_scale.beta_dl.ncols()
    }

    pub fn n_rrau(&self) -> usize {
        self.large_scale.beta_ul.ncols()
    }
}

fn gains<R: Rng + ?Sized>(
    rows: &[Point],
    cols: &[Point],
    cfg: &SystemConfig,
    rng: &mut R,
    quiet: bool,
) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
        let d = distance(rows[r], cols[c]);
        let pl = if quiet {
            pathloss_db_inner(d, cfg, rng)
        } else {
            pathloss_db(d, cfg, rng)
        };
        gain_from_db(pl)
    })
}

fn multipath<R: Rng + ?Sized>(
    beta: f64,
    cfg: &SystemConfig,
    conj: bool,
    rng: &mut R,
) -> (CVec, Vec<f64>) {
    let mut h = CVec::zeros(cfg.antennas_per_rau);
    let mut angles = Vec::with_capacity(cfg.n_paths);
    for _ in 0..cfg.n_paths {
        let alpha = cn(rng, beta);
        let theta = uniform_angle(rng);
        let a = if conj { alpha.conj() } else { alpha };
        h += steering_vector(theta, cfg.antennas_per_rau) * a;
        angles.push(theta);
    }
    (h, angles)
}

/// Draws one realization of every channel family for a layout.
///
/// Each family comes from its own child stream of `rng`, so families whose
/// endpoints coincide between two layouts are identical across them.
pub fn draw_channels<R: Rng + ?Sized>(
    layout: &Layout,
    cfg: &SystemConfig,
    rng: &mut R,
) -> ChannelSet {
    let mut streams: Vec<SimRng> = (0..8)
        .map(|_| SimRng::seed_from_u64(rng.random()))
        .collect();
    let [s_dl, s_ul, s_iri, s_iui, p_dl, p_ul, p_iui, p_res]: &mut [SimRng; 8] =
        (&mut streams[..]).try_into().expect("eight streams");

    let beta_dl = gains(&layout.dl_user_xy, &layout.trau_xy, cfg, s_dl, false);
    let beta_ul = gains(&layout.ul_user_xy, &layout.rrau_xy, cfg, s_ul, false);
    // Co-located CCFD pairs sit at distance zero by construction.
    let beta_iri = gains(&layout.trau_xy, &layout.rrau_xy, cfg, s_iri, true);
    let beta_iui = gains(&layout.dl_user_xy, &layout.ul_user_xy, cfg, s_iui, false);

    let (k_n, j_n, nt, nr, m) = (
        layout.dl_user_xy.len(),
        layout.ul_user_xy.len(),
        layout.trau_xy.len(),
        layout.rrau_xy.len(),
        cfg.antennas_per_rau,
    );

    let mut h_dl = Vec::with_capacity(k_n);
    let mut aod_dl = Vec::with_capacity(k_n);
    for k in 0..k_n {
        let (hs, angs): (Vec<_>, Vec<_>) = (0..nt)
            .map(|t| multipath(beta_dl[(k, t)], cfg, true, p_dl))
            .unzip();
        h_dl.push(hs);
        aod_dl.push(angs);
    }

    let mut g_ul = Vec::with_capacity(j_n);
    let mut aoa_ul = Vec::with_capacity(j_n);
    for j in 0..j_n {
        let (gs, angs): (Vec<_>, Vec<_>) = (0..nr)
            .map(|z| multipath(beta_ul[(j, z)], cfg, false, p_ul))
            .unzip();
        g_ul.push(gs);
        aoa_ul.push(angs);
    }

    let t_iui = CMat::from_fn(k_n, j_n, |k, j| cn(p_iui, beta_iui[(k, j)]));

    let resid_var = cfg.budget().residual_iri;
    let h_iri_resid = (0..nt)
        .map(|_| {
            (0..nr)
                .map(|_| CMat::from_fn(m, m, |_, _| cn(p_res, resid_var)))
                .collect()
        })
        .collect();

    ChannelSet {
        h_dl,
        g_ul,
        h_iri_resid,
        t_iui,
        large_scale: LargeScale {
            beta_dl,
            beta_ul,
            beta_iri,
            beta_iui,
        },
        aod_dl,
        aoa_ul,
    }
}

/// Full multipath T-RAU → R-RAU channel `Σ_l α_l v(θ_r) v(θ_t)^H`.
///
/// Returns the matrix with its per-path arrival and departure angles. The
/// simulation path never uses it because the CPU cancels this interference.
pub fn iri_channel<R: Rng + ?Sized>(
    beta: f64,
    n_paths: usize,
    m_antennas: usize,
    rng: &mut R,
) -> (CMat, Vec<f64>, Vec<f64>) {
    let mut h = CMat::zeros(m_antennas, m_antennas);
    let mut aoa = Vec::with_capacity(n_paths);
    let mut aod = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let alpha = cn(rng, beta);
        let tr = uniform_angle(rng);
        let tt = uniform_angle(rng);
        h += steering_vector(tr, m_antennas) * steering_vector(tt, m_antennas).adjoint() * alpha;
        aoa.push(tr);
        aod.push(tt);
    }
    (h, aoa, aod)
}
