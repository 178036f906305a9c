//! System parameters, random deployment geometry and RNG stream derivation.
//!
//! Configuration is a flat JSON document whose keys mirror [`SystemConfig`].
//! Omitted keys take the reference deployment values (6 T-RAUs and 6 R-RAUs,
//! 4 downlink and 4 uplink users, 28 GHz carrier, 100 MHz bandwidth, ...).
//! Every dB/dBm quantity is converted to linear scale exactly once, by
//! [`SystemConfig::budget`]; everything downstream works in milliwatts.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random source used for every stochastic stage.
pub type SimRng = ChaCha8Rng;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n_trau: usize,
    pub n_rrau: usize,
    pub n_dl_users: usize,
    pub n_ul_users: usize,
    pub antennas_per_rau: usize,
    pub rf_chains: usize,
    pub n_paths: usize,
    pub radius_m: f64,
    pub protection_m: f64,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub pathloss_exp: f64,
    pub shadow_sigma_db: f64,
    pub ref_dist_m: f64,
    pub p_dl_max_dbm: f64,
    pub p_ul_max_dbm: f64,
    pub residual_iri_dbm: f64,
    pub dac_bits: u32,
    pub c_dl_bpshz: f64,
    pub c_ul_bpshz: f64,
    pub weight_dl: f64,
    pub weight_ul: f64,
    pub seed: u64,
    pub sca_tol: f64,
    pub sca_max_iter: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_trau: 6,
            n_rrau: 6,
            n_dl_users: 4,
            n_ul_users: 4,
            antennas_per_rau: 6,
            rf_chains: 3,
            n_paths: 6,
            radius_m: 60.0,
            protection_m: 5.0,
            carrier_hz: 28e9,
            bandwidth_hz: 100e6,
            noise_figure_db: 9.0,
            pathloss_exp: 2.92,
            shadow_sigma_db: 8.7,
            ref_dist_m: 1.0,
            p_dl_max_dbm: 30.0,
            p_ul_max_dbm: 27.0,
            residual_iri_dbm: -105.0,
            dac_bits: 1,
            c_dl_bpshz: 26.0,
            c_ul_bpshz: 26.0,
            weight_dl: 0.5,
            weight_ul: 0.5,
            seed: 42,
            sca_tol: 1e-3,
            sca_max_iter: 200,
        }
    }
}

/// Linear-scale quantities derived from a [`SystemConfig`]. Powers in mW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub p_dl_max: f64,
    pub p_ul_max: f64,
    /// Thermal noise power at every user and every R-RAU antenna.
    pub noise: f64,
    /// Residual inter-RAU interference variance per entry of the error matrix.
    pub residual_iri: f64,
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Thermal noise power in dBm: −174 dBm/Hz integrated over the bandwidth plus the noise figure.
pub fn noise_power_dbm(cfg: &SystemConfig) -> f64 {
    -174.0 + 10.0 * cfg.bandwidth_hz.log10() + cfg.noise_figure_db
}

fn violated(invariant: &'static str, detail: impl Into<String>) -> Error {
    Error::InvalidConfig {
        invariant,
        detail: detail.into(),
    }
}

impl SystemConfig {
    pub fn from_json_str(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn budget(&self) -> LinkBudget {
        LinkBudget {
            p_dl_max: dbm_to_mw(self.p_dl_max_dbm),
            p_ul_max: dbm_to_mw(self.p_ul_max_dbm),
            noise: dbm_to_mw(noise_power_dbm(self)),
            residual_iri: dbm_to_mw(self.residual_iri_dbm),
        }
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Checks every configuration invariant, naming the first violated one.
    pub fn validate(&self) -> Result<()> {
        let w_ok = self.weight_dl >= 0.0
            && self.weight_ul >= 0.0
            && (self.weight_dl + self.weight_ul - 1.0).abs() <= 1e-9;
        if !w_ok {
            return Err(violated(
                "weights_sum_to_one",
                format!(
                    "weights must be non-negative and sum to 1, got weight_dl={} weight_ul={}",
                    self.weight_dl, self.weight_ul
                ),
            ));
        }
        let counts = [
            ("n_trau", self.n_trau),
            ("n_rrau", self.n_rrau),
            ("antennas_per_rau", self.antennas_per_rau),
            ("rf_chains", self.rf_chains),
            ("n_paths", self.n_paths),
            ("sca_max_iter", self.sca_max_iter),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(violated("positive_counts", format!("{name} must be >= 1")));
            }
        }
        // A link direction may be switched off entirely, but then its weight must be zero.
        if self.n_dl_users == 0 && self.weight_dl > 0.0 {
            return Err(violated(
                "positive_counts",
                "n_dl_users = 0 requires weight_dl = 0",
            ));
        }
        if self.n_ul_users == 0 && self.weight_ul > 0.0 {
            return Err(violated(
                "positive_counts",
                "n_ul_users = 0 requires weight_ul = 0",
            ));
        }
        if self.rf_chains > self.antennas_per_rau {
            return Err(violated(
                "rf_chains_le_antennas",
                format!(
                    "rf_chains={} > antennas_per_rau={}",
                    self.rf_chains, self.antennas_per_rau
                ),
            ));
        }
        if self.n_dl_users > self.n_trau * self.rf_chains {
            return Err(violated(
                "zf_feasibility",
                format!(
                    "n_dl_users={} exceeds n_trau*rf_chains={}",
                    self.n_dl_users,
                    self.n_trau * self.rf_chains
                ),
            ));
        }
        let positives = [
            ("radius_m", self.radius_m),
            ("carrier_hz", self.carrier_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("ref_dist_m", self.ref_dist_m),
            ("c_dl_bpshz", self.c_dl_bpshz),
            ("c_ul_bpshz", self.c_ul_bpshz),
            ("pathloss_exp", self.pathloss_exp),
        ];
        for (name, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                return Err(violated(
                    "positive_quantities",
                    format!("{name} must be > 0, got {v}"),
                ));
            }
        }
        for (name, v) in [
            ("p_dl_max_dbm", self.p_dl_max_dbm),
            ("p_ul_max_dbm", self.p_ul_max_dbm),
            ("residual_iri_dbm", self.residual_iri_dbm),
            ("noise_figure_db", self.noise_figure_db),
        ] {
            if !v.is_finite() {
                return Err(violated(
                    "positive_quantities",
                    format!("{name} must be finite"),
                ));
            }
        }
        if !(self.protection_m >= 0.0 && self.protection_m < self.radius_m) {
            return Err(violated(
                "protection_lt_radius",
                format!(
                    "need 0 <= protection_m < radius_m, got {} / {}",
                    self.protection_m, self.radius_m
                ),
            ));
        }
        if !(self.shadow_sigma_db >= 0.0) {
            return Err(violated(
                "positive_quantities",
                "shadow_sigma_db must be >= 0",
            ));
        }
        if !(1..=16).contains(&self.dac_bits) {
            return Err(violated(
                "dac_bits_range",
                format!("dac_bits={} outside 1..=16", self.dac_bits),
            ));
        }
        if !(self.sca_tol > 0.0) {
            return Err(violated("positive_quantities", "sca_tol must be > 0"));
        }
        Ok(())
    }
}

/// Reads and validates a JSON config. Missing keys take their defaults, unknown keys are rejected.
pub fn load_config(path: impl AsRef<Path>) -> Result<SystemConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::ConfigIo {
        path: path.to_path_buf(),
        source,
    })?;
    // An empty file means "all defaults".
    let cfg = if text.trim().is_empty() {
        SystemConfig::default()
    } else {
        SystemConfig::from_json_str(&text).map_err(|source| Error::ConfigParse {
            path: path.to_path_buf(),
            source,
        })?
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DuplexMode {
    /// Separate, independently placed transmit-only and receive-only RAUs.
    Nafd,
    /// Co-located transmit/receive RAU pairs.
    Ccfd,
}

impl DuplexMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DuplexMode::Nafd => "nafd",
            DuplexMode::Ccfd => "ccfd",
        }
    }
}

impl std::fmt::Display for DuplexMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DuplexMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nafd" => Ok(DuplexMode::Nafd),
            "ccfd" => Ok(DuplexMode::Ccfd),
            other => Err(format!("unknown mode `{other}` (expected nafd or ccfd)")),
        }
    }
}

pub type Point = [f64; 2];

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub trau_xy: Vec<Point>,
    pub rrau_xy: Vec<Point>,
    pub dl_user_xy: Vec<Point>,
    pub ul_user_xy: Vec<Point>,
    pub mode: DuplexMode,
}

impl Layout {
    pub fn rau_positions(&self) -> impl Iterator<Item = Point> + '_ {
        self.trau_xy.iter().chain(self.rrau_xy.iter()).copied()
    }

    pub fn user_positions(&self) -> impl Iterator<Item = Point> + '_ {
        self.dl_user_xy
            .iter()
            .chain(self.ul_user_xy.iter())
            .copied()
    }

    /// Smallest distance between any RAU and any user.
    pub fn min_rau_user_distance(&self) -> f64 {
        self.rau_positions()
            .flat_map(|r| self.user_positions().map(move |u| distance(r, u)))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Uniform point on a disc of the given radius centred at the origin.
pub fn sample_disc<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Point {
    let r = radius * rng.random::<f64>().sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    [r * phi.cos(), r * phi.sin()]
}

/// Draws a deployment.
///
/// T-RAUs, R-RAUs and users come from three independent child streams so that
/// a NAFD and a CCFD layout generated from the same source share their T-RAU
/// positions and, unless a protection-distance redraw intervenes, their users.
/// Users closer than `protection_m` to any RAU are redrawn.
pub fn generate_layout<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    mode: DuplexMode,
    rng: &mut R,
) -> Result<Layout> {
    let mut trau_rng = SimRng::seed_from_u64(rng.random());
    let mut rrau_rng = SimRng::seed_from_u64(rng.random());
    let mut user_rng = SimRng::seed_from_u64(rng.random());

    let trau_xy: Vec<Point> = (0..cfg.n_trau)
        .map(|_| sample_disc(&mut trau_rng, cfg.radius_m))
        .collect();
    let rrau_xy: Vec<Point> = match mode {
        DuplexMode::Nafd => (0..cfg.n_rrau)
            .map(|_| sample_disc(&mut rrau_rng, cfg.radius_m))
            .collect(),
        DuplexMode::Ccfd => {
            if cfg.n_trau != cfg.n_rrau {
                return Err(violated(
                    "ccfd_pairing",
                    format!(
                        "CCFD needs n_trau == n_rrau, got {} / {}",
                        cfg.n_trau, cfg.n_rrau
                    ),
                ));
            }
            trau_xy.clone()
        }
    };

    let place_user = |rng: &mut SimRng, what: String| -> Result<Point> {
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let p = sample_disc(rng, cfg.radius_m);
            let clear = trau_xy
                .iter()
                .chain(rrau_xy.iter())
                .all(|&r| distance(r, p) >= cfg.protection_m);
            if clear {
                return Ok(p);
            }
        }
        Err(Error::LayoutInfeasible {
            what,
            attempts: MAX_PLACEMENT_ATTEMPTS,
        })
    };

    let dl_user_xy = (0..cfg.n_dl_users)
        .map(|k| place_user(&mut user_rng, format!("downlink user {k}")))
        .collect::<Result<Vec<_>>>()?;
    let ul_user_xy = (0..cfg.n_ul_users)
        .map(|j| place_user(&mut user_rng, format!("uplink user {j}")))
        .collect::<Result<Vec<_>>>()?;

    Ok(Layout {
        trau_xy,
        rrau_xy,
        dl_user_xy,
        ul_user_xy,
        mode,
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of indices into an independent child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn rng_for(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}
