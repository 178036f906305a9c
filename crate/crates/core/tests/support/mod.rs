#![allow(dead_code)]

pub mod analytic;
pub mod grid_oracle;
pub mod straight_line;

use nafd_core::link_metrics::{Network, OptVars, QuantModel};
use nafd_core::sca_optimizer::init_vars;
use nafd_core::scenario::{rng_for, DuplexMode, SimRng, SystemConfig};
use rand::Rng;

pub fn table_cfg() -> SystemConfig {
    SystemConfig::default()
}

pub fn small_cfg() -> SystemConfig {
    SystemConfig {
        n_trau: 2,
        n_rrau: 2,
        n_dl_users: 2,
        n_ul_users: 2,
        antennas_per_rau: 4,
        rf_chains: 2,
        n_paths: 3,
        ..SystemConfig::default()
    }
}

/// One RAU of each kind, one user of each kind, a single RF chain, two antennas.
pub fn tiny_cfg() -> SystemConfig {
    SystemConfig {
        n_trau: 1,
        n_rrau: 1,
        n_dl_users: 1,
        n_ul_users: 1,
        antennas_per_rau: 2,
        rf_chains: 1,
        n_paths: 2,
        ..SystemConfig::default()
    }
}

/// Realized network for `(seed, index)`, skipping rank-deficient draws.
pub fn network(cfg: &SystemConfig, mode: DuplexMode, seed: u64, index: u64) -> Network {
    (0..16)
        .find_map(|attempt| Network::realize(cfg, mode, &mut rng_for(seed, &[index, attempt])).ok())
        .expect("a usable realization within 16 attempts")
}

fn log_uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Positive variables spread over several decades around typical operating
/// values; power coefficients are scaled from the optimizer's starting point.
pub fn random_vars(net: &Network, rng: &mut SimRng) -> OptVars {
    let lay = net.var_layout();
    let noise = net.budget.noise;
    let p_ul = net.budget.p_ul_max;
    let eta0 = init_vars(net, QuantModel::from_bits(1).unwrap())
        .unwrap()
        .eta[0]
        .max(1e-30);
    OptVars {
        eta: (0..lay.k)
            .map(|_| eta0 * log_uniform(rng, 1e-2, 1e2))
            .collect(),
        sigma2_dl: (0..lay.n_t)
            .map(|_| log_uniform(rng, 1e-3 * noise, 1e3 * noise))
            .collect(),
        sigma2_ul: (0..lay.n_r)
            .map(|_| log_uniform(rng, 1e-3 * noise, 1e3 * noise))
            .collect(),
        p_ul: (0..lay.j)
            .map(|_| log_uniform(rng, 1e-3 * p_ul, p_ul))
            .collect(),
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Largest error seen so far and where it occurred.
#[derive(Debug, Clone, Default)]
pub struct Worst {
    pub value: f64,
    pub at: String,
}

impl Worst {
    pub fn record(&mut self, value: f64, at: impl FnOnce() -> String) {
        if value > self.value || value.is_nan() {
            self.value = value;
            self.at = at();
        }
    }
}

impl std::fmt::Display for Worst {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3e} ({})", self.value, self.at)
    }
}
