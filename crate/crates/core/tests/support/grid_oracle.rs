//! Exhaustive grid search over tiny subproblems: one RAU of each kind, one
//! user of each kind, one RF chain, so the search space is the four variables
//! `(η, σ²_D, σ²_U, P_U)`.

use nafd_core::convex_core::{check_kkt, solve, ConvexProblem, SolveStatus};
use nafd_core::link_metrics::QuantModel;
use nafd_core::sca_optimizer::{build_subproblem, init_vars, ScaState};
use nafd_core::scenario::{rng_for, DuplexMode};
use nafd_core::surrogate::AffineModel;
use rand::Rng;

use super::{network, tiny_cfg};

/// Subproblem of instance `i` around the optimizer's starting point.
pub fn tiny_problem(i: u64) -> (ConvexProblem, Vec<f64>) {
    let net = network(&tiny_cfg(), DuplexMode::Nafd, 31, i);
    let bits = 1 + (i % 8) as u32;
    let q = QuantModel::from_bits(bits).unwrap();
    let model = AffineModel::new(&net, q);
    let x0 = init_vars(&net, q).unwrap();
    let state = ScaState::at(&net, q, &model, x0.clone(), 1).unwrap();
    (build_subproblem(&state, &net, &model).unwrap(), x0.to_vec())
}

const COARSE_POINTS: usize = 25;
const FINE_POINTS: usize = 7;
const SHRINK: f64 = 0.5;
/// Decades searched below and above each variance's natural unit.
const DECADES_BELOW: f64 = 14.0;
const DECADES_ABOVE: f64 = 12.0;
/// Range of the logistic coordinate that sets a power as a fraction of its
/// largest feasible value: fractions from about 1e-15 to 1 − 1e-6.
const FRACTION_RANGE: (f64, f64) = (-35.0, 14.0);
/// Final grid step of every coordinate.
const FINAL_STEP: f64 = 1e-4;

/// Variable indices of the tiny instance.
const ETA: usize = 0;
const SIGMA_DL: usize = 1;
const SIGMA_UL: usize = 2;
const P_UL: usize = 3;

pub type Candidate = (f64, Vec<f64>);

/// Largest value of variable `v` that keeps every constraint satisfied with
/// the other coordinates of `x` fixed. Each constraint is linear and
/// non-decreasing in `v`, so this is a minimum of closed-form ratios.
fn largest_feasible(p: &ConvexProblem, x: &[f64], v: usize) -> f64 {
    let mut cap = p.upper_bounds[v];
    let rest = |coeffs: &[f64]| -> f64 {
        coeffs
            .iter()
            .zip(x)
            .enumerate()
            .filter(|(d, _)| *d != v)
            .map(|(_, (a, b))| a * b)
            .sum()
    };
    for c in &p.affine_cons {
        if c.coeffs[v] > 0.0 {
            cap = cap.min((c.rhs - rest(&c.coeffs)) / c.coeffs[v]);
        }
    }
    for c in &p.affine_minus_log_cons {
        if c.coeffs[v] > 0.0 {
            let room = c.rhs - rest(&c.coeffs) + c.log_weight * x[c.log_var].ln();
            cap = cap.min(room / c.coeffs[v]);
        }
    }
    cap
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Point for grid coordinates `(ln σ²_D, ln σ²_U, u_P, u_η)`: the uplink power
/// is the fraction `logistic(u_P)` of its largest feasible value with no
/// downlink power, then η the fraction `logistic(u_η)` of its own largest
/// feasible value.
fn point(p: &ConvexProblem, g: &[f64]) -> Option<Vec<f64>> {
    let mut x = vec![0.0; 4];
    x[SIGMA_DL] = g[0].exp();
    x[SIGMA_UL] = g[1].exp();
    x[P_UL] = logistic(g[2]) * largest_feasible(p, &x, P_UL);
    x[ETA] = logistic(g[3]) * largest_feasible(p, &x, ETA);
    (x[P_UL] > 0.0 && x[ETA] > 0.0 && p.min_slack(&x) >= 0.0).then_some(x)
}

/// Best point over a product grid, with the best point of every axis slice.
fn grid_pass(
    p: &ConvexProblem,
    lo: &[f64],
    hi: &[f64],
    points: usize,
) -> (Candidate, Vec<Candidate>) {
    let n = lo.len();
    let axis = |d: usize, i: usize| lo[d] + (hi[d] - lo[d]) * i as f64 / (points - 1) as f64;
    let none = || (f64::NEG_INFINITY, Vec::new());
    let mut best = none();
    let mut slices: Vec<Candidate> = (0..n * points).map(|_| none()).collect();
    let mut idx = vec![0usize; n];
    let mut g = vec![0.0; n];
    loop {
        for d in 0..n {
            g[d] = axis(d, idx[d]);
        }
        if let Some(x) = point(p, &g) {
            let v = p.objective(&x);
            for d in 0..n {
                let slot = &mut slices[d * points + idx[d]];
                if v > slot.0 {
                    *slot = (v, g.clone());
                }
            }
            if v > best.0 {
                best = (v, g.clone());
            }
        }
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < points {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == n {
                slices.retain(|c| c.0.is_finite());
                return (best, slices);
            }
        }
    }
}

/// Grid-coordinate box: variances around their natural unit clipped to the
/// bounds, fractions over [`FRACTION_RANGE`].
fn search_box(p: &ConvexProblem) -> (Vec<f64>, Vec<f64>) {
    let ln10 = std::f64::consts::LN_10;
    let scale = p.scale.as_ref().expect("subproblems carry their scales");
    let var = |d: usize| {
        (
            (scale[d].ln() - DECADES_BELOW * ln10).max(p.lower_bounds[d].ln()),
            scale[d].ln() + DECADES_ABOVE * ln10,
        )
    };
    let (dl, ul) = (var(SIGMA_DL), var(SIGMA_UL));
    (
        vec![dl.0, ul.0, FRACTION_RANGE.0, FRACTION_RANGE.0],
        vec![dl.1, ul.1, FRACTION_RANGE.1, FRACTION_RANGE.1],
    )
}

/// Zooms around `start` with a window shrinking by [`SHRINK`] per level
/// until the grid step falls below [`FINAL_STEP`].
fn zoom(
    p: &ConvexProblem,
    box_lo: &[f64],
    box_hi: &[f64],
    start: Candidate,
    mut half: Vec<f64>,
) -> Candidate {
    let n = box_lo.len();
    let mut best = start;
    let steps = (FINE_POINTS - 1) as f64 / 2.0;
    while half.iter().any(|h| h / steps > FINAL_STEP) {
        let lo: Vec<f64> = (0..n)
            .map(|d| (best.1[d] - half[d]).max(box_lo[d]))
            .collect();
        let hi: Vec<f64> = (0..n)
            .map(|d| (best.1[d] + half[d]).min(box_hi[d]))
            .collect();
        let (local, _) = grid_pass(p, &lo, &hi, FINE_POINTS);
        if local.0 > best.0 {
            best = local;
        }
        half.iter_mut().for_each(|h| *h *= SHRINK);
    }
    best
}

/// Coarse grid over the whole box, then independent zooms from the overall
/// best point and from the best point of every axis slice. Returns the best
/// objective and its variables.
pub fn grid_search(p: &ConvexProblem) -> Candidate {
    for c in p
        .affine_cons
        .iter()
        .map(|c| &c.coeffs)
        .chain(p.affine_minus_log_cons.iter().map(|c| &c.coeffs))
    {
        assert!(
            c[ETA] >= 0.0 && c[P_UL] >= 0.0,
            "constraints must be non-decreasing in the powers"
        );
    }
    let (box_lo, box_hi) = search_box(p);
    let (best, slices) = grid_pass(p, &box_lo, &box_hi, COARSE_POINTS);
    let half: Vec<f64> = box_lo
        .iter()
        .zip(&box_hi)
        .map(|(l, h)| (h - l) / (COARSE_POINTS - 1) as f64)
        .collect();
    let (v, g) = std::iter::once(best)
        .chain(slices)
        .map(|start| zoom(p, &box_lo, &box_hi, start, half.clone()))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("a feasible grid point");
    (v, point(p, &g).expect("incumbent is feasible"))
}

/// Solver and grid results on one tiny instance.
#[derive(Debug, Clone)]
pub struct GridComparison {
    pub instance: u64,
    pub status: SolveStatus,
    pub solver_obj: f64,
    pub grid_obj: f64,
    pub grid_x: Vec<f64>,
}

impl GridComparison {
    pub fn rel_gap(&self) -> f64 {
        (self.solver_obj - self.grid_obj).abs() / self.grid_obj.abs()
    }
}

pub fn compare_with_grid(instances: u64) -> Vec<GridComparison> {
    (0..instances)
        .map(|i| {
            let (p, x0) = tiny_problem(i);
            let r = solve(&p, &x0).unwrap();
            let (grid_obj, grid_x) = grid_search(&p);
            GridComparison {
                instance: i,
                status: r.status,
                solver_obj: r.obj,
                grid_obj,
                grid_x,
            }
        })
        .collect()
}

/// KKT residuals on the tiny family: the largest at the solver's optimum and
/// the smallest over `per_instance` random strictly feasible points whose
/// objective trails the optimum by more than `1e-3`.
pub fn kkt_separation(instances: u64, per_instance: usize) -> (f64, f64) {
    let mut rng = rng_for(32, &[]);
    let (mut at_opt, mut elsewhere) = (0.0f64, f64::INFINITY);
    for i in 0..instances {
        let (p, x0) = tiny_problem(i);
        let r = solve(&p, &x0).unwrap();
        at_opt = at_opt.max(check_kkt(&p, &r.x_opt));
        let scale = p.scale.clone().unwrap();
        let mut tested = 0;
        while tested < per_instance {
            // Log-uniform over eight decades either side of each natural unit.
            let x: Vec<f64> = (0..p.n_vars)
                .map(|d| {
                    let u: f64 = rng.random_range(-8.0..8.0);
                    (scale[d] * 10f64.powf(u)).min(p.upper_bounds[d])
                })
                .collect();
            if p.min_slack(&x) <= 0.0 || p.objective(&x) > r.obj - 1e-3 {
                continue;
            }
            tested += 1;
            elsewhere = elsewhere.min(check_kkt(&p, &x));
        }
    }
    (at_opt, elsewhere)
}
