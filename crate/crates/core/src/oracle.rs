//! Reference computations for checking the iterative power control.
//!
//! Nothing here calls the update routines of [`crate::utility_pc`]: fixed
//! points are obtained by dense linear solves, LP duals from the active
//! constraint system, gradients by central differences and optima by
//! exhaustive search.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ra::{Allocation, Assignment, ModePolicy};
use crate::topology::{LinkKind, Mode, Scenario};

/// Power-iteration budget for spectral radius estimates.
pub const RADIUS_ITERS: usize = 200;
pub const RADIUS_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("targets infeasible: spectral radius {radius:.6} >= 1")]
    Infeasible { radius: f64 },
    #[error("linear system is singular")]
    Singular,
    #[error("solution has a non-positive entry")]
    NonPositive,
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
}

/// Feasibility of a set of SINR targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub spectral_radius: f64,
    pub feasible: bool,
    pub power: Option<Vec<f64>>,
}

/// `diag(γ) F` with `F_lm = G_lm / G_ll` off the diagonal, zero on it.
pub fn normalized_gain_matrix(gains: &DMatrix<f64>, gamma_tgt: &[f64]) -> DMatrix<f64> {
    let n = gamma_tgt.len();
    DMatrix::from_fn(n, n, |l, m| if l == m { 0.0 } else { gamma_tgt[l] * gains[(l, m)] / gains[(l, l)] })
}

/// Perron root of a non-negative matrix by power iteration on `A + I`
/// (the shift makes the iteration converge for periodic matrices too).
/// Returns the Collatz–Wielandt upper bound at the final iterate.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let shifted = a + DMatrix::identity(n, n);
    let mut x = DVector::from_element(n, 1.0);
    let mut estimate = f64::INFINITY;
    for _ in 0..RADIUS_ITERS {
        let y = &shifted * &x;
        let upper = y.iter().zip(x.iter()).map(|(yi, xi)| yi / xi).fold(f64::MIN, f64::max);
        let lower = y.iter().zip(x.iter()).map(|(yi, xi)| yi / xi).fold(f64::MAX, f64::min);
        x = &y / y.max();
        // keep the iterate strictly positive for the ratio bounds
        x.iter_mut().for_each(|v| *v = v.max(1e-300));
        let done = (upper - lower).abs() <= RADIUS_TOL * upper || (upper - estimate).abs() <= RADIUS_TOL * upper;
        estimate = upper;
        if done {
            break;
        }
    }
    estimate - 1.0
}

fn solve(m: DMatrix<f64>, rhs: DVector<f64>) -> Result<Vec<f64>, OracleError> {
    let x = m.lu().solve(&rhs).ok_or(OracleError::Singular)?;
    if x.iter().all(|v| *v > 0.0 && v.is_finite()) {
        Ok(x.iter().copied().collect())
    } else {
        Err(OracleError::NonPositive)
    }
}

/// Powers meeting the targets with equality: `(I − diag(γ)F) p = diag(γ) σ/G_ll`.
pub fn solve_power_fixed_point(
    gamma_tgt: &[f64],
    gains: &DMatrix<f64>,
    noise: &[f64],
) -> Result<Vec<f64>, OracleError> {
    let a = normalized_gain_matrix(gains, gamma_tgt);
    let radius = spectral_radius(&a);
    if radius >= 1.0 {
        return Err(OracleError::Infeasible { radius });
    }
    let n = gamma_tgt.len();
    let rhs = DVector::from_fn(n, |l, _| gamma_tgt[l] * noise[l] / gains[(l, l)]);
    solve(DMatrix::identity(n, n) - a, rhs)
}

pub fn feasibility(gamma_tgt: &[f64], gains: &DMatrix<f64>, noise: &[f64]) -> FeasibilityReport {
    let radius = spectral_radius(&normalized_gain_matrix(gains, gamma_tgt));
    let power = solve_power_fixed_point(gamma_tgt, gains, noise).ok();
    FeasibilityReport { spectral_radius: radius, feasible: radius < 1.0 && power.is_some(), power }
}

/// Reverse-link powers with `γ^cc(μ) = γ^tgt`, from the linear system
/// `μ_l G_ll / (γ_l σ_l) − Σ_{k≠l} G_kl μ_k / σ_k = 1`.
pub fn solve_mu_fixed_point(gamma_tgt: &[f64], gains: &DMatrix<f64>, noise: &[f64]) -> Result<Vec<f64>, OracleError> {
    let n = gamma_tgt.len();
    let reverse = DMatrix::from_fn(n, n, |l, k| {
        if l == k {
            0.0
        } else {
            gamma_tgt[l] * gains[(k, l)] * noise[l] / (noise[k] * gains[(l, l)])
        }
    });
    let radius = spectral_radius(&reverse);
    if radius >= 1.0 {
        return Err(OracleError::Infeasible { radius });
    }
    let m = DMatrix::from_fn(n, n, |l, k| {
        if l == k {
            gains[(l, l)] / (gamma_tgt[l] * noise[l])
        } else {
            -gains[(k, l)] / noise[k]
        }
    });
    solve(m, DVector::from_element(n, 1.0))
}

/// `H` and `η` of the min-power LP `min ω1ᵀp s.t. Hp ⪯ −η, p ⪰ 0`.
pub fn lp_data(gains: &DMatrix<f64>, gamma_tgt: &[f64], noise: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let n = gamma_tgt.len();
    let h = DMatrix::from_fn(n, n, |l, m| if l == m { -1.0 } else { gamma_tgt[l] * gains[(l, m)] / gains[(l, l)] });
    let eta = (0..n).map(|l| gamma_tgt[l] * noise[l] / gains[(l, l)]).collect();
    (h, eta)
}

/// Dual of the min-power LP with every constraint active: `Hᵀλ = −ω1`.
pub fn solve_lp_dual(
    gains: &DMatrix<f64>,
    gamma_tgt: &[f64],
    noise: &[f64],
    omega: f64,
) -> Result<Vec<f64>, OracleError> {
    let (h, _) = lp_data(gains, gamma_tgt, noise);
    let radius = spectral_radius(&normalized_gain_matrix(gains, gamma_tgt));
    if radius >= 1.0 {
        return Err(OracleError::Infeasible { radius });
    }
    let n = gamma_tgt.len();
    solve(-h.transpose(), DVector::from_element(n, omega))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `|primal − dual| / max(1, primal)`
    pub gap: f64,
    /// `|primal − dual| / primal`
    pub relative_gap: f64,
    /// Largest violation of `Hp ⪯ −η`, per row relative to `η_l`.
    pub primal_violation: f64,
    /// Largest violation of the dual rows `λ_l/ω − Σ_{k≠l} (G_kl/G_kk) γ_k λ_k/ω ≤ 1`.
    pub dual_violation: f64,
    /// Largest `|λ_l/ω − Σ_{k≠l} (G_kl/G_kk) γ_k λ_k/ω − 1|`; zero when
    /// every dual row is active.
    pub dual_slack: f64,
    pub primal_feasible: bool,
    pub dual_feasible: bool,
}

pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Primal/dual objective gap and feasibility of a candidate pair.
pub fn lp_duality_check(p: &[f64], lambda_lp: &[f64], h: &DMatrix<f64>, eta: &[f64], omega: f64) -> DualityReport {
    let n = p.len();
    let pv = DVector::from_column_slice(p);
    let lv = DVector::from_column_slice(lambda_lp);
    let primal_objective = omega * p.iter().sum::<f64>();
    let dual_objective: f64 = eta.iter().zip(lambda_lp).map(|(e, l)| e * l).sum();
    let diff = (primal_objective - dual_objective).abs();

    let hp = h * &pv;
    let primal_violation =
        (0..n).map(|l| (hp[l] + eta[l]) / eta[l]).chain(p.iter().map(|&x| -x)).fold(f64::MIN, f64::max);
    // −(Hᵀλ)_l / ω is the left-hand side of the explicit dual row
    let htl = h.transpose() * &lv;
    let rows: Vec<f64> = (0..n).map(|l| -htl[l] / omega - 1.0).collect();
    let dual_violation = rows.iter().copied().chain(lambda_lp.iter().map(|&x| -x)).fold(f64::MIN, f64::max);
    let dual_slack = rows.iter().map(|r| r.abs()).fold(0.0, f64::max);

    DualityReport {
        primal_objective,
        dual_objective,
        gap: diff / primal_objective.max(1.0),
        relative_gap: diff / primal_objective,
        primal_violation,
        dual_violation,
        dual_slack,
        primal_feasible: primal_violation <= FEASIBILITY_TOL,
        dual_feasible: dual_violation <= FEASIBILITY_TOL,
    }
}

/// Minimum weighted sum power `ω Σ P*` for log-rates `s̃` (bit/s, natural log).
pub fn phi_star(
    s_tilde: &[f64],
    gains: &DMatrix<f64>,
    noise: &[f64],
    bandwidth: f64,
    omega: f64,
) -> Result<f64, OracleError> {
    let gamma: Vec<f64> = s_tilde.iter().map(|&st| (st.exp() / bandwidth).exp2() - 1.0).collect();
    Ok(omega * solve_power_fixed_point(&gamma, gains, noise)?.iter().sum::<f64>())
}

/// Default relative step for [`finite_diff_envelope`].
pub const ENVELOPE_STEP: f64 = 1e-5;

/// Central-difference gradient of [`phi_star`] with respect to `s̃`.
/// The step for coordinate `i` is `h · max(1, |s̃_i|)`; a step that makes a
/// perturbed instance infeasible is shrunk tenfold once.
pub fn finite_diff_envelope(
    s_tilde: &[f64],
    gains: &DMatrix<f64>,
    noise: &[f64],
    bandwidth: f64,
    omega: f64,
    h: f64,
) -> Result<Vec<f64>, OracleError> {
    let central = |i: usize, step: f64| -> Result<f64, OracleError> {
        let mut up = s_tilde.to_vec();
        let mut down = s_tilde.to_vec();
        up[i] += step;
        down[i] -= step;
        let f_up = phi_star(&up, gains, noise, bandwidth, omega)?;
        let f_down = phi_star(&down, gains, noise, bandwidth, omega)?;
        Ok((f_up - f_down) / (2.0 * step))
    };
    (0..s_tilde.len())
        .map(|i| {
            let step = h * s_tilde[i].abs().max(1.0);
            central(i, step).or_else(|_| central(i, step / 10.0))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub points: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points: 200, gamma_min: 1e-3, gamma_max: 1e4 }
    }
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        let (a, b) = (self.gamma_min.log10(), self.gamma_max.log10());
        (0..self.points).map(|i| 10f64.powf(a + (b - a) * i as f64 / (self.points - 1) as f64)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub rate: Vec<f64>,
    pub power: Vec<f64>,
    pub objective: f64,
}

/// Best `Σ ln s − ω Σ P` over a log-spaced grid of SINR targets, powers
/// from the direct fixed-point solve. At most three links.
pub fn grid_search_optimum(
    gains: &DMatrix<f64>,
    noise: &[f64],
    bandwidth: f64,
    omega: f64,
    grid: GridSpec,
) -> Result<GridOptimum, OracleError> {
    let n = noise.len();
    if n == 0 || n > 3 {
        return Err(OracleError::TooLarge(format!("{n} links, grid search handles 1..=3")));
    }
    let values = grid.values();
    let mut idx = vec![0usize; n];
    let mut best: Option<GridOptimum> = None;
    loop {
        let gamma: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
        if let Ok(power) = solve_power_fixed_point(&gamma, gains, noise) {
            let rate: Vec<f64> = gamma.iter().map(|g| bandwidth * g.ln_1p() / std::f64::consts::LN_2).collect();
            let objective = rate.iter().map(|s| s.ln()).sum::<f64>() - omega * power.iter().sum::<f64>();
            if best.as_ref().is_none_or(|b| objective > b.objective) {
                best = Some(GridOptimum { rate, power, objective });
            }
        }
        // odometer
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] < values.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            break;
        }
    }
    best.ok_or(OracleError::Infeasible { radius: f64::INFINITY })
}

/// Exact optimum of `ln s − ω P` for a single link with `s = W log2(1 + G P / σ)`.
///
/// Stationarity in `x = s/W` reads `ω (σ/G) ln2 · x 2^x = 1`; the left side
/// is increasing so bisection finds the root.
pub fn scalar_optimum(gain: f64, noise: f64, bandwidth: f64, omega: f64) -> GridOptimum {
    let a = omega * noise / gain * std::f64::consts::LN_2;
    let f = |x: f64| a * x * x.exp2() - 1.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let power = (x.exp2() - 1.0) * noise / gain;
    let rate = x * bandwidth;
    GridOptimum { rate: vec![rate], power: vec![power], objective: rate.ln() - omega * power }
}

/// Sum spectral efficiency `Σ log2(1 + G_ll P_l / (σ + I_l))` of an
/// allocation with fixed powers; interference comes from every other link
/// on the same RB.
pub fn spectral_efficiency(scenario: &Scenario, allocation: &Allocation, powers: &[f64]) -> f64 {
    let sigma = scenario.noise_w();
    let assigned: Vec<(usize, Assignment)> =
        allocation.links.iter().enumerate().filter_map(|(id, a)| a.map(|a| (id, a))).collect();
    assigned
        .iter()
        .map(|&(l, a)| {
            let rx = scenario.receiver(l, a.mode);
            let interference: f64 = assigned
                .iter()
                .filter(|&&(k, b)| k != l && b.rb == a.rb)
                .map(|&(k, _)| powers[k] * scenario.gain(k, rx))
                .sum();
            (1.0 + scenario.gain(l, rx) * powers[l] / (sigma + interference)).log2()
        })
        .sum()
}

/// Largest instance [`exhaustive_problem3`] accepts.
pub const EXHAUSTIVE_MAX_LINKS: usize = 4;
pub const EXHAUSTIVE_MAX_RBS: usize = 3;

/// Best single-RB-per-link allocation for the spectral-efficiency sum,
/// by enumeration of every assignment respecting the allocation
/// constraints (cellular UEs in cellular mode, at most one cellular-mode
/// transmitter per RB per cell).
pub fn exhaustive_problem3(scenario: &Scenario, powers: &[f64]) -> Result<(Allocation, f64), OracleError> {
    let n = scenario.num_links();
    let rbs = scenario.geometry.num_rbs;
    if n > EXHAUSTIVE_MAX_LINKS || rbs > EXHAUSTIVE_MAX_RBS {
        return Err(OracleError::TooLarge(format!("{n} links on {rbs} RBs")));
    }
    let options: Vec<Vec<Assignment>> = scenario
        .links
        .iter()
        .map(|link| {
            let modes: &[Mode] = match link.kind {
                LinkKind::Cellular => &[Mode::Cellular],
                LinkKind::D2d => &[Mode::Cellular, Mode::Direct],
            };
            (0..rbs).flat_map(|rb| modes.iter().map(move |&mode| Assignment { rb, mode, dedicated: false })).collect()
        })
        .collect();

    let mut idx = vec![0usize; n];
    let mut best: Option<(Allocation, f64)> = None;
    loop {
        let picks: Vec<Assignment> = (0..n).map(|l| options[l][idx[l]]).collect();
        let orthogonal = (0..n).all(|l| {
            picks[l].mode != Mode::Cellular
                || !(0..l).any(|k| {
                    picks[k].mode == Mode::Cellular
                        && picks[k].rb == picks[l].rb
                        && scenario.links[k].cell == scenario.links[l].cell
                })
        });
        if orthogonal {
            let mut links: Vec<Option<Assignment>> = picks.iter().copied().map(Some).collect();
            // mark the first transmitter on each RB of a cell as dedicated
            for l in 0..n {
                let first =
                    !(0..l).any(|k| picks[k].rb == picks[l].rb && scenario.links[k].cell == scenario.links[l].cell);
                links[l].as_mut().unwrap().dedicated = first;
            }
            let alloc = Allocation::from_assignments(scenario, ModePolicy::Adaptive, links);
            let value = spectral_efficiency(scenario, &alloc, powers);
            if best.as_ref().is_none_or(|(_, b)| value > *b) {
                best = Some((alloc, value));
            }
        }
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] < options[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            break;
        }
    }
    best.ok_or_else(|| OracleError::TooLarge("no admissible allocation".into()))
}
