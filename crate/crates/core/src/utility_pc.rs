//! Distributed utility-maximising power control.
//!
//! The joint rate/power problem `max Σ u(s_l) − ω Σ P_l  s.t. s_l ≤ W log2(1 + γ_l(p))`
//! is solved in the log domain by two nested loops per co-channel group:
//!
//! * the outer loop moves each rate target `s_l` along the projected
//!   gradient of the utility, using the multiplier `λ_l` of the inner
//!   problem as the price of rate;
//! * the inner loop is a Zander-type target-tracking iteration
//!   `P ← (γ^tgt / γ) P` running side by side with its reverse-link twin
//!   `μ ← (γ^tgt / γ^cc) μ`, whose fixed point gives the LP dual
//!   `λ^(LP) = ω μ / η` of the min-power problem.
//!
//! The multiplier of the log-domain rate constraint is recovered from the LP
//! dual as `λ = ln(1+γ) (1+γ)/γ · P · λ^(LP)`, which is exactly the
//! sensitivity `∂(ω Σ P*)/∂ ln s`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, InvalidParam};
use crate::topology::{CochannelGroup, LinkKind, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilityPcConfig {
    /// Weight of the sum-power cost.
    pub omega: f64,
    /// Outer-loop gradient step.
    pub epsilon: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Inner loop exits early once no power or μ changes by more than
    /// this relative amount.
    pub inner_tolerance: f64,
    pub init_power_w: f64,
    pub init_gamma_tgt: f64,
    pub init_mu: f64,
    pub p_max_w: f64,
    pub p_min_w: f64,
    /// Interference cap at the serving BS for direct-mode D2D links.
    pub i_star_w: Option<f64>,
    /// Keep a per-iteration trace in the outcome.
    pub record_trace: bool,
}

impl Default for UtilityPcConfig {
    fn default() -> Self {
        Self {
            omega: 1.0,
            epsilon: 0.05,
            outer_iters: 100,
            inner_iters: 10,
            inner_tolerance: 1e-8,
            init_power_w: 0.01,
            init_gamma_tgt: 0.2,
            init_mu: 0.01,
            p_max_w: 0.2,
            p_min_w: 5e-6,
            i_star_w: None,
            record_trace: false,
        }
    }
}

impl UtilityPcConfig {
    pub fn validate(&self) -> Result<(), InvalidParam> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        ensure(pos(self.omega), "omega", "must be positive")?;
        ensure(pos(self.epsilon), "epsilon", "must be positive")?;
        ensure(self.outer_iters >= 1, "outer_iters", "must be at least 1")?;
        ensure(self.inner_iters >= 1, "inner_iters", "must be at least 1")?;
        ensure(self.inner_tolerance >= 0.0, "inner_tolerance", "must be non-negative")?;
        ensure(pos(self.init_power_w), "init_power_w", "must be positive")?;
        ensure(pos(self.init_gamma_tgt), "init_gamma_tgt", "must be positive")?;
        ensure(pos(self.init_mu), "init_mu", "must be positive")?;
        ensure(pos(self.p_min_w), "p_min_w", "must be positive")?;
        ensure(pos(self.p_max_w) && self.p_min_w < self.p_max_w, "p_max_w", "must exceed p_min_w")?;
        if let Some(cap) = self.i_star_w {
            ensure(pos(cap), "i_star_w", "must be positive")?;
        }
        Ok(())
    }
}

/// Utility of a rate. The gradient step only needs `s·u'(s)`.
pub trait Utility {
    fn value(&self, rate: f64) -> f64;
    fn marginal(&self, rate: f64) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LogUtility;

impl Utility for LogUtility {
    fn value(&self, rate: f64) -> f64 {
        rate.ln()
    }

    fn marginal(&self, rate: f64) -> f64 {
        rate.recip()
    }
}

/// Radio environment of one set of mutually interfering links.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkEnvironment {
    /// `gains[(l, m)]`: gain from transmitter `m` to receiver `l`.
    pub gains: DMatrix<f64>,
    pub noise: Vec<f64>,
    /// Hz
    pub bandwidth: f64,
    /// Gain from each transmitter to its serving BS.
    pub gain_to_bs: Vec<f64>,
    /// Links subject to the interference cap (direct-mode D2D).
    pub cap_eligible: Vec<bool>,
}

impl LinkEnvironment {
    /// Environment without a BS interference cap.
    pub fn new(gains: DMatrix<f64>, noise: Vec<f64>, bandwidth: f64) -> Self {
        let n = noise.len();
        assert_eq!(gains.shape(), (n, n), "gain matrix must be square over the links");
        Self { gains, noise, bandwidth, gain_to_bs: vec![1.0; n], cap_eligible: vec![false; n] }
    }

    pub fn from_group(group: &CochannelGroup) -> Self {
        Self {
            gains: group.gains.clone(),
            noise: group.noise.clone(),
            bandwidth: group.bandwidth,
            gain_to_bs: group.gain_to_bs.clone(),
            cap_eligible: group
                .kinds
                .iter()
                .zip(&group.modes)
                .map(|(k, m)| *k == LinkKind::D2d && *m == Mode::Direct)
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty()
    }

    /// Restriction to `keep`, folding the interference of the remaining
    /// (fixed-power) transmitters into each kept receiver's noise.
    pub fn reduced(&self, keep: &[usize], fixed_power: &[f64]) -> Self {
        let dropped: Vec<usize> = (0..self.len()).filter(|i| !keep.contains(i)).collect();
        let noise = keep
            .iter()
            .map(|&l| self.noise[l] + dropped.iter().map(|&m| self.gains[(l, m)] * fixed_power[m]).sum::<f64>())
            .collect();
        Self {
            gains: DMatrix::from_fn(keep.len(), keep.len(), |a, b| self.gains[(keep[a], keep[b])]),
            noise,
            bandwidth: self.bandwidth,
            gain_to_bs: keep.iter().map(|&l| self.gain_to_bs[l]).collect(),
            cap_eligible: keep.iter().map(|&l| self.cap_eligible[l]).collect(),
        }
    }
}

/// SINR of link `l` under power vector `p`.
pub fn sinr(p: &[f64], env: &LinkEnvironment, l: usize) -> f64 {
    let interference: f64 = (0..p.len()).filter(|&m| m != l).map(|m| env.gains[(l, m)] * p[m]).sum();
    env.gains[(l, l)] * p[l] / (env.noise[l] + interference)
}

pub fn sinr_all(p: &[f64], env: &LinkEnvironment) -> Vec<f64> {
    (0..p.len()).map(|l| sinr(p, env, l)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("total received power {total} does not exceed the useful power {useful}")]
pub struct NonPositiveInterference {
    pub total: f64,
    pub useful: f64,
}

/// SINR as measured at a receiver from its total received power
/// (noise included) and the useful part of it.
pub fn sinr_from_total(total_rx_power: f64, p_l: f64, g_ll: f64) -> Result<f64, NonPositiveInterference> {
    let useful = g_ll * p_l;
    let rest = total_rx_power - useful;
    if rest > 0.0 {
        Ok(useful / rest)
    } else {
        Err(NonPositiveInterference { total: total_rx_power, useful })
    }
}

/// SINR target that supports rate `s` bit/s on bandwidth `w` Hz.
pub fn rate_to_sinr_target(s: f64, w: f64) -> f64 {
    (s / w).exp2() - 1.0
}

/// Shannon rate (K = 1) in bit/s.
pub fn sinr_to_rate(gamma: f64, w: f64) -> f64 {
    w * gamma.ln_1p() / std::f64::consts::LN_2
}

/// Per-link power range for the inner loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLimits {
    pub min: f64,
    pub max: f64,
}

impl PowerLimits {
    pub const UNBOUNDED: PowerLimits = PowerLimits { min: 0.0, max: f64::INFINITY };

    /// Limits for link `l`, including the BS interference cap when it applies.
    pub fn for_link(cfg: &UtilityPcConfig, env: &LinkEnvironment, l: usize) -> Self {
        let mut max = cfg.p_max_w;
        if let (Some(i_star), true) = (cfg.i_star_w, env.cap_eligible[l]) {
            max = max.min(i_star / env.gain_to_bs[l]);
        }
        // a cap below p_min wins; the link then transmits at the cap
        PowerLimits { min: cfg.p_min_w.min(max), max }
    }
}

/// One target-tracking power update.
pub fn inner_power_step(power: f64, gamma_tgt: f64, measured: f64, limits: PowerLimits) -> f64 {
    (gamma_tgt / measured * power).clamp(limits.min, limits.max)
}

/// Reverse-link SINR of link `l` (note the transposed gains `G_kl`).
pub fn gamma_cc(mu: &[f64], env: &LinkEnvironment, l: usize) -> f64 {
    let sigma_l = env.noise[l];
    let cross: f64 =
        (0..mu.len()).filter(|&k| k != l).map(|k| env.gains[(k, l)] * sigma_l / env.noise[k] * mu[k]).sum();
    mu[l] * env.gains[(l, l)] / (sigma_l + cross)
}

pub fn mu_step(mu: f64, gamma_tgt: f64, gamma_cc: f64) -> f64 {
    gamma_tgt / gamma_cc * mu
}

/// `η_l = γ_l^tgt σ_l / G_ll`: the minimum power link `l` would need alone.
pub fn eta(env: &LinkEnvironment, gamma_tgt: &[f64]) -> Vec<f64> {
    (0..env.len()).map(|l| gamma_tgt[l] * env.noise[l] / env.gains[(l, l)]).collect()
}

/// LP dual variables `λ^(LP) = ω μ / η`.
pub fn recover_lambda_lp(mu: &[f64], env: &LinkEnvironment, gamma_tgt: &[f64], omega: f64) -> Vec<f64> {
    (0..env.len()).map(|l| omega * mu[l] * env.gains[(l, l)] / (env.noise[l] * gamma_tgt[l])).collect()
}

/// `ln(1+γ)·(1+γ)/γ`, tending to 1 as γ → 0.
pub fn rate_price_factor(gamma: f64) -> f64 {
    if gamma < 1e-8 {
        1.0 + 1.5 * gamma
    } else {
        gamma.ln_1p() * (1.0 + gamma) / gamma
    }
}

/// Multipliers of the log-rate constraints, from converged powers and μ.
pub fn recover_lambda(power: &[f64], mu: &[f64], env: &LinkEnvironment, gamma_tgt: &[f64], omega: f64) -> Vec<f64> {
    recover_lambda_lp(mu, env, gamma_tgt, omega)
        .into_iter()
        .enumerate()
        .map(|(l, lp)| rate_price_factor(gamma_tgt[l]) * power[l] * lp)
        .collect()
}

/// Projected gradient step on the log-rates; `ln s` is kept non-negative.
pub fn outer_rate_step<U: Utility>(rates: &[f64], lambda: &[f64], epsilon: f64, utility: &U) -> Vec<f64> {
    rates
        .iter()
        .zip(lambda)
        .map(|(&s, &lam)| {
            let grad = s * (utility.marginal(s) - lam / s);
            (s * (epsilon * grad).exp()).max(1.0)
        })
        .collect()
}

pub fn objective<U: Utility>(rates: &[f64], power: &[f64], omega: f64, utility: &U) -> f64 {
    rates.iter().map(|&s| utility.value(s)).sum::<f64>() - omega * power.iter().sum::<f64>()
}

/// Run the plain target-tracking iteration from `p_init` for at most
/// `max_steps` synchronous rounds. Returns the powers and rounds used.
pub fn iterate_powers(
    env: &LinkEnvironment,
    gamma_tgt: &[f64],
    p_init: &[f64],
    max_steps: usize,
    tolerance: f64,
) -> (Vec<f64>, usize) {
    let mut p = p_init.to_vec();
    for step in 1..=max_steps {
        let measured = sinr_all(&p, env);
        let next: Vec<f64> =
            (0..p.len()).map(|l| inner_power_step(p[l], gamma_tgt[l], measured[l], PowerLimits::UNBOUNDED)).collect();
        let change = max_rel_change(&p, &next);
        p = next;
        if change <= tolerance {
            return (p, step);
        }
    }
    (p, max_steps)
}

/// Reverse-link counterpart of [`iterate_powers`].
pub fn iterate_mu(
    env: &LinkEnvironment,
    gamma_tgt: &[f64],
    mu_init: &[f64],
    max_steps: usize,
    tolerance: f64,
) -> (Vec<f64>, usize) {
    let mut mu = mu_init.to_vec();
    for step in 1..=max_steps {
        let next: Vec<f64> = (0..mu.len()).map(|l| mu_step(mu[l], gamma_tgt[l], gamma_cc(&mu, env, l))).collect();
        let change = max_rel_change(&mu, &next);
        mu = next;
        if change <= tolerance {
            return (mu, step);
        }
    }
    (mu, max_steps)
}

fn max_rel_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter().zip(new).map(|(a, b)| ((b - a) / a).abs()).fold(0.0, f64::max)
}

/// How a group member's power is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkControl {
    /// Runs the outer/inner utility loops.
    Utility,
    /// Holds an externally chosen power (watts), e.g. LTE open loop.
    Fixed(f64),
}

/// Per-link state of the utility-controlled links.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcState {
    pub power: Vec<f64>,
    /// bit/s
    pub rate: Vec<f64>,
    pub gamma_tgt: Vec<f64>,
    pub lambda: Vec<f64>,
    pub lambda_lp: Vec<f64>,
    pub mu: Vec<f64>,
}

impl PcState {
    pub fn initial(n: usize, cfg: &UtilityPcConfig, bandwidth: f64) -> Self {
        Self {
            power: vec![cfg.init_power_w; n],
            rate: vec![sinr_to_rate(cfg.init_gamma_tgt, bandwidth); n],
            gamma_tgt: vec![cfg.init_gamma_tgt; n],
            lambda: vec![0.0; n],
            lambda_lp: vec![0.0; n],
            mu: vec![cfg.init_mu; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub outer: usize,
    pub inner: usize,
    pub link: usize,
    pub power: f64,
    pub rate: f64,
    pub sinr: f64,
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcOutcome {
    /// Final power of every member, utility-controlled or not.
    pub power: Vec<f64>,
    /// SINR of every member under `power`.
    pub sinr: Vec<f64>,
    /// Members that ran the utility loops, in member order.
    pub utility_links: Vec<usize>,
    /// State of the utility links, indexed like `utility_links`.
    pub state: PcState,
    /// Members stuck at their upper power limit for the whole final cycle.
    pub clamped: Vec<bool>,
    /// `Σ ln s − ω Σ P` after each outer cycle's inner loop.
    pub objective_trace: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

/// Run the outer/inner loops on one co-channel group.
///
/// `control[l]` picks which members adapt; fixed-power members still
/// interfere with everyone but never update.
pub fn run_distributed_pc(env: &LinkEnvironment, cfg: &UtilityPcConfig, control: &[LinkControl]) -> PcOutcome {
    assert_eq!(control.len(), env.len());
    let n = env.len();
    let utility_links: Vec<usize> = (0..n).filter(|&l| control[l] == LinkControl::Utility).collect();
    let fixed_power: Vec<f64> = control
        .iter()
        .map(|c| match c {
            LinkControl::Fixed(p) => *p,
            LinkControl::Utility => 0.0,
        })
        .collect();

    let sub = env.reduced(&utility_links, &fixed_power);
    let k = utility_links.len();
    let limits: Vec<PowerLimits> = (0..k).map(|l| PowerLimits::for_link(cfg, &sub, l)).collect();
    let mut state = PcState::initial(k, cfg, env.bandwidth);
    for (p, lim) in state.power.iter_mut().zip(&limits) {
        *p = p.clamp(lim.min, lim.max);
    }
    let mut objective_trace = Vec::with_capacity(cfg.outer_iters);
    let mut trace = Vec::new();
    let mut at_limit = vec![false; k];

    if k > 0 {
        for outer in 0..cfg.outer_iters {
            at_limit.iter_mut().for_each(|f| *f = true);
            for inner in 0..cfg.inner_iters {
                let measured = sinr_all(&state.power, &sub);
                let power: Vec<f64> = (0..k)
                    .map(|l| inner_power_step(state.power[l], state.gamma_tgt[l], measured[l], limits[l]))
                    .collect();
                let mu: Vec<f64> =
                    (0..k).map(|l| mu_step(state.mu[l], state.gamma_tgt[l], gamma_cc(&state.mu, &sub, l))).collect();
                for l in 0..k {
                    at_limit[l] &= power[l] >= limits[l].max;
                }
                let change = max_rel_change(&state.power, &power).max(max_rel_change(&state.mu, &mu));
                state.power = power;
                state.mu = mu;
                if cfg.record_trace {
                    trace.extend((0..k).map(|l| TraceRow {
                        outer,
                        inner,
                        link: utility_links[l],
                        power: state.power[l],
                        rate: state.rate[l],
                        sinr: measured[l],
                        lambda: state.lambda[l],
                        mu: state.mu[l],
                    }));
                }
                if change <= cfg.inner_tolerance {
                    break;
                }
            }

            state.lambda_lp = recover_lambda_lp(&state.mu, &sub, &state.gamma_tgt, cfg.omega);
            state.lambda = recover_lambda(&state.power, &state.mu, &sub, &state.gamma_tgt, cfg.omega);
            objective_trace.push(objective(&state.rate, &state.power, cfg.omega, &LogUtility));

            state.rate = outer_rate_step(&state.rate, &state.lambda, cfg.epsilon, &LogUtility);
            state.gamma_tgt = state.rate.iter().map(|&s| rate_to_sinr_target(s, env.bandwidth)).collect();
        }
    }

    let mut power = fixed_power;
    let mut clamped = vec![false; n];
    for (i, &l) in utility_links.iter().enumerate() {
        power[l] = state.power[i];
        clamped[l] = at_limit[i];
    }
    PcOutcome { sinr: sinr_all(&power, env), power, utility_links, state, clamped, objective_trace, trace }
}

/// CSV rendering of a trace: `outer,inner,link,power_w,rate_bps,sinr,lambda,mu`.
pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("outer,inner,link,power_w,rate_bps,sinr,lambda,mu\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.outer, r.inner, r.link, r.power, r.rate, r.sinr, r.lambda, r.mu
        ));
    }
    out
}
