//! Monte Carlo experiments: drop → allocation → power control per
//! co-channel group → network-wide SINR → pooled statistics.
//!
//! Which power control a link runs depends on its mode: cellular-mode
//! links (UEs, and D2D candidates sent through the BS) follow
//! `cellular_pc`; direct-mode D2D links follow `d2d_pc`. Open-loop powers
//! are set once per drop, the closed loop runs [`CL_ITERATIONS`] TPC rounds
//! with the SINR re-measured each round, and utility-controlled links run
//! the outer/inner loops with every other link held at its LTE power.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, InvalidParam};
use crate::lte_pc::{self, ClLoopState, LtePcConfig, LtePcError, LteScheme};
use crate::ra::{self, ModePolicy, RaError, RaScheme};
use crate::topology::{
    build_cochannel_groups, generate_drop, ChannelConfig, GeometryConfig, LinkKind, Mode, TopologyError,
};
use crate::units::{dbm_to_watts, linear_to_db, watts_to_dbm};
use crate::utility_pc::{run_distributed_pc, sinr_all, sinr_to_rate, LinkControl, LinkEnvironment, UtilityPcConfig};

/// TPC rounds per drop for closed-loop links.
pub const CL_ITERATIONS: usize = 10;

/// Stream separation between the drop geometry and BRA's random picks.
const RA_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellularPc {
    #[serde(rename = "OFPC")]
    Ofpc,
    UtilityMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum D2dPc {
    #[serde(rename = "NPC")]
    Npc,
    #[serde(rename = "FST")]
    Fst,
    #[serde(rename = "OFPC")]
    Ofpc,
    #[serde(rename = "CL")]
    Cl,
    UtilityMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub channel: ChannelConfig,
    pub ra_scheme: RaScheme,
    pub mode_policy: ModePolicy,
    pub cellular_pc: CellularPc,
    pub d2d_pc: D2dPc,
    pub utility: UtilityPcConfig,
    pub lte: LtePcConfig,
    pub num_drops: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            channel: ChannelConfig::default(),
            ra_scheme: RaScheme::Bra,
            mode_policy: ModePolicy::Adaptive,
            cellular_pc: CellularPc::Ofpc,
            d2d_pc: D2dPc::Ofpc,
            utility: UtilityPcConfig::default(),
            lte: LtePcConfig::default(),
            num_drops: 100,
            seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), InvalidParam> {
        self.geometry.validate().map_err(|e| e.prefixed("geometry"))?;
        self.channel.validate().map_err(|e| e.prefixed("channel"))?;
        self.utility.validate().map_err(|e| e.prefixed("utility"))?;
        self.lte.validate().map_err(|e| e.prefixed("lte"))?;
        ensure(self.num_drops >= 1, "num_drops", "must be at least 1")
    }

    /// Cellular UEs on LTE open loop, D2D on the utility loops.
    pub fn is_hybrid(&self) -> bool {
        self.cellular_pc == CellularPc::Ofpc && self.d2d_pc == D2dPc::UtilityMax
    }

    /// Linear noise power per RB (N0).
    pub fn noise_w(&self) -> f64 {
        self.channel.noise_w()
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] InvalidParam),
    #[error(transparent)]
    Allocation(#[from] RaError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    LtePc(#[from] LtePcError),
    #[error("cannot summarise an empty sample set")]
    EmptySamples,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkMetrics {
    pub link: usize,
    pub cell: usize,
    pub class: LinkKind,
    pub mode: Mode,
    pub rb: usize,
    pub sinr_db: f64,
    pub power_dbm: f64,
    pub rate_bps: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropMetrics {
    pub seed: u64,
    pub links: Vec<LinkMetrics>,
    pub sum_rate_bps: f64,
    pub sum_power_w: f64,
}

enum Control {
    Fixed(f64),
    ClosedLoop(ClLoopState),
    Utility,
}

fn link_control(cfg: &ExperimentConfig, mode: Mode, gain: f64) -> Result<Control, LtePcError> {
    let gain_db = linear_to_db(gain);
    let open_loop = |scheme: LteScheme| -> Result<Control, LtePcError> {
        let p = lte_pc::open_loop_power(&cfg.lte.with_scheme(scheme), gain_db)?;
        Ok(Control::Fixed(dbm_to_watts(p)))
    };
    match mode {
        Mode::Cellular => match cfg.cellular_pc {
            CellularPc::Ofpc => open_loop(LteScheme::Ofpc),
            CellularPc::UtilityMax => Ok(Control::Utility),
        },
        Mode::Direct => match cfg.d2d_pc {
            D2dPc::Npc => open_loop(LteScheme::Npc),
            D2dPc::Fst => open_loop(LteScheme::Fst),
            D2dPc::Ofpc => open_loop(LteScheme::Ofpc),
            D2dPc::Cl => Ok(Control::ClosedLoop(ClLoopState::init(&cfg.lte, gain_db)?)),
            D2dPc::UtilityMax => Ok(Control::Utility),
        },
    }
}

/// Simulate one drop.
pub fn run_drop(cfg: &ExperimentConfig, drop_seed: u64) -> Result<DropMetrics, SimError> {
    let scenario = generate_drop(&cfg.geometry, &cfg.channel, drop_seed);
    let allocation = ra::allocate(&scenario, cfg.ra_scheme, cfg.mode_policy, drop_seed ^ RA_SEED_SALT)?;
    allocation.check(&scenario)?;
    let groups = build_cochannel_groups(&scenario, &allocation)?;

    let n = scenario.num_links();
    let mut power = vec![0.0; n];
    let mut sinr = vec![0.0; n];
    let mut clamped = vec![false; n];
    let cl_target = cfg.lte.gamma_tgt_db.ok_or(LtePcError::MissingTarget(LteScheme::Cl))?;

    for group in &groups {
        let env = LinkEnvironment::from_group(group);
        let mut controls = (0..group.len())
            .map(|i| link_control(cfg, group.modes[i], group.gains[(i, i)]))
            .collect::<Result<Vec<_>, _>>()?;
        let mut p: Vec<f64> = controls
            .iter()
            .map(|c| match c {
                Control::Fixed(p) => *p,
                Control::ClosedLoop(s) => dbm_to_watts(s.power_dbm),
                Control::Utility => 0.0,
            })
            .collect();
        let mut group_clamped = vec![false; group.len()];

        if controls.iter().any(|c| matches!(c, Control::Utility)) {
            let pc: Vec<LinkControl> = controls
                .iter()
                .zip(&p)
                .map(|(c, &pw)| match c {
                    Control::Utility => LinkControl::Utility,
                    _ => LinkControl::Fixed(pw),
                })
                .collect();
            let outcome = run_distributed_pc(&env, &cfg.utility, &pc);
            p = outcome.power;
            group_clamped = outcome.clamped;
        }

        if controls.iter().any(|c| matches!(c, Control::ClosedLoop(_))) {
            for _ in 0..CL_ITERATIONS {
                let measured = sinr_all(&p, &env);
                for (i, c) in controls.iter_mut().enumerate() {
                    if let Control::ClosedLoop(state) = c {
                        *state = lte_pc::closed_loop_update(*state, cl_target, linear_to_db(measured[i]), &cfg.lte);
                        p[i] = dbm_to_watts(state.power_dbm);
                    }
                }
            }
        }

        let final_sinr = sinr_all(&p, &env);
        for (i, &link) in group.members.iter().enumerate() {
            power[link] = p[i];
            sinr[link] = final_sinr[i];
            clamped[link] = group_clamped[i];
        }
    }

    let bandwidth = cfg.geometry.rb_bandwidth();
    let links: Vec<LinkMetrics> = scenario
        .links
        .iter()
        .map(|l| {
            let a = allocation.links[l.id].expect("allocation checked");
            LinkMetrics {
                link: l.id,
                cell: l.cell,
                class: l.kind,
                mode: a.mode,
                rb: a.rb,
                sinr_db: linear_to_db(sinr[l.id]),
                power_dbm: watts_to_dbm(power[l.id]),
                rate_bps: sinr_to_rate(sinr[l.id], bandwidth),
                clamped: clamped[l.id],
            }
        })
        .collect();
    Ok(DropMetrics {
        seed: drop_seed,
        sum_rate_bps: links.iter().map(|m| m.rate_bps).sum(),
        sum_power_w: power.iter().sum(),
        links,
    })
}

/// Empirical distribution of one pooled measure.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfSummary {
    sorted: Vec<f64>,
}

impl CdfSummary {
    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Value at quantile `p ∈ [0, 1]`, interpolating linearly between
    /// order statistics.
    pub fn percentile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let pos = p * (self.sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        if lo == hi {
            self.sorted[lo]
        } else {
            self.sorted[lo] + frac * (self.sorted[hi] - self.sorted[lo])
        }
    }

    pub fn median(&self) -> f64 {
        self.percentile(0.5)
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.sorted.len() as f64
    }
}

pub fn compute_cdf(samples: &[f64]) -> Result<CdfSummary, SimError> {
    if samples.is_empty() {
        return Err(SimError::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(CdfSummary { sorted })
}

/// One raw observation, as written to `samples.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub class: &'static str,
    pub measure: &'static str,
    pub value: f64,
}

pub const CLASS_CELLULAR: &str = "cellular";
/// All D2D candidates, whichever mode they ended up in.
pub const CLASS_D2D: &str = "d2d";
/// Only the D2D candidates that transmit directly.
pub const CLASS_D2D_DIRECT: &str = "d2d_direct";
pub const CLASS_SYSTEM: &str = "system";

pub const MEASURE_SINR: &str = "sinr_db";
pub const MEASURE_POWER: &str = "power_dbm";
pub const MEASURE_RATE: &str = "rate_bps";
pub const MEASURE_SUM_RATE: &str = "sum_rate_bps";
pub const MEASURE_SUM_POWER: &str = "sum_power_w";

impl DropMetrics {
    /// Samples in a fixed order: links in id order (per-link measures for
    /// each class the link belongs to), then the two per-drop sums.
    pub fn samples(&self) -> Vec<Sample> {
        let mut out = Vec::new();
        for m in &self.links {
            let classes: &[&'static str] = match (m.class, m.mode) {
                (LinkKind::Cellular, _) => &[CLASS_CELLULAR],
                (LinkKind::D2d, Mode::Direct) => &[CLASS_D2D, CLASS_D2D_DIRECT],
                (LinkKind::D2d, Mode::Cellular) => &[CLASS_D2D],
            };
            for &class in classes {
                out.push(Sample { class, measure: MEASURE_SINR, value: m.sinr_db });
                out.push(Sample { class, measure: MEASURE_POWER, value: m.power_dbm });
                out.push(Sample { class, measure: MEASURE_RATE, value: m.rate_bps });
            }
        }
        out.push(Sample { class: CLASS_SYSTEM, measure: MEASURE_SUM_RATE, value: self.sum_rate_bps });
        out.push(Sample { class: CLASS_SYSTEM, measure: MEASURE_SUM_POWER, value: self.sum_power_w });
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub drops: Vec<DropMetrics>,
}

impl ExperimentResult {
    pub fn samples(&self) -> Vec<Sample> {
        self.drops.iter().flat_map(DropMetrics::samples).collect()
    }

    /// Pooled values of one (class, measure) pair across all drops.
    pub fn pooled(&self, class: &str, measure: &str) -> Vec<f64> {
        self.samples().into_iter().filter(|s| s.class == class && s.measure == measure).map(|s| s.value).collect()
    }

    pub fn cdf(&self, class: &str, measure: &str) -> Result<CdfSummary, SimError> {
        compute_cdf(&self.pooled(class, measure))
    }

    /// CDFs keyed by (class, measure), for every pair with samples.
    pub fn cdfs(&self) -> BTreeMap<(&'static str, &'static str), CdfSummary> {
        let mut pooled: BTreeMap<(&'static str, &'static str), Vec<f64>> = BTreeMap::new();
        for s in self.samples() {
            pooled.entry((s.class, s.measure)).or_default().push(s.value);
        }
        pooled.into_iter().map(|(k, v)| (k, compute_cdf(&v).expect("non-empty by construction"))).collect()
    }

    pub fn mean_sum_rate(&self) -> f64 {
        self.drops.iter().map(|d| d.sum_rate_bps).sum::<f64>() / self.drops.len() as f64
    }

    pub fn mean_sum_power(&self) -> f64 {
        self.drops.iter().map(|d| d.sum_power_w).sum::<f64>() / self.drops.len() as f64
    }
}

/// Run `num_drops` drops with seeds `seed, seed + 1, …` in parallel.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, SimError> {
    cfg.validate()?;
    let drops = (0..cfg.num_drops as u64)
        .into_par_iter()
        .map(|i| run_drop(cfg, cfg.seed.wrapping_add(i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentResult { drops })
}
