//! LTE uplink power-control toolkit: no power control (NPC), fixed SNR
//! target (FST), open loop with fractional path-loss compensation (OFPC)
//! and closed-loop TPC stepping (CL).
//!
//! Everything here works in dB / dBm. The transport-format offset is zero
//! and grants are a single RB, so the bandwidth factor `10 log10 M` is kept
//! but constant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, InvalidParam};
use crate::units::watts_to_dbm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LteScheme {
    Npc,
    Fst,
    Ofpc,
    Cl,
}

#[derive(Debug, Error, PartialEq)]
pub enum LtePcError {
    #[error("scheme {0:?} needs an SINR target but none is configured")]
    MissingTarget(LteScheme),
    #[error("scheme {0:?} has no open-loop operating point")]
    NoOperatingPoint(LteScheme),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LtePcConfig {
    /// Chosen per link by the caller; not part of the serialized config.
    #[serde(skip)]
    pub scheme: LteScheme,
    /// Path-loss compensation factor used by OFPC. FST and CL always use 1.
    pub alpha: f64,
    pub gamma_tgt_db: Option<f64>,
    pub p_in_dbm: f64,
    pub p_max_dbm: f64,
    pub p_min_dbm: f64,
    /// Transmit power under NPC.
    pub fixed_power_dbm: f64,
    pub m_rbs: u32,
}

impl Default for LtePcConfig {
    fn default() -> Self {
        Self {
            scheme: LteScheme::Ofpc,
            alpha: 0.8,
            gamma_tgt_db: Some(15.0),
            p_in_dbm: -116.0,
            p_max_dbm: watts_to_dbm(0.2),
            p_min_dbm: watts_to_dbm(5e-6),
            fixed_power_dbm: 10.0,
            m_rbs: 1,
        }
    }
}

impl LtePcConfig {
    pub fn validate(&self) -> Result<(), InvalidParam> {
        ensure((0.0..=1.0).contains(&self.alpha), "alpha", "must lie in [0, 1]")?;
        ensure(
            self.p_min_dbm.is_finite() && self.p_max_dbm.is_finite() && self.p_min_dbm <= self.p_max_dbm,
            "p_min_dbm",
            "must not exceed p_max_dbm",
        )?;
        ensure(self.m_rbs == 1, "m_rbs", "only single-RB grants are modelled")?;
        ensure(self.p_in_dbm.is_finite(), "p_in_dbm", "must be finite")?;
        ensure(self.fixed_power_dbm.is_finite(), "fixed_power_dbm", "must be finite")?;
        if matches!(self.scheme, LteScheme::Fst | LteScheme::Ofpc | LteScheme::Cl) {
            ensure(self.gamma_tgt_db.is_some_and(f64::is_finite), "gamma_tgt_db", "required by FST, OFPC and CL")?;
        }
        Ok(())
    }

    pub fn with_scheme(&self, scheme: LteScheme) -> Self {
        Self { scheme, ..self.clone() }
    }

    /// Compensation factor the scheme actually applies.
    pub fn effective_alpha(&self) -> f64 {
        match self.scheme {
            LteScheme::Npc => 0.0,
            LteScheme::Fst | LteScheme::Cl => 1.0,
            LteScheme::Ofpc => self.alpha,
        }
    }

    fn bandwidth_factor_db(&self) -> f64 {
        10.0 * f64::from(self.m_rbs).log10()
    }

    fn clamp(&self, p_dbm: f64) -> f64 {
        p_dbm.min(self.p_max_dbm).max(self.p_min_dbm)
    }
}

/// Open-loop base power level `P0` in dBm.
pub fn compute_p0(cfg: &LtePcConfig) -> Result<f64, LtePcError> {
    if cfg.scheme == LteScheme::Npc {
        return Err(LtePcError::NoOperatingPoint(cfg.scheme));
    }
    let gamma = cfg.gamma_tgt_db.ok_or(LtePcError::MissingTarget(cfg.scheme))?;
    let alpha = cfg.effective_alpha();
    Ok(alpha * (gamma + cfg.p_in_dbm) + (1.0 - alpha) * (cfg.p_max_dbm - cfg.bandwidth_factor_db()))
}

/// Open-loop transmit power in dBm for a link whose path gain to its
/// receiver is `gain_to_rx_db` (negative dB).
pub fn open_loop_power(cfg: &LtePcConfig, gain_to_rx_db: f64) -> Result<f64, LtePcError> {
    if cfg.scheme == LteScheme::Npc {
        return Ok(cfg.clamp(cfg.fixed_power_dbm));
    }
    let p0 = compute_p0(cfg)?;
    let p = p0 - cfg.effective_alpha() * gain_to_rx_db + cfg.bandwidth_factor_db();
    Ok(cfg.clamp(p))
}

/// Magnitude of the closed-loop TPC step in dB.
pub fn tpc_step(gamma_tgt_db: f64, gamma_meas_db: f64) -> f64 {
    let gap = (gamma_tgt_db - gamma_meas_db).abs();
    if gap > 2.0 {
        gap / 2.0
    } else {
        1.0
    }
}

/// Signed TPC correction: the step taken toward the target, zero on target.
pub fn tpc_offset(gamma_tgt_db: f64, gamma_meas_db: f64) -> f64 {
    let diff = gamma_tgt_db - gamma_meas_db;
    if diff == 0.0 {
        0.0
    } else {
        diff.signum() * tpc_step(gamma_tgt_db, gamma_meas_db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClLoopState {
    pub power_dbm: f64,
    pub last_sinr_db: Option<f64>,
}

impl ClLoopState {
    /// Start a closed loop at the FST operating point.
    pub fn init(cfg: &LtePcConfig, gain_to_rx_db: f64) -> Result<Self, LtePcError> {
        let fst = cfg.with_scheme(LteScheme::Fst);
        Ok(Self { power_dbm: open_loop_power(&fst, gain_to_rx_db)?, last_sinr_db: None })
    }
}

pub fn closed_loop_update(state: ClLoopState, gamma_tgt_db: f64, gamma_meas_db: f64, cfg: &LtePcConfig) -> ClLoopState {
    ClLoopState {
        power_dbm: cfg.clamp(state.power_dbm + tpc_offset(gamma_tgt_db, gamma_meas_db)),
        last_sinr_db: Some(gamma_meas_db),
    }
}
