//! Conductance dynamics of a single ECM cell.
//!
//! A cell is a lazily evaluated state machine. Between events the conductance
//! relaxes exponentially with the facilitation time constant fixed by the most
//! recent programming spike:
//!
//! ```text
//! tau_fac    = a * (G / G_unit)^b              set after every spike
//! G_relax(t) = G_last * exp(-(t - t_last) / tau_fac)
//! G'         = G_relax + U * (A - G_relax)     on a spike
//! ```
//!
//! All quantities are SI (siemens, seconds, volts). The power law is evaluated
//! on conductance expressed in microsiemens, [`CONDUCTANCE_UNIT`].

use crate::error::{Error, Result};

/// Conductance unit the `tau_fac` power law is evaluated in (1 µS).
pub const CONDUCTANCE_UNIT: f64 = 1e-6;

/// Relaxed conductances never drop below this value, so `G > 0` always holds.
pub const CONDUCTANCE_FLOOR: f64 = 1e-30;

/// Conductance of a fresh, functionally OFF device (10 µS).
pub const DEFAULT_INITIAL_CONDUCTANCE: f64 = 10e-6;

/// Physical constants of one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceParams {
    /// Synaptic efficiency `U`: fraction of the remaining headroom gained per spike.
    pub efficiency: f64,
    /// Maximum conductance `A` (S).
    pub g_max: f64,
    /// Power-law prefactor `a` (s).
    pub tau_prefactor: f64,
    /// Power-law exponent `b`.
    pub tau_exponent: f64,
    /// Programming threshold (V). Every programming pulse is assumed to exceed it.
    pub v_threshold: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            efficiency: 0.025,
            g_max: 4e-3,
            tau_prefactor: 2.42e-12,
            tau_exponent: 4.0,
            // Must sit between the half-select amplitude (0.21 V) and the
            // full programming amplitude (0.42 V).
            v_threshold: 0.3,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.efficiency,
            self.g_max,
            self.tau_prefactor,
            self.tau_exponent,
            self.v_threshold,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("device parameters must be finite"));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::invalid(format!(
                "efficiency U must lie in (0, 1], got {}",
                self.efficiency
            )));
        }
        if self.g_max <= 0.0 || self.tau_prefactor <= 0.0 || self.tau_exponent <= 0.0 {
            return Err(Error::invalid("A, a and b must be strictly positive"));
        }
        Ok(())
    }

    /// Facilitation time constant for a device sitting at conductance `g`.
    #[inline]
    pub fn tau_for(&self, g: f64) -> f64 {
        let x = g / CONDUCTANCE_UNIT;
        let b = self.tau_exponent;
        let pow = if b == b.trunc() && b.abs() < 64.0 {
            x.powi(b as i32)
        } else {
            x.powf(b)
        };
        self.tau_prefactor * pow
    }

    /// Conductance at which `tau_fac` equals `tau`.
    pub fn conductance_for_tau(&self, tau: f64) -> f64 {
        CONDUCTANCE_UNIT * (tau / self.tau_prefactor).powf(1.0 / self.tau_exponent)
    }
}

/// Lazy device state: the conductance right after the last event, the event
/// time, and the time constant currently in force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceState {
    pub conductance: f64,
    pub last_event: f64,
    pub tau_fac: f64,
}

impl DeviceState {
    /// A device at conductance `g` as of time `t`, with `tau_fac` consistent with `g`.
    pub fn new(g: f64, t: f64, params: &DeviceParams) -> Self {
        let g = g.max(CONDUCTANCE_FLOOR);
        DeviceState {
            conductance: g,
            last_event: t,
            tau_fac: params.tau_for(g),
        }
    }

    #[inline]
    fn check_time(&self, t: f64) -> Result<()> {
        if t < self.last_event {
            Err(Error::TimeReversal {
                last: self.last_event,
                requested: t,
            })
        } else {
            Ok(())
        }
    }

    /// Conductance at time `t` without mutating the state.
    #[inline]
    pub fn relaxed_conductance(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.relaxed_unchecked(t))
    }

    #[inline]
    pub(crate) fn relaxed_unchecked(&self, t: f64) -> f64 {
        let elapsed = t - self.last_event;
        if elapsed == 0.0 {
            return self.conductance;
        }
        (self.conductance * (-elapsed / self.tau_fac).exp()).max(CONDUCTANCE_FLOOR)
    }

    /// Relax to `t`, then apply one programming spike. `tau_fac` is recomputed
    /// from the post-spike conductance.
    #[inline]
    pub fn apply_spike(&self, t: f64, params: &DeviceParams) -> Result<DeviceState> {
        self.check_time(t)?;
        Ok(self.spike_unchecked(t, params))
    }

    #[inline]
    pub(crate) fn spike_unchecked(&self, t: f64, params: &DeviceParams) -> DeviceState {
        let relaxed = self.relaxed_unchecked(t);
        let g = relaxed + params.efficiency * (params.g_max - relaxed);
        DeviceState {
            conductance: g,
            last_event: t,
            tau_fac: params.tau_for(g),
        }
    }

    /// Advance to `t` with no spike. `tau_fac` is left unchanged.
    pub fn step_no_spike(&self, t: f64) -> Result<DeviceState> {
        self.check_time(t)?;
        Ok(DeviceState {
            conductance: self.relaxed_unchecked(t),
            last_event: t,
            tau_fac: self.tau_fac,
        })
    }
}
