//! Time and frequency grids.
//!
//! Unit conventions used throughout the crate: ordinary (not angular)
//! frequencies in MHz, times in us, so MHz x us products are dimensionless.
//! Frequencies are detunings relative to the input carrier (0 = carrier).
//!
//! Propagation pairs a [`TimeGrid`] with its FFT-conjugate [`SpectralGrid`]:
//! same number of points, span = 1/dt, centre 0. Spectral arrays are stored
//! on the natural (monotonic) axis with DC at index n/2.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralGrid {
    pub center_mhz: f64,
    pub span_mhz: f64,
    pub num_points: usize,
}

impl SpectralGrid {
    pub fn new(center_mhz: f64, span_mhz: f64, num_points: usize) -> Result<Self> {
        if !(span_mhz > 0.0) || !center_mhz.is_finite() {
            return Err(Error::Validation(format!(
                "spectral grid span must be positive, got {span_mhz}"
            )));
        }
        if num_points < 2 || !num_points.is_power_of_two() {
            return Err(Error::Validation(format!(
                "num_points must be a power of two >= 2, got {num_points}"
            )));
        }
        Ok(Self { center_mhz, span_mhz, num_points })
    }

    /// FFT-conjugate grid of a time grid: span 1/dt, centred on the carrier.
    pub fn conjugate_of(time: &TimeGrid) -> Self {
        Self {
            center_mhz: 0.0,
            span_mhz: 1.0 / time.dt_us(),
            num_points: time.num_points,
        }
    }

    pub fn resolution_mhz(&self) -> f64 {
        self.span_mhz / self.num_points as f64
    }

    /// Frequency of natural-axis index `k` (DC at `num_points/2`).
    pub fn frequency_mhz(&self, k: usize) -> f64 {
        self.center_mhz + (k as f64 - (self.num_points / 2) as f64) * self.resolution_mhz()
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_points).map(|k| self.frequency_mhz(k))
    }

    /// Nearest natural-axis index for a frequency, if it falls on the grid.
    pub fn index_of(&self, freq_mhz: f64) -> Option<usize> {
        let k = ((freq_mhz - self.center_mhz) / self.resolution_mhz()
            + (self.num_points / 2) as f64)
            .round();
        (k >= 0.0 && k < self.num_points as f64).then_some(k as usize)
    }

    /// Check the >= 8 points-per-tooth sampling rule for a tooth of FWHM
    /// `gamma` and that a bandwidth fits in the span with the stated margin.
    pub fn check_comb_sampling(&self, tooth_fwhm_mhz: f64, bandwidth_mhz: f64) -> Result<()> {
        if self.resolution_mhz() > tooth_fwhm_mhz / 8.0 + 1e-12 {
            return Err(Error::GridTooCoarse(format!(
                "resolution {:.6} MHz exceeds tooth FWHM/8 = {:.6} MHz",
                self.resolution_mhz(),
                tooth_fwhm_mhz / 8.0
            )));
        }
        if bandwidth_mhz > self.span_mhz {
            return Err(Error::CombExceedsSpan {
                bandwidth_mhz,
                span_mhz: self.span_mhz,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub duration_us: f64,
    pub num_points: usize,
}

impl TimeGrid {
    pub fn new(duration_us: f64, num_points: usize) -> Result<Self> {
        if !(duration_us > 0.0) {
            return Err(Error::Validation(format!(
                "time grid duration must be positive, got {duration_us}"
            )));
        }
        if num_points < 2 || !num_points.is_power_of_two() {
            return Err(Error::Validation(format!(
                "num_points must be a power of two >= 2, got {num_points}"
            )));
        }
        Ok(Self { duration_us, num_points })
    }

    pub fn dt_us(&self) -> f64 {
        self.duration_us / self.num_points as f64
    }

    pub fn time_us(&self, i: usize) -> f64 {
        i as f64 * self.dt_us()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_points).map(|i| self.time_us(i))
    }

    /// Nearest sample index for a time, clamped to the grid.
    pub fn index_at(&self, t_us: f64) -> usize {
        let i = (t_us / self.dt_us()).round();
        (i.max(0.0) as usize).min(self.num_points - 1)
    }

    /// Nyquist-margin check against a comb of the given bandwidth: the
    /// conjugate span must exceed the comb bandwidth at least fourfold so
    /// that periodisation error in the causal filter stays below 1e-3.
    pub fn check_nyquist_margin(&self, bandwidth_mhz: f64) -> Result<()> {
        let span = 1.0 / self.dt_us();
        if span < 4.0 * bandwidth_mhz {
            return Err(Error::GridTooCoarse(format!(
                "conjugate span {span:.3} MHz is below 4x comb bandwidth {bandwidth_mhz:.3} MHz"
            )));
        }
        Ok(())
    }
}
