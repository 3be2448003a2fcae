//! Spectral tailoring by rate-equation hole burning.
//!
//! An inhomogeneously broadened line is modelled as classes of ions indexed
//! by the detuning of their reference transition (lowest ground to middle
//! excited level). Each class carries fractional populations in the three
//! hyperfine ground levels; a burn step pumps every (class, level) whose
//! transition falls inside the excitation line of the laser and
//! redistributes the pumped population through the branching matrix, with
//! the excited state eliminated per step.
//!
//! The preparation sequence is pit sweep, burn-back pulses, clean sweep.
//! The pit empties a wide window into the auxiliary state, burn-back
//! repopulates narrow peaks from the auxiliary state at the comb positions,
//! and the clean sweep empties the spin-storage level over the comb
//! bandwidth.

use crate::comb::OpticalDepthProfile;
use crate::error::{Error, Result};
use crate::exec::{self, Mode};
use crate::grid::SpectralGrid;
use crate::spinwave::MaterialParams;
use serde::{Deserialize, Serialize};

/// Ground-level indices: 1/2g, 3/2g (spin storage), 5/2g (auxiliary).
pub const G12: usize = 0;
pub const G32: usize = 1;
pub const G52: usize = 2;

/// Excitation-line cutoff, in half-widths (3 FWHM).
const EXCITATION_CUTOFF_HALFWIDTHS: f64 = 6.0;

/// Relative oscillator strengths and hyperfine level offsets.
///
/// A class with reference detuning x has its (ground i, excited j)
/// transition at x + offset(i, j); the reference transition (1/2g to the
/// middle excited level) has offset zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionTable {
    pub ground_offsets_mhz: [f64; 3],
    pub excited_offsets_mhz: [f64; 3],
    pub strengths: [[f64; 3]; 3],
}

impl TransitionTable {
    /// Uniform-strength table from the material's hyperfine splittings.
    pub fn from_material(material: &MaterialParams) -> Self {
        let g = material.ground_splittings_mhz;
        let e = material.excited_splittings_mhz;
        Self {
            ground_offsets_mhz: [0.0, g[0], g[0] + g[1]],
            excited_offsets_mhz: [0.0, e[0], e[0] + e[1]],
            strengths: [[1.0 / 3.0; 3]; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.strengths {
            if row.iter().any(|s| !(0.0..=1.0).contains(s)) {
                return Err(Error::Validation("oscillator strengths must lie in [0, 1]".into()));
            }
            if row.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Validation("each ground level needs a nonzero row".into()));
            }
        }
        for col in 0..3 {
            if (0..3).map(|row| self.strengths[row][col]).sum::<f64>() <= 0.0 {
                return Err(Error::Validation("each excited level needs a nonzero column".into()));
            }
        }
        Ok(())
    }

    /// Detuning of the (ground i, excited j) transition relative to the
    /// class's reference detuning.
    pub fn offset_mhz(&self, ground: usize, excited: usize) -> f64 {
        (self.excited_offsets_mhz[excited] - self.excited_offsets_mhz[1])
            - self.ground_offsets_mhz[ground]
    }

    fn offset_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..3 {
            for j in 0..3 {
                lo = lo.min(self.offset_mhz(i, j));
                hi = hi.max(self.offset_mhz(i, j));
            }
        }
        (lo, hi)
    }

    /// Laser frequency whose auxiliary-state (5/2g) pumping deposits a
    /// comb tooth at `tooth_mhz` on the reference transition.
    pub fn burn_back_frequency(&self, tooth_mhz: f64) -> f64 {
        tooth_mhz + self.offset_mhz(G52, 1)
    }
}

/// Ion classes on a uniform detuning axis with per-class ground-level
/// populations and inhomogeneous weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonEnsemble {
    pub axis_start_mhz: f64,
    pub axis_step_mhz: f64,
    pub populations: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl IonEnsemble {
    /// Unburned ensemble: population 1/3 per ground level, unit weights.
    pub fn uniform(start_mhz: f64, end_mhz: f64, step_mhz: f64) -> Result<Self> {
        if !(step_mhz > 0.0) || !(end_mhz > start_mhz) {
            return Err(Error::Validation("ensemble axis must be increasing".into()));
        }
        let n = ((end_mhz - start_mhz) / step_mhz).round() as usize + 1;
        Ok(Self {
            axis_start_mhz: start_mhz,
            axis_step_mhz: step_mhz,
            populations: vec![[1.0 / 3.0; 3]; n],
            weights: vec![1.0; n],
        })
    }

    /// Default axis for the standard preparation: covers every class with
    /// a transition inside a +-16 MHz probe window at comb resolution.
    pub fn default_for(table: &TransitionTable) -> Result<Self> {
        let (off_lo, off_hi) = table.offset_range();
        Self::uniform((-16.0 - off_hi).floor(), (16.0 - off_lo).ceil(), 1.0 / 64.0)
    }

    pub fn len(&self) -> usize {
        self.populations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.populations.is_empty()
    }

    pub fn detuning_mhz(&self, class: usize) -> f64 {
        self.axis_start_mhz + class as f64 * self.axis_step_mhz
    }

    pub fn class_at(&self, detuning_mhz: f64) -> Option<usize> {
        let k = ((detuning_mhz - self.axis_start_mhz) / self.axis_step_mhz).round();
        (k >= 0.0 && k < self.len() as f64).then_some(k as usize)
    }

    /// Per-class population conservation check.
    pub fn conserved(&self) -> bool {
        self.populations.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-9)
    }
}

/// One pumping step: Lorentzian excitation line of the given FWHM at the
/// laser frequency, pump exponent rate x duration, relaxation through the
/// branching matrix within the step.
pub fn burn_step(
    ensemble: &mut IonEnsemble,
    laser_frequency_mhz: f64,
    excitation_fwhm_mhz: f64,
    rate_per_us: f64,
    duration_us: f64,
    table: &TransitionTable,
    branching: &[[f64; 3]; 3],
) -> Result<()> {
    burn_step_with(
        ensemble,
        laser_frequency_mhz,
        excitation_fwhm_mhz,
        rate_per_us,
        duration_us,
        table,
        branching,
        Mode::Auto,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn burn_step_with(
    ensemble: &mut IonEnsemble,
    laser_frequency_mhz: f64,
    excitation_fwhm_mhz: f64,
    rate_per_us: f64,
    duration_us: f64,
    table: &TransitionTable,
    branching: &[[f64; 3]; 3],
    mode: Mode,
) -> Result<()> {
    if rate_per_us < 0.0 || duration_us < 0.0 || !(excitation_fwhm_mhz > 0.0) {
        return Err(Error::Validation(
            "burn step needs non-negative rate/duration and positive bandwidth".into(),
        ));
    }
    if rate_per_us * duration_us == 0.0 {
        return Ok(());
    }
    let half = excitation_fwhm_mhz / 2.0;
    let start = ensemble.axis_start_mhz;
    let step = ensemble.axis_step_mhz;
    let populations = &ensemble.populations;
    let next = exec::map_indexed(mode, populations.len(), |k| {
        let x = start + k as f64 * step;
        let p = populations[k];
        let mut rates = [0.0f64; 3];
        let mut paths = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let d = (x + table.offset_mhz(i, j) - laser_frequency_mhz) / half;
                // the excitation line has finite extent: beyond 3 FWHM the
                // light no longer pumps, which also bounds the region a
                // sweep can ever touch
                if d.abs() > EXCITATION_CUTOFF_HALFWIDTHS {
                    continue;
                }
                let r = rate_per_us * table.strengths[i][j] / (1.0 + d * d);
                rates[i] += r;
                paths[i][j] = r;
            }
        }
        let mut out = p;
        for i in 0..3 {
            if rates[i] <= 0.0 || p[i] == 0.0 {
                continue;
            }
            let pumped = p[i] * (1.0 - (-rates[i] * duration_us).exp());
            out[i] -= pumped;
            for j in 0..3 {
                let share = pumped * paths[i][j] / rates[i];
                for (m, b) in branching[j].iter().enumerate() {
                    out[m] += share * b;
                }
            }
        }
        out
    });
    ensemble.populations = next;
    Ok(())
}

/// A repeated frequency sweep, discretised into burn steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepStage {
    pub center_mhz: f64,
    pub span_mhz: f64,
    pub repeats: usize,
    pub step_mhz: f64,
    pub rate_per_us: f64,
    pub duration_us: f64,
    pub excitation_fwhm_mhz: f64,
}

impl SweepStage {
    fn frequencies(&self) -> Vec<f64> {
        let n = (self.span_mhz / self.step_mhz).round() as usize;
        (0..=n)
            .map(|i| self.center_mhz - self.span_mhz / 2.0 + i as f64 * self.step_mhz)
            .collect()
    }
}

/// One burn-back pulse train at a fixed frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurnBackPulse {
    pub frequency_mhz: f64,
    pub duration_us: f64,
    pub repeats: usize,
    pub rate_per_us: f64,
    pub excitation_fwhm_mhz: f64,
}

/// The full tailoring sequence: pit, burn-back, clean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepSequence {
    pub pit: SweepStage,
    pub burn_back: Vec<BurnBackPulse>,
    pub clean: SweepStage,
    pub t_prep_us: f64,
    pub t_w_us: f64,
}

impl PrepSequence {
    /// Standard sequence: a 12 MHz pit swept 100 times (power broadened to
    /// ~18 MHz), five 100 us burn-back pulses per tooth repeated 100 times,
    /// and a 2 MHz clean sweep at the control transition repeated 1000
    /// times. Rates and excitation widths are tuning defaults chosen to
    /// reproduce finesse ~4 combs.
    pub fn paper_default(table: &TransitionTable, tooth_positions_mhz: &[f64]) -> Self {
        Self {
            pit: SweepStage {
                center_mhz: 0.0,
                span_mhz: 12.0,
                repeats: 100,
                step_mhz: 0.25,
                rate_per_us: 0.02,
                duration_us: 1.0,
                excitation_fwhm_mhz: 2.6,
            },
            burn_back: tooth_positions_mhz
                .iter()
                .map(|t| BurnBackPulse {
                    frequency_mhz: table.burn_back_frequency(*t),
                    duration_us: 100.0,
                    repeats: 100,
                    rate_per_us: 0.0012,
                    excitation_fwhm_mhz: 0.056,
                })
                .collect(),
            clean: SweepStage {
                center_mhz: table.offset_mhz(G32, 1),
                span_mhz: 2.0,
                repeats: 1000,
                step_mhz: 0.05,
                rate_per_us: 0.05,
                duration_us: 1.0,
                excitation_fwhm_mhz: 0.1,
            },
            t_prep_us: 200_000.0,
            t_w_us: 1000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for stage in [&self.pit, &self.clean] {
            if !(stage.span_mhz > 0.0) || !(stage.step_mhz > 0.0) {
                return Err(Error::SequenceInvariant("sweep spans and steps must be positive".into()));
            }
        }
        let total: f64 = self.pit.repeats as f64
            * self.pit.frequencies().len() as f64
            * self.pit.duration_us
            + self
                .burn_back
                .iter()
                .map(|b| b.repeats as f64 * b.duration_us)
                .sum::<f64>()
            + self.clean.repeats as f64
                * self.clean.frequencies().len() as f64
                * self.clean.duration_us;
        if self.t_prep_us < total {
            return Err(Error::SequenceInvariant(format!(
                "preparation time {} us is shorter than the pulse train ({total:.0} us)",
                self.t_prep_us
            )));
        }
        Ok(())
    }

    /// Frequencies (on the reference transition) where burn-back deposits
    /// absorbing population, including the side classes reached through
    /// the other excited levels.
    pub fn deposit_frequencies(&self, table: &TransitionTable) -> Vec<f64> {
        let mut out = Vec::new();
        for bb in &self.burn_back {
            for j in 0..3 {
                // class pumped from the auxiliary state via excited level j
                let class = bb.frequency_mhz - table.offset_mhz(G52, j);
                // its absorbing transitions from the two repopulated levels
                for i in [G12, G32] {
                    for jj in 0..3 {
                        out.push(class + table.offset_mhz(i, jj));
                    }
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        out
    }
}

fn run_stage_sweep(
    ensemble: &mut IonEnsemble,
    stage: &SweepStage,
    table: &TransitionTable,
    branching: &[[f64; 3]; 3],
    mode: Mode,
) -> Result<()> {
    let freqs = stage.frequencies();
    for _ in 0..stage.repeats {
        for f in &freqs {
            burn_step_with(
                ensemble,
                *f,
                stage.excitation_fwhm_mhz,
                stage.rate_per_us,
                stage.duration_us,
                table,
                branching,
                mode,
            )?;
        }
    }
    Ok(())
}

/// Apply the full preparation sequence in order: pit, burn-back, clean.
pub fn run_preparation(
    ensemble: &mut IonEnsemble,
    seq: &PrepSequence,
    table: &TransitionTable,
    branching: &[[f64; 3]; 3],
) -> Result<()> {
    run_preparation_with(ensemble, seq, table, branching, Mode::Auto)
}

pub fn run_preparation_with(
    ensemble: &mut IonEnsemble,
    seq: &PrepSequence,
    table: &TransitionTable,
    branching: &[[f64; 3]; 3],
    mode: Mode,
) -> Result<()> {
    table.validate()?;
    seq.validate()?;
    run_stage_sweep(ensemble, &seq.pit, table, branching, mode)?;
    for bb in &seq.burn_back {
        for _ in 0..bb.repeats {
            burn_step_with(
                ensemble,
                bb.frequency_mhz,
                bb.excitation_fwhm_mhz,
                bb.rate_per_us,
                bb.duration_us,
                table,
                branching,
                mode,
            )?;
        }
    }
    run_stage_sweep(ensemble, &seq.clean, table, branching, mode)?;
    Ok(())
}

/// Strength-weighted absorption on a uniform frequency lattice aligned
/// with the class axis. Returns (start frequency, step, unscaled values).
fn spectrum_lattice(ensemble: &IonEnsemble, table: &TransitionTable) -> (f64, f64, Vec<f64>) {
    let step = ensemble.axis_step_mhz;
    let (off_lo, off_hi) = table.offset_range();
    // frequencies with every contributing class on the axis
    let lo = ensemble.axis_start_mhz + off_hi;
    let hi = ensemble.detuning_mhz(ensemble.len() - 1) + off_lo;
    let n = ((hi - lo) / step).floor() as usize + 1;
    let values = (0..n)
        .map(|b| {
            let nu = lo + b as f64 * step;
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let class = nu - table.offset_mhz(i, j);
                    if let Some(k) = ensemble.class_at(class) {
                        acc += ensemble.populations[k][i]
                            * table.strengths[i][j]
                            * ensemble.weights[k];
                    }
                }
            }
            acc
        })
        .collect();
    (lo, step, values)
}

fn unburned_level(table: &TransitionTable) -> f64 {
    (0..3).map(|i| (0..3).map(|j| table.strengths[i][j]).sum::<f64>()).sum::<f64>() / 3.0
}

/// Optical-depth spectrum over a probe window, normalised so the unburned
/// line sits at `d_full`. The window (padded to a power-of-two grid) must
/// lie inside the frequency range covered by the simulated classes.
pub fn absorption_spectrum(
    ensemble: &IonEnsemble,
    table: &TransitionTable,
    d_full: f64,
    window_mhz: (f64, f64),
) -> Result<OpticalDepthProfile> {
    let (lo, hi) = window_mhz;
    if !(hi > lo) {
        return Err(Error::WindowOutOfRange("empty probe window".into()));
    }
    let step = ensemble.axis_step_mhz;
    let n = (((hi - lo) / step).ceil() as usize + 1).next_power_of_two();
    let span = n as f64 * step;
    let grid = SpectralGrid::new((lo + hi) / 2.0, span, n)?;
    absorption_on_grid(ensemble, table, d_full, &grid)
}

/// Spectral density of a single ground level over a probe window, on the
/// same depth scale as [`absorption_spectrum`] (the unburned full line
/// maps to `d_full`). Used to check the pit: the comb transition sees the
/// 1/2g population.
pub fn level_spectrum(
    ensemble: &IonEnsemble,
    table: &TransitionTable,
    d_full: f64,
    window_mhz: (f64, f64),
    level: usize,
) -> Result<OpticalDepthProfile> {
    let mut restricted = table.clone();
    for (i, row) in restricted.strengths.iter_mut().enumerate() {
        if i != level {
            // keep a vanishing strength so the table stays valid
            *row = [1e-300; 3];
        }
    }
    let (lo, hi) = window_mhz;
    if !(hi > lo) {
        return Err(Error::WindowOutOfRange("empty probe window".into()));
    }
    let step = ensemble.axis_step_mhz;
    let n = (((hi - lo) / step).ceil() as usize + 1).next_power_of_two();
    let span = n as f64 * step;
    let grid = SpectralGrid::new((lo + hi) / 2.0, span, n)?;
    let (lat_lo, lat_step, values) = spectrum_lattice(ensemble, &restricted);
    let lat_hi = lat_lo + (values.len() - 1) as f64 * lat_step;
    if grid.frequency_mhz(0) < lat_lo - 1e-9
        || grid.frequency_mhz(grid.num_points - 1) > lat_hi + 1e-9
    {
        return Err(Error::WindowOutOfRange("probe window exceeds simulated coverage".into()));
    }
    // normalise against the full unburned line, not the restricted one
    let scale = d_full / unburned_level(table);
    let depth = grid
        .frequencies()
        .map(|nu| {
            let pos = (nu - lat_lo) / lat_step;
            let k = (pos.floor() as usize).min(values.len() - 2);
            let frac = pos - k as f64;
            (scale * (values[k] * (1.0 - frac) + values[k + 1] * frac)).max(0.0)
        })
        .collect();
    OpticalDepthProfile::new(grid, depth)
}

/// Optical-depth spectrum sampled on an arbitrary spectral grid by linear
/// interpolation of the class-lattice spectrum.
pub fn absorption_on_grid(
    ensemble: &IonEnsemble,
    table: &TransitionTable,
    d_full: f64,
    grid: &SpectralGrid,
) -> Result<OpticalDepthProfile> {
    let (lat_lo, step, values) = spectrum_lattice(ensemble, table);
    let lat_hi = lat_lo + (values.len() - 1) as f64 * step;
    let scale = d_full / unburned_level(table);
    let lo = grid.frequency_mhz(0);
    let hi = grid.frequency_mhz(grid.num_points - 1);
    if lo < lat_lo - 1e-9 || hi > lat_hi + 1e-9 {
        return Err(Error::WindowOutOfRange(format!(
            "probe grid [{lo:.2}, {hi:.2}] MHz exceeds the simulated coverage [{lat_lo:.2}, {lat_hi:.2}] MHz"
        )));
    }
    let depth = grid
        .frequencies()
        .map(|nu| {
            let pos = (nu - lat_lo) / step;
            let k = (pos.floor() as usize).min(values.len() - 2);
            let frac = pos - k as f64;
            scale * (values[k] * (1.0 - frac) + values[k + 1] * frac)
        })
        .map(|d| d.max(0.0))
        .collect();
    OpticalDepthProfile::new(*grid, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table() -> TransitionTable {
        TransitionTable::from_material(&MaterialParams::default())
    }

    fn branching() -> [[f64; 3]; 3] {
        MaterialParams::default().branching
    }

    #[test]
    fn zero_rate_leaves_ensemble_unchanged() {
        let table = table();
        let mut ens = IonEnsemble::uniform(-5.0, 5.0, 0.25).unwrap();
        let before = ens.clone();
        burn_step(&mut ens, 0.0, 1.0, 0.0, 100.0, &table, &branching()).unwrap();
        assert_eq!(ens, before);
    }

    #[test]
    fn population_is_conserved_per_class() {
        let table = table();
        let mut ens = IonEnsemble::uniform(-40.0, 40.0, 0.5).unwrap();
        for i in 0..20 {
            burn_step(&mut ens, -6.0 + 0.7 * i as f64, 1.5, 0.8, 2.0, &table, &branching())
                .unwrap();
        }
        assert!(ens.conserved());
    }

    #[test]
    fn saturated_burn_empties_the_resonant_level() {
        let table = table();
        // single class, resonant only through the reference transition
        let mut ens = IonEnsemble::uniform(-0.05, 0.05, 0.05).unwrap();
        for _ in 0..100 {
            burn_step(&mut ens, 0.0, 0.01, 10.0, 100.0, &table, &branching()).unwrap();
        }
        let k = ens.class_at(0.0).unwrap();
        assert!(ens.populations[k][G12] <= 1e-3, "residual {}", ens.populations[k][G12]);
        assert!(ens.conserved());
    }

    #[test]
    fn unburned_spectrum_is_flat_at_full_depth() {
        let table = table();
        let ens = IonEnsemble::default_for(&table).unwrap();
        let profile = absorption_spectrum(&ens, &table, 6.9, (-10.0, 10.0)).unwrap();
        for d in &profile.depth {
            assert_relative_eq!(*d, 6.9, max_relative = 0.01);
        }
        // fully emptied window gives zero depth
        let mut empty = ens.clone();
        for p in empty.populations.iter_mut() {
            *p = [0.0; 3];
        }
        let profile = absorption_spectrum(&empty, &table, 6.9, (-10.0, 10.0)).unwrap();
        assert!(profile.depth.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn window_outside_coverage_is_rejected() {
        let table = table();
        let ens = IonEnsemble::uniform(-10.0, 10.0, 0.5).unwrap();
        assert!(matches!(
            absorption_spectrum(&ens, &table, 6.9, (-30.0, 30.0)),
            Err(Error::WindowOutOfRange(_))
        ));
    }

    #[test]
    fn empty_sequence_is_identity() {
        let table = table();
        let mut seq = PrepSequence::paper_default(&table, &[]);
        seq.pit.repeats = 0;
        seq.clean.repeats = 0;
        let mut ens = IonEnsemble::uniform(-5.0, 5.0, 0.5).unwrap();
        let before = ens.clone();
        run_preparation(&mut ens, &seq, &table, &branching()).unwrap();
        assert_eq!(ens, before);
    }

    #[test]
    fn more_pit_repeats_never_raise_the_residual() {
        let table = table();
        let mut residuals = Vec::new();
        for repeats in [5, 20, 80] {
            let mut seq = PrepSequence::paper_default(&table, &[]);
            seq.pit.repeats = repeats;
            seq.clean.repeats = 0;
            let mut ens = IonEnsemble::default_for(&table).unwrap();
            run_preparation(&mut ens, &seq, &table, &branching()).unwrap();
            let profile = absorption_spectrum(&ens, &table, 6.9, (-4.0, 4.0)).unwrap();
            residuals.push(profile.depth.iter().cloned().fold(f64::MIN, f64::max));
        }
        assert!(residuals[1] <= residuals[0] + 1e-12);
        assert!(residuals[2] <= residuals[1] + 1e-12);
    }

    #[test]
    fn saturated_preparation_is_idempotent() {
        let table = table();
        let mut seq = PrepSequence::paper_default(&table, &[]);
        // strong drive so even the slowest class inside the excitation
        // cutoff saturates within the run
        seq.pit.rate_per_us = 10.0;
        seq.pit.repeats = 200;
        seq.clean.repeats = 0;
        let mut ens = IonEnsemble::default_for(&table).unwrap();
        run_preparation(&mut ens, &seq, &table, &branching()).unwrap();
        let profile_a = absorption_spectrum(&ens, &table, 6.9, (-5.0, 5.0)).unwrap();
        // burn the pit again from the converged state
        run_preparation(&mut ens, &seq, &table, &branching()).unwrap();
        let profile_b = absorption_spectrum(&ens, &table, 6.9, (-5.0, 5.0)).unwrap();
        let max_change = profile_a
            .depth
            .iter()
            .zip(&profile_b.depth)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_change < 1e-4, "change {max_change}");
    }

    #[test]
    fn overlong_pulse_train_is_rejected() {
        let table = table();
        let mut seq = PrepSequence::paper_default(&table, &[0.0]);
        seq.t_prep_us = 10.0;
        let mut ens = IonEnsemble::uniform(-5.0, 5.0, 0.5).unwrap();
        assert!(matches!(
            run_preparation(&mut ens, &seq, &table, &branching()),
            Err(Error::SequenceInvariant(_))
        ));
    }
}
