//! Three-level protocol layer: control-pulse transfer, spin-wave
//! dephasing, laser phase noise, partial readouts and the full
//! store-transfer-wait-retrieve sequence.
//!
//! The transfer model is a resonantly driven two-level rotation: a control
//! pulse of area theta moves optical coherence to the spin state with
//! amplitude sin(theta/2) and leaves cos(theta/2) behind. Readouts apply
//! the same beam splitter to the stored spin amplitude, so a pulse train
//! realises the partial-readout bookkeeping
//!
//! ```text
//! emitted_k ~ S sin(theta_k/2) prod_{m<k} cos(theta_m/2),
//! S -> S cos(theta_k/2)
//! ```
//!
//! Spin-wave amplitudes decay with the Gaussian inhomogeneity law while
//! they wait, and every input bin carries the instantaneous laser phase
//! sampled from a Wiener process of the configured linewidth.

use crate::comb::{build_comb_profile, CombSpec};
use crate::error::{Error, Result};
use crate::exec::{self, Mode};
use crate::fft::fft_inplace;
use crate::fit::{fit_fringe, FitReport};
use crate::grid::{SpectralGrid, TimeGrid};
use crate::propagation::{
    propagate, transfer_function_from_depth, FieldTrace, Pulse, TransferFunction,
};
use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const PI: f64 = std::f64::consts::PI;
pub const TAU: f64 = std::f64::consts::TAU;
const LN2: f64 = std::f64::consts::LN_2;

/// Hyperfine and optical constants of the storage material.
///
/// Defaults describe the praseodymium-doped crystal used throughout:
/// ground splittings (10.2, 17.3) MHz, excited splittings (4.8, 4.6) MHz,
/// excited-state T1 = 164 us and T2 = 111 us, spin inhomogeneity 25.6 kHz,
/// absorption 23 cm^-1 over 3 mm, and an effective Rabi frequency of
/// 0.34 MHz at 5.7 mW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    pub ground_splittings_mhz: [f64; 2],
    pub excited_splittings_mhz: [f64; 2],
    pub t1_excited_us: f64,
    pub t2_excited_us: f64,
    pub gamma_is_mhz: f64,
    pub alpha_per_cm: f64,
    pub length_cm: f64,
    pub rabi_ref_mhz: f64,
    pub power_ref_mw: f64,
    pub branching: [[f64; 3]; 3],
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            ground_splittings_mhz: [10.2, 17.3],
            excited_splittings_mhz: [4.8, 4.6],
            t1_excited_us: 164.0,
            t2_excited_us: 111.0,
            gamma_is_mhz: 0.0256,
            alpha_per_cm: 23.0,
            length_cm: 0.3,
            rabi_ref_mhz: 0.34,
            power_ref_mw: 5.7,
            branching: [[1.0 / 3.0; 3]; 3],
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            self.t1_excited_us,
            self.t2_excited_us,
            self.alpha_per_cm,
            self.length_cm,
            self.rabi_ref_mhz,
            self.power_ref_mw,
        ];
        if positives.iter().any(|v| !(*v > 0.0)) || self.gamma_is_mhz < 0.0 {
            return Err(Error::Validation("material constants must be positive".into()));
        }
        for row in &self.branching {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|b| *b < 0.0) {
                return Err(Error::Validation(format!(
                    "branching rows must be stochastic, got sum {sum}"
                )));
            }
        }
        Ok(())
    }

    /// Full optical depth alpha x L of the unburned line.
    pub fn full_depth(&self) -> f64 {
        self.alpha_per_cm * self.length_cm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlRole {
    /// pi_1, moves the optical excitation to the spin state.
    TransferIn,
    /// pi_2, pi_3, ..., emit (part of) the stored spin-wave.
    Readout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPulse {
    pub start_time_us: f64,
    pub duration_us: f64,
    pub power_mw: f64,
    #[serde(default)]
    pub phase_rad: f64,
    pub role: ControlRole,
}

impl ControlPulse {
    pub fn center_us(&self) -> f64 {
        self.start_time_us + self.duration_us / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_us > 0.0) || self.power_mw < 0.0 {
            return Err(Error::Validation(
                "control pulses need positive duration and non-negative power".into(),
            ));
        }
        Ok(())
    }
}

/// Lorentzian laser line of FWHM `linewidth_mhz`, realised as a Wiener
/// phase process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseNoiseModel {
    pub linewidth_mhz: f64,
    pub seed: u64,
}

impl Default for PhaseNoiseModel {
    fn default() -> Self {
        Self { linewidth_mhz: 0.0, seed: 0 }
    }
}

/// Linewidth that reproduces the observed interference visibility of 0.84
/// for 1 us time bins (V = exp(-pi dnu t_s)).
pub const LINEWIDTH_V84_MHZ: f64 = 0.0555;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SequenceFlags {
    /// Apply the optical-decoherence factor exp(-2 tau / T2) to echo
    /// intensities (off by default; the analytic efficiency formula omits it).
    #[serde(default)]
    pub apply_optical_t2: bool,
    /// When > 0, spin dephasing uses a Monte Carlo ensemble of this many
    /// detunings instead of the closed-form decay factor.
    #[serde(default)]
    pub mc_spins: usize,
}

/// Full description of one storage-and-retrieval run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSequence {
    pub input_bins: Vec<Pulse>,
    pub controls: Vec<ControlPulse>,
    pub comb: CombSpec,
    pub material: MaterialParams,
    #[serde(default)]
    pub noise: PhaseNoiseModel,
    pub time_grid: TimeGrid,
    #[serde(default)]
    pub t_w_us: f64,
    #[serde(default)]
    pub flags: SequenceFlags,
}

/// Pulse area of a resonant square control pulse, Omega scaling with the
/// square root of power.
pub fn pulse_area(power_mw: f64, duration_us: f64, material: &MaterialParams) -> f64 {
    TAU * material.rabi_ref_mhz * (power_mw / material.power_ref_mw).max(0.0).sqrt() * duration_us
}

/// Power that realises a given pulse area at fixed duration.
pub fn power_for_pulse_area(theta: f64, duration_us: f64, material: &MaterialParams) -> f64 {
    let x = theta / (TAU * material.rabi_ref_mhz * duration_us);
    material.power_ref_mw * x * x
}

/// Transfer efficiency of a resonant pulse of area theta.
pub fn transfer_efficiency(theta: f64) -> f64 {
    let s = (theta / 2.0).sin();
    s * s
}

/// Two-level echo area left after a transfer pulse of area theta:
/// A_in (eta_afc / 2) (1 + cos theta).
pub fn afc_area_vs_power(theta: f64, eta_afc: f64, input_area: f64) -> f64 {
    input_area * eta_afc / 2.0 * (1.0 + theta.cos())
}

/// Three-level efficiency for equal transfer and readout areas theta:
/// (eta_afc / 4) (1 - cos theta)^2.
pub fn three_level_vs_power(theta: f64, eta_afc: f64) -> f64 {
    let x = 1.0 - theta.cos();
    eta_afc / 4.0 * x * x
}

/// Gaussian spin-inhomogeneity decay of the echo intensity after a wait
/// `t_s_us`: exp[-(gamma t)^2 / (2 ln2 / pi^2)].
pub fn spin_decay_factor(gamma_is_mhz: f64, t_s_us: f64) -> f64 {
    let x = gamma_is_mhz * t_s_us;
    (-(x * x) * PI * PI / (2.0 * LN2)).exp()
}

fn spin_sigma(gamma_is_mhz: f64) -> f64 {
    // FWHM -> standard deviation of the Gaussian detuning distribution
    gamma_is_mhz / (8.0 * LN2).sqrt()
}

/// Mean spin phasor over a sampled Gaussian detuning ensemble.
fn spin_phasor_mean(
    gamma_is_mhz: f64,
    t_s_us: f64,
    samples: usize,
    seed: u64,
    mode: Mode,
) -> Complex64 {
    const BLOCK: usize = 1024;
    let sigma = spin_sigma(gamma_is_mhz);
    let normal = Normal::new(0.0, sigma).expect("sigma >= 0");
    let blocks = samples.div_ceil(BLOCK);
    let partials = exec::map_indexed(mode, blocks, |b| {
        let mut rng = exec::stream_rng(seed, b as u64);
        let len = BLOCK.min(samples - b * BLOCK);
        let mut acc = Complex64::new(0.0, 0.0);
        for _ in 0..len {
            let delta = normal.sample(&mut rng);
            acc += Complex64::from_polar(1.0, TAU * delta * t_s_us);
        }
        acc
    });
    partials.into_iter().sum::<Complex64>() / samples as f64
}

/// Monte Carlo oracle for [`spin_decay_factor`]: draws detunings from the
/// Gaussian of FWHM `gamma_is_mhz` and returns |mean(exp(i 2 pi delta t))|^2.
/// Deterministic per seed for any worker count.
pub fn mc_spin_decay(gamma_is_mhz: f64, t_s_us: f64, samples: usize, seed: u64) -> Result<f64> {
    mc_spin_decay_with(gamma_is_mhz, t_s_us, samples, seed, Mode::Auto)
}

pub fn mc_spin_decay_with(
    gamma_is_mhz: f64,
    t_s_us: f64,
    samples: usize,
    seed: u64,
    mode: Mode,
) -> Result<f64> {
    if samples < 1000 {
        return Err(Error::Validation(format!("need at least 1000 samples, got {samples}")));
    }
    if gamma_is_mhz < 0.0 || t_s_us < 0.0 {
        return Err(Error::Domain("gamma and t_s must be non-negative".into()));
    }
    let derived = exec::derive_seed(seed, "mc-spin-decay");
    Ok(spin_phasor_mean(gamma_is_mhz, t_s_us, samples, derived, mode).norm_sqr())
}

/// Sample the Wiener laser phase at the given (sorted) times. Increments
/// over dt have variance 2 pi dnu dt, so the field coherence over a lag t
/// is exp(-pi dnu t).
pub fn sample_laser_phase(noise: &PhaseNoiseModel, times_us: &[f64]) -> Result<Vec<f64>> {
    if times_us.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::UnsortedTimes);
    }
    if noise.linewidth_mhz < 0.0 {
        return Err(Error::Domain("linewidth must be non-negative".into()));
    }
    if noise.linewidth_mhz == 0.0 || times_us.is_empty() {
        return Ok(vec![0.0; times_us.len()]);
    }
    let mut rng = exec::stream_rng(exec::derive_seed(noise.seed, "laser-phase"), 0);
    let mut phases = Vec::with_capacity(times_us.len());
    let mut phi = 0.0;
    phases.push(phi);
    for pair in times_us.windows(2) {
        let var = TAU * noise.linewidth_mhz * (pair[1] - pair[0]);
        let step = Normal::new(0.0, var.sqrt()).expect("var >= 0");
        phi += step.sample(&mut rng);
        phases.push(phi);
    }
    Ok(phases)
}

/// Ledger entry for one stored input bin. Fractions are relative to the
/// bin's input energy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinRecord {
    pub arrival_us: f64,
    pub input_energy: f64,
    /// Two-level echo efficiency of this bin through the comb.
    pub echo_efficiency: f64,
    /// eta sin^2(theta_1/2): intensity parked in the spin state.
    pub stored_fraction: f64,
    pub spin_amplitude_re: f64,
    pub spin_amplitude_im: f64,
    /// Spin intensity left after all readouts (no-gain bookkeeping).
    pub residual_fraction: f64,
    /// Residual two-level echo intensity after control suppression.
    pub afc_echo_fraction: f64,
    pub afc_echo_time_us: f64,
}

/// One three-level emission (bin j retrieved by readout k).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmissionRecord {
    pub bin_index: usize,
    pub readout_index: usize,
    pub time_us: f64,
    pub amplitude_re: f64,
    pub amplitude_im: f64,
    /// Fraction of the bin energy emitted in this echo.
    pub intensity_fraction: f64,
    pub window_area: f64,
}

/// Per-mode bookkeeping of a storage run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeLedger {
    pub tau_us: f64,
    pub bins: Vec<BinRecord>,
    pub emissions: Vec<EmissionRecord>,
}

impl ModeLedger {
    /// Total emitted three-level intensity over total stored intensity.
    pub fn no_gain_holds(&self) -> bool {
        self.bins.iter().enumerate().all(|(j, bin)| {
            let emitted: f64 = self
                .emissions
                .iter()
                .filter(|e| e.bin_index == j)
                .map(|e| e.intensity_fraction)
                .sum();
            emitted + bin.residual_fraction <= bin.stored_fraction + 1e-12
        })
    }

    /// Sum of emitted intensity fractions for one readout, averaged over bins.
    pub fn readout_efficiency(&self, readout_index: usize) -> f64 {
        let total_in: f64 = self.bins.iter().map(|b| b.input_energy).sum();
        let emitted: f64 = self
            .emissions
            .iter()
            .filter(|e| e.readout_index == readout_index)
            .map(|e| e.window_area)
            .sum();
        emitted / total_in
    }
}

struct ControlInfo {
    center_us: f64,
    theta: f64,
    phase: f64,
    role: ControlRole,
}

/// Precomputed per-sequence data: per-bin propagated traces and extracted
/// echo waveforms, control angles and the linear-trace gate. Assembly with
/// a particular set of bin phases is then cheap and exactly linear.
pub(crate) struct SequencePlan {
    grid: TimeGrid,
    tau_us: f64,
    bins: Vec<Pulse>,
    bin_energy: Vec<f64>,
    bin_outputs: Vec<FieldTrace>,
    echo_traces: Vec<FieldTrace>,
    eta: Vec<f64>,
    controls: Vec<ControlInfo>,
    gate: Vec<f64>,
    decay_amp: Vec<Complex64>,
}

impl SequencePlan {
    pub(crate) fn new(seq: &StorageSequence) -> Result<Self> {
        seq.material.validate()?;
        seq.comb.validate()?;
        for c in &seq.controls {
            c.validate()?;
        }
        if seq.input_bins.is_empty() {
            return Err(Error::SequenceInvariant("sequence needs at least one input bin".into()));
        }
        let grid = seq.time_grid;
        let tau = seq.comb.storage_time_us();
        grid.check_nyquist_margin(seq.comb.bandwidth_mhz())?;

        let mut bins = seq.input_bins.clone();
        bins.sort_by(|a, b| a.arrival_time_us.total_cmp(&b.arrival_time_us));
        let last_bin = bins.last().expect("non-empty").arrival_time_us;

        let mut controls: Vec<ControlInfo> = seq
            .controls
            .iter()
            .map(|c| ControlInfo {
                center_us: c.center_us(),
                theta: pulse_area(c.power_mw, c.duration_us, &seq.material),
                phase: c.phase_rad,
                role: c.role,
            })
            .collect();
        controls.sort_by(|a, b| a.center_us.total_cmp(&b.center_us));
        if !controls.is_empty() {
            if controls[0].role != ControlRole::TransferIn {
                return Err(Error::SequenceInvariant(
                    "the first control pulse must be the transfer (pi_1)".into(),
                ));
            }
            if controls.iter().filter(|c| c.role == ControlRole::TransferIn).count() != 1 {
                return Err(Error::SequenceInvariant(
                    "exactly one transfer pulse is allowed".into(),
                ));
            }
            if controls[0].center_us >= last_bin + tau {
                return Err(Error::SequenceInvariant(format!(
                    "transfer at {} us must precede re-emission at {} us",
                    controls[0].center_us,
                    last_bin + tau
                )));
            }
            if controls[0].center_us <= last_bin {
                return Err(Error::SequenceInvariant(
                    "transfer must come after the input bins".into(),
                ));
            }
        }

        // one transfer function for the run, optionally with optical T2
        let sgrid = SpectralGrid::conjugate_of(&grid);
        let profile = build_comb_profile(&seq.comb, &sgrid)?;
        let mut tf = transfer_function_from_depth(&profile)?;
        if seq.flags.apply_optical_t2 {
            tf = with_optical_decoherence(&tf, grid, seq.material.t2_excited_us);
        }

        // cap the echo extraction at the bin spacing so one mode's tail
        // cannot bleed into a neighbouring output window
        let min_spacing = bins
            .windows(2)
            .map(|w| w[1].arrival_time_us - w[0].arrival_time_us)
            .fold(f64::INFINITY, f64::min);
        if min_spacing <= 0.0 {
            return Err(Error::SequenceInvariant("input bins must have distinct times".into()));
        }

        let mut bin_outputs = Vec::with_capacity(bins.len());
        let mut echo_traces = Vec::with_capacity(bins.len());
        let mut eta = Vec::with_capacity(bins.len());
        let mut bin_energy = Vec::with_capacity(bins.len());
        for bin in &bins {
            // unit-phase copy; programmed and noise phases enter at assembly
            let mut unit = *bin;
            unit.phase_rad = 0.0;
            let trace = FieldTrace::from_pulses(grid, &[unit])?;
            let energy = trace.energy();
            let out = propagate(&trace, &tf)?;
            // first-order echo waveform of this bin
            let w = (2.4 * bin.fwhm_or_width_us).min(0.9 * tau).min(min_spacing);
            let t_echo = bin.arrival_time_us + tau;
            if t_echo + w / 2.0 > grid.duration_us {
                return Err(Error::SequenceInvariant(format!(
                    "echo of the bin at {} us falls off the {} us trace",
                    bin.arrival_time_us, grid.duration_us
                )));
            }
            let (i0, i1) = (grid.index_at(t_echo - w / 2.0), grid.index_at(t_echo + w / 2.0));
            let mut echo = FieldTrace::zeros(grid);
            echo.samples[i0..=i1].copy_from_slice(&out.samples[i0..=i1]);
            eta.push(echo.energy() / energy);
            bin_energy.push(energy);
            bin_outputs.push(out);
            echo_traces.push(echo);
        }

        // amplitude gate on the linear trace: each control multiplies the
        // remaining optical coherence by cos(theta/2)
        let mut gate = vec![1.0; grid.num_points];
        for c in &controls {
            let factor = (c.theta / 2.0).cos();
            let start = grid.index_at(c.center_us);
            for g in gate.iter_mut().skip(start) {
                *g *= factor;
            }
        }

        let transfer_center = controls.first().map(|c| c.center_us).unwrap_or(0.0);
        let mc_seed = exec::derive_seed(seq.noise.seed, "mc-spin-ensemble");
        let decay_amp = controls
            .iter()
            .filter(|c| c.role == ControlRole::Readout)
            .map(|c| {
                let dt = c.center_us - transfer_center;
                if seq.flags.mc_spins > 0 {
                    spin_phasor_mean(
                        seq.material.gamma_is_mhz,
                        dt,
                        seq.flags.mc_spins.max(1000),
                        mc_seed,
                        Mode::Auto,
                    )
                } else {
                    Complex64::new(spin_decay_factor(seq.material.gamma_is_mhz, dt).sqrt(), 0.0)
                }
            })
            .collect();

        Ok(Self {
            grid,
            tau_us: tau,
            bins,
            bin_energy,
            bin_outputs,
            echo_traces,
            eta,
            controls,
            gate,
            decay_amp,
        })
    }

    fn transfer(&self) -> Option<&ControlInfo> {
        self.controls.first().filter(|c| c.role == ControlRole::TransferIn)
    }

    fn readouts(&self) -> impl Iterator<Item = (usize, &ControlInfo)> {
        self.controls.iter().filter(|c| c.role == ControlRole::Readout).enumerate()
    }

    /// Amplitude coefficient of emission (bin j, readout k), excluding the
    /// bin phase factor.
    fn emission_coefficient(&self, readout_k: usize) -> Complex64 {
        let transfer = self.transfer().expect("emissions need a transfer pulse");
        let mut amp = Complex64::from_polar((transfer.theta / 2.0).sin(), -transfer.phase);
        for (k, c) in self.readouts() {
            match k.cmp(&readout_k) {
                std::cmp::Ordering::Less => amp *= (c.theta / 2.0).cos(),
                std::cmp::Ordering::Equal => {
                    amp *= Complex64::from_polar((c.theta / 2.0).sin(), c.phase);
                    amp *= self.decay_amp[k];
                }
                std::cmp::Ordering::Greater => {}
            }
        }
        amp
    }

    /// Emission time of bin `j` under readout `k`: the frozen evolution
    /// resumes at the readout, preserving bin order.
    fn emission_time(&self, j: usize, readout_k: usize) -> f64 {
        let transfer = self.transfer().expect("emissions need a transfer pulse");
        let readout = self
            .readouts()
            .find(|(k, _)| *k == readout_k)
            .map(|(_, c)| c)
            .expect("readout exists");
        self.bins[j].arrival_time_us + self.tau_us + (readout.center_us - transfer.center_us)
    }

    /// Deterministic full-trace contribution of bin `j` at unit bin phase:
    /// the gated linear output plus every three-level emission. The output
    /// trace is an exactly linear combination of these.
    pub(crate) fn bin_contribution(&self, j: usize) -> FieldTrace {
        let mut w = FieldTrace::zeros(self.grid);
        for (i, s) in self.bin_outputs[j].samples.iter().enumerate() {
            w.samples[i] = self.gate[i] * s;
        }
        if let Some(transfer) = self.transfer() {
            let dt = self.grid.dt_us();
            for (k, c) in self.readouts() {
                let coeff = self.emission_coefficient(k);
                let shift = ((c.center_us - transfer.center_us) / dt).round() as i64;
                w.accumulate_shifted(&self.echo_traces[j], shift, coeff);
            }
        }
        w
    }

    /// Assemble the output trace and ledger for given per-bin extra phases
    /// (programmed bin phase + sampled laser phase).
    pub(crate) fn assemble(&self, bin_phases: &[f64]) -> Result<(FieldTrace, ModeLedger)> {
        if bin_phases.len() != self.bins.len() {
            return Err(Error::SequenceInvariant("one phase per bin required".into()));
        }
        let mut trace = FieldTrace::zeros(self.grid);
        let mut ledger = ModeLedger { tau_us: self.tau_us, bins: Vec::new(), emissions: Vec::new() };

        for (j, bin) in self.bins.iter().enumerate() {
            let pf = Complex64::from_polar(1.0, bin.phase_rad + bin_phases[j]);
            let contribution = self.bin_contribution(j);
            for (i, s) in contribution.samples.iter().enumerate() {
                trace.samples[i] += pf * s;
            }

            let transfer = self.transfer();
            let theta1 = transfer.map(|c| c.theta).unwrap_or(0.0);
            let sin1 = (theta1 / 2.0).sin();
            let stored = self.eta[j] * sin1 * sin1;
            let spin_amp = transfer
                .map(|c| {
                    Complex64::from_polar(self.eta[j].sqrt() * sin1, bin.phase_rad + bin_phases[j] - c.phase)
                })
                .unwrap_or_default();

            let echo_time = bin.arrival_time_us + self.tau_us;
            let gate_at_echo = self.gate[self.grid.index_at(echo_time)];
            ledger.bins.push(BinRecord {
                arrival_us: bin.arrival_time_us,
                input_energy: self.bin_energy[j],
                echo_efficiency: self.eta[j],
                stored_fraction: stored,
                spin_amplitude_re: spin_amp.re,
                spin_amplitude_im: spin_amp.im,
                residual_fraction: 0.0,
                afc_echo_fraction: self.eta[j] * gate_at_echo * gate_at_echo,
                afc_echo_time_us: echo_time,
            });

            if transfer.is_none() {
                continue;
            }
            let mut residual_amp = sin1;
            for (k, c) in self.readouts() {
                let coeff = self.emission_coefficient(k) * pf;
                let time = self.emission_time(j, k);
                // relative emitted amplitude: sqrt(eta) already inside the
                // echo waveform, mirror it for the ledger
                let rel = coeff * self.eta[j].sqrt();
                let frac = rel.norm_sqr();
                ledger.emissions.push(EmissionRecord {
                    bin_index: j,
                    readout_index: k,
                    time_us: time,
                    amplitude_re: rel.re,
                    amplitude_im: rel.im,
                    intensity_fraction: frac,
                    window_area: frac * self.bin_energy[j],
                });
                residual_amp *= (c.theta / 2.0).cos();
            }
            ledger.bins[j].residual_fraction = self.eta[j] * residual_amp * residual_amp;
        }
        Ok((trace, ledger))
    }
}

/// Multiply the impulse response by exp(-t / T2): homogeneous optical
/// decoherence, which scales an echo at delay n tau by exp(-n tau / T2) in
/// amplitude.
fn with_optical_decoherence(tf: &TransferFunction, grid: TimeGrid, t2_us: f64) -> TransferFunction {
    let mut h = tf.impulse_response();
    let n = h.len();
    let dt = grid.dt_us();
    for (i, v) in h.iter_mut().enumerate().take(n / 2) {
        *v *= (-(i as f64) * dt / t2_us).exp();
    }
    fft_inplace(&mut h);
    TransferFunction { grid: tf.grid, response: crate::fft::fft_to_natural_order(&h) }
}

/// Run the full storage sequence: absorb the input bins, transfer to the
/// spin state, wait, and re-emit through the readout train. Returns the
/// output trace (transmitted pulses, residual two-level echo and the
/// three-level echoes) plus the per-mode ledger.
pub fn run_storage_sequence(seq: &StorageSequence) -> Result<(FieldTrace, ModeLedger)> {
    let plan = SequencePlan::new(seq)?;
    let times: Vec<f64> = plan.bins.iter().map(|b| b.arrival_time_us).collect();
    let phases = sample_laser_phase(&seq.noise, &times)?;
    plan.assemble(&phases)
}

/// Which phase the interference scan sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepTarget {
    #[default]
    LateBin,
    SecondReadout,
}

/// Result of an interference scan over bin (or readout) phases.
#[derive(Debug, Clone, Serialize)]
pub struct FringeScan {
    pub phases: Vec<f64>,
    pub mean_area: Vec<f64>,
    pub sem: Vec<f64>,
    pub visibility: f64,
    pub visibility_sigma: f64,
    pub fit: FitReport,
}

/// Run the two-bin/two-readout sequence for every phase, integrate the
/// central output window where the two partial readouts overlap, and fit
/// the fringe area(phi) = A (1 + V cos(phi - phi0)).
pub fn interference_visibility(
    seq_template: &StorageSequence,
    phases: &[f64],
    trials_per_phase: usize,
) -> Result<FringeScan> {
    interference_visibility_with(
        seq_template,
        phases,
        trials_per_phase,
        0.5,
        SweepTarget::LateBin,
        Mode::Auto,
    )
}

pub fn interference_visibility_with(
    seq_template: &StorageSequence,
    phases: &[f64],
    trials_per_phase: usize,
    window_us: f64,
    target: SweepTarget,
    mode: Mode,
) -> Result<FringeScan> {
    if trials_per_phase == 0 {
        return Err(Error::Validation("need at least one trial per phase".into()));
    }
    if seq_template.input_bins.len() != 2 {
        return Err(Error::SequenceInvariant("interference needs exactly two input bins".into()));
    }
    let plan = SequencePlan::new(seq_template)?;
    let readouts: Vec<usize> = plan.readouts().map(|(k, _)| k).collect();
    if readouts.len() != 2 {
        return Err(Error::SequenceInvariant("interference needs exactly two readouts".into()));
    }
    let t_lag = plan.bins[1].arrival_time_us - plan.bins[0].arrival_time_us;
    let t_central_a = plan.emission_time(1, readouts[0]);
    let t_central_b = plan.emission_time(0, readouts[1]);
    if (t_central_a - t_central_b).abs() > plan.grid.dt_us() / 2.0 {
        return Err(Error::SequenceInvariant(format!(
            "readout spacing must equal the bin spacing for the central window \
             (emissions at {t_central_a} and {t_central_b} us)"
        )));
    }

    // central-window Gram matrix of the two per-bin contribution traces:
    // the assembled trace is exactly c_early W_early + c_late W_late, so
    // the windowed area is a quadratic form in the bin phase factors
    let dt = plan.grid.dt_us();
    let (i0, i1) = (
        plan.grid.index_at(t_central_a - window_us / 2.0),
        plan.grid.index_at(t_central_a + window_us / 2.0),
    );
    let early_w = plan.bin_contribution(0);
    let late_w = plan.bin_contribution(1);
    let late = &late_w.samples[i0..=i1];
    let early = &early_w.samples[i0..=i1];
    let g_ll: f64 = late.iter().map(|v| v.norm_sqr()).sum::<f64>() * dt;
    let g_ee: f64 = early.iter().map(|v| v.norm_sqr()).sum::<f64>() * dt;
    let g_le: Complex64 =
        late.iter().zip(early).map(|(a, b)| a * b.conj()).sum::<Complex64>() * dt;

    // deterministic relative phase between the two contributions from the
    // programmed bin phases
    let static_late = Complex64::from_polar(1.0, plan.bins[1].phase_rad);
    let static_early = Complex64::from_polar(1.0, plan.bins[0].phase_rad);

    let linewidth = seq_template.noise.linewidth_mhz;
    let sigma = (TAU * linewidth * t_lag).max(0.0).sqrt();
    let derived = exec::derive_seed(seq_template.noise.seed, "interference-visibility");
    let n_phases = phases.len();
    let areas: Vec<f64> = exec::map_indexed(mode, n_phases * trials_per_phase, |flat| {
        let (pi, trial) = (flat / trials_per_phase, flat % trials_per_phase);
        let mut rng = exec::stream_rng(derived, flat as u64);
        let noise_phase = if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("sigma > 0").sample(&mut rng)
        } else {
            0.0
        };
        let _ = trial;
        let (c_late, c_early) = match target {
            SweepTarget::LateBin => (
                static_late * Complex64::from_polar(1.0, phases[pi] + noise_phase),
                static_early,
            ),
            SweepTarget::SecondReadout => (
                static_late * Complex64::from_polar(1.0, noise_phase),
                static_early * Complex64::from_polar(1.0, phases[pi]),
            ),
        };
        g_ll + g_ee + 2.0 * (c_late * c_early.conj() * g_le).re
    });

    let mut mean_area = Vec::with_capacity(n_phases);
    let mut sem = Vec::with_capacity(n_phases);
    for pi in 0..n_phases {
        let slice = &areas[pi * trials_per_phase..(pi + 1) * trials_per_phase];
        let mean = slice.iter().sum::<f64>() / trials_per_phase as f64;
        let var = slice.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
            / trials_per_phase.max(2) as f64;
        mean_area.push(mean);
        sem.push((var / trials_per_phase as f64).sqrt());
    }
    let floor = 1e-6 * mean_area.iter().cloned().fold(f64::MIN, f64::max).abs().max(1e-12);
    let sigmas: Vec<f64> = sem.iter().map(|s| s.max(floor)).collect();
    let fit = fit_fringe(phases, &mean_area, &sigmas)?;
    if fit.value("area").map(|a| a.abs()).unwrap_or(0.0) < 10.0 * floor {
        return Err(Error::FitFailure("fringe amplitude below the noise floor".into()));
    }
    Ok(FringeScan {
        phases: phases.to_vec(),
        mean_area,
        sem,
        visibility: fit.value("visibility").expect("fitted"),
        visibility_sigma: fit.sigma("visibility").expect("fitted"),
        fit,
    })
}
