//! Linear pulse propagation through an optical-depth spectrum.
//!
//! A weak pulse through an absorber of depth d(nu) is a causal linear
//! filter: |H(nu)| = exp(-d(nu)/2) with the phase fixed by causality as the
//! Kramers-Kronig (Hilbert) partner of the log magnitude. The discrete
//! construction uses the cepstral (analytic-signal) method on the periodic
//! grid, which makes the impulse response minimum phase: its energy at
//! negative times is at the numerical floor. Echoes of a comb then appear
//! at multiples of 1/delta with no acausal precursors.

use crate::comb::OpticalDepthProfile;
use crate::error::{Error, Result};
use crate::exec::{self, Mode};
use crate::fft::{fft_inplace, fft_to_natural_order, ifft_inplace, natural_to_fft_order};
use crate::grid::{SpectralGrid, TimeGrid};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

pub const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseShape {
    Gaussian,
    Square,
}

/// A complex envelope pulse. `fwhm_or_width_us` is the intensity FWHM for
/// Gaussian pulses and the full width for square ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub shape: PulseShape,
    pub fwhm_or_width_us: f64,
    pub arrival_time_us: f64,
    #[serde(default)]
    pub carrier_detuning_mhz: f64,
    #[serde(default)]
    pub phase_rad: f64,
    pub amplitude: f64,
}

impl Pulse {
    pub fn gaussian(fwhm_us: f64, arrival_time_us: f64) -> Self {
        Self {
            shape: PulseShape::Gaussian,
            fwhm_or_width_us: fwhm_us,
            arrival_time_us,
            carrier_detuning_mhz: 0.0,
            phase_rad: 0.0,
            amplitude: 1.0,
        }
    }

    pub fn with_phase(mut self, phase_rad: f64) -> Self {
        self.phase_rad = phase_rad;
        self
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    /// Complex envelope at time `t`.
    pub fn envelope(&self, t_us: f64) -> Complex64 {
        let dt = t_us - self.arrival_time_us;
        let mag = match self.shape {
            PulseShape::Gaussian => {
                // intensity FWHM = fwhm_or_width_us
                let w = self.fwhm_or_width_us;
                (-2.0 * LN2 * dt * dt / (w * w)).exp()
            }
            PulseShape::Square => {
                if dt.abs() <= self.fwhm_or_width_us / 2.0 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        let phase = self.phase_rad + 2.0 * std::f64::consts::PI * self.carrier_detuning_mhz * dt;
        self.amplitude * mag * Complex64::from_polar(1.0, phase)
    }

    /// Analytic pulse energy, integral of |envelope|^2 dt.
    pub fn energy(&self) -> f64 {
        let a2 = self.amplitude * self.amplitude;
        match self.shape {
            PulseShape::Gaussian => {
                a2 * self.fwhm_or_width_us * (std::f64::consts::PI / (4.0 * LN2)).sqrt()
            }
            PulseShape::Square => a2 * self.fwhm_or_width_us,
        }
    }
}

/// Complex optical envelope sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrace {
    pub grid: TimeGrid,
    pub samples: Vec<Complex64>,
}

impl FieldTrace {
    pub fn zeros(grid: TimeGrid) -> Self {
        Self { grid, samples: vec![Complex64::new(0.0, 0.0); grid.num_points] }
    }

    /// Synthesise a trace from pulses. Pulses must stay clear of the trace
    /// edges (>= 10% of the duration) so the periodic propagation never
    /// wraps energy around.
    pub fn from_pulses(grid: TimeGrid, pulses: &[Pulse]) -> Result<Self> {
        let margin = 0.1 * grid.duration_us;
        for p in pulses {
            if !(p.fwhm_or_width_us > 0.0) {
                return Err(Error::Validation("pulse width must be positive".into()));
            }
            if !p.phase_rad.is_finite() {
                return Err(Error::Validation("pulse phase must be finite".into()));
            }
            let reach = 2.0 * p.fwhm_or_width_us;
            if p.arrival_time_us - reach < margin
                || p.arrival_time_us + reach > grid.duration_us - margin
            {
                return Err(Error::Validation(format!(
                    "pulse at {} us violates the 10% edge padding of a {} us trace",
                    p.arrival_time_us, grid.duration_us
                )));
            }
        }
        let mut trace = Self::zeros(grid);
        for p in pulses {
            for (i, s) in trace.samples.iter_mut().enumerate() {
                *s += p.envelope(grid.time_us(i));
            }
        }
        Ok(trace)
    }

    /// Total energy, sum of |E|^2 dt.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * self.grid.dt_us()
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.norm_sqr()).collect()
    }

    /// Energy between two times (inclusive sample range).
    pub fn energy_in(&self, t0_us: f64, t1_us: f64) -> f64 {
        let (i0, i1) = (self.grid.index_at(t0_us), self.grid.index_at(t1_us));
        self.samples[i0..=i1].iter().map(|s| s.norm_sqr()).sum::<f64>() * self.grid.dt_us()
    }

    /// Time of the intensity maximum within [t0, t1].
    pub fn peak_time_in(&self, t0_us: f64, t1_us: f64) -> f64 {
        let (i0, i1) = (self.grid.index_at(t0_us), self.grid.index_at(t1_us));
        let k = (i0..=i1)
            .max_by(|a, b| self.samples[*a].norm_sqr().total_cmp(&self.samples[*b].norm_sqr()))
            .unwrap_or(i0);
        self.grid.time_us(k)
    }

    /// Add `other` shifted by an integer number of samples, scaled by `amp`.
    pub fn accumulate_shifted(&mut self, other: &FieldTrace, shift_samples: i64, amp: Complex64) {
        let n = self.samples.len() as i64;
        for (i, s) in other.samples.iter().enumerate() {
            if s.norm_sqr() == 0.0 {
                continue;
            }
            let j = i as i64 + shift_samples;
            if (0..n).contains(&j) {
                self.samples[j as usize] += amp * s;
            }
        }
    }
}

/// Complex amplitude response H(nu) on the natural spectral axis.
#[derive(Debug, Clone)]
pub struct TransferFunction {
    pub grid: SpectralGrid,
    pub response: Vec<Complex64>,
}

impl TransferFunction {
    /// Unit response (vacuum) on the conjugate grid of `time`.
    pub fn identity(time: &TimeGrid) -> Self {
        let grid = SpectralGrid::conjugate_of(time);
        Self { grid, response: vec![Complex64::new(1.0, 0.0); grid.num_points] }
    }

    /// Impulse response h[n] = IFFT(H), time-ordered like a [`FieldTrace`].
    pub fn impulse_response(&self) -> Vec<Complex64> {
        let mut h = natural_to_fft_order(&self.response);
        ifft_inplace(&mut h);
        h
    }
}

/// Build the causal (minimum-phase) transfer function of a depth profile:
/// H = exp(-d/2 + i phi) with phi the discrete Hilbert transform of -d/2.
pub fn transfer_function_from_depth(profile: &OpticalDepthProfile) -> Result<TransferFunction> {
    if profile.depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::Validation("depth must be finite and non-negative".into()));
    }
    let n = profile.grid.num_points;
    let log_mag_fft = natural_to_fft_order(&profile.depth);
    let mut cepstrum: Vec<Complex64> =
        log_mag_fft.iter().map(|d| Complex64::new(-d / 2.0, 0.0)).collect();
    ifft_inplace(&mut cepstrum);
    // Fold the anticausal half onto the causal one: this picks the phase
    // that makes the impulse response minimum phase.
    for c in cepstrum.iter_mut().take(n / 2).skip(1) {
        *c *= 2.0;
    }
    for c in cepstrum.iter_mut().skip(n / 2 + 1) {
        *c = Complex64::new(0.0, 0.0);
    }
    fft_inplace(&mut cepstrum);
    let response_fft: Vec<Complex64> = cepstrum.iter().map(|l| l.exp()).collect();
    Ok(TransferFunction {
        grid: profile.grid,
        response: fft_to_natural_order(&response_fft),
    })
}

/// Filter a trace through a transfer function. The spectral grid must be
/// the FFT conjugate of the time grid.
pub fn propagate(input: &FieldTrace, tf: &TransferFunction) -> Result<FieldTrace> {
    let conj = SpectralGrid::conjugate_of(&input.grid);
    if tf.grid.num_points != conj.num_points
        || (tf.grid.span_mhz - conj.span_mhz).abs() > 1e-9 * conj.span_mhz
        || tf.grid.center_mhz.abs() > 1e-9 * conj.span_mhz
    {
        return Err(Error::GridMismatch(format!(
            "transfer function on {} points spanning {} MHz cannot filter a trace needing {} points spanning {} MHz",
            tf.grid.num_points, tf.grid.span_mhz, conj.num_points, conj.span_mhz
        )));
    }
    let response_fft = natural_to_fft_order(&tf.response);
    let mut spectrum = input.samples.clone();
    fft_inplace(&mut spectrum);
    for (s, h) in spectrum.iter_mut().zip(&response_fft) {
        *s *= h;
    }
    ifft_inplace(&mut spectrum);
    Ok(FieldTrace { grid: input.grid, samples: spectrum })
}

/// Integrated intensity and peak of one detection window.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EchoWindow {
    pub center_us: f64,
    pub width_us: f64,
    pub area: f64,
    pub peak: f64,
}

/// Windowed-area measurements on a trace. `reference_area` records the
/// total energy of the analysed trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EchoReport {
    pub windows: Vec<EchoWindow>,
    pub reference_area: f64,
}

/// Integrate |E|^2 over windows centred at `expected_times`, all of the
/// same width. Windows must be disjoint and inside the trace.
pub fn detect_echoes(trace: &FieldTrace, expected_times: &[f64], window_us: f64) -> Result<EchoReport> {
    if !(window_us > 0.0) {
        return Err(Error::Validation("window width must be positive".into()));
    }
    let mut sorted = expected_times.to_vec();
    sorted.sort_by(f64::total_cmp);
    for pair in sorted.windows(2) {
        if pair[1] - pair[0] < window_us {
            return Err(Error::OverlappingWindows { first_us: pair[0], second_us: pair[1] });
        }
    }
    let mut windows = Vec::with_capacity(expected_times.len());
    for &center in expected_times {
        let (t0, t1) = (center - window_us / 2.0, center + window_us / 2.0);
        if t0 < 0.0 || t1 > trace.grid.duration_us {
            return Err(Error::WindowOutOfRange(format!(
                "window [{t0}, {t1}] us lies outside the {} us trace",
                trace.grid.duration_us
            )));
        }
        let (i0, i1) = (trace.grid.index_at(t0), trace.grid.index_at(t1));
        let area =
            trace.samples[i0..=i1].iter().map(|s| s.norm_sqr()).sum::<f64>() * trace.grid.dt_us();
        let peak = trace.samples[i0..=i1].iter().map(|s| s.norm_sqr()).fold(0.0, f64::max);
        windows.push(EchoWindow { center_us: center, width_us: window_us, area, peak });
    }
    Ok(EchoReport { windows, reference_area: trace.energy() })
}

/// Echo efficiency: area of the last window of `output` (the echo of
/// interest) over the first window of `reference` (the input pulse measured
/// through a transparent medium).
pub fn echo_efficiency(output: &EchoReport, reference: &EchoReport) -> Result<f64> {
    let echo = output.windows.last().map(|w| w.area).unwrap_or(0.0);
    let input = reference.windows.first().map(|w| w.area).unwrap_or(0.0);
    if !(input > 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok(echo / input)
}

/// Photon-count histogram accumulated over trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountHistogram {
    pub t_us: Vec<f64>,
    pub counts: Vec<u64>,
    pub num_trials: usize,
    pub expected_total_per_trial: f64,
}

/// Scale the trace intensity so its energy maps to `photons_per_pulse x
/// 10^{-OD}` expected detections per trial, then draw Poisson counts per
/// time bin for every trial. Each trial uses its own derived RNG stream, so
/// the histogram is reproducible for any worker count.
pub fn poisson_sample(
    trace: &FieldTrace,
    photons_per_pulse: f64,
    attenuation_od: f64,
    num_trials: usize,
    seed: u64,
) -> Result<CountHistogram> {
    poisson_sample_with(trace, photons_per_pulse, attenuation_od, num_trials, seed, Mode::Auto)
}

pub fn poisson_sample_with(
    trace: &FieldTrace,
    photons_per_pulse: f64,
    attenuation_od: f64,
    num_trials: usize,
    seed: u64,
    mode: Mode,
) -> Result<CountHistogram> {
    if !(photons_per_pulse > 0.0) {
        return Err(Error::Validation("photons_per_pulse must be positive".into()));
    }
    if num_trials == 0 {
        return Err(Error::Validation("num_trials must be at least 1".into()));
    }
    let energy = trace.energy();
    let expected_total = photons_per_pulse * 10f64.powf(-attenuation_od);
    let n = trace.samples.len();
    // cumulative distribution of the expected counts over bins
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for s in &trace.samples {
        acc += s.norm_sqr();
        cdf.push(acc);
    }
    let total_weight = acc;
    if energy == 0.0 || total_weight == 0.0 || expected_total == 0.0 {
        return Ok(CountHistogram {
            t_us: trace.grid.times().collect(),
            counts: vec![0; n],
            num_trials,
            expected_total_per_trial: expected_total,
        });
    }
    for c in cdf.iter_mut() {
        *c /= total_weight;
    }
    // A trial is an inhomogeneous Poisson record: a Poisson-distributed
    // total placed by inverse CDF over the bins.
    let derived = exec::derive_seed(seed, "poisson-sample");
    let per_trial: Vec<Vec<u32>> = exec::map_indexed(mode, num_trials, |trial| {
        let mut rng = exec::stream_rng(derived, trial as u64);
        let total = Poisson::new(expected_total)
            .expect("expected_total > 0")
            .sample(&mut rng) as usize;
        let mut events = Vec::with_capacity(total);
        for _ in 0..total {
            let u: f64 = rng.gen();
            let bin = cdf.partition_point(|c| *c < u).min(n - 1);
            events.push(bin as u32);
        }
        events
    });
    let mut counts = vec![0u64; n];
    for events in &per_trial {
        for &b in events {
            counts[b as usize] += 1;
        }
    }
    Ok(CountHistogram {
        t_us: trace.grid.times().collect(),
        counts,
        num_trials,
        expected_total_per_trial: expected_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comb::{build_comb_profile, CombSpec, OpticalDepthProfile};
    use approx::assert_relative_eq;

    fn fig2a_setup() -> (TimeGrid, TransferFunction, FieldTrace) {
        let tg = TimeGrid::new(64.0, 2048).unwrap();
        let sg = SpectralGrid::conjugate_of(&tg);
        let comb = CombSpec::new(0.5, 0.125, 5, 4.12, 0.45).unwrap();
        let profile = build_comb_profile(&comb, &sg).unwrap();
        let tf = transfer_function_from_depth(&profile).unwrap();
        let input =
            FieldTrace::from_pulses(tg, &[Pulse::gaussian(0.84, 10.0)]).unwrap();
        (tg, tf, input)
    }

    #[test]
    fn vacuum_is_identity() {
        let tg = TimeGrid::new(32.0, 1024).unwrap();
        let sg = SpectralGrid::conjugate_of(&tg);
        let profile = OpticalDepthProfile::uniform(sg, 0.0).unwrap();
        let tf = transfer_function_from_depth(&profile).unwrap();
        assert!(tf.response.iter().all(|h| (h - Complex64::new(1.0, 0.0)).norm() < 1e-12));
        let input = FieldTrace::from_pulses(tg, &[Pulse::gaussian(0.8, 10.0)]).unwrap();
        let out = propagate(&input, &tf).unwrap();
        let diff: f64 = input
            .samples
            .iter()
            .zip(&out.samples)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        assert!(diff / input.energy() < 1e-24);
    }

    #[test]
    fn flat_background_is_beer_lambert() {
        let tg = TimeGrid::new(32.0, 1024).unwrap();
        let sg = SpectralGrid::conjugate_of(&tg);
        let profile = OpticalDepthProfile::uniform(sg, 0.45).unwrap();
        let tf = transfer_function_from_depth(&profile).unwrap();
        for h in &tf.response {
            assert_relative_eq!(h.norm_sqr(), (-0.45f64).exp(), epsilon = 1e-9);
            assert!(h.im.abs() < 1e-9);
        }
    }

    #[test]
    fn single_line_phase_is_odd() {
        let tg = TimeGrid::new(64.0, 2048).unwrap();
        let sg = SpectralGrid::conjugate_of(&tg);
        let single = CombSpec::new(1.0, 0.25, 1, 1.0, 0.0).unwrap();
        let profile = build_comb_profile(&single, &sg).unwrap();
        let tf = transfer_function_from_depth(&profile).unwrap();
        let n = sg.num_points;
        let c = n / 2; // line centre on the grid
        for k in 1..n / 8 {
            let above = tf.response[c + k].arg();
            let below = tf.response[c - k].arg();
            assert!(
                (above + below).abs() < 1e-3,
                "phase not odd at +-{} bins: {above} vs {below}",
                k
            );
        }
    }

    #[test]
    fn impulse_response_is_causal() {
        let (_, tf, _) = fig2a_setup();
        let h = tf.impulse_response();
        let n = h.len();
        let total: f64 = h.iter().map(|v| v.norm_sqr()).sum();
        // upper half of the FFT index range is negative time
        let acausal: f64 = h[n / 2..].iter().map(|v| v.norm_sqr()).sum();
        assert!(acausal / total < 1e-3, "acausal fraction {}", acausal / total);
    }

    #[test]
    fn comb_echo_timing_and_efficiency() {
        let (tg, tf, input) = fig2a_setup();
        let out = propagate(&input, &tf).unwrap();
        assert!(out.energy() <= input.energy());

        // first echo centred 2.00 us after the transmitted pulse
        let t_in = out.peak_time_in(9.0, 11.0);
        let t_echo = out.peak_time_in(11.0, 13.0);
        assert!((t_echo - t_in - 2.0).abs() <= tg.dt_us() + 1e-12);

        // area ratio within 15% of Eq. 2
        let reference = propagate(&input, &TransferFunction::identity(&tg)).unwrap();
        let out_report = detect_echoes(&out, &[10.0, 12.0], 2.0).unwrap();
        let ref_report = detect_echoes(&reference, &[10.0], 2.0).unwrap();
        let eta = echo_efficiency(&out_report, &ref_report).unwrap();
        assert_relative_eq!(eta, 0.156, max_relative = 0.15);
    }

    #[test]
    fn second_order_echo_is_weaker() {
        let tg = TimeGrid::new(64.0, 2048).unwrap();
        let sg = SpectralGrid::conjugate_of(&tg);
        let comb = CombSpec::new(1.0, 0.25, 5, 4.12, 0.45).unwrap();
        let profile = build_comb_profile(&comb, &sg).unwrap();
        let tf = transfer_function_from_depth(&profile).unwrap();
        // short pulse so its bandwidth spans several teeth
        let input = FieldTrace::from_pulses(tg, &[Pulse::gaussian(0.2, 10.0)]).unwrap();
        let out = propagate(&input, &tf).unwrap();
        let report = detect_echoes(&out, &[11.0, 12.0], 0.9).unwrap();
        let (first, second) = (report.windows[0].area, report.windows[1].area);
        let peak1 = out.peak_time_in(10.6, 11.4);
        assert!((peak1 - 11.0).abs() <= tg.dt_us());
        assert!(second < first, "second-order echo {second} should be below first {first}");
        assert!(second > 0.0);
    }

    #[test]
    fn matches_time_domain_convolution() {
        // frequency-domain engine vs direct circular convolution with the
        // impulse response
        let tg = TimeGrid::new(32.0, 512).unwrap();
        let sg = SpectralGrid::conjugate_of(&tg);
        let comb = CombSpec::new(1.0, 0.5, 2, 2.0, 0.2).unwrap();
        let profile = build_comb_profile(&comb, &sg).unwrap();
        let tf = transfer_function_from_depth(&profile).unwrap();
        let input = FieldTrace::from_pulses(tg, &[Pulse::gaussian(0.9, 8.0)]).unwrap();
        let fast = propagate(&input, &tf).unwrap();

        let h = tf.impulse_response();
        let n = tg.num_points;
        let mut slow = vec![Complex64::new(0.0, 0.0); n];
        for (i, s) in slow.iter_mut().enumerate() {
            for (k, hk) in h.iter().enumerate() {
                *s += hk * input.samples[(n + i - k) % n];
            }
        }
        let num: f64 = fast.samples.iter().zip(&slow).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = slow.iter().map(|v| v.norm_sqr()).sum();
        assert!((num / den).sqrt() < 1e-6);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let (_, tf, _) = fig2a_setup();
        let other = FieldTrace::zeros(TimeGrid::new(32.0, 1024).unwrap());
        assert!(matches!(propagate(&other, &tf), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn window_bookkeeping() {
        let tg = TimeGrid::new(32.0, 1024).unwrap();
        let p = Pulse::gaussian(0.6, 10.0);
        let trace = FieldTrace::from_pulses(tg, &[p, Pulse::gaussian(0.6, 20.0)]).unwrap();
        let report = detect_echoes(&trace, &[10.0, 20.0], 4.0).unwrap();
        assert_relative_eq!(report.windows[0].area, p.energy(), max_relative = 1e-3);
        assert_relative_eq!(report.windows[0].area, report.windows[1].area, max_relative = 1e-3);
        assert!(matches!(
            detect_echoes(&trace, &[10.0, 11.0], 4.0),
            Err(Error::OverlappingWindows { .. })
        ));
        assert!(matches!(
            detect_echoes(&trace, &[1.0], 4.0),
            Err(Error::WindowOutOfRange(_))
        ));
        let empty = detect_echoes(&FieldTrace::zeros(tg), &[10.0], 4.0).unwrap();
        assert!(matches!(echo_efficiency(&report, &empty), Err(Error::ZeroReference)));
    }

    #[test]
    fn linearity_and_passivity() {
        let (tg, tf, _) = fig2a_setup();
        let x = FieldTrace::from_pulses(tg, &[Pulse::gaussian(0.84, 10.0)]).unwrap();
        let y =
            FieldTrace::from_pulses(tg, &[Pulse::gaussian(0.5, 12.0).with_phase(1.0)]).unwrap();
        let (a, b) = (Complex64::new(0.7, 0.2), Complex64::new(-0.3, 1.1));
        let mut combo = FieldTrace::zeros(tg);
        for i in 0..tg.num_points {
            combo.samples[i] = a * x.samples[i] + b * y.samples[i];
        }
        let lhs = propagate(&combo, &tf).unwrap();
        let (px, py) = (propagate(&x, &tf).unwrap(), propagate(&y, &tf).unwrap());
        let num: f64 = (0..tg.num_points)
            .map(|i| (lhs.samples[i] - a * px.samples[i] - b * py.samples[i]).norm_sqr())
            .sum();
        let den: f64 = lhs.samples.iter().map(|v| v.norm_sqr()).sum();
        assert!((num / den).sqrt() < 1e-10);
        assert!(lhs.energy() <= combo.energy());
    }

    #[test]
    fn poisson_scaling_and_determinism() {
        let tg = TimeGrid::new(32.0, 256).unwrap();
        let trace = FieldTrace::from_pulses(tg, &[Pulse::gaussian(2.0, 16.0)]).unwrap();
        // 2e4 photons through OD 6.5 leaves ~6.3e-3 expected counts/trial
        let h = poisson_sample(&trace, 2e4, 6.5, 1000, 1).unwrap();
        assert_relative_eq!(h.expected_total_per_trial, 6.3e-3, max_relative = 0.01);

        let h1 = poisson_sample(&trace, 100.0, 0.0, 2000, 42).unwrap();
        let h2 = poisson_sample_with(&trace, 100.0, 0.0, 2000, 42, Mode::Sequential).unwrap();
        assert_eq!(h1.counts, h2.counts);

        let total: u64 = h1.counts.iter().sum();
        let expected = 100.0 * 2000.0;
        assert!((total as f64 - expected).abs() < 5.0 * expected.sqrt());

        // zero expected photons: all-zero histogram
        let h0 = poisson_sample(&trace, 1e-300, 300.0, 10, 0).unwrap();
        assert!(h0.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn poisson_bin_means_match() {
        let tg = TimeGrid::new(16.0, 256).unwrap();
        let trace = FieldTrace::from_pulses(tg, &[Pulse::gaussian(1.5, 8.0)]).unwrap();
        let trials = 200_000;
        let h = poisson_sample(&trace, 2.0, 0.0, trials, 7).unwrap();
        let weights: Vec<f64> = trace.intensity();
        let wsum: f64 = weights.iter().sum();
        for (i, &c) in h.counts.iter().enumerate() {
            let mu = 2.0 * weights[i] / wsum;
            if mu * trials as f64 > 50.0 {
                let sigma = (mu * trials as f64).sqrt();
                assert!(
                    (c as f64 - mu * trials as f64).abs() < 5.0 * sigma,
                    "bin {i}: {c} vs {}",
                    mu * trials as f64
                );
            }
        }
    }
}
