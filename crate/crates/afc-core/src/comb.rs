//! Comb geometry, the analytic echo-efficiency formulas, parameter
//! inference and comb design.
//!
//! A comb of Gaussian teeth with spacing `delta` (MHz), tooth FWHM `gamma`,
//! peak depth `d` on background `d0` stores a pulse and re-emits it after
//! tau = 1/delta us. The forward two-level echo efficiency is
//!
//! ```text
//! eta_afc = (d/F)^2 exp(-7/F^2) exp(-d/F) exp(-d0),   F = delta/gamma
//! ```
//!
//! which is bounded by 4 e^-2 ~ 0.54 for any comb.

use crate::error::{Error, Result};
use crate::grid::SpectralGrid;
use serde::{Deserialize, Serialize};

pub const LN16: f64 = 2.772588722239781; // 4 ln 2

/// Forward-efficiency supremum 4 e^{-2}, reached at effective depth 2.
pub const FORWARD_EFFICIENCY_BOUND: f64 = 0.5413411329464508;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ToothShape {
    #[default]
    Gaussian,
}

/// Geometry of an atomic frequency comb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombSpec {
    pub delta_mhz: f64,
    pub tooth_fwhm_mhz: f64,
    pub num_teeth: usize,
    pub peak_depth: f64,
    pub background_depth: f64,
    #[serde(default)]
    pub tooth_shape: ToothShape,
}

impl CombSpec {
    pub fn new(
        delta_mhz: f64,
        tooth_fwhm_mhz: f64,
        num_teeth: usize,
        peak_depth: f64,
        background_depth: f64,
    ) -> Result<Self> {
        let spec = Self {
            delta_mhz,
            tooth_fwhm_mhz,
            num_teeth,
            peak_depth,
            background_depth,
            tooth_shape: ToothShape::Gaussian,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_mhz > 0.0) || !(self.tooth_fwhm_mhz > 0.0) {
            return Err(Error::Validation(
                "delta_mhz and tooth_fwhm_mhz must be positive".into(),
            ));
        }
        if self.finesse() < 1.0 {
            return Err(Error::Validation(format!(
                "finesse {} is below 1 (tooth FWHM exceeds spacing)",
                self.finesse()
            )));
        }
        if self.num_teeth == 0 {
            return Err(Error::Validation("num_teeth must be positive".into()));
        }
        if self.peak_depth < 0.0 || self.background_depth < 0.0 {
            return Err(Error::Validation("optical depths must be non-negative".into()));
        }
        Ok(())
    }

    /// Finesse F = delta / gamma.
    pub fn finesse(&self) -> f64 {
        self.delta_mhz / self.tooth_fwhm_mhz
    }

    pub fn bandwidth_mhz(&self) -> f64 {
        self.num_teeth as f64 * self.delta_mhz
    }

    /// Rephasing delay tau = 1/delta.
    pub fn storage_time_us(&self) -> f64 {
        1.0 / self.delta_mhz
    }

    /// Tooth centre frequencies, symmetric about `center_mhz`.
    pub fn tooth_centers(&self, center_mhz: f64) -> Vec<f64> {
        let half = (self.num_teeth as f64 - 1.0) / 2.0;
        (0..self.num_teeth)
            .map(|k| center_mhz + (k as f64 - half) * self.delta_mhz)
            .collect()
    }
}

/// Sampled optical depth d(nu) >= 0 on a spectral grid (natural axis).
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalDepthProfile {
    pub grid: SpectralGrid,
    pub depth: Vec<f64>,
}

impl OpticalDepthProfile {
    pub fn new(grid: SpectralGrid, depth: Vec<f64>) -> Result<Self> {
        if depth.len() != grid.num_points {
            return Err(Error::GridMismatch(format!(
                "depth has {} samples for a {}-point grid",
                depth.len(),
                grid.num_points
            )));
        }
        if depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Validation("optical depth must be finite and non-negative".into()));
        }
        Ok(Self { grid, depth })
    }

    /// Constant-depth profile (d(nu) = d0 everywhere).
    pub fn uniform(grid: SpectralGrid, depth: f64) -> Result<Self> {
        Self::new(grid, vec![depth; grid.num_points])
    }

    /// Total spectral weight, integral of d(nu) d nu.
    pub fn total_weight(&self) -> f64 {
        self.depth.iter().sum::<f64>() * self.grid.resolution_mhz()
    }
}

/// Sum of Gaussian teeth of FWHM gamma at spacing delta on background d0,
/// centred on the grid centre.
pub fn build_comb_profile(spec: &CombSpec, grid: &SpectralGrid) -> Result<OpticalDepthProfile> {
    spec.validate()?;
    if spec.peak_depth > 0.0 {
        grid.check_comb_sampling(spec.tooth_fwhm_mhz, spec.bandwidth_mhz())?;
    }
    let centers = spec.tooth_centers(grid.center_mhz);
    let inv_gamma_sq = LN16 / (spec.tooth_fwhm_mhz * spec.tooth_fwhm_mhz);
    // Gaussian support: beyond ~6 FWHM the tooth is below 1e-21 of its peak.
    let reach = 6.0 * spec.tooth_fwhm_mhz;
    let depth = grid
        .frequencies()
        .map(|nu| {
            let teeth: f64 = centers
                .iter()
                .filter(|c| (nu - **c).abs() <= reach)
                .map(|c| {
                    let d = nu - c;
                    spec.peak_depth * (-inv_gamma_sq * d * d).exp()
                })
                .sum();
            spec.background_depth + teeth
        })
        .collect();
    OpticalDepthProfile::new(*grid, depth)
}

/// Two-level AFC echo efficiency in the forward direction (Gaussian teeth).
pub fn afc_echo_efficiency(d: f64, finesse: f64, d0: f64) -> Result<f64> {
    if d < 0.0 || d0 < 0.0 {
        return Err(Error::Domain(format!(
            "optical depths must be non-negative (d = {d}, d0 = {d0})"
        )));
    }
    if finesse < 1.0 {
        return Err(Error::Domain(format!("finesse must be >= 1, got {finesse}")));
    }
    let d_eff = d / finesse;
    Ok(d_eff * d_eff * (-7.0 / (finesse * finesse)).exp() * (-d_eff).exp() * (-d0).exp())
}

/// Total three-level efficiency for one transfer in and one transfer out.
pub fn three_level_efficiency(eta_afc: f64, eta_t: f64) -> Result<f64> {
    for (name, v) in [("eta_afc", eta_afc), ("eta_t", eta_t)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    Ok(eta_afc * eta_t * eta_t)
}

/// Result of the bracketed finesse optimisation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FinesseOptimum {
    pub finesse: f64,
    pub efficiency: f64,
    /// Set when the objective is flat (d = 0) and any finesse is optimal.
    pub degenerate: bool,
}

/// Maximise [`afc_echo_efficiency`] over the finesse by golden-section
/// search inside `f_bounds`, compared against both endpoints.
pub fn optimize_finesse(d: f64, d0: f64, f_bounds: (f64, f64)) -> Result<FinesseOptimum> {
    let (lo, hi) = f_bounds;
    if !(lo < hi) || lo < 1.0 || hi > 100.0 {
        return Err(Error::InvalidBounds(format!(
            "finesse bounds must satisfy 1 <= lo < hi <= 100, got [{lo}, {hi}]"
        )));
    }
    if d < 0.0 || d0 < 0.0 {
        return Err(Error::Domain("optical depths must be non-negative".into()));
    }
    let eta = |f: f64| afc_echo_efficiency(d, f, d0).expect("bounds keep inputs valid");
    if d == 0.0 {
        return Ok(FinesseOptimum { finesse: lo, efficiency: 0.0, degenerate: true });
    }

    // Golden-section search; the objective is unimodal in F for F >= 1.
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut e = a + phi * (b - a);
    let (mut fc, mut fe) = (eta(c), eta(e));
    while b - a > 1e-6 {
        if fc > fe {
            b = e;
            e = c;
            fe = fc;
            c = b - phi * (b - a);
            fc = eta(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + phi * (b - a);
            fe = eta(e);
        }
    }
    let mut best = (0.5 * (a + b), eta(0.5 * (a + b)));
    for f in [lo, hi] {
        let v = eta(f);
        if v > best.1 {
            best = (f, v);
        }
    }
    Ok(FinesseOptimum { finesse: best.0, efficiency: best.1, degenerate: false })
}

/// A planned comb design with its predicted performance.
#[derive(Debug, Clone, Serialize)]
pub struct CombDesign {
    pub comb: CombSpec,
    pub predicted_afc_efficiency: f64,
    /// Three-level prediction assuming ideal (pi-pulse) transfers.
    pub predicted_3le_efficiency: f64,
    pub mode_capacity: usize,
}

/// Choose a comb that stores `n_modes` temporal modes of the given duration
/// plus a control pulse inside the rephasing delay 1/delta.
///
/// The spacing is set to the largest value with 1/delta >= n_modes *
/// mode_duration + control_duration (which maximises the tooth count margin
/// and the finesse available at the minimum tooth width).
#[allow(clippy::too_many_arguments)]
pub fn plan_multimode(
    bandwidth_mhz: f64,
    min_tooth_fwhm_mhz: f64,
    mode_duration_us: f64,
    control_duration_us: f64,
    n_modes: usize,
    d: f64,
    d0: f64,
) -> Result<CombDesign> {
    for (name, v) in [
        ("bandwidth", bandwidth_mhz),
        ("min_tooth_fwhm", min_tooth_fwhm_mhz),
        ("mode_duration", mode_duration_us),
        ("control_duration", control_duration_us),
    ] {
        if !(v > 0.0) {
            return Err(Error::Validation(format!("{name} must be positive, got {v}")));
        }
    }
    if n_modes == 0 {
        return Err(Error::Validation("n_modes must be positive".into()));
    }
    let train_us = n_modes as f64 * mode_duration_us + control_duration_us;
    let delta = 1.0 / train_us;
    let num_teeth = (bandwidth_mhz / delta).floor() as usize;
    if num_teeth == 0 {
        return Err(Error::BandwidthTooSmall(format!(
            "bandwidth {bandwidth_mhz} MHz holds no tooth at spacing {delta:.4} MHz"
        )));
    }
    if num_teeth < n_modes {
        return Err(Error::CapacityInfeasible { num_teeth, n_modes });
    }
    let finesse = (delta / min_tooth_fwhm_mhz).max(1.0);
    let comb = CombSpec::new(delta, delta / finesse, num_teeth, d, d0)?;
    let eta_afc = afc_echo_efficiency(d, finesse, d0)?;
    Ok(CombDesign {
        comb,
        predicted_afc_efficiency: eta_afc,
        predicted_3le_efficiency: three_level_efficiency(eta_afc.min(1.0), 1.0)?,
        mode_capacity: n_modes,
    })
}

/// Probe configuration used by [`infer_comb_params`]: the observables are
/// taken (and inverted) under the same conditions the inference assumes.
#[derive(Debug, Clone, Copy)]
pub struct InferenceProbe {
    pub delta_mhz: f64,
    pub num_teeth: usize,
    pub pulse_fwhm_us: f64,
}

impl Default for InferenceProbe {
    fn default() -> Self {
        Self { delta_mhz: 0.5, num_teeth: 5, pulse_fwhm_us: 0.84 }
    }
}

impl InferenceProbe {
    const D_MAX: f64 = 20.0;
    const D0_MAX: f64 = 5.0;

    fn grid(&self) -> crate::grid::TimeGrid {
        crate::grid::TimeGrid::new(128.0, 4096).expect("static grid")
    }

    fn input(&self) -> crate::propagation::FieldTrace {
        let grid = self.grid();
        crate::propagation::FieldTrace::from_pulses(
            grid,
            &[crate::propagation::Pulse::gaussian(self.pulse_fwhm_us, 16.0)],
        )
        .expect("probe pulse fits the grid")
    }

    /// Transmitted fraction and first-echo efficiency of a comb (d, d0) at
    /// the probe finesse, both relative to the pit-reference pulse area.
    pub fn observables(&self, d: f64, d0: f64, finesse: f64) -> Result<(f64, f64)> {
        let comb = CombSpec::new(self.delta_mhz, self.delta_mhz / finesse, self.num_teeth, d, d0)?;
        let grid = self.grid();
        let sgrid = crate::grid::SpectralGrid::conjugate_of(&grid);
        let profile = build_comb_profile(&comb, &sgrid)?;
        let tf = crate::propagation::transfer_function_from_depth(&profile)?;
        let input = self.input();
        let out = crate::propagation::propagate(&input, &tf)?;
        let t0 = 16.0;
        let tau = comb.storage_time_us();
        let reference = input.energy_in(t0 - 1.2, t0 + 1.2);
        let transmitted = out.energy_in(t0 - 1.2, t0 + 1.2) / reference;
        // +-0.6 us holds the echo core while staying clear of the tail of
        // the transmitted pulse, whose leakage would floor the echo signal
        let echo = out.energy_in(t0 + tau - 0.6, t0 + tau + 0.6) / reference;
        Ok((transmitted, echo))
    }
}

/// Invert measured (transmitted fraction, echo efficiency) to the comb
/// depths (d, d0) at a fixed finesse.
///
/// The echo efficiency is unimodal in d with a peak near effective depth
/// 2, so the inversion runs two nested bisections. Below the peak (the
/// usual operating regime) the outer loop adjusts d0 to match the
/// transmission while the inner loop matches the echo on the rising
/// branch. Beyond the peak that composition develops a fold, so the roles
/// swap: the outer loop scans d on the falling branch against the echo
/// while the inner loop matches the transmission with d0, which is
/// monotone in both variables. Whichever scheme reproduces both
/// observables within 1e-4 wins; rising-branch solutions are preferred
/// when both exist.
pub fn infer_comb_params(
    transmitted_fraction: f64,
    echo_efficiency: f64,
    finesse: f64,
) -> Result<(f64, f64)> {
    infer_comb_params_with(
        transmitted_fraction,
        echo_efficiency,
        finesse,
        &InferenceProbe::default(),
    )
}

pub fn infer_comb_params_with(
    transmitted_fraction: f64,
    echo_efficiency: f64,
    finesse: f64,
    probe: &InferenceProbe,
) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&transmitted_fraction) && transmitted_fraction != 0.0 {
        return Err(Error::Domain(format!(
            "transmitted fraction must lie in (0, 1), got {transmitted_fraction}"
        )));
    }
    if !(0.0..1.0).contains(&echo_efficiency) {
        return Err(Error::Domain(format!(
            "echo efficiency must lie in [0, 1), got {echo_efficiency}"
        )));
    }
    if finesse < 1.0 {
        return Err(Error::Domain(format!("finesse must be >= 1, got {finesse}")));
    }
    const TOL: f64 = 1e-4;
    let d_peak = (2.0 * finesse).min(InferenceProbe::D_MAX);

    // Rising-branch inner solve: d in [0, d_peak] matching the echo at
    // fixed d0. The echo grows monotonically with d there.
    let solve_d_rising = |d0: f64| -> Result<Option<f64>> {
        let (mut lo, mut hi) = (0.0, d_peak);
        let eta_lo = probe.observables(lo, d0, finesse)?.1;
        if eta_lo >= echo_efficiency {
            // target at or below the empty-comb floor: d = 0
            return Ok(Some(lo));
        }
        if probe.observables(hi, d0, finesse)?.1 < echo_efficiency {
            return Ok(None);
        }
        for _ in 0..48 {
            let mid = 0.5 * (lo + hi);
            if probe.observables(mid, d0, finesse)?.1 < echo_efficiency {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-9 {
                break;
            }
        }
        Ok(Some(0.5 * (lo + hi)))
    };

    // Scheme A: outer bisection on d0 against the transmission, which
    // falls monotonically with d0 (directly and through the required d).
    let scheme_rising = || -> Result<Option<(f64, f64)>> {
        let trans_at = |d0: f64| -> Result<f64> {
            match solve_d_rising(d0)? {
                Some(d) => Ok(probe.observables(d, d0, finesse)?.0),
                // unreachable echo at this d0: acts like infinite depth
                None => Ok(0.0),
            }
        };
        let (mut lo, mut hi) = (0.0, InferenceProbe::D0_MAX);
        if trans_at(lo)? < transmitted_fraction - TOL
            || trans_at(hi)? > transmitted_fraction + TOL
        {
            return Ok(None);
        }
        for _ in 0..48 {
            let mid = 0.5 * (lo + hi);
            if trans_at(mid)? >= transmitted_fraction {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-10 {
                break;
            }
        }
        let d0 = 0.5 * (lo + hi);
        Ok(solve_d_rising(d0)?.map(|d| (d, d0)))
    };

    // Inner solve for scheme B: d0 matching the transmission at fixed d.
    // Errs on the side of the outer scan when the bracket excludes the
    // target: Less means even d0 = 0 transmits too little (d too deep).
    let solve_d0 = |d: f64| -> Result<std::result::Result<f64, std::cmp::Ordering>> {
        let (mut lo, mut hi) = (0.0, InferenceProbe::D0_MAX);
        if probe.observables(d, lo, finesse)?.0 < transmitted_fraction {
            return Ok(Err(std::cmp::Ordering::Less));
        }
        if probe.observables(d, hi, finesse)?.0 > transmitted_fraction {
            return Ok(Err(std::cmp::Ordering::Greater));
        }
        for _ in 0..48 {
            let mid = 0.5 * (lo + hi);
            if probe.observables(d, mid, finesse)?.0 >= transmitted_fraction {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-10 {
                break;
            }
        }
        Ok(Ok(0.5 * (lo + hi)))
    };

    // Scheme B: outer bisection on d along the falling branch against the
    // echo, which grows with d on the fixed-transmission manifold there.
    let scheme_falling = || -> Result<Option<(f64, f64)>> {
        if d_peak >= InferenceProbe::D_MAX {
            return Ok(None);
        }
        let echo_at = |d: f64| -> Result<f64> {
            match solve_d0(d)? {
                Ok(d0) => Ok(probe.observables(d, d0, finesse)?.1 - echo_efficiency),
                // too deep: behave like an overshooting echo residual
                Err(std::cmp::Ordering::Less) => Ok(1.0),
                Err(_) => Ok(-1.0),
            }
        };
        let (mut lo, mut hi) = (d_peak, InferenceProbe::D_MAX);
        if echo_at(lo)? > 0.0 || echo_at(hi)? < 0.0 {
            return Ok(None);
        }
        for _ in 0..48 {
            let mid = 0.5 * (lo + hi);
            if echo_at(mid)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-9 {
                break;
            }
        }
        let d = 0.5 * (lo + hi);
        Ok(solve_d0(d)?.ok().map(|d0| (d, d0)))
    };

    let mut last_residuals = None;
    for candidate in [scheme_rising()?, scheme_falling()?].into_iter().flatten() {
        let (d, d0) = candidate;
        let (t_check, e_check) = probe.observables(d, d0, finesse)?;
        let (rt, re) = (
            (t_check - transmitted_fraction).abs(),
            (e_check - echo_efficiency).abs(),
        );
        if rt <= TOL && re <= TOL {
            return Ok((d, d0));
        }
        last_residuals = Some((rt, re));
    }
    match last_residuals {
        Some((rt, re)) => Err(Error::NonConvergence(format!(
            "bisection stalled with residuals |dT| = {rt:.2e}, |d eta| = {re:.2e}"
        ))),
        None => Err(Error::NoSolutionInBounds(format!(
            "no comb with d in [0, {}], d0 in [0, {}] at finesse {finesse} reproduces T = {transmitted_fraction}, eta = {echo_efficiency}",
            InferenceProbe::D_MAX,
            InferenceProbe::D0_MAX
        ))),
    }
}
