//! Weighted nonlinear least squares for the protocol observables.
//!
//! A small damped Gauss-Newton (Levenberg-Marquardt) core with a numeric
//! Jacobian drives three estimators: the Gaussian spin-decay fit, the
//! simultaneous Rabi fit of echo area and three-level efficiency, and the
//! interference-fringe fit. One-sigma uncertainties come from the
//! linearized covariance (J^T J)^-1 in weighted residual space.

use crate::error::{Error, Result};
use serde::Serialize;
use std::collections::BTreeMap;

pub const PI: f64 = std::f64::consts::PI;
const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub estimates: BTreeMap<String, Estimate>,
    pub parameter_order: Vec<String>,
    pub residual_norm: f64,
    pub converged: bool,
    pub covariance: Vec<Vec<f64>>,
    pub flags: Vec<String>,
}

impl FitReport {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.estimates.get(name).map(|e| e.value)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.estimates.get(name).map(|e| e.sigma)
    }
}

/// Spin decay law: intensity factor after a wait `t_s` for a Gaussian spin
/// inhomogeneity of FWHM `gamma_is` (MHz).
pub fn gaussian_decay_model(eta0: f64, gamma_is: f64, t_s: f64) -> f64 {
    let x = gamma_is * t_s;
    eta0 * (-(x * x) / (2.0 * LN2 / (PI * PI))).exp()
}

struct LmResult {
    params: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    chi2: f64,
    converged: bool,
}

/// Minimise the sum of squared weighted residuals produced by `fill`.
fn levenberg_marquardt(
    fill: &dyn Fn(&[f64], &mut Vec<f64>),
    p0: &[f64],
    max_iter: usize,
) -> LmResult {
    let n_p = p0.len();
    let mut params = p0.to_vec();
    let mut resid = Vec::new();
    fill(&params, &mut resid);
    let mut chi2: f64 = resid.iter().map(|r| r * r).sum();
    let mut lambda = 1e-3;
    let mut converged = false;

    let jacobian = |p: &[f64]| -> Vec<Vec<f64>> {
        let mut cols = Vec::with_capacity(n_p);
        let (mut plus, mut minus) = (Vec::new(), Vec::new());
        for j in 0..n_p {
            let h = 1e-7 * p[j].abs().max(1e-3);
            let mut pp = p.to_vec();
            pp[j] += h;
            fill(&pp, &mut plus);
            pp[j] = p[j] - h;
            fill(&pp, &mut minus);
            cols.push(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect());
        }
        cols
    };

    for _ in 0..max_iter {
        let cols = jacobian(&params);
        let n_r = resid.len();
        // normal equations J^T J and gradient J^T r
        let mut jtj = vec![vec![0.0; n_p]; n_p];
        let mut jtr = vec![0.0; n_p];
        for a in 0..n_p {
            for b in a..n_p {
                let s: f64 = (0..n_r).map(|i| cols[a][i] * cols[b][i]).sum();
                jtj[a][b] = s;
                jtj[b][a] = s;
            }
            jtr[a] = (0..n_r).map(|i| cols[a][i] * resid[i]).sum();
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut damped = jtj.clone();
            for (a, row) in damped.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-12);
            }
            let Some(step) = solve(&damped, &jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(&step).map(|(p, s)| p - s).collect();
            let mut trial_resid = Vec::new();
            fill(&trial, &mut trial_resid);
            let trial_chi2: f64 = trial_resid.iter().map(|r| r * r).sum();
            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                let delta = chi2 - trial_chi2;
                params = trial;
                resid = trial_resid;
                chi2 = trial_chi2;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if delta <= 1e-12 * chi2.max(1e-300) + 1e-300 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !improved {
            converged = converged || improved || chi2 < 1e-20;
            break;
        }
    }

    // covariance from the undamped normal equations at the optimum
    let cols = jacobian(&params);
    let n_r = resid.len();
    let mut jtj = vec![vec![0.0; n_p]; n_p];
    for a in 0..n_p {
        for b in a..n_p {
            let s: f64 = (0..n_r).map(|i| cols[a][i] * cols[b][i]).sum();
            jtj[a][b] = s;
            jtj[b][a] = s;
        }
    }
    let covariance = invert(&jtj).unwrap_or_else(|| vec![vec![f64::NAN; n_p]; n_p]);
    LmResult { params, covariance, chi2, converged }
}

/// Solve A x = b for a small symmetric system by Gauss-Jordan elimination.
fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(*rhs);
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|x, y| m[*x][col].abs().total_cmp(&m[*y][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                for k in 0..=n {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    Some(m.into_iter().map(|row| row[n]).collect())
}

fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(solve(a, &e)?);
    }
    // transpose column solutions into rows
    Some((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

fn build_report(names: &[&str], lm: &LmResult, flags: Vec<String>) -> FitReport {
    let mut estimates = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        let var = lm.covariance[i][i];
        estimates.insert(
            name.to_string(),
            Estimate { value: lm.params[i], sigma: if var >= 0.0 { var.sqrt() } else { f64::NAN } },
        );
    }
    FitReport {
        estimates,
        parameter_order: names.iter().map(|s| s.to_string()).collect(),
        residual_norm: lm.chi2.sqrt(),
        converged: lm.converged,
        covariance: lm.covariance.clone(),
        flags,
    }
}

fn check_weights(sigmas: &[f64]) -> Result<()> {
    if sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::DegenerateData("all sigmas must be positive".into()));
    }
    Ok(())
}

/// Weighted fit of eta(T_S) = eta0 exp[-(gamma_IS T_S)^2 / (2 ln2 / pi^2)].
///
/// Reports `eta0` (efficiency extrapolated to zero delay) and `gamma_is_mhz`.
pub fn fit_gaussian_decay(ts_us: &[f64], etas: &[f64], sigmas: &[f64]) -> Result<FitReport> {
    if ts_us.len() < 4 || ts_us.len() != etas.len() || ts_us.len() != sigmas.len() {
        return Err(Error::DegenerateData(format!(
            "need >= 4 aligned points, got {}",
            ts_us.len()
        )));
    }
    check_weights(sigmas)?;
    let eta0_init = etas.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
    // crude half-decay scan for the width initial
    let gamma_init = ts_us
        .iter()
        .zip(etas)
        .find(|(t, e)| **t > 0.0 && **e < 0.5 * eta0_init)
        .map(|(t, _)| (2.0 * LN2 * LN2).sqrt() / (PI * t))
        .unwrap_or(1e-4);
    let fill = |p: &[f64], out: &mut Vec<f64>| {
        out.clear();
        for i in 0..ts_us.len() {
            let model = gaussian_decay_model(p[0], p[1], ts_us[i]);
            out.push((etas[i] - model) / sigmas[i]);
        }
    };
    let mut lm = levenberg_marquardt(&fill, &[eta0_init, gamma_init], 200);
    lm.params[1] = lm.params[1].abs(); // decay law is even in gamma
    if !lm.converged || !lm.chi2.is_finite() {
        return Err(Error::NonConvergence("gaussian decay fit did not converge".into()));
    }
    Ok(build_report(&["eta0", "gamma_is_mhz"], &lm, Vec::new()))
}

/// Simultaneous weighted fit of the two-level echo area and the three-
/// level efficiency against control power with shared parameters.
///
/// Models: theta(P) = 2 pi omega sqrt(P / power_ref) duration, then
/// A_afc = a_in (eta_afc/2)(1 + cos theta) and eta_3le = (eta_afc/4)(1 - cos theta)^2.
/// Reports `omega_bar_mhz` (effective Rabi frequency at `power_ref_mw`),
/// `eta_afc` and `a_in`. Five initial Rabi guesses guard against aliasing.
pub fn fit_rabi(
    powers_mw: &[f64],
    afc_areas: &[f64],
    tle_effs: &[f64],
    duration_us: f64,
    power_ref_mw: f64,
    sigmas: Option<(&[f64], &[f64])>,
) -> Result<FitReport> {
    let n = powers_mw.len();
    if n < 5 || afc_areas.len() != n || tle_effs.len() != n {
        return Err(Error::DegenerateData(format!("need >= 5 aligned points, got {n}")));
    }
    if !(duration_us > 0.0) || !(power_ref_mw > 0.0) {
        return Err(Error::Validation("duration and reference power must be positive".into()));
    }
    let (sig_a, sig_e): (Vec<f64>, Vec<f64>) = match sigmas {
        Some((a, e)) => {
            check_weights(a)?;
            check_weights(e)?;
            (a.to_vec(), e.to_vec())
        }
        None => {
            // scale-free defaults so both curves contribute comparably
            let sa = afc_areas.iter().cloned().fold(f64::MIN, f64::max).max(1e-12) * 1e-2;
            let se = tle_effs.iter().cloned().fold(f64::MIN, f64::max).max(1e-12) * 1e-2;
            (vec![sa; n], vec![se; n])
        }
    };

    let fill = |p: &[f64], out: &mut Vec<f64>| {
        out.clear();
        let (omega, eta, a_in) = (p[0], p[1], p[2]);
        for i in 0..n {
            let theta =
                2.0 * PI * omega * (powers_mw[i] / power_ref_mw).max(0.0).sqrt() * duration_us;
            let cos = theta.cos();
            out.push((afc_areas[i] - a_in * eta / 2.0 * (1.0 + cos)) / sig_a[i]);
            out.push((tle_effs[i] - eta / 4.0 * (1.0 - cos) * (1.0 - cos)) / sig_e[i]);
        }
    };

    let eta_init = (4.0 * tle_effs.iter().cloned().fold(f64::MIN, f64::max)).clamp(1e-6, 1.0);
    let a_init = (2.0 * afc_areas.iter().cloned().fold(f64::MIN, f64::max) / eta_init).max(1e-9);
    // a pi pulse at the highest power is the natural frequency scale
    let p_max = powers_mw.iter().cloned().fold(f64::MIN, f64::max).max(power_ref_mw * 1e-3);
    let omega_scale = 1.0 / (2.0 * (p_max / power_ref_mw).sqrt() * duration_us);
    let mut best: Option<LmResult> = None;
    for mult in [0.3, 0.6, 1.0, 1.5, 2.5] {
        let lm = levenberg_marquardt(&fill, &[mult * omega_scale, eta_init, a_init], 300);
        if lm.chi2.is_finite() && best.as_ref().map_or(true, |b| lm.chi2 < b.chi2) {
            best = Some(lm);
        }
    }
    let mut lm = best.ok_or_else(|| Error::NonConvergence("all Rabi fit starts failed".into()))?;
    lm.params[0] = lm.params[0].abs();
    if !lm.converged {
        return Err(Error::NonConvergence("Rabi fit did not converge".into()));
    }
    Ok(build_report(&["omega_bar_mhz", "eta_afc", "a_in"], &lm, Vec::new()))
}

/// Weighted fringe fit area(phi) = A (1 + V cos(phi - phi0)).
///
/// `v` is clamped to [0, 1]; a clamp is recorded in the report flags.
pub fn fit_fringe(phases_rad: &[f64], areas: &[f64], sigmas: &[f64]) -> Result<FitReport> {
    let n = phases_rad.len();
    if n < 8 || areas.len() != n || sigmas.len() != n {
        return Err(Error::DegenerateData(format!("need >= 8 aligned points, got {n}")));
    }
    let span = phases_rad.iter().cloned().fold(f64::MIN, f64::max)
        - phases_rad.iter().cloned().fold(f64::MAX, f64::min);
    if span < 2.0 * PI - 1e-9 {
        return Err(Error::DegenerateData(format!(
            "phases span {span:.3} rad but must cover at least 2 pi"
        )));
    }
    check_weights(sigmas)?;

    let mean = areas.iter().sum::<f64>() / n as f64;
    // first harmonic gives amplitude and phase initials
    let (mut re, mut im) = (0.0, 0.0);
    for (phi, a) in phases_rad.iter().zip(areas) {
        re += a * phi.cos();
        im += a * phi.sin();
    }
    let harm = 2.0 * (re * re + im * im).sqrt() / n as f64;
    let v_init = if mean.abs() > 1e-300 { (harm / mean).clamp(0.0, 1.2) } else { 0.0 };
    let phi0_init = im.atan2(re);

    let fill = |p: &[f64], out: &mut Vec<f64>| {
        out.clear();
        for i in 0..n {
            let model = p[0] * (1.0 + p[1] * (phases_rad[i] - p[2]).cos());
            out.push((areas[i] - model) / sigmas[i]);
        }
    };
    let mut lm = levenberg_marquardt(&fill, &[mean.max(1e-12), v_init, phi0_init], 300);
    if !lm.converged || !lm.chi2.is_finite() {
        return Err(Error::NonConvergence("fringe fit did not converge".into()));
    }
    let mut flags = Vec::new();
    if lm.params[1] < 0.0 {
        lm.params[1] = -lm.params[1];
        lm.params[2] += PI;
    }
    lm.params[2] = lm.params[2].rem_euclid(2.0 * PI);
    if lm.params[1] > 1.0 {
        flags.push(format!("visibility-clamped from {:.6}", lm.params[1]));
        lm.params[1] = 1.0;
    }
    Ok(build_report(&["area", "visibility", "phi0"], &lm, flags))
}

/// Weighted straight-line fit y = a + b x; returns ((a, sigma_a), (b, sigma_b)).
pub fn fit_line(xs: &[f64], ys: &[f64], sigmas: &[f64]) -> Result<((f64, f64), (f64, f64))> {
    if xs.len() < 3 || xs.len() != ys.len() || xs.len() != sigmas.len() {
        return Err(Error::DegenerateData("need >= 3 aligned points".into()));
    }
    check_weights(sigmas)?;
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..xs.len() {
        let w = 1.0 / (sigmas[i] * sigmas[i]);
        s += w;
        sx += w * xs[i];
        sy += w * ys[i];
        sxx += w * xs[i] * xs[i];
        sxy += w * xs[i] * ys[i];
    }
    let det = s * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return Err(Error::DegenerateData("degenerate abscissa".into()));
    }
    let a = (sxx * sy - sx * sxy) / det;
    let b = (s * sxy - sx * sy) / det;
    Ok(((a, (sxx / det).sqrt()), (b, (s / det).sqrt())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn gaussian_decay_exact_roundtrip() {
        let ts: Vec<f64> = (0..10).map(|i| 2.0 * i as f64).collect();
        let etas: Vec<f64> = ts.iter().map(|t| gaussian_decay_model(0.056, 0.0256, *t)).collect();
        let sigmas = vec![1e-4; ts.len()];
        let report = fit_gaussian_decay(&ts, &etas, &sigmas).unwrap();
        assert_relative_eq!(report.value("eta0").unwrap(), 0.056, epsilon = 1e-6);
        assert_relative_eq!(report.value("gamma_is_mhz").unwrap(), 0.0256, epsilon = 1e-6);
        assert!(report.converged);
    }

    #[test]
    fn gaussian_decay_flat_data_gives_zero_width() {
        let ts: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let etas = vec![0.05; 8];
        let sigmas = vec![1e-3; 8];
        let report = fit_gaussian_decay(&ts, &etas, &sigmas).unwrap();
        let gamma = report.value("gamma_is_mhz").unwrap();
        let sig = report.sigma("gamma_is_mhz").unwrap();
        assert!(gamma.abs() <= 2.0 * sig.max(1e-6), "gamma {gamma} inconsistent with 0");
    }

    #[test]
    fn gaussian_decay_coverage_under_noise() {
        let truth = (0.056, 0.0256);
        let ts: Vec<f64> = (1..=10).map(|i| 2.0 * i as f64).collect();
        let mut hits = 0;
        let total = 500;
        for seed in 0..total {
            let mut rng = crate::exec::stream_rng(crate::exec::derive_seed(11, "coverage"), seed);
            let etas: Vec<f64> = ts
                .iter()
                .map(|t| {
                    gaussian_decay_model(truth.0, truth.1, *t)
                        * (1.0 + 0.02 * rng.sample::<f64, _>(rand_distr::StandardNormal))
                })
                .collect();
            let sigmas: Vec<f64> = etas.iter().map(|e| 0.02 * e.abs().max(1e-9)).collect();
            let report = fit_gaussian_decay(&ts, &etas, &sigmas).unwrap();
            let dg = (report.value("gamma_is_mhz").unwrap() - truth.1).abs();
            if dg <= 2.0 * report.sigma("gamma_is_mhz").unwrap() {
                hits += 1;
            }
        }
        assert!(hits * 100 >= total * 95, "coverage {hits}/{total}");
    }

    #[test]
    fn rabi_exact_roundtrip_with_multistart() {
        let omega = 0.34;
        let (duration, p_ref) = (0.8, 5.7);
        let powers: Vec<f64> = (0..16).map(|i| p_ref * (i as f64 / 15.0).powi(2)).collect();
        let thetas: Vec<f64> =
            powers.iter().map(|p| 2.0 * PI * omega * (p / p_ref).sqrt() * duration).collect();
        let a_in = 0.894;
        let eta = 0.156;
        let areas: Vec<f64> = thetas.iter().map(|t| a_in * eta / 2.0 * (1.0 + t.cos())).collect();
        let effs: Vec<f64> =
            thetas.iter().map(|t| eta / 4.0 * (1.0 - t.cos()) * (1.0 - t.cos())).collect();
        let report = fit_rabi(&powers, &areas, &effs, duration, p_ref, None).unwrap();
        assert_relative_eq!(report.value("omega_bar_mhz").unwrap(), omega, max_relative = 1e-4);
        assert_relative_eq!(report.value("eta_afc").unwrap(), eta, max_relative = 1e-4);
        assert_relative_eq!(report.value("a_in").unwrap(), a_in, max_relative = 1e-4);
    }

    #[test]
    fn rabi_flat_data_gives_zero_frequency() {
        let powers: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let areas = vec![0.1; 8];
        let effs = vec![0.0; 8];
        let report = fit_rabi(&powers, &areas, &effs, 0.8, 5.7, None).unwrap();
        let omega = report.value("omega_bar_mhz").unwrap();
        // flat AFC area and zero 3LE only happen without driving
        assert!(omega.abs() < 1e-3, "omega {omega} should be consistent with 0");
    }

    #[test]
    fn fringe_exact_roundtrip() {
        let phases: Vec<f64> = (0..=12).map(|i| 2.0 * PI * i as f64 / 12.0).collect();
        let areas: Vec<f64> = phases.iter().map(|p| 0.8 * (1.0 + 0.84 * (p - 0.3).cos())).collect();
        let sigmas = vec![1e-3; phases.len()];
        let report = fit_fringe(&phases, &areas, &sigmas).unwrap();
        assert_relative_eq!(report.value("visibility").unwrap(), 0.84, epsilon = 1e-6);
        assert_relative_eq!(report.value("phi0").unwrap(), 0.3, epsilon = 1e-6);
        assert!(report.flags.is_empty());
    }

    #[test]
    fn fringe_constant_data_gives_zero_visibility() {
        let phases: Vec<f64> = (0..=12).map(|i| 2.0 * PI * i as f64 / 12.0).collect();
        let areas = vec![0.5; phases.len()];
        let sigmas = vec![1e-3; phases.len()];
        let report = fit_fringe(&phases, &areas, &sigmas).unwrap();
        assert!(report.value("visibility").unwrap().abs() < 1e-6);
    }

    #[test]
    fn fringe_clamps_overshooting_visibility() {
        let phases: Vec<f64> = (0..=15).map(|i| 2.0 * PI * i as f64 / 15.0).collect();
        let mut rng = crate::exec::stream_rng(5, 0);
        let areas: Vec<f64> = phases
            .iter()
            .map(|p| {
                (1.0 + 1.0 * p.cos())
                    * (1.0 + 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal))
            })
            .collect();
        let sigmas = vec![0.05; phases.len()];
        let report = fit_fringe(&phases, &areas, &sigmas).unwrap();
        let v = report.value("visibility").unwrap();
        assert!(v <= 1.0);
        if !report.flags.is_empty() {
            assert!(report.flags[0].starts_with("visibility-clamped"));
        }
    }

    #[test]
    fn fringe_requires_full_period() {
        let phases: Vec<f64> = (0..10).map(|i| 0.3 * i as f64).collect();
        let areas = vec![1.0; 10];
        let sigmas = vec![0.1; 10];
        assert!(matches!(fit_fringe(&phases, &areas, &sigmas), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn line_fit_recovers_slope() {
        let xs: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 + 0.5 * x).collect();
        let sigmas = vec![0.1; 6];
        let ((a, _), (b, sb)) = fit_line(&xs, &ys, &sigmas).unwrap();
        assert_relative_eq!(a, 1.0, epsilon = 1e-9);
        assert_relative_eq!(b, 0.5, epsilon = 1e-9);
        assert!(sb > 0.0);
    }
}
