//! Spin-wave retrieval decay, the atomic-motion lifetime estimate and the
//! least-squares decay fit.
//!
//! The decay model averages a Gaussian and an exponential envelope sharing
//! one lifetime:
//!
//! ```text
//! R(t) = R0 * (exp(-t^2 / tau0^2) + exp(-t / tau0)) / 2
//! ```

pub mod simplex;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, check_range, Error, Result};
use crate::params::{coupling_angle, EnsembleGeometry};

pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Parameters `(R0, tau0)` of the retrieval decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayParams {
    /// Zero-delay intrinsic retrieval efficiency.
    pub r0: f64,
    /// 1/e lifetime in seconds.
    pub tau0: f64,
}

impl DecayParams {
    pub fn new(r0: f64, tau0: f64) -> Result<Self> {
        let p = DecayParams { r0, tau0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_range("decay.r0", self.r0, 0.0, 1.0)?;
        check_positive("decay.tau0", self.tau0)
    }

    /// Infallible evaluation for already-validated parameters and `t >= 0`.
    pub(crate) fn eval(&self, t: f64) -> f64 {
        let x = t / self.tau0;
        self.r0 * ((-x * x).exp() + (-x).exp()) / 2.0
    }
}

pub fn retrieval_decay(p: &DecayParams, t: f64) -> Result<f64> {
    p.validate()?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("storage time t = {t} must be >= 0")));
    }
    Ok(p.eval(t))
}

/// Intermediate quantities of the motional-dephasing estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionalLifetime {
    pub angle: f64,
    /// Spin-wave wave-vector magnitude `2 k sin(theta / 2)`.
    pub delta_k: f64,
    /// Mean thermal speed `sqrt(kB T / m)`.
    pub mean_speed: f64,
    pub lifetime: f64,
}

/// Lifetime `1 / (|dk| v_a)` of a spin wave written at the arm angle of `geom`.
pub fn motional_lifetime(geom: &EnsembleGeometry) -> Result<f64> {
    Ok(motional_lifetime_detail(geom)?.lifetime)
}

pub fn motional_lifetime_detail(geom: &EnsembleGeometry) -> Result<MotionalLifetime> {
    geom.validate()?;
    let angle = coupling_angle(geom)?;
    lifetime_at_angle(geom.wavelength, geom.temperature, geom.atomic_mass, angle)
}

pub fn lifetime_at_angle(
    wavelength: f64,
    temperature: f64,
    mass: f64,
    angle: f64,
) -> Result<MotionalLifetime> {
    check_positive("wavelength", wavelength)?;
    check_positive("temperature", temperature)?;
    check_positive("atomic_mass", mass)?;
    check_positive("angle", angle)?;
    let k = 2.0 * PI / wavelength;
    let delta_k = 2.0 * k * (angle / 2.0).sin();
    let mean_speed = (BOLTZMANN * temperature / mass).sqrt();
    Ok(MotionalLifetime {
        angle,
        delta_k,
        mean_speed,
        lifetime: 1.0 / (delta_k * mean_speed),
    })
}

/// One measured retrieval efficiency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecaySample {
    pub t: f64,
    pub r: f64,
    pub sigma: Option<f64>,
}

impl DecaySample {
    pub fn new(t: f64, r: f64) -> Self {
        DecaySample { t, r, sigma: None }
    }

    pub fn with_sigma(t: f64, r: f64, sigma: f64) -> Self {
        DecaySample {
            t,
            r,
            sigma: Some(sigma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub params: DecayParams,
    /// Minimized (weighted) sum of squared residuals.
    pub residual: f64,
    pub weighted: bool,
    pub iterations: usize,
    /// Linearized standard errors of `(r0, tau0)`. Weighted fits use the
    /// given sigmas as absolute; unweighted fits scale by the residual
    /// variance. `None` when the curvature matrix is singular.
    pub stderr: Option<(f64, f64)>,
}

/// Standard errors from `(J^T W J)^-1` at `p`.
fn standard_errors(
    samples: &[DecaySample],
    weights: &[f64],
    p: &DecayParams,
    residual: f64,
    weighted: bool,
) -> Option<(f64, f64)> {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for (s, w) in samples.iter().zip(weights) {
        let x = s.t / p.tau0;
        let (gauss, expo) = ((-x * x).exp(), (-x).exp());
        let d_r0 = (gauss + expo) / 2.0;
        let d_tau = p.r0 * (gauss * 2.0 * x * x + expo * x) / (2.0 * p.tau0);
        a += w * d_r0 * d_r0;
        b += w * d_r0 * d_tau;
        c += w * d_tau * d_tau;
    }
    let det = a * c - b * b;
    if !(det > 1e-12 * a * c) {
        return None;
    }
    let scale = if weighted {
        1.0
    } else {
        residual / (samples.len() - 2) as f64
    };
    Some(((scale * c / det).sqrt(), (scale * a / det).sqrt()))
}

const GRID_R0: usize = 21;
const GRID_TAU: usize = 41;

/// Least-squares fit of `(R0, tau0)` to the samples.
///
/// Samples are weighted by `1/sigma^2` when every sample carries a sigma and
/// unweighted when none does. The simplex search starts from the best point
/// of a coarse grid over `R0 in [max R, 1]`, `tau0 in [t_max/10, 10 t_max]`.
pub fn fit_decay(samples: &[DecaySample]) -> Result<DecayFit> {
    fit_decay_with(samples, simplex::SimplexOptions::default())
}

pub fn fit_decay_with(samples: &[DecaySample], opts: simplex::SimplexOptions) -> Result<DecayFit> {
    if samples.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "decay fit needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    for s in samples {
        if !(s.t >= 0.0 && s.t.is_finite()) {
            return Err(Error::domain(format!("sample time {} must be >= 0", s.t)));
        }
        if !s.r.is_finite() {
            return Err(Error::domain("sample efficiency must be finite"));
        }
        if let Some(sig) = s.sigma {
            check_positive("sample sigma", sig)?;
        }
    }
    let n_sigma = samples.iter().filter(|s| s.sigma.is_some()).count();
    if n_sigma != 0 && n_sigma != samples.len() {
        return Err(Error::domain(
            "sigma must be given for every sample or for none",
        ));
    }
    let weighted = n_sigma == samples.len();
    let t_min = samples.iter().map(|s| s.t).fold(f64::INFINITY, f64::min);
    let t_max = samples.iter().map(|s| s.t).fold(0.0, f64::max);
    if t_max == t_min {
        return Err(Error::DegenerateData(
            "all samples share the same storage time".into(),
        ));
    }

    let weights: Vec<f64> = samples
        .iter()
        .map(|s| s.sigma.map_or(1.0, |sig| 1.0 / (sig * sig)))
        .collect();
    let objective = |r0: f64, tau0: f64| -> f64 {
        if !(0.0..=1.0).contains(&r0) || !(tau0 > 0.0) || !tau0.is_finite() {
            return f64::INFINITY;
        }
        let p = DecayParams { r0, tau0 };
        samples
            .iter()
            .zip(&weights)
            .map(|(s, w)| {
                let d = p.eval(s.t) - s.r;
                w * d * d
            })
            .sum()
    };

    // Coarse grid; iterating tau upward and replacing only on strict
    // improvement resolves ties toward the smallest tau0.
    let r_max = samples
        .iter()
        .map(|s| s.r)
        .fold(f64::NEG_INFINITY, f64::max);
    let r_lo = r_max.clamp(0.0, 1.0);
    let (tau_lo, tau_hi) = (t_max / 10.0, 10.0 * t_max);
    let mut best = (f64::INFINITY, r_lo, tau_lo);
    for j in 0..GRID_TAU {
        let tau = tau_lo * (tau_hi / tau_lo).powf(j as f64 / (GRID_TAU - 1) as f64);
        for i in 0..GRID_R0 {
            let r0 = r_lo + (1.0 - r_lo) * i as f64 / (GRID_R0 - 1) as f64;
            let v = objective(r0, tau);
            if v < best.0 {
                best = (v, r0, tau);
            }
        }
    }

    // Optimize over (R0, ln(tau0 / t_max)) so both coordinates are O(1).
    let scaled = |x: &[f64]| objective(x[0], t_max * x[1].exp());
    let mut start = vec![best.1, (best.2 / t_max).ln()];
    let mut iterations = 0;
    let mut kept: Option<simplex::SimplexResult> = None;
    // Restart from the converged point until the minimum stops moving.
    for _ in 0..4 {
        let remaining = opts.max_iterations.saturating_sub(iterations);
        let step_r = if start[0] > 0.95 { -0.02 } else { 0.02 };
        let res = simplex::minimize(
            scaled,
            &start,
            &[step_r, 0.1],
            simplex::SimplexOptions {
                max_iterations: remaining,
                ..opts
            },
        );
        iterations += res.iterations;
        if !res.converged {
            return Err(Error::FitFailure(format!(
                "simplex did not converge within {} iterations",
                opts.max_iterations
            )));
        }
        let improved = kept
            .as_ref()
            .is_none_or(|prev| prev.value - res.value > opts.rel_tol * prev.value.abs());
        start.clone_from(&res.x);
        if kept.as_ref().is_none_or(|prev| res.value <= prev.value) {
            kept = Some(res);
        }
        if !improved {
            break;
        }
    }
    let res = kept.ok_or_else(|| Error::FitFailure("no simplex iterations were run".into()))?;
    if !res.value.is_finite() {
        return Err(Error::FitFailure(
            "objective is not finite at the optimum".into(),
        ));
    }
    let params = DecayParams {
        r0: res.x[0],
        tau0: t_max * res.x[1].exp(),
    };
    Ok(DecayFit {
        params,
        residual: res.value,
        weighted,
        iterations,
        stderr: standard_errors(samples, &weights, &params, res.value, weighted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn standard_errors_match_replica_spread() {
        // Refit many synthetic data sets and compare the spread of the
        // estimates with the linearized prediction.
        let truth = DecayParams::new(0.7, 1e-3).unwrap();
        let times: Vec<f64> = (0..8).map(|i| i as f64 * 0.3e-3).collect();
        let sigma = 0.01;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut r0s = Vec::new();
        let mut taus = Vec::new();
        let mut predicted = None;
        for _ in 0..400 {
            let samples: Vec<_> = times
                .iter()
                .map(|&t| DecaySample::with_sigma(t, truth.eval(t) + noise.sample(&mut rng), sigma))
                .collect();
            let fit = fit_decay(&samples).unwrap();
            predicted.get_or_insert(fit.stderr.unwrap());
            r0s.push(fit.params.r0);
            taus.push(fit.params.tau0);
        }
        let sd = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        let (p_r0, p_tau) = predicted.unwrap();
        assert!(
            (sd(&r0s) / p_r0 - 1.0).abs() < 0.15,
            "{} vs {p_r0}",
            sd(&r0s)
        );
        assert!(
            (sd(&taus) / p_tau - 1.0).abs() < 0.15,
            "{} vs {p_tau}",
            sd(&taus)
        );
    }

    fn reference_geometry() -> EnsembleGeometry {
        EnsembleGeometry {
            wavelength: 795e-9,
            temperature: 100e-6,
            atomic_mass: 87.0 * ATOMIC_MASS_UNIT,
            bd_separation: 5.5e-3,
            f_btd: 2.0,
            f0: 1.5,
        }
    }

    #[test]
    fn decay_examples() {
        let p = DecayParams::new(0.77, 1e-3).unwrap();
        assert_eq!(retrieval_decay(&p, 0.0).unwrap(), 0.77);
        // 0.77 * (exp(-0.2916) + exp(-0.54)) / 2
        let r = retrieval_decay(&p, 0.54e-3).unwrap();
        assert!((r - 0.511_979).abs() < 1e-6, "{r}");
        assert!((r - 0.50).abs() < 0.02);
        assert!((retrieval_decay(&p, 0.23e-3).unwrap() - 0.667).abs() < 0.02);
    }

    #[test]
    fn decay_rejects_bad_domain() {
        let p = DecayParams::new(0.77, 1e-3).unwrap();
        assert!(retrieval_decay(&p, -1e-6).is_err());
        assert!(DecayParams::new(0.5, 0.0).is_err());
        assert!(retrieval_decay(
            &DecayParams {
                r0: 0.5,
                tau0: -1.0
            },
            0.0
        )
        .is_err());
    }

    #[test]
    fn decay_hits_one_over_e_at_tau() {
        let p = DecayParams::new(0.63, 2.5e-3).unwrap();
        let r = retrieval_decay(&p, p.tau0).unwrap();
        assert!((r - 0.63 / std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn motional_lifetime_examples() {
        let g = reference_geometry();
        let tau = motional_lifetime(&g).unwrap();
        assert!((tau - 1.4e-3).abs() < 0.1e-3, "{tau}");

        let wide = EnsembleGeometry {
            bd_separation: 2.0 * g.bd_separation,
            ..g.clone()
        };
        let tau_wide = motional_lifetime(&wide).unwrap();
        assert!((tau_wide - 0.70e-3).abs() < 0.01e-3, "{tau_wide}");
        assert!((tau / tau_wide - 2.0).abs() < 1e-6);
    }

    #[test]
    fn motional_lifetime_temperature_angle_invariance() {
        let g = reference_geometry();
        let a = lifetime_at_angle(g.wavelength, g.temperature, g.atomic_mass, 1e-3).unwrap();
        let b =
            lifetime_at_angle(g.wavelength, 4.0 * g.temperature, g.atomic_mass, 0.5e-3).unwrap();
        assert!((a.lifetime / b.lifetime - 1.0).abs() < 1e-7);
        assert!(lifetime_at_angle(g.wavelength, 0.0, g.atomic_mass, 1e-3).is_err());
    }

    #[test]
    fn fit_three_reference_points() {
        let s = [
            DecaySample::new(0.0, 0.77),
            DecaySample::new(0.23e-3, 0.667),
            DecaySample::new(0.54e-3, 0.50),
        ];
        let fit = fit_decay(&s).unwrap();
        assert!((fit.params.r0 - 0.77).abs() < 0.03, "{:?}", fit);
        assert!((fit.params.tau0 - 1.0e-3).abs() < 0.15e-3, "{:?}", fit);
        assert!(!fit.weighted);
    }

    #[test]
    fn fit_recovers_noiseless_model() {
        let truth = DecayParams::new(0.5, 2e-3).unwrap();
        let s: Vec<_> = (0..12)
            .map(|i| {
                let t = i as f64 * 0.5e-3;
                DecaySample::new(t, truth.eval(t))
            })
            .collect();
        let fit = fit_decay(&s).unwrap();
        assert!((fit.params.r0 / 0.5 - 1.0).abs() < 1e-6, "{:?}", fit);
        assert!((fit.params.tau0 / 2e-3 - 1.0).abs() < 1e-6, "{:?}", fit);
    }

    #[test]
    fn fit_noisy_synthetic_data() {
        let truth = DecayParams::new(0.77, 1e-3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20240611);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let s: Vec<_> = (0..20)
            .map(|i| {
                let t = 3.0 * truth.tau0 * i as f64 / 19.0;
                let r = truth.eval(t);
                let sigma = 0.01 * r;
                DecaySample::with_sigma(t, r + sigma * noise.sample(&mut rng), sigma)
            })
            .collect();
        let fit = fit_decay(&s).unwrap();
        assert!(fit.weighted);
        assert!((fit.params.r0 / truth.r0 - 1.0).abs() < 0.03, "{:?}", fit);
        assert!(
            (fit.params.tau0 / truth.tau0 - 1.0).abs() < 0.03,
            "{:?}",
            fit
        );
    }

    #[test]
    fn fit_is_idempotent() {
        let s = [
            DecaySample::new(0.0, 0.77),
            DecaySample::new(0.23e-3, 0.667),
            DecaySample::new(0.54e-3, 0.50),
        ];
        let first = fit_decay(&s).unwrap().params;
        let resampled: Vec<_> = s
            .iter()
            .map(|x| DecaySample::new(x.t, first.eval(x.t)))
            .collect();
        let second = fit_decay(&resampled).unwrap().params;
        assert!((second.r0 - first.r0).abs() < 1e-9, "{first:?} {second:?}");
        assert!(
            (second.tau0 / first.tau0 - 1.0).abs() < 1e-9,
            "{first:?} {second:?}"
        );
    }

    #[test]
    fn fit_error_paths() {
        let two = [DecaySample::new(0.0, 0.7), DecaySample::new(1e-3, 0.3)];
        assert!(matches!(fit_decay(&two), Err(Error::InsufficientData(_))));
        let same = [
            DecaySample::new(1e-3, 0.7),
            DecaySample::new(1e-3, 0.6),
            DecaySample::new(1e-3, 0.5),
        ];
        assert!(matches!(fit_decay(&same), Err(Error::DegenerateData(_))));
        let mixed = [
            DecaySample::new(0.0, 0.7),
            DecaySample::with_sigma(1e-3, 0.5, 0.01),
            DecaySample::new(2e-3, 0.3),
        ];
        assert!(fit_decay(&mixed).is_err());
        let starved = fit_decay_with(
            &[
                DecaySample::new(0.0, 0.77),
                DecaySample::new(0.23e-3, 0.667),
                DecaySample::new(0.54e-3, 0.50),
            ],
            simplex::SimplexOptions {
                max_iterations: 3,
                ..Default::default()
            },
        );
        assert!(matches!(starved, Err(Error::FitFailure(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn decay_bounded_by_r0(r0 in 0.01f64..=1.0, tau in 1e-5f64..10.0, t in 1e-9f64..100.0) {
                let p = DecayParams::new(r0, tau).unwrap();
                let r = retrieval_decay(&p, t).unwrap();
                prop_assert!(r >= 0.0);
                prop_assert!(r < r0 || (t / tau) < 1e-15);
            }

            #[test]
            fn decay_strictly_decreasing(r0 in 0.01f64..=1.0, tau in 1e-4f64..1.0, a in 0.0f64..3.0, b in 1e-3f64..3.0) {
                let p = DecayParams::new(r0, tau).unwrap();
                let t1 = a * tau;
                let t2 = (a + b) * tau;
                prop_assert!(p.eval(t2) < p.eval(t1));
            }
        }
    }
}
