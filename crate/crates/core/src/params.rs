//! Configuration types for one simulated experiment and the deterministic
//! calculators derived from them: cavity escape efficiency, detection-chain
//! budget, arm coupling angle and the trial repetition rate.
//!
//! Lengths are meters, times seconds, angles radians. Efficiencies are kept
//! exactly as given; rounding only happens when a value is formatted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decoherence::DecayParams;
use crate::error::{check_positive, check_range, Error, Result};

/// Tolerance when checking an itemized loss budget against the total loss.
pub const LOSS_BUDGET_TOLERANCE: f64 = 1e-6;

/// Read-out detection chain from the cavity output coupler to the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionChain {
    /// Output-coupler transmittance.
    pub t_oc: f64,
    /// Total intracavity round-trip loss, excluding the output coupler.
    pub cavity_loss: f64,
    pub eta_smf: f64,
    pub eta_filter: f64,
    pub eta_mmf: f64,
    /// Detector quantum efficiency.
    pub eta_d: f64,
    /// Optional itemization of `cavity_loss`; must sum to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_items: Option<BTreeMap<String, f64>>,
}

impl DetectionChain {
    pub fn validate(&self) -> Result<()> {
        check_range("chain.t_oc", self.t_oc, f64::MIN_POSITIVE, 1.0)?;
        check_range("chain.cavity_loss", self.cavity_loss, 0.0, 1.0)?;
        if self.cavity_loss >= 1.0 {
            return Err(Error::domain("chain.cavity_loss must be < 1"));
        }
        for (name, v) in [
            ("chain.eta_smf", self.eta_smf),
            ("chain.eta_filter", self.eta_filter),
            ("chain.eta_mmf", self.eta_mmf),
            ("chain.eta_d", self.eta_d),
        ] {
            check_range(name, v, f64::MIN_POSITIVE, 1.0)?;
        }
        if let Some(items) = &self.loss_items {
            for (name, v) in items {
                check_range(&format!("chain.loss_items.{name}"), *v, 0.0, 1.0)?;
            }
            let sum: f64 = items.values().sum();
            if (sum - self.cavity_loss).abs() > LOSS_BUDGET_TOLERANCE {
                return Err(Error::domain(format!(
                    "itemized cavity losses sum to {sum}, expected cavity_loss = {}",
                    self.cavity_loss
                )));
            }
        }
        Ok(())
    }

    /// Transmission from the cavity to the detectors, excluding the detector.
    pub fn transmission(&self) -> f64 {
        self.eta_smf * self.eta_filter * self.eta_mmf
    }

    pub fn budget(&self) -> Result<EfficiencyBudget> {
        self.validate()?;
        let escape = cavity_escape_efficiency(self.t_oc, self.cavity_loss)?;
        let transmission = self.transmission();
        Ok(EfficiencyBudget {
            escape,
            transmission,
            detector: self.eta_d,
            total: escape * transmission * self.eta_d,
        })
    }
}

/// Factors of the detection-chain product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyBudget {
    pub escape: f64,
    pub transmission: f64,
    pub detector: f64,
    pub total: f64,
}

/// Probability that a cavity photon leaves through the output coupler.
pub fn cavity_escape_efficiency(t_oc: f64, cavity_loss: f64) -> Result<f64> {
    if !(t_oc > 0.0 && t_oc <= 1.0) {
        return Err(Error::domain(format!("t_oc = {t_oc} outside (0, 1]")));
    }
    if !(0.0..1.0).contains(&cavity_loss) {
        return Err(Error::domain(format!(
            "cavity_loss = {cavity_loss} outside [0, 1)"
        )));
    }
    Ok(t_oc / (t_oc + cavity_loss))
}

pub fn total_detection_efficiency(chain: &DetectionChain) -> Result<f64> {
    Ok(chain.budget()?.total)
}

/// Geometry of the two interferometer arms crossing the atomic ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleGeometry {
    /// Write/Stokes wavelength.
    pub wavelength: f64,
    pub temperature: f64,
    /// Atomic mass in kilograms.
    pub atomic_mass: f64,
    /// Beam-displacer arm separation D.
    pub bd_separation: f64,
    /// Beam-transformation shrink factor.
    pub f_btd: f64,
    /// Focal length of the lenses next to the ensemble.
    pub f0: f64,
}

impl EnsembleGeometry {
    pub fn validate(&self) -> Result<()> {
        check_positive("geometry.wavelength", self.wavelength)?;
        check_positive("geometry.temperature", self.temperature)?;
        check_positive("geometry.atomic_mass", self.atomic_mass)?;
        check_positive("geometry.bd_separation", self.bd_separation)?;
        check_positive("geometry.f_btd", self.f_btd)?;
        check_positive("geometry.f0", self.f0)
    }
}

/// Angle between each arm and the write beam: `D / (2 F_BTD F0)`.
pub fn coupling_angle(geom: &EnsembleGeometry) -> Result<f64> {
    check_positive("geometry.bd_separation", geom.bd_separation)?;
    check_positive("geometry.f_btd", geom.f_btd)?;
    check_positive("geometry.f0", geom.f0)?;
    Ok(geom.bd_separation / (2.0 * geom.f_btd * geom.f0))
}

/// Per-pulse source and detection parameters of the memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentParams {
    /// Excitation probability per write pulse.
    pub chi: f64,
    /// Stokes-channel background probability per pulse.
    pub noise_b: f64,
    /// Anti-Stokes-channel background probability per read pulse.
    pub noise_c: f64,
    pub eta_s: f64,
    pub eta_as: f64,
    /// Intrinsic two-photon polarization visibility.
    pub v0: f64,
    /// Summed relative phase of the Stokes and anti-Stokes arms.
    #[serde(default)]
    pub phase: f64,
    pub decay: DecayParams,
    /// Also emit two independent pairs with probability chi^2 / 2.
    #[serde(default)]
    pub double_pairs: bool,
}

impl ExperimentParams {
    pub fn validate(&self) -> Result<()> {
        check_range("experiment.chi", self.chi, 0.0, 1.0)?;
        check_range("experiment.noise_b", self.noise_b, 0.0, 1.0)?;
        check_range("experiment.noise_c", self.noise_c, 0.0, 1.0)?;
        check_range("experiment.eta_s", self.eta_s, f64::MIN_POSITIVE, 1.0)?;
        check_range("experiment.eta_as", self.eta_as, f64::MIN_POSITIVE, 1.0)?;
        check_range("experiment.v0", self.v0, 0.0, 1.0)?;
        if !self.phase.is_finite() {
            return Err(Error::domain("experiment.phase must be finite"));
        }
        self.decay.validate()?;
        let source_total = self.chi + self.noise_b + self.double_pair_probability();
        if source_total > 1.0 {
            return Err(Error::domain(format!(
                "per-pulse source probabilities sum to {source_total} > 1"
            )));
        }
        Ok(())
    }

    pub fn double_pair_probability(&self) -> f64 {
        if self.double_pairs {
            self.chi * self.chi / 2.0
        } else {
            0.0
        }
    }
}

/// Timing of one MOT-preparation plus trial-run cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleTiming {
    pub prep_duration: f64,
    pub run_duration: f64,
    /// Delay between adjacent write pulses.
    pub trial_period: f64,
    #[serde(default)]
    pub write_duration: f64,
    #[serde(default)]
    pub read_duration: f64,
    #[serde(default)]
    pub clean_duration: f64,
    #[serde(default)]
    pub interval: f64,
}

impl CycleTiming {
    /// The 42 ms / 8 ms cycle with 2 us trials.
    pub fn reference() -> Self {
        CycleTiming {
            prep_duration: 42e-3,
            run_duration: 8e-3,
            trial_period: 2000e-9,
            write_duration: 300e-9,
            read_duration: 300e-9,
            clean_duration: 200e-9,
            interval: 1300e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("timing.trial_period", self.trial_period)?;
        check_positive("timing.run_duration", self.run_duration)?;
        check_range("timing.prep_duration", self.prep_duration, 0.0, f64::MAX)?;
        for (name, v) in [
            ("timing.write_duration", self.write_duration),
            ("timing.read_duration", self.read_duration),
            ("timing.clean_duration", self.clean_duration),
            ("timing.interval", self.interval),
        ] {
            check_range(name, v, 0.0, f64::MAX)?;
        }
        Ok(())
    }

    pub fn cycle_duration(&self) -> f64 {
        self.prep_duration + self.run_duration
    }

    pub fn cycles_per_second(&self) -> f64 {
        1.0 / self.cycle_duration()
    }

    pub fn trials_per_run(&self) -> Result<u64> {
        self.validate()?;
        // Relative slack so that e.g. 8 ms / 2 us lands on 4000, not 3999.
        let ratio = self.run_duration / self.trial_period;
        let n = (ratio * (1.0 + 1e-12)).floor();
        if n < 1.0 {
            return Err(Error::domain(format!(
                "run_duration {} shorter than trial_period {}",
                self.run_duration, self.trial_period
            )));
        }
        Ok(n as u64)
    }

    /// Simulated wall time needed to execute `trials` trials.
    pub fn elapsed_for(&self, trials: u64) -> Result<f64> {
        let per_run = self.trials_per_run()?;
        let cycles = trials.div_ceil(per_run);
        Ok(cycles as f64 * self.cycle_duration())
    }
}

/// Trials per second averaged over the whole cycle.
pub fn repetition_rate(timing: &CycleTiming) -> Result<f64> {
    let n = timing.trials_per_run()?;
    Ok(n as f64 * timing.cycles_per_second())
}
