//! Polarization-projection statistics of the Stokes/anti-Stokes pair and the
//! per-pulse photon-counting probabilities.
//!
//! The pair is `(|HH> + e^{i phi} |VV>) / sqrt(2)` mixed with white noise of
//! weight `1 - V`. Detectors D1/D2 sit behind the Stokes analyzer and D3/D4
//! behind the anti-Stokes analyzer; D1-D3 and D2-D4 are the "matched" pairs.

use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::params::ExperimentParams;

/// Tolerance on the four joint outcome probabilities summing to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Analyzer angles of the Stokes and anti-Stokes channels, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSettings {
    pub theta_s: f64,
    pub theta_as: f64,
}

impl AngleSettings {
    pub fn new(theta_s: f64, theta_as: f64) -> Self {
        AngleSettings { theta_s, theta_as }
    }

    pub fn from_degrees(theta_s: f64, theta_as: f64) -> Self {
        AngleSettings::new(theta_s.to_radians(), theta_as.to_radians())
    }

    /// Analyzer-angle difference.
    pub fn delta(&self) -> f64 {
        self.theta_s - self.theta_as
    }

    /// True when both analyzers sit at 0 modulo pi.
    pub fn is_zero_basis(&self) -> bool {
        let near_zero = |a: f64| {
            let r = a.rem_euclid(std::f64::consts::PI);
            r < 1e-9 || std::f64::consts::PI - r < 1e-9
        };
        near_zero(self.theta_s) && near_zero(self.theta_as)
    }
}

/// Probabilities of the four detector-pair coincidences given a detected pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointOutcomeProbs {
    pub p13: f64,
    pub p24: f64,
    pub p14: f64,
    pub p23: f64,
}

impl JointOutcomeProbs {
    pub fn as_array(&self) -> [f64; 4] {
        [self.p13, self.p24, self.p14, self.p23]
    }

    pub fn correlation(&self) -> f64 {
        self.p13 + self.p24 - self.p14 - self.p23
    }
}

/// Projection statistics of the visibility-degraded pair at `angles`.
pub fn projection_probs(angles: &AngleSettings, visibility: f64, phase: f64) -> JointOutcomeProbs {
    let e = visibility * phase.cos() * (2.0 * angles.delta()).cos();
    let same = (1.0 + e) / 4.0;
    let crossed = (1.0 - e) / 4.0;
    JointOutcomeProbs {
        p13: same,
        p24: same,
        p14: crossed,
        p23: crossed,
    }
}

/// Per-pulse detection probabilities predicted for one storage time and
/// analyzer setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardProbs {
    /// Retrieval efficiency at the storage time.
    pub retrieval: f64,
    /// Stokes singles `(chi + B) eta_S`.
    pub p_s: f64,
    /// Anti-Stokes singles `(chi R + C) eta_aS`.
    pub p_as: f64,
    /// Unresolved coincidence `chi R eta_S eta_aS + P_S P_aS`.
    pub p_s_as: f64,
    pub p_d1: f64,
    pub p_d2: f64,
    pub p_d3: f64,
    pub p_d4: f64,
    /// Coincidence probability per detector pair.
    pub coincidences: JointOutcomeProbs,
}

pub fn forward_count_probs(
    params: &ExperimentParams,
    t: f64,
    angles: &AngleSettings,
) -> Result<ForwardProbs> {
    params.validate()?;
    let retrieval = crate::decoherence::retrieval_decay(&params.decay, t)?;
    let chi = params.chi;
    let p_s = (chi + params.noise_b) * params.eta_s;
    let p_as = (chi * retrieval + params.noise_c) * params.eta_as;
    let correlated = chi * retrieval * params.eta_s * params.eta_as;
    let accidental = p_s * p_as;
    let pair = projection_probs(angles, params.v0, params.phase);
    let split = |p: f64| correlated * p + accidental / 4.0;
    let coincidences = JointOutcomeProbs {
        p13: split(pair.p13),
        p24: split(pair.p24),
        p14: split(pair.p14),
        p23: split(pair.p23),
    };
    let out = ForwardProbs {
        retrieval,
        p_s,
        p_as,
        p_s_as: correlated + accidental,
        p_d1: p_s / 2.0,
        p_d2: p_s / 2.0,
        p_d3: p_as / 2.0,
        p_d4: p_as / 2.0,
        coincidences,
    };
    for (name, v) in [
        ("P_S", out.p_s),
        ("P_aS", out.p_as),
        ("P_S,aS", out.p_s_as),
        ("P_13", coincidences.p13),
        ("P_24", coincidences.p24),
        ("P_14", coincidences.p14),
        ("P_23", coincidences.p23),
    ] {
        check_range(name, v, 0.0, 1.0).map_err(|e| Error::Contract(e.to_string()))?;
    }
    Ok(out)
}
