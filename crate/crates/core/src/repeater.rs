//! Mean-rate model of a multiplexed, nested DLCZ-type quantum repeater.
//!
//! With `L0 = L / divisor` and `T_cc = L0 / c`:
//!
//! ```text
//! P0     = chi^2 exp(-L0/L_att) eta_FC^2 eta_TD^2 / 2
//! P0^(N) = 1 - (1 - P0)^N
//! t0     = T_cc / P0^(N)
//! P_j    = (R0 exp(-t_{j-1}/tau0))^2 eta_TD^2 / 2,   t_j = t_{j-1} / P_j
//! P_pr   = (R0 exp(-t_n/tau0))^2 / 2
//! rate   = P0^(N) (prod P_j) P_pr / T_cc
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, check_range, Error, Result};

/// Largest `t / tau0` evaluated before the rate is reported as exactly 0.
pub const DECAY_EXPONENT_LIMIT: f64 = 700.0;

/// How the total distance is split into elementary links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinkDivisor {
    /// `2^n` elementary links for nest level `n`.
    #[default]
    PowerOfTwo,
    /// `n` elementary links.
    NestLevel,
}

impl LinkDivisor {
    pub fn links(self, nest_level: u32) -> u64 {
        match self {
            LinkDivisor::PowerOfTwo => 1u64 << nest_level,
            LinkDivisor::NestLevel => nest_level.max(1) as u64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LinkDivisor::PowerOfTwo => "power_of_two",
            LinkDivisor::NestLevel => "nest_level",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeaterParams {
    pub nest_level: u32,
    /// Memory modes per node.
    pub modes: u64,
    /// Total distance in meters.
    pub distance: f64,
    pub attenuation_length: f64,
    pub fiber_speed: f64,
    pub chi: f64,
    pub eta_fc: f64,
    pub eta_td: f64,
    pub r0: f64,
    /// Memory 1/e lifetime; `inf` disables decay.
    pub tau0: f64,
    #[serde(default)]
    pub link_divisor: LinkDivisor,
    /// Use `N P0` instead of the exact multiplexed success probability.
    #[serde(default)]
    pub linear_multiplexing: bool,
}

impl RepeaterParams {
    pub fn validate(&self) -> Result<()> {
        if self.nest_level > 62 {
            return Err(Error::domain("nest_level must be <= 62"));
        }
        if self.modes == 0 {
            return Err(Error::domain("modes must be >= 1"));
        }
        check_positive("repeater.distance", self.distance)?;
        check_positive("repeater.attenuation_length", self.attenuation_length)?;
        check_positive("repeater.fiber_speed", self.fiber_speed)?;
        check_range("repeater.chi", self.chi, f64::MIN_POSITIVE, 1.0)?;
        check_range("repeater.eta_fc", self.eta_fc, f64::MIN_POSITIVE, 1.0)?;
        check_range("repeater.eta_td", self.eta_td, f64::MIN_POSITIVE, 1.0)?;
        check_range("repeater.r0", self.r0, f64::MIN_POSITIVE, 1.0)?;
        if !(self.tau0 > 0.0) {
            return Err(Error::domain(format!(
                "repeater.tau0 = {} must be > 0",
                self.tau0
            )));
        }
        Ok(())
    }

    pub fn with_distance(&self, distance: f64) -> Self {
        RepeaterParams {
            distance,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementaryProbs {
    pub link_length: f64,
    pub t_cc: f64,
    pub p0: f64,
    pub p0_multiplexed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateBreakdown {
    pub elementary: ElementaryProbs,
    /// `P_1 .. P_n`.
    pub swap_probs: Vec<f64>,
    /// `t_0 .. t_n`.
    pub stage_times: Vec<f64>,
    pub p_pr: f64,
    /// Pairs per second.
    pub rate: f64,
    /// Set when a stage time exceeded the decay guard and `rate` is 0.
    pub underflow: bool,
}

pub fn elementary_probs(p: &RepeaterParams) -> Result<ElementaryProbs> {
    p.validate()?;
    let link_length = p.distance / p.link_divisor.links(p.nest_level) as f64;
    let t_cc = link_length / p.fiber_speed;
    let p0 = p.chi.powi(2)
        * (-link_length / p.attenuation_length).exp()
        * p.eta_fc.powi(2)
        * p.eta_td.powi(2)
        / 2.0;
    if p0 > 1.0 {
        return Err(Error::domain(format!("P0 = {p0} exceeds 1")));
    }
    let p0_multiplexed = if p.linear_multiplexing {
        p.modes as f64 * p0
    } else {
        // 1 - (1 - P0)^N without cancellation for tiny P0.
        -((p.modes as f64) * (-p0).ln_1p()).exp_m1()
    };
    Ok(ElementaryProbs {
        link_length,
        t_cc,
        p0,
        p0_multiplexed,
    })
}

fn decay_factor(r0: f64, t: f64, tau0: f64) -> f64 {
    r0 * (-t / tau0).exp()
}

/// Evaluates the swap recursion and the final distribution rate.
pub fn swap_chain(p: &RepeaterParams) -> Result<RateBreakdown> {
    let elementary = elementary_probs(p)?;
    let n = p.nest_level as usize;
    let mut swap_probs = Vec::with_capacity(n);
    let mut stage_times = Vec::with_capacity(n + 1);
    let underflowed = |elementary, swap_probs, stage_times| RateBreakdown {
        elementary,
        swap_probs,
        stage_times,
        p_pr: 0.0,
        rate: 0.0,
        underflow: true,
    };

    let mut t = elementary.t_cc / elementary.p0_multiplexed;
    stage_times.push(t);
    for _ in 0..n {
        if !(t / p.tau0 <= DECAY_EXPONENT_LIMIT) {
            return Ok(underflowed(elementary, swap_probs, stage_times));
        }
        let pj = decay_factor(p.r0, t, p.tau0).powi(2) * p.eta_td.powi(2) / 2.0;
        swap_probs.push(pj);
        t /= pj;
        stage_times.push(t);
    }
    if !(t / p.tau0 <= DECAY_EXPONENT_LIMIT) {
        return Ok(underflowed(elementary, swap_probs, stage_times));
    }
    let p_pr = decay_factor(p.r0, t, p.tau0).powi(2) / 2.0;
    let rate =
        elementary.p0_multiplexed * swap_probs.iter().product::<f64>() * p_pr / elementary.t_cc;
    Ok(RateBreakdown {
        elementary,
        swap_probs,
        stage_times,
        p_pr,
        rate,
        underflow: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    Linear,
    #[default]
    Log,
}

impl Grid {
    pub fn points(self, lo: f64, hi: f64, steps: usize) -> Vec<f64> {
        let last = (steps - 1) as f64;
        (0..steps)
            .map(|i| {
                let f = i as f64 / last;
                if i + 1 == steps {
                    hi
                } else {
                    match self {
                        Grid::Linear => lo + (hi - lo) * f,
                        Grid::Log => lo * (hi / lo).powf(f),
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub points: Vec<RateBreakdown>,
    pub distances: Vec<f64>,
    /// Some later point has a larger rate than an earlier one.
    pub non_monotone: bool,
}

/// Rate on a grid of distances in `[l_min, l_max]`.
pub fn sweep_distance(
    p: &RepeaterParams,
    l_min: f64,
    l_max: f64,
    steps: usize,
    grid: Grid,
) -> Result<Sweep> {
    check_positive("l_min", l_min)?;
    check_positive("l_max", l_max)?;
    if l_max < l_min {
        return Err(Error::domain("l_max must be >= l_min"));
    }
    if steps < 2 {
        return Err(Error::domain("a sweep needs at least 2 steps"));
    }
    let distances = grid.points(l_min, l_max, steps);
    let points = distances
        .par_iter()
        .map(|&l| swap_chain(&p.with_distance(l)))
        .collect::<Result<Vec<_>>>()?;
    let non_monotone = points.windows(2).any(|w| w[1].rate > w[0].rate);
    Ok(Sweep {
        points,
        distances,
        non_monotone,
    })
}

fn bisect<F: Fn(f64) -> Result<bool>>(mut lo: f64, mut hi: f64, above: F) -> Result<f64> {
    // Invariant: above(lo) == false, above(hi) == true, on a log scale.
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if above(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Smallest excitation probability in `[1e-9, 1]` reaching `target_rate`
/// at the configured distance.
pub fn calibrate_chi(p: &RepeaterParams, target_rate: f64) -> Result<f64> {
    check_positive("target_rate", target_rate)?;
    let reaches = |chi: f64| -> Result<bool> {
        Ok(swap_chain(&RepeaterParams { chi, ..p.clone() })?.rate >= target_rate)
    };
    let (lo, hi) = (1e-9, 1.0);
    if !reaches(hi)? {
        return Err(Error::domain(format!(
            "rate {target_rate} not reachable with chi <= 1"
        )));
    }
    if reaches(lo)? {
        return Ok(lo);
    }
    bisect(lo, hi, reaches)
}

/// Largest distance in `[l_lo, l_hi]` at which the rate still reaches
/// `target_rate`, assuming the rate decreases with distance.
pub fn threshold_distance(
    p: &RepeaterParams,
    target_rate: f64,
    l_lo: f64,
    l_hi: f64,
) -> Result<f64> {
    check_positive("target_rate", target_rate)?;
    let below =
        |l: f64| -> Result<bool> { Ok(swap_chain(&p.with_distance(l))?.rate < target_rate) };
    if below(l_lo)? {
        return Err(Error::domain(format!(
            "rate already below {target_rate} at {l_lo} m"
        )));
    }
    if !below(l_hi)? {
        return Err(Error::domain(format!(
            "rate still above {target_rate} at {l_hi} m"
        )));
    }
    bisect(l_lo, l_hi, below)
}

/// Rate level used to anchor the four-level, 1000-mode repeater curve.
pub const FIG8_ANCHOR_RATE: f64 = 1e-4;
pub const FIG8_ANCHOR_DISTANCE: f64 = 1000e3;
/// Excitation probability placing the R0 = 0.8 curve at 1e-4 pairs/s at
/// 1000 km. Obtained with [`calibrate_chi`]; not a measured value.
pub const FIG8_CALIBRATED_CHI: f64 = 0.045_226_195_313_5;

/// Four-level repeater with 1000 modes, 16 s memories, 88% detection and
/// 33% frequency conversion, for the given zero-delay retrieval.
pub fn fig8_preset(r0: f64) -> RepeaterParams {
    RepeaterParams {
        nest_level: 4,
        modes: 1000,
        distance: FIG8_ANCHOR_DISTANCE,
        attenuation_length: 22e3,
        fiber_speed: 2e8,
        chi: FIG8_CALIBRATED_CHI,
        eta_fc: 0.33,
        eta_td: 0.88,
        r0,
        tau0: 16.0,
        link_divisor: LinkDivisor::PowerOfTwo,
        linear_multiplexing: false,
    }
}

/// Zero-delay retrieval efficiencies of the two default sweep curves.
pub const FIG8_CURVES: [f64; 2] = [0.8, 0.6];
