//! Measurement-side formulas: retrieval efficiencies, the correlation
//! function, the CHSH parameter, visibility, fidelity, and Poissonian
//! Monte-Carlo error bars.

use std::f64::consts::SQRT_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entanglement::AngleSettings;
use crate::error::{Error, Result};
use crate::mc::CountsTable;

/// Default number of Poisson replicas for error bars.
pub const DEFAULT_REPLICAS: usize = 10_000;
pub const MIN_REPLICAS: usize = 100;
/// Largest tolerated fraction of failing replicas.
pub const MAX_FAILED_FRACTION: f64 = 0.01;

/// The four analyzer angles of a CHSH measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellSettings {
    pub theta_s: f64,
    pub theta_s_prime: f64,
    pub theta_as: f64,
    pub theta_as_prime: f64,
}

impl BellSettings {
    /// 0, 45, 22.5 and 67.5 degrees.
    pub fn canonical() -> Self {
        BellSettings {
            theta_s: 0.0,
            theta_s_prime: 45f64.to_radians(),
            theta_as: 22.5f64.to_radians(),
            theta_as_prime: 67.5f64.to_radians(),
        }
    }

    /// Settings in the order `(s, as), (s, as'), (s', as), (s', as')`.
    pub fn combinations(&self) -> [AngleSettings; 4] {
        [
            AngleSettings::new(self.theta_s, self.theta_as),
            AngleSettings::new(self.theta_s, self.theta_as_prime),
            AngleSettings::new(self.theta_s_prime, self.theta_as),
            AngleSettings::new(self.theta_s_prime, self.theta_as_prime),
        ]
    }

    /// Picks the table for each combination from `tables`, matching angles
    /// modulo pi.
    pub fn arrange(&self, tables: &[CountsTable]) -> Option<[CountsTable; 4]> {
        let same = |a: f64, b: f64| {
            let d = (a - b).rem_euclid(std::f64::consts::PI);
            d < 1e-9 || std::f64::consts::PI - d < 1e-9
        };
        let mut out = Vec::with_capacity(4);
        for want in self.combinations() {
            let hit = tables.iter().find(|t| {
                same(t.settings.theta_s, want.theta_s) && same(t.settings.theta_as, want.theta_as)
            })?;
            out.push(*hit);
        }
        out.try_into().ok()
    }
}

/// A point estimate with its one-standard-deviation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub sigma: f64,
}

impl EstimateWithError {
    /// Distance above `bound` in units of sigma.
    pub fn sigmas_above(&self, bound: f64) -> f64 {
        (self.value - bound) / self.sigma
    }
}

/// Storage mode of an individual spin wave.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Detector pair D1-D3.
    L,
    /// Detector pair D2-D4.
    R,
}

fn check_eta(eta_td: f64) -> Result<()> {
    if eta_td > 0.0 && eta_td <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("eta_td = {eta_td} outside (0, 1]")))
    }
}

fn check_pulses(counts: &CountsTable) -> Result<f64> {
    if counts.n_pulses == 0 {
        return Err(Error::InsufficientData("table has zero pulses".into()));
    }
    Ok(counts.n_pulses as f64)
}

/// Matched coincidences over Stokes singles, divided by `eta_td`.
pub fn intrinsic_retrieval_qubit(counts: &CountsTable, eta_td: f64) -> Result<f64> {
    check_eta(eta_td)?;
    let n = check_pulses(counts)?;
    let singles = counts.stokes_singles();
    if singles == 0 {
        return Err(Error::InsufficientData("no Stokes singles".into()));
    }
    let p_pair = (counts.c13 + counts.c24) as f64 / n;
    let p_s = singles as f64 / n;
    Ok(p_pair / (eta_td * p_s))
}

pub fn intrinsic_retrieval_mode(counts: &CountsTable, mode: Mode, eta_td: f64) -> Result<f64> {
    check_eta(eta_td)?;
    let n = check_pulses(counts)?;
    let (coinc, singles, name) = match mode {
        Mode::L => (counts.c13, counts.n_d1, "D1"),
        Mode::R => (counts.c24, counts.n_d2, "D2"),
    };
    if singles == 0 {
        return Err(Error::InsufficientData(format!("no singles on {name}")));
    }
    Ok((coinc as f64 / n) / (eta_td * singles as f64 / n))
}

/// Intrinsic and net retrieval efficiency after removing background and
/// accidental coincidences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundCorrected {
    pub r_inc: f64,
    pub r_net: f64,
    /// The corrected numerator was negative and the result clamped to 0.
    pub clamped: bool,
}

/// `R_inc = (P_S,aS - P_S P_aS) / ((P_S - B eta_S) eta_aS)`, `R_net = R_inc eta_aS`.
pub fn retrieval_background_corrected(
    p_s_as: f64,
    p_s: f64,
    p_as: f64,
    noise_b: f64,
    eta_s: f64,
    eta_as: f64,
) -> Result<BackgroundCorrected> {
    for (name, v) in [
        ("P_S,aS", p_s_as),
        ("P_S", p_s),
        ("P_aS", p_as),
        ("B", noise_b),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(format!("{name} = {v} outside [0, 1]")));
        }
    }
    check_eta(eta_s)?;
    check_eta(eta_as)?;
    let heralds = p_s - noise_b * eta_s;
    let denom = heralds * eta_as;
    if !(denom > 0.0) {
        return Err(Error::domain(format!(
            "P_S - B eta_S = {heralds} leaves no heralded pairs"
        )));
    }
    let numerator = p_s_as - p_s * p_as;
    let clamped = numerator < 0.0;
    let r_inc = numerator.max(0.0) / denom;
    Ok(BackgroundCorrected {
        r_inc,
        r_net: r_inc * eta_as,
        clamped,
    })
}

/// `E = (C13 + C24 - C14 - C23) / (C13 + C24 + C14 + C23)`.
pub fn correlation_e(counts: &CountsTable) -> Result<f64> {
    let total = counts.total_coincidences();
    if total == 0 {
        return Err(Error::InsufficientData("no coincidences".into()));
    }
    let same = (counts.c13 + counts.c24) as f64;
    let crossed = (counts.c14 + counts.c23) as f64;
    Ok((same - crossed) / total as f64)
}

/// `E(s,as) - E(s,as') + E(s',as) + E(s',as')` for tables ordered as
/// [`BellSettings::combinations`].
pub fn bell_s_signed(tables: &[CountsTable]) -> Result<f64> {
    if tables.len() != 4 {
        return Err(Error::InsufficientData(format!(
            "CHSH needs 4 tables, got {}",
            tables.len()
        )));
    }
    let e = tables
        .iter()
        .map(correlation_e)
        .collect::<Result<Vec<_>>>()?;
    Ok(e[0] - e[1] + e[2] + e[3])
}

pub fn bell_s_value(tables: &[CountsTable]) -> Result<f64> {
    Ok(bell_s_signed(tables)?.abs())
}

/// Unsigned CHSH parameter with a Poisson Monte-Carlo error bar.
pub fn bell_s(
    tables: &[CountsTable; 4],
    n_replicas: usize,
    seed: u64,
) -> Result<EstimateWithError> {
    poisson_error(bell_s_value, tables, n_replicas, seed)
}

/// `V = S / (2 sqrt 2)`.
pub fn visibility_from_s(s: f64) -> f64 {
    s / (2.0 * SQRT_2)
}

/// `F = (3 V + 1) / 4` with `V = S / (2 sqrt 2)`.
pub fn fidelity_from_s(s: f64) -> f64 {
    (3.0 * visibility_from_s(s) + 1.0) / 4.0
}

fn resample(table: &CountsTable, rng: &mut ChaCha8Rng) -> CountsTable {
    let mut draw = |mean: u64| -> u64 {
        if mean == 0 {
            return 0;
        }
        // Poisson::new only fails for non-positive or non-finite means.
        let dist = Poisson::new(mean as f64).expect("positive Poisson mean");
        dist.sample(rng) as u64
    };
    CountsTable {
        n_d1: draw(table.n_d1),
        n_d2: draw(table.n_d2),
        c13: draw(table.c13),
        c24: draw(table.c24),
        c14: draw(table.c14),
        c23: draw(table.c23),
        ..*table
    }
}

/// Poissonian Monte-Carlo error of `estimator` evaluated on `counts`.
///
/// Each replica redraws every raw count from a Poisson law centered on the
/// observed value (pulse numbers are kept) on its own keystream. The result
/// pairs the estimate on the original counts with the standard deviation
/// over replicas. Replicas on which the estimator fails are dropped, unless
/// they exceed 1% of the total.
pub fn poisson_error<F>(
    estimator: F,
    counts: &[CountsTable],
    n_replicas: usize,
    seed: u64,
) -> Result<EstimateWithError>
where
    F: Fn(&[CountsTable]) -> Result<f64> + Sync,
{
    if n_replicas < MIN_REPLICAS {
        return Err(Error::domain(format!(
            "need at least {MIN_REPLICAS} replicas, got {n_replicas}"
        )));
    }
    let value = estimator(counts)?;
    let outcomes: Vec<Result<f64>> = (0..n_replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let replica: Vec<CountsTable> = counts.iter().map(|t| resample(t, &mut rng)).collect();
            estimator(&replica)
        })
        .collect();

    let mut values = Vec::with_capacity(n_replicas);
    let mut failed = 0;
    let mut first_error = None;
    for o in outcomes {
        match o {
            Ok(v) => values.push(v),
            Err(e) => {
                failed += 1;
                first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if failed as f64 > MAX_FAILED_FRACTION * n_replicas as f64 {
        return Err(Error::DegenerateStatistics {
            failed,
            total: n_replicas,
            first: first_error.unwrap_or_default(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(EstimateWithError {
        value,
        sigma: var.sqrt(),
    })
}
