//! Trial-level Monte-Carlo of the write / feed-forward / read cycle.
//!
//! Every trial draws from its own fixed window of a ChaCha8 keystream,
//! addressed by `(seed, stream, trial_index)`. Trials therefore do not
//! depend on execution order, and the per-setting counts are integer sums
//! which merge identically for any degree of parallelism.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entanglement::{projection_probs, AngleSettings};
use crate::error::{Error, Result};
use crate::params::{CycleTiming, ExperimentParams};

/// Uniform draws consumed by every trial, used or not.
pub const DRAWS_PER_TRIAL: usize = 12;
const WORDS_PER_TRIAL: u128 = 2 * DRAWS_PER_TRIAL as u128;
const CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StokesDetector {
    D1,
    D2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AntiStokesDetector {
    D3,
    D4,
}

/// Outcome of one write/read trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    pub trial_index: u64,
    pub storage_time: f64,
    pub stokes_click: Option<StokesDetector>,
    pub antistokes_click: Option<AntiStokesDetector>,
    /// Ground truth: at least one Stokes/spin-wave pair was created.
    pub pair_created: bool,
}

impl TrialRecord {
    /// The read pulse only fires after a heralding Stokes click.
    pub fn read_fired(&self) -> bool {
        self.stokes_click.is_some()
    }
}

/// Singles and coincidence counts for one analyzer setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountsTable {
    pub settings: AngleSettings,
    /// Storage time the table was recorded at, when known.
    pub storage_time: Option<f64>,
    pub n_pulses: u64,
    pub n_d1: u64,
    pub n_d2: u64,
    pub c13: u64,
    pub c24: u64,
    pub c14: u64,
    pub c23: u64,
}

impl CountsTable {
    pub fn empty(settings: AngleSettings, storage_time: Option<f64>) -> Self {
        CountsTable {
            settings,
            storage_time,
            n_pulses: 0,
            n_d1: 0,
            n_d2: 0,
            c13: 0,
            c24: 0,
            c14: 0,
            c23: 0,
        }
    }

    pub fn record(&mut self, trial: &TrialRecord) {
        use AntiStokesDetector::*;
        use StokesDetector::*;
        self.n_pulses += 1;
        match trial.stokes_click {
            Some(D1) => self.n_d1 += 1,
            Some(D2) => self.n_d2 += 1,
            None => {}
        }
        match (trial.stokes_click, trial.antistokes_click) {
            (Some(D1), Some(D3)) => self.c13 += 1,
            (Some(D2), Some(D4)) => self.c24 += 1,
            (Some(D1), Some(D4)) => self.c14 += 1,
            (Some(D2), Some(D3)) => self.c23 += 1,
            _ => {}
        }
    }

    /// Adds the counts of `other`, which must share this table's setting.
    pub fn merge(&mut self, other: &CountsTable) {
        self.n_pulses += other.n_pulses;
        self.n_d1 += other.n_d1;
        self.n_d2 += other.n_d2;
        self.c13 += other.c13;
        self.c24 += other.c24;
        self.c14 += other.c14;
        self.c23 += other.c23;
    }

    pub fn total_coincidences(&self) -> u64 {
        self.c13 + self.c24 + self.c14 + self.c23
    }

    pub fn stokes_singles(&self) -> u64 {
        self.n_d1 + self.n_d2
    }

    /// Checks that counts are consistent: coincidences never exceed the
    /// singles of their Stokes detector, singles never exceed pulses.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if self.c13 + self.c14 > self.n_d1 {
            return bad(format!(
                "c13 + c14 = {} exceeds n_d1 = {}",
                self.c13 + self.c14,
                self.n_d1
            ));
        }
        if self.c24 + self.c23 > self.n_d2 {
            return bad(format!(
                "c24 + c23 = {} exceeds n_d2 = {}",
                self.c24 + self.c23,
                self.n_d2
            ));
        }
        if self.n_d1 + self.n_d2 > self.n_pulses {
            return bad(format!(
                "Stokes singles {} exceed n_pulses = {}",
                self.n_d1 + self.n_d2,
                self.n_pulses
            ));
        }
        Ok(())
    }

    /// Multiplies every count and the pulse number by `k`.
    pub fn scaled(&self, k: u64) -> Self {
        CountsTable {
            n_pulses: self.n_pulses * k,
            n_d1: self.n_d1 * k,
            n_d2: self.n_d2 * k,
            c13: self.c13 * k,
            c24: self.c24 * k,
            c14: self.c14 * k,
            c23: self.c23 * k,
            ..*self
        }
    }
}

/// Per-trial probabilities for one (params, storage time, setting).
#[derive(Debug, Clone, Copy)]
pub struct TrialModel {
    storage_time: f64,
    p_double: f64,
    chi: f64,
    noise_b: f64,
    eta_s: f64,
    /// Cumulative probabilities of outcomes 13, 24, 14 (23 is the rest).
    outcome_cdf: [f64; 3],
    /// Retrieval times anti-Stokes detection efficiency.
    p_retrieve: f64,
    /// Anti-Stokes background click per read.
    p_background: f64,
}

#[derive(Clone, Copy)]
struct PairOutcome {
    stokes: StokesDetector,
    anti_stokes: AntiStokesDetector,
}

impl TrialModel {
    pub fn new(params: &ExperimentParams, t: f64, angles: &AngleSettings) -> Result<Self> {
        params.validate()?;
        let r = crate::decoherence::retrieval_decay(&params.decay, t)?;
        let joint = projection_probs(angles, params.v0, params.phase);
        Ok(TrialModel {
            storage_time: t,
            p_double: params.double_pair_probability(),
            chi: params.chi,
            noise_b: params.noise_b,
            eta_s: params.eta_s,
            outcome_cdf: [
                joint.p13,
                joint.p13 + joint.p24,
                joint.p13 + joint.p24 + joint.p14,
            ],
            p_retrieve: r * params.eta_as,
            p_background: params.noise_c * params.eta_as,
        })
    }

    fn outcome(&self, u: f64) -> PairOutcome {
        use AntiStokesDetector::*;
        use StokesDetector::*;
        let (stokes, anti_stokes) = if u < self.outcome_cdf[0] {
            (D1, D3)
        } else if u < self.outcome_cdf[1] {
            (D2, D4)
        } else if u < self.outcome_cdf[2] {
            (D1, D4)
        } else {
            (D2, D3)
        };
        PairOutcome {
            stokes,
            anti_stokes,
        }
    }

    /// Runs one trial from its block of uniforms.
    fn sample(&self, trial_index: u64, u: &[f64; DRAWS_PER_TRIAL]) -> TrialRecord {
        let mut pairs: [Option<PairOutcome>; 2] = [None, None];
        let mut noise_photon = false;
        let src = u[0];
        if src < self.p_double {
            pairs = [Some(self.outcome(u[1])), Some(self.outcome(u[3]))];
        } else if src < self.p_double + self.chi {
            pairs[0] = Some(self.outcome(u[1]));
        } else if src < self.p_double + self.chi + self.noise_b {
            noise_photon = true;
        }

        // Which source heralds: pair 0, pair 1, or a background photon.
        let detected = [u[2] < self.eta_s, u[4] < self.eta_s];
        let mut herald_pair = None;
        let mut stokes_click = None;
        for (k, pair) in pairs.iter().enumerate() {
            if let (Some(p), true) = (pair, detected[k]) {
                herald_pair = Some(k);
                stokes_click = Some(p.stokes);
                break;
            }
        }
        if noise_photon && u[2] < self.eta_s {
            stokes_click = Some(if u[5] < 0.5 {
                StokesDetector::D1
            } else {
                StokesDetector::D2
            });
        }

        let mut antistokes_click = None;
        if stokes_click.is_some() {
            // Heralded spin wave first, then any other stored spin wave,
            // then read-beam leakage.
            let order = match herald_pair {
                Some(1) => [1usize, 0],
                _ => [0, 1],
            };
            let retrieve_draw = [u[6], u[7]];
            for (slot, &k) in order.iter().enumerate() {
                if let Some(p) = pairs[k] {
                    if retrieve_draw[slot] < self.p_retrieve {
                        antistokes_click = Some(p.anti_stokes);
                        break;
                    }
                }
            }
            if antistokes_click.is_none() && u[8] < self.p_background {
                antistokes_click = Some(if u[9] < 0.5 {
                    AntiStokesDetector::D3
                } else {
                    AntiStokesDetector::D4
                });
            }
        }

        TrialRecord {
            trial_index,
            storage_time: self.storage_time,
            stokes_click,
            antistokes_click,
            pair_created: pairs[0].is_some(),
        }
    }
}

/// Keystream positioned at the first draw of `trial_index`.
pub fn trial_stream(seed: u64, stream: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(trial_index as u128 * WORDS_PER_TRIAL);
    rng
}

fn draw_block<R: Rng>(rng: &mut R) -> [f64; DRAWS_PER_TRIAL] {
    let mut u = [0.0; DRAWS_PER_TRIAL];
    for x in u.iter_mut() {
        *x = rng.gen::<f64>();
    }
    u
}

/// Runs one trial reading from `rng`, which must be positioned at the
/// trial's window (see [`trial_stream`]).
pub fn run_trial<R: Rng>(
    params: &ExperimentParams,
    t: f64,
    angles: &AngleSettings,
    trial_index: u64,
    rng: &mut R,
) -> Result<TrialRecord> {
    let model = TrialModel::new(params, t, angles)?;
    Ok(model.sample(trial_index, &draw_block(rng)))
}

/// Records for the global trial indices in `range`.
pub fn trial_records(
    model: &TrialModel,
    seed: u64,
    stream: u64,
    range: Range<u64>,
) -> Vec<TrialRecord> {
    let mut rng = trial_stream(seed, stream, range.start);
    range
        .map(|i| model.sample(i, &draw_block(&mut rng)))
        .collect()
}

fn count_range(
    model: &TrialModel,
    table: &mut CountsTable,
    seed: u64,
    stream: u64,
    range: Range<u64>,
) {
    // Consecutive trials occupy consecutive windows, so one seek suffices.
    let mut rng = trial_stream(seed, stream, range.start);
    for i in range {
        let rec = model.sample(i, &draw_block(&mut rng));
        table.record(&rec);
    }
}

/// Tables for every setting plus the simulated wall-clock time.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub tables: Vec<CountsTable>,
    pub elapsed: f64,
}

/// Simulates `n_trials_per_setting` trials for each analyzer setting.
///
/// Setting `k` uses global trial indices `k*n .. (k+1)*n`. Work is split
/// into chunks on the current rayon pool.
pub fn run_experiment(
    params: &ExperimentParams,
    timing: &CycleTiming,
    t: f64,
    angle_list: &[AngleSettings],
    n_trials_per_setting: u64,
    seed: u64,
) -> Result<ExperimentRun> {
    run_experiment_on_stream(params, timing, t, angle_list, n_trials_per_setting, seed, 0)
}

/// As [`run_experiment`] on an independent keystream, e.g. one per storage time.
pub fn run_experiment_on_stream(
    params: &ExperimentParams,
    timing: &CycleTiming,
    t: f64,
    angle_list: &[AngleSettings],
    n_trials_per_setting: u64,
    seed: u64,
    stream: u64,
) -> Result<ExperimentRun> {
    if angle_list.is_empty() {
        return Err(Error::Config("angle list is empty".into()));
    }
    if n_trials_per_setting == 0 {
        return Err(Error::Config("trials per setting must be > 0".into()));
    }
    let total = n_trials_per_setting
        .checked_mul(angle_list.len() as u64)
        .ok_or_else(|| Error::Config("trial count overflows".into()))?;
    let elapsed = timing.elapsed_for(total)?;

    let mut tables = Vec::with_capacity(angle_list.len());
    for (k, angles) in angle_list.iter().enumerate() {
        let model = TrialModel::new(params, t, angles)?;
        let start = k as u64 * n_trials_per_setting;
        let end = start + n_trials_per_setting;
        let n_chunks = (end - start).div_ceil(CHUNK);
        let empty = CountsTable::empty(*angles, Some(t));
        let table = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let lo = start + c * CHUNK;
                let hi = (lo + CHUNK).min(end);
                let mut part = empty;
                count_range(&model, &mut part, seed, stream, lo..hi);
                part
            })
            .reduce(
                || empty,
                |mut a, b| {
                    a.merge(&b);
                    a
                },
            );
        tables.push(table);
    }
    Ok(ExperimentRun { tables, elapsed })
}
