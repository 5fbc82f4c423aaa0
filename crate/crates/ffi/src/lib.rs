//! C ABI over `dlcz-core`.
//!
//! Every fallible function returns a [`DlczStatus`]; on failure the message
//! is kept per thread and can be read with [`dlcz_last_error`]. Panics are
//! caught at the boundary and reported as `DLCZ_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dlcz_core::config::LoadedConfig;
use dlcz_core::decoherence::{
    fit_decay, motional_lifetime_detail, retrieval_decay, DecayParams, DecaySample,
};
use dlcz_core::entanglement::AngleSettings;
use dlcz_core::error::Error;
use dlcz_core::estimators::{bell_s, correlation_e, fidelity_from_s, visibility_from_s};
use dlcz_core::mc::{run_experiment, CountsTable};
use dlcz_core::repeater::{swap_chain, RepeaterParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlczStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid parameter, configuration or input data.
    Validation = 2,
    /// Insufficient data, failed fit or degenerate statistics.
    Numeric = 3,
    Io = 4,
    Panic = 5,
}

/// Opaque parsed configuration.
pub struct DlczConfig {
    inner: LoadedConfig,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DlczBudget {
    pub escape: f64,
    pub transmission: f64,
    pub detector: f64,
    pub total: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DlczLifetime {
    pub angle_rad: f64,
    pub lifetime_s: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DlczDecayFit {
    pub r0: f64,
    pub tau0: f64,
    pub residual: f64,
    /// NaN when unavailable.
    pub r0_sigma: f64,
    /// NaN when unavailable.
    pub tau0_sigma: f64,
}

/// Counts for one analyzer setting. `storage_time` is NaN when unknown.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DlczCounts {
    pub theta_s: f64,
    pub theta_as: f64,
    pub storage_time: f64,
    pub n_pulses: u64,
    pub n_d1: u64,
    pub n_d2: u64,
    pub c13: u64,
    pub c24: u64,
    pub c14: u64,
    pub c23: u64,
}

impl From<&CountsTable> for DlczCounts {
    fn from(t: &CountsTable) -> Self {
        DlczCounts {
            theta_s: t.settings.theta_s,
            theta_as: t.settings.theta_as,
            storage_time: t.storage_time.unwrap_or(f64::NAN),
            n_pulses: t.n_pulses,
            n_d1: t.n_d1,
            n_d2: t.n_d2,
            c13: t.c13,
            c24: t.c24,
            c14: t.c14,
            c23: t.c23,
        }
    }
}

impl DlczCounts {
    fn to_table(self) -> Result<CountsTable, Error> {
        let t = CountsTable {
            settings: AngleSettings::new(self.theta_s, self.theta_as),
            storage_time: (!self.storage_time.is_nan()).then_some(self.storage_time),
            n_pulses: self.n_pulses,
            n_d1: self.n_d1,
            n_d2: self.n_d2,
            c13: self.c13,
            c24: self.c24,
            c14: self.c14,
            c23: self.c23,
        };
        t.validate()?;
        Ok(t)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> DlczStatus {
    match e.exit_code() {
        2 => DlczStatus::Validation,
        3 => DlczStatus::Numeric,
        _ => DlczStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> DlczStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DlczStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            DlczStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DlczStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Core(Error::Config(format!("{what} is not valid UTF-8"))))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn store(out: *mut *mut DlczConfig, cfg: LoadedConfig) -> Result<(), Failure> {
    // SAFETY: checked non-null by the caller of `store`.
    unsafe { *out = Box::into_raw(Box::new(DlczConfig { inner: cfg })) };
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
#[no_mangle]
pub unsafe extern "C" fn dlcz_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dlcz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses TOML configuration text.
#[no_mangle]
pub unsafe extern "C" fn dlcz_config_from_toml(
    text: *const c_char,
    out: *mut *mut DlczConfig,
) -> DlczStatus {
    guard(|| {
        out_ref(out, "out")?;
        let text = c_str(text, "text")?;
        store(out, LoadedConfig::parse(text, "<ffi>")?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn dlcz_config_from_file(
    path: *const c_char,
    out: *mut *mut DlczConfig,
) -> DlczStatus {
    guard(|| {
        out_ref(out, "out")?;
        let path = c_str(path, "path")?;
        store(out, LoadedConfig::load(std::path::Path::new(path))?)
    })
}

/// Built-in parameter sets: "fig8" or "reference_point".
#[no_mangle]
pub unsafe extern "C" fn dlcz_config_preset(
    name: *const c_char,
    out: *mut *mut DlczConfig,
) -> DlczStatus {
    guard(|| {
        out_ref(out, "out")?;
        let name = c_str(name, "name")?;
        store(out, LoadedConfig::preset(name)?)
    })
}

/// Releases a configuration; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn dlcz_config_free(cfg: *mut DlczConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Writes the 64-character SHA-256 hex digest plus NUL; `len` must be >= 65.
#[no_mangle]
pub unsafe extern "C" fn dlcz_config_hash(
    cfg: *const DlczConfig,
    buf: *mut c_char,
    len: usize,
) -> DlczStatus {
    guard(|| {
        let cfg = non_null(cfg, "cfg")?;
        out_ref(buf, "buf")?;
        let h = cfg.inner.hash.as_bytes();
        if len < h.len() + 1 {
            return Err(Error::Domain(format!("hash buffer needs {} bytes", h.len() + 1)).into());
        }
        std::ptr::copy_nonoverlapping(h.as_ptr().cast::<c_char>(), buf, h.len());
        *buf.add(h.len()) = 0;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dlcz_budget(cfg: *const DlczConfig, out: *mut DlczBudget) -> DlczStatus {
    guard(|| {
        let cfg = non_null(cfg, "cfg")?;
        let out = out_ref(out, "out")?;
        let b = cfg.inner.chain()?.budget()?;
        *out = DlczBudget {
            escape: b.escape,
            transmission: b.transmission,
            detector: b.detector,
            total: b.total,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dlcz_lifetime(
    cfg: *const DlczConfig,
    out: *mut DlczLifetime,
) -> DlczStatus {
    guard(|| {
        let cfg = non_null(cfg, "cfg")?;
        let out = out_ref(out, "out")?;
        let m = motional_lifetime_detail(&cfg.inner.geometry()?)?;
        *out = DlczLifetime {
            angle_rad: m.angle,
            lifetime_s: m.lifetime,
        };
        Ok(())
    })
}

/// `R(t) = R0 (exp(-t^2/tau0^2) + exp(-t/tau0)) / 2`.
#[no_mangle]
pub unsafe extern "C" fn dlcz_retrieval_decay(
    r0: f64,
    tau0: f64,
    t: f64,
    out: *mut f64,
) -> DlczStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = retrieval_decay(&DecayParams::new(r0, tau0)?, t)?;
        Ok(())
    })
}

/// Least-squares decay fit. `sigma` may be NULL for an unweighted fit.
#[no_mangle]
pub unsafe extern "C" fn dlcz_fit_decay(
    t: *const f64,
    r: *const f64,
    sigma: *const f64,
    n: usize,
    out: *mut DlczDecayFit,
) -> DlczStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let t = slice(t, n, "t")?;
        let r = slice(r, n, "r")?;
        let samples: Vec<DecaySample> = if sigma.is_null() {
            t.iter()
                .zip(r)
                .map(|(&t, &r)| DecaySample::new(t, r))
                .collect()
        } else {
            let s = slice(sigma, n, "sigma")?;
            (0..n)
                .map(|i| DecaySample::with_sigma(t[i], r[i], s[i]))
                .collect()
        };
        let fit = fit_decay(&samples)?;
        let (r0_sigma, tau0_sigma) = fit.stderr.unwrap_or((f64::NAN, f64::NAN));
        *out = DlczDecayFit {
            r0: fit.params.r0,
            tau0: fit.params.tau0,
            residual: fit.residual,
            r0_sigma,
            tau0_sigma,
        };
        Ok(())
    })
}

/// Simulates `trials` trials at each of `n_settings` analyzer settings
/// (radians) with the [experiment] section of `cfg`; writes `n_settings`
/// tables to `out`.
#[no_mangle]
pub unsafe extern "C" fn dlcz_simulate(
    cfg: *const DlczConfig,
    t: f64,
    theta_s: *const f64,
    theta_as: *const f64,
    n_settings: usize,
    trials: u64,
    seed: u64,
    out: *mut DlczCounts,
) -> DlczStatus {
    guard(|| {
        let cfg = non_null(cfg, "cfg")?;
        let ts = slice(theta_s, n_settings, "theta_s")?;
        let tas = slice(theta_as, n_settings, "theta_as")?;
        if n_settings > 0 && out.is_null() {
            return Err(Failure::Null("out"));
        }
        let angles: Vec<AngleSettings> = ts
            .iter()
            .zip(tas)
            .map(|(&a, &b)| AngleSettings::new(a, b))
            .collect();
        let params = cfg.inner.experiment()?;
        let run = run_experiment(
            &params,
            &cfg.inner.timing_or_default(),
            t,
            &angles,
            trials,
            seed,
        )?;
        for (k, table) in run.tables.iter().enumerate() {
            *out.add(k) = DlczCounts::from(table);
        }
        Ok(())
    })
}

/// Polarization correlation `E` of one table.
#[no_mangle]
pub unsafe extern "C" fn dlcz_correlation(counts: *const DlczCounts, out: *mut f64) -> DlczStatus {
    guard(|| {
        let c = non_null(counts, "counts")?;
        let out = out_ref(out, "out")?;
        *out = correlation_e(&c.to_table()?)?;
        Ok(())
    })
}

/// CHSH parameter of four tables ordered (s,as), (s,as'), (s',as), (s',as'),
/// with a Poisson error bar from `replicas` resamples.
#[no_mangle]
pub unsafe extern "C" fn dlcz_bell_s(
    counts: *const DlczCounts,
    replicas: usize,
    seed: u64,
    s: *mut f64,
    sigma: *mut f64,
) -> DlczStatus {
    guard(|| {
        let c = slice(counts, 4, "counts")?;
        let s = out_ref(s, "s")?;
        let sigma = out_ref(sigma, "sigma")?;
        let tables = [
            c[0].to_table()?,
            c[1].to_table()?,
            c[2].to_table()?,
            c[3].to_table()?,
        ];
        let est = bell_s(&tables, replicas, seed)?;
        *s = est.value;
        *sigma = est.sigma;
        Ok(())
    })
}

/// `V = S / (2 sqrt 2)`.
#[no_mangle]
pub extern "C" fn dlcz_visibility_from_s(s: f64) -> f64 {
    visibility_from_s(s)
}

/// `F = (3V + 1) / 4`.
#[no_mangle]
pub extern "C" fn dlcz_fidelity_from_s(s: f64) -> f64 {
    fidelity_from_s(s)
}

/// Repeater rate (pairs/s) for the [repeater] section at `distance` meters.
/// A NaN `r0` keeps the configured value.
#[no_mangle]
pub unsafe extern "C" fn dlcz_repeater_rate(
    cfg: *const DlczConfig,
    distance: f64,
    r0: f64,
    out: *mut f64,
) -> DlczStatus {
    guard(|| {
        let cfg = non_null(cfg, "cfg")?;
        let out = out_ref(out, "out")?;
        let base = cfg.inner.repeater()?;
        let p = RepeaterParams {
            r0: if r0.is_nan() { base.r0 } else { r0 },
            ..base.with_distance(distance)
        };
        *out = swap_chain(&p)?.rate;
        Ok(())
    })
}
