//! `dlcz` command-line front end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{resolve, LoadedConfig};
use crate::decoherence::{fit_decay, motional_lifetime_detail, DecaySample};
use crate::entanglement::AngleSettings;
use crate::error::{Error, Result};
use crate::estimators::{
    bell_s, correlation_e, fidelity_from_s, intrinsic_retrieval_mode, intrinsic_retrieval_qubit,
    poisson_error, visibility_from_s, BellSettings, Mode, DEFAULT_REPLICAS,
};
use crate::io::{
    counts_to_csv, decay_to_csv, read_counts_csv, read_decay_csv, write_file, Format, Provenance,
    Report, RunManifest,
};
use crate::mc::{run_experiment_on_stream, trial_records, CountsTable, TrialModel};
use crate::params::repetition_rate;
use crate::repeater::{sweep_distance, threshold_distance, RepeaterParams};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DLCZ_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "dlcz",
    version,
    about = "DLCZ cavity-memory photon-counting toolkit"
)]
pub struct Cli {
    /// Report format for summary files.
    #[arg(long, value_enum, global = true, default_value = "kv")]
    pub format: Format,
    /// Output directory (default: $DLCZ_OUT_DIR, else the current directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for simulation and error bars (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Source {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in parameter set: fig8 or reference_point.
    #[arg(long)]
    pub preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<LoadedConfig> {
        resolve(self.config.as_ref(), self.preset.as_deref())
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo counts tables, one CSV per (storage time, analyzer setting).
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        seed: u64,
        /// Trials per analyzer setting.
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        /// Comma-separated storage times in seconds.
        #[arg(long = "t", value_delimiter = ',', default_value = "0")]
        times: Vec<f64>,
        /// canonical, zero, or degree pairs like `22.5:0,22.5:45`.
        #[arg(long, default_value = "canonical")]
        angles: String,
        /// Also write the first N per-trial records of every table.
        #[arg(long, default_value_t = 0)]
        records: u64,
    },
    /// Retrieval efficiencies, correlations and CHSH parameter from counts CSVs.
    Estimate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Total anti-Stokes detection efficiency (default: experiment.eta_as).
        #[arg(long)]
        eta_td: Option<f64>,
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = DEFAULT_REPLICAS)]
        replicas: usize,
        /// Seed of the Poisson error-bar replicas.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit R(t) = R0 (exp(-t^2/tau0^2) + exp(-t/tau0)) / 2 to `t_seconds,R[,sigma]` samples.
    FitDecay { file: PathBuf },
    /// Coupling angle and motional-dephasing lifetime from [geometry].
    Lifetime {
        #[command(flatten)]
        source: Source,
    },
    /// Detection-efficiency budget from [chain], and duty cycle from [timing] if present.
    Budget {
        #[command(flatten)]
        source: Source,
    },
    /// Repeater rate against distance from [repeater] and [sweep].
    RepeaterSweep {
        #[command(flatten)]
        source: Source,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Estimate { .. } => "estimate",
            Command::FitDecay { .. } => "fit-decay",
            Command::Lifetime { .. } => "lifetime",
            Command::Budget { .. } => "budget",
            Command::RepeaterSweep { .. } => "repeater-sweep",
        }
    }
}

/// Files produced by a command plus the identity recorded in its manifest.
struct Outcome {
    files: Vec<(String, String)>,
    config_path: String,
    config_hash: String,
    seed: Option<u64>,
    stdout: String,
}

pub fn parse_angles(spec: &str) -> Result<Vec<AngleSettings>> {
    match spec.trim() {
        "canonical" => Ok(BellSettings::canonical().combinations().to_vec()),
        "zero" => Ok(vec![AngleSettings::new(0.0, 0.0)]),
        list => list
            .split(',')
            .map(|pair| {
                let bad =
                    || Error::Config(format!("bad angle pair '{pair}', expected S_DEG:AS_DEG"));
                let (a, b) = pair.split_once(':').ok_or_else(bad)?;
                let a: f64 = a.trim().parse().map_err(|_| bad())?;
                let b: f64 = b.trim().parse().map_err(|_| bad())?;
                if !a.is_finite() || !b.is_finite() {
                    return Err(bad());
                }
                Ok(AngleSettings::from_degrees(a, b))
            })
            .collect(),
    }
}

fn simulate(
    cfg: &LoadedConfig,
    seed: u64,
    trials: u64,
    times: &[f64],
    angles: &str,
    records: u64,
    format: Format,
) -> Result<Outcome> {
    if trials == 0 {
        return Err(Error::Config("--trials must be > 0".into()));
    }
    if times.is_empty() {
        return Err(Error::Config("--t needs at least one storage time".into()));
    }
    let params = cfg.experiment()?;
    let timing = cfg.timing_or_default();
    let settings = parse_angles(angles)?;
    let mut files = Vec::new();
    let mut report = Report::default();
    report
        .int("trials_per_setting", trials)
        .int("settings", settings.len() as u64)
        .int("storage_times", times.len() as u64);
    for (i, &t) in times.iter().enumerate() {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("storage time {t} must be >= 0")));
        }
        let run = run_experiment_on_stream(&params, &timing, t, &settings, trials, seed, i as u64)?;
        report
            .num(format!("t{i}.t_seconds"), t)
            .num(format!("t{i}.elapsed_seconds"), run.elapsed);
        for (k, table) in run.tables.iter().enumerate() {
            let prov = Provenance::new("simulate", &cfg.hash, Some(seed))
                .with("config", &cfg.origin)
                .with("stream", i)
                .with("setting", k)
                .with("trials", trials);
            files.push((
                format!("counts_t{i:02}_a{k}.csv"),
                counts_to_csv(&[*table], &prov),
            ));
            if records > 0 {
                let model = TrialModel::new(&params, t, &table.settings)?;
                let start = k as u64 * trials;
                let recs =
                    trial_records(&model, seed, i as u64, start..start + records.min(trials));
                let mut text = prov.comment_block();
                text.push_str("trial_index,pair_created,stokes,antistokes\n");
                for r in recs {
                    let s = r.stokes_click.map_or("-".to_string(), |d| format!("{d:?}"));
                    let a = r
                        .antistokes_click
                        .map_or("-".to_string(), |d| format!("{d:?}"));
                    text.push_str(&format!(
                        "{},{},{s},{a}\n",
                        r.trial_index, r.pair_created as u8
                    ));
                }
                files.push((format!("records_t{i:02}_a{k}.csv"), text));
            }
        }
    }
    let prov = Provenance::new("simulate", &cfg.hash, Some(seed)).with("config", &cfg.origin);
    let text = report.render(format, &prov);
    files.push((format!("simulate.{}", format.extension()), text.clone()));
    Ok(Outcome {
        files,
        config_path: cfg.origin.clone(),
        config_hash: cfg.hash.clone(),
        seed: Some(seed),
        stdout: text,
    })
}

fn fmt_deg(rad: f64) -> String {
    let d = rad.to_degrees();
    let r = (d * 1e6).round() / 1e6;
    r.to_string()
}

#[allow(clippy::too_many_arguments)]
fn estimate(
    files: &[PathBuf],
    eta_td: Option<f64>,
    source: &Source,
    replicas: usize,
    seed: u64,
    format: Format,
) -> Result<Outcome> {
    let cfg = match (&source.config, &source.preset) {
        (None, None) => None,
        _ => Some(source.load()?),
    };
    let eta = match (eta_td, &cfg) {
        (Some(e), _) => e,
        (None, Some(c)) => c.experiment()?.eta_as,
        (None, None) => {
            return Err(Error::Config(
                "estimate needs --eta-td or a --config/--preset with [experiment]".into(),
            ))
        }
    };

    let mut hasher_input = Vec::new();
    let mut tables = Vec::new();
    for f in files {
        hasher_input.extend(std::fs::read(f).map_err(|e| Error::io(f, e))?);
        tables.extend(read_counts_csv(f)?);
    }
    let inputs_hash = crate::config::content_hash(&hasher_input);

    let mut groups: BTreeMap<Option<u64>, Vec<CountsTable>> = BTreeMap::new();
    for t in tables {
        if let Some(ts) = t.storage_time {
            if ts < 0.0 {
                return Err(Error::domain(format!("negative storage time {ts}")));
            }
        }
        groups
            .entry(t.storage_time.map(f64::to_bits))
            .or_default()
            .push(t);
    }

    let mut report = Report::default();
    report.num("eta_td", eta).int("replicas", replicas as u64);
    let multi = groups.len() > 1;
    let mut curve: Vec<Option<DecaySample>> = Vec::new();
    for (g, (key, group)) in groups.iter().enumerate() {
        let pre = if multi {
            format!("t{g}.")
        } else {
            String::new()
        };
        match key {
            Some(bits) => report.num(format!("{pre}t_seconds"), f64::from_bits(*bits)),
            None => report.missing(format!("{pre}t_seconds"), "not recorded"),
        };
        let zero: Vec<&CountsTable> = group
            .iter()
            .filter(|t| {
                let d = t.settings.delta().rem_euclid(std::f64::consts::PI);
                d < 1e-9 || std::f64::consts::PI - d < 1e-9
            })
            .collect();
        if let Some((first, rest)) = zero.split_first() {
            let mut merged = **first;
            for t in rest {
                merged.merge(t);
            }
            let one = [merged];
            let r = poisson_error(
                |ts| intrinsic_retrieval_qubit(&ts[0], eta),
                &one,
                replicas,
                seed,
            )?;
            report.with_sigma(format!("{pre}R_qubit"), r.value, r.sigma);
            for (name, mode) in [("R_L", Mode::L), ("R_R", Mode::R)] {
                let m = poisson_error(
                    |ts| intrinsic_retrieval_mode(&ts[0], mode, eta),
                    &one,
                    replicas,
                    seed,
                )?;
                report.with_sigma(format!("{pre}{name}"), m.value, m.sigma);
            }
            curve.push(key.map(|b| DecaySample::with_sigma(f64::from_bits(b), r.value, r.sigma)));
        } else {
            for name in ["R_qubit", "R_L", "R_R"] {
                report.missing(
                    format!("{pre}{name}"),
                    "no analyzer setting with equal angles",
                );
            }
            curve.push(None);
        }
        for t in group {
            let name = format!(
                "{pre}E[{},{}]",
                fmt_deg(t.settings.theta_s),
                fmt_deg(t.settings.theta_as)
            );
            let e = poisson_error(|ts| correlation_e(&ts[0]), &[*t], replicas, seed)?;
            report.with_sigma(name, e.value, e.sigma);
        }
        match BellSettings::canonical().arrange(group) {
            Some(four) => {
                let s = bell_s(&four, replicas, seed)?;
                report.with_sigma(format!("{pre}S"), s.value, s.sigma);
                report.num(format!("{pre}S_sigmas_above_2"), s.sigmas_above(2.0));
                report.with_sigma(
                    format!("{pre}V"),
                    visibility_from_s(s.value),
                    visibility_from_s(s.sigma),
                );
                report.with_sigma(
                    format!("{pre}F"),
                    fidelity_from_s(s.value),
                    0.75 * visibility_from_s(s.sigma),
                );
            }
            None => {
                for name in ["S", "V", "F"] {
                    report.missing(
                        format!("{pre}{name}"),
                        "needs the four canonical CHSH settings",
                    );
                }
            }
        }
    }

    let (hash, origin) = match &cfg {
        Some(c) => (c.hash.clone(), c.origin.clone()),
        None => (inputs_hash.clone(), String::new()),
    };
    let prov = Provenance::new("estimate", &hash, Some(seed)).with("inputs_hash", &inputs_hash);
    let text = report.render(format, &prov);
    let mut out = vec![(format!("estimate.{}", format.extension()), text.clone())];
    if multi && curve.iter().all(Option::is_some) {
        let samples: Vec<DecaySample> = curve.into_iter().flatten().collect();
        out.push(("retrieval_vs_t.csv".into(), decay_to_csv(&samples, &prov)));
    }
    Ok(Outcome {
        files: out,
        config_path: origin,
        config_hash: hash,
        seed: Some(seed),
        stdout: text,
    })
}

fn fit_decay_cmd(file: &Path, format: Format) -> Result<Outcome> {
    let bytes = std::fs::read(file).map_err(|e| Error::io(file, e))?;
    let hash = crate::config::content_hash(&bytes);
    let samples = read_decay_csv(file)?;
    let fit = fit_decay(&samples)?;
    let mut r = Report::default();
    r.int("samples", samples.len() as u64);
    match fit.stderr {
        Some((s_r0, s_tau)) => {
            r.with_sigma("R0", fit.params.r0, s_r0);
            r.with_sigma("tau0_seconds", fit.params.tau0, s_tau);
        }
        None => {
            r.num("R0", fit.params.r0)
                .num("tau0_seconds", fit.params.tau0);
        }
    }
    r.num("residual", fit.residual)
        .text("weighted", fit.weighted.to_string())
        .int("iterations", fit.iterations as u64);
    let prov = Provenance::new("fit-decay", &hash, None).with("input", file.display());
    let text = r.render(format, &prov);
    Ok(Outcome {
        files: vec![(format!("fit.{}", format.extension()), text.clone())],
        config_path: file.display().to_string(),
        config_hash: hash,
        seed: None,
        stdout: text,
    })
}

fn single_report(name: &str, cfg: &LoadedConfig, r: Report, format: Format) -> Outcome {
    let prov = Provenance::new(name, &cfg.hash, None).with("config", &cfg.origin);
    let text = r.render(format, &prov);
    Outcome {
        files: vec![(
            format!("{}.{}", name.replace('-', "_"), format.extension()),
            text.clone(),
        )],
        config_path: cfg.origin.clone(),
        config_hash: cfg.hash.clone(),
        seed: None,
        stdout: text,
    }
}

fn lifetime(cfg: &LoadedConfig, format: Format) -> Result<Outcome> {
    let m = motional_lifetime_detail(&cfg.geometry()?)?;
    let mut r = Report::default();
    r.num("coupling_angle_rad", m.angle)
        .num("coupling_angle_deg", m.angle.to_degrees())
        .num("delta_k_per_m", m.delta_k)
        .num("mean_speed_m_per_s", m.mean_speed)
        .num("lifetime_seconds", m.lifetime)
        .num("lifetime_ms", m.lifetime * 1e3);
    Ok(single_report("lifetime", cfg, r, format))
}

fn budget(cfg: &LoadedConfig, format: Format) -> Result<Outcome> {
    let chain = cfg.chain()?;
    let b = chain.budget()?;
    let mut r = Report::default();
    r.num("eta_esp", b.escape)
        .num("eta_T", b.transmission)
        .num("eta_D", b.detector)
        .num("eta_TD", b.total);
    if let Some(items) = &chain.loss_items {
        r.num("cavity_loss_itemized", items.values().sum());
    }
    if let Some(t) = &cfg.config.timing {
        r.int("trials_per_run", t.trials_per_run()?)
            .num("cycle_seconds", t.cycle_duration())
            .num("repetition_rate_hz", repetition_rate(t)?);
    }
    Ok(single_report("budget", cfg, r, format))
}

fn repeater_sweep(cfg: &LoadedConfig, format: Format) -> Result<Outcome> {
    let base = cfg.repeater()?;
    let spec = cfg.sweep()?;
    let curves = if spec.r0_curves.is_empty() {
        vec![base.r0]
    } else {
        spec.r0_curves.clone()
    };
    let prov = Provenance::new("repeater-sweep", &cfg.hash, None)
        .with("config", &cfg.origin)
        .with("link_divisor", base.link_divisor.name())
        .with(
            "multiplexing",
            if base.linear_multiplexing {
                "linear"
            } else {
                "exact"
            },
        )
        .with("chi", base.chi);
    let mut csv = prov.comment_block();
    csv.push_str(
        "curve_r0,L_meters,rate_per_second,link_divisor,link_length_m,t_cc_s,p0,p0_multiplexed,p_pr,final_stage_time_s,underflow\n",
    );
    let mut report = Report::default();
    report
        .text("link_divisor", base.link_divisor.name())
        .num("chi", base.chi)
        .num("threshold_rate", spec.threshold_rate);
    let mut crossings = Vec::new();
    for (c, &r0) in curves.iter().enumerate() {
        let p = RepeaterParams { r0, ..base.clone() };
        let sweep = sweep_distance(&p, spec.l_min, spec.l_max, spec.steps, spec.grid)?;
        for (l, b) in sweep.distances.iter().zip(&sweep.points) {
            let e = &b.elementary;
            csv.push_str(&format!(
                "{r0},{l},{},{},{},{},{},{},{},{},{}\n",
                b.rate,
                base.link_divisor.name(),
                e.link_length,
                e.t_cc,
                e.p0,
                e.p0_multiplexed,
                b.p_pr,
                b.stage_times.last().copied().unwrap_or(f64::NAN),
                b.underflow as u8
            ));
        }
        report.num(format!("curve{c}.r0"), r0);
        report.text(
            format!("curve{c}.monotone"),
            (!sweep.non_monotone).to_string(),
        );
        match threshold_distance(&p, spec.threshold_rate, spec.l_min, spec.l_max) {
            Ok(l) => {
                report.num(format!("curve{c}.threshold_distance_m"), l);
                crossings.push(Some(l));
            }
            Err(e) => {
                report.missing(format!("curve{c}.threshold_distance_m"), e.to_string());
                crossings.push(None);
            }
        }
    }
    if let [Some(a), Some(b), ..] = crossings.as_slice() {
        report.num("threshold_distance_ratio", a / b);
    }
    let text = report.render(format, &prov);
    Ok(Outcome {
        files: vec![
            ("repeater_sweep.csv".into(), csv),
            (
                format!("repeater_sweep.{}", format.extension()),
                text.clone(),
            ),
        ],
        config_path: cfg.origin.clone(),
        config_hash: cfg.hash.clone(),
        seed: None,
        stdout: text,
    })
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let f = cli.format;
    match &cli.command {
        Command::Simulate {
            source,
            seed,
            trials,
            times,
            angles,
            records,
        } => simulate(&source.load()?, *seed, *trials, times, angles, *records, f),
        Command::Estimate {
            files,
            eta_td,
            source,
            replicas,
            seed,
        } => estimate(files, *eta_td, source, *replicas, *seed, f),
        Command::FitDecay { file } => fit_decay_cmd(file, f),
        Command::Lifetime { source } => lifetime(&source.load()?, f),
        Command::Budget { source } => budget(&source.load()?, f),
        Command::RepeaterSweep { source } => repeater_sweep(&source.load()?, f),
    }
}

fn output_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Runs a parsed command, writes its files and manifest, and returns the
/// summary text.
pub fn run(cli: &Cli) -> Result<String> {
    let outcome = match cli.threads {
        Some(n) => {
            if n == 0 {
                return Err(Error::Config("--threads must be >= 1".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cli))?
        }
        None => dispatch(cli)?,
    };
    let dir = output_dir(cli);
    for (name, text) in &outcome.files {
        write_file(&dir, name, text)?;
    }
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        config_path: outcome.config_path,
        config_hash: outcome.config_hash,
        seed: outcome.seed,
        output_dir: dir.display().to_string(),
        outputs: outcome.files.iter().map(|f| f.0.clone()).collect(),
    };
    write_file(&dir, "manifest.toml", &manifest.to_toml())?;
    Ok(outcome.stdout)
}
