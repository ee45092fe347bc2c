//! Experiment drivers behind the command-line subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::calculus::{curvature, ym_gradient, CalculusWorkspace};
use crate::error::{Error, Result};
use crate::flow::{energy, run_flow, Control, FlowConfig, FlowObserver, FlowOutcome, FlowState};
use crate::hym::{
    conformal_normalize, run_hym, ComplexTorusGeometry, HermitianMetricField, HolomorphicStructure, HymOutcome,
    HymState,
};
use crate::io::checkpoint::Checkpoint;
use crate::io::config::{Experiment, InitialKind, RunConfig};
use crate::io::series::{hym_row, ym_header, ym_row, SeriesWriter, HYM_HEADER};
use crate::lattice::{
    concentrated_bump_connection, constant_curvature_connection, random_connection,
    smooth_random_connection, BumpSpec, ConnectionField, LatticeField, Torus,
};
use crate::lie::ScalarKind;
use crate::monitors::{density_profile, gap_report, FlowMonitor, MonitorConfig};

/// Command-line level overrides shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub seed_override: Option<u64>,
    pub cadence: Option<u64>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            ..Default::default()
        }
    }
}

/// Structured run summary, written as TOML next to the series.
#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct RunSummary {
    pub experiment: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub outcome: String,
    /// Concentration beats the gap verdict, which beats the detector label.
    pub verdict: String,
    pub t_final: f64,
    pub accepted: u64,
    pub rejected: u64,
    pub rows: u64,
    pub threads: usize,
    pub seed: u64,
    pub resumed: bool,
    pub initial_energy: f64,
    pub final_energy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ym: Option<YmSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hym: Option<HymSummary>,
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct YmSummary {
    pub detector: String,
    pub gap: String,
    pub max_energy_increase: f64,
    pub dissipation: f64,
    /// `|E(0) - E(T) - int 2 ||grad||^2| / |E(0) - E(T)|` over this invocation.
    pub energy_identity_error: f64,
    pub sup_f: f64,
    pub grad_inf: f64,
    pub tracefree_l2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub harmonic_l2: Option<f64>,
    pub chern_drift_max: f64,
    pub eps_checks: u64,
    pub eps_violations: u64,
    /// Radii of the `conc_r<k>` columns.
    pub radii: Vec<f64>,
    pub sup_threshold: f64,
    pub concentration_streak: u64,
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct HymSummary {
    pub lambda: f64,
    pub min_eig: f64,
    pub det_h_drift_max: f64,
    pub trace_identity_residual_max: f64,
    pub tracefree_l2_initial: f64,
    pub tracefree_l2_final: f64,
    pub tracefree_l2_max_increase: f64,
    pub balance_inf_final: f64,
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn prepare(mut cfg: RunConfig, opts: &RunOptions) -> Result<RunConfig> {
    cfg.apply_overrides(opts.seed_override, opts.cadence, opts.threads);
    cfg.validate()?;
    fs::create_dir_all(&opts.out_dir)?;
    Ok(cfg)
}

/// Background connection of the declared sector: constant curvature on
/// complex bundles, zero otherwise.
pub fn background_connection(torus: &Arc<Torus>) -> Result<ConnectionField> {
    if torus.kind() == ScalarKind::Complex {
        constant_curvature_connection(torus)
    } else {
        Ok(ConnectionField::zero(torus))
    }
}

/// Initial connection of a Yang-Mills run.
pub fn initial_connection(cfg: &RunConfig, torus: &Arc<Torus>) -> Result<ConnectionField> {
    let init = &cfg.initial;
    let base = background_connection(torus)?;
    let pert = match init.kind {
        InitialKind::Zero => return Ok(base),
        InitialKind::Random => random_connection(torus, init.amplitude, init.seed),
        InitialKind::SmoothRandom => smooth_random_connection(torus, init.amplitude, init.modes, init.terms, init.seed)?,
        InitialKind::Bump => {
            let g = torus.geometry();
            let center = if init.center.is_empty() {
                (0..g.dim()).map(|mu| 0.5 * g.length(mu)).collect()
            } else {
                init.center.clone()
            };
            concentrated_bump_connection(
                torus,
                &BumpSpec {
                    scale: init.scale,
                    center,
                    strength: init.strength,
                    seed: init.seed,
                },
            )?
        }
        InitialKind::File => {
            let path = init.path.as_ref().expect("validated");
            let ck = Checkpoint::read(path)?;
            if ck.experiment != Experiment::Ym || !ck.torus.same_bundle(torus) {
                return Err(Error::Config(format!("{} does not hold a connection on this bundle", path.display())));
            }
            return ConnectionField::from_data(torus, ck.fields.into_iter().next().unwrap_or_default());
        }
        InitialKind::SmoothMetric => return Err(Error::Config("smooth-metric initial data needs an HYM run".into())),
    };
    Ok(base.add_scaled(1.0, &pert))
}

/// Runs the configuration and writes `series`, `summary` and the final
/// checkpoint into `opts.out_dir`.
pub fn cmd_run(config_path: &Path, opts: &RunOptions) -> Result<RunSummary> {
    run_config(RunConfig::load(config_path)?, opts)
}

pub fn run_config(cfg: RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let cfg = prepare(cfg, opts)?;
    let threads = cfg.output.threads;
    with_threads(threads, || match cfg.experiment {
        Experiment::Ym => run_ym(&cfg, opts, None),
        Experiment::Hym => run_hym_experiment(&cfg, opts, None),
    })
}

/// Continues the run stored in `checkpoint`. The new series holds the rows
/// after the checkpoint; at a fixed thread count they equal the tail of the
/// uninterrupted run byte for byte.
pub fn cmd_resume(checkpoint: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let ck = Checkpoint::read(checkpoint)?;
    let mut cfg = RunConfig::from_toml(&ck.config_text)?;
    cfg.apply_overrides(None, None, opts.threads);
    fs::create_dir_all(&opts.out_dir)?;
    if !ck.torus.same_bundle(&*cfg.torus()?) {
        return Err(Error::Checkpoint("checkpoint bundle does not match its recorded config".into()));
    }
    let threads = cfg.output.threads;
    with_threads(threads, || match ck.experiment {
        Experiment::Ym => run_ym(&cfg, opts, Some(ck)),
        Experiment::Hym => run_hym_experiment(&cfg, opts, Some(ck)),
    })
}

fn write_summary(dir: &Path, cfg: &RunConfig, summary: &RunSummary) -> Result<()> {
    let text = toml::to_string(summary).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join(&cfg.output.summary), text)?;
    Ok(())
}

/// Writes the periodic checkpoint, keeping a numbered copy when asked.
fn periodic_checkpoint(ck: &Checkpoint, path: &Path, keep: bool) -> Result<()> {
    ck.write(path)?;
    if keep {
        let mut numbered = path.as_os_str().to_owned();
        numbered.push(format!(".{}", ck.rows));
        fs::copy(path, numbered)?;
    }
    Ok(())
}

struct RunObserver<'a> {
    monitor: FlowMonitor,
    writer: SeriesWriter,
    rows: u64,
    chern_drift_max: f64,
    skip_first: bool,
    checkpoint_every: u64,
    checkpoint_path: PathBuf,
    keep_checkpoints: bool,
    config_text: &'a str,
}

impl RunObserver<'_> {
    fn checkpoint(&mut self, state: &FlowState) -> Result<Checkpoint> {
        self.writer.flush()?;
        let ck = Checkpoint {
            experiment: Experiment::Ym,
            torus: state.a.torus().clone(),
            t: state.t,
            dt: state.dt,
            dissipation: state.dissipation,
            accepted: state.stats.accepted,
            rejected: state.stats.rejected,
            rows: self.rows,
            config_text: self.config_text.to_string(),
            monitor: Some(self.monitor.snapshot()),
            fields: vec![state.a.data().to_vec()],
        };
        ck.write(&self.checkpoint_path)?;
        Ok(ck)
    }
}

impl FlowObserver for RunObserver<'_> {
    fn observe(&mut self, state: &FlowState, workspace: &CalculusWorkspace) -> Result<Control> {
        if self.skip_first {
            // the checkpointed row was written by the interrupted run
            self.skip_first = false;
            return Ok(Control::Continue);
        }
        let control = self.monitor.observe(state, workspace)?;
        let rec = self.monitor.records.last().expect("record just pushed");
        self.writer.write(&ym_row(rec))?;
        self.chern_drift_max = self.chern_drift_max.max(rec.chern_drift);
        self.rows += 1;
        self.monitor.records.clear();
        if self.checkpoint_every > 0 && self.rows % self.checkpoint_every == 0 {
            let ck = self.checkpoint(state)?;
            periodic_checkpoint(&ck, &self.checkpoint_path, self.keep_checkpoints)?;
        }
        Ok(control)
    }
}

fn run_ym(cfg: &RunConfig, opts: &RunOptions, resume: Option<Checkpoint>) -> Result<RunSummary> {
    let torus = cfg.torus()?;
    let mcfg = cfg.monitor_config(torus.geometry());
    let config_text = cfg.to_toml();
    let resumed = resume.is_some();
    let (mut state, snapshot, rows) = match resume {
        None => (FlowState::new(initial_connection(cfg, &torus)?, cfg.flow.dt_init), None, 0),
        Some(ck) => {
            let a = ConnectionField::from_data(&torus, ck.fields.into_iter().next().unwrap_or_default())?;
            let mut s = FlowState::new(a, ck.dt);
            s.t = ck.t;
            s.dissipation = ck.dissipation;
            s.stats.accepted = ck.accepted;
            s.stats.rejected = ck.rejected;
            (s, ck.monitor, ck.rows)
        }
    };
    let mut monitor = FlowMonitor::new(&torus, mcfg.clone())?;
    monitor.stop_on_concentration = cfg.monitor.stop_on_concentration;
    if let Some(snap) = snapshot {
        monitor.restore(snap)?;
    }
    let writer = SeriesWriter::create(&opts.out_dir.join(&cfg.output.series), &ym_header(mcfg.radii.len()))?;
    let mut obs = RunObserver {
        monitor,
        writer,
        rows,
        chern_drift_max: 0.0,
        skip_first: resumed,
        checkpoint_every: cfg.output.checkpoint_every,
        checkpoint_path: opts.out_dir.join(&cfg.output.checkpoint),
        keep_checkpoints: cfg.output.keep_checkpoints,
        config_text: &config_text,
    };
    let initial_energy = state.energy;
    let flow_summary = run_flow(&mut state, &cfg.flow, &mut obs)?;
    obs.checkpoint(&state)?;
    obs.writer.flush()?;

    let f = curvature(&state.a);
    let gap = gap_report(&f, state.grad_inf_norm(), state.energy, &mcfg);
    let detector = obs.monitor.detector.verdict(&flow_summary.outcome);
    let verdict = if obs.monitor.detector.is_concentrating() {
        "concentrating".to_string()
    } else if gap.is_critical {
        gap.verdict.label().to_string()
    } else {
        detector.label().to_string()
    };
    let drop = initial_energy - state.energy;
    let summary = RunSummary {
        experiment: "ym".into(),
        preset: cfg.preset.clone(),
        outcome: flow_summary.outcome.label().to_string(),
        verdict,
        t_final: state.t,
        accepted: state.stats.accepted,
        rejected: state.stats.rejected,
        rows: obs.rows,
        threads: cfg.output.threads,
        seed: cfg.initial.seed,
        resumed,
        initial_energy,
        final_energy: state.energy,
        ym: Some(YmSummary {
            detector: detector.label().into(),
            gap: gap.verdict.label().into(),
            max_energy_increase: flow_summary.max_energy_increase,
            dissipation: state.dissipation,
            energy_identity_error: if resumed || drop == 0.0 {
                0.0
            } else {
                (drop - state.dissipation).abs() / drop.abs()
            },
            sup_f: gap.sup_f,
            grad_inf: gap.grad_inf,
            tracefree_l2: gap.tracefree_l2,
            harmonic_l2: gap.harmonic_l2,
            chern_drift_max: obs.chern_drift_max,
            eps_checks: obs.monitor.eps_checks,
            eps_violations: obs.monitor.eps_violations,
            radii: mcfg.radii.clone(),
            sup_threshold: obs.monitor.detector.sup_threshold(),
            concentration_streak: obs.monitor.detector.streak() as u64,
        }),
        hym: None,
    };
    write_summary(&opts.out_dir, cfg, &summary)?;
    Ok(summary)
}

fn hym_structure(torus: &Arc<Torus>) -> Result<HolomorphicStructure> {
    let geom = ComplexTorusGeometry::new(torus)?;
    HolomorphicStructure::from_connection(&geom, &background_connection(torus)?)
}

/// `K_0` of an HYM run and its conformally normalised `H_0`.
pub fn hym_initial_metrics(
    cfg: &RunConfig,
    torus: &Arc<Torus>,
    hol: &HolomorphicStructure,
) -> Result<(HermitianMetricField, HermitianMetricField)> {
    let init = &cfg.initial;
    let k0 = HermitianMetricField::random_smooth(torus, init.amplitude, init.modes, init.seed)?;
    let (h0, _) = conformal_normalize(&k0, hol)?;
    Ok((k0, h0))
}

fn run_hym_experiment(cfg: &RunConfig, opts: &RunOptions, resume: Option<Checkpoint>) -> Result<RunSummary> {
    let torus = cfg.torus()?;
    let hol = hym_structure(&torus)?;
    let resumed = resume.is_some();
    let (mut state, h0, mut rows) = match resume {
        None => {
            let (_, h0) = hym_initial_metrics(cfg, &torus, &hol)?;
            (HymState::new(h0.clone(), cfg.hym.dt_init), h0, 0)
        }
        Some(ck) => {
            let mut fields = ck.fields.into_iter();
            let h = HermitianMetricField::from_data(&torus, fields.next().unwrap_or_default())?;
            let h0 = HermitianMetricField::from_data(&torus, fields.next().unwrap_or_default())?;
            let mut s = HymState::new(h, ck.dt);
            s.t = ck.t;
            s.accepted = ck.accepted;
            s.rejected = ck.rejected;
            (s, h0, ck.rows)
        }
    };
    let header: Vec<String> = HYM_HEADER.iter().map(|s| s.to_string()).collect();
    let mut writer = SeriesWriter::create(&opts.out_dir.join(&cfg.output.series), &header)?;
    let config_text = cfg.to_toml();
    let ck_path = opts.out_dir.join(&cfg.output.checkpoint);
    let keep = cfg.output.keep_checkpoints;
    let checkpoint = |st: &HymState, rows: u64, periodic: bool| -> Result<()> {
        let ck = Checkpoint {
            experiment: Experiment::Hym,
            torus: torus.clone(),
            t: st.t,
            dt: st.dt,
            dissipation: 0.0,
            accepted: st.accepted,
            rejected: st.rejected,
            rows,
            config_text: config_text.clone(),
            monitor: None,
            fields: vec![st.h.values().to_vec(), h0.values().to_vec()],
        };
        if periodic {
            periodic_checkpoint(&ck, &ck_path, keep)
        } else {
            ck.write(&ck_path)
        }
    };

    let mut skip = resumed;
    let mut stats = HymSummary {
        lambda: hol.geometry().slope(),
        min_eig: f64::INFINITY,
        tracefree_l2_initial: f64::NAN,
        ..Default::default()
    };
    let mut first_energy = f64::NAN;
    let mut last_energy = f64::NAN;
    let mut prev_tf: Option<f64> = None;
    let every = cfg.output.checkpoint_every;
    let outcome = run_hym(&mut state, &h0, &hol, &cfg.hym, &mut |st, rec| {
        if skip {
            skip = false;
            return Ok(());
        }
        writer.write(&hym_row(rec))?;
        rows += 1;
        if first_energy.is_nan() {
            first_energy = rec.energy;
            stats.tracefree_l2_initial = rec.tracefree_l2;
        }
        last_energy = rec.energy;
        stats.min_eig = stats.min_eig.min(rec.min_eig);
        stats.det_h_drift_max = stats.det_h_drift_max.max(rec.det_h_drift);
        stats.trace_identity_residual_max = stats.trace_identity_residual_max.max(rec.trace_identity_residual);
        if let Some(p) = prev_tf {
            stats.tracefree_l2_max_increase = stats.tracefree_l2_max_increase.max(rec.tracefree_l2 - p);
        }
        prev_tf = Some(rec.tracefree_l2);
        stats.tracefree_l2_final = rec.tracefree_l2;
        stats.balance_inf_final = rec.balance_inf;
        if every > 0 && rows % every == 0 {
            writer.flush()?;
            checkpoint(st, rows, true)?;
        }
        Ok(())
    })?;
    writer.flush()?;
    checkpoint(&state, rows, false)?;

    let outcome_label = match outcome {
        HymOutcome::Finished => "finished",
        HymOutcome::StiffStop { .. } => "stiff-stop",
        HymOutcome::MaxSteps => "max-steps",
    };
    let verdict = if stats.balance_inf_final < 1e-6 {
        "hermitian-einstein"
    } else {
        outcome_label
    };
    let summary = RunSummary {
        experiment: "hym".into(),
        preset: cfg.preset.clone(),
        outcome: outcome_label.into(),
        verdict: verdict.into(),
        t_final: state.t,
        accepted: state.accepted,
        rejected: state.rejected,
        rows,
        threads: cfg.output.threads,
        seed: cfg.initial.seed,
        resumed,
        initial_energy: first_energy,
        final_energy: last_energy,
        ym: None,
        hym: Some(stats),
    };
    write_summary(&opts.out_dir, cfg, &summary)?;
    Ok(summary)
}

/// Relative errors above this fail `gradcheck`.
pub const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct GradcheckCase {
    pub label: String,
    /// `d/ds E(A + sB)` at `s = 0`.
    pub directional: f64,
    /// `2 <grad, B>`.
    pub predicted: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub cases: Vec<GradcheckCase>,
}

/// `d/ds E(A + sB)` at `s = 0` by the five-point rule, which is exact for
/// the quartic discrete energy up to rounding.
pub fn directional_derivative(a: &ConnectionField, b: &ConnectionField) -> f64 {
    let h = 1e-2;
    let e = |s: f64| energy(&curvature(&a.add_scaled(s, b)));
    (e(-2.0 * h) - 8.0 * e(-h) + 8.0 * e(h) - e(2.0 * h)) / (12.0 * h)
}

/// Compares the directional derivative with `2 <gradient(A), B>`. Errors are
/// relative to `max(|dE|, 1e-9 (1 + E(A) + |B|^2))`.
pub fn check_gradient(
    label: &str,
    a: &ConnectionField,
    b: &ConnectionField,
    gradient: &dyn Fn(&ConnectionField) -> ConnectionField,
) -> GradcheckCase {
    let directional = directional_derivative(a, b);
    let predicted = 2.0 * gradient(a).l2_inner(b);
    let floor = 1e-9 * (1.0 + energy(&curvature(a)) + b.l2_inner(b));
    let rel_error = (directional - predicted).abs() / directional.abs().max(predicted.abs()).max(floor);
    GradcheckCase {
        label: label.into(),
        directional,
        predicted,
        rel_error,
    }
}

/// Zero connection, the supplied connection and a strong random connection,
/// each against `trials` random directions.
pub fn gradcheck_battery(
    torus: &Arc<Torus>,
    base: Option<&ConnectionField>,
    trials: usize,
    seed: u64,
    gradient: &dyn Fn(&ConnectionField) -> ConnectionField,
) -> Result<GradcheckReport> {
    let background = background_connection(torus)?;
    let mut points = vec![("zero".to_string(), ConnectionField::zero(torus))];
    if let Some(a) = base {
        points.push(("configured".into(), a.clone()));
    }
    points.push(("random".into(), background.add_scaled(1.0, &random_connection(torus, 1.0, seed ^ 0x5eed))));
    let mut cases = Vec::new();
    for (label, a) in &points {
        for k in 0..trials {
            let b = random_connection(torus, 1.0, seed.wrapping_add(1000 + k as u64));
            cases.push(check_gradient(&format!("{label}/{k}"), a, &b, gradient));
        }
    }
    let max_rel_error = cases.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        tolerance: GRADCHECK_TOL,
        max_rel_error,
        passed: max_rel_error <= GRADCHECK_TOL,
        cases,
    })
}

/// Gradient battery on the configured bundle; writes `gradcheck.toml`.
pub fn cmd_gradcheck(config_path: &Path, opts: &RunOptions) -> Result<GradcheckReport> {
    let cfg = prepare(RunConfig::load(config_path)?, opts)?;
    gradcheck_config(&cfg, opts)
}

pub fn gradcheck_config(cfg: &RunConfig, opts: &RunOptions) -> Result<GradcheckReport> {
    let torus = cfg.torus()?;
    let a = if cfg.experiment == Experiment::Ym {
        Some(initial_connection(cfg, &torus)?)
    } else {
        None
    };
    let report = with_threads(cfg.output.threads, || gradcheck_battery(&torus, a.as_ref(), 3, cfg.initial.seed, &ym_gradient))?;
    fs::create_dir_all(&opts.out_dir)?;
    let text = toml::to_string(&report).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(opts.out_dir.join("gradcheck.toml"), text)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct RefineSample {
    pub t: f64,
    pub energy: f64,
    pub sup_f: f64,
    pub profile: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct RefineLevel {
    pub side: usize,
    pub spacing: f64,
    pub outcome: String,
    pub detector: String,
    pub concentrating: bool,
    pub samples: Vec<RefineSample>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct RefineReport {
    pub radii: Vec<f64>,
    pub levels: Vec<RefineLevel>,
    /// Time of the last sample reached by every level.
    pub t_matched: f64,
    /// `sup|F|` at `t_matched`, finest over next-coarser.
    pub sup_ratios: Vec<f64>,
    /// `increasing`, `stable` or `mixed`.
    pub verdict: String,
}

/// Classifies successive ratios: all above 1.05 is `increasing`, all within
/// 10% of 1 is `stable`.
pub fn refinement_verdict(ratios: &[f64]) -> &'static str {
    if ratios.iter().all(|&r| r > 1.05) {
        "increasing"
    } else if ratios.iter().all(|&r| (r - 1.0).abs() < 0.1) {
        "stable"
    } else {
        "mixed"
    }
}

/// Reruns a Yang-Mills configuration on the same box at `sides` sites per
/// axis, sampling `sup|F|` and the concentration profile at `samples`
/// equally spaced matched times up to `flow.t_end`. Profiles use the same
/// physical radii at every level (the coarsest level's defaults unless
/// configured).
pub fn refine_study(cfg: &RunConfig, sides: &[usize], samples: usize, opts: &RunOptions) -> Result<RefineReport> {
    if sides.len() < 2 {
        return Err(Error::Config("refine-study needs at least two levels".into()));
    }
    if cfg.experiment != Experiment::Ym {
        return Err(Error::Config("refine-study runs Yang-Mills configurations".into()));
    }
    let cfg = prepare(cfg.clone(), opts)?;
    let coarse = cfg.geometry.refined(sides[0])?.build()?;
    let radii = if cfg.monitor.config.radii.is_empty() {
        MonitorConfig::default_radii(&coarse, cfg.monitor.radii_count)
    } else {
        cfg.monitor.config.radii.clone()
    };
    let times: Vec<f64> = (1..=samples.max(1)).map(|k| cfg.flow.t_end * k as f64 / samples.max(1) as f64).collect();
    let mut levels = Vec::new();
    for &side in sides {
        let mut lc = cfg.clone();
        lc.geometry = cfg.geometry.refined(side)?;
        lc.monitor.config.radii = radii.clone();
        lc.monitor.stop_on_concentration = false;
        let dir = opts.out_dir.join(format!("level_{side}"));
        fs::create_dir_all(&dir)?;
        let level = with_threads(lc.output.threads, || refine_level(&lc, &times, &dir))?;
        levels.push(level);
    }
    let common = levels.iter().map(|l| l.samples.len()).min().unwrap_or(0);
    let (t_matched, sup_ratios) = if common == 0 {
        (0.0, Vec::new())
    } else {
        let k = common - 1;
        let t = levels[0].samples[k].t;
        let ratios = levels.windows(2).map(|w| w[1].samples[k].sup_f / w[0].samples[k].sup_f).collect();
        (t, ratios)
    };
    let report = RefineReport {
        radii,
        verdict: refinement_verdict(&sup_ratios).into(),
        levels,
        t_matched,
        sup_ratios,
    };
    let mut w = csv::Writer::from_path(opts.out_dir.join("refine.csv"))?;
    let mut header: Vec<String> = ["side", "t", "energy", "sup_f"].map(String::from).to_vec();
    header.extend((0..report.radii.len()).map(|k| format!("conc_r{k}")));
    w.write_record(&header)?;
    for l in &report.levels {
        for s in &l.samples {
            let mut row = vec![l.side.to_string(), format!("{:e}", s.t), format!("{:e}", s.energy), format!("{:e}", s.sup_f)];
            row.extend(s.profile.iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    let text = toml::to_string(&report).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(opts.out_dir.join("refine.toml"), text)?;
    Ok(report)
}

fn refine_level(cfg: &RunConfig, times: &[f64], dir: &Path) -> Result<RefineLevel> {
    let torus = cfg.torus()?;
    let mcfg = cfg.monitor_config(torus.geometry());
    let mut state = FlowState::new(initial_connection(cfg, &torus)?, cfg.flow.dt_init);
    let config_text = cfg.to_toml();
    let mut obs = RunObserver {
        monitor: FlowMonitor::new(&torus, mcfg.clone())?,
        writer: SeriesWriter::create(&dir.join(&cfg.output.series), &ym_header(mcfg.radii.len()))?,
        rows: 0,
        chern_drift_max: 0.0,
        skip_first: false,
        checkpoint_every: 0,
        checkpoint_path: dir.join(&cfg.output.checkpoint),
        keep_checkpoints: false,
        config_text: &config_text,
    };
    let mut samples = Vec::new();
    let mut outcome = FlowOutcome::Finished;
    for &t in times {
        let seg = FlowConfig {
            t_end: t,
            ..cfg.flow.clone()
        };
        let summary = run_flow(&mut state, &seg, &mut obs)?;
        // later segments start from an already recorded state
        obs.skip_first = true;
        outcome = summary.outcome;
        if outcome != FlowOutcome::Finished {
            break;
        }
        let f = curvature(&state.a);
        let density = f.density();
        samples.push(RefineSample {
            t: state.t,
            energy: state.energy,
            sup_f: density.iter().copied().fold(0.0, f64::max).sqrt(),
            profile: density_profile(torus.geometry(), &density, &mcfg.radii)?.into_iter().map(|p| p.1).collect(),
        });
    }
    obs.writer.flush()?;
    Ok(RefineLevel {
        side: torus.geometry().sizes()[0],
        spacing: torus.geometry().spacing(),
        outcome: outcome.label().into(),
        detector: obs.monitor.detector.verdict(&outcome).label().into(),
        concentrating: obs.monitor.detector.is_concentrating(),
        samples,
    })
}

pub fn cmd_refine_study(config_path: &Path, sides: &[usize], samples: usize, opts: &RunOptions) -> Result<RefineReport> {
    refine_study(&RunConfig::load(config_path)?, sides, samples, opts)
}

