use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use l1gp_core::gp::{fit, GpDataset, UniformBound};
use l1gp_core::scenario::{
    delay_margin_search, metrics, run, Event, MarginCandidate, SimulationTrace,
};
use l1gp_core::Error;

use crate::config::FileConfig;
use crate::output::{ensure_dir, summarize, write_events, write_json, write_trace};
use crate::{worker_threads, CliError, Status};

#[derive(Serialize)]
struct Flags {
    stable: bool,
    l1_condition_satisfied: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    wall_clock_s: f64,
    config: &'a FileConfig,
    events: &'a [Event],
    flags: Flags,
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &FileConfig,
    started: Instant,
    events: &[Event],
    stable: bool,
) -> Result<(), CliError> {
    let l1_ok = cfg
        .scenario()
        .and_then(|s| s.l1_check().map_err(CliError::Run))
        .map(|c| c.satisfied)
        .unwrap_or(false);
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            tool: "l1gp",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: cfg.seed,
            wall_clock_s: started.elapsed().as_secs_f64(),
            config: cfg,
            events,
            flags: Flags {
                stable,
                l1_condition_satisfied: l1_ok,
            },
        },
    )
}

fn run_scenario(cfg: &FileConfig) -> Result<SimulationTrace, CliError> {
    run(&cfg.scenario()?).map_err(CliError::Run)
}

pub fn simulate(config: &Path, out: &Path) -> Result<Status, CliError> {
    let started = Instant::now();
    let cfg = FileConfig::load(config)?;
    let trace = run_scenario(&cfg)?;
    ensure_dir(out)?;
    write_trace(&out.join("trace.csv"), &trace)?;
    write_events(&out.join("events.csv"), &trace.events)?;
    write_json(&out.join("summary.json"), &summarize(&trace))?;
    write_manifest(out, "simulate", &cfg, started, &trace.events, !trace.unstable)?;
    Ok(if trace.unstable {
        Status::Unstable
    } else {
        Status::Ok
    })
}

#[derive(Serialize)]
struct MarginReport {
    margin_s: f64,
    bracket: (f64, Option<f64>),
    bracket_width_s: Option<f64>,
    iterations: usize,
    criterion: String,
    exceeds_search_range: bool,
    resolution_s: f64,
    horizon_s: f64,
    snapshot_time_s: Option<f64>,
    candidates: Vec<MarginCandidate>,
}

pub fn margin(
    config: &Path,
    out: &Path,
    resolution: Option<f64>,
    horizon: Option<f64>,
) -> Result<Status, CliError> {
    let started = Instant::now();
    let mut cfg = FileConfig::load(config)?;
    if let Some(r) = resolution {
        cfg.margin.resolution = r;
    }
    if let Some(h) = horizon {
        cfg.margin.horizon = h;
    }
    let scenario = cfg.scenario()?;
    let opts = cfg.margin_options();
    let result = delay_margin_search(&scenario, &opts).map_err(|e| match e {
        Error::Precondition(m) => CliError::Precondition(m),
        Error::Config(m) => CliError::Config(m),
        other => CliError::Run(other),
    })?;
    ensure_dir(out)?;
    write_json(
        &out.join("margin.json"),
        &MarginReport {
            margin_s: result.margin,
            bracket: result.bracket,
            bracket_width_s: result.bracket.1.map(|hi| hi - result.bracket.0),
            iterations: result.iterations,
            criterion: result.criterion,
            exceeds_search_range: result.exceeds_search_range,
            resolution_s: opts.resolution,
            horizon_s: opts.horizon,
            snapshot_time_s: opts.snapshot_time,
            candidates: result.candidates,
        },
    )?;
    write_manifest(out, "margin", &cfg, started, &[], true)?;
    Ok(Status::Ok)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbePoint {
    pub x: [f64; 3],
    /// `‖f(x) − μ(x)‖∞`.
    pub error: f64,
    pub e_f: f64,
    /// `e_f − error`; negative on a violation.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Coverage {
    pub n_train: usize,
    pub n_probe: usize,
    pub beta: f64,
    pub sqrt_beta: f64,
    pub gamma: f64,
    pub violations: usize,
    pub violation_fraction: f64,
    pub max_abs_f: f64,
    pub points: Vec<ProbePoint>,
}

fn uniform_box(rng: &mut ChaCha8Rng, kappa: f64) -> DVector<f64> {
    DVector::from_fn(3, |_, _| rng.random_range(-kappa..=kappa))
}

/// Fits the configured GP to noisy samples of the configured function and
/// checks the uniform bound on uniformly drawn probes.
pub fn coverage(cfg: &FileConfig, n_train: usize, n_probe: usize) -> Result<Coverage, CliError> {
    let bc = &cfg.bound_check;
    let f = bc
        .function
        .or_else(|| cfg.plant.uncertainty.first().map(|s| s.kind))
        .ok_or_else(|| CliError::Config("bound_check.function is not set".into()))?;
    let learner = cfg.learner.to_core();
    learner.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, learner.noise_std).map_err(|e| CliError::Config(e.to_string()))?;

    let mut xs = Vec::with_capacity(n_train);
    let mut ys = Vec::with_capacity(n_train);
    for _ in 0..n_train {
        let x = uniform_box(&mut rng, bc.train_kappa);
        let mut y = f.eval(&x);
        for v in y.iter_mut() {
            *v += noise.sample(&mut rng);
        }
        xs.push(x);
        ys.push(y);
    }
    let ds = if n_train == 0 {
        GpDataset::empty(3, 3, learner.gp_noise_var())
    } else {
        GpDataset::from_rows(&xs, &ys, learner.gp_noise_var())
    }
    .map_err(CliError::Run)?;
    let post = fit(&ds, learner.kernel).map_err(CliError::Run)?;
    let bound = UniformBound::new(&post, &learner.bound).map_err(CliError::Run)?;

    let mut points = Vec::with_capacity(n_probe);
    let mut max_abs_f = 0.0_f64;
    for _ in 0..n_probe {
        let x = uniform_box(&mut rng, bc.probe_kappa);
        let truth = f.eval(&x);
        let pred = post.predict(&x).map_err(CliError::Run)?;
        let error = (&truth - &pred.mean).amax();
        let e_f = bound.envelope(pred.std.amax());
        max_abs_f = max_abs_f.max(truth.amax());
        points.push(ProbePoint {
            x: [x[0], x[1], x[2]],
            error,
            e_f,
            margin: e_f - error,
        });
    }
    let violations = points.iter().filter(|p| p.margin < 0.0).count();
    Ok(Coverage {
        n_train,
        n_probe,
        beta: bound.sqrt_beta * bound.sqrt_beta,
        sqrt_beta: bound.sqrt_beta,
        gamma: bound.gamma,
        violations,
        violation_fraction: if n_probe == 0 {
            0.0
        } else {
            violations as f64 / n_probe as f64
        },
        max_abs_f,
        points,
    })
}

pub fn bound_check(
    config: &Path,
    out: &Path,
    n_train: Option<usize>,
    n_probe: Option<usize>,
) -> Result<Status, CliError> {
    let started = Instant::now();
    let mut cfg = FileConfig::load(config)?;
    if let Some(n) = n_train {
        cfg.bound_check.n_train = n;
    }
    if let Some(n) = n_probe {
        cfg.bound_check.n_probe = n;
    }
    let cov = coverage(&cfg, cfg.bound_check.n_train, cfg.bound_check.n_probe)?;
    ensure_dir(out)?;
    write_json(&out.join("coverage.json"), &cov)?;
    write_manifest(out, "bound-check", &cfg, started, &[], true)?;
    Ok(Status::Ok)
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowComparison {
    pub t0: f64,
    pub t1: f64,
    pub mean_ideal_error_a: f64,
    pub mean_ideal_error_b: f64,
    /// `b / a`; 1 when both are zero.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub stable_a: bool,
    pub stable_b: bool,
    pub windows: Vec<WindowComparison>,
}

/// Windowed `‖x − x_id‖` means of two traces: `[0, 5]`, consecutive 10 s
/// blocks and the whole run.
pub fn compare_traces(a: &SimulationTrace, b: &SimulationTrace, duration: f64) -> Comparison {
    let (ma, mb) = (metrics(a), metrics(b));
    let mut spans = vec![(0.0, 5.0_f64.min(duration))];
    let mut t0 = 0.0;
    while t0 + 1e-9 < duration {
        let t1 = (t0 + 10.0).min(duration);
        spans.push((t0, t1));
        t0 = t1;
    }
    spans.push((0.0, duration));
    let windows = spans
        .into_iter()
        .map(|(t0, t1)| {
            let ea = ma.window_mean(&ma.ideal_error, t0, t1);
            let eb = mb.window_mean(&mb.ideal_error, t0, t1);
            WindowComparison {
                t0,
                t1,
                mean_ideal_error_a: ea,
                mean_ideal_error_b: eb,
                ratio: if ea == eb { 1.0 } else { eb / ea },
            }
        })
        .collect();
    Comparison {
        stable_a: !a.unstable,
        stable_b: !b.unstable,
        windows,
    }
}

pub fn compare(config_a: &Path, config_b: &Path, out: &Path) -> Result<Status, CliError> {
    let started = Instant::now();
    let a = FileConfig::load(config_a)?;
    let b = FileConfig::load(config_b)?;
    if a.duration != b.duration || a.step != b.step {
        return Err(CliError::Config(format!(
            "configs differ in duration/step: {}/{} vs {}/{}",
            a.duration, a.step, b.duration, b.step
        )));
    }
    let (sa, sb) = (a.scenario()?, b.scenario()?);
    let (ta, tb) = if worker_threads() >= 2 {
        std::thread::scope(|s| {
            let ha = s.spawn(|| run(&sa));
            let hb = s.spawn(|| run(&sb));
            (
                ha.join().expect("worker panicked"),
                hb.join().expect("worker panicked"),
            )
        })
    } else {
        (run(&sa), run(&sb))
    };
    let (ta, tb) = (ta.map_err(CliError::Run)?, tb.map_err(CliError::Run)?);
    let cmp = compare_traces(&ta, &tb, a.duration);
    ensure_dir(out)?;
    write_json(&out.join("compare.json"), &cmp)?;
    write_manifest(out, "compare", &a, started, &[], cmp.stable_a && cmp.stable_b)?;
    Ok(if cmp.stable_a && cmp.stable_b {
        Status::Ok
    } else {
        Status::Unstable
    })
}
