//! Closed-loop engine coupling plant, controller and learner, with the ideal
//! and reference systems, trace metrics and the time-delay margin search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l1::{l1_norm_condition, L1Controller, L1NormCheck, L1NormInputs, TickOutput};
use crate::l1::ControllerConfig;
use crate::learner::{BayesianLearner, BoundSignal, LearnerConfig, UpdateOutcome};
use crate::numerics::{rk4_step, RealVector};
use crate::plant::{plant_derivative_with, DelayLine, DelayPath, PlantConfig, UncertaintyKind};

/// Reference command `r(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Step { amplitude: [f64; 3] },
    /// `amplitude_i · sin(frequency_i · t)`.
    Sinusoid { amplitude: [f64; 3], frequency: [f64; 3] },
}

impl Reference {
    /// `1 rad/s` on every axis.
    pub fn default_step() -> Self {
        Self::Step { amplitude: [1.0; 3] }
    }

    /// `sin(0.5 t)` on every axis.
    pub fn default_sinusoid() -> Self {
        Self::Sinusoid {
            amplitude: [1.0; 3],
            frequency: [0.5; 3],
        }
    }

    pub fn eval(&self, t: f64) -> RealVector {
        match self {
            Self::Step { amplitude } => RealVector::from_row_slice(amplitude),
            Self::Sinusoid { amplitude, frequency } => {
                RealVector::from_fn(3, |i, _| amplitude[i] * (frequency[i] * t).sin())
            }
        }
    }

    /// `‖r‖_L∞`.
    pub fn sup_norm(&self) -> f64 {
        let a = match self {
            Self::Step { amplitude } | Self::Sinusoid { amplitude, .. } => amplitude,
        };
        a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Default for Reference {
    fn default() -> Self {
        Self::default_step()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub duration: f64,
    /// Integration step; divides `T_s` and `T_data`.
    pub step: f64,
    pub reference: Reference,
    pub controller: ControllerConfig,
    pub plant: PlantConfig,
    /// `None` disables learning; the published model then stays at its prior.
    pub learner: Option<LearnerConfig>,
    pub seed: u64,
    /// Record every n-th step.
    pub record_decimation: usize,
    pub bound_signal: BoundSignal,
    /// `‖x‖∞` above which a run is declared unstable.
    pub blowup: f64,
    /// Diagnostic: force `σ̂ = f(x)` instead of running the adaptation law.
    pub oracle_sigma: bool,
}

impl ScenarioConfig {
    /// Reference quadrotor loop at `1 kHz` with default learner and step
    /// reference.
    pub fn quadrotor(
        controller: ControllerConfig,
        plant: PlantConfig,
        reference: Reference,
        duration: f64,
    ) -> Self {
        Self {
            duration,
            step: controller.ts,
            reference,
            controller,
            plant,
            learner: Some(LearnerConfig::default()),
            seed: 0,
            record_decimation: 10,
            bound_signal: BoundSignal::Pointwise,
            blowup: 100.0,
            oracle_sigma: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration must be > 0, got {}", self.duration)));
        }
        if !(self.step > 0.0) {
            return Err(Error::Config("step must be > 0".into()));
        }
        steps_in(self.controller.ts, self.step, "controller ts")?;
        if let Some(l) = &self.learner {
            l.validate()?;
            steps_in(l.t_data, self.step, "learner t_data")?;
        }
        steps_in(self.duration, self.step, "duration")?;
        if self.record_decimation == 0 {
            return Err(Error::Config("record_decimation must be >= 1".into()));
        }
        if !(self.blowup > 0.0) {
            return Err(Error::Config("blowup threshold must be > 0".into()));
        }
        if self.controller.state_dim() != 3 || self.controller.input_dim() != 3 {
            return Err(Error::Dimension("the quadrotor loop is three-dimensional".into()));
        }
        self.plant.uncertainty.validate()?;
        DelayLine::steps_for(self.plant.input_delay, self.step)?;
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.duration / self.step).round() as u64
    }

    /// Inputs for the L1-norm check: `L_f` and `B₀` estimated numerically over
    /// the ball of radius `ρ_r` for every scheduled uncertainty.
    pub fn l1_check(&self) -> Result<L1NormCheck> {
        let r_inf = self.reference.sup_norm();
        let rho_0 = self.plant.x0.amax();
        let provisional = l1_norm_condition(
            &self.controller,
            &L1NormInputs {
                lipschitz_f: 0.0,
                b0: 0.0,
                r_inf,
                rho_0,
                rho_r: None,
            },
        )?;
        let radius = provisional.rho_r;
        let kinds: Vec<UncertaintyKind> =
            self.plant.uncertainty.segments().iter().map(|s| s.kind).collect();
        let lipschitz_f = kinds
            .iter()
            .map(|k| estimate_lipschitz(k, radius))
            .fold(0.0, f64::max);
        let b0 = kinds
            .iter()
            .map(|k| k.eval(&RealVector::zeros(3)).amax())
            .fold(0.0, f64::max);
        l1_norm_condition(
            &self.controller,
            &L1NormInputs {
                lipschitz_f,
                b0,
                r_inf,
                rho_0,
                rho_r: Some(radius),
            },
        )
    }
}

fn steps_in(span: f64, step: f64, what: &str) -> Result<u64> {
    let n = (span / step).round();
    if n < 1.0 || (n * step - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::Config(format!(
            "{what} = {span} is not a whole multiple of the step {step}"
        )));
    }
    Ok(n as u64)
}

/// Largest induced ∞-norm of a central-difference Jacobian of `kind` on an
/// 11-point-per-axis grid over `{‖x‖∞ ≤ radius}`.
pub fn estimate_lipschitz(kind: &UncertaintyKind, radius: f64) -> f64 {
    let pts = 11;
    let h = 1e-6 * radius.max(1.0);
    let coord = |i: usize| -radius + 2.0 * radius * i as f64 / (pts - 1) as f64;
    let mut best = 0.0_f64;
    for i in 0..pts {
        for j in 0..pts {
            for k in 0..pts {
                let x = RealVector::from_row_slice(&[coord(i), coord(j), coord(k)]);
                let mut rows = [0.0_f64; 3];
                for c in 0..3 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[c] += h;
                    xm[c] -= h;
                    let d = (kind.eval(&xp) - kind.eval(&xm)) / (2.0 * h);
                    for (r, v) in rows.iter_mut().zip(d.iter()) {
                        *r += v.abs();
                    }
                }
                best = rows.iter().fold(best, |m, v| m.max(*v));
            }
        }
    }
    best
}

/// One recorded sample of every loop signal.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub x: [f64; 3],
    pub x_hat: [f64; 3],
    pub x_tilde: [f64; 3],
    pub u: [f64; 3],
    pub f_l: [f64; 3],
    pub eta: [f64; 3],
    pub sigma_hat: [f64; 3],
    pub f_true: [f64; 3],
    pub f_hat: [f64; 3],
    pub r: [f64; 3],
    pub x_id: [f64; 3],
    pub e_f_hat: f64,
    pub omega_filtered: f64,
}

impl TraceRow {
    pub const COLUMNS: [&'static str; 36] = [
        "t",
        "x1", "x2", "x3",
        "x_hat1", "x_hat2", "x_hat3",
        "x_tilde1", "x_tilde2", "x_tilde3",
        "u1", "u2", "u3",
        "f_l1", "f_l2", "f_l3",
        "eta1", "eta2", "eta3",
        "sigma_hat1", "sigma_hat2", "sigma_hat3",
        "f_true1", "f_true2", "f_true3",
        "f_hat1", "f_hat2", "f_hat3",
        "r1", "r2", "r3",
        "x_id1", "x_id2", "x_id3",
        "e_f_hat",
        "omega_filtered",
    ];

    pub fn to_values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::COLUMNS.len());
        v.push(self.t);
        for a in [
            &self.x,
            &self.x_hat,
            &self.x_tilde,
            &self.u,
            &self.f_l,
            &self.eta,
            &self.sigma_hat,
            &self.f_true,
            &self.f_hat,
            &self.r,
            &self.x_id,
        ] {
            v.extend_from_slice(a);
        }
        v.push(self.e_f_hat);
        v.push(self.omega_filtered);
        v
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != Self::COLUMNS.len() {
            return Err(Error::Dimension(format!(
                "trace row needs {} values, got {}",
                Self::COLUMNS.len(),
                v.len()
            )));
        }
        let tri = |k: usize| [v[1 + 3 * k], v[2 + 3 * k], v[3 + 3 * k]];
        Ok(Self {
            t: v[0],
            x: tri(0),
            x_hat: tri(1),
            x_tilde: tri(2),
            u: tri(3),
            f_l: tri(4),
            eta: tri(5),
            sigma_hat: tri(6),
            f_true: tri(7),
            f_hat: tri(8),
            r: tri(9),
            x_id: tri(10),
            e_f_hat: v[34],
            omega_filtered: v[35],
        })
    }
}

fn arr(v: &RealVector) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    LearnerPublish { update_index: usize, e_f_hat: f64, dataset_size: usize },
    LearnerRejected { candidate_e_f: f64, current_e_f: f64 },
    LearnerFailed { message: String },
    UncertaintySwitch { to: UncertaintyKind },
    /// The L1-norm condition does not hold for this configuration.
    L1ConditionWarning { lhs: f64, rhs: f64 },
    Unstable { state_norm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationTrace {
    pub rows: Vec<TraceRow>,
    pub events: Vec<Event>,
    pub unstable: bool,
}

impl SimulationTrace {
    pub fn publishes(&self) -> impl Iterator<Item = &Event> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::LearnerPublish { .. }))
    }
}

/// Stepping state of one closed-loop run. Cloning an engine forks the run.
#[derive(Debug, Clone)]
pub struct Engine {
    cfg: ScenarioConfig,
    k: u64,
    x: RealVector,
    x_id: RealVector,
    controller: L1Controller,
    learner: Option<BayesianLearner>,
    prior: crate::learner::LearnerModel,
    delay: DelayLine,
    steps_per_data: u64,
    learning_frozen: bool,
    unstable: bool,
    events: Vec<Event>,
}

/// Longest delay, in steps, that can be introduced after construction.
const DELAY_HISTORY: f64 = 0.25;

impl Engine {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let learner_cfg = cfg.learner.clone().unwrap_or_default();
        let prior = crate::learner::LearnerModel::prior(&learner_cfg, 3, 3)?;
        let learner = match &cfg.learner {
            Some(l) => Some(BayesianLearner::new(
                l.clone(),
                &cfg.controller.a_m,
                &cfg.controller.b_m,
                cfg.seed,
            )?),
            None => None,
        };
        let x = cfg.plant.x0.clone();
        let e_f0 = prior.bound_signal(cfg.bound_signal, &x);
        let controller = L1Controller::with_step(cfg.controller.clone(), e_f0, cfg.step)?;
        let delay_steps = DelayLine::steps_for(cfg.plant.input_delay, cfg.step)?;
        let history = ((DELAY_HISTORY / cfg.step).ceil() as usize).max(delay_steps + 1);
        let steps_per_data = match &cfg.learner {
            Some(l) => steps_in(l.t_data, cfg.step, "learner t_data")?,
            None => u64::MAX,
        };
        let mut events = Vec::new();
        let check = cfg.l1_check()?;
        if !check.satisfied {
            events.push(Event {
                t: 0.0,
                kind: EventKind::L1ConditionWarning {
                    lhs: check.lhs,
                    rhs: check.rhs,
                },
            });
        }
        Ok(Self {
            x_id: x.clone(),
            x,
            controller,
            learner,
            prior,
            delay: DelayLine::with_history(3, delay_steps, history),
            steps_per_data,
            learning_frozen: false,
            unstable: false,
            events,
            k: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.cfg.step
    }

    pub fn steps_taken(&self) -> u64 {
        self.k
    }

    pub fn state(&self) -> &RealVector {
        &self.x
    }

    pub fn is_unstable(&self) -> bool {
        self.unstable
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn controller(&self) -> &L1Controller {
        &self.controller
    }

    pub fn learner(&self) -> Option<&BayesianLearner> {
        self.learner.as_ref()
    }

    /// Changes the input delay from now on; past inputs are kept, so the
    /// first delayed samples are the inputs actually applied earlier.
    pub fn set_input_delay(&mut self, delay: f64) -> Result<()> {
        let steps = DelayLine::steps_for(delay, self.cfg.step)?;
        self.delay.set_delay_steps(steps);
        self.cfg.plant.input_delay = delay;
        Ok(())
    }

    /// Stops feeding the learner; the published model stays in place.
    pub fn freeze_learning(&mut self, frozen: bool) {
        self.learning_frozen = frozen;
    }

    fn model(&self) -> &crate::learner::LearnerModel {
        match &self.learner {
            Some(l) => l.model(),
            None => &self.prior,
        }
    }

    fn row(&self, t: f64, r: &RealVector, out: &TickOutput, e_f: f64) -> TraceRow {
        let kind = self.cfg.plant.uncertainty.kind_at(t);
        TraceRow {
            t,
            x: arr(&self.x),
            x_hat: arr(&out.x_hat),
            x_tilde: arr(&(&out.x_hat - &self.x)),
            u: arr(&out.u),
            f_l: arr(&out.f_l),
            eta: arr(&out.eta),
            sigma_hat: arr(&out.sigma_hat),
            f_true: arr(&kind.eval(&self.x)),
            f_hat: arr(&out.f_hat),
            r: arr(r),
            x_id: arr(&self.x_id),
            e_f_hat: e_f,
            omega_filtered: out.omega_filtered,
        }
    }

    fn controller_tick(&mut self, t: f64, r: &RealVector) -> Result<(TickOutput, f64)> {
        let model = self.model();
        let f_hat = model.f_hat(&self.x);
        let e_f = model.bound_signal(self.cfg.bound_signal, &self.x);
        let oracle = self
            .cfg
            .oracle_sigma
            .then(|| self.cfg.plant.uncertainty.kind_at(t).eval(&self.x));
        let out = self
            .controller
            .tick_with(t, &self.x, r, &f_hat, e_f, oracle.as_ref())?;
        Ok((out, e_f))
    }

    /// Row at the current time without advancing anything.
    pub fn peek_row(&self) -> Result<TraceRow> {
        let mut probe = self.clone();
        let t = probe.time();
        let r = probe.cfg.reference.eval(t);
        let (out, e_f) = probe.controller_tick(t, &r)?;
        Ok(probe.row(t, &r, &out, e_f))
    }

    /// Advances one step and returns the row for the time the step started.
    /// After an instability the engine refuses to step further.
    pub fn step(&mut self) -> Result<TraceRow> {
        if self.unstable {
            return Err(Error::Divergence { t: self.time() });
        }
        let h = self.cfg.step;
        let t = self.time();
        let r = self.cfg.reference.eval(t);
        let (out, e_f) = self.controller_tick(t, &r)?;
        let row = self.row(t, &r, &out, e_f);

        let kind = self.cfg.plant.uncertainty.kind_at(t);
        let x_k = self.x.clone();
        let (u_applied, learner_u) = match self.cfg.plant.delay_path {
            DelayPath::Adaptive => {
                let d = self.delay.push(out.u.clone());
                (d.clone(), d)
            }
            DelayPath::Total => {
                let total = self.cfg.plant.baseline(&x_k) + &out.u;
                let d = self.delay.push(total);
                let adaptive_part = &d - self.cfg.plant.baseline(&x_k);
                (d, adaptive_part)
            }
        };
        let plant = &self.cfg.plant;
        let path = plant.delay_path;
        let next = rk4_step(
            |_, x| {
                let u_total = match path {
                    DelayPath::Adaptive => plant.baseline(x) + &u_applied,
                    DelayPath::Total => u_applied.clone(),
                };
                plant_derivative_with(x, &u_total, &kind, plant)
            },
            t,
            &x_k,
            h,
        );

        let a = &self.cfg.controller.a_m;
        let b = &self.cfg.controller.b_m;
        let reference = self.cfg.reference;
        let k_g = self.cfg.controller.k_g();
        self.x_id = rk4_step(
            |tau, xi| a * xi + b * (k_g * reference.eval(tau)),
            t,
            &self.x_id,
            h,
        )?;
        self.k += 1;
        let t_next = self.time();

        match next {
            Ok(x) if x.iter().all(|v| v.is_finite()) && x.amax() <= self.cfg.blowup => {
                self.x = x;
            }
            Ok(x) => {
                let norm = if x.iter().all(|v| v.is_finite()) { x.amax() } else { f64::INFINITY };
                self.x = x;
                self.flag_unstable(t_next, norm);
                return Ok(row);
            }
            Err(_) => {
                self.x = RealVector::from_element(3, f64::NAN);
                self.flag_unstable(t_next, f64::INFINITY);
                return Ok(row);
            }
        }

        let next_kind = self.cfg.plant.uncertainty.kind_at(t_next);
        if next_kind != kind {
            self.events.push(Event {
                t: t_next,
                kind: EventKind::UncertaintySwitch { to: next_kind },
            });
        }

        if !self.learning_frozen && self.k % self.steps_per_data == 0 {
            if let Some(learner) = self.learner.as_mut() {
                learner.push(t_next, self.x.clone(), learner_u)?;
                let kind = match learner.maybe_update(t_next) {
                    UpdateOutcome::NoChange => None,
                    UpdateOutcome::Published {
                        update_index,
                        e_f_hat,
                        dataset_size,
                    } => Some(EventKind::LearnerPublish {
                        update_index,
                        e_f_hat,
                        dataset_size,
                    }),
                    UpdateOutcome::Rejected {
                        candidate_e_f,
                        current_e_f,
                    } => Some(EventKind::LearnerRejected {
                        candidate_e_f,
                        current_e_f,
                    }),
                    UpdateOutcome::Failed(e) => Some(EventKind::LearnerFailed {
                        message: e.to_string(),
                    }),
                };
                if let Some(kind) = kind {
                    self.events.push(Event { t: t_next, kind });
                }
            }
        }
        Ok(row)
    }

    fn flag_unstable(&mut self, t: f64, state_norm: f64) {
        self.unstable = true;
        self.events.push(Event {
            t,
            kind: EventKind::Unstable { state_norm },
        });
    }

    /// Advances `n` steps without recording; stops early on instability.
    pub fn advance(&mut self, n: u64) -> Result<()> {
        for _ in 0..n {
            if self.unstable {
                break;
            }
            self.step()?;
        }
        Ok(())
    }

    /// Runs to the configured duration, recording every
    /// `record_decimation`-th row plus the final one.
    pub fn run_to_end(mut self) -> Result<SimulationTrace> {
        let total = self.cfg.total_steps();
        let dec = self.cfg.record_decimation as u64;
        let mut rows = Vec::with_capacity((total / dec + 1) as usize);
        while self.k < total {
            let k = self.k;
            let row = self.step()?;
            if k % dec == 0 {
                rows.push(row);
            }
            if self.unstable {
                // abort row: the state that crossed the threshold
                let mut last = row;
                last.t = self.time();
                last.x = arr(&self.x);
                last.x_tilde = [
                    last.x_hat[0] - last.x[0],
                    last.x_hat[1] - last.x[1],
                    last.x_hat[2] - last.x[2],
                ];
                rows.push(last);
                break;
            }
        }
        if !self.unstable {
            rows.push(self.peek_row()?);
        }
        Ok(SimulationTrace {
            rows,
            events: self.events,
            unstable: self.unstable,
        })
    }
}

pub fn run(cfg: &ScenarioConfig) -> Result<SimulationTrace> {
    Engine::new(cfg.clone())?.run_to_end()
}

/// Sample of the non-adaptive reference system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub t: f64,
    pub x_ref: [f64; 3],
    pub u_ref: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceTrace {
    pub rows: Vec<ReferenceRow>,
    pub diverged: bool,
}

/// Integrates `ẋ = A_m x + B_m (u + f(x))` with `u = C(s)(k_g r − f(x))`,
/// the filter discretised exactly for inputs held over one step. The
/// uncertainty is the plant's own schedule.
pub fn run_reference_system(cfg: &ScenarioConfig) -> Result<ReferenceTrace> {
    cfg.validate()?;
    let h = cfg.step;
    let total = cfg.total_steps();
    let dec = cfg.record_decimation as u64;
    let a = &cfg.controller.a_m;
    let b = &cfg.controller.b_m;
    let k_g = cfg.controller.k_g();
    let alpha = (-cfg.controller.omega_c * h).exp();
    let mut x = cfg.plant.x0.clone();
    let mut v = RealVector::zeros(3);
    let mut out = ReferenceTrace::default();
    for k in 0..=total {
        let t = k as f64 * h;
        let kind = cfg.plant.uncertainty.kind_at(t);
        let input = k_g * cfg.reference.eval(t) - kind.eval(&x);
        v = &v * alpha + input * (1.0 - alpha);
        if k % dec == 0 || k == total {
            out.rows.push(ReferenceRow {
                t,
                x_ref: arr(&x),
                u_ref: arr(&v),
            });
        }
        if k == total {
            break;
        }
        let u = v.clone();
        match rk4_step(|_, xs| a * xs + b * (&u + kind.eval(xs)), t, &x, h) {
            Ok(next) if next.iter().all(|e| e.is_finite()) && next.amax() <= cfg.blowup => x = next,
            _ => {
                out.diverged = true;
                break;
            }
        }
    }
    Ok(out)
}

/// Per-row derived signals of a trace.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricSeries {
    pub t: Vec<f64>,
    /// `‖x − x_id‖₂`.
    pub ideal_error: Vec<f64>,
    pub f_l_norm: Vec<f64>,
    pub eta_norm: Vec<f64>,
    /// `‖x̃‖∞`.
    pub x_tilde_inf: Vec<f64>,
    /// `|x_i − r_i|`.
    pub tracking: Vec<[f64; 3]>,
}

fn norm2(v: &[f64; 3]) -> f64 {
    v.iter().map(|e| e * e).sum::<f64>().sqrt()
}

pub fn metrics(trace: &SimulationTrace) -> MetricSeries {
    let mut m = MetricSeries::default();
    for row in &trace.rows {
        m.t.push(row.t);
        let d = [
            row.x[0] - row.x_id[0],
            row.x[1] - row.x_id[1],
            row.x[2] - row.x_id[2],
        ];
        m.ideal_error.push(norm2(&d));
        m.f_l_norm.push(norm2(&row.f_l));
        m.eta_norm.push(norm2(&row.eta));
        m.x_tilde_inf
            .push(row.x_tilde.iter().fold(0.0, |a, v| a.max(v.abs())));
        m.tracking.push([
            (row.x[0] - row.r[0]).abs(),
            (row.x[1] - row.r[1]).abs(),
            (row.x[2] - row.r[2]).abs(),
        ]);
    }
    m
}

/// Aggregates over `t0 ≤ t ≤ t1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowSummary {
    pub t0: f64,
    pub t1: f64,
    pub samples: usize,
    pub mean_ideal_error: f64,
    pub mean_f_l: f64,
    pub mean_eta: f64,
    pub mean_x_tilde_inf: f64,
    pub mean_tracking: [f64; 3],
}

impl MetricSeries {
    fn indices(&self, t0: f64, t1: f64) -> Vec<usize> {
        let eps = 1e-9;
        (0..self.t.len())
            .filter(|&i| self.t[i] >= t0 - eps && self.t[i] <= t1 + eps)
            .collect()
    }

    /// Mean of `series` over rows with `t0 ≤ t ≤ t1`; 0 for an empty window.
    pub fn window_mean(&self, series: &[f64], t0: f64, t1: f64) -> f64 {
        let idx = self.indices(t0, t1);
        if idx.is_empty() {
            return 0.0;
        }
        idx.iter().map(|&i| series[i]).sum::<f64>() / idx.len() as f64
    }

    pub fn window(&self, t0: f64, t1: f64) -> WindowSummary {
        let idx = self.indices(t0, t1);
        let n = idx.len().max(1) as f64;
        let mut tr = [0.0; 3];
        for &i in &idx {
            for (a, v) in tr.iter_mut().zip(self.tracking[i]) {
                *a += v / n;
            }
        }
        WindowSummary {
            t0,
            t1,
            samples: idx.len(),
            mean_ideal_error: self.window_mean(&self.ideal_error, t0, t1),
            mean_f_l: self.window_mean(&self.f_l_norm, t0, t1),
            mean_eta: self.window_mean(&self.eta_norm, t0, t1),
            mean_x_tilde_inf: self.window_mean(&self.x_tilde_inf, t0, t1),
            mean_tracking: tr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginOptions {
    pub resolution: f64,
    /// Time each candidate is simulated for after the delay is applied.
    pub horizon: f64,
    pub upper: f64,
    /// Run the undelayed loop to this time first and apply the delay from
    /// there; `None` applies it from `t = 0`.
    pub snapshot_time: Option<f64>,
    /// Stop learning while the delay is active.
    pub freeze_learner: bool,
}

impl Default for MarginOptions {
    fn default() -> Self {
        Self {
            resolution: 0.001,
            horizon: 20.0,
            upper: 0.2,
            snapshot_time: None,
            freeze_learner: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginCandidate {
    pub delay: f64,
    pub stable: bool,
    pub max_state_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginResult {
    /// Largest delay found stable.
    pub margin: f64,
    /// `(stable, unstable)`; the upper end is `None` when even the search
    /// bound was stable.
    pub bracket: (f64, Option<f64>),
    pub iterations: usize,
    pub criterion: String,
    pub exceeds_search_range: bool,
    pub candidates: Vec<MarginCandidate>,
}

/// Bisection on the input delay for the largest delay that keeps
/// `‖x‖∞ ≤ blowup` over the horizon.
pub fn delay_margin_search(base: &ScenarioConfig, opts: &MarginOptions) -> Result<MarginResult> {
    base.validate()?;
    if !(opts.resolution > 0.0 && opts.horizon > 0.0 && opts.upper > 0.0) {
        return Err(Error::Config("margin search needs positive resolution, horizon and upper bound".into()));
    }
    let h = base.step;
    let horizon_steps = (opts.horizon / h).round() as u64;
    let res_steps = ((opts.resolution / h).floor() as u64).max(1);
    let upper_steps = (opts.upper / h).floor() as u64;

    let mut start = base.clone();
    start.plant.input_delay = 0.0;
    let mut origin = Engine::new(start)?;
    if let Some(ts) = opts.snapshot_time {
        origin.advance((ts / h).round() as u64)?;
        if origin.is_unstable() {
            return Err(Error::Precondition(format!(
                "scenario is unstable before the snapshot at {ts} s"
            )));
        }
    }
    let history_needed = upper_steps as f64 * h;
    if history_needed > DELAY_HISTORY + 1e-12 {
        return Err(Error::Config(format!(
            "search bound {} s exceeds the supported delay history {DELAY_HISTORY} s",
            opts.upper
        )));
    }

    let evaluate = |steps: u64| -> Result<MarginCandidate> {
        let mut e = origin.clone();
        let delay = steps as f64 * h;
        e.set_input_delay(delay)?;
        e.freeze_learning(opts.freeze_learner);
        let mut max_norm = e.state().amax();
        for _ in 0..horizon_steps {
            e.step()?;
            let n = e.state().amax();
            max_norm = if n.is_finite() { max_norm.max(n) } else { f64::INFINITY };
            if e.is_unstable() {
                break;
            }
        }
        Ok(MarginCandidate {
            delay,
            stable: !e.is_unstable(),
            max_state_norm: max_norm,
        })
    };

    let mut candidates = Vec::new();
    let zero = evaluate(0)?;
    candidates.push(zero);
    if !zero.stable {
        return Err(Error::Precondition("scenario is unstable at zero delay".into()));
    }
    let top = evaluate(upper_steps)?;
    candidates.push(top);
    let criterion = format!(
        "‖x‖∞ > {} or non-finite within {} s",
        base.blowup, opts.horizon
    );
    if top.stable {
        return Ok(MarginResult {
            margin: top.delay,
            bracket: (top.delay, None),
            iterations: candidates.len(),
            criterion,
            exceeds_search_range: true,
            candidates,
        });
    }
    let (mut lo, mut hi) = (0u64, upper_steps);
    while hi - lo > res_steps {
        let mid = lo + (hi - lo) / 2;
        let c = evaluate(mid)?;
        candidates.push(c);
        if c.stable {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(MarginResult {
        margin: lo as f64 * h,
        bracket: (lo as f64 * h, Some(hi as f64 * h)),
        iterations: candidates.len(),
        criterion,
        exceeds_search_range: false,
        candidates,
    })
}
