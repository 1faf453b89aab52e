//! The sampled Bayesian learner.
//!
//! Measurements `(t, x, u)` arrive every `T_data`. Once a sample has a full
//! Savitzky–Golay window around it, its uncertainty target
//! `y = B_m⁺(ẋ − A_m x) − u` is reconstructed from the smoothed derivative,
//! corrupted with the configured measurement noise, and appended to the
//! dataset. After every `N_update` new measurements the GP is refitted on the
//! whole dataset and, subject to the gating rule, published as a new
//! piecewise-static model `{f̂ = μ_k, ê_f}`.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{fit, GpDataset, GpPosterior, SeKernel, UniformBound, UniformBoundConfig};
use crate::l1::pseudo_inverse;
use crate::numerics::{estimate_derivative, RealMatrix, RealVector};

/// Whether a refitted model is published unconditionally or only when it
/// shrinks the published error bound.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Gating {
    #[default]
    Always,
    /// Publish only if `candidate ê_f < gamma_tol · current ê_f`.
    Improvement { gamma_tol: f64 },
}

impl Gating {
    pub fn admits(&self, candidate_e_f: f64, current_e_f: f64) -> bool {
        match *self {
            Self::Always => true,
            Self::Improvement { gamma_tol } => candidate_e_f < gamma_tol * current_e_f,
        }
    }
}

/// Which error-bound signal drives the adaptive bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSignal {
    /// Domain-wide grid maximum, constant between publishes.
    GridMax,
    /// `e_f` evaluated at the current state.
    #[default]
    Pointwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// Sampling period of the learner.
    pub t_data: f64,
    /// Refit after this many new measurements.
    pub n_update: usize,
    pub gating: Gating,
    /// Dataset cap; the oldest targets are dropped first.
    pub max_points: usize,
    pub kernel: SeKernel,
    pub bound: UniformBoundConfig,
    /// Standard deviation of the noise added to reconstructed targets.
    pub noise_std: f64,
    pub sg_window: usize,
    pub sg_order: usize,
    /// Half-width of the grid used for the published `ê_f`.
    pub grid_kappa: f64,
    /// Grid points per axis.
    pub grid_points: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            t_data: 1.0,
            n_update: 10,
            gating: Gating::Always,
            max_points: 512,
            kernel: SeKernel::default(),
            bound: UniformBoundConfig::default(),
            noise_std: 0.01,
            sg_window: 5,
            sg_order: 2,
            grid_kappa: 5.0,
            grid_points: 21,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_data > 0.0) {
            return Err(Error::Config("learner t_data must be > 0".into()));
        }
        if self.n_update == 0 {
            return Err(Error::Config("learner n_update must be >= 1".into()));
        }
        if let Gating::Improvement { gamma_tol } = self.gating {
            if !(gamma_tol > 0.0 && gamma_tol < 1.0) {
                return Err(Error::Config(format!(
                    "improvement gating needs gamma_tol in (0, 1), got {gamma_tol}"
                )));
            }
        }
        if self.max_points == 0 {
            return Err(Error::Config("learner max_points must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        if self.sg_window % 2 == 0 || self.sg_window < self.sg_order + 1 {
            return Err(Error::Config(
                "sg_window must be odd and at least sg_order + 1".into(),
            ));
        }
        if !(self.grid_kappa > 0.0) || self.grid_points < 2 {
            return Err(Error::Config("grid needs kappa > 0 and >= 2 points".into()));
        }
        self.kernel.validate()?;
        self.bound.validate()
    }

    /// Noise variance the GP is conditioned with.
    pub fn gp_noise_var(&self) -> f64 {
        (self.noise_std * self.noise_std).max(1e-8)
    }
}

/// The published pair `{f̂, ê_f}`, constant between publishes.
#[derive(Debug, Clone)]
pub struct LearnerModel {
    pub update_index: usize,
    pub published_at: f64,
    /// Grid maximum of `e_f` over the operational domain.
    pub e_f_hat: f64,
    pub dataset_size: usize,
    posterior: Option<Arc<GpPosterior>>,
    bound: UniformBound,
    prior_std: f64,
    output_dim: usize,
}

impl LearnerModel {
    /// Model before any data: `f̂ ≡ 0`, `ê_f = √β σ_f (+γ)`.
    pub fn prior(cfg: &LearnerConfig, input_dim: usize, output_dim: usize) -> Result<Self> {
        let empty = fit(
            &GpDataset::empty(input_dim, output_dim, cfg.gp_noise_var())?,
            cfg.kernel,
        )?;
        let bound = UniformBound::new(&empty, &cfg.bound)?;
        Ok(Self {
            update_index: 0,
            published_at: 0.0,
            e_f_hat: bound.envelope(cfg.kernel.signal_std),
            dataset_size: 0,
            posterior: None,
            bound,
            prior_std: cfg.kernel.signal_std,
            output_dim,
        })
    }

    pub fn f_hat(&self, x: &RealVector) -> RealVector {
        match &self.posterior {
            Some(p) => p.mean(x).expect("state dimension fixed at construction"),
            None => RealVector::zeros(self.output_dim),
        }
    }

    /// `e_f(x)` of this model.
    pub fn e_f_at(&self, x: &RealVector) -> f64 {
        let sd = match &self.posterior {
            Some(p) => p.std(x).expect("state dimension fixed at construction"),
            None => self.prior_std,
        };
        self.bound.envelope(sd)
    }

    pub fn bound_signal(&self, signal: BoundSignal, x: &RealVector) -> f64 {
        match signal {
            BoundSignal::GridMax => self.e_f_hat,
            BoundSignal::Pointwise => self.e_f_at(x),
        }
    }

    pub fn posterior(&self) -> Option<&GpPosterior> {
        self.posterior.as_deref()
    }

    pub fn uniform_bound(&self) -> UniformBound {
        self.bound
    }
}

/// One raw learner sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub x: RealVector,
    pub u: RealVector,
}

/// Ring of the most recent raw samples, uniformly spaced by `T_data`.
#[derive(Debug, Clone)]
pub struct MeasurementBuffer {
    samples: VecDeque<Measurement>,
    capacity: usize,
    t_data: f64,
}

impl MeasurementBuffer {
    pub fn new(capacity: usize, t_data: f64) -> Self {
        Self {
            samples: VecDeque::with_capacity(capacity),
            capacity,
            t_data,
        }
    }

    pub fn push(&mut self, m: Measurement) -> Result<()> {
        if let Some(last) = self.samples.back() {
            if ((m.t - last.t) - self.t_data).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "learner samples must be spaced by {} s (got {} -> {})",
                    self.t_data, last.t, m.t
                )));
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(m);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Measurement> {
        self.samples.iter()
    }
}

/// `y = B_m⁺(ẋ − A_m x) − u`.
pub fn target_from_derivative(
    x_dot: &RealVector,
    x: &RealVector,
    u: &RealVector,
    a_m: &RealMatrix,
    b_pinv: &RealMatrix,
) -> RealVector {
    b_pinv * (x_dot - a_m * x) - u
}

/// Reconstructs the target of sample `j` of `window`, or `None` while the
/// window around it is incomplete. The first `sg_window / 2` samples of a
/// series use a one-sided fit since no later data can improve them.
pub fn reconstruct_target(
    window: &[Measurement],
    j: usize,
    a_m: &RealMatrix,
    b_pinv: &RealMatrix,
    sg_window: usize,
    sg_order: usize,
) -> Result<Option<RealVector>> {
    let half = sg_window / 2;
    if window.len() < sg_window || j + half >= window.len() {
        return Ok(None);
    }
    let (start, local) = if j < half { (0, j) } else { (j - half, half) };
    let series: Vec<(f64, RealVector)> = window[start..start + sg_window]
        .iter()
        .map(|m| (m.t, m.x.clone()))
        .collect();
    let d = estimate_derivative(&series, sg_window, sg_order)?;
    let m = &window[j];
    Ok(Some(target_from_derivative(&d[local], &m.x, &m.u, a_m, b_pinv)))
}

/// What a learner tick did.
#[derive(Debug, Clone)]
pub enum UpdateOutcome {
    NoChange,
    Published { update_index: usize, e_f_hat: f64, dataset_size: usize },
    /// Refitted but held back by the improvement gate.
    Rejected { candidate_e_f: f64, current_e_f: f64 },
    /// Refit failed; the current model stays in place.
    Failed(Error),
}

#[derive(Debug, Clone)]
pub struct BayesianLearner {
    cfg: LearnerConfig,
    a_m: RealMatrix,
    b_pinv: RealMatrix,
    input_dim: usize,
    output_dim: usize,
    buffer: MeasurementBuffer,
    total_samples: usize,
    inputs: VecDeque<RealVector>,
    targets: VecDeque<RealVector>,
    new_since_refit: usize,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
    model: LearnerModel,
}

impl BayesianLearner {
    pub fn new(cfg: LearnerConfig, a_m: &RealMatrix, b_m: &RealMatrix, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let input_dim = a_m.nrows();
        let output_dim = b_m.ncols();
        let model = LearnerModel::prior(&cfg, input_dim, output_dim)?;
        let noise = if cfg.noise_std > 0.0 {
            Some(Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            buffer: MeasurementBuffer::new(cfg.sg_window, cfg.t_data),
            a_m: a_m.clone(),
            b_pinv: pseudo_inverse(b_m)?,
            input_dim,
            output_dim,
            total_samples: 0,
            inputs: VecDeque::new(),
            targets: VecDeque::new(),
            new_since_refit: 0,
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
            model,
            cfg,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn model(&self) -> &LearnerModel {
        &self.model
    }

    /// Targets reconstructed so far.
    pub fn dataset_size(&self) -> usize {
        self.targets.len()
    }

    pub fn new_since_refit(&self) -> usize {
        self.new_since_refit
    }

    /// Records a measurement and reconstructs every target whose window just
    /// became complete.
    pub fn push(&mut self, t: f64, x: RealVector, u: RealVector) -> Result<()> {
        if x.len() != self.input_dim || u.len() != self.output_dim {
            return Err(Error::Dimension("learner measurement has the wrong size".into()));
        }
        self.buffer.push(Measurement { t, x, u })?;
        self.total_samples += 1;
        self.new_since_refit += 1;

        let w = self.cfg.sg_window;
        let half = w / 2;
        let window: Vec<Measurement> = self.buffer.iter().cloned().collect();
        let ready: Vec<usize> = if self.total_samples < w {
            vec![]
        } else if self.total_samples == w {
            (0..=half).collect()
        } else {
            vec![w - 1 - half]
        };
        for j in ready {
            if let Some(mut y) =
                reconstruct_target(&window, j, &self.a_m, &self.b_pinv, w, self.cfg.sg_order)?
            {
                if let Some(noise) = &self.noise {
                    for v in y.iter_mut() {
                        *v += noise.sample(&mut self.rng);
                    }
                }
                self.inputs.push_back(window[j].x.clone());
                self.targets.push_back(y);
                if self.targets.len() > self.cfg.max_points {
                    self.inputs.pop_front();
                    self.targets.pop_front();
                }
            }
        }
        Ok(())
    }

    /// Refits and possibly publishes once `n_update` new measurements have
    /// arrived since the last refit.
    pub fn maybe_update(&mut self, t: f64) -> UpdateOutcome {
        if self.new_since_refit < self.cfg.n_update {
            return UpdateOutcome::NoChange;
        }
        self.new_since_refit = 0;
        let candidate = match self.refit(t) {
            Ok(m) => m,
            Err(e) => return UpdateOutcome::Failed(e),
        };
        if self.cfg.gating.admits(candidate.e_f_hat, self.model.e_f_hat) {
            let out = UpdateOutcome::Published {
                update_index: candidate.update_index,
                e_f_hat: candidate.e_f_hat,
                dataset_size: candidate.dataset_size,
            };
            self.model = candidate;
            out
        } else {
            UpdateOutcome::Rejected {
                candidate_e_f: candidate.e_f_hat,
                current_e_f: self.model.e_f_hat,
            }
        }
    }

    fn refit(&self, t: f64) -> Result<LearnerModel> {
        let inputs: Vec<RealVector> = self.inputs.iter().cloned().collect();
        let targets: Vec<RealVector> = self.targets.iter().cloned().collect();
        let ds = if inputs.is_empty() {
            GpDataset::empty(self.input_dim, self.output_dim, self.cfg.gp_noise_var())?
        } else {
            GpDataset::from_rows(&inputs, &targets, self.cfg.gp_noise_var())?
        };
        let post = fit(&ds, self.cfg.kernel)?;
        let bound = UniformBound::new(&post, &self.cfg.bound)?;
        let sd_max = grid_max_std(&post, self.cfg.grid_kappa, self.cfg.grid_points)?;
        Ok(LearnerModel {
            update_index: self.model.update_index + 1,
            published_at: t,
            e_f_hat: bound.envelope(sd_max),
            dataset_size: ds.len(),
            posterior: Some(Arc::new(post)),
            bound,
            prior_std: self.cfg.kernel.signal_std,
            output_dim: self.output_dim,
        })
    }
}

/// Largest posterior standard deviation over a uniform grid on
/// `{‖x‖∞ ≤ kappa}`.
pub fn grid_max_std(post: &GpPosterior, kappa: f64, points: usize) -> Result<f64> {
    let n = post.input_dim();
    let total = points.pow(n as u32);
    let coord = |i: usize| -kappa + 2.0 * kappa * i as f64 / (points - 1) as f64;
    let mut best = 0.0_f64;
    let mut x = RealVector::zeros(n);
    for flat in 0..total {
        let mut rem = flat;
        for d in 0..n {
            x[d] = coord(rem % points);
            rem /= points;
        }
        best = best.max(post.std(&x)?);
    }
    Ok(best)
}
