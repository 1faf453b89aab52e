//! Per-channel Gaussian-process regression with a squared-exponential kernel,
//! and the quantities needed for a uniform high-probability error bound on the
//! posterior mean: kernel and mean Lipschitz constants, the modulus of
//! continuity of the posterior standard deviation, `β(ξ)`, `γ(ξ)` and the
//! envelope `e_f(x) = √β ‖σ(x)‖∞ + γ`.
//!
//! All output channels share one kernel and one noise level, so a single
//! Cholesky factor of `K + σ_n² I` serves every channel; only the weight
//! vectors `αᵢ = (K + σ_n² I)⁻¹ Yᵢ` differ.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite_matrix, ln_covering_number_box, Cholesky, RealMatrix, RealVector};

/// `k(x, x′) = σ_f² exp(−‖x − x′‖² / 2l²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeKernel {
    pub signal_std: f64,
    pub length_scale: f64,
}

impl Default for SeKernel {
    fn default() -> Self {
        Self {
            signal_std: 1.0,
            length_scale: 1.0,
        }
    }
}

impl SeKernel {
    pub fn new(signal_std: f64, length_scale: f64) -> Result<Self> {
        let k = Self {
            signal_std,
            length_scale,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_std > 0.0 && self.length_scale > 0.0)
            || !self.signal_std.is_finite()
            || !self.length_scale.is_finite()
        {
            return Err(Error::Config(format!(
                "kernel needs signal_std > 0 and length_scale > 0, got {} and {}",
                self.signal_std, self.length_scale
            )));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.signal_std * self.signal_std
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        self.variance() * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// Training inputs `X` (N×n), targets `Y` (N×m) and the noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GpDataset {
    x: RealMatrix,
    y: RealMatrix,
    noise_var: f64,
}

impl GpDataset {
    pub fn new(x: RealMatrix, y: RealMatrix, noise_var: f64) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Dimension(format!(
                "{} input rows but {} target rows",
                x.nrows(),
                y.nrows()
            )));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::Config(format!("noise variance must be > 0, got {noise_var}")));
        }
        ensure_finite_matrix(&x, "GP inputs")?;
        ensure_finite_matrix(&y, "GP targets")?;
        Ok(Self { x, y, noise_var })
    }

    pub fn empty(input_dim: usize, output_dim: usize, noise_var: f64) -> Result<Self> {
        Self::new(
            RealMatrix::zeros(0, input_dim),
            RealMatrix::zeros(0, output_dim),
            noise_var,
        )
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(inputs: &[RealVector], targets: &[RealVector], noise_var: f64) -> Result<Self> {
        let n = inputs.first().map_or(0, |v| v.len());
        let m = targets.first().map_or(0, |v| v.len());
        if inputs.iter().any(|v| v.len() != n) || targets.iter().any(|v| v.len() != m) {
            return Err(Error::Dimension("ragged dataset rows".into()));
        }
        let x = RealMatrix::from_fn(inputs.len(), n, |r, c| inputs[r][c]);
        let y = RealMatrix::from_fn(targets.len(), m, |r, c| targets[r][c]);
        Self::new(x, y, noise_var)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &RealMatrix {
        &self.x
    }

    pub fn targets(&self) -> &RealMatrix {
        &self.y
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }
}

/// Posterior mean and standard deviation at one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: RealVector,
    pub std: RealVector,
}

/// Fitted posterior. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    kernel: SeKernel,
    noise_var: f64,
    x_train: RealMatrix,
    factor: Option<Cholesky>,
    alpha: RealMatrix,
    inv_gram_norm: f64,
}

/// Conditions the per-channel GP priors on `dataset`.
pub fn fit(dataset: &GpDataset, kernel: SeKernel) -> Result<GpPosterior> {
    kernel.validate()?;
    let n_pts = dataset.len();
    let m = dataset.y.ncols();
    if n_pts == 0 {
        return Ok(GpPosterior {
            kernel,
            noise_var: dataset.noise_var,
            x_train: dataset.x.clone(),
            factor: None,
            alpha: RealMatrix::zeros(0, m),
            inv_gram_norm: 0.0,
        });
    }
    let rows: Vec<Vec<f64>> = dataset.x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut gram = RealMatrix::zeros(n_pts, n_pts);
    for i in 0..n_pts {
        for j in 0..=i {
            let k = kernel.eval(&rows[i], &rows[j]);
            gram[(i, j)] = k;
            gram[(j, i)] = k;
        }
        gram[(i, i)] += dataset.noise_var;
    }
    let factor = Cholesky::new(&gram).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot } => Error::IllConditionedKernel { pivot },
        other => other,
    })?;
    let alpha = factor.solve(&dataset.y)?;
    let lambda_min = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(lambda_min > 0.0) {
        return Err(Error::IllConditionedKernel { pivot: 0 });
    }
    Ok(GpPosterior {
        kernel,
        noise_var: dataset.noise_var,
        x_train: dataset.x.clone(),
        factor: Some(factor),
        alpha,
        inv_gram_norm: 1.0 / lambda_min,
    })
}

impl GpPosterior {
    pub fn kernel(&self) -> SeKernel {
        self.kernel
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Number of training points `N`.
    pub fn len(&self) -> usize {
        self.x_train.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x_train.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.alpha.ncols()
    }

    /// Weights `αᵢ`, one column per output channel.
    pub fn alpha(&self) -> &RealMatrix {
        &self.alpha
    }

    /// Spectral norm `‖(K + σ_n² I)⁻¹‖ = 1/λ_min`; zero without data.
    pub fn inverse_gram_norm(&self) -> f64 {
        self.inv_gram_norm
    }

    fn check_dim(&self, x: &RealVector) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "query has dimension {}, posterior expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn cross_kernel(&self, x: &RealVector) -> RealVector {
        let q = x.as_slice();
        RealVector::from_fn(self.len(), |i, _| {
            let row: Vec<f64> = self.x_train.row(i).iter().copied().collect();
            self.kernel.eval(&row, q)
        })
    }

    /// Posterior mean only.
    pub fn mean(&self, x: &RealVector) -> Result<RealVector> {
        self.check_dim(x)?;
        if self.is_empty() {
            return Ok(RealVector::zeros(self.output_dim()));
        }
        let ks = self.cross_kernel(x);
        Ok(self.alpha.tr_mul(&ks))
    }

    /// Posterior standard deviation, identical across channels.
    pub fn std(&self, x: &RealVector) -> Result<f64> {
        self.check_dim(x)?;
        let prior = self.kernel.variance();
        let Some(factor) = &self.factor else {
            return Ok(self.kernel.signal_std);
        };
        let mut v = self.cross_kernel(x);
        factor.solve_lower_in_place(&mut v);
        let var = (prior - v.norm_squared()).clamp(0.0, prior);
        Ok(var.sqrt())
    }

    pub fn predict(&self, x: &RealVector) -> Result<Prediction> {
        self.check_dim(x)?;
        let m = self.output_dim();
        let Some(factor) = &self.factor else {
            return Ok(Prediction {
                mean: RealVector::zeros(m),
                std: RealVector::from_element(m, self.kernel.signal_std),
            });
        };
        let ks = self.cross_kernel(x);
        let mean = self.alpha.tr_mul(&ks);
        let mut v = ks;
        factor.solve_lower_in_place(&mut v);
        let prior = self.kernel.variance();
        let sd = (prior - v.norm_squared()).clamp(0.0, prior).sqrt();
        Ok(Prediction {
            mean,
            std: RealVector::from_element(m, sd),
        })
    }
}

/// Lipschitz constant of `x ↦ k(x, x′)` over the box `‖x‖∞ ≤ κ` in `Rⁿ`.
///
/// `‖∇ₓk‖ = σ_f² (r/l²) e^{−r²/2l²}` with `r = ‖x − x′‖`; it peaks at `r = l`,
/// so the bound is `σ_f²/(l√e)` unless the box diameter `2κ√n` is shorter
/// than `l`, in which case the value at the diameter is used.
pub fn kernel_lipschitz(kernel: &SeKernel, kappa: f64, n: usize) -> f64 {
    let l = kernel.length_scale;
    let r = (2.0 * kappa * (n as f64).sqrt()).min(l);
    kernel.variance() * r / (l * l) * (-(r * r) / (2.0 * l * l)).exp()
}

/// Per-channel values together with their maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBounds {
    pub per_channel: Vec<f64>,
    pub max: f64,
}

impl ChannelBounds {
    fn from_vec(per_channel: Vec<f64>) -> Self {
        let max = per_channel.iter().copied().fold(0.0, f64::max);
        Self { per_channel, max }
    }
}

/// `L_μᵢ = L_k √N ‖αᵢ‖₂`.
pub fn mean_lipschitz(post: &GpPosterior, kernel_lipschitz: f64) -> ChannelBounds {
    let sqrt_n = (post.len() as f64).sqrt();
    ChannelBounds::from_vec(
        post.alpha
            .column_iter()
            .map(|a| kernel_lipschitz * sqrt_n * a.norm())
            .collect(),
    )
}

/// `ω_σᵢ(ξ) = √(2ξ L_k (1 + N ‖(K + σ_n²I)⁻¹‖ σ_f²))`.
pub fn std_modulus(post: &GpPosterior, kernel_lipschitz: f64, xi: f64) -> ChannelBounds {
    let inner = 1.0 + post.len() as f64 * post.inverse_gram_norm() * post.kernel.variance();
    let w = (2.0 * xi.max(0.0) * kernel_lipschitz * inner).sqrt();
    ChannelBounds::from_vec(vec![w; post.output_dim()])
}

/// Settings of the uniform error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UniformBoundConfig {
    /// Half-width of the box `{‖x‖∞ ≤ κ}` the bound holds on.
    pub kappa: f64,
    /// Discretisation radius.
    pub xi: f64,
    /// Failure probability.
    pub delta: f64,
    /// Prior bound on `‖∇f‖∞`.
    pub lipschitz_f: f64,
    pub include_gamma: bool,
}

impl Default for UniformBoundConfig {
    fn default() -> Self {
        Self {
            kappa: 15.0,
            xi: 0.001,
            delta: 0.01,
            lipschitz_f: 0.0,
            include_gamma: false,
        }
    }
}

impl UniformBoundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !(self.xi > 0.0) {
            return Err(Error::Config("bound needs kappa > 0 and xi > 0".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.lipschitz_f >= 0.0) {
            return Err(Error::Config("lipschitz_f must be >= 0".into()));
        }
        Ok(())
    }
}

/// `β(ξ) = 2 ln(m M(ξ, X) / δ)` with `X` the box of half-width `κ` in `Rⁿ`.
pub fn beta(cfg: &UniformBoundConfig, n: usize, m: usize) -> f64 {
    let ln_m = ln_covering_number_box(cfg.kappa, n, cfg.xi);
    (2.0 * ((m as f64).ln() + ln_m - cfg.delta.ln())).max(0.0)
}

/// The constants of `e_f(x) = √β ‖σ(x)‖∞ + γ` for one posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformBound {
    pub sqrt_beta: f64,
    pub gamma: f64,
}

impl UniformBound {
    pub fn new(post: &GpPosterior, cfg: &UniformBoundConfig) -> Result<Self> {
        cfg.validate()?;
        let n = post.input_dim();
        let sqrt_beta = beta(cfg, n, post.output_dim()).sqrt();
        let gamma = if cfg.include_gamma {
            let lk = kernel_lipschitz(&post.kernel, cfg.kappa, n);
            let l_mu = mean_lipschitz(post, lk).max;
            let w_sigma = std_modulus(post, lk, cfg.xi).max;
            (cfg.lipschitz_f / n as f64 + l_mu) * cfg.xi + sqrt_beta * w_sigma
        } else {
            0.0
        };
        Ok(Self { sqrt_beta, gamma })
    }

    /// Envelope from an already computed `‖σ(x)‖∞`.
    pub fn envelope(&self, sigma_inf: f64) -> f64 {
        self.sqrt_beta * sigma_inf + self.gamma
    }

    pub fn eval(&self, post: &GpPosterior, x: &RealVector) -> Result<f64> {
        Ok(self.envelope(post.std(x)?))
    }
}

/// `e_f(x)` for a fitted posterior.
pub fn uniform_bound(post: &GpPosterior, cfg: &UniformBoundConfig, x: &RealVector) -> Result<f64> {
    UniformBound::new(post, cfg)?.eval(post, x)
}
