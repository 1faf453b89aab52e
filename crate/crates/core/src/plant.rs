//! Body-rate dynamics of a multirotor, `J ẋ = −x × Jx + f(x) + u_total`,
//! with the baseline feedback that injects `A_m`, the uncertainty library and
//! an input delay line.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RealMatrix, RealVector};

/// Model uncertainty `f(x)` entering through the torque channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UncertaintyKind {
    Zero,
    /// `0.01 [x₁² + x₃², x₃x₂ + x₁², x₃²]`.
    Poly15,
    /// `[0.5 sin x₁, 0.01 cos x₃, 0.5 (sin x₁ + cos x₂)]`.
    SineSwitch,
    /// `constant + linear · x`.
    Custom {
        constant: [f64; 3],
        linear: [[f64; 3]; 3],
    },
}

impl UncertaintyKind {
    pub fn eval(&self, x: &RealVector) -> RealVector {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        let v = match self {
            Self::Zero => [0.0; 3],
            Self::Poly15 => [
                0.01 * (x1 * x1 + x3 * x3),
                0.01 * (x3 * x2 + x1 * x1),
                0.01 * (x3 * x3),
            ],
            Self::SineSwitch => [
                0.5 * x1.sin(),
                0.01 * x3.cos(),
                0.5 * (x1.sin() + x2.cos()),
            ],
            Self::Custom { constant, linear } => {
                let mut out = *constant;
                for (o, row) in out.iter_mut().zip(linear) {
                    *o += row[0] * x1 + row[1] * x2 + row[2] * x3;
                }
                out
            }
        };
        RealVector::from_row_slice(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySegment {
    pub start: f64,
    #[serde(flatten)]
    pub kind: UncertaintyKind,
}

/// Piecewise-in-time uncertainty; segment `i` is active on `[startᵢ, startᵢ₊₁)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UncertaintySchedule {
    segments: Vec<UncertaintySegment>,
}

const SWITCH_TOL: f64 = 1e-9;

impl UncertaintySchedule {
    pub fn new(segments: Vec<UncertaintySegment>) -> Result<Self> {
        let s = Self { segments };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(kind: UncertaintyKind) -> Self {
        Self {
            segments: vec![UncertaintySegment { start: 0.0, kind }],
        }
    }

    /// `first` until `at`, `second` afterwards.
    pub fn switched(first: UncertaintyKind, at: f64, second: UncertaintyKind) -> Result<Self> {
        Self::new(vec![
            UncertaintySegment { start: 0.0, kind: first },
            UncertaintySegment { start: at, kind: second },
        ])
    }

    pub fn validate(&self) -> Result<()> {
        match self.segments.first() {
            None => return Err(Error::Config("uncertainty schedule is empty".into())),
            Some(s) if s.start != 0.0 => {
                return Err(Error::Config("first uncertainty segment must start at 0".into()))
            }
            _ => {}
        }
        if self.segments.windows(2).any(|w| !(w[1].start > w[0].start)) {
            return Err(Error::Config(
                "uncertainty segment start times must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn segments(&self) -> &[UncertaintySegment] {
        &self.segments
    }

    pub fn kind_at(&self, t: f64) -> UncertaintyKind {
        self.segments
            .iter()
            .rev()
            .find(|s| t + SWITCH_TOL >= s.start)
            .unwrap_or(&self.segments[0])
            .kind
    }

    pub fn eval(&self, t: f64, x: &RealVector) -> RealVector {
        self.kind_at(t).eval(x)
    }
}

/// `f(x)` active at time `t`.
pub fn uncertainty_eval(schedule: &UncertaintySchedule, t: f64, x: &RealVector) -> RealVector {
    schedule.eval(t, x)
}

pub fn cross(a: &RealVector, b: &RealVector) -> RealVector {
    RealVector::from_row_slice(&[
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])
}

/// `u_bl = J A_m x + x × J x`.
pub fn baseline_control(x: &RealVector, inertia: &RealMatrix, a_m: &RealMatrix) -> RealVector {
    inertia * (a_m * x) + cross(x, &(inertia * x))
}

/// Which signal passes through the input delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayPath {
    /// Only the adaptive input `u` is delayed; the baseline acts instantly.
    #[default]
    Adaptive,
    /// `u_bl + u` is delayed as one signal.
    Total,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    inertia: RealMatrix,
    inertia_inv: RealMatrix,
    pub x0: RealVector,
    pub uncertainty: UncertaintySchedule,
    pub input_delay: f64,
    pub delay_path: DelayPath,
    pub a_m_baseline: RealMatrix,
}

impl PlantConfig {
    pub fn new(
        inertia_diag: [f64; 3],
        x0: RealVector,
        uncertainty: UncertaintySchedule,
        a_m_baseline: RealMatrix,
    ) -> Result<Self> {
        if inertia_diag.iter().any(|j| !(*j > 0.0 && j.is_finite())) {
            return Err(Error::Config(format!(
                "inertia entries must be positive, got {inertia_diag:?}"
            )));
        }
        if x0.len() != 3 || a_m_baseline.shape() != (3, 3) {
            return Err(Error::Dimension("plant state is three-dimensional".into()));
        }
        uncertainty.validate()?;
        let d = RealVector::from_row_slice(&inertia_diag);
        Ok(Self {
            inertia: RealMatrix::from_diagonal(&d),
            inertia_inv: RealMatrix::from_diagonal(&d.map(|v| 1.0 / v)),
            x0,
            uncertainty,
            input_delay: 0.0,
            delay_path: DelayPath::Adaptive,
            a_m_baseline,
        })
    }

    /// Reference vehicle: `J = diag(0.011, 0.011, 0.021)`, `x₀ = 0`, `A_m = −3I`.
    pub fn quadrotor(uncertainty: UncertaintySchedule) -> Self {
        Self::new(
            [0.011, 0.011, 0.021],
            RealVector::zeros(3),
            uncertainty,
            RealMatrix::identity(3, 3) * -3.0,
        )
        .expect("reference plant is valid")
    }

    pub fn inertia(&self) -> &RealMatrix {
        &self.inertia
    }

    pub fn inertia_inv(&self) -> &RealMatrix {
        &self.inertia_inv
    }

    pub fn inertia_diag(&self) -> [f64; 3] {
        [self.inertia[(0, 0)], self.inertia[(1, 1)], self.inertia[(2, 2)]]
    }

    pub fn baseline(&self, x: &RealVector) -> RealVector {
        baseline_control(x, &self.inertia, &self.a_m_baseline)
    }
}

/// `ẋ = J⁻¹(−x × Jx + f(x) + u_total)`.
pub fn plant_derivative(x: &RealVector, u_total: &RealVector, t: f64, cfg: &PlantConfig) -> RealVector {
    plant_derivative_with(x, u_total, &cfg.uncertainty.kind_at(t), cfg)
}

pub(crate) fn plant_derivative_with(
    x: &RealVector,
    u_total: &RealVector,
    kind: &UncertaintyKind,
    cfg: &PlantConfig,
) -> RealVector {
    let gyro = cross(x, &(&cfg.inertia * x));
    &cfg.inertia_inv * (kind.eval(x) + u_total - gyro)
}

/// Fixed-length input delay: each `push` returns the sample pushed
/// `delay_steps` calls earlier, zeros before that.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLine {
    history: VecDeque<RealVector>,
    capacity: usize,
    delay_steps: usize,
    dim: usize,
}

impl DelayLine {
    pub fn new(dim: usize, delay_steps: usize) -> Self {
        Self::with_history(dim, delay_steps, delay_steps + 1)
    }

    /// Keeps `history` samples so the delay can later be raised up to
    /// `history − 1` steps without losing past inputs.
    pub fn with_history(dim: usize, delay_steps: usize, history: usize) -> Self {
        let capacity = history.max(delay_steps + 1);
        Self {
            history: VecDeque::with_capacity(capacity),
            capacity,
            delay_steps,
            dim,
        }
    }

    /// Number of steps for a delay in seconds; errors unless it is a whole
    /// number of steps.
    pub fn steps_for(delay: f64, step: f64) -> Result<usize> {
        if !(delay >= 0.0) {
            return Err(Error::Config(format!("input delay must be >= 0, got {delay}")));
        }
        let n = (delay / step).round();
        if (n * step - delay).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "input delay {delay} s is not a multiple of the step {step} s"
            )));
        }
        Ok(n as usize)
    }

    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    pub fn set_delay_steps(&mut self, steps: usize) {
        self.delay_steps = steps;
        if steps + 1 > self.capacity {
            self.capacity = steps + 1;
        }
    }

    pub fn push(&mut self, u: RealVector) -> RealVector {
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(u);
        let len = self.history.len();
        if len > self.delay_steps {
            self.history[len - 1 - self.delay_steps].clone()
        } else {
            RealVector::zeros(self.dim)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(a: [f64; 3]) -> RealVector {
        RealVector::from_row_slice(&a)
    }

    #[test]
    fn poly15_values() {
        assert_eq!(UncertaintyKind::Poly15.eval(&v([0.0; 3])), v([0.0; 3]));
        let f = UncertaintyKind::Poly15.eval(&v([1.0, 1.0, 1.0]));
        assert!((f - v([0.02, 0.02, 0.01])).amax() < 1e-15);
    }

    #[test]
    fn sine_switch_at_origin() {
        assert_eq!(UncertaintyKind::SineSwitch.eval(&v([0.0; 3])), v([0.0, 0.01, 0.5]));
    }

    #[test]
    fn custom_affine() {
        let k = UncertaintyKind::Custom {
            constant: [1.0, 0.0, -1.0],
            linear: [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.0]],
        };
        assert_eq!(k.eval(&v([1.0, 2.0, 3.0])), v([2.0, 4.0, -1.0]));
    }

    #[test]
    fn schedule_switches_at_start_time() {
        let s = UncertaintySchedule::switched(UncertaintyKind::Poly15, 35.0, UncertaintyKind::SineSwitch)
            .unwrap();
        assert_eq!(s.kind_at(0.0), UncertaintyKind::Poly15);
        assert_eq!(s.kind_at(34.999), UncertaintyKind::Poly15);
        assert_eq!(s.kind_at(35000.0 * 0.001), UncertaintyKind::SineSwitch);
        let x = v([0.3, -0.2, 0.9]);
        assert_eq!(uncertainty_eval(&s, 12.0, &x), uncertainty_eval(&s, 12.0, &x));
    }

    #[test]
    fn schedule_validation() {
        let seg = |start| UncertaintySegment {
            start,
            kind: UncertaintyKind::Zero,
        };
        assert!(UncertaintySchedule::new(vec![]).is_err());
        assert!(UncertaintySchedule::new(vec![seg(1.0)]).is_err());
        assert!(UncertaintySchedule::new(vec![seg(0.0), seg(2.0), seg(2.0)]).is_err());
    }

    #[test]
    fn baseline_values() {
        let p = PlantConfig::quadrotor(UncertaintySchedule::constant(UncertaintyKind::Zero));
        assert_eq!(p.baseline(&v([0.0; 3])), v([0.0; 3]));
        let u = p.baseline(&v([1.0, 0.0, 0.0]));
        assert!((u - v([-0.033, 0.0, 0.0])).amax() < 1e-15);
        let u = p.baseline(&v([1.0, 1.0, 0.0]));
        assert!((u - v([-0.033, -0.033, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn baseline_cancels_gyroscopic_term() {
        let p = PlantConfig::quadrotor(UncertaintySchedule::constant(UncertaintyKind::Poly15));
        let b_m = p.inertia_inv().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = RealVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0));
            let u = RealVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let total = p.baseline(&x) + &u;
            let lhs = plant_derivative(&x, &total, 0.0, &p);
            let rhs = &p.a_m_baseline * &x + &b_m * (&u + UncertaintyKind::Poly15.eval(&x));
            assert!((lhs - rhs).amax() < 1e-12);
        }
    }

    #[test]
    fn derivative_at_ones() {
        let p = PlantConfig::quadrotor(UncertaintySchedule::constant(UncertaintyKind::Poly15));
        let x = v([1.0, 1.0, 1.0]);
        let d = plant_derivative(&x, &p.baseline(&x), 0.0, &p);
        let expect = v([-3.0 + 0.02 / 0.011, -3.0 + 0.02 / 0.011, -3.0 + 0.01 / 0.021]);
        assert!((&d - expect).amax() < 1e-12);
        assert!((d - v([-1.1818, -1.1818, -2.5238])).amax() < 1e-4);
        let zero = PlantConfig::quadrotor(UncertaintySchedule::constant(UncertaintyKind::Zero));
        assert_eq!(plant_derivative(&v([0.0; 3]), &v([0.0; 3]), 0.0, &zero), v([0.0; 3]));
    }

    #[test]
    fn gyroscopic_term_is_orthogonal_to_state() {
        let p = PlantConfig::quadrotor(UncertaintySchedule::constant(UncertaintyKind::Zero));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let x = RealVector::from_fn(3, |_, _| rng.random_range(-10.0..10.0));
            let g = cross(&x, &(p.inertia() * &x));
            assert!(x.dot(&g).abs() <= 1e-12 * x.norm_squared().max(1.0));
        }
    }

    #[test]
    fn inertia_validation() {
        let s = UncertaintySchedule::constant(UncertaintyKind::Zero);
        assert!(PlantConfig::new([0.011, 0.0, 0.021], RealVector::zeros(3), s, RealMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn delay_line_behaviour() {
        let mut zero = DelayLine::new(1, 0);
        for k in 0..5 {
            let u = RealVector::from_element(1, k as f64);
            assert_eq!(zero.push(u.clone()), u);
        }
        let mut d = DelayLine::new(1, 2);
        let out: Vec<f64> = (1..=5).map(|k| d.push(RealVector::from_element(1, k as f64))[0]).collect();
        assert_eq!(out, vec![0.0, 0.0, 1.0, 2.0, 3.0]);
        let mut h = DelayLine::with_history(1, 0, 10);
        for k in 1..=6 {
            h.push(RealVector::from_element(1, k as f64));
        }
        h.set_delay_steps(3);
        assert_eq!(h.push(RealVector::from_element(1, 7.0))[0], 4.0);
    }

    #[test]
    fn delay_steps_must_be_whole() {
        assert_eq!(DelayLine::steps_for(0.02, 0.001).unwrap(), 20);
        assert!(DelayLine::steps_for(0.0205, 0.001).is_err());
        assert!(DelayLine::steps_for(-0.001, 0.001).is_err());
    }
}
