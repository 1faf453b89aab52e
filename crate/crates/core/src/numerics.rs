//! Small dense linear algebra and numerical utilities shared by the rest of the
//! crate. Matrices here are tiny (at most a few dozen rows outside of GP Gram
//! matrices), so everything favours accuracy and clarity over throughput.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense real matrix.
pub type RealMatrix = DMatrix<f64>;
/// Dense real column vector.
pub type RealVector = DVector<f64>;

pub(crate) fn ensure_finite_matrix(m: &RealMatrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn ensure_square(a: &RealMatrix, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Returns `e^{A t}`.
pub fn matrix_exponential(a: &RealMatrix, t: f64) -> Result<RealMatrix> {
    ensure_square(a, "matrix exponential argument")?;
    ensure_finite_matrix(a, "matrix exponential argument")?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Config(format!("exponential time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(RealMatrix::identity(a.nrows(), a.ncols()));
    }
    Ok((a * t).exp())
}

/// `Φ(Ts) = A⁻¹(e^{A Ts} − I)`, the zero-order-hold input matrix of `ẋ = A x`.
pub fn phi_matrix(a: &RealMatrix, ts: f64) -> Result<RealMatrix> {
    ensure_square(a, "phi matrix argument")?;
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::Config(format!("sampling time must be > 0, got {ts}")));
    }
    let n = a.nrows();
    let rhs = matrix_exponential(a, ts)? - RealMatrix::identity(n, n);
    a.clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("phi matrix: A is not invertible".into()))
}

/// Lower-triangular Cholesky factor `L` with `M = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    l: RealMatrix,
}

impl Cholesky {
    /// Factors a symmetric positive-definite matrix. Only the lower triangle
    /// of `m` is read.
    pub fn new(m: &RealMatrix) -> Result<Self> {
        ensure_square(m, "Cholesky input")?;
        ensure_finite_matrix(m, "Cholesky input")?;
        let n = m.nrows();
        let mut l = RealMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn factor(&self) -> &RealMatrix {
        &self.l
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut RealVector) {
        let n = self.dim();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn solve_upper_in_place(&self, b: &mut RealVector) {
        let n = self.dim();
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    pub fn solve_vector(&self, b: &RealVector) -> RealVector {
        let mut x = b.clone();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    pub fn solve(&self, b: &RealMatrix) -> Result<RealMatrix> {
        if b.nrows() != self.dim() {
            return Err(Error::Dimension(format!(
                "right-hand side has {} rows, factor is {}x{}",
                b.nrows(),
                self.dim(),
                self.dim()
            )));
        }
        let mut out = b.clone();
        for j in 0..b.ncols() {
            let col = self.solve_vector(&b.column(j).into_owned());
            out.set_column(j, &col);
        }
        Ok(out)
    }
}

/// Solves `M X = B` for symmetric positive-definite `M`.
pub fn cholesky_solve(m: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    ensure_finite_matrix(b, "right-hand side")?;
    Cholesky::new(m)?.solve(b)
}

/// One classical fourth-order Runge–Kutta step of `ẋ = f(t, x)`.
pub fn rk4_step<F>(mut f: F, t: f64, x: &RealVector, h: f64) -> Result<RealVector>
where
    F: FnMut(f64, &RealVector) -> RealVector,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("rk4 step must be > 0, got {h}")));
    }
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(x + &k3 * h));
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::Divergence { t })
    }
}

/// Savitzky–Golay weights for the first derivative (per unit sample spacing)
/// of a degree-`order` least-squares fit over `window` points, evaluated at
/// `offset` samples from the window centre.
pub fn savgol_derivative_weights(window: usize, order: usize, offset: isize) -> Result<Vec<f64>> {
    if window % 2 == 0 || window < order + 1 {
        return Err(Error::Config(format!(
            "Savitzky-Golay window must be odd and >= order + 1 (window {window}, order {order})"
        )));
    }
    let half = (window / 2) as isize;
    if offset.abs() > half {
        return Err(Error::Config(format!("offset {offset} outside window")));
    }
    let vander = RealMatrix::from_fn(window, order + 1, |r, c| {
        ((r as isize - half) as f64).powi(c as i32)
    });
    let normal = vander.transpose() * &vander;
    let proj = normal
        .lu()
        .solve(&vander.transpose())
        .ok_or_else(|| Error::Singular("Savitzky-Golay normal equations".into()))?;
    let s = offset as f64;
    let weights = (0..window)
        .map(|j| {
            (1..=order)
                .map(|k| k as f64 * s.powi(k as i32 - 1) * proj[(k, j)])
                .sum()
        })
        .collect();
    Ok(weights)
}

/// Smoothed first-derivative estimates of uniformly sampled data.
///
/// Interior points use a centred window; the first and last `window / 2`
/// samples are evaluated on the nearest full window (one-sided fit).
pub fn estimate_derivative(
    samples: &[(f64, RealVector)],
    window: usize,
    poly_order: usize,
) -> Result<Vec<RealVector>> {
    if samples.len() < window {
        return Err(Error::InsufficientData {
            needed: window,
            got: samples.len(),
        });
    }
    // validates window/order
    savgol_derivative_weights(window, poly_order, 0)?;
    let dt = samples[1].0 - samples[0].0;
    if !(dt > 0.0) {
        return Err(Error::Config("sample times must be increasing".into()));
    }
    for pair in samples.windows(2) {
        if ((pair[1].0 - pair[0].0) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::Config("samples must be uniformly spaced".into()));
        }
    }
    let dim = samples[0].1.len();
    let half = window / 2;
    let len = samples.len();
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let (start, offset) = if i < half {
            (0, i as isize - half as isize)
        } else if i + half >= len {
            (len - window, i as isize - (len - 1 - half) as isize)
        } else {
            (i - half, 0)
        };
        let w = savgol_derivative_weights(window, poly_order, offset)?;
        let mut d = RealVector::zeros(dim);
        for (j, wj) in w.iter().enumerate() {
            d.axpy(*wj / dt, &samples[start + j].1, 1.0);
        }
        out.push(d);
    }
    Ok(out)
}

/// Transfer function with distinct real poles in partial-fraction form,
/// `G(s) = direct + Σ residueᵢ / (s − poleᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialFraction {
    pub direct: f64,
    pub poles: Vec<f64>,
    pub residues: Vec<f64>,
}

impl PartialFraction {
    pub fn new(direct: f64, poles: Vec<f64>, residues: Vec<f64>) -> Self {
        Self {
            direct,
            poles,
            residues,
        }
    }

    /// `k/(s − p)`.
    pub fn first_order(pole: f64, residue: f64) -> Self {
        Self::new(0.0, vec![pole], vec![residue])
    }

    pub fn impulse_response(&self, t: f64) -> f64 {
        self.poles
            .iter()
            .zip(&self.residues)
            .map(|(p, r)| r * (p * t).exp())
            .sum()
    }

    /// L1 norm: `|direct|` (the impulse at `t = 0`) plus the quadrature of the
    /// smooth part with horizon `20/|slowest pole|` and a step resolving the
    /// fastest pole a hundred times over.
    pub fn l1_norm(&self) -> Result<f64> {
        let smooth = if self.poles.is_empty() {
            0.0
        } else {
            let slowest = self.poles.iter().fold(f64::INFINITY, |a, p| a.min(p.abs()));
            let fastest = self.poles.iter().fold(0.0_f64, |a, p| a.max(p.abs()));
            let horizon = 20.0 / slowest;
            let step = (1.0 / (100.0 * fastest)).min(horizon / 2000.0);
            l1_norm_impulse(&self.poles, &self.residues, horizon, step)?
        };
        Ok(self.direct.abs() + smooth)
    }
}

/// Trapezoidal quadrature of `∫₀^horizon |Σ rᵢ e^{pᵢ t}| dt`.
pub fn l1_norm_impulse(poles: &[f64], residues: &[f64], horizon: f64, step: f64) -> Result<f64> {
    if poles.len() != residues.len() {
        return Err(Error::Dimension(format!(
            "{} poles but {} residues",
            poles.len(),
            residues.len()
        )));
    }
    if let Some(&p) = poles.iter().find(|p| !(**p < 0.0)) {
        return Err(Error::UnstablePole { pole: p });
    }
    if residues.iter().all(|r| *r == 0.0) {
        return Ok(0.0);
    }
    if !(step > 0.0 && horizon > 0.0) {
        return Err(Error::Config("horizon and step must be positive".into()));
    }
    let slowest = poles.iter().fold(f64::INFINITY, |a, p| a.min(p.abs()));
    if horizon * slowest < 10.0 - 1e-12 {
        return Err(Error::Config(format!(
            "horizon {horizon} s is shorter than 10 time constants of the slowest pole"
        )));
    }
    let n = (horizon / step).ceil() as usize;
    let h = horizon / n as f64;
    let g = |t: f64| -> f64 {
        poles
            .iter()
            .zip(residues)
            .map(|(p, r)| r * (p * t).exp())
            .sum::<f64>()
            .abs()
    };
    let mut acc = 0.5 * (g(0.0) + g(horizon));
    for i in 1..n {
        acc += g(i as f64 * h);
    }
    Ok(acc * h)
}

/// Upper bound `⌈κ√n/ξ⌉ⁿ` on the Euclidean ξ-covering number of the box
/// `{x : ‖x‖∞ ≤ κ} ⊂ Rⁿ`, from a uniform grid of spacing at most `2ξ/√n`.
/// Returned as `f64` since the count overflows integers quickly.
pub fn covering_number_box(kappa: f64, n: usize, xi: f64) -> f64 {
    per_axis_cover(kappa, n, xi).powi(n as i32)
}

/// Natural log of [`covering_number_box`], exact for large counts.
pub fn ln_covering_number_box(kappa: f64, n: usize, xi: f64) -> f64 {
    n as f64 * per_axis_cover(kappa, n, xi).ln()
}

pub(crate) fn per_axis_cover(kappa: f64, n: usize, xi: f64) -> f64 {
    assert!(kappa > 0.0 && xi > 0.0 && n > 0, "covering number needs kappa, xi, n > 0");
    (kappa * (n as f64).sqrt() / xi).ceil().max(1.0)
}
