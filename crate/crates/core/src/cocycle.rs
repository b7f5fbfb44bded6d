//! Quasiperiodic SL(2,R) cocycles: iteration with rescaling, Lyapunov
//! exponents, fibered rotation numbers, growth profiles, and a uniform-
//! hyperbolicity heuristic.
//!
//! A cocycle is the pair (alpha, A) acting by
//! `(theta, v) -> (theta + alpha, A(theta) v)`; the n-step iterate is
//! `A_n(theta) = A(theta + (n-1) alpha) ... A(theta)` and
//! `A_{-n}(theta) = A_n(theta - n alpha)^{-1}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fourier::FourierMap;
use crate::mat2::Mat2;

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// The map theta -> A(theta) of a cocycle.
#[derive(Clone, Debug)]
pub enum CocycleMap {
    /// Almost Mathieu transfer matrix [[E - 2*lambda*cos(2 pi theta), -1], [1, 0]].
    Amo { lambda: f64, energy: f64 },
    /// Constant matrix.
    Constant(Mat2),
    /// base * exp(f(theta)) with f a (real) Fourier perturbation.
    Perturbed { base: Mat2, f: FourierMap },
    /// General real-analytic data given by Fourier coefficients.
    Fourier(FourierMap),
}

impl CocycleMap {
    pub fn amo(lambda: f64, energy: f64) -> Self {
        CocycleMap::Amo { lambda, energy }
    }

    pub fn eval(&self, theta: f64) -> Mat2 {
        match self {
            CocycleMap::Amo { lambda, energy } => {
                Mat2::new(energy - 2.0 * lambda * (TAU * theta).cos(), -1.0, 1.0, 0.0)
            }
            CocycleMap::Constant(m) => *m,
            CocycleMap::Perturbed { base, f } => base.mul(&f.eval_real(theta).exp()),
            CocycleMap::Fourier(f) => f.eval_real(theta),
        }
    }
}

/// A matrix together with a logarithmic scale factor: the represented matrix
/// is `m * exp(log_scale)`.  Keeps long products inside f64 range.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScaledMat2 {
    pub m: Mat2,
    pub log_scale: f64,
}

impl ScaledMat2 {
    pub fn identity() -> Self {
        ScaledMat2 { m: Mat2::identity(), log_scale: 0.0 }
    }

    pub fn ln_op_norm(&self) -> f64 {
        self.m.op_norm().ln() + self.log_scale
    }

    pub fn ln_hs_norm(&self) -> f64 {
        self.m.hs_norm().ln() + self.log_scale
    }

    /// The represented matrix, if it fits in f64 range.
    pub fn to_matrix(&self) -> Result<Mat2> {
        let s = self.log_scale;
        if s.abs() > 690.0 || (self.m.max_abs().ln() + s) > 690.0 {
            return Err(Error::Precision(format!(
                "iterate outside f64 range (log scale {s:.2})"
            )));
        }
        Ok(self.m.scale(s.exp()))
    }

    fn absorb(&mut self) {
        let mx = self.m.max_abs();
        if mx > 1e120 || (mx < 1e-120 && mx > 0.0) {
            self.m = self.m.scale(1.0 / mx);
            self.log_scale += mx.ln();
        }
    }
}

/// n-step iterate A_n(theta); n may be negative (inverse cocycle).
pub fn iterate(map: &CocycleMap, alpha: f64, theta: f64, n: i64) -> ScaledMat2 {
    if n == 0 {
        return ScaledMat2::identity();
    }
    if n < 0 {
        // A_{-m}(theta) = A_m(theta - m alpha)^{-1}; adjugate = inverse in SL(2,R).
        let m = -n;
        let start = wrap(theta - m as f64 * alpha);
        let fwd = iterate(map, alpha, start, m);
        let det = fwd.m.det();
        // Inverse of (m * e^s): adj(m)/det(m) * e^{-s}; for det != 1 the
        // rescaled product still has det m * e^{2s} = 1 when A is SL(2,R).
        let adj = Mat2::new(fwd.m.d, -fwd.m.b, -fwd.m.c, fwd.m.a).scale(1.0 / det);
        let mut out = ScaledMat2 { m: adj, log_scale: -fwd.log_scale };
        out.absorb();
        return out;
    }
    let mut acc = ScaledMat2::identity();
    let mut th = wrap(theta);
    for _ in 0..n {
        acc.m = map.eval(th).mul(&acc.m);
        acc.absorb();
        th += alpha;
        if th >= 1.0 {
            th -= 1.0;
        }
    }
    acc
}

fn wrap(x: f64) -> f64 {
    let y = x.fract();
    if y < 0.0 {
        y + 1.0
    } else {
        y
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovEstimate {
    pub value: f64,
    /// Dispersion of the per-phase estimates (standard deviation).
    pub spread: f64,
    pub per_phase: Vec<f64>,
    pub n: i64,
}

/// Lyapunov exponent estimate: phase-averaged (1/n) ln ||A_n(theta)||.
pub fn lyapunov(map: &CocycleMap, alpha: f64, n: i64, thetas: &[f64]) -> Result<LyapunovEstimate> {
    if n <= 0 || thetas.is_empty() {
        return Err(Error::Invalid("lyapunov needs n > 0 and at least one phase".into()));
    }
    let per_phase: Vec<f64> = thetas
        .iter()
        .map(|&th| iterate(map, alpha, th, n).ln_op_norm() / n as f64)
        .collect();
    let mean = per_phase.iter().sum::<f64>() / per_phase.len() as f64;
    let var = per_phase.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
        / per_phase.len() as f64;
    Ok(LyapunovEstimate { value: mean, spread: var.sqrt(), per_phase, n })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RotationEstimate {
    /// Fibered rotation number in [0, 1/2], normalized so that for the
    /// Schrodinger family it is 0 far below the spectrum and 1/2 far above.
    pub value: f64,
    /// Difference between the full- and half-sample estimates plus O(1/n).
    pub error_bar: f64,
    pub n: i64,
}

/// Fibered rotation number via the Birkhoff average of projective angle
/// increments, orientation-normalized as documented on [`RotationEstimate`].
pub fn rotation_number(
    map: &CocycleMap,
    alpha: f64,
    n: i64,
    theta0: f64,
) -> Result<RotationEstimate> {
    if n < 16 {
        return Err(Error::Invalid("rotation_number needs n >= 16".into()));
    }
    let mut th = wrap(theta0);
    let mut v = [1.0f64, 0.0f64];
    let mut total = 0.0f64;
    let mut half_total = 0.0f64;
    let half_mark = n / 2;
    for i in 0..n {
        let a = map.eval(th);
        let w = a.apply(v);
        let norm = (w[0] * w[0] + w[1] * w[1]).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Diagnostic(
                "degenerate image vector in rotation number tracking".into(),
            ));
        }
        let wn = [w[0] / norm, w[1] / norm];
        // Signed angle from v to wn, lifted to the branch (-pi/2, 3pi/2].
        // Per step the Schrodinger cocycle advances the vector angle by a
        // value in [0, pi] (pi at the bottom of the spectrum, 0 at the top);
        // the symmetric branch would alias the half-turn at the bottom to
        // +-pi with a rounding-noise sign, wrecking the average.
        let cross = v[0] * wn[1] - v[1] * wn[0];
        let dot = v[0] * wn[0] + v[1] * wn[1];
        let mut step = cross.atan2(dot);
        if step <= -std::f64::consts::FRAC_PI_2 {
            step += TAU;
        }
        total += step;
        if i + 1 == half_mark {
            half_total = total;
        }
        v = wn;
        th += alpha;
        if th >= 1.0 {
            th -= 1.0;
        }
    }
    let raw_full = wrap(total / (TAU * n as f64));
    let raw_half = wrap(half_total / (TAU * half_mark as f64));
    // Orientation anchor: far below the spectrum the projective dynamics has
    // no rotation with this raw convention at 1/2; map raw -> 1/2 - raw so
    // the normalized value is 0 at the bottom and 1/2 at the top.
    let full = normalize_rho(raw_full);
    let half = normalize_rho(raw_half);
    let error_bar = (full - half).abs() + 2.0 / n as f64;
    Ok(RotationEstimate { value: full, error_bar, n })
}

/// Map a raw torus rotation number to the normalized representative in
/// [0, 1/2] with the bottom-of-spectrum anchor at 0.
fn normalize_rho(raw: f64) -> f64 {
    let x = wrap(0.5 - raw);
    x.min(1.0 - x)
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthRow {
    pub n: i64,
    pub ln_op: f64,
    pub ln_hs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthProfile {
    pub theta: f64,
    pub rows: Vec<GrowthRow>,
}

/// Norm growth along one orbit, recorded at the requested (sorted, positive)
/// times in a single pass.
pub fn growth_profile(
    map: &CocycleMap,
    alpha: f64,
    theta: f64,
    checkpoints: &[i64],
) -> Result<GrowthProfile> {
    if checkpoints.is_empty() {
        return Err(Error::Invalid("growth_profile needs checkpoints".into()));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) || checkpoints[0] <= 0 {
        return Err(Error::Invalid("checkpoints must be positive and strictly increasing".into()));
    }
    let mut rows = Vec::with_capacity(checkpoints.len());
    let mut acc = ScaledMat2::identity();
    let mut th = wrap(theta);
    let mut next = 0usize;
    let n_max = *checkpoints.last().unwrap();
    for i in 1..=n_max {
        acc.m = map.eval(th).mul(&acc.m);
        acc.absorb();
        th += alpha;
        if th >= 1.0 {
            th -= 1.0;
        }
        if next < checkpoints.len() && checkpoints[next] == i {
            rows.push(GrowthRow { n: i, ln_op: acc.ln_op_norm(), ln_hs: acc.ln_hs_norm() });
            next += 1;
        }
    }
    Ok(GrowthProfile { theta, rows })
}

#[derive(Clone, Debug, Serialize)]
pub struct UhReport {
    /// min over sampled phases of (1/n) ln ||A_n(theta)||.
    pub min_exponent: f64,
    /// max angular mismatch (radians) of the expanded-direction cone field
    /// under one cocycle step.
    pub cone_defect: f64,
    pub uniform: bool,
}

/// Heuristic uniform-hyperbolicity test: uniform norm growth over a phase
/// grid plus consistency of the most-expanded direction field.
pub fn uh_test(
    map: &CocycleMap,
    alpha: f64,
    n: i64,
    grid: usize,
    margin: f64,
) -> Result<UhReport> {
    if grid < 8 {
        return Err(Error::Invalid("uh_test needs a grid of at least 8 phases".into()));
    }
    // Unstable field u(theta): most-expanded image direction of the backward
    // window A_n(theta - n alpha), i.e. its top left-singular direction.
    let unstable = |th: f64| -> [f64; 2] {
        let start = wrap(th - n as f64 * alpha);
        iterate(map, alpha, start, n).m.transpose().top_singular_direction()
    };
    let dirs: Vec<[f64; 2]> = (0..grid)
        .map(|i| unstable(i as f64 / grid as f64))
        .collect();
    let mut min_exp = f64::INFINITY;
    let mut cone_defect = 0.0f64;
    for i in 0..grid {
        let th = i as f64 / grid as f64;
        let it = iterate(map, alpha, th, n);
        min_exp = min_exp.min(it.ln_op_norm() / n as f64);
        // Push the unstable direction (of the backward window) forward one
        // step and compare with the field at theta + alpha.
        let shifted = wrap(th + alpha);
        let target = unstable(shifted);
        let image = map.eval(th).apply(dirs[i]);
        let nim = (image[0] * image[0] + image[1] * image[1]).sqrt();
        let im = [image[0] / nim, image[1] / nim];
        // angle between lines (mod pi)
        let cross = (im[0] * target[1] - im[1] * target[0]).abs();
        cone_defect = cone_defect.max(cross.asin());
    }
    Ok(UhReport {
        min_exponent: min_exp,
        cone_defect,
        uniform: min_exp > margin && cone_defect < 0.2,
    })
}
