//! Matrix-valued Fourier series on the torus and the weighted analytic norm
//! used by the conjugation machinery.
//!
//! A `FourierMap` stores complex 2x2 coefficients on integer modes.  A map
//! representing a real (sl(2,R)- or SL(2,R)-valued) function satisfies the
//! reality condition `coeff(-k) = conj(coeff(k))`; [`FourierMap::realify`]
//! enforces it by symmetrization.
//!
//! The analytic norm at width `h >= 0` is the weighted l1 norm
//! `sum_k ||coeff(k)||_op * exp(2*pi*|k|*h)`, an algebra norm that dominates
//! the sup norm on the strip of width `h`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::mat2::{Mat2, Mat2c};

#[derive(Clone, Debug, Default)]
pub struct FourierMap {
    coeffs: BTreeMap<i64, Mat2c>,
}

impl FourierMap {
    pub fn new() -> Self {
        FourierMap { coeffs: BTreeMap::new() }
    }

    pub fn constant(m: Mat2c) -> Self {
        let mut f = FourierMap::new();
        f.set(0, m);
        f
    }

    pub fn from_coeffs(coeffs: BTreeMap<i64, Mat2c>) -> Self {
        let mut f = FourierMap { coeffs };
        f.prune(0.0);
        f
    }

    /// Real single-harmonic perturbation `c * cos(2 pi k theta) * m`.
    pub fn real_cosine(k: i64, amplitude: f64, m: Mat2) -> Self {
        let half = m.to_complex().scale(Complex64::new(0.5 * amplitude, 0.0));
        let mut f = FourierMap::new();
        if k == 0 {
            f.set(0, m.to_complex().scale(Complex64::new(amplitude, 0.0)));
        } else {
            f.set(k, half);
            f.set(-k, half);
        }
        f
    }

    pub fn set(&mut self, k: i64, m: Mat2c) {
        if m.op_norm() == 0.0 {
            self.coeffs.remove(&k);
        } else {
            self.coeffs.insert(k, m);
        }
    }

    pub fn coeff(&self, k: i64) -> Mat2c {
        self.coeffs.get(&k).copied().unwrap_or_else(Mat2c::zero)
    }

    pub fn coeffs(&self) -> &BTreeMap<i64, Mat2c> {
        &self.coeffs
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn max_mode(&self) -> i64 {
        self.coeffs.keys().map(|k| k.abs()).max().unwrap_or(0)
    }

    pub fn eval_complex(&self, theta: f64) -> Mat2c {
        let mut acc = Mat2c::zero();
        for (&k, m) in &self.coeffs {
            let phase = Complex64::from_polar(1.0, 2.0 * PI * k as f64 * theta);
            acc = acc.add(&m.scale(phase));
        }
        acc
    }

    /// Evaluate assuming the reality condition holds.
    pub fn eval_real(&self, theta: f64) -> Mat2 {
        self.eval_complex(theta).real_part()
    }

    /// Weighted l1 analytic norm at strip width `h`.
    pub fn analytic_norm(&self, h: f64) -> f64 {
        assert!(h >= 0.0, "analytic norm needs h >= 0");
        self.coeffs
            .iter()
            .map(|(&k, m)| m.op_norm() * (2.0 * PI * k.abs() as f64 * h).exp())
            .sum()
    }

    /// Sup of the operator norm over an evaluation grid (cheap stand-in for
    /// the sup norm on the real torus).
    pub fn sup_norm_grid(&self, grid: usize) -> f64 {
        (0..grid)
            .map(|i| self.eval_complex(i as f64 / grid as f64).op_norm())
            .fold(0.0, f64::max)
    }

    /// Keep modes |k| <= n; returns the analytic norm of the dropped tail at
    /// width `h`.
    pub fn truncate(&mut self, n: i64, h: f64) -> f64 {
        let mut tail = 0.0;
        self.coeffs.retain(|&k, m| {
            if k.abs() <= n {
                true
            } else {
                tail += m.op_norm() * (2.0 * PI * k.abs() as f64 * h).exp();
                false
            }
        });
        tail
    }

    /// Drop coefficients with operator norm at or below `floor`.
    pub fn prune(&mut self, floor: f64) {
        self.coeffs.retain(|_, m| m.op_norm() > floor);
    }

    /// Symmetrize to enforce the reality condition; returns the size of the
    /// asymmetry that was removed (relative to the norm at h = 0).
    pub fn realify(&mut self) -> f64 {
        let keys: Vec<i64> = self.coeffs.keys().copied().collect();
        let mut asym: f64 = 0.0;
        let mut done = std::collections::BTreeSet::new();
        for k in keys {
            if done.contains(&k) {
                continue;
            }
            done.insert(k);
            done.insert(-k);
            let a = self.coeff(k);
            let b = self.coeff(-k).adjoint_entrywise_conj();
            let avg = a.add(&b).scale(Complex64::new(0.5, 0.0));
            asym = asym.max(a.sub(&b).op_norm());
            self.set(k, avg);
            self.set(-k, avg.entrywise_conj());
        }
        asym
    }

    pub fn add(&self, o: &FourierMap) -> FourierMap {
        let mut out = self.clone();
        for (&k, m) in &o.coeffs {
            let s = out.coeff(k).add(m);
            out.set(k, s);
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> FourierMap {
        FourierMap {
            coeffs: self.coeffs.iter().map(|(&k, m)| (k, m.scale(s))).collect(),
        }
    }

    /// Shift all modes by `d` (multiplication by e^{2 pi i d theta}).
    pub fn shift_modes(&self, d: i64) -> FourierMap {
        FourierMap {
            coeffs: self.coeffs.iter().map(|(&k, m)| (k + d, *m)).collect(),
        }
    }

    /// Constant conjugation `c^{-1} f c` applied to every coefficient.
    pub fn conjugate_by(&self, c: &Mat2c) -> Result<FourierMap> {
        let ci = c.inverse()?;
        Ok(FourierMap {
            coeffs: self
                .coeffs
                .iter()
                .map(|(&k, m)| (k, ci.mul(m).mul(c)))
                .collect(),
        })
    }

    /// Sample on a uniform grid of the given (power-of-two friendly) size.
    pub fn sample_complex(&self, grid: usize) -> Vec<Mat2c> {
        (0..grid).map(|i| self.eval_complex(i as f64 / grid as f64)).collect()
    }

    /// Recover Fourier coefficients from samples on the uniform grid
    /// theta_m = m / len, keeping modes |k| <= kmax, dropping entries whose
    /// operator norm is at or below `floor`.
    pub fn from_samples(samples: &[Mat2c], kmax: i64, floor: f64) -> Result<FourierMap> {
        let n = samples.len();
        if n < 3 {
            return Err(Error::Invalid("need at least 3 samples".into()));
        }
        if kmax as usize > (n - 1) / 2 {
            return Err(Error::Invalid(format!(
                "kmax {kmax} beyond Nyquist for {n} samples"
            )));
        }
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let mut entry_spectra: Vec<Vec<Complex64>> = Vec::with_capacity(4);
        for pick in 0..4 {
            let mut buf: Vec<Complex64> = samples
                .iter()
                .map(|m| match pick {
                    0 => m.a,
                    1 => m.b,
                    2 => m.c,
                    _ => m.d,
                })
                .collect();
            fft.process(&mut buf);
            entry_spectra.push(buf);
        }
        let scale = 1.0 / n as f64;
        let mut coeffs = BTreeMap::new();
        for k in -kmax..=kmax {
            // forward FFT computes sum_m f(m) e^{-2pi i k m / n}
            let idx = k.rem_euclid(n as i64) as usize;
            let m = Mat2c::new(
                entry_spectra[0][idx] * scale,
                entry_spectra[1][idx] * scale,
                entry_spectra[2][idx] * scale,
                entry_spectra[3][idx] * scale,
            );
            if m.op_norm() > floor {
                coeffs.insert(k, m);
            }
        }
        Ok(FourierMap { coeffs })
    }
}

impl Mat2c {
    /// Entrywise complex conjugate (not the adjoint).
    pub fn entrywise_conj(&self) -> Mat2c {
        Mat2c::new(self.a.conj(), self.b.conj(), self.c.conj(), self.d.conj())
    }

    /// Alias used when symmetrizing reality: conj of entries of the partner
    /// coefficient.
    pub fn adjoint_entrywise_conj(&self) -> Mat2c {
        self.entrywise_conj()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_samples_coefficients() {
        let mut f = FourierMap::new();
        f.set(0, Mat2::new(0.3, 0.1, -0.2, 0.5).to_complex());
        let c = Mat2c::new(
            Complex64::new(0.05, 0.02),
            Complex64::new(0.0, -0.01),
            Complex64::new(0.03, 0.0),
            Complex64::new(-0.02, 0.04),
        );
        f.set(3, c);
        f.set(-3, c.entrywise_conj());
        let samples = f.sample_complex(64);
        let g = FourierMap::from_samples(&samples, 10, 0.0).unwrap();
        for k in -10..=10 {
            let d = f.coeff(k).sub(&g.coeff(k)).op_norm();
            assert!(d < 1e-13, "mode {k} differs by {d}");
        }
    }

    #[test]
    fn analytic_norm_weights() {
        let mut f = FourierMap::new();
        f.set(2, Mat2::identity().to_complex());
        let h = 0.1;
        let expect = (2.0 * PI * 2.0 * h).exp();
        assert!((f.analytic_norm(h) - expect).abs() < 1e-12);
    }

    #[test]
    fn analytic_norm_dominates_sup() {
        let mut f = FourierMap::new();
        f.set(1, Mat2::new(0.2, 0.0, 0.1, -0.3).to_complex());
        f.set(-1, Mat2::new(0.2, 0.0, 0.1, -0.3).to_complex());
        f.set(4, Mat2::new(0.0, 0.05, 0.0, 0.0).to_complex());
        let sup = f.sup_norm_grid(97);
        assert!(f.analytic_norm(0.0) >= sup - 1e-12);
    }

    #[test]
    fn eval_real_of_cosine() {
        let f = FourierMap::real_cosine(2, 0.7, Mat2::new(1.0, 0.0, 0.0, -1.0));
        let theta = 0.123;
        let v = f.eval_real(theta);
        let expect = 0.7 * (2.0 * PI * 2.0 * theta).cos();
        assert!((v.a - expect).abs() < 1e-14);
        assert!((v.d + expect).abs() < 1e-14);
    }

    #[test]
    fn shift_modes_multiplies_by_character() {
        let mut f = FourierMap::new();
        f.set(1, Mat2::identity().to_complex());
        let g = f.shift_modes(3);
        let theta = 0.37;
        let lhs = g.eval_complex(theta);
        let phase = Complex64::from_polar(1.0, 2.0 * PI * 3.0 * theta);
        let rhs = f.eval_complex(theta).scale(phase);
        assert!(lhs.sub(&rhs).op_norm() < 1e-13);
    }
}
