//! Small dense 2x2 real and complex matrices with the closed-form operations
//! (exponential, logarithm, exact spectral norm) that the cocycle machinery
//! relies on.  Everything here is allocation free.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Real 2x2 matrix, row major: [[a, b], [c, d]].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Complex 2x2 matrix, row major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2c {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

impl Mat2 {
    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { a, b, c, d }
    }

    pub const fn identity() -> Self {
        Mat2::new(1.0, 0.0, 0.0, 1.0)
    }

    pub const fn zero() -> Self {
        Mat2::new(0.0, 0.0, 0.0, 0.0)
    }

    /// Rotation by `angle` radians: [[cos, -sin], [sin, cos]].
    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Mat2::new(c, -s, s, c)
    }

    /// Rotation by `2*pi*phi` radians (torus units).
    pub fn torus_rotation(phi: f64) -> Self {
        Mat2::rotation(2.0 * std::f64::consts::PI * phi)
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        Mat2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }

    pub fn sub(&self, o: &Mat2) -> Mat2 {
        Mat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        Mat2::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.a, self.c, self.b, self.d)
    }

    pub fn inverse(&self) -> Result<Mat2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Diagnostic(format!(
                "singular or non-finite matrix in inverse, det = {det}"
            )));
        }
        Ok(Mat2::new(self.d / det, -self.b / det, -self.c / det, self.a / det))
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }

    /// Frobenius (Hilbert-Schmidt) norm.
    pub fn hs_norm(&self) -> f64 {
        (self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d).sqrt()
    }

    /// Exact spectral (operator) norm of a 2x2 matrix: largest singular value.
    pub fn op_norm(&self) -> f64 {
        // Normalize by the largest entry first so the squared quantities
        // below never overflow (entries can reach ~1e120 before rescaling).
        let mx = self.max_abs();
        if mx == 0.0 || !mx.is_finite() {
            return mx * 2.0;
        }
        let s = self.scale(1.0 / mx);
        let f2 = s.a * s.a + s.b * s.b + s.c * s.c + s.d * s.d;
        let det = s.det();
        let disc = (f2 * f2 - 4.0 * det * det).max(0.0);
        mx * (0.5 * (f2 + disc.sqrt())).sqrt()
    }

    /// Direction (unit vector, up to sign) most expanded by the matrix:
    /// top right-singular vector.
    pub fn top_singular_direction(&self) -> [f64; 2] {
        // Eigenvector of A^T A for its largest eigenvalue.
        let ata = self.transpose().mul(self);
        let p = ata.a;
        let q = ata.b; // symmetric: b == c
        let r = ata.d;
        let lam = 0.5 * (p + r + ((p - r) * (p - r) + 4.0 * q * q).sqrt());
        // (A^T A - lam) v = 0 -> v along (q, lam - p) or (lam - r, q).
        let v1 = [q, lam - p];
        let v2 = [lam - r, q];
        let n1 = (v1[0] * v1[0] + v1[1] * v1[1]).sqrt();
        let n2 = (v2[0] * v2[0] + v2[1] * v2[1]).sqrt();
        let v = if n1 >= n2 { [v1[0] / n1, v1[1] / n1] } else { [v2[0] / n2, v2[1] / n2] };
        if v[0].is_nan() || v[1].is_nan() {
            [1.0, 0.0]
        } else {
            v
        }
    }

    /// Closed-form matrix exponential.  Writes X = s*I + W with W traceless
    /// and uses cos/cosh of sqrt(|det W|).
    pub fn exp(&self) -> Mat2 {
        let s = 0.5 * self.trace();
        let w = self.sub(&Mat2::identity().scale(s));
        let dw = w.det(); // = -(x^2 + y^2 - z^2) for sl(2) coordinates
        let (c, k) = if dw > 1e-24 {
            // elliptic: eigenvalues +- i*omega
            let om = dw.sqrt();
            (om.cos(), sinc(om))
        } else if dw < -1e-24 {
            let mu = (-dw).sqrt();
            (mu.cosh(), sinhc(mu))
        } else {
            // near-parabolic: series in det W
            (1.0 + dw * (-0.5 + dw / 24.0), 1.0 - dw / 6.0)
        };
        Mat2::identity().scale(c).add(&w.scale(k)).scale(s.exp())
    }

    /// Real matrix logarithm for matrices with positive determinant and
    /// normalized trace > -2 (elliptic, parabolic or positive hyperbolic).
    pub fn log(&self) -> Result<Mat2> {
        let det = self.det();
        if !(det > 0.0) {
            return Err(Error::Diagnostic(format!(
                "matrix log requires positive determinant, got {det}"
            )));
        }
        let r = det.sqrt();
        let s = 0.5 * det.ln();
        let t = self.trace() / r; // trace of the unimodular part
        let gp = self.scale(1.0 / r);
        let w = if t < 2.0 - 1e-9 {
            if t < -2.0 - 1e-9 {
                return Err(Error::Diagnostic(format!(
                    "no real logarithm: normalized trace {t} <= -2"
                )));
            }
            // Elliptic: G' = cos(xi) I + sin(xi) K/s with K the traceless
            // part and s = sqrt(det K) = |sin xi|.  Recovering sin(xi) from
            // K (entries O(sin xi)) instead of from the trace keeps the
            // branch well-conditioned near trace -2 (rotation angle ~ pi).
            let ht = (0.5 * t).clamp(-1.0, 1.0);
            let k = gp.sub(&Mat2::identity().scale(ht));
            let sx = k.det().max(0.0).sqrt();
            if sx < 1e-150 {
                // G' = -I exactly: any rotation generator of angle pi works.
                Mat2::new(0.0, std::f64::consts::PI, -std::f64::consts::PI, 0.0)
            } else {
                k.scale(sx.atan2(ht) / sx)
            }
        } else if t > 2.0 + 1e-9 {
            // Hyperbolic: G' = cosh(mu) I + sinh(mu) K/s with K the
            // traceless part and s = sqrt(-det K) = sinh mu.  Recovering
            // sinh(mu) from K avoids the acosh cancellation for small mu.
            let ht = 0.5 * t;
            let k = gp.sub(&Mat2::identity().scale(ht));
            let sh = (-k.det()).max(0.0).sqrt();
            if sh < 1e-150 {
                k
            } else {
                let mu = (ht - 1.0 + sh).ln_1p();
                k.scale(mu / sh)
            }
        } else {
            // Near-parabolic: G' - I = sinhc(m) W + (cosh(m) - 1) I with
            // W traceless and m^2 = -det(K) tiny, so W = K / sinhc(m) with
            // K the traceless part of G' - I and sinhc(m) ~ 1 - det(K)/6.
            let k = gp.sub(&Mat2::identity().scale(0.5 * t));
            let dk = k.det();
            k.scale(1.0 / (1.0 - dk / 6.0))
        };
        Ok(Mat2::identity().scale(s).add(&w))
    }

    pub fn to_complex(&self) -> Mat2c {
        Mat2c::new(
            C64::new(self.a, 0.0),
            C64::new(self.b, 0.0),
            C64::new(self.c, 0.0),
            C64::new(self.d, 0.0),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.d.abs())
    }
}

impl Mat2c {
    pub const fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Mat2c { a, b, c, d }
    }

    pub fn identity() -> Self {
        Mat2c::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0))
    }

    pub fn zero() -> Self {
        Mat2c::new(C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0))
    }

    pub fn mul(&self, o: &Mat2c) -> Mat2c {
        Mat2c::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }

    pub fn add(&self, o: &Mat2c) -> Mat2c {
        Mat2c::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }

    pub fn sub(&self, o: &Mat2c) -> Mat2c {
        Mat2c::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }

    pub fn scale(&self, s: C64) -> Mat2c {
        Mat2c::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    pub fn det(&self) -> C64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> C64 {
        self.a + self.d
    }

    pub fn adjoint(&self) -> Mat2c {
        Mat2c::new(self.a.conj(), self.c.conj(), self.b.conj(), self.d.conj())
    }

    pub fn inverse(&self) -> Result<Mat2c> {
        let det = self.det();
        if det.norm() == 0.0 || !det.norm().is_finite() {
            return Err(Error::Diagnostic(format!(
                "singular or non-finite complex matrix in inverse, |det| = {}",
                det.norm()
            )));
        }
        Ok(Mat2c::new(self.d / det, -self.b / det, -self.c / det, self.a / det))
    }

    pub fn hs_norm(&self) -> f64 {
        (self.a.norm_sqr() + self.b.norm_sqr() + self.c.norm_sqr() + self.d.norm_sqr()).sqrt()
    }

    /// Exact spectral norm (largest singular value).
    pub fn op_norm(&self) -> f64 {
        let mx = self
            .a
            .norm()
            .max(self.b.norm())
            .max(self.c.norm())
            .max(self.d.norm());
        if mx == 0.0 || !mx.is_finite() {
            return mx * 2.0;
        }
        let s = self.scale(C64::new(1.0 / mx, 0.0));
        let f2 = s.a.norm_sqr() + s.b.norm_sqr() + s.c.norm_sqr() + s.d.norm_sqr();
        let det = s.det().norm();
        let disc = (f2 * f2 - 4.0 * det * det).max(0.0);
        mx * (0.5 * (f2 + disc.sqrt())).sqrt()
    }

    /// Real part, with a diagnostic error if the imaginary part is not
    /// negligible relative to `scale`.
    pub fn into_real(self, scale: f64, tol: f64) -> Result<Mat2> {
        let imag = self
            .a
            .im
            .abs()
            .max(self.b.im.abs())
            .max(self.c.im.abs())
            .max(self.d.im.abs());
        if imag > tol * scale.max(1e-300) {
            return Err(Error::Diagnostic(format!(
                "matrix expected to be real has imaginary part {imag:.3e} (scale {scale:.3e})"
            )));
        }
        Ok(Mat2::new(self.a.re, self.b.re, self.c.re, self.d.re))
    }

    pub fn real_part(&self) -> Mat2 {
        Mat2::new(self.a.re, self.b.re, self.c.re, self.d.re)
    }
}

/// sin(x)/x, stable at 0.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// sinh(x)/x, stable at 0.
pub fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 + x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sinh() / x
    }
}

/// Cayley-type change of basis between sl(2,R) and su(1,1) coordinates:
/// X -> M X M^{-1} with M = (1/(2i)) [[1, -i], [1, i]].
pub fn cayley() -> Mat2c {
    let i = C64::new(0.0, 1.0);
    let half = C64::new(0.5, 0.0);
    // M = [[-i/2, -1/2], [-i/2, 1/2]]
    Mat2c::new(-i * half, -half, -i * half, half)
}

pub fn cayley_inv() -> Mat2c {
    let i = C64::new(0.0, 1.0);
    let one = C64::new(1.0, 0.0);
    // M^{-1} = [[i, i], [-1, 1]]
    Mat2c::new(i, i, -one, one)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(x: f64, y: f64, tol: f64) {
        assert!((x - y).abs() <= tol, "{x} vs {y} (tol {tol})");
    }

    #[test]
    fn rotation_is_orthogonal() {
        let r = Mat2::rotation(0.7);
        let rtr = r.transpose().mul(&r);
        assert_close(rtr.a, 1.0, 1e-15);
        assert_close(rtr.d, 1.0, 1e-15);
        assert_close(rtr.b, 0.0, 1e-15);
        assert_close(r.det(), 1.0, 1e-15);
    }

    #[test]
    fn exp_log_roundtrip_elliptic() {
        let x = Mat2::new(0.1, 0.9, -0.7, -0.1); // traceless, det > 0 branch
        let g = x.exp();
        assert_close(g.det(), 1.0, 1e-14);
        let y = g.log().unwrap();
        assert_close(y.a, x.a, 1e-12);
        assert_close(y.b, x.b, 1e-12);
        assert_close(y.c, x.c, 1e-12);
        assert_close(y.d, x.d, 1e-12);
    }

    #[test]
    fn exp_log_roundtrip_hyperbolic() {
        let x = Mat2::new(0.4, 0.2, 0.1, -0.4);
        let g = x.exp();
        let y = g.log().unwrap();
        assert_close(y.a, x.a, 1e-12);
        assert_close(y.b, x.b, 1e-12);
    }

    #[test]
    fn exp_log_roundtrip_near_parabolic() {
        // det(W) very close to zero
        let x = Mat2::new(1e-7, 1.0, -1e-14, -1e-7);
        let g = x.exp();
        let y = g.log().unwrap();
        assert_close(y.b, x.b, 1e-9);
    }

    #[test]
    fn exp_of_rotation_generator() {
        // exp of theta * [[0,-1],[1,0]] is the rotation by theta
        let theta = 1.234;
        let x = Mat2::new(0.0, -theta, theta, 0.0);
        let g = x.exp();
        let r = Mat2::rotation(theta);
        assert_close(g.a, r.a, 1e-14);
        assert_close(g.b, r.b, 1e-14);
    }

    #[test]
    fn op_norm_matches_power_iteration() {
        let m = Mat2::new(1.3, -0.4, 2.0, 0.7);
        // power iteration on A^T A
        let ata = m.transpose().mul(&m);
        let mut v = [1.0, 0.37];
        for _ in 0..200 {
            let w = ata.apply(v);
            let n = (w[0] * w[0] + w[1] * w[1]).sqrt();
            v = [w[0] / n, w[1] / n];
        }
        let w = m.apply(v);
        let pow = (w[0] * w[0] + w[1] * w[1]).sqrt();
        assert_close(m.op_norm(), pow, 1e-10);
    }

    #[test]
    fn top_singular_direction_is_most_expanded() {
        let m = Mat2::new(3.0, 1.0, 0.0, 0.3);
        let v = m.top_singular_direction();
        let w = m.apply(v);
        let vn = (w[0] * w[0] + w[1] * w[1]).sqrt();
        assert_close(vn, m.op_norm(), 1e-10);
    }

    #[test]
    fn cayley_conjugation_maps_sl2_to_su11_form() {
        // sl(2,R) element [[x, y+z],[y-z, -x]] must map to [[iz, x-iy],[x+iy, -iz]]
        let (x, y, z) = (0.3, -0.7, 1.1);
        let a = Mat2::new(x, y + z, y - z, -x).to_complex();
        let g = cayley().mul(&a).mul(&cayley_inv());
        assert!((g.a - C64::new(0.0, z)).norm() < 1e-14);
        assert!((g.b - C64::new(x, -y)).norm() < 1e-14);
        assert!((g.c - C64::new(x, y)).norm() < 1e-14);
        assert!((g.d - C64::new(0.0, -z)).norm() < 1e-14);
    }

    #[test]
    fn complex_op_norm_unitary_is_one() {
        let i = C64::new(0.0, 1.0);
        let u = Mat2c::new(
            C64::new(0.6, 0.0),
            C64::new(0.8, 0.0) * i,
            C64::new(0.8, 0.0) * i,
            C64::new(0.6, 0.0),
        );
        assert_close(u.op_norm(), 1.0, 1e-14);
    }
}
