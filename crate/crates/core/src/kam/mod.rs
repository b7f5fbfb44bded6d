//! Quantitative KAM scheme for analytic perturbations of constant elliptic
//! SL(2,R) cocycles: su(1,1) normal forms for the constant part, the
//! non-resonant/resonant conjugation step with measured contraction bounds,
//! an iteration driver with a log-tracked precision model, and a
//! rotation-backward variant that keeps the net conjugacy degree zero under a
//! rotation-number lower-bound certificate.
//!
//! All conjugations are performed exactly on an oversampled grid (the new
//! perturbation is recovered as a matrix logarithm and re-expanded in
//! Fourier modes), so every inequality recorded in the step ledgers is a
//! measured quantity, not a trusted estimate.

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::arithmetic::{torus_norm, Irrational};
use crate::error::{Error, Result};
use crate::fourier::FourierMap;
use crate::mat2::{cayley, cayley_inv, Mat2, Mat2c};

const TAU: f64 = 2.0 * std::f64::consts::PI;
const PI: f64 = std::f64::consts::PI;

/// Scheme constants.  The theory names but does not fix them; defaults were
/// calibrated once against batches of random perturbative instances.
#[derive(Clone, Debug, Serialize)]
pub struct KamConfig {
    /// Exponent of ||A|| in the smallness gate.
    pub c0: f64,
    /// Diophantine exponent used in resonance bookkeeping.
    pub tau: f64,
    /// Diophantine constant min_k ||k alpha|| |k|^tau over a scan window.
    pub kappa: f64,
    /// Gate prefactor.
    pub d0: f64,
    /// Multiplicative slack on all asserted bounds.
    pub slack: f64,
}

impl KamConfig {
    pub fn for_alpha(alpha: &Irrational) -> KamConfig {
        KamConfig {
            c0: 8.0,
            tau: 2.0,
            kappa: diophantine_kappa(alpha, 2.0, 1024),
            // Calibrated against batches of perturbative instances: largest
            // prefactor for which every instance passing the gate at the
            // full-width step still contracted quadratically.
            d0: 1e16,
            slack: 4.0,
        }
    }
}

/// min over 1 <= k <= window of ||k alpha|| * k^tau.
pub fn diophantine_kappa(alpha: &Irrational, tau: f64, window: i64) -> f64 {
    let a = alpha.approx_f64();
    let mut best = f64::INFINITY;
    for k in 1..=window {
        let d = torus_norm(k as f64 * a) * (k as f64).powf(tau);
        best = best.min(d);
    }
    best
}

/// Conjugacy class of an SL(2,R) constant (by normalized trace).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ConstantClass {
    /// Eigenvalues e^{+-i xi}, xi != 0.
    Elliptic,
    Parabolic,
    /// Eigenvalues e^{+-mu}, mu > 0.
    Hyperbolic,
}

/// An SL(2,R) constant in su(1,1) logarithm coordinates: the matrix is
/// M^{-1} exp([[i t, nu], [conj nu, -i t]]) M with M the Cayley map.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Su11Constant {
    pub t: f64,
    pub nu_re: f64,
    pub nu_im: f64,
    pub class: ConstantClass,
    /// Rotation angle (radians per step): xi^2 = t^2 - |nu|^2, sign of t.
    /// Hyperbolic constants store 0 here and the expansion rate in `mu`.
    pub xi: f64,
    pub mu: f64,
}

impl Su11Constant {
    /// Pure rotation R_xi (angle xi radians in the su(1,1) convention).
    pub fn rotation(xi: f64) -> Su11Constant {
        Su11Constant { t: xi, nu_re: 0.0, nu_im: 0.0, class: ConstantClass::Elliptic, xi, mu: 0.0 }
    }

    pub fn nu(&self) -> C64 {
        C64::new(self.nu_re, self.nu_im)
    }

    pub fn nu_abs(&self) -> f64 {
        self.nu().norm()
    }

    /// Coordinates of a real matrix close to SL(2,R) (determinant projected).
    pub fn from_mat(a: &Mat2) -> Result<Su11Constant> {
        let det = a.det();
        if !(det > 0.0) || (det - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!(
                "su(1,1) coordinates need det ~ 1, got {det}"
            )));
        }
        let a = a.scale(1.0 / det.sqrt());
        let l = a.log()?;
        // sl(2,R) basis: L = [[x, y+z], [y-z, -x]] maps to [[iz, x-iy], [x+iy, -iz]].
        let x = 0.5 * (l.a - l.d);
        let y = 0.5 * (l.b + l.c);
        let z = 0.5 * (l.b - l.c);
        let t = z;
        let nu = C64::new(x, -y);
        let disc = t * t - nu.norm_sqr();
        let (class, xi, mu) = if disc > 0.0 {
            (ConstantClass::Elliptic, t.signum() * disc.sqrt(), 0.0)
        } else if disc < 0.0 {
            (ConstantClass::Hyperbolic, 0.0, (-disc).sqrt())
        } else {
            (ConstantClass::Parabolic, 0.0, 0.0)
        };
        Ok(Su11Constant { t, nu_re: nu.re, nu_im: nu.im, class, xi, mu })
    }

    /// The real SL(2,R) matrix these coordinates represent.
    pub fn to_mat(&self) -> Mat2 {
        let x = self.nu_re;
        let y = -self.nu_im;
        let z = self.t;
        Mat2::new(x, y + z, y - z, -x).exp()
    }

    pub fn op_norm(&self) -> f64 {
        self.to_mat().op_norm()
    }
}

/// Matrix of the su(1,1)-convention rotation R_phi (exp of the generator
/// with t = phi): rotation by -phi in the usual counterclockwise convention.
pub fn rot_mat(phi: f64) -> Mat2 {
    let (s, c) = phi.sin_cos();
    Mat2::new(c, s, -s, c)
}

/// One measured inequality from a step: lhs <= rhs expected.
#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

impl BoundCheck {
    fn new(name: &str, lhs: f64, rhs: f64) -> BoundCheck {
        BoundCheck { name: name.into(), lhs, rhs, ok: lhs <= rhs }
    }
}

/// Regime of the elliptic normalizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum NormalizeRegime {
    NearDiagonal,
    Dominated,
}

#[derive(Clone, Debug)]
pub struct Normalized {
    /// Symmetric positive-definite U in SL(2,R) with U^{-1} A U = R_xi.
    pub u: Mat2,
    pub regime: NormalizeRegime,
    pub checks: Vec<BoundCheck>,
}

/// Conjugate an elliptic constant to the rotation R_xi by a canonical
/// (symmetric positive definite) real matrix.  In the near-diagonal regime
/// |2 nu / xi| <= 1 the normalizer satisfies ||U - id|| <= |nu/xi|; otherwise
/// ||U||^2 <= 4|nu|/|xi| (and equals (|t|+|nu|)/|xi| exactly).
pub fn normalize_elliptic(a: &Su11Constant) -> Result<Normalized> {
    if a.class != ConstantClass::Elliptic || a.xi == 0.0 {
        return Err(Error::Unsupported(format!(
            "normalize_elliptic needs an elliptic constant, got {:?}",
            a.class
        )));
    }
    let m = a.to_mat();
    let xi = a.xi;
    // Complex eigenvector for the eigenvalue e^{-i xi} (the su(1,1)
    // convention rotation R_xi equals the standard rotation by -xi).
    let lam = C64::from_polar(1.0, -xi);
    let v = eigvec2(&m, lam)?;
    let u_col = [v[0].re, v[1].re];
    let w_col = [v[0].im, v[1].im];
    // U0 = [u | -w] intertwines: A U0 = U0 * rotation(-xi) = U0 * R_xi.
    let mut u0 = Mat2::new(u_col[0], -w_col[0], u_col[1], -w_col[1]);
    let det = u0.det();
    if det.abs() < 1e-300 {
        return Err(Error::Diagnostic("degenerate eigenvector in normalize_elliptic".into()));
    }
    if det < 0.0 {
        // Wrong orientation: the conjugate eigenvector realizes it.  This
        // would flip the realized angle, which contradicts the sign of t;
        // it indicates the eigenpair was matched to the wrong eigenvalue.
        u0 = Mat2::new(-u0.a, u0.b, -u0.c, u0.d);
    }
    let u0 = u0.scale(1.0 / u0.det().abs().sqrt());
    // Canonical representative: polar decomposition U0 = S Q with Q a
    // rotation (it commutes with R_xi), keep the symmetric factor
    // S = sqrt(U0 U0^T) = (U0 U0^T + I)/sqrt(tr(U0 U0^T) + 2).
    let p = u0.mul(&u0.transpose());
    let s = p.add(&Mat2::identity()).scale(1.0 / (p.trace() + 2.0).sqrt());
    let target = rot_mat(xi);
    let resid = s.inverse()?.mul(&m).mul(&s).sub(&target).op_norm();
    let mut checks = vec![BoundCheck::new("normalizer-conjugation-residual", resid, 1e-9)];
    let nu = a.nu_abs();
    let ratio = nu / xi.abs();
    let regime = if 2.0 * ratio <= 1.0 {
        checks.push(BoundCheck::new(
            "near-diagonal ||U - id|| <= |nu/xi|",
            s.sub(&Mat2::identity()).op_norm(),
            ratio + 1e-12,
        ));
        NormalizeRegime::NearDiagonal
    } else {
        let norm2 = s.op_norm().powi(2);
        checks.push(BoundCheck::new(
            "dominated ||U||^2 <= 4|nu|/|xi|",
            norm2,
            4.0 * ratio + 1e-12,
        ));
        checks.push(BoundCheck::new(
            "dominated ||U||^2 == (|t|+|nu|)/|xi|",
            (norm2 - (a.t.abs() + nu) / xi.abs()).abs(),
            1e-8 * norm2.max(1.0),
        ));
        NormalizeRegime::Dominated
    };
    Ok(Normalized { u: s, regime, checks })
}

/// Eigenvector of a real 2x2 matrix for a given (complex) eigenvalue.
fn eigvec2(m: &Mat2, lam: C64) -> Result<[C64; 2]> {
    // Rows of (M - lam I) are both orthogonal to the eigenvector.
    let cand1 = [C64::new(-m.b, 0.0), C64::new(m.a, 0.0) - lam];
    let cand2 = [C64::new(m.d, 0.0) - lam, C64::new(-m.c, 0.0)];
    let n1 = cand1[0].norm_sqr() + cand1[1].norm_sqr();
    let n2 = cand2[0].norm_sqr() + cand2[1].norm_sqr();
    let v = if n1 >= n2 { cand1 } else { cand2 };
    let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    if n < 1e-300 {
        return Err(Error::Diagnostic("zero eigenvector candidate".into()));
    }
    Ok([v[0] / n, v[1] / n])
}

#[derive(Clone, Debug)]
pub struct Triangularized {
    /// Unitary U' (in su(1,1) coordinates) with U'^* A_su U' upper triangular.
    pub u: Mat2c,
    pub nu_prime: C64,
    pub checks: Vec<BoundCheck>,
}

/// Unitary Schur triangularization of the constant in su(1,1) coordinates:
/// diagonal e^{+-i xi}, off-diagonal nu' with |nu'| <= 4 |nu| and ||U'|| = 1.
pub fn triangularize(a: &Su11Constant) -> Result<Triangularized> {
    if a.class != ConstantClass::Elliptic {
        return Err(Error::Unsupported(format!(
            "triangularize needs an elliptic constant, got {:?}",
            a.class
        )));
    }
    // Group element in su(1,1) coordinates.
    let g = cayley().mul(&a.to_mat().to_complex()).mul(&cayley_inv());
    let lam = C64::from_polar(1.0, a.xi);
    // Unit eigenvector w1 for e^{i xi}.
    let cand1 = [-g.b, g.a - lam];
    let cand2 = [g.d - lam, -g.c];
    let n1 = (cand1[0].norm_sqr() + cand1[1].norm_sqr()).sqrt();
    let n2 = (cand2[0].norm_sqr() + cand2[1].norm_sqr()).sqrt();
    let w1 = if n1 >= n2 {
        [cand1[0] / n1, cand1[1] / n1]
    } else {
        [cand2[0] / n2, cand2[1] / n2]
    };
    // Orthogonal complement makes U' unitary.
    let w2 = [-w1[1].conj(), w1[0].conj()];
    let u = Mat2c::new(w1[0], w2[0], w1[1], w2[1]);
    let t = u.adjoint().mul(&g).mul(&u);
    let nu_prime = t.b;
    let checks = vec![
        BoundCheck::new("schur-lower-left-zero", t.c.norm(), 1e-10),
        BoundCheck::new(
            "schur-diagonal e^{i xi}",
            (t.a - lam).norm().max((t.d - lam.conj()).norm()),
            1e-9,
        ),
        BoundCheck::new("|nu'| <= 4 |nu|", nu_prime.norm(), 4.0 * a.nu_abs() + 1e-14),
        BoundCheck::new("||U'|| <= 2", u.op_norm(), 2.0),
    ];
    Ok(Triangularized { u, nu_prime, checks })
}

/// Smallest-|n| resonant mode of a rotation angle xi (radians) with respect
/// to alpha: 0 < |n| <= n_max with ||xi/pi - n alpha|| < eps^{1/15}.
/// Ties between n and -n resolve to the positive one.
pub fn detect_resonance(xi: f64, alpha: &Irrational, n_max: i64, eps: f64) -> Option<i64> {
    if !(eps > 0.0) || eps >= 1.0 {
        return None;
    }
    detect_resonance_thr(xi, alpha, n_max, eps.powf(1.0 / 15.0))
}

fn detect_resonance_thr(xi: f64, alpha: &Irrational, n_max: i64, thr: f64) -> Option<i64> {
    if n_max < 1 {
        return None;
    }
    let two_rho = xi / PI;
    let a = alpha.approx_f64();
    for k in 1..=n_max {
        for n in [k, -k] {
            if torus_norm(two_rho - n as f64 * a) < thr {
                return Some(n);
            }
        }
    }
    None
}

/// Desk-scale resonance threshold used by the iteration driver.  The scheme
/// exponent eps^{1/15} only separates genuine resonances once eps is far
/// below what double precision can start from.  A divisor at distance d only
/// spoils the ||Y|| <= sqrt(eps) bound when 2 pi d <~ sqrt(eps), so the
/// driver caps the window at sqrt(eps)/16 (and an absolute 0.02); treating a
/// merely-smallish divisor as resonant costs far more than dividing by it.
fn driver_resonance_threshold(eps: f64) -> f64 {
    eps.powf(1.0 / 15.0).min(eps.sqrt() / 16.0).min(0.02)
}

/// Output of a non-resonant conjugation step.
#[derive(Clone, Debug)]
pub struct NonresStep {
    pub y: FourierMap,
    pub a_plus: Su11Constant,
    pub f_plus: FourierMap,
    pub n_trunc: i64,
    pub eps_in: f64,
    pub eps_out: f64,
    pub checks: Vec<BoundCheck>,
}

/// Output of a resonant conjugation step.
#[derive(Clone, Debug)]
pub struct ResStep {
    pub p: Mat2,
    pub y: FourierMap,
    pub rotation_deg: i64,
    pub a_plus: Su11Constant,
    pub f_plus: FourierMap,
    pub eps_in: f64,
    pub eps_out: f64,
    pub checks: Vec<BoundCheck>,
}

/// Truncation order for the current step.
fn trunc_order(eps: f64, h: f64, h_plus: f64) -> i64 {
    let n = (2.0 * eps.ln().abs() / (h - h_plus)).ceil() as i64;
    n.max(1)
}

/// Coefficients below this are grid/FFT noise and must not be divided by
/// small divisors (that would manufacture spurious high-mode content).
const SOLVE_FLOOR: f64 = 1e-13;

/// Output truncation order balancing two error sources: the un-removed
/// analytic tail eps e^{-2 pi (h - h+) k} against the noise floor amplified
/// by the analytic-norm weight, noise e^{2 pi h+ k}.  Minimizing the sum
/// gives k* = ln(w eps / (h+ noise)) / (2 pi (w + h+)) with w = h - h+.
fn kmax_balanced(eps: f64, h: f64, h_plus: f64, noise: f64) -> i64 {
    let w = (h - h_plus).max(1e-12);
    let ratio = (w * eps.max(1e-300)) / (h_plus * noise.max(1e-300));
    let k = (ratio.max(1.0).ln() / (TAU * (w + h_plus))).ceil() as i64;
    k.max(4)
}

/// Smallness gate eps <= D0 / ||A||^{C0} * (h - h+)^{C0 tau}.
fn gate_threshold(a_norm: f64, h: f64, h_plus: f64, cfg: &KamConfig) -> f64 {
    cfg.d0 / a_norm.powf(cfg.c0) * (h - h_plus).powf(cfg.c0 * cfg.tau)
}

/// Solve the truncated linearized homological equation for constant rotation
/// angle xi in the su(1,1) eigenbasis of A and return the real sl(2,R)-valued
/// Y.  `skip` lists (component, mode) pairs excluded from the solve:
/// component 0 = diagonal, +1 = upper off-diagonal, -1 = lower off-diagonal.
/// The k = 0 diagonal mode is always excluded (it belongs to the constant).
fn solve_homological(
    a: &Su11Constant,
    f: &FourierMap,
    alpha: f64,
    n_trunc: i64,
    skip_upper: Option<i64>,
) -> Result<FourierMap> {
    let norm = normalize_elliptic(a)?;
    // C = U * M^{-1} diagonalizes A: C^{-1} A C = diag(e^{i xi}, e^{-i xi}).
    // (M maps sl(2,R) to su(1,1); the rotation R_xi is diagonal there.)
    let c = norm.u.to_complex().mul(&cayley_inv());
    let c_inv = c.inverse()?;
    let xi = a.xi;
    let mut y = FourierMap::new();
    for (&k, fk) in f.coeffs() {
        if k.abs() > n_trunc {
            continue;
        }
        let g = c_inv.mul(fk).mul(&c);
        if g.op_norm() < SOLVE_FLOOR {
            continue;
        }
        let om = TAU * (k as f64) * alpha;
        let e_om = C64::from_polar(1.0, om);
        // First-order cancellation for B(.+alpha)^{-1} A e^f B needs
        // A^{-1} Y(.+alpha) A - Y = f, i.e. per component in the eigenbasis:
        // diag (e^{i om} - 1); upper (e^{i(om - 2xi)} - 1); lower
        // (e^{i(om + 2xi)} - 1).
        let one = C64::new(1.0, 0.0);
        let d_diag = e_om - one;
        let d_up = C64::from_polar(1.0, om - 2.0 * xi) - one;
        let d_lo = C64::from_polar(1.0, om + 2.0 * xi) - one;
        // k = 0 is excluded entirely: the mean is absorbed into the constant
        // (the off-diagonal divisor 2 sin xi is unusable near-parabolic).
        let zero = C64::new(0.0, 0.0);
        let y11 = if k == 0 { zero } else { g.a / d_diag };
        let y22 = if k == 0 { zero } else { g.d / d_diag };
        let y12 = if k == 0 || skip_upper == Some(k) { zero } else { g.b / d_up };
        let y21 = if k == 0 || skip_upper == Some(-k) { zero } else { g.c / d_lo };
        let yk = c.mul(&Mat2c::new(y11, y12, y21, y22)).mul(&c_inv);
        y.set(k, yk);
    }
    y.realify();
    Ok(y)
}

/// Exact reconjugation on an oversampled grid: the new perturbation of the
/// cocycle conj(theta+alpha)^{-1} (A e^f)(theta) conj(theta) relative to the
/// constant `a_plus`, where conj(theta) is supplied pointwise.
fn reconjugate<F: Fn(f64) -> Mat2>(
    a: &Mat2,
    f: &FourierMap,
    alpha: f64,
    a_plus: &Mat2,
    conj: &F,
    kmax: i64,
    noise_floor: f64,
) -> Result<FourierMap> {
    let grid = (4 * kmax.max(1) + 1) as usize;
    let ap_inv = a_plus.inverse()?;
    let mut samples = Vec::with_capacity(grid);
    for i in 0..grid {
        let th = i as f64 / grid as f64;
        let b_out = conj(th + alpha).inverse()?;
        let b_in = conj(th);
        let g = b_out.mul(a).mul(&f.eval_real(th).exp()).mul(&b_in);
        let fp = ap_inv.mul(&g).log()?;
        samples.push(fp.to_complex());
    }
    let mut out = FourierMap::from_samples(&samples, kmax, 0.0)?;
    out.prune(noise_floor);
    out.realify();
    Ok(out)
}

/// Non-resonant KAM step: remove all Fourier modes |k| <= N of the
/// perturbation by a close-to-identity conjugation e^Y, absorbing the mean
/// into the constant; quadratic contraction is measured, not assumed.
pub fn nonresonant_step(
    a: &Su11Constant,
    f: &FourierMap,
    alpha: &Irrational,
    h: f64,
    h_plus: f64,
    cfg: &KamConfig,
) -> Result<NonresStep> {
    nonresonant_step_inner(a, f, alpha, h, h_plus, cfg, true)
}

fn nonresonant_step_inner(
    a: &Su11Constant,
    f: &FourierMap,
    alpha: &Irrational,
    h: f64,
    h_plus: f64,
    cfg: &KamConfig,
    enforce_gate: bool,
) -> Result<NonresStep> {
    if !(h > h_plus && h_plus > 0.0) {
        return Err(Error::Invalid("need h > h_plus > 0".into()));
    }
    let eps = f.analytic_norm(h);
    if eps == 0.0 {
        return Ok(NonresStep {
            y: FourierMap::new(),
            a_plus: *a,
            f_plus: FourierMap::new(),
            n_trunc: 0,
            eps_in: 0.0,
            eps_out: 0.0,
            checks: vec![],
        });
    }
    if enforce_gate {
        let gate = gate_threshold(a.op_norm(), h, h_plus, cfg);
        if eps > gate {
            return Err(Error::Gate(format!(
                "smallness gate violated: eps = {eps:.3e} > {gate:.3e}"
            )));
        }
    }
    let n_trunc = trunc_order(eps, h, h_plus);
    let af = alpha.approx_f64();
    let y = solve_homological(a, f, af, n_trunc, None)?;
    // Constant update: absorb the whole (traceless) mean into the constant;
    // Y removes only the k != 0 modes.
    let a_mat = a.to_mat();
    let mean = f.coeff(0).real_part();
    let mean_traceless = mean.sub(&Mat2::identity().scale(0.5 * mean.trace()));
    let a_plus_mat = a_mat.mul(&mean_traceless.exp());
    let a_plus = Su11Constant::from_mat(&a_plus_mat)?;
    let noise = 1e-15 * (1.0 + a_plus_mat.op_norm());
    let kmax = (2 * n_trunc.max(f.max_mode())).min(kmax_balanced(eps, h, h_plus, noise));
    let conj = |th: f64| y.eval_real(th).exp();
    let f_plus = reconjugate(&a_mat, f, af, &a_plus_mat, &conj, kmax, noise)?;
    let eps_out = f_plus.analytic_norm(h_plus);
    let checks = vec![
        BoundCheck::new(
            "nonres ||Y||_{h+} <= sqrt(eps) * slack",
            y.analytic_norm(h_plus),
            eps.sqrt() * cfg.slack,
        ),
        BoundCheck::new("nonres ||f+||_{h+} <= eps^{3/2}", eps_out, eps.powf(1.5) * cfg.slack),
        BoundCheck::new(
            "nonres ||A+ - A|| <= 2 eps",
            a_plus_mat.sub(&a_mat).op_norm(),
            2.0 * eps,
        ),
    ];
    Ok(NonresStep { y, a_plus, f_plus, n_trunc, eps_in: eps, eps_out, checks })
}

/// Half-integer torus rotation factor R_{n theta / 2} in the su(1,1)
/// convention: matrix rot_mat(pi n theta).
pub fn half_rotation(n: i64, theta: f64) -> Mat2 {
    rot_mat(PI * n as f64 * theta)
}

/// Resonant KAM step at mode n_*: normalize the constant to a rotation,
/// remove the non-resonant modes, then conjugate by the half-integer
/// rotation R_{n_* theta / 2}, which shifts the rotation angle by
/// -pi n_* alpha and moves the resonant mode to frequency zero.  The new
/// constant's off-diagonal nu+ is exponentially small in |n_*| h.
pub fn resonant_step(
    a: &Su11Constant,
    f: &FourierMap,
    n_star: i64,
    alpha: &Irrational,
    h: f64,
    h_plus: f64,
    cfg: &KamConfig,
) -> Result<ResStep> {
    if n_star == 0 {
        return Err(Error::Invalid("resonant mode must be nonzero".into()));
    }
    let eps = f.analytic_norm(h).max(1e-300);
    let thr = eps.powf(1.0 / 15.0).max(1e-18);
    let af = alpha.approx_f64();
    if torus_norm(a.xi / PI - n_star as f64 * af) >= thr && !f.is_empty() {
        return Err(Error::Invalid(format!(
            "mode {n_star} is not resonant for xi = {} at eps = {eps:.3e}",
            a.xi
        )));
    }
    let n_trunc = trunc_order(eps.max(1e-200), h, h_plus).max(n_star.abs());
    // 1. P conjugates A to the pure rotation R_xi.
    let norm = normalize_elliptic(a)?;
    let p = norm.u;
    let mut checks = norm.checks.clone();
    checks.push(BoundCheck::new(
        "resonant ||P|| <= |n_*|^tau / kappa * slack",
        p.op_norm(),
        (n_star.abs() as f64).powf(cfg.tau) / cfg.kappa * cfg.slack,
    ));
    // Perturbation in the rotated frame, computed exactly on the grid.
    let a_mat = a.to_mat();
    let r_xi = rot_mat(a.xi);
    let noise = 1e-15 * (1.0 + p.op_norm().powi(2));
    let kmax0 = (n_trunc.max(f.max_mode()) + 2).min(kmax_balanced(eps, h, h_plus, noise));
    let conj_p = |_th: f64| p;
    let f1 = reconjugate(&a_mat, f, af, &r_xi, &conj_p, kmax0, noise)?;
    // 2. Y removes every mode except the resonant off-diagonal one (and the
    //    k = 0 diagonal, which stays in the constant).
    let rot = Su11Constant::rotation(a.xi);
    let y = solve_homological(&rot, &f1, af, n_trunc, Some(n_star))?;
    // 3. Composite conjugation P e^Y R_{n_* theta/2} applied exactly; the
    //    constant after the rotation is R_{xi - pi n_* alpha}.
    let xi_plus0 = a.xi - PI * n_star as f64 * af;
    let kmax = kmax0 + n_star.abs() + 2;
    let conj_full = |th: f64| {
        p.mul(&y.eval_real(th).exp()).mul(&half_rotation(n_star, th))
    };
    // Two-pass constant extraction: start from the rotation guess, then
    // absorb the measured mean.
    let mut a_plus_mat = rot_mat(xi_plus0);
    for _ in 0..2 {
        let f_try = reconjugate(&a_mat, f, af, &a_plus_mat, &conj_full, kmax, 0.0)?;
        let mean = f_try.coeff(0).real_part();
        let mean_traceless = mean.sub(&Mat2::identity().scale(0.5 * mean.trace()));
        a_plus_mat = a_plus_mat.mul(&mean_traceless.exp());
    }
    let f_plus = reconjugate(&a_mat, f, af, &a_plus_mat, &conj_full, kmax, noise)?;
    let a_plus = Su11Constant::from_mat(&a_plus_mat)?;
    let eps_out = f_plus.analytic_norm(h_plus);
    checks.push(BoundCheck::new(
        "resonant |nu+| <= eps^{15/16} e^{-2 pi |n_*| h} * slack",
        a_plus.nu_abs(),
        eps.powf(15.0 / 16.0) * (-TAU * n_star.abs() as f64 * h).exp() * cfg.slack,
    ));
    checks.push(BoundCheck::new(
        "resonant ||f+||_{h+} <= eps e^{-h+ eps^{-1/(18 tau)}} * slack",
        eps_out,
        eps * (-h_plus * eps.powf(-1.0 / (18.0 * cfg.tau))).exp() * cfg.slack,
    ));
    Ok(ResStep {
        p,
        y,
        rotation_deg: n_star,
        a_plus,
        f_plus,
        eps_in: eps,
        eps_out,
        checks,
    })
}

/// One factor of a composite conjugacy, applied left to right:
/// B(theta) = factors[0](theta) * factors[1](theta) * ...
#[derive(Clone, Debug)]
pub enum ConjFactor {
    Constant(Mat2),
    /// e^{Y(theta)}.
    ExpFourier(FourierMap),
    /// Half-integer rotation R_{n theta / 2} (degree n).
    HalfRotation(i64),
}

/// Composite conjugacy with degree bookkeeping.  For odd total degree the
/// map is 1-antiperiodic (PSL(2,R)-valued); evaluation takes theta raw.
#[derive(Clone, Debug, Default)]
pub struct Conjugacy {
    pub factors: Vec<ConjFactor>,
}

impl Conjugacy {
    pub fn eval(&self, theta: f64) -> Mat2 {
        let mut m = Mat2::identity();
        for f in &self.factors {
            let g = match f {
                ConjFactor::Constant(c) => *c,
                ConjFactor::ExpFourier(y) => y.eval_real(theta).exp(),
                ConjFactor::HalfRotation(n) => half_rotation(*n, theta),
            };
            m = m.mul(&g);
        }
        m
    }

    pub fn degree(&self) -> i64 {
        self.factors
            .iter()
            .map(|f| if let ConjFactor::HalfRotation(n) = f { *n } else { 0 })
            .sum()
    }

    pub fn push(&mut self, f: ConjFactor) {
        self.factors.push(f);
    }

    /// Sup of ||B(theta)|| over a grid (period 2 covers odd degrees).
    pub fn sup_norm(&self, grid: usize) -> f64 {
        (0..grid)
            .map(|i| self.eval(2.0 * i as f64 / grid as f64).op_norm())
            .fold(0.0, f64::max)
    }

    /// Fourier coefficients of one entry on the doubled lattice: entry(theta)
    /// as a function of period 2, coefficient of e^{pi i u theta} for
    /// |u| <= umax.  Integer modes sit at even u.
    pub fn entry_doubled_fft(&self, entry: usize, umax: i64) -> Vec<(i64, C64)> {
        let n = (4 * umax.max(1) + 2) as usize;
        let mut vals = Vec::with_capacity(n);
        for i in 0..n {
            let th = 2.0 * i as f64 / n as f64;
            let m = self.eval(th);
            let v = match entry {
                0 => m.a,
                1 => m.b,
                2 => m.c,
                _ => m.d,
            };
            vals.push(C64::new(v, 0.0));
        }
        // Direct DFT over the doubled period; n is modest here.
        let mut out = Vec::new();
        for u in -umax..=umax {
            let mut acc = C64::new(0.0, 0.0);
            for (i, &v) in vals.iter().enumerate() {
                let th = 2.0 * i as f64 / n as f64;
                acc += v * C64::from_polar(1.0, -PI * u as f64 * th);
            }
            out.push((u, acc / n as f64));
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KamStepRecord {
    pub j: usize,
    pub h: f64,
    pub ln_eps: f64,
    pub constant: Su11Constant,
    pub deg: i64,
    pub resonance: Option<i64>,
    pub y_norm: f64,
    pub conj_sup: f64,
    pub modeled: bool,
    pub checks: Vec<BoundCheck>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KamStatus {
    ConvergedReducible,
    BudgetExhausted,
    Diverged,
}

#[derive(Debug, Serialize)]
pub struct KamTrace {
    pub steps: Vec<KamStepRecord>,
    pub resonant_indices: Vec<i64>,
    pub status: KamStatus,
    pub final_ln_eps: f64,
    pub final_constant: Su11Constant,
    #[serde(skip)]
    pub conjugacy: Conjugacy,
}

/// Log-epsilon below which the iteration switches from measured steps to the
/// quadratic-contraction model (double precision can no longer represent the
/// perturbation faithfully).
const MEASURED_FLOOR_LN: f64 = -27.631021115928547; // ln 1e-12
const CONVERGED_LN: f64 = -69.077552789821368; // ln 1e-30

/// Structured KAM iteration: step schedule h_j - h_{j+1} = (h - h_tilde) /
/// 4^{j+1}, resonance detection per step, measured contraction ledger, and a
/// log-tracked model once the residual is below double-precision resolution.
pub fn kam_iterate(
    a0: &Su11Constant,
    f0: &FourierMap,
    alpha: &Irrational,
    h: f64,
    h_tilde: f64,
    budget: usize,
    cfg: &KamConfig,
) -> Result<KamTrace> {
    if !(h > h_tilde && h_tilde > 0.0) {
        return Err(Error::Invalid("need h > h_tilde > 0".into()));
    }
    if budget > 12 {
        return Err(Error::Invalid("budget capped at 12 (precision-limited)".into()));
    }
    let mut a = *a0;
    let mut f = f0.clone();
    let mut hj = h;
    let mut deg = 0i64;
    let mut steps = Vec::new();
    let mut resonant_indices = Vec::new();
    let mut conjugacy = Conjugacy::default();
    let mut ln_eps = f.analytic_norm(h).max(1e-300).ln();
    let mut modeled = false;
    let mut status = KamStatus::BudgetExhausted;
    if f0.is_empty() {
        return Ok(KamTrace {
            steps,
            resonant_indices,
            status: KamStatus::ConvergedReducible,
            final_ln_eps: f64::NEG_INFINITY,
            final_constant: a,
            conjugacy,
        });
    }
    // Smallness gate, enforced once up front over the full width h - h_tilde.
    {
        let eps0 = f.analytic_norm(h);
        let thr = gate_threshold(a.to_mat().op_norm(), h, h_tilde, cfg);
        if !(eps0 <= thr) {
            return Err(Error::Gate(format!(
                "eps = {eps0:.3e} exceeds gate threshold {thr:.3e}"
            )));
        }
    }
    for j in 0..budget {
        let h_next = hj - (h - h_tilde) / 4f64.powi(j as i32 + 1);
        if modeled || ln_eps < MEASURED_FLOOR_LN {
            // Quadratic-contraction model below the measurement floor; no
            // further resonance can occur (the resonance window eps^{1/15}
            // shrinks below attainable ||2 xi - n alpha|| values).
            modeled = true;
            ln_eps = 2.0 * ln_eps + 4f64.ln();
            steps.push(KamStepRecord {
                j,
                h: h_next,
                ln_eps,
                constant: a,
                deg,
                resonance: None,
                y_norm: 0.0,
                conj_sup: conjugacy.sup_norm(64),
                modeled: true,
                checks: vec![],
            });
            hj = h_next;
            continue;
        }
        let eps = f.analytic_norm(hj);
        if !eps.is_finite() || eps > 1.0 {
            status = KamStatus::Diverged;
            break;
        }
        ln_eps = eps.max(1e-300).ln();
        let n_trunc = trunc_order(eps.max(1e-300), hj, h_next);
        // Only modes the perturbation actually occupies can engage a small
        // divisor; scanning further just finds irrelevant near-divisors.
        let n_scan = f.max_mode().max(1).min(n_trunc);
        let reso = if a.class == ConstantClass::Elliptic {
            detect_resonance_thr(a.xi, alpha, n_scan, driver_resonance_threshold(eps))
        } else {
            None
        };
        let (record, a_next, f_next) = match reso {
            Some(n_star) => {
                let st = resonant_step(&a, &f, n_star, alpha, hj, h_next, cfg)?;
                deg += n_star;
                resonant_indices.push(n_star);
                conjugacy.push(ConjFactor::Constant(st.p));
                conjugacy.push(ConjFactor::ExpFourier(st.y.clone()));
                conjugacy.push(ConjFactor::HalfRotation(n_star));
                (
                    KamStepRecord {
                        j,
                        h: h_next,
                        ln_eps: st.eps_out.max(1e-300).ln(),
                        constant: st.a_plus,
                        deg,
                        resonance: Some(n_star),
                        y_norm: st.y.analytic_norm(h_next),
                        conj_sup: conjugacy.sup_norm(128),
                        modeled: false,
                        checks: st.checks.clone(),
                    },
                    st.a_plus,
                    st.f_plus,
                )
            }
            None => {
                let st = nonresonant_step_inner(&a, &f, alpha, hj, h_next, cfg, false)?;
                conjugacy.push(ConjFactor::ExpFourier(st.y.clone()));
                (
                    KamStepRecord {
                        j,
                        h: h_next,
                        ln_eps: st.eps_out.max(1e-300).ln(),
                        constant: st.a_plus,
                        deg,
                        resonance: None,
                        y_norm: st.y.analytic_norm(h_next),
                        conj_sup: conjugacy.sup_norm(128),
                        modeled: false,
                        checks: st.checks.clone(),
                    },
                    st.a_plus,
                    st.f_plus,
                )
            }
        };
        let prev_ln = ln_eps;
        let mut record = record;
        if record.ln_eps < MEASURED_FLOOR_LN {
            // Measured residual is dominated by FFT/pruning noise; switch to
            // the quadratic-contraction model from here on.
            record.ln_eps = record.ln_eps.min(2.0 * prev_ln + 4f64.ln());
            record.modeled = true;
            modeled = true;
        }
        ln_eps = record.ln_eps;
        steps.push(record);
        a = a_next;
        f = f_next;
        hj = h_next;
        if ln_eps <= CONVERGED_LN {
            // Converged; the remaining budget is spent in the modeled branch
            // so that eps_j stays log-tracked through the full schedule.
            modeled = true;
        }
    }
    if status == KamStatus::BudgetExhausted && ln_eps <= CONVERGED_LN {
        status = KamStatus::ConvergedReducible;
    }
    Ok(KamTrace {
        steps,
        resonant_indices,
        status,
        final_ln_eps: ln_eps,
        final_constant: a,
        conjugacy,
    })
}

/// Output of a rotation-backward step.
#[derive(Clone, Debug)]
pub struct BackwardStep {
    /// Net close-to-identity conjugacy (degree zero), as Fourier data.
    pub conj: FourierMap,
    pub a_plus: Su11Constant,
    pub f_plus: FourierMap,
    pub checks: Vec<BoundCheck>,
}

/// Resonant step followed by a constant normalization and the inverse
/// half-rotation, so the net conjugacy has degree zero and stays close to
/// the identity.  Requires the rotation-number lower-bound certificate
/// ||2 rho - m alpha|| >= gamma e^{-delta |m|} over the scan window and the
/// strip-room gate 2 pi h_plus > delta.
pub fn rotation_backward_step(
    a: &Su11Constant,
    f: &FourierMap,
    n_star: i64,
    alpha: &Irrational,
    h: f64,
    h_plus: f64,
    gamma: f64,
    delta: f64,
    cfg: &KamConfig,
) -> Result<BackwardStep> {
    if TAU * h_plus <= delta {
        return Err(Error::Certificate(format!(
            "strip too narrow for the certificate: 2 pi h+ = {:.4} <= delta = {delta:.4}",
            TAU * h_plus
        )));
    }
    let eps = f.analytic_norm(h).max(1e-300);
    let window = trunc_order(eps, h, h_plus).max(n_star.abs());
    let af = alpha.approx_f64();
    let two_rho = a.xi / PI;
    for m in 1..=window {
        for mm in [m, -m] {
            let d = torus_norm(two_rho - mm as f64 * af);
            let floor = gamma * (-delta * mm.abs() as f64).exp();
            if d < floor {
                return Err(Error::Certificate(format!(
                    "rotation-number certificate violated at m = {mm}: \
                     ||2rho - m alpha|| = {d:.3e} < {floor:.3e}"
                )));
            }
        }
    }
    let st = resonant_step(a, f, n_star, alpha, h, h_plus, cfg)?;
    let mut checks = st.checks.clone();
    // Normalize the post-resonance constant back to a pure rotation.
    let xi_bar = st.a_plus.xi;
    checks.push(BoundCheck::new(
        "backward |xi_bar| >= (1/8) eps^{1/8} e^{-delta |n|} / slack",
        eps.powf(1.0 / 8.0) * (-delta * n_star.abs() as f64).exp() / (8.0 * cfg.slack),
        xi_bar.abs(),
    ));
    let norm = normalize_elliptic(&st.a_plus)?;
    let u_bar = norm.u;
    let a_bar = rot_mat(xi_bar);
    // Undo the degree: conjugate by R_{-n_* theta / 2}.
    let a_mat = a.to_mat();
    let kmax = (st.f_plus.max_mode() + n_star.abs() + 2).max(window);
    let full = |th: f64| {
        st.p
            .mul(&st.y.eval_real(th).exp())
            .mul(&half_rotation(n_star, th))
            .mul(&u_bar)
            .mul(&half_rotation(-n_star, th))
    };
    // New constant: rotate a_bar's angle back by +pi n_* alpha.
    let xi_plus = xi_bar + PI * n_star as f64 * af;
    let mut a_plus_mat = rot_mat(xi_plus);
    let _ = a_bar;
    for _ in 0..2 {
        let f_try = reconjugate(&a_mat, f, af, &a_plus_mat, &full, kmax, 0.0)?;
        let mean = f_try.coeff(0).real_part();
        let mean_traceless = mean.sub(&Mat2::identity().scale(0.5 * mean.trace()));
        a_plus_mat = a_plus_mat.mul(&mean_traceless.exp());
    }
    let noise = 1e-15 * (1.0 + full(0.0).op_norm().powi(2));
    let f_plus = reconjugate(&a_mat, f, af, &a_plus_mat, &full, kmax, noise)?;
    let a_plus = Su11Constant::from_mat(&a_plus_mat)?;
    // Net conjugacy as periodic Fourier data (degree zero).
    let grid = (4 * kmax + 1) as usize;
    let samples: Vec<Mat2c> =
        (0..grid).map(|i| full(i as f64 / grid as f64).to_complex()).collect();
    let mut conj = FourierMap::from_samples(&samples, kmax, 1e-16)?;
    conj.realify();
    let h_eval = (h_plus - delta / TAU).max(h_plus * 0.25);
    let mut dev = conj.clone();
    dev.set(0, dev.coeff(0).sub(&Mat2c::identity()));
    checks.push(BoundCheck::new(
        "backward ||conj - id||_{h+ - delta/2pi} <= eps^{1/4} * slack",
        dev.analytic_norm(h_eval),
        eps.powf(0.25) * cfg.slack,
    ));
    Ok(BackwardStep { conj, a_plus, f_plus, checks })
}

/// Near-constant starting pair for the almost Mathieu cocycle at small
/// coupling: A0 is the free transfer matrix [[E, -1], [1, 0]] (elliptic for
/// |E| < 2) and f0(theta) = log(A0^{-1} S_E^lambda(theta)).
pub fn amo_local_pair(lambda: f64, energy: f64) -> Result<(Su11Constant, FourierMap)> {
    if lambda.abs() > 0.05 {
        return Err(Error::Unsupported(
            "local starting data provided only in the perturbative regime |lambda| <= 0.05"
                .into(),
        ));
    }
    if energy.abs() >= 2.0 {
        return Err(Error::Invalid(
            "free transfer matrix is elliptic only for |E| < 2".into(),
        ));
    }
    let a0 = Mat2::new(energy, -1.0, 1.0, 0.0);
    let a0_inv = a0.inverse()?;
    let grid = 64usize;
    let mut samples = Vec::with_capacity(grid);
    for i in 0..grid {
        let th = i as f64 / grid as f64;
        let s = Mat2::new(energy - 2.0 * lambda * (TAU * th).cos(), -1.0, 1.0, 0.0);
        samples.push(a0_inv.mul(&s).log()?.to_complex());
    }
    let mut f0 = FourierMap::from_samples(&samples, 16, 1e-15)?;
    f0.realify();
    Ok((Su11Constant::from_mat(&a0)?, f0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden() -> Irrational {
        Irrational::golden()
    }

    fn cfg() -> KamConfig {
        KamConfig::for_alpha(&golden())
    }

    #[test]
    fn su11_roundtrip_and_classification() {
        let r = rot_mat(0.37);
        let c = Su11Constant::from_mat(&r).unwrap();
        assert_eq!(c.class, ConstantClass::Elliptic);
        assert!((c.xi - 0.37).abs() < 1e-12, "xi = {}", c.xi);
        assert!(c.nu_abs() < 1e-13);
        let back = c.to_mat();
        assert!(back.sub(&r).op_norm() < 1e-12);

        let hyp = Mat2::new(1.5, 0.0, 0.0, 1.0 / 1.5);
        let ch = Su11Constant::from_mat(&hyp).unwrap();
        assert_eq!(ch.class, ConstantClass::Hyperbolic);
        assert!((ch.mu - 1.5f64.ln()).abs() < 1e-12);
        assert!(ch.to_mat().sub(&hyp).op_norm() < 1e-12);
    }

    #[test]
    fn su11_amo_band_constant_is_elliptic() {
        let a = Mat2::new(0.5, -1.0, 1.0, 0.0); // free transfer, |E| < 2
        let c = Su11Constant::from_mat(&a).unwrap();
        assert_eq!(c.class, ConstantClass::Elliptic);
        // Eigenvalues of A are e^{+-i theta} with 2 cos theta = E.
        let theta = (0.25f64).acos();
        assert!((c.xi.abs() - theta).abs() < 1e-12, "xi = {}", c.xi);
        assert!(c.to_mat().sub(&a).op_norm() < 1e-12);
    }

    #[test]
    fn normalize_elliptic_near_diagonal_bound() {
        // t = 0.1, nu = 0.01: |2 nu / xi| < 1 so ||U - id|| <= |nu/xi|.
        let c0 = Su11Constant {
            t: 0.1,
            nu_re: 0.01,
            nu_im: 0.0,
            class: ConstantClass::Elliptic,
            xi: (0.1f64 * 0.1 - 0.01 * 0.01).sqrt(),
            mu: 0.0,
        };
        let a = Su11Constant::from_mat(&c0.to_mat()).unwrap();
        let n = normalize_elliptic(&a).unwrap();
        assert_eq!(n.regime, NormalizeRegime::NearDiagonal);
        for ck in &n.checks {
            assert!(ck.ok, "{:?}", ck);
        }
        // Conjugation identity: U^{-1} A U = R_xi.
        let lhs = n.u.inverse().unwrap().mul(&a.to_mat()).mul(&n.u);
        assert!(lhs.sub(&rot_mat(a.xi)).op_norm() < 1e-10);
    }

    #[test]
    fn normalize_elliptic_dominated_bound() {
        // t = 0.1, nu = 0.099: xi small, |2 nu/xi| > 1.
        let c0 = Su11Constant {
            t: 0.1,
            nu_re: 0.099,
            nu_im: 0.0,
            class: ConstantClass::Elliptic,
            xi: (0.1f64 * 0.1 - 0.099 * 0.099).sqrt(),
            mu: 0.0,
        };
        let a = Su11Constant::from_mat(&c0.to_mat()).unwrap();
        let n = normalize_elliptic(&a).unwrap();
        assert_eq!(n.regime, NormalizeRegime::Dominated);
        for ck in &n.checks {
            assert!(ck.ok, "{:?}", ck);
        }
    }

    #[test]
    fn normalize_rejects_hyperbolic() {
        let a = Su11Constant::from_mat(&Mat2::new(2.0, 0.0, 0.0, 0.5)).unwrap();
        assert!(normalize_elliptic(&a).is_err());
    }

    #[test]
    fn triangularize_bounds_hold() {
        let c0 = Su11Constant {
            t: 0.2,
            nu_re: 0.15,
            nu_im: 0.11,
            class: ConstantClass::Elliptic,
            xi: 0.0,
            mu: 0.0,
        };
        let a = Su11Constant::from_mat(&c0.to_mat()).unwrap();
        assert_eq!(a.class, ConstantClass::Elliptic);
        let t = triangularize(&a).unwrap();
        for ck in &t.checks {
            assert!(ck.ok, "{:?}", ck);
        }
        // Diagonal input: U' = id up to phase, nu' = 0.
        let d = Su11Constant::rotation(0.31);
        let td = triangularize(&d).unwrap();
        assert!(td.nu_prime.norm() < 1e-12);
    }

    #[test]
    fn detect_resonance_planted_and_clean() {
        let alpha = golden();
        let a = alpha.approx_f64();
        // eps^{1/15} windows only separate modes for very small eps; these
        // values keep the window below the smallest ||k alpha|| in range.
        let eps = 1e-30;
        // Planted: xi = pi * (7 alpha) + pi * eps-ish offset.
        let xi = PI * (7.0 * a).rem_euclid(1.0) + PI * 1e-9;
        assert_eq!(detect_resonance(xi, &alpha, 20, eps), Some(7));
        // Clean: xi far from all n alpha / 2 for small n.
        let xi_clean = PI * 0.147;
        assert_eq!(detect_resonance(xi_clean, &alpha, 8, 1e-60), None);
        // Tie between +n and -n resolves positive: alpha' with symmetric
        // structure is hard to plant exactly; check the scan order instead
        // via an exact double hit at n and -n is impossible for irrational
        // alpha, so check smaller |n| wins.
        let xi2 = PI * (2.0 * a).rem_euclid(1.0);
        assert_eq!(detect_resonance(xi2, &alpha, 20, 1e-45), Some(2));
    }

    #[test]
    fn nonresonant_step_zero_input_is_identity() {
        let a = Su11Constant::rotation(0.17 * TAU);
        let st = nonresonant_step(&a, &FourierMap::new(), &golden(), 0.2, 0.1, &cfg()).unwrap();
        assert!(st.y.is_empty());
        assert!(st.f_plus.is_empty());
        assert!((st.a_plus.xi - a.xi).abs() < 1e-14);
    }

    #[test]
    fn nonresonant_step_contracts_cosine_perturbation() {
        let a = Su11Constant::rotation(0.17 * TAU);
        let f = FourierMap::real_cosine(1, 1e-6, Mat2::new(1.0, 0.3, 0.3, -1.0));
        let st = nonresonant_step(&a, &f, &golden(), 0.2, 0.12, &cfg()).unwrap();
        assert!(st.eps_out <= 1e-9, "eps_out = {:.3e}", st.eps_out);
        for ck in &st.checks {
            assert!(ck.ok, "{:?}", ck);
        }
        // Oracle: direct reconjugation of the step output reproduces the map.
        let am = a.to_mat();
        let apm = st.a_plus.to_mat();
        let alpha = golden().approx_f64();
        for i in 0..17 {
            let th = i as f64 / 17.0;
            let lhs = st.y
                .eval_real(th + alpha)
                .exp()
                .inverse()
                .unwrap()
                .mul(&am)
                .mul(&f.eval_real(th).exp())
                .mul(&st.y.eval_real(th).exp());
            let rhs = apm.mul(&st.f_plus.eval_real(th).exp());
            assert!(lhs.sub(&rhs).op_norm() < 1e-10 * lhs.op_norm());
        }
    }

    #[test]
    fn nonresonant_two_steps_quadratic() {
        let a = Su11Constant::rotation(0.17 * TAU);
        let f = FourierMap::real_cosine(1, 1e-5, Mat2::new(0.8, 0.5, 0.5, -0.8));
        let alpha = golden();
        let c = cfg();
        let eps0 = f.analytic_norm(0.2);
        let st1 = nonresonant_step(&a, &f, &alpha, 0.2, 0.14, &c).unwrap();
        let st2 = nonresonant_step(&st1.a_plus, &st1.f_plus, &alpha, 0.14, 0.1, &c).unwrap();
        // Quadratic contraction twice, down to the ~1e-14 measurement floor.
        assert!(
            st2.eps_out <= (eps0.powi(4) * 1e3).max(2e-14),
            "eps0 = {eps0:.3e}, eps2 = {:.3e}",
            st2.eps_out
        );
    }

    #[test]
    fn resonant_step_exact_resonance_pure_rotation() {
        let alpha = golden();
        let a = alpha.approx_f64();
        let n_star = 3i64;
        let xi = PI * n_star as f64 * a;
        let c = Su11Constant::rotation(xi);
        let st = resonant_step(&c, &FourierMap::new(), n_star, &alpha, 0.2, 0.1, &cfg()).unwrap();
        assert_eq!(st.rotation_deg, n_star);
        assert!(st.a_plus.nu_abs() < 1e-12, "nu+ = {:.3e}", st.a_plus.nu_abs());
        // New angle is xi - pi n alpha = 0 (mod the normalization).
        assert!(torus_norm(st.a_plus.xi / PI) < 1e-10, "xi+ = {}", st.a_plus.xi);
    }

    #[test]
    fn resonant_step_conjugation_identity() {
        let alpha = golden();
        let af = alpha.approx_f64();
        let n_star = 2i64;
        let eps0 = 1e-8f64;
        let xi = PI * (n_star as f64 * af).rem_euclid(1.0) + 0.3 * eps0.powf(1.0 / 15.0);
        let a = Su11Constant::rotation(xi);
        let f = FourierMap::real_cosine(1, eps0, Mat2::new(0.6, 0.7, 0.7, -0.6));
        let st = resonant_step(&a, &f, n_star, &alpha, 0.2, 0.1, &cfg()).unwrap();
        // Exact conjugation identity on a grid of the doubled torus.
        let am = a.to_mat();
        let apm = st.a_plus.to_mat();
        for i in 0..23 {
            let th = 2.0 * i as f64 / 23.0;
            let b_in = st.p.mul(&st.y.eval_real(th).exp()).mul(&half_rotation(n_star, th));
            let b_out =
                st.p.mul(&st.y.eval_real(th + af).exp()).mul(&half_rotation(n_star, th + af));
            let lhs = b_out.inverse().unwrap().mul(&am).mul(&f.eval_real(th).exp()).mul(&b_in);
            let rhs = apm.mul(&st.f_plus.eval_real(th).exp());
            assert!(
                lhs.sub(&rhs).op_norm() < 1e-10 * lhs.op_norm().max(1.0),
                "mismatch at theta = {th}"
            );
        }
        // The resonant off-diagonal is now in the constant and small.
        let bound = eps0.powf(15.0 / 16.0) * (-TAU * n_star.abs() as f64 * 0.2).exp() * 4.0;
        assert!(
            st.a_plus.nu_abs() <= bound * 1e3,
            "nu+ = {:.3e} vs {:.3e}",
            st.a_plus.nu_abs(),
            bound
        );
    }

    #[test]
    fn kam_iterate_perturbative_amo_converges() {
        let alpha = golden();
        let c = cfg();
        let (a0, f0) = amo_local_pair(0.01, 0.5).unwrap();
        let trace = kam_iterate(&a0, &f0, &alpha, 0.15, 0.05, 8, &c).unwrap();
        assert_eq!(trace.status, KamStatus::ConvergedReducible, "{:?}", trace.final_ln_eps);
        // eps decreases monotonically.
        let mut last = f64::INFINITY;
        for s in &trace.steps {
            assert!(s.ln_eps < last, "eps not decreasing at step {}", s.j);
            last = s.ln_eps;
        }
    }

    #[test]
    fn kam_iterate_degree_additivity_with_planted_resonance() {
        let alpha = golden();
        let af = alpha.approx_f64();
        let c = cfg();
        // Constant near the resonance 2 rho = 3 alpha, small perturbation.
        let xi = PI * (3.0 * af).rem_euclid(1.0) + 1e-8;
        let a0 = Su11Constant::rotation(xi);
        // Content at the resonant mode itself so the small divisor is real.
        let f0 = FourierMap::real_cosine(3, 1e-7, Mat2::new(0.5, 0.8, 0.8, -0.5));
        let trace = kam_iterate(&a0, &f0, &alpha, 0.2, 0.06, 8, &c).unwrap();
        assert_eq!(trace.resonant_indices, vec![3]);
        let total: i64 = trace.resonant_indices.iter().sum();
        assert_eq!(trace.conjugacy.degree(), total);
        let last = trace.steps.last().unwrap();
        assert_eq!(last.deg, 3);
    }

    #[test]
    fn backward_step_certificate_gates() {
        let alpha = golden();
        let af = alpha.approx_f64();
        let c = cfg();
        let n_star = 3i64;
        let off = 1e-7;
        let xi = PI * ((n_star as f64 * af).rem_euclid(1.0) + off);
        let a = Su11Constant::rotation(xi);
        let f = FourierMap::real_cosine(1, 1e-8, Mat2::new(0.4, 0.9, 0.9, -0.4));
        // delta > 2 pi h: certificate error.
        let err = rotation_backward_step(&a, &f, n_star, &alpha, 0.2, 0.1, 1e-9, 10.0, &c);
        assert!(matches!(err, Err(Error::Certificate(_))), "{err:?}");
        // Valid certificate: the planted resonance distance is off*pi-ish at
        // m = n_star; pick gamma e^{-delta m} below it everywhere.
        let st =
            rotation_backward_step(&a, &f, n_star, &alpha, 0.2, 0.1, 1e-9, 0.5, &c).unwrap();
        // Net conjugacy has no rotation factor: close to identity.
        let mut dev = st.conj.clone();
        dev.set(0, dev.coeff(0).sub(&Mat2c::identity()));
        assert!(dev.analytic_norm(0.02) < 0.5, "{}", dev.analytic_norm(0.02));
        // Conjugation identity for the net factor.
        let am = a.to_mat();
        let apm = st.a_plus.to_mat();
        for i in 0..13 {
            let th = i as f64 / 13.0;
            let lhs = st
                .conj
                .eval_real(th + af)
                .inverse()
                .unwrap()
                .mul(&am)
                .mul(&f.eval_real(th).exp())
                .mul(&st.conj.eval_real(th));
            let rhs = apm.mul(&st.f_plus.eval_real(th).exp());
            assert!(lhs.sub(&rhs).op_norm() < 1e-8, "theta = {th}");
        }
    }

    #[test]
    fn conjugacy_degree_and_doubled_fft() {
        let mut b = Conjugacy::default();
        b.push(ConjFactor::HalfRotation(4));
        assert_eq!(b.degree(), 4);
        // R_{4 theta / 2} = rot(2 pi theta): entries are single modes at
        // u = +-4 on the doubled lattice (e^{+-2 pi i theta} = e^{pi i 4 theta / 2}).
        let rows = b.entry_doubled_fft(0, 8);
        for (u, v) in rows {
            if u.abs() == 4 {
                assert!((v.norm() - 0.5).abs() < 1e-10, "u = {u}, |v| = {}", v.norm());
            } else {
                assert!(v.norm() < 1e-10, "u = {u}, |v| = {}", v.norm());
            }
        }
    }
}
