//! Stratified growth of transfer-matrix norms in the subcritical regime:
//! the piecewise envelope built from rotation-number resonances, measured
//! growth reports against it, and the exact constant-cocycle norm laws.

use serde::Serialize;

use crate::arithmetic::{rational_from_f64, Irrational};
use crate::cocycle::{growth_profile, rotation_number, CocycleMap, RotationEstimate};
use crate::error::{Error, Result};
use crate::kam::{ConstantClass, Su11Constant};
use crate::mat2::Mat2;

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Default half-width of the verdict band on measured exponents.  The
/// envelope statement is asymptotic with polylog corrections which are
/// material at reachable n, so the band is wide.
pub const DEFAULT_EPS_TOL: f64 = 0.2;

/// Piecewise growth envelope attached to a resonance ladder of the rotation
/// number: wave numbers ell_j with depths eta_j (infinite for an exact
/// resonance), coupling scale h_lambda = -ln lambda, and per-j validity
/// windows [e^{eps h |ell_j| / 256}, e^{eps h |ell_{j+1}| / 256}] (the last
/// window is unbounded).
#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeSpec {
    pub ell: Vec<i64>,
    /// eta_j = -ln ||2 rho - ell_j alpha|| / |ell_j|; f64::INFINITY encodes
    /// an exact resonance.
    pub eta: Vec<f64>,
    pub h_lambda: f64,
    pub eps: f64,
    pub eps0: f64,
    /// Per-j validity range; the upper end of the last window is infinite.
    pub windows: Vec<(f64, f64)>,
    pub rho: f64,
    pub alpha: f64,
}

impl EnvelopeSpec {
    /// Build the envelope data from the resonance scan of `rho` with respect
    /// to `alpha` (wave numbers up to `k_max`).
    pub fn build(
        lambda: f64,
        alpha: &Irrational,
        rho: f64,
        eps: f64,
        eps0: f64,
        k_max: i64,
    ) -> Result<EnvelopeSpec> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Invalid("envelope requires 0 < lambda < 1".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::Invalid("envelope requires eps > 0".into()));
        }
        let seq = alpha.resonances(&rational_from_f64(rho)?, eps0, k_max)?;
        let ell: Vec<i64> = seq.entries.iter().map(|r| r.ell).collect();
        // eta on the sine scale, sin(2 pi ||2 rho - ell alpha||) = e^{-eta |ell|}:
        // this normalization makes the oscillation branch reduce to the
        // growth branch at the switch scale e^{eta |ell|}.
        let eta: Vec<f64> = seq
            .entries
            .iter()
            .map(|r| match r.log_norm {
                None => f64::INFINITY,
                Some(ln_d) => {
                    let d = ln_d.exp();
                    let s = if d < 0.25 { (TAU * d).sin() } else { 1.0 - 1e-12 };
                    -s.ln() / r.ell.abs() as f64
                }
            })
            .collect();
        EnvelopeSpec::from_parts(lambda, alpha.approx_f64(), rho, eps, eps0, ell, eta)
    }

    /// Assemble from explicit resonance data (used for planted instances
    /// where ell_1, eta_1 are known by construction).
    pub fn from_parts(
        lambda: f64,
        alpha: f64,
        rho: f64,
        eps: f64,
        eps0: f64,
        ell: Vec<i64>,
        eta: Vec<f64>,
    ) -> Result<EnvelopeSpec> {
        if ell.len() != eta.len() {
            return Err(Error::Invalid("ell/eta length mismatch".into()));
        }
        let h_lambda = -lambda.ln();
        for (l, e) in ell.iter().zip(&eta) {
            if *l == 0 {
                return Err(Error::Invalid("resonance wave number 0".into()));
            }
            // Stored resonances are at least eps0-strong; the floor allows
            // for the sine-scale normalization, which shifts eta down by at
            // most ln(2 pi) / |ell| relative to the plain torus distance.
            let floor = eps0 * (1.0 - 1e-9) - TAU.ln() / l.abs() as f64;
            if *e < floor {
                return Err(Error::Invalid(format!(
                    "resonance ell = {l} has eta = {e} below eps0 = {eps0}"
                )));
            }
        }
        let mut windows = Vec::with_capacity(ell.len());
        for j in 0..ell.len() {
            let lo = (eps * h_lambda * ell[j].abs() as f64 / 256.0).exp();
            let hi = if j + 1 < ell.len() {
                (eps * h_lambda * ell[j + 1].abs() as f64 / 256.0).exp()
            } else {
                f64::INFINITY
            };
            windows.push((lo, hi));
        }
        // Increasing |ell_j| makes the windows ordered and disjoint.
        for w in windows.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(Error::Invalid("envelope windows overlap".into()));
            }
        }
        Ok(EnvelopeSpec { ell, eta, h_lambda, eps, eps0, windows, rho, alpha })
    }

    fn window_index(&self, n: i64) -> Result<usize> {
        let a = (n.abs()) as f64;
        for (j, (lo, hi)) in self.windows.iter().enumerate() {
            if a >= *lo && a < *hi {
                return Ok(j);
            }
            if a < *lo {
                let prev = if j == 0 { 0.0 } else { self.windows[j - 1].1 };
                return Err(Error::Invalid(format!(
                    "n = {n} lies in the envelope gap ({prev:.6e}, {lo:.6e})"
                )));
            }
        }
        Err(Error::Invalid(format!(
            "n = {n} lies beyond all envelope windows"
        )))
    }

    /// Growth-branch value 1 - |ell_j| h / ln n, clamped to [0, 1].
    fn growth_branch(&self, j: usize, ln_n: f64) -> f64 {
        (1.0 - self.ell[j].abs() as f64 * self.h_lambda / ln_n).clamp(0.0, 1.0)
    }

    /// Oscillation-branch value
    /// (ln |sin 2 pi n (rho - ell_j alpha / 2)| + |ell_j| (eta_j - h)) / ln n,
    /// clamped to [0, 1].
    fn oscillation_branch(&self, j: usize, n: i64, ln_n: f64) -> f64 {
        let arg = n as f64 * (self.rho - 0.5 * self.ell[j] as f64 * self.alpha);
        let s = (TAU * arg.rem_euclid(1.0)).sin().abs();
        let l = self.ell[j].abs() as f64;
        ((s.ln() + l * (self.eta[j] - self.h_lambda)) / ln_n).clamp(0.0, 1.0)
    }

    /// The two-branch envelope f(n) in [0, 1]: growth branch below the
    /// switch scale e^{eta_j |ell_j|}, oscillation branch beyond.
    pub fn envelope_f(&self, n: i64) -> Result<f64> {
        if n == 0 {
            return Err(Error::Invalid("envelope_f needs n != 0".into()));
        }
        let j = self.window_index(n)?;
        let a = n.abs() as f64;
        let ln_n = a.ln();
        if ln_n <= 0.0 {
            return Ok(0.0);
        }
        // Exact resonance (eta infinite): growth branch only, rising to 1.
        if self.eta[j].is_infinite() || ln_n < self.eta[j] * self.ell[j].abs() as f64 {
            Ok(self.growth_branch(j, ln_n))
        } else {
            Ok(self.oscillation_branch(j, n, ln_n))
        }
    }

    /// Peak value 1 - h / eta_j of window j, attained at n = e^{eta_j |ell_j|}.
    pub fn peak(&self, j: usize) -> f64 {
        (1.0 - self.h_lambda / self.eta[j]).max(0.0)
    }

    /// Switch scale e^{eta_j |ell_j|} of window j.
    pub fn switch_scale(&self, j: usize) -> f64 {
        (self.eta[j] * self.ell[j].abs() as f64).exp()
    }
}

/// One measured sample of a growth report.
#[derive(Clone, Debug, Serialize)]
pub struct ReportRow {
    pub n: i64,
    /// ln ||U_E(n)||_HS / ln n.
    pub exponent: f64,
    /// Operator-norm exponent (cross-check; the HS norm is primary).
    pub exponent_op: f64,
    /// Envelope value f(n) (0 outside all windows).
    pub f: f64,
    /// Measured exponent within [f - eps_tol, f + eps_tol].
    pub verdict: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub rows: Vec<ReportRow>,
    pub envelope: EnvelopeSpec,
    pub rho: RotationEstimate,
    pub eps_tol: f64,
}

impl GrowthReport {
    pub fn max_exponent(&self) -> f64 {
        self.rows.iter().map(|r| r.exponent).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Log-spaced checkpoint ladder 2..n_max (all distinct, sorted).
fn checkpoints(n_max: i64, count: usize) -> Vec<i64> {
    let mut out = Vec::with_capacity(count);
    let lo = 2f64.ln();
    let hi = (n_max as f64).ln();
    for i in 0..count {
        let x = (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp().round() as i64;
        out.push(x.clamp(2, n_max));
    }
    out.dedup();
    out
}

/// Measured transfer-matrix growth of the almost Mathieu cocycle at energy
/// `energy` against the resonance envelope of the measured rotation number.
/// U_E(n) is the fundamental solution with identity initial data, evaluated
/// along the orbit of theta = 0; the Hilbert-Schmidt norm is primary.
pub fn growth_report(
    lambda: f64,
    alpha: &Irrational,
    energy: f64,
    eps: f64,
    eps0: f64,
    n_max: i64,
) -> Result<GrowthReport> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Invalid("growth_report requires 0 < lambda < 1".into()));
    }
    if n_max < 16 || n_max > 10_000_000 {
        return Err(Error::Invalid("growth_report requires 16 <= N <= 1e7".into()));
    }
    let af = alpha.approx_f64();
    let map = CocycleMap::amo(lambda, energy);
    // Garbage-in protection: the resonance ladder is only trustworthy when
    // rho is resolved below the smallest resonance distance it claims.  The
    // rotation run is lengthened until that holds or the iterate budget is
    // exhausted.
    let mut n_rot = n_max.clamp(10_000, 500_000);
    let (rho, envelope) = loop {
        let rho = rotation_number(&map, af, n_rot, 0.0)?;
        let envelope = EnvelopeSpec::build(lambda, alpha, rho.value, eps, eps0, 256)?;
        let gap = envelope
            .ell
            .iter()
            .zip(&envelope.eta)
            .map(|(l, e)| (-e * l.abs() as f64).exp())
            .fold(f64::INFINITY, f64::min);
        if rho.error_bar <= gap {
            break (rho, envelope);
        }
        if n_rot >= 4_000_000 {
            return Err(Error::Certificate(format!(
                "rotation-number error bar {:.3e} exceeds the smallest resonance \
                 distance {:.3e} even at {n_rot} iterates; the resonance ladder \
                 cannot be certified for this energy",
                rho.error_bar, gap
            )));
        }
        n_rot = (n_rot * 8).min(4_000_000);
    };
    let cps = checkpoints(n_max, 240);
    let profile = growth_profile(&map, af, 0.0, &cps)?;
    let rows = profile
        .rows
        .iter()
        .map(|r| {
            let ln_n = (r.n as f64).ln();
            let f = envelope.envelope_f(r.n).unwrap_or(0.0);
            let exponent = r.ln_hs / ln_n;
            ReportRow {
                n: r.n,
                exponent,
                exponent_op: r.ln_op / ln_n,
                f,
                verdict: (exponent - f).abs() <= DEFAULT_EPS_TOL,
            }
        })
        .collect();
    Ok(GrowthReport { rows, envelope, rho, eps_tol: DEFAULT_EPS_TOL })
}

/// Regimes of constant elliptic cocycle growth over a window of times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Regime {
    /// |nu / xi| < 1/2: the norm stays O(1).
    Flat,
    /// n below ~1/|xi|: the norm grows like n |nu| + 1.
    Linear,
    /// Beyond 1/|xi|: oscillation sqrt(1 + 2 sin^2(n xi) |nu/xi|^2).
    Oscillatory,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegimePrediction {
    pub regime: Regime,
    /// (n, predicted norm scale) across the window.
    pub values: Vec<(i64, f64)>,
    pub nu_over_xi: f64,
}

/// Predicted norm profile of the constant cocycle A^n over the window,
/// following the three-regime law.  The prediction scale is the
/// normalized Hilbert-Schmidt norm ||A^n||_HS / sqrt(2).
pub fn regime_predict(
    constant: &Su11Constant,
    window: (i64, i64),
) -> Result<RegimePrediction> {
    if constant.class != ConstantClass::Elliptic {
        return Err(Error::Unsupported(format!(
            "regime_predict needs an elliptic constant, got {:?}",
            constant.class
        )));
    }
    let (n_low, n_high) = window;
    if !(n_low >= 1 && n_high >= n_low) {
        return Err(Error::Invalid("regime window must satisfy 1 <= low <= high".into()));
    }
    let xi = constant.xi;
    let nu = constant.nu_abs();
    let ratio = nu / xi.abs();
    let n_turn = 1.0 / xi.abs();
    let regime = if ratio < 0.5 {
        Regime::Flat
    } else if (n_high as f64) <= n_turn {
        Regime::Linear
    } else {
        Regime::Oscillatory
    };
    let mut values = Vec::new();
    let count = 200usize.min((n_high - n_low + 1) as usize);
    for i in 0..count {
        let n = n_low + ((n_high - n_low) as f64 * i as f64 / (count - 1).max(1) as f64) as i64;
        let v = match regime {
            Regime::Flat => 1.0,
            Regime::Linear => n as f64 * nu + 1.0,
            Regime::Oscillatory => {
                let s = (n as f64 * xi).sin();
                (1.0 + 2.0 * s * s * ratio * ratio).sqrt()
            }
        };
        values.push((n, v));
    }
    Ok(RegimePrediction { regime, values, nu_over_xi: ratio })
}

/// Exact Hilbert-Schmidt norm of the n-th power of an elliptic constant:
/// ||A^n||_HS = sqrt(2 + 4 sin^2(n xi) |nu / xi|^2).
pub fn hs_law(constant: &Su11Constant, n: i64) -> Result<f64> {
    if constant.class != ConstantClass::Elliptic {
        return Err(Error::Unsupported("hs_law needs an elliptic constant".into()));
    }
    let r = constant.nu_abs() / constant.xi.abs();
    let s = (n as f64 * constant.xi).sin();
    Ok((2.0 + 4.0 * s * s * r * r).sqrt())
}

/// Elliptic constant from su(1,1) coordinates (t, nu); errors unless
/// t^2 > |nu|^2.
pub fn elliptic_constant(t: f64, nu_re: f64, nu_im: f64) -> Result<Su11Constant> {
    let disc = t * t - (nu_re * nu_re + nu_im * nu_im);
    if !(disc > 0.0) {
        return Err(Error::Invalid(format!(
            "not elliptic: t^2 - |nu|^2 = {disc}"
        )));
    }
    Ok(Su11Constant {
        t,
        nu_re,
        nu_im,
        class: ConstantClass::Elliptic,
        xi: t.signum() * disc.sqrt(),
        mu: 0.0,
    })
}

/// Hilbert-Schmidt norms of A^1 .. A^{n_max} by running multiplication.
pub fn hs_norms_of_powers(a: &Mat2, n_max: i64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max as usize);
    let mut p = *a;
    for _ in 0..n_max {
        out.push(p.hs_norm());
        p = p.mul(a);
    }
    out
}

/// Energy with a prescribed rotation number, by bisection on the monotone
/// map E -> rho(E) of the almost Mathieu family.
pub fn energy_for_rho(
    lambda: f64,
    alpha: f64,
    rho_target: f64,
    n_rot: i64,
) -> Result<f64> {
    if !(0.0..=0.5).contains(&rho_target) {
        return Err(Error::Invalid("rho target must be in [0, 1/2]".into()));
    }
    let rho_at = |e: f64| -> Result<f64> {
        Ok(rotation_number(&CocycleMap::amo(lambda, e), alpha, n_rot, 0.0)?.value)
    };
    let mut lo = -2.0 - 2.0 * lambda.abs() - 0.1;
    let mut hi = 2.0 + 2.0 * lambda.abs() + 0.1;
    let (r_lo, r_hi) = (rho_at(lo)?, rho_at(hi)?);
    let increasing = r_hi > r_lo;
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        let r = rho_at(mid)?;
        let below = if increasing { r < rho_target } else { r > rho_target };
        if below {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Deterministic pseudo-random stream in [-1, 1] for test instances.
pub fn seeded_unit(seed: u64, i: u64) -> f64 {
    let mut s = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(i.wrapping_mul(1442695040888963407));
    s ^= s >> 33;
    s = s.wrapping_mul(0xff51afd7ed558ccd);
    s ^= s >> 33;
    (s % 1_000_003) as f64 / 500_001.5 - 1.0
}
