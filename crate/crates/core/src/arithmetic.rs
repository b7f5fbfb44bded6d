//! Exact arithmetic for quasiperiodic frequencies.
//!
//! A frequency is constructed from a finite continued-fraction expansion
//! `alpha = [0; a1, a2, ..., aN]` and identified with its deepest convergent
//! `pN/qN`, kept as an exact rational.  All torus-distance queries are
//! answered in exact rational arithmetic, with an explicit precision guard:
//! any continuation of the expansion lies within `1/qN^2` of the stored
//! value, so a query at wave number `k` carries an absolute uncertainty of at
//! most `|k|/qN^2`.  A query whose answer is not much larger than that
//! uncertainty is refused with a precision error instead of being answered
//! incorrectly.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

/// Hard cap on continued-fraction terms (the default budget is lower).
pub const MAX_CF_TERMS: usize = 4096;
/// Default number of continued-fraction terms used by the convenience
/// constructors.
pub const DEFAULT_CF_TERMS: usize = 128;
/// Default number of decimal digits used when printing high-precision values.
pub const DEFAULT_DIGITS: usize = 256;

/// Margin factor for the precision guard: an exact rational distance is
/// trusted only if it exceeds the alpha-uncertainty by this factor.
const GUARD_FACTOR: u64 = 100_000_000; // 1e8

/// Distance to the nearest integer for a double.
pub fn torus_norm(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// Exact distance to the nearest integer for a rational.
pub fn torus_norm_rational(x: &BigRational) -> BigRational {
    let fl = x.floor();
    let frac = x - &fl;
    let one_minus = BigRational::one() - &frac;
    if frac <= one_minus {
        frac
    } else {
        one_minus
    }
}

/// Natural log of a positive rational, computed from the bit lengths so it
/// never overflows for huge numerators/denominators.
pub fn big_ln(x: &BigRational) -> f64 {
    assert!(x.is_positive(), "big_ln requires a positive rational");
    big_ln_int(x.numer()) - big_ln_int(x.denom())
}

fn big_ln_int(n: &BigInt) -> f64 {
    let bits = n.bits();
    if bits <= 53 {
        return n.to_f64().expect("small BigInt to f64").ln();
    }
    let shift = bits - 53;
    let top: BigInt = n >> shift;
    top.to_f64().expect("53-bit BigInt to f64").ln() + shift as f64 * std::f64::consts::LN_2
}

/// Rational to f64; falls back to exp(ln) for values outside the direct
/// conversion range (keeps ~1e-13 relative accuracy even for tiny values).
fn unit_ratio_to_f64(x: &BigRational) -> f64 {
    if x.is_zero() {
        return 0.0;
    }
    match x.to_f64() {
        Some(v) if v.is_finite() && v != 0.0 => v,
        _ => big_ln(x).exp(),
    }
}

/// Exact rational equal to the given double (doubles are binary rationals).
pub fn rational_from_f64(x: f64) -> Result<BigRational> {
    if !x.is_finite() {
        return Err(Error::Invalid(format!("cannot convert {x} to a rational")));
    }
    Ok(BigRational::from_float(x).expect("finite f64 to rational"))
}

/// A quasiperiodic frequency, identified with a finite continued fraction.
#[derive(Clone, Debug)]
pub struct Irrational {
    cf: Vec<u64>,
    /// Convergents p_n/q_n for n = 1..=N (p_1/q_1 = 1/a1).
    conv: Vec<(BigInt, BigInt)>,
    /// Exact stored value: the deepest convergent.
    value: BigRational,
    approx: f64,
}

/// Finite-K estimate of the exponent beta(alpha) along denominators.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BetaEstimate {
    pub value: f64,
    /// Denominator achieving the maximum.
    pub at_q: u64,
    /// Number of convergents that entered the scan.
    pub terms_used: usize,
}

/// Finite-K estimate of the rotation-resonance exponent delta(alpha, rho).
#[derive(Clone, Debug, Serialize)]
pub enum DeltaEstimate {
    /// 2*rho = m*alpha (mod 1) holds exactly in rational arithmetic.
    ExactResonance { m: i64 },
    Finite { value: f64, at_k: i64 },
}

/// One resonance of a rotation number with respect to a frequency.
#[derive(Clone, Debug, Serialize)]
pub struct Resonance {
    pub ell: i64,
    /// ln || 2 rho - ell alpha ||; None encodes an exact resonance (norm 0).
    pub log_norm: Option<f64>,
    /// Exponent  -log_norm / |ell|; None for an exact resonance (infinite).
    pub eta: Option<f64>,
}

/// Ordered resonance sequence 0 < |l1| < |l2| < ...
#[derive(Clone, Debug, Default, Serialize)]
pub struct ResonanceSeq {
    pub entries: Vec<Resonance>,
    /// Threshold exponent used in the selection.
    pub eps0: f64,
    /// Scan radius.
    pub scan_k: i64,
}

impl Irrational {
    /// Build a frequency from continued-fraction terms `[a1, a2, ...]`,
    /// all >= 1; the value represented is `1/(a1 + 1/(a2 + ...))`.
    pub fn from_cf(cf: &[u64]) -> Result<Irrational> {
        if cf.len() < 2 {
            return Err(Error::Invalid(
                "need at least two continued-fraction terms".into(),
            ));
        }
        if cf.len() > MAX_CF_TERMS {
            return Err(Error::Precision(format!(
                "continued fraction longer than the hard cap {MAX_CF_TERMS}"
            )));
        }
        if cf.iter().any(|&a| a == 0) {
            return Err(Error::Invalid("continued-fraction terms must be >= 1".into()));
        }
        // p_{-1}/q_{-1} = 1/0, p_0/q_0 = 0/1 for [0; a1, a2, ...]
        let mut p_prev = BigInt::one();
        let mut q_prev = BigInt::zero();
        let mut p = BigInt::zero();
        let mut q = BigInt::one();
        let mut conv = Vec::with_capacity(cf.len());
        for &a in cf {
            let a = BigInt::from(a);
            let p_next = &a * &p + &p_prev;
            let q_next = &a * &q + &q_prev;
            p_prev = std::mem::replace(&mut p, p_next);
            q_prev = std::mem::replace(&mut q, q_next);
            conv.push((p.clone(), q.clone()));
        }
        let value = BigRational::new(p.clone(), q.clone());
        let approx = unit_ratio_to_f64(&value);
        let out = Irrational { cf: cf.to_vec(), conv, value, approx };
        out.check_invariants()?;
        Ok(out)
    }

    /// Golden-type frequency (all CF terms 1), (sqrt(5)-1)/2 at full depth.
    pub fn golden() -> Irrational {
        Irrational::from_cf(&vec![1; DEFAULT_CF_TERMS]).expect("golden CF")
    }

    /// Silver-type frequency (all CF terms 2), sqrt(2)-1 at full depth.
    pub fn silver() -> Irrational {
        Irrational::from_cf(&vec![2; DEFAULT_CF_TERMS]).expect("silver CF")
    }

    fn check_invariants(&self) -> Result<()> {
        // Recurrence and alternating determinant identity, exactly.
        for n in 1..self.conv.len() {
            let (ref pn, ref qn) = self.conv[n];
            let (ref pm, ref qm) = self.conv[n - 1];
            let det = pn * qm - pm * qn;
            let expect = if n % 2 == 0 { BigInt::one() } else { -BigInt::one() };
            if det != expect {
                return Err(Error::Diagnostic(format!(
                    "convergent determinant identity failed at level {n}"
                )));
            }
        }
        // Best-approximation inequality ||q_n alpha|| <= 1/q_{n+1}, strict
        // except at the top level where the stored rational value makes it
        // an exact equality.
        for n in 0..self.conv.len() - 1 {
            let (_, ref qn) = self.conv[n];
            let (_, ref qn1) = self.conv[n + 1];
            let d = torus_norm_rational(&(&self.value * qn));
            let bound = BigRational::new(BigInt::one(), qn1.clone());
            let bad = if n + 2 == self.conv.len() { d > bound } else { d >= bound };
            if bad {
                return Err(Error::Diagnostic(format!(
                    "best-approximation inequality failed at level {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn cf(&self) -> &[u64] {
        &self.cf
    }

    pub fn convergents(&self) -> &[(BigInt, BigInt)] {
        &self.conv
    }

    /// Denominators that fit in u64 (all of them for moderate CFs).
    pub fn denominators_u64(&self) -> Vec<u64> {
        self.conv.iter().filter_map(|(_, q)| q.to_u64()).collect()
    }

    pub fn approx_f64(&self) -> f64 {
        self.approx
    }

    pub fn value(&self) -> &BigRational {
        &self.value
    }

    /// Decimal expansion with the requested number of digits after the point.
    pub fn decimal(&self, digits: usize) -> String {
        let ten = BigInt::from(10u32);
        let scale = num_traits::pow(ten, digits);
        let scaled: BigInt = (self.value.numer() * &scale) / self.value.denom();
        let s = scaled.to_string();
        let s = format!("{:0>width$}", s, width = digits);
        format!("0.{s}")
    }

    fn qn_last(&self) -> &BigInt {
        &self.conv.last().expect("nonempty convergents").1
    }

    /// Absolute uncertainty bound for a distance query with alpha-coefficient
    /// `coeff`: any continuation of the CF moves the answer by at most this.
    fn uncertainty(&self, coeff: &BigInt) -> BigRational {
        let q = self.qn_last();
        BigRational::new(coeff.abs(), q * q)
    }

    /// Exact guarded distance ||x0 + coeff * alpha|| as a rational.
    /// Returns the exact-zero case as Ok(None-like zero); callers decide.
    fn guarded_dist(&self, x0: &BigRational, coeff: i64) -> Result<BigRational> {
        let c = BigInt::from(coeff);
        let expr = x0 + &self.value * BigRational::from_integer(c.clone());
        let d = torus_norm_rational(&expr);
        if d.is_zero() {
            return Ok(d); // exact; uncertainty applies to interpretation, not to exactness
        }
        let unc = self.uncertainty(&c);
        if &d < &(unc * BigRational::from_integer(BigInt::from(GUARD_FACTOR))) {
            return Err(Error::Precision(format!(
                "torus distance at coefficient {coeff} is too small to certify \
                 at this continued-fraction depth"
            )));
        }
        Ok(d)
    }

    /// ||k * alpha||, guaranteed to at least 1e-8 relative accuracy with
    /// respect to any continuation of the stored continued fraction.
    pub fn knorm(&self, k: i64) -> Result<f64> {
        if k == 0 {
            return Err(Error::Invalid("knorm requires k != 0".into()));
        }
        let d = self.guarded_dist(&BigRational::zero(), k)?;
        if d.is_zero() {
            return Err(Error::Precision(format!(
                "k = {k} hits the stored convergent exactly; increase the CF depth"
            )));
        }
        Ok(unit_ratio_to_f64(&d))
    }

    /// ln ||k * alpha||, safe for distances far below f64 range.
    pub fn knorm_ln(&self, k: i64) -> Result<f64> {
        if k == 0 {
            return Err(Error::Invalid("knorm requires k != 0".into()));
        }
        let d = self.guarded_dist(&BigRational::zero(), k)?;
        if d.is_zero() {
            return Err(Error::Precision(format!(
                "k = {k} hits the stored convergent exactly; increase the CF depth"
            )));
        }
        Ok(big_ln(&d))
    }

    /// Finite-K estimate of beta(alpha) = limsup_n ln q_{n+1} / q_n, evaluated
    /// as max over convergent denominators q_n <= K of -ln||q_n alpha|| / q_n.
    pub fn beta_estimate(&self, k_max: u64) -> Result<BetaEstimate> {
        let kb = BigInt::from(k_max);
        let mut best: Option<(f64, u64)> = None;
        let mut used = 0usize;
        // The last convergent is the stored value itself (distance zero), so
        // it never enters; the guard below rejects any level whose distance
        // is not certified.
        for (_, q) in self.conv.iter().take(self.conv.len().saturating_sub(1)) {
            if q > &kb {
                break;
            }
            let qi = q.to_i64().ok_or_else(|| {
                Error::Precision("denominator exceeds i64 in beta scan".into())
            })?;
            let ln_d = self.knorm_ln(qi)?;
            let q_f = q.to_f64().expect("q fits f64 via i64");
            let cand = -ln_d / q_f;
            used += 1;
            if best.map_or(true, |(b, _)| cand > b) {
                best = Some((cand, qi as u64));
            }
        }
        let (value, at_q) =
            best.ok_or_else(|| Error::Invalid("no convergent denominator <= K".into()))?;
        Ok(BetaEstimate { value, at_q, terms_used: used })
    }

    /// Finite-K estimate of delta(alpha, rho) = limsup -ln||2 rho + k alpha||/|k|,
    /// scanning 1 <= |k| <= K over both signs.  An exact relation
    /// 2 rho = m alpha (mod 1) is reported as a sentinel, not as a float.
    pub fn delta_estimate(&self, rho: &BigRational, k_max: i64) -> Result<DeltaEstimate> {
        if k_max < 1 {
            return Err(Error::Invalid("delta_estimate requires K >= 1".into()));
        }
        let two_rho = rho * BigRational::from_integer(BigInt::from(2));
        let mut best: Option<(f64, i64)> = None;
        for a in 1..=k_max {
            for k in [a, -a] {
                let d = self.guarded_dist(&two_rho, k)?;
                if d.is_zero() {
                    return Ok(DeltaEstimate::ExactResonance { m: -k });
                }
                let cand = -big_ln(&d) / a as f64;
                if best.map_or(true, |(b, _)| cand > b) {
                    best = Some((cand, k));
                }
            }
        }
        let (value, at_k) = best.expect("k_max >= 1 scanned");
        Ok(DeltaEstimate::Finite { value, at_k })
    }

    /// Resonance sequence of a rotation number: wave numbers `l` with
    /// ||2 rho - l alpha|| <= exp(-eps0 |l|) that also realize the running
    /// minimum of ||2 rho - m alpha|| over |m| <= |l| (m = 0 included).
    pub fn resonances(
        &self,
        rho: &BigRational,
        eps0: f64,
        k_max: i64,
    ) -> Result<ResonanceSeq> {
        if eps0 <= 0.0 {
            return Err(Error::Invalid("resonances requires eps0 > 0".into()));
        }
        if k_max < 1 {
            return Err(Error::Invalid("resonances requires K >= 1".into()));
        }
        let two_rho = rho * BigRational::from_integer(BigInt::from(2));
        // Running minimum starts from m = 0.
        let mut run_min = torus_norm_rational(&two_rho);
        let mut entries = Vec::new();
        let mut exact_hit = false;
        for a in 1..=k_max {
            if exact_hit {
                break;
            }
            for l in [a, -a] {
                let d = self.guarded_dist(&two_rho, -l)?; // ||2rho - l alpha||
                let is_exact = d.is_zero();
                let ln_d = if is_exact { f64::NEG_INFINITY } else { big_ln(&d) };
                let qualifies = d <= run_min && ln_d <= -eps0 * a as f64;
                if d < run_min {
                    run_min = d;
                }
                if qualifies {
                    entries.push(Resonance {
                        ell: l,
                        log_norm: if is_exact { None } else { Some(ln_d) },
                        eta: if is_exact { None } else { Some(-ln_d / a as f64) },
                    });
                    if is_exact {
                        // Everything after an exact resonance is formally
                        // infinitely deep; stop the scan here.
                        exact_hit = true;
                        break;
                    }
                }
            }
        }
        Ok(ResonanceSeq { entries, eps0, scan_k: k_max })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_convergents_are_fibonacci() {
        let g = Irrational::from_cf(&[1; 40]).unwrap();
        let qs = g.denominators_u64();
        // q: 1, 2, 3, 5, 8, 13, ...
        assert_eq!(&qs[..8], &[1, 2, 3, 5, 8, 13, 21, 34]);
        assert!((g.approx_f64() - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn silver_value() {
        let s = Irrational::from_cf(&[2; 30]).unwrap();
        assert!((s.approx_f64() - (2f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn decimal_expansion_matches_f64() {
        let g = Irrational::golden();
        let d = g.decimal(60);
        assert!(d.starts_with("0.61803398874989484820458683436563811772030917980576"));
    }

    #[test]
    fn knorm_at_fibonacci_denominator() {
        let g = Irrational::golden();
        // ||q5 alpha|| with q5 = 8: |8 alpha - 5|
        let alpha = (5f64.sqrt() - 1.0) / 2.0;
        let expect = (8.0 * alpha - 5.0).abs();
        let got = g.knorm(8).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn knorm_generic_small_k() {
        let g = Irrational::golden();
        let alpha = (5f64.sqrt() - 1.0) / 2.0;
        for k in [1i64, 2, 3, 7, 100, 987] {
            let expect = torus_norm(k as f64 * alpha);
            let got = g.knorm(k).unwrap();
            assert!((got - expect).abs() < 1e-9, "k={k}: {got} vs {expect}");
        }
    }

    #[test]
    fn knorm_rejects_uncertifiable_k() {
        // Shallow CF: q_N = 8, so even modest k cannot be certified.
        let shallow = Irrational::from_cf(&[1, 1, 1, 1, 1]).unwrap();
        assert!(matches!(shallow.knorm(8), Err(Error::Precision(_))));
    }

    #[test]
    fn beta_estimate_golden_is_near_log_golden_ratio() {
        // beta_K for the golden frequency tends to ln(phi)/... in the limit
        // -ln||q_n alpha||/q_n ~ ln(q_{n+1})/q_n -> 0 since q grows
        // geometrically but the ratio ln q / q -> 0.  At K = 10^4 the maximum
        // is attained at the smallest denominator q = 1.
        let g = Irrational::golden();
        let b = g.beta_estimate(10_000).unwrap();
        // ||1 * alpha|| = 1 - alpha = 0.381966..., -ln = 0.96242
        assert!((b.value - 0.9624236501192069).abs() < 1e-9, "{}", b.value);
        assert_eq!(b.at_q, 1);
    }

    #[test]
    fn beta_estimate_detects_planted_liouville_block() {
        // CF [1,1,1,1,1, A, 1,1,...] with a huge term A: at q5 = 8 we get
        // ||q5 alpha|| ~ 1/q6 with q6 = A*8 + 5, so
        // -ln||q5 alpha||/q5 ~ ln(8A)/8, large.
        let mut cf = vec![1u64; 40];
        cf[5] = 1_000_000;
        let a = Irrational::from_cf(&cf).unwrap();
        let b = a.beta_estimate(10_000).unwrap();
        assert_eq!(b.at_q, 8);
        // exact: ||8 alpha|| in (1/(q6+q5), 1/q6), q6 = 8_000_005
        let lo = -((8_000_005f64 + 8.0).ln()) / 8.0;
        let hi = -(8_000_005f64.ln()) / 8.0;
        assert!(b.value >= -hi - 1e-12 && b.value <= -lo + 1.0, "{}", b.value);
        assert!((b.value - 8_000_005f64.ln() / 8.0).abs() < 0.01);
    }

    #[test]
    fn delta_exact_resonance_sentinel() {
        let g = Irrational::golden();
        // rho = 3 alpha / 2 => 2 rho - 3 alpha = 0 exactly.
        let rho = g.value() * BigRational::new(BigInt::from(3), BigInt::from(2));
        let d = g.delta_estimate(&rho, 50).unwrap();
        match d {
            DeltaEstimate::ExactResonance { m } => assert_eq!(m, 3),
            other => panic!("expected exact resonance, got {other:?}"),
        }
    }

    #[test]
    fn delta_finite_matches_brute_force() {
        let g = Irrational::golden();
        let rho = rational_from_f64(0.171717).unwrap();
        let d = g.delta_estimate(&rho, 200).unwrap();
        let alpha = g.approx_f64();
        // brute force in f64
        let mut best = f64::NEG_INFINITY;
        let mut best_k = 0i64;
        for a in 1..=200i64 {
            for k in [a, -a] {
                let cand = -torus_norm(2.0 * 0.171717 + k as f64 * alpha).ln() / a as f64;
                if cand > best {
                    best = cand;
                    best_k = k;
                }
            }
        }
        match d {
            DeltaEstimate::Finite { value, at_k } => {
                assert!((value - best).abs() < 1e-6, "{value} vs {best}");
                assert_eq!(at_k, best_k);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn resonances_planted_single() {
        let g = Irrational::golden();
        // Plant 2 rho = 5 alpha + e^{-2 * 5}-ish (rational stand-in).
        let bump = BigRational::new(BigInt::from(1), BigInt::from(22026)); // ~ e^{-10}
        let rho = (g.value() * BigRational::from_integer(BigInt::from(5)) + &bump)
            / BigRational::from_integer(BigInt::from(2));
        let seq = g.resonances(&rho, 1.0, 40).unwrap();
        assert!(
            seq.entries.iter().any(|r| r.ell == 5),
            "expected ell = 5 among {:?}",
            seq.entries
        );
        let r5 = seq.entries.iter().find(|r| r.ell == 5).unwrap();
        let eta = r5.eta.unwrap();
        assert!((eta - 10.0f64.exp().ln() / 5.0).abs() < 0.01, "eta = {eta}");
    }

    #[test]
    fn resonances_exact_stops_scan() {
        let g = Irrational::golden();
        let rho = g.value() * BigRational::new(BigInt::from(7), BigInt::from(2));
        let seq = g.resonances(&rho, 0.1, 60).unwrap();
        let last = seq.entries.last().unwrap();
        assert_eq!(last.ell, 7);
        assert!(last.log_norm.is_none());
    }

    #[test]
    fn big_ln_handles_huge_ratios() {
        let huge = BigRational::new(BigInt::one(), num_traits::pow(BigInt::from(10), 500));
        let l = big_ln(&huge);
        assert!((l + 500.0 * std::f64::consts::LN_10).abs() < 1e-6);
    }
}
