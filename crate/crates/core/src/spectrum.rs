//! Band spectra of periodic approximants of the almost Mathieu operator.
//!
//! For a rational frequency p/q the q-step transfer-matrix trace splits as
//! `tr A_q(E, theta) = D(E) - 2 lambda^q cos(2 pi q theta + const)`; the
//! phase `theta0 = 1/(4q)` kills the theta-dependent term, so `D` can be
//! evaluated directly as a trace.  The union-over-phases spectrum is
//! `{E : |D(E)| <= 2 + 2 lambda^q}`, a disjoint union of exactly q bands.

use serde::Serialize;

use crate::arithmetic::Irrational;
use crate::cocycle::CocycleMap;
use crate::error::{Error, Result};
use crate::mat2::Mat2;
use num_traits::ToPrimitive;

/// Gap lengths below this energy resolution are only reported as upper
/// bounds (`below_floor`).
pub const RESOLUTION_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Gap {
    /// Index m in 1..q-1: the integrated density of states equals m/q here.
    pub m: i64,
    /// Gap label: the minimal |k| solving k p = m (mod q); positive on ties.
    pub label: i64,
    pub lo: f64,
    pub hi: f64,
    pub length: f64,
    /// True when the gap is not resolvable above [`RESOLUTION_FLOOR`].
    pub below_floor: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BandSpectrum {
    pub lambda: f64,
    pub p: i64,
    pub q: i64,
    pub bands: Vec<Band>,
    pub gaps: Vec<Gap>,
    /// Trace bound 2 + 2 lambda^q.
    pub bound: f64,
}

/// Discriminant D(E): the q-step transfer trace at the phase 1/(4q).
pub fn chambers_discriminant(lambda: f64, p: i64, q: i64, energy: f64) -> Result<f64> {
    check_pq(lambda, p, q)?;
    let theta0 = 1.0 / (4.0 * q as f64);
    let alpha = p as f64 / q as f64;
    let map = CocycleMap::amo(lambda, energy);
    let mut acc = Mat2::identity();
    let mut th = theta0;
    for _ in 0..q {
        acc = map.eval(th).mul(&acc);
        th += alpha;
        if th >= 1.0 {
            th -= 1.0;
        }
    }
    let t = acc.trace();
    if !t.is_finite() {
        return Err(Error::Precision(format!(
            "discriminant overflow at E = {energy}, q = {q}"
        )));
    }
    Ok(t)
}

fn check_pq(lambda: f64, p: i64, q: i64) -> Result<()> {
    if q < 2 || p < 1 || p >= q {
        return Err(Error::Invalid(format!("need 1 <= p < q, q >= 2; got {p}/{q}")));
    }
    if gcd(p, q) != 1 {
        return Err(Error::Invalid(format!("{p}/{q} is not in lowest terms")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Invalid(format!("coupling must be positive, got {lambda}")));
    }
    Ok(())
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Exact band/gap structure of the periodic approximant spectrum.
pub fn band_spectrum(lambda: f64, p: i64, q: i64) -> Result<BandSpectrum> {
    check_pq(lambda, p, q)?;
    let s = 2.0 + 2.0 * lambda.powi(q as i32);
    let disc = |e: f64| chambers_discriminant(lambda, p, q, e);

    // 1. The q simple zeros of D (periodic-problem eigenvalue interlacing).
    let hull = 2.0 + 2.0 * lambda + 0.5;
    let zeros = find_zeros(&disc, -hull, hull, q as usize)?;

    // 2. Band edges around each zero.  Between consecutive zeros D has a
    //    single extremum with alternating sign; bisect |D| = s on the two
    //    monotone flanks (or declare the gap closed if the extremum stays
    //    within the bound).
    let mut bands: Vec<Band> = Vec::with_capacity(q as usize);
    let mut gaps: Vec<Gap> = Vec::with_capacity(q as usize - 1);

    // Left exterior edge.
    let mut width = 0.25;
    let mut left_out = zeros[0] - width;
    while disc(left_out)?.abs() <= s {
        width *= 2.0;
        left_out = zeros[0] - width;
        if width > 16.0 * hull {
            return Err(Error::Diagnostic("no exterior edge found on the left".into()));
        }
    }
    let first_lo = bisect_abs_eq(&disc, left_out, zeros[0], s)?;

    let mut current_lo = first_lo;
    for m in 0..(q as usize - 1) {
        // extremum between zeros[m], zeros[m+1]
        let (e_star, d_star) = extremum(&disc, zeros[m], zeros[m + 1])?;
        if d_star.abs() > s {
            let hi = bisect_abs_eq(&disc, e_star, zeros[m], s)?;
            let next_lo = bisect_abs_eq(&disc, e_star, zeros[m + 1], s)?;
            bands.push(Band { lo: current_lo, hi });
            let len = (next_lo - hi).max(0.0);
            gaps.push(Gap {
                m: (m + 1) as i64,
                label: gap_label((m + 1) as i64, p, q),
                lo: hi,
                hi: next_lo,
                length: len,
                below_floor: len < RESOLUTION_FLOOR,
            });
            current_lo = next_lo;
        } else {
            // Closed (unresolvable) gap: bands touch at the extremum.
            bands.push(Band { lo: current_lo, hi: e_star });
            gaps.push(Gap {
                m: (m + 1) as i64,
                label: gap_label((m + 1) as i64, p, q),
                lo: e_star,
                hi: e_star,
                length: 0.0,
                below_floor: true,
            });
            current_lo = e_star;
        }
    }

    // Right exterior edge.
    let mut width = 0.25;
    let mut right_out = zeros[q as usize - 1] + width;
    while disc(right_out)?.abs() <= s {
        width *= 2.0;
        right_out = zeros[q as usize - 1] + width;
        if width > 16.0 * hull {
            return Err(Error::Diagnostic("no exterior edge found on the right".into()));
        }
    }
    let last_hi = bisect_abs_eq(&disc, right_out, zeros[q as usize - 1], s)?;
    bands.push(Band { lo: current_lo, hi: last_hi });

    if bands.len() != q as usize {
        return Err(Error::Diagnostic(format!(
            "expected {q} bands, found {}",
            bands.len()
        )));
    }
    Ok(BandSpectrum { lambda, p, q, bands, gaps, bound: s })
}

/// Minimal-|k| solution of k p = m (mod q); positive k preferred on ties.
pub fn gap_label(m: i64, p: i64, q: i64) -> i64 {
    for a in 1..=q / 2 {
        if (a * p - m).rem_euclid(q) == 0 {
            return a;
        }
        if (-a * p - m).rem_euclid(q) == 0 {
            return -a;
        }
    }
    0 // unreachable for 1 <= m <= q-1 with gcd(p, q) = 1
}

fn find_zeros<F: Fn(f64) -> Result<f64>>(
    f: &F,
    lo: f64,
    hi: f64,
    expected: usize,
) -> Result<Vec<f64>> {
    let mut n = 16 * expected.max(8);
    loop {
        let mut brackets = Vec::new();
        let mut prev_x = lo;
        let mut prev_v = f(lo)?;
        for i in 1..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let v = f(x)?;
            if prev_v == 0.0 {
                brackets.push((prev_x, prev_x));
            } else if prev_v * v < 0.0 {
                brackets.push((prev_x, x));
            }
            prev_x = x;
            prev_v = v;
        }
        if brackets.len() == expected {
            let mut zeros = Vec::with_capacity(expected);
            for (a, b) in brackets {
                zeros.push(bisect_zero(f, a, b)?);
            }
            return Ok(zeros);
        }
        if brackets.len() > expected {
            return Err(Error::Diagnostic(format!(
                "found {} discriminant zeros, expected {expected}",
                brackets.len()
            )));
        }
        n *= 2;
        if n > (1 << 24) {
            return Err(Error::Diagnostic(format!(
                "could not isolate {expected} discriminant zeros"
            )));
        }
    }
}

fn bisect_zero<F: Fn(f64) -> Result<f64>>(f: &F, mut a: f64, mut b: f64) -> Result<f64> {
    let fa = f(a)?;
    if fa == 0.0 {
        return Ok(a);
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Bisect |D| = s on a flank where |D| is monotone: `inside` has |D| <= s
/// is false... `outside` has |D| > s, `inside` has |D| <= s.
fn bisect_abs_eq<F: Fn(f64) -> Result<f64>>(
    f: &F,
    outside: f64,
    inside: f64,
    s: f64,
) -> Result<f64> {
    let mut a = outside;
    let mut b = inside;
    if !(f(a)?.abs() > s) {
        return Err(Error::Diagnostic("edge bisection: outer point not outside".into()));
    }
    if f(b)?.abs() > s {
        return Err(Error::Diagnostic("edge bisection: inner point not inside".into()));
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        if f(m)?.abs() > s {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// The single extremum of D between consecutive zeros (golden-section search
/// on |D|, which is unimodal there).
fn extremum<F: Fn(f64) -> Result<f64>>(f: &F, a: f64, b: f64) -> Result<(f64, f64)> {
    let gr = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - gr * (hi - lo);
    let mut x2 = lo + gr * (hi - lo);
    let mut f1 = f(x1)?.abs();
    let mut f2 = f(x2)?.abs();
    for _ in 0..200 {
        if hi - lo < 1e-15 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = f(x2)?.abs();
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = f(x1)?.abs();
        }
    }
    let x = 0.5 * (lo + hi);
    Ok((x, f(x)?))
}

/// Integrated density of states of the approximant at energy E.
pub fn ids(bs: &BandSpectrum, energy: f64) -> Result<f64> {
    let q = bs.q as f64;
    if energy < bs.bands[0].lo {
        return Ok(0.0);
    }
    if energy > bs.bands.last().unwrap().hi {
        return Ok(1.0);
    }
    for (i, band) in bs.bands.iter().enumerate() {
        if energy >= band.lo && energy <= band.hi {
            // Inside band i (0-based): interpolate with the normalized
            // discriminant angle.  D runs from sigma*s to -sigma*s with
            // sigma = (-1)^{q + i}.
            let d = chambers_discriminant(bs.lambda, bs.p, bs.q, energy)?;
            let sigma = if (bs.q as usize + i) % 2 == 0 { 1.0 } else { -1.0 };
            let x = (sigma * d / bs.bound).clamp(-1.0, 1.0);
            let frac = x.acos() / std::f64::consts::PI;
            return Ok((i as f64 + frac) / q);
        }
        if i < bs.gaps.len() && energy > band.hi && energy < bs.gaps[i].hi {
            return Ok(bs.gaps[i].m as f64 / q);
        }
        if i < bs.gaps.len() && energy >= bs.gaps[i].hi && energy < bs.bands[i + 1].lo {
            return Ok(bs.gaps[i].m as f64 / q);
        }
    }
    // Between gap hi and next band lo can only be rounding slivers.
    for (i, band) in bs.bands.iter().enumerate() {
        if energy <= band.lo {
            return Ok(i as f64 / q);
        }
    }
    Ok(1.0)
}

/// Energies of the q discriminant zeros ("band centers").
pub fn band_centers(bs: &BandSpectrum) -> Result<Vec<f64>> {
    let disc = |e: f64| chambers_discriminant(bs.lambda, bs.p, bs.q, e);
    bs.bands
        .iter()
        .map(|b| bisect_zero(&disc, b.lo, b.hi))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct GapDecayRow {
    pub k: i64,
    pub m: i64,
    pub length: f64,
    pub rate: f64,
    pub length_prev: Option<f64>,
    /// Current and previous approximant agree within 10%.
    pub stable: bool,
    pub below_floor: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapDecayTable {
    pub lambda: f64,
    pub p: i64,
    pub q: i64,
    pub p_prev: i64,
    pub q_prev: i64,
    pub rows: Vec<GapDecayRow>,
}

/// Gap-decay experiment: gap lengths |G_k| and rates -ln|G_k|/|k| at the two
/// deepest continued-fraction approximants with denominator <= q_max.
pub fn gap_decay_experiment(
    lambda: f64,
    alpha: &Irrational,
    q_max: i64,
    k_max: i64,
) -> Result<GapDecayTable> {
    let conv: Vec<(i64, i64)> = alpha
        .convergents()
        .iter()
        .filter_map(|(p, q)| Some((p.to_i64()?, q.to_i64()?)))
        .filter(|&(_, q)| q <= q_max && q >= 2)
        .collect();
    if conv.len() < 2 {
        return Err(Error::Invalid(format!(
            "need two convergents with 2 <= q <= {q_max}"
        )));
    }
    let (p_prev, q_prev) = conv[conv.len() - 2];
    let (p, q) = conv[conv.len() - 1];
    if k_max >= q / 2 {
        return Err(Error::Invalid(format!(
            "k_max = {k_max} too large for approximant q = {q}"
        )));
    }
    let bs = band_spectrum(lambda, p, q)?;
    let bs_prev = band_spectrum(lambda, p_prev, q_prev)?;
    let gap_by_label = |b: &BandSpectrum, k: i64| -> Option<Gap> {
        b.gaps.iter().find(|g| g.label == k).copied()
    };
    let mut rows = Vec::new();
    for a in 1..=k_max {
        for k in [a, -a] {
            let Some(g) = gap_by_label(&bs, k) else { continue };
            let prev = gap_by_label(&bs_prev, k);
            let stable = prev.map_or(false, |gp| {
                !g.below_floor
                    && !gp.below_floor
                    && (g.length - gp.length).abs() <= 0.1 * g.length.max(gp.length)
            });
            let rate = if g.length > 0.0 {
                -g.length.ln() / a as f64
            } else {
                f64::INFINITY
            };
            rows.push(GapDecayRow {
                k,
                m: g.m,
                length: g.length,
                rate,
                length_prev: prev.map(|gp| gp.length),
                stable,
                below_floor: g.below_floor,
            });
        }
    }
    Ok(GapDecayTable { lambda, p, q, p_prev, q_prev, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_case_q2_bands() {
        // lambda small, p/q = 1/2: two bands with a gap at IDS 1/2... the
        // central gap for q = 2 has m = 1, label k = 1 (1*1 = 1 mod 2).
        let bs = band_spectrum(0.2, 1, 2).unwrap();
        assert_eq!(bs.bands.len(), 2);
        assert_eq!(bs.gaps.len(), 1);
        assert_eq!(bs.gaps[0].label, 1);
        // spectrum symmetric under E -> -E
        assert!((bs.bands[0].lo + bs.bands[1].hi).abs() < 1e-10);
    }

    #[test]
    fn discriminant_phase_kills_cosine() {
        // tr A_q(E, theta) = D(E) - 2 lambda^q cos(2 pi q theta + c): verify
        // that the trace at theta0 +/- shift moves by at most the cosine
        // amplitude and that theta0 sits at the node.
        let (lambda, p, q, e) = (0.7, 2, 5, 0.9);
        let d0 = chambers_discriminant(lambda, p, q, e).unwrap();
        // full trace at other phases
        let map = CocycleMap::amo(lambda, e);
        let alpha = p as f64 / q as f64;
        let tr_at = |theta: f64| {
            let mut acc = Mat2::identity();
            let mut th = theta;
            for _ in 0..q {
                acc = map.eval(th).mul(&acc);
                th = (th + alpha).fract();
            }
            acc.trace()
        };
        let amp = 2.0 * lambda.powi(q as i32);
        let mut max_dev = 0.0f64;
        for i in 0..40 {
            let th = i as f64 / 40.0;
            max_dev = max_dev.max((tr_at(th) - d0).abs());
        }
        assert!(max_dev <= amp + 1e-9, "{max_dev} vs {amp}");
        assert!(max_dev >= amp - 1e-6, "cosine amplitude not attained: {max_dev} vs {amp}");
    }

    #[test]
    fn band_count_and_ids_on_gaps() {
        let bs = band_spectrum(0.5, 3, 5).unwrap();
        assert_eq!(bs.bands.len(), 5);
        assert_eq!(bs.gaps.len(), 4);
        for g in &bs.gaps {
            if g.length > 1e-10 {
                let mid = 0.5 * (g.lo + g.hi);
                let n = ids(&bs, mid).unwrap();
                assert!((n - g.m as f64 / 5.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ids_monotone_within_band() {
        let bs = band_spectrum(0.5, 1, 3).unwrap();
        let b = bs.bands[1];
        let mut last = -1.0;
        for i in 0..=20 {
            let e = b.lo + (b.hi - b.lo) * i as f64 / 20.0;
            let n = ids(&bs, e).unwrap();
            assert!(n >= last - 1e-12, "IDS not monotone at {e}");
            last = n;
        }
        assert!((ids(&bs, bs.bands[0].lo - 1.0).unwrap() - 0.0).abs() < 1e-15);
        assert!((ids(&bs, bs.bands[2].hi + 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gap_labels_are_inverse_of_p_mod_q() {
        // q = 5, p = 3: k*3 = m mod 5 -> m=1: k=2; m=2: k=-1 (since 4*3=12=2,
        // |4|>|1|, -1*3 = -3 = 2 mod 5); m=3: k=1; m=4: k=-2.
        assert_eq!(gap_label(1, 3, 5), 2);
        assert_eq!(gap_label(2, 3, 5), -1);
        assert_eq!(gap_label(3, 3, 5), 1);
        assert_eq!(gap_label(4, 3, 5), -2);
    }

    #[test]
    fn label_congruence_holds_for_all_gaps() {
        let bs = band_spectrum(0.5, 55, 89).unwrap();
        for g in &bs.gaps {
            assert_eq!((g.label * 55 - g.m).rem_euclid(89), 0);
            assert!(g.label != 0 && g.label.abs() <= 44);
        }
    }

    #[test]
    fn total_band_measure_tracks_coupling() {
        // The total measure of the approximant spectrum approaches |4 - 4 lambda|.
        let measure = |lambda: f64, p: i64, q: i64| {
            let bs = band_spectrum(lambda, p, q).unwrap();
            bs.bands.iter().map(|b| b.hi - b.lo).sum::<f64>()
        };
        let m1 = measure(0.5, 5, 8);
        let m2 = measure(0.5, 13, 21);
        let m3 = measure(0.5, 34, 55);
        assert!((m3 - 2.0).abs() < (m1 - 2.0).abs() + 0.05, "{m1} {m2} {m3}");
        assert!((m3 - 2.0).abs() < 0.05, "{m3}");
        // critical coupling: measure tending to zero
        let c1 = measure(1.0, 5, 8);
        let c2 = measure(1.0, 34, 55);
        assert!(c2 < c1 && c2 < 0.5, "{c1} {c2}");
    }

    #[test]
    fn duality_of_approximant_spectra() {
        // Aubry duality at rational frequency: Spec(lambda) = lambda * Spec(1/lambda).
        let bs = band_spectrum(0.5, 3, 5).unwrap();
        let dual = band_spectrum(2.0, 3, 5).unwrap();
        for (b, bd) in bs.bands.iter().zip(dual.bands.iter()) {
            assert!((b.lo - 0.5 * bd.lo).abs() < 1e-9, "{} vs {}", b.lo, 0.5 * bd.lo);
            assert!((b.hi - 0.5 * bd.hi).abs() < 1e-9);
        }
    }

    #[test]
    fn gap_decay_rates_near_log_coupling() {
        let alpha = Irrational::golden();
        let table = gap_decay_experiment(0.5, &alpha, 89, 4).unwrap();
        assert_eq!(table.q, 89);
        assert_eq!(table.q_prev, 55);
        for row in table.rows.iter().filter(|r| r.k.abs() >= 3) {
            assert!(
                row.rate > 0.4 && row.rate < 1.3,
                "k = {}: rate {}",
                row.k,
                row.rate
            );
        }
    }
}
