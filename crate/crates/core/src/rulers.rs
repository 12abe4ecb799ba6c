//! Sparse rulers and the training structures built from them.
//!
//! A ruler is a sorted set of integer marks starting at 0. It is *complete up
//! to z* when every lag 1..z occurs as a pairwise difference of marks; placing
//! training pilots on the marks of a complete ruler lets a Toeplitz covariance
//! be observed on all lags with far fewer pilots than antennas. This module
//! provides the classic constructions (Wichmann segments, Singer perfect
//! difference sets, composition/completion, coprime sets), a budget-driven
//! selector, and the mapping from a ruler to a pilot matrix plus its two-chain
//! hybrid realization.

use crate::error::{Error, Result};
use crate::linalg::{cis, CMat, CVec, Cx};

/// Sorted integer marks with the completeness prefix precomputed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ruler {
    marks: Vec<usize>,
    complete_up_to: usize,
}

impl Ruler {
    /// Build a ruler from marks, validating shape and computing how far the
    /// lag coverage extends.
    pub fn new(marks: Vec<usize>) -> Result<Self> {
        if marks.is_empty() {
            return Err(Error::InvalidArgument("ruler needs at least one mark".into()));
        }
        if marks[0] != 0 {
            return Err(Error::InvalidArgument("first mark must be 0".into()));
        }
        if marks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("marks must be strictly increasing".into()));
        }
        let complete_up_to = coverage_prefix(&marks);
        Ok(Self { marks, complete_up_to })
    }

    pub fn marks(&self) -> &[usize] {
        &self.marks
    }

    pub fn mark_count(&self) -> usize {
        self.marks.len()
    }

    /// Largest mark.
    pub fn length(&self) -> usize {
        *self.marks.last().unwrap()
    }

    /// Largest z such that every lag 1..z is a pairwise difference of marks.
    pub fn complete_up_to(&self) -> usize {
        self.complete_up_to
    }

    /// True when every lag 1..length is covered.
    pub fn is_perfect(&self) -> bool {
        self.complete_up_to == self.length()
    }

    /// Which lags 0..=length are observable as pairwise differences.
    pub fn covered_lags(&self) -> Vec<bool> {
        covered_lags(&self.marks)
    }

    /// How many mark pairs realize each lag 0..=length. Lag 0 counts the
    /// marks themselves.
    pub fn lag_multiplicity(&self) -> Vec<usize> {
        let len = self.length();
        let mut counts = vec![0usize; len + 1];
        counts[0] = self.marks.len();
        for (i, &a) in self.marks.iter().enumerate() {
            for &b in &self.marks[i + 1..] {
                counts[b - a] += 1;
            }
        }
        counts
    }
}

fn covered_lags(marks: &[usize]) -> Vec<bool> {
    let len = *marks.last().unwrap();
    let mut seen = vec![false; len + 1];
    seen[0] = true;
    for (i, &a) in marks.iter().enumerate() {
        for &b in &marks[i + 1..] {
            seen[b - a] = true;
        }
    }
    seen
}

fn coverage_prefix(marks: &[usize]) -> usize {
    let seen = covered_lags(marks);
    let mut z = 0;
    while z + 1 < seen.len() && seen[z + 1] {
        z += 1;
    }
    z
}

/// Exhaustive completeness oracle: every lag 1..=up_to is a difference of
/// two marks.
pub fn is_complete(ruler: &Ruler, up_to: usize) -> bool {
    if up_to == 0 {
        return true;
    }
    if up_to > ruler.length() {
        return false;
    }
    let seen = ruler.covered_lags();
    (1..=up_to).all(|z| seen[z])
}

/// Number of marks of the Wichmann ruler with parameters (r, s).
pub fn wichmann_mark_count(r: usize, s: usize) -> usize {
    4 * r + s + 3
}

/// Length of the Wichmann ruler with parameters (r, s).
pub fn wichmann_length(r: usize, s: usize) -> usize {
    4 * r * (r + s + 2) + 3 * (s + 1)
}

/// Wichmann construction: consecutive differences follow the segment pattern
/// r×1, 1×(r+1), r×(2r+1), s×(4r+3), (r+1)×(2r+2), r×1.
pub fn wichmann_ruler(r: usize, s: usize) -> Ruler {
    // (difference value, repeat count)
    let segments = [
        (1, r),
        (r + 1, 1),
        (2 * r + 1, r),
        (4 * r + 3, s),
        (2 * r + 2, r + 1),
        (1, r),
    ];
    let mut marks = Vec::with_capacity(wichmann_mark_count(r, s));
    let mut pos = 0usize;
    marks.push(pos);
    for (diff, count) in segments {
        for _ in 0..count {
            pos += diff;
            marks.push(pos);
        }
    }
    debug_assert_eq!(marks.len(), wichmann_mark_count(r, s));
    debug_assert_eq!(pos, wichmann_length(r, s));
    Ruler::new(marks).expect("wichmann marks are strictly increasing from 0")
}

/// Check that `set` is a perfect difference set modulo `modulus`: every
/// nonzero residue arises exactly once as an ordered difference.
pub fn is_perfect_difference_set(set: &[u64], modulus: u64) -> bool {
    verify_difference_set(set, modulus).is_ok()
}

fn verify_difference_set(set: &[u64], modulus: u64) -> std::result::Result<(), String> {
    if modulus < 2 {
        return Err("modulus must be at least 2".into());
    }
    let n = set.len() as u64;
    if n * (n - 1) != modulus - 1 {
        return Err(format!(
            "{} elements produce {} ordered differences, need {}",
            n,
            n * (n.saturating_sub(1)),
            modulus - 1
        ));
    }
    let mut counts = vec![0u32; modulus as usize];
    for (i, &a) in set.iter().enumerate() {
        if a >= modulus {
            return Err(format!("element {a} is not a residue mod {modulus}"));
        }
        for &b in set.iter().skip(i + 1) {
            let d = (a + modulus - b) % modulus;
            counts[d as usize] += 1;
            counts[(modulus - d) as usize % modulus as usize] += 1;
        }
    }
    for (d, &c) in counts.iter().enumerate().skip(1) {
        if c != 1 {
            return Err(format!("difference {d} occurs {c} times"));
        }
    }
    Ok(())
}

fn is_prime(q: u64) -> bool {
    if q < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= q {
        if q % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Singer perfect difference set: q+1 residues modulo q²+q+1 whose pairwise
/// differences hit every nonzero residue exactly once. Built from the powers
/// of a primitive element of the cubic extension of GF(q) (the points of a
/// projective line), then canonicalized to the lexicographically smallest
/// set in its multiplier/translation orbit. Supports prime q up to 13.
pub fn singer_difference_set(q: u64) -> Result<Vec<u64>> {
    if !is_prime(q) || q > 13 {
        return Err(Error::NotFound(q));
    }
    let v = q * q + q + 1;
    let raw = singer_from_field(q).ok_or(Error::NotFound(q))?;
    let set = lex_min_orbit(&raw, v);
    debug_assert!(is_perfect_difference_set(&set, v));
    Ok(set)
}

/// Exponents i (mod q²+q+1) whose field element x^i has no x² term: one
/// residue per projective point of a line, q+1 in total.
fn singer_from_field(q: u64) -> Option<Vec<u64>> {
    let v = q * q + q + 1;
    let group = q * q * q - 1;
    // First (lexicographic) monic cubic x³ + a·x² + b·x + c whose root has
    // full multiplicative order, i.e. a primitive polynomial over GF(q).
    for a in 0..q {
        for b in 0..q {
            for c in 0..q {
                // Track powers of x in GF(q)[x]/(x³ + a·x² + b·x + c).
                let step = |e: [u64; 3]| -> [u64; 3] {
                    // Multiply by x: x³ ≡ −(a·x² + b·x + c).
                    let carry = e[2];
                    [
                        (q - 1) * c % q * carry % q,
                        (e[0] + (q - 1) * b % q * carry) % q,
                        (e[1] + (q - 1) * a % q * carry) % q,
                    ]
                };
                let mut e = [1u64, 0, 0];
                let mut order = 0u64;
                loop {
                    e = step(e);
                    order += 1;
                    if e == [1, 0, 0] || order > group {
                        break;
                    }
                }
                if order != group {
                    continue;
                }
                let mut set = std::collections::BTreeSet::new();
                let mut e = [1u64, 0, 0];
                for i in 0..group {
                    if e[2] == 0 {
                        set.insert(i % v);
                    }
                    e = step(e);
                }
                if set.len() as u64 == q + 1 {
                    return Some(set.into_iter().collect());
                }
            }
        }
    }
    None
}

/// Smallest sorted representative among all images m·D + t (gcd(m, v) = 1):
/// both operations preserve the perfect-difference property.
fn lex_min_orbit(set: &[u64], v: u64) -> Vec<u64> {
    let mut best: Option<Vec<u64>> = None;
    for m in 1..v {
        if gcd(m, v) != 1 {
            continue;
        }
        // The lex minimum contains 0, so only translations sending some
        // element there matter.
        for &anchor in set {
            let t = (v - m * anchor % v) % v;
            let mut cand: Vec<u64> = set.iter().map(|&d| (m * d + t) % v).collect();
            cand.sort_unstable();
            if best.as_ref().is_none_or(|b| cand < *b) {
                best = Some(cand);
            }
        }
    }
    best.expect("nonempty set")
}

/// Scale `base` by the difference-set modulus, translate by the set elements,
/// and complete the result so that every lag 1..=target_length is covered.
///
/// The completion appends, over the first uncovered stretch [r, s], the
/// interval-covering marks {0..t} ∪ {r+t, r+2t+1, ...} ∪ {s} with
/// t = floor(sqrt(s−r)).
pub fn compose_ruler(
    base: &Ruler,
    diffset: &[u64],
    modulus: u64,
    target_length: usize,
) -> Result<Ruler> {
    verify_difference_set(diffset, modulus).map_err(|reason| Error::InvalidDiffSet {
        modulus,
        reason,
    })?;
    let max_elem = *diffset.iter().max().unwrap() as usize;
    let floor = base.length() * modulus as usize + max_elem;
    if target_length < floor {
        return Err(Error::InvalidArgument(format!(
            "target length {target_length} is below the composed span {floor}"
        )));
    }
    let mut marks: Vec<usize> = Vec::new();
    for &r_i in base.marks() {
        for &s_j in diffset {
            marks.push(r_i * modulus as usize + s_j as usize);
        }
    }
    marks.push(target_length); // anchor the final span
    marks.sort_unstable();
    marks.dedup();
    let covered = coverage_prefix(&marks);
    if covered < target_length {
        let (r, s) = (covered, target_length);
        let t = ((s - r) as f64).sqrt().floor() as usize;
        marks.extend(0..=t);
        let mut pos = r + t;
        while pos < s {
            marks.push(pos);
            pos += t + 1;
        }
        marks.push(s);
        marks.sort_unstable();
        marks.dedup();
    }
    let ruler = Ruler::new(marks)?;
    debug_assert!(ruler.complete_up_to() >= target_length);
    Ok(ruler)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Ruler from two coprime strides: {mp : 0 ≤ m < q} ∪ {nq : 0 ≤ n < p}.
/// Generally not complete as a plain ruler — the pq-lag property of coprime
/// arrays relies on cross-lags — so the coverage prefix is whatever the
/// oracle finds.
pub fn coprime_ruler(p: u64, q: u64) -> Result<Ruler> {
    if gcd(p, q) != 1 {
        return Err(Error::NotCoprime(p, q));
    }
    let mut marks: Vec<usize> = (0..q).map(|m| (m * p) as usize).collect();
    marks.extend((0..p).map(|n| (n * q) as usize));
    marks.sort_unstable();
    marks.dedup();
    Ruler::new(marks)
}

/// Longest complete ruler that fits a mark budget of T.
///
/// Enumerates Wichmann pairs with 4r+s+3 ≤ T, spends leftover marks on a
/// completeness-preserving extension of the tail, verifies each candidate
/// with the exhaustive oracle, and keeps the longest (ties: smaller r, then
/// smaller s).
pub fn best_ruler(t: usize) -> Result<Ruler> {
    best_ruler_within(t, usize::MAX)
}

/// Like [`best_ruler`] but never places a mark beyond `max_length`, so the
/// result fits an aperture of max_length+1 antennas. Marks that cannot extend
/// the span any further are parked on unused low positions.
pub fn best_ruler_within(t: usize, max_length: usize) -> Result<Ruler> {
    if t < 2 {
        return Err(Error::InvalidArgument("mark budget must be at least 2".into()));
    }
    if max_length == 0 {
        return Err(Error::InvalidArgument("max_length must be positive".into()));
    }
    let mut best: Option<(usize, usize, usize)> = None; // (eff_len, r, s)
    if t >= 3 {
        let r_max = (t - 3) / 4;
        for r in 0..=r_max {
            for s in 0..=(t - 3 - 4 * r) {
                let base_len = wichmann_length(r, s);
                if base_len > max_length {
                    continue;
                }
                let leftover = t - wichmann_mark_count(r, s);
                let step = extension_step(r);
                let room = (max_length - base_len) / step;
                let eff = base_len + leftover.min(room) * step;
                let better = match best {
                    None => true,
                    Some((len, br, bs)) => {
                        eff > len || (eff == len && (r < br || (r == br && s < bs)))
                    }
                };
                if better && wichmann_extended(r, s, t, max_length).is_some() {
                    best = Some((eff, r, s));
                }
            }
        }
    }
    match best {
        Some((_, r, s)) => Ok(wichmann_extended(r, s, t, max_length).unwrap()),
        // Budget too small for any Wichmann pair: fall back to the unit ruler.
        None => Ruler::new(vec![0, 1.min(max_length)]),
    }
}

/// Appending a mark at length + z keeps completeness as long as z ≤ p+1,
/// where 0..=p is the contiguous run of marks at the start of the ruler.
fn extension_step(r: usize) -> usize {
    if r == 0 {
        2 // W(0,s) starts 0,1 — contiguous through 1
    } else {
        r + 1 // W(r,s) starts 0,1,..,r
    }
}

fn wichmann_extended(r: usize, s: usize, t: usize, max_length: usize) -> Option<Ruler> {
    let base = wichmann_ruler(r, s);
    if base.length() > max_length {
        return None;
    }
    let mut marks = base.marks().to_vec();
    let mut leftover = t - marks.len();
    let step = extension_step(r);
    let mut pos = base.length();
    while leftover > 0 && pos + step <= max_length {
        pos += step;
        marks.push(pos);
        leftover -= 1;
    }
    // Park any remaining budget on the smallest free positions; extra marks
    // never hurt completeness.
    let mut candidate = 1;
    while leftover > 0 {
        if !marks.contains(&candidate) && candidate <= max_length {
            marks.push(candidate);
            leftover -= 1;
        }
        candidate += 1;
        if candidate > max_length {
            break; // aperture saturated
        }
    }
    marks.sort_unstable();
    let ruler = Ruler::new(marks).ok()?;
    if ruler.is_perfect() {
        Some(ruler)
    } else {
        None
    }
}

/// Pilot matrix whose rows select the ruler marks as transmit antennas.
#[derive(Debug, Clone)]
pub struct TrainingMatrix {
    entries: CMat,
    source: Option<Ruler>,
}

impl TrainingMatrix {
    pub fn from_matrix(entries: CMat) -> Self {
        Self { entries, source: None }
    }

    pub fn entries(&self) -> &CMat {
        &self.entries
    }

    pub fn t_tr(&self) -> usize {
        self.entries.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.entries.ncols()
    }

    pub fn source_ruler(&self) -> Option<&Ruler> {
        self.source.as_ref()
    }
}

/// T×M selection matrix with row i = indicator of antenna marks[i].
pub fn training_matrix(ruler: &Ruler, m: usize) -> Result<TrainingMatrix> {
    if m == 0 || ruler.length() > m - 1 {
        return Err(Error::RulerTooLong { length: ruler.length(), max: m.saturating_sub(1) });
    }
    let t = ruler.mark_count();
    let mut entries = CMat::zeros(t, m);
    for (i, &mark) in ruler.marks().iter().enumerate() {
        entries[(i, mark)] = Cx::new(1.0, 0.0);
    }
    Ok(TrainingMatrix { entries, source: Some(ruler.clone()) })
}

/// Two-RF-chain realization of a binary training column.
#[derive(Debug, Clone)]
pub struct HybridDecomposition {
    pub analog: CMat,
    pub digital: CVec,
    pub phase: f64,
}

impl HybridDecomposition {
    /// analog · digital — should equal e^{jφ}·x entrywise.
    pub fn product(&self) -> CVec {
        &self.analog * &self.digital
    }
}

/// Realize the binary pilot column x with two phase-only RF chains: antennas
/// kept on get two aligned phasors, antennas kept off get opposed ones, and
/// the digital combiner averages the chains.
pub fn hybrid_decompose(x: &[f64], phase: f64) -> Result<HybridDecomposition> {
    for (index, &v) in x.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::NonBinary { index });
        }
    }
    let on = cis(phase);
    let off = cis(phase + std::f64::consts::PI);
    let analog = CMat::from_fn(x.len(), 2, |i, j| {
        if j == 0 || x[i] == 1.0 {
            on
        } else {
            off
        }
    });
    let digital = CVec::from_element(2, Cx::new(0.5, 0.0));
    Ok(HybridDecomposition { analog, digital, phase })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wichmann_smallest_cases() {
        let w00 = wichmann_ruler(0, 0);
        assert_eq!(w00.marks(), &[0, 1, 3]);
        assert_eq!(w00.length(), 3);
        assert!(w00.is_perfect());

        let w11 = wichmann_ruler(1, 1);
        assert_eq!(w11.mark_count(), 8);
        assert_eq!(w11.length(), 22);
        assert!(w11.is_perfect());

        let w12 = wichmann_ruler(1, 2);
        assert_eq!(w12.marks(), &[0, 1, 3, 6, 13, 20, 24, 28, 29]);
        assert!(is_complete(&w12, 29));
    }

    #[test]
    fn wichmann_formulas_hold_over_grid() {
        for r in 0..=6 {
            for s in 0..=12 {
                let w = wichmann_ruler(r, s);
                assert_eq!(w.mark_count(), wichmann_mark_count(r, s));
                assert_eq!(w.length(), wichmann_length(r, s));
            }
        }
    }

    #[test]
    fn incomplete_ruler_detected() {
        let r = Ruler::new(vec![0, 1, 4]).unwrap();
        assert!(!is_complete(&r, 4));
        assert_eq!(r.complete_up_to(), 1);
    }

    #[test]
    fn singer_small_orders() {
        let s2 = singer_difference_set(2).unwrap();
        assert_eq!(s2, vec![0, 1, 3]);
        assert!(is_perfect_difference_set(&s2, 7));

        let s3 = singer_difference_set(3).unwrap();
        assert_eq!(s3.len(), 4);
        assert!(is_perfect_difference_set(&s3, 13));

        assert!(matches!(singer_difference_set(4), Err(Error::NotFound(4))));
    }

    #[test]
    fn singer_all_supported_primes() {
        for q in [2u64, 3, 5, 7, 11, 13] {
            let set = singer_difference_set(q).unwrap();
            assert_eq!(set.len() as u64, q + 1);
            assert!(is_perfect_difference_set(&set, q * q + q + 1));
        }
    }

    #[test]
    fn compose_covers_requested_range() {
        let base = Ruler::new(vec![0, 1, 3]).unwrap();
        let composed = compose_ruler(&base, &[0, 1, 3], 7, 27).unwrap();
        assert!(composed.complete_up_to() >= 27);

        let point = Ruler::new(vec![0]).unwrap();
        let small = compose_ruler(&point, &[0, 1, 3], 7, 4).unwrap();
        assert!(small.complete_up_to() >= 4);

        let bad = compose_ruler(&base, &[0, 1, 2], 7, 27);
        assert!(matches!(bad, Err(Error::InvalidDiffSet { .. })));
    }

    #[test]
    fn coprime_marks_and_errors() {
        let r = coprime_ruler(2, 3).unwrap();
        assert_eq!(r.marks(), &[0, 2, 3, 4]);
        let unit = coprime_ruler(1, 1).unwrap();
        assert_eq!(unit.marks(), &[0]);
        assert!(matches!(coprime_ruler(4, 6), Err(Error::NotCoprime(4, 6))));
    }

    #[test]
    fn best_ruler_small_budgets() {
        let r3 = best_ruler(3).unwrap();
        assert_eq!(r3.marks(), &[0, 1, 3]);

        let r8 = best_ruler(8).unwrap();
        assert_eq!(r8.length(), 22);
        assert!(r8.is_perfect());
    }

    #[test]
    fn best_ruler_maximizes_length_at_25_marks() {
        // Both W(3,10) and W(4,6) reach 213 with 25 marks; the tie-break
        // picks the smaller r.
        let r = best_ruler(25).unwrap();
        assert_eq!(r.mark_count(), 25);
        assert_eq!(r.length(), 213);
        assert!(r.is_perfect());
        assert_eq!(r.marks()[..5], [0, 1, 2, 3, 7]);
    }

    #[test]
    fn best_ruler_respects_aperture_cap() {
        // 25 marks into a 200-antenna aperture: span may not exceed 199.
        let r = best_ruler_within(25, 199).unwrap();
        assert_eq!(r.mark_count(), 25);
        assert!(r.length() <= 199);
        assert!(r.is_perfect());
        // 16 marks into 64 antennas covers the whole aperture.
        let r16 = best_ruler_within(16, 63).unwrap();
        assert_eq!(r16.length(), 63);
        assert!(r16.is_perfect());
    }

    #[test]
    fn best_ruler_density_bound() {
        for t in 8..=50 {
            let r = best_ruler(t).unwrap();
            assert!(r.is_perfect());
            let ratio = (t * t) as f64 / r.length() as f64;
            assert!(ratio <= 4.0, "T={t}: T^2/length = {ratio}");
        }
    }

    #[test]
    fn training_matrix_places_indicators() {
        let ruler = Ruler::new(vec![0, 1, 3]).unwrap();
        let x = training_matrix(&ruler, 4).unwrap();
        assert_eq!(x.t_tr(), 3);
        assert_eq!(x.antennas(), 4);
        for (i, &mark) in ruler.marks().iter().enumerate() {
            for j in 0..4 {
                let want = if j == mark { 1.0 } else { 0.0 };
                assert_eq!(x.entries()[(i, j)], Cx::new(want, 0.0));
            }
        }
        assert!(matches!(
            training_matrix(&ruler, 3),
            Err(Error::RulerTooLong { length: 3, max: 2 })
        ));
    }

    #[test]
    fn hybrid_matches_target_column() {
        let h = hybrid_decompose(&[1.0, 0.0], 0.0).unwrap();
        let p = h.product();
        assert!((p[0] - Cx::new(1.0, 0.0)).norm() < 1e-12);
        assert!(p[1].norm() < 1e-12);
        assert!(matches!(
            hybrid_decompose(&[0.5], 0.0),
            Err(Error::NonBinary { index: 0 })
        ));
    }
}
