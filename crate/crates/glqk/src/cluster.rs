//! Distance-based cluster splitting of observable polynomials, plus the two
//! window statistics that drive resource planning: the local cover number
//! (fewest sliding windows that jointly cover a term's clusters) and the local
//! factor count (trace factors per term after splitting).
//!
//! Splitting a factor at range `delta` keeps sites connected whenever their
//! lattice distance is at most `delta`; each connected component becomes its
//! own trace factor. Terms whose cluster multisets coincide are merged with
//! summed coefficients, so the 1-norm never grows.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::pauli::{ExpectationSource, ObservablePolynomial, PauliString, Term};

/// One merged term of a cluster decomposition: coefficient and the canonical
/// (sorted) multiset of cluster strings it multiplies together.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTerm {
    pub coefficient: f64,
    pub clusters: Vec<PauliString>,
}

/// Cluster decomposition of a polynomial at a fixed splitting range.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDecomposition {
    /// Splitting range used to build this decomposition.
    pub delta: usize,
    /// Degree `p` of the source polynomial.
    pub source_degree: usize,
    /// Maximum factor weight `m` of the source polynomial.
    pub source_max_weight: usize,
    terms: Vec<ClusterTerm>,
}

/// Result of a cover-number computation; `exact` is false when the scalable
/// upper-bound path was used instead of exhaustive partition search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoverNumber {
    pub value: usize,
    pub exact: bool,
}

/// Largest cluster-string count for which exhaustive partition search runs.
const EXACT_COVER_LIMIT: usize = 12;

/// Split every factor of `g` into distance-`delta` connected components and
/// merge terms whose cluster multisets coincide.
pub fn cluster_approximation(
    g: &ObservablePolynomial,
    lat: &Lattice,
    delta: usize,
) -> Result<ClusterDecomposition> {
    if delta == 0 {
        return Err(Error::InvalidArgument("splitting range must be at least 1".into()));
    }
    g.validate_on(lat)?;
    let mut merged: BTreeMap<Vec<PauliString>, f64> = BTreeMap::new();
    for term in g.terms() {
        let mut clusters = Vec::new();
        for factor in &term.factors {
            clusters.extend(split_factor(factor, lat, delta)?);
        }
        clusters.sort();
        *merged.entry(clusters).or_insert(0.0) += term.coefficient;
    }
    let terms = merged
        .into_iter()
        .filter(|(_, c)| *c != 0.0)
        .map(|(clusters, coefficient)| ClusterTerm { coefficient, clusters })
        .collect();
    Ok(ClusterDecomposition {
        delta,
        source_degree: g.degree(),
        source_max_weight: g.max_weight(),
        terms,
    })
}

/// Connected components of one factor's support under dist <= delta.
fn split_factor(factor: &PauliString, lat: &Lattice, delta: usize) -> Result<Vec<PauliString>> {
    let support = factor.support();
    if support.is_empty() {
        // Identity factors contribute tr(rho) = 1 and produce no clusters.
        return Ok(Vec::new());
    }
    let k = support.len();
    let mut component = vec![usize::MAX; k];
    let mut next = 0usize;
    for start in 0..k {
        if component[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        component[start] = next;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                if component[j] == usize::MAX
                    && lat.distance(support[i], support[j])? <= delta
                {
                    component[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    let mut out = Vec::with_capacity(next);
    for c in 0..next {
        let sites: Vec<usize> = (0..k).filter(|&i| component[i] == c).map(|i| support[i]).collect();
        out.push(factor.restricted(&sites));
    }
    Ok(out)
}

impl ClusterDecomposition {
    pub fn terms(&self) -> &[ClusterTerm] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Sum of absolute merged coefficients; never exceeds the source 1-norm.
    pub fn norm1(&self) -> f64 {
        self.terms.iter().map(|t| t.coefficient.abs()).sum()
    }

    /// Cluster-string counts per term (the `b_i`).
    pub fn cluster_counts(&self) -> Vec<usize> {
        self.terms.iter().map(|t| t.clusters.len()).collect()
    }

    /// Rebuild an ordinary polynomial whose factors are the cluster strings.
    pub fn to_polynomial(&self) -> ObservablePolynomial {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let factors = if t.clusters.is_empty() {
                    vec![PauliString::identity()]
                } else {
                    t.clusters.clone()
                };
                Term::new(t.coefficient, factors).expect("cluster terms are well-formed")
            })
            .collect();
        ObservablePolynomial::new(terms)
    }

    /// Evaluate the decomposed polynomial against an expectation source.
    pub fn evaluate(&self, src: &impl ExpectationSource) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let prod: f64 = t.clusters.iter().map(|p| src.pauli_expectation(p)).product();
                t.coefficient * prod
            })
            .sum()
    }
}

/// Local cover number: the largest, over terms, of the fewest groups the
/// term's clusters can be partitioned into such that each group fits inside a
/// single sliding window of width `zeta`.
///
/// Exhaustive (bitmask set-partition) search for terms with at most
/// [`EXACT_COVER_LIMIT`] clusters; the greedy upper bound takes over beyond
/// that and clears the `exact` flag.
pub fn local_cover_number(
    dec: &ClusterDecomposition,
    lat: &Lattice,
    zeta: usize,
) -> Result<CoverNumber> {
    if dec.is_empty() {
        return Err(Error::InvalidArgument("cover number of an empty decomposition".into()));
    }
    let mut value = 0usize;
    let mut exact = true;
    for term in &dec.terms {
        let supports: Vec<Vec<usize>> =
            term.clusters.iter().map(PauliString::support).collect();
        check_coverable(&supports, lat, zeta)?;
        let a = if supports.len() <= EXACT_COVER_LIMIT {
            exact_cover(&supports, lat, zeta)?
        } else {
            exact = false;
            greedy_cover(&supports, lat, zeta)?
        };
        value = value.max(a);
    }
    Ok(CoverNumber { value, exact })
}

/// Greedy upper bound for the same quantity, available at any term size so it
/// can be cross-checked against the exhaustive search.
pub fn local_cover_number_greedy(
    dec: &ClusterDecomposition,
    lat: &Lattice,
    zeta: usize,
) -> Result<CoverNumber> {
    if dec.is_empty() {
        return Err(Error::InvalidArgument("cover number of an empty decomposition".into()));
    }
    let mut value = 0usize;
    for term in &dec.terms {
        let supports: Vec<Vec<usize>> =
            term.clusters.iter().map(PauliString::support).collect();
        check_coverable(&supports, lat, zeta)?;
        value = value.max(greedy_cover(&supports, lat, zeta)?);
    }
    Ok(CoverNumber { value, exact: false })
}

/// Every individual cluster must fit in some window, else no cover exists.
fn check_coverable(supports: &[Vec<usize>], lat: &Lattice, zeta: usize) -> Result<()> {
    for s in supports {
        if !s.is_empty() && !lat.fits_in_window(s, zeta)? {
            return Err(Error::LocalityViolation(format!(
                "cluster on sites {s:?} does not fit in any window of width {zeta}"
            )));
        }
    }
    Ok(())
}

/// Minimum partition into window-coverable groups via subset-mask DP.
fn exact_cover(supports: &[Vec<usize>], lat: &Lattice, zeta: usize) -> Result<usize> {
    let b = supports.len();
    if b == 0 {
        return Ok(0);
    }
    let full = (1usize << b) - 1;
    // feasible[mask]: the union of supports in `mask` fits in one window.
    let mut feasible = vec![false; full + 1];
    let mut union = vec![0usize; 0];
    for mask in 1..=full {
        union.clear();
        for (i, s) in supports.iter().enumerate() {
            if mask & (1 << i) != 0 {
                union.extend_from_slice(s);
            }
        }
        feasible[mask] = union.is_empty() || lat.fits_in_window(&union, zeta)?;
    }
    let mut dp = vec![usize::MAX; full + 1];
    dp[0] = 0;
    for mask in 1..=full {
        let low = mask & mask.wrapping_neg();
        // Enumerate submasks of `mask` that contain its lowest set bit.
        let mut sub = mask;
        let mut best = usize::MAX;
        while sub != 0 {
            if sub & low != 0 && feasible[sub] && dp[mask ^ sub] != usize::MAX {
                best = best.min(dp[mask ^ sub] + 1);
            }
            sub = (sub - 1) & mask;
        }
        dp[mask] = best;
    }
    if dp[full] == usize::MAX {
        // Unreachable after check_coverable: singletons are always feasible.
        return Err(Error::LocalityViolation("no window cover exists".into()));
    }
    Ok(dp[full])
}

/// Greedy upper bound. On 1D rings: cut the ring at every cluster start and
/// sweep-pack by leftmost site, keeping the best cut (optimal whenever some
/// optimal cover leaves a gap on the ring). Higher dimensions use
/// first-fit-decreasing with window-feasibility checks.
fn greedy_cover(supports: &[Vec<usize>], lat: &Lattice, zeta: usize) -> Result<usize> {
    let nonempty: Vec<&Vec<usize>> = supports.iter().filter(|s| !s.is_empty()).collect();
    if nonempty.is_empty() {
        return Ok(0);
    }
    if lat.num_axes() == 1 {
        let n = lat.num_sites();
        let mut best = usize::MAX;
        for cut in nonempty.iter().map(|s| s[0]) {
            // Linearize positions relative to the cut, then sweep.
            let mut items: Vec<(usize, usize)> = nonempty
                .iter()
                .map(|s| {
                    let lo = s.iter().map(|&x| (x + n - cut) % n).min().unwrap();
                    let hi = s.iter().map(|&x| (x + n - cut) % n).max().unwrap();
                    (lo, hi)
                })
                .collect();
            items.sort_unstable();
            let mut groups = 0usize;
            let mut idx = 0usize;
            while idx < items.len() {
                groups += 1;
                let start = items[idx].0;
                let mut hi = items[idx].1;
                idx += 1;
                while idx < items.len() && items[idx].1.max(hi) < start + zeta {
                    hi = hi.max(items[idx].1);
                    idx += 1;
                }
            }
            best = best.min(groups);
        }
        Ok(best)
    } else {
        let mut order: Vec<usize> = (0..supports.len()).filter(|&i| !supports[i].is_empty()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(supports[i].len()));
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in order {
            let mut placed = false;
            for group in groups.iter_mut() {
                let mut union = group.clone();
                union.extend_from_slice(&supports[i]);
                if lat.fits_in_window(&union, zeta)? {
                    *group = union;
                    placed = true;
                    break;
                }
            }
            if !placed {
                groups.push(supports[i].clone());
            }
        }
        Ok(groups.len())
    }
}

/// Local factor count: `max(p, min_i b_i)` over the decomposition's terms,
/// where `p` is the source degree and `b_i` the per-term cluster count.
pub fn local_factor_count(dec: &ClusterDecomposition) -> Result<usize> {
    if dec.is_empty() {
        return Err(Error::InvalidArgument("factor count of an empty decomposition".into()));
    }
    let min_b = dec.cluster_counts().into_iter().min().unwrap_or(0);
    Ok(dec.source_degree.max(min_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::PauliLetter::{X, Y, Z};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn ps(pairs: &[(usize, crate::pauli::PauliLetter)]) -> PauliString {
        PauliString::new(pairs.iter().copied()).unwrap()
    }

    fn poly(terms: Vec<(f64, Vec<PauliString>)>) -> ObservablePolynomial {
        ObservablePolynomial::new(
            terms
                .into_iter()
                .map(|(c, f)| Term::new(c, f).unwrap())
                .collect(),
        )
    }

    #[test]
    fn splits_factor_into_distance_components() {
        let lat = Lattice::ring(12).unwrap();
        let g = poly(vec![(1.0, vec![ps(&[(0, X), (1, X), (6, X)])])]);
        let dec = cluster_approximation(&g, &lat, 2).unwrap();
        assert_eq!(dec.terms().len(), 1);
        let t = &dec.terms()[0];
        assert_eq!(t.clusters.len(), 2);
        assert_eq!(t.clusters[0].to_string(), "X0 X1");
        assert_eq!(t.clusters[1].to_string(), "X6");
        // Wide enough range keeps the factor whole.
        let whole = cluster_approximation(&g, &lat, 5).unwrap();
        assert_eq!(whole.terms()[0].clusters.len(), 1);
        assert!(cluster_approximation(&g, &lat, 0).is_err());
    }

    #[test]
    fn wraparound_distances_count() {
        let lat = Lattice::ring(12).unwrap();
        // Sites 0 and 11 are adjacent across the seam.
        let g = poly(vec![(1.0, vec![ps(&[(0, Z), (11, Z)])])]);
        let dec = cluster_approximation(&g, &lat, 1).unwrap();
        assert_eq!(dec.terms()[0].clusters.len(), 1);
    }

    #[test]
    fn identical_cluster_multisets_merge() {
        let lat = Lattice::ring(12).unwrap();
        let g = poly(vec![
            (0.5, vec![ps(&[(0, X), (1, X), (6, X)])]),
            (0.25, vec![ps(&[(0, X), (1, X)]), ps(&[(6, X)])]),
        ]);
        let dec = cluster_approximation(&g, &lat, 2).unwrap();
        assert_eq!(dec.terms().len(), 1);
        assert!((dec.terms()[0].coefficient - 0.75).abs() < 1e-15);
        assert!(dec.norm1() <= g.norm1() + 1e-15);

        // Exactly cancelling coefficients drop the merged term.
        let cancel = poly(vec![
            (0.5, vec![ps(&[(0, X), (1, X), (6, X)])]),
            (-0.5, vec![ps(&[(0, X), (1, X)]), ps(&[(6, X)])]),
        ]);
        assert!(cluster_approximation(&cancel, &lat, 2).unwrap().is_empty());
    }

    #[test]
    fn norm_never_grows_on_random_polynomials() {
        let lat = Lattice::ring(16).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let terms = (0..rng.random_range(1..4usize))
                .map(|_| {
                    let factors = (0..rng.random_range(1..3usize))
                        .map(|_| {
                            let w = rng.random_range(1..4usize);
                            let mut sites: Vec<usize> = Vec::new();
                            while sites.len() < w {
                                let s = rng.random_range(0..16usize);
                                if !sites.contains(&s) {
                                    sites.push(s);
                                }
                            }
                            ps(&sites
                                .iter()
                                .map(|&s| (s, [X, Y, Z][rng.random_range(0..3usize)]))
                                .collect::<Vec<_>>())
                        })
                        .collect();
                    (rng.random_range(-1.0..1.0f64), factors)
                })
                .collect();
            let g = poly(terms);
            let delta = rng.random_range(1..5usize);
            let dec = cluster_approximation(&g, &lat, delta).unwrap();
            assert!(dec.norm1() <= g.norm1() + 1e-12);
            // Cluster supports per term stay within m*p sites in total.
            let mp = g.max_weight() * g.degree();
            for t in dec.terms() {
                let total: usize = t.clusters.iter().map(PauliString::weight).sum();
                assert!(total <= mp);
                assert!(t.clusters.len() <= mp);
            }
            // Splitting is idempotent: re-splitting the flattened form at the
            // same range changes nothing.
            let again = cluster_approximation(&dec.to_polynomial(), &lat, delta).unwrap();
            assert_eq!(again.terms(), dec.terms());
        }
    }

    #[test]
    fn cover_number_on_ring_example() {
        let lat = Lattice::ring(12).unwrap();
        let g = poly(vec![(1.0, vec![ps(&[(0, X), (1, X), (6, X)])])]);
        let dec = cluster_approximation(&g, &lat, 2).unwrap();
        let cn = local_cover_number(&dec, &lat, 4).unwrap();
        assert_eq!(cn.value, 2);
        assert!(cn.exact);
        // A window wide enough to reach both clusters brings it down to 1:
        // width 8 anchored at 6 covers {6,...,11,0,1}.
        let cn = local_cover_number(&dec, &lat, 8).unwrap();
        assert_eq!(cn.value, 1);
        // Too narrow for the two-site cluster: locality violation.
        let tight = cluster_approximation(&g, &lat, 1).unwrap();
        assert!(matches!(
            local_cover_number(&tight, &lat, 1),
            Err(Error::LocalityViolation(_))
        ));
    }

    #[test]
    fn five_cluster_product_needs_three_windows() {
        // Product of two observables on a 30-ring: P splits into three
        // clusters, Q into two; pairing windows [0..5] and [10..15] leaves one
        // cluster alone, so the cover number is exactly 3.
        let lat = Lattice::ring(30).unwrap();
        let p = ps(&[(0, X), (1, X), (10, X), (11, X), (20, X), (21, X)]);
        let q = ps(&[(3, Y), (4, Y), (13, Y), (14, Y)]);
        let g = poly(vec![(1.0, vec![p, q])]);
        assert_eq!(g.max_weight(), 6);
        assert_eq!(g.degree(), 2);
        let dec = cluster_approximation(&g, &lat, 2).unwrap();
        assert_eq!(dec.terms()[0].clusters.len(), 5);
        let cn = local_cover_number(&dec, &lat, 6).unwrap();
        assert_eq!(cn.value, 3);
        assert!(cn.exact);
        let greedy = local_cover_number_greedy(&dec, &lat, 6).unwrap();
        assert_eq!(greedy.value, 3);
    }

    #[test]
    fn greedy_matches_exact_on_random_small_terms() {
        let lat = Lattice::ring(24).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut checked = 0usize;
        for _ in 0..300 {
            let b = rng.random_range(1..=6usize);
            let mut sites_used: Vec<usize> = Vec::new();
            let mut clusters = Vec::new();
            for _ in 0..b {
                let w = rng.random_range(1..=2usize);
                let start = rng.random_range(0..24usize);
                let mut pairs = Vec::new();
                for k in 0..w {
                    let s = (start + k) % 24;
                    if sites_used.contains(&s) {
                        continue;
                    }
                    sites_used.push(s);
                    pairs.push((s, [X, Y, Z][rng.random_range(0..3usize)]));
                }
                if !pairs.is_empty() {
                    clusters.push(ps(&pairs));
                }
            }
            if clusters.is_empty() {
                continue;
            }
            let g = poly(vec![(1.0, clusters)]);
            let dec = cluster_approximation(&g, &lat, 1).unwrap();
            for zeta in [3usize, 5, 8] {
                match (
                    local_cover_number(&dec, &lat, zeta),
                    local_cover_number_greedy(&dec, &lat, zeta),
                ) {
                    (Ok(exact), Ok(greedy)) => {
                        assert!(exact.exact);
                        assert_eq!(exact.value, greedy.value, "zeta={zeta}");
                        checked += 1;
                    }
                    (Err(_), Err(_)) => {}
                    (a, b) => panic!("paths disagree on coverability: {a:?} vs {b:?}"),
                }
            }
        }
        assert!(checked > 200);
    }

    #[test]
    fn factor_count_takes_min_over_terms() {
        let lat = Lattice::ring(12).unwrap();
        let g = poly(vec![
            (0.5, vec![ps(&[(0, X), (6, X)])]),            // splits into 2 clusters
            (0.5, vec![ps(&[(0, Y)]), ps(&[(1, Y)])]),     // stays at 2 factors
        ]);
        let dec = cluster_approximation(&g, &lat, 2).unwrap();
        // p = 2, b_i = {2, 2} -> beta = 2.
        assert_eq!(local_factor_count(&dec).unwrap(), 2);

        let g2 = poly(vec![(1.0, vec![ps(&[(0, X), (1, X)])])]);
        let dec2 = cluster_approximation(&g2, &lat, 2).unwrap();
        // p = 1 and the single term stays whole: beta = max(1, 1) = 1.
        assert_eq!(local_factor_count(&dec2).unwrap(), 1);

        let empty = cluster_approximation(&ObservablePolynomial::default(), &lat, 1).unwrap();
        assert!(local_factor_count(&empty).is_err());
    }

    #[test]
    fn identity_factors_pass_through() {
        let lat = Lattice::ring(6).unwrap();
        let g = poly(vec![(2.0, vec![PauliString::identity(), ps(&[(0, Z)])])]);
        let dec = cluster_approximation(&g, &lat, 1).unwrap();
        assert_eq!(dec.terms()[0].clusters.len(), 1);
        assert_eq!(dec.to_polynomial().terms()[0].factors.len(), 1);
    }
}
