//! The quasilattice Γ generated by the 2q unit vectors `k_j = exp(iπ(j-1)/q)`.
//!
//! Sites are produced by breadth-first expansion from the origin, so the
//! layer at which a key first appears is its word length `N_k`. The BFS has
//! to run over the whole ball `N_k ≤ n_max` even when a radius cut is
//! requested: shortest words may leave the disc and come back.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::ring::{check_q, Canon, CyclotomicBasis, RealRing, RingElement};

/// Default ceiling on the number of BFS nodes.
pub const DEFAULT_CAPACITY: usize = 5_000_000;

/// Relative slack on `|k| ≤ k_cut`, so that `k_cut = √5` given as a float
/// keeps the sites with `|k|² = 5` exactly.
pub const KCUT_SLACK: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct LatticeSite {
    /// Coefficients over `k_1..k_q` after folding `k_{j+q} = -k_j`.
    pub word: Vec<i32>,
    pub canon: Canon,
    pub embed: [f64; 2],
    /// Exact `|k|²`.
    pub norm2: RingElement,
    pub n_word: u32,
}

impl LatticeSite {
    pub fn norm(&self) -> f64 {
        self.embed[0].hypot(self.embed[1])
    }
}

#[derive(Clone, Debug)]
pub struct LatticeAtlas {
    q: u32,
    n_max: u32,
    k_cut: Option<f64>,
    ring: RealRing,
    basis: CyclotomicBasis,
    sites: Vec<LatticeSite>,
    index: FxHashMap<Canon, u32>,
    gram: Vec<Vec<f64>>,
    rotation: Vec<u32>,
    negation: Vec<u32>,
    orbit_of: Vec<u32>,
    orbits: Vec<Vec<u32>>,
    generators: Vec<Option<u32>>,
}

/// Builds the atlas of all `k` with `N_k ≤ n_max` (and `|k| ≤ k_cut`).
pub fn build_atlas(q: u32, n_max: u32, k_cut: Option<f64>) -> Result<LatticeAtlas> {
    build_atlas_with_capacity(q, n_max, k_cut, DEFAULT_CAPACITY)
}

pub fn build_atlas_with_capacity(
    q: u32,
    n_max: u32,
    k_cut: Option<f64>,
    capacity: usize,
) -> Result<LatticeAtlas> {
    check_q(q)?;
    if n_max < 1 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    if let Some(r) = k_cut {
        if !(r >= 1.0) || !r.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "k_cut = {r} must be finite and at least 1 so the unit vectors are kept"
            )));
        }
    }
    let ring = RealRing::new(q)?;
    let basis = CyclotomicBasis::new(q)?;
    let qs = q as usize;

    // Flat BFS storage: key, folded word and layer per node.
    let mut keys: Vec<Canon> = vec![Canon::ZERO];
    let mut words: Vec<i32> = vec![0; qs];
    let mut layer: Vec<u32> = vec![0];
    let mut seen: FxHashMap<Canon, u32> = FxHashMap::default();
    seen.insert(Canon::ZERO, 0);
    let mut start = 0usize;
    for n in 1..=n_max {
        let end = keys.len();
        for parent in start..end {
            for (g, gen) in basis.generators().iter().enumerate() {
                let key = keys[parent].checked_add(gen).ok_or(Error::KeyOverflow)?;
                if seen.contains_key(&key) {
                    continue;
                }
                if keys.len() >= capacity {
                    return Err(Error::Capacity { limit: capacity });
                }
                seen.insert(key, keys.len() as u32);
                keys.push(key);
                layer.push(n);
                let base = parent * qs;
                words.extend_from_within(base..base + qs);
                let w = words.len() - qs;
                if g < qs {
                    words[w + g] += 1;
                } else {
                    words[w + g - qs] -= 1;
                }
            }
        }
        start = end;
    }
    drop(seen);

    let dirs: Vec<[f64; 2]> = (0..qs)
        .map(|j| {
            let a = j as f64 * PI / q as f64;
            [a.cos(), a.sin()]
        })
        .collect();
    let cut2 = k_cut.map(|r| r * r * (1.0 + KCUT_SLACK));
    let mut sites = Vec::new();
    for (i, &key) in keys.iter().enumerate() {
        let word = &words[i * qs..(i + 1) * qs];
        let norm2 = ring.norm_sq_of_word(word);
        if let Some(c2) = cut2 {
            if ring.eval(&norm2) > c2 {
                continue;
            }
        }
        let mut embed = [0.0, 0.0];
        for (m, d) in word.iter().zip(&dirs) {
            embed[0] += *m as f64 * d[0];
            embed[1] += *m as f64 * d[1];
        }
        sites.push(LatticeSite { word: word.to_vec(), canon: key, embed, norm2, n_word: layer[i] });
    }
    drop(keys);
    drop(words);
    sites.sort_by(|a, b| a.n_word.cmp(&b.n_word).then_with(|| a.canon.cmp(&b.canon)));

    let mut index = FxHashMap::default();
    index.reserve(sites.len());
    for (i, s) in sites.iter().enumerate() {
        index.insert(s.canon, i as u32);
    }

    let lookup = |c: &Canon| -> Result<u32> {
        index
            .get(c)
            .copied()
            .ok_or_else(|| Error::Inconsistent(format!("atlas not closed at {c:?}")))
    };
    let mut rotation = Vec::with_capacity(sites.len());
    let mut negation = Vec::with_capacity(sites.len());
    for s in &sites {
        rotation.push(lookup(&basis.rotate(&s.canon)?)?);
        negation.push(lookup(&s.canon.neg())?);
    }

    let mut orbit_of = vec![u32::MAX; sites.len()];
    let mut orbits = Vec::new();
    for i in 0..sites.len() {
        if orbit_of[i] != u32::MAX {
            continue;
        }
        let id = orbits.len() as u32;
        let mut orbit = vec![i as u32];
        orbit_of[i] = id;
        let mut j = rotation[i] as usize;
        while j != i {
            orbit_of[j] = id;
            orbit.push(j as u32);
            j = rotation[j] as usize;
        }
        orbits.push(orbit);
    }

    let generators = basis.generators().iter().map(|g| index.get(g).copied()).collect();
    let gram = (0..qs)
        .map(|i| (0..qs).map(|j| ((i as f64 - j as f64) * PI / q as f64).cos()).collect())
        .collect();

    Ok(LatticeAtlas {
        q,
        n_max,
        k_cut,
        ring,
        basis,
        sites,
        index,
        gram,
        rotation,
        negation,
        orbit_of,
        orbits,
        generators,
    })
}

impl LatticeAtlas {
    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn k_cut(&self) -> Option<f64> {
        self.k_cut
    }

    pub fn ring(&self) -> &RealRing {
        &self.ring
    }

    pub fn basis(&self) -> &CyclotomicBasis {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[LatticeSite] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> &LatticeSite {
        &self.sites[i]
    }

    pub fn index_of(&self, key: &Canon) -> Option<usize> {
        self.index.get(key).map(|&i| i as usize)
    }

    /// Index of `k_i + k_j`, if that point is in the atlas.
    pub fn sum_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = self.sites[i].canon.checked_add(&self.sites[j].canon)?;
        self.index_of(&key)
    }

    /// Index of `k_i - k_j`, if that point is in the atlas.
    pub fn diff_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = self.sites[i].canon.checked_sub(&self.sites[j].canon)?;
        self.index_of(&key)
    }

    pub fn origin(&self) -> usize {
        0
    }

    /// Site of the unit vector `k_{j+1}`, `0 ≤ j < 2q`.
    pub fn generator(&self, j: usize) -> usize {
        self.generators[j].expect("unit vectors are in every atlas") as usize
    }

    pub fn is_generator(&self, i: usize) -> bool {
        self.sites[i].n_word == 1
    }

    pub fn gram(&self) -> &[Vec<f64>] {
        &self.gram
    }

    /// Index of `R_{π/q} k`.
    pub fn rotated(&self, i: usize) -> usize {
        self.rotation[i] as usize
    }

    pub fn negated(&self, i: usize) -> usize {
        self.negation[i] as usize
    }

    pub fn orbit_of(&self, i: usize) -> usize {
        self.orbit_of[i] as usize
    }

    /// Rotation orbits, each listed in rotation order starting from its
    /// representative (the smallest index).
    pub fn orbits(&self) -> &[Vec<u32>] {
        &self.orbits
    }

    pub fn norm2_value(&self, i: usize) -> f64 {
        self.ring.eval(&self.sites[i].norm2)
    }

    /// `|k|² - 1` exactly and as a float. The float is evaluated from the
    /// exact difference, not from `|k|²`.
    pub fn small_divisor(&self, i: usize) -> (RingElement, f64) {
        let d = self.sites[i].norm2 - RingElement::from_int(1);
        (d, self.ring.eval(&d))
    }

    /// True exactly when `|k| = 1`.
    pub fn on_unit_circle(&self, i: usize) -> bool {
        self.small_divisor(i).0.is_zero()
    }

    /// Symbol of `(1+Δ)²` at site `i`.
    pub fn l0_symbol(&self, i: usize) -> f64 {
        let (d, v) = self.small_divisor(i);
        if d.is_zero() {
            0.0
        } else {
            v * v
        }
    }

    /// The site obtained by rotating by `steps·π/q`.
    pub fn rotate_site(&self, i: usize, steps: i64) -> Result<usize> {
        let turns = steps.rem_euclid(2 * self.q as i64);
        let mut key = self.sites[i].canon;
        for _ in 0..turns {
            key = self.basis.rotate(&key)?;
        }
        self.index_of(&key).ok_or_else(|| Error::NotInAtlas(format!("{key:?}")))
    }

    pub fn census(&self) -> Census {
        let mut counts = vec![0usize; self.n_max as usize + 1];
        for s in &self.sites {
            counts[s.n_word as usize] += 1;
        }
        let exp = self.q as i32 - 1;
        let c1 = counts
            .iter()
            .enumerate()
            .skip(1)
            .map(|(n, &c)| c as f64 / (n as f64).powi(exp))
            .fold(0.0, f64::max);
        Census { counts, c1 }
    }

    /// Per-shell minima of `||k|² - 1|` with unit vectors left out, and a
    /// power-law fit of the minima.
    pub fn divisor_spectrum(&self) -> DivisorSpectrum {
        let shells = self.n_max as usize + 1;
        let mut best: Vec<Option<(f64, usize, bool)>> = vec![None; shells];
        let mut on_circle = Vec::new();
        for (i, s) in self.sites.iter().enumerate() {
            if s.n_word == 1 {
                continue;
            }
            let (d, v) = self.small_divisor(i);
            let zero = d.is_zero();
            if zero {
                on_circle.push(i);
            }
            let v = if zero { 0.0 } else { v.abs() };
            let slot = &mut best[s.n_word as usize];
            let better = match slot {
                None => true,
                Some((b, bi, _)) => match v.partial_cmp(b) {
                    Some(Ordering::Less) => true,
                    Some(Ordering::Equal) => self.sites[i].canon < self.sites[*bi].canon,
                    _ => false,
                },
            };
            if better {
                *slot = Some((v, i, zero));
            }
        }
        let rows: Vec<DivisorRow> = best
            .iter()
            .enumerate()
            .filter_map(|(n, b)| {
                b.map(|(min, site, exact_zero)| DivisorRow { n: n as u32, min, site, exact_zero })
            })
            .collect();

        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.n >= 1 && !r.exact_zero)
            .map(|r| ((r.n as f64).ln(), r.min.ln()))
            .collect();
        let (exponent, intercept) = least_squares(&pts);
        let two_l0 = 2 * self.ring.l0() as i32;
        let c = rows
            .iter()
            .filter(|r| r.n >= 1)
            .map(|r| r.min * (r.n as f64).powi(two_l0))
            .fold(f64::INFINITY, f64::min);
        DivisorSpectrum { rows, exponent, intercept, c, l0: self.ring.l0(), on_circle }
    }

    /// Compact description used by file headers.
    pub fn header(&self) -> AtlasHeader {
        AtlasHeader {
            q: self.q,
            n_max: self.n_max,
            k_cut: self.k_cut,
            min_poly: self.ring.minimal_polynomial().coeffs().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AtlasHeader {
    pub q: u32,
    pub n_max: u32,
    pub k_cut: Option<f64>,
    pub min_poly: Vec<i64>,
}

#[derive(Clone, Debug)]
pub struct Census {
    /// Number of sites in each shell `N = 0..=n_max`.
    pub counts: Vec<usize>,
    /// Smallest `c₁` with `count_N ≤ c₁ N^{q-1}` on every shell `N ≥ 1`.
    pub c1: f64,
}

#[derive(Clone, Debug)]
pub struct DivisorRow {
    pub n: u32,
    pub min: f64,
    pub site: usize,
    pub exact_zero: bool,
}

#[derive(Clone, Debug)]
pub struct DivisorSpectrum {
    pub rows: Vec<DivisorRow>,
    /// Slope of `ln(min)` against `ln(N)`.
    pub exponent: f64,
    pub intercept: f64,
    /// Largest `c` with `min_N ≥ c / N^{2 l₀}` on every tabulated shell.
    pub c: f64,
    pub l0: usize,
    /// Non-generator sites found exactly on the unit circle.
    pub on_circle: Vec<usize>,
}

fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// All ordered quadruples of 0-based generator indices `(j, l, r, s)` with
/// `k_j + k_l + k_r + k_s = 0`, decided on exact keys.
pub fn resonant_quadruples(q: u32) -> Result<Vec<[usize; 4]>> {
    let basis = CyclotomicBasis::new(q)?;
    let g = basis.generators();
    let n = g.len();
    let mut out = Vec::new();
    for j in 0..n {
        for l in 0..n {
            let a = g[j].checked_add(&g[l]).ok_or(Error::KeyOverflow)?;
            for r in 0..n {
                let b = a.checked_add(&g[r]).ok_or(Error::KeyOverflow)?;
                for s in 0..n {
                    if b.checked_add(&g[s]).is_some_and(|c| c.is_zero()) {
                        out.push([j, l, r, s]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// True when the quadruple splits into two pairs of opposite unit vectors.
pub fn has_two_opposite_pairs(q: u32, quad: &[usize; 4]) -> bool {
    let opp = |a: usize, b: usize| (a + q as usize) % (2 * q as usize) == b;
    (opp(quad[0], quad[1]) && opp(quad[2], quad[3]))
        || (opp(quad[0], quad[2]) && opp(quad[1], quad[3]))
        || (opp(quad[0], quad[3]) && opp(quad[1], quad[2]))
}
