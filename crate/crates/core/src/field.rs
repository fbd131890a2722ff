//! Real quasiperiodic functions `Σ u^{(k)} e^{ik·x}` stored by their
//! coefficients on an atlas.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::operator::{Part, SplitLabels};
use crate::quasilattice::LatticeAtlas;
use crate::ring::Canon;

/// Sobolev exponent `s ≥ 0` of the weight `(1 + N_k²)^s`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct SobolevIndex(f64);

impl SobolevIndex {
    pub const ZERO: SobolevIndex = SobolevIndex(0.0);

    pub fn new(s: f64) -> Result<Self> {
        if s >= 0.0 && s.is_finite() {
            Ok(SobolevIndex(s))
        } else {
            Err(Error::OutOfRange { what: "Sobolev index", value: s })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Weights indexed by word length `0..=n_max`.
    pub fn weights(self, n_max: u32) -> Vec<f64> {
        (0..=n_max).map(|n| (self.0 * (1.0 + (n as f64).powi(2)).ln()).exp()).collect()
    }
}

/// How `multiply` treats products landing outside the target atlas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TruncationMode {
    /// Fail when the lost part has H₀ norm above `threshold`.
    Strict { threshold: f64 },
    /// Drop and report.
    Lossy,
}

impl TruncationMode {
    pub const EXACT: TruncationMode = TruncationMode::Strict { threshold: 0.0 };
}

#[derive(Clone, Debug)]
pub struct Product {
    pub field: SpectralField,
    /// H₀ norm of the coefficients that fell outside the target.
    pub truncation_loss: f64,
}

#[derive(Clone, Debug)]
pub struct SpectralField {
    atlas: Arc<LatticeAtlas>,
    coeffs: BTreeMap<u32, f64>,
    symmetric: bool,
}

impl SpectralField {
    pub fn zeros(atlas: Arc<LatticeAtlas>) -> Self {
        SpectralField { atlas, coeffs: BTreeMap::new(), symmetric: true }
    }

    /// Builds a field from `(site, value)` pairs; zeros are dropped and
    /// repeated sites accumulate. The symmetry flag is derived.
    pub fn from_pairs(atlas: Arc<LatticeAtlas>, pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut coeffs = BTreeMap::new();
        for (i, v) in pairs {
            assert!(i < atlas.len(), "site {i} outside atlas");
            *coeffs.entry(i as u32).or_insert(0.0) += v;
        }
        coeffs.retain(|_, v| *v != 0.0);
        let mut f = SpectralField { atlas, coeffs, symmetric: false };
        f.symmetric = f.symmetry_defect() == 0.0;
        f
    }

    /// Dense coefficient vector over the whole atlas.
    pub fn from_dense(atlas: Arc<LatticeAtlas>, values: &[f64]) -> Self {
        assert_eq!(values.len(), atlas.len());
        Self::from_pairs(atlas, values.iter().copied().enumerate())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.atlas.len()];
        for (&i, &v) in &self.coeffs {
            out[i as usize] = v;
        }
        out
    }

    pub fn atlas(&self) -> &Arc<LatticeAtlas> {
        &self.atlas
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn get(&self, i: usize) -> f64 {
        self.coeffs.get(&(i as u32)).copied().unwrap_or(0.0)
    }

    /// Coefficient at a point given by key; zero off the atlas.
    pub fn get_canon(&self, key: &Canon) -> f64 {
        self.atlas.index_of(key).map_or(0.0, |i| self.get(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.coeffs.iter().map(|(&i, &v)| (i as usize, v))
    }

    /// Number of stored (nonzero) coefficients.
    pub fn support_len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn max_word_length(&self) -> u32 {
        self.iter().map(|(i, _)| self.atlas.site(i).n_word).max().unwrap_or(0)
    }

    /// Coefficient at `k = 0`.
    pub fn mean(&self) -> f64 {
        self.get(self.atlas.origin())
    }

    fn same_atlas(&self, other: &SpectralField) -> Result<()> {
        if Arc::ptr_eq(&self.atlas, &other.atlas) {
            Ok(())
        } else {
            Err(Error::AtlasMismatch)
        }
    }

    fn with_coeffs(&self, coeffs: BTreeMap<u32, f64>, symmetric: bool) -> Self {
        SpectralField { atlas: self.atlas.clone(), coeffs, symmetric }
    }

    pub fn hs_norm(&self, s: SobolevIndex) -> f64 {
        self.hs_inner(self, s).expect("same atlas").sqrt()
    }

    pub fn hs_inner(&self, other: &SpectralField, s: SobolevIndex) -> Result<f64> {
        self.same_atlas(other)?;
        let w = s.weights(self.atlas.n_max());
        let (small, large) =
            if self.coeffs.len() <= other.coeffs.len() { (self, other) } else { (other, self) };
        Ok(small
            .coeffs
            .iter()
            .filter_map(|(i, a)| {
                large.coeffs.get(i).map(|b| w[self.atlas.site(*i as usize).n_word as usize] * a * b)
            })
            .sum())
    }

    pub fn scale(&self, c: f64) -> SpectralField {
        let coeffs = self.coeffs.iter().map(|(&i, &v)| (i, c * v)).filter(|p| p.1 != 0.0).collect();
        self.with_coeffs(coeffs, self.symmetric)
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: f64, other: &SpectralField) -> Result<SpectralField> {
        self.same_atlas(other)?;
        let mut coeffs = self.coeffs.clone();
        for (&i, &v) in &other.coeffs {
            *coeffs.entry(i).or_insert(0.0) += c * v;
        }
        coeffs.retain(|_, v| *v != 0.0);
        Ok(self.with_coeffs(coeffs, self.symmetric && other.symmetric))
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.axpy(-1.0, other)
    }

    /// Adds `c` to the mean coefficient.
    pub fn add_constant(&self, c: f64) -> SpectralField {
        let mut coeffs = self.coeffs.clone();
        *coeffs.entry(self.atlas.origin() as u32).or_insert(0.0) += c;
        coeffs.retain(|_, v| *v != 0.0);
        self.with_coeffs(coeffs, self.symmetric)
    }

    /// Coefficientwise map `u^{(k)} ↦ g(k, u^{(k)})`.
    pub fn map_sites(&self, g: impl Fn(usize, f64) -> f64) -> SpectralField {
        let coeffs: BTreeMap<u32, f64> = self
            .coeffs
            .iter()
            .map(|(&i, &v)| (i, g(i as usize, v)))
            .filter(|p| p.1 != 0.0)
            .collect();
        let mut f = self.with_coeffs(coeffs, false);
        f.symmetric = f.symmetry_defect() == 0.0;
        f
    }

    /// Action of `(1+Δ)²`, i.e. multiplication by `(1 - |k|²)²`.
    pub fn apply_l0(&self) -> SpectralField {
        let atlas = self.atlas.clone();
        self.map_sites(|i, v| atlas.l0_symbol(i) * v)
    }

    /// Re-indexes the field onto another atlas of the same lattice.
    pub fn transfer(&self, target: &Arc<LatticeAtlas>) -> Result<SpectralField> {
        if target.q() != self.atlas.q() {
            return Err(Error::AtlasMismatch);
        }
        let mut coeffs = BTreeMap::new();
        for (i, v) in self.iter() {
            let key = &self.atlas.site(i).canon;
            let j = target.index_of(key).ok_or_else(|| Error::NotInAtlas(format!("{key:?}")))?;
            coeffs.insert(j as u32, v);
        }
        Ok(SpectralField { atlas: target.clone(), coeffs, symmetric: self.symmetric })
    }

    /// Quasilattice convolution onto `target`.
    pub fn multiply(
        &self,
        other: &SpectralField,
        target: &Arc<LatticeAtlas>,
        mode: TruncationMode,
    ) -> Result<Product> {
        if self.atlas.q() != target.q() || other.atlas.q() != target.q() {
            return Err(Error::AtlasMismatch);
        }
        let mut acc = vec![0.0f64; target.len()];
        let mut hit = vec![false; target.len()];
        let mut lost: FxHashMap<Canon, f64> = FxHashMap::default();
        let rhs: Vec<(Canon, f64)> =
            other.iter().map(|(j, b)| (other.atlas.site(j).canon, b)).collect();
        for (i, a) in self.iter() {
            let ki = self.atlas.site(i).canon;
            for (kj, b) in &rhs {
                let key = ki.checked_add(kj).ok_or(Error::KeyOverflow)?;
                match target.index_of(&key) {
                    Some(t) => {
                        acc[t] += a * b;
                        hit[t] = true;
                    }
                    None => *lost.entry(key).or_insert(0.0) += a * b,
                }
            }
        }
        let loss = lost.values().map(|v| v * v).sum::<f64>().sqrt();
        if let TruncationMode::Strict { threshold } = mode {
            if loss > threshold {
                return Err(Error::Truncation { loss, threshold });
            }
        }
        let coeffs = acc
            .into_iter()
            .zip(hit)
            .enumerate()
            .filter(|(_, (v, h))| *h && *v != 0.0)
            .map(|(t, (v, _))| (t as u32, v))
            .collect();
        let field = SpectralField {
            atlas: target.clone(),
            coeffs,
            symmetric: self.symmetric && other.symmetric,
        };
        Ok(Product { field, truncation_loss: loss })
    }

    /// Product on this field's own atlas, failing on any loss.
    pub fn multiply_exact(&self, other: &SpectralField) -> Result<SpectralField> {
        let target = self.atlas.clone();
        Ok(self.multiply(other, &target, TruncationMode::EXACT)?.field)
    }

    /// Keeps the coefficients in the given part of the splitting.
    pub fn project(&self, labels: &SplitLabels, part: Part) -> Result<SpectralField> {
        if !labels.covers(&self.atlas) {
            return Err(Error::Unclassified);
        }
        let coeffs = self
            .coeffs
            .iter()
            .filter(|(&i, _)| part.contains(labels.region(i as usize)))
            .map(|(&i, &v)| (i, v))
            .collect();
        let symmetric = self.symmetric && matches!(part, Part::P0 | Part::P1 | Part::P2);
        Ok(self.with_coeffs(coeffs, symmetric))
    }

    /// Permutes coefficients by `k ↦ R_{π/q} k`.
    pub fn rotate_field(&self) -> SpectralField {
        let coeffs = self.coeffs.iter().map(|(&i, &v)| (self.atlas.rotated(i as usize) as u32, v)).collect();
        self.with_coeffs(coeffs, self.symmetric)
    }

    /// `max_k |u^{(k)} - u^{(-k)}|`.
    pub fn reality_defect(&self) -> f64 {
        self.iter()
            .map(|(i, v)| (v - self.get(self.atlas.negated(i))).abs())
            .fold(0.0, f64::max)
    }

    /// `max_k |u^{(k)} - u^{(Rk)}|`.
    pub fn symmetry_defect(&self) -> f64 {
        self.iter()
            .map(|(i, v)| (v - self.get(self.atlas.rotated(i))).abs())
            .fold(0.0, f64::max)
    }

    /// Value `Σ u^{(k)} cos(k·x)` at one point.
    pub fn eval_at(&self, x: [f64; 2]) -> f64 {
        self.iter()
            .map(|(i, v)| {
                let e = self.atlas.site(i).embed;
                v * (e[0] * x[0] + e[1] * x[1]).cos()
            })
            .sum()
    }

    /// Samples the real function on a `resolution × resolution` grid over
    /// `[-window, window]²`. Row `r` has `y = -window + r·h`.
    pub fn sample(&self, window: f64, resolution: usize) -> Result<Grid> {
        if resolution < 2 {
            return Err(Error::InvalidParameter("resolution must be at least 2".into()));
        }
        let h = 2.0 * window / (resolution - 1) as f64;
        // ±k pairs fold into one cosine with the mean of the two coefficients.
        let mut modes: Vec<([f64; 2], f64)> = Vec::new();
        for (i, v) in self.iter() {
            let j = self.atlas.negated(i);
            if j == i {
                modes.push((self.atlas.site(i).embed, v));
            } else if i < j || self.get(j) == 0.0 {
                let e = self.atlas.site(i).embed;
                modes.push((e, v + self.get(j)));
            }
        }
        let data: Vec<f64> = (0..resolution)
            .into_par_iter()
            .flat_map_iter(|r| {
                let y = -window + r as f64 * h;
                let x0 = -window;
                let mut row = vec![0.0; resolution];
                for (e, c) in &modes {
                    let (mut s, mut cs) = (e[0] * x0 + e[1] * y).sin_cos();
                    let (ds, dc) = (e[0] * h).sin_cos();
                    for cell in row.iter_mut() {
                        *cell += c * cs;
                        let ncs = cs * dc - s * ds;
                        s = s * dc + cs * ds;
                        cs = ncs;
                    }
                }
                row
            })
            .collect();
        Ok(Grid { resolution, window, data })
    }
}

/// Square sample grid stored row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub resolution: usize,
    pub window: f64,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.resolution + col]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Random field with coefficients uniform in `[-1, 1]` on a random subset of
/// the sites with `N_k ≤ max_word`.
pub fn random_field(atlas: &Arc<LatticeAtlas>, max_word: u32, density: f64, rng: &mut impl Rng) -> SpectralField {
    let pairs: Vec<(usize, f64)> = (0..atlas.len())
        .filter(|&i| atlas.site(i).n_word <= max_word)
        .filter_map(|i| rng.gen_bool(density).then(|| (i, rng.gen_range(-1.0..1.0))))
        .collect();
    SpectralField::from_pairs(atlas.clone(), pairs)
}

/// Observed constants of the two product inequalities over random pairs.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ProductMonitor {
    pub pairs: usize,
    pub seed: u64,
    pub s: f64,
    /// `max ‖UV‖₀ / (‖U‖_s‖V‖₀)`.
    pub max_ratio: f64,
    /// `max ‖UV‖_s / (‖U‖_s‖V‖_{s'} + ‖U‖_{s'}‖V‖_s)` with `s' = s`.
    pub moser_nirenberg: f64,
}

/// Random pairs supported on `N_k ≤ max_word`, multiplied exactly on a
/// `2·max_word` atlas.
pub fn monitor_products(q: u32, max_word: u32, pairs: usize, s: SobolevIndex, seed: u64) -> Result<ProductMonitor> {
    let atlas = Arc::new(crate::quasilattice::build_atlas(q, 2 * max_word, None)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut max_ratio, mut mn): (f64, f64) = (0.0, 0.0);
    for _ in 0..pairs {
        let density = rng.gen_range(0.05..0.5);
        let u = random_field(&atlas, max_word, density, &mut rng);
        let v = random_field(&atlas, max_word, density, &mut rng);
        let (us, vs, v0) = (u.hs_norm(s), v.hs_norm(s), v.hs_norm(SobolevIndex::ZERO));
        if us == 0.0 || vs == 0.0 {
            continue;
        }
        let uv = u.multiply_exact(&v)?;
        max_ratio = max_ratio.max(uv.hs_norm(SobolevIndex::ZERO) / (us * v0));
        mn = mn.max(uv.hs_norm(s) / (2.0 * us * vs));
    }
    Ok(ProductMonitor { pairs, seed, s: s.value(), max_ratio, moser_nirenberg: mn })
}
