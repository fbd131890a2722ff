//! Linear theory around the asymptotic solution: the splitting of Γ into
//! far modes, the annulus near the unit circle and the small discs around the
//! `k_j`, the reduced `2q × 2q` blocks, and numeric inverse bounds for
//! `L_ε = (1+Δ)² - λ_ε + 3U_ε²` on finite truncations.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;
use serde::Serialize;

use crate::asymptotics::ExpansionBundle;
use crate::error::{Error, Result};
use crate::field::{SobolevIndex, SpectralField};
use crate::linalg::jacobi_eigenvalues;
use crate::quasilattice::{build_atlas, LatticeAtlas};
use crate::ring::Canon;

/// Default constant in `δ = C ε^{1/2}`.
pub const DEFAULT_C: f64 = 2.0;

/// Default number of sector samples per block sweep.
pub const DEFAULT_SECTOR_POINTS: usize = 64;

/// Part of the spectrum a site belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Region {
    /// `σ₀`: away from the unit circle and from every disc.
    Far,
    /// `σ₁`: the annulus `||k|² - 1| < δ` minus the discs.
    Annulus,
    /// `σ_{2,j}`: the disc `|k - k_{j+1}| ≤ δ₁`, 0-based `j`.
    Disc(usize),
}

/// Orthogonal projections associated with the splitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    P0,
    P1,
    P2,
    /// Projection on the single disc `σ_{2,j}`.
    P2Disc(usize),
}

impl Part {
    pub fn contains(self, region: Region) -> bool {
        match (self, region) {
            (Part::P0, Region::Far) | (Part::P1, Region::Annulus) | (Part::P2, Region::Disc(_)) => true,
            (Part::P2Disc(j), Region::Disc(r)) => j == r,
            _ => false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SplitLabels {
    atlas: Arc<LatticeAtlas>,
    pub epsilon: f64,
    pub c: f64,
    pub delta: f64,
    pub delta1: f64,
    labels: Vec<Region>,
}

impl SplitLabels {
    pub fn atlas(&self) -> &Arc<LatticeAtlas> {
        &self.atlas
    }

    /// True when the labels were computed on exactly this atlas.
    pub fn covers(&self, atlas: &Arc<LatticeAtlas>) -> bool {
        Arc::ptr_eq(&self.atlas, atlas)
    }

    pub fn region(&self, i: usize) -> Region {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Region] {
        &self.labels
    }

    pub fn sites_in(&self, part: Part) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| part.contains(self.labels[i])).collect()
    }

    /// Site counts in `σ₀`, `σ₁`, `σ₂`.
    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for r in &self.labels {
            c[match r {
                Region::Far => 0,
                Region::Annulus => 1,
                Region::Disc(_) => 2,
            }] += 1;
        }
        c
    }

    /// `ε^{1/2} < 1/C` and `2δ + δ² < δ₁²`.
    pub fn consistency_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.epsilon.sqrt() * self.c >= 1.0 {
            out.push(format!("eps^(1/2) = {} is not below 1/C = {}", self.epsilon.sqrt(), 1.0 / self.c));
        }
        let lhs = 2.0 * self.delta + self.delta * self.delta;
        if lhs >= self.delta1 * self.delta1 {
            out.push(format!("2 delta + delta^2 = {lhs} is not below delta1^2 = {}", self.delta1 * self.delta1));
        }
        out
    }
}

fn radii(epsilon: f64, c: f64) -> (f64, f64) {
    let delta = c * epsilon.sqrt();
    (delta, (3.0 * delta).sqrt())
}

/// Labels every site, refusing parameters outside the regime where the
/// regions are well separated.
pub fn classify_spectrum(atlas: &Arc<LatticeAtlas>, epsilon: f64, c: f64) -> Result<SplitLabels> {
    if !(epsilon > 0.0) || !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon} and C = {c} must be positive")));
    }
    let labels = classify_spectrum_unchecked(atlas, epsilon, c);
    if let Some(v) = labels.consistency_violations().into_iter().next() {
        return Err(Error::InvalidParameter(v));
    }
    Ok(labels)
}

/// Labels every site for any `ε, C`. Where discs overlap a site goes to the
/// nearest centre, the lowest index winning exact ties.
pub fn classify_spectrum_unchecked(atlas: &Arc<LatticeAtlas>, epsilon: f64, c: f64) -> SplitLabels {
    let (delta, delta1) = radii(epsilon, c);
    let n = 2 * atlas.q() as usize;
    let centres: Vec<[f64; 2]> = (0..n).map(|j| atlas.site(atlas.generator(j)).embed).collect();
    let labels = (0..atlas.len())
        .map(|i| {
            let e = atlas.site(i).embed;
            let mut best: Option<(f64, usize)> = None;
            for (j, c) in centres.iter().enumerate() {
                let d = (e[0] - c[0]).hypot(e[1] - c[1]);
                if d <= delta1 && best.map_or(true, |(bd, _)| d < bd - 1e-12) {
                    best = Some((d, j));
                }
            }
            if let Some((_, j)) = best {
                return Region::Disc(j);
            }
            let (d, v) = atlas.small_divisor(i);
            if !d.is_zero() && v.abs() >= delta {
                Region::Far
            } else {
                Region::Annulus
            }
        })
        .collect();
    SplitLabels { atlas: atlas.clone(), epsilon, c, delta, delta1, labels }
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub kind: &'static str,
    pub site: usize,
    pub image: usize,
    pub shift: Vec<i16>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DisjointnessReport {
    pub epsilon: f64,
    pub c: f64,
    pub consistency: Vec<String>,
    pub violations: Vec<Violation>,
    /// Shifted points that left the atlas and could not be checked.
    pub unchecked: usize,
}

impl DisjointnessReport {
    pub fn is_clean(&self) -> bool {
        self.consistency.is_empty() && self.violations.is_empty()
    }
}

fn two_vector_shifts(atlas: &LatticeAtlas) -> Vec<Canon> {
    let g = atlas.basis().generators();
    let mut set = FxHashSet::default();
    for a in g {
        for b in g {
            let s = a.checked_add(b).expect("small keys");
            if !s.is_zero() {
                set.insert(s);
            }
        }
    }
    let mut v: Vec<Canon> = set.into_iter().collect();
    v.sort();
    v
}

fn four_vector_shifts(two: &[Canon]) -> Vec<Canon> {
    let mut set = FxHashSet::default();
    set.insert(Canon::ZERO);
    for a in two {
        set.insert(*a);
        for b in two {
            set.insert(a.checked_add(b).expect("small keys"));
        }
    }
    let mut v: Vec<Canon> = set.into_iter().collect();
    v.sort();
    v
}

/// Checks on the atlas that nonzero two-vector shifts move `σ₁` off
/// `σ₁ ∪ σ₂`, and that two- and four-vector shifts move `σ₂` off `σ₁`.
pub fn check_disjointness(labels: &SplitLabels) -> DisjointnessReport {
    let atlas = labels.atlas();
    let dim = atlas.basis().dim();
    let two = two_vector_shifts(atlas);
    let four = four_vector_shifts(&two);
    let mut violations = Vec::new();
    let mut unchecked = 0;
    for i in 0..atlas.len() {
        let from = labels.region(i);
        let shifts: &[Canon] = match from {
            Region::Far => continue,
            Region::Annulus => &two,
            Region::Disc(_) => &four,
        };
        let key = atlas.site(i).canon;
        for s in shifts {
            let Some(j) = key.checked_add(s).and_then(|k| atlas.index_of(&k)) else {
                unchecked += 1;
                continue;
            };
            let kind = match (from, labels.region(j)) {
                (Region::Annulus, Region::Annulus) => "annulus_to_annulus",
                (Region::Annulus, Region::Disc(_)) => "annulus_to_disc",
                (Region::Disc(_), Region::Annulus) => "disc_to_annulus",
                _ => continue,
            };
            violations.push(Violation { kind, site: i, image: j, shift: s.coords(dim).to_vec() });
        }
    }
    DisjointnessReport {
        epsilon: labels.epsilon,
        c: labels.c,
        consistency: labels.consistency_violations(),
        violations,
        unchecked,
    }
}

/// Weight with which `U^{(k_j + k')}` enters `(P₂(aU))^{(k_r + k')}`, both
/// indices 0-based.
pub fn p2a_weight(q: u32, r: usize, j: usize) -> f64 {
    let n = 2 * q as usize;
    if j == r || j == (r + q as usize) % n {
        3.0
    } else {
        6.0
    }
}

/// The disc part of `aU` for `U` supported on `σ₂`, by the explicit formula
/// `3{U^{(k)} + U^{(k-2k_r)} + 2Σ_{j≠r,r+q} U^{(k+k_j-k_r)}}` on each disc.
pub fn apply_p2a(u: &SpectralField, labels: &SplitLabels) -> Result<SpectralField> {
    let atlas = u.atlas();
    if !labels.covers(atlas) {
        return Err(Error::Unclassified);
    }
    let outside: f64 = u
        .iter()
        .filter(|(i, _)| !matches!(labels.region(*i), Region::Disc(_)))
        .map(|(_, v)| v * v)
        .sum();
    if outside > 0.0 {
        return Err(Error::Support { mass: outside.sqrt() });
    }
    let q = atlas.q();
    let n = 2 * q as usize;
    let mut pairs = Vec::new();
    for k in 0..atlas.len() {
        let Region::Disc(r) = labels.region(k) else { continue };
        let kr = atlas.generator(r);
        // k' = k - k_r, then sources k_j + k'.
        let Some(kp) = atlas.diff_index(k, kr) else { continue };
        let mut acc = 0.0;
        for j in 0..n {
            let src = if j == (r + q as usize) % n {
                // k - 2k_r = k_{r+q} + k'
                atlas.diff_index(kp, kr)
            } else {
                atlas.sum_index(kp, atlas.generator(j))
            };
            if let Some(s) = src {
                acc += p2a_weight(q, r, j) * u.get(s);
            }
        }
        if acc != 0.0 {
            pairs.push((k, acc));
        }
    }
    Ok(SpectralField::from_pairs(atlas.clone(), pairs))
}

/// `Λ₁` assembled from the same weights as [`apply_p2a`].
pub fn lambda1_matrix(q: u32) -> DMatrix<f64> {
    let n = 2 * q as usize;
    DMatrix::from_fn(n, n, |r, j| p2a_weight(q, r, j))
}

/// An offset `k'` in the sector `Σ₁`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SectorPoint {
    pub kprime: [f64; 2],
    /// Atlas site `k₁ + k'`, when the offset comes from a lattice point.
    pub source_site: Option<usize>,
}

impl SectorPoint {
    pub fn new(kprime: [f64; 2]) -> Self {
        SectorPoint { kprime, source_site: None }
    }

    pub fn radius(&self) -> f64 {
        self.kprime[0].hypot(self.kprime[1])
    }

    /// `arg k' ∈ [-π/2q, π/2q)`.
    pub fn in_sector(&self, q: u32) -> bool {
        if self.radius() == 0.0 {
            return true;
        }
        let a = self.kprime[1].atan2(self.kprime[0]);
        let h = PI / (2.0 * q as f64);
        (-h..h).contains(&a)
    }
}

/// Deterministic low-discrepancy points of `Σ₁` with `|k'| ≤ radius`: radii
/// equidistributed in area, angles from the golden-ratio sequence.
pub fn sector_samples(q: u32, radius: f64, count: usize) -> Vec<SectorPoint> {
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let h = PI / (2.0 * q as f64);
    (0..count)
        .map(|i| {
            let r = radius * ((i as f64 + 0.5) / count as f64).sqrt();
            let theta = -h + 2.0 * h * (i as f64 * golden).fract();
            SectorPoint::new([r * theta.cos(), r * theta.sin()])
        })
        .collect()
}

/// Lattice offsets `k' = k - k₁` of the disc `σ_{2,1}` lying in `Σ₁`.
pub fn lattice_sector_points(labels: &SplitLabels) -> Vec<SectorPoint> {
    let atlas = labels.atlas();
    let k1 = atlas.site(atlas.generator(0)).embed;
    let q = atlas.q();
    (0..atlas.len())
        .filter(|&i| labels.region(i) == Region::Disc(0))
        .map(|i| {
            let e = atlas.site(i).embed;
            SectorPoint { kprime: [e[0] - k1[0], e[1] - k1[1]], source_site: Some(i) }
        })
        .filter(|p| p.in_sector(q))
        .collect()
}

#[derive(Clone, Debug)]
pub struct BlockMatrix {
    pub q: u32,
    pub kprime: SectorPoint,
    pub epsilon: f64,
    /// `β_j(k') = (2k_j·k' + |k'|²)²`.
    pub beta: Vec<f64>,
    /// `Λ₀^{(k')} + ε²Λ₁`.
    pub mat: DMatrix<f64>,
}

fn unit(q: u32, j: usize) -> [f64; 2] {
    let a = j as f64 * PI / q as f64;
    [a.cos(), a.sin()]
}

/// `β_j` from `(|k' + k_j|² - 1)²`, the form used as an independent check.
pub fn beta_direct(q: u32, kprime: [f64; 2]) -> Vec<f64> {
    (0..2 * q as usize)
        .map(|j| {
            let k = unit(q, j);
            let (x, y) = (kprime[0] + k[0], kprime[1] + k[1]);
            (x * x + y * y - 1.0).powi(2)
        })
        .collect()
}

pub fn assemble_block(q: u32, kprime: SectorPoint, epsilon: f64) -> BlockMatrix {
    let n = 2 * q as usize;
    let kp = kprime.kprime;
    let norm2 = kp[0] * kp[0] + kp[1] * kp[1];
    let beta: Vec<f64> = (0..n)
        .map(|j| {
            let k = unit(q, j);
            (2.0 * (k[0] * kp[0] + k[1] * kp[1]) + norm2).powi(2)
        })
        .collect();
    let mut mat = lambda1_matrix(q) * (epsilon * epsilon);
    for j in 0..n {
        mat[(j, j)] += beta[j];
    }
    BlockMatrix { q, kprime, epsilon, beta, mat }
}

pub fn block_eigenvalues(block: &BlockMatrix) -> Result<Vec<f64>> {
    jacobi_eigenvalues(&block.mat)
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockRow {
    pub eps: f64,
    pub kprime_x: f64,
    pub kprime_y: f64,
    pub j: usize,
    pub beta_j: f64,
    pub mu_j: f64,
    pub mu_j_minus_beta_minus_3eps2: f64,
}

#[derive(Clone, Debug)]
pub struct BlockSweep {
    pub q: u32,
    pub rows: Vec<BlockRow>,
    /// `K` fitted at the largest ε as `max |μ_j - β_j - 3ε²| / ε⁴`.
    pub k_fit: f64,
    /// Per ε: `(ε, max defect / ε⁴)`.
    pub defect_ratios: Vec<(f64, f64)>,
    /// Per ε: `(ε, min_j μ_j / ε²)` over all sampled blocks.
    pub min_mu_over_eps2: Vec<(f64, f64)>,
}

impl BlockSweep {
    /// The perturbation law with the single `K` fitted at the largest ε.
    pub fn law_holds(&self) -> bool {
        self.defect_ratios.iter().all(|&(_, r)| r <= self.k_fit * (1.0 + 1e-9))
    }

    /// `min μ ≥ 2ε²` on every sampled block.
    pub fn lower_bound_holds(&self) -> bool {
        self.min_mu_over_eps2.iter().all(|&(_, m)| m >= 2.0)
    }
}

/// Eigenvalues of `Λ_ε^{(k')}` over sector samples and a list of ε. The
/// sample radius is `δ₁` of the smallest ε so that every point is admissible
/// for every ε in the list.
pub fn block_sweep(q: u32, eps_list: &[f64], count: usize, c: f64) -> Result<BlockSweep> {
    if eps_list.is_empty() || eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidParameter("epsilon list must be nonempty and positive".into()));
    }
    let eps_min = eps_list.iter().copied().fold(f64::INFINITY, f64::min);
    let eps_max = eps_list.iter().copied().fold(0.0, f64::max);
    let (_, radius) = radii(eps_min, c);
    let points = sector_samples(q, radius, count);
    let mut rows = Vec::new();
    let mut defect_ratios = Vec::new();
    let mut min_mu_over_eps2 = Vec::new();
    for &eps in eps_list {
        let mut worst: f64 = 0.0;
        let mut min_mu = f64::INFINITY;
        for p in &points {
            let block = assemble_block(q, *p, eps);
            let mu = block_eigenvalues(&block)?;
            let mut beta = block.beta.clone();
            beta.sort_by(f64::total_cmp);
            for (j, (&m, &b)) in mu.iter().zip(&beta).enumerate() {
                let defect = m - b - 3.0 * eps * eps;
                worst = worst.max(defect.abs());
                rows.push(BlockRow {
                    eps,
                    kprime_x: p.kprime[0],
                    kprime_y: p.kprime[1],
                    j,
                    beta_j: b,
                    mu_j: m,
                    mu_j_minus_beta_minus_3eps2: defect,
                });
            }
            min_mu = min_mu.min(mu[0]);
        }
        defect_ratios.push((eps, worst / eps.powi(4)));
        min_mu_over_eps2.push((eps, min_mu / (eps * eps)));
    }
    let k_fit = defect_ratios.iter().find(|(e, _)| *e == eps_max).map(|p| p.1).unwrap_or(f64::NAN);
    Ok(BlockSweep { q, rows, k_fit, defect_ratios, min_mu_over_eps2 })
}

/// Largest atlas accepted by the dense operator routines.
pub const DENSE_LIMIT: usize = 20_000;

/// `L_ε` restricted to an atlas, stored by rows.
#[derive(Clone, Debug)]
pub struct LinearOperator {
    atlas: Arc<LatticeAtlas>,
    pub epsilon: f64,
    pub lambda: f64,
    rows: Vec<Vec<(u32, f64)>>,
}

/// Builds `v ↦ (1-|k|²)²v - λ_εv + 3 (U_ε² ∗ v)` on the atlas.
pub fn assemble_l_eps(atlas: &Arc<LatticeAtlas>, epsilon: f64, bundle: &ExpansionBundle) -> Result<LinearOperator> {
    if atlas.len() > DENSE_LIMIT {
        return Err(Error::Capacity { limit: DENSE_LIMIT });
    }
    if atlas.q() != bundle.q {
        return Err(Error::AtlasMismatch);
    }
    let lambda = bundle.lambda_eps(epsilon);
    let w: Vec<(Canon, f64)> = if epsilon == 0.0 {
        Vec::new()
    } else {
        let u = bundle.u_eps(epsilon);
        let square_atlas = Arc::new(build_atlas(bundle.q, 2 * u.max_word_length().max(1), None)?);
        let w = u.multiply(&u, &square_atlas, crate::field::TruncationMode::EXACT)?.field;
        w.iter().map(|(i, v)| (square_atlas.site(i).canon, v)).collect()
    };
    let rows = (0..atlas.len())
        .map(|i| {
            let key = atlas.site(i).canon;
            let mut row: Vec<(u32, f64)> = Vec::new();
            row.push((i as u32, atlas.l0_symbol(i) - lambda));
            for (m, wm) in &w {
                if let Some(j) = key.checked_sub(m).and_then(|k| atlas.index_of(&k)) {
                    row.push((j as u32, 3.0 * wm));
                }
            }
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(row.len());
            for (j, v) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            merged
        })
        .collect();
    Ok(LinearOperator { atlas: atlas.clone(), epsilon, lambda, rows })
}

impl LinearOperator {
    pub fn atlas(&self) -> &Arc<LatticeAtlas> {
        &self.atlas
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row.iter().map(|&(j, a)| a * v[j as usize]).sum()).collect()
    }

    pub fn apply_field(&self, f: &SpectralField) -> Result<SpectralField> {
        let f = if Arc::ptr_eq(f.atlas(), &self.atlas) { f.clone() } else { f.transfer(&self.atlas)? };
        Ok(SpectralField::from_dense(self.atlas.clone(), &self.apply(&f.to_dense())))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                m[(i, j as usize)] = a;
            }
        }
        m
    }

    /// The operator on rotation-invariant fields, in orbit coordinates and
    /// symmetrized with the square roots of the orbit sizes.
    pub fn symmetric_reduction(&self) -> DMatrix<f64> {
        let orbits = self.atlas.orbits();
        let n = orbits.len();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for (r, orbit) in orbits.iter().enumerate() {
            let rep = orbit[0] as usize;
            for &(j, a) in &self.rows[rep] {
                m[(r, self.atlas.orbit_of(j as usize))] += a;
            }
        }
        let w: Vec<f64> = orbits.iter().map(|o| (o.len() as f64).sqrt()).collect();
        DMatrix::from_fn(n, n, |r, s| w[r] * m[(r, s)] / w[s])
    }
}

/// Smallest `|μ|` of a symmetric matrix by inverse power iteration on an LU
/// factorization. Returns 0 when the matrix is singular to working precision.
pub fn smallest_abs_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    if n == 0 {
        return Err(Error::Factorization);
    }
    let lu = m.clone().lu();
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let u = lu.u();
    if (0..n).any(|i| u[(i, i)].abs() <= 1e-14 * scale) {
        return Ok(0.0);
    }
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.01 * ((i * 7919) % 101) as f64);
    x /= x.norm();
    let mut nu = 0.0;
    for _ in 0..5000 {
        let y = lu.solve(&x).ok_or(Error::Factorization)?;
        let next = x.dot(&y);
        let norm = y.norm();
        x = y / norm;
        if (next - nu).abs() <= 1e-13 * next.abs() {
            nu = next;
            break;
        }
        nu = next;
    }
    Ok(1.0 / nu.abs())
}

#[derive(Clone, Debug, Serialize)]
pub struct InverseRow {
    pub eps: f64,
    pub min_abs_eig: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InverseSweep {
    pub rows: Vec<InverseRow>,
    /// `max ratio / min ratio` over the positive ε.
    pub band: f64,
}

impl InverseSweep {
    pub fn within_factor(&self, factor: f64) -> bool {
        self.band < factor
    }
}

/// Smallest `|eig|` of `L_ε` on rotation-invariant fields of the atlas, and
/// its ratio to ε².
pub fn inverse_bound_sweep(atlas: &Arc<LatticeAtlas>, bundle: &ExpansionBundle, eps_list: &[f64]) -> Result<InverseSweep> {
    let mut rows = Vec::new();
    for &eps in eps_list {
        let l = assemble_l_eps(atlas, eps, bundle)?;
        let min = smallest_abs_eigenvalue(&l.symmetric_reduction())?;
        let ratio = if eps > 0.0 { min / (eps * eps) } else { f64::NAN };
        rows.push(InverseRow { eps, min_abs_eig: min, ratio });
    }
    let ratios: Vec<f64> = rows.iter().filter(|r| r.eps > 0.0).map(|r| r.ratio).collect();
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(InverseSweep { rows, band: hi / lo })
}

/// `max_k 1/((1-|k|²)² - λ)` on the atlas, the H₀ norm of the resolvent of
/// `(1+Δ)²` at `λ < 0`.
pub fn l0_resolvent_norm(atlas: &LatticeAtlas, lambda: f64) -> Result<f64> {
    if !(lambda < 0.0) {
        return Err(Error::OutOfRange { what: "lambda", value: lambda });
    }
    Ok((0..atlas.len()).map(|i| 1.0 / (atlas.l0_symbol(i) - lambda)).fold(0.0, f64::max))
}

/// Block elimination of the far and annulus components of `L_ε U = f`.
#[derive(Clone, Debug)]
pub struct SchurReduction {
    labels: SplitLabels,
    pub epsilon: f64,
    pub idx0: Vec<usize>,
    pub idx1: Vec<usize>,
    pub idx2: Vec<usize>,
    /// `L_ε` on `E₀ ⊕ E₁`, factored.
    inner: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// Coupling `P_{01} L_ε P₂`.
    coupling: DMatrix<f64>,
    /// Reduced operator on `E₂`.
    pub reduced: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct SchurOutcome {
    pub u0: SpectralField,
    pub u1: SpectralField,
    pub u2: SpectralField,
    /// Right-hand side of the reduced equation on `E₂`.
    pub reduced_rhs: SpectralField,
}

fn sub_matrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn is_singular(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return false;
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let lu = m.clone().lu();
    let u = lu.u();
    (0..m.nrows()).any(|i| u[(i, i)].abs() <= 1e-13 * scale)
}

impl SchurReduction {
    pub fn new(op: &LinearOperator, labels: &SplitLabels) -> Result<Self> {
        if !labels.covers(op.atlas()) {
            return Err(Error::Unclassified);
        }
        let full = op.to_dense();
        let idx0 = labels.sites_in(Part::P0);
        let idx1 = labels.sites_in(Part::P1);
        let idx2 = labels.sites_in(Part::P2);
        if is_singular(&sub_matrix(&full, &idx0, &idx0)) {
            return Err(Error::SingularBlock);
        }
        let idx01: Vec<usize> = idx0.iter().chain(&idx1).copied().collect();
        let k = sub_matrix(&full, &idx01, &idx01);
        if is_singular(&k) {
            return Err(Error::SingularBlock);
        }
        let inner = k.lu();
        let coupling = sub_matrix(&full, &idx01, &idx2);
        let solved = inner.solve(&coupling).ok_or(Error::SingularBlock)?;
        let reduced = sub_matrix(&full, &idx2, &idx2) - coupling.transpose() * solved;
        Ok(SchurReduction {
            labels: labels.clone(),
            epsilon: op.epsilon,
            idx0,
            idx1,
            idx2,
            inner,
            coupling,
            reduced,
        })
    }

    fn gather(&self, f: &SpectralField, idx: &[usize]) -> DVector<f64> {
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| f.get(i)))
    }

    fn scatter(&self, idx: &[usize], v: &[f64]) -> SpectralField {
        SpectralField::from_pairs(self.labels.atlas().clone(), idx.iter().copied().zip(v.iter().copied()))
    }

    /// `(U₀, U₁)` as functions of `U₂` and `f`.
    pub fn eliminate(&self, u2: &SpectralField, f: &SpectralField) -> Result<(SpectralField, SpectralField)> {
        let idx01: Vec<usize> = self.idx0.iter().chain(&self.idx1).copied().collect();
        let rhs = self.gather(f, &idx01) - &self.coupling * self.gather(u2, &self.idx2);
        let x = self.inner.solve(&rhs).ok_or(Error::SingularBlock)?;
        let n0 = self.idx0.len();
        Ok((self.scatter(&self.idx0, &x.as_slice()[..n0]), self.scatter(&self.idx1, &x.as_slice()[n0..])))
    }

    /// Right-hand side of the reduced equation on `E₂`.
    pub fn reduced_rhs(&self, f: &SpectralField) -> Result<SpectralField> {
        let idx01: Vec<usize> = self.idx0.iter().chain(&self.idx1).copied().collect();
        let y = self.inner.solve(&self.gather(f, &idx01)).ok_or(Error::SingularBlock)?;
        let r = self.gather(f, &self.idx2) - self.coupling.transpose() * y;
        Ok(self.scatter(&self.idx2, r.as_slice()))
    }

    /// Solves `L_ε U = f` through the reduced equation.
    pub fn solve(&self, f: &SpectralField) -> Result<SchurOutcome> {
        let reduced_rhs = self.reduced_rhs(f)?;
        let u2v = if self.idx2.is_empty() {
            DVector::zeros(0)
        } else {
            self.reduced.clone().lu().solve(&self.gather(&reduced_rhs, &self.idx2)).ok_or(Error::Factorization)?
        };
        let u2 = self.scatter(&self.idx2, u2v.as_slice());
        let (u0, u1) = self.eliminate(&u2, f)?;
        Ok(SchurOutcome { u0, u1, u2, reduced_rhs })
    }
}

/// Full pipeline: assemble `L_ε`, eliminate, solve.
pub fn schur_reduce(
    atlas: &Arc<LatticeAtlas>,
    labels: &SplitLabels,
    epsilon: f64,
    bundle: &ExpansionBundle,
    f: &SpectralField,
) -> Result<SchurOutcome> {
    let op = assemble_l_eps(atlas, epsilon, bundle)?;
    SchurReduction::new(&op, labels)?.solve(f)
}

/// Constants fitted in the two estimates of the reduction over random data.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SchurConstants {
    pub epsilon: f64,
    /// Smallest `c` with `‖U₀‖ ≤ c(ε²‖U₂‖ + ε⁻¹‖(P₀+P₁)f‖)` on the samples.
    pub c0: f64,
    /// Smallest `c` with `‖U₁‖ ≤ c(ε⁴‖U₂‖ + ε⁻²‖(εP₀+P₁)f‖)` on the samples.
    pub c1: f64,
}

pub fn fit_schur_constants(red: &SchurReduction, s: SobolevIndex, samples: usize, seed: u64) -> Result<SchurConstants> {
    let eps = red.epsilon;
    let atlas = red.labels.atlas().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut c0, mut c1): (f64, f64) = (0.0, 0.0);
    for t in 0..samples {
        // Alternate pure-U₂ and pure-f samples so each term is probed alone.
        let u2_on = t % 3 != 1;
        let f_on = t % 3 != 0;
        let u2 = SpectralField::from_pairs(
            atlas.clone(),
            red.idx2.iter().map(|&i| (i, if u2_on { rng.gen_range(-1.0..1.0) } else { 0.0 })),
        );
        let f = SpectralField::from_pairs(
            atlas.clone(),
            (0..atlas.len()).map(|i| (i, if f_on { rng.gen_range(-1.0..1.0) } else { 0.0 })),
        );
        let (u0, u1) = red.eliminate(&u2, &f)?;
        let f0 = f.project(&red.labels, Part::P0)?;
        let f1 = f.project(&red.labels, Part::P1)?;
        let n2 = u2.hs_norm(s);
        let b0 = eps * eps * n2 + f0.add(&f1)?.hs_norm(s) / eps;
        let b1 = eps.powi(4) * n2 + f0.scale(eps).add(&f1)?.hs_norm(s) / (eps * eps);
        if b0 > 0.0 {
            c0 = c0.max(u0.hs_norm(s) / b0);
        }
        if b1 > 0.0 {
            c1 = c1.max(u1.hs_norm(s) / b1);
        }
    }
    Ok(SchurConstants { epsilon: eps, c0, c1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda1_q4_fixture() {
        let expect = [
            [1, 2, 2, 2, 1, 2, 2, 2],
            [2, 1, 2, 2, 2, 1, 2, 2],
            [2, 2, 1, 2, 2, 2, 1, 2],
            [2, 2, 2, 1, 2, 2, 2, 1],
            [1, 2, 2, 2, 1, 2, 2, 2],
            [2, 1, 2, 2, 2, 1, 2, 2],
            [2, 2, 1, 2, 2, 2, 1, 2],
            [2, 2, 2, 1, 2, 2, 2, 1],
        ];
        let m = lambda1_matrix(4);
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(m[(r, c)], 3.0 * expect[r][c] as f64);
            }
        }
    }

    #[test]
    fn beta_two_ways() {
        for p in sector_samples(5, 0.6, 20) {
            assert!(p.in_sector(5));
            let b = assemble_block(5, p, 0.1).beta;
            for (x, y) in b.iter().zip(beta_direct(5, p.kprime)) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn labels_of_simple_sites() {
        let atlas = Arc::new(build_atlas(4, 4, None).unwrap());
        let l = classify_spectrum(&atlas, 0.01, 2.0).unwrap();
        for j in 0..8 {
            assert_eq!(l.region(atlas.generator(j)), Region::Disc(j));
        }
        assert_eq!(l.region(0), Region::Far);
        let three = atlas.index_of(&atlas.basis().from_word(&[3, 0, 0, 0]).unwrap()).unwrap();
        assert_eq!(l.region(three), Region::Far);
        assert!(classify_spectrum(&atlas, 0.5, 2.0).is_err());
    }

    #[test]
    fn jacobi_on_blocks_matches_nalgebra() {
        for p in sector_samples(4, 0.5, 8) {
            let b = assemble_block(4, p, 0.05);
            let mine = block_eigenvalues(&b).unwrap();
            let mut other: Vec<f64> = b.mat.clone().symmetric_eigenvalues().iter().copied().collect();
            other.sort_by(f64::total_cmp);
            for (x, y) in mine.iter().zip(&other) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
