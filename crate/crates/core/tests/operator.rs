use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qpf::asymptotics::expand;
use qpf::error::Error;
use qpf::field::{SobolevIndex, SpectralField, TruncationMode};
use qpf::operator::*;
use qpf::quasilattice::build_atlas;

#[test]
fn p2a_formula_matches_convolution_for_small_discs() {
    let b = expand(4).unwrap();
    let atlas = Arc::new(build_atlas(4, 14, None).unwrap());
    let labels = classify_spectrum(&atlas, 1e-4, 2.0).unwrap();
    let disc = labels.sites_in(Part::P2);
    assert!(disc.len() > 8, "discs hold only the unit vectors");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let u = SpectralField::from_pairs(atlas.clone(), disc.iter().map(|&i| (i, rng.gen_range(-1.0..1.0))));
        let by_formula = apply_p2a(&u, &labels).unwrap();
        let by_product = b.a_field.multiply(&u, &atlas, TruncationMode::Lossy).unwrap().field.project(&labels, Part::P2).unwrap();
        let diff = by_formula.sub(&by_product).unwrap();
        assert!(diff.hs_norm(SobolevIndex::ZERO) < 1e-12 * by_product.hs_norm(SobolevIndex::ZERO));
    }
}

#[test]
fn p2a_rejects_mass_outside_discs() {
    let atlas = Arc::new(build_atlas(4, 4, None).unwrap());
    let labels = classify_spectrum(&atlas, 0.01, 2.0).unwrap();
    let u = SpectralField::from_pairs(atlas.clone(), [(0, 1.0)]);
    assert!(matches!(apply_p2a(&u, &labels), Err(Error::Support { .. })));
    let other = Arc::new(build_atlas(4, 4, None).unwrap());
    let v = SpectralField::zeros(other);
    assert!(matches!(apply_p2a(&v, &labels), Err(Error::Unclassified)));
}

#[test]
fn disjointness_reports_large_epsilon() {
    let atlas = Arc::new(build_atlas(4, 14, None).unwrap());
    let tight = classify_spectrum(&atlas, 1e-6, 2.0).unwrap();
    assert_eq!(tight.counts(), [atlas.len() - 8, 0, 8]);
    assert!(check_disjointness(&tight).is_clean());
    // The lattice is dense, so larger discs do pick up near-resonant images.
    let mid = check_disjointness(&classify_spectrum(&atlas, 1e-4, 2.0).unwrap());
    assert!(mid.consistency.is_empty() && !mid.violations.is_empty());
    for v in &mid.violations {
        assert_eq!(atlas.site(v.site).canon.checked_add(&qpf::ring::Canon::from_coords(&v.shift.iter().map(|&c| c as i64).collect::<Vec<_>>()).unwrap()), Some(atlas.site(v.image).canon));
    }
    assert!(classify_spectrum(&atlas, 0.5, 2.0).is_err());
    let labels = classify_spectrum_unchecked(&atlas, 0.5, 2.0);
    let report = check_disjointness(&labels);
    assert!(!report.is_clean());
    assert!(!report.consistency.is_empty());
    // Overlapping discs put the origin in the first disc.
    let loose = classify_spectrum_unchecked(&atlas, 0.1, 2.0);
    assert_eq!(loose.region(0), Region::Disc(0));
}

#[test]
fn lambda1_eigenvalues() {
    let mut ev: Vec<f64> = lambda1_matrix(4).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    let expect = [-6.0, -6.0, -6.0, 0.0, 0.0, 0.0, 0.0, 42.0];
    for (a, b) in ev.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn block_perturbation_law_holds_where_betas_separate() {
    // Away from k' = 0 the β_j are separated by much more than ε², and the
    // second-order shift is bounded by Σ_i (ε²Λ₁)_{ij}² / gap.
    let eps = 0.003;
    let p = SectorPoint::new([0.3 * 0.2f64.cos(), 0.3 * 0.2f64.sin()]);
    let block = assemble_block(4, p, eps);
    let mu = block_eigenvalues(&block).unwrap();
    let mut beta = block.beta.clone();
    beta.sort_by(f64::total_cmp);
    let gap = beta.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    assert!(gap > 100.0 * eps * eps, "gap {gap}");
    let off_diag: f64 = lambda1_matrix(4).row(0).iter().skip(1).map(|x| x * x).sum();
    let bound = 2.0 * off_diag * eps.powi(4) / gap;
    for (m, b) in mu.iter().zip(&beta) {
        assert!((m - b - 3.0 * eps * eps).abs() < bound, "{m} vs {b}, bound {bound}");
    }
}

#[test]
fn lattice_sector_points_are_admissible() {
    let atlas = Arc::new(build_atlas(4, 10, None).unwrap());
    let labels = classify_spectrum(&atlas, 0.01, 2.0).unwrap();
    let pts = lattice_sector_points(&labels);
    assert!(!pts.is_empty());
    for p in pts {
        assert!(p.in_sector(4) && p.radius() <= labels.delta1 + 1e-12);
        assert!(p.source_site.is_some());
    }
}

#[test]
fn l_eps_matches_field_products() {
    let b = expand(4).unwrap();
    let atlas = Arc::new(build_atlas(4, 6, None).unwrap());
    let eps = 0.05;
    let op = assemble_l_eps(&atlas, eps, &b).unwrap();
    let dense = op.to_dense();
    assert!((&dense - dense.transpose()).norm() < 1e-14);
    let v = b.u0.transfer(&atlas).unwrap();
    let got = op.apply_field(&v).unwrap();
    let big = Arc::new(build_atlas(4, 16, None).unwrap());
    let u = b.u_eps(eps).transfer(&big).unwrap();
    let vb = v.transfer(&big).unwrap();
    let lambda = b.lambda_eps(eps);
    let expect = vb.apply_l0().axpy(-lambda, &vb).unwrap().axpy(3.0, &u.multiply_exact(&u).unwrap().multiply_exact(&vb).unwrap()).unwrap();
    for i in 0..atlas.len() {
        let want = expect.get_canon(&atlas.site(i).canon);
        assert!((got.get(i) - want).abs() < 1e-13, "site {i}");
    }
}

#[test]
fn inverse_power_iteration_matches_eigensolver() {
    let b = expand(4).unwrap();
    let atlas = Arc::new(build_atlas(4, 8, Some(2.5)).unwrap());
    for eps in [0.1, 0.05] {
        let m = assemble_l_eps(&atlas, eps, &b).unwrap().symmetric_reduction();
        let ev = m.clone().symmetric_eigenvalues();
        let want = ev.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        let got = smallest_abs_eigenvalue(&m).unwrap();
        assert!((got - want).abs() < 1e-9 * want.max(1e-3), "{got} vs {want}");
    }
    assert_eq!(smallest_abs_eigenvalue(&DMatrix::from_diagonal_element(3, 3, 0.0)).unwrap(), 0.0);
}

#[test]
fn resolvent_bound_for_negative_lambda() {
    let atlas = build_atlas(4, 8, None).unwrap();
    for lambda in [-0.01, -0.5, -3.0] {
        let n = l0_resolvent_norm(&atlas, lambda).unwrap();
        assert!(n <= 1.0 / lambda.abs() + 1e-15);
        // The unit vectors attain the bound.
        assert!((n - 1.0 / lambda.abs()).abs() < 1e-15);
    }
    assert!(l0_resolvent_norm(&atlas, 0.1).is_err());
}

#[test]
fn schur_reduction_solves_and_scales() {
    let b = expand(4).unwrap();
    let atlas = Arc::new(build_atlas(4, 10, Some(2.5)).unwrap());
    let s = SobolevIndex::new(2.0).unwrap();
    let mut constants = Vec::new();
    for eps in [0.1, 0.05] {
        let labels = classify_spectrum(&atlas, eps, 2.0).unwrap();
        let op = assemble_l_eps(&atlas, eps, &b).unwrap();
        let red = SchurReduction::new(&op, &labels).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = SpectralField::from_pairs(atlas.clone(), (0..atlas.len()).map(|i| (i, rng.gen_range(-1.0..1.0))));
        let out = red.solve(&f).unwrap();
        let u = out.u0.add(&out.u1).unwrap().add(&out.u2).unwrap();
        let back = op.apply_field(&u).unwrap().sub(&f).unwrap();
        assert!(back.hs_norm(SobolevIndex::ZERO) < 1e-8 * f.hs_norm(SobolevIndex::ZERO));
        constants.push(fit_schur_constants(&red, s, 30, 5).unwrap());
    }
    // The annulus is empty at these ε, so U₁ vanishes and only c₀ is probed.
    let (a, c) = (constants[0], constants[1]);
    assert_eq!((a.c1, c.c1), (0.0, 0.0));
    assert!(a.c0 > 0.0 && c.c0 > 0.0);
    assert!((0.25..=4.0).contains(&(a.c0 / c.c0)), "constants {a:?} vs {c:?}");
}
