use std::collections::HashMap;

use qpf::asymptotics::*;
use qpf::field::SobolevIndex;
use qpf::ring::Canon;

fn key(b: &ExpansionBundle, word: &[i32]) -> Canon {
    b.atlas.basis().from_word(word).unwrap()
}

#[test]
fn known_u1_coefficient_off_the_axes() {
    let b = expand(4).unwrap();
    let want = -3.0 / (24.0 + 16.0 * 2f64.sqrt());
    let got = b.u1.get_canon(&key(&b, &[2, 1, 0, 0]));
    assert!((got - want).abs() < 1e-15, "{got} vs {want}");
}

#[test]
fn triple_resonance_for_q6() {
    let b = expand(6).unwrap();
    let a = &b.atlas;
    let s = a.sum_index(a.generator(0), a.generator(4)).unwrap();
    assert_eq!(a.sum_index(s, a.generator(8)), a.index_of(&Canon::ZERO));
    // The resonance feeds u₀³ back onto the zero mode.
    let cube = b.u0.multiply_exact(&b.u0).unwrap().multiply_exact(&b.u0).unwrap();
    assert!(cube.get_canon(&Canon::ZERO) > 0.0);
    assert_eq!(b.lambda2, 33.0);
}

#[test]
fn first_correction_two_ways() {
    for q in [4, 5, 7] {
        let b = expand(q).unwrap();
        let by_classes = first_correction_by_classes(&b.atlas).unwrap();
        let by_solve = first_correction_by_solvability(&b.u0).unwrap();
        let d = by_classes.sub(&by_solve).unwrap().hs_norm(SobolevIndex::ZERO);
        assert!(d < 1e-14, "q={q}: {d}");
        assert!(b.u1.symmetry_defect() < 1e-15);
    }
}

#[test]
fn second_correction_solves_its_equation() {
    let b = expand(4).unwrap();
    let rhs = b
        .u0
        .scale(b.lambda4)
        .axpy(b.lambda2, &b.u1)
        .unwrap()
        .axpy(-3.0, &b.u0.multiply_exact(&b.u0).unwrap().multiply_exact(&b.u1).unwrap())
        .unwrap();
    let lhs = b.u2.apply_l0();
    for (i, v) in rhs.iter() {
        assert!((lhs.get(i) - v).abs() < 1e-11 * (1.0 + v.abs()), "site {i}");
    }
    // u₂ is orthogonal to the kernel.
    for j in 0..8 {
        assert_eq!(b.u2.get(b.atlas.generator(j)), 0.0);
    }
}

#[test]
fn coefficient_fields_from_pair_sums() {
    for q in [4u32, 6] {
        let b = expand(q).unwrap();
        let a = &b.atlas;
        // u₀² by counting ordered pairs of unit vectors.
        let mut sq: HashMap<Canon, f64> = HashMap::new();
        for i in 0..2 * q as usize {
            for j in 0..2 * q as usize {
                let k = a.site(a.generator(i)).canon.checked_add(&a.site(a.generator(j)).canon).unwrap();
                *sq.entry(k).or_default() += 1.0;
            }
        }
        for (i, v) in b.a_field.iter() {
            let c = a.site(i).canon;
            let mut want = 3.0 * sq.get(&c).copied().unwrap_or(0.0);
            if c == Canon::ZERO {
                want -= b.lambda2;
            }
            assert!((v - want).abs() < 1e-12);
        }
        assert_eq!(b.a0, 3.0);
        assert_eq!(b.b0, -b.lambda4);
        let mean_b = b.b_field.get_canon(&Canon::ZERO);
        assert_eq!(mean_b, b.b0);
    }
}

#[test]
fn residual_orders_recombine() {
    let b = expand(4).unwrap();
    let r = b.residual_expansion().unwrap();
    for eps in [0.1, 0.05, 0.02] {
        let direct = direct_residual_norm(&r, eps).unwrap();
        let by_orders = eps.powi(7) * r.f_eps(eps).hs_norm(SobolevIndex::ZERO);
        assert!((direct - by_orders).abs() <= 1e-9 * direct, "ε={eps}: {direct} vs {by_orders}");
    }
}

#[test]
fn epsilon_inverts_lambda() {
    let b = expand(5).unwrap();
    // Below the fold of λ_ε, where dλ/dε > 0.
    for eps in [1e-4, 0.01, 0.05, 0.1] {
        let e = b.epsilon_from_lambda(b.lambda_eps(eps)).unwrap();
        assert!((e - eps).abs() < 1e-12 * eps.max(1e-2));
    }
    assert!(b.epsilon_from_lambda(-0.1).is_err());
    assert!(b.epsilon_from_lambda(1e6).is_err());
}
