//! Formal expansion `U = εu₀ + ε³u₁ + ε⁵u₂`, `λ = ε²λ₂ + ε⁴λ₄`.
//!
//! Every product here is exact: the supports stay inside `N_k ≤ 5` for the
//! expansion itself and inside `N_k ≤ 15` for the residual of `U_ε`, and the
//! atlases are built large enough to hold them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{SobolevIndex, SpectralField};
use crate::quasilattice::{build_atlas, LatticeAtlas};

/// Tolerance for coefficients that must cancel on the unit circle, relative
/// to the largest coefficient of the right-hand side (at least 1).
pub const SOLVABILITY_TOL: f64 = 1e-12;

/// Agreement required between the two constructions of `u₁`.
pub const DUAL_ROUTE_TOL: f64 = 1e-13;

/// Word-length bound of every field in the expansion.
pub const EXPANSION_NMAX: u32 = 5;

/// Word-length bound of `U_ε³`.
pub const RESIDUAL_NMAX: u32 = 15;

#[derive(Clone, Debug)]
pub struct ExpansionBundle {
    pub q: u32,
    pub atlas: Arc<LatticeAtlas>,
    pub u0: SpectralField,
    pub u1: SpectralField,
    pub u2: SpectralField,
    pub lambda2: f64,
    pub lambda4: f64,
    pub a_field: SpectralField,
    pub b_field: SpectralField,
    pub a0: f64,
    pub b0: f64,
    /// Coefficient of `e^{ik₁·x}` in `u₀³`.
    pub lambda2_convolution: f64,
    /// `Σ α_k` over `k_j + k_l + k = k₁`, `N_k = 3`, taken literally.
    pub lambda4_literal_sum: f64,
}

/// `u₀ = Σ_j e^{ik_j·x}`.
pub fn base_pattern(atlas: &Arc<LatticeAtlas>) -> SpectralField {
    let n = 2 * atlas.q() as usize;
    SpectralField::from_pairs(atlas.clone(), (0..n).map(|j| (atlas.generator(j), 1.0)))
}

/// `λ₂ = 3(2q - 1)`.
pub fn lambda_2(q: u32) -> f64 {
    3.0 * (2.0 * q as f64 - 1.0)
}

pub fn expansion_atlas(q: u32) -> Result<Arc<LatticeAtlas>> {
    Ok(Arc::new(build_atlas(q, EXPANSION_NMAX, None)?))
}

/// Coefficient of `e^{ik₁·x}` in `u₀³`.
pub fn lambda_2_by_convolution(u0: &SpectralField) -> Result<f64> {
    let cube = u0.multiply_exact(u0)?.multiply_exact(u0)?;
    Ok(cube.get(u0.atlas().generator(0)))
}

fn unit_divisor(atlas: &LatticeAtlas, i: usize) -> Result<f64> {
    let (d, v) = atlas.small_divisor(i);
    if d.is_zero() {
        return Err(Error::Solvability { site: i, value: f64::NAN });
    }
    Ok(v * v)
}

/// `u₁` summed class by class over unordered generator triples without an
/// opposite pair: weight 1 for `3k_j`, 3 for `2k_j + k_l`, 6 for three
/// distinct vectors.
pub fn first_correction_by_classes(atlas: &Arc<LatticeAtlas>) -> Result<SpectralField> {
    let n = 2 * atlas.q() as usize;
    let q = atlas.q() as usize;
    let opposite = |a: usize, b: usize| (a + q) % n == b;
    let mut pairs = Vec::new();
    for j in 0..n {
        for l in j..n {
            for r in l..n {
                if opposite(j, l) || opposite(j, r) || opposite(l, r) {
                    continue;
                }
                let weight = if j == l && l == r {
                    1.0
                } else if j == l || l == r {
                    3.0
                } else {
                    6.0
                };
                let jl = atlas.sum_index(atlas.generator(j), atlas.generator(l));
                let site = jl
                    .and_then(|s| atlas.sum_index(s, atlas.generator(r)))
                    .ok_or_else(|| Error::NotInAtlas("triple sum".into()))?;
                pairs.push((site, -weight / unit_divisor(atlas, site)?));
            }
        }
    }
    Ok(SpectralField::from_pairs(atlas.clone(), pairs))
}

/// `u₁ = (λ₂u₀ - u₀³)/(1 - |k|²)²` off the unit circle, after checking that
/// the right-hand side vanishes on it.
pub fn first_correction_by_solvability(u0: &SpectralField) -> Result<SpectralField> {
    let atlas = u0.atlas().clone();
    let cube = u0.multiply_exact(u0)?.multiply_exact(u0)?;
    let rhs = u0.scale(lambda_2(atlas.q())).sub(&cube)?;
    invert_l0(&rhs)
}

/// Solves `(1+Δ)² u = rhs` given that `rhs` vanishes on the kernel.
fn invert_l0(rhs: &SpectralField) -> Result<SpectralField> {
    let atlas = rhs.atlas().clone();
    let mut pairs = Vec::new();
    let tol = SOLVABILITY_TOL * rhs.iter().map(|(_, v)| v.abs()).fold(1.0, f64::max);
    for (i, v) in rhs.iter() {
        let (d, dv) = atlas.small_divisor(i);
        if d.is_zero() {
            if v.abs() > tol {
                return Err(Error::Solvability { site: i, value: v });
            }
        } else {
            pairs.push((i, v / (dv * dv)));
        }
    }
    Ok(SpectralField::from_pairs(atlas, pairs))
}

/// `u₁` by both routes; fails if they disagree by more than 1e-13 anywhere.
pub fn first_correction(u0: &SpectralField) -> Result<SpectralField> {
    let by_classes = first_correction_by_classes(u0.atlas())?;
    let by_solve = first_correction_by_solvability(u0)?;
    let gap = by_classes.sub(&by_solve)?.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
    if gap > DUAL_ROUTE_TOL {
        return Err(Error::Inconsistent(format!("u1 routes differ by {gap:e}")));
    }
    Ok(by_solve)
}

/// Coefficient of `e^{ik₁·x}` in `3u₀²u₁`.
pub fn lambda_4(u0: &SpectralField, u1: &SpectralField) -> Result<f64> {
    let p = u0.multiply_exact(u0)?.multiply_exact(u1)?;
    Ok(3.0 * p.get(u0.atlas().generator(0)))
}

/// The sum `Σ α_k` over ordered pairs `(j, l)` and sites `k` with
/// `k_j + k_l + k = k₁` and `N_k = 3`, with no multiplicity factor.
pub fn lambda_4_literal_sum(u1: &SpectralField) -> f64 {
    let atlas = u1.atlas();
    let n = 2 * atlas.q() as usize;
    let k1 = atlas.generator(0);
    let mut sum = 0.0;
    for j in 0..n {
        for l in 0..n {
            let Some(jl) = atlas.sum_index(atlas.generator(j), atlas.generator(l)) else { continue };
            let Some(k) = atlas.diff_index(k1, jl) else { continue };
            if atlas.site(k).n_word == 3 {
                sum += u1.get(k);
            }
        }
    }
    sum
}

/// `u₂` from `λ₄u₀ + λ₂u₁ - 3u₀²u₁ = (1+Δ)²u₂`.
pub fn second_correction(
    u0: &SpectralField,
    u1: &SpectralField,
    lambda2: f64,
    lambda4: f64,
) -> Result<SpectralField> {
    let u0u0u1 = u0.multiply_exact(u0)?.multiply_exact(u1)?;
    let rhs = u0.scale(lambda4).axpy(lambda2, u1)?.axpy(-3.0, &u0u0u1)?;
    invert_l0(&rhs)
}

/// `a = 3u₀² - λ₂` and `b = 6u₀u₁ - λ₄`.
pub fn coefficient_fields(
    u0: &SpectralField,
    u1: &SpectralField,
    lambda2: f64,
    lambda4: f64,
) -> Result<(SpectralField, SpectralField)> {
    let a = u0.multiply_exact(u0)?.scale(3.0).add_constant(-lambda2);
    let b = u0.multiply_exact(u1)?.scale(6.0).add_constant(-lambda4);
    Ok((a, b))
}

/// Runs the whole expansion for one q.
pub fn expand(q: u32) -> Result<ExpansionBundle> {
    let atlas = expansion_atlas(q)?;
    let u0 = base_pattern(&atlas);
    let lambda2 = lambda_2(q);
    let lambda2_convolution = lambda_2_by_convolution(&u0)?;
    if lambda2_convolution != lambda2 {
        return Err(Error::Inconsistent(format!(
            "u0^3 coefficient {lambda2_convolution} differs from 3(2q-1) = {lambda2}"
        )));
    }
    let u1 = first_correction(&u0)?;
    let lambda4 = lambda_4(&u0, &u1)?;
    let lambda4_literal_sum = lambda_4_literal_sum(&u1);
    let u2 = second_correction(&u0, &u1, lambda2, lambda4)?;
    let (a_field, b_field) = coefficient_fields(&u0, &u1, lambda2, lambda4)?;
    let (a0, b0) = (a_field.mean(), b_field.mean());
    Ok(ExpansionBundle {
        q,
        atlas,
        u0,
        u1,
        u2,
        lambda2,
        lambda4,
        a_field,
        b_field,
        a0,
        b0,
        lambda2_convolution,
        lambda4_literal_sum,
    })
}

/// Positive root `ε` of `λ = ε²λ₂ + ε⁴λ₄` on the branch with `ε² ≈ λ/λ₂`.
pub fn epsilon_from_lambda(lambda2: f64, lambda4: f64, lambda: f64) -> Result<f64> {
    let disc = lambda2 * lambda2 + 4.0 * lambda4 * lambda;
    if !(lambda > 0.0) || !(disc > 0.0) {
        return Err(Error::OutOfRange { what: "lambda", value: lambda });
    }
    // Rationalized quadratic root, free of cancellation as λ → 0.
    let x = 2.0 * lambda / (lambda2 + disc.sqrt());
    Ok(x.sqrt())
}

impl ExpansionBundle {
    pub fn lambda_eps(&self, eps: f64) -> f64 {
        let e2 = eps * eps;
        e2 * self.lambda2 + e2 * e2 * self.lambda4
    }

    pub fn epsilon_from_lambda(&self, lambda: f64) -> Result<f64> {
        epsilon_from_lambda(self.lambda2, self.lambda4, lambda)
    }

    /// `U_ε = εu₀ + ε³u₁ + ε⁵u₂` on the expansion atlas.
    pub fn u_eps(&self, eps: f64) -> SpectralField {
        let e3 = eps.powi(3);
        self.u0
            .scale(eps)
            .axpy(e3, &self.u1)
            .and_then(|f| f.axpy(e3 * eps * eps, &self.u2))
            .expect("expansion fields share an atlas")
    }

    /// Precomputes the ε-independent pieces of `f_ε`.
    pub fn residual_expansion(&self) -> Result<ResidualExpansion> {
        ResidualExpansion::new(self)
    }

    pub fn prepare(&self, eps: f64) -> Result<PreparedState> {
        self.residual_expansion()?.prepare(eps)
    }
}

#[derive(Clone, Debug)]
pub struct PreparedState {
    pub epsilon: f64,
    pub u_eps: SpectralField,
    pub lambda_eps: f64,
    pub f_eps: SpectralField,
}

/// `λ_εU_ε - (1+Δ)²U_ε - U_ε³ = Σ_n ε^n R_n` split by powers of ε. The
/// orders 3 and 5 vanish by construction; orders 7 to 15 make up `-ε⁷f_ε`.
#[derive(Clone, Debug)]
pub struct ResidualExpansion {
    pub atlas: Arc<LatticeAtlas>,
    pub u0: SpectralField,
    pub u1: SpectralField,
    pub u2: SpectralField,
    pub lambda2: f64,
    pub lambda4: f64,
    /// `R_7, R_9, R_11, R_13, R_15`.
    pub orders: Vec<SpectralField>,
}

impl ResidualExpansion {
    pub fn new(bundle: &ExpansionBundle) -> Result<Self> {
        let atlas = Arc::new(build_atlas(bundle.q, RESIDUAL_NMAX, None)?);
        let u0 = bundle.u0.transfer(&atlas)?;
        let u1 = bundle.u1.transfer(&atlas)?;
        let u2 = bundle.u2.transfer(&atlas)?;
        let (l2, l4) = (bundle.lambda2, bundle.lambda4);
        let m = |a: &SpectralField, b: &SpectralField| a.multiply_exact(b);
        let p00 = m(&u0, &u0)?;
        let p01 = m(&u0, &u1)?;
        let p11 = m(&u1, &u1)?;
        let p22 = m(&u2, &u2)?;

        let r3 = u0.scale(l2).sub(&u1.apply_l0())?.sub(&m(&p00, &u0)?)?;
        let r5 = u1
            .scale(l2)
            .axpy(l4, &u0)?
            .sub(&u2.apply_l0())?
            .axpy(-3.0, &m(&p00, &u1)?)?;
        for (order, r) in [(3, &r3), (5, &r5)] {
            let worst = r.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
            if worst > 1e-10 {
                return Err(Error::Inconsistent(format!("order {order} residual is {worst:e}")));
            }
        }

        let r7 = u2
            .scale(l2)
            .axpy(l4, &u1)?
            .axpy(-3.0, &m(&p00, &u2)?)?
            .axpy(-3.0, &m(&u0, &p11)?)?;
        let r9 = u2.scale(l4).axpy(-6.0, &m(&p01, &u2)?)?.axpy(-1.0, &m(&p11, &u1)?)?;
        let r11 = m(&u0, &p22)?.scale(-3.0).axpy(-3.0, &m(&p11, &u2)?)?;
        let r13 = m(&u1, &p22)?.scale(-3.0);
        let r15 = m(&p22, &u2)?.scale(-1.0);
        Ok(ResidualExpansion {
            atlas,
            u0,
            u1,
            u2,
            lambda2: l2,
            lambda4: l4,
            orders: vec![r7, r9, r11, r13, r15],
        })
    }

    /// `f_ε = -(R_7 + ε²R_9 + ε⁴R_11 + ε⁶R_13 + ε⁸R_15)`.
    pub fn f_eps(&self, eps: f64) -> SpectralField {
        let e2 = eps * eps;
        let mut f = SpectralField::zeros(self.atlas.clone());
        let mut w = -1.0;
        for r in &self.orders {
            f = f.axpy(w, r).expect("shared atlas");
            w *= e2;
        }
        f
    }

    pub fn u_eps(&self, eps: f64) -> SpectralField {
        let e3 = eps.powi(3);
        self.u0
            .scale(eps)
            .axpy(e3, &self.u1)
            .and_then(|f| f.axpy(e3 * eps * eps, &self.u2))
            .expect("shared atlas")
    }

    pub fn prepare(&self, eps: f64) -> Result<PreparedState> {
        if !(eps > 0.0 && eps <= 0.5) {
            return Err(Error::OutOfRange { what: "epsilon", value: eps });
        }
        let e2 = eps * eps;
        Ok(PreparedState {
            epsilon: eps,
            u_eps: self.u_eps(eps),
            lambda_eps: e2 * self.lambda2 + e2 * e2 * self.lambda4,
            f_eps: self.f_eps(eps),
        })
    }
}

/// `λu - (1+Δ)²u - u³`, with the cube computed exactly on `u`'s atlas.
pub fn sh_residual(u: &SpectralField, lambda: f64) -> Result<SpectralField> {
    let cube = u.multiply_exact(u)?.multiply_exact(u)?;
    u.scale(lambda).sub(&u.apply_l0())?.sub(&cube)
}

/// H₀ norm of the Swift–Hohenberg residual of `U_ε` at `λ_ε`, computed
/// directly rather than order by order.
pub fn direct_residual_norm(expansion: &ResidualExpansion, eps: f64) -> Result<f64> {
    let e2 = eps * eps;
    let lambda = e2 * expansion.lambda2 + e2 * e2 * expansion.lambda4;
    Ok(sh_residual(&expansion.u_eps(eps), lambda)?.hs_norm(SobolevIndex::ZERO))
}
