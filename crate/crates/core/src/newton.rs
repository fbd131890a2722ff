//! Galerkin truncation of the steady Swift–Hohenberg equation
//! `λu - (1+Δ)²u - u³ = 0` on rotation-invariant fields, with a damped
//! Newton solver, the contraction map for the correction `W`, and a
//! warm-started parameter sweep.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{expand, ExpansionBundle};
use crate::error::{Error, Result};
use crate::field::{SobolevIndex, SpectralField};
use crate::quasilattice::LatticeAtlas;
use crate::ring::Canon;

/// Windows up to this many sites keep a precomputed table of pairwise sums.
pub const PAIR_TABLE_LIMIT: usize = 16_000;

/// Dense factorization is used up to this many unknowns.
pub const DENSE_DOF_LIMIT: usize = 4000;

/// Step halvings tried before a step is accepted regardless.
pub const MAX_HALVINGS: usize = 10;

/// Consecutive growing steps after which the contraction map is declared divergent.
pub const DIVERGENCE_STEPS: usize = 5;

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Dense below [`DENSE_DOF_LIMIT`] unknowns, iterative above.
    Auto,
    Dense,
    /// Preconditioned conjugate residuals to the given relative tolerance.
    Iterative { tol: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Trial step length at the first iteration; it doubles every iteration
    /// up to a full step.
    pub damping: f64,
    pub linear_solver: LinearSolver,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { tol: 1e-10, max_iter: 50, damping: 1.0, linear_solver: LinearSolver::Auto }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::OutOfRange { what: "tol", value: self.tol });
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::OutOfRange { what: "damping", value: self.damping });
        }
        if let LinearSolver::Iterative { tol } = self.linear_solver {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(Error::OutOfRange { what: "linear solver tol", value: tol });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub residual: f64,
    pub step: f64,
    pub damping: f64,
    /// H₀ mass of the cube on the shell `(W + W) \ W` next to the window.
    pub lost_mass: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// `‖u - U_ε‖₀`.
    pub diff_h0: f64,
    /// `ε⁻⁴‖u - U_ε‖₀`.
    pub scaled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub lambda: f64,
    pub dof: usize,
    pub iterates: Vec<Iterate>,
    pub converged: bool,
    pub final_residual: f64,
    pub final_residual_h3: f64,
    pub epsilon_used: Option<f64>,
    pub comparison: Option<Comparison>,
    /// `max step_{n+1} / step_n²` over the last three full steps.
    pub quadratic_ratio: Option<f64>,
}

enum PairIndex {
    Table(Vec<u32>),
    Hashed,
}

/// Truncated system on the orbit representatives of a window.
pub struct GalerkinSystem {
    atlas: Arc<LatticeAtlas>,
    reps: Vec<u32>,
    sizes: Vec<u32>,
    words: Vec<u32>,
    diag: Vec<f64>,
    neg: Vec<u32>,
    ext_keys: Vec<Canon>,
    ext_index: FxHashMap<Canon, u32>,
    pairs: PairIndex,
    /// Orbit representatives of `(W + W) \ W` with their orbit sizes, and
    /// for each the index in `W + W` of `p - k_j` per window site.
    shell_sizes: Vec<u32>,
    shell: Vec<u32>,
    bundle: OnceLock<ExpansionBundle>,
}

impl std::fmt::Debug for GalerkinSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GalerkinSystem")
            .field("q", &self.atlas.q())
            .field("sites", &self.atlas.len())
            .field("dof", &self.dof())
            .field("extended", &self.ext_keys.len())
            .finish()
    }
}

impl GalerkinSystem {
    pub fn new(atlas: Arc<LatticeAtlas>) -> Result<Self> {
        let n = atlas.len();
        let orbits = atlas.orbits();
        let reps: Vec<u32> = orbits.iter().map(|o| o[0]).collect();
        let sizes: Vec<u32> = orbits.iter().map(|o| o.len() as u32).collect();
        let words = reps.iter().map(|&r| atlas.site(r as usize).n_word).collect();
        let diag = reps.iter().map(|&r| atlas.l0_symbol(r as usize)).collect();
        let neg = (0..n).map(|i| atlas.negated(i) as u32).collect();

        let mut ext_keys = Vec::new();
        let mut ext_index = FxHashMap::default();
        let mut insert = |key: Canon, keys: &mut Vec<Canon>| -> u32 {
            *ext_index.entry(key).or_insert_with(|| {
                keys.push(key);
                (keys.len() - 1) as u32
            })
        };
        let pairs = if n <= PAIR_TABLE_LIMIT {
            let mut table = vec![0u32; n * n];
            for i in 0..n {
                let a = atlas.site(i).canon;
                for j in i..n {
                    let s = a.checked_add(&atlas.site(j).canon).ok_or(Error::KeyOverflow)?;
                    let e = insert(s, &mut ext_keys);
                    table[i * n + j] = e;
                    table[j * n + i] = e;
                }
            }
            PairIndex::Table(table)
        } else {
            for i in 0..n {
                let a = atlas.site(i).canon;
                for j in i..n {
                    insert(a.checked_add(&atlas.site(j).canon).ok_or(Error::KeyOverflow)?, &mut ext_keys);
                }
            }
            PairIndex::Hashed
        };

        let (shell_sizes, shell) = match pairs {
            PairIndex::Table(_) => Self::shell_tables(&atlas, &ext_keys, &ext_index)?,
            PairIndex::Hashed => (Vec::new(), Vec::new()),
        };

        Ok(GalerkinSystem {
            atlas,
            reps,
            sizes,
            words,
            diag,
            neg,
            ext_keys,
            ext_index,
            pairs,
            shell_sizes,
            shell,
            bundle: OnceLock::new(),
        })
    }

    fn shell_tables(
        atlas: &LatticeAtlas,
        keys: &[Canon],
        index: &FxHashMap<Canon, u32>,
    ) -> Result<(Vec<u32>, Vec<u32>)> {
        let n = atlas.len();
        let mut seen = vec![false; keys.len()];
        let mut sizes = Vec::new();
        let mut table = Vec::new();
        for e in 0..keys.len() {
            if seen[e] || atlas.index_of(&keys[e]).is_some() {
                continue;
            }
            let mut key = keys[e];
            let mut size = 0;
            for _ in 0..2 * atlas.q() {
                let Some(&k) = index.get(&key) else { break };
                if !seen[k as usize] {
                    seen[k as usize] = true;
                    size += 1;
                }
                key = atlas.basis().rotate(&key)?;
            }
            sizes.push(size);
            let p = keys[e];
            for j in 0..n {
                let d = p.checked_sub(&atlas.site(j).canon).and_then(|d| index.get(&d).copied());
                table.push(d.unwrap_or(NONE));
            }
        }
        Ok((sizes, table))
    }

    pub fn atlas(&self) -> &Arc<LatticeAtlas> {
        &self.atlas
    }

    pub fn q(&self) -> u32 {
        self.atlas.q()
    }

    pub fn dof(&self) -> usize {
        self.reps.len()
    }

    pub fn reps(&self) -> &[u32] {
        &self.reps
    }

    pub fn orbit_sizes(&self) -> &[u32] {
        &self.sizes
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Number of sites of `W + W`.
    pub fn extended_len(&self) -> usize {
        self.ext_keys.len()
    }

    /// Expansion data for `q`, computed on first use.
    pub fn bundle(&self) -> Result<&ExpansionBundle> {
        if let Some(b) = self.bundle.get() {
            return Ok(b);
        }
        let b = expand(self.q())?;
        Ok(self.bundle.get_or_init(|| b))
    }

    fn sum(&self, i: usize, j: usize) -> u32 {
        match &self.pairs {
            PairIndex::Table(t) => t[i * self.atlas.len() + j],
            PairIndex::Hashed => {
                let s = self.atlas.site(i).canon.checked_add(&self.atlas.site(j).canon).expect("checked at build");
                self.ext_index[&s]
            }
        }
    }

    /// Value on every window site of the symmetric field with these
    /// representative values.
    pub fn expand_reps(&self, u: &[f64]) -> Vec<f64> {
        (0..self.atlas.len()).map(|i| u[self.atlas.orbit_of(i)]).collect()
    }

    pub fn to_field(&self, u: &[f64]) -> SpectralField {
        SpectralField::from_dense(self.atlas.clone(), &self.expand_reps(u))
    }

    /// Representative values of a field, after moving it onto the window.
    /// Fails when the field is not rotation invariant to `1e-12`.
    pub fn from_field(&self, f: &SpectralField) -> Result<Vec<f64>> {
        let f = if Arc::ptr_eq(f.atlas(), &self.atlas) { f.clone() } else { f.transfer(&self.atlas)? };
        let defect = f.symmetry_defect();
        if defect > 1e-12 * f.hs_norm(SobolevIndex::ZERO).max(1.0) {
            return Err(Error::InvalidParameter(format!("field is not rotation invariant (defect {defect:e})")));
        }
        Ok(self.reps.iter().map(|&r| f.get(r as usize)).collect())
    }

    /// Restriction of a field living on any atlas of the same `q`: sites
    /// outside the window are dropped.
    pub fn restrict(&self, f: &SpectralField) -> Vec<f64> {
        self.reps.iter().map(|&r| f.get_canon(&self.atlas.site(r as usize).canon)).collect()
    }

    /// Orbit-weighted H_s norm.
    pub fn norm(&self, v: &[f64], s: SobolevIndex) -> f64 {
        self.inner(v, v, s).sqrt()
    }

    pub fn inner(&self, v: &[f64], w: &[f64], s: SobolevIndex) -> f64 {
        let sv = s.value();
        (0..self.dof())
            .map(|r| {
                let n = self.words[r] as f64;
                let weight = if sv == 0.0 { 1.0 } else { (1.0 + n * n).powf(sv) };
                self.sizes[r] as f64 * weight * v[r] * w[r]
            })
            .sum()
    }

    /// `a·b` on `W + W` from full window vectors.
    fn product_ext(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let n = self.atlas.len();
        let mut w = vec![0.0; self.ext_keys.len()];
        match &self.pairs {
            PairIndex::Table(t) => {
                for i in 0..n {
                    let ai = a[i];
                    if ai == 0.0 {
                        continue;
                    }
                    let row = &t[i * n..(i + 1) * n];
                    for j in 0..n {
                        w[row[j] as usize] += ai * b[j];
                    }
                }
            }
            PairIndex::Hashed => {
                for i in 0..n {
                    if a[i] == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        w[self.sum(i, j) as usize] += a[i] * b[j];
                    }
                }
            }
        }
        w
    }

    /// `P_W(c · w)` at the representatives, `w` given on `W + W`.
    fn times_ext(&self, c: &[f64], w: &[f64]) -> Vec<f64> {
        self.reps
            .iter()
            .map(|&r| {
                let r = r as usize;
                (0..self.atlas.len()).map(|j| c[j] * w[self.sum(r, self.neg[j] as usize) as usize]).sum()
            })
            .collect()
    }

    fn shell_mass(&self, c: &[f64], w: &[f64]) -> Option<f64> {
        if !matches!(self.pairs, PairIndex::Table(_)) {
            return None;
        }
        let n = self.atlas.len();
        let total: f64 = self
            .shell_sizes
            .iter()
            .enumerate()
            .map(|(s, &size)| {
                let row = &self.shell[s * n..(s + 1) * n];
                let v: f64 = (0..n).filter(|&j| row[j] != NONE).map(|j| c[j] * w[row[j] as usize]).sum();
                size as f64 * v * v
            })
            .sum();
        Some(total.sqrt())
    }

    /// `P_W(a·b·c)` at the representatives.
    pub fn triple(&self, a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
        let (a, b, c) = (self.expand_reps(a), self.expand_reps(b), self.expand_reps(c));
        self.times_ext(&a, &self.product_ext(&b, &c))
    }

    /// `(1-|k|²)²u - λu + P_W(u³)` per representative.
    pub fn residual(&self, u: &[f64], lambda: f64) -> Vec<f64> {
        self.residual_with_loss(u, lambda).0
    }

    pub fn residual_with_loss(&self, u: &[f64], lambda: f64) -> (Vec<f64>, Option<f64>) {
        let full = self.expand_reps(u);
        let w = self.product_ext(&full, &full);
        let cube = self.times_ext(&full, &w);
        let out = (0..self.dof()).map(|r| (self.diag[r] - lambda) * u[r] + cube[r]).collect();
        (out, self.shell_mass(&full, &w))
    }

    /// `((1-|k|²)² - λ)v + 3P_W(u²v)`.
    pub fn jacobian_apply(&self, u: &[f64], lambda: f64, v: &[f64]) -> Vec<f64> {
        let full = self.expand_reps(u);
        let w = self.product_ext(&full, &full);
        self.jacobian_apply_with(&w, lambda, v)
    }

    fn jacobian_apply_with(&self, square: &[f64], lambda: f64, v: &[f64]) -> Vec<f64> {
        let conv = self.times_ext(&self.expand_reps(v), square);
        (0..self.dof()).map(|r| (self.diag[r] - lambda) * v[r] + 3.0 * conv[r]).collect()
    }

    /// Jacobian in representative coordinates.
    pub fn jacobian(&self, u: &[f64], lambda: f64) -> DMatrix<f64> {
        let full = self.expand_reps(u);
        let w = self.product_ext(&full, &full);
        self.jacobian_from_square(&w, lambda)
    }

    fn jacobian_from_square(&self, square: &[f64], lambda: f64) -> DMatrix<f64> {
        let d = self.dof();
        let mut m = DMatrix::<f64>::zeros(d, d);
        for (a, &r) in self.reps.iter().enumerate() {
            for j in 0..self.atlas.len() {
                m[(a, self.atlas.orbit_of(j))] += 3.0 * square[self.sum(r as usize, self.neg[j] as usize) as usize];
            }
            m[(a, a)] += self.diag[a] - lambda;
        }
        m
    }

    /// The asymptotic state `U_ε` at `ε = ε(λ)` restricted to the window.
    pub fn asymptotic_guess(&self, lambda: f64) -> Result<(f64, Vec<f64>)> {
        let b = self.bundle()?;
        let eps = b.epsilon_from_lambda(lambda)?;
        Ok((eps, self.restrict(&b.u_eps(eps))))
    }

    fn solve_linear(
        &self,
        jac: &DMatrix<f64>,
        square: &[f64],
        lambda: f64,
        rhs: &[f64],
        mode: LinearSolver,
        iteration: usize,
    ) -> Result<Vec<f64>> {
        let mode = match mode {
            LinearSolver::Auto if self.dof() <= DENSE_DOF_LIMIT => LinearSolver::Dense,
            LinearSolver::Auto => LinearSolver::Iterative { tol: 1e-12 },
            m => m,
        };
        match mode {
            LinearSolver::Iterative { tol } => self.conjugate_residual(square, lambda, rhs, tol, iteration),
            _ => {
                let lu = jac.clone().lu();
                let scale = jac.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
                let u = lu.u();
                if (0..u.nrows()).any(|i| u[(i, i)].abs() <= 1e-14 * scale) {
                    return Err(Error::SingularJacobian { iteration });
                }
                let x = lu.solve(&DVector::from_column_slice(rhs)).ok_or(Error::SingularJacobian { iteration })?;
                Ok(x.as_slice().to_vec())
            }
        }
    }

    /// Preconditioned conjugate residuals on the orbit-symmetrized system.
    fn conjugate_residual(&self, square: &[f64], lambda: f64, rhs: &[f64], tol: f64, iteration: usize) -> Result<Vec<f64>> {
        let d = self.dof();
        let root: Vec<f64> = self.sizes.iter().map(|&s| (s as f64).sqrt()).collect();
        let mean_sq = self.ext_index.get(&Canon::ZERO).map_or(0.0, |&o| square[o as usize]);
        let pre: Vec<f64> = self.diag.iter().map(|&g| (g - lambda + 3.0 * mean_sq).abs().max(1e-12)).collect();
        let apply = |y: &[f64]| -> Vec<f64> {
            let v: Vec<f64> = (0..d).map(|r| y[r] / root[r]).collect();
            let jv = self.jacobian_apply_with(square, lambda, &v);
            (0..d).map(|r| jv[r] * root[r]).collect()
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let b: Vec<f64> = (0..d).map(|r| rhs[r] * root[r]).collect();
        let bnorm = dot(&b, &b).sqrt();
        let mut x = vec![0.0; d];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b.clone();
        let mut z: Vec<f64> = (0..d).map(|i| r[i] / pre[i]).collect();
        let mut p = z.clone();
        let mut az = apply(&z);
        let mut ap = az.clone();
        let mut rho = dot(&z, &az);
        for _ in 0..10 * d.max(100) {
            let mq: Vec<f64> = (0..d).map(|i| ap[i] / pre[i]).collect();
            let denom = dot(&ap, &mq);
            if denom == 0.0 || rho == 0.0 {
                return Err(Error::SingularJacobian { iteration });
            }
            let alpha = rho / denom;
            for i in 0..d {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
                z[i] -= alpha * mq[i];
            }
            if dot(&r, &r).sqrt() <= tol * bnorm {
                return Ok((0..d).map(|i| x[i] / root[i]).collect());
            }
            az = apply(&z);
            let rho_next = dot(&z, &az);
            let beta = rho_next / rho;
            rho = rho_next;
            for i in 0..d {
                p[i] = z[i] + beta * p[i];
                ap[i] = az[i] + beta * ap[i];
            }
        }
        Err(Error::SingularJacobian { iteration })
    }

    fn comparison(&self, u: &[f64], lambda: f64) -> (Option<f64>, Option<Comparison>) {
        if !(lambda > 0.0) {
            return (None, None);
        }
        let Ok((eps, guess)) = self.asymptotic_guess(lambda) else { return (None, None) };
        let diff: Vec<f64> = u.iter().zip(&guess).map(|(a, b)| a - b).collect();
        let d = self.norm(&diff, SobolevIndex::ZERO);
        (Some(eps), Some(Comparison { diff_h0: d, scaled: d / eps.powi(4) }))
    }
}

/// Damped Newton iteration from `init`.
pub fn newton_solve(sys: &GalerkinSystem, lambda: f64, init: &[f64], cfg: &NewtonConfig) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    if !lambda.is_finite() {
        return Err(Error::OutOfRange { what: "lambda", value: lambda });
    }
    if init.len() != sys.dof() || init.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("initial vector must hold {} finite values", sys.dof())));
    }
    let h0 = SobolevIndex::ZERO;
    let mut u = init.to_vec();
    let (mut f, mut loss) = sys.residual_with_loss(&u, lambda);
    let mut res = sys.norm(&f, h0);
    let mut iterates = Vec::new();
    let mut full_steps = Vec::new();
    let mut converged = res <= cfg.tol;
    let mut iteration = 0;
    while !converged && iteration < cfg.max_iter {
        let full = sys.expand_reps(&u);
        let square = sys.product_ext(&full, &full);
        let jac = match cfg.linear_solver {
            LinearSolver::Iterative { .. } => DMatrix::zeros(0, 0),
            LinearSolver::Auto if sys.dof() > DENSE_DOF_LIMIT => DMatrix::zeros(0, 0),
            _ => sys.jacobian_from_square(&square, lambda),
        };
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let delta = sys.solve_linear(&jac, &square, lambda, &rhs, cfg.linear_solver, iteration)?;
        let mut t = (cfg.damping * 2f64.powi(iteration as i32)).min(1.0);
        let mut halvings = 0;
        let (trial, trial_f, trial_loss, trial_res) = loop {
            let cand: Vec<f64> = u.iter().zip(&delta).map(|(a, b)| a + t * b).collect();
            let (cf, cl) = sys.residual_with_loss(&cand, lambda);
            let cr = sys.norm(&cf, h0);
            if cr <= res || halvings == MAX_HALVINGS {
                break (cand, cf, cl, cr);
            }
            t *= 0.5;
            halvings += 1;
        };
        let step = t * sys.norm(&delta, h0);
        if t == 1.0 {
            full_steps.push(step);
        }
        u = trial;
        f = trial_f;
        loss = trial_loss;
        res = trial_res;
        iterates.push(Iterate { residual: res, step, damping: t, lost_mass: loss });
        iteration += 1;
        converged = res <= cfg.tol;
    }
    let _ = loss;
    let quadratic_ratio = if full_steps.len() >= 3 {
        let s = &full_steps[full_steps.len() - 3..];
        Some((s[1] / (s[0] * s[0])).max(s[2] / (s[1] * s[1])))
    } else {
        None
    };
    let (epsilon_used, comparison) = sys.comparison(&u, lambda);
    let report = SolveReport {
        lambda,
        dof: sys.dof(),
        iterates,
        converged,
        final_residual: res,
        final_residual_h3: sys.norm(&f, SobolevIndex::new(3.0)?),
        epsilon_used,
        comparison,
        quadratic_ratio,
    };
    Ok((u, report))
}

/// `G(ε, 0) = -ε³L_ε⁻¹f_ε` on the window.
pub fn first_iterate(sys: &GalerkinSystem, epsilon: f64) -> Result<Vec<f64>> {
    let state = CorrectionState::new(sys, epsilon)?;
    state.apply(sys, &vec![0.0; sys.dof()])
}

struct CorrectionState {
    epsilon: f64,
    lambda: f64,
    u_eps: Vec<f64>,
    f_eps: Vec<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl CorrectionState {
    fn new(sys: &GalerkinSystem, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 0.5) {
            return Err(Error::OutOfRange { what: "epsilon", value: epsilon });
        }
        let b = sys.bundle()?;
        let lambda = b.lambda_eps(epsilon);
        let u_eps = sys.restrict(&b.u_eps(epsilon));
        let e7 = epsilon.powi(7);
        let f_eps = sys.residual(&u_eps, lambda).iter().map(|v| v / e7).collect();
        let jac = sys.jacobian(&u_eps, lambda);
        let scale = jac.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let lu = jac.lu();
        let piv = lu.u();
        if (0..piv.nrows()).any(|i| piv[(i, i)].abs() <= 1e-14 * scale) {
            return Err(Error::SingularJacobian { iteration: 0 });
        }
        Ok(CorrectionState { epsilon, lambda, u_eps, f_eps, lu })
    }

    /// `-ε³L_ε⁻¹[f_ε + 3εU_εW² + ε⁵W³]`.
    fn apply(&self, sys: &GalerkinSystem, w: &[f64]) -> Result<Vec<f64>> {
        let e = self.epsilon;
        let uw2 = sys.triple(&self.u_eps, w, w);
        let w3 = sys.triple(w, w, w);
        let rhs: Vec<f64> = (0..sys.dof())
            .map(|r| -e.powi(3) * (self.f_eps[r] + 3.0 * e * uw2[r] + e.powi(5) * w3[r]))
            .collect();
        let x = self.lu.solve(&DVector::from_vec(rhs)).ok_or(Error::Factorization)?;
        Ok(x.as_slice().to_vec())
    }

    fn state(&self, w: &[f64]) -> Vec<f64> {
        let e4 = self.epsilon.powi(4);
        self.u_eps.iter().zip(w).map(|(u, w)| u + e4 * w).collect()
    }
}

/// Picard iteration of the contraction map from `W = 0`. The report's
/// residual is that of `U_ε + ε⁴W` and each step is measured in `U`.
pub fn fixed_point_solve(sys: &GalerkinSystem, epsilon: f64, cfg: &NewtonConfig) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let h0 = SobolevIndex::ZERO;
    let st = CorrectionState::new(sys, epsilon)?;
    let e4 = epsilon.powi(4);
    let mut w = vec![0.0; sys.dof()];
    let mut iterates = Vec::new();
    let mut last_step = f64::INFINITY;
    let mut growing = 0;
    let mut converged = false;
    for step_no in 0..cfg.max_iter.max(200) {
        let next = st.apply(sys, &w)?;
        let diff: Vec<f64> = next.iter().zip(&w).map(|(a, b)| a - b).collect();
        let step = e4 * sys.norm(&diff, h0);
        w = next;
        let (f, loss) = sys.residual_with_loss(&st.state(&w), st.lambda);
        iterates.push(Iterate { residual: sys.norm(&f, h0), step, damping: 1.0, lost_mass: loss });
        if step > last_step {
            growing += 1;
            if growing >= DIVERGENCE_STEPS {
                return Err(Error::Divergence { step: step_no });
            }
        } else {
            growing = 0;
        }
        last_step = step;
        if step <= 1e-3 * cfg.tol {
            converged = true;
            break;
        }
    }
    let u = st.state(&w);
    let f = sys.residual(&u, st.lambda);
    let final_residual = sys.norm(&f, h0);
    let diff = sys.norm(&u.iter().zip(&st.u_eps).map(|(a, b)| a - b).collect::<Vec<_>>(), h0);
    let report = SolveReport {
        lambda: st.lambda,
        dof: sys.dof(),
        iterates,
        converged: converged && final_residual <= cfg.tol,
        final_residual,
        final_residual_h3: sys.norm(&f, SobolevIndex::new(3.0)?),
        epsilon_used: Some(epsilon),
        comparison: Some(Comparison { diff_h0: diff, scaled: diff / e4 }),
        quadratic_ratio: None,
    };
    Ok((w, report))
}

#[derive(Clone, Debug)]
pub struct ContinuationPoint {
    pub lambda: f64,
    pub solution: Vec<f64>,
    pub report: SolveReport,
    /// `‖u‖₀`.
    pub norm: f64,
}

/// Newton solves along a monotone path of λ, the first from the
/// asymptotic state and each later one from its predecessor.
pub fn continuation(sys: &GalerkinSystem, path: &[f64], cfg: &NewtonConfig) -> Result<Vec<ContinuationPoint>> {
    let up = path.windows(2).all(|w| w[0] <= w[1]);
    let down = path.windows(2).all(|w| w[0] >= w[1]);
    if path.is_empty() || !(up || down) {
        return Err(Error::InvalidParameter("lambda path must be nonempty and sorted".into()));
    }
    let mut out: Vec<ContinuationPoint> = Vec::with_capacity(path.len());
    for &lambda in path {
        let wrap = |e: Error| Error::Continuation { lambda, source: Box::new(e) };
        let init = match out.last() {
            Some(p) => p.solution.clone(),
            None => sys.asymptotic_guess(lambda).map_err(wrap)?.1,
        };
        let (solution, report) = newton_solve(sys, lambda, &init, cfg).map_err(wrap)?;
        if !report.converged {
            return Err(wrap(Error::InvalidParameter(format!(
                "no convergence in {} iterations (residual {:e})",
                cfg.max_iter, report.final_residual
            ))));
        }
        let norm = sys.norm(&solution, SobolevIndex::ZERO);
        out.push(ContinuationPoint { lambda, solution, report, norm });
    }
    Ok(out)
}
