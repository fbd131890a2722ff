use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde_json::json;

use qpf::asymptotics::expand as run_expansion;
use qpf::field::{monitor_products, SobolevIndex, SpectralField};
use qpf::io::{
    atlas_json, blocks_csv, bundle_file, census_csv, divisors_csv, labels_json, sci, to_json, write_pgm, FieldFile,
    SolutionFile,
};
use qpf::newton::{continuation as run_continuation, newton_solve, GalerkinSystem, LinearSolver, NewtonConfig};
use qpf::operator::{block_sweep, check_disjointness, classify_spectrum_unchecked};
use qpf::quasilattice::{build_atlas, LatticeAtlas};

use crate::parse::UsageError;
use crate::{AtlasArgs, Ctx, ImageArgs, NewtonArgs, Status};

pub enum Start {
    Asymptotic,
    Zero,
    File(PathBuf),
}

fn atlas(a: &AtlasArgs) -> Result<Arc<LatticeAtlas>> {
    Ok(Arc::new(build_atlas(a.q, a.nmax, a.kcut)?))
}

fn canon(atlas: &LatticeAtlas, i: usize) -> Vec<i64> {
    atlas.site(i).canon.coords(atlas.basis().dim()).iter().map(|&c| c as i64).collect()
}

fn config(n: &NewtonArgs) -> NewtonConfig {
    NewtonConfig { tol: n.tol, max_iter: n.max_iter, damping: n.damping, linear_solver: LinearSolver::Auto }
}

fn status(clean: bool) -> Status {
    if clean {
        Status::Clean
    } else {
        Status::Violations
    }
}

pub fn lattice(ctx: &Ctx, a: &AtlasArgs, pairs: usize, word: u32, sobolev: f64) -> Result<Status> {
    let atlas = atlas(a)?;
    ctx.write("atlas.json", atlas_json(&atlas)?)?;
    let census = atlas.census();
    ctx.write("census.csv", census_csv(&census))?;
    println!("{} sites up to N = {}, c1 = {}", atlas.len(), a.nmax, census.c1);
    if pairs > 0 {
        let s = SobolevIndex::new(sobolev).map_err(|e| UsageError(format!("--sobolev: {e}")))?;
        let m = monitor_products(a.q, word, pairs, s, ctx.seed)?;
        ctx.write("monitor.json", to_json(&m)?)?;
        println!("product monitor: max ratio {} over {pairs} pairs (seed {})", m.max_ratio, ctx.seed);
    }
    Ok(Status::Clean)
}

pub fn divisors(ctx: &Ctx, a: &AtlasArgs) -> Result<Status> {
    let atlas = atlas(a)?;
    let spec = atlas.divisor_spectrum();
    ctx.write("divisors.csv", divisors_csv(&atlas, &spec))?;
    let on_circle: Vec<Vec<i64>> = spec.on_circle.iter().map(|&i| canon(&atlas, i)).collect();
    ctx.write(
        "divisors.json",
        to_json(&json!({
            "atlas_header": atlas.header(),
            "exponent": spec.exponent,
            "intercept": spec.intercept,
            "c": spec.c,
            "l0": spec.l0,
            "on_circle": on_circle,
        }))?,
    )?;
    println!("fitted exponent {:.4}, c = {:e}, {} extra sites on |k| = 1", spec.exponent, spec.c, on_circle.len());
    Ok(status(on_circle.is_empty()))
}

pub fn expand(ctx: &Ctx, q: u32) -> Result<Status> {
    let b = run_expansion(q)?;
    ctx.write("bundle.json", to_json(&bundle_file(&b))?)?;
    println!("q = {q}: lambda2 = {}, lambda4 = {}", b.lambda2, b.lambda4);
    Ok(Status::Clean)
}

pub fn split(ctx: &Ctx, a: &AtlasArgs, eps: f64, c: f64) -> Result<Status> {
    if !(eps > 0.0 && c > 0.0) {
        return Err(UsageError("--eps and --c must be positive".into()).into());
    }
    let atlas = atlas(a)?;
    let labels = classify_spectrum_unchecked(&atlas, eps, c);
    ctx.write("labels.json", labels_json(&labels)?)?;
    let report = check_disjointness(&labels);
    ctx.write("violations.json", to_json(&report)?)?;
    let [far, ann, disc] = labels.counts();
    println!(
        "{far} far, {ann} annulus, {disc} disc; {} consistency and {} shift violations",
        report.consistency.len(),
        report.violations.len()
    );
    Ok(status(report.is_clean()))
}

pub fn blocks(ctx: &Ctx, q: u32, eps: &[f64], points: usize, c: f64) -> Result<Status> {
    let sweep = block_sweep(q, eps, points, c)?;
    ctx.write("blocks.csv", blocks_csv(&sweep.rows))?;
    let law = sweep.law_holds();
    let lower = sweep.lower_bound_holds();
    ctx.write(
        "blocks.json",
        to_json(&json!({
            "q": q,
            "points": points,
            "c": c,
            "k_fit": sweep.k_fit,
            "defect_ratios": sweep.defect_ratios,
            "min_mu_over_eps2": sweep.min_mu_over_eps2,
            "law_holds": law,
            "lower_bound_holds": lower,
        }))?,
    )?;
    println!("K = {:e}; perturbation law {law}, lower bound {lower}", sweep.k_fit);
    Ok(status(law && lower))
}

fn read_field(path: &Path) -> Result<SpectralField> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: FieldFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(file.to_field()?)
}

fn render_field(ctx: &Ctx, field: &SpectralField, out: &Path, img: &ImageArgs) -> Result<()> {
    if !(img.window > 0.0) || img.resolution < 2 {
        return Err(UsageError("--window must be positive and --resolution at least 2".into()).into());
    }
    let grid = field.sample(img.window, img.resolution)?;
    let mut bytes = Vec::new();
    let side = write_pgm(&grid, &mut bytes)?;
    let path = ctx.write(out, bytes)?;
    let mut sidecar = path.clone().into_os_string();
    sidecar.push(".json");
    ctx.write(PathBuf::from(sidecar), to_json(&side)?)?;
    println!("wrote {} ({}×{}, values in [{}, {}])", path.display(), side.width, side.height, side.min, side.max);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn solve(
    ctx: &Ctx,
    a: &AtlasArgs,
    lambda: f64,
    n: &NewtonArgs,
    start: Start,
    out: &Path,
    render: Option<&Path>,
    img: &ImageArgs,
) -> Result<Status> {
    let sys = GalerkinSystem::new(atlas(a)?)?;
    let init = match start {
        Start::Asymptotic if !(lambda > 0.0) => {
            return Err(UsageError("--init asymptotic needs --lambda > 0".into()).into());
        }
        Start::Asymptotic => sys.asymptotic_guess(lambda)?.1,
        Start::Zero => vec![0.0; sys.dof()],
        Start::File(p) => {
            let f = read_field(&p)?;
            let defect = f.symmetry_defect();
            if defect > 1e-12 * f.hs_norm(SobolevIndex::ZERO).max(1.0) {
                anyhow::bail!("{} is not rotation invariant (defect {defect:e})", p.display());
            }
            sys.restrict(&f)
        }
    };
    let (u, report) = newton_solve(&sys, lambda, &init, &config(n))?;
    let field = sys.to_field(&u);
    let converged = report.converged;
    println!(
        "{} sites, {} unknowns: {} after {} iterations, residual {:e}",
        sys.atlas().len(),
        sys.dof(),
        if converged { "converged" } else { "not converged" },
        report.iterates.len(),
        report.final_residual
    );
    if let (Some(eps), Some(k1)) = (report.epsilon_used, report.comparison.as_ref()) {
        let i = sys.atlas().generator(0);
        println!("eps = {eps}, u(k1) = {}, |u - U_eps| = {:e}", field.get(i), k1.diff_h0);
    }
    ctx.write(out, to_json(&SolutionFile::new(&field, report))?)?;
    if let Some(r) = render {
        render_field(ctx, &field, r, img)?;
    }
    Ok(status(converged))
}

pub fn continuation(ctx: &Ctx, a: &AtlasArgs, from: f64, to: f64, steps: usize, n: &NewtonArgs, out: &Path) -> Result<Status> {
    if steps < 2 || !(from > 0.0 && to > 0.0) {
        return Err(UsageError("--steps must be at least 2 and --from, --to positive".into()).into());
    }
    let path: Vec<f64> = (0..steps).map(|i| from + (to - from) * i as f64 / (steps - 1) as f64).collect();
    let sys = GalerkinSystem::new(atlas(a)?)?;
    let points = run_continuation(&sys, &path, &config(n))?;
    let mut csv = String::from("lambda,epsilon,norm_h0,final_residual,iterations\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            sci(p.lambda),
            sci(p.report.epsilon_used.unwrap_or(f64::NAN)),
            sci(p.norm),
            sci(p.report.final_residual),
            p.report.iterates.len()
        ));
    }
    ctx.write("branch.csv", csv)?;
    let last = points.last().expect("path has at least two points");
    ctx.write(out, to_json(&SolutionFile::new(&sys.to_field(&last.solution), last.report.clone()))?)?;
    println!("{} points from lambda = {from} to {to}, final norm {}", points.len(), last.norm);
    Ok(Status::Clean)
}

pub fn render(ctx: &Ctx, input: &Path, out: &Path, img: &ImageArgs) -> Result<Status> {
    let field = read_field(input)?;
    render_field(ctx, &field, out, img)?;
    Ok(Status::Clean)
}
