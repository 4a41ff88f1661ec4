use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::complex::{
    affine_potential, assemble_energy, assemble_mass, boundary_mask, coboundary_matrix, interpolate, CellField,
    Cochain, Coefficients, Grid, PolyForm, Polynomial, Region,
};
use crate::env::{sample_indexed, Ensemble, EnsembleSpec, Environment};
use crate::error::{Error, Result};
use crate::exterior::{basis, binomial, spectrum_bounds, AltForm, EnergyMatrix};
use crate::homogenize::{level_sample_id, run_samples, Stat};
use crate::linalg::{pcg, CgOptions, Jacobi};
use crate::solver::{Solver, SolverOptions};

/// Coefficient of a boundary value problem.
#[derive(Clone, Debug)]
pub enum Medium {
    Heterogeneous(Environment),
    Constant(EnergyMatrix),
}

/// `d(a du) = 0` in the cube, `t u = t f` on its boundary.
#[derive(Clone, Debug)]
pub struct DirichletProblem {
    pub medium: Medium,
    /// The mesh; a heterogeneous medium must be refined by it.
    pub grid: Grid,
    /// Only the boundary entries are read.
    pub f: Cochain<f64>,
    pub tolerance: f64,
}

impl DirichletProblem {
    pub fn new(medium: Medium, grid: Grid, f: Cochain<f64>, tolerance: f64) -> Result<Self> {
        let degree = match &medium {
            Medium::Heterogeneous(env) => env.degree(),
            Medium::Constant(a) => a.degree(),
        };
        if degree == 0 || f.degree() + 1 != degree {
            return Err(Error::DegreeMismatch(format!("boundary data must have degree {}", degree.max(1) - 1)));
        }
        if !f.grid().same_shape(&grid) {
            return Err(Error::GridMismatch("boundary data does not live on the mesh".into()));
        }
        let mask = boundary_mask(&grid, f.degree());
        if f.values().iter().zip(mask.flags()).any(|(v, &b)| b && !v.is_finite()) {
            return Err(Error::InvalidArgument("boundary data must be finite".into()));
        }
        if !(tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        let problem = Self { medium, grid, f, tolerance };
        problem.refine()?;
        Ok(problem)
    }

    /// Boundary data taken from the interpolant of a polynomial form.
    pub fn from_form(medium: Medium, grid: Grid, f: &PolyForm<f64>, tolerance: f64) -> Result<Self> {
        let f = interpolate(f, &grid)?;
        Self::new(medium, grid, f, tolerance)
    }

    fn refine(&self) -> Result<usize> {
        match &self.medium {
            Medium::Constant(_) => Ok(self.grid.side()),
            Medium::Heterogeneous(env) => {
                let g = env.grid();
                let ok = g.dim() == self.grid.dim()
                    && self.grid.side() % g.side() == 0
                    && (g.length() - self.grid.length()).abs() <= 1e-12 * g.length();
                if !ok {
                    return Err(Error::GridMismatch("mesh does not refine the environment".into()));
                }
                Ok(self.grid.side() / g.side())
            }
        }
    }

    fn environment(&self) -> Result<Environment> {
        Ok(match &self.medium {
            Medium::Heterogeneous(env) => env.clone(),
            Medium::Constant(a) => Environment::constant(&Grid::new(self.grid.dim(), 1, self.grid.length())?, a),
        })
    }
}

#[derive(Clone, Debug)]
pub struct DirichletSolution {
    pub u: Cochain<f64>,
    pub du: Cochain<f64>,
    /// `Q(u, u)`, not normalized by volume.
    pub energy: f64,
    pub iterations: usize,
    pub relative_residual: f64,
}

pub fn solve_dirichlet(problem: &DirichletProblem) -> Result<DirichletSolution> {
    let env = problem.environment()?;
    let mut opts = SolverOptions::with_refine(problem.refine()?);
    opts.cg.tol = problem.tolerance;
    let solver = Solver::new(&env, opts)?;
    let (u, out) = solver.solve_dirichlet(&problem.f)?;
    let du = Cochain::from_values(solver.mesh(), env.degree(), solver.coboundary(&u))?;
    let energy = solver.energy(&u, &u);
    Ok(DirichletSolution { u, du, energy, iterations: out.iterations, relative_residual: out.relative_residual })
}

fn indicator_blocks(mesh: &Grid, degree: usize, cells: &[bool]) -> Vec<f64> {
    let n = binomial(mesh.dim(), degree);
    let id = DMatrix::<f64>::identity(n, n);
    let mut data = Vec::with_capacity(cells.len() * n * n);
    for &inside in cells {
        if inside {
            data.extend_from_slice(id.as_slice());
        } else {
            data.extend(std::iter::repeat(0.0).take(n * n));
        }
    }
    data
}

/// `values − c` for the closed cochain `c` closest to `values` in the Whitney
/// `L²` norm over the selected cells (all cells if `None`). With `zero_trace`
/// only closed cochains vanishing on the boundary compete.
pub fn remove_closed_part(
    values: &Cochain<f64>,
    cells: Option<&[bool]>,
    zero_trace: bool,
) -> Result<Cochain<f64>> {
    let mesh = *values.grid();
    let k = values.degree();
    let n = binomial(mesh.dim(), k);
    let id = DMatrix::<f64>::identity(n, n);
    let data;
    let coeff = match cells {
        Some(c) => {
            if c.len() != mesh.cell_count() {
                return Err(Error::DimensionMismatch { expected: mesh.cell_count(), got: c.len() });
            }
            data = indicator_blocks(&mesh, k, c);
            Coefficients::PerCell { side: mesh.side(), width: n, data: &data }
        }
        None => Coefficients::Constant(&id),
    };
    let mass = assemble_mass(&coeff, &mesh, k)?;
    let v = values.values();
    let out: Vec<f64> = if k == 0 {
        if zero_trace {
            v.to_vec()
        } else {
            let ones = vec![1.0; v.len()];
            let c = mass.bilinear(&ones, v) / mass.bilinear(&ones, &ones);
            v.iter().map(|x| x - c).collect()
        }
    } else {
        let d = coboundary_matrix(&mesh, k - 1)?;
        let mut a = assemble_energy(&coeff, &mesh, k)?;
        let mut b = d.tr_mul_vec(&mass.mul_vec(v));
        if zero_trace {
            let mask = boundary_mask(&mesh, k - 1);
            a = a.with_fixed(mask.flags());
            for (bi, &f) in b.iter_mut().zip(mask.flags()) {
                if f {
                    *bi = 0.0;
                }
            }
        }
        let mut s = vec![0.0; b.len()];
        pcg(&a, &b, &mut s, &Jacobi::new(&a), &CgOptions::default())?;
        let ds = d.mul_vec(&s);
        v.iter().zip(&ds).map(|(x, y)| x - y).collect()
    };
    Cochain::from_values(&mesh, k, out)
}

/// Piecewise multilinear cutoff: 0 within `l` of the boundary of `[0, L]^d`,
/// 1 beyond `2l`.
pub fn cutoff(x: &[f64], length: f64, l: f64) -> f64 {
    x.iter()
        .map(|&t| {
            let dist = t.min(length - t);
            ((dist - l) / l).clamp(0.0, 1.0)
        })
        .product()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoScaleOptions {
    pub nsamples: usize,
    pub seed: u64,
    pub threads: usize,
    pub solver: SolverOptions,
    /// Cutoff width is `cutoff_scale · √ε`.
    pub cutoff_scale: f64,
}

impl TwoScaleOptions {
    pub fn new(nsamples: usize, seed: u64) -> Self {
        Self { nsamples, seed, threads: 1, solver: SolverOptions::default(), cutoff_scale: 1.0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoScaleReport {
    pub eps_list: Vec<f64>,
    pub l2_errors: Vec<f64>,
    pub l2_stderr: Vec<f64>,
    /// Mesh spacing times the multiscale seminorm of `duᵉ − du`.
    pub hminus1_errors: Vec<f64>,
    pub hminus1_stderr: Vec<f64>,
    /// `‖d(uᵉ − wᵉ)‖` in `L²`.
    pub expansion_errors: Vec<f64>,
    /// Slope of `log error` against `log ε`; `None` when some error vanishes.
    pub fitted_rate: Option<f64>,
    pub hminus1_rate: Option<f64>,
    pub nsamples: usize,
    pub seed: u64,
    pub domain: &'static str,
}

impl TwoScaleReport {
    pub fn json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["eps", "l2_error", "hminus1_error"])?;
        for i in 0..self.eps_list.len() {
            w.write_record([
                self.eps_list[i].to_string(),
                self.l2_errors[i].to_string(),
                self.hminus1_errors[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `k` with `ε = 3^{−k}`.
pub fn triadic_level(eps: f64) -> Result<u32> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps {eps} must lie in (0, 1)")));
    }
    let k = (-eps.ln() / 3f64.ln()).round();
    if (3f64.powf(-k) - eps).abs() > 1e-9 * eps {
        return Err(Error::InvalidArgument(format!("eps {eps} is not a power of 1/3")));
    }
    Ok(k as u32)
}

fn log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || y.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Some(sxy / sxx)
}

/// Mean of `(du)_I` over the mesh cells containing each `(r−1)`-face.
fn face_gradient(mesh: &Grid, field: &CellField<f64>, face_degree: usize) -> Vec<Vec<f64>> {
    let d = mesh.dim();
    let layout = mesh.layout(face_degree);
    let width = binomial(d, face_degree + 1);
    let mut out = vec![vec![0.0; layout.len()]; width];
    let side = mesh.side();
    let mut cell = vec![0usize; d];
    layout.for_each(|i, t, pos| {
        let dir = layout.dirs()[t];
        let free: Vec<usize> = (0..d).filter(|&a| !dir.contains(a)).collect();
        let mut count = 0;
        for bits in 0..1usize << free.len() {
            cell.copy_from_slice(pos);
            let mut ok = true;
            for (j, &a) in free.iter().enumerate() {
                if bits >> j & 1 == 1 {
                    if pos[a] == 0 {
                        ok = false;
                    } else {
                        cell[a] = pos[a] - 1;
                    }
                } else if pos[a] == side {
                    ok = false;
                }
            }
            if !ok {
                continue;
            }
            count += 1;
            let g = field.cell(mesh.cell_index(&cell));
            for (c, o) in out.iter_mut().enumerate() {
                o[i] += g[c];
            }
        }
        for o in out.iter_mut() {
            o[i] /= count as f64;
        }
    });
    out
}

struct SampleErrors {
    l2: f64,
    hminus1: f64,
    expansion: f64,
}

fn homogenized_matrix(spec: &EnsembleSpec, ahom: Option<&DMatrix<f64>>) -> Result<EnergyMatrix> {
    let (d, r) = (spec.dim, spec.degree);
    if spec.is_constant() {
        let n = spec.width();
        let Ensemble::Constant { matrix } = &spec.ensemble else { unreachable!() };
        return EnergyMatrix::new(d, r, DMatrix::from_row_slice(n, n, matrix), spec.lambda);
    }
    let a = ahom.ok_or_else(|| Error::InvalidArgument("a homogenized matrix is required".into()))?;
    let a = (a + a.transpose()) * 0.5;
    let (lo, hi) = spectrum_bounds(&a);
    let lambda = spec.lambda.min(lo).min(1.0 / hi);
    EnergyMatrix::new(d, r, a, lambda)
}

/// Homogenization error on the unit cube for boundary data `f`. For constant
/// ensembles the homogenized matrix is the coefficient itself and `ahom` is
/// ignored.
pub fn two_scale_error(
    spec: &EnsembleSpec,
    eps_list: &[f64],
    f: &PolyForm<f64>,
    ahom: Option<&DMatrix<f64>>,
    opts: &TwoScaleOptions,
) -> Result<TwoScaleReport> {
    let (d, r) = (spec.dim, spec.degree);
    if f.dim() != d || f.degree() + 1 != r {
        return Err(Error::DegreeMismatch(format!("boundary data must be a {}-form", r - 1)));
    }
    if opts.nsamples == 0 {
        return Err(Error::InvalidArgument("nsamples must be positive".into()));
    }
    let mut refine = opts.solver.refine;
    while refine > 1 && refine % 3 == 0 {
        refine /= 3;
    }
    if refine != 1 {
        return Err(Error::InvalidArgument("refine must be a power of three".into()));
    }
    let levels: Vec<u32> = eps_list.iter().map(|&e| triadic_level(e)).collect::<Result<_>>()?;
    let hom = homogenized_matrix(spec, ahom)?;
    let mut report = TwoScaleReport {
        eps_list: eps_list.to_vec(),
        l2_errors: vec![],
        l2_stderr: vec![],
        hminus1_errors: vec![],
        hminus1_stderr: vec![],
        expansion_errors: vec![],
        fitted_rate: None,
        hminus1_rate: None,
        nsamples: opts.nsamples,
        seed: opts.seed,
        domain: "unit cube (stands in for a smooth domain)",
    };
    for (&eps, &k) in eps_list.iter().zip(&levels) {
        let cells = 3usize.pow(k);
        let spacing = 1.0 / cells as f64;
        let hom_env = Environment::constant(&Grid::new(d, cells, spacing)?, &hom);
        let hsolver = Solver::new(&hom_env, opts.solver)?;
        let mesh = *hsolver.mesh();
        let boundary = interpolate(f, &mesh)?;
        let (u, _) = hsolver.solve_dirichlet(&boundary)?;
        let du_field = hsolver.gradient_field(&u);
        let dirs = basis(d, r);
        let lifts: Vec<Cochain<f64>> = dirs
            .iter()
            .map(|&i| interpolate(&affine_potential(&AltForm::basis(i))?, &mesh))
            .collect::<Result<_>>()?;
        let gradient = face_gradient(&mesh, &du_field, r - 1);
        let layout = mesh.layout(r - 1);
        let l = opts.cutoff_scale * eps.sqrt();
        let mut zeta = vec![0.0; layout.len()];
        let mut x = vec![0.0; d];
        layout.for_each(|i, t, pos| {
            let dir = layout.dirs()[t];
            for a in 0..d {
                x[a] = (pos[a] as f64 + if dir.contains(a) { 0.5 } else { 0.0 }) * mesh.spacing();
            }
            zeta[i] = cutoff(&x, 1.0, l);
        });

        let samples = run_samples(opts.nsamples, opts.threads, |s| {
            let env = sample_indexed(spec, k, opts.seed, level_sample_id(k, s))?.with_spacing(spacing)?;
            let solver = Solver::new(&env, opts.solver)?;
            let (ue, _) = solver.solve_dirichlet(&boundary)?;
            let mut w = u.values().to_vec();
            for (lift, g) in lifts.iter().zip(&gradient) {
                let (phi, _) = solver.solve_dirichlet(lift)?;
                for i in 0..w.len() {
                    w[i] += zeta[i] * g[i] * (phi.values()[i] - lift.values()[i]);
                }
            }
            let w = Cochain::from_values(&mesh, r - 1, w)?;
            let diff = remove_closed_part(&ue.sub(&u)?, None, true)?;
            let l2 = (hsolver.mass_matrix().bilinear(diff.values(), diff.values()) / mesh.volume()).sqrt();
            let field = solver.gradient_field(&ue).sub(&du_field)?;
            let hminus1 = mesh.spacing() * field.multiscale_seminorm()?;
            let expansion = solver.gradient_norm_sq(&ue.sub(&w)?)?.sqrt();
            Ok(SampleErrors { l2, hminus1, expansion })
        })?;
        let l2 = Stat::of(&samples.iter().map(|s| s.l2).collect::<Vec<_>>());
        let hm = Stat::of(&samples.iter().map(|s| s.hminus1).collect::<Vec<_>>());
        let ex = Stat::of(&samples.iter().map(|s| s.expansion).collect::<Vec<_>>());
        report.l2_errors.push(l2.mean);
        report.l2_stderr.push(l2.stderr);
        report.hminus1_errors.push(hm.mean);
        report.hminus1_stderr.push(hm.stderr);
        report.expansion_errors.push(ex.mean);
    }
    report.fitted_rate = log_slope(eps_list, &report.l2_errors);
    report.hminus1_rate = log_slope(eps_list, &report.hminus1_errors);
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct CaccioppoliStats {
    pub ratios: Vec<f64>,
    pub max: f64,
    pub mean: f64,
    /// `dist(V, ∂U)`
    pub distance: f64,
    /// Side of `V` in mesh cells.
    pub inner_side: usize,
}

/// Concentric sub-cube of about `fraction` of the side, keeping an equal
/// number of cells on both sides.
pub fn inner_region(mesh: &Grid, fraction: f64) -> Result<Region> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside (0, 1)")));
    }
    let n = mesh.side();
    let mut side = (fraction * n as f64).round() as usize;
    if (n - side.min(n)) % 2 == 1 {
        side += 1;
    }
    if side == 0 || side >= n {
        return Err(Error::EmptyRegion);
    }
    Ok(Region::new(vec![(n - side) / 2; mesh.dim()], side))
}

fn region_cells(mesh: &Grid, region: &Region) -> Vec<bool> {
    (0..mesh.cell_count())
        .map(|c| {
            mesh.cell_position(c)
                .iter()
                .zip(&region.origin)
                .all(|(&p, &o)| p >= o && p < o + region.side)
        })
        .collect()
}

/// `‖du‖_{L²(V)} · dist(V, ∂U) / ‖u − c‖_{L²(U∖V)}` with `c` the closest
/// closed cochain on `U∖V`.
pub fn caccioppoli_ratio(solver: &Solver, u: &Cochain<f64>, inner: &Region) -> Result<f64> {
    let mesh = *solver.mesh();
    let r = solver.degree();
    let inside = region_cells(&mesh, inner);
    let outside: Vec<bool> = inside.iter().map(|b| !b).collect();
    let n = binomial(mesh.dim(), r);
    let data = indicator_blocks(&mesh, r, &inside);
    let mass_v = assemble_mass(&Coefficients::PerCell { side: mesh.side(), width: n, data: &data }, &mesh, r)?;
    let du = solver.coboundary(u);
    let num = mass_v.bilinear(&du, &du).max(0.0).sqrt();
    if num == 0.0 {
        return Ok(0.0);
    }
    let e = remove_closed_part(u, Some(&outside), false)?;
    let n0 = binomial(mesh.dim(), r - 1);
    let data = indicator_blocks(&mesh, r - 1, &outside);
    let mass_out =
        assemble_mass(&Coefficients::PerCell { side: mesh.side(), width: n0, data: &data }, &mesh, r - 1)?;
    let den = mass_out.bilinear(e.values(), e.values()).max(0.0).sqrt();
    let dist = inner.origin[0] as f64 * mesh.spacing();
    Ok(num * dist / den)
}

/// A form of the given degree whose components are quadratic polynomials in
/// `x / length` with coefficients uniform on `[−1, 1]`.
pub fn random_quadratic_form<R: Rng>(dim: usize, degree: usize, length: f64, rng: &mut R) -> Result<PolyForm<f64>> {
    let components = (0..binomial(dim, degree))
        .map(|_| {
            let mut p = Polynomial::zero(dim);
            p.add_term(vec![0; dim], rng.gen_range(-1.0..=1.0));
            for a in 0..dim {
                for b in a..dim {
                    let mut e = vec![0u32; dim];
                    e[a] += 1;
                    p.add_term(e.clone(), rng.gen_range(-1.0..=1.0) / length);
                    e[b] += 1;
                    p.add_term(e, rng.gen_range(-1.0..=1.0) / (length * length));
                }
            }
            p
        })
        .collect();
    PolyForm::from_components(dim, degree, components)
}

/// Ratio statistics over solutions with random quadratic boundary data. The
/// probes do not depend on the mesh, so refinements of one environment see
/// the same boundary data.
pub fn caccioppoli_diag(
    env: &Environment,
    opts: SolverOptions,
    fraction: f64,
    probes: usize,
    seed: u64,
) -> Result<CaccioppoliStats> {
    let solver = Solver::new(env, opts)?;
    let inner = inner_region(solver.mesh(), fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ratios: Vec<f64> = (0..probes)
        .map(|_| {
            let f = random_quadratic_form(env.dim(), env.degree() - 1, env.grid().length(), &mut rng)?;
            let (u, _) = solver.solve_dirichlet(&interpolate(&f, solver.mesh())?)?;
            caccioppoli_ratio(&solver, &u, &inner)
        })
        .collect::<Result<_>>()?;
    let max = ratios.iter().fold(0.0f64, |m, &v| m.max(v));
    let mean = if ratios.is_empty() { 0.0 } else { ratios.iter().sum::<f64>() / ratios.len() as f64 };
    Ok(CaccioppoliStats {
        max,
        mean,
        distance: inner.origin[0] as f64 * solver.mesh().spacing(),
        inner_side: inner.side,
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn spec(e: &str, d: usize, r: usize) -> EnsembleSpec {
        EnsembleSpec::new(e.parse().unwrap(), d, r, 0.25).unwrap()
    }

    fn random_env(grid: &Grid, degree: usize, seed: u64) -> Environment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = binomial(grid.dim(), degree);
        let cells: Vec<DMatrix<f64>> = (0..grid.cell_count())
            .map(|_| {
                let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.4..0.4));
                DMatrix::identity(n, n) * 1.2 + &b * b.transpose()
            })
            .collect();
        Environment::from_cells(grid, degree, 0.25, &cells).unwrap()
    }

    #[test]
    fn affine_data_is_reproduced() {
        let grid = Grid::new(3, 4, 0.5).unwrap();
        let a = EnergyMatrix::new(3, 2, DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 1.5]), 0.25)
            .unwrap();
        let p = AltForm::from_coeffs(3, 2, vec![0.7, -1.1, 0.4]).unwrap();
        let lp = affine_potential(&p).unwrap();
        let problem = DirichletProblem::from_form(Medium::Constant(a), grid, &lp, 1e-12).unwrap();
        let sol = solve_dirichlet(&problem).unwrap();
        let exact = interpolate(&PolyForm::constant(&p), &grid).unwrap();
        let err = sol.du.sub(&exact).unwrap().max_abs();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn zero_data_gives_zero() {
        let grid = Grid::new(2, 9, 1.0).unwrap();
        let env = random_env(&grid, 1, 3);
        let problem = DirichletProblem::new(Medium::Heterogeneous(env), grid, Cochain::zeros(&grid, 0), 1e-10).unwrap();
        let sol = solve_dirichlet(&problem).unwrap();
        assert_eq!(sol.du.max_abs(), 0.0);
    }

    #[test]
    fn matches_dense_direct_solve() {
        for (d, r) in [(2, 1), (3, 1), (3, 2), (2, 2)] {
            let grid = Grid::new(d, 3, 1.0).unwrap();
            let env = random_env(&grid, r, 11 + d as u64 * 10 + r as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let f: Vec<f64> = (0..grid.face_count(r - 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = Cochain::from_values(&grid, r - 1, f).unwrap();
            let problem = DirichletProblem::new(Medium::Heterogeneous(env.clone()), grid, f.clone(), 1e-13).unwrap();
            let sol = solve_dirichlet(&problem).unwrap();

            let q = assemble_energy(&env.coefficients(), &grid, r).unwrap().to_dense();
            let mask = boundary_mask(&grid, r - 1);
            let interior: Vec<usize> = (0..f.len()).filter(|&i| !mask.is_boundary(i)).collect();
            let bnd: Vec<usize> = (0..f.len()).filter(|&i| mask.is_boundary(i)).collect();
            let qii = DMatrix::from_fn(interior.len(), interior.len(), |i, j| q[(interior[i], interior[j])]);
            let rhs = DVector::from_fn(interior.len(), |i, _| {
                -bnd.iter().map(|&j| q[(interior[i], j)] * f.values()[j]).sum::<f64>()
            });
            // closed interior cochains make Q_II singular for r ≥ 2
            let x = qii.svd(true, true).solve(&rhs, 1e-11).unwrap();
            let mut dense = f.values().to_vec();
            for (k, &i) in interior.iter().enumerate() {
                dense[i] = x[k];
            }
            let dense = Cochain::from_values(&grid, r - 1, dense).unwrap().coboundary().unwrap();
            let err = sol.du.sub(&dense).unwrap().max_abs();
            assert!(err < 1e-9, "d={d} r={r}: {err}");
        }
    }

    #[test]
    fn energy_below_any_extension() {
        let grid = Grid::new(2, 9, 1.0).unwrap();
        let env = random_env(&grid, 1, 8);
        let mut x2 = Polynomial::coordinate(2, 0).mul(&Polynomial::coordinate(2, 1));
        x2.add_term(vec![2, 0], 0.3);
        let f = PolyForm::from_components(2, 0, vec![x2]).unwrap();
        let problem = DirichletProblem::from_form(Medium::Heterogeneous(env.clone()), grid, &f, 1e-12).unwrap();
        let sol = solve_dirichlet(&problem).unwrap();
        let q = assemble_energy(&env.coefficients(), &grid, 1).unwrap();
        let mask = boundary_mask(&grid, 0);
        let zeroed: Vec<f64> =
            problem.f.values().iter().zip(mask.flags()).map(|(&v, &b)| if b { v } else { 0.0 }).collect();
        assert!(sol.energy <= q.bilinear(problem.f.values(), problem.f.values()));
        assert!(sol.energy <= q.bilinear(&zeroed, &zeroed));
    }

    #[test]
    fn boundary_gauge_shift() {
        let grid = Grid::new(2, 9, 1.0).unwrap();
        let env = random_env(&grid, 1, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f: Vec<f64> = (0..grid.face_count(0)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = f.iter().map(|v| v + 3.7).collect();
        let solve = |v: Vec<f64>| {
            let c = Cochain::from_values(&grid, 0, v).unwrap();
            solve_dirichlet(&DirichletProblem::new(Medium::Heterogeneous(env.clone()), grid, c, 1e-10).unwrap()).unwrap()
        };
        let (a, b) = (solve(f), solve(g));
        assert!(a.du.sub(&b.du).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn closed_part_removal_ignores_closed_additions() {
        let grid = Grid::new(3, 3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut v: Vec<f64> = (0..grid.face_count(1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mask = boundary_mask(&grid, 1);
        for (x, &b) in v.iter_mut().zip(mask.flags()) {
            if b {
                *x = 0.0;
            }
        }
        let s: Vec<f64> = (0..grid.face_count(0))
            .map(|i| if boundary_mask(&grid, 0).is_boundary(i) { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        let ds = coboundary_matrix(&grid, 0).unwrap().mul_vec(&s);
        let u = Cochain::from_values(&grid, 1, v.clone()).unwrap();
        let w = Cochain::from_values(&grid, 1, v.iter().zip(&ds).map(|(a, b)| a + b).collect()).unwrap();
        let a = remove_closed_part(&u, None, true).unwrap();
        let b = remove_closed_part(&w, None, true).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn constant_ensemble_has_no_homogenization_error() {
        let s = spec("constant:1.5", 2, 1);
        let f = affine_potential(&AltForm::dx(2, &[0]).unwrap()).unwrap();
        let rep = two_scale_error(&s, &[1.0 / 9.0, 1.0 / 27.0], &f, None, &TwoScaleOptions::new(2, 1)).unwrap();
        assert!(rep.l2_errors.iter().chain(&rep.hminus1_errors).all(|&e| e == 0.0), "{rep:?}");
        assert_eq!(rep.fitted_rate, None);
    }

    #[test]
    fn closed_boundary_data_has_no_error() {
        let s = spec("checkerboard2:1,4", 2, 1);
        let f = PolyForm::constant(&AltForm::from_coeffs(2, 0, vec![2.5]).unwrap());
        let ahom = DMatrix::identity(2, 2) * 2.0;
        let rep = two_scale_error(&s, &[1.0 / 9.0], &f, Some(&ahom), &TwoScaleOptions::new(2, 1)).unwrap();
        assert!(rep.l2_errors[0] < 1e-14 && rep.hminus1_errors[0] < 1e-14, "{rep:?}");
    }

    #[test]
    fn rejects_non_triadic_eps() {
        assert!(triadic_level(0.1).is_err());
        assert_eq!(triadic_level(1.0 / 81.0).unwrap(), 4);
    }

    #[test]
    fn caccioppoli_affine_probe() {
        let side = 9usize;
        let grid = Grid::new(2, side, 1.0).unwrap();
        let env = Environment::constant(&grid, &EnergyMatrix::of_star(2, 1, 1.0, 0.25).unwrap());
        let solver = Solver::new(&env, SolverOptions::default()).unwrap();
        let u = interpolate(&affine_potential(&AltForm::dx(2, &[0]).unwrap()).unwrap(), &grid).unwrap();
        let inner = inner_region(&grid, 1.0 / 3.0).unwrap();
        assert_eq!(inner, Region::new(vec![3, 3], 3));
        let ratio = caccioppoli_ratio(&solver, &u, &inner).unwrap();
        let (l, s) = (side as f64, 3.0);
        let expected = s * (l - s) / 2.0 / ((l.powi(4) - s.powi(4)) / 12.0).sqrt();
        assert!((ratio - expected).abs() < 1e-10 * expected, "{ratio} vs {expected}");

        let c = Cochain::from_values(&grid, 0, vec![1.3; grid.face_count(0)]).unwrap();
        assert_eq!(caccioppoli_ratio(&solver, &c, &inner).unwrap(), 0.0);
    }
}
