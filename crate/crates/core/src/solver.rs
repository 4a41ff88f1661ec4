use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::complex::{
    affine_potential, assemble_energy, assemble_mass, boundary_mask, cell_load, coboundary_matrix,
    interpolate, BoundaryMask, CellField, Cochain, Coefficients, Grid,
};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::exterior::{binomial, AltForm};
use crate::linalg::{pcg, CgOptions, CgOutcome, CsrMatrix, Jacobi, Multigrid, Preconditioner};

/// Vertex problems smaller than this use Jacobi even when multigrid applies.
const MULTIGRID_MIN_DOF: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preconditioning {
    /// Multigrid for vertex unknowns on grids divisible by three, else Jacobi.
    Auto,
    Jacobi,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub cg: CgOptions,
    /// Mesh cells per coefficient cell along each axis.
    pub refine: usize,
    pub preconditioning: Preconditioning,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { cg: CgOptions::default(), refine: 1, preconditioning: Preconditioning::Auto }
    }
}

impl SolverOptions {
    pub fn with_refine(refine: usize) -> Self {
        Self { refine, ..Self::default() }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub value: f64,
    /// Degree `r − 1`, defined modulo closed cochains.
    pub maximizer: Cochain<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// JSON record of a single solve.
#[derive(Clone, Debug, Serialize)]
pub struct SolveRecord {
    pub value: f64,
    pub iterations: usize,
    pub residual: f64,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

impl SolveReport {
    pub fn record(&self, seed: Option<u64>, config_hash: Option<String>) -> SolveRecord {
        SolveRecord {
            value: self.value,
            iterations: self.iterations,
            residual: self.relative_residual,
            seed,
            config_hash,
        }
    }
}

#[derive(Clone, Debug)]
pub struct JBundle {
    pub j: f64,
    pub nu: f64,
    pub nustar: f64,
    /// `⋆(p ∧ q)`
    pub pairing: f64,
    pub v_p: Cochain<f64>,
    pub v_q: Cochain<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

impl JBundle {
    /// The maximizer `v = v_p + v_q`.
    pub fn maximizer(&self) -> Cochain<f64> {
        self.v_p.add(&self.v_q).expect("same shape")
    }

    /// `|J − (ν + ν* − ⋆(p∧q))|` with `J` evaluated directly at the maximizer.
    pub fn decomposition_gap(&self) -> f64 {
        (self.j - (self.nu + self.nustar - self.pairing)).abs()
    }
}

struct Constrained {
    matrix: CsrMatrix,
    pre: Box<dyn Preconditioner + Send>,
}

/// Assembled operators for one environment on its (possibly refined) mesh.
pub struct Solver<'a> {
    env: &'a Environment,
    mesh: Grid,
    degree: usize,
    opts: SolverOptions,
    energy: CsrMatrix,
    d_r: CsrMatrix,
    mask: BoundaryMask,
    dirichlet: OnceLock<Constrained>,
    neumann: OnceLock<Box<dyn Preconditioner + Send>>,
    mass: OnceLock<CsrMatrix>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a> Solver<'a> {
    pub fn new(env: &'a Environment, opts: SolverOptions) -> Result<Self> {
        if opts.refine == 0 {
            return Err(Error::InvalidArgument("refine must be positive".into()));
        }
        let g = env.grid();
        let mesh = Grid::new(g.dim(), g.side() * opts.refine, g.spacing() / opts.refine as f64)?;
        let degree = env.degree();
        let energy = assemble_energy(&env.coefficients(), &mesh, degree)?;
        let d_r = coboundary_matrix(&mesh, degree - 1)?;
        let mask = boundary_mask(&mesh, degree - 1);
        Ok(Self {
            env,
            mesh,
            degree,
            opts,
            energy,
            d_r,
            mask,
            dirichlet: OnceLock::new(),
            neumann: OnceLock::new(),
            mass: OnceLock::new(),
        })
    }

    pub fn env(&self) -> &Environment {
        self.env
    }

    pub fn mesh(&self) -> &Grid {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn energy_matrix(&self) -> &CsrMatrix {
        &self.energy
    }

    pub fn boundary(&self) -> &BoundaryMask {
        &self.mask
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn unknowns(&self) -> usize {
        self.energy.nrows()
    }

    fn multigrid_applies(&self) -> bool {
        self.opts.preconditioning == Preconditioning::Auto
            && self.degree == 1
            && self.mesh.side() % 3 == 0
            && self.unknowns() >= MULTIGRID_MIN_DOF
    }

    fn dirichlet_system(&self) -> &Constrained {
        self.dirichlet.get_or_init(|| {
            let matrix = self.energy.with_fixed(self.mask.flags());
            let pre: Box<dyn Preconditioner + Send> = if self.multigrid_applies() {
                Box::new(Multigrid::new(&matrix, self.dim(), self.mesh.side(), Some(self.mask.flags())))
            } else {
                Box::new(Jacobi::new(&matrix))
            };
            Constrained { matrix, pre }
        })
    }

    fn neumann_pre(&self) -> &dyn Preconditioner {
        self.neumann
            .get_or_init(|| {
                if self.multigrid_applies() {
                    Box::new(Multigrid::new(&self.energy, self.dim(), self.mesh.side(), None))
                } else {
                    Box::new(Jacobi::new(&self.energy))
                }
            })
            .as_ref()
    }

    /// Whitney mass on `(r−1)`-cochains with unit coefficient.
    pub fn mass_matrix(&self) -> &CsrMatrix {
        self.mass.get_or_init(|| {
            let n = binomial(self.dim(), self.degree - 1);
            let id = DMatrix::identity(n, n);
            assemble_mass(&Coefficients::Constant(&id), &self.mesh, self.degree - 1).expect("valid degree")
        })
    }

    fn check_p(&self, p: &AltForm<f64>) -> Result<()> {
        if p.dim() != self.dim() || p.degree() != self.degree {
            return Err(Error::DegreeMismatch(format!(
                "p must be a {}-form in dimension {}",
                self.degree,
                self.dim()
            )));
        }
        Ok(())
    }

    fn check_q(&self, q: &AltForm<f64>) -> Result<()> {
        if q.dim() != self.dim() || q.degree() != self.dim() - self.degree {
            return Err(Error::DegreeMismatch(format!(
                "q must be a {}-form in dimension {}",
                self.dim() - self.degree,
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.mesh.volume()
    }

    /// `Q(u, w)`
    pub fn energy(&self, u: &Cochain<f64>, w: &Cochain<f64>) -> f64 {
        self.energy.bilinear(u.values(), w.values())
    }

    pub fn coboundary(&self, u: &Cochain<f64>) -> Vec<f64> {
        self.d_r.mul_vec(u.values())
    }

    /// Face weights `ℓ` with `ℓ · du = ∫ ⋆(du ∧ q)`.
    pub fn flux_load(&self, q: &AltForm<f64>) -> Result<Vec<f64>> {
        self.check_q(q)?;
        Ok(cell_load(&CellField::constant(&self.mesh, &q.pairing_dual())))
    }

    /// Face weights `ℓ` with `ℓ · du = ∫ ⋆(p ∧ a du)`.
    pub fn field_load(&self, p: &AltForm<f64>) -> Result<Vec<f64>> {
        self.check_p(p)?;
        let coeff = self.env.coefficients();
        let n = self.env.width();
        let pv = p.coeffs();
        let mut field = CellField::zeros(&self.mesh, self.degree);
        for c in 0..self.mesh.cell_count() {
            let pos = self.mesh.cell_position(c);
            let m = coeff.block(&self.mesh, &pos);
            let out = field.cell_mut(c);
            for i in 0..n {
                out[i] = (0..n).map(|j| m[i * n + j] * pv[j]).sum();
            }
        }
        Ok(cell_load(&field))
    }

    /// The normalized functional
    /// `⨍ (−½ dw∧a dw − p∧a dw + dw∧q)`.
    pub fn functional(&self, p: &AltForm<f64>, q: &AltForm<f64>, w: &Cochain<f64>) -> Result<f64> {
        let dw = self.coboundary(w);
        let lp = self.field_load(p)?;
        let lq = self.flux_load(q)?;
        let value = -0.5 * self.energy(w, w) - dot(&lp, &dw) + dot(&lq, &dw);
        Ok(value / self.volume())
    }

    /// Minimize `Q` over cochains equal to `boundary` on boundary faces.
    /// Interior entries of `boundary` are ignored.
    pub fn solve_dirichlet(&self, boundary: &Cochain<f64>) -> Result<(Cochain<f64>, CgOutcome)> {
        if boundary.degree() != self.degree - 1 || !boundary.grid().same_shape(&self.mesh) {
            return Err(Error::GridMismatch("boundary data does not match the mesh".into()));
        }
        let flags = self.mask.flags();
        // Constants are the closed 0-cochains: solving for data with zero
        // boundary mean makes the result independent of that gauge.
        let shift = if self.degree == 1 {
            let (sum, n) = boundary.values().iter().zip(flags).filter(|(_, &f)| f).fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
            sum / n as f64
        } else {
            0.0
        };
        let u0: Vec<f64> =
            boundary.values().iter().zip(flags).map(|(&v, &f)| if f { v - shift } else { 0.0 }).collect();
        let mut rhs = self.energy.mul_vec(&u0);
        for (r, &f) in rhs.iter_mut().zip(flags) {
            *r = if f { 0.0 } else { -*r };
        }
        let sys = self.dirichlet_system();
        let mut x = vec![0.0; rhs.len()];
        let outcome = pcg(&sys.matrix, &rhs, &mut x, sys.pre.as_ref(), &self.opts.cg)?;
        let u: Vec<f64> = u0.iter().zip(&x).map(|(a, b)| a + b + shift).collect();
        Ok((Cochain::from_values(&self.mesh, self.degree - 1, u)?, outcome))
    }

    /// Maximize `−½Q(u) + ℓ·du` over all cochains.
    fn solve_free(&self, load: &[f64]) -> Result<(Cochain<f64>, CgOutcome)> {
        let b = self.d_r.tr_mul_vec(load);
        self.check_consistent(&b)?;
        let mut x = vec![0.0; b.len()];
        let outcome = pcg(&self.energy, &b, &mut x, self.neumann_pre(), &self.opts.cg)?;
        Ok((Cochain::from_values(&self.mesh, self.degree - 1, x)?, outcome))
    }

    /// The right side must be orthogonal to the closed cochains.
    fn check_consistent(&self, b: &[f64]) -> Result<()> {
        let bn = norm(b);
        if bn == 0.0 {
            return Ok(());
        }
        let leak = if self.degree == 1 {
            b.iter().sum::<f64>().abs() / (b.len() as f64).sqrt()
        } else {
            let d_prev = coboundary_matrix(&self.mesh, self.degree - 2)?;
            norm(&d_prev.tr_mul_vec(b)) / (2.0 * self.degree as f64).sqrt()
        };
        if leak > 1e-9 * bn {
            return Err(Error::InconsistentRhs(leak / bn));
        }
        Ok(())
    }

    /// `ν(□, p) = inf ⨍ ½ du∧a du` over `u ∈ l_{−p} + H¹_{d,0}`.
    pub fn solve_nu(&self, p: &AltForm<f64>) -> Result<SolveReport> {
        self.check_p(p)?;
        let lp = interpolate(&affine_potential(&(-p.clone()))?, &self.mesh)?;
        let (u, out) = self.solve_dirichlet(&lp)?;
        let value = 0.5 * self.energy(&u, &u) / self.volume();
        Ok(SolveReport { value, maximizer: u, iterations: out.iterations, relative_residual: out.relative_residual })
    }

    /// `ν*(□, q) = sup ⨍ (−½ du∧a du + du∧q)` over all `u`.
    pub fn solve_nustar(&self, q: &AltForm<f64>) -> Result<SolveReport> {
        let load = self.flux_load(q)?;
        let (v, out) = self.solve_free(&load)?;
        let value = 0.5 * dot(&load, &self.coboundary(&v)) / self.volume();
        Ok(SolveReport { value, maximizer: v, iterations: out.iterations, relative_residual: out.relative_residual })
    }

    pub fn solve_j(&self, p: &AltForm<f64>, q: &AltForm<f64>) -> Result<JBundle> {
        let nu = self.solve_nu(p)?;
        let ns = self.solve_nustar(q)?;
        let pairing = p.dot(&q.pairing_dual())?;
        let v = nu.maximizer.add(&ns.maximizer)?;
        let j = self.functional(p, q, &v)?;
        Ok(JBundle {
            j,
            nu: nu.value,
            nustar: ns.value,
            pairing,
            v_p: nu.maximizer,
            v_q: ns.maximizer,
            iterations: nu.iterations + ns.iterations,
            relative_residual: nu.relative_residual.max(ns.relative_residual),
        })
    }

    /// Per-cell means of `du` on the mesh.
    pub fn gradient_field(&self, u: &Cochain<f64>) -> CellField<f64> {
        let du = Cochain::from_values(&self.mesh, self.degree, self.coboundary(u)).expect("shape");
        CellField::reconstruct(&du)
    }

    /// `(du)_□`
    pub fn mean_gradient(&self, u: &Cochain<f64>) -> AltForm<f64> {
        let du = self.coboundary(u);
        let n = binomial(self.dim(), self.degree);
        let coeffs = (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                let unit = AltForm::from_coeffs(self.dim(), self.degree, e).unwrap();
                dot(&cell_load(&CellField::constant(&self.mesh, &unit)), &du) / self.volume()
            })
            .collect();
        AltForm::from_coeffs(self.dim(), self.degree, coeffs).unwrap()
    }

    /// `‖du‖²` in the normalized Whitney `L²` norm.
    pub fn gradient_norm_sq(&self, u: &Cochain<f64>) -> Result<f64> {
        let du = self.coboundary(u);
        let n = binomial(self.dim(), self.degree);
        let id = DMatrix::identity(n, n);
        let m = assemble_mass(&Coefficients::Constant(&id), &self.mesh, self.degree)?;
        Ok(m.bilinear(&du, &du) / self.volume())
    }

    /// `‖dw‖²` via the unit-coefficient energy, without assembling a mass.
    pub fn unit_energy(&self) -> Result<CsrMatrix> {
        let n = binomial(self.dim(), self.degree);
        let id = DMatrix::identity(n, n);
        assemble_energy(&Coefficients::Constant(&id), &self.mesh, self.degree)
    }

    /// Solutions from random boundary data with entries uniform on `[−1, 1]`.
    pub fn probe_solutions(&self, count: usize, seed: u64) -> Result<Vec<Cochain<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let vals = self.mask.flags().iter().map(|&f| if f { rng.gen_range(-1.0..=1.0) } else { 0.0 }).collect();
                let f = Cochain::from_values(&self.mesh, self.degree - 1, vals)?;
                Ok(self.solve_dirichlet(&f)?.0)
            })
            .collect()
    }

    /// Largest interior residual of `Q w` relative to `‖Q‖·‖w‖`.
    pub fn interior_residual(&self, w: &Cochain<f64>) -> f64 {
        let qw = self.energy.mul_vec(w.values());
        let worst = qw.iter().zip(self.mask.flags()).filter(|(_, &f)| !f).fold(0.0f64, |m, (v, _)| m.max(v.abs()));
        let scale = self.energy.values().iter().fold(0.0f64, |m, v| m.max(v.abs())) * w.max_abs();
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    /// First variation residual
    /// `|∫dv∧a dw − ∫(−p∧a dw + dw∧q)| / (‖dw‖(|p|+|q|+‖dv‖))`, norms normalized.
    pub fn first_variation_residual(
        &self,
        p: &AltForm<f64>,
        q: &AltForm<f64>,
        v: &Cochain<f64>,
        w: &Cochain<f64>,
    ) -> Result<f64> {
        let dw = self.coboundary(w);
        let lhs = self.energy(v, w);
        let rhs = -dot(&self.field_load(p)?, &dw) + dot(&self.flux_load(q)?, &dw);
        let unit = self.unit_energy()?;
        let vol = self.volume();
        let ndw = (unit.bilinear(w.values(), w.values()) / vol).sqrt();
        let ndv = (unit.bilinear(v.values(), v.values()) / vol).sqrt();
        let scale = ndw * (p.norm() + q.norm() + ndv);
        Ok(if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / vol / scale })
    }

    /// Restriction of an `(r−1)`-cochain to the sub-cube with the given
    /// origin and side, both in coefficient cells.
    pub fn restrict(&self, u: &Cochain<f64>, origin: &[usize], side: usize) -> Result<Cochain<f64>> {
        let k = self.opts.refine;
        let sub = Grid::new(self.dim(), side * k, self.mesh.spacing())?;
        let src = self.mesh.layout(self.degree - 1);
        let dst = sub.layout(self.degree - 1);
        let mut vals = vec![0.0; dst.len()];
        let mut g = vec![0usize; self.dim()];
        dst.for_each(|i, t, pos| {
            for a in 0..pos.len() {
                g[a] = pos[a] + origin[a] * k;
            }
            vals[i] = u.values()[src.index(t, &g)];
        });
        Cochain::from_values(&sub, self.degree - 1, vals)
    }
}

/// `⋆(p∧q)` through the coordinate pairing.
pub fn pairing(p: &AltForm<f64>, q: &AltForm<f64>) -> Result<f64> {
    p.dot(&q.pairing_dual())
}

pub fn solve_nu(env: &Environment, p: &AltForm<f64>, opts: SolverOptions) -> Result<SolveReport> {
    Solver::new(env, opts)?.solve_nu(p)
}

pub fn solve_nustar(env: &Environment, q: &AltForm<f64>, opts: SolverOptions) -> Result<SolveReport> {
    Solver::new(env, opts)?.solve_nustar(q)
}

pub fn solve_j(env: &Environment, p: &AltForm<f64>, q: &AltForm<f64>, opts: SolverOptions) -> Result<JBundle> {
    Solver::new(env, opts)?.solve_j(p, q)
}

#[derive(Clone, Debug, Serialize)]
pub struct SubadditivityReport {
    pub parent: f64,
    pub children: Vec<f64>,
    /// Child average minus parent; nonnegative up to solver tolerance.
    pub margin: f64,
    /// `Σ |Uᵢ|/|U| ‖dv_U − dv_{Uᵢ}‖²_{L²(Uᵢ)}`
    pub optimizer_gap: f64,
    /// `2/λ_min`, the discrete constant of the optimizer control.
    pub control_constant: f64,
}

impl SubadditivityReport {
    pub fn control_holds(&self, tol: f64) -> bool {
        self.optimizer_gap <= self.control_constant * self.margin.max(0.0) + tol
    }
}

/// Compare `J(□_m)` with the average over its `3^d` triadic children.
pub fn check_subadditivity(
    env: &Environment,
    p: &AltForm<f64>,
    q: &AltForm<f64>,
    opts: SolverOptions,
) -> Result<SubadditivityReport> {
    let g = env.grid();
    if g.side() % 3 != 0 {
        return Err(Error::NotTriadic(g.side()));
    }
    let d = g.dim();
    let child_side = g.side() / 3;
    let parent_solver = Solver::new(env, opts)?;
    let parent = parent_solver.solve_j(p, q)?;
    let v = parent.maximizer();
    let mut children = Vec::with_capacity(3usize.pow(d as u32));
    let mut gap = 0.0;
    for z in 0..3usize.pow(d as u32) {
        let origin: Vec<usize> = (0..d).map(|a| (z / 3usize.pow((d - 1 - a) as u32)) % 3 * child_side).collect();
        let child_env = env.restrict(&origin, child_side)?;
        let solver = Solver::new(&child_env, opts)?;
        let jb = solver.solve_j(p, q)?;
        let diff = parent_solver.restrict(&v, &origin, child_side)?.sub(&jb.maximizer())?;
        let unit = solver.unit_energy()?;
        gap += unit.bilinear(diff.values(), diff.values()) / solver.volume();
        children.push(jb.j);
    }
    let n = children.len() as f64;
    let avg = children.iter().sum::<f64>() / n;
    let (lo, _) = env.spectrum();
    Ok(SubadditivityReport {
        parent: parent.j,
        margin: avg - parent.j,
        children,
        optimizer_gap: gap / n,
        control_constant: 2.0 / lo,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct QuadraticResponse {
    pub lower_ok: bool,
    pub upper_ok: bool,
    /// `J − ⨍(−½dw∧a dw − p∧a dw + dw∧q)`
    pub middle: f64,
    /// `‖dw − dv‖²` normalized.
    pub distance_sq: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Check `½λ‖dw−dv‖² ≤ J − F(w) ≤ ½λ⁻¹‖dw−dv‖²` for a discrete solution `w`.
pub fn quadratic_response(
    solver: &Solver,
    p: &AltForm<f64>,
    q: &AltForm<f64>,
    w: &Cochain<f64>,
    tol: f64,
) -> Result<QuadraticResponse> {
    let res = solver.interior_residual(w);
    if res > 1e-6 {
        return Err(Error::NotASolution(res));
    }
    let jb = solver.solve_j(p, q)?;
    let middle = jb.j - solver.functional(p, q, w)?;
    let diff = w.sub(&jb.maximizer())?;
    let unit = solver.unit_energy()?;
    let distance_sq = unit.bilinear(diff.values(), diff.values()) / solver.volume();
    let (lambda_min, lambda_max) = solver.env().spectrum();
    let scale = tol * (1.0 + jb.j.abs() + distance_sq);
    Ok(QuadraticResponse {
        lower_ok: middle >= 0.5 * lambda_min * distance_sq - scale,
        upper_ok: middle <= 0.5 * lambda_max * distance_sq + scale,
        middle,
        distance_sq,
        lambda_min,
        lambda_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_indexed, Ensemble, EnsembleSpec};
    use crate::exterior::{star_wedge_scalar, EnergyMatrix};

    fn spec(e: &str, d: usize, r: usize) -> EnsembleSpec {
        EnsembleSpec::new(e.parse::<Ensemble>().unwrap(), d, r, 0.25).unwrap()
    }

    fn form(d: usize, r: usize, c: &[f64]) -> AltForm<f64> {
        AltForm::from_coeffs(d, r, c.to_vec()).unwrap()
    }

    #[test]
    fn pairing_matches_star_wedge() {
        let p = form(3, 1, &[1.0, 2.0, -1.0]);
        let q = form(3, 2, &[0.5, -0.3, 2.0]);
        assert!((pairing(&p, &q).unwrap() - star_wedge_scalar(&p, &q).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn constant_env_closed_forms() {
        let g = Grid::triadic(2, 1).unwrap();
        let m = EnergyMatrix::new(2, 1, DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), 0.25).unwrap();
        let env = Environment::constant(&g, &m);
        let s = Solver::new(&env, SolverOptions::default()).unwrap();
        let p = form(2, 1, &[1.0, -2.0]);
        let nu = s.solve_nu(&p).unwrap();
        assert!((nu.value - 0.5 * m.energy(&p)).abs() < 1e-10);
        let q = form(2, 1, &[0.3, 0.7]);
        let ns = s.solve_nustar(&q).unwrap();
        let qt = q.pairing_dual().to_vector();
        let expected = 0.5 * (qt.transpose() * m.matrix().clone().try_inverse().unwrap() * &qt)[(0, 0)];
        assert!((ns.value - expected).abs() < 1e-10);
        // q = ā p gives J = 0
        let ap = m.apply(&p);
        let jb = s.solve_j(&p, &ap).unwrap();
        assert!(jb.j.abs() < 1e-9, "{}", jb.j);
        assert!(jb.decomposition_gap() < 1e-9);
    }

    #[test]
    fn zero_data_gives_zero() {
        let s = spec("iid-spd", 2, 1);
        let env = sample_indexed(&s, 1, 1, 0).unwrap();
        let solver = Solver::new(&env, SolverOptions::default()).unwrap();
        let z = AltForm::zeros(2, 1);
        let jb = solver.solve_j(&z, &z).unwrap();
        assert_eq!((jb.j, jb.nu, jb.nustar), (0.0, 0.0, 0.0));
    }

    #[test]
    fn decomposition_and_first_variation() {
        for (d, r) in [(2, 1), (2, 2), (3, 2)] {
            let s = spec("iid-spd", d, r);
            let env = sample_indexed(&s, 1, 4, 2).unwrap();
            let solver = Solver::new(&env, SolverOptions::default()).unwrap();
            let p = AltForm::from_coeffs(d, r, (0..binomial(d, r)).map(|k| 1.0 - 0.4 * k as f64).collect()).unwrap();
            let q = AltForm::from_coeffs(d, d - r, (0..binomial(d, d - r)).map(|k| 0.2 + 0.3 * k as f64).collect()).unwrap();
            let jb = solver.solve_j(&p, &q).unwrap();
            assert!(jb.decomposition_gap() < 1e-8, "d={d} r={r}: {}", jb.decomposition_gap());
            assert!(jb.j > -1e-10);
            let v = jb.maximizer();
            for w in solver.probe_solutions(3, 1).unwrap() {
                assert!(solver.first_variation_residual(&p, &q, &v, &w).unwrap() < 1e-8);
                let qr = quadratic_response(&solver, &p, &q, &w, 1e-9).unwrap();
                assert!(qr.lower_ok && qr.upper_ok, "{qr:?}");
            }
        }
    }

    #[test]
    fn refined_mesh_uses_multigrid_consistently() {
        let s = spec("checkerboard2:1,4", 2, 1);
        let env = sample_indexed(&s, 2, 3, 0).unwrap();
        let p = form(2, 1, &[1.0, 0.0]);
        let q = form(2, 1, &[0.0, 1.5]);
        let fast = Solver::new(&env, SolverOptions::with_refine(3)).unwrap();
        let slow = Solver::new(&env, SolverOptions { preconditioning: Preconditioning::Jacobi, ..SolverOptions::with_refine(3) }).unwrap();
        let a = fast.solve_j(&p, &q).unwrap();
        let b = slow.solve_j(&p, &q).unwrap();
        assert!((a.j - b.j).abs() < 1e-9);
        assert!(a.iterations < b.iterations);
    }

    #[test]
    fn subadditivity_with_constant_env() {
        let g = Grid::triadic(2, 1).unwrap();
        let m = EnergyMatrix::of_star(2, 1, 2.0, 0.25).unwrap();
        let env = Environment::constant(&g, &m);
        let p = form(2, 1, &[1.0, 1.0]);
        let rep = check_subadditivity(&env, &p, &m.apply(&p), SolverOptions::default()).unwrap();
        assert!(rep.margin.abs() < 1e-9 && rep.parent.abs() < 1e-9);
    }

    #[test]
    fn subadditivity_random() {
        let s = spec("checkerboard2:1,4", 2, 1);
        for seed in 0..5 {
            let env = sample_indexed(&s, 2, seed, 0).unwrap();
            let p = form(2, 1, &[1.0, 0.0]);
            let q = form(2, 1, &[0.5, 2.0]);
            let rep = check_subadditivity(&env, &p, &q, SolverOptions::default()).unwrap();
            assert!(rep.margin >= -1e-8, "{rep:?}");
            assert!(rep.control_holds(1e-8), "{rep:?}");
        }
    }
}
