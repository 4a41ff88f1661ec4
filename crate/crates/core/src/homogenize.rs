use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{invert_env, sample_indexed, EnsembleSpec, Environment};
use crate::error::{Error, Result};
use crate::exterior::{binomial, invert_energy, operator_norm, spectrum_bounds, AltForm};
use crate::solver::{Solver, SolverOptions};

/// Conditioning beyond which an estimated `āhom⁻¹` is refused.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McOptions {
    pub nsamples: usize,
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub threads: usize,
    pub solver: SolverOptions,
}

impl McOptions {
    pub fn new(nsamples: usize, seed: u64) -> Self {
        Self { nsamples, seed, threads: 1, solver: SolverOptions::default() }
    }
}

/// Sample index of the `s`-th sample at level `m`, so that levels draw
/// independent environments.
pub fn level_sample_id(m: u32, s: usize) -> u64 {
    ((m as u64) << 32) | s as u64
}

/// Evaluate `f` on every sample index with the requested thread count and
/// collect in index order.
pub fn run_samples<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

/// Mean and plain standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return Self { mean, stderr: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        Self { mean, stderr: (var / n).sqrt() }
    }
}

fn unit_form(dim: usize, degree: usize, i: usize) -> AltForm<f64> {
    let mut c = vec![0.0; binomial(dim, degree)];
    c[i] = 1.0;
    AltForm::from_coeffs(dim, degree, c).unwrap()
}

/// Per-sample quadratic forms: `ν(p) = ½ pᵀN p` and `ν*(q) = ½ q̃ᵀG q̃`,
/// where `q̃` is the pairing coordinate vector of `q`.
#[derive(Clone, Debug)]
pub struct SampleForms {
    pub n: Option<DMatrix<f64>>,
    pub g: DMatrix<f64>,
}

impl SampleForms {
    /// `J(p, q)` for `p` and `q̃` in coordinates.
    pub fn j(&self, p: &DVector<f64>, qt: &DVector<f64>) -> f64 {
        let n = self.n.as_ref().expect("Dirichlet form computed");
        0.5 * p.dot(&(n * p)) + 0.5 * qt.dot(&(&self.g * qt)) - p.dot(qt)
    }

    pub fn nu(&self, p: &DVector<f64>) -> f64 {
        0.5 * p.dot(&(self.n.as_ref().expect("Dirichlet form computed") * p))
    }

    pub fn nustar(&self, qt: &DVector<f64>) -> f64 {
        0.5 * qt.dot(&(&self.g * qt))
    }
}

/// Column `J` of `G` is the mean of `dv(·, □, 0, q)` for `q̃ = e_J`.
pub fn sample_forms(solver: &Solver, with_nu: bool) -> Result<SampleForms> {
    let d = solver.dim();
    let r = solver.degree();
    let k = binomial(d, r);
    let mut g = DMatrix::zeros(k, k);
    for j in 0..k {
        let q = unit_form(d, r, j).hodge_star();
        let rep = solver.solve_nustar(&q)?;
        let mean = solver.mean_gradient(&rep.maximizer);
        for i in 0..k {
            g[(i, j)] = mean.coeffs()[i];
        }
    }
    let n = if with_nu {
        let us = (0..k)
            .map(|i| solver.solve_nu(&unit_form(d, r, i)).map(|rep| rep.maximizer))
            .collect::<Result<Vec<_>>>()?;
        let vol = solver.volume();
        Some(DMatrix::from_fn(k, k, |i, j| solver.energy(&us[i], &us[j]) / vol))
    } else {
        None
    };
    Ok(SampleForms { n, g })
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[derive(Clone, Debug)]
pub struct AhomEstimate {
    pub matrix: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    /// Symmetrized sample mean of `G`, the estimate of `āhom_m⁻¹`.
    pub inverse: DMatrix<f64>,
    pub nsamples: usize,
    pub m: u32,
    pub seed: u64,
    pub dim: usize,
    pub degree: usize,
}

#[derive(Serialize)]
struct AhomJson {
    m: u32,
    seed: u64,
    nsamples: usize,
    d: usize,
    r: usize,
    ahom: Vec<Vec<f64>>,
    stderr: Vec<Vec<f64>>,
}

impl AhomEstimate {
    /// Combine per-sample `G` matrices: `āhom = (sym E[G])⁻¹` with delta-method
    /// errors from the samples of `āhom G āhom`.
    pub fn from_samples(gs: &[DMatrix<f64>], dim: usize, degree: usize, m: u32, seed: u64) -> Result<Self> {
        if gs.len() < 2 {
            return Err(Error::InvalidArgument("at least two samples are required".into()));
        }
        let k = gs[0].nrows();
        let n = gs.len() as f64;
        let mean = gs.iter().fold(DMatrix::zeros(k, k), |acc, g| acc + g) / n;
        let inverse = sym(&mean);
        let (lo, hi) = spectrum_bounds(&inverse);
        if lo <= 0.0 || hi / lo > MAX_CONDITION {
            return Err(Error::IllConditioned(if lo > 0.0 { hi / lo } else { f64::INFINITY }));
        }
        let matrix = sym(&inverse.clone().try_inverse().ok_or(Error::Singular)?);
        let mut stderr = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let vals: Vec<f64> = gs.iter().map(|g| (&matrix * sym(g) * &matrix)[(i, j)]).collect();
                stderr[(i, j)] = Stat::of(&vals).stderr;
            }
        }
        Ok(Self { matrix, stderr, inverse, nsamples: gs.len(), m, seed, dim, degree })
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::to_value(AhomJson {
            m: self.m,
            seed: self.seed,
            nsamples: self.nsamples,
            d: self.dim,
            r: self.degree,
            ahom: rows(&self.matrix),
            stderr: rows(&self.stderr),
        })
        .expect("serializable")
    }

    pub fn max_stderr(&self) -> f64 {
        self.stderr.amax()
    }
}

fn level_forms(spec: &EnsembleSpec, m: u32, mc: &McOptions, with_nu: bool, invert: bool) -> Result<Vec<SampleForms>> {
    run_samples(mc.nsamples, mc.threads, |s| {
        let env = sample_indexed(spec, m, mc.seed, level_sample_id(m, s))?;
        let env = if invert { invert_env(&env)? } else { env };
        sample_forms(&Solver::new(&env, mc.solver)?, with_nu)
    })
}

/// `āhom_m` from `nsamples` environments on `□_m`.
pub fn estimate_ahom(spec: &EnsembleSpec, m: u32, mc: &McOptions) -> Result<AhomEstimate> {
    if mc.nsamples < 2 {
        return Err(Error::InvalidArgument("nsamples must be at least 2".into()));
    }
    let forms = level_forms(spec, m, mc, false, false)?;
    let gs: Vec<DMatrix<f64>> = forms.into_iter().map(|f| f.g).collect();
    AhomEstimate::from_samples(&gs, spec.dim, spec.degree, m, mc.seed)
}

#[derive(Clone, Debug, Serialize)]
pub struct Sequences {
    /// `D_n = Σᵢ E[J(□ₙ, eᵢ, āhom_n eᵢ)]`, `n = 0..=m_max`.
    pub d: Vec<Stat>,
    /// Level-wise decrements, `n = 0..m_max`.
    pub tau: Vec<Stat>,
    /// `E[J(□ₙ, e₁, āhom_n e₁)]`
    pub j1: Vec<Stat>,
    /// Per-sample `J(□ₙ, e₁, āhom_n e₁)`, for stochastic integrability.
    #[serde(skip)]
    pub j1_samples: Vec<Vec<f64>>,
    #[serde(skip)]
    pub ahom: Vec<AhomEstimate>,
}

/// Monte Carlo estimates of `D_m` and `τ_n` with independent samples per level.
pub fn compute_sequences(spec: &EnsembleSpec, m_max: u32, mc: &McOptions) -> Result<Sequences> {
    if m_max < 1 {
        return Err(Error::InvalidArgument("m_max must be at least 1".into()));
    }
    let k = spec.width();
    let mut levels = Vec::new();
    let mut ahom = Vec::new();
    for m in 0..=m_max {
        let forms = level_forms(spec, m, mc, true, false)?;
        let gs: Vec<DMatrix<f64>> = forms.iter().map(|f| f.g.clone()).collect();
        ahom.push(AhomEstimate::from_samples(&gs, spec.dim, spec.degree, m, mc.seed)?);
        levels.push(forms);
    }
    let basis = |i: usize| DVector::from_fn(k, |j, _| if i == j { 1.0 } else { 0.0 });
    let mut d = Vec::new();
    let mut j1 = Vec::new();
    let mut j1_samples = Vec::new();
    for (forms, est) in levels.iter().zip(&ahom) {
        let a = &est.matrix;
        let per: Vec<f64> = forms
            .iter()
            .map(|f| (0..k).map(|i| f.j(&basis(i), &(a * basis(i)))).sum())
            .collect();
        d.push(Stat::of(&per));
        let first: Vec<f64> = forms.iter().map(|f| f.j(&basis(0), &(a * basis(0)))).collect();
        j1.push(Stat::of(&first));
        j1_samples.push(first);
    }
    let mut tau = Vec::new();
    for n in 0..m_max as usize {
        let a = &ahom[n].matrix;
        let decrement = |f: &dyn Fn(&SampleForms) -> f64| {
            let here = Stat::of(&levels[n].iter().map(f).collect::<Vec<_>>());
            let next = Stat::of(&levels[n + 1].iter().map(f).collect::<Vec<_>>());
            Stat { mean: here.mean - next.mean, stderr: here.stderr.hypot(next.stderr) }
        };
        let pick = |stats: Vec<Stat>| {
            stats.into_iter().fold(Stat { mean: f64::NEG_INFINITY, stderr: 0.0 }, |best, s| if s.mean > best.mean { s } else { best })
        };
        let nu = pick((0..k).map(|i| decrement(&|f: &SampleForms| f.nu(&basis(i)))).collect());
        let ns = pick((0..k).map(|i| decrement(&|f: &SampleForms| f.nustar(&(a * basis(i))))).collect());
        tau.push(Stat { mean: nu.mean + ns.mean, stderr: nu.stderr.hypot(ns.stderr) });
    }
    Ok(Sequences { d, tau, j1, j1_samples, ahom })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub alpha: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_range: (usize, usize),
    /// Set when the sequence vanishes identically (`alpha = +∞`).
    pub degenerate: bool,
}

/// Least squares of `log D_n` against `n log 3` over `n ≥ n_min` with
/// positive `D_n`, giving `D_n ≈ e^{intercept} 3^{−α n}`.
pub fn fit_rate_from(d: &[f64], n_min: usize) -> Result<RateFit> {
    let tail = d.get(n_min..).unwrap_or(&[]);
    if !tail.is_empty() && tail.iter().all(|&v| v == 0.0) {
        return Ok(RateFit {
            alpha: f64::INFINITY,
            intercept: f64::NEG_INFINITY,
            r_squared: 1.0,
            n_range: (n_min, d.len().saturating_sub(1)),
            degenerate: true,
        });
    }
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| ((i + n_min) as f64 * 3f64.ln(), v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs 3 positive entries from n = {n_min}, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        alpha: -slope,
        intercept: my - slope * mx,
        r_squared,
        n_range: (n_min, d.len() - 1),
        degenerate: false,
    })
}

/// Rate fit over `n ≥ 1`, leaving out the unit cube.
pub fn fit_rate(d: &[f64]) -> Result<RateFit> {
    fit_rate_from(d, 1)
}

#[derive(Clone, Debug)]
pub struct DualityReport {
    pub ahom: AhomEstimate,
    pub inv_ahom: AhomEstimate,
    /// `(āhom)⁻¹` in the pairing of the inverted coefficient.
    pub expected: DMatrix<f64>,
    pub deviation: f64,
    /// `|J_inv(□, p, q) − J(□, q, p)|` over samples, for `p = dx₁…`, `q = dx₁…`.
    pub exchange: Stat,
}

/// Compare `āhom` of the inverted environments with the inverse of `āhom`.
pub fn verify_duality(spec: &EnsembleSpec, m: u32, mc: &McOptions) -> Result<DualityReport> {
    if mc.nsamples < 2 {
        return Err(Error::InvalidArgument("nsamples must be at least 2".into()));
    }
    let (d, r) = (spec.dim, spec.degree);
    let s = if (r * (d - r)) % 2 == 1 { -1.0 } else { 1.0 };
    // q ∈ Λ^r and p ∈ Λ^{d−r}, both the first basis form
    let q = unit_form(d, r, 0);
    let p = unit_form(d, d - r, 0);
    let pairs = run_samples(mc.nsamples, mc.threads, |i| {
        let env = sample_indexed(spec, m, mc.seed, level_sample_id(m, i))?;
        let inv = invert_env(&env)?;
        let direct = Solver::new(&env, mc.solver)?;
        let dual = Solver::new(&inv, mc.solver)?;
        let f = sample_forms(&direct, false)?;
        let fi = sample_forms(&dual, false)?;
        // J(□, q, p) on the original, J_inv(□, p, q) = J(inv, p, s·q)
        let j_direct = direct.solve_nu(&q)?.value + f.nustar(&p.pairing_dual().to_vector()) - q.dot(&p.pairing_dual())?;
        let qs = q.scale(s);
        let j_dual = dual.solve_nu(&p)?.value + fi.nustar(&qs.pairing_dual().to_vector()) - p.dot(&qs.pairing_dual())?;
        Ok((f.g, fi.g, (j_dual - j_direct).abs()))
    })?;
    let gs: Vec<DMatrix<f64>> = pairs.iter().map(|x| x.0.clone()).collect();
    let gis: Vec<DMatrix<f64>> = pairs.iter().map(|x| x.1.clone()).collect();
    let ahom = AhomEstimate::from_samples(&gs, d, r, m, mc.seed)?;
    let inv_ahom = AhomEstimate::from_samples(&gis, d, d - r, m, mc.seed)?;
    let expected = invert_energy(d, r, &ahom.matrix)?;
    let deviation = operator_norm(&(&inv_ahom.matrix - &expected));
    let exchange = Stat::of(&pairs.iter().map(|x| x.2).collect::<Vec<_>>());
    Ok(DualityReport { ahom, inv_ahom, expected, deviation, exchange })
}

#[derive(Clone, Debug, Serialize)]
pub struct FlatnessReport {
    /// `3^{−m}` times the multiscale surrogate of both fields, sample mean.
    pub scaled: Stat,
    pub gradient_term: Stat,
    pub flux_term: Stat,
}

/// Multiscale surrogate norms of `dv − (āhom⁻¹q − p)` and `a dv − (q − āhom p)`
/// computed on unit cells and scaled by `3^{−m}`.
pub fn flatness_check(
    spec: &EnsembleSpec,
    m: u32,
    p: &AltForm<f64>,
    q: &AltForm<f64>,
    ahom: &DMatrix<f64>,
    mc: &McOptions,
) -> Result<FlatnessReport> {
    let k = spec.width();
    let a_inv = ahom.clone().try_inverse().ok_or(Error::Singular)?;
    let pv = p.to_vector();
    let qt = q.pairing_dual().to_vector();
    let grad_ref = &a_inv * &qt - &pv;
    let flux_ref = &qt - ahom * &pv;
    let scale = 3f64.powi(-(m as i32));
    let terms = run_samples(mc.nsamples, mc.threads, |s| {
        let env = sample_indexed(spec, m, mc.seed, level_sample_id(m, s))?;
        let solver = Solver::new(&env, mc.solver)?;
        let jb = solver.solve_j(p, q)?;
        let grad = solver.gradient_field(&jb.maximizer());
        let mesh = *solver.mesh();
        let coeff = env.coefficients();
        let flux = grad.map_cells(|c, dv, out| {
            let blk = coeff.block(&mesh, &mesh.cell_position(c));
            for i in 0..k {
                out[i] = (0..k).map(|j| blk[i * k + j] * dv[j]).sum::<f64>() - flux_ref[i];
            }
        });
        let grad = grad.map_cells(|_, dv, out| {
            for i in 0..k {
                out[i] = dv[i] - grad_ref[i];
            }
        });
        let refine = mc.solver.refine;
        let g = grad.coarsen(refine)?.multiscale_seminorm()?;
        let f = flux.coarsen(refine)?.multiscale_seminorm()?;
        Ok((scale * g, scale * f))
    })?;
    let gt: Vec<f64> = terms.iter().map(|t| t.0).collect();
    let ft: Vec<f64> = terms.iter().map(|t| t.1).collect();
    let tot: Vec<f64> = terms.iter().map(|t| t.0 + t.1).collect();
    Ok(FlatnessReport { scaled: Stat::of(&tot), gradient_term: Stat::of(&gt), flux_term: Stat::of(&ft) })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OsCalibration {
    pub c: f64,
    pub s: f64,
    pub nsamples: usize,
    /// All samples nonpositive: every `C > 0` works and `0` is returned.
    pub degenerate: bool,
}

const OS_REL_TOL: f64 = 1e-6;

/// Smallest `C` with `mean exp((X₊/C)^s) ≤ 2`, by bisection on data
/// normalized by its maximum.
pub fn os_calibrate(samples: &[f64], s: f64) -> Result<OsCalibration> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    if samples.len() < 10 {
        return Err(Error::InvalidArgument(format!("at least 10 samples needed, got {}", samples.len())));
    }
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("exponent {s} must be positive")));
    }
    let max = samples.iter().fold(0.0f64, |m, &x| m.max(x));
    if max <= 0.0 {
        return Ok(OsCalibration { c: 0.0, s, nsamples: samples.len(), degenerate: true });
    }
    let y: Vec<f64> = samples.iter().map(|&x| x.max(0.0) / max).collect();
    let n = y.len() as f64;
    let ok = |c: f64| y.iter().map(|&v| (v / c).powf(s).exp()).sum::<f64>() / n <= 2.0;
    // every value is at most 1, so C = 1/ln(2)^{1/s} always works
    let mut hi = 1.0 / 2f64.ln().powf(1.0 / s);
    let mut lo = hi;
    while ok(lo) {
        lo *= 0.5;
    }
    while (hi - lo) > OS_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(OsCalibration { c: hi * max, s, nsamples: samples.len(), degenerate: false })
}

/// The environment behind sample `s` of level `m`.
pub fn sample_env(spec: &EnsembleSpec, m: u32, seed: u64, s: usize) -> Result<Environment> {
    sample_indexed(spec, m, seed, level_sample_id(m, s))
}
