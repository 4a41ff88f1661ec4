use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use formhom::complex::dump::write_cochain_csv;
use formhom::complex::{affine_potential, Cochain, Grid};
use formhom::dirichlet::{
    caccioppoli_diag, solve_dirichlet, two_scale_error, DirichletProblem, Medium, TwoScaleOptions,
};
use formhom::env::{sample_indexed, write_env_dump, Ensemble};
use formhom::exterior::{operator_norm, AltForm};
use formhom::homogenize::{
    compute_sequences, estimate_ahom, fit_rate_from, flatness_check, os_calibrate, run_samples, sample_env,
    verify_duality, McOptions, Sequences,
};
use formhom::solver::{check_subadditivity, quadratic_response, Solver, SolverOptions};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{Command, ExperimentConfig};
use crate::output::Results;
use crate::RunError;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn first_basis(d: usize, degree: usize) -> AltForm<f64> {
    let mut c = vec![0.0; formhom::exterior::binomial(d, degree)];
    c[0] = 1.0;
    AltForm::from_coeffs(d, degree, c).expect("valid degree")
}

impl ExperimentConfig {
    fn mc(&self) -> McOptions {
        McOptions { nsamples: self.nsamples, seed: self.seed, threads: self.threads, solver: self.solver_options() }
    }

    /// `p`, by default `dx₁…`.
    fn p_form(&self) -> AltForm<f64> {
        match &self.p {
            Some(c) => AltForm::from_coeffs(self.d, self.r, c.clone()).expect("validated"),
            None => first_basis(self.d, self.r),
        }
    }

    /// `q`, by default the form whose pairing vector is the first basis vector.
    fn q_form(&self) -> AltForm<f64> {
        match &self.q {
            Some(c) => AltForm::from_coeffs(self.d, self.d - self.r, c.clone()).expect("validated"),
            None => first_basis(self.d, self.r).hodge_star(),
        }
    }
}

fn matrix_rows(res: &mut Results, exp: &str, n: u32, name: &str, m: &DMatrix<f64>, err: Option<&DMatrix<f64>>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            res.row(exp, n, format!("{name}[{i},{j}]"), m[(i, j)], err.map(|e| e[(i, j)]));
        }
    }
}

fn sequence_rows(res: &mut Results, exp: &str, seq: &Sequences) {
    for (n, s) in seq.d.iter().enumerate() {
        res.row(exp, n, "D", s.mean, Some(s.stderr));
    }
    for (n, s) in seq.tau.iter().enumerate() {
        res.row(exp, n, "tau", s.mean, Some(s.stderr));
    }
    for (n, s) in seq.j1.iter().enumerate() {
        res.row(exp, n, "J1", s.mean, Some(s.stderr));
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, RunError> {
    fs::create_dir_all(dir).map_err(RunError::io)?;
    Ok(BufWriter::new(File::create(dir.join(name)).map_err(RunError::io)?))
}

/// Run the configured experiment, writing any auxiliary files into the
/// output directory; the caller writes `results.json` and `results.csv`.
pub fn run(cfg: &ExperimentConfig) -> Result<Results, RunError> {
    let spec = cfg.spec();
    let mc = cfg.mc();
    let exp = cfg.command.name();
    let mut res = Results::default();
    match cfg.command {
        Command::SampleEnv => {
            let env = sample_indexed(&spec, cfg.m, cfg.seed, cfg.sample)?;
            write_env_dump(&env, &spec, cfg.seed, cfg.sample, create(&cfg.out, "env.csv")?, create(&cfg.out, "env.json")?)?;
            let (lo, hi) = env.spectrum();
            res.insert("cells", env.grid().cell_count());
            res.insert("lambda_min", lo);
            res.insert("lambda_max", hi);
            res.insert("files", ["env.csv", "env.json"]);
            res.row(exp, cfg.m, "lambda_min", lo, None);
            res.row(exp, cfg.m, "lambda_max", hi, None);
        }
        Command::EstimateAhom => {
            let est = estimate_ahom(&spec, cfg.m, &mc)?;
            res.insert("ahom", est.json());
            res.insert("ahom_inverse", rows(&est.inverse));
            matrix_rows(&mut res, exp, cfg.m, "ahom", &est.matrix, Some(&est.stderr));
        }
        Command::Sequences | Command::Rate => {
            let seq = compute_sequences(&spec, cfg.m_max, &mc)?;
            res.insert("sequences", &seq);
            res.insert("ahom", seq.ahom.iter().map(|a| rows(&a.matrix)).collect::<Vec<_>>());
            sequence_rows(&mut res, exp, &seq);
            if cfg.command == Command::Rate {
                let d: Vec<f64> = seq.d.iter().map(|s| s.mean).collect();
                let fit = fit_rate_from(&d, cfg.n_min)?;
                res.insert("fit", &fit);
                res.row(exp, "", "alpha", fit.alpha, None);
                res.row(exp, "", "r_squared", fit.r_squared, None);
            }
        }
        Command::Duality => {
            let rep = verify_duality(&spec, cfg.m, &mc)?;
            res.insert("ahom", rep.ahom.json());
            res.insert("inv_ahom", rep.inv_ahom.json());
            res.insert("expected", rows(&rep.expected));
            res.insert("deviation", rep.deviation);
            res.insert("exchange", rep.exchange);
            matrix_rows(&mut res, exp, cfg.m, "ahom", &rep.ahom.matrix, Some(&rep.ahom.stderr));
            matrix_rows(&mut res, exp, cfg.m, "inv_ahom", &rep.inv_ahom.matrix, Some(&rep.inv_ahom.stderr));
            res.row(exp, cfg.m, "deviation", rep.deviation, None);
            res.row(exp, cfg.m, "exchange_residual", rep.exchange.mean, Some(rep.exchange.stderr));
        }
        Command::Dykhne => {
            let Ensemble::Checkerboard2 { c1, c2 } = cfg.ensemble else {
                return Err(RunError::Config("dykhne needs a checkerboard2 ensemble".into()));
            };
            if cfg.d != 2 || cfg.r != 1 {
                return Err(RunError::Config("dykhne needs d = 2 and r = 1".into()));
            }
            let est = estimate_ahom(&spec, cfg.m, &mc)?;
            let target = (c1 * c2).sqrt();
            let deviation = operator_norm(&(&est.matrix - DMatrix::identity(2, 2) * target));
            res.insert("ahom", est.json());
            res.insert("target", target);
            res.insert("deviation", deviation);
            matrix_rows(&mut res, exp, cfg.m, "ahom", &est.matrix, Some(&est.stderr));
            res.row(exp, cfg.m, "target", target, None);
            res.row(exp, cfg.m, "deviation", deviation, Some(est.max_stderr()));
        }
        Command::Flatness => {
            let ahom = estimate_ahom(&spec, cfg.m, &mc)?.matrix;
            let (p, q) = (cfg.p_form(), cfg.q_form());
            let levels: Vec<u32> = if cfg.m >= 2 { (2..=cfg.m).collect() } else { vec![cfg.m] };
            let mut reports = Vec::new();
            for &n in &levels {
                let rep = flatness_check(&spec, n, &p, &q, &ahom, &mc)?;
                res.row(exp, n, "scaled", rep.scaled.mean, Some(rep.scaled.stderr));
                res.row(exp, n, "gradient_term", rep.gradient_term.mean, Some(rep.gradient_term.stderr));
                res.row(exp, n, "flux_term", rep.flux_term.mean, Some(rep.flux_term.stderr));
                reports.push(json!({ "m": n, "report": rep }));
            }
            res.insert("ahom", rows(&ahom));
            res.insert("levels", reports);
        }
        Command::Dirichlet => {
            let env = sample_indexed(&spec, cfg.m, cfg.seed, cfg.sample)?;
            let side = env.grid().side() * cfg.refine;
            let mesh = Grid::new(cfg.d, side, 1.0 / cfg.refine as f64)?;
            let f = affine_potential(&cfg.p_form())?;
            let problem = DirichletProblem::from_form(Medium::Heterogeneous(env), mesh, &f, cfg.tol)?;
            let sol = solve_dirichlet(&problem)?;
            write_cochain_csv(&sol.u, create(&cfg.out, "u.csv")?)?;
            let energy = 0.5 * sol.energy / mesh.volume();
            res.insert("energy", energy);
            res.insert("iterations", sol.iterations);
            res.insert("relative_residual", sol.relative_residual);
            res.insert("files", ["u.csv"]);
            res.row(exp, cfg.m, "energy", energy, None);
            res.row(exp, cfg.m, "iterations", sol.iterations as f64, None);
            res.row(exp, cfg.m, "relative_residual", sol.relative_residual, None);
        }
        Command::TwoScale => {
            let ahom = if spec.is_constant() { None } else { Some(estimate_ahom(&spec, cfg.m, &mc)?.matrix) };
            let f = affine_potential(&cfg.p_form())?;
            let opts = TwoScaleOptions {
                nsamples: cfg.nsamples,
                seed: cfg.seed,
                threads: cfg.threads,
                solver: cfg.solver_options(),
                cutoff_scale: 1.0,
            };
            let rep = two_scale_error(&spec, &cfg.eps, &f, ahom.as_ref(), &opts)?;
            rep.write_csv(create(&cfg.out, "two_scale.csv")?)?;
            for i in 0..rep.eps_list.len() {
                let eps = rep.eps_list[i];
                res.row(exp, eps, "l2_error", rep.l2_errors[i], Some(rep.l2_stderr[i]));
                res.row(exp, eps, "hminus1_error", rep.hminus1_errors[i], Some(rep.hminus1_stderr[i]));
                res.row(exp, eps, "expansion_error", rep.expansion_errors[i], None);
            }
            if let Some(a) = rep.fitted_rate {
                res.row(exp, "", "fitted_rate", a, None);
            }
            if let Some(a) = rep.hminus1_rate {
                res.row(exp, "", "hminus1_rate", a, None);
            }
            res.insert("ahom", ahom.as_ref().map(rows));
            res.insert("report", rep.json());
            res.insert("files", ["two_scale.csv"]);
        }
        Command::Diagnostics => diagnostics(cfg, &mut res)?,
        Command::OsCalibrate => {
            let seq = compute_sequences(&spec, cfg.m_max, &mc)?;
            let d: Vec<f64> = seq.d.iter().map(|s| s.mean).collect();
            let fit = fit_rate_from(&d, cfg.n_min)?;
            let mut levels = Vec::new();
            for (n, samples) in seq.j1_samples.iter().enumerate() {
                let cal = os_calibrate(samples, cfg.s)?;
                let scaled = cal.c * 3f64.powf(n as f64 * fit.alpha);
                res.row(exp, n, "C", cal.c, None);
                res.row(exp, n, "C_scaled", scaled, None);
                levels.push(json!({ "n": n, "calibration": cal, "scaled": scaled }));
            }
            res.row(exp, "", "alpha", fit.alpha, None);
            res.insert("fit", &fit);
            res.insert("levels", levels);
        }
    }
    Ok(res)
}

struct SampleDiag {
    decomposition_gap: f64,
    first_variation: f64,
    margin: Option<f64>,
    control_ok: bool,
    quadratic_ok: bool,
}

fn diagnostics(cfg: &ExperimentConfig, res: &mut Results) -> Result<(), RunError> {
    let spec = cfg.spec();
    let opts = cfg.solver_options();
    let (p, q) = (cfg.p_form(), cfg.q_form());
    let exp = cfg.command.name();
    let per = run_samples(cfg.nsamples, cfg.threads, |s| {
        let env = sample_env(&spec, cfg.m, cfg.seed, s)?;
        let solver = Solver::new(&env, opts)?;
        let jb = solver.solve_j(&p, &q)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (s as u64).wrapping_mul(0x9e37_79b9));
        let w: Vec<f64> = (0..solver.unknowns()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Cochain::from_values(solver.mesh(), cfg.r - 1, w)?;
        let first_variation = solver.first_variation_residual(&p, &q, &jb.maximizer(), &w)?;
        let probe = solver.probe_solutions(1, rng.gen())?.remove(0);
        let qr = quadratic_response(&solver, &p, &q, &probe, 1e-8)?;
        let (margin, control_ok) = if cfg.m >= 1 {
            let sub = check_subadditivity(&env, &p, &q, opts)?;
            (Some(sub.margin), sub.control_holds(1e-8))
        } else {
            (None, true)
        };
        Ok(SampleDiag {
            decomposition_gap: jb.decomposition_gap(),
            first_variation,
            margin,
            control_ok,
            quadratic_ok: qr.lower_ok && qr.upper_ok,
        })
    })?;
    let max = |f: fn(&SampleDiag) -> f64| per.iter().map(f).fold(0.0f64, f64::max);
    let gap = max(|s| s.decomposition_gap);
    let fv = max(|s| s.first_variation);
    let min_margin = per.iter().filter_map(|s| s.margin).fold(f64::INFINITY, f64::min);
    let control_failures = per.iter().filter(|s| !s.control_ok).count();
    let quadratic_failures = per.iter().filter(|s| !s.quadratic_ok).count();
    res.row(exp, cfg.m, "max_decomposition_gap", gap, None);
    res.row(exp, cfg.m, "max_first_variation_residual", fv, None);
    if min_margin.is_finite() {
        res.row(exp, cfg.m, "min_subadditivity_margin", min_margin, None);
        res.insert("min_subadditivity_margin", min_margin);
    }
    res.row(exp, cfg.m, "optimizer_control_failures", control_failures as f64, None);
    res.row(exp, cfg.m, "quadratic_response_failures", quadratic_failures as f64, None);
    res.insert("max_decomposition_gap", gap);
    res.insert("max_first_variation_residual", fv);
    res.insert("optimizer_control_failures", control_failures);
    res.insert("quadratic_response_failures", quadratic_failures);

    // Caccioppoli ratios on one environment at two mesh resolutions
    let env = sample_env(&spec, cfg.m, cfg.seed, 0)?;
    let mut cacc = Vec::new();
    for refine in [cfg.refine, 3 * cfg.refine] {
        let o = SolverOptions { refine, ..opts };
        let stats = caccioppoli_diag(&env, o, cfg.fraction, cfg.probes, cfg.seed)?;
        res.row(exp, cfg.m, format!("caccioppoli_max_refine{refine}"), stats.max, None);
        res.row(exp, cfg.m, format!("caccioppoli_mean_refine{refine}"), stats.mean, None);
        cacc.push(json!({ "refine": refine, "max": stats.max, "mean": stats.mean, "distance": stats.distance }));
    }
    res.insert("caccioppoli", cacc);
    Ok(())
}
