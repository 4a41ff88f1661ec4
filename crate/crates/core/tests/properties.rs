use formhom::complex::{
    affine_potential, assemble_energy, coboundary_matrix, interpolate_with_spacing, CellField, Cochain, Coefficients,
    Grid, PolyForm,
};
use formhom::env::{sample_indexed, EnsembleSpec, Environment};
use formhom::exterior::{basis, binomial, hodge_matrix, invert_energy, star_wedge_scalar, AltForm, EnergyMatrix};
use formhom::homogenize::os_calibrate;
use formhom::solver::{Solver, SolverOptions};
use formhom::{Form, IntCochain, Rational, RationalForm};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn rational_form(d: usize, r: usize) -> impl Strategy<Value = RationalForm> {
    prop::collection::vec((-20i64..20, 1i64..7), binomial(d, r)).prop_map(move |c| {
        let coeffs = c.into_iter().map(|(n, k)| Rational::new(n, k)).collect();
        AltForm::from_coeffs(d, r, coeffs).unwrap()
    })
}

fn dims_and_degrees() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=4).prop_flat_map(|d| (Just(d), 0..=d)).prop_flat_map(|(d, a)| (Just(d), Just(a), 0..=d - a))
}

fn spd(n: usize, lambda: f64) -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-1.0f64..1.0, n * n), prop::collection::vec(0.0f64..1.0, n)).prop_map(move |(g, ev)| {
        let q = DMatrix::from_vec(n, n, g).qr().q();
        let lo = lambda * 1.01;
        let hi = 1.0 / lambda * 0.99;
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, ev.iter().map(|t| lo + t * (hi - lo))));
        let m = &q * diag * q.transpose();
        (&m + m.transpose()) * 0.5
    })
}

fn env_spec(d: usize, r: usize) -> EnsembleSpec {
    EnsembleSpec::new("iid-spd".parse().unwrap(), d, r, 0.25).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wedge_graded_commutative((alpha, beta) in dims_and_degrees().prop_flat_map(|(d, a, b)| (rational_form(d, a), rational_form(d, b)))) {
        let (a, b) = (alpha.degree(), beta.degree());
        let ab = alpha.wedge(&beta).unwrap();
        let ba = beta.wedge(&alpha).unwrap();
        let sign = if (a * b) % 2 == 1 { Rational::from_integer(-1) } else { Rational::from_integer(1) };
        prop_assert_eq!(ab, &ba * sign);
    }

    #[test]
    fn double_star_sign(d in 1usize..=4, r_frac in 0.0f64..1.0, seed in 0u64..1000) {
        let r = ((d + 1) as f64 * r_frac) as usize;
        let c: Vec<Rational> = (0..binomial(d, r)).map(|i| Rational::new((seed as i64 * 7 + i as i64 * 13) % 23 - 11, 1 + i as i64 % 5)).collect();
        let p = AltForm::from_coeffs(d, r, c).unwrap();
        let sign = if (r * (d - r)) % 2 == 1 { Rational::from_integer(-1) } else { Rational::from_integer(1) };
        prop_assert_eq!(p.hodge_star().hodge_star(), &p * sign);
    }

    #[test]
    fn star_wedge_with_own_star_is_norm(d in 1usize..=4, r_frac in 0.0f64..1.0, c in prop::collection::vec(-3.0f64..3.0, 16)) {
        let r = ((d + 1) as f64 * r_frac) as usize;
        let p: Form = AltForm::from_coeffs(d, r, c[..binomial(d, r)].to_vec()).unwrap();
        let v = star_wedge_scalar(&p, &p.hodge_star()).unwrap();
        prop_assert!((v - p.norm_sq()).abs() <= 1e-14 * (1.0 + p.norm_sq()));
    }

    #[test]
    fn invert_round_trip(d in 1usize..=4, r_frac in 0.0f64..1.0, m in spd(6, 0.25)) {
        let r = ((d + 1) as f64 * r_frac) as usize;
        let n = binomial(d, r);
        let m = m.view((0, 0), (n, n)).into_owned();
        let m = (&m + m.transpose()) * 0.5;
        let inv = invert_energy(d, r, &m).unwrap();
        let back = invert_energy(d, d - r, &inv).unwrap();
        prop_assert!((&back - &m).amax() <= 1e-12 * m.amax());
    }

    #[test]
    fn energy_matrix_window(m in spd(3, 0.25), shift in 0.0f64..1.0) {
        prop_assert!(EnergyMatrix::new(3, 1, m.clone(), 0.25).is_ok());
        let mut asym = m.clone();
        asym[(0, 1)] += 1e-9;
        prop_assert!(EnergyMatrix::new(3, 1, asym, 0.25).is_err());
        let low = &m - DMatrix::identity(3, 3) * (m.symmetric_eigenvalues().min() - 0.25 + 1e-9 + shift);
        prop_assert!(EnergyMatrix::new(3, 1, low, 0.25).is_err());
    }

    #[test]
    fn coboundary_squares_to_zero(d in 2usize..=4, deg_frac in 0.0f64..1.0, side in 1usize..3, vals in prop::collection::vec(-50i64..50, 400)) {
        let grid = Grid::new(d, side, 1.0).unwrap();
        let k = ((d - 1) as f64 * deg_frac) as usize;
        let n = grid.face_count(k);
        let u: IntCochain = Cochain::from_values(&grid, k, vals.iter().cycle().take(n).copied().collect()).unwrap();
        let ddu = u.coboundary().unwrap().coboundary().unwrap();
        prop_assert!(ddu.values().iter().all(|&v| v == 0));
    }

    #[test]
    fn interpolation_commutes_with_d(d in 1usize..=3, r_frac in 0.0f64..1.0, c in prop::collection::vec((-9i64..9, 1i64..4), 8), off in -5i64..5) {
        let r = 1 + ((d as f64) * r_frac) as usize % d;
        let n = binomial(d, r);
        let p: RationalForm = AltForm::from_coeffs(d, r, c[..n].iter().map(|&(a, b)| Rational::new(a, b)).collect()).unwrap();
        // affine potential plus a constant (r−1)-form
        let shift = AltForm::from_coeffs(d, r - 1, vec![Rational::from_integer(off); binomial(d, r - 1)]).unwrap();
        let omega = affine_potential(&p).unwrap().add(&PolyForm::constant(&shift)).unwrap();
        let grid = Grid::new(d, 3, 1.0).unwrap();
        let h = Rational::new(1, 3);
        let lhs = interpolate_with_spacing(&omega, &grid, h).unwrap().coboundary().unwrap();
        let rhs = interpolate_with_spacing(&omega.exterior_derivative().unwrap(), &grid, h).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn energy_between_star_bounds(seed in 0u64..500, r in 1usize..=2) {
        let d = 2;
        let env = sample_indexed(&env_spec(d, r), 1, seed, 0).unwrap();
        let grid = *env.grid();
        let q = assemble_energy(&env.coefficients(), &grid, r).unwrap();
        let n = binomial(d, r);
        let id = DMatrix::identity(n, n);
        let g = assemble_energy(&Coefficients::Constant(&id), &grid, r).unwrap();
        let u: Vec<f64> = (0..q.nrows()).map(|i| ((i as u64 * 2654435761 + seed) % 97) as f64 / 48.5 - 1.0).collect();
        let (qu, gu) = (q.bilinear(&u, &u), g.bilinear(&u, &u));
        prop_assert!(0.25 * gu <= qu * (1.0 + 1e-12) && qu <= 4.0 * gu * (1.0 + 1e-12));
    }

    #[test]
    fn energy_ignores_closed_additions(seed in 0u64..500) {
        let env = sample_indexed(&env_spec(3, 2), 1, seed, 0).unwrap();
        let grid = *env.grid();
        let q = assemble_energy(&env.coefficients(), &grid, 2).unwrap();
        let u: Vec<f64> = (0..q.nrows()).map(|i| ((i as u64 * 40503 + seed) % 31) as f64 - 15.0).collect();
        let s: Vec<f64> = (0..grid.face_count(0)).map(|i| ((i as u64 * 7 + seed) % 11) as f64 - 5.0).collect();
        let ds = coboundary_matrix(&grid, 0).unwrap().mul_vec(&s);
        let w: Vec<f64> = u.iter().zip(&ds).map(|(a, b)| a + b).collect();
        let (a, b) = (q.bilinear(&u, &u), q.bilinear(&w, &w));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn multiscale_seminorm_is_a_seminorm(a in prop::collection::vec(-1.0f64..1.0, 162), b in prop::collection::vec(-1.0f64..1.0, 162), t in -5.0f64..5.0) {
        let grid = Grid::new(2, 9, 1.0).unwrap();
        let f = CellField::from_values(&grid, 1, a).unwrap();
        let g = CellField::from_values(&grid, 1, b).unwrap();
        let nf = f.multiscale_seminorm().unwrap();
        let ng = g.multiscale_seminorm().unwrap();
        let nt = f.scale(t).multiscale_seminorm().unwrap();
        prop_assert!((nt - t.abs() * nf).abs() <= 1e-12 * (1.0 + nt));
        prop_assert!(f.add(&g).unwrap().multiscale_seminorm().unwrap() <= nf + ng + 1e-12);
    }

    #[test]
    fn sampling_is_a_pure_function(seed in any::<u64>(), m in 0u32..3) {
        let spec = env_spec(2, 1);
        prop_assert_eq!(sample_indexed(&spec, m, seed, 3).unwrap(), sample_indexed(&spec, m, seed, 3).unwrap());
    }

    #[test]
    fn os_calibration_homogeneous(xs in prop::collection::vec(-1.0f64..5.0, 10..60), s in 0.5f64..3.0) {
        let base = os_calibrate(&xs, s).unwrap().c;
        let two: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        prop_assert_eq!(os_calibrate(&two, s).unwrap().c, 2.0 * base);
        let ten: Vec<f64> = xs.iter().map(|x| 10.0 * x).collect();
        let c10 = os_calibrate(&ten, s).unwrap().c;
        prop_assert!((c10 - 10.0 * base).abs() <= 4.0 * f64::EPSILON * 10.0 * base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn nu_is_quadratic(seed in 0u64..1000, c in prop::collection::vec(-2.0f64..2.0, 2)) {
        let env = sample_indexed(&env_spec(2, 1), 2, seed, 0).unwrap();
        let solver = Solver::new(&env, SolverOptions::default()).unwrap();
        let p = AltForm::from_coeffs(2, 1, c).unwrap();
        let base = solver.solve_nu(&p).unwrap().value;
        for t in [2.0, -1.0, 0.5] {
            let v = solver.solve_nu(&p.scale(t)).unwrap().value;
            prop_assert!((v - t * t * base).abs() <= 1e-9 * (1.0 + base));
        }
        // bounds with the ellipticity window of the ensemble
        prop_assert!(base >= 0.5 * 0.25 * p.norm_sq() * (1.0 - 1e-9) && base <= 0.5 * 4.0 * p.norm_sq() * (1.0 + 1e-9));
    }

    #[test]
    fn j_decomposes_and_is_convex(seed in 0u64..1000, c in prop::collection::vec(-2.0f64..2.0, 6)) {
        let env = sample_indexed(&env_spec(2, 1), 1, seed, 0).unwrap();
        let solver = Solver::new(&env, SolverOptions::default()).unwrap();
        let p1 = AltForm::from_coeffs(2, 1, c[0..2].to_vec()).unwrap();
        let p2 = AltForm::from_coeffs(2, 1, c[2..4].to_vec()).unwrap();
        let q = AltForm::from_coeffs(2, 1, c[4..6].to_vec()).unwrap();
        let j1 = solver.solve_j(&p1, &q).unwrap();
        let j2 = solver.solve_j(&p2, &q).unwrap();
        let mid = (&p1 + &p2).scale(0.5);
        let jm = solver.solve_j(&mid, &q).unwrap();
        for jb in [&j1, &j2, &jm] {
            prop_assert!(jb.decomposition_gap() <= 1e-8);
        }
        let gap = 0.5 * j1.j + 0.5 * j2.j - jm.j;
        let dist = (&p1 - &p2).norm_sq();
        prop_assert!(gap >= -1e-9);
        prop_assert!(gap <= 4.0 / 8.0 * dist + 1e-9);
    }

    #[test]
    fn constant_environment_vanishes(seed in 0u64..1000) {
        let spec = env_spec(3, 2);
        let cell = sample_indexed(&spec, 0, seed, 0).unwrap();
        let grid = Grid::triadic(3, 1).unwrap();
        let a = EnergyMatrix::new(3, 2, cell.cell(0), 0.25).unwrap();
        let env = Environment::constant(&grid, &a);
        let solver = Solver::new(&env, SolverOptions::default()).unwrap();
        for (i, dir) in basis(3, 2).into_iter().enumerate() {
            let p = AltForm::basis(dir);
            let q = a.apply(&p);
            let j = solver.solve_j(&p, &q).unwrap().j;
            prop_assert!(j.abs() <= 1e-8, "{} {}", i, j);
        }
    }
}

#[test]
fn hodge_matrix_is_signed_permutation() {
    for d in 1..=4 {
        for r in 0..=d {
            let s = hodge_matrix(d, r);
            let t = hodge_matrix(d, d - r);
            let sign = if (r * (d - r)) % 2 == 1 { -1.0 } else { 1.0 };
            assert_eq!(&t * &s, DMatrix::identity(s.ncols(), s.ncols()) * sign);
        }
    }
}

fn closed_cochain(grid: &Grid, degree: usize, seed: u64, interior_only: bool) -> Vec<f64> {
    // d of a (degree−1)-cochain; interior_only keeps the potential off the boundary
    let mask = formhom::complex::boundary_mask(grid, degree - 1);
    let s: Vec<f64> = (0..grid.face_count(degree - 1))
        .map(|i| if interior_only && mask.is_boundary(i) { 0.0 } else { ((i as u64 * 7919 + seed) % 13) as f64 - 6.0 })
        .collect();
    coboundary_matrix(grid, degree - 1).unwrap().mul_vec(&s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn closed_cochains_have_no_energy(seed in 0u64..1000, r in 2usize..=3) {
        let env = sample_indexed(&env_spec(3, r), 1, seed, 0).unwrap();
        let grid = *env.grid();
        let q = assemble_energy(&env.coefficients(), &grid, r).unwrap();
        let c = closed_cochain(&grid, r - 1, seed, false);
        prop_assert!(q.bilinear(&c, &c).abs() <= 1e-14 * c.iter().map(|x| x * x).sum::<f64>().max(1.0));
    }

    #[test]
    fn reported_values_ignore_kernel(seed in 0u64..1000, r in 1usize..=2, c in prop::collection::vec(-2.0f64..2.0, 6)) {
        let d = 3;
        let env = sample_indexed(&env_spec(d, r), 1, seed, 0).unwrap();
        let solver = Solver::new(&env, SolverOptions::default()).unwrap();
        let n = binomial(d, r);
        let p = AltForm::from_coeffs(d, r, c[..n].to_vec()).unwrap();
        let q = AltForm::from_coeffs(d, d - r, c[6 - n..].to_vec()).unwrap();
        let jb = solver.solve_j(&p, &q).unwrap();
        let w = jb.maximizer();
        let grid = *w.grid();
        let extra = if r == 1 {
            vec![(seed % 5) as f64 - 2.0; w.len()]
        } else {
            closed_cochain(&grid, r - 1, seed, true)
        };
        let shifted = Cochain::from_values(&grid, r - 1, w.values().iter().zip(&extra).map(|(a, b)| a + b).collect()).unwrap();
        let f0 = solver.functional(&p, &q, &w).unwrap();
        let f1 = solver.functional(&p, &q, &shifted).unwrap();
        prop_assert!((f0 - f1).abs() <= 1e-12 * (1.0 + f0.abs()));
        let g0 = solver.gradient_norm_sq(&w).unwrap();
        let g1 = solver.gradient_norm_sq(&shifted).unwrap();
        prop_assert!((g0 - g1).abs() <= 1e-12 * (1.0 + g0));
        prop_assert!((&solver.mean_gradient(&w) - &solver.mean_gradient(&shifted)).norm() <= 1e-12 * (1.0 + g0.sqrt()));
    }
}

#[test]
fn stationary_in_law() {
    // per-cell marginals at two distant cells, pooled over seeds
    let spec = env_spec(2, 1);
    let seeds = 1500u64;
    let grid = Grid::triadic(2, 2).unwrap();
    let cells = [0usize, grid.cell_count() - 1];
    let mut stats = Vec::new();
    for &c in &cells {
        let vals: Vec<[f64; 3]> = (0..seeds)
            .map(|s| {
                let m = sample_indexed(&spec, 2, s, 0).unwrap().cell(c);
                [m[(0, 0)], m[(0, 1)], m[(1, 1)]]
            })
            .collect();
        stats.push(vals);
    }
    let n = seeds as f64;
    for k in 0..3 {
        let a: Vec<f64> = stats[0].iter().map(|v| v[k]).collect();
        let b: Vec<f64> = stats[1].iter().map(|v| v[k]).collect();
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let (va, vb) = (
            a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (n - 1.0),
            b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (n - 1.0),
        );
        let se = ((va + vb) / n).sqrt();
        assert!((ma - mb).abs() <= 3.0 * se, "mean {k}: {ma} vs {mb}");
        // fourth moments bound the standard error of the variance
        let m4a = a.iter().map(|x| (x - ma).powi(4)).sum::<f64>() / n;
        let m4b = b.iter().map(|x| (x - mb).powi(4)).sum::<f64>() / n;
        let se_var = ((m4a - va * va) / n + (m4b - vb * vb) / n).sqrt();
        assert!((va - vb).abs() <= 3.0 * se_var, "variance {k}: {va} vs {vb}");
    }
}

#[test]
fn unit_range_independence() {
    // a cell's coefficient does not move when its neighbours are resampled
    let spec = env_spec(2, 1);
    let big = sample_indexed(&spec, 2, 11, 0).unwrap();
    let small = big.restrict(&[3, 3], 3).unwrap();
    let again = sample_indexed(&spec, 2, 11, 0).unwrap().restrict(&[3, 3], 3).unwrap();
    assert_eq!(small, again);
    // neighbouring cells are uncorrelated across seeds
    let n = 2000u64;
    let pairs: Vec<(f64, f64)> = (0..n)
        .map(|s| {
            let e = sample_indexed(&spec, 1, s, 0).unwrap();
            (e.cell(0)[(0, 0)], e.cell(1)[(0, 0)])
        })
        .collect();
    let nf = n as f64;
    let (mx, my) = (pairs.iter().map(|p| p.0).sum::<f64>() / nf, pairs.iter().map(|p| p.1).sum::<f64>() / nf);
    let cov = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / nf;
    let sx = (pairs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / nf).sqrt();
    let sy = (pairs.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / nf).sqrt();
    assert!((cov / (sx * sy)).abs() < 3.0 / nf.sqrt(), "{}", cov / (sx * sy));
}

#[test]
fn thread_count_does_not_change_results() {
    use formhom::homogenize::{compute_sequences, estimate_ahom, McOptions};
    let spec = EnsembleSpec::new("checkerboard2:1,4".parse().unwrap(), 2, 1, 0.25).unwrap();
    let mut one = McOptions::new(24, 5);
    one.threads = 1;
    let mut many = one.clone();
    many.threads = 8;
    let a = estimate_ahom(&spec, 2, &one).unwrap();
    let b = estimate_ahom(&spec, 2, &many).unwrap();
    assert_eq!(a.json().to_string(), b.json().to_string());
    let sa = compute_sequences(&spec, 2, &one).unwrap();
    let sb = compute_sequences(&spec, 2, &many).unwrap();
    assert_eq!(format!("{:?}", sa.d), format!("{:?}", sb.d));
    assert_eq!(format!("{:?}", sa.tau), format!("{:?}", sb.tau));
}
